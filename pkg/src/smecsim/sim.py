"""One simulated run: UEs, RAN MAC, probing daemons and edge manager on a shared event loop."""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Optional

from . import ran_mac as mac
from .config import EDGE_POLICIES, RAN_POLICIES, Scenario
from .edge import DROPPED, AppProfile, ComputePlant, DefaultEdgeManager, EdgeManager, EdgeRequest
from .probe import AckMsg, EstimatorUnready, ProbeMsg, ProbeSession, RequestTiming
from .simcore import Simulator
from .workloads import AppSpec, dynamics_timeline, ft_sizes, iter_frames

logger = logging.getLogger(__name__)

BE_BIN = 100_000


@dataclass
class Request:
    request_id: int
    ue_id: int
    kind: str
    app_id: int
    slo: int
    size: int
    t_generated: int
    base_time: int
    response_size: int
    timing: Optional[RequestTiming] = None
    t_start_detected: Optional[int] = None
    t_first_edge: Optional[int] = None
    t_arrive_edge: Optional[int] = None
    edge: Optional[EdgeRequest] = None
    t_response_done: Optional[int] = None
    resp_downlink: Optional[int] = None
    T_ack_resp: Optional[int] = None


@dataclass
class FtFile:
    ue_id: int
    size: int
    t_enqueued: int


@dataclass
class Ue:
    ue_id: int
    kind: str
    spec: AppSpec
    lcg: int
    state: mac.UeUplinkState
    session: Optional[ProbeSession] = None
    active: bool = True
    index: int = 0
    probe_epoch: int = 0
    backlog_since: int = 0
    unattributed: list = field(default_factory=list)
    files: object = None

    @property
    def app_id(self) -> int:
        return self.ue_id + 1


@dataclass
class RunResult:
    scenario: Scenario
    policy: str
    edge_policy: str
    requests: list
    be_bins: dict
    max_grant_gap: dict
    sr_grants: dict
    grant_rows: list
    trace_digest: str
    events: int
    actions: list
    ues: list


class Simulation:
    def __init__(self, scenario: Scenario, policy: str = "smec", edge_policy: str = "smec_edge",
                 *, early_drop: Optional[bool] = None, grant_trace: bool = False,
                 keep_trace: bool = False):
        if policy not in RAN_POLICIES:
            raise ValueError(f"policy: expected one of {RAN_POLICIES}, got {policy!r}")
        if edge_policy not in EDGE_POLICIES:
            raise ValueError(f"edge_policy: expected one of {EDGE_POLICIES}, got {edge_policy!r}")
        self.sc = scenario
        self.policy = policy
        self.edge_policy = edge_policy
        self.sim = Simulator(scenario.seed, keep_trace=keep_trace)
        rc = scenario.ran
        self.slots = mac.SlotConfig(rc.slot_duration_us, rc.tdd_pattern, rc.prbs_per_slot)
        self.channel = mac.ChannelModel(rc.channel_low, rc.channel_high, rc.channel_step)
        dc = scenario.downlink
        self.downlink = mac.DownlinkModel(dc.base_us, dc.rate_bytes_per_us, dc.jitter_us)
        self.duration = scenario.duration_us
        self.grant_trace = grant_trace
        self.grant_rows: list = []

        self.rng_channel = self.sim.rng("channel")
        self.rng_dl = self.sim.rng("downlink")
        self.rng_probe = self.sim.rng("probe-loss")
        self.rng_clock = self.sim.rng("clock-offset")

        self.ues: list[Ue] = []
        self.by_id: dict[int, Ue] = {}
        self.states: dict[int, mac.UeUplinkState] = {}
        self.groups: dict = {}
        self.requests: list[Request] = []
        self.n_bins = max(1, -(-self.duration // BE_BIN))
        self.be_bins: dict[int, list] = {}
        self.max_grant_gap: dict[int, int] = {}
        self.sr_grants: dict[int, int] = {}
        self._rid = 0
        self._build(early_drop)

    # -- construction -----------------------------------------------------------
    def _build(self, early_drop: Optional[bool]) -> None:
        specs = self.sc.app_specs()
        uid = 0
        for kind in ("SS", "AR", "VC", "FT"):
            for i in range(self.sc.workload.ues.get(kind, 0)):
                spec = specs[kind]
                st = mac.UeUplinkState(uid, efficiency=self.channel.initial(self.rng_channel))
                lcg = mac.LCG_LC if spec.latency_critical else mac.LCG_BE
                ue = Ue(uid, kind, spec, lcg, st, index=i)
                if spec.latency_critical:
                    offset = self.rng_clock.randint(0, self.sc.probe.max_clock_offset_us)
                    ue.session = ProbeSession(uid, clock_offset=offset)
                else:
                    self.be_bins[uid] = [0] * self.n_bins
                    self.max_grant_gap[uid] = 0
                self.ues.append(ue)
                self.by_id[uid] = ue
                self.states[uid] = st
                uid += 1

        ec = self.sc.edge
        apps = [AppProfile(u.app_id, f"{u.kind}-{u.index}", u.spec.slo, u.spec.resource,
                           u.spec.serial_fraction, prior=int(u.spec.processing_mean()),
                           initial_cores=u.spec.initial_cores)
                for u in self.ues if u.spec.latency_critical]
        plant = ComputePlant(ec.total_cores)
        if self.edge_policy == "smec_edge":
            self.edge = EdgeManager(
                apps, plant, early_drop=ec.early_drop if early_drop is None else early_drop,
                unconditional_drop=ec.unconditional_drop, tau=ec.tau, tier_cuts=ec.tier_cuts,
                cooldown=ec.cooldown_us, util_threshold=ec.util_threshold,
                util_window=ec.util_window_us)
        else:
            limit = ec.queue_limit if self.edge_policy == "queue_drop_10" else None
            self.edge = DefaultEdgeManager(apps, plant, queue_limit=limit)

    # -- run ----------------------------------------------------------------------
    def run(self) -> RunResult:
        sim = self.sim
        first_ul = self.slots.next_uplink_slot(0)
        sim.schedule(first_ul * self.slots.slot_duration, "ul_slot", self._on_ul_slot, first_ul)

        period = self.sc.ran.bsr_period_us
        n = max(1, len(self.ues))
        for ue in self.ues:
            phase = (ue.ue_id * period) // n
            sim.schedule(phase, "bsr_timer", self._on_bsr_timer, ue, tag=ue.ue_id)

        timeline = None
        if self.sc.workload.kind == "dynamic":
            timeline = dynamics_timeline(self.duration, sim.rng("dynamics"),
                                         n_ss=self.sc.workload.ues.get("SS", 0),
                                         dwell_mean=int(self.sc.workload.dwell_mean_s * 1e6))
            for kind in ("AR", "VC"):
                for t, count in timeline[kind].points:
                    sim.schedule(t, "dynamics", self._on_dynamics, kind, count, tag=f"{kind}={count}")

        for ue in self.ues:
            if ue.spec.latency_critical:
                res_at = None
                if timeline is not None and ue.kind == "SS" and ue.index < len(timeline["SS"]):
                    res_at = timeline["SS"][ue.index].value_at
                frames = iter_frames(ue.spec, sim.rng(f"frames-{ue.ue_id}"), 0, self.duration, res_at)
                self._next_frame(ue, frames)
                if timeline is None or ue.kind not in ("AR", "VC"):
                    self._set_active(ue, True)
                else:
                    ue.active = False
            else:
                sizes = ft_sizes(self.sc.ft_law, sim.rng(f"ft-{ue.ue_id}"))
                ue.files = sizes
                sim.schedule(0, "ft_start", self._enqueue_file, ue, tag=ue.ue_id)

        sim.run_until(self.duration)
        return RunResult(self.sc, self.policy, self.edge_policy, self.requests, self.be_bins,
                         self.max_grant_gap, self.sr_grants, self.grant_rows, sim.trace_digest(),
                         sim.processed, self.edge.actions, self.ues)

    # -- traffic --------------------------------------------------------------------
    def _next_frame(self, ue: Ue, frames) -> None:
        frame = next(frames, None)
        if frame is not None:
            self.sim.schedule(frame.t, "frame", self._on_frame, ue, frame, frames, tag=ue.ue_id)

    def _on_frame(self, ue: Ue, frame, frames) -> None:
        self._next_frame(ue, frames)
        if not ue.active:
            return
        now = self.sim.now
        spec = ue.spec
        req = Request(self._rid, ue.ue_id, ue.kind, ue.app_id, spec.slo, frame.size, now,
                      frame.base_time, spec.response_bytes(frame.size, frame.resolutions))
        self._rid += 1
        self.requests.append(req)
        try:
            req.timing = ue.session.client.on_request_sent(ue.app_id, req.request_id,
                                                           ue.session.client_time(now))
        except EstimatorUnready:
            req.timing = None
        ue.unattributed.append(req)
        self._enqueue(ue, req, frame.size)

    def _enqueue_file(self, ue: Ue) -> None:
        size = next(ue.files)
        self._enqueue(ue, FtFile(ue.ue_id, size, self.sim.now), size)

    def _enqueue(self, ue: Ue, item, nbytes: int) -> None:
        st = ue.state
        if st.total_buffered() == 0:
            ue.backlog_since = self.sim.now
        if st.enqueue(ue.lcg, item, nbytes):
            # regular BSR: data arrived into an empty LCG buffer
            self._report(ue, ue.lcg)

    # -- BSR -------------------------------------------------------------------------
    def _on_bsr_timer(self, ue: Ue) -> None:
        for lcg in sorted(set(ue.state.buffered) | set(ue.state.last_report)):
            self._report(ue, lcg)
        self.sim.schedule_in(self.sc.ran.bsr_period_us, "bsr_timer", self._on_bsr_timer, ue,
                             tag=ue.ue_id)

    def _report(self, ue: Ue, lcg: int) -> None:
        now = self.sim.now
        st = ue.state
        # baseline for step detection: the previous report net of bytes received since
        prev = st.mac_backlog.get(lcg, 0)
        new = mac.report_bsr(st, lcg, now)
        key = (ue.ue_id, lcg)
        if new == 0:
            self._complete_groups(ue, key)
            return
        if self.policy != "smec" or not ue.spec.latency_critical or lcg != mac.LCG_LC:
            return
        group = mac.detect_request(prev, new, now, ue.ue_id, lcg, ue.spec.slo)
        if group is None:
            return
        self.groups.setdefault(key, []).append(group)
        st.priority = 1
        for req in ue.unattributed:
            req.t_start_detected = now
        ue.unattributed.clear()

    def _complete_groups(self, ue: Ue, key) -> None:
        glist = self.groups.get(key)
        if glist:
            for g in glist:
                g.state = mac.COMPLETE
            glist.clear()
        if not any(self.groups.get((ue.ue_id, l)) for l in ue.state.buffers):
            ue.state.priority = 0

    # -- notify-delayed baseline ------------------------------------------------------
    def _on_notice(self, ue: Ue, req: Request) -> None:
        now = self.sim.now
        req.t_start_detected = now
        if req in ue.unattributed:
            ue.unattributed.remove(req)
        key = (ue.ue_id, ue.lcg)
        if ue.state.mac_backlog.get(ue.lcg, 0) > 0:
            self.groups.setdefault(key, []).append(
                mac.RequestGroup(ue.ue_id, ue.lcg, now, req.size, ue.spec.slo))
            ue.state.priority = 1

    # -- uplink slot --------------------------------------------------------------------
    def _on_ul_slot(self, slot_index: int) -> None:
        now = self.sim.now
        rc = self.sc.ran
        states = [u.state for u in self.ues]
        for st in states:
            st.efficiency = self.channel.advance(st.efficiency, self.rng_channel)
        use_sr = self.policy != "default_pf"
        for ue in self.ues:
            st = ue.state
            if st.total_buffered() > 0:
                ref = max(st.last_grant_time, ue.backlog_since)
                if use_sr and now - ref >= rc.sr_period_us:
                    st.sr_pending = True
                if ue.ue_id in self.max_grant_gap and now - ref > self.max_grant_gap[ue.ue_id]:
                    self.max_grant_gap[ue.ue_id] = now - ref

        if self.policy == "default_pf":
            grant = mac.allocate_uplink_slot_pf(states, slot_index, rc.prbs_per_slot,
                                                rc.slot_duration_us)
        else:
            grant = mac.allocate_uplink_slot_smec(states, self.groups, slot_index, now,
                                                  rc.prbs_per_slot, rc.slot_duration_us,
                                                  rc.sr_grant_prbs)
        for ue_id in grant.sr_grants:
            self.sr_grants[ue_id] = self.sr_grants.get(ue_id, 0) + 1
        delivered, segments = mac.transmit(self.states, grant, now)
        mac.update_pf_average(states, delivered, rc.slot_duration_us, rc.pf_alpha)

        t_edge = now + rc.slot_duration_us + rc.core_delay_us
        per_lcg: dict = {}
        for ue_id, item, lcg, nbytes, finished in segments:
            per_lcg[(ue_id, lcg)] = per_lcg.get((ue_id, lcg), 0) + nbytes
            if isinstance(item, Request):
                if item.t_first_edge is None:
                    item.t_first_edge = t_edge
                    if self.policy == "notify_delayed":
                        self.sim.schedule(t_edge + rc.notify_delay_us, "notice", self._on_notice,
                                          self.by_id[ue_id], item, tag=item.request_id)
                if finished:
                    self.sim.schedule(t_edge, "edge_arrival", self._on_edge_arrival, item,
                                      tag=item.request_id)
            else:
                bins = self.be_bins.get(ue_id)
                if bins is not None:
                    b = now // BE_BIN
                    if b < len(bins):
                        bins[b] += nbytes
                if finished:
                    self._enqueue_file(self.by_id[ue_id])

        for key, glist in self.groups.items():
            if not glist:
                continue
            ue = self.by_id[key[0]]
            if ue.state.mac_backlog.get(key[1], 0) == 0:
                self._complete_groups(ue, key)
                continue
            served = per_lcg.get(key, 0)
            while served > 0 and glist:
                g = glist[0]
                take = min(served, max(0, g.estimated_bytes - g.served_bytes))
                g.served_bytes += take
                served -= take
                g.state = mac.DRAINING
                if g.served_bytes >= g.estimated_bytes and len(glist) > 1:
                    g.state = mac.COMPLETE
                    glist.pop(0)
                else:
                    break

        if self.grant_trace:
            self.grant_rows.extend((slot_index, ue_id, prbs, reason)
                                   for ue_id, prbs, reason in grant.entries)

        nxt = self.slots.next_uplink_slot(slot_index + 1)
        self.sim.schedule(nxt * self.slots.slot_duration, "ul_slot", self._on_ul_slot, nxt,
                          tag=nxt)

    # -- edge ------------------------------------------------------------------------------
    def _on_edge_arrival(self, req: Request) -> None:
        now = self.sim.now
        req.t_arrive_edge = now
        ue = self.by_id[req.ue_id]
        try:
            est = ue.session.server.estimate_network_latency(req.timing, now)
        except EstimatorUnready:
            est = None
        er = EdgeRequest(req.request_id, req.app_id, now, est, req.base_time, payload=req)
        req.edge = er
        self.edge.request_arrived(er, now)
        self._dispatch()

    def _dispatch(self) -> None:
        now = self.sim.now
        for er, svc in self.edge.dispatch(now):
            self.sim.schedule(now + svc, "proc_end", self._on_proc_end, er, tag=er.request_id)

    def _on_proc_end(self, er: EdgeRequest) -> None:
        now = self.sim.now
        self.edge.processing_ended(er, now)
        req: Request = er.payload
        ue = self.by_id[req.ue_id]
        if req.timing is not None:
            try:
                req.T_ack_resp = ue.session.server.response_meta(req.timing, now)
            except EstimatorUnready:
                req.T_ack_resp = None
        self.edge.response_sent(er, now)
        req.resp_downlink = self.downlink.latency(req.response_size, self.rng_dl)
        self.sim.schedule(now + req.resp_downlink, "response", self._on_response, req,
                          tag=req.request_id)
        self._dispatch()

    def _on_response(self, req: Request) -> None:
        now = self.sim.now
        req.t_response_done = now
        if req.T_ack_resp is not None:
            ue = self.by_id[req.ue_id]
            ue.session.client.on_response(req.app_id, req.timing.ref_probe_id, req.T_ack_resp,
                                          ue.session.client_time(now))

    # -- probing ------------------------------------------------------------------------
    def _set_active(self, ue: Ue, active: bool) -> None:
        if ue.active == active and ue.session.client.active == active:
            return
        ue.active = active
        ue.session.client.set_active(active)
        ue.probe_epoch += 1
        if active:
            self.sim.schedule(self.sim.now, "probe_timer", self._on_probe_timer, ue, ue.probe_epoch,
                              tag=ue.ue_id)

    def _on_dynamics(self, kind: str, count: int) -> None:
        for ue in self.ues:
            if ue.kind == kind:
                self._set_active(ue, ue.index < count)

    def _on_probe_timer(self, ue: Ue, epoch: int) -> None:
        if epoch != ue.probe_epoch or not ue.active:
            return
        pc = self.sc.probe
        wire = ue.session.client.make_probe().encode()
        if self.rng_probe.random() >= pc.loss:
            delay = pc.uplink_delay_us + self.sc.ran.core_delay_us
            self.sim.schedule_in(delay, "probe_rx", self._on_probe_rx, ue, wire, tag=ue.ue_id)
        self.sim.schedule_in(pc.period_us, "probe_timer", self._on_probe_timer, ue, epoch,
                             tag=ue.ue_id)

    def _on_probe_rx(self, ue: Ue, wire: bytes) -> None:
        now = self.sim.now
        ack = ue.session.server.on_probe(ProbeMsg.decode(wire), now)
        if ack is None or self.rng_probe.random() < self.sc.probe.loss:
            return
        self.sim.schedule_in(self.downlink.latency(12, self.rng_dl), "ack_rx", self._on_ack_rx, ue,
                             ack.encode(), tag=ue.ue_id)

    def _on_ack_rx(self, ue: Ue, wire: bytes) -> None:
        ue.session.client.on_ack(AckMsg.decode(wire), ue.session.client_time(self.sim.now))


def simulate(scenario: Scenario, policy: str = "smec", edge_policy: str = "smec_edge", **kwargs) -> RunResult:
    return Simulation(scenario, policy, edge_policy, **kwargs).run()
