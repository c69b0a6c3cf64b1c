"""5G MAC model: TDD slots, per-UE uplink buffers, BSR/SR signalling and PRB allocation.

Three uplink allocators share one grant routine:

* ``allocate_uplink_slot_smec``: SR grants first, then latency-critical request
  groups by ascending remaining budget, then proportional fair for the rest.
* ``allocate_uplink_slot_notify_delayed``: same ordering, but groups only exist
  once the edge has notified the RAN of a request start.
* ``allocate_uplink_slot_pf``: plain proportional fair.
"""
from __future__ import annotations

import math
from collections import deque
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Optional, Sequence

BSR_CAP = 307_200
SR_GRANT_CAP = 4
PF_ALPHA = 0.01
D_CORE = 1_000

LCG_BE = 0
LCG_LC = 1

PENDING, DRAINING, COMPLETE = "pending", "draining", "complete"


@dataclass
class SlotConfig:
    slot_duration: int = 500
    tdd_pattern: str = "DDDDDDDSUU"
    prbs_per_slot: int = 217

    def __post_init__(self):
        pattern = self.tdd_pattern.upper()
        if set(pattern) - set("DUS"):
            raise ValueError(f"tdd_pattern may only contain D, U, S: {self.tdd_pattern!r}")
        if "U" not in pattern or "D" not in pattern:
            raise ValueError("tdd_pattern needs at least one UL and one DL slot per cycle")
        if self.prbs_per_slot < 1:
            raise ValueError("prbs_per_slot must be >= 1")
        if self.slot_duration < 1:
            raise ValueError("slot_duration must be >= 1 us")
        self.tdd_pattern = pattern

    @property
    def cycle_slots(self) -> int:
        return len(self.tdd_pattern)

    @property
    def cycle_duration(self) -> int:
        return self.cycle_slots * self.slot_duration

    def kind(self, slot_index: int) -> str:
        return self.tdd_pattern[slot_index % self.cycle_slots]

    def is_uplink(self, slot_index: int) -> bool:
        return self.kind(slot_index) == "U"

    def next_uplink_slot(self, slot_index: int) -> int:
        """First UL slot index >= ``slot_index``."""
        idx = slot_index
        while not self.is_uplink(idx):
            idx += 1
        return idx


@dataclass
class Segment:
    request: object
    remaining: int


@dataclass
class UeUplinkState:
    ue_id: int
    efficiency: int = 400
    buffers: dict = field(default_factory=dict)
    buffered: dict = field(default_factory=dict)
    last_report: dict = field(default_factory=dict)
    mac_backlog: dict = field(default_factory=dict)
    sr_pending: bool = False
    ewma_throughput: float = 1.0
    # 0: competes as best effort; 1: holds at least one live LC request group
    priority: int = 0
    last_grant_time: int = 0

    def total_buffered(self) -> int:
        return sum(self.buffered.values())

    def known_backlog(self, lcgs: Optional[Iterable[int]] = None) -> int:
        if lcgs is None:
            return sum(self.mac_backlog.values())
        return sum(self.mac_backlog.get(l, 0) for l in lcgs)

    def enqueue(self, lcg: int, request: object, nbytes: int) -> bool:
        """Append bytes to an LCG FIFO; returns True when the LCG was empty."""
        if nbytes <= 0:
            raise ValueError("segment size must be positive")
        q = self.buffers.setdefault(lcg, deque())
        was_empty = self.buffered.get(lcg, 0) == 0
        q.append(Segment(request, nbytes))
        self.buffered[lcg] = self.buffered.get(lcg, 0) + nbytes
        return was_empty


@dataclass
class RequestGroup:
    ue_id: int
    lcg: int
    t_start: int
    estimated_bytes: int
    slo: int
    bytes_remaining: int = 0
    state: str = PENDING
    served_bytes: int = 0


@dataclass
class GrantVector:
    slot_index: int
    prbs: dict = field(default_factory=dict)
    sr_grants: dict = field(default_factory=dict)
    # (ue_id, prbs, reason) in decision order; reason in {"SR", "LC", "BE"}
    entries: list = field(default_factory=list)

    def add(self, ue_id: int, prbs: int, reason: str) -> None:
        if prbs <= 0:
            return
        self.prbs[ue_id] = self.prbs.get(ue_id, 0) + prbs
        if reason == "SR":
            self.sr_grants[ue_id] = self.sr_grants.get(ue_id, 0) + prbs
        self.entries.append((ue_id, prbs, reason))

    def total(self) -> int:
        return sum(self.prbs.values())

    def by_reason(self) -> dict:
        out: dict = {}
        for ue_id, prbs, reason in self.entries:
            out[(ue_id, reason)] = out.get((ue_id, reason), 0) + prbs
        return out


# -- signalling ---------------------------------------------------------------

def report_bsr(ue: UeUplinkState, lcg: int, now: int) -> int:
    """Buffered bytes for one LCG, capped at ``BSR_CAP``; the MAC's backlog view is reset to it."""
    reported = min(ue.buffered.get(lcg, 0), BSR_CAP)
    ue.last_report[lcg] = reported
    ue.mac_backlog[lcg] = reported
    return reported


def detect_request(prev_report: int, new_report: int, now: int, ue_id: int = 0,
                   lcg: int = LCG_LC, slo: int = 0) -> Optional[RequestGroup]:
    if new_report > prev_report:
        return RequestGroup(ue_id=ue_id, lcg=lcg, t_start=now,
                            estimated_bytes=new_report - prev_report, slo=slo)
    return None


def ran_budget(group: RequestGroup, now: int) -> int:
    return group.slo - (now - group.t_start)


# -- allocation -----------------------------------------------------------------

def prbs_for(nbytes: int, efficiency: int) -> int:
    if nbytes <= 0:
        return 0
    return -(-nbytes // efficiency)


def pf_metric(ue: UeUplinkState, prbs_per_slot: int, slot_duration: int) -> float:
    achievable = ue.efficiency * prbs_per_slot * 1e6 / slot_duration
    return achievable / max(ue.ewma_throughput, 1e-9)


def _live_groups(groups: Mapping, ue_id: int) -> list:
    out = []
    for (gue, _lcg), glist in groups.items():
        if gue == ue_id:
            out.extend(g for g in glist if g.state != COMPLETE)
    return out


def _lc_lcgs(groups: Mapping, ue_id: int) -> set:
    return {lcg for (gue, lcg), glist in groups.items()
            if gue == ue_id and any(g.state != COMPLETE for g in glist)}


def _uncovered(ue: UeUplinkState, lcgs, grant: GrantVector) -> int:
    covered = grant.prbs.get(ue.ue_id, 0) * ue.efficiency
    return max(0, ue.known_backlog(lcgs) - covered)


def _pf_fill(ues: Sequence[UeUplinkState], grant: GrantVector, remaining: int,
             prbs_per_slot: int, slot_duration: int) -> int:
    ranked = sorted(ues, key=lambda u: (-pf_metric(u, prbs_per_slot, slot_duration), u.ue_id))
    for ue in ranked:
        if remaining <= 0:
            break
        need = prbs_for(_uncovered(ue, None, grant), ue.efficiency)
        take = min(need, remaining)
        if take > 0:
            grant.add(ue.ue_id, take, "BE")
            remaining -= take
    return remaining


def allocate_uplink_slot_smec(ues: Sequence[UeUplinkState], groups: Mapping, slot_index: int,
                              now: int, prbs_per_slot: int = 217, slot_duration: int = 500,
                              sr_grant_cap: int = SR_GRANT_CAP) -> GrantVector:
    """Grant one UL slot.

    ``groups`` maps ``(ue_id, lcg)`` to that LCG's request groups (oldest first).
    Backlog is the MAC's view (``mac_backlog``), never the true buffer.
    """
    grant = GrantVector(slot_index)
    remaining = prbs_per_slot
    for ue in sorted(ues, key=lambda u: u.ue_id):
        if ue.sr_pending and remaining > 0:
            take = min(sr_grant_cap, remaining)
            grant.add(ue.ue_id, take, "SR")
            remaining -= take

    lc = []
    for ue in ues:
        lcgs = _lc_lcgs(groups, ue.ue_id)
        if not lcgs:
            continue
        budget = min(ran_budget(g, now) for g in _live_groups(groups, ue.ue_id))
        lc.append((budget, ue.ue_id, ue, lcgs))
    lc.sort(key=lambda item: (item[0], item[1]))
    for _budget, _uid, ue, lcgs in lc:
        if remaining <= 0:
            break
        take = min(prbs_for(_uncovered(ue, lcgs, grant), ue.efficiency), remaining)
        if take > 0:
            grant.add(ue.ue_id, take, "LC")
            remaining -= take

    _pf_fill(ues, grant, remaining, prbs_per_slot, slot_duration)
    return grant


def allocate_uplink_slot_notify_delayed(ues: Sequence[UeUplinkState], notices: Mapping,
                                        slot_index: int, now: int, prbs_per_slot: int = 217,
                                        slot_duration: int = 500,
                                        sr_grant_cap: int = SR_GRANT_CAP) -> GrantVector:
    """Same ordering as SMEC; ``notices`` holds groups whose start is the notification arrival."""
    return allocate_uplink_slot_smec(ues, notices, slot_index, now, prbs_per_slot,
                                     slot_duration, sr_grant_cap)


def allocate_uplink_slot_pf(ues: Sequence[UeUplinkState], slot_index: int,
                            prbs_per_slot: int = 217, slot_duration: int = 500) -> GrantVector:
    grant = GrantVector(slot_index)
    _pf_fill(ues, grant, prbs_per_slot, prbs_per_slot, slot_duration)
    return grant


def update_pf_average(ues: Iterable[UeUplinkState], delivered: Mapping, slot_duration: int,
                      alpha: float = PF_ALPHA) -> None:
    for ue in ues:
        rate = delivered.get(ue.ue_id, 0) * 1e6 / slot_duration
        ue.ewma_throughput = (1 - alpha) * ue.ewma_throughput + alpha * rate


# -- data plane -------------------------------------------------------------------

def drain(ue: UeUplinkState, capacity: int, lcg_order: Sequence[int]) -> tuple[int, list]:
    """Remove up to ``capacity`` bytes from the UE's FIFOs, LCGs in ``lcg_order``.

    Returns ``(bytes_drained, [(request, lcg, nbytes, finished), ...])``.
    """
    moved = []
    total = 0
    for lcg in lcg_order:
        q = ue.buffers.get(lcg)
        while q and capacity > 0:
            seg = q[0]
            n = min(seg.remaining, capacity)
            seg.remaining -= n
            capacity -= n
            total += n
            ue.buffered[lcg] -= n
            ue.mac_backlog[lcg] = max(0, ue.mac_backlog.get(lcg, 0) - n)
            finished = seg.remaining == 0
            if finished:
                q.popleft()
            moved.append((seg.request, lcg, n, finished))
        if capacity <= 0:
            break
    return total, moved


def transmit(ues: Mapping[int, UeUplinkState], grants: GrantVector, now: int,
             lcg_order: Sequence[int] = (LCG_LC, LCG_BE)) -> tuple[dict, list]:
    """Drain ``min(prbs * efficiency, buffered)`` per granted UE.

    Returns per-UE delivered byte counts and the moved segments
    ``(ue_id, request, lcg, nbytes, finished)``.
    """
    delivered = {}
    segments = []
    for ue_id in sorted(grants.prbs):
        ue = ues[ue_id]
        prbs = grants.prbs[ue_id]
        ue.last_grant_time = now
        ue.sr_pending = False
        n, moved = drain(ue, prbs * ue.efficiency, lcg_order)
        delivered[ue_id] = n
        segments.extend((ue_id, req, lcg, nb, fin) for req, lcg, nb, fin in moved)
    return delivered, segments


@dataclass
class DownlinkModel:
    """Downlink one-way latency: constant base + serialization + uniform jitter in ``[0, jitter]``."""
    base: int = 2_000
    rate_bytes_per_us: float = 8.0
    jitter: int = 2_000

    def serialization(self, nbytes: int) -> int:
        if self.rate_bytes_per_us <= 0:
            return 0
        return int(math.ceil(nbytes / self.rate_bytes_per_us))

    def latency(self, nbytes: int, rng) -> int:
        j = rng.randint(0, self.jitter) if self.jitter > 0 else 0
        return self.base + self.serialization(nbytes) + j


@dataclass
class ChannelModel:
    """Per-UE bytes/PRB as a bounded random walk, one step per UL slot."""
    low: int = 100
    high: int = 800
    step: int = 40

    def initial(self, rng) -> int:
        return rng.randint(self.low, self.high)

    def advance(self, value: int, rng) -> int:
        if self.step <= 0:
            return value
        v = value + rng.randint(-self.step, self.step)
        if v < self.low:
            v = 2 * self.low - v
        elif v > self.high:
            v = 2 * self.high - v
        return min(max(v, self.low), self.high)
