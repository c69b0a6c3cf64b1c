"""Probe/ACK network latency estimation without clock synchronisation.

The client daemon probes once per period while latency-critical traffic is
active. Each ACK gives both ends a shared reference: the server knows when it
sent ACK ``k``, the client knows when it received it. A request carries the
client-side gap since ACK ``k``; the server subtracts it from its own gap
since sending ACK ``k``. The difference is uplink latency plus ACK downlink
latency. A per-app compensation factor swaps the ACK's downlink for the
response's.

Wire formats (little-endian)::

    probe    [version:u8][probe_id:u32][app_id:u8][comp_factor:i32]   10 bytes
    ack      [probe_id:u32][server_send_time:u64]                     12 bytes
    request  [ref_probe_id:u32][t_ack_req:u32]                         8 bytes
    response [T_ack_resp:u32]                                          4 bytes
"""
from __future__ import annotations

import struct
from collections import OrderedDict
from dataclasses import dataclass, field
from typing import Optional

PROTOCOL_VERSION = 1
PROBE_PERIOD = 1_000_000
COMP_WEIGHT = 0.25
# ACK send/receipt times kept per side, so a request referencing a slightly older ACK still resolves
HISTORY = 16
# app_id carried by probes that have no compensation factor to report yet
NO_APP = 0

_PROBE = struct.Struct("<BIBi")
_ACK = struct.Struct("<IQ")
_REQ_META = struct.Struct("<II")
_RESP_META = struct.Struct("<I")


class MalformedMessage(ValueError):
    pass


class EstimatorUnready(RuntimeError):
    """No probe/ACK exchange shared by both ends yet; callers treat the request as non-urgent."""


@dataclass(frozen=True)
class ProbeMsg:
    probe_id: int
    app_id: int = 0
    comp_factor: int = 0

    def encode(self) -> bytes:
        try:
            return _PROBE.pack(PROTOCOL_VERSION, self.probe_id, self.app_id, self.comp_factor)
        except struct.error as exc:
            raise ValueError(f"probe field out of range: {exc}") from None

    @classmethod
    def decode(cls, buf: bytes) -> "ProbeMsg":
        if len(buf) != _PROBE.size:
            raise MalformedMessage(f"probe must be {_PROBE.size} bytes, got {len(buf)}")
        version, probe_id, app_id, comp = _PROBE.unpack(buf)
        if version != PROTOCOL_VERSION:
            raise MalformedMessage(f"unknown probe version {version}")
        return cls(probe_id, app_id, comp)


@dataclass(frozen=True)
class AckMsg:
    probe_id: int
    server_send_time: int

    def encode(self) -> bytes:
        try:
            return _ACK.pack(self.probe_id, self.server_send_time)
        except struct.error as exc:
            raise ValueError(f"ack field out of range: {exc}") from None

    @classmethod
    def decode(cls, buf: bytes) -> "AckMsg":
        if len(buf) != _ACK.size:
            raise MalformedMessage(f"ack must be {_ACK.size} bytes, got {len(buf)}")
        return cls(*_ACK.unpack(buf))


@dataclass(frozen=True)
class RequestTiming:
    app_id: int
    request_id: int
    t_ack_req: int
    ref_probe_id: int

    def encode(self) -> bytes:
        return _REQ_META.pack(self.ref_probe_id, self.t_ack_req)

    @classmethod
    def decode(cls, buf: bytes, app_id: int = 0, request_id: int = 0) -> "RequestTiming":
        if len(buf) != _REQ_META.size:
            raise MalformedMessage(f"request metadata must be {_REQ_META.size} bytes, got {len(buf)}")
        ref, gap = _REQ_META.unpack(buf)
        return cls(app_id, request_id, gap, ref)


def encode_response_meta(t_ack_resp: int) -> bytes:
    return _RESP_META.pack(t_ack_resp)


def decode_response_meta(buf: bytes) -> int:
    if len(buf) != _RESP_META.size:
        raise MalformedMessage(f"response metadata must be {_RESP_META.size} bytes, got {len(buf)}")
    return _RESP_META.unpack(buf)[0]


def smooth(current: int, sample: int, weight: float = COMP_WEIGHT) -> int:
    """EWMA step in integer microseconds that lands exactly on a constant sample."""
    delta = sample - current
    step = int(round(weight * delta))
    if step == 0 and delta != 0:
        step = 1 if delta > 0 else -1
    return current + step


def _remember(history: OrderedDict, key: int, value: int) -> None:
    history[key] = value
    while len(history) > HISTORY:
        history.popitem(last=False)


class ProbeClient:
    """UE-side daemon. All times are on the client's own clock."""

    def __init__(self, ue_id: int):
        self.ue_id = ue_id
        self.next_probe_id = 1
        self.ack_received: OrderedDict[int, int] = OrderedDict()
        self.last_acked: Optional[int] = None
        self.comp: dict[int, int] = {}
        self.active = False
        self._rr = 0

    @property
    def ready(self) -> bool:
        return self.active and self.last_acked is not None

    def set_active(self, active: bool) -> None:
        """Probing runs only while LC traffic is active; reactivation waits for a fresh ACK."""
        if active and not self.active:
            self.last_acked = None
        self.active = active

    def make_probe(self) -> ProbeMsg:
        if not self.active:
            raise RuntimeError("probe requested while inactive")
        pid = self.next_probe_id
        self.next_probe_id += 1
        app_id, comp = NO_APP, 0
        if self.comp:
            apps = sorted(self.comp)
            app_id = apps[self._rr % len(apps)]
            comp = self.comp[app_id]
            self._rr += 1
        return ProbeMsg(pid, app_id, comp)

    def on_ack(self, ack: AckMsg, now_client: int) -> None:
        if self.last_acked is not None and ack.probe_id <= self.last_acked:
            return
        _remember(self.ack_received, ack.probe_id, now_client)
        self.last_acked = ack.probe_id

    def on_request_sent(self, app_id: int, request_id: int, now_client: int) -> RequestTiming:
        if not self.ready:
            raise EstimatorUnready(f"ue {self.ue_id}: no completed probe exchange")
        ref = self.last_acked
        return RequestTiming(app_id, request_id, now_client - self.ack_received[ref], ref)

    def on_response(self, app_id: int, ref_probe_id: int, T_ack_resp: int, now_client: int) -> Optional[int]:
        """Fold ``t_ack_resp - T_ack_resp`` into the app's compensation factor."""
        recv = self.ack_received.get(ref_probe_id)
        if recv is None:
            return None
        t_ack_resp = now_client - recv
        return self.update_comp_factor(app_id, T_ack_resp, t_ack_resp)

    def update_comp_factor(self, app_id: int, T_ack_resp: int, t_ack_resp: int) -> int:
        sample = t_ack_resp - T_ack_resp
        cur = self.comp.get(app_id)
        self.comp[app_id] = sample if cur is None else smooth(cur, sample)
        return self.comp[app_id]


class ProbeServer:
    """Edge-side half of one UE's session. Times are on the server clock."""

    def __init__(self, ue_id: int):
        self.ue_id = ue_id
        self.ack_sent: OrderedDict[int, int] = OrderedDict()
        self.last_acked: Optional[int] = None
        self.comp: dict[int, int] = {}

    def on_probe(self, probe: ProbeMsg, now_server: int) -> Optional[AckMsg]:
        if probe.app_id != NO_APP:
            self.comp[probe.app_id] = probe.comp_factor
        if self.last_acked is not None and probe.probe_id <= self.last_acked:
            return None
        _remember(self.ack_sent, probe.probe_id, now_server)
        self.last_acked = probe.probe_id
        return AckMsg(probe.probe_id, now_server)

    def comp_factor(self, app_id: int) -> int:
        return self.comp.get(app_id, 0)

    def gap_since(self, ref_probe_id: int, now_server: int) -> int:
        sent = self.ack_sent.get(ref_probe_id)
        if sent is None:
            raise EstimatorUnready(f"ue {self.ue_id}: ack {ref_probe_id} unknown to server")
        return now_server - sent

    def estimate_network_latency(self, timing: Optional[RequestTiming], now_server: int,
                                 comp_source: Optional["ProbeServer"] = None) -> int:
        """Uplink latency of the request plus predicted response downlink latency.

        ``comp_source`` supplies the compensation factor when responses go to a
        different UE than the one that sent the request.
        """
        if timing is None:
            raise EstimatorUnready(f"ue {self.ue_id}: request carried no timing metadata")
        T_ack_req = self.gap_since(timing.ref_probe_id, now_server)
        comp = (comp_source or self).comp_factor(timing.app_id)
        return T_ack_req - timing.t_ack_req + comp

    def response_meta(self, timing: RequestTiming, now_server: int) -> int:
        """``T_ack_resp`` for a response to a request that referenced ``timing.ref_probe_id``."""
        return self.gap_since(timing.ref_probe_id, now_server)


@dataclass
class ProbeSession:
    """Both halves of one UE's probing state, as driven by the simulator."""
    ue_id: int
    client: ProbeClient = field(init=False)
    server: ProbeServer = field(init=False)
    # client clock = true time + clock_offset
    clock_offset: int = 0

    def __post_init__(self):
        self.client = ProbeClient(self.ue_id)
        self.server = ProbeServer(self.ue_id)

    def client_time(self, true_time: int) -> int:
        return true_time + self.clock_offset
