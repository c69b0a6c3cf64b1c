"""Edge-side SLO-aware compute management.

Applications report lifecycle events (arrival, processing start/end, response
sent). From those the manager keeps a median-of-last-R processing predictor
per app and computes each request's remaining budget::

    budget = SLO - (t_network + t_wait + predicted_processing)

CPU apps own disjoint core partitions that grow by one core when a request
turns urgent (budget < tau * SLO, once per cool-down) and shrink when windowed
utilisation drops below a threshold. GPU requests go to one non-preemptive
device with priority tiers chosen from urgency. Requests whose budget is
already gone are dropped while the resource is contended.
"""
from __future__ import annotations

import logging
from collections import deque
from dataclasses import dataclass, field
from typing import Optional

from .simcore import ContractViolation

logger = logging.getLogger(__name__)

R_WINDOW = 10
TAU = 0.1
COOLDOWN = 100_000
UTIL_THRESHOLD = 0.6
UTIL_WINDOW = 500_000
TIER_CUTS = (0.1, 0.3)
TIER_NAMES = ("high", "mid", "low")

QUEUED, PROCESSING, DONE, DROPPED = "queued", "processing", "done", "dropped"


def median(values) -> float:
    vals = sorted(values)
    n = len(vals)
    if n == 0:
        raise ValueError("median of empty window")
    mid = n // 2
    if n % 2:
        return vals[mid]
    return (vals[mid - 1] + vals[mid]) / 2


def cpu_service_time(base_time: float, cores: int, serial_fraction: float) -> float:
    """Amdahl scaling: ``base * ((1 - p) + p / cores)``."""
    if cores < 1:
        raise ValueError("cores must be >= 1")
    return base_time * ((1.0 - serial_fraction) + serial_fraction / cores)


def tier_for(urgency: float, cuts=TIER_CUTS) -> int:
    """0 is the highest tier."""
    for i, cut in enumerate(cuts):
        if urgency < cut:
            return i
    return len(cuts)


@dataclass
class AppProfile:
    app_id: int
    name: str
    slo: int
    resource: str = "gpu"
    serial_fraction: float = 0.9
    prior: int = 20_000
    initial_cores: int = 1
    window: int = R_WINDOW
    history: deque = field(default=None)
    cores: set = field(default_factory=set)
    last_core_grant: Optional[int] = None
    last_core_change: int = 0
    busy: list = field(default_factory=list)

    def __post_init__(self):
        if self.slo <= 0:
            raise ValueError(f"app {self.name}: slo must be positive")
        if self.resource not in ("cpu", "gpu"):
            raise ValueError(f"app {self.name}: resource must be cpu or gpu")
        if self.history is None:
            self.history = deque(maxlen=self.window)

    def utilization(self, now: int, window: int = UTIL_WINDOW) -> float:
        """Mean busy fraction of the app's cores over ``[now - window, now]``."""
        if not self.cores:
            return 0.0
        lo = now - window
        used = 0.0
        for start, end, rate in self.busy:
            a, b = max(start, lo), min(end, now)
            if b > a:
                used += (b - a) * rate
        return used / (len(self.cores) * window)

    def prune_busy(self, now: int, window: int = UTIL_WINDOW) -> None:
        lo = now - window
        self.busy = [iv for iv in self.busy if iv[1] > lo]


def predict_processing(app: AppProfile) -> float:
    if not app.history:
        return app.prior
    return median(app.history)


@dataclass
class EdgeRequest:
    request_id: int
    app_id: int
    t_arrive: int
    t_network: Optional[int] = None
    base_time: int = 0
    predicted: Optional[float] = None
    t_start: Optional[int] = None
    t_end: Optional[int] = None
    t_response: Optional[int] = None
    state: str = QUEUED
    tier: Optional[int] = None
    budget_arrival: Optional[float] = None
    budget_dispatch: Optional[float] = None
    others_pending_at_start: int = 0
    seq: int = 0
    payload: object = None

    @property
    def t_wait(self) -> Optional[int]:
        if self.t_start is None:
            return None
        return self.t_start - self.t_arrive


def edge_budget(request: EdgeRequest, app: AppProfile, now: int,
                predicted: Optional[float] = None) -> float:
    """Remaining budget; an unknown network estimate is treated as a budget of one full SLO."""
    if request.t_network is None:
        return app.slo
    if predicted is None:
        predicted = predict_processing(app)
    wait = (request.t_start if request.t_start is not None else now) - request.t_arrive
    return app.slo - (request.t_network + wait + predicted)


@dataclass
class ResourceAction:
    kind: str
    target: int
    time: int
    detail: object = None


class ComputePlant:
    """Cores split into disjoint per-app partitions plus one tiered, non-preemptive GPU."""

    def __init__(self, total_cores: int = 24, n_tiers: int = len(TIER_NAMES)):
        if total_cores < 1:
            raise ValueError("total_cores must be >= 1")
        self.total_cores = total_cores
        self.free = list(range(total_cores))
        self.partitions: dict[int, set] = {}
        self.n_tiers = n_tiers
        self.gpu_queue: list[EdgeRequest] = []
        self.gpu_current: Optional[EdgeRequest] = None

    def attach(self, app: AppProfile, cores: int) -> None:
        self.partitions[app.app_id] = app.cores
        for _ in range(cores):
            if self.grant_core(app) is None:
                raise ValueError(f"not enough free cores for {app.name}")

    def grant_core(self, app: AppProfile) -> Optional[int]:
        if not self.free:
            return None
        core = self.free.pop(0)
        app.cores.add(core)
        return core

    def take_core(self, app: AppProfile) -> Optional[int]:
        if len(app.cores) <= 1:
            return None
        core = max(app.cores)
        app.cores.remove(core)
        self.free.append(core)
        self.free.sort()
        return core

    def check_invariants(self) -> None:
        seen: set = set()
        for cores in self.partitions.values():
            if seen & cores:
                raise ContractViolation("core partitions overlap")
            seen |= cores
        if len(seen) + len(self.free) != self.total_cores or seen & set(self.free):
            raise ContractViolation("core accounting broken")

    def gpu_dispatch(self) -> Optional[EdgeRequest]:
        """Pop the highest-tier request, FIFO within a tier."""
        if self.gpu_current is not None or not self.gpu_queue:
            return None
        best = min(self.gpu_queue, key=lambda r: (r.tier if r.tier is not None else self.n_tiers, r.seq))
        self.gpu_queue.remove(best)
        return best


class EdgeManager:
    """SMEC edge policy; ``DefaultEdgeManager`` below is the baseline.

    The simulator drives it with the SMEC API calls: ``request_arrived``,
    ``processing_started`` (via ``dispatch``), ``processing_ended`` and
    ``response_sent``.
    """

    name = "smec_edge"

    def __init__(self, apps, plant: Optional[ComputePlant] = None, *, early_drop: bool = True,
                 unconditional_drop: bool = False, tau: float = TAU, tier_cuts=TIER_CUTS,
                 cooldown: int = COOLDOWN, util_threshold: float = UTIL_THRESHOLD,
                 util_window: int = UTIL_WINDOW):
        self.apps: dict[int, AppProfile] = {a.app_id: a for a in apps}
        self.plant = plant or ComputePlant()
        self.early_drop = early_drop
        self.unconditional_drop = unconditional_drop
        self.tau = tau
        self.tier_cuts = tuple(tier_cuts)
        self.cooldown = cooldown
        self.util_threshold = util_threshold
        self.util_window = util_window
        self.cpu_queue: dict[int, deque] = {}
        self.cpu_current: dict[int, Optional[EdgeRequest]] = {}
        self.requests: dict[int, EdgeRequest] = {}
        self.actions: list[ResourceAction] = []
        self._seq = 0
        for app in sorted(self.apps.values(), key=lambda a: a.app_id):
            if app.resource == "cpu":
                self.cpu_queue[app.app_id] = deque()
                self.cpu_current[app.app_id] = None
                self.plant.attach(app, self.initial_cores(app))

    def initial_cores(self, app: AppProfile) -> int:
        return app.initial_cores

    # -- bookkeeping ----------------------------------------------------------
    def pending_on(self, app: AppProfile, exclude: Optional[EdgeRequest] = None) -> int:
        """Requests queued or in service on the app's resource type, other than ``exclude``."""
        n = 0
        if app.resource == "gpu":
            n += sum(1 for r in self.plant.gpu_queue if r is not exclude)
            cur = self.plant.gpu_current
            n += 1 if cur is not None and cur is not exclude else 0
        else:
            for aid, q in self.cpu_queue.items():
                n += sum(1 for r in q if r is not exclude)
                cur = self.cpu_current[aid]
                n += 1 if cur is not None and cur is not exclude else 0
        return n

    def queue_length(self, app_id: int) -> int:
        app = self.apps[app_id]
        if app.resource == "gpu":
            return sum(1 for r in self.plant.gpu_queue if r.app_id == app_id)
        return len(self.cpu_queue[app_id])

    def _log(self, kind: str, target: int, now: int, detail=None) -> ResourceAction:
        act = ResourceAction(kind, target, now, detail)
        self.actions.append(act)
        return act

    # -- SMEC API -------------------------------------------------------------
    def api_event(self, kind: str, request: EdgeRequest, now: int):
        handler = {
            "request_arrived": self.request_arrived,
            "processing_started": self.processing_started,
            "processing_ended": self.processing_ended,
            "response_sent": self.response_sent,
        }.get(kind)
        if handler is None:
            raise ValueError(f"unknown api event {kind!r}")
        return handler(request, now)

    def request_arrived(self, request: EdgeRequest, now: int) -> list[ResourceAction]:
        if request.request_id in self.requests:
            raise ContractViolation(f"request {request.request_id} arrived twice")
        app = self.apps[request.app_id]
        request.seq = self._seq
        self._seq += 1
        request.state = QUEUED
        self.requests[request.request_id] = request
        request.predicted = predict_processing(app)
        request.budget_arrival = edge_budget(request, app, now, request.predicted)
        acts = self.schedule_request(request, now, arrival=True)
        if request.state == QUEUED:
            if app.resource == "gpu":
                self.plant.gpu_queue.append(request)
            else:
                self.cpu_queue[app.app_id].append(request)
        return acts

    def processing_started(self, request: EdgeRequest, now: int) -> None:
        if request.state != QUEUED:
            raise ContractViolation(f"request {request.request_id} started from state {request.state}")
        request.state = PROCESSING
        request.t_start = now

    def processing_ended(self, request: EdgeRequest, now: int) -> None:
        if request.state != PROCESSING:
            raise ContractViolation(f"request {request.request_id} ended from state {request.state}")
        request.state = DONE
        request.t_end = now
        app = self.apps[request.app_id]
        app.history.append(now - request.t_start)
        if app.resource == "gpu":
            self.plant.gpu_current = None
        else:
            self.cpu_current[app.app_id] = None

    def response_sent(self, request: EdgeRequest, now: int) -> None:
        if request.state != DONE:
            raise ContractViolation(f"response for request {request.request_id} in state {request.state}")
        request.t_response = now

    # -- policy ---------------------------------------------------------------
    def should_drop(self, request: EdgeRequest, app: AppProfile, budget: float) -> bool:
        if not self.early_drop or budget > 0:
            return False
        return self.unconditional_drop or self.pending_on(app, exclude=request) > 0

    def drop(self, request: EdgeRequest, now: int) -> ResourceAction:
        request.state = DROPPED
        request.t_end = now
        return self._log("drop", request.request_id, now)

    def schedule_request(self, request: EdgeRequest, now: int, arrival: bool = False) -> list[ResourceAction]:
        """Per-request decision: early drop, then core or GPU-tier adjustment.

        Called on arrival and again when the request is about to start, so
        queueing delay accumulated in between is seen.
        """
        app = self.apps[request.app_id]
        budget = edge_budget(request, app, now, request.predicted)
        if self.should_drop(request, app, budget):
            return [self.drop(request, now)]
        urgency = budget / app.slo
        acts = []
        if app.resource == "cpu":
            if urgency < self.tau and (app.last_core_grant is None
                                       or now - app.last_core_grant >= self.cooldown):
                core = self.plant.grant_core(app)
                if core is not None:
                    app.last_core_grant = now
                    app.last_core_change = now
                    acts.append(self._log("assign_core", app.app_id, now, core))
            if (len(app.cores) > 1 and now - app.last_core_change >= self.util_window
                    and app.utilization(now, self.util_window) < self.util_threshold):
                core = self.plant.take_core(app)
                if core is not None:
                    app.last_core_change = now
                    acts.append(self._log("reclaim_core", app.app_id, now, core))
        else:
            request.tier = tier_for(urgency, self.tier_cuts)
            acts.append(self._log("set_tier", request.request_id, now, request.tier))
        return acts

    def service_time(self, request: EdgeRequest, app: AppProfile) -> int:
        if app.resource == "gpu":
            return max(1, int(request.base_time))
        return max(1, int(round(cpu_service_time(request.base_time, len(app.cores), app.serial_fraction))))

    def _start(self, request: EdgeRequest, app: AppProfile, now: int) -> tuple:
        request.others_pending_at_start = self.pending_on(app, exclude=request)
        self.processing_started(request, now)
        svc = self.service_time(request, app)
        if app.resource == "cpu":
            self.cpu_current[app.app_id] = request
            rate = request.base_time / svc
            app.prune_busy(now, self.util_window)
            app.busy.append((now, now + svc, rate))
        else:
            self.plant.gpu_current = request
        return request, svc

    def _next_cpu(self, app: AppProfile, now: int) -> Optional[EdgeRequest]:
        q = self.cpu_queue[app.app_id]
        while q:
            req = q.popleft()
            self.schedule_request(req, now)
            if req.state == DROPPED:
                continue
            req.budget_dispatch = edge_budget(req, app, now, req.predicted)
            return req
        return None

    def _retier(self, now: int) -> None:
        for req in self.plant.gpu_queue:
            app = self.apps[req.app_id]
            req.tier = tier_for(edge_budget(req, app, now, req.predicted) / app.slo, self.tier_cuts)

    def _next_gpu(self, now: int) -> Optional[EdgeRequest]:
        while True:
            self._retier(now)
            req = self.plant.gpu_dispatch()
            if req is None:
                return None
            app = self.apps[req.app_id]
            self.schedule_request(req, now)
            if req.state == DROPPED:
                continue
            req.budget_dispatch = edge_budget(req, app, now, req.predicted)
            return req

    def dispatch(self, now: int) -> list[tuple]:
        """Start work on every idle resource; returns ``[(request, service_time), ...]``."""
        started = []
        for app_id, current in self.cpu_current.items():
            if current is None:
                app = self.apps[app_id]
                req = self._next_cpu(app, now)
                if req is not None:
                    started.append(self._start(req, app, now))
        if self.plant.gpu_current is None:
            req = self._next_gpu(now)
            if req is not None:
                started.append(self._start(req, self.apps[req.app_id], now))
        return started


class DefaultEdgeManager(EdgeManager):
    """Baseline: fixed equal core split, FIFO GPU, optional drop on queue length."""

    name = "default_edge"

    def __init__(self, apps, plant: Optional[ComputePlant] = None, *, queue_limit: Optional[int] = None,
                 **kwargs):
        self.queue_limit = queue_limit
        apps = list(apps)
        self._n_cpu = max(1, sum(1 for a in apps if a.resource == "cpu"))
        kwargs.setdefault("early_drop", False)
        super().__init__(apps, plant, **kwargs)
        if queue_limit is not None:
            self.name = f"queue_drop_{queue_limit}"

    def initial_cores(self, app: AppProfile) -> int:
        return max(1, self.plant.total_cores // self._n_cpu)

    def schedule_request(self, request: EdgeRequest, now: int, arrival: bool = False) -> list[ResourceAction]:
        if arrival and self.queue_limit is not None and self.queue_length(request.app_id) >= self.queue_limit:
            return [self.drop(request, now)]
        return []

    def _retier(self, now: int) -> None:
        pass
