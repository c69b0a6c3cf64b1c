"""Application traffic and processing demand: smart stadium, AR, video conferencing, file transfer."""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Iterator, Optional

from .simcore import US_PER_S

KB = 1024
MB = 1024 * 1024

# bytes of each transcoded rendition relative to the input frame, best quality first
RENDITION_FRACTIONS = (0.35, 0.2, 0.1, 0.05)


@dataclass(frozen=True)
class AppSpec:
    kind: str
    slo: Optional[int]
    fps: float = 0.0
    bitrate: float = 0.0
    resource: Optional[str] = None
    proc_mean: int = 0
    serial_fraction: float = 0.9
    resolutions: int = 1
    response_fixed: int = 0
    response_scale: float = 0.0
    initial_cores: int = 1
    size_sigma: float = 0.2
    gop: int = 6
    proc_sigma: float = 0.1
    spike_prob: float = 0.01
    spike_factor: float = 2.0

    @property
    def latency_critical(self) -> bool:
        return self.slo is not None

    @property
    def frame_interval(self) -> float:
        return US_PER_S / self.fps

    @property
    def mean_frame_bytes(self) -> float:
        return self.bitrate / 8 / self.fps

    def processing_mean(self, resolutions: Optional[int] = None) -> float:
        if self.kind == "SS":
            return self.proc_mean * (resolutions or self.resolutions)
        return self.proc_mean

    def response_bytes(self, request_bytes: int, resolutions: Optional[int] = None) -> int:
        if self.kind == "SS":
            k = resolutions or self.resolutions
            frac = sum(RENDITION_FRACTIONS[i % len(RENDITION_FRACTIONS)] for i in range(k))
            return max(1, int(request_bytes * frac))
        return max(1, self.response_fixed + int(request_bytes * self.response_scale))


# Processing means are desk-scale calibration knobs sized against one GPU and 24 cores.
PRESETS = {
    "SS": AppSpec("SS", slo=100_000, fps=60, bitrate=20e6, resource="cpu", proc_mean=7_800,
                  serial_fraction=0.9, resolutions=3, gop=12, initial_cores=2),
    "AR": AppSpec("AR", slo=100_000, fps=30, bitrate=8e6, resource="gpu", proc_mean=12_000,
                  response_fixed=2 * KB),
    "VC": AppSpec("VC", slo=150_000, fps=30, bitrate=800e3, resource="gpu", proc_mean=10_000,
                  response_scale=8.0),
    "FT": AppSpec("FT", slo=None),
}

AR_LARGE_PROC = 20_000


def app_spec(kind: str, **overrides) -> AppSpec:
    if kind not in PRESETS:
        raise ValueError(f"unknown app kind {kind!r}; expected one of {sorted(PRESETS)}")
    return replace(PRESETS[kind], **overrides)


@dataclass
class Frame:
    t: int
    size: int
    base_time: int
    resolutions: int = 1


def _gop_sizes(app: AppSpec, rng) -> list[int]:
    """One GOP of frame sizes, rescaled so the GOP carries exactly its share of the bitrate."""
    draws = [rng.lognormvariate(-app.size_sigma ** 2 / 2, app.size_sigma) for _ in range(app.gop)]
    target = app.mean_frame_bytes * app.gop
    scale = target / sum(draws)
    sizes = [max(1, int(round(d * scale))) for d in draws]
    # fold rounding residue into the last frame
    sizes[-1] = max(1, sizes[-1] + int(round(target)) - sum(sizes))
    return sizes


def processing_draw(mean: float, rng, sigma: float = 0.1, spike_prob: float = 0.01,
                    spike_factor: float = 2.0) -> int:
    base = mean * rng.lognormvariate(-sigma ** 2 / 2, sigma)
    if spike_prob > 0 and rng.random() < spike_prob:
        base *= spike_factor
    return max(1, int(round(base)))


def iter_frames(app: AppSpec, rng, start: int = 0, end: Optional[int] = None,
                resolutions_at=None) -> Iterator[Frame]:
    """Periodic frames from ``start``; ``resolutions_at(t)`` gives the SS rendition count."""
    if not app.fps:
        raise ValueError(f"{app.kind} is not a video app")
    interval = app.frame_interval
    n = 0
    gop: list[int] = []
    while True:
        t = start + int(round(n * interval))
        if end is not None and t >= end:
            return
        if not gop:
            gop = _gop_sizes(app, rng)
        size = gop.pop(0)
        k = resolutions_at(t) if resolutions_at else app.resolutions
        base = processing_draw(app.processing_mean(k), rng, app.proc_sigma, app.spike_prob,
                               app.spike_factor)
        yield Frame(t, size, base, k)
        n += 1


def generate_frames(app: AppSpec, duration: int, rng, resolutions_at=None) -> list[Frame]:
    return list(iter_frames(app, rng, 0, duration, resolutions_at))


def ft_sizes(law: str, rng) -> Iterator[int]:
    """File sizes for back-to-back uploads: ``static`` is a fixed 3 MiB, ``dynamic`` uniform 1 KiB..10 MiB."""
    while True:
        if law == "static":
            yield 3 * MB
        elif law == "dynamic":
            yield rng.randint(1 * KB, 10 * MB)
        else:
            raise ValueError(f"unknown file-size law {law!r}")


def generate_ft(duration: int, law: str, rng, rate_bytes_per_us: float) -> list[tuple[int, int]]:
    """Back-to-back files over a fixed-rate pipe: ``[(t_enqueue, size), ...]``.

    The simulator enqueues the next file on actual completion; this helper is
    the same law against a constant drain rate.
    """
    out = []
    t = 0
    sizes = ft_sizes(law, rng)
    while t < duration:
        size = next(sizes)
        out.append((t, size))
        t += int(math.ceil(size / rate_bytes_per_us))
    return out


@dataclass
class Timeline:
    """Piecewise-constant integer signal: ``points`` are ``(t, value)`` sorted by time."""
    points: list = field(default_factory=list)

    def value_at(self, t: int) -> int:
        v = self.points[0][1]
        for pt, pv in self.points:
            if pt > t:
                break
            v = pv
        return v


def piecewise(rng, duration: int, lo: int, hi: int, dwell_mean: int) -> Timeline:
    pts = [(0, rng.randint(lo, hi))]
    t = 0
    while True:
        t += max(1, int(round(rng.expovariate(1.0 / dwell_mean))))
        if t >= duration:
            break
        pts.append((t, rng.randint(lo, hi)))
    return Timeline(pts)


def dynamics_timeline(duration: int, rng, n_ss: int = 2, dwell_mean: int = 5 * US_PER_S,
                      ar_range=(0, 2), vc_range=(0, 2), ss_range=(2, 4)) -> dict:
    """On/off counts for AR and VC and per-SS-UE rendition counts."""
    return {
        "AR": piecewise(rng, duration, ar_range[0], ar_range[1], dwell_mean),
        "VC": piecewise(rng, duration, vc_range[0], vc_range[1], dwell_mean),
        "SS": [piecewise(rng, duration, ss_range[0], ss_range[1], dwell_mean) for _ in range(n_ss)],
    }
