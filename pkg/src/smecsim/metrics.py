"""Per-request records, aggregates, and the files a run writes.

Output schema (stable; ``tests/golden`` pins it):

* ``requests.csv``: one row per latency-critical request whose SLO deadline
  falls inside the run, columns ``REQUEST_COLUMNS``.
* ``be_throughput.csv``: ``bin_index,ue_id,bytes`` per 100 ms bin per BE UE.
* ``summary.json``: aggregates, keys documented in the README.
* ``grants.csv`` (optional): ``slot_index,ue_id,prbs,reason``.

Percentiles use the nearest-rank method.
"""
from __future__ import annotations

import csv
import json
import math
from pathlib import Path
from typing import Iterable, Optional

from .edge import DROPPED
from .sim import BE_BIN, RunResult

SUMMARY_SCHEMA = 1
MET, VIOLATED, DROP = "met", "violated", "dropped"

REQUEST_COLUMNS = [
    "app", "ue", "request_id", "slo", "t_generated", "t_start_detected", "t_arrive_edge",
    "t_proc_start", "t_proc_end", "t_response_done", "est_t_network", "true_t_network",
    "predicted_t_process", "budget_arrival", "budget_dispatch", "others_pending_at_start",
    "e2e", "disposition",
]
PERCENTILES = (50, 95, 99)


def nearest_rank(values, p: float):
    vals = sorted(values)
    if not vals:
        return None
    rank = max(1, math.ceil(p / 100 * len(vals)))
    return vals[rank - 1]


def _num(v):
    if v is None:
        return None
    if isinstance(v, float):
        return int(v) if v.is_integer() else round(v, 1)
    return v


def build_records(result: RunResult) -> list[dict]:
    end = result.scenario.duration_us
    rows = []
    for req in result.requests:
        if req.t_generated + req.slo > end:
            continue
        er = req.edge
        proc_start = er.t_start if er is not None else None
        proc_end = er.t_end if er is not None and er.state != DROPPED else None
        dropped = er is not None and er.state == DROPPED
        e2e = req.t_response_done - req.t_generated if req.t_response_done is not None else None
        if dropped:
            disp = DROP
        elif e2e is not None and e2e <= req.slo:
            disp = MET
        else:
            disp = VIOLATED
        true_net = None
        if req.t_arrive_edge is not None and req.resp_downlink is not None:
            true_net = req.t_arrive_edge - req.t_generated + req.resp_downlink
        rows.append({
            "app": req.kind,
            "ue": req.ue_id,
            "request_id": req.request_id,
            "slo": req.slo,
            "t_generated": req.t_generated,
            "t_start_detected": req.t_start_detected,
            "t_arrive_edge": req.t_arrive_edge,
            "t_proc_start": proc_start,
            "t_proc_end": proc_end,
            "t_response_done": req.t_response_done,
            "est_t_network": er.t_network if er is not None else None,
            "true_t_network": true_net,
            "predicted_t_process": _num(er.predicted) if er is not None else None,
            "budget_arrival": _num(er.budget_arrival) if er is not None else None,
            "budget_dispatch": _num(er.budget_dispatch) if er is not None else None,
            "others_pending_at_start": er.others_pending_at_start if proc_start is not None else None,
            "e2e": e2e,
            "disposition": disp,
        })
    return rows


def _pcts(values) -> dict:
    values = list(values)
    return {f"p{p}": nearest_rank(values, p) for p in PERCENTILES}


def _dist(values) -> dict:
    vals = list(values)
    out = {"count": len(vals)}
    out.update(_pcts(vals))
    out["max"] = max(vals) if vals else None
    return out


def app_stats(rows: list[dict]) -> dict:
    n = len(rows)
    met = sum(1 for r in rows if r["disposition"] == MET)
    dropped = sum(1 for r in rows if r["disposition"] == DROP)
    kept = n - dropped
    return {
        "requests": n,
        "met": met,
        "violated": n - met - dropped,
        "dropped": dropped,
        "slo_satisfaction": met / n if n else None,
        "satisfaction_non_dropped": met / kept if kept else None,
        "e2e_us": _pcts(r["e2e"] for r in rows if r["e2e"] is not None),
        "network_us": _pcts(r["true_t_network"] for r in rows if r["true_t_network"] is not None),
        "processing_us": _pcts(r["t_proc_end"] - r["t_proc_start"] for r in rows
                               if r["t_proc_end"] is not None and r["t_proc_start"] is not None),
    }


def estimator_errors(rows: list[dict]) -> dict:
    return {
        "start_time_error_us": _dist(r["t_start_detected"] - r["t_generated"] for r in rows
                                     if r["t_start_detected"] is not None),
        "network_error_us": _dist(abs(r["est_t_network"] - r["true_t_network"]) for r in rows
                                  if r["est_t_network"] is not None and r["true_t_network"] is not None),
        "processing_error_us": _dist(
            _num(abs(r["predicted_t_process"] - (r["t_proc_end"] - r["t_proc_start"]))) for r in rows
            if r["predicted_t_process"] is not None and r["t_proc_end"] is not None
            and r["t_proc_start"] is not None),
    }


def group_by_app(rows: Iterable[dict]) -> dict:
    out: dict = {}
    for r in rows:
        out.setdefault(r["app"], []).append(r)
    return dict(sorted(out.items()))


def summarize(result: RunResult, rows: Optional[list] = None) -> dict:
    rows = build_records(result) if rows is None else rows
    by_app = group_by_app(rows)
    sc = result.scenario
    return {
        "schema_version": SUMMARY_SCHEMA,
        "scenario": sc.name,
        "scenario_digest": sc.digest(),
        "seed": sc.seed,
        "duration_us": sc.duration_us,
        "policy": result.policy,
        "edge_policy": result.edge_policy,
        "apps": {app: app_stats(rs) for app, rs in by_app.items()},
        "lc_aggregate": app_stats(rows),
        "drops": {app: sum(1 for r in rs if r["disposition"] == DROP) for app, rs in by_app.items()},
        "estimator": {app: estimator_errors(rs) for app, rs in by_app.items()},
        "be_throughput": {
            "bin_us": BE_BIN,
            "ues": {str(ue): bins for ue, bins in sorted(result.be_bins.items())},
        },
        "starvation": {
            "max_grant_gap_us": {str(ue): g for ue, g in sorted(result.max_grant_gap.items())},
            "sr_grants": {str(ue): n for ue, n in sorted(result.sr_grants.items())},
        },
        "trace_digest": result.trace_digest,
    }


def _cell(v) -> str:
    return "" if v is None else str(v)


def write_outputs(result: RunResult, out_dir) -> dict:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    rows = build_records(result)
    with open(out / "requests.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(REQUEST_COLUMNS)
        for r in rows:
            w.writerow([_cell(r[c]) for c in REQUEST_COLUMNS])
    with open(out / "be_throughput.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["bin_index", "ue_id", "bytes"])
        for ue, bins in sorted(result.be_bins.items()):
            for i, b in enumerate(bins):
                w.writerow([i, ue, b])
    if result.grant_rows:
        with open(out / "grants.csv", "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["slot_index", "ue_id", "prbs", "reason"])
            w.writerows(result.grant_rows)
    summary = summarize(result, rows)
    (out / "summary.json").write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n")
    return summary


# -- post-processing over written runs ---------------------------------------------

def load_summary(run_dir) -> dict:
    p = Path(run_dir) / "summary.json"
    try:
        return json.loads(p.read_text())
    except OSError as exc:
        raise ValueError(f"{run_dir}: no summary.json ({exc})") from None


def read_requests(run_dir) -> list[dict]:
    with open(Path(run_dir) / "requests.csv", newline="") as fh:
        rows = list(csv.DictReader(fh))
    for r in rows:
        for k, v in r.items():
            if k in ("app", "disposition"):
                continue
            if v == "":
                r[k] = None
            else:
                f = float(v)
                r[k] = int(f) if f.is_integer() and "." not in v else f
    return rows


def compare(summaries: list[dict]) -> dict:
    """Side-by-side headline metrics; every run must share scenario, seed and duration."""
    if len(summaries) < 2:
        raise ValueError("compare needs at least two runs")
    ref = summaries[0]
    for s in summaries[1:]:
        for key in ("scenario_digest", "seed", "duration_us"):
            if s[key] != ref[key]:
                raise ValueError(f"runs differ in {key}: {ref[key]!r} vs {s[key]!r}")
    labels = [f"{s['policy']}+{s['edge_policy']}" for s in summaries]
    apps = sorted({a for s in summaries for a in s["apps"]})
    table = {}
    for app in apps:
        table[app] = {}
        base_p99 = ref["apps"].get(app, {}).get("e2e_us", {}).get("p99")
        for label, s in zip(labels, summaries):
            st = s["apps"].get(app)
            if st is None:
                continue
            p99 = st["e2e_us"]["p99"]
            table[app][label] = {
                "slo_satisfaction": st["slo_satisfaction"],
                "dropped": st["dropped"],
                "e2e_p50_us": st["e2e_us"]["p50"],
                "e2e_p99_us": p99,
                "p99_ratio_vs_first": (p99 / base_p99) if p99 and base_p99 else None,
            }
    return {"runs": labels, "apps": table}


def format_compare(cmp: dict) -> str:
    labels = cmp["runs"]
    width = max(24, *(len(l) + 2 for l in labels))
    lines = ["app  metric".ljust(28) + "".join(l.rjust(width) for l in labels)]
    for app, cols in cmp["apps"].items():
        for metric in ("slo_satisfaction", "dropped", "e2e_p50_us", "e2e_p99_us", "p99_ratio_vs_first"):
            cells = []
            for l in labels:
                v = cols.get(l, {}).get(metric)
                if isinstance(v, float):
                    cells.append(f"{v:.3f}".rjust(width))
                else:
                    cells.append(("-" if v is None else str(v)).rjust(width))
            lines.append(f"{app:<4} {metric}".ljust(28) + "".join(cells))
    return "\n".join(lines)


def estimator_report(run_dir) -> dict:
    rows = read_requests(run_dir)
    return {app: estimator_errors(rs) for app, rs in group_by_app(rows).items()}
