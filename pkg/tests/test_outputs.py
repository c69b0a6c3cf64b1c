"""Output files, aggregation, comparison, config loading and the CLI."""
import csv
import json
from pathlib import Path

import pytest

from smecsim import ConfigError, load_scenario, simulate
from smecsim.cli import main
from smecsim.config import scenario_from_dict, with_overrides
from smecsim.metrics import app_stats, compare, format_compare, load_summary, nearest_rank, write_outputs

from oracles import nearest_rank_oracle

GOLDEN = Path(__file__).parent / "golden"


def _small(seed=1, duration=4.0, **ues):
    return scenario_from_dict({"schema_version": 1, "name": "small", "seed": seed, "duration_s": duration,
                               "ran": {"prbs_per_slot": 80},
                               "workload": {"ues": ues or {"SS": 1, "AR": 1, "VC": 1, "FT": 2}}})


@pytest.fixture(scope="module")
def run_dir(tmp_path_factory):
    out = tmp_path_factory.mktemp("run")
    write_outputs(simulate(_small()), out)
    return out


def test_nearest_rank_matches_oracle():
    import random
    rng = random.Random(0)
    for _ in range(500):
        xs = [rng.randint(0, 50) for _ in range(rng.randint(1, 40))]
        for p in (50, 95, 99, 100):
            assert nearest_rank(xs, p) == nearest_rank_oracle(xs, p)
    assert nearest_rank([], 50) is None


def test_satisfaction_ratio():
    rows = [{"disposition": "met", "e2e": 1, "true_t_network": None, "t_proc_end": None,
             "t_proc_start": None}] * 9
    rows = rows + [{"disposition": "violated", "e2e": 500, "true_t_network": None, "t_proc_end": None,
                    "t_proc_start": None}]
    assert app_stats(rows)["slo_satisfaction"] == 0.9


def test_golden_schema(run_dir):
    header = (run_dir / "requests.csv").read_text().splitlines()[0]
    assert header + "\n" == (GOLDEN / "requests_header.csv").read_text()
    keys = json.loads((GOLDEN / "summary_keys.json").read_text())
    s = load_summary(run_dir)
    assert sorted(s) == keys["top"]
    for st in s["apps"].values():
        assert sorted(st) == keys["app"]
    for est in s["estimator"].values():
        assert sorted(est) == keys["estimator"]
    assert (run_dir / "be_throughput.csv").read_text().startswith("bin_index,ue_id,bytes\n")


def test_summary_recomputed_from_csv(run_dir):
    """Independent reduction of requests.csv reproduces the JSON aggregates."""
    with open(run_dir / "requests.csv", newline="") as fh:
        rows = list(csv.DictReader(fh))
    s = load_summary(run_dir)
    apps = {}
    for r in rows:
        apps.setdefault(r["app"], []).append(r)
    assert sorted(apps) == sorted(s["apps"])
    for app, rs in apps.items():
        st = s["apps"][app]
        met = sum(r["disposition"] == "met" for r in rs)
        assert st["requests"] == len(rs) and st["met"] == met
        assert st["slo_satisfaction"] == pytest.approx(met / len(rs))
        e2e = [int(r["e2e"]) for r in rs if r["e2e"]]
        assert st["e2e_us"]["p99"] == nearest_rank_oracle(e2e, 99)
        for r in rs:
            if r["disposition"] == "met":
                assert int(r["e2e"]) <= int(r["slo"])
            assert int(r["t_generated"]) + int(r["slo"]) <= s["duration_us"]
    be = s["be_throughput"]["ues"]
    with open(run_dir / "be_throughput.csv", newline="") as fh:
        for r in csv.DictReader(fh):
            assert be[r["ue_id"]][int(r["bin_index"])] == int(r["bytes"])


def test_outputs_are_byte_identical_across_runs(tmp_path):
    for name in ("a", "b"):
        write_outputs(simulate(_small(seed=3)), tmp_path / name)
    for f in ("requests.csv", "summary.json", "be_throughput.csv"):
        assert (tmp_path / "a" / f).read_bytes() == (tmp_path / "b" / f).read_bytes()


def test_compare_identical_policies_ratio_one(run_dir):
    s = load_summary(run_dir)
    cmp = compare([s, s])
    for cols in cmp["apps"].values():
        for v in cols.values():
            assert v["p99_ratio_vs_first"] == 1.0


def test_compare_three_policies_three_columns(tmp_path):
    dirs = []
    for pol in ("smec", "default_pf", "notify_delayed"):
        d = tmp_path / pol
        write_outputs(simulate(_small(duration=2.0), pol, "smec_edge"), d)
        dirs.append(d)
    cmp = compare([load_summary(d) for d in dirs])
    assert len(cmp["runs"]) == 3
    assert all(len(cols) == 3 for cols in cmp["apps"].values())
    assert "default_pf+smec_edge" in format_compare(cmp).splitlines()[0]


def test_compare_rejects_mismatched_runs(tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    write_outputs(simulate(_small(duration=1.0)), a)
    write_outputs(simulate(_small(seed=2, duration=1.0)), b)
    with pytest.raises(ValueError, match="seed"):
        compare([load_summary(a), load_summary(b)])


# -- config ---------------------------------------------------------------------------

@pytest.mark.parametrize("data,path", [
    ({"schema_version": 1, "ran": {"prbs": 5}}, "ran.prbs"),
    ({"schema_version": 1, "ran": {"prbs_per_slot": "many"}}, "ran.prbs_per_slot"),
    ({"schema_version": 1, "bogus": 1}, "bogus"),
    ({"schema_version": 2}, "schema_version"),
    ({"ran": {}}, "schema_version"),
    ({"schema_version": 1, "workload": {"ues": {"XR": 1}}}, "workload.ues.XR"),
    ({"schema_version": 1, "workload": {"apps": {"AR": {"fps2": 1}}}}, "workload.apps.AR.fps2"),
    ({"schema_version": 1, "edge": {"early_drop": "yes"}}, "edge.early_drop"),
    ({"schema_version": 1, "ran": {"tdd_pattern": "DDDD"}}, "ran"),
])
def test_config_errors_name_the_key(data, path):
    with pytest.raises(ConfigError, match=path.replace(".", r"\.")):
        scenario_from_dict(data)


def test_bundled_scenarios_load():
    for name in ("static", "static_scaled", "dynamic"):
        sc = load_scenario(name)
        assert sc.name == name and sc.duration_us > 0
    sc = load_scenario("static_scaled")
    assert sc.workload.ues == {"SS": 2, "AR": 1, "VC": 1, "FT": 4}
    assert with_overrides(sc, seed=9).digest() == sc.digest()


def test_zero_duration_run_is_empty():
    res = simulate(_small(duration=0))
    assert res.requests == []


# -- CLI --------------------------------------------------------------------------------

def test_cli_run_compare_report(tmp_path, capsys):
    a, b = tmp_path / "a", tmp_path / "b"
    assert main(["run", "--scenario", "static_scaled", "--duration", "2", "--out", str(a), "--grant-trace"]) == 0
    assert main(["run", "--scenario", "static_scaled", "--duration", "2", "--out", str(b),
                 "--policy", "default_pf", "--edge-policy", "default_edge"]) == 0
    assert (a / "grants.csv").read_text().startswith("slot_index,ue_id,prbs,reason\n")
    capsys.readouterr()
    assert main(["compare", str(a), str(b), "--json"]) == 0
    cmp = json.loads(capsys.readouterr().out)
    assert cmp["runs"] == ["smec+smec_edge", "default_pf+default_edge"]
    assert main(["estimator-report", str(a)]) == 0
    assert "start_time_error_us" in capsys.readouterr().out


def test_cli_config_error_exit_code(tmp_path, capsys):
    bad = tmp_path / "bad.yaml"
    bad.write_text("schema_version: 1\nran:\n  prbs: 3\n")
    assert main(["run", "--scenario", str(bad), "--out", str(tmp_path / "o")]) == 2
    assert "ran.prbs" in capsys.readouterr().err
    assert main(["run", "--scenario", str(tmp_path / "missing.yaml")]) == 2


def test_cli_compare_mismatch_exit_code(tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    main(["run", "--scenario", "static_scaled", "--duration", "0.5", "--out", str(a)])
    main(["run", "--scenario", "dynamic", "--duration", "0.5", "--out", str(b)])
    assert main(["compare", str(a), str(b)]) == 2
