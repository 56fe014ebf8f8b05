"""Command-line surface: artifacts, schemas, determinism, exit codes."""

import csv
import json
from pathlib import Path

import pytest

from slgp.cli import main

PLAN_WEIGHTS_HEADER = ["skeletonId", "status", "fStar", "logRatio",
                       "entropyRatio", "rank", "weight"]
SUMMARY_HEADER = ["seed", "aborted", "finalError", "planDeviation",
                  "totalCost", "switchCount"]


def _read_csv(path: Path):
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    return rows[0], rows[1:]


def _plan(tmp_path, name, *extra):
    out = tmp_path / f"plan-{name}"
    code = main(["plan", "--scenario", name, "--out", str(out), *extra])
    return code, out


# --- plan ------------------------------------------------------------------


def test_plan_elbow_writes_the_mixture_and_solutions(tmp_path):
    code, out = _plan(tmp_path, "elbow")
    assert code == 0
    payload = json.loads((out / "mixture.json").read_text())
    assert payload["schema"] == "slgp.mixture/1"
    assert len(payload["components"]) == 4
    total = sum(c["weight"] for c in payload["components"])
    assert abs(total - 1.0) < 1e-12
    for entry in payload["components"]:
        assert set(entry) == {"skeletonId", "fStar", "logRatio",
                              "entropyRatio", "rank", "weight"}
    header, rows = _read_csv(out / "weights.csv")
    assert header == PLAN_WEIGHTS_HEADER
    assert len(rows) == 4
    for sid in ("free", "fix-joint-1", "fix-joint-2", "fix-both"):
        sol = json.loads((out / f"solution-{sid}.json").read_text())
        assert sol["skeletonId"] == sid
        assert sol["status"] == "converged"
        assert {"fStar", "kkt", "xStar", "logRatio", "rank",
                "weight"} <= set(sol)
    assert (out / "report.txt").exists()


def test_plan_push_reports_the_two_finger_entropy_advantage(tmp_path):
    code, out = _plan(tmp_path, "push")
    assert code == 0
    header, rows = _read_csv(out / "weights.csv")
    ratios = {row[0]: float(row[3]) for row in rows}
    assert ratios["two-finger"] > ratios["single-finger"]
    report = (out / "report.txt").read_text()
    assert "single-finger" in report and "two-finger" in report


def test_plan_reruns_are_byte_identical(tmp_path):
    _, first = _plan(tmp_path, "tworoute", "--trace")
    code, second = main(["plan", "--scenario", "tworoute", "--trace",
                         "--out", str(tmp_path / "again")]), tmp_path / "again"
    assert code == 0
    names = sorted(p.name for p in first.iterdir())
    assert names == sorted(p.name for p in second.iterdir())
    assert any(n.startswith("trace-") for n in names)
    for name in names:
        assert (first / name).read_bytes() == (second / name).read_bytes()


def test_plan_honors_config_file_and_overrides(tmp_path):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"scenario": {"name": "tworoute", "N": 24}}))
    out = tmp_path / "cfgout"
    code = main(["plan", "--config", str(cfg), "--set",
                 "scenario.sigma=0.2", "--out", str(out)])
    assert code == 0
    sol = json.loads((out / "solution-via-near.json").read_text())
    assert len(sol["xStar"]) == 24
    report = (out / "report.txt").read_text()
    assert "N=24" in report and "sigma=0.2" in report


# --- simulate ---------------------------------------------------------------


def test_disturbed_routes_switch_to_the_far_waypoint(tmp_path):
    out = tmp_path / "sim"
    code = main(["simulate", "--scenario", "tworoute", "--out", str(out),
                 "--disturb", "12:0.0,0.8", "--seeds", "1..20"])
    assert code == 0
    header, rows = _read_csv(out / "weights.csv")
    assert header[:3] == ["seed", "step", "active"]
    far_col = header.index("w_via-far")
    for seed, step, active, *ws in rows:
        if int(step) < 12:
            assert active == "via-near"
            assert float(ws[far_col - 3]) < 0.5
    finals = {r[0]: r for r in rows if int(r[1]) == 40}
    assert len(finals) == 20
    assert all(r[2] == "via-far" for r in finals.values())
    assert all(float(r[far_col]) > 0.5 for r in finals.values())

    header, srows = _read_csv(out / "summary.csv")
    assert header == SUMMARY_HEADER
    assert len(srows) == 20
    assert all(int(r[5]) >= 1 for r in srows)

    steps = [json.loads(line)
             for line in (out / "rollouts.jsonl").read_text().splitlines()]
    assert len(steps) == 20 * 40
    assert {"seed", "n", "x", "command", "weights", "active"} <= set(steps[0])


def test_noiseless_rollout_stays_on_the_plan(tmp_path):
    out = tmp_path / "quiet"
    code = main(["simulate", "--scenario", "tworoute", "--out", str(out),
                 "--noise", "0", "--seeds", "1"])
    assert code == 0
    header, rows = _read_csv(out / "summary.csv")
    assert len(rows) == 1
    deviation = float(rows[0][header.index("planDeviation")])
    assert deviation < 1e-6


def test_both_controller_modes_produce_summaries(tmp_path):
    for mode in ("blending", "switching"):
        out = tmp_path / mode
        code = main(["simulate", "--scenario", "tworoute", "--out", str(out),
                     "--controller", mode, "--noise", "2", "--seeds", "0..4"])
        assert code == 0
        header, rows = _read_csv(out / "summary.csv")
        assert header == SUMMARY_HEADER
        assert len(rows) == 5
        assert all(r[1] == "0" for r in rows)
        assert all(float(r[2]) >= 0.0 for r in rows)


def test_simulate_reruns_are_byte_identical(tmp_path):
    outs = []
    for tag in ("a", "b"):
        out = tmp_path / tag
        code = main(["simulate", "--scenario", "tworoute", "--out", str(out),
                     "--noise", "1.5", "--seeds", "3..5"])
        assert code == 0
        outs.append(out)
    for name in sorted(p.name for p in outs[0].iterdir()):
        assert (outs[0] / name).read_bytes() == (outs[1] / name).read_bytes()


def test_explicit_truth_skeleton_is_honored(tmp_path):
    out = tmp_path / "truth"
    code = main(["simulate", "--scenario", "tworoute", "--out", str(out),
                 "--noise", "0", "--seeds", "0", "--truth", "via-far"])
    assert code == 0
    assert "truth skeleton: via-far" in (out / "report.txt").read_text()


# --- validation and exit codes ----------------------------------------------


def test_bad_arguments_exit_with_a_message(tmp_path):
    out = str(tmp_path / "x")
    for argv in (
        ["simulate", "--scenario", "tworoute", "--out", out,
         "--seeds", "a..z"],
        ["simulate", "--scenario", "tworoute", "--out", out,
         "--disturb", "12:zero"],
        ["simulate", "--scenario", "tworoute", "--out", out,
         "--disturb", "12:0.0"],
        ["simulate", "--scenario", "tworoute", "--out", out,
         "--disturb", "0:0.0,0.8"],
        ["simulate", "--scenario", "tworoute", "--out", out,
         "--truth", "via-nowhere"],
        ["plan", "--scenario", "tworoute", "--out", out,
         "--set", "scenario.bogus=1"],
        ["plan", "--scenario", "tworoute", "--out", out,
         "--set", "solver.bogus=2"],
        ["plan", "--scenario", "tworoute", "--out", out, "--set", "oops"],
        ["plan", "--scenario", "tworoute", "--out", out,
         "--set", "scenario.N=2"],
    ):
        with pytest.raises(SystemExit):
            main(argv)


def test_unknown_subcommand_and_scenario_are_rejected(tmp_path):
    with pytest.raises(SystemExit):
        main(["explode"])
    with pytest.raises(SystemExit):
        main(["plan", "--scenario", "juggling", "--out", str(tmp_path)])


# --- selftest ---------------------------------------------------------------


def test_selftest_subset_passes():
    assert main(["selftest", "--suite", "nullspace", "--suite",
                 "simplex"]) == 0


def test_selftest_rejects_unknown_suite():
    with pytest.raises(SystemExit):
        main(["selftest", "--suite", "astrology"])
