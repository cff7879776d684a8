import numpy as np
import pytest

from motorplan.cli import EXIT_NUMERIC, EXIT_OK, EXIT_USAGE, main
from motorplan.csvio import read_csv

SMALL = """
[rollout]
trials = 200

[transition]
distances = [0.15, 0.3, 0.45]
widths = [0.01, 0.04]
trials = 200
"""


@pytest.fixture
def small(tmp_path):
    path = tmp_path / "small.toml"
    path.write_text(SMALL)
    return path


def run(tmp_path, *argv, config=None):
    args = list(argv) + ["--out", str(tmp_path / "out")]
    if config is not None:
        args += ["--config", str(config)]
    return main(args)


def values(path):
    header, rows = read_csv(path)
    return header, np.array(rows, dtype=float)


def test_plan_csv(tmp_path):
    assert run(tmp_path, "plan") == EXIT_OK
    header, rows = values(tmp_path / "out" / "plan.csv")
    assert rows.shape[0] == 31 and header[:2] == ["step", "time_s"]
    assert np.allclose(rows[:, 1], np.arange(31) * 0.02)
    assert np.all(np.diff(rows[:, header.index("cum_discounted_reward")]) >= 0)
    assert (tmp_path / "out" / "plan.svg").read_text().startswith("<svg")


def test_plan_at_start_is_idle(tmp_path):
    assert run(tmp_path, "plan", "--goal", "0,0") == EXIT_OK
    header, rows = values(tmp_path / "out" / "plan.csv")
    torques = rows[:, [header.index("torque0"), header.index("torque1")]]
    assert np.max(np.abs(torques)) < 1e-4


def test_plan_output_is_byte_identical(tmp_path):
    assert run(tmp_path / "a", "plan") == EXIT_OK
    assert run(tmp_path / "b", "plan") == EXIT_OK
    assert (tmp_path / "a/out/plan.csv").read_bytes() == (tmp_path / "b/out/plan.csv").read_bytes()


def test_rollout_outputs(tmp_path, small):
    assert run(tmp_path, "rollout", "--seed", "3", config=small) == EXIT_OK
    _, ends = values(tmp_path / "out" / "rollout_endpoints.csv")
    _, disp = values(tmp_path / "out" / "dispersion.csv")
    assert ends.shape == (200, 3) and disp.shape[0] == 31
    assert "hit_rate" in (tmp_path / "out" / "rollout_summary.txt").read_text()


def test_rollout_seed_reproducible(tmp_path, small):
    run(tmp_path / "a", "rollout", "--seed", "3", config=small)
    run(tmp_path / "b", "rollout", "--seed", "3", config=small)
    a = (tmp_path / "a/out/rollout_endpoints.csv").read_bytes()
    assert a == (tmp_path / "b/out/rollout_endpoints.csv").read_bytes()


def test_fitts_grid(tmp_path):
    assert run(tmp_path, "fitts") == EXIT_OK
    _, rows = values(tmp_path / "out" / "fitts.csv")
    assert rows.shape == (12, 4)
    fit = dict(line.split(" = ") for line in (tmp_path / "out" / "fitts_fit.txt").read_text().splitlines())
    assert float(fit["r_squared"]) > 0.9 and float(fit["b"]) > 0


def test_fitts_single_cell_refuses_fit(tmp_path):
    assert run(tmp_path, "fitts", "--widths", "0.02", "--distances", "0.3") == EXIT_NUMERIC
    assert "fit refused" in (tmp_path / "out" / "fitts_fit.txt").read_text()


def test_estimate_offset_goal(tmp_path):
    assert run(tmp_path, "estimate", "--true-goal", "0.35,0.05") == EXIT_OK
    out = dict(line.split(" = ") for line in (tmp_path / "out" / "estimate.txt").read_text().splitlines())
    assert float(out["error_m"]) < 0.02 and float(out["constraint_residual"]) < 1e-6


@pytest.mark.xfail(strict=True, reason="the joint torque/goal estimate is biased by 2.4 mm toward the start "
                                       "even when the observed movement targets the prior (see README)")
def test_estimate_recovers_prior_goal(tmp_path):
    assert run(tmp_path, "estimate") == EXIT_OK
    out = dict(line.split(" = ") for line in (tmp_path / "out" / "estimate.txt").read_text().splitlines())
    assert float(out["error_m"]) < 1e-3


def test_transition_pipeline(tmp_path, small):
    assert run(tmp_path, "transition", "generate", config=small) == EXIT_OK
    data = tmp_path / "out" / "transition.csv"
    header, rows = values(data)
    assert header == ["norm_distance", "width", "transition_distance"] and rows.shape == (6, 3)
    assert run(tmp_path, "transition", "fit", "--data", str(data), config=small) == EXIT_OK
    model = tmp_path / "out" / "transition_model.toml"
    assert run(tmp_path, "transition", "predict", "--model", str(model), "--distance", "0.2,0.4",
               "--width", "0.02", config=small) == EXIT_OK
    _, pred = values(tmp_path / "out" / "transition_predict.csv")
    assert pred.shape == (2, 4) and np.all(pred[:, 3] >= 0)


def test_transition_generate_excludes_degenerate_cells(tmp_path):
    cfg = tmp_path / "quiet.toml"
    cfg.write_text(SMALL + "\n[plant]\nkappa = [0.0, 0.0]\n")
    assert run(tmp_path, "transition", "generate", config=cfg) == EXIT_OK
    _, rows = read_csv(tmp_path / "out" / "transition.csv")
    assert rows == []


def test_handover_switch_opt(tmp_path, small):
    assert run(tmp_path, "transition", "generate", config=small) == EXIT_OK
    assert run(tmp_path, "transition", "fit", "--data", str(tmp_path / "out" / "transition.csv"),
               config=small) == EXIT_OK
    model = tmp_path / "out" / "transition_model.toml"
    assert run(tmp_path, "scenario", "handover", "--policy", "switch_opt", "--model", str(model),
               config=small) == EXIT_OK
    out = dict(line.split(" = ") for line in
               (tmp_path / "out" / "scenario_handover_switch_opt.txt").read_text().splitlines())
    assert float(out["transition_time_s"]) > 0
    header, rows = values(tmp_path / "out" / "scenario_handover_switch_opt.csv")
    assert rows[-1, header.index("stiffness0")] == 0.0


def test_handover_switch_90_needs_no_model(tmp_path):
    assert run(tmp_path, "scenario", "handover", "--policy", "switch_90") == EXIT_OK


def test_scenario_sync(tmp_path):
    assert run(tmp_path, "scenario", "sync") == EXIT_OK
    header, rows = values(tmp_path / "out" / "scenario_sync.csv")
    assert rows.shape[0] == 51 and "human_ee2" in header


def test_bad_config_exits_1(tmp_path, capsys):
    bad = tmp_path / "bad.toml"
    bad.write_text("[cost]\ndiscount = 1.5\n")
    assert run(tmp_path, "plan", config=bad) == EXIT_USAGE
    assert "cost.discount: discount must lie in (0,1]" in capsys.readouterr().err


def test_missing_config_exits_1(tmp_path):
    assert run(tmp_path, "plan", config=tmp_path / "none.toml") == EXIT_USAGE


def test_usage_errors_exit_1(tmp_path):
    assert run(tmp_path, "plan", "--goal", "0.3") == EXIT_USAGE
    assert run(tmp_path, "plan", "--goal", "a,b") == EXIT_USAGE
    with pytest.raises(SystemExit) as exc:
        main(["nonsense"])
    assert exc.value.code == EXIT_USAGE
    with pytest.raises(SystemExit) as exc:
        main(["scenario", "handover", "--policy", "bogus"])
    assert exc.value.code == EXIT_USAGE


def test_output_env(tmp_path, monkeypatch):
    monkeypatch.setenv("MOTORPLAN_OUT", str(tmp_path / "env"))
    assert main(["plan"]) == EXIT_OK
    assert (tmp_path / "env" / "plan.csv").exists()
