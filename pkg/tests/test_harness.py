import json
import math

import numpy as np
import pytest

from ecfp import congestion as cg
from ecfp.consensus import metropolis_hastings_weights, read_edge_list, write_weights_csv
from ecfp.errors import ConvergenceError, InvalidArgument
from ecfp.harness import (
    ConfigError,
    Experiment,
    ExperimentConfig,
    TrajectoryRecord,
    emit_csv,
    read_csv,
    run_experiment,
    solve_cne,
)
from ecfp.harness.cli import main
from ecfp.harness.experiment import CSV_HEADER, RunError


def congestion_cfg(**overrides):
    data = {
        "game": {"type": "congestion", "n": 12, "channels": 4, "degree": 2},
        "algorithm": "ecfp-distributed",
        "horizon": 60,
        "graph": {"type": "geometric", "target_degree": 5.0},
        "seed": 3,
    }
    data.update(overrides)
    return data


def write_cfg(tmp_path, data, name="cfg.json"):
    path = tmp_path / name
    path.write_text(json.dumps(data))
    return str(path)


# --- consensus equilibrium solver -------------------------------------------

def test_identical_channels_give_uniform_cne():
    game = cg.CongestionGame(6, [(0, 1, 0.1)] * 4)
    p, res = solve_cne(game)
    np.testing.assert_allclose(p, 0.25, atol=1e-9)
    assert res <= 1e-10 and cg.consensus_gap(game, np.full(4, 0.25)) <= 1e-10


def test_constant_identical_costs_use_mirror_path():
    game = cg.CongestionGame(5, [(1.0,)] * 3)
    p, res = solve_cne(game)
    assert res <= 1e-10
    np.testing.assert_allclose(p, 1 / 3)


def test_dominant_channel_cne_is_pure():
    # Channel 0 at full load (0.5) is cheaper than any other channel alone (1.1).
    game = cg.CongestionGame(5, [(0, 0.1), (1, 0.1), (1, 0.2)])
    for method in ("waterfill", "mirror"):
        p, res = solve_cne(game, method=method, tol=1e-9)
        np.testing.assert_allclose(p, [1, 0, 0], atol=1e-6)
        assert cg.consensus_gap(game, p) <= 1e-9


def test_quadratic_two_channel_cne_is_verified():
    game = cg.CongestionGame(10, [(0, 0, 1), (0, 0, 2)])
    p, res = solve_cne(game)
    assert cg.consensus_gap(game, p) <= 1e-8
    assert res == pytest.approx(cg.consensus_gap(game, p))
    assert p[0] > p[1] > 0


def test_methods_agree():
    rng = np.random.default_rng(0)
    game = cg.CongestionGame(40, cg.random_costs(rng, 6, 2))
    pw, _ = solve_cne(game, method="waterfill")
    pm, _ = solve_cne(game, method="mirror")
    np.testing.assert_allclose(pw, pm, atol=1e-8)


def test_cne_is_unique_from_random_starts():
    rng = np.random.default_rng(1)
    game = cg.CongestionGame(50, cg.random_costs(rng, 10, 2))
    sols = [solve_cne(game, method="mirror", init=rng.dirichlet(np.ones(10)), tol=1e-11)[0]
            for _ in range(20)]
    assert np.max(np.abs(np.array(sols) - sols[0])) <= 1e-6


def test_cne_non_convergence_carries_best_residual():
    rng = np.random.default_rng(2)
    game = cg.CongestionGame(30, cg.random_costs(rng, 5, 2))
    with pytest.raises(ConvergenceError) as info:
        solve_cne(game, method="mirror", max_iters=3, init=[0.96, 0.01, 0.01, 0.01, 0.01])
    assert info.value.best_residual > 0
    assert info.value.best_iterate.shape == (5,)


def test_cne_argument_errors():
    game = cg.CongestionGame(3, [(0, 1), (0, 2)])
    with pytest.raises(InvalidArgument):
        solve_cne(game, method="newton")
    for init in ([0.5, 0.3, 0.2], [1.0, 0.0]):
        with pytest.raises(InvalidArgument):
            solve_cne(game, init=init)


# --- configuration ----------------------------------------------------------

@pytest.mark.parametrize("overrides", [
    {"horizon": 0},
    {"algorithm": "sfp"},
    {"graph": None},
    {"tie_break": "random"},
    {"seed": -1},
    {"bogus": 1},
    {"algorithm": "ecfp-generalized", "partition": "single"},
    {"cadence": {"every": 0}},
])
def test_config_rejects_invalid_documents(overrides):
    with pytest.raises(ConfigError):
        ExperimentConfig.from_dict(congestion_cfg(**overrides))


def test_config_load_errors(tmp_path):
    bad = tmp_path / "bad.json"
    bad.write_text("{not json")
    with pytest.raises(ConfigError, match="invalid JSON"):
        ExperimentConfig.load(bad)
    with pytest.raises(ConfigError, match="cannot read"):
        ExperimentConfig.load(tmp_path / "missing.json")


def test_seed_streams_are_independent():
    a = Experiment(ExperimentConfig.from_dict(congestion_cfg()), solve_target=False)
    b = Experiment(ExperimentConfig.from_dict(congestion_cfg(graph={"type": "complete"})), solve_target=False)
    np.testing.assert_array_equal(a.game.cost_table, b.game.cost_table)
    np.testing.assert_array_equal(a.actions0, b.actions0)


def test_explicit_coefficients_and_edges():
    cfg = ExperimentConfig.from_dict({
        "game": {"type": "congestion", "n": 3, "coefficients": [[0, 1], [0.4, 0.9]]},
        "algorithm": "ecfp-distributed", "horizon": 5,
        "graph": {"type": "edges", "edges": [[0, 1], [1, 2]]},
        "initial_actions": 0,
    })
    exp = Experiment(cfg)
    np.testing.assert_allclose(exp.weights[0], [2 / 3, 1 / 3, 0])
    assert exp.lam == pytest.approx(2 / 3)


def test_tabular_config_with_generalized_partition():
    common = np.zeros((2, 2, 2))
    common[0, 0, 0] = common[1, 1, 1] = 1.0
    cfg = ExperimentConfig.from_dict({
        "game": {"type": "tabular", "common": common.tolist()},
        "algorithm": "ecfp-generalized", "partition": [[0, 2], [1]], "horizon": 300,
    })
    records, summary = run_experiment(cfg)
    assert summary["cne"] is None and math.isnan(records[-1].dist_cne)
    assert records[-1].gap < 0.01


def test_unknown_game_or_graph_types():
    with pytest.raises(ConfigError):
        Experiment(ExperimentConfig.from_dict(congestion_cfg(game={"type": "matrix"})))
    with pytest.raises(ConfigError):
        Experiment(ExperimentConfig.from_dict(congestion_cfg(graph={"type": "ring"})))


# --- experiments ------------------------------------------------------------

def test_single_step_run():
    records, summary = run_experiment(ExperimentConfig.from_dict(congestion_cfg(horizon=1)))
    assert len(records) == 1 and records[0].t == 1
    assert summary["final_t"] == 1


@pytest.mark.parametrize("algorithm", ["ecfp", "ecfp-distributed"])
def test_centroid_algorithms_approach_the_cne(algorithm):
    cfg = ExperimentConfig.from_dict(congestion_cfg(algorithm=algorithm, horizon=300))
    records, summary = run_experiment(cfg)
    assert records[-1].dist_cne < records[0].dist_cne
    assert summary["final_dist"] < 0.1
    assert all(r.gap >= -1e-9 for r in records)
    if algorithm == "ecfp-distributed":
        assert all(r.max_est_err <= r.err_bound + 1e-9 for r in records)
    else:
        assert all(math.isnan(r.max_est_err) for r in records)


def test_fp_reduces_the_gap():
    # FP players settle on individual (generally pure) strategies, so only the
    # gap, not the distance to the symmetric equilibrium, is expected to shrink.
    cfg = ExperimentConfig.from_dict(congestion_cfg(algorithm="fp", horizon=300))
    records, _ = run_experiment(cfg)
    assert records[-1].gap < 0.1 * records[0].gap


def test_cadence_controls_recorded_steps():
    cfg = ExperimentConfig.from_dict(congestion_cfg(horizon=57, cadence={"dense_until": 5, "every": 20}))
    records, _ = run_experiment(cfg)
    assert [r.t for r in records] == [1, 2, 3, 4, 5, 20, 40, 57]


def test_summary_fields():
    _, summary = run_experiment(ExperimentConfig.from_dict(congestion_cfg()))
    for key in ("final_gap", "final_dist", "steps_to_threshold", "avg_degree", "lambda", "wall_clock_s",
                "cne", "cne_residual", "fraction_gap_above_epsilon"):
        assert key in summary
    assert 0 < summary["lambda"] < 1
    assert summary["cne_residual"] <= 1e-10


def test_invalid_weights_abort_with_named_invariant():
    w = np.eye(12)
    w[0, 0] = 1.1
    cfg = ExperimentConfig.from_dict(congestion_cfg(graph={"type": "complete"}, weights={"matrix": w.tolist()}))
    with pytest.raises(Exception, match="weight-matrix/row-stochastic"):
        Experiment(cfg)


def test_run_errors_carry_step_index(monkeypatch):
    from ecfp.harness import experiment as ex

    exp = Experiment(ExperimentConfig.from_dict(congestion_cfg(algorithm="ecfp", horizon=10)))
    real = ex.run_centralized

    def broken(*args, **kwargs):
        for s in real(*args, **kwargs):
            if s.t == 4:
                raise InvalidArgument("boom")
            yield s

    monkeypatch.setattr(ex, "run_centralized", broken)
    with pytest.raises(RunError, match="step 4: boom"):
        exp.run()


def test_scenario_a_shape_runs_to_completion():
    # 10 channels, 400 players, cubic costs, sparse geometric graph.
    cfg = ExperimentConfig.from_dict({
        "game": {"type": "congestion", "n": 400, "channels": 10, "degree": 3},
        "algorithm": "ecfp-distributed", "horizon": 120,
        "graph": {"type": "geometric", "target_degree": 8.78}, "seed": 2024,
    })
    records, summary = run_experiment(cfg)
    assert summary["final_t"] == 120
    assert abs(summary["avg_degree"] - 8.78) <= 1.0
    early = np.mean([r.gap for r in records[:10]])
    late = np.mean([r.gap for r in records[-5:]])
    assert late < early


# --- CSV --------------------------------------------------------------------

def test_empty_and_single_record_csv(tmp_path):
    path = tmp_path / "a.csv"
    emit_csv([], path)
    assert path.read_text() == CSV_HEADER + "\n"
    emit_csv([TrajectoryRecord(1, 0.5, 0.25, -1.0)], path)
    lines = path.read_text().splitlines()
    assert lines == [CSV_HEADER, "1,0.5,0.25,-1,nan,nan"]


def test_csv_round_trip_at_emitted_precision(tmp_path):
    recs = [TrajectoryRecord(t, 1 / 3 * t, math.pi / t, -math.e * t, 1e-7 / t, 2.0 / t) for t in range(1, 6)]
    path = tmp_path / "r.csv"
    emit_csv(recs, path)
    back = read_csv(path)
    for a, b in zip(recs, back):
        assert b.t == a.t
        for f in ("gap", "dist_cne", "centroid_utility", "max_est_err", "err_bound"):
            assert getattr(b, f) == float(format(getattr(a, f), ".12g"))
    emit_csv(back, tmp_path / "again.csv")
    assert (tmp_path / "again.csv").read_bytes() == path.read_bytes()


def test_csv_write_failure_names_path(tmp_path):
    target = tmp_path / "no" / "such" / "dir.csv"
    with pytest.raises(OSError, match=str(target)):
        emit_csv([], target)


def test_csv_header_is_checked(tmp_path):
    path = tmp_path / "x.csv"
    path.write_text("t,gap\n1,2\n")
    with pytest.raises(ValueError):
        read_csv(path)


# --- CLI --------------------------------------------------------------------

def test_cli_run_writes_csv(tmp_path, capsys):
    cfg = write_cfg(tmp_path, congestion_cfg())
    out = tmp_path / "run.csv"
    assert main(["run", cfg, "--out", str(out)]) == 0
    summary = json.loads(capsys.readouterr().out)
    assert summary["final_t"] == 60
    assert out.read_text().startswith(CSV_HEADER)


def test_cli_cne(tmp_path, capsys):
    cfg = write_cfg(tmp_path, congestion_cfg())
    assert main(["cne", cfg]) == 0
    out = json.loads(capsys.readouterr().out)
    assert abs(sum(out["cne"]) - 1) < 1e-9 and out["residual"] <= 1e-10


def test_cli_graph_gen_hits_target_degree(tmp_path, capsys):
    path = tmp_path / "g.txt"
    wcsv = tmp_path / "w.csv"
    assert main(["graph", "gen", "--n", "400", "--target-degree", "8.78", "--seed", "7",
                 "--out", str(path), "--weights-csv", str(wcsv)]) == 0
    info = json.loads(capsys.readouterr().out)
    assert info["connected"] and abs(info["avg_degree"] - 8.78) <= 1.0
    assert 0 < info["lambda"] < 1
    g = read_edge_list(path)
    assert g.n == 400 and g.is_connected()
    assert main(["graph", "info", str(path)]) == 0
    again = json.loads(capsys.readouterr().out)
    assert again["avg_degree"] == info["avg_degree"]


def test_cli_graph_gen_needs_one_size_option(capsys):
    assert main(["graph", "gen", "--n", "10"]) == 2
    assert main(["graph", "gen", "--n", "10", "--radius", "0.5", "--target-degree", "3"]) == 2


def test_cli_validate_passes_on_sound_config(tmp_path, capsys):
    cfg = write_cfg(tmp_path, congestion_cfg())
    assert main(["validate", cfg, "--steps", "50"]) == 0
    out = capsys.readouterr().out
    for name in ("count-distributions", "exact-potential", "weight-matrix", "tracking-bound"):
        assert f"PASS {name}" in out


def test_cli_validate_reports_perturbed_weights(tmp_path, capsys):
    graph = tmp_path / "g.txt"
    assert main(["graph", "gen", "--n", "12", "--target-degree", "5", "--seed", "1", "--out", str(graph)]) == 0
    w = metropolis_hastings_weights(read_edge_list(graph))
    w[3] *= 1.01
    write_weights_csv(w, tmp_path / "w.csv")
    cfg = write_cfg(tmp_path, congestion_cfg(graph={"type": "edge_file", "path": "g.txt"},
                                              weights={"csv": "w.csv"}))
    capsys.readouterr()
    assert main(["validate", cfg]) == 1
    captured = capsys.readouterr()
    assert "FAIL weight-matrix: row-stochastic" in captured.out
    assert "violated" in captured.err
    # Running the same config refuses to start.
    assert main(["run", cfg, "--out", str(tmp_path / "o.csv")]) == 1


def test_cli_validate_tabular_config(tmp_path, capsys):
    cfg = write_cfg(tmp_path, {"game": {"type": "tabular", "common": np.eye(2).tolist()}, "horizon": 5})
    assert main(["validate", cfg]) == 0
    assert "PASS exact-potential" in capsys.readouterr().out


def test_cli_malformed_config_exits_2(tmp_path, capsys):
    cfg = write_cfg(tmp_path, {"game": {"type": "congestion", "n": 3}, "horizon": -5})
    assert main(["run", cfg, "--out", str(tmp_path / "o.csv")]) == 2
    assert "config error" in capsys.readouterr().err


def test_cli_unknown_flag_exits_2(tmp_path):
    with pytest.raises(SystemExit) as info:
        main(["run", "x.json", "--bogus"])
    assert info.value.code == 2


def test_cli_cne_rejects_tabular(tmp_path, capsys):
    cfg = write_cfg(tmp_path, {"game": {"type": "tabular", "common": np.eye(2).tolist()}})
    assert main(["cne", cfg]) == 2
