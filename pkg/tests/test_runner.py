import csv
import json
from pathlib import Path

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from casbandit import config as cfg
from casbandit import runner
from casbandit.env import DivergenceError

CONFIGS = Path(__file__).resolve().parent.parent / "configs"


def small(**kw):
    base = dict(horizon=200, arms=[{"id": i, "weight": w} for i, w in enumerate([6, 1, 1, 1])],
                env={"dimension": 3, "conflict": 0.7, "seed": 4})
    base.update(kw)
    return cfg.parse_config(base)


def read_trace(path):
    with open(path, newline="") as fh:
        lines = fh.read().splitlines()
    assert lines[0].startswith("# columns:")
    return list(csv.reader(lines[1:]))


class TestConfig:
    def test_defaults(self):
        c = cfg.RunConfig()
        assert c.n_arms == 21
        assert [a.weight for a in c.arms[:4]] == [6, 6, 6, 1]
        assert c.scheduler.alpha == 10 and c.env.beta == pytest.approx(8 / 9)

    def test_round_trip(self):
        c = small(policy="eat", label="x", baselines={"sat_probs": [0.25] * 4})
        assert cfg.loads(cfg.dumps(c)) == c

    @given(st.integers(0, 2**64 - 1), st.sampled_from(["cas", "sat", "eat", "order", "avg"]),
           st.integers(0, 10**6), st.floats(0, 1), st.one_of(st.floats(0.01, 10), st.just("calibrate")))
    @settings(max_examples=40)
    def test_round_trip_random(self, seed, policy, horizon, conflict, eps):
        c = cfg.parse_config({"seed": seed, "policy": policy, "horizon": horizon,
                              "env": {"conflict": conflict}, "arms": [{"id": 0, "epsilon": eps}]})
        assert cfg.loads(cfg.dumps(c)) == c

    @pytest.mark.parametrize("text, key", [
        ("horizon = -1", "horizon"),
        ("[env]\ndimenson = 3", "env.dimenson"),
        ("polcy = 'cas'", "polcy"),
        ("policy = 'greedy'", "policy"),
        ("seed = 18446744073709551616", "seed"),
        ("[[arms]]\nid = 0\nweight = 0", "arms.0.weight"),
        ("[[arms]]\nid = 0\nepsilon = 'auto'", "arms.0.epsilon"),
        ("[[arms]]\nid = 1", "ids must be 0..M-1"),
        ("[baselines]\norder_sequence = [0, 1]", "order_sequence"),
    ])
    def test_errors_name_the_key(self, text, key):
        with pytest.raises(cfg.ConfigError, match=key.replace(".", r"\.").replace("[", r"\[")):
            cfg.loads(text)

    def test_bad_toml_and_missing_file(self, tmp_path):
        with pytest.raises(cfg.ConfigError, match="invalid TOML"):
            cfg.loads("seed = = 1")
        with pytest.raises(cfg.ConfigError, match="cannot read"):
            cfg.load(tmp_path / "absent.toml")

    def test_shipped_configs_parse(self):
        for path in CONFIGS.glob("*.toml"):
            assert cfg.load(path).n_arms == 11

    def test_every_key_described(self):
        keys = dict(cfg.describe_keys())
        assert "env.noise_scale" in keys and "arms[].epsilon" in keys
        assert all(desc and not desc.startswith(" (") for desc in keys.values())


class TestSimulate:
    @pytest.mark.parametrize("policy", ["cas", "sat", "eat", "order", "avg"])
    def test_summary_invariants(self, policy):
        c = small(policy=policy)
        s = runner.simulate(c)
        assert abs(sum(s.selection_frequencies) - 1) < 1e-9
        assert s.grad_evals == (4 * 200 if policy == "avg" else 200)
        assert 0 < s.weighted_accuracy <= 1

    def test_zero_horizon(self):
        s = runner.simulate(small(horizon=0, policy="sat"))
        np.testing.assert_allclose(s.selection_frequencies, [6 / 9, 1 / 9, 1 / 9, 1 / 9])
        assert s.grad_evals == 0
        s = runner.simulate(small(horizon=0))
        np.testing.assert_allclose(s.selection_frequencies, [6 / 9, 1 / 9, 1 / 9, 1 / 9])

    def test_calibration(self):
        c = small(arms=[{"id": 0, "epsilon": "calibrate"}, {"id": 1, "epsilon": 2.0}])
        env, eps = runner.build_environment(c)
        assert eps[1] == 2.0
        assert 0.2 <= env.accuracies(env.theta0)[0] <= 0.6

    def test_divergence_names_iteration(self):
        c = small(env={"dimension": 3, "learning_rate": 1e3, "seed": 4})
        with np.errstate(all="ignore"), pytest.raises(DivergenceError, match="iteration"):
            runner.simulate(c.with_overrides())

    def test_noise_is_seeded(self):
        c = small(env={"dimension": 3, "noise_scale": 0.3, "seed": 4})
        rows_a, rows_b, rows_c = [], [], []
        runner.simulate(c, rows_a.append)
        runner.simulate(c, rows_b.append)
        runner.simulate(c.with_overrides(seed=1), rows_c.append)
        assert [r.loss for r in rows_a] == [r.loss for r in rows_b]
        assert [r.loss for r in rows_a] != [r.loss for r in rows_c]

    def test_loss_scale_leaves_cas_trace(self):
        rows_a, rows_b = [], []
        runner.simulate(small(horizon=500), rows_a.append)
        runner.simulate(small(horizon=500, env={"dimension": 3, "conflict": 0.7, "seed": 4,
                                                "loss_scale": 1000.0}), rows_b.append)
        assert [r.arm for r in rows_a] == [r.arm for r in rows_b]


class TestRunArtifacts:
    def test_files_and_reruns(self, tmp_path):
        c = small()
        s = runner.run(c, tmp_path / "a")
        runner.run(c, tmp_path / "b")
        for name in s.artifacts:
            assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()
        rows = read_trace(tmp_path / "a" / runner.TRACE_FILE)
        assert rows[0] == runner.trace_header(4)
        assert len(rows) == 201 and [r[0] for r in rows[1:4]] == ["1", "2", "3"]
        summary = json.loads((tmp_path / "a" / runner.SUMMARY_FILE).read_text())
        assert list(summary)[:3] == ["policy", "seed", "horizon"]
        assert "wall_seconds" not in summary
        echoed = cfg.load(tmp_path / "a" / runner.CONFIG_FILE)
        assert echoed == c

    def test_avg_trace_arm(self, tmp_path):
        runner.run(small(policy="avg", horizon=5), tmp_path / "o")
        rows = read_trace(tmp_path / "o" / runner.TRACE_FILE)
        assert {r[1] for r in rows[1:]} == {"-1"} and rows[1][3] == ""

    def test_zero_horizon_trace(self, tmp_path):
        runner.run(small(horizon=0), tmp_path / "o")
        assert len(read_trace(tmp_path / "o" / runner.TRACE_FILE)) == 1

    def test_replaces_existing(self, tmp_path):
        out = tmp_path / "o"
        out.mkdir()
        (out / "stale.txt").write_text("x")
        runner.run(small(horizon=3), out)
        assert not (out / "stale.txt").exists()
        assert sorted(p.name for p in tmp_path.iterdir()) == ["o"]

    def test_no_partial_output_on_failure(self, tmp_path):
        c = small(env={"dimension": 3, "learning_rate": 1e3, "seed": 4})
        with np.errstate(all="ignore"), pytest.raises(DivergenceError):
            runner.run(c, tmp_path / "o")
        assert list(tmp_path.iterdir()) == []

    def test_write_failure_leaves_old_output(self, tmp_path):
        out = tmp_path / "o"
        runner.write_atomically(out, {"a.txt": "old"})
        with pytest.raises(TypeError):
            runner.write_atomically(out, {"a.txt": "new", "b.txt": None})
        assert (out / "a.txt").read_text() == "old"
        assert sorted(p.name for p in tmp_path.iterdir()) == ["o"]


class TestCompare:
    def test_paired_rows(self):
        rows = runner.compare([small(policy="cas"), small(policy="sat")], repeats=3)
        assert [r.label for r in rows] == ["cas", "sat"]
        assert all(r.repeats == 3 and r.std >= 0 for r in rows)
        text = runner.comparison_text(rows)
        assert len(text.splitlines()) == 3 and "±" in text
        assert runner.comparison_csv(rows).splitlines()[0] == ",".join(runner.COMPARE_HEADER)

    def test_single_repeat_zero_std(self):
        rows = runner.compare([small(policy="order"), small(policy="avg", label="mean")], repeats=1)
        assert [r.std for r in rows] == [0.0, 0.0] and rows[1].label == "mean"
        assert rows[1].grad_evals == 4 * rows[0].grad_evals

    def test_noiseless_deterministic_policy(self):
        rows = runner.compare([small(policy="order"), small(policy="order", label="again")], repeats=3)
        assert rows[0].std == pytest.approx(0.0, abs=1e-15) and rows[0].mean == rows[1].mean

    def test_mismatched_env(self):
        with pytest.raises(ValueError, match="different environment"):
            runner.compare([small(), small(env={"dimension": 3, "conflict": 0.2, "seed": 4})])
        with pytest.raises(ValueError):
            runner.compare([small()])
