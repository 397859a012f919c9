import io

import numpy as np
import pytest

from iterinv.errors import EmptyData, InvalidInput
from iterinv.intent import EmbedConfig, embed_many
from iterinv.itin import (REPORT_COLUMNS, BufferEntry, ItinConfig, ReplayBuffer, SteeringSet, cross_evaluate,
                          make_split, probe_mse, run_itin, sample_batch, steering_size_sweep, write_report_csv,
                          write_table_csv, zero_policy_mse)
from iterinv.numkit import RngStream
from iterinv.particle import EnvConfig

SMALL = dict(batch_size=16, buffer_multiplier=4, iterations=4)


@pytest.fixture(scope="module")
def small_env():
    return EnvConfig(horizon=16)


@pytest.fixture(scope="module")
def split(small_env):
    embed_cfg = EmbedConfig(keyframes=5, c_max=small_env.c_max)
    steer, probe = make_split("splines", 20, 10, small_env, embed_cfg, seed=0)
    return steer, probe, embed_cfg


class TestConfig:
    def test_defaults(self, env):
        cfg = ItinConfig()
        assert cfg.capacity == 64 * 40
        assert cfg.noise_for(env) == 0.5

    @pytest.mark.parametrize("kw", [{"steering_ratio": 1.5}, {"steering_ratio": -0.1}, {"batch_size": 0},
                                    {"noise_scale": -1.0}, {"iterations": -1}])
    def test_rejects(self, kw):
        with pytest.raises(InvalidInput):
            ItinConfig(**kw)


class TestSampleBatch:
    def test_split_is_floor_alpha_n(self):
        steer = SteeringSet(np.ones((5, 2)))
        prev = np.zeros((7, 2))
        batch, sources = sample_batch(steer, prev, ItinConfig(batch_size=10, steering_ratio=0.35), RngStream(0))
        assert sum(src == "steer" for src, _ in sources) == 3
        assert len(batch) == 10
        np.testing.assert_array_equal(batch[:3], 1.0)
        np.testing.assert_array_equal(batch[3:], 0.0)

    def test_fallbacks(self):
        cfg = ItinConfig(batch_size=6, steering_ratio=0.5)
        _, src = sample_batch(SteeringSet(np.empty((0, 2))), np.zeros((3, 2)), cfg, RngStream(0))
        assert all(s == "prev" for s, _ in src)
        _, src = sample_batch(SteeringSet(np.ones((3, 2))), np.empty((0, 2)), cfg, RngStream(0))
        assert all(s == "steer" for s, _ in src)
        with pytest.raises(EmptyData):
            sample_batch(SteeringSet(np.empty((0, 2))), np.empty((0, 2)), cfg, RngStream(0))

    def test_ratio_extremes(self):
        steer = SteeringSet(np.ones((3, 2)))
        prev = np.zeros((3, 2))
        _, src = sample_batch(steer, prev, ItinConfig(batch_size=8, steering_ratio=0.0), RngStream(0))
        assert all(s == "prev" for s, _ in src)
        _, src = sample_batch(steer, prev, ItinConfig(batch_size=8, steering_ratio=1.0), RngStream(0))
        assert all(s == "steer" for s, _ in src)


class TestBuffer:
    def test_fifo_eviction(self):
        buf = ReplayBuffer(3)
        for i in range(5):
            buf.push(BufferEntry(np.array([i]), np.zeros((2, 4)), np.zeros((1, 2)), ("rollout", i, 0, None)))
        assert len(buf) == 3
        assert [e.origin[1] for e in buf.entries] == [2, 3, 4]
        z, s, a = buf.arrays()
        assert z.shape == (3, 1) and s.shape == (3, 2, 4) and a.shape == (3, 1, 2)

    def test_capacity(self):
        with pytest.raises(InvalidInput):
            ReplayBuffer(0)


class TestSteeringSet:
    def test_read_only(self):
        steer = SteeringSet(np.zeros((2, 3)))
        with pytest.raises(ValueError):
            steer.intents[0, 0] = 1.0


class TestRun:
    def test_improves_over_zero_policy(self, split, small_env):
        steer, probe, embed_cfg = split
        report = run_itin(steer, ItinConfig(**SMALL), small_env, probe, embed_cfg)
        assert report.baseline_probe_mse == pytest.approx(zero_policy_mse(probe))
        assert report.final_probe_mse < report.baseline_probe_mse
        assert len(report.per_iteration) == 4

    def test_buffer_holds_relabeled_rollouts(self, split, small_env):
        steer, probe, embed_cfg = split
        report = run_itin(steer, ItinConfig(**SMALL), small_env, probe, embed_cfg)
        state = report.final_state
        assert len(state.buffer) == 64
        z, s, _ = state.buffer.arrays()
        np.testing.assert_array_equal(z, embed_many(s, embed_cfg))
        # oldest iteration has been evicted once capacity is reached
        assert {e.origin[1] for e in state.buffer.entries} == {0, 1, 2, 3}

    def test_probe_isolation(self, split, small_env):
        steer, probe, embed_cfg = split
        report = run_itin(steer, ItinConfig(**SMALL), small_env, probe, embed_cfg)
        probe_ids = {id(t) for _, t in probe}
        probe_z = {tuple(z) for z, _ in probe}
        for e in report.final_state.buffer.entries:
            assert e.origin[0] == "rollout"
            assert id(e.states) not in probe_ids
            src = e.origin[3]
            assert src[0] in ("steer", "prev")
        assert not probe_z & {tuple(z) for z in steer.intents}

    def test_deterministic(self, split, small_env):
        steer, probe, embed_cfg = split
        a = run_itin(steer, ItinConfig(**SMALL), small_env, probe, embed_cfg)
        b = run_itin(steer, ItinConfig(**SMALL), small_env, probe, embed_cfg)
        np.testing.assert_array_equal(a.final_policy.weights, b.final_policy.weights)
        assert a.per_iteration == b.per_iteration

    def test_seed_changes_result(self, split, small_env):
        steer, probe, embed_cfg = split
        a = run_itin(steer, ItinConfig(**SMALL), small_env, probe, embed_cfg)
        b = run_itin(steer, ItinConfig(seed=1, **SMALL), small_env, probe, embed_cfg)
        assert not np.array_equal(a.final_policy.weights, b.final_policy.weights)

    def test_no_steering_runs(self, split, small_env):
        _, probe, embed_cfg = split
        report = run_itin(SteeringSet(np.empty((0, embed_cfg.dim))), ItinConfig(**SMALL), small_env, probe,
                          embed_cfg)
        assert np.isfinite(report.final_probe_mse)

    def test_zero_iterations(self, split, small_env):
        steer, probe, embed_cfg = split
        report = run_itin(steer, ItinConfig(batch_size=4, iterations=0), small_env, probe, embed_cfg)
        assert report.final_probe_mse == report.baseline_probe_mse

    def test_report_csv(self, split, small_env):
        steer, probe, embed_cfg = split
        report = run_itin(steer, ItinConfig(**SMALL), small_env, probe, embed_cfg)
        buf = io.StringIO()
        write_report_csv(report, buf)
        lines = buf.getvalue().splitlines()
        assert lines[0].split(",") == list(REPORT_COLUMNS)
        assert len(lines) == 5


class TestExperiments:
    def test_split_is_disjoint(self, small_env):
        embed_cfg = EmbedConfig(keyframes=5, c_max=small_env.c_max)
        steer, probe = make_split("deceleration", 8, 4, small_env, embed_cfg, seed=2)
        assert len(steer) == 8 and len(probe) == 4
        steer_rows = {tuple(z) for z in steer.intents}
        assert all(tuple(z) not in steer_rows for z, _ in probe)

    def test_cross_evaluate_layout(self, split, small_env):
        steer, probe, embed_cfg = split
        pol = run_itin(steer, ItinConfig(**SMALL), small_env, probe, embed_cfg).final_policy
        table = cross_evaluate({"p": pol}, {"a": probe, "b": probe[:3]}, small_env)
        assert set(table) == {"a", "b"} and set(table["a"]) == {"p"}
        assert table["a"]["p"] == pytest.approx(probe_mse(pol, probe, small_env))
        buf = io.StringIO()
        write_table_csv(table, buf)
        assert buf.getvalue().splitlines()[0] == "test_dataset,p"

    def test_sweep_threads_do_not_change_results(self, small_env):
        embed_cfg = EmbedConfig(keyframes=5, c_max=small_env.c_max)
        kw = dict(sizes=[0, 5], dataset="splines", cfg=ItinConfig(batch_size=8, iterations=2), env=small_env,
                  embed_cfg=embed_cfg, seeds=[0, 1], probe_size=5)
        assert steering_size_sweep(**kw, threads=1) == steering_size_sweep(**kw, threads=2)

    def test_sweep_needs_sizes(self, small_env):
        with pytest.raises(InvalidInput):
            steering_size_sweep([], "splines", ItinConfig(), small_env)


class TestFixedPoint:
    def test_perfect_policy_is_preserved_without_noise(self, small_env):
        from iterinv.itin import ItinState, feature_spec_for, itin_iteration, probe_mse
        from iterinv.policy import fit_trajectories

        embed_cfg = EmbedConfig(keyframes=5, c_max=small_env.c_max)
        steer, probe = make_split("splines", 10, 10, small_env, embed_cfg, seed=3)
        # fewer trajectories than per-step parameters: the fit interpolates every reference
        z = np.stack([zz for zz, _ in probe])
        states = np.stack([t.states for _, t in probe])
        actions = np.stack([t.actions for _, t in probe])
        spec = feature_spec_for(small_env, embed_cfg)
        policy = fit_trajectories(z, states, actions, spec, ridge=1e-12)
        assert probe_mse(policy, probe, small_env) < 1e-6

        cfg = ItinConfig(batch_size=10, steering_ratio=0.5, noise_scale=0.0, buffer_multiplier=2, ridge=1e-12)
        buffer = ReplayBuffer(cfg.capacity)
        # the buffer already holds the data the perfect policy was fit on
        for i in range(len(z)):
            buffer.push(BufferEntry(z[i], states[i], actions[i], ("rollout", -1, i, ("steer", i))))
        state = ItinState(policy, buffer, z.copy())
        metrics = itin_iteration(state, SteeringSet(z), cfg, small_env, embed_cfg, RngStream(0))
        assert metrics["train_action_mse"] < 1e-8
        assert probe_mse(state.policy, probe, small_env) < 1e-6
