import math
import warnings

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from videoresampler.analysis import (
    ProbeInvalidWarning,
    SweepGrid,
    SweepSettings,
    ZeroingSpec,
    export_heatmap,
    forbidden_cells,
    load_heatmap_csv,
    redundancy_index,
    run_sweep,
    zeroing_probe,
)
from videoresampler.errors import AttentionUnavailable, ConfigurationError
from videoresampler.model import ModelConfig, ToyModel
from videoresampler.resampler import token_budget
from videoresampler.tasks import SyntheticTask, generate_task
from videoresampler.train import FreezePlan, TrainConfig, run_stage


def toy(method="group", groups=4, **kw):
    task = SyntheticTask(**kw.pop("task", {}))
    return ToyModel(ModelConfig.build(task, method=method, groups=groups, **kw))


def read_pgm(path):
    tokens = open(path).read().split()
    assert tokens[0] == "P2"
    w, h, maxval = map(int, tokens[1:4])
    assert maxval == 255
    return np.array(tokens[4:], dtype=int).reshape(h, w)


class TestHeatmap:
    def test_group_blocks(self, tmp_path):
        model = toy("group", groups=4)
        x, _ = generate_task(model.config.task, 0, 1)
        out = model.resample(x)
        art = export_heatmap(out, tmp_path / "g")[0]
        m = load_heatmap_csv(art.csv_path)
        forbidden = forbidden_cells(out)
        assert forbidden.sum() == 8 * 16 - 4 * (2 * 4)
        assert (m[forbidden] == 0.0).all()
        assert np.abs(m.sum(axis=1) - 1).max() <= 1e-10
        pgm = read_pgm(art.pgm_path)
        assert pgm.shape == (8, 16)
        assert (pgm[forbidden] == 0).all()
        assert (pgm.max(axis=1) == 255).all()
        # Row maxima sit inside each query's own block.
        for (q0, q1), (s0, s1) in zip(out.query_ranges, out.span_ranges):
            assert (pgm[q0:q1, s0:s1].max(axis=1) == 255).all()

    def test_image_level_blocks(self, tmp_path):
        model = toy("image", groups=1)
        x, _ = generate_task(model.config.task, 0, 1)
        out = model.resample(x)
        m = load_heatmap_csv(export_heatmap(out, tmp_path / "i")[0].csv_path)
        assert (m[forbidden_cells(out)] == 0.0).all()
        assert out.query_ranges == [(0, 2), (2, 4), (4, 6), (6, 8)]

    def test_naive_has_no_forced_zeros(self, tmp_path):
        model = toy("naive", groups=1)
        x, _ = generate_task(model.config.task, 0, 1)
        out = model.resample(x)
        assert not forbidden_cells(out).any()
        m = load_heatmap_csv(export_heatmap(out, tmp_path / "n")[0].csv_path)
        assert (m > 0).all()

    def test_csv_round_trip_is_exact(self, tmp_path):
        model = toy("group", groups=2, heads=2)
        x, _ = generate_task(model.config.task, 1, 3)
        out = model.resample(x)
        arts = export_heatmap(out, tmp_path / "sub" / "h", per_head=True, sample=2)
        assert [a.csv_path.name for a in arts] == ["h.csv", "h.h0.csv", "h.h1.csv"]
        assert np.abs(load_heatmap_csv(arts[0].csv_path) - out.attention[2]).max() <= 1e-15
        for h, a in enumerate(arts[1:]):
            assert np.array_equal(load_heatmap_csv(a.csv_path), out.head_attention[2, h])

    def test_annotations(self, tmp_path):
        model = toy("group", groups=2)
        x, _ = generate_task(model.config.task, 0, 1)
        art = export_heatmap(model.resample(x), tmp_path / "a")[0]
        lines = art.annotations_path.read_text().splitlines()
        assert "group 1 queries 4:8 tokens 8:16" in lines
        assert "frame 3 tokens 12:16" in lines

    def test_dropped_attention(self, tmp_path):
        model = toy("group", groups=2, retain_attention=False)
        x, _ = generate_task(model.config.task, 0, 1)
        with pytest.raises(AttentionUnavailable):
            export_heatmap(model.resample(x), tmp_path / "x")


class TestZeroingSpec:
    def test_count_rounds_half_up(self):
        assert ZeroingSpec(0.5).count(3) == 2
        assert ZeroingSpec(0.25).count(8) == 2
        assert ZeroingSpec(0.75).count(8) == 6
        assert ZeroingSpec(1.0).count(8) == 8

    def test_selections(self):
        assert ZeroingSpec(0.25, "first").keep_mask(8).tolist() == [0, 0, 1, 1, 1, 1, 1, 1]
        assert ZeroingSpec(0.25, "last").keep_mask(8).tolist() == [1, 1, 1, 1, 1, 1, 0, 0]
        a = ZeroingSpec(0.5, "random", 3).keep_mask(16)
        assert np.array_equal(a, ZeroingSpec(0.5, "random", 3).keep_mask(16))
        assert a.sum() == 8
        assert any(not np.array_equal(a, ZeroingSpec(0.5, "random", s).keep_mask(16)) for s in range(4, 10))

    def test_invalid(self):
        with pytest.raises(ConfigurationError):
            ZeroingSpec(1.5)
        with pytest.raises(ConfigurationError):
            ZeroingSpec(0.5, "middle")


@pytest.fixture(scope="module")
def trained():
    model = toy("group", groups=2)
    run_stage(model, FreezePlan("pretrain"), TrainConfig(steps_per_epoch=300))
    run_stage(model, FreezePlan("finetune"), TrainConfig.desk("finetune", steps_per_epoch=300))
    return model


class TestProbe:
    def test_fraction_zero_is_exactly_one(self, trained):
        curve = zeroing_probe(trained, None, [0, 0.5, 1], seeds=[0, 1, 2], n_samples=300)
        assert curve.retention_mean[0] == 1.0 and curve.retention_sd[0] == 0.0
        assert curve.at(0.0) == (1.0, 0.0)

    def test_full_zeroing_is_chance(self, trained):
        n = 1000
        curve = zeroing_probe(trained, None, [0, 1], seeds=[0, 1, 2], n_samples=n)
        sigma = math.sqrt(0.25 * 0.75 / n)
        for acc in curve.per_seed_accuracy[1]:
            assert acc <= 0.25 + 3 * sigma

    def test_full_zeroing_predicts_a_constant(self, trained):
        x, _ = generate_task(trained.config.task, 0, 50)
        pred = trained.predict(x, np.zeros(8))
        assert (pred == pred[0]).all()

    def test_deterministic(self, trained):
        a = zeroing_probe(trained, None, [0, 0.25, 0.75], seeds=[4, 5], n_samples=200)
        b = zeroing_probe(trained, None, [0, 0.25, 0.75], seeds=[4, 5], n_samples=200)
        assert a == b

    def test_needs_zero_fraction(self, trained):
        with pytest.raises(ConfigurationError):
            zeroing_probe(trained, None, [0.5], seeds=[0])

    def test_untrained_warns(self):
        with pytest.warns(ProbeInvalidWarning):
            zeroing_probe(toy(), None, [0, 1], seeds=[0], n_samples=100)

    def test_trained_does_not_warn(self, trained):
        with warnings.catch_warnings():
            warnings.simplefilter("error")
            zeroing_probe(trained, None, [0], seeds=[0], n_samples=50)


class TestRedundancyIndex:
    fr = (0.0, 0.25, 0.5, 0.75, 1.0)

    def curve(self, values):
        return dict(zip(self.fr, values))

    def test_constant(self):
        assert redundancy_index(self.curve([1, 1, 1, 1, 1])) == 1.0

    def test_linear(self):
        assert redundancy_index(self.curve([1 - f for f in self.fr])) == 0.5

    def test_hand_trapezoid(self):
        # 0.25 * ((1+.95)/2 + (.95+.9)/2 + (.9+.5)/2 + (.5+.1)/2) = 0.25 * 2.9
        assert abs(redundancy_index(self.curve([1, 0.95, 0.9, 0.5, 0.1])) - 0.725) <= 1e-12

    def test_missing_fraction(self):
        with pytest.raises(ValueError):
            redundancy_index({0.0: 1, 0.5: 0.5, 1.0: 0})

    def test_accepts_retention_curve(self, trained):
        curve = zeroing_probe(trained, None, self.fr, seeds=[0, 1], n_samples=200)
        assert 0.0 <= redundancy_index(curve) <= 1.0

    @settings(max_examples=200, deadline=None)
    @given(st.lists(st.floats(0, 1), min_size=5, max_size=5), st.lists(st.floats(0, 1), min_size=5, max_size=5))
    def test_monotone_under_dominance(self, a, bump):
        b = [min(1.0, x + y) for x, y in zip(a, bump)]
        ia, ib = redundancy_index(self.curve(a)), redundancy_index(self.curve(b))
        assert ib >= ia
        assert 0.0 <= ia <= 1.0


class TestSweep:
    def settings(self, frames_tokens=1, steps=2):
        task = SyntheticTask(tokens_per_frame=frames_tokens)
        train = {"pretrain": TrainConfig(steps_per_epoch=steps, batch_size=4, eval_samples=8)}
        return SweepSettings(task, {"d_model": 8, "d_vis": 8}, ("pretrain",), train, eval_samples=20)

    def test_grid_points(self):
        assert SweepGrid((4,), (1, 2), (8, 16)).points() == [(4, 8, 1), (4, 8, 2), (4, 16, 1), (4, 16, 2)]
        assert SweepGrid((4,), (1, 2), queries_per_group=(4,)).points() == [(4, 4, 1), (4, 8, 2)]
        with pytest.raises(ConfigurationError):
            SweepGrid((4,), (1,))

    def test_large_grid_flags_and_skips(self):
        rows = run_sweep(SweepGrid((16,), (1, 3, 16), (128,)), self.settings())
        by_m = {r["M"]: r for r in rows}
        assert by_m[3]["status"] == "skipped" and "divisible" in by_m[3]["reason"]
        assert by_m[16]["image_equivalent"] is True and by_m[16]["status"] == "ok"
        assert by_m[1]["image_equivalent"] is False
        for r in rows:
            if r["status"] == "ok":
                assert r["budget"] == token_budget("group", r["N"], 1, total_queries=r["Q_total"]).queries_out_count
                assert r["q_per_group"] == r["Q_total"] // r["M"]

    def test_complete_and_worker_invariant(self):
        grid = SweepGrid((2, 4), (1, 2, 3), (6, 8))
        serial = run_sweep(grid, self.settings(2))
        parallel = run_sweep(grid, self.settings(2), workers=2)
        keys = [(r["N"], r["Q_total"], r["M"]) for r in serial]
        assert keys == grid.points() and len(set(keys)) == len(keys)
        strip = lambda rows: [{k: v for k, v in r.items() if k != "wall_time"} for r in rows]
        assert strip(serial) == strip(parallel)
