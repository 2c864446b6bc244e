import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from videoresampler.errors import CapacityError, ConfigurationError, PlanError
from videoresampler.gradcheck import finite_diff_check
from videoresampler.nn import Linear
from videoresampler.resampler import (
    FeatureSequence,
    GroupPlan,
    Resampler,
    ResamplerConfig,
    budget_table,
    group_resample,
    image_level_resample,
    naive_video_resample,
    project,
    token_budget,
)
from videoresampler.tensor import Tensor


def make(seed=0, frames=4, tokens=3, d_vis=5, d_model=8, queries=8, groups=2, pe="learned", batch=(), **kw):
    cfg = ResamplerConfig(d_vis=d_vis, d_model=d_model, total_queries=queries, groups=groups, pe=pe, seed=seed, **kw)
    r = Resampler(cfg)
    x = np.random.default_rng(seed + 10_000).normal(size=batch + (frames, tokens, d_vis))
    return r, FeatureSequence(Tensor(x))


def randomize_pe(r: Resampler, seed: int) -> None:
    if r.pe.kind == "learned":
        r.pe.table.data = np.random.default_rng(seed).normal(size=r.pe.table.shape)


class TestProject:
    def test_identity_projection(self, rng):
        x = rng.normal(size=(3, 2, 4))
        out = project(FeatureSequence(x), Linear.identity(4)).data
        np.testing.assert_array_equal(out, x.reshape(6, 4))

    def test_concat_order(self):
        x = np.array([[[1.0, 2.0]], [[3.0, 4.0]]])  # N=2, T=1, d=2
        out = project(FeatureSequence(x), Linear.identity(2)).data
        assert out.tolist() == [[1.0, 2.0], [3.0, 4.0]]

    def test_concat_then_project_equals_per_frame(self, rng):
        lin = Linear(5, 7, rng)
        x = rng.normal(size=(4, 3, 5))
        whole = project(FeatureSequence(x), lin).data
        per_frame = np.concatenate([lin(Tensor(x[i])).data for i in range(4)], axis=0)
        np.testing.assert_allclose(whole, per_frame, rtol=0, atol=1e-13)

    def test_dim_mismatch(self, rng):
        with pytest.raises(ConfigurationError):
            project(FeatureSequence(rng.normal(size=(2, 2, 3))), Linear(4, 4, rng))


class TestImageLevel:
    def test_sixteen_frames_eight_each(self):
        r, seq = make(frames=16, tokens=2, queries=128)
        out = image_level_resample(seq, r, 8)
        assert out.queries_out.shape == (128, 8)
        assert out.budget.queries_out_count == 128

    def test_single_frame_equals_naive(self):
        r, seq = make(frames=1, tokens=6, queries=4)
        a = image_level_resample(seq, r, 4)
        b = naive_video_resample(seq, r)
        np.testing.assert_allclose(a.queries_out.data, b.queries_out.data, rtol=0, atol=1e-12)
        np.testing.assert_allclose(a.attention, b.attention, rtol=0, atol=1e-15)

    def test_slice_ignores_other_frames(self):
        r, seq = make(frames=2, tokens=1, queries=4)
        base = image_level_resample(seq, r, 2).queries_out.data
        x = seq.data.data.copy()
        x[1] += 3.0
        moved = image_level_resample(FeatureSequence(x), r, 2).queries_out.data
        assert np.array_equal(base[:2], moved[:2])
        assert not np.array_equal(base[2:], moved[2:])

    def test_bank_size_mismatch(self):
        r, seq = make(frames=4, queries=8)
        with pytest.raises(PlanError):
            image_level_resample(seq, r, 3)

    def test_block_structure(self):
        r, seq = make(frames=4, tokens=3, queries=8)
        attn = image_level_resample(seq, r, 2).attention
        for i in range(4):
            rows = attn[2 * i : 2 * i + 2]
            assert (np.delete(rows, np.s_[3 * i : 3 * i + 3], axis=1) == 0).all()
            np.testing.assert_allclose(rows.sum(axis=1), 1.0, atol=1e-12)


class TestNaive:
    @pytest.mark.parametrize("frames", [8, 16])
    def test_count_independent_of_frames(self, frames):
        r, seq = make(frames=frames, tokens=2, queries=128, max_len=64)
        assert naive_video_resample(seq, r).queries_out.shape == (128, 8)

    def test_rows_sum_to_one(self):
        r, seq = make()
        attn = naive_video_resample(seq, r).attention
        np.testing.assert_allclose(attn.sum(axis=1), 1.0, atol=1e-12)
        assert (attn > 0).all()

    def test_capacity(self):
        r, seq = make(frames=4, tokens=3, max_len=10)
        with pytest.raises(CapacityError):
            naive_video_resample(seq, r)

    def test_every_token_reaches_some_output(self):
        r, seq = make(frames=3, tokens=2)
        base = naive_video_resample(seq, r).queries_out.data
        for j in range(6):
            x = seq.data.data.copy()
            x.reshape(6, -1)[j] += 0.5
            moved = naive_video_resample(FeatureSequence(x), r).queries_out.data
            assert not np.array_equal(base, moved)


class TestGroup:
    def test_512_queries_16_frames_16_groups(self):
        r, seq = make(frames=16, tokens=2, queries=512, groups=16, d_model=4, max_len=32)
        plan = r.plan_for(seq)
        assert plan.queries_per_group == 32 and plan.span == 2
        assert plan.span_ranges()[3] == (6, 8)
        out = group_resample(seq, r, plan)
        assert out.queries_out.shape == (512, 4)

    def test_plan_rejects_uneven(self):
        with pytest.raises(PlanError):
            GroupPlan(groups=3, total_queries=128, seq_len=48)
        with pytest.raises(PlanError):
            GroupPlan(groups=4, total_queries=8, seq_len=6)
        with pytest.raises(PlanError):
            GroupPlan(groups=0, total_queries=8, seq_len=8)

    def test_plan_ranges_cover_sequence(self):
        plan = GroupPlan(groups=4, total_queries=8, seq_len=12)
        spans = plan.span_ranges()
        assert spans[0][0] == 0 and spans[-1][1] == 12
        assert all(a[1] == b[0] for a, b in zip(spans, spans[1:]))

    def test_align_frames_flag(self):
        # 4 frames x 3 tokens in 6 groups: spans of 2 tokens cross frame edges.
        GroupPlan.for_sequence(6, 12, 4, 3)
        with pytest.raises(PlanError):
            GroupPlan.for_sequence(6, 12, 4, 3, align_frames=True)
        GroupPlan.for_sequence(2, 12, 4, 3, align_frames=True)
        GroupPlan.for_sequence(12, 12, 4, 3, align_frames=True)

    def test_block_sparsity_exact(self):
        r, seq = make(frames=4, tokens=3, queries=8, groups=4, batch=(2,))
        out = group_resample(seq, r, r.plan_for(seq))
        mask = np.zeros((8, 12), dtype=bool)
        for (q0, q1), (s0, s1) in zip(out.query_ranges, out.span_ranges):
            mask[q0:q1, s0:s1] = True
        assert (out.attention[:, ~mask] == 0).all()
        assert (out.attention[:, mask] > 0).all()
        np.testing.assert_allclose(out.attention.sum(axis=-1), 1.0, atol=1e-12)
        assert (out.head_attention[:, :, ~mask] == 0).all()

    def test_locality_bitwise(self):
        r, seq = make(frames=4, tokens=3, queries=8, groups=4, pe="sinusoidal")
        plan = r.plan_for(seq)
        base = group_resample(seq, r, plan).queries_out.data
        x = seq.data.data.copy().reshape(12, -1)
        x[6:] += np.random.default_rng(3).normal(size=x[6:].shape)  # groups 2 and 3 only
        moved = group_resample(FeatureSequence(x.reshape(4, 3, -1)), r, plan).queries_out.data
        assert np.array_equal(base[:4], moved[:4])
        assert not np.array_equal(base[4:], moved[4:])


@pytest.mark.parametrize("pe", ["learned", "sinusoidal", "none"])
@pytest.mark.parametrize("seed", range(10))
def test_group_one_equals_naive(seed, pe):
    r, seq = make(seed=seed, frames=3, tokens=4, groups=1, pe=pe, heads=2, batch=(2,))
    randomize_pe(r, seed)
    a = group_resample(seq, r, r.plan_for(seq))
    b = naive_video_resample(seq, r)
    assert np.abs(a.queries_out.data - b.queries_out.data).max() <= 1e-12
    assert np.abs(a.attention - b.attention).max() <= 1e-12


@pytest.mark.parametrize("depth,heads", [(1, 1), (2, 2), (3, 4)])
@pytest.mark.parametrize("seed", range(5))
def test_group_frame_aligned_equals_image_level(seed, depth, heads):
    r, seq = make(seed=seed, frames=4, tokens=3, queries=8, groups=4, pe="none", depth=depth, heads=heads)
    a = group_resample(seq, r, GroupPlan.for_sequence(4, 8, 4, 3, align_frames=True))
    b = image_level_resample(seq, r, 2)
    assert np.abs(a.queries_out.data - b.queries_out.data).max() <= 1e-12
    assert np.abs(a.attention - b.attention).max() <= 1e-12
    assert np.abs(a.head_attention - b.head_attention).max() <= 1e-12


def test_position_encoding_breaks_image_equivalence():
    r, seq = make(frames=4, tokens=3, queries=8, groups=4, pe="sinusoidal")
    a = group_resample(seq, r, r.plan_for(seq)).queries_out.data
    b = image_level_resample(seq, r, 2).queries_out.data
    assert np.abs(a - b).max() > 1e-6


class TestTokenBudget:
    def test_sixteen_frames_eight_queries(self):
        assert token_budget("image", 16, 729, per_frame_queries=8).queries_out_count == 128

    @pytest.mark.parametrize("n", [8, 16, 64, 128])
    def test_video_level_fixed(self, n):
        for m in ("naive", "group"):
            assert token_budget(m, n, 4, total_queries=512).queries_out_count == 512

    def test_table_crossover(self):
        rows = budget_table([64, 128], 4, 512, 8)
        assert [(r["image"], r["group"]) for r in rows] == [(512, 512), (1024, 512)]

    def test_unknown_method(self):
        with pytest.raises(ConfigurationError):
            token_budget("pool", 4, 4, 4, 4)

    @settings(max_examples=40, deadline=None)
    @given(st.sampled_from(["image", "naive", "group"]), st.integers(1, 6), st.integers(1, 3))
    def test_outputs_follow_budget_law(self, method, frames, per_frame):
        total = frames * per_frame
        groups = frames if method == "group" else 1
        r, seq = make(frames=frames, tokens=2, d_model=4, queries=total, groups=groups, max_len=12)
        out = r(seq, method)
        assert out.queries_out.shape[-2] == out.budget.queries_out_count
        assert out.budget == token_budget(method, frames, 2, total, per_frame)


@pytest.mark.parametrize("method", ["image", "naive", "group"])
def test_resampler_gradients(method):
    r, seq = make(seed=1, frames=2, tokens=4, d_vis=8, d_model=8, queries=4, groups=2, heads=2)
    randomize_pe(r, 5)
    weights = np.random.default_rng(9).normal(size=(4, 8))
    report = finite_diff_check(lambda: (r(seq, method).queries_out * Tensor(weights)).sum(), r)
    assert report.passed, [p for p in report.params if not p.passed]
    names = {p.name for p in report.params if p.status == "checked"}
    assert {"bank.queries", "proj.weight", "layers.0.wq.weight"} <= names


def test_retain_attention_off():
    r, seq = make(retain_attention=False)
    assert r(seq).attention is None


def test_config_validation():
    with pytest.raises(ConfigurationError):
        ResamplerConfig(method="pool")
    with pytest.raises(ConfigurationError):
        ResamplerConfig(d_model=6, heads=4)
