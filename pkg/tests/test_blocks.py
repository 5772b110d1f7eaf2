import numpy as np
import pytest

from lfsr import scan as S
from lfsr import tensor as T
from lfsr.blocks import (
    CascadeBlock,
    DualAnchorFusion,
    AngularEmbedding,
    Upsampler,
    VSSMStage,
    make_grid,
)
from lfsr.lightfield import Rep
from lfsr.scan import PATH_PRESETS, QUAD_PATHS
from lfsr.tensor import ShapeError, Tensor


def feature(shape, seed=0):
    return Tensor(np.random.default_rng(seed).uniform(-1, 1, shape).astype(np.float32))


def randomize(named_params, seed, scale=0.3):
    rng = np.random.default_rng(seed)
    for _, p in named_params:
        p.assign(rng.uniform(-scale, scale, size=p.shape).astype(np.float32))


def make_stage(kind, paths=None, c=6, ci=6, n=2, seed=0, epi_mode="panoramic"):
    rng = np.random.default_rng(seed)
    return VSSMStage(kind, c, ci, n, paths or QUAD_PATHS, rng, "st", epi_mode=epi_mode)


def test_stage_zero_output_projection_is_identity():
    for kind in Rep:
        stage = make_stage(kind, seed=1)
        f = feature((2, 3, 4, 5, 6), seed=2)
        out = stage(f)
        assert np.array_equal(out.data, f.data), kind


def test_stage_shape_preserving_all_kinds_and_modes():
    for kind in Rep:
        for mode in ("panoramic", "stacked", "isolated"):
            stage = make_stage(kind, seed=3, epi_mode=mode)
            randomize(stage.named(), seed=4)
            f = feature((2, 2, 3, 4, 6), seed=5)
            assert stage(f).shape == f.shape
    # batched features too
    stage = make_stage(Rep.VEPI, seed=6)
    randomize(stage.named(), seed=7)
    fb = feature((2, 2, 2, 3, 4, 6), seed=8)
    assert stage(fb).shape == fb.shape


def test_epi_modes_same_token_and_param_count():
    counts = {}
    for mode in ("panoramic", "stacked", "isolated"):
        stage = make_stage(Rep.HEPI, seed=9, epi_mode=mode)
        counts[mode] = sum(p.size for _, p in stage.named())
        f = feature((2, 2, 4, 3, 6), seed=10)
        grid, restore = make_grid(f, Rep.HEPI, mode)
        data = np.asarray(grid.data.data if isinstance(grid.data, Tensor) else grid.data)
        assert data.size == f.size
        back = restore(grid.data)
        assert np.array_equal(np.asarray(back.data), f.data)
    assert len(set(counts.values())) == 1


def test_macpi_degenerate_grid_equals_single_token_stage():
    # U = V = 1: macro-pixel grids are 1x1, so the stage acts per spatial site
    stage = make_stage(Rep.MACPI, c=4, ci=4, n=2, seed=11)
    randomize(stage.named(), seed=12)
    f = feature((1, 1, 3, 4, 4), seed=13)
    out = np.asarray(stage(f).data)

    # closed form on a 1-token sequence per site, replicated through the same ops
    x = f.data.reshape(12, 1, 1, 4)
    z = T.layer_norm(Tensor(x), stage.norm_gamma, stage.norm_beta)
    p = stage.in_proj(z)
    content, gate = p[..., :4], p[..., 4:]
    content = T.silu(stage.dwconv(content))
    seq = T.reshape(content, (12, 1, 4))
    acc = None
    for path in stage.core.paths:
        y = S.scan_tokens(seq, stage.core.directions[path])
        acc = y if acc is None else T.add(acc, y)
    y = T.mul(T.reshape(acc, (12, 1, 1, 4)), T.silu(gate))
    expect = (f.data + stage.out_proj(y).data.reshape(1, 1, 3, 4, 4))
    assert np.allclose(out, expect, atol=1e-6)


def test_stage_batch_permutation_equivariance():
    stage = make_stage(Rep.SAI, c=5, ci=5, n=2, seed=14)
    randomize(stage.named(), seed=15)
    f = np.random.default_rng(16).uniform(-1, 1, (2, 2, 2, 4, 3, 5)).astype(np.float32)
    out = np.asarray(stage(Tensor(f)).data)
    swapped = np.asarray(stage(Tensor(f[::-1].copy())).data)
    assert np.array_equal(out, swapped[::-1])


def make_block(seed=17, **kw):
    rng = np.random.default_rng(seed)
    return CascadeBlock(5, 5, 2, dict(PATH_PRESETS), rng, "blk", **kw)


def test_block_zero_init_identity():
    blk = make_block()
    f = feature((2, 2, 3, 4, 5), seed=18)
    assert np.array_equal(blk(f).data, f.data)


def test_block_cross_view_information_flow():
    blk = make_block(seed=19)
    randomize(blk.named(), seed=20)
    f = np.random.default_rng(21).uniform(0, 1, (3, 3, 4, 4, 5)).astype(np.float32)
    base = np.asarray(blk(Tensor(f)).data)
    f2 = f.copy()
    # single channel so the per-token norm cannot cancel the shift
    f2[1, 1, 2, 2, 0] += 0.5
    out = np.asarray(blk(Tensor(f2)).data)
    delta = np.abs(out - base)
    other_views = delta.copy()
    other_views[1, 1] = 0.0
    assert other_views.max() > 1e-6, "perturbation must reach other views"


def test_block_without_epi_equals_sai_mac_composition():
    blk = make_block(seed=22, use_epi=False)
    randomize(blk.named(), seed=23)
    f = feature((2, 2, 3, 3, 5), seed=24)
    out = np.asarray(blk(f).data)
    expect = np.asarray(blk.mac(blk.sai(f)).data)
    assert np.array_equal(out, expect)


def test_block_parallel_epi_combination():
    blk = make_block(seed=25, epi_order="parallel")
    randomize(blk.named(), seed=26)
    f = feature((2, 2, 3, 3, 5), seed=27)
    out = np.asarray(blk(f).data)
    mid = blk.mac(blk.sai(f))
    expect = (
        np.asarray(blk.hepi(mid).data)
        + np.asarray(blk.vepi(mid).data)
        - np.asarray(mid.data)
    )
    assert np.allclose(out, expect, atol=1e-6)


# ---------------------------------------------------------------------------
# dual-anchor fusion


def make_fusion(m, c=4, seed=28):
    return DualAnchorFusion(m, c, np.random.default_rng(seed), "daa")


def test_fusion_m2_has_no_intermediate_terms():
    fus = make_fusion(2)
    f1, f2 = feature((1, 1, 2, 2, 4), 29), feature((1, 1, 2, 2, 4), 30)
    fus.w_spatial.assign(np.array([0.7], dtype=np.float32))
    fus.w_geometric.assign(np.array([-1.3], dtype=np.float32))
    fs, fg = fus.anchors([f1, f2])
    assert np.allclose(fs.data, 0.7 * f1.data, atol=1e-7)
    assert np.allclose(fg.data, -1.3 * f2.data, atol=1e-7)


def test_fusion_init_uses_only_first_and_last():
    fus = make_fusion(4)
    feats = [feature((1, 1, 2, 2, 4), 31 + i) for i in range(4)]
    fs, fg = fus.anchors(feats)
    assert np.array_equal(fs.data, feats[0].data)
    assert np.array_equal(fg.data, feats[-1].data)


def test_fusion_anchor_linearity_in_weights():
    fus = make_fusion(3)
    rng = np.random.default_rng(35)
    fus.w_spatial.assign(rng.uniform(0.1, 1.0, 2).astype(np.float32))
    fus.w_geometric.assign(rng.uniform(0.1, 1.0, 2).astype(np.float32))
    feats = [feature((1, 1, 2, 2, 4), 36 + i) for i in range(3)]
    fs1, fg1 = fus.anchors(feats)
    fus.w_spatial.assign(2.0 * fus.w_spatial.data)
    fus.w_geometric.assign(2.0 * fus.w_geometric.data)
    fs2, fg2 = fus.anchors(feats)
    assert np.allclose(fs2.data, 2.0 * fs1.data, atol=1e-6)
    assert np.allclose(fg2.data, 2.0 * fg1.data, atol=1e-6)


def test_fusion_weight_gradient_matches_fd():
    fus = make_fusion(3, seed=37)
    randomize(fus.named(), seed=38, scale=0.4)
    feats_np = [np.random.default_rng(40 + i).uniform(-1, 1, (1, 1, 2, 2, 4)) for i in range(3)]
    target = np.random.default_rng(44).uniform(-1, 1, (1, 1, 2, 2, 4))

    def fn():
        feats = [Tensor(f) for f in feats_np]
        out = fus(feats)
        return T.mean(T.abs_(T.sub(out, Tensor(target))))

    report = T.grad_check(fn, [fus.w_spatial, fus.w_geometric], tolerance=1e-3)
    assert report.passed, str(report)


def test_fusion_rejects_single_feature():
    with pytest.raises(ShapeError, match="at least 2"):
        DualAnchorFusion(1, 4, np.random.default_rng(45), "daa")


def test_fusion_rejects_wrong_depth():
    fus = make_fusion(3)
    with pytest.raises(ShapeError, match="expected 3"):
        fus.anchors([feature((1, 1, 2, 2, 4), 46)] * 2)


# ---------------------------------------------------------------------------
# embedding and upsampler


def test_angular_embedding_broadcasts_per_view():
    emb = AngularEmbedding(2, 3, 4, np.random.default_rng(47), "ang")
    f = feature((2, 3, 5, 6, 4), seed=48)
    out = np.asarray(emb(f).data)
    for u in range(2):
        for v in range(3):
            assert np.allclose(
                out[u, v] - f.data[u, v], emb.table.data[u, v], atol=1e-7
            )


def test_upsampler_shape_contract():
    for alpha in (2, 4):
        up = Upsampler(4, alpha, np.random.default_rng(49), "up")
        f = feature((1, 1, 4, 4, 4), seed=50)
        out = up(f)
        assert out.shape == (1, 1, 4 * alpha, 4 * alpha, 1)


def test_upsampler_zero_feature_zero_residual():
    up = Upsampler(4, 2, np.random.default_rng(51), "up")
    f = Tensor(np.zeros((2, 2, 3, 3, 4), dtype=np.float32))
    assert np.all(up(f).data == 0.0)


def test_upsampler_rejects_bad_factor():
    with pytest.raises(ShapeError, match="factor"):
        Upsampler(4, 3, np.random.default_rng(52), "up")


def test_upsampler_pixel_placement():
    # one-hot conv weights turn the head into a pure pixel shuffle: verify
    # the placement formula end to end on a 2x2 grid
    up = Upsampler(1, 2, np.random.default_rng(53), "up")
    w = np.zeros((3, 3, 1, 4), dtype=np.float32)
    w[1, 1, 0, :] = [1.0, 2.0, 3.0, 4.0]
    up.expand.weight.assign(w)
    w2 = np.zeros((3, 3, 1, 1), dtype=np.float32)
    w2[1, 1, 0, 0] = 1.0
    up.to_image.weight.assign(w2)
    f = Tensor(np.array([[1.0, 10.0], [100.0, 1000.0]], dtype=np.float32).reshape(1, 1, 2, 2, 1))
    out = np.asarray(up(f).data)[0, 0, :, :, 0]
    # channel k = r*2 + s scales by (k+1) and lands at (2h + r, 2w + s)
    expect = np.array(
        [[1.0, 2.0, 10.0, 20.0],
         [3.0, 4.0, 30.0, 40.0],
         [100.0, 200.0, 1000.0, 2000.0],
         [300.0, 400.0, 3000.0, 4000.0]],
        dtype=np.float32,
    )
    assert np.array_equal(out, expect)
