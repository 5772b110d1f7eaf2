import os
from fractions import Fraction

import numpy as np
import pytest

from lfsr.data import (
    AUGMENT_OPS,
    FormatError,
    augment,
    export_pgm_grid,
    extract_patches,
    import_pgm_grid,
    random_patch,
    read_container,
    read_pgm,
    rgb_to_y,
    rgb_to_ycbcr,
    write_container,
    write_pgm,
    ycbcr_to_rgb,
)
from lfsr.lightfield import Rep, to_rep
from lfsr.synth import (
    LayerSpec,
    SceneSpec,
    generate,
    parse_scene_file,
    random_scene_specs,
    scene_to_text,
)


def vepi_slope_holds(lf, d):
    """Brute-force check of tile[y][v] == tile[y + d*(v'-v)][v']."""
    u_n, v_n, h_n, w_n, _ = lf.shape
    grid = np.asarray(to_rep(lf, Rep.VEPI).data)[0, :, :, 0]
    for iu in range(u_n):
        for ix in range(w_n):
            tile = grid[iu * h_n : (iu + 1) * h_n, ix * v_n : (ix + 1) * v_n]
            for v1 in range(v_n):
                for v2 in range(v_n):
                    shift = d * (v2 - v1)
                    for y in range(h_n):
                        y2 = y + shift
                        if 0 <= y2 < h_n and tile[y, v1] != tile[y2, v2]:
                            return False
    return True


def hepi_slope_holds(lf, d):
    u_n, v_n, h_n, w_n, _ = lf.shape
    grid = np.asarray(to_rep(lf, Rep.HEPI).data)[0, :, :, 0]
    for iv in range(v_n):
        for iy in range(h_n):
            tile = grid[iv * w_n : (iv + 1) * w_n, iy * u_n : (iy + 1) * u_n]
            for u1 in range(u_n):
                for u2 in range(u_n):
                    shift = d * (u2 - u1)
                    for x in range(w_n):
                        x2 = x + shift
                        if 0 <= x2 < w_n and tile[x, u1] != tile[x2, u2]:
                            return False
    return True


def noise_scene(d, seed=11, h=16, w=16):
    return SceneSpec(u=3, v=3, h=h, w=w, seed=seed,
                     layers=[LayerSpec("noise", Fraction(d))])


# ---------------------------------------------------------------------------
# container and PGM formats


def test_container_round_trip_bitwise(tmp_path):
    lf = np.random.default_rng(0).random((2, 3, 4, 5, 1)).astype(np.float32)
    path = os.path.join(tmp_path, "x.lf4d")
    write_container(path, lf, "Y")
    back, color = read_container(path)
    assert color == "Y"
    assert np.array_equal(back, lf)


def test_container_clamps_on_write(tmp_path):
    lf = np.array([[[[[-0.5], [1.5]]]]], dtype=np.float32)
    path = os.path.join(tmp_path, "c.lf4d")
    write_container(path, lf, "Y")
    back, _ = read_container(path)
    assert back.min() == 0.0 and back.max() == 1.0


def test_container_error_paths(tmp_path):
    bad = os.path.join(tmp_path, "bad.lf4d")
    with open(bad, "wb") as fh:
        fh.write(b"NOPE" + b"\x00" * 40)
    with pytest.raises(FormatError, match="magic"):
        read_container(bad)
    lf = np.zeros((1, 1, 2, 2, 1), dtype=np.float32)
    path = os.path.join(tmp_path, "t.lf4d")
    write_container(path, lf, "Y")
    blob = open(path, "rb").read()
    with open(path, "wb") as fh:
        fh.write(blob[:-4])
    with pytest.raises(FormatError, match="payload size"):
        read_container(path)
    with pytest.raises(FormatError, match="C=3"):
        write_container(os.path.join(tmp_path, "y3.lf4d"), np.zeros((1, 1, 2, 2, 3)), "RGB" if False else "Y")


def test_pgm_round_trip(tmp_path):
    img = np.random.default_rng(1).random((6, 7)).astype(np.float32)
    path = os.path.join(tmp_path, "i.pgm")
    write_pgm(path, img)
    back = read_pgm(path)
    assert back.shape == img.shape
    assert np.max(np.abs(back - img)) <= 0.5 / 65535 + 1e-7


def test_pgm_grid_export_import(tmp_path):
    lf = np.random.default_rng(2).random((2, 3, 4, 5, 1)).astype(np.float32)
    d = os.path.join(tmp_path, "grid")
    export_pgm_grid(d, lf)
    names = sorted(os.listdir(d))
    assert names == sorted(f"{u}_{v}.pgm" for u in range(2) for v in range(3))
    back = import_pgm_grid(d)
    assert back.shape == lf.shape
    assert np.max(np.abs(back - lf)) <= 0.5 / 65535 + 1e-7


def test_pgm_grid_rejects_incomplete(tmp_path):
    lf = np.random.default_rng(3).random((2, 2, 3, 3, 1)).astype(np.float32)
    d = os.path.join(tmp_path, "grid")
    export_pgm_grid(d, lf)
    os.remove(os.path.join(d, "1_1.pgm"))
    with pytest.raises(FormatError, match="incomplete"):
        import_pgm_grid(d)


def test_color_round_trip():
    rgb = np.random.default_rng(4).random((5, 6, 3))
    back = ycbcr_to_rgb(rgb_to_ycbcr(rgb))
    assert np.max(np.abs(back - rgb)) < 1e-10
    y = rgb_to_y(rgb)
    assert y.shape == (5, 6, 1)
    expect = 0.299 * rgb[..., 0] + 0.587 * rgb[..., 1] + 0.114 * rgb[..., 2]
    assert np.allclose(y[..., 0], expect)


# ---------------------------------------------------------------------------
# synthetic scenes


def test_zero_disparity_views_identical():
    lf, disp = generate(SceneSpec(u=3, v=3, h=12, w=12, seed=5,
                                  layers=[LayerSpec("checker", Fraction(0), scale=3)]))
    for u in range(3):
        for v in range(3):
            assert np.array_equal(lf[u, v], lf[1, 1])
    assert np.all(disp == 0.0)


@pytest.mark.parametrize("d", [0, 1, 2])
def test_epi_slope_relation_exact(d):
    lf, disp = generate(noise_scene(d))
    assert vepi_slope_holds(lf, d)
    assert hepi_slope_holds(lf, d)
    assert np.all(disp == d)


def test_cross_kind_composition_exposes_other_orientation():
    # round-tripping through the vertical panorama and re-tiling as the
    # horizontal one shows the same disparity in the other orientation
    from lfsr.lightfield import from_rep

    lf, _ = generate(noise_scene(1, seed=20))
    grid_v = to_rep(lf, Rep.VEPI)
    back = np.asarray(from_rep(grid_v, Rep.VEPI, (3, 3, 16, 16)))
    assert hepi_slope_holds(back, 1)
    assert vepi_slope_holds(back, 1)


def test_rational_disparity_supported():
    lf, _ = generate(SceneSpec(u=3, v=3, h=16, w=16, seed=6,
                               layers=[LayerSpec("sinusoid", Fraction(1, 2))]))
    assert lf.shape == (3, 3, 16, 16, 1)
    # views at angular distance 2 differ by a whole-pixel shift of d=1/2 * 2 = 1
    assert np.array_equal(lf[0, 1, :, : -1, 0], lf[2, 1, :, 1:, 0])


def test_occlusion_front_layer_wins():
    spec = SceneSpec(
        u=3, v=3, h=20, w=20, seed=7,
        layers=[
            LayerSpec("checker", Fraction(0), mask="disk:0.5,0.5,0.2", scale=3),
            LayerSpec("noise", Fraction(2)),
        ],
    )
    lf, disp = generate(spec)
    vals = sorted(set(disp.ravel().tolist()))
    assert vals == [0.0, 2.0]
    cy, cx = 10, 10
    assert disp[cy, cx] == 0.0  # disk center belongs to the front layer
    assert disp[0, 0] == 2.0


def test_generation_deterministic():
    a, da = generate(noise_scene(1, seed=42))
    b, db = generate(noise_scene(1, seed=42))
    assert np.array_equal(a, b) and np.array_equal(da, db)
    c, _ = generate(noise_scene(1, seed=43))
    assert not np.array_equal(a, c)


def test_disparity_guard():
    with pytest.raises(ValueError, match="leaves the frame"):
        generate(SceneSpec(u=3, v=3, h=10, w=10, seed=8,
                           layers=[LayerSpec("checker", Fraction(2))]))


def test_scene_file_round_trip(tmp_path):
    spec = SceneSpec(u=3, v=3, h=24, w=20, seed=9, layers=[
        LayerSpec("checker", Fraction(1), mask="rect:0.1,0.1,0.6,0.6", scale=4),
        LayerSpec("noise", Fraction(1, 2), smooth=2.5),
    ])
    path = os.path.join(tmp_path, "s.scene")
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(scene_to_text(spec))
    again = parse_scene_file(path)
    assert again == spec
    lf1, _ = generate(spec)
    lf2, _ = generate(again)
    assert np.array_equal(lf1, lf2)


def test_random_scene_specs_deterministic_and_valid():
    specs1 = random_scene_specs(8, seed=3)
    specs2 = random_scene_specs(8, seed=3)
    assert specs1 == specs2
    for s in specs1:
        s.validate()
        lf, _ = generate(s)
        assert lf.min() >= 0.0 and lf.max() <= 1.0


# ---------------------------------------------------------------------------
# patches


def test_patch_full_size_is_identity():
    lf, _ = generate(noise_scene(1))
    patches = extract_patches(lf, 16, 5)
    assert len(patches) == 1
    assert np.array_equal(patches[0], lf)


def test_patches_tile_disjointly():
    lf = np.random.default_rng(10).random((1, 1, 8, 8, 1)).astype(np.float32)
    patches = extract_patches(lf, 4, 4)
    assert len(patches) == 4
    recon = np.zeros_like(lf)
    order = [(0, 0), (0, 4), (4, 0), (4, 4)]
    for patch, (y0, x0) in zip(patches, order):
        recon[:, :, y0 : y0 + 4, x0 : x0 + 4, :] = patch
    assert np.array_equal(recon, lf)


def test_last_patch_clamps_to_border():
    lf = np.random.default_rng(11).random((1, 1, 10, 10, 1)).astype(np.float32)
    patches = extract_patches(lf, 4, 3)
    # starts at 0,3,6 (6+4=10 exact) per axis
    assert len(patches) == 9
    lf2 = np.random.default_rng(12).random((1, 1, 9, 9, 1)).astype(np.float32)
    patches2 = extract_patches(lf2, 4, 3)
    # starts 0,3,5: last start clamped to 9-4
    assert len(patches2) == 9
    assert np.array_equal(patches2[-1], lf2[:, :, 5:9, 5:9, :])


def test_patch_too_large_rejected():
    with pytest.raises(FormatError, match="exceeds"):
        extract_patches(np.zeros((1, 1, 4, 4, 1)), 5, 1)
    with pytest.raises(FormatError, match="exceeds"):
        random_patch(np.zeros((1, 1, 4, 4, 1)), 5, np.random.default_rng(0))


def test_patch_preserves_epi_slope():
    lf, _ = generate(noise_scene(1, h=20, w=20))
    patch = extract_patches(lf, 10, 10)[0]
    assert vepi_slope_holds(patch, 1)
    assert hepi_slope_holds(patch, 1)


# ---------------------------------------------------------------------------
# augmentation


@pytest.mark.parametrize("op", AUGMENT_OPS)
def test_augment_keeps_shape_and_range(op):
    lf, _ = generate(noise_scene(1))
    out = augment(lf, op)
    assert out.shape == lf.shape
    assert np.array_equal(np.sort(out.ravel()), np.sort(lf.ravel()))


def test_flip_involution():
    lf, _ = generate(noise_scene(2, seed=13))
    assert np.array_equal(augment(augment(lf, "hflip"), "hflip"), lf)
    assert np.array_equal(augment(augment(lf, "vflip"), "vflip"), lf)
    out = lf
    for _ in range(4):
        out = augment(out, "rot90")
    assert np.array_equal(out, lf)


@pytest.mark.parametrize("op", AUGMENT_OPS)
def test_augment_preserves_epi_slope(op):
    lf, _ = generate(noise_scene(1, seed=14))
    out = augment(lf, op)
    assert vepi_slope_holds(out, 1), op
    assert hepi_slope_holds(out, 1), op


def test_spatial_only_flip_breaks_epi_slope():
    lf, _ = generate(noise_scene(1, seed=15))
    bad_x = np.ascontiguousarray(lf[:, :, :, ::-1, :])  # x only, u untouched
    assert not hepi_slope_holds(bad_x, 1)
    bad_y = np.ascontiguousarray(lf[:, :, ::-1, :, :])  # y only, v untouched
    assert not vepi_slope_holds(bad_y, 1)


def test_rot90_requires_square_angular_grid():
    lf = np.zeros((2, 3, 4, 4, 1), dtype=np.float32)
    with pytest.raises(FormatError, match="square"):
        augment(lf, "rot90")


def test_unknown_augment_rejected():
    with pytest.raises(FormatError, match="unknown"):
        augment(np.zeros((1, 1, 2, 2, 1)), "zoom")
