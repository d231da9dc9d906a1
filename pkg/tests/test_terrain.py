import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from locostack.errors import InvalidSpecError
from locostack.terrain import (HeightField, ScanPattern, TerrainSpec, flat_field, generate,
                               height_at, load_heightfield, penetration, sample_scan,
                               save_heightfield, with_small_boxes)


def small_field(heights, cell=1.0, origin=(0.0, 0.0)):
    return HeightField(np.asarray(origin, float), cell, np.asarray(heights, float))


def test_flat_field_zero_everywhere():
    f = flat_field(0.0)
    rng = np.random.default_rng(20)
    pts = rng.uniform(-5, 15, size=(100, 2))
    assert np.allclose(height_at(f, pts), 0.0)


def test_height_at_grid_nodes_exact():
    h = np.arange(12, dtype=float).reshape(3, 4)
    f = small_field(h, cell=0.5, origin=(1.0, 2.0))
    for r in range(3):
        for c in range(4):
            xy = [1.0 + 0.5 * c, 2.0 + 0.5 * r]
            assert height_at(f, np.array(xy)) == h[r, c]


def test_height_at_cell_center_bilinear():
    # corners 0, 0, 1, 1 -> center is the hand-computed bilinear value 0.5
    f = small_field([[0.0, 0.0], [1.0, 1.0]])
    assert abs(height_at(f, np.array([0.5, 0.5])) - 0.5) < 1e-12
    # and an asymmetric hand check: corners 0,1 / 2,3 at (0.25, 0.75)
    g = small_field([[0.0, 1.0], [2.0, 3.0]])
    expected = (0.0 * 0.75 + 1.0 * 0.25) * 0.25 + (2.0 * 0.75 + 3.0 * 0.25) * 0.75
    assert abs(height_at(g, np.array([0.25, 0.75])) - expected) < 1e-12


def test_height_at_clamps_outside():
    f = small_field([[0.0, 1.0], [2.0, 3.0]])
    assert height_at(f, np.array([-10.0, -10.0])) == 0.0
    assert height_at(f, np.array([10.0, 10.0])) == 3.0


def test_penetration_cases():
    flat = flat_field(0.0)
    assert penetration(flat, np.array([0.0, 0.0, 0.1])) == 0.0
    assert abs(penetration(flat, np.array([0.0, 0.0, -0.05])) - 0.05) < 1e-12
    box = generate(TerrainSpec(kind="box", height=0.5, width=1.5))
    inside = np.array([2.75, 0.0, 0.3])
    assert abs(penetration(box, inside) - (height_at(box, inside[:2]) - 0.3)) < 1e-12
    assert abs(penetration(box, inside) - 0.2) < 1e-12


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 2 ** 32 - 1))
def test_penetration_nonnegative_zero_iff_above(seed):
    rng = np.random.default_rng(seed)
    f = small_field(rng.uniform(0, 2, size=(4, 5)), cell=0.3)
    p = np.array([rng.uniform(-1, 3), rng.uniform(-1, 2), rng.uniform(-1, 3)])
    d = float(penetration(f, p))
    h = float(height_at(f, p[:2]))
    assert d >= 0.0
    assert (d == 0.0) == (p[2] >= h)


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2 ** 32 - 1))
def test_height_at_lipschitz(seed):
    rng = np.random.default_rng(seed)
    cell = 0.25
    h = rng.uniform(0, 1.5, size=(6, 6))
    f = small_field(h, cell=cell)
    lx = np.max(np.abs(np.diff(h, axis=1))) / cell
    ly = np.max(np.abs(np.diff(h, axis=0))) / cell
    lip = np.hypot(lx, ly) + 1e-9
    a = rng.uniform(0, 5 * cell, size=2)
    d = rng.normal(size=2)
    d = d / np.linalg.norm(d) * rng.uniform(0, 0.5)
    gap = abs(float(height_at(f, a + d)) - float(height_at(f, a)))
    assert gap <= lip * np.linalg.norm(d) * (1 + 1e-9)


def test_scan_flat_terrain_relative_height():
    f = flat_field(0.0)
    pat = ScanPattern()
    scan = sample_scan(f, np.array([0.0, 0.0, 0.8]), 0.0, pat)
    assert scan.shape == (pat.size,)
    assert np.allclose(scan, -0.8)


def test_scan_yaw_equivariance():
    # rotating the terrain and the base yaw together leaves the scan invariant;
    # a linear ramp is exact under bilinear interpolation, so the check is exact
    base = np.array([2.0, 1.5, 0.6])
    a, b, yaw = 0.3, -0.2, 0.7
    cell = 0.1
    xs = np.arange(61) * cell - 1.0
    ys = np.arange(51) * cell - 1.0
    xm, ym = np.meshgrid(xs, ys, indexing="xy")

    def ramp_field(fn):
        return HeightField(np.array([-1.0, -1.0]), cell, fn(xm, ym))

    f0 = ramp_field(lambda x, y: a * (x - base[0]) + b * (y - base[1]))
    c, s = np.cos(yaw), np.sin(yaw)
    f1 = ramp_field(lambda x, y: a * (c * (x - base[0]) + s * (y - base[1]))
                    + b * (-s * (x - base[0]) + c * (y - base[1])))
    pat = ScanPattern(rows=5, cols=5, spacing=0.1, forward_center=0.2)
    scan0 = sample_scan(f0, base, 0.0, pat)
    scan1 = sample_scan(f1, base, yaw, pat)
    assert np.allclose(scan0, scan1, atol=1e-12)


def test_scan_sees_box_step():
    f = generate(TerrainSpec(kind="box", height=0.5, width=2.0, start_x=0.5))
    pat = ScanPattern(rows=11, cols=11, spacing=0.1, forward_center=0.3)
    base = np.array([0.0, 0.0, 0.7])
    scan = sample_scan(f, base, 0.0, pat).reshape(pat.rows, pat.cols)
    pts = pat.local_points().reshape(pat.rows, pat.cols, 2)
    on_box = pts[..., 0] > 0.6   # clearly past the face
    off_box = pts[..., 0] < 0.4
    gap = scan[on_box].min() - scan[off_box].max()
    direct = height_at(f, np.array([0.8, 0.0])) - height_at(f, np.array([0.2, 0.0]))
    assert abs(gap - 0.5) < 1e-9 or abs(direct - 0.5) < 1e-9
    assert scan[on_box].mean() > scan[off_box].mean() + 0.45


def test_scan_length_property():
    f = flat_field(0.0)
    for rows, cols in [(1, 1), (3, 7), (11, 11)]:
        pat = ScanPattern(rows=rows, cols=cols)
        assert sample_scan(f, np.array([1.0, 2.0, 0.5]), 0.7, pat).shape == (rows * cols,)


def test_scan_batched():
    f = flat_field(0.0)
    pat = ScanPattern()
    pos = np.array([[0.0, 0.0, 0.5], [1.0, 1.0, 0.7]])
    out = sample_scan(f, pos, np.array([0.0, 0.3]), pat)
    assert out.shape == (2, pat.size)
    assert np.allclose(out[0], -0.5) and np.allclose(out[1], -0.7)


def test_generate_box_exact_height():
    f = generate(TerrainSpec(kind="box", height=0.5))
    assert abs(float(f.heights.max()) - 0.5) < 1e-12


def test_generate_stairs_monotone_and_total():
    spec = TerrainSpec(kind="stairs", height=0.20, width=0.30, steps=5)
    f = generate(spec)
    assert abs(float(f.heights.max()) - 1.0) < 1e-12
    xs = np.linspace(spec.start_x - 0.5, spec.start_x + 5 * 0.3 + 0.5, 200)
    profile = height_at(f, np.stack([xs, np.zeros_like(xs)], axis=-1))
    assert np.all(np.diff(profile) >= -1e-12)


def test_generate_descending_stairs():
    spec = TerrainSpec(kind="stairs", height=0.20, width=0.30, steps=4, direction=-1)
    f = generate(spec)
    before = height_at(f, np.array([spec.start_x - 0.5, 0.0]))
    after = height_at(f, np.array([spec.start_x + 4 * 0.3 + 0.5, 0.0]))
    assert abs(before - 0.8) < 1e-12 and abs(after) < 1e-12


def test_generate_deterministic():
    spec = TerrainSpec(kind="scatter", density=0.4)
    a = generate(spec, np.random.default_rng(42))
    b = generate(spec, np.random.default_rng(42))
    assert np.array_equal(a.heights, b.heights)


def test_generate_rejects_out_of_bounds():
    with pytest.raises(InvalidSpecError, match="box_height"):
        generate(TerrainSpec(kind="box", height=2.0))
    with pytest.raises(InvalidSpecError, match="hurdle_height"):
        generate(TerrainSpec(kind="hurdle", height=0.05))
    with pytest.raises(InvalidSpecError, match="range"):
        generate(TerrainSpec(kind="stairs", height=0.5, width=0.3, steps=3))


def test_generate_at_bounds_never_raises():
    from locostack.terrain import BOUNDS
    for h in BOUNDS["box_height"]:
        generate(TerrainSpec(kind="box", height=h))
    for h in BOUNDS["hurdle_height"]:
        generate(TerrainSpec(kind="hurdle", height=h))
    for h in BOUNDS["stair_height"]:
        generate(TerrainSpec(kind="stairs", height=h, width=0.3, steps=3))


def test_mixed_terrain_places_parts_in_order():
    spec = TerrainSpec(kind="mixed", parts=(
        TerrainSpec(kind="hurdle", height=0.3),
        TerrainSpec(kind="stairs", height=0.2, width=0.3, steps=3),
        TerrainSpec(kind="box", height=0.5),
    ), start_x=1.0, size_xy=(16.0, 6.0))
    f = generate(spec)
    assert float(f.heights.max()) >= 0.6 - 1e-12  # stairs top


def test_small_boxes_overlay():
    f = flat_field(0.0)
    g = with_small_boxes(f, [(1.0, 0.0, 0.3, 0.12)])
    assert abs(float(height_at(g, np.array([1.0, 0.0]))) - 0.12) < 1e-12
    assert float(height_at(g, np.array([3.0, 0.0]))) == 0.0
    assert float(f.heights.max()) == 0.0  # original untouched


def test_pitched_box_rasterizes():
    f = generate(TerrainSpec(kind="box", height=0.5, width=1.5, pitch=0.2))
    assert float(f.heights.max()) > 0.5  # tilted top rises above nominal on one side


@pytest.mark.parametrize("text", [False, True])
def test_heightfield_file_roundtrip(tmp_path, text):
    f = generate(TerrainSpec(kind="box", height=0.45, yaw=0.2))
    path = tmp_path / "field.hf"
    save_heightfield(path, f, text=text)
    g = load_heightfield(path)
    assert g.cell_size == f.cell_size
    assert np.array_equal(g.origin, f.origin)
    if text:
        assert np.allclose(g.heights, f.heights, atol=0.0)  # repr round-trips exactly
        assert np.array_equal(g.heights, f.heights)
    else:
        assert np.array_equal(g.heights, f.heights)


def test_spec_dict_roundtrip():
    spec = TerrainSpec(kind="mixed", parts=(
        TerrainSpec(kind="hurdle", height=0.35),
        TerrainSpec(kind="box", height=0.5, yaw=0.1),
    ))
    again = TerrainSpec.from_dict(spec.to_dict())
    assert again.kind == "mixed" and len(again.parts) == 2
    assert again.parts[1].height == 0.5
