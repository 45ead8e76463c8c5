import logging
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from akgp.environments import (
    FIVE_PARTITION_BOUNDS,
    DomainError,
    RasterEnv,
    RasterFormatError,
    RasterSpec,
    Synthetic1D,
    five_partition,
    grid_points,
    load_raster,
    make_synthetic_raster,
    observe,
    query_truth,
    region_masks,
    save_raster,
    synth_eval,
)


@pytest.fixture
def small_env():
    values = np.array([[1.0, 2.0, 4.0], [3.0, 4.0, 0.5], [-1.0, 7.0, 2.5]])
    return RasterEnv(values, (0.0, 2.0, 0.0, 2.0), obs_noise_std=0.0)


# -- file format ------------------------------------------------------------------

def test_parse_two_by_two(tmp_path):
    path = tmp_path / "g.txt"
    path.write_text("2 2 0 1 0 1\n1 2\n3 4\n")
    env = load_raster(path)
    assert env.values[0][0] == 1 and env.values[1][1] == 4
    assert env.extent == (0.0, 1.0, 0.0, 1.0)


def test_truncated_row_names_row(tmp_path):
    path = tmp_path / "g.txt"
    path.write_text("2 3 0 1 0 1\n1 2 3\n3 4\n")
    with pytest.raises(RasterFormatError, match="row 1"):
        load_raster(path)


@pytest.mark.parametrize("text", [
    "2 2 0 1 0\n1 2\n3 4\n",
    "2 2 0 1 0 1\n1 2\n",
    "2 2 0 1 0 1\n1 nan\n3 4\n",
    "2 2 0 1 0 1\n1 x\n3 4\n",
    "2 2 1 0 0 1\n1 2\n3 4\n",
    "",
])
def test_malformed_files(tmp_path, text):
    path = tmp_path / "g.txt"
    path.write_text(text)
    with pytest.raises(RasterFormatError):
        load_raster(path)


def test_roundtrip_is_value_identical(tmp_path, rng):
    env = RasterEnv(rng.normal(size=(4, 5)) * 1e3, (0.1, 3.7, -2.0, 1 / 3))
    save_raster(env, tmp_path / "r.txt")
    back = load_raster(tmp_path / "r.txt")
    assert back.values.tobytes() == env.values.tobytes()
    assert back.extent == env.extent


def test_values_are_read_only(small_env):
    with pytest.raises(ValueError):
        small_env.values[0, 0] = 5.0


# -- interpolation -------------------------------------------------------------------

def test_query_at_nodes(small_env):
    for i in range(3):
        for j in range(3):
            # row 0 is the northern edge
            x = np.array([float(j), 2.0 - i])
            assert query_truth(small_env, x) == small_env.values[i, j]


def test_query_at_cell_center(small_env):
    assert query_truth(small_env, [0.5, 1.5]) == pytest.approx(np.mean([1.0, 2.0, 3.0, 4.0]))


@settings(max_examples=100, deadline=None)
@given(x=st.floats(0, 2), y=st.floats(0, 2))
def test_query_is_convex_combination(x, y):
    values = np.array([[1.0, 2.0, 4.0], [3.0, 4.0, 0.5], [-1.0, 7.0, 2.5]])
    env = RasterEnv(values, (0.0, 2.0, 0.0, 2.0))
    j, i = min(int(x), 1), min(int(2.0 - y), 1)
    corners = values[i:i + 2, j:j + 2]
    v = query_truth(env, [x, y])
    assert corners.min() - 1e-12 <= v <= corners.max() + 1e-12


@settings(max_examples=100, deadline=None)
@given(x=st.floats(0, 2), y=st.floats(0, 2), dx=st.floats(-0.05, 0.05), dy=st.floats(-0.05, 0.05))
def test_interpolation_is_lipschitz(x, y, dx, dy):
    values = np.array([[1.0, 2.0, 4.0], [3.0, 4.0, 0.5], [-1.0, 7.0, 2.5]])
    env = RasterEnv(values, (0.0, 2.0, 0.0, 2.0))
    a = np.array([x, y])
    b = np.clip(a + [dx, dy], 0, 2)
    # per-axis bound: largest neighbouring-node difference per unit cell size
    gx = np.abs(np.diff(values, axis=1)).max()
    gy = np.abs(np.diff(values, axis=0)).max()
    bound = gx * abs(b[0] - a[0]) + gy * abs(b[1] - a[1])
    assert abs(query_truth(env, a) - query_truth(env, b)) <= bound + 1e-12


def test_out_of_extent_is_clamped_with_warning(small_env, caplog):
    with caplog.at_level(logging.WARNING):
        v = query_truth(small_env, [-5.0, 2.0])
    assert v == small_env.values[0, 0]
    assert "clamped" in caplog.text


def test_query_vectorized_matches_scalar(small_env, rng):
    X = rng.uniform(0, 2, (20, 2))
    np.testing.assert_array_equal(query_truth(small_env, X),
                                  [query_truth(small_env, x) for x in X])


def test_grid_points_cover_corners():
    G = grid_points((0, 1, 2, 4), (3, 5))
    assert G.shape == (15, 2)
    assert G.min(axis=0).tolist() == [0, 2] and G.max(axis=0).tolist() == [1, 4]


# -- observations ----------------------------------------------------------------------

def test_noiseless_observe_equals_truth(small_env, rng):
    X = rng.uniform(0, 2, (10, 2))
    np.testing.assert_array_equal(observe(small_env, X, rng), query_truth(small_env, X))


def test_observe_seeded_determinism():
    env = RasterEnv(np.arange(9.0).reshape(3, 3), (0, 1, 0, 1), obs_noise_std=2.0)
    X = np.random.default_rng(0).uniform(0, 1, (50, 2))
    a = observe(env, X, np.random.default_rng(4))
    b = observe(env, X, np.random.default_rng(4))
    assert a.tobytes() == b.tobytes()


def test_observe_mean_converges():
    env = RasterEnv(np.arange(9.0).reshape(3, 3), (0, 1, 0, 1), obs_noise_std=2.0)
    x = np.array([[0.3, 0.6]])
    n = 100_000
    draws = observe(env, np.repeat(x, n, axis=0), np.random.default_rng(1))
    assert abs(draws.mean() - query_truth(env, x[0])) < 3 * 2.0 / math.sqrt(n)


def test_observe_has_no_side_effects(small_env, rng):
    before = small_env.values.copy()
    observe(small_env, rng.uniform(0, 2, (5, 2)), rng)
    np.testing.assert_array_equal(small_env.values, before)


def test_observe_synthetic_1d():
    env = Synthetic1D("xsin40x4", obs_noise_std=0.0)
    x = np.array([0.1, 0.5, 0.9])
    np.testing.assert_array_equal(observe(env, x, np.random.default_rng(0)), synth_eval(env, x))


# -- 1-D functions -----------------------------------------------------------------------

def test_xsin_closed_forms():
    env = Synthetic1D("xsin40x4")
    assert synth_eval(env, 0.0) == 0.0
    x = (math.pi / 80) ** 0.25
    assert synth_eval(env, x) == pytest.approx(x, rel=1e-12)


def test_five_partition_boundary_values():
    # each boundary belongs to the right-hand piece
    expected = {
        0.0: 1.0,
        0.2: -1.0,
        0.4: 0.0,
        0.6: 1.5 - 10 * 0.01,
        0.8: -0.4,
        1.0: -0.8 + 0.4 * math.cos(2 * math.pi * 0.2),
    }
    for x, v in expected.items():
        assert five_partition(x) == pytest.approx(v, abs=1e-12)
    # left limits differ: the function jumps at every boundary
    for b in FIVE_PARTITION_BOUNDS:
        assert abs(five_partition(b - 1e-12) - five_partition(b)) > 0.1


def test_five_partition_third_part_is_fastest():
    x = np.linspace(0, 1, 20001)
    slope = np.abs(np.diff(five_partition(x))) / np.diff(x)
    mid = x[:-1]
    third = (mid >= 0.4) & (mid < 0.6)
    others = ~third & np.all([np.abs(mid - b) > 1e-3 for b in FIVE_PARTITION_BOUNDS], axis=0)
    assert slope[third].max() > 5 * slope[others].max()


@pytest.mark.parametrize("x", [-0.01, 1.01, float("nan")])
def test_synth_domain_error(x):
    with pytest.raises(DomainError):
        synth_eval(Synthetic1D("five_partition"), x)


def test_unknown_function_id():
    with pytest.raises(ValueError):
        Synthetic1D("sinc")


# -- generated rasters ---------------------------------------------------------------------

def test_synthetic_raster_deterministic():
    a = make_synthetic_raster(RasterSpec(seed=3, rows=30, cols=30))
    b = make_synthetic_raster(RasterSpec(seed=3, rows=30, cols=30))
    assert a.values.tobytes() == b.values.tobytes()
    c = make_synthetic_raster(RasterSpec(seed=4, rows=30, cols=30))
    assert c.values.tobytes() != a.values.tobytes()


def test_flat_region_less_variable_than_rocky():
    spec = RasterSpec(seed=0, rows=60, cols=60)
    env = make_synthetic_raster(spec)
    X = grid_points(spec.extent, (60, 60))
    vals = query_truth(env, X)
    masks = region_masks(env, X)
    assert np.var(vals[masks["flat"]]) < np.var(vals[masks["rocky"]])


@pytest.mark.parametrize("generator", ["piecewise", "gp"])
def test_synthetic_raster_roundtrip(tmp_path, generator):
    env = make_synthetic_raster(RasterSpec(generator=generator, seed=1, rows=12, cols=17))
    save_raster(env, tmp_path / "s.txt")
    back = load_raster(tmp_path / "s.txt")
    assert back.values.tobytes() == env.values.tobytes()
    assert back.shape == (12, 17)


def test_unknown_generator():
    with pytest.raises(ValueError):
        make_synthetic_raster(RasterSpec(generator="fractal"))
