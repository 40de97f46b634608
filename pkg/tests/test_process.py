"""Marked point-process sampling, the density catalog, and rectangle masses."""

import math

import numpy as np
import pytest
from scipy import stats

from pnnforest.geometry import HyperRect, rect_between
from pnnforest.process import (
    DensitySpec,
    ModelSpec,
    NoiseSpec,
    RegressionSpec,
    SeedSpec,
    derive_key,
    rect_mass,
    rect_mass_batch,
    sample_binomial_config,
    sample_marked,
    sample_poisson_config,
)

UNIT_SQUARE = DensitySpec.uniform_box([0.0, 0.0], [1.0, 1.0])


# ---------------------------------------------------------------------------
# Poisson sampling
# ---------------------------------------------------------------------------


def test_poisson_count_mean():
    draws = 10_000
    total = 0
    for r in range(draws):
        total += sample_poisson_config(1000.0, UNIT_SQUARE, SeedSpec(2024, r)).n_points
    mean = total / draws
    assert abs(mean - 1000.0) <= 4.0 * np.sqrt(1000.0) / 100.0


def test_poisson_replay_is_bit_identical():
    a = sample_poisson_config(50.0, UNIT_SQUARE, SeedSpec(7, 3))
    b = sample_poisson_config(50.0, UNIT_SQUARE, SeedSpec(7, 3))
    assert a.n_points == b.n_points
    assert np.array_equal(a.points, b.points)


def test_poisson_points_uniform_in_subsquare():
    config = sample_poisson_config(200_000.0, UNIT_SQUARE, SeedSpec(1, 0))
    inside = np.all(config.points <= 0.5, axis=1).mean()
    assert abs(inside - 0.25) < 0.005


def test_distinct_streams_are_uncorrelated():
    reps = 200
    stats_by_stream = np.empty((reps, 3))
    for r in range(reps):
        for s in range(3):
            config = sample_poisson_config(200.0, UNIT_SQUARE, SeedSpec(r, s))
            stats_by_stream[r, s] = config.points[:, 0].mean()
    corr = np.corrcoef(stats_by_stream, rowvar=False)
    off_diag = corr[~np.eye(3, dtype=bool)]
    assert np.all(np.abs(off_diag) < 4.0 / np.sqrt(reps))


def test_binomial_debug_sampler_has_fixed_count():
    config = sample_binomial_config(37, UNIT_SQUARE, SeedSpec(0, 0))
    assert config.n_points == 37


# ---------------------------------------------------------------------------
# marked samples
# ---------------------------------------------------------------------------


def _model(r0_kind="constant", r0_params=None, sigma_value=1.0, noise="gaussian"):
    return ModelSpec(
        UNIT_SQUARE,
        NoiseSpec(noise),
        RegressionSpec(r0_kind, r0_params or {"value": 0.0},
                       "constant", {"value": sigma_value}),
    )


def test_zero_noise_returns_regression_values():
    model = _model(r0_kind="constant", r0_params={"value": 3.5}, sigma_value=0.0)
    sample = sample_marked(100.0, model, SeedSpec(5, 0))
    assert np.allclose(sample.responses, 3.5)


def test_marks_have_mean_zero_unit_variance():
    for noise in ("gaussian", "uniform", "rademacher"):
        model = _model(noise=noise)
        sample = sample_marked(50_000.0, model, SeedSpec(9, 0))
        assert abs(sample.marks.mean()) < 0.02
        assert abs(sample.marks.var() - 1.0) < 0.03
        if noise == "rademacher":
            assert set(np.unique(sample.marks)) == {-1.0, 1.0}


def test_conditional_variance_matches_sigma():
    model = ModelSpec(
        UNIT_SQUARE,
        NoiseSpec("gaussian"),
        RegressionSpec("linear", {"weights": [1.0, -0.5], "intercept": 0.2},
                       "constant", {"value": 0.7}),
    )
    sample = sample_marked(200_000.0, model, SeedSpec(12, 0))
    window = np.all(np.abs(sample.config.points - 0.5) < 0.05, axis=1)
    residual = sample.responses - model.regression.r0(sample.config.points)
    assert window.sum() > 1000
    assert abs(residual[window].var() - 0.49) < 0.06


def test_marked_replay_is_bit_identical():
    model = _model()
    a = sample_marked(100.0, model, SeedSpec(3, 1))
    b = sample_marked(100.0, model, SeedSpec(3, 1))
    assert np.array_equal(a.responses, b.responses)
    assert np.array_equal(a.marks, b.marks)
    assert np.array_equal(a.config.points, b.config.points)


# ---------------------------------------------------------------------------
# density catalog
# ---------------------------------------------------------------------------


def test_truncated_gaussian_samples_match_marginal_cdf():
    density = DensitySpec.truncated_gaussian([0.3], [0.4], [0.0], [1.0])
    rng = SeedSpec(21, 0).generator()
    draws = density.sample(20_000, rng)[:, 0]
    grid = np.linspace(0.05, 0.95, 10)
    for g in grid:
        empirical = (draws <= g).mean()
        assert abs(empirical - density.marginal_cdf(0, g)) < 0.015


def test_product_beta_samples_match_marginal_cdf():
    density = DensitySpec.product_beta([2.0, 3.0], [2.0, 1.5], [0.0, -1.0], [2.0, 1.0])
    rng = SeedSpec(22, 0).generator()
    draws = density.sample(20_000, rng)
    for axis in (0, 1):
        for g in np.linspace(density.lo[axis] + 0.1, density.hi[axis] - 0.1, 7):
            empirical = (draws[:, axis] <= g).mean()
            assert abs(empirical - density.marginal_cdf(axis, g)) < 0.015


def test_samples_stay_inside_support():
    for density in (
        UNIT_SQUARE,
        DensitySpec.truncated_gaussian([0.0, 0.0], [1.0, 1.0], [-1.0, -1.0], [1.0, 1.0]),
        DensitySpec.product_beta([0.5, 2.0], [0.5, 2.0], [0.0, 0.0], [1.0, 1.0]),
    ):
        rng = SeedSpec(23, 0).generator()
        pts = density.sample(5000, rng)
        assert density.support.contains(pts).all()


def test_pdf_normalizes_on_grid():
    density = DensitySpec.truncated_gaussian([0.2], [0.5], [-1.0], [1.0])
    xs = np.linspace(-1.0, 1.0, 20_001)[:, None]
    mass = np.trapezoid(density.pdf(xs), xs[:, 0])
    assert abs(mass - 1.0) < 1e-6


# ---------------------------------------------------------------------------
# rectangle mass
# ---------------------------------------------------------------------------


def test_rect_mass_uniform_area():
    rect = HyperRect(np.array([0.0, 0.0]), np.array([0.5, 0.2]))
    assert rect_mass(UNIT_SQUARE, rect) == pytest.approx(0.1, abs=1e-15)


def test_rect_mass_disjoint_support():
    rect = HyperRect(np.array([2.0, 2.0]), np.array([3.0, 3.0]))
    assert rect_mass(UNIT_SQUARE, rect) == 0.0


def test_rect_mass_beta_midpoint():
    density = DensitySpec.product_beta([2.0], [2.0], [0.0], [1.0])
    rect = HyperRect(np.array([0.0]), np.array([0.5]))
    assert rect_mass(density, rect) == pytest.approx(0.5, abs=1e-12)


def test_rect_mass_closed_form_matches_quadrature():
    densities = (
        UNIT_SQUARE,
        DensitySpec.truncated_gaussian([0.4, 0.6], [0.3, 0.5], [0.0, 0.0], [1.0, 1.0]),
        DensitySpec.product_beta([2.0, 0.8], [1.5, 1.2], [0.0, 0.0], [1.0, 1.0]),
    )
    rect = rect_between([0.1, 0.2], [0.7, 0.9])
    for density in densities:
        closed = rect_mass(density, rect, method="closed")
        quad = rect_mass(density, rect, method="quadrature")
        assert closed == pytest.approx(quad, abs=1e-8)


def test_rect_mass_monotone_and_additive():
    density = DensitySpec.truncated_gaussian([0.5, 0.5], [0.4, 0.4], [0.0, 0.0], [1.0, 1.0])
    inner = rect_between([0.3, 0.3], [0.6, 0.6])
    outer = rect_between([0.2, 0.1], [0.8, 0.9])
    assert rect_mass(density, inner) <= rect_mass(density, outer)
    # partition [0,1]^2 into a 4x4 grid of disjoint cells: masses sum to 1
    edges = np.linspace(0.0, 1.0, 5)
    total = 0.0
    for i in range(4):
        for j in range(4):
            cell = HyperRect(np.array([edges[i], edges[j]]),
                             np.array([edges[i + 1], edges[j + 1]]))
            total += rect_mass(density, cell)
    assert total == pytest.approx(1.0, abs=1e-10)


def test_rect_mass_batch_matches_scalar():
    density = DensitySpec.product_beta([2.0, 2.0], [3.0, 1.0], [0.0, 0.0], [1.0, 1.0])
    rng = np.random.default_rng(4)
    a = rng.random((20, 2))
    b = rng.random((20, 2))
    los, his = np.minimum(a, b), np.maximum(a, b)
    batch = rect_mass_batch(density, los, his)
    for i in range(20):
        assert batch[i] == pytest.approx(
            rect_mass(density, HyperRect(los[i], his[i])), abs=1e-14)


# ---------------------------------------------------------------------------
# regression catalog
# ---------------------------------------------------------------------------


def test_regression_catalog_values():
    pts = np.array([[0.5, 0.5], [0.1, 0.9]])
    lin = RegressionSpec("linear", {"weights": [2.0, -1.0], "intercept": 0.5},
                         "constant", {"value": 1.0})
    assert np.allclose(lin.r0(pts), [1.0, 2.0 * 0.1 - 0.9 + 0.5])
    sine = RegressionSpec("smooth-sine", {"amplitude": 2.0, "frequency": 3.0},
                          "constant", {"value": 1.0})
    assert np.allclose(sine.r0(pts), 2.0 * np.sin(3.0 * pts.sum(axis=1)))
    het = RegressionSpec("constant", {"value": 0.0},
                         "affine-norm", {"base": 0.5, "slope": 2.0})
    assert np.allclose(het.sigma(pts), 0.5 + 2.0 * np.linalg.norm(pts, axis=1))


def test_sigma_inf_is_box_infimum():
    het = RegressionSpec("constant", {"value": 0.0},
                         "affine-norm", {"base": 0.5, "slope": 2.0})
    box = HyperRect(np.array([0.25, -0.5]), np.array([1.0, 1.0]))
    exact = het.sigma_inf(box)
    grid = np.stack(np.meshgrid(np.linspace(0.25, 1, 101), np.linspace(-0.5, 1, 101)),
                    axis=-1).reshape(-1, 2)
    assert exact <= het.sigma(grid).min() + 1e-12
    assert exact == pytest.approx(0.5 + 2.0 * 0.25, abs=1e-12)


def test_sigma_inf_negative_slope_uses_far_corner():
    falling = RegressionSpec("constant", {"value": 0.0},
                             "affine-norm", {"base": 0.5, "slope": -0.3})
    box = HyperRect(np.array([0.0, 0.0]), np.array([1.0, 1.0]))
    exact = falling.sigma_inf(box)
    grid = np.stack(np.meshgrid(np.linspace(0, 1, 101), np.linspace(0, 1, 101)),
                    axis=-1).reshape(-1, 2)
    assert exact <= falling.sigma(grid).min() + 1e-12
    assert exact == pytest.approx(0.5 - 0.3 * math.sqrt(2.0), abs=1e-12)


def test_model_guards_sigma_positivity_on_support():
    dens = DensitySpec.uniform_box([0, 0], [1, 1])
    falling = RegressionSpec("constant", {"value": 0.0},
                             "affine-norm", {"base": 0.5, "slope": -0.3})
    ModelSpec(dens, NoiseSpec("gaussian"), falling)  # 0.5 - 0.3*sqrt(2) > 0
    too_steep = RegressionSpec("constant", {"value": 0.0},
                               "affine-norm", {"base": 0.5, "slope": -0.4})
    with pytest.raises(ValueError, match="positive on the density support"):
        ModelSpec(dens, NoiseSpec("gaussian"), too_steep)


# ---------------------------------------------------------------------------
# seeding
# ---------------------------------------------------------------------------


def test_derive_key_is_deterministic_and_input_sensitive():
    x0 = np.array([0.5, 0.5])
    a = derive_key(1, 2, 3, x0)
    assert np.array_equal(a, derive_key(1, 2, 3, x0))
    assert not np.array_equal(a, derive_key(1, 2, 4, x0))
    assert not np.array_equal(a, derive_key(1, 2, 3, np.array([0.5, 0.6])))


def test_seedspec_streams_differ():
    g0 = SeedSpec(99, 0).generator()
    g1 = SeedSpec(99, 1).generator()
    assert not np.array_equal(g0.random(8), g1.random(8))
