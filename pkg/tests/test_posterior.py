import numpy as np
import pytest
from dataclasses import replace
from hypothesis import given, settings, strategies as st

from multiphase_qpe.circuit import TWO_PI, CircuitSpec, NoiseModel, outcome_probabilities
from multiphase_qpe.posterior import (
    DegenerateCutError,
    PosteriorGrid,
    PSDViolationError,
    ResolutionError,
    UndefinedMeanError,
    bayes_update,
    circular_mean_estimate,
    covariance_matrix,
    cut_and_regrid,
    dump_grid,
    grid_likelihood,
    init_uniform_grid,
    linear_combination_variance,
    p_half,
    wrap_to_pi,
)


def delta_grid(d, G, idx):
    g = init_uniform_grid(d, G)
    dens = np.zeros(g.density.shape)
    dens[idx] = 1.0 / g.cell_volume
    return replace(g, density=dens)


def gaussian_grid(center, sigma, side, G):
    d = len(center)
    lower = np.asarray(center, float) - side / 2
    mid = (np.arange(G) + 0.5) * side / G
    axes = [lo + mid for lo in lower]
    mesh = np.meshgrid(*axes, indexing="ij")
    dens = np.exp(-sum((m - c) ** 2 for m, c in zip(mesh, center)) / (2 * sigma**2))
    dens /= dens.sum() * (side / G) ** d
    return PosteriorGrid(d=d, lower=lower, side=side, density=dens, wrap=False, cut_round=1)


def test_uniform_grid():
    g = init_uniform_grid(1, 100)
    assert g.density.size == 100 and np.allclose(g.density, 1 / TWO_PI)
    assert abs(init_uniform_grid(3, 32).mass() - 1) < 1e-12
    with pytest.raises(ResolutionError):
        init_uniform_grid(2, 7)
    for d in (1, 2, 3):
        with pytest.raises(UndefinedMeanError):
            circular_mean_estimate(init_uniform_grid(d, 16))


def test_uniform_analytic_values():
    g = init_uniform_grid(2, 64)
    V = covariance_matrix(g, [1.0, 2.0])
    assert np.allclose(V, 2 * np.eye(2), atol=1e-3)
    assert abs(p_half(g, [1.0, 2.0], 0) - 0.25) < 2 / 64
    assert abs(linear_combination_variance(2 * np.eye(3), [1, 1, 1]) - 6) < 1e-12


def test_flat_likelihood_leaves_grid_unchanged():
    # saturated dephasing washes out every oscillating term
    g = gaussian_grid([1.0, 2.0], 0.1, np.pi, 32)
    post = bayes_update(g, 1, [0.3, 1.2, 2.0], 64, NoiseModel((5.0, 5.0)))
    assert np.max(np.abs(post.density - g.density)) < 1e-12 * g.density.max()


def test_update_peak_and_commutativity():
    g = init_uniform_grid(2, 32)
    post = bayes_update(g, 1, [0.2, 1.0, 2.0], 1)
    like = grid_likelihood(g, 1, [0.2, 1.0, 2.0], 1)
    assert np.unravel_index(post.density.argmax(), post.density.shape) == np.unravel_index(like.argmax(), like.shape)
    a = bayes_update(bayes_update(g, 1, [0.2, 1.0, 2.0], 2), 0, [1.0, 0.5, 0.1], 4)
    b = bayes_update(bayes_update(g, 0, [1.0, 0.5, 0.1], 4), 1, [0.2, 1.0, 2.0], 2)
    assert np.max(np.abs(a.density - b.density)) < 1e-12


def test_likelihood_matches_closed_form():
    g = init_uniform_grid(2, 16)
    phi = np.array([0.3, 1.1, 2.9])
    like = grid_likelihood(g, 2, phi, 5)
    ax = g.axes()
    p = outcome_probabilities(CircuitSpec([ax[0][3], ax[1][7]], phi, 5))
    assert abs(like[3, 7] - p[2]) < 1e-12


def test_circular_mean_cases():
    g = delta_grid(1, 64, (10,))
    assert abs(circular_mean_estimate(g)[0] - g.axes()[0][10]) < 1e-12
    g = init_uniform_grid(1, 64)
    dens = np.zeros(64)
    dens[[20, 30]] = 1
    est = circular_mean_estimate(replace(g, density=dens / (2 * g.cell_volume)))
    assert abs(est[0] - g.axes()[0][25]) < 1e-12
    dens = np.zeros(64)
    dens[[0, 63]] = 1
    est = circular_mean_estimate(replace(g, density=dens / (2 * g.cell_volume)))
    assert abs(wrap_to_pi(est[0])) < 1e-12


@settings(max_examples=50, deadline=None)
@given(st.floats(-3, 3), st.floats(-3, 3))
def test_estimator_equivariance(dx, dy):
    g = gaussian_grid([1.0, 2.0], 0.05, np.pi / 2, 32)
    shifted = replace(g, lower=g.lower + np.array([dx, dy]))
    diff = circular_mean_estimate(shifted) - circular_mean_estimate(g)
    assert np.allclose(wrap_to_pi(diff - [dx, dy]), 0, atol=1e-12)


def test_p_half_cases():
    g = delta_grid(2, 64, (10, 20))
    c = [g.axes()[0][10], g.axes()[1][20]]
    assert abs(p_half(g, c, 3) - 1) < 1e-12
    assert p_half(g, [c[0] + np.pi, c[1]], 1) == 0.0
    g = gaussian_grid([0.5, 0.7], 0.3, TWO_PI, 64)
    vals = [p_half(g, [0.5, 0.7], k) for k in range(6)]
    assert all(a >= b for a, b in zip(vals, vals[1:]))


def test_covariance_cases():
    g = delta_grid(2, 64, (5, 40))
    c = [g.axes()[0][5], g.axes()[1][40]]
    assert np.allclose(covariance_matrix(g, c), 0, atol=(TWO_PI / 64) ** 2)
    sigma = 0.01
    g = gaussian_grid([1.0, 2.0], sigma, 16 * sigma, 64)
    V = covariance_matrix(g, [1.0, 2.0])
    assert np.allclose(np.diag(V), sigma**2, rtol=0.05)
    g2 = gaussian_grid([1.0, 2.0], sigma, 16 * sigma, 128)
    assert np.allclose(np.diag(covariance_matrix(g2, [1.0, 2.0])), np.diag(V), rtol=0.01)
    assert np.allclose(V, V.T)


def test_linear_combination_variance():
    V = np.array([[1.0, 0.47], [0.47, 1.0]]) * 3.0
    assert abs(linear_combination_variance(V, [1, -1]) - 1.06 * 3.0) < 1e-12
    assert linear_combination_variance(V, [0, 1]) == V[1, 1]
    with pytest.raises(PSDViolationError):
        linear_combination_variance(np.array([[1.0, 2.0], [2.0, 1.0]]), [1, -1])


def test_cut_uniform_and_inside():
    g = init_uniform_grid(2, 32)
    cut = cut_and_regrid(g, [6.0, 0.2], 0)
    assert cut.side == pytest.approx(np.pi) and not cut.wrap
    assert np.allclose(cut.density, np.pi**-2, rtol=1e-12)
    g = gaussian_grid([1.0, 2.0], 0.02, np.pi / 2, 64)
    cut = cut_and_regrid(g, [1.0, 2.0], 2)
    assert abs(cut.mass() - 1) < 1e-9
    peak_old = np.array([ax[i] for ax, i in zip(g.axes(), np.unravel_index(g.density.argmax(), g.density.shape))])
    est = circular_mean_estimate(cut)
    assert np.all(np.abs(est - peak_old) < g.cell_width)


def test_cut_conditions_on_hypercube():
    g = gaussian_grid([1.0], 0.3, TWO_PI, 256)
    g = replace(g, lower=np.zeros(1) + g.lower, wrap=False)
    cut = cut_and_regrid(g, [1.0], 1)
    x = cut.axes()[0]
    cond = np.exp(-((x - 1.0) ** 2) / (2 * 0.3**2))
    cond /= cond.sum() * cut.cell_width
    assert np.max(np.abs(cut.density - cond)) / cond.max() < 2 / 256 * 5


def test_degenerate_cut():
    g = delta_grid(1, 64, (0,))
    with pytest.raises(DegenerateCutError):
        cut_and_regrid(g, [np.pi], 3)


def test_dump_grid(tmp_path):
    g = init_uniform_grid(2, 8)
    with open(tmp_path / "g.txt", "w") as fh:
        dump_grid(g, fh)
    table = np.loadtxt(tmp_path / "g.txt")
    assert table.shape == (64, 3)
    with open(tmp_path / "g.bin", "wb") as fh:
        dump_grid(g, fh, binary=True)
    raw = np.fromfile(tmp_path / "g.bin", dtype="<f8").reshape(64, 3)
    assert np.array_equal(raw, table)
