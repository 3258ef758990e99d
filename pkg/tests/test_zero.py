import numpy as np
import pytest

from gramdyson.profile import VarianceProfile, block_profile, random_profile, symmetrize, uniform
from gramdyson.qve import SpectralPoint, gram_to_sym, residual, solve_at
from gramdyson.zero import (J_value, analyze, b_prime_at_zero, compute_a, estimate_delta_star,
                            estimate_gap, expansion_at_zero, hard_edge_ladder, minimize_J,
                            reconstruct, solve_b, solve_hard_edge)

import oracles


@pytest.fixture(scope="module")
def rect():
    prof = uniform(40, 20)
    return prof, minimize_J(prof)


@pytest.fixture(scope="module")
def rect_b(rect):
    prof, soft = rect
    return solve_b(prof, soft.u, 0.2)


def test_ladder_shape():
    lad = hard_edge_ladder()
    assert lad[0] == 1 and lad[-1] == pytest.approx(1e-8)
    assert np.allclose(lad[:-1] / lad[1:], np.sqrt(10))


def test_uniform_hard_edge():
    sym = symmetrize(uniform(30, 30))
    hard = solve_hard_edge(sym)
    assert np.abs(hard.v0 - oracles.SQUARE_V0).max() <= 1e-10
    assert hard.singular_coefficient == pytest.approx(oracles.SQUARE_SINGULAR_COEFFICIENT, abs=1e-10)
    assert np.abs(1 / hard.v0 - sym.apply(hard.v0)).max() <= 1e-12
    # the saturated operator at zero fixes the constant vector
    F0 = hard.v0[:, None] * sym.dense() * hard.v0[None, :]
    assert np.allclose(F0 @ np.ones(60), np.ones(60))


def test_singular_coefficient_matches_density_blow_up():
    w = 1e-8
    assert oracles.square_density(w) * np.sqrt(w) == pytest.approx(
        oracles.SQUARE_SINGULAR_COEFFICIENT, rel=1e-7)


@pytest.mark.parametrize("seed", [0, 1, 2])
def test_random_hard_edge_halves(seed):
    Z = np.array([[1, 1, 0], [0, 1, 1], [1, 0, 1]])
    rng = np.random.default_rng(seed)
    prof = block_profile(Z, 4)
    s = prof.s * rng.uniform(0.5, 1.5, prof.s.shape)
    sym = symmetrize(VarianceProfile(s))
    hard = solve_hard_edge(sym)
    assert abs(hard.v1.mean() - hard.v2.mean()) <= 1e-12
    assert np.abs(1 / hard.v0 - sym.apply(hard.v0)).max() <= 1e-12
    assert np.all(hard.v0 > 0)


def test_hard_edge_refuses_rectangles():
    with pytest.raises(ValueError):
        solve_hard_edge(symmetrize(uniform(4, 2)))


def test_expansion_at_zero_uniform():
    sym = symmetrize(uniform(20, 20))
    hard = solve_hard_edge(sym)
    rng = np.random.default_rng(5)
    for _ in range(10):
        z = rng.uniform(0.005, 0.05) * np.exp(1j * rng.uniform(0.1, 0.9) * np.pi)
        sol = solve_at(sym, z, tol=1e-13)
        err = np.abs(sol.m_sym - expansion_at_zero(sym, hard, z)).max()
        assert err <= 10 * abs(z) ** 2


def test_u_for_uniform_rectangle(rect):
    prof, soft = rect
    assert np.abs(soft.u - 0.5).max() <= 1e-10
    assert abs(soft.u.sum() - (prof.p - prof.n)) <= prof.p * 1e-12
    assert np.abs(soft.b0 - 3).max() <= 1e-10
    assert soft.point_mass == pytest.approx(1 - prof.n / prof.p, abs=1e-12)
    assert soft.residual <= 1e-12
    assert soft.J_monotone


@pytest.mark.parametrize("seed", [0, 1, 2])
def test_random_rectangle_u(seed):
    prof = random_profile(30, 12, seed)
    soft = minimize_J(prof)
    s = prof.s
    assert np.abs(1 / soft.u - 1 - s @ (1 / (s.T @ soft.u))).max() <= 1e-11
    assert abs(soft.u.sum() - 18) <= 30 * 1e-10
    assert np.all((soft.u > 0) & (soft.u < 1))
    ones = J_value(prof, np.ones(30)).value
    assert ones <= 1
    assert J_value(prof, soft.u).value <= ones
    assert J_value(prof, soft.u).gradient_norm <= 1e-10
    assert soft.J_monotone


def test_minimize_J_refuses_wide_profiles():
    with pytest.raises(ValueError):
        minimize_J(uniform(3, 3))


def test_b_matches_scalar_root(rect, rect_b):
    prof, soft = rect
    for z in (0.05j, 0.08 + 0.03j, 0.15, 0.19 * np.exp(0.7j), 0.12 * np.exp(2.5j)):
        b = rect_b(z)
        assert np.abs(b - oracles.rect_b(z)).max() <= 1e-8
        assert rect_b.algebraic_residual(z, b) <= 1e-9


def test_b_properties(rect, rect_b):
    prof, soft = rect
    assert np.abs(b_prime_at_zero(rect_b)).max() == 0
    for t in (-0.15, 0.07, 0.18):
        assert np.abs((t * rect_b(t)).imag).max() <= 1e-9
    for z in (0.1j, 0.05 + 0.1j, -0.1 + 0.02j):
        assert np.all((z * rect_b(z)).imag > 0)
    with pytest.raises(ValueError):
        rect_b(0.3)


def test_b_on_random_profile_has_zero_slope():
    prof = random_profile(24, 10, 9)
    soft = minimize_J(prof)
    bf = solve_b(prof, soft.u, 0.15, series=False)
    assert np.abs(b_prime_at_zero(bf)).max() == 0
    h = 1e-3
    slope = (bf(h) - bf(-h)) / (2 * h)
    assert np.abs(slope).max() <= 1e-4
    assert bf.algebraic_residual(0.1 + 0.05j, bf(0.1 + 0.05j)) <= 1e-9


def test_reconstruction_solves_qve(rect, rect_b):
    prof, soft = rect
    for z in (0.1j, 0.05 + 0.08j, 0.02j):
        M = reconstruct(prof, soft.u, rect_b, z)
        assert residual(prof, M, SpectralPoint(z)) <= 1e-8
        sol = solve_at(symmetrize(prof), z, tol=1e-12)
        assert np.abs(M - sol.m_sym).max() <= 1e-7
    a0 = compute_a(prof, soft.u, rect_b, 0.0)
    assert np.all(np.isfinite(a0))


def test_zeta_m_tends_to_minus_u(rect):
    prof, soft = rect
    sym = symmetrize(prof)
    errs = []
    for zeta in (1e-2j, 1e-3j, 1e-4j):
        sol = solve_at(sym, gram_to_sym(zeta), tol=1e-12)
        m, _ = sol.gram()
        errs.append(np.abs(zeta * m + soft.u).max())
    # zeta m + u = zeta a(sqrt zeta) vanishes linearly
    assert errs[-1] <= 1e-3
    assert errs[0] > errs[1] > errs[2]


def test_delta_star_and_gap(rect):
    prof, soft = rect
    ds = estimate_delta_star(prof, soft.u)
    assert 0.1 < ds
    assert ds ** 2 <= oracles.RECT_LO
    grid = np.linspace(0.002, 2.2, 1100)
    dpi = estimate_gap(prof, grid=grid)
    assert abs(dpi - oracles.RECT_LO) <= 2 * (grid[1] - grid[0])
    assert ds ** 2 <= dpi
    with pytest.raises(ValueError):
        estimate_gap(uniform(5, 5))


def test_analyze_dispatch():
    hard = analyze(uniform(10, 10))
    assert hard.to_json()["kind"] == "hard"
    grid = np.linspace(0.002, 2.2, 400)
    soft = analyze(uniform(20, 10), grid=grid)
    obj = soft.to_json()
    assert obj["kind"] == "soft" and obj["point_mass"] == pytest.approx(0.5)
    wide = analyze(uniform(10, 20), grid=grid)
    assert wide.transposed and wide.point_mass == 0
    assert abs(wide.delta_pi - oracles.RECT_LO) <= 2 * (grid[1] - grid[0])
