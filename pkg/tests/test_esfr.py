import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from esfr_diffusion.esfr import (C_PLUS, boundary_mass, c_plus, dg_delta_check, eval_psi, r_residual,
                                 r_residual_split, solve_sigma)
from esfr_diffusion.refelem import VERTICES, dubiner_eval, gauss_legendre, reference_element, volume_quadrature

A = 3 ** -0.25
ROT = np.array([[np.cos(2 * np.pi / 3), -np.sin(2 * np.pi / 3)],
                [np.sin(2 * np.pi / 3), np.cos(2 * np.pi / 3)]])


def interior_points(n, seed=0):
    lam = np.random.default_rng(seed).dirichlet(np.ones(3), size=n)
    return lam @ VERTICES


def lagrange(nodes, j, t):
    out = np.ones_like(t)
    for k, x in enumerate(nodes):
        if k != j:
            out *= (t - x) / (nodes[j] - x)
    return out


def test_c_plus_table():
    assert c_plus(2) == 4.3e-2 and c_plus(2, 60) == 4.3e-2
    assert c_plus(3, 60) == 6.4e-4 and c_plus(3, 90) == 6.0e-4
    assert set(C_PLUS) == {2, 3}
    with pytest.raises(ValueError):
        c_plus(4)


@pytest.mark.parametrize("p", [1, 2, 3])
def test_boundary_mass_oversampled(p):
    """b[f, j, i] = int_face l_j L_i, recomputed with a 6-point rule along each edge."""
    ref = reference_element(p)
    t, _ = gauss_legendre(p + 1)
    tq, wq = gauss_legendre(6)
    b = boundary_mass(p)
    for f, (a, c) in enumerate([(0, 1), (1, 2), (2, 0)]):
        pts = VERTICES[a] + np.outer(0.5 * (1 + tq), VERTICES[c] - VERTICES[a])
        L = dubiner_eval(p, pts)
        for j in range(p + 1):
            exact = (wq * lagrange(t, j, tq)) @ L
            assert np.abs(b[f, j] - exact).max() < 1e-13
    assert ref.face_basis.shape == (3, p + 1, ref.Np)


def test_boundary_mass_linear():
    b = boundary_mass(1)
    assert np.allclose(b[..., 0], A)


@pytest.mark.parametrize("p,param", [(1, 0.0), (2, 0.0), (2, 4.3e-2), (3, 6.0e-4), (3, 6.4e-4), (4, 1.0)])
def test_sigma_residual(p, param):
    ref = reference_element(p)
    cs = solve_sigma(p, param)
    lhs = cs.sigma.reshape(-1, ref.Np) @ (np.eye(ref.Np) + param * ref.deriv_form).T
    assert np.abs(lhs - boundary_mass(p).reshape(-1, ref.Np)).max() < 1e-12


def test_sigma_dg_is_boundary_mass():
    for p in (1, 2, 3):
        assert np.array_equal(solve_sigma(p, 0.0).sigma, boundary_mass(p))


@pytest.mark.parametrize("kappa", [0.0, 0.1, 2.5])
def test_sigma_linear_closed_form(kappa):
    ref = reference_element(1)
    cs = solve_sigma(1, kappa)
    den = 1 + 6 * A ** 2 * kappa
    for e in range(3):
        for i in range(2):
            r, s = ref.face_flux_points[e, i]
            exp = [A, A * np.sqrt(6) * s / den, A * np.sqrt(6) * r / den]
            assert np.allclose(cs.sigma[e, i], exp, atol=1e-14)


def test_sigma_rejects_bad_param():
    with pytest.raises(ValueError):
        solve_sigma(2, -1e-3)
    with pytest.raises(ValueError):
        solve_sigma(2, float("nan"))


@pytest.mark.parametrize("p,param", [(2, 0.0), (2, 4.3e-2), (3, 6.0e-4)])
def test_rotational_symmetry(p, param):
    cs = solve_sigma(p, param)
    pts = interior_points(12, seed=p)
    for f in range(3):
        g = (f + 1) % 3
        for j in range(p + 1):
            assert np.abs(eval_psi(cs, g, j, pts @ ROT.T) - eval_psi(cs, f, j, pts)).max() < 1e-10


@pytest.mark.parametrize("p,param", [(2, 4.3e-2), (3, 6.4e-4)])
def test_mirror_symmetry(p, param):
    # x -> -x keeps face 0 and reverses its flux points
    cs = solve_sigma(p, param)
    pts = interior_points(12, seed=7)
    mir = pts * [-1, 1]
    for j in range(p + 1):
        assert np.abs(eval_psi(cs, 0, p - j, mir) - eval_psi(cs, 0, j, pts)).max() < 1e-10


@pytest.mark.parametrize("p,param", [(1, 0.0), (2, 4.3e-2), (3, 6.0e-4)])
def test_divergence_theorem(p, param):
    """int psi_fj over the element equals int h_fj.n over the boundary, which is w_j."""
    cs = solve_sigma(p, param)
    qp, qw = volume_quadrature(p + 2)
    _, w = gauss_legendre(p + 1)
    vals = cs.values(qp)
    assert np.abs(np.einsum("q,qfj->fj", qw, vals) - w[None, :]).max() < 1e-13


def test_eval_psi_linear_at_flux_points():
    ref = reference_element(1)
    cs = solve_sigma(1, 0.0)
    b = boundary_mass(1)
    for f in range(3):
        for j in range(2):
            pt = ref.face_flux_points[f, j]
            assert eval_psi(cs, f, j, pt) == pytest.approx(b[f, j] @ dubiner_eval(1, pt), abs=1e-14)
    with pytest.raises(ValueError):
        eval_psi(cs, 0, 0, (5.0, 5.0))
    with pytest.raises(IndexError):
        eval_psi(cs, 3, 0, (0.0, 0.0))


def test_dg_delta_identity():
    assert dg_delta_check(1) <= 1e-13
    assert dg_delta_check(2) <= 1e-12
    assert dg_delta_check(3) <= 1e-12
    assert dg_delta_check(2, 4.3e-2) > 1e-6
    assert dg_delta_check(3, 6.0e-4) > 1e-6


def test_residual_kappa_independent():
    sp2 = reference_element(2).solution_points
    d = r_residual(2, 0.0, 0.0, 0, 0, sp2) - r_residual(2, 0.0, 4.3e-2, 0, 0, sp2)
    assert np.abs(d).max() < 1e-10
    sp3 = reference_element(3).solution_points
    for e in range(3):
        for i in range(4):
            d = r_residual(3, 6.0e-4, 0.0, e, i, sp3) - r_residual(3, 6.0e-4, 6.0e-4, e, i, sp3)
            assert np.abs(d).max() < 1e-10


def test_residual_linear_split_vanishes():
    sp = reference_element(1).solution_points
    for kappa in (0.0, 0.3, 10.0):
        for e in range(3):
            for i in range(2):
                assert np.abs(r_residual_split(1, 0.0, kappa, e, i, sp)).max() < 1e-12


@settings(max_examples=25, deadline=None)
@given(st.integers(1, 4), st.floats(0.0, 10.0), st.floats(0.0, 10.0))
def test_residual_independent_of_kappa_property(p, k1, k2):
    sp = reference_element(p).solution_points
    r1 = r_residual(p, 0.0, k1, 0, 0, sp)
    r2 = r_residual(p, 0.0, k2, 0, 0, sp)
    assert np.abs(r1 - r2).max() <= 1e-9 * max(1.0, np.abs(r1).max())


@settings(max_examples=25, deadline=None)
@given(st.integers(1, 4), st.floats(0.0, 100.0))
def test_constant_mode_unfiltered(p, param):
    """The filter only acts on top-degree modes: the mean of every field is w_j/area."""
    cs = solve_sigma(p, param)
    assert np.allclose(cs.sigma[..., 0], boundary_mass(p)[..., 0], atol=1e-14)
