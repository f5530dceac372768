"""ESFR correction fields and the kappa-independence residual.

A correction field is the divergence of a correction function h_fj whose
normal trace is a delta at flux point j of face f. Only its modal
coefficients sigma are built: (I + param*K) sigma_fj = b_fj with
b_fj,i = w_j L_i(r_fj).
"""
from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .refelem import dubiner_eval, dubiner_grad, inside, reference_element, volume_quadrature

# Table values of the energy-stable parameter that maximises the advection time step.
C_PLUS = {
    2: {60: 4.3e-2, 90: 4.3e-2},
    3: {60: 6.4e-4, 90: 6.0e-4},
}


def c_plus(p: int, gamma_deg: float = 90.0) -> float:
    try:
        table = C_PLUS[p]
    except KeyError:
        raise ValueError(f"no tabulated c+ for p={p}") from None
    return table[60] if abs(gamma_deg - 60.0) < 1e-9 else table[90]


@dataclass(frozen=True)
class CorrectionSet:
    p: int
    param: float
    sigma: np.ndarray          # (3, Nfp, Np)
    boundary_mass: np.ndarray  # (3, Nfp, Np)

    def values(self, pts) -> np.ndarray:
        """All correction fields at points: shape (n, 3, Nfp)."""
        L = np.atleast_2d(dubiner_eval(self.p, pts))
        return np.einsum("qi,fji->qfj", L, self.sigma)

    def at_flux_points(self) -> np.ndarray:
        """C[f, j, g, k] = field (f, j) evaluated at flux point (g, k)."""
        ref = reference_element(self.p)
        return np.einsum("gki,fji->fjgk", ref.face_basis, self.sigma)

    def at_solution_points(self) -> np.ndarray:
        """(Np_sp, 3, Nfp) nodal values at the solution points."""
        ref = reference_element(self.p)
        return np.einsum("qi,fji->qfj", ref.vandermonde, self.sigma)


def boundary_mass(p: int) -> np.ndarray:
    """b[f, j, i] = integral over the boundary of (h_fj . n) L_i = w_j L_i(r_fj)."""
    ref = reference_element(p)
    return ref.gl_weights[None, :, None] * ref.face_basis


@lru_cache(maxsize=None)
def solve_sigma(p: int, param: float) -> CorrectionSet:
    if not np.isfinite(param) or param < 0:
        raise ValueError(f"correction parameter must be >= 0, got {param}")
    ref = reference_element(p)
    b = boundary_mass(p)
    A = np.eye(ref.Np) + param * ref.deriv_form
    sigma = np.linalg.solve(A, b.reshape(-1, ref.Np).T).T.reshape(b.shape)
    res = np.abs(sigma.reshape(-1, ref.Np) @ A.T - b.reshape(-1, ref.Np)).max()
    if res > 1e-12 * max(1.0, np.abs(A).max()):
        raise RuntimeError(f"correction system residual {res:.3e}")
    sigma.setflags(write=False)
    b.setflags(write=False)
    return CorrectionSet(p, float(param), sigma, b)


def eval_psi(cs: CorrectionSet, f: int, j: int, pt) -> np.ndarray:
    """Correction field (f, j) at pt (0-based face and point indices)."""
    if not (0 <= f < 3 and 0 <= j < cs.p + 1):
        raise IndexError(f"invalid face/point ({f}, {j})")
    pts = np.atleast_2d(np.asarray(pt, dtype=float))
    if not np.all(inside(pts)):
        raise ValueError("point outside the reference element")
    out = dubiner_eval(cs.p, pts) @ cs.sigma[f, j]
    return out[0] if np.ndim(pt) == 1 else out


def dg_delta_check(p: int, param: float = 0.0) -> float:
    """max |int phi_fj Phi - w_j Phi(r_fj)| over the basis Phi and all (f, j)."""
    ref = reference_element(p)
    cs = solve_sigma(p, param)
    qp, qw = volume_quadrature(2 * p)
    L = dubiner_eval(p, qp)
    phi = L @ cs.sigma.reshape(-1, ref.Np).T             # (q, 3*Nfp)
    lhs = (phi * qw[:, None]).T @ L                      # (3*Nfp, Np)
    rhs = (ref.gl_weights[None, :, None] * ref.face_basis).reshape(-1, ref.Np)
    return float(np.abs(lhs - rhs).max())


def r_residual(p: int, c: float, kappa: float, e: int, i: int, pts) -> np.ndarray:
    """R_ei at points: -grad psi_ei . n_e + sum_fj psi_ei(r_fj)(n_e . n_f) phi_fj."""
    ref = reference_element(p)
    phi = solve_sigma(p, c)
    psi = solve_sigma(p, kappa)
    pts = np.atleast_2d(np.asarray(pts, dtype=float))
    n = ref.normals
    grad = np.einsum("qkd,k->qd", dubiner_grad(p, pts), psi.sigma[e, i])
    out = -grad @ n[e]
    psi_fp = ref.face_basis @ psi.sigma[e, i]            # (3, Nfp)
    phi_pts = phi.values(pts)                            # (q, 3, Nfp)
    out = out + np.einsum("fj,f,qfj->q", psi_fp, n @ n[e], phi_pts)
    return out


def r_residual_split(p: int, c: float, kappa: float, e: int, i: int, pts) -> np.ndarray:
    """The part of R_ei carried by the non-constant modes of psi_ei.

    For p=1 this is the only place kappa enters; it must vanish identically.
    """
    ref = reference_element(p)
    phi = solve_sigma(p, c)
    psi = solve_sigma(p, kappa)
    sig = psi.sigma[e, i].copy()
    sig[0] = 0.0
    pts = np.atleast_2d(np.asarray(pts, dtype=float))
    n = ref.normals
    grad = np.einsum("qkd,k->qd", dubiner_grad(p, pts), sig)
    out = -grad @ n[e]
    psi_fp = ref.face_basis @ sig
    out = out + np.einsum("fj,f,qfj->q", psi_fp, n @ n[e], phi.values(pts))
    return out
