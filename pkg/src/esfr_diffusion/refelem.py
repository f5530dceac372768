"""Equilateral reference triangle: orthonormal Dubiner basis, nodes, quadrature.

The reference element has vertices (-1, -1/sqrt3), (1, -1/sqrt3), (0, 2/sqrt3).
Faces are the vertex pairs (1,2), (2,3), (3,1), traversed counterclockwise.
The modal basis is the Jacobi-product (Dubiner) basis written on the
collapsed right triangle and rescaled to be orthonormal on the equilateral one.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from functools import lru_cache
from math import comb, factorial, gamma, sqrt

import numpy as np
from scipy.special import eval_jacobi

SQRT3 = sqrt(3.0)
VERTICES = np.array([[-1.0, -1.0 / SQRT3], [1.0, -1.0 / SQRT3], [0.0, 2.0 / SQRT3]])
AREA = SQRT3
FACE_VERTICES = ((0, 1), (1, 2), (2, 0))
# orthonormality on the equilateral element (area sqrt3) vs. the right one (area 2)
_SCALE = sqrt(2.0 / SQRT3)


class ConfigurationError(ValueError):
    """Raised when an element or run cannot be configured as requested."""


def _check_p(p: int) -> None:
    if int(p) != p or p < 1:
        raise ConfigurationError(f"polynomial degree must be an integer >= 1, got {p}")


def n_modes(p: int) -> int:
    return (p + 1) * (p + 2) // 2


def face_normals() -> np.ndarray:
    """Unit outward normals of the three reference faces."""
    out = np.empty((3, 2))
    for f, (a, b) in enumerate(FACE_VERTICES):
        t = VERTICES[b] - VERTICES[a]
        out[f] = np.array([t[1], -t[0]]) / np.hypot(*t)
    return out


def barycentric(pts) -> np.ndarray:
    """Barycentric coordinates (L1, L2, L3) of reference points, shape (..., 3)."""
    pts = np.asarray(pts, dtype=float)
    x, y = pts[..., 0], pts[..., 1]
    l1 = (-3.0 * x + 2.0 - SQRT3 * y) / 6.0
    l2 = (2.0 + 3.0 * x - SQRT3 * y) / 6.0
    l3 = (2.0 + 2.0 * SQRT3 * y) / 6.0
    return np.stack([l1, l2, l3], axis=-1)


def inside(pts, tol: float = 1e-10) -> np.ndarray:
    return np.all(barycentric(pts) >= -tol, axis=-1)


# ---------------------------------------------------------------------------
# 1-D building blocks

def gauss_legendre(n: int) -> tuple[np.ndarray, np.ndarray]:
    """n-point Gauss-Legendre nodes (ascending) and weights on [-1, 1]."""
    if int(n) != n or n < 1:
        raise ConfigurationError(f"Gauss-Legendre needs n >= 1, got {n}")
    x, w = np.polynomial.legendre.leggauss(int(n))
    return x, w


def gauss_lobatto(n: int) -> np.ndarray:
    """n-point Gauss-Lobatto-Legendre nodes on [-1, 1] (n >= 2)."""
    if n == 2:
        return np.array([-1.0, 1.0])
    inner = np.polynomial.legendre.Legendre.basis(n - 1).deriv().roots()
    return np.concatenate([[-1.0], np.sort(inner.real), [1.0]])


def _jacobi_normed(x, n: int, a: float, b: float) -> np.ndarray:
    """Jacobi polynomial P_n^(a,b) normalised to unit weighted L2 norm on [-1, 1]."""
    g = (2.0 ** (a + b + 1) / (2 * n + a + b + 1)
         * gamma(n + a + 1) * gamma(n + b + 1) / (gamma(n + a + b + 1) * factorial(n)))
    return eval_jacobi(n, a, b, x) / sqrt(g)


def _jacobi_normed_grad(x, n: int, a: float, b: float) -> np.ndarray:
    if n == 0:
        return np.zeros_like(np.asarray(x, dtype=float))
    # d/dx P_n^(a,b) = (n+a+b+1)/2 P_{n-1}^(a+1,b+1), carried through the normalisations
    return sqrt(n * (n + a + b + 1)) * _jacobi_normed(x, n - 1, a + 1, b + 1)


# ---------------------------------------------------------------------------
# Dubiner basis

def _mode_indices(p: int) -> list[tuple[int, int]]:
    return [(i, j) for i in range(p + 1) for j in range(p + 1 - i)]


def _collapsed(pts: np.ndarray):
    """Right-triangle coordinates (r, s) and collapsed (a, b) for reference points."""
    x, y = pts[..., 0], pts[..., 1]
    r = x - (SQRT3 * y + 1.0) / 3.0
    s = (2.0 * SQRT3 * y - 1.0) / 3.0
    den = 1.0 - s
    top = np.abs(den) < 1e-14
    a = np.where(top, -1.0, 2.0 * (1.0 + r) / np.where(top, 1.0, den) - 1.0)
    return a, s


def _as_points(pt) -> tuple[np.ndarray, bool]:
    arr = np.asarray(pt, dtype=float)
    single = arr.ndim == 1
    arr = np.atleast_2d(arr)
    if arr.shape[-1] != 2:
        raise ValueError("points must have two coordinates")
    if not np.all(np.isfinite(arr)):
        raise ValueError("non-finite coordinates")
    return arr, single


def dubiner_eval(p: int, pt) -> np.ndarray:
    """Basis values [L_1 .. L_Np] at one point (shape (Np,)) or many (shape (n, Np))."""
    _check_p(p)
    pts, single = _as_points(pt)
    a, b = _collapsed(pts)
    out = np.empty((pts.shape[0], n_modes(p)))
    for m, (i, j) in enumerate(_mode_indices(p)):
        h1 = _jacobi_normed(a, i, 0.0, 0.0)
        h2 = _jacobi_normed(b, j, 2.0 * i + 1.0, 0.0)
        out[:, m] = sqrt(2.0) * h1 * h2 * (1.0 - b) ** i * _SCALE
    return out[0] if single else out


def dubiner_grad(p: int, pt) -> np.ndarray:
    """Basis gradients, shape (Np, 2) for one point or (n, Np, 2) for many."""
    _check_p(p)
    pts, single = _as_points(pt)
    a, b = _collapsed(pts)
    out = np.empty((pts.shape[0], n_modes(p), 2))
    for m, (i, j) in enumerate(_mode_indices(p)):
        fa = _jacobi_normed(a, i, 0.0, 0.0)
        dfa = _jacobi_normed_grad(a, i, 0.0, 0.0)
        gb = _jacobi_normed(b, j, 2.0 * i + 1.0, 0.0)
        dgb = _jacobi_normed_grad(b, j, 2.0 * i + 1.0, 0.0)
        hb = 0.5 * (1.0 - b)
        dr = dfa * gb
        ds = dfa * gb * 0.5 * (1.0 + a)
        if i > 0:
            dr = dr * hb ** (i - 1)
            ds = ds * hb ** (i - 1)
        tmp = dgb * hb ** i
        if i > 0:
            tmp = tmp - 0.5 * i * gb * hb ** (i - 1)
        ds = ds + fa * tmp
        norm = 2.0 ** (i + 0.5) * _SCALE
        dr, ds = dr * norm, ds * norm
        # chain rule back to the equilateral coordinates
        out[:, m, 0] = dr
        out[:, m, 1] = -dr / SQRT3 + 2.0 / SQRT3 * ds
    return out[0] if single else out


# ---------------------------------------------------------------------------
# quadrature on the reference triangle

@lru_cache(maxsize=None)
def volume_quadrature(degree: int) -> tuple[np.ndarray, np.ndarray]:
    """Collapsed Gauss rule exact for polynomials of the given total degree."""
    n = degree // 2 + 2
    xi, wxi = gauss_legendre(n)
    et, wet = gauss_legendre(n)
    X, E = np.meshgrid(xi, et, indexing="ij")
    W = np.outer(wxi, wet) * 0.5 * (1.0 - E)
    r = 0.5 * (1.0 + X) * (1.0 - E) - 1.0
    s = E
    # right triangle -> equilateral (area 2 -> sqrt3)
    lam = np.stack([0.5 * (1.0 + s), -0.5 * (r + s), 0.5 * (1.0 + r)], axis=-1)
    # lam ordering: weight on (top vertex, v1, v2)
    pts = lam[..., 1, None] * VERTICES[0] + lam[..., 2, None] * VERTICES[1] + lam[..., 0, None] * VERTICES[2]
    w = W * (AREA / 2.0)
    return pts.reshape(-1, 2), w.ravel()


# ---------------------------------------------------------------------------
# solution points: alpha-optimised warp & blend nodes

_ALPHA_OPT = (0.0, 0.0, 1.4152, 0.1001, 0.2751, 0.9800, 1.0999,
              1.2832, 1.3648, 1.4773, 1.4959, 1.5743, 1.5770, 1.6223, 1.6258)


def _warp_factor(n: int, rout: np.ndarray) -> np.ndarray:
    lgl = gauss_lobatto(n + 1)
    req = np.linspace(-1.0, 1.0, n + 1)
    # Lagrange interpolant through the equispaced nodes of (LGL - equispaced)
    warp = np.zeros_like(rout)
    for i in range(n + 1):
        li = np.ones_like(rout)
        for k in range(n + 1):
            if k != i:
                li *= (rout - req[k]) / (req[i] - req[k])
        warp += li * (lgl[i] - req[i])
    zerof = np.abs(rout) < 1.0 - 1e-10
    sf = 1.0 - (zerof * rout) ** 2
    return warp / sf + warp * (zerof - 1.0)


def solution_points(p: int) -> np.ndarray:
    """Alpha-optimised warp-and-blend nodes on the equilateral element, shape (Np, 2)."""
    _check_p(p)
    if p > 6:
        raise ConfigurationError("solution points are tabulated for p <= 6")
    alpha = _ALPHA_OPT[p] if p < len(_ALPHA_OPT) else 5.0 / 3.0
    pts = []
    for i in range(p + 1):
        for j in range(p + 1 - i):
            pts.append((i / p, j / p))
    # equispaced barycentric coordinates; L1 on the top vertex as in the warp construction
    l1 = np.array([q[0] for q in pts])
    l3 = np.array([q[1] for q in pts])
    l2 = 1.0 - l1 - l3
    x = -l2 + l3
    y = (-l2 - l3 + 2.0 * l1) / SQRT3
    blend1 = 4.0 * l2 * l3
    blend2 = 4.0 * l1 * l3
    blend3 = 4.0 * l1 * l2
    warpf1 = _warp_factor(p, l3 - l2)
    warpf2 = _warp_factor(p, l1 - l3)
    warpf3 = _warp_factor(p, l2 - l1)
    warp1 = blend1 * warpf1 * (1.0 + (alpha * l1) ** 2)
    warp2 = blend2 * warpf2 * (1.0 + (alpha * l2) ** 2)
    warp3 = blend3 * warpf3 * (1.0 + (alpha * l3) ** 2)
    x = x + warp1 + np.cos(2 * np.pi / 3) * warp2 + np.cos(4 * np.pi / 3) * warp3
    y = y + np.sin(2 * np.pi / 3) * warp2 + np.sin(4 * np.pi / 3) * warp3
    nodes = np.column_stack([x, y])
    v = dubiner_eval(p, nodes)
    if np.linalg.cond(v) > 1e8:
        raise ConfigurationError(f"solution point set for p={p} is not unisolvent")
    return nodes


def face_points(p: int) -> np.ndarray:
    """Gauss-Legendre flux points on each face, shape (3, p+1, 2)."""
    t, _ = gauss_legendre(p + 1)
    out = np.empty((3, p + 1, 2))
    for f, (a, b) in enumerate(FACE_VERTICES):
        out[f] = VERTICES[a] + np.outer(0.5 * (1.0 + t), VERTICES[b] - VERTICES[a])
    return out


# ---------------------------------------------------------------------------
# the assembled element

def _binom(n: int, k: int) -> int:
    return comb(n, k)


@dataclass(frozen=True)
class ReferenceElement:
    """All per-degree reference data used by the solver.

    ``vandermonde[i, j] = L_j(sp_i)``; ``dr``/``ds`` are modal differentiation
    matrices so that the modal coefficients of d(u)/dr are ``dr @ u_modal``.
    ``deriv_form`` is the p-th derivative form matrix K.
    """

    p: int
    Np: int
    Nfp: int
    vertices: np.ndarray
    solution_points: np.ndarray
    face_flux_points: np.ndarray
    gl_nodes: np.ndarray
    gl_weights: np.ndarray
    normals: np.ndarray
    vandermonde: np.ndarray
    vinv: np.ndarray
    dr: np.ndarray
    ds: np.ndarray
    deriv_form: np.ndarray
    face_basis: np.ndarray = field(repr=False)  # (3, Nfp, Np) basis values at flux points

    def to_nodal(self, modal: np.ndarray) -> np.ndarray:
        return modal @ self.vandermonde.T

    def to_modal(self, nodal: np.ndarray) -> np.ndarray:
        return nodal @ self.vinv.T

    def eval(self, modal: np.ndarray, pts) -> np.ndarray:
        return dubiner_eval(self.p, pts) @ modal


def _modal_diff(p: int) -> tuple[np.ndarray, np.ndarray]:
    # project analytic gradients at an exact-degree quadrature onto the orthonormal basis
    qp, qw = volume_quadrature(2 * p)
    L = dubiner_eval(p, qp)
    G = dubiner_grad(p, qp)
    dr = (L * qw[:, None]).T @ G[:, :, 0]
    ds = (L * qw[:, None]).T @ G[:, :, 1]
    return dr, ds


def derivative_form(p: int, dr: np.ndarray | None = None, ds: np.ndarray | None = None) -> np.ndarray:
    """K[i,k] = sum_m binom(p, m-1) (D^(m,p) L_i)(D^(m,p) L_k)."""
    _check_p(p)
    if dr is None or ds is None:
        dr, ds = _modal_diff(p)
    npm = n_modes(p)
    K = np.zeros((npm, npm))
    for m in range(1, p + 2):
        # p-m+1 derivatives in r, m-1 in s; the result is a constant mode
        D = np.linalg.matrix_power(dr, p - m + 1) @ np.linalg.matrix_power(ds, m - 1)
        # constant coefficient: value of the differentiated polynomial = D[0,:] * L_1
        vals = D[0, :] * dubiner_eval(p, np.zeros(2))[0]
        K += _binom(p, m - 1) * np.outer(vals, vals)
    return 0.5 * (K + K.T)


@lru_cache(maxsize=None)
def reference_element(p: int) -> ReferenceElement:
    _check_p(p)
    sp = solution_points(p)
    V = dubiner_eval(p, sp)
    vinv = np.linalg.inv(V)
    dr, ds = _modal_diff(p)
    K = derivative_form(p, dr, ds)
    t, w = gauss_legendre(p + 1)
    fp = face_points(p)
    fb = dubiner_eval(p, fp.reshape(-1, 2)).reshape(3, p + 1, -1)
    arrays = [VERTICES.copy(), sp, fp, t, w, face_normals(), V, vinv, dr, ds, K, fb]
    for a in arrays:
        a.setflags(write=False)
    return ReferenceElement(p, n_modes(p), p + 1, *arrays)
