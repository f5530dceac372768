"""Bloch-wave stability of the two-triangle pattern and the RK54 time-step limit.

The pattern (0, B1, B2) + (B1, B1+B2, B2) with B1 = (dB, 0) and
B2 = dB (cos g, sin g) is tiled periodically. For a wave vector k the
semi-discrete system on one pattern is d(u)/dt = S(k) u with

    S = A + B e^{i k.B2} + C e^{-i k.B2} + D e^{-i k.B1} + E e^{i k.B1},

where A couples the pattern to itself and B, C, D, E to the neighbours at
+B2, -B2, -B1, +B1. One RK54 step multiplies by R(dt S), R the scheme's
stability polynomial.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .esfr import c_plus
from .mesh import build_pattern
from .penalty import s_star, tau_star
from .solver import DiffusionConfig, Discretization, lattice_blocks, rk54_poly_coeffs


@dataclass(frozen=True)
class PatternOperator:
    A: np.ndarray
    B: np.ndarray
    C: np.ndarray
    D: np.ndarray
    E: np.ndarray
    gamma: float       # radians
    deltaB: float
    p: int
    flux: str
    c: float
    kappa: float
    penalty_scale: float

    @property
    def blocks(self) -> tuple[np.ndarray, ...]:
        return self.A, self.B, self.C, self.D, self.E


def assemble_pattern(gamma: float, p: int, flux: str, c: float, kappa: float,
                     penalty_scale: float = 1.0, penalty=None, bound_kappa: float | None = None,
                     b: float = 1.0, deltaB: float = 1.0) -> PatternOperator:
    """Operator blocks of the pattern, extracted from the mesh operator on a 3x3 tiling.

    ``gamma`` is in radians. Unless an explicit ``penalty`` is given the
    penalty is ``penalty_scale`` times the pattern's own per-edge bound,
    evaluated with ``bound_kappa`` (default: c+ for this angle).
    """
    mesh = build_pattern(gamma, deltaB, copies=3)
    if penalty is None:
        if bound_kappa is None:
            bound_kappa = c_plus(p, np.degrees(gamma))
        bnd = (tau_star if flux == "ip" else s_star)(mesh, p, bound_kappa)
        penalty = penalty_scale * bnd.per_face
    disc = Discretization(mesh, p, DiffusionConfig(b=b, flux=flux, penalty=penalty, c=c, kappa=kappa))
    G = lattice_blocks(disc)
    return PatternOperator(G[(0, 0)], G[(0, 1)], G[(0, -1)], G[(-1, 0)], G[(1, 0)],
                           gamma, deltaB, p, flux, c, kappa, penalty_scale)


def bloch_matrix(op: PatternOperator, kmag, theta) -> np.ndarray:
    """S(|k|, theta); broadcasts over array arguments (trailing two axes are the matrix)."""
    kmag = np.asarray(kmag, dtype=float)[..., None, None]
    theta = np.asarray(theta, dtype=float)[..., None, None]
    p2 = kmag * op.deltaB * np.cos(op.gamma - theta)
    p1 = kmag * op.deltaB * np.cos(theta)
    return (op.A + op.B * np.exp(1j * p2) + op.C * np.exp(-1j * p2)
            + op.D * np.exp(-1j * p1) + op.E * np.exp(1j * p1))


def rk54_radius(z) -> np.ndarray:
    """|R(z)| for the RK54 stability polynomial."""
    return np.abs(np.polynomial.polynomial.polyval(z, rk54_poly_coeffs()))


def amplification_radius(S: np.ndarray, dt: float) -> float:
    """Spectral radius of R(dt S), computed as max |R(dt lambda)| over eig(S)."""
    lam = np.linalg.eigvals(S)
    if not np.all(np.isfinite(lam)):
        raise np.linalg.LinAlgError("eigenvalue computation failed")
    return float(rk54_radius(dt * lam).max())


def _spectra(op: PatternOperator, kmag: np.ndarray, theta: np.ndarray) -> np.ndarray:
    K, T = np.meshgrid(kmag, theta, indexing="ij")
    S = bloch_matrix(op, K, T)
    return np.linalg.eigvals(S).reshape(-1)


def _max_radius(lam: np.ndarray, dt: float) -> float:
    return float(rk54_radius(dt * lam).max())


def _bisect(lam: np.ndarray, dt0: float, rtol: float) -> float:
    lo, hi = 0.0, dt0
    while _max_radius(lam, hi) <= 1.0 + 1e-12:
        lo, hi = hi, 2.0 * hi
    while hi - lo > rtol * hi:
        mid = 0.5 * (lo + hi)
        if _max_radius(lam, mid) <= 1.0 + 1e-12:
            lo = mid
        else:
            hi = mid
    return lo


def dtmax_search(op: PatternOperator, nk: int = 64, ntheta: int = 64, rtol: float = 1e-4,
                 refine: bool = True) -> float:
    """Largest dt with max radius <= 1 + 1e-12 over the (|k|, theta) grid on [0, 2pi]^2.

    The grid result is then refined on a 2x finer local grid around the
    wave vector that limits the step.
    """
    kmag = np.linspace(0.0, 2.0 * np.pi, nk)
    theta = np.linspace(0.0, 2.0 * np.pi, ntheta)
    K, T = np.meshgrid(kmag, theta, indexing="ij")
    lam = np.linalg.eigvals(bloch_matrix(op, K, T))        # (nk, nt, n)
    scale = np.abs(lam).max()
    dt0 = 1.0 / scale if scale > 0 else 1.0
    dt = _bisect(lam.reshape(-1), dt0, rtol)
    if not refine:
        return dt
    # locate the limiting wave vector just above the found dt
    rad = rk54_radius(dt * (1.0 + 4 * rtol) * lam).max(axis=-1)
    i, j = np.unravel_index(np.argmax(rad), rad.shape)
    dk = kmag[1] - kmag[0]
    dth = theta[1] - theta[0]
    k2 = np.clip(np.linspace(kmag[i] - dk, kmag[i] + dk, 5), 0.0, 2.0 * np.pi)
    t2 = np.linspace(theta[j] - dth, theta[j] + dth, 5)
    lam2 = _spectra(op, k2, t2)
    return _bisect(np.concatenate([lam.reshape(-1), lam2]), dt, rtol)


def solver_dtmax(disc: Discretization, rtol: float = 1e-4) -> float:
    """Largest stable RK54 step for the assembled mesh operator itself.

    Uses the exact spectrum of the full operator: on a uniform lattice this is
    the union of the Fourier-block spectra at the mesh's own wave numbers,
    otherwise a dense eigenvalue solve of the sparse matrix.
    """
    mesh = disc.mesh
    try:
        G = lattice_blocks(disc)
    except ValueError:
        lam = np.linalg.eigvals(disc.matrix.toarray())
    else:
        kx = 2 * np.pi * np.fft.fftfreq(mesh.nx)[:, None, None, None]
        ky = 2 * np.pi * np.fft.fftfreq(mesh.ny)[None, :, None, None]
        S = (G[(0, 0)] + G[(1, 0)] * np.exp(1j * kx) + G[(-1, 0)] * np.exp(-1j * kx)
             + G[(0, 1)] * np.exp(1j * ky) + G[(0, -1)] * np.exp(-1j * ky))
        lam = np.linalg.eigvals(S).reshape(-1)
    scale = np.abs(lam).max()
    return _bisect(lam, 1.0 / scale if scale > 0 else 1.0, rtol)
