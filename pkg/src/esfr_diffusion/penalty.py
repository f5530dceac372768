"""Closed-form penalty bounds for IP and BR2, kappa sweeps, empirical searches."""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .esfr import solve_sigma
from .mesh import TriMesh, geometric_factors
from .refelem import reference_element
from .solver import DiffusionConfig, Discretization, integrate, project, stable_dt

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class PenaltyBounds:
    """Per-edge, per-flux-point bounds in the left element's flux-point order.

    ``values[e, i]`` is the bound for edge ``mesh.edges[e]``; ``per_face`` holds
    the same numbers scattered to (K, 3, Nfp) so it can be passed straight to
    a DiffusionConfig. ``inapplicable`` flags BR2 entries whose denominator is
    not positive (always all-False for IP).
    """

    kind: str
    values: np.ndarray
    per_face: np.ndarray
    kappa: float
    p: int
    inapplicable: np.ndarray = field(default=None)

    @property
    def max(self) -> float:
        return float(self.values.max())


def _local_terms(mesh: TriMesh, p: int, kappa: float):
    """Per element k, local face e, point i: IP bracket, BR2 numerator and denominator.

    T   = Fs_e (psi_ei(r_ei) - |psi_ei(r_ei)|)
          + sum_f Fs_f |n_e.n_f| / 2 sum_j (|psi_fj(r_ei)| + w_j/w_i |psi_ei(r_fj)|)
    N   = T / Fs_e
    D   = psiDG_ei(r_ei) + |psiDG_ei(r_ei)| - 1/2 sum_j (|psiDG_ej(r_ei)| + w_j/w_i |psiDG_ei(r_ej)|)
    """
    ref = reference_element(p)
    g = geometric_factors(mesh)
    w = ref.gl_weights
    C = solve_sigma(p, kappa).at_flux_points()     # C[f, j, e, i] = psi_fj(r_ei)
    D = solve_sigma(p, 0.0).at_flux_points()
    ratio = w[None, :] / w[:, None]                  # ratio[i, j] = w_j / w_i
    # A[f, e, i] = sum_j |psi_fj(r_ei)| + w_j/w_i |psi_ei(r_fj)|
    A = np.abs(C).sum(axis=1) + np.einsum("ij,eifj->fei", ratio, np.abs(C))
    ndot = np.abs(np.einsum("kfd,ked->kfe", g.normals, g.normals))   # |n_f . n_e|
    face = 0.5 * np.einsum("kf,kfe,fei->kei", g.Fs, ndot, A)
    diag = np.einsum("eiei->ei", C)
    T = g.Fs[:, :, None] * (diag - np.abs(diag))[None] + face
    N = T / g.Fs[:, :, None]
    dd = np.einsum("eiei->ei", D)
    Dsum = np.einsum("ejei->ei", np.abs(D)) + np.einsum("ij,eiej->ei", ratio, np.abs(D))
    den = dd + np.abs(dd) - 0.5 * Dsum
    return T, N, np.broadcast_to(den, T.shape), g


def _scatter(mesh: TriMesh, perm: np.ndarray, vals: np.ndarray, p: int) -> np.ndarray:
    out = np.zeros((mesh.K, 3, p + 1))
    e = mesh.edges
    out[e[:, 0], e[:, 1]] = vals
    right = perm[e[:, 0], e[:, 1]]
    out[e[:, 2][:, None], e[:, 3][:, None], right] = vals
    return out


def tau_star(mesh: TriMesh, p: int, kappa: float) -> PenaltyBounds:
    """IP bound tau*_ei = 1/4 sum over the two incident elements of the bracket T."""
    T, _, _, _ = _local_terms(mesh, p, kappa)
    perm = mesh.trace_perm(p)
    e = mesh.edges
    right = perm[e[:, 0], e[:, 1]]
    vals = 0.25 * (T[e[:, 0], e[:, 1]] + T[e[:, 2][:, None], e[:, 3][:, None], right])
    return PenaltyBounds("tau", vals, _scatter(mesh, perm, vals, p), kappa, p,
                         np.zeros(vals.shape, dtype=bool))


def s_star(mesh: TriMesh, p: int, kappa: float) -> PenaltyBounds:
    """BR2 bound from the energy inequality: s*_ei = sum_k Fs_k N_k / sum_k Fs_k D_k.

    On meshes where both sides carry the same face scale this is the mean of
    the two per-element ratios N_k / D_k.
    """
    _, N, Den, g = _local_terms(mesh, p, kappa)
    perm = mesh.trace_perm(p)
    e = mesh.edges
    right = perm[e[:, 0], e[:, 1]]
    Fl = g.Fs[e[:, 0], e[:, 1]][:, None]
    Fr = g.Fs[e[:, 2], e[:, 3]][:, None]
    num = Fl * N[e[:, 0], e[:, 1]] + Fr * N[e[:, 2][:, None], e[:, 3][:, None], right]
    den = Fl * Den[e[:, 0], e[:, 1]] + Fr * Den[e[:, 2][:, None], e[:, 3][:, None], right]
    bad = den <= 0
    vals = np.where(bad, np.inf, num / np.where(bad, 1.0, den))
    vals = np.maximum(vals, 0.0)
    if bad.any():
        log.warning("BR2 bound inapplicable on %d edge points (non-positive denominator)", int(bad.sum()))
    return PenaltyBounds("s", vals, _scatter(mesh, perm, vals, p), kappa, p, bad)


def s_star_sum_of_ratios(mesh: TriMesh, p: int, kappa: float) -> np.ndarray:
    """The bound written as sum_k N_k / D_k; exactly twice s_star on congruent meshes."""
    _, N, Den, _ = _local_terms(mesh, p, kappa)
    perm = mesh.trace_perm(p)
    e = mesh.edges
    right = perm[e[:, 0], e[:, 1]]
    return (N[e[:, 0], e[:, 1]] / Den[e[:, 0], e[:, 1]]
            + N[e[:, 2][:, None], e[:, 3][:, None], right] / Den[e[:, 2][:, None], e[:, 3][:, None], right])


def kappa_sweep(mesh: TriMesh, p: int, kappas, kind: str = "tau") -> tuple[np.ndarray, np.ndarray, float]:
    """Max bound for each kappa; returns (kappas, maxima, argmin kappa)."""
    kappas = np.asarray(kappas, dtype=float)
    fn = tau_star if kind == "tau" else s_star
    vals = np.array([fn(mesh, p, k).max for k in kappas])
    return kappas, vals, float(kappas[int(np.argmin(vals))])


# ---------------------------------------------------------------------------
# empirical minimal penalty

@dataclass
class SearchResult:
    penalty: float | None
    tried: list = field(default_factory=list)     # (penalty, stable, max|u|, steps)
    dt: float = 0.0

    @property
    def found(self) -> bool:
        return self.penalty is not None


def run_is_stable(mesh, p, flux, c, kappa, penalty, b=0.1, cfl=1e-2, t_final=2.0,
                  umax=2.0, dt=None) -> tuple[bool, float, int]:
    """Sine decay run; stable when |u| stays <= umax at every solution point and step."""
    cfg = DiffusionConfig(b=b, flux=flux, penalty=penalty, c=c, kappa=kappa)
    disc = Discretization(mesh, p, cfg)
    u0 = project(mesh, p, lambda x, y: np.sin(np.pi * x) * np.sin(np.pi * y))
    if dt is None:
        dt = stable_dt(mesh, p, b, cfl)
    res = integrate(u0, disc, t_final, dt, umax=umax)
    return (not res.diverged), res.max_abs, res.steps


def empirical_penalty_search(mesh: TriMesh, p: int, flux: str, c: float, kappa: float,
                             start: float, step: float, cap: float, b: float = 0.1,
                             cfl: float = 1e-2, t_final: float = 2.0, umax: float = 2.0,
                             strategy: str = "scan") -> SearchResult:
    """Smallest penalty on the grid start + k*step giving a stable run.

    ``scan`` walks the grid upward from ``start``; ``bisect`` assumes stability
    is monotone in the penalty and bisects on the same grid (same answer,
    far fewer runs). Returns penalty None when nothing up to ``cap`` is stable.
    """
    dt = stable_dt(mesh, p, b, cfl)
    out = SearchResult(None, dt=dt)
    nmax = int(np.floor((cap - start) / step + 1e-9))
    grid = lambda k: round(start + k * step, 10)

    def test(k):
        pen = grid(k)
        ok, m, steps = run_is_stable(mesh, p, flux, c, kappa, pen, b, cfl, t_final, umax, dt)
        out.tried.append((pen, ok, m, steps))
        log.info("penalty %.4f: %s (max|u|=%.3g)", pen, "stable" if ok else "unstable", m)
        return ok

    if strategy == "scan":
        for k in range(nmax + 1):
            if test(k):
                out.penalty = grid(k)
                return out
        return out
    if strategy != "bisect":
        raise ValueError(f"unknown search strategy {strategy!r}")
    if test(0):
        out.penalty = grid(0)
        return out
    if not test(nmax):
        return out
    lo, hi = 0, nmax
    while hi - lo > 1:
        mid = (lo + hi) // 2
        if test(mid):
            hi = mid
        else:
            lo = mid
    out.penalty = grid(hi)
    return out
