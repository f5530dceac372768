"""Periodic lattice meshes of straight-sided triangles and their geometric factors.

Every mesh here is a periodic tiling by a two-triangle cell spanned by lattice
vectors B1, B2: triangles (0, B1, B2) and (B1, B1+B2, B2). The uniform square
mesh is the case B1=(h,0), B2=(0,h), i.e. each square cut along the same
diagonal. Element vertices are stored unwrapped so every element is an honest
affine image of the reference triangle; neighbours across the periodic
boundary are found by matching face midpoints modulo the lattice.
"""
from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property

import numpy as np

from .refelem import FACE_VERTICES, SQRT3, VERTICES, barycentric, reference_element


class MeshError(ValueError):
    pass


@dataclass(frozen=True)
class TriMesh:
    """Periodic triangle mesh.

    ``elem_verts[n]`` holds the three (unwrapped) vertices of element n in
    counterclockwise order. ``neighbor[n, f]``/``neighbor_face[n, f]`` give the
    element and local face across face f, ``shift[n, f]`` the integer lattice
    offset (in periods) of that neighbour, and ``perm[n, f, j]`` the neighbour's
    flux-point index coinciding with local flux point j.
    """

    elem_verts: np.ndarray
    B1: np.ndarray
    B2: np.ndarray
    nx: int
    ny: int
    origin: np.ndarray
    neighbor: np.ndarray
    neighbor_face: np.ndarray
    shift: np.ndarray
    cell: np.ndarray      # (K, 2) lattice cell index of each element

    @property
    def K(self) -> int:
        return self.elem_verts.shape[0]

    @property
    def periods(self) -> tuple[np.ndarray, np.ndarray]:
        return self.nx * self.B1, self.ny * self.B2

    @cached_property
    def edges(self) -> np.ndarray:
        """(n_edges, 4) rows (left elem, left face, right elem, right face)."""
        rows = []
        for n in range(self.K):
            for f in range(3):
                m, g = int(self.neighbor[n, f]), int(self.neighbor_face[n, f])
                if (n, f) < (m, g):
                    rows.append((n, f, m, g))
        return np.array(rows, dtype=int)

    @cached_property
    def edge_periodic(self) -> np.ndarray:
        e = self.edges
        return np.any(self.shift[e[:, 0], e[:, 1]] != 0, axis=1)

    def trace_perm(self, p: int) -> np.ndarray:
        """(K, 3, p+1) neighbour flux-point index matching each local flux point."""
        return _trace_perm(self, p)

    def map_to_physical(self, pts) -> np.ndarray:
        """Affine images of reference points in every element, shape (K, n, 2)."""
        lam = barycentric(np.atleast_2d(pts))
        return np.einsum("qa,kad->kqd", lam, self.elem_verts)

    def map_to_reference(self, n: int, x) -> np.ndarray:
        v = self.elem_verts[n]
        J = _jacobian(v)
        return np.linalg.solve(J, (np.atleast_2d(x) - v[0]).T).T + VERTICES[0]


def _jacobian(v: np.ndarray) -> np.ndarray:
    # x(r) = v1 + J (r - rv1), with reference edges rv2-rv1 = (2,0), rv3-rv1 = (1, sqrt3)
    R = np.column_stack([VERTICES[1] - VERTICES[0], VERTICES[2] - VERTICES[0]])
    X = np.column_stack([v[1] - v[0], v[2] - v[0]])
    return X @ np.linalg.inv(R)


def build_lattice(B1, B2, nx: int, ny: int, origin=(0.0, 0.0)) -> TriMesh:
    B1 = np.asarray(B1, dtype=float)
    B2 = np.asarray(B2, dtype=float)
    origin = np.asarray(origin, dtype=float)
    if nx < 1 or ny < 1:
        raise MeshError("need at least one lattice cell per direction")
    area = abs(B1[0] * B2[1] - B1[1] * B2[0])
    scale = max(np.hypot(*B1), np.hypot(*B2))
    if area < 1e-10 * scale ** 2:
        raise MeshError("degenerate lattice cell")
    if B1[0] * B2[1] - B1[1] * B2[0] < 0:
        raise MeshError("lattice vectors must be counterclockwise")
    verts, cells = [], []
    for j in range(ny):
        for i in range(nx):
            o = origin + i * B1 + j * B2
            verts.append([o, o + B1, o + B2])
            verts.append([o + B1, o + B1 + B2, o + B2])
            cells += [(i, j), (i, j)]
    ev = np.array(verts)
    cell = np.array(cells, dtype=int)
    K = ev.shape[0]

    # lattice coordinates of face midpoints, reduced modulo the periods
    L = np.column_stack([B1, B2])
    mids = np.empty((K, 3, 2))
    for f, (a, b) in enumerate(FACE_VERTICES):
        mids[:, f] = 0.5 * (ev[:, a] + ev[:, b])
    lat = np.linalg.solve(L, (mids - origin).reshape(-1, 2).T).T.reshape(K, 3, 2)
    # midpoints sit on half-integer lattice coordinates; use a doubled integer key
    key2 = np.rint(2.0 * lat).astype(int)
    if np.abs(2.0 * lat - key2).max() > 1e-9:
        raise MeshError("face midpoints off the half lattice")
    wrapped = np.stack([np.mod(key2[..., 0], 2 * nx), np.mod(key2[..., 1], 2 * ny)], axis=-1)
    table: dict[tuple[int, int], list[tuple[int, int]]] = {}
    for n in range(K):
        for f in range(3):
            table.setdefault(tuple(wrapped[n, f]), []).append((n, f))
    neighbor = np.full((K, 3), -1, dtype=int)
    nface = np.full((K, 3), -1, dtype=int)
    shift = np.zeros((K, 3, 2), dtype=int)
    for slot in table.values():
        if len(slot) != 2:
            raise MeshError(f"edge shared by {len(slot)} faces")
        (n, f), (m, g) = slot
        neighbor[n, f], nface[n, f] = m, g
        neighbor[m, g], nface[m, g] = n, f
        d = (key2[m, g] - key2[n, f]) // 2
        # neighbour copy sits at its stored position minus d periods
        per = np.array([d[0] // nx if nx else 0, d[1] // ny if ny else 0])
        shift[n, f] = -per
        shift[m, g] = per
    return TriMesh(ev, B1, B2, nx, ny, origin, neighbor, nface, shift, cell)


def build_periodic_square(nx: int, ny: int | None = None, domain=(-1.0, 1.0, -1.0, 1.0)) -> TriMesh:
    """Uniform nx-by-ny square cells on a box, each split into two triangles."""
    ny = nx if ny is None else ny
    if nx < 2 or ny < 2:
        raise MeshError("need Nx, Ny >= 2")
    x0, x1, y0, y1 = domain
    if not (x1 > x0 and y1 > y0):
        raise MeshError("degenerate box")
    return build_lattice(((x1 - x0) / nx, 0.0), (0.0, (y1 - y0) / ny), nx, ny, (x0, y0))


def build_pattern(gamma: float, deltaB: float = 1.0, copies: int = 1) -> TriMesh:
    """Two-triangle pattern spanned by B1=(dB,0), B2=dB(cos g, sin g); gamma in radians.

    ``copies`` > 1 tiles the pattern copies x copies times with periodic wrap,
    which gives every pattern four distinct neighbours when copies >= 3.
    """
    B1 = np.array([deltaB, 0.0])
    B2 = deltaB * np.array([np.cos(gamma), np.sin(gamma)])
    if abs(np.sin(gamma)) * deltaB ** 2 < 1e-10 * deltaB ** 2 or not (0.0 < gamma < np.pi):
        raise MeshError("degenerate pattern angle")
    return build_lattice(B1, B2, copies, copies)


def _trace_perm(mesh: TriMesh, p: int) -> np.ndarray:
    ref = reference_element(p)
    fp = ref.face_flux_points.reshape(-1, 2)
    phys = mesh.map_to_physical(fp).reshape(mesh.K, 3, p + 1, 2)
    P1, P2 = mesh.periods
    perm = np.empty((mesh.K, 3, p + 1), dtype=int)
    scale = np.hypot(*P1) + np.hypot(*P2)
    for n in range(mesh.K):
        for f in range(3):
            m, g = mesh.neighbor[n, f], mesh.neighbor_face[n, f]
            s = mesh.shift[n, f]
            there = phys[m, g] + s[0] * P1 + s[1] * P2
            d = np.linalg.norm(phys[n, f][:, None, :] - there[None, :, :], axis=-1)
            idx = d.argmin(axis=1)
            if d[np.arange(p + 1), idx].max() > 1e-9 * scale:
                raise MeshError(f"flux points of element {n} face {f} do not match")
            perm[n, f] = idx
    return perm


@dataclass(frozen=True)
class GeomFactors:
    """Per-element affine data and per-face quantities.

    ``edge_jac`` is the edge Jacobian, physical length over reference length
    (reference edges have length 2); ``Fs = edge_jac / detJ``.
    """

    J: np.ndarray          # (K, 2, 2)
    detJ: np.ndarray       # (K,)
    Jinv: np.ndarray       # (K, 2, 2)
    metric: np.ndarray     # (K, 2, 2) Jinv Jinv^T
    normals: np.ndarray    # (K, 3, 2) unit outward physical normals
    edge_length: np.ndarray  # (K, 3)
    edge_jac: np.ndarray   # (K, 3)
    Fs: np.ndarray         # (K, 3)


def geometric_factors(mesh: TriMesh) -> GeomFactors:
    ev = mesh.elem_verts
    K = mesh.K
    J = np.stack([_jacobian(ev[n]) for n in range(K)])
    detJ = np.linalg.det(J)
    if np.any(detJ <= 0):
        raise MeshError("non-positive Jacobian")
    Jinv = np.linalg.inv(J)
    metric = Jinv @ np.transpose(Jinv, (0, 2, 1))
    normals = np.empty((K, 3, 2))
    length = np.empty((K, 3))
    for f, (a, b) in enumerate(FACE_VERTICES):
        t = ev[:, b] - ev[:, a]
        length[:, f] = np.hypot(t[:, 0], t[:, 1])
        normals[:, f, 0] = t[:, 1] / length[:, f]
        normals[:, f, 1] = -t[:, 0] / length[:, f]
    edge_jac = 0.5 * length
    return GeomFactors(J, detJ, Jinv, metric, normals, length, edge_jac, edge_jac / detJ[:, None])


def reference_triangle_area() -> float:
    return SQRT3
