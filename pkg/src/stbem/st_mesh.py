"""Conforming tetrahedral space-time meshes of the lateral boundary (0,T) x Gamma.

A surface mesh of the scatterer boundary is extruded in time: each
(triangle x time-slab) prism is split into three tetrahedra with splitting
diagonals keyed on global vertex indices, so shared prism faces decompose
identically and the mesh is conforming without neighbor negotiation.

All panel geometry (normals, face conormals, volumes) is precomputed in
batched arrays; ``mesh.panel(i)`` materializes a :class:`~stbem.geometry.Panel`
view for the scalar API.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum

import numpy as np

from .geometry import Panel, PanelFace

# local vertex triple of face i (the face opposite local vertex i)
FACE_LOCAL_TRI = ((1, 2, 3), (0, 2, 3), (0, 1, 3), (0, 1, 2))


class FESpaceTag(Enum):
    """Trial spaces: piecewise constants S0 and continuous hats V1 with
    homogeneous initial condition (vertex values at t = 0 are fixed to 0)."""

    S0 = 0
    V1 = 1


@dataclass
class SurfaceMesh:
    """Watertight triangle mesh of the scatterer boundary Gamma.

    normals holds the outward unit normal per triangle (pointing into the
    exterior domain)."""

    vertices: np.ndarray  # (nv, 3)
    triangles: np.ndarray  # (nt, 3) int
    normals: np.ndarray  # (nt, 3)

    @property
    def num_triangles(self) -> int:
        return len(self.triangles)

    def triangle_areas(self) -> np.ndarray:
        v = self.vertices[self.triangles]
        a = v[:, 1] - v[:, 0]
        b = v[:, 2] - v[:, 0]
        return 0.5 * np.linalg.norm(np.cross(a, b), axis=1)

    def area(self) -> float:
        return float(self.triangle_areas().sum())


def cube_surface(level: int) -> SurfaceMesh:
    """Structured triangulation of the unit-cube boundary (-1/2, 1/2)^3.

    Each face carries a (2^level)^2 grid of squares, each split into two
    triangles: 2 * 4^level triangles per face, 12 * 4^level in total.
    """
    if level < 0:
        raise ValueError("level must be >= 0")
    n = 2**level
    vert_ids = {}
    verts = []

    def vid(ix, iy, iz):
        key = (ix, iy, iz)
        if key not in vert_ids:
            vert_ids[key] = len(verts)
            verts.append((ix / n - 0.5, iy / n - 0.5, iz / n - 0.5))
        return vert_ids[key]

    tris = []
    normals = []
    # face = (fixed axis, fixed lattice value, outward sign)
    for axis in range(3):
        for side, lattice in ((-1, 0), (1, n)):
            # (u, v, axis-out) right-handed for side=+1, swapped for side=-1
            u_axis, v_axis = [a for a in range(3) if a != axis]
            if side < 0:
                u_axis, v_axis = v_axis, u_axis
            nrm = np.zeros(3)
            nrm[axis] = side
            for i in range(n):
                for j in range(n):
                    corner = {}
                    for di in (0, 1):
                        for dj in (0, 1):
                            idx = [0, 0, 0]
                            idx[axis] = lattice
                            idx[u_axis] = i + di
                            idx[v_axis] = j + dj
                            corner[(di, dj)] = vid(*idx)
                    p00, p10 = corner[(0, 0)], corner[(1, 0)]
                    p01, p11 = corner[(0, 1)], corner[(1, 1)]
                    tris.append((p00, p10, p11))
                    tris.append((p00, p11, p01))
                    normals.append(nrm)
                    normals.append(nrm)
    return SurfaceMesh(
        vertices=np.array(verts, dtype=float),
        triangles=np.array(tris, dtype=np.int64),
        normals=np.array(normals, dtype=float),
    )


_ICO_R = (1.0 + np.sqrt(5.0)) / 2.0
_ICO_VERTS = np.array(
    [
        [-1, _ICO_R, 0], [1, _ICO_R, 0], [-1, -_ICO_R, 0], [1, -_ICO_R, 0],
        [0, -1, _ICO_R], [0, 1, _ICO_R], [0, -1, -_ICO_R], [0, 1, -_ICO_R],
        [_ICO_R, 0, -1], [_ICO_R, 0, 1], [-_ICO_R, 0, -1], [-_ICO_R, 0, 1],
    ],
    dtype=float,
)
_ICO_FACES = np.array(
    [
        [0, 11, 5], [0, 5, 1], [0, 1, 7], [0, 7, 10], [0, 10, 11],
        [1, 5, 9], [5, 11, 4], [11, 10, 2], [10, 7, 6], [7, 1, 8],
        [3, 9, 4], [3, 4, 2], [3, 2, 6], [3, 6, 8], [3, 8, 9],
        [4, 9, 5], [2, 4, 11], [6, 2, 10], [8, 6, 7], [9, 8, 1],
    ],
    dtype=np.int64,
)


def sphere_surface(level: int) -> SurfaceMesh:
    """Icosahedral approximation of the unit sphere, subdivided ``level``
    times with vertices projected onto |x| = 1 (20 * 4^level triangles)."""
    if level < 0:
        raise ValueError("level must be >= 0")
    verts = [v / np.linalg.norm(v) for v in _ICO_VERTS]
    faces = [tuple(f) for f in _ICO_FACES]
    for _ in range(level):
        midpoint = {}

        def mid(i, j):
            key = (min(i, j), max(i, j))
            if key not in midpoint:
                m = verts[i] + verts[j]
                verts.append(m / np.linalg.norm(m))
                midpoint[key] = len(verts) - 1
            return midpoint[key]

        new_faces = []
        for a, b, c in faces:
            ab, bc, ca = mid(a, b), mid(b, c), mid(c, a)
            new_faces += [(a, ab, ca), (b, bc, ab), (c, ca, bc), (ab, bc, ca)]
        faces = new_faces

    v = np.array(verts)
    f = np.array(faces, dtype=np.int64)
    tv = v[f]
    nrm = np.cross(tv[:, 1] - tv[:, 0], tv[:, 2] - tv[:, 0])
    nrm /= np.linalg.norm(nrm, axis=1, keepdims=True)
    centroid = tv.mean(axis=1)
    flip = (nrm * centroid).sum(axis=1) < 0.0
    f[flip] = f[flip][:, [0, 2, 1]]
    nrm[flip] = -nrm[flip]
    return SurfaceMesh(vertices=v, triangles=f, normals=nrm)


# ---------------------------------------------------------------------------
# Space-time mesh
# ---------------------------------------------------------------------------


@dataclass
class SpaceTimeMesh:
    """Tetrahedral mesh of the lateral boundary (0, T) x Gamma.

    Panels are stored in a canonical vertex order such that the generalized
    cross product of the edge vectors (with the time component zeroed and
    renormalized) equals the outward panel normal; the ASCII mesh format
    relies on this to round-trip orientation.
    """

    vertices: np.ndarray  # (nv, 4) rows (t, x)
    panels: np.ndarray  # (N, 4) int vertex ids
    T: float
    source: tuple = ("unknown", 0, 1)
    # derived arrays (filled by _build_geometry)
    panel_vertices: np.ndarray = field(default=None, repr=False)
    normals: np.ndarray = field(default=None, repr=False)
    face_anchors: np.ndarray = field(default=None, repr=False)
    face_conormals: np.ndarray = field(default=None, repr=False)
    volumes: np.ndarray = field(default=None, repr=False)
    diameters: np.ndarray = field(default=None, repr=False)
    centroids: np.ndarray = field(default=None, repr=False)

    @property
    def num_panels(self) -> int:
        return len(self.panels)

    @property
    def h(self) -> float:
        return float(self.diameters.max())

    def panel(self, i: int) -> Panel:
        faces = tuple(
            PanelFace(
                anchor=self.face_anchors[i, f].copy(),
                conormal=self.face_conormals[i, f].copy(),
                tri=FACE_LOCAL_TRI[f],
            )
            for f in range(4)
        )
        return Panel(
            vertices=self.panel_vertices[i].copy(),
            normal=self.normals[i].copy(),
            faces=faces,
        )

    # --- trial spaces ------------------------------------------------------

    def v1_active_mask(self) -> np.ndarray:
        """Vertices carrying a V1 degree of freedom (t > 0)."""
        return self.vertices[:, 0] > 0.0

    def v1_index(self) -> np.ndarray:
        """Map vertex id -> V1 dof id (-1 for constrained t = 0 vertices)."""
        mask = self.v1_active_mask()
        idx = np.full(len(self.vertices), -1, dtype=np.int64)
        idx[mask] = np.arange(int(mask.sum()))
        return idx

    def space_dimension(self, tag: FESpaceTag) -> int:
        if tag is FESpaceTag.S0:
            return self.num_panels
        return int(self.v1_active_mask().sum())

    # --- integrity checks ---------------------------------------------------

    def check(self, tol: float = 1e-10) -> None:
        """Raise AssertionError if basic mesh invariants fail."""
        t = self.vertices[:, 0]
        assert t.min() >= -tol and t.max() <= self.T + tol
        assert np.all(np.abs(self.normals[:, 0]) == 0.0)
        nn = np.linalg.norm(self.normals, axis=1)
        assert np.allclose(nn, 1.0, atol=1e-12)
        self._check_conforming()

    def _check_conforming(self) -> None:
        from collections import defaultdict

        count = defaultdict(int)
        for pi in range(self.num_panels):
            ids = self.panels[pi]
            for tri in FACE_LOCAL_TRI:
                key = tuple(sorted(ids[list(tri)]))
                count[key] += 1
        t = self.vertices[:, 0]
        for key, c in count.items():
            if c == 2:
                continue
            if c != 1:
                raise AssertionError(f"face {key} shared by {c} panels")
            tk = t[list(key)]
            at_bottom = np.allclose(tk, 0.0, atol=1e-12)
            at_top = np.allclose(tk, self.T, atol=1e-12)
            if not (at_bottom or at_top):
                raise AssertionError(f"interior face {key} owned by one panel")


def _batched_cross4(e: np.ndarray) -> np.ndarray:
    """Generalized cross product of three 4-vectors, batched: e is (N, 3, 4),
    returns (N, 4) orthogonal to all three rows of each item."""
    out = np.empty((e.shape[0], 4))
    cols = ((1, 2, 3), (0, 2, 3), (0, 1, 3), (0, 1, 2))
    sign = 1.0
    for i, (a, b, c) in enumerate(cols):
        det = (
            e[:, 0, a] * (e[:, 1, b] * e[:, 2, c] - e[:, 1, c] * e[:, 2, b])
            - e[:, 0, b] * (e[:, 1, a] * e[:, 2, c] - e[:, 1, c] * e[:, 2, a])
            + e[:, 0, c] * (e[:, 1, a] * e[:, 2, b] - e[:, 1, b] * e[:, 2, a])
        )
        out[:, i] = sign * det
        sign = -sign
    return out


def _build_geometry(mesh: SpaceTimeMesh, outward: np.ndarray) -> None:
    """Fill the derived panel arrays; ``outward`` is the (N, 3) spatial
    outward normal used to orient panels (canonicalizing vertex order)."""
    pv = mesh.vertices[mesh.panels]
    raw = _batched_cross4(pv[:, 1:] - pv[:, [0]])
    raw[:, 0] = 0.0
    s = (raw[:, 1:] * outward).sum(axis=1)
    flip = s < 0.0
    mesh.panels[flip] = mesh.panels[flip][:, [0, 1, 3, 2]]
    pv = mesh.vertices[mesh.panels]
    raw = _batched_cross4(pv[:, 1:] - pv[:, [0]])
    raw[:, 0] = 0.0
    nn = np.linalg.norm(raw, axis=1, keepdims=True)
    if nn.min() <= 0.0:
        raise ValueError("panel not time-like (degenerate spatial normal)")
    nu = raw / nn

    mesh.panel_vertices = pv
    mesh.normals = nu

    anchors = np.empty((len(pv), 4, 4))
    conorms = np.empty((len(pv), 4, 4))
    for f, tri in enumerate(FACE_LOCAL_TRI):
        a = pv[:, tri[0]]
        b = pv[:, tri[1]]
        c = pv[:, tri[2]]
        opp = pv[:, f]
        e1 = b - a
        e1 /= np.linalg.norm(e1, axis=1, keepdims=True)
        e2 = c - a
        e2 -= (e2 * e1).sum(1, keepdims=True) * e1
        e2 /= np.linalg.norm(e2, axis=1, keepdims=True)
        d = opp - a
        r = (
            d
            - (d * e1).sum(1, keepdims=True) * e1
            - (d * e2).sum(1, keepdims=True) * e2
            - (d * nu).sum(1, keepdims=True) * nu
        )
        rn = np.linalg.norm(r, axis=1, keepdims=True)
        if rn.min() <= 0.0:
            raise ValueError("degenerate panel face")
        anchors[:, f] = a
        conorms[:, f] = -r / rn

    mesh.face_anchors = anchors
    mesh.face_conormals = conorms

    e = pv[:, 1:] - pv[:, [0]]
    g = np.einsum("nid,njd->nij", e, e)
    mesh.volumes = np.sqrt(np.maximum(np.linalg.det(g), 0.0)) / 6.0
    d = pv[:, :, None, :] - pv[:, None, :, :]
    mesh.diameters = np.sqrt((d * d).sum(-1).max(axis=(1, 2)))
    mesh.centroids = pv.mean(axis=1)


def extrude_spacetime(surface: SurfaceMesh, T: float, slabs: int,
                      source: tuple = None) -> SpaceTimeMesh:
    """Extrude a surface mesh into (0, T) with ``slabs`` uniform time slabs.

    Each prism is split into three tetrahedra along diagonals running from
    the lower-indexed bottom vertex to the higher-indexed top vertex
    (Freudenthal-style, keyed on global surface vertex ids), which makes
    neighboring prisms decompose shared quadrilateral faces identically.
    N = 3 * #triangles * slabs.
    """
    if T <= 0.0:
        raise ValueError("T must be positive")
    if slabs < 1:
        raise ValueError("slabs must be >= 1")
    nv = len(surface.vertices)
    times = np.linspace(0.0, T, slabs + 1)
    st_verts = np.empty(((slabs + 1) * nv, 4))
    for k, tk in enumerate(times):
        st_verts[k * nv:(k + 1) * nv, 0] = tk
        st_verts[k * nv:(k + 1) * nv, 1:] = surface.vertices

    tri_sorted = np.sort(surface.triangles, axis=1)
    panels = np.empty((3 * surface.num_triangles * slabs, 4), dtype=np.int64)
    outward = np.empty((len(panels), 3))
    p = 0
    for k in range(slabs):
        lo = k * nv
        hi = (k + 1) * nv
        for t_idx in range(surface.num_triangles):
            v0, v1, v2 = tri_sorted[t_idx]
            b0, b1, b2 = lo + v0, lo + v1, lo + v2
            t0, t1, t2 = hi + v0, hi + v1, hi + v2
            panels[p] = (b0, b1, b2, t2)
            panels[p + 1] = (b0, b1, t1, t2)
            panels[p + 2] = (b0, t0, t1, t2)
            outward[p:p + 3] = surface.normals[t_idx]
            p += 3

    mesh = SpaceTimeMesh(
        vertices=st_verts, panels=panels, T=float(T),
        source=source if source is not None else ("custom", -1, slabs),
    )
    _build_geometry(mesh, outward)
    return mesh


_SURFACE_BUILDERS = {"cube": cube_surface, "sphere": sphere_surface}


def build_mesh(kind: str, level: int, slabs: int, T: float) -> SpaceTimeMesh:
    """Build the space-time mesh of a named scatterer (``cube`` or
    ``sphere``) at the given surface refinement level and slab count."""
    try:
        surf = _SURFACE_BUILDERS[kind](level)
    except KeyError:
        raise ValueError(f"unknown geometry kind {kind!r}") from None
    return extrude_spacetime(surf, T, slabs, source=(kind, level, slabs))


def refine(mesh: SpaceTimeMesh) -> SpaceTimeMesh:
    """Regenerate the mesh one surface level finer with doubled slab count,
    halving h approximately while preserving quasiuniformity."""
    kind, level, slabs = mesh.source
    if kind not in _SURFACE_BUILDERS:
        raise ValueError(
            "refine requires a mesh built by build_mesh/extrude_spacetime "
            f"from a named surface, got source kind {kind!r}"
        )
    return build_mesh(kind, level + 1, slabs * 2, mesh.T)


# ---------------------------------------------------------------------------
# ASCII mesh format
# ---------------------------------------------------------------------------


def write_mesh(mesh: SpaceTimeMesh, path) -> None:
    """Write the ASCII format: header ``ST-MESH v1 <nv> <np> <T>``, vertex
    lines ``t x1 x2 x3``, then panel lines of 4 zero-based vertex indices."""
    with open(path, "w") as fh:
        fh.write(f"ST-MESH v1 {len(mesh.vertices)} {mesh.num_panels} "
                 f"{mesh.T!r}\n")
        for v in mesh.vertices:
            fh.write(f"{v[0]!r} {v[1]!r} {v[2]!r} {v[3]!r}\n")
        for pnl in mesh.panels:
            fh.write(f"{pnl[0]} {pnl[1]} {pnl[2]} {pnl[3]}\n")


def read_mesh(path) -> SpaceTimeMesh:
    """Read the ASCII format written by :func:`write_mesh`.

    Panel orientation is recovered from the canonical vertex order: the
    outward normal is the generalized cross product of the stored edge
    vectors (time component zeroed, renormalized)."""
    with open(path) as fh:
        header = fh.readline().split()
        if header[:2] != ["ST-MESH", "v1"]:
            raise ValueError("not an ST-MESH v1 file")
        nv, npanels, T = int(header[2]), int(header[3]), float(header[4])
        verts = np.array(
            [[float(tok) for tok in fh.readline().split()] for _ in range(nv)]
        )
        panels = np.array(
            [[int(tok) for tok in fh.readline().split()] for _ in range(npanels)],
            dtype=np.int64,
        )
    mesh = SpaceTimeMesh(vertices=verts, panels=panels, T=T,
                         source=("file", -1, -1))
    pv = verts[panels]
    raw = _batched_cross4(pv[:, 1:] - pv[:, [0]])
    raw[:, 0] = 0.0
    nn = np.linalg.norm(raw, axis=1, keepdims=True)
    _build_geometry(mesh, raw[:, 1:] / nn)
    return mesh
