"""Space-time geometry primitives for the wave-equation boundary element method.

Points live in R^4 with the fixed decomposition (t, x), where t is geometrized
time (ordinary time times wave speed) and x in R^3. Arrays use component 0 for
time and components 1:4 for space throughout the package.

The central objects are

* the backward-light-cone level function ``cone_level : (t, x) -> |x| - t``,
  whose zero set through an apex is the integration surface of every retarded
  potential,
* flat tetrahedral panels embedded in R^4 whose unit normal has a vanishing
  time component (the lateral boundary of a stationary space-time cylinder),
  represented by four half-space functions, and
* sharp bounds for the cone level function over 4D balls, which drive the
  hierarchical lit-panel culling.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum

import numpy as np

# A tetrahedron is degenerate if 3-volume < DEGENERACY_REL * (longest edge)^3.
DEGENERACY_REL = 1e-14
# Distances below this are treated as coincident points in kernel evaluation.
DEGENERATE_DISTANCE = 1e-14

SQRT2 = float(np.sqrt(2.0))


class KernelId(Enum):
    """Selector for the three layer-potential kernels.

    K1 is the weakly singular kernel 1/(4 pi |x-y|); K2 and K3 additionally
    carry the inner product with the spatial unit normal at y and therefore
    require a normal for evaluation.
    """

    K1 = 1
    K2 = 2
    K3 = 3


@dataclass(frozen=True)
class SpaceTimePoint:
    """A point (t, x) in R^4 with geometrized time t and spatial x in R^3."""

    t: float
    x: np.ndarray

    @staticmethod
    def from_array(a) -> "SpaceTimePoint":
        a = np.asarray(a, dtype=float)
        return SpaceTimePoint(float(a[0]), a[1:4].copy())

    def to_array(self) -> np.ndarray:
        out = np.empty(4)
        out[0] = self.t
        out[1:] = self.x
        return out


def as_point_array(p) -> np.ndarray:
    """Coerce a SpaceTimePoint or length-4 array-like to a (4,) float array."""
    if isinstance(p, SpaceTimePoint):
        return p.to_array()
    a = np.asarray(p, dtype=float)
    if a.shape != (4,):
        raise ValueError(f"expected a space-time point of shape (4,), got {a.shape}")
    return a


def cone_level(p) -> float:
    """Level function of the backward light cone through the origin.

    Returns |x| - t for p = (t, x). The value is zero exactly on the backward
    cone, negative strictly inside it and positive outside. For an apex a,
    ``cone_level(a - y)`` plays the same role for the cone with apex a.
    """
    a = as_point_array(p)
    return float(np.linalg.norm(a[1:]) - a[0])


def cone_level_many(points: np.ndarray) -> np.ndarray:
    """Vectorized ``cone_level`` for an (..., 4) array."""
    points = np.asarray(points, dtype=float)
    return np.linalg.norm(points[..., 1:], axis=-1) - points[..., 0]


def kernel_eval(k: KernelId, x, y, n_y=None) -> float:
    """Evaluate one of the three layer-potential kernels at spatial x, y.

    k1 = 1/(4 pi r), k2 = <n_y, x-y>/(4 pi r^2), k3 = <n_y, x-y>/(4 pi r^3)
    with r = |x - y|. The 4 pi normalization is included here; reference
    closed forms in :mod:`stbem.oracles` strip it explicitly.

    Raises ValueError when r is below the degeneracy tolerance, and when K2/K3
    are requested without a normal.
    """
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    d = x - y
    r = float(np.linalg.norm(d))
    if r < DEGENERATE_DISTANCE:
        raise ValueError(f"kernel evaluation at degenerate distance r={r:.3e}")
    if k is KernelId.K1:
        return 1.0 / (4.0 * np.pi * r)
    if n_y is None:
        raise ValueError(f"{k} requires the spatial unit normal at y")
    n_y = np.asarray(n_y, dtype=float)
    num = float(np.dot(n_y, d))
    if k is KernelId.K2:
        return num / (4.0 * np.pi * r * r)
    if k is KernelId.K3:
        return num / (4.0 * np.pi * r * r * r)
    raise ValueError(f"unknown kernel {k!r}")


# ---------------------------------------------------------------------------
# Panels
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class PanelFace:
    """One triangular face of a panel: anchor vertex, outward unit conormal
    and the local indices of the three vertices spanning the triangle."""

    anchor: np.ndarray
    conormal: np.ndarray
    tri: tuple


@dataclass(frozen=True)
class Panel:
    """A flat tetrahedron embedded in R^4.

    Attributes
    ----------
    vertices : (4, 4) array, rows are space-time points.
    normal : (4,) unit vector orthogonal to the tetrahedron's affine hull,
        with exactly zero time component.
    faces : four PanelFace records. Face i is opposite local vertex i; its
        conormal is the outward unit vector orthogonal to the normal and to
        the face plane, so the panel is the intersection of the four
        half-spaces {<y - anchor_i, conormal_i> < 0} with its hyperplane.
    """

    vertices: np.ndarray
    normal: np.ndarray
    faces: tuple

    @property
    def spatial_normal(self) -> np.ndarray:
        return self.normal[1:]

    @property
    def centroid(self) -> np.ndarray:
        return self.vertices.mean(axis=0)

    def diameter(self) -> float:
        v = self.vertices
        d = v[:, None, :] - v[None, :, :]
        return float(np.sqrt((d * d).sum(-1)).max())

    def volume3(self) -> float:
        e = self.vertices[1:] - self.vertices[0]
        g = e @ e.T
        return float(np.sqrt(max(np.linalg.det(g), 0.0)) / 6.0)


@dataclass(frozen=True)
class BoundingBall:
    """Closed ball in R^4 with center (t, x) and radius r > 0."""

    center: np.ndarray
    radius: float

    def __post_init__(self):
        if self.radius <= 0.0:
            raise ValueError("bounding ball radius must be positive")


def generalized_cross(a, b, c) -> np.ndarray:
    """Vector in R^4 orthogonal to a, b, c (4D analogue of the cross product)."""
    m = np.vstack([a, b, c])
    out = np.empty(4)
    cols = [1, 2, 3], [0, 2, 3], [0, 1, 3], [0, 1, 2]
    sign = 1.0
    for i, keep in enumerate(cols):
        out[i] = sign * np.linalg.det(m[:, keep])
        sign = -sign
    return out


def panel_from_vertices(v0, v1, v2, v3, orient_normal=None) -> Panel:
    """Construct a Panel from four affinely independent space-time vertices.

    The normal is computed from the edge vectors, its time component is then
    forced to exactly zero and the vector renormalized; lateral-boundary
    panels of a stationary cylinder have an exactly vanishing time component,
    and enforcing it keeps the cone-chart construction consistent under
    roundoff. ``orient_normal`` optionally fixes the sign of the normal
    (e.g. the outward normal of the generating surface triangle); otherwise
    the sign is chosen deterministically.

    Raises ValueError for degenerate tetrahedra and for panels that are not
    time-like (normal parallel to the time axis, which cannot occur on the
    lateral boundary of a stationary cylinder and signals a mesh bug).
    """
    verts = np.array([as_point_array(v) for v in (v0, v1, v2, v3)], dtype=float)
    edges = verts[1:] - verts[0]
    gram = edges @ edges.T
    vol3 = np.sqrt(max(np.linalg.det(gram), 0.0)) / 6.0
    longest = np.sqrt(
        ((verts[:, None, :] - verts[None, :, :]) ** 2).sum(-1).max()
    )
    if vol3 < DEGENERACY_REL * longest**3:
        raise ValueError("degenerate tetrahedron (3-volume below tolerance)")

    nu = generalized_cross(edges[0], edges[1], edges[2])
    nu[0] = 0.0
    nn = np.linalg.norm(nu)
    if nn < 1e-10 * longest**3:
        raise ValueError("panel is not time-like: normal lies along the time axis")
    nu /= nn
    if orient_normal is not None:
        ref = np.asarray(orient_normal, dtype=float)
        if ref.shape == (3,):
            s = float(np.dot(nu[1:], ref))
        else:
            s = float(np.dot(nu, ref))
        if s < 0.0:
            nu = -nu
    else:
        idx = int(np.argmax(np.abs(nu)))
        if nu[idx] < 0.0:
            nu = -nu

    faces = []
    for i in range(4):
        tri = tuple(j for j in range(4) if j != i)
        a, b, c = (verts[j] for j in tri)
        e1, e1n = _unit(b - a)
        e2 = c - a
        e2 = e2 - np.dot(e2, e1) * e1
        e2, _ = _unit(e2)
        d = verts[i] - a
        r = d - np.dot(d, e1) * e1 - np.dot(d, e2) * e2 - np.dot(d, nu) * nu
        rn = np.linalg.norm(r)
        if rn < 1e-13 * longest:
            raise ValueError("degenerate panel face")
        faces.append(PanelFace(anchor=a.copy(), conormal=-r / rn, tri=tri))
    return Panel(vertices=verts, normal=nu, faces=tuple(faces))


def _unit(v):
    n = np.linalg.norm(v)
    if n == 0.0:
        raise ValueError("zero-length edge")
    return v / n, n


def panel_level(panel: Panel, p) -> float:
    """Max of the four signed face half-space functions at p.

    Negative iff p lies in the open panel relative to its hyperplane. Used as
    the inside test composed with the light-cone parametrizations.
    """
    y = as_point_array(p)
    return max(
        float(np.dot(y - f.anchor, f.conormal)) for f in panel.faces
    )


# ---------------------------------------------------------------------------
# Cone-ball bounds
# ---------------------------------------------------------------------------


def d_r(alpha: float, r: float) -> float:
    """Depth function of the sharp lower cone-ball bound.

    d_r(alpha) = alpha + sqrt(r^2 - alpha^2) for 0 <= alpha < r/sqrt(2) and
    r*sqrt(2) otherwise; continuous, with values in [r, r*sqrt(2)].
    """
    if alpha < r / SQRT2:
        return alpha + np.sqrt(max(r * r - alpha * alpha, 0.0))
    return r * SQRT2


def cone_ball_bounds(apex, ball: BoundingBall) -> tuple:
    """Sharp (min, max) of z -> cone_level(apex - z) over a closed 4D ball.

    min = cone_level(apex - center) - d_r(|x - y|) and
    max = cone_level(apex - center) + r*sqrt(2), where x, y are the spatial
    parts of apex and center. Both bounds are attained on the ball boundary.
    """
    a = as_point_array(apex)
    c = np.asarray(ball.center, dtype=float)
    r = float(ball.radius)
    phi = float(np.linalg.norm(a[1:] - c[1:]) - (a[0] - c[0]))
    alpha = float(np.linalg.norm(a[1:] - c[1:]))
    return phi - d_r(alpha, r), phi + r * SQRT2


def cone_ball_extremizers(apex, ball: BoundingBall) -> tuple:
    """Points of the closed ball attaining the min and max of the cone level.

    Returns (z_min, z_max) as (4,) arrays; used to verify sharpness of
    :func:`cone_ball_bounds`.
    """
    a = as_point_array(apex)
    c = np.asarray(ball.center, dtype=float)
    r = float(ball.radius)
    dx = a[1:] - c[1:]
    alpha = float(np.linalg.norm(dx))
    if alpha > 0.0:
        u = dx / alpha
    else:
        u = np.array([1.0, 0.0, 0.0])

    step = np.empty(4)
    step[0] = -1.0
    step[1:] = u
    z_max = c - (r / SQRT2) * step
    if alpha >= r / SQRT2:
        z_min = c + (r / SQRT2) * step
    else:
        z_min = np.empty(4)
        z_min[0] = c[0] - np.sqrt(max(r * r - alpha * alpha, 0.0))
        z_min[1:] = a[1:]
    return z_min, z_max
