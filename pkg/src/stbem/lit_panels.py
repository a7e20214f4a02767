"""Hierarchical computation of the set of panels lit by a backward light cone.

A binary cluster tree over panel indices carries one bounding ball per node;
the sharp cone-ball bounds prune whole clusters (a cluster is discarded only
when the cone level function provably has no zero in its ball, so the
collected candidate set always contains every lit panel). Candidates are then
filtered by an exact per-panel test: the panel is lit iff the minimum of the
cone level over the closed tetrahedron is <= 0 <= its maximum. The maximum is
attained at a vertex (the level function is convex); the minimum is computed
in closed form by enumerating the faces of the tetrahedron (no interior
critical points exist because the time direction is tangent to every panel).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .geometry import BoundingBall, Panel, SQRT2, as_point_array, d_r
from .st_mesh import SpaceTimeMesh

_EDGE_PAIRS = ((0, 1), (0, 2), (0, 3), (1, 2), (1, 3), (2, 3))
_FACE_TRIPLES = ((0, 1, 2), (0, 1, 3), (0, 2, 3), (1, 2, 3))


@dataclass
class ClusterTree:
    """Binary cluster tree in flat-array form.

    ``perm`` permutes panel indices so every node owns the contiguous range
    ``node_range[i]``; leaves have children (-1, -1) and at most n_min
    indices. Node balls contain all vertices of all panels of the node."""

    n_min: int
    perm: np.ndarray
    node_children: np.ndarray
    node_range: np.ndarray
    node_center: np.ndarray
    node_radius: np.ndarray

    @property
    def num_nodes(self) -> int:
        return len(self.node_radius)

    def node_indices(self, node: int) -> np.ndarray:
        lo, hi = self.node_range[node]
        return self.perm[lo:hi]

    def node_ball(self, node: int) -> BoundingBall:
        return BoundingBall(self.node_center[node].copy(),
                            float(self.node_radius[node]))

    def leaves(self):
        return [i for i in range(self.num_nodes)
                if self.node_children[i, 0] < 0]


def ritter_ball(points: np.ndarray, scale_floor: float = 0.0) -> BoundingBall:
    """Non-minimal bounding ball of a point cloud in R^4 (two-point
    initialization, then grow to swallow outliers). Radius is floored to a
    small positive value so the cone-ball bounds stay well defined for
    degenerate clouds."""
    pts = np.asarray(points, dtype=float).reshape(-1, 4)
    p0 = pts[0]
    i1 = int(np.argmax(((pts - p0) ** 2).sum(1)))
    p1 = pts[i1]
    i2 = int(np.argmax(((pts - p1) ** 2).sum(1)))
    p2 = pts[i2]
    center = 0.5 * (p1 + p2)
    radius = 0.5 * float(np.linalg.norm(p2 - p1))
    for _ in range(64):
        d = np.sqrt(((pts - center) ** 2).sum(1))
        j = int(np.argmax(d))
        dj = float(d[j])
        if dj <= radius * (1.0 + 1e-12):
            break
        new_r = 0.5 * (radius + dj)
        center = center + (1.0 - new_r / dj) * (pts[j] - center)
        radius = new_r
    radius = max(radius * (1.0 + 1e-12), 1e-12 * max(scale_floor, 1.0), 5e-300)
    return BoundingBall(center, radius)


def bounding_ball(mesh: SpaceTimeMesh, indices) -> BoundingBall:
    """Ritter ball containing every vertex of the given panels."""
    idx = np.asarray(indices, dtype=np.int64)
    if idx.size == 0:
        raise ValueError("empty panel subset")
    pts = mesh.panel_vertices[idx].reshape(-1, 4)
    return ritter_ball(pts, scale_floor=mesh.h)


def build_cluster_tree(mesh: SpaceTimeMesh, n_min: int = 50) -> ClusterTree:
    """Binary cluster tree: split at the median of the panel centroids along
    the space-time coordinate of maximal extent, recursing until nodes hold
    at most n_min panels."""
    if n_min < 1:
        raise ValueError("n_min must be >= 1")
    N = mesh.num_panels
    perm = np.arange(N, dtype=np.int64)
    cents = mesh.centroids
    verts = mesh.panel_vertices

    children = []
    ranges = []
    centers = []
    radii = []

    def add_node(lo, hi):
        node = len(children)
        children.append([-1, -1])
        ranges.append([lo, hi])
        ball = ritter_ball(verts[perm[lo:hi]].reshape(-1, 4),
                           scale_floor=mesh.h)
        centers.append(ball.center)
        radii.append(ball.radius)
        return node

    def build(lo, hi):
        node = add_node(lo, hi)
        if hi - lo <= n_min:
            return node
        c = cents[perm[lo:hi]]
        axis = int(np.argmax(c.max(axis=0) - c.min(axis=0)))
        order = np.argsort(c[:, axis], kind="stable")
        perm[lo:hi] = perm[lo:hi][order]
        mid = lo + (hi - lo) // 2
        left = build(lo, mid)
        right = build(mid, hi)
        children[node] = [left, right]
        return node

    import sys

    old_limit = sys.getrecursionlimit()
    sys.setrecursionlimit(max(old_limit, 10000))
    try:
        build(0, N)
    finally:
        sys.setrecursionlimit(old_limit)
    return ClusterTree(
        n_min=n_min,
        perm=perm,
        node_children=np.array(children, dtype=np.int64),
        node_range=np.array(ranges, dtype=np.int64),
        node_center=np.array(centers),
        node_radius=np.array(radii),
    )


def approximate_lit_leaves(tree: ClusterTree, apex, counter: list = None):
    """Candidate panel set: union of the panels of all leaves whose bounding
    ball may intersect the backward cone of the apex.

    The prune test discards a cluster iff the sharp cone-ball bounds exclude
    a zero of the cone level function, so the result always contains the
    exact lit set. ``counter``, when given, receives the number of visited
    nodes (appended)."""
    a = as_point_array(apex)
    at, ax = a[0], a[1:]
    centers = tree.node_center
    radii = tree.node_radius
    children = tree.node_children
    ranges = tree.node_range
    out = []
    visited = 0
    stack = [0]
    while stack:
        node = stack.pop()
        visited += 1
        c = centers[node]
        r = radii[node]
        dx = ax - c[1:]
        alpha = np.sqrt(dx @ dx)
        phi = alpha - (at - c[0])
        if phi < -r * SQRT2 or phi > d_r(alpha, r):
            continue
        l, rr = children[node]
        if l < 0:
            lo, hi = ranges[node]
            out.append(tree.perm[lo:hi])
        else:
            stack.append(l)
            stack.append(rr)
    if counter is not None:
        counter.append(visited)
    if not out:
        return np.empty(0, dtype=np.int64)
    return np.sort(np.concatenate(out))


# ---------------------------------------------------------------------------
# Exact lit test
# ---------------------------------------------------------------------------


def _min_cone_level_tet(apex: np.ndarray, verts: np.ndarray) -> float:
    """Exact minimum of y -> |x - y_spatial| - (t - y_time) over a closed
    tetrahedron, by closed-form enumeration of edge and face critical points.

    The level function is convex with unit slope along the time axis, which
    is tangent to every panel hyperplane, so no interior critical point
    exists and the minimum lies on the boundary faces."""
    t = apex[0]
    x = apex[1:]
    best = np.inf
    for i in range(4):
        v = verts[i]
        best = min(best, np.linalg.norm(x - v[1:]) - (t - v[0]))

    def f_at(y4):
        return float(np.linalg.norm(x - y4[1:]) - (t - y4[0]))

    for i, j in _EDGE_PAIRS:
        va, vb = verts[i], verts[j]
        dy = vb[1:] - va[1:]
        dt = vb[0] - va[0]
        u0 = x - va[1:]
        b = float(dy @ dy)
        if b < 1e-30:
            continue
        a_ = float(u0 @ dy)
        c_ = float(u0 @ u0)
        # projection of x onto the edge (covers the nonsmooth point)
        s_proj = a_ / b
        if 0.0 < s_proj < 1.0:
            best = min(best, f_at(va + s_proj * (vb - va)))
        D = b - dt * dt
        A = b * D
        B = -2.0 * a_ * D
        C = a_ * a_ - dt * dt * c_
        roots = []
        if abs(A) > 1e-300:
            disc = B * B - 4.0 * A * C
            if disc >= 0.0:
                sq = np.sqrt(disc)
                roots = [(-B - sq) / (2 * A), (-B + sq) / (2 * A)]
        elif abs(B) > 1e-300:
            roots = [-C / B]
        for s in roots:
            if 0.0 < s < 1.0:
                best = min(best, f_at(va + s * (vb - va)))

    for i, j, k in _FACE_TRIPLES:
        p, q, r = verts[i], verts[j], verts[k]
        d1, d2 = q - p, r - p
        Dm = np.column_stack([d1[1:], d2[1:]])
        tau_d = np.array([d1[0], d2[0]])
        G = Dm.T @ Dm
        det = G[0, 0] * G[1, 1] - G[0, 1] * G[1, 0]
        if det < 1e-30:
            continue
        Ginv = np.array([[G[1, 1], -G[0, 1]], [-G[1, 0], G[0, 0]]]) / det
        u0 = x - p[1:]
        s0 = Ginv @ (Dm.T @ u0)
        # projection of x onto the face plane (nonsmooth candidate)
        if s0[0] > 0.0 and s0[1] > 0.0 and s0[0] + s0[1] < 1.0:
            best = min(best, f_at(p + s0[0] * d1 + s0[1] * d2))
        w0 = u0 - Dm @ s0
        w1 = Dm @ (Ginv @ tau_d)
        w1sq = float(w1 @ w1)
        if w1sq < 1.0:
            L = np.sqrt(float(w0 @ w0) / (1.0 - w1sq))
            s = s0 - L * (Ginv @ tau_d)
            if s[0] > 0.0 and s[1] > 0.0 and s[0] + s[1] < 1.0:
                best = min(best, f_at(p + s[0] * d1 + s[1] * d2))
    return best


def _min_cone_level_tets(apex: np.ndarray, verts: np.ndarray) -> np.ndarray:
    """Batched :func:`_min_cone_level_tet` for verts of shape (m, 4, 4)."""
    m = len(verts)
    t = apex[0]
    x = apex[1:]
    dv = x[None, None, :] - verts[:, :, 1:]
    best = (np.sqrt((dv * dv).sum(-1)) - (t - verts[:, :, 0])).min(axis=1)

    def f_at(pts):
        # pts (m, 4); masked entries may be nan
        return np.sqrt(((x - pts[:, 1:]) ** 2).sum(-1)) - (t - pts[:, 0])

    def consider(pa, pb, s, mask):
        s = np.where(mask, s, 0.5)
        pts = pa + s[:, None] * (pb - pa)
        vals = f_at(pts)
        np.minimum(best, np.where(mask, vals, np.inf), out=best)

    for i, j in _EDGE_PAIRS:
        va, vb = verts[:, i], verts[:, j]
        dy = vb[:, 1:] - va[:, 1:]
        dt = vb[:, 0] - va[:, 0]
        u0 = x - va[:, 1:]
        b = (dy * dy).sum(-1)
        a_ = (u0 * dy).sum(-1)
        c_ = (u0 * u0).sum(-1)
        ok = b > 1e-30
        sproj = np.where(ok, a_ / np.where(ok, b, 1.0), -1.0)
        consider(va, vb, sproj, ok & (sproj > 0.0) & (sproj < 1.0))
        D = b - dt * dt
        A = b * D
        B = -2.0 * a_ * D
        C = a_ * a_ - dt * dt * c_
        quad = np.abs(A) > 1e-300
        disc = B * B - 4.0 * A * C
        okq = quad & (disc >= 0.0)
        sq = np.sqrt(np.where(okq, disc, 0.0))
        As = np.where(quad, A, 1.0)
        for sgn in (-1.0, 1.0):
            s = (-B + sgn * sq) / (2.0 * As)
            consider(va, vb, s, okq & (s > 0.0) & (s < 1.0))
        lin = (~quad) & (np.abs(B) > 1e-300)
        s = -C / np.where(lin, B, 1.0)
        consider(va, vb, s, lin & (s > 0.0) & (s < 1.0))

    for i, j, k in _FACE_TRIPLES:
        p = verts[:, i]
        d1 = verts[:, j] - p
        d2 = verts[:, k] - p
        g11 = (d1[:, 1:] * d1[:, 1:]).sum(-1)
        g22 = (d2[:, 1:] * d2[:, 1:]).sum(-1)
        g12 = (d1[:, 1:] * d2[:, 1:]).sum(-1)
        det = g11 * g22 - g12 * g12
        ok = det > 1e-30
        dets = np.where(ok, det, 1.0)
        u0 = x - p[:, 1:]
        r1 = (u0 * d1[:, 1:]).sum(-1)
        r2 = (u0 * d2[:, 1:]).sum(-1)
        s01 = (g22 * r1 - g12 * r2) / dets
        s02 = (-g12 * r1 + g11 * r2) / dets
        inside0 = ok & (s01 > 0.0) & (s02 > 0.0) & (s01 + s02 < 1.0)
        pts = p + s01[:, None] * d1 + s02[:, None] * d2
        np.minimum(best, np.where(inside0, f_at(pts), np.inf), out=best)
        w0 = u0 - s01[:, None] * d1[:, 1:] - s02[:, None] * d2[:, 1:]
        tau1 = d1[:, 0]
        tau2 = d2[:, 0]
        q1 = (g22 * tau1 - g12 * tau2) / dets
        q2 = (-g12 * tau1 + g11 * tau2) / dets
        w1 = q1[:, None] * d1[:, 1:] + q2[:, None] * d2[:, 1:]
        w1sq = (w1 * w1).sum(-1)
        okL = ok & (w1sq < 1.0)
        L = np.sqrt((w0 * w0).sum(-1) / np.where(okL, 1.0 - w1sq, 1.0))
        s1 = s01 - L * q1
        s2 = s02 - L * q2
        insideL = okL & (s1 > 0.0) & (s2 > 0.0) & (s1 + s2 < 1.0)
        pts = p + s1[:, None] * d1 + s2[:, None] * d2
        np.minimum(best, np.where(insideL, f_at(pts), np.inf), out=best)
    return best


def panel_is_lit(apex, panel: Panel) -> bool:
    """True iff the backward cone of the apex meets the closed panel:
    min over the panel of the cone level is <= 0 <= max (the max over the
    vertices by convexity)."""
    a = as_point_array(apex)
    verts = panel.vertices
    phi_v = np.linalg.norm(a[1:] - verts[:, 1:], axis=1) - (a[0] - verts[:, 0])
    if phi_v.max() < 0.0:
        return False
    if phi_v.min() <= 0.0:
        return True
    return _min_cone_level_tet(a, verts) <= 0.0


def _lit_mask(mesh: SpaceTimeMesh, indices: np.ndarray, apex: np.ndarray):
    """Vectorized exact lit test for a subset of panels: vertex-level phase
    plus the closed-form minimum for the rare all-vertices-outside panels
    that survive a per-panel cone-ball prune."""
    pv = mesh.panel_vertices[indices]
    d = apex[1:] - pv[:, :, 1:]
    phi = np.sqrt((d * d).sum(-1)) - (apex[0] - pv[:, :, 0])
    phi_max = phi.max(axis=1)
    phi_min = phi.min(axis=1)
    lit = (phi_min <= 0.0) & (phi_max >= 0.0)
    pending = np.nonzero(phi_min > 0.0)[0]
    if pending.size:
        # sharp lower bound of the cone level over each panel's bounding
        # ball; positive bound => certainly not lit
        c = mesh.centroids[indices[pending]]
        r = np.sqrt(
            ((pv[pending] - c[:, None, :]) ** 2).sum(-1)
        ).max(axis=1)
        dx = apex[1:] - c[:, 1:]
        alpha = np.sqrt((dx * dx).sum(-1))
        depth = np.where(
            alpha < r / SQRT2,
            alpha + np.sqrt(np.maximum(r * r - alpha * alpha, 0.0)),
            r * SQRT2,
        )
        ball_min = alpha - (apex[0] - c[:, 0]) - depth
        pending = pending[ball_min <= 0.0]
    if pending.size:
        mins = _min_cone_level_tets(apex, pv[pending])
        lit[pending[mins <= 0.0]] = True
    return lit


def lit_set(tree: ClusterTree, mesh: SpaceTimeMesh, apex) -> np.ndarray:
    """Exact sorted lit panel indices via prune-then-verify."""
    a = as_point_array(apex)
    cand = approximate_lit_leaves(tree, a)
    if cand.size == 0:
        return cand
    return cand[_lit_mask(mesh, cand, a)]


def naive_lit_set(mesh: SpaceTimeMesh, apex) -> np.ndarray:
    """Exact lit set by scanning every panel (the O(N) reference)."""
    a = as_point_array(apex)
    idx = np.arange(mesh.num_panels, dtype=np.int64)
    return idx[_lit_mask(mesh, idx, a)]
