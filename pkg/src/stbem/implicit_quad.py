"""Quadrature over implicitly defined subsets of a 2D rectangle.

The region is {eta : g_k(eta) < 0 for all constraints g_k}. Integration
combines quadtree subdivision with exact parametrization of the zero level
sets in admissible cells:

* cells where every constraint is nonpositive at all sample points are
  integrated by a tensor Gauss rule,
* cells whose active (sign-changing) constraints are all monotone along a
  common coordinate direction are integrated by a height-function map: per
  Gauss abscissa the admissible interval between the lower and upper
  envelopes of the constraint roots (each located by a bracketed search to
  1e-14) is covered by a scaled Gauss rule. The base interval is split where
  an interface leaves the cell through a height edge or where two interfaces
  cross, with at most two such events (and at most two non-empty spans), so
  an admissible leaf never uses more than 2*n_G^2 quadrature points,
* everything else is subdivided until the maximum depth, where a midpoint
  fallback rule is applied (full cell if the center is inside, zero
  otherwise).

Constraints and integrands are vectorized callables mapping an (m, 2) array
of points to an (m,) array of values; they must be evaluable in a small
neighborhood of the rectangle (the monotonicity test steps slightly
outside).
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum

import numpy as np

from .quadrules import gauss_legendre

ROOT_TOL = 1e-14  # absolute, in parameter units
FD_STEP_REL = 1e-6  # monotonicity-test step relative to cell size
NOISE_REL = 32.0 * np.finfo(float).eps  # activity threshold per unit scale
_EDGE_FRACTIONS = np.arange(1, 6) / 6.0  # 5 equispaced interior edge samples


class CellClass(Enum):
    INSIDE = "inside"
    OUTSIDE = "outside"
    GRAPH_X1 = "graph_x1"  # single interface, height function over direction 1
    GRAPH_X2 = "graph_x2"  # single interface, height function over direction 2
    AMBIGUOUS = "ambiguous"


@dataclass(frozen=True)
class QuadConfig:
    """Quadtree depth r_max >= 0 and Gauss points per direction n_G >= 1."""

    r_max: int = 7
    n_G: int = 8

    def __post_init__(self):
        if self.r_max < 0 or self.n_G < 1:
            raise ValueError("require r_max >= 0 and n_G >= 1")


@dataclass
class ImplicitRegion:
    """Rectangle (a1, b1) x (a2, b2) and constraint list defining
    {eta : g_k(eta) < 0 for all k}.

    ``scales`` optionally gives one magnitude scale per constraint; values
    within NOISE_REL * scale of zero are treated as roundoff noise when
    deciding whether a constraint is active in a cell (needed when zero sets
    pass exactly through evaluation geometry, e.g. a cone through a mesh
    vertex). The default of zero keeps exact sign semantics.

    ``bound_fns`` optionally gives one callable per constraint mapping a
    cell (a1, b1, a2, b2) to a rigorous enclosure (lo, hi) of the constraint
    values over the cell. With bounds available the inside/outside decisions
    are sound regardless of how small a feature is; without them they rely
    on the sample grid and features well below the cell size can be missed
    (the classical residual risk of sampling-based schemes)."""

    rectangle: tuple  # (a1, b1, a2, b2)
    constraints: list
    scales: np.ndarray = None
    bound_fns: list = None
    deriv_fns: list = None  # optional analytic (d/d eta1, d/d eta2)

    def __post_init__(self):
        a1, b1, a2, b2 = self.rectangle
        if not (b1 > a1 and b2 > a2):
            raise ValueError("empty rectangle")
        if self.scales is None:
            self.scales = np.zeros(len(self.constraints))

    def noise_tol(self, k: int) -> float:
        return NOISE_REL * float(self.scales[k])


def _sample_points(cell) -> np.ndarray:
    """25 sample points: 4 corners, 5 interior points per edge, center."""
    a1, b1, a2, b2 = cell
    pts = np.empty((25, 2))
    pts[0] = (a1, a2)
    pts[1] = (b1, a2)
    pts[2] = (a1, b2)
    pts[3] = (b1, b2)
    u = a1 + (b1 - a1) * _EDGE_FRACTIONS
    v = a2 + (b2 - a2) * _EDGE_FRACTIONS
    pts[4:9, 0] = u
    pts[4:9, 1] = a2
    pts[9:14, 0] = u
    pts[9:14, 1] = b2
    pts[14:19, 0] = a1
    pts[14:19, 1] = v
    pts[19:24, 0] = b1
    pts[19:24, 1] = v
    pts[24] = (0.5 * (a1 + b1), 0.5 * (a2 + b2))
    return pts


def _classify(region: ImplicitRegion, cell):
    """Classify a cell. Returns (CellClass, info); info is
    (active_indices, base_direction, per-constraint derivative signs) when
    the active constraints share a sign-definite height direction (the
    envelope integrator applies), else None. Cells with several active
    constraints are reported AMBIGUOUS even when info is available."""
    pts = _sample_points(cell)
    active = []
    for k, g in enumerate(region.constraints):
        tol = region.noise_tol(k)
        if region.bound_fns is not None:
            lo, hi = region.bound_fns[k](cell)
            if hi <= tol:
                continue
            if lo >= -tol:
                return CellClass.OUTSIDE, None
        else:
            vals = np.asarray(g(pts), dtype=float)
            if np.all(vals <= tol):
                continue
            if np.all(vals >= -tol):
                return CellClass.OUTSIDE, None
        active.append(k)
    if not active:
        return CellClass.INSIDE, None

    sizes = (cell[1] - cell[0], cell[3] - cell[2])
    # every active zero set must be a height function over the other (base)
    # direction: sign-definite partial derivative along the height
    # direction, tested at all sample points (analytically when derivative
    # callables are available, else by central differences)
    if region.deriv_fns is not None:
        dgs = [region.deriv_fns[k](pts) for k in active]
    else:
        dgs = []
        for k in active:
            g = region.constraints[k]
            pair = []
            for height_d in (1, 2):
                step = sizes[height_d - 1] * FD_STEP_REL
                shift = np.zeros(2)
                shift[height_d - 1] = step
                pair.append(
                    (np.asarray(g(pts + shift)) - np.asarray(g(pts - shift)))
                    / (2 * step)
                )
            dgs.append(tuple(pair))
    best = None
    for height_d in (1, 2):
        margin = np.inf
        sigmas = []
        for ai in range(len(active)):
            dg = dgs[ai][height_d - 1]
            if np.all(dg > 0.0):
                sigmas.append(1.0)
            elif np.all(dg < 0.0):
                sigmas.append(-1.0)
            else:
                sigmas = None
                break
            margin = min(margin, float(np.min(np.abs(dg))))
        if sigmas is not None:
            base = 1 if height_d == 2 else 2
            if best is None or margin > best[0]:
                best = (margin, base, sigmas)
    if best is None:
        return CellClass.AMBIGUOUS, None
    _, base, sigmas = best
    info = (active, base, np.array(sigmas))
    if len(active) > 1:
        return CellClass.AMBIGUOUS, info
    cls = CellClass.GRAPH_X1 if base == 1 else CellClass.GRAPH_X2
    return cls, info


def classify_cell(region: ImplicitRegion, cell) -> CellClass:
    """Classify the subcell (a1, b1, a2, b2) of the region's rectangle."""
    cls, _ = _classify(region, cell)
    return cls


def _bracketed_roots(g, base_vals, base_d, lo, hi, sigma):
    """Vectorized bracketed root search of g along direction (3 - base_d)
    for each base abscissa; modified regula falsi with periodic bisection,
    to absolute tolerance ROOT_TOL. Columns whose endpoint values share a
    strict sign collapse to the interval end that keeps the column fully
    admitted or fully excluded by this constraint (``sigma`` is the sign of
    its height-direction derivative)."""
    m = len(base_vals)

    def eval_at(h):
        pts = np.empty((m, 2))
        pts[:, base_d - 1] = base_vals
        pts[:, 2 - base_d] = h
        return np.asarray(g(pts), dtype=float)

    a = np.full(m, lo)
    b = np.full(m, hi)
    fa = eval_at(a)
    fb = eval_at(b)
    bad = fa * fb > 0.0
    fa0 = fa.copy()
    zero_a = fa == 0.0
    zero_b = (fb == 0.0) & ~zero_a
    a = np.where(zero_b, b, a)
    b = np.where(zero_a, a, b)
    for it in range(200):
        if np.all(b - a < ROOT_TOL):
            break
        if it % 4 == 3:
            x = 0.5 * (a + b)
        else:
            denom = fb - fa
            safe = np.abs(denom) > 0.0
            x = 0.5 * (a + b)
            x[safe] = (a[safe] * fb[safe] - b[safe] * fa[safe]) / denom[safe]
            outside = (x <= a) | (x >= b)
            x[outside] = 0.5 * (a[outside] + b[outside])
        fx = eval_at(x)
        exact = fx == 0.0
        same = ((fx > 0.0) == (fa > 0.0)) & ~exact
        a = np.where(same, x, a)
        fa = np.where(same, fx, fa)
        other = ~same & ~exact
        b = np.where(other, x, b)
        fb = np.where(other, fx, fb)
        a = np.where(exact, x, a)
        b = np.where(exact, x, b)
    roots = 0.5 * (a + b)
    if np.any(bad):
        # all-positive column: this constraint excludes it entirely; the
        # root collapses to the end that empties the admitted interval
        if sigma > 0.0:
            roots[bad] = np.where(fa0[bad] > 0.0, lo, hi)
        else:
            roots[bad] = np.where(fa0[bad] > 0.0, hi, lo)
    return roots


def _scalar_root_1d(fun, s_a, s_b, f_a, f_b):
    """Root of a scalar function bracketed in [s_a, s_b]; same hybrid
    iteration as :func:`_bracketed_roots`."""
    if f_a == 0.0:
        return s_a
    if f_b == 0.0:
        return s_b
    a, b, fa, fb = s_a, s_b, f_a, f_b
    for it in range(200):
        if b - a < ROOT_TOL:
            break
        if it % 4 == 3:
            x = 0.5 * (a + b)
        else:
            x = (a * fb - b * fa) / (fb - fa) if fb != fa else 0.5 * (a + b)
            if not (a < x < b):
                x = 0.5 * (a + b)
        fx = fun(x)
        if fx == 0.0:
            return x
        if (fx > 0.0) == (fa > 0.0):
            a, fa = x, fx
        else:
            b, fb = x, fx
    return 0.5 * (a + b)


def integrate_implicit(region: ImplicitRegion, f, cfg: QuadConfig,
                       stats: dict = None) -> float:
    """Approximate the integral of f over the implicit region.

    ``stats``, when given, is filled with diagnostic counters
    (visited/inside/graph/fallback cell counts and the maximum number of
    quadrature points used in one admissible leaf)."""
    gx, gw = gauss_legendre(cfg.n_G)
    total = 0.0
    if stats is not None:
        stats.update(cells=0, inside=0, graph=0, fallback=0, outside=0,
                     max_points_leaf=0)

    stack = [(region.rectangle, 0)]
    while stack:
        cell, depth = stack.pop()
        a1, b1, a2, b2 = cell
        if stats is not None:
            stats["cells"] += 1
        cls, info = _classify(region, cell)
        if cls is CellClass.OUTSIDE:
            if stats is not None:
                stats["outside"] += 1
            continue
        if cls is CellClass.INSIDE:
            c1 = 0.5 * (a1 + b1) + 0.5 * (b1 - a1) * gx
            c2 = 0.5 * (a2 + b2) + 0.5 * (b2 - a2) * gx
            pts = np.empty((cfg.n_G * cfg.n_G, 2))
            pts[:, 0] = np.repeat(c1, cfg.n_G)
            pts[:, 1] = np.tile(c2, cfg.n_G)
            w = np.outer(gw, gw).ravel() * (0.25 * (b1 - a1) * (b2 - a2))
            total += float(np.dot(w, np.asarray(f(pts), dtype=float)))
            if stats is not None:
                stats["inside"] += 1
                stats["max_points_leaf"] = max(stats["max_points_leaf"],
                                               len(pts))
            continue
        if info is not None:
            value = _integrate_envelope_cell(region, f, cfg, cell, info,
                                             gx, gw, stats)
            if value is not None:
                total += value
                continue
            # too many interface events in this cell: subdivide
        if depth < cfg.r_max:
            m1 = 0.5 * (a1 + b1)
            m2 = 0.5 * (a2 + b2)
            stack += [
                ((a1, m1, a2, m2), depth + 1),
                ((m1, b1, a2, m2), depth + 1),
                ((a1, m1, m2, b2), depth + 1),
                ((m1, b1, m2, b2), depth + 1),
            ]
            continue
        # fallback: midpoint rule keyed on the cell center
        center = np.array([[0.5 * (a1 + b1), 0.5 * (a2 + b2)]])
        if all(float(g(center)[0]) < 0.0 for g in region.constraints):
            total += float(f(center)[0]) * (b1 - a1) * (b2 - a2)
        if stats is not None:
            stats["fallback"] += 1
    return total


def _edge_crossings(svals, vals, noise_tol):
    """Brackets where a sampled curve crosses zero definitely: consecutive
    definite signs (beyond the noise band) that differ. Samples inside the
    band neither create nor break a crossing."""
    out = []
    state = 0
    prev = -1
    for i in range(len(svals)):
        v = vals[i]
        s = 1 if v > noise_tol else (-1 if v < -noise_tol else 0)
        if s == 0:
            continue
        if state != 0 and s != state:
            out.append((svals[prev], svals[i], vals[prev], vals[i]))
        state = s
        prev = i
    return out


def _column_envelope(region, active, sigmas, base, s, hlo, hhi):
    """Admitted height interval (lo, hi) of one column at base position s."""
    lo, hi = hlo, hhi
    for k, sigma in zip(active, sigmas):
        g = region.constraints[k]

        def gs(h):
            pts = np.empty((1, 2))
            pts[0, base - 1] = s
            pts[0, 2 - base] = h
            return float(np.asarray(g(pts))[0])

        fa = gs(hlo)
        fb = gs(hhi)
        if fa * fb > 0.0:
            if fa > 0.0:
                return hlo, hlo  # excluded entirely
            continue  # no restriction from this constraint
        if fa == 0.0:
            root = hlo
        elif fb == 0.0:
            root = hhi
        else:
            root = _scalar_root_1d(gs, hlo, hhi, fa, fb)
        if sigma > 0.0:
            hi = min(hi, root)
        else:
            lo = max(lo, root)
    return lo, hi


def _integrate_envelope_cell(region, f, cfg, cell, info, gx, gw, stats):
    """Integrate a cell whose active constraints are all monotone height
    functions over the base direction. The base interval is split where an
    interface leaves the cell through a height edge or where two interfaces
    cross; with at most two events and at most two non-empty spans the
    budget of 2*n_G^2 quadrature points holds. Returns None to request
    subdivision."""
    a1, b1, a2, b2 = cell
    active, base, sigmas = info
    if base == 1:
        blo, bhi, hlo, hhi = a1, b1, a2, b2
    else:
        blo, bhi, hlo, hhi = a2, b2, a1, b1

    svals = np.empty(7)
    svals[0] = blo
    svals[1:6] = blo + (bhi - blo) * _EDGE_FRACTIONS
    svals[6] = bhi

    def g_at(k, s, h):
        pts = np.empty((1, 2))
        pts[0, base - 1] = s
        pts[0, 2 - base] = h
        return float(np.asarray(region.constraints[k](pts))[0])

    def edge_vals(k, h):
        pts = np.empty((7, 2))
        pts[:, base - 1] = svals
        pts[:, 2 - base] = h
        return np.asarray(region.constraints[k](pts), dtype=float)

    crossings = []
    for k in active:
        tol_k = region.noise_tol(k)
        for h in (hlo, hhi):
            vals = edge_vals(k, h)
            for sa, sb, fa, fb in _edge_crossings(svals, vals, tol_k):
                crossings.append(
                    _scalar_root_1d(lambda s: g_at(k, s, h), sa, sb, fa, fb))
                if len(crossings) > 8:
                    return None

    # interface-crossing events between pairs of active constraints: sign
    # changes of g_k along the (clamped) root curve of g_l; coincident
    # interfaces stay inside the noise band and produce no events
    for a_i in range(len(active)):
        for b_i in range(a_i + 1, len(active)):
            k = active[a_i]
            l = active[b_i]
            sig_l = sigmas[b_i]
            tol_k = region.noise_tol(k)

            def root_l(s):
                def gs(h):
                    return g_at(l, s, h)

                fa = gs(hlo)
                fb = gs(hhi)
                if fa * fb > 0.0:
                    if sig_l > 0.0:
                        return hlo if fa > 0.0 else hhi
                    return hhi if fa > 0.0 else hlo
                if fa == 0.0:
                    return hlo
                if fb == 0.0:
                    return hhi
                return _scalar_root_1d(gs, hlo, hhi, fa, fb)

            def K(s):
                return g_at(k, s, root_l(s))

            kv = np.array([K(s) for s in svals])
            for sa, sb, fa, fb in _edge_crossings(svals, kv, tol_k):
                crossings.append(_scalar_root_1d(K, sa, sb, fa, fb))
                if len(crossings) > 8:
                    return None

    # dedupe (exact duplicates and near-coincident events); the number of
    # split events is bounded separately from the two-live-span point budget
    tol_s = (bhi - blo) * 1e-9
    uniq = []
    for s in sorted(set(crossings)):
        if not uniq or s - uniq[-1] > tol_s:
            uniq.append(s)
    if len(uniq) > 4:
        return None

    spans = []
    cuts = [blo] + uniq + [bhi]
    for sa, sb in zip(cuts[:-1], cuts[1:]):
        if sb - sa > (bhi - blo) * 1e-13:
            spans.append((sa, sb))

    # evaluate the spans: certified-empty spans are skipped, the rest get
    # per-column envelopes (columns with empty intervals cost nothing); the
    # 2*n_G^2 point budget admits at most two spans with admitted columns
    evaluated = []
    n_live = 0
    for sa, sb in spans:
        if region.bound_fns is not None:
            if base == 1:
                subcell = (sa, sb, hlo, hhi)
            else:
                subcell = (hlo, hhi, sa, sb)
            empty = any(
                region.bound_fns[k](subcell)[0] >= -region.noise_tol(k)
                for k in range(len(region.constraints))
            )
            if empty:
                continue
        s = 0.5 * (sa + sb) + 0.5 * (sb - sa) * gx
        h0 = np.full(cfg.n_G, hlo)
        h1 = np.full(cfg.n_G, hhi)
        for k, sigma in zip(active, sigmas):
            roots = _bracketed_roots(region.constraints[k], s, base,
                                     hlo, hhi, sigma)
            if sigma > 0.0:
                h1 = np.minimum(h1, roots)
            else:
                h0 = np.maximum(h0, roots)
        h1 = np.maximum(h1, h0)
        if np.any(h1 > h0):
            n_live += 1
            evaluated.append((sa, sb, s, h0, h1))
    if n_live > 2:
        return None

    total = 0.0
    n_pts = 0
    for sa, sb, s, h0, h1 in evaluated:
        midh = 0.5 * (h0 + h1)
        half = 0.5 * (h1 - h0)
        pts = np.empty((cfg.n_G * cfg.n_G, 2))
        pts[:, base - 1] = np.repeat(s, cfg.n_G)
        pts[:, 2 - base] = (midh[:, None] + half[:, None] * gx[None, :]).ravel()
        wbase = gw * (0.5 * (sb - sa))
        w = (wbase[:, None] * half[:, None] * gw[None, :]).ravel()
        live_cols = half > 0.0
        n_pts += int(live_cols.sum()) * cfg.n_G
        total += float(np.dot(w, np.asarray(f(pts), dtype=float)))

    if stats is not None:
        stats["graph"] += 1
        stats["max_points_leaf"] = max(stats["max_points_leaf"], n_pts)
    return total
