"""Independent reference computations used by the test suite.

* Closed forms for the inner integral over a reference tetrahedron
  conv{h e1, h e2, h e3, 0} (coordinates (tau, y1, y2, y3)) with unit density
  and the kernel 1/|x-y| (without the 4 pi factor), for evaluation points on
  the panel hyperplane approaching either a corner or an edge. These are
  exact pencil-and-paper integrals; the scale h must be large enough that the
  oblique face of the tetrahedron stays inactive, which is verified
  numerically.
* A first-order brute-force quadrature of the chart-parametrized inner
  integral on dense uniform center-sampled grids, independent of the
  quadtree engine.
* A finite-difference validation of the closed-form chart Jacobians.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .cone_quadrature import (
    ConeFrame,
    build_cone_frame,
    chart_integrand,
    chart_point,
    cone_point,
)
from .geometry import KernelId, Panel, panel_from_vertices

TWO_PI = 2.0 * np.pi


@dataclass(frozen=True)
class ReferenceConfig:
    """Reference-tetrahedron configuration: approach case ('corner' or
    'edge'), time t > 0, offset 0 < eps < t and panel scale h (large enough
    that only the three coordinate faces of the tetrahedron are active)."""

    case: str
    t: float
    eps: float
    h: float = None

    def __post_init__(self):
        if self.case not in ("corner", "edge"):
            raise ValueError("case must be 'corner' or 'edge'")
        if not (0.0 < self.eps < self.t):
            raise ValueError("require 0 < eps < t")
        if self.h is None:
            object.__setattr__(self, "h", 10.0 * self.t)


def reference_panel(h: float) -> Panel:
    """The reference tetrahedron conv{h e1, h e2, h e3, 0} with normal e4."""
    return panel_from_vertices(
        (h, 0.0, 0.0, 0.0),
        (0.0, h, 0.0, 0.0),
        (0.0, 0.0, h, 0.0),
        (0.0, 0.0, 0.0, 0.0),
        orient_normal=(0.0, 0.0, 1.0),
    )


def reference_apex(cfg: ReferenceConfig) -> np.ndarray:
    if cfg.case == "corner":
        s = cfg.eps * np.sqrt(2.0) / 2.0
        return np.array([cfg.t, -s, -s, 0.0])
    return np.array([cfg.t, -cfg.eps, cfg.h / 2.0, 0.0])


def closed_form_inner(cfg: ReferenceConfig) -> float:
    """Exact inner integral for the reference configuration (kernel without
    the 4 pi factor, unit density)."""
    t, eps = cfg.t, cfg.eps
    _check_oblique_face_inactive(cfg)
    if cfg.case == "corner":
        # the closing angle delta = arcsin(eps/(t sqrt(2))) enters through
        # tan(delta/2) = sqrt(2) (1 - sqrt(1 - eps^2/(2 t^2))) / (eps/t)
        u = eps / t
        return float(
            2.0 * t * (np.pi / 4.0 - np.arcsin(np.sqrt(2.0) / 2.0 * u))
            - np.sqrt(2.0) * eps * np.log(np.sqrt(2.0) - 1.0)
            + np.sqrt(2.0) * eps
            * np.log(np.sqrt(2.0) * (1.0 - np.sqrt(1.0 - 0.5 * u * u)) / u)
        )
    u = eps / t
    return float(
        2.0 * t * (np.pi - np.arccos(-u))
        - 2.0 * eps * np.log((1.0 + np.sqrt(1.0 - u * u)) / u)
    )


def _check_oblique_face_inactive(cfg: ReferenceConfig) -> None:
    """The closed forms assume the oblique face tau + y1 + y2 = h never cuts
    the lit region; sample the region coarsely and verify."""
    apex = reference_apex(cfg)
    rho = np.linspace(0.0, 1.0, 41)[1:]
    phi = np.linspace(0.0, TWO_PI, 81)[:-1]
    RHO, PHI = np.meshgrid(rho, phi)
    r0 = cfg.t
    tau = apex[0] - r0 * RHO
    y1 = apex[1] - r0 * RHO * np.cos(PHI)
    y2 = apex[2] - r0 * RHO * np.sin(PHI)
    inside3 = (tau > 0) & (y1 > 0) & (y2 > 0) & (RHO <= 1.0)
    phi4 = (tau + y1 + y2 - cfg.h) / np.sqrt(3.0)
    if np.any(inside3 & (phi4 >= 0.0)):
        raise ValueError(
            "panel scale h too small: the oblique face cuts the lit region"
        )


def brute_force_inner(apex, panel: Panel, k: KernelId, density,
                      n_grid: int, include_4pi: bool = True) -> float:
    """First-order reference for the inner integral: dense uniform
    center-sampled grids (n_grid^2 cells per chart domain, full phi
    revolution) with pointwise inside testing of the four face functions."""
    if n_grid < 10:
        raise ValueError("n_grid must be >= 10")
    frame = build_cone_frame(apex, panel)
    if frame is None:
        return 0.0
    total = 0.0
    for which, dom in ((1, frame.D1), (2, frame.D2)):
        if dom is None:
            continue
        lo, hi = dom
        du = (hi - lo) / n_grid
        dv = TWO_PI / n_grid
        u = lo + du * (np.arange(n_grid) + 0.5)
        v = dv * (np.arange(n_grid) + 0.5)
        U, V = np.meshgrid(u, v, indexing="ij")
        eta = np.column_stack([U.ravel(), V.ravel()])
        mask = np.ones(len(eta), dtype=bool)
        region_vals = _face_values(frame, which, eta)
        for vals in region_vals:
            mask &= vals < 0.0
        if not np.any(mask):
            continue
        f = chart_integrand(frame, which, k, density, include_4pi)
        total += float(f(eta[mask]).sum()) * du * dv
    return total


def _face_values(frame: ConeFrame, which: int, eta: np.ndarray):
    from .cone_quadrature import _chart_pieces

    rho, st, ct, phi, _ = _chart_pieces(frame, eta, which)
    cp, sp = np.cos(phi), np.sin(phi)
    out = []
    for j in range(4):
        m = frame.face_m[j]
        es = m[0] * cp * st + m[1] * sp * st + m[2] * ct
        out.append(frame.face_offset[j] - frame.r0 * rho * (frame.face_b[j] + es))
    return out


def chart_length_check(frame: ConeFrame, which: int, n: int,
                       rng=None, fd_step: float = 1e-6) -> float:
    """Max relative deviation between the closed-form chart Jacobian and the
    Gram determinant of the finite-difference chart differential at n random
    interior parameters."""
    if rng is None:
        rng = np.random.default_rng(0)
    dom = frame.D1 if which == 1 else frame.D2
    if dom is None:
        raise ValueError("empty chart domain")
    lo, hi = dom
    margin = 2e-3 * (hi - lo)
    worst = 0.0
    for _ in range(n):
        u = rng.uniform(lo + margin, hi - margin)
        v = rng.uniform(0.0, TWO_PI)
        _, J = chart_point(frame, which, (u, v))
        h1 = fd_step * max(hi - lo, 1.0)
        h2 = fd_step * TWO_PI

        def zeta(a, b):
            z, _ = chart_point(frame, which, (a, b))
            return z

        d1 = (zeta(u + h1, v) - zeta(u - h1, v)) / (2.0 * h1)
        d2 = (zeta(u, v + h2) - zeta(u, v - h2)) / (2.0 * h2)
        g11 = float(d1 @ d1)
        g22 = float(d2 @ d2)
        g12 = float(d1 @ d2)
        # the chart's second coordinate is phi itself: the surface measure in
        # (rho, phi, theta) space restricted to the curve x revolution
        J_fd = np.sqrt(max(g11 * g22 - g12 * g12, 0.0))
        worst = max(worst, abs(J_fd - J) / max(abs(J), 1e-300))
    return worst


def seam_mismatch(frame: ConeFrame, n_phi: int = 8) -> float:
    """Max distance between the two charts' cone parameters along the seam
    (theta_eq from chart 1 versus rho_eq from chart 2)."""
    if frame.D1 is None or frame.D2 is None:
        return 0.0
    worst = 0.0
    th_seam = frame.D1[1] if frame.rho0 > 0 else frame.D1[0]
    for phi in np.linspace(0.0, TWO_PI, n_phi, endpoint=False):
        z1, _ = chart_point(frame, 1, (th_seam, phi))
        z2, _ = chart_point(frame, 2, (frame.rho_eq, phi))
        worst = max(worst, float(np.max(np.abs(z1 - z2))))
        p1 = cone_point(frame, z1)
        p2 = cone_point(frame, z2)
        worst = max(worst, float(np.max(np.abs(p1 - p2))))
    return worst
