"""Closed-form reference solutions used by the experiments and tests.

The workhorse is the outgoing spherical wave u(t, x) = mu(t - r)/r with
r = |x - y_S| and a causal profile mu (mu = 0 for t <= 0), which solves the
homogeneous wave equation away from the source point with vanishing initial
data. Its Cauchy data on a surface provide exact Dirichlet/Neumann traces for
the quadrature and convergence studies.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

# profile ids shared with the compiled fast path
MU_SMOOTH_BUMP = 0  # exp((t^2/4 - t)^{-1}) on (0, 4), zero elsewhere
MU_CUBIC_EXP = 1  # t^3 exp(-t) for t > 0
MU_QUARTIC_EXP2 = 2  # t^4 exp(-2 t) for t > 0


def mu_eval(s, kind: int):
    """Causal time profile mu(s)."""
    s = np.asarray(s, dtype=float)
    out = np.zeros_like(s)
    if kind == MU_SMOOTH_BUMP:
        m = (s > 0.0) & (s < 4.0)
        sm = s[m]
        out[m] = np.exp(1.0 / (0.25 * sm * sm - sm))
    elif kind == MU_CUBIC_EXP:
        m = s > 0.0
        sm = s[m]
        out[m] = sm**3 * np.exp(-sm)
    elif kind == MU_QUARTIC_EXP2:
        m = s > 0.0
        sm = s[m]
        out[m] = sm**4 * np.exp(-2.0 * sm)
    else:
        raise ValueError(f"unknown profile kind {kind}")
    return out


def mu_deriv(s, kind: int):
    """d mu/ds."""
    s = np.asarray(s, dtype=float)
    out = np.zeros_like(s)
    if kind == MU_SMOOTH_BUMP:
        m = (s > 0.0) & (s < 4.0)
        sm = s[m]
        q = 0.25 * sm * sm - sm
        out[m] = np.exp(1.0 / q) * (-(0.5 * sm - 1.0) / (q * q))
    elif kind == MU_CUBIC_EXP:
        m = s > 0.0
        sm = s[m]
        out[m] = (3.0 * sm * sm - sm**3) * np.exp(-sm)
    elif kind == MU_QUARTIC_EXP2:
        m = s > 0.0
        sm = s[m]
        out[m] = (4.0 * sm**3 - 2.0 * sm**4) * np.exp(-2.0 * sm)
    else:
        raise ValueError(f"unknown profile kind {kind}")
    return out


@dataclass(frozen=True)
class SphericalWave:
    """Outgoing spherical wave mu(t - |x - source|)/|x - source|."""

    source: np.ndarray
    mu_kind: int = MU_SMOOTH_BUMP

    def value(self, points) -> np.ndarray:
        """u at space-time points (m, 4)."""
        p = np.atleast_2d(np.asarray(points, dtype=float))
        r = np.linalg.norm(p[:, 1:] - self.source, axis=1)
        return mu_eval(p[:, 0] - r, self.mu_kind) / r

    def dt(self, points) -> np.ndarray:
        """Time derivative of u."""
        p = np.atleast_2d(np.asarray(points, dtype=float))
        r = np.linalg.norm(p[:, 1:] - self.source, axis=1)
        return mu_deriv(p[:, 0] - r, self.mu_kind) / r

    def neumann(self, points, normal) -> np.ndarray:
        """Normal derivative <normal, grad_x u> for a fixed spatial unit
        normal (one normal for all points, as on a flat panel)."""
        p = np.atleast_2d(np.asarray(points, dtype=float))
        d = p[:, 1:] - self.source
        r = np.linalg.norm(d, axis=1)
        s = p[:, 0] - r
        radial = -mu_deriv(s, self.mu_kind) / r - mu_eval(s, self.mu_kind) / (r * r)
        return (d @ np.asarray(normal, dtype=float)) / r * radial

    def neumann_varying(self, points, normals) -> np.ndarray:
        """Normal derivative with per-point normals (m, 3)."""
        p = np.atleast_2d(np.asarray(points, dtype=float))
        d = p[:, 1:] - self.source
        r = np.linalg.norm(d, axis=1)
        s = p[:, 0] - r
        radial = -mu_deriv(s, self.mu_kind) / r - mu_eval(s, self.mu_kind) / (r * r)
        return (d * np.asarray(normals, dtype=float)).sum(1) / r * radial


# Real part of the degree-1, order-0 spherical harmonic, extended radially.
Y10_SCALE = float(np.sqrt(3.0 / (4.0 * np.pi)))


def sphere_dirichlet_datum(points) -> np.ndarray:
    """g(t, x) = t^4 exp(-2 t) Re(Y_1^0)(x/|x|): the Dirichlet datum of the
    spherical-scatterer study."""
    p = np.atleast_2d(np.asarray(points, dtype=float))
    g0 = mu_eval(p[:, 0], MU_QUARTIC_EXP2)
    nrm = np.linalg.norm(p[:, 1:], axis=1)
    return g0 * Y10_SCALE * p[:, 3] / nrm
