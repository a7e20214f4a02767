"""Inner integral of the retarded layer potentials: the contribution of one
panel at one evaluation point, computed in light-cone parameter coordinates.

The backward cone through the apex is parametrized by
``psi(rho, phi, theta) = apex - r0*rho*(1, R e(phi, theta))`` with e the usual
spherical direction and R a rotation taking the panel's spatial normal to the
pole. On the panel's hyperplane the parameters satisfy
``rho0 = rho*cos(theta)``, a curve covered by two charts: ell_1 over theta
(steep part) and ell_2 over rho (flat part), split where the two
parametrizations have slopes of equal magnitude. The integrand (pulled-back
kernel times density times chart Jacobian) is smooth on each chart, and the
integration domain is the implicitly defined subset where the four panel face
functions composed with the chart are negative; :mod:`stbem.implicit_quad`
does the rest.

For efficiency the integration rectangles are tightened to rigorous bounds
derived from the panel's time range and spatial bounding ball; this never
excludes any part of the lit region, it only shrinks the quadtree root.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .geometry import KernelId, Panel, as_point_array
from .implicit_quad import ImplicitRegion, QuadConfig, integrate_implicit

TWO_PI = 2.0 * np.pi
FOUR_PI = 4.0 * np.pi


def equal_slope_point(rho0: float):
    """(rho_eq, theta_eq): the point on the hyperplane curve rho*cos(theta)
    = rho0 where the rho- and theta-parametrizations have derivatives of
    equal magnitude. For rho0 = 0 the limit (0, pi/2) is returned."""
    if rho0 == 0.0:
        return 0.0, 0.5 * np.pi
    r2 = rho0 * rho0
    rho_eq = np.sqrt(0.5 * (r2 + np.sqrt(r2 * r2 + 4.0 * r2)))
    theta_eq = float(np.arccos(np.clip(rho0 / rho_eq, -1.0, 1.0)))
    return float(rho_eq), theta_eq


def rotation_to_pole(nu_x: np.ndarray) -> np.ndarray:
    """Rotation R with R^T nu_x = e3, i.e. columns (b1, b2, nu_x) with an
    orthonormal (b1, b2) completing the spatial normal.

    Branch-free Householder-style construction with the sign convention that
    avoids cancellation near nu_x = -e3."""
    n1, n2, n3 = float(nu_x[0]), float(nu_x[1]), float(nu_x[2])
    s = np.copysign(1.0, n3)
    a = -1.0 / (s + n3)
    b = n1 * n2 * a
    b1 = np.array([1.0 + s * n1 * n1 * a, s * b, -s * n1])
    b2 = np.array([b, s + n2 * n2 * a, -n2])
    return np.column_stack([b1, b2, np.asarray(nu_x, dtype=float)])


@dataclass
class ConeFrame:
    """Per-(apex, panel) parametrization data of the backward light cone.

    D1/D2 are the chart parameter domains before tightening: D1 is the
    theta-interval of the steep chart ([0, theta_eq) for rho0 > 0,
    (theta_eq, pi] for rho0 < 0, empty for rho0 = 0) crossed with a full phi
    revolution, D2 = [rho_eq, 1] x [0, 2 pi) when rho_eq < 1. The *_box
    attributes are the tightened integration rectangles actually used
    (None when provably empty)."""

    apex: np.ndarray
    r0: float
    rho0: float
    rotation: np.ndarray  # (3, 3)
    rho_eq: float
    theta_eq: float
    D1: tuple  # (theta_lo, theta_hi) or None
    D2: tuple  # (rho_lo, rho_hi) or None
    # face constraint coefficients in the rotated frame:
    # g_j(zeta) = face_offset[j] - r0*rho*(face_b[j] + <face_m[j], e(phi,theta)>)
    face_offset: np.ndarray = None
    face_b: np.ndarray = None
    face_m: np.ndarray = None
    d1_box: tuple = None  # (th_lo, th_hi, phi_lo, phi_hi)
    d2_box: tuple = None  # (rho_lo, rho_hi, phi_lo, phi_hi)


def build_cone_frame(apex, panel: Panel):
    """Build the cone frame for an evaluation point and a panel.

    Returns None (an empty intersection, not an error) when the apex is not
    strictly later than the panel's earliest time or when the panel's
    hyperplane misses the rho <= 1 cap of the cone (|rho0| >= 1)."""
    x = as_point_array(apex)
    verts = panel.vertices
    tau_min = float(verts[:, 0].min())
    tau_max = float(verts[:, 0].max())
    r0 = float(x[0]) - tau_min
    if r0 <= 0.0:
        return None
    nu = panel.normal
    rho0 = float(np.dot(x - verts[0], nu)) / r0
    if abs(rho0) >= 1.0:
        return None
    rho_eq, theta_eq = equal_slope_point(rho0)
    if rho0 > 0.0:
        D1 = (0.0, theta_eq)
    elif rho0 < 0.0:
        D1 = (theta_eq, np.pi)
    else:
        D1 = None
    D2 = (rho_eq, 1.0) if rho_eq < 1.0 else None

    R = rotation_to_pole(nu[1:])
    offs = np.empty(4)
    bvec = np.empty(4)
    mvec = np.empty((4, 3))
    for j, face in enumerate(panel.faces):
        offs[j] = np.dot(x - face.anchor, face.conormal)
        bvec[j] = face.conormal[0]
        mvec[j] = R.T @ face.conormal[1:]
    frame = ConeFrame(
        apex=x, r0=r0, rho0=rho0, rotation=R, rho_eq=rho_eq,
        theta_eq=theta_eq, D1=D1, D2=D2,
        face_offset=offs, face_b=bvec, face_m=mvec,
    )
    _tighten_boxes(frame, panel, tau_max)
    return frame


def _tighten_boxes(frame: ConeFrame, panel: Panel, tau_max: float) -> None:
    """Intersect the chart domains with rigorous bounds from the panel's
    time range and spatial bounding ball. The bounds only discard parameter
    regions that provably contain no point of the lit panel."""
    x = frame.apex
    r0 = frame.r0
    rho0 = frame.rho0

    rho_lo = max(0.0, (x[0] - tau_max) / r0)
    rho_hi = 1.0

    # direction cap: view directions from the apex to any panel point lie in
    # the spherical cap around the normalized sum of the vertex directions
    # with radius the maximal vertex-direction angle (positive-span hull of
    # the vertex offsets; caps of radius < pi/2 are geodesically convex)
    th_lo, th_hi = 0.0, np.pi
    phi_int = (0.0, TWO_PI)
    offs = panel.vertices[:, 1:] - x[1:]
    norms = np.linalg.norm(offs, axis=1)
    if norms.min() > 1e-12 * (norms.max() + 1.0):
        dirs = frame.rotation.T @ (offs / norms[:, None]).T  # (3, 4)
        csum = dirs.sum(axis=1)
        cn = float(np.linalg.norm(csum))
        if cn > 1e-12:
            center = csum / cn
            cosang = np.clip(dirs.T @ center, -1.0, 1.0)
            alpha = float(np.arccos(cosang.min()))
            if alpha < 0.5 * np.pi:
                # psi points in the negative offset direction
                u = -center
                theta_c = float(np.arccos(np.clip(u[2], -1.0, 1.0)))
                th_lo = max(0.0, theta_c - alpha)
                th_hi = min(np.pi, theta_c + alpha)
                sin_min = min(np.sin(th_lo), np.sin(th_hi))
                chord = 2.0 * np.sin(0.5 * alpha)
                if th_lo > 0.0 and th_hi < np.pi and chord < sin_min:
                    beta = float(np.arcsin(chord / sin_min))
                    phi_c = float(np.arctan2(u[1], u[0]))
                    phi_int = (phi_c - beta, phi_c + beta)

    pad = 1e-12  # guards the rigorous trig bounds against roundoff
    th_lo = max(0.0, th_lo - pad)
    th_hi = min(np.pi, th_hi + pad)
    rho_lo = max(0.0, rho_lo - pad)

    # map the theta interval to rho via rho = rho0/cos(theta) (hyperplane)
    if rho0 > 0.0:
        if th_lo >= 0.5 * np.pi:
            rho_th = None
        else:
            lo = rho0 / np.cos(th_lo)
            hi = rho0 / np.cos(th_hi) if th_hi < 0.5 * np.pi else np.inf
            rho_th = (lo, hi)
    elif rho0 < 0.0:
        if th_hi <= 0.5 * np.pi:
            rho_th = None
        else:
            lo = rho0 / np.cos(th_hi)
            hi = rho0 / np.cos(th_lo) if th_lo > 0.5 * np.pi else np.inf
            rho_th = (lo, hi)
    else:
        rho_th = (0.0, np.inf) if th_lo <= 0.5 * np.pi <= th_hi else None

    frame.d1_box = None
    if frame.D1 is not None:
        a = max(frame.D1[0], th_lo)
        b = min(frame.D1[1], th_hi)
        # theta from the rho range (monotone on each branch)
        if rho0 > 0.0:
            b = min(b, np.arccos(max(rho0 / rho_hi, -1.0)))
            if rho_lo > rho0:
                a = max(a, np.arccos(min(rho0 / rho_lo, 1.0)))
        else:
            a = max(a, np.arccos(np.clip(rho0 / rho_hi, -1.0, 1.0)))
            if rho_lo > -rho0:
                b = min(b, np.arccos(np.clip(rho0 / rho_lo, -1.0, 1.0)))
        a = max(0.0, a - pad)
        b = min(np.pi, b + pad)
        if b > a:
            frame.d1_box = (a, b, phi_int[0], phi_int[1])

    frame.d2_box = None
    if frame.D2 is not None and rho_th is not None:
        a = max(frame.D2[0], rho_lo, rho_th[0] - pad)
        b = min(frame.D2[1], rho_hi, rho_th[1] + pad)
        if b > a:
            frame.d2_box = (a, b, phi_int[0], phi_int[1])


# ---------------------------------------------------------------------------
# Charts and pullbacks
# ---------------------------------------------------------------------------


def chart_point(frame: ConeFrame, which: int, eta):
    """Map one chart parameter to (zeta, J): the cone parameter
    (rho, phi, theta) and the 2D chart surface Jacobian.

    Chart 1 is (theta, phi) -> (rho0/cos theta, phi, theta) with
    J = sqrt(1 + rho0^2 sin^2(theta)/cos^4(theta)); chart 2 is
    (rho, phi) -> (rho, phi, arccos(rho0/rho)) with
    J = sqrt(1 + rho0^2 / (rho^2 (rho^2 - rho0^2)))."""
    eta = np.asarray(eta, dtype=float)
    rho0 = frame.rho0
    if which == 1:
        if frame.D1 is None:
            raise ValueError("chart 1 has an empty domain for rho0 = 0")
        theta, phi = float(eta[0]), float(eta[1])
        if not (frame.D1[0] - 1e-12 <= theta <= frame.D1[1] + 1e-12):
            raise ValueError("parameter outside the chart-1 domain")
        ct = np.cos(theta)
        rho = rho0 / ct
        st = np.sin(theta)
        J = np.sqrt(1.0 + rho0 * rho0 * st * st / ct**4)
        return np.array([rho, phi, theta]), float(J)
    if which == 2:
        rho, phi = float(eta[0]), float(eta[1])
        if frame.D2 is None or not (
            frame.D2[0] - 1e-12 <= rho <= frame.D2[1] + 1e-12
        ):
            raise ValueError("parameter outside the chart-2 domain")
        if rho0 == 0.0:
            return np.array([rho, phi, 0.5 * np.pi]), 1.0
        theta = np.arccos(np.clip(rho0 / rho, -1.0, 1.0))
        J = np.sqrt(1.0 + rho0 * rho0 / (rho * rho * (rho * rho - rho0 * rho0)))
        return np.array([rho, phi, theta]), float(J)
    raise ValueError("chart index must be 1 or 2")


def cone_point(frame: ConeFrame, zeta) -> np.ndarray:
    """psi(zeta): the space-time point on the backward cone with parameters
    zeta = (rho, phi, theta)."""
    rho, phi, theta = (float(z) for z in np.asarray(zeta, dtype=float))
    st = np.sin(theta)
    e = np.array([np.cos(phi) * st, np.sin(phi) * st, np.cos(theta)])
    out = np.empty(4)
    out[0] = frame.apex[0] - frame.r0 * rho
    out[1:] = frame.apex[1:] - frame.r0 * rho * (frame.rotation @ e)
    return out


def pullback_kernel(frame: ConeFrame, k: KernelId, zeta,
                    include_4pi: bool = True) -> float:
    """Pulled-back kernel k_psi at an on-hyperplane cone parameter.

    k_psi,1 = r0 rho sin(theta)/sqrt(cos^2 theta + rho^2 sin^2 theta), and
    k_psi,i = rho0 r0^(3-i) rho^(2-i) sin(theta)/sqrt(...) for i = 2, 3; the
    1/(4 pi) kernel normalization is restored here unless disabled."""
    rho, _, theta = (float(z) for z in np.asarray(zeta, dtype=float))
    r0, rho0 = frame.r0, frame.rho0
    scale = 1.0 / FOUR_PI if include_4pi else 1.0
    if rho0 == 0.0:
        if k is KernelId.K1:
            return scale * r0
        return 0.0
    st, ct = np.sin(theta), np.cos(theta)
    den = np.sqrt(ct * ct + rho * rho * st * st)
    if k is KernelId.K1:
        return scale * r0 * rho * st / den
    if k is KernelId.K2:
        return scale * rho0 * r0 * st / den
    if k is KernelId.K3:
        return scale * rho0 * st / (rho * den)
    raise ValueError(f"unknown kernel {k!r}")


# ---------------------------------------------------------------------------
# Densities
# ---------------------------------------------------------------------------


@dataclass
class PanelDensity:
    """Polynomial density on one panel: degree 0 (one coefficient) or
    degree 1 (four vertex values, affine on the panel). With
    ``time_derivative`` set, evaluation yields the constant time component
    of the affine gradient instead of the value."""

    panel: Panel
    degree: int
    coefficients: np.ndarray
    time_derivative: bool = False

    def as_affine(self):
        """(c0, grad) with density(y) = c0 + <grad, y> on the panel."""
        coeff = np.atleast_1d(np.asarray(self.coefficients, dtype=float))
        if self.degree == 0:
            c0, grad = float(coeff[0]), np.zeros(4)
        elif self.degree == 1:
            c0, grad = panel_affine(self.panel, coeff)
        else:
            raise ValueError("density degree must be 0 or 1")
        if self.time_derivative:
            return grad[0], np.zeros(4)
        return c0, grad


def panel_affine(panel: Panel, values: np.ndarray):
    """Affine function on R^4 matching the four vertex values, gauged so its
    gradient is tangent to the panel (orthogonal to the normal)."""
    A = np.zeros((5, 5))
    A[:4, 0] = 1.0
    A[:4, 1:] = panel.vertices
    A[4, 1:] = panel.normal
    rhs = np.zeros(5)
    rhs[:4] = values
    sol = np.linalg.solve(A, rhs)
    return float(sol[0]), sol[1:]


def _density_evaluator(frame: ConeFrame, density):
    """Return f(points (m,4)) -> (m,) for a PanelDensity or a vectorized
    callable density."""
    if isinstance(density, PanelDensity):
        c0, grad = density.as_affine()
        return lambda pts: c0 + pts @ grad
    if callable(density):
        return density
    raise TypeError("density must be a PanelDensity or a callable")


# ---------------------------------------------------------------------------
# Inner integral
# ---------------------------------------------------------------------------


def _chart_pieces(frame: ConeFrame, eta: np.ndarray, which: int):
    """Vectorized chart kinematics for eta (m, 2): returns
    (rho, sin_theta, cos_theta, phi, J)."""
    rho0 = frame.rho0
    if which == 1:
        theta = eta[:, 0]
        phi = eta[:, 1]
        ct = np.cos(theta)
        st = np.sin(theta)
        rho = rho0 / ct
        J = np.sqrt(1.0 + rho0 * rho0 * st * st / ct**4)
    else:
        rho = eta[:, 0]
        phi = eta[:, 1]
        if rho0 == 0.0:
            ct = np.zeros_like(rho)
            st = np.ones_like(rho)
            J = np.ones_like(rho)
        else:
            ct = np.clip(rho0 / rho, -1.0, 1.0)
            st = np.sqrt(np.maximum(1.0 - ct * ct, 0.0))
            J = np.sqrt(
                1.0 + rho0 * rho0 / (rho * rho * (rho * rho - rho0 * rho0))
            )
    return rho, st, ct, phi, J


def chart_region(frame: ConeFrame, which: int, support=None):
    """ImplicitRegion of the lit panel part in chart ``which`` coordinates,
    on the tightened rectangle; None when the chart is empty.

    ``support`` optionally adds density-support constraints, each the tuple
    ('wave', source, sgn, c, scale) representing sgn*(tau - |y - source|) +
    c < 0. They must be redundant for the integral's value (the integrand
    vanishes where they are positive); they let the quadrature parametrize
    non-smooth support boundaries such as causal wavefronts exactly. Every
    constraint carries a rigorous cell-range bound, making inside/outside
    classification sound."""
    box = frame.d1_box if which == 1 else frame.d2_box
    if box is None:
        return None
    r0 = frame.r0

    def face_constraint(j):
        off = frame.face_offset[j]
        b = frame.face_b[j]
        m = frame.face_m[j]

        def g(eta):
            eta = np.asarray(eta, dtype=float)
            rho, st, ct, phi, _ = _chart_pieces(frame, eta, which)
            es_dot = m[0] * np.cos(phi) * st + m[1] * np.sin(phi) * st + m[2] * ct
            return off - r0 * rho * (b + es_dot)

        return g

    def wave_constraint(source, sgn, c):
        source = np.asarray(source, dtype=float)

        def g(eta):
            pts = chart_points(frame, which, np.asarray(eta, dtype=float))
            s = pts[:, 0] - np.linalg.norm(pts[:, 1:] - source, axis=1)
            return sgn * s + c

        return g

    def face_deriv(j):
        b = frame.face_b[j]
        m = frame.face_m[j]

        def dg(eta):
            eta = np.asarray(eta, dtype=float)
            q, qp, thp, ct, st, cp, sp = _chart_kinematics(frame, eta, which)
            me = m[0] * cp * st + m[1] * sp * st + m[2] * ct
            me_th = m[0] * cp * ct + m[1] * sp * ct - m[2] * st
            me_ph = (-m[0] * sp + m[1] * cp) * st
            du = -qp * (b + me) - q * me_th * thp
            dv = -q * me_ph
            return du, dv

        return dg

    def wave_deriv(source, sgn):
        w = frame.apex[1:] - np.asarray(source, dtype=float)
        wsq = float(w @ w)
        mw = frame.rotation.T @ w

        def dg(eta):
            eta = np.asarray(eta, dtype=float)
            q, qp, thp, ct, st, cp, sp = _chart_kinematics(frame, eta, which)
            me = mw[0] * cp * st + mw[1] * sp * st + mw[2] * ct
            me_th = mw[0] * cp * ct + mw[1] * sp * ct - mw[2] * st
            me_ph = (-mw[0] * sp + mw[1] * cp) * st
            rhat = np.sqrt(np.maximum(wsq - 2.0 * q * me + q * q, 1e-300))
            dr_u = (qp * (q - me) - q * me_th * thp) / rhat
            dr_v = -q * me_ph / rhat
            return sgn * (-qp - dr_u), sgn * (-dr_v)

        return dg

    # constraint magnitude scale: values below roundoff noise of this scale
    # occur when the cone passes exactly through panel vertices/edges
    constraints = [face_constraint(j) for j in range(4)]
    bounds = [_face_bound_fn(frame, which, j) for j in range(4)]
    derivs = [face_deriv(j) for j in range(4)]
    scales = list(np.abs(frame.face_offset) + 2.0 * r0)
    if support:
        for kind, source, sgn, c, scale in support:
            if kind != "wave":
                raise ValueError(f"unknown support constraint kind {kind!r}")
            constraints.append(wave_constraint(source, sgn, c))
            bounds.append(_wave_bound_fn(frame, which, np.asarray(source),
                                         sgn, c))
            derivs.append(wave_deriv(source, sgn))
            scales.append(scale)
    return ImplicitRegion(
        rectangle=(box[0], box[1], box[2], box[3]),
        constraints=constraints,
        scales=np.array(scales),
        bound_fns=bounds,
        deriv_fns=derivs,
    )


def _chart_kinematics(frame: ConeFrame, eta: np.ndarray, which: int):
    """(q, dq/du, dtheta/du, ct, st, cp, sp) for analytic constraint
    derivatives; q = r0*rho."""
    rho0 = frame.rho0
    r0 = frame.r0
    u = eta[:, 0]
    phi = eta[:, 1]
    cp = np.cos(phi)
    sp = np.sin(phi)
    if which == 1:
        ct = np.cos(u)
        st = np.sin(u)
        q = r0 * rho0 / ct
        qp = q * st / ct
        thp = np.ones_like(u)
    else:
        q = r0 * u
        qp = np.full_like(u, r0)
        if rho0 == 0.0:
            ct = np.zeros_like(u)
            st = np.ones_like(u)
            thp = np.zeros_like(u)
        else:
            ct = np.clip(rho0 / u, -1.0, 1.0)
            st = np.sqrt(np.maximum(1.0 - ct * ct, 0.0))
            thp = rho0 / (u * np.sqrt(np.maximum(u * u - rho0 * rho0,
                                                 1e-300)))
    return q, qp, thp, ct, st, cp, sp


def _cos_range(lo: float, hi: float):
    """Exact range of cos over [lo, hi] (any real interval)."""
    if hi - lo >= TWO_PI:
        return -1.0, 1.0
    cl, ch = np.cos(lo), np.cos(hi)
    out_lo = min(cl, ch)
    out_hi = max(cl, ch)
    # maxima at multiples of 2 pi, minima at odd multiples of pi
    if np.floor(hi / TWO_PI) >= np.ceil(lo / TWO_PI):
        out_hi = 1.0
    if np.floor((hi - np.pi) / TWO_PI) >= np.ceil((lo - np.pi) / TWO_PI):
        out_lo = -1.0
    return out_lo, out_hi


def _interval_mul(a1, a2, b1, b2):
    cands = (a1 * b1, a1 * b2, a2 * b1, a2 * b2)
    return min(cands), max(cands)


def _chart_rho_range(frame: ConeFrame, which: int, u_lo: float, u_hi: float):
    """Range of rho over a cell's first-coordinate interval."""
    if which == 2:
        return u_lo, u_hi
    rho0 = frame.rho0
    c_lo, c_hi = np.cos(u_hi), np.cos(u_lo)  # cos decreasing on [0, pi]
    if rho0 > 0.0:
        if c_lo <= 0.0:
            return rho0 / max(c_hi, 1e-300), np.inf
        return rho0 / c_hi, rho0 / c_lo
    if c_hi >= 0.0:
        return rho0 / min(c_lo, -1e-300), np.inf
    return rho0 / c_lo, rho0 / c_hi


def _sin_theta_range(t_lo: float, t_hi: float):
    s_lo = min(np.sin(t_lo), np.sin(t_hi))
    s_hi = 1.0 if t_lo <= 0.5 * np.pi <= t_hi else max(np.sin(t_lo),
                                                       np.sin(t_hi))
    return s_lo, s_hi


def _theta_range(frame: ConeFrame, which: int, u_lo: float, u_hi: float,
                 rho_lo: float, rho_hi: float):
    if which == 1:
        return u_lo, u_hi
    rho0 = frame.rho0
    if rho0 == 0.0:
        h = 0.5 * np.pi
        return h, h
    a1 = np.arccos(np.clip(rho0 / rho_lo, -1.0, 1.0)) if rho_lo > 0 else (
        0.0 if rho0 > 0 else np.pi)
    a2 = np.arccos(np.clip(rho0 / rho_hi, -1.0, 1.0))
    return min(a1, a2), max(a1, a2)


def _direction_dot_range(m: np.ndarray, t_lo: float, t_hi: float,
                         p_lo: float, p_hi: float):
    """Rigorous range of <m, e(phi, theta)> over a parameter cell."""
    ct_lo, ct_hi = np.cos(t_hi), np.cos(t_lo)
    st_lo, st_hi = _sin_theta_range(t_lo, t_hi)
    amp = float(np.hypot(m[0], m[1]))
    if amp > 0.0:
        phi0 = float(np.arctan2(m[1], m[0]))
        c_lo, c_hi = _cos_range(p_lo - phi0, p_hi - phi0)
    else:
        c_lo = c_hi = 0.0
    t1_lo, t1_hi = _interval_mul(st_lo, st_hi, amp * c_lo, amp * c_hi)
    if m[2] >= 0.0:
        t2_lo, t2_hi = m[2] * ct_lo, m[2] * ct_hi
    else:
        t2_lo, t2_hi = m[2] * ct_hi, m[2] * ct_lo
    return t1_lo + t2_lo, t1_hi + t2_hi


def _face_bound_fn(frame: ConeFrame, which: int, j: int):
    off = float(frame.face_offset[j])
    b = float(frame.face_b[j])
    m = frame.face_m[j]
    r0 = frame.r0

    def bound(cell):
        u_lo, u_hi, p_lo, p_hi = cell
        rho_lo, rho_hi = _chart_rho_range(frame, which, u_lo, u_hi)
        if not np.isfinite(rho_hi):
            return -np.inf, np.inf
        t_lo, t_hi = _theta_range(frame, which, u_lo, u_hi, rho_lo, rho_hi)
        me_lo, me_hi = _direction_dot_range(m, t_lo, t_hi, p_lo, p_hi)
        q_lo, q_hi = r0 * rho_lo, r0 * rho_hi
        term_lo, term_hi = _interval_mul(q_lo, q_hi, b + me_lo, b + me_hi)
        return off - term_hi, off - term_lo

    return bound


def _wave_bound_fn(frame: ConeFrame, which: int, source: np.ndarray,
                   sgn: float, c: float):
    """Bound of sgn*(t_apex - r0 rho - rhat) + c with
    rhat = |x_sp - source - r0 rho e|."""
    w = frame.apex[1:] - source
    wsq = float(w @ w)
    mw = frame.rotation.T @ w
    r0 = frame.r0
    t_apex = frame.apex[0]

    def bound(cell):
        u_lo, u_hi, p_lo, p_hi = cell
        rho_lo, rho_hi = _chart_rho_range(frame, which, u_lo, u_hi)
        if not np.isfinite(rho_hi):
            return -np.inf, np.inf
        t_lo, t_hi = _theta_range(frame, which, u_lo, u_hi, rho_lo, rho_hi)
        me_lo, me_hi = _direction_dot_range(mw, t_lo, t_hi, p_lo, p_hi)
        q_lo, q_hi = r0 * rho_lo, r0 * rho_hi
        # rhat^2 = wsq - 2 q me + q^2: monotone decreasing in me; in q the
        # minimum sits at q = me (clipped to the interval)
        qs = (q_lo, q_hi, min(max(me_hi, q_lo), q_hi))
        r2_min = min(wsq - 2.0 * q * me_hi + q * q for q in qs)
        r2_max = max(wsq - 2.0 * q * me_lo + q * q for q in (q_lo, q_hi))
        rhat_lo = np.sqrt(max(r2_min, 0.0))
        rhat_hi = np.sqrt(max(r2_max, 0.0))
        s_lo = t_apex - q_hi - rhat_hi
        s_hi = t_apex - q_lo - rhat_lo
        if sgn > 0.0:
            return s_lo + c, s_hi + c
        return -s_hi + c, -s_lo + c

    return bound


def chart_points(frame: ConeFrame, which: int, eta) -> np.ndarray:
    """Space-time images psi(chart(eta)) for eta (m, 2)."""
    eta = np.asarray(eta, dtype=float)
    rho, st, ct, phi, _ = _chart_pieces(frame, eta, which)
    cp = np.cos(phi)
    sp = np.sin(phi)
    R = frame.rotation
    pts = np.empty((len(eta), 4))
    pts[:, 0] = frame.apex[0] - frame.r0 * rho
    for i in range(3):
        e = R[i, 0] * cp * st + R[i, 1] * sp * st + R[i, 2] * ct
        pts[:, 1 + i] = frame.apex[1 + i] - frame.r0 * rho * e
    return pts


def wave_support_constraints(source: np.ndarray, mu_kind: int, apex,
                             r0: float):
    """Support constraints of a causal spherical wave density: the integrand
    vanishes before the wavefront tau - |y - source| = 0 (and, for the
    compactly supported profile, after tau - |y - source| = 4). Entries are
    ('wave', source, sgn, c, scale) representing sgn*s + c < 0."""
    source = np.asarray(source, dtype=float)
    scale = float(np.abs(apex[0]) + r0 + 4.0)
    out = [("wave", source, -1.0, 0.0, scale)]
    if mu_kind == 0:
        out.append(("wave", source, 1.0, -4.0, scale))
    return out


def chart_integrand(frame: ConeFrame, which: int, k: KernelId, density,
                    include_4pi: bool = True):
    """Integrand k_psi * (density o psi) * J_chart as a vectorized callable
    on chart parameters (m, 2)."""
    r0, rho0 = frame.r0, frame.rho0
    scale = 1.0 / FOUR_PI if include_4pi else 1.0
    R = frame.rotation
    apex = frame.apex

    affine = isinstance(density, PanelDensity)
    if affine:
        c0, grad = density.as_affine()
        gb = grad[0]
        gm = R.T @ grad[1:]
        w0 = c0 + float(np.dot(grad, apex))
    else:
        wfun = _density_evaluator(frame, density)

    def f(eta):
        eta = np.asarray(eta, dtype=float)
        rho, st, ct, phi, J = _chart_pieces(frame, eta, which)
        cp = np.cos(phi)
        sp = np.sin(phi)
        if rho0 == 0.0:
            kv = np.full(len(eta), r0) if k is KernelId.K1 else np.zeros(len(eta))
        else:
            den = np.sqrt(ct * ct + rho * rho * st * st)
            if k is KernelId.K1:
                kv = r0 * rho * st / den
            elif k is KernelId.K2:
                kv = rho0 * r0 * st / den
            else:
                kv = rho0 * st / (rho * den)
        if affine:
            es_dot = gm[0] * cp * st + gm[1] * sp * st + gm[2] * ct
            wv = w0 - r0 * rho * (gb + es_dot)
        else:
            pts = np.empty((len(eta), 4))
            pts[:, 0] = apex[0] - r0 * rho
            ex = R[0, 0] * cp * st + R[0, 1] * sp * st + R[0, 2] * ct
            ey = R[1, 0] * cp * st + R[1, 1] * sp * st + R[1, 2] * ct
            ez = R[2, 0] * cp * st + R[2, 1] * sp * st + R[2, 2] * ct
            pts[:, 1] = apex[1] - r0 * rho * ex
            pts[:, 2] = apex[2] - r0 * rho * ey
            pts[:, 3] = apex[3] - r0 * rho * ez
            wv = np.asarray(wfun(pts), dtype=float)
        return scale * kv * wv * J

    return f


def inner_integral(apex, panel: Panel, k: KernelId, density,
                   cfg: QuadConfig, include_4pi: bool = True,
                   stats: dict = None, support=None) -> float:
    """Contribution of one panel to the retarded layer potential with kernel
    ``k`` at the evaluation point ``apex``.

    ``density`` is a PanelDensity or a vectorized callable on space-time
    points; ``support`` optionally passes density-support constraints (see
    :func:`chart_region`). Returns 0 for empty cone-panel configurations."""
    frame = build_cone_frame(apex, panel)
    if frame is None:
        return 0.0
    total = 0.0
    for which in (1, 2):
        region = chart_region(frame, which, support=support)
        if region is None:
            continue
        f = chart_integrand(frame, which, k, density, include_4pi)
        total += integrate_implicit(region, f, cfg, stats=stats)
    return total
