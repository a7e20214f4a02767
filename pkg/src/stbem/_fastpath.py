"""Compiled fast path for the inner cone quadrature.

Mirrors the pure-Python pipeline (cone frame construction, domain
tightening, quadtree classification with per-constraint noise tolerances,
monotone-envelope span splitting, root finding, tensor Gauss) with scalar
numba kernels, evaluating several (kernel, density) components on shared
quadrature points in one tree walk. The Python implementation remains the
reference; equality of the two paths is asserted by the test suite.

Density kinds: 0 constant, 1 affine in the space-time point, 2/3/4 value,
time derivative and normal derivative of an outgoing spherical wave (the
profiles of :mod:`stbem.analytic`). Wave densities automatically add their
causal support boundaries as extra region constraints so the quadrature
never straddles the wavefront.

Constraint records (rows of ``con_par``, type in slot 7):
  face: [offset, b, m0, m1, m2, -, -, 0]   g = offset - r0 rho (b + m.e)
  wave: [c, sgn, mw0, mw1, mw2, |w|^2, t_apex, 1]
        g = sgn (t_apex - r0 rho - rhat) + c,
        rhat = sqrt(|w|^2 - 2 r0 rho (mw.e) + (r0 rho)^2)
"""

from __future__ import annotations

import numpy as np

try:
    from numba import njit

    NUMBA_AVAILABLE = True
except ImportError:  # pragma: no cover - numba is a hard dependency normally
    NUMBA_AVAILABLE = False

    def njit(*args, **kwargs):
        def wrap(f):
            return f

        if args and callable(args[0]):
            return args[0]
        return wrap


ROOT_TOL = 1e-14
FD_REL = 1e-6
NOISE_REL = 32.0 * 2.220446049250313e-16
TWO_PI = 2.0 * np.pi


@njit(cache=True)
def _mu(s, kind):
    if s <= 0.0:
        return 0.0
    if kind == 0:
        if s >= 4.0:
            return 0.0
        return np.exp(1.0 / (0.25 * s * s - s))
    if kind == 1:
        return s * s * s * np.exp(-s)
    return s * s * s * s * np.exp(-2.0 * s)


@njit(cache=True)
def _mu_d(s, kind):
    if s <= 0.0:
        return 0.0
    if kind == 0:
        if s >= 4.0:
            return 0.0
        q = 0.25 * s * s - s
        return np.exp(1.0 / q) * (-(0.5 * s - 1.0) / (q * q))
    if kind == 1:
        return (3.0 * s * s - s * s * s) * np.exp(-s)
    return (4.0 * s ** 3 - 2.0 * s ** 4) * np.exp(-2.0 * s)


@njit(cache=True)
def _chart_uv(which, rho0, u):
    """(rho, ct, st) of the chart at first coordinate u."""
    if which == 1:
        ct = np.cos(u)
        st = np.sin(u)
        rho = rho0 / ct
    else:
        rho = u
        if rho0 == 0.0:
            ct = 0.0
            st = 1.0
        else:
            ct = rho0 / rho
            if ct > 1.0:
                ct = 1.0
            elif ct < -1.0:
                ct = -1.0
            st = np.sqrt(max(1.0 - ct * ct, 0.0))
    return rho, ct, st


@njit(cache=True)
def _g_one(which, rho0, r0, con, j, u, v):
    rho, ct, st = _chart_uv(which, rho0, u)
    cp = np.cos(v)
    sp = np.sin(v)
    es = con[j, 2] * cp * st + con[j, 3] * sp * st + con[j, 4] * ct
    if con[j, 7] == 0.0:
        return con[j, 0] - r0 * rho * (con[j, 1] + es)
    rr = r0 * rho
    rhat = np.sqrt(max(con[j, 5] - 2.0 * rr * es + rr * rr, 0.0))
    return con[j, 1] * (con[j, 6] - rr - rhat) + con[j, 0]


@njit(cache=True)
def _cos_range(lo, hi):
    """Exact range of cos over [lo, hi]."""
    if hi - lo >= TWO_PI:
        return -1.0, 1.0
    cl = np.cos(lo)
    ch = np.cos(hi)
    out_lo = min(cl, ch)
    out_hi = max(cl, ch)
    if np.floor(hi / TWO_PI) >= np.ceil(lo / TWO_PI):
        out_hi = 1.0
    if np.floor((hi - np.pi) / TWO_PI) >= np.ceil((lo - np.pi) / TWO_PI):
        out_lo = -1.0
    return out_lo, out_hi


@njit(cache=True)
def _interval_mul(a1, a2, b1, b2):
    c1 = a1 * b1
    c2 = a1 * b2
    c3 = a2 * b1
    c4 = a2 * b2
    return min(min(c1, c2), min(c3, c4)), max(max(c1, c2), max(c3, c4))


@njit(cache=True)
def _geom_ranges(which, rho0, u_lo, u_hi):
    """(rho_lo, rho_hi, theta_lo, theta_hi, finite) over a cell's first
    coordinate interval."""
    if which == 2:
        rho_lo, rho_hi = u_lo, u_hi
        if rho0 == 0.0:
            h = 0.5 * np.pi
            return rho_lo, rho_hi, h, h, True
        a1 = np.pi if rho0 < 0.0 else 0.0
        if rho_lo > 0.0:
            arg = rho0 / rho_lo
            if arg > 1.0:
                arg = 1.0
            elif arg < -1.0:
                arg = -1.0
            a1 = np.arccos(arg)
        arg = rho0 / rho_hi
        if arg > 1.0:
            arg = 1.0
        elif arg < -1.0:
            arg = -1.0
        a2 = np.arccos(arg)
        return rho_lo, rho_hi, min(a1, a2), max(a1, a2), True
    # chart 1: u is theta; rho = rho0/cos(theta)
    c_lo = np.cos(u_hi)
    c_hi = np.cos(u_lo)
    if rho0 > 0.0:
        if c_lo <= 0.0:
            return 0.0, 0.0, u_lo, u_hi, False
        return rho0 / c_hi, rho0 / c_lo, u_lo, u_hi, True
    if c_hi >= 0.0:
        return 0.0, 0.0, u_lo, u_hi, False
    return rho0 / c_lo, rho0 / c_hi, u_lo, u_hi, True


@njit(cache=True)
def _dir_dot_range(m0, m1, m2, t_lo, t_hi, p_lo, p_hi):
    """Rigorous range of <m, e(phi, theta)> over a parameter cell."""
    ct_lo = np.cos(t_hi)
    ct_hi = np.cos(t_lo)
    st_lo = min(np.sin(t_lo), np.sin(t_hi))
    if t_lo <= 0.5 * np.pi <= t_hi:
        st_hi = 1.0
    else:
        st_hi = max(np.sin(t_lo), np.sin(t_hi))
    amp = np.sqrt(m0 * m0 + m1 * m1)
    if amp > 0.0:
        phi0 = np.arctan2(m1, m0)
        c_lo, c_hi = _cos_range(p_lo - phi0, p_hi - phi0)
    else:
        c_lo = 0.0
        c_hi = 0.0
    t1_lo, t1_hi = _interval_mul(st_lo, st_hi, amp * c_lo, amp * c_hi)
    if m2 >= 0.0:
        t2_lo = m2 * ct_lo
        t2_hi = m2 * ct_hi
    else:
        t2_lo = m2 * ct_hi
        t2_hi = m2 * ct_lo
    return t1_lo + t2_lo, t1_hi + t2_hi


@njit(cache=True)
def _me_range_cached(con, j, t_lo, t_hi, p_lo, p_hi):
    """Range of <m, e> using the precomputed amplitude/azimuth of the
    constraint's spatial direction (con slots 8, 9)."""
    ct_lo = np.cos(t_hi)
    ct_hi = np.cos(t_lo)
    st_lo = min(np.sin(t_lo), np.sin(t_hi))
    if t_lo <= 0.5 * np.pi <= t_hi:
        st_hi = 1.0
    else:
        st_hi = max(np.sin(t_lo), np.sin(t_hi))
    amp = con[j, 8]
    if amp > 0.0:
        c_lo, c_hi = _cos_range(p_lo - con[j, 9], p_hi - con[j, 9])
    else:
        c_lo = 0.0
        c_hi = 0.0
    t1_lo, t1_hi = _interval_mul(st_lo, st_hi, amp * c_lo, amp * c_hi)
    m2 = con[j, 4]
    if m2 >= 0.0:
        t2_lo = m2 * ct_lo
        t2_hi = m2 * ct_hi
    else:
        t2_lo = m2 * ct_hi
        t2_hi = m2 * ct_lo
    return t1_lo + t2_lo, t1_hi + t2_hi


@njit(cache=True)
def _con_bound_geo(r0, con, j, rho_lo, rho_hi, t_lo, t_hi, p_lo, p_hi):
    """Rigorous enclosure of constraint j given the cell's geometry
    ranges."""
    me_lo, me_hi = _me_range_cached(con, j, t_lo, t_hi, p_lo, p_hi)
    q_lo = r0 * rho_lo
    q_hi = r0 * rho_hi
    if con[j, 7] == 0.0:
        term_lo, term_hi = _interval_mul(q_lo, q_hi, con[j, 1] + me_lo,
                                         con[j, 1] + me_hi)
        return con[j, 0] - term_hi, con[j, 0] - term_lo
    wsq = con[j, 5]
    t_apex = con[j, 6]
    qm = min(max(me_hi, q_lo), q_hi)
    r2_min = wsq - 2.0 * q_lo * me_hi + q_lo * q_lo
    v = wsq - 2.0 * q_hi * me_hi + q_hi * q_hi
    if v < r2_min:
        r2_min = v
    v = wsq - 2.0 * qm * me_hi + qm * qm
    if v < r2_min:
        r2_min = v
    r2_max = wsq - 2.0 * q_lo * me_lo + q_lo * q_lo
    v = wsq - 2.0 * q_hi * me_lo + q_hi * q_hi
    if v > r2_max:
        r2_max = v
    rhat_lo = np.sqrt(max(r2_min, 0.0))
    rhat_hi = np.sqrt(max(r2_max, 0.0))
    s_lo = t_apex - q_hi - rhat_hi
    s_hi = t_apex - q_lo - rhat_lo
    sgn = con[j, 1]
    c = con[j, 0]
    if sgn > 0.0:
        return s_lo + c, s_hi + c
    return -s_hi + c, -s_lo + c


@njit(cache=True)
def _con_bounds(which, rho0, r0, con, j, a1, b1, a2, b2):
    """Rigorous enclosure of constraint j over the cell."""
    rho_lo, rho_hi, t_lo, t_hi, finite = _geom_ranges(which, rho0, a1, b1)
    if not finite:
        return -np.inf, np.inf
    return _con_bound_geo(r0, con, j, rho_lo, rho_hi, t_lo, t_hi, a2, b2)


@njit(cache=True)
def _sample_grid(a1, b1, a2, b2, su, sv):
    """25 sample coordinates matching the Python template."""
    su[0] = a1
    sv[0] = a2
    su[1] = b1
    sv[1] = a2
    su[2] = a1
    sv[2] = b2
    su[3] = b1
    sv[3] = b2
    for i in range(5):
        fu = (i + 1) / 6.0
        su[4 + i] = a1 + (b1 - a1) * fu
        sv[4 + i] = a2
        su[9 + i] = a1 + (b1 - a1) * fu
        sv[9 + i] = b2
        su[14 + i] = a1
        sv[14 + i] = a2 + (b2 - a2) * fu
        su[19 + i] = b1
        sv[19 + i] = a2 + (b2 - a2) * fu
    su[24] = 0.5 * (a1 + b1)
    sv[24] = 0.5 * (a2 + b2)


@njit(cache=True)
def _classify(which, rho0, r0, n_con, con, scales, a1, b1, a2, b2,
              active, sigmas):
    """Classify a cell. Returns (code, n_active, base); code 0 inside,
    1 outside, 2 envelope-admissible, 3 ambiguous. ``active`` and ``sigmas``
    receive the active constraint indices and their height-derivative
    signs."""
    rho_lo, rho_hi, t_lo, t_hi, finite = _geom_ranges(which, rho0, a1, b1)
    n_active = 0
    for j in range(n_con):
        tol = NOISE_REL * scales[j]
        if finite:
            lo, hi = _con_bound_geo(r0, con, j, rho_lo, rho_hi, t_lo, t_hi,
                                    a2, b2)
        else:
            lo, hi = -np.inf, np.inf
        if hi <= tol:
            continue
        if lo >= -tol:
            return 1, 0, 0
        active[n_active] = j
        n_active += 1
    if n_active == 0:
        return 0, 0, 0
    su = np.empty(25)
    sv = np.empty(25)
    _sample_grid(a1, b1, a2, b2, su, sv)

    # analytic directional derivatives at the sample points, with the
    # kinematic quantities shared across constraints
    qs = np.empty(25)
    qps = np.empty(25)
    thps = np.empty(25)
    cts = np.empty(25)
    sts = np.empty(25)
    cps = np.empty(25)
    sps = np.empty(25)
    for p in range(25):
        u = su[p]
        v = sv[p]
        cps[p] = np.cos(v)
        sps[p] = np.sin(v)
        if which == 1:
            ct = np.cos(u)
            st = np.sin(u)
            q = r0 * rho0 / ct
            qps[p] = q * st / ct
            thps[p] = 1.0
        else:
            q = r0 * u
            qps[p] = r0
            if rho0 == 0.0:
                ct = 0.0
                st = 1.0
                thps[p] = 0.0
            else:
                ct = rho0 / u
                if ct > 1.0:
                    ct = 1.0
                elif ct < -1.0:
                    ct = -1.0
                st = np.sqrt(max(1.0 - ct * ct, 0.0))
                den = u * np.sqrt(max(u * u - rho0 * rho0, 1e-300))
                thps[p] = rho0 / den
        qs[p] = q
        cts[p] = ct
        sts[p] = st

    best_margin = -1.0
    best_base = 0
    tmp_sig = np.empty((2, 8))
    marg = np.empty(2)
    ok2 = np.empty(2, dtype=np.bool_)
    marg[0] = 1e300
    marg[1] = 1e300
    ok2[0] = True
    ok2[1] = True
    for ai in range(n_active):
        j = active[ai]
        is_face = con[j, 7] == 0.0
        m0 = con[j, 2]
        m1 = con[j, 3]
        m2 = con[j, 4]
        pos_u = True
        neg_u = True
        pos_v = True
        neg_v = True
        min_u = 1e300
        min_v = 1e300
        for p in range(25):
            ct = cts[p]
            st = sts[p]
            cp = cps[p]
            sp = sps[p]
            q = qs[p]
            me = m0 * cp * st + m1 * sp * st + m2 * ct
            me_th = m0 * cp * ct + m1 * sp * ct - m2 * st
            me_ph = (-m0 * sp + m1 * cp) * st
            if is_face:
                du = -qps[p] * (con[j, 1] + me) - q * me_th * thps[p]
                dv = -q * me_ph
            else:
                rhat2 = con[j, 5] - 2.0 * q * me + q * q
                rhat = np.sqrt(max(rhat2, 1e-300))
                dr_u = (qps[p] * (q - me) - q * me_th * thps[p]) / rhat
                dr_v = -q * me_ph / rhat
                du = con[j, 1] * (-qps[p] - dr_u)
                dv = con[j, 1] * (-dr_v)
            if du <= 0.0:
                pos_u = False
            if du >= 0.0:
                neg_u = False
            if dv <= 0.0:
                pos_v = False
            if dv >= 0.0:
                neg_v = False
            au = abs(du)
            av = abs(dv)
            if au < min_u:
                min_u = au
            if av < min_v:
                min_v = av
        # height direction 1 => derivative along u
        if pos_u:
            tmp_sig[0, ai] = 1.0
        elif neg_u:
            tmp_sig[0, ai] = -1.0
        else:
            ok2[0] = False
        if min_u < marg[0]:
            marg[0] = min_u
        if pos_v:
            tmp_sig[1, ai] = 1.0
        elif neg_v:
            tmp_sig[1, ai] = -1.0
        else:
            ok2[1] = False
        if min_v < marg[1]:
            marg[1] = min_v
    for hd in range(2):
        if ok2[hd] and marg[hd] > best_margin:
            best_margin = marg[hd]
            best_base = 2 if hd == 0 else 1
            for ai in range(n_active):
                sigmas[ai] = tmp_sig[hd, ai]
    if best_base == 0:
        return 3, n_active, 0
    return 2, n_active, best_base


@njit(cache=True)
def _root_on_edge(which, rho0, r0, con, j, base, fixed_h, s_a, s_b, f_a, f_b):
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
            if fb != fa:
                x = (a * fb - b * fa) / (fb - fa)
            else:
                x = 0.5 * (a + b)
            if not (a < x < b):
                x = 0.5 * (a + b)
        if base == 1:
            fx = _g_one(which, rho0, r0, con, j, x, fixed_h)
        else:
            fx = _g_one(which, rho0, r0, con, j, fixed_h, x)
        if fx == 0.0:
            return x
        if (fx > 0.0) == (fa > 0.0):
            a, fa = x, fx
        else:
            b, fb = x, fx
    return 0.5 * (a + b)


@njit(cache=True)
def _root_in_column(which, rho0, r0, con, j, base, s, hlo, hhi, sigma):
    """Interface height of constraint j in one column; columns without a
    sign change collapse to the end that keeps them fully admitted or fully
    excluded by this constraint."""
    if base == 1:
        fa = _g_one(which, rho0, r0, con, j, s, hlo)
        fb = _g_one(which, rho0, r0, con, j, s, hhi)
    else:
        fa = _g_one(which, rho0, r0, con, j, hlo, s)
        fb = _g_one(which, rho0, r0, con, j, hhi, s)
    if fa * fb > 0.0:
        if sigma > 0.0:
            return hlo if fa > 0.0 else hhi
        return hhi if fa > 0.0 else hlo
    if fa == 0.0:
        return hlo
    if fb == 0.0:
        return hhi
    a, b = hlo, hhi
    for it in range(200):
        if b - a < ROOT_TOL:
            break
        if it % 4 == 3:
            x = 0.5 * (a + b)
        else:
            if fb != fa:
                x = (a * fb - b * fa) / (fb - fa)
            else:
                x = 0.5 * (a + b)
            if not (a < x < b):
                x = 0.5 * (a + b)
        if base == 1:
            fx = _g_one(which, rho0, r0, con, j, s, x)
        else:
            fx = _g_one(which, rho0, r0, con, j, x, s)
        if fx == 0.0:
            return x
        if (fx > 0.0) == (fa > 0.0):
            a, fa = x, fx
        else:
            b, fb = x, fx
    return 0.5 * (a + b)


@njit(cache=True)
def _column_envelope(which, rho0, r0, con, n_active, active, sigmas, base,
                     s, hlo, hhi):
    """Admitted height interval (lo, hi) of one column at base position s."""
    lo = hlo
    hi = hhi
    for ai in range(n_active):
        j = active[ai]
        root = _root_in_column(which, rho0, r0, con, j, base, s, hlo, hhi,
                               sigmas[ai])
        if sigmas[ai] > 0.0:
            if root < hi:
                hi = root
        else:
            if root > lo:
                lo = root
    return lo, hi


@njit(cache=True)
def _point_values(which, fr, u, v, kern, dkind, cpar, scale, out_vals):
    """All component integrand values at one chart parameter (u, v)."""
    r0 = fr[0]
    rho0 = fr[1]
    rho, ct, st = _chart_uv(which, rho0, u)
    cp = np.cos(v)
    sp = np.sin(v)
    if which == 1:
        c4 = ct * ct * ct * ct
        J = np.sqrt(1.0 + rho0 * rho0 * st * st / c4)
    else:
        if rho0 == 0.0:
            J = 1.0
        else:
            J = np.sqrt(
                1.0 + rho0 * rho0 / (rho * rho * (rho * rho - rho0 * rho0))
            )
    if rho0 == 0.0:
        k1 = r0
        k2 = 0.0
        k3 = 0.0
    else:
        den = np.sqrt(ct * ct + rho * rho * st * st)
        k1 = r0 * rho * st / den
        k2 = rho0 * r0 * st / den
        k3 = rho0 * st / (rho * den)
    # psi components (only needed for wave densities); fr[6:15] holds the
    # rotation columns, so row i of R is (fr[6+i], fr[9+i], fr[12+i])
    e0 = fr[6] * cp * st + fr[9] * sp * st + fr[12] * ct
    e1 = fr[7] * cp * st + fr[10] * sp * st + fr[13] * ct
    e2 = fr[8] * cp * st + fr[11] * sp * st + fr[14] * ct
    tau = fr[2] - r0 * rho
    y0 = fr[3] - r0 * rho * e0
    y1 = fr[4] - r0 * rho * e1
    y2 = fr[5] - r0 * rho * e2
    for c in range(len(kern)):
        kid = kern[c]
        if kid == 1:
            kv = k1
        elif kid == 2:
            kv = k2
        else:
            kv = k3
        dk = dkind[c]
        if dk == 0:
            dv = cpar[c, 0]
        elif dk == 1:
            es = cpar[c, 2] * cp * st + cpar[c, 3] * sp * st + cpar[c, 4] * ct
            dv = cpar[c, 0] - r0 * rho * (cpar[c, 1] + es)
        else:
            dx0 = y0 - cpar[c, 0]
            dx1 = y1 - cpar[c, 1]
            dx2 = y2 - cpar[c, 2]
            r = np.sqrt(dx0 * dx0 + dx1 * dx1 + dx2 * dx2)
            kind = int(cpar[c, 3])
            s = tau - r
            if dk == 2:
                dv = _mu(s, kind) / r
            elif dk == 3:
                dv = _mu_d(s, kind) / r
            else:
                radial = -_mu_d(s, kind) / r - _mu(s, kind) / (r * r)
                dv = (
                    (dx0 * cpar[c, 4] + dx1 * cpar[c, 5] + dx2 * cpar[c, 6])
                    / r * radial
                )
        out_vals[c] = scale * kv * dv * J


@njit(cache=True)
def _add_tensor(which, fr, s_lo, s_hi, base, h0, h1, kern, dkind, cpar,
                scale, gx, gw, out):
    """Tensor Gauss on [s_lo, s_hi] x per-abscissa [h0_i, h1_i] (base coord
    first); adds into out."""
    n = len(gx)
    vals = np.empty(len(kern))
    for i in range(n):
        s = 0.5 * (s_lo + s_hi) + 0.5 * (s_hi - s_lo) * gx[i]
        wb = gw[i] * 0.5 * (s_hi - s_lo)
        mid = 0.5 * (h0[i] + h1[i])
        half = 0.5 * (h1[i] - h0[i])
        if half <= 0.0:
            continue
        for jq in range(n):
            h = mid + half * gx[jq]
            w = wb * half * gw[jq]
            if base == 1:
                _point_values(which, fr, s, h, kern, dkind, cpar, scale, vals)
            else:
                _point_values(which, fr, h, s, kern, dkind, cpar, scale, vals)
            for c in range(len(kern)):
                out[c] += w * vals[c]


@njit(cache=True)
def _envelope_cell(which, fr, n_con, con, scales, a1, b1, a2, b2,
                   n_active, active, sigmas, base, kern, dkind, cpar, scale,
                   gx, gw, out):
    """Span-split envelope integration over the active monotone
    constraints; returns False to request subdivision."""
    r0 = fr[0]
    rho0 = fr[1]
    if base == 1:
        blo, bhi, hlo, hhi = a1, b1, a2, b2
    else:
        blo, bhi, hlo, hhi = a2, b2, a1, b1

    svals = np.empty(7)
    svals[0] = blo
    for i in range(5):
        svals[1 + i] = blo + (bhi - blo) * (i + 1) / 6.0
    svals[6] = bhi

    crossings = np.empty(8)
    nc = 0
    ev = np.empty(7)
    # edge crossings of every active constraint
    for ai in range(n_active):
        j = active[ai]
        tol_j = NOISE_REL * scales[j]
        for side in range(2):
            h = hlo if side == 0 else hhi
            for i in range(7):
                if base == 1:
                    ev[i] = _g_one(which, rho0, r0, con, j, svals[i], h)
                else:
                    ev[i] = _g_one(which, rho0, r0, con, j, h, svals[i])
            state = 0
            prev = -1
            for i in range(7):
                v = ev[i]
                s = 1 if v > tol_j else (-1 if v < -tol_j else 0)
                if s == 0:
                    continue
                if state != 0 and s != state:
                    if nc >= 8:
                        return False
                    crossings[nc] = _root_on_edge(
                        which, rho0, r0, con, j, base, h,
                        svals[prev], svals[i], ev[prev], ev[i])
                    nc += 1
                state = s
                prev = i
    # pairwise interface crossings along the clamped root curves
    for ai in range(n_active):
        for bi in range(ai + 1, n_active):
            j = active[ai]
            l = active[bi]
            tol_j = NOISE_REL * scales[j]
            for i in range(7):
                rl = _root_in_column(which, rho0, r0, con, l, base,
                                     svals[i], hlo, hhi, sigmas[bi])
                if base == 1:
                    ev[i] = _g_one(which, rho0, r0, con, j, svals[i], rl)
                else:
                    ev[i] = _g_one(which, rho0, r0, con, j, rl, svals[i])
            state = 0
            prev = -1
            for i in range(7):
                v = ev[i]
                s = 1 if v > tol_j else (-1 if v < -tol_j else 0)
                if s == 0:
                    continue
                if state != 0 and s != state:
                    if nc >= 8:
                        return False
                    aa, bb = svals[prev], svals[i]
                    fa, fb = ev[prev], ev[i]
                    if fa == 0.0:
                        x = aa
                    elif fb == 0.0:
                        x = bb
                    else:
                        x = 0.5 * (aa + bb)
                        for it in range(200):
                            if bb - aa < ROOT_TOL:
                                break
                            if it % 4 == 3:
                                x = 0.5 * (aa + bb)
                            else:
                                if fb != fa:
                                    x = (aa * fb - bb * fa) / (fb - fa)
                                else:
                                    x = 0.5 * (aa + bb)
                                if not (aa < x < bb):
                                    x = 0.5 * (aa + bb)
                            rl = _root_in_column(which, rho0, r0, con, l,
                                                 base, x, hlo, hhi,
                                                 sigmas[bi])
                            if base == 1:
                                fx = _g_one(which, rho0, r0, con, j, x, rl)
                            else:
                                fx = _g_one(which, rho0, r0, con, j, rl, x)
                            if fx == 0.0:
                                break
                            if (fx > 0.0) == (fa > 0.0):
                                aa, fa = x, fx
                            else:
                                bb, fb = x, fx
                        else:
                            x = 0.5 * (aa + bb)
                    crossings[nc] = x
                    nc += 1
                state = s
                prev = i

    # sort + dedupe (exact and near-coincident events)
    cr = np.sort(crossings[:nc])
    tol_s = (bhi - blo) * 1e-9
    uniq = np.empty(8)
    m = 0
    for i in range(nc):
        if m == 0 or cr[i] - uniq[m - 1] > tol_s:
            uniq[m] = cr[i]
            m += 1
    if m > 4:
        return False

    cuts = np.empty(m + 2)
    cuts[0] = blo
    for i in range(m):
        cuts[1 + i] = uniq[i]
    cuts[m + 1] = bhi

    n = len(gx)
    span_a = np.empty(m + 1)
    span_b = np.empty(m + 1)
    span_h0 = np.empty((m + 1, n))
    span_h1 = np.empty((m + 1, n))
    ns = 0
    for i in range(m + 1):
        sa, sb = cuts[i], cuts[i + 1]
        if sb - sa <= (bhi - blo) * 1e-13:
            continue
        # skip spans certified empty by the rigorous bounds; the rest get
        # per-column envelopes (empty columns cost no quadrature points)
        if base == 1:
            c1, c2, c3, c4 = sa, sb, hlo, hhi
        else:
            c1, c2, c3, c4 = hlo, hhi, sa, sb
        empty = False
        for j in range(n_con):
            lo_b, hi_b = _con_bounds(which, rho0, r0, con, j, c1, c2, c3, c4)
            if lo_b >= -NOISE_REL * scales[j]:
                empty = True
                break
        if empty:
            continue
        live = False
        for q in range(n):
            s = 0.5 * (sa + sb) + 0.5 * (sb - sa) * gx[q]
            lo, hi = _column_envelope(which, rho0, r0, con, n_active,
                                      active, sigmas, base, s, hlo, hhi)
            span_h0[ns, q] = lo
            span_h1[ns, q] = hi if hi > lo else lo
            if hi > lo:
                live = True
        if live:
            span_a[ns] = sa
            span_b[ns] = sb
            ns += 1
    if ns > 2:
        return False

    for i in range(ns):
        _add_tensor(which, fr, span_a[i], span_b[i], base, span_h0[i],
                    span_h1[i], kern, dkind, cpar, scale, gx, gw, out)
    return True


@njit(cache=True)
def _integrate_chart(which, box, fr, n_con, con, scales, kern, dkind,
                     cpar, scale, r_max, n_G, gx, gw, out):
    rho0 = fr[1]
    r0 = fr[0]
    cap = 512
    stack = np.empty((cap, 5))
    top = 0
    stack[0, 0] = box[0]
    stack[0, 1] = box[1]
    stack[0, 2] = box[2]
    stack[0, 3] = box[3]
    stack[0, 4] = 0.0
    top = 1
    n = n_G
    h0 = np.empty(n)
    h1 = np.empty(n)
    vals = np.empty(len(kern))
    active = np.empty(8, dtype=np.int64)
    sigmas = np.empty(8)
    while top > 0:
        top -= 1
        a1 = stack[top, 0]
        b1 = stack[top, 1]
        a2 = stack[top, 2]
        b2 = stack[top, 3]
        depth = int(stack[top, 4])
        code, n_active, base = _classify(which, rho0, r0, n_con, con, scales,
                                         a1, b1, a2, b2, active, sigmas)
        if code == 1:
            continue
        if code == 0:
            for q in range(n):
                h0[q] = a2
                h1[q] = b2
            _add_tensor(which, fr, a1, b1, 1, h0, h1, kern, dkind, cpar,
                        scale, gx, gw, out)
            continue
        done = False
        if code == 2:
            done = _envelope_cell(which, fr, n_con, con, scales,
                                  a1, b1, a2, b2, n_active, active, sigmas,
                                  base, kern, dkind, cpar, scale, gx, gw,
                                  out)
        if done:
            continue
        if depth < r_max:
            if top + 4 > cap:
                new = np.empty((cap * 2, 5))
                new[:top] = stack[:top]
                stack = new
                cap *= 2
            m1 = 0.5 * (a1 + b1)
            m2 = 0.5 * (a2 + b2)
            stack[top, 0] = a1
            stack[top, 1] = m1
            stack[top, 2] = a2
            stack[top, 3] = m2
            stack[top, 4] = depth + 1
            stack[top + 1, 0] = m1
            stack[top + 1, 1] = b1
            stack[top + 1, 2] = a2
            stack[top + 1, 3] = m2
            stack[top + 1, 4] = depth + 1
            stack[top + 2, 0] = a1
            stack[top + 2, 1] = m1
            stack[top + 2, 2] = m2
            stack[top + 2, 3] = b2
            stack[top + 2, 4] = depth + 1
            stack[top + 3, 0] = m1
            stack[top + 3, 1] = b1
            stack[top + 3, 2] = m2
            stack[top + 3, 3] = b2
            stack[top + 3, 4] = depth + 1
            top += 4
            continue
        # fallback midpoint rule
        cu = 0.5 * (a1 + b1)
        cv = 0.5 * (a2 + b2)
        ok = True
        for j in range(n_con):
            if _g_one(which, rho0, r0, con, j, cu, cv) >= 0.0:
                ok = False
                break
        if ok:
            _point_values(which, fr, cu, cv, kern, dkind, cpar, scale, vals)
            area = (b1 - a1) * (b2 - a2)
            for c in range(len(kern)):
                out[c] += area * vals[c]


@njit(cache=True)
def _frame_and_boxes(apex, verts, nu, f_anch, f_con):
    """Mirror of build_cone_frame + _tighten_boxes. Returns
    (ok, fr, con, scales, box1, box2, has1, has2) with the four face
    constraints filled (wave support rows are appended by the caller)."""
    fr = np.zeros(15)
    con = np.zeros((6, 10))
    scales = np.zeros(6)
    box1 = np.zeros(4)
    box2 = np.zeros(4)

    tau_min = verts[0, 0]
    tau_max = verts[0, 0]
    for i in range(1, 4):
        if verts[i, 0] < tau_min:
            tau_min = verts[i, 0]
        if verts[i, 0] > tau_max:
            tau_max = verts[i, 0]
    r0 = apex[0] - tau_min
    if r0 <= 0.0:
        return False, fr, con, scales, box1, box2, False, False
    rho0 = 0.0
    for k in range(4):
        rho0 += (apex[k] - verts[0, k]) * nu[k]
    rho0 /= r0
    if rho0 >= 1.0 or rho0 <= -1.0:
        return False, fr, con, scales, box1, box2, False, False

    # rotation columns (b1, b2, nu_x)
    n1, n2, n3 = nu[1], nu[2], nu[3]
    s = 1.0 if n3 >= 0.0 else -1.0
    a = -1.0 / (s + n3)
    bb = n1 * n2 * a
    R = np.empty((3, 3))
    R[0, 0] = 1.0 + s * n1 * n1 * a
    R[1, 0] = s * bb
    R[2, 0] = -s * n1
    R[0, 1] = bb
    R[1, 1] = s + n2 * n2 * a
    R[2, 1] = -n2
    R[0, 2] = n1
    R[1, 2] = n2
    R[2, 2] = n3

    if rho0 == 0.0:
        rho_eq = 0.0
        theta_eq = 0.5 * np.pi
    else:
        r2 = rho0 * rho0
        rho_eq = np.sqrt(0.5 * (r2 + np.sqrt(r2 * r2 + 4.0 * r2)))
        ce = rho0 / rho_eq
        if ce > 1.0:
            ce = 1.0
        elif ce < -1.0:
            ce = -1.0
        theta_eq = np.arccos(ce)

    fr[0] = r0
    fr[1] = rho0
    for k in range(4):
        fr[2 + k] = apex[k]
    fr[6] = R[0, 0]
    fr[7] = R[1, 0]
    fr[8] = R[2, 0]
    fr[9] = R[0, 1]
    fr[10] = R[1, 1]
    fr[11] = R[2, 1]
    fr[12] = R[0, 2]
    fr[13] = R[1, 2]
    fr[14] = R[2, 2]

    for j in range(4):
        o = 0.0
        for k in range(4):
            o += (apex[k] - f_anch[j, k]) * f_con[j, k]
        con[j, 0] = o
        con[j, 1] = f_con[j, 0]
        con[j, 7] = 0.0
        scales[j] = abs(o) + 2.0 * r0
        for i in range(3):
            con[j, 2 + i] = (
                R[0, i] * f_con[j, 1]
                + R[1, i] * f_con[j, 2]
                + R[2, i] * f_con[j, 3]
            )
        con[j, 8] = np.sqrt(con[j, 2] * con[j, 2] + con[j, 3] * con[j, 3])
        con[j, 9] = np.arctan2(con[j, 3], con[j, 2])

    # ---- tightened boxes
    pad = 1e-12
    rho_lo = (apex[0] - tau_max) / r0
    if rho_lo < 0.0:
        rho_lo = 0.0
    rho_hi = 1.0

    # direction cap from the vertex directions (rigorous via the positive
    # span of the vertex offsets; caps of radius < pi/2 are convex)
    th_lo = 0.0
    th_hi = np.pi
    phi_lo = 0.0
    phi_hi = TWO_PI
    dirs = np.empty((4, 3))
    min_norm = 1e300
    max_norm = 0.0
    for i in range(4):
        o0 = verts[i, 1] - apex[1]
        o1 = verts[i, 2] - apex[2]
        o2 = verts[i, 3] - apex[3]
        nn = np.sqrt(o0 * o0 + o1 * o1 + o2 * o2)
        if nn < min_norm:
            min_norm = nn
        if nn > max_norm:
            max_norm = nn
        if nn > 0.0:
            # rotated frame coordinates
            dirs[i, 0] = (R[0, 0] * o0 + R[1, 0] * o1 + R[2, 0] * o2) / nn
            dirs[i, 1] = (R[0, 1] * o0 + R[1, 1] * o1 + R[2, 1] * o2) / nn
            dirs[i, 2] = (R[0, 2] * o0 + R[1, 2] * o1 + R[2, 2] * o2) / nn
    if min_norm > 1e-12 * (max_norm + 1.0):
        cs0 = dirs[0, 0] + dirs[1, 0] + dirs[2, 0] + dirs[3, 0]
        cs1 = dirs[0, 1] + dirs[1, 1] + dirs[2, 1] + dirs[3, 1]
        cs2 = dirs[0, 2] + dirs[1, 2] + dirs[2, 2] + dirs[3, 2]
        cn = np.sqrt(cs0 * cs0 + cs1 * cs1 + cs2 * cs2)
        if cn > 1e-12:
            cs0 /= cn
            cs1 /= cn
            cs2 /= cn
            cmin = 1.0
            for i in range(4):
                ca = dirs[i, 0] * cs0 + dirs[i, 1] * cs1 + dirs[i, 2] * cs2
                if ca < cmin:
                    cmin = ca
            if cmin > 1.0:
                cmin = 1.0
            elif cmin < -1.0:
                cmin = -1.0
            alpha = np.arccos(cmin)
            if alpha < 0.5 * np.pi:
                u0 = -cs0
                u1 = -cs1
                u2 = -cs2
                if u2 > 1.0:
                    u2 = 1.0
                elif u2 < -1.0:
                    u2 = -1.0
                theta_c = np.arccos(u2)
                th_lo = theta_c - alpha
                if th_lo < 0.0:
                    th_lo = 0.0
                th_hi = theta_c + alpha
                if th_hi > np.pi:
                    th_hi = np.pi
                sin_min = min(np.sin(th_lo), np.sin(th_hi))
                chord = 2.0 * np.sin(0.5 * alpha)
                if th_lo > 0.0 and th_hi < np.pi and chord < sin_min:
                    beta = np.arcsin(chord / sin_min)
                    phi_c = np.arctan2(u1, u0)
                    phi_lo = phi_c - beta
                    phi_hi = phi_c + beta

    th_lo = max(0.0, th_lo - pad)
    th_hi = min(np.pi, th_hi + pad)
    rho_lo = max(0.0, rho_lo - pad)

    rt_lo = 0.0
    rt_hi = np.inf
    rt_valid = True
    if rho0 > 0.0:
        if th_lo >= 0.5 * np.pi:
            rt_valid = False
        else:
            rt_lo = rho0 / np.cos(th_lo)
            rt_hi = rho0 / np.cos(th_hi) if th_hi < 0.5 * np.pi else np.inf
    elif rho0 < 0.0:
        if th_hi <= 0.5 * np.pi:
            rt_valid = False
        else:
            rt_lo = rho0 / np.cos(th_hi)
            rt_hi = rho0 / np.cos(th_lo) if th_lo > 0.5 * np.pi else np.inf
    else:
        if not (th_lo <= 0.5 * np.pi <= th_hi):
            rt_valid = False

    has1 = False
    if rho0 != 0.0:
        if rho0 > 0.0:
            d1a = 0.0
            d1b = theta_eq
        else:
            d1a = theta_eq
            d1b = np.pi
        aa = max(d1a, th_lo)
        bb2 = min(d1b, th_hi)
        if rho0 > 0.0:
            arg = rho0 / rho_hi
            if arg < -1.0:
                arg = -1.0
            bb2 = min(bb2, np.arccos(arg))
            if rho_lo > rho0:
                arg = rho0 / rho_lo
                if arg > 1.0:
                    arg = 1.0
                aa = max(aa, np.arccos(arg))
        else:
            arg = rho0 / rho_hi
            if arg > 1.0:
                arg = 1.0
            elif arg < -1.0:
                arg = -1.0
            aa = max(aa, np.arccos(arg))
            if rho_lo > -rho0:
                arg = rho0 / rho_lo
                if arg > 1.0:
                    arg = 1.0
                elif arg < -1.0:
                    arg = -1.0
                bb2 = min(bb2, np.arccos(arg))
        aa = max(0.0, aa - pad)
        bb2 = min(np.pi, bb2 + pad)
        if bb2 > aa:
            box1[0] = aa
            box1[1] = bb2
            box1[2] = phi_lo
            box1[3] = phi_hi
            has1 = True

    has2 = False
    if rho_eq < 1.0 and rt_valid:
        aa = max(rho_eq, rho_lo)
        if rt_lo - pad > aa:
            aa = rt_lo - pad
        bb2 = min(1.0, rho_hi)
        if rt_hi + pad < bb2:
            bb2 = rt_hi + pad
        if bb2 > aa:
            box2[0] = aa
            box2[1] = bb2
            box2[2] = phi_lo
            box2[3] = phi_hi
            has2 = True

    return True, fr, con, scales, box1, box2, has1, has2


@njit(cache=True)
def inner_multi(apex, verts, nu, f_anch, f_con, kern, dkind, dpar, scale,
                r_max, n_G, gx, gw):
    """Multi-component inner integral for one (apex, panel) pair."""
    nc = len(kern)
    out = np.zeros(nc)
    ok, fr, con, scales, box1, box2, has1, has2 = _frame_and_boxes(
        apex, verts, nu, f_anch, f_con
    )
    if not ok:
        return out
    r0 = fr[0]
    # wave densities add their causal support as extra constraints
    n_con = 4
    for c in range(nc):
        if dkind[c] >= 2:
            ys0, ys1, ys2 = dpar[c, 0], dpar[c, 1], dpar[c, 2]
            kind = int(dpar[c, 3])
            w0 = apex[1] - ys0
            w1 = apex[2] - ys1
            w2c = apex[3] - ys2
            wsq = w0 * w0 + w1 * w1 + w2c * w2c
            mw0 = fr[6] * w0 + fr[7] * w1 + fr[8] * w2c
            mw1 = fr[9] * w0 + fr[10] * w1 + fr[11] * w2c
            mw2 = fr[12] * w0 + fr[13] * w1 + fr[14] * w2c
            sc = abs(apex[0]) + r0 + 4.0
            # front: -s < 0
            con[n_con, 0] = 0.0
            con[n_con, 1] = -1.0
            con[n_con, 2] = mw0
            con[n_con, 3] = mw1
            con[n_con, 4] = mw2
            con[n_con, 5] = wsq
            con[n_con, 6] = apex[0]
            con[n_con, 7] = 1.0
            con[n_con, 8] = np.sqrt(mw0 * mw0 + mw1 * mw1)
            con[n_con, 9] = np.arctan2(mw1, mw0)
            scales[n_con] = sc
            n_con += 1
            if kind == 0:
                # tail: s - 4 < 0
                con[n_con, 0] = -4.0
                con[n_con, 1] = 1.0
                con[n_con, 2] = mw0
                con[n_con, 3] = mw1
                con[n_con, 4] = mw2
                con[n_con, 5] = wsq
                con[n_con, 6] = apex[0]
                con[n_con, 7] = 1.0
                con[n_con, 8] = con[n_con - 1, 8]
                con[n_con, 9] = con[n_con - 1, 9]
                scales[n_con] = sc
                n_con += 1
            break
    # transform affine densities into the rotated frame
    cpar = np.zeros((nc, 8))
    for c in range(nc):
        if dkind[c] == 1:
            c0 = dpar[c, 0]
            w0 = c0
            for k in range(4):
                w0 += dpar[c, 1 + k] * apex[k]
            cpar[c, 0] = w0
            cpar[c, 1] = dpar[c, 1]
            for i in range(3):
                cpar[c, 2 + i] = (
                    fr[6 + 3 * i] * dpar[c, 2]
                    + fr[7 + 3 * i] * dpar[c, 3]
                    + fr[8 + 3 * i] * dpar[c, 4]
                )
        else:
            for k in range(8):
                cpar[c, k] = dpar[c, k]
    if has1:
        _integrate_chart(1, box1, fr, n_con, con, scales, kern, dkind,
                         cpar, scale, r_max, n_G, gx, gw, out)
    if has2:
        _integrate_chart(2, box2, fr, n_con, con, scales, kern, dkind,
                         cpar, scale, r_max, n_G, gx, gw, out)
    return out


@njit(cache=True)
def inner_multi_batch(apex, verts, nus, f_anch, f_con, kern, dkind, dpar,
                      scale, r_max, n_G, gx, gw):
    """Batched :func:`inner_multi` over L panels; dpar has shape (L, nc, 8)
    and the result (L, nc)."""
    L = len(verts)
    nc = len(kern)
    out = np.empty((L, nc))
    for i in range(L):
        out[i] = inner_multi(apex, verts[i], nus[i], f_anch[i], f_con[i],
                             kern, dkind, dpar[i], scale, r_max, n_G, gx, gw)
    return out
