"""Retarded potential evaluation, Galerkin assembly and linear solves.

Everything reduces to sums of per-panel inner integrals over the lit set: the
single layer applies kernel 1 to piecewise-constant densities, the double
layer applies kernel 3 to a continuous density plus kernel 2 to its time
derivative. Galerkin matrices test against piecewise constants through the
panel-boundary formula of :mod:`stbem.outer_quad`; one lit-set query per
outer node feeds every source panel, and a face shared by two panels is
quadratured once and scattered to both rows.

Dense systems are factorized by LU with partial pivoting and refined until
the relative residual meets SOLVE_RTOL.
"""

from __future__ import annotations

import logging
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from enum import IntEnum

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from . import _fastpath
from .analytic import SphericalWave
from .cone_quadrature import (
    PanelDensity,
    inner_integral,
    wave_support_constraints,
)
from .geometry import KernelId
from .implicit_quad import QuadConfig
from .lit_panels import ClusterTree, lit_set
from .outer_quad import boundary_rule, mesh_boundary_faces
from .quadrules import gauss_legendre, tetrahedron_rule
from .st_mesh import FESpaceTag, SpaceTimeMesh

logger = logging.getLogger(__name__)

SOLVE_RTOL = 1e-10
PROJECTION_RTOL = 1e-12


class Side(IntEnum):
    """Exterior/interior selector entering only signs."""

    EXTERIOR = 1
    INTERIOR = -1


@dataclass
class Density:
    """Coefficient vector in one of the trial spaces (length N for S0,
    one value per active t > 0 vertex for V1)."""

    space: FESpaceTag
    coefficients: np.ndarray

    def check(self, mesh: SpaceTimeMesh) -> None:
        want = mesh.space_dimension(self.space)
        if len(self.coefficients) != want:
            raise ValueError(
                f"density has {len(self.coefficients)} coefficients, "
                f"space {self.space.name} on this mesh needs {want}"
            )


@dataclass
class DenseSystem:
    matrix: np.ndarray
    rhs: np.ndarray


@dataclass
class SolveInfo:
    residual: float
    refinement_steps: int


# ---------------------------------------------------------------------------
# Density plumbing
# ---------------------------------------------------------------------------


def v1_vertex_values(mesh: SpaceTimeMesh, coeffs: np.ndarray) -> np.ndarray:
    """Per-panel vertex values (N, 4) of a V1 density (zeros at t = 0)."""
    full = np.zeros(len(mesh.vertices))
    full[mesh.v1_active_mask()] = coeffs
    return full[mesh.panels]


def v1_affine_params(mesh: SpaceTimeMesh, coeffs: np.ndarray) -> np.ndarray:
    """Per-panel affine representation (N, 5) rows (c0, grad) of a V1
    density, gauged so the gradient is tangent to each panel."""
    vals = v1_vertex_values(mesh, coeffs)
    N = mesh.num_panels
    A = np.zeros((N, 5, 5))
    A[:, :4, 0] = 1.0
    A[:, :4, 1:] = mesh.panel_vertices
    A[:, 4, 1:] = mesh.normals
    rhs = np.zeros((N, 5))
    rhs[:, :4] = vals
    return np.linalg.solve(A, rhs[..., None])[..., 0]


def s0_panel_density(mesh: SpaceTimeMesh, coeffs: np.ndarray, i: int):
    return PanelDensity(mesh.panel(i), 0, np.array([coeffs[i]]))


# ---------------------------------------------------------------------------
# Multi-component inner integrals over a lit set
# ---------------------------------------------------------------------------

# component = (kernel id 1|2|3, density kind, per-panel params (L, 8) or (8,))
# density kinds follow stbem._fastpath: 0 const, 1 affine, 2 wave value,
# 3 wave time derivative, 4 wave normal derivative


def fast_available() -> bool:
    return _fastpath.NUMBA_AVAILABLE


def components_batch(mesh: SpaceTimeMesh, idx: np.ndarray, apex: np.ndarray,
                     kern: np.ndarray, dkind: np.ndarray, dpar: np.ndarray,
                     cfg: QuadConfig, include_4pi: bool = True,
                     use_fast=None) -> np.ndarray:
    """Inner integrals of all components against the panels ``idx``;
    dpar has shape (L, nc, 8). Returns (L, nc)."""
    if use_fast is None:
        use_fast = fast_available()
    L = len(idx)
    nc = len(kern)
    if L == 0:
        return np.zeros((0, nc))
    if use_fast:
        gx, gw = gauss_legendre(cfg.n_G)
        return _fastpath.inner_multi_batch(
            np.ascontiguousarray(apex, dtype=float),
            np.ascontiguousarray(mesh.panel_vertices[idx]),
            np.ascontiguousarray(mesh.normals[idx]),
            np.ascontiguousarray(mesh.face_anchors[idx]),
            np.ascontiguousarray(mesh.face_conormals[idx]),
            np.ascontiguousarray(kern, dtype=np.int64),
            np.ascontiguousarray(dkind, dtype=np.int64),
            np.ascontiguousarray(dpar),
            1.0 / (4.0 * np.pi) if include_4pi else 1.0,
            cfg.r_max, cfg.n_G, gx, gw,
        )
    out = np.empty((L, nc))
    kmap = {1: KernelId.K1, 2: KernelId.K2, 3: KernelId.K3}
    for row, pi in enumerate(idx):
        panel = mesh.panel(int(pi))
        support = None
        for c in range(nc):
            if int(dkind[c]) >= 2:
                frame_r0 = float(apex[0]) - float(
                    mesh.panel_vertices[pi, :, 0].min())
                support = wave_support_constraints(
                    dpar[row, c, 0:3], int(dpar[row, c, 3]), apex,
                    max(frame_r0, 0.0))
                break
        for c in range(nc):
            out[row, c] = inner_integral(
                apex, panel, kmap[int(kern[c])],
                _density_from_params(int(dkind[c]), dpar[row, c]),
                cfg, include_4pi=include_4pi, support=support,
            )
    return out


def _density_from_params(dkind: int, p: np.ndarray):
    if dkind == 0:
        c = float(p[0])
        return lambda pts: np.full(len(pts), c)
    if dkind == 1:
        c0 = float(p[0])
        grad = p[1:5].copy()
        return lambda pts: c0 + pts @ grad
    wave = SphericalWave(source=p[0:3].copy(), mu_kind=int(p[3]))
    if dkind == 2:
        return wave.value
    if dkind == 3:
        return wave.dt
    if dkind == 4:
        normal = p[4:7].copy()
        return lambda pts: wave.neumann(pts, normal)
    raise ValueError(f"unknown density kind {dkind}")


def _density_components(mesh, w: Density, time_derivative: bool):
    """(kern-kind placeholder, dkind, dpar (N, 8)) for a Density."""
    N = mesh.num_panels
    dpar = np.zeros((N, 8))
    if w.space is FESpaceTag.S0:
        if time_derivative:
            raise ValueError("time derivative requires a V1 density")
        dpar[:, 0] = w.coefficients
        return 0, dpar
    aff = v1_affine_params(mesh, w.coefficients)
    if time_derivative:
        dpar[:, 0] = aff[:, 1]
        return 0, dpar
    dpar[:, :5] = aff
    return 1, dpar


def apply_Tk(apex, k: KernelId, w: Density, mesh: SpaceTimeMesh,
             tree: ClusterTree, cfg: QuadConfig,
             time_derivative: bool = False, include_4pi: bool = True,
             use_fast=None) -> float:
    """Retarded layer potential of kernel k applied to a discrete density,
    evaluated at one space-time point via the lit set."""
    w.check(mesh)
    apex = np.asarray(apex, dtype=float)
    lit = lit_set(tree, mesh, apex)
    if lit.size == 0:
        return 0.0
    dk, dpar = _density_components(mesh, w, time_derivative)
    vals = components_batch(
        mesh, lit, apex,
        np.array([k.value], dtype=np.int64),
        np.array([dk], dtype=np.int64),
        dpar[lit][:, None, :], cfg, include_4pi, use_fast,
    )
    return float(vals[:, 0].sum())


def single_layer(apex, w: Density, mesh, tree, cfg, use_fast=None) -> float:
    """S w = T_{k1} w for a piecewise-constant density."""
    return apply_Tk(apex, KernelId.K1, w, mesh, tree, cfg, use_fast=use_fast)


def double_layer(apex, v: Density, mesh, tree, cfg, use_fast=None) -> float:
    """D v = T_{k3} v + T_{k2} (d_tau v) for a continuous density."""
    if v.space is not FESpaceTag.V1:
        raise ValueError("double layer requires a V1 density")
    v.check(mesh)
    apex = np.asarray(apex, dtype=float)
    lit = lit_set(tree, mesh, apex)
    if lit.size == 0:
        return 0.0
    aff = v1_affine_params(mesh, v.coefficients)
    dpar = np.zeros((mesh.num_panels, 2, 8))
    dpar[:, 0, :5] = aff
    dpar[:, 1, 0] = aff[:, 1]
    vals = components_batch(
        mesh, lit, apex,
        np.array([3, 2], dtype=np.int64),
        np.array([1, 0], dtype=np.int64),
        dpar[lit], cfg, True, use_fast,
    )
    return float(vals.sum())


# ---------------------------------------------------------------------------
# Assembly
# ---------------------------------------------------------------------------

_WORKER = {}


def _assembly_chunk(face_range):
    """Worker: process faces [lo, hi); returns per-node scatter records."""
    lo, hi = face_range
    mesh = _WORKER["mesh"]
    tree = _WORKER["tree"]
    cfg = _WORKER["cfg"]
    faces = _WORKER["faces"]
    kern = _WORKER["kern"]
    dkind = _WORKER["dkind"]
    dpar = _WORKER["dpar"]
    use_fast = _WORKER["use_fast"]
    out = []
    for fi in range(lo, hi):
        face = faces[fi]
        w = face["weight"]
        for node in face["nodes"]:
            lit = lit_set(tree, mesh, node)
            if lit.size == 0:
                continue
            vals = components_batch(mesh, lit, node, kern, dkind, dpar[lit],
                                    cfg, True, use_fast)
            row_v = w * vals[:, 0]
            bk = float(w * vals[:, 1:].sum()) if vals.shape[1] > 1 else 0.0
            for pi, nu_t in face["owners"]:
                out.append((pi, -nu_t, lit, row_v, bk))
    return out


def assemble_system(mesh: SpaceTimeMesh, tree: ClusterTree,
                    inner_cfg: QuadConfig, m_q: int = 3,
                    g_h: Density = None, workers: int = 1,
                    use_fast=None, progress=None):
    """Assemble the single-layer Galerkin matrix and, when a projected
    Dirichlet datum g_h is given, the double-layer right-hand side vector in
    the same pass (sharing lit sets and quadrature points).

    Returns (A, b_K) with b_K = None when g_h is None."""
    N = mesh.num_panels
    faces = mesh_boundary_faces(mesh, m_q)
    if g_h is not None:
        g_h.check(mesh)
        aff = v1_affine_params(mesh, g_h.coefficients)
        kern = np.array([1, 3, 2], dtype=np.int64)
        dkind = np.array([0, 1, 0], dtype=np.int64)
        dpar = np.zeros((N, 3, 8))
        dpar[:, 0, 0] = 1.0
        dpar[:, 1, :5] = aff
        dpar[:, 2, 0] = aff[:, 1]
    else:
        kern = np.array([1], dtype=np.int64)
        dkind = np.array([0], dtype=np.int64)
        dpar = np.zeros((N, 1, 8))
        dpar[:, 0, 0] = 1.0

    ctx = dict(mesh=mesh, tree=tree, cfg=inner_cfg, faces=faces, kern=kern,
               dkind=dkind, dpar=dpar, use_fast=use_fast)

    A = np.zeros((N, N))
    bK = np.zeros(N) if g_h is not None else None

    def scatter(records):
        for pi, sgn, lit, row_v, bk in records:
            A[pi, lit] += sgn * row_v
            if bK is not None:
                bK[pi] += sgn * bk

    n_faces = len(faces)
    if workers <= 1:
        _WORKER.update(ctx)
        chunk = max(1, n_faces // 64)
        done = 0
        for lo in range(0, n_faces, chunk):
            scatter(_assembly_chunk((lo, min(lo + chunk, n_faces))))
            done = min(lo + chunk, n_faces)
            if progress:
                progress(done, n_faces)
    else:
        chunk = max(1, n_faces // (workers * 16))
        ranges = [(lo, min(lo + chunk, n_faces))
                  for lo in range(0, n_faces, chunk)]
        with ProcessPoolExecutor(
            max_workers=workers,
            initializer=_init_worker, initargs=(ctx,),
        ) as pool:
            done = 0
            for rec in pool.map(_assembly_chunk, ranges):
                scatter(rec)
                done += 1
                if progress:
                    progress(done * chunk, n_faces)
    return A, bK


def _init_worker(ctx):
    _WORKER.update(ctx)


def assemble_bV(mesh, tree, inner_cfg, m_q: int = 3, workers: int = 1,
                use_fast=None, progress=None) -> np.ndarray:
    """Galerkin matrix of the energetic single-layer form: entry (i, j) tests
    S applied to the indicator of panel j against panel i's boundary."""
    A, _ = assemble_system(mesh, tree, inner_cfg, m_q, None, workers,
                           use_fast, progress)
    return A


def assemble_bId(g, mesh: SpaceTimeMesh, m_q: int = 3) -> np.ndarray:
    """Right-hand side functional of the data: component i is
    -sum over the faces of panel i of nu_t * quadrature of g."""
    if isinstance(g, Density):
        if g.space is not FESpaceTag.V1:
            raise ValueError("b_Id densities must be V1")
        aff = v1_affine_params(mesh, g.coefficients)

        def geval(nodes, pi):
            return aff[pi, 0] + nodes @ aff[pi, 1:]
    else:
        def geval(nodes, pi):
            return np.asarray(g(nodes), dtype=float)

    N = mesh.num_panels
    out = np.zeros(N)
    for pi in range(N):
        rule = boundary_rule(mesh.panel(pi), m_q)
        for f in range(4):
            if rule.skippable[f]:
                continue
            vals = geval(rule.nodes[f], pi)
            out[pi] -= rule.nu_t[f] * float(rule.weights[f] @ vals)
    return out


def assemble_bK(g_h: Density, mesh, tree, inner_cfg, m_q: int = 3,
                workers: int = 1, use_fast=None) -> np.ndarray:
    """Right-hand side vector of the double-layer term: component i tests
    D g_h against panel i's boundary."""
    _, bK = assemble_system(mesh, tree, inner_cfg, m_q, g_h, workers,
                            use_fast)
    return bK


# ---------------------------------------------------------------------------
# L2 projection onto V1
# ---------------------------------------------------------------------------


def project_Qh1(g, mesh: SpaceTimeMesh) -> Density:
    """L2(Sigma)-orthogonal projection of g onto the hat-function space with
    homogeneous initial condition."""
    bary, wref = tetrahedron_rule(3)
    active = mesh.v1_active_mask()
    idx = mesh.v1_index()
    n_dof = int(active.sum())
    N = mesh.num_panels

    pts = np.einsum("qk,nkd->nqd", bary, mesh.panel_vertices)
    gvals = np.asarray(g(pts.reshape(-1, 4)), dtype=float).reshape(N, -1)
    wq = wref * 6.0  # times volume below

    rows, cols, vals = [], [], []
    rhs = np.zeros(n_dof)
    local = np.ones((4, 4)) / 20.0
    np.fill_diagonal(local, 1.0 / 10.0)
    for pi in range(N):
        dofs = idx[mesh.panels[pi]]
        vol = mesh.volumes[pi]
        lm = local * vol
        for a in range(4):
            da = dofs[a]
            if da < 0:
                continue
            rhs[da] += vol * float((wq * gvals[pi] * bary[:, a]).sum())
            for b in range(4):
                db = dofs[b]
                if db < 0:
                    continue
                rows.append(da)
                cols.append(db)
                vals.append(lm[a, b])
    M = sp.csr_matrix((vals, (rows, cols)), shape=(n_dof, n_dof))
    coeffs = spla.spsolve(M, rhs)
    res = np.linalg.norm(M @ coeffs - rhs)
    scale = np.linalg.norm(rhs)
    if scale > 0 and res > PROJECTION_RTOL * scale:
        raise RuntimeError(
            f"projection mass solve residual {res/scale:.2e} exceeds "
            f"{PROJECTION_RTOL}: singular mass matrix / broken mesh"
        )
    return Density(FESpaceTag.V1, coeffs)


# ---------------------------------------------------------------------------
# Solvers
# ---------------------------------------------------------------------------


def _lu_solve_refined(A: np.ndarray, b: np.ndarray):
    lu, piv = sla.lu_factor(A)
    x = sla.lu_solve((lu, piv), b)
    bnorm = float(np.linalg.norm(b))
    steps = 0
    res = float(np.linalg.norm(A @ x - b))
    while bnorm > 0 and res > SOLVE_RTOL * bnorm and steps < 3:
        x += sla.lu_solve((lu, piv), b - A @ x)
        res = float(np.linalg.norm(A @ x - b))
        steps += 1
    if bnorm > 0 and res > SOLVE_RTOL * bnorm:
        anorm = np.linalg.norm(A, 1)
        rcond = sla.lapack.dgecon(lu, anorm, norm="1")[0]
        raise RuntimeError(
            f"linear solve residual {res/bnorm:.2e} exceeds {SOLVE_RTOL} "
            f"(1-norm condition estimate {1.0/max(rcond, 1e-300):.2e})"
        )
    return x, SolveInfo(residual=res / bnorm if bnorm > 0 else 0.0,
                        refinement_steps=steps)


def solve_indirect(g, mesh, tree, inner_cfg: QuadConfig, m_q: int = 3,
                   workers: int = 1, use_fast=None, matrix=None,
                   return_info: bool = False):
    """Solve the indirect formulation: find the proxy density w_h in S0 with
    b_V(w_h, v_h) = b_Id(g, v_h) for all piecewise-constant v_h."""
    A = matrix if matrix is not None else assemble_bV(
        mesh, tree, inner_cfg, m_q, workers, use_fast)
    b = assemble_bId(g, mesh, m_q)
    x, info = _lu_solve_refined(A, b)
    logger.info("indirect solve: N=%d residual=%.2e", mesh.num_panels,
                info.residual)
    w = Density(FESpaceTag.S0, x)
    return (w, info) if return_info else w


def solve_direct(g, mesh, tree, inner_cfg: QuadConfig, m_q: int = 3,
                 side: Side = Side.EXTERIOR, workers: int = 1, use_fast=None,
                 matrix=None, g_h: Density = None,
                 return_info: bool = False):
    """Solve the direct formulation for the Neumann trace: b_V(w_h, v_h) =
    -side/2 b_Id(Q g, v_h) + b_K(Q g, v_h). The Dirichlet datum is projected
    onto V1 first (pass ``g_h`` to reuse a projection)."""
    if g_h is None:
        g_h = project_Qh1(g, mesh)
    if matrix is None:
        A, bK = assemble_system(mesh, tree, inner_cfg, m_q, g_h, workers,
                                use_fast)
    else:
        A = matrix
        bK = assemble_bK(g_h, mesh, tree, inner_cfg, m_q, workers, use_fast)
    b = -float(side) * 0.5 * assemble_bId(g_h, mesh, m_q) + bK
    x, info = _lu_solve_refined(A, b)
    logger.info("direct solve: N=%d residual=%.2e", mesh.num_panels,
                info.residual)
    w = Density(FESpaceTag.S0, x)
    return (w, info) if return_info else w


# ---------------------------------------------------------------------------
# Field evaluation
# ---------------------------------------------------------------------------


def evaluate_density(mesh: SpaceTimeMesh, density: Density, point) -> float:
    """Pointwise value of a discrete density (point must lie on the mesh)."""
    p = np.asarray(point, dtype=float)
    d = p[None, :] - mesh.face_anchors[:, 0, :]
    plane = np.abs((d * mesh.normals).sum(1))
    order = np.argsort(plane)
    from .geometry import panel_level

    for pi in order[:32]:
        if panel_level(mesh.panel(int(pi)), p) <= 1e-10 * mesh.h:
            if density.space is FESpaceTag.S0:
                return float(density.coefficients[pi])
            aff = v1_affine_params(mesh, density.coefficients)
            return float(aff[pi, 0] + p @ aff[pi, 1:])
    raise ValueError("point does not lie on the mesh surface")


def kirchhoff_eval(apex, g_h: Density, w_h: Density, side: Side,
                   mesh, tree, cfg: QuadConfig, solid_angle: float = None,
                   g_value: float = None, use_fast=None) -> float:
    """Kirchhoff field: side * (D g_h - S w_h); for on-boundary points the
    jump term solid_angle * g(apex) is added (solid_angle = 1/2 at smooth
    boundary points). ``g_value`` overrides the evaluation of g_h at the
    apex (for exactly representing known data)."""
    val = float(side) * (
        double_layer(apex, g_h, mesh, tree, cfg, use_fast)
        - single_layer(apex, w_h, mesh, tree, cfg, use_fast)
    )
    if solid_angle is not None:
        gv = g_value if g_value is not None else evaluate_density(
            mesh, g_h, apex)
        val += solid_angle * gv
    return val


def kirchhoff_exact_wave(apex, wave: SphericalWave, mesh, tree,
                         cfg: QuadConfig, solid_angle: float = None,
                         use_fast=None) -> float:
    """Kirchhoff field with the exact Cauchy data of a spherical wave
    inserted (exterior side): D gamma0 u - S gamma1 u, plus the on-boundary
    jump term when solid_angle is given. The only error source is the inner
    quadrature."""
    apex = np.asarray(apex, dtype=float)
    lit = lit_set(tree, mesh, apex)
    total = 0.0
    if lit.size:
        N = mesh.num_panels
        dpar = np.zeros((N, 3, 8))
        for c in range(3):
            dpar[:, c, 0:3] = wave.source
            dpar[:, c, 3] = wave.mu_kind
        dpar[:, 2, 4:7] = mesh.normals[:, 1:]
        kern = np.array([3, 2, 1], dtype=np.int64)
        dkind = np.array([2, 3, 4], dtype=np.int64)
        vals = components_batch(mesh, lit, apex, kern, dkind, dpar[lit],
                                cfg, True, use_fast)
        total = float(vals[:, 0].sum() + vals[:, 1].sum() - vals[:, 2].sum())
    if solid_angle is not None:
        total += solid_angle * float(wave.value(apex[None, :])[0])
    return total


# ---------------------------------------------------------------------------
# CSV serialization (debugging / cross-language comparison)
# ---------------------------------------------------------------------------


def save_matrix_csv(path, matrix: np.ndarray) -> None:
    m = np.atleast_2d(matrix)
    with open(path, "w") as fh:
        fh.write(f"rows,cols\n{m.shape[0]},{m.shape[1]}\n")
        for row in m:
            fh.write(",".join(repr(v) for v in row) + "\n")


def load_matrix_csv(path) -> np.ndarray:
    with open(path) as fh:
        fh.readline()
        rows, cols = (int(v) for v in fh.readline().split(","))
        out = np.empty((rows, cols))
        for i in range(rows):
            out[i] = [float(v) for v in fh.readline().split(",")]
    return out


def save_density_csv(path, density: Density) -> None:
    with open(path, "w") as fh:
        fh.write(f"space,{density.space.name}\n")
        fh.write(f"n,{len(density.coefficients)}\n")
        for v in density.coefficients:
            fh.write(repr(float(v)) + "\n")


def load_density_csv(path) -> Density:
    with open(path) as fh:
        space = FESpaceTag[fh.readline().split(",")[1].strip()]
        n = int(fh.readline().split(",")[1])
        coeffs = np.array([float(fh.readline()) for _ in range(n)])
    return Density(space, coeffs)
