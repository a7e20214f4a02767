"""Galerkin testing integrals for piecewise-constant test functions.

For the lowest-order test space the energetic pairing (w, v) -> integral of
(A w) d_t v over the mesh reduces to boundary integrals over each panel's
four triangular faces, weighted by the time component of the outward
conormal. The integrand inherits weak singularities from the retarded
potentials, so a composite midpoint rule on m_Q^2 congruent sub-triangles is
used instead of a high-order rule; faces whose conormal has no time
component contribute nothing and are flagged skippable.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .geometry import Panel
from .quadrules import triangle_area, triangle_centroid_grid
from .st_mesh import FACE_LOCAL_TRI

SKIP_TOL = 1e-14  # |conormal time component| below this: face contributes 0


@dataclass
class BoundaryFaceData:
    """One panel face as seen by the outer quadrature."""

    panel_index: int
    face_index: int
    vertices: np.ndarray  # (3, 4)
    nu_t: float  # time component of the unit outward conormal


@dataclass
class OuterRule:
    """Composite midpoint rule on the boundary of one panel.

    For each of the four faces: m_Q^2 nodes at the centroids of the congruent
    sub-triangles with uniform weights area/m_Q^2. ``skippable`` marks faces
    with vanishing conormal time component."""

    m_q: int
    nodes: tuple  # 4 arrays (m_q^2, 4)
    weights: tuple  # 4 arrays (m_q^2,)
    nu_t: np.ndarray  # (4,)
    skippable: np.ndarray  # (4,) bool


def boundary_rule(panel: Panel, m_q: int) -> OuterRule:
    """Build the outer rule on all four faces of a panel."""
    if m_q < 1:
        raise ValueError("m_q must be >= 1")
    bary = triangle_centroid_grid(m_q)
    nodes = []
    weights = []
    nu_t = np.empty(4)
    for f, face in enumerate(panel.faces):
        tri = panel.vertices[list(face.tri)]
        nodes.append(bary @ tri)
        area = triangle_area(tri)
        weights.append(np.full(len(bary), area / (m_q * m_q)))
        nu_t[f] = face.conormal[0]
    skippable = np.abs(nu_t) < SKIP_TOL
    return OuterRule(
        m_q=m_q,
        nodes=tuple(nodes),
        weights=tuple(weights),
        nu_t=nu_t,
        skippable=skippable,
    )


def bilinear_entry(A_eval, panel: Panel, rule: OuterRule) -> float:
    """-sum over faces of nu_t * sum_q w_q A_eval(node_q): the energetic
    pairing of A w against the indicator test function of the panel.

    ``A_eval`` maps one space-time point (a (4,) array) to a scalar."""
    total = 0.0
    for f in range(4):
        if rule.skippable[f]:
            continue
        acc = 0.0
        for node, w in zip(rule.nodes[f], rule.weights[f]):
            acc += w * float(A_eval(node))
        total -= rule.nu_t[f] * acc
    return total


def mesh_boundary_faces(mesh, m_q: int):
    """Deduplicated active boundary faces of the whole mesh.

    Returns a list of records (nodes (m_q^2, 4), owners), where owners is a
    list of (panel_index, nu_t) pairs; a face shared by two panels appears
    once and feeds both owners' test integrals (the midpoint nodes of a
    triangle are independent of its vertex order). Skippable faces are
    dropped."""
    bary = triangle_centroid_grid(m_q)
    seen = {}
    order = []
    for pi in range(mesh.num_panels):
        ids = mesh.panels[pi]
        for f, tri in enumerate(FACE_LOCAL_TRI):
            nu_t = float(mesh.face_conormals[pi, f, 0])
            if abs(nu_t) < SKIP_TOL:
                continue
            key = tuple(sorted(ids[list(tri)]))
            if key not in seen:
                tri_verts = mesh.panel_vertices[pi, list(tri)]
                area = triangle_area(tri_verts)
                seen[key] = {
                    "nodes": bary @ tri_verts,
                    "weight": area / (m_q * m_q),
                    "owners": [],
                }
                order.append(key)
            seen[key]["owners"].append((pi, nu_t))
    return [seen[k] for k in order]
