"""Shared quadrature rules: Gauss-Legendre caches, a conical-product rule on
tetrahedra and the congruent-triangle centroid subdivision used by the outer
quadrature."""

from __future__ import annotations

from functools import lru_cache

import numpy as np
from scipy.special import roots_jacobi


@lru_cache(maxsize=None)
def gauss_legendre(n: int):
    """Nodes and weights on [-1, 1], cached per order."""
    x, w = np.polynomial.legendre.leggauss(n)
    return x, w


@lru_cache(maxsize=None)
def gauss_legendre_01(n: int):
    """Nodes and weights on [0, 1]."""
    x, w = gauss_legendre(n)
    return 0.5 * (x + 1.0), 0.5 * w


@lru_cache(maxsize=None)
def tetrahedron_rule(n: int = 3):
    """Conical-product rule on the unit 3-simplex, exact to degree 2n-1.

    Returns barycentric coordinates (m, 4) and weights (m,) summing to the
    unit-simplex volume 1/6. All weights are positive. The default n = 3 is
    exact for degree-5 polynomials, enough for products of affine functions
    with a quadratic to spare.
    """

    def jacobi01(alpha):
        if alpha == 0:
            return gauss_legendre_01(n)
        x, w = roots_jacobi(n, alpha, 0.0)
        # (1-t)^alpha on [-1,1] -> (1-x)^alpha on [0,1] absorbs (1/2)^(alpha+1)
        return 0.5 * (x + 1.0), w * 0.5 ** (alpha + 1)

    x1, w1 = jacobi01(2)
    x2, w2 = jacobi01(1)
    x3, w3 = jacobi01(0)

    pts = []
    wts = []
    for a, wa in zip(x1, w1):
        for b, wb in zip(x2, w2):
            for c, wc in zip(x3, w3):
                l1 = a
                l2 = (1.0 - a) * b
                l3 = (1.0 - a) * (1.0 - b) * c
                l0 = 1.0 - l1 - l2 - l3
                pts.append((l0, l1, l2, l3))
                wts.append(wa * wb * wc)
    return np.array(pts), np.array(wts)


def map_to_tetrahedron(vertices: np.ndarray, n: int = 3):
    """Physical quadrature points/weights on a tetrahedron given by (4, d)
    vertex rows; weights sum to the tetrahedron's 3-volume."""
    bary, w = tetrahedron_rule(n)
    pts = bary @ vertices
    e = vertices[1:] - vertices[0]
    vol = np.sqrt(max(np.linalg.det(e @ e.T), 0.0)) / 6.0
    return pts, w * (6.0 * vol)


@lru_cache(maxsize=None)
def triangle_centroid_grid(m: int):
    """Barycentric centroids of the m^2 congruent sub-triangles of a triangle.

    Subdividing each edge into m parts yields m*(m+1)/2 upward and
    m*(m-1)/2 downward congruent triangles; their centroids carry the uniform
    weight area/m^2 of the composite midpoint rule. Returns (m^2, 3)
    barycentric coordinates (strictly interior)."""
    cents = []
    for i in range(m):
        for j in range(m - i):
            cents.append(((3 * i + 1) / (3 * m), (3 * j + 1) / (3 * m)))
            if i + j <= m - 2:
                cents.append(((3 * i + 2) / (3 * m), (3 * j + 2) / (3 * m)))
    out = np.empty((len(cents), 3))
    ab = np.array(cents)
    out[:, 1] = ab[:, 0]
    out[:, 2] = ab[:, 1]
    out[:, 0] = 1.0 - ab.sum(axis=1)
    return out


def triangle_area(vertices: np.ndarray) -> float:
    """Area of a triangle given by (3, d) vertex rows in any dimension d."""
    a = vertices[1] - vertices[0]
    b = vertices[2] - vertices[0]
    g11 = float(a @ a)
    g22 = float(b @ b)
    g12 = float(a @ b)
    return 0.5 * np.sqrt(max(g11 * g22 - g12 * g12, 0.0))
