"""Independent oracles used by the test suite.

These deliberately avoid the solver paths they check: triangulation is
re-minimized by generic Gauss-Newton with numeric derivatives, consistent
correspondence subsets come from an exact maximum-clique search, and areas
come from the shoelace formula.
"""

from __future__ import annotations

import numpy as np


def ray_distance_residuals(q: np.ndarray, rays) -> np.ndarray:
    """Stacked perpendicular-offset components of q from each ray."""
    out = []
    for ray in rays:
        offset = q - ray.origin
        out.append(offset - np.dot(offset, ray.direction) * ray.direction)
    return np.concatenate(out)


def gauss_newton_triangulate(rays, x0=None, iters: int = 25) -> np.ndarray:
    """Minimize sum of squared point-to-ray distances by Gauss-Newton.

    Numeric central-difference Jacobian; start from the mean ray origin.
    """
    q = np.mean([r.origin for r in rays], axis=0) if x0 is None else np.array(x0, float)
    h = 1e-6
    for _ in range(iters):
        r0 = ray_distance_residuals(q, rays)
        jac = np.empty((len(r0), 3))
        for k in range(3):
            dq = np.zeros(3)
            dq[k] = h
            jac[:, k] = (
                ray_distance_residuals(q + dq, rays)
                - ray_distance_residuals(q - dq, rays)
            ) / (2 * h)
        step, *_ = np.linalg.lstsq(jac, -r0, rcond=None)
        q = q + step
        if np.linalg.norm(step) < 1e-14:
            break
    return q


def max_consistent_subset(
    observed: np.ndarray, modeled: np.ndarray, gate: float
) -> set[int]:
    """Largest index set whose pairwise distances all agree within `gate`.

    Exact maximum clique on the pairwise-consistency graph; practical for
    n <= 20.
    """
    import networkx as nx

    n = len(observed)
    d_obs = np.linalg.norm(observed[:, None] - observed[None, :], axis=2)
    d_mod = np.linalg.norm(modeled[:, None] - modeled[None, :], axis=2)
    g = nx.Graph()
    g.add_nodes_from(range(n))
    for i in range(n):
        for j in range(i + 1, n):
            if abs(d_obs[i, j] - d_mod[i, j]) <= gate:
                g.add_edge(i, j)
    clique, _ = nx.max_weight_clique(g, weight=None)
    return set(clique)


def shoelace_area(polygon: np.ndarray) -> float:
    """Unsigned area of a simple polygon given as (N, 2) vertices."""
    x = polygon[:, 0]
    y = polygon[:, 1]
    return 0.5 * abs(np.dot(x, np.roll(y, -1)) - np.dot(np.roll(x, -1), y))
