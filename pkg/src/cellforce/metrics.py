"""Deformed areas, contraction ratios, norms and empirical convergence rates."""
from __future__ import annotations

import math
import warnings
from typing import NamedTuple

import numpy as np

from .elasticity import DisplacementField, gradients
from .errors import CellForceError, IndeterminateRateError, MeshError
from .mesh import BoundaryTag, Mesh, SubdomainSpec, chain_loops, distance_to_loop

__all__ = [
    "InvertedElementWarning",
    "JacobianArea",
    "shoelace_area",
    "signed_shoelace_area",
    "subdomain_loop",
    "deformed_boundary",
    "jacobian_area",
    "reduction_ratio",
    "convergence_rate",
    "l2_norm",
]


class InvertedElementWarning(UserWarning):
    pass


class JacobianArea(NamedTuple):
    area: float
    n_inverted: int


def signed_shoelace_area(vertices) -> float:
    v = np.asarray(vertices, dtype=float)
    if v.ndim != 2 or len(v) < 3:
        raise CellForceError("a polygon needs at least 3 vertices")
    x, y = v[:, 0], v[:, 1]
    return 0.5 * float(np.sum(x * np.roll(y, -1) - np.roll(x, -1) * y))


def shoelace_area(vertices) -> float:
    """Area of a simple polygon from ordered vertices (either orientation)."""
    return abs(signed_shoelace_area(vertices))


def subdomain_loop(mesh: Mesh, subdomain: SubdomainSpec) -> np.ndarray:
    """Counterclockwise node loop of mesh edges lying on the subdomain boundary."""
    corners = subdomain.corners()
    tol = 1e-9 * mesh.h
    on = distance_to_loop(mesh.nodes, corners) < tol
    edges = mesh.all_edges()
    cand = edges[on[edges[:, 0]] & on[edges[:, 1]]]
    mid = mesh.nodes[cand].mean(axis=1)
    cand = cand[distance_to_loop(mid, corners) < tol]
    if len(cand) == 0:
        raise MeshError("subdomain boundary is not made of mesh edges")
    # orient each edge counterclockwise: subdomain interior on the left
    a, b = mesh.nodes[cand[:, 0]], mesh.nodes[cand[:, 1]]
    d = b - a
    probe = 0.5 * (a + b) + 1e-6 * mesh.h * np.column_stack([-d[:, 1], d[:, 0]]) / np.linalg.norm(d, axis=1)[:, None]
    flip = ~subdomain.contains(probe)
    cand[flip] = cand[flip][:, ::-1]
    loops = chain_loops(cand)
    if len(loops) != 1:
        raise MeshError(f"subdomain boundary forms {len(loops)} loops")
    loop = loops[0]
    covered = sum(np.linalg.norm(mesh.nodes[np.roll(loop, -1)] - mesh.nodes[loop], axis=1))
    perimeter = sum(np.linalg.norm(np.roll(corners, -1, axis=0) - corners, axis=1))
    if abs(covered - perimeter) > 1e-9 * perimeter:
        raise MeshError("subdomain boundary is only partially covered by mesh edges")
    return loop


def deformed_boundary(mesh: Mesh, field: DisplacementField | None, which) -> np.ndarray:
    """Boundary loop vertices displaced by the nodal field (x = X + u).

    ``which`` is a :class:`BoundaryTag` (``HOLE``/``INTERFACE`` select the cell
    loop) or a :class:`SubdomainSpec`.
    """
    if isinstance(which, SubdomainSpec):
        loop = subdomain_loop(mesh, which)
    elif int(which) in (BoundaryTag.HOLE, BoundaryTag.INTERFACE):
        loop = mesh.cell_loop
    else:
        loop = mesh.loop(which)
    pts = mesh.nodes[loop]
    if field is not None:
        pts = pts + field.values[loop]
    return pts


def jacobian_area(mesh: Mesh, field: DisplacementField | None, elements=None) -> JacobianArea:
    """``int det(I + grad u) dX`` over an element subset (exact for P1)."""
    idx = np.arange(mesh.n_elements) if elements is None else np.asarray(elements, dtype=np.int64)
    area = mesh.signed_areas[idx]
    if field is None:
        return JacobianArea(float(area.sum()), 0)
    J = gradients(field)[idx]
    det = (1 + J[:, 0, 0]) * (1 + J[:, 1, 1]) - J[:, 0, 1] * J[:, 1, 0]
    n_bad = int(np.count_nonzero(det <= 0))
    if n_bad:
        warnings.warn(f"{n_bad} element(s) inverted by the displacement", InvertedElementWarning, stacklevel=2)
    return JacobianArea(float(np.sum(det * area)), n_bad)


def reduction_ratio(area_now: float, area_initial: float) -> float:
    """``|A - A0| / A0``."""
    if not area_initial > 0:
        raise CellForceError(f"initial area must be positive, got {area_initial}")
    return abs(area_now - area_initial) / area_initial


def convergence_rate(q_h: float, q_h2: float, q_h4: float) -> float:
    """Observed order ``log2(|Q_h - Q_h/2| / |Q_h/2 - Q_h/4|)``."""
    num = abs(q_h - q_h2)
    den = abs(q_h2 - q_h4)
    if den == 0 or num == 0 or not math.isfinite(num / den):
        raise IndeterminateRateError(f"rate undefined for values {q_h!r}, {q_h2!r}, {q_h4!r}")
    return math.log2(num / den)


def l2_norm(field: DisplacementField, mesh: Mesh | None = None, elements=None) -> float:
    """``(int |u|^2)^(1/2)`` with the exact P1 element mass matrix."""
    mesh = field.mesh if mesh is None else mesh
    ue = field.values[mesh.elements]  # (M, 3, 2)
    area = mesh.signed_areas
    per = area / 12.0 * ((ue**2).sum(axis=(1, 2)) + (ue.sum(axis=1) ** 2).sum(axis=1))
    if elements is not None:
        per = per[np.asarray(elements, dtype=np.int64)]
    return float(np.sqrt(per.sum()))
