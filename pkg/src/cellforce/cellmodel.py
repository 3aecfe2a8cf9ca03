"""Cells, their polygonal boundaries, and the inward point forces they exert."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import CellForceError, SamplingError
from .mesh import SubdomainSpec

__all__ = [
    "CellSpec",
    "PolygonApprox",
    "ForceSegment",
    "polygonize",
    "force_segments",
    "loop_segments",
    "segment_forces",
    "sample_cells",
    "dump_cells",
    "load_cells",
]

MAX_ATTEMPTS = 10_000


@dataclass(frozen=True)
class CellSpec:
    center: tuple
    radius: float

    def __post_init__(self):
        object.__setattr__(self, "center", (float(self.center[0]), float(self.center[1])))
        if not self.radius > 0:
            raise CellForceError(f"cell radius must be positive, got {self.radius}")


@dataclass(frozen=True, eq=False)
class PolygonApprox:
    cell: CellSpec
    n: int
    vertices: np.ndarray  # (n, 2), counterclockwise
    circumradius: float
    equal_area: bool
    phase: float = 0.0

    @property
    def center(self) -> np.ndarray:
        return np.asarray(self.cell.center)

    @property
    def area(self) -> float:
        return 0.5 * self.n * self.circumradius**2 * math.sin(2 * math.pi / self.n)

    @property
    def perimeter(self) -> float:
        return 2 * self.n * self.circumradius * math.sin(math.pi / self.n)


@dataclass(frozen=True)
class ForceSegment:
    midpoint: np.ndarray
    normal: np.ndarray  # unit, pointing toward the cell center
    length: float
    magnitude: float  # force per unit length

    @property
    def force(self) -> np.ndarray:
        return self.magnitude * self.length * self.normal


def polygonize(cell: CellSpec, n: int, equal_area: bool = True, phase: float = 0.0) -> PolygonApprox:
    """Regular ``n``-gon approximating ``cell``.

    With ``equal_area`` the circumradius is enlarged so the polygon area equals
    pi R^2; otherwise the vertices lie on the cell circle.
    """
    if n < 3:
        raise CellForceError(f"polygon degree must be >= 3, got {n}")
    R = cell.radius
    rho = R * math.sqrt(2 * math.pi / (n * math.sin(2 * math.pi / n))) if equal_area else R
    ang = phase + 2 * math.pi * np.arange(n) / n
    verts = np.column_stack([cell.center[0] + rho * np.cos(ang), cell.center[1] + rho * np.sin(ang)])
    return PolygonApprox(cell, n, verts, rho, bool(equal_area), float(phase))


def loop_segments(vertices, center, magnitude: float) -> list[ForceSegment]:
    """One inward force segment per edge of a closed counterclockwise loop."""
    verts = np.asarray(vertices, dtype=float)
    center = np.asarray(center, dtype=float)
    nxt = np.roll(verts, -1, axis=0)
    out = []
    for a, b in zip(verts, nxt):
        d = b - a
        length = float(np.hypot(d[0], d[1]))
        mid = 0.5 * (a + b)
        # left normal of a counterclockwise edge points into the polygon
        normal = np.array([-d[1], d[0]]) / length
        if np.dot(normal, center - mid) <= 0:
            raise CellForceError("loop is not counterclockwise around its center")
        out.append(ForceSegment(mid, normal, length, float(magnitude)))
    return out


def force_segments(poly: PolygonApprox, P: float, conserve_total: bool = False) -> list[ForceSegment]:
    """Inward midpoint forces on every polygon edge.

    ``conserve_total`` rescales the per-length magnitude so that the summed
    scalar force equals that of the circle, ``P * 2 pi R``, for every degree.
    """
    magnitude = P
    if conserve_total:
        magnitude = P * 2 * math.pi * poly.cell.radius / poly.perimeter
    return loop_segments(poly.vertices, poly.center, magnitude)


def segment_forces(segments) -> tuple[np.ndarray, np.ndarray]:
    """(locations, force vectors) arrays for a list of segments."""
    if not segments:
        return np.empty((0, 2)), np.empty((0, 2))
    locs = np.array([s.midpoint for s in segments])
    forces = np.array([s.force for s in segments])
    return locs, forces


def sample_cells(
    side_half_length: float,
    lam: float,
    R: float,
    seed: int,
    region: SubdomainSpec | None = None,
) -> list[CellSpec]:
    """Cells placed by a homogeneous Poisson point process.

    The count is Poisson(lam); centers are uniform over ``region`` (the whole
    domain when None) with rejection enforcing center spacing >= 2R and a
    clearance >= R from the region boundary.
    """
    if not lam > 0:
        raise CellForceError("Poisson rate must be positive")
    rng = np.random.default_rng(seed)
    if region is None:
        region = SubdomainSpec.square(side_half_length)
    corners = region.corners()
    lo, hi = corners.min(axis=0), corners.max(axis=0)
    count = int(rng.poisson(lam))
    centers: list[np.ndarray] = []
    for _ in range(count):
        for _attempt in range(MAX_ATTEMPTS):
            p = lo + (hi - lo) * rng.random(2)
            if not region.contains(p)[0]:
                continue
            if _distance_to_boundary(p, corners) < R:
                continue
            if centers and np.min(np.linalg.norm(np.array(centers) - p, axis=1)) < 2 * R:
                continue
            centers.append(p)
            break
        else:
            raise SamplingError(f"could not place cell {len(centers) + 1} after {MAX_ATTEMPTS} attempts")
    return [CellSpec((float(c[0]), float(c[1])), R) for c in centers]


def _distance_to_boundary(p, corners):
    a = corners
    b = np.roll(corners, -1, axis=0)
    ab = b - a
    t = np.clip(((p - a) * ab).sum(axis=1) / (ab * ab).sum(axis=1), 0, 1)
    return float(np.min(np.linalg.norm(a + t[:, None] * ab - p, axis=1)))


def dump_cells(cells) -> str:
    lines = [f"CELLS {len(cells)}"]
    lines += [f"{c.center[0]:.17g} {c.center[1]:.17g} {c.radius:.17g}" for c in cells]
    return "\n".join(lines) + "\n"


def load_cells(text: str) -> list[CellSpec]:
    rows = [r.split() for r in text.splitlines() if r.strip() and not r.lstrip().startswith("#")]
    if not rows or rows[0][0] != "CELLS":
        raise CellForceError("missing CELLS header")
    n = int(rows[0][1])
    if len(rows) - 1 != n:
        raise CellForceError(f"CELLS header announces {n} cells, found {len(rows) - 1}")
    return [CellSpec((float(x), float(y)), float(r)) for x, y, r in rows[1:]]
