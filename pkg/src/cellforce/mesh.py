"""Conforming P1 triangulations of the square domain, with or without a cell.

Meshes are built from a structured background grid (each grid square split
into two triangles in a "union jack" pattern that is mirror symmetric about
the origin).  When a polygonal cell is present, grid nodes close to the cell
are discarded and the band of affected squares is re-triangulated by a local
Delaunay triangulation that contains the subdivided polygon as edges.
"""
from __future__ import annotations

import enum
import math
from dataclasses import dataclass
from functools import cached_property

import numpy as np
from scipy.spatial import Delaunay, cKDTree

from .errors import AlignmentError, LocateError, MeshError

__all__ = [
    "BoundaryTag",
    "Region",
    "SubdomainSpec",
    "Mesh",
    "generate_square_mesh",
    "generate_hole_mesh",
    "generate_cell_conforming_mesh",
    "exterior_submesh",
    "refine",
    "locate",
    "locate_many",
    "subdivide_loop",
    "dump_mesh",
    "load_mesh",
    "min_angle",
]

MIN_ANGLE_DEG = 5.0
_CLEARANCES = (0.5, 0.65, 0.8, 1.0)


class BoundaryTag(enum.IntEnum):
    OUTER = 0
    HOLE = 1
    # cell boundary inside a cell-conforming mesh; not a domain boundary
    INTERFACE = 2


class Region(enum.IntEnum):
    EXTERIOR = 0
    CELL_INTERIOR = 1


@dataclass(frozen=True)
class SubdomainSpec:
    """Observation subdomain (the near-cell region).

    ``AXIS_ALIGNED_SQUARE`` uses ``bounds = (xmin, xmax, ymin, ymax)``;
    ``POLYGON`` uses ``vertices`` (counterclockwise) whose edges must be
    unions of mesh edges.
    """

    kind: str = "AXIS_ALIGNED_SQUARE"
    bounds: tuple = (-5.0, 5.0, -5.0, 5.0)
    vertices: tuple = ()

    @classmethod
    def square(cls, half: float, center=(0.0, 0.0)) -> "SubdomainSpec":
        cx, cy = center
        return cls("AXIS_ALIGNED_SQUARE", (cx - half, cx + half, cy - half, cy + half))

    @classmethod
    def polygon(cls, vertices) -> "SubdomainSpec":
        verts = tuple((float(x), float(y)) for x, y in vertices)
        return cls("POLYGON", (), verts)

    def corners(self) -> np.ndarray:
        if self.kind == "AXIS_ALIGNED_SQUARE":
            x0, x1, y0, y1 = self.bounds
            if not (x0 < x1 and y0 < y1):
                raise MeshError(f"empty subdomain bounds {self.bounds}")
            return np.array([[x0, y0], [x1, y0], [x1, y1], [x0, y1]], dtype=float)
        if self.kind == "POLYGON":
            verts = np.asarray(self.vertices, dtype=float)
            if len(verts) < 3:
                raise MeshError("subdomain polygon needs at least 3 vertices")
            if _signed_area(verts) < 0:
                verts = verts[::-1].copy()
            return verts
        raise MeshError(f"unknown subdomain kind {self.kind!r}")

    @property
    def area(self) -> float:
        return abs(_signed_area(self.corners()))

    def contains(self, pts, strict=False) -> np.ndarray:
        pts = np.atleast_2d(np.asarray(pts, dtype=float))
        corners = self.corners()
        if self.kind == "AXIS_ALIGNED_SQUARE":
            x0, x1, y0, y1 = self.bounds
            if strict:
                return (pts[:, 0] > x0) & (pts[:, 0] < x1) & (pts[:, 1] > y0) & (pts[:, 1] < y1)
            return (pts[:, 0] >= x0) & (pts[:, 0] <= x1) & (pts[:, 1] >= y0) & (pts[:, 1] <= y1)
        inside = points_in_polygon(pts, corners)
        if strict:
            inside &= distance_to_loop(pts, corners) > 1e-12
        return inside


# ---------------------------------------------------------------------------
# small geometry helpers
# ---------------------------------------------------------------------------

def _signed_area(verts: np.ndarray) -> float:
    x, y = verts[:, 0], verts[:, 1]
    return 0.5 * float(np.dot(x, np.roll(y, -1)) - np.dot(np.roll(x, -1), y))


def points_in_polygon(pts: np.ndarray, verts: np.ndarray) -> np.ndarray:
    """Even-odd crossing test, vectorized over points."""
    pts = np.atleast_2d(pts)
    x, y = pts[:, 0:1], pts[:, 1:2]
    a = verts
    b = np.roll(verts, -1, axis=0)
    ay, by = a[:, 1][None, :], b[:, 1][None, :]
    ax, bx = a[:, 0][None, :], b[:, 0][None, :]
    straddle = (ay > y) != (by > y)
    with np.errstate(divide="ignore", invalid="ignore"):
        xcross = ax + (y - ay) * (bx - ax) / (by - ay)
    hits = straddle & (x < xcross)
    return (np.count_nonzero(hits, axis=1) % 2) == 1


def distance_to_loop(pts: np.ndarray, verts: np.ndarray) -> np.ndarray:
    """Euclidean distance from each point to a closed polyline."""
    pts = np.atleast_2d(pts)
    a = verts
    b = np.roll(verts, -1, axis=0)
    ab = b - a
    ap = pts[:, None, :] - a[None, :, :]
    t = np.clip(np.einsum("pkd,kd->pk", ap, ab) / np.einsum("kd,kd->k", ab, ab), 0.0, 1.0)
    closest = a[None] + t[..., None] * ab[None]
    return np.min(np.linalg.norm(pts[:, None, :] - closest, axis=2), axis=1)


def subdivide_loop(verts: np.ndarray, h: float) -> np.ndarray:
    """Split every polygon edge into ``2**k`` equal pieces of length <= h.

    Power-of-two counts make the point set at ``h/2`` a superset of the one
    at ``h`` (previous points plus midpoints).
    """
    verts = np.asarray(verts, dtype=float)
    out = []
    nxt = np.roll(verts, -1, axis=0)
    for a, b in zip(verts, nxt):
        length = float(np.linalg.norm(b - a))
        m = 1
        if length > h * (1 + 1e-12):
            m = 2 ** int(math.ceil(math.log2(length / h) - 1e-12))
        t = np.arange(m)[:, None] / m
        out.append(a + t * (b - a))
    return np.vstack(out)


def _triangle_angles(p: np.ndarray) -> np.ndarray:
    """Interior angles (radians) of triangles given as (M,3,2) coordinates."""
    angles = np.empty(p.shape[:2])
    for k in range(3):
        u = p[:, (k + 1) % 3] - p[:, k]
        v = p[:, (k + 2) % 3] - p[:, k]
        cos = np.einsum("md,md->m", u, v) / (np.linalg.norm(u, axis=1) * np.linalg.norm(v, axis=1))
        angles[:, k] = np.arccos(np.clip(cos, -1.0, 1.0))
    return angles


# ---------------------------------------------------------------------------
# Mesh container
# ---------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class Mesh:
    """Immutable P1 triangulation.

    Boundary edges are oriented with the meshed domain on their left, so the
    right-hand normal points out of the domain.  INTERFACE edges (cell
    boundary of a cell-conforming mesh) run counterclockwise around the cell.
    """

    nodes: np.ndarray
    elements: np.ndarray
    boundary_edges: np.ndarray
    boundary_tags: np.ndarray
    element_region: np.ndarray
    h: float

    def __post_init__(self):
        for name, dtype in (
            ("nodes", float),
            ("elements", np.int64),
            ("boundary_edges", np.int64),
            ("boundary_tags", np.int64),
            ("element_region", np.int64),
        ):
            arr = np.array(getattr(self, name), dtype=dtype)
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)
        object.__setattr__(self, "h", float(self.h))
        if self.elements.ndim != 2 or self.elements.shape[1] != 3:
            raise MeshError("elements must be an (M, 3) index array")
        self.boundary_edges.shape = (-1, 2)

    @property
    def n_nodes(self) -> int:
        return len(self.nodes)

    @property
    def n_elements(self) -> int:
        return len(self.elements)

    @cached_property
    def signed_areas(self) -> np.ndarray:
        p = self.nodes[self.elements]
        d1 = p[:, 1] - p[:, 0]
        d2 = p[:, 2] - p[:, 0]
        return 0.5 * (d1[:, 0] * d2[:, 1] - d1[:, 1] * d2[:, 0])

    @cached_property
    def centroids(self) -> np.ndarray:
        return self.nodes[self.elements].mean(axis=1)

    @cached_property
    def _inverse_maps(self) -> np.ndarray:
        p = self.nodes[self.elements]
        jac = np.stack([p[:, 1] - p[:, 0], p[:, 2] - p[:, 0]], axis=2)
        return np.linalg.inv(jac)

    @cached_property
    def _centroid_tree(self) -> tuple[cKDTree, float]:
        c = self.centroids
        reach = np.linalg.norm(self.nodes[self.elements] - c[:, None, :], axis=2).max()
        return cKDTree(c), float(reach)

    def edges_with_tag(self, tag) -> np.ndarray:
        return self.boundary_edges[self.boundary_tags == int(tag)]

    def has_tag(self, tag) -> bool:
        return bool(np.any(self.boundary_tags == int(tag)))

    def loop(self, tag) -> np.ndarray:
        """Node indices of the single closed loop formed by edges of ``tag``."""
        edges = self.edges_with_tag(tag)
        if len(edges) == 0:
            raise MeshError(f"mesh has no {BoundaryTag(tag).name} edges")
        loops = chain_loops(edges)
        if len(loops) != 1:
            raise MeshError(f"{BoundaryTag(tag).name} edges form {len(loops)} loops, expected 1")
        return loops[0]

    @cached_property
    def cell_loop(self) -> np.ndarray:
        """Cell boundary nodes, counterclockwise around the cell."""
        if self.has_tag(BoundaryTag.INTERFACE):
            return self.loop(BoundaryTag.INTERFACE)
        return self.loop(BoundaryTag.HOLE)[::-1].copy()

    @property
    def is_cell_mesh(self) -> bool:
        return self.has_tag(BoundaryTag.INTERFACE) or self.has_tag(BoundaryTag.HOLE)

    def cell_center(self) -> np.ndarray:
        verts = self.nodes[self.cell_loop]
        x, y = verts[:, 0], verts[:, 1]
        xn, yn = np.roll(x, -1), np.roll(y, -1)
        cross = x * yn - xn * y
        a = cross.sum() / 2
        return np.array([((x + xn) * cross).sum(), ((y + yn) * cross).sum()]) / (6 * a)

    def elements_in(self, subdomain: SubdomainSpec) -> np.ndarray:
        """Indices of elements whose centroid lies in ``subdomain``."""
        return np.flatnonzero(subdomain.contains(self.centroids))

    def interior_edges(self) -> np.ndarray:
        edges, counts = _unique_edges(self.elements)
        return edges[counts == 2]

    def all_edges(self) -> np.ndarray:
        return _unique_edges(self.elements)[0]


def _unique_edges(elements: np.ndarray):
    e = np.concatenate([elements[:, [0, 1]], elements[:, [1, 2]], elements[:, [2, 0]]])
    e = np.sort(e, axis=1)
    return np.unique(e, axis=0, return_counts=True)


def chain_loops(edges: np.ndarray) -> list[np.ndarray]:
    """Chain directed edges into closed loops (node sequences)."""
    succ = {}
    for i, j in edges:
        i, j = int(i), int(j)
        if i in succ:
            raise MeshError(f"non-manifold boundary at node {i}")
        succ[i] = j
    targets = [int(j) for j in edges[:, 1]]
    if sorted(targets) != sorted(succ):
        raise MeshError("boundary edges do not form closed loops")
    loops = []
    seen = set()
    for start in sorted(succ):
        if start in seen:
            continue
        seq = [start]
        seen.add(start)
        cur = succ[start]
        while cur != start:
            if cur in seen:
                raise MeshError("open or self-intersecting boundary loop")
            seq.append(cur)
            seen.add(cur)
            cur = succ[cur]
        loops.append(np.array(seq, dtype=np.int64))
    return loops


def min_angle(mesh: Mesh) -> float:
    """Smallest interior angle over all elements, in degrees."""
    return float(np.degrees(_triangle_angles(mesh.nodes[mesh.elements]).min()))


# ---------------------------------------------------------------------------
# generators
# ---------------------------------------------------------------------------

def _aligned_steps(length: float, h: float, what: str) -> int:
    steps = length / h
    n = int(round(steps))
    if n < 1 or abs(steps - n) > 1e-9 * max(1.0, steps):
        raise AlignmentError(f"h={h:g} does not divide {what} (extent {length:g})")
    return n


@dataclass
class _Grid:
    half: float
    h: float
    n: int
    nodes: np.ndarray
    squares: np.ndarray  # (n*n, 4) corner ids a, b, c, d counterclockwise
    centers: np.ndarray

    @property
    def n_corner_nodes(self) -> int:
        return (self.n + 1) ** 2

    def node_id(self, i, j):
        return j * (self.n + 1) + i

    def square_triangles(self, sq_ids: np.ndarray) -> np.ndarray:
        sq = self.squares[sq_ids]
        c = self.centers[sq_ids]
        a, b, cc, d = sq.T
        slash = c[:, 0] * c[:, 1] >= 0
        t1 = np.where(slash[:, None], np.stack([a, b, cc], 1), np.stack([a, b, d], 1))
        t2 = np.where(slash[:, None], np.stack([a, cc, d], 1), np.stack([b, cc, d], 1))
        out = np.empty((2 * len(sq), 3), dtype=np.int64)
        out[0::2] = t1
        out[1::2] = t2
        return out

    def outer_edges(self) -> np.ndarray:
        n = self.n
        loop = (
            [self.node_id(i, 0) for i in range(n)]
            + [self.node_id(n, j) for j in range(n)]
            + [self.node_id(i, n) for i in range(n, 0, -1)]
            + [self.node_id(0, j) for j in range(n, 0, -1)]
        )
        loop = np.array(loop)
        return np.stack([loop, np.roll(loop, -1)], axis=1)


def _make_grid(half: float, h: float, subdomain: SubdomainSpec | None) -> _Grid:
    if half <= 0:
        raise MeshError("side_half_length must be positive")
    if h <= 0 or h > 2 * half * (1 + 1e-12):
        raise MeshError(f"h={h:g} must lie in (0, {2 * half:g}]")
    n = _aligned_steps(2 * half, h, "the domain side")
    if subdomain is not None:
        corners = subdomain.corners()
        if np.any(np.abs(corners) >= half):
            raise MeshError("subdomain must lie strictly inside the domain")
        for v in corners.ravel():
            _aligned_steps(v + half, h, f"subdomain coordinate {v:g}")
    xs = -half + h * np.arange(n + 1)
    X, Y = np.meshgrid(xs, xs)
    nodes = np.column_stack([X.ravel(), Y.ravel()])
    j, i = np.divmod(np.arange(n * n), n)
    a = j * (n + 1) + i
    squares = np.stack([a, a + 1, a + n + 2, a + n + 1], axis=1)
    centers = np.column_stack([-half + (i + 0.5) * h, -half + (j + 0.5) * h])
    return _Grid(half, h, n, nodes, squares, centers)


def generate_square_mesh(
    side_half_length: float, h: float, subdomain: SubdomainSpec | None = None
) -> Mesh:
    """Structured triangulation of ``(-L, L)^2`` with grid-aligned ``subdomain``."""
    grid = _make_grid(side_half_length, h, subdomain)
    tris = grid.square_triangles(np.arange(len(grid.squares)))
    edges = grid.outer_edges()
    return Mesh(
        nodes=grid.nodes,
        elements=tris,
        boundary_edges=edges,
        boundary_tags=np.full(len(edges), BoundaryTag.OUTER),
        element_region=np.full(len(tris), Region.EXTERIOR),
        h=h,
    )


def _polygon_vertices(polygon) -> np.ndarray:
    verts = np.asarray(getattr(polygon, "vertices", polygon), dtype=float)
    if verts.ndim != 2 or verts.shape[1] != 2 or len(verts) < 3:
        raise MeshError("polygon needs at least 3 vertices")
    if _signed_area(verts) < 0:
        verts = verts[::-1].copy()
    return verts


def _protected_nodes(grid: _Grid, subdomain: SubdomainSpec | None) -> np.ndarray:
    on_outer = np.isclose(np.abs(grid.nodes), grid.half, atol=1e-9 * grid.h).any(axis=1)
    if subdomain is None:
        return on_outer
    corners = subdomain.corners()
    on_sub = distance_to_loop(grid.nodes, corners) < 1e-9 * grid.h
    return on_outer | on_sub


def _local_delaunay(points: np.ndarray) -> np.ndarray:
    tri = Delaunay(points, qhull_options="Qbb Qc Qz")
    return tri.simplices.astype(np.int64)


def _orient_ccw(nodes, tris):
    p = nodes[tris]
    d1 = p[:, 1] - p[:, 0]
    d2 = p[:, 2] - p[:, 0]
    area = 0.5 * (d1[:, 0] * d2[:, 1] - d1[:, 1] * d2[:, 0])
    flip = area < 0
    tris = tris.copy()
    tris[flip, 1], tris[flip, 2] = tris[flip, 2], tris[flip, 1].copy()
    return tris, np.abs(area)


def _check_loop_edges(tris: np.ndarray, loop_ids: np.ndarray):
    edges = {tuple(sorted(e)) for e in _unique_edges(tris)[0].tolist()}
    for a, b in zip(loop_ids, np.roll(loop_ids, -1)):
        if tuple(sorted((int(a), int(b)))) not in edges:
            raise MeshError("cell boundary segment missing from the triangulation")


def _build_hole_mesh(half, verts, h, subdomain, clearance):
    grid = _make_grid(half, h, subdomain)
    if np.min(np.linalg.norm(np.roll(verts, -1, axis=0) - verts, axis=1)) < 1e-3 * h:
        raise MeshError("polygon edge shorter than 1e-3*h")
    if subdomain is not None and not np.all(subdomain.contains(verts, strict=True)):
        raise MeshError("polygon must lie strictly inside the subdomain")
    if np.any(np.abs(verts) >= half):
        raise MeshError("polygon must lie strictly inside the domain")

    bpts = subdivide_loop(verts, h)
    c = clearance * h
    dist = distance_to_loop(grid.nodes, verts)
    inside = points_in_polygon(grid.nodes, verts)
    removed = inside | (dist < c)
    if np.any(removed & _protected_nodes(grid, subdomain)):
        raise MeshError("polygon too close to the domain or subdomain boundary")

    sq_dist = distance_to_loop(grid.centers, verts)
    sq_inside = points_in_polygon(grid.centers, verts)
    affected = sq_inside | (sq_dist < c + h / math.sqrt(2)) | removed[grid.squares].any(axis=1)
    inner_candidates = inside & ~(dist < c)

    kept_ids = np.flatnonzero(~removed)
    new_index = np.full(len(grid.nodes), -1, dtype=np.int64)
    new_index[kept_ids] = np.arange(len(kept_ids))
    nodes = np.vstack([grid.nodes[kept_ids], bpts])
    b_ids = len(kept_ids) + np.arange(len(bpts))

    structured = new_index[grid.square_triangles(np.flatnonzero(~affected))]
    if np.any(structured < 0):
        raise MeshError("internal error: structured triangle lost a node")

    band_nodes = np.unique(grid.squares[affected].ravel())
    band_nodes = band_nodes[~removed[band_nodes]]
    local_ids = np.concatenate([new_index[band_nodes], b_ids])
    local = _local_delaunay(nodes[local_ids])
    local = local_ids[local]
    cent = nodes[local].mean(axis=1)
    ij = np.floor((cent + half) / h).astype(np.int64)
    ij = np.clip(ij, 0, grid.n - 1)
    in_band = affected[ij[:, 1] * grid.n + ij[:, 0]]
    keep = in_band & ~points_in_polygon(cent, verts)
    local, local_area = _orient_ccw(nodes, local[keep])
    # flat slivers between collinear boundary points; coverage is checked below
    local = local[local_area > 1e-12 * h * h]

    elements = np.vstack([structured, local])
    _check_loop_edges(elements, b_ids)

    outer = new_index[grid.outer_edges()]
    # HOLE edges run clockwise around the cell so the domain stays on the left
    hole_loop = b_ids[::-1]
    hole = np.stack([hole_loop, np.roll(hole_loop, -1)], axis=1)
    mesh = Mesh(
        nodes=nodes,
        elements=elements,
        boundary_edges=np.vstack([outer, hole]),
        boundary_tags=np.concatenate([np.full(len(outer), BoundaryTag.OUTER), np.full(len(hole), BoundaryTag.HOLE)]),
        element_region=np.full(len(elements), Region.EXTERIOR),
        h=h,
    )
    expected = (2 * half) ** 2 - abs(_signed_area(verts))
    total = float(mesh.signed_areas.sum())
    if abs(total - expected) > 1e-10 * expected:
        raise MeshError(f"hole mesh covers area {total!r}, expected {expected!r}")
    interior_nodes = grid.nodes[inner_candidates]
    return mesh, interior_nodes


def generate_hole_mesh(
    side_half_length: float, polygon, h: float, subdomain: SubdomainSpec | None = None
) -> Mesh:
    """Triangulate the square minus a polygonal cell; cell edges tagged HOLE."""
    return _hole_mesh_with_interior(side_half_length, polygon, h, subdomain)[0]


def _hole_mesh_with_interior(half, polygon, h, subdomain):
    verts = _polygon_vertices(polygon)
    last = None
    for clearance in _CLEARANCES:
        try:
            mesh, interior = _build_hole_mesh(half, verts, h, subdomain, clearance)
        except MeshError as exc:
            if "too close" in str(exc) or "strictly inside" in str(exc) or "shorter" in str(exc):
                raise
            last = exc
            continue
        if min_angle(mesh) > MIN_ANGLE_DEG:
            return mesh, interior, verts
        last = MeshError(f"minimum angle {min_angle(mesh):.2f} deg below {MIN_ANGLE_DEG} deg")
    raise last


def generate_cell_conforming_mesh(
    side_half_length: float, polygon, h: float, subdomain: SubdomainSpec | None = None
) -> Mesh:
    """Hole mesh plus a triangulation of the cell interior (CELL_INTERIOR).

    Node and element ordering of the exterior part is identical to
    :func:`generate_hole_mesh`; interior nodes and elements are appended.
    """
    hole, interior, verts = _hole_mesh_with_interior(side_half_length, polygon, h, subdomain)
    hole_loop = hole.loop(BoundaryTag.HOLE)
    ccw = hole_loop[::-1]
    nodes = np.vstack([hole.nodes, interior])
    inner_ids = hole.n_nodes + np.arange(len(interior))
    local_ids = np.concatenate([ccw, inner_ids])
    tris = local_ids[_local_delaunay(nodes[local_ids])]
    cent = nodes[tris].mean(axis=1)
    tris = tris[points_in_polygon(cent, verts)]
    tris, area = _orient_ccw(nodes, tris)
    flat = area <= 1e-12 * h * h
    tris, area = tris[~flat], area[~flat]
    _check_loop_edges(tris, ccw)
    if abs(area.sum() - abs(_signed_area(verts))) > 1e-10 * abs(_signed_area(verts)):
        raise MeshError("cell interior triangulation does not cover the polygon")

    outer = hole.edges_with_tag(BoundaryTag.OUTER)
    iface = np.stack([ccw, np.roll(ccw, -1)], axis=1)
    return Mesh(
        nodes=nodes,
        elements=np.vstack([hole.elements, tris]),
        boundary_edges=np.vstack([outer, iface]),
        boundary_tags=np.concatenate(
            [np.full(len(outer), BoundaryTag.OUTER), np.full(len(iface), BoundaryTag.INTERFACE)]
        ),
        element_region=np.concatenate([hole.element_region, np.full(len(tris), Region.CELL_INTERIOR)]),
        h=hole.h,
    )


def exterior_submesh(mesh: Mesh) -> tuple[Mesh, np.ndarray]:
    """Drop CELL_INTERIOR elements; the cell loop becomes a HOLE boundary.

    Returns the submesh and, for each of its nodes, the index in ``mesh``.
    """
    ext = mesh.element_region == Region.EXTERIOR
    elements = mesh.elements[ext]
    used = np.unique(elements)
    remap = np.full(mesh.n_nodes, -1, dtype=np.int64)
    remap[used] = np.arange(len(used))
    tags = mesh.boundary_tags.copy()
    edges = mesh.boundary_edges.copy()
    iface = tags == BoundaryTag.INTERFACE
    edges[iface] = edges[iface][:, ::-1]
    tags[iface] = BoundaryTag.HOLE
    sub = Mesh(
        nodes=mesh.nodes[used],
        elements=remap[elements],
        boundary_edges=remap[edges],
        boundary_tags=tags,
        element_region=mesh.element_region[ext],
        h=mesh.h,
    )
    return sub, used


def refine(mesh: Mesh) -> Mesh:
    """Uniform red refinement: every triangle split into 4 via edge midpoints."""
    edges, inverse = np.unique(
        np.sort(np.concatenate([mesh.elements[:, [0, 1]], mesh.elements[:, [1, 2]], mesh.elements[:, [2, 0]]]), axis=1),
        axis=0,
        return_inverse=True,
    )
    inverse = inverse.ravel()
    m = mesh.n_elements
    mid = mesh.n_nodes + inverse
    m01, m12, m20 = mid[:m], mid[m : 2 * m], mid[2 * m :]
    a, b, c = mesh.elements.T
    children = np.empty((4 * m, 3), dtype=np.int64)
    children[0::4] = np.stack([a, m01, m20], 1)
    children[1::4] = np.stack([m01, b, m12], 1)
    children[2::4] = np.stack([m20, m12, c], 1)
    children[3::4] = np.stack([m01, m12, m20], 1)
    nodes = np.vstack([mesh.nodes, mesh.nodes[edges].mean(axis=1)])

    lookup = {(int(p), int(q)): k for k, (p, q) in enumerate(edges)}
    bmid = np.array(
        [mesh.n_nodes + lookup[(min(i, j), max(i, j))] for i, j in mesh.boundary_edges.tolist()], dtype=np.int64
    )
    bi, bj = mesh.boundary_edges.T if len(mesh.boundary_edges) else (np.empty(0, int), np.empty(0, int))
    bedges = np.empty((2 * len(bmid), 2), dtype=np.int64)
    bedges[0::2] = np.stack([bi, bmid], 1)
    bedges[1::2] = np.stack([bmid, bj], 1)
    return Mesh(
        nodes=nodes,
        elements=children,
        boundary_edges=bedges,
        boundary_tags=np.repeat(mesh.boundary_tags, 2),
        element_region=np.repeat(mesh.element_region, 4),
        h=mesh.h / 2,
    )


def locate(mesh: Mesh, p) -> tuple[int, np.ndarray]:
    """Containing element (lowest index on ties) and barycentric coordinates."""
    k, bary = locate_many(mesh, np.asarray(p, dtype=float)[None, :])
    return int(k[0]), bary[0]


def locate_many(mesh: Mesh, points) -> tuple[np.ndarray, np.ndarray]:
    """Vectorized :func:`locate` for an ``(m, 2)`` array of points.

    Candidates come from a centroid k-d tree queried with the largest
    centroid-to-vertex distance, so every containing element is tested and the
    lowest-index tie-break is exact.
    """
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    tree, reach = mesh._centroid_tree
    inv = mesh._inverse_maps
    x0 = mesh.nodes[mesh.elements[:, 0]]
    tol = 1e-12
    elems = np.empty(len(pts), dtype=np.int64)
    bary = np.empty((len(pts), 3))
    for i, (p, cand) in enumerate(zip(pts, tree.query_ball_point(pts, reach * (1 + 1e-9) + 1e-12))):
        cand = np.sort(np.asarray(cand, dtype=np.int64))
        st = np.einsum("mij,mj->mi", inv[cand], p - x0[cand])
        lam = np.column_stack([1.0 - st[:, 0] - st[:, 1], st])
        hit = np.flatnonzero(lam.min(axis=1) >= -tol)
        if len(hit) == 0:
            raise LocateError(f"point {tuple(p)} is outside the meshed domain")
        elems[i] = cand[hit[0]]
        b = np.clip(lam[hit[0]], 0.0, 1.0)
        bary[i] = b / b.sum()
    return elems, bary


# ---------------------------------------------------------------------------
# text I/O
# ---------------------------------------------------------------------------

def dump_mesh(mesh: Mesh) -> str:
    lines = [f"MESH2 {mesh.n_nodes} {mesh.n_elements} {len(mesh.boundary_edges)}", f"# h {mesh.h!r}"]
    lines += [f"{x:.17g} {y:.17g}" for x, y in mesh.nodes]
    lines += [f"{i} {j} {k} {Region(r).name}" for (i, j, k), r in zip(mesh.elements.tolist(), mesh.element_region)]
    lines += [f"{i} {j} {BoundaryTag(t).name}" for (i, j), t in zip(mesh.boundary_edges.tolist(), mesh.boundary_tags)]
    return "\n".join(lines) + "\n"


def load_mesh(text: str) -> Mesh:
    h = float("nan")
    rows = []
    for line in text.splitlines():
        s = line.strip()
        if not s:
            continue
        if s.startswith("#"):
            parts = s[1:].split()
            if len(parts) == 2 and parts[0] == "h":
                h = float(parts[1])
            continue
        rows.append(s.split())
    if not rows or rows[0][0] != "MESH2":
        raise MeshError("missing MESH2 header")
    n_nodes, n_elems, n_bedges = (int(v) for v in rows[0][1:4])
    body = rows[1:]
    if len(body) != n_nodes + n_elems + n_bedges:
        raise MeshError("mesh file length does not match its header")
    nodes = np.array([[float(a), float(b)] for a, b in body[:n_nodes]])
    er = body[n_nodes : n_nodes + n_elems]
    elements = np.array([[int(v) for v in r[:3]] for r in er], dtype=np.int64).reshape(-1, 3)
    region = np.array([Region[r[3]] for r in er], dtype=np.int64)
    br = body[n_nodes + n_elems :]
    bedges = np.array([[int(r[0]), int(r[1])] for r in br], dtype=np.int64).reshape(-1, 2)
    tags = np.array([BoundaryTag[r[2]] for r in br], dtype=np.int64)
    if math.isnan(h):
        h = float(np.median(np.linalg.norm(nodes[bedges[:, 1]] - nodes[bedges[:, 0]], axis=1)))
    return Mesh(nodes, elements, bedges, tags, region, h)
