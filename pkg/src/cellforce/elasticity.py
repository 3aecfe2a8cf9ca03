"""Plane-strain linear elasticity with P1 triangles and a Robin outer boundary.

Degrees of freedom are interleaved: node ``k`` owns dofs ``2k`` (x) and
``2k + 1`` (y).
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .errors import AssemblyError, LocateError, SolverError
from .mesh import BoundaryTag, Mesh, Region, locate_many

__all__ = [
    "MaterialField",
    "PointLoad",
    "LinearSystem",
    "DisplacementField",
    "plane_strain_matrix",
    "shape_gradients",
    "element_matrices",
    "assemble_stiffness",
    "assemble_robin",
    "assemble_point_loads",
    "assemble_body_force",
    "assemble_traction",
    "assemble_edge_traction",
    "build_system",
    "solve",
    "gradients",
    "evaluate",
    "strains",
    "stresses",
    "element_strain_stress",
    "strain_energy",
    "energy_norm",
    "robin_quadratic_form",
    "boundary_momentum_integral",
    "dump_field",
    "load_field",
    "dump_stress",
]


@dataclass(frozen=True)
class MaterialField:
    E_exterior: float = 1.0
    E_interior: float = 1.0
    nu: float = 0.49
    kappa: float = 10.0

    def __post_init__(self):
        if not self.E_exterior > 0:
            raise ValueError("E_exterior must be positive")
        if not self.E_interior >= 0:
            raise ValueError("E_interior must be non-negative")
        if not 0 <= self.nu < 0.5:
            raise ValueError("Poisson ratio must lie in [0, 0.5)")
        if not self.kappa >= 0:
            raise ValueError("kappa must be non-negative")

    def element_moduli(self, mesh: Mesh) -> np.ndarray:
        return np.where(mesh.element_region == Region.CELL_INTERIOR, self.E_interior, self.E_exterior)


@dataclass(frozen=True)
class PointLoad:
    location: tuple
    force: tuple


@dataclass(frozen=True, eq=False)
class LinearSystem:
    matrix: sp.csr_matrix
    rhs: np.ndarray
    n_nodes: int
    robin: bool = False  # True once a kappa > 0 boundary term is included

    def __add__(self, other: "LinearSystem") -> "LinearSystem":
        return LinearSystem(self.matrix + other.matrix, self.rhs + other.rhs, self.n_nodes, self.robin or other.robin)


@dataclass(frozen=True, eq=False)
class DisplacementField:
    mesh: Mesh
    values: np.ndarray  # (n_nodes, 2)

    def __post_init__(self):
        vals = np.asarray(self.values, dtype=float).reshape(self.mesh.n_nodes, 2)
        if not np.all(np.isfinite(vals)):
            raise SolverError("displacement field has non-finite entries")
        object.__setattr__(self, "values", vals)

    def __mul__(self, alpha: float) -> "DisplacementField":
        return DisplacementField(self.mesh, alpha * self.values)

    __rmul__ = __mul__

    def __add__(self, other: "DisplacementField") -> "DisplacementField":
        return DisplacementField(self.mesh, self.values + other.values)

    def __sub__(self, other: "DisplacementField") -> "DisplacementField":
        return DisplacementField(self.mesh, self.values - other.values)

    @property
    def flat(self) -> np.ndarray:
        return self.values.ravel()


# ---------------------------------------------------------------------------
# element level
# ---------------------------------------------------------------------------

def plane_strain_matrix(E: float, nu: float) -> np.ndarray:
    """Voigt constitutive matrix for (eps_xx, eps_yy, gamma_xy)."""
    c = E / ((1 + nu) * (1 - 2 * nu))
    return c * np.array([[1 - nu, nu, 0.0], [nu, 1 - nu, 0.0], [0.0, 0.0, (1 - 2 * nu) / 2]])


def shape_gradients(mesh: Mesh) -> tuple[np.ndarray, np.ndarray]:
    """Constant gradients of the three P1 basis functions per element.

    Returns ``(grads, areas)`` with ``grads`` of shape (M, 3, 2).
    """
    p = mesh.nodes[mesh.elements]
    area = mesh.signed_areas
    x, y = p[..., 0], p[..., 1]
    b = np.stack([y[:, 1] - y[:, 2], y[:, 2] - y[:, 0], y[:, 0] - y[:, 1]], axis=1)
    c = np.stack([x[:, 2] - x[:, 1], x[:, 0] - x[:, 2], x[:, 1] - x[:, 0]], axis=1)
    with np.errstate(divide="ignore", invalid="ignore"):
        grads = np.stack([b, c], axis=2) / (2 * area)[:, None, None]
    return grads, area


def _strain_operator(grads: np.ndarray) -> np.ndarray:
    m = len(grads)
    B = np.zeros((m, 3, 6))
    B[:, 0, 0::2] = grads[:, :, 0]
    B[:, 1, 1::2] = grads[:, :, 1]
    B[:, 2, 0::2] = grads[:, :, 1]
    B[:, 2, 1::2] = grads[:, :, 0]
    return B


def element_matrices(mesh: Mesh, mat: MaterialField) -> np.ndarray:
    """(M, 6, 6) element stiffness matrices by exact one-point integration."""
    grads, area = shape_gradients(mesh)
    if np.any(area <= 0):
        bad = int(np.flatnonzero(area <= 0)[0])
        raise AssemblyError(f"element {bad} is inverted or degenerate (area {area[bad]:.3e})")
    B = _strain_operator(grads)
    D1 = plane_strain_matrix(1.0, mat.nu)
    E = mat.element_moduli(mesh)
    return np.einsum("mki,kl,mlj->mij", B, D1, B) * (E * area)[:, None, None]


def _element_dofs(elements: np.ndarray) -> np.ndarray:
    dofs = np.empty((len(elements), 6), dtype=np.int64)
    dofs[:, 0::2] = 2 * elements
    dofs[:, 1::2] = 2 * elements + 1
    return dofs


# ---------------------------------------------------------------------------
# global assembly
# ---------------------------------------------------------------------------

def assemble_stiffness(mesh: Mesh, mat: MaterialField) -> LinearSystem:
    ke = element_matrices(mesh, mat)
    dofs = _element_dofs(mesh.elements)
    rows = np.repeat(dofs, 6, axis=1).ravel()
    cols = np.tile(dofs, (1, 6)).ravel()
    n = 2 * mesh.n_nodes
    K = sp.coo_matrix((ke.ravel(), (rows, cols)), shape=(n, n)).tocsr()
    K.sum_duplicates()
    return LinearSystem(K, np.zeros(n), mesh.n_nodes)


def _edge_geometry(mesh: Mesh, edges: np.ndarray):
    a = mesh.nodes[edges[:, 0]]
    b = mesh.nodes[edges[:, 1]]
    d = b - a
    length = np.hypot(d[:, 0], d[:, 1])
    # right-hand normal: out of the domain for consistently oriented boundaries
    normal = np.column_stack([d[:, 1], -d[:, 0]]) / length[:, None]
    return length, normal, 0.5 * (a + b)


def assemble_robin(mesh: Mesh, kappa: float) -> LinearSystem:
    """Boundary mass term ``kappa * int phi_i phi_j`` on OUTER edges."""
    n = 2 * mesh.n_nodes
    if kappa == 0:
        return LinearSystem(sp.csr_matrix((n, n)), np.zeros(n), mesh.n_nodes)
    edges = mesh.edges_with_tag(BoundaryTag.OUTER)
    length, _, _ = _edge_geometry(mesh, edges)
    local = np.array([[2.0, 1.0], [1.0, 2.0]]) / 6.0
    rows, cols, vals = [], [], []
    for comp in (0, 1):
        d = 2 * edges + comp
        rows.append(np.repeat(d, 2, axis=1).ravel())
        cols.append(np.tile(d, (1, 2)).ravel())
        vals.append((kappa * length[:, None, None] * local[None]).ravel())
    M = sp.coo_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))), shape=(n, n)).tocsr()
    M.sum_duplicates()
    return LinearSystem(M, np.zeros(n), mesh.n_nodes, robin=True)


def assemble_point_loads(mesh: Mesh, loads) -> np.ndarray:
    """Right-hand side of Dirac point forces, distributed by barycentric weights."""
    rhs = np.zeros(2 * mesh.n_nodes)
    loads = list(loads)
    if not loads:
        return rhs
    locs = np.array([np.asarray(ld.location, dtype=float) for ld in loads])
    forces = np.array([np.asarray(ld.force, dtype=float) for ld in loads])
    try:
        elems, bary = locate_many(mesh, locs)
    except LocateError as exc:
        raise AssemblyError(f"point load cannot be located: {exc}") from exc
    nodes = mesh.elements[elems]  # (k, 3)
    np.add.at(rhs, 2 * nodes, bary * forces[:, :1])
    np.add.at(rhs, 2 * nodes + 1, bary * forces[:, 1:])
    return rhs


def assemble_body_force(mesh: Mesh, f) -> np.ndarray:
    """Load vector of a smooth body force ``f((k, 2) points) -> (k, 2)``.

    Uses the three-point edge-midpoint rule, which is exact for quadratic
    integrands and therefore for linear ``f`` times the P1 basis.
    """
    rhs = np.zeros(2 * mesh.n_nodes)
    p = mesh.nodes[mesh.elements]
    w = mesh.signed_areas / 3.0
    for a, b in ((0, 1), (1, 2), (2, 0)):
        fv = np.asarray(f(0.5 * (p[:, a] + p[:, b])), dtype=float)
        # at the midpoint of edge (a, b) only phi_a and phi_b are nonzero, both 1/2
        for node in (a, b):
            np.add.at(rhs, 2 * mesh.elements[:, node], 0.5 * w * fv[:, 0])
            np.add.at(rhs, 2 * mesh.elements[:, node] + 1, 0.5 * w * fv[:, 1])
    return rhs


def assemble_edge_traction(mesh: Mesh, tag, traction) -> np.ndarray:
    """Consistent load of a traction that is constant on each edge.

    ``traction`` is a constant 2-vector or a callable
    ``(midpoints, outward_normals) -> (k, 2)`` evaluated per edge.
    """
    edges = mesh.edges_with_tag(tag)
    length, normal, mid = _edge_geometry(mesh, edges)
    t = traction(mid, normal) if callable(traction) else np.broadcast_to(np.asarray(traction, float), mid.shape)
    half = 0.5 * length[:, None] * t
    rhs = np.zeros(2 * mesh.n_nodes)
    for end in (0, 1):
        np.add.at(rhs, 2 * edges[:, end], half[:, 0])
        np.add.at(rhs, 2 * edges[:, end] + 1, half[:, 1])
    return rhs


def assemble_traction(mesh: Mesh, P: float, tag=BoundaryTag.HOLE) -> np.ndarray:
    """Load ``sigma . n = P n`` with ``n`` the unit normal out of the domain.

    On HOLE edges ``n`` points into the cell, so P > 0 pulls the hole inward.
    """
    edges = mesh.edges_with_tag(tag)
    if len(edges) == 0:
        raise AssemblyError(f"mesh has no {BoundaryTag(tag).name} edges")
    _, normal, mid = _edge_geometry(mesh, edges)
    if int(tag) == BoundaryTag.HOLE:
        center = mesh.cell_center()
        if np.any(np.einsum("kd,kd->k", normal, center - mid) <= 0):
            raise AssemblyError("HOLE edge orientation inconsistent with the cell center")
    return assemble_edge_traction(mesh, tag, lambda m, n: P * n)


def build_system(mesh: Mesh, mat: MaterialField, rhs) -> LinearSystem:
    K = assemble_stiffness(mesh, mat) + assemble_robin(mesh, mat.kappa)
    return LinearSystem(K.matrix, np.asarray(rhs, dtype=float), mesh.n_nodes, K.robin)


# ---------------------------------------------------------------------------
# solve
# ---------------------------------------------------------------------------

DIRECT_SOLVE_LIMIT = 20_000  # free dofs; larger systems use AMG-preconditioned CG
AMG_MAXITER = 1000


def solve(
    system: LinearSystem,
    tol: float = 1e-10,
    fixed_dofs=None,
    mesh: Mesh | None = None,
    method: str = "auto",
):
    """Solve ``K u = f`` and check the relative residual against ``tol``.

    ``method`` is ``"direct"`` (sparse LU with iterative refinement), ``"amg"``
    (conjugate gradients preconditioned by smoothed-aggregation multigrid) or
    ``"auto"``, which picks the direct solver up to ``DIRECT_SOLVE_LIMIT``
    free dofs.  Dofs whose matrix row is identically zero (nodes touched only
    by zero-stiffness elements) are pinned to zero.  Returns a
    :class:`DisplacementField` when ``mesh`` is given, else the raw vector.
    """
    if method not in ("auto", "direct", "amg"):
        raise ValueError(f"unknown solver method {method!r}")
    A = system.matrix.tocsr()
    f = system.rhs
    n = A.shape[0]
    row_nnz = np.abs(A).sum(axis=1).A1
    free = row_nnz > 0
    if fixed_dofs is not None:
        free[np.asarray(fixed_dofs, dtype=np.int64)] = False
    elif not system.robin:
        raise SolverError("no Robin term and no fixed dofs: rigid-body modes make the system singular")
    if np.any(f[~free] != 0) and fixed_dofs is None:
        raise SolverError("load applied to a dof without stiffness")
    u = np.zeros(n)
    fnorm = np.linalg.norm(f)
    if fnorm == 0:
        return _wrap(u, mesh, system)
    idx = np.flatnonzero(free)
    Aff = A[idx][:, idx]
    if np.any(Aff.diagonal() <= 0):
        raise SolverError("matrix is not positive definite (non-positive diagonal)")
    b = f[idx]
    if method == "auto":
        method = "direct" if len(idx) <= DIRECT_SOLVE_LIMIT else "amg"
    if method == "direct":
        x = _solve_direct(Aff.tocsc(), b, fnorm, tol)
    else:
        x = _solve_amg(Aff.tocsr(), b, fnorm, tol, _near_null_space(mesh, system.n_nodes)[idx])
    u[idx] = x
    full_res = np.linalg.norm(A @ u - f) / fnorm
    if fixed_dofs is None and full_res > tol:
        raise SolverError(f"relative residual {full_res:.3e} exceeds {tol:.1e}", residual=full_res)
    return _wrap(u, mesh, system)


def _solve_direct(A, b, fnorm, tol):
    try:
        lu = spla.splu(A, permc_spec="MMD_AT_PLUS_A")
    except RuntimeError as exc:
        raise SolverError(f"factorization failed: {exc}") from exc
    x = lu.solve(b)
    for _ in range(3):
        r = b - A @ x
        rel = np.linalg.norm(r) / fnorm
        if rel <= tol:
            break
        x += lu.solve(r)
    else:
        rel = np.linalg.norm(b - A @ x) / fnorm
    if not np.isfinite(rel) or rel > tol:
        raise SolverError(f"relative residual {rel:.3e} exceeds {tol:.1e}", residual=rel)
    return x


def _near_null_space(mesh, n_nodes):
    """Rigid-body modes (two translations and, with coordinates, a rotation)."""
    B = np.zeros((2 * n_nodes, 3 if mesh is not None else 2))
    B[0::2, 0] = 1.0
    B[1::2, 1] = 1.0
    if mesh is not None:
        c = mesh.nodes - mesh.nodes.mean(axis=0)
        B[0::2, 2] = -c[:, 1]
        B[1::2, 2] = c[:, 0]
    return B


def _solve_amg(A, b, fnorm, tol, B):
    import pyamg

    # energy-minimising prolongation: the plain Jacobi-smoothed variant stalls
    # on nearly incompressible square meshes
    ml = pyamg.smoothed_aggregation_solver(
        A, B=B, symmetry="hermitian", strength=("symmetric", {"theta": 0.0}), smooth=("energy", {}), max_coarse=500
    )
    # pyamg measures the residual against ||b||; aim a little below the contract
    x = ml.solve(b, tol=0.1 * tol * fnorm / np.linalg.norm(b), accel="cg", maxiter=AMG_MAXITER)
    rel = np.linalg.norm(b - A @ x) / fnorm
    if not np.isfinite(rel) or rel > tol:
        raise SolverError(f"multigrid CG stalled at relative residual {rel:.3e}", residual=rel)
    return x


def _wrap(u, mesh, system):
    if mesh is None:
        return u
    if mesh.n_nodes != system.n_nodes:
        raise SolverError("mesh does not match the linear system")
    return DisplacementField(mesh, u.reshape(-1, 2))


# ---------------------------------------------------------------------------
# post-processing
# ---------------------------------------------------------------------------

def gradients(field: DisplacementField) -> np.ndarray:
    """Per-element displacement gradient ``J[m, i, j] = d u_i / d x_j``."""
    grads, _ = shape_gradients(field.mesh)
    ue = field.values[field.mesh.elements]  # (M, 3, 2)
    return np.einsum("mki,mkj->mij", ue, grads)


def evaluate(field: DisplacementField, points) -> np.ndarray:
    """P1 interpolant of the field at arbitrary ``(m, 2)`` points."""
    elems, bary = locate_many(field.mesh, points)
    return np.einsum("mk,mkc->mc", bary, field.values[field.mesh.elements[elems]])


def strains(field: DisplacementField) -> np.ndarray:
    J = gradients(field)
    return 0.5 * (J + np.transpose(J, (0, 2, 1)))


def stresses(field: DisplacementField, mat: MaterialField, eps: np.ndarray | None = None) -> np.ndarray:
    """Hooke's law ``E/(1+nu) (eps + tr(eps) nu/(1-2nu) I)`` per element."""
    if eps is None:
        eps = strains(field)
    E = mat.element_moduli(field.mesh)
    tr = eps[:, 0, 0] + eps[:, 1, 1]
    sig = eps + (tr * mat.nu / (1 - 2 * mat.nu))[:, None, None] * np.eye(2)[None]
    return (E / (1 + mat.nu))[:, None, None] * sig


def element_strain_stress(field: DisplacementField, mat: MaterialField, element: int):
    mesh = field.mesh
    grads, _ = shape_gradients(mesh)
    g = grads[element]
    ue = field.values[mesh.elements[element]]
    J = ue.T @ g
    eps = 0.5 * (J + J.T)
    E = mat.element_moduli(mesh)[element]
    sigma = E / (1 + mat.nu) * (eps + np.trace(eps) * mat.nu / (1 - 2 * mat.nu) * np.eye(2))
    return eps, sigma


def _energy_density(field, mat, elements):
    eps = strains(field)
    sig = stresses(field, mat, eps)
    dens = np.einsum("mij,mij->m", sig, eps) * field.mesh.signed_areas
    if elements is None:
        return dens
    return dens[np.asarray(elements, dtype=np.int64)]


def strain_energy(field: DisplacementField, mat: MaterialField, elements=None) -> float:
    """``sum 1/2 sigma:eps * area`` over the element subset (all when None)."""
    return 0.5 * float(np.sum(_energy_density(field, mat, elements)))


def robin_quadratic_form(field: DisplacementField, kappa: float) -> float:
    """``int_{outer} kappa |u|^2`` evaluated exactly for the P1 trace."""
    mesh = field.mesh
    edges = mesh.edges_with_tag(BoundaryTag.OUTER)
    length, _, _ = _edge_geometry(mesh, edges)
    a = field.values[edges[:, 0]]
    b = field.values[edges[:, 1]]
    per_edge = (a * a + a * b + b * b).sum(axis=1) * length / 3.0
    return kappa * float(per_edge.sum())


def energy_norm(field: DisplacementField, mat: MaterialField, kappa: float | None = None, elements=None) -> float:
    """``(int sigma:eps + int_{outer} kappa |u|^2)^(1/2)``."""
    if kappa is None:
        kappa = mat.kappa
    total = float(np.sum(_energy_density(field, mat, elements))) + robin_quadratic_form(field, kappa)
    return float(np.sqrt(max(total, 0.0)))


def boundary_momentum_integral(field: DisplacementField, kappa: float) -> np.ndarray:
    """``int_{outer} kappa u`` (trapezoid rule, exact for P1 traces)."""
    mesh = field.mesh
    edges = mesh.edges_with_tag(BoundaryTag.OUTER)
    length, _, _ = _edge_geometry(mesh, edges)
    avg = 0.5 * (field.values[edges[:, 0]] + field.values[edges[:, 1]])
    return kappa * (avg * length[:, None]).sum(axis=0)


# ---------------------------------------------------------------------------
# text I/O
# ---------------------------------------------------------------------------

def dump_field(field: DisplacementField) -> str:
    lines = [f"FIELD2 {field.mesh.n_nodes}"]
    lines += [f"{ux:.17g} {uy:.17g}" for ux, uy in field.values]
    return "\n".join(lines) + "\n"


def load_field(text: str, mesh: Mesh) -> DisplacementField:
    rows = [r.split() for r in text.splitlines() if r.strip()]
    if not rows or rows[0][0] != "FIELD2":
        raise ValueError("missing FIELD2 header")
    n = int(rows[0][1])
    if n != mesh.n_nodes or len(rows) - 1 != n:
        raise ValueError("field size does not match the mesh")
    return DisplacementField(mesh, np.array([[float(a), float(b)] for a, b in rows[1:]]))


def dump_stress(field: DisplacementField, mat: MaterialField) -> str:
    sig = stresses(field, mat)
    lines = [f"STRESS2 {field.mesh.n_elements}"]
    lines += [f"{s[0, 0]:.17g} {s[1, 1]:.17g} {s[0, 1]:.17g}" for s in sig]
    return "\n".join(lines) + "\n"
