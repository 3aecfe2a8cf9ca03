"""Free-space Green's functions and a finite-element singularity study.

The analytic functions are oracles: a point force has no finite-energy
solution, so the discrete energy of a point-loaded problem keeps growing under
refinement while a traction-loaded hole problem settles down.
"""
from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass

import numpy as np

from .cellmodel import CellSpec, polygonize
from .elasticity import MaterialField, PointLoad, assemble_point_loads, assemble_traction, build_system, solve, strain_energy
from .errors import CellForceError, SingularityError
from .mesh import generate_hole_mesh, generate_square_mesh, refine

__all__ = [
    "surface_constant",
    "laplace_green",
    "kelvin_matrix",
    "kelvin_green",
    "annulus_gradient_energy_2d",
    "StudyRow",
    "fem_singularity_study",
    "fem_hole_study",
    "study_csv",
]


def surface_constant(d: int, convention: str = "printed") -> float:
    """Constant ``a_d`` in the d >= 3 Laplace Green's function.

    ``"printed"`` is ``2 pi^((d-1)/2) / Gamma((d-1)/2)``.  ``"standard"`` is
    the unit-ball volume ``pi^(d/2) / Gamma(d/2 + 1)``, which gives the
    textbook ``1/(4 pi r)`` in three dimensions.  The printed constant gives
    ``1/(6 pi r)`` there instead.
    """
    if d < 2:
        raise CellForceError(f"dimension must be >= 2, got {d}")
    if convention == "printed":
        return 2 * math.pi ** ((d - 1) / 2) / math.gamma((d - 1) / 2)
    if convention == "standard":
        return math.pi ** (d / 2) / math.gamma(d / 2 + 1)
    raise CellForceError(f"unknown convention {convention!r}")


def laplace_green(x, d: int | None = None, convention: str = "printed") -> float:
    """Fundamental solution of ``-Laplace u = delta`` in ``d`` dimensions."""
    x = np.asarray(x, dtype=float).ravel()
    d = len(x) if d is None else int(d)
    if len(x) != d:
        raise CellForceError(f"point has {len(x)} components, expected {d}")
    r = float(np.linalg.norm(x))
    if r == 0.0:
        raise SingularityError("Green's function is singular at the source point")
    if d == 2:
        return -math.log(r) / (2 * math.pi)
    a = surface_constant(d, convention)
    return 1.0 / (d * (d - 2) * a * r ** (d - 2))


def kelvin_matrix(x, mu: float, nu: float) -> np.ndarray:
    """3x3 Kelvin tensor ``G_ij = ((3-4nu) delta_ij + x_i x_j/r^2) / (16 pi mu (1-nu) r)``."""
    if not mu > 0:
        raise CellForceError("shear modulus must be positive")
    if not 0 <= nu < 0.5:
        raise CellForceError("Poisson ratio must lie in [0, 0.5)")
    x = np.asarray(x, dtype=float).ravel()
    if x.shape != (3,):
        raise CellForceError("Kelvin solution needs a 3-vector")
    r = float(np.linalg.norm(x))
    if r == 0.0:
        raise SingularityError("Kelvin solution is singular at the source point")
    return ((3 - 4 * nu) * np.eye(3) + np.outer(x, x) / r**2) / (16 * math.pi * mu * (1 - nu) * r)


def kelvin_green(x, mu: float, nu: float, F) -> np.ndarray:
    """Displacement at ``x`` due to a point force ``F`` at the origin."""
    return kelvin_matrix(x, mu, nu) @ np.asarray(F, dtype=float)


def annulus_gradient_energy_2d(eps: float, r_outer: float) -> float:
    """``int |grad u|^2`` of the 2D Laplace Green's function over eps < |x| < r_outer."""
    if not 0 < eps <= r_outer:
        raise CellForceError("need 0 < eps <= r_outer")
    return math.log(r_outer / eps) / (2 * math.pi)


@dataclass(frozen=True)
class StudyRow:
    h: float
    energy: float  # (int sigma:eps)^(1/2)
    seminorm_increment: float  # energy minus the previous level's (nan on the first)


def _rows(hs, energies):
    inc = [float("nan")] + [b - a for a, b in zip(energies, energies[1:])]
    return [StudyRow(float(h), float(e), float(d)) for h, e, d in zip(hs, energies, inc)]


def _run_levels(mesh, mat, rhs_of, levels):
    hs, energies = [], []
    for lev in range(levels):
        field = solve(build_system(mesh, mat, rhs_of(mesh)), mesh=mesh)
        hs.append(mesh.h)
        energies.append(math.sqrt(2 * strain_energy(field, mat)))
        if lev < levels - 1:
            mesh = refine(mesh)
    return _rows(hs, energies)


def fem_singularity_study(
    h0: float = 1.0,
    levels: int = 5,
    kappa: float = 10.0,
    E: float = 1.0,
    nu: float = 0.3,
    side_half_length: float = 10.0,
    force=(1.0, 0.0),
) -> list[StudyRow]:
    """Energy seminorm of a unit point force at the origin on nested meshes.

    The origin is a node of every level, so the load is applied to the same
    node throughout.  A finite-energy solution does not exist, so the values
    grow without bound (logarithmically) as ``h`` shrinks.
    """
    mat = MaterialField(E_exterior=E, E_interior=E, nu=nu, kappa=kappa)
    load = [PointLoad((0.0, 0.0), tuple(force))]
    mesh = generate_square_mesh(side_half_length, h0)
    return _run_levels(mesh, mat, lambda m: assemble_point_loads(m, load), levels)


def fem_hole_study(
    h0: float = 1.0,
    levels: int = 5,
    radius: float = 3.0,
    n_polygon: int = 64,
    kappa: float = 10.0,
    E: float = 1.0,
    nu: float = 0.3,
    side_half_length: float = 10.0,
) -> list[StudyRow]:
    """Same study with the load spread as a unit-total traction over a fixed hole."""
    mat = MaterialField(E_exterior=E, E_interior=E, nu=nu, kappa=kappa)
    poly = polygonize(CellSpec((0.0, 0.0), radius), n_polygon, equal_area=False)
    mesh = generate_hole_mesh(side_half_length, poly, h0)
    return _run_levels(mesh, mat, lambda m: assemble_traction(m, 1.0 / poly.perimeter), levels)


def study_csv(rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["h", "energy", "seminorm_increment"])
    for r in rows:
        w.writerow([repr(v) if math.isfinite(v) else "" for v in (r.h, r.energy, r.seminorm_increment)])
    return buf.getvalue()
