import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from cellforce.errors import CellForceError, SingularityError
from cellforce.greens import (
    annulus_gradient_energy_2d,
    fem_hole_study,
    fem_singularity_study,
    kelvin_green,
    kelvin_matrix,
    laplace_green,
    study_csv,
    surface_constant,
)

LN2_OVER_2PI = math.log(2) / (2 * math.pi)

vectors3 = st.tuples(*[st.floats(-10, 10)] * 3).filter(lambda v: np.linalg.norm(v) > 1e-3)


class TestLaplaceGreen:
    def test_unit_distance_2d(self):
        assert laplace_green((1.0, 0.0)) == 0.0

    def test_inverse_e_2d(self):
        assert laplace_green((math.exp(-1), 0.0)) == pytest.approx(1 / (2 * math.pi), rel=1e-15)

    def test_source_is_singular(self):
        with pytest.raises(SingularityError):
            laplace_green((0.0, 0.0))
        with pytest.raises(ValueError):
            laplace_green((0.0, 0.0, 0.0))

    @settings(max_examples=50)
    @given(vectors3)
    def test_ratio_3d(self, x):
        x = np.array(x)
        assert laplace_green(x) / laplace_green(2 * x) == pytest.approx(2.0, rel=1e-12)

    def test_printed_constant_in_3d(self):
        # the constant as written gives 1/(6 pi r); the unit-ball volume gives 1/(4 pi r)
        assert surface_constant(3, "printed") == pytest.approx(2 * math.pi, rel=1e-15)
        assert laplace_green((2.0, 0.0, 0.0)) == pytest.approx(1 / (6 * math.pi * 2), rel=1e-14)
        assert laplace_green((2.0, 0.0, 0.0), convention="standard") == pytest.approx(1 / (4 * math.pi * 2), rel=1e-14)

    @pytest.mark.parametrize("d", [3, 4, 5, 6])
    def test_standard_constant_is_unit_ball_volume(self, d):
        # volume of the unit d-ball by the recursion V_d = 2 pi / d * V_{d-2}
        volumes = {1: 2.0, 2: math.pi}
        for k in range(3, d + 1):
            volumes[k] = 2 * math.pi / k * volumes[k - 2]
        assert surface_constant(d, "standard") == pytest.approx(volumes[d], rel=1e-13)

    def test_gamma_accuracy(self):
        assert math.gamma(0.5) == pytest.approx(math.sqrt(math.pi), rel=1e-15)
        assert math.gamma(10) == pytest.approx(362880.0, rel=1e-15)

    def test_bad_inputs(self):
        with pytest.raises(CellForceError):
            surface_constant(1)
        with pytest.raises(CellForceError):
            surface_constant(3, "other")
        with pytest.raises(CellForceError):
            laplace_green((1.0, 2.0), d=3)

    def test_harmonic_2d(self, rng):
        errors = []
        for delta in (1e-2, 5e-3):
            worst = 0.0
            for x in rng.uniform(-3, 3, size=(100, 2)):
                if np.linalg.norm(x) < 0.5:
                    x = x + 1.0
                center = laplace_green(x)
                avg = np.mean([laplace_green(x + s) for s in delta * np.array([[1, 0], [-1, 0], [0, 1], [0, -1]])])
                worst = max(worst, abs(avg - center))
            errors.append(worst)
        # the 4-point average deviates by O(delta^4) for harmonic functions
        # (the delta^2 Laplacian term vanishes), well inside O(delta^2)
        assert errors[0] <= 1e-2**2
        assert errors[1] < errors[0]


class TestKelvin:
    def test_example(self):
        u = kelvin_green((1.0, 0.0, 0.0), 1.0, 0.0, (1.0, 0.0, 0.0))
        np.testing.assert_allclose(u, [1 / (4 * math.pi), 0.0, 0.0], atol=1e-16)

    @settings(max_examples=50)
    @given(vectors3, st.floats(0.1, 10), st.floats(0, 0.49))
    def test_symmetric_and_scaling(self, x, mu, nu):
        x = np.array(x)
        G = kelvin_matrix(x, mu, nu)
        assert np.abs(G - G.T).max() <= 1e-15 * np.abs(G).max()
        F = np.array([0.3, -1.0, 2.0])
        np.testing.assert_allclose(kelvin_green(2 * x, mu, nu, F), kelvin_green(x, mu, nu, F) / 2, rtol=1e-12, atol=1e-300)

    def test_permutation_symmetry(self, rng):
        for _ in range(20):
            x = rng.normal(size=3)
            perm = rng.permutation(3)
            for axis in range(3):
                F = np.eye(3)[axis]
                u = kelvin_green(x, 1.0, 0.25, F)
                up = kelvin_green(x[perm], 1.0, 0.25, F[perm])
                np.testing.assert_allclose(up, u[perm], rtol=1e-13)

    def test_singular(self):
        with pytest.raises(SingularityError):
            kelvin_green((0.0, 0.0, 0.0), 1.0, 0.3, (1.0, 0.0, 0.0))

    def test_invalid_parameters(self):
        with pytest.raises(CellForceError):
            kelvin_matrix((1.0, 0.0, 0.0), 0.0, 0.3)
        with pytest.raises(CellForceError):
            kelvin_matrix((1.0, 0.0, 0.0), 1.0, 0.5)
        with pytest.raises(CellForceError):
            kelvin_matrix((1.0, 0.0), 1.0, 0.3)


class TestAnnulus:
    def test_empty(self):
        assert annulus_gradient_energy_2d(2.0, 2.0) == 0

    def test_plug_in(self):
        assert annulus_gradient_energy_2d(math.exp(-1), 1.0) == pytest.approx(1 / (2 * math.pi), rel=1e-15)

    @settings(max_examples=200)
    @given(st.floats(1e-8, 1.0), st.floats(1.0, 100.0))
    def test_halving_adds_ln2(self, eps, r):
        diff = annulus_gradient_energy_2d(eps / 2, r) - annulus_gradient_energy_2d(eps, r)
        assert abs(diff - LN2_OVER_2PI) <= 1e-14
        assert LN2_OVER_2PI == pytest.approx(0.110318, abs=5e-7)

    def test_invalid(self):
        with pytest.raises(CellForceError):
            annulus_gradient_energy_2d(0.0, 1.0)
        with pytest.raises(CellForceError):
            annulus_gradient_energy_2d(2.0, 1.0)


class TestStudies:
    def test_point_load_energy_grows(self):
        rows = fem_singularity_study(h0=1.0, levels=4)
        energies = [r.energy for r in rows]
        assert [r.h for r in rows] == [1.0, 0.5, 0.25, 0.125]
        assert all(b > a for a, b in zip(energies, energies[1:]))
        assert math.isnan(rows[0].seminorm_increment)

    def test_stiff_boundary_same_trend(self):
        energies = [r.energy for r in fem_singularity_study(h0=1.0, levels=4, kappa=1e6)]
        assert all(b > a for a, b in zip(energies, energies[1:]))

    def test_hole_energy_converges(self):
        rows = fem_hole_study(h0=1.0, levels=4)
        inc = [abs(r.seminorm_increment) for r in rows[1:]]
        assert all(b < a for a, b in zip(inc, inc[1:]))

    def test_csv(self):
        rows = fem_singularity_study(h0=2.0, levels=2)
        text = study_csv(rows)
        lines = text.splitlines()
        assert lines[0] == "h,energy,seminorm_increment"
        assert lines[1].endswith(",")
        assert len(lines) == 3
