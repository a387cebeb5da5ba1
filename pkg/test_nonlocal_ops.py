import math

import numpy as np
import pytest

from asymptotics import cone_pair
from domain import build_box2d, build_interval, distance_field, inradius_nodes
from models import MaskRule
from nonlocal_ops import (
    LogEnergy,
    OperatorOverflowError,
    ScalarField,
    ScaledField,
    difference_quotients,
    frac_p_laplacian,
    gagliardo,
    holder_seminorm,
    linf,
    linf_minus,
    linf_plus,
    log_operator,
)
from oracles import finite_difference_gradient, naive_energy

def _cone(grid, s=0.5, t=0.5, theta=0.5):
    apex = int(inradius_nodes(grid)[0])
    phi, _ = cone_pair(grid, apex, apex, s, t, theta)
    return phi, apex

class TestScalarField:
    def test_length_must_match(self, interval8):
        with pytest.raises(ValueError):
            ScalarField(grid=interval8, values=np.zeros(7))

    def test_values_must_be_finite(self, interval8):
        with pytest.raises(ValueError):
            ScalarField(grid=interval8, values=[math.inf] + [0.0] * 7)

    def test_log_energy_zero(self):
        energy = LogEnergy.from_log(-math.inf)
        assert energy.is_zero
        assert energy.value == 0.0
        assert energy.root(3.0) == 0.0

class TestGagliardo:
    def test_zero_field(self, interval8):
        energy, seminorm = gagliardo(ScalarField.zeros(interval8), 0.5, 3.0)
        assert energy.is_zero
        assert seminorm == 0.0

    def test_single_node_against_double_loop(self, interval8):
        values = np.zeros(8)
        values[4] = 1.0
        energy, _ = gagliardo(ScalarField(grid=interval8, values=values), 0.5, 3.0)
        expected = naive_energy(interval8, values, 0.5, 3.0)
        assert abs(energy.value - expected) / expected <= 1e-12

    def test_random_fields_against_double_loop(self):
        rng = np.random.default_rng(7)
        grids = {n: build_interval(0.0, 1.0, n) for n in (8, 16, 32)}
        for _ in range(10):
            n = int(rng.choice([8, 16, 32]))
            p = float(rng.choice([3.0, 5.0, 8.0]))
            sigma = float(rng.choice([0.3, 0.5, 0.7]))
            values = rng.uniform(-1.0, 1.0, n)
            energy, _ = gagliardo(ScalarField(grid=grids[n], values=values), sigma, p)
            expected = naive_energy(grids[n], values, sigma, p)
            assert abs(energy.value - expected) / expected <= 1e-10

    def test_two_dimensional_against_double_loop(self):
        grid = build_box2d([(0.0, 1.0), (0.0, 1.0)], 8, MaskRule.DISC, collar_cells=2)
        values = np.random.default_rng(3).uniform(0.0, 1.0, grid.interior_count)
        energy, _ = gagliardo(ScalarField(grid=grid, values=values), 0.6, 4.0)
        expected = naive_energy(grid, values, 0.6, 4.0)
        assert abs(energy.value - expected) / expected <= 1e-10

    @pytest.mark.parametrize("c", [2.0, 0.5, -3.0])
    def test_p_homogeneous(self, interval8, c):
        values = np.random.default_rng(1).uniform(-1.0, 1.0, 8)
        base, _ = gagliardo(ScalarField(grid=interval8, values=values), 0.4, 5.0)
        scaled, _ = gagliardo(ScalarField(grid=interval8, values=c * values), 0.4, 5.0)
        assert scaled.log_value - base.log_value == pytest.approx(5.0 * math.log(abs(c)), abs=1e-10)

    def test_large_p_cone_near_holder(self, interval64):
        phi, _ = _cone(interval64)
        _, seminorm = gagliardo(phi, 0.5, 256.0)
        holder = holder_seminorm(phi, 0.5)
        assert abs(seminorm - holder) / holder <= 0.05

    def test_cone_gap_shrinks_with_p(self, interval64):
        phi, _ = _cone(interval64)
        holder = holder_seminorm(phi, 0.5)
        gaps = [abs(gagliardo(phi, 0.5, p)[1] - holder) / holder for p in (32.0, 128.0, 512.0)]
        assert gaps[0] > gaps[1] > gaps[2]
        assert gaps[2] <= 0.05

    @pytest.mark.parametrize("sigma, p", [(0.0, 3.0), (1.0, 3.0), (0.5, 1.0)])
    def test_parameter_range(self, interval8, sigma, p):
        with pytest.raises(ValueError):
            gagliardo(ScalarField.zeros(interval8), sigma, p)

class TestHolderSeminorm:
    def test_zero_field(self, interval8):
        assert holder_seminorm(ScalarField.zeros(interval8), 0.5) == 0.0

    def test_cone_value(self):
        grid = build_interval(0.0, 1.0, 128)
        phi, _ = _cone(grid)
        assert holder_seminorm(phi, 0.5) == pytest.approx(math.sqrt(2.0), rel=0.02)

    def test_single_node_spike(self, interval8):
        dist = distance_field(interval8)
        for k in (0, 3):
            values = np.zeros(8)
            values[k] = 1.0
            expected = max(interval8.h ** -0.5, dist.interior_values[k] ** -0.5)
            assert holder_seminorm(ScalarField(grid=interval8, values=values), 0.5) == pytest.approx(expected)

    def test_brute_force(self, interval8):
        values = np.random.default_rng(5).uniform(-1.0, 1.0, 8)
        x = interval8.interior_points[:, 0]
        d = distance_field(interval8).interior_values
        best = 0.0
        for i in range(8):
            best = max(best, abs(values[i]) / d[i] ** 0.3)
            for j in range(8):
                if i != j:
                    best = max(best, abs(values[i] - values[j]) / abs(x[i] - x[j]) ** 0.3)
        assert holder_seminorm(ScalarField(grid=interval8, values=values), 0.3) == pytest.approx(best)

    def test_absolutely_homogeneous(self, interval8):
        field = ScalarField(grid=interval8, values=np.random.default_rng(2).uniform(-1.0, 1.0, 8))
        assert holder_seminorm(field.scaled(-2.5), 0.5) == pytest.approx(2.5 * holder_seminorm(field, 0.5))

class TestFracPLaplacian:
    def test_zero_field(self, interval8):
        result = frac_p_laplacian(ScalarField.zeros(interval8), 0.5, 3.0)
        assert isinstance(result, ScalarField)
        assert np.all(result.values == 0)

    def test_odd_symmetry(self):
        grid = build_interval(0.0, 1.0, 16)
        field = ScalarField(grid=grid, values=np.random.default_rng(11).uniform(-1.0, 1.0, 16))
        np.testing.assert_allclose(
            frac_p_laplacian(-field, 0.5, 3.0).values, -frac_p_laplacian(field, 0.5, 3.0).values, rtol=1e-13
        )

    @pytest.mark.parametrize("p", [3.0, 6.0])
    def test_matches_finite_differences(self, p):
        grid = build_interval(0.0, 1.0, 12)
        rng = np.random.default_rng(int(p))
        for _ in range(5 if p == 3.0 else 3):
            values = rng.uniform(-1.0, 1.0, 12)
            operator = frac_p_laplacian(ScalarField(grid=grid, values=values), 0.5, p).values
            expected = finite_difference_gradient(grid, values, 0.5, p)
            assert np.max(np.abs(operator - expected)) / np.max(np.abs(expected)) <= 1e-5

    def test_overflow_is_scaled(self, interval8):
        field = ScalarField(grid=interval8, values=np.linspace(0.0, 1e3, 8))
        result = frac_p_laplacian(field, 0.5, 512.0)
        assert isinstance(result, ScaledField)
        assert np.all(np.isfinite(result.mantissa))
        assert np.all((np.abs(result.mantissa) >= 1.0) | (result.mantissa == 0))
        assert np.all(np.abs(result.mantissa) < math.e)
        with pytest.raises(OperatorOverflowError):
            result.to_field()

    def test_scaled_nodes_keep_their_values(self):
        grid = build_interval(0.0, 1.0, 64)
        values = np.zeros(64)
        values[0] = 1e3
        log_mag, sign = log_operator(grid, values, 0.5, 512.0)
        result = frac_p_laplacian(ScalarField(grid=grid, values=values), 0.5, 512.0)
        assert isinstance(result, ScaledField)
        nonzero = np.isfinite(log_mag)
        assert np.ptp(log_mag[nonzero]) > 745.0
        assert np.all(result.mantissa[nonzero] != 0)
        np.testing.assert_allclose(result.log_magnitude[nonzero], log_mag[nonzero], rtol=1e-13)
        np.testing.assert_array_equal(np.sign(result.mantissa[nonzero]), sign[nonzero])

class TestLimitOperators:
    def test_zero_field(self, interval8):
        field = ScalarField.zeros(interval8)
        for x in range(8):
            assert linf_plus(field, 0.5, x) == 0.0
            assert linf_minus(field, 0.5, x) == 0.0

    def test_cone_apex(self):
        grid = build_interval(0.0, 1.0, 256)
        phi, apex = _cone(grid)
        R = distance_field(grid).R
        assert linf_plus(phi, 0.5, apex) == pytest.approx(R ** -0.5, rel=1e-9)

    def test_signs_at_maximum(self, interval32):
        values = np.random.default_rng(4).uniform(0.1, 1.0, 32)
        field = ScalarField(grid=interval32, values=values)
        top = field.argmax
        plus, minus = linf_plus(field, 0.5, top), linf_minus(field, 0.5, top)
        assert plus > 0
        assert minus <= 0 <= plus
        assert minus >= -plus

    def test_sum_and_vectorized_agree(self, interval32):
        field = ScalarField(grid=interval32, values=np.random.default_rng(8).uniform(-1.0, 1.0, 32))
        plus, minus = difference_quotients(field, 0.4)
        for x in (0, 7, 31):
            assert linf_plus(field, 0.4, x) == pytest.approx(plus[x])
            assert linf_minus(field, 0.4, x) == pytest.approx(minus[x])
            assert linf(field, 0.4, x) == pytest.approx(plus[x] + minus[x])

    def test_node_must_be_interior(self, interval8):
        with pytest.raises(ValueError):
            linf_plus(ScalarField.zeros(interval8), 0.5, 8)
