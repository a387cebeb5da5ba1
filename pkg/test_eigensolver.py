import math

import numpy as np
import pytest

from asymptotics import spec_cone_pair
from domain import build_box2d, build_interval, inradius_nodes, snap_to_node
from eigensolver import (
    DenominatorCollapseError,
    denominator,
    normalize,
    rayleigh,
    rebalance,
    rebalance_factors,
    solve,
    validate_spec,
    weak_residual,
)
from models import AlphaRule, InitKind, MaskRule, ProblemSpec, SolverOptions, SolverStatus, Variant
from nonlocal_ops import ScalarField, gagliardo
from oracles import coordinate_search_lambda

def _spec(**overrides):
    values = dict(variant=Variant.P1, s=0.5, t=0.5, theta=0.5, p=4.0, x0=3)
    values.update(overrides)
    return ProblemSpec(**values)

def _random_pair(grid, seed=0):
    rng = np.random.default_rng(seed)
    n = grid.interior_count
    return (
        ScalarField(grid=grid, values=rng.uniform(0.2, 1.0, n)),
        ScalarField(grid=grid, values=rng.uniform(0.2, 1.0, n)),
    )

class TestProblemSpec:
    def test_alpha_beta_sum_to_p(self):
        for rule in AlphaRule:
            spec = _spec(p=7.3, theta=0.3, alpha_rule=rule)
            assert spec.alpha + spec.beta == pytest.approx(7.3, abs=1e-15)
            assert spec.alpha > 1 and spec.beta > 1

    @pytest.mark.parametrize(
        "overrides",
        [
            {"theta": 1.5},
            {"s": 0.7, "t": 0.5},
            {"p": 1.5},
            {"variant": Variant.P2, "x1": 2, "x2": 2},
            {"variant": Variant.P2, "x1": None, "x2": 3},
            {"x0": None},
        ],
    )
    def test_invalid(self, overrides):
        with pytest.raises(ValueError):
            _spec(**overrides)

    def test_p_must_exceed_dimension_over_s(self, interval8):
        with pytest.raises(ValueError):
            validate_spec(_spec(s=0.2, t=0.5, p=4.0), interval8)

    def test_anchor_must_be_interior(self, interval8):
        with pytest.raises(ValueError):
            validate_spec(_spec(x0=8), interval8)

class TestDenominator:
    def test_zero_anchor_value(self, interval8):
        u = ScalarField(grid=interval8, values=np.ones(8))
        v = ScalarField.zeros(interval8)
        assert denominator(_spec(), u, v).is_zero

    def test_two_anchor_unit(self, interval8):
        spec = _spec(variant=Variant.P2, x0=None, x1=2, x2=5)
        u = ScalarField(grid=interval8, values=np.ones(8))
        assert denominator(spec, u, u).log_value == pytest.approx(0.0, abs=1e-15)

    def test_hand_sum(self, interval8):
        u = ScalarField(grid=interval8, values=np.ones(8))
        v = ScalarField(grid=interval8, values=np.full(8, 2.0))
        assert denominator(_spec(), u, v).log_value == pytest.approx(math.log(4.0), abs=1e-14)

    def test_max_variant_uses_largest_value(self, interval8):
        u = ScalarField(grid=interval8, values=np.ones(8))
        v = ScalarField(grid=interval8, values=np.linspace(0.1, 3.0, 8))
        spec = _spec(variant=Variant.P1MAX, x0=None)
        assert denominator(spec, u, v).log_value == pytest.approx(2.0 * math.log(3.0), abs=1e-14)

class TestNormalize:
    def test_idempotent(self, interval8):
        spec = _spec()
        u, v = normalize(spec, *_random_pair(interval8))
        again_u, again_v = normalize(spec, u, v)
        np.testing.assert_allclose(again_u.values, u.values, rtol=1e-14)
        assert abs(denominator(spec, u, v).log_value) <= 1e-12

    def test_joint_scaling(self, interval8):
        spec = _spec()
        u, v = _random_pair(interval8)
        a_u, _ = normalize(spec, u, v)
        b_u, _ = normalize(spec, u.scaled(2.0), v.scaled(2.0))
        np.testing.assert_allclose(a_u.values, b_u.values, rtol=1e-13)

    def test_scale_factor(self, interval8):
        spec = _spec(variant=Variant.P2, x0=None, x1=2, x2=5)
        u = ScalarField(grid=interval8, values=np.full(8, math.e))
        new_u, new_v = normalize(spec, u, u)
        assert new_u.values[2] == pytest.approx(1.0)
        assert new_v.values[5] == pytest.approx(1.0)

    def test_zero_denominator(self, interval8):
        with pytest.raises(DenominatorCollapseError):
            normalize(_spec(), ScalarField(grid=interval8, values=np.ones(8)), ScalarField.zeros(interval8))

class TestRebalance:
    def test_symmetric_case_is_fixed(self, interval8):
        u, _ = _random_pair(interval8)
        new_u, new_v = rebalance(_spec(), u, u)
        np.testing.assert_allclose(new_u.values, u.values, rtol=1e-13)
        np.testing.assert_allclose(new_v.values, u.values, rtol=1e-13)

    def test_closed_form_against_grid_search(self):
        alpha = beta = 2.0
        p, big_a, big_b = 4.0, 16.0, 1.0
        log_a, log_b = rebalance_factors(math.log(big_a), math.log(big_b), alpha, beta, p)

        def cost(x):
            return np.exp(p * x) * big_a + np.exp(-p * alpha / beta * x) * big_b

        xs = np.linspace(-3.0, 3.0, 600001)
        best = xs[np.argmin(cost(xs))]
        xs = np.linspace(best - 2e-5, best + 2e-5, 400001)
        best = xs[np.argmin(cost(xs))]
        assert log_a == pytest.approx(best, abs=1e-6)
        assert alpha * log_a + beta * log_b == pytest.approx(0.0, abs=1e-15)

    def test_balance_and_decrease(self, interval8):
        spec = _spec(theta=0.3, p=8.0)
        u, v = _random_pair(interval8, seed=3)
        v = v.scaled(5.0)
        new_u, new_v = rebalance(spec, u, v)
        log_a = gagliardo(new_u, spec.s, spec.p)[0].log_value
        log_b = gagliardo(new_v, spec.t, spec.p)[0].log_value
        assert log_a - math.log(spec.alpha) == pytest.approx(log_b - math.log(spec.beta), abs=1e-10)
        assert rayleigh(spec, new_u, new_v)[0] <= rayleigh(spec, u, v)[0] + 1e-12
        assert denominator(spec, new_u, new_v).log_value == pytest.approx(denominator(spec, u, v).log_value)

class TestRayleigh:
    def test_joint_scaling_invariance(self, interval8):
        spec = _spec()
        u, v = _random_pair(interval8)
        assert rayleigh(spec, u.scaled(3.0), v.scaled(3.0))[0] == pytest.approx(rayleigh(spec, u, v)[0], abs=1e-12)

    def test_zero_u(self, interval8):
        with pytest.raises(DenominatorCollapseError):
            rayleigh(_spec(), ScalarField.zeros(interval8), ScalarField(grid=interval8, values=np.ones(8)))

    def test_root(self, interval8):
        spec = _spec()
        log_q, root = rayleigh(spec, *_random_pair(interval8))
        assert root == pytest.approx(math.exp(log_q / 4.0))

class TestSolve:
    def test_converges_below_cone_quotient(self, interval32, p1_spec):
        pair = solve(p1_spec, interval32, InitKind.CONES, SolverOptions(tol=1e-8))
        assert pair.converged
        assert pair.status == SolverStatus.CONVERGED
        cone_log_q, _ = rayleigh(p1_spec, *spec_cone_pair(p1_spec, interval32))
        assert pair.log_lambda <= cone_log_q

    def test_invariants(self, interval32, p1_spec):
        pair = solve(p1_spec, interval32, InitKind.CONES, SolverOptions(tol=1e-8))
        assert abs(pair.denominator.log_value) <= 1e-12
        assert np.all(pair.u.values >= 0) and np.all(pair.v.values >= 0)
        assert all(b <= a for a, b in zip(pair.history, pair.history[1:]))
        assert pair.weak_residual <= 1e-4
        assert weak_residual(p1_spec, pair) == pytest.approx(pair.weak_residual)
        assert pair.eigenvalue == pytest.approx(math.exp(pair.log_lambda))

    def test_restart_from_eigenpair(self, interval32, p1_spec):
        opts = SolverOptions(tol=1e-8)
        pair = solve(p1_spec, interval32, InitKind.CONES, opts)
        again = solve(p1_spec, interval32, InitKind.GIVEN, opts, initial=(pair.u, pair.v))
        assert again.converged
        assert again.iterations <= 2
        assert again.log_lambda == pytest.approx(pair.log_lambda, abs=1e-8)

    def test_perturbation_raises_residual(self, interval32, p1_spec):
        pair = solve(p1_spec, interval32, InitKind.CONES, SolverOptions(tol=1e-8))
        values = np.array(pair.u.values)
        values[10] *= 1.1
        bumped = pair.model_copy(update={"u": pair.u.with_values(values)})
        assert weak_residual(p1_spec, bumped) > weak_residual(p1_spec, pair)

    def test_random_start_agrees(self, interval32, p1_spec):
        opts = SolverOptions(tol=1e-8)
        cones = solve(p1_spec, interval32, InitKind.CONES, opts)
        random = solve(p1_spec, interval32, InitKind.RANDOM, opts)
        assert random.lambda_root == pytest.approx(cones.lambda_root, rel=1e-4)

    def test_multistart_gap_reported(self, interval32, p1_spec):
        pair = solve(p1_spec, interval32, InitKind.CONES, SolverOptions(tol=1e-8, multistart=2))
        assert pair.multistart_gap is not None
        assert pair.multistart_gap <= 1e-4

    def test_iteration_cap(self, interval32, p1_spec):
        pair = solve(p1_spec, interval32, InitKind.CONES, SolverOptions(max_iter=1))
        assert not pair.converged
        assert pair.status == SolverStatus.MAX_ITER
        assert pair.iterations == 1

    def test_given_without_pair(self, interval32, p1_spec):
        with pytest.raises(ValueError):
            solve(p1_spec, interval32, InitKind.GIVEN)

    def test_max_variant_matches_fixed_anchor(self, interval32, p1_spec):
        opts = SolverOptions(tol=1e-9)
        free = solve(p1_spec.model_copy(update={"variant": Variant.P1MAX, "x0": None}), interval32, InitKind.CONES, opts)
        assert free.converged
        assert free.spec.x0 == free.v.argmax
        fixed = solve(p1_spec.with_anchors(x0=free.spec.x0), interval32, InitKind.CONES, opts)
        assert fixed.log_lambda == pytest.approx(free.log_lambda, abs=1e-6)
        np.testing.assert_allclose(fixed.v.values, free.v.values, rtol=1e-3, atol=1e-6)

    def test_affine_rule(self, interval32, p1_spec):
        spec = p1_spec.model_copy(update={"alpha_rule": AlphaRule.AFFINE, "p": 6.0}).validated()
        pair = solve(spec, interval32, InitKind.CONES, SolverOptions(tol=1e-8))
        assert pair.converged
        assert spec.alpha == pytest.approx(3.0)

    def test_summary_serializable(self, interval32, p1_spec):
        pair = solve(p1_spec, interval32, InitKind.CONES, SolverOptions(tol=1e-6))
        summary = pair.summary()
        assert summary["spec"]["variant"] == "P1"
        assert len(summary["u"]) == 32
        assert summary["lambda_root"] == pytest.approx(pair.lambda_root)

    def test_anchor_search_without_moves_counts_once(self):
        grid = build_interval(0.0, 1.0, 16)
        spec = ProblemSpec(variant=Variant.P2MAX, s=0.5, t=0.5, theta=0.5, p=4.0, x1=5, x2=10)
        plain = solve(spec, grid, InitKind.CONES, SolverOptions(anchor_search=False))
        capped = solve(spec, grid, InitKind.CONES, SolverOptions(max_anchor_moves=0))
        assert capped.iterations == plain.iterations
        assert capped.spec.x1 == 5 and capped.spec.x2 == 10

    def test_anchor_search_counts_trial_solves(self):
        grid = build_interval(0.0, 1.0, 16)
        spec = ProblemSpec(variant=Variant.P2MAX, s=0.5, t=0.5, theta=0.5, p=4.0, x1=5, x2=10)
        plain = solve(spec, grid, InitKind.CONES, SolverOptions(anchor_search=False))
        searched = solve(spec, grid, InitKind.CONES, SolverOptions())
        # every neighbour of each anchor is tried at least once
        assert searched.iterations > plain.iterations

    def test_disc_grid(self):
        grid = build_box2d([(0.0, 1.0), (0.0, 1.0)], 8, MaskRule.DISC)
        spec = ProblemSpec(variant=Variant.P1, s=0.5, t=0.5, theta=0.5, p=6.0, x0=int(inradius_nodes(grid)[0]))
        pair = solve(spec, grid, InitKind.CONES, SolverOptions(tol=1e-8))
        assert pair.converged
        assert pair.status == SolverStatus.CONVERGED
        assert len(pair.u.values) == grid.interior_count
        assert pair.weak_residual <= 1e-5
        assert pair.lambda_root > 0

    @pytest.mark.slow
    def test_matches_coordinate_search(self, interval32, p1_spec):
        pair = solve(p1_spec, interval32, InitKind.CONES, SolverOptions(tol=1e-8))
        phi, psi = spec_cone_pair(p1_spec, interval32)
        oracle = coordinate_search_lambda(p1_spec, interval32, phi.values, psi.values)
        assert abs(pair.eigenvalue - oracle) / oracle <= 0.01

    @pytest.mark.slow
    def test_max_anchor_search_lands_on_maxima(self, interval32):
        spec = ProblemSpec(
            variant=Variant.P2MAX,
            s=0.5,
            t=0.5,
            theta=0.5,
            p=8.0,
            x1=snap_to_node(interval32, [0.35]),
            x2=snap_to_node(interval32, [0.65]),
        )
        pair = solve(spec, interval32, InitKind.CONES, SolverOptions(tol=1e-8))
        fixed = solve(spec.model_copy(update={"variant": Variant.P2}), interval32, InitKind.CONES,
                      SolverOptions(tol=1e-8))
        assert pair.converged
        assert pair.spec.x1 == pair.u.argmax
        assert pair.spec.x2 == pair.v.argmax
        assert pair.log_lambda <= fixed.log_lambda + 1e-12
