"""Independent reference implementations used by the test suite and `selftest`.

Nothing here touches the log-domain kernels: energies are nested loops in
plain float arithmetic, the limit eigenvalue is evaluated in arbitrary
precision, and the quotient minimizer is derivative free.
"""
import logging
import math
from typing import List, Optional, Tuple

import mpmath
import numpy as np

from asymptotics import cone_pair, lambda_infinity
from domain import DomainGrid, build_interval, distance_field, inradius_nodes
from models import CheckResult, ProblemSpec, Variant
from nonlocal_ops import ScalarField, frac_p_laplacian, gagliardo

logger = logging.getLogger(__name__)

def naive_tail(grid: DomainGrid, x: np.ndarray, sigma: float, p: float) -> float:
    q = sigma * p
    if grid.dim == 1:
        (a, b), = grid.bounds
        return ((x[0] - a) ** -q + (b - x[0]) ** -q) / q
    total = 0.0
    for y in grid.exterior_points:
        r = math.dist(x, y)
        total += r ** -(grid.dim + q) * grid.h ** grid.dim
    rho = min(min(x[i] - lo, hi - x[i]) for i, (lo, hi) in enumerate(grid.collar_box))
    return total + 2.0 * math.pi * rho ** -q / q

def naive_energy(grid: DomainGrid, values: np.ndarray, sigma: float, p: float) -> float:
    """Discrete Gagliardo energy by a literal double loop."""
    pts = grid.interior_points
    n = len(values)
    vol = grid.h ** grid.dim
    total = 0.0
    for i in range(n):
        for j in range(n):
            if i == j:
                continue
            r = math.dist(pts[i], pts[j])
            total += abs(values[i] - values[j]) ** p * r ** -(grid.dim + sigma * p) * vol * vol
    for i in range(n):
        total += 2.0 * abs(values[i]) ** p * naive_tail(grid, pts[i], sigma, p) * vol
    return total

def finite_difference_gradient(
    grid: DomainGrid,
    values: np.ndarray,
    sigma: float,
    p: float,
    step: float = 1e-5,
) -> np.ndarray:
    """Central differences of u -> (1/p) energy / h^N."""
    scale = p * grid.h ** grid.dim
    gradient = np.zeros(len(values))
    for k in range(len(values)):
        eps = step * max(1.0, abs(values[k]))
        up = np.array(values, dtype=float)
        down = np.array(values, dtype=float)
        up[k] += eps
        down[k] -= eps
        gradient[k] = (naive_energy(grid, up, sigma, p) - naive_energy(grid, down, sigma, p)) / (2 * eps * scale)
    return gradient

def mp_lambda_infinity(s: float, t: float, theta: float, R: float, digits: int = 50) -> float:
    with mpmath.workdps(digits):
        exponent = mpmath.mpf(s) * mpmath.mpf(theta) + (1 - mpmath.mpf(theta)) * mpmath.mpf(t)
        return float(mpmath.power(mpmath.mpf(R), -exponent))

class _PlainQuotient:
    """Rayleigh quotient in plain floats with O(n) single-coordinate updates."""

    def __init__(self, spec: ProblemSpec, grid: DomainGrid):
        if spec.variant not in (Variant.P1, Variant.P2):
            raise ValueError("coordinate search supports P1 and P2")
        self.spec = spec
        self.grid = grid
        self.n = grid.interior_count
        self.vol = grid.h ** grid.dim
        pts = grid.interior_points
        r = np.sqrt(((pts[:, None, :] - pts[None, :, :]) ** 2).sum(axis=-1))
        np.fill_diagonal(r, np.inf)
        self.kernel = {}
        self.tail = {}
        for sigma in {spec.s, spec.t}:
            self.kernel[sigma] = r ** -(grid.dim + sigma * spec.p)
            self.tail[sigma] = np.array([naive_tail(grid, x, sigma, spec.p) for x in pts])

    def energy(self, w: np.ndarray, sigma: float) -> float:
        p = self.spec.p
        pairs = (np.abs(w[:, None] - w[None, :]) ** p * self.kernel[sigma]).sum() * self.vol ** 2
        return pairs + 2.0 * (np.abs(w) ** p * self.tail[sigma]).sum() * self.vol

    def node_energy(self, w: np.ndarray, k: int, value: float, sigma: float) -> float:
        p = self.spec.p
        pairs = 2.0 * (np.abs(value - w) ** p * self.kernel[sigma][k]).sum() * self.vol ** 2
        return pairs + 2.0 * abs(value) ** p * self.tail[sigma][k] * self.vol

    def u_factor(self, u: np.ndarray) -> float:
        if self.spec.variant == Variant.P2:
            return abs(u[self.spec.x1]) ** self.spec.alpha
        return (np.abs(u) ** self.spec.alpha).sum() * self.vol

    def v_factor(self, v: np.ndarray) -> float:
        anchor = self.spec.x2 if self.spec.variant == Variant.P2 else self.spec.x0
        return abs(v[anchor]) ** self.spec.beta

def coordinate_search_lambda(
    spec: ProblemSpec,
    grid: DomainGrid,
    u0: np.ndarray,
    v0: np.ndarray,
    max_sweeps: int = 4000,
    min_step: float = 1e-9,
) -> float:
    """Derivative-free pattern search over node values; returns the smallest quotient found."""
    model = _PlainQuotient(spec, grid)
    p = spec.p
    u = np.array(u0, dtype=float)
    v = np.array(v0, dtype=float)
    steps = np.full(2 * model.n, 0.25 * max(np.abs(u).max(), np.abs(v).max()))

    for sweep_index in range(max_sweeps):
        e_u, e_v = model.energy(u, spec.s), model.energy(v, spec.t)
        f_u, f_v = model.u_factor(u), model.v_factor(v)
        quotient = (e_u + e_v) / p / (f_u * f_v)
        for k in range(2 * model.n):
            field, sigma, node = (u, spec.s, k) if k < model.n else (v, spec.t, k - model.n)
            old = field[node]
            before = model.node_energy(field, node, old, sigma)
            for direction in (1.0, -1.0):
                new = old + direction * steps[k]
                after = model.node_energy(field, node, new, sigma)
                field[node] = new
                if k < model.n:
                    trial_u, trial_v = e_u - before + after, e_v
                    trial_fu, trial_fv = model.u_factor(u), f_v
                else:
                    trial_u, trial_v = e_u, e_v - before + after
                    trial_fu, trial_fv = f_u, model.v_factor(v)
                denominator = trial_fu * trial_fv
                trial = (trial_u + trial_v) / p / denominator if denominator > 0 else math.inf
                if trial < quotient:
                    quotient, e_u, e_v, f_u, f_v = trial, trial_u, trial_v, trial_fu, trial_fv
                    steps[k] *= 1.5
                    break
                field[node] = old
            else:
                steps[k] *= 0.5
        if steps.max() < min_step * max(np.abs(u).max(), np.abs(v).max()):
            break
        # rescale jointly so the denominator stays near 1
        scale = (model.u_factor(u) * model.v_factor(v)) ** (-1.0 / p)
        u *= scale
        v *= scale
        steps *= scale

    final = (model.energy(u, spec.s) + model.energy(v, spec.t)) / p / (model.u_factor(u) * model.v_factor(v))
    logger.info(f"Coordinate search finished after {sweep_index + 1} sweeps: quotient {final:.12g}")
    return final

# selftest suites

def closed_form_suite(seed: int = 0, count: int = 20) -> List[CheckResult]:
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(count):
        s, t = sorted(rng.uniform(0.05, 0.95, 2))
        theta = rng.uniform(0.05, 0.95)
        R = rng.uniform(0.05, 5.0)
        exact = mp_lambda_infinity(s, t, theta, R)
        worst = max(worst, abs(lambda_infinity(s, t, theta, R) - exact) / exact)

    grid = build_interval(0.0, 1.0, 64)
    dist = distance_field(grid)
    apex = int(inradius_nodes(grid, dist)[0])
    s, t, theta = 0.25, 0.75, 0.5
    phi, psi = cone_pair(grid, apex, apex, s, t, theta, dist.R)
    sup_gap = abs(phi.sup_norm - dist.R ** ((theta - 1) * (t - s))) / phi.sup_norm
    unit_gap = abs(phi.sup_norm ** theta * psi.values[apex] ** (1 - theta) - 1.0)
    return [
        CheckResult(name="lambda_infinity_closed_form", passed=worst <= 1e-14, gap=worst, tolerance=1e-14,
                    detail=f"{count} random parameter tuples against 50-digit evaluation"),
        CheckResult(name="cone_sup_norm", passed=sup_gap <= 1e-12, gap=sup_gap, tolerance=1e-12),
        CheckResult(name="cone_unit_denominator", passed=unit_gap <= 1e-12, gap=unit_gap, tolerance=1e-12),
    ]

def energy_suite(seed: int = 0, count: int = 10) -> List[CheckResult]:
    rng = np.random.default_rng(seed)
    grids = {n: build_interval(0.0, 1.0, n) for n in (8, 16, 32)}
    worst = 0.0
    for _ in range(count):
        n = int(rng.choice([8, 16, 32]))
        p = float(rng.choice([3.0, 5.0, 8.0]))
        sigma = float(rng.choice([0.3, 0.5, 0.7]))
        values = rng.uniform(-1.0, 1.0, n)
        energy, _ = gagliardo(ScalarField(grid=grids[n], values=values), sigma, p)
        expected = naive_energy(grids[n], values, sigma, p)
        worst = max(worst, abs(energy.value - expected) / expected)
    return [CheckResult(name="gagliardo_double_sum", passed=worst <= 1e-10, gap=worst, tolerance=1e-10,
                        detail=f"{count} random fields")]

def gradient_suite(seed: int = 0, count: int = 5) -> List[CheckResult]:
    rng = np.random.default_rng(seed)
    grid = build_interval(0.0, 1.0, 12)
    worst = 0.0
    for index in range(count):
        p = (3.0, 6.0)[index % 2]
        values = rng.uniform(-1.0, 1.0, 12)
        operator = frac_p_laplacian(ScalarField(grid=grid, values=values), 0.5, p).values
        expected = finite_difference_gradient(grid, values, 0.5, p)
        worst = max(worst, float(np.max(np.abs(operator - expected)) / np.max(np.abs(expected))))
    return [CheckResult(name="operator_gradient", passed=worst <= 1e-5, gap=worst, tolerance=1e-5,
                        detail=f"{count} random fields, n=12")]

def selftest_suites(seed: int = 0, suites: Optional[Tuple[str, ...]] = None) -> List[CheckResult]:
    available = {
        "closed_form": closed_form_suite,
        "energy": energy_suite,
        "gradient": gradient_suite,
    }
    results: List[CheckResult] = []
    for name in suites or tuple(available):
        logger.info(f"Running selftest suite {name}")
        results.extend(available[name](seed))
    return results
