import logging
import math
from collections import deque
from typing import Deque, List, Optional, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict, Field
from scipy.special import logsumexp

from domain import (
    DomainGrid,
    check_interior_index,
    cone_profile,
    distance_field,
    inradius_nodes,
    neighbour_nodes,
)
from models import InitKind, ProblemSpec, SolverOptions, SolverStatus, Variant
from nonlocal_ops import LogEnergy, ScalarField, log_abs, log_energy, log_operator

logger = logging.getLogger(__name__)

STEP_FLOOR = 1e-12
ARMIJO = 1e-4
DIVERGENCE_STREAK = 20
RESIDUAL_FACTOR = 10.0

class SolverError(RuntimeError):
    """Base class for eigensolver failures."""

class DenominatorCollapseError(SolverError):
    """The constraint denominator vanished."""

class EigenPair(BaseModel):
    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    spec: ProblemSpec = Field(..., description="Problem with resolved anchors")
    u: ScalarField
    v: ScalarField
    eigenvalue: float = Field(..., description="Lambda_1(p), possibly inf when only log_lambda is representable")
    log_lambda: float = Field(..., description="log Lambda_1(p)")
    numerator_parts: Tuple[LogEnergy, LogEnergy] = Field(..., description="((1/p)[u]^p, (1/p)[v]^p)")
    denominator: LogEnergy
    iterations: int = 0
    converged: bool = False
    status: SolverStatus = SolverStatus.MAX_ITER
    weak_residual: float = math.inf
    history: List[float] = Field(default_factory=list, description="log Q after each accepted step")
    multistart_gap: Optional[float] = None

    @property
    def lambda_root(self) -> float:
        return math.exp(self.log_lambda / self.spec.p)

    @property
    def grid(self) -> DomainGrid:
        return self.u.grid

    def summary(self) -> dict:
        return {
            "spec": self.spec.model_dump(mode="json"),
            "grid": self.grid.describe().model_dump(mode="json"),
            "lambda": self.eigenvalue,
            "log_lambda": self.log_lambda,
            "lambda_root": self.lambda_root,
            "numerator_parts": [part.model_dump(mode="json") for part in self.numerator_parts],
            "denominator": self.denominator.model_dump(mode="json"),
            "iterations": self.iterations,
            "converged": self.converged,
            "status": self.status.value,
            "weak_residual": self.weak_residual,
            "multistart_gap": self.multistart_gap,
            "u": self.u.to_json(),
            "v": self.v.to_json(),
        }

class QuotientState(BaseModel):
    model_config = ConfigDict(arbitrary_types_allowed=True)

    log_q: float
    log_a: float
    log_b: float
    log_d: float
    gradient: np.ndarray
    residual: float

class QuotientModel:
    """log Q and its gradient for one problem on one grid, over the stacked vector (u, v)."""

    def __init__(self, spec: ProblemSpec, grid: DomainGrid):
        validate_spec(spec, grid)
        self.spec = spec
        self.grid = grid
        self.p = spec.p
        self.alpha = spec.alpha
        self.beta = spec.beta
        self.size = grid.interior_count

    def split(self, x: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
        return x[:self.size], x[self.size:]

    def u_anchor(self) -> Optional[int]:
        return self.spec.x1 if self.spec.variant in (Variant.P2, Variant.P2MAX) else None

    def v_anchor(self, v: np.ndarray) -> int:
        if self.spec.variant == Variant.P1:
            return self.spec.x0
        if self.spec.variant == Variant.P1MAX:
            return int(np.argmax(np.abs(v)))
        return self.spec.x2

    def _log_u_factor(self, u: np.ndarray) -> float:
        anchor = self.u_anchor()
        if anchor is not None:
            return self.alpha * float(log_abs(u[anchor]))
        with np.errstate(divide="ignore"):
            return float(logsumexp(self.alpha * log_abs(u))) + self.grid.log_cell_volume

    def log_denominator(self, u: np.ndarray, v: np.ndarray) -> float:
        log_v = self.beta * float(log_abs(v[self.v_anchor(v)]))
        total = self._log_u_factor(u) + log_v
        return total if math.isfinite(total) else -math.inf

    def log_energies(self, u: np.ndarray, v: np.ndarray) -> Tuple[float, float]:
        return (
            log_energy(self.grid, u, self.spec.s, self.p),
            log_energy(self.grid, v, self.spec.t, self.p),
        )

    def project(self, x: np.ndarray) -> np.ndarray:
        """Normalize onto the constraint, then rebalance the two components."""
        u, v = self.split(x)
        log_d = self.log_denominator(u, v)
        if log_d == -math.inf:
            raise DenominatorCollapseError("constraint denominator is zero")
        scale = math.exp(-log_d / self.p)
        u, v = scale * u, scale * v
        log_a, log_b = self.log_energies(u, v)
        if log_a == -math.inf or log_b == -math.inf:
            raise DenominatorCollapseError("a component has zero energy")
        shift_u, shift_v = rebalance_factors(log_a, log_b, self.alpha, self.beta, self.p)
        return np.concatenate([math.exp(shift_u) * u, math.exp(shift_v) * v])

    def evaluate(self, x: np.ndarray) -> QuotientState:
        u, v = self.split(x)
        grid, p = self.grid, self.p
        lh = grid.log_cell_volume

        log_d = self.log_denominator(u, v)
        if log_d == -math.inf:
            raise DenominatorCollapseError("constraint denominator is zero")
        log_a, log_b = self.log_energies(u, v)
        log_n = float(np.logaddexp(log_a, log_b)) - math.log(p)

        # gradient of the numerator relative to N: h^N L u / N
        op_u, sign_u = log_operator(grid, u, self.spec.s, p)
        op_v, sign_v = log_operator(grid, v, self.spec.t, p)
        num_u = sign_u * np.exp(op_u + lh - log_n)
        num_v = sign_v * np.exp(op_v + lh - log_n)

        # gradient of log D
        den_u = np.zeros(self.size)
        anchor = self.u_anchor()
        if anchor is None:
            with np.errstate(divide="ignore"):
                log_s = float(logsumexp(self.alpha * log_abs(u)))
                den_u = np.sign(u) * np.exp(math.log(self.alpha) + (self.alpha - 1.0) * log_abs(u) - log_s)
        else:
            den_u[anchor] = self.alpha / u[anchor]
        den_v = np.zeros(self.size)
        v_anchor = self.v_anchor(v)
        den_v[v_anchor] = self.beta / v[v_anchor]

        gradient = np.concatenate([num_u - den_u, num_v - den_v])
        scale = max(
            np.max(np.abs(num_u)), np.max(np.abs(num_v)), np.max(np.abs(den_u)), np.max(np.abs(den_v))
        )
        residual = float(np.max(np.abs(gradient)) / scale) if scale > 0 else 0.0
        return QuotientState(
            log_q=log_n - log_d,
            log_a=log_a,
            log_b=log_b,
            log_d=log_d,
            gradient=gradient,
            residual=residual,
        )

    def max_step(self, x: np.ndarray, direction: np.ndarray, step: float) -> float:
        u, v = self.split(x)
        du, dv = self.split(direction)
        relative = max(
            np.max(np.abs(du)) / max(np.max(np.abs(u)), np.finfo(float).tiny),
            np.max(np.abs(dv)) / max(np.max(np.abs(v)), np.finfo(float).tiny),
        )
        return step / relative if relative > 0 else 0.0

    def to_pair(self, x: np.ndarray, state: QuotientState, **diagnostics) -> EigenPair:
        u, v = self.split(x)
        spec = self.spec
        if spec.variant == Variant.P1MAX:
            spec = spec.with_anchors(x0=self.v_anchor(v))
        log_p = math.log(self.p)
        return EigenPair(
            spec=spec,
            u=ScalarField(grid=self.grid, values=u),
            v=ScalarField(grid=self.grid, values=v),
            eigenvalue=math.exp(state.log_q) if state.log_q < 700.0 else math.inf,
            log_lambda=state.log_q,
            numerator_parts=(LogEnergy.from_log(state.log_a - log_p), LogEnergy.from_log(state.log_b - log_p)),
            denominator=LogEnergy.from_log(state.log_d),
            weak_residual=state.residual,
            **diagnostics,
        )

def validate_spec(spec: ProblemSpec, grid: DomainGrid) -> None:
    if spec.p is None:
        raise ValueError("problem spec needs an exponent p")
    bound = spec.min_admissible_p(grid.dim)
    if not spec.p > bound:
        raise ValueError(f"p = {spec.p} is not admissible; need p > {bound:g}")
    for name in ("x0", "x1", "x2"):
        anchor = getattr(spec, name)
        if anchor is not None:
            check_interior_index(grid, anchor)

def _check_pair(u: ScalarField, v: ScalarField) -> None:
    if u.grid is not v.grid:
        raise ValueError("u and v must live on the same grid")

def rebalance_factors(log_a: float, log_b: float, alpha: float, beta: float, p: float) -> Tuple[float, float]:
    """(log a, log b) with a^alpha b^beta = 1 minimizing a^p A + b^p B."""
    log_lambda = (alpha * (log_a - math.log(alpha)) + beta * (log_b - math.log(beta))) / p
    return (
        (log_lambda + math.log(alpha) - log_a) / p,
        (log_lambda + math.log(beta) - log_b) / p,
    )

def denominator(spec: ProblemSpec, u: ScalarField, v: ScalarField) -> LogEnergy:
    _check_pair(u, v)
    model = QuotientModel(spec, u.grid)
    return LogEnergy.from_log(model.log_denominator(u.values, v.values))

def normalize(spec: ProblemSpec, u: ScalarField, v: ScalarField) -> Tuple[ScalarField, ScalarField]:
    log_d = denominator(spec, u, v)
    if log_d.is_zero:
        raise DenominatorCollapseError("cannot normalize a pair with zero denominator")
    scale = math.exp(-log_d.log_value / spec.p)
    return u.scaled(scale), v.scaled(scale)

def rebalance(spec: ProblemSpec, u: ScalarField, v: ScalarField) -> Tuple[ScalarField, ScalarField]:
    _check_pair(u, v)
    model = QuotientModel(spec, u.grid)
    log_a, log_b = model.log_energies(u.values, v.values)
    if log_a == -math.inf or log_b == -math.inf:
        raise ValueError("rebalance needs nonzero energy in both components")
    shift_u, shift_v = rebalance_factors(log_a, log_b, spec.alpha, spec.beta, spec.p)
    return u.scaled(math.exp(shift_u)), v.scaled(math.exp(shift_v))

def rayleigh(spec: ProblemSpec, u: ScalarField, v: ScalarField) -> Tuple[float, float]:
    """(log Q, Q^(1/p)) of a pair."""
    _check_pair(u, v)
    model = QuotientModel(spec, u.grid)
    log_d = model.log_denominator(u.values, v.values)
    if log_d == -math.inf:
        raise DenominatorCollapseError("rayleigh quotient undefined: zero denominator")
    log_a, log_b = model.log_energies(u.values, v.values)
    log_q = float(np.logaddexp(log_a, log_b)) - math.log(spec.p) - log_d
    return log_q, math.exp(log_q / spec.p)

def weak_residual(spec: ProblemSpec, pair: EigenPair) -> float:
    """Relative gap of the weak eigenvalue identity over single-node test functions."""
    model = QuotientModel(spec, pair.grid)
    return model.evaluate(np.concatenate([pair.u.values, pair.v.values])).residual

def default_apexes(spec: ProblemSpec, grid: DomainGrid) -> Tuple[int, int]:
    """Cone apexes for the initial pair: the anchors, else an inradius node."""
    center = int(inradius_nodes(grid)[0])
    if spec.variant in (Variant.P2, Variant.P2MAX):
        return spec.x1, spec.x2
    if spec.variant == Variant.P1:
        return spec.x0, spec.x0
    return center, center

def initial_pair(
    spec: ProblemSpec,
    grid: DomainGrid,
    init: InitKind,
    opts: SolverOptions,
    given: Optional[Tuple[ScalarField, ScalarField]] = None,
) -> Tuple[np.ndarray, np.ndarray]:
    if given is not None:
        u, v = given
        _check_pair(u, v)
        if u.grid is not grid and u.values.size != grid.interior_count:
            raise ValueError("initial pair does not match the grid")
        return np.array(u.values), np.array(v.values)
    if init == InitKind.GIVEN:
        raise ValueError("init 'given' requires an initial pair")
    if init == InitKind.RANDOM:
        rng = np.random.default_rng(opts.seed)
        return rng.uniform(0.1, 1.0, grid.interior_count), rng.uniform(0.1, 1.0, grid.interior_count)
    radius = distance_field(grid).R
    apex_u, apex_v = default_apexes(spec, grid)
    return (
        cone_profile(grid, apex_u, spec.s, radius),
        cone_profile(grid, apex_v, spec.t, radius),
    )

def _lbfgs_direction(gradient: np.ndarray, memory: Deque[Tuple[np.ndarray, np.ndarray, float]]) -> np.ndarray:
    q = gradient.copy()
    weights = []
    for s, y, rho in reversed(memory):
        a = rho * float(s @ q)
        q -= a * y
        weights.append(a)
    if memory:
        s, y, _ = memory[-1]
        q *= float(s @ y) / float(y @ y)
    for (s, y, rho), a in zip(memory, reversed(weights)):
        b = rho * float(y @ q)
        q += (a - b) * s
    return -q

def _minimize(
    spec: ProblemSpec,
    grid: DomainGrid,
    u0: np.ndarray,
    v0: np.ndarray,
    opts: SolverOptions,
) -> EigenPair:
    model = QuotientModel(spec, grid)
    x = np.concatenate([u0, v0]).astype(float)
    if opts.positivity:
        x = np.maximum(x, 0.0)
    x = model.project(x)
    state = model.evaluate(x)
    history = [state.log_q]
    target = RESIDUAL_FACTOR * opts.tol
    memory: Deque[Tuple[np.ndarray, np.ndarray, float]] = deque(maxlen=opts.memory)
    streak = 0
    status = SolverStatus.MAX_ITER
    iterations = 0

    if state.residual <= target:
        status = SolverStatus.CONVERGED

    while status == SolverStatus.MAX_ITER and iterations < opts.max_iter:
        iterations += 1
        direction = _lbfgs_direction(state.gradient, memory)
        slope = float(state.gradient @ direction)
        if not slope < 0:
            memory.clear()
            direction = -state.gradient
            slope = -float(state.gradient @ state.gradient)
        if slope == 0:
            status = SolverStatus.CONVERGED if state.residual <= target else SolverStatus.STALLED
            break

        eta = model.max_step(x, direction, opts.step)
        if memory:
            eta = min(1.0, eta)

        accepted = None
        while eta >= STEP_FLOOR:
            trial = x + eta * direction
            if opts.positivity:
                trial = np.maximum(trial, 0.0)
            try:
                trial = model.project(trial)
                trial_state = model.evaluate(trial)
            except DenominatorCollapseError:
                eta *= 0.5
                continue
            if trial_state.log_q <= state.log_q + ARMIJO * eta * slope:
                accepted = (trial, trial_state)
                break
            if trial_state.log_q > state.log_q + opts.tol:
                streak += 1
                if streak >= DIVERGENCE_STREAK:
                    break
            eta *= 0.5

        if streak >= DIVERGENCE_STREAK:
            status = SolverStatus.DIVERGED
            logger.error(
                f"Solver diverged for p={spec.p}: log Q increased on {streak} consecutive trial steps"
            )
            break
        if accepted is None:
            status = SolverStatus.CONVERGED if state.residual <= target else SolverStatus.STALLED
            break

        streak = 0
        trial, trial_state = accepted
        s_vec = trial - x
        y_vec = trial_state.gradient - state.gradient
        sy = float(s_vec @ y_vec)
        if sy > 1e-12 * np.linalg.norm(s_vec) * np.linalg.norm(y_vec):
            memory.append((s_vec, y_vec, 1.0 / sy))
        decrease = state.log_q - trial_state.log_q
        x, state = trial, trial_state
        history.append(state.log_q)
        if logger.isEnabledFor(logging.DEBUG):
            logger.debug(
                f"iter {iterations}: log Q={state.log_q:.15g} step={eta:.3g} residual={state.residual:.3e}"
            )
        if decrease < opts.tol and state.residual <= target:
            status = SolverStatus.CONVERGED

    pair = model.to_pair(
        x,
        state,
        iterations=iterations,
        converged=status == SolverStatus.CONVERGED,
        status=status,
        history=history,
    )
    if pair.converged:
        logger.info(
            f"Solved {spec.variant.value} p={spec.p:g}: lambda_root={pair.lambda_root:.10g} "
            f"after {iterations} iterations (residual {pair.weak_residual:.2e})"
        )
    else:
        logger.warning(
            f"Solve {spec.variant.value} p={spec.p:g} ended with status {status.value} after "
            f"{iterations} iterations (residual {pair.weak_residual:.2e})"
        )
    return pair

def _search_anchors(pair: EigenPair, grid: DomainGrid, opts: SolverOptions) -> EigenPair:
    """Move each P2MAX anchor to a neighbouring node while Lambda strictly decreases."""
    depth = distance_field(grid).interior_values
    best = pair
    total = pair.iterations
    moves = 0
    improved = True
    while improved and moves < opts.max_anchor_moves:
        improved = False
        for name in ("x1", "x2"):
            current = getattr(best.spec, name)
            candidates = sorted(neighbour_nodes(grid, current), key=lambda k: (-depth[k], k))
            for candidate in candidates:
                trial_spec = best.spec.with_anchors(**{name: int(candidate)})
                trial = _minimize(trial_spec, grid, best.u.values, best.v.values, opts)
                total += trial.iterations
                if not trial.converged:
                    logger.warning(f"Anchor move {name}: {current} -> {candidate} rejected, trial solve did not converge")
                    continue
                if trial.log_lambda < best.log_lambda - opts.tol:
                    logger.info(f"Moved anchor {name}: {current} -> {candidate} (lambda_root {trial.lambda_root:.10g})")
                    best = trial
                    moves += 1
                    improved = True
                    break
            if improved:
                break
    return best.model_copy(update={"iterations": total})

def solve(
    spec: ProblemSpec,
    grid: DomainGrid,
    init: InitKind = InitKind.CONES,
    opts: Optional[SolverOptions] = None,
    initial: Optional[Tuple[ScalarField, ScalarField]] = None,
) -> EigenPair:
    """Minimize the Rayleigh quotient; returns the normalized, rebalanced minimizer."""
    opts = opts or SolverOptions()
    validate_spec(spec, grid)
    init = InitKind(init)
    logger.info(f"Solving {spec.variant.value} with p={spec.p:g}, s={spec.s}, t={spec.t}, theta={spec.theta}")

    starts = [initial_pair(spec, grid, init, opts, initial)]
    for extra in range(1, opts.multistart):
        seeded = opts.model_copy(update={"seed": opts.seed + extra})
        starts.append(initial_pair(spec, grid, InitKind.RANDOM, seeded))

    pairs = []
    for u0, v0 in starts:
        pair = _minimize(spec, grid, u0, v0, opts)
        if spec.variant == Variant.P2MAX and opts.anchor_search:
            pair = _search_anchors(pair, grid, opts)
        pairs.append(pair)

    best = min(pairs, key=lambda pair: pair.log_lambda)
    if len(pairs) > 1:
        roots = [pair.lambda_root for pair in pairs]
        gap = (max(roots) - min(roots)) / min(roots)
        logger.info(f"Multi-start relative lambda_root gap: {gap:.3e} over {len(pairs)} starts")
        best = best.model_copy(update={"multistart_gap": gap})
    return best
