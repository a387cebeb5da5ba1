import logging
import math
from typing import List, Optional, Sequence, Tuple

import numpy as np

from config import Config
from domain import DistanceField, DomainGrid, cone_profile, distance_field, grid_from_spec
from eigensolver import (
    DenominatorCollapseError,
    EigenPair,
    default_apexes,
    denominator,
    rayleigh,
    solve,
    weak_residual,
)
from models import (
    CheckResult,
    InitKind,
    ProblemSpec,
    SolverOptions,
    SolverStatus,
    SweepRecord,
    SweepReport,
    Variant,
)
from nonlocal_ops import ScalarField, gagliardo, holder_seminorm

logger = logging.getLogger(__name__)

CONSTRAINT_TOL = 1e-9
UPPER_BOUND_SLACK = 1e-12
MIN_CHECK_RECORDS = 3

class InsufficientRecordsError(ValueError):
    """Raised when a sweep has too few converged records to check."""

def _check_exponents(s: float, t: float, theta: float) -> None:
    if not 0 < s <= t < 1:
        raise ValueError(f"exponents must satisfy 0 < s <= t < 1, got s={s}, t={t}")
    if not 0 < theta < 1:
        raise ValueError(f"theta must lie in (0, 1), got {theta}")

def lambda_infinity(s: float, t: float, theta: float, R: float) -> float:
    """Limit of Lambda_1(p)^(1/p): R^-(s*theta + (1-theta)*t)."""
    _check_exponents(s, t, theta)
    if not R > 0:
        raise ValueError(f"inradius must be positive, got {R}")
    return R ** -(s * theta + (1.0 - theta) * t)

def cone_pair(
    grid: DomainGrid,
    apex_u: int,
    apex_v: int,
    s: float,
    t: float,
    theta: float,
    R: Optional[float] = None,
) -> Tuple[ScalarField, ScalarField]:
    """Truncated cones of radius R with the common prefactor R^((theta-1)t - s*theta)."""
    _check_exponents(s, t, theta)
    R = distance_field(grid).R if R is None else R
    prefactor = R ** ((theta - 1.0) * t - s * theta)
    phi = ScalarField(grid=grid, values=prefactor * cone_profile(grid, apex_u, s, R))
    psi = ScalarField(grid=grid, values=prefactor * cone_profile(grid, apex_v, t, R))
    return phi, psi

def spec_cone_pair(spec: ProblemSpec, grid: DomainGrid, R: Optional[float] = None) -> Tuple[ScalarField, ScalarField]:
    apex_u, apex_v = default_apexes(spec, grid)
    return cone_pair(grid, apex_u, apex_v, spec.s, spec.t, spec.theta, R)

def s_infinity_denominator(u: ScalarField, v: ScalarField, spec: ProblemSpec) -> float:
    """Limit-constraint denominator of the pair for the spec's variant."""
    theta = spec.theta
    if spec.variant in (Variant.P2, Variant.P2MAX):
        u_part, v_part = abs(u.values[spec.x1]), abs(v.values[spec.x2])
    elif spec.variant == Variant.P1MAX:
        u_part, v_part = u.sup_norm, v.sup_norm
    else:
        u_part, v_part = u.sup_norm, abs(v.values[spec.x0])
    return u_part ** theta * v_part ** (1.0 - theta)

def g_infinity(u: ScalarField, v: ScalarField, spec: ProblemSpec, dist: DistanceField = None) -> float:
    den = s_infinity_denominator(u, v, spec)
    if den == 0:
        return math.inf
    return max(holder_seminorm(u, spec.s, dist), holder_seminorm(v, spec.t, dist)) / den

def holder_lower_bound(u: ScalarField, v: ScalarField, spec: ProblemSpec, dist: DistanceField = None) -> float:
    """|u|_s^theta |v|_t^(1-theta) over the limit denominator; never below lambda_infinity."""
    den = s_infinity_denominator(u, v, spec)
    if den == 0:
        return math.inf
    top = holder_seminorm(u, spec.s, dist) ** spec.theta * holder_seminorm(v, spec.t, dist) ** (1.0 - spec.theta)
    return top / den

def f_p(u: ScalarField, v: ScalarField, spec: ProblemSpec) -> float:
    """Q^(1/p) on the constraint set, +inf off it."""
    log_d = denominator(spec, u, v)
    if log_d.is_zero or abs(log_d.log_value) > CONSTRAINT_TOL:
        return math.inf
    _, root = rayleigh(spec, u, v)
    return root

def f_infinity(u: ScalarField, v: ScalarField, spec: ProblemSpec, dist: DistanceField = None) -> float:
    den = s_infinity_denominator(u, v, spec)
    if den == 0 or abs(math.log(den)) > CONSTRAINT_TOL:
        return math.inf
    return g_infinity(u, v, spec, dist)

def build_record(
    pair: EigenPair,
    dist: DistanceField,
    cone_root: float,
    multistart_gap: Optional[float] = None,
) -> SweepRecord:
    spec, grid = pair.spec, pair.grid
    pts = grid.interior_points
    return SweepRecord(
        p=spec.p,
        lambda_root=pair.lambda_root,
        log_lambda=pair.log_lambda,
        holder_u=holder_seminorm(pair.u, spec.s, dist),
        holder_v=holder_seminorm(pair.v, spec.t, dist),
        s_infty_norm=s_infinity_denominator(pair.u, pair.v, spec),
        constraint=math.exp(pair.denominator.log),
        cone_lambda_root=cone_root,
        lower_bound=holder_lower_bound(pair.u, pair.v, spec, dist),
        max_u=pts[pair.u.argmax].tolist(),
        max_v=pts[pair.v.argmax].tolist(),
        anchors=[a for a in (spec.x0, spec.x1, spec.x2) if a is not None],
        converged=pair.converged,
        status=pair.status,
        iterations=pair.iterations,
        weak_residual=pair.weak_residual,
        multistart_gap=multistart_gap if multistart_gap is not None else pair.multistart_gap,
        u=pair.u.to_json(),
        v=pair.v.to_json(),
    )

def _check_p_list(p_list: Sequence[float]) -> List[float]:
    p_list = [float(p) for p in p_list]
    if not p_list:
        raise ValueError("p_list must not be empty")
    if any(b <= a for a, b in zip(p_list, p_list[1:])):
        raise ValueError("p_list must be strictly increasing")
    return p_list

def sweep(
    template: ProblemSpec,
    grid: DomainGrid,
    p_list: Sequence[float],
    opts: Optional[SolverOptions] = None,
) -> SweepReport:
    """Solve at each p, warm-starting from the previous pair; checks are left empty."""
    opts = opts or SolverOptions()
    p_list = _check_p_list(p_list)
    single = opts.model_copy(update={"multistart": 1})
    dist = distance_field(grid)
    limit = lambda_infinity(template.s, template.t, template.theta, dist.R)
    logger.info(f"Sweeping {template.variant.value} over p={p_list}; limit lambda_infinity={limit:.10g}")

    records: List[SweepRecord] = []
    previous: Optional[EigenPair] = None
    for p in p_list:
        spec = template.with_p(p)
        if previous is not None and spec.variant == Variant.P2MAX:
            spec = spec.with_anchors(x1=previous.spec.x1, x2=previous.spec.x2)

        cones = spec_cone_pair(spec, grid, dist.R)
        cone_log_q, cone_root = rayleigh(spec, *cones)
        start = cones
        if previous is not None:
            warm = (previous.u, previous.v)
            try:
                warm_log_q, _ = rayleigh(spec, *warm)
            except DenominatorCollapseError:
                warm_log_q = math.inf
            if warm_log_q <= cone_log_q:
                start = warm
            else:
                logger.info(f"p={p:g}: cone start beats warm start ({cone_log_q:.6g} < {warm_log_q:.6g})")

        pair = solve(spec, grid, InitKind.GIVEN, single, initial=start)
        gap = None
        if opts.multistart > 1 and start is not cones:
            cold = solve(spec, grid, InitKind.GIVEN, single, initial=cones)
            gap = abs(cold.lambda_root - pair.lambda_root) / min(cold.lambda_root, pair.lambda_root)
            if cold.log_lambda < pair.log_lambda:
                pair = cold

        record = build_record(pair, dist, cone_root, gap)
        records.append(record)
        logger.info(
            f"p={p:g}: lambda_root={record.lambda_root:.10g} holder=({record.holder_u:.6g}, "
            f"{record.holder_v:.6g}) status={record.status.value}"
        )
        if not pair.converged:
            logger.warning(f"p={p:g} did not converge; record excluded from checks")
        previous = pair

    return SweepReport(
        template=template,
        grid=grid.describe(),
        R=dist.R,
        limit=limit,
        records=records,
    )

def cone_sweep(template: ProblemSpec, grid: DomainGrid, p_list: Sequence[float]) -> SweepReport:
    """Report whose every record is the cone test pair itself (no solving)."""
    p_list = _check_p_list(p_list)
    dist = distance_field(grid)
    limit = lambda_infinity(template.s, template.t, template.theta, dist.R)
    records = []
    for p in p_list:
        spec = template.with_p(p)
        phi, psi = spec_cone_pair(spec, grid, dist.R)
        log_q, root = rayleigh(spec, phi, psi)
        pair = EigenPair(
            spec=spec,
            u=phi,
            v=psi,
            eigenvalue=math.exp(log_q) if log_q < 700.0 else math.inf,
            log_lambda=log_q,
            numerator_parts=(
                gagliardo(phi, spec.s, p)[0].shifted(-math.log(p)),
                gagliardo(psi, spec.t, p)[0].shifted(-math.log(p)),
            ),
            denominator=denominator(spec, phi, psi),
            converged=True,
            status=SolverStatus.CONVERGED,
        )
        pair = pair.model_copy(update={"weak_residual": weak_residual(spec, pair)})
        records.append(build_record(pair, dist, root))
    return SweepReport(template=template, grid=grid.describe(), R=dist.R, limit=limit, records=records)

def _check(name: str, gap: float, tolerance: float, detail: str, passed: Optional[bool] = None) -> CheckResult:
    ok = gap <= tolerance if passed is None else passed
    return CheckResult(name=name, passed=bool(ok), gap=float(gap), tolerance=float(tolerance), detail=detail)

def thm_checks(
    report: SweepReport,
    limit_tol: Optional[float] = None,
    profile_tol: Optional[float] = None,
) -> List[CheckResult]:
    """Limit checks over the converged records of a sweep."""
    limit_tol = Config.LIMIT_TOL if limit_tol is None else limit_tol
    profile_tol = Config.PROFILE_TOL if profile_tol is None else profile_tol
    records = [record for record in report.records if record.converged]
    if len(records) < MIN_CHECK_RECORDS:
        raise InsufficientRecordsError(
            f"need at least {MIN_CHECK_RECORDS} converged records, got {len(records)}"
        )
    last = records[-1]
    limit = report.limit
    checks: List[CheckResult] = []

    negative = max(0.0, -min(min(last.u), min(last.v)))
    norm_gap = abs(last.s_infty_norm - 1.0)
    checks.append(_check(
        "nonnegativity_normalization",
        norm_gap,
        limit_tol,
        f"min value {-negative:.3e}, limit denominator {last.s_infty_norm:.10g}",
        passed=negative <= 1e-12 and norm_gap <= limit_tol,
    ))

    constraint_gap = max(abs(record.constraint - 1.0) for record in records)
    checks.append(_check("constraint", constraint_gap, CONSTRAINT_TOL, "max |S_p - 1| over converged records"))

    errors = [abs(record.lambda_root - limit) for record in records[-MIN_CHECK_RECORDS:]]
    monotone = all(b <= a + 1e-12 for a, b in zip(errors, errors[1:]))
    checks.append(_check(
        "eigenvalue_limit",
        errors[-1],
        limit_tol,
        f"lambda_root={last.lambda_root:.10g} vs limit {limit:.10g}; tail errors {[round(e, 6) for e in errors]}",
        passed=errors[-1] <= limit_tol and monotone,
    ))

    holder_max = max(last.holder_u, last.holder_v)
    checks.append(_check(
        "holder_limit",
        abs(holder_max - limit),
        limit_tol,
        f"max(|u|_s, |v|_t)={holder_max:.10g} vs limit {limit:.10g}",
    ))

    overshoot = max(
        (record.lambda_root - record.cone_lambda_root) / record.cone_lambda_root for record in records
    )
    checks.append(_check(
        "upper_bound",
        max(overshoot, 0.0),
        UPPER_BOUND_SLACK,
        "lambda_root <= cone quotient root at every p",
        passed=overshoot <= UPPER_BOUND_SLACK,
    ))

    shortfall = max((limit - record.lower_bound) / limit for record in records)
    checks.append(_check(
        "lower_bound",
        max(shortfall, 0.0),
        UPPER_BOUND_SLACK,
        "Hoelder lower-bound ratio >= limit at every p",
        passed=shortfall <= UPPER_BOUND_SLACK,
    ))

    variant = report.template.variant
    if variant in (Variant.P2, Variant.P2MAX):
        grid = grid_from_spec(report.grid)
        pts = grid.interior_points
        if len(records) >= 2:
            before, after = records[-2], records[-1]
            shift = max(
                float(np.linalg.norm(np.subtract(after.max_u, before.max_u))),
                float(np.linalg.norm(np.subtract(after.max_v, before.max_v))),
            )
            checks.append(_check(
                "maxima_stability",
                shift,
                2.0 * grid.h + 1e-12,
                f"maxima moved by {shift:.6g} between p={before.p:g} and p={after.p:g}",
            ))
        if report.template.s == report.template.t:
            dist = distance_field(grid)
            bound = (dist.interior_values / report.R) ** report.template.s
            excess = max(float(np.max(np.asarray(last.u) - bound)), float(np.max(np.asarray(last.v) - bound)))
            checks.append(_check(
                "distance_profile",
                max(excess, 0.0),
                profile_tol,
                f"max excess over (d/R)^s is {excess:.6g} at p={last.p:g} on {pts.shape[0]} nodes",
            ))

    passed = sum(check.passed for check in checks)
    logger.info(f"Checks: {passed}/{len(checks)} passed")
    for check in checks:
        if not check.passed:
            logger.warning(f"Check {check.name} failed: gap {check.gap:.6g} > tolerance {check.tolerance:.6g}")
    return checks
