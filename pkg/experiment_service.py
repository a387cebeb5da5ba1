from typing import List, Optional, Dict, Any, Tuple
import logging
import math
from pydantic import ValidationError
from config import Config
from artifact_store import ArtifactStore
from asymptotics import (
    InsufficientRecordsError,
    cone_pair,
    g_infinity,
    holder_lower_bound,
    lambda_infinity,
    s_infinity_denominator,
    sweep,
    thm_checks,
)
from domain import DomainGrid, distance_field, grid_from_spec, inradius_nodes, snap_to_node
from eigensolver import EigenPair, SolverError, default_apexes, rayleigh, solve
from models import (
    CheckResult,
    CommandResult,
    ProblemSpec,
    RunConfig,
    SweepRecord,
    SweepReport,
    Variant,
)
from nonlocal_ops import ScalarField, holder_seminorm
from oracles import selftest_suites
from viscosity import EmptyEvaluationSetError, best_convention, residual_u, residual_v

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_FAILED = 1
EXIT_INVALID = 2

# residual_v is compared between these exponents when a sweep contains both
TREND_EXPONENTS = (32.0, 128.0)

def trend_pair(entries: List[Dict[str, Any]]) -> Optional[Tuple[Dict[str, Any], Dict[str, Any]]]:
    """The (earlier, later) residual entries a trend is judged on, or None for a single record"""
    by_p = {entry["p"]: entry for entry in entries}
    early, late = TREND_EXPONENTS
    if early in by_p and late in by_p:
        return by_p[early], by_p[late]
    if len(entries) < 2:
        return None
    return entries[-2], entries[-1]

def describe_validation_error(error: ValidationError) -> str:
    return "; ".join(
        f"{'.'.join(str(part) for part in item['loc']) or 'config'}: {item['msg']}" for item in error.errors()
    )

class ExperimentService:
    def __init__(self, config: RunConfig, output_dir: Optional[str] = None):
        self.config = config
        # --output-dir beats the environment, which beats the JSON value
        directory = output_dir or Config.OUTPUT_DIR or config.output.directory
        self.store = ArtifactStore(directory)

    def build_grid(self) -> DomainGrid:
        grid = grid_from_spec(self.config.domain.to_grid_spec())
        logger.info(f"Built {grid.mask_rule.value} grid: n={grid.n}, h={grid.h:.6g}, interior nodes={grid.interior_count}")
        return grid

    def build_spec(self, grid: DomainGrid, p: Optional[float] = None) -> ProblemSpec:
        """Problem spec with anchor coordinates snapped to interior nodes"""
        block = self.config.problem
        anchors: Dict[str, Optional[int]] = {}
        for name in ("x0", "x1", "x2"):
            coords = getattr(block, name)
            anchors[name] = snap_to_node(grid, coords) if coords is not None else None
        if block.variant == Variant.P1 and anchors["x0"] is None:
            anchors["x0"] = int(inradius_nodes(grid)[0])
            logger.info(f"Anchor x0 defaults to inradius node {anchors['x0']}")
        spec = ProblemSpec(
            variant=block.variant,
            s=block.s,
            t=block.t,
            theta=block.theta,
            p=p,
            alpha_rule=block.alpha_rule,
            **anchors,
        )
        return spec

    def _wants(self, fmt: str) -> bool:
        return fmt in self.config.output.formats

    def _write_pair(self, pair: EigenPair, suffix: str = "") -> None:
        if self._wants("json"):
            self.store.write_json(f"eigenpair{suffix}", pair.summary())
        if self._wants("csv"):
            self.store.write_field(f"u{suffix}", pair.u)
            self.store.write_field(f"v{suffix}", pair.v)

    def run_solve(self) -> CommandResult:
        """Solve one eigenvalue problem at the configured p"""
        try:
            p = self.config.problem.p
            if p is None:
                raise ValueError("problem.p is required for solve (or pass --p)")
            grid = self.build_grid()
            spec = self.build_spec(grid, p)
            pair = solve(spec, grid, init=self.config.solver.init, opts=self.config.solver)
            self._write_pair(pair)

            if pair.converged:
                message = (
                    f"Converged: lambda={pair.eigenvalue:.10g}, lambda_root={pair.lambda_root:.10g}, "
                    f"{pair.iterations} iterations, residual {pair.weak_residual:.2e}"
                )
                return self._result(True, EXIT_OK, message)
            message = (
                f"Not converged ({pair.status.value}) after {pair.iterations} iterations; "
                f"residual {pair.weak_residual:.2e}"
            )
            return self._result(False, EXIT_FAILED, message)
        except (ValueError, ValidationError) as e:
            return self._invalid("solve", e)
        except SolverError as e:
            logger.error(f"Solver failure: {str(e)}")
            return self._result(False, EXIT_FAILED, f"Solve failed: {str(e)}")

    def run_sweep(self) -> CommandResult:
        """Sweep p, then run the limit checks"""
        try:
            grid = self.build_grid()
            template = self.build_spec(grid)
            report = sweep(template, grid, self.config.sweep.p_list, self.config.solver)
        except (ValueError, ValidationError) as e:
            return self._invalid("sweep", e)
        except SolverError as e:
            logger.error(f"Solver failure during sweep: {str(e)}")
            return self._result(False, EXIT_FAILED, f"Sweep failed: {str(e)}")

        checks_block = self.config.checks
        try:
            checks = thm_checks(report, checks_block.limit_tol, checks_block.profile_tol)
        except InsufficientRecordsError as e:
            logger.error(f"Cannot run checks: {str(e)}")
            checks = [CheckResult(name="records", passed=False, gap=math.inf, tolerance=0.0, detail=str(e))]
        report = report.model_copy(update={"checks": checks})
        self._write_sweep(report)

        enabled = checks_block.enabled
        gating = [check for check in checks if enabled is None or check.name in enabled or check.name == "records"]
        failed = [check.name for check in gating if not check.passed]
        if failed:
            gaps = ", ".join(f"{check.name} gap={check.gap:.4g}" for check in gating if not check.passed)
            return self._result(False, EXIT_FAILED, f"Checks failed: {gaps}")
        return self._result(True, EXIT_OK, f"All {len(gating)} checks passed; final lambda_root={report.records[-1].lambda_root:.10g}")

    def _write_sweep(self, report: SweepReport) -> None:
        records = report.records
        if self._wants("json"):
            self.store.write_json("sweep", report.model_dump(mode="json"))
            self.store.write_json("checks", {"checks": [check.model_dump(mode="json") for check in report.checks]})
        if self._wants("csv"):
            header = [
                "p", "lambda_root", "holder_u", "holder_v", "constraint",
                "s_infty_norm", "cone_lambda_root", "lower_bound", "weak_residual", "iterations", "converged",
            ]
            rows = [
                [r.p, r.lambda_root, r.holder_u, r.holder_v, r.constraint, r.s_infty_norm,
                 r.cone_lambda_root, r.lower_bound, r.weak_residual, r.iterations, int(r.converged)]
                for r in records
            ]
            self.store.write_table("sweep", header, rows)
            grid = grid_from_spec(report.grid)
            last = records[-1]
            self.store.write_field("u_final", ScalarField(grid=grid, values=last.u))
            self.store.write_field("v_final", ScalarField(grid=grid, values=last.v))
        if self._wants("gnuplot"):
            ps = [r.p for r in records]
            self.store.write_gnuplot("lambda_root", ps, [r.lambda_root for r in records], "lambda_root")
            self.store.write_gnuplot("holder_max", ps, [max(r.holder_u, r.holder_v) for r in records], "holder_max")

    def run_cones(self) -> CommandResult:
        """Emit the cone test pair and its identities"""
        try:
            grid = self.build_grid()
            template = self.build_spec(grid)
        except (ValueError, ValidationError) as e:
            return self._invalid("cones", e)

        dist = distance_field(grid)
        apex_u, apex_v = default_apexes(template, grid)
        phi, psi = cone_pair(grid, apex_u, apex_v, template.s, template.t, template.theta, dist.R)
        s, t, theta, R = template.s, template.t, template.theta, dist.R
        prefactor = R ** ((theta - 1.0) * t - s * theta)
        limit = lambda_infinity(s, t, theta, R)

        sup_expected = R ** ((theta - 1.0) * (t - s))
        sup_gap = abs(phi.sup_norm - sup_expected) / sup_expected
        unit_value = phi.sup_norm ** theta * psi.values[apex_v] ** (1.0 - theta)
        checks = [
            CheckResult(name="cone_sup_norm", passed=sup_gap <= 1e-12, gap=sup_gap, tolerance=1e-12,
                        detail=f"||phi||_inf={phi.sup_norm:.17g}, expected {sup_expected:.17g}"),
            CheckResult(name="cone_unit_denominator", passed=abs(unit_value - 1.0) <= 1e-12,
                        gap=abs(unit_value - 1.0), tolerance=1e-12,
                        detail=f"||phi||^theta psi(x0)^(1-theta)={unit_value:.17g}"),
        ]
        payload: Dict[str, Any] = {
            "grid": grid.describe().model_dump(mode="json"),
            "apexes": [apex_u, apex_v],
            "R": R,
            "prefactor": prefactor,
            "lambda_infinity": limit,
            "holder_phi": holder_seminorm(phi, s, dist),
            "holder_psi": holder_seminorm(psi, t, dist),
            "g_infinity": g_infinity(phi, psi, template, dist),
            "checks": [check.model_dump(mode="json") for check in checks],
        }
        rows = []
        for p in self.config.sweep.p_list:
            try:
                spec = template.with_p(p)
                _, root = rayleigh(spec, phi, psi)
                bound = holder_lower_bound(phi, psi, spec, dist)
                rows.append([p, root, bound, s_infinity_denominator(phi, psi, spec)])
            except ValueError as e:
                logger.warning(f"Skipping p={p} for the cone table: {str(e)}")
        payload["quotient_roots"] = [{"p": row[0], "cone_lambda_root": row[1]} for row in rows]

        if self._wants("json"):
            self.store.write_json("cones", payload)
        if self._wants("csv"):
            self.store.write_field("phi", phi)
            self.store.write_field("psi", psi)
            self.store.write_table("cones", ["p", "cone_lambda_root", "lower_bound", "s_infty_norm"], rows)
        if self._wants("gnuplot") and rows:
            self.store.write_gnuplot("cone_lambda_root", [r[0] for r in rows], [r[1] for r in rows], "cone_lambda_root")

        passed = all(check.passed for check in checks)
        message = f"Cone identities {'hold' if passed else 'FAILED'}; lambda_infinity={limit:.10g}"
        return self._result(passed, EXIT_OK if passed else EXIT_FAILED, message)

    def run_viscosity_check(self, source_dir: Optional[str] = None) -> CommandResult:
        """Limit-equation residuals for the fields of a stored sweep"""
        source = ArtifactStore(source_dir) if source_dir else self.store
        try:
            data = source.read_json("sweep")
            if data is None:
                raise ValueError(f"no sweep.json in {source.directory}")
            report = SweepReport.model_validate(data)
        except (ValueError, ValidationError) as e:
            return self._invalid("viscosity-check", e)

        grid = grid_from_spec(report.grid)
        template = report.template
        layer_k = self.config.checks.layer_k
        records = [record for record in report.records if record.converged]
        if not records:
            return self._result(False, EXIT_FAILED, "No converged records to evaluate")

        entries: List[Dict[str, Any]] = []
        try:
            for record in records:
                entries.append(self._residuals(template, grid, record, report.limit, layer_k))
        except EmptyEvaluationSetError as e:
            logger.error(f"Residual evaluation failed: {str(e)}")
            return self._result(False, EXIT_FAILED, f"Residual evaluation failed: {str(e)}")

        last = entries[-1]
        trends: Dict[str, bool] = {}
        compared = trend_pair(entries)
        if compared is not None:
            early, late = compared
            trends["residual_v_trend"] = late["residual_v"]["sup_norm"] <= early["residual_v"]["sup_norm"]
            logger.info(f"residual_v trend judged between p={early['p']:g} and p={late['p']:g}")
        if len(entries) >= 2 and "residual_u_best" in last:
            trends["residual_u_trend"] = (
                last["residual_u_best"]["sup_norm"] <= entries[-2]["residual_u_best"]["sup_norm"]
            )

        if self._wants("json"):
            self.store.write_json("viscosity", {
                "limit": report.limit,
                "records": entries,
                "trends": trends,
                "trend_p": [entry["p"] for entry in compared] if compared else [],
            })
        if self._wants("csv"):
            for key in ("residual_v", "residual_u_minus", "residual_u_plus"):
                if key in last:
                    rows = list(zip(last[key]["nodes"], last[key]["values"]))
                    self.store.write_table(f"{key}_p{last['p']:g}", ["node", "residual"], rows)

        summary = ", ".join(f"{name}={'ok' if ok else 'no'}" for name, ok in trends.items())
        return self._result(True, EXIT_OK, f"Residuals evaluated for {len(entries)} records ({summary})")

    def _residuals(self, template: ProblemSpec, grid: DomainGrid, record: SweepRecord, limit: float, layer_k: int) -> Dict[str, Any]:
        u = ScalarField(grid=grid, values=record.u)
        v = ScalarField(grid=grid, values=record.v)
        entry: Dict[str, Any] = {"p": record.p}
        if template.variant in (Variant.P2, Variant.P2MAX):
            x1, x2 = record.anchors[-2], record.anchors[-1]
            entry["residual_u"] = residual_v(u, x1, template.s, layer_k, field_id="u").model_dump(mode="json")
            entry["residual_v"] = residual_v(v, x2, template.t, layer_k).model_dump(mode="json")
            return entry

        x0 = record.anchors[0] if record.anchors else v.argmax
        entry["residual_v"] = residual_v(v, x0, template.t, layer_k).model_dump(mode="json")
        reports = []
        for sign in self.config.checks.sign_conventions:
            report = residual_u(u, float(v.values[x0]), template.s, template.theta, limit, layer_k, sign, exclude=[x0])
            entry[f"residual_u_{sign.value}"] = report.model_dump(mode="json")
            reports.append(report)
        if reports:
            best = best_convention(reports)
            entry["residual_u_best"] = best.model_dump(mode="json")
        return entry

    def run_selftest(self, seed: Optional[int] = None) -> CommandResult:
        """Oracle-equivalence and gradient suites"""
        try:
            checks = selftest_suites(Config.SEED if seed is None else seed)
        except Exception as e:
            logger.error(f"Selftest crashed: {str(e)}")
            return self._result(False, EXIT_FAILED, f"Selftest crashed: {str(e)}")
        if self._wants("json"):
            self.store.write_json("selftest", {"checks": [check.model_dump(mode="json") for check in checks]})
        failed = [check.name for check in checks if not check.passed]
        if failed:
            return self._result(False, EXIT_FAILED, f"Selftest failed: {', '.join(failed)}")
        return self._result(True, EXIT_OK, f"Selftest passed ({len(checks)} checks)")

    def _invalid(self, command: str, error: Exception) -> CommandResult:
        detail = describe_validation_error(error) if isinstance(error, ValidationError) else str(error)
        logger.error(f"Invalid input for {command}: {detail}")
        return self._result(False, EXIT_INVALID, f"Invalid input: {detail}")

    def _result(self, success: bool, exit_code: int, message: str) -> CommandResult:
        return CommandResult(success=success, exit_code=exit_code, message=message, artifacts=list(self.store.written))
