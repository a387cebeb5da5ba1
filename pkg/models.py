from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator
from typing import Optional, List, Tuple
from enum import Enum
import math

from config import Config

class MaskRule(str, Enum):
    INTERVAL = "interval"
    RECTANGLE = "rectangle"
    DISC = "disc"

class Variant(str, Enum):
    P1 = "P1"          # fixed anchor x0
    P1MAX = "P1MAX"    # x0 = argmax of v
    P2 = "P2"          # fixed anchors x1 != x2
    P2MAX = "P2MAX"    # x1, x2 = maxima of u and v

class AlphaRule(str, Enum):
    LINEAR = "linear"
    AFFINE = "affine"

class InitKind(str, Enum):
    CONES = "cones"
    RANDOM = "random"
    GIVEN = "given"

class SignConvention(str, Enum):
    MINUS = "minus"
    PLUS = "plus"

class SolverStatus(str, Enum):
    CONVERGED = "converged"
    MAX_ITER = "max_iter"
    STALLED = "stalled"
    DIVERGED = "diverged"

class GridSpec(BaseModel):
    """Serializable description of a DomainGrid."""
    model_config = ConfigDict(extra="forbid")

    dim: int = Field(..., description="Spatial dimension N")
    bounds: List[Tuple[float, float]] = Field(..., description="Bounding box, one (lo, hi) pair per axis")
    n: int = Field(..., description="Interior cells per axis")
    mask_rule: MaskRule = Field(..., description="Shape of the domain inside the bounding box")
    collar_width: Optional[float] = Field(None, description="Exterior band width; defaults to COLLAR_CELLS * h")
    disc_center: Optional[Tuple[float, float]] = Field(None, description="Disc center (disc masks only)")
    disc_radius: Optional[float] = Field(None, description="Disc radius (disc masks only)")

    @field_validator("dim")
    @classmethod
    def _check_dim(cls, value: int) -> int:
        if value not in (1, 2):
            raise ValueError("dim must be 1 or 2")
        return value

    @field_validator("n")
    @classmethod
    def _check_n(cls, value: int) -> int:
        if value < 8:
            raise ValueError("n must be at least 8 nodes per axis")
        return value

    @model_validator(mode="after")
    def _check_shape(self) -> "GridSpec":
        if len(self.bounds) != self.dim:
            raise ValueError(f"bounds must have {self.dim} (lo, hi) pairs")
        for lo, hi in self.bounds:
            if not (math.isfinite(lo) and math.isfinite(hi)) or lo >= hi:
                raise ValueError(f"degenerate bounds ({lo}, {hi})")
        if self.dim == 1 and self.mask_rule != MaskRule.INTERVAL:
            raise ValueError("1D grids use mask_rule 'interval'")
        if self.dim == 2 and self.mask_rule == MaskRule.INTERVAL:
            raise ValueError("2D grids use mask_rule 'rectangle' or 'disc'")
        return self

class ProblemSpec(BaseModel):
    """Parameters of one eigenvalue system; anchors are interior node indices."""
    model_config = ConfigDict(extra="forbid", frozen=True)

    variant: Variant = Field(default=Variant.P1, description="Eigenvalue system")
    s: float = Field(..., description="Fractional order of the u equation")
    t: float = Field(..., description="Fractional order of the v equation")
    theta: float = Field(..., description="Limit of alpha(p)/p")
    p: Optional[float] = Field(None, description="Exponent; None for sweep templates")
    x0: Optional[int] = Field(None, description="Anchor of v (P1)")
    x1: Optional[int] = Field(None, description="Anchor of u (P2, P2MAX)")
    x2: Optional[int] = Field(None, description="Anchor of v (P2, P2MAX)")
    alpha_rule: AlphaRule = Field(default=AlphaRule.LINEAR, description="Map p -> alpha(p)")

    @model_validator(mode="after")
    def _check_parameters(self) -> "ProblemSpec":
        if not 0 < self.s <= self.t < 1:
            raise ValueError("exponents must satisfy 0 < s <= t < 1")
        if not 0 < self.theta < 1:
            raise ValueError("theta must lie in (0, 1)")
        if self.variant == Variant.P1 and self.x0 is None:
            raise ValueError("variant P1 requires anchor x0")
        if self.variant in (Variant.P2, Variant.P2MAX) and (self.x1 is None or self.x2 is None):
            raise ValueError(f"variant {self.variant.value} requires anchors x1 and x2")
        if self.variant == Variant.P2 and self.x1 == self.x2:
            raise ValueError("variant P2 requires x1 != x2")
        if self.p is not None:
            if not self.p > 1:
                raise ValueError("p must be greater than 1")
            if not (self.alpha > 1 and self.beta > 1):
                raise ValueError(
                    f"p = {self.p} gives alpha = {self.alpha}, beta = {self.beta}; both must exceed 1"
                )
        return self

    def alpha_at(self, p: float) -> float:
        if self.alpha_rule == AlphaRule.AFFINE:
            return self.theta * (p - 2.0) + 1.0
        return self.theta * p

    @property
    def alpha(self) -> float:
        return self.alpha_at(self._require_p())

    @property
    def beta(self) -> float:
        # beta is derived so that alpha + beta = p holds exactly
        p = self._require_p()
        return p - self.alpha_at(p)

    def _require_p(self) -> float:
        if self.p is None:
            raise ValueError("problem spec has no exponent p")
        return self.p

    def with_p(self, p: float) -> "ProblemSpec":
        return self.model_copy(update={"p": float(p)}).validated()

    def with_anchors(self, **anchors: int) -> "ProblemSpec":
        return self.model_copy(update=anchors).validated()

    def validated(self) -> "ProblemSpec":
        # model_copy skips validation
        return ProblemSpec.model_validate(self.model_dump())

    def min_admissible_p(self, dim: int) -> float:
        bound = dim / self.s
        if self.alpha_rule == AlphaRule.LINEAR:
            bound = max(bound, 1.0 / self.theta, 1.0 / (1.0 - self.theta))
        else:
            bound = max(bound, 2.0)
        return bound

class SolverOptions(BaseModel):
    model_config = ConfigDict(extra="forbid")

    step: float = Field(default=Config.STEP, description="Relative step, as a fraction of the field sup-norm")
    max_iter: int = Field(default=Config.MAX_ITER, description="Iteration cap")
    tol: float = Field(default=Config.TOL, description="Tolerance on |delta log Q|")
    positivity: bool = Field(default=True, description="Clamp iterates at 0")
    init: InitKind = Field(default=InitKind.CONES, description="Initial pair")
    seed: int = Field(default=Config.SEED, description="Seed for random initialization")
    memory: int = Field(default=8, description="Quasi-Newton memory pairs")
    multistart: int = Field(default=1, description="Independent starts compared by sweep/solve")
    anchor_search: bool = Field(default=True, description="Relocate P2MAX anchors to neighbouring nodes")
    max_anchor_moves: int = Field(default=64, description="Cap on accepted anchor relocations")

    @field_validator("step")
    @classmethod
    def _check_step(cls, value: float) -> float:
        if not 0 < value <= 1:
            raise ValueError("step must lie in (0, 1]")
        return value

    @field_validator("max_iter", "memory", "multistart")
    @classmethod
    def _check_positive(cls, value: int) -> int:
        if value < 1:
            raise ValueError("must be at least 1")
        return value

    @field_validator("tol")
    @classmethod
    def _check_tol(cls, value: float) -> float:
        if not value > 0:
            raise ValueError("tol must be positive")
        return value

    @field_validator("max_anchor_moves")
    @classmethod
    def _check_moves(cls, value: int) -> int:
        if value < 0:
            raise ValueError("max_anchor_moves must be nonnegative")
        return value

class CheckResult(BaseModel):
    name: str = Field(..., description="Check identifier")
    passed: bool = Field(..., description="Check outcome")
    gap: float = Field(..., description="Measured gap; <= tolerance when passed")
    tolerance: float = Field(..., description="Tolerance applied")
    detail: str = Field(default="", description="Human-readable explanation")

class SweepRecord(BaseModel):
    p: float = Field(..., description="Exponent")
    lambda_root: float = Field(..., description="Lambda_1(p)^(1/p)")
    log_lambda: float = Field(..., description="log Lambda_1(p)")
    holder_u: float = Field(..., description="|u_p|_s")
    holder_v: float = Field(..., description="|v_p|_t")
    s_infty_norm: float = Field(..., description="Limit-normalization denominator of the pair")
    constraint: float = Field(..., description="S_p denominator of the pair")
    cone_lambda_root: float = Field(..., description="Quotient root of the cone test pair at this p")
    lower_bound: float = Field(..., description="Hoelder lower-bound ratio of the pair")
    max_u: List[float] = Field(..., description="Coordinates of the maximum of u")
    max_v: List[float] = Field(..., description="Coordinates of the maximum of v")
    anchors: List[int] = Field(default_factory=list, description="Resolved anchor nodes")
    converged: bool = Field(..., description="Solver convergence flag")
    status: SolverStatus = Field(..., description="Solver status")
    iterations: int = Field(..., description="Solver iterations")
    weak_residual: float = Field(..., description="Relative weak-form residual")
    multistart_gap: Optional[float] = Field(None, description="Relative lambda gap between starts")
    u: List[float] = Field(default_factory=list, description="u_p at interior nodes")
    v: List[float] = Field(default_factory=list, description="v_p at interior nodes")

class SweepReport(BaseModel):
    template: ProblemSpec = Field(..., description="Problem template (p unset)")
    grid: GridSpec = Field(..., description="Grid description")
    R: float = Field(..., description="Discrete inradius")
    limit: float = Field(..., description="Lambda_{1,infinity}")
    records: List[SweepRecord] = Field(default_factory=list, description="Records ordered by p")
    checks: List[CheckResult] = Field(default_factory=list, description="Limit checks run over the records")

    @model_validator(mode="after")
    def _check_order(self) -> "SweepReport":
        ps = [record.p for record in self.records]
        if any(b <= a for a, b in zip(ps, ps[1:])):
            raise ValueError("sweep records must be strictly increasing in p")
        return self

class ResidualReport(BaseModel):
    field_id: str = Field(..., description="Which field was evaluated (u or v)")
    sigma: float = Field(..., description="Hoelder order of the limit operator")
    nodes: List[int] = Field(..., description="Evaluation set (interior node indices)")
    values: List[float] = Field(..., description="Residual per evaluated node")
    sup_norm: float = Field(..., description="max |residual| over the evaluation set")
    sign_convention: Optional[SignConvention] = Field(None, description="Sign of the eigenvalue term (u only)")
    layer_k: int = Field(..., description="Boundary layer width in cells")
    excluded: int = Field(..., description="Number of interior nodes left out")

class CommandResult(BaseModel):
    success: bool = Field(..., description="Command success status")
    exit_code: int = Field(..., description="Process exit status")
    message: str = Field(..., description="Summary message")
    artifacts: List[str] = Field(default_factory=list, description="Files written")

# Run configuration (single JSON document)

class DomainBlock(BaseModel):
    model_config = ConfigDict(extra="forbid")

    dim: int = 1
    bounds: List[Tuple[float, float]] = Field(default_factory=lambda: [(0.0, 1.0)])
    n: int = 64
    mask_rule: MaskRule = MaskRule.INTERVAL
    collar_width: Optional[float] = None
    disc_center: Optional[Tuple[float, float]] = None
    disc_radius: Optional[float] = None

    def to_grid_spec(self) -> GridSpec:
        return GridSpec(**self.model_dump())

class ProblemBlock(BaseModel):
    model_config = ConfigDict(extra="forbid")

    variant: Variant = Variant.P1
    s: float = 0.5
    t: float = 0.5
    theta: float = 0.5
    p: Optional[float] = None
    x0: Optional[List[float]] = Field(None, description="Anchor coordinates, snapped to the nearest interior node")
    x1: Optional[List[float]] = None
    x2: Optional[List[float]] = None
    alpha_rule: AlphaRule = AlphaRule.LINEAR

    @field_validator("theta")
    @classmethod
    def _check_theta(cls, value: float) -> float:
        if not 0 < value < 1:
            raise ValueError("theta must lie in (0, 1)")
        return value

    @model_validator(mode="after")
    def _check_orders(self) -> "ProblemBlock":
        if not 0 < self.s <= self.t < 1:
            raise ValueError("exponents must satisfy 0 < s <= t < 1")
        return self

class SweepBlock(BaseModel):
    model_config = ConfigDict(extra="forbid")

    p_list: List[float] = Field(default_factory=lambda: [8.0, 16.0, 32.0, 64.0, 128.0])

    @field_validator("p_list")
    @classmethod
    def _check_p_list(cls, value: List[float]) -> List[float]:
        if not value:
            raise ValueError("p_list must not be empty")
        if any(b <= a for a, b in zip(value, value[1:])):
            raise ValueError("p_list must be strictly increasing")
        return value

class CheckBlock(BaseModel):
    model_config = ConfigDict(extra="forbid")

    limit_tol: float = Config.LIMIT_TOL
    profile_tol: float = Config.PROFILE_TOL
    layer_k: int = Config.LAYER_K
    sign_conventions: List[SignConvention] = Field(
        default_factory=lambda: [SignConvention.MINUS, SignConvention.PLUS]
    )
    enabled: Optional[List[str]] = Field(None, description="Checks that decide the exit status; None means all")

    @field_validator("limit_tol", "profile_tol")
    @classmethod
    def _check_tolerance(cls, value: float) -> float:
        if value < 0:
            raise ValueError("tolerances must be non-negative")
        return value

class OutputBlock(BaseModel):
    model_config = ConfigDict(extra="forbid")

    directory: str = "runs"
    formats: List[str] = Field(default_factory=lambda: ["json", "csv", "gnuplot"])

    @field_validator("formats")
    @classmethod
    def _check_formats(cls, value: List[str]) -> List[str]:
        unknown = [fmt for fmt in value if fmt not in ("json", "csv", "gnuplot")]
        if unknown:
            raise ValueError(f"unknown output formats: {', '.join(unknown)}")
        return value

class RunConfig(BaseModel):
    model_config = ConfigDict(extra="forbid")

    domain: DomainBlock = Field(default_factory=DomainBlock)
    problem: ProblemBlock = Field(default_factory=ProblemBlock)
    solver: SolverOptions = Field(default_factory=SolverOptions)
    sweep: SweepBlock = Field(default_factory=SweepBlock)
    checks: CheckBlock = Field(default_factory=CheckBlock)
    output: OutputBlock = Field(default_factory=OutputBlock)
