"""Discrete Gagliardo energies, Hoelder seminorms and the fractional p-Laplacian.

All p-powered sums are accumulated in the log domain with
``scipy.special.logsumexp`` so exponents up to several hundred stay finite.
Fields hold one value per interior node; non-interior nodes are zero.
"""
import logging
import math
from typing import List, Tuple, Union

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator
from scipy.special import logsumexp

from domain import DomainGrid, DistanceField, check_interior_index, distance_field

logger = logging.getLogger(__name__)

# largest log magnitude that exp() still returns as a finite float64
LOG_FLOAT_MAX = math.log(np.finfo(float).max) - 1.0

class OperatorOverflowError(ArithmeticError):
    """Raised when a scaled operator value cannot be represented as a plain float."""

class ScalarField(BaseModel):
    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    grid: DomainGrid = Field(..., description="Grid the field lives on")
    values: np.ndarray = Field(..., description="One value per interior node")

    @field_validator("values", mode="before")
    @classmethod
    def _as_array(cls, value) -> np.ndarray:
        arr = np.array(value, dtype=float).reshape(-1)
        arr.setflags(write=False)
        return arr

    @model_validator(mode="after")
    def _check_values(self) -> "ScalarField":
        if self.values.size != self.grid.interior_count:
            raise ValueError(
                f"field has {self.values.size} values, grid has {self.grid.interior_count} interior nodes"
            )
        if not np.all(np.isfinite(self.values)):
            raise ValueError("field values must be finite")
        return self

    @classmethod
    def zeros(cls, grid: DomainGrid) -> "ScalarField":
        return cls(grid=grid, values=np.zeros(grid.interior_count))

    def with_values(self, values: np.ndarray) -> "ScalarField":
        return ScalarField(grid=self.grid, values=values)

    def scaled(self, factor: float) -> "ScalarField":
        return self.with_values(factor * self.values)

    def __neg__(self) -> "ScalarField":
        return self.scaled(-1.0)

    @property
    def sup_norm(self) -> float:
        return float(np.max(np.abs(self.values))) if self.values.size else 0.0

    @property
    def argmax(self) -> int:
        # np.argmax returns the first maximizer
        return int(np.argmax(self.values))

    def to_csv_rows(self) -> List[List[float]]:
        pts = self.grid.interior_points
        return [list(map(float, pts[k])) + [float(self.values[k])] for k in range(self.values.size)]

    def to_json(self) -> List[float]:
        return [float(value) for value in self.values]

class LogEnergy(BaseModel):
    """Nonnegative quantity carried as its natural log."""
    model_config = ConfigDict(frozen=True)

    log_value: float = Field(default=0.0, description="Natural log of the energy")
    is_zero: bool = Field(default=False, description="Energy is exactly zero")

    @model_validator(mode="after")
    def _check_finite(self) -> "LogEnergy":
        if not self.is_zero and not math.isfinite(self.log_value):
            raise ValueError(f"log_value must be finite for a nonzero energy, got {self.log_value}")
        return self

    @classmethod
    def from_log(cls, log_value: float) -> "LogEnergy":
        if log_value == -math.inf:
            return cls.zero()
        return cls(log_value=float(log_value))

    @classmethod
    def zero(cls) -> "LogEnergy":
        return cls(log_value=0.0, is_zero=True)

    @property
    def log(self) -> float:
        return -math.inf if self.is_zero else self.log_value

    @property
    def value(self) -> float:
        if self.is_zero:
            return 0.0
        return math.exp(self.log_value) if self.log_value < LOG_FLOAT_MAX else math.inf

    def root(self, p: float) -> float:
        return 0.0 if self.is_zero else math.exp(self.log_value / p)

    def shifted(self, delta: float) -> "LogEnergy":
        return self if self.is_zero else LogEnergy(log_value=self.log_value + delta)

class ScaledField(BaseModel):
    """Operator values too large for float64: value[k] = mantissa[k] * exp(log_scale[k])."""
    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    grid: DomainGrid
    mantissa: np.ndarray = Field(..., description="Signed factor per node, zero where the operator vanishes")
    log_scale: np.ndarray = Field(..., description="Per-node log scaling factor")

    @model_validator(mode="after")
    def _check_shapes(self) -> "ScaledField":
        if self.mantissa.shape != self.log_scale.shape or self.mantissa.size != self.grid.interior_count:
            raise ValueError("mantissa and log_scale need one entry per interior node")
        return self

    @classmethod
    def from_log(cls, grid: DomainGrid, log_mag: np.ndarray, sign: np.ndarray) -> "ScaledField":
        finite = np.isfinite(log_mag)
        log_scale = np.where(finite, np.floor(np.where(finite, log_mag, 0.0)), 0.0)
        with np.errstate(invalid="ignore"):
            mantissa = np.where(finite, sign * np.exp(log_mag - log_scale), 0.0)
        return cls(grid=grid, mantissa=mantissa, log_scale=log_scale)

    @property
    def log_magnitude(self) -> np.ndarray:
        """log |value| per node; -inf where the operator vanishes."""
        with np.errstate(divide="ignore"):
            return np.where(self.mantissa != 0, np.log(np.abs(self.mantissa)) + self.log_scale, -np.inf)

    def to_field(self) -> ScalarField:
        overflow = self.log_magnitude >= LOG_FLOAT_MAX
        if overflow.any():
            raise OperatorOverflowError(
                f"{int(overflow.sum())} operator values reach exp({float(self.log_magnitude.max()):.1f}), beyond float range"
            )
        return ScalarField(grid=self.grid, values=self.mantissa * np.exp(self.log_scale))

def _check_order(sigma: float) -> None:
    if not 0 < sigma < 1:
        raise ValueError(f"order must lie in (0, 1), got {sigma}")

def _check_exponent(p: float) -> None:
    if not p > 1:
        raise ValueError(f"exponent p must exceed 1, got {p}")

def log_abs(values: np.ndarray) -> np.ndarray:
    with np.errstate(divide="ignore"):
        return np.log(np.abs(values))

def log_tail(grid: DomainGrid, sigma: float, p: float) -> np.ndarray:
    """log of the exterior tail weight T(x) at each interior node.

    1D uses the closed form over both half-lines. 2D sums every non-interior
    grid node explicitly and adds the radial bound beyond the collar box.
    """
    q = sigma * p
    if grid.dim == 1:
        (a, b), = grid.bounds
        x = grid.interior_points[:, 0]
        return np.logaddexp(-q * np.log(x - a), -q * np.log(b - x)) - math.log(q)
    explicit = logsumexp(-(grid.dim + q) * grid.exterior_log_distance + grid.log_cell_volume, axis=1)
    radial = math.log(2.0 * math.pi) - q * np.log(grid.outer_radius) - math.log(q)
    return np.logaddexp(explicit, radial)

def _log_kernel(grid: DomainGrid, sigma: float, p: float) -> np.ndarray:
    # -inf on the diagonal
    return -(grid.dim + sigma * p) * grid.pair_log_distance

def log_energy(grid: DomainGrid, values: np.ndarray, sigma: float, p: float) -> float:
    """log of the discrete Gagliardo energy; -inf for the zero field."""
    lh = grid.log_cell_volume
    diff = log_abs(values[:, None] - values[None, :])
    with np.errstate(invalid="ignore"):
        pairs = p * diff + _log_kernel(grid, sigma, p) + 2.0 * lh
    pairs[~np.isfinite(pairs)] = -np.inf
    tails = math.log(2.0) + p * log_abs(values) + log_tail(grid, sigma, p) + lh
    with np.errstate(divide="ignore"):
        return float(logsumexp(np.concatenate([pairs.ravel(), tails])))

def log_operator(grid: DomainGrid, values: np.ndarray, sigma: float, p: float) -> Tuple[np.ndarray, np.ndarray]:
    """log |L u| and sign(L u) per interior node."""
    lh = grid.log_cell_volume
    delta = values[:, None] - values[None, :]
    with np.errstate(invalid="ignore"):
        pairs = (p - 1.0) * log_abs(delta) + _log_kernel(grid, sigma, p) + lh
        tail = (p - 1.0) * log_abs(values) + log_tail(grid, sigma, p)
    pairs[~np.isfinite(pairs)] = -np.inf
    tail[~np.isfinite(tail)] = -np.inf
    terms = np.concatenate([pairs, tail[:, None]], axis=1)
    signs = np.concatenate([np.sign(delta), np.sign(values)[:, None]], axis=1)
    with np.errstate(divide="ignore"):
        log_sum, sign = logsumexp(terms, axis=1, b=signs, return_sign=True)
    return log_sum + math.log(2.0), np.where(np.isfinite(log_sum), sign, 0.0)

def gagliardo(field: ScalarField, sigma: float, p: float) -> Tuple[LogEnergy, float]:
    """Energy [u]^p (as LogEnergy) and seminorm [u] of a field."""
    _check_order(sigma)
    _check_exponent(p)
    energy = LogEnergy.from_log(log_energy(field.grid, field.values, sigma, p))
    return energy, energy.root(p)

def frac_p_laplacian(field: ScalarField, sigma: float, p: float) -> Union[ScalarField, ScaledField]:
    """Discrete L_{sigma,p} u; a ScaledField when values leave the float range."""
    _check_order(sigma)
    _check_exponent(p)
    log_mag, sign = log_operator(field.grid, field.values, sigma, p)
    finite = np.isfinite(log_mag)
    if not finite.any():
        return ScalarField.zeros(field.grid)
    top = float(log_mag[finite].max())
    if top < LOG_FLOAT_MAX:
        return field.with_values(sign * np.exp(log_mag))
    logger.warning(f"Operator values reach exp({top:.1f}); returning per-node scaled representation")
    return ScaledField.from_log(field.grid, log_mag, sign)

def holder_seminorm(field: ScalarField, sigma: float, dist: DistanceField = None) -> float:
    """max of |u(x)-u(y)|/|x-y|^sigma over interior pairs and |u(x)|/d(x)^sigma."""
    _check_order(sigma)
    grid = field.grid
    if not field.values.size:
        return 0.0
    dist = dist or distance_field(grid)
    u = field.values
    r = grid.pair_distance
    off_diagonal = r > 0
    ratios = np.zeros_like(r)
    np.divide(np.abs(u[:, None] - u[None, :]), r ** sigma, out=ratios, where=off_diagonal)
    exterior = np.abs(u) / dist.interior_values ** sigma
    return float(max(ratios.max(), exterior.max(), 0.0))

def difference_quotients(field: ScalarField, sigma: float, dist: DistanceField = None) -> Tuple[np.ndarray, np.ndarray]:
    """L+ and L- of the field at every interior node."""
    _check_order(sigma)
    dist = dist or distance_field(field.grid)
    u = field.values
    r = field.grid.pair_distance
    off_diagonal = r > 0
    quotients = np.zeros_like(r)
    np.divide(u[:, None] - u[None, :], r ** sigma, out=quotients, where=off_diagonal)
    exterior = u / dist.interior_values ** sigma
    upper = np.where(off_diagonal, quotients, -np.inf).max(axis=1, initial=-np.inf)
    lower = np.where(off_diagonal, quotients, np.inf).min(axis=1, initial=np.inf)
    # the far-field candidate 0 bounds both sides
    plus = np.maximum(np.maximum(upper, exterior), 0.0)
    minus = np.minimum(np.minimum(lower, exterior), 0.0)
    return plus, minus

def _node_quotients(field: ScalarField, sigma: float, x: int) -> np.ndarray:
    _check_order(sigma)
    x = check_interior_index(field.grid, x)
    u = field.values
    r = field.grid.pair_distance[x]
    others = np.arange(u.size) != x
    d = distance_field(field.grid).interior_values[x]
    candidates = (u[x] - u[others]) / r[others] ** sigma
    return np.concatenate([candidates, [u[x] / d ** sigma, 0.0]])

def linf_plus(field: ScalarField, sigma: float, x: int) -> float:
    return float(_node_quotients(field, sigma, x).max())

def linf_minus(field: ScalarField, sigma: float, x: int) -> float:
    return float(_node_quotients(field, sigma, x).min())

def linf(field: ScalarField, sigma: float, x: int) -> float:
    quotients = _node_quotients(field, sigma, x)
    return float(quotients.max() + quotients.min())

