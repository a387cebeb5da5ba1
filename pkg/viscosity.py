import logging
from typing import Iterable, List, Optional, Sequence

import numpy as np

from config import Config
from domain import DistanceField, DomainGrid, check_interior_index, distance_field
from models import ResidualReport, SignConvention
from nonlocal_ops import ScalarField, difference_quotients

logger = logging.getLogger(__name__)

class EmptyEvaluationSetError(ValueError):
    """No interior node survives the anchor and boundary-layer exclusions."""

def evaluation_set(
    grid: DomainGrid,
    layer_k: int,
    exclude: Iterable[int] = (),
    dist: Optional[DistanceField] = None,
) -> np.ndarray:
    """Interior nodes farther than layer_k cells from the boundary, minus `exclude`."""
    if layer_k < 0:
        raise ValueError(f"layer_k must be non-negative, got {layer_k}")
    dist = dist or distance_field(grid)
    keep = dist.interior_values > layer_k * grid.h
    for node in exclude:
        keep[check_interior_index(grid, node)] = False
    nodes = np.flatnonzero(keep)
    if nodes.size == 0:
        raise EmptyEvaluationSetError(
            f"evaluation set is empty (layer_k={layer_k}, excluded anchors {list(exclude)})"
        )
    return nodes

def _report(
    field_id: str,
    sigma: float,
    grid: DomainGrid,
    nodes: np.ndarray,
    values: np.ndarray,
    layer_k: int,
    sign: Optional[SignConvention] = None,
) -> ResidualReport:
    return ResidualReport(
        field_id=field_id,
        sigma=sigma,
        nodes=nodes.tolist(),
        values=values.tolist(),
        sup_norm=float(np.max(np.abs(values))),
        sign_convention=sign,
        layer_k=layer_k,
        excluded=grid.interior_count - nodes.size,
    )

def residual_v(
    v: ScalarField,
    x0: int,
    t: float,
    layer_k: Optional[int] = None,
    field_id: str = "v",
) -> ResidualReport:
    """L_{t,inf} v on the evaluation set; zero for a t-Hoelder infinity-harmonic field away from x0."""
    layer_k = Config.LAYER_K if layer_k is None else layer_k
    grid = v.grid
    check_interior_index(grid, x0)
    if not np.any(v.values):
        logger.warning(f"Residual of a zero field {field_id} is trivially zero")
    dist = distance_field(grid)
    nodes = evaluation_set(grid, layer_k, [x0], dist)
    plus, minus = difference_quotients(v, t, dist)
    return _report(field_id, t, grid, nodes, (plus + minus)[nodes], layer_k)

def residual_u(
    u: ScalarField,
    v_anchor_value: float,
    s: float,
    theta: float,
    lambda_inf: float,
    layer_k: Optional[int] = None,
    sign: SignConvention = SignConvention.MINUS,
    exclude: Sequence[int] = (),
) -> ResidualReport:
    """max{L u, L^- u -/+ lambda_inf u^theta v(x0)^(1-theta)} on the evaluation set."""
    layer_k = Config.LAYER_K if layer_k is None else layer_k
    sign = SignConvention(sign)
    if float(np.min(u.values)) < -1e-12:
        raise ValueError("residual_u expects a nonnegative field")
    if not lambda_inf > 0:
        raise ValueError(f"lambda_inf must be positive, got {lambda_inf}")
    grid = u.grid
    dist = distance_field(grid)
    nodes = evaluation_set(grid, layer_k, exclude, dist)
    plus, minus = difference_quotients(u, s, dist)
    source = lambda_inf * np.maximum(u.values, 0.0) ** theta * abs(v_anchor_value) ** (1.0 - theta)
    second = minus - source if sign == SignConvention.MINUS else minus + source
    values = np.maximum(plus + minus, second)[nodes]
    return _report("u", s, grid, nodes, values, layer_k, sign)

def best_convention(reports: List[ResidualReport]) -> ResidualReport:
    """Report with the smaller sup norm; earlier entries win ties."""
    if not reports:
        raise ValueError("no residual reports to compare")
    best = min(reports, key=lambda report: report.sup_norm)
    logger.info(
        "Residual sup norms: "
        + ", ".join(f"{r.sign_convention.value if r.sign_convention else r.field_id}={r.sup_norm:.6g}" for r in reports)
        + f"; smaller: {best.sign_convention.value if best.sign_convention else best.field_id}"
    )
    return best
