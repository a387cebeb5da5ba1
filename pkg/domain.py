import logging
import math
from functools import cached_property
from typing import Optional, Sequence, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict, Field

from config import Config
from models import GridSpec, MaskRule

logger = logging.getLogger(__name__)

MIN_NODES_PER_AXIS = 8
MIN_COLLAR_CELLS = 2

class DomainGrid(BaseModel):
    """Cell-centered grid over a bounding box with an exterior collar of zero nodes.

    Fields live on the interior nodes only; every non-interior node carries
    the zero extension. Pairwise geometry is computed lazily and cached.
    """
    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    dim: int = Field(..., description="Spatial dimension N")
    h: float = Field(..., description="Cell width")
    n: int = Field(..., description="Interior cells per axis of the bounding box")
    bounds: Tuple[Tuple[float, float], ...] = Field(..., description="Bounding box of the domain")
    mask_rule: MaskRule = Field(..., description="Shape of the domain")
    collar_width: float = Field(..., description="Width of the exterior band of explicit zero nodes")
    nodes: np.ndarray = Field(..., description="Node coordinates, shape (M, dim)")
    interior_mask: np.ndarray = Field(..., description="Per-node flag: node lies in the domain")
    disc_center: Optional[Tuple[float, float]] = None
    disc_radius: Optional[float] = None

    @property
    def interior_count(self) -> int:
        return int(np.count_nonzero(self.interior_mask))

    @property
    def cell_volume(self) -> float:
        return self.h ** self.dim

    @property
    def log_cell_volume(self) -> float:
        return self.dim * math.log(self.h)

    @cached_property
    def interior_points(self) -> np.ndarray:
        return self.nodes[self.interior_mask]

    @cached_property
    def exterior_points(self) -> np.ndarray:
        return self.nodes[~self.interior_mask]

    @cached_property
    def pair_distance(self) -> np.ndarray:
        """Distances between interior nodes; zero on the diagonal."""
        pts = self.interior_points
        diff = pts[:, None, :] - pts[None, :, :]
        return np.sqrt(np.sum(diff * diff, axis=-1))

    @cached_property
    def pair_log_distance(self) -> np.ndarray:
        """log of pair_distance with +inf on the diagonal, so kernel weights vanish there."""
        with np.errstate(divide="ignore"):
            logs = np.log(self.pair_distance)
        np.fill_diagonal(logs, np.inf)
        return logs

    @cached_property
    def exterior_log_distance(self) -> np.ndarray:
        """log distances from interior nodes (rows) to non-interior nodes (columns)."""
        diff = self.interior_points[:, None, :] - self.exterior_points[None, :, :]
        return 0.5 * np.log(np.sum(diff * diff, axis=-1))

    @cached_property
    def collar_box(self) -> Tuple[Tuple[float, float], ...]:
        return tuple((lo - self.collar_width, hi + self.collar_width) for lo, hi in self.bounds)

    @cached_property
    def outer_radius(self) -> np.ndarray:
        """Per interior node, distance to the outer edge of the collar box."""
        pts = self.interior_points
        gaps = [pts[:, axis] - lo for axis, (lo, _) in enumerate(self.collar_box)]
        gaps += [hi - pts[:, axis] for axis, (_, hi) in enumerate(self.collar_box)]
        return np.min(np.stack(gaps, axis=1), axis=1)

    def describe(self) -> GridSpec:
        return GridSpec(
            dim=self.dim,
            bounds=[tuple(b) for b in self.bounds],
            n=self.n,
            mask_rule=self.mask_rule,
            collar_width=self.collar_width,
            disc_center=self.disc_center,
            disc_radius=self.disc_radius,
        )

class DistanceField(BaseModel):
    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    values: np.ndarray = Field(..., description="Distance to the complement at every node; 0 off the domain")
    interior_values: np.ndarray = Field(..., description="values restricted to interior nodes")
    R: float = Field(..., description="Discrete inradius: max over interior nodes")

def _collar_cells(collar_cells: Optional[int]) -> int:
    cells = Config.COLLAR_CELLS if collar_cells is None else int(collar_cells)
    if cells < MIN_COLLAR_CELLS:
        raise ValueError(f"collar must span at least {MIN_COLLAR_CELLS} cells, got {cells}")
    return cells

def _check_node_count(n: int) -> None:
    if int(n) != n or n < MIN_NODES_PER_AXIS:
        raise ValueError(f"node count must be an integer >= {MIN_NODES_PER_AXIS}, got {n}")

def _axis_centers(lo: float, h: float, n: int, cells: int) -> np.ndarray:
    return lo + (np.arange(-cells, n + cells) + 0.5) * h

def build_interval(a: float, b: float, n: int, collar_cells: Optional[int] = None) -> DomainGrid:
    """1D grid on (a, b): n interior cell centers plus a collar on each side."""
    if not (math.isfinite(a) and math.isfinite(b)):
        raise ValueError(f"interval bounds must be finite, got ({a}, {b})")
    if a >= b:
        raise ValueError(f"degenerate interval ({a}, {b})")
    _check_node_count(n)
    n = int(n)
    cells = _collar_cells(collar_cells)

    h = (b - a) / n
    coords = _axis_centers(a, h, n, cells)
    interior = np.zeros(coords.size, dtype=bool)
    interior[cells:cells + n] = True

    grid = DomainGrid(
        dim=1,
        h=h,
        n=n,
        bounds=((float(a), float(b)),),
        mask_rule=MaskRule.INTERVAL,
        collar_width=cells * h,
        nodes=coords.reshape(-1, 1),
        interior_mask=interior,
    )
    logger.debug(f"Built interval grid ({a}, {b}) with n={n}, h={h}, collar={cells} cells")
    return grid

def build_box2d(
    bounds: Sequence[Tuple[float, float]],
    n_per_axis: int,
    mask_rule: MaskRule = MaskRule.RECTANGLE,
    collar_cells: Optional[int] = None,
    disc_center: Optional[Tuple[float, float]] = None,
    disc_radius: Optional[float] = None,
) -> DomainGrid:
    """2D grid over a box; the mask rule selects rectangle or disc interiors at cell centers."""
    if len(bounds) != 2:
        raise ValueError("2D bounds need two (lo, hi) pairs")
    (x_lo, x_hi), (y_lo, y_hi) = [(float(lo), float(hi)) for lo, hi in bounds]
    for lo, hi in ((x_lo, x_hi), (y_lo, y_hi)):
        if not (math.isfinite(lo) and math.isfinite(hi)) or lo >= hi:
            raise ValueError(f"degenerate bounds ({lo}, {hi})")
    _check_node_count(n_per_axis)
    n = int(n_per_axis)
    mask_rule = MaskRule(mask_rule)
    if mask_rule == MaskRule.INTERVAL:
        raise ValueError("2D grids use mask_rule 'rectangle' or 'disc'")
    cells = _collar_cells(collar_cells)

    hx = (x_hi - x_lo) / n
    hy = (y_hi - y_lo) / n
    if not math.isclose(hx, hy, rel_tol=1e-12):
        raise ValueError(f"cells must be square: hx={hx}, hy={hy}")
    h = hx

    xs = _axis_centers(x_lo, h, n, cells)
    ys = _axis_centers(y_lo, h, n, cells)
    gx, gy = np.meshgrid(xs, ys, indexing="ij")
    nodes = np.column_stack([gx.ravel(), gy.ravel()])

    center = None
    radius = None
    if mask_rule == MaskRule.RECTANGLE:
        interior = (
            (nodes[:, 0] > x_lo) & (nodes[:, 0] < x_hi) & (nodes[:, 1] > y_lo) & (nodes[:, 1] < y_hi)
        )
    else:
        center = disc_center or (0.5 * (x_lo + x_hi), 0.5 * (y_lo + y_hi))
        center = (float(center[0]), float(center[1]))
        radius = float(disc_radius) if disc_radius is not None else 0.5 * min(x_hi - x_lo, y_hi - y_lo)
        if not radius > 0:
            raise ValueError(f"disc radius must be positive, got {radius}")
        if (
            center[0] - radius < x_lo - 1e-12 or center[0] + radius > x_hi + 1e-12
            or center[1] - radius < y_lo - 1e-12 or center[1] + radius > y_hi + 1e-12
        ):
            raise ValueError("disc must lie inside the bounding box")
        offset = nodes - np.asarray(center)
        interior = np.sqrt(np.sum(offset * offset, axis=1)) < radius

    if not interior.any():
        raise ValueError("mask rule selects no interior nodes")

    grid = DomainGrid(
        dim=2,
        h=h,
        n=n,
        bounds=((x_lo, x_hi), (y_lo, y_hi)),
        mask_rule=mask_rule,
        collar_width=cells * h,
        nodes=nodes,
        interior_mask=interior,
        disc_center=center,
        disc_radius=radius,
    )
    logger.debug(f"Built {mask_rule.value} grid n={n}, h={h}, interior nodes={grid.interior_count}")
    return grid

def grid_from_spec(spec: GridSpec) -> DomainGrid:
    """Rebuild a grid from its JSON description."""
    cells = None
    if spec.collar_width is not None:
        h = (spec.bounds[0][1] - spec.bounds[0][0]) / spec.n
        cells = int(round(spec.collar_width / h))
    if spec.dim == 1:
        (a, b), = spec.bounds
        return build_interval(a, b, spec.n, collar_cells=cells)
    return build_box2d(
        spec.bounds,
        spec.n,
        spec.mask_rule,
        collar_cells=cells,
        disc_center=spec.disc_center,
        disc_radius=spec.disc_radius,
    )

def distance_field(grid: DomainGrid) -> DistanceField:
    """Distance of every node to the complement, measured to the analytic boundary."""
    pts = grid.nodes
    if grid.mask_rule == MaskRule.DISC:
        offset = pts - np.asarray(grid.disc_center)
        raw = grid.disc_radius - np.sqrt(np.sum(offset * offset, axis=1))
    else:
        gaps = [pts[:, axis] - lo for axis, (lo, _) in enumerate(grid.bounds)]
        gaps += [hi - pts[:, axis] for axis, (_, hi) in enumerate(grid.bounds)]
        raw = np.min(np.stack(gaps, axis=1), axis=1)

    values = np.where(grid.interior_mask, np.maximum(raw, 0.0), 0.0)
    interior_values = values[grid.interior_mask]
    return DistanceField(values=values, interior_values=interior_values, R=float(interior_values.max()))

def analytic_inradius(grid: DomainGrid) -> float:
    if grid.mask_rule == MaskRule.DISC:
        return float(grid.disc_radius)
    return 0.5 * min(hi - lo for lo, hi in grid.bounds)

def snap_to_node(grid: DomainGrid, point: Sequence[float]) -> int:
    """Nearest interior node to a coordinate; ties resolve to the lowest index."""
    coords = np.atleast_1d(np.asarray(point, dtype=float))
    if coords.shape != (grid.dim,):
        raise ValueError(f"point must have {grid.dim} coordinates, got {coords.tolist()}")
    if not np.all(np.isfinite(coords)):
        raise ValueError("point coordinates must be finite")
    offset = grid.interior_points - coords
    dist = np.sqrt(np.sum(offset * offset, axis=1))
    nearest = np.flatnonzero(dist <= dist.min() + 1e-12 * grid.h)
    return int(nearest[0])

def inradius_nodes(grid: DomainGrid, dist: Optional[DistanceField] = None) -> np.ndarray:
    """Interior node indices that attain the discrete inradius, ascending."""
    dist = dist or distance_field(grid)
    return np.flatnonzero(dist.interior_values >= dist.R - 1e-12 * grid.h)

def neighbour_nodes(grid: DomainGrid, index: int) -> np.ndarray:
    """Interior nodes one cell away from `index` along an axis."""
    check_interior_index(grid, index)
    d = grid.pair_distance[index]
    return np.flatnonzero(np.abs(d - grid.h) <= 1e-9 * grid.h)

def cone_profile(grid: DomainGrid, apex: int, exponent: float, radius: float) -> np.ndarray:
    """(radius - |x - apex|)_+^exponent at the interior nodes."""
    apex = check_interior_index(grid, apex)
    reach = np.maximum(radius - grid.pair_distance[apex], 0.0)
    return reach ** exponent

def check_interior_index(grid: DomainGrid, index: int) -> int:
    if index is None or int(index) != index or not 0 <= index < grid.interior_count:
        raise ValueError(f"node {index} is not an interior node (interior count {grid.interior_count})")
    return int(index)
