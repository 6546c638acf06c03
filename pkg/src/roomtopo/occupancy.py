"""Top-down density map and floor/ceiling occupancy slices.

All grids are numpy arrays of shape ``(width, height)`` indexed ``[i, j]`` where
``i`` counts cells along x and ``j`` along y, starting at ``GridSpec.origin``.
"Row-major" everywhere in this package means C order over that array, i.e.
flat index ``i * height + j``.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from .errors import DimensionError, GeometryError, SchemaError
from .geometry_io import PointCloud

CEILING_BETA = (0.7, 0.9)
FLOOR_BETA = (0.1, 0.3)
DEFAULT_TILE_SIZE = 0.05
CHANNELS = ("density", "o_ceiling", "o_floor")


@dataclass(frozen=True)
class GridSpec:
    origin: tuple[float, float]
    tile_size: float
    width: int
    height: int
    z_floor: float
    z_ceiling: float

    def __post_init__(self):
        object.__setattr__(self, "origin", (float(self.origin[0]), float(self.origin[1])))
        if not self.tile_size > 0:
            raise GeometryError("tile_size must be positive")
        if self.width < 1 or self.height < 1:
            raise GeometryError("grid width and height must be >= 1")
        if not self.z_ceiling > self.z_floor:
            raise GeometryError("z_ceiling must exceed z_floor")

    @property
    def h(self) -> float:
        """Floor-to-ceiling height."""
        return self.z_ceiling - self.z_floor

    @property
    def shape(self) -> tuple[int, int]:
        return (self.width, self.height)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["origin"] = list(self.origin)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "GridSpec":
        try:
            return cls(
                origin=tuple(d["origin"]),
                tile_size=float(d["tile_size"]),
                width=int(d["width"]),
                height=int(d["height"]),
                z_floor=float(d["z_floor"]),
                z_ceiling=float(d["z_ceiling"]),
            )
        except (KeyError, TypeError, ValueError) as e:
            raise SchemaError(f"invalid grid spec: {e}") from None


@dataclass(frozen=True, eq=False)
class MultiChannelGrid:
    spec: GridSpec
    density: np.ndarray
    o_ceiling: np.ndarray
    o_floor: np.ndarray
    beta_ceiling: tuple[float, float] = CEILING_BETA
    beta_floor: tuple[float, float] = FLOOR_BETA

    def __post_init__(self):
        for name, dtype in (("density", np.int64), ("o_ceiling", np.uint8), ("o_floor", np.uint8)):
            a = np.array(getattr(self, name), dtype=dtype)
            if a.shape != self.spec.shape:
                raise DimensionError(f"{name} has shape {a.shape}, expected {self.spec.shape}")
            a.setflags(write=False)
            object.__setattr__(self, name, a)
        if np.any(self.density < 0):
            raise ValueError("density must be nonnegative")

    def channel(self, name: str) -> np.ndarray:
        return getattr(self, name)

    def __eq__(self, other) -> bool:
        if not isinstance(other, MultiChannelGrid):
            return NotImplemented
        return self.spec == other.spec and all(
            np.array_equal(self.channel(c), other.channel(c)) for c in CHANNELS
        )


def estimate_heights(cloud: PointCloud, lo_pct: float = 0.01, hi_pct: float = 0.99) -> tuple[float, float]:
    """Floor and ceiling heights as low/high quantiles of z."""
    if len(cloud) == 0:
        raise GeometryError("cannot estimate heights of an empty cloud")
    if not 0 <= lo_pct < hi_pct <= 1:
        raise ValueError("need 0 <= lo_pct < hi_pct <= 1")
    z_floor, z_ceiling = np.quantile(cloud.points[:, 2], [lo_pct, hi_pct])
    if z_ceiling - z_floor < 1e-6:
        raise GeometryError(f"degenerate height range {z_ceiling - z_floor:.3g} m")
    return float(z_floor), float(z_ceiling)


def fit_grid(cloud: PointCloud, tile_size: float = DEFAULT_TILE_SIZE, padding: int = 0,
             align: bool = False) -> GridSpec:
    """Axis-aligned grid covering the cloud's xy footprint plus ``padding`` cells per side.

    With ``align`` the origin is snapped down to a multiple of ``tile_size`` so
    that cell edges fall on round world coordinates.
    """
    if len(cloud) == 0:
        raise GeometryError("cannot fit a grid to an empty cloud")
    if padding < 0:
        raise ValueError("padding must be >= 0")
    z_floor, z_ceiling = estimate_heights(cloud)
    lo = cloud.points[:, :2].min(axis=0)
    hi = cloud.points[:, :2].max(axis=0)
    if align:
        lo = np.floor(lo / tile_size) * tile_size
    core = [max(1, math.ceil((hi[k] - lo[k]) / tile_size)) for k in (0, 1)]
    return GridSpec(
        origin=(lo[0] - padding * tile_size, lo[1] - padding * tile_size),
        tile_size=tile_size,
        width=core[0] + 2 * padding,
        height=core[1] + 2 * padding,
        z_floor=z_floor,
        z_ceiling=z_ceiling,
    )


def cell_indices(xy: np.ndarray, spec: GridSpec) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Vectorised world -> cell mapping; returns (i, j, in_bounds)."""
    xy = np.asarray(xy, dtype=np.float64).reshape(-1, 2)
    u = (xy[:, 0] - spec.origin[0]) / spec.tile_size
    v = (xy[:, 1] - spec.origin[1]) / spec.tile_size
    i = np.floor(u).astype(np.int64)
    j = np.floor(v).astype(np.int64)
    # outermost edge is inclusive; compare in world units since the division can overshoot
    i[(i >= spec.width) & (xy[:, 0] <= spec.origin[0] + spec.width * spec.tile_size)] = spec.width - 1
    j[(j >= spec.height) & (xy[:, 1] <= spec.origin[1] + spec.height * spec.tile_size)] = spec.height - 1
    inside = (i >= 0) & (i < spec.width) & (j >= 0) & (j < spec.height)
    return i, j, inside


def world_to_grid(p: tuple[float, float], spec: GridSpec) -> tuple[int, int] | None:
    """Cell containing world point ``p``, or ``None`` when it lies outside the grid."""
    i, j, inside = cell_indices(np.array([p[0], p[1]]), spec)
    if not inside[0]:
        return None
    return int(i[0]), int(j[0])


def grid_to_world(i: int, j: int, spec: GridSpec) -> tuple[float, float]:
    """World coordinates of the center of cell (i, j)."""
    return (
        spec.origin[0] + (i + 0.5) * spec.tile_size,
        spec.origin[1] + (j + 0.5) * spec.tile_size,
    )


def cell_centers(spec: GridSpec, mask: np.ndarray | None = None) -> np.ndarray:
    """World xy of cell centers, all cells or those set in ``mask``, in row-major order."""
    if mask is None:
        ii, jj = np.indices(spec.shape)
        ii, jj = ii.ravel(), jj.ravel()
    else:
        ii, jj = np.nonzero(mask)
    return np.stack([
        spec.origin[0] + (ii + 0.5) * spec.tile_size,
        spec.origin[1] + (jj + 0.5) * spec.tile_size,
    ], axis=1)


def _count(cloud_xy: np.ndarray, spec: GridSpec) -> np.ndarray:
    i, j, inside = cell_indices(cloud_xy, spec)
    flat = i[inside] * spec.height + j[inside]
    return np.bincount(flat, minlength=spec.width * spec.height).reshape(spec.shape)


def slice_occupancy(cloud: PointCloud, spec: GridSpec, beta1: float, beta2: float) -> np.ndarray:
    """Binary grid of cells holding at least one point with beta1*h <= z - z_floor <= beta2*h."""
    if not 0 <= beta1 < beta2 <= 1:
        raise ValueError("need 0 <= beta1 < beta2 <= 1")
    pts = cloud.points
    rel = pts[:, 2] - spec.z_floor
    keep = (rel >= beta1 * spec.h) & (rel <= beta2 * spec.h)
    return (_count(pts[keep, :2], spec) >= 1).astype(np.uint8)


def rasterize(
    cloud: PointCloud,
    spec: GridSpec,
    beta_ceiling: tuple[float, float] = CEILING_BETA,
    beta_floor: tuple[float, float] = FLOOR_BETA,
) -> MultiChannelGrid:
    return MultiChannelGrid(
        spec=spec,
        density=_count(cloud.points[:, :2], spec),
        o_ceiling=slice_occupancy(cloud, spec, *beta_ceiling),
        o_floor=slice_occupancy(cloud, spec, *beta_floor),
        beta_ceiling=tuple(beta_ceiling),
        beta_floor=tuple(beta_floor),
    )


def doorway_channel(o_ceiling: np.ndarray, o_floor: np.ndarray) -> np.ndarray:
    """Cells occupied at ceiling height but free at floor height."""
    o_ceiling = np.asarray(o_ceiling)
    o_floor = np.asarray(o_floor)
    if o_ceiling.shape != o_floor.shape:
        raise DimensionError(f"channel shapes differ: {o_ceiling.shape} vs {o_floor.shape}")
    return ((o_ceiling != 0) & (o_floor == 0)).astype(np.uint8)


# ------------------------------------------------------------ file I/O

def dump_grid(grid: MultiChannelGrid) -> str:
    header = {
        "format": "roomtopo-grid",
        "version": 1,
        "grid": grid.spec.to_dict(),
        "channels": list(CHANNELS),
        "beta_ceiling": list(grid.beta_ceiling),
        "beta_floor": list(grid.beta_floor),
    }
    payload = {c: grid.channel(c).ravel().tolist() for c in CHANNELS}
    return json.dumps({"header": header, "payload": payload})


def load_grid(text: str) -> MultiChannelGrid:
    try:
        doc = json.loads(text)
        header, payload = doc["header"], doc["payload"]
        spec = GridSpec.from_dict(header["grid"])
        chans = {}
        for c in header["channels"]:
            a = np.asarray(payload[c], dtype=np.int64)
            if a.size != spec.width * spec.height:
                raise SchemaError(f"channel {c!r} has {a.size} values, expected {spec.width * spec.height}")
            chans[c] = a.reshape(spec.shape)
        return MultiChannelGrid(
            spec, chans["density"], chans["o_ceiling"], chans["o_floor"],
            beta_ceiling=tuple(header.get("beta_ceiling", CEILING_BETA)),
            beta_floor=tuple(header.get("beta_floor", FLOOR_BETA)),
        )
    except (KeyError, TypeError, ValueError, json.JSONDecodeError) as e:
        raise SchemaError(f"invalid grid file: {e}") from None


def to_image(a: np.ndarray) -> np.ndarray:
    """(width, height) grid -> (rows, cols) image with +y pointing up."""
    return np.flipud(np.asarray(a).T)


def export_channel_pngs(grid: MultiChannelGrid, out_dir: str | Path, prefix: str = "") -> list[Path]:
    """Write each channel as an 8-bit grayscale PNG; density is log-scaled."""
    from PIL import Image

    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    paths = []
    d = grid.density.astype(np.float64)
    peak = np.log1p(d.max()) if d.max() > 0 else 1.0
    images = {
        "density": np.round(255 * np.log1p(d) / peak),
        "o_ceiling": 255 * grid.o_ceiling,
        "o_floor": 255 * grid.o_floor,
    }
    for name, img in images.items():
        p = out_dir / f"{prefix}{name}.png"
        Image.fromarray(to_image(img).astype(np.uint8), mode="L").save(p)
        paths.append(p)
    return paths
