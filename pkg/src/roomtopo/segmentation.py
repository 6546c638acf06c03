"""Room and transition instance masks: heuristic segmenter, mask files, IoU, polygons."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np
from scipy import ndimage

from .errors import DimensionError, GeometryError, SchemaError
from .occupancy import GridSpec, MultiChannelGrid, cell_centers, doorway_channel, to_image

ROOM = "room"
TRANSITION = "transition"
CATEGORIES = (ROOM, TRANSITION)

FOUR_CONN = ndimage.generate_binary_structure(2, 1)
EIGHT_CONN = ndimage.generate_binary_structure(2, 2)


@dataclass(frozen=True, eq=False)
class InstanceMask:
    instance_id: int
    category: str
    mask: np.ndarray
    confidence: float = 1.0

    def __post_init__(self):
        if self.category not in CATEGORIES:
            raise SchemaError(f"unknown category {self.category!r}")
        m = np.array(self.mask, dtype=bool)
        if m.ndim != 2:
            raise DimensionError("mask must be 2-D")
        if not m.any():
            raise SchemaError(f"instance {self.instance_id}: empty mask")
        if not 0.0 <= self.confidence <= 1.0:
            raise SchemaError(f"instance {self.instance_id}: confidence outside [0, 1]")
        m.setflags(write=False)
        object.__setattr__(self, "mask", m)
        object.__setattr__(self, "confidence", float(self.confidence))

    @property
    def area(self) -> int:
        return int(self.mask.sum())

    def __eq__(self, other) -> bool:
        if not isinstance(other, InstanceMask):
            return NotImplemented
        return (
            self.instance_id == other.instance_id
            and self.category == other.category
            and self.confidence == other.confidence
            and np.array_equal(self.mask, other.mask)
        )


@dataclass(frozen=True)
class SegmentationResult:
    spec: GridSpec
    instances: tuple[InstanceMask, ...]

    def __post_init__(self):
        object.__setattr__(self, "instances", tuple(self.instances))
        ids = set()
        for inst in self.instances:
            if inst.instance_id in ids:
                raise SchemaError(f"duplicate instance id {inst.instance_id}")
            ids.add(inst.instance_id)
            if inst.mask.shape != self.spec.shape:
                raise DimensionError(
                    f"instance {inst.instance_id}: mask shape {inst.mask.shape} != grid {self.spec.shape}"
                )

    @property
    def rooms(self) -> list[InstanceMask]:
        return [m for m in self.instances if m.category == ROOM]

    @property
    def transitions(self) -> list[InstanceMask]:
        return [m for m in self.instances if m.category == TRANSITION]

    def get(self, instance_id: int) -> InstanceMask:
        for m in self.instances:
            if m.instance_id == instance_id:
                return m
        raise KeyError(instance_id)


@dataclass(frozen=True)
class SegmenterParams:
    wall_density_threshold: int = 2
    min_room_cells: int | None = None  # None: 1 m^2 worth of cells

    def resolved_min_room_cells(self, spec: GridSpec) -> int:
        if self.min_room_cells is not None:
            return self.min_room_cells
        return math.ceil(1.0 / spec.tile_size**2 - 1e-9)


def _first_cell(mask: np.ndarray) -> int:
    return int(np.argmax(mask.ravel()))


def _components(binary: np.ndarray) -> list[np.ndarray]:
    labels, n = ndimage.label(binary, structure=FOUR_CONN)
    return [labels == k for k in range(1, n + 1)]


def wall_mask(grid: MultiChannelGrid, params: SegmenterParams) -> np.ndarray:
    return (
        (grid.density >= params.wall_density_threshold)
        & (grid.o_floor == 1)
        & (grid.o_ceiling == 1)
    )


def segment_heuristic(grid: MultiChannelGrid, params: SegmenterParams | None = None) -> SegmentationResult:
    """Rooms and doorways from the three channels without any learned model.

    Walls are dense cells occupied in both slices. Doorways are 4-connected
    groups of ceiling-only cells that touch a wall. Rooms are the 4-connected
    components of the observed floor area left after removing walls and
    doorways; components smaller than ``min_room_cells`` are dropped.
    Instance ids follow the row-major position of each instance's first cell.
    """
    params = params or SegmenterParams()
    walls = wall_mask(grid, params)
    near_wall = ndimage.binary_dilation(walls, structure=FOUR_CONN) & ~walls

    found: list[tuple[str, np.ndarray]] = []
    doorways = np.zeros(grid.spec.shape, dtype=bool)
    for comp in _components(doorway_channel(grid.o_ceiling, grid.o_floor).astype(bool)):
        if (comp & near_wall).any():
            found.append((TRANSITION, comp))
            doorways |= comp

    interior = (grid.density >= 1) & ~walls & ~doorways
    min_cells = params.resolved_min_room_cells(grid.spec)
    for comp in _components(interior):
        if comp.sum() >= min_cells:
            found.append((ROOM, comp))

    found.sort(key=lambda cm: _first_cell(cm[1]))
    return SegmentationResult(
        grid.spec,
        tuple(InstanceMask(k, cat, m, 1.0) for k, (cat, m) in enumerate(found)),
    )


# ------------------------------------------------------------- metrics

def mask_iou(a: np.ndarray, b: np.ndarray) -> float:
    a = np.asarray(a, dtype=bool)
    b = np.asarray(b, dtype=bool)
    if a.shape != b.shape:
        raise DimensionError(f"mask shapes differ: {a.shape} vs {b.shape}")
    union = np.count_nonzero(a | b)
    if union == 0:
        return 0.0
    return np.count_nonzero(a & b) / union


# ----------------------------------------------------------- polygons

def _orient(p, q, r) -> float:
    return (q[0] - p[0]) * (r[1] - p[1]) - (q[1] - p[1]) * (r[0] - p[0])


def _on_segment(p, q, r) -> bool:
    """r collinear with p-q assumed; is r within the segment's bounding box?"""
    return min(p[0], q[0]) <= r[0] <= max(p[0], q[0]) and min(p[1], q[1]) <= r[1] <= max(p[1], q[1])


def _segments_intersect(p1, p2, p3, p4) -> bool:
    d1, d2 = _orient(p3, p4, p1), _orient(p3, p4, p2)
    d3, d4 = _orient(p1, p2, p3), _orient(p1, p2, p4)
    if ((d1 > 0) != (d2 > 0)) and d1 != 0 and d2 != 0 and ((d3 > 0) != (d4 > 0)) and d3 != 0 and d4 != 0:
        return True
    return (
        (d1 == 0 and _on_segment(p3, p4, p1))
        or (d2 == 0 and _on_segment(p3, p4, p2))
        or (d3 == 0 and _on_segment(p1, p2, p3))
        or (d4 == 0 and _on_segment(p1, p2, p4))
    )


def check_simple_polygon(vertices: Sequence[tuple[float, float]]) -> None:
    pts = [tuple(map(float, v)) for v in vertices]
    n = len(pts)
    if n < 3:
        raise GeometryError(f"polygon needs at least 3 vertices, got {n}")
    edges = [(pts[k], pts[(k + 1) % n]) for k in range(n)]
    for a, b in edges:
        if a == b:
            raise GeometryError("polygon has a zero-length edge")
    for k in range(n):
        for m in range(k + 1, n):
            p1, p2 = edges[k]
            p3, p4 = edges[m]
            if m == k + 1 or (k == 0 and m == n - 1):
                # neighbours share exactly one vertex; reject folding back onto each other
                shared = p2 if m == k + 1 else p1
                other_k = p1 if m == k + 1 else p2
                other_m = p4 if m == k + 1 else p3
                if _orient(other_k, shared, other_m) == 0 and (
                    _on_segment(p1, p2, other_m) or _on_segment(p3, p4, other_k)
                ):
                    raise GeometryError("polygon has overlapping adjacent edges")
                continue
            if _segments_intersect(p1, p2, p3, p4):
                raise GeometryError("polygon is self-intersecting")


def polygon_to_mask(vertices: Sequence[tuple[float, float]], spec: GridSpec) -> np.ndarray:
    """Cells whose centre lies inside (even-odd rule) or on the boundary of a simple polygon."""
    check_simple_polygon(vertices)
    poly = np.asarray(vertices, dtype=np.float64)
    c = cell_centers(spec)
    x, y = c[:, 0], c[:, 1]
    inside = np.zeros(len(c), dtype=bool)
    on_edge = np.zeros(len(c), dtype=bool)
    tol = 1e-9 * spec.tile_size
    for (x1, y1), (x2, y2) in zip(poly, np.roll(poly, -1, axis=0)):
        crosses = (y1 > y) != (y2 > y)
        with np.errstate(divide="ignore", invalid="ignore"):
            x_at = x1 + (y - y1) * (x2 - x1) / (y2 - y1)
        inside ^= crosses & (x < x_at)
        # distance from centre to segment
        dx, dy = x2 - x1, y2 - y1
        t = np.clip(((x - x1) * dx + (y - y1) * dy) / (dx * dx + dy * dy), 0.0, 1.0)
        on_edge |= np.hypot(x - (x1 + t * dx), y - (y1 + t * dy)) <= tol
    return (inside | on_edge).reshape(spec.shape)


# ------------------------------------------------------------- RLE I/O

def rle_encode(mask: np.ndarray) -> list[int]:
    """Run lengths over the row-major flattening, starting with a (possibly 0) run of zeros."""
    flat = np.asarray(mask, dtype=bool).ravel()
    if flat.size == 0:
        return []
    change = np.flatnonzero(flat[1:] != flat[:-1]) + 1
    bounds = np.concatenate([[0], change, [flat.size]])
    runs = np.diff(bounds).tolist()
    if flat[0]:
        runs = [0] + runs
    return [int(r) for r in runs]


def rle_decode(runs: Iterable[int], shape: tuple[int, int]) -> np.ndarray:
    runs = list(runs)
    if any((not isinstance(r, int)) or isinstance(r, bool) or r < 0 for r in runs):
        raise SchemaError("RLE runs must be non-negative integers")
    total = shape[0] * shape[1]
    if sum(runs) != total:
        raise SchemaError(f"RLE covers {sum(runs)} cells, grid has {total}")
    values = np.arange(len(runs)) % 2 == 1
    return np.repeat(values, runs).reshape(shape)


def dump_masks(seg: SegmentationResult) -> str:
    return json.dumps({
        "width": seg.spec.width,
        "height": seg.spec.height,
        "grid": seg.spec.to_dict(),
        "instances": [
            {
                "id": m.instance_id,
                "category": m.category,
                "confidence": m.confidence,
                "rle": rle_encode(m.mask),
            }
            for m in seg.instances
        ],
    })


def mask_file_spec(doc: str | dict) -> GridSpec:
    """Grid spec embedded in a mask file (files written by this package carry one)."""
    doc = json.loads(doc) if isinstance(doc, str) else doc
    if "grid" not in doc:
        raise SchemaError("mask file carries no grid spec; supply one explicitly")
    return GridSpec.from_dict(doc["grid"])


def import_masks(doc: str | dict, spec: GridSpec | None = None) -> SegmentationResult:
    """Load externally predicted masks. Overlapping masks are allowed."""
    if isinstance(doc, str):
        try:
            doc = json.loads(doc)
        except json.JSONDecodeError as e:
            raise SchemaError(f"invalid JSON: {e}") from None
    if not isinstance(doc, dict):
        raise SchemaError("mask document must be a JSON object")
    if spec is None:
        spec = mask_file_spec(doc)
    if doc.get("width") != spec.width or doc.get("height") != spec.height:
        raise DimensionError(
            f"mask file is {doc.get('width')}x{doc.get('height')}, grid is {spec.width}x{spec.height}"
        )
    raw = doc.get("instances")
    if not isinstance(raw, list):
        raise SchemaError("'instances' must be a list")
    out = []
    seen = set()
    for k, inst in enumerate(raw):
        if not isinstance(inst, dict) or not {"id", "category", "confidence", "rle"} <= inst.keys():
            raise SchemaError(f"instance #{k}: needs id, category, confidence and rle")
        iid = inst["id"]
        if not isinstance(iid, int) or isinstance(iid, bool):
            raise SchemaError(f"instance #{k}: id must be an integer")
        if iid in seen:
            raise SchemaError(f"duplicate instance id {iid}")
        seen.add(iid)
        if inst["category"] not in CATEGORIES:
            raise SchemaError(f"instance {iid}: unknown category {inst['category']!r}")
        conf = inst["confidence"]
        if not isinstance(conf, (int, float)) or isinstance(conf, bool):
            raise SchemaError(f"instance {iid}: confidence must be a number")
        out.append(InstanceMask(iid, inst["category"], rle_decode(inst["rle"], spec.shape), float(conf)))
    return SegmentationResult(spec, tuple(out))


def export_instance_pngs(seg: SegmentationResult, out_dir: str | Path) -> list[Path]:
    """One binary PNG per instance, named ``<category>_<id>.png``."""
    from PIL import Image

    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    paths = []
    for m in seg.instances:
        p = out_dir / f"{m.category}_{m.instance_id}.png"
        Image.fromarray(to_image(m.mask.astype(np.uint8) * 255), mode="L").save(p)
        paths.append(p)
    return paths
