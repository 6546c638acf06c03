"""Procedural rectilinear floorplans with ground truth.

A scene is a rows x cols grid of rectangular rooms separated by full-height
walls. Doors are cut on a random spanning tree of the room-adjacency graph
(optionally plus extra doors); above each door a lintel remains, so doorways
show up as occupied at ceiling height and free at floor height. All
dimensions are snapped to the tile size so ground-truth masks are exact.

Object embeddings come from an "embedding world": one orthonormal prototype
per room type (the phrase table), object categories slightly rotated away
from their room type's prototype, and per-object Gaussian noise.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .association import ObjectRoomAssignment, dump_assignment
from .errors import GeometryError
from .geometry_io import (
    EmbeddingTable,
    ObjectInstance,
    ObjectMap,
    PointCloud,
    dump_embedding_table,
    dump_object_map,
    write_ply,
)
from .labeler.train import RoomSample
from .occupancy import GridSpec
from .segmentation import ROOM, TRANSITION, InstanceMask, SegmentationResult, dump_masks

ROOM_TYPES = (
    "bathroom", "bedroom", "dining room", "garage",
    "kitchen", "laundry room", "living room", "office",
)
QUERY_PHRASES = {
    "bathroom": "place to take a shower",
    "bedroom": "place to sleep",
    "dining room": "place to eat dinner",
    "garage": "place to park the car",
    "kitchen": "place to cook",
    "laundry room": "place to wash clothes",
    "living room": "place to watch tv",
    "office": "place to work",
}


# ------------------------------------------------------- embedding world

@dataclass(frozen=True, eq=False)
class Category:
    name: str
    room_type: str
    prototype: np.ndarray
    shared: bool = False  # also appears in the partner type's rooms (confounded worlds)


@dataclass(frozen=True, eq=False)
class EmbeddingWorld:
    room_types: tuple[str, ...]
    type_prototypes: np.ndarray  # (n_types, D), orthonormal rows
    categories: tuple[Category, ...]
    sigma: float
    confounded: bool = False
    table: EmbeddingTable = field(init=False)

    def __post_init__(self):
        object.__setattr__(self, "table", EmbeddingTable(dict(zip(self.room_types, self.type_prototypes))))

    @property
    def dim(self) -> int:
        return self.type_prototypes.shape[1]

    def partner(self, room_type: str) -> str:
        k = self.room_types.index(room_type)
        return self.room_types[k ^ 1] if (k ^ 1) < len(self.room_types) else room_type

    def categories_of(self, room_type: str, shared: bool | None = None) -> list[Category]:
        return [c for c in self.categories
                if c.room_type == room_type and (shared is None or c.shared == shared)]

    def sample_embedding(self, category: Category, rng: np.random.Generator) -> np.ndarray:
        v = category.prototype + self.sigma * rng.standard_normal(self.dim)
        return v / np.linalg.norm(v)

    def sample_categories(self, room_type: str, n: int, rng: np.random.Generator) -> list[Category]:
        """Object categories for one room.

        Normally uniform over the room type's own categories. In a confounded
        world the first object is exclusive to the type and each further
        object comes, with probability 0.7, from the partner type's shared
        categories, so the mean embedding is often pulled toward the partner.
        """
        own = self.categories_of(room_type)
        if not self.confounded:
            return [own[k] for k in rng.integers(len(own), size=n)]
        exclusive = self.categories_of(room_type, shared=False)
        borrowed = self.categories_of(self.partner(room_type), shared=True) or own
        out = [exclusive[rng.integers(len(exclusive))]]
        for _ in range(n - 1):
            pool = borrowed if rng.random() < 0.7 else own
            out.append(pool[rng.integers(len(pool))])
        return out

    def sample_room(self, room_type: str, n: int, rng: np.random.Generator) -> RoomSample:
        cats = self.sample_categories(room_type, n, rng)
        return RoomSample(np.stack([self.sample_embedding(c, rng) for c in cats]), room_type)

    def query_table(self, spread: float = 0.3, seed: int = 0) -> tuple[EmbeddingTable, dict[str, str]]:
        """Query phrases ("place to cook") as vectors near their room type's prototype."""
        rng = np.random.default_rng(seed)
        vecs, target = {}, {}
        for t, proto in zip(self.room_types, self.type_prototypes):
            phrase = QUERY_PHRASES.get(t, f"place like a {t}")
            vecs[phrase] = proto + spread * _orthogonal_unit(rng, self.type_prototypes)
            target[phrase] = t
        return EmbeddingTable.from_vectors(vecs), target


def _orthogonal_unit(rng, basis: np.ndarray) -> np.ndarray:
    """Random unit vector orthogonal to every row of ``basis``."""
    v = rng.standard_normal(basis.shape[1])
    v -= basis.T @ (basis @ v)
    return v / np.linalg.norm(v)


def generate_embedding_world(room_types=ROOM_TYPES, categories_per_type: int = 6, dim: int = 32,
                             sigma: float = 0.1, seed: int = 0, confounded: bool = False,
                             spread: float = 0.35, shared_fraction: float = 0.3) -> EmbeddingWorld:
    room_types = tuple(room_types)
    if dim < len(room_types) + 1:
        raise ValueError(f"dim {dim} too small for {len(room_types)} room types")
    rng = np.random.default_rng(seed)
    q, _ = np.linalg.qr(rng.standard_normal((dim, len(room_types))))
    protos = q.T.copy()
    n_shared = round(shared_fraction * categories_per_type) if confounded else 0
    cats = []
    for t, p in zip(room_types, protos):
        for k in range(categories_per_type):
            v = p + spread * _orthogonal_unit(rng, protos)
            cats.append(Category(f"{t}/obj{k}", t, v / np.linalg.norm(v), shared=k < n_shared))
    return EmbeddingWorld(room_types, protos, tuple(cats), sigma, confounded)


def room_dataset(world: EmbeddingWorld, n_rooms: int, seed: int = 0,
                 objects_per_room: tuple[int, int] = (3, 6)) -> list[RoomSample]:
    rng = np.random.default_rng(seed)
    out = []
    for _ in range(n_rooms):
        t = world.room_types[rng.integers(len(world.room_types))]
        n = int(rng.integers(objects_per_room[0], objects_per_room[1] + 1))
        out.append(world.sample_room(t, n, rng))
    return out


# ------------------------------------------------------------- scenes

@dataclass(frozen=True)
class SceneSpec:
    rows: int = 2
    cols: int = 2
    room_size: tuple[float, float] = (2.5, 4.5)
    wall_thickness: float = 0.2
    door_width: float = 0.9
    door_lintel_fraction: float = 0.8
    ceiling_height: float = 2.8
    points_per_m2: float = 1600.0
    room_types: tuple[str, ...] = ROOM_TYPES
    objects_per_room: tuple[int, int] = (3, 6)
    categories_per_type: int = 6
    embedding_dim: int = 32
    embedding_noise: float = 0.1
    tile_size: float = 0.05
    extra_door_prob: float = 0.0
    open_passage_prob: float = 0.0  # doors without lintel: invisible to the slices
    position_noise: float = 0.0
    seed: int = 0
    world_seed: int | None = None  # defaults to seed; share it to reuse one phrase table

    def __post_init__(self):
        if self.rows < 1 or self.cols < 1:
            raise GeometryError("room grid must be at least 1x1")
        if not 0.7 < self.door_lintel_fraction < 0.9:
            raise GeometryError("door_lintel_fraction must lie in (0.7, 0.9)")
        if self.wall_thickness < 2 * self.tile_size - 1e-12:
            raise GeometryError("wall_thickness must be at least two tiles")
        if not 0 < self.room_size[0] <= self.room_size[1]:
            raise GeometryError("invalid room_size range")


@dataclass(frozen=True, eq=False)
class GroundTruth:
    seg: SegmentationResult
    room_labels: dict[int, str]
    objects: ObjectMap
    assignment: dict[int, int]  # object id -> room id
    table: EmbeddingTable
    queries: EmbeddingTable
    query_targets: dict[str, str]  # query phrase -> room type
    doors: tuple[tuple[int, int, int], ...]  # (transition id, room a, room b)
    open_passages: tuple[int, ...] = ()
    world: EmbeddingWorld | None = None

    @property
    def edge_set(self) -> set[tuple[int, int]]:
        return {(min(a, b), max(a, b)) for _, a, b in self.doors}


def _snap(x: float, tile: float) -> int:
    return max(1, int(round(x / tile)))


def _spanning_tree(rows, cols, rng, extra_prob):
    adj = []
    for r in range(rows):
        for c in range(cols):
            if c + 1 < cols:
                adj.append((r * cols + c, r * cols + c + 1))
            if r + 1 < rows:
                adj.append((r * cols + c, (r + 1) * cols + c))
    parent = list(range(rows * cols))

    def find(a):
        while parent[a] != a:
            parent[a] = parent[parent[a]]
            a = parent[a]
        return a

    chosen = []
    for k in rng.permutation(len(adj)):
        a, b = adj[k]
        ra, rb = find(a), find(b)
        if ra != rb:
            parent[ra] = rb
            chosen.append(adj[k])
        elif rng.random() < extra_prob:
            chosen.append(adj[k])
    return sorted(chosen)


def _lattice(cells_i, cells_j, k, tile, rng):
    """k x k jittered samples inside each listed cell; returns (N, 2) world xy."""
    a, b = np.meshgrid(np.arange(k), np.arange(k), indexing="ij")
    a, b = a.ravel(), b.ravel()
    n = len(cells_i)
    jit = 0.05 + 0.9 * rng.random((n, k * k, 2))
    x = (cells_i[:, None] + (a[None, :] + jit[..., 0]) / k) * tile
    y = (cells_j[:, None] + (b[None, :] + jit[..., 1]) / k) * tile
    return np.stack([x.ravel(), y.ravel()], axis=1)


def _column(cells_i, cells_j, z0, z1, dz, tile, rng):
    """Stacked samples from z0 to z1, one random xy per level per cell."""
    nz = max(1, math.ceil((z1 - z0) / dz - 1e-9))
    n = len(cells_i)
    jit = 0.05 + 0.9 * rng.random((n, nz, 3))
    x = (cells_i[:, None] + jit[..., 0]) * tile
    y = (cells_j[:, None] + jit[..., 1]) * tile
    z = z0 + (z1 - z0) * (np.arange(nz)[None, :] + jit[..., 2]) / nz
    return np.stack([x.ravel(), y.ravel(), z.ravel()], axis=1)


def generate_scene(spec: SceneSpec, world: EmbeddingWorld | None = None) -> tuple[PointCloud, GroundTruth]:
    rng = np.random.default_rng(spec.seed)
    tile = spec.tile_size
    H = spec.ceiling_height
    if world is None:
        world = generate_embedding_world(
            spec.room_types, spec.categories_per_type, spec.embedding_dim, spec.embedding_noise,
            seed=spec.seed if spec.world_seed is None else spec.world_seed,
        )
    nt = _snap(spec.wall_thickness, tile)
    nd = _snap(spec.door_width, tile)
    margin = max(1, nt)
    widths = [_snap(rng.uniform(*spec.room_size), tile) for _ in range(spec.cols)]
    depths = [_snap(rng.uniform(*spec.room_size), tile) for _ in range(spec.rows)]
    if nd + 2 * margin > min(widths + depths):
        raise GeometryError("door is wider than the shared wall allows")
    xs = np.cumsum([0] + [nt + w for w in widths])  # wall start cell of each column boundary
    ys = np.cumsum([0] + [nt + d for d in depths])
    W = int(xs[-1] + nt)
    Hc = int(ys[-1] + nt)
    grid = GridSpec((0.0, 0.0), tile, W, Hc, 0.0, H)

    rooms = []
    for r in range(spec.rows):
        for c in range(spec.cols):
            m = np.zeros((W, Hc), dtype=bool)
            m[xs[c] + nt:xs[c + 1], ys[r] + nt:ys[r + 1]] = True
            rooms.append(m)

    doors = []
    door_masks = []
    for a, b in _spanning_tree(spec.rows, spec.cols, rng, spec.extra_door_prob):
        ra, ca = divmod(a, spec.cols)
        m = np.zeros((W, Hc), dtype=bool)
        if b // spec.cols == ra:  # wall between columns ca and ca+1 in row ra
            lo, hi = ys[ra] + nt, ys[ra + 1]
            s = int(rng.integers(lo + margin, hi - margin - nd + 1))
            m[xs[ca + 1]:xs[ca + 1] + nt, s:s + nd] = True
        else:  # wall between rows ra and ra+1 in column ca
            lo, hi = xs[ca] + nt, xs[ca + 1]
            s = int(rng.integers(lo + margin, hi - margin - nd + 1))
            m[s:s + nd, ys[ra + 1]:ys[ra + 1] + nt] = True
        doors.append((a, b))
        door_masks.append(m)
    open_flags = [bool(rng.random() < spec.open_passage_prob) for _ in doors]

    any_room = np.logical_or.reduce(rooms)
    any_door = np.logical_or.reduce(door_masks) if door_masks else np.zeros_like(any_room)
    walkable = any_room | any_door
    walls = ~walkable

    k = max(1, int(round(tile * math.sqrt(spec.points_per_m2))))
    parts = []
    wi, wj = np.nonzero(walls)
    parts.append(_column(wi, wj, 0.0, H, tile, tile, rng))
    for m, is_open in zip(door_masks, open_flags):
        if not is_open:
            di, dj = np.nonzero(m)
            parts.append(_column(di, dj, spec.door_lintel_fraction * H, H, tile, tile, rng))
    fi, fj = np.nonzero(walkable)
    for z in (0.0, H):
        xy = _lattice(fi, fj, k, tile, rng)
        parts.append(np.column_stack([xy, np.full(len(xy), z)]))

    room_ids = list(range(len(rooms)))
    room_types = {rid: world.room_types[rng.integers(len(world.room_types))] for rid in room_ids}
    objects, assignment = [], {}
    for rid, m in zip(room_ids, rooms):
        ii, jj = np.nonzero(m)
        x0, x1 = ii.min() * tile + 0.5, (ii.max() + 1) * tile - 0.5
        y0, y1 = jj.min() * tile + 0.5, (jj.max() + 1) * tile - 0.5
        n_obj = int(rng.integers(spec.objects_per_room[0], spec.objects_per_room[1] + 1))
        for cat in world.sample_categories(room_types[rid], n_obj, rng):
            center = np.array([rng.uniform(x0, x1), rng.uniform(y0, y1), rng.uniform(0.2 * H, 0.45 * H)])
            radius = rng.uniform(0.1, 0.25)
            d = rng.standard_normal((60, 3))
            d /= np.linalg.norm(d, axis=1, keepdims=True)
            pts = center + d * radius * rng.random((60, 1)) ** (1 / 3)
            oid = len(objects)
            objects.append(ObjectInstance(oid, PointCloud(pts), world.sample_embedding(cat, rng)))
            assignment[oid] = rid
            parts.append(pts)

    cloud = np.concatenate(parts, axis=0)
    if spec.position_noise > 0:
        cloud = cloud + spec.position_noise * rng.standard_normal(cloud.shape)

    n_rooms = len(rooms)
    instances = [InstanceMask(rid, ROOM, m, 1.0) for rid, m in zip(room_ids, rooms)]
    instances += [InstanceMask(n_rooms + k, TRANSITION, m, 1.0) for k, m in enumerate(door_masks)]
    queries, targets = world.query_table(seed=spec.seed + 1)
    gt = GroundTruth(
        seg=SegmentationResult(grid, tuple(instances)),
        room_labels=room_types,
        objects=ObjectMap(tuple(objects), world.dim),
        assignment=assignment,
        table=world.table,
        queries=queries,
        query_targets=targets,
        doors=tuple((n_rooms + k, a, b) for k, (a, b) in enumerate(doors)),
        open_passages=tuple(n_rooms + k for k, f in enumerate(open_flags) if f),
        world=world,
    )
    return PointCloud(cloud), gt


def write_scene(out_dir: str | Path, cloud: PointCloud, gt: GroundTruth) -> dict[str, Path]:
    """Write a generated scene using the package's ordinary file formats."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = {
        "cloud": out / "scene.ply",
        "gt_masks": out / "gt_masks.json",
        "objects": out / "objects.json",
        "phrases": out / "phrases.json",
        "queries": out / "queries.json",
        "gt_assignment": out / "gt_assignment.json",
        "gt": out / "gt.json",
    }
    paths["cloud"].write_bytes(write_ply(cloud))
    paths["gt_masks"].write_text(dump_masks(gt.seg))
    paths["objects"].write_text(dump_object_map(gt.objects))
    paths["phrases"].write_text(dump_embedding_table(gt.table))
    paths["queries"].write_text(dump_embedding_table(gt.queries))
    dist = {o: (r, 0.0) for o, r in gt.assignment.items()}
    paths["gt_assignment"].write_text(dump_assignment(ObjectRoomAssignment(dist)))
    paths["gt"].write_text(json.dumps({
        "room_labels": {str(k): v for k, v in gt.room_labels.items()},
        "doors": [{"transition_id": t, "rooms": [a, b]} for t, a, b in gt.doors],
        "open_passages": list(gt.open_passages),
        "query_targets": gt.query_targets,
    }, indent=2))
    return paths
