"""Object-to-room assignment through per-room k-d trees over mask cell centres."""

from __future__ import annotations

import json
from dataclasses import dataclass
from typing import Mapping

import numpy as np

from .errors import GeometryError, SchemaError
from .geometry_io import ObjectMap, PointCloud
from .kdtree import KDTree
from .occupancy import GridSpec, cell_centers
from .segmentation import SegmentationResult


def centroid(points: PointCloud | np.ndarray) -> tuple[float, float, float]:
    pts = points.points if isinstance(points, PointCloud) else np.asarray(points, dtype=np.float64)
    if len(pts) == 0:
        raise GeometryError("centroid of an empty point cloud")
    c = pts.mean(axis=0)
    return float(c[0]), float(c[1]), float(c[2])


@dataclass(frozen=True, eq=False)
class RoomIndex:
    spec: GridSpec
    room_ids: tuple[int, ...]
    trees: Mapping[int, KDTree]

    def points(self, room_id: int) -> np.ndarray:
        return self.trees[room_id].points

    @property
    def size(self) -> int:
        return sum(len(t) for t in self.trees.values())


def build_room_index(seg: SegmentationResult) -> RoomIndex:
    """One k-d tree per room mask over the world-frame centres of its cells."""
    rooms = sorted(seg.rooms, key=lambda m: m.instance_id)
    if not rooms:
        raise GeometryError("segmentation contains no rooms")
    trees = {m.instance_id: KDTree(cell_centers(seg.spec, m.mask)) for m in rooms}
    return RoomIndex(seg.spec, tuple(trees), trees)


@dataclass(frozen=True)
class ObjectRoomAssignment:
    """object_id -> (room_id, xy distance in meters to the nearest cell centre of that room)."""

    mapping: Mapping[int, tuple[int, float]]

    def room_of(self, object_id: int) -> int:
        return self.mapping[object_id][0]

    def objects_in(self, room_id: int) -> list[int]:
        return sorted(o for o, (r, _) in self.mapping.items() if r == room_id)

    def to_records(self) -> list[dict]:
        return [
            {"object_id": o, "room_id": r, "distance_m": d}
            for o, (r, d) in sorted(self.mapping.items())
        ]


def nearest_room(xy, index: RoomIndex) -> tuple[int, float]:
    best_room, best_d2 = -1, np.inf
    for rid in index.room_ids:  # ascending, so strict < keeps the lowest id on ties
        d2, _ = index.trees[rid].query_sqdist(xy)
        if d2 < best_d2:
            best_room, best_d2 = rid, d2
    return best_room, float(np.sqrt(best_d2))


def assign_objects(objects: ObjectMap, index: RoomIndex) -> ObjectRoomAssignment:
    if not index.room_ids:
        raise GeometryError("room index is empty")
    out = {}
    for obj in objects.objects:
        cx, cy, _ = centroid(obj.points)
        out[obj.id] = nearest_room(np.array([cx, cy]), index)
    return ObjectRoomAssignment(out)


def dump_assignment(assign: ObjectRoomAssignment) -> str:
    return json.dumps(assign.to_records())


def load_assignment(text: str) -> ObjectRoomAssignment:
    try:
        recs = json.loads(text)
        out = {}
        for r in recs:
            oid = int(r["object_id"])
            if oid in out:
                raise SchemaError(f"duplicate object_id {oid}")
            d = float(r["distance_m"])
            if d < 0:
                raise SchemaError("distance_m must be >= 0")
            out[oid] = (int(r["room_id"]), d)
    except (KeyError, TypeError, ValueError, json.JSONDecodeError) as e:
        raise SchemaError(f"invalid assignment file: {e}") from None
    return ObjectRoomAssignment(out)
