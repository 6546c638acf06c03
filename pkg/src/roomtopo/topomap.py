"""Room graph: labelled room nodes joined by transition edges, queryable by embedding."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Mapping

import numpy as np
from scipy import ndimage

from .association import ObjectRoomAssignment
from .errors import DimensionError, RoomTopoError, SchemaError
from .evaluation import UNLABELED
from .occupancy import GridSpec, cell_centers
from .segmentation import EIGHT_CONN, SegmentationResult, rle_decode, rle_encode


@dataclass(frozen=True, eq=False)
class RoomNode:
    room_id: int
    label: str
    embedding: np.ndarray | None
    centroid: tuple[float, float]
    object_ids: tuple[int, ...]
    mask: np.ndarray

    def __post_init__(self):
        has_objects = len(self.object_ids) > 0
        if (self.embedding is not None) != has_objects:
            raise SchemaError(f"room {self.room_id}: embedding must be present iff it holds objects")
        if not has_objects and self.label != UNLABELED:
            raise SchemaError(f"room {self.room_id}: a room without objects must be '{UNLABELED}'")

    def __eq__(self, other):
        if not isinstance(other, RoomNode):
            return NotImplemented
        same_emb = (self.embedding is None and other.embedding is None) or (
            self.embedding is not None and other.embedding is not None
            and np.array_equal(self.embedding, other.embedding)
        )
        return (
            self.room_id == other.room_id and self.label == other.label and same_emb
            and tuple(self.centroid) == tuple(other.centroid)
            and tuple(self.object_ids) == tuple(other.object_ids)
            and np.array_equal(self.mask, other.mask)
        )


@dataclass(frozen=True)
class TransitionEdge:
    transition_id: int
    rooms: tuple[int, int]

    def __post_init__(self):
        a, b = self.rooms
        if a == b:
            raise SchemaError(f"transition {self.transition_id} joins room {a} to itself")
        object.__setattr__(self, "rooms", (min(a, b), max(a, b)))


@dataclass(frozen=True, eq=False)
class TopoMap:
    spec: GridSpec
    nodes: tuple[RoomNode, ...]
    edges: tuple[TransitionEdge, ...]
    dangling_transitions: tuple[int, ...] = ()
    transition_masks: Mapping[int, np.ndarray] = field(default_factory=dict)

    def __post_init__(self):
        ids = [n.room_id for n in self.nodes]
        if len(set(ids)) != len(ids):
            raise SchemaError("duplicate room ids in map")
        for e in self.edges:
            for r in e.rooms:
                if r not in ids:
                    raise SchemaError(f"edge {e.transition_id} references missing room {r}")

    def node(self, room_id: int) -> RoomNode:
        for n in self.nodes:
            if n.room_id == room_id:
                return n
        raise KeyError(room_id)

    def edge_set(self) -> set[tuple[int, int]]:
        return {e.rooms for e in self.edges}

    def __eq__(self, other):
        if not isinstance(other, TopoMap):
            return NotImplemented
        return (
            self.spec == other.spec and self.nodes == other.nodes and self.edges == other.edges
            and self.dangling_transitions == other.dangling_transitions
            and set(self.transition_masks) == set(other.transition_masks)
            and all(np.array_equal(self.transition_masks[k], other.transition_masks[k])
                    for k in self.transition_masks)
        )


def build(seg: SegmentationResult, assignment: ObjectRoomAssignment,
          room_labels: Mapping[int, tuple[str, np.ndarray]]) -> TopoMap:
    """Assemble the map.

    ``room_labels`` maps room id -> (label, e_cls) for every room holding at
    least one object. Each transition is dilated by one cell (8-neighbourhood)
    and joins the two rooms it overlaps most (ties: lower room id); a
    transition touching fewer than two rooms is kept as dangling.
    """
    rooms = sorted(seg.rooms, key=lambda m: m.instance_id)
    room_ids = {m.instance_id for m in rooms}
    for oid, (rid, _) in assignment.mapping.items():
        if rid not in room_ids:
            raise RoomTopoError(f"object {oid} is assigned to unknown room {rid}")
    for rid in room_labels:
        if rid not in room_ids:
            raise RoomTopoError(f"label given for unknown room {rid}")

    nodes = []
    for m in rooms:
        objs = tuple(assignment.objects_in(m.instance_id))
        if objs:
            if m.instance_id not in room_labels:
                raise RoomTopoError(f"room {m.instance_id} holds objects but has no label")
            label, emb = room_labels[m.instance_id]
            emb = np.asarray(emb, dtype=np.float64)
        else:
            label, emb = UNLABELED, None
        c = cell_centers(seg.spec, m.mask).mean(axis=0)
        nodes.append(RoomNode(m.instance_id, label, emb, (float(c[0]), float(c[1])), objs, m.mask))

    edges, dangling, tmasks = [], [], {}
    for t in sorted(seg.transitions, key=lambda m: m.instance_id):
        tmasks[t.instance_id] = t.mask
        grown = ndimage.binary_dilation(t.mask, structure=EIGHT_CONN)
        overlap = [(int(np.count_nonzero(grown & r.mask)), r.instance_id) for r in rooms]
        touching = sorted((o for o in overlap if o[0] > 0), key=lambda o: (-o[0], o[1]))
        if len(touching) >= 2:
            edges.append(TransitionEdge(t.instance_id, (touching[0][1], touching[1][1])))
        else:
            dangling.append(t.instance_id)
    return TopoMap(seg.spec, tuple(nodes), tuple(edges), tuple(dangling), tmasks)


def _query_scores(tmap: TopoMap, query_embedding) -> list[tuple[int, str, float]]:
    q = np.asarray(query_embedding, dtype=np.float64)
    embedded = [n for n in tmap.nodes if n.embedding is not None]
    if not embedded:
        raise RoomTopoError("map has no rooms with embeddings")
    if q.shape != embedded[0].embedding.shape:
        raise DimensionError(f"query dim {q.shape} does not match room embeddings {embedded[0].embedding.shape}")
    qn = np.linalg.norm(q)
    if qn < 1e-12:
        raise DimensionError("zero query vector")
    out = []
    for n in embedded:
        sim = float(n.embedding @ q / (np.linalg.norm(n.embedding) * qn))
        out.append((n.room_id, n.label, sim))
    return out


def query(tmap: TopoMap, query_embedding, k: int = 1) -> list[tuple[int, str, float]]:
    """Rooms ranked by cosine similarity to the query (ties: lower room id)."""
    if k < 1:
        raise ValueError("k must be >= 1")
    scored = _query_scores(tmap, query_embedding)
    scored.sort(key=lambda r: (-r[2], r[0]))
    return scored[:k]


def similarity_field(tmap: TopoMap, query_embedding, sentinel: float = np.nan) -> np.ndarray:
    """Per-cell grid holding each room's query similarity; other cells get ``sentinel``."""
    field_ = np.full(tmap.spec.shape, sentinel, dtype=np.float64)
    by_id = {n.room_id: n for n in tmap.nodes}
    for rid, _, sim in _query_scores(tmap, query_embedding):
        field_[by_id[rid].mask] = sim
    return field_


# ------------------------------------------------------------ documents

def dump_map(tmap: TopoMap) -> str:
    return json.dumps({
        "grid": tmap.spec.to_dict(),
        "nodes": [
            {
                "room_id": n.room_id,
                "label": n.label,
                "embedding": None if n.embedding is None else n.embedding.tolist(),
                "centroid": list(n.centroid),
                "object_ids": list(n.object_ids),
                "rle": rle_encode(n.mask),
            }
            for n in tmap.nodes
        ],
        "edges": [{"transition_id": e.transition_id, "rooms": list(e.rooms)} for e in tmap.edges],
        "dangling_transitions": list(tmap.dangling_transitions),
        "transition_rle": {str(k): rle_encode(m) for k, m in sorted(tmap.transition_masks.items())},
    })


def load_map(text: str) -> TopoMap:
    try:
        doc = json.loads(text)
        spec = GridSpec.from_dict(doc["grid"])
        nodes = []
        for n in doc["nodes"]:
            emb = n.get("embedding")
            nodes.append(RoomNode(
                int(n["room_id"]), str(n["label"]),
                None if emb is None else np.asarray(emb, dtype=np.float64),
                (float(n["centroid"][0]), float(n["centroid"][1])),
                tuple(int(o) for o in n["object_ids"]),
                rle_decode(n["rle"], spec.shape) if "rle" in n else np.zeros(spec.shape, dtype=bool),
            ))
        edges = tuple(TransitionEdge(int(e["transition_id"]), tuple(e["rooms"])) for e in doc["edges"])
        for e, raw in zip(edges, doc["edges"]):
            if len(raw["rooms"]) != 2:
                raise SchemaError(f"edge {e.transition_id} must join exactly two rooms")
        tmasks = {int(k): rle_decode(v, spec.shape) for k, v in doc.get("transition_rle", {}).items()}
        return TopoMap(spec, tuple(nodes), edges,
                       tuple(int(t) for t in doc.get("dangling_transitions", [])), tmasks)
    except (KeyError, TypeError, ValueError, IndexError, json.JSONDecodeError) as e:
        raise SchemaError(f"invalid map document: {e}") from None
