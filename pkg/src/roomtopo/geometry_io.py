"""Point-cloud, object-map and embedding-table readers and writers.

Supported point-cloud formats are PLY (ASCII and binary little endian) and
plain ``x y z`` text. Object maps and embedding tables are JSON documents::

    object map:      {"embedding_dim": D, "objects": [{"id": int, "embedding": [D floats],
                                                        "points": [[x, y, z], ...]}, ...]}
    embedding table: {"embedding_dim": D, "entries": {"<phrase>": [D floats], ...}}
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping

import numpy as np

from .errors import DimensionError, ParseError, SchemaError

UNIT_TOL = 1e-6
MIN_NORM = 1e-6

_PLY_TYPES = {
    "char": "i1", "int8": "i1",
    "uchar": "u1", "uint8": "u1",
    "short": "i2", "int16": "i2",
    "ushort": "u2", "uint16": "u2",
    "int": "i4", "int32": "i4",
    "uint": "u4", "uint32": "u4",
    "float": "f4", "float32": "f4",
    "double": "f8", "float64": "f8",
}


def _frozen(a: np.ndarray) -> np.ndarray:
    a = np.array(a, dtype=np.float64, copy=True)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class PointCloud:
    """Unordered 3D points in meters, stored as an (n, 3) float64 array."""

    points: np.ndarray

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=np.float64)
        if pts.size == 0:
            pts = pts.reshape(0, 3)
        if pts.ndim != 2 or pts.shape[1] != 3:
            raise DimensionError(f"points must have shape (n, 3), got {pts.shape}")
        if not np.all(np.isfinite(pts)):
            raise ValueError("point coordinates must be finite")
        object.__setattr__(self, "points", _frozen(pts))

    def __len__(self) -> int:
        return len(self.points)

    def __eq__(self, other) -> bool:
        if not isinstance(other, PointCloud):
            return NotImplemented
        return self.points.shape == other.points.shape and bool(np.array_equal(self.points, other.points))

    @property
    def xyz(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        return self.points[:, 0], self.points[:, 1], self.points[:, 2]

    @classmethod
    def concat(cls, clouds: Iterable["PointCloud"]) -> "PointCloud":
        arrays = [c.points for c in clouds]
        if not arrays:
            return cls(np.zeros((0, 3)))
        return cls(np.concatenate(arrays, axis=0))


def _unit(vec, what: str) -> np.ndarray:
    v = np.asarray(vec, dtype=np.float64)
    if v.ndim != 1 or v.size == 0:
        raise SchemaError(f"{what}: embedding must be a non-empty vector")
    if not np.all(np.isfinite(v)):
        raise SchemaError(f"{what}: embedding contains non-finite values")
    n = float(np.linalg.norm(v))
    if n < MIN_NORM:
        raise SchemaError(f"{what}: degenerate (zero) embedding vector")
    return v / n


@dataclass(frozen=True, eq=False)
class ObjectInstance:
    id: int
    points: PointCloud
    embedding: np.ndarray

    def __post_init__(self):
        if not isinstance(self.points, PointCloud):
            object.__setattr__(self, "points", PointCloud(self.points))
        if len(self.points) == 0:
            raise SchemaError(f"object {self.id}: empty point cloud")
        emb = np.asarray(self.embedding, dtype=np.float64)
        if emb.ndim != 1:
            raise DimensionError(f"object {self.id}: embedding must be 1-D")
        if abs(np.linalg.norm(emb) - 1.0) > UNIT_TOL:
            raise SchemaError(f"object {self.id}: embedding is not unit length")
        object.__setattr__(self, "embedding", _frozen(emb))

    @property
    def dim(self) -> int:
        return int(self.embedding.shape[0])


@dataclass(frozen=True)
class ObjectMap:
    objects: tuple[ObjectInstance, ...]
    embedding_dim: int

    def __post_init__(self):
        object.__setattr__(self, "objects", tuple(self.objects))
        if self.embedding_dim < 1:
            raise SchemaError("embedding_dim must be positive")
        seen = set()
        for o in self.objects:
            if o.id in seen:
                raise SchemaError(f"duplicate object id {o.id}")
            seen.add(o.id)
            if o.dim != self.embedding_dim:
                raise DimensionError(
                    f"object {o.id}: embedding dim {o.dim} != embedding_dim {self.embedding_dim}"
                )

    def __len__(self) -> int:
        return len(self.objects)

    def by_id(self) -> dict[int, ObjectInstance]:
        return {o.id: o for o in self.objects}


@dataclass(frozen=True, eq=False)
class EmbeddingTable:
    """Phrase -> unit vector lookup. Phrase order is always lexicographic."""

    entries: Mapping[str, np.ndarray]
    phrases: tuple[str, ...] = field(init=False)
    matrix: np.ndarray = field(init=False)

    def __post_init__(self):
        if not self.entries:
            raise SchemaError("embedding table is empty")
        phrases = tuple(sorted(self.entries))
        rows = []
        for p in phrases:
            v = np.asarray(self.entries[p], dtype=np.float64)
            if v.ndim != 1:
                raise DimensionError(f"phrase {p!r}: vector must be 1-D")
            if abs(np.linalg.norm(v) - 1.0) > UNIT_TOL:
                raise SchemaError(f"phrase {p!r}: vector is not unit length")
            rows.append(v)
        dims = {r.shape[0] for r in rows}
        if len(dims) != 1:
            raise DimensionError(f"embedding table mixes dimensions {sorted(dims)}")
        mat = _frozen(np.stack(rows))
        object.__setattr__(self, "entries", {p: mat[k] for k, p in enumerate(phrases)})
        object.__setattr__(self, "phrases", phrases)
        object.__setattr__(self, "matrix", mat)

    @classmethod
    def from_vectors(cls, vectors: Mapping[str, Iterable[float]]) -> "EmbeddingTable":
        """Build a table, re-normalizing each vector to unit length."""
        return cls({p: _unit(v, f"phrase {p!r}") for p, v in vectors.items()})

    @property
    def dim(self) -> int:
        return int(self.matrix.shape[1])

    def __len__(self) -> int:
        return len(self.phrases)

    def __contains__(self, phrase: str) -> bool:
        return phrase in self.entries

    def __getitem__(self, phrase: str) -> np.ndarray:
        return self.entries[phrase]

    def index(self, phrase: str) -> int:
        return self.phrases.index(phrase)

    def __eq__(self, other) -> bool:
        if not isinstance(other, EmbeddingTable):
            return NotImplemented
        return self.phrases == other.phrases and bool(np.array_equal(self.matrix, other.matrix))


# ---------------------------------------------------------------- PLY

@dataclass
class _PlyElement:
    name: str
    count: int
    props: list[tuple[str, str, str | None]]  # (name, value dtype, list-count dtype or None)


def _parse_ply_header(data: bytes) -> tuple[str, list[_PlyElement], int]:
    if not data.startswith(b"ply"):
        raise ParseError("missing 'ply' magic", offset=0)
    end = re.search(rb"end_header\r?\n", data)
    if end is None:
        raise ParseError("header not terminated by end_header", offset=len(data))
    body_start = end.end()
    fmt = None
    elements: list[_PlyElement] = []
    offset = 0
    for raw in data[:end.start()].split(b"\n"):
        line_offset = offset
        offset += len(raw) + 1
        try:
            line = raw.decode("ascii").strip()
        except UnicodeDecodeError:
            raise ParseError("non-ASCII bytes in header", offset=line_offset) from None
        tok = line.split()
        if not tok or tok[0] in ("ply", "comment", "obj_info"):
            continue
        if tok[0] == "format":
            if len(tok) != 3:
                raise ParseError(f"bad format line {line!r}", offset=line_offset)
            fmt = tok[1]
            if fmt == "binary_big_endian":
                raise ParseError("big-endian PLY is not supported", offset=line_offset)
            if fmt not in ("ascii", "binary_little_endian"):
                raise ParseError(f"unknown PLY format {fmt!r}", offset=line_offset)
        elif tok[0] == "element":
            if len(tok) != 3 or not tok[2].isdigit():
                raise ParseError(f"bad element line {line!r}", offset=line_offset)
            elements.append(_PlyElement(tok[1], int(tok[2]), []))
        elif tok[0] == "property":
            if not elements:
                raise ParseError("property before any element", offset=line_offset)
            if len(tok) == 3 and tok[1] in _PLY_TYPES:
                elements[-1].props.append((tok[2], _PLY_TYPES[tok[1]], None))
            elif len(tok) == 5 and tok[1] == "list" and tok[2] in _PLY_TYPES and tok[3] in _PLY_TYPES:
                elements[-1].props.append((tok[4], _PLY_TYPES[tok[3]], _PLY_TYPES[tok[2]]))
            else:
                raise ParseError(f"bad property line {line!r}", offset=line_offset)
        else:
            raise ParseError(f"unknown header keyword {tok[0]!r}", offset=line_offset)
    if fmt is None:
        raise ParseError("missing format line", offset=0)
    return fmt, elements, body_start


def _vertex_columns(el: _PlyElement) -> list[int]:
    names = [p[0] for p in el.props]
    cols = []
    for axis in "xyz":
        if axis not in names:
            raise ParseError(f"vertex element lacks property {axis!r}", offset=0)
        k = names.index(axis)
        if el.props[k][2] is not None:
            raise ParseError(f"vertex property {axis!r} must be scalar", offset=0)
        cols.append(k)
    return cols


def _read_binary_element(data: bytes, pos: int, el: _PlyElement, keep: bool):
    """Read one element block; returns (structured rows or None, new position)."""
    if all(p[2] is None for p in el.props):
        dtype = np.dtype([(f"p{k}", "<" + p[1]) for k, p in enumerate(el.props)])
        need = dtype.itemsize * el.count
        if pos + need > len(data):
            have = (len(data) - pos) // max(dtype.itemsize, 1)
            raise ParseError(
                f"truncated {el.name} data: expected {el.count} records, found {have}",
                offset=len(data),
            )
        rows = np.frombuffer(data, dtype=dtype, count=el.count, offset=pos) if keep else None
        return rows, pos + need
    for _ in range(el.count):
        for _name, vt, ct in el.props:
            size = np.dtype(vt).itemsize
            if ct is None:
                pos += size
                continue
            csize = np.dtype(ct).itemsize
            if pos + csize > len(data):
                raise ParseError(f"truncated {el.name} list count", offset=len(data))
            n = int(np.frombuffer(data, dtype="<" + ct, count=1, offset=pos)[0])
            pos += csize + n * size
        if pos > len(data):
            raise ParseError(f"truncated {el.name} data", offset=len(data))
    return None, pos


def parse_ply(data: bytes) -> PointCloud:
    """Parse ASCII or binary-little-endian PLY bytes; only x, y, z are kept."""
    fmt, elements, body = _parse_ply_header(data)
    vertex = next((e for e in elements if e.name == "vertex"), None)
    if vertex is None:
        raise ParseError("no vertex element in header", offset=body)
    cols = _vertex_columns(vertex)

    if fmt == "binary_little_endian":
        pos = body
        for el in elements:
            rows, pos = _read_binary_element(data, pos, el, keep=el is vertex)
            if el is vertex:
                xyz = np.stack([rows[f"p{k}"].astype(np.float64) for k in cols], axis=1) \
                    if el.count else np.zeros((0, 3))
                break
    else:
        lines = data[body:].split(b"\n")
        line_starts = np.cumsum([body] + [len(l) + 1 for l in lines]).tolist()
        li = 0

        def next_line():
            nonlocal li
            while li < len(lines) and not lines[li].strip():
                li += 1
            if li >= len(lines):
                return None, len(data)
            k = li
            li += 1
            return lines[k], line_starts[k]

        for el in elements:
            if el is vertex:
                xyz = np.empty((el.count, 3))
                for r in range(el.count):
                    raw, off = next_line()
                    if raw is None:
                        raise ParseError(
                            f"truncated vertex data: expected {el.count} vertices, found {r}",
                            offset=off,
                        )
                    tok = raw.split()
                    if len(tok) < len(el.props):
                        raise ParseError(f"vertex {r} has too few values", offset=off)
                    try:
                        xyz[r] = [float(tok[c]) for c in cols]
                    except ValueError:
                        raise ParseError(f"vertex {r} has a non-numeric value", offset=off) from None
                break
            for r in range(el.count):
                raw, off = next_line()
                if raw is None:
                    raise ParseError(f"truncated {el.name} data", offset=off)
    if not np.all(np.isfinite(xyz)):
        raise ParseError("non-finite vertex coordinate", offset=body)
    return PointCloud(xyz)


def write_ply(cloud: PointCloud, *, binary: bool = True, dtype: str = "f8") -> bytes:
    """Serialize a cloud as PLY. ``dtype`` is ``"f8"`` (double) or ``"f4"`` (float)."""
    if dtype not in ("f4", "f8"):
        raise ValueError("dtype must be 'f4' or 'f8'")
    type_name = "double" if dtype == "f8" else "float"
    fmt = "binary_little_endian" if binary else "ascii"
    header = (
        f"ply\nformat {fmt} 1.0\nelement vertex {len(cloud)}\n"
        f"property {type_name} x\nproperty {type_name} y\nproperty {type_name} z\nend_header\n"
    ).encode("ascii")
    pts = cloud.points.astype("<" + dtype)
    if binary:
        return header + pts.tobytes()
    # repr round-trips exactly for both float32 and float64
    body = "".join(f"{repr(float(x))} {repr(float(y))} {repr(float(z))}\n" for x, y, z in pts.tolist())
    return header + body.encode("ascii")


def parse_xyz(text: str) -> PointCloud:
    pts = []
    for lineno, line in enumerate(text.splitlines(), start=1):
        s = line.split("#", 1)[0].strip()
        if not s:
            continue
        tok = s.split()
        if len(tok) != 3:
            raise ParseError(f"expected 3 values, got {len(tok)}", line=lineno)
        try:
            p = [float(t) for t in tok]
        except ValueError:
            raise ParseError(f"non-numeric token in {s!r}", line=lineno) from None
        if not all(np.isfinite(p)):
            raise ParseError("non-finite coordinate", line=lineno)
        pts.append(p)
    return PointCloud(np.array(pts, dtype=np.float64).reshape(-1, 3))


def read_cloud(path: str | Path) -> PointCloud:
    """Load a point cloud, choosing the parser from the file extension."""
    path = Path(path)
    if path.suffix.lower() == ".ply":
        return parse_ply(path.read_bytes())
    return parse_xyz(path.read_text(encoding="utf-8"))


# ------------------------------------------------------- JSON documents

def _no_duplicates(pairs):
    out = {}
    for k, v in pairs:
        if k in out:
            raise SchemaError(f"duplicate key {k!r}")
        out[k] = v
    return out


def _load_json(doc) -> dict:
    if isinstance(doc, (str, bytes, bytearray)):
        try:
            doc = json.loads(doc, object_pairs_hook=_no_duplicates)
        except json.JSONDecodeError as e:
            raise SchemaError(f"invalid JSON: {e}") from None
    if not isinstance(doc, dict):
        raise SchemaError("document must be a JSON object")
    return doc


def _require_dim(doc: dict) -> int:
    dim = doc.get("embedding_dim")
    if not isinstance(dim, int) or isinstance(dim, bool) or dim < 1:
        raise SchemaError("embedding_dim must be a positive integer")
    return dim


def load_object_map(doc: str | bytes | dict) -> ObjectMap:
    doc = _load_json(doc)
    dim = _require_dim(doc)
    objs = doc.get("objects")
    if not isinstance(objs, list):
        raise SchemaError("'objects' must be a list")
    out = []
    seen = set()
    for k, o in enumerate(objs):
        if not isinstance(o, dict) or not {"id", "embedding", "points"} <= o.keys():
            raise SchemaError(f"object #{k}: needs id, embedding and points")
        oid = o["id"]
        if not isinstance(oid, int) or isinstance(oid, bool):
            raise SchemaError(f"object #{k}: id must be an integer")
        if oid in seen:
            raise SchemaError(f"duplicate object id {oid}")
        seen.add(oid)
        emb = o["embedding"]
        if not isinstance(emb, list) or len(emb) != dim:
            got = len(emb) if isinstance(emb, list) else type(emb).__name__
            raise DimensionError(f"object {oid}: embedding has dim {got}, expected {dim}")
        try:
            pts = np.asarray(o["points"], dtype=np.float64)
        except (TypeError, ValueError):
            raise SchemaError(f"object {oid}: points must be numeric triples") from None
        if pts.ndim != 2 or pts.shape[1] != 3 or len(pts) == 0:
            raise SchemaError(f"object {oid}: points must be a non-empty list of [x, y, z]")
        if not np.all(np.isfinite(pts)):
            raise SchemaError(f"object {oid}: non-finite point")
        try:
            vec = _unit(emb, f"object {oid}")
        except (TypeError, ValueError):
            raise SchemaError(f"object {oid}: embedding must be numeric") from None
        out.append(ObjectInstance(oid, PointCloud(pts), vec))
    return ObjectMap(tuple(out), dim)


def dump_object_map(omap: ObjectMap) -> str:
    return json.dumps({
        "embedding_dim": omap.embedding_dim,
        "objects": [
            {"id": o.id, "embedding": o.embedding.tolist(), "points": o.points.points.tolist()}
            for o in omap.objects
        ],
    })


def load_embedding_table(doc: str | bytes | dict) -> EmbeddingTable:
    doc = _load_json(doc)
    dim = _require_dim(doc)
    entries = doc.get("entries")
    if not isinstance(entries, dict):
        raise SchemaError("'entries' must be an object mapping phrase -> vector")
    if not entries:
        raise SchemaError("embedding table is empty")
    vecs = {}
    for phrase, v in entries.items():
        if not isinstance(v, list) or len(v) != dim:
            raise DimensionError(f"phrase {phrase!r}: expected dim {dim}")
        try:
            vecs[phrase] = _unit(v, f"phrase {phrase!r}")
        except (TypeError, ValueError):
            raise SchemaError(f"phrase {phrase!r}: vector must be numeric") from None
    return EmbeddingTable(vecs)


def dump_embedding_table(table: EmbeddingTable) -> str:
    return json.dumps({
        "embedding_dim": table.dim,
        "entries": {p: table[p].tolist() for p in table.phrases},
    })


def read_vector(text: str) -> np.ndarray:
    """Read a query vector given as a JSON list or whitespace-separated floats."""
    s = text.strip()
    try:
        vals = json.loads(s) if s.startswith("[") else [float(t) for t in s.split()]
    except (ValueError, json.JSONDecodeError):
        raise SchemaError("vector file must hold a JSON list or whitespace-separated floats") from None
    return _unit(vals, "query")
