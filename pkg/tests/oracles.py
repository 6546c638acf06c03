"""Slow, independent reference implementations used only by the tests.

Each oracle is written from the definition, not from the library code, so an
agreement between the two is evidence rather than tautology.
"""

from __future__ import annotations

import math
from fractions import Fraction

import numpy as np


def cell_edges(origin: float, tile: float, n: int) -> np.ndarray:
    return origin + tile * np.arange(n + 1)


def interval_membership(v: np.ndarray, edges: np.ndarray) -> np.ndarray:
    """(len(v), n) boolean: v in [e_k, e_{k+1}), last interval closed on the right."""
    lo, hi = edges[:-1], edges[1:]
    inside = (v[:, None] >= lo[None, :]) & (v[:, None] < hi[None, :])
    inside[:, -1] |= v == edges[-1]
    return inside


def brute_counts(xy: np.ndarray, spec) -> np.ndarray:
    """Per-cell point counts via explicit interval tests on both axes."""
    if len(xy) == 0:
        return np.zeros(spec.shape, dtype=np.int64)
    ax = interval_membership(xy[:, 0], cell_edges(spec.origin[0], spec.tile_size, spec.width))
    ay = interval_membership(xy[:, 1], cell_edges(spec.origin[1], spec.tile_size, spec.height))
    return ax.astype(np.int64).T @ ay.astype(np.int64)


def brute_slice(points: np.ndarray, spec, b1: float, b2: float) -> np.ndarray:
    keep = []
    for p in points:
        rel = p[2] - spec.z_floor
        keep.append(b1 * spec.h <= rel <= b2 * spec.h)
    sel = points[np.array(keep, dtype=bool)] if len(points) else points
    return (brute_counts(sel[:, :2] if len(sel) else np.zeros((0, 2)), spec) >= 1).astype(np.uint8)


def brute_nearest_room(xy, rooms: list[tuple[int, np.ndarray]], spec) -> tuple[int, float]:
    """Linear scan over every room cell centre; ties go to the lowest room id."""
    best_id, best = None, math.inf
    for rid, mask in sorted(rooms, key=lambda r: r[0]):
        for i, j in zip(*np.nonzero(mask)):
            cx = spec.origin[0] + (i + 0.5) * spec.tile_size
            cy = spec.origin[1] + (j + 0.5) * spec.tile_size
            dx, dy = xy[0] - cx, xy[1] - cy
            d2 = dx * dx + dy * dy
            if d2 < best:
                best_id, best = rid, d2
    return best_id, math.sqrt(best)


def fraction_iou(a: np.ndarray, b: np.ndarray) -> Fraction:
    inter = int(np.count_nonzero(a & b))
    union = int(np.count_nonzero(a | b))
    return Fraction(0) if union == 0 else Fraction(inter, union)


def greedy_flags(preds, gts, thr) -> list[bool]:
    """(id, confidence, mask) tuples; greedy matching with exact rational IoU."""
    order = sorted(preds, key=lambda p: (-p[1], p[0]))
    gts = sorted(gts, key=lambda g: g[0])
    taken = set()
    flags = []
    thr = Fraction(thr).limit_denominator(10**9)
    for _, _, pm in order:
        best_k, best = None, Fraction(-1)
        for k, (_, gm) in enumerate(gts):
            if k in taken:
                continue
            iou = fraction_iou(pm, gm)
            if iou > best:
                best_k, best = k, iou
        ok = best_k is not None and best >= thr
        if ok:
            taken.add(best_k)
        flags.append(ok)
    return flags


def exhaustive_ap(flags: list[bool], n_gt: int) -> Fraction:
    """All-point AP from the definition: for every recall level reached, the best precision
    at any rank with recall at least that level, weighted by the recall increment."""
    if n_gt == 0:
        return Fraction(1) if not flags else Fraction(0)
    points = []
    tp = 0
    for rank, f in enumerate(flags, start=1):
        tp += int(f)
        points.append((Fraction(tp, n_gt), Fraction(tp, rank)))
    levels = sorted({r for r, _ in points if r > 0})
    ap, prev = Fraction(0), Fraction(0)
    for r in levels:
        ap += (r - prev) * max(p for rr, p in points if rr >= r)
        prev = r
    return ap


def point_in_polygon_closed(x: float, y: float, poly) -> bool:
    """Boundary counts as inside; ray casting otherwise."""
    n = len(poly)
    for k in range(n):
        (x1, y1), (x2, y2) = poly[k], poly[(k + 1) % n]
        cross = (x2 - x1) * (y - y1) - (y2 - y1) * (x - x1)
        if abs(cross) < 1e-12 and min(x1, x2) - 1e-12 <= x <= max(x1, x2) + 1e-12 \
                and min(y1, y2) - 1e-12 <= y <= max(y1, y2) + 1e-12:
            return True
    inside = False
    for k in range(n):
        (x1, y1), (x2, y2) = poly[k], poly[(k + 1) % n]
        if (y1 > y) != (y2 > y):
            xc = x1 + (y - y1) * (x2 - x1) / (y2 - y1)
            if x < xc:
                inside = not inside
    return inside


# --------------------------------------------------------- encoder oracle

def _layer_norm(v, g, b, eps=1e-5):
    mu = sum(v) / len(v)
    var = sum((t - mu) ** 2 for t in v) / len(v)
    return np.array([(t - mu) / math.sqrt(var + eps) for t in v]) * g + b


def _gelu(u):
    return 0.5 * u * (1.0 + math.tanh(math.sqrt(2.0 / math.pi) * (u + 0.044715 * u**3)))


def reference_cls(params: dict, num_layers: int, num_heads: int, objects: np.ndarray) -> np.ndarray:
    """Token-by-token pre-norm encoder with a prepended CLS token (eval mode)."""
    tokens = [params["cls"].copy()] + [np.array(o, dtype=np.float64) for o in objects]
    d = len(tokens[0])
    dh = d // num_heads
    for layer in range(num_layers):
        p = {k.split(".", 2)[2]: v for k, v in params.items() if k.startswith(f"layers.{layer}.")}
        h = [_layer_norm(t, p["ln1.g"], p["ln1.b"]) for t in tokens]
        q = [t @ p["wq"] + p["bq"] for t in h]
        k = [t @ p["wk"] + p["bk"] for t in h]
        v = [t @ p["wv"] + p["bv"] for t in h]
        new = []
        for a in range(len(tokens)):
            heads = []
            for hd in range(num_heads):
                sl = slice(hd * dh, (hd + 1) * dh)
                scores = [float(q[a][sl] @ k[b][sl]) / math.sqrt(dh) for b in range(len(tokens))]
                m = max(scores)
                w = [math.exp(s - m) for s in scores]
                z = sum(w)
                heads.append(sum((w[b] / z) * v[b][sl] for b in range(len(tokens))))
            att = np.concatenate(heads) @ p["wo"] + p["bo"]
            new.append(tokens[a] + att)
        tokens = new
        out = []
        for t in tokens:
            hh = _layer_norm(t, p["ln2.g"], p["ln2.b"])
            u = hh @ p["w1"] + p["b1"]
            g = np.array([_gelu(x) for x in u])
            out.append(t + g @ p["w2"] + p["b2"])
        tokens = out
    return _layer_norm(tokens[0], params["lnf.g"], params["lnf.b"])


def reference_nt_xent(e: np.ndarray, table: dict[str, np.ndarray], pos: str, tau: float) -> float:
    def cos(a, b):
        return float(a @ b) / (math.sqrt(float(a @ a)) * math.sqrt(float(b @ b)))

    num = math.exp(cos(e, table[pos]) / tau)
    den = sum(math.exp(cos(e, t) / tau) for t in table.values())
    return -math.log(num / den)


def central_difference(f, x: np.ndarray, eps: float = 1e-4) -> np.ndarray:
    g = np.zeros_like(x)
    it = np.nditer(x, flags=["multi_index"])
    for _ in it:
        idx = it.multi_index
        old = x[idx]
        x[idx] = old + eps
        fp = f()
        x[idx] = old - eps
        fm = f()
        x[idx] = old
        g[idx] = (fp - fm) / (2 * eps)
    return g


def relative_error(a: np.ndarray, b: np.ndarray, floor: float = 1e-6) -> float:
    """Norm-wise relative error; ``floor`` keeps structurally zero gradients from dividing 0 by 0."""
    return float(np.linalg.norm(a - b) / max(np.linalg.norm(a), np.linalg.norm(b), floor))
