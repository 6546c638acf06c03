"""Set encoder with a learned CLS token: forward pass and hand-written backprop.

Each block is pre-normalised::

    x = x + Dropout(MHA(LN1(x)))
    x = x + Dropout(W2 @ gelu(W1 @ LN2(x)))

followed by a final LayerNorm whose output at position 0 is ``e_cls``. There
are no positional encodings, so the encoder is invariant to the order of the
object tokens. Padding tokens are excluded from attention as keys.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from ..errors import DimensionError
from .config import LabelerConfig

LN_EPS = 1e-5
_GELU_C = float(np.sqrt(2.0 / np.pi))

_LAYER_PARAMS = (
    "ln1.g", "ln1.b",
    "wq", "bq", "wk", "bk", "wv", "bv", "wo", "bo",
    "ln2.g", "ln2.b",
    "w1", "b1", "w2", "b2",
)


def param_shapes(config: LabelerConfig, num_classes: int = 0) -> dict[str, tuple[int, ...]]:
    d = config.embedding_dim
    f = config.ffn_mult * d
    shapes: dict[str, tuple[int, ...]] = {"cls": (d,)}
    per_layer = {
        "ln1.g": (d,), "ln1.b": (d,),
        "wq": (d, d), "bq": (d,), "wk": (d, d), "bk": (d,),
        "wv": (d, d), "bv": (d,), "wo": (d, d), "bo": (d,),
        "ln2.g": (d,), "ln2.b": (d,),
        "w1": (d, f), "b1": (f,), "w2": (f, d), "b2": (d,),
    }
    for layer in range(config.num_layers):
        for name in _LAYER_PARAMS:
            shapes[f"layers.{layer}.{name}"] = per_layer[name]
    shapes["lnf.g"] = (d,)
    shapes["lnf.b"] = (d,)
    if config.head_mode == "logits":
        shapes["head"] = (num_classes, d)
    return shapes


@dataclass(eq=False)
class LabelerModel:
    config: LabelerConfig
    params: dict[str, np.ndarray]
    classes: tuple[str, ...] = ()  # phrase order of the logits head

    @property
    def num_parameters(self) -> int:
        return int(sum(p.size for p in self.params.values()))

    def copy(self) -> "LabelerModel":
        return LabelerModel(self.config, {k: v.copy() for k, v in self.params.items()}, self.classes)


def init_model(config: LabelerConfig, seed: int | None = None, classes: Sequence[str] = ()) -> LabelerModel:
    """Uniform(+-1/sqrt(fan_in)) weights; residual output projections (wo, w2) start at zero."""
    config.validate()
    if config.head_mode == "logits" and not classes:
        raise ValueError("logits head needs the class phrases")
    rng = np.random.default_rng(config.seed if seed is None else seed)
    params = {}
    for name, shape in param_shapes(config, len(classes)).items():
        leaf = name.rsplit(".", 1)[-1]
        if name == "cls":
            p = rng.uniform(-1.0, 1.0, shape)
        elif leaf in ("wo", "w2"):
            p = np.zeros(shape)
        elif leaf in ("wq", "wk", "wv", "w1"):
            p = rng.uniform(-1.0, 1.0, shape) / np.sqrt(shape[0])
        elif name == "head":
            p = rng.uniform(-1.0, 1.0, shape) / np.sqrt(shape[1])
        elif leaf == "g":
            p = np.ones(shape)
        else:
            p = np.zeros(shape)
        params[name] = p
    return LabelerModel(config, params, tuple(classes) if config.head_mode == "logits" else ())


# ------------------------------------------------------------ primitives

def _ln_fwd(x, g, b):
    mu = x.mean(axis=-1, keepdims=True)
    xc = x - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    rstd = 1.0 / np.sqrt(var + LN_EPS)
    xhat = xc * rstd
    return xhat * g + b, (xhat, rstd)


def _ln_bwd(dy, g, cache):
    xhat, rstd = cache
    dxhat = dy * g
    dx = rstd * (
        dxhat
        - dxhat.mean(axis=-1, keepdims=True)
        - xhat * (dxhat * xhat).mean(axis=-1, keepdims=True)
    )
    red = tuple(range(dy.ndim - 1))
    return dx, (dy * xhat).sum(axis=red), dy.sum(axis=red)


def _gelu(u):
    t = np.tanh(_GELU_C * u * (1.0 + 0.044715 * u * u))
    return 0.5 * u * (1.0 + t), t


def _gelu_grad(u, t):
    return 0.5 * (1.0 + t) + 0.5 * u * (1.0 - t * t) * _GELU_C * (1.0 + 3 * 0.044715 * u * u)


def _outer_sum(a, b):
    """sum over batch and sequence of a^T b for (B, L, m) and (B, L, n) arrays."""
    return a.reshape(-1, a.shape[-1]).T @ b.reshape(-1, b.shape[-1])


def _split(x, heads):
    b, n, d = x.shape
    return x.reshape(b, n, heads, d // heads).transpose(0, 2, 1, 3)


def _merge(x):
    b, h, n, dh = x.shape
    return x.transpose(0, 2, 1, 3).reshape(b, n, h * dh)


def _dropout_mask(rng, shape, rate):
    return (rng.random(shape) >= rate) / (1.0 - rate)


# ---------------------------------------------------------------- batch

def pack(model: LabelerModel, rooms: Sequence[np.ndarray]) -> tuple[np.ndarray, np.ndarray]:
    """Stack [cls; objects...] sequences into a padded (B, L, D) array plus a validity mask."""
    d = model.config.embedding_dim
    if not rooms:
        raise ValueError("empty batch")
    lens = []
    for objs in rooms:
        objs = np.asarray(objs)
        if objs.ndim != 2 or len(objs) == 0:
            raise ValueError("each room needs at least one object embedding")
        if objs.shape[1] != d:
            raise DimensionError(f"object embeddings have dim {objs.shape[1]}, model expects {d}")
        lens.append(len(objs))
    seq = 1 + max(lens)
    x = np.zeros((len(rooms), seq, d))
    valid = np.zeros((len(rooms), seq), dtype=bool)
    x[:, 0] = model.params["cls"]
    valid[:, 0] = True
    for k, objs in enumerate(rooms):
        x[k, 1:1 + lens[k]] = objs
        valid[k, 1:1 + lens[k]] = True
    return x, valid


def encode(model: LabelerModel, rooms: Sequence[np.ndarray], train_mode: bool = False,
           rng: np.random.Generator | None = None, keep_cache: bool = False):
    """Batched forward pass. Returns e_cls of shape (B, D) (and the backprop cache)."""
    cfg = model.config
    P = model.params
    heads = cfg.num_heads
    scale = 1.0 / np.sqrt(cfg.embedding_dim // heads)
    drop = cfg.dropout_rate if train_mode else 0.0
    if drop > 0 and rng is None:
        raise ValueError("train_mode with dropout needs an rng")
    x, valid = pack(model, rooms)
    keymask = valid[:, None, None, :]
    caches = []
    for layer in range(cfg.num_layers):
        p = lambda n: P[f"layers.{layer}.{n}"]  # noqa: E731
        h1, ln1c = _ln_fwd(x, p("ln1.g"), p("ln1.b"))
        q = _split(h1 @ p("wq") + p("bq"), heads)
        k = _split(h1 @ p("wk") + p("bk"), heads)
        v = _split(h1 @ p("wv") + p("bv"), heads)
        s = np.where(keymask, q @ k.transpose(0, 1, 3, 2) * scale, -np.inf)
        s = s - s.max(axis=-1, keepdims=True)
        a = np.exp(s)
        a /= a.sum(axis=-1, keepdims=True)
        o = _merge(a @ v)
        att = o @ p("wo") + p("bo")
        m1 = _dropout_mask(rng, att.shape, drop) if drop > 0 else None
        x1 = x + (att * m1 if m1 is not None else att)
        h2, ln2c = _ln_fwd(x1, p("ln2.g"), p("ln2.b"))
        u = h2 @ p("w1") + p("b1")
        g, t = _gelu(u)
        f = g @ p("w2") + p("b2")
        m2 = _dropout_mask(rng, f.shape, drop) if drop > 0 else None
        x = x1 + (f * m2 if m2 is not None else f)
        if keep_cache:
            caches.append((h1, ln1c, q, k, v, a, o, m1, h2, ln2c, u, g, t, m2))
    e, lnfc = _ln_fwd(x[:, 0], P["lnf.g"], P["lnf.b"])
    if keep_cache:
        return e, (x.shape, caches, lnfc)
    return e


def backward(model: LabelerModel, d_e: np.ndarray, cache) -> dict[str, np.ndarray]:
    """Gradients of all encoder parameters given dLoss/de_cls of shape (B, D)."""
    cfg = model.config
    P = model.params
    heads = cfg.num_heads
    scale = 1.0 / np.sqrt(cfg.embedding_dim // heads)
    xshape, caches, lnfc = cache
    grads: dict[str, np.ndarray] = {}
    dx0, grads["lnf.g"], grads["lnf.b"] = _ln_bwd(d_e, P["lnf.g"], lnfc)
    dx = np.zeros(xshape)
    dx[:, 0] = dx0
    for layer in reversed(range(cfg.num_layers)):
        pre = f"layers.{layer}."
        p = lambda n: P[pre + n]  # noqa: E731
        h1, ln1c, q, k, v, a, o, m1, h2, ln2c, u, g, t, m2 = caches[layer]
        # feed-forward branch
        df = dx * m2 if m2 is not None else dx
        grads[pre + "w2"] = _outer_sum(g, df)
        grads[pre + "b2"] = df.sum(axis=(0, 1))
        du = (df @ p("w2").T) * _gelu_grad(u, t)
        grads[pre + "w1"] = _outer_sum(h2, du)
        grads[pre + "b1"] = du.sum(axis=(0, 1))
        dh2 = du @ p("w1").T
        dln, grads[pre + "ln2.g"], grads[pre + "ln2.b"] = _ln_bwd(dh2, p("ln2.g"), ln2c)
        dx1 = dx + dln
        # attention branch
        datt = dx1 * m1 if m1 is not None else dx1
        grads[pre + "wo"] = _outer_sum(o, datt)
        grads[pre + "bo"] = datt.sum(axis=(0, 1))
        do = _split(datt @ p("wo").T, heads)
        da = do @ v.transpose(0, 1, 3, 2)
        dv = a.transpose(0, 1, 3, 2) @ do
        ds = a * (da - (da * a).sum(axis=-1, keepdims=True)) * scale
        dq = _merge(ds @ k)
        dk = _merge(ds.transpose(0, 1, 3, 2) @ q)
        dv = _merge(dv)
        dh1 = np.zeros_like(h1)
        for name, dproj in (("q", dq), ("k", dk), ("v", dv)):
            grads[pre + "w" + name] = _outer_sum(h1, dproj)
            grads[pre + "b" + name] = dproj.sum(axis=(0, 1))
            dh1 += dproj @ p("w" + name).T
        dln, grads[pre + "ln1.g"], grads[pre + "ln1.b"] = _ln_bwd(dh1, p("ln1.g"), ln1c)
        dx = dx1 + dln
    grads["cls"] = dx[:, 0].sum(axis=0)
    return grads


def forward(model: LabelerModel, object_embeddings, train_mode: bool = False,
            rng: np.random.Generator | None = None) -> np.ndarray:
    """e_cls for a single room given its (u, D) object embeddings."""
    return encode(model, [np.asarray(object_embeddings, dtype=np.float64)], train_mode, rng)[0]
