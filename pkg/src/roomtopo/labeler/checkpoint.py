"""Model checkpoints as .npz: a JSON header plus one float64 array per named parameter."""

from __future__ import annotations

import io
import json
from pathlib import Path

import numpy as np

from ..errors import SchemaError
from .config import LabelerConfig
from .model import LabelerModel, param_shapes

_HEADER = "__header__"


def save_checkpoint(model: LabelerModel, path: str | Path | None = None) -> bytes:
    header = json.dumps({"config": model.config.to_dict(), "classes": list(model.classes)})
    arrays = {name: np.ascontiguousarray(p, dtype="<f8") for name, p in model.params.items()}
    buf = io.BytesIO()
    np.savez(buf, **{_HEADER: np.array(header)}, **arrays)
    data = buf.getvalue()
    if path is not None:
        Path(path).write_bytes(data)
    return data


def load_checkpoint(src: str | Path | bytes, expect: LabelerConfig | None = None) -> LabelerModel:
    """Load a checkpoint; a mismatch with ``expect`` or with the stored shapes is an error."""
    data = src if isinstance(src, bytes) else Path(src).read_bytes()
    try:
        with np.load(io.BytesIO(data), allow_pickle=False) as z:
            header = json.loads(str(z[_HEADER]))
            params = {k: np.array(z[k], dtype=np.float64) for k in z.files if k != _HEADER}
    except (OSError, ValueError, KeyError) as e:
        raise SchemaError(f"unreadable checkpoint: {e}") from None
    config = LabelerConfig.from_dict(header["config"])
    if expect is not None and expect != config:
        raise SchemaError("checkpoint config does not match the requested config")
    classes = tuple(header.get("classes", ()))
    shapes = param_shapes(config, len(classes))
    if set(shapes) != set(params):
        raise SchemaError("checkpoint parameter names do not match its config")
    for name, shape in shapes.items():
        if params[name].shape != shape:
            raise SchemaError(f"parameter {name}: shape {params[name].shape}, config implies {shape}")
        if not np.all(np.isfinite(params[name])):
            raise SchemaError(f"parameter {name} is not finite")
    return LabelerModel(config, {k: params[k] for k in shapes}, classes)
