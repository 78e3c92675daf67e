"""Parameter checkpoints.

Layout (JSON, UTF-8, keys sorted, no insignificant whitespace variation)::

    {
      "format": "pcfilter-checkpoint",
      "version": 1,
      "meta": {...free-form run metadata...},
      "params": {
        "<name>": {"shape": [d0, d1, ...], "values": [v0, v1, ...]}
      }
    }

``values`` is the row-major flattening of the parameter. Floats are written
with ``repr`` so 64-bit values round-trip exactly.
"""
from __future__ import annotations

import json
from pathlib import Path

import numpy as np

FORMAT = "pcfilter-checkpoint"
VERSION = 1


class CheckpointError(ValueError):
    pass


def save_checkpoint(path, params: dict[str, np.ndarray], meta: dict | None = None) -> None:
    body = {
        "format": FORMAT,
        "version": VERSION,
        "meta": meta or {},
        "params": {
            name: {"shape": list(np.shape(arr)), "values": [float(v) for v in np.ravel(arr)]}
            for name, arr in sorted(params.items())
        },
    }
    Path(path).write_text(json.dumps(body, sort_keys=True, indent=1) + "\n")


def load_checkpoint(path) -> tuple[dict[str, np.ndarray], dict]:
    path = Path(path)
    if not path.is_file():
        raise CheckpointError(f"checkpoint not found: {path}")
    try:
        body = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise CheckpointError(f"malformed checkpoint {path}: {exc}") from exc
    if body.get("format") != FORMAT:
        raise CheckpointError(f"{path}: not a {FORMAT} file")
    if body.get("version") != VERSION:
        raise CheckpointError(f"{path}: unsupported version {body.get('version')}")
    params = {}
    for name, entry in body["params"].items():
        shape = tuple(entry["shape"])
        values = np.asarray(entry["values"], dtype=np.float64)
        if values.size != int(np.prod(shape, dtype=np.int64)):
            raise CheckpointError(f"{path}: parameter {name!r} has {values.size} values for shape {shape}")
        params[name] = values.reshape(shape)
    return params, body.get("meta", {})
