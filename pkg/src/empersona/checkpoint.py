"""Single-file parameter container.

Layout: one UTF-8 JSON manifest line (ordered list of name / shape /
dtype records), a newline, then each parameter's raw bytes row-major
little-endian, concatenated in manifest order. Round trips are
bit-exact, which the rerun-reproducibility tests rely on.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

_DTYPES = {"float32": "<f4", "float64": "<f8"}


def save_params(path, named_params) -> None:
    """Write ``[(name, ndarray), ...]`` to ``path``; order is preserved."""
    named_params = list(named_params)
    manifest = []
    for name, arr in named_params:
        if arr.dtype.name not in _DTYPES:
            raise TypeError(f"parameter {name!r} has unsupported dtype {arr.dtype}")
        manifest.append({"name": name, "shape": list(arr.shape), "dtype": arr.dtype.name})
    names = [m["name"] for m in manifest]
    if len(set(names)) != len(names):
        raise ValueError("duplicate parameter names in checkpoint")
    with open(path, "wb") as fh:
        fh.write(json.dumps({"params": manifest}).encode("utf-8"))
        fh.write(b"\n")
        for (_, arr), meta in zip(named_params, manifest):
            fh.write(np.ascontiguousarray(arr).astype(_DTYPES[meta["dtype"]], copy=False).tobytes())


def load_params(path) -> dict[str, np.ndarray]:
    """Read a checkpoint back into an ordered ``{name: ndarray}`` dict."""
    raw = Path(path).read_bytes()
    nl = raw.index(b"\n")
    manifest = json.loads(raw[:nl].decode("utf-8"))["params"]
    out: dict[str, np.ndarray] = {}
    offset = nl + 1
    for meta in manifest:
        dt = np.dtype(_DTYPES[meta["dtype"]])
        shape = tuple(meta["shape"])
        count = int(np.prod(shape)) if shape else 1
        nbytes = count * dt.itemsize
        arr = np.frombuffer(raw, dtype=dt, count=count, offset=offset).reshape(shape)
        out[meta["name"]] = arr.astype(meta["dtype"])  # native byte order, writable
        offset += nbytes
    if offset != len(raw):
        raise ValueError(f"checkpoint has {len(raw) - offset} trailing bytes")
    return out


def save_model(path, model) -> None:
    save_params(path, [(n, p.data) for n, p in model.named_parameters()])


def load_model(path, model) -> None:
    """Load stored arrays into ``model`` in place; shapes must match exactly."""
    stored = load_params(path)
    seen = set()
    for name, p in model.named_parameters():
        if name not in stored:
            raise KeyError(f"checkpoint is missing parameter {name!r}")
        arr = stored[name]
        if arr.shape != p.data.shape:
            raise ValueError(
                f"parameter {name!r}: checkpoint shape {arr.shape} != model shape {p.data.shape}")
        p.data = arr.astype(p.data.dtype, copy=False)
        p.grad = None
        seen.add(name)
    extra = sorted(set(stored) - seen)
    if extra:
        raise ValueError(f"checkpoint has parameters not in model: {extra}")
