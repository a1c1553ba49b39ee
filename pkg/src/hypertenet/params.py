"""Named parameter store and the checkpoint container.

Checkpoint format (version 1): an uncompressed ``.npz`` archive. Each
parameter is stored under its dotted name as a row-major array of its
dtype and shape; the reserved entry ``__format__`` holds the string
``hypertenet-ckpt/1`` and ``__meta__`` an optional JSON string. Archive
members are written in sorted name order with a fixed timestamp so the
bytes depend only on the contents.
"""

from __future__ import annotations

import io
import json
import os
import zipfile
from pathlib import Path
from typing import Iterator, Mapping

import numpy as np

from .autodiff import Tensor, get_default_dtype

FORMAT_TAG = "hypertenet-ckpt/1"


class ParameterStore:
    """Ordered name → Tensor mapping; all entries are trainable leaves."""

    def __init__(self, rng: np.random.Generator | None = None):
        self._params: dict[str, Tensor] = {}
        self.rng = rng if rng is not None else np.random.default_rng(0)

    def uniform(self, name: str, shape: tuple[int, ...], fan: int) -> Tensor:
        bound = 1.0 / np.sqrt(fan)
        return self.add(name, self.rng.uniform(-bound, bound, size=shape))

    def zeros(self, name: str, shape: tuple[int, ...]) -> Tensor:
        return self.add(name, np.zeros(shape))

    def ones(self, name: str, shape: tuple[int, ...]) -> Tensor:
        return self.add(name, np.ones(shape))

    def add(self, name: str, value) -> Tensor:
        if name in self._params:
            raise KeyError(f"duplicate parameter {name}")
        t = Tensor(value, requires_grad=True, name=name)
        self._params[name] = t
        return t

    def __getitem__(self, name: str) -> Tensor:
        return self._params[name]

    def __contains__(self, name: str) -> bool:
        return name in self._params

    def __iter__(self) -> Iterator[str]:
        return iter(self._params)

    def __len__(self) -> int:
        return len(self._params)

    def items(self):
        return self._params.items()

    def select(self, prefixes: tuple[str, ...]) -> dict[str, Tensor]:
        return {k: v for k, v in self._params.items() if k.startswith(prefixes)}

    def zero_grad(self) -> None:
        for p in self._params.values():
            p.grad = None

    def snapshot(self) -> dict[str, np.ndarray]:
        return {k: v.data.copy() for k, v in self._params.items()}

    def restore(self, values: Mapping[str, np.ndarray]) -> None:
        for k, v in values.items():
            p = self._params[k]
            if p.shape != v.shape:
                raise ValueError(f"shape mismatch restoring {k}: {v.shape} vs {p.shape}")
            p.data[...] = v

    def astype(self, dtype) -> None:
        for p in self._params.values():
            p.data = p.data.astype(dtype)


def save_checkpoint(path: str | os.PathLike, values: Mapping[str, np.ndarray], meta: dict | None = None) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    entries = {"__format__": np.array(FORMAT_TAG)}
    if meta is not None:
        entries["__meta__"] = np.array(json.dumps(meta, sort_keys=True))
    entries.update({k: np.ascontiguousarray(v) for k, v in values.items()})
    tmp = path.with_name(path.name + ".tmp")
    with zipfile.ZipFile(tmp, "w", compression=zipfile.ZIP_STORED) as zf:
        for name in sorted(entries):
            buf = io.BytesIO()
            np.lib.format.write_array(buf, entries[name], allow_pickle=False)
            info = zipfile.ZipInfo(name + ".npy", date_time=(1980, 1, 1, 0, 0, 0))
            zf.writestr(info, buf.getvalue())
    os.replace(tmp, path)


def load_checkpoint(path: str | os.PathLike) -> tuple[dict[str, np.ndarray], dict | None]:
    with np.load(path, allow_pickle=False) as npz:
        if "__format__" not in npz.files or str(npz["__format__"]) != FORMAT_TAG:
            raise ValueError(f"{path}: not a {FORMAT_TAG} checkpoint")
        meta = json.loads(str(npz["__meta__"])) if "__meta__" in npz.files else None
        values = {k: npz[k] for k in npz.files if not k.startswith("__")}
    return values, meta


def store_from_values(values: Mapping[str, np.ndarray], dtype=None) -> ParameterStore:
    store = ParameterStore()
    for k, v in values.items():
        store.add(k, np.asarray(v, dtype=dtype or get_default_dtype()))
    return store
