"""STF tensor files.

One record is a UTF-8 JSON header line ``{"shape": [...], "dtype": "f32"}``
terminated by ``\\n``, followed by the little-endian IEEE-754 payload in
row-major order with no padding. A file may hold several records back to
back; parameter files name each record with an extra ``"name"`` key and the
first record may carry the model ``"config"``.
"""

from __future__ import annotations

import json
from pathlib import Path
from typing import BinaryIO, Iterator, Optional

import numpy as np

from sacanet.tensor import Tensor

_DTYPES = {"f32": np.dtype("<f4"), "f64": np.dtype("<f8"), "u8": np.dtype("u1"), "i32": np.dtype("<i4")}


class STFError(IOError):
    """Malformed STF content."""


def _dtype_name(arr: np.ndarray) -> str:
    for name, dt in _DTYPES.items():
        if arr.dtype == dt or arr.dtype == dt.newbyteorder("="):
            return name
    raise STFError(f"unsupported dtype {arr.dtype}")


def write_record(fh: BinaryIO, arr, dtype: Optional[str] = "f32", **extra) -> None:
    if isinstance(arr, Tensor):
        arr = arr.data
    arr = np.asarray(arr)
    name = dtype or _dtype_name(arr)
    if name not in _DTYPES:
        raise STFError(f"unsupported dtype {name!r}")
    payload = np.asarray(arr, dtype=_DTYPES[name], order="C")
    header = {"shape": list(payload.shape), "dtype": name, **extra}
    fh.write(json.dumps(header).encode("utf-8") + b"\n")
    fh.write(payload.tobytes(order="C"))


def read_records(fh: BinaryIO) -> Iterator[tuple[dict, np.ndarray]]:
    while True:
        line = fh.readline()
        if not line:
            return
        if not line.endswith(b"\n"):
            raise STFError("truncated header")
        try:
            header = json.loads(line.decode("utf-8"))
            shape = [int(n) for n in header["shape"]]
            dt = _DTYPES[header["dtype"]]
        except (ValueError, KeyError, TypeError) as exc:
            raise STFError(f"bad header: {exc}") from None
        count = int(np.prod(shape)) if shape else 1
        raw = fh.read(count * dt.itemsize)
        if len(raw) != count * dt.itemsize:
            raise STFError("payload shorter than header shape")
        yield header, np.frombuffer(raw, dtype=dt).reshape(shape).copy()


def save(path, arr, dtype: Optional[str] = "f32") -> None:
    with open(path, "wb") as fh:
        write_record(fh, arr, dtype)


def load(path) -> np.ndarray:
    """Read the first record of a file as a numpy array in its stored dtype."""
    with open(path, "rb") as fh:
        for _, arr in read_records(fh):
            return arr
    raise STFError(f"{path}: no records")


def save_named(path, tensors: dict, config: Optional[dict] = None, dtype: str = "f64") -> None:
    with open(path, "wb") as fh:
        for i, (name, t) in enumerate(tensors.items()):
            extra = {"name": name}
            if i == 0 and config is not None:
                extra["config"] = config
            write_record(fh, t, dtype, **extra)


def load_named(path) -> tuple[dict[str, np.ndarray], Optional[dict]]:
    out: dict[str, np.ndarray] = {}
    config = None
    with open(Path(path), "rb") as fh:
        for header, arr in read_records(fh):
            if "name" not in header:
                raise STFError("parameter record without a name")
            config = header.get("config", config)
            out[header["name"]] = arr
    return out, config
