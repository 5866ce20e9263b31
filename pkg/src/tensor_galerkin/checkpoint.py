"""Self-describing parameter checkpoints.

Two interchangeable encodings of the same content (architecture metadata, the
flattening-order version tag and the full float64 parameter vector):

* text: a single JSON document.  Python's float repr round-trips binary64
  exactly, so the text form is both diffable and bit-faithful.
* binary: a one-line JSON header followed by the raw little-endian float64
  vector.
"""
from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from .tnn import InputMap, TnnArchitecture, TnnParams

__all__ = ["save_checkpoint", "load_checkpoint", "PARAM_ORDER_TAG"]

FORMAT = "tensor-galerkin-checkpoint"
VERSION = 1
PARAM_ORDER_TAG = "dim-major/layer/row-major/bias-after-matrix/v1"
_MAGIC = b"TGCKPT1\n"


def _arch_to_dict(arch: TnnArchitecture) -> dict:
    return {
        "d": arch.d,
        "p": arch.p,
        "hidden": list(arch.hidden),
        "activation": arch.activation,
        "domain": [list(iv) for iv in arch.domain],
        "input_map": {"kind": arch.input_map.kind, "a": arch.input_map.a, "b": arch.input_map.b},
    }


def _arch_from_dict(d: dict) -> TnnArchitecture:
    im = d["input_map"]
    return TnnArchitecture(
        d=int(d["d"]),
        p=int(d["p"]),
        hidden=tuple(int(w) for w in d["hidden"]),
        domain=tuple((float(lo), float(hi)) for lo, hi in d["domain"]),
        input_map=InputMap(im["kind"], float(im["a"]), None if im["b"] is None else float(im["b"])),
        activation=d.get("activation", "tanh"),
    )


def _header(params: TnnParams) -> dict:
    return {
        "format": FORMAT,
        "version": VERSION,
        "param_order": PARAM_ORDER_TAG,
        "arch": _arch_to_dict(params.arch),
        "count": int(params.flat.size),
    }


def save_checkpoint(params: TnnParams, path: str | Path, binary: bool = False) -> Path:
    path = Path(path)
    if binary:
        header = json.dumps(_header(params)).encode()
        payload = np.ascontiguousarray(params.flat, dtype="<f8").tobytes()
        with open(path, "wb") as fh:
            fh.write(_MAGIC)
            fh.write(len(header).to_bytes(8, "little"))
            fh.write(header)
            fh.write(payload)
    else:
        doc = _header(params)
        doc["params"] = params.flat.tolist()
        with open(path, "w") as fh:
            json.dump(doc, fh)
            fh.write("\n")
    return path


def load_checkpoint(path: str | Path) -> TnnParams:
    path = Path(path)
    with open(path, "rb") as fh:
        head = fh.read(len(_MAGIC))
        if head == _MAGIC:
            n = int.from_bytes(fh.read(8), "little")
            header = json.loads(fh.read(n).decode())
            _validate_header(header, path)
            flat = np.frombuffer(fh.read(), dtype="<f8").astype(np.float64)
        else:
            fh.seek(0)
            header = json.loads(fh.read().decode())
            _validate_header(header, path)
            flat = np.asarray(header.pop("params"), dtype=np.float64)
    arch = _arch_from_dict(header["arch"])
    if flat.size != header["count"]:
        raise ValueError(f"{path}: checkpoint holds {flat.size} values, header says {header['count']}")
    return TnnParams(arch, flat)


def _validate_header(header: dict, path: Path):
    if header.get("format") != FORMAT:
        raise ValueError(f"{path} is not a parameter checkpoint")
    if header.get("version") != VERSION:
        raise ValueError(f"{path}: unsupported checkpoint version {header.get('version')}")
    if header.get("param_order") != PARAM_ORDER_TAG:
        raise ValueError(f"{path}: incompatible flattening order {header.get('param_order')}")
