"""Bit-exact binary checkpoints.

Layout: magic bytes ``STUCKPT1``, a little-endian uint32 byte length of a
JSON metadata blob ``{"arch": {...}, "seed": ..., "step": ..., "mode": ...}``,
the metadata itself, then the raw little-endian float64 parameter values in
canonical layer order. Metadata JSON is written with sorted keys and no
whitespace so identical runs produce identical files.
"""

from __future__ import annotations

import json
import struct

import numpy as np

from .errors import ParseError, SchemaError
from .model import Architecture, ParamVector

MAGIC = b"STUCKPT1"


def save_checkpoint(path, params: ParamVector, seed: int, step: int, mode: str) -> None:
    arch = params.arch
    meta = {
        "arch": {
            "feature_dim": arch.feature_dim,
            "context": arch.context,
            "hidden_sizes": list(arch.hidden_sizes),
            "vocab_size": arch.vocab_size,
        },
        "seed": int(seed),
        "step": int(step),
        "mode": str(mode),
    }
    blob = json.dumps(meta, sort_keys=True, separators=(",", ":")).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I", len(blob)))
        fh.write(blob)
        fh.write(params.values.astype("<f8").tobytes())


def load_checkpoint(path) -> tuple[ParamVector, dict]:
    with open(path, "rb") as fh:
        magic = fh.read(len(MAGIC))
        if magic != MAGIC:
            raise ParseError(f"{path}: not a checkpoint file (bad magic)")
        (meta_len,) = struct.unpack("<I", fh.read(4))
        try:
            meta = json.loads(fh.read(meta_len).decode("utf-8"))
        except (json.JSONDecodeError, UnicodeDecodeError) as exc:
            raise ParseError(f"{path}: corrupt checkpoint metadata") from exc
        for key in ("arch", "seed", "step", "mode"):
            if key not in meta:
                raise SchemaError(f"{path}: checkpoint metadata missing '{key}'")
        a = meta["arch"]
        arch = Architecture(
            feature_dim=int(a["feature_dim"]),
            context=int(a["context"]),
            hidden_sizes=tuple(a["hidden_sizes"]),
            vocab_size=int(a["vocab_size"]),
        )
        raw = fh.read()
    values = np.frombuffer(raw, dtype="<f8").astype(np.float64)
    if values.size != arch.param_count():
        raise SchemaError(
            f"{path}: parameter blob has {values.size} values, architecture needs {arch.param_count()}"
        )
    return ParamVector(values, arch), meta
