"""Form file format: JSON header plus inline or base64 float64 payload.

Layout matches the in-memory cell order (vertex-major, lexicographic axis
sets).  Writing is deterministic: sorted keys, compact separators, little
endian payload, so write -> read -> write round-trips byte for byte.
"""

from __future__ import annotations

import base64
import json
from pathlib import Path

import numpy as np

from cycleflow.grid import DiscreteForm, TorusGrid

FORMAT_VERSION = 1
INLINE_LIMIT = 64  # values; larger payloads go to base64


def form_to_obj(form: DiscreteForm, encoding: str | None = None) -> dict:
    grid = form.grid
    flat = np.ascontiguousarray(form.flat, dtype="<f8")
    if encoding is None:
        encoding = "json" if flat.size <= INLINE_LIMIT else "base64"
    if encoding == "json":
        values = flat.tolist()
    elif encoding == "base64":
        values = base64.b64encode(flat.tobytes()).decode("ascii")
    else:
        raise ValueError(f"unknown encoding {encoding!r}")
    return {
        "version": FORMAT_VERSION,
        "n": grid.n,
        "degree": form.degree,
        "dims": list(grid.dims),
        "lengths": list(grid.lengths),
        "encoding": encoding,
        "values": values,
    }


def obj_to_form(obj: dict) -> DiscreteForm:
    if obj.get("version") != FORMAT_VERSION:
        raise ValueError(f"unsupported form file version {obj.get('version')!r}")
    grid = TorusGrid(tuple(obj["dims"]), tuple(obj["lengths"]))
    encoding = obj["encoding"]
    if encoding == "json":
        flat = np.asarray(obj["values"], dtype=float)
    elif encoding == "base64":
        flat = np.frombuffer(base64.b64decode(obj["values"]), dtype="<f8").copy()
    else:
        raise ValueError(f"unknown encoding {encoding!r}")
    return DiscreteForm(grid, int(obj["degree"]), flat)


def dumps_form(form: DiscreteForm, encoding: str | None = None) -> str:
    return json.dumps(form_to_obj(form, encoding), sort_keys=True,
                      separators=(",", ":")) + "\n"


def write_form(path, form: DiscreteForm, encoding: str | None = None) -> None:
    Path(path).write_text(dumps_form(form, encoding))


def read_form(path) -> DiscreteForm:
    return obj_to_form(json.loads(Path(path).read_text()))
