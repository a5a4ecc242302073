"""Versioned flat text format for parameter checkpoints.

    clicklab-params 1
    meta <key> <value>          (zero or more)
    layer <i> <rows> <cols>
    <cols floats>               (one line per row, row-major)
    ...
"""

from __future__ import annotations

import io

import numpy as np

from .errors import ParseError

MAGIC = "clicklab-params"
VERSION = 1


def write_layers(stream: io.TextIOBase, layers, meta=None) -> None:
    stream.write(f"{MAGIC} {VERSION}\n")
    for key, value in (meta or {}).items():
        stream.write(f"meta {key} {value}\n")
    for i, layer in enumerate(layers):
        arr = np.atleast_2d(np.asarray(layer, dtype=float))
        rows, cols = arr.shape
        stream.write(f"layer {i} {rows} {cols}\n")
        for row in arr:
            stream.write(" ".join(repr(float(v)) for v in row) + "\n")


def read_layers(stream: io.TextIOBase):
    lines = [(n, ln.strip()) for n, ln in enumerate(stream, start=1)]
    lines = [(n, ln) for n, ln in lines if ln]
    if not lines:
        raise ParseError("empty parameter file")
    n, head = lines[0]
    parts = head.split()
    if len(parts) != 2 or parts[0] != MAGIC:
        raise ParseError(f"expected '{MAGIC} <version>' header", n)
    if int(parts[1]) != VERSION:
        raise ParseError(f"unsupported format version {parts[1]}", n)
    meta, layers = {}, []
    pos = 1
    while pos < len(lines):
        n, ln = lines[pos]
        parts = ln.split()
        if parts[0] == "meta" and len(parts) >= 3:
            meta[parts[1]] = " ".join(parts[2:])
            pos += 1
            continue
        if parts[0] != "layer" or len(parts) != 4:
            raise ParseError(f"expected layer header, got {ln!r}", n)
        idx, rows, cols = (int(p) for p in parts[1:])
        if idx != len(layers):
            raise ParseError(f"layer {idx} out of order", n)
        body = lines[pos + 1: pos + 1 + rows]
        if len(body) != rows:
            raise ParseError(f"layer {idx} truncated", n)
        try:
            if rows == 0:
                arr = np.zeros((0, cols))
            else:
                arr = np.array([[float(v) for v in b.split()] for _, b in body], dtype=float)
        except ValueError as exc:
            raise ParseError(f"bad float in layer {idx}: {exc}", n) from None
        if arr.shape != (rows, cols):
            raise ParseError(f"layer {idx} has shape {arr.shape}, header says {(rows, cols)}", n)
        layers.append(arr)
        pos += 1 + rows
    return layers, meta
