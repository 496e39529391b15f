"""QNSPF1 portable field checkpoints.

A file is a sequence of records.  Each record is a little-endian header

    magic   6 bytes  b"QNSPF1"
    d       uint32
    N_axis  d x uint32
    L_axis  d x float64
    rank    uint32   (0 scalar, 1 vector, 2 matrix)
    time    float64

followed by float64 physical values, components first, row-major over axes.
A saved State is three records in the order rho, m, V.
"""
import struct

import numpy as np

from .spectral import Grid, SpectralField

MAGIC = b"QNSPF1"
_RANK_CODES = {"scalar": 0, "vector": 1, "matrix": 2}
_RANK_NAMES = {v: k for k, v in _RANK_CODES.items()}


def write_record(fh, field, time=0.0):
    g = field.grid
    fh.write(MAGIC)
    fh.write(struct.pack("<I", g.d))
    fh.write(struct.pack(f"<{g.d}I", *g.shape))
    fh.write(struct.pack(f"<{g.d}d", *g.lengths))
    fh.write(struct.pack("<I", _RANK_CODES[field.rank]))
    fh.write(struct.pack("<d", float(time)))
    fh.write(np.ascontiguousarray(field.values, dtype="<f8").tobytes(order="C"))


def read_header(fh):
    magic = fh.read(len(MAGIC))
    if not magic:
        return None
    if magic != MAGIC:
        raise ValueError(f"bad checkpoint magic {magic!r}")
    (d,) = struct.unpack("<I", fh.read(4))
    if not 1 <= d <= 3:
        raise ValueError(f"bad dimension {d} in checkpoint header")
    shape = struct.unpack(f"<{d}I", fh.read(4 * d))
    lengths = struct.unpack(f"<{d}d", fh.read(8 * d))
    (rank_code,) = struct.unpack("<I", fh.read(4))
    (time,) = struct.unpack("<d", fh.read(8))
    return {"magic": MAGIC.decode(), "d": d, "N_axis": list(shape),
            "L_axis": list(lengths), "rank": _RANK_NAMES[rank_code], "time": time}


def read_record(fh):
    header = read_header(fh)
    if header is None:
        return None
    grid = Grid(header["N_axis"], header["L_axis"])
    ncomp = grid.d ** _RANK_CODES[header["rank"]]
    count = ncomp * grid.npoints
    raw = fh.read(8 * count)
    if len(raw) != 8 * count:
        raise ValueError("truncated checkpoint payload")
    vals = np.frombuffer(raw, dtype="<f8").reshape(
        (grid.d,) * _RANK_CODES[header["rank"]] + grid.shape)
    return header, SpectralField(grid, vals, header["rank"])


def save_fields(path, fields, time=0.0):
    with open(path, "wb") as fh:
        for f in fields:
            write_record(fh, f, time)


def load_fields(path):
    out = []
    with open(path, "rb") as fh:
        while True:
            rec = read_record(fh)
            if rec is None:
                break
            out.append(rec)
    return out


def save_state(path, state):
    save_fields(path, [state.rho, state.m, state.V], state.t)


def load_state(path):
    from .model import State

    recs = load_fields(path)
    if len(recs) != 3:
        raise ValueError(f"state checkpoint must hold 3 records, found {len(recs)}")
    (h, rho), (_, m), (_, V) = recs
    return State(h["time"], rho, m, V)


def inspect(path):
    """Headers of every record in ``path`` plus simple value statistics."""
    out = []
    for header, f in load_fields(path):
        header = dict(header)
        header.update(min=float(f.values.min()), max=float(f.values.max()),
                      mean=float(f.values.mean()))
        out.append(header)
    return out
