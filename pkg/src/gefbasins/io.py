"""Binary label grids, JSON sidecars and CSV tables.

Grid layout, all little-endian::

    offset  size  field
    0       4     magic b"GEFB"
    4       2     version (u16, currently 1)
    6       2     flags (u16): bit 0 set for a pixel partition, clear for a basin map
    8       4     width (u32)
    12      4     height (u32)
    16      8     pitch (f64)
    24      8     origin x (f64)
    32      8     origin y (f64)
    40      4*w*h labels (u32, row-major, row 0 at the lowest y)

Non-negative labels are stored as is.  Negative labels map to reserved
codes at the top of the u32 range (see ``CODES``).  Everything that is not a
label (zeros, centers, configuration, seed) goes into a JSON sidecar next to
the grid, ``<grid>.json``.
"""

from __future__ import annotations

import csv
import io as _io
import json
import os
import struct
import tempfile
from dataclasses import dataclass

import numpy as np

from .basins import BOUNDARY, EXTERIOR, UNRESOLVED, BasinMap
from .critical import Zero
from .cutoff import FRAME, VOID, PixelPartition
from .errors import FormatError

__all__ = [
    "MAGIC",
    "VERSION",
    "CODES",
    "Grid",
    "encode_grid",
    "decode_grid",
    "write_grid",
    "read_grid",
    "write_json",
    "read_json",
    "write_csv",
    "atomic_write",
    "save_basin_map",
    "load_basin_map",
    "save_partition",
    "load_partition",
]

MAGIC = b"GEFB"
VERSION = 1
FLAG_PARTITION = 1
HEADER = struct.Struct("<4sHHII")
GEOMETRY = struct.Struct("<ddd")

# reserved u32 codes for the negative labels of each grid kind
CODES = {
    "basins": {BOUNDARY: 0xFFFFFFFF, UNRESOLVED: 0xFFFFFFFE, EXTERIOR: 0xFFFFFFFB},
    "partition": {VOID: 0xFFFFFFFD, FRAME: 0xFFFFFFFC},
}
MAX_LABEL = 0xFFFFFFF0


@dataclass
class Grid:
    """Raw contents of a grid file."""

    kind: str  # "basins" or "partition"
    pitch: float
    origin: complex
    labels: np.ndarray  # int32, negative values as in the owning module


def atomic_write(path, data: bytes) -> None:
    """Write ``data`` to a temporary file in the target directory, then rename it over ``path``."""
    path = os.fspath(path)
    d = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(dir=d, prefix=".tmp-", suffix=os.path.basename(path))
    umask = os.umask(0)
    os.umask(umask)
    try:
        os.chmod(tmp, 0o666 & ~umask)
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
            fh.flush()
            os.fsync(fh.fileno())
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.remove(tmp)
        raise


def encode_grid(grid: Grid) -> bytes:
    lab = np.asarray(grid.labels)
    if lab.ndim != 2:
        raise ValueError("labels must be two-dimensional")
    codes = CODES[grid.kind]
    bad = (lab < 0) & ~np.isin(lab, list(codes))
    if np.any(bad):
        raise ValueError(f"labels {np.unique(lab[bad]).tolist()} have no code in a {grid.kind} grid")
    if lab.size and lab.max() >= MAX_LABEL:
        raise ValueError("label too large for the grid format")
    out = lab.astype(np.int64)
    for neg, code in codes.items():
        out[lab == neg] = code
    h, w = lab.shape
    flags = FLAG_PARTITION if grid.kind == "partition" else 0
    head = HEADER.pack(MAGIC, VERSION, flags, w, h)
    geo = GEOMETRY.pack(float(grid.pitch), float(grid.origin.real), float(grid.origin.imag))
    return head + geo + out.astype("<u4").tobytes()


def decode_grid(data: bytes) -> Grid:
    """Parse a grid file.

    Raises
    ------
    FormatError
        On a short header, wrong magic, unknown version or flags, or a
        payload whose size does not match ``width * height``.
    """
    need = HEADER.size + GEOMETRY.size
    if len(data) < need:
        raise FormatError(f"file is {len(data)} bytes, shorter than the {need}-byte header")
    magic, version, flags, w, h = HEADER.unpack_from(data, 0)
    if magic != MAGIC:
        raise FormatError(f"bad magic {magic!r} (expected {MAGIC!r})")
    if version != VERSION:
        raise FormatError(f"unsupported version {version} (bytes {data[4:6].hex()})")
    if flags & ~FLAG_PARTITION:
        raise FormatError(f"unknown flags 0x{flags:04x}")
    pitch, ox, oy = GEOMETRY.unpack_from(data, HEADER.size)
    expected = need + 4 * w * h
    if len(data) != expected:
        raise FormatError(f"payload is {len(data) - need} bytes, expected {4 * w * h} for {w}x{h}")
    raw = np.frombuffer(data, dtype="<u4", offset=need).reshape(h, w).astype(np.int64)
    kind = "partition" if flags & FLAG_PARTITION else "basins"
    lab = raw.copy()
    for neg, code in CODES[kind].items():
        lab[raw == code] = neg
    stray = (raw >= MAX_LABEL) & ~np.isin(raw, list(CODES[kind].values()))
    if np.any(stray):
        raise FormatError(f"reserved codes {np.unique(raw[stray]).tolist()} are not defined")
    return Grid(kind, pitch, complex(ox, oy), lab.astype(np.int32))


def write_grid(path, obj) -> None:
    """Write a :class:`BasinMap`, :class:`PixelPartition` or :class:`Grid`."""
    if isinstance(obj, BasinMap):
        g = Grid("basins", obj.pitch, obj.origin, obj.labels)
    elif isinstance(obj, PixelPartition):
        g = Grid("partition", obj.pitch, obj.origin, obj.labels)
    else:
        g = obj
    atomic_write(path, encode_grid(g))


def read_grid(path) -> Grid:
    with open(path, "rb") as fh:
        return decode_grid(fh.read())


def _default(o):
    if isinstance(o, complex):
        return [o.real, o.imag]
    if isinstance(o, np.generic):
        return o.item()
    if isinstance(o, np.ndarray):
        return o.tolist()
    raise TypeError(f"cannot serialize {type(o).__name__}")


def write_json(path, doc) -> None:
    atomic_write(path, (json.dumps(doc, indent=2, sort_keys=True, default=_default) + "\n").encode())


def read_json(path):
    with open(path) as fh:
        return json.load(fh)


def write_csv(path, header, rows) -> None:
    buf = _io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for r in rows:
        w.writerow([repr(float(v)) if isinstance(v, (float, np.floating)) else v for v in r])
    atomic_write(path, buf.getvalue().encode())


def sidecar_path(path) -> str:
    return os.fspath(path) + ".json"


def save_basin_map(path, bmap: BasinMap, extra: dict = None) -> None:
    """Grid plus sidecar with window, zeros, interior flags and ``extra`` (seed, config)."""
    write_grid(path, bmap)
    doc = dict(extra or {})
    doc.update({"kind": "basins", "window": [bmap.window[0], bmap.window[1]],
                "pitch": bmap.pitch,
                "zeros": [[q.location.real, q.location.imag, q.residual, q.newton_iters]
                          for q in bmap.zeros],
                "interior": np.flatnonzero(bmap.interior).tolist(), "meta": bmap.meta,
                "lattice_offset": [0.0, 0.0]})
    write_json(sidecar_path(path), doc)


def load_basin_map(path) -> tuple:
    """``(BasinMap, sidecar dict)``.

    Raises
    ------
    FormatError
        If the grid is not a basin map or the sidecar does not match it.
    """
    g = read_grid(path)
    if g.kind != "basins":
        raise FormatError("grid holds a pixel partition, not a basin map")
    doc = read_json(sidecar_path(path))
    c, half = doc["window"]
    c = complex(*c) if isinstance(c, list) else complex(c)
    zeros = [Zero(complex(x, y), r, int(k)) for x, y, r, k in doc["zeros"]]
    interior = np.zeros(len(zeros), dtype=bool)
    interior[doc["interior"]] = True
    bm = BasinMap((c, float(half)), float(doc["pitch"]), g.labels, zeros, interior,
                  doc.get("meta", {}))
    if abs(bm.origin - g.origin) > 1e-9 or bm.pitch != g.pitch:
        raise FormatError("sidecar window does not match the grid geometry")
    return bm, doc


def save_partition(path, part: PixelPartition, extra: dict = None) -> None:
    write_grid(path, part)
    doc = dict(extra or {})
    doc.update({"kind": "partition", "pitch": part.pitch,
                "centers": [[c.real, c.imag] for c in part.centers],
                "lattice_offset": [0.0, 0.0]})
    write_json(sidecar_path(path), doc)


def load_partition(path, centers=None) -> tuple:
    """``(PixelPartition, sidecar dict)``; a basin-map grid is read as regions with ``FRAME`` filler.

    Centers come from ``centers`` when given, otherwise from the sidecar.
    """
    g = read_grid(path)
    doc = read_json(sidecar_path(path)) if os.path.exists(sidecar_path(path)) else {}
    if g.kind != "partition":
        raise FormatError("grid holds a basin map; convert it with partition_from_basins")
    if centers is None:
        if "centers" not in doc:
            raise FormatError("no centers given and no sidecar with centers")
        centers = [complex(x, y) for x, y in doc["centers"]]
    return PixelPartition(g.pitch, g.origin, g.labels, centers), doc
