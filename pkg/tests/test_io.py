import os
import struct
from pathlib import Path

import numpy as np
import pytest

from gefbasins.basins import BOUNDARY, EXTERIOR, UNRESOLVED
from gefbasins.cutoff import FRAME, VOID, PixelPartition
from gefbasins.errors import FormatError
from gefbasins.io import (Grid, decode_grid, encode_grid, load_basin_map, load_partition,
                          read_grid, save_basin_map, save_partition, write_csv, write_grid,
                          write_json, read_json)

GOLDEN = Path(__file__).parent / "data" / "golden_basins.gefb"
GOLDEN_LABELS = np.array([[0, 1, BOUNDARY], [EXTERIOR, 2, UNRESOLVED]])


def test_golden_file_decodes():
    g = read_grid(GOLDEN)
    assert g.kind == "basins"
    assert g.pitch == 0.25 and g.origin == complex(-1.0, 0.5)
    assert np.array_equal(g.labels, GOLDEN_LABELS)


def test_golden_file_encodes_byte_exact():
    g = Grid("basins", 0.25, complex(-1.0, 0.5), GOLDEN_LABELS)
    assert encode_grid(g) == GOLDEN.read_bytes()


def test_header_layout():
    data = GOLDEN.read_bytes()
    assert data[:4] == b"GEFB"
    assert struct.unpack_from("<HHII", data, 4) == (1, 0, 3, 2)
    assert len(data) == 16 + 24 + 4 * 6


def test_partition_codes_round_trip():
    lab = np.array([[0, FRAME, VOID], [1, 1, 0]])
    g = decode_grid(encode_grid(Grid("partition", 0.5, 0j, lab)))
    assert g.kind == "partition"
    assert np.array_equal(g.labels, lab)
    # the exterior label has no code in a partition grid
    with pytest.raises(ValueError):
        encode_grid(Grid("partition", 0.5, 0j, np.array([[0, EXTERIOR]])))
    with pytest.raises(ValueError):
        encode_grid(Grid("basins", 0.5, 0j, np.array([[0, -7]])))


@pytest.mark.parametrize("mutate,msg", [
    (lambda d: d[:20], "shorter"),
    (lambda d: b"XXXX" + d[4:], "magic"),
    (lambda d: d[:4] + struct.pack("<H", 9) + d[6:], "version"),
    (lambda d: d[:6] + struct.pack("<H", 4) + d[8:], "flags"),
    (lambda d: d[:-4], "payload"),
    (lambda d: d[:-4] + struct.pack("<I", 0xFFFFFFF5), "reserved"),
])
def test_corrupt_files_rejected(mutate, msg):
    with pytest.raises(FormatError, match=msg):
        decode_grid(mutate(GOLDEN.read_bytes()))


def test_basin_map_round_trip(tmp_path, bmap):
    p = tmp_path / "map.gefb"
    save_basin_map(p, bmap, {"seed": 3, "window": 4.0})
    bm, doc = load_basin_map(p)
    assert np.array_equal(bm.labels, bmap.labels)
    assert bm.window == (bmap.window[0], bmap.window[1])
    assert np.array_equal(bm.interior, bmap.interior)
    assert [q.location for q in bm.zeros] == [q.location for q in bmap.zeros]
    assert doc["seed"] == 3
    with pytest.raises(FormatError):
        load_partition(p)


def test_partition_round_trip(tmp_path):
    part = PixelPartition(0.5, -1 - 1j, np.array([[0, 0], [FRAME, 1]]), [-0.75 - 0.75j, 0.25 + 0.25j])
    p = tmp_path / "part.gefb"
    save_partition(p, part)
    back, _ = load_partition(p)
    assert np.array_equal(back.labels, part.labels)
    assert np.array_equal(back.centers, part.centers)
    with pytest.raises(FormatError):
        load_basin_map(p)


def test_atomic_writers(tmp_path):
    write_json(tmp_path / "a.json", {"b": 1, "a": 1 + 2j, "c": np.float64(0.5)})
    assert (tmp_path / "a.json").read_text().index('"a"') < (tmp_path / "a.json").read_text().index('"b"')
    assert read_json(tmp_path / "a.json")["a"] == [1.0, 2.0]
    write_csv(tmp_path / "t.csv", ["x", "y"], [(0.1, "s"), (2, "t")])
    assert (tmp_path / "t.csv").read_text() == "x,y\n0.1,s\n2,t\n"
    assert not [f for f in os.listdir(tmp_path) if f.startswith(".tmp")]
    umask = os.umask(0)
    os.umask(umask)
    assert os.stat(tmp_path / "t.csv").st_mode & 0o777 == 0o666 & ~umask
    write_grid(tmp_path / "g.gefb", Grid("basins", 0.25, complex(-1.0, 0.5), GOLDEN_LABELS))
    assert (tmp_path / "g.gefb").read_bytes() == GOLDEN.read_bytes()
