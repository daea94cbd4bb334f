"""Raster partitions with known structure for the cut-off tests."""

import math

import numpy as np

from gefbasins.cutoff import FRAME, VOID, PixelPartition


def raster(h, half):
    n = int(round(2 * half / h))
    origin = complex(-half, -half)
    xs = origin.real + (np.arange(n) + 0.5) * h
    ys = origin.imag + (np.arange(n) + 0.5) * h
    return origin, xs[None, :] + 1j * ys[:, None]


def nearest(points, c, k, free):
    """Flat indices of the ``k`` free pixels nearest ``c`` (ties by index)."""
    d = np.abs(points - c).ravel()
    o = np.lexsort((np.arange(d.size), d))
    o = o[free.ravel()[o]]
    return o[:k]


def disks(h=0.01, centers=(-1.5 + 0.5j, 1.5 + 0.5j), half=4.0, fill=FRAME):
    """Regions made of the pixels nearest each center: no tentacles."""
    origin, P = raster(h, half)
    N = int(round(math.pi / h ** 2))
    lab = np.full(P.shape, fill, np.int32)
    for i, c in enumerate(centers):
        lab.ravel()[nearest(P, c, N, lab == fill)] = i
    return PixelPartition(h, origin, lab, list(centers))


def whisker(h=0.01, fill=FRAME, offset=2.3j):
    """Two regions; region 0 swaps its farthest pixel for a whisker pixel at ``c0 + offset``.

    Returns the partition and the flat index of the whisker pixel.
    """
    origin, P = raster(h, 4.0)
    N = int(round(math.pi / h ** 2))
    c0, c1 = -1.5 + 0.5j, 1.5 + 0.5j
    lab = np.full(P.shape, fill, np.int32)
    lab.ravel()[nearest(P, c0, N - 1, lab == fill)] = 0
    w = int(np.argmin(np.abs(P - (c0 + offset)).ravel()))
    lab.ravel()[w] = 0
    lab.ravel()[nearest(P, c1, N, lab == fill)] = 1
    return PixelPartition(h, origin, lab, [c0, c1]), w


def voronoi(h=0.02, half=4.0, seed=0):
    """Jittered lattice of centers, Voronoi cells inside ``|x|,|y| < half - 1``, the rest frame."""
    rng = np.random.default_rng(seed)
    s = math.sqrt(math.pi)
    g = np.arange(-half - s, half + s, s)
    C = (g[None, :] + 1j * g[:, None]).ravel()
    C = C + rng.uniform(-0.25, 0.25, C.size) + 1j * rng.uniform(-0.25, 0.25, C.size)
    origin, P = raster(h, half)
    owner = np.argmin(np.abs(P.ravel()[:, None] - C[None, :]), axis=1)
    inner = np.flatnonzero((np.abs(C.real) < half - 1.9) & (np.abs(C.imag) < half - 1.9))
    remap = np.full(C.size, FRAME)
    remap[inner] = np.arange(inner.size)
    lab = remap[owner].reshape(P.shape).astype(np.int32)
    return PixelPartition(h, origin, lab, C[inner])


__all__ = ["raster", "disks", "whisker", "voronoi", "FRAME", "VOID"]
