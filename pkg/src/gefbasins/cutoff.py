"""Cutting the tentacles off an equal-area raster partition.

Regions ``E_i`` with centers ``c_i`` are given as a label raster.  Each region
is split into a kernel ``K_i = E_i ∩ D(c_i, r_i)`` and a tentacle
``T_i = E_i \\ D(c_i, r_i)``.  The tentacle pixels lying outside the unit
square of the center are carried, square by square along two chains of
side-adjacent unit squares, through pre-reserved storages in the kernels,
and finally handed back to region ``i`` next to its center.
Every pixel moved by the process of region ``i`` belongs to ``T_i`` or to one
of its storages, so the processes of different regions never interact and the
result does not depend on the order in which they run.
"""

from __future__ import annotations

import math
from collections import deque
from dataclasses import dataclass, field

import numpy as np

from .errors import CapacityError, ConservationError, MalformedPartitionError

__all__ = [
    "VOID",
    "FRAME",
    "PixelPartition",
    "RegionRadii",
    "Storages",
    "CutoffResult",
    "VerifyReport",
    "compute_radii",
    "minimal_cover",
    "square_sequences",
    "allocate_storages",
    "run_cutoff",
    "verify_cutoff",
    "cutoff_constant",
    "partition_from_basins",
    "rebalance",
]

VOID = -1
# passive region: has no center and no tentacle, but its pixels can host storage
FRAME = -2


def cutoff_constant(eps: float) -> float:
    """``A = 10^4 / eps``."""
    return 1e4 / eps


@dataclass
class PixelPartition:
    """Label raster with one marked center per region.

    Pixel ``(row, col)`` has center ``origin + ((col+1/2) h, (row+1/2) h)``.
    Labels ``0..n-1`` are regions, ``FRAME`` marks passive filler and
    ``VOID`` pixels belong to nobody.  The unit square holding a pixel is
    ``(floor(x), floor(y))`` of its center.
    """

    pitch: float
    origin: complex
    labels: np.ndarray
    centers: np.ndarray

    def __post_init__(self):
        self.labels = np.ascontiguousarray(self.labels, dtype=np.int32)
        self.centers = np.asarray(self.centers, dtype=np.complex128).ravel()
        self.origin = complex(self.origin)

    @property
    def n_regions(self) -> int:
        return self.centers.size

    def counts(self) -> np.ndarray:
        lab = self.labels
        return np.bincount(lab[lab >= 0].ravel(), minlength=self.n_regions)[: self.n_regions]

    @property
    def region_area(self) -> np.ndarray:
        return self.counts() * self.pitch**2

    def pixel_centers(self):
        ny, nx = self.labels.shape
        xs = self.origin.real + (np.arange(nx) + 0.5) * self.pitch
        ys = self.origin.imag + (np.arange(ny) + 0.5) * self.pitch
        return xs, ys

    def copy(self, labels=None):
        return PixelPartition(self.pitch, self.origin,
                              self.labels.copy() if labels is None else labels, self.centers.copy())

    def validate(self, equal_counts: bool = True, area: float = math.pi) -> None:
        """Check the structural invariants.

        Raises
        ------
        MalformedPartitionError
            On unit squares not aligned with pixels, labels out of range,
            empty regions, unequal counts, areas off ``area`` by more than
            ``2h``, or centers farther than ``h`` from their regions.
        """
        h = self.pitch
        m = 1.0 / h
        if abs(m - round(m)) > 1e-9:
            raise MalformedPartitionError("pitch must be 1/m for an integer m")
        for v in (self.origin.real, self.origin.imag):
            if abs(v * round(m) - round(v * round(m))) > 1e-6:
                raise MalformedPartitionError("origin must lie on the pixel lattice")
        lab = self.labels
        if lab.size and (lab.min() < FRAME or lab.max() >= self.n_regions):
            raise MalformedPartitionError("labels out of range")
        cnt = self.counts()
        if np.any(cnt == 0):
            raise MalformedPartitionError(f"regions {np.flatnonzero(cnt == 0).tolist()} are empty")
        if equal_counts and cnt.size:
            if np.any(cnt != cnt[0]):
                raise MalformedPartitionError("regions have unequal pixel counts")
            if abs(cnt[0] * h * h - area) > 2 * h:
                raise MalformedPartitionError(f"region area {cnt[0] * h * h} is not {area}")
        xs, ys = self.pixel_centers()
        for i in range(self.n_regions):
            rr, cc = np.nonzero(lab == i)
            d = np.min(np.abs(xs[cc] + 1j * ys[rr] - self.centers[i]))
            if d > h * (1 + math.sqrt(2) / 2) + 1e-12:
                raise MalformedPartitionError(f"center of region {i} is {d:.3g} from it")


@dataclass
class RegionRadii:
    """Outer radius ``R_i``, cut radius ``r_i`` and kernel/tentacle masks."""

    R: np.ndarray
    r: np.ndarray
    kernel: np.ndarray  # bool raster: pixel in the kernel of its region (frame pixels included)
    tentacle: np.ndarray  # bool raster
    tentacle_count: np.ndarray
    eps: float

    def tentacle_area(self, h):
        return self.tentacle_count * h * h


def _distances(part: PixelPartition):
    """Distance of each pixel center to the center of its own region (NaN elsewhere)."""
    xs, ys = part.pixel_centers()
    lab = part.labels
    d = np.full(lab.shape, np.nan)
    m = lab >= 0
    rr, cc = np.nonzero(m)
    d[rr, cc] = np.abs(xs[cc] + 1j * ys[rr] - part.centers[lab[rr, cc]])
    return d


def compute_radii(part: PixelPartition, eps: float) -> RegionRadii:
    """Radii and kernel/tentacle split for every region.

    ``R_i`` is the largest pixel-center distance plus the half-diagonal of a
    pixel.  ``r_i`` is the least multiple of ``h`` for which the pixels with
    center distance above ``r_i`` have total area at most
    ``1/(A R_i^3) + h^2``.

    Raises
    ------
    MalformedPartitionError
        If a region has no pixels.
    """
    if not 0 < eps < 1:
        raise ValueError("eps must lie in (0, 1)")
    h = part.pitch
    A = cutoff_constant(eps)
    n = part.n_regions
    d = _distances(part)
    lab = part.labels
    R = np.zeros(n)
    r = np.zeros(n)
    tent = np.zeros(lab.shape, dtype=bool)
    tcount = np.zeros(n, dtype=np.int64)
    flat_lab = lab.ravel()
    flat_d = d.ravel()
    order = np.argsort(flat_lab, kind="stable")
    bounds = np.searchsorted(flat_lab[order], np.arange(n + 1))
    for i in range(n):
        idx = order[bounds[i]:bounds[i + 1]]
        if idx.size == 0:
            raise MalformedPartitionError(f"region {i} has no pixels")
        di = np.sort(flat_d[idx])[::-1]
        R[i] = di[0] + h * math.sqrt(2) / 2
        allowed = int(math.floor((1.0 / (A * R[i] ** 3) + h * h) / (h * h) + 1e-9))
        if allowed >= di.size:
            r[i] = 0.0
        else:
            r[i] = math.ceil(di[allowed] / h - 1e-9) * h
        t = idx[flat_d[idx] > r[i] + 1e-12]
        tent.ravel()[t] = True
        tcount[i] = t.size
    kernel = ((lab >= 0) & ~tent) | (lab == FRAME)
    return RegionRadii(R, r, kernel, tent, tcount, eps)


def _square_index(part: PixelPartition):
    xs, ys = part.pixel_centers()
    sx = np.floor(xs + 1e-12).astype(np.int64)
    sy = np.floor(ys + 1e-12).astype(np.int64)
    return sx, sy


def minimal_cover(part: PixelPartition, i: int):
    """``(col0, row0, k)``: the least ``k x k`` block of unit squares holding region ``i``
    and the unit square of its center, shifted to stay on the raster when possible."""
    sx, sy = _square_index(part)
    rr, cc = np.nonzero(part.labels == i)
    c = part.centers[i]
    cols = np.concatenate([sx[cc], [math.floor(c.real)]])
    rows = np.concatenate([sy[rr], [math.floor(c.imag)]])
    a0, a1 = int(cols.min()), int(cols.max())
    b0, b1 = int(rows.min()), int(rows.max())
    k = max(a1 - a0 + 1, b1 - b0 + 1)
    lo_x, hi_x = int(sx[0]), int(sx[-1])
    lo_y, hi_y = int(sy[0]), int(sy[-1])

    def place(lo, w, glo, ghi):
        s = lo - (k - w) // 2
        s = min(s, lo)
        s = max(s, lo + w - k)
        # stay on the raster where the block fits
        if ghi - glo + 1 >= k:
            s = min(max(s, glo), ghi - k + 1)
            s = min(s, lo)
            s = max(s, lo + w - k)
        return s

    return place(a0, a1 - a0 + 1, lo_x, hi_x), place(b0, b1 - b0 + 1, lo_y, hi_y), k


def _chain_one(k, a, b):
    """Squares of columns ``< a`` plus column ``a`` below row ``b``, as a path ending next to ``(a, b)``."""
    path = []
    for c in range(a):
        down = (a - 1 - c) % 2 == 0
        rows = range(k - 1, -1, -1) if down else range(k)
        path.extend((c, r) for r in rows)
    path.extend((a, r) for r in range(b))
    return path


def square_sequences(k: int, a: int, b: int):
    """Two chains covering a ``k x k`` block minus the square ``(a, b)``.

    Squares are ``(col, row)`` relative to the block.  Chain one snakes
    through the columns left of ``a`` (each column run so that the last one
    ends on row 0) and then climbs column ``a`` up to row ``b-1``; chain two
    is the same construction rotated by a half turn.  Consecutive squares
    share a side and each non-empty chain ends beside ``(a, b)``.
    """
    if not (0 <= a < k and 0 <= b < k):
        raise ValueError("center square outside the block")
    one = _chain_one(k, a, b)
    two = [(k - 1 - c, k - 1 - r) for c, r in _chain_one(k, k - 1 - a, k - 1 - b)]
    return one, two


@dataclass
class Storages:
    """Storage pixels per (region, unit square), as flat raster indices."""

    cells: dict  # (i, (col, row)) -> ndarray of flat pixel indices
    chains: dict  # i -> (chain one, chain two), absolute (col, row) squares
    covers: dict  # i -> (col0, row0, k)
    center_square: dict  # i -> (col, row)

    def ledger(self):
        return [(i, q, self.cells[(i, q)]) for (i, q) in sorted(self.cells)]


def _pixel_order(part, d, idx, owner):
    """Storage preference inside one kernel piece: farthest from its center first."""
    ny, nx = part.labels.shape
    rows, cols = np.divmod(idx, nx)
    if owner == FRAME:
        return idx[np.lexsort((cols, rows))]
    dist = d.ravel()[idx]
    return idx[np.lexsort((cols, rows, -dist))]


def _largest_remainder(total, weights):
    w = np.asarray(weights, dtype=float)
    if total <= 0 or w.sum() <= 0:
        return np.zeros(w.size, dtype=np.int64)
    q = total * w / w.sum()
    base = np.floor(q).astype(np.int64)
    rem = total - base.sum()
    order = np.lexsort((np.arange(w.size), -(q - base)))
    base[order[:rem]] += 1
    return base


def allocate_storages(part: PixelPartition, radii: RegionRadii, eps: float = None) -> Storages:
    """Reserve ``S_i(Q)`` for every region with a tentacle and every square of its cover.

    ``|S_i(Q)|`` equals the tentacle pixel count of region ``i``; the pixels
    come from the kernels inside ``Q`` (region ``i``'s own and the frame
    included), split in proportion to those kernels' pixel counts by largest
    remainder, farthest-from-center pixels first.  Storages of different
    regions are disjoint.  Where the kernels in a square cannot supply the
    full amount, the square keeps what it can, provided it still holds the
    grey area that has to pass through it.

    Raises
    ------
    CapacityError
        If some square cannot hold the grey area routed through it.
    """
    h = part.pitch
    ny, nx = part.labels.shape
    lab = part.labels.ravel()
    sx, sy = _square_index(part)
    sq_col = np.broadcast_to(sx[None, :], (ny, nx)).ravel()
    sq_row = np.broadcast_to(sy[:, None], (ny, nx)).ravel()
    d = _distances(part)
    tent = radii.tentacle.ravel()
    kern = radii.kernel.ravel()
    demands: dict = {}
    chains, covers, qhat = {}, {}, {}
    for i in np.flatnonzero(radii.tentacle_count > 0):
        i = int(i)
        c0, r0, k = minimal_cover(part, i)
        c = part.centers[i]
        a, b = math.floor(c.real) - c0, math.floor(c.imag) - r0
        one, two = square_sequences(k, a, b)
        ch = ([(c0 + p, r0 + q) for p, q in one], [(c0 + p, r0 + q) for p, q in two])
        chains[i], covers[i], qhat[i] = ch, (c0, r0, k), (c0 + a, r0 + b)
        mine = np.flatnonzero(tent & (lab == i))
        tq = {}
        for p in mine:
            key = (int(sq_col[p]), int(sq_row[p]))
            tq[key] = tq.get(key, 0) + 1
        total = int(radii.tentacle_count[i])
        for seq in ch:
            cum = 0
            for q in seq:
                cum += tq.get(q, 0)
                demands.setdefault(q, []).append((i, total, cum))
    cells = {}
    if not demands:
        return Storages(cells, chains, covers, qhat)
    key_all = (sq_row.astype(np.int64) - sq_row.min()) * (sq_col.max() - sq_col.min() + 1) + (
        sq_col - sq_col.min())
    order_all = np.argsort(key_all, kind="stable")
    sorted_keys = key_all[order_all]
    width = sq_col.max() - sq_col.min() + 1
    for q in sorted(demands):
        kq = (q[1] - sq_row.min()) * width + (q[0] - sq_col.min())
        lo, hi = np.searchsorted(sorted_keys, [kq, kq + 1])
        pix = order_all[lo:hi]
        pix = pix[kern[pix]]
        owners = lab[pix]
        pieces = {}
        for o in np.unique(owners).tolist():
            pieces[o] = list(_pixel_order(part, d, pix[owners == o], o))
        sizes = {o: len(v) for o, v in pieces.items()}
        taken = {o: 0 for o in pieces}
        for i, want, need in sorted(demands[q]):
            avail = sorted(pieces)
            left = {o: sizes[o] - taken[o] for o in avail}
            cap = sum(left.values())
            amount = min(want, cap)
            if amount < need:
                raise CapacityError(
                    f"unit square {q}: region {i} needs {need} storage pixels, {cap} available")
            share = _largest_remainder(amount, [sizes[o] for o in avail])
            share = np.minimum(share, [left[o] for o in avail])
            short = amount - int(share.sum())
            while short > 0:
                room = np.array([left[o] for o in avail]) - share
                j = int(np.argmax(room))
                add = min(short, int(room[j]))
                share[j] += add
                short -= add
            got = []
            for o, s in zip(avail, share.tolist()):
                got.extend(pieces[o][taken[o]:taken[o] + s])
                taken[o] += s
            cells[(i, q)] = np.array(got, dtype=np.int64)
    return Storages(cells, chains, covers, qhat)


@dataclass
class CutoffResult:
    """Modified partition together with per-region measurements and the storages."""

    modified: PixelPartition
    R: np.ndarray
    r: np.ndarray
    tentacle_area: np.ndarray
    overlap: np.ndarray
    containment: np.ndarray
    storages: Storages = field(repr=False)
    radii: RegionRadii = field(repr=False)
    lemma_checks: dict = field(default_factory=dict)


def _lemma_checks(part, radii, storages, eps):
    """Per-square totals bounded by the covering lemmas (with one pixel of slack per region)."""
    h = part.pitch
    sx, sy = _square_index(part)
    ny, nx = part.labels.shape
    tent_sq = {}
    rr, cc = np.nonzero(radii.tentacle)
    owners = part.labels[rr, cc]
    for x, y, o in zip(sx[cc].tolist(), sy[rr].tolist(), owners.tolist()):
        s = tent_sq.setdefault((x, y), set())
        s.add(o)
    cover_sum = {}
    for i, (c0, r0, k) in storages.covers.items():
        for x in range(c0, c0 + k):
            for y in range(r0, r0 + k):
                lst = cover_sum.setdefault((x, y), [0.0, 0])
                lst[0] += radii.tentacle_count[i] * h * h
                lst[1] += 1
    worst_cover = 0.0
    ok_cover = True
    for q, (tot, n) in cover_sum.items():
        excess = tot - (eps / 10 + n * h * h)
        worst_cover = max(worst_cover, tot)
        ok_cover &= excess <= 1e-12
    cnt = {}
    for x, y in zip(sx[cc].tolist(), sy[rr].tolist()):
        cnt[(x, y)] = cnt.get((x, y), 0) + 1
    worst_tent = 0.0
    ok_tent = True
    for q, c in cnt.items():
        a = c * h * h
        worst_tent = max(worst_tent, a)
        ok_tent &= a <= eps / 10 + len(tent_sq[q]) * h * h + 1e-12
    return {"cover_sum_ok": bool(ok_cover), "cover_sum_max": worst_cover,
            "square_tentacle_ok": bool(ok_tent), "square_tentacle_max": worst_tent}


def run_cutoff(part: PixelPartition, eps: float, check_equal: bool = True) -> CutoffResult:
    """Apply the tentacle cut-off to a raster partition.

    Raises
    ------
    CapacityError
        From storage allocation.
    ConservationError
        If a region's pixel count changed (never expected; aborts with the
        per-region differences).
    AssertionError
        If one of the covering-lemma bounds fails on a unit square.
    """
    part.validate(equal_counts=check_equal)
    radii = compute_radii(part, eps)
    st = allocate_storages(part, radii, eps)
    checks = _lemma_checks(part, radii, st, eps)
    if not (checks["cover_sum_ok"] and checks["square_tentacle_ok"]):
        raise AssertionError(f"covering bound violated: {checks}")
    lab0 = part.labels.ravel()
    new = lab0.copy()
    ny, nx = part.labels.shape
    sx, sy = _square_index(part)
    sq_col = np.broadcast_to(sx[None, :], (ny, nx)).ravel()
    sq_row = np.broadcast_to(sy[:, None], (ny, nx)).ravel()
    tent = radii.tentacle.ravel()
    # the processes are independent: each reads only the original labels
    for i in sorted(st.chains):
        mine = np.flatnonzero(tent & (lab0 == i))
        by_sq = {}
        for p in mine.tolist():
            by_sq.setdefault((int(sq_col[p]), int(sq_row[p])), []).append(p)
        for seq in st.chains[i]:
            cum = 0
            grey = np.zeros(0, dtype=np.int64)
            for q in seq:
                T = np.array(by_sq.get(q, []), dtype=np.int64)
                t = T.size
                if t == 0 and cum == 0:
                    continue
                S = st.cells.get((i, q), np.zeros(0, dtype=np.int64))
                G = S[:t]
                Gp = S[t:t + cum]
                # tentacle pieces go to the owners of the storage pixels they displace
                new[T] = lab0[G]
                # grey area of the previous square moves one square on
                new[grey] = lab0[Gp]
                grey = np.concatenate([G, Gp])
                cum += t
            new[grey] = i
    counts0 = np.bincount(lab0[lab0 >= 0], minlength=part.n_regions)
    counts1 = np.bincount(new[new >= 0], minlength=part.n_regions)
    frame0 = int(np.sum(lab0 == FRAME))
    frame1 = int(np.sum(new == FRAME))
    if np.any(counts0 != counts1) or frame0 != frame1 or np.any((lab0 == VOID) != (new == VOID)):
        diff = {int(k): int(counts1[k] - counts0[k]) for k in np.flatnonzero(counts0 != counts1)}
        diff["frame"] = frame1 - frame0
        raise ConservationError(f"pixel counts changed: {diff}", diff)
    mod = part.copy(new.reshape(ny, nx))
    overlap = np.bincount(lab0[(lab0 >= 0) & (lab0 == new)], minlength=part.n_regions) * part.pitch**2
    dnew = _distances(mod)
    cont = np.zeros(part.n_regions)
    nl = mod.labels
    for i in range(part.n_regions):
        m = nl == i
        cont[i] = float(np.max(dnew[m])) if m.any() else 0.0
    return CutoffResult(mod, radii.R, radii.r, radii.tentacle_area(part.pitch), overlap, cont,
                        st, radii, checks)


@dataclass
class VerifyReport:
    checks: dict
    details: dict

    @property
    def passed(self) -> bool:
        return all(self.checks.values())


def verify_cutoff(before: PixelPartition, after: PixelPartition, eps: float,
                  storages: Storages = None) -> VerifyReport:
    """Independently re-check the properties of a cut-off result.

    Checks exact per-region pixel conservation, ``|area - pi| <= 2h^2``, that
    the raster is still a partition (same void pixels, labels in range),
    overlap ``>= pi - eps``, containment in ``D(c_i, r_i + sqrt 5 + h sqrt 2)``
    with ``r_i`` recomputed from ``before``, and, given the storages, the
    bound ``pi eps / 5`` (plus one pixel per storage piece) on the storage
    area taken from each kernel.
    """
    h = before.pitch
    lab0 = before.labels
    lab1 = after.labels
    n = before.n_regions
    checks = {}
    details = {}
    same_shape = lab0.shape == lab1.shape
    checks["shape"] = same_shape
    if not same_shape:
        return VerifyReport(checks, details)
    c0 = before.counts()
    c1 = after.counts()
    checks["conservation"] = bool(np.all(c0 == c1)) and int(np.sum(lab0 == FRAME)) == int(
        np.sum(lab1 == FRAME))
    details["count_diff"] = (c1 - c0).tolist()
    checks["area"] = bool(np.all(np.abs(c1 * h * h - math.pi) <= 2 * h * h))
    checks["partition"] = bool(np.all((lab0 == VOID) == (lab1 == VOID))
                               and lab1.min(initial=0) >= FRAME and lab1.max(initial=-1) < n)
    ov = np.array([np.sum((lab0 == i) & (lab1 == i)) for i in range(n)]) * h * h
    details["overlap_min"] = float(ov.min()) if n else math.pi
    checks["overlap"] = bool(np.all(ov >= math.pi - eps))
    radii = compute_radii(before, eps)
    d1 = _distances(after)
    worst = -np.inf
    ok = True
    for i in range(n):
        m = lab1 == i
        if m.any():
            mx = float(np.max(d1[m]))
            lim = radii.r[i] + math.sqrt(5) + h * math.sqrt(2)
            worst = max(worst, mx - lim)
            ok &= mx <= lim + 1e-12
    checks["containment"] = bool(ok)
    details["containment_margin"] = float(worst)
    if storages is not None:
        flat = lab0.ravel()
        kern = radii.kernel.ravel()
        taken = np.zeros(n)
        pieces = np.zeros(n)
        for (j, q), pix in storages.cells.items():
            own = flat[pix]
            own = own[(own >= 0) & kern[pix]]
            if own.size:
                cnt = np.bincount(own, minlength=n)
                taken += cnt * h * h
                pieces += cnt > 0
        checks["storage_bound"] = bool(np.all(taken <= math.pi * eps / 5 + pieces * h * h + 1e-12))
        details["storage_max"] = float(taken.max()) if n else 0.0
    return VerifyReport(checks, details)


# ---------------------------------------------------------------------------
# rasterizing a basin map


def _neighbors4(lab, a, b):
    """Flat indices of pixels labeled ``a`` that touch a pixel labeled ``b``."""
    ny, nx = lab.shape
    m = np.zeros(lab.shape, dtype=bool)
    B = lab == b
    m[1:, :] |= B[:-1, :]
    m[:-1, :] |= B[1:, :]
    m[:, 1:] |= B[:, :-1]
    m[:, :-1] |= B[:, 1:]
    return np.flatnonzero((m & (lab == a)).ravel())


def _region_graph(lab):
    adj = {}
    for x, y in ((lab[:, :-1], lab[:, 1:]), (lab[:-1, :], lab[1:, :])):
        m = (x != y) & (x != VOID) & (y != VOID)
        for p, q in set(zip(x[m].tolist(), y[m].tolist())):
            adj.setdefault(p, set()).add(q)
            adj.setdefault(q, set()).add(p)
    return adj


def _transfer(part, lab, giver, taker, k, protect):
    """Move up to ``k`` pixels of ``giver`` bordering ``taker`` over to ``taker``.

    Returns the number moved, which falls short of ``k`` when ``giver`` runs
    out of unprotected pixels on the shared border.
    """
    xs, ys = part.pixel_centers()
    nx = lab.shape[1]
    moved = 0
    while moved < k:
        cand = _neighbors4(lab, giver, taker)
        cand = cand[~np.isin(cand, protect)]
        if cand.size == 0:
            break
        r, c = np.divmod(cand, nx)
        pts = xs[c] + 1j * ys[r]
        if taker >= 0:
            key = np.abs(pts - part.centers[taker])
        else:
            key = -np.abs(pts - part.centers[giver])
        order = np.lexsort((c, r, key))
        take = cand[order[: k - moved]]
        lab.ravel()[take] = taker
        moved += take.size
    return moved


def rebalance(part: PixelPartition, target: int) -> PixelPartition:
    """Make every region exactly ``target`` pixels by shifting pixels along region paths.

    Surplus flows from a region along the shortest chain of adjacent regions
    to a region in deficit or to the frame; deficits are filled the same
    way.  This is deterministic and moves only a thin layer of pixels on
    region borders.
    """
    lab = part.labels.copy()
    xs, ys = part.pixel_centers()
    cp = []
    for c in part.centers:
        cp.append(int(np.argmin(np.abs(xs - c.real))) + lab.shape[1] * int(np.argmin(np.abs(ys - c.imag))))
    protect = np.array(cp, dtype=np.int64)
    for _ in range(50 * part.n_regions + 50):
        cnt = np.bincount(lab[lab >= 0].ravel(), minlength=part.n_regions)
        diff = cnt - target
        bad = np.flatnonzero(diff)
        if bad.size == 0:
            return part.copy(lab)
        s = int(bad[0])
        adj = _region_graph(lab)
        # BFS to nearest region with opposite imbalance, or the frame
        want_surplus = diff[s] < 0
        prev = {s: None}
        dq = deque([s])
        end = None
        while dq:
            u = dq.popleft()
            if u != s and (u == FRAME or (u >= 0 and (diff[u] > 0 if want_surplus else diff[u] < 0))):
                end = u
                break
            for v in sorted(adj.get(u, ())):
                if v not in prev:
                    prev[v] = u
                    dq.append(v)
        if end is None:
            raise MalformedPartitionError(f"region {s} cannot be balanced")
        path = [end]
        while prev[path[-1]] is not None:
            path.append(prev[path[-1]])
        path.reverse()  # s ... end
        k = abs(int(diff[s]))
        if end >= 0:
            k = min(k, abs(int(diff[end])))
        if want_surplus:
            path.reverse()  # end ... s: pixels flow toward s
        # a step that moves less passes on less; the next round re-plans
        for a, b in zip(path[:-1], path[1:]):
            k = _transfer(part, lab, a, b, k, protect)
            if k == 0:
                break
    raise MalformedPartitionError("rebalancing did not converge")


def partition_from_basins(bmap, target_area: float = math.pi) -> PixelPartition:
    """Interior basins of a map as regions (centers at their sinks), the rest as frame.

    Region pixel counts are then equalized to ``round(target_area / h^2)``.
    """
    h = bmap.pitch
    idx = bmap.interior_indices()
    remap = np.full(len(bmap.zeros), FRAME, dtype=np.int64)
    remap[idx] = np.arange(idx.size)
    lab = np.where(bmap.labels >= 0, remap[np.clip(bmap.labels, 0, None)], FRAME).astype(np.int32)
    centers = np.array([bmap.zeros[k].location for k in idx], dtype=np.complex128)
    part = PixelPartition(h, bmap.origin, lab, centers)
    target = int(round(target_area / h**2))
    return rebalance(part, target)
