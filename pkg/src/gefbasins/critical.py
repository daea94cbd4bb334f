"""Zeros of f (the sinks) and critical points of U (saddles and local maxima)."""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.spatial import cKDTree
from skimage.measure import points_in_poly

from .errors import DegenerateCriticalPointError, DomainError, InconsistencyError
from .gef import GefSample, eval_jet, scaled_values

__all__ = [
    "Zero",
    "CriticalPoint",
    "CriticalSearch",
    "MorseCensus",
    "CoverageWarning",
    "winding_number",
    "window_zero_audit",
    "find_zeros",
    "find_critical_points",
    "critical_search",
    "classify",
    "morse_census",
    "points_to_rows",
]

ZERO_RESIDUAL = 1e-10
GRAD_RESIDUAL = 1e-8
DEDUPE_RADIUS = 1e-4
DEGENERACY_FLOOR = 1e-6
BASE_CELL = 0.5
START_PITCH = 0.4
SMALL_BOUNDARY = 1e-3


class CoverageWarning(UserWarning):
    """Newton search failed to account for every critical point of a cell."""


@dataclass(frozen=True)
class Zero:
    location: complex
    residual: float
    newton_iters: int


@dataclass(frozen=True)
class CriticalPoint:
    location: complex
    kind: str
    hessian_det: float
    residual: float


@dataclass
class CriticalSearch:
    """Critical points plus the audit trail of the search."""

    points: list
    coverage_gaps: list = field(default_factory=list)  # (cell center, expected index, found index)
    n_starts: int = 0


@dataclass(frozen=True)
class MorseCensus:
    area: float
    n_zeros: int
    n_saddles: int
    n_maxima: int

    @property
    def zero_density(self):
        return self.n_zeros / self.area if self.area else 0.0

    @property
    def saddle_density(self):
        return self.n_saddles / self.area if self.area else 0.0

    @property
    def maximum_density(self):
        return self.n_maxima / self.area if self.area else 0.0

    @property
    def morse_sum(self):
        return self.n_zeros + self.n_maxima - self.n_saddles


# ---------------------------------------------------------------------------
# adaptive argument tracking


def _arg_changes(func, a, b, max_jump=0.6, n0=16, min_len=1e-12, max_rounds=60):
    """Total change of ``arg func`` along each straight segment ``a[i] -> b[i]``.

    Segments are bisected until consecutive samples differ in argument by
    less than ``max_jump``.  Also returns the minimum modulus seen per segment.
    """
    a = np.asarray(a, dtype=np.complex128).ravel()
    b = np.asarray(b, dtype=np.complex128).ravel()
    m = a.size
    s = np.linspace(0.0, 1.0, n0 + 1)
    pts = a[:, None] + (b - a)[:, None] * s[None, :]
    vals = func(pts)
    total = np.zeros(m)
    vmin = np.min(np.abs(vals), axis=1)
    pa = pts[:, :-1].ravel()
    pb = pts[:, 1:].ravel()
    va = vals[:, :-1].ravel()
    vb = vals[:, 1:].ravel()
    owner = np.repeat(np.arange(m), n0)
    for _ in range(max_rounds):
        d = np.angle(vb / va)
        bad = (np.abs(d) > max_jump) & (np.abs(pb - pa) > min_len)
        np.add.at(total, owner[~bad], d[~bad])
        if not bad.any():
            break
        pa, pb, va, vb, owner = pa[bad], pb[bad], va[bad], vb[bad], owner[bad]
        mid = 0.5 * (pa + pb)
        vm = func(mid)
        np.minimum.at(vmin, owner, np.abs(vm))
        pa, pb = np.concatenate([pa, mid]), np.concatenate([mid, pb])
        va, vb = np.concatenate([va, vm]), np.concatenate([vm, vb])
        owner = np.concatenate([owner, owner])
    else:
        d = np.angle(vb / va)
        np.add.at(total, owner, d)
    return total, vmin


def _scaled_f(sample):
    return _guarded(sample, lambda p: scaled_values(sample, p, 0, check=False)[0])


def _guarded(sample, func):
    """Evaluate ``func`` inside the valid disk and return 1 outside it.

    Grids are square while the certified region is a disk; cells beyond the
    disk are discarded by the callers, so their dummy values never matter.
    """
    def wrapped(p):
        p = np.asarray(p, dtype=np.complex128)
        inside = np.abs(p) <= sample.valid_radius
        out = np.ones(p.shape, dtype=np.complex128)
        if inside.any():
            out[inside] = func(p[inside])
        return out
    return wrapped


def _cell_mask(x0, y0, c, nx, ny, r):
    """Cells of the grid that meet the closed disk of radius r about 0."""
    xs = x0 + c * np.arange(nx)
    ys = y0 + c * np.arange(ny)
    dx = np.maximum(np.maximum(xs, 0), np.maximum(-(xs + c), 0))
    dy = np.maximum(np.maximum(ys, 0), np.maximum(-(ys + c), 0))
    return dx[None, :] ** 2 + dy[:, None] ** 2 <= r * r


def _ring(center, radius, n_sides):
    phi = 2 * np.pi * np.arange(n_sides + 1) / n_sides
    return center + radius * np.exp(1j * phi)


def winding_number(sample: GefSample, center: complex = 0j, radius: float = 1.0,
                   n_sides: int = 256) -> int:
    """Zeros of f inside the regular ``n_sides``-gon inscribed in the circle.

    Counted by tracking ``arg f`` along the polygon with adaptive bisection.
    """
    ring = _ring(center, radius, n_sides)
    tot, _ = _arg_changes(_scaled_f(sample), ring[:-1], ring[1:], n0=4)
    return int(round(tot.sum() / (2 * np.pi)))


def window_zero_audit(sample: GefSample, zeros, window, n_per_side: int = 64):
    """``(winding, listed)`` for the square ``window = (center, half_side)``.

    ``winding`` counts the zeros of f inside the square by the argument
    principle along its boundary; ``listed`` counts the entries of
    ``zeros`` inside it.  The two agree when the zero list is complete
    there.  If a listed zero lies within ``1e-6`` of the boundary the square
    is enlarged by ``1e-4`` first.
    """
    c, half = window
    c = complex(c)
    loc = np.array([q.location if hasattr(q, "location") else complex(q) for q in zeros],
                   dtype=np.complex128) - c
    edge = np.maximum(np.abs(loc.real), np.abs(loc.imag)) if loc.size else np.zeros(0)
    if np.any(np.abs(edge - half) < 1e-6):
        half = half + 1e-4
    t = np.linspace(-half, half, n_per_side + 1)
    sides = [t - 1j * half, half + 1j * t, t[::-1] + 1j * half, -half + 1j * t[::-1]]
    ring = c + np.concatenate([sd[:-1] for sd in sides] + [sides[0][:1]])
    tot, _ = _arg_changes(_scaled_f(sample), ring[:-1], ring[1:], n0=4)
    return int(round(tot.sum() / (2 * np.pi))), int(np.sum(edge < half))


def _cell_windings(func, x0, y0, c, nx, ny):
    """Winding numbers of ``func`` around each cell of an ``ny x nx`` grid."""
    xs = x0 + c * np.arange(nx + 1)
    ys = y0 + c * np.arange(ny + 1)
    # horizontal edges (ny+1, nx): left -> right
    ha = xs[None, :-1] + 1j * ys[:, None]
    hb = xs[None, 1:] + 1j * ys[:, None]
    # vertical edges (ny, nx+1): bottom -> top
    va = xs[None, :] + 1j * ys[:-1, None]
    vb = xs[None, :] + 1j * ys[1:, None]
    dh, mh = _arg_changes(func, ha, hb)
    dv, mv = _arg_changes(func, va, vb)
    dh = dh.reshape(ny + 1, nx)
    dv = dv.reshape(ny, nx + 1)
    mh = mh.reshape(ny + 1, nx)
    mv = mv.reshape(ny, nx + 1)
    w = (dh[:-1, :] + dv[:, 1:] - dh[1:, :] - dv[:, :-1]) / (2 * np.pi)
    wmin = np.minimum(np.minimum(mh[:-1, :], mh[1:, :]), np.minimum(mv[:, :-1], mv[:, 1:]))
    return np.rint(w).astype(int), wmin


# ---------------------------------------------------------------------------
# zeros


def _newton_zero(sample, z, step_cap, iters=60):
    z = np.array(z, dtype=np.complex128)
    n_it = np.zeros(z.shape, dtype=int)
    active = np.ones(z.shape, dtype=bool)
    for _ in range(iters):
        if not active.any():
            break
        F0, F1 = scaled_values(sample, z[active], 1, check=False)
        with np.errstate(divide="ignore", invalid="ignore"):
            d = -F0 / F1
        d = np.where(np.isfinite(d), d, 0.0)
        big = np.abs(d) > step_cap
        d[big] *= step_cap / np.abs(d[big])
        za = z[active] + d
        z[active] = za
        n_it[active] += 1
        done = np.abs(d) <= 1e-15 * (1.0 + np.abs(za))
        idx = np.flatnonzero(active)
        active[idx[done]] = False
    res = np.abs(scaled_values(sample, z, 0, check=False)[0])
    return z, res, n_it


def _dedupe(points, radius):
    """Indices of a canonical subset with pairwise distances above ``radius``."""
    pts = np.asarray(points, dtype=np.complex128)
    if pts.size == 0:
        return np.zeros(0, dtype=int)
    order = np.lexsort((pts.imag, pts.real))
    tree = cKDTree(np.column_stack([pts.real, pts.imag]))
    taken = np.zeros(pts.size, dtype=bool)
    keep = []
    for i in order:
        if taken[i]:
            continue
        keep.append(i)
        for j in tree.query_ball_point([pts[i].real, pts[i].imag], radius):
            taken[j] = True
    return np.array(keep, dtype=int)


def _sort_lex(items):
    return sorted(items, key=lambda q: (q.location.real, q.location.imag))


def _zeros_on_grid(sample, r, offset):
    c = BASE_CELL
    half = r + c
    n = int(math.ceil(2 * half / c))
    x0 = -half + offset
    y0 = -half + offset
    func = _scaled_f(sample)
    wind, _ = _cell_windings(func, x0, y0, c, n, n)
    wind[~_cell_mask(x0, y0, c, n, n, r)] = 0
    expected = int(wind.sum())
    work = [(x0 + c * i, y0 + c * j, c, int(wind[j, i])) for j, i in zip(*np.nonzero(wind))]
    found, its = [], []
    while work:
        ones = [w for w in work if w[3] == 1]
        split = [w for w in work if w[3] != 1]
        work = []
        if ones:
            ctr = np.array([complex(w[0] + w[2] / 2, w[1] + w[2] / 2) for w in ones])
            size = np.array([w[2] for w in ones])
            z, rr, nn = _newton_zero(sample, ctr, size.min())
            tol = 1e-8
            for q, w in enumerate(ones):
                inside = (w[0] - tol <= z[q].real <= w[0] + w[2] + tol
                          and w[1] - tol <= z[q].imag <= w[1] + w[2] + tol)
                if inside and rr[q] <= ZERO_RESIDUAL:
                    found.append(z[q])
                    its.append(int(nn[q]))
                else:
                    split.append(w)
        for cx, cy, size, k in split:
            if k < 0:
                raise InconsistencyError(f"negative winding {k} in cell at ({cx:.3f}, {cy:.3f})")
            if size < 1e-6:
                raise InconsistencyError(
                    f"cannot isolate {k} zero(s) in cell at ({cx:.6f}, {cy:.6f})")
            sub, _ = _cell_windings(func, cx, cy, size / 2, 2, 2)
            if sub.sum() != k:
                raise InconsistencyError(f"sub-cell windings {sub.sum()} != {k}")
            for j, i in zip(*np.nonzero(sub)):
                work.append((cx + size / 2 * i, cy + size / 2 * j, size / 2, int(sub[j, i])))
    cand = np.array(found, dtype=np.complex128)
    keep = _dedupe(cand, DEDUPE_RADIUS)
    zs = cand[keep]
    F0 = scaled_values(sample, zs, 0, check=False)[0] if zs.size else np.zeros(0)
    zeros = [Zero(complex(zs[q]), float(abs(F0[q])), its[keep[q]]) for q in range(zs.size)]
    return zeros, expected


def find_zeros(sample: GefSample, search_radius: float, check: bool = True) -> list:
    """All zeros of f in ``|z| < search_radius``, sorted lexicographically.

    Cells of a 0.5-grid are censused by winding number (adaptive boundary
    sampling), cells holding several zeros are subdivided, and each zero is
    polished by Newton's method on the scaled function.  The census is
    repeated with the grid shifted by a quarter cell if the counts disagree.

    Raises
    ------
    DomainError
        If ``search_radius > valid_radius - 2``.
    InconsistencyError
        If, for both grid offsets, the number of polished zeros differs from
        the winding census or from the winding number of the circle.
    """
    if search_radius > sample.valid_radius - 2 + 1e-12:
        raise DomainError("search_radius must not exceed valid_radius - 2")
    last = None
    for offset in (0.0, BASE_CELL / 4):
        try:
            zeros, expected = _zeros_on_grid(sample, search_radius, offset)
        except InconsistencyError as exc:
            last = str(exc)
            continue
        bad = [q for q in zeros if q.residual > ZERO_RESIDUAL]
        if len(zeros) != expected or bad:
            last = (f"{len(zeros)} polished zeros for winding census {expected}, "
                    f"{len(bad)} above residual")
            continue
        inside = [q for q in zeros if abs(q.location) < search_radius]
        if check and zeros:
            ring = _ring(0j, search_radius, 1024)
            wc = winding_number(sample, 0j, search_radius, 1024)
            zl = np.array([q.location for q in zeros])
            n_in = int(points_in_poly(np.column_stack([zl.real, zl.imag]),
                                      np.column_stack([ring.real, ring.imag])).sum())
            if wc != n_in:
                last = f"boundary winding {wc} != {n_in} zeros found"
                continue
        return _sort_lex(inside)
    raise InconsistencyError(last)


# ---------------------------------------------------------------------------
# critical points


def _gradient_parts(sample, z):
    F0, F1, F2 = scaled_values(sample, z, 2, check=False)
    with np.errstate(divide="ignore", invalid="ignore"):
        h = F1 / F0
        dh = F2 / F0 - h * h
    G = np.conj(h) - z
    return G, np.conj(dh), F0


def _newton_critical(sample, z, iters=80, step_cap=0.25):
    z = np.array(z, dtype=np.complex128)
    active = np.ones(z.shape, dtype=bool)
    for _ in range(iters):
        idx = np.flatnonzero(active)
        if idx.size == 0:
            break
        za = z[idx]
        G, A, F0 = _gradient_parts(sample, za)
        den = 1.0 - np.abs(A) ** 2
        with np.errstate(divide="ignore", invalid="ignore"):
            d = (G + A * np.conj(G)) / den
        bad = ~np.isfinite(d)
        d[bad] = 0.0
        big = np.abs(d) > step_cap
        d[big] *= step_cap / np.abs(d[big])
        z[idx] = za + d
        done = (np.abs(d) <= 1e-14 * (1 + np.abs(za))) | bad
        active[idx[done]] = False
    G, A, F0 = _gradient_parts(sample, z)
    return z, np.abs(G), 1.0 - np.abs(A) ** 2


def _index_field(sample):
    return _guarded(sample, lambda p: _gradient_parts(sample, p)[0])


def classify(sample: GefSample, location: complex) -> str:
    """``"saddle"``, ``"local_max"`` or ``"degenerate"`` from the sign of the Hessian."""
    jet = eval_jet(sample, np.array([location]))
    if jet.at_zero[0]:
        raise DomainError("cannot classify a zero of f")
    det = float(jet.hessian_det[0])
    if abs(det) < DEGENERACY_FLOOR:
        return "degenerate"
    return "saddle" if det < 0 else "local_max"


def critical_search(sample: GefSample, search_radius: float, zeros=None,
                    pitch: float = START_PITCH, audit: bool = True) -> CriticalSearch:
    """Damped Newton search for all critical points of U in ``|z| < search_radius``.

    Starts are a ``pitch`` grid plus midpoints of pairs of zeros closer than
    2.  When ``audit`` is set, the Poincare-Hopf index of grad U on each unit
    cell (zeros and maxima +1, saddles -1) is compared with what was found;
    failing cells are re-seeded on a finer grid, and any remaining gap is
    recorded and reported through :class:`CoverageWarning`.

    Raises
    ------
    DegenerateCriticalPointError
        If a converged point has ``|hessian_det|`` below the degeneracy floor.
    """
    if search_radius > sample.valid_radius - 2 + 1e-12:
        raise DomainError("search_radius must not exceed valid_radius - 2")
    if zeros is None:
        zeros = find_zeros(sample, min(search_radius + 1.0, sample.valid_radius - 2))
    zl = np.array([q.location for q in zeros], dtype=np.complex128)
    r = search_radius + 0.5
    g = np.arange(-r, r + pitch / 2, pitch)
    starts = (g[None, :] + 1j * g[:, None]).ravel()
    starts = starts[np.abs(starts) <= r]
    if zl.size > 1:
        tree = cKDTree(np.column_stack([zl.real, zl.imag]))
        pairs = np.array(sorted(tree.query_pairs(2.0)), dtype=int).reshape(-1, 2)
        if pairs.size:
            starts = np.concatenate([starts, 0.5 * (zl[pairs[:, 0]] + zl[pairs[:, 1]])])
    found = _converge(sample, starts, zl, search_radius + 0.5)
    gaps = []
    if audit:
        found, gaps = _audit(sample, search_radius, zl, found)
    pts = found[np.abs(found) < search_radius]
    out = []
    degenerate = []
    if pts.size:
        jet = eval_jet(sample, pts)
        for q in range(pts.size):
            det = float(jet.hessian_det[q])
            res = float(abs(jet.grad_U[q]))
            if abs(det) < DEGENERACY_FLOOR:
                degenerate.append(complex(pts[q]))
                continue
            out.append(CriticalPoint(complex(pts[q]), "saddle" if det < 0 else "local_max", det, res))
    if degenerate:
        raise DegenerateCriticalPointError(
            f"{len(degenerate)} critical points below degeneracy floor {DEGENERACY_FLOOR}",
            degenerate)
    for c, expect, got in gaps:
        warnings.warn(f"critical-point coverage gap in unit cell at {c}: index {expect}, found {got}",
                      CoverageWarning, stacklevel=2)
    return CriticalSearch(_sort_lex(out), gaps, int(starts.size))


def _converge(sample, starts, zl, rmax, extra=None):
    z, res, det = _newton_critical(sample, starts)
    ok = np.isfinite(z) & (res <= GRAD_RESIDUAL) & (np.abs(z) <= rmax)
    cand = z[ok]
    if extra is not None and extra.size:
        cand = np.concatenate([extra, cand])
    keep = cand[_dedupe(cand, DEDUPE_RADIUS)]
    if zl.size and keep.size:
        d, _ = cKDTree(np.column_stack([zl.real, zl.imag])).query(
            np.column_stack([keep.real, keep.imag]))
        keep = keep[d > DEDUPE_RADIUS]
    return keep


def _unit_cell_index(sample, x0, y0, n, c=1.0):
    wind, vmin = _cell_windings(_index_field(sample), x0, y0, c, n, n)
    return wind


def _audit(sample, search_radius, zl, found):
    c = 1.0
    half = math.ceil(search_radius / c) * c
    n = int(round(2 * half / c))
    x0 = y0 = -half
    ix = _unit_cell_index(sample, x0, y0, n, c)
    ix[~_cell_mask(x0, y0, c, n, n, search_radius)] = 0

    def tally(pts):
        cnt = np.zeros((n, n), dtype=int)
        i = np.floor((pts.real - x0) / c).astype(int)
        j = np.floor((pts.imag - y0) / c).astype(int)
        m = (i >= 0) & (j >= 0) & (i < n) & (j < n)
        return cnt, i[m], j[m], m

    def census(pts, zeros):
        total = np.zeros((n, n), dtype=int)
        if zeros.size:
            _, i, j, _ = tally(zeros)
            np.add.at(total, (j, i), 1)
        if pts.size:
            det = 1.0 - np.abs(_gradient_parts(sample, pts)[1]) ** 2
            _, i, j, m = tally(pts)
            np.add.at(total, (j, i), np.where(det[m] < 0, -1, 1))
        return total

    have = census(found, zl)
    bad = np.argwhere(have != ix)
    if bad.size:
        extra = []
        for j, i in bad:
            g = np.arange(0.05, c, 0.1)
            extra.append((x0 + i * c + g[None, :]) + 1j * (y0 + j * c + g[:, None]))
        more = np.concatenate([e.ravel() for e in extra])
        found = _converge(sample, more, zl, search_radius + 0.5, extra=found)
        have = census(found, zl)
    gaps = []
    for j, i in np.argwhere(have != ix):
        ctr = complex(x0 + (i + 0.5) * c, y0 + (j + 0.5) * c)
        # a cell straddling the disk edge may hold points outside the search set
        if abs(ctr) + c * 0.75 < search_radius:
            gaps.append((ctr, int(ix[j, i]), int(have[j, i])))
    return found, gaps


def find_critical_points(sample: GefSample, search_radius: float, zeros=None, **kw) -> list:
    """Saddles and local maxima of U in ``|z| < search_radius``; see :func:`critical_search`."""
    return critical_search(sample, search_radius, zeros, **kw).points


def morse_census(zeros, critical_points, window) -> MorseCensus:
    """Counts inside a square window ``(center, half_side)``."""
    center, half = window
    center = complex(center)

    def inside(p):
        d = p - center
        return abs(d.real) < half and abs(d.imag) < half

    nz = sum(1 for q in zeros if inside(q.location))
    ns = sum(1 for q in critical_points if q.kind == "saddle" and inside(q.location))
    nm = sum(1 for q in critical_points if q.kind == "local_max" and inside(q.location))
    return MorseCensus(float((2 * half) ** 2), nz, ns, nm)


def points_to_rows(zeros=(), critical_points=()):
    """Rows (re, im, kind, residual, hessian_det) for CSV export."""
    rows = []
    for q in zeros:
        rows.append((q.location.real, q.location.imag, "zero", q.residual, float("nan")))
    for q in critical_points:
        rows.append((q.location.real, q.location.imag, q.kind, q.residual, q.hessian_det))
    return rows
