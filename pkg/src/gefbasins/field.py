"""Fast local representation of the gradient field and the compiled integrator.

The potential is stationary (``U(w+z) = U_w(z)`` with ``U_w`` the potential of
``T_w f``), so a sample can be represented on a bounded box by unit tiles
centered on the integer lattice.  Each tile stores the Taylor coefficients of
``g = T_w f`` about its center ``w``; on ``|z| <= sqrt(2)/2`` a degree-30
polynomial reproduces ``g`` to about 1e-20 relative, and

    U(w + z) = log|g(z)| - |z|^2 / 2,    grad U(w + z) = conj(g'/g)(z) - z.

All quantities stay of order one wherever the tile sits in the plane, so the
integrator never sees overflow.
"""

from __future__ import annotations

import math

import numba as nb
import numpy as np
from scipy.special import gammaln

from .gef import GefSample, taylor_coefficients

# OpenMP first: the TBB found on many systems is older than numba accepts
nb.config.THREADING_LAYER_PRIORITY = ["omp", "tbb", "workqueue"]

__all__ = [
    "TiledField",
    "ZeroIndex",
    "TERM_SINK",
    "TERM_SADDLE",
    "TERM_LEFT",
    "TERM_BUDGET",
    "TERM_TIME",
    "TERM_LINE",
    "TERM_ADOPTED",
    "TERM_UNDERFLOW",
    "integrate_batch",
]

TILE_ORDER = 30

TERM_SINK = 0
TERM_SADDLE = 1
TERM_LEFT = 2
TERM_BUDGET = 3
TERM_TIME = 4
TERM_LINE = 5
TERM_ADOPTED = 6
TERM_UNDERFLOW = 7

# configuration vector layout shared with the compiled kernel
CFG_RTOL, CFG_ATOL, CFG_EPS, CFG_FLOOR, CFG_TMAX, CFG_DMAX, CFG_TSTOP, CFG_HMIN = range(8)
CFG_SIZE = 8


class TiledField:
    """Lattice of local Taylor tiles covering a rectangle.

    Parameters
    ----------
    sample : GefSample
    xmin, xmax, ymin, ymax : float
        Rectangle to cover.  Tiles whose unit square meets it are built.
    order : int
        Taylor degree kept per tile.
    """

    def __init__(self, sample: GefSample, xmin, xmax, ymin, ymax, order: int = TILE_ORDER):
        self.sample = sample
        self.ix0 = int(math.floor(xmin + 0.5))
        self.iy0 = int(math.floor(ymin + 0.5))
        ix1 = int(math.floor(xmax + 0.5))
        iy1 = int(math.floor(ymax + 0.5))
        self.nx = ix1 - self.ix0 + 1
        self.ny = iy1 - self.iy0 + 1
        self.order = order
        gx = np.arange(self.ix0, ix1 + 1, dtype=float)
        gy = np.arange(self.iy0, iy1 + 1, dtype=float)
        centers = gx[None, :] + 1j * gy[:, None]
        xi_local = taylor_coefficients(sample, centers, order)
        k = np.arange(order + 1)
        # plain power-series coefficients of g about each center
        self.coefs = np.ascontiguousarray(xi_local * np.exp(-0.5 * gammaln(k + 1)))

    @classmethod
    def for_box(cls, sample, center: complex, half: float, margin: float = 1.0, **kw):
        c = complex(center)
        return cls(sample, c.real - half - margin, c.real + half + margin,
                   c.imag - half - margin, c.imag + half + margin, **kw)

    @property
    def bounds(self):
        """Rectangle on which every point has a tile: (xmin, xmax, ymin, ymax)."""
        return (self.ix0 - 0.5, self.ix0 + self.nx - 0.5,
                self.iy0 - 0.5, self.iy0 + self.ny - 0.5)

    def jet(self, p):
        """U, grad U and Hessian determinant at points ``p`` (NaN off the tiles)."""
        p = np.asarray(p, dtype=np.complex128)
        flat = np.ascontiguousarray(p.ravel())
        U = np.empty(flat.size)
        G = np.empty(flat.size, dtype=np.complex128)
        D = np.empty(flat.size)
        _jet_array(self.coefs, self.ix0, self.iy0, flat, U, G, D)
        return U.reshape(p.shape), G.reshape(p.shape), D.reshape(p.shape)


class ZeroIndex:
    """Bucketed lookup of sink locations (cell size 0.5) for capture tests."""

    CELL = 0.5

    def __init__(self, locations, bounds):
        loc = np.asarray(locations, dtype=np.complex128).ravel()
        xmin, xmax, ymin, ymax = bounds
        self.x0 = xmin - 1.0
        self.y0 = ymin - 1.0
        self.nx = int(math.ceil((xmax - xmin + 2.0) / self.CELL)) + 1
        self.ny = int(math.ceil((ymax - ymin + 2.0) / self.CELL)) + 1
        ci = np.clip(np.floor((loc.real - self.x0) / self.CELL).astype(np.int64), 0, self.nx - 1)
        cj = np.clip(np.floor((loc.imag - self.y0) / self.CELL).astype(np.int64), 0, self.ny - 1)
        cell = cj * self.nx + ci
        order = np.argsort(cell, kind="stable")
        self.index = order.astype(np.int64)
        counts = np.bincount(cell, minlength=self.nx * self.ny)
        self.start = np.concatenate([[0], np.cumsum(counts)]).astype(np.int64)
        self.locations = loc

    def arrays(self):
        return (self.locations, self.start, self.index, self.x0, self.y0, self.nx, self.ny)


@nb.njit(cache=True)
def _tile_jet(coefs, ix0, iy0, p, want_det):
    """Return (ok, U, gradU, det) from the tile holding p."""
    fx = math.floor(p.real + 0.5)
    fy = math.floor(p.imag + 0.5)
    i = int(fx) - ix0
    j = int(fy) - iy0
    ny, nx, m = coefs.shape
    if i < 0 or j < 0 or i >= nx or j >= ny:
        return False, 0.0, 0j, 0.0
    z = p - complex(fx, fy)
    g = 0j
    d1 = 0j
    d2 = 0j
    for k in range(m - 1, -1, -1):
        d2 = d2 * z + d1
        d1 = d1 * z + g
        g = g * z + coefs[j, i, k]
    if g == 0:
        return False, 0.0, 0j, 0.0
    h = d1 / g
    U = math.log(abs(g)) - 0.5 * (z.real * z.real + z.imag * z.imag)
    grad = h.conjugate() - z
    det = 0.0
    if want_det:
        dh = 2.0 * d2 / g - h * h
        det = 1.0 - (dh.real * dh.real + dh.imag * dh.imag)
    return True, U, grad, det


@nb.njit(cache=True)
def _jet_array(coefs, ix0, iy0, pts, U, G, D):
    for n in range(pts.size):
        ok, u, g, d = _tile_jet(coefs, ix0, iy0, pts[n], True)
        if ok:
            U[n] = u
            G[n] = g
            D[n] = d
        else:
            U[n] = np.nan
            G[n] = complex(np.nan, np.nan)
            D[n] = np.nan


@nb.njit(cache=True)
def _vel(coefs, ix0, iy0, p, dirn):
    ok, u, g, d = _tile_jet(coefs, ix0, iy0, p, False)
    return ok, u, -dirn * g, g


@nb.njit(cache=True)
def _seg_capture(zl, zs, zi, zx0, zy0, znx, nzy, a, b, eps):
    """Nearest listed zero within eps of segment [a, b]: (index, fraction s of entry)."""
    xlo = min(a.real, b.real) - eps
    xhi = max(a.real, b.real) + eps
    ylo = min(a.imag, b.imag) - eps
    yhi = max(a.imag, b.imag) + eps
    c = 0.5
    i0 = max(int(math.floor((xlo - zx0) / c)), 0)
    i1 = min(int(math.floor((xhi - zx0) / c)), znx - 1)
    j0 = max(int(math.floor((ylo - zy0) / c)), 0)
    j1 = min(int(math.floor((yhi - zy0) / c)), nzy - 1)
    d = b - a
    dd = d.real * d.real + d.imag * d.imag
    best = -1
    best_s = 2.0
    for j in range(j0, j1 + 1):
        for i in range(i0, i1 + 1):
            cell = j * znx + i
            for q in range(zs[cell], zs[cell + 1]):
                k = zi[q]
                w = a - zl[k]
                # |w + s d|^2 = eps^2 -> dd s^2 + 2 Re(w conj d) s + |w|^2 - eps^2 = 0
                ww = w.real * w.real + w.imag * w.imag
                if ww <= eps * eps:
                    s = 0.0
                elif dd == 0.0:
                    continue
                else:
                    bq = w.real * d.real + w.imag * d.imag
                    disc = bq * bq - dd * (ww - eps * eps)
                    if disc < 0.0:
                        continue
                    s = (-bq - math.sqrt(disc)) / dd
                    if s < 0.0 or s > 1.0:
                        continue
                if s < best_s:
                    best_s = s
                    best = k
    return best, best_s


@nb.njit(cache=True)
def _integrate_one(coefs, ix0, iy0, z0, zl, zs, zi, zx0, zy0, znx, zny,
                   cfg, max_steps, dirn, box, line_u,
                   hom, hx0, hy0, hcell, record, rec_t, rec_p, rec_u):
    """Dormand-Prince 5(4) with PI control for dZ/dt = -dirn * grad U.

    Returns (code, sink, time, length, end, nsteps, nrec, Umax_increase).
    """
    rtol = cfg[CFG_RTOL]
    atol = cfg[CFG_ATOL]
    eps = cfg[CFG_EPS]
    floor_ = cfg[CFG_FLOOR]
    tmax = cfg[CFG_TMAX]
    dmax = cfg[CFG_DMAX]
    tstop = cfg[CFG_TSTOP]
    hmin = cfg[CFG_HMIN]
    hny = hom.shape[0]
    hnx = hom.shape[1]
    use_line = line_u != 0

    p = z0
    t = 0.0
    length = 0.0
    nrec = 0
    worst = -np.inf
    # immediate capture
    if dirn > 0 and eps > 0:
        k, s = _seg_capture(zl, zs, zi, zx0, zy0, znx, zny, p, p, eps)
        if k >= 0:
            r = abs(p - zl[k])
            return TERM_SINK, k, 0.5 * r * r, r, p, 0, nrec, worst
    ok, u, v1, g = _vel(coefs, ix0, iy0, p, dirn)
    if not ok:
        return TERM_UNDERFLOW, -1, t, length, p, 0, nrec, worst
    if record:
        rec_t[0] = t
        rec_p[0] = p
        rec_u[0] = u
        nrec = 1
    speed = abs(v1)
    h = 0.05 / max(speed, 1e-3)
    err_prev = 1e-4
    rejected = False
    for step in range(max_steps):
        # early exit on a committed coarse cell
        if hcell > 0:
            ci = int(math.floor((p.real - hx0) / hcell))
            cj = int(math.floor((p.imag - hy0) / hcell))
            if ci >= 0 and cj >= 0 and ci < hnx and cj < hny:
                lab = hom[cj, ci]
                if lab >= 0:
                    return TERM_ADOPTED, lab, t, length, p, step, nrec, worst
        gnorm = abs(v1)
        if gnorm < floor_:
            return TERM_SADDLE, -1, t, length, p, step, nrec, worst
        if t >= tmax:
            return TERM_BUDGET, -1, t, length, p, step, nrec, worst
        if tstop > 0 and t >= tstop:
            return TERM_TIME, -1, t, length, p, step, nrec, worst
        last = False
        if tstop > 0 and t + h >= tstop:
            h = tstop - t
            last = True
        if h < hmin:
            return TERM_UNDERFLOW, -1, t, length, p, step, nrec, worst
        k1 = v1
        ok2, _, k2, _ = _vel(coefs, ix0, iy0, p + h * (0.2 * k1), dirn)
        ok3, _, k3, _ = _vel(coefs, ix0, iy0, p + h * (3.0 / 40.0 * k1 + 9.0 / 40.0 * k2), dirn)
        ok4, _, k4, _ = _vel(coefs, ix0, iy0, p + h * (44.0 / 45.0 * k1 - 56.0 / 15.0 * k2 + 32.0 / 9.0 * k3), dirn)
        ok5, _, k5, _ = _vel(coefs, ix0, iy0, p + h * (19372.0 / 6561.0 * k1 - 25360.0 / 2187.0 * k2
                                                    + 64448.0 / 6561.0 * k3 - 212.0 / 729.0 * k4), dirn)
        ok6, _, k6, _ = _vel(coefs, ix0, iy0, p + h * (9017.0 / 3168.0 * k1 - 355.0 / 33.0 * k2
                                                    + 46732.0 / 5247.0 * k3 + 49.0 / 176.0 * k4
                                                    - 5103.0 / 18656.0 * k5), dirn)
        dp = h * (35.0 / 384.0 * k1 + 500.0 / 1113.0 * k3 + 125.0 / 192.0 * k4
                  - 2187.0 / 6784.0 * k5 + 11.0 / 84.0 * k6)
        pn = p + dp
        ok7, un, k7, _ = _vel(coefs, ix0, iy0, pn, dirn)
        if not (ok2 and ok3 and ok4 and ok5 and ok6 and ok7):
            h *= 0.25
            rejected = True
            continue
        adp = abs(dp)
        if adp > dmax:
            h *= 0.9 * dmax / adp
            rejected = True
            continue
        e = h * (71.0 / 57600.0 * k1 - 71.0 / 16695.0 * k3 + 71.0 / 1920.0 * k4
                 - 17253.0 / 339200.0 * k5 + 22.0 / 525.0 * k6 - 1.0 / 40.0 * k7)
        err = abs(e) / (atol + rtol * adp)
        if err > 1.0:
            h *= max(0.2, 0.9 * err ** -0.2)
            rejected = True
            continue
        # accepted
        if dirn > 0 and eps > 0:
            kz, s = _seg_capture(zl, zs, zi, zx0, zy0, znx, zny, p, pn, eps)
            if kz >= 0:
                t_in = t + s * h
                l_in = length + s * adp
                return (TERM_SINK, kz, t_in + 0.5 * eps * eps, l_in + eps, zl[kz], step + 1,
                        nrec, worst)
        if use_line:
            side_old = (p * line_u.conjugate()).imag
            side_new = (pn * line_u.conjugate()).imag
            if side_old > 0 and side_new <= 0:
                s = side_old / (side_old - side_new)
                pe = p + s * dp
                return TERM_LINE, -1, t + s * h, length + s * adp, pe, step + 1, nrec, worst
        worst = max(worst, dirn * (un - u))
        t += h
        length += adp
        p = pn
        u = un
        v1 = k7
        if record and nrec < rec_t.size:
            rec_t[nrec] = t
            rec_p[nrec] = p
            rec_u[nrec] = u
            nrec += 1
        if p.real < box[0] or p.real > box[1] or p.imag < box[2] or p.imag > box[3]:
            return TERM_LEFT, -1, t, length, p, step + 1, nrec, worst
        if last:
            return TERM_TIME, -1, t, length, p, step + 1, nrec, worst
        fac = 0.9 * max(err, 1e-10) ** (-0.7 / 5.0) * err_prev ** (0.4 / 5.0)
        fac = min(5.0, max(0.2, fac))
        if rejected:
            fac = min(fac, 1.0)
        rejected = False
        err_prev = max(err, 1e-4)
        h *= fac
    return TERM_BUDGET, -1, t, length, p, max_steps, nrec, worst


@nb.njit(cache=True, parallel=True)
def _integrate_batch(coefs, ix0, iy0, starts, zl, zs, zi, zx0, zy0, znx, zny,
                     cfg, max_steps, dirn, box, line_u, hom, hx0, hy0, hcell,
                     codes, sinks, times, lengths, ends, nsteps):
    # starts are independent, so the result does not depend on the thread count
    for n in nb.prange(starts.size):
        dummy_t = np.empty(1)
        dummy_p = np.empty(1, dtype=np.complex128)
        res = _integrate_one(coefs, ix0, iy0, starts[n], zl, zs, zi, zx0, zy0, znx, zny,
                             cfg, max_steps, dirn, box, line_u, hom, hx0, hy0, hcell,
                             False, dummy_t, dummy_p, dummy_t)
        codes[n] = res[0]
        sinks[n] = res[1]
        times[n] = res[2]
        lengths[n] = res[3]
        ends[n] = res[4]
        nsteps[n] = res[5]


def make_cfg(rel_tol, abs_tol, capture_radius, grad_floor, max_time, max_disp=0.25,
             t_stop=0.0, h_min=1e-14):
    cfg = np.zeros(CFG_SIZE)
    cfg[CFG_RTOL] = rel_tol
    cfg[CFG_ATOL] = abs_tol
    cfg[CFG_EPS] = capture_radius
    cfg[CFG_FLOOR] = grad_floor
    cfg[CFG_TMAX] = max_time
    cfg[CFG_DMAX] = max_disp
    cfg[CFG_TSTOP] = t_stop
    cfg[CFG_HMIN] = h_min
    return cfg


_NO_HOM = np.full((1, 1), -1, dtype=np.int64)


def integrate_batch(field: TiledField, zindex: ZeroIndex, starts, cfg, max_steps, box,
                    direction=1, line_u=0j, hom=None, hom_origin=(0.0, 0.0), hom_cell=0.0):
    """Integrate many starts without recording polylines.

    Returns a dict of arrays: code, sink, time, length, end, nsteps.
    """
    starts = np.ascontiguousarray(np.asarray(starts, dtype=np.complex128).ravel())
    n = starts.size
    codes = np.empty(n, dtype=np.int64)
    sinks = np.empty(n, dtype=np.int64)
    times = np.empty(n)
    lengths = np.empty(n)
    ends = np.empty(n, dtype=np.complex128)
    nsteps = np.empty(n, dtype=np.int64)
    if hom is None:
        hom = _NO_HOM
        hom_cell = 0.0
    _integrate_batch(field.coefs, field.ix0, field.iy0, starts, *zindex.arrays(),
                     cfg, int(max_steps), float(direction), np.asarray(box, dtype=float),
                     complex(line_u), np.ascontiguousarray(hom, dtype=np.int64),
                     float(hom_origin[0]), float(hom_origin[1]), float(hom_cell),
                     codes, sinks, times, lengths, ends, nsteps)
    return {"code": codes, "sink": sinks, "time": times, "length": lengths,
            "end": ends, "nsteps": nsteps}


def integrate_recorded(field: TiledField, zindex: ZeroIndex, z0, cfg, max_steps, box,
                       direction=1, line_u=0j):
    """Integrate one start, keeping every accepted vertex."""
    cap = int(max_steps) + 2
    rec_t = np.empty(cap)
    rec_p = np.empty(cap, dtype=np.complex128)
    rec_u = np.empty(cap)
    res = _integrate_one(field.coefs, field.ix0, field.iy0, complex(z0), *zindex.arrays(),
                         cfg, int(max_steps), float(direction), np.asarray(box, dtype=float),
                         complex(line_u), _NO_HOM, 0.0, 0.0, 0.0,
                         True, rec_t, rec_p, rec_u)
    code, sink, t, length, end, nsteps, nrec, worst = res
    return {"code": int(code), "sink": int(sink), "time": float(t), "length": float(length),
            "end": complex(end), "nsteps": int(nsteps), "worst_increase": float(worst),
            "t": rec_t[:nrec].copy(), "p": rec_p[:nrec].copy(), "U": rec_u[:nrec].copy()}
