"""Monte Carlo ensembles over independent samples and their summary statistics.

A :class:`EnsembleManifest` fixes everything an experiment depends on.  Sample
``i`` is drawn with a seed derived from ``(base_seed, i)`` so that any subset
of samples can be recomputed on its own, and persisted records can be
resumed.  Aggregation always walks the records in sample order.
"""

from __future__ import annotations

import csv
import json
import math
import os
import time
import warnings
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy import stats as sps

from .basins import (DEFAULT_RADII, all_geometries, neighbor_graph, required_radius,
                     saddle_graph, tessellate)
from .critical import (CoverageWarning, critical_search, find_zeros, morse_census,
                       window_zero_audit)
from .errors import EnsembleAbortError, GefError
from .field import TERM_SINK
from .flow import FlowDomain, IntegratorConfig, flow_points
from .gef import (coeff_covariance_bound, complex_gaussians, kernel_f, kernel_xi, sample_gef,
                  truncation_degree)

__all__ = [
    "SCHEMA_VERSION",
    "KINDS",
    "EnsembleManifest",
    "SampleRecord",
    "sample_seed",
    "run_sample",
    "run_ensemble",
    "load_records",
    "TailCurve",
    "survival",
    "tail_curves",
    "slope_diagnostic",
    "TravelTimeReport",
    "travel_time_test",
    "CovarianceReport",
    "covariance_test",
    "DensityReport",
    "density_census",
]

SCHEMA_VERSION = 1
KINDS = ("tails", "densities", "travel_time", "covariance", "neighbors")
FAILURE_BUDGET = 0.005
CORE_RADII = np.round(np.arange(0.0, 8.0 + 1e-9, 0.1), 10)


def sample_seed(base_seed: int, index: int) -> int:
    """64-bit seed of sample ``index``, spawned from ``(base_seed, index)``."""
    state = np.random.SeedSequence([int(base_seed), int(index)]).generate_state(2, np.uint32)
    return int(state[0]) | (int(state[1]) << 32)


@dataclass(frozen=True)
class EnsembleManifest:
    """Complete description of an ensemble experiment.

    ``window`` is ``(center, half_side)`` of the square analysed in each
    sample, with a real center (the field is stationary, so only the
    distance from the origin matters for the truncation).  For ``travel_time`` it is the square the starts are drawn from
    and the integration box extends ``flow_margin`` beyond it.
    """

    kind: str
    n_samples: int
    base_seed: int = 0
    window: tuple = (0.0, 6.0)
    pitch: float = 0.05
    config: dict = field(default_factory=lambda: IntegratorConfig(
        rel_tol=1e-6, capture_radius=0.02).to_dict())
    stride: int = 4
    starts_per_sample: int = 500
    flow_margin: float = 8.0
    covariance_points: tuple = ()
    schema_version: int = SCHEMA_VERSION

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown experiment kind {self.kind!r}; expected one of {KINDS}")
        if self.n_samples < 0:
            raise ValueError("n_samples must be non-negative")
        c, half = self.window
        object.__setattr__(self, "window", (float(complex(c).real), float(half)))
        object.__setattr__(self, "config", dict(self.config))

    @property
    def integrator(self) -> IntegratorConfig:
        return IntegratorConfig(**self.config)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["window"] = list(self.window)
        d["covariance_points"] = [list(p) for p in self.covariance_points]
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "EnsembleManifest":
        d = dict(d)
        d["window"] = tuple(d["window"])
        d["covariance_points"] = tuple(tuple(p) for p in d.get("covariance_points", ()))
        if d.get("schema_version", SCHEMA_VERSION) != SCHEMA_VERSION:
            raise ValueError(f"unsupported record schema {d['schema_version']}")
        return cls(**d)


@dataclass
class SampleRecord:
    """Outcome of one sample: scalar fields plus per-item rows (basins or trajectories)."""

    index: int
    seed: int
    status: str
    cause: str = ""
    scalars: dict = field(default_factory=dict)
    items: list = field(default_factory=list)


def _window_center(m):
    return complex(m.window[0], 0.0)


def _run_tails(m, seed):
    win = (_window_center(m), m.window[1])
    s = sample_gef(seed, required_radius(win))
    zeros = find_zeros(s, s.valid_radius - 2)
    bm = tessellate(s, win, m.pitch, m.integrator, zeros=zeros, stride=m.stride)
    items = []
    for g in all_geometries(bm, radii=CORE_RADII):
        row = {"zero": g.zero_index, "area": g.area, "diameter": g.diameter,
               "max_distance": g.max_distance_to_sink}
        row.update({f"core_{r:.1f}": float(v) for r, v in zip(g.radii, g.core_mass)})
        items.append(row)
    # the basin of the window center, for the stationary point observation
    ny, nx = bm.labels.shape
    lab = int(bm.labels[ny // 2, nx // 2])
    wind, listed = window_zero_audit(s, zeros, win)
    scal = {"n_interior": len(items), "unresolved": bm.meta["unresolved"],
            "boundary": bm.meta["boundary"], "center_label": lab, "winding": wind,
            "listed_zeros": listed}
    if lab >= 0:
        xs, ys = bm.node_coordinates()
        scal["center_distance"] = abs(complex(xs[nx // 2], ys[ny // 2]) - bm.zeros[lab].location)
    return scal, items


def _run_densities(m, seed):
    win = (_window_center(m), m.window[1])
    s = sample_gef(seed, required_radius(win))
    zeros = find_zeros(s, s.valid_radius - 2)
    c, half = win
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always", CoverageWarning)
        cs = critical_search(s, abs(c) + (half + 1.0) * math.sqrt(2), zeros=zeros)
    census = morse_census(zeros, cs.points, win)
    bm = tessellate(s, win, m.pitch, m.integrator, zeros=zeros, stride=m.stride)
    grid = neighbor_graph(bm)
    saddles = [p for p in cs.points if p.kind == "saddle"]
    sg, _ = saddle_graph(s, bm, saddles, m.integrator)
    items = [{"zero": k, "grid_neighbors": grid.interior_counts[k],
              "saddle_neighbors": sg.interior_counts[k]} for k in grid.interior_counts]
    wind, listed = window_zero_audit(s, zeros, win)
    scal = {"area": census.area, "n_zeros": census.n_zeros, "n_saddles": census.n_saddles,
            "n_maxima": census.n_maxima, "coverage_gaps": len(cs.coverage_gaps),
            "coverage_warnings": len(caught), "winding": wind, "listed_zeros": listed}
    return scal, items


def _run_travel(m, seed):
    c, half = _window_center(m), m.window[1]
    box_half = half + m.flow_margin
    s = sample_gef(seed, abs(c) + box_half * math.sqrt(2) + 3.5)
    zeros = find_zeros(s, s.valid_radius - 2)
    dom = FlowDomain.around(s, zeros, c, box_half)
    rng = np.random.default_rng(seed)
    n = m.starts_per_sample
    starts = c + rng.uniform(-half, half, n) + 1j * rng.uniform(-half, half, n)
    r = flow_points(dom, starts, m.integrator)
    items = [{"x": float(z.real), "y": float(z.imag), "code": int(k), "tau": float(t)}
             for z, k, t in zip(starts, r["code"], r["time"])]
    return {"n_starts": n, "n_sink": int(np.sum(r["code"] == TERM_SINK))}, items


_RUNNERS = {"tails": _run_tails, "densities": _run_densities, "neighbors": _run_densities,
            "travel_time": _run_travel}


def run_sample(manifest: EnsembleManifest, index: int) -> SampleRecord:
    """Run the pipeline of ``manifest.kind`` on sample ``index``; failures are recorded."""
    seed = sample_seed(manifest.base_seed, index)
    try:
        scal, items = _RUNNERS[manifest.kind](manifest, seed)
    except GefError as exc:
        return SampleRecord(index, seed, "failed", f"{exc.category}: {exc}")
    return SampleRecord(index, seed, "ok", "", scal, items)


def _csv_append(path, rows, header):
    new = not os.path.exists(path)
    with open(path, "a", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=header, extrasaction="raise")
        if new:
            w.writeheader()
        for r in rows:
            w.writerow(r)
        fh.flush()
        os.fsync(fh.fileno())


def _sample_header(kind):
    base = ["sample", "seed", "status", "cause"]
    extra = {"tails": ["n_interior", "unresolved", "boundary", "center_label", "center_distance",
                       "winding", "listed_zeros"],
             "densities": ["area", "n_zeros", "n_saddles", "n_maxima", "coverage_gaps",
                           "coverage_warnings", "winding", "listed_zeros"],
             "travel_time": ["n_starts", "n_sink"]}
    extra["neighbors"] = extra["densities"]
    return base + extra[kind]


def _item_header(kind):
    if kind == "tails":
        return ["sample", "zero", "area", "diameter", "max_distance"] + [
            f"core_{r:.1f}" for r in CORE_RADII]
    if kind in ("densities", "neighbors"):
        return ["sample", "zero", "grid_neighbors", "saddle_neighbors"]
    return ["sample", "x", "y", "code", "tau"]


def _parse(v):
    if v == "":
        return None
    try:
        f = float(v)
    except ValueError:
        return v
    return int(f) if f.is_integer() and "." not in v and "e" not in v.lower() else f


def _repair(out_dir, kind):
    """Drop torn sample rows and the items of samples without a committed row.

    A sample row is the commit marker of its items, so after an interruption
    the files are cut back to the last complete sample before appending.
    """
    sp = os.path.join(out_dir, "samples.csv")
    ip = os.path.join(out_dir, "items.csv")
    keep_rows, done = [], set()
    if os.path.exists(sp):
        with open(sp, newline="") as fh:
            for row in csv.DictReader(fh):
                if row.get("status") not in ("ok", "failed") or None in row.values():
                    continue
                try:
                    i = int(row["sample"])
                    int(row["seed"])
                except (TypeError, ValueError):
                    continue
                keep_rows.append(row)
                done.add(i)
    keep_items = []
    if os.path.exists(ip):
        with open(ip, newline="") as fh:
            for row in csv.DictReader(fh):
                if None in row.values():
                    continue
                try:
                    i = int(row["sample"])
                except (TypeError, ValueError):
                    continue
                if i in done:
                    keep_items.append(row)
    for path, rows, header in ((sp, keep_rows, _sample_header(kind)),
                               (ip, keep_items, _item_header(kind))):
        if os.path.exists(path):
            tmp = path + ".tmp"
            with open(tmp, "w", newline="") as fh:
                w = csv.DictWriter(fh, fieldnames=header)
                w.writeheader()
                w.writerows(rows)
            os.replace(tmp, path)


def load_records(out_dir) -> tuple:
    """``(manifest, records)`` from an ensemble directory; items of unfinished samples are ignored."""
    with open(os.path.join(out_dir, "manifest.json")) as fh:
        man = EnsembleManifest.from_dict(json.load(fh))
    recs = {}
    sp = os.path.join(out_dir, "samples.csv")
    if os.path.exists(sp):
        with open(sp, newline="") as fh:
            for row in csv.DictReader(fh):
                i = int(row["sample"])
                scal = {k: _parse(v) for k, v in row.items()
                        if k not in ("sample", "seed", "status", "cause") and v != ""}
                recs[i] = SampleRecord(i, int(row["seed"]), row["status"], row["cause"], scal, [])
    ip = os.path.join(out_dir, "items.csv")
    if os.path.exists(ip):
        with open(ip, newline="") as fh:
            for row in csv.DictReader(fh):
                i = int(row["sample"])
                if i in recs:
                    recs[i].items.append({k: _parse(v) for k, v in row.items() if k != "sample"})
    return man, [recs[i] for i in sorted(recs)]


def run_ensemble(manifest: EnsembleManifest, out_dir=None, resume: bool = True,
                 progress=None) -> list:
    """Run every sample of the manifest and return the records in sample order.

    With ``out_dir`` the manifest, a ``samples.csv`` and an ``items.csv`` are
    written there; rows are only ever appended, items before the sample row,
    so a rerun resumes after the last complete sample.  Failed samples are
    recorded with their cause.

    Raises
    ------
    EnsembleAbortError
        When failures exceed 0.5% of ``n_samples`` (at least one failure is
        always tolerated).
    """
    if manifest.kind == "covariance":
        raise ValueError("covariance experiments run through covariance_test")
    done = {}
    if out_dir is not None:
        os.makedirs(out_dir, exist_ok=True)
        mp = os.path.join(out_dir, "manifest.json")
        if os.path.exists(mp) and resume:
            with open(mp) as fh:
                old = EnsembleManifest.from_dict(json.load(fh))
            if old != manifest:
                raise ValueError("existing ensemble directory holds a different manifest")
            _repair(out_dir, manifest.kind)
            _, recs = load_records(out_dir)
            done = {r.index: r for r in recs}
        else:
            for name in ("samples.csv", "items.csv"):
                p = os.path.join(out_dir, name)
                if os.path.exists(p):
                    os.remove(p)
            tmp = mp + ".tmp"
            with open(tmp, "w") as fh:
                json.dump(manifest.to_dict(), fh, indent=2, sort_keys=True)
            os.replace(tmp, mp)
    budget = max(1, int(math.floor(FAILURE_BUDGET * manifest.n_samples)))
    failures = sum(1 for r in done.values() if r.status != "ok")
    out = []
    for i in range(manifest.n_samples):
        if i in done:
            out.append(done[i])
            continue
        t0 = time.perf_counter()
        rec = run_sample(manifest, i)
        if out_dir is not None:
            _csv_append(os.path.join(out_dir, "items.csv"),
                        [dict(sample=i, **it) for it in rec.items], _item_header(manifest.kind))
            row = {"sample": i, "seed": rec.seed, "status": rec.status, "cause": rec.cause}
            row.update(rec.scalars)
            _csv_append(os.path.join(out_dir, "samples.csv"), [row], _sample_header(manifest.kind))
        out.append(rec)
        if rec.status != "ok":
            failures += 1
            if failures > budget:
                raise EnsembleAbortError(
                    f"{failures} of {i + 1} samples failed (budget {budget}); last: {rec.cause}")
        if progress is not None:
            progress(i, rec, time.perf_counter() - t0)
    return out


# ---------------------------------------------------------------------------
# tail curves


@dataclass
class TailCurve:
    """Survival estimates ``P{X > R}`` with binomial standard errors.

    ``exceedances`` counts the basins contributing at each threshold; entries
    with fewer than 10 are flagged in ``unreliable``.
    """

    observable: str
    thresholds: np.ndarray
    survival: np.ndarray
    stderr: np.ndarray
    n: int
    exceedances: np.ndarray
    unreliable: np.ndarray

    def rows(self):
        return [(float(r), float(p), float(e), int(self.n), int(k), bool(u))
                for r, p, e, k, u in zip(self.thresholds, self.survival, self.stderr,
                                         self.exceedances, self.unreliable)]


def survival(values, thresholds, weights=None) -> TailCurve:
    """Weighted empirical survival curve of ``values`` at ``thresholds``.

    The standard error uses the effective sample size
    ``(sum w)^2 / sum w^2`` of the weights.
    """
    x = np.asarray(values, dtype=float)
    w = np.ones_like(x) if weights is None else np.asarray(weights, dtype=float)
    R = np.asarray(thresholds, dtype=float)
    tot = w.sum()
    exc = x[None, :] > R[:, None]
    p = (exc * w[None, :]).sum(axis=1) / tot if tot > 0 else np.zeros(R.size)
    neff = tot**2 / np.sum(w**2) if tot > 0 else 0.0
    se = np.sqrt(p * (1 - p) / max(neff, 1.0))
    k = exc.sum(axis=1)
    return TailCurve("values", R, p, se, int(x.size), k, k < 10)


def _items(records):
    rows = []
    for r in records:
        if r.status == "ok":
            rows.extend((r.index, it) for it in r.items)
    return rows


def tail_curves(records, observable: str, thresholds=None, core_eps: float = 0.1) -> TailCurve:
    """Survival curve of a basin observable for a uniformly placed point ``z``.

    Interior basins are pooled and weighted by area, which turns per-basin
    statistics into statistics of the basin ``B_z`` containing a uniform
    random point:

    * ``diameter``: ``P{diam B_z > R}``;
    * ``distance``: ``P{|z - a_z| > R}``, from the area of each basin outside
      ``D(a, R)``;
    * ``core_mass``: ``P{m2(B_z \\ D(a_z, R)) >= core_eps}``.
    """
    rows = _items(records)
    R = CORE_RADII if thresholds is None else np.asarray(thresholds, dtype=float)
    area = np.array([it["area"] for _, it in rows], dtype=float)
    tot = area.sum()
    if observable == "diameter":
        c = survival([it["diameter"] for _, it in rows], R, area)
    elif observable in ("distance", "core_mass"):
        cm = np.array([[it[f"core_{r:.1f}"] for r in CORE_RADII] for _, it in rows]).reshape(
            len(rows), CORE_RADII.size)
        cmR = np.array([np.interp(R, CORE_RADII, row, right=0.0) for row in cm]).reshape(
            len(rows), R.size)
        if observable == "distance":
            p = np.clip(cmR.sum(axis=0) / tot, 0.0, 1.0) if tot > 0 else np.zeros(R.size)
            neff = tot**2 / np.sum(area**2) if tot > 0 else 0.0
            se = np.sqrt(p * (1 - p) / max(neff, 1.0))
            k = (cmR > 0).sum(axis=0)
            c = TailCurve("distance", R, p, se, len(rows), k, k < 10)
        else:
            hit = cmR >= core_eps
            p = np.clip((hit * area[:, None]).sum(axis=0) / tot, 0.0, 1.0) if tot > 0 else np.zeros(
                R.size)
            neff = tot**2 / np.sum(area**2) if tot > 0 else 0.0
            se = np.sqrt(p * (1 - p) / max(neff, 1.0))
            k = hit.sum(axis=0)
            c = TailCurve("core_mass", R, p, se, len(rows), k, k < 10)
    else:
        raise ValueError(f"unknown observable {observable!r}")
    c.observable = observable
    return c


def slope_diagnostic(curve: TailCurve, r_range=(2.0, 4.0)):
    """Least-squares slope of ``log(-log P)`` against ``log R`` over ``r_range``.

    Only thresholds with ``0 < P < 1`` and at least 10 exceedances enter.
    Returns ``(slope, stderr, n_points)``; the error comes from the
    standard errors of ``P`` propagated through the transform.
    """
    R, p, se = curve.thresholds, curve.survival, curve.stderr
    m = (R >= r_range[0] - 1e-12) & (R <= r_range[1] + 1e-12) & (p > 0) & (p < 1) & ~curve.unreliable
    if m.sum() < 2:
        return float("nan"), float("nan"), int(m.sum())
    x = np.log(R[m])
    y = np.log(-np.log(p[m]))
    sy = se[m] / (p[m] * np.abs(np.log(p[m])))
    sy = np.where(sy > 0, sy, np.min(sy[sy > 0]) if np.any(sy > 0) else 1.0)
    W = 1.0 / sy**2
    A = np.vstack([x, np.ones_like(x)]).T
    cov = np.linalg.inv(A.T @ (A * W[:, None]))
    beta = cov @ (A.T @ (W * y))
    return float(beta[0]), float(math.sqrt(cov[0, 0])), int(m.sum())


# ---------------------------------------------------------------------------
# travel times


@dataclass
class TravelTimeReport:
    n: int
    ks_statistic: float
    ks_critical: float
    p_value: float
    passed: bool
    survival: dict  # t -> (empirical, exact, binomial stderr)


def travel_time_test(records_or_times, level: float = 0.01, times=(0.5, 1.0, 1.5)):
    """Kolmogorov-Smirnov comparison of travel times with the rate-2 exponential law."""
    if isinstance(records_or_times, np.ndarray) or (
            len(records_or_times) and not isinstance(records_or_times[0], SampleRecord)):
        tau = np.asarray(records_or_times, dtype=float)
    else:
        tau = np.array([it["tau"] for _, it in _items(records_or_times)
                        if int(it["code"]) == TERM_SINK], dtype=float)
    n = tau.size
    res = sps.kstest(tau, "expon", args=(0.0, 0.5))
    crit = float(sps.kstwo.ppf(1 - level, n))
    surv = {}
    for t in times:
        p = float(np.mean(tau > t))
        e = math.exp(-2 * t)
        surv[float(t)] = (p, e, math.sqrt(e * (1 - e) / n))
    return TravelTimeReport(n, float(res.statistic), crit, float(res.pvalue),
                            bool(res.statistic < crit), surv)


# ---------------------------------------------------------------------------
# covariances


DEFAULT_PAIRS = ((0.3 + 0.2j, -0.4 + 0.5j), (1.0 + 0.0j, 0.9 + 0.6j), (-1.2 + 0.3j, -0.8 - 0.7j),
                 (0.5 - 1.1j, 0.2 - 1.4j), (1.4 + 0.2j, 1.1 + 0.8j), (0.0 + 0.0j, 0.7 + 0.7j))


@dataclass
class CovarianceReport:
    """Empirical against exact covariances; every entry carries ``(empirical, exact, stderr, ok)``."""

    n_samples: int
    f_kernel: list
    xi_kernel: list
    taylor_bound: list
    diagonal: list

    @property
    def passed(self) -> bool:
        return all(e[-1] for grp in (self.f_kernel, self.xi_kernel, self.taylor_bound,
                                     self.diagonal) for e in grp)


def _taylor_map(w, order, n_coef, points=64):
    """Matrix taking GEF coefficients to ``xi_k(w) = sqrt(k!) b_k``, ``b_k`` the Taylor
    coefficients of ``f(w+z) exp(-z conj(w) - |w|^2/2)``, by a Cauchy integral on ``|z| = 1``."""
    zeta = np.exp(2j * np.pi * np.arange(points) / points)
    z = w + zeta
    k = np.arange(n_coef)
    logb = k[None, :] * np.log(z[:, None]) - 0.5 * np.array([math.lgamma(j + 1) for j in k])[None, :]
    V = np.exp(logb - zeta[:, None] * np.conj(w) - 0.5 * abs(w) ** 2)  # (points, n_coef)
    j = np.arange(order + 1)
    F = zeta[:, None] ** (-j[None, :]) / points
    fact = np.exp(0.5 * np.array([math.lgamma(q + 1) for q in j]))
    return (V.T @ F) * fact[None, :]


def _cov(a, b):
    """Mean of ``a conj(b)`` with a standard error of the complex mean."""
    prod = a * np.conj(b)
    n = prod.size
    m = prod.mean()
    se = math.sqrt(np.var(prod.real) / n + np.var(prod.imag) / n)
    return m, (math.sqrt(np.var(prod.real) / n), math.sqrt(np.var(prod.imag) / n)), se


def covariance_test(n_samples: int = 100_000, pairs=DEFAULT_PAIRS, base_seed: int = 0,
                    separations=(3.0, 4.0), batch: int = 10_000, n_se: float = 3.0):
    """Monte Carlo check of the covariance kernels and of the Taylor-coefficient bound.

    Coefficients are drawn exactly as :func:`sample_gef` draws them, with
    sample seeds from :func:`sample_seed`.  Values at the points are linear
    in the coefficients, so each batch is a single matrix product.  Complex
    equalities are accepted when the real and the imaginary parts are each
    within ``n_se`` standard errors.
    """
    pairs = [(complex(a), complex(b)) for a, b in pairs]
    wpairs = [(0j, complex(s, 0.0)) for s in separations]
    rmax = max(max(abs(a), abs(b)) for a, b in pairs)
    wmax = max(separations) + 1.0
    n_coef = truncation_degree(max(rmax, wmax) + 1.0, 1e-14) + 1
    k = np.arange(n_coef)
    lf = -0.5 * np.array([math.lgamma(j + 1) for j in k])
    pts = np.array([p for ab in pairs for p in ab])

    def basis(z):
        with np.errstate(divide="ignore"):
            lz = np.log(np.where(z == 0, 1.0, z))
        B = np.exp(k[None, :] * lz[:, None] + lf[None, :])
        B[z == 0, 1:] = 0.0
        dB = np.zeros_like(B)
        dB[:, 1:] = B[:, :-1] * np.sqrt(k[1:])[None, :]
        return B.T, (dB - np.conj(z)[:, None] * B).T

    Bf, Bxi = basis(pts)
    T0 = _taylor_map(0j, 1, n_coef)
    Tw = [_taylor_map(w2, 1, n_coef) for _, w2 in wpairs]
    fv, xv, t0v, twv = [], [], [], [[] for _ in wpairs]
    for start in range(0, n_samples, batch):
        idx = range(start, min(start + batch, n_samples))
        C = np.array([complex_gaussians(sample_seed(base_seed, i), n_coef) for i in idx])
        fv.append(C @ Bf)
        xv.append(C @ Bxi)
        t0v.append(C @ T0)
        for q, T in enumerate(Tw):
            twv[q].append(C @ T)
    F = np.concatenate(fv)
    X = np.concatenate(xv)
    X0 = np.concatenate(t0v)
    XW = [np.concatenate(t) for t in twv]

    def within(m, exact, comp):
        return bool(abs(m.real - exact.real) <= n_se * comp[0] + 1e-15
                    and abs(m.imag - exact.imag) <= n_se * comp[1] + 1e-15)

    fk, xk = [], []
    for q, (a, b) in enumerate(pairs):
        m, comp, se = _cov(F[:, 2 * q], F[:, 2 * q + 1])
        ex = complex(kernel_f(a, b))
        fk.append(((a, b), m, ex, se, within(m, ex, comp)))
        m, comp, se = _cov(X[:, 2 * q], X[:, 2 * q + 1])
        ex = complex(kernel_xi(a, b))
        xk.append(((a, b), m, ex, se, within(m, ex, comp)))
    tb = []
    for (w1, w2), Y in zip(wpairs, XW):
        for j in (0, 1):
            for kk in (0, 1):
                m, comp, se = _cov(X0[:, j], Y[:, kk])
                bound = float(coeff_covariance_bound(j, kk, w1, w2))
                tb.append(((j, kk, abs(w1 - w2)), abs(m), bound, se, bool(abs(m) <= bound + n_se * se)))
    diag = []
    for j in (0, 1):
        m, comp, se = _cov(X0[:, j], X0[:, j])
        diag.append(((j,), m, 1.0 + 0j, se, within(m, 1.0 + 0j, comp)))
    return CovarianceReport(n_samples, fk, xk, tb, diag)


# ---------------------------------------------------------------------------
# densities


@dataclass
class DensityReport:
    """Pooled densities with standard errors across samples, and neighbor means."""

    n_samples: int
    area: float
    zero_density: tuple
    saddle_density: tuple
    maximum_density: tuple
    grid_neighbors: tuple  # (mean, stderr, n basins)
    saddle_neighbors: tuple
    total_zeros: int


def _ratio_se(num, den):
    num = np.asarray(num, dtype=float)
    den = np.asarray(den, dtype=float)
    r = num.sum() / den.sum()
    n = num.size
    if n < 2:
        return float(r), float("nan")
    resid = num - r * den
    se = math.sqrt(np.sum(resid**2) / (n * (n - 1))) / den.mean()
    return float(r), float(se)


def density_census(records) -> DensityReport:
    """Pooled zero, saddle and maximum densities, and the interior neighbor means."""
    ok = [r for r in records if r.status == "ok"]
    area = [r.scalars["area"] for r in ok]
    zd = _ratio_se([r.scalars["n_zeros"] for r in ok], area)
    sd = _ratio_se([r.scalars["n_saddles"] for r in ok], area)
    md = _ratio_se([r.scalars["n_maxima"] for r in ok], area)
    g = np.array([it["grid_neighbors"] for _, it in _items(ok)], dtype=float)
    s = np.array([it["saddle_neighbors"] for _, it in _items(ok)], dtype=float)

    def mean_se(x):
        if x.size == 0:
            return float("nan"), float("nan"), 0
        return float(x.mean()), float(x.std(ddof=1) / math.sqrt(x.size)) if x.size > 1 else float(
            "nan"), int(x.size)

    return DensityReport(len(ok), float(np.sum(area)), zd, sd, md, mean_se(g), mean_se(s),
                         int(sum(r.scalars["n_zeros"] for r in ok)))
