"""Gradient curves dZ/dt = -grad U(Z): integration, sink assignment, area transport."""

from __future__ import annotations

import math
import weakref
from dataclasses import dataclass, field

import numpy as np
from scipy.spatial import ConvexHull, QhullError
from skimage.measure import points_in_poly

from .errors import AssignmentError, IntegrationError, RegionNotContainedError
from .field import (TERM_ADOPTED, TERM_BUDGET, TERM_LEFT, TERM_LINE, TERM_SADDLE, TERM_SINK,
                    TERM_TIME, TERM_UNDERFLOW, TiledField, ZeroIndex, integrate_batch,
                    integrate_recorded, make_cfg)
from .gef import KIND_RING, GefSample

__all__ = [
    "IntegratorConfig",
    "Trajectory",
    "FlowDomain",
    "TERMINAL_NAMES",
    "integrate_gradient_curve",
    "assign_sink",
    "flow_points",
    "polyline_diameter",
    "LiouvilleResult",
    "liouville_flow_area",
    "shoelace_area",
    "SectorTrace",
    "ring_sector_trace",
]

TERMINAL_NAMES = {
    TERM_SINK: "sink",
    TERM_SADDLE: "saddle_stagnation",
    TERM_LEFT: "left_window",
    TERM_BUDGET: "budget",
    TERM_TIME: "time_reached",
    TERM_LINE: "line_reached",
    TERM_ADOPTED: "adopted",
    TERM_UNDERFLOW: "step_underflow",
}


@dataclass(frozen=True)
class IntegratorConfig:
    """Step control and termination parameters for gradient-curve integration."""

    rel_tol: float = 1e-7
    abs_tol: float = 1e-10
    capture_radius: float = 1e-3
    stagnation_grad_floor: float = 1e-9
    max_time: float = 50.0
    max_steps: int = 200_000
    max_displacement: float = 0.25

    def __post_init__(self):
        for name in ("rel_tol", "abs_tol", "capture_radius", "stagnation_grad_floor",
                     "max_time", "max_steps", "max_displacement"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        if self.capture_radius > 0.05:
            raise ValueError("capture_radius must be at most 0.05")

    def vector(self, t_stop: float = 0.0):
        return make_cfg(self.rel_tol, self.abs_tol, self.capture_radius,
                        self.stagnation_grad_floor, self.max_time, self.max_displacement, t_stop)

    def to_dict(self):
        return {k: getattr(self, k) for k in self.__dataclass_fields__}


@dataclass
class Trajectory:
    """One integrated gradient curve.

    ``terminal`` is one of the names in :data:`TERMINAL_NAMES`.  For sink
    terminals the last polyline vertex is the sink itself, reached through
    the analytic capture step.
    """

    start: complex
    times: np.ndarray
    points: np.ndarray
    potentials: np.ndarray
    arc_length: float
    travel_time: float
    diameter: float
    terminal: str
    sink_index: int = -1
    sink_location: complex | None = None
    end: complex = 0j
    capture_correction_applied: bool = False
    max_potential_increase: float = -math.inf

    @property
    def polyline(self):
        """Array of rows (time, x, y, U)."""
        return np.column_stack([self.times, self.points.real, self.points.imag, self.potentials])


class FlowDomain:
    """Tiles, zero lookup and exit box for integrating over a rectangle.

    Parameters
    ----------
    sample : GefSample
    zeros : sequence of Zero or complex
        Sinks used for capture.  Must include every zero the curves can reach.
    box : (xmin, xmax, ymin, ymax)
        Curves leaving this rectangle terminate with ``left_window``.
    """

    def __init__(self, sample: GefSample, zeros, box):
        self.sample = sample
        self.box = tuple(float(b) for b in box)
        locs = [q.location if hasattr(q, "location") else complex(q) for q in zeros]
        self.zero_locations = np.array(locs, dtype=np.complex128)
        xmin, xmax, ymin, ymax = self.box
        self.field = TiledField(sample, xmin - 0.6, xmax + 0.6, ymin - 0.6, ymax + 0.6)
        self.zindex = ZeroIndex(self.zero_locations, self.box)

    @classmethod
    def around(cls, sample, zeros, center=0j, half=None):
        """Square box about ``center``; by default the largest one the tiles allow."""
        center = complex(center)
        if half is None:
            half = (sample.valid_radius - 1.0 - abs(center)) / math.sqrt(2) - 1.2
        if half <= 0:
            raise ValueError("valid radius too small for a flow domain")
        return cls(sample, zeros, (center.real - half, center.real + half,
                                   center.imag - half, center.imag + half))


_DOMAINS = weakref.WeakKeyDictionary()


def _default_domain(sample, zeros):
    key = tuple(complex(q.location if hasattr(q, "location") else q) for q in zeros)
    cached = _DOMAINS.get(sample)
    if cached is not None and cached[0] == key:
        return cached[1]
    dom = FlowDomain.around(sample, zeros)
    _DOMAINS[sample] = (key, dom)
    return dom


def polyline_diameter(points) -> float:
    """Largest distance between two vertices."""
    pts = np.asarray(points, dtype=np.complex128).ravel()
    if pts.size < 2:
        return 0.0
    xy = np.column_stack([pts.real, pts.imag])
    if pts.size > 8:
        try:
            xy = xy[ConvexHull(xy).vertices]
        except QhullError:
            pass
    d = xy[:, None, :] - xy[None, :, :]
    return float(np.sqrt(np.max(np.sum(d * d, axis=-1))))


def integrate_gradient_curve(sample: GefSample, z0: complex, zeros, config: IntegratorConfig = None,
                             domain: FlowDomain = None, direction: int = 1, t_stop: float = 0.0,
                             stop_direction: complex = 0j) -> Trajectory:
    """Integrate the gradient flow from ``z0`` until a terminal event.

    Parameters
    ----------
    direction : int
        ``1`` follows ``-grad U`` (descent); ``-1`` follows ``+grad U``.
        Capture by sinks only applies to descent.
    t_stop : float
        If positive, stop exactly at this time (terminal ``time_reached``).
    stop_direction : complex
        If non-zero, stop when the curve crosses the ray through the origin
        in this direction clockwise (terminal ``line_reached``).

    Raises
    ------
    IntegrationError
        On step-size underflow, which signals a zero of f missing from
        ``zeros`` (or a start on a zero).
    """
    config = config or IntegratorConfig()
    dom = domain or _default_domain(sample, zeros)
    z0 = complex(z0)
    res = integrate_recorded(dom.field, dom.zindex, z0, config.vector(t_stop), config.max_steps,
                             dom.box, direction, stop_direction)
    code = res["code"]
    if code == TERM_UNDERFLOW:
        raise IntegrationError(f"step size underflow near {res['end']:.6g}; unlisted zero?",
                               res["end"])
    pts, ts, us = res["p"], res["t"], res["U"]
    sink_loc = None
    captured = False
    if code == TERM_SINK:
        sink_loc = complex(dom.zero_locations[res["sink"]])
        captured = True
        pts = np.append(pts, sink_loc)
        ts = np.append(ts, res["time"])
        us = np.append(us, -np.inf)
    elif res["end"] != (pts[-1] if pts.size else None):
        pts = np.append(pts, res["end"])
        ts = np.append(ts, res["time"])
        us = np.append(us, np.nan)
    return Trajectory(start=z0, times=ts, points=pts, potentials=us,
                      arc_length=res["length"], travel_time=res["time"],
                      diameter=polyline_diameter(pts), terminal=TERMINAL_NAMES[code],
                      sink_index=res["sink"] if code == TERM_SINK else -1,
                      sink_location=sink_loc, end=res["end"],
                      capture_correction_applied=captured,
                      max_potential_increase=res["worst_increase"])


def assign_sink(sample, z0, zeros, config=None, domain=None):
    """``(zero index, arc length, travel time, diameter)`` of the curve from ``z0``.

    Raises
    ------
    AssignmentError
        If the curve does not end in a sink.
    """
    tr = integrate_gradient_curve(sample, z0, zeros, config, domain)
    if tr.terminal != "sink":
        raise AssignmentError(f"curve from {z0} ended with {tr.terminal}", tr.terminal)
    return tr.sink_index, tr.arc_length, tr.travel_time, tr.diameter


def flow_points(domain: FlowDomain, starts, config: IntegratorConfig = None, direction=1,
                t_stop=0.0, **kw):
    """Vectorized integration without polylines; returns a dict of arrays."""
    config = config or IntegratorConfig()
    return integrate_batch(domain.field, domain.zindex, starts, config.vector(t_stop),
                           config.max_steps, domain.box, direction, **kw)


def shoelace_area(poly) -> float:
    p = np.asarray(poly, dtype=np.complex128)
    q = np.roll(p, -1)
    return 0.5 * float(np.sum(p.real * q.imag - q.real * p.imag))


@dataclass
class LiouvilleResult:
    initial_area: float
    area: float
    ratio: float
    mc_area: float
    mc_stderr: float
    boundary: np.ndarray = field(repr=False)
    sink_index: int = -1


def liouville_flow_area(sample, region, t, config=None, zeros=(), domain=None,
                        n_boundary=512, mc_samples=4000, seed=0, mode="preimage",
                        check_containment=True):
    """Area of the region transported by the gradient flow for time ``t``.

    ``region`` is a closed polygon (complex vertices, counter-clockwise).
    With ``mode="preimage"`` the result is the set of points whose descent
    curves are inside the region after time ``t``, obtained by following
    ``+grad U`` for time ``t``; its area is ``exp(-2t)`` times the initial one
    since ``div grad U = -2`` off the zeros.  ``mode="image"`` follows the
    descent flow forward and should give ``exp(2t)``.

    The area is measured on the transported boundary polygon (refined where
    vertices spread apart) and cross-checked by Monte Carlo membership tests:
    uniform points in the bounding box of the transported polygon are
    flowed the other way for time ``t`` and tested for membership in the
    original region.

    With ``check_containment`` the descending curves from the vertices must
    all reach one sink.  Turning it off is meant for fields whose basin is
    known in closed form, such as a monomial, where descending all the way
    into a high-order zero is not needed.

    Raises
    ------
    RegionNotContainedError
        If descending curves from the region's vertices reach different
        sinks, so the region straddles a basin boundary.
    """
    config = config or IntegratorConfig()
    dom = domain or _default_domain(sample, zeros)
    poly = np.asarray(region, dtype=np.complex128)
    if poly.size < n_boundary:
        s = np.linspace(0, 1, n_boundary // poly.size + 1)[:-1]
        nxt = np.roll(poly, -1)
        poly = (poly[:, None] + (nxt - poly)[:, None] * s[None, :]).ravel()
    a0 = shoelace_area(poly)
    if check_containment and dom.zero_locations.size:
        fate = flow_points(dom, poly, config)
        sinks = set(fate["sink"][fate["code"] == TERM_SINK].tolist())
        if len(sinks) > 1 or np.any(fate["code"] != TERM_SINK):
            raise RegionNotContainedError(f"vertices reach sinks {sorted(sinks)}")
        sink = sinks.pop() if sinks else -1
    else:
        sink = -1
    if t == 0:
        return LiouvilleResult(a0, a0, 1.0, a0, 0.0, poly, sink)
    direction = -1 if mode == "preimage" else 1
    nocap = IntegratorConfig(config.rel_tol, config.abs_tol, config.capture_radius,
                             config.stagnation_grad_floor, config.max_time, config.max_steps,
                             config.max_displacement)

    def transport(p):
        r = flow_points(dom, p, nocap, direction=direction, t_stop=t)
        if np.any(r["code"] != TERM_TIME):
            bad = np.flatnonzero(r["code"] != TERM_TIME)[0]
            raise IntegrationError(f"transport of {p[bad]} ended with "
                                   f"{TERMINAL_NAMES[int(r['code'][bad])]}", p[bad])
        return r["end"]

    src = poly
    img = transport(src)
    for _ in range(8):
        edge = np.abs(np.roll(img, -1) - img)
        scale = math.sqrt(abs(shoelace_area(img)))
        long_ = np.flatnonzero(edge > 0.01 * scale)
        if long_.size == 0:
            break
        mids = 0.5 * (src[long_] + np.roll(src, -1)[long_])
        mimg = transport(mids)
        src = np.insert(src, long_ + 1, mids)
        img = np.insert(img, long_ + 1, mimg)
    area = shoelace_area(img)
    mc_area, mc_se = np.nan, np.nan
    if mc_samples:
        rng = np.random.default_rng(seed)
        x0, x1 = img.real.min(), img.real.max()
        y0, y1 = img.imag.min(), img.imag.max()
        pts = rng.uniform(x0, x1, mc_samples) + 1j * rng.uniform(y0, y1, mc_samples)
        back = flow_points(dom, pts, nocap, direction=-direction, t_stop=t)
        inside = points_in_poly(np.column_stack([back["end"].real, back["end"].imag]),
                                np.column_stack([poly.real, poly.imag]))
        inside &= back["code"] == TERM_TIME
        box = (x1 - x0) * (y1 - y0)
        p = inside.mean()
        mc_area = box * p
        mc_se = box * math.sqrt(p * (1 - p) / mc_samples)
    return LiouvilleResult(a0, area, area / a0, mc_area, mc_se, img, sink)


@dataclass
class SectorTrace:
    """Gradient curve of the ring specimen through ``iR``, and shots that bracket it.

    ``curve`` is traced from ``iR`` by the ascent flow until it meets the
    right edge ``arg z = pi/2 - 1/10`` of the sector; read backwards it is
    the descending curve from that edge into ``iR``.  ``shots`` are descent
    curves started on the edge at radial offsets ``offsets`` from the
    curve's end; ``exits`` says through which arc (``"outer"`` or
    ``"inner"``) each one leaves the ring.
    """

    R: float
    curve: Trajectory
    edge_point: complex
    offsets: np.ndarray
    shots: list
    exits: list

    @property
    def diameter(self) -> float:
        return self.curve.diameter

    @property
    def distance_to_target(self) -> float:
        return float(np.min(np.abs(self.curve.points - 1j * self.R)))


def ring_sector_trace(sample: GefSample, n_shots: int = 5, spread: float = 0.3,
                      config: IntegratorConfig = None) -> SectorTrace:
    """Exhibit the long gradient curve of the ``"ring"`` specimen.

    The sector is ``R-1 < |z| < R+1``, ``|arg z - pi/2| < 1/10``.  Across it
    the descent flow turns counter-clockwise slowly while pushing curves
    away from ``|z| = R`` at rate about 2, so a forward shot from the edge
    cannot stay near the ring for the ``O(R)`` time the crossing takes.  The
    ascent flow is radially contracting there, which makes the backward
    trace from ``iR`` stable.
    """
    if sample.kind != KIND_RING:
        raise ValueError("ring_sector_trace needs the ring specimen")
    R = float(sample.params["R"])
    cfg = config or IntegratorConfig(max_time=50.0 * R * R, max_steps=10**6)
    xw = (R + 1.0) * math.sin(0.1) + 1.0
    dom = FlowDomain(sample, [0j], (-xw, xw, R * math.cos(0.1) - 1.6, R + 2.5))
    edge = np.exp(1j * (math.pi / 2 - 0.1))
    curve = integrate_gradient_curve(sample, 1j * R, [0j], cfg, domain=dom, direction=-1,
                                     stop_direction=edge)
    p = curve.end
    u = p / abs(p)
    offsets = np.linspace(-spread, spread, n_shots)
    shots, exits = [], []
    for d in offsets:
        s = integrate_gradient_curve(sample, p + d * u, [0j], cfg, domain=dom)
        shots.append(s)
        r = abs(s.end)
        exits.append("outer" if r > R + 1 else "inner" if r < R - 1 else s.terminal)
    return SectorTrace(R, curve, complex(p), offsets, shots, exits)
