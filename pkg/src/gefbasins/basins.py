"""Basin partition of a window: tessellation, geometry and the neighbor graph."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.spatial import ConvexHull, QhullError
from skimage.measure import find_contours

from .critical import find_zeros
from .errors import TessellationQualityError
from .field import TERM_ADOPTED, TERM_LEFT, TERM_SADDLE, TERM_SINK
from .flow import FlowDomain, IntegratorConfig, flow_points, polyline_diameter
from .gef import GefSample, eval_jet

__all__ = [
    "BOUNDARY",
    "UNRESOLVED",
    "EXTERIOR",
    "BasinMap",
    "BasinGeometry",
    "NeighborStats",
    "required_radius",
    "tessellate",
    "basin_geometry",
    "all_geometries",
    "neighbor_graph",
    "saddle_graph",
    "extract_boundaries",
    "basin_outlines",
]

BOUNDARY = -1
UNRESOLVED = -2
# curve left the integration box: its sink lies outside the zero list
EXTERIOR = -3

MAX_UNRESOLVED = 1e-3
FLOW_MARGIN = 2.0


def required_radius(window) -> float:
    """Valid radius a sample needs for tessellating ``window``.

    Covers the integration box (window plus a margin of 2) together with the
    tiles around it.
    """
    center, half = window
    return abs(complex(center)) + (half + FLOW_MARGIN + 1.2) * math.sqrt(2) + 1.05


@dataclass
class BasinMap:
    """Grid of sink labels over a square window.

    Node ``(j, i)`` sits at the cell center ``origin + ((i+1/2) h, (j+1/2) h)``
    and represents an area ``h**2``.  Labels are indices into ``zeros`` or one
    of ``BOUNDARY``, ``UNRESOLVED``, ``EXTERIOR``.
    """

    window: tuple
    pitch: float
    labels: np.ndarray
    zeros: list
    interior: np.ndarray
    meta: dict = field(default_factory=dict)

    @property
    def origin(self) -> complex:
        c, half = self.window
        return complex(c) - complex(half, half)

    @property
    def shape(self):
        return self.labels.shape

    def node_coordinates(self):
        ny, nx = self.labels.shape
        o = self.origin
        xs = o.real + (np.arange(nx) + 0.5) * self.pitch
        ys = o.imag + (np.arange(ny) + 0.5) * self.pitch
        return xs, ys

    def nodes(self):
        xs, ys = self.node_coordinates()
        return xs[None, :] + 1j * ys[:, None]

    @property
    def zero_locations(self):
        return np.array([q.location for q in self.zeros], dtype=np.complex128)

    def interior_indices(self):
        return np.flatnonzero(self.interior)


def _interior_flags(labels, zeros, window, pitch):
    n_zeros = len(zeros)
    c, half = window
    loc = np.array([q.location for q in zeros], dtype=np.complex128) - complex(c)
    inner = (np.abs(loc.real) < half - pitch) & (np.abs(loc.imag) < half - pitch)
    present = (np.bincount(labels[labels >= 0], minlength=n_zeros) > 0) & inner
    edge = np.concatenate([labels[0, :], labels[-1, :], labels[:, 0], labels[:, -1]])
    touched = np.zeros(n_zeros, dtype=bool)
    e = edge[edge >= 0]
    touched[e] = True
    return present & ~touched


def _code_labels(res):
    code = res["code"]
    lab = np.full(code.shape, UNRESOLVED, dtype=np.int64)
    ok = (code == TERM_SINK) | (code == TERM_ADOPTED)
    lab[ok] = res["sink"][ok]
    lab[code == TERM_SADDLE] = BOUNDARY
    lab[code == TERM_LEFT] = EXTERIOR
    return lab


def tessellate(sample: GefSample, window, pitch: float, config: IntegratorConfig = None,
               zeros=None, early_exit: bool = True, stride: int = 4,
               check_quality: bool = True) -> BasinMap:
    """Assign every node of ``window = (center, half_side)`` to its sink.

    With ``early_exit`` the nodes of a coarse sub-lattice (every
    ``stride``-th node, a power of two) are integrated first.  The lattice
    is then refined by factors of two; curves from the new nodes stop as
    soon as they enter a cell of the previous lattice whose four corners
    reached the same sink, and adopt that sink.

    Raises
    ------
    TessellationQualityError
        If more than 0.1% of the nodes end unresolved.  The map is attached
        as ``exc.basin_map``.
    """
    config = config or IntegratorConfig()
    center, half = window
    center = complex(center)
    if pitch <= 0:
        raise ValueError("pitch must be positive")
    n = int(round(2 * half / pitch))
    if not math.isclose(n * pitch, 2 * half, rel_tol=1e-9):
        raise ValueError("window side must be a multiple of the pitch")
    if zeros is None:
        zeros = find_zeros(sample, sample.valid_radius - 2)
    dom = FlowDomain.around(sample, zeros, center, half + FLOW_MARGIN)
    origin = center - complex(half, half)
    xs = origin.real + (np.arange(n) + 0.5) * pitch
    ys = origin.imag + (np.arange(n) + 0.5) * pitch
    nodes = xs[None, :] + 1j * ys[:, None]
    labels = np.full((n, n), UNRESOLVED, dtype=np.int64)
    adopted = 0
    if early_exit and stride > 1 and n > 2 * stride:
        s = stride
        coarse = np.zeros((n, n), dtype=bool)
        coarse[::s, ::s] = True
        labels[coarse] = _code_labels(flow_points(dom, nodes[coarse], config))
        while s > 1:
            # homogeneous cells of the current lattice guide the next finer one
            cl = labels[::s, ::s]
            same = ((cl[:-1, :-1] == cl[1:, :-1]) & (cl[:-1, :-1] == cl[:-1, 1:])
                    & (cl[:-1, :-1] == cl[1:, 1:]))
            hom = np.where(same & (cl[:-1, :-1] >= 0), cl[:-1, :-1], -1)
            s //= 2
            level = np.zeros((n, n), dtype=bool)
            level[::s, ::s] = True
            new = level & ~coarse
            r = flow_points(dom, nodes[new], config, hom=hom,
                            hom_origin=(xs[0], ys[0]), hom_cell=2 * s * pitch)
            labels[new] = _code_labels(r)
            adopted += int(np.sum(r["code"] == TERM_ADOPTED))
            coarse = level
    else:
        r = flow_points(dom, nodes.ravel(), config)
        labels[:] = _code_labels(r).reshape(n, n)
    interior = _interior_flags(labels, zeros, (center, half), pitch)
    meta = {"early_exit": bool(early_exit), "stride": int(stride), "adopted": adopted,
            "unresolved": int(np.sum(labels == UNRESOLVED)),
            "boundary": int(np.sum(labels == BOUNDARY)),
            "exterior": int(np.sum(labels == EXTERIOR)),
            "config": config.to_dict()}
    bm = BasinMap((center, float(half)), float(pitch), labels.astype(np.int32), list(zeros),
                  interior, meta)
    if check_quality and meta["unresolved"] > MAX_UNRESOLVED * labels.size:
        exc = TessellationQualityError(
            f"{meta['unresolved']} of {labels.size} nodes unresolved (limit 0.1%)")
        exc.basin_map = bm
        raise exc
    return bm


@dataclass
class BasinGeometry:
    """Size measurements of one basin on the grid.

    ``core_mass[k]`` is the area of the basin outside the disk of radius
    ``radii[k]`` about its sink.
    """

    zero_index: int
    area: float
    diameter: float
    radii: np.ndarray
    core_mass: np.ndarray
    max_distance_to_sink: float
    interior: bool
    node_count: int

    def core_mass_at(self, R):
        return float(np.interp(R, self.radii, self.core_mass, right=0.0))


DEFAULT_RADII = np.round(np.arange(0.0, 20.0 + 1e-9, 0.05), 10)


def basin_geometry(bmap: BasinMap, zero_index: int, radii=DEFAULT_RADII) -> BasinGeometry:
    """Area, diameter and core mass of basin ``zero_index``.

    The diameter is that of the union of the node cells (convex hull of the
    cell corners); distances to the sink use node centers.
    """
    mask = bmap.labels == zero_index
    cnt = int(mask.sum())
    h = bmap.pitch
    radii = np.asarray(radii, dtype=float)
    if cnt == 0:
        return BasinGeometry(zero_index, 0.0, 0.0, radii, np.zeros_like(radii), 0.0, False, 0)
    xs, ys = bmap.node_coordinates()
    j, i = np.nonzero(mask)
    pts = xs[i] + 1j * ys[j]
    # boundary nodes suffice for the hull
    pad = np.pad(mask, 1)
    edge = ~(pad[:-2, 1:-1] & pad[2:, 1:-1] & pad[1:-1, :-2] & pad[1:-1, 2:])[j, i]
    ep = pts[edge]
    corners = (ep[:, None] + 0.5 * h * np.array([-1 - 1j, -1 + 1j, 1 - 1j, 1 + 1j])[None, :]).ravel()
    diam = polyline_diameter(corners)
    a = bmap.zeros[zero_index].location
    d = np.sort(np.abs(pts - a))
    # nodes strictly farther than R
    outside = cnt - np.searchsorted(d, radii, side="right")
    return BasinGeometry(zero_index, h * h * cnt, diam, radii, h * h * outside,
                         float(d[-1]), bool(bmap.interior[zero_index]), cnt)


def all_geometries(bmap: BasinMap, interior_only: bool = True, radii=DEFAULT_RADII):
    idx = bmap.interior_indices() if interior_only else np.unique(bmap.labels[bmap.labels >= 0])
    return [basin_geometry(bmap, int(k), radii) for k in idx]


@dataclass
class NeighborStats:
    """Adjacency sets per sink and the interior-basin mean degree."""

    adjacency: dict
    interior_counts: dict
    mean_interior: float
    method: str


def _stats(adj, bmap, method):
    interior = set(int(k) for k in bmap.interior_indices())
    counts = {k: len(adj.get(k, ())) for k in sorted(interior)}
    mean = float(np.mean(list(counts.values()))) if counts else float("nan")
    return NeighborStats({k: sorted(v) for k, v in adj.items()}, counts, mean, method)


def neighbor_graph(bmap: BasinMap) -> NeighborStats:
    """Basins are adjacent when their nodes touch in the 8-neighborhood.

    A boundary-labeled node joins all the basins around it, so a one-node
    seam of stagnating curves does not cut an adjacency.
    """
    lab = bmap.labels.astype(np.int64)
    adj: dict = {}

    def link(a, b):
        m = (a >= 0) & (b >= 0) & (a != b)
        for p, q in set(zip(a[m].tolist(), b[m].tolist())):
            adj.setdefault(p, set()).add(q)
            adj.setdefault(q, set()).add(p)

    link(lab[:, :-1], lab[:, 1:])
    link(lab[:-1, :], lab[1:, :])
    link(lab[:-1, :-1], lab[1:, 1:])
    link(lab[:-1, 1:], lab[1:, :-1])
    bj, bi = np.nonzero(lab == BOUNDARY)
    ny, nx = lab.shape
    for j, i in zip(bj, bi):
        block = lab[max(j - 1, 0):j + 2, max(i - 1, 0):i + 2].ravel()
        s = sorted(set(block[block >= 0].tolist()))
        for p in s:
            for q in s:
                if p != q:
                    adj.setdefault(p, set()).add(q)
    for k in np.unique(lab[lab >= 0]).tolist():
        adj.setdefault(k, set())
    return _stats(adj, bmap, "grid")


def saddle_graph(sample: GefSample, bmap: BasinMap, saddles, config: IntegratorConfig = None,
                 offset: float = 1e-4, domain: FlowDomain = None):
    """Neighbor relation through saddles.

    From each saddle the two descending separatrices leave along the
    eigenvector of the negative Hessian eigenvalue; both are traced from
    ``saddle +- offset * v``.  The two sinks reached are neighbors.

    Returns ``(NeighborStats, links)`` where ``links`` lists
    ``(saddle location, sink_a, sink_b)``.
    """
    config = config or IntegratorConfig()
    center, half = bmap.window
    dom = domain or FlowDomain.around(sample, bmap.zeros, center, half + FLOW_MARGIN)
    locs = np.array([s.location if hasattr(s, "location") else s for s in saddles],
                    dtype=np.complex128)
    adj: dict = {}
    links = []
    if locs.size:
        jet = eval_jet(sample, locs)
        with np.errstate(divide="ignore", invalid="ignore"):
            h = jet.f_prime_scaled / jet.f_scaled
            dh = jet.f_second_scaled / jet.f_scaled - h * h
        uxx = dh.real - 1.0
        uyy = -dh.real - 1.0
        uxy = -dh.imag
        starts = []
        for q in range(locs.size):
            H = np.array([[uxx[q], uxy[q]], [uxy[q], uyy[q]]])
            w, V = np.linalg.eigh(H)
            v = complex(V[0, 0], V[1, 0])  # eigenvalue w[0] < 0
            starts.extend([locs[q] + offset * v, locs[q] - offset * v])
        r = flow_points(dom, np.array(starts), config)
        for q in range(locs.size):
            ca, cb = r["code"][2 * q], r["code"][2 * q + 1]
            a, b = int(r["sink"][2 * q]), int(r["sink"][2 * q + 1])
            if ca == TERM_SINK and cb == TERM_SINK:
                links.append((complex(locs[q]), a, b))
                if a != b:
                    adj.setdefault(a, set()).add(b)
                    adj.setdefault(b, set()).add(a)
            else:
                links.append((complex(locs[q]), a if ca == TERM_SINK else -1,
                              b if cb == TERM_SINK else -1))
    return _stats(adj, bmap, "saddle"), links


def _to_plane(bmap, contour):
    """Marching-squares (row, col) coordinates to complex plane points."""
    o = bmap.origin
    h = bmap.pitch
    return o.real + (contour[:, 1] + 0.5) * h + 1j * (o.imag + (contour[:, 0] + 0.5) * h)


def basin_outlines(bmap: BasinMap, labels=None) -> dict:
    """Closed outline polygons per label (marching squares on padded masks).

    A basin clipped by the window edge is closed along the edge; a basin
    filling the window is outlined by the window frame itself.
    """
    lab = bmap.labels
    if labels is None:
        labels = np.unique(lab[lab >= 0]).tolist()
    out = {}
    for k in labels:
        mask = np.pad((lab == k).astype(float), 1)
        cs = find_contours(mask, 0.5)
        out[int(k)] = [_to_plane(bmap, c - 1.0) for c in cs]
    return out


def extract_boundaries(bmap: BasinMap) -> list:
    """Polylines separating nodes of different labels.

    Each label mask is contoured without padding, so curves run between
    basins and end on the window edge; a curve shared by two masks is kept
    once.
    """
    lab = bmap.labels
    polys = []
    seen = set()
    for k in np.unique(lab).tolist():
        mask = (lab == k).astype(float)
        for c in find_contours(mask, 0.5):
            key = frozenset(map(tuple, np.round(c, 6).tolist()))
            if key in seen:
                continue
            seen.add(key)
            polys.append(_to_plane(bmap, c))
    if not polys:
        # a single label: the frame is the only boundary
        c, half = bmap.window
        c = complex(c)
        polys.append(np.array([c + complex(-half, -half), c + complex(half, -half),
                               c + complex(half, half), c + complex(-half, half),
                               c + complex(-half, -half)]))
    return polys
