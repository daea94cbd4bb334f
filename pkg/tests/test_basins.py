import math

import numpy as np
import pytest

from gefbasins.basins import (BOUNDARY, EXTERIOR, UNRESOLVED, all_geometries, basin_geometry,
                              basin_outlines, extract_boundaries, neighbor_graph,
                              required_radius, saddle_graph, tessellate)
from gefbasins.critical import winding_number
from gefbasins.errors import TessellationQualityError
from gefbasins.flow import FlowDomain, IntegratorConfig, assign_sink, shoelace_area

from conftest import FAST, WINDOW


def test_required_radius():
    assert math.isclose(required_radius((3 + 4j, 2.0)), 5 + 5.2 * math.sqrt(2) + 1.05)


def test_map_shape_and_labels(bmap, zeros):
    assert bmap.shape == (160, 160)
    assert bmap.origin == -4 - 4j
    lab = bmap.labels
    assert set(np.unique(lab[lab < 0]).tolist()) <= {BOUNDARY, UNRESOLVED, EXTERIOR}
    assert bmap.meta["unresolved"] <= 1e-3 * lab.size
    assert lab.max() < len(zeros)


def test_labels_match_direct_integration(sample, zeros, bmap):
    rng = np.random.default_rng(2)
    nodes = bmap.nodes()
    dom = FlowDomain.around(sample, zeros, 0j, WINDOW[1] + 2)
    for j, i in rng.integers(0, 160, size=(40, 2)):
        k, *_ = assign_sink(sample, nodes[j, i], zeros, FAST, domain=dom)
        assert k == bmap.labels[j, i]


def test_early_exit_agrees_with_full_integration(sample, zeros):
    win = (0.5 + 0.5j, 2.0)
    a = tessellate(sample, win, 0.05, FAST, zeros=zeros)
    b = tessellate(sample, win, 0.05, FAST, zeros=zeros, early_exit=False)
    assert a.meta["adopted"] > 0
    assert np.mean(a.labels != b.labels) <= 1e-3


def test_interior_basins_have_area_near_pi(bmap):
    geos = all_geometries(bmap)
    assert len(geos) >= 5
    for g in geos:
        assert g.interior
        assert abs(g.area - math.pi) < 0.15
        assert g.core_mass[0] == g.area
        assert np.all(np.diff(g.core_mass) <= 0)
        assert g.diameter >= g.max_distance_to_sink
        assert g.core_mass_at(g.max_distance_to_sink + 0.1) == 0.0


def test_interior_basins_do_not_touch_the_edge(bmap):
    lab = bmap.labels
    edge = set(np.concatenate([lab[0], lab[-1], lab[:, 0], lab[:, -1]]).tolist())
    assert not edge & set(bmap.interior_indices().tolist())


def test_empty_basin_geometry(bmap, zeros):
    absent = [k for k in range(len(zeros)) if not np.any(bmap.labels == k)]
    g = basin_geometry(bmap, absent[0])
    assert g.area == 0.0 and g.node_count == 0


def test_zero_count_matches_winding(sample, bmap):
    z = bmap.zero_locations
    for r in (2.7, 3.3):
        n = int(np.sum(np.abs(z) < r))
        assert winding_number(sample, 0j, r, n_sides=1024) == n


def test_neighbor_graph_symmetric(bmap):
    st = neighbor_graph(bmap)
    for a, nb in st.adjacency.items():
        assert a not in nb
        for b in nb:
            assert a in st.adjacency[b]
    assert st.mean_interior >= 2


def test_saddle_graph_links_two_basins(sample, bmap, crit):
    saddles = [p for p in crit.points if p.kind == "saddle"
               and abs(p.location.real) < 3 and abs(p.location.imag) < 3]
    st, links = saddle_graph(sample, bmap, saddles, FAST)
    assert len(links) == len(saddles)
    for loc, a, b in links:
        assert a >= 0 and b >= 0 and a != b
    grid = neighbor_graph(bmap)
    # a common separatrix puts the two sinks next to each other on the grid
    for loc, a, b in links:
        if bmap.interior[a]:
            assert b in grid.adjacency[a]


def test_outlines_and_boundaries(bmap):
    k = int(bmap.interior_indices()[0])
    polys = basin_outlines(bmap, [k])[k]
    area = sum(abs(shoelace_area(p)) for p in polys)
    assert abs(area - np.sum(bmap.labels == k) * bmap.pitch ** 2) < 0.05
    assert all(abs(p[0] - p[-1]) < 1e-12 for p in polys)
    assert len(extract_boundaries(bmap)) > 0


def test_quality_error(sample, zeros):
    cfg = IntegratorConfig(max_steps=3)
    with pytest.raises(TessellationQualityError) as err:
        tessellate(sample, (0j, 1.0), 0.1, cfg, zeros=zeros)
    assert err.value.basin_map.meta["unresolved"] > 0


def test_bad_pitch(sample, zeros):
    with pytest.raises(ValueError):
        tessellate(sample, (0j, 1.0), 0.3, zeros=zeros)


def test_area_discretization_bound_and_partition(bmap):
    h = bmap.pitch
    geos = all_geometries(bmap)
    for g in geos:
        assert abs(g.area - math.pi) <= 5 * h * g.diameter
    lab = bmap.labels
    non_interior = np.sum(~np.isin(lab, bmap.interior_indices()))
    total = (2 * bmap.window[1]) ** 2
    assert math.isclose(sum(g.area for g in geos), total - non_interior * h * h, rel_tol=1e-12)


def test_interior_basins_have_neighbors(bmap):
    st = neighbor_graph(bmap)
    assert all(n >= 1 for n in st.interior_counts.values())
