import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.stats import chi2
from shapely.geometry import Point, Polygon

from d2drelay.deployment import (
    ROLE_DL,
    ROLE_IDLE,
    ROLE_UL,
    ConfigurationError,
    associate,
    build_layout,
    drop_ues,
    sample_in_sector,
    sector_polygon,
    wrap_distance,
)

LAYOUT = build_layout()


def test_nineteen_sites_and_57_sectors():
    assert LAYOUT.n_sites == 19
    assert LAYOUT.n_sectors == 57


def test_single_site_layout():
    lay = build_layout(500.0, tiers=0)
    assert lay.n_sites == 1 and lay.n_sectors == 3
    assert len(lay.wrap_vectors) == 1
    assert wrap_distance([0.0, 0.0], [300.0, 400.0], lay) == pytest.approx(500.0)


def test_adjacent_sites_are_one_isd_apart():
    d = np.linalg.norm(LAYOUT.sites[:, None] - LAYOUT.sites[None], axis=2)
    nearest = np.sort(d, axis=1)[:, 1]
    np.testing.assert_allclose(nearest, 500.0, atol=1e-9)
    # centre site has exactly six neighbours at one ISD
    assert np.sum(np.isclose(d[0], 500.0)) == 6


def test_unsupported_tiers_rejected():
    with pytest.raises(ConfigurationError):
        build_layout(500.0, tiers=3)


def test_sector_hexagons_tile_the_wrapped_plane():
    # every point of the plane belongs to exactly one sector hexagon modulo wrap
    rng = np.random.default_rng(0)
    polys = [Polygon(sector_polygon(LAYOUT, s)) for s in range(LAYOUT.n_sectors)]
    pts = rng.uniform(-1500, 1500, size=(400, 2))
    for p in pts:
        hits = 0
        for v in LAYOUT.wrap_vectors:
            q = Point(p + v)
            hits += sum(poly.contains(q) for poly in polys)
        # images beyond the first ring of wrap copies may be missed, never double counted
        assert hits <= 1
    total_area = sum(poly.area for poly in polys)
    site_area = np.sqrt(3) / 2 * 500.0**2
    assert total_area == pytest.approx(19 * site_area, rel=1e-9)


def _brute_wrap(a, b, layout):
    vs = layout.wrap_vectors
    best = np.inf
    for v, w in itertools.product(vs, vs):
        best = min(best, np.linalg.norm(np.asarray(b) - np.asarray(a) + v + w))
    return best


coord = st.floats(-1200, 1200, allow_nan=False)


@given(coord, coord, coord, coord)
@settings(max_examples=200, deadline=None)
def test_wrap_distance_matches_exhaustive_translation_search(ax, ay, bx, by):
    a, b = np.array([ax, ay]), np.array([bx, by])
    d = wrap_distance(a, b, LAYOUT)
    assert d <= np.linalg.norm(b - a) + 1e-9
    assert d == pytest.approx(_brute_wrap(a, b, LAYOUT), abs=1e-9)


@given(coord, coord, st.integers(0, 6))
@settings(max_examples=50, deadline=None)
def test_wrap_identity(ax, ay, k):
    a = np.array([ax, ay])
    assert wrap_distance(a, a, LAYOUT) == 0.0
    assert wrap_distance(a, a + LAYOUT.wrap_vectors[k], LAYOUT) == pytest.approx(0.0, abs=1e-9)


def test_ue_counts():
    rng = np.random.default_rng(1)
    lay = drop_ues(LAYOUT, 100, 10, 10, rng)
    assert lay.n_ues == 57 * 120 == 6840
    full = drop_ues(LAYOUT, 480, 10, 10, rng)
    assert full.n_ues == 28500
    assert np.sum(full.ue_roles != ROLE_IDLE) == 57 * 20
    assert drop_ues(LAYOUT, 0, 0, 0, rng).n_ues == 0


def test_oversubscribed_sector_rejected():
    with pytest.raises(ConfigurationError):
        drop_ues(LAYOUT, 990, 10, 10, np.random.default_rng(0), max_per_sector=1000)


@given(st.integers(0, 2**32 - 1), st.integers(0, 12), st.integers(0, 5), st.integers(0, 5))
@settings(max_examples=25, deadline=None)
def test_role_counts_per_sector_exact(seed, idle, dl, ul):
    lay = drop_ues(LAYOUT, idle, dl, ul, np.random.default_rng(seed))
    for role, want in ((ROLE_IDLE, idle), (ROLE_DL, dl), (ROLE_UL, ul)):
        counts = np.bincount(lay.ue_drop_sector[lay.ue_roles == role], minlength=57)
        assert np.all(counts == want)


def test_samples_fall_inside_their_sector():
    rng = np.random.default_rng(2)
    for s in (0, 1, 2, 30, 56):
        poly = Polygon(sector_polygon(LAYOUT, s)).buffer(1e-6)
        pts = sample_in_sector(LAYOUT, s, 500, rng)
        assert all(poly.contains(Point(p)) for p in pts)


def test_spatial_uniformity_chi_square():
    # 4x4 partition of the sector hexagon's bounding box, weighted by the
    # cell areas that lie inside the hexagon
    rejections = 0
    n_seeds = 100
    for seed in range(n_seeds):
        rng = np.random.default_rng(seed)
        s = seed % 57
        poly = Polygon(sector_polygon(LAYOUT, s))
        minx, miny, maxx, maxy = poly.bounds
        xs = np.linspace(minx, maxx, 5)
        ys = np.linspace(miny, maxy, 5)
        areas = np.array([[poly.intersection(Polygon([(xs[i], ys[j]), (xs[i + 1], ys[j]), (xs[i + 1], ys[j + 1]),
                                                      (xs[i], ys[j + 1])])).area for j in range(4)]
                          for i in range(4)]).ravel()
        pts = sample_in_sector(LAYOUT, s, 2000, rng)
        ix = np.clip(np.searchsorted(xs, pts[:, 0]) - 1, 0, 3)
        iy = np.clip(np.searchsorted(ys, pts[:, 1]) - 1, 0, 3)
        observed = np.bincount(ix * 4 + iy, minlength=16)
        keep = areas > 0
        expected = 2000 * areas[keep] / areas.sum()
        stat = np.sum((observed[keep] - expected) ** 2 / expected)
        if stat > chi2.ppf(0.99, keep.sum() - 1):
            rejections += 1
    # 1% level over 100 seeds: a handful of rejections is expected by chance
    assert rejections <= 5


def test_association_picks_max_gain_with_low_index_ties():
    gains = np.array([[-100.0, -90.0, -90.0], [-80.0, -85.0, -70.0]])
    np.testing.assert_array_equal(associate(gains), [1, 2])


def test_association_idempotent(small_world):
    lay, table = small_world.layout, small_world.table
    again = associate(table.wan_gain)
    np.testing.assert_array_equal(again, lay.serving_sector)
    cl = table.coupling_loss
    rows = np.arange(lay.n_ues)
    assert np.all(cl[rows, lay.serving_sector][:, None] <= cl + 1e-12)


def test_ue_at_site_is_served_by_that_site():
    from d2drelay.channel import wan_gain_matrix

    pts = LAYOUT.sites[:5] + 1.0
    gains = wan_gain_matrix(LAYOUT, pts, np.zeros((5, 19)))
    serving = associate(gains)
    np.testing.assert_array_equal(LAYOUT.sector_site[serving], np.arange(5))
