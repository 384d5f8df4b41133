import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from d2drelay.channel import (
    AntennaConfig,
    DenseShadowGenerator,
    GridShadowGenerator,
    antenna_gain,
    antenna_pattern,
    generate_shadow_field,
    pathloss_d2d,
    pathloss_wan,
    repair_correlation,
    wan_gain_matrix,
)
from d2drelay.deployment import ConfigurationError, build_layout

LAYOUT = build_layout()


# -- pathloss ----------------------------------------------------------------


def test_wan_pathloss_values():
    assert pathloss_wan(100.0) == pytest.approx(110.5, abs=1e-12)
    assert pathloss_wan(1.0) == pytest.approx(35.3, abs=1e-12)
    assert pathloss_wan(1000.0) == pytest.approx(35.3 + 37.6 * 3, abs=1e-12)
    assert pathloss_wan(1000.0) == pytest.approx(148.1, abs=1e-9)


def test_d2d_pathloss_values():
    assert pathloss_d2d(10.0) == pytest.approx(58.47, abs=1e-9)
    assert pathloss_d2d(44.0) == pytest.approx(71.34, abs=0.01)
    assert pathloss_d2d(50.0) == pytest.approx(85.08, abs=0.01)
    # self distance clamps to 1 m
    assert pathloss_d2d(0.0) == pytest.approx(38.47)


def test_d2d_branch_seams():
    near_44 = 38.47 + 20 * math.log10(44.0)
    mid_44 = 71.34
    mid_64 = 71.34 + 2.29 * 20
    far_64 = 44.85 + 40 * math.log10(64.0)
    assert abs(near_44 - mid_44) <= 0.01
    assert abs(mid_64 - far_64) <= 0.05
    eps = 1e-9
    assert abs(pathloss_d2d(44 + eps) - pathloss_d2d(44 - eps)) <= 0.01
    assert abs(pathloss_d2d(64 + eps) - pathloss_d2d(64 - eps)) <= 0.05


def test_85db_neighbourhood_is_about_50m():
    d = np.linspace(1, 200, 200001)
    edge = d[pathloss_d2d(d) <= 85.0].max()
    assert 49 < edge < 51


@given(st.floats(0, 5000), st.floats(0, 5000))
def test_pathloss_monotone(a, b):
    lo, hi = min(a, b), max(a, b)
    assert pathloss_wan(lo) <= pathloss_wan(hi)
    # the seam at 64 m steps down by at most the published rounding
    assert pathloss_d2d(lo) <= pathloss_d2d(hi) + 0.05


# -- antenna -----------------------------------------------------------------


def test_antenna_peak_and_offsets():
    assert antenna_pattern(0.0, 15.0) == pytest.approx(14.0)
    assert antenna_pattern(70.0, 15.0) == pytest.approx(2.0)
    assert antenna_pattern(180.0, 15.0) == pytest.approx(14.0 - 25.0)


@given(st.floats(-360, 360), st.floats(0, 90))
def test_antenna_floor(phi, theta):
    g = antenna_pattern(phi, theta)
    assert 14.0 - 25.0 - 1e-9 <= g <= 14.0 + 1e-9
    assert g >= 14.0 - 25.0 - 20.0


def test_antenna_gain_uses_elevation():
    # a UE on boresight at the downtilt elevation sees the peak
    horiz = (32.0 - 1.5) / math.tan(math.radians(15.0))
    pts = LAYOUT.sector_positions[:1] + np.array([[horiz, 0.0]])
    assert antenna_gain(LAYOUT, 0, pts[0]) == pytest.approx(14.0, abs=1e-9)


def test_wan_gain_composition():
    # zero shadowing, boresight, 100 m, vertical term disabled
    flat = AntennaConfig(sla_v=0.0)
    pts = LAYOUT.sector_positions[:1] + np.array([[100.0, 0.0]])
    g = wan_gain_matrix(LAYOUT, pts, np.zeros((1, 19)), flat)
    assert g[0, 0] == pytest.approx(-110.5 + 14.0, abs=1e-9)


def test_wan_gain_oracle(small_world):
    # independent recomputation for a handful of (ue, sector) pairs
    lay = small_world.layout
    sh = small_world.shadow.values
    rng = np.random.default_rng(3)
    for u, s in zip(rng.integers(0, lay.n_ues, 20), rng.integers(0, 57, 20)):
        site = lay.sector_positions[s]
        best = None
        for v in lay.wrap_vectors:
            d = lay.ue_positions[u] + v - site
            if best is None or np.hypot(*d) < np.hypot(*best):
                best = d
        dist = max(np.hypot(*best), 1.0)
        phi = math.degrees(math.atan2(best[1], best[0])) - lay.sector_azimuth[s]
        phi = (phi + 180) % 360 - 180
        theta = math.degrees(math.atan2(30.5, np.hypot(*best)))
        a_h = -min(12 * (phi / 70) ** 2, 25)
        a_v = -min(12 * ((theta - 15) / 10) ** 2, 20)
        pattern = -min(-(a_h + a_v), 25) + 14
        want = -(35.3 + 37.6 * math.log10(dist)) - sh[u, lay.sector_site[s]] + pattern
        assert small_world.table.wan_gain[u, s] == pytest.approx(want, abs=1e-9)


# -- shadowing ---------------------------------------------------------------


def test_repair_keeps_valid_correlation():
    rng = np.random.default_rng(0)
    a = rng.standard_normal((6, 6))
    c = a @ a.T
    c /= np.sqrt(np.outer(np.diag(c), np.diag(c)))
    f = repair_correlation(c)
    np.testing.assert_allclose(f @ f.T, c, atol=1e-10)
    bad = c.copy()
    bad[0, 1] = bad[1, 0] = 0.999
    bad[0, 2] = bad[2, 0] = -0.999
    f = repair_correlation(bad)
    np.testing.assert_allclose(np.diag(f @ f.T), 1.0, atol=1e-12)


def test_same_seed_same_field():
    pts = np.random.default_rng(0).uniform(-500, 500, (50, 2))
    for grid in (False, True):
        a = generate_shadow_field(pts, LAYOUT, rng=np.random.default_rng(7), grid_mode=grid)
        b = generate_shadow_field(pts, LAYOUT, rng=np.random.default_rng(7), grid_mode=grid)
        np.testing.assert_array_equal(a.values, b.values)


def test_dense_limit_enforced():
    pts = np.zeros((11, 2))
    with pytest.raises(ConfigurationError):
        generate_shadow_field(pts, LAYOUT, rng=np.random.default_rng(0), dense_limit=10, grid_mode=False)


def test_dense_factor_reproduces_exponential_correlation():
    pts = np.array([[0.0, 0.0], [25.0, 0.0], [0.0, 50.0]])
    gen = DenseShadowGenerator(pts, LAYOUT, 25.0)
    c = gen.factor @ gen.factor.T
    assert c[0, 1] == pytest.approx(math.exp(-1), abs=1e-12)
    assert c[0, 2] == pytest.approx(math.exp(-2), abs=1e-12)


def test_grid_generator_torus_correlation_at_one_cell():
    gen = GridShadowGenerator(LAYOUT, 25.0)
    spacing = np.linalg.norm(LAYOUT.wrap_vectors[1]) / gen.n
    assert gen.cov[0, 0] == pytest.approx(1.0, abs=1e-9)
    assert gen.cov[1, 0] == pytest.approx(math.exp(-spacing / 25.0), abs=0.01)


def shadow_statistics(grid_mode: bool, seeds: int = 200):
    """Pooled marginal std, 25 m autocorrelation and same-point cross-site correlation."""
    rng = np.random.default_rng(99)
    base = rng.uniform(-800, 800, (40, 2))
    ang = rng.uniform(0, 2 * np.pi, 40)
    pts = np.vstack([base, base + 25.0 * np.column_stack([np.cos(ang), np.sin(ang)])])
    vals = []
    for seed in range(seeds):
        f = generate_shadow_field(pts, LAYOUT, 7.0, 25.0, np.random.default_rng(seed), 0.5, grid_mode=grid_mode)
        vals.append(f.values)
    v = np.stack(vals)  # (seeds, points, sites)
    std = v.std()
    a, b = v[:, :40, :], v[:, 40:, :]
    auto = np.mean(a * b) / np.sqrt(np.mean(a * a) * np.mean(b * b))
    x, y = v[:, :, 0], v[:, :, 1:]
    cross = np.mean(x[..., None] * y) / np.sqrt(np.mean(x * x) * np.mean(y * y))
    return std, auto, cross


@pytest.mark.parametrize("grid_mode,seeds", [(False, 200), (True, 60)], ids=["dense", "grid"])
def test_shadow_field_statistics(grid_mode, seeds):
    # the acceptance suite repeats the grid case over 200 seeds
    std, auto, cross = shadow_statistics(grid_mode, seeds)
    assert abs(std - 7.0) <= 0.3
    assert abs(auto - math.exp(-1)) <= 0.05
    assert abs(cross - 0.5) <= 0.05


def test_ul_and_dl_share_gains(small_world):
    # one table serves both directions: the serving gain is a single number per UE
    t = small_world.table
    assert t.wan_gain.shape == (small_world.layout.n_ues, 57)
    np.testing.assert_array_equal(t.coupling_loss, -t.wan_gain)
