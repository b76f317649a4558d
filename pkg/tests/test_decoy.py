import math

import pytest

from nqc.postproc import decoy
from nqc.postproc.sifting import DecoyStats, LevelCounts

SENT = 10 ** 12   # large counts: fluctuation terms vanish, expectations are fed exactly


def _analytic_stats(eta_t: float, mu=0.5, nu=0.1, y0=0.0, e_det=0.0) -> DecoyStats:
    """Expected counts with Y_n = 1 - (1 - eta_t)^n and error from misalignment only."""
    def level(m):
        q = y0 + 1 - math.exp(-m * eta_t)
        e = (0.5 * y0 + e_det * (1 - math.exp(-m * eta_t))) / q if q else 0.0
        clicked = round(q * SENT)
        return LevelCounts(SENT, clicked, clicked, round(e * clicked), m)
    return DecoyStats(level(0.0), level(nu), level(mu))


def test_noiseless_analytic_y1_within_ten_percent():
    b = decoy.decoy_bounds(_analytic_stats(0.015), n_sigma=0)
    assert b.y1_lower <= 0.015
    assert b.y1_lower >= 0.9 * 0.015
    assert b.q1_lower == pytest.approx(b.y1_lower * 0.5 * math.exp(-0.5))
    assert not b.degenerate


def test_vacuum_without_clicks_is_well_defined():
    stats = _analytic_stats(0.01)
    assert stats.vacuum.clicked == 0
    b = decoy.decoy_bounds(stats)
    assert 0 < b.y1_lower <= 0.01 and 0 <= b.e1_upper <= 0.5


def test_e1_upper_at_least_signal_qber_for_single_photon_errors():
    # tiny decoy intensities: nearly every click is a single photon
    stats = _analytic_stats(0.05, mu=0.02, nu=0.01, e_det=0.03)
    b = decoy.decoy_bounds(stats, n_sigma=0)
    assert b.e1_upper >= stats.error_rate("signal") * (1 - 1e-9)


def test_bounds_are_clamped_and_degenerate_flagged():
    # decoy gain far too low for the signal gain: implied Y1 < 0
    stats = DecoyStats(LevelCounts(1000, 0, 0, 0, 0.0), LevelCounts(1000, 1, 1, 0, 0.1),
                       LevelCounts(1000, 900, 900, 0, 0.5))
    b = decoy.decoy_bounds(stats)
    assert b.degenerate and b.y1_lower == 0.0 and b.e1_upper == 0.5 and b.q1_lower == 0.0


def test_requires_ordered_intensities_and_counts():
    with pytest.raises(ValueError):
        decoy.decoy_bounds(DecoyStats(LevelCounts(10, 0, 0, 0, 0.0), LevelCounts(10, 1, 1, 0, 0.5),
                                      LevelCounts(10, 1, 1, 0, 0.1)))
    with pytest.raises(ValueError):
        decoy.decoy_bounds(DecoyStats(LevelCounts(10, 0, 0, 0, 0.0), LevelCounts(10, 0, 0, 0, 0.1),
                                      LevelCounts(10, 1, 1, 0, 0.5)))


def test_fluctuation_margin_is_conservative():
    stats = _analytic_stats(0.02, y0=1e-5, e_det=0.01)
    small = DecoyStats(*(LevelCounts(10 ** 6, round(c.clicked / SENT * 10 ** 6), round(c.sifted / SENT * 10 ** 6),
                                     round(c.errors / SENT * 10 ** 6), c.mu)
                         for c in (stats.vacuum, stats.decoy, stats.signal)))
    loose = decoy.decoy_bounds(small, n_sigma=3)
    tight = decoy.decoy_bounds(small, n_sigma=0)
    assert loose.y1_lower < tight.y1_lower and loose.e1_upper > tight.e1_upper


def test_final_key_length_cases():
    assert decoy.final_key_length(10_000, 0.01, 0.5, 0) == 0
    assert decoy.final_key_length(10_000, 0.01, 0.02, 10_000, q_signal=0.02) == 0
    n, q1, e1, leak, qs = 100_000, 0.01, 0.03, 20_000, 0.02
    h = -e1 * math.log2(e1) - (1 - e1) * math.log2(1 - e1)
    assert decoy.final_key_length(n, q1, e1, leak, 64, qs) == math.floor(n * (q1 / qs) * (1 - h) - leak - 64)
    assert decoy.final_key_length(0, q1, e1, 0) == 0
