import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import oracles
from nqc import photonic_sim as ps
from nqc._util import ConfigurationError


def test_transmittance_matches_oracle():
    cfg = ps.ChannelConfig(fiber_length=50.0)
    assert ps.link_transmittance(cfg) == pytest.approx(oracles.transmittance(50.0, 0.2, 0.15), rel=1e-12)


def test_zero_length_fiber_is_detector_efficiency():
    assert ps.link_transmittance(ps.ChannelConfig(fiber_length=0.0)) == pytest.approx(0.15)


@pytest.mark.parametrize("field,value", [
    ("intrinsic_error", 1.5), ("dark_prob", -1e-3), ("fiber_length", -1.0), ("duty_cycle", 0.0),
    ("mean_photons", (0.1, 0.1, 0.5)), ("mean_photons", (0.0, 0.5)), ("double_click", "keep"),
])
def test_config_rejects_bad_values(field, value):
    with pytest.raises(ConfigurationError):
        ps.ChannelConfig(**{field: value})


def test_slot_grid():
    cfg = ps.ChannelConfig()
    assert cfg.pulse_period_slots == 100
    assert cfg.superframe_slots == 1_000_000
    assert cfg.pulses_per_superframe == 2000
    assert cfg.blocking_slots == 50_000
    slots = ps.pulse_slots(cfg, 4001)
    assert slots[1999] == 1999 * 100
    assert slots[2000] == 1_000_000
    assert slots[4000] == 2_000_000


def test_transmit_is_seeded():
    a = ps.transmit(1000, (0.1, 0.3, 0.6), 5)
    b = ps.transmit(1000, (0.1, 0.3, 0.6), 5)
    c = ps.transmit(1000, (0.1, 0.3, 0.6), 6)
    assert np.array_equal(a.level, b.level) and np.array_equal(a.bit, b.bit)
    assert not np.array_equal(a.bit, c.bit)


def test_transmit_level_frequencies():
    tx = ps.transmit(200_000, (0.1, 0.3, 0.6), 1)
    freq = np.bincount(tx.level, minlength=3) / len(tx)
    for f, w in zip(freq, (0.1, 0.3, 0.6)):
        assert abs(f - w) < 4 * math.sqrt(w * (1 - w) / len(tx))
    assert abs(tx.basis.mean() - 0.5) < 0.01 and abs(tx.bit.mean() - 0.5) < 0.01


def test_transmit_record_view():
    tx = ps.transmit(3, (0.0, 0.0, 1.0), 1)
    rec = tx[1]
    assert rec.decoy_level == ps.DecoyLevel.SIGNAL and rec.mean_photons == 0.5
    assert rec.slot == 100


def test_transmit_rejects_bad_weights_and_slots():
    with pytest.raises(ConfigurationError):
        ps.transmit(10, (0.5, 0.5, 0.5), 1)
    with pytest.raises(ConfigurationError):
        ps.transmit(3, (0, 0, 1), 1, slots=np.array([5, 5, 9]))
    with pytest.raises(ConfigurationError):
        ps.transmit(0, (0, 0, 1), 1)


def test_routing_weights_are_distributions():
    w = ps.routing_weights(0.03)
    assert np.allclose(w.sum(axis=1), 1.0)
    assert w[0, 0] == pytest.approx(0.485) and w[0, 1] == pytest.approx(0.015)
    assert w[3, 0] == pytest.approx(0.25)


def test_click_probability_against_oracle():
    cfg = ps.ChannelConfig(fiber_length=50.0)
    exact = 1 - (1 - 1e-5) ** 4 * math.exp(-0.5 * ps.link_transmittance(cfg))
    assert ps.click_probability(cfg, 0.5) == pytest.approx(exact, rel=1e-12)
    # first-order form used by the acceptance oracle differs by O(dark^2)
    assert abs(exact - oracles.click_fraction(0.5, 50.0, 0.2, 0.15, 1e-5)) < 1e-9


def test_armed_mask_window_edges():
    slots = np.array([0, 100, 149, 150, 151, 400])
    armed = ps.armed_mask(slots, np.array([100]), blocking_slots=50)
    assert armed.tolist() == [True, True, False, False, True, True]
    assert ps.armed_mask(slots, np.array([100]), 50, blocked_until=149).tolist() == \
        [False, False, False, False, True, True]


def _gaps_ok(det, blocking):
    s = np.unique(det.slot)
    return len(s) < 2 or np.diff(s).min() > blocking


def test_detections_respect_blocking_and_pulse_slots():
    cfg = ps.ChannelConfig(fiber_length=10.0)
    tx = ps.transmit(200_000, (0.1, 0.3, 0.6), 3, cfg)
    det = ps.propagate_detect(tx, cfg, 4)
    assert len(det) > 0
    assert _gaps_ok(det, cfg.blocking_slots)
    assert np.isin(det.slot, tx.slot).all()


def test_no_photons_no_darks_means_no_clicks():
    cfg = ps.ChannelConfig(dark_prob=0.0, mean_photons=(0.0, 0.0, 0.0))
    tx = ps.transmit(10_000, (0.1, 0.3, 0.6), 1, cfg)
    assert len(ps.propagate_detect(tx, cfg, 2)) == 0


def test_vacuum_only_gives_dark_clicks_at_dark_rate():
    cfg = ps.ChannelConfig(dark_prob=1e-3, blocking_time=0.0)
    tx = ps.transmit(400_000, (1.0, 0.0, 0.0), 1, cfg)
    det = ps.propagate_detect(tx, cfg, 2)
    assert (det.cause == ps.Cause.DARK).all()
    p = 1 - (1 - 1e-3) ** 4
    assert abs(len(det) / len(tx) - p) < 4 * math.sqrt(p * (1 - p) / len(tx))


def test_perfect_channel_never_errs_in_matching_basis():
    cfg = ps.ChannelConfig(fiber_length=0.0, intrinsic_error=0.0, dark_prob=0.0, blocking_time=0.0,
                           mean_photons=(0.0, 0.01, 0.02))
    tx = ps.transmit(200_000, (0.0, 0.0, 1.0), 1, cfg)
    det = ps.propagate_detect(tx, cfg, 2)
    pos = np.searchsorted(tx.slot, det.slot)
    match = tx.basis[pos] == det.detector // 2
    assert match.any()
    assert np.array_equal(tx.bit[pos][match], (det.detector % 2)[match])


def test_blocked_until_carries_over():
    cfg = ps.ChannelConfig(fiber_length=0.0, dark_prob=0.0)
    tx = ps.transmit(5000, (0, 0, 1), 1, cfg)
    det = ps.propagate_detect(tx, cfg, 2, blocked_until=int(tx.slot[2500]))
    assert (det.slot > tx.slot[2500]).all()


def test_discard_policy_reports_every_fired_detector():
    cfg = ps.ChannelConfig(fiber_length=0.0, dark_prob=0.05, blocking_time=0.0, double_click="discard")
    tx = ps.transmit(20_000, (0, 0, 1), 1, cfg)
    det = ps.propagate_detect(tx, cfg, 2)
    _, counts = np.unique(det.slot, return_counts=True)
    assert counts.max() > 1


def test_shared_receiver_single_sender_equals_propagate():
    cfg = ps.ChannelConfig(fiber_length=25.0)
    tx = ps.transmit(100_000, (0.1, 0.3, 0.6), 1, cfg)
    a = ps.propagate_detect(tx, cfg, 9)
    (b,) = ps.propagate_shared([tx], [cfg], [9])
    assert np.array_equal(a.slot, b.slot) and np.array_equal(a.detector, b.detector)


def test_shared_receiver_blocks_across_senders():
    cfg = ps.ChannelConfig(fiber_length=0.0)
    per = cfg.pulse_period_slots
    n = 50_000
    k = np.arange(n, dtype=np.int64)
    tx1 = ps.transmit(n, (0, 0, 1), 1, cfg, slots=2 * k * per)
    tx2 = ps.transmit(n, (0, 0, 1), 2, cfg, slots=(2 * k + 1) * per)
    d1, d2 = ps.propagate_shared([tx1, tx2], [cfg, cfg], [3, 4])
    merged = ps.DetectionRecords.concat([d1, d2])
    assert len(d1) and len(d2)
    assert _gaps_ok(merged, cfg.blocking_slots)
    assert np.isin(d1.slot, tx1.slot).all() and np.isin(d2.slot, tx2.slot).all()


def test_shared_receiver_needs_one_blocking_time():
    a, b = ps.ChannelConfig(), ps.ChannelConfig(blocking_time=10.0)
    tx = ps.transmit(10, (0, 0, 1), 1, a)
    with pytest.raises(ConfigurationError):
        ps.propagate_shared([tx, tx], [a, b], [1, 2])


@settings(max_examples=25, deadline=None)
@given(seed=st.integers(0, 2 ** 32), fiber=st.floats(0.0, 80.0), blocking=st.floats(0.0, 60.0))
def test_blocking_invariant_property(seed, fiber, blocking):
    cfg = ps.ChannelConfig(fiber_length=fiber, blocking_time=blocking, dark_prob=1e-4)
    tx = ps.transmit(20_000, (0.1, 0.3, 0.6), seed, cfg)
    det = ps.propagate_detect(tx, cfg, seed + 1)
    assert _gaps_ok(det, cfg.blocking_slots)
    assert np.all(np.diff(det.slot) >= 0)
    assert det.detector.max(initial=0) <= 3
