import math

import numpy as np
import pytest

from nqc import photonic_sim as ps
from nqc.postproc import pipeline

KEYS = (bytes(range(16)), bytes(range(16, 32)))


@pytest.fixture(scope="module")
def session_25km():
    cfg = ps.ChannelConfig(fiber_length=25.0, blocking_time=0.0)
    tx = ps.transmit(1_000_000, (0.1, 0.3, 0.6), 21, cfg)
    det = ps.propagate_detect(tx, cfg, 22)
    return pipeline.run_session(tx, det, cfg, 23, KEYS, session_id="s0")


def test_session_yields_matching_key(session_25km):
    res = session_25km
    assert res.metrics.status == "ok"
    assert res.metrics.final_bits > 0 and res.metrics.final_bits % pipeline.KEY_UNIT == 0
    assert np.array_equal(res.client_key, res.hub_key)
    assert len(res.client_key) == res.metrics.final_bits
    assert 0.0 < res.metrics.qber < 0.05


def test_leakage_tally_matches_transcript(session_25km):
    res = session_25km
    t = res.transcript
    assert res.metrics.leaked_bits == sum(m.bits for m in t.messages if m.key_leak)
    labels = {m.label for m in t.messages if m.key_leak}
    assert {"sample_bits", "syndrome", "check_hash"} <= labels
    # public announcements that carry no key information stay out of the tally
    assert not any(m.key_leak for m in t.messages if m.label in ("detected_slots", "bits_decoy", "toeplitz_seed"))
    assert [m.label for m in t.messages].count("tag") == 2


def test_session_is_deterministic():
    cfg = ps.ChannelConfig(fiber_length=10.0, blocking_time=0.0)
    tx = ps.transmit(300_000, (0.1, 0.3, 0.6), 1, cfg)
    det = ps.propagate_detect(tx, cfg, 2)
    a = pipeline.run_session(tx, det, cfg, 5, KEYS)
    b = pipeline.run_session(tx, det, cfg, 5, KEYS)
    assert a.metrics == b.metrics and np.array_equal(a.client_key, b.client_key)


def test_no_detections_status():
    cfg = ps.ChannelConfig(dark_prob=0.0, mean_photons=(0.0, 0.0, 0.0))
    tx = ps.transmit(1000, (0.1, 0.3, 0.6), 1, cfg)
    res = pipeline.run_session(tx, ps.propagate_detect(tx, cfg, 2), cfg, 3, KEYS)
    assert res.metrics.status == "no_detections" and len(res.client_key) == 0


def test_short_session_gives_no_key():
    cfg = ps.ChannelConfig(fiber_length=25.0)
    tx = ps.transmit(20_000, (0.1, 0.3, 0.6), 1, cfg)
    res = pipeline.run_session(tx, ps.propagate_detect(tx, cfg, 2), cfg, 3, KEYS)
    assert res.metrics.status in ("too_few_bits", "no_key", "insufficient_decoy_statistics")
    assert res.metrics.final_bits == 0


def test_high_error_aborts():
    cfg = ps.ChannelConfig(fiber_length=0.0, intrinsic_error=0.2, blocking_time=0.0)
    tx = ps.transmit(200_000, (0.1, 0.3, 0.6), 1, cfg)
    res = pipeline.run_session(tx, ps.propagate_detect(tx, cfg, 2), cfg, 3, KEYS)
    assert res.metrics.status == "qber_abort"


def test_split_frames():
    assert pipeline.split_frames(0) == []
    assert pipeline.split_frames(4999) == []
    assert pipeline.split_frames(5000) == [5000]
    assert pipeline.split_frames(27_000) == [10000, 10000, 5000]
    assert sum(pipeline.split_frames(123_456)) == 120_000


def test_design_qber():
    assert pipeline.design_qber(0.03, 1000) == pytest.approx(0.03 + 2 * math.sqrt(0.03 * 0.97 / 1000))
    # a zero estimate still gets a margin
    assert pipeline.design_qber(0.0, 1000) > 0.0


def test_metrics_csv_has_header_and_rows(session_25km):
    text = pipeline.metrics_csv([session_25km.metrics])
    header, row = text.strip().split("\n")
    assert header.split(",") == list(pipeline.SessionMetrics.FIELDS)
    assert row.startswith("s0,1000000,")
    assert pipeline.metrics_dict(session_25km.metrics)["status"] == "ok"
