import numpy as np
import pytest
from scipy import sparse

from nqc._util import binary_entropy, rng
from nqc.postproc import ldpc, reconcile
from nqc.postproc.sifting import SiftedBlock


def _block(client, hub):
    n = len(client)
    return SiftedBlock(client, hub, np.arange(n), np.full(n, 2, np.uint8))


def _noisy(n, ber, seed):
    g = rng(seed)
    client = g.integers(0, 2, n, dtype=np.uint8)
    return client, client ^ (g.random(n) < ber).astype(np.uint8)


def test_construction_is_deterministic_and_sized():
    a = ldpc.parity_check(2000, 0.5)
    ldpc.parity_check.cache_clear()
    b = ldpc.parity_check(2000, 0.5)
    assert a is not b
    assert np.array_equal(a.rows, b.rows) and np.array_equal(a.cols, b.cols)
    assert (a.m, a.n) == (1000, 2000)


@pytest.mark.parametrize("rate", [0.35, 0.5, 0.75, 0.9])
def test_column_and_check_degrees(rate):
    code = ldpc.parity_check(5000, rate)
    h = sparse.csr_matrix((np.ones(len(code.rows)), (code.rows, code.cols)), shape=(code.m, code.n))
    col_deg = np.asarray(h.sum(axis=0)).ravel()
    row_deg = np.asarray(h.sum(axis=1)).ravel()
    assert np.array_equal(np.sort(col_deg), ldpc.variable_degrees(5000, rate))
    assert row_deg.max() - row_deg.min() <= 3


@pytest.mark.parametrize("rate", [0.35, 0.5])
def test_no_four_cycles_where_attainable(rate):
    # high rates at short length have too few checks to avoid them
    code = ldpc.parity_check(5000, rate)
    h = sparse.csr_matrix((np.ones(len(code.rows)), (code.rows, code.cols)), shape=(code.m, code.n))
    overlap = (h.T @ h).tocoo()
    assert overlap.data[overlap.row != overlap.col].max() == 1


def test_syndrome_matches_dense_product():
    code = ldpc.parity_check(600, 0.5)
    x = rng(1).integers(0, 2, 600, dtype=np.uint8)
    assert np.array_equal(code.syndrome(x), (code.dense().astype(np.int64) @ x) % 2)


def test_irregular_profile_used_from_045():
    assert set(ldpc.variable_degrees(1000, 0.40)) == {3}
    assert ldpc.variable_degrees(1000, 0.50).max() == max(ldpc.IRREGULAR_PROFILE)


def test_choose_rate_is_monotone_and_bounded():
    qs = np.linspace(0, 0.11, 60)
    rates = [ldpc.choose_rate(q) for q in qs]
    assert all(a >= b for a, b in zip(rates, rates[1:]))
    assert ldpc.choose_rate(0.0) == max(ldpc.CODE_RATES)
    assert ldpc.choose_rate(0.3) == min(ldpc.CODE_RATES)
    assert ldpc.choose_rate(0.03, 5000) <= ldpc.choose_rate(0.03, 10000)


def test_zero_error_block_leaks_highest_rate_syndrome():
    x = rng(2).integers(0, 2, 10_000, dtype=np.uint8)
    corrected, leaked = reconcile.reconcile(_block(x, x.copy()), 0.0)
    assert np.array_equal(corrected, x)
    assert leaked == ldpc.syndrome_length(10_000, max(ldpc.CODE_RATES)) + 64


@pytest.mark.parametrize("ber", [0.01, 0.03, 0.06])
def test_leakage_near_capacity(ber):
    client, hub = _noisy(10_000, ber, 3)
    corrected, leaked = reconcile.reconcile(_block(client, hub), ber)
    assert np.array_equal(corrected, client)
    rate = ldpc.choose_rate(ber)
    assert leaked == ldpc.syndrome_length(10_000, rate) + 64
    assert leaked - 64 >= binary_entropy(ber) * 10_000    # never below the Shannon limit


@pytest.mark.slow
def test_ten_percent_success_census():
    ok = 0
    for s in range(100):
        client, hub = _noisy(10_000, 0.10, 100 + s)
        try:
            corrected, _ = reconcile.reconcile(_block(client, hub), 0.10)
            ok += bool(np.array_equal(corrected, client))
        except reconcile.ReconciliationError:
            pass
    assert ok >= 95


def test_failure_discloses_whole_block():
    client, hub = _noisy(5000, 0.08, 4)
    with pytest.raises(reconcile.ReconciliationError) as info:
        reconcile.reconcile(_block(client, hub), 0.005)
    assert info.value.leaked_bits == 5000


def test_hash_mismatch_detected():
    client, hub = _noisy(5000, 0.01, 5)
    msg = reconcile.client_disclosure(client, 0.01)
    forged = msg._replace(check_hash=msg.check_hash ^ 1)
    with pytest.raises(reconcile.ReconciliationError, match="hash"):
        reconcile.hub_correct(hub, forged, 0.01)


def test_hint_range():
    x = np.zeros(1000, np.uint8)
    with pytest.raises(ValueError):
        reconcile.reconcile(_block(x, x), 0.11)
    with pytest.raises(ValueError):
        ldpc.parity_check(4, 0.5)


def test_efficiency_at_three_percent_within_cap():
    rate = ldpc.choose_rate(0.03)
    m = ldpc.syndrome_length(10_000, rate)
    assert ldpc.efficiency(10_000, m, 0.03) <= ldpc.MAX_EFFICIENCY
    assert ldpc.efficiency(10_000, m, 0.0) == float("inf")
