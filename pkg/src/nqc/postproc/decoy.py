"""Vacuum + weak-decoy bounds on single-photon statistics and the key-length formula."""
from __future__ import annotations

import math
from typing import NamedTuple

from .._util import binary_entropy
from .sifting import DecoyStats

DEFAULT_N_SIGMA = 3.0
EPS_MARGIN_BITS = 64


class DecoyBounds(NamedTuple):
    y1_lower: float
    e1_upper: float
    q1_lower: float
    degenerate: bool = False


def _fluct(events: float, n_sigma: float) -> float:
    """Relative Gaussian fluctuation of a rate estimated from ``events`` counts."""
    if n_sigma == 0 or events <= 0:
        return 0.0
    return n_sigma / math.sqrt(events)


def decoy_bounds(stats: DecoyStats, n_sigma: float = DEFAULT_N_SIGMA) -> DecoyBounds:
    """Lower Y1 / Q1 and upper e1 from vacuum, weak-decoy and signal gains.

    Each observed gain is shifted ``n_sigma`` standard deviations in the
    conservative direction before entering the asymptotic bounds, then the
    results are clamped (Y1, Q1 to [0, 1], e1 to [0, 0.5]). A negative raw
    Y1 marks the result degenerate rather than raising.
    """
    mu, nu = stats.signal.mu, stats.decoy.mu
    if not mu > nu > 0:
        raise ValueError(f"need mu_signal > mu_decoy > 0, got {mu}, {nu}")
    if stats.signal.sent == 0 or stats.decoy.sent == 0 or stats.signal.clicked == 0 or stats.decoy.clicked == 0:
        raise ValueError("signal and decoy levels need nonzero counts")

    q_mu = stats.gain("signal")
    q_nu = stats.gain("decoy")
    y0 = stats.gain("vacuum")
    q_mu_u = q_mu * (1 + _fluct(stats.signal.clicked, n_sigma))
    q_nu_l = q_nu * (1 - _fluct(stats.decoy.clicked, n_sigma))
    y0_u = y0 * (1 + _fluct(stats.vacuum.clicked, n_sigma))
    y0_l = max(0.0, y0 * (1 - _fluct(stats.vacuum.clicked, n_sigma)))

    y1 = mu / (mu * nu - nu * nu) * (
        q_nu_l * math.exp(nu)
        - q_mu_u * math.exp(mu) * nu * nu / (mu * mu)
        - (mu * mu - nu * nu) / (mu * mu) * y0_u
    )
    degenerate = y1 <= 0
    y1 = min(max(y1, 0.0), 1.0)

    errors = stats.decoy.errors
    if n_sigma and errors:
        errors_u = errors + n_sigma * math.sqrt(errors)
    elif n_sigma:
        errors_u = n_sigma * n_sigma  # nothing observed: allow n_sigma^2 events
    else:
        errors_u = errors
    eq_nu_u = errors_u / max(stats.decoy.sifted, 1) * q_nu
    if y1 > 0:
        e1 = (eq_nu_u * math.exp(nu) - 0.5 * y0_l) / (y1 * nu)
    else:
        e1 = 0.5
    e1 = min(max(e1, 0.0), 0.5)
    q1 = min(max(y1 * mu * math.exp(-mu), 0.0), 1.0)
    return DecoyBounds(y1, e1, q1, degenerate)


def final_key_length(n_sig: int, q1_lower: float, e1_upper: float, leaked_bits: int,
                     eps_exponent: int = EPS_MARGIN_BITS, q_signal: float = 1.0) -> int:
    """max(0, floor(n_sig * (Q1 / Q_mu) * (1 - H2(e1)) - leaked - eps))."""
    if q_signal <= 0 or n_sig <= 0:
        return 0
    single_fraction = min(q1_lower / q_signal, 1.0)
    raw = n_sig * single_fraction * (1.0 - binary_entropy(e1_upper)) - leaked_bits - eps_exponent
    return max(0, math.floor(raw))
