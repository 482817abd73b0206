import math

import mpmath
import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from risfbl.channels import RisState
from risfbl.metrics import (
    EnergyParams,
    FblParams,
    LOG2E,
    dispersion,
    dispersion_optimal,
    fbl_rate,
    fbl_rate_nats,
    gee,
    latency_threshold,
    lemma2_analysis,
    per_user_ee,
    q_inv,
    rate_report,
    shannon_rate,
    sinr,
)

mpmath.mp.dps = 50


def q_inv_reference(eps):
    # 50-digit oracle: Q(x) = eps  <=>  x = sqrt(2) * erfinv(1 - 2 eps)
    return float(mpmath.sqrt(2) * mpmath.erfinv(1 - 2 * mpmath.mpf(eps)))


def test_q_inv_against_high_precision():
    points = np.logspace(-9, np.log10(0.49), 20)
    for eps in points:
        ref = q_inv_reference(eps)
        assert abs(q_inv(float(eps)) - ref) <= 1e-10 * abs(ref)


def test_q_inv_domain():
    assert q_inv(0.5) == 0.0
    with pytest.raises(ValueError):
        q_inv(0.0)
    with pytest.raises(ValueError):
        q_inv(1.0)


def test_dispersion_values():
    assert dispersion(0.0) == 0.0
    assert dispersion(1.0) == 1.0
    with pytest.raises(ValueError):
        dispersion(-0.1)


def test_dispersion_dominates_optimal_on_log_grid():
    grid = np.logspace(-6, 6, 1000)
    assert np.all(dispersion(grid) >= dispersion_optimal(grid))


def test_fbl_rate_limits():
    fbl = FblParams(n_t=200, eps_c=1e-3)
    assert fbl_rate(0.0, fbl) == 0.0
    shan = FblParams.shannon()
    grid = np.logspace(-3, 2, 50)
    assert np.allclose(fbl_rate(grid, shan), shannon_rate(grid))
    assert np.all(fbl_rate(grid, fbl) <= shannon_rate(grid))


def test_fbl_rate_root_matches_curve_analysis():
    # independent bisection on the rate itself must find the same zero
    fbl = FblParams(n_t=200, eps_c=1e-3)
    analysis = lemma2_analysis(fbl.penalty_a)
    lo, hi = analysis.gamma_star, 10.0
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if fbl_rate(mid, fbl) < 0:
            lo = mid
        else:
            hi = mid
    assert abs(0.5 * (lo + hi) - analysis.gamma_zero) <= 1e-8


def test_lemma2_reported_shape():
    analysis = lemma2_analysis(0.2185)
    assert analysis.f_min < 0
    assert 0 < analysis.gamma_star < analysis.gamma_zero
    assert analysis.curve(0.0) == 0.0
    assert abs(analysis.curve(analysis.gamma_zero)) <= 1e-10
    # closed form for the minimizer: positive root of g^2 + g - a^2/4
    a = 0.2185
    root = (-1 + math.sqrt(1 + a * a)) / 2
    assert abs(analysis.gamma_star - root) <= 1e-14
    # finite-difference sign change of the slope at the minimizer
    h = 1e-6
    left = analysis.curve(analysis.gamma_star) - analysis.curve(analysis.gamma_star - h)
    right = analysis.curve(analysis.gamma_star + h) - analysis.curve(analysis.gamma_star)
    assert left < 0 < right


def test_lemma2_vanishing_penalty():
    assert lemma2_analysis(1e-8).gamma_zero < 1e-6
    with pytest.raises(ValueError):
        lemma2_analysis(0.0)


def test_lemma2_monotone_segments():
    analysis = lemma2_analysis(0.2185)
    grid = np.linspace(0.0, 4 * analysis.gamma_zero, 1000)
    vals = analysis.curve(grid)
    star_idx = np.searchsorted(grid, analysis.gamma_star)
    assert np.all(np.diff(vals[: star_idx - 1]) < 0)
    assert np.all(np.diff(vals[star_idx + 1 :]) > 0)


@settings(max_examples=200, deadline=None)
@given(
    gamma=st.floats(1e-6, 1e4),
    eps=st.floats(1e-8, 0.4999),
    n_t=st.floats(10.0, 1e5),
)
def test_rate_below_shannon_property(gamma, eps, n_t):
    fbl = FblParams(n_t=n_t, eps_c=eps)
    assert fbl_rate(gamma, fbl) <= shannon_rate(gamma) + 1e-12


@settings(max_examples=100, deadline=None)
@given(gamma=st.floats(1e-4, 1e3), n_t=st.floats(50.0, 1e4))
def test_rate_monotone_in_eps(gamma, n_t):
    epss = [1e-7, 1e-5, 1e-3, 1e-1, 0.4]
    vals = [fbl_rate(gamma, FblParams(n_t=n_t, eps_c=e)) for e in epss]
    assert np.all(np.diff(vals) >= -1e-12)


@settings(max_examples=100, deadline=None)
@given(gamma=st.floats(1e-4, 1e3), eps=st.floats(1e-7, 0.4999))
def test_rate_monotone_in_packet_length(gamma, eps):
    nts = [50.0, 100.0, 400.0, 1600.0]
    vals = [fbl_rate(gamma, FblParams(n_t=n, eps_c=eps)) for n in nts]
    assert np.all(np.diff(vals) >= -1e-12)


def test_per_user_ee_and_gee():
    en = EnergyParams(p_c=2.0, eta=3.0)
    assert per_user_ee(1.5, np.zeros(4, complex), en) == 1.5 / 2.0
    # identical users: network ratio equals every per-user ratio
    x = np.full((1, 2, 3), 0.4 + 0.2j)
    rates = np.array([[0.8, 0.8]])
    g = gee(rates, x, en)
    e_each = per_user_ee(0.8, x[0, 0], en)
    assert abs(g - e_each) <= 1e-12
    # asymmetric pair: the ratio of sums sits between the per-user ratios
    x2 = np.zeros((1, 2, 2), complex)
    x2[0, 0, 0] = 1.0
    x2[0, 1, 0] = 0.1
    rates2 = np.array([[1.0, 0.3]])
    g2 = gee(rates2, x2, en)
    e0 = per_user_ee(1.0, x2[0, 0], en)
    e1 = per_user_ee(0.3, x2[0, 1], en)
    assert min(e0, e1) <= g2 <= max(e0, e1)


def test_latency_threshold():
    assert latency_threshold(256, 1e-3, 256e3) == 1.0
    assert latency_threshold(256, 1e-3, 512e3) == 0.5
    assert latency_threshold(200, 1e-4, 1e6) == 2.0
    with pytest.raises(ValueError):
        latency_threshold(0, 1e-3, 1e6)


def test_sinr_no_interference(small_system):
    top, ch, ris, beams = small_system
    # single active beam: its user sees pure SNR
    x = np.zeros_like(beams.x)
    x[0, 0] = beams.x[0, 0]
    from risfbl.channels import effective_channel

    h = effective_channel(ch, ris, 0, 0, 0)
    expect = abs(np.dot(h, x[0, 0])) ** 2 / top.noise_power
    got = sinr(ch, ris, x, 0, 0, top.noise_power)
    assert abs(got - expect) <= 1e-12 * expect
    x[0, 0] = 0.0
    assert sinr(ch, ris, x, 0, 0, top.noise_power) == 0.0


def test_sinr_two_user_scalar_oracle(small_system):
    top, ch, ris, beams = small_system
    from risfbl.channels import effective_channel

    l, k = 1, 0
    num = abs(np.dot(effective_channel(ch, ris, l, k, l), beams.x[l, k])) ** 2
    den = top.noise_power
    for i in range(top.L):
        for j in range(top.K):
            if (i, j) == (l, k):
                continue
            den += abs(np.dot(effective_channel(ch, ris, l, k, i), beams.x[i, j])) ** 2
    expect = num / den
    got = sinr(ch, ris, beams.x, l, k, top.noise_power)
    assert abs(got - expect) <= 1e-12 * expect


def test_rate_report_invariants(small_system):
    top, ch, ris, beams = small_system
    fbl = FblParams(n_t=200, eps_c=1e-3)
    rep = rate_report(ch, ris, beams.x, top.noise_power, fbl, EnergyParams())
    rep.validate()
    assert rep.r.shape == (top.L, top.K)
    assert np.all(rep.r <= rep.C)


def test_rate_report_time_switching_scaling():
    from risfbl.channels import generate_channels
    from risfbl.topology import PropagationParams, geometric_user_sides, single_cell_edge_topology
    from tests.conftest import mrt_beams

    top = single_cell_edge_topology(K=2, n_bs=3, n_ris=4)
    ch = generate_channels(top, PropagationParams(), seed=4)
    sides = geometric_user_sides(top)
    fbl = FblParams(n_t=200, eps_c=1e-3)
    en = EnergyParams()

    ts = RisState.star_init(1, 4, "TSI", "ts", sides, ts_fraction=0.5)
    beams = mrt_beams(ch, ts, top)
    rep = rate_report(ch, ts, beams.x, top.noise_power, fbl, en)
    # sub-slot users see no cross-slot interference and half the air time
    full = RisState.star_init(1, 4, "TSI", "ts", sides, ts_fraction=1.0)
    rep_full = rate_report(ch, full, beams.x, top.noise_power, fbl, en)
    assert np.allclose(rep.r[0, 0], 0.5 * rep_full.r[0, 0])
    assert rep_full.r[0, 1] == 0.0  # transmission-space user gets no air time at fraction 1
    rep.validate()
