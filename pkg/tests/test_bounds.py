import math

import pytest
from hypothesis import assume, given, settings, strategies as st

from fedsim.bounds import (
    BoundDomainError,
    BoundParams,
    bound_terms,
    tuned_rate,
    tuned_rate_terms,
    dominant_term,
    k_saturation,
    pfl_bound,
    polylog_factor,
    sfl_bound,
    tuned_eta_tilde,
)
from fedsim.objectives import heterogeneity, preset

SC, GC, NC = "strongly_convex", "general_convex", "non_convex"


def test_strongly_convex_plug_in():
    p = BoundParams(mu=1, L=1, D=1, eta_tilde=1 / 6, R=12)
    assert sfl_bound(p, SC) == pytest.approx(4.5 * math.exp(-1), rel=1e-15)
    assert sfl_bound(p, SC) == pytest.approx(1.6554, abs=1e-4)


def test_full_participation_sampling_term_vanishes():
    p = BoundParams(mu=1, L=1, D=1, sigma=1, zeta_star_sq=4, M=5, S=5, K=2, R=100, eta_tilde=0.1)
    for algo in ("sfl", "pfl"):
        assert bound_terms(p, algo, SC, "partial")["sampling"] == 0.0


def test_general_convex_optimisation_term_only():
    p = BoundParams(L=1, D=2, eta_tilde=0.1, R=50, M=3)
    assert sfl_bound(p, GC) == 3 * 4 / (0.1 * 50)
    assert pfl_bound(p, GC) == sfl_bound(p, GC)


def test_pfl_strongly_convex_terms_by_hand():
    p = BoundParams(mu=0.5, L=2, D=1.5, sigma=0.7, zeta_star_sq=2.0, M=4, K=3, R=400, eta_tilde=0.05)
    e, s2 = 0.05, 0.49
    want = 4.5 * 0.5 * 2.25 * math.exp(-0.5 * e * 400 / 2) + 12 * e * s2 / 12 + 18 * 2 * e**2 * s2 / 3 \
        + 12 * 2 * e**2 * 2.0
    assert pfl_bound(p, SC) == pytest.approx(want, rel=1e-14)


def test_non_convex_terms_by_hand():
    p = BoundParams(L=2, sigma=1.0, zeta_sq=3.0, beta_sq=1.0, M=4, K=2, R=100, eta_tilde=0.02, A=5.0)
    e = 0.02
    sfl = 3 * 5 / (e * 100) + 3 * 2 * e / 8 + 27 * 4 * e**2 / (8 * 8) + 27 * 4 * e**2 * 3 / (8 * 4)
    pfl = 3 * 5 / (e * 100) + 3 * 2 * e / 8 + 27 * 4 * e**2 / (8 * 2) + 2.25 * 4 * e**2 * 3
    assert sfl_bound(p, NC) == pytest.approx(sfl, rel=1e-14)
    assert pfl_bound(p, NC) == pytest.approx(pfl, rel=1e-14)


def test_ratio_of_drift_terms():
    for M in (2, 3, 7, 100):
        p = BoundParams(mu=1, L=1, D=1, sigma=1.3, zeta_star_sq=2.5, M=M, K=4, R=50, eta_tilde=0.1)
        s, q = bound_terms(p, "sfl", SC), bound_terms(p, "pfl", SC)
        assert s["noise_drift"] / q["noise_drift"] == pytest.approx(1 / M, rel=1e-14)
        assert s["heterogeneity_drift"] / q["heterogeneity_drift"] == pytest.approx(1.5 / M, rel=1e-14)
        assert s["optimization"] == q["optimization"] and s["noise"] == q["noise"]
        assert sfl_bound(p, SC) <= pfl_bound(p, SC)


def test_bounds_coincide_without_noise_and_heterogeneity():
    p = BoundParams(mu=1, L=2, D=3, M=4, K=2, R=30, eta_tilde=1 / 12)
    assert sfl_bound(p, SC) == pfl_bound(p, SC)


def test_single_client_has_no_heterogeneity_gap():
    rep = heterogeneity(preset("group1").__class__((preset("group2").clients[0],)))
    assert rep.zeta_star_sq == 0.0
    p = BoundParams.from_report(rep, M=1, K=3, R=100, D=1, sigma=0.5, eta_tilde=1 / 6)
    s, q = bound_terms(p, "sfl", SC), bound_terms(p, "pfl", SC)
    assert s["heterogeneity_drift"] == q["heterogeneity_drift"] == 0.0
    assert sfl_bound(p, SC) == pfl_bound(p, SC)


def test_domain_errors():
    with pytest.raises(BoundDomainError):
        sfl_bound(BoundParams(mu=0, L=1, D=1, eta_tilde=0.1, R=100), SC)
    with pytest.raises(BoundDomainError):
        sfl_bound(BoundParams(mu=1, L=1, D=1, eta_tilde=0.5, R=100), SC)
    with pytest.raises(BoundDomainError):
        sfl_bound(BoundParams(mu=1, L=1, D=1, eta_tilde=0.1, R=5), SC)  # eta < 1/(mu R)
    with pytest.raises(BoundDomainError):
        pfl_bound(BoundParams(L=1, beta_sq=4, A=1, eta_tilde=0.1, R=10), NC)  # > 1/(6L(beta+1))
    with pytest.raises(BoundDomainError):
        sfl_bound(BoundParams(mu=0.5, L=1, D=1, eta_tilde=0.1, R=100, clients_convex=False), SC)
    with pytest.raises(BoundDomainError):
        BoundParams(mu=2, L=1)
    with pytest.raises(BoundDomainError):
        BoundParams(M=2, S=3)
    # the same values pass once the check is waived
    assert sfl_bound(BoundParams(mu=1, L=1, D=1, eta_tilde=0.1, R=5), SC, check=False) > 0


def test_nonconvex_bound_allowed_for_nonconvex_clients():
    p = BoundParams(L=1, A=1, eta_tilde=0.1, R=10, clients_convex=False)
    assert sfl_bound(p, NC) > 0


params = st.builds(
    BoundParams,
    mu=st.floats(0.01, 1.0),
    L=st.just(1.0),
    sigma=st.floats(0, 5),
    zeta_star_sq=st.floats(0, 10),
    beta_sq=st.floats(0, 4),
    zeta_sq=st.floats(0, 10),
    M=st.integers(2, 50),
    K=st.integers(1, 20),
    R=st.integers(100, 5000),
    eta_tilde=st.floats(1e-3, 1 / 18),
    D=st.floats(0, 10),
    A=st.floats(0, 10),
)


@settings(max_examples=200, deadline=None)
@given(p=params, case=st.sampled_from([SC, GC, NC]), algo=st.sampled_from(["sfl", "pfl"]))
def test_bounds_nonnegative_and_monotone(p, case, algo):
    assume(p.eta_tilde * p.mu * p.R >= 1)
    ev = lambda q: (sfl_bound if algo == "sfl" else pfl_bound)(q, case, check=False)
    base = ev(p)
    assert base >= 0
    for field, factor in (("sigma", 2.0), ("zeta_star_sq", 2.0), ("zeta_sq", 2.0), ("D", 2.0), ("A", 2.0)):
        bigger = p.with_(**{field: getattr(p, field) * factor + 0.1})
        assert ev(bigger) >= base
    opt = bound_terms(p, algo, case, check=False)["optimization"]
    assert bound_terms(p.with_(R=p.R * 2), algo, case, check=False)["optimization"] <= opt


@settings(max_examples=200, deadline=None)
@given(p=params, algo=st.sampled_from(["sfl", "pfl"]), case=st.sampled_from([SC, GC, NC]))
def test_partial_collapses_at_full_participation(p, algo, case):
    q = p.with_(S=p.M)
    assert bound_terms(q, algo, case, "partial", check=False) == bound_terms(q, algo, case, "full", check=False)
    assert tuned_rate_terms(q, algo, case, "partial") == tuned_rate_terms(q, algo, case, "full")


@settings(max_examples=100, deadline=None)
@given(p=params, data=st.data())
def test_partial_participation_only_adds_error(p, data):
    S = data.draw(st.integers(1, p.M))
    part = bound_terms(p.with_(S=S), "sfl", SC, "partial", check=False)
    full = bound_terms(p, "sfl", SC, "full", check=False)
    assert sum(part.values()) >= sum(full.values()) * (1 - 1e-12)


def test_sampling_term_values():
    p = BoundParams(mu=1, L=1, D=1, zeta_star_sq=3.0, M=10, S=4, K=1, R=100, eta_tilde=0.1)
    want = 12 * 0.1 * (10 - 4) / (4 * 9) * 3.0
    assert bound_terms(p, "sfl", SC, "partial")["sampling"] == pytest.approx(want, rel=1e-14)
    assert bound_terms(p, "pfl", SC, "partial")["sampling"] == pytest.approx(want, rel=1e-14)


def test_tuned_rate_leading_term_quarters():
    p = BoundParams(mu=1, L=1, D=1, sigma=1, M=2, K=5, R=1000)
    a = tuned_rate_terms(p, "sfl", SC)["noise"]
    b = tuned_rate_terms(p.with_(R=4000), "sfl", SC)["noise"]
    assert a == 1 / (1 * 2 * 5 * 1000)
    assert a / b == 4.0


def test_general_convex_leading_term_unit():
    p = BoundParams(L=1, D=1, sigma=1, M=1, K=1, R=1)
    assert tuned_rate_terms(p, "sfl", GC)["noise"] == 1.0


def test_sgd_rr_shape():
    # K = 1 and sigma = 0 leave only the drift and optimisation terms
    p = BoundParams(mu=0.5, L=2, D=3, zeta_star_sq=1.7, M=6, K=1, R=500)
    t = tuned_rate_terms(p, "sfl", SC)
    assert t["noise"] == t["noise_drift"] == t["sampling"] == 0.0
    assert t["heterogeneity_drift"] == pytest.approx(2 * 1.7 / (0.25 * 6 * 500**2), rel=1e-14)
    assert t["optimization"] == pytest.approx(0.5 * 9 * math.exp(-0.5 * 500 / 24), rel=1e-14)


def test_k_saturation():
    p = BoundParams(mu=0.5, L=2, D=1, sigma=3, zeta_star_sq=1.0, M=4, R=100)
    ks = k_saturation(p, "sfl")
    assert ks == pytest.approx(9 * 0.5 * 100 / 2)
    at = tuned_rate_terms(p.with_(K=round(ks)), "sfl", SC)
    assert at["noise"] == pytest.approx(at["heterogeneity_drift"], rel=0.01)
    k = int(4 * ks)
    m1 = max(tuned_rate_terms(p.with_(K=k), "sfl", SC)[n] for n in ("noise", "heterogeneity_drift"))
    m2 = max(tuned_rate_terms(p.with_(K=2 * k), "sfl", SC)[n] for n in ("noise", "heterogeneity_drift"))
    assert abs(m2 - m1) / m1 < 0.01
    assert k_saturation(p, "pfl") == pytest.approx(ks / 4)
    assert k_saturation(p.with_(zeta_star_sq=0.0), "sfl") == math.inf


def test_dominant_term_regimes():
    het = BoundParams(mu=1, L=1, D=1, zeta_star_sq=5, M=2, K=1, R=10**6)
    assert dominant_term(het, "sfl", SC, kind="rate")[0] == "heterogeneity_drift"
    noisy = BoundParams(mu=1, L=1, D=1, sigma=2, M=2, K=1, R=10**6)
    assert dominant_term(noisy, "sfl", SC, kind="rate")[0] == "noise"
    early = BoundParams(mu=1, L=1, D=100, sigma=0.1, zeta_star_sq=0.1, M=2, K=1, R=10, eta_tilde=0.15)
    name, share = dominant_term(early, "sfl", SC)
    assert name == "optimization" and 0.5 < share <= 1


def test_tuned_learning_rates():
    p = BoundParams(mu=1, L=1, D=1, sigma=0.5, M=2, K=5, R=1000)
    g = tuned_eta_tilde(p, "sfl", SC)
    c = 4 * 0.25 / 10
    assert g == pytest.approx(math.log(max(2, 0.25 * 1000 / c)) / (0.5 * 1000), rel=1e-14)
    assert (p.R + 1) >= 1 / (2 * 0.5 * g)
    assert tuned_eta_tilde(p.with_(R=10), "sfl", SC) == pytest.approx(1 / 6)
    assert tuned_eta_tilde(p.with_(sigma=0.0), "sfl", SC) == pytest.approx(1 / 6)
    gc = tuned_eta_tilde(p.with_(zeta_star_sq=1.0), "pfl", GC)
    c1, c2 = 4 * 0.25 / 10, 6 * 0.25 / 5 + 4 * 1.0
    assert gc == pytest.approx(min(math.sqrt(1 / (c1 * 1001)), (1 / (c2 * 1001)) ** (1 / 3), 1 / 6))
    nc = tuned_eta_tilde(p.with_(A=1.0, beta_sq=1.0, R=10), "sfl", NC)
    assert nc <= 1 / 12


def test_polylog_option():
    p = BoundParams(mu=1, L=1, D=1, sigma=1, M=2, K=5, R=1000)
    assert polylog_factor(p) == pytest.approx(math.log(1000 * 10))
    assert tuned_rate(p, "sfl", SC, polylog=True) > tuned_rate(p, "sfl", SC)
    assert polylog_factor(p.with_(sigma=0.0)) == 1.0
