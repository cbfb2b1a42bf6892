import math
from dataclasses import replace

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import stats

from betatails import experiments as ex
from betatails.ensembles import ParameterError
from betatails.experiments import (
    FitError,
    TailEstimate,
    TailQuery,
    clopper_pearson,
    estimate_tail,
    estimate_tail_sweep,
    fit_exponent,
)


def herm(side="upper", n=50, beta=2.0, eps=0.1, samples=2000, seed=1):
    return TailQuery("hermite", side, n, beta, eps, samples, seed)


# --- query validation ---------------------------------------------------------

@pytest.mark.parametrize("kw", [
    dict(ensemble="goe"), dict(side="both"), dict(extremal="mid"), dict(n=0), dict(n=2.5),
    dict(beta=0.0), dict(eps=0.0), dict(eps=1.5), dict(samples=0), dict(kappa=10.0),
    dict(extremal="min"),
])
def test_query_rejects(kw):
    base = dict(ensemble="hermite", side="upper", n=10, beta=2.0, eps=0.1, samples=10)
    base.update(kw)
    with pytest.raises(ParameterError):
        TailQuery(**base)


def test_laguerre_query_rules():
    with pytest.raises(ParameterError):
        TailQuery("laguerre", "upper", 10, 2.0, 0.1, 10)
    with pytest.raises(ParameterError):
        TailQuery("laguerre", "upper", 10, 2.0, 0.1, 10, kappa=9.0)
    TailQuery("laguerre", "upper", 10, 2.0, 0.1, 10, kappa=9.5)
    with pytest.raises(ParameterError):
        TailQuery("laguerre", "upper", 10, 2.0, 0.1, 10, extremal="min", kappa=40.0)
    with pytest.raises(ParameterError):
        TailQuery("laguerre", "lower", 10, 2.0, 0.1, 10, extremal="min", kappa=10.5)
    # easy regime: the full (0, 1] range
    TailQuery("laguerre", "lower", 10, 2.0, 1.0, 10, extremal="min", kappa=40.0)
    # hard regime: the alpha-dependent window is enforced
    hi = ex.min_eps_window(100, 150.0)
    assert 0 < hi < 0.01
    TailQuery("laguerre", "lower", 100, 2.0, hi, 10, extremal="min", kappa=150.0)
    with pytest.raises(ParameterError):
        TailQuery("laguerre", "lower", 100, 2.0, 2 * hi, 10, extremal="min", kappa=150.0)


def test_thresholds():
    assert ex.threshold(herm(n=400, eps=0.1)) == pytest.approx(44.0, rel=1e-15)
    assert ex.threshold(herm("lower", n=400, eps=0.1)) == pytest.approx(36.0, rel=1e-15)
    q = TailQuery("laguerre", "upper", 16, 2.0, 0.5, 10, kappa=64.0)
    assert ex.threshold(q) == pytest.approx(144 * 1.5, rel=1e-15)
    q = TailQuery("laguerre", "lower", 16, 2.0, 0.5, 10, extremal="min", kappa=64.0)
    assert ex.threshold(q) == pytest.approx(16 * 0.5, rel=1e-15)


def test_config_key_ignores_eps():
    assert herm(eps=0.1).config_key() == herm(eps=0.7).config_key()
    assert herm(seed=1).config_key() != herm(seed=2).config_key()


# --- Clopper-Pearson ------------------------------------------------------------

def test_clopper_pearson_zero_hits():
    lo, hi = clopper_pearson(0, 1000)
    assert lo == 0.0
    assert hi == pytest.approx(1 - 0.025 ** (1 / 1000), rel=1e-12)
    # rule-of-three order of magnitude: -log(0.025) = 3.69
    assert 3 < hi * 1000 < 3.7
    lo, hi = clopper_pearson(1000, 1000)
    assert hi == 1.0 and lo == pytest.approx(0.025 ** (1 / 1000), rel=1e-12)
    assert clopper_pearson(1, 1000)[1] > clopper_pearson(0, 1000)[1]


def test_clopper_pearson_known_value():
    # 5 of 50: standard exact interval (0.0333, 0.2181)
    lo, hi = clopper_pearson(5, 50)
    assert lo == pytest.approx(0.033275, abs=1e-5)
    assert hi == pytest.approx(0.218135, abs=1e-5)


@given(st.integers(1, 5000).flatmap(lambda n: st.tuples(st.integers(0, n), st.just(n))))
@settings(max_examples=200, deadline=None)
def test_estimate_invariants(hn):
    h, n = hn
    e = ex.make_estimate(h, n)
    assert 0 <= e.ci_low <= e.p_hat <= e.ci_high <= 1
    assert e.p_hat == h / n and type(e.p_hat) is float


def _exact_coverage(p, n):
    pmf = stats.binom.pmf(np.arange(n + 1), n, p)
    return math.fsum(pmf[h] for h in range(n + 1)
                     if clopper_pearson(h, n)[0] <= p <= clopper_pearson(h, n)[1])


@pytest.mark.parametrize("p,n", [(0.001, 3000), (0.0011, 3000), (0.03, 200), (0.5, 40)])
def test_clopper_pearson_exact_coverage(p, n):
    # p = 0.001, n = 3000 sits just above 3/n, where a rule-of-three zero-hit bound undercovers
    assert _exact_coverage(p, n) >= 0.95


@pytest.mark.parametrize("p,n", [(0.03, 200), (0.5, 40), (0.001, 3000)])
def test_clopper_pearson_coverage(p, n):
    rng = np.random.default_rng(99)
    hits = rng.binomial(n, p, size=10_000)
    table = {h: clopper_pearson(int(h), n) for h in np.unique(hits)}
    covered = sum(table[h][0] <= p <= table[h][1] for h in hits)
    assert covered / hits.size >= 0.95


# --- fits -------------------------------------------------------------------

def _synthetic(fn, grid, samples=10**12):
    out = []
    for e in grid:
        p = fn(e)
        out.append((e, TailEstimate(int(p * samples), samples, p, p, p)))
    return out


def test_fit_synthetic_right():
    grid = [0.04, 0.07, 0.1, 0.14, 0.2]
    f = fit_exponent(_synthetic(lambda e: math.exp(-5 * e ** 1.5), grid), 1.5)
    assert abs(f.slope - 1.5) <= 1e-6
    assert f.intercept == pytest.approx(math.log(5), abs=1e-6)
    assert f.residual_rms <= 1e-9 and f.points_used == 5 and f.points_excluded == 0


def test_fit_synthetic_left():
    grid = [0.08, 0.12, 0.16, 0.2]
    f = fit_exponent(_synthetic(lambda e: math.exp(-3 * e ** 3), grid), 3.0)
    assert abs(f.slope - 3.0) <= 1e-6


def test_fit_excludes_and_errors():
    good = _synthetic(lambda e: math.exp(-5 * e ** 1.5), [0.1, 0.2, 0.3])
    zero = (0.5, TailEstimate(0, 100, 0.0, 0.0, 0.03))
    few = (0.4, TailEstimate(9, 100, 0.09, 0.04, 0.16))
    f = fit_exponent(good + [zero, few])
    assert f.points_used == 3 and f.points_excluded == 2
    with pytest.raises(FitError):
        fit_exponent(good[:2] + [zero])
    same = [(0.1, good[0][1])] * 3
    with pytest.raises(FitError):
        fit_exponent(same)


def test_lower_bound_ratio_synthetic(monkeypatch):
    n, beta = 400, 2.0

    def fake(q, grid, workers=None):
        return [TailEstimate(10**6, 10**12, math.exp(-0.7 * beta * n * e ** 1.5), 0, 1) for e in grid]

    monkeypatch.setattr(ex, "estimate_tail_sweep", fake)
    rows = ex.lower_bound_ratio("upper", n, beta, [0.05, 0.1, 0.2], 100, 1)
    assert all(abs(r["ratio"] - 0.7) <= 1e-6 for r in rows)
    assert ex.ratio_spread(rows) == pytest.approx(1.0, abs=1e-6)


def test_lower_bound_ratio_flags_sparse_points():
    rows = ex.lower_bound_ratio("upper", 50, 2.0, [0.01, 0.9], 2000, 3)
    assert rows[1]["flagged"] and rows[1]["ratio"] is None
    assert not rows[0]["flagged"] and rows[0]["ratio"] > 0
    assert ex.ratio_spread(rows) is None


# --- Monte Carlo runs -------------------------------------------------------

def test_impossible_event_gives_zero_hit_bound():
    q = herm(n=400, eps=1.0, samples=3000)
    # lambda_max never exceeds twice the edge: the Gershgorin bound is about 2 sqrt(n) + O(1)
    top = ex.extremal_values("hermite", 400, 2.0, 3000, q.seed).max()
    assert top < ex.threshold(q)
    e = estimate_tail(q)
    assert e.hits == 0 and e.p_hat == 0.0
    assert e.ci_high == pytest.approx(-math.expm1(math.log(0.025) / 3000), rel=1e-12)


def test_reproducible_and_seed_sensitive():
    q = herm(eps=0.02, samples=3000)
    a, b = estimate_tail(q), estimate_tail(q)
    assert a == b
    assert estimate_tail(replace(q, seed=2)).hits != a.hits


def test_chunking_does_not_change_draws(monkeypatch):
    q = herm("lower", n=30, eps=0.05, samples=1000, seed=5)
    ref = estimate_tail(q)
    monkeypatch.setattr(ex, "_CHUNK", 37)
    assert estimate_tail(q) == ref


def test_sweep_matches_single_queries():
    q = herm(eps=0.1, samples=1500, seed=8)
    grid = [0.01, 0.03, 0.05]
    sweep = estimate_tail_sweep(q, grid)
    assert sweep == [estimate_tail(replace(q, eps=e)) for e in grid]


def test_sturm_flags_match_bisection():
    # two independent routes to the same event on the same matrices
    n, N = 60, 4000
    q = herm(n=n, eps=0.01, samples=N, seed=9)
    lam = ex.extremal_values("hermite", n, 2.0, N, 9)
    assert estimate_tail(q).hits == int((lam >= ex.threshold(q)).sum())
    ql = replace(q, side="lower", eps=0.02)
    assert estimate_tail(ql).hits == int((lam <= ex.threshold(ql)).sum())
    lq = TailQuery("laguerre", "lower", 20, 2.0, 0.2, N, 9, extremal="min", kappa=80.0)
    mins = ex.extremal_values("laguerre", 20, 2.0, N, 9, kappa=80.0, which="min")
    assert estimate_tail(lq).hits == int((mins <= ex.threshold(lq)).sum())


@pytest.mark.parametrize("q", [
    herm("upper", n=40, samples=4000),
    herm("lower", n=40, samples=4000),
    TailQuery("laguerre", "upper", 30, 1.0, 0.1, 4000, kappa=120.0),
    TailQuery("laguerre", "lower", 30, 4.0, 0.1, 4000, extremal="min", kappa=120.0),
])
def test_monotone_in_eps(q):
    grid = np.linspace(0.005, 0.5, 12)
    p = [e.p_hat for e in estimate_tail_sweep(q, grid)]
    assert all(b <= a for a, b in zip(p, p[1:]))
    assert p[0] > p[-1]


@pytest.mark.xfail(strict=True, reason=(
    "both probabilities are near 1e-8 at n=400 (the soft-edge scale is n^(-2/3)), "
    "so N=1e5 samples give zero hits at both eps"))
def test_upper_tail_decreases_n400():
    q = herm(n=400, samples=100_000, seed=1)
    a, b = estimate_tail_sweep(q, [0.05, 0.15])
    assert a.p_hat > b.p_hat


def test_upper_tail_decreases_n400_reachable_eps():
    q = herm(n=400, samples=20_000, seed=1)
    a, b = estimate_tail_sweep(q, [0.005, 0.015])
    assert a.p_hat > b.p_hat > 0


# --- windows and sweeps -----------------------------------------------------

def test_eps_window():
    assert ex.eps_window(herm()) == 1.0
    lq = TailQuery("laguerre", "upper", 16, 2.0, 0.1, 10, kappa=256.0)
    assert ex.eps_window(lq) == pytest.approx(0.25)
    assert ex.eps_window(replace(lq, kappa=16.0)) == 1.0
    mq = TailQuery("laguerre", "lower", 16, 2.0, 0.1, 10, extremal="min", kappa=64.0)
    assert ex.eps_window(mq) == 1.0
    hq = replace(mq, kappa=20.0, eps=ex.min_eps_window(16, 20.0))
    assert ex.eps_window(hq) == ex.min_eps_window(16, 20.0)


def test_exponent_sweep_drops_outside_window():
    q = TailQuery("laguerre", "upper", 16, 2.0, 0.1, 3000, 4, kappa=256.0)
    pairs, fit, outside = ex.exponent_sweep(q, [0.01, 0.02, 0.04, 0.3, 0.5])
    assert outside == [0.3, 0.5]
    assert [e for e, _ in pairs] == [0.01, 0.02, 0.04]
    assert isinstance(fit, (ex.FitReport, FitError))
    with pytest.raises(ParameterError):
        ex.exponent_sweep(q, [0.3, 0.5])


def test_exponent_sweep_reports_fit_error():
    q = herm(n=100, samples=500)
    _, fit, _ = ex.exponent_sweep(q, [0.5, 0.7, 0.9])
    assert isinstance(fit, FitError)


# --- variance and centre ----------------------------------------------------

def test_variance_scan_errors():
    with pytest.raises(FitError):
        ex.variance_scan([16, 16, 16], 2.0, 200, 1)
    with pytest.raises(FitError):
        ex.variance_scan([16, 32], 2.0, 200, 1)
    with pytest.raises(ParameterError):
        ex.variance_scan([16, 32, 64], 2.0, 99, 1)
    with pytest.raises(ParameterError):
        ex.variance_scan([64, 32, 16], 2.0, 200, 1)
    with pytest.raises(ParameterError):
        ex.variance_scan([16, 32, 64], 2.0, 200, 1, ensemble="laguerre")


def test_variance_scan_small():
    rows, fit = ex.variance_scan([16, 64, 256], 2.0, 3000, 1)
    var = [r[3] for r in rows]
    assert all(v > 0 for v in var)
    assert var[0] > var[1] > var[2]
    assert fit.slope < 0 and fit.expected == pytest.approx(-1 / 3)
    rows, fit = ex.variance_scan([16, 64, 256], 2.0, 2000, 1, ensemble="laguerre", kappa_ratio=4.0)
    assert [r[1] for r in rows] == [64.0, 256.0, 1024.0]
    assert fit.slope < 0


def test_variance_unbiased_formula():
    x = np.array([1.0, 2.0, 4.0, 7.0])
    m, v = ex._fsum_var(x)
    assert m == 3.5 and v == pytest.approx(np.var(x, ddof=1), rel=1e-15)


def test_tw_center_errors():
    with pytest.raises(ParameterError):
        ex.tw_center_stability([64], 2.0, 100, 1)


@pytest.mark.slow
def test_tw_center_convergence():
    rows = ex.tw_center_stability([256, 1024], 2.0, 50_000, 1)
    (_, m1, s1), (_, m2, s2) = rows
    assert abs(m1 - m2) <= 4 * math.hypot(s1, s2)
    assert m1 < 0 and m2 < 0


# Tracy-Widom means for beta = 1, 2, 4 (Bornemann's high-precision tables,
# beta = 4 rescaled to the general-beta normalisation)
TW_MEAN = {1.0: -1.2065335745820, 2.0: -1.7710868074116, 4.0: -2.0552013}


def _centre(beta):
    return ex.tw_center_stability([64, 256], beta, 20_000, 1)[-1][1]


def test_tw_center_matches_known_means():
    means = {b: _centre(b) for b in TW_MEAN}
    for b, m in means.items():
        # finite-n bias at n = 256 is below 0.1
        assert abs(m - TW_MEAN[b]) <= 0.12, (b, m)
    assert means[1.0] > means[2.0] > means[4.0]


@pytest.mark.xfail(strict=True, reason="the soft-edge mean decreases in beta (TW1 -1.21, TW4 -2.06)")
def test_tw_center_beta_ordering():
    assert _centre(1.0) < _centre(4.0)
