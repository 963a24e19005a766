import csv
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from proxhmc.diagnostics import (
    EssReport,
    acf,
    credible_intervals,
    ess,
    ess_from_acf,
    mcse,
    summarize,
    write_acf_csv,
    write_mask_csv,
    write_summary_csv,
)
from proxhmc.samplers import ChainTrace

from oracles import ar1, ar1_iact


def _trace(samples, wall=2.0):
    samples = np.asarray(samples, dtype=float)
    if samples.ndim == 1:
        samples = samples[:, None]
    n = samples.shape[0]
    return ChainTrace(samples=samples, accepted=np.ones(n, bool), energy_error=np.zeros(n),
                      wall_time=wall)


# --------------------------------------------------------------------- ACF

def test_acf_white_noise_bound():
    x = np.random.default_rng(0).normal(size=100_000)
    rho = acf(x, max_lag=200).values[1:, 0]
    assert np.mean(np.abs(rho) <= 3 / math.sqrt(x.size)) >= 0.99


def test_acf_ar1_closed_form():
    x = ar1(0.9, 100_000, np.random.default_rng(1))
    rho = acf(x, max_lag=20).values[:, 0]
    np.testing.assert_allclose(rho, 0.9 ** np.arange(21), atol=0.02)


def test_acf_matches_direct_sum():
    x = np.random.default_rng(2).normal(size=(300, 2)).cumsum(axis=0)
    curve = acf(x, max_lag=10)
    xc = x - x.mean(axis=0)
    for lag in range(11):
        direct = np.sum(xc[: 300 - lag] * xc[lag:], axis=0) / np.sum(xc * xc, axis=0)
        np.testing.assert_allclose(curve.values[lag], direct, rtol=1e-10, atol=1e-12)


def test_acf_degenerate_component():
    x = np.column_stack([np.full(500, 3.0), np.random.default_rng(3).normal(size=500)])
    curve = acf(x, max_lag=5)
    assert curve.degenerate.tolist() == [True, False]
    np.testing.assert_array_equal(curve.component(0), [1, 0, 0, 0, 0, 0])
    assert curve.values[0, 1] == 1.0


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 10_000), st.integers(101, 600))
def test_acf_bounded(seed, n):
    x = np.random.default_rng(seed).normal(size=(n, 2)).cumsum(axis=0)
    v = acf(x).values
    assert np.all(v[0] == 1.0)
    assert np.all(np.abs(v) <= 1.0 + 1e-12)


def test_acf_max_lag_check():
    with pytest.raises(ValueError):
        acf(np.zeros(10), max_lag=10)


# --------------------------------------------------------------------- ESS

@pytest.mark.parametrize("phi", [0.0, 0.5, 0.9])
def test_ess_ar1_consistency(phi):
    x = ar1(phi, 100_000, np.random.default_rng(4))
    rep = ess(_trace(x))
    assert abs(rep.iact[0] - ar1_iact(phi)) / ar1_iact(phi) <= 0.3


def test_ess_iid_ratio():
    rep = ess(_trace(np.random.default_rng(5).normal(size=(20_000, 3))))
    assert np.all((rep.ess / 20_000 >= 0.8) & (rep.ess / 20_000 <= 1.2))


def test_ess_antithetic_exceeds_n():
    x = ar1(-0.5, 20_000, np.random.default_rng(6))
    rep = ess(_trace(x))
    assert rep.ess[0] > 20_000


def test_ess_alternating_chain_not_clipped():
    rep = ess(_trace(np.tile([1.0, -1.0], 100)))
    assert rep.ess[0] > 200


def test_ess_constant_component():
    x = np.column_stack([np.zeros(200), np.random.default_rng(7).normal(size=200)])
    rep = ess(_trace(x))
    assert rep.ess[0] == 1.0 and rep.degenerate[0]


def test_ess_per_second_and_order():
    rep = ess(_trace(np.random.default_rng(8).normal(size=(1000, 4)), wall=4.0))
    np.testing.assert_allclose(rep.ess_per_second, rep.ess / 4.0)
    assert rep.min <= rep.median <= rep.max


def test_ess_needs_100_samples():
    with pytest.raises(ValueError, match="100"):
        ess(_trace(np.zeros(99)))


def test_ess_discard():
    x = np.concatenate([np.full(1000, 50.0), np.random.default_rng(9).normal(size=1000)])
    assert ess(_trace(x), discard=0.5).n == 1000
    with pytest.raises(ValueError):
        ess(_trace(x), discard=1.0)


def test_truncation_ignores_tail():
    rho = np.array([1.0, 0.6, 0.3, 0.1, -0.2, 0.1, 0.5, 0.4])
    base = ess_from_acf(rho)
    assert base == pytest.approx(-1 + 2 * (1.6 + 0.4))
    for tail in ([0.9, 0.9], [-1.0, 1.0, 0.3, 0.3]):
        assert ess_from_acf(np.concatenate([rho, tail])) == base


def test_mcse_iid():
    x = np.random.default_rng(10).normal(size=(40_000, 1))
    assert mcse(x)[0] == pytest.approx(1 / math.sqrt(40_000), rel=0.1)


# --------------------------------------------------------------- intervals

def test_intervals_uniform_quantiles():
    x = np.random.default_rng(11).uniform(size=100_000)
    rep = credible_intervals(x)
    assert abs(rep.lower[0] - 0.025) <= 0.01 and abs(rep.upper[0] - 0.975) <= 0.01


def test_intervals_constant_chain():
    rep = credible_intervals(np.full((200, 2), 1.5))
    np.testing.assert_array_equal(rep.lower, rep.upper)


def test_intervals_mask_count():
    rng = np.random.default_rng(12)
    x = rng.normal(size=(200, 4096)) * rng.uniform(0.1, 2.0, 4096)
    rep = credible_intervals(x)
    mask = rep.mask((64, 64))
    assert mask.shape == (64, 64) and mask.sum() == math.ceil(0.05 * 4096)
    assert rep.width[rep.widest].min() >= np.delete(rep.width, rep.widest).max()


@pytest.mark.parametrize("level", [0.0, 1.0, 1.5])
def test_intervals_level_domain(level):
    with pytest.raises(ValueError):
        credible_intervals(np.zeros((200, 1)), level=level)


# ----------------------------------------------------------------- summary

def test_summary_single_replication():
    rep = ess(_trace(np.random.default_rng(13).normal(size=(500, 5))))
    assert summarize({"m": [rep]}) == [("m", rep.min, rep.median, rep.max)]


def test_summary_identical_replications():
    rep = ess(_trace(np.random.default_rng(14).normal(size=(500, 5))))
    (_, lo, med, hi), = summarize({"m": [rep, rep]})
    assert (lo, med, hi) == pytest.approx((rep.min, rep.median, rep.max))


def test_summary_averages_before_ranking():
    a = EssReport(ess=np.array([1.0, 3.0]), iact=np.ones(2), ess_per_second=np.array([1.0, 3.0]),
                  n=100, wall_time=1.0, degenerate=np.zeros(2, bool))
    b = EssReport(ess=np.array([3.0, 1.0]), iact=np.ones(2), ess_per_second=np.array([3.0, 1.0]),
                  n=100, wall_time=1.0, degenerate=np.zeros(2, bool))
    assert summarize({"m": [a, b]}) == [("m", 2.0, 2.0, 2.0)]


def test_summary_ordering_follows_iact():
    rng = np.random.default_rng(15)
    results = {f"phi{phi}": [_trace(ar1(phi, 20_000, rng), wall=1.0)] for phi in (0.95, 0.0, 0.6)}
    rows = summarize(results)
    medians = {m: med for m, _, med, _ in rows}
    assert medians["phi0.0"] > medians["phi0.6"] > medians["phi0.95"]


def test_summary_dimension_mismatch():
    rng = np.random.default_rng(16)
    with pytest.raises(ValueError, match="dimension"):
        summarize({"m": [_trace(rng.normal(size=(200, 2))), _trace(rng.normal(size=(200, 3)))]})
    with pytest.raises(ValueError):
        summarize({"m": []})


# --------------------------------------------------------------------- CSV

def test_csv_writers(tmp_path):
    rows = [("phmc", 1.0, 2.0, 3.0)]
    write_summary_csv(tmp_path / "s.csv", rows)
    with open(tmp_path / "s.csv") as fh:
        got = list(csv.reader(fh))
    assert got == [["method", "min", "median", "max"], ["phmc", "1.0", "2.0", "3.0"]]

    curve = acf(np.random.default_rng(17).normal(size=(50, 3)), max_lag=4)
    write_acf_csv(tmp_path / "a.csv", curve, components=[0, 2])
    with open(tmp_path / "a.csv") as fh:
        body = list(csv.DictReader(fh))
    assert len(body) == 10 and {r["component"] for r in body} == {"0", "2"}

    write_mask_csv(tmp_path / "m.csv", np.eye(3, dtype=int))
    np.testing.assert_array_equal(np.loadtxt(tmp_path / "m.csv", delimiter=","), np.eye(3))
