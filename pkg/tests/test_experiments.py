import math

import numpy as np
import pytest

from multiphase_qpe.circuit import NoiseModel
from multiphase_qpe.experiments import (
    CampaignStats,
    NotApplicableError,
    combination_plateau,
    correlation_advantage_fraction,
    correlation_ratio,
    estimate_error_rate,
    fit_error_model,
    fit_heisenberg_constant,
    heisenberg_reference,
    noise_crossover_analysis,
    parallel_difference_reference,
    run_campaign,
    sequential_baseline_variance,
)
from multiphase_qpe.protocol import RunConfig


def synthetic_stats(d, V_of_NT, runs=4, rounds=6, noise=None):
    NT = np.tile(4.0 ** np.arange(1, rounds + 1), (runs, 1))
    V = np.array([[V_of_NT(n) for n in row] for row in NT])
    return CampaignStats(
        config=RunConfig(d=d, epsilon=0.01, k_max=rounds, noise=noise),
        campaign_seed=0,
        N_T=NT,
        V=V,
        M=np.ones((runs, rounds), int),
        m=np.ones((runs, rounds), int),
        truth_in_C=np.ones((runs, rounds), bool),
        completed=np.ones((runs, rounds), bool),
        stalled=np.zeros(runs, bool),
        aborted=np.zeros(runs, bool),
        theta_true=np.zeros((runs, d)),
        estimates=np.zeros((runs, d)),
    )


def test_synthetic_plateau_and_correlation():
    stats = synthetic_stats(2, lambda n: 26.2 / n**2 * np.eye(2))
    est = fit_heisenberg_constant(stats, 3)
    assert est.value == pytest.approx(26.2) and est.n_samples == 4 * 3 * 2
    assert correlation_ratio(stats, 3).value == pytest.approx(0.0)
    with pytest.raises(ValueError):
        fit_heisenberg_constant(stats, 7)
    with pytest.raises(NotApplicableError):
        correlation_ratio(synthetic_stats(1, lambda n: np.eye(1) / n**2), 2)
    corr = synthetic_stats(2, lambda n: np.array([[1, 0.5], [0.5, 1]]) / n**2)
    assert correlation_ratio(corr, 2).value == pytest.approx(0.5)
    assert correlation_advantage_fraction(corr, 2) == 1.0
    assert combination_plateau(corr, [1, -1], 2).value == pytest.approx(1.0)


def test_flagged_runs_excluded():
    stats = synthetic_stats(1, lambda n: np.eye(1) * 5 / n**2)
    stats.V[0] *= 100
    stats.stalled[0] = True
    assert fit_heisenberg_constant(stats, 2).value == pytest.approx(5.0)


def test_error_rate_estimator():
    assert estimate_error_rate(0, 100, 5).p_err == 0.0
    assert estimate_error_rate(100, 1000, 10).p_err == pytest.approx(1 - 0.9**0.1, rel=1e-12)
    assert abs(estimate_error_rate(100, 1000, 10).p_err - 0.01048) < 1e-5
    deg = estimate_error_rate(5, 5, 3)
    assert deg.degenerate and deg.p_err == 1.0
    with pytest.raises(ValueError):
        estimate_error_rate(1, 0, 1)


def test_error_rate_recovers_bernoulli_injection():
    rng = np.random.default_rng(11)
    p, k, n = 0.02, 8, 20000
    errs = int((rng.random((n, k)) < p).any(axis=1).sum())
    est = estimate_error_rate(errs, n, k)
    frac = 1 - (1 - p) ** k
    binom_sd = math.sqrt(frac * (1 - frac) / n) * (1 - frac) ** (1 / k - 1) / k
    assert abs(est.p_err - p) < 3 * binom_sd


def test_error_model_fit():
    fit = fit_error_model([(e, 0.5 * e) for e in (1e-1, 1e-2, 1e-3, 1e-4)])
    assert fit.c1 == pytest.approx(0.5, abs=1e-6) and fit.c2 == pytest.approx(1.0, abs=1e-6)
    assert fit.c_linear == pytest.approx(0.5)
    with pytest.raises(ValueError):
        fit_error_model([(0.1, 0.0), (0.01, 0.0), (0.001, 0.0)])


def test_sequential_baseline():
    assert sequential_baseline_variance(2, [1, -1], 1e-3, 1.0) == pytest.approx(162, abs=0.5)
    assert sequential_baseline_variance(3, [1, -1, 0], 1e-3, 1.0) == pytest.approx(364, abs=0.5)
    assert sequential_baseline_variance(1, [1], 1e-2, 10.0) == pytest.approx(
        (3.13 + 2.50 * math.log(0.94 / 1e-2)) / 100)
    assert parallel_difference_reference(2, 1e-3, 1.0) == pytest.approx(103, abs=0.5)
    assert parallel_difference_reference(3, 1e-3, 1.0) == pytest.approx(207, abs=0.5)
    assert heisenberg_reference(1, 1e-3) == pytest.approx(20.4, abs=0.05)


def test_crossover_on_synthetic_shot_noise():
    stats = synthetic_stats(2, lambda n: 0.5 / n * np.eye(2), rounds=10, noise=NoiseModel((0.1, 0.05)))
    rep = noise_crossover_analysis(stats)
    assert rep.late_slope == pytest.approx(-1.0)
    assert rep.sub_shot_noise and rep.late_constant
    with pytest.raises(NotApplicableError):
        noise_crossover_analysis(synthetic_stats(2, lambda n: np.eye(2) / n))


def test_campaign_matches_single_run_and_is_reproducible(tmp_path):
    cfg = RunConfig(d=1, epsilon=0.05, k_max=4)
    one = run_campaign(cfg, 1, campaign_seed=3)
    from multiphase_qpe.experiments import run_config_for
    from multiphase_qpe.protocol import run_estimation

    res = run_estimation(run_config_for(cfg, 3, 0))
    assert np.array_equal(one.N_T[0], [r.cumulative_resources for r in res.records])
    a = run_campaign(cfg, 6, campaign_seed=2)
    b = run_campaign(cfg, 6, campaign_seed=2, threads=2)
    assert np.array_equal(a.V, b.V) and np.array_equal(a.N_T, b.N_T)
    with pytest.raises(ValueError):
        run_campaign(cfg, 0)


def test_campaign_resumes_from_records(tmp_path):
    cfg = RunConfig(d=1, epsilon=0.05, k_max=4)
    path = tmp_path / "c.jsonl"
    full = run_campaign(cfg, 5, campaign_seed=1)
    run_campaign(cfg, 3, campaign_seed=1, records_path=path)
    with open(path, "a") as fh:
        fh.write('{"type":"round","run":3,"k"')  # interrupted write
    resumed = run_campaign(cfg, 5, campaign_seed=1, records_path=path)
    assert np.array_equal(resumed.V, full.V)
    with pytest.raises(ValueError):
        run_campaign(cfg, 5, campaign_seed=2, records_path=path)


def test_measurements_per_round_bounded():
    stats = run_campaign(RunConfig(d=1, epsilon=1e-2, k_max=10), 20, campaign_seed=4)
    ok = stats.usable
    late = np.median(stats.m[ok][:, 5:])
    early = np.median(stats.m[ok][:, :6])
    assert late <= 3 * early
