"""Monte Carlo campaigns and the statistics extracted from them.

A campaign repeats :func:`~multiphase_qpe.protocol.run_estimation` with run
``i`` seeded by ``(campaign_seed, i)``, so results do not depend on how runs
are scheduled across workers. Runs that stalled or aborted are kept in the
statistics but excluded from the covariance fits.
"""

from __future__ import annotations

import logging
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Callable, Iterable, NamedTuple, Sequence

import numpy as np

from .posterior import linear_combination_variance
from .protocol import RunConfig, RunResult, run_estimation
from . import records as rec_io

log = logging.getLogger(__name__)

# Fits reported for the full-scale algorithm: C_H(eps) = a + b ln(1/eps) and
# P_err(eps) = c eps, keyed by the number of phases.
HEISENBERG_FITS = {1: (3.13, 2.50, 0.94), 2: (10.8, 13.8, 0.78), 3: (40.1, 26.2, 0.58)}
PLATEAU_CONSTANTS = {2: 138.0, 3: 281.0}  # C_H at eps = 1e-4
CORRELATIONS = {2: 0.47, 3: 0.45}
ERROR_POWER_FITS = {1: (0.57, 0.91), 2: (0.94, 1.04), 3: (0.64, 1.02)}
# prefactors C_s of earlier single-phase protocols, quoted for comparison
SINGLE_PHASE_CONSTANTS = {"adaptive backward": 23.0, "gaussian forward": 22.0, "nonadaptive": 40.5}


class NotApplicableError(ValueError):
    pass


class Estimate(NamedTuple):
    """A fitted constant with its sample dispersion."""

    value: float
    std: float
    n_samples: int
    median: float = math.nan

    @property
    def sem(self) -> float:
        return self.std / math.sqrt(self.n_samples) if self.n_samples else math.nan

    def __float__(self) -> float:
        return float(self.value)


def _estimate(samples) -> Estimate:
    samples = np.asarray(samples, dtype=float).ravel()
    samples = samples[np.isfinite(samples)]
    if samples.size == 0:
        return Estimate(math.nan, math.nan, 0)
    std = float(samples.std(ddof=1)) if samples.size > 1 else 0.0
    return Estimate(float(samples.mean()), std, int(samples.size), float(np.median(samples)))


@dataclass
class CampaignStats:
    """Per-round arrays over ``runs x rounds``; missing rounds are NaN / False."""

    config: RunConfig
    campaign_seed: int
    N_T: np.ndarray
    V: np.ndarray
    M: np.ndarray
    m: np.ndarray
    truth_in_C: np.ndarray
    completed: np.ndarray
    stalled: np.ndarray
    aborted: np.ndarray
    theta_true: np.ndarray
    estimates: np.ndarray

    @property
    def n_runs(self) -> int:
        return self.N_T.shape[0]

    @property
    def n_rounds(self) -> int:
        return self.N_T.shape[1]

    @property
    def d(self) -> int:
        return self.config.d

    @property
    def flagged(self) -> np.ndarray:
        return self.stalled | self.aborted

    @property
    def usable(self) -> np.ndarray:
        return ~self.flagged

    @property
    def n_sim(self) -> int:
        """Runs whose error status is known (aborted runs are left out)."""
        return int((~self.aborted).sum())

    @property
    def error_runs(self) -> np.ndarray:
        return ~self.aborted & (self.completed & ~self.truth_in_C).any(axis=1)

    @property
    def n_err(self) -> int:
        return int(self.error_runs.sum())

    @property
    def n_err_first_round(self) -> int:
        return int((~self.aborted & self.completed[:, 0] & ~self.truth_in_C[:, 0]).sum())

    def scaled_covariance(self) -> np.ndarray:
        """``V_ij N_T**2`` per run and round."""
        return self.V * self.N_T[..., None, None] ** 2

    def tail(self, tail_rounds: int) -> slice:
        if tail_rounds < 1 or tail_rounds > self.n_rounds:
            raise ValueError(
                f"need {tail_rounds} tail rounds but the campaign has {self.n_rounds}"
            )
        return slice(self.n_rounds - tail_rounds, self.n_rounds)

    @classmethod
    def from_results(cls, config: RunConfig, results: Sequence[RunResult], campaign_seed: int = 0):
        R, K, d = len(results), config.k_max, config.d
        N_T = np.full((R, K), np.nan)
        V = np.full((R, K, d, d), np.nan)
        M = np.zeros((R, K), dtype=int)
        m = np.zeros((R, K), dtype=int)
        truth = np.zeros((R, K), dtype=bool)
        completed = np.zeros((R, K), dtype=bool)
        est = np.full((R, d), np.nan)
        for i, res in enumerate(results):
            for r in res.records:
                N_T[i, r.k] = r.cumulative_resources
                V[i, r.k] = r.covariance
                M[i, r.k] = r.M
                m[i, r.k] = r.m_k
                truth[i, r.k] = r.truth_in_C
                completed[i, r.k] = True
            if res.records:
                est[i] = res.records[-1].estimate
        return cls(
            config=config,
            campaign_seed=campaign_seed,
            N_T=N_T,
            V=V,
            M=M,
            m=m,
            truth_in_C=truth,
            completed=completed,
            stalled=np.array([r.stalled for r in results], dtype=bool),
            aborted=np.array([r.aborted for r in results], dtype=bool),
            theta_true=np.array([r.theta_true for r in results]).reshape(R, d),
            estimates=est,
        )


def run_config_for(config: RunConfig, campaign_seed: int, index: int) -> RunConfig:
    return replace(config, seed=(int(campaign_seed), int(index)), theta_true="random")


def _run_one(args) -> RunResult:
    config, campaign_seed, index = args
    return run_estimation(run_config_for(config, campaign_seed, index))


def _workers(threads: int) -> int:
    if threads == 0:
        return os.cpu_count() or 1
    return max(1, threads)


def run_campaign(
    config: RunConfig,
    repetitions: int,
    campaign_seed: int = 0,
    threads: int = 1,
    records_path: str | Path | None = None,
    meta: dict | None = None,
    progress: Callable[[int, int], None] | None = None,
) -> CampaignStats:
    """Execute ``repetitions`` independent runs and aggregate them.

    With ``records_path`` every completed run is appended to a records file;
    if the file already exists with the same configuration, the runs it
    holds are reused and only the missing ones are executed.
    """
    if repetitions < 1:
        raise ValueError(f"repetitions must be >= 1, got {repetitions}")
    done: dict[int, RunResult] = {}
    fh = None
    if records_path is not None:
        records_path = Path(records_path)
        header = rec_io.make_header(
            dict(meta or {}, config=config.to_dict(), campaign_seed=campaign_seed)
        )
        if records_path.exists():
            old_header, done = rec_io.read_records(records_path)
            if old_header["meta"].get("config") != header["meta"]["config"] or old_header[
                "meta"
            ].get("campaign_seed") != campaign_seed:
                raise ValueError(f"{records_path} belongs to a different campaign")
            done = {i: r for i, r in done.items() if i < repetitions}
            rec_io.rewrite_complete(records_path, old_header, done)
            if done:
                log.info("resuming campaign: %d of %d runs on disk", len(done), repetitions)
        else:
            rec_io.write_records(records_path, [], header["meta"])
        fh = open(records_path, "a")

    todo = [i for i in range(repetitions) if i not in done]
    jobs = [(config, campaign_seed, i) for i in todo]
    workers = _workers(threads)
    try:
        if workers == 1:
            outputs: Iterable[RunResult] = map(_run_one, jobs)
            pool = None
        else:
            pool = ProcessPoolExecutor(max_workers=workers)
            outputs = pool.map(_run_one, jobs, chunksize=max(1, len(jobs) // (8 * workers)))
        for n, (i, result) in enumerate(zip(todo, outputs), 1):
            done[i] = result
            if fh is not None:
                rec_io.write_run(fh, result, i)
            if progress is not None:
                progress(n, len(todo))
        if pool is not None:
            pool.shutdown()
    finally:
        if fh is not None:
            fh.close()
    results = [done[i] for i in range(repetitions)]
    stats = CampaignStats.from_results(config, results, campaign_seed)
    if stats.flagged.any():
        log.info(
            "%d of %d runs flagged (%d stalled, %d aborted)",
            int(stats.flagged.sum()), stats.n_runs, int(stats.stalled.sum()), int(stats.aborted.sum()),
        )
    return stats


def load_campaign(path) -> CampaignStats:
    """Rebuild statistics from a records file written by :func:`run_campaign`."""
    header, runs = rec_io.read_records(path)
    meta = header["meta"]
    config = RunConfig.from_dict(meta["config"])
    results = [runs[i] for i in sorted(runs)]
    return CampaignStats.from_results(config, results, meta.get("campaign_seed", 0))


# ------------------------------------------------------------------ fits


def _tail_usable(stats: CampaignStats, tail_rounds: int):
    sl = stats.tail(tail_rounds)
    rows = stats.usable
    return stats.scaled_covariance()[rows, sl], stats.V[rows, sl]


def fit_heisenberg_constant(stats: CampaignStats, tail_rounds: int = 3) -> Estimate:
    """Plateau of ``V_jj N_T**2`` averaged over the last rounds, usable runs and axes."""
    scaled, _ = _tail_usable(stats, tail_rounds)
    return _estimate(np.diagonal(scaled, axis1=-2, axis2=-1))


def correlation_ratio(stats: CampaignStats, tail_rounds: int = 3) -> Estimate:
    """Mean normalized off-diagonal ``V_ij / sqrt(V_ii V_jj)`` over the tail."""
    if stats.d < 2:
        raise NotApplicableError("correlations need at least two phases")
    _, V = _tail_usable(stats, tail_rounds)
    diag = np.sqrt(np.diagonal(V, axis1=-2, axis2=-1))
    corr = V / (diag[..., :, None] * diag[..., None, :])
    i, j = np.triu_indices(stats.d, 1)
    return _estimate(corr[..., i, j])


def combination_plateau(stats: CampaignStats, n, tail_rounds: int = 3) -> Estimate:
    """Plateau of ``n^T V n N_T**2`` for the linear combination ``n . theta``."""
    scaled, _ = _tail_usable(stats, tail_rounds)
    flat = scaled.reshape(-1, stats.d, stats.d)
    vals = [linear_combination_variance(v, n) for v in flat if np.all(np.isfinite(v))]
    return _estimate(vals)


def correlation_advantage_fraction(stats: CampaignStats, tail_rounds: int = 3) -> float:
    """Share of tail samples where ``(e_i - e_j)^T V (e_i - e_j) < V_ii + V_jj``
    for every pair, i.e. where correlations help phase differences."""
    if stats.d < 2:
        raise NotApplicableError("correlations need at least two phases")
    _, V = _tail_usable(stats, tail_rounds)
    V = V.reshape(-1, stats.d, stats.d)
    V = V[np.all(np.isfinite(V), axis=(1, 2))]
    i, j = np.triu_indices(stats.d, 1)
    diff = V[:, i, i] + V[:, j, j] - 2.0 * V[:, i, j]
    ok = np.all(diff < V[:, i, i] + V[:, j, j], axis=1)
    return float(ok.mean()) if ok.size else math.nan


class ErrorRate(NamedTuple):
    p_err: float
    delta: float

    @property
    def degenerate(self) -> bool:
        return self.p_err >= 1.0


def estimate_error_rate(N_err: int, N_sim: int, k: int) -> ErrorRate:
    """Per-round error probability from the fraction of runs with an error.

    Assumes a constant per-round rate, ``1 - N_err/N_sim = (1 - P_err)**k``;
    the uncertainty propagates ``sqrt(N_err) / N_sim`` on the run fraction.
    """
    if N_sim < 1 or k < 1:
        raise ValueError("need N_sim >= 1 and k >= 1")
    if not 0 <= N_err <= N_sim:
        raise ValueError(f"N_err={N_err} outside [0, {N_sim}]")
    frac = N_err / N_sim
    if N_err == N_sim:
        log.warning("every run failed; per-round error rate is degenerate")
        return ErrorRate(1.0, math.inf)
    p = 1.0 - (1.0 - frac) ** (1.0 / k)
    slope = (1.0 - frac) ** (1.0 / k - 1.0) / k
    return ErrorRate(p, slope * math.sqrt(N_err) / N_sim)


def campaign_error_rate(stats: CampaignStats) -> ErrorRate:
    return estimate_error_rate(stats.n_err, stats.n_sim, stats.n_rounds)


class ErrorModelFit(NamedTuple):
    c1: float
    c2: float
    c_linear: float
    n_points: int


def fit_error_model(points: Iterable[tuple[float, float]]) -> ErrorModelFit:
    """Fit ``P_err = c1 eps**c2`` (least squares in log-log) and ``P_err = c eps``.

    The linear constant is the geometric mean of ``P_err / eps``, i.e. the
    same log-space least squares with the exponent pinned to one.
    """
    pts = [(float(e), float(p)) for e, p in points if p > 0]
    if len(pts) < 3:
        raise ValueError(f"need at least 3 points with P_err > 0, got {len(pts)}")
    x = np.log([e for e, _ in pts])
    y = np.log([p for _, p in pts])
    c2, logc1 = np.polyfit(x, y, 1)
    return ErrorModelFit(float(np.exp(logc1)), float(c2), float(np.exp(np.mean(y - x))), len(pts))


def heisenberg_reference(d: int, epsilon: float) -> float:
    """Reported ``C_H(eps) = a + b ln(1/eps)``."""
    a, b, _ = HEISENBERG_FITS[d]
    return a + b * math.log(1.0 / epsilon)


def heisenberg_reference_at_error(d: int, p_err: float) -> float:
    """``C_H`` expressed through the per-round error ``P_err = c eps``."""
    a, b, c = HEISENBERG_FITS[d]
    return a + b * math.log(c / p_err)


def sequential_baseline_variance(d: int, n, P_err: float, N_T: float) -> float:
    """Variance of ``n . theta`` when each phase gets ``N_T / d`` resources in
    its own single-phase estimation: ``C_H^(1)(P_err) d**2 |n|**2 / N_T**2``."""
    if not 0.0 < P_err < 1.0 or N_T <= 0:
        raise ValueError("need 0 < P_err < 1 and N_T > 0")
    n = np.asarray(n, dtype=float)
    if n.size != d:
        raise ValueError(f"n must have {d} entries")
    return heisenberg_reference_at_error(1, P_err) * d**2 * float(n @ n) / N_T**2


def parallel_difference_reference(d: int, P_err: float, N_T: float) -> float:
    """Reported parallel variance of a phase difference, ``C_H^(d)(P_err) / N_T**2``.

    This is the figure quoted against the sequential baseline. With the
    reported correlations the exact ``(e_i - e_j)^T V (e_i - e_j)`` would be
    ``2 (1 - rho) C_H^(d)``, i.e. 6% (d=2) or 10% (d=3) larger.
    """
    if not 0.0 < P_err < 1.0 or N_T <= 0:
        raise ValueError("need 0 < P_err < 1 and N_T > 0")
    return heisenberg_reference_at_error(d, P_err) / N_T**2


def matched_epsilon(d: int, p_err: float) -> float:
    """Decision parameter expected to give the per-round error ``p_err``."""
    return p_err / HEISENBERG_FITS[d][2]


@dataclass
class CrossoverReport:
    crossover_NT: float
    early_slope: float
    late_slope: float
    early_samples: int
    late_samples: int
    late_NTV: np.ndarray  # mean N_T V_jj per axis in the late regime
    late_NTV_slope: float

    @property
    def sub_shot_noise(self) -> bool:
        return bool(np.all(self.late_NTV < 1.0))

    @property
    def late_constant(self) -> bool:
        """Late-regime ``N_T V_jj`` flat within a factor ~1.4 per decade."""
        return abs(self.late_NTV_slope) < 0.15


def _loglog_slope(x, y) -> float:
    ok = np.isfinite(x) & np.isfinite(y) & (x > 0) & (y > 0)
    if ok.sum() < 2 or np.ptp(np.log(x[ok])) == 0:
        return math.nan
    return float(np.polyfit(np.log(x[ok]), np.log(y[ok]), 1)[0])


def noise_crossover_analysis(stats: CampaignStats, late_factor: float = 10.0) -> CrossoverReport:
    """Split the ``V_jj`` vs ``N_T`` cloud at ``N_x = 1 / max_j Gamma_j**2``.

    Samples with ``N_T < N_x`` form the early (Heisenberg) regime, samples
    with ``N_T > late_factor * N_x`` the late (shot-noise) regime; each gets a
    pooled log-log slope over usable runs and all axes.
    """
    gammas = np.asarray(stats.config.noise.gammas)
    if not np.any(gammas > 0):
        raise NotApplicableError("crossover analysis needs a dephased campaign")
    Nx = 1.0 / gammas.max() ** 2
    rows = stats.usable
    NT = stats.N_T[rows]
    Vd = np.diagonal(stats.V[rows], axis1=-2, axis2=-1)
    NT_all = np.repeat(NT[..., None], stats.d, axis=-1)
    early = NT_all < Nx
    late = NT_all > late_factor * Nx
    late_ntv = np.array(
        [np.nanmean((NT * Vd[..., j])[late[..., j]]) for j in range(stats.d)]
    )
    return CrossoverReport(
        crossover_NT=Nx,
        early_slope=_loglog_slope(NT_all[early], Vd[early]),
        late_slope=_loglog_slope(NT_all[late], Vd[late]),
        early_samples=int(early.sum()),
        late_samples=int(late.sum()),
        late_NTV=late_ntv,
        late_NTV_slope=_loglog_slope(NT_all[late], NT_all[late] * Vd[late]),
    )
