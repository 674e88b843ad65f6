"""Multiround estimation loop against a simulated, hidden set of phases."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .circuit import TWO_PI, NoiseModel, _probabilities
from .posterior import (
    DegenerateCutError,
    DegenerateUpdateError,
    PosteriorGrid,
    UndefinedMeanError,
    bayes_update,
    circular_mean_estimate,
    covariance_matrix,
    cut_and_regrid,
    default_grid_size,
    init_uniform_grid,
    p_half,
    wrap_to_pi,
)

log = logging.getLogger(__name__)

DEFAULT_M_MAX = 1000


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class RunConfig:
    """Parameters of one estimation run.

    ``seed`` may be an int or a tuple of ints (campaigns use
    ``(campaign_seed, run_index)``). ``theta_true`` is either ``"random"``,
    drawn uniformly on the torus from the run's generator, or a vector.
    """

    d: int
    epsilon: float
    k_max: int
    G: int | None = None
    noise: NoiseModel | None = None
    seed: int | tuple[int, ...] = 0
    m_max: int = DEFAULT_M_MAX
    theta_true: str | tuple[float, ...] = "random"

    def __post_init__(self):
        if int(self.d) != self.d or self.d < 1:
            raise ConfigError(f"d must be a positive integer, got {self.d}")
        if not 0.0 < self.epsilon < 1.0:
            raise ConfigError(f"epsilon must lie in (0, 1), got {self.epsilon}")
        if int(self.k_max) != self.k_max or self.k_max < 1:
            raise ConfigError(f"k_max must be >= 1, got {self.k_max}")
        if int(self.m_max) != self.m_max or self.m_max < 1:
            raise ConfigError(f"m_max must be >= 1, got {self.m_max}")
        if self.G is None:
            object.__setattr__(self, "G", default_grid_size(self.d))
        noise = self.noise if self.noise is not None else NoiseModel.noiseless(self.d)
        if not isinstance(noise, NoiseModel):
            noise = NoiseModel(tuple(noise))
        if len(noise.gammas) != self.d:
            raise ConfigError(f"need {self.d} dephasing rates, got {len(noise.gammas)}")
        object.__setattr__(self, "noise", noise)
        if isinstance(self.seed, (list, tuple)):
            object.__setattr__(self, "seed", tuple(int(s) for s in self.seed))
        if not isinstance(self.theta_true, str):
            theta = tuple(float(t) for t in np.atleast_1d(self.theta_true))
            if len(theta) != self.d:
                raise ConfigError(f"theta_true must have {self.d} entries")
            object.__setattr__(self, "theta_true", theta)
        elif self.theta_true != "random":
            raise ConfigError(f"theta_true must be 'random' or a vector, got {self.theta_true!r}")

    def to_dict(self) -> dict:
        return {
            "d": self.d,
            "epsilon": self.epsilon,
            "k_max": self.k_max,
            "G": self.G,
            "gammas": list(self.noise.gammas),
            "seed": list(self.seed) if isinstance(self.seed, tuple) else self.seed,
            "m_max": self.m_max,
            "theta_true": self.theta_true if isinstance(self.theta_true, str) else list(self.theta_true),
        }

    @classmethod
    def from_dict(cls, data: dict) -> "RunConfig":
        data = dict(data)
        data["noise"] = NoiseModel(tuple(data.pop("gammas", ())) or (0.0,) * data["d"])
        if isinstance(data.get("seed"), list):
            data["seed"] = tuple(data["seed"])
        return cls(**data)


@dataclass
class RoundRecord:
    k: int
    M: int
    m_k: int
    outcomes: list[tuple[tuple[float, ...], int]]
    estimate: np.ndarray
    covariance: np.ndarray
    p_half_final: float
    cumulative_resources: int
    truth_in_C: bool
    stalled: bool = False


@dataclass
class RunResult:
    config: RunConfig
    theta_true: np.ndarray
    records: list[RoundRecord] = field(default_factory=list)
    abort_reason: str | None = None

    @property
    def aborted(self) -> bool:
        return self.abort_reason is not None

    @property
    def stalled(self) -> bool:
        return any(r.stalled for r in self.records)

    @property
    def flagged(self) -> bool:
        return self.aborted or self.stalled

    @property
    def estimate(self) -> np.ndarray | None:
        return self.records[-1].estimate if self.records else None

    @property
    def total_resources(self) -> int:
        return total_resources(self.records) if self.records else 0


@dataclass
class RunState:
    grid: PosteriorGrid
    rng: np.random.Generator
    theta_true: np.ndarray
    k: int = 0
    resources: int = 0


def measurement_number(k: int, noise: NoiseModel | None = None) -> int:
    """Controlled-gate repetitions in round k: ``2**k``, capped at
    ``floor(1/Gamma_j)`` (at least 1) for every dephased register."""
    M = 2**k
    if noise is not None:
        for g in noise.gammas:
            if g > 0:
                M = min(M, max(1, int(np.floor(1.0 / g))))
    return M


def sample_outcome(rng: np.random.Generator, theta_true, phi, M: int, noise: NoiseModel | None = None) -> int:
    """Draw one ancilla outcome from the (dephased) outcome distribution."""
    damp = None if noise is None or noise.is_noiseless else noise.damping(M)
    probs = _probabilities(theta_true, phi, M, damp)
    cdf = np.cumsum(np.clip(probs, 0.0, None))
    return int(min(np.searchsorted(cdf, rng.random() * cdf[-1], side="right"), probs.size - 1))


def truth_in_hypercube(theta_true, center, k: int) -> bool:
    """Whether the true phases lie in the round-k hypercube around ``center``.

    The half-width is at most pi/2, so comparing nearest images is the same as
    interval containment in the unwrapped coordinates of a cut domain.
    """
    half = np.pi / 2 ** (k + 1)
    return bool(np.all(np.abs(wrap_to_pi(np.asarray(theta_true) - center)) <= half))


def start_run(config: RunConfig) -> RunState:
    rng = np.random.default_rng(config.seed)
    if config.theta_true == "random":
        theta = rng.uniform(0.0, TWO_PI, size=config.d)
    else:
        theta = np.mod(np.asarray(config.theta_true, dtype=float), TWO_PI)
    return RunState(grid=init_uniform_grid(config.d, config.G), rng=rng, theta_true=theta)


def run_round(state: RunState, config: RunConfig) -> RoundRecord:
    """Measure at fixed M until P_half exceeds ``1 - epsilon`` (or ``m_max``), then cut.

    Advances ``state`` in place. Degenerate posteriors propagate as
    :class:`DegenerateUpdateError` / :class:`DegenerateCutError` /
    :class:`UndefinedMeanError`.
    """
    k = state.k
    if k >= config.k_max:
        raise ConfigError(f"round {k} exceeds k_max={config.k_max}")
    M = measurement_number(k, config.noise)
    noise = config.noise
    grid = state.grid
    outcomes = []
    ph, estimate = 0.0, None
    threshold = 1.0 - config.epsilon
    while ph <= threshold and len(outcomes) < config.m_max:
        phi = state.rng.uniform(0.0, TWO_PI, size=config.d + 1)
        o = sample_outcome(state.rng, state.theta_true, phi, M, noise)
        grid = bayes_update(grid, o, phi, M, noise)
        outcomes.append((tuple(phi.tolist()), o))
        try:
            estimate = circular_mean_estimate(grid)
        except UndefinedMeanError:
            estimate, ph = None, 0.0
            continue
        ph = p_half(grid, estimate, k)

    stalled = ph <= threshold
    if estimate is None:
        raise UndefinedMeanError(f"no estimate available to cut round {k}")
    if stalled:
        log.warning("round %d stalled after %d measurements (P_half=%.4g)", k, len(outcomes), ph)
    V = covariance_matrix(grid, estimate)
    state.resources += len(outcomes) * M
    record = RoundRecord(
        k=k,
        M=M,
        m_k=len(outcomes),
        outcomes=outcomes,
        estimate=estimate,
        covariance=V,
        p_half_final=ph,
        cumulative_resources=state.resources,
        truth_in_C=truth_in_hypercube(state.theta_true, estimate, k),
        stalled=stalled,
    )
    state.grid = cut_and_regrid(grid, estimate, k)
    state.k = k + 1
    return record


def run_estimation(config: RunConfig) -> RunResult:
    """Run rounds ``0 .. k_max-1`` from the uniform prior.

    A degenerate posterior ends the run early; the result then carries
    ``abort_reason`` and the records of the completed rounds.
    """
    state = start_run(config)
    result = RunResult(config=config, theta_true=state.theta_true)
    while state.k < config.k_max:
        try:
            result.records.append(run_round(state, config))
        except (DegenerateUpdateError, DegenerateCutError, UndefinedMeanError) as exc:
            result.abort_reason = f"round {state.k}: {exc}"
            log.warning("run aborted: %s", result.abort_reason)
            break
    return result


def total_resources(records) -> int:
    """Total controlled-gate applications ``sum_k m_k M_k``."""
    if not records:
        raise ValueError("no rounds recorded")
    return int(sum(r.m_k * r.M for r in records))
