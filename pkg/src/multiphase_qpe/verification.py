"""Equivalence batteries between the closed-form outcome model and its oracles.

Case ``i`` of a battery draws everything from ``default_rng((seed, i))``, so
a failing case can be replayed on its own from the reported seed pair.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .circuit import (
    TWO_PI,
    CircuitSpec,
    NoiseModel,
    noisy_outcome_probabilities,
    noon_outcome_probabilities,
    outcome_probabilities,
    simulate_circuit_probabilities,
    simulate_noisy_circuit_probabilities,
)

TOLERANCES = {"oracle": 1e-12, "kraus": 1e-10, "noiseless_limit": 0.0, "noon": 1e-12}


@dataclass
class BatteryResult:
    name: str
    tolerance: float
    n_cases: int = 0
    max_deviation: float = 0.0
    failures: list[tuple[tuple[int, int], float]] = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return not self.failures

    def add(self, case_seed, deviation: float):
        self.n_cases += 1
        self.max_deviation = max(self.max_deviation, deviation)
        if not deviation <= self.tolerance:
            self.failures.append((case_seed, deviation))


def random_spec(rng: np.random.Generator, d_max: int = 4, log2_M_max: int = 10) -> CircuitSpec:
    d = int(rng.integers(1, d_max + 1))
    M = int(rng.integers(1, 2**log2_M_max + 1))
    return CircuitSpec(rng.uniform(0, TWO_PI, d), rng.uniform(0, TWO_PI, d + 1), M)


def oracle_battery(n_cases: int, seed: int = 0, inject: float = 0.0) -> BatteryResult:
    """Closed form vs state-vector simulation, alternating diagonal and
    Haar-conjugated register unitaries."""
    res = BatteryResult("closed form vs state vector", TOLERANCES["oracle"])
    for i in range(n_cases):
        rng = np.random.default_rng((seed, i))
        spec = random_spec(rng)
        mode = "conjugated" if i % 2 else "diagonal"
        ref = simulate_circuit_probabilities(spec, mode=mode, seed=(seed, i))
        p = outcome_probabilities(spec)
        if inject and i == 0:
            p = p + inject
        res.add((seed, i), float(np.max(np.abs(p - ref))))
    return res


def kraus_battery(n_cases: int, seed: int = 0, gamma_max: float = 0.05) -> BatteryResult:
    """Dephased closed form vs Kraus-channel density-matrix simulation."""
    res = BatteryResult("dephased closed form vs Kraus channel", TOLERANCES["kraus"])
    for i in range(n_cases):
        rng = np.random.default_rng((seed, i, 1))
        spec = random_spec(rng, d_max=3)
        noise = NoiseModel(tuple(rng.uniform(0, gamma_max, spec.d)))
        ref = simulate_noisy_circuit_probabilities(spec, noise, mode="diagonal")
        res.add((seed, i), float(np.max(np.abs(noisy_outcome_probabilities(spec, noise) - ref))))
    return res


def noiseless_limit_battery(n_cases: int, seed: int = 0) -> BatteryResult:
    """Zero dephasing must reproduce the noiseless closed form exactly."""
    res = BatteryResult("zero dephasing vs noiseless closed form", TOLERANCES["noiseless_limit"])
    for i in range(n_cases):
        spec = random_spec(np.random.default_rng((seed, i, 2)))
        p0 = noisy_outcome_probabilities(spec, NoiseModel.noiseless(spec.d))
        res.add((seed, i), float(np.max(np.abs(p0 - outcome_probabilities(spec)))))
    return res


def noon_battery(n_cases: int, seed: int = 0) -> BatteryResult:
    """NOON interferometer with control phases ``phi / M`` vs the qudit circuit."""
    res = BatteryResult("NOON state vs qudit circuit", TOLERANCES["noon"])
    for i in range(n_cases):
        spec = random_spec(np.random.default_rng((seed, i, 3)))
        p = noon_outcome_probabilities(spec.theta, spec.phi / spec.M, spec.M)
        res.add((seed, i), float(np.max(np.abs(p - outcome_probabilities(spec)))))
    return res


def run_all(n_cases: int = 1000, seed: int = 0, inject: float = 0.0) -> list[BatteryResult]:
    n_small = max(1, n_cases // 5)
    return [
        oracle_battery(n_cases, seed, inject),
        kraus_battery(n_small, seed),
        noiseless_limit_battery(n_small, seed),
        noon_battery(n_small, seed),
    ]
