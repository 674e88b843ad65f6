"""Measurement statistics of the parallel multiphase estimation circuit.

The circuit prepares a (d+1)-level ancilla with a generalized Hadamard gate,
imprints control phases, applies the controlled-U gate ``M`` times (ancilla
level ``j`` drives ``U`` on register ``j``), applies a second Hadamard and
measures the ancilla. Three routes to the outcome distribution live here:

* :func:`outcome_probabilities` / :func:`noisy_outcome_probabilities`, the
  closed form (with optional per-register dephasing);
* :func:`simulate_circuit_probabilities` and
  :func:`simulate_noisy_circuit_probabilities`, a state-vector / Kraus
  simulation of the full ancilla-register system used as an oracle;
* :func:`noon_outcome_probabilities`, the multimode NOON-state realization.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import lru_cache
from typing import Sequence

import numpy as np

TWO_PI = 2.0 * np.pi


class InvalidDimensionError(ValueError):
    pass


class InvalidNoiseError(ValueError):
    pass


class CircuitConsistencyError(RuntimeError):
    """Raised when the state-vector simulation violates a physical invariant."""


@dataclass(frozen=True)
class NoiseModel:
    """Per-register dephasing rates, in units of inverse gate applications."""

    gammas: tuple[float, ...] = ()

    def __post_init__(self):
        gammas = tuple(float(g) for g in self.gammas)
        if any(not np.isfinite(g) or g < 0 for g in gammas):
            raise InvalidNoiseError(f"dephasing rates must be finite and >= 0, got {gammas}")
        object.__setattr__(self, "gammas", gammas)

    @classmethod
    def noiseless(cls, d: int) -> "NoiseModel":
        return cls((0.0,) * d)

    @property
    def is_noiseless(self) -> bool:
        return all(g == 0.0 for g in self.gammas)

    def damping(self, M: int) -> np.ndarray:
        """Return ``exp(-Gamma_l * M)`` for ancilla levels l = 0..d (Gamma_0 = 0)."""
        return np.exp(-np.concatenate(([0.0], self.gammas)) * M)


@dataclass(frozen=True)
class CircuitSpec:
    """One configuration of the basic measurement step.

    ``theta`` holds the d unknown eigenphases (theta_0 = 0 is implicit) and
    ``phi`` the d+1 control phases. Only the differences ``phi_j - phi_0``
    enter the statistics, so fixing ``phi_0 = 0`` loses nothing; all d+1
    are stored to mirror the circuit.
    """

    theta: np.ndarray
    phi: np.ndarray
    M: int = 1
    d: int = field(init=False)

    def __post_init__(self):
        theta = np.mod(np.atleast_1d(np.asarray(self.theta, dtype=float)), TWO_PI)
        phi = np.mod(np.atleast_1d(np.asarray(self.phi, dtype=float)), TWO_PI)
        if theta.ndim != 1 or theta.size < 1:
            raise InvalidDimensionError("theta must be a non-empty vector")
        if phi.shape != (theta.size + 1,):
            raise InvalidDimensionError(
                f"phi must have d+1 = {theta.size + 1} entries, got {phi.size}"
            )
        if int(self.M) != self.M or self.M < 1:
            raise ValueError(f"M must be a positive integer, got {self.M}")
        object.__setattr__(self, "theta", theta)
        object.__setattr__(self, "phi", phi)
        object.__setattr__(self, "M", int(self.M))
        object.__setattr__(self, "d", theta.size)


# ---------------------------------------------------------------- gates


def _phase_matrix(angles: np.ndarray) -> np.ndarray:
    n = angles.shape[0]
    return np.exp(1j * angles) / np.sqrt(n)


def hadamard_matrix(d: int) -> np.ndarray:
    """Generalized Hadamard ``<k|H|l> = exp(2 pi i k l / (d+1)) / sqrt(d+1)``."""
    if int(d) != d or d < 1:
        raise InvalidDimensionError(f"d must be a positive integer, got {d}")
    n = int(d) + 1
    k = np.arange(n)
    # reducing kl mod n keeps the angles identical to the explicit beam-splitter tables
    return _phase_matrix(TWO_PI * (np.outer(k, k) % n) / n)


def phase_gate(phi: Sequence[float]) -> np.ndarray:
    return np.diag(np.exp(1j * np.asarray(phi, dtype=float)))


def multiport_bs_matrix(d: int, gamma: float = np.pi / 2) -> np.ndarray:
    """Unitary of the (d+1)-port beam splitter realizing the Hadamard gate.

    ``d = 2`` gives the tritter, ``d = 3`` the quarter parametrized by
    ``gamma`` (equal to the 4-level Hadamard at ``gamma = pi/2``). Other
    dimensions fall back to :func:`hadamard_matrix` and ignore ``gamma``.
    """
    if d == 2:
        w1, w2 = TWO_PI * 1 / 3, TWO_PI * 2 / 3
        return _phase_matrix(np.array([[0.0, 0.0, 0.0], [0.0, w1, w2], [0.0, w2, w1]]))
    if d == 3:
        g, pi = float(gamma), np.pi
        return _phase_matrix(
            np.array(
                [
                    [0.0, 0.0, 0.0, 0.0],
                    [0.0, g, pi, pi + g],
                    [0.0, pi, 0.0, pi],
                    [0.0, pi + g, pi, g],
                ]
            )
        )
    return hadamard_matrix(d)


def is_unitary(U: np.ndarray, atol: float = 1e-12) -> bool:
    U = np.asarray(U)
    return U.ndim == 2 and U.shape[0] == U.shape[1] and np.allclose(
        U.conj().T @ U, np.eye(U.shape[0]), rtol=0.0, atol=atol
    )


# ---------------------------------------------------------- closed form


@lru_cache(maxsize=None)
def _pairs(d: int) -> tuple[np.ndarray, np.ndarray]:
    """Register index pairs (j, k), 1 <= j < k <= d, of the cross terms."""
    j, k = np.triu_indices(d, 1)
    return j + 1, k + 1


@lru_cache(maxsize=None)
def _fourier_phases(n: int) -> np.ndarray:
    """``exp(2 pi i o l / n)`` indexed by (o, l)."""
    ls = np.arange(n)
    return np.exp(1j * TWO_PI * (np.outer(ls, ls) % n) / n)


def cosine_weights(phi, o, damp=None):
    """Complex weights of the single and cross cosine terms for outcome(s) ``o``.

    With ``z_j = exp(i M theta_j)`` the outcome probability reads
    ``[n + 2 sum_j Re(z_j a_j) + 2 sum_{j<k} Re(z_j conj(z_k) b_jk)] / n**2``
    where ``a_j = D_j exp(i beta_j)`` and ``b_jk = D_j D_k exp(i gamma_jk)``;
    ``D`` are dephasing factors (1 when noiseless). ``o`` may be an array, in
    which case the weights gain a leading outcome axis.
    """
    phi = np.asarray(phi, dtype=float)
    n = phi.size
    w = np.exp(1j * phi) * _fourier_phases(n)[o]
    if damp is not None:
        w = w * damp
    single = w[..., 1:] * np.conj(w[..., :1])
    j, k = _pairs(n - 1)
    cross = w[..., j] * np.conj(w[..., k])
    return single, cross


def _probabilities(theta, phi, M, damp=None) -> np.ndarray:
    theta = np.asarray(theta, dtype=float)
    n = theta.size + 1
    z = np.exp(1j * (M * theta))
    j, k = _pairs(n - 1)
    zx = z[j - 1] * np.conj(z[k - 1])
    single, cross = cosine_weights(phi, np.arange(n), damp)
    total = n + 2.0 * np.real(single @ z) + 2.0 * np.real(cross @ zx)
    return total / n**2


def outcome_probabilities(spec: CircuitSpec) -> np.ndarray:
    """Probability of each ancilla outcome o = 0..d for an ideal circuit."""
    return _probabilities(spec.theta, spec.phi, spec.M)


def noisy_outcome_probabilities(spec: CircuitSpec, noise: NoiseModel) -> np.ndarray:
    """Outcome distribution with single-phase terms damped by ``exp(-Gamma_j M)``
    and cross terms by ``exp(-(Gamma_j + Gamma_k) M)``."""
    if not isinstance(noise, NoiseModel):
        noise = NoiseModel(noise)
    if len(noise.gammas) != spec.d:
        raise InvalidNoiseError(f"need {spec.d} dephasing rates, got {len(noise.gammas)}")
    return _probabilities(spec.theta, spec.phi, spec.M, noise.damping(spec.M))


# ---------------------------------------------------- state-vector oracle


def random_unitary(n: int, rng: np.random.Generator) -> np.ndarray:
    """Haar-random unitary via QR of a complex Gaussian matrix."""
    z = (rng.standard_normal((n, n)) + 1j * rng.standard_normal((n, n))) / np.sqrt(2)
    q, r = np.linalg.qr(z)
    return q * (np.diag(r) / np.abs(np.diag(r)))


def _register_unitary(spec: CircuitSpec, mode: str, seed):
    """Return (U^M, U, register states) for the requested representation."""
    n = spec.d + 1
    eig = np.concatenate(([0.0], spec.theta))
    if mode == "diagonal":
        basis = np.eye(n, dtype=complex)
        return np.diag(np.exp(1j * spec.M * eig)), np.diag(np.exp(1j * eig)), basis
    if mode == "conjugated":
        V = random_unitary(n, np.random.default_rng(seed))
        UM = V @ np.diag(np.exp(1j * spec.M * eig)) @ V.conj().T
        U = V @ np.diag(np.exp(1j * eig)) @ V.conj().T
        return UM, U, V
    raise ValueError(f"unknown register mode {mode!r}")


def _apply_on_axis(op: np.ndarray, psi: np.ndarray, axis: int) -> np.ndarray:
    return np.moveaxis(np.tensordot(op, psi, axes=([1], [axis])), 0, axis)


def _register_marginals(psi: np.ndarray) -> list[np.ndarray]:
    out = []
    for ax in range(1, psi.ndim):
        mat = np.moveaxis(psi, ax, 0).reshape(psi.shape[ax], -1)
        out.append(mat @ mat.conj().T)
    return out


def _evolve_to_readout(spec: CircuitSpec, mode: str, seed, repeated: bool) -> np.ndarray:
    """Joint ancilla-register state just after the controlled-U block.

    Axis 0 is the ancilla, axis j the register carrying the j-th eigenstate.
    """
    d, n = spec.d, spec.d + 1
    UM, U, states = _register_unitary(spec, mode, seed)
    if not is_unitary(UM, atol=1e-10):
        raise CircuitConsistencyError("register unitary is not unitary")

    psi = np.zeros(n, dtype=complex)
    psi[0] = 1.0
    for j in range(1, n):
        psi = np.multiply.outer(psi, states[:, j])

    before = _register_marginals(psi)
    psi = _apply_on_axis(hadamard_matrix(d), psi, 0)
    psi = _apply_on_axis(phase_gate(spec.phi), psi, 0)
    steps, op = (spec.M, U) if repeated else (1, UM)
    for _ in range(steps):
        for j in range(1, n):
            # ancilla level j drives U on register j; the other registers idle
            psi[j] = _apply_on_axis(op, psi[j], j - 1)
    after = _register_marginals(psi)
    for b, a in zip(before, after):
        if not np.allclose(a, b, rtol=0.0, atol=1e-9):
            raise CircuitConsistencyError("register state changed during phase imprinting")
    return psi


def simulate_circuit_probabilities(
    spec: CircuitSpec, mode: str = "diagonal", seed=None, repeated: bool = False
) -> np.ndarray:
    """Outcome distribution from a full state-vector simulation.

    Parameters
    ----------
    spec : CircuitSpec
    mode : {"diagonal", "conjugated"}
        ``"diagonal"`` uses ``U = diag(1, e^{i theta_1}, ...)`` with basis
        vectors as eigenstates; ``"conjugated"`` rotates U by a Haar-random
        unitary drawn from ``seed`` and plants the rotated eigenvectors.
    repeated : bool
        Apply the controlled gate ``M`` times instead of once as ``U^M``.
    """
    psi = _evolve_to_readout(spec, mode, seed, repeated)
    psi = _apply_on_axis(hadamard_matrix(spec.d), psi, 0)
    probs = np.sum(np.abs(psi) ** 2, axis=tuple(range(1, psi.ndim)))
    if abs(probs.sum() - 1.0) > 1e-10:
        raise CircuitConsistencyError(f"probabilities sum to {probs.sum()!r}")
    return probs


def dephasing_kraus(noise: NoiseModel, M: int) -> list[np.ndarray]:
    """Kraus operators of the qudit phase-damping channel."""
    damp = noise.damping(M)
    ops = [np.diag(damp)]
    for j in range(1, damp.size):
        K = np.zeros((damp.size, damp.size))
        K[j, j] = np.sqrt(max(0.0, 1.0 - damp[j] ** 2))
        ops.append(K)
    return ops


def apply_dephasing_channel(rho: np.ndarray, noise: NoiseModel, M: int) -> np.ndarray:
    """Apply the dephasing channel sum_j K_j rho K_j to an ancilla density matrix.

    Off-diagonal entry (m, n) is scaled by ``exp(-(Gamma_m + Gamma_n) M)``;
    populations are left untouched.
    """
    rho = np.asarray(rho, dtype=complex)
    n = len(noise.gammas) + 1
    if rho.shape != (n, n):
        raise InvalidDimensionError(f"density matrix must be {n}x{n}, got {rho.shape}")
    return sum(K @ rho @ K.conj().T for K in dephasing_kraus(noise, M))


def simulate_noisy_circuit_probabilities(
    spec: CircuitSpec, noise: NoiseModel, mode: str = "diagonal", seed=None
) -> np.ndarray:
    """Kraus-channel oracle: dephase the ancilla right after phase imprinting."""
    if len(noise.gammas) != spec.d:
        raise InvalidNoiseError(f"need {spec.d} dephasing rates, got {len(noise.gammas)}")
    psi = _evolve_to_readout(spec, mode, seed, repeated=False)
    amp = psi.reshape(spec.d + 1, -1)
    rho = apply_dephasing_channel(amp @ amp.conj().T, noise, spec.M)
    H = hadamard_matrix(spec.d)
    return np.real(np.diag(H @ rho @ H.conj().T)).copy()


# ------------------------------------------------------------ NOON states


def noon_projectors(d: int) -> np.ndarray:
    """Rows are the measurement bras <psi_o| in the (d+1)-dim NOON subspace.

    Basis state l is "all M photons in mode l". The kets carry relative phases
    ``exp(-2 pi i l o / (d+1))`` so that outcome ``o`` lines up label for label
    with the qudit readout; the set of projectors is the same Fourier basis
    either way.
    """
    return hadamard_matrix(d)


def noon_outcome_probabilities(theta, phi, M: int) -> np.ndarray:
    """Outcome distribution for the phase-imprinted multimode NOON state.

    Mode j (mode 0 is the reference arm, theta_0 = 0) picks up
    ``exp(i M (theta_j + phi_j))`` from a single pass of the phase shifts,
    because all M photons travel together.
    """
    theta = np.atleast_1d(np.asarray(theta, dtype=float))
    phi = np.atleast_1d(np.asarray(phi, dtype=float))
    d = theta.size
    if phi.size != d + 1:
        raise InvalidDimensionError(f"phi must have {d + 1} entries")
    if int(M) != M or M < 1:
        raise ValueError("M must be a positive integer")
    full_theta = np.concatenate(([0.0], theta))
    state = np.exp(1j * M * full_theta) * np.exp(1j * M * phi) / np.sqrt(d + 1)
    return np.abs(noon_projectors(d) @ state) ** 2
