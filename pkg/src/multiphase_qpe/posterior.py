"""Dense-grid Bayesian posterior over d phases.

The posterior is stored as a density sampled at the midpoints of a regular
``G**d`` grid covering a hypercube of common side length. All integrals use
the midpoint rule. Before the first cut the domain is the full torus
``[0, 2 pi)^d`` and coordinate differences are taken to the nearest image;
after a cut the domain is a small hypercube in unwrapped coordinates.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from functools import lru_cache
from typing import BinaryIO, Sequence, TextIO

import numpy as np

from .circuit import TWO_PI, NoiseModel, _pairs, cosine_weights

MIN_POINTS = 8
MEAN_TOL = 1e-12


class ResolutionError(ValueError):
    pass


class DegenerateUpdateError(RuntimeError):
    """The likelihood vanished on every grid point."""


class DegenerateCutError(RuntimeError):
    """No posterior mass lies inside the hypercube to cut to."""


class UndefinedMeanError(RuntimeError):
    """The circular mean of some marginal is undefined (zero resultant)."""


class PSDViolationError(ValueError):
    pass


def wrap_to_pi(x):
    """Map angles to [-pi, pi)."""
    return np.mod(np.asarray(x) + np.pi, TWO_PI) - np.pi


@dataclass(frozen=True)
class PosteriorGrid:
    """Posterior density on a hypercube ``lower + [0, side)^d``.

    ``cut_round`` is the round index of the last cut (None on the torus).
    """

    d: int
    lower: np.ndarray
    side: float
    density: np.ndarray
    wrap: bool = True
    cut_round: int | None = None

    @property
    def G(self) -> int:
        return self.density.shape[0]

    @property
    def cell_width(self) -> float:
        return self.side / self.G

    @property
    def cell_volume(self) -> float:
        return self.cell_width**self.d

    @property
    def center(self) -> np.ndarray:
        return self.lower + 0.5 * self.side

    @property
    def _key(self):
        return tuple(float(x) for x in self.lower), float(self.side), self.G

    def axes(self) -> list[np.ndarray]:
        """Midpoint coordinates along each axis (read-only)."""
        return _axes(*self._key)

    def mass(self) -> float:
        return float(self.density.sum() * self.cell_volume)

    def cell_masses(self) -> np.ndarray:
        return self.density * self.cell_volume

    def offsets(self, center: Sequence[float]) -> list[np.ndarray]:
        """Per-axis displacement of the midpoints from ``center``."""
        out = []
        for ax, c in zip(self.axes(), center):
            diff = ax - c
            out.append(wrap_to_pi(diff) if self.wrap else diff)
        return out


def default_grid_size(d: int) -> int:
    return 64 if d <= 2 else 32 if d == 3 else 16


def init_uniform_grid(d: int, G: int) -> PosteriorGrid:
    """Uniform prior ``1/(2 pi)^d`` on the full torus."""
    if d < 1:
        raise ValueError(f"d must be >= 1, got {d}")
    if G < MIN_POINTS:
        raise ResolutionError(f"need at least {MIN_POINTS} points per axis, got {G}")
    density = np.full((G,) * d, TWO_PI**-d)
    return PosteriorGrid(d=d, lower=np.zeros(d), side=TWO_PI, density=density)


@lru_cache(maxsize=64)
def _axes(lower: tuple, side: float, G: int) -> list[np.ndarray]:
    mid = (np.arange(G) + 0.5) * (side / G)
    out = []
    for lo in lower:
        ax = lo + mid
        ax.flags.writeable = False
        out.append(ax)
    return out


@lru_cache(maxsize=64)
def _phasor_table(lower: tuple, side: float, G: int, M: int):
    """Real and imaginary parts of ``exp(i M vartheta_j)`` (single terms) and
    ``exp(i M (vartheta_j - vartheta_k))`` (cross terms), shaped to broadcast
    over the ``G**d`` grid. Fixed for a whole round, hence cached."""
    d = len(lower)
    z = []
    for j, ax in enumerate(_axes(lower, side, G)):
        shape = [1] * d
        shape[j] = G
        z.append(np.exp(1j * (M * ax)).reshape(shape))
    single = [(zj.real, zj.imag) for zj in z]
    cross = []
    for j, k in zip(*_pairs(d)):
        zx = z[j - 1] * np.conj(z[k - 1])
        cross.append((zx.real, zx.imag))
    return single, cross


def grid_likelihood(grid: PosteriorGrid, o: int, phi, M: int, noise: NoiseModel | None = None):
    """``P(o | vartheta, phi, M)`` at every midpoint, shape ``(G,)*d``."""
    n = grid.d + 1
    damp = None if noise is None or noise.is_noiseless else noise.damping(M)
    a, b = cosine_weights(phi, o, damp)
    single, cross = _phasor_table(*grid._key, int(M))
    total = np.full(grid.density.shape, float(n))
    for (re, im), c in zip(single, a):
        total += 2.0 * (re * c.real - im * c.imag)
    for (re, im), c in zip(cross, b):
        total += 2.0 * (re * c.real - im * c.imag)
    return total / n**2


def bayes_update(grid: PosteriorGrid, o: int, phi, M: int, noise: NoiseModel | None = None):
    """Multiply the density by the outcome likelihood and renormalize."""
    if not 0 <= o <= grid.d:
        raise ValueError(f"outcome {o} out of range for d={grid.d}")
    dens = grid.density * grid_likelihood(grid, o, phi, M, noise)
    np.maximum(dens, 0.0, out=dens)
    total = dens.sum() * grid.cell_volume
    if not np.isfinite(total) or total <= 0.0:
        raise DegenerateUpdateError(f"likelihood of outcome {o} vanishes on the grid")
    dens /= total
    return replace(grid, density=dens)


def _marginals(masses: np.ndarray) -> list[np.ndarray]:
    d = masses.ndim
    return [masses.sum(axis=tuple(a for a in range(d) if a != j)) for j in range(d)]


def circular_mean_estimate(grid: PosteriorGrid) -> np.ndarray:
    """Per-axis circular mean ``arg E[exp(i vartheta_j)]``.

    The result is the representative closest to the domain center, so after
    a cut it lives in the same unwrapped coordinates as the grid.
    """
    est = np.empty(grid.d)
    for j, (ax, marg) in enumerate(zip(grid.axes(), _marginals(grid.cell_masses()))):
        z = np.dot(marg, np.exp(1j * ax))
        if abs(z) <= MEAN_TOL:
            raise UndefinedMeanError(f"circular mean undefined along axis {j}")
        c = grid.center[j]
        est[j] = c + wrap_to_pi(np.angle(z) - c)
    return est


def p_half(grid: PosteriorGrid, center, k: int) -> float:
    """Posterior mass of the hypercube of half-width ``pi / 2**(k+1)`` around ``center``.

    A cell counts when its midpoint lies inside.
    """
    half = np.pi / 2 ** (k + 1)
    masks = [np.abs(off) <= half for off in grid.offsets(center)]
    if not all(m.any() for m in masks):
        return 0.0
    return float(grid.density[np.ix_(*masks)].sum() * grid.cell_volume)


def covariance_matrix(grid: PosteriorGrid, center) -> np.ndarray:
    """``V_ij = 4 E[sin((vartheta_i - c_i)/2) sin((vartheta_j - c_j)/2)]``."""
    d = grid.d
    s = [np.sin(off / 2) for off in grid.offsets(center)]
    masses = grid.cell_masses()
    V = np.empty((d, d))
    for i in range(d):
        for j in range(i, d):
            keep = sorted({i, j})
            pair = masses.sum(axis=tuple(a for a in range(d) if a not in keep))
            if i == j:
                V[i, i] = 4.0 * np.dot(pair, s[i] ** 2)
            else:
                V[i, j] = V[j, i] = 4.0 * s[i] @ pair @ s[j]
    return V


def linear_combination_variance(V, n) -> float:
    """Variance ``n^T V n`` of the linear combination ``n . theta``."""
    V = np.asarray(V, dtype=float)
    n = np.asarray(n, dtype=float)
    val = float(n @ V @ n)
    if val < -1e-10:
        raise PSDViolationError(f"n^T V n = {val} is negative")
    return max(val, 0.0)


def _interp_weights(old_axis_lower, old_width, G_old, new_points, periodic):
    """Row-stochastic (or zero) linear-interpolation matrix from old to new midpoints."""
    u = (new_points - old_axis_lower) / old_width - 0.5
    W = np.zeros((new_points.size, G_old))
    rows = np.arange(new_points.size)
    if periodic:
        i0 = np.floor(u).astype(int)
        t = u - i0
        np.add.at(W, (rows, i0 % G_old), 1.0 - t)
        np.add.at(W, (rows, (i0 + 1) % G_old), t)
        return W
    inside = (u >= -0.5) & (u <= G_old - 0.5)
    uc = np.clip(u, 0.0, G_old - 1.0)
    i0 = np.minimum(np.floor(uc).astype(int), G_old - 2)
    t = uc - i0
    W[rows, i0] = 1.0 - t
    W[rows, i0 + 1] = t
    W[~inside] = 0.0
    return W


def cut_and_regrid(grid: PosteriorGrid, center, k: int) -> PosteriorGrid:
    """Restrict the posterior to the hypercube of side ``pi / 2**k`` around ``center``.

    The density is resampled on a fresh ``G**d`` grid over the hypercube by
    multilinear interpolation (periodic on the torus), clamped at zero and
    renormalized.
    """
    if p_half(grid, center, k) <= 0.0:
        raise DegenerateCutError(f"no posterior mass inside the round-{k} hypercube")
    center = np.asarray(center, dtype=float)
    side = np.pi / 2**k
    lower = center - side / 2
    G = grid.G
    new_mid = (np.arange(G) + 0.5) * (side / G)
    dens = grid.density
    for j in range(grid.d):
        W = _interp_weights(grid.lower[j], grid.cell_width, G, lower[j] + new_mid, grid.wrap)
        dens = np.moveaxis(np.tensordot(W, dens, axes=([1], [j])), 0, j)
    dens = np.maximum(dens, 0.0)
    total = dens.sum() * (side / G) ** grid.d
    if not np.isfinite(total) or total <= 0.0:
        raise DegenerateCutError("interpolated density vanished on the cut domain")
    return PosteriorGrid(
        d=grid.d, lower=lower, side=side, density=dens / total, wrap=False, cut_round=k
    )


def dump_grid(grid: PosteriorGrid, fh: TextIO | BinaryIO, binary: bool = False) -> None:
    """Write one record per cell (d coordinates, then density) in row-major order."""
    mesh = np.meshgrid(*grid.axes(), indexing="ij")
    table = np.column_stack([m.ravel() for m in mesh] + [grid.density.ravel()])
    if binary:
        fh.write(table.astype("<f8").tobytes())
    else:
        header = " ".join([f"theta{j + 1}" for j in range(grid.d)] + ["density"])
        np.savetxt(fh, table, header=header, fmt="%.17g")
