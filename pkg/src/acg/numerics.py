"""Dense linear algebra and exact multivariate-Gaussian utilities.

Vectors and matrices are plain float64 ndarrays. Everything is deterministic
given its inputs; random draws consume an explicit generator so the caller
owns reproducibility.
"""

from __future__ import annotations

import numpy as np
from scipy.linalg import solve_triangular

from .errors import DimensionMismatch, IndexOutOfRange, NotPositiveDefinite

__all__ = [
    "RngStream",
    "rng_stream",
    "branch_stream",
    "cholesky",
    "solve_spd",
    "MultivariateGaussian",
]

# All randomness flows through numpy PCG64 generators. PCG64 has published
# constants and a fixed stream per seed, so seeded tests reproduce bit-exactly
# across platforms.
RngStream = np.random.Generator


def rng_stream(seed: int) -> RngStream:
    """Root generator for a run. Identical seed, identical sample sequence."""
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(seed)))


def branch_stream(seed: int, index: int) -> RngStream:
    """Independent child stream for parallel branch `index`.

    (seed, index) is mixed through SeedSequence's spawn-key hashing, so
    sibling streams are statistically independent and stable across runs.
    """
    ss = np.random.SeedSequence(seed, spawn_key=(index,))
    return np.random.Generator(np.random.PCG64(ss))


def _as_matrix(m) -> np.ndarray:
    m = np.asarray(m, dtype=float)
    if m.ndim != 2 or m.shape[0] != m.shape[1]:
        raise DimensionMismatch(f"expected a square matrix, got shape {m.shape}")
    return m


def cholesky(m) -> np.ndarray:
    """Lower-triangular L with L @ L.T == m.

    Raises NotPositiveDefinite when m has a non-positive pivot.
    """
    m = _as_matrix(m)
    try:
        return np.linalg.cholesky(m)
    except np.linalg.LinAlgError as exc:
        raise NotPositiveDefinite(str(exc)) from exc


def solve_spd(m, b) -> np.ndarray:
    """Solve m @ x = b for SPD m via Cholesky.

    b may be a vector (d,) or a stack of right-hand sides (d, k).
    """
    m = _as_matrix(m)
    b = np.asarray(b, dtype=float)
    if b.shape[0] != m.shape[0]:
        raise DimensionMismatch(f"rhs length {b.shape[0]} != matrix dim {m.shape[0]}")
    L = cholesky(m)
    y = solve_triangular(L, b, lower=True, check_finite=False)
    return solve_triangular(L.T, y, lower=False, check_finite=False)


def _check_index_set(idx, dim: int, *, allow_empty: bool = True) -> np.ndarray:
    idx = np.asarray(idx, dtype=int).ravel()
    if idx.size == 0:
        if allow_empty:
            return idx
        raise IndexOutOfRange("empty index set")
    if idx.min() < 0 or idx.max() >= dim:
        raise IndexOutOfRange(f"indices must lie in [0, {dim})")
    if np.unique(idx).size != idx.size:
        raise IndexOutOfRange("duplicate indices")
    return idx


class MultivariateGaussian:
    """Gaussian N(mean, cov) with an SPD covariance.

    The covariance is symmetrized ((M + M.T) / 2) on construction; Schur
    complements drift slightly off symmetric in floating point. Cholesky
    failure raises NotPositiveDefinite. Instances are immutable.
    """

    def __init__(self, mean, cov):
        mean = np.asarray(mean, dtype=float).ravel()
        cov = _as_matrix(cov)
        if cov.shape[0] != mean.size:
            raise DimensionMismatch(
                f"mean dim {mean.size} != cov dim {cov.shape[0]}"
            )
        if not (np.all(np.isfinite(mean)) and np.all(np.isfinite(cov))):
            raise ValueError("mean/cov must be finite")
        cov = 0.5 * (cov + cov.T)
        self.mean = mean
        self.cov = cov
        self.mean.flags.writeable = False
        self.cov.flags.writeable = False
        self._chol = cholesky(cov)  # validates SPD up front

    @property
    def dim(self) -> int:
        return self.mean.size

    @property
    def chol(self) -> np.ndarray:
        """Cached lower Cholesky factor of cov."""
        return self._chol

    def sample(self, rng: RngStream, size: int | None = None) -> np.ndarray:
        """Draw mean + L @ z with z iid standard normal from `rng`.

        Returns (dim,) for size=None, else (size, dim).
        """
        if size is None:
            z = rng.standard_normal(self.dim)
            return self.mean + self._chol @ z
        z = rng.standard_normal((size, self.dim))
        return self.mean + z @ self._chol.T

    def logpdf(self, x) -> float | np.ndarray:
        """Exact Gaussian log-density at x ((dim,) or (n, dim))."""
        x = np.asarray(x, dtype=float)
        single = x.ndim == 1
        pts = np.atleast_2d(x)
        if pts.shape[1] != self.dim:
            raise DimensionMismatch(f"point dim {pts.shape[1]} != {self.dim}")
        diff = pts - self.mean
        w = solve_triangular(self._chol, diff.T, lower=True, check_finite=False)
        maha = np.sum(w * w, axis=0)
        logdet = 2.0 * np.sum(np.log(np.diag(self._chol)))
        out = -0.5 * (self.dim * np.log(2.0 * np.pi) + logdet + maha)
        return float(out[0]) if single else out

    def marginal(self, idx) -> "MultivariateGaussian":
        """Restrict mean/cov to the coordinates in idx (in the given order)."""
        idx = _check_index_set(idx, self.dim, allow_empty=False)
        return MultivariateGaussian(self.mean[idx], self.cov[np.ix_(idx, idx)])

    def condition(self, obs_idx, obs_vals) -> "MultivariateGaussian":
        """Gaussian conditional over the hidden coordinates given observations.

        Standard formulas: mean = mu_h + S_ho S_oo^-1 (v - mu_o) and
        cov = S_hh - S_ho S_oo^-1 S_oh. A nugget of 1e-10 * trace/d is added
        to S_oo before factorization; grid covariances are near-singular.
        """
        obs_idx = _check_index_set(obs_idx, self.dim)
        obs_vals = np.asarray(obs_vals, dtype=float).ravel()
        if obs_vals.size != obs_idx.size:
            raise DimensionMismatch("observed values do not match index set")
        hid_idx = np.setdiff1d(np.arange(self.dim), obs_idx)
        if hid_idx.size == 0:
            raise IndexOutOfRange("observation set must be a strict subset")
        if obs_idx.size == 0:
            return MultivariateGaussian(self.mean, self.cov)
        s_oo = self.cov[np.ix_(obs_idx, obs_idx)].copy()
        s_oo[np.diag_indices_from(s_oo)] += 1e-10 * np.trace(s_oo) / obs_idx.size
        s_ho = self.cov[np.ix_(hid_idx, obs_idx)]
        gain = solve_spd(s_oo, s_ho.T).T  # S_ho S_oo^-1
        mean = self.mean[hid_idx] + gain @ (obs_vals - self.mean[obs_idx])
        cov = self.cov[np.ix_(hid_idx, hid_idx)] - gain @ s_ho.T
        return MultivariateGaussian(mean, cov)

    def __repr__(self) -> str:
        return f"MultivariateGaussian(dim={self.dim})"
