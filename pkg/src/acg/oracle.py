"""Independent ground truth used to validate the drivers.

The tree joint q(A,B,C) = q(A,B) q(B,C) / q(B) is composed exactly in
precision form, so driver output distributions can be compared against an
analytic target instead of another sampler.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import (
    DimensionMismatch,
    InconsistentBMarginal,
    NoExactDensity,
    NotPositiveDefinite,
    TooFewSamples,
)
from .numerics import MultivariateGaussian, RngStream, solve_spd

__all__ = [
    "TreeGaussian",
    "compose_tree_joint",
    "factorization_check",
    "wasserstein2_gaussian",
    "empirical_moments",
    "score_fd_check",
]


@dataclass(frozen=True)
class TreeGaussian:
    """Exact joint over A + B + C with its block dimensions."""

    joint: MultivariateGaussian
    dims: tuple[int, int, int]

    def __post_init__(self):
        if sum(self.dims) != self.joint.dim:
            raise DimensionMismatch("block dims do not add up to the joint dim")

    def blocks(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        dA, dB, dC = self.dims
        a = np.arange(dA)
        b = np.arange(dA, dA + dB)
        c = np.arange(dA + dB, dA + dB + dC)
        return a, b, c


def _precision(g: MultivariateGaussian) -> tuple[np.ndarray, np.ndarray]:
    J = solve_spd(g.cov, np.eye(g.dim))
    J = 0.5 * (J + J.T)
    return J, J @ g.mean


def compose_tree_joint(
    q_ab: MultivariateGaussian,
    q_bc: MultivariateGaussian,
    dims: tuple[int, int, int],
) -> TreeGaussian:
    """Compose q(A,B,C) = q(A,B) q(B,C) / q(B) in precision form.

    q_ab is over (A, B), q_bc over (B, C); their B marginals must agree to
    1e-8 in mean and covariance entries. The composition adds the embedded
    pair precisions and subtracts the embedded B precision; likewise for the
    information vectors.
    """
    dA, dB, dC = dims
    if q_ab.dim != dA + dB or q_bc.dim != dB + dC:
        raise DimensionMismatch("pair dims inconsistent with (dA, dB, dC)")
    b_from_ab = q_ab.marginal(np.arange(dA, dA + dB))
    b_from_bc = q_bc.marginal(np.arange(dB))
    gap = max(
        np.max(np.abs(b_from_ab.mean - b_from_bc.mean)),
        np.max(np.abs(b_from_ab.cov - b_from_bc.cov)),
    )
    if gap > 1e-8:
        raise InconsistentBMarginal(f"B marginals differ by {gap:.3e} (> 1e-8)")

    d = dA + dB + dC
    idx_ab = np.arange(dA + dB)
    idx_bc = np.arange(dA, d)
    idx_b = np.arange(dA, dA + dB)

    J = np.zeros((d, d))
    h = np.zeros(d)
    for g, idx in ((q_ab, idx_ab), (q_bc, idx_bc)):
        Jg, hg = _precision(g)
        J[np.ix_(idx, idx)] += Jg
        h[idx] += hg
    Jb, hb = _precision(b_from_ab)
    J[np.ix_(idx_b, idx_b)] -= Jb
    h[idx_b] -= hb

    try:
        cov = solve_spd(J, np.eye(d))
    except NotPositiveDefinite:
        raise
    cov = 0.5 * (cov + cov.T)
    mean = cov @ h
    return TreeGaussian(MultivariateGaussian(mean, cov), (dA, dB, dC))


def factorization_check(
    tg: TreeGaussian,
    q_ab: MultivariateGaussian,
    q_bc: MultivariateGaussian,
    points,
) -> float:
    """max |log q(A,B,C) - log q(A,B) - log q(B,C) + log q(B)| over points."""
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    dA, dB, dC = tg.dims
    if pts.shape[1] != dA + dB + dC:
        raise DimensionMismatch("points must live in the full A+B+C space")
    q_b = q_ab.marginal(np.arange(dA, dA + dB))
    lp_joint = tg.joint.logpdf(pts)
    lp_ab = q_ab.logpdf(pts[:, : dA + dB])
    lp_bc = q_bc.logpdf(pts[:, dA:])
    lp_b = q_b.logpdf(pts[:, dA : dA + dB])
    return float(np.max(np.abs(lp_joint - lp_ab - lp_bc + lp_b)))


def _sqrtm_psd(m: np.ndarray) -> np.ndarray:
    vals, vecs = np.linalg.eigh(0.5 * (m + m.T))
    vals = np.clip(vals, 0.0, None)
    return (vecs * np.sqrt(vals)) @ vecs.T


def wasserstein2_gaussian(g1: MultivariateGaussian, g2: MultivariateGaussian) -> float:
    """2-Wasserstein distance between Gaussians.

    sqrt(|mu1-mu2|^2 + tr(S1 + S2 - 2 (S2^1/2 S1 S2^1/2)^1/2)), with matrix
    roots via symmetric eigendecomposition.
    """
    if g1.dim != g2.dim:
        raise DimensionMismatch("distributions must share a dimension")
    root2 = _sqrtm_psd(g2.cov)
    cross = _sqrtm_psd(root2 @ g1.cov @ root2)
    mean_term = float(np.sum((g1.mean - g2.mean) ** 2))
    cov_term = float(np.trace(g1.cov) + np.trace(g2.cov) - 2.0 * np.trace(cross))
    return float(np.sqrt(max(mean_term + cov_term, 0.0)))


def empirical_moments(samples) -> MultivariateGaussian:
    """Sample mean and unbiased covariance as a Gaussian fit.

    A jitter of 1e-10 * (1 + trace/d) keeps the fit SPD even for degenerate
    (e.g. constant) samples. Needs at least d+1 samples.
    """
    samples = np.atleast_2d(np.asarray(samples, dtype=float))
    n, d = samples.shape
    if n < d + 1:
        raise TooFewSamples(f"need at least {d + 1} samples, got {n}")
    mean = samples.mean(axis=0)
    diff = samples - mean
    cov = diff.T @ diff / (n - 1)
    cov[np.diag_indices_from(cov)] += 1e-10 * (1.0 + np.trace(cov) / d)
    return MultivariateGaussian(mean, cov)


def score_fd_check(model, t: int, sched, n_points: int, rng: RngStream) -> float:
    """Max relative gap between the analytic score and central finite differences.

    Uses h = 1e-5 * (1 + |x_i|) per coordinate on log p_t; the relative gap is
    measured in L-inf against 1 + |score|_inf. Returns 0 for zero points.
    """
    if n_points <= 0:
        return 0.0
    try:
        model.logpdf_t(np.zeros(model.dim), t, sched)
    except NoExactDensity:
        raise
    worst = 0.0
    for _ in range(n_points):
        x = rng.standard_normal(model.dim)
        s = model.score(x, t, sched)
        fd = np.empty(model.dim)
        for i in range(model.dim):
            h = 1e-5 * (1.0 + abs(x[i]))
            hi = x.copy()
            lo = x.copy()
            hi[i] += h
            lo[i] -= h
            fd[i] = (model.logpdf_t(hi, t, sched) - model.logpdf_t(lo, t, sched)) / (2.0 * h)
        gap = np.max(np.abs(s - fd)) / (1.0 + np.max(np.abs(s)))
        worst = max(worst, float(gap))
    return worst
