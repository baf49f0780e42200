"""Score models with closed-form noised marginals.

A score model stands in for a pretrained pairwise generator: it evaluates the
score of the noised marginal p_t at any timestep. The Gaussian and
Gaussian-mixture implementations are exact, which is what makes every driver
claim checkable against analytic oracles.
"""

from __future__ import annotations

from abc import ABC, abstractmethod

import numpy as np
from scipy.linalg import solve_triangular
from scipy.special import logsumexp

from .diffusion import NoiseSchedule
from .errors import DimensionMismatch, NoExactDensity
from .numerics import MultivariateGaussian, cholesky

__all__ = [
    "ScoreModel",
    "GaussianScoreModel",
    "MixtureScoreModel",
    "noised_marginal",
    "gaussian_score",
    "mixture_score",
    "pair_model",
    "model_from_json",
    "model_to_json",
]


def noised_marginal(g: MultivariateGaussian, t: int, sched: NoiseSchedule) -> MultivariateGaussian:
    """Law of sqrt(ab_t) x0 + sqrt(1-ab_t) eps for x0 ~ g: N(sqrt(ab) mu, ab S + (1-ab) I)."""
    ab = sched.alpha_bar_t(t)
    cov = ab * g.cov + (1.0 - ab) * np.eye(g.dim)
    return MultivariateGaussian(np.sqrt(ab) * g.mean, cov)


class ScoreModel(ABC):
    """Interface consumed by the drivers.

    Implementations are immutable and score evaluation is pure, so branches
    may evaluate concurrently. `x` may be a single state (dim,) or a batch
    (n, dim); the output matches.
    """

    dim: int

    @abstractmethod
    def score(self, x, t: int, sched: NoiseSchedule) -> np.ndarray:
        """Gradient of log p_t at x."""

    def logpdf_t(self, x, t: int, sched: NoiseSchedule):
        """Log-density of the noised marginal, when available."""
        raise NoExactDensity(type(self).__name__)

    def exact_logpdf0(self, x0):
        """Log-density of the clean law, when available."""
        raise NoExactDensity(type(self).__name__)

    def _check_points(self, x) -> tuple[np.ndarray, bool]:
        x = np.asarray(x, dtype=float)
        single = x.ndim == 1
        pts = np.atleast_2d(x)
        if pts.shape[1] != self.dim:
            raise DimensionMismatch(f"points have dim {pts.shape[1]}, model has {self.dim}")
        return pts, single


class GaussianScoreModel(ScoreModel):
    """Exact score model for a Gaussian clean law (one pairwise joint)."""

    def __init__(self, base: MultivariateGaussian):
        self.base = base
        self.dim = base.dim
        self._cache: dict[tuple[int, int], tuple[NoiseSchedule, np.ndarray, np.ndarray]] = {}

    def _noised(self, t: int, sched: NoiseSchedule) -> tuple[np.ndarray, np.ndarray]:
        """(mu_t, chol(Sigma_t)); factors are cached per (schedule, t)."""
        key = (id(sched), int(t))
        hit = self._cache.get(key)
        if hit is not None and hit[0] is sched:
            return hit[1], hit[2]
        ab = sched.alpha_bar_t(t)
        cov_t = ab * self.base.cov + (1.0 - ab) * np.eye(self.dim)
        mu_t = np.sqrt(ab) * self.base.mean
        L = cholesky(cov_t)
        self._cache[key] = (sched, mu_t, L)
        return mu_t, L

    def score(self, x, t: int, sched: NoiseSchedule) -> np.ndarray:
        pts, single = self._check_points(x)
        mu_t, L = self._noised(t, sched)
        rhs = (pts - mu_t).T
        y = solve_triangular(L, rhs, lower=True, check_finite=False)
        s = -solve_triangular(L.T, y, lower=False, check_finite=False).T
        return s[0] if single else s

    def logpdf_t(self, x, t: int, sched: NoiseSchedule):
        pts, single = self._check_points(x)
        mu_t, L = self._noised(t, sched)
        w = solve_triangular(L, (pts - mu_t).T, lower=True, check_finite=False)
        maha = np.sum(w * w, axis=0)
        logdet = 2.0 * np.sum(np.log(np.diag(L)))
        out = -0.5 * (self.dim * np.log(2.0 * np.pi) + logdet + maha)
        return float(out[0]) if single else out

    def exact_logpdf0(self, x0):
        return self.base.logpdf(x0)


class MixtureScoreModel(ScoreModel):
    """Exact score model for a Gaussian-mixture clean law.

    A small multimodal surrogate for within-pair manifolds; the noised
    marginal of a mixture is the mixture of noised components, so scores stay
    closed-form.
    """

    def __init__(self, weights, components: list[MultivariateGaussian]):
        weights = np.asarray(weights, dtype=float).ravel()
        if len(components) == 0:
            raise DimensionMismatch("mixture needs at least one component")
        if weights.size != len(components):
            raise DimensionMismatch("one weight per component")
        if np.any(weights < 0.0) or abs(weights.sum() - 1.0) > 1e-12:
            raise ValueError("weights must be a simplex vector (sum 1 within 1e-12)")
        dims = {c.dim for c in components}
        if len(dims) != 1:
            raise DimensionMismatch("components must share a dimension")
        self.weights = weights
        self.components = [GaussianScoreModel(c) for c in components]
        self.dim = components[0].dim
        self._logw = np.log(np.maximum(weights, 1e-300))

    def _component_stats(self, pts: np.ndarray, t: int, sched: NoiseSchedule):
        logps = np.stack([c.logpdf_t(pts, t, sched) for c in self.components])
        scores = np.stack([c.score(pts, t, sched) for c in self.components])
        return logps, scores

    def score(self, x, t: int, sched: NoiseSchedule) -> np.ndarray:
        pts, single = self._check_points(x)
        logps, scores = self._component_stats(pts, t, sched)
        # responsibilities in log space; plain softmax underflows at large t
        logr = self._logw[:, None] + logps
        logr -= logsumexp(logr, axis=0)
        s = np.sum(np.exp(logr)[:, :, None] * scores, axis=0)
        return s[0] if single else s

    def logpdf_t(self, x, t: int, sched: NoiseSchedule):
        pts, single = self._check_points(x)
        logps = np.stack([c.logpdf_t(pts, t, sched) for c in self.components])
        out = logsumexp(self._logw[:, None] + logps, axis=0)
        return float(out[0]) if single else out

    def exact_logpdf0(self, x0):
        x0 = np.asarray(x0, dtype=float)
        single = x0.ndim == 1
        pts = np.atleast_2d(x0)
        logps = np.stack([c.base.logpdf(pts) for c in self.components])
        out = logsumexp(self._logw[:, None] + logps, axis=0)
        return float(out[0]) if single else out


def gaussian_score(m: GaussianScoreModel, x, t: int, sched: NoiseSchedule) -> np.ndarray:
    """-Sigma_t^-1 (x - mu_t) with (mu_t, Sigma_t) the noised marginal."""
    return m.score(x, t, sched)


def mixture_score(m: MixtureScoreModel, x, t: int, sched: NoiseSchedule) -> np.ndarray:
    """Responsibility-weighted sum of component scores of the noised mixture."""
    return m.score(x, t, sched)


def pair_model(muA, muB, SigmaAB) -> GaussianScoreModel:
    """Gaussian model over a concatenated pair (A, B).

    SigmaAB is the full (dA+dB) x (dA+dB) joint covariance.
    """
    muA = np.asarray(muA, dtype=float).ravel()
    muB = np.asarray(muB, dtype=float).ravel()
    SigmaAB = np.asarray(SigmaAB, dtype=float)
    d = muA.size + muB.size
    if SigmaAB.shape != (d, d):
        raise DimensionMismatch(
            f"joint covariance is {SigmaAB.shape}, expected ({d}, {d})"
        )
    return GaussianScoreModel(MultivariateGaussian(np.concatenate([muA, muB]), SigmaAB))


def model_from_json(obj: dict) -> ScoreModel:
    """Build a model from its JSON spec.

    {"type": "gaussian", "mean": [...], "cov": [[...]]} or
    {"type": "mixture", "weights": [...], "components": [{"mean":..., "cov":...}, ...]}
    """
    kind = obj.get("type")
    if kind == "gaussian":
        return GaussianScoreModel(MultivariateGaussian(obj["mean"], obj["cov"]))
    if kind == "mixture":
        comps = [MultivariateGaussian(c["mean"], c["cov"]) for c in obj["components"]]
        return MixtureScoreModel(obj["weights"], comps)
    raise ValueError(f"unknown model type: {kind!r}")


def model_to_json(m: ScoreModel) -> dict:
    if isinstance(m, GaussianScoreModel):
        return {"type": "gaussian", "mean": m.base.mean.tolist(), "cov": m.base.cov.tolist()}
    if isinstance(m, MixtureScoreModel):
        return {
            "type": "mixture",
            "weights": m.weights.tolist(),
            "components": [
                {"mean": c.base.mean.tolist(), "cov": c.base.cov.tolist()}
                for c in m.components
            ],
        }
    raise ValueError(f"cannot serialize {type(m).__name__}")
