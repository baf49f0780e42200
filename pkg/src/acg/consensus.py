"""Consensus operators over per-branch clean-state subject predictions.

All operators act in x0-space: branches first predict clean subjects, then the
operator fuses them into one canonical value. For the exact Gaussian noised
marginals used here this is equivalent to fusing scores, up to the shared
linear Tweedie map.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import BadWeights, DimensionMismatch, MissingUnconditional

__all__ = [
    "Mean",
    "Weighted",
    "Unified",
    "ConsensusOperator",
    "weighted_balanced",
    "aggregate",
    "consensus_from_config",
    "consensus_name",
]


@dataclass(frozen=True)
class Mean:
    """Plain average of the branch predictions."""


@dataclass(frozen=True)
class Weighted:
    """Convex combination with fixed per-branch weights (simplex)."""

    weights: tuple[float, ...]

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=float)
        if w.size == 0 or np.any(w < 0.0) or abs(w.sum() - 1.0) > 1e-12:
            raise BadWeights(f"weights must be nonnegative and sum to 1: {self.weights}")
        object.__setattr__(self, "weights", tuple(float(x) for x in w))


@dataclass(frozen=True)
class Unified:
    """mu_cond + lam * (mu_cond - uncond), with mu_cond the branch mean.

    lam = 0 reduces to Mean; lam = N-1 reproduces the overlap-factorization
    combination (sum of conditionals minus the unconditional baseline).
    """

    lam: float = 0.0

    def __post_init__(self):
        if self.lam < 0.0:
            raise BadWeights("guidance scale lambda must be >= 0")


ConsensusOperator = Mean | Weighted | Unified


def weighted_balanced(n: int) -> Weighted:
    """Uniform weights 1/n, the balanced fusion choice."""
    if n < 1:
        raise BadWeights("need at least one branch")
    return Weighted(tuple([1.0 / n] * n))


def aggregate(predictions, uncond=None, op: ConsensusOperator = Mean()) -> np.ndarray:
    """Fuse N subject predictions into the canonical subject.

    `predictions` is a sequence of equal-shape arrays, one per branch; each
    may be a single vector (d,) or a batch (n, d). `uncond` is the
    unconditional baseline, required exactly when op is Unified with lam > 0.
    """
    if len(predictions) == 0:
        raise DimensionMismatch("no predictions to aggregate")
    preds = [np.asarray(p, dtype=float) for p in predictions]
    shape = preds[0].shape
    if any(p.shape != shape for p in preds):
        raise DimensionMismatch("predictions must share a shape")
    stacked = np.stack(preds)

    if isinstance(op, Mean):
        return stacked.mean(axis=0)
    if isinstance(op, Weighted):
        w = np.asarray(op.weights)
        if w.size != len(preds):
            raise BadWeights(f"{w.size} weights for {len(preds)} predictions")
        return np.tensordot(w, stacked, axes=(0, 0))
    if isinstance(op, Unified):
        mu = stacked.mean(axis=0)
        if op.lam == 0.0:
            return mu
        if uncond is None:
            raise MissingUnconditional("Unified with lambda > 0 needs an unconditional prediction")
        uncond = np.asarray(uncond, dtype=float)
        if uncond.shape != shape:
            raise DimensionMismatch("unconditional prediction shape mismatch")
        return mu + op.lam * (mu - uncond)
    raise TypeError(f"unknown consensus operator {op!r}")


def consensus_from_config(cfg: dict) -> ConsensusOperator:
    """Parse {"variant": "mean"|"weighted"|"unified", "weights": [...], "lambda": x}."""
    variant = cfg.get("variant", "mean")
    if variant == "mean":
        return Mean()
    if variant == "weighted":
        if "weights" not in cfg:
            raise BadWeights("weighted consensus needs explicit weights")
        return Weighted(tuple(cfg["weights"]))
    if variant == "unified":
        return Unified(float(cfg.get("lambda", 0.0)))
    raise BadWeights(f"unknown consensus variant {variant!r}")


def consensus_name(op: ConsensusOperator) -> str:
    if isinstance(op, Mean):
        return "mean"
    if isinstance(op, Weighted):
        return "weighted"
    if isinstance(op, Unified):
        return "unified"
    return type(op).__name__.lower()
