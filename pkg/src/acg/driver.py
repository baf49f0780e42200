"""The N-branch co-generation engine.

Each branch evolves a full pair state (context + shared subject) under its own
score model and noise stream. At every cooling step the branches predict clean
states; when the sync policy fires, the subject blocks of those predictions
are fused into a canonical value and injected back into each branch while the
local context is retained. Heating segments re-noise full branch states to
give the pairs a fresh chance to relax onto their own manifolds.

States are batched over independent runs: every array carries a leading run
axis, so distribution-level checks against the analytic oracles stay cheap.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np
from threadpoolctl import threadpool_limits

from .consensus import ConsensusOperator, Mean, Unified, aggregate
from .diffusion import NoiseSchedule, posterior_step, renoise, tweedie_x0
from .errors import DimensionMismatch, IndexOutOfRange, UnknownPreset
from .numerics import RngStream, branch_stream
from .schedules import (
    Cool,
    Reheat,
    ResampleLoop,
    SchedulePreset,
    VisitTracker,
    plan_trajectory,
    sync_indicator,
)
from .scoremodels import ScoreModel

__all__ = [
    "IndexPartition",
    "Clamp",
    "Branch",
    "EnsembleConfig",
    "TraceRecord",
    "TrajectoryLog",
    "RunResult",
    "BatchResult",
    "synchronized_step",
    "run_acg",
    "run_posthoc",
    "run_batch",
    "within_pair_loglik",
]


@dataclass(frozen=True)
class IndexPartition:
    """Branch-local split into shared subject coordinates and private context.

    The order of subject_idx defines the shared subject coordinate order and
    must be semantically consistent across branches.
    """

    subject_idx: np.ndarray
    context_idx: np.ndarray

    def __post_init__(self):
        subj = np.asarray(self.subject_idx, dtype=int).ravel()
        ctx = np.asarray(self.context_idx, dtype=int).ravel()
        object.__setattr__(self, "subject_idx", subj)
        object.__setattr__(self, "context_idx", ctx)
        if subj.size == 0 or ctx.size == 0:
            raise IndexOutOfRange("subject and context must both be non-empty")
        union = np.concatenate([subj, ctx])
        if np.unique(union).size != union.size:
            raise IndexOutOfRange("subject and context indices overlap")
        if union.min() != 0 or union.max() != union.size - 1:
            raise IndexOutOfRange("partition must cover exactly [0, dim)")

    @property
    def dim(self) -> int:
        return self.subject_idx.size + self.context_idx.size


@dataclass(frozen=True)
class Clamp:
    """Observed values re-imposed on part of the branch state at every level.

    With idx=None the whole context block is observed (RePaint-style
    conditioning); an explicit idx selects any branch-local coordinate subset,
    e.g. the known pixels of a partially corrupted patch.
    """

    observed: np.ndarray
    idx: np.ndarray | None = None

    def __post_init__(self):
        object.__setattr__(self, "observed", np.asarray(self.observed, dtype=float).ravel())
        if self.idx is not None:
            object.__setattr__(self, "idx", np.asarray(self.idx, dtype=int).ravel())


@dataclass(frozen=True)
class Branch:
    """One pairwise process: score model over the pair plus its index split.

    context_mode None co-generates the context alongside the subject; a Clamp
    conditions on observed values instead.
    """

    model: ScoreModel
    partition: IndexPartition
    context_mode: Clamp | None = None
    label: str = ""

    def __post_init__(self):
        if self.model.dim != self.partition.dim:
            raise DimensionMismatch(
                f"model dim {self.model.dim} != partition dim {self.partition.dim}"
            )
        idx, vals = self.clamp_set()
        if idx is not None:
            if idx.size != vals.size:
                raise DimensionMismatch("clamp values do not match clamp indices")
            if idx.size and (idx.min() < 0 or idx.max() >= self.partition.dim):
                raise IndexOutOfRange("clamp indices outside the branch state")

    def clamp_set(self) -> tuple[np.ndarray | None, np.ndarray | None]:
        """(indices, values) the branch keeps pinned, or (None, None)."""
        if self.context_mode is None:
            return None, None
        idx = self.context_mode.idx
        if idx is None:
            idx = self.partition.context_idx
        return idx, self.context_mode.observed


@dataclass
class EnsembleConfig:
    branches: list[Branch]
    preset: SchedulePreset
    sched: NoiseSchedule
    consensus: ConsensusOperator = field(default_factory=Mean)
    uncond_model: ScoreModel | None = None
    seed: int = 0
    record_trace: bool = False

    def __post_init__(self):
        if len(self.branches) == 0:
            raise DimensionMismatch("need at least one branch")
        sizes = {b.partition.subject_idx.size for b in self.branches}
        if len(sizes) != 1:
            raise DimensionMismatch("branches must share the subject dimension")
        self.subject_dim = sizes.pop()
        if isinstance(self.consensus, Unified) and self.consensus.lam > 0.0:
            if self.uncond_model is None:
                raise DimensionMismatch(
                    "Unified consensus with lambda > 0 needs an unconditional model"
                )
        if self.uncond_model is not None and self.uncond_model.dim != self.subject_dim:
            raise DimensionMismatch("unconditional model must live on the subject block")
        if any(u > self.sched.T for u in self.preset.sawtooth_targets):
            raise DimensionMismatch("sawtooth targets exceed the schedule length")


@dataclass
class TraceRecord:
    """One logged transition.

    For cooling records t is the level stepped from; for reheat records t is
    the level reheated to. Subject snapshots are taken after consensus
    injection, so whenever sync_applied is set all branch blocks coincide.
    """

    t: int
    phase: str
    sync_applied: bool
    branch_x0_subject: np.ndarray  # (N, n_runs, subject_dim)
    consensus: np.ndarray | None
    disagreement: float


class TrajectoryLog:
    def __init__(self):
        self.records: list[TraceRecord] = []

    def append(self, rec: TraceRecord) -> None:
        self.records.append(rec)

    def __len__(self) -> int:
        return len(self.records)

    def __iter__(self):
        return iter(self.records)

    def cooling_records(self) -> list[TraceRecord]:
        return [r for r in self.records if r.phase == "cool"]

    def reheat_records(self) -> list[TraceRecord]:
        return [r for r in self.records if r.phase == "reheat"]

    def sync_count(self) -> int:
        return sum(1 for r in self.records if r.sync_applied)

    def cooling_passes(self) -> int:
        """Number of maximal contiguous runs of cooling records."""
        passes = 0
        prev = None
        for r in self.records:
            if r.phase == "cool" and prev != "cool":
                passes += 1
            prev = r.phase
        return passes

    def to_jsonl(self, fp) -> None:
        """One JSON record per line: t, phase, sync, disagreement, branch_x0_subject."""
        for r in self.records:
            snaps = r.branch_x0_subject
            if snaps.shape[1] != 1:
                raise ValueError("JSONL export expects single-run traces")
            fp.write(
                json.dumps(
                    {
                        "t": int(r.t),
                        "phase": r.phase,
                        "sync": bool(r.sync_applied),
                        "disagreement": float(r.disagreement),
                        "branch_x0_subject": [s[0].tolist() for s in snaps],
                    }
                )
            )
            fp.write("\n")


@dataclass
class RunResult:
    canonical_subject: np.ndarray
    per_branch_final: list[np.ndarray]
    disagreement: float
    trace: TrajectoryLog | None = None


@dataclass
class BatchResult:
    """Stacked results over independent runs (leading axis = run)."""

    canonical_subject: np.ndarray  # (n_runs, subject_dim)
    per_branch_final: list[np.ndarray]  # each (n_runs, branch_dim)
    disagreement: np.ndarray  # (n_runs,)
    trace: TrajectoryLog | None = None

    def single(self) -> RunResult:
        if self.canonical_subject.shape[0] != 1:
            raise ValueError("not a single-run batch")
        return RunResult(
            canonical_subject=self.canonical_subject[0],
            per_branch_final=[s[0] for s in self.per_branch_final],
            disagreement=float(self.disagreement[0]),
            trace=self.trace,
        )


def _max_pairwise_linf(subjects: np.ndarray) -> np.ndarray:
    """(N, n, d) -> per-run max pairwise L-inf distance (n,)."""
    n_branches = subjects.shape[0]
    out = np.zeros(subjects.shape[1])
    for i in range(n_branches):
        for j in range(i + 1, n_branches):
            gap = np.max(np.abs(subjects[i] - subjects[j]), axis=-1)
            out = np.maximum(out, gap)
    return out


class _Engine:
    """Plan walker over batched branch states."""

    def __init__(self, cfg: EnsembleConfig, n_runs: int, states=None, uncond_state=None,
                 streams=None, tracker=None):
        self.cfg = cfg
        self.n = n_runs
        self.sched = cfg.sched
        self.branches = cfg.branches
        self.clamps = [b.clamp_set() for b in cfg.branches]
        n_b = len(cfg.branches)
        # streams: one per branch, then unconditional, then the shared-subject
        # innovation used on synced steps
        if streams is None:
            streams = [branch_stream(cfg.seed, k) for k in range(n_b + 2)]
        self.streams = streams
        self._shared_ix = len(streams) - 1
        self.tracker = tracker if tracker is not None else VisitTracker()
        self.trace = TrajectoryLog() if cfg.record_trace else None

        if states is None:
            # each branch starts from its own standard-normal draw at t = T
            self.states = [
                self.streams[k].standard_normal((n_runs, b.model.dim))
                for k, b in enumerate(cfg.branches)
            ]
            if cfg.uncond_model is not None:
                self.uncond_state = self.streams[n_b].standard_normal(
                    (n_runs, cfg.uncond_model.dim)
                )
            else:
                self.uncond_state = None
            self._apply_clamps(self.sched.T)
        else:
            self.states = [np.array(s, dtype=float) for s in states]
            self.uncond_state = None if uncond_state is None else np.array(uncond_state, float)

    def _apply_clamps(self, t: int) -> None:
        """Re-impose observed coordinates at level t (exact at t = 0)."""
        for k, (idx, vals) in enumerate(self.clamps):
            if idx is None:
                continue
            if t == 0:
                self.states[k][:, idx] = vals
            else:
                ab = self.sched.alpha_bar_t(t)
                eps = self.streams[k].standard_normal((self.n, idx.size))
                self.states[k][:, idx] = np.sqrt(ab) * vals + np.sqrt(1.0 - ab) * eps

    def _transition_noises(self) -> list[np.ndarray]:
        """Innovations for one stochastic transition, one array per branch
        (plus the unconditional copy last).

        The subject block rides a single shared stream in every branch: the
        subject is one collective variable realized as per-branch copies, so
        giving each copy its own subject noise would make consensus average
        dispersion away instead of reconciling model disagreement. Context
        blocks draw independently per branch.
        """
        shared = self.streams[self._shared_ix].standard_normal(
            (self.n, self.cfg.subject_dim)
        )
        noises = []
        for k, b in enumerate(self.branches):
            eps = self.streams[k].standard_normal((self.n, b.model.dim))
            eps[:, b.partition.subject_idx] = shared
            noises.append(eps)
        noises.append(shared)
        return noises

    def _predict_x0(self, t: int):
        x0s = [
            tweedie_x0(self.states[k], b.model.score(self.states[k], t, self.sched), t, self.sched)
            for k, b in enumerate(self.branches)
        ]
        uncond_x0 = None
        if self.uncond_state is not None:
            uncond_x0 = tweedie_x0(
                self.uncond_state,
                self.cfg.uncond_model.score(self.uncond_state, t, self.sched),
                t,
                self.sched,
            )
        return x0s, uncond_x0

    def _record(self, t: int, phase: str, sync: bool, x0s, consensus_val) -> None:
        if self.trace is None:
            return
        subjects = np.stack(
            [x0s[k][:, b.partition.subject_idx] for k, b in enumerate(self.branches)]
        )
        self.trace.append(
            TraceRecord(
                t=t,
                phase=phase,
                sync_applied=sync,
                branch_x0_subject=subjects.copy(),
                consensus=None if consensus_val is None else consensus_val.copy(),
                disagreement=float(np.max(_max_pairwise_linf(subjects))) if len(self.branches) > 1 else 0.0,
            )
        )

    def cool_step(self, t: int, sync_eligible: bool = True) -> None:
        """One synchronized reverse transition t -> t-1 for all branches.

        On synced steps the canonical subject is propagated with a shared
        innovation across branches: once agreed, the subject is one collective
        variable, and per-branch subject noise would average away its
        dispersion at the next consensus. Unsynced steps draw fully
        independent per-branch noise, which is what lets branches drift apart
        while reheating.
        """
        x0s, uncond_x0 = self._predict_x0(t)
        fired = sync_indicator(self.cfg.preset.sync, t, self.tracker)
        sync = fired and sync_eligible
        consensus_val = None
        if sync:
            preds = [x0s[k][:, b.partition.subject_idx] for k, b in enumerate(self.branches)]
            consensus_val = aggregate(preds, uncond_x0, self.cfg.consensus)
            for k, b in enumerate(self.branches):
                x0s[k][:, b.partition.subject_idx] = consensus_val
            if uncond_x0 is not None:
                uncond_x0 = consensus_val.copy()
        self._record(t, "cool", sync, x0s, consensus_val)
        noises = None if t == 1 else self._transition_noises()
        for k in range(len(self.branches)):
            self.states[k] = posterior_step(
                self.states[k], x0s[k], t, self.sched, self.streams[k],
                noise=None if noises is None else noises[k],
            )
        if self.uncond_state is not None:
            self.uncond_state = posterior_step(
                self.uncond_state, uncond_x0, t, self.sched,
                self.streams[len(self.branches)],
                noise=None if noises is None else noises[-1],
            )
        self._apply_clamps(t - 1)

    def reheat(self, t_from: int, t_to: int, height: float) -> None:
        """Renoise every branch (full state) from t_from up to t_to."""
        j = t_to - t_from
        noises = self._transition_noises()
        for k in range(len(self.branches)):
            self.states[k] = renoise(
                self.states[k], t_from, j, height, self.sched, self.streams[k],
                noise=noises[k],
            )
        if self.uncond_state is not None:
            self.uncond_state = renoise(
                self.uncond_state, t_from, j, height, self.sched,
                self.streams[len(self.branches)], noise=noises[-1],
            )
        self._apply_clamps(t_to)
        if self.trace is not None:
            x0s, _ = self._predict_x0(t_to)
            self._record(t_to, "reheat", False, x0s, None)

    def run_plan(self, plan) -> BatchResult:
        for seg in plan:
            if isinstance(seg, Cool):
                for t in range(seg.t_from, seg.t_to, -1):
                    self.cool_step(t, sync_eligible=seg.sync_eligible)
            elif isinstance(seg, Reheat):
                self.reheat(seg.t_from, seg.t_to, seg.height)
            elif isinstance(seg, ResampleLoop):
                for _ in range(seg.iterations):
                    self.reheat(seg.t, seg.t + seg.jump, seg.height)
                    for t in range(seg.t + seg.jump, seg.t, -1):
                        self.cool_step(t, sync_eligible=True)
            else:  # pragma: no cover
                raise TypeError(f"unknown plan segment {seg!r}")
        return self._finalize()

    def _finalize(self) -> BatchResult:
        subjects = np.stack(
            [self.states[k][:, b.partition.subject_idx] for k, b in enumerate(self.branches)]
        )
        uncond_final = self.uncond_state
        canonical = aggregate(list(subjects), uncond_final, self.cfg.consensus)
        disagreement = _max_pairwise_linf(subjects)
        return BatchResult(
            canonical_subject=canonical,
            per_branch_final=list(self.states),
            disagreement=disagreement,
            trace=self.trace,
        )


def synchronized_step(states, t: int, cfg: EnsembleConfig, tracker: VisitTracker, rngs) -> list:
    """One synchronized reverse transition on explicit states.

    `states` holds one full-state vector per branch, plus a trailing
    subject-space vector when cfg.uncond_model is set; `rngs` supplies one
    stream per evolved state plus one trailing stream for the shared subject
    innovation. Returns the states at t-1 in the same layout.
    """
    n_b = len(cfg.branches)
    expected = n_b + (1 if cfg.uncond_model is not None else 0)
    if len(states) != expected:
        raise DimensionMismatch(f"expected {expected} states, got {len(states)}")
    if len(rngs) < expected + 1:
        raise DimensionMismatch("need one rng stream per evolved state plus a shared one")
    eng = _Engine(
        cfg,
        n_runs=1,
        states=[np.atleast_2d(np.asarray(s, dtype=float)) for s in states[:n_b]],
        uncond_state=None
        if cfg.uncond_model is None
        else np.atleast_2d(np.asarray(states[n_b], dtype=float)),
        streams=list(rngs),
        tracker=tracker,
    )
    eng.cool_step(t)
    out = [s[0] for s in eng.states]
    if eng.uncond_state is not None:
        out.append(eng.uncond_state[0])
    return out


def run_batch(cfg: EnsembleConfig, n_runs: int) -> BatchResult:
    """Execute the configured preset over n_runs independent runs.

    BLAS threading is pinned to one thread for the duration: the plan walk is
    thousands of small factorizations and solves, where thread fan-out costs
    far more than it buys.
    """
    plan = plan_trajectory(cfg.preset, cfg.sched.T)
    with threadpool_limits(limits=1):
        return _Engine(cfg, n_runs).run_plan(plan)


def run_acg(cfg: EnsembleConfig) -> RunResult:
    """Single run of an in-progress preset (Greedy, Consistent, ACG, ...)."""
    if cfg.preset.is_posthoc:
        raise UnknownPreset(f"{cfg.preset.name} is post-hoc; use run_posthoc")
    return run_batch(cfg, 1).single()


def run_posthoc(cfg: EnsembleConfig) -> RunResult:
    """Single run of a post-hoc sawtooth preset."""
    if not cfg.preset.is_posthoc:
        raise UnknownPreset(f"{cfg.preset.name} is in-progress; use run_acg")
    return run_batch(cfg, 1).single()


def within_pair_loglik(result, cfg: EnsembleConfig) -> list:
    """Per-branch clean log-likelihood of (context, canonical subject).

    Clamped coordinates hold their observed values in the final states, so
    clamped branches are evaluated with their observed context.
    """
    out = []
    for k, b in enumerate(cfg.branches):
        vec = np.array(result.per_branch_final[k], dtype=float, copy=True)
        vec[..., b.partition.subject_idx] = result.canonical_subject
        out.append(b.model.exact_logpdf0(vec))
    return out
