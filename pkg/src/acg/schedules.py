"""Temporal control: when to inject heat and when to synchronize.

A heat schedule maps each timestep to (jump, iterations, height); a sync
policy decides whether the consensus operator runs at a given cooling step.
Presets bundle both plus, for the post-hoc family, the sawtooth reheat
targets. `plan_trajectory` expands a preset into a flat, deterministic list
of execution segments that the drivers walk without further decisions.
"""

from __future__ import annotations

from dataclasses import dataclass

from .errors import InvalidRange, UnknownPreset

__all__ = [
    "HeatSchedule",
    "heat_params",
    "Never",
    "EveryStep",
    "FirstVisitOnly",
    "Window",
    "SyncPolicy",
    "VisitTracker",
    "sync_indicator",
    "SchedulePreset",
    "PRESET_NAMES",
    "preset",
    "Cool",
    "Reheat",
    "ResampleLoop",
    "plan_trajectory",
    "schedule_from_config",
]

NO_HEAT = (0, 0, 1.0)


@dataclass(frozen=True)
class HeatSchedule:
    """Piecewise-constant heating: (jump, iterations, height) inside [t_end, t_start].

    Outside the window the mapping returns (0, 0, 1), i.e. standard diffusion.
    """

    t_start: int = 0
    t_end: int = 0
    jump: int = 0
    iterations: int = 0
    height: float = 1.0

    def __post_init__(self):
        if self.t_end < 0 or self.t_start < self.t_end:
            raise InvalidRange("need t_start >= t_end >= 0")
        if self.jump < 0 or self.iterations < 0:
            raise InvalidRange("jump size and iteration count must be >= 0")
        if not (0.0 < self.height <= 1.0):
            raise InvalidRange("heat height must lie in (0, 1]")

    @property
    def active(self) -> bool:
        return self.jump >= 1 and self.iterations >= 1


def heat_params(hs: HeatSchedule, t: int) -> tuple[int, int, float]:
    """(j, K, H) at timestep t; (0, 0, 1) outside the heat window."""
    if hs.t_end <= t <= hs.t_start:
        return (hs.jump, hs.iterations, hs.height)
    return NO_HEAT


@dataclass(frozen=True)
class Never:
    pass


@dataclass(frozen=True)
class EveryStep:
    pass


@dataclass(frozen=True)
class FirstVisitOnly:
    pass


@dataclass(frozen=True)
class Window:
    t_lo: int
    t_hi: int

    def __post_init__(self):
        if self.t_lo > self.t_hi:
            raise InvalidRange("window needs t_lo <= t_hi")


SyncPolicy = Never | EveryStep | FirstVisitOnly | Window


class VisitTracker:
    """Per-run record of which timesteps have been traversed while cooling.

    Steps are never un-visited within a run.
    """

    def __init__(self):
        self.counts: dict[int, int] = {}

    def record(self, t: int) -> None:
        self.counts[t] = self.counts.get(t, 0) + 1

    def seen(self, t: int) -> bool:
        return t in self.counts

    @property
    def visited(self) -> set[int]:
        return set(self.counts)


def sync_indicator(policy: SyncPolicy, t: int, tracker: VisitTracker) -> bool:
    """Whether consensus runs at this cooling step. Records the visit after deciding."""
    if isinstance(policy, Never):
        out = False
    elif isinstance(policy, EveryStep):
        out = True
    elif isinstance(policy, FirstVisitOnly):
        out = not tracker.seen(t)
    elif isinstance(policy, Window):
        out = policy.t_lo <= t <= policy.t_hi
    else:
        raise TypeError(f"unknown sync policy {policy!r}")
    tracker.record(t)
    return out


@dataclass(frozen=True)
class SchedulePreset:
    name: str
    heat: HeatSchedule
    sync: SyncPolicy
    sawtooth_targets: tuple[int, ...] = ()

    @property
    def is_posthoc(self) -> bool:
        return len(self.sawtooth_targets) > 0


# Named presets. In-progress presets interleave consensus within one
# generation pass; post-hoc presets first cool fully, then follow the global
# sawtooth (reheat to successively lower targets, cool again).
PRESET_NAMES = (
    "IndependentOracle",
    "Greedy",
    "Consistent",
    "ACG",
    "PostHocNone",
    "PostHocFull",
    "PostHocWindowed",
)

_ALIASES = {n.lower(): n for n in PRESET_NAMES}
_ALIASES.update(
    {
        "independent-oracle": "IndependentOracle",
        "posthoc-none": "PostHocNone",
        "posthoc-full": "PostHocFull",
        "posthoc-windowed": "PostHocWindowed",
        "acg": "ACG",
    }
)

# Ablation optima used as defaults for the heating presets.
DEFAULT_JUMP = 3
DEFAULT_ITERATIONS = 2
DEFAULT_HEIGHT = 1.0
# The heat window is a free parameter; default to the mid-trajectory band.
WINDOW_FRACTIONS = (0.75, 0.25)
# Default sawtooth reheat targets as fractions of T (100, 50, 25 at T=200).
SAWTOOTH_FRACTIONS = (0.5, 0.25, 0.125)


def _default_window(T: int) -> tuple[int, int]:
    return (round(WINDOW_FRACTIONS[0] * T), round(WINDOW_FRACTIONS[1] * T))


def _default_sawtooth(T: int) -> tuple[int, ...]:
    return tuple(max(1, round(f * T)) for f in SAWTOOTH_FRACTIONS)


def preset(
    name: str,
    T: int,
    *,
    J_heat: int | None = None,
    K: int | None = None,
    H: float | None = None,
    window: tuple[int, int] | None = None,
    sawtooth: tuple[int, ...] | None = None,
) -> SchedulePreset:
    """Fully populated named preset at total step count T.

    Keyword overrides replace the documented defaults where they make sense
    for the preset (heating parameters for the heating presets, sawtooth
    targets for the post-hoc ones).
    """
    canonical = _ALIASES.get(str(name).lower())
    if canonical is None:
        raise UnknownPreset(f"unknown preset {name!r}; known: {', '.join(PRESET_NAMES)}")
    no_heat = HeatSchedule()

    if canonical == "IndependentOracle":
        return SchedulePreset(canonical, no_heat, Never())
    if canonical == "Greedy":
        return SchedulePreset(canonical, no_heat, EveryStep())
    if canonical in ("Consistent", "ACG"):
        t_start, t_end = window if window is not None else _default_window(T)
        heat = HeatSchedule(
            t_start=t_start,
            t_end=t_end,
            jump=DEFAULT_JUMP if J_heat is None else J_heat,
            iterations=DEFAULT_ITERATIONS if K is None else K,
            height=DEFAULT_HEIGHT if H is None else H,
        )
        sync = EveryStep() if canonical == "Consistent" else FirstVisitOnly()
        return SchedulePreset(canonical, heat, sync)

    targets = tuple(sawtooth) if sawtooth is not None else _default_sawtooth(T)
    if len(targets) == 0 or any(not (1 <= u <= T) for u in targets):
        raise InvalidRange(f"sawtooth targets must lie in [1, {T}]")
    height = DEFAULT_HEIGHT if H is None else H
    heat = HeatSchedule(height=height)
    if canonical == "PostHocNone":
        return SchedulePreset(canonical, heat, Never(), targets)
    if canonical == "PostHocFull":
        return SchedulePreset(canonical, heat, EveryStep(), targets)
    # PostHocWindowed: consensus only during the final cooling pass.
    return SchedulePreset(canonical, heat, Window(0, min(targets)), targets)


@dataclass(frozen=True)
class Cool:
    """Reverse steps from t_from down to t_to (one step per t in (t_to, t_from])."""

    t_from: int
    t_to: int
    sync_eligible: bool = True


@dataclass(frozen=True)
class Reheat:
    """One renoising jump from level t_from up to t_to."""

    t_from: int
    t_to: int
    height: float = 1.0


@dataclass(frozen=True)
class ResampleLoop:
    """At level t: `iterations` rounds of {renoise +jump, cool back to t}."""

    t: int
    jump: int
    iterations: int
    height: float


PlanSegment = Cool | Reheat | ResampleLoop


def plan_trajectory(sp: SchedulePreset, T: int) -> tuple[PlanSegment, ...]:
    """Deterministic, fully expanded execution plan for a preset.

    Post-hoc presets expand to a full cool followed, per sawtooth target u,
    by a reheat 0 -> u and a cool u -> 0 (consensus eligibility resolved per
    pass here, at plan time). In-progress presets expand to one cooling pass
    with a resample loop after cooling into each step inside the heat window,
    skipping loops that would overshoot T.
    """
    if sp.is_posthoc:
        segments: list[PlanSegment] = [Cool(T, 0, sync_eligible=not _windowed(sp))]
        for i, u in enumerate(sp.sawtooth_targets):
            final = i == len(sp.sawtooth_targets) - 1
            segments.append(Reheat(0, u, height=sp.heat.height))
            segments.append(Cool(u, 0, sync_eligible=not _windowed(sp) or final))
        return tuple(segments)

    segments = []
    cursor = T
    if sp.heat.active:
        for t in range(T - 1, -1, -1):
            j, k, h = heat_params(sp.heat, t)
            if j >= 1 and k >= 1 and t + j <= T:
                if cursor > t:
                    segments.append(Cool(cursor, t))
                segments.append(ResampleLoop(t, j, k, h))
                cursor = t
    if cursor > 0:
        segments.append(Cool(cursor, 0))
    return tuple(segments)


def _windowed(sp: SchedulePreset) -> bool:
    return sp.name == "PostHocWindowed"


def schedule_from_config(cfg: dict, default_T: int = 200) -> tuple[int, SchedulePreset]:
    """Parse the schedule block: preset name plus optional overrides.

    {"preset": name, "T": int, "J_heat": int, "K": int, "H": float,
     "window": [t_start, t_end], "sawtooth": [...]}; every field is optional.
    Returns (T, preset).
    """
    T = int(cfg.get("T", default_T))
    window = cfg.get("window")
    sp = preset(
        cfg.get("preset", "ACG"),
        T,
        J_heat=cfg.get("J_heat"),
        K=cfg.get("K"),
        H=cfg.get("H"),
        window=tuple(window) if window is not None else None,
        sawtooth=tuple(cfg["sawtooth"]) if cfg.get("sawtooth") is not None else None,
    )
    return T, sp
