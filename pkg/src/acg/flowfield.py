"""Patch-based field inpainting on Gaussian random fields.

The field prior is a squared-exponential GRF whose patch-pair marginals are
exactly Gaussian, so the co-generation pipeline can be scored against the
exact GP posterior. A field is split into vertical patches; a corrupted patch
is reconstructed as the shared subject of branches built from its left/right
neighbor pairs, with known pixels clamped.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .consensus import ConsensusOperator, Mean
from .diffusion import NoiseSchedule, linear_schedule
from .driver import Branch, Clamp, EnsembleConfig, IndexPartition, run_batch
from .errors import (
    DimensionMismatch,
    IndexOutOfRange,
    OutOfBounds,
    ShapeMismatch,
    SizeCap,
    UnreconstructablePatch,
)
from .numerics import MultivariateGaussian, RngStream
from .schedules import SchedulePreset, preset
from .scoremodels import GaussianScoreModel

__all__ = [
    "FieldGrid",
    "GRFSpec",
    "PatchLayout",
    "Block",
    "RandomRects",
    "Stripe",
    "grf_covariance",
    "sample_grf",
    "pair_joint",
    "pair_cross_correlation",
    "corrupt",
    "inpaint_acg",
    "exact_posterior",
    "metrics",
    "read_fgrid",
    "write_fgrid",
    "read_fmask",
    "write_fmask",
]

SIZE_CAP = 4096  # dense-covariance tractability cap on H*W


class FieldGrid:
    """H x W x C scalar field, row-major channel-last."""

    def __init__(self, values):
        values = np.asarray(values, dtype=float)
        if values.ndim == 2:
            values = values[:, :, None]
        if values.ndim != 3:
            raise ShapeMismatch(f"expected (H, W, C) values, got shape {values.shape}")
        if not np.all(np.isfinite(values)):
            raise ValueError("field values must be finite")
        self.values = values

    @property
    def shape(self) -> tuple[int, int, int]:
        return self.values.shape

    def copy(self) -> "FieldGrid":
        return FieldGrid(self.values.copy())

    def __repr__(self) -> str:
        h, w, c = self.shape
        return f"FieldGrid({h}x{w}x{c})"


@dataclass(frozen=True)
class GRFSpec:
    """Stationary squared-exponential prior in grid units."""

    length_scale: float
    variance: float = 1.0
    nugget: float = 1e-6
    kernel: str = "squared-exponential"

    def __post_init__(self):
        if self.length_scale <= 0 or self.variance <= 0 or self.nugget < 0:
            raise ValueError("need length_scale > 0, variance > 0, nugget >= 0")
        if self.kernel != "squared-exponential":
            raise ValueError(f"unsupported kernel {self.kernel!r}")


@dataclass(frozen=True)
class PatchLayout:
    """Vertical patches of width patch_w; W must divide evenly."""

    patch_w: int

    def count(self, W: int) -> int:
        if self.patch_w <= 0 or W % self.patch_w != 0:
            raise DimensionMismatch(f"width {W} not divisible by patch_w {self.patch_w}")
        P = W // self.patch_w
        if P < 2:
            raise DimensionMismatch("need at least two patches")
        return P

    def columns(self, i: int, W: int) -> np.ndarray:
        P = self.count(W)
        if not 0 <= i < P:
            raise IndexOutOfRange(f"patch {i} outside [0, {P})")
        return np.arange(i * self.patch_w, (i + 1) * self.patch_w)


def _pixel_index(rows: np.ndarray, cols: np.ndarray, W: int) -> np.ndarray:
    """Flat row-major indices of the (rows x cols) rectangle, row-major order."""
    return (rows[:, None] * W + cols[None, :]).ravel()


def grf_covariance(spec: GRFSpec, H: int, W: int) -> np.ndarray:
    """(H*W) x (H*W) kernel matrix over pixel coordinates."""
    if H * W > SIZE_CAP:
        raise SizeCap(f"H*W = {H * W} exceeds cap {SIZE_CAP}")
    rr, cc = np.meshgrid(np.arange(H), np.arange(W), indexing="ij")
    coords = np.stack([rr.ravel(), cc.ravel()], axis=1).astype(float)
    d2 = np.sum((coords[:, None, :] - coords[None, :, :]) ** 2, axis=-1)
    K = spec.variance * np.exp(-d2 / (2.0 * spec.length_scale**2))
    K[np.diag_indices_from(K)] += spec.nugget
    return K


def sample_grf(spec: GRFSpec, H: int, W: int, rng: RngStream, C: int = 1) -> FieldGrid:
    """Zero-mean draw from N(0, K), each channel independent."""
    g = MultivariateGaussian(np.zeros(H * W), grf_covariance(spec, H, W))
    chans = [g.sample(rng).reshape(H, W) for _ in range(C)]
    return FieldGrid(np.stack(chans, axis=-1))


def pair_joint(spec: GRFSpec, layout: PatchLayout, pair_index: int, H: int, W: int | None = None) -> GaussianScoreModel:
    """Exact Gaussian over the pixels of adjacent patches (i, i+1).

    Coordinates are ordered [patch i pixels, patch i+1 pixels], each patch
    row-major; which block plays subject vs. context is the caller's partition
    choice. W defaults to the smallest width that contains patch i+1.
    """
    if W is None:
        W = (pair_index + 2) * layout.patch_w
    P = layout.count(W)
    if not 0 <= pair_index < P - 1:
        raise IndexOutOfRange(f"pair {pair_index} outside [0, {P - 1})")
    K = grf_covariance(spec, H, W)
    rows = np.arange(H)
    idx = np.concatenate(
        [
            _pixel_index(rows, layout.columns(pair_index, W), W),
            _pixel_index(rows, layout.columns(pair_index + 1, W), W),
        ]
    )
    cov = K[np.ix_(idx, idx)]
    return GaussianScoreModel(MultivariateGaussian(np.zeros(idx.size), cov))


def pair_cross_correlation(model: GaussianScoreModel, block: int) -> float:
    """Coupling diagnostic for a pair model with two `block`-sized halves.

    For every pixel of the second block, take its strongest absolute
    correlation with the first block; return the weakest such value.
    """
    cov = model.base.cov
    sd = np.sqrt(np.diag(cov))
    corr = cov[:block, block:] / np.outer(sd[:block], sd[block:])
    return float(np.min(np.max(np.abs(corr), axis=0)))


@dataclass(frozen=True)
class Block:
    """Rectangle with top-left corner (x0, y0) = (col, row), size w x h."""

    x0: int
    y0: int
    w: int
    h: int


@dataclass(frozen=True)
class RandomRects:
    """n random rectangles, reproducible from the seed alone."""

    n: int
    seed: int


@dataclass(frozen=True)
class Stripe:
    """All rows of columns col_lo..col_hi inclusive."""

    col_lo: int
    col_hi: int


def _pattern_mask(pattern, H: int, W: int) -> np.ndarray:
    mask = np.zeros((H, W), dtype=bool)
    if isinstance(pattern, Block):
        if pattern.w < 0 or pattern.h < 0:
            raise OutOfBounds("negative block size")
        if pattern.w == 0 or pattern.h == 0:
            return mask
        if not (0 <= pattern.x0 and pattern.x0 + pattern.w <= W):
            raise OutOfBounds("block columns outside the field")
        if not (0 <= pattern.y0 and pattern.y0 + pattern.h <= H):
            raise OutOfBounds("block rows outside the field")
        mask[pattern.y0 : pattern.y0 + pattern.h, pattern.x0 : pattern.x0 + pattern.w] = True
        return mask
    if isinstance(pattern, Stripe):
        if not (0 <= pattern.col_lo <= pattern.col_hi < W):
            raise OutOfBounds("stripe columns outside the field")
        mask[:, pattern.col_lo : pattern.col_hi + 1] = True
        return mask
    if isinstance(pattern, RandomRects):
        rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence(pattern.seed)))
        for _ in range(pattern.n):
            w = int(rng.integers(2, max(3, W // 4 + 1)))
            h = int(rng.integers(2, max(3, H // 4 + 1)))
            x0 = int(rng.integers(0, W - w + 1))
            y0 = int(rng.integers(0, H - h + 1))
            mask[y0 : y0 + h, x0 : x0 + w] = True
        return mask
    raise TypeError(f"unknown corruption pattern {pattern!r}")


def corrupt(field: FieldGrid, pattern) -> tuple[FieldGrid, np.ndarray]:
    """Zero the pattern's pixels; returns (corrupted field, boolean H x W mask)."""
    H, W, _ = field.shape
    mask = _pattern_mask(pattern, H, W)
    if mask.all():
        raise OutOfBounds("pattern leaves no known pixel")
    out = field.values.copy()
    out[mask, :] = 0.0
    return FieldGrid(out), mask


def exact_posterior(field: FieldGrid, mask: np.ndarray, spec: GRFSpec) -> FieldGrid:
    """GP posterior mean over corrupted pixels (the MMSE reconstruction)."""
    H, W, C = field.shape
    mask = np.asarray(mask, dtype=bool)
    if mask.shape != (H, W):
        raise ShapeMismatch("mask shape must match the field")
    if not mask.any():
        return field.copy()
    if mask.all():
        raise ValueError("need at least one known pixel")
    K = grf_covariance(spec, H, W)
    flat_mask = mask.ravel()
    obs_idx = np.flatnonzero(~flat_mask)
    out = field.values.copy()
    prior = MultivariateGaussian(np.zeros(H * W), K)
    for ch in range(C):
        vals = field.values[:, :, ch].ravel()[obs_idx]
        cond = prior.condition(obs_idx, vals)
        flat = out[:, :, ch].ravel().copy()
        flat[flat_mask] = cond.mean
        out[:, :, ch] = flat.reshape(H, W)
    return FieldGrid(out)


def _derive_seed(seed: int, channel: int, patch: int) -> int:
    ss = np.random.SeedSequence(seed, spawn_key=(channel, patch))
    return int(ss.generate_state(1)[0])


def inpaint_acg(
    field: FieldGrid,
    mask: np.ndarray,
    spec: GRFSpec,
    layout: PatchLayout,
    *,
    sched: NoiseSchedule | None = None,
    run_preset: SchedulePreset | None = None,
    consensus: ConsensusOperator | None = None,
    seed: int = 0,
    n_runs: int = 8,
    neighbors: str = "both",
    pair_models: dict[int, GaussianScoreModel] | None = None,
) -> FieldGrid:
    """Reconstruct corrupted patches by co-generating them with their neighbors.

    Each corrupted patch is the shared subject of up to two branches (left and
    right neighbor pair joints); known pixels in the patch and its contexts
    are clamped. The written value averages the canonical subject over n_runs
    driver runs. Corrupted patches are processed left to right, and a
    reconstructed patch may serve as context for later ones. Known pixels are
    never modified.

    `neighbors` restricts the branch set ("both", "left", "right"); "left"
    with an interior patch reproduces single-context conditional inpainting.
    `pair_models` can carry prebuilt pair joints (keyed by pair index) so
    repeated calls on the same geometry skip covariance rebuilds.
    """
    H, W, C = field.shape
    mask = np.asarray(mask, dtype=bool)
    if mask.shape != (H, W):
        raise ShapeMismatch("mask shape must match the field")
    if not mask.any():
        return field.copy()
    P = layout.count(W)
    if neighbors not in ("both", "left", "right"):
        raise ValueError("neighbors must be 'both', 'left' or 'right'")
    if sched is None:
        sched = linear_schedule(200)
    if run_preset is None:
        run_preset = preset("ACG", sched.T)
    if consensus is None:
        consensus = Mean()
    if pair_models is None:
        pair_models = {}
    m = H * layout.patch_w  # pixels per patch

    def get_model(pair_index: int) -> GaussianScoreModel:
        if pair_index not in pair_models:
            pair_models[pair_index] = pair_joint(spec, layout, pair_index, H, W)
        return pair_models[pair_index]

    rows = np.arange(H)
    patch_px = [_pixel_index(rows, layout.columns(i, W), W) for i in range(P)]
    known = ~mask.ravel()

    out = field.values.copy()
    for ch in range(C):
        work = out[:, :, ch].ravel().copy()
        avail = known.copy()  # known now, or reconstructed earlier
        for p in range(P):
            p_mask = mask.ravel()[patch_px[p]]
            if not p_mask.any():
                continue
            branches = []
            for side, nb, pair_index in (("left", p - 1, p - 1), ("right", p + 1, p)):
                if neighbors != "both" and neighbors != side:
                    continue
                if not 0 <= nb < P:
                    continue
                ctx_known_local = np.flatnonzero(avail[patch_px[nb]])
                if ctx_known_local.size == 0:
                    continue
                model = get_model(pair_index)
                if side == "left":
                    subject = np.arange(m, 2 * m)
                    context = np.arange(m)
                else:
                    subject = np.arange(m)
                    context = np.arange(m, 2 * m)
                part = IndexPartition(subject_idx=subject, context_idx=context)
                clamp_idx = [context[ctx_known_local]]
                clamp_val = [work[patch_px[nb]][ctx_known_local]]
                subj_known_local = np.flatnonzero(known[patch_px[p]])
                if subj_known_local.size:
                    clamp_idx.append(subject[subj_known_local])
                    clamp_val.append(work[patch_px[p]][subj_known_local])
                clamp = Clamp(np.concatenate(clamp_val), idx=np.concatenate(clamp_idx))
                branches.append(Branch(model, part, context_mode=clamp, label=side))
            if not branches:
                raise UnreconstructablePatch(
                    f"patch {p} has no neighboring data to condition on"
                )
            cfg = EnsembleConfig(
                branches=branches,
                preset=run_preset,
                sched=sched,
                consensus=consensus,
                seed=_derive_seed(seed, ch, p),
            )
            res = run_batch(cfg, n_runs)
            recon = res.canonical_subject.mean(axis=0)
            masked_local = np.flatnonzero(p_mask)
            work[patch_px[p][masked_local]] = recon[masked_local]
            avail[patch_px[p]] = True
        out[:, :, ch] = work.reshape(H, W)
    return FieldGrid(out)


_SSIM_K1 = 0.01
_SSIM_K2 = 0.03
_SSIM_WIN = 7
_SSIM_SIGMA = 1.5


def _ssim_window() -> np.ndarray:
    half = _SSIM_WIN // 2
    g = np.arange(_SSIM_WIN) - half
    w = np.exp(-(g[:, None] ** 2 + g[None, :] ** 2) / (2.0 * _SSIM_SIGMA**2))
    return w / w.sum()


def metrics(ref: FieldGrid, rec: FieldGrid) -> tuple[float, float, float]:
    """(MSE, PSNR in dB, SSIM) of a reconstruction against its reference.

    PSNR uses the reference's dynamic range as peak and is +inf for an exact
    reconstruction. SSIM uses K1=0.01, K2=0.03, L=range, a 7x7 Gaussian
    window with sigma 1.5, averaged over valid windows and channels; fields
    must be at least 7x7.
    """
    if ref.shape != rec.shape:
        raise ShapeMismatch(f"{ref.shape} vs {rec.shape}")
    H, W, C = ref.shape
    diff = rec.values - ref.values
    mse = float(np.mean(diff**2))
    rng_ref = float(ref.values.max() - ref.values.min())
    if mse == 0.0:
        psnr = float("inf")
    else:
        psnr = 10.0 * np.log10(rng_ref**2 / mse) if rng_ref > 0 else float("-inf")

    if H < _SSIM_WIN or W < _SSIM_WIN:
        raise ShapeMismatch(f"SSIM needs at least {_SSIM_WIN}x{_SSIM_WIN} fields")
    L = rng_ref if rng_ref > 0 else 1.0
    c1 = (_SSIM_K1 * L) ** 2
    c2 = (_SSIM_K2 * L) ** 2
    win = _ssim_window()
    ssim_vals = []
    for ch in range(C):
        x = sliding_window_view(ref.values[:, :, ch], (_SSIM_WIN, _SSIM_WIN))
        y = sliding_window_view(rec.values[:, :, ch], (_SSIM_WIN, _SSIM_WIN))
        mu_x = np.sum(x * win, axis=(-1, -2))
        mu_y = np.sum(y * win, axis=(-1, -2))
        var_x = np.sum(x * x * win, axis=(-1, -2)) - mu_x**2
        var_y = np.sum(y * y * win, axis=(-1, -2)) - mu_y**2
        cov = np.sum(x * y * win, axis=(-1, -2)) - mu_x * mu_y
        num = (2.0 * mu_x * mu_y + c1) * (2.0 * cov + c2)
        den = (mu_x**2 + mu_y**2 + c1) * (var_x + var_y + c2)
        ssim_vals.append(np.mean(num / den))
    return mse, float(psnr), float(np.mean(ssim_vals))


def write_fgrid(field: FieldGrid, path) -> None:
    """ASCII format: 'H W C' header line, then row-major channel-last floats."""
    H, W, C = field.shape
    with open(path, "w") as fp:
        fp.write(f"{H} {W} {C}\n")
        flat = field.values.reshape(H, W * C)
        for row in flat:
            fp.write(" ".join(repr(v) for v in row))
            fp.write("\n")


def read_fgrid(path) -> FieldGrid:
    with open(path) as fp:
        header = fp.readline().split()
        if len(header) != 3:
            raise ValueError(f"bad .fgrid header in {path}")
        H, W, C = (int(x) for x in header)
        vals = np.array(fp.read().split(), dtype=float)
    if vals.size != H * W * C:
        raise ValueError(f"expected {H * W * C} values, got {vals.size}")
    return FieldGrid(vals.reshape(H, W, C))


def write_fmask(mask: np.ndarray, path) -> None:
    """Same layout as .fgrid with C=1 and 0/1 entries."""
    mask = np.asarray(mask, dtype=bool)
    H, W = mask.shape
    with open(path, "w") as fp:
        fp.write(f"{H} {W} 1\n")
        for row in mask.astype(int):
            fp.write(" ".join(str(v) for v in row))
            fp.write("\n")


def read_fmask(path) -> np.ndarray:
    with open(path) as fp:
        header = fp.readline().split()
        H, W, _ = (int(x) for x in header)
        vals = np.array(fp.read().split(), dtype=float)
    if vals.size != H * W:
        raise ValueError(f"expected {H * W} entries, got {vals.size}")
    return vals.reshape(H, W).astype(bool)
