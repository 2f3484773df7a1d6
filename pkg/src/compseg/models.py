"""Per-class compositional mixture models and their per-pixel likelihood maps.

A class model holds M mixtures. Each mixture covers a canonical lattice and
carries, per position, a foreground prior, foreground mixture coefficients
over the shared dictionary, and context coefficients. A single
position-independent occluder model is shared by every class.

All map math happens in the log domain. The three per-pixel maps are

    fg[i]  = log p(i) + log sum_k a[i,k] pdf_k(f_i)
    ctx[i] = log(1 - p(i)) + log sum_k c[i,k] pdf_k(f_i)
    occ[i] = log p(i) + log sum_k b[k] pdf_k(f_i)

with the prior clamped away from {0, 1} so both logs stay finite.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from . import _kernels
from .errors import ValidationError
from .fmap import BoundingBox, FeatureMap, resample_nearest
from .vmf import VmfDictionary

PRIOR_CLAMP = 1e-6
SIMPLEX_TOL = 1e-6

# Per-pixel segmentation labels.
LABEL_FG = 0
LABEL_CTX = 1
LABEL_OCC = 2


def _validate_simplex_rows(arr: np.ndarray, what: str) -> np.ndarray:
    a = np.ascontiguousarray(arr, dtype=np.float64)
    if not np.all(np.isfinite(a)):
        raise ValidationError(f"{what} contains non-finite entries")
    if np.any(a < -1e-12):
        raise ValidationError(f"{what} contains negative entries")
    a = np.maximum(a, 0.0)
    sums = a.sum(axis=-1)
    if np.any(np.abs(sums - 1.0) > SIMPLEX_TOL):
        worst = float(np.max(np.abs(sums - 1.0)))
        raise ValidationError(f"{what} rows must sum to 1 (worst deviation {worst:.2e})")
    return a


@dataclass(frozen=True)
class MixtureModel:
    """One mixture: canonical-lattice prior and coefficient grids."""

    fg_prior: np.ndarray    # (H, W) in [0, 1]
    fg_coeffs: np.ndarray   # (H, W, K), rows on the simplex
    ctx_coeffs: np.ndarray  # (H, W, K), rows on the simplex

    def __post_init__(self):
        prior = np.ascontiguousarray(self.fg_prior, dtype=np.float64)
        if prior.ndim != 2:
            raise ValidationError(f"fg_prior must be 2-d, got {prior.shape}")
        if not np.all(np.isfinite(prior)) or np.any(prior < 0) or np.any(prior > 1):
            raise ValidationError("fg_prior entries must lie in [0, 1]")
        fg = _validate_simplex_rows(self.fg_coeffs, "fg_coeffs")
        ctx = _validate_simplex_rows(self.ctx_coeffs, "ctx_coeffs")
        if fg.shape[:2] != prior.shape or ctx.shape[:2] != prior.shape:
            raise ValidationError(
                f"coefficient grids {fg.shape} / {ctx.shape} do not match prior {prior.shape}"
            )
        if fg.shape[2] != ctx.shape[2]:
            raise ValidationError("fg and ctx coefficient grids disagree on K")
        clamped = np.clip(prior, PRIOR_CLAMP, 1.0 - PRIOR_CLAMP)
        with np.errstate(divide="ignore"):
            log_fg = np.log(fg)
            log_ctx = np.log(ctx)
        for name, arr in (
            ("fg_prior", prior), ("fg_coeffs", fg), ("ctx_coeffs", ctx),
        ):
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)
        object.__setattr__(self, "_log_p", np.log(clamped))
        object.__setattr__(self, "_log_1mp", np.log1p(-clamped))
        object.__setattr__(self, "_log_fg", log_fg)
        object.__setattr__(self, "_log_ctx", log_ctx)

    @property
    def shape(self) -> tuple[int, int]:
        return self.fg_prior.shape

    @property
    def n_components(self) -> int:
        return self.fg_coeffs.shape[2]


@dataclass(frozen=True)
class ClassModel:
    label: str
    mixtures: tuple[MixtureModel, ...]

    def __post_init__(self):
        if not self.label:
            raise ValidationError("class label must be non-empty")
        mixtures = tuple(self.mixtures)
        if not mixtures:
            raise ValidationError(f"class {self.label!r} has no mixtures")
        k = mixtures[0].n_components
        if any(m.n_components != k for m in mixtures):
            raise ValidationError(f"class {self.label!r} mixes component counts")
        object.__setattr__(self, "mixtures", mixtures)


@dataclass(frozen=True)
class OccluderModel:
    """Position-independent outlier model: one coefficient row."""

    coeffs: np.ndarray  # (K,) on the simplex

    def __post_init__(self):
        c = _validate_simplex_rows(np.asarray(self.coeffs, dtype=np.float64), "occluder coeffs")
        if c.ndim != 1:
            raise ValidationError(f"occluder coeffs must be 1-d, got {c.shape}")
        c.setflags(write=False)
        object.__setattr__(self, "coeffs", c)
        with np.errstate(divide="ignore"):
            object.__setattr__(self, "_log_coeffs", np.log(c))

    @property
    def n_components(self) -> int:
        return self.coeffs.shape[0]


@dataclass(frozen=True)
class LikelihoodMaps:
    """The three per-pixel log maps on one lattice."""

    fg: np.ndarray
    ctx: np.ndarray
    occ: np.ndarray

    def __post_init__(self):
        fg = np.asarray(self.fg, dtype=np.float64)
        ctx = np.asarray(self.ctx, dtype=np.float64)
        occ = np.asarray(self.occ, dtype=np.float64)
        if fg.shape != ctx.shape or fg.shape != occ.shape or fg.ndim != 2:
            raise ValidationError("likelihood maps must share one 2-d shape")
        for name, arr in (("fg", fg), ("ctx", ctx), ("occ", occ)):
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)

    @property
    def shape(self) -> tuple[int, int]:
        return self.fg.shape

    def resampled(self, shape: tuple[int, int]) -> "LikelihoodMaps":
        return LikelihoodMaps(
            resample_nearest(self.fg, shape),
            resample_nearest(self.ctx, shape),
            resample_nearest(self.occ, shape),
        )


def _check_k(dictionary: VmfDictionary, k: int, what: str) -> None:
    if k != dictionary.size:
        raise ValidationError(
            f"{what} has K={k} but dictionary has {dictionary.size} components"
        )


def fg_loglik(
    f: np.ndarray, mixture: MixtureModel, pos: tuple[int, int], dictionary: VmfDictionary
) -> float:
    """Foreground mixture log-likelihood of one vector at one canonical position."""
    _check_k(dictionary, mixture.n_components, "mixture")
    r, c = pos
    cos = np.asarray(f, dtype=np.float64)[None, :] @ dictionary.means.T
    out = _kernels.mixture_loglik(
        cos,
        dictionary.concentrations,
        dictionary.log_normalizers,
        mixture._log_fg[r, c][None, :],
    )
    return float(out[0])


def ctx_loglik(
    f: np.ndarray, mixture: MixtureModel, pos: tuple[int, int], dictionary: VmfDictionary
) -> float:
    """Context mixture log-likelihood of one vector at one canonical position."""
    _check_k(dictionary, mixture.n_components, "mixture")
    r, c = pos
    cos = np.asarray(f, dtype=np.float64)[None, :] @ dictionary.means.T
    out = _kernels.mixture_loglik(
        cos,
        dictionary.concentrations,
        dictionary.log_normalizers,
        mixture._log_ctx[r, c][None, :],
    )
    return float(out[0])


def occ_loglik(f: np.ndarray, occluder: OccluderModel, dictionary: VmfDictionary) -> float:
    """Occluder log-likelihood of one vector (position-independent)."""
    _check_k(dictionary, occluder.n_components, "occluder")
    cos = np.asarray(f, dtype=np.float64)[None, :] @ dictionary.means.T
    out = _kernels.shared_mixture_loglik(
        cos, dictionary.concentrations, dictionary.log_normalizers, occluder._log_coeffs
    )
    return float(out[0])


def _crop_cosines(crop: FeatureMap, shape: tuple[int, int], dictionary: VmfDictionary) -> np.ndarray:
    if crop.dim != dictionary.dim:
        raise ValidationError(
            f"crop dim {crop.dim} does not match dictionary dim {dictionary.dim}"
        )
    aligned = resample_nearest(crop.data, shape)
    flat = aligned.reshape(-1, crop.dim).astype(np.float64)
    return flat @ dictionary.means.T


def likelihood_maps(
    crop: FeatureMap,
    mixture: MixtureModel,
    dictionary: VmfDictionary,
    occluder: OccluderModel,
    shape: tuple[int, int] | None = None,
) -> LikelihoodMaps:
    """The three log maps for one crop under one mixture.

    `shape` picks the evaluation lattice and defaults to the mixture's
    canonical one, where the crop is aligned by nearest neighbour. Passing
    the crop's own shape instead aligns the coefficient planes to the data
    (one nearest-neighbour step in total rather than one on the way in and
    one on the way back out, which matters once part layouts vary at a
    few-pixel scale).
    """
    _check_k(dictionary, mixture.n_components, "mixture")
    _check_k(dictionary, occluder.n_components, "occluder")
    sig = dictionary.concentrations
    lz = dictionary.log_normalizers
    k = dictionary.size

    if shape is None or tuple(shape) == mixture.shape:
        h, w = mixture.shape
        cos = _crop_cosines(crop, (h, w), dictionary)
        log_fg = mixture._log_fg.reshape(-1, k)
        log_ctx = mixture._log_ctx.reshape(-1, k)
        log_p = mixture._log_p.reshape(-1)
        log_1mp = mixture._log_1mp.reshape(-1)
    else:
        h, w = shape
        cos = _crop_cosines(crop, (h, w), dictionary)
        log_fg = resample_nearest(mixture._log_fg, (h, w)).reshape(-1, k)
        log_ctx = resample_nearest(mixture._log_ctx, (h, w)).reshape(-1, k)
        log_p = resample_nearest(mixture._log_p, (h, w)).reshape(-1)
        log_1mp = resample_nearest(mixture._log_1mp, (h, w)).reshape(-1)

    fg_ll = _kernels.mixture_loglik(cos, sig, lz, log_fg)
    ctx_ll = _kernels.mixture_loglik(cos, sig, lz, log_ctx)
    occ_ll = _kernels.shared_mixture_loglik(cos, sig, lz, occluder._log_coeffs)

    return LikelihoodMaps(
        (log_p + fg_ll).reshape(h, w),
        (log_1mp + ctx_ll).reshape(h, w),
        (log_p + occ_ll).reshape(h, w),
    )


def image_loglik(
    maps: LikelihoodMaps,
    visibility: np.ndarray | None = None,
    score_mode: str = "max",
) -> float:
    """Total log-likelihood of a crop from its maps.

    Without a visibility grid every pixel takes its best branch ("max" mode)
    or the additive foreground/context composition against the occluder
    branch ("additive" mode). With a binary visibility grid, 1 selects the
    foreground map value and 0 the occluder map value.
    """
    if visibility is not None:
        z = np.asarray(visibility)
        if z.shape != maps.shape:
            raise ValidationError(
                f"visibility shape {z.shape} does not match maps {maps.shape}"
            )
        if not np.all((z == 0) | (z == 1)):
            raise ValidationError("visibility grid must be binary")
        zf = z.astype(np.float64)
        return float(np.sum(zf * maps.fg + (1.0 - zf) * maps.occ))
    if score_mode == "max":
        per_pixel = np.maximum(np.maximum(maps.fg, maps.ctx), maps.occ)
    elif score_mode == "additive":
        per_pixel = np.maximum(np.logaddexp(maps.fg, maps.ctx), maps.occ)
    else:
        raise ValidationError(f"unknown score mode {score_mode!r}")
    return float(np.sum(per_pixel))


@dataclass(frozen=True)
class ClassifyResult:
    class_index: int
    mixture_index: int
    score: float
    scores: tuple[np.ndarray, ...]  # per class, (M_y,) totals


def classify(
    crop: FeatureMap,
    classes: Sequence[ClassModel],
    dictionary: VmfDictionary,
    occluder: OccluderModel,
    visibility: np.ndarray | None = None,
    score_mode: str = "max",
) -> ClassifyResult:
    """Best (class, mixture) for a crop; ties break to the lowest indices.

    Every candidate is scored on the crop's own lattice, so totals stay
    comparable across mixtures whose canonical shapes differ. A visibility
    grid, when given, is in crop coordinates.
    """
    if not classes:
        raise ValidationError("classify needs at least one class model")
    z = None
    if visibility is not None:
        z = np.asarray(visibility)
        if z.shape != crop.shape:
            raise ValidationError(
                f"visibility shape {z.shape} does not match crop {crop.shape}"
            )
    best = (-np.inf, 0, 0)
    all_scores = []
    for ci, cls in enumerate(classes):
        row = np.empty(len(cls.mixtures))
        for mi, mixture in enumerate(cls.mixtures):
            maps = likelihood_maps(crop, mixture, dictionary, occluder, shape=crop.shape)
            score = image_loglik(maps, visibility=z, score_mode=score_mode)
            row[mi] = score
            if score > best[0]:
                best = (score, ci, mi)
        all_scores.append(row)
    return ClassifyResult(best[1], best[2], best[0], tuple(all_scores))


def segment_single(maps: LikelihoodMaps) -> np.ndarray:
    """Per-pixel argmax over the three maps; ties prefer FG, then OCC."""
    fg, ctx, occ = maps.fg, maps.ctx, maps.occ
    out = np.full(maps.shape, LABEL_CTX, dtype=np.int8)
    occ_beats_ctx = occ >= ctx
    out[occ_beats_ctx] = LABEL_OCC
    fg_wins = (fg >= ctx) & (fg >= occ)
    out[fg_wins] = LABEL_FG
    return out


def amodal_mask(mixture: MixtureModel, box: BoundingBox) -> np.ndarray:
    """Thresholded foreground prior (>= 0.5), resampled to the box lattice."""
    return resample_nearest(mixture.fg_prior, box.shape) >= 0.5
