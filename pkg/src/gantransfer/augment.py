"""Data-side noise injection: flip, JPEG round-trip, Gaussian blur, Cutmix.

Per-sample transforms draw from substreams keyed by sample id, so the result
of a pipeline call depends only on (batch content, config, seed, sample ids),
not on evaluation order. Cutmix runs at batch level and, in its default
intra-class form, never touches labels.
"""

from __future__ import annotations

import io
import math
from dataclasses import dataclass

import numpy as np
from PIL import Image

from . import rng as rng_mod
from .params import LabeledBatch


@dataclass(frozen=True)
class AugmentationConfig:
    p_flip: float = 0.5
    p_jpeg: float = 0.5
    p_blur: float = 0.5
    p_cutmix: float = 0.5
    jpeg_quality_range: tuple[int, int] = (30, 100)
    blur_sigma_range: tuple[float, float] = (0.5, 3.0)
    rng_seed: int = 0

    def __post_init__(self):
        for name in ("p_flip", "p_jpeg", "p_blur", "p_cutmix"):
            p = getattr(self, name)
            if not 0.0 <= p <= 1.0:
                raise ValueError(f"{name}={p} outside [0, 1]")
        lo, hi = self.jpeg_quality_range
        if not (1 <= lo <= hi <= 100):
            raise ValueError(f"bad jpeg_quality_range {self.jpeg_quality_range}")
        slo, shi = self.blur_sigma_range
        if not (0.0 <= slo <= shi):
            raise ValueError(f"bad blur_sigma_range {self.blur_sigma_range}")

    def with_rates(self, p: float) -> "AugmentationConfig":
        return AugmentationConfig(
            p_flip=p, p_jpeg=p, p_blur=p, p_cutmix=p,
            jpeg_quality_range=self.jpeg_quality_range,
            blur_sigma_range=self.blur_sigma_range,
            rng_seed=self.rng_seed,
        )


def pretrain_default(seed: int = 0) -> AugmentationConfig:
    return AugmentationConfig(rng_seed=seed).with_rates(0.2)


def transfer_default(seed: int = 0) -> AugmentationConfig:
    return AugmentationConfig(rng_seed=seed).with_rates(0.5)


def disabled(seed: int = 0) -> AugmentationConfig:
    return AugmentationConfig(rng_seed=seed).with_rates(0.0)


@dataclass(frozen=True)
class CutBox:
    x1: int
    x2: int
    y1: int
    y2: int

    def __post_init__(self):
        if not (0 <= self.x1 <= self.x2 and 0 <= self.y1 <= self.y2):
            raise ValueError(f"degenerate cut box {self}")

    @property
    def area(self) -> int:
        return (self.x2 - self.x1) * (self.y2 - self.y1)


def sample_cut_box(
    width: int, height: int, lambda_mix: float, rng: np.random.Generator
) -> CutBox:
    """Box with side fractions sqrt(1 - lambda_mix), centered uniformly.

    Side lengths truncate to integers before the halving, which keeps the cut
    area at or below (1 - lambda_mix) * width * height even after clipping.
    """
    if width < 1 or height < 1:
        raise ValueError("image must be at least 1x1")
    if not 0.0 <= lambda_mix <= 1.0:
        raise ValueError(f"lambda_mix={lambda_mix} outside [0, 1]")
    frac = math.sqrt(1.0 - lambda_mix)
    cut_w = int(width * frac)
    cut_h = int(height * frac)
    bx = int(rng.integers(width))
    by = int(rng.integers(height))
    x1 = int(np.clip(bx - cut_w // 2, 0, width))
    x2 = int(np.clip(bx + cut_w // 2, 0, width))
    y1 = int(np.clip(by - cut_h // 2, 0, height))
    y2 = int(np.clip(by + cut_h // 2, 0, height))
    return CutBox(x1, x2, y1, y2)


def _cutmix_draws(batch: LabeledBatch, rng: np.random.Generator):
    """Shared draw sequence for both Cutmix variants: trigger, donors, box."""
    m = batch.size
    rho = float(rng.uniform())
    perm = rng.permutation(m)
    lam = float(rng.uniform())
    h, w = batch.images.shape[2], batch.images.shape[3]
    box = sample_cut_box(w, h, lam, rng)
    return rho, perm, box


def intra_class_cutmix(
    batch: LabeledBatch,
    cutmix_prob: float,
    rng: np.random.Generator,
    stats: dict | None = None,
) -> LabeledBatch:
    """Paste a random box from a same-label donor into each image; labels stay.

    Donors come from a random permutation of the batch; positions whose donor
    carries a different label are left untouched, as is everything outside
    the box. Batches of one sample pass through unchanged.
    """
    if batch.size < 2:
        return batch
    rho, perm, box = _cutmix_draws(batch, rng)
    if rho >= cutmix_prob:
        return batch
    if stats is not None:
        stats["cutmix"] = stats.get("cutmix", 0) + 1
    same = batch.labels[perm] == batch.labels
    if not same.any():
        return batch
    donors = batch.images[perm]
    images = batch.images.copy()
    region = np.s_[:, box.y1 : box.y2, box.x1 : box.x2]
    for i in np.flatnonzero(same):
        images[i][region] = donors[i][region]
    return LabeledBatch(images, batch.labels.copy(), batch.sample_ids)


def inter_class_cutmix(
    batch: LabeledBatch,
    cutmix_prob: float,
    rng: np.random.Generator,
    stats: dict | None = None,
) -> LabeledBatch:
    """Label-mixing Cutmix ablation: every position mixes, labels interpolate.

    The mixed label weights the original by the surviving area fraction, the
    donor by the cut fraction. Uses the same draw sequence as the intra-class
    form so paired runs see identical boxes.
    """
    if batch.size < 2:
        return batch
    rho, perm, box = _cutmix_draws(batch, rng)
    if rho >= cutmix_prob:
        return batch
    if stats is not None:
        stats["cutmix"] = stats.get("cutmix", 0) + 1
    h, w = batch.images.shape[2], batch.images.shape[3]
    keep_frac = 1.0 - box.area / float(h * w)
    donors = batch.images[perm]
    images = batch.images.copy()
    region = np.s_[:, :, box.y1 : box.y2, box.x1 : box.x2]
    images[region] = donors[region]
    labels = keep_frac * batch.labels + (1.0 - keep_frac) * batch.labels[perm]
    return LabeledBatch(images, labels.astype(batch.labels.dtype), batch.sample_ids)


def jpeg_round_trip(image: np.ndarray, quality: int) -> np.ndarray:
    """Encode one c x h x w image to baseline JPEG and decode it back."""
    if not isinstance(quality, (int, np.integer)) or not 1 <= int(quality) <= 100:
        raise ValueError(f"quality must be an integer in [1, 100], got {quality!r}")
    quality = int(quality)
    image = np.asarray(image)
    if image.ndim != 3 or image.shape[0] not in (1, 3):
        raise ValueError(f"expected (1|3) x h x w image, got shape {image.shape}")
    arr = np.clip(np.round(image * 255.0), 0, 255).astype(np.uint8)
    if arr.shape[0] == 1:
        pil = Image.fromarray(arr[0], mode="L")
    else:
        pil = Image.fromarray(np.moveaxis(arr, 0, 2), mode="RGB")
    buf = io.BytesIO()
    # 4:2:0 chroma subsampling at ordinary qualities, 4:4:4 at high quality.
    pil.save(buf, format="JPEG", quality=quality, subsampling=2 if quality < 95 else 0)
    buf.seek(0)
    back = np.asarray(Image.open(buf).convert(pil.mode), dtype=np.float64) / 255.0
    if arr.shape[0] == 1:
        back = back[None, :, :]
    else:
        back = np.moveaxis(back, 2, 0)
    return np.ascontiguousarray(back, dtype=image.dtype)


def gaussian_kernel(sigma: float) -> np.ndarray:
    """Normalized 1-d Gaussian taps with radius ceil(3 sigma)."""
    radius = math.ceil(3.0 * sigma)
    t = np.arange(-radius, radius + 1, dtype=np.float64)
    k = np.exp(-(t * t) / (2.0 * sigma * sigma))
    return k / k.sum()


def gaussian_blur(image: np.ndarray, sigma: float) -> np.ndarray:
    """Separable Gaussian filter with reflect padding; sigma 0 is the identity."""
    if sigma < 0:
        raise ValueError("sigma must be nonnegative")
    image = np.asarray(image)
    if sigma == 0.0:
        return image.copy()
    k = gaussian_kernel(sigma)
    r = len(k) // 2
    out = image.astype(np.float64)
    for axis in (1, 2):
        pad = [(0, 0)] * 3
        pad[axis] = (r, r)
        padded = np.pad(out, pad, mode="reflect")
        acc = np.zeros_like(out)
        for j, kv in enumerate(k):
            sl = [slice(None)] * 3
            sl[axis] = slice(j, j + image.shape[axis])
            acc += kv * padded[tuple(sl)]
        out = acc
    return np.clip(out, 0.0, 1.0).astype(image.dtype)


def horizontal_flip(image: np.ndarray) -> np.ndarray:
    return np.ascontiguousarray(np.asarray(image)[..., ::-1])


def apply_pipeline(
    batch: LabeledBatch,
    config: AugmentationConfig,
    seq: np.random.SeedSequence | None = None,
    stats: dict | None = None,
    label_mixing: bool = False,
) -> LabeledBatch:
    """Per-sample flip/JPEG/blur gates followed by batch-level Cutmix.

    ``seq`` scopes the randomness (defaults to a root stream built from
    ``config.rng_seed``); per-sample substreams are keyed by sample id.
    ``label_mixing`` swaps in the label-interpolating Cutmix ablation; the
    default pipeline never modifies labels.
    """
    if seq is None:
        seq = rng_mod.root(config.rng_seed)
    if stats is None:
        stats = {}
    images = batch.images.copy()
    m = batch.size
    ids = (
        batch.sample_ids
        if batch.sample_ids is not None
        else np.arange(m, dtype=np.int64)
    )
    qlo, qhi = config.jpeg_quality_range
    slo, shi = config.blur_sigma_range
    for i in range(m):
        g = rng_mod.generator(seq, rng_mod.STREAM_SAMPLE, int(ids[i]))
        if g.uniform() < config.p_flip:
            images[i] = horizontal_flip(images[i])
            stats["flip"] = stats.get("flip", 0) + 1
        if g.uniform() < config.p_jpeg:
            q = int(g.integers(qlo, qhi + 1))
            images[i] = jpeg_round_trip(images[i], q)
            stats["jpeg"] = stats.get("jpeg", 0) + 1
        if g.uniform() < config.p_blur:
            sigma = float(g.uniform(slo, shi))
            images[i] = gaussian_blur(images[i], sigma)
            stats["blur"] = stats.get("blur", 0) + 1
    out = LabeledBatch(images, batch.labels.copy(), batch.sample_ids)
    if config.p_cutmix > 0:
        if m < 2:
            stats["cutmix_skipped"] = stats.get("cutmix_skipped", 0) + 1
        else:
            g = rng_mod.generator(seq, rng_mod.STREAM_CUTMIX)
            mix = inter_class_cutmix if label_mixing else intra_class_cutmix
            out = mix(out, config.p_cutmix, g, stats)
    return out
