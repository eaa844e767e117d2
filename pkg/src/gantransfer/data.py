"""Dataset provisioning: synthetic desk-scale corpora, splits, folder loading.

The synthetic task mimics the real-vs-generated setup: the negative class is
band-limited smooth noise; the positive class carries one of two up-sampling
style artifacts. ``checkerboard_upsample`` (the source domain) injects block
structure and therefore extra top-octave energy; ``blur_residual`` (the
target domain) smooths the field below the real class's sharpness while
leaving a faint Nyquist grid. The grid is the cue shared across domains,
total high-frequency energy is the cue whose sign flips between them; that
opposition is what makes source forgetting measurable.
"""

from __future__ import annotations

import json
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image

from . import rng as rng_mod
from .augment import gaussian_blur
from .digest import digest_file, digest_of
from .errors import ConfigError

ARTIFACT_KINDS = ("checkerboard_upsample", "blur_residual")
_FIELD_CUTOFF = 0.12  # cycles/pixel; keeps "real" images band-limited
_TOP_OCTAVE = 0.25

SPLITS = ("train", "val", "test", "transfer")


@dataclass(frozen=True)
class SyntheticSpec:
    n_per_class: int = 1000
    image_shape: tuple[int, int, int] = (3, 64, 64)
    artifact_kind: str = "checkerboard_upsample"
    artifact_strength: float = 1.0
    residual_amp: float = 0.05
    blur_sigma: float = 2.0
    seed: int = 0

    def __post_init__(self):
        if self.n_per_class < 1:
            raise ConfigError("n_per_class must be at least 1")
        if self.artifact_kind not in ARTIFACT_KINDS:
            raise ConfigError(
                f"artifact_kind {self.artifact_kind!r} not in {ARTIFACT_KINDS}"
            )
        if not 0.0 < self.artifact_strength <= 1.0:
            raise ConfigError("artifact_strength must be in (0, 1]")
        if len(self.image_shape) != 3:
            raise ConfigError("image_shape must be (c, h, w)")

    def to_dict(self) -> dict:
        d = {
            "n_per_class": self.n_per_class,
            "image_shape": list(self.image_shape),
            "artifact_kind": self.artifact_kind,
            "artifact_strength": self.artifact_strength,
            "residual_amp": self.residual_amp,
            "blur_sigma": self.blur_sigma,
            "seed": self.seed,
        }
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "SyntheticSpec":
        d = dict(d)
        if "image_shape" in d:
            d["image_shape"] = tuple(d["image_shape"])
        return cls(**d)


@dataclass
class Dataset:
    images: np.ndarray
    labels: np.ndarray
    ids: list[str]
    source: dict = field(default_factory=dict)

    def __post_init__(self):
        self.images = np.asarray(self.images, dtype=np.float32)
        self.labels = np.asarray(self.labels, dtype=np.float32)
        if len(self.ids) != self.images.shape[0] or self.labels.shape[0] != self.images.shape[0]:
            raise ConfigError("images, labels, and ids must agree in length")

    def __len__(self) -> int:
        return self.images.shape[0]


def _smooth_field(g: np.random.Generator, c: int, h: int, w: int) -> np.ndarray:
    z = g.standard_normal((c, h, w))
    fy = np.fft.fftfreq(h)[:, None]
    fx = np.fft.fftfreq(w)[None, :]
    r = np.sqrt(fy * fy + fx * fx)
    mask = np.exp(-((r / _FIELD_CUTOFF) ** 4))
    spec = np.fft.fft2(z, axes=(1, 2)) * mask[None, :, :]
    fld = np.real(np.fft.ifft2(spec, axes=(1, 2)))
    fld = fld / max(fld.std(), 1e-12)
    offset = g.uniform(0.35, 0.65)
    amp = g.uniform(0.12, 0.22)
    return np.clip(offset + amp * fld, 0.0, 1.0)


def _checkerboard_upsample(x: np.ndarray, strength: float) -> np.ndarray:
    base = x[:, ::2, ::2]
    up = np.repeat(np.repeat(base, 2, axis=1), 2, axis=2)
    return np.clip((1.0 - strength) * x + strength * up, 0.0, 1.0)


def _blur_residual(
    x: np.ndarray, strength: float, sigma: float, amp: float, sign: float
) -> np.ndarray:
    smooth = gaussian_blur(x, sigma)
    h, w = x.shape[1], x.shape[2]
    ii, jj = np.indices((h, w))
    grid = sign * amp * ((-1.0) ** (ii + jj))
    return np.clip((1.0 - strength) * x + strength * (smooth + grid[None]), 0.0, 1.0)


def generate_synthetic(spec: SyntheticSpec) -> Dataset:
    """Two balanced classes, deterministic per spec; label 1 marks the artifact."""
    c, h, w = spec.image_shape
    root = rng_mod.root(spec.seed)
    n = spec.n_per_class
    images = np.empty((2 * n, c, h, w), dtype=np.float32)
    labels = np.empty(2 * n, dtype=np.float32)
    ids = []
    for i in range(n):
        g = rng_mod.generator(root, 0, i)
        images[i] = _smooth_field(g, c, h, w)
        labels[i] = 0.0
        ids.append(f"real_{i:06d}")
    for i in range(n):
        g = rng_mod.generator(root, 1, i)
        fld = _smooth_field(g, c, h, w)
        if spec.artifact_kind == "checkerboard_upsample":
            img = _checkerboard_upsample(fld, spec.artifact_strength)
        else:
            sign = 1.0 if g.uniform() < 0.5 else -1.0
            img = _blur_residual(
                fld, spec.artifact_strength, spec.blur_sigma, spec.residual_amp, sign
            )
        images[n + i] = img
        labels[n + i] = 1.0
        ids.append(f"gen_{i:06d}")
    return Dataset(images, labels, ids, source=spec.to_dict())


def spectral_band_energy(images: np.ndarray, r_min: float = _TOP_OCTAVE) -> np.ndarray:
    """Mean squared spectrum magnitude above ``r_min`` cycles/pixel, per image."""
    images = np.asarray(images, dtype=np.float64)
    h, w = images.shape[2], images.shape[3]
    fy = np.fft.fftfreq(h)[:, None]
    fx = np.fft.fftfreq(w)[None, :]
    band = np.sqrt(fy * fy + fx * fx) >= r_min
    spec = np.fft.fft2(images, axes=(2, 3))
    power = (spec.real**2 + spec.imag**2)[:, :, band]
    return power.mean(axis=(1, 2))


@dataclass
class DatasetManifest:
    ids: list[str]
    labels: list[float]
    source: dict
    split_of: dict[str, str]

    def to_dict(self) -> dict:
        return {
            "ids": list(self.ids),
            "labels": [float(v) for v in self.labels],
            "source": self.source,
            "split_of": dict(self.split_of),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "DatasetManifest":
        return cls(d["ids"], d["labels"], d["source"], d["split_of"])

    def digest(self) -> str:
        return digest_of(self.to_dict())


def _stratified_counts(n_class: int, fractions) -> list[int]:
    counts = [int(np.floor(f * n_class)) for f in fractions]
    leftover = n_class - sum(counts)
    order = np.argsort([-(f * n_class - c) for f, c in zip(fractions, counts)])
    i = 0
    while leftover > 0:
        counts[order[i % len(counts)]] += 1
        leftover -= 1
        i += 1
    return counts


def split_dataset(
    dataset: Dataset,
    fractions=(0.8, 0.0, 0.2),
    seed: int = 0,
    transfer_size: int = 2000,
) -> DatasetManifest:
    """Stratified disjoint train/val/test, then a transfer subset carved from train."""
    if len(fractions) != 3 or any(f < 0 for f in fractions) or sum(fractions) > 1 + 1e-9:
        raise ConfigError(f"fractions must be 3 nonnegative values summing <= 1: {fractions}")
    split_of: dict[str, str] = {}
    g = np.random.default_rng(rng_mod.root(seed))
    for label in (0.0, 1.0):
        idx = np.flatnonzero(dataset.labels == label)
        idx = idx[g.permutation(len(idx))]
        n_train, n_val, n_test = _stratified_counts(len(idx), fractions)
        cursor = 0
        for split_name, count in (("train", n_train), ("val", n_val), ("test", n_test)):
            for i in idx[cursor : cursor + count]:
                split_of[dataset.ids[i]] = split_name
            cursor += count
    train_ids = [sid for sid in dataset.ids if split_of.get(sid) == "train"]
    take = min(transfer_size, len(train_ids))
    by_label: dict[float, list[str]] = {0.0: [], 1.0: []}
    id_to_label = {sid: float(lab) for sid, lab in zip(dataset.ids, dataset.labels)}
    for sid in train_ids:
        by_label[id_to_label[sid]].append(sid)
    half = take // 2
    wanted = {0.0: half, 1.0: take - half}
    for label, ids_of in by_label.items():
        arr = np.asarray(ids_of)
        pick = arr[g.permutation(len(arr))][: wanted[label]]
        for sid in pick:
            split_of[sid] = "transfer"
    return DatasetManifest(
        ids=list(dataset.ids),
        labels=[float(v) for v in dataset.labels],
        source=dict(dataset.source),
        split_of=split_of,
    )


def subset(dataset: Dataset, manifest: DatasetManifest, split: str) -> Dataset:
    if split not in SPLITS:
        raise ConfigError(f"unknown split {split!r}")
    keep = [i for i, sid in enumerate(dataset.ids) if manifest.split_of.get(sid) == split]
    if not keep:
        raise ConfigError(f"split {split!r} is empty")
    idx = np.asarray(keep)
    return Dataset(
        dataset.images[idx],
        dataset.labels[idx],
        [dataset.ids[i] for i in keep],
        source=dict(dataset.source),
    )


def save_dataset(dataset: Dataset, manifest: DatasetManifest, out_dir) -> Path:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    np.save(out / "images.npy", dataset.images)
    np.save(out / "labels.npy", dataset.labels)
    (out / "ids.json").write_text(json.dumps(dataset.ids))
    (out / "manifest.json").write_text(
        json.dumps(manifest.to_dict(), sort_keys=True, indent=1) + "\n"
    )
    return out


def load_dataset(path) -> tuple[Dataset, DatasetManifest]:
    path = Path(path)
    try:
        manifest = DatasetManifest.from_dict(json.loads((path / "manifest.json").read_text()))
        images = np.load(path / "images.npy")
        labels = np.load(path / "labels.npy")
        ids = json.loads((path / "ids.json").read_text())
    except (OSError, json.JSONDecodeError, KeyError) as exc:
        raise ConfigError(f"unreadable dataset at {path}: {exc}") from exc
    return Dataset(images, labels, ids, source=manifest.source), manifest


def dataset_dir_digest(path) -> str:
    path = Path(path)
    parts = {
        name: digest_file(path / name)
        for name in ("images.npy", "labels.npy", "ids.json", "manifest.json")
    }
    return digest_of(parts)


def load_image_folder(path, label_map: dict[str, int], image_shape=(3, 64, 64)) -> Dataset:
    """Two labeled subfolders of PNG/JPEG files, resized to the model input."""
    path = Path(path)
    if not path.is_dir():
        raise ConfigError(f"no such dataset folder: {path}")
    c, h, w = image_shape
    images, labels, ids, hashes = [], [], [], {}
    for sub in sorted(label_map):
        label = label_map[sub]
        folder = path / sub
        if not folder.is_dir():
            raise ConfigError(f"missing class folder {folder}")
        count = 0
        for f in sorted(folder.rglob("*")):
            if f.suffix.lower() not in (".png", ".jpg", ".jpeg"):
                continue
            rel = str(f.relative_to(path))
            mode = "RGB" if c == 3 else "L"
            try:
                with Image.open(f) as img:
                    img = img.convert(mode).resize((w, h), Image.BILINEAR)
                    arr = np.asarray(img, dtype=np.float32) / 255.0
            except Exception as exc:
                warnings.warn(f"skipping unreadable image {rel}: {exc}")
                continue
            images.append(arr[None] if c == 1 else np.moveaxis(arr, 2, 0))
            labels.append(float(label))
            ids.append(rel)
            hashes[rel] = digest_file(f)
            count += 1
        if count == 0:
            raise ConfigError(f"class folder {folder} has no readable images")
    source = {
        "folder": str(path),
        "label_map": {k: int(v) for k, v in label_map.items()},
        "resize_policy": f"bilinear to {w}x{h}, RGB",
        "file_hashes": hashes,
    }
    return Dataset(np.stack(images), np.asarray(labels), ids, source=source)
