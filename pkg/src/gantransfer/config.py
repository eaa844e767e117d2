"""Run configuration files.

One JSON document per run with sections ``model``, ``pretrain``,
``transfer``, ``augmentation`` (sub-sections ``pretrain`` and
``transfer``), ``data``, ``output`` and ``seed``. Missing fields fall back
to defaults, section seeds fall back to the top-level seed, and the fully
resolved document is what gets digested and frozen next to run outputs, so
a rerun from the frozen copy sees byte-identical settings.
"""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass
from pathlib import Path

from . import augment
from .data import SyntheticSpec
from .digest import digest_of
from .errors import ConfigError
from .model import ModelSpec
from .selftrain import PretrainConfig, TransferConfig

_SEED_FIELD = {
    "pretrain": "rng_seed",
    "transfer": "rng_seed",
}

_TUPLE_FIELDS = {
    "jpeg_quality_range",
    "blur_sigma_range",
    "input_shape",
    "stage_widths",
    "blocks_per_stage",
    "image_shape",
}


def _as_builtin(obj):
    if isinstance(obj, dict):
        return {k: _as_builtin(v) for k, v in sorted(obj.items())}
    if isinstance(obj, (list, tuple)):
        return [_as_builtin(v) for v in obj]
    return obj


def _tuplify(d: dict) -> dict:
    return {k: tuple(v) if k in _TUPLE_FIELDS else v for k, v in d.items()}


@dataclass(frozen=True)
class RunConfig:
    """Typed view over a resolved config document."""

    resolved: dict
    model: ModelSpec
    pretrain: PretrainConfig
    transfer: TransferConfig
    aug_pretrain: augment.AugmentationConfig
    aug_transfer: augment.AugmentationConfig
    seed: int

    @property
    def digest(self) -> str:
        return digest_of(self.resolved)

    @property
    def data_section(self) -> dict | None:
        return self.resolved.get("data")

    def synthetic_spec(self) -> SyntheticSpec:
        section = self.data_section or {}
        if "synthetic" not in section:
            raise ConfigError("config has no data.synthetic section")
        return SyntheticSpec.from_dict(section["synthetic"])

    def split_options(self) -> dict:
        section = self.data_section or {}
        opts = dict(section.get("split", {}))
        opts.setdefault("fractions", [0.8, 0.0, 0.2])
        opts.setdefault("seed", self.seed)
        opts.setdefault("transfer_size", 2000)
        return opts


def default_config(seed: int = 0) -> dict:
    return {
        "seed": seed,
        "model": ModelSpec().to_dict(),
        "pretrain": dataclasses.asdict(PretrainConfig(rng_seed=seed)),
        "transfer": dataclasses.asdict(TransferConfig(rng_seed=seed)),
        "augmentation": {
            "pretrain": dataclasses.asdict(augment.pretrain_default(seed)),
            "transfer": dataclasses.asdict(augment.transfer_default(seed)),
        },
        "data": None,
    }


def resolve_config(raw: dict) -> dict:
    """Merge a raw document over the defaults; unknown sections rejected."""
    if not isinstance(raw, dict):
        raise ConfigError("config root must be an object")
    known = {"seed", "model", "pretrain", "transfer", "augmentation", "data",
             "invocation"}
    extra = set(raw) - known
    if extra:
        raise ConfigError(f"unknown config sections: {sorted(extra)}")
    seed = raw.get("seed", 0)
    if not isinstance(seed, int):
        raise ConfigError("seed must be an integer")
    out = default_config(seed)
    for section in ("model", "pretrain", "transfer"):
        user = raw.get(section) or {}
        if not isinstance(user, dict):
            raise ConfigError(f"section {section!r} must be an object")
        merged = dict(out[section])
        unknown = set(user) - set(merged)
        if unknown:
            raise ConfigError(f"unknown keys in {section!r}: {sorted(unknown)}")
        merged.update(user)
        out[section] = merged
    aug_user = raw.get("augmentation") or {}
    if not isinstance(aug_user, dict):
        raise ConfigError("section 'augmentation' must be an object")
    for stage in ("pretrain", "transfer"):
        user = aug_user.get(stage) or {}
        merged = dict(out["augmentation"][stage])
        unknown = set(user) - set(merged)
        if unknown:
            raise ConfigError(
                f"unknown keys in augmentation.{stage!r}: {sorted(unknown)}"
            )
        merged.update(user)
        out["augmentation"][stage] = merged
    unknown_stage = set(aug_user) - {"pretrain", "transfer"}
    if unknown_stage:
        raise ConfigError(f"unknown augmentation stages: {sorted(unknown_stage)}")
    if raw.get("data") is not None:
        data = raw["data"]
        if not isinstance(data, dict) or not ({"synthetic", "folder"} & set(data)):
            raise ConfigError("data section needs a 'synthetic' or 'folder' entry")
        data = {k: v for k, v in data.items()}
        if "synthetic" in data:
            syn = dict(data["synthetic"])
            syn.setdefault("seed", seed)
            data["synthetic"] = SyntheticSpec.from_dict(syn).to_dict()
        out["data"] = data
    return _as_builtin(out)


def parse_config(raw: dict) -> RunConfig:
    resolved = resolve_config(raw)
    try:
        model = ModelSpec.from_dict(resolved["model"])
        pretrain = PretrainConfig(**_tuplify(resolved["pretrain"]))
        transfer = TransferConfig(**_tuplify(resolved["transfer"]))
        aug_pre = augment.AugmentationConfig(
            **_tuplify(resolved["augmentation"]["pretrain"])
        )
        aug_tr = augment.AugmentationConfig(
            **_tuplify(resolved["augmentation"]["transfer"])
        )
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"invalid config: {exc}") from exc
    return RunConfig(
        resolved=resolved,
        model=model,
        pretrain=pretrain,
        transfer=transfer,
        aug_pretrain=aug_pre,
        aug_transfer=aug_tr,
        seed=resolved["seed"],
    )


def load_config(path) -> RunConfig:
    path = Path(path)
    try:
        raw = json.loads(path.read_text())
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config {path} is not valid JSON: {exc}") from exc
    return parse_config(raw)


def write_frozen(run_config: RunConfig, out_dir, invocation: dict) -> Path:
    """Record the resolved settings plus the exact invocation next to outputs."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    doc = dict(run_config.resolved)
    doc["invocation"] = _as_builtin(invocation)
    path = out / "config.json"
    path.write_text(json.dumps(doc, sort_keys=True, indent=1) + "\n")
    return path
