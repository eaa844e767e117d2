"""Ranking metrics, before/after transfer reports, and the numeric-gradient oracle."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .checkpoint import load_checkpoint, read_manifest
from .digest import digest_of
from .errors import MetricUndefinedError
from .model import MODE_EVAL, ModelSpec, forward
from .params import ParameterSet


def auroc(scores, labels) -> float:
    """Probability a random positive outranks a random negative, ties half.

    Computed from midranks in O(n log n); exactly equals pairwise counting.
    """
    s = np.asarray(scores, dtype=np.float64).ravel()
    y = np.asarray(labels).ravel()
    if s.size == 0 or s.size != y.size:
        raise ValueError("scores and labels must be equal-length and nonempty")
    pos = y == 1
    n_pos = int(pos.sum())
    n_neg = s.size - n_pos
    if n_pos == 0 or n_neg == 0:
        raise MetricUndefinedError("need both classes to rank against each other")
    _, inv, counts = np.unique(s, return_inverse=True, return_counts=True)
    starts = np.concatenate(([0], np.cumsum(counts)[:-1]))
    midranks = starts + (counts - 1) / 2.0 + 1.0
    ranks = midranks[inv]
    rank_sum = float(ranks[pos].sum())
    return (rank_sum - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_neg)


def score_dataset(
    params: ParameterSet,
    spec: ModelSpec,
    images: np.ndarray,
    batch_size: int = 128,
) -> np.ndarray:
    """Clean-mode scores for every image, identical for any batch size."""
    out = np.empty(images.shape[0], dtype=np.float64)
    for start in range(0, images.shape[0], batch_size):
        chunk = images[start : start + batch_size]
        out[start : start + chunk.shape[0]] = forward(params, spec, chunk, MODE_EVAL)
    return out


def evaluate_checkpoint(ckpt_path, dataset, batch_size: int = 128):
    """Score a dataset with a stored checkpoint; returns (auroc, scores).

    The model layout comes from the checkpoint's own manifest.
    """
    manifest = read_manifest(ckpt_path)
    spec = ModelSpec.from_dict(manifest["spec"])
    params = load_checkpoint(ckpt_path, spec)
    scores = score_dataset(params, spec, dataset.images, batch_size)
    return auroc(scores, dataset.labels), scores


def gamma_summary(trace) -> dict | None:
    """Min/max/mean of the gate trace, or None when there is no trace."""
    if not trace:
        return None
    gammas = np.asarray([g for _, _, g in trace], dtype=np.float64)
    return {
        "count": int(gammas.size),
        "min": float(gammas.min()),
        "max": float(gammas.max()),
        "mean": float(gammas.mean()),
    }


@dataclass
class EvalReport:
    source_before: float | None = None
    source_after: float | None = None
    target_before: float | None = None
    target_after: float | None = None
    forgetting_delta: float | None = None
    gamma: dict | None = None
    config_digests: dict = field(default_factory=dict)
    seeds: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "EvalReport":
        return cls(**d)

    def digest(self) -> str:
        return digest_of(self.to_dict())

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), sort_keys=True, indent=1) + "\n")

    @classmethod
    def load(cls, path) -> "EvalReport":
        return cls.from_dict(json.loads(Path(path).read_text()))


def forgetting_report(
    pre_ckpt,
    post_ckpt,
    source_test=None,
    target_test=None,
    gamma_trace=None,
    config_digests=None,
    seeds=None,
) -> EvalReport:
    """Four-cell before/after report; a missing dataset leaves its cells null."""
    report = EvalReport(
        gamma=gamma_summary(gamma_trace),
        config_digests=dict(config_digests or {}),
        seeds=dict(seeds or {}),
    )
    if source_test is not None:
        report.source_before, _ = evaluate_checkpoint(pre_ckpt, source_test)
        report.source_after, _ = evaluate_checkpoint(post_ckpt, source_test)
        report.forgetting_delta = report.source_before - report.source_after
    if target_test is not None:
        report.target_before, _ = evaluate_checkpoint(pre_ckpt, target_test)
        report.target_after, _ = evaluate_checkpoint(post_ckpt, target_test)
    return report


def numeric_gradient(loss_fn, params: ParameterSet, step: float = 1e-4):
    """Central differences of ``loss_fn(params)`` per scalar parameter."""
    grads: dict[str, np.ndarray] = {}
    for name in params.names:
        t = params.tensors[name]
        flat = t.ravel()
        out = np.zeros(flat.size, dtype=np.float64)
        for idx in range(flat.size):
            old = flat[idx]
            flat[idx] = old + step
            lp = loss_fn(params)
            flat[idx] = old - step
            lm = loss_fn(params)
            flat[idx] = old
            if not (np.isfinite(lp) and np.isfinite(lm)):
                raise ValueError(f"non-finite loss while probing {name!r}")
            out[idx] = (lp - lm) / (2.0 * step)
        grads[name] = out.reshape(t.shape)
    return grads


def write_scores(path, ids, scores) -> None:
    """Two-column audit dump: sample id and score, one line each."""
    with open(path, "w") as f:
        for sid, sc in zip(ids, scores):
            f.write(f"{sid} {float(sc)!r}\n")
