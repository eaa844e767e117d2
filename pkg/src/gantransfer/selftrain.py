"""Teacher-student transfer training and source pretraining.

The transfer loop keeps two aligned parameter sets. Each step the teacher
grades the freshly noised batch; its mean loss passes through a flipped
sigmoid to give the gate gamma, which scales both the anchor penalty on
feature weights and the decay on the head while the student takes one SGD
step. Every ``feedback_cycle`` steps the student's parameters are copied
into the teacher (momentum buffers stay with the student). All randomness
comes from substreams keyed by (stream, step), so a run is a pure function
of (seed, config, data).
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np

from . import augment, rng as rng_mod
from .errors import ConfigError, DivergenceError
from .losses import binary_cross_entropy
from .model import MODE_TRAIN, ModelSpec, backward, forward, forward_with_cache, init_params
from .params import LabeledBatch, ParameterSet, RegularizerWeights, ROLE_FEATURE, ROLE_HEAD

TRANSFER_MODES = ("tgd", "naive", "legacy-sp", "no-aug", "inter-cutmix")


@dataclass(frozen=True)
class TransferConfig:
    iterations: int = 1000
    batch_size: int = 200
    learning_rate: float = 0.01
    momentum: float = 0.1
    feedback_cycle: int = 200
    s: float = 1.0
    rng_seed: int = 0
    alpha: float = 0.1
    beta: float = 0.01
    weight_decay: float = 1e-4

    def __post_init__(self):
        if self.iterations < 0:
            raise ConfigError("iterations must be nonnegative")
        for name in ("batch_size", "feedback_cycle"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be positive")
        if self.learning_rate < 0 or self.momentum < 0 or self.weight_decay < 0:
            raise ConfigError("rates must be nonnegative")
        RegularizerWeights(alpha=self.alpha, beta=self.beta, s=self.s)


@dataclass(frozen=True)
class PretrainConfig:
    epochs: int = 300
    batch_size: int = 512
    learning_rate: float = 0.04
    momentum: float = 0.9
    warmup_multiplier: float = 4.0
    warmup_epochs: int = 20
    cosine_annealing: bool = True
    lambda_pretrain: float = 1e-4
    rng_seed: int = 0

    def __post_init__(self):
        if self.epochs < 0 or self.batch_size < 1:
            raise ConfigError("bad epoch/batch configuration")
        if self.warmup_epochs > self.epochs and self.epochs > 0:
            raise ConfigError("warmup_epochs exceeds epochs")
        if self.warmup_multiplier < 1:
            raise ConfigError("warmup_multiplier must be at least 1")
        if self.lambda_pretrain < 0:
            raise ConfigError("lambda_pretrain must be nonnegative")


def pretrain_lr(config: PretrainConfig, epoch: int) -> float:
    """Linear warm-up from lr/multiplier to lr, then cosine annealing to 0."""
    lr0 = config.learning_rate
    m = config.warmup_multiplier
    wu = config.warmup_epochs
    if wu > 0 and epoch < wu:
        return lr0 * (1.0 / m + (1.0 - 1.0 / m) * epoch / wu)
    if not config.cosine_annealing:
        return lr0
    span = max(config.epochs - wu, 1)
    t = min(max((epoch - wu) / span, 0.0), 1.0)
    return lr0 * 0.5 * (1.0 + math.cos(math.pi * t))


def compute_gamma(teacher_mean_loss: float, s: float) -> float:
    """Gate value s * sigmoid(-loss); decreasing in the loss, in (0, s/2]."""
    if not math.isfinite(teacher_mean_loss) or teacher_mean_loss < 0:
        raise ValueError(f"teacher loss must be finite and nonnegative, got {teacher_mean_loss}")
    if s <= 0:
        raise ValueError("s must be positive")
    t = math.exp(-teacher_mean_loss)
    return s * t / (1.0 + t)


def teacher_evaluate(
    teacher: ParameterSet,
    spec: ModelSpec,
    noised_batch: LabeledBatch,
    rng: np.random.Generator,
) -> float:
    """Mean cross-entropy of the noised teacher on an already-noised batch."""
    preds = forward(teacher, spec, noised_batch.images, MODE_TRAIN, rng)
    return binary_cross_entropy(preds, noised_batch.labels)


@dataclass
class SelfTrainState:
    teacher: ParameterSet
    student: ParameterSet
    iteration: int = 0
    feedback_cycle: int = 200
    s: float = 1.0
    gamma_trace: list = field(default_factory=list)

    def __post_init__(self):
        self.teacher.require_aligned(self.student)
        if self.feedback_cycle < 1:
            raise ConfigError("feedback_cycle must be positive")

    def trace_tail(self, n: int = 10) -> list:
        return self.gamma_trace[-n:]


def feedback_sync(state: SelfTrainState) -> SelfTrainState:
    """Copy student parameters into the teacher at cycle boundaries."""
    if state.iteration > 0 and state.iteration % state.feedback_cycle == 0:
        state.teacher = state.student.copy()
    return state


def init_velocity(params: ParameterSet) -> dict[str, np.ndarray]:
    return {n: np.zeros_like(t) for n, t in params.tensors.items()}


def sgd_apply(
    params: ParameterSet,
    grads: dict[str, np.ndarray],
    velocity: dict[str, np.ndarray],
    lr: float,
    momentum: float,
    weight_decay: float = 0.0,
    trainable: set[str] | None = None,
) -> None:
    """In-place SGD with momentum: v = mu v + g; w -= lr v.

    Weight decay is folded into the gradient. Iteration order is fixed by
    sorted name so updates are bit-reproducible.
    """
    for name in sorted(params.tensors):
        if trainable is not None and name not in trainable:
            continue
        w = params.tensors[name]
        g = grads[name]
        if weight_decay:
            g = g + np.asarray(weight_decay, dtype=w.dtype) * w
        v = velocity[name]
        v *= np.asarray(momentum, dtype=w.dtype)
        v += g
        w -= np.asarray(lr, dtype=w.dtype) * v


def _check_finite(value: float, what: str, state: SelfTrainState | None) -> None:
    if not math.isfinite(value):
        tail = state.trace_tail() if state is not None else []
        raise DivergenceError(f"non-finite {what} at iteration "
                              f"{state.iteration if state else '?'}", tail)


def _student_backward(student, spec, batch, rng):
    logits, preds, cache = forward_with_cache(student, spec, batch.images, MODE_TRAIN, rng)
    j = binary_cross_entropy(preds, batch.labels)
    m = batch.size
    dlog = (preds - batch.labels.astype(preds.dtype)) / preds.dtype.type(m)
    grads = backward(student, spec, cache, dlog)
    return j, grads


def _add_anchor_gradients(grads, student, anchor, coef_feature, coef_head):
    for name in student.sorted_names(ROLE_FEATURE):
        w = student.tensors[name]
        c = np.asarray(2.0 * coef_feature, dtype=w.dtype)
        grads[name] = grads[name] + c * (w - anchor.tensors[name])
    for name in student.sorted_names(ROLE_HEAD):
        w = student.tensors[name]
        c = np.asarray(2.0 * coef_head, dtype=w.dtype)
        grads[name] = grads[name] + c * w


def transfer_step(
    state: SelfTrainState,
    spec: ModelSpec,
    raw_batch: LabeledBatch,
    aug_config: augment.AugmentationConfig,
    velocity: dict[str, np.ndarray],
    config: TransferConfig,
    run_seq: np.random.SeedSequence,
    label_mixing: bool = False,
) -> dict:
    """One gated student update; the teacher is read, never written."""
    step = state.iteration
    stats: dict = {}
    noised = augment.apply_pipeline(
        raw_batch, aug_config, rng_mod.child(run_seq, rng_mod.STREAM_AUG, step),
        stats, label_mixing=label_mixing,
    )
    teacher_rng = rng_mod.generator(run_seq, rng_mod.STREAM_TEACHER_NOISE, step)
    teacher_loss = teacher_evaluate(state.teacher, spec, noised, teacher_rng)
    _check_finite(teacher_loss, "teacher loss", state)
    gamma = compute_gamma(teacher_loss, state.s)

    student_rng = rng_mod.generator(run_seq, rng_mod.STREAM_STUDENT_NOISE, step)
    j, grads = _student_backward(state.student, spec, noised, student_rng)
    _check_finite(j, "student loss", state)
    _add_anchor_gradients(grads, state.student, state.teacher, gamma, gamma)
    sgd_apply(state.student, grads, velocity, config.learning_rate, config.momentum)

    state.iteration += 1
    state.gamma_trace.append((state.iteration, teacher_loss, gamma))
    return {
        "iteration": state.iteration,
        "teacher_loss": teacher_loss,
        "gamma": gamma,
        "student_loss": j,
        "augment": stats,
    }


class _BatchSampler:
    """Cycle through the dataset in reshuffled epochs of index batches."""

    def __init__(self, n: int, batch_size: int, seq: np.random.SeedSequence):
        self.n = n
        self.batch_size = min(batch_size, n)
        self.seq = seq
        self.epoch = -1
        self.queue: list[np.ndarray] = []

    def next(self) -> np.ndarray:
        if not self.queue:
            self.epoch += 1
            g = rng_mod.generator(self.seq, self.epoch)
            perm = g.permutation(self.n)
            self.queue = [
                perm[i : i + self.batch_size] for i in range(0, self.n, self.batch_size)
            ]
        return self.queue.pop(0)


def _metrics_writer(path):
    if path is None:
        return None
    return open(path, "w")


def _write_metrics(fh, record: dict) -> None:
    if fh is not None:
        fh.write(json.dumps(record, sort_keys=True) + "\n")


def _val_loss(params, spec, val_images, val_labels) -> float:
    preds = forward(params, spec, val_images)
    return binary_cross_entropy(preds, val_labels)


def run_transfer(
    teacher: ParameterSet,
    spec: ModelSpec,
    dataset,
    config: TransferConfig,
    aug_config: augment.AugmentationConfig,
    mode: str = "tgd",
    metrics_path=None,
    val_dataset=None,
):
    """Run one transfer recipe; returns (student, result dict).

    Modes: ``tgd`` is the full gated teacher-student loop; ``no-aug`` is the
    same with the data pipeline off; ``inter-cutmix`` swaps in label-mixing
    Cutmix; ``legacy-sp`` anchors to the initial weights with fixed alpha and
    beta and no teacher; ``naive`` freezes everything but the last stage and
    head and fine-tunes with weight decay.
    """
    if mode not in TRANSFER_MODES:
        raise ConfigError(f"unknown transfer mode {mode!r}")
    if len(dataset) == 0:
        raise ConfigError("empty transfer dataset")
    if mode == "no-aug":
        aug_config = augment.disabled(aug_config.rng_seed)
    label_mixing = mode == "inter-cutmix"

    run_seq = rng_mod.root(config.rng_seed)
    state = SelfTrainState(
        teacher=teacher.copy(),
        student=teacher.copy(),
        feedback_cycle=config.feedback_cycle,
        s=config.s,
    )
    anchor = teacher.copy() if mode == "legacy-sp" else None
    last_stage = len(spec.stage_widths) - 1
    trainable = (
        {
            n
            for n in state.student.names
            if n.startswith(f"stage{last_stage}.") or n.startswith("head.")
        }
        if mode == "naive"
        else None
    )
    velocity = init_velocity(state.student)
    sampler = _BatchSampler(
        len(dataset), config.batch_size, rng_mod.child(run_seq, rng_mod.STREAM_SAMPLER)
    )
    val_images = val_labels = None
    if val_dataset is not None:
        val_images, val_labels = val_dataset.images, val_dataset.labels

    losses_curve: list[float] = []
    val_curve: list[float] = []
    fh = _metrics_writer(metrics_path)
    try:
        for _ in range(config.iterations):
            idx = sampler.next()
            raw = LabeledBatch(
                dataset.images[idx], dataset.labels[idx], sample_ids=idx
            )
            if mode in ("tgd", "no-aug", "inter-cutmix"):
                record = transfer_step(
                    state, spec, raw, aug_config, velocity, config, run_seq,
                    label_mixing=label_mixing,
                )
                feedback_sync(state)
            else:
                step = state.iteration
                stats: dict = {}
                noised = augment.apply_pipeline(
                    raw, aug_config,
                    rng_mod.child(run_seq, rng_mod.STREAM_AUG, step), stats,
                )
                student_rng = rng_mod.generator(
                    run_seq, rng_mod.STREAM_STUDENT_NOISE, step
                )
                j, grads = _student_backward(state.student, spec, noised, student_rng)
                _check_finite(j, "student loss", state)
                if mode == "legacy-sp":
                    _add_anchor_gradients(
                        grads, state.student, anchor, config.alpha, config.beta
                    )
                    sgd_apply(
                        state.student, grads, velocity,
                        config.learning_rate, config.momentum,
                    )
                else:
                    sgd_apply(
                        state.student, grads, velocity,
                        config.learning_rate, config.momentum,
                        weight_decay=config.weight_decay, trainable=trainable,
                    )
                state.iteration += 1
                record = {
                    "iteration": state.iteration,
                    "student_loss": j,
                    "augment": stats,
                }
            losses_curve.append(record["student_loss"])
            if val_images is not None:
                vl = _val_loss(state.student, spec, val_images, val_labels)
                record["val_loss"] = vl
                val_curve.append(vl)
            _write_metrics(fh, record)
    finally:
        if fh is not None:
            fh.close()

    result = {
        "mode": mode,
        "iterations": state.iteration,
        "gamma_trace": list(state.gamma_trace),
        "losses": losses_curve,
        "val_losses": val_curve,
    }
    return state.student, result


def run_pretrain(
    spec: ModelSpec,
    dataset,
    config: PretrainConfig,
    aug_config: augment.AugmentationConfig,
    metrics_path=None,
):
    """SGD over the source set with warm-up plus cosine annealing.

    Returns (params, per-epoch history). The dataset must contain both
    classes.
    """
    labels = np.asarray(dataset.labels)
    if not ((labels == 0).any() and (labels == 1).any()):
        raise ConfigError("pretraining data must contain both classes")
    run_seq = rng_mod.root(config.rng_seed)
    params = init_params(spec, rng_mod.child(run_seq, rng_mod.STREAM_INIT))
    velocity = init_velocity(params)
    n = len(dataset)
    history: list[dict] = []
    fh = _metrics_writer(metrics_path)
    step = 0
    try:
        for epoch in range(config.epochs):
            lr = pretrain_lr(config, epoch)
            g = rng_mod.generator(run_seq, rng_mod.STREAM_SAMPLER, epoch)
            perm = g.permutation(n)
            batch_losses: list[float] = []
            for start in range(0, n, config.batch_size):
                idx = perm[start : start + config.batch_size]
                raw = LabeledBatch(
                    dataset.images[idx], dataset.labels[idx], sample_ids=idx
                )
                stats: dict = {}
                noised = augment.apply_pipeline(
                    raw, aug_config,
                    rng_mod.child(run_seq, rng_mod.STREAM_AUG, step), stats,
                )
                student_rng = rng_mod.generator(
                    run_seq, rng_mod.STREAM_STUDENT_NOISE, step
                )
                j, grads = _student_backward(params, spec, noised, student_rng)
                _check_finite(j, "pretrain loss", None)
                lam = config.lambda_pretrain
                if lam:
                    for name in sorted(params.tensors):
                        w = params.tensors[name]
                        grads[name] = grads[name] + np.asarray(
                            2.0 * lam, dtype=w.dtype
                        ) * w
                sgd_apply(params, grads, velocity, lr, config.momentum)
                batch_losses.append(j)
                step += 1
            record = {
                "epoch": epoch,
                "lr": lr,
                "mean_loss": float(np.mean(batch_losses)),
            }
            history.append(record)
            _write_metrics(fh, record)
    finally:
        if fh is not None:
            fh.close()
    return params, history
