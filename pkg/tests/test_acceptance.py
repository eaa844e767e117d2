"""End-to-end acceptance battery: exact invariants plus small training runs.

Each test covers one numbered acceptance criterion and prints a single
``[criterion N] ... PASS`` or ``FAIL`` line so the verdicts can be scraped
from a captured log without parsing pytest output. The training-based
criteria share one module-scoped benchmark pair: a checkerboard-artifact
source task and a blur-residual target task, sized for a laptop CPU.
"""

import hashlib
import json
import math
import time
from contextlib import contextmanager

import numpy as np
import pytest

from gantransfer import augment, rng as rng_mod
from gantransfer.augment import AugmentationConfig, _cutmix_draws, intra_class_cutmix
from gantransfer.checkpoint import checkpoint_digest, load_checkpoint, save_checkpoint
from gantransfer.cli import main
from gantransfer.data import (
    Dataset,
    SyntheticSpec,
    generate_synthetic,
    split_dataset,
    subset,
)
from gantransfer.evaluate import EvalReport, auroc
from gantransfer.losses import (
    binary_cross_entropy,
    l2_norm_squared,
    sp_penalty,
    transfer_loss,
)
from gantransfer.model import (
    MODE_EVAL,
    ModelSpec,
    backward,
    forward,
    forward_with_cache,
    group_normalize,
    init_params,
    weight_standardize,
)
from gantransfer.params import LabeledBatch, ROLE_HEAD
from gantransfer.selftrain import (
    PretrainConfig,
    SelfTrainState,
    TransferConfig,
    _add_anchor_gradients,
    _BatchSampler,
    compute_gamma,
    feedback_sync,
    init_velocity,
    run_pretrain,
    run_transfer,
    transfer_step,
)

# Benchmark pair used by the training criteria. The source artifact is a
# top-octave checkerboard, the target artifact a blur residue in the mid
# band; the two cues occupy disjoint frequency ranges, so source skill
# survives target training only if something actively protects it. The
# aggressive low-quality JPEG range in the transfer pipeline is that
# something's antagonist: it stamps blocky high-frequency noise on both
# target classes, which erodes an unanchored model's source features while
# the gated anchor holds them in place.
_SHAPE = (3, 32, 32)
_ABLATION_MODEL = ModelSpec(
    input_shape=_SHAPE, stage_widths=(16,), blocks_per_stage=(2,), gn_groups=4
)
_SOURCE = SyntheticSpec(
    n_per_class=2500,
    image_shape=_SHAPE,
    artifact_kind="checkerboard_upsample",
    artifact_strength=0.45,
    seed=100,
)
_TARGET = SyntheticSpec(
    n_per_class=2500,
    image_shape=_SHAPE,
    artifact_kind="blur_residual",
    artifact_strength=1.0,
    blur_sigma=2.25,
    residual_amp=0.0,
    seed=200,
)
_PRETRAIN = PretrainConfig(
    epochs=8,
    batch_size=128,
    learning_rate=0.04,
    momentum=0.9,
    warmup_multiplier=4.0,
    warmup_epochs=2,
    rng_seed=0,
)
_TRANSFER = TransferConfig(
    iterations=1600,
    batch_size=64,
    learning_rate=0.05,
    momentum=0.1,
    feedback_cycle=200,
    s=2.0,
    rng_seed=7,
)
_TRANSFER_AUG = AugmentationConfig(
    p_flip=0.5,
    p_jpeg=0.8,
    jpeg_quality_range=(12, 45),
    p_blur=0.15,
    blur_sigma_range=(0.25, 0.75),
    p_cutmix=0.5,
    rng_seed=0,
)

_TOY = ModelSpec(
    input_shape=(3, 16, 16), stage_widths=(8, 8), blocks_per_stage=(1, 1), gn_groups=4
)


@contextmanager
def criterion(num: int, name: str):
    t0 = time.perf_counter()
    try:
        yield
    except BaseException:
        print(f"[criterion {num}] {name}: FAIL ({time.perf_counter() - t0:.1f}s)")
        raise
    print(f"[criterion {num}] {name}: PASS ({time.perf_counter() - t0:.1f}s)")


def param_hash(params) -> str:
    h = hashlib.sha256()
    for name in params.sorted_names():
        h.update(params.tensors[name].tobytes())
    return h.hexdigest()


def model_auroc(params, spec, dataset, batch_size=500) -> float:
    scores = np.concatenate([
        forward(params, spec, dataset.images[i : i + batch_size])
        for i in range(0, len(dataset), batch_size)
    ])
    return auroc(scores, dataset.labels)


@pytest.fixture(scope="module")
def benchmark_pair():
    src = generate_synthetic(_SOURCE)
    tgt = generate_synthetic(_TARGET)
    src_split = split_dataset(src, fractions=(0.8, 0.0, 0.2), seed=1, transfer_size=0)
    tgt_split = split_dataset(tgt, fractions=(0.8, 0.0, 0.2), seed=2, transfer_size=2000)
    return {
        "src_train": subset(src, src_split, "train"),
        "src_test": subset(src, src_split, "test"),
        "tgt_transfer": subset(tgt, tgt_split, "transfer"),
        "tgt_test": subset(tgt, tgt_split, "test"),
    }


@pytest.fixture(scope="module")
def teacher(benchmark_pair):
    params, _ = run_pretrain(
        _ABLATION_MODEL,
        benchmark_pair["src_train"],
        _PRETRAIN,
        augment.pretrain_default(0),
    )
    return params


def test_criterion_1_gate_formula():
    with criterion(1, "gate value matches the closed form and stays in bound"):
        for s in (0.1, 1.0, 2.0):
            for loss in (0.0, math.log(2.0), 5.0, 100.0):
                expected = s / (1.0 + math.exp(loss))
                assert abs(compute_gamma(loss, s) - expected) <= 1e-12, (s, loss)

        rng = np.random.default_rng(101)
        losses = np.concatenate([
            rng.uniform(0.0, 500.0, 500_000),
            np.abs(rng.normal(0.0, 5.0, 500_000)),
        ])
        scales = rng.uniform(1e-3, 2.0, losses.size)
        for chunk in range(0, losses.size, 100_000):
            for loss, s in zip(
                losses[chunk : chunk + 100_000], scales[chunk : chunk + 100_000]
            ):
                g = compute_gamma(loss, s)
                assert 0.0 < g <= 0.5 * s, (loss, s, g)


def test_criterion_2_objective_decomposition_and_gradient():
    with criterion(2, "anchored objective decomposes and matches finite differences"):
        h = 1e-4
        rng = np.random.default_rng(22)
        checked = 0
        attempts = 0
        while checked < 20 and attempts < 200:
            attempts += 1
            params = init_params(_TOY, rng_mod.root(int(rng.integers(1 << 30)))).astype(
                np.float64
            )
            anchor = init_params(_TOY, rng_mod.root(int(rng.integers(1 << 30)))).astype(
                np.float64
            )
            gamma = float(rng.uniform(0.05, 0.9))
            x = rng.uniform(0.2, 0.8, (2, 3, 16, 16))
            y = np.array([1.0, 0.0])

            logits, preds, cache = forward_with_cache(params, _TOY, x, MODE_EVAL)
            if cache["kink_margin"] < 10 * h:
                continue

            # Component-wise decomposition of the scalar objective.
            total = transfer_loss(preds, y, params, anchor, gamma)
            parts = (
                binary_cross_entropy(preds, y)
                + gamma * sp_penalty(params, anchor)
                + gamma * l2_norm_squared(params, ROLE_HEAD)
            )
            assert abs(total - parts) <= 1e-9 * max(1.0, abs(total))

            dlog = (preds - y) / 2.0
            grads = backward(params, _TOY, cache, dlog)
            _add_anchor_gradients(grads, params, anchor, gamma, gamma)

            def objective():
                p = forward(params, _TOY, x, MODE_EVAL)
                return transfer_loss(p, y, params, anchor, gamma)

            names = params.sorted_names()
            for _ in range(8):
                name = names[int(rng.integers(len(names)))]
                flat = params.tensors[name].ravel()
                i = int(rng.integers(flat.size))
                old = flat[i]
                flat[i] = old + h
                lp = objective()
                flat[i] = old - h
                lm = objective()
                flat[i] = old
                num = (lp - lm) / (2 * h)
                ana = grads[name].ravel()[i]
                scale = max(abs(num), abs(ana), 1e-6)
                assert abs(num - ana) / scale <= 1e-3, (name, i, num, ana)
            checked += 1
        assert checked == 20


def test_criterion_3_label_preserving_cutmix():
    with criterion(3, "cutmix keeps labels and pastes exact donor boxes"):
        rng = np.random.default_rng(33)
        p = 0.7
        for k in range(200):
            n = int(rng.integers(2, 17))
            images = rng.uniform(0.0, 1.0, (n, 3, 16, 16)).astype(np.float32)
            labels = rng.integers(0, 2, n).astype(np.float32)
            batch = LabeledBatch(images.copy(), labels.copy(), np.arange(n))

            seed = 1000 + k
            out = intra_class_cutmix(batch, p, np.random.default_rng(seed))
            rho, perm, box = _cutmix_draws(batch, np.random.default_rng(seed))

            assert out.labels.tobytes() == labels.tobytes()
            if rho >= p:
                assert out.images.tobytes() == images.tobytes()
                continue
            same = labels[perm] == labels
            region = np.s_[:, box.y1 : box.y2, box.x1 : box.x2]
            for i in range(n):
                if not same[i]:
                    assert out.images[i].tobytes() == images[i].tobytes()
                    continue
                inside = out.images[i][region]
                donor = images[perm[i]][region]
                assert inside.tobytes() == donor.tobytes()
                patched = images[i].copy()
                patched[region] = donor
                assert out.images[i].tobytes() == patched.tobytes()

        # Gate frequency over 10,000 independent draws.
        p_gate = 0.35
        gate_rng = np.random.default_rng(34)
        base = LabeledBatch(
            np.zeros((2, 3, 8, 8), dtype=np.float32),
            np.ones(2, dtype=np.float32),
            np.arange(2),
        )
        stats: dict = {}
        draws = 10_000
        for _ in range(draws):
            intra_class_cutmix(base, p_gate, gate_rng, stats)
        hits = stats.get("cutmix", 0)
        sigma = math.sqrt(draws * p_gate * (1 - p_gate))
        assert abs(hits - draws * p_gate) <= 3 * sigma, hits


def test_criterion_4_normalization_contracts():
    with criterion(4, "standardized kernels, normalized groups, batch invariance"):
        rng = np.random.default_rng(44)
        for shape in ((16, 8, 3, 3), (8, 3, 3, 3), (32, 16, 1, 1)):
            kernel = rng.normal(0.0, 1.0, shape)
            w = weight_standardize(kernel, 1e-5)
            axes = tuple(range(1, w.ndim))
            assert np.abs(w.mean(axis=axes)).max() <= 1e-6
            assert np.abs(w.std(axis=axes) - 1.0).max() <= 1e-4

        x = rng.normal(0.0, 1.0, (5, 16, 8, 8))
        y = group_normalize(x, 4, 1e-5, np.ones(16), np.zeros(16))
        grouped = y.reshape(5, 4, 4, 8, 8)
        assert np.abs(grouped.mean(axis=(2, 3, 4))).max() <= 1e-5
        assert np.abs(grouped.var(axis=(2, 3, 4)) - 1.0).max() <= 1e-4

        params = init_params(_TOY, rng_mod.root(45))
        images = rng.uniform(0.0, 1.0, (64, 3, 16, 16)).astype(np.float32)
        by64 = forward(params, _TOY, images, MODE_EVAL)
        by7 = np.concatenate([
            forward(params, _TOY, images[i : i + 7], MODE_EVAL)
            for i in range(0, 64, 7)
        ])
        single = np.concatenate([
            forward(params, _TOY, images[i : i + 1], MODE_EVAL) for i in range(64)
        ])
        assert np.abs(by7 - by64).max() <= 1e-6
        assert np.abs(single - by64).max() <= 1e-6


def pairwise_auroc(scores, labels) -> float:
    s = np.asarray(scores, dtype=np.float64)
    pos = s[labels == 1][:, None]
    neg = s[labels == 0][None, :]
    wins = np.sum(pos > neg) + 0.5 * np.sum(pos == neg)
    return float(wins / (pos.size * neg.size))


def test_criterion_5_ranking_metric_oracle():
    with criterion(5, "rank-based score area equals the pairwise oracle"):
        rng = np.random.default_rng(55)
        for _ in range(1000):
            n = int(rng.integers(2, 201))
            labels = rng.integers(0, 2, n)
            while labels.min() == labels.max():
                labels = rng.integers(0, 2, n)
            levels = int(rng.integers(2, 41))
            scores = rng.integers(0, levels, n).astype(np.float64) / levels
            assert auroc(scores, labels) == pairwise_auroc(scores, labels)


def test_criterion_6_feedback_mechanics_and_replay(benchmark_pair, teacher, tmp_path):
    with criterion(6, "teacher feedback cadence and bit-exact replay"):
        cfg = TransferConfig(
            iterations=400,
            batch_size=64,
            learning_rate=0.05,
            momentum=0.1,
            feedback_cycle=200,
            s=2.0,
            rng_seed=7,
        )
        dataset = benchmark_pair["tgt_transfer"]

        # Drive the training loop directly so the teacher is observable at
        # every iteration: constant between feedback events, equal to the
        # student right after each one.
        run_seq = rng_mod.root(cfg.rng_seed)
        state = SelfTrainState(
            teacher=teacher.copy(),
            student=teacher.copy(),
            feedback_cycle=cfg.feedback_cycle,
            s=cfg.s,
        )
        velocity = init_velocity(state.student)
        sampler = _BatchSampler(
            len(dataset), cfg.batch_size, rng_mod.child(run_seq, rng_mod.STREAM_SAMPLER)
        )
        expected_teacher = param_hash(state.teacher)
        sync_points = []
        for _ in range(cfg.iterations):
            idx = sampler.next()
            raw = LabeledBatch(dataset.images[idx], dataset.labels[idx], sample_ids=idx)
            transfer_step(state, _ABLATION_MODEL, raw, _TRANSFER_AUG, velocity, cfg, run_seq)
            feedback_sync(state)
            got = param_hash(state.teacher)
            if state.iteration % cfg.feedback_cycle == 0:
                assert got == param_hash(state.student), state.iteration
                assert state.teacher is not state.student
                expected_teacher = got
                sync_points.append(state.iteration)
            else:
                assert got == expected_teacher, state.iteration
        assert sync_points == [200, 400]

        # The public runner reproduces the same trajectory, twice over.
        student_a, result_a = run_transfer(
            teacher, _ABLATION_MODEL, dataset, cfg, _TRANSFER_AUG, mode="tgd"
        )
        student_b, result_b = run_transfer(
            teacher, _ABLATION_MODEL, dataset, cfg, _TRANSFER_AUG, mode="tgd"
        )
        assert result_a["gamma_trace"] == result_b["gamma_trace"]
        assert state.gamma_trace == result_a["gamma_trace"]
        assert param_hash(student_a) == param_hash(student_b)
        assert param_hash(student_a) == param_hash(state.student)

        prov = {"stage": "acceptance-replay"}
        dir_a = save_checkpoint(student_a, _ABLATION_MODEL, prov, tmp_path / "a")
        dir_b = save_checkpoint(student_b, _ABLATION_MODEL, prov, tmp_path / "b")
        assert checkpoint_digest(dir_a) == checkpoint_digest(dir_b)


def test_criterion_7_directional_ablation(benchmark_pair, teacher):
    with criterion(7, "anchored transfer beats its ablations directionally"):
        assert len(benchmark_pair["src_train"]) == 4000
        assert len(benchmark_pair["src_test"]) == 1000
        assert len(benchmark_pair["tgt_transfer"]) == 2000
        assert len(benchmark_pair["tgt_test"]) == 1000

        teacher_src = model_auroc(teacher, _ABLATION_MODEL, benchmark_pair["src_test"])
        print(f"  pretrained teacher: source auroc {teacher_src:.4f}")
        assert teacher_src >= 0.95

        results = {}
        for mode in ("tgd", "naive", "legacy-sp", "no-aug"):
            student, _ = run_transfer(
                teacher,
                _ABLATION_MODEL,
                benchmark_pair["tgt_transfer"],
                _TRANSFER,
                _TRANSFER_AUG,
                mode=mode,
            )
            src = model_auroc(student, _ABLATION_MODEL, benchmark_pair["src_test"])
            tgt = model_auroc(student, _ABLATION_MODEL, benchmark_pair["tgt_test"])
            results[mode] = (src, tgt)
            print(f"  {mode:>9}: source auroc {src:.4f}  target auroc {tgt:.4f}")

        # (a) the full recipe learns the target task
        assert results["tgd"][1] >= 0.90
        # (b) it retains the source task better than naive fine-tuning
        assert results["tgd"][0] >= results["naive"][0] + 0.05
        # (c) augmentation does not cost source retention
        assert results["tgd"][0] >= results["no-aug"][0]
        # (d) the gated anchor does not hurt target learning vs fixed anchors
        assert results["tgd"][1] >= results["legacy-sp"][1] - 0.02


def test_criterion_8_label_mixing_instability(teacher):
    # Shift that surfaces the instability: same artifact family as the
    # pretraining source but at lower strength, so the student stays highly
    # confident while it adapts. Label-preserving cutmix keeps every target
    # consistent with that confidence; label-mixing assigns area-weighted soft
    # targets that fight it batch by batch (and dip the teacher gate), so the
    # validation loss wobbles instead of settling.
    with criterion(8, "label-mixing cutmix destabilizes validation loss"):
        shifted = generate_synthetic(
            SyntheticSpec(
                n_per_class=2500,
                image_shape=_SHAPE,
                artifact_kind="checkerboard_upsample",
                artifact_strength=0.30,
                seed=300,
            )
        )
        membership = split_dataset(shifted, (0.8, 0.0, 0.2), transfer_size=2000, seed=2)
        transfer_set = subset(shifted, membership, "transfer")
        test_set = subset(shifted, membership, "test")
        sel = np.concatenate(
            [
                np.flatnonzero(test_set.labels == 0)[:50],
                np.flatnonzero(test_set.labels == 1)[:50],
            ]
        )
        val = Dataset(
            test_set.images[sel],
            test_set.labels[sel],
            [test_set.ids[int(i)] for i in sel],
        )

        cfg = TransferConfig(
            iterations=800,
            batch_size=64,
            learning_rate=0.05,
            momentum=0.1,
            feedback_cycle=200,
            s=2.0,
            rng_seed=11,
        )
        aug = AugmentationConfig(
            p_flip=0.5, p_jpeg=0.0, p_blur=0.0, p_cutmix=0.5, rng_seed=0
        )

        variances = {}
        for mode in ("tgd", "inter-cutmix"):
            _, result = run_transfer(
                teacher,
                _ABLATION_MODEL,
                transfer_set,
                cfg,
                aug,
                mode=mode,
                val_dataset=val,
            )
            tail = np.asarray(result["val_losses"][-200:])
            variances[mode] = float(tail.var())
        print(
            f"  val-loss variance, last 200 iterations: "
            f"label-preserving {variances['tgd']:.3g}, "
            f"label-mixing {variances['inter-cutmix']:.3g}, "
            f"ratio {variances['inter-cutmix'] / variances['tgd']:.2f}"
        )
        assert variances["inter-cutmix"] > variances["tgd"]


_ROUNDTRIP_CONFIG = {
    "seed": 9,
    "model": {
        "input_shape": [3, 16, 16],
        "stage_widths": [8, 8],
        "blocks_per_stage": [1, 1],
        "gn_groups": 4,
    },
    "pretrain": {"epochs": 2, "batch_size": 16, "learning_rate": 0.02,
                 "warmup_epochs": 1},
    "transfer": {"iterations": 8, "batch_size": 12, "feedback_cycle": 4},
    "data": {
        "synthetic": {
            "n_per_class": 30,
            "image_shape": [3, 16, 16],
            "artifact_kind": "checkerboard_upsample",
            "artifact_strength": 0.8,
        },
        "split": {"fractions": [0.8, 0.0, 0.2], "transfer_size": 10},
    },
}


def test_criterion_9_roundtrips_and_frozen_config_replay(teacher, tmp_path):
    with criterion(9, "lossless round trips and frozen-config reruns"):
        # Checkpoint round trip is bitwise lossless and digest-stable.
        first = save_checkpoint(
            teacher, _ABLATION_MODEL, {"stage": "roundtrip"}, tmp_path / "ck1"
        )
        loaded = load_checkpoint(first, _ABLATION_MODEL)
        for name in teacher.sorted_names():
            assert loaded.tensors[name].tobytes() == teacher.tensors[name].tobytes()
        second = save_checkpoint(
            loaded, _ABLATION_MODEL, {"stage": "roundtrip"}, tmp_path / "ck2"
        )
        assert checkpoint_digest(first) == checkpoint_digest(second)

        # A full command-line pipeline, then every stage rerun from the
        # frozen config it wrote, must reproduce its recorded digests.
        root = tmp_path / "run"
        root.mkdir()
        cfg = root / "cfg.json"
        cfg.write_text(json.dumps(_ROUNDTRIP_CONFIG))
        data, teach, stud, rep = (root / n for n in ("data", "teacher", "student", "eval"))
        assert main(["gendata", "--config", str(cfg), "--out", str(data)]) == 0
        assert main(["pretrain", "--config", str(cfg),
                     "--data", str(data / "splits" / "train"),
                     "--out", str(teach)]) == 0
        assert main(["transfer", "--config", str(cfg),
                     "--teacher", str(teach / "checkpoint"),
                     "--data", str(data / "splits" / "transfer"),
                     "--out", str(stud)]) == 0
        assert main(["evaluate", "--ckpt", str(stud / "checkpoint"),
                     "--ckpt-before", str(teach / "checkpoint"),
                     "--source-data", str(data / "splits" / "test"),
                     "--target-data", str(data / "splits" / "test"),
                     "--out", str(rep)]) == 0

        reruns = tmp_path / "reruns"
        assert main(["gendata", "--config", str(data / "config.json"),
                     "--out", str(reruns / "data")]) == 0
        assert main(["pretrain", "--config", str(teach / "config.json"),
                     "--data", str(data / "splits" / "train"),
                     "--out", str(reruns / "teacher")]) == 0
        assert main(["transfer", "--config", str(stud / "config.json"),
                     "--teacher", str(teach / "checkpoint"),
                     "--data", str(data / "splits" / "transfer"),
                     "--out", str(reruns / "student")]) == 0
        assert main(["evaluate", "--ckpt", str(stud / "checkpoint"),
                     "--ckpt-before", str(teach / "checkpoint"),
                     "--source-data", str(data / "splits" / "test"),
                     "--target-data", str(data / "splits" / "test"),
                     "--out", str(reruns / "eval")]) == 0
        for stage, fresh in (("data", "data"), ("teacher", "teacher"),
                             ("student", "student"), ("eval", "eval")):
            a = json.loads((root / stage / "digests.json").read_text())
            b = json.loads((reruns / fresh / "digests.json").read_text())
            assert a == b, stage

        # Report round trip preserves every cell and the digest.
        report = EvalReport.load(rep / "report.json")
        report.save(tmp_path / "report-copy.json")
        again = EvalReport.load(tmp_path / "report-copy.json")
        assert again.to_dict() == report.to_dict()
        assert again.digest() == report.digest()
        digests = json.loads((rep / "digests.json").read_text())
        assert digests["report"] == report.digest()
