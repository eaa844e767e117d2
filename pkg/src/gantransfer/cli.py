"""Command-line entry points: gendata, pretrain, transfer, evaluate.

Each command reads one config file (flags win over file values), writes its
outputs plus a frozen copy of the resolved config under ``--out``, and
follows a fixed exit-code contract: 0 success, 1 runtime failure, 2 usage
or configuration error. ``GANTRANSFER_OUT_ROOT`` prefixes relative --out
paths so a harness can redirect all artifacts.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import os
import sys
from pathlib import Path

from . import augment, config as config_mod, data as data_mod, selftrain
from .checkpoint import checkpoint_digest, load_checkpoint, read_manifest, save_checkpoint
from .digest import digest_of
from .errors import CheckpointError, ConfigError, DivergenceError, GanTransferError
from .evaluate import evaluate_checkpoint, forgetting_report, write_scores
from .model import ModelSpec

ENV_OUT_ROOT = "GANTRANSFER_OUT_ROOT"


def _resolve_out(path: str) -> Path:
    root = os.environ.get(ENV_OUT_ROOT)
    if root and not os.path.isabs(path):
        return Path(root) / path
    return Path(path)


def _write_json(path: Path, payload) -> None:
    path.write_text(json.dumps(payload, sort_keys=True, indent=1) + "\n")


def cmd_gendata(args) -> int:
    run_cfg = config_mod.load_config(args.config)
    if args.strength is not None:
        raw = dict(run_cfg.resolved)
        raw["data"] = dict(raw.get("data") or {})
        if "synthetic" not in raw["data"]:
            raise ConfigError("--strength requires a data.synthetic section")
        syn = dict(raw["data"]["synthetic"])
        syn["artifact_strength"] = args.strength
        raw["data"]["synthetic"] = syn
        run_cfg = config_mod.parse_config(raw)
    spec = run_cfg.synthetic_spec()
    out = _resolve_out(args.out)
    out.mkdir(parents=True, exist_ok=True)
    config_mod.write_frozen(run_cfg, out, {
        "command": "gendata", "out": str(args.out), "strength": args.strength,
    })

    dataset = data_mod.generate_synthetic(spec)
    opts = run_cfg.split_options()
    manifest = data_mod.split_dataset(
        dataset,
        fractions=tuple(opts["fractions"]),
        seed=opts["seed"],
        transfer_size=opts["transfer_size"],
    )
    _write_json(out / "manifest.json", manifest.to_dict())
    split_digests = {}
    for split in data_mod.SPLITS:
        if split not in manifest.split_of.values():
            continue
        part = data_mod.subset(dataset, manifest, split)
        part_dir = data_mod.save_dataset(part, manifest, out / "splits" / split)
        split_digests[split] = data_mod.dataset_dir_digest(part_dir)
    _write_json(out / "digests.json", {
        "config": run_cfg.digest,
        "manifest": manifest.digest(),
        "splits": split_digests,
    })
    print(f"gendata: {len(dataset)} samples -> {out}")
    return 0


def cmd_pretrain(args) -> int:
    run_cfg = config_mod.load_config(args.config)
    pcfg = run_cfg.pretrain
    if args.epochs is not None:
        raw = dict(run_cfg.resolved)
        raw["pretrain"] = dict(raw["pretrain"])
        raw["pretrain"]["epochs"] = args.epochs
        if args.epochs < raw["pretrain"]["warmup_epochs"]:
            raw["pretrain"]["warmup_epochs"] = args.epochs
        run_cfg = config_mod.parse_config(raw)
        pcfg = run_cfg.pretrain
    dataset, _ = data_mod.load_dataset(args.data)
    out = _resolve_out(args.out)
    out.mkdir(parents=True, exist_ok=True)
    config_mod.write_frozen(run_cfg, out, {
        "command": "pretrain", "data": str(args.data), "out": str(args.out),
        "epochs": args.epochs,
    })
    data_digest = data_mod.dataset_dir_digest(args.data)
    params, history = selftrain.run_pretrain(
        run_cfg.model, dataset, pcfg, run_cfg.aug_pretrain,
        metrics_path=out / "metrics.jsonl",
    )
    ckpt_dir = out / "checkpoint"
    save_checkpoint(params, run_cfg.model, {
        "stage": "pretrain",
        "config_digest": run_cfg.digest,
        "data_digest": data_digest,
        "seed": run_cfg.seed,
    }, ckpt_dir)
    _write_json(out / "digests.json", {
        "config": run_cfg.digest,
        "data": data_digest,
        "checkpoint": checkpoint_digest(ckpt_dir),
    })
    final = history[-1]["mean_loss"] if history else None
    print(f"pretrain: {pcfg.epochs} epochs, final mean loss {final} -> {out}")
    return 0


def cmd_transfer(args) -> int:
    run_cfg = config_mod.load_config(args.config)
    teacher_manifest = read_manifest(args.teacher)
    teacher_spec = ModelSpec.from_dict(teacher_manifest["spec"])
    if teacher_spec.to_dict() != run_cfg.model.to_dict():
        raise ConfigError("teacher checkpoint layout does not match config model")
    teacher = load_checkpoint(args.teacher, run_cfg.model)
    dataset, _ = data_mod.load_dataset(args.data)
    out = _resolve_out(args.out)
    out.mkdir(parents=True, exist_ok=True)
    config_mod.write_frozen(run_cfg, out, {
        "command": "transfer", "teacher": str(args.teacher),
        "data": str(args.data), "out": str(args.out), "mode": args.mode,
    })
    student, result = selftrain.run_transfer(
        teacher, run_cfg.model, dataset, run_cfg.transfer, run_cfg.aug_transfer,
        mode=args.mode, metrics_path=out / "metrics.jsonl",
    )
    ckpt_dir = out / "checkpoint"
    save_checkpoint(student, run_cfg.model, {
        "stage": "transfer",
        "mode": args.mode,
        "config_digest": run_cfg.digest,
        "teacher_digest": checkpoint_digest(args.teacher),
        "data_digest": data_mod.dataset_dir_digest(args.data),
        "seed": run_cfg.seed,
    }, ckpt_dir)
    _write_json(out / "result.json", {
        "mode": result["mode"],
        "iterations": result["iterations"],
        "gamma_trace": result["gamma_trace"],
        "final_loss": result["losses"][-1] if result["losses"] else None,
    })
    _write_json(out / "digests.json", {
        "config": run_cfg.digest,
        "checkpoint": checkpoint_digest(ckpt_dir),
    })
    print(f"transfer[{args.mode}]: {result['iterations']} iterations -> {out}")
    return 0


def _load_optional_dataset(path, role: str):
    if path is None:
        print(f"warning: no {role} data given; its report cells stay null",
              file=sys.stderr)
        return None
    try:
        dataset, _ = data_mod.load_dataset(path)
    except ConfigError as exc:
        print(f"warning: {role} data unavailable ({exc}); "
              "its report cells stay null", file=sys.stderr)
        return None
    return dataset


def cmd_evaluate(args) -> int:
    source = _load_optional_dataset(args.source_data, "source")
    target = _load_optional_dataset(args.target_data, "target")
    before = args.ckpt_before if args.ckpt_before is not None else args.ckpt
    out = _resolve_out(args.out)
    out.mkdir(parents=True, exist_ok=True)
    invocation = {
        "command": "evaluate", "ckpt": str(args.ckpt),
        "ckpt_before": str(args.ckpt_before) if args.ckpt_before else None,
        "source_data": str(args.source_data) if args.source_data else None,
        "target_data": str(args.target_data) if args.target_data else None,
        "out": str(args.out),
    }
    _write_json(out / "config.json", {"invocation": invocation})
    report = forgetting_report(
        before, args.ckpt, source_test=source, target_test=target,
        config_digests={
            "ckpt": checkpoint_digest(args.ckpt),
            "ckpt_before": checkpoint_digest(before),
        },
    )
    report.save(out / "report.json")
    for role, dataset in (("source", source), ("target", target)):
        if dataset is None:
            continue
        for tag, ckpt in (("before", before), ("after", args.ckpt)):
            _, scores = evaluate_checkpoint(ckpt, dataset)
            write_scores(out / f"scores_{role}_{tag}.txt", dataset.ids, scores)
    _write_json(out / "digests.json", {"report": report.digest()})
    cells = report.to_dict()
    print("evaluate: " + ", ".join(
        f"{k}={cells[k]}" for k in
        ("source_before", "source_after", "target_before", "target_after",
         "forgetting_delta")
    ))
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="gantransfer",
        description="Transfer training toolkit for generated-image detectors.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gendata", help="generate a synthetic dataset with splits")
    p.add_argument("--config", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--strength", type=float, default=None,
                   help="override data.synthetic.artifact_strength")
    p.set_defaults(func=cmd_gendata)

    p = sub.add_parser("pretrain", help="train a teacher on source data")
    p.add_argument("--config", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--epochs", type=int, default=None,
                   help="override pretrain.epochs")
    p.set_defaults(func=cmd_pretrain)

    p = sub.add_parser("transfer", help="adapt a teacher to target data")
    p.add_argument("--config", required=True)
    p.add_argument("--teacher", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--mode", choices=selftrain.TRANSFER_MODES, default="tgd")
    p.set_defaults(func=cmd_transfer)

    p = sub.add_parser("evaluate", help="before/after report over both domains")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--ckpt-before", default=None)
    p.add_argument("--source-data", default=None)
    p.add_argument("--target-data", default=None)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_evaluate)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (CheckpointError, DivergenceError, GanTransferError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
