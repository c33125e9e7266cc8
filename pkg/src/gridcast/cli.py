"""Command-line pipeline: gridcast gen | train | predict | eval.

Exit codes: 0 success, 2 config error, 3 missing prerequisite,
4 runtime/numeric failure. Every command is deterministic given
identical inputs and seed.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import sys
from pathlib import Path

import numpy as np
import torch

from . import checkpoint as ckpt
from . import metrics as met
from .dataset import Dataset, DatasetFormatError, ScenarioConfig, generate_dataset, split_indices
from .grid import EOGM, SMGM, GridConfig, ogm_to_pgm, pignistic, smgm_to_pgm
from .models import (
    HORIZON,
    T_IN,
    TwoProngModel,
    build_model,
    oracle_predict_fn,
    torch_predict_fn,
)
from .training import (
    TrainConfig,
    TrainingDivergedError,
    seed_model,
    tensors_from_dataset,
    train_model,
    write_loss_csv,
)

EXIT_CONFIG = 2
EXIT_PREREQ = 3
EXIT_RUNTIME = 4


class ConfigError(Exception):
    pass


class PrerequisiteError(Exception):
    pass


def _sha256(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def _load_scenario(args) -> tuple[ScenarioConfig, dict]:
    if not args.config:
        raise ConfigError("gen requires --config with a scenario JSON")
    path = Path(args.config)
    if not path.is_file():
        raise ConfigError(f"config not found: {path}")
    try:
        doc = json.loads(path.read_text(encoding="utf-8"))
        scn = ScenarioConfig.from_json(doc)
    except (json.JSONDecodeError, ValueError, TypeError) as exc:
        raise ConfigError(f"invalid scenario config {path}: {exc}") from exc
    if args.grid_size:
        scn = ScenarioConfig.from_json({**doc, "grid": {
            **doc.get("grid", {}), "width": args.grid_size, "height": args.grid_size}})
        doc = {**doc, "grid": {**doc.get("grid", {}),
                               "width": args.grid_size, "height": args.grid_size}}
    if args.variant:
        doc = {**doc, "variant": args.variant}
        scn = ScenarioConfig.from_json(doc)
    return scn, doc


def cmd_gen(args) -> int:
    scn, doc = _load_scenario(args)
    n_sequences = int(doc.get("n_sequences", 100))
    seed = args.seed if args.seed is not None else int(doc.get("seed", 0))
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    dataset = generate_dataset(scn, n_sequences, seed)
    path = out / "dataset.bin"
    dataset.write(path)
    size = path.stat().st_size
    print(f"wrote {path}: {len(dataset)} sequences, {size} bytes, "
          f"sha256 {_sha256(path)}")
    return 0


def _load_dataset(path_str: str) -> Dataset:
    path = Path(path_str)
    if not path.is_file():
        raise ConfigError(f"dataset not found: {path}")
    try:
        return Dataset.read(path)
    except DatasetFormatError as exc:
        raise ConfigError(str(exc)) from exc


def _train_config(args, doc: dict) -> TrainConfig:
    return TrainConfig(
        epochs=int(doc.get("epochs", 30)),
        batch_size=int(doc.get("batch_size", 16)),
        lr=float(doc.get("lr", 1e-4)),
        seed=args.seed if args.seed is not None else int(doc.get("seed", 0)),
        stage=args.stage,
    )


def cmd_train(args) -> int:
    dataset = _load_dataset(args.dataset)
    doc = {}
    if args.config:
        cfg_path = Path(args.config)
        if not cfg_path.is_file():
            raise ConfigError(f"config not found: {cfg_path}")
        doc = json.loads(cfg_path.read_text(encoding="utf-8"))
    cfg = _train_config(args, doc)
    widths = tuple(doc.get("widths", (8, 16)))
    kernel = int(doc.get("kernel_size", 3))
    ratios = tuple(doc.get("split", (0.7, 0.15, 0.15)))
    kind = args.model.replace("-", "_")
    if kind not in ("semantics", "ours", "prednet", "double_prong"):
        raise ConfigError(f"unknown model kind {args.model!r}")

    torch.manual_seed(cfg.seed)
    n_classes = len(dataset.table)
    meta = {"n_classes": n_classes, "widths": list(widths), "kernel_size": kernel,
            "variant": dataset.table.variant.name.lower(),
            "grid": [dataset.config.width, dataset.config.height],
            "stage": cfg.stage, "seed": cfg.seed}

    model = build_model({**meta, "kind": kind})
    seed_model(model, cfg.seed)
    trainable = None
    if args.stage == 2:
        if not args.init:
            raise PrerequisiteError("stage 2 requires --init with the stage-1 checkpoint")
        init_meta, state = ckpt.load_checkpoint(args.init)
        if init_meta.get("kind") != kind:
            raise ConfigError(f"--init checkpoint is a {init_meta.get('kind')!r} "
                              f"model, expected {kind!r}")
        model.load_state_dict(state)
    if kind == "ours":
        if not args.semantics:
            raise PrerequisiteError(
                "training `ours` requires --semantics with a trained semantics checkpoint")
        sem_meta, sem_state = ckpt.load_checkpoint(args.semantics)
        if sem_meta.get("kind") != "semantics":
            raise ConfigError("--semantics must point at a semantics checkpoint")
        if args.stage == 1:
            sem_model = build_model(sem_meta)
            sem_model.load_state_dict(sem_state)
            model.semantics.load_state_dict(sem_model.state_dict())
        model.freeze_semantics()
        trainable = model.occupancy_parameters()

    train_idx, _, _ = split_indices(len(dataset), cfg.seed, ratios)
    data = tensors_from_dataset(dataset, train_idx)
    curve = train_model(model, data, cfg, parameters=trainable)

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    stem = f"{kind}_stage{cfg.stage}"
    ckpt_path = out / f"{stem}.gckp"
    ckpt.save_model(ckpt_path, model, meta)
    write_loss_csv(out / f"{stem}_loss.csv", cfg.stage, curve)
    print(f"wrote {ckpt_path} (final loss {curve[-1]:.6g}, "
          f"sha256 {_sha256(ckpt_path)})")
    return 0


def cmd_predict(args) -> int:
    dataset = _load_dataset(args.dataset)
    ckpt_path = Path(args.checkpoint)
    if not ckpt_path.is_file():
        raise PrerequisiteError(f"checkpoint not found: {ckpt_path}")
    model, meta = ckpt.load_model(ckpt_path)
    if meta.get("grid") != [dataset.config.width, dataset.config.height]:
        raise ConfigError("checkpoint grid size does not match dataset")
    if not (0 <= args.index < len(dataset)):
        raise ConfigError(f"sequence index {args.index} out of range "
                          f"(dataset has {len(dataset)})")
    seq = dataset.sequences[args.index]
    predict = torch_predict_fn(model, len(dataset.table), harden=args.harden)
    preds = predict(seq)  # (15, 2, h, w)

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    cfg = dataset.config
    for t in range(preds.shape[0]):
        stamp = f"{(t + 1) * seq.frame_period:.1f}s"
        ogm = pignistic(EOGM(cfg, preds[t, 0], preds[t, 1]))
        (out / f"pred_ogm_{stamp}.pgm").write_bytes(ogm_to_pgm(ogm))
    raw = preds.astype("<f4")
    (out / "pred_masses.bin").write_bytes(raw.tobytes())
    if isinstance(model, TwoProngModel):
        occ_t, sem_t, mask_t = tensors_from_dataset(dataset, [args.index])
        with torch.no_grad():
            _, sem_preds = model.rollout(occ_t, sem_t, mask_t, harden=args.harden)
        labels = sem_preds[0].argmax(dim=1).numpy().astype(np.uint8)
        for t in range(labels.shape[0]):
            stamp = f"{(t + 1) * seq.frame_period:.1f}s"
            smgm = SMGM(cfg, labels[t], dataset.table)
            (out / f"pred_smgm_{stamp}.pgm").write_bytes(smgm_to_pgm(smgm))
    print(f"wrote predictions for sequence {args.index} to {out}")
    return 0


def cmd_eval(args) -> int:
    dataset = _load_dataset(args.dataset)
    seed = args.seed if args.seed is not None else 0
    _, _, test_idx = split_indices(len(dataset), seed)
    if not test_idx:
        raise ConfigError("test split is empty")
    reports = []
    dataset_tag = Path(args.dataset).stem
    for spec in args.checkpoints:
        if spec == "oracle":
            predict, tag = oracle_predict_fn(), "oracle"
        else:
            path = Path(spec)
            if not path.is_file():
                raise PrerequisiteError(f"checkpoint not found: {path}")
            model, meta = ckpt.load_model(path)
            if meta.get("grid") != [dataset.config.width, dataset.config.height]:
                raise ConfigError(f"{path}: checkpoint grid does not match dataset")
            predict, tag = torch_predict_fn(model, len(dataset.table)), path.stem
        reports.append(met.evaluate(predict, dataset, test_idx,
                                    model_tag=tag, dataset_tag=dataset_tag))
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    met.write_timestep_csv(out / "metrics_timestep.csv", reports)
    met.write_summary_csv(out / "metrics_summary.csv", reports)
    for report in reports:
        row = report.summary_row()
        print(f"{row['model']}: mse {row['mse']:.6g}  is {row['is']:.6g}  "
              f"dyn_mse {row['dyn_mse']:.6g}")
    print(f"wrote {out / 'metrics_timestep.csv'} and {out / 'metrics_summary.csv'}")
    return 0


def make_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="gridcast",
        description="Semantics-aware occupancy grid prediction pipeline")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--out", default="out", help="output directory")
        p.add_argument("--seed", type=int, default=None)

    p_gen = sub.add_parser("gen", help="generate a synthetic dataset")
    p_gen.add_argument("--config", required=True, help="scenario JSON")
    p_gen.add_argument("--grid-size", type=int, default=None)
    p_gen.add_argument("--variant", choices=["full", "six", "four", "binary"],
                       default=None)
    common(p_gen)

    p_train = sub.add_parser("train", help="train a model")
    p_train.add_argument("--dataset", required=True)
    p_train.add_argument("--model", required=True,
                         choices=["semantics", "ours", "prednet", "double-prong"])
    p_train.add_argument("--stage", type=int, choices=[1, 2], default=1)
    p_train.add_argument("--config", default=None, help="training JSON")
    p_train.add_argument("--semantics", default=None,
                         help="semantics checkpoint (required for `ours`)")
    p_train.add_argument("--init", default=None,
                         help="stage-1 checkpoint (required for stage 2)")
    common(p_train)

    p_pred = sub.add_parser("predict", help="roll out one sequence to PGM images")
    p_pred.add_argument("--checkpoint", required=True)
    p_pred.add_argument("--dataset", required=True)
    p_pred.add_argument("--index", type=int, default=0)
    p_pred.add_argument("--harden", action="store_true",
                        help="feed argmax-hardened semantic maps during rollout")
    common(p_pred)

    p_eval = sub.add_parser("eval", help="evaluate checkpoints on the test split")
    p_eval.add_argument("checkpoints", nargs="+",
                        help="checkpoint paths (or the literal `oracle`)")
    p_eval.add_argument("--dataset", required=True)
    common(p_eval)
    return parser


def main(argv=None) -> int:
    args = make_parser().parse_args(argv)
    handlers = {"gen": cmd_gen, "train": cmd_train,
                "predict": cmd_predict, "eval": cmd_eval}
    try:
        return handlers[args.command](args)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except PrerequisiteError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_PREREQ
    except (TrainingDivergedError, ckpt.CheckpointError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
