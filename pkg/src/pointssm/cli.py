"""Command line surface: train, eval, audit, gradcheck, synth, sample-off.

Configuration is a flat "key = value" file; any key can be overridden on the
command line with --key value. The POINTSSM_OUTPUT_DIR environment variable
overrides the configured output directory (a command line --out_dir still
wins). Every command is deterministic under a fixed seed.

Exit codes: 0 success, 1 usage or configuration error, 2 data error,
3 check failure.
"""

from __future__ import annotations

import argparse
import csv
import os
import sys
from dataclasses import dataclass, fields
from pathlib import Path

import numpy as np

from .cofe import ConfigError
from .data_io import (ParseError, CheckpointError, parse_off, sample_mesh_surface,
                      generate_synthetic, save_xyz, load_xyz, save_checkpoint,
                      load_checkpoint, SYNTHETIC_CLASSES)
from .geometry import CapacityError
from .gradcheck import check_modules, thresholds
from .model import ModelConfig, PointCloudClassifier, count_params, flop_estimate
from .training import PreparedDataset, synthetic_dataset, prepare_batches, evaluate, fit

ENV_OUTPUT_DIR = "POINTSSM_OUTPUT_DIR"

# expected additions from the dual-path gate at the full-scale configuration
FULL_SCALE_COFE_PARAM_RANGE = (25_000, 35_000)
FULL_SCALE_COFE_FLOP_RANGE = (0.045e9, 0.135e9)

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2
EXIT_CHECK = 3


@dataclass
class RunConfig:
    """Model configuration plus the training recipe, desk-scale defaults."""

    depth: int = 4
    dim: int = 64
    num_groups: int = 32
    group_size: int = 16
    lgp_neighbors: int = 8
    cofe_groups: int = 4
    ssm_state: int = 8
    num_classes: int = 8
    drop_path_rate: float = 0.0
    seed: int = 0
    use_ssm_gate: bool = True
    share_reverse_weights: bool = False
    lgp_gaussian_coupling: bool = True
    head_pool_concat: bool = True
    lr: float = 5e-4
    weight_decay: float = 0.05
    warmup_epochs: int = 2
    epochs: int = 12
    batch_size: int = 32
    data: str = "synthetic"
    train_per_class: int = 200
    test_per_class: int = 50
    n_points: int = 256
    out_dir: str = "pointssm_run"

    def model_config(self) -> ModelConfig:
        names = {f.name for f in fields(ModelConfig)}
        return ModelConfig(**{f.name: getattr(self, f.name)
                              for f in fields(RunConfig) if f.name in names})

    def to_text(self) -> str:
        lines = [f"{f.name} = {getattr(self, f.name)}" for f in fields(RunConfig)]
        return "\n".join(lines) + "\n"


_FIELD_TYPES = {f.name: f.type for f in fields(RunConfig)}


def _coerce(key: str, raw: str):
    if key not in _FIELD_TYPES:
        valid = ", ".join(sorted(_FIELD_TYPES))
        raise ConfigError(f"unknown config key {key!r}; valid keys: {valid}")
    kind = _FIELD_TYPES[key]
    raw = raw.strip()
    if kind == "int":
        return int(raw)
    if kind == "float":
        return float(raw)
    if kind == "bool":
        if raw.lower() in ("true", "1", "yes"):
            return True
        if raw.lower() in ("false", "0", "no"):
            return False
        raise ConfigError(f"config key {key!r} expects true/false, got {raw!r}")
    return raw


def parse_config_file(path) -> dict:
    out = {}
    with open(path) as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigError(f"{path}:{lineno}: expected 'key = value', got {raw.rstrip()!r}")
            key, value = (part.strip() for part in line.split("=", 1))
            out[key] = _coerce(key, value)
    return out


def resolve_config(args: argparse.Namespace) -> RunConfig:
    values = {}
    if getattr(args, "config", None):
        values.update(parse_config_file(args.config))
    if ENV_OUTPUT_DIR in os.environ:
        values["out_dir"] = os.environ[ENV_OUTPUT_DIR]
    for key in _FIELD_TYPES:
        override = getattr(args, key, None)
        if override is not None:
            values[key] = _coerce(key, str(override))
    try:
        return RunConfig(**values)
    except TypeError as exc:
        raise ConfigError(str(exc)) from None


def _add_config_options(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", help="flat 'key = value' config file")
    for name in _FIELD_TYPES:
        parser.add_argument(f"--{name}", metavar="V", default=None)


def _load_xyz_dataset(data_dir: str) -> PreparedDataset:
    manifest = Path(data_dir) / "manifest.csv"
    if not manifest.exists():
        raise ParseError(f"no manifest.csv under {data_dir}")
    clouds, labels = [], []
    with open(manifest) as fh:
        for row in csv.DictReader(fh):
            cloud = load_xyz(Path(data_dir) / row["file"])
            clouds.append(cloud)
            labels.append(int(row["label"]))
    if not clouds:
        raise ParseError(f"empty manifest in {data_dir}")
    return PreparedDataset(clouds=clouds, labels=np.asarray(labels, dtype=np.int64))


def _datasets(cfg: RunConfig) -> tuple[PreparedDataset, PreparedDataset]:
    if cfg.data == "synthetic":
        train_seed = int(np.random.SeedSequence((cfg.seed, 1)).generate_state(1)[0])
        test_seed = int(np.random.SeedSequence((cfg.seed, 2)).generate_state(1)[0])
        train = synthetic_dataset(cfg.train_per_class, cfg.n_points, train_seed,
                                  augment=True)
        test = synthetic_dataset(cfg.test_per_class, cfg.n_points, test_seed,
                                 augment=False)
        return train, test
    raise ParseError(f"unknown data source {cfg.data!r}; expected 'synthetic' "
                     f"(use 'pointssm eval --data DIR' for on-disk sets)")


def cmd_train(args) -> int:
    cfg = resolve_config(args)
    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    train_set, test_set = _datasets(cfg)
    model = PointCloudClassifier(cfg.model_config())

    rows = []

    def log(row):
        rows.append(row)
        print(f"epoch {row['epoch']:3d}  train_loss {row['train_loss']:.6f}  "
              f"train_acc {row['train_acc']:.4f}  test_acc {row['test_acc']:.4f}  "
              f"lr {row['lr']:.8g}")

    result = fit(model, train_set, test_set, epochs=cfg.epochs,
                 batch_size=cfg.batch_size, lr=cfg.lr,
                 weight_decay=cfg.weight_decay, warmup_epochs=cfg.warmup_epochs,
                 seed=cfg.seed, log=log)

    with open(out / "metrics.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["epoch", "train_loss", "train_acc", "test_acc", "lr"])
        for row in rows:
            writer.writerow([row["epoch"], f"{row['train_loss']:.6f}",
                             f"{row['train_acc']:.6f}", f"{row['test_acc']:.6f}",
                             f"{row['lr']:.8g}"])
    (out / "config.txt").write_text(cfg.to_text())
    save_checkpoint(out / "checkpoint.hemb", cfg.to_text(), model.named_params())
    print(f"final test accuracy {result.final_test_acc:.4f}; artifacts in {out}")
    return EXIT_OK


def load_model_checkpoint(path) -> tuple[PointCloudClassifier, RunConfig]:
    ckpt = load_checkpoint(path)
    values = {}
    for line in ckpt.config_text.splitlines():
        line = line.split("#", 1)[0].strip()
        if line and "=" in line:
            key, value = (part.strip() for part in line.split("=", 1))
            values[key] = _coerce(key, value)
    cfg = RunConfig(**values)
    model = PointCloudClassifier(cfg.model_config())
    named = dict(model.named_params())
    if set(named) != set(ckpt.tensors):
        missing = sorted(set(named) ^ set(ckpt.tensors))
        raise CheckpointError(f"checkpoint tensor names do not match the model: {missing[:6]}")
    for name, tensor in named.items():
        stored = ckpt.tensors[name]
        if stored.shape != tensor.shape:
            raise CheckpointError(f"shape mismatch for {name}: checkpoint "
                                  f"{stored.shape} vs model {tensor.shape}")
        tensor.data = stored
    return model, cfg


def cmd_eval(args) -> int:
    model, cfg = load_model_checkpoint(args.checkpoint)
    if args.data == "synthetic":
        _, test_set = _datasets(cfg)
    else:
        test_set = _load_xyz_dataset(args.data)
    batches = prepare_batches(test_set, np.arange(len(test_set)), cfg.batch_size,
                              model.config)
    accuracy, confusion = evaluate(model, batches)
    out = Path(args.out or cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "confusion.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["true\\pred"] + [str(i) for i in range(confusion.shape[1])])
        for i, row in enumerate(confusion):
            writer.writerow([str(i)] + [str(int(v)) for v in row])
    (out / "eval_config.txt").write_text(
        f"checkpoint = {args.checkpoint}\ndata = {args.data}\n" + cfg.to_text())
    print(f"overall accuracy {accuracy:.4f} over {int(confusion.sum())} samples")
    print(f"confusion matrix written to {out / 'confusion.csv'}")
    return EXIT_OK


def cmd_audit(args) -> int:
    cfg = resolve_config(args)
    model_cfg = cfg.model_config()
    report = count_params(model_cfg)
    flops = flop_estimate(model_cfg)
    print(f"parameter table for depth={model_cfg.depth} dim={model_cfg.dim} "
          f"groups={model_cfg.cofe_groups}:")
    for name, value in sorted(report["table"].items()):
        print(f"  {name:<24s} {value:>12,d}")
    print(f"  {'total':<24s} {report['total']:>12,d}")

    ok = True
    lo, hi = FULL_SCALE_COFE_PARAM_RANGE
    cofe_ok = lo <= report["cofe_added"] <= hi
    geo_ok = report["geometric_path_added"] == 0
    flop_lo, flop_hi = FULL_SCALE_COFE_FLOP_RANGE
    flop_ok = flop_lo <= flops["cofe_added"] <= flop_hi
    full_scale = (model_cfg.depth, model_cfg.dim, model_cfg.cofe_groups) == (12, 384, 16)
    print(f"dual-path gate params added: {report['cofe_added']:,d} "
          f"(expected {lo:,d}..{hi:,d} at full scale): "
          f"{'PASS' if cofe_ok else 'FAIL'}")
    print(f"geometric path params added: {report['geometric_path_added']} "
          f"(expected exactly 0): {'PASS' if geo_ok else 'FAIL'}")
    print(f"dual-path gate FLOPs added: {flops['cofe_added'] / 1e9:.3f} G "
          f"(expected {flop_lo / 1e9:.3f}..{flop_hi / 1e9:.3f} G at full scale): "
          f"{'PASS' if flop_ok else 'FAIL'}")
    if full_scale:
        ok = cofe_ok and geo_ok and flop_ok
    else:
        ok = geo_ok
        print("note: numeric ranges apply to the full-scale configuration "
              "(depth 12, dim 384, 16 groups)")
    return EXIT_OK if ok else EXIT_CHECK


def cmd_gradcheck(args) -> int:
    report = check_modules(seed=args.seed)
    limits = thresholds()
    failed = False
    for name, err in report.items():
        ok = err < limits[name]
        failed |= not ok
        print(f"{name:<10s} worst rel err {err:.3e}  "
              f"(threshold {limits[name]:.0e})  {'PASS' if ok else 'FAIL'}")
    return EXIT_CHECK if failed else EXIT_OK


def cmd_synth(args) -> int:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    rows = []
    for class_id, name in enumerate(SYNTHETIC_CLASSES):
        for index in range(args.per_class):
            seed = int(np.random.SeedSequence((args.seed, class_id, index)
                                              ).generate_state(1)[0])
            cloud = generate_synthetic(class_id, args.n_points, seed,
                                       augment=args.augment)
            filename = f"{name}_{index:04d}.xyz"
            save_xyz(out / filename, cloud)
            rows.append((filename, class_id))
    with open(out / "manifest.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["file", "label"])
        writer.writerows(rows)
    (out / "generation.txt").write_text(
        f"per_class = {args.per_class}\nn_points = {args.n_points}\n"
        f"seed = {args.seed}\naugment = {args.augment}\n")
    print(f"wrote {len(rows)} clouds and manifest.csv to {out}")
    return EXIT_OK


def cmd_sample_off(args) -> int:
    with open(args.mesh) as fh:
        mesh = parse_off(fh)
    cloud = sample_mesh_surface(mesh, args.n, args.seed)
    save_xyz(args.out, cloud)
    Path(str(args.out) + ".meta.txt").write_text(
        f"mesh = {args.mesh}\nn = {args.n}\nseed = {args.seed}\n")
    print(f"sampled {args.n} points from {args.mesh} "
          f"({len(mesh.vertices)} vertices, {len(mesh.faces)} triangles) to {args.out}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="pointssm",
                                     description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p_train = sub.add_parser("train", help="train on synthetic data")
    _add_config_options(p_train)
    p_train.set_defaults(fn=cmd_train)

    p_eval = sub.add_parser("eval", help="evaluate a checkpoint")
    p_eval.add_argument("--checkpoint", required=True)
    p_eval.add_argument("--data", default="synthetic",
                        help="'synthetic' or a directory with manifest.csv + .xyz files")
    p_eval.add_argument("--out", default=None)
    p_eval.set_defaults(fn=cmd_eval)

    p_audit = sub.add_parser("audit", help="parameter and FLOP audit")
    _add_config_options(p_audit)
    full = ModelConfig.full_scale()
    for key in ("depth", "dim", "num_groups", "group_size", "cofe_groups",
                "ssm_state", "num_classes", "drop_path_rate"):
        p_audit.set_defaults(**{key: getattr(full, key)})
    p_audit.set_defaults(fn=cmd_audit)

    p_grad = sub.add_parser("gradcheck", help="finite-difference gradient report")
    p_grad.add_argument("--seed", type=int, default=0)
    p_grad.set_defaults(fn=cmd_gradcheck)

    p_synth = sub.add_parser("synth", help="materialize a synthetic dataset")
    p_synth.add_argument("--out", required=True)
    p_synth.add_argument("--per-class", dest="per_class", type=int, required=True)
    p_synth.add_argument("--n-points", dest="n_points", type=int, default=256)
    p_synth.add_argument("--seed", type=int, default=0)
    p_synth.add_argument("--augment", action="store_true")
    p_synth.set_defaults(fn=cmd_synth)

    p_off = sub.add_parser("sample-off", help="sample a point cloud from an OFF mesh")
    p_off.add_argument("mesh")
    p_off.add_argument("--n", type=int, required=True)
    p_off.add_argument("--seed", type=int, default=0)
    p_off.add_argument("--out", required=True)
    p_off.set_defaults(fn=cmd_sample_off)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_USAGE if exc.code not in (0, None) else EXIT_OK
    try:
        return args.fn(args)
    except ConfigError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (ParseError, CheckpointError, CapacityError, ValueError,
            OSError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
