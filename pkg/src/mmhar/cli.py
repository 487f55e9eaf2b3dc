"""Command-line entry point.

Commands: ``pretrain-unimodal``, ``pretrain-multimodal``, ``evaluate`` (alias
``finetune``; modes linear / retrieve / semisup / topk), ``export-embeddings``,
``generate-synthetic`` and ``convert-dataset``. Every run echoes its fully
resolved configuration into the output directory so it can be reproduced from
the echo alone. Relative output directories are anchored at
``$MMHAR_OUTPUT_ROOT`` (default: the current directory).
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

import yaml

from . import convert as convert_mod
from .config import ExperimentConfig, apply_overrides, load_config, save_config
from .data import (
    DatasetError,
    generate_synthetic,
    load_dataset,
    load_manifest,
    make_split,
    preprocess_samples,
    write_dataset,
)
from .evaluate import (
    EvalResult,
    export_embeddings,
    linear_eval,
    retrieve,
    semi_supervised_sweep,
    topk_ablation,
)
from .train import (
    ConfigurationError,
    load_encoder,
    pretrain_multimodal,
    pretrain_unimodal,
    save_checkpoint,
)

KNOWN_ERRORS = (ConfigurationError, DatasetError, FileNotFoundError, ValueError)


def _out_root() -> Path:
    return Path(os.environ.get("MMHAR_OUTPUT_ROOT", "."))


def _resolve_out_dir(arg_out: str | None, config: ExperimentConfig | None) -> Path:
    raw = arg_out or (config.output_dir if config else None) or "run"
    path = Path(raw)
    if not path.is_absolute():
        path = _out_root() / path
    path.mkdir(parents=True, exist_ok=True)
    return path


def _load_experiment(args) -> ExperimentConfig:
    config = load_config(args.config) if args.config else ExperimentConfig()
    overrides: dict[str, object] = {}
    for item in getattr(args, "set", None) or []:
        if "=" not in item:
            raise ConfigurationError(f"--set expects key=value, got {item!r}")
        key, raw = item.split("=", 1)
        overrides[key.strip()] = yaml.safe_load(raw)
    if getattr(args, "seed", None) is not None:
        overrides["seed"] = args.seed
    if getattr(args, "epochs", None) is not None:
        overrides["epochs"] = args.epochs
    if getattr(args, "framework", None) is not None:
        overrides["framework"] = args.framework
    if overrides:
        config = apply_overrides(config, overrides)
    return config.resolved()


def _load_prepared_dataset(config: ExperimentConfig):
    manifest_path = config.dataset.manifest
    if manifest_path is None or not Path(manifest_path).exists():
        raise FileNotFoundError(f"dataset.manifest not found: {manifest_path}")
    manifest = load_manifest(manifest_path)
    samples = load_dataset(manifest_path)
    samples = preprocess_samples(
        samples,
        target_timesteps=config.dataset.resample_timesteps,
        center_skeleton=config.dataset.normalize_skeleton,
    )
    return manifest, samples


def _write_log(path: Path, records: list[dict]) -> None:
    with path.open("w") as fh:
        for record in records:
            fh.write(json.dumps(record) + "\n")


def _result_row(result: EvalResult) -> dict:
    row = {
        "protocol": result.protocol,
        "metric": result.metric_name,
        "value": result.value,
    }
    if result.ci_half_width is not None:
        row["ci_half_width"] = result.ci_half_width
    row.update({k: v for k, v in result.config_echo.items()
                if isinstance(v, (int, float, str, bool))})
    return row


def _write_results(out_dir: Path, results: list[EvalResult]) -> Path:
    rows = [_result_row(r) for r in results]
    columns: list[str] = []
    for row in rows:
        columns += [c for c in row if c not in columns]
    path = out_dir / "results.csv"
    with path.open("w") as fh:
        fh.write(",".join(columns) + "\n")
        for row in rows:
            fh.write(",".join(str(row.get(c, "")) for c in columns) + "\n")
    return path


def _echo_config(config: ExperimentConfig, out_dir: Path) -> None:
    save_config(config, out_dir / "config_echo.yaml")


def _load_eval_encoders(config: ExperimentConfig) -> dict:
    if not config.checkpoints:
        raise ConfigurationError(
            "evaluation requires checkpoints: {inertial: ..., skeleton: ...} in the config"
        )
    encoders = {}
    for modality in ("inertial", "skeleton"):
        path = config.checkpoints.get(modality)
        if path is not None:
            encoder = load_encoder(path)
            encoder.eval()
            encoders[modality] = encoder
    if not encoders:
        raise ConfigurationError("checkpoints must name at least one of inertial/skeleton")
    return encoders


# ---------------------------------------------------------------------------
# Commands
# ---------------------------------------------------------------------------


def cmd_generate_synthetic(args) -> int:
    samples = generate_synthetic(
        num_classes=args.classes,
        per_class=args.per_class,
        timesteps=args.timesteps,
        sensor_channels=args.channels,
        num_joints=args.joints,
        coord_channels=args.coords,
        noise=args.noise,
        seed=args.seed if args.seed is not None else 0,
    )
    out_dir = _resolve_out_dir(args.out, None)
    manifest_path = write_dataset(samples, out_dir, name=args.name, num_classes=args.classes)
    print(f"wrote {len(samples)} samples to {manifest_path}")
    return 0


def cmd_convert_dataset(args) -> int:
    out_dir = _resolve_out_dir(args.out, None)
    if args.format == "utd-mhad":
        manifest_path = convert_mod.convert_utd_mhad(args.src, out_dir)
    else:
        manifest_path = convert_mod.convert_index_csv(
            args.src, out_dir, name=args.name, num_classes=args.num_classes
        )
    manifest = load_manifest(manifest_path)
    print(f"wrote {len(manifest.samples)} samples to {manifest_path}")
    return 0


def cmd_pretrain_unimodal(args) -> int:
    config = _load_experiment(args)
    if config.framework not in ("simclr_inertial", "simclr_skeleton"):
        raise ConfigurationError(
            f"pretrain-unimodal needs framework simclr_inertial or simclr_skeleton, "
            f"got {config.framework!r}"
        )
    manifest, samples = _load_prepared_dataset(config)
    out_dir = _resolve_out_dir(args.out, config)
    _echo_config(config, out_dir)
    plan = config.pretrain_plan()
    icfg, scfg = config.encoder_configs(manifest)
    ipipe, spipe = config.pipelines()
    modality = "inertial" if config.framework == "simclr_inertial" else "skeleton"
    result = pretrain_unimodal(
        plan,
        samples,
        encoder_config=icfg if modality == "inertial" else scfg,
        pipeline=ipipe if modality == "inertial" else spipe,
        schedule=config.optimizer,
        projection_dim=config.encoders.projection_dim,
    )
    save_checkpoint(result.checkpoint, out_dir / f"{config.framework}_final.pt")
    save_checkpoint(result.best_checkpoint, out_dir / f"{config.framework}_best.pt")
    _write_log(out_dir / "train_log.jsonl", result.records)
    print(f"final loss {result.loss_curve[-1]:.6f} after {plan.epochs} epochs -> {out_dir}")
    return 0


def cmd_pretrain_multimodal(args) -> int:
    config = _load_experiment(args)
    if config.framework not in ("cmc", "cmc_cmkm"):
        raise ConfigurationError(
            f"pretrain-multimodal needs framework cmc or cmc_cmkm, got {config.framework!r}"
        )
    manifest, samples = _load_prepared_dataset(config)
    out_dir = _resolve_out_dir(args.out, config)
    _echo_config(config, out_dir)
    plan = config.pretrain_plan()
    icfg, scfg = config.encoder_configs(manifest)
    ipipe, spipe = config.pipelines()
    result = pretrain_multimodal(
        plan,
        samples,
        inertial_config=icfg,
        skeleton_config=scfg,
        inertial_pipeline=ipipe,
        skeleton_pipeline=spipe,
        schedule=config.optimizer,
        projection_dim=config.encoders.projection_dim,
    )
    for modality in ("inertial", "skeleton"):
        save_checkpoint(result.checkpoints[modality], out_dir / f"{config.framework}_{modality}_final.pt")
        save_checkpoint(result.best_checkpoints[modality], out_dir / f"{config.framework}_{modality}_best.pt")
    _write_log(out_dir / "train_log.jsonl", result.records)
    print(f"final loss {result.loss_curve[-1]:.6f} after {plan.epochs} epochs -> {out_dir}")
    return 0


def cmd_evaluate(args) -> int:
    config = _load_experiment(args)
    manifest, samples = _load_prepared_dataset(config)
    train, test = make_split(samples, config.dataset.split_spec())
    out_dir = _resolve_out_dir(args.out, config)
    _echo_config(config, out_dir)
    ev = config.evaluation

    if args.mode == "linear":
        encoders = _load_eval_encoders(config)
        results = [
            linear_eval(encoders, train, test, manifest.num_classes, epochs=ev.epochs,
                        batch_size=ev.batch_size, seed=config.seed, metric=ev.metric,
                        schedule=config.optimizer, fusion_dim=config.encoders.fusion_dim)
        ]
    elif args.mode == "retrieve":
        encoders = _load_eval_encoders(config)
        modality = ev.retrieval_modality
        if modality not in encoders:
            raise ConfigurationError(f"no checkpoint configured for retrieval modality {modality!r}")
        results = [
            retrieve(encoders[modality], modality, train, test, k=ev.retrieval_k,
                     num_classes=manifest.num_classes, metric=ev.metric)
        ]
    elif args.mode == "semisup":
        encoders = _load_eval_encoders(config)
        results = semi_supervised_sweep(
            encoders, train, test, manifest.num_classes, fractions=ev.fractions,
            repeats=ev.repeats, seed=config.seed, epochs=ev.epochs,
            batch_size=ev.batch_size, metric=ev.metric,
            include_baselines=ev.include_baselines,
            supervised_epochs=ev.supervised_epochs, schedule=config.optimizer,
        )
        _write_semisup_outputs(out_dir, results, ev.metric)
    elif args.mode == "topk":
        guidance = config.pretrain_plan().guidance_checkpoints
        if guidance is None:
            raise ConfigurationError("topk evaluation requires guidance_checkpoints in the config")
        results = topk_ablation(
            train, train, test, guidance, manifest.num_classes, k_values=ev.k_values,
            tau=config.tau, epochs=config.epochs, batch_size=config.batch_size,
            seed=config.seed, eval_epochs=ev.epochs, metric=ev.metric,
            schedule=config.optimizer,
        )
    else:
        raise ConfigurationError(f"unknown evaluation mode {args.mode!r}")

    table = _write_results(out_dir, results)
    for result in results:
        print(f"{result.protocol}: {result.metric_name}={result.value:.4f}")
    print(f"results -> {table}")
    return 0


def _write_semisup_outputs(out_dir: Path, results: list[EvalResult], metric: str) -> None:
    full_supervised = next((r.value for r in results if r.protocol == "supervised_full"), None)
    curves: dict[str, dict[float, EvalResult]] = {}
    for result in results:
        if result.protocol == "supervised_full":
            continue
        curves.setdefault(result.protocol, {})[result.config_echo["fraction"]] = result
    fractions = sorted({f for c in curves.values() for f in c})
    path = out_dir / "semisup_curves.csv"
    names = sorted(curves)
    with path.open("w") as fh:
        header = ["fraction"]
        for name in names:
            header += [f"{name}_mean", f"{name}_ci_low", f"{name}_ci_high"]
        fh.write(",".join(header) + "\n")
        for fraction in fractions:
            row = [str(fraction)]
            for name in names:
                result = curves[name].get(fraction)
                if result is None:
                    row += ["", "", ""]
                else:
                    half = result.ci_half_width or 0.0
                    row += [str(result.value), str(result.value - half), str(result.value + half)]
            fh.write(",".join(row) + "\n")
    _plot_semisup(out_dir / "semisup.png", curves, fractions, metric, full_supervised)


def _plot_semisup(path: Path, curves, fractions, metric: str,
                  full_supervised: float | None = None) -> None:
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    labels = {
        "semi_supervised": "pre-trained (frozen)",
        "semi_supervised_supervised": "supervised",
        "semi_supervised_random": "random encoders",
    }
    fig, ax = plt.subplots(figsize=(6, 4))
    x = [100 * f for f in fractions]
    for name, by_fraction in sorted(curves.items()):
        means = [by_fraction[f].value for f in fractions if f in by_fraction]
        halves = [by_fraction[f].ci_half_width or 0.0 for f in fractions if f in by_fraction]
        ax.plot(x, means, marker="o", label=labels.get(name, name))
        ax.fill_between(
            x,
            [m - h for m, h in zip(means, halves)],
            [m + h for m, h in zip(means, halves)],
            alpha=0.2,
        )
    if full_supervised is not None:
        ax.axhline(full_supervised, linestyle="--", color="gray",
                   label="fully supervised (100%)")
    ax.set_xlabel("labeled fraction (%)")
    ax.set_ylabel(metric)
    ax.set_xscale("log")
    ax.legend()
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)


def cmd_export_embeddings(args) -> int:
    config = _load_experiment(args)
    manifest, samples = _load_prepared_dataset(config)
    if args.split != "all":
        train, test = make_split(samples, config.dataset.split_spec())
        samples = train if args.split == "train" else test
    encoders = _load_eval_encoders(config)
    out_dir = _resolve_out_dir(args.out, config)
    _echo_config(config, out_dir)
    written = export_embeddings(encoders, samples, out_dir)
    for path in written:
        print(f"wrote {path}")
    return 0


# ---------------------------------------------------------------------------
# Parser
# ---------------------------------------------------------------------------


def _add_common(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", help="experiment config file (YAML)")
    parser.add_argument("--seed", type=int, help="override the config seed")
    parser.add_argument("--epochs", type=int, help="override the config epoch count")
    parser.add_argument("--framework", help="override the config framework")
    parser.add_argument("--out", help="output directory (relative paths anchor at $MMHAR_OUTPUT_ROOT)")
    parser.add_argument("--set", action="append", metavar="KEY=VALUE",
                        help="override any config key by dotted path")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="mmhar",
        description="Self-supervised multimodal representation learning for activity recognition",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("generate-synthetic", help="write a synthetic multimodal dataset")
    p.add_argument("--out", required=True)
    p.add_argument("--name", default="synthetic")
    p.add_argument("--classes", type=int, default=6)
    p.add_argument("--per-class", type=int, default=40)
    p.add_argument("--timesteps", type=int, default=50)
    p.add_argument("--channels", type=int, default=6)
    p.add_argument("--joints", type=int, default=8)
    p.add_argument("--coords", type=int, default=2)
    p.add_argument("--noise", type=float, default=0.1)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--config", help=argparse.SUPPRESS)
    p.set_defaults(func=cmd_generate_synthetic)

    p = sub.add_parser("convert-dataset", help="convert a raw dataset to the canonical format")
    p.add_argument("--format", choices=("utd-mhad", "index-csv"), required=True)
    p.add_argument("--src", required=True, help="raw dataset directory or index CSV")
    p.add_argument("--out", required=True)
    p.add_argument("--name", default="converted")
    p.add_argument("--num-classes", type=int, default=27)
    p.add_argument("--seed", type=int, help=argparse.SUPPRESS)
    p.add_argument("--config", help=argparse.SUPPRESS)
    p.set_defaults(func=cmd_convert_dataset)

    p = sub.add_parser("pretrain-unimodal", help="two-view contrastive pre-training of one encoder")
    _add_common(p)
    p.set_defaults(func=cmd_pretrain_unimodal)

    p = sub.add_parser("pretrain-multimodal", help="cross-modal contrastive pre-training")
    _add_common(p)
    p.set_defaults(func=cmd_pretrain_multimodal)

    p = sub.add_parser("evaluate", aliases=["finetune"], help="run a downstream evaluation protocol")
    p.add_argument("--mode", choices=("linear", "retrieve", "semisup", "topk"), required=True)
    _add_common(p)
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("export-embeddings", help="dump frozen-encoder features for visualization")
    p.add_argument("--split", choices=("all", "train", "test"), default="all")
    _add_common(p)
    p.set_defaults(func=cmd_export_embeddings)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except KNOWN_ERRORS as exc:
        print(str(exc), file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
