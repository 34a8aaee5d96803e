"""Command-line entry point: ``slicesort <command> [--config FILE] [--set key=value ...]``.

Every command writes into a fresh timestamped run directory under
``$SLICESORT_RUNS_DIR`` (default ``./runs``) holding ``config.yaml``, the
fully resolved configuration. Passing that file back with ``--config``
repeats the run.

Exit codes: 0 success, 2 configuration error, 3 data error, 4 runtime failure.
"""
from __future__ import annotations

import argparse
import datetime as _dt
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np
import yaml

RUNS_ENV = "SLICESORT_RUNS_DIR"
COMMANDS = ("ingest", "phantom-gen", "pretrain", "finetune", "evaluate", "localize", "compare", "report")

log = logging.getLogger("slicesort")


class ConfigError(Exception):
    pass


class DataError(Exception):
    pass


# ---------------------------------------------------------------------------
# config handling


def parse_override(text: str) -> tuple[list, object]:
    if "=" not in text:
        raise ConfigError(f"--set expects key=value, got {text!r}")
    key, raw = text.split("=", 1)
    if not key:
        raise ConfigError(f"--set has an empty key in {text!r}")
    try:
        value = yaml.safe_load(raw) if raw != "" else ""
    except yaml.YAMLError as exc:
        raise ConfigError(f"--set {key}: cannot parse value {raw!r}: {exc}") from None
    return key.split("."), value


def apply_overrides(cfg: dict, overrides: list[str]) -> dict:
    for text in overrides:
        path, value = parse_override(text)
        node = cfg
        for part in path[:-1]:
            child = node.get(part)
            if child is None:
                child = node[part] = {}
            elif not isinstance(child, dict):
                raise ConfigError(f"--set {'.'.join(path)}: {part!r} is not a section")
            node = child
        node[path[-1]] = value
    return cfg


def load_config(path: str | None) -> dict:
    if path is None:
        return {}
    p = Path(path)
    if not p.exists():
        raise ConfigError(f"config file not found: {p}")
    try:
        data = yaml.safe_load(p.read_text()) or {}
    except yaml.YAMLError as exc:
        raise ConfigError(f"{p}: invalid YAML: {exc}") from None
    if not isinstance(data, dict):
        raise ConfigError(f"{p}: top level must be a mapping")
    return data


def _build(cls, section: dict, where: str):
    from .trainer import config_from_dict

    try:
        return config_from_dict(cls, section)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{where}: {exc}") from None


def _pop_io(cfg: dict, keys: dict) -> dict:
    """Remove command I/O keys from ``cfg``, filling defaults."""
    return {k: cfg.pop(k, default) for k, default in keys.items()}


def _path(value, what: str, must_exist: bool = True) -> Path:
    if value in (None, ""):
        raise ConfigError(f"{what} is required")
    p = Path(str(value)).expanduser().resolve()
    if must_exist and not p.exists():
        raise DataError(f"{what} not found: {p}")
    return p


def new_run_dir(command: str, root: str | None = None) -> Path:
    root = Path(root or os.environ.get(RUNS_ENV) or "runs")
    stamp = _dt.datetime.now().strftime("%Y%m%d-%H%M%S")
    base = root / f"{stamp}-{command}"
    run_dir, n = base, 1
    while run_dir.exists():
        n += 1
        run_dir = base.with_name(f"{base.name}-{n}")
    run_dir.mkdir(parents=True)
    return run_dir


def freeze(run_dir: Path, command: str, resolved: dict) -> None:
    text = yaml.safe_dump({"command": command, **resolved}, sort_keys=True)
    (run_dir / "config.yaml").write_text(text)


# ---------------------------------------------------------------------------
# dataset directories: <id>.raw/.json plus optional <id>_labels and <id>_foreground


def _dataset_ids(directory: Path) -> list[str]:
    ids = []
    for p in sorted(directory.glob("*.json")):
        stem = p.stem
        if stem.endswith(("_labels", "_foreground", "_uncertainty", "_mask")) or stem in ("manifest", "record"):
            continue
        ids.append(stem)
    if not ids:
        raise DataError(f"no volumes (*.raw + *.json) in {directory}")
    return ids


def load_dataset(directory: Path, with_labels: bool = False):
    from .volio import load_volume

    out = []
    for vid in _dataset_ids(directory):
        v = load_volume(directory / f"{vid}.json")
        if not with_labels:
            out.append(v)
            continue
        lab_path = directory / f"{vid}_labels.json"
        if not lab_path.exists():
            raise DataError(f"labels for {vid} not found: {lab_path}")
        labels = load_volume(lab_path)
        header = json.loads(lab_path.read_text())
        annotated = tuple(header.get("annotated", range(v.n_slices)))
        from .trainer import AnnotatedVolume

        out.append(AnnotatedVolume(v, labels, annotated))
    return out


def _foreground(directory: Path, vid: str):
    from .volio import load_volume

    p = directory / f"{vid}_foreground.json"
    return load_volume(p).data.astype(bool) if p.exists() else None


# ---------------------------------------------------------------------------
# commands


def cmd_ingest(cfg: dict, run_dir: Path) -> dict:
    from .volio import MEDAKA, MOSMED, load_volume, preprocess, save_volume

    io = _pop_io(cfg, {"inputs": None, "output": None, "preprocess": "none", "meta": {}})
    if cfg:
        raise ConfigError(f"ingest: unknown field(s) {', '.join(sorted(cfg))}")
    inputs = io["inputs"]
    if isinstance(inputs, str):
        inputs = [inputs]
    if not inputs:
        raise ConfigError("ingest: inputs is required")
    specs = {"none": None, "mosmed": MOSMED, "medaka": MEDAKA}
    if io["preprocess"] not in specs:
        raise ConfigError(f"ingest: preprocess must be one of {sorted(specs)}, got {io['preprocess']!r}")
    out = _path(io["output"], "output", must_exist=False) if io["output"] else run_dir / "data"
    paths = [_path(p, "input") for p in inputs]
    for p in paths:
        v = load_volume(p, io["meta"])
        if specs[io["preprocess"]] is not None:
            v = preprocess(v, specs[io["preprocess"]])
        save_volume(v, out / v.volume_id)
        log.info("ingested %s -> %s", p, out / v.volume_id)
    return {"inputs": [str(p) for p in paths], "output": str(out), "preprocess": io["preprocess"],
            "meta": io["meta"]}


def cmd_phantom_gen(cfg: dict, run_dir: Path) -> dict:
    from .phantom import LOCALIZATION_SPEC, Organ, PhantomSpec, generate
    from .volio import Volume, save_volume

    io = _pop_io(cfg, {"n": 32, "seed": 0, "output": None, "preset": "default", "spec": {}})
    if cfg:
        raise ConfigError(f"phantom-gen: unknown field(s) {', '.join(sorted(cfg))}")
    presets = {"default": PhantomSpec(), "localization": LOCALIZATION_SPEC}
    if io["preset"] not in presets:
        raise ConfigError(f"phantom-gen: preset must be one of {sorted(presets)}")
    base = {k: getattr(presets[io["preset"]], k) for k in PhantomSpec.__dataclass_fields__}
    overrides = dict(io["spec"] or {})
    if "organs" in overrides:
        try:
            overrides["organs"] = tuple(Organ(**{k: tuple(v) if isinstance(v, list) else v for k, v in o.items()})
                                        for o in overrides["organs"])
        except TypeError as exc:
            raise ConfigError(f"phantom-gen: spec.organs: {exc}") from None
    unknown = sorted(set(overrides) - set(base))
    if unknown:
        raise ConfigError(f"phantom-gen: spec: unknown field(s) {', '.join(unknown)}")
    base.update({k: tuple(v) if isinstance(v, list) else v for k, v in overrides.items()})
    try:
        spec = PhantomSpec(**base)
        n = int(io["n"])
        if n < 1:
            raise ValueError("n must be >= 1")
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"phantom-gen: {exc}") from None
    out = _path(io["output"], "output", must_exist=False) if io["output"] else run_dir / "data"
    streams = np.random.SeedSequence(int(io["seed"])).spawn(n)
    for i, s in enumerate(streams):
        vid = f"phantom_{i:03d}"
        v, labels, body = generate(spec, np.random.default_rng(s), volume_id=vid, with_body=True)
        save_volume(v, out / vid)
        save_volume(labels, out / f"{vid}_labels")
        save_volume(Volume(body.astype(np.uint8), 0, 1, f"{vid}_foreground", "uint8"), out / f"{vid}_foreground")
    spec_dict = json.loads(json.dumps(_asdict(spec)))
    return {"n": n, "seed": int(io["seed"]), "output": str(out), "preset": io["preset"], "spec": spec_dict}


def _asdict(obj):
    import dataclasses

    return dataclasses.asdict(obj)


def _plot_md(record, path: Path) -> None:
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    from .metrics import random_md_baseline
    from .trainer import smoothed

    md = record.series("md")
    fig, ax = plt.subplots(figsize=(6, 4))
    ax.plot(np.arange(1, md.size + 1), md, lw=0.5, alpha=0.4, label="per step")
    ax.plot(np.arange(1, md.size + 1), smoothed(md), lw=1.5, label="100-step mean")
    k = record.config["sampling"]["k"]
    ax.axhline(random_md_baseline(k), color="k", ls="--", lw=1, label=f"random ({random_md_baseline(k):.3f})")
    ax.set_xlabel("step")
    ax.set_ylabel("mean displacement")
    ax.legend()
    fig.tight_layout()
    fig.savefig(path, dpi=100)
    plt.close(fig)


def cmd_pretrain(cfg: dict, run_dir: Path) -> dict:
    from .trainer import PretrainConfig, config_to_dict, pretrain, smoothed

    io = _pop_io(cfg, {"data": None})
    pc = _build(PretrainConfig, cfg, "pretrain")
    data_dir = _path(io["data"], "data")
    volumes = load_dataset(data_dir)
    resolved = {"data": str(data_dir), **config_to_dict(pc)}
    freeze(run_dir, "pretrain", resolved)
    record = pretrain(volumes, pc, run_dir=run_dir, task=f"pretrain:{data_dir}")
    if pc.loss == "sorting" and pc.steps > 0:
        _plot_md(record, run_dir / "md_curve.png")
        log.info("final smoothed MD %.4f", smoothed(record.series("md"))[-1])
    return resolved


def cmd_finetune(cfg: dict, run_dir: Path) -> dict:
    from .trainer import FinetuneConfig, config_to_dict, finetune

    io = _pop_io(cfg, {"data": None, "n_classes": None})
    if cfg.get("encoder_init", "scratch") != "scratch":
        cfg["encoder_init"] = str(_path(cfg["encoder_init"], "encoder_init checkpoint"))
    fc = _build(FinetuneConfig, cfg, "finetune")
    data_dir = _path(io["data"], "data")
    dataset = load_dataset(data_dir, with_labels=True)
    resolved = {"data": str(data_dir), "n_classes": io["n_classes"], **config_to_dict(fc)}
    freeze(run_dir, "finetune", resolved)
    record = finetune(dataset, fc, n_classes=io["n_classes"], run_dir=run_dir)
    log.info("IoU %.4f ± %.4f over %d splits", record.iou_mean, record.iou_std, len(record.splits))
    return resolved


def cmd_evaluate(cfg: dict, run_dir: Path) -> dict:
    from .trainer import evaluate_sorting, model_from_checkpoint, segment_slices
    from .metrics import confusion_counts, iou_from_confusion, random_md_baseline

    io = _pop_io(cfg, {"data": None, "checkpoint": None, "batches": 200, "k": 16, "seed": 0})
    if cfg:
        raise ConfigError(f"evaluate: unknown field(s) {', '.join(sorted(cfg))}")
    data_dir = _path(io["data"], "data")
    ckpt = _path(io["checkpoint"], "checkpoint")
    resolved = dict(io, data=str(data_dir), checkpoint=str(ckpt))
    freeze(run_dir, "evaluate", resolved)
    model, manifest = model_from_checkpoint(ckpt)
    if manifest["head"] == "score_head":
        md = evaluate_sorting(model, load_dataset(data_dir), int(io["batches"]), int(io["k"]), int(io["seed"]))
        result = {"metric": "mean_displacement", "mean": float(md.mean()), "std": float(md.std()),
                  "batches": int(md.size), "random_baseline": random_md_baseline(int(io["k"]))}
    elif manifest["head"] == "segmentation_head":
        n = int(manifest["n_classes"])
        cm = np.zeros((n, n), dtype=np.int64)
        for d in load_dataset(data_dir, with_labels=True):
            pred = segment_slices(model, [d.volume.slice(s) for s in d.annotated])
            cm += confusion_counts(pred, np.stack([d.labels.slice(s) for s in d.annotated]), n)
        rep = iou_from_confusion(cm, range(1, n))
        result = {"metric": "iou", "mean_iou": rep.mean_iou, "per_class": {str(k): v for k, v in rep.per_class.items()}}
    else:
        raise ConfigError(f"evaluate: checkpoint head {manifest['head']!r} has no evaluation metric")
    (run_dir / "evaluation.json").write_text(json.dumps(result, indent=2))
    print(json.dumps(result))
    return resolved


def _projection_figure(volume, result, path: Path) -> None:
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt
    from matplotlib.patches import Rectangle

    data = np.moveaxis(volume.data, volume.ordering_axis, 0).astype(np.float32)
    unc = np.moveaxis(result.uncertainty, volume.ordering_axis, 0)
    hull = np.moveaxis(result.hull, volume.ordering_axis, 0)
    axes_order = [volume.ordering_axis] + [a for a in range(3) if a != volume.ordering_axis]
    (z0, z1), (y0, y1), (x0, x1) = (result.crop_box[a] for a in axes_order)
    fig, axes = plt.subplots(2, 2, figsize=(8, 6))
    for col, (axis, (r0, r1), (c0, c1)) in enumerate([(2, (z0, z1), (y0, y1)), (1, (z0, z1), (x0, x1))]):
        axes[0, col].imshow(data.max(axis=axis).T, cmap="gray", origin="lower", aspect="auto")
        axes[0, col].contour(hull.any(axis=axis).T.astype(float), levels=[0.5], colors="y", linewidths=0.8)
        axes[0, col].add_patch(Rectangle((r0 - 0.5, c0 - 0.5), r1 - r0, c1 - c0, fill=False, ec="r", lw=1))
        axes[1, col].imshow(unc.max(axis=axis).T, cmap="magma", origin="lower", aspect="auto")
        axes[0, col].set_title(f"max projection over axis {axis}")
    for ax in axes.ravel():
        ax.set_xlabel("slice")
    fig.suptitle(f"{volume.volume_id}: removed {result.removed_fraction:.1%}")
    fig.tight_layout()
    fig.savefig(path, dpi=90)
    plt.close(fig)


def cmd_localize(cfg: dict, run_dir: Path) -> dict:
    from .localize import LocalizationConfig, localize
    from .trainer import config_to_dict, model_from_checkpoint
    from .volio import Volume, save_volume

    io = _pop_io(cfg, {"data": None, "checkpoint": None, "figures": True})
    lc = _build(LocalizationConfig, cfg, "localize")
    data_dir = _path(io["data"], "data")
    ckpt = _path(io["checkpoint"], "checkpoint")
    resolved = {"data": str(data_dir), "checkpoint": str(ckpt), "figures": bool(io["figures"]),
                **config_to_dict(lc)}
    freeze(run_dir, "localize", resolved)
    model, _ = model_from_checkpoint(ckpt)
    volumes = load_dataset(data_dir)
    summary = []
    for v in volumes:
        res = localize(v, model, lc)
        vid = v.volume_id
        save_volume(Volume(res.uncertainty.astype(np.float32), v.ordering_axis, v.axis_direction,
                           f"{vid}_uncertainty", "float32"), run_dir / f"{vid}_uncertainty")
        save_volume(Volume(res.mask.astype(np.uint8), v.ordering_axis, v.axis_direction, f"{vid}_mask", "uint8"),
                    run_dir / f"{vid}_mask")
        entry = {"volume_id": vid, "crop_box": [list(b) for b in res.crop_box],
                 "removed_fraction": res.removed_fraction, "mask_voxels": int(res.mask.sum()),
                 "hull_voxels": int(res.hull.sum())}
        fg = _foreground(data_dir, vid)
        if fg is not None:
            entry["retained_foreground"] = float(res.crop(fg).sum() / max(1, fg.sum()))
        summary.append(entry)
        if io["figures"]:
            _projection_figure(v, res, run_dir / f"{vid}_projection.png")
    (run_dir / "crop_boxes.json").write_text(json.dumps(summary, indent=2))
    removed = float(np.mean([s["removed_fraction"] for s in summary]))
    log.info("mean removed fraction %.3f over %d volumes", removed, len(summary))
    return resolved


def _load_records(runs: list) -> list:
    from .trainer import RunRecord

    records = []
    for r in runs:
        p = _path(r, "run directory")
        if not (p / "record.json").exists():
            raise DataError(f"{p} holds no record.json (not a pretrain/finetune run)")
        records.append(RunRecord.load(p))
    return records


def cmd_compare(cfg: dict, run_dir: Path) -> dict:
    from .trainer import compare_runs

    io = _pop_io(cfg, {"runs": []})
    if cfg:
        raise ConfigError(f"compare: unknown field(s) {', '.join(sorted(cfg))}")
    if not io["runs"]:
        raise ConfigError("compare: give at least one run directory")
    resolved = {"runs": [str(_path(r, "run directory")) for r in io["runs"]]}
    freeze(run_dir, "compare", resolved)
    try:
        table = compare_runs(_load_records(resolved["runs"]))
    except ValueError as exc:
        raise DataError(f"compare: {exc}") from None
    (run_dir / "comparison.md").write_text(table.to_markdown())
    (run_dir / "comparison.csv").write_text(table.to_csv())
    print(table.to_markdown(), end="")
    return resolved


def cmd_report(cfg: dict, run_dir: Path) -> dict:
    """Plots and an aggregate table for finished runs, written to ``out`` (overwritten, so idempotent)."""
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    from .trainer import compare_runs, smoothed

    io = _pop_io(cfg, {"runs": [], "out": None})
    if cfg:
        raise ConfigError(f"report: unknown field(s) {', '.join(sorted(cfg))}")
    if not io["runs"]:
        raise ConfigError("report: give at least one run directory")
    runs = [str(_path(r, "run directory")) for r in io["runs"]]
    out = _path(io["out"], "out", must_exist=False) if io["out"] else run_dir
    out.mkdir(parents=True, exist_ok=True)
    resolved = {"runs": runs, "out": str(out)}
    freeze(run_dir, "report", resolved)
    records = _load_records(runs)

    pre = [(Path(p).name, r) for p, r in zip(runs, records) if r.kind == "pretrain" and r.series("md").size]
    if pre:
        fig, ax = plt.subplots(figsize=(6, 4))
        for name, r in pre:
            ax.plot(smoothed(r.series("md")), label=name)
        ax.set_xlabel("step")
        ax.set_ylabel("mean displacement (100-step mean)")
        ax.legend(fontsize=7)
        fig.tight_layout()
        fig.savefig(out / "md_vs_step.png", dpi=100)
        plt.close(fig)
    fine = [r for r in records if r.kind == "finetune"]
    if fine:
        groups = {}
        for r in fine:
            groups.setdefault(r.label, []).append((r.config["annotated_fraction"], r.iou_mean, r.iou_std))
        fig, ax = plt.subplots(figsize=(6, 4))
        for label, pts in sorted(groups.items()):
            pts.sort()
            f, m, s = map(np.array, zip(*pts))
            ax.errorbar(f, m, yerr=s, marker="o", capsize=3, label=label)
        ax.set_xscale("log")
        ax.set_xlabel("annotated fraction")
        ax.set_ylabel("IoU")
        ax.legend()
        fig.tight_layout()
        fig.savefig(out / "iou_vs_fraction.png", dpi=100)
        plt.close(fig)
    try:
        table = compare_runs(records)
    except ValueError as exc:
        raise DataError(f"report: {exc}") from None
    (out / "table.md").write_text(table.to_markdown())
    (out / "table.csv").write_text(table.to_csv())
    return resolved


HANDLERS = {
    "ingest": cmd_ingest,
    "phantom-gen": cmd_phantom_gen,
    "pretrain": cmd_pretrain,
    "finetune": cmd_finetune,
    "evaluate": cmd_evaluate,
    "localize": cmd_localize,
    "compare": cmd_compare,
    "report": cmd_report,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="slicesort", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", help="YAML config file")
        p.add_argument("--set", dest="overrides", action="append", default=[], metavar="KEY=VALUE",
                       help="override a config field (dotted keys for nested sections)")
        p.add_argument("--runs-root", help=f"root for run directories (default ${RUNS_ENV} or ./runs)")
        p.add_argument("-v", "--verbose", action="store_true")
        if name in ("compare", "report"):
            p.add_argument("runs", nargs="*", help="run directories")
    return parser


def run(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO,
                        format="%(levelname)s %(name)s: %(message)s")
    from .localize import ConfigurationError, EmptyMaskError
    from .sampler import InsufficientSlicesError
    from .trainer import CheckpointError
    from .volio import VolumeError

    run_dir = None
    try:
        cfg = load_config(args.config)
        cfg.pop("command", None)
        cfg = apply_overrides(cfg, args.overrides)
        if getattr(args, "runs", None):
            cfg["runs"] = list(cfg.get("runs") or []) + args.runs
        run_dir = new_run_dir(args.command, args.runs_root)
        log.info("run directory %s", run_dir)
        resolved = HANDLERS[args.command](cfg, run_dir)
        if not (run_dir / "config.yaml").exists():
            freeze(run_dir, args.command, resolved)
        return 0
    except (ConfigError, ConfigurationError) as exc:
        log.error("config error: %s", exc)
        status = 2
    except (DataError, VolumeError, InsufficientSlicesError, CheckpointError, EmptyMaskError,
            FileNotFoundError) as exc:
        log.error("data error: %s", exc)
        status = 3
    except Exception as exc:  # noqa: BLE001
        log.exception("runtime failure: %s", exc)
        status = 4
    if run_dir is not None and not any(run_dir.iterdir()):
        run_dir.rmdir()
    return status


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
