"""Pretraining and fine-tuning loops plus the bookkeeping around them.

Reproducibility: model initialisation and dropout draw from torch's global
generator seeded with ``cfg.seed``; volume choice, slice sampling and
augmentation draw from numpy generators spawned from the same seed. Wall-clock
timings are written to a separate stream so the metric stream itself is
bit-identical across re-runs on the same backend.
"""
from __future__ import annotations

import dataclasses
import hashlib
import json
import logging
import math
import time
import typing
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch

from .augment import apply as augment_slice, builtin_policy
from .losses import ContrastiveConfig, RankingLossConfig, margin_ranking_loss, nt_xent_loss
from .metrics import confusion_counts, iou_from_confusion, mean_displacement
from .models import EncoderSpec, build_model, to_tensor
from .sampler import InsufficientSlicesError, SamplingSpec, sample_batch
from .volio import Volume

log = logging.getLogger(__name__)

PRETRAIN_LOSSES = ("sorting", "simclr", "simclr_same_volume")
CHECKPOINT_VERSION = 1


class CheckpointError(RuntimeError):
    pass


# ---------------------------------------------------------------------------
# configs


@dataclass(frozen=True)
class PretrainConfig:
    encoder: EncoderSpec = EncoderSpec()
    loss: str = "sorting"
    ranking: RankingLossConfig = RankingLossConfig()
    contrastive: ContrastiveConfig = ContrastiveConfig()
    sampling: SamplingSpec = SamplingSpec()
    steps: int = 2000
    lr: float = 3e-4
    augmentation: str = "normal"
    seed: int = 0
    checkpoint_every: int = 0  # 0: final checkpoint only
    volume_choice: str = "uniform"  # or "thickness": proportional to slice count

    def __post_init__(self):
        if self.loss not in PRETRAIN_LOSSES:
            raise ValueError(f"loss must be one of {PRETRAIN_LOSSES}, got {self.loss!r}")
        if self.steps < 0:
            raise ValueError(f"steps must be >= 0, got {self.steps}")
        if not self.lr > 0:
            raise ValueError(f"lr must be positive, got {self.lr}")
        if self.volume_choice not in ("uniform", "thickness"):
            raise ValueError(f"unknown volume_choice {self.volume_choice!r}")
        if self.checkpoint_every < 0:
            raise ValueError("checkpoint_every must be >= 0")
        builtin_policy(self.augmentation)


@dataclass(frozen=True)
class FinetuneConfig:
    encoder: EncoderSpec = EncoderSpec()
    segmentation_head: str = "deeplab_like"
    encoder_init: str = "scratch"  # or a checkpoint path
    annotated_fraction: float = 1.0
    splits: int = 5
    train_fraction: float = 0.75
    epochs: int = 30
    batch_size: int = 16
    lr: float = 3e-4
    augmentation: str = "none"
    seed: int = 0
    iou_threshold: float | None = None  # epochs-to-threshold target, if any

    def __post_init__(self):
        if self.segmentation_head not in ("deeplab_like", "unet_like"):
            raise ValueError(f"unknown segmentation_head {self.segmentation_head!r}")
        if not 0.0 < self.annotated_fraction <= 1.0:
            raise ValueError(f"annotated_fraction must lie in (0, 1], got {self.annotated_fraction}")
        if self.splits < 1:
            raise ValueError(f"splits must be >= 1, got {self.splits}")
        if not 0.0 < self.train_fraction < 1.0:
            raise ValueError(f"train_fraction must lie in (0, 1), got {self.train_fraction}")
        if self.epochs < 1 or self.batch_size < 1:
            raise ValueError("epochs and batch_size must be >= 1")
        if not self.lr > 0:
            raise ValueError(f"lr must be positive, got {self.lr}")
        builtin_policy(self.augmentation)


def config_to_dict(cfg) -> dict:
    return json.loads(json.dumps(dataclasses.asdict(cfg)))


def config_from_dict(cls, data: dict):
    """Inverse of ``config_to_dict`` for the frozen config dataclasses; unknown keys are rejected."""
    data = dict(data or {})
    hints = typing.get_type_hints(cls)
    names = {f.name for f in dataclasses.fields(cls)}
    unknown = sorted(set(data) - names)
    if unknown:
        raise ValueError(f"{cls.__name__}: unknown field(s) {', '.join(unknown)}")
    kwargs = {}
    for name, value in data.items():
        hint = hints[name]
        if dataclasses.is_dataclass(hint) and isinstance(value, dict):
            value = config_from_dict(hint, value)
        elif isinstance(value, list):
            value = tuple(value)
        kwargs[name] = value
    return cls(**kwargs)


def config_hash(cfg) -> str:
    blob = json.dumps(config_to_dict(cfg) if dataclasses.is_dataclass(cfg) else cfg, sort_keys=True)
    return hashlib.sha256(blob.encode()).hexdigest()[:16]


# ---------------------------------------------------------------------------
# run records


@dataclass
class SplitResult:
    split: int
    train_ids: list
    test_ids: list
    n_train_slices: int
    iou_curve: list  # validation mean IoU after each epoch
    final_iou: float
    epochs_to_threshold: int | None


@dataclass
class RunRecord:
    kind: str  # "pretrain" or "finetune"
    config: dict
    task: str
    label: str
    metrics: list = field(default_factory=list)  # {"step", "name", "value"}
    timing: list = field(default_factory=list)  # {"step", "seconds"}
    checkpoints: list = field(default_factory=list)  # {"step", "path", "sha256"}
    splits: list = field(default_factory=list)
    skipped_volumes: list = field(default_factory=list)
    model: typing.Any = None

    def series(self, name: str) -> np.ndarray:
        return np.array([m["value"] for m in self.metrics if m["name"] == name])

    @property
    def iou_mean(self) -> float:
        return float(np.mean([s.final_iou for s in self.splits])) if self.splits else float("nan")

    @property
    def iou_std(self) -> float:
        return float(np.std([s.final_iou for s in self.splits])) if self.splits else float("nan")

    @property
    def throughput(self) -> float:
        """Batches per second from the median step time."""
        secs = [t["seconds"] for t in self.timing]
        return float(1.0 / np.median(secs)) if secs else float("nan")

    @property
    def activation_bytes(self) -> float:
        v = self.series("activation_bytes")
        return float(v.max()) if v.size else float("nan")

    def to_dict(self) -> dict:
        d = {k: getattr(self, k) for k in ("kind", "config", "task", "label", "checkpoints", "skipped_volumes")}
        d["splits"] = [dataclasses.asdict(s) for s in self.splits]
        d["summary"] = {"iou_mean": self.iou_mean, "iou_std": self.iou_std,
                        "throughput": self.throughput, "activation_bytes": self.activation_bytes}
        return d

    @classmethod
    def load(cls, run_dir: str | Path) -> "RunRecord":
        run_dir = Path(run_dir)
        d = json.loads((run_dir / "record.json").read_text())
        rec = cls(d["kind"], d["config"], d["task"], d["label"], checkpoints=d["checkpoints"],
                  skipped_volumes=d.get("skipped_volumes", []),
                  splits=[SplitResult(**s) for s in d["splits"]])
        rec.metrics = _read_jsonl(run_dir / "metrics.jsonl")
        rec.timing = _read_jsonl(run_dir / "timing.jsonl")
        return rec


def _read_jsonl(path: Path) -> list:
    if not path.exists():
        return []
    return [json.loads(line) for line in path.read_text().splitlines() if line.strip()]


class _Writer:
    """Appends metric/timing lines when a run directory is given."""

    def __init__(self, record: RunRecord, run_dir: Path | None):
        self.record = record
        self.run_dir = run_dir
        self._files = {}
        if run_dir is not None:
            run_dir.mkdir(parents=True, exist_ok=True)
            self._files = {"metrics": open(run_dir / "metrics.jsonl", "w"),
                           "timing": open(run_dir / "timing.jsonl", "w")}

    def metric(self, step: int, name: str, value: float):
        entry = {"step": int(step), "name": name, "value": float(value)}
        self.record.metrics.append(entry)
        if self._files:
            self._files["metrics"].write(json.dumps(entry) + "\n")

    def timing(self, step: int, seconds: float):
        entry = {"step": int(step), "seconds": float(seconds)}
        self.record.timing.append(entry)
        if self._files:
            self._files["timing"].write(json.dumps(entry) + "\n")

    def close(self):
        for f in self._files.values():
            f.close()
        if self.run_dir is not None:
            (self.run_dir / "record.json").write_text(json.dumps(self.record.to_dict(), indent=2))


# ---------------------------------------------------------------------------
# checkpoints


def save_checkpoint(model: torch.nn.Module, path: str | Path, manifest: dict) -> dict:
    """Write ``<path>.npz`` with every state tensor and ``<path>.json`` with the manifest.

    Returns the manifest, completed with the bundle's sha256.
    """
    path = Path(path).with_suffix(".npz")
    path.parent.mkdir(parents=True, exist_ok=True)
    state = {k: v.detach().cpu().numpy() for k, v in model.state_dict().items()}
    with open(path, "wb") as f:
        np.savez(f, **state)
    digest = hashlib.sha256(path.read_bytes()).hexdigest()
    manifest = dict(manifest, version=CHECKPOINT_VERSION, file=path.name, sha256=digest)
    path.with_suffix(".json").write_text(json.dumps(manifest, indent=2, sort_keys=True))
    return manifest


def load_checkpoint(path: str | Path) -> tuple[dict, dict]:
    """Return ``(state_dict, manifest)``; the bundle hash is verified."""
    path = Path(path)
    if path.suffix not in (".npz", ".json"):
        path = path.with_suffix(".npz")
    npz, meta = path.with_suffix(".npz"), path.with_suffix(".json")
    if not npz.exists() or not meta.exists():
        raise CheckpointError(f"checkpoint {npz} or its manifest {meta} is missing")
    manifest = json.loads(meta.read_text())
    digest = hashlib.sha256(npz.read_bytes()).hexdigest()
    if manifest.get("sha256") != digest:
        raise CheckpointError(f"{npz}: hash {digest[:12]} does not match manifest {str(manifest.get('sha256'))[:12]}")
    with np.load(npz) as z:
        state = {k: torch.from_numpy(z[k].copy()) for k in z.files}
    return state, manifest


def model_from_checkpoint(path: str | Path) -> tuple[torch.nn.Module, dict]:
    state, manifest = load_checkpoint(path)
    spec = config_from_dict(EncoderSpec, manifest["encoder"])
    model = build_model(spec, manifest["head"], n_classes=manifest.get("n_classes", 2),
                        segmentation_head=manifest.get("segmentation_head", "deeplab_like"),
                        projection_dim=manifest.get("projection_dim", 128))
    model.load_state_dict(state)
    return model, manifest


def transplant_encoder(state: dict, model: torch.nn.Module) -> None:
    """Copy ``encoder.*`` weights from a checkpoint state into ``model.encoder``.

    Raises ``CheckpointError`` naming every missing or mismatched tensor.
    """
    source = {k[len("encoder."):]: v for k, v in state.items() if k.startswith("encoder.")}
    target = model.encoder.state_dict()
    problems = []
    for name, tensor in target.items():
        if name not in source:
            problems.append(f"{name}: missing from checkpoint")
        elif tuple(source[name].shape) != tuple(tensor.shape):
            problems.append(f"{name}: checkpoint {tuple(source[name].shape)} vs model {tuple(tensor.shape)}")
    extra = sorted(set(source) - set(target))
    problems += [f"{name}: not present in model" for name in extra]
    if problems:
        raise CheckpointError("incompatible encoder checkpoint:\n  " + "\n  ".join(problems))
    model.encoder.load_state_dict(source)


# ---------------------------------------------------------------------------
# pretraining


class _SavedTensorMeter:
    """Counts bytes of tensors autograd keeps for the backward pass (activation memory)."""

    def __init__(self):
        self.total = 0
        self._seen = set()

    def pack(self, t):
        key = (t.untyped_storage().data_ptr(), t.storage_offset(), tuple(t.shape))
        if key not in self._seen:
            self._seen.add(key)
            self.total += t.numel() * t.element_size()
        return t

    def __enter__(self):
        self._ctx = torch.autograd.graph.saved_tensors_hooks(self.pack, lambda t: t)
        self._ctx.__enter__()
        return self

    def __exit__(self, *exc):
        self._ctx.__exit__(*exc)


def _usable_volumes(dataset, k: int) -> tuple[list, list]:
    usable, skipped = [], []
    for v in dataset:
        if v.n_slices < k:
            log.warning("skipping volume %s: %d slices < k=%d", v.volume_id, v.n_slices, k)
            skipped.append(v.volume_id)
        else:
            usable.append(v)
    return usable, skipped


def _seed_streams(seed: int, n: int) -> list:
    return [np.random.default_rng(s) for s in np.random.SeedSequence(seed).spawn(n)]


def _pretrain_head(cfg: PretrainConfig) -> str:
    return "score_head" if cfg.loss == "sorting" else "projection_head"


def _mixed_volume_slices(volumes, k: int, rng) -> list:
    """One slice from each of ``k`` draws over volumes, never the same (volume, index) twice."""
    chosen, out = set(), []
    while len(out) < k:
        vi = int(rng.integers(len(volumes)))
        si = int(rng.integers(volumes[vi].n_slices))
        if (vi, si) in chosen:
            continue
        chosen.add((vi, si))
        out.append(volumes[vi].slice(si))
    return out


def pretrain(dataset: list, cfg: PretrainConfig = PretrainConfig(), run_dir: str | Path | None = None,
             task: str = "pretrain") -> RunRecord:
    """Self-supervised pretraining on ``dataset`` (a list of Volumes)."""
    volumes, skipped = _usable_volumes(dataset, cfg.sampling.k)
    if not volumes:
        raise InsufficientSlicesError(f"no volume has at least k={cfg.sampling.k} slices")
    run_dir = Path(run_dir) if run_dir is not None else None
    torch.manual_seed(cfg.seed)
    model = build_model(cfg.encoder, _pretrain_head(cfg), projection_dim=cfg.contrastive.projection_dim)
    model.train()
    opt = torch.optim.Adam(model.parameters(), lr=cfg.lr)
    policy = builtin_policy(cfg.augmentation)
    pick_rng, sample_rng, aug_rng = _seed_streams(cfg.seed, 3)
    if cfg.volume_choice == "thickness":
        sizes = np.array([v.n_slices for v in volumes], dtype=np.float64)
        volume_p = sizes / sizes.sum()
    else:
        volume_p = None

    record = RunRecord("pretrain", config_to_dict(cfg), task, cfg.loss, skipped_volumes=skipped, model=model)
    writer = _Writer(record, run_dir)
    manifest = {"encoder": config_to_dict(cfg.encoder), "head": _pretrain_head(cfg), "loss": cfg.loss,
                "projection_dim": cfg.contrastive.projection_dim, "config_hash": config_hash(cfg)}

    def checkpoint(step):
        if run_dir is None:
            return
        m = save_checkpoint(model, run_dir / "checkpoints" / f"step_{step:07d}", dict(manifest, step=step))
        record.checkpoints.append({"step": step, "path": str(run_dir / "checkpoints" / m["file"]),
                                   "sha256": m["sha256"]})

    k = cfg.sampling.k
    try:
        for step in range(1, cfg.steps + 1):
            t0 = time.perf_counter()
            vol = volumes[int(pick_rng.choice(len(volumes), p=volume_p))]
            seen = model.encoder.images_seen
            with _SavedTensorMeter() as meter:
                if cfg.loss == "sorting":
                    batch = sample_batch(vol, cfg.sampling, sample_rng)
                    images = [augment_slice(policy, s, None, aug_rng)[0] for s in batch.slices]
                    scores = model(to_tensor(images))
                    loss = margin_ranking_loss(scores, batch.ranks, cfg.ranking)
                else:
                    if cfg.loss == "simclr_same_volume":
                        slices = sample_batch(vol, cfg.sampling, sample_rng).slices
                    else:
                        slices = _mixed_volume_slices(volumes, k, sample_rng)
                    views = [[augment_slice(policy, s, None, aug_rng)[0] for s in slices]
                             for _ in range(cfg.contrastive.views_per_image)]
                    emb = model(to_tensor([im for view in views for im in view]))
                    loss = nt_xent_loss(emb, cfg.contrastive)
            opt.zero_grad()
            loss.backward()
            opt.step()
            writer.timing(step, time.perf_counter() - t0)
            writer.metric(step, "loss", loss.item())
            if cfg.loss == "sorting":
                writer.metric(step, "md", mean_displacement(scores.detach().numpy(), batch.ranks).mean_displacement)
            writer.metric(step, "encoder_forwards", model.encoder.images_seen - seen)
            writer.metric(step, "activation_bytes", meter.total)
            if cfg.checkpoint_every and step % cfg.checkpoint_every == 0 and step != cfg.steps:
                checkpoint(step)
        checkpoint(cfg.steps)
    finally:
        writer.close()
    return record


@torch.no_grad()
def evaluate_sorting(model: torch.nn.Module, dataset: list, batches: int = 200, k: int = 16,
                     seed: int = 0) -> np.ndarray:
    """MD of un-augmented batches in eval mode; one value per batch."""
    volumes, _ = _usable_volumes(dataset, k)
    rng = np.random.default_rng(seed)
    spec = SamplingSpec(k=k)
    was_training = model.training
    model.eval()
    out = []
    try:
        for _ in range(batches):
            b = sample_batch(volumes[int(rng.integers(len(volumes)))], spec, rng)
            out.append(mean_displacement(model(to_tensor(b.slices)).numpy(), b.ranks).mean_displacement)
    finally:
        model.train(was_training)
    return np.array(out)


def smoothed(values, window: int = 100) -> np.ndarray:
    """Trailing moving average (shorter at the start)."""
    v = np.asarray(values, dtype=np.float64)
    c = np.concatenate([[0.0], np.cumsum(v)])
    idx = np.arange(1, v.size + 1)
    lo = np.maximum(0, idx - window)
    return (c[idx] - c[lo]) / (idx - lo)


# ---------------------------------------------------------------------------
# fine-tuning


@dataclass(frozen=True)
class AnnotatedVolume:
    volume: Volume
    labels: Volume
    annotated: tuple  # slice indices along the ordering axis that carry labels

    def __post_init__(self):
        if self.volume.shape != self.labels.shape:
            raise ValueError(f"{self.volume.volume_id}: labels shape {self.labels.shape} != {self.volume.shape}")

    @classmethod
    def fully_annotated(cls, volume: Volume, labels: Volume) -> "AnnotatedVolume":
        return cls(volume, labels, tuple(range(volume.n_slices)))


def subsample_annotations(annotated, fraction: float, rng: np.random.Generator) -> list:
    """Uniform random subset of ``max(1, round(fraction * n))`` annotated slices, in ascending order."""
    annotated = list(annotated)
    if not annotated:
        raise ValueError("annotation set is empty")
    if not 0.0 < fraction <= 1.0:
        raise ValueError(f"fraction must lie in (0, 1], got {fraction}")
    n = max(1, int(round(fraction * len(annotated))))
    if n >= len(annotated):
        return annotated
    pick = rng.choice(len(annotated), size=n, replace=False)
    return [annotated[i] for i in sorted(pick)]


def _split_indices(n: int, train_fraction: float, rng) -> tuple[list, list]:
    if n < 2:
        raise ValueError("fine-tuning needs at least two volumes for a train/test split")
    n_train = min(n - 1, max(1, int(round(train_fraction * n))))
    perm = rng.permutation(n)
    return sorted(perm[:n_train].tolist()), sorted(perm[n_train:].tolist())


@torch.no_grad()
def segment_slices(model, images: list, batch_size: int = 64) -> np.ndarray:
    model.eval()
    out = []
    for i in range(0, len(images), batch_size):
        out.append(model(to_tensor(images[i:i + batch_size])).argmax(dim=1).numpy())
    return np.concatenate(out)


def _evaluate(model, items, n_classes: int) -> float:
    cm = np.zeros((n_classes, n_classes), dtype=np.int64)
    for images, masks in items:
        cm += confusion_counts(segment_slices(model, images), np.stack(masks), n_classes)
    return iou_from_confusion(cm, range(1, n_classes)).mean_iou


def _finetune_task(dataset) -> str:
    shape = dataset[0].volume.shape
    ids = ",".join(sorted(d.volume.volume_id for d in dataset))
    return f"seg:{shape}:{hashlib.sha256(ids.encode()).hexdigest()[:12]}"


def finetune(dataset: list, cfg: FinetuneConfig = FinetuneConfig(), n_classes: int | None = None,
             run_dir: str | Path | None = None) -> RunRecord:
    """Train a segmentation model per split on sparse annotated slices and report held-out IoU.

    ``dataset`` is a list of ``AnnotatedVolume``. Classes ``1..n_classes-1``
    are scored; class 0 is background.
    """
    if n_classes is None:
        n_classes = int(max(int(d.labels.data.max()) for d in dataset)) + 1
    run_dir = Path(run_dir) if run_dir is not None else None
    state = label = None
    if cfg.encoder_init != "scratch":
        state, manifest = load_checkpoint(cfg.encoder_init)
        if manifest["encoder"] != config_to_dict(cfg.encoder):
            raise CheckpointError(f"checkpoint encoder {manifest['encoder']} does not match config "
                                  f"{config_to_dict(cfg.encoder)}")
        label = manifest.get("loss", "pretrained")
    label = label or "none"
    record = RunRecord("finetune", config_to_dict(cfg), _finetune_task(dataset), label)
    writer = _Writer(record, run_dir)
    policy = builtin_policy(cfg.augmentation)
    split_rngs = _seed_streams(cfg.seed, cfg.splits)
    step = 0
    try:
        for split, rng in enumerate(split_rngs):
            torch.manual_seed(cfg.seed * 1000 + split)
            train_idx, test_idx = _split_indices(len(dataset), cfg.train_fraction, rng)
            images, masks = [], []
            for i in train_idx:
                d = dataset[i]
                for s in subsample_annotations(d.annotated, cfg.annotated_fraction, rng):
                    images.append(d.volume.slice(s))
                    masks.append(d.labels.slice(s))
            test_items = []
            for i in test_idx:
                d = dataset[i]
                test_items.append(([d.volume.slice(s) for s in d.annotated], [d.labels.slice(s) for s in d.annotated]))

            model = build_model(cfg.encoder, "segmentation_head", n_classes=n_classes,
                                segmentation_head=cfg.segmentation_head)
            if state is not None:
                transplant_encoder(state, model)
            opt = torch.optim.Adam(model.parameters(), lr=cfg.lr)
            curve = []
            for epoch in range(1, cfg.epochs + 1):
                model.train()
                order = rng.permutation(len(images))
                t0 = time.perf_counter()
                for b in range(0, len(order), cfg.batch_size):
                    idx = order[b:b + cfg.batch_size]
                    if len(idx) < 2 and len(order) > 1:
                        continue  # batch norm needs more than one sample
                    pairs = [augment_slice(policy, images[i], masks[i], rng) for i in idx]
                    x = to_tensor([p[0] for p in pairs])
                    y = torch.from_numpy(np.stack([p[1] for p in pairs]).astype(np.int64))
                    loss = torch.nn.functional.cross_entropy(model(x), y)
                    opt.zero_grad()
                    loss.backward()
                    opt.step()
                    step += 1
                    writer.metric(step, "loss", loss.item())
                writer.timing(step, time.perf_counter() - t0)
                curve.append(_evaluate(model, test_items, n_classes))
                writer.metric(step, f"split{split}_val_iou", curve[-1])
            record.splits.append(SplitResult(
                split, [dataset[i].volume.volume_id for i in train_idx],
                [dataset[i].volume.volume_id for i in test_idx], len(images), curve, curve[-1],
                epochs_to_threshold(curve, cfg.iou_threshold) if cfg.iou_threshold is not None else None))
            record.model = model
            if run_dir is not None:
                m = save_checkpoint(model, run_dir / "checkpoints" / f"split_{split}", {
                    "encoder": config_to_dict(cfg.encoder), "head": "segmentation_head", "n_classes": n_classes,
                    "segmentation_head": cfg.segmentation_head, "split": split, "config_hash": config_hash(cfg)})
                record.checkpoints.append({"step": step, "path": str(run_dir / "checkpoints" / m["file"]),
                                           "sha256": m["sha256"]})
    finally:
        writer.close()
    return record


def epochs_to_threshold(curve, threshold: float) -> int | None:
    """First (1-based) epoch whose validation IoU reaches ``threshold``; None if never."""
    for epoch, value in enumerate(curve, start=1):
        if value >= threshold:
            return epoch
    return None


# ---------------------------------------------------------------------------
# comparison


@dataclass
class ComparisonTable:
    fractions: list
    rows: list  # one dict per record group: label, cells {fraction: (mean, std)}, deltas, ratios
    columns: list

    def to_markdown(self) -> str:
        lines = ["| " + " | ".join(self.columns) + " |", "|" + "---|" * len(self.columns)]
        for row in self.rows:
            lines.append("| " + " | ".join(_fmt(row.get(c)) for c in self.columns) + " |")
        return "\n".join(lines) + "\n"

    def to_csv(self) -> str:
        import csv
        import io

        buf = io.StringIO()
        w = csv.writer(buf)
        w.writerow(self.columns)
        for row in self.rows:
            w.writerow([_fmt(row.get(c)) for c in self.columns])
        return buf.getvalue()


def _fmt(value) -> str:
    if value is None:
        return ""
    if isinstance(value, tuple):
        return f"{value[0]:.3f} ± {value[1]:.3f}"
    if isinstance(value, float):
        return "nan" if math.isnan(value) else f"{value:.4g}"
    return str(value)


def compare_runs(records: list) -> ComparisonTable:
    """Tabulate fine-tuning IoU (mean ± std per method and fraction) and pretraining cost ratios.

    Deltas and ratios are relative to the first row. Rows come in record order;
    a repeated label gets a ``#n`` suffix.
    """
    if not records:
        raise ValueError("no records to compare")
    tasks = {(r.kind, r.task) for r in records}
    for kind in ("finetune", "pretrain"):
        kinds = {t for k, t in tasks if k == kind}
        if len(kinds) > 1:
            raise ValueError(f"records do not share the evaluation task: {sorted(kinds)}")

    rows, by_label = [], {}
    counts = {}
    for r in records:
        if r.kind == "finetune":
            frac = r.config["annotated_fraction"]
            key = r.label
            row = by_label.get(key)
            if row is None or frac in row["cells"]:
                counts[r.label] = counts.get(r.label, 0) + 1
                name = r.label if counts[r.label] == 1 else f"{r.label}#{counts[r.label]}"
                row = {"method": name, "cells": {}}
                by_label[key] = row
                rows.append(row)
            row["cells"][frac] = (r.iou_mean, r.iou_std)
        else:
            counts[("pre", r.label)] = counts.get(("pre", r.label), 0) + 1
            n = counts[("pre", r.label)]
            rows.append({"method": f"{r.label} (pretrain)" + ("" if n == 1 else f"#{n}"), "cells": {},
                         "throughput": r.throughput, "activation_bytes": r.activation_bytes})

    fractions = sorted({f for row in rows for f in row["cells"]})
    columns = ["method"] + [f"IoU@{f:g}" for f in fractions]
    ref = next((row for row in rows if row["cells"]), None)
    for row in rows:
        for f in fractions:
            row[f"IoU@{f:g}"] = row["cells"].get(f)
            if ref is not None and f in row["cells"] and f in ref["cells"]:
                row[f"Δ@{f:g}"] = row["cells"][f][0] - ref["cells"][f][0]
    if ref is not None:
        columns += [f"Δ@{f:g}" for f in fractions]
    pre = [row for row in rows if "throughput" in row]
    if pre:
        base = pre[0]
        for row in pre:
            row["speed_ratio"] = row["throughput"] / base["throughput"]
            row["memory_ratio"] = row["activation_bytes"] / base["activation_bytes"]
        columns += ["throughput", "speed_ratio", "activation_bytes", "memory_ratio"]
    return ComparisonTable(fractions, rows, columns)
