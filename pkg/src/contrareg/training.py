"""Optimization loops for the four training regimes.

All regimes share one skeleton: shuffled mini-batches, Adam with per-group
learning rates, exponential LR decay gated on a no-improvement counter, early
stopping on a validation criterion, and best-checkpoint tracking. The
criterion is the validation L2 loss for score-regression heads and the
absolute Spearman correlation of reference-distance scores for embedding
models (distances anti-correlate with quality, hence the absolute value).
"""

from __future__ import annotations

import csv
import dataclasses
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .autodiff import Parameter, Tensor, take_rows
from .data import LabeledSample
from .losses import (
    MarginSpec,
    batch_all_triplet_adaptive,
    batch_all_triplet_fixed,
    classification_triplet_loss,
    offline_hard_triplets,
)
from .model import EncoderConfig, QualityModel, ReferenceSet, nmr_scores
from .metrics import DegenerateDataError, spearman

__all__ = [
    "TrainConfig",
    "Adam",
    "EarlyStopState",
    "TrainingError",
    "TrainResult",
    "trim_frames",
    "train_triplet_encoder",
    "train_nr_head",
    "train_l2_baseline",
    "train_offline",
    "grid_search_l2",
    "write_run_dir",
]

LOSS_MODES = ("l2", "triplet_fixed", "triplet_adaptive", "offline_triplet")
TRIPLET_MODES = ("triplet_fixed", "triplet_adaptive", "offline_triplet")


class TrainingError(RuntimeError):
    def __init__(self, message: str, details: dict | None = None):
        super().__init__(message)
        self.details = details or {}


@dataclass
class TrainConfig:
    loss_mode: str = "triplet_adaptive"
    batch_size: int = 128
    lr_encoder: float = 1e-5
    lr_head: float = 1e-3
    decay_factor: float = 0.99
    decay_patience_epochs: int = 10
    early_stop_patience: int = 100
    max_epochs: int = 200
    seed: int = 0
    margin: MarginSpec = field(default_factory=MarginSpec)
    reduction: str = "mean_active"
    max_frames: int | None = None
    validation_layer: str = "projection"
    anchors_per_epoch: int = 200
    per_anchor: int = 10

    def __post_init__(self):
        if self.loss_mode not in LOSS_MODES:
            raise ValueError(f"unknown loss_mode {self.loss_mode!r}")
        if self.lr_encoder <= 0 or self.lr_head <= 0:
            raise ValueError("learning rates must be > 0")
        if not 0.0 < self.decay_factor <= 1.0:
            raise ValueError("decay_factor must be in (0, 1]")
        if self.loss_mode in TRIPLET_MODES and self.batch_size < 3:
            raise ValueError("triplet modes need batch_size >= 3")
        if self.batch_size < 1 or self.max_epochs < 1:
            raise ValueError("batch_size and max_epochs must be >= 1")
        if self.validation_layer not in ("projection", "encoder"):
            raise ValueError("validation_layer must be 'projection' or 'encoder'")


def trim_frames(x: np.ndarray, max_frames: int) -> np.ndarray:
    """Keep the first `max_frames` frames (training only; eval uses full length)."""
    if max_frames < 1:
        raise ValueError("max_frames must be >= 1")
    x = np.asarray(x)
    return x if x.shape[0] <= max_frames else x[:max_frames]


class Adam:
    """Adam with bias correction and a separate learning rate per group."""

    def __init__(self, groups: dict[str, tuple[list[Parameter], float]],
                 beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.groups = {name: (list(ps), float(lr)) for name, (ps, lr) in groups.items()}
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.t = 0
        self._m = {id(p): np.zeros_like(p.data) for ps, _ in self.groups.values() for p in ps}
        self._v = {id(p): np.zeros_like(p.data) for ps, _ in self.groups.values() for p in ps}

    @property
    def lrs(self) -> dict[str, float]:
        return {name: lr for name, (_, lr) in self.groups.items()}

    def scale_lrs(self, factor: float) -> None:
        self.groups = {name: (ps, lr * factor) for name, (ps, lr) in self.groups.items()}

    def step(self) -> None:
        self.t += 1
        b1c = 1.0 - self.beta1 ** self.t
        b2c = 1.0 - self.beta2 ** self.t
        for name, (params, lr) in self.groups.items():
            for p in params:
                g = p.grad
                if not np.all(np.isfinite(g)):
                    raise TrainingError(
                        f"non-finite gradient in parameter {p.name}",
                        {"parameter": p.name, "group": name, "step": self.t},
                    )
                m = self._m[id(p)]
                v = self._v[id(p)]
                m *= self.beta1
                m += (1.0 - self.beta1) * g
                v *= self.beta2
                v += (1.0 - self.beta2) * g * g
                p.data = p.data - lr * (m / b1c) / (np.sqrt(v / b2c) + self.eps)


@dataclass
class EarlyStopState:
    """Best-so-far tracking; training halts when the counter exceeds patience."""

    criterion_kind: str  # "validation_sc_nmr" | "validation_l2"
    best_criterion: float = -np.inf
    best_epoch: int = -1
    epochs_since_improve: int = 0

    def update(self, value: float, epoch: int) -> bool:
        # stored as higher-is-better; L2 losses are negated by the caller
        if value > self.best_criterion:
            self.best_criterion = value
            self.best_epoch = epoch
            self.epochs_since_improve = 0
            return True
        self.epochs_since_improve += 1
        return False


@dataclass
class EpochLog:
    epoch: int
    train_loss: float
    val_criterion: float
    lr_encoder: float
    lr_head: float
    active_triplet_fraction: float | None


@dataclass
class TrainResult:
    best_model: QualityModel
    final_model: QualityModel
    best_epoch: int
    best_criterion: float
    criterion_kind: str
    log: list[EpochLog]
    config: TrainConfig
    skipped_batches: int = 0
    stats: dict = field(default_factory=dict)

    def best_meta(self) -> dict:
        return {
            "seed": self.config.seed,
            "epoch": self.best_epoch,
            "loss_mode": self.config.loss_mode,
            "criterion_kind": self.criterion_kind,
            "best_criterion": self.best_criterion,
        }


def _features(samples: list[LabeledSample], max_frames: int | None) -> list[np.ndarray]:
    if max_frames is None:
        return [s.features for s in samples]
    return [trim_frames(s.features, max_frames) for s in samples]


def _labels(samples: list[LabeledSample]) -> np.ndarray:
    return np.array([s.mos for s in samples], dtype=np.float64)


def _check_loss_finite(value: float, batch_idx: np.ndarray, labels: np.ndarray) -> None:
    if not np.isfinite(value):
        raise TrainingError(
            "non-finite training loss",
            {"batch_indices": [int(i) for i in batch_idx],
             "batch_labels": [float(y) for y in labels]},
        )


def _val_sc_nmr(model: QualityModel, val_xs, val_y, ref_xs, layer: str) -> float:
    """|Spearman| between reference-distance scores and labels; 0 if degenerate."""
    refs = ReferenceSet.from_model(model, ref_xs, layer=layer)
    scores = nmr_scores(model, val_xs, refs)
    try:
        return abs(spearman(scores, val_y))
    except DegenerateDataError:
        return 0.0


def _val_l2(model: QualityModel, val_xs, val_y) -> float:
    pred = model.predict_mos_batch(val_xs, trainable=False).data[:, 0]
    return float(np.mean((pred - val_y) ** 2))


class _Loop:
    """Shared epoch skeleton: scheduling, early stopping, checkpoint tracking."""

    def __init__(self, model: QualityModel, optimizer: Adam, config: TrainConfig,
                 criterion_kind: str):
        self.model = model
        self.opt = optimizer
        self.config = config
        self.stop = EarlyStopState(criterion_kind=criterion_kind)
        self.log: list[EpochLog] = []
        self.best_state: dict | None = None
        self.skipped = 0

    def end_epoch(self, epoch: int, train_loss: float, criterion: float,
                  active_fraction: float | None) -> bool:
        """Record one epoch; returns True when training should stop."""
        improved = self.stop.update(criterion, epoch)
        if improved:
            self.best_state = self.model.state_dict()
        elif (self.stop.epochs_since_improve % self.config.decay_patience_epochs) == 0:
            self.opt.scale_lrs(self.config.decay_factor)
        lrs = self.opt.lrs
        self.log.append(EpochLog(
            epoch=epoch,
            train_loss=train_loss,
            val_criterion=criterion,
            lr_encoder=lrs.get("encoder", 0.0),
            lr_head=lrs.get("head", lrs.get("projection", 0.0)),
            active_triplet_fraction=active_fraction,
        ))
        return self.stop.epochs_since_improve > self.config.early_stop_patience

    def result(self, stats: dict | None = None) -> TrainResult:
        best = self.model.copy()
        if self.best_state is not None:
            best.load_state_dict(self.best_state)
        return TrainResult(
            best_model=best,
            final_model=self.model,
            best_epoch=self.stop.best_epoch,
            best_criterion=self.stop.best_criterion,
            criterion_kind=self.stop.criterion_kind,
            log=self.log,
            config=self.config,
            skipped_batches=self.skipped,
            stats=stats or {},
        )


def _seeds(root: int, n: int) -> list[int]:
    ss = np.random.SeedSequence(root)
    return [int(s.generate_state(1)[0]) for s in ss.spawn(n)]


def train_triplet_encoder(dataset: list[LabeledSample], val_set: list[LabeledSample],
                         refs: list[LabeledSample], config: TrainConfig,
                         model_config: EncoderConfig) -> TrainResult:
    """Contrastive pretraining of encoder + projection with a batch-all loss.

    Validation tracks |Spearman| between reference distances and labels on the
    validation set; the best checkpoint is the one maximizing it. Batches
    without a single valid triplet are skipped and counted.
    """
    if config.loss_mode not in ("triplet_fixed", "triplet_adaptive"):
        raise ValueError("config.loss_mode must be a batch-all triplet mode")
    if len(dataset) < config.batch_size:
        raise ValueError("dataset smaller than one batch")
    if not refs:
        raise ValueError("contrastive validation requires clean reference samples")
    model_config = dataclasses.replace(model_config, projection=True)
    init_seed, shuffle_seed = _seeds(config.seed, 2)
    model = QualityModel(model_config, seed=init_seed)
    opt = Adam({
        "encoder": (model.encoder_parameters(), config.lr_encoder),
        "projection": (model.projection_parameters(), config.lr_head),
    })
    loop = _Loop(model, opt, config, "validation_sc_nmr")

    loss_fn = (batch_all_triplet_fixed if config.loss_mode == "triplet_fixed"
               else batch_all_triplet_adaptive)
    spec = config.margin
    xs = _features(dataset, config.max_frames)
    ys = _labels(dataset)
    val_xs = [s.features for s in val_set]
    val_y = _labels(val_set)
    ref_xs = [s.features for s in refs]
    rng = np.random.default_rng(shuffle_seed)
    n_batches = max(len(dataset) // config.batch_size, 1)

    for epoch in range(config.max_epochs):
        perm = rng.permutation(len(dataset))
        losses, actives, valids = [], 0, 0
        for b in range(n_batches):
            idx = perm[b * config.batch_size:(b + 1) * config.batch_size]
            if idx.size < 3:
                continue
            model.zero_grads()
            h = model.encode_batch([xs[i] for i in idx])
            z = model.project_batch(h)
            out = loss_fn(z, ys[idx], spec=spec, reduction=config.reduction)
            if out.no_valid_triplets:
                loop.skipped += 1
                continue
            _check_loss_finite(out.value, idx, ys[idx])
            out.loss.backward()
            opt.step()
            losses.append(out.value)
            actives += out.active_triplets
            valids += out.valid_triplets
        criterion = _val_sc_nmr(model, val_xs, val_y, ref_xs, config.validation_layer)
        train_loss = float(np.mean(losses)) if losses else 0.0
        frac = actives / valids if valids else 0.0
        if loop.end_epoch(epoch, train_loss, criterion, frac):
            break
    return loop.result()


def train_nr_head(pretrained: QualityModel, dataset: list[LabeledSample],
                  val_set: list[LabeledSample], config: TrainConfig) -> TrainResult:
    """Fit the MOS head on frozen encoder representations with the L2 loss.

    The encoder never enters the recorded graph: its representations are
    precomputed once, and every step asserts encoder gradients stayed exactly
    zero. Validation criterion is the (negated) validation L2 loss.
    """
    model = pretrained.copy()
    head_seed, shuffle_seed = _seeds(config.seed, 2)
    model.add_mos_head(seed=head_seed)
    encoder_before = {p.name: p.data.copy() for p in model.encoder_parameters()}

    h_train = model.encode_batch(_features(dataset, config.max_frames), trainable=False).data
    y_train = _labels(dataset)
    val_xs = [s.features for s in val_set]
    val_y = _labels(val_set)

    opt = Adam({"head": (model.head_parameters(), config.lr_head)})
    loop = _Loop(model, opt, config, "validation_l2")
    rng = np.random.default_rng(shuffle_seed)
    n = len(dataset)
    bs = min(config.batch_size, n)
    n_batches = max(n // bs, 1)

    for epoch in range(config.max_epochs):
        perm = rng.permutation(n)
        losses = []
        for b in range(n_batches):
            idx = perm[b * bs:(b + 1) * bs]
            model.zero_grads()
            pred = model.head_from_repr(Tensor(h_train[idx]))
            err = pred - y_train[idx][:, None]
            loss = (err * err).sum() * (1.0 / idx.size)
            _check_loss_finite(loss.item(), idx, y_train[idx])
            loss.backward()
            for p in model.encoder_parameters():
                if np.any(p.grad != 0.0):
                    raise TrainingError(f"frozen encoder received gradient in {p.name}")
            opt.step()
            losses.append(loss.item())
        val_loss = _val_l2(model, val_xs, val_y)
        if loop.end_epoch(epoch, float(np.mean(losses)), -val_loss, None):
            break

    for p in model.encoder_parameters():
        if not np.array_equal(p.data, encoder_before[p.name]):
            raise TrainingError(f"frozen encoder parameter changed: {p.name}")
    return loop.result()


def train_l2_baseline(dataset: list[LabeledSample], val_set: list[LabeledSample],
                      config: TrainConfig, model_config: EncoderConfig) -> TrainResult:
    """End-to-end regression: encoder + MOS head minimize mean squared error."""
    if config.loss_mode != "l2":
        raise ValueError("config.loss_mode must be 'l2'")
    model_config = dataclasses.replace(model_config, projection=False, mos_head=True)
    init_seed, shuffle_seed = _seeds(config.seed, 2)
    model = QualityModel(model_config, seed=init_seed)
    opt = Adam({
        "encoder": (model.encoder_parameters(), config.lr_encoder),
        "head": (model.head_parameters(), config.lr_head),
    })
    loop = _Loop(model, opt, config, "validation_l2")

    xs = _features(dataset, config.max_frames)
    ys = _labels(dataset)
    val_xs = [s.features for s in val_set]
    val_y = _labels(val_set)
    rng = np.random.default_rng(shuffle_seed)
    n = len(dataset)
    bs = min(config.batch_size, n)
    n_batches = max(n // bs, 1)

    for epoch in range(config.max_epochs):
        perm = rng.permutation(n)
        losses = []
        for b in range(n_batches):
            idx = perm[b * bs:(b + 1) * bs]
            model.zero_grads()
            pred = model.predict_mos_batch([xs[i] for i in idx])
            err = pred - ys[idx][:, None]
            loss = (err * err).sum() * (1.0 / idx.size)
            _check_loss_finite(loss.item(), idx, ys[idx])
            loss.backward()
            opt.step()
            losses.append(loss.item())
        val_loss = _val_l2(model, val_xs, val_y)
        if loop.end_epoch(epoch, float(np.mean(losses)), -val_loss, None):
            break
    return loop.result()


def train_offline(dataset: list[LabeledSample], val_set: list[LabeledSample],
                  refs: list[LabeledSample], config: TrainConfig,
                  model_config: EncoderConfig) -> TrainResult:
    """Embedding training on a precomputed hard-triplet list.

    The triplet list is built exactly once before the first epoch; each step
    embeds the samples referenced by a mini-batch of stored triplets and
    applies the squared-norm hinge loss with the fixed margin. Validation is
    the same reference-distance criterion as the batch-all modes.
    """
    if config.loss_mode != "offline_triplet":
        raise ValueError("config.loss_mode must be 'offline_triplet'")
    if not refs:
        raise ValueError("contrastive validation requires clean reference samples")
    model_config = dataclasses.replace(model_config, projection=True)
    init_seed, shuffle_seed, sampler_seed = _seeds(config.seed, 3)
    model = QualityModel(model_config, seed=init_seed)
    opt = Adam({
        "encoder": (model.encoder_parameters(), config.lr_encoder),
        "projection": (model.projection_parameters(), config.lr_head),
    })
    loop = _Loop(model, opt, config, "validation_sc_nmr")

    ys = _labels(dataset)
    triplets = np.array(
        offline_hard_triplets(ys, config.anchors_per_epoch, config.per_anchor,
                              seed=sampler_seed),
        dtype=np.int64,
    )
    triplet_builds = 1
    if triplets.size == 0:
        raise TrainingError("offline sampler produced no triplets")

    xs = _features(dataset, config.max_frames)
    val_xs = [s.features for s in val_set]
    val_y = _labels(val_set)
    ref_xs = [s.features for s in refs]
    rng = np.random.default_rng(shuffle_seed)
    m = float(config.margin.m)
    bs = min(config.batch_size, len(triplets))
    n_batches = max(len(triplets) // bs, 1)

    for epoch in range(config.max_epochs):
        perm = rng.permutation(len(triplets))
        losses = []
        for b in range(n_batches):
            batch = triplets[perm[b * bs:(b + 1) * bs]]
            uniq, inv = np.unique(batch.reshape(-1), return_inverse=True)
            inv = inv.reshape(batch.shape)
            model.zero_grads()
            h = model.encode_batch([xs[i] for i in uniq])
            z = model.project_batch(h)
            loss = classification_triplet_loss(
                take_rows(z, inv[:, 0]), take_rows(z, inv[:, 1]), take_rows(z, inv[:, 2]), m=m
            ) * (1.0 / batch.shape[0])
            _check_loss_finite(loss.item(), batch[:, 0], ys[batch[:, 0]])
            loss.backward()
            opt.step()
            losses.append(loss.item())
        criterion = _val_sc_nmr(model, val_xs, val_y, ref_xs, config.validation_layer)
        if loop.end_epoch(epoch, float(np.mean(losses)), criterion, None):
            break
    return loop.result(stats={"triplet_builds": triplet_builds,
                              "n_triplets": int(len(triplets))})


@dataclass
class GridCell:
    batch_size: int
    lr: float
    val_loss: float
    seed: int


@dataclass
class GridSearchResult:
    cells: list[GridCell]

    @property
    def best(self) -> GridCell:
        return min(self.cells, key=lambda c: (c.val_loss, c.batch_size, c.lr))

    def to_dict(self) -> dict:
        return {
            "cells": [dataclasses.asdict(c) for c in self.cells],
            "best": dataclasses.asdict(self.best),
        }


def grid_search_l2(dataset, val_set, batch_sizes, learning_rates,
                   config: TrainConfig, model_config: EncoderConfig) -> GridSearchResult:
    """Train one L2 model per (batch size, learning rate) cell.

    Cell seeds derive from the root seed by cell index, so a 1x1 grid
    reproduces a direct `train_l2_baseline` call with the same config.
    """
    cells = []
    grid = [(int(b), float(lr)) for b in batch_sizes for lr in learning_rates]
    if not grid:
        raise ValueError("empty grid")
    for i, (bs, lr) in enumerate(grid):
        cell_config = dataclasses.replace(
            config, loss_mode="l2", batch_size=bs, lr_encoder=lr, lr_head=lr,
            seed=config.seed + i,
        )
        result = train_l2_baseline(dataset, val_set, cell_config, model_config)
        cells.append(GridCell(bs, lr, -result.best_criterion, cell_config.seed))
    return GridSearchResult(cells)


# -- run directory -------------------------------------------------------------

METRICS_HEADER = ("epoch", "train_loss", "val_criterion", "lr_encoder", "lr_head",
                  "active_triplet_fraction")


def write_run_dir(out_dir: str | Path, config_snapshot: dict, result: TrainResult,
                  force: bool = False) -> Path:
    """Write config snapshot, per-epoch metrics CSV and both checkpoints."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    expected = ["config.json", "metrics.csv", "best_checkpoint.json", "final_checkpoint.json"]
    clashes = [p for p in expected if (out_dir / p).exists()]
    if clashes and not force:
        raise FileExistsError(f"{out_dir} already contains {clashes}; use force to overwrite")

    (out_dir / "config.json").write_text(json.dumps(config_snapshot, sort_keys=True, indent=1))
    with (out_dir / "metrics.csv").open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(METRICS_HEADER)
        for row in result.log:
            writer.writerow([
                row.epoch,
                repr(row.train_loss),
                repr(row.val_criterion),
                repr(row.lr_encoder),
                repr(row.lr_head),
                "" if row.active_triplet_fraction is None else repr(row.active_triplet_fraction),
            ])
    result.best_model.save(out_dir / "best_checkpoint.json", meta=result.best_meta())
    final_meta = dict(result.best_meta())
    final_meta["epoch"] = result.log[-1].epoch if result.log else -1
    result.final_model.save(out_dir / "final_checkpoint.json", meta=final_meta)
    return out_dir
