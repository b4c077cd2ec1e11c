"""Command-line entry point: gen-data, train, eval, bootstrap, diagnose, bench.

Every command resolves its configuration from an optional JSON config file
plus overriding flags, snapshots the resolved configuration into its output
directory, and derives all randomness from one root seed. Outputs are
byte-deterministic given (config, seed); existing outputs are never
overwritten without --force. Errors are emitted as JSON on stderr.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import json
import statistics
import sys
import time
from pathlib import Path

import numpy as np

from .data import (
    FAMILIES,
    ManifestError,
    SyntheticSpec,
    generate_corpus,
    load_manifest,
    split_map,
    write_corpus,
)
from .losses import MarginSpec, batch_all_triplet_adaptive, batch_all_triplet_fixed
from .metrics import (
    DegenerateDataError,
    bootstrap_compare,
    diagnose_embeddings,
    pearson,
    rmse_mapped,
    spearman,
    to_json,
)
from .model import EncoderConfig, QualityModel, ReferenceSet, nmr_scores
from .training import (
    Adam,
    TrainConfig,
    TrainingError,
    train_l2_baseline,
    train_nr_head,
    train_offline,
    train_triplet_encoder,
    write_run_dir,
)

LOSS_CHOICES = ("l2", "triplet_fixed", "triplet_adaptive", "offline_triplet")


class CliError(Exception):
    def __init__(self, message: str, details: dict | None = None):
        super().__init__(message)
        self.details = details or {}


# -- config resolution ---------------------------------------------------------

def _load_config_file(path: str | None) -> dict:
    if not path:
        return {}
    p = Path(path)
    if not p.exists():
        raise CliError(f"config file not found: {path}")
    try:
        cfg = json.loads(p.read_text())
    except json.JSONDecodeError as exc:
        raise CliError(f"config file is not valid JSON: {path}", {"parse": str(exc)})
    if not isinstance(cfg, dict):
        raise CliError(f"config file must hold a JSON object: {path}")
    return cfg


def _resolve(ns: argparse.Namespace, defaults: dict) -> dict:
    """Merge flag values over config-file values over defaults."""
    file_cfg = _load_config_file(getattr(ns, "config", None))
    unknown = set(file_cfg) - set(defaults)
    if unknown:
        raise CliError(f"unknown config keys: {sorted(unknown)}")
    out = {}
    for key, default in defaults.items():
        flag = getattr(ns, key, None)
        if flag is not None:
            out[key] = flag
        elif key in file_cfg:
            out[key] = file_cfg[key]
        else:
            out[key] = default
    return out


def _parse_dims(text) -> tuple[int, ...]:
    if isinstance(text, (list, tuple)):
        return tuple(int(v) for v in text)
    try:
        return tuple(int(tok) for tok in str(text).split(",") if tok.strip())
    except ValueError:
        raise CliError(f"bad dimension list: {text!r}") from None


def _ensure_fresh(paths: list[Path], force: bool) -> None:
    clashes = [str(p) for p in paths if p.exists()]
    if clashes and not force:
        raise CliError("refusing to overwrite existing outputs (use --force)",
                       {"existing": clashes})


def _write_json(path: Path, obj: dict) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(obj, sort_keys=True, indent=1))


# -- gen-data -------------------------------------------------------------------

GEN_DEFAULTS = dict(
    out="corpus", families=5, samples_per_family=400, frames=16, input_dim=12,
    holdout="", mos_noise_sd=0.15, refs=50, val_fraction=0.2, test_fraction=0.15,
    seed=0, force=False,
)


def cmd_gen_data(ns: argparse.Namespace) -> int:
    cfg = _resolve(ns, GEN_DEFAULTS)
    holdout = tuple(tok for tok in str(cfg["holdout"]).split(",") if tok.strip())
    try:
        spec = SyntheticSpec(
            n_families=int(cfg["families"]),
            samples_per_family=int(cfg["samples_per_family"]),
            frames=int(cfg["frames"]),
            input_dim=int(cfg["input_dim"]),
            seed=int(cfg["seed"]),
            holdout_families=holdout,
            mos_noise_sd=float(cfg["mos_noise_sd"]),
            n_references=int(cfg["refs"]),
            val_fraction=float(cfg["val_fraction"]),
            test_fraction=float(cfg["test_fraction"]),
        )
    except ValueError as exc:
        raise CliError(f"invalid corpus spec: {exc}")
    out = Path(cfg["out"])
    _ensure_fresh([out / "manifest.csv", out / "config.json"], cfg["force"])
    samples = generate_corpus(spec)
    manifest = write_corpus(samples, out)
    _write_json(out / "config.json", {"command": "gen-data", **cfg})

    counts: dict[str, dict[str, int]] = {}
    for s in samples:
        counts.setdefault(s.degradation, {})
        counts[s.degradation][s.split] = counts[s.degradation].get(s.split, 0) + 1
    print(f"wrote {manifest} ({len(samples)} samples)")
    for family in sorted(counts):
        parts = ", ".join(f"{k}={v}" for k, v in sorted(counts[family].items()))
        print(f"  {family}: {parts}")
    return 0


# -- train ----------------------------------------------------------------------

TRAIN_DEFAULTS = dict(
    manifest="corpus/manifest.csv", out="run", loss="triplet_adaptive", nr=False,
    hidden_dims="32,32", embed_dim=16, batch_size=None, lr_encoder=1e-3, lr_head=1e-3,
    decay_factor=0.99, decay_patience_epochs=10, early_stop_patience=100,
    max_epochs=200, margin=0.5, kappa=4.0, sign_mode="intuitive",
    reduction="mean_active", max_frames=0, validation_layer="projection",
    anchors_per_epoch=200, per_anchor=10, head_max_epochs=0, seed=0, force=False,
)


def _load_splits(manifest_path: str):
    try:
        samples = load_manifest(manifest_path)
    except ManifestError as exc:
        raise CliError(str(exc), {"errors": exc.errors})
    return samples, split_map(samples)


def cmd_train(ns: argparse.Namespace) -> int:
    cfg = _resolve(ns, TRAIN_DEFAULTS)
    if cfg["loss"] not in LOSS_CHOICES:
        raise CliError(f"unknown loss {cfg['loss']!r}; choices: {LOSS_CHOICES}")
    samples, splits = _load_splits(cfg["manifest"])
    train, val, refs = splits["train"], splits["val"], splits["ref"]
    if not train:
        raise CliError("manifest has no train split")
    if not val:
        raise CliError("manifest has no val split (needed for early stopping)")
    if cfg["loss"] != "l2" and not refs:
        raise CliError("manifest has no ref split (clean references needed for validation)")

    # the contrastive default batch is 128; the regression baseline default is 64
    batch = int(cfg["batch_size"]) if cfg["batch_size"] else (64 if cfg["loss"] == "l2" else 128)
    margin_mode = "adaptive" if cfg["loss"] == "triplet_adaptive" else "fixed"
    try:
        config = TrainConfig(
            loss_mode=cfg["loss"],
            batch_size=min(batch, len(train)),
            lr_encoder=float(cfg["lr_encoder"]),
            lr_head=float(cfg["lr_head"]),
            decay_factor=float(cfg["decay_factor"]),
            decay_patience_epochs=int(cfg["decay_patience_epochs"]),
            early_stop_patience=int(cfg["early_stop_patience"]),
            max_epochs=int(cfg["max_epochs"]),
            seed=int(cfg["seed"]),
            margin=MarginSpec(mode=margin_mode, m=float(cfg["margin"]),
                              kappa=float(cfg["kappa"]), sign_mode=cfg["sign_mode"]),
            reduction=cfg["reduction"],
            max_frames=int(cfg["max_frames"]) or None,
            validation_layer=cfg["validation_layer"],
            anchors_per_epoch=int(cfg["anchors_per_epoch"]),
            per_anchor=int(cfg["per_anchor"]),
        )
        enc_cfg = EncoderConfig(
            input_dim=train[0].features.shape[1],
            hidden_dims=_parse_dims(cfg["hidden_dims"]),
            embed_dim=int(cfg["embed_dim"]),
        )
    except ValueError as exc:
        raise CliError(f"invalid training config: {exc}")

    out = Path(cfg["out"])
    snapshot = {"command": "train", **cfg, "resolved_batch_size": config.batch_size,
                "input_dim": enc_cfg.input_dim}
    try:
        if cfg["loss"] == "l2":
            _ensure_fresh([out / "config.json"], cfg["force"])
            result = train_l2_baseline(train, val, config, enc_cfg)
            write_run_dir(out, snapshot, result, force=cfg["force"])
            print(f"l2 run: best epoch {result.best_epoch}, "
                  f"val_loss {-result.best_criterion:.4f} -> {out}")
        else:
            stage_dir = out / "pretrain" if cfg["nr"] else out
            _ensure_fresh([stage_dir / "config.json"], cfg["force"])
            if cfg["loss"] == "offline_triplet":
                result = train_offline(train, val, refs, config, enc_cfg)
            else:
                result = train_triplet_encoder(train, val, refs, config, enc_cfg)
            write_run_dir(stage_dir, snapshot, result, force=cfg["force"])
            print(f"{cfg['loss']} run: best epoch {result.best_epoch}, "
                  f"val |SC| {result.best_criterion:.4f} -> {stage_dir}")
            if cfg["nr"]:
                head_config = dataclasses.replace(
                    config, max_epochs=int(cfg["head_max_epochs"]) or config.max_epochs
                )
                head = train_nr_head(result.best_model, train, val, head_config)
                write_run_dir(out / "head", {**snapshot, "stage": "head"}, head,
                              force=cfg["force"])
                print(f"head run: best epoch {head.best_epoch}, "
                      f"val_loss {-head.best_criterion:.4f} -> {out / 'head'}")
    except TrainingError as exc:
        if exc.details:
            _write_json(out / "failed_batch.json", exc.details)
        raise CliError(f"training aborted: {exc}", exc.details)
    return 0


# -- eval -------------------------------------------------------------------------

EVAL_DEFAULTS = dict(
    checkpoint="run/best_checkpoint.json", manifest="corpus/manifest.csv",
    mode="nr", split="test", layer="projection", out="eval", seed=0, force=False,
)


def _family_breakdown(samples, values, with_rmse: bool) -> dict:
    rows = {}
    families = sorted({s.degradation for s in samples})
    for family in families:
        idx = [i for i, s in enumerate(samples) if s.degradation == family]
        mos = np.array([samples[i].mos for i in idx])
        vals = np.array([values[i] for i in idx])
        entry: dict = {"n": len(idx)}
        try:
            entry["pc"] = pearson(vals, mos)
            entry["sc"] = spearman(vals, mos)
            if with_rmse:
                fit = rmse_mapped(vals, mos)
                entry["rmse_mapped"] = fit.rmse
        except (DegenerateDataError, ValueError) as exc:
            entry["error"] = str(exc)
        rows[family] = entry
    return rows


def cmd_eval(ns: argparse.Namespace) -> int:
    cfg = _resolve(ns, EVAL_DEFAULTS)
    model, meta = _load_checkpoint(cfg["checkpoint"])
    samples, splits = _load_splits(cfg["manifest"])
    target = splits.get(cfg["split"], [])
    if len(target) < 2:
        raise CliError(f"split {cfg['split']!r} has {len(target)} samples; need >= 2")
    out = Path(cfg["out"])
    _ensure_fresh([out / "report.json", out / "predictions.csv"], cfg["force"])

    xs = [s.features for s in target]
    mos = np.array([s.mos for s in target])
    if cfg["mode"] == "nr":
        if model.head_w is None:
            raise CliError("checkpoint has no MOS head; NR evaluation impossible "
                           "(train with --loss l2 or --nr)")
        values = model.predict_mos_batch(xs, trainable=False).data[:, 0]
        fit = rmse_mapped(values, mos)
        overall = {
            "pc": pearson(values, mos),
            "sc": spearman(values, mos),
            "rmse_mapped": fit.rmse,
            "mapping": [fit.slope, fit.intercept],
            "n": len(target),
        }
        breakdown = _family_breakdown(target, values, with_rmse=True)
    elif cfg["mode"] == "nmr":
        refs_samples = splits["ref"]
        if not refs_samples:
            raise CliError("manifest has no ref split; NMR evaluation needs references")
        refs = ReferenceSet.from_model(model, [s.features for s in refs_samples],
                                       layer=cfg["layer"])
        values = nmr_scores(model, xs, refs)
        pc = pearson(values, mos)
        sc = spearman(values, mos)
        # distances anti-correlate with quality; magnitudes reported alongside
        overall = {"pc": pc, "sc": sc, "abs_pc": abs(pc), "abs_sc": abs(sc),
                   "layer": cfg["layer"], "n_refs": refs.count, "n": len(target)}
        breakdown = _family_breakdown(target, values, with_rmse=False)
    else:
        raise CliError(f"unknown mode {cfg['mode']!r}; choices: nr, nmr")

    report = {
        "command": "eval",
        "mode": cfg["mode"],
        "split": cfg["split"],
        "checkpoint_meta": meta,
        "overall": overall,
        "per_family": breakdown,
    }
    _write_json(out / "report.json", report)
    with (out / "predictions.csv").open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["id", "mos", "value"])
        for s, v in zip(target, values):
            writer.writerow([s.id, repr(float(s.mos)), repr(float(v))])
    print(f"{cfg['mode']} eval on {cfg['split']}: "
          + ", ".join(f"{k}={v:.4f}" for k, v in overall.items()
                      if isinstance(v, float)))
    print(f"-> {out / 'report.json'}")
    return 0


def _load_checkpoint(path: str) -> tuple[QualityModel, dict]:
    p = Path(path)
    if not p.exists():
        raise CliError(f"checkpoint not found: {path}")
    try:
        return QualityModel.load(p)
    except (ValueError, KeyError, json.JSONDecodeError) as exc:
        raise CliError(f"unreadable checkpoint {path}: {exc}")


# -- bootstrap ---------------------------------------------------------------------

BOOTSTRAP_DEFAULTS = dict(
    mos="", pred_a="", pred_b="", iterations=15000, seed=0, out="", force=False,
)


def _read_series(path: str) -> dict[str, float]:
    p = Path(path)
    if not p.exists():
        raise CliError(f"file not found: {path}")
    out: dict[str, float] = {}
    errors = []
    with p.open(newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or len(header) < 2:
            raise CliError(f"{path}: expected a CSV with id,value columns")
        id_col, val_col = 0, 1
        if "id" in header and "value" in header:
            id_col, val_col = header.index("id"), header.index("value")
        elif "mos" in header:
            id_col, val_col = header.index("id"), header.index("mos")
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            try:
                out[row[id_col]] = float(row[val_col])
            except (ValueError, IndexError):
                errors.append(f"line {lineno}: bad row {row!r}")
    if errors:
        raise CliError(f"{path}: unreadable rows", {"errors": errors})
    return out


def cmd_bootstrap(ns: argparse.Namespace) -> int:
    cfg = _resolve(ns, BOOTSTRAP_DEFAULTS)
    for key in ("mos", "pred_a", "pred_b"):
        if not cfg[key]:
            raise CliError(f"--{key.replace('_', '-')} is required")
    mos_map = _read_series(cfg["mos"])
    a_map = _read_series(cfg["pred_a"])
    b_map = _read_series(cfg["pred_b"])
    ids = sorted(mos_map)
    missing = {
        "pred_a": sorted(set(ids) - set(a_map))[:10],
        "pred_b": sorted(set(ids) - set(b_map))[:10],
        "extra_a": sorted(set(a_map) - set(ids))[:10],
        "extra_b": sorted(set(b_map) - set(ids))[:10],
    }
    if any(missing.values()):
        raise CliError("id mismatch across input files", missing)

    report = bootstrap_compare(
        [mos_map[i] for i in ids],
        [a_map[i] for i in ids],
        [b_map[i] for i in ids],
        iterations=int(cfg["iterations"]),
        seed=int(cfg["seed"]),
    )
    outcome = {"no_diff": "No Diff.", "model_a": "model A", "model_b": "model B"}[report.outcome]
    print(f"{'p-value':>10} {'CI low':>10} {'CI high':>10} {'outcome':>10} "
          f"{'PC(a)':>8} {'PC(b)':>8} {'iters':>7} {'seed':>6}")
    print(f"{report.p_value:>10.4f} {report.ci_low:>10.4f} {report.ci_high:>10.4f} "
          f"{outcome:>10} {report.rho_model_a:>8.4f} {report.rho_model_b:>8.4f} "
          f"{report.iterations:>7d} {report.seed:>6d}")
    if cfg["out"]:
        out = Path(cfg["out"])
        _ensure_fresh([out], cfg["force"])
        out.parent.mkdir(parents=True, exist_ok=True)
        out.write_text(to_json(report))
        print(f"-> {out}")
    return 0


# -- diagnose -----------------------------------------------------------------------

DIAGNOSE_DEFAULTS = dict(
    checkpoint="run/best_checkpoint.json", manifest="corpus/manifest.csv",
    split="test", layer="projection", k=0, out="diagnostics", seed=0, force=False,
)


def cmd_diagnose(ns: argparse.Namespace) -> int:
    cfg = _resolve(ns, DIAGNOSE_DEFAULTS)
    model, _ = _load_checkpoint(cfg["checkpoint"])
    samples, splits = _load_splits(cfg["manifest"])
    target = splits.get(cfg["split"], [])
    if not target:
        raise CliError(f"split {cfg['split']!r} is empty")
    ref_samples = splits["ref"]
    if not ref_samples:
        raise CliError("manifest has no ref split; diagnostics need references")
    out = Path(cfg["out"])
    _ensure_fresh([out / "report.json", out / "embeddings_2d.csv"], cfg["force"])

    try:
        refs = ReferenceSet.from_model(model, [s.features for s in ref_samples],
                                       layer=cfg["layer"])
        report = diagnose_embeddings(model, target, refs, layer=cfg["layer"],
                                     seed=int(cfg["seed"]), k=int(cfg["k"]) or None)
    except ValueError as exc:
        raise CliError(f"diagnostics failed: {exc}")

    _write_json(out / "report.json", {"command": "diagnose", **report.to_dict()})
    with (out / "embeddings_2d.csv").open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["id", "x", "y", "mos", "degradation", "cluster"])
        for s, xy, c in zip(target, report.pca_coords, report.cluster_assignments):
            writer.writerow([s.id, repr(float(xy[0])), repr(float(xy[1])),
                             repr(float(s.mos)), s.degradation, int(c)])
    print(f"diagnose[{cfg['layer']}] on {cfg['split']}: nmi={report.nmi:.4f}, "
          f"pc_dist_mos={report.pc_dist_mos:.4f} -> {out}")
    return 0


# -- bench -------------------------------------------------------------------------

BENCH_DEFAULTS = dict(
    batch_sizes="128", reps=20, warmup=3, frames=48, input_dim=32,
    hidden_dims="64,64", embed_dim=32, kappa=4.0, seed=0, out="", force=False,
)


def _time_step(step, reps: int, warmup: int) -> float:
    for _ in range(warmup):
        step()
    times = []
    for _ in range(reps):
        t0 = time.perf_counter()
        step()
        times.append(time.perf_counter() - t0)
    return statistics.median(times)


def cmd_bench(ns: argparse.Namespace) -> int:
    cfg = _resolve(ns, BENCH_DEFAULTS)
    reps = max(int(cfg["reps"]), 1)
    warmup = max(int(cfg["warmup"]), 0)
    rng = np.random.default_rng(int(cfg["seed"]))
    dims = _parse_dims(cfg["hidden_dims"])
    rows = []
    for bs in _parse_dims(cfg["batch_sizes"]):
        xs = [rng.standard_normal((int(cfg["frames"]), int(cfg["input_dim"])))
              for _ in range(bs)]
        ys = rng.uniform(1.0, 5.0, size=bs)

        l2_model = QualityModel(EncoderConfig(int(cfg["input_dim"]), dims,
                                              projection=False, mos_head=True), seed=0)
        l2_opt = Adam({"encoder": (l2_model.encoder_parameters(), 1e-3),
                       "head": (l2_model.head_parameters(), 1e-3)})

        def l2_step():
            l2_model.zero_grads()
            pred = l2_model.predict_mos_batch(xs)
            err = pred - ys[:, None]
            loss = (err * err).sum() * (1.0 / bs)
            loss.backward()
            l2_opt.step()

        tri_model = QualityModel(EncoderConfig(int(cfg["input_dim"]), dims,
                                               embed_dim=int(cfg["embed_dim"])), seed=0)
        tri_opt = Adam({"encoder": (tri_model.encoder_parameters(), 1e-3),
                        "projection": (tri_model.projection_parameters(), 1e-3)})
        spec = MarginSpec(mode="adaptive", kappa=float(cfg["kappa"]))
        counts = {}

        def tri_step():
            tri_model.zero_grads()
            z = tri_model.project_batch(tri_model.encode_batch(xs))
            out = batch_all_triplet_adaptive(z, ys, spec=spec)
            counts["valid"] = out.valid_triplets
            counts["active"] = out.active_triplets
            out.loss.backward()
            tri_opt.step()

        l2_s = _time_step(l2_step, reps, warmup)
        tri_s = _time_step(tri_step, reps, warmup)
        rows.append({
            "batch_size": bs,
            "l2_seconds": l2_s,
            "triplet_seconds": tri_s,
            "ratio": tri_s / l2_s,
            "valid_triplets": counts["valid"],
            "active_triplets": counts["active"],
            "reps": reps,
        })

    print(f"{'batch':>6} {'l2 (s)':>10} {'triplet (s)':>12} {'ratio':>7} "
          f"{'valid':>9} {'active':>9}")
    for r in rows:
        print(f"{r['batch_size']:>6d} {r['l2_seconds']:>10.4f} "
              f"{r['triplet_seconds']:>12.4f} {r['ratio']:>7.2f} "
              f"{r['valid_triplets']:>9d} {r['active_triplets']:>9d}")
    if cfg["out"]:
        out = Path(cfg["out"])
        _ensure_fresh([out], cfg["force"])
        out.parent.mkdir(parents=True, exist_ok=True)
        _write_json(out, {"command": "bench", "rows": rows,
                          "config": {k: cfg[k] for k in BENCH_DEFAULTS}})
        print(f"-> {out}")
    return 0


# -- parser ------------------------------------------------------------------------

def _add_common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="JSON config file with per-command defaults")
    p.add_argument("--seed", type=int)
    p.add_argument("--force", action="store_true", default=None,
                   help="overwrite existing outputs")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="contrareg",
        description="Contrastive-regression quality scoring: data, training, "
                    "evaluation, statistics and benchmarks.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", help="generate a synthetic labeled corpus")
    p.add_argument("--out")
    p.add_argument("--families", type=int, help=f"number of families (of {FAMILIES})")
    p.add_argument("--samples-per-family", dest="samples_per_family", type=int)
    p.add_argument("--frames", type=int)
    p.add_argument("--input-dim", dest="input_dim", type=int)
    p.add_argument("--holdout", help="comma-separated families kept out of train/val")
    p.add_argument("--mos-noise-sd", dest="mos_noise_sd", type=float)
    p.add_argument("--refs", type=int, help="number of clean reference samples")
    p.add_argument("--val-fraction", dest="val_fraction", type=float)
    p.add_argument("--test-fraction", dest="test_fraction", type=float)
    _add_common(p)
    p.set_defaults(func=cmd_gen_data)

    p = sub.add_parser("train", help="train a model on a manifest")
    p.add_argument("--manifest")
    p.add_argument("--out")
    p.add_argument("--loss", choices=LOSS_CHOICES)
    p.add_argument("--nr", action="store_true", default=None,
                   help="chain a frozen-encoder MOS head after contrastive pretraining")
    p.add_argument("--hidden-dims", dest="hidden_dims")
    p.add_argument("--embed-dim", dest="embed_dim", type=int)
    p.add_argument("--batch-size", dest="batch_size", type=int)
    p.add_argument("--lr-encoder", dest="lr_encoder", type=float)
    p.add_argument("--lr-head", dest="lr_head", type=float)
    p.add_argument("--decay-factor", dest="decay_factor", type=float)
    p.add_argument("--decay-patience-epochs", dest="decay_patience_epochs", type=int)
    p.add_argument("--early-stop-patience", dest="early_stop_patience", type=int)
    p.add_argument("--max-epochs", dest="max_epochs", type=int)
    p.add_argument("--head-max-epochs", dest="head_max_epochs", type=int)
    p.add_argument("--margin", type=float)
    p.add_argument("--kappa", type=float)
    p.add_argument("--sign-mode", dest="sign_mode", choices=("intuitive", "literal"))
    p.add_argument("--reduction", choices=("mean_active", "sum"))
    p.add_argument("--max-frames", dest="max_frames", type=int)
    p.add_argument("--validation-layer", dest="validation_layer",
                   choices=("projection", "encoder"))
    p.add_argument("--anchors-per-epoch", dest="anchors_per_epoch", type=int)
    p.add_argument("--per-anchor", dest="per_anchor", type=int)
    _add_common(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint on a manifest split")
    p.add_argument("--checkpoint")
    p.add_argument("--manifest")
    p.add_argument("--mode", choices=("nr", "nmr"))
    p.add_argument("--split", choices=("train", "val", "test"))
    p.add_argument("--layer", choices=("projection", "encoder"))
    p.add_argument("--out")
    _add_common(p)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("bootstrap", help="compare two prediction sets sharing labels")
    p.add_argument("--mos")
    p.add_argument("--pred-a", dest="pred_a")
    p.add_argument("--pred-b", dest="pred_b")
    p.add_argument("--iterations", type=int)
    p.add_argument("--out")
    _add_common(p)
    p.set_defaults(func=cmd_bootstrap)

    p = sub.add_parser("diagnose", help="embedding-space diagnostics for a checkpoint")
    p.add_argument("--checkpoint")
    p.add_argument("--manifest")
    p.add_argument("--split", choices=("train", "val", "test"))
    p.add_argument("--layer", choices=("projection", "encoder"))
    p.add_argument("--k", type=int, help="clusters (default: number of families)")
    p.add_argument("--out")
    _add_common(p)
    p.set_defaults(func=cmd_diagnose)

    p = sub.add_parser("bench", help="time one training step: L2 vs batch-all triplet")
    p.add_argument("--batch-sizes", dest="batch_sizes")
    p.add_argument("--reps", type=int)
    p.add_argument("--warmup", type=int)
    p.add_argument("--frames", type=int)
    p.add_argument("--input-dim", dest="input_dim", type=int)
    p.add_argument("--hidden-dims", dest="hidden_dims")
    p.add_argument("--embed-dim", dest="embed_dim", type=int)
    p.add_argument("--kappa", type=float)
    p.add_argument("--out")
    _add_common(p)
    p.set_defaults(func=cmd_bench)

    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    ns = parser.parse_args(argv)
    try:
        return ns.func(ns)
    except CliError as exc:
        print(json.dumps({"error": type(exc).__name__, "message": str(exc),
                          "details": exc.details}, sort_keys=True), file=sys.stderr)
        return 1
    except (ManifestError, TrainingError, DegenerateDataError, ValueError) as exc:
        print(json.dumps({"error": type(exc).__name__, "message": str(exc)},
                         sort_keys=True), file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
