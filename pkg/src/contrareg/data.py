"""Dataset ingestion and the seeded synthetic quality-degradation corpus.

Samples are precomputed numeric feature sequences, not audio. The generator
draws clean prototypes from a seeded Gaussian mixture over frames, applies one
of five parametric corruption families at a uniform severity, and labels each
sample with a monotone, family-specific severity-to-score response plus
Gaussian rating noise. Severity is kept as ground truth for diagnostics.
"""

from __future__ import annotations

import csv
import hashlib
from dataclasses import dataclass
from pathlib import Path

import numpy as np

__all__ = [
    "LabeledSample",
    "SyntheticSpec",
    "ManifestError",
    "FAMILIES",
    "generate_corpus",
    "split_by_family",
    "load_manifest",
    "write_corpus",
]

MOS_RANGE = (1.0, 5.0)
SPLITS = ("train", "val", "test", "ref")
MANIFEST_COLUMNS = ("id", "split", "degradation", "mos", "features_path")

FAMILIES = ("noise", "dropout", "clip", "smooth", "chanscale")


class ManifestError(ValueError):
    """Manifest rejected; `errors` itemizes every offending line."""

    def __init__(self, path, errors: list[str]):
        self.path = str(path)
        self.errors = list(errors)
        preview = "; ".join(self.errors[:5])
        more = "" if len(self.errors) <= 5 else f" (+{len(self.errors) - 5} more)"
        super().__init__(f"{self.path}: {len(self.errors)} invalid rows: {preview}{more}")


@dataclass
class LabeledSample:
    id: str
    features: np.ndarray  # (T, input_dim) float64
    mos: float
    degradation: str
    severity: float | None = None
    split: str = "train"


@dataclass
class SyntheticSpec:
    n_families: int = 5
    samples_per_family: int = 400
    frames: int = 24
    input_dim: int = 16
    seed: int = 0
    holdout_families: tuple[str, ...] = ()
    mos_noise_sd: float = 0.15
    n_references: int = 50
    val_fraction: float = 0.2
    test_fraction: float = 0.15
    mixture_components: int = 4

    def __post_init__(self):
        self.holdout_families = tuple(self.holdout_families)
        if not 2 <= self.n_families <= len(FAMILIES):
            raise ValueError(f"n_families must be in [2, {len(FAMILIES)}]")
        unknown = set(self.holdout_families) - set(self.families)
        if unknown:
            raise ValueError(f"holdout families not in corpus: {sorted(unknown)}")
        if set(self.holdout_families) >= set(self.families):
            raise ValueError("holdout cannot cover every family")
        if self.samples_per_family < 1 or self.frames < 1 or self.input_dim < 1:
            raise ValueError("samples_per_family, frames and input_dim must be >= 1")
        if self.mos_noise_sd < 0:
            raise ValueError("mos_noise_sd must be >= 0")

    @property
    def families(self) -> tuple[str, ...]:
        return FAMILIES[: self.n_families]


# -- severity -> quality response curves (all strictly increasing on [0, 1]) --

def _resp_linear(s):
    return s


def _resp_convex(s):
    return s * s


def _resp_concave(s):
    return np.sqrt(s)


def _resp_sigmoid(s):
    lo, hi = 1.0 / (1.0 + np.e ** 4.0), 1.0 / (1.0 + np.e ** -4.0)
    return (1.0 / (1.0 + np.exp(-8.0 * (s - 0.5))) - lo) / (hi - lo)


def _resp_stepped(s):
    # staircase-like but strictly increasing: derivative >= 0.1 everywhere
    k = 3.0
    return s - 0.9 * np.sin(2.0 * np.pi * k * s) / (2.0 * np.pi * k)


RESPONSES = {
    "noise": _resp_linear,
    "dropout": _resp_convex,
    "clip": _resp_concave,
    "smooth": _resp_sigmoid,
    "chanscale": _resp_stepped,
}


def clean_label(family: str, severity: float) -> float:
    """Noiseless quality label for one family at one severity."""
    return 1.0 + 4.0 * (1.0 - float(RESPONSES[family](severity)))


def _clean_prototype(rng: np.random.Generator, spec: SyntheticSpec,
                     means: np.ndarray) -> np.ndarray:
    k = rng.integers(0, means.shape[0])
    return means[k] + 0.5 * rng.standard_normal((spec.frames, spec.input_dim))


def _shared_wear(rng: np.random.Generator, x: np.ndarray, q: float) -> np.ndarray:
    """Quality trace common to every family: jittered energy loss + noise floor.

    Any real degradation sheds signal energy roughly in proportion to the
    perceived quality loss q, but with per-sample jitter, so this shared trace
    is a noisier severity cue than each family's own deterministic signature.
    """
    u = float(rng.uniform(0.55, 1.45))
    return x * (1.0 - 0.45 * q * u) + 0.4 * q * u * rng.standard_normal(x.shape)


def _corrupt(rng: np.random.Generator, family: str, x: np.ndarray, s: float,
             chan_signs: np.ndarray) -> np.ndarray:
    t, d = x.shape
    if family == "noise":
        return x + 0.7 * s * rng.standard_normal((t, d))
    if family == "dropout":
        out = x.copy()
        n_drop = int(round(0.6 * s * t))
        if n_drop:
            out[rng.choice(t, size=n_drop, replace=False)] = 0.0
        return out
    if family == "clip":
        c = np.quantile(np.abs(x), 0.98) * (1.0 - 0.8 * s) + 1e-6
        return np.clip(x, -c, c)
    if family == "smooth":
        # low-pass along time: moving average plus attenuation of the
        # frame-to-frame deviations around the temporal mean
        w = 1 + int(round(s * min(t - 1, 10)))
        out = x
        if w > 1:
            kernel = np.ones(w) / w
            pad = np.pad(x, ((w - 1, 0), (0, 0)), mode="edge")
            out = np.empty_like(x)
            for c_idx in range(d):
                out[:, c_idx] = np.convolve(pad[:, c_idx], kernel, mode="valid")
        mean = out.mean(axis=0, keepdims=True)
        return mean + (out - mean) * (1.0 - 0.75 * s)
    if family == "chanscale":
        # per-channel gains: random magnitude per sample, fixed sign pattern
        gains = 1.0 + 0.9 * s * np.abs(rng.uniform(0.3, 1.0, size=d)) * chan_signs
        return x * gains[None, :]
    raise ValueError(f"unknown degradation family: {family!r}")


def generate_corpus(spec: SyntheticSpec) -> list[LabeledSample]:
    """Deterministic synthetic corpus with known severity -> quality ground truth.

    Returns labeled samples with train/val/test splits assigned (holdout
    families entirely in test) followed by `n_references` clean reference
    samples with split "ref".
    """
    rng = np.random.default_rng(spec.seed)
    means = 1.2 * rng.standard_normal((spec.mixture_components, spec.input_dim))
    chan_signs = rng.choice([-1.0, 1.0], size=spec.input_dim)

    samples: list[LabeledSample] = []
    lo, hi = MOS_RANGE
    for family in spec.families:
        for i in range(spec.samples_per_family):
            clean = _clean_prototype(rng, spec, means)
            s = float(rng.uniform(0.0, 1.0))
            q = float(RESPONSES[family](s))
            feats = _corrupt(rng, family, _shared_wear(rng, clean, q), s, chan_signs)
            y = clean_label(family, s) + float(rng.normal(0.0, spec.mos_noise_sd))
            samples.append(
                LabeledSample(
                    id=f"{family}-{i:05d}",
                    features=feats,
                    mos=float(np.clip(y, lo, hi)),
                    degradation=family,
                    severity=s,
                )
            )

    split_by_family(
        samples,
        holdout=spec.holdout_families,
        val_fraction=spec.val_fraction,
        test_fraction=spec.test_fraction,
    )

    refs = [
        LabeledSample(
            id=f"ref-{i:05d}",
            features=_clean_prototype(rng, spec, means),
            mos=hi,
            degradation="clean",
            severity=0.0,
            split="ref",
        )
        for i in range(spec.n_references)
    ]
    return samples + refs


def _id_unit(sample_id: str) -> float:
    digest = hashlib.sha256(sample_id.encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "big") / 2.0 ** 64


def split_by_family(
    samples: list[LabeledSample],
    holdout,
    val_fraction: float = 0.2,
    test_fraction: float = 0.0,
) -> dict[str, list[LabeledSample]]:
    """Assign splits: holdout families go entirely to test, the rest are split
    train/val(/test) by a deterministic hash of the sample id.

    Mutates each sample's `split` and returns the split -> samples mapping.
    Stable under reordering of the input list.
    """
    holdout = set(holdout)
    families = {s.degradation for s in samples}
    if holdout and not (families - holdout):
        raise ValueError("holdout covers all families; nothing left to train on")
    if not 0.0 <= val_fraction + test_fraction < 1.0:
        raise ValueError("val_fraction + test_fraction must be in [0, 1)")

    out: dict[str, list[LabeledSample]] = {"train": [], "val": [], "test": []}
    for s in samples:
        if s.degradation in holdout:
            s.split = "test"
        else:
            u = _id_unit(s.id)
            if u < test_fraction:
                s.split = "test"
            elif u < test_fraction + val_fraction:
                s.split = "val"
            else:
                s.split = "train"
        out[s.split].append(s)
    return out


# -- manifest I/O -------------------------------------------------------------

def _fmt(x: float) -> str:
    return repr(float(x))


def write_corpus(samples: list[LabeledSample], out_dir: str | Path) -> Path:
    """Write manifest.csv plus one features CSV per sample; returns manifest path.

    Output is byte-deterministic for a fixed corpus. A `severity` column is
    appended when any sample carries ground-truth severity.
    """
    out_dir = Path(out_dir)
    (out_dir / "features").mkdir(parents=True, exist_ok=True)
    with_severity = any(s.severity is not None for s in samples)
    manifest = out_dir / "manifest.csv"
    with manifest.open("w", newline="") as fh:
        writer = csv.writer(fh)
        header = list(MANIFEST_COLUMNS) + (["severity"] if with_severity else [])
        writer.writerow(header)
        for s in samples:
            rel = f"features/{s.id}.csv"
            row = [s.id, s.split, s.degradation, _fmt(s.mos), rel]
            if with_severity:
                row.append("" if s.severity is None else _fmt(s.severity))
            writer.writerow(row)
            np.savetxt(out_dir / rel, np.asarray(s.features, dtype=np.float64),
                       fmt="%.17g", delimiter=",")
    return manifest


def load_manifest(path: str | Path) -> list[LabeledSample]:
    """Load a manifest and every referenced features file.

    Rejections are itemized with line numbers; nothing is silently coerced.
    """
    path = Path(path)
    if not path.exists():
        raise ManifestError(path, ["file does not exist"])
    root = path.parent
    errors: list[str] = []
    samples: list[LabeledSample] = []
    lo, hi = MOS_RANGE

    with path.open(newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise ManifestError(path, ["empty file (missing header)"]) from None
        base = list(MANIFEST_COLUMNS)
        if header[: len(base)] != base or header not in (base, base + ["severity"]):
            raise ManifestError(
                path, [f"line 1: header must be {','.join(base)}[,severity], got {','.join(header)}"]
            )
        has_severity = header == base + ["severity"]

        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != len(header):
                errors.append(f"line {lineno}: expected {len(header)} columns, got {len(row)}")
                continue
            sid, split, degradation, mos_s, feat_rel = row[:5]
            if not sid:
                errors.append(f"line {lineno}: empty id")
                continue
            if split not in SPLITS:
                errors.append(f"line {lineno}: unknown split {split!r}")
                continue
            try:
                mos = float(mos_s)
            except ValueError:
                errors.append(f"line {lineno}: malformed mos {mos_s!r}")
                continue
            if not lo <= mos <= hi:
                errors.append(f"line {lineno}: mos {mos} outside [{lo}, {hi}]")
                continue
            severity = None
            if has_severity and row[5] != "":
                try:
                    severity = float(row[5])
                except ValueError:
                    errors.append(f"line {lineno}: malformed severity {row[5]!r}")
                    continue
            feat_path = root / feat_rel
            if not feat_path.exists():
                errors.append(f"line {lineno}: features file missing: {feat_rel}")
                continue
            try:
                feats = np.loadtxt(feat_path, delimiter=",", dtype=np.float64, ndmin=2)
            except ValueError as exc:
                errors.append(f"line {lineno}: unreadable features {feat_rel}: {exc}")
                continue
            if not np.all(np.isfinite(feats)):
                errors.append(f"line {lineno}: non-finite features in {feat_rel}")
                continue
            samples.append(LabeledSample(sid, feats, mos, degradation, severity, split))

    if errors:
        raise ManifestError(path, errors)
    return samples


def split_map(samples: list[LabeledSample]) -> dict[str, list[LabeledSample]]:
    out: dict[str, list[LabeledSample]] = {k: [] for k in SPLITS}
    for s in samples:
        out[s.split].append(s)
    return out
