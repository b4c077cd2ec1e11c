"""Evaluation statistics and embedding diagnostics.

Correlation metrics (Pearson/Spearman), RMSE after a first-degree calibration
fit, a seeded bootstrap test for comparing two dependent correlations that
share the ground-truth variable, and the embedding diagnostics bundle
(2-D PCA projection, k-means clustering, normalized mutual information).
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np
from scipy.stats import rankdata

from .model import QualityModel, ReferenceSet, nmr_scores

__all__ = [
    "MetricsReport",
    "BootstrapReport",
    "DiagnosticsReport",
    "DegenerateDataError",
    "pearson",
    "spearman",
    "rmse_mapped",
    "bootstrap_compare",
    "pca2",
    "kmeans",
    "nmi",
    "diagnose_embeddings",
]


class DegenerateDataError(ValueError):
    """A statistic is undefined on this input (e.g. zero variance)."""


def _pair(a, b) -> tuple[np.ndarray, np.ndarray]:
    a = np.asarray(a, dtype=np.float64).reshape(-1)
    b = np.asarray(b, dtype=np.float64).reshape(-1)
    if a.size != b.size:
        raise ValueError(f"length mismatch: {a.size} vs {b.size}")
    if a.size < 2:
        raise ValueError("need at least 2 observations")
    return a, b


def pearson(a, b) -> float:
    """Sample Pearson correlation; raises on zero variance."""
    a, b = _pair(a, b)
    da, db = a - a.mean(), b - b.mean()
    na, nb = np.sqrt((da * da).sum()), np.sqrt((db * db).sum())
    if na == 0.0 or nb == 0.0:
        raise DegenerateDataError("correlation undefined: an input has zero variance")
    return float(np.clip((da * db).sum() / (na * nb), -1.0, 1.0))


def spearman(a, b) -> float:
    """Pearson correlation of average ranks (ties get the mean rank)."""
    a, b = _pair(a, b)
    return pearson(rankdata(a, method="average"), rankdata(b, method="average"))


class MappedRmse(NamedTuple):
    rmse: float
    slope: float
    intercept: float
    degenerate: bool


def rmse_mapped(pred, mos) -> MappedRmse:
    """RMSE after least-squares affine calibration mos ~ slope*pred + intercept.

    Constant predictions degenerate to an intercept-only fit (slope 0,
    flagged) rather than erroring.
    """
    pred, mos = _pair(pred, mos)
    dp = pred - pred.mean()
    denom = (dp * dp).sum()
    if denom == 0.0:
        slope, degenerate = 0.0, True
    else:
        slope, degenerate = float((dp * (mos - mos.mean())).sum() / denom), False
    intercept = float(mos.mean() - slope * pred.mean())
    resid = slope * pred + intercept - mos
    return MappedRmse(float(np.sqrt(np.mean(resid * resid))), slope, intercept, degenerate)


@dataclass
class MetricsReport:
    pc: float
    sc: float
    rmse_mapped: float | None
    mapping: tuple[float, float] | None
    n: int

    def to_dict(self) -> dict:
        return {
            "pc": self.pc,
            "sc": self.sc,
            "rmse_mapped": self.rmse_mapped,
            "mapping": list(self.mapping) if self.mapping is not None else None,
            "n": self.n,
        }


def score_predictions(pred, mos, with_rmse: bool = True) -> MetricsReport:
    """PC/SC (and optionally calibrated RMSE) of predictions against labels."""
    pred, mos = _pair(pred, mos)
    pc = pearson(pred, mos)
    sc = spearman(pred, mos)
    if with_rmse:
        fit = rmse_mapped(pred, mos)
        return MetricsReport(pc, sc, fit.rmse, (fit.slope, fit.intercept), pred.size)
    return MetricsReport(pc, sc, None, None, pred.size)


# -- bootstrap test for two overlapping dependent correlations ----------------

@dataclass
class BootstrapReport:
    rho_model_a: float
    rho_model_b: float
    ci_low: float
    ci_high: float
    p_value: float
    iterations: int
    seed: int
    n: int
    degenerate_redraws: int = 0

    @property
    def significant(self) -> bool:
        return not (self.ci_low <= 0.0 <= self.ci_high)

    @property
    def outcome(self) -> str:
        if not self.significant:
            return "no_diff"
        return "model_a" if self.ci_low > 0.0 else "model_b"

    def to_dict(self) -> dict:
        return {
            "rho_model_a": self.rho_model_a,
            "rho_model_b": self.rho_model_b,
            "ci_low": self.ci_low,
            "ci_high": self.ci_high,
            "p_value": self.p_value,
            "iterations": self.iterations,
            "seed": self.seed,
            "n": self.n,
            "degenerate_redraws": self.degenerate_redraws,
            "significant": self.significant,
            "outcome": self.outcome,
        }


def _row_corr(x: np.ndarray, y: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Row-wise Pearson correlation; second return flags degenerate rows."""
    dx = x - x.mean(axis=1, keepdims=True)
    dy = y - y.mean(axis=1, keepdims=True)
    nx = np.sqrt((dx * dx).sum(axis=1))
    ny = np.sqrt((dy * dy).sum(axis=1))
    bad = (nx == 0.0) | (ny == 0.0)
    denom = np.where(bad, 1.0, nx * ny)
    return (dx * dy).sum(axis=1) / denom, bad


def bootstrap_compare(mos, pred_a, pred_b, iterations: int = 15000,
                      seed: int = 0) -> BootstrapReport:
    """Bootstrap the difference between two correlations sharing `mos`.

    Each iteration resamples indices with replacement and computes
    rho_d = rho(mos, pred_a) - rho(mos, pred_b) on the resample. The 95% CI is
    the empirical 2.5/97.5 percentile band; the two-tailed p-value uses +1
    smoothing. Degenerate resamples (zero variance) are redrawn and counted;
    more than 1% of them aborts.
    """
    mos = np.asarray(mos, dtype=np.float64).reshape(-1)
    pred_a = np.asarray(pred_a, dtype=np.float64).reshape(-1)
    pred_b = np.asarray(pred_b, dtype=np.float64).reshape(-1)
    n = mos.size
    if not (pred_a.size == pred_b.size == n):
        raise ValueError("mos, pred_a and pred_b must be aligned")
    if n < 10:
        raise ValueError(f"need at least 10 observations, got {n}")
    if iterations < 1:
        raise ValueError("iterations must be >= 1")

    rho_a = pearson(mos, pred_a)
    rho_b = pearson(mos, pred_b)

    rng = np.random.default_rng(seed)
    rho_d = np.empty(iterations)
    pending = np.arange(iterations)
    degenerate = 0
    max_degenerate = max(1, int(0.01 * iterations))
    while pending.size:
        idx = rng.integers(0, n, size=(pending.size, n))
        ra, bad_a = _row_corr(mos[idx], pred_a[idx])
        rb, bad_b = _row_corr(mos[idx], pred_b[idx])
        bad = bad_a | bad_b
        good = ~bad
        rho_d[pending[good]] = ra[good] - rb[good]
        degenerate += int(bad.sum())
        if degenerate > max_degenerate:
            raise DegenerateDataError(
                f"{degenerate} degenerate resamples exceed 1% of {iterations} iterations"
            )
        pending = pending[bad]

    ci_low, ci_high = np.percentile(rho_d, [2.5, 97.5])
    le = int((rho_d <= 0.0).sum())
    ge = int((rho_d >= 0.0).sum())
    p = 2.0 * min((le + 1) / (iterations + 1), (ge + 1) / (iterations + 1))
    return BootstrapReport(
        rho_model_a=rho_a,
        rho_model_b=rho_b,
        ci_low=float(ci_low),
        ci_high=float(ci_high),
        p_value=float(min(p, 1.0)),
        iterations=iterations,
        seed=seed,
        n=n,
        degenerate_redraws=degenerate,
    )


# -- embedding diagnostics -----------------------------------------------------

class Pca2(NamedTuple):
    coords: np.ndarray            # (N, 2)
    components: np.ndarray        # (2, d)
    explained_variance: np.ndarray  # (2,)
    rank_deficient: bool


def pca2(z) -> Pca2:
    """Project rows onto the top-2 principal directions.

    Components are sign-fixed so each one's largest-magnitude coordinate is
    positive. Rank-deficient inputs get a zero second component and a flag.
    """
    z = np.asarray(z, dtype=np.float64)
    if z.ndim != 2 or z.shape[0] < 3 or z.shape[1] < 2:
        raise ValueError("pca2 expects an (N >= 3) x (d >= 2) matrix")
    centered = z - z.mean(axis=0, keepdims=True)
    _, svals, vt = np.linalg.svd(centered, full_matrices=False)
    comps = vt[:2].copy()
    svals = svals[:2].copy()
    rank_deficient = bool(svals[1] <= svals[0] * 1e-12)
    if rank_deficient:
        comps[1] = 0.0
        svals[1] = 0.0
    for row in comps:
        peak = np.argmax(np.abs(row))
        if row[peak] < 0:
            row *= -1.0
    coords = centered @ comps.T
    explained = svals ** 2 / (z.shape[0] - 1)
    return Pca2(coords, comps, explained, rank_deficient)


def _kmeans_pp(x: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    centers = np.empty((k, x.shape[1]))
    centers[0] = x[rng.integers(0, x.shape[0])]
    d2 = ((x - centers[0]) ** 2).sum(axis=1)
    for c in range(1, k):
        total = d2.sum()
        if total <= 0.0:
            centers[c] = x[rng.integers(0, x.shape[0])]
            continue
        probs = d2 / total
        centers[c] = x[rng.choice(x.shape[0], p=probs)]
        d2 = np.minimum(d2, ((x - centers[c]) ** 2).sum(axis=1))
    return centers


def _lloyd(x: np.ndarray, centers: np.ndarray, max_iter: int) -> tuple[np.ndarray, float, list[float]]:
    k = centers.shape[0]
    assign = np.full(x.shape[0], -1)
    history: list[float] = []
    for _ in range(max_iter):
        d2 = ((x[:, None, :] - centers[None, :, :]) ** 2).sum(axis=2)
        new_assign = d2.argmin(axis=1)
        inertia = float(d2[np.arange(x.shape[0]), new_assign].sum())
        history.append(inertia)
        if np.array_equal(new_assign, assign):
            break
        assign = new_assign
        for c in range(k):
            members = x[assign == c]
            if members.shape[0] == 0:
                # re-seed an empty cluster at the point farthest from its center
                far = d2[np.arange(x.shape[0]), assign].argmax()
                centers[c] = x[far]
            else:
                centers[c] = members.mean(axis=0)
    return assign, history[-1], history


def kmeans(z, k: int = 5, seed: int = 0, max_iter: int = 300,
           restarts: int = 10) -> np.ndarray:
    """Lloyd's algorithm with seeded k-means++ starts; best of `restarts` kept."""
    x = np.asarray(z, dtype=np.float64)
    if x.ndim != 2 or x.shape[0] < k:
        raise ValueError(f"need at least k={k} points, got shape {x.shape}")
    if k < 1:
        raise ValueError("k must be >= 1")
    rng = np.random.default_rng(seed)
    best_assign, best_inertia = None, np.inf
    for _ in range(restarts):
        centers = _kmeans_pp(x, k, rng)
        assign, inertia, _ = _lloyd(x, centers, max_iter)
        if inertia < best_inertia:
            best_assign, best_inertia = assign, inertia
    return best_assign


def nmi(labels_a, labels_b) -> float:
    """Normalized mutual information, 2 I(A;B) / (H(A) + H(B)), natural log.

    Defined as 0 when either partition has a single class (the 0/0 case).
    Symmetric and invariant to relabeling.
    """
    a = np.asarray(labels_a).reshape(-1)
    b = np.asarray(labels_b).reshape(-1)
    if a.size != b.size or a.size == 0:
        raise ValueError("label vectors must be non-empty and aligned")
    _, ai = np.unique(a, return_inverse=True)
    _, bi = np.unique(b, return_inverse=True)
    n = a.size
    contingency = np.zeros((ai.max() + 1, bi.max() + 1))
    np.add.at(contingency, (ai, bi), 1.0)
    pij = contingency / n
    pi = pij.sum(axis=1)
    qj = pij.sum(axis=0)
    h_a = float(-(pi[pi > 0] * np.log(pi[pi > 0])).sum())
    h_b = float(-(qj[qj > 0] * np.log(qj[qj > 0])).sum())
    if h_a == 0.0 or h_b == 0.0:
        return 0.0
    nz = pij > 0
    mi = float((pij[nz] * (np.log(pij[nz]) - np.log(np.outer(pi, qj)[nz]))).sum())
    return float(np.clip(2.0 * mi / (h_a + h_b), 0.0, 1.0))


@dataclass
class DiagnosticsReport:
    pca_coords: np.ndarray
    cluster_assignments: np.ndarray
    nmi: float
    pc_dist_mos: float
    layer: str
    k: int
    n: int
    explained_variance: tuple[float, float]
    seed: int

    def to_dict(self) -> dict:
        # coordinates/assignments are emitted separately as CSV
        return {
            "nmi": self.nmi,
            "pc_dist_mos": self.pc_dist_mos,
            "layer": self.layer,
            "k": self.k,
            "n": self.n,
            "explained_variance": list(self.explained_variance),
            "seed": self.seed,
        }


def diagnose_embeddings(model: QualityModel, samples, refs: ReferenceSet,
                        layer: str = "projection", seed: int = 0,
                        k: int | None = None) -> DiagnosticsReport:
    """Embedding-space diagnostics on labeled samples.

    Clusters the chosen layer's embeddings with k-means (k defaults to the
    number of degradation families present), reports NMI between clusters and
    family tags, and the Pearson correlation between reference-set distance
    and the quality labels.
    """
    if refs.layer != layer:
        raise ValueError(f"reference set is embedded at {refs.layer!r}, not {layer!r}")
    families = [s.degradation for s in samples]
    mos = np.array([s.mos for s in samples])
    if k is None:
        k = len(set(families))
    if len(samples) < k:
        raise ValueError(f"need at least k={k} samples, got {len(samples)}")
    emb = model.embed([s.features for s in samples], layer=layer)
    proj = pca2(emb)
    assign = kmeans(emb, k=k, seed=seed)
    dist = nmr_scores(model, [s.features for s in samples], refs, layer=layer)
    return DiagnosticsReport(
        pca_coords=proj.coords,
        cluster_assignments=assign,
        nmi=nmi(assign, families),
        pc_dist_mos=pearson(dist, mos),
        layer=layer,
        k=k,
        n=len(samples),
        explained_variance=(float(proj.explained_variance[0]), float(proj.explained_variance[1])),
        seed=seed,
    )


def to_json(report) -> str:
    """Stable JSON text for any report object with a to_dict()."""
    return json.dumps(report.to_dict(), sort_keys=True, indent=1)
