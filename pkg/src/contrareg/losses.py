"""Triplet losses over continuous labels, with batch-all mining.

For a batch with labels y, an ordered triple (anchor i, positive j, negative k)
is valid when the indices are pairwise distinct and |y_i - y_j| < |y_i - y_k|
strictly. The batch-all losses hinge the term

    d(z_i, z_j) - d(z_i, z_k) + margin

over every valid triple, where d is the non-squared Euclidean distance and the
margin is either a constant or the label-distance gap scaled by 1/kappa. Both
losses differentiate through the autodiff tensors in `contrareg.autodiff`.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np

from .autodiff import Tensor, pairwise_dist

__all__ = [
    "TripletMask",
    "MarginSpec",
    "LossOutput",
    "BatchTooSmallError",
    "label_distance",
    "build_mask",
    "batch_all_triplet_fixed",
    "batch_all_triplet_adaptive",
    "adaptive_grad_condition",
    "classification_triplet_loss",
    "offline_hard_triplets",
]

REDUCTIONS = ("mean_active", "sum")


class BatchTooSmallError(ValueError):
    """Raised when a batch cannot host a single triplet."""


def label_distance(y_j: float, y_k: float) -> float:
    """Distance between two continuous labels: |y_j - y_k|."""
    return abs(float(y_j) - float(y_k))


@dataclass
class TripletMask:
    """3-D validity structure over a batch, indexed (anchor, positive, negative)."""

    n: int
    valid: np.ndarray  # (n, n, n) bool

    @property
    def count(self) -> int:
        return int(self.valid.sum())


@dataclass
class MarginSpec:
    """Margin configuration shared by both batch-all losses.

    mode "fixed" uses the constant `m`; mode "adaptive" replaces it with the
    per-triplet label gap divided by `kappa`. `sign_mode` picks the gap's
    orientation: "intuitive" yields (|y_i-y_k| - |y_i-y_j|)/kappa, which is
    strictly positive for valid triplets; "literal" flips the sign.
    """

    mode: str = "fixed"
    m: float = 0.5
    kappa: float = 4.0
    sign_mode: str = "intuitive"

    def __post_init__(self):
        if self.mode not in ("fixed", "adaptive"):
            raise ValueError(f"unknown margin mode: {self.mode!r}")
        if self.sign_mode not in ("intuitive", "literal"):
            raise ValueError(f"unknown sign_mode: {self.sign_mode!r}")
        if self.mode == "fixed" and self.m < 0:
            raise ValueError("fixed margin m must be >= 0")
        if self.mode == "adaptive" and self.kappa <= 0:
            raise ValueError("kappa must be > 0")


@dataclass
class LossOutput:
    """Scalar loss plus triplet bookkeeping for one batch."""

    value: float
    active_triplets: int
    valid_triplets: int
    reduction: str
    loss: Tensor = field(repr=False, default=None)
    no_valid_triplets: bool = False


def _label_dist_matrix(labels: np.ndarray) -> np.ndarray:
    return np.abs(labels[:, None] - labels[None, :])


def _as_labels(labels) -> np.ndarray:
    y = np.asarray(labels, dtype=np.float64).reshape(-1)
    if not np.all(np.isfinite(y)):
        raise ValueError("labels must be finite")
    return y


def build_mask(labels) -> TripletMask:
    """Validity mask over all ordered triples of a batch.

    valid[i, j, k] is True iff i, j, k are pairwise distinct and
    |y_i - y_j| < |y_i - y_k| strictly; label-distance ties validate neither
    orientation.
    """
    y = _as_labels(labels)
    n = y.size
    if n < 3:
        raise BatchTooSmallError(f"need at least 3 samples to form a triplet, got {n}")
    d = _label_dist_matrix(y)
    closer = d[:, :, None] < d[:, None, :]
    neq = ~np.eye(n, dtype=bool)
    distinct = neq[:, :, None] & neq[:, None, :] & neq[None, :, :]
    return TripletMask(n=n, valid=closer & distinct)


def _margin_cube(labels: np.ndarray, spec: MarginSpec) -> np.ndarray | float:
    """Per-triplet margin: a scalar for fixed mode, an (n,n,n) array otherwise."""
    if spec.mode == "fixed":
        return float(spec.m)
    d = _label_dist_matrix(labels)
    gap = d[:, None, :] - d[:, :, None]  # |y_i - y_k| - |y_i - y_j|
    if spec.sign_mode == "literal":
        gap = -gap
    return gap / spec.kappa


def _masked_triplet_hinge(dist: Tensor, valid: np.ndarray, margins) -> tuple[Tensor, int]:
    """Sum of hinged triplet terms over `valid`; returns (sum tensor, active count).

    The term for triple (i,j,k) is dist[i,j] - dist[i,k] + margins[i,j,k];
    easy triplets (term <= 0) contribute nothing and receive no gradient.
    """
    term = dist.data[:, :, None] - dist.data[:, None, :] + margins
    active = valid & (term > 0.0)
    total = float(term[active].sum()) if active.any() else 0.0

    def bwd(g):
        # dist[a,b] appears with +1 for each active (a,b,*) and -1 for each (a,*,b)
        coeff = active.sum(axis=2) - active.sum(axis=1)
        return (float(g) * coeff,)

    out = Tensor.from_op(np.asarray(total), (dist,), bwd)
    return out, int(active.sum())


def _batch_all(z, labels, spec: MarginSpec, reduction: str) -> LossOutput:
    if reduction not in REDUCTIONS:
        raise ValueError(f"unknown reduction: {reduction!r}")
    z = Tensor.as_tensor(z)
    y = _as_labels(labels)
    if z.data.ndim != 2 or z.data.shape[0] != y.size:
        raise ValueError(f"embeddings {z.data.shape} do not match {y.size} labels")
    mask = build_mask(y)
    n_valid = mask.count
    if n_valid == 0:
        warnings.warn("batch has no valid triplets; loss is 0", stacklevel=3)
        zero = Tensor(np.asarray(0.0))
        return LossOutput(0.0, 0, 0, reduction, loss=zero, no_valid_triplets=True)

    dist = pairwise_dist(z, squared=False)
    total, n_active = _masked_triplet_hinge(dist, mask.valid, _margin_cube(y, spec))
    if reduction == "mean_active":
        loss = total * (1.0 / max(n_active, 1))
    else:
        loss = total
    return LossOutput(loss.item(), n_active, n_valid, reduction, loss=loss)


def batch_all_triplet_fixed(z, labels, spec: MarginSpec | None = None,
                            reduction: str = "mean_active") -> LossOutput:
    """Batch-all triplet loss with a constant margin over all valid triples."""
    spec = spec or MarginSpec(mode="fixed")
    if spec.mode != "fixed":
        raise ValueError("batch_all_triplet_fixed requires a fixed-margin spec")
    return _batch_all(z, labels, spec, reduction)


def batch_all_triplet_adaptive(z, labels, spec: MarginSpec | None = None,
                               reduction: str = "mean_active") -> LossOutput:
    """Batch-all triplet loss whose margin is the label gap scaled by 1/kappa."""
    spec = spec or MarginSpec(mode="adaptive")
    if spec.mode != "adaptive":
        raise ValueError("batch_all_triplet_adaptive requires an adaptive-margin spec")
    return _batch_all(z, labels, spec, reduction)


def triplet_margin(y_i: float, y_j: float, y_k: float, spec: MarginSpec) -> float:
    """Margin a single (anchor, positive, negative) triple receives under `spec`."""
    if spec.mode == "fixed":
        return float(spec.m)
    gap = label_distance(y_i, y_k) - label_distance(y_i, y_j)
    if spec.sign_mode == "literal":
        gap = -gap
    return gap / spec.kappa


def adaptive_grad_condition(z_i, z_j, z_k, labels, spec: MarginSpec) -> bool:
    """Whether one triple produces a nonzero gradient contribution.

    True iff ||z_i - z_j|| + margin(i,j,k) > ||z_i - z_k||, i.e. the hinge is
    open; agrees exactly with the loss backward's active indicator.
    """
    y_i, y_j, y_k = (float(v) for v in np.asarray(labels, dtype=np.float64).reshape(-1)[:3])
    z_i = np.asarray(z_i, dtype=np.float64).reshape(-1)
    z_j = np.asarray(z_j, dtype=np.float64).reshape(-1)
    z_k = np.asarray(z_k, dtype=np.float64).reshape(-1)
    d_ij = float(np.linalg.norm(z_i - z_j))
    d_ik = float(np.linalg.norm(z_i - z_k))
    return d_ij + triplet_margin(y_i, y_j, y_k, spec) > d_ik


def classification_triplet_loss(z_a, z_p, z_n, m: float = 0.5) -> Tensor:
    """Classification-style triplet loss with squared norms, summed over rows.

    sum_i max(0, ||z_a_i - z_p_i||^2 - ||z_a_i - z_n_i||^2 + m). Inputs are
    row-aligned batches of embeddings.
    """
    z_a = Tensor.as_tensor(z_a)
    z_p = Tensor.as_tensor(z_p)
    z_n = Tensor.as_tensor(z_n)
    if not (z_a.shape == z_p.shape == z_n.shape):
        raise ValueError("anchor/positive/negative batches must share a shape")
    dp = z_a - z_p
    dn = z_a - z_n
    sq_ap = (dp * dp).sum_rows()
    sq_an = (dn * dn).sum_rows()
    return (sq_ap - sq_an + m).relu().sum()


def offline_hard_triplets(
    labels,
    anchors_per_epoch: int,
    per_anchor: int = 10,
    seed: int = 0,
) -> list[tuple[int, int, int]]:
    """Precompute hard triplets: smallest positive label-gap pairs per anchor.

    Anchors are drawn without replacement. For each anchor a, candidate pairs
    (j, k) must satisfy the validity predicate |y_a - y_j| < |y_a - y_k|; the
    `per_anchor` pairs minimizing |y_a - y_k| - |y_a - y_j| are kept, ties
    broken by ascending (j, k). Anchors with no valid pair are skipped with a
    warning. Deterministic given `seed`.
    """
    y = _as_labels(labels)
    n = y.size
    if n < 3:
        raise BatchTooSmallError(f"need at least 3 samples, got {n}")
    if per_anchor < 1:
        raise ValueError("per_anchor must be >= 1")
    rng = np.random.default_rng(seed)
    n_anchors = min(int(anchors_per_epoch), n)
    anchors = np.sort(rng.choice(n, size=n_anchors, replace=False))

    triplets: list[tuple[int, int, int]] = []
    skipped = 0
    for a in anchors:
        d = np.abs(y - y[a])
        gap = d[None, :] - d[:, None]  # gap[j, k] = d_k - d_j
        ok = gap > 0.0
        ok[a, :] = False
        ok[:, a] = False
        np.fill_diagonal(ok, False)
        if not ok.any():
            skipped += 1
            continue
        flat_gap = np.where(ok, gap, np.inf).reshape(-1)
        avail = int(ok.sum())
        keep = min(per_anchor, avail)
        cutoff = np.partition(flat_gap, keep - 1)[keep - 1]
        cand = np.flatnonzero(flat_gap <= cutoff)
        cj, ck = np.divmod(cand, n)
        order = np.lexsort((ck, cj, flat_gap[cand]))[:keep]
        triplets.extend((int(a), int(cj[o]), int(ck[o])) for o in order)
    if skipped:
        warnings.warn(f"{skipped} anchors had no valid (positive, negative) pair", stacklevel=2)
    return triplets
