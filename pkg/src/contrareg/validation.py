"""Input validation helpers shared by the estimators and the CLI."""

from __future__ import annotations

import numpy as np

__all__ = ["as_sequences", "check_labels"]


def as_sequences(X, input_dim: int | None = None) -> list[np.ndarray]:
    """Coerce X to a list of float64 (T_i, input_dim) feature sequences.

    Accepts a list/tuple of 2-D arrays (variable T) or a single 3-D array of
    shape (n, T, input_dim).
    """
    if isinstance(X, np.ndarray):
        if X.ndim == 3:
            seqs = [np.asarray(x, dtype=np.float64) for x in X]
        elif X.ndim == 2:
            seqs = [np.asarray(X, dtype=np.float64)]
        else:
            raise ValueError(f"expected a 3-D array of sequences, got ndim={X.ndim}")
    else:
        seqs = [np.asarray(x, dtype=np.float64) for x in X]
    if not seqs:
        raise ValueError("X is empty")
    for i, x in enumerate(seqs):
        if x.ndim != 2 or x.shape[0] < 1:
            raise ValueError(f"X[{i}]: expected a (T >= 1, d) sequence, got shape {x.shape}")
        if not np.all(np.isfinite(x)):
            raise ValueError(f"X[{i}]: non-finite feature values")
    dims = {x.shape[1] for x in seqs}
    if len(dims) != 1:
        raise ValueError(f"inconsistent feature dimensions: {sorted(dims)}")
    if input_dim is not None and dims != {input_dim}:
        raise ValueError(f"expected feature dimension {input_dim}, got {dims.pop()}")
    return seqs


def check_labels(y, n: int, lo: float = 1.0, hi: float = 5.0) -> np.ndarray:
    """Validate continuous quality labels against the configured range."""
    y = np.asarray(y, dtype=np.float64).reshape(-1)
    if y.size != n:
        raise ValueError(f"got {y.size} labels for {n} sequences")
    if not np.all(np.isfinite(y)):
        raise ValueError("labels must be finite")
    if np.any(y < lo) or np.any(y > hi):
        raise ValueError(f"labels must lie in [{lo}, {hi}]")
    return y
