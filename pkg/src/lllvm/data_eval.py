"""Synthetic data, matrix CSV I/O and embedding quality metrics."""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np
from scipy.spatial import procrustes
from scipy.spatial.distance import cdist

from .errors import InvalidParameterError, ParseError

T_RANGE = (1.5 * np.pi, 4.5 * np.pi)
H_RANGE = (0.0, 20.0)


@dataclass(frozen=True, eq=False)
class LabeledEmbedding:
    """Embedding coordinates with optional integer class labels."""

    coords: np.ndarray
    labels: np.ndarray | None = None

    def __post_init__(self):
        coords = np.asarray(self.coords, dtype=float)
        if coords.ndim != 2:
            raise InvalidParameterError(f"coords must be 2-D, got shape {coords.shape}")
        object.__setattr__(self, "coords", coords)
        if self.labels is not None:
            labels = np.asarray(self.labels)
            if labels.shape != (coords.shape[0],):
                raise InvalidParameterError(
                    f"expected {coords.shape[0]} labels, got shape {labels.shape}"
                )
            object.__setattr__(self, "labels", labels)


def swiss_roll(n: int, noise_sd: float = 0.05, seed: int = 0):
    """Sample a Swiss roll.

    Parameters
    ----------
    n : int
        Number of points, at least 1.
    noise_sd : float
        Standard deviation of isotropic Gaussian noise added to ``Y``.
    seed : int
        Seed for :func:`numpy.random.default_rng`.

    Returns
    -------
    Y : ndarray, shape (n, 3)
        ``(t cos t, h, t sin t)`` plus noise.
    X_true : ndarray, shape (n, 2)
        The latent ``(t, h)``, uniform on ``[1.5π, 4.5π] x [0, 20]``.
    """
    if not isinstance(n, (int, np.integer)) or n < 1:
        raise InvalidParameterError(f"n must be a positive integer, got {n!r}")
    if not noise_sd >= 0:
        raise InvalidParameterError(f"noise_sd must be nonnegative, got {noise_sd!r}")
    rng = np.random.default_rng(seed)
    t = rng.uniform(*T_RANGE, size=n)
    h = rng.uniform(*H_RANGE, size=n)
    Y = np.column_stack([t * np.cos(t), h, t * np.sin(t)])
    if noise_sd > 0:
        Y = Y + noise_sd * rng.standard_normal(Y.shape)
    return Y, np.column_stack([t, h])


def procrustes_error(X_est, X_true) -> float:
    """Residual sum of squares after optimal similarity alignment of standardised inputs.

    Both inputs are centred and scaled to unit Frobenius norm, ``X_est`` is then
    rotated (reflections allowed) and isotropically scaled onto ``X_true``.
    The result lies in ``[0, 1]``.
    """
    A = np.asarray(X_true, dtype=float)
    B = np.asarray(X_est, dtype=float)
    if A.shape != B.shape or A.ndim != 2:
        raise InvalidParameterError(f"shape mismatch: {B.shape} vs {A.shape}")
    if A.shape[0] < A.shape[1]:
        raise InvalidParameterError("procrustes_error needs at least as many points as dimensions")
    for M, name in ((A, "X_true"), (B, "X_est")):
        if not np.all(np.isfinite(M)):
            raise InvalidParameterError(f"{name} has non-finite entries")
        if np.linalg.norm(M - M.mean(axis=0)) == 0:
            raise InvalidParameterError(f"{name} has zero variance")
    _, _, disparity = procrustes(A, B)
    return float(disparity)


def knn_classify_cv(embedding: LabeledEmbedding, folds: int = 10, seed: int = 0) -> float:
    """Stratified ``folds``-fold cross-validated 1-NN error rate.

    Folds are assigned per distinct ``(coords, label)`` row, so exact duplicates
    always share a fold and never act as each other's neighbour across the
    train/test split. Distance ties go to the lower training index.
    """
    if embedding.labels is None:
        raise InvalidParameterError("knn_classify_cv requires labels")
    if not isinstance(folds, (int, np.integer)) or folds < 2:
        raise InvalidParameterError(f"folds must be an integer >= 2, got {folds!r}")
    X, labels = embedding.coords, embedding.labels
    n = X.shape[0]
    keys = np.column_stack([X, np.unique(labels, return_inverse=True)[1]])
    _, first, group = np.unique(keys, axis=0, return_index=True, return_inverse=True)
    # number groups by first occurrence so fold assignment follows input order
    order = np.argsort(first, kind="stable")
    rank = np.empty_like(order)
    rank[order] = np.arange(len(order))
    group = rank[group.ravel()]
    group_label = labels[np.sort(first)]

    rng = np.random.default_rng(seed)
    fold_of_group = np.empty(len(first), dtype=int)
    for c in np.unique(group_label):
        members = np.flatnonzero(group_label == c)
        if len(members) < folds:
            raise InvalidParameterError(
                f"class {c!r} has {len(members)} distinct members, fewer than folds={folds}"
            )
        members = rng.permutation(members)
        fold_of_group[members] = np.arange(len(members)) % folds
    fold = fold_of_group[group]

    errors = []
    for f in range(folds):
        test = np.flatnonzero(fold == f)
        train = np.flatnonzero(fold != f)
        if len(test) == 0:
            continue
        nearest = train[np.argmin(cdist(X[test], X[train]), axis=1)]
        errors.append(np.mean(labels[nearest] != labels[test]))
    return float(np.mean(errors)) if n else float("nan")


def save_matrix_csv(matrix, path) -> None:
    """Write a 2-D array as header-less CSV with 17 significant digits."""
    M = np.atleast_2d(np.asarray(matrix, dtype=float))
    if M.ndim != 2:
        raise InvalidParameterError(f"expected a 2-D matrix, got shape {M.shape}")
    np.savetxt(path, M, delimiter=",", fmt="%.17g")


def load_matrix_csv(path) -> np.ndarray:
    """Read a header-less numeric CSV; errors name the offending line."""
    rows = []
    width = None
    with open(path, newline="") as fh:
        for lineno, row in enumerate(csv.reader(fh), start=1):
            if not row or all(not c.strip() for c in row):
                continue
            try:
                vals = [float(c) for c in row]
            except ValueError as exc:
                raise ParseError(f"non-numeric cell in {row}", line=lineno) from exc
            if width is None:
                width = len(vals)
            elif len(vals) != width:
                raise ParseError(f"expected {width} columns, got {len(vals)}", line=lineno)
            rows.append(vals)
    if not rows:
        raise ParseError("file contains no data", line=1)
    return np.array(rows)
