"""Shared numerical metrics: cosine, mean pooling, Jaccard, AUC,
Cohen's kappa, SPD log-determinant, and the coding-rate transferability
score.

Vectors and matrices are float64 numpy arrays. Every function is pure and
stateless, so callers may invoke them from any number of workers.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np


class MetricError(ValueError):
    """Raised when a metric precondition is violated."""


class DimensionMismatchError(MetricError):
    pass


class ZeroNormError(MetricError):
    pass


class EmptyPoolError(MetricError):
    pass


class EmptyInputError(MetricError):
    pass


class NotSPDError(MetricError):
    pass


@dataclass(frozen=True)
class AssessConfig:
    """Settings for the transferability score.

    ``distortion`` is the rate-distortion parameter of the coding-rate term.
    ``center_per_class`` re-centers each class block on its own mean;
    otherwise class blocks inherit the whole-set centering.
    """

    distortion: float = 1.0
    center_per_class: bool = True

    def __post_init__(self):
        if not self.distortion > 0:
            raise MetricError(f"distortion must be > 0, got {self.distortion}")


def _vector(x, name: str) -> np.ndarray:
    v = np.asarray(x, dtype=np.float64)
    if v.ndim != 1:
        raise DimensionMismatchError(f"{name} must be a 1-d vector, got shape {v.shape}")
    return v


def _matrix(x, name: str) -> np.ndarray:
    m = np.asarray(x, dtype=np.float64)
    if m.ndim != 2:
        raise DimensionMismatchError(f"{name} must be a 2-d matrix, got shape {m.shape}")
    return m


def cosine(a, b) -> float:
    """Cosine similarity a.b / (|a||b|), clipped into [-1, 1]."""
    va = _vector(a, "a")
    vb = _vector(b, "b")
    if va.shape[0] != vb.shape[0]:
        raise DimensionMismatchError(f"dimension mismatch: {va.shape[0]} vs {vb.shape[0]}")
    na = float(np.linalg.norm(va))
    nb = float(np.linalg.norm(vb))
    if na == 0.0 or nb == 0.0:
        raise ZeroNormError("cosine undefined for zero-norm vector")
    value = float(np.dot(va, vb) / (na * nb))
    return min(1.0, max(-1.0, value))


def row_cosine(a, b) -> np.ndarray:
    """Row-wise cosine between two equal-shape matrices (one score per row)."""
    ma = _matrix(a, "a")
    mb = _matrix(b, "b")
    if ma.shape != mb.shape:
        raise DimensionMismatchError(f"shape mismatch: {ma.shape} vs {mb.shape}")
    na = np.linalg.norm(ma, axis=1)
    nb = np.linalg.norm(mb, axis=1)
    if np.any(na == 0.0) or np.any(nb == 0.0):
        raise ZeroNormError("row cosine undefined for zero-norm row")
    values = np.einsum("ij,ij->i", ma, mb) / (na * nb)
    return np.clip(values, -1.0, 1.0)


def mean_pool(token_vectors) -> np.ndarray:
    """Column-wise mean of a (tokens x dim) matrix."""
    m = _matrix(token_vectors, "token_vectors")
    if m.shape[0] == 0:
        raise EmptyPoolError("cannot mean-pool an empty matrix")
    return m.mean(axis=0)


def jaccard(a: Iterable[str], b: Iterable[str]) -> float:
    """|a & b| / |a | b| over token sets; 1.0 when both sets are empty."""
    sa = set(a)
    sb = set(b)
    if not sa and not sb:
        return 1.0
    return len(sa & sb) / len(sa | sb)


def auc(positive_scores: Sequence[float], negative_scores: Sequence[float]) -> float:
    """Probability that a random positive outscores a random negative.

    Ties count half. Computed with the rank statistic (midranks over the
    pooled scores), which equals brute-force pair counting exactly.
    """
    pos = [float(x) for x in positive_scores]
    neg = [float(x) for x in negative_scores]
    if not pos or not neg:
        raise EmptyInputError("auc needs at least one positive and one negative score")
    if not all(math.isfinite(x) for x in pos + neg):
        raise MetricError("auc requires finite scores")

    combined = pos + neg
    order = sorted(range(len(combined)), key=combined.__getitem__)
    ranks = [0.0] * len(combined)
    i = 0
    while i < len(order):
        j = i
        while j + 1 < len(order) and combined[order[j + 1]] == combined[order[i]]:
            j += 1
        midrank = (i + j) / 2.0 + 1.0
        for t in range(i, j + 1):
            ranks[order[t]] = midrank
        i = j + 1

    n_pos = len(pos)
    n_neg = len(neg)
    rank_sum = sum(ranks[:n_pos])
    u = rank_sum - n_pos * (n_pos + 1) / 2.0
    return u / (n_pos * n_neg)


def cohens_kappa(labels_a: Sequence, labels_b: Sequence) -> float:
    """Chance-corrected agreement (p_o - p_e) / (1 - p_e).

    Evaluated with integer count arithmetic so small tables come out exact:
    kappa = (n * agreements - sum_c a_c * b_c) / (n^2 - sum_c a_c * b_c).
    Returns 1.0 when chance agreement is 1 (both raters constant and equal).
    """
    if len(labels_a) != len(labels_b):
        raise DimensionMismatchError(
            f"label lists differ in length: {len(labels_a)} vs {len(labels_b)}"
        )
    n = len(labels_a)
    if n == 0:
        raise EmptyInputError("cohens_kappa needs at least one label pair")

    agreements = sum(1 for x, y in zip(labels_a, labels_b) if x == y)
    chance = 0
    for cat in set(labels_a) | set(labels_b):
        count_a = sum(1 for x in labels_a if x == cat)
        count_b = sum(1 for y in labels_b if y == cat)
        chance += count_a * count_b

    denominator = n * n - chance
    if denominator == 0:
        return 1.0
    return (n * agreements - chance) / denominator


def spd_logdet(m) -> float:
    """log det of a symmetric positive-definite matrix via Cholesky.

    Never forms the determinant itself: returns 2 * sum(log(diag(L))).
    """
    a = _matrix(m, "m")
    if a.shape[0] != a.shape[1]:
        raise NotSPDError(f"matrix must be square, got {a.shape}")
    if a.size and float(np.max(np.abs(a - a.T))) > 1e-9:
        raise NotSPDError("matrix is not symmetric within tolerance 1e-9")
    try:
        chol = np.linalg.cholesky(a)
    except np.linalg.LinAlgError as exc:
        raise NotSPDError("matrix is not positive definite") from exc
    return float(2.0 * np.sum(np.log(np.diag(chol))))


def coding_rate(rows, distortion: float) -> float:
    """Rate term (1/2) logdet(I_d + d / (m * distortion^2) * A^T A)."""
    a = _matrix(rows, "rows")
    m, d = a.shape
    if m == 0:
        return 0.0
    gram = np.eye(d) + (d / (m * distortion**2)) * (a.T @ a)
    return 0.5 * spd_logdet(gram)


def transrate(z, y, cfg: AssessConfig | None = None) -> float:
    """Whole-set coding rate minus the class-weighted conditional rates.

    Low values mean the classes are hard to tell apart in the embedding
    space. Single-class input yields exactly 0.
    """
    cfg = cfg or AssessConfig()
    mat = _matrix(z, "z")
    labels = np.asarray(y)
    if labels.ndim != 1 or labels.shape[0] != mat.shape[0]:
        raise DimensionMismatchError(
            f"labels length {labels.shape} does not match {mat.shape[0]} rows"
        )
    n = mat.shape[0]
    if n < 2:
        raise MetricError("transrate needs at least 2 rows")

    centered = mat - mat.mean(axis=0)
    result = coding_rate(centered, cfg.distortion)
    for cls in sorted(set(labels.tolist())):
        mask = labels == cls
        count = int(mask.sum())
        if count == 0:
            continue
        if cfg.center_per_class:
            block = mat[mask] - mat[mask].mean(axis=0)
        else:
            block = centered[mask]
        result -= (count / n) * coding_rate(block, cfg.distortion)
    return float(result)
