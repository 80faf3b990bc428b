"""Cross-period sentence pairing: cosine similarity matrices and an exact
assignment solver that maximizes total similarity."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .corpus import Sentence
from .metrics import DimensionMismatchError, ZeroNormError


class MatchingError(ValueError):
    pass


class EmptyMatrixError(MatchingError):
    pass


@dataclass
class SimilarityMatrix:
    values: np.ndarray
    row_ids: list[str]
    col_ids: list[str]


@dataclass
class Assignment:
    matches: list[tuple[int, int, float]]
    unmatched_rows: list[int] = field(default_factory=list)
    unmatched_cols: list[int] = field(default_factory=list)


@dataclass(frozen=True)
class NarrativePair:
    """Two sentences from different periods of one company, plus the
    similarity under which they were matched."""

    id: str
    sentence_a: Sentence
    sentence_b: Sentence
    match_similarity: float
    company: str

    def __post_init__(self):
        if self.sentence_a.doc_id == self.sentence_b.doc_id:
            raise MatchingError("pair sentences must come from different documents")


def similarity_matrix(rows, cols, row_ids=None, col_ids=None) -> SimilarityMatrix:
    """Pairwise cosine similarities: values[i][j] = cosine(rows[i], cols[j])."""
    r = np.asarray(rows, dtype=np.float64)
    c = np.asarray(cols, dtype=np.float64)
    if r.ndim != 2 or c.ndim != 2:
        raise DimensionMismatchError("similarity_matrix expects 2-d inputs")
    if r.shape[1] != c.shape[1]:
        raise DimensionMismatchError(
            f"embedding dims differ: {r.shape[1]} vs {c.shape[1]}"
        )
    r_norm = np.linalg.norm(r, axis=1)
    c_norm = np.linalg.norm(c, axis=1)
    if np.any(r_norm == 0.0) or np.any(c_norm == 0.0):
        raise ZeroNormError("zero-norm embedding row")
    values = (r / r_norm[:, None]) @ (c / c_norm[:, None]).T
    values = np.clip(values, -1.0, 1.0)
    return SimilarityMatrix(
        values=values,
        row_ids=list(row_ids) if row_ids is not None else [str(i) for i in range(r.shape[0])],
        col_ids=list(col_ids) if col_ids is not None else [str(j) for j in range(c.shape[0])],
    )


def _solve_square_min(cost: np.ndarray) -> list[int]:
    """Exact minimum-cost assignment for a square matrix, O(n^3).

    Shortest augmenting paths with row/column potentials; rows are inserted
    in index order and column scans break ties on the lowest index, so the
    result is deterministic. Returns the column assigned to each row.
    """
    n = cost.shape[0]
    u = np.zeros(n + 1)
    v = np.zeros(n + 1)
    # matched[j] = row occupying column j (1-based; column 0 is virtual)
    matched = np.zeros(n + 1, dtype=np.int64)
    way = np.zeros(n + 1, dtype=np.int64)

    for row in range(1, n + 1):
        matched[0] = row
        j0 = 0
        minv = np.full(n + 1, np.inf)
        used = np.zeros(n + 1, dtype=bool)
        while True:
            used[j0] = True
            i0 = matched[j0]
            reduced = cost[i0 - 1, :] - u[i0] - v[1:]
            free = ~used[1:]
            better = free & (reduced < minv[1:])
            minv[1:][better] = reduced[better]
            way[1:][better] = j0
            candidates = np.where(free, minv[1:], np.inf)
            j1 = int(np.argmin(candidates)) + 1
            delta = candidates[j1 - 1]
            u[matched[used]] += delta
            v[used] -= delta
            minv[1:][free] -= delta
            j0 = j1
            if matched[j0] == 0:
                break
        while j0 != 0:
            j1 = int(way[j0])
            matched[j0] = matched[j1]
            j0 = j1

    row_to_col = [0] * n
    for j in range(1, n + 1):
        if matched[j]:
            row_to_col[int(matched[j]) - 1] = j - 1
    return row_to_col


def hungarian_assign(sim) -> Assignment:
    """Matching that maximizes total similarity; exact for any finite matrix.

    Similarities are negated into costs; rectangular inputs are padded with
    a cost strictly larger than any real entry, and rows or columns that land
    on padding are reported as unmatched.
    """
    values = sim.values if isinstance(sim, SimilarityMatrix) else np.asarray(sim, dtype=np.float64)
    if values.ndim != 2 or values.size == 0:
        raise EmptyMatrixError("assignment requires a non-empty 2-d matrix")
    if not np.all(np.isfinite(values)):
        raise MatchingError("assignment requires finite entries")

    n_rows, n_cols = values.shape
    cost = -values
    size = max(n_rows, n_cols)
    padded = np.full((size, size), float(cost.max()) + 1.0)
    padded[:n_rows, :n_cols] = cost
    row_to_col = _solve_square_min(padded)

    matches: list[tuple[int, int, float]] = []
    unmatched_rows: list[int] = []
    taken_cols: set[int] = set()
    for row in range(n_rows):
        col = row_to_col[row]
        if col < n_cols:
            matches.append((row, col, float(values[row, col])))
            taken_cols.add(col)
        else:
            unmatched_rows.append(row)
    unmatched_cols = [c for c in range(n_cols) if c not in taken_cols]
    return Assignment(matches=matches, unmatched_rows=unmatched_rows, unmatched_cols=unmatched_cols)


def build_pairs(
    assignment: Assignment,
    sents_a: Sequence[Sentence],
    sents_b: Sequence[Sentence],
    min_similarity: float = 0.0,
    company: str = "",
) -> list[NarrativePair]:
    """Turn assignment matches at or above the similarity floor into pairs,
    ordered by descending similarity."""
    for row, col, _ in assignment.matches:
        if not (0 <= row < len(sents_a)) or not (0 <= col < len(sents_b)):
            raise IndexError(f"assignment index ({row}, {col}) out of range")
    kept = [m for m in assignment.matches if m[2] >= min_similarity]
    kept.sort(key=lambda m: (-m[2], m[0], m[1]))
    pairs = []
    for row, col, sim in kept:
        sent_a = sents_a[row]
        sent_b = sents_b[col]
        pair_id = f"{company}:{sent_a.id}~{sent_b.id}" if company else f"{sent_a.id}~{sent_b.id}"
        pairs.append(
            NarrativePair(
                id=pair_id,
                sentence_a=sent_a,
                sentence_b=sent_b,
                match_similarity=sim,
                company=company,
            )
        )
    return pairs


def write_pairs(pairs, path) -> None:
    """Export pairs as JSON Lines with sentence texts inline."""
    with open(path, "w", encoding="utf-8") as handle:
        for pair in pairs:
            record = {
                "id": pair.id,
                "company": pair.company,
                "sentence_a": pair.sentence_a.text,
                "sentence_b": pair.sentence_b.text,
                "match_similarity": pair.match_similarity,
            }
            handle.write(json.dumps(record, ensure_ascii=False, sort_keys=True) + "\n")


def read_pairs(path) -> list[NarrativePair]:
    """Load exported pairs; sentences are rebuilt as minimal stubs."""
    from .corpus import tokenize

    pairs = []
    with open(path, "r", encoding="utf-8") as handle:
        for line in handle:
            if not line.strip():
                continue
            record = json.loads(line)
            pair_id = record["id"]
            sent_a = Sentence(
                id=f"{pair_id}:a",
                doc_id=f"{pair_id}:a",
                index=0,
                text=record["sentence_a"],
                token_count=len(tokenize(record["sentence_a"])),
            )
            sent_b = Sentence(
                id=f"{pair_id}:b",
                doc_id=f"{pair_id}:b",
                index=0,
                text=record["sentence_b"],
                token_count=len(tokenize(record["sentence_b"])),
            )
            pairs.append(
                NarrativePair(
                    id=pair_id,
                    sentence_a=sent_a,
                    sentence_b=sent_b,
                    match_similarity=float(record.get("match_similarity", 0.0)),
                    company=record.get("company", ""),
                )
            )
    return pairs
