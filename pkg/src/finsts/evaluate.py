"""Scoring and evaluation: AUC on augmented and annotated pairs, model
comparison tables, and the category-exclusion ablation."""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from . import metrics, trainer
from .augment import SHIFT_CATEGORIES, ShiftCategory, TripletDataset
from .corpus import Sentence, tokenize
from .matching import NarrativePair
from .trainer import HeadParameters, TrainingConfig


class EvaluateError(ValueError):
    pass


class MissingCategoryError(EvaluateError):
    pass


@dataclass(frozen=True)
class LabeledPair:
    pair: NarrativePair
    label: int
    category: ShiftCategory | None = None

    def __post_init__(self):
        if self.label not in (1, -1):
            raise EvaluateError(f"label must be 1 or -1, got {self.label}")
        if self.label == -1:
            if self.category is None or self.category not in SHIFT_CATEGORIES:
                raise EvaluateError("label -1 requires a category in C1..C4")
        elif self.category is not None:
            raise EvaluateError("label 1 must not carry a category")


@dataclass
class EvalReport:
    model_name: str
    auc: float
    n_positive: int
    n_negative: int
    per_category_auc: dict[str, float] = field(default_factory=dict)

    def to_json(self) -> dict:
        return {
            "model_name": self.model_name,
            "auc": self.auc,
            "n_positive": self.n_positive,
            "n_negative": self.n_negative,
            "per_category_auc": self.per_category_auc,
        }


def score_pair(head: HeadParameters | None, a, b) -> float:
    """Cosine of projected embeddings, or raw cosine in baseline mode."""
    if head is None:
        return metrics.cosine(a, b)
    return metrics.cosine(trainer.project(head, a), trainer.project(head, b))


def _score_rows(head: HeadParameters | None, a: np.ndarray, b: np.ndarray) -> np.ndarray:
    if head is not None:
        a = trainer.project_rows(head, a)
        b = trainer.project_rows(head, b)
    return metrics.row_cosine(a, b)


def eval_augmented(
    ds_test: TripletDataset,
    head: HeadParameters | None,
    embeddings,
    model_name: str = "head",
) -> EvalReport:
    """AUC of anchor/positive scores against anchor/negative scores."""
    if not ds_test.records:
        raise EvaluateError("test set is empty")
    anchors = embeddings.embed([r.anchor for r in ds_test.records])
    positives = embeddings.embed([r.positive for r in ds_test.records])
    negatives = embeddings.embed([r.negative for r in ds_test.records])

    pos_scores = _score_rows(head, anchors, positives)
    neg_scores = _score_rows(head, anchors, negatives)

    per_category = {}
    for category in SHIFT_CATEGORIES:
        mask = [r.category == category for r in ds_test.records]
        if any(mask):
            per_category[category.value] = metrics.auc(
                pos_scores.tolist(), neg_scores[np.asarray(mask)].tolist()
            )
    return EvalReport(
        model_name=model_name,
        auc=metrics.auc(pos_scores.tolist(), neg_scores.tolist()),
        n_positive=len(pos_scores),
        n_negative=len(neg_scores),
        per_category_auc=per_category,
    )


def eval_annotated(
    pairs: list[LabeledPair],
    head: HeadParameters | None,
    embeddings,
    model_name: str = "head",
) -> EvalReport:
    """AUC of no-shift pair scores against shifted pair scores.

    Per-category AUC pools all positives against one category's negatives.
    """
    if not pairs:
        raise EvaluateError("no labeled pairs")
    labels = {p.label for p in pairs}
    if labels != {1, -1}:
        raise EvaluateError("need at least one pair of each label")

    a_rows = embeddings.embed([p.pair.sentence_a.text for p in pairs])
    b_rows = embeddings.embed([p.pair.sentence_b.text for p in pairs])
    scores = _score_rows(head, a_rows, b_rows)

    pos_scores = [float(s) for s, p in zip(scores, pairs) if p.label == 1]
    neg_scores = [float(s) for s, p in zip(scores, pairs) if p.label == -1]

    per_category = {}
    for category in SHIFT_CATEGORIES:
        cat_scores = [
            float(s) for s, p in zip(scores, pairs) if p.label == -1 and p.category == category
        ]
        if cat_scores:
            per_category[category.value] = metrics.auc(pos_scores, cat_scores)
    return EvalReport(
        model_name=model_name,
        auc=metrics.auc(pos_scores, neg_scores),
        n_positive=len(pos_scores),
        n_negative=len(neg_scores),
        per_category_auc=per_category,
    )


def compare_models(reports: list[EvalReport], baseline_name: str | None = None) -> list[dict]:
    """AUC table with each model's percentage improvement over the baseline.

    Improvements are computed on unrounded AUCs; rendering rounds to two
    decimals.
    """
    if len(reports) < 2:
        raise EvaluateError("compare_models needs at least two reports")
    baseline = reports[0]
    if baseline_name is not None:
        matches = [r for r in reports if r.model_name == baseline_name]
        if not matches:
            raise EvaluateError(f"no report named {baseline_name!r}")
        baseline = matches[0]
    if baseline.auc == 0:
        raise EvaluateError("baseline AUC is zero")
    rows = []
    for report in reports:
        rows.append(
            {
                "model": report.model_name,
                "auc": report.auc,
                "improvement_pct": 100.0 * (report.auc - baseline.auc) / baseline.auc,
                "is_baseline": report is baseline,
            }
        )
    return rows


def render_comparison(rows: list[dict]) -> str:
    width = max(len(r["model"]) for r in rows)
    lines = [f"{'model'.ljust(width)}  {'auc':>8}  {'vs base':>9}"]
    for row in rows:
        marker = "  (base)" if row["is_baseline"] else f"{row['improvement_pct']:+8.2f}%"
        lines.append(f"{row['model'].ljust(width)}  {row['auc']:8.4f}  {marker:>9}")
    return "\n".join(lines)


@dataclass
class AblationResult:
    """4x4 AUC grid: rows exclude one category from training, columns
    evaluate one category's negatives."""

    excluded: list[str]
    evaluated: list[str]
    matrix: list[list[float]]

    def to_json(self) -> dict:
        return {"excluded": self.excluded, "evaluated": self.evaluated, "matrix": self.matrix}

    def render(self) -> str:
        header = "             " + "  ".join(f"{c:>7}" for c in self.evaluated)
        lines = [header]
        for name, row in zip(self.excluded, self.matrix):
            cells = "  ".join(f"{v:7.4f}" for v in row)
            lines.append(f"train w/o {name}  {cells}")
        return "\n".join(lines)


def ablation_run(
    ds: TripletDataset,
    annotated: list[LabeledPair],
    embeddings,
    cfg: TrainingConfig,
    head_dim: int | None = None,
) -> AblationResult:
    """Retrain with each category excluded; report per-category AUC.

    Each run derives its seed as cfg.seed plus the category index so the
    four trainings are independent but reproducible.
    """
    train_categories = ds.categories()
    annotated_categories = {p.category for p in annotated if p.label == -1}
    for category in SHIFT_CATEGORIES:
        if category not in train_categories:
            raise MissingCategoryError(f"training data has no {category.value} triplets")
        if category not in annotated_categories:
            raise MissingCategoryError(f"annotated set has no {category.value} negatives")

    matrix = []
    for index, excluded in enumerate(SHIFT_CATEGORIES):
        subset = ds.without_category(excluded)
        run_cfg = replace(cfg, seed=cfg.seed + index + 1)
        head, _ = trainer.train(subset, embeddings, run_cfg, head_dim=head_dim)
        report = eval_annotated(annotated, head, embeddings, model_name=f"without_{excluded.value}")
        matrix.append([report.per_category_auc[c.value] for c in SHIFT_CATEGORIES])
    names = [c.value for c in SHIFT_CATEGORIES]
    return AblationResult(excluded=list(names), evaluated=list(names), matrix=matrix)


def load_labeled_pairs(path_or_lines) -> list[LabeledPair]:
    """Parse annotated pairs from JSON Lines
    {"pair_id", "sentence_a", "sentence_b", "label", "category"?}."""
    if isinstance(path_or_lines, Path):
        lines = path_or_lines.read_text(encoding="utf-8").splitlines()
    elif isinstance(path_or_lines, str):
        candidate = None
        if "\n" not in path_or_lines:
            try:
                candidate = Path(path_or_lines)
                candidate = candidate if candidate.is_file() else None
            except OSError:
                candidate = None
        if candidate is not None:
            lines = candidate.read_text(encoding="utf-8").splitlines()
        else:
            lines = path_or_lines.splitlines()
    else:
        lines = list(path_or_lines)

    pairs = []
    for line in lines:
        if not line.strip():
            continue
        record = json.loads(line)
        pair_id = record["pair_id"]
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
        pair = NarrativePair(
            id=pair_id,
            sentence_a=sent_a,
            sentence_b=sent_b,
            match_similarity=float(record.get("match_similarity", 0.0)),
            company=record.get("company", ""),
        )
        category = record.get("category")
        pairs.append(
            LabeledPair(
                pair=pair,
                label=int(record["label"]),
                category=ShiftCategory(category) if category else None,
            )
        )
    return pairs
