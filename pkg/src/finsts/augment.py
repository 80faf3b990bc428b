"""Triplet data generation: category prompt templates, a chat-completion
client with retry and caching, dataset assembly, and quality assessment."""

from __future__ import annotations

import dataclasses
import hashlib
import json
import logging
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path

import numpy as np

from . import corpus, metrics
from .corpus import Sentence

log = logging.getLogger(__name__)


class AugmentError(ValueError):
    pass


class EmptySentenceError(AugmentError):
    pass


class InvalidCategoryError(AugmentError):
    pass


class EmptyInputError(AugmentError):
    pass


class EmptyDatasetError(AugmentError):
    pass


class CompletionError(RuntimeError):
    """Chat completion failed after all retries."""


class TransportError(RuntimeError):
    """One HTTP attempt failed (connection, status, or malformed body)."""


class GenerationRejectedError(RuntimeError):
    """Completion failed validation even after the retry escalation."""


class ShiftCategory(str, Enum):
    INTENSIFIED_SENTIMENT = "C1"
    ELABORATED_DETAILS = "C2"
    PLAN_REALIZATION = "C3"
    EMERGING_SITUATIONS = "C4"
    NO_SHIFT = "NoShift"


SHIFT_CATEGORIES = (
    ShiftCategory.INTENSIFIED_SENTIMENT,
    ShiftCategory.ELABORATED_DETAILS,
    ShiftCategory.PLAN_REALIZATION,
    ShiftCategory.EMERGING_SITUATIONS,
)

CATEGORY_TITLES = {
    ShiftCategory.INTENSIFIED_SENTIMENT: "Intensified Sentiment",
    ShiftCategory.ELABORATED_DETAILS: "Elaborated Details",
    ShiftCategory.PLAN_REALIZATION: "Plan Realization",
    ShiftCategory.EMERGING_SITUATIONS: "Emerging Situations",
    ShiftCategory.NO_SHIFT: "No Semantic Shift",
}


@dataclass(frozen=True)
class PromptTemplate:
    category: ShiftCategory
    instruction: str
    one_shot_example: str
    question_prefix: str = "### Question: The given sentence is:"


def _example(given: str, answer: str) -> str:
    return f"The given sentence is: {given} Expected answer: {answer}"


TEMPLATES: dict[ShiftCategory, PromptTemplate] = {
    ShiftCategory.INTENSIFIED_SENTIMENT: PromptTemplate(
        category=ShiftCategory.INTENSIFIED_SENTIMENT,
        instruction=(
            "Restating the given sentence so that the resulting sentence is "
            "semantically similar to the original sentence, but with much stronger "
            "negative sentiment by using more negative words."
        ),
        one_shot_example=_example(
            "Changes in laws, regulations and policies and the related "
            "interpretations and enforcement practices may alter the landscape in "
            "which we do business and may significantly affect our cost of doing "
            "business.",
            "Changes in and/or failure to comply with other laws and regulations "
            "specific to the environments in which we operate could materially "
            "adversely affect our reputation, market position, or our business and "
            "financial performance.",
        ),
    ),
    ShiftCategory.ELABORATED_DETAILS: PromptTemplate(
        category=ShiftCategory.ELABORATED_DETAILS,
        instruction=(
            "Restating the given sentence so that the resulting sentence is "
            "semantically similar to the original sentence, but with much stronger "
            "negative sentiment by using more detailed description about the "
            "unfavorable situation."
        ),
        one_shot_example=_example(
            "We also have outsourced elements of our operations to third parties, "
            "and, as a result, we manage a number of third-party vendors who may or "
            "could have access to our confidential information.",
            "We also have outsourced elements of our operations to third parties, "
            "and, as a result, we manage a number of third-party suppliers who may "
            "or could have access to our confidential information, including, but "
            "not limited to, intellectual property, proprietary business information "
            "and personal information of patients, employees and customers "
            "(collectively “Confidential Information”).",
        ),
    ),
    ShiftCategory.PLAN_REALIZATION: PromptTemplate(
        category=ShiftCategory.PLAN_REALIZATION,
        instruction=(
            "Restating the given sentence so that the resulting sentence is "
            "semantically similar to the original sentence, but with much stronger "
            "negative sentiment by changing the tense (from going to influence to "
            "have influenced)."
        ),
        one_shot_example=_example(
            "Although these attacks and breaches have not had a direct, material "
            "impact on us, we believe these incidents are likely to continue and we "
            "are unable to predict the direct or indirect impact of future attacks "
            "or breaches to our business.",
            "Such attacks and breaches have resulted, and may continue to result "
            "in, fraudulent activity and ultimately, financial losses to Visa’s "
            "clients, and it is difficult to predict the direct or indirect impact "
            "of future attacks or breaches to our business.",
        ),
    ),
    ShiftCategory.EMERGING_SITUATIONS: PromptTemplate(
        category=ShiftCategory.EMERGING_SITUATIONS,
        instruction=(
            "Restating the given sentence so that the resulting sentence is "
            "semantically similar to the original sentence, but with much stronger "
            "negative sentiment by adding some unfavorable circumstances."
        ),
        one_shot_example=_example(
            "These tariffs, and any additional tariffs imposed by the U.S., China "
            "or other countries or any additional retaliatory measures by any of "
            "these countries, could increase our costs, reduce our sales and "
            "earnings or otherwise have an adverse effect on our operations.",
            "While the U.S. and China signed what is being known as the Phase One "
            "Deal in January 2020, which included the suspension and rollback of "
            "tariffs, any new tariffs imposed by the U.S., China or other countries "
            "or any additional retaliatory measures by any of these countries, "
            "could increase our costs, reduce our sales and earnings or otherwise "
            "have an adverse effect on our operations.",
        ),
    ),
    ShiftCategory.NO_SHIFT: PromptTemplate(
        category=ShiftCategory.NO_SHIFT,
        instruction=(
            "Restating the sentence so that the resulting sentence is semantically "
            "and sentimentally similar to the given sentence."
        ),
        one_shot_example=_example(
            "Many of our competitors are companies that are larger than we are, "
            "with greater financial and operational resources than we have.",
            "We compete with many larger companies that have greater financial and "
            "operational resources than we have.",
        ),
    ),
}


def render_prompt(category: ShiftCategory, sentence: str) -> str:
    """Render the category's one-shot prompt around the given sentence.

    Output is byte-identical across runs for the same inputs.
    """
    if not sentence:
        raise EmptySentenceError("cannot render a prompt for an empty sentence")
    template = TEMPLATES[ShiftCategory(category)]
    return (
        f"You are required to finish the task: {template.instruction}\n"
        f"### Example: {template.one_shot_example}\n"
        f"{template.question_prefix} {sentence}. Expected answer:"
    )


@dataclass(frozen=True)
class LLMConfig:
    base_url: str = "http://localhost:8000/v1"
    model: str = "gpt-3.5-turbo"
    temperature: float = 0.7
    max_tokens: int = 256
    max_retries: int = 3
    backoff_base: float = 1.0
    backoff_factor: float = 2.0
    timeout: float = 60.0
    api_key_env: str = "FINSTS_LLM_API_KEY"
    concurrency: int = 4
    cache_dir: str | None = None
    offline: bool = False
    transport: object = None  # callable(url, payload, headers, timeout) -> dict

    def endpoint_url(self) -> str:
        return self.base_url.rstrip("/") + "/chat/completions"


def _headers(cfg: LLMConfig) -> dict[str, str]:
    import os

    headers = {"Content-Type": "application/json"}
    key = os.environ.get(cfg.api_key_env)
    if key:
        headers["Authorization"] = f"Bearer {key}"
    return headers


def _http_transport(url: str, payload: dict, headers: dict, timeout: float) -> dict:
    import requests

    try:
        response = requests.post(url, json=payload, headers=headers, timeout=timeout)
    except requests.RequestException as exc:
        raise TransportError(f"request failed: {exc}") from exc
    if not 200 <= response.status_code < 300:
        raise TransportError(f"HTTP {response.status_code}: {response.text[:200]}")
    try:
        return response.json()
    except ValueError as exc:
        raise TransportError(f"response is not JSON: {exc}") from exc


def _cache_file(cfg: LLMConfig, payload: dict) -> Path | None:
    if not cfg.cache_dir:
        return None
    key = hashlib.sha256(json.dumps(payload, sort_keys=True).encode("utf-8")).hexdigest()
    return Path(cfg.cache_dir) / f"{key}.json"


def _clean_completion(text: str) -> str:
    text = text.strip()
    if text.startswith("Expected answer:"):
        text = text[len("Expected answer:") :].strip()
    return text


def chat_complete(prompt: str, cfg: LLMConfig) -> str:
    """Send one user message, return the first choice's text.

    Retries transport failures and empty or malformed completions with
    exponential backoff; responses are cached on disk when cache_dir is set.
    """
    payload = {
        "model": cfg.model,
        "messages": [{"role": "user", "content": prompt}],
        "temperature": cfg.temperature,
        "max_tokens": cfg.max_tokens,
    }
    cache_path = _cache_file(cfg, payload)
    if cache_path and cache_path.is_file():
        return json.loads(cache_path.read_text(encoding="utf-8"))["completion"]
    if cfg.offline:
        raise CompletionError("offline mode and completion not cached")

    transport = cfg.transport or _http_transport
    last_error: Exception | None = None
    for attempt in range(cfg.max_retries):
        if attempt:
            time.sleep(cfg.backoff_base * cfg.backoff_factor ** (attempt - 1))
        try:
            response = transport(cfg.endpoint_url(), payload, _headers(cfg), cfg.timeout)
        except TransportError as exc:
            last_error = exc
            continue
        try:
            content = response["choices"][0]["message"]["content"]
        except (KeyError, IndexError, TypeError) as exc:
            last_error = TransportError(f"malformed completion response: {exc}")
            continue
        text = _clean_completion(str(content))
        if not text:
            last_error = TransportError("empty completion")
            continue
        if cache_path:
            cache_path.parent.mkdir(parents=True, exist_ok=True)
            cache_path.write_text(json.dumps({"completion": text}), encoding="utf-8")
        return text
    raise CompletionError(f"chat completion failed after {cfg.max_retries} attempts: {last_error}")


@dataclass(frozen=True)
class TripletRecord:
    id: str
    anchor: str
    positive: str
    negative: str
    category: ShiftCategory
    source_model: str = ""
    company: str = ""
    period: str = ""

    def __post_init__(self):
        if self.category not in SHIFT_CATEGORIES:
            raise InvalidCategoryError(f"triplet category must be C1..C4, got {self.category}")
        if not (self.anchor and self.positive and self.negative):
            raise AugmentError("triplet texts must be non-empty")

    def to_json(self) -> dict:
        return {
            "id": self.id,
            "anchor": self.anchor,
            "positive": self.positive,
            "negative": self.negative,
            "category": self.category.value,
            "source_model": self.source_model,
            "company": self.company,
            "period": self.period,
        }

    @classmethod
    def from_json(cls, record: dict) -> "TripletRecord":
        return cls(
            id=record["id"],
            anchor=record["anchor"],
            positive=record["positive"],
            negative=record["negative"],
            category=ShiftCategory(record["category"]),
            source_model=record.get("source_model", ""),
            company=record.get("company", ""),
            period=record.get("period", ""),
        )


@dataclass
class TripletDataset:
    records: list[TripletRecord] = field(default_factory=list)

    def __post_init__(self):
        ids = [r.id for r in self.records]
        if len(ids) != len(set(ids)):
            raise AugmentError("triplet record ids must be unique")

    def __len__(self) -> int:
        return len(self.records)

    def categories(self) -> set[ShiftCategory]:
        return {r.category for r in self.records}

    def without_category(self, category: ShiftCategory) -> "TripletDataset":
        return TripletDataset([r for r in self.records if r.category != category])


def write_dataset(ds: TripletDataset, path) -> None:
    with open(path, "w", encoding="utf-8") as handle:
        for record in ds.records:
            handle.write(json.dumps(record.to_json(), ensure_ascii=False, sort_keys=True) + "\n")


def read_dataset(path) -> TripletDataset:
    records = []
    with open(path, "r", encoding="utf-8") as handle:
        for line in handle:
            if line.strip():
                records.append(TripletRecord.from_json(json.loads(line)))
    return TripletDataset(records)


def _valid_completion(text: str, anchor_text: str, category: ShiftCategory) -> bool:
    if not text.strip():
        return False
    if category != ShiftCategory.NO_SHIFT and text.strip() == anchor_text.strip():
        return False
    return True


def _complete_validated(category: ShiftCategory, anchor: Sentence, cfg: LLMConfig) -> str:
    prompt = render_prompt(category, anchor.text)
    text = chat_complete(prompt, cfg)
    if _valid_completion(text, anchor.text, category):
        return text
    # One escalated retry with a warmer temperature before giving up.
    retry_cfg = dataclasses.replace(cfg, temperature=cfg.temperature + 0.2)
    text = chat_complete(prompt, retry_cfg)
    if _valid_completion(text, anchor.text, category):
        return text
    raise GenerationRejectedError(
        f"completion for anchor {anchor.id} ({category.value}) failed validation"
    )


def generate_triplet(
    anchor: Sentence,
    category: ShiftCategory,
    cfg: LLMConfig,
    company: str = "",
    period: str = "",
) -> TripletRecord:
    """Generate the no-shift positive and the category-shifted negative for
    one anchor sentence."""
    if category not in SHIFT_CATEGORIES:
        raise InvalidCategoryError(f"negative category must be C1..C4, got {category}")
    positive = _complete_validated(ShiftCategory.NO_SHIFT, anchor, cfg)
    negative = _complete_validated(category, anchor, cfg)
    return TripletRecord(
        id=f"{anchor.id}:{category.value}",
        anchor=anchor.text,
        positive=positive,
        negative=negative,
        category=category,
        source_model=cfg.model,
        company=company,
        period=period,
    )


def category_sequence(policy: str, count: int) -> list[ShiftCategory]:
    """Expand a category policy string into one category per anchor.

    Policies: "round_robin", "fixed:<C1..C4>", "random:<seed>".
    """
    if policy == "round_robin":
        return [SHIFT_CATEGORIES[i % 4] for i in range(count)]
    if policy.startswith("fixed:"):
        category = ShiftCategory(policy.split(":", 1)[1])
        if category not in SHIFT_CATEGORIES:
            raise InvalidCategoryError(f"fixed policy requires C1..C4, got {category}")
        return [category] * count
    if policy.startswith("random:"):
        seed = int(policy.split(":", 1)[1])
        rng = np.random.default_rng(seed)
        return [SHIFT_CATEGORIES[int(i)] for i in rng.integers(0, 4, size=count)]
    raise AugmentError(f"unknown category policy: {policy!r}")


def build_dataset(
    sentences: list[Sentence],
    category_policy: str,
    cfg: LLMConfig,
    checkpoint_path=None,
    doc_meta: dict[str, tuple[str, str]] | None = None,
) -> TripletDataset:
    """Generate one triplet per anchor sentence.

    Completed records are appended to the checkpoint file as they arrive, so
    an interrupted run resumes without repeating finished anchors. Up to
    cfg.concurrency requests are in flight; records are committed in anchor
    order. Failed anchors are skipped with a warning.
    """
    if not sentences:
        raise EmptyInputError("build_dataset needs at least one sentence")
    categories = category_sequence(category_policy, len(sentences))

    existing: dict[str, TripletRecord] = {}
    checkpoint = Path(checkpoint_path) if checkpoint_path else None
    if checkpoint and checkpoint.is_file():
        for record in read_dataset(checkpoint).records:
            existing[record.id] = record

    meta = doc_meta or {}

    def produce(item: tuple[Sentence, ShiftCategory]) -> TripletRecord | None:
        sentence, category = item
        record_id = f"{sentence.id}:{category.value}"
        if record_id in existing:
            return existing[record_id]
        company, period = meta.get(sentence.doc_id, ("", ""))
        try:
            return generate_triplet(sentence, category, cfg, company=company, period=period)
        except (CompletionError, GenerationRejectedError) as exc:
            log.warning("skipping anchor %s: %s", sentence.id, exc)
            return None

    records: list[TripletRecord] = []
    handle = open(checkpoint, "a", encoding="utf-8") if checkpoint else None
    try:
        with ThreadPoolExecutor(max_workers=max(1, cfg.concurrency)) as pool:
            for record in pool.map(produce, zip(sentences, categories)):
                if record is None:
                    continue
                if handle and record.id not in existing:
                    handle.write(
                        json.dumps(record.to_json(), ensure_ascii=False, sort_keys=True) + "\n"
                    )
                    handle.flush()
                records.append(record)
    finally:
        if handle:
            handle.close()

    if not records:
        raise AugmentError("all anchors failed generation")
    return TripletDataset(records)


@dataclass
class AssessmentReport:
    size: int
    mean_token_counts: dict[str, float]
    jaccard_quartiles_pos: tuple[float, float, float]
    jaccard_quartiles_neg: tuple[float, float, float]
    transrate_pos: float
    transrate_neg: float

    def to_json(self) -> dict:
        return {
            "size": self.size,
            "mean_token_counts": self.mean_token_counts,
            "jaccard_quartiles_pos": list(self.jaccard_quartiles_pos),
            "jaccard_quartiles_neg": list(self.jaccard_quartiles_neg),
            "transrate_pos": self.transrate_pos,
            "transrate_neg": self.transrate_neg,
        }


def quantile(values, q: float) -> float:
    """Order statistic with linear interpolation between closest ranks."""
    xs = sorted(float(v) for v in values)
    if not xs:
        raise EmptyDatasetError("quantile of empty sequence")
    position = (len(xs) - 1) * q
    lower = int(position)
    upper = min(lower + 1, len(xs) - 1)
    return xs[lower] + (xs[upper] - xs[lower]) * (position - lower)


def _quartiles(values) -> tuple[float, float, float]:
    return (quantile(values, 0.25), quantile(values, 0.50), quantile(values, 0.75))


def assess_dataset(
    ds: TripletDataset, embeddings, cfg: metrics.AssessConfig | None = None
) -> AssessmentReport:
    """Surface-overlap quartiles and transferability scores for a dataset.

    Jaccard is computed per anchor/positive and anchor/negative pair; the
    transferability score treats anchors as class 0 and the generated side
    as class 1.
    """
    if not ds.records:
        raise EmptyDatasetError("cannot assess an empty dataset")
    anchors = [r.anchor for r in ds.records]
    positives = [r.positive for r in ds.records]
    negatives = [r.negative for r in ds.records]

    tokens_a = [corpus.tokenize(t) for t in anchors]
    tokens_p = [corpus.tokenize(t) for t in positives]
    tokens_n = [corpus.tokenize(t) for t in negatives]

    jaccard_pos = [metrics.jaccard(a, p) for a, p in zip(tokens_a, tokens_p)]
    jaccard_neg = [metrics.jaccard(a, n) for a, n in zip(tokens_a, tokens_n)]

    z_anchor = embeddings.embed(anchors)
    z_pos = embeddings.embed(positives)
    z_neg = embeddings.embed(negatives)
    labels = [0] * len(ds.records) + [1] * len(ds.records)

    return AssessmentReport(
        size=len(ds.records),
        mean_token_counts={
            "anchor": float(np.mean([len(t) for t in tokens_a])),
            "positive": float(np.mean([len(t) for t in tokens_p])),
            "negative": float(np.mean([len(t) for t in tokens_n])),
        },
        jaccard_quartiles_pos=_quartiles(jaccard_pos),
        jaccard_quartiles_neg=_quartiles(jaccard_neg),
        transrate_pos=metrics.transrate(np.vstack([z_anchor, z_pos]), labels, cfg),
        transrate_neg=metrics.transrate(np.vstack([z_anchor, z_neg]), labels, cfg),
    )
