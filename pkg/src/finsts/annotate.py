"""Double-blind pair annotation: token diffs, label collection with conflict
detection, third-annotator adjudication, agreement, and the HTTP service."""

from __future__ import annotations

import json
import mimetypes
import string
import threading
from dataclasses import dataclass
from datetime import datetime, timezone
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from pathlib import Path
from urllib.parse import parse_qs, urlparse

from . import metrics
from .augment import SHIFT_CATEGORIES, CATEGORY_TITLES, ShiftCategory
from .matching import NarrativePair


class AnnotateError(ValueError):
    pass


class UnknownPairError(AnnotateError):
    pass


class UnknownAnnotatorError(AnnotateError):
    pass


class DuplicateLabelError(AnnotateError):
    pass


class LabelConstraintError(AnnotateError):
    pass


class NotConflictedError(AnnotateError):
    pass


class NoDoubleLabelsError(AnnotateError):
    pass


STATUS_UNLABELED = "unlabeled"
STATUS_PARTIAL = "partially_labeled"
STATUS_LABELED = "labeled"
STATUS_CONFLICTED = "conflicted"
STATUS_ADJUDICATED = "adjudicated"

INSTRUCTIONS = (
    "Compare the two sentences; they come from the same company's reports in "
    "different periods, and their token-level differences are highlighted. "
    "Choose score 1 if the sentences convey the same information (paraphrase, "
    "no semantic shift). Choose score -1 if the second sentence shifts the "
    "meaning in a way that carries financial information, then pick the shift "
    "type: C1 Intensified Sentiment (stronger positive or negative wording), "
    "C2 Elaborated Details (significantly more detail about the situation), "
    "C3 Plan Realization (a forecast becomes a realized or current event), or "
    "C4 Emerging Situations (completely new information appears)."
)

_STRIP_CHARS = string.punctuation + "“”‘’…–—"


@dataclass(frozen=True)
class DiffSpan:
    op: str  # equal | insert | delete | replace
    a_start: int
    a_end: int
    b_start: int
    b_end: int

    def to_json(self) -> dict:
        return {
            "op": self.op,
            "a_start": self.a_start,
            "a_end": self.a_end,
            "b_start": self.b_start,
            "b_end": self.b_end,
        }


@dataclass(frozen=True)
class AnnotationLabel:
    pair_id: str
    annotator_id: str
    score: int
    category: ShiftCategory | None
    timestamp: str


@dataclass(frozen=True)
class AdjudicationRecord:
    pair_id: str
    adjudicator_id: str
    score: int
    category: ShiftCategory | None
    note: str
    timestamp: str


def _diff_key(token: str) -> str:
    stripped = token.lower().strip(_STRIP_CHARS)
    return stripped if stripped else token.lower()


def diff_tokens(a: str, b: str) -> list[DiffSpan]:
    """Opcode spans from a longest-common-subsequence token alignment.

    Tokens are whitespace-split and compared in normalized form; equal spans
    are maximal, and the spans cover both sequences in order.
    """
    tokens_a = a.split()
    tokens_b = b.split()
    keys_a = [_diff_key(t) for t in tokens_a]
    keys_b = [_diff_key(t) for t in tokens_b]
    n, m = len(keys_a), len(keys_b)

    lengths = [[0] * (m + 1) for _ in range(n + 1)]
    for i in range(n - 1, -1, -1):
        row = lengths[i]
        nxt = lengths[i + 1]
        for j in range(m - 1, -1, -1):
            if keys_a[i] == keys_b[j]:
                row[j] = nxt[j + 1] + 1
            else:
                row[j] = max(nxt[j], row[j + 1])

    matches: list[tuple[int, int]] = []
    i = j = 0
    while i < n and j < m:
        if keys_a[i] == keys_b[j]:
            matches.append((i, j))
            i += 1
            j += 1
        elif lengths[i + 1][j] >= lengths[i][j + 1]:
            i += 1
        else:
            j += 1

    spans: list[DiffSpan] = []

    def emit_gap(a0: int, a1: int, b0: int, b1: int) -> None:
        if a0 < a1 and b0 < b1:
            spans.append(DiffSpan("replace", a0, a1, b0, b1))
        elif a0 < a1:
            spans.append(DiffSpan("delete", a0, a1, b0, b0))
        elif b0 < b1:
            spans.append(DiffSpan("insert", a0, a0, b0, b1))

    prev_a = prev_b = 0
    idx = 0
    while idx < len(matches):
        run_start = idx
        while (
            idx + 1 < len(matches)
            and matches[idx + 1][0] == matches[idx][0] + 1
            and matches[idx + 1][1] == matches[idx][1] + 1
        ):
            idx += 1
        a0, b0 = matches[run_start]
        a1, b1 = matches[idx][0] + 1, matches[idx][1] + 1
        emit_gap(prev_a, a0, prev_b, b0)
        spans.append(DiffSpan("equal", a0, a1, b0, b1))
        prev_a, prev_b = a1, b1
        idx += 1
    emit_gap(prev_a, n, prev_b, m)
    return spans


def _now() -> str:
    return datetime.now(timezone.utc).isoformat()


def _check_label(score: int, category: ShiftCategory | None) -> None:
    if score not in (1, -1):
        raise LabelConstraintError(f"score must be 1 or -1, got {score}")
    if score == -1:
        if category is None:
            raise LabelConstraintError("score -1 requires a category")
        if category not in SHIFT_CATEGORIES:
            raise LabelConstraintError(f"category must be C1..C4, got {category}")
    elif category is not None:
        raise LabelConstraintError("score 1 must not carry a category")


class AnnotationTask:
    def __init__(self, pair: NarrativePair):
        self.pair = pair
        self.tokens_a = pair.sentence_a.text.split()
        self.tokens_b = pair.sentence_b.text.split()
        self.diff = diff_tokens(pair.sentence_a.text, pair.sentence_b.text)
        self.labels: list[AnnotationLabel] = []
        self.adjudication: AdjudicationRecord | None = None

    @property
    def status(self) -> str:
        if self.adjudication is not None:
            return STATUS_ADJUDICATED
        if len(self.labels) == 0:
            return STATUS_UNLABELED
        if len(self.labels) == 1:
            return STATUS_PARTIAL
        first, second = self.labels[0], self.labels[1]
        if first.score == second.score and (
            first.score == 1 or first.category == second.category
        ):
            return STATUS_LABELED
        return STATUS_CONFLICTED

    def final_label(self) -> tuple[int, ShiftCategory | None]:
        if self.adjudication is not None:
            return self.adjudication.score, self.adjudication.category
        return self.labels[0].score, self.labels[0].category

    def to_json(self, include_instructions: bool = True) -> dict:
        payload = {
            "pair_id": self.pair.id,
            "company": self.pair.company,
            "sentence_a": self.pair.sentence_a.text,
            "sentence_b": self.pair.sentence_b.text,
            "tokens_a": self.tokens_a,
            "tokens_b": self.tokens_b,
            "diff": [span.to_json() for span in self.diff],
            "status": self.status,
            "n_labels": len(self.labels),
        }
        if include_instructions:
            payload["instructions"] = INSTRUCTIONS
            payload["categories"] = {c.value: CATEGORY_TITLES[c] for c in SHIFT_CATEGORIES}
        return payload


class AnnotationStore:
    """All annotation state, replayed from an append-only event log.

    Mutations are serialized under one lock and appended to the log before
    they are acknowledged, so a restart reconstructs the same state.
    """

    def __init__(self, pairs: list[NarrativePair], log_path=None):
        self._tasks: dict[str, AnnotationTask] = {}
        for pair in sorted(pairs, key=lambda p: p.id):
            if pair.id in self._tasks:
                raise AnnotateError(f"duplicate pair id {pair.id!r}")
            self._tasks[pair.id] = AnnotationTask(pair)
        self._order = sorted(self._tasks)
        self._lock = threading.RLock()
        self._log_path = Path(log_path) if log_path else None
        if self._log_path and self._log_path.is_file():
            self._replay()

    def _replay(self) -> None:
        for line in self._log_path.read_text(encoding="utf-8").splitlines():
            if not line.strip():
                continue
            event = json.loads(line)
            category = ShiftCategory(event["category"]) if event.get("category") else None
            if event["event"] == "label":
                self._apply_label(
                    AnnotationLabel(
                        pair_id=event["pair_id"],
                        annotator_id=event["annotator_id"],
                        score=int(event["score"]),
                        category=category,
                        timestamp=event["timestamp"],
                    )
                )
            elif event["event"] == "adjudication":
                self._apply_adjudication(
                    AdjudicationRecord(
                        pair_id=event["pair_id"],
                        adjudicator_id=event["adjudicator_id"],
                        score=int(event["score"]),
                        category=category,
                        note=event.get("note", ""),
                        timestamp=event["timestamp"],
                    )
                )
            else:
                raise AnnotateError(f"unknown event type {event['event']!r} in log")

    def _append_event(self, payload: dict) -> None:
        if not self._log_path:
            return
        self._log_path.parent.mkdir(parents=True, exist_ok=True)
        with open(self._log_path, "a", encoding="utf-8") as handle:
            handle.write(json.dumps(payload, ensure_ascii=False, sort_keys=True) + "\n")

    def _get_task(self, pair_id: str) -> AnnotationTask:
        task = self._tasks.get(pair_id)
        if task is None:
            raise UnknownPairError(f"no such pair: {pair_id}")
        return task

    def _apply_label(self, label: AnnotationLabel) -> str:
        task = self._get_task(label.pair_id)
        _check_label(label.score, label.category)
        if any(existing.annotator_id == label.annotator_id for existing in task.labels):
            raise DuplicateLabelError(
                f"annotator {label.annotator_id} already labeled {label.pair_id}"
            )
        if len(task.labels) >= 2:
            raise AnnotateError(f"pair {label.pair_id} already holds two labels")
        task.labels.append(label)
        return task.status

    def _apply_adjudication(self, record: AdjudicationRecord) -> str:
        task = self._get_task(record.pair_id)
        if task.status != STATUS_CONFLICTED:
            raise NotConflictedError(f"pair {record.pair_id} is {task.status}, not conflicted")
        _check_label(record.score, record.category)
        task.adjudication = record
        return task.status

    def next_pair(self, annotator_id: str) -> AnnotationTask | None:
        if not annotator_id:
            raise UnknownAnnotatorError("annotator id must be non-empty")
        with self._lock:
            for pair_id in self._order:
                task = self._tasks[pair_id]
                if len(task.labels) >= 2:
                    continue
                if any(label.annotator_id == annotator_id for label in task.labels):
                    continue
                return task
        return None

    def submit_label(
        self, pair_id: str, annotator_id: str, score: int, category: ShiftCategory | None = None
    ) -> str:
        if not annotator_id:
            raise UnknownAnnotatorError("annotator id must be non-empty")
        with self._lock:
            label = AnnotationLabel(
                pair_id=pair_id,
                annotator_id=annotator_id,
                score=score,
                category=category,
                timestamp=_now(),
            )
            status = self._apply_label(label)
            self._append_event(
                {
                    "event": "label",
                    "pair_id": pair_id,
                    "annotator_id": annotator_id,
                    "score": score,
                    "category": category.value if category else None,
                    "timestamp": label.timestamp,
                }
            )
            return status

    def adjudicate(
        self,
        pair_id: str,
        adjudicator_id: str,
        score: int,
        category: ShiftCategory | None = None,
        note: str = "",
    ) -> str:
        with self._lock:
            record = AdjudicationRecord(
                pair_id=pair_id,
                adjudicator_id=adjudicator_id,
                score=score,
                category=category,
                note=note,
                timestamp=_now(),
            )
            status = self._apply_adjudication(record)
            self._append_event(
                {
                    "event": "adjudication",
                    "pair_id": pair_id,
                    "adjudicator_id": adjudicator_id,
                    "score": score,
                    "category": category.value if category else None,
                    "note": note,
                    "timestamp": record.timestamp,
                }
            )
            return status

    def doubly_labeled(self) -> list[AnnotationTask]:
        with self._lock:
            return [self._tasks[pid] for pid in self._order if len(self._tasks[pid].labels) >= 2]

    def compute_agreement(self, joint: bool = False) -> tuple[float, int]:
        """Kappa over the pre-adjudication labels of doubly-labeled pairs.

        Score-only by default; joint mode compares (score, category) tuples.
        """
        tasks = self.doubly_labeled()
        if not tasks:
            raise NoDoubleLabelsError("no doubly-labeled pairs yet")
        if joint:
            first = [(t.labels[0].score, t.labels[0].category) for t in tasks]
            second = [(t.labels[1].score, t.labels[1].category) for t in tasks]
        else:
            first = [t.labels[0].score for t in tasks]
            second = [t.labels[1].score for t in tasks]
        return metrics.cohens_kappa(first, second), len(tasks)

    def conflicts(self) -> list[AnnotationTask]:
        with self._lock:
            return [
                self._tasks[pid]
                for pid in self._order
                if self._tasks[pid].status == STATUS_CONFLICTED
            ]

    def export_labels(self) -> list[dict]:
        """Final labels for tasks in labeled or adjudicated state, by pair id."""
        rows = []
        with self._lock:
            for pair_id in self._order:
                task = self._tasks[pair_id]
                if task.status not in (STATUS_LABELED, STATUS_ADJUDICATED):
                    continue
                score, category = task.final_label()
                record = {
                    "pair_id": pair_id,
                    "sentence_a": task.pair.sentence_a.text,
                    "sentence_b": task.pair.sentence_b.text,
                    "label": score,
                }
                if category is not None:
                    record["category"] = category.value
                rows.append(record)
        return rows

    def task(self, pair_id: str) -> AnnotationTask:
        with self._lock:
            return self._get_task(pair_id)


def _parse_category(value) -> ShiftCategory | None:
    if value in (None, "", "null"):
        return None
    try:
        return ShiftCategory(value)
    except ValueError as exc:
        raise LabelConstraintError(f"unknown category {value!r}") from exc


class _Handler(BaseHTTPRequestHandler):
    server_version = "finsts-annotate/0.1"

    @property
    def store(self) -> AnnotationStore:
        return self.server.store  # type: ignore[attr-defined]

    def log_message(self, fmt, *args):  # quiet by default
        pass

    def _send_json(self, status: int, payload) -> None:
        body = json.dumps(payload, ensure_ascii=False, sort_keys=True).encode("utf-8")
        self.send_response(status)
        self.send_header("Content-Type", "application/json; charset=utf-8")
        self.send_header("Content-Length", str(len(body)))
        self.end_headers()
        self.wfile.write(body)

    def _send_error(self, status: int, exc: Exception) -> None:
        self._send_json(status, {"error": type(exc).__name__, "message": str(exc)})

    def _read_body(self) -> dict:
        length = int(self.headers.get("Content-Length", "0"))
        raw = self.rfile.read(length) if length else b""
        try:
            return json.loads(raw.decode("utf-8")) if raw else {}
        except (UnicodeDecodeError, json.JSONDecodeError) as exc:
            raise LabelConstraintError(f"invalid JSON body: {exc}") from exc

    def do_GET(self):
        parsed = urlparse(self.path)
        route = parsed.path
        if route == "/api/pairs/next":
            annotator = parse_qs(parsed.query).get("annotator", [""])[0]
            try:
                task = self.store.next_pair(annotator)
            except UnknownAnnotatorError as exc:
                return self._send_error(400, exc)
            if task is None:
                self.send_response(204)
                self.end_headers()
                return
            return self._send_json(200, task.to_json())
        if route == "/api/pairs/conflicts":
            rows = [t.to_json(include_instructions=False) for t in self.store.conflicts()]
            return self._send_json(200, rows)
        if route == "/api/metrics/kappa":
            joint = parse_qs(parsed.query).get("joint", ["0"])[0] in ("1", "true")
            try:
                kappa, count = self.store.compute_agreement(joint=joint)
                return self._send_json(200, {"kappa": kappa, "n_pairs": count})
            except NoDoubleLabelsError:
                return self._send_json(200, {"kappa": None, "n_pairs": 0})
        if route == "/api/export":
            lines = "".join(
                json.dumps(row, ensure_ascii=False, sort_keys=True) + "\n"
                for row in self.store.export_labels()
            ).encode("utf-8")
            self.send_response(200)
            self.send_header("Content-Type", "application/x-ndjson; charset=utf-8")
            self.send_header("Content-Length", str(len(lines)))
            self.end_headers()
            self.wfile.write(lines)
            return
        if not route.startswith("/api/"):
            return self._serve_static(route)
        self._send_json(404, {"error": "NotFound", "message": route})

    def do_POST(self):
        route = urlparse(self.path).path
        try:
            body = self._read_body()
            if route == "/api/labels":
                status = self.store.submit_label(
                    pair_id=body.get("pair_id", ""),
                    annotator_id=body.get("annotator", ""),
                    score=int(body.get("score", 0)),
                    category=_parse_category(body.get("category")),
                )
                return self._send_json(200, {"status": status})
            if route == "/api/adjudications":
                status = self.store.adjudicate(
                    pair_id=body.get("pair_id", ""),
                    adjudicator_id=body.get("adjudicator", ""),
                    score=int(body.get("score", 0)),
                    category=_parse_category(body.get("category")),
                    note=body.get("note", ""),
                )
                return self._send_json(200, {"status": status})
        except UnknownPairError as exc:
            return self._send_error(404, exc)
        except (DuplicateLabelError, NotConflictedError) as exc:
            return self._send_error(409, exc)
        except AnnotateError as exc:
            return self._send_error(400, exc)
        except (TypeError, ValueError) as exc:
            return self._send_error(400, exc)
        self._send_json(404, {"error": "NotFound", "message": route})

    def _serve_static(self, route: str) -> None:
        static_dir = getattr(self.server, "static_dir", None)
        if not static_dir:
            return self._send_json(404, {"error": "NotFound", "message": "no UI bundle configured"})
        root = Path(static_dir).resolve()
        relative = route.lstrip("/") or "index.html"
        target = (root / relative).resolve()
        if root not in target.parents and target != root:
            return self._send_json(404, {"error": "NotFound", "message": route})
        if target.is_dir():
            target = target / "index.html"
        if not target.is_file():
            return self._send_json(404, {"error": "NotFound", "message": route})
        content_type = mimetypes.guess_type(str(target))[0] or "application/octet-stream"
        body = target.read_bytes()
        self.send_response(200)
        self.send_header("Content-Type", content_type)
        self.send_header("Content-Length", str(len(body)))
        self.end_headers()
        self.wfile.write(body)


def make_server(
    store: AnnotationStore, host: str = "127.0.0.1", port: int = 0, static_dir=None
) -> ThreadingHTTPServer:
    """Build the HTTP server; port 0 picks an ephemeral port for tests."""
    server = ThreadingHTTPServer((host, port), _Handler)
    server.store = store  # type: ignore[attr-defined]
    server.static_dir = str(static_dir) if static_dir else None  # type: ignore[attr-defined]
    return server
