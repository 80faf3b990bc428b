"""Plain-text report ingestion, rule-based sentence segmentation, and token
normalization for surface-overlap metrics."""

from __future__ import annotations

import hashlib
import json
import string
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable


class CorpusError(ValueError):
    pass


class MissingFileError(CorpusError):
    pass


class DecodeError(CorpusError):
    pass


class EmptyDocumentError(CorpusError):
    pass


# Tokens ending a period-terminated abbreviation never close a sentence.
DEFAULT_ABBREVIATIONS = frozenset(
    {"inc.", "u.s.", "no.", "approx.", "mr.", "corp.", "co.", "e.g.", "i.e."}
)

_STRIP_CHARS = string.punctuation + "“”‘’…–—"


@dataclass(frozen=True)
class Document:
    id: str
    company: str
    period: str
    text: str


@dataclass(frozen=True)
class Sentence:
    id: str
    doc_id: str
    index: int
    text: str
    token_count: int


def tokenize(text: str) -> set[str]:
    """Lowercase, split on whitespace, strip edge punctuation, deduplicate."""
    tokens = set()
    for raw in text.lower().split():
        token = raw.strip(_STRIP_CHARS)
        if token:
            tokens.add(token)
    return tokens


def ingest_document(path, company: str, period: str) -> Document:
    """Read a UTF-8 text file into a Document with a content-derived id."""
    file_path = Path(path)
    if not file_path.is_file():
        raise MissingFileError(f"no such file: {file_path}")
    try:
        text = file_path.read_bytes().decode("utf-8")
    except UnicodeDecodeError as exc:
        raise DecodeError(f"{file_path} is not valid UTF-8: {exc}") from exc
    text = text.replace("\r\n", "\n").replace("\r", "\n")
    if not text.strip():
        raise EmptyDocumentError(f"{file_path} is empty")
    if not period:
        raise CorpusError("period must be non-empty")
    digest = hashlib.sha256(text.encode("utf-8")).hexdigest()[:12]
    return Document(id=f"{company}-{period}-{digest}", company=company, period=period, text=text)


def _is_boundary(text: str, pos: int, start: int, abbreviations: frozenset[str]) -> int:
    """Return the start index of the next sentence if ``pos`` closes one, else -1.

    A terminator closes a sentence when it is followed by whitespace and the
    next non-whitespace character is uppercase or a digit, unless the word
    it ends is a known abbreviation.
    """
    n = len(text)
    after = pos + 1
    if after >= n or not text[after].isspace():
        return -1
    nxt = after
    while nxt < n and text[nxt].isspace():
        nxt += 1
    if nxt >= n or not (text[nxt].isupper() or text[nxt].isdigit()):
        return -1
    words = text[start : pos + 1].split()
    if words and words[-1].lower() in abbreviations:
        return -1
    return nxt


def segment_sentences(
    doc: Document, abbreviations: frozenset[str] = DEFAULT_ABBREVIATIONS
) -> list[Sentence]:
    """Split a document into ordered sentences at [.?!] boundaries."""
    text = doc.text
    chunks: list[str] = []
    start = 0
    i = 0
    n = len(text)
    while i < n:
        if text[i] in ".!?":
            nxt = _is_boundary(text, i, start, abbreviations)
            if nxt >= 0:
                chunk = text[start : i + 1].strip()
                if chunk:
                    chunks.append(chunk)
                start = nxt
                i = nxt
                continue
        i += 1
    tail = text[start:].strip()
    if tail:
        chunks.append(tail)

    return [
        Sentence(
            id=f"{doc.id}:{index:05d}",
            doc_id=doc.id,
            index=index,
            text=chunk,
            token_count=len(tokenize(chunk)),
        )
        for index, chunk in enumerate(chunks)
    ]


def load_manifest(path) -> list[dict]:
    """Read a corpus manifest (JSON Lines, one document entry per line)."""
    manifest_path = Path(path)
    if not manifest_path.is_file():
        raise MissingFileError(f"no such manifest: {manifest_path}")
    entries = []
    for line_no, line in enumerate(manifest_path.read_text(encoding="utf-8").splitlines(), 1):
        if not line.strip():
            continue
        entry = json.loads(line)
        for key in ("company", "period", "path"):
            if key not in entry:
                raise CorpusError(f"manifest line {line_no} missing key {key!r}")
        entries.append(entry)
    return entries


def load_corpus(manifest_path) -> list[Document]:
    """Ingest every document named by a manifest, relative to its location."""
    base = Path(manifest_path).parent
    documents = []
    seen: set[str] = set()
    for entry in load_manifest(manifest_path):
        doc_path = Path(entry["path"])
        if not doc_path.is_absolute():
            doc_path = base / doc_path
        doc = ingest_document(doc_path, entry["company"], entry["period"])
        if entry.get("id"):
            doc = Document(id=entry["id"], company=doc.company, period=doc.period, text=doc.text)
        if doc.id in seen:
            raise CorpusError(f"duplicate document id {doc.id!r}")
        seen.add(doc.id)
        documents.append(doc)
    return documents


def write_sentences(sentences: Iterable[Sentence], path) -> None:
    with open(path, "w", encoding="utf-8") as handle:
        for sentence in sentences:
            record = {
                "id": sentence.id,
                "doc_id": sentence.doc_id,
                "index": sentence.index,
                "text": sentence.text,
            }
            handle.write(json.dumps(record, ensure_ascii=False, sort_keys=True) + "\n")


def read_sentences(path) -> list[Sentence]:
    sentences = []
    with open(path, "r", encoding="utf-8") as handle:
        for line in handle:
            if not line.strip():
                continue
            record = json.loads(line)
            sentences.append(
                Sentence(
                    id=record["id"],
                    doc_id=record["doc_id"],
                    index=int(record["index"]),
                    text=record["text"],
                    token_count=len(tokenize(record["text"])),
                )
            )
    return sentences
