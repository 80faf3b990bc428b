import { readFileSync } from "node:fs";
import { dirname, resolve } from "node:path";
import { fileURLToPath } from "node:url";

import type { AnnotationTask, DiffSpan } from "../src/types";

const here = dirname(fileURLToPath(import.meta.url));

/** Load the real page markup into the jsdom document. */
export function mountPage(): void {
  const html = readFileSync(resolve(here, "../index.html"), "utf-8");
  const body = html.match(/<body>([\s\S]*)<\/body>/);
  if (!body) throw new Error("index.html has no body");
  document.body.innerHTML = body[1];
}

/** Minimal LCS diff, used only to make the fake server's payloads valid. */
export function lcsDiff(tokensA: string[], tokensB: string[]): DiffSpan[] {
  const n = tokensA.length;
  const m = tokensB.length;
  const table: number[][] = Array.from({ length: n + 1 }, () => new Array(m + 1).fill(0));
  for (let i = n - 1; i >= 0; i--) {
    for (let j = m - 1; j >= 0; j--) {
      table[i][j] =
        tokensA[i] === tokensB[j]
          ? table[i + 1][j + 1] + 1
          : Math.max(table[i + 1][j], table[i][j + 1]);
    }
  }
  const matches: [number, number][] = [];
  let i = 0;
  let j = 0;
  while (i < n && j < m) {
    if (tokensA[i] === tokensB[j]) {
      matches.push([i, j]);
      i++;
      j++;
    } else if (table[i + 1][j] >= table[i][j + 1]) {
      i++;
    } else {
      j++;
    }
  }

  const spans: DiffSpan[] = [];
  const gap = (a0: number, a1: number, b0: number, b1: number) => {
    if (a0 < a1 && b0 < b1) spans.push({ op: "replace", a_start: a0, a_end: a1, b_start: b0, b_end: b1 });
    else if (a0 < a1) spans.push({ op: "delete", a_start: a0, a_end: a1, b_start: b0, b_end: b0 });
    else if (b0 < b1) spans.push({ op: "insert", a_start: a0, a_end: a0, b_start: b0, b_end: b1 });
  };
  let prevA = 0;
  let prevB = 0;
  let idx = 0;
  while (idx < matches.length) {
    const runStart = idx;
    while (
      idx + 1 < matches.length &&
      matches[idx + 1][0] === matches[idx][0] + 1 &&
      matches[idx + 1][1] === matches[idx][1] + 1
    ) {
      idx++;
    }
    const [a0, b0] = matches[runStart];
    const a1 = matches[idx][0] + 1;
    const b1 = matches[idx][1] + 1;
    gap(prevA, a0, prevB, b0);
    spans.push({ op: "equal", a_start: a0, a_end: a1, b_start: b0, b_end: b1 });
    prevA = a1;
    prevB = b1;
    idx++;
  }
  gap(prevA, n, prevB, m);
  return spans;
}

type StoredLabel = { annotator: string; score: number; category?: string };

type StoredTask = {
  pair_id: string;
  sentence_a: string;
  sentence_b: string;
  labels: StoredLabel[];
};

function kappaFromScores(first: number[], second: number[]): number {
  const n = first.length;
  let agreements = 0;
  for (let i = 0; i < n; i++) if (first[i] === second[i]) agreements++;
  const categories = new Set([...first, ...second]);
  let chance = 0;
  for (const cat of categories) {
    const a = first.filter((x) => x === cat).length;
    const b = second.filter((x) => x === cat).length;
    chance += a * b;
  }
  const denominator = n * n - chance;
  if (denominator === 0) return 1.0;
  return (n * agreements - chance) / denominator;
}

/**
 * In-memory stand-in for the annotation service, implementing the documented
 * /api contract at the fetch level so the page logic can be tested without a
 * process boundary.
 */
export class FakeServer {
  tasks: StoredTask[];
  lastLabelBody: Record<string, unknown> | null = null;

  constructor(pairs: { pair_id: string; sentence_a: string; sentence_b: string }[]) {
    this.tasks = pairs
      .map((p) => ({ ...p, labels: [] as StoredLabel[] }))
      .sort((a, b) => a.pair_id.localeCompare(b.pair_id));
  }

  private status(task: StoredTask): string {
    if (task.labels.length === 0) return "unlabeled";
    if (task.labels.length === 1) return "partially_labeled";
    const [first, second] = task.labels;
    const agree =
      first.score === second.score && (first.score === 1 || first.category === second.category);
    return agree ? "labeled" : "conflicted";
  }

  private taskPayload(task: StoredTask): AnnotationTask {
    const tokensA = task.sentence_a.split(/\s+/).filter(Boolean);
    const tokensB = task.sentence_b.split(/\s+/).filter(Boolean);
    return {
      pair_id: task.pair_id,
      company: "AAA",
      sentence_a: task.sentence_a,
      sentence_b: task.sentence_b,
      tokens_a: tokensA,
      tokens_b: tokensB,
      diff: lcsDiff(tokensA, tokensB),
      status: this.status(task),
      n_labels: task.labels.length,
      instructions: "Score 1 for no shift, -1 plus a category for a shift."
    };
  }

  kappa(): { kappa: number | null; n_pairs: number } {
    const doubled = this.tasks.filter((t) => t.labels.length >= 2);
    if (doubled.length === 0) return { kappa: null, n_pairs: 0 };
    return {
      kappa: kappaFromScores(
        doubled.map((t) => t.labels[0].score),
        doubled.map((t) => t.labels[1].score)
      ),
      n_pairs: doubled.length
    };
  }

  fetch = async (input: string, init?: RequestInit): Promise<Response> => {
    const url = new URL(input, "http://fake");
    const json = (status: number, payload: unknown) =>
      new Response(JSON.stringify(payload), {
        status,
        headers: { "Content-Type": "application/json" }
      });

    if (url.pathname === "/api/pairs/next") {
      const annotator = url.searchParams.get("annotator") ?? "";
      if (!annotator) return json(400, { error: "UnknownAnnotatorError", message: "annotator" });
      const open = this.tasks.find(
        (t) => t.labels.length < 2 && !t.labels.some((l) => l.annotator === annotator)
      );
      if (!open) return new Response(null, { status: 204 });
      return json(200, this.taskPayload(open));
    }

    if (url.pathname === "/api/labels" && init?.method === "POST") {
      const body = JSON.parse(String(init.body)) as {
        pair_id: string;
        annotator: string;
        score: number;
        category?: string;
      };
      this.lastLabelBody = body;
      const task = this.tasks.find((t) => t.pair_id === body.pair_id);
      if (!task) return json(404, { error: "UnknownPairError", message: "no such pair" });
      if (task.labels.some((l) => l.annotator === body.annotator)) {
        return json(409, {
          error: "DuplicateLabelError",
          message: `annotator ${body.annotator} already labeled ${body.pair_id}`
        });
      }
      if (body.score === -1 && !body.category) {
        return json(400, { error: "LabelConstraintError", message: "score -1 requires a category" });
      }
      if (body.score === 1 && body.category) {
        return json(400, { error: "LabelConstraintError", message: "score 1 must not carry a category" });
      }
      task.labels.push({ annotator: body.annotator, score: body.score, category: body.category });
      return json(200, { status: this.status(task) });
    }

    if (url.pathname === "/api/metrics/kappa") {
      return json(200, this.kappa());
    }

    if (url.pathname === "/api/pairs/conflicts") {
      const conflicted = this.tasks.filter((t) => this.status(t) === "conflicted");
      return json(
        200,
        conflicted.map((t) => ({
          pair_id: t.pair_id,
          sentence_a: t.sentence_a,
          sentence_b: t.sentence_b,
          status: "conflicted"
        }))
      );
    }

    return json(404, { error: "NotFound", message: url.pathname });
  };
}

export const FIXTURE_PAIRS = [
  { pair_id: "p000", sentence_a: "Revenue grew across all segments.", sentence_b: "Revenue grew modestly across most segments." },
  { pair_id: "p001", sentence_a: "Costs fell sharply during the year.", sentence_b: "Costs have fallen sharply as planned." },
  { pair_id: "p002", sentence_a: "Margins improved on pricing actions.", sentence_b: "Margins deteriorated despite pricing actions." },
  { pair_id: "p003", sentence_a: "Competition remains intense in retail.", sentence_b: "Competition remains fierce in retail." },
  { pair_id: "p004", sentence_a: "We expect scrutiny to continue.", sentence_b: "Scrutiny has increased materially this year." },
  { pair_id: "p005", sentence_a: "Supply constraints eased late in the year.", sentence_b: "Supply constraints persisted all year long." },
  { pair_id: "p006", sentence_a: "We plan to expand into two new markets.", sentence_b: "We have expanded into two new markets." },
  { pair_id: "p007", sentence_a: "Currency headwinds reduced reported growth.", sentence_b: "Currency headwinds sharply reduced reported growth and margins." },
  { pair_id: "p008", sentence_a: "Hiring slowed across divisions.", sentence_b: "Hiring froze across all divisions." },
  { pair_id: "p009", sentence_a: "Cloud demand accelerated in the second half.", sentence_b: "Cloud demand moderated in the second half." }
];
