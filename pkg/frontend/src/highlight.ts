import type { DiffOp, DiffSpan } from "./types";

export type Side = "a" | "b";

/** CSS class for one side of a span; equal spans stay plain. */
export const spanClass = (op: DiffOp, side: Side): string => {
  if (op === "equal") return "";
  if (op === "replace") return "diff-replace";
  if (op === "delete") return side === "a" ? "diff-delete" : "";
  return side === "b" ? "diff-insert" : "";
};

export const sideRange = (span: DiffSpan, side: Side): [number, number] =>
  side === "a" ? [span.a_start, span.a_end] : [span.b_start, span.b_end];

/**
 * Render one sentence's tokens using only the server-provided spans: each
 * non-empty span becomes a single element carrying its exact token range in
 * data attributes, so the DOM is checkable against the wire payload.
 */
export function renderSide(
  container: HTMLElement,
  tokens: string[],
  spans: DiffSpan[],
  side: Side
): void {
  container.textContent = "";
  const doc = container.ownerDocument;
  for (const span of spans) {
    const [start, end] = sideRange(span, side);
    if (start === end) continue;
    const el = doc.createElement("span");
    const cls = spanClass(span.op, side);
    el.className = cls ? `token-span ${cls}` : "token-span";
    el.dataset.op = span.op;
    el.dataset.start = String(start);
    el.dataset.end = String(end);
    el.textContent = tokens.slice(start, end).join(" ");
    container.appendChild(el);
    container.appendChild(doc.createTextNode(" "));
  }
}

/** Ranges actually rendered, read back from the DOM. */
export function renderedRanges(
  container: HTMLElement
): { op: string; start: number; end: number }[] {
  return Array.from(container.querySelectorAll<HTMLElement>(".token-span")).map((el) => ({
    op: el.dataset.op ?? "",
    start: Number(el.dataset.start),
    end: Number(el.dataset.end)
  }));
}
