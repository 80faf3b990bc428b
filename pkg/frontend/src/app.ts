import { AnnotationApi, ApiError } from "./api";
import { renderSide } from "./highlight";
import type { AnnotationTask } from "./types";

export const CATEGORY_DEFINITIONS: Record<string, { name: string; definition: string }> = {
  C1: {
    name: "Intensified Sentiment",
    definition: "Stronger positive or negative wording for the same situation."
  },
  C2: {
    name: "Elaborated Details",
    definition: "Significantly more detail about the same business situation."
  },
  C3: {
    name: "Plan Realization",
    definition: "A forecast or planned event is described as realized or underway."
  },
  C4: {
    name: "Emerging Situations",
    definition: "Completely new information appears."
  }
};

/**
 * Page controller. The only client-side state is the current task and the
 * annotator id (taken from the URL query); everything else lives on the
 * server. One request is in flight at a time and superseded responses are
 * dropped.
 */
export class AnnotationApp {
  private task: AnnotationTask | null = null;
  private epoch = 0;
  private busy = false;

  constructor(
    private api: AnnotationApi,
    private doc: Document,
    readonly annotator: string
  ) {}

  static annotatorFromQuery(doc: Document): string {
    const params = new URLSearchParams(doc.location?.search ?? "");
    return params.get("annotator") ?? "";
  }

  private el<T extends HTMLElement>(id: string): T {
    const node = this.doc.getElementById(id);
    if (!node) throw new Error(`missing element #${id}`);
    return node as T;
  }

  currentTask(): AnnotationTask | null {
    return this.task;
  }

  scoreValue(): 1 | -1 | null {
    const checked = this.doc.querySelector<HTMLInputElement>('input[name="score"]:checked');
    if (!checked) return null;
    return checked.value === "1" ? 1 : -1;
  }

  categoryValue(): string | null {
    const checked = this.doc.querySelector<HTMLInputElement>('input[name="category"]:checked');
    return checked ? checked.value : null;
  }

  /** Mirrors the server's label constraints so invalid posts are impossible. */
  canSubmit(): boolean {
    const score = this.scoreValue();
    if (this.task === null || score === null) return false;
    if (score === -1) return this.categoryValue() !== null;
    return true;
  }

  updateFormState(): void {
    const score = this.scoreValue();
    const categoryGroup = this.el<HTMLFieldSetElement>("category-group");
    categoryGroup.disabled = score !== -1;
    if (score !== -1) {
      for (const radio of this.doc.querySelectorAll<HTMLInputElement>('input[name="category"]')) {
        radio.checked = false;
      }
    }
    this.el<HTMLButtonElement>("submit").disabled = !this.canSubmit();
  }

  private resetForm(): void {
    for (const radio of this.doc.querySelectorAll<HTMLInputElement>(
      'input[name="score"], input[name="category"]'
    )) {
      radio.checked = false;
    }
    this.showError(null);
    this.updateFormState();
  }

  showError(message: string | null): void {
    const node = this.el<HTMLElement>("form-error");
    node.hidden = message === null;
    node.textContent = message ?? "";
  }

  renderTask(task: AnnotationTask | null): void {
    this.task = task;
    const taskPanel = this.el<HTMLElement>("task-panel");
    const donePanel = this.el<HTMLElement>("done-panel");
    if (task === null) {
      taskPanel.hidden = true;
      donePanel.hidden = false;
      return;
    }
    taskPanel.hidden = false;
    donePanel.hidden = true;
    if (task.instructions) {
      this.el<HTMLElement>("instructions").textContent = task.instructions;
    }
    renderSide(this.el("sentence-a"), task.tokens_a, task.diff, "a");
    renderSide(this.el("sentence-b"), task.tokens_b, task.diff, "b");
    this.el<HTMLElement>("pair-meta").textContent = task.company
      ? `${task.pair_id} (${task.company})`
      : task.pair_id;
    this.resetForm();
  }

  async loadNext(): Promise<void> {
    const myEpoch = ++this.epoch;
    const task = await this.api.nextPair(this.annotator);
    if (myEpoch !== this.epoch) return; // superseded fetch
    this.renderTask(task);
  }

  async refreshKappa(): Promise<void> {
    const report = await this.api.kappa();
    this.el<HTMLElement>("kappa-value").textContent =
      report.kappa === null ? "n/a" : report.kappa.toFixed(4);
    this.el<HTMLElement>("kappa-pairs").textContent = String(report.n_pairs);
  }

  async refreshConflicts(): Promise<void> {
    const list = this.el<HTMLElement>("conflicts-list");
    const conflicts = await this.api.conflicts();
    list.textContent = "";
    for (const conflict of conflicts) {
      const item = this.doc.createElement("li");
      item.textContent = conflict.pair_id;
      list.appendChild(item);
    }
  }

  async submit(): Promise<void> {
    if (this.busy || !this.canSubmit() || this.task === null) return;
    const score = this.scoreValue() as 1 | -1;
    const body: Parameters<AnnotationApi["submitLabel"]>[0] = {
      pair_id: this.task.pair_id,
      annotator: this.annotator,
      score
    };
    const category = this.categoryValue();
    if (score === -1 && category) body.category = category;

    this.busy = true;
    try {
      await this.api.submitLabel(body);
    } catch (error) {
      // rejection stays inline; the form keeps its state and the pair stays
      const message = error instanceof ApiError ? error.message : String(error);
      this.showError(message);
      return;
    } finally {
      this.busy = false;
    }
    this.showError(null);
    await this.refreshKappa();
    await this.loadNext();
  }

  wire(): void {
    this.el<HTMLElement>("annotator-badge").textContent = this.annotator;
    for (const radio of this.doc.querySelectorAll<HTMLInputElement>(
      'input[name="score"], input[name="category"]'
    )) {
      radio.addEventListener("change", () => this.updateFormState());
    }
    this.el<HTMLFormElement>("label-form").addEventListener("submit", (event) => {
      event.preventDefault();
      void this.submit();
    });
    const conflictsPanel = this.el<HTMLDetailsElement>("conflicts-panel");
    conflictsPanel.addEventListener("toggle", () => {
      if (conflictsPanel.open) void this.refreshConflicts();
    });
  }

  async start(): Promise<void> {
    this.wire();
    await this.refreshKappa();
    await this.loadNext();
  }
}
