export type DiffOp = "equal" | "insert" | "delete" | "replace";

export type DiffSpan = {
  op: DiffOp;
  a_start: number;
  a_end: number;
  b_start: number;
  b_end: number;
};

export type AnnotationTask = {
  pair_id: string;
  company: string;
  sentence_a: string;
  sentence_b: string;
  tokens_a: string[];
  tokens_b: string[];
  diff: DiffSpan[];
  status: string;
  n_labels: number;
  instructions?: string;
  categories?: Record<string, string>;
};

export type KappaReport = {
  kappa: number | null;
  n_pairs: number;
};

export type LabelSubmission = {
  pair_id: string;
  annotator: string;
  score: 1 | -1;
  category?: string;
};

export type ConflictSummary = {
  pair_id: string;
  sentence_a: string;
  sentence_b: string;
  status: string;
};
