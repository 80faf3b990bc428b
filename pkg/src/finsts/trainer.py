"""Projection-head training over frozen embeddings: cosine triplet loss with
an exact analytic gradient, Adam, and linear learning-rate warmup."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .augment import TripletDataset
from .metrics import ZeroNormError, cosine


class TrainerError(ValueError):
    pass


class HeadDimensionError(TrainerError):
    pass


class NonFiniteLossError(RuntimeError):
    pass


@dataclass(frozen=True)
class HeadParameters:
    """Linear map (k x d weight, optional bias) applied to base embeddings."""

    weight: np.ndarray
    bias: np.ndarray | None = None

    @property
    def k(self) -> int:
        return self.weight.shape[0]

    @property
    def d(self) -> int:
        return self.weight.shape[1]


@dataclass(frozen=True)
class TrainingConfig:
    margin: float = 0.2
    batch_size: int = 64
    learning_rate: float = 1e-2
    warmup_fraction: float = 0.10
    epochs: int = 20
    seed: int = 0
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_epsilon: float = 1e-8

    def __post_init__(self):
        if self.margin < 0:
            raise TrainerError(f"margin must be >= 0, got {self.margin}")
        if not 0 < self.warmup_fraction < 1:
            raise TrainerError(f"warmup_fraction must be in (0, 1), got {self.warmup_fraction}")
        if self.batch_size < 1:
            raise TrainerError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.epochs < 0:
            raise TrainerError(f"epochs must be >= 0, got {self.epochs}")
        if self.learning_rate <= 0:
            raise TrainerError(f"learning_rate must be > 0, got {self.learning_rate}")


@dataclass
class TrainReport:
    epoch_mean_losses: list[float] = field(default_factory=list)
    step_count: int = 0
    checkpoint_path: str | None = None
    split_sizes: tuple[int, int] | None = None

    def to_json(self) -> dict:
        return {
            "epoch_mean_losses": self.epoch_mean_losses,
            "step_count": self.step_count,
            "checkpoint_path": self.checkpoint_path,
            "split_sizes": list(self.split_sizes) if self.split_sizes else None,
        }


def init_head(d: int, k: int, seed: int, noise_scale: float = 0.01) -> HeadParameters:
    """Truncated identity [I_k | 0] plus seeded uniform noise."""
    if not 1 <= k <= d:
        raise HeadDimensionError(f"need 1 <= k <= d, got k={k}, d={d}")
    rng = np.random.default_rng(seed)
    weight = np.eye(k, d)
    if noise_scale:
        weight = weight + rng.uniform(-noise_scale, noise_scale, size=(k, d))
    return HeadParameters(weight=weight)


def project(head: HeadParameters, v) -> np.ndarray:
    vec = np.asarray(v, dtype=np.float64)
    if vec.ndim != 1 or vec.shape[0] != head.d:
        raise TrainerError(f"expected vector of dim {head.d}, got shape {vec.shape}")
    out = head.weight @ vec
    if head.bias is not None:
        out = out + head.bias
    return out


def project_rows(head: HeadParameters, rows) -> np.ndarray:
    mat = np.asarray(rows, dtype=np.float64)
    if mat.ndim != 2 or mat.shape[1] != head.d:
        raise TrainerError(f"expected matrix with dim {head.d}, got shape {mat.shape}")
    out = mat @ head.weight.T
    if head.bias is not None:
        out = out + head.bias
    return out


def triplet_loss(s, p, n, margin: float) -> float:
    """Hinge max(cos(s, n) - cos(s, p) + margin, 0)."""
    return max(cosine(s, n) - cosine(s, p) + margin, 0.0)


def loss_gradient(
    head: HeadParameters, triplet, margin: float
) -> tuple[np.ndarray, np.ndarray | None]:
    """Exact gradient of the projected triplet loss w.r.t. weight and bias.

    Returns zeros when the hinge is inactive. The cosine partials are
    d cos(u, r)/du = r / (|u||r|) - cos(u, r) u / |u|^2, chained through the
    linear projection by an outer product with the input vector.
    """
    s, p, n = (np.asarray(t, dtype=np.float64) for t in triplet)
    u = project(head, s)
    q = project(head, p)
    r = project(head, n)
    nu, nq, nr = (float(np.linalg.norm(x)) for x in (u, q, r))
    if nu == 0.0 or nq == 0.0 or nr == 0.0:
        raise ZeroNormError("projected triplet has a zero-norm vector")

    cos_up = float(u @ q) / (nu * nq)
    cos_un = float(u @ r) / (nu * nr)
    grad_w = np.zeros_like(head.weight)
    grad_b = np.zeros(head.k) if head.bias is not None else None
    if cos_un - cos_up + margin <= 0.0:
        return grad_w, grad_b

    grad_u = (r / (nu * nr) - cos_un * u / nu**2) - (q / (nu * nq) - cos_up * u / nu**2)
    grad_q = -(u / (nu * nq) - cos_up * q / nq**2)
    grad_r = u / (nu * nr) - cos_un * r / nr**2

    grad_w = np.outer(grad_u, s) + np.outer(grad_q, p) + np.outer(grad_r, n)
    if grad_b is not None:
        grad_b = grad_u + grad_q + grad_r
    return grad_w, grad_b


def _batch_loss_grad(
    weight: np.ndarray,
    bias: np.ndarray | None,
    anchors: np.ndarray,
    positives: np.ndarray,
    negatives: np.ndarray,
    margin: float,
) -> tuple[np.ndarray, np.ndarray, np.ndarray | None]:
    """Per-triplet losses plus the mean gradient over a batch."""
    u = anchors @ weight.T
    q = positives @ weight.T
    r = negatives @ weight.T
    if bias is not None:
        u = u + bias
        q = q + bias
        r = r + bias
    nu = np.linalg.norm(u, axis=1)
    nq = np.linalg.norm(q, axis=1)
    nr = np.linalg.norm(r, axis=1)
    if np.any(nu == 0.0) or np.any(nq == 0.0) or np.any(nr == 0.0):
        raise ZeroNormError("projected batch contains a zero-norm vector")

    cos_up = np.einsum("ij,ij->i", u, q) / (nu * nq)
    cos_un = np.einsum("ij,ij->i", u, r) / (nu * nr)
    pre = cos_un - cos_up + margin
    losses = np.maximum(pre, 0.0)
    active = (pre > 0.0).astype(np.float64)[:, None]

    gu = (r / (nu * nr)[:, None] - (cos_un / nu**2)[:, None] * u) - (
        q / (nu * nq)[:, None] - (cos_up / nu**2)[:, None] * u
    )
    gq = -(u / (nu * nq)[:, None] - (cos_up / nq**2)[:, None] * q)
    gr = u / (nu * nr)[:, None] - (cos_un / nr**2)[:, None] * r
    gu *= active
    gq *= active
    gr *= active

    batch = anchors.shape[0]
    grad_w = (gu.T @ anchors + gq.T @ positives + gr.T @ negatives) / batch
    grad_b = (gu + gq + gr).sum(axis=0) / batch if bias is not None else None
    return losses, grad_w, grad_b


class Adam:
    """Bias-corrected Adam over a list of parameter arrays."""

    def __init__(self, shapes, beta1: float = 0.9, beta2: float = 0.999, epsilon: float = 1e-8):
        self.beta1 = beta1
        self.beta2 = beta2
        self.epsilon = epsilon
        self.step_count = 0
        self.m = [np.zeros(shape) for shape in shapes]
        self.v = [np.zeros(shape) for shape in shapes]

    def step(self, params: list[np.ndarray], grads: list[np.ndarray], lr: float) -> list[np.ndarray]:
        self.step_count += 1
        t = self.step_count
        updated = []
        for i, (param, grad) in enumerate(zip(params, grads)):
            self.m[i] = self.beta1 * self.m[i] + (1 - self.beta1) * grad
            self.v[i] = self.beta2 * self.v[i] + (1 - self.beta2) * grad**2
            m_hat = self.m[i] / (1 - self.beta1**t)
            v_hat = self.v[i] / (1 - self.beta2**t)
            updated.append(param - lr * m_hat / (np.sqrt(v_hat) + self.epsilon))
        return updated


def split_dataset(
    ds: TripletDataset, train_fraction: float, seed: int
) -> tuple[TripletDataset, TripletDataset]:
    """Seeded shuffle, then split at floor(N * train_fraction)."""
    if not 0 < train_fraction < 1:
        raise TrainerError(f"train_fraction must be in (0, 1), got {train_fraction}")
    if len(ds) < 2:
        raise TrainerError("dataset too small to split")
    order = np.random.default_rng(seed).permutation(len(ds))
    cut = math.floor(len(ds) * train_fraction)
    train_records = [ds.records[i] for i in order[:cut]]
    test_records = [ds.records[i] for i in order[cut:]]
    return TripletDataset(train_records), TripletDataset(test_records)


def save_head(head: HeadParameters, cfg: TrainingConfig, epoch: int, path) -> str:
    """Write a checkpoint: dims, row-major weight, optional bias, config echo."""
    payload = {
        "d": head.d,
        "k": head.k,
        "weight": head.weight.reshape(-1).tolist(),
        "bias": head.bias.tolist() if head.bias is not None else None,
        "config": {
            "margin": cfg.margin,
            "batch_size": cfg.batch_size,
            "learning_rate": cfg.learning_rate,
            "warmup_fraction": cfg.warmup_fraction,
            "epochs": cfg.epochs,
            "seed": cfg.seed,
            "adam_beta1": cfg.adam_beta1,
            "adam_beta2": cfg.adam_beta2,
            "adam_epsilon": cfg.adam_epsilon,
        },
        "epoch": epoch,
    }
    target = Path(path)
    target.parent.mkdir(parents=True, exist_ok=True)
    target.write_text(json.dumps(payload, sort_keys=True), encoding="utf-8")
    return str(target)


def load_head(path) -> HeadParameters:
    payload = json.loads(Path(path).read_text(encoding="utf-8"))
    weight = np.asarray(payload["weight"], dtype=np.float64).reshape(payload["k"], payload["d"])
    bias = np.asarray(payload["bias"], dtype=np.float64) if payload.get("bias") else None
    return HeadParameters(weight=weight, bias=bias)


def train(
    ds: TripletDataset,
    embeddings,
    cfg: TrainingConfig,
    head_dim: int | None = None,
    checkpoint_path=None,
    split_sizes: tuple[int, int] | None = None,
) -> tuple[HeadParameters, TrainReport]:
    """Mini-batch Adam on the mean triplet loss with linear warmup.

    The learning rate ramps from 0 to cfg.learning_rate over the first
    warmup_fraction of total steps and stays constant after. Shuffling is
    reseeded per epoch from cfg.seed, so runs are fully deterministic given
    the dataset, config, and provider.
    """
    if not ds.records:
        raise TrainerError("training dataset is empty")

    anchors = embeddings.embed([r.anchor for r in ds.records])
    positives = embeddings.embed([r.positive for r in ds.records])
    negatives = embeddings.embed([r.negative for r in ds.records])
    n = anchors.shape[0]
    d = anchors.shape[1]
    k = head_dim if head_dim is not None else min(256, d)

    head = init_head(d, k, seed=cfg.seed)
    steps_per_epoch = math.ceil(n / cfg.batch_size)
    total_steps = cfg.epochs * steps_per_epoch
    warmup_steps = max(1, int(total_steps * cfg.warmup_fraction))
    adam = Adam(
        [head.weight.shape], beta1=cfg.adam_beta1, beta2=cfg.adam_beta2, epsilon=cfg.adam_epsilon
    )

    report = TrainReport(split_sizes=split_sizes)
    step = 0
    saved_path: str | None = None
    for epoch in range(cfg.epochs):
        order = np.random.default_rng([cfg.seed, epoch]).permutation(n)
        loss_sum = 0.0
        for start in range(0, n, cfg.batch_size):
            idx = order[start : start + cfg.batch_size]
            losses, grad_w, _ = _batch_loss_grad(
                head.weight, head.bias, anchors[idx], positives[idx], negatives[idx], cfg.margin
            )
            if not np.all(np.isfinite(losses)):
                raise NonFiniteLossError(
                    f"non-finite loss at epoch {epoch} step {step}; aborting"
                )
            loss_sum += float(losses.sum())
            lr = cfg.learning_rate * min(1.0, (step + 1) / warmup_steps)
            (new_weight,) = adam.step([head.weight], [grad_w], lr)
            head = replace(head, weight=new_weight)
            step += 1
        report.epoch_mean_losses.append(loss_sum / n)
        if checkpoint_path is not None:
            saved_path = save_head(head, cfg, epoch, checkpoint_path)

    report.step_count = step
    report.checkpoint_path = saved_path
    return head, report
