"""Cosine metric, margin triplet loss, and the trainable embedding head.

The loss over a triplet (anchor a, positive p, negative n) is

    L(a, p, n) = 0.5 * max(0, m + d(a, p) - d(a, n)),

with d the cosine distance 1 - (i . j)/(||i|| ||j||) and m the margin. The
trainable component is a single affine head over frozen descriptors whose
outputs are L2-normalized; it is optimized with momentum SGD under a cosine
learning-rate decay and full-batch triplet gradients at desk scale.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np


def cosine_similarity(i: np.ndarray, j: np.ndarray) -> float:
    i = np.asarray(i, dtype=np.float64)
    j = np.asarray(j, dtype=np.float64)
    ni = float(np.linalg.norm(i))
    nj = float(np.linalg.norm(j))
    if ni == 0.0 or nj == 0.0:
        raise ValueError("cosine similarity is undefined for zero-norm vectors")
    if i.shape == j.shape and np.array_equal(i, j):
        return 1.0  # keep d(i, i) exactly 0 despite sqrt roundoff
    return float(np.clip(np.dot(i, j) / (ni * nj), -1.0, 1.0))


def cosine_distance(i: np.ndarray, j: np.ndarray) -> float:
    """1 - cosine_similarity; 0 for identical directions, 2 for antipodal."""
    return 1.0 - cosine_similarity(i, j)


def triplet_loss(a: np.ndarray, p: np.ndarray, n: np.ndarray, m: float = 0.8) -> float:
    return 0.5 * max(0.0, m + cosine_distance(a, p) - cosine_distance(a, n))


def _cosine_sim_grads(a: np.ndarray, b: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    # d sim/da = (b_hat - sim * a_hat) / ||a||, symmetrically for b
    na = np.linalg.norm(a)
    nb = np.linalg.norm(b)
    a_hat = a / na
    b_hat = b / nb
    sim = float(np.dot(a_hat, b_hat))
    return (b_hat - sim * a_hat) / na, (a_hat - sim * b_hat) / nb


def triplet_loss_grad(
    a: np.ndarray, p: np.ndarray, n: np.ndarray, m: float = 0.8
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Analytic gradients of the triplet loss w.r.t. (a, p, n).

    All-zero when the hinge is inactive (m + d(a,p) - d(a,n) <= 0).
    """
    a = np.asarray(a, dtype=np.float64)
    p = np.asarray(p, dtype=np.float64)
    n = np.asarray(n, dtype=np.float64)
    hinge = m + cosine_distance(a, p) - cosine_distance(a, n)
    if hinge <= 0.0:
        return np.zeros_like(a), np.zeros_like(p), np.zeros_like(n)
    dsim_ap_da, dsim_ap_dp = _cosine_sim_grads(a, p)
    dsim_an_da, dsim_an_dn = _cosine_sim_grads(a, n)
    # d(a,b) = 1 - sim(a,b), so dd/dx = -dsim/dx
    ga = 0.5 * (-dsim_ap_da + dsim_an_da)
    gp = 0.5 * (-dsim_ap_dp)
    gn = 0.5 * dsim_an_dn
    return ga, gp, gn


@dataclass(frozen=True)
class Triplet:
    """Indices into a descriptor table: label(a) == label(p) != label(n)."""

    a: int
    p: int
    n: int


def mine_triplets(labels, per_anchor: int = 1, seed: int = 0) -> list[Triplet]:
    """Uniform random triplets, ``per_anchor`` per eligible anchor.

    Anchors are samples whose class has at least two members; a single-class
    label list has no negatives and raises. Deterministic given the seed.
    """
    labels = list(labels)
    classes: dict[object, list[int]] = {}
    for idx, lab in enumerate(labels):
        classes.setdefault(lab, []).append(idx)
    if len(classes) < 2:
        raise ValueError("triplet mining needs at least two classes")
    rng = np.random.default_rng(seed)
    triplets: list[Triplet] = []
    for anchor, lab in enumerate(labels):
        same = classes[lab]
        if len(same) < 2:
            continue
        others = [i for i in range(len(labels)) if labels[i] != lab]
        for _ in range(per_anchor):
            pos = anchor
            while pos == anchor:
                pos = same[rng.integers(len(same))]
            neg = others[rng.integers(len(others))]
            triplets.append(Triplet(a=anchor, p=pos, n=neg))
    return triplets


@dataclass(frozen=True)
class TrainConfig:
    margin: float = 0.8
    learning_rate: float = 0.01
    momentum: float = 0.9
    iterations: int = 50
    seed: int = 0
    head_dims: tuple[int, int] | None = None  # (input_dim, output_dim); None = square
    triplets_per_anchor: int = 4
    batch_size_cap: int = 256  # applied only beyond full_batch_limit triplets
    full_batch_limit: int = 10_000

    def __post_init__(self):
        if self.margin <= 0:
            raise ValueError("margin must be > 0")
        if not (0.0 <= self.momentum < 1.0):
            raise ValueError("momentum must lie in [0, 1)")
        if self.iterations < 1:
            raise ValueError("iterations must be >= 1")
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be > 0")


@dataclass(frozen=True)
class EmbeddingHead:
    """Affine map followed by mandatory L2 normalization of the output."""

    weight: np.ndarray  # (output_dim, input_dim)
    bias: np.ndarray  # (output_dim,)

    def __post_init__(self):
        w = np.asarray(self.weight, dtype=np.float64)
        b = np.asarray(self.bias, dtype=np.float64)
        if w.ndim != 2 or b.ndim != 1 or b.shape[0] != w.shape[0]:
            raise ValueError("head shapes must be weight (out, in), bias (out,)")
        if not (np.all(np.isfinite(w)) and np.all(np.isfinite(b))):
            raise ValueError("head parameters must be finite")
        object.__setattr__(self, "weight", w)
        object.__setattr__(self, "bias", b)

    @property
    def input_dim(self) -> int:
        return self.weight.shape[1]

    @property
    def output_dim(self) -> int:
        return self.weight.shape[0]


def embed(head: EmbeddingHead, d) -> np.ndarray:
    """L2-normalized affine map of a descriptor (or raw vector)."""
    vec = np.asarray(getattr(d, "vector", d), dtype=np.float64)
    if vec.shape != (head.input_dim,):
        raise ValueError(
            f"dimension mismatch: head expects {head.input_dim}, got {vec.shape}"
        )
    z = head.weight @ vec + head.bias
    norm = np.linalg.norm(z)
    if norm == 0.0:
        raise ValueError("head output collapsed to the zero vector")
    return z / norm


def embed_rows(head: EmbeddingHead, table: np.ndarray) -> np.ndarray:
    """Row-wise ``embed`` over an (N, input_dim) descriptor table."""
    z = table @ head.weight.T + head.bias
    norms = np.linalg.norm(z, axis=1, keepdims=True)
    if np.any(norms == 0.0):
        raise ValueError("head output collapsed to the zero vector")
    return z / norms


def cosine_lr(base: float, iteration: int, total: int) -> float:
    """Cosine decay from ``base`` at iteration 0 to 0 at the final iteration."""
    if total <= 1:
        return base
    return base * 0.5 * (1.0 + math.cos(math.pi * iteration / (total - 1)))


def _mean_loss_and_grads(embeddings: np.ndarray, triplets, margin: float):
    # embeddings are unit rows; cosine distance reduces to 1 - dot.
    n_rows, _ = embeddings.shape
    grad_e = np.zeros_like(embeddings)
    total = 0.0
    active = 0
    for t in triplets:
        ea, ep, en = embeddings[t.a], embeddings[t.p], embeddings[t.n]
        hinge = margin + (1.0 - float(ea @ ep)) - (1.0 - float(ea @ en))
        if hinge > 0.0:
            total += 0.5 * hinge
            active += 1
            grad_e[t.a] += 0.5 * (en - ep)
            grad_e[t.p] += -0.5 * ea
            grad_e[t.n] += 0.5 * ea
    count = len(triplets)
    return total / count, grad_e / count, active


def mean_triplet_loss(embeddings: np.ndarray, triplets, margin: float) -> float:
    loss, _, _ = _mean_loss_and_grads(embeddings, triplets, margin)
    return loss


def train_head(
    descriptors: np.ndarray, labels, cfg: TrainConfig | None = None
) -> EmbeddingHead:
    """Fit the embedding head with momentum SGD over mined triplet losses.

    The learning rate follows a cosine decay from cfg.learning_rate to 0
    across cfg.iterations. Parameters are snapshotted after every update and
    the lowest-full-set-loss snapshot is returned, so the result never does
    worse on the training triplets than the initialization. Deterministic
    given cfg.seed. Raises if the loss turns non-finite, naming the
    iteration.
    """
    cfg = cfg or TrainConfig()
    table = np.asarray(descriptors, dtype=np.float64)
    if table.ndim != 2 or table.shape[0] == 0:
        raise ValueError("descriptor table must be a nonempty (N, D) array")
    labels = list(labels)
    if len(labels) != table.shape[0]:
        raise ValueError("labels length must match the descriptor count")

    in_dim = table.shape[1]
    out_dim = in_dim if cfg.head_dims is None else int(cfg.head_dims[1])
    if cfg.head_dims is not None and int(cfg.head_dims[0]) != in_dim:
        raise ValueError(
            f"head_dims input {cfg.head_dims[0]} does not match descriptors ({in_dim})"
        )
    rng = np.random.default_rng(cfg.seed)
    if out_dim == in_dim:
        weight = np.eye(out_dim)
    else:
        weight = rng.standard_normal((out_dim, in_dim)) / math.sqrt(in_dim)
    bias = np.zeros(out_dim)

    triplets = mine_triplets(labels, per_anchor=cfg.triplets_per_anchor, seed=cfg.seed)
    use_minibatch = len(triplets) > cfg.full_batch_limit

    def full_loss(w, b):
        e = embed_rows(EmbeddingHead(w, b), table)
        return mean_triplet_loss(e, triplets, cfg.margin)

    best_w, best_b = weight.copy(), bias.copy()
    best_loss = full_loss(weight, bias)
    vel_w = np.zeros_like(weight)
    vel_b = np.zeros_like(bias)

    for it in range(cfg.iterations):
        lr = cosine_lr(cfg.learning_rate, it, cfg.iterations)
        if use_minibatch:
            pick = rng.choice(len(triplets), size=cfg.batch_size_cap, replace=False)
            batch = [triplets[i] for i in pick]
        else:
            batch = triplets

        z = table @ weight.T + bias
        norms = np.linalg.norm(z, axis=1, keepdims=True)
        if np.any(norms == 0.0):
            raise ArithmeticError(f"embedding collapsed to zero at iteration {it}")
        e = z / norms
        loss, grad_e, _ = _mean_loss_and_grads(e, batch, cfg.margin)
        if not math.isfinite(loss):
            raise ArithmeticError(f"training diverged (non-finite loss) at iteration {it}")
        # back through row normalization: dz = (de - e * (e . de)) / ||z||
        inner = np.sum(e * grad_e, axis=1, keepdims=True)
        grad_z = (grad_e - e * inner) / norms
        grad_w = grad_z.T @ table
        grad_b = grad_z.sum(axis=0)

        vel_w = cfg.momentum * vel_w - lr * grad_w
        vel_b = cfg.momentum * vel_b - lr * grad_b
        weight = weight + vel_w
        bias = bias + vel_b

        current = full_loss(weight, bias)
        if not math.isfinite(current):
            raise ArithmeticError(f"training diverged (non-finite loss) at iteration {it}")
        if current < best_loss:
            best_loss = current
            best_w, best_b = weight.copy(), bias.copy()

    return EmbeddingHead(weight=best_w, bias=best_b)


def save_head(head: EmbeddingHead, path: str | Path) -> None:
    """JSON header line + packed little-endian float32 weight then bias."""
    header = {"input_dim": head.input_dim, "output_dim": head.output_dim}
    payload = head.weight.astype("<f4").tobytes() + head.bias.astype("<f4").tobytes()
    with open(path, "wb") as fh:
        fh.write(json.dumps(header).encode("utf-8"))
        fh.write(b"\n")
        fh.write(payload)


def load_head(path: str | Path) -> EmbeddingHead:
    with open(path, "rb") as fh:
        header = json.loads(fh.readline().decode("utf-8"))
        payload = fh.read()
    in_dim, out_dim = int(header["input_dim"]), int(header["output_dim"])
    expected = (out_dim * in_dim + out_dim) * 4
    if len(payload) != expected:
        raise ValueError(f"head payload size mismatch in {path}")
    floats = np.frombuffer(payload, dtype="<f4")
    weight = floats[: out_dim * in_dim].reshape(out_dim, in_dim).astype(np.float64)
    bias = floats[out_dim * in_dim :].astype(np.float64)
    return EmbeddingHead(weight=weight, bias=bias)
