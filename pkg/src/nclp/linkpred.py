"""Hadamard-product decoder, ranking metrics and similarity histograms."""

from __future__ import annotations

import io
from dataclasses import dataclass, field

import numpy as np
from scipy.stats import rankdata

from .autodiff import Adam, ParamSet, Tape, Tensor, stable_sigmoid
from .models import Mlp
from .transforms import sample_node_pairs


class DecoderMlp:
    """``sigmoid(Mlp(h_u * h_v))`` with a single PReLU hidden layer."""

    def __init__(self, mlp: Mlp):
        self.mlp = mlp

    @classmethod
    def init(cls, dim: int, hidden: int = 256, seed=0, dtype=np.float32) -> "DecoderMlp":
        return cls(Mlp.init(dim, hidden, 1, seed, dtype))

    @property
    def params(self) -> ParamSet:
        return self.mlp.params

    def logits(self, tape: Tape, h: Tensor, pairs) -> Tensor:
        pairs = _check_pairs(pairs, h.shape[0])
        prod = tape.hadamard(tape.gather_rows(h, pairs[:, 0]), tape.gather_rows(h, pairs[:, 1]))
        return self.mlp.forward(tape, prod)

    def decode(self, h, pairs) -> np.ndarray:
        """Scores in (0, 1), one per pair."""
        h = h if isinstance(h, Tensor) else Tensor(np.asarray(h, dtype=self.params["fc1.weight"].dtype))
        return stable_sigmoid(self.logits(Tape(enabled=False), h, pairs).data[:, 0])


def decode(dec: DecoderMlp, h, pairs) -> np.ndarray:
    return dec.decode(h, pairs)


def _check_pairs(pairs, n: int) -> np.ndarray:
    pairs = np.asarray(pairs, dtype=np.int64).reshape(-1, 2)
    if pairs.size and (pairs.min() < 0 or pairs.max() >= n):
        raise IndexError(f"pair endpoint out of range for {n} embeddings")
    return pairs


def hits_at_k(pos_scores, neg_scores, k: int = 50) -> float:
    """Fraction of positives scoring strictly above the k-th best negative."""
    if k <= 0:
        raise ValueError("k must be positive")
    pos = np.asarray(pos_scores, dtype=np.float64).ravel()
    neg = np.asarray(neg_scores, dtype=np.float64).ravel()
    if pos.size == 0:
        raise ValueError("hits_at_k needs at least one positive score")
    if neg.size < k:
        return 1.0
    threshold = np.partition(neg, neg.size - k)[neg.size - k]
    return float(np.count_nonzero(pos > threshold) / pos.size)


def auc_roc(pos_scores, neg_scores) -> float:
    """Mann-Whitney ``P(pos > neg) + P(pos == neg) / 2`` via average ranks."""
    pos = np.asarray(pos_scores, dtype=np.float64).ravel()
    neg = np.asarray(neg_scores, dtype=np.float64).ravel()
    if pos.size == 0 or neg.size == 0:
        raise ValueError("auc_roc needs non-empty positive and negative scores")
    ranks = rankdata(np.concatenate([pos, neg]))
    m = pos.size
    u = ranks[:m].sum() - m * (m + 1) / 2.0
    return float(u / (m * neg.size))


@dataclass
class DecoderResult:
    decoder: DecoderMlp
    losses: list[float] = field(default_factory=list)
    best_epoch: int | None = None
    best_valid: float | None = None


def train_decoder(dec: DecoderMlp, h, train_pairs, valid_pos=None, valid_neg=None, *,
                  epochs: int = 1000, patience: int = 50, lr: float = 1e-3, seed: int = 0,
                  weight_decay: float = 0.0) -> DecoderResult:
    """Fit ``dec`` on frozen embeddings with BCE against 1:1 fresh negatives.

    Negatives are resampled every epoch, uniform over pairs that are not
    training edges. With validation pairs, keeps the weights of the best
    validation Hits@50 and stops after ``patience`` epochs without a gain.
    """
    h = Tensor(np.asarray(h, dtype=dec.params["fc1.weight"].dtype))
    n = h.shape[0]
    train_pairs = _check_pairs(train_pairs, n)
    if len(train_pairs) == 0:
        raise ValueError("decoder training needs positive pairs")
    lo, hi = train_pairs.min(axis=1), train_pairs.max(axis=1)
    keys = np.unique(lo * n + hi)
    labels = np.concatenate([np.ones(len(train_pairs)), np.zeros(len(train_pairs))])
    rng = np.random.default_rng([seed, 2])
    opt = Adam(dec.params, lr, weight_decay=weight_decay)
    result = DecoderResult(decoder=dec)
    use_valid = valid_pos is not None and len(valid_pos) > 0
    best_state, wait = None, 0
    for epoch in range(epochs):
        neg = sample_node_pairs(n, len(train_pairs), rng, keys)
        tape = Tape()
        loss = tape.bce_with_logits(dec.logits(tape, h, np.concatenate([train_pairs, neg])), labels)
        dec.params.zero_grad()
        tape.backward(loss)
        opt.step()
        result.losses.append(loss.item())
        if not use_valid:
            continue
        score = hits_at_k(dec.decode(h, valid_pos), dec.decode(h, valid_neg), 50)
        if result.best_valid is None or score > result.best_valid:
            result.best_valid, result.best_epoch, wait = score, epoch, 0
            best_state = {k: v.copy() for k, v in dec.params.state().items()}
        else:
            wait += 1
            if wait >= patience:
                break
    if best_state is not None:
        dec.params.load_state(best_state)
    return result


@dataclass
class ScoredEdges:
    """Scored evaluation pairs; ``bucket`` is "all" in the transductive setting."""

    pairs: np.ndarray
    scores: np.ndarray
    labels: np.ndarray  # 1 positive, 0 negative
    buckets: np.ndarray

    def __post_init__(self):
        if not np.all(np.isfinite(self.scores)):
            raise ValueError("scores must be finite")

    def metrics(self, k: int = 50) -> dict[str, dict[str, float]]:
        """Hits@k and AUC per bucket; negatives are shared across buckets."""
        neg = self.scores[self.labels == 0]
        out = {}
        for b in ["all"] + sorted(set(self.buckets[self.labels == 1].tolist()) - {"all"}):
            sel = self.labels == 1 if b == "all" else (self.labels == 1) & (self.buckets == b)
            pos = self.scores[sel]
            if pos.size == 0:
                continue
            out[b] = {f"hits@{k}": hits_at_k(pos, neg, k), "auc": auc_roc(pos, neg)}
        return out


@dataclass
class SimilarityHistogram:
    edges: np.ndarray
    count_pos: np.ndarray
    count_neg: np.ndarray
    mean_pos: float
    mean_neg: float

    def to_csv(self) -> str:
        buf = io.StringIO()
        buf.write("bin_lo,bin_hi,count_pos,count_neg\n")
        for lo, hi, p, q in zip(self.edges[:-1], self.edges[1:], self.count_pos, self.count_neg):
            buf.write(f"{lo:.6g},{hi:.6g},{int(p)},{int(q)}\n")
        return buf.getvalue()

    def mass_at_or_above(self, value: float, label: str = "neg") -> float:
        """Fraction of pairs with ``label`` in bins whose lower edge is >= value."""
        counts = self.count_neg if label == "neg" else self.count_pos
        total = counts.sum()
        if total == 0:
            return 0.0
        return float(counts[self.edges[:-1] >= value - 1e-12].sum() / total)


def pair_cosine(h: np.ndarray, pairs) -> np.ndarray:
    h = np.asarray(h, dtype=np.float64)
    pairs = _check_pairs(pairs, h.shape[0])
    a, b = h[pairs[:, 0]], h[pairs[:, 1]]
    den = np.linalg.norm(a, axis=1) * np.linalg.norm(b, axis=1)
    ok = den > 1e-8
    cos = np.where(ok, np.einsum("ij,ij->i", a, b) / np.where(ok, den, 1.0), 0.0)
    return np.clip(cos, -1.0, 1.0)


def export_similarity_histogram(h, pos_pairs, neg_pairs, bins: int = 50) -> SimilarityHistogram:
    """Per-label histogram of pair cosine similarities over [-1, 1]."""
    cp, cn = pair_cosine(h, pos_pairs), pair_cosine(h, neg_pairs)
    edges = np.linspace(-1.0, 1.0, bins + 1)
    return SimilarityHistogram(
        edges=edges,
        count_pos=np.histogram(cp, bins=edges)[0],
        count_neg=np.histogram(cn, bins=edges)[0],
        mean_pos=float(cp.mean()) if cp.size else float("nan"),
        mean_neg=float(cn.mean()) if cn.size else float("nan"),
    )
