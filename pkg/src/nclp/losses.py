"""Method losses expressed as tape ops, so every one is differentiable."""

from __future__ import annotations

import numpy as np

from .autodiff import Tape, Tensor


def bgrl_loss(tape: Tape, z: Tensor, h2: Tensor) -> Tensor:
    """``-(2/n) * sum_i cos(z_i, h2_i)``."""
    n = z.shape[0]
    return tape.scale(tape.sum(tape.row_cosine(z, h2)), -2.0 / n)


def tbgrl_loss(tape: Tape, z: Tensor, h2: Tensor, h_corrupt: Tensor, lam: float) -> Tensor:
    """``(lam/n) sum cos(z, h_corrupt) - ((1-lam)/n) sum cos(z, h2)``."""
    if not 0.0 <= lam <= 1.0:
        raise ValueError("lam must lie in [0, 1]")
    n = z.shape[0]
    repel = tape.scale(tape.sum(tape.row_cosine(z, h_corrupt)), lam / n)
    attract = tape.scale(tape.sum(tape.row_cosine(z, h2)), (1.0 - lam) / n)
    return tape.sub(repel, attract)


def margin_loss(tape: Tape, h: Tensor, anchors, positives, negatives, margin: float) -> Tensor:
    """Mean of ``max(0, h_u.h_w - h_u.h_v + margin)`` over (u, v, w) triples."""
    hu = tape.gather_rows(h, anchors)
    pos = tape.row_dot(hu, tape.gather_rows(h, positives))
    neg = tape.row_dot(hu, tape.gather_rows(h, negatives))
    return tape.mean(tape.relu(tape.add_const(tape.sub(neg, pos), margin)))


def grace_loss(tape: Tape, z1: Tensor, z2: Tensor, tau: float) -> Tensor:
    """Symmetric InfoNCE with inter- and intra-view negatives."""
    if tau <= 0:
        raise ValueError("temperature must be positive")
    n = z1.shape[0]
    u, v = tape.row_normalize(z1), tape.row_normalize(z2)
    between = tape.scale(tape.matmul(u, tape.transpose(v)), 1.0 / tau)
    mask = np.concatenate([np.ones((n, n), dtype=bool), ~np.eye(n, dtype=bool)], axis=1)

    def one_side(b: Tensor, a: Tensor) -> Tensor:
        within = tape.scale(tape.matmul(a, tape.transpose(a)), 1.0 / tau)
        lse = tape.logsumexp_rows(tape.concat_cols(b, within), mask)
        return tape.sum(tape.sub(lse, tape.diag(b)))

    total = tape.add(one_side(between, u), one_side(tape.transpose(between), v))
    return tape.scale(total, 1.0 / (2 * n))


def gbt_loss(tape: Tape, z1: Tensor, z2: Tensor, w_off: float | None = None) -> Tensor:
    """Barlow Twins on column-standardized embeddings, ``C = Z1^T Z2 / n``."""
    n, d = z1.shape
    if n < 2:
        raise ValueError("need at least two rows to standardize")
    w_off = 1.0 / d if w_off is None else w_off
    c = tape.scale(tape.matmul(tape.transpose(tape.standardize_columns(z1)),
                               tape.standardize_columns(z2)), 1.0 / n)
    eye = np.eye(d)
    weights = eye + w_off * (1.0 - eye)
    return tape.sum(tape.mul_const(tape.square(tape.add_const(c, -eye)), weights))


def ccassg_loss(tape: Tape, z1: Tensor, z2: Tensor, w_dec: float = 1e-3) -> Tensor:
    """Invariance ``|Z1 - Z2|_F^2`` plus ``w_dec`` times decorrelation terms."""
    n, d = z1.shape
    if n < 2:
        raise ValueError("need at least two rows to standardize")
    s = 1.0 / np.sqrt(n)
    a = tape.scale(tape.standardize_columns(z1), s)
    b = tape.scale(tape.standardize_columns(z2), s)
    eye = np.eye(d)
    inv = tape.sum(tape.square(tape.sub(a, b)))
    dec_a = tape.sum(tape.square(tape.add_const(tape.matmul(tape.transpose(a), a), -eye)))
    dec_b = tape.sum(tape.square(tape.add_const(tape.matmul(tape.transpose(b), b), -eye)))
    return tape.add(inv, tape.scale(tape.add(dec_a, dec_b), w_dec))
