"""Reverse-mode gradients over a closed set of dense/sparse matrix ops.

Every value is a 2-d :class:`Tensor`. Ops are methods of :class:`Tape`; each
one computes its output eagerly and, if any input requires a gradient,
records a backward closure. :meth:`Tape.backward` replays the record in
exact reverse order. Inputs that do not require a gradient (target-network
weights, features, adjacency) are constants and never receive one.
"""

from __future__ import annotations

import math
import struct
from pathlib import Path

import numpy as np
import scipy.sparse as sp

COSINE_EPS = 1e-8


class NumericError(FloatingPointError):
    """A kernel produced NaN or Inf."""


class Tensor:
    __slots__ = ("data", "requires_grad", "grad")

    def __init__(self, data, requires_grad: bool = False):
        a = np.asarray(data)
        if a.ndim == 0:
            a = a.reshape(1, 1)
        elif a.ndim == 1:
            a = a.reshape(1, -1)
        elif a.ndim != 2:
            raise ValueError(f"tensors are 2-d, got shape {a.shape}")
        if not np.issubdtype(a.dtype, np.floating):
            a = a.astype(np.float64)
        self.data = a
        self.requires_grad = bool(requires_grad)
        self.grad = None

    @property
    def shape(self) -> tuple[int, int]:
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    def item(self) -> float:
        if self.data.size != 1:
            raise ValueError("item() needs a 1x1 tensor")
        return float(self.data[0, 0])

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, dtype={self.dtype}, requires_grad={self.requires_grad})"


def _same_shape(op, a: Tensor, b: Tensor) -> None:
    if a.shape != b.shape:
        raise ValueError(f"{op}: shape mismatch {a.shape} vs {b.shape}")


def _row_vector(op, x: Tensor, v: Tensor) -> None:
    if v.shape != (1, x.shape[1]):
        raise ValueError(f"{op}: expected (1, {x.shape[1]}), got {v.shape}")


class Tape:
    """Ordered record of executed ops for one loss evaluation.

    With ``enabled=False`` nothing is recorded (pure inference).
    """

    def __init__(self, enabled: bool = True, check_finite: bool = True):
        self.enabled = enabled
        self.check_finite = check_finite
        self._ops: list = []
        self._consumed = False

    def __len__(self) -> int:
        return len(self._ops)

    def recorded(self) -> list[tuple[str, tuple]]:
        """(op name, input tensors) for every recorded op, in execution order."""
        return [(op, inputs) for op, _, inputs, _ in self._ops]

    def reset(self) -> None:
        self._ops.clear()
        self._consumed = False

    def _emit(self, op: str, value: np.ndarray, inputs, backward) -> Tensor:
        if self.check_finite and not np.all(np.isfinite(value)):
            raise NumericError(f"{op} produced non-finite values")
        out = Tensor(value)
        if self.enabled and any(t.requires_grad for t in inputs):
            out.requires_grad = True
            self._ops.append((op, out, inputs, backward))
        return out

    def backward(self, loss: Tensor) -> None:
        if self._consumed:
            raise RuntimeError("backward already called on this tape")
        if loss.shape != (1, 1):
            raise ValueError("backward needs a scalar (1x1) loss")
        self._consumed = True
        if not loss.requires_grad:
            return
        loss.grad = np.ones_like(loss.data)
        for _, out, inputs, backward in reversed(self._ops):
            g = out.grad
            if g is None:
                continue
            for t, gi in zip(inputs, backward(g)):
                if gi is None or not t.requires_grad:
                    continue
                t.grad = gi if t.grad is None else t.grad + gi
            if out is not loss:
                out.grad = None
        self._ops.clear()

    # -- linear algebra ---------------------------------------------------

    def matmul(self, a: Tensor, b: Tensor) -> Tensor:
        if a.shape[1] != b.shape[0]:
            raise ValueError(f"matmul: shape mismatch {a.shape} @ {b.shape}")
        av, bv = a.data, b.data

        def backward(g):
            return (
                g @ bv.T if a.requires_grad else None,
                av.T @ g if b.requires_grad else None,
            )

        return self._emit("matmul", av @ bv, (a, b), backward)

    def spmm(self, s, b: Tensor) -> Tensor:
        """``s @ b`` with ``s`` a constant (sparse or dense) matrix."""
        m = s.matrix if hasattr(s, "matrix") else s
        if m.shape[1] != b.shape[0]:
            raise ValueError(f"spmm: shape mismatch {m.shape} @ {b.shape}")
        out = m @ b.data
        out = np.asarray(out.toarray() if sp.issparse(out) else out)

        def backward(g):
            return (np.asarray(m.T @ g),)

        return self._emit("spmm", out, (b,), backward)

    def transpose(self, a: Tensor) -> Tensor:
        return self._emit("transpose", np.ascontiguousarray(a.data.T), (a,), lambda g: (g.T,))

    # -- elementwise ------------------------------------------------------

    def add(self, a: Tensor, b: Tensor) -> Tensor:
        _same_shape("add", a, b)
        return self._emit("add", a.data + b.data, (a, b), lambda g: (g, g))

    def sub(self, a: Tensor, b: Tensor) -> Tensor:
        _same_shape("sub", a, b)
        return self._emit("sub", a.data - b.data, (a, b), lambda g: (g, -g))

    def scale(self, a: Tensor, c: float) -> Tensor:
        c = float(c)
        return self._emit("scale", a.data * c, (a,), lambda g: (g * c,))

    def add_const(self, a: Tensor, c) -> Tensor:
        """``a + c`` for a constant scalar or broadcastable array ``c``."""
        c = np.asarray(c, dtype=a.dtype)
        return self._emit("add_const", a.data + c, (a,), lambda g: (g,))

    def mul_const(self, a: Tensor, c) -> Tensor:
        c = np.asarray(c, dtype=a.dtype)
        return self._emit("mul_const", a.data * c, (a,), lambda g: (g * c,))

    def add_bias(self, x: Tensor, b: Tensor) -> Tensor:
        _row_vector("add_bias", x, b)
        return self._emit(
            "add_bias", x.data + b.data, (x, b), lambda g: (g, g.sum(axis=0, keepdims=True))
        )

    def hadamard(self, a: Tensor, b: Tensor) -> Tensor:
        _same_shape("hadamard", a, b)
        av, bv = a.data, b.data
        return self._emit("hadamard", av * bv, (a, b), lambda g: (g * bv, g * av))

    def square(self, a: Tensor) -> Tensor:
        av = a.data
        return self._emit("square", av * av, (a,), lambda g: (2.0 * g * av,))

    def prelu(self, x: Tensor, slope: Tensor) -> Tensor:
        """Per-column leaky slope; ``slope`` has shape (1, cols)."""
        _row_vector("prelu", x, slope)
        xv, s = x.data, slope.data
        # arithmetic instead of np.where: several times faster on large arrays
        neg_part = np.minimum(xv, 0)
        out = np.maximum(xv, 0)
        out += s * neg_part

        def backward(g):
            gx = gs = None
            if x.requires_grad:
                pos = (xv > 0).astype(g.dtype)
                gx = g * (s + (1 - s) * pos)
            if slope.requires_grad:
                gs = (g * neg_part).sum(axis=0, keepdims=True)
            return gx, gs

        return self._emit("prelu", out, (x, slope), backward)

    def relu(self, x: Tensor) -> Tensor:
        xv = x.data
        return self._emit("relu", np.maximum(xv, 0), (x,),
                          lambda g: (g * (xv > 0).astype(g.dtype),))

    def sigmoid(self, x: Tensor) -> Tensor:
        y = stable_sigmoid(x.data)
        return self._emit("sigmoid", y, (x,), lambda g: (g * y * (1.0 - y),))

    # -- reductions -------------------------------------------------------

    def sum(self, a: Tensor) -> Tensor:
        shape, dt = a.shape, a.dtype
        return self._emit(
            "sum", np.array([[a.data.sum()]], dtype=dt), (a,),
            lambda g: (np.full(shape, g[0, 0], dtype=dt),),
        )

    def mean(self, a: Tensor) -> Tensor:
        n = a.data.size
        if n == 0:
            raise ValueError("mean of an empty tensor")
        return self.scale(self.sum(a), 1.0 / n)

    def row_dot(self, a: Tensor, b: Tensor) -> Tensor:
        _same_shape("row_dot", a, b)
        av, bv = a.data, b.data
        out = np.einsum("ij,ij->i", av, bv)[:, None]
        return self._emit("row_dot", out, (a, b), lambda g: (g * bv, g * av))

    def row_cosine(self, a: Tensor, b: Tensor) -> Tensor:
        """Cosine similarity per row, shape (rows, 1).

        Rows where ``|a|*|b| <= 1e-8`` give 0 with zero gradient.
        """
        _same_shape("row_cosine", a, b)
        av, bv = a.data, b.data
        na = np.sqrt(np.einsum("ij,ij->i", av, av))[:, None]
        nb = np.sqrt(np.einsum("ij,ij->i", bv, bv))[:, None]
        den = na * nb
        ok = den > COSINE_EPS
        safe = np.where(ok, den, 1.0)
        dot = np.einsum("ij,ij->i", av, bv)[:, None]
        cos = np.where(ok, dot / safe, 0.0).astype(av.dtype)

        def backward(g):
            w = np.where(ok, g, 0.0)
            ga = gb = None
            if a.requires_grad:
                ga = w * (bv / safe - cos * av / np.where(ok, na * na, 1.0))
            if b.requires_grad:
                gb = w * (av / safe - cos * bv / np.where(ok, nb * nb, 1.0))
            return ga, gb

        return self._emit("row_cosine", cos, (a, b), backward)

    def row_normalize(self, a: Tensor) -> Tensor:
        """Each row divided by its L2 norm; near-zero rows map to zero."""
        av = a.data
        na = np.sqrt(np.einsum("ij,ij->i", av, av))[:, None]
        ok = na > COSINE_EPS
        safe = np.where(ok, na, 1.0)
        y = np.where(ok, av / safe, 0.0).astype(av.dtype)

        def backward(g):
            proj = np.einsum("ij,ij->i", g, y)[:, None]
            return (np.where(ok, (g - y * proj) / safe, 0.0),)

        return self._emit("row_normalize", y, (a,), backward)

    def gather_rows(self, a: Tensor, idx) -> Tensor:
        idx = np.asarray(idx, dtype=np.int64)
        if idx.size and (idx.min() < 0 or idx.max() >= a.shape[0]):
            raise IndexError("gather_rows: row index out of range")
        shape = a.shape

        def backward(g):
            # scatter-add as a sparse product: faster than np.add.at, fixed order
            sel = sp.csr_matrix((np.ones(idx.size, dtype=g.dtype), (idx, np.arange(idx.size))),
                                shape=(shape[0], idx.size))
            return (np.asarray(sel @ g),)

        return self._emit("gather_rows", a.data[idx], (a,), backward)

    def concat_cols(self, a: Tensor, b: Tensor) -> Tensor:
        if a.shape[0] != b.shape[0]:
            raise ValueError("concat_cols: row count mismatch")
        k = a.shape[1]
        return self._emit(
            "concat_cols", np.concatenate([a.data, b.data], axis=1), (a, b),
            lambda g: (g[:, :k], g[:, k:]),
        )

    def diag(self, a: Tensor) -> Tensor:
        """Diagonal of a square matrix as a column (n, 1)."""
        n = a.shape[0]
        if a.shape != (n, n):
            raise ValueError("diag: square matrix required")
        idx = np.arange(n)

        def backward(g):
            out = np.zeros((n, n), dtype=g.dtype)
            out[idx, idx] = g[:, 0]
            return (out,)

        return self._emit("diag", a.data[idx, idx][:, None].copy(), (a,), backward)

    def logsumexp_rows(self, x: Tensor, mask=None) -> Tensor:
        """Row-wise log-sum-exp over entries where ``mask`` is True."""
        xv = x.data
        if mask is None:
            mask = np.ones(xv.shape, dtype=bool)
        masked = np.where(mask, xv, -np.inf)
        m = masked.max(axis=1, keepdims=True)
        m = np.where(np.isfinite(m), m, 0.0)
        e = np.where(mask, np.exp(masked - m), 0.0)
        s = e.sum(axis=1, keepdims=True)
        if np.any(s == 0):
            raise ValueError("logsumexp_rows: a row has no unmasked entries")
        out = (np.log(s) + m).astype(xv.dtype)
        p = e / s

        return self._emit("logsumexp_rows", out, (x,), lambda g: (g * p,))

    def standardize_columns(self, a: Tensor, eps: float = 1e-8) -> Tensor:
        """``(a - mean) / (std + eps)`` per column, population std."""
        av = a.data
        n = av.shape[0]
        xc = av - av.mean(axis=0, keepdims=True)
        sigma = np.sqrt((xc * xc).mean(axis=0, keepdims=True))
        s = sigma + eps
        y = xc / s
        coef = np.where(sigma > 0, 1.0 / (s * s * n * np.where(sigma > 0, sigma, 1.0)), 0.0)

        def backward(g):
            gx = (g - g.mean(axis=0, keepdims=True)) / s
            gx -= xc * (g * xc).sum(axis=0, keepdims=True) * coef
            return (gx.astype(av.dtype, copy=False),)

        return self._emit("standardize_columns", y.astype(av.dtype, copy=False), (a,), backward)

    def bce_with_logits(self, logits: Tensor, labels) -> Tensor:
        """Mean binary cross-entropy of ``sigmoid(logits)`` against 0/1 labels."""
        y = np.asarray(labels, dtype=logits.dtype).reshape(logits.shape)
        z = logits.data
        n = z.size
        loss = (np.maximum(z, 0) - z * y + np.log1p(np.exp(-np.abs(z)))).sum() / n
        p = stable_sigmoid(z)
        return self._emit(
            "bce_with_logits", np.array([[loss]], dtype=z.dtype), (logits,),
            lambda g: (g[0, 0] * (p - y) / n,),
        )


def stable_sigmoid(z: np.ndarray) -> np.ndarray:
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


# ---------------------------------------------------------------------------
# parameters


class ParamSet:
    """Named tensors. Names are unique; shapes are fixed once added."""

    def __init__(self, tensors=None):
        self._t: dict[str, Tensor] = {}
        for name, t in (tensors or {}).items():
            self.add(name, t)

    def add(self, name: str, t: Tensor) -> Tensor:
        if name in self._t:
            raise KeyError(f"duplicate parameter name {name!r}")
        self._t[name] = t if isinstance(t, Tensor) else Tensor(t, requires_grad=True)
        return self._t[name]

    @classmethod
    def merged(cls, **groups: "ParamSet") -> "ParamSet":
        """A view sharing the tensors of several sets, names prefixed."""
        out = cls()
        for prefix, ps in groups.items():
            for name, t in ps.items():
                out.add(f"{prefix}.{name}", t)
        return out

    def __getitem__(self, name: str) -> Tensor:
        return self._t[name]

    def __contains__(self, name: str) -> bool:
        return name in self._t

    def __iter__(self):
        return iter(self._t)

    def __len__(self) -> int:
        return len(self._t)

    def items(self):
        return self._t.items()

    def names(self) -> list[str]:
        return list(self._t)

    def zero_grad(self) -> None:
        for t in self._t.values():
            t.grad = None

    def copy(self, requires_grad: bool | None = None) -> "ParamSet":
        out = ParamSet()
        for name, t in self._t.items():
            rg = t.requires_grad if requires_grad is None else requires_grad
            out.add(name, Tensor(t.data.copy(), requires_grad=rg))
        return out

    def state(self) -> dict[str, np.ndarray]:
        return {name: t.data.copy() for name, t in self._t.items()}

    def load_state(self, state) -> None:
        if set(state) != set(self._t):
            raise KeyError("parameter names differ from stored state")
        for name, t in self._t.items():
            a = np.asarray(state[name])
            if a.shape != t.shape:
                raise ValueError(f"{name}: shape {a.shape} != {t.shape}")
            t.data = a.astype(t.dtype, copy=True)

    def num_values(self) -> int:
        return sum(t.data.size for t in self._t.values())


def glorot_init(shape, seed, dtype=np.float32) -> Tensor:
    """Uniform in +-sqrt(6 / (fan_in + fan_out))."""
    rows, cols = shape
    if rows <= 0 or cols <= 0:
        raise ValueError("dimensions must be positive")
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    bound = math.sqrt(6.0 / (rows + cols))
    return Tensor(rng.uniform(-bound, bound, size=(rows, cols)).astype(dtype), requires_grad=True)


class Adam:
    """Adam with decoupled weight decay, updating tensors in place."""

    def __init__(self, params: ParamSet, lr: float, betas=(0.9, 0.999), eps: float = 1e-8,
                 weight_decay: float = 0.0):
        if lr <= 0:
            raise ValueError("learning rate must be positive")
        self.params = params
        self.lr = float(lr)
        self.beta1, self.beta2 = map(float, betas)
        self.eps = float(eps)
        self.weight_decay = float(weight_decay)
        self.t = 0
        self._m: dict[str, np.ndarray] = {}
        self._v: dict[str, np.ndarray] = {}

    def step(self) -> None:
        self.t += 1
        c1 = 1.0 - self.beta1 ** self.t
        c2 = 1.0 - self.beta2 ** self.t
        for name, p in self.params.items():
            if name not in self._m:
                self._m[name] = np.zeros_like(p.data)
                self._v[name] = np.zeros_like(p.data)
            g = p.grad if p.grad is not None else np.zeros_like(p.data)
            m, v = self._m[name], self._v[name]
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            if self.weight_decay:
                p.data -= self.lr * self.weight_decay * p.data
            p.data -= (self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)).astype(p.dtype)


def ema_update(target: ParamSet, online: ParamSet, decay: float) -> None:
    """``target <- decay * target + (1 - decay) * online`` element-wise."""
    if not 0.0 <= decay <= 1.0:
        raise ValueError("decay must lie in [0, 1]")
    if target.names() != online.names():
        raise KeyError("target and online parameter names differ")
    for name, t in target.items():
        o = online[name]
        if o.shape != t.shape:
            raise ValueError(f"{name}: shape mismatch")
        if decay == 1.0:
            continue
        t.data = (decay * t.data + (1.0 - decay) * o.data).astype(t.dtype)


def cosine_decay_schedule(base: float, step: int, total: int) -> float:
    """EMA decay annealed from ``base`` to 1 over ``total`` steps."""
    if total <= 0:
        return base
    return 1.0 - (1.0 - base) * (math.cos(math.pi * min(step, total) / total) + 1.0) / 2.0


# ---------------------------------------------------------------------------
# checkpoints

_MAGIC = b"NCLP"
_VERSION = 1


def save_checkpoint(path, params) -> None:
    """Write tensors as little-endian float32 with name and shape headers."""
    items = params.items() if hasattr(params, "items") else params
    chunks = [_MAGIC, struct.pack("<I", _VERSION)]
    for name, t in items:
        a = t.data if isinstance(t, Tensor) else np.asarray(t)
        if a.ndim != 2:
            raise ValueError(f"{name}: checkpoint tensors are 2-d")
        raw = name.encode("utf-8")
        chunks.append(struct.pack("<I", len(raw)))
        chunks.append(raw)
        chunks.append(struct.pack("<II", *a.shape))
        chunks.append(np.ascontiguousarray(a, dtype="<f4").tobytes())
    Path(path).write_bytes(b"".join(chunks))


def load_checkpoint(path) -> dict[str, np.ndarray]:
    buf = Path(path).read_bytes()
    if buf[:4] != _MAGIC:
        raise ValueError("not a checkpoint file (bad magic)")
    (version,) = struct.unpack_from("<I", buf, 4)
    if version != _VERSION:
        raise ValueError(f"unsupported checkpoint version {version}")
    pos, out = 8, {}
    while pos < len(buf):
        (k,) = struct.unpack_from("<I", buf, pos)
        pos += 4
        name = buf[pos : pos + k].decode("utf-8")
        pos += k
        rows, cols = struct.unpack_from("<II", buf, pos)
        pos += 8
        nbytes = 4 * rows * cols
        if pos + nbytes > len(buf):
            raise ValueError("truncated checkpoint")
        out[name] = np.frombuffer(buf, dtype="<f4", count=rows * cols, offset=pos).reshape(rows, cols).copy()
        pos += nbytes
    return out


# ---------------------------------------------------------------------------
# finite differences


def numerical_gradient(loss_fn, params: ParamSet, step: float = 1e-4) -> dict[str, np.ndarray]:
    """Central differences of ``loss_fn() -> float`` w.r.t. every entry."""
    out = {}
    for name, t in params.items():
        g = np.zeros_like(t.data, dtype=np.float64)
        flat = t.data.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + step
            hi = loss_fn()
            flat[i] = orig - step
            lo = loss_fn()
            flat[i] = orig
            g.reshape(-1)[i] = (hi - lo) / (2.0 * step)
        out[name] = g
    return out


def gradient_relative_error(analytic: dict, numeric: dict) -> float:
    """max |a - n| / max(max |a|, max |n|, 1e-8) across all entries.

    The floor keeps the ratio meaningful when the true gradient vanishes
    (e.g. cosine of 1-d vectors), where it acts as an absolute bound.
    """
    diff = scale = 0.0
    for name, n in numeric.items():
        a = analytic.get(name)
        a = np.zeros_like(n) if a is None else np.asarray(a, dtype=np.float64)
        diff = max(diff, float(np.max(np.abs(a - n), initial=0.0)))
        scale = max(scale, float(np.max(np.abs(a), initial=0.0)), float(np.max(np.abs(n), initial=0.0)))
    return diff / max(scale, 1e-8)
