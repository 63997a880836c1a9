"""Two-layer GCN encoder and small PReLU MLPs (predictor, projector, decoder)."""

from __future__ import annotations

import numpy as np

from .autodiff import ParamSet, Tape, Tensor, glorot_init
from .graph import FeatureMatrix, NormalizedAdjacency

PRELU_INIT = 0.25


def _layer(params: ParamSet, prefix: str, fan_in: int, fan_out: int, rng, dtype, slope=True):
    params.add(f"{prefix}.weight", glorot_init((fan_in, fan_out), rng, dtype))
    params.add(f"{prefix}.bias", Tensor(np.zeros((1, fan_out), dtype=dtype), requires_grad=True))
    if slope:
        params.add(f"{prefix}.slope", Tensor(np.full((1, fan_out), PRELU_INIT, dtype=dtype), requires_grad=True))


class GcnEncoder:
    """``PReLU(A_hat @ PReLU(A_hat @ X @ W1 + b1) @ W2 + b2)``."""

    def __init__(self, params: ParamSet):
        self.params = params

    @classmethod
    def init(cls, in_dim: int, hidden_dim: int = 256, out_dim: int = 256, seed=0,
             dtype=np.float32) -> "GcnEncoder":
        rng = np.random.default_rng(seed)
        params = ParamSet()
        _layer(params, "conv1", in_dim, hidden_dim, rng, dtype)
        _layer(params, "conv2", hidden_dim, out_dim, rng, dtype)
        return cls(params)

    @property
    def dtype(self):
        return self.params["conv1.weight"].dtype

    @property
    def in_dim(self) -> int:
        return self.params["conv1.weight"].shape[0]

    @property
    def out_dim(self) -> int:
        return self.params["conv2.weight"].shape[1]

    def frozen_copy(self) -> "GcnEncoder":
        return GcnEncoder(self.params.copy(requires_grad=False))

    def forward(self, tape: Tape, adj: NormalizedAdjacency, x) -> Tensor:
        p = self.params
        dt = self.dtype
        a = adj.astype(dt)
        if isinstance(x, FeatureMatrix):
            if x.cols != self.in_dim:
                raise ValueError(f"encoder expects {self.in_dim} features, got {x.cols}")
            h = tape.spmm(x.operand(dt), p["conv1.weight"])
        else:
            h = tape.matmul(x, p["conv1.weight"])
        h = tape.prelu(tape.add_bias(tape.spmm(a, h), p["conv1.bias"]), p["conv1.slope"])
        h = tape.matmul(h, p["conv2.weight"])
        return tape.prelu(tape.add_bias(tape.spmm(a, h), p["conv2.bias"]), p["conv2.slope"])

    def embed(self, adj: NormalizedAdjacency, x) -> np.ndarray:
        return self.forward(Tape(enabled=False), adj, x).data


class Mlp:
    """``Linear -> PReLU -> Linear``."""

    def __init__(self, params: ParamSet):
        self.params = params

    @classmethod
    def init(cls, in_dim: int, hidden_dim: int, out_dim: int, seed=0, dtype=np.float32) -> "Mlp":
        rng = np.random.default_rng(seed)
        params = ParamSet()
        _layer(params, "fc1", in_dim, hidden_dim, rng, dtype)
        _layer(params, "fc2", hidden_dim, out_dim, rng, dtype, slope=False)
        return cls(params)

    def forward(self, tape: Tape, x: Tensor) -> Tensor:
        p = self.params
        h = tape.prelu(tape.add_bias(tape.matmul(x, p["fc1.weight"]), p["fc1.bias"]), p["fc1.slope"])
        return tape.add_bias(tape.matmul(h, p["fc2.weight"]), p["fc2.bias"])
