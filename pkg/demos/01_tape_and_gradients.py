"""
The tape, a two-layer GCN and its gradients
===========================================

Builds a tiny graph, runs the encoder forward, backpropagates a BGRL-style
cosine loss and compares the result with central differences.
"""

import numpy as np

from nclp.autodiff import ParamSet, Tape, Tensor, gradient_relative_error, numerical_gradient
from nclp.graph import FeatureMatrix, Graph, normalize_adjacency
from nclp.losses import bgrl_loss
from nclp.models import GcnEncoder, Mlp

# a 5-cycle with one chord
g = Graph(5, [(0, 1), (1, 2), (2, 3), (3, 4), (4, 0), (0, 2)])
adj = normalize_adjacency(g)
print("normalized adjacency (self loops included):")
print(np.round(adj.toarray(), 3))

rng = np.random.default_rng(0)
x = FeatureMatrix(rng.normal(size=(5, 3)))

# float64 so finite differences are meaningful
enc = GcnEncoder.init(3, 8, 4, seed=1, dtype=np.float64)
pred = Mlp.init(4, 8, 4, seed=2, dtype=np.float64)
target = enc.frozen_copy()
h_target = Tensor(target.embed(adj, x))

params = ParamSet.merged(encoder=enc.params, predictor=pred.params)


def loss_fn(tape):
    z = pred.forward(tape, enc.forward(tape, adj, x))
    return bgrl_loss(tape, z, h_target)


tape = Tape()
loss = loss_fn(tape)
print("\nops recorded:", [op for op, _ in tape.recorded()])
tape.backward(loss)
print("loss", loss.item())

analytic = {k: t.grad for k, t in params.items()}
numeric = numerical_gradient(lambda: loss_fn(Tape(enabled=False)).item(), params, 1e-4)
print("relative error vs central differences: %.2e" % gradient_relative_error(analytic, numeric))

# the target is a frozen copy: nothing flows into it
print("target has grads:", any(t.grad is not None for _, t in target.params.items()))
