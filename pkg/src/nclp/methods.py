"""Training steps for every encoder method, plus the epoch loop.

Each ``*_step`` function performs one full-batch update and returns the loss.
The :class:`Method` subclasses hold parameters and optimizer state and call
the step functions; :func:`train` drives them over epochs.
"""

from __future__ import annotations

import dataclasses
import time
from dataclasses import dataclass, field

import numpy as np

from .autodiff import Adam, ParamSet, Tape, Tensor, cosine_decay_schedule, ema_update
from .graph import FeatureMatrix, Graph, normalize_adjacency
from .linkpred import DecoderMlp, hits_at_k
from .losses import bgrl_loss, ccassg_loss, gbt_loss, grace_loss, margin_loss, tbgrl_loss
from .models import GcnEncoder, Mlp
from .splits import SplitBundle
from .transforms import AugmentConfig, CorruptionKind, augment, corrupt, sample_node_pairs

SSL_METHODS = ("bgrl", "tbgrl", "gbt", "ccassg", "grace")
SUPERVISED_METHODS = ("mlgcn", "e2e")
METHODS = SSL_METHODS + SUPERVISED_METHODS

SSL_EPOCHS = 2000
PAPER_EPOCHS = 10000
SUPERVISED_EPOCHS = 1000


@dataclass
class TrainConfig:
    """Hyperparameters for one training run.

    Dotted config keys map to fields by replacing dots with underscores,
    e.g. ``aug1.p_edge`` -> ``aug1_p_edge``, ``corruption.kind`` -> ``corruption_kind``.
    """

    method: str = "bgrl"
    epochs: int | None = None  # None: SSL_EPOCHS or SUPERVISED_EPOCHS
    lr: float | None = None  # None: 5e-4 for SSL, 1e-3 supervised
    weight_decay: float = 1e-5
    hidden_dim: int = 256
    embed_dim: int = 256
    pred_hidden: int = 512
    proj_dim: int = 256
    lam: float = 0.5
    margin: float = 0.5
    num_negatives: int = 1
    tau: float = 0.5
    w_off: float | None = None  # None: 1/embed_dim
    w_dec: float = 1e-3
    decay: float = 0.99
    decay_anneal: bool = False
    aug1_p_edge: float = 0.25
    aug1_p_feat: float = 0.25
    aug2_p_edge: float = 0.25
    aug2_p_feat: float = 0.25
    corruption_kind: str = CorruptionKind.SHUFFLE_FEAT_RANDOM_EDGE.value
    corruption_sparsify_p: float = 0.95
    patience: int = 50
    dtype: str = "float32"
    decoder_lr: float = 1e-3
    decoder_epochs: int = 1000
    decoder_patience: int = 50
    decoder_hidden: int = 256

    def __post_init__(self):
        if self.method not in METHODS:
            raise ValueError(f"unknown method {self.method!r}; choose from {', '.join(METHODS)}")
        if not 0.0 <= self.lam <= 1.0:
            raise ValueError("lam must lie in [0, 1]")
        if self.margin <= 0:
            raise ValueError("margin must be positive")
        if self.tau <= 0:
            raise ValueError("tau must be positive")
        if self.epochs is not None and self.epochs < 0:
            raise ValueError("epochs must be non-negative")
        if self.num_negatives < 1:
            raise ValueError("num_negatives must be at least 1")
        if not 0.0 <= self.decay <= 1.0:
            raise ValueError("decay must lie in [0, 1]")
        if self.dtype not in ("float32", "float64"):
            raise ValueError("dtype must be float32 or float64")
        CorruptionKind.parse(self.corruption_kind)

    @property
    def supervised(self) -> bool:
        return self.method in SUPERVISED_METHODS

    @property
    def np_dtype(self):
        return np.dtype(self.dtype)

    def resolved_epochs(self) -> int:
        if self.epochs is not None:
            return self.epochs
        return SUPERVISED_EPOCHS if self.supervised else SSL_EPOCHS

    def resolved_lr(self) -> float:
        if self.lr is not None:
            return self.lr
        return 1e-3 if self.supervised else 5e-4

    def augment_configs(self, rng: np.random.Generator) -> tuple[AugmentConfig, AugmentConfig]:
        s1, s2 = (int(v) for v in rng.integers(0, 2**62, size=2))
        return (AugmentConfig(self.aug1_p_edge, self.aug1_p_feat, s1),
                AugmentConfig(self.aug2_p_edge, self.aug2_p_feat, s2))

    @classmethod
    def field_names(cls) -> list[str]:
        return [f.name for f in dataclasses.fields(cls)]

    @classmethod
    def from_mapping(cls, mapping: dict, **overrides) -> "TrainConfig":
        flat = {k.replace(".", "_"): v for k, v in flatten_keys(mapping).items()}
        flat.update({k: v for k, v in overrides.items() if v is not None})
        unknown = sorted(set(flat) - set(cls.field_names()))
        if unknown:
            raise KeyError(f"unknown config keys: {', '.join(unknown)}")
        return cls(**flat)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)


def flatten_keys(mapping: dict, prefix: str = "") -> dict:
    """``{"aug1": {"p_edge": 0.1}}`` -> ``{"aug1.p_edge": 0.1}``."""
    out = {}
    for k, v in mapping.items():
        key = f"{prefix}{k}"
        if isinstance(v, dict):
            out.update(flatten_keys(v, key + "."))
        else:
            out[key] = v
    return out


class TrainData:
    """Message graph and features seen during training, with cached views."""

    def __init__(self, graph: Graph, features: FeatureMatrix):
        if features.rows != graph.num_nodes:
            raise ValueError(f"{features.rows} feature rows for {graph.num_nodes} nodes")
        self.graph = graph
        self.features = features
        self.adj = normalize_adjacency(graph)
        self.edge_keys = graph.edge_keys()


# ---------------------------------------------------------------------------
# step functions


def _views(g: Graph, x: FeatureMatrix, cfg: TrainConfig, rng):
    a1, a2 = cfg.augment_configs(rng)
    g1, x1 = augment(g, x, a1)
    g2, x2 = augment(g, x, a2)
    return (normalize_adjacency(g1), x1), (normalize_adjacency(g2), x2)


def _update(tape: Tape, loss: Tensor, opt: Adam) -> float:
    opt.params.zero_grad()
    tape.backward(loss)
    opt.step()
    return loss.item()


def _ema(target: GcnEncoder, online: GcnEncoder, cfg: TrainConfig, epoch: int, total: int) -> None:
    decay = cosine_decay_schedule(cfg.decay, epoch, total) if cfg.decay_anneal else cfg.decay
    ema_update(target.params, online.params, decay)


# Objectives compute a loss from fixed views (``(adj, x)`` pairs) and are
# what gradient checks exercise; steps add sampling, the update and EMA.


def bgrl_objective(tape: Tape, online: GcnEncoder, target: GcnEncoder, pred: Mlp, view1, view2) -> Tensor:
    h2 = Tensor(target.embed(*view2))
    z = pred.forward(tape, online.forward(tape, *view1))
    return bgrl_loss(tape, z, h2)


def tbgrl_objective(tape: Tape, online: GcnEncoder, target: GcnEncoder, pred: Mlp, view1, view2,
                    corrupted, lam: float) -> Tensor:
    h2 = Tensor(target.embed(*view2))
    hc = Tensor(target.embed(*corrupted))
    z = pred.forward(tape, online.forward(tape, *view1))
    return tbgrl_loss(tape, z, h2, hc, lam)


def mlgcn_objective(tape: Tape, enc: GcnEncoder, view, triples, margin: float) -> Tensor:
    a, p, w = triples
    return margin_loss(tape, enc.forward(tape, *view), a, p, w, margin)


def grace_objective(tape: Tape, enc: GcnEncoder, proj: Mlp, view1, view2, tau: float) -> Tensor:
    z1 = proj.forward(tape, enc.forward(tape, *view1))
    z2 = proj.forward(tape, enc.forward(tape, *view2))
    return grace_loss(tape, z1, z2, tau)


def gbt_objective(tape: Tape, enc: GcnEncoder, view1, view2, w_off=None) -> Tensor:
    return gbt_loss(tape, enc.forward(tape, *view1), enc.forward(tape, *view2), w_off)


def ccassg_objective(tape: Tape, enc: GcnEncoder, view1, view2, w_dec: float = 1e-3) -> Tensor:
    return ccassg_loss(tape, enc.forward(tape, *view1), enc.forward(tape, *view2), w_dec)


def e2e_objective(tape: Tape, enc: GcnEncoder, dec: DecoderMlp, view, pairs, labels) -> Tensor:
    return tape.bce_with_logits(dec.logits(tape, enc.forward(tape, *view), pairs), labels)


def bgrl_step(online: GcnEncoder, target: GcnEncoder, pred: Mlp, g: Graph, x: FeatureMatrix,
              cfg: TrainConfig, opt: Adam, rng, epoch: int = 0, total: int = 1) -> float:
    v1, v2 = _views(g, x, cfg, rng)
    tape = Tape()
    loss = _update(tape, bgrl_objective(tape, online, target, pred, v1, v2), opt)
    _ema(target, online, cfg, epoch, total)
    return loss


def tbgrl_step(online: GcnEncoder, target: GcnEncoder, pred: Mlp, g: Graph, x: FeatureMatrix,
               cfg: TrainConfig, opt: Adam, rng, epoch: int = 0, total: int = 1) -> float:
    v1, v2 = _views(g, x, cfg, rng)
    gc, xc = corrupt(g, x, cfg.corruption_kind, int(rng.integers(0, 2**62)), cfg.corruption_sparsify_p)
    tape = Tape()
    obj = tbgrl_objective(tape, online, target, pred, v1, v2, (normalize_adjacency(gc), xc), cfg.lam)
    loss = _update(tape, obj, opt)
    _ema(target, online, cfg, epoch, total)
    return loss


def sample_triples(g: Graph, rng, num_negatives: int = 1, edge_keys=None):
    """(anchor, positive, negative) index arrays for the margin loss.

    Every node with a neighbor is an anchor; it gets one uniform neighbor and
    ``num_negatives`` uniform non-neighbors (resampled until valid).
    """
    n = g.num_nodes
    csr = g.csr
    deg = np.diff(csr.indptr)
    anchors = np.flatnonzero(deg > 0)
    if len(anchors) == 0:
        raise ValueError("margin loss needs at least one edge")
    off = np.minimum((rng.random(len(anchors)) * deg[anchors]).astype(np.int64), deg[anchors] - 1)
    positives = csr.indices[csr.indptr[anchors] + off].astype(np.int64)
    keys = g.edge_keys() if edge_keys is None else edge_keys
    a = np.repeat(anchors, num_negatives)
    w = rng.integers(0, n, size=len(a))
    bad = _is_edge_or_self(a, w, n, keys)
    # an anchor adjacent to every other node has no valid negative; keep its draw
    bad &= deg[a] < n - 1
    while bad.any():
        w[bad] = rng.integers(0, n, size=int(bad.sum()))
        bad &= _is_edge_or_self(a, w, n, keys)
    return a, np.repeat(positives, num_negatives), w


def _is_edge_or_self(a, w, n, keys) -> np.ndarray:
    k = np.minimum(a, w) * n + np.maximum(a, w)
    if len(keys) == 0:
        return a == w
    pos = np.searchsorted(keys, k).clip(max=len(keys) - 1)
    return (a == w) | (keys[pos] == k)


def mlgcn_step(enc: GcnEncoder, data: TrainData, cfg: TrainConfig, opt: Adam, rng) -> float:
    triples = sample_triples(data.graph, rng, cfg.num_negatives, data.edge_keys)
    tape = Tape()
    return _update(tape, mlgcn_objective(tape, enc, (data.adj, data.features), triples, cfg.margin), opt)


def grace_step(enc: GcnEncoder, proj: Mlp, g: Graph, x: FeatureMatrix, cfg: TrainConfig,
               opt: Adam, rng) -> float:
    v1, v2 = _views(g, x, cfg, rng)
    tape = Tape()
    return _update(tape, grace_objective(tape, enc, proj, v1, v2, cfg.tau), opt)


def gbt_step(enc: GcnEncoder, g: Graph, x: FeatureMatrix, cfg: TrainConfig, opt: Adam, rng) -> float:
    v1, v2 = _views(g, x, cfg, rng)
    tape = Tape()
    return _update(tape, gbt_objective(tape, enc, v1, v2, cfg.w_off), opt)


def ccassg_step(enc: GcnEncoder, g: Graph, x: FeatureMatrix, cfg: TrainConfig, opt: Adam, rng) -> float:
    v1, v2 = _views(g, x, cfg, rng)
    tape = Tape()
    return _update(tape, ccassg_objective(tape, enc, v1, v2, cfg.w_dec), opt)


def e2e_gcn_step(enc: GcnEncoder, dec: DecoderMlp, data: TrainData, cfg: TrainConfig,
                 opt: Adam, rng) -> float:
    g = data.graph
    if g.num_edges == 0:
        raise ValueError("end-to-end training needs positive edges")
    neg = sample_node_pairs(g.num_nodes, g.num_edges, rng, data.edge_keys)
    pairs = np.concatenate([g.edges, neg])
    labels = np.concatenate([np.ones(g.num_edges), np.zeros(len(neg))])
    tape = Tape()
    return _update(tape, e2e_objective(tape, enc, dec, (data.adj, data.features), pairs, labels), opt)


# ---------------------------------------------------------------------------
# method objects


class Method:
    """Parameters and optimizer state of one method; ``step`` runs one epoch."""

    name = ""
    supervised = False

    def __init__(self, in_dim: int, cfg: TrainConfig, seed: int = 0):
        self.cfg = cfg
        seeds = np.random.SeedSequence(seed).generate_state(4)
        self._seeds = [int(s) for s in seeds]
        self.encoder = GcnEncoder.init(in_dim, cfg.hidden_dim, cfg.embed_dim, self._seeds[0], cfg.np_dtype)
        self._build()
        self.optimizer = Adam(self.trainable(), cfg.resolved_lr(), weight_decay=cfg.weight_decay)

    def _build(self) -> None:
        pass

    def trainable(self) -> ParamSet:
        return self.encoder.params

    def state_params(self) -> ParamSet:
        """Everything that goes into a checkpoint."""
        return ParamSet.merged(encoder=self.encoder.params)

    def load_state(self, state: dict) -> None:
        self.state_params().load_state(state)

    def step(self, data: TrainData, rng, epoch: int, total: int) -> float:
        raise NotImplementedError

    def embed(self, graph: Graph, x: FeatureMatrix) -> np.ndarray:
        return self.encoder.embed(normalize_adjacency(graph), x)

    def score_pairs(self, h: np.ndarray, pairs) -> np.ndarray:
        """Validation score used for early stopping (supervised methods)."""
        pairs = np.asarray(pairs, dtype=np.int64).reshape(-1, 2)
        return np.einsum("ij,ij->i", h[pairs[:, 0]], h[pairs[:, 1]])


class _Bootstrapped(Method):
    def _build(self) -> None:
        d = self.cfg.embed_dim
        self.predictor = Mlp.init(d, self.cfg.pred_hidden, d, self._seeds[1], self.cfg.np_dtype)
        self.target = self.encoder.frozen_copy()

    def trainable(self) -> ParamSet:
        return ParamSet.merged(encoder=self.encoder.params, predictor=self.predictor.params)

    def state_params(self) -> ParamSet:
        return ParamSet.merged(encoder=self.encoder.params, predictor=self.predictor.params,
                               target=self.target.params)


class Bgrl(_Bootstrapped):
    name = "bgrl"

    def step(self, data, rng, epoch, total):
        return bgrl_step(self.encoder, self.target, self.predictor, data.graph, data.features,
                         self.cfg, self.optimizer, rng, epoch, total)


class TBgrl(_Bootstrapped):
    name = "tbgrl"

    def step(self, data, rng, epoch, total):
        return tbgrl_step(self.encoder, self.target, self.predictor, data.graph, data.features,
                          self.cfg, self.optimizer, rng, epoch, total)


class Gbt(Method):
    name = "gbt"

    def step(self, data, rng, epoch, total):
        return gbt_step(self.encoder, data.graph, data.features, self.cfg, self.optimizer, rng)


class CcaSsg(Method):
    name = "ccassg"

    def step(self, data, rng, epoch, total):
        return ccassg_step(self.encoder, data.graph, data.features, self.cfg, self.optimizer, rng)


class Grace(Method):
    name = "grace"

    def _build(self) -> None:
        d = self.cfg.embed_dim
        self.projector = Mlp.init(d, self.cfg.proj_dim, d, self._seeds[1], self.cfg.np_dtype)

    def trainable(self):
        return ParamSet.merged(encoder=self.encoder.params, projector=self.projector.params)

    def state_params(self):
        return self.trainable()

    def step(self, data, rng, epoch, total):
        return grace_step(self.encoder, self.projector, data.graph, data.features, self.cfg,
                          self.optimizer, rng)


class MlGcn(Method):
    name = "mlgcn"
    supervised = True

    def step(self, data, rng, epoch, total):
        return mlgcn_step(self.encoder, data, self.cfg, self.optimizer, rng)


class E2eGcn(Method):
    name = "e2e"
    supervised = True

    def _build(self) -> None:
        self.decoder = DecoderMlp.init(self.cfg.embed_dim, self.cfg.decoder_hidden, self._seeds[1],
                                       self.cfg.np_dtype)

    def trainable(self):
        return ParamSet.merged(encoder=self.encoder.params, decoder=self.decoder.params)

    def state_params(self):
        return self.trainable()

    def step(self, data, rng, epoch, total):
        return e2e_gcn_step(self.encoder, self.decoder, data, self.cfg, self.optimizer, rng)

    def score_pairs(self, h, pairs):
        return self.decoder.decode(h, pairs)


_REGISTRY = {cls.name: cls for cls in (Bgrl, TBgrl, Gbt, CcaSsg, Grace, MlGcn, E2eGcn)}


def build_method(in_dim: int, cfg: TrainConfig, seed: int = 0) -> Method:
    return _REGISTRY[cfg.method](in_dim, cfg, seed)


# ---------------------------------------------------------------------------
# epoch loop


@dataclass
class TrainResult:
    method: Method
    losses: list[float] = field(default_factory=list)
    epoch_ms: list[float] = field(default_factory=list)
    setup_ms: float = 0.0
    best_epoch: int | None = None
    best_valid: float | None = None
    node_ids: np.ndarray | None = None

    def loss_curve_csv(self) -> str:
        rows = ["epoch,loss,epoch_ms"]
        rows += [f"{i},{l:.9g},{ms:.3f}" for i, (l, ms) in enumerate(zip(self.losses, self.epoch_ms))]
        return "\n".join(rows) + "\n"


def training_view(graph: Graph, features: FeatureMatrix, split: SplitBundle | None):
    """Message graph, features and node ids the encoder may see while training."""
    if split is None:
        return graph, features, np.arange(graph.num_nodes)
    g, nodes = split.training_graph()
    x = features if len(nodes) == features.rows else features.take_rows(nodes)
    return g, x, nodes


def train(graph: Graph, features: FeatureMatrix, split: SplitBundle | None, cfg: TrainConfig,
          seed: int = 0, log=None) -> TrainResult:
    """Full-batch training of ``cfg.method``.

    Supervised methods early-stop on validation Hits@50 and keep the best
    parameters; self-supervised methods keep the final ones.
    """
    t0 = time.perf_counter()
    g, x, nodes = training_view(graph, features, split)
    data = TrainData(g, x)
    method = build_method(x.cols, cfg, seed)
    result = TrainResult(method=method, node_ids=nodes)
    epochs = cfg.resolved_epochs()
    rng = np.random.default_rng([seed, 1])

    valid = None
    if method.supervised and split is not None and len(split.valid_pos):
        local = split.local_index()
        valid = local[split.valid_pos], local[split.valid_neg]
    best_state, wait = None, 0
    result.setup_ms = (time.perf_counter() - t0) * 1e3

    for epoch in range(epochs):
        t = time.perf_counter()
        loss = method.step(data, rng, epoch, epochs)
        result.epoch_ms.append((time.perf_counter() - t) * 1e3)
        result.losses.append(loss)
        if log is not None:
            log(epoch, loss)
        if valid is None:
            continue
        h = method.encoder.embed(data.adj, data.features)
        score = hits_at_k(method.score_pairs(h, valid[0]), method.score_pairs(h, valid[1]), 50)
        if result.best_valid is None or score > result.best_valid:
            result.best_valid, result.best_epoch, wait = score, epoch, 0
            best_state = {k: v.copy() for k, v in method.state_params().state().items()}
        else:
            wait += 1
            if wait >= cfg.patience:
                break
    if best_state is not None:
        method.load_state(best_state)
    return result
