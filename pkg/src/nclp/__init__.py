"""Self-supervised and supervised GCN encoders for link prediction."""

from .autodiff import Adam, NumericError, ParamSet, Tape, Tensor, ema_update, glorot_init
from .graph import FeatureMatrix, Graph, NormalizedAdjacency, load_dataset, normalize_adjacency
from .linkpred import DecoderMlp, auc_roc, decode, export_similarity_histogram, hits_at_k, train_decoder
from .methods import TrainConfig, train
from .splits import SplitBundle, inductive_split, transductive_split
from .transforms import AugmentConfig, CorruptionKind, augment, corrupt

__version__ = "0.1.0"

__all__ = [
    "Adam", "AugmentConfig", "CorruptionKind", "DecoderMlp", "FeatureMatrix", "Graph", "NormalizedAdjacency",
    "NumericError", "ParamSet", "SplitBundle", "Tape", "Tensor", "TrainConfig", "auc_roc", "augment", "corrupt",
    "decode", "ema_update", "export_similarity_histogram", "glorot_init", "hits_at_k", "inductive_split",
    "load_dataset", "normalize_adjacency", "train", "train_decoder", "transductive_split",
]
