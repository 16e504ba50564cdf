from polyseq.model.detector import (
    ARPrediction,
    Detector,
    ModelConfig,
    ParallelPrediction,
    RNNHead,
    parallel_coord_dim,
)
from polyseq.model.layers import (
    CNNBackbone,
    DecoderLayer,
    EncoderLayer,
    FeedForward,
    LayerNorm,
    Linear,
    Module,
    MultiHeadAttention,
    sinusoidal_2d,
    sinusoidal_encoding,
)
from polyseq.model.training import (
    Trainer,
    TrainingDiverged,
    ar_batch_loss,
    batch_loss,
    images_to_tensor,
    parallel_batch_loss,
    parallel_targets,
    train_step,
)

__all__ = [
    "ARPrediction",
    "CNNBackbone",
    "DecoderLayer",
    "Detector",
    "EncoderLayer",
    "FeedForward",
    "LayerNorm",
    "Linear",
    "ModelConfig",
    "Module",
    "MultiHeadAttention",
    "ParallelPrediction",
    "RNNHead",
    "Trainer",
    "TrainingDiverged",
    "ar_batch_loss",
    "batch_loss",
    "images_to_tensor",
    "parallel_batch_loss",
    "parallel_coord_dim",
    "parallel_targets",
    "sinusoidal_2d",
    "sinusoidal_encoding",
    "train_step",
]
