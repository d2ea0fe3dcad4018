"""Image module: dense-connectivity CNN, training callback, persistence."""

from .classifier import DenseNetClassifier
from .layers import (
    Conv,
    DenseBlock,
    FullyConnected,
    GlobalAvgPool,
    LayerSpec,
    MaxPool,
    ReLU,
    SigmoidHead,
    Transition,
    conv2d_forward,
    dense_block_forward,
)
from .network import (
    CallbackConfig,
    NetConfig,
    Network,
    bce_from_logits,
    default_layers,
    infer_shapes,
)
from .training import (
    EpochStats,
    TrainedNet,
    augment_validation,
    history_csv,
    load_net,
    predict_image,
    save_net,
    train_net,
)

__all__ = [
    "CallbackConfig",
    "Conv",
    "DenseBlock",
    "DenseNetClassifier",
    "EpochStats",
    "FullyConnected",
    "GlobalAvgPool",
    "LayerSpec",
    "MaxPool",
    "NetConfig",
    "Network",
    "ReLU",
    "SigmoidHead",
    "TrainedNet",
    "Transition",
    "augment_validation",
    "bce_from_logits",
    "conv2d_forward",
    "default_layers",
    "dense_block_forward",
    "history_csv",
    "infer_shapes",
    "load_net",
    "predict_image",
    "save_net",
    "train_net",
]
