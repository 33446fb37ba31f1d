"""Segment-level sentiment from document labels.

Models trained only on document ratings predict per-segment sentiment,
score segments on a [-1, 1] polarity scale (optionally gated by
attention), and extract polarity-ranked opinion summaries.
"""

__version__ = "0.1.0"

from .autodiff import Tensor, backward, parameter
from .data import (
    Document,
    EmbeddingTable,
    Segment,
    Vocabulary,
    build_vocab,
    encode_corpus,
    generate_synthetic,
    load_corpus,
    load_embeddings,
    make_batches,
    save_corpus,
)
from .models import (
    HierNetOutput,
    MilNetOutput,
    ModelConfig,
    hiernet_forward,
    init_params,
    load_checkpoint,
    milnet_forward,
    save_checkpoint,
    segcnn_forward,
)
from .polarity import class_weights, discretize, extract_summary, gated_polarity
from .training import TrainConfig, overfit_sanity, train

__all__ = [
    "Tensor",
    "backward",
    "parameter",
    "Document",
    "Segment",
    "Vocabulary",
    "EmbeddingTable",
    "load_corpus",
    "save_corpus",
    "build_vocab",
    "encode_corpus",
    "load_embeddings",
    "make_batches",
    "generate_synthetic",
    "ModelConfig",
    "MilNetOutput",
    "HierNetOutput",
    "init_params",
    "milnet_forward",
    "hiernet_forward",
    "segcnn_forward",
    "save_checkpoint",
    "load_checkpoint",
    "class_weights",
    "gated_polarity",
    "discretize",
    "extract_summary",
    "TrainConfig",
    "train",
    "overfit_sanity",
    "__version__",
]
