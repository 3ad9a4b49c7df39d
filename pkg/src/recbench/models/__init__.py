from .base import (
    KINDS,
    DEFAULT_HYPERPARAMS,
    ModelConfig,
    Network,
    RecContext,
    TrainedModel,
    build_network,
    embed,
    fit,
    load_model,
    pad_contexts,
    recommend_topk,
    score_autoencoder,
    score_cnn,
    score_contexts,
    score_gnn,
    score_ncf,
    score_rnn,
    score_siamese,
    score_transformer,
)

__all__ = [name for name in dir() if not name.startswith("_")]
