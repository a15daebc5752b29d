"""Autoregressive text embeddings via compressed-token reconstruction and
conditional-distribution alignment, built on a small from-scratch
reverse-mode autodiff stack."""

from .align import (
    CdaConfig,
    DistributionPairs,
    ReferenceModel,
    ScoredTriplet,
    cda_loss,
    cda_loss_js,
    cda_loss_kl,
    cda_loss_logsigmoid,
    infonce_loss,
    js_divergence,
    kl_divergence,
    s1,
    s2,
    score_triplet,
    train_cda,
)
from .compress import CompressedEmbedding, compress, ic_items, ic_loss, train_ic
from .data import (
    GeneratedData,
    Tokenizer,
    TripletRecord,
    WorldSpec,
    build_tokenizer,
    generate,
    instruction_ids,
    load_records,
    save_records,
)
from .estimator import AutoRegressiveEmbedder
from .gradcheck import gradcheck
from .metrics import (
    MetricConfig,
    MetricsReport,
    PooledEmbedding,
    alignment_metric,
    cosine,
    embed,
    pooled_embedding,
    spearman,
    sts_eval,
    uniformity_metric,
)
from .model import (
    LmConfig,
    LmModel,
    forward,
    load_checkpoint,
    save_checkpoint,
    sequence_log_prob,
)
from .optim import Adam, AdamState, adam_step
from .tensor import Tensor, no_grad

__version__ = "0.1.0"
