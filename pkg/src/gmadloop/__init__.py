"""Active fine-tuning of pairwise quality models from maximally discriminable
(gMAD) counterexamples, with a desk-scale simulation harness standing in for
real images and real subjects."""

from .scorer import (
    AffineLayer,
    Checkpoint,
    GdnLayer,
    ModelParams,
    gdn_backward,
    gdn_forward,
    init_params,
    project_gdn,
    score,
    score_backward,
    score_batch,
)
from .objectives import (
    AnnotatorReliability,
    NoisyPair,
    PairLabel,
    annotator_nll,
    annotator_nll_backward,
    fidelity_grad,
    fidelity_loss,
    mean_fidelity_objective,
    normal_cdf,
    thurstone_prob,
    weighted_objective,
)
from .optim import AdamState, TrainConfig, adam_step, finetune, pretrain
from .pool import ImagePool, ImageRecord

__all__ = [
    "AffineLayer",
    "AdamState",
    "AnnotatorReliability",
    "Checkpoint",
    "GdnLayer",
    "ImagePool",
    "ImageRecord",
    "ModelParams",
    "NoisyPair",
    "PairLabel",
    "TrainConfig",
    "adam_step",
    "annotator_nll",
    "annotator_nll_backward",
    "fidelity_grad",
    "fidelity_loss",
    "finetune",
    "gdn_backward",
    "gdn_forward",
    "init_params",
    "mean_fidelity_objective",
    "normal_cdf",
    "pretrain",
    "project_gdn",
    "score",
    "score_backward",
    "score_batch",
    "thurstone_prob",
    "weighted_objective",
]

__version__ = "0.1.0"
