"""Adam training loops for the scorer: pre-training on annotator votes and
fine-tuning on probability-labeled pairs.

Every update is followed by the GDN constraint projection. All shuffling is
driven by one seeded generator, so a fixed seed and fixed data reproduce the
parameter trajectory bit for bit.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .objectives import (
    AnnotatorReliability,
    annotator_nll_arrays,
    annotator_nll_backward_arrays,
    mean_fidelity_arrays,
    mean_fidelity_backward_arrays,
)
from .pool import feature_matrix
from .scorer import GradientRecord, ModelParams, iter_param_arrays, project_params

logger = logging.getLogger(__name__)


@dataclass
class TrainConfig:
    batch_size: int = 16
    lr_deep: float = 1e-4
    lr_shallow: float = 1e-5
    # The reliability logits are a dozen free scalars, not network weights;
    # they need a faster rate than the layers to converge within the fixed
    # epoch budget.
    lr_annotator: float = 1e-2
    max_epochs: int = 8
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    seed: int = 0

    def __post_init__(self):
        if self.batch_size < 1 or self.max_epochs < 1:
            raise ValueError("batch_size and max_epochs must be >= 1")
        if self.lr_deep <= 0 or self.lr_shallow <= 0 or self.lr_annotator <= 0:
            raise ValueError("learning rates must be positive")


@dataclass
class AdamState:
    """First/second moment accumulators per named parameter array."""

    moments: dict = field(default_factory=dict)
    step: int = 0

    @classmethod
    def for_params(cls, params: ModelParams) -> "AdamState":
        moments = {
            name: (np.zeros_like(arr), np.zeros_like(arr))
            for name, arr, _ in iter_param_arrays(params)
        }
        return cls(moments=moments, step=0)


def _named_grads(
    params: ModelParams,
    grads: Optional[GradientRecord],
    d_alpha_logit: Optional[np.ndarray] = None,
    d_beta_logit: Optional[np.ndarray] = None,
) -> dict:
    out = {}
    if grads is not None:
        for i, (ga, gb) in enumerate(grads.layers):
            prefix = f"layer{i}"
            if hasattr(params.layers[i], "weight"):
                out[f"{prefix}.weight"], out[f"{prefix}.bias"] = ga, gb
            else:
                out[f"{prefix}.omega"], out[f"{prefix}.gamma"] = ga, gb
    if d_alpha_logit is not None:
        out["annotators.alpha_logit"] = d_alpha_logit
    if d_beta_logit is not None:
        out["annotators.beta_logit"] = d_beta_logit
    return out


def adam_step(
    params: ModelParams,
    grads: dict,
    state: AdamState,
    config: TrainConfig,
    split_lr: bool = False,
) -> tuple[ModelParams, AdamState]:
    """One bias-corrected Adam update over the named gradient arrays.

    With ``split_lr`` the first affine + GDN block trains at ``lr_shallow``,
    everything else at ``lr_deep``. A non-finite gradient skips the step with
    a warning. GDN layers are projected back to their constraint set after
    the update (and even when the step is skipped).
    """
    for g in grads.values():
        if not np.all(np.isfinite(g)):
            logger.warning("non-finite gradient encountered; skipping optimizer step")
            project_params(params)
            return params, state

    state.step += 1
    t = state.step
    bc1 = 1.0 - config.beta1 ** t
    bc2 = 1.0 - config.beta2 ** t
    for name, arr, shallow in iter_param_arrays(params):
        if name not in grads:
            continue
        g = grads[name]
        m, v = state.moments[name]
        m *= config.beta1
        m += (1.0 - config.beta1) * g
        v *= config.beta2
        v += (1.0 - config.beta2) * np.square(g)
        if name.startswith("annotators."):
            lr = config.lr_annotator
        elif split_lr and shallow:
            lr = config.lr_shallow
        else:
            lr = config.lr_deep
        arr -= lr * (m / bc1) / (np.sqrt(v / bc2) + config.eps)
    project_params(params)
    return params, state


@dataclass
class TrainResult:
    params: ModelParams
    rel: Optional[AnnotatorReliability]
    epoch_trace: list
    step_trace: list  # (step, epoch, batch objective)


def pretrain(
    params: ModelParams,
    rel: AnnotatorReliability,
    d1,
    features,
    config: TrainConfig,
) -> TrainResult:
    """Maximum-likelihood pre-training on annotator votes.

    Runs ``max_epochs`` of shuffled mini-batch Adam on the mixture NLL,
    updating the scorer and the reliability logits jointly. The epoch trace
    holds the full-dataset NLL, starting with the untrained value.
    """
    if not d1:
        raise ValueError("empty pre-training dataset")
    X = feature_matrix(features, [p.x for p in d1])
    Y = feature_matrix(features, [p.y for p in d1])
    votes = np.stack([p.votes for p in d1])
    if votes.shape[1] != rel.n:
        raise ValueError("vote count does not match the number of annotators")

    params.annotators = rel
    state = AdamState.for_params(params)
    rng = np.random.default_rng(config.seed)
    m = len(d1)

    epoch_trace = [annotator_nll_arrays(params, rel, X, Y, votes)]
    step_trace = []
    step = 0
    for epoch in range(1, config.max_epochs + 1):
        order = rng.permutation(m)
        for lo in range(0, m, config.batch_size):
            idx = order[lo : lo + config.batch_size]
            value, grads, d_a, d_b = annotator_nll_backward_arrays(
                params, rel, X[idx], Y[idx], votes[idx]
            )
            adam_step(params, _named_grads(params, grads, d_a, d_b), state, config)
            step += 1
            step_trace.append((step, epoch, value))
        epoch_trace.append(annotator_nll_arrays(params, rel, X, Y, votes))
    return TrainResult(params, rel, epoch_trace, step_trace)


def _resolve_labeled(pairs, features):
    X = feature_matrix(features, [p.x for p in pairs])
    Y = feature_matrix(features, [p.y for p in pairs])
    p = np.array([pair.p for pair in pairs], dtype=np.float64)
    return X, Y, p


def finetune(
    params: ModelParams,
    d2,
    d3,
    features,
    config: TrainConfig,
) -> TrainResult:
    """Fine-tune on labeled pairs, optionally mixing in an auxiliary pair set.

    Without ``d3`` this minimizes the mean fidelity loss over ``d2`` at a
    single learning rate. With ``d3`` each mini-batch takes half of its
    members from each set (the sets weighted by their own sizes), the
    shallow/deep learning-rate split is applied, and an epoch is one pass
    over the larger set with the smaller one reshuffled cyclically.
    """
    if not d2:
        raise ValueError("empty fine-tuning dataset")
    X2, Y2, p2 = _resolve_labeled(d2, features)
    state = AdamState.for_params(params)
    rng = np.random.default_rng(config.seed)
    step_trace = []
    step = 0

    if not d3:
        epoch_trace = [mean_fidelity_arrays(params, X2, Y2, p2)]
        m = len(d2)
        for epoch in range(1, config.max_epochs + 1):
            order = rng.permutation(m)
            for lo in range(0, m, config.batch_size):
                idx = order[lo : lo + config.batch_size]
                value, grads = mean_fidelity_backward_arrays(params, X2[idx], Y2[idx], p2[idx])
                adam_step(params, _named_grads(params, grads), state, config)
                step += 1
                step_trace.append((step, epoch, value))
            epoch_trace.append(mean_fidelity_arrays(params, X2, Y2, p2))
        return TrainResult(params, None, epoch_trace, step_trace)

    X3, Y3, p3 = _resolve_labeled(d3, features)

    def exact_objective():
        return mean_fidelity_arrays(params, X2, Y2, p2) + mean_fidelity_arrays(params, X3, Y3, p3)

    epoch_trace = [exact_objective()]
    half = max(1, config.batch_size // 2)
    primary_is_d2 = len(d2) >= len(d3)
    n_primary = max(len(d2), len(d3))

    def cycled_order(n, steps_needed):
        reps = []
        total = 0
        while total < steps_needed:
            perm = rng.permutation(n)
            reps.append(perm)
            total += n
        return np.concatenate(reps)

    for epoch in range(1, config.max_epochs + 1):
        primary_order = rng.permutation(n_primary)
        n_steps = int(np.ceil(n_primary / half))
        secondary_n = min(len(d2), len(d3))
        secondary_order = cycled_order(secondary_n, n_steps * half)
        for b in range(n_steps):
            prim_idx = primary_order[b * half : (b + 1) * half]
            sec_idx = secondary_order[b * half : (b + 1) * half]
            idx2, idx3 = (prim_idx, sec_idx) if primary_is_d2 else (sec_idx, prim_idx)
            v2, g2 = mean_fidelity_backward_arrays(params, X2[idx2], Y2[idx2], p2[idx2])
            v3, g3 = mean_fidelity_backward_arrays(params, X3[idx3], Y3[idx3], p3[idx3])
            adam_step(params, _named_grads(params, g2 + g3), state, config, split_lr=True)
            step += 1
            step_trace.append((step, epoch, v2 + v3))
        epoch_trace.append(exact_objective())
    return TrainResult(params, None, epoch_trace, step_trace)
