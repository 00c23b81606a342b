"""Pairwise preference probabilities, fidelity loss, and the noisy-annotator likelihood.

All gradients here are analytic and are cross-checked against central finite
differences in the test suite. One normal-CDF routine is shared by model
probabilities, human labels, and the simulation harness so the three stay
numerically consistent.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence, Union

import numpy as np
from scipy.special import erfc

from .pool import feature_matrix
from .scorer import GradientRecord, ModelParams, score_backward, score_batch

PROB_EPS = 1e-7

_SQRT2 = np.sqrt(2.0)
_INV_SQRT_2PI = 1.0 / np.sqrt(2.0 * np.pi)


def normal_cdf(z):
    """Standard normal CDF, accurate to well below 1e-12 over the full range."""
    z = np.asarray(z, dtype=np.float64)
    out = 0.5 * erfc(-z / _SQRT2)
    return float(out) if out.ndim == 0 else out


def normal_pdf(z):
    z = np.asarray(z, dtype=np.float64)
    out = _INV_SQRT_2PI * np.exp(-0.5 * z * z)
    return float(out) if out.ndim == 0 else out


def logit(p):
    p = np.asarray(p, dtype=np.float64)
    return np.log(p) - np.log1p(-p)


def sigmoid(x):
    x = np.asarray(x, dtype=np.float64)
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


@dataclass
class AnnotatorReliability:
    """Per-annotator correct-answer and rejection probabilities, stored as logits.

    alpha_j = Pr(vote 1 | true order is 1), beta_j = Pr(vote 0 | true order
    is 0). The unconstrained logits are what the optimizer touches; alpha and
    beta themselves always stay inside (0, 1).
    """

    alpha_logit: np.ndarray
    beta_logit: np.ndarray

    def __post_init__(self):
        self.alpha_logit = np.asarray(self.alpha_logit, dtype=np.float64)
        self.beta_logit = np.asarray(self.beta_logit, dtype=np.float64)
        if self.alpha_logit.shape != self.beta_logit.shape:
            raise ValueError("alpha and beta must have the same length")

    @classmethod
    def from_probs(cls, alpha: Sequence[float], beta: Sequence[float]) -> "AnnotatorReliability":
        alpha = np.asarray(alpha, dtype=np.float64)
        beta = np.asarray(beta, dtype=np.float64)
        if np.any(alpha <= 0) or np.any(alpha >= 1) or np.any(beta <= 0) or np.any(beta >= 1):
            raise ValueError("alpha and beta must lie strictly inside (0, 1)")
        return cls(logit(alpha), logit(beta))

    @classmethod
    def uniform(cls, n: int, value: float = 0.8) -> "AnnotatorReliability":
        return cls.from_probs(np.full(n, value), np.full(n, value))

    @property
    def n(self) -> int:
        return self.alpha_logit.shape[0]

    @property
    def alpha(self) -> np.ndarray:
        return sigmoid(self.alpha_logit)

    @property
    def beta(self) -> np.ndarray:
        return sigmoid(self.beta_logit)

    def copy(self) -> "AnnotatorReliability":
        return AnnotatorReliability(self.alpha_logit.copy(), self.beta_logit.copy())


@dataclass
class NoisyPair:
    """An image pair with one binary vote per annotator (1 = first image wins)."""

    x: str
    y: str
    votes: np.ndarray

    def __post_init__(self):
        if self.x == self.y:
            raise ValueError("a pair must involve two distinct images")
        self.votes = np.asarray(self.votes, dtype=np.int8)


@dataclass
class PairLabel:
    """A pair with a probabilistic human (or simulated-human) label.

    p is the probability that x has the higher perceived quality. role and
    case are filled once the pair has gone through a gMAD round; base-set
    pairs leave them empty.
    """

    x: str
    y: str
    p: float
    source: str = "database"
    pair_id: str = ""
    role: str = ""
    case: str = ""

    def __post_init__(self):
        if self.x == self.y:
            raise ValueError("a pair must involve two distinct images")
        if not 0.0 <= self.p <= 1.0:
            raise ValueError(f"label probability {self.p} outside [0, 1]")


def thurstone_prob(fx, fy):
    """Probability that the first stimulus wins under a unit-noise preference model."""
    fx = np.asarray(fx, dtype=np.float64)
    fy = np.asarray(fy, dtype=np.float64)
    if not (np.all(np.isfinite(fx)) and np.all(np.isfinite(fy))):
        raise ValueError("thurstone_prob requires finite scores")
    return normal_cdf((fx - fy) / _SQRT2)


def fidelity_loss(p, pw):
    """1 - sqrt(p*pw) - sqrt((1-p)(1-pw)); zero iff the two distributions agree."""
    p = np.asarray(p, dtype=np.float64)
    pw = np.asarray(pw, dtype=np.float64)
    if np.any(p < 0) or np.any(p > 1) or np.any(pw < 0) or np.any(pw > 1):
        raise ValueError("fidelity_loss arguments must lie in [0, 1]")
    out = 1.0 - np.sqrt(p * pw) - np.sqrt((1.0 - p) * (1.0 - pw))
    return float(out) if out.ndim == 0 else out


def fidelity_grad(p, pw):
    """d fidelity_loss / d pw, with pw clamped to [eps, 1-eps] first."""
    p = np.asarray(p, dtype=np.float64)
    pw = np.clip(np.asarray(pw, dtype=np.float64), PROB_EPS, 1.0 - PROB_EPS)
    out = -0.5 * (np.sqrt(p / pw) - np.sqrt((1.0 - p) / (1.0 - pw)))
    return float(out) if out.ndim == 0 else out


def _resolve_pairs(batch, features) -> tuple[np.ndarray, np.ndarray]:
    xs = [pair.x for pair in batch]
    ys = [pair.y for pair in batch]
    return feature_matrix(features, xs), feature_matrix(features, ys)


def _pair_probs(params: ModelParams, X: np.ndarray, Y: np.ndarray):
    fx = score_batch(params, X)
    fy = score_batch(params, Y)
    z = (fx - fy) / _SQRT2
    return normal_cdf(z), z


# --- noisy-annotator likelihood ---------------------------------------------


def _vote_log_likelihoods(rel: AnnotatorReliability, votes: np.ndarray):
    """log Pr(votes | q=1) and log Pr(votes | q=0), one value per pair."""
    alpha, beta = rel.alpha, rel.beta
    v = votes.astype(np.float64)
    log_a1 = v @ np.log(alpha) + (1.0 - v) @ np.log1p(-alpha)
    log_a0 = (1.0 - v) @ np.log(beta) + v @ np.log1p(-beta)
    return log_a1, log_a0


def _nll_terms(params: ModelParams, rel: AnnotatorReliability, X, Y, votes):
    pw, z = _pair_probs(params, X, Y)
    pwc = np.clip(pw, PROB_EPS, 1.0 - PROB_EPS)
    log_a1, log_a0 = _vote_log_likelihoods(rel, votes)
    t1 = np.log(pwc) + log_a1
    t0 = np.log1p(-pwc) + log_a0
    log_lik = np.logaddexp(t1, t0)
    return pw, pwc, z, t1, t0, log_lik


def annotator_nll_arrays(params: ModelParams, rel: AnnotatorReliability, X, Y, votes) -> float:
    _, _, _, _, _, log_lik = _nll_terms(params, rel, X, Y, votes)
    return float(-np.mean(log_lik))


def annotator_nll(params: ModelParams, rel: AnnotatorReliability, batch, features) -> float:
    """Mean negative log-likelihood of the annotator votes under the mixture model."""
    if not batch:
        raise ValueError("empty batch")
    if batch[0].votes.shape[0] != rel.n:
        raise ValueError("vote count does not match the number of annotators")
    X, Y = _resolve_pairs(batch, features)
    return annotator_nll_arrays(params, rel, X, Y, np.stack([p.votes for p in batch]))


def annotator_nll_backward_arrays(
    params: ModelParams, rel: AnnotatorReliability, X, Y, votes
) -> tuple[float, GradientRecord, np.ndarray, np.ndarray]:
    """NLL value plus gradients for model parameters and reliability logits."""
    pw, pwc, z, t1, t0, log_lik = _nll_terms(params, rel, X, Y, votes)
    m = X.shape[0]
    w1 = np.exp(t1 - log_lik)
    w0 = np.exp(t0 - log_lik)

    d_pw = -(w1 / pwc - w0 / (1.0 - pwc)) / m
    inside = (pw > PROB_EPS) & (pw < 1.0 - PROB_EPS)
    d_z = d_pw * normal_pdf(z) * inside
    d_fx = d_z / _SQRT2

    stacked = np.concatenate([X, Y])
    grad_out = np.concatenate([d_fx, -d_fx])
    param_grads = score_backward(params, stacked, grad_out)

    alpha, beta = rel.alpha, rel.beta
    v = votes.astype(np.float64)
    d_alpha = -(w1[:, None] * (v / alpha - (1.0 - v) / (1.0 - alpha))).sum(axis=0) / m
    d_beta = -(w0[:, None] * ((1.0 - v) / beta - v / (1.0 - beta))).sum(axis=0) / m
    d_alpha_logit = d_alpha * alpha * (1.0 - alpha)
    d_beta_logit = d_beta * beta * (1.0 - beta)

    return float(-np.mean(log_lik)), param_grads, d_alpha_logit, d_beta_logit


def annotator_nll_backward(params, rel, batch, features):
    if not batch:
        raise ValueError("empty batch")
    X, Y = _resolve_pairs(batch, features)
    votes = np.stack([p.votes for p in batch])
    return annotator_nll_backward_arrays(params, rel, X, Y, votes)


# --- fidelity objectives ------------------------------------------------------


def mean_fidelity_arrays(params: ModelParams, X, Y, p: np.ndarray) -> float:
    pw, _ = _pair_probs(params, X, Y)
    return float(np.mean(fidelity_loss(p, pw)))


def mean_fidelity_objective(params: ModelParams, batch, features) -> float:
    """Mean fidelity loss between labels and the model's pair probabilities."""
    if not batch:
        raise ValueError("empty batch")
    X, Y = _resolve_pairs(batch, features)
    return mean_fidelity_arrays(params, X, Y, np.array([pair.p for pair in batch]))


def mean_fidelity_backward_arrays(
    params: ModelParams, X, Y, p: np.ndarray
) -> tuple[float, GradientRecord]:
    pw, z = _pair_probs(params, X, Y)
    m = X.shape[0]
    value = float(np.mean(fidelity_loss(p, pw)))
    inside = (pw > PROB_EPS) & (pw < 1.0 - PROB_EPS)
    d_fx = fidelity_grad(p, pw) * normal_pdf(z) * inside / (_SQRT2 * m)
    stacked = np.concatenate([X, Y])
    grad_out = np.concatenate([d_fx, -d_fx])
    return value, score_backward(params, stacked, grad_out)


def mean_fidelity_backward(params, batch, features):
    if not batch:
        raise ValueError("empty batch")
    X, Y = _resolve_pairs(batch, features)
    return mean_fidelity_backward_arrays(params, X, Y, np.array([pair.p for pair in batch]))


def weighted_objective(params: ModelParams, d2_batch, d3_batch, features) -> float:
    """Sum of the two per-set mean fidelity losses, each normalized by its own size.

    An empty d3_batch degenerates to the plain mean fidelity over d2_batch.
    """
    if not d2_batch and not d3_batch:
        raise ValueError("both batches empty")
    if not d3_batch:
        return mean_fidelity_objective(params, d2_batch, features)
    if not d2_batch:
        return mean_fidelity_objective(params, d3_batch, features)
    return mean_fidelity_objective(params, d2_batch, features) + mean_fidelity_objective(
        params, d3_batch, features
    )
