"""Rank and linear correlation metrics plus the role-split mean fidelity
progress summary."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
from scipy.stats import rankdata

from .objectives import fidelity_loss, thurstone_prob
from .pool import feature_matrix
from .scaling import FitError, FourParamMap, fit_four_param
from .scorer import ModelParams, score_batch


def _pearson(a: np.ndarray, b: np.ndarray) -> Optional[float]:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.std() == 0.0 or b.std() == 0.0:
        return None
    return float(np.corrcoef(a, b)[0, 1])


def srcc(pred: Sequence[float], truth: Sequence[float]) -> Optional[float]:
    """Spearman rank correlation: Pearson over mid-ranks, average ranks on ties.

    Returns None when either side is constant (the statistic is undefined
    there and callers report it as an explicit no-value).
    """
    pred = np.asarray(pred, dtype=np.float64)
    truth = np.asarray(truth, dtype=np.float64)
    if pred.shape != truth.shape or pred.ndim != 1 or len(pred) < 2:
        raise ValueError("srcc needs two equal-length sequences of at least 2 values")
    return _pearson(rankdata(pred, method="average"), rankdata(truth, method="average"))


@dataclass
class PlccResult:
    value: Optional[float]
    mapping: Optional[FourParamMap] = None
    fallback: bool = False


def plcc(pred: Sequence[float], truth: Sequence[float], linearize: bool = False) -> PlccResult:
    """Pearson correlation, optionally after fitting the monotone logistic.

    A failed or degenerate fit falls back to the raw Pearson value with the
    fallback flag set rather than erroring the whole report.
    """
    pred = np.asarray(pred, dtype=np.float64)
    truth = np.asarray(truth, dtype=np.float64)
    if pred.shape != truth.shape or pred.ndim != 1 or len(pred) < 2:
        raise ValueError("plcc needs two equal-length sequences of at least 2 values")
    if not linearize:
        return PlccResult(_pearson(pred, truth))
    if len(pred) < 10:
        raise ValueError("linearized plcc needs at least 10 points")
    try:
        mapping = fit_four_param(pred, truth)
        mapped = mapping.apply(pred)
        value = _pearson(mapped, truth)
        if value is None or not np.isfinite(value):
            raise FitError("degenerate mapped predictions")
        return PlccResult(value, mapping, fallback=False)
    except FitError:
        return PlccResult(_pearson(pred, truth), None, fallback=True)


@dataclass
class RoleFidelity:
    mean: float
    stderr: float
    n: int


def fidelity_stats(labels, params: ModelParams, features) -> RoleFidelity:
    """Mean fidelity loss of the model against the labels, with standard error."""
    if not labels:
        raise ValueError("empty label list")
    fx = score_batch(params, feature_matrix(features, [l.x for l in labels]))
    fy = score_batch(params, feature_matrix(features, [l.y for l in labels]))
    losses = fidelity_loss(np.array([l.p for l in labels]), thurstone_prob(fx, fy))
    losses = np.atleast_1d(losses)
    n = len(losses)
    stderr = float(losses.std(ddof=1) / np.sqrt(n)) if n > 1 else 0.0
    return RoleFidelity(mean=float(losses.mean()), stderr=stderr, n=n)


def role_fidelity_summary(labels, params: ModelParams, features) -> dict:
    """Per-role (defender/attacker) mean fidelity loss with standard errors.

    Roles with no labels are simply absent from the result.
    """
    out = {}
    for role in ("defender", "attacker"):
        bucket = [l for l in labels if l.role.replace("model-as-", "") == role]
        if bucket:
            out[role] = fidelity_stats(bucket, params, features)
    return out


@dataclass
class EvalReport:
    dataset_id: str
    n: int
    srcc: Optional[float] = None
    plcc: Optional[float] = None
    plcc_fallback: bool = False
    mean_fidelity: Optional[float] = None
    fidelity_stderr: Optional[float] = None
    per_role: dict = field(default_factory=dict)

    def to_doc(self) -> dict:
        doc = {
            "format_version": 1,
            "kind": "gmadloop-eval-report",
            "dataset_id": self.dataset_id,
            "n": self.n,
            "srcc": self.srcc,
            "plcc": self.plcc,
            "plcc_fallback": self.plcc_fallback,
            "mean_fidelity": self.mean_fidelity,
            "fidelity_stderr": self.fidelity_stderr,
            "per_role": {
                role: {"mean": rf.mean, "stderr": rf.stderr, "n": rf.n}
                for role, rf in sorted(self.per_role.items())
            },
        }
        return doc


def evaluate_labels(dataset_id: str, labels, params: ModelParams, features) -> EvalReport:
    """Full report over a labeled pair set: fidelity overall and per role."""
    stats = fidelity_stats(labels, params, features)
    return EvalReport(
        dataset_id=dataset_id,
        n=stats.n,
        mean_fidelity=stats.mean,
        fidelity_stderr=stats.stderr,
        per_role=role_fidelity_summary(labels, params, features),
    )


def evaluate_scores(dataset_id: str, pred, truth, linearize: bool = True) -> EvalReport:
    """Correlation report between predicted scores and ground-truth quality."""
    pred = np.asarray(pred, dtype=np.float64)
    result = plcc(pred, truth, linearize=linearize)
    return EvalReport(
        dataset_id=dataset_id,
        n=len(pred),
        srcc=srcc(pred, truth),
        plcc=result.value,
        plcc_fallback=result.fallback,
    )
