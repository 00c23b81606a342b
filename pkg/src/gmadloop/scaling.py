"""Four-parameter monotone logistic used to put raw model scores on the
common perceptual scale and to linearize predictions before Pearson
correlation."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.optimize import least_squares


class FitError(RuntimeError):
    pass


@dataclass
class FourParamMap:
    """(upper - lower) / (1 + exp(-(f - center)/|spread|)) + lower."""

    upper: float
    lower: float
    center: float
    spread: float

    def apply(self, f):
        f = np.asarray(f, dtype=np.float64)
        out = (self.upper - self.lower) / (1.0 + np.exp(-(f - self.center) / abs(self.spread))) + self.lower
        return float(out) if out.ndim == 0 else out

    @property
    def increasing(self) -> bool:
        return self.upper > self.lower

    def to_doc(self) -> dict:
        return {
            "upper": self.upper,
            "lower": self.lower,
            "center": self.center,
            "spread": self.spread,
        }

    @classmethod
    def from_doc(cls, doc: dict) -> "FourParamMap":
        return cls(doc["upper"], doc["lower"], doc["center"], doc["spread"])


def fit_four_param(values, targets, max_nfev: int = 500) -> FourParamMap:
    """Least-squares fit of the logistic to (values, targets).

    Initialization follows the usual convention: output bounds from the
    target extremes, center and spread from the input moments. Damped
    least-squares refinement runs until the relative objective change drops
    below 1e-10 or the evaluation budget is exhausted.
    """
    values = np.asarray(values, dtype=np.float64)
    targets = np.asarray(targets, dtype=np.float64)
    if values.shape != targets.shape or values.ndim != 1:
        raise ValueError("values and targets must be 1-d and of equal length")
    spread0 = values.std()
    if spread0 == 0.0:
        raise FitError("constant input values cannot be fitted")
    x0 = np.array([targets.max(), targets.min(), values.mean(), spread0])

    def residual(eta):
        return FourParamMap(*eta).apply(values) - targets

    try:
        result = least_squares(residual, x0, method="trf", ftol=1e-10, xtol=1e-12, max_nfev=max_nfev)
    except Exception as exc:  # scipy raises on non-finite residuals
        raise FitError(str(exc)) from exc
    if not np.all(np.isfinite(result.x)):
        raise FitError("fit produced non-finite parameters")
    return FourParamMap(*result.x)
