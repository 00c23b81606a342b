"""Differentiable quality scorer over fixed-length feature vectors.

The scorer is a small feedforward stack of affine layers with generalized
divisive normalization (GDN) between them:

    affine(d -> h) -> GDN(h) -> affine(h -> h) -> GDN(h) -> affine(h -> 1)

Forward and backward passes are written out analytically in numpy; there is
no autodiff. GDN parameters live on a constrained manifold (entrywise lower
bound, symmetric gamma) maintained by :func:`project_gdn`.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Iterator, Optional, Sequence, Union

import numpy as np

GDN_FLOOR = 2.0 ** -10

CHECKPOINT_FORMAT_VERSION = 1


class DimensionError(ValueError):
    """Input shape incompatible with the layer or model it was fed to."""


def as_feature_vector(values: Sequence[float], dim: Optional[int] = None) -> np.ndarray:
    """Validate and convert one feature vector to a float64 array.

    Raises
    ------
    DimensionError
        If ``dim`` is given and does not match.
    ValueError
        If any entry is non-finite.
    """
    x = np.asarray(values, dtype=np.float64)
    if x.ndim != 1:
        raise DimensionError(f"feature vector must be 1-d, got shape {x.shape}")
    if dim is not None and x.shape[0] != dim:
        raise DimensionError(f"feature vector has dimension {x.shape[0]}, expected {dim}")
    if not np.all(np.isfinite(x)):
        raise ValueError("feature vector contains non-finite entries")
    return x


@dataclass
class AffineLayer:
    """Dense layer computing ``u @ weight + bias``; weight is (n_in, n_out)."""

    weight: np.ndarray
    bias: np.ndarray

    @property
    def n_in(self) -> int:
        return self.weight.shape[0]

    @property
    def n_out(self) -> int:
        return self.weight.shape[1]

    def copy(self) -> "AffineLayer":
        return AffineLayer(self.weight.copy(), self.bias.copy())


@dataclass
class GdnLayer:
    """Divisive normalization: v_i = u_i / sqrt(omega_i + sum_j gamma_ij u_j^2).

    Invariants: omega >= 2^-10 entrywise, gamma symmetric and >= 2^-10
    entrywise. Enforced by :func:`project_gdn`, never assumed silently.
    """

    omega: np.ndarray
    gamma: np.ndarray

    @property
    def dim(self) -> int:
        return self.omega.shape[0]

    def copy(self) -> "GdnLayer":
        return GdnLayer(self.omega.copy(), self.gamma.copy())

    def check(self) -> None:
        if self.gamma.shape != (self.dim, self.dim):
            raise DimensionError("gamma must be square with the omega dimension")
        if not (np.all(np.isfinite(self.omega)) and np.all(np.isfinite(self.gamma))):
            raise ValueError("GDN parameters must be finite")
        if np.any(self.omega < GDN_FLOOR) or np.any(self.gamma < GDN_FLOOR):
            raise ValueError(f"GDN parameters must be >= 2^-10 ({GDN_FLOOR})")
        if not np.array_equal(self.gamma, self.gamma.T):
            raise ValueError("gamma must be symmetric")


Layer = Union[AffineLayer, GdnLayer]


@dataclass
class ModelParams:
    """Full parameter set of the scorer: affine/GDN layers, final affine to a scalar."""

    layers: list = field(default_factory=list)
    annotators: Optional["object"] = None  # AnnotatorReliability, attached during pre-training

    @property
    def input_dim(self) -> int:
        return self.layers[0].n_in

    def copy(self) -> "ModelParams":
        ann = self.annotators.copy() if self.annotators is not None else None
        return ModelParams([layer.copy() for layer in self.layers], ann)

    def num_parameters(self) -> int:
        total = 0
        for layer in self.layers:
            if isinstance(layer, AffineLayer):
                total += layer.weight.size + layer.bias.size
            else:
                total += layer.omega.size + layer.gamma.size
        return total


def project_gdn(layer: GdnLayer) -> GdnLayer:
    """Project GDN parameters onto their constraint set, in place.

    gamma is symmetrized by averaging with its transpose, then both omega and
    gamma are clipped entrywise to the 2^-10 lower bound. Idempotent.
    """
    layer.gamma = 0.5 * (layer.gamma + layer.gamma.T)
    np.maximum(layer.gamma, GDN_FLOOR, out=layer.gamma)
    np.maximum(layer.omega, GDN_FLOOR, out=layer.omega)
    return layer


def project_params(params: ModelParams) -> ModelParams:
    for layer in params.layers:
        if isinstance(layer, GdnLayer):
            project_gdn(layer)
    return params


def gdn_forward(layer: GdnLayer, u: np.ndarray) -> np.ndarray:
    """Apply divisive normalization to ``u`` (a vector or an (N, c) batch)."""
    u = np.asarray(u, dtype=np.float64)
    if u.shape[-1] != layer.dim:
        raise DimensionError(f"GDN input has dimension {u.shape[-1]}, layer expects {layer.dim}")
    pooled = layer.omega + np.square(u) @ layer.gamma.T
    return u / np.sqrt(pooled)


def gdn_backward(
    layer: GdnLayer, u: np.ndarray, grad_v: np.ndarray
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Gradients of a scalar objective through :func:`gdn_forward`.

    Returns ``(grad_u, grad_omega, grad_gamma)`` summed over the batch.
    grad_gamma is symmetrized: off-diagonal entries carry the sum of the two
    tied partials, matching a finite difference that perturbs gamma_ij and
    gamma_ji together.
    """
    u = np.atleast_2d(np.asarray(u, dtype=np.float64))
    grad_v = np.atleast_2d(np.asarray(grad_v, dtype=np.float64))
    if u.shape != grad_v.shape or u.shape[-1] != layer.dim:
        raise DimensionError("gdn_backward: inconsistent shapes")
    pooled = layer.omega + np.square(u) @ layer.gamma.T  # (N, c)
    inv_sqrt = 1.0 / np.sqrt(pooled)
    inv_32 = inv_sqrt / pooled  # pooled^{-3/2}

    # h_i = g_i * u_i * pooled_i^{-3/2} shows up in every parameter gradient
    h = grad_v * u * inv_32

    grad_u = grad_v * inv_sqrt - u * (h @ layer.gamma)
    grad_omega = -0.5 * h.sum(axis=0)
    raw = -0.5 * h.T @ np.square(u)  # raw[m, n] = d/d gamma_mn, entries independent
    grad_gamma = raw + raw.T
    np.fill_diagonal(grad_gamma, np.diag(raw))

    if grad_u.shape != np.shape(grad_v):
        grad_u = grad_u.reshape(np.shape(grad_v))
    return grad_u, grad_omega, grad_gamma


def forward_trace(params: ModelParams, x: np.ndarray) -> tuple[np.ndarray, list]:
    """Run the stack on an (N, d) batch, keeping every layer input for backprop."""
    u = np.atleast_2d(np.asarray(x, dtype=np.float64))
    if u.shape[1] != params.input_dim:
        raise DimensionError(f"input dimension {u.shape[1]}, model expects {params.input_dim}")
    inputs = []
    for layer in params.layers:
        inputs.append(u)
        if isinstance(layer, AffineLayer):
            u = u @ layer.weight + layer.bias
        else:
            u = gdn_forward(layer, u)
    return u[:, 0], inputs


def score_batch(params: ModelParams, x: np.ndarray) -> np.ndarray:
    """Scores for an (N, d) batch of feature vectors."""
    out, _ = forward_trace(params, x)
    return out


def score(params: ModelParams, x: Sequence[float]) -> float:
    """Quality score of a single feature vector."""
    vec = as_feature_vector(x, params.input_dim)
    return float(score_batch(params, vec[None, :])[0])


@dataclass
class GradientRecord:
    """Parameter gradients mirroring the layer structure of ModelParams.

    ``layers[i]`` is ``(grad_weight, grad_bias)`` for affine layers and
    ``(grad_omega, grad_gamma)`` for GDN layers.
    """

    layers: list

    def __add__(self, other: "GradientRecord") -> "GradientRecord":
        return GradientRecord(
            [(a0 + b0, a1 + b1) for (a0, a1), (b0, b1) in zip(self.layers, other.layers)]
        )

    def scaled(self, factor: float) -> "GradientRecord":
        return GradientRecord([(a * factor, b * factor) for a, b in self.layers])

    def all_finite(self) -> bool:
        return all(np.all(np.isfinite(a)) and np.all(np.isfinite(b)) for a, b in self.layers)


def zero_gradients(params: ModelParams) -> GradientRecord:
    grads = []
    for layer in params.layers:
        if isinstance(layer, AffineLayer):
            grads.append((np.zeros_like(layer.weight), np.zeros_like(layer.bias)))
        else:
            grads.append((np.zeros_like(layer.omega), np.zeros_like(layer.gamma)))
    return GradientRecord(grads)


def score_backward(
    params: ModelParams, x: np.ndarray, grad_out: Union[float, np.ndarray]
) -> GradientRecord:
    """Gradient of ``sum_i grad_out_i * f(x_i)`` with respect to all parameters.

    ``x`` may be a single feature vector or an (N, d) batch with matching
    ``grad_out`` scalars.
    """
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    g = np.broadcast_to(np.asarray(grad_out, dtype=np.float64).reshape(-1, 1), (x.shape[0], 1))
    _, inputs = forward_trace(params, x)

    grads: list = [None] * len(params.layers)
    upstream = np.array(g, dtype=np.float64)
    for idx in range(len(params.layers) - 1, -1, -1):
        layer = params.layers[idx]
        u = inputs[idx]
        if isinstance(layer, AffineLayer):
            grads[idx] = (u.T @ upstream, upstream.sum(axis=0))
            upstream = upstream @ layer.weight.T
        else:
            upstream, g_omega, g_gamma = gdn_backward(layer, u, upstream)
            grads[idx] = (g_omega, g_gamma)
    return GradientRecord(grads)


def init_params(seed: int, dims: Sequence[int]) -> ModelParams:
    """Seeded initialization for a stack described by layer sizes ``dims``.

    Every affine except the last is followed by a GDN of its output width.
    Affine weights are zero-mean normal scaled by 1/sqrt(fan_in); biases are
    zero. GDN starts at omega = 1 and gamma = 2^-10 * I plus a small
    symmetric jitter, then projected.
    """
    dims = list(dims)
    if len(dims) < 2:
        raise ValueError("dims must name at least an input and an output size")
    rng = np.random.default_rng(seed)
    layers: list = []
    for i in range(len(dims) - 1):
        n_in, n_out = dims[i], dims[i + 1]
        weight = rng.normal(0.0, 1.0 / np.sqrt(n_in), size=(n_in, n_out))
        layers.append(AffineLayer(weight, np.zeros(n_out)))
        if i < len(dims) - 2:
            jitter = rng.uniform(0.0, GDN_FLOOR, size=(n_out, n_out))
            gamma = GDN_FLOOR * np.eye(n_out) + 0.5 * (jitter + jitter.T)
            layers.append(project_gdn(GdnLayer(np.ones(n_out), gamma)))
    return ModelParams(layers)


# --- checkpoint serialization -------------------------------------------------
#
# Self-describing JSON with explicit shapes and a format version. Python's
# float repr round-trips IEEE doubles exactly, so load(dump(p)) is
# bit-identical.


def _array_doc(arr: np.ndarray) -> dict:
    return {"shape": list(arr.shape), "data": arr.ravel().tolist()}


def _array_from_doc(doc: dict) -> np.ndarray:
    return np.array(doc["data"], dtype=np.float64).reshape(doc["shape"])


def params_to_doc(params: ModelParams) -> dict:
    layers = []
    for layer in params.layers:
        if isinstance(layer, AffineLayer):
            layers.append(
                {"type": "affine", "weight": _array_doc(layer.weight), "bias": _array_doc(layer.bias)}
            )
        else:
            layers.append(
                {"type": "gdn", "omega": _array_doc(layer.omega), "gamma": _array_doc(layer.gamma)}
            )
    doc = {"layers": layers}
    if params.annotators is not None:
        doc["annotators"] = {
            "alpha_logit": _array_doc(params.annotators.alpha_logit),
            "beta_logit": _array_doc(params.annotators.beta_logit),
        }
    return doc


def params_from_doc(doc: dict) -> ModelParams:
    from .objectives import AnnotatorReliability

    layers: list = []
    for entry in doc["layers"]:
        if entry["type"] == "affine":
            layers.append(AffineLayer(_array_from_doc(entry["weight"]), _array_from_doc(entry["bias"])))
        elif entry["type"] == "gdn":
            layers.append(GdnLayer(_array_from_doc(entry["omega"]), _array_from_doc(entry["gamma"])))
        else:
            raise ValueError(f"unknown layer type {entry['type']!r}")
    annotators = None
    if doc.get("annotators") is not None:
        annotators = AnnotatorReliability(
            _array_from_doc(doc["annotators"]["alpha_logit"]),
            _array_from_doc(doc["annotators"]["beta_logit"]),
        )
    return ModelParams(layers, annotators)


@dataclass
class Checkpoint:
    """Scorer parameters plus the bookkeeping needed to resume a run."""

    params: ModelParams
    round_index: int = 0
    step_count: int = 0
    seed: int = 0
    created: str = ""

    def dumps(self) -> str:
        doc = {
            "format_version": CHECKPOINT_FORMAT_VERSION,
            "kind": "gmadloop-checkpoint",
            "metadata": {
                "round_index": self.round_index,
                "step_count": self.step_count,
                "seed": self.seed,
                "created": self.created,
            },
            "params": params_to_doc(self.params),
        }
        return json.dumps(doc, indent=1)

    @classmethod
    def loads(cls, text: str) -> "Checkpoint":
        doc = json.loads(text)
        if doc.get("kind") != "gmadloop-checkpoint":
            raise ValueError("not a checkpoint document")
        if doc.get("format_version") != CHECKPOINT_FORMAT_VERSION:
            raise ValueError(f"unsupported checkpoint format version {doc.get('format_version')}")
        meta = doc["metadata"]
        return cls(
            params=params_from_doc(doc["params"]),
            round_index=meta["round_index"],
            step_count=meta["step_count"],
            seed=meta["seed"],
            created=meta["created"],
        )

    def save(self, path) -> None:
        from pathlib import Path

        Path(path).parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w") as fh:
            fh.write(self.dumps())

    @classmethod
    def load(cls, path) -> "Checkpoint":
        with open(path) as fh:
            return cls.loads(fh.read())


def iter_param_arrays(params: ModelParams, include_annotators: bool = True) -> Iterator[tuple[str, np.ndarray, bool]]:
    """Yield (name, array, is_shallow) for every trainable array.

    The first affine + GDN block counts as shallow for the split learning
    rate used in active fine-tuning rounds.
    """
    shallow_cutoff = 2  # first affine and the GDN that follows it
    for i, layer in enumerate(params.layers):
        shallow = i < shallow_cutoff
        if isinstance(layer, AffineLayer):
            yield f"layer{i}.weight", layer.weight, shallow
            yield f"layer{i}.bias", layer.bias, shallow
        else:
            yield f"layer{i}.omega", layer.omega, shallow
            yield f"layer{i}.gamma", layer.gamma, shallow
    if include_annotators and params.annotators is not None:
        yield "annotators.alpha_logit", params.annotators.alpha_logit, False
        yield "annotators.beta_logit", params.annotators.beta_logit, False


def iter_grad_arrays(params: ModelParams, grads: GradientRecord) -> Iterator[np.ndarray]:
    for (a, b) in grads.layers:
        yield a
        yield b
