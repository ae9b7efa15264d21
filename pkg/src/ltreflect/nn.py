"""Minimal dense classifiers: linear or one hidden rectifier layer.

Forward/backward are written out analytically; gradients are exposed as a
single flat vector whose layout follows the layer order (weight then bias
per layer), which is what the conflict-projection step operates on.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DimensionError, NumericError, ParameterError


@dataclass
class ModelParams:
    layers: list[tuple[np.ndarray, np.ndarray]]  # (weight [out, in], bias [out])
    hidden_dim: int  # 0 = linear model

    def __post_init__(self):
        self.layers = [
            (np.asarray(w, dtype=np.float64), np.asarray(b, dtype=np.float64))
            for w, b in self.layers
        ]
        prev_out = None
        for w, b in self.layers:
            if w.ndim != 2 or b.shape != (w.shape[0],):
                raise DimensionError(f"bad layer shapes {w.shape} / {b.shape}")
            if prev_out is not None and w.shape[1] != prev_out:
                raise DimensionError(
                    f"layer input width {w.shape[1]} does not chain from {prev_out}"
                )
            prev_out = w.shape[0]

    @property
    def input_dim(self) -> int:
        return self.layers[0][0].shape[1]

    @property
    def num_classes(self) -> int:
        return self.layers[-1][0].shape[0]

    @property
    def num_params(self) -> int:
        return sum(w.size + b.size for w, b in self.layers)

    def layer_spans(self) -> list[tuple[str, int, int]]:
        """Name and flat-vector extent of every parameter tensor."""
        spans = []
        offset = 0
        for i, (w, b) in enumerate(self.layers):
            spans.append((f"layer{i}.weight", offset, w.size))
            offset += w.size
            spans.append((f"layer{i}.bias", offset, b.size))
            offset += b.size
        return spans


@dataclass
class ForwardRecord:
    inputs: np.ndarray  # [B, D], kept for the backward pass
    features: np.ndarray  # [B, H] penultimate activations (the inputs when linear)
    logits: np.ndarray  # [B, C]


def init_params(
    input_dim: int, num_classes: int, hidden_dim: int, rng: np.random.Generator
) -> ModelParams:
    """Fan-scaled uniform init: U(+-sqrt(6 / (fan_in + fan_out)))."""
    dims = [input_dim, num_classes] if hidden_dim == 0 else [input_dim, hidden_dim, num_classes]
    layers = []
    for fan_in, fan_out in zip(dims[:-1], dims[1:]):
        bound = np.sqrt(6.0 / (fan_in + fan_out))
        w = rng.uniform(-bound, bound, size=(fan_out, fan_in))
        b = rng.uniform(-bound, bound, size=fan_out)
        layers.append((w, b))
    return ModelParams(layers=layers, hidden_dim=hidden_dim)


def forward(params: ModelParams, batch) -> ForwardRecord:
    x = np.asarray(batch, dtype=np.float64)
    if x.ndim != 2:
        raise DimensionError(f"batch must be 2-D [B, D], got shape {x.shape}")
    if x.shape[1] != params.input_dim:
        raise DimensionError(
            f"batch has {x.shape[1]} columns, model expects {params.input_dim}"
        )
    if params.hidden_dim == 0:
        w, b = params.layers[0]
        return ForwardRecord(inputs=x, features=x, logits=x @ w.T + b)
    w0, b0 = params.layers[0]
    w1, b1 = params.layers[1]
    hidden = np.maximum(0.0, x @ w0.T + b0)
    return ForwardRecord(inputs=x, features=hidden, logits=hidden @ w1.T + b1)


def backward(params: ModelParams, record: ForwardRecord, dloss_dlogits) -> np.ndarray:
    """Flat gradient of a scalar loss given its logit-gradient."""
    g = np.asarray(dloss_dlogits, dtype=np.float64)
    if g.shape != record.logits.shape:
        raise DimensionError(
            f"dloss_dlogits shape {g.shape} must match logits {record.logits.shape}"
        )
    if params.hidden_dim == 0:
        grads = [(g.T @ record.inputs, g.sum(axis=0))]
    else:
        w1, _ = params.layers[1]
        hidden = record.features
        d_hidden = (g @ w1) * (hidden > 0)
        grads = [
            (d_hidden.T @ record.inputs, d_hidden.sum(axis=0)),
            (g.T @ hidden, g.sum(axis=0)),
        ]
    return np.concatenate([np.concatenate([dw.ravel(), db]) for dw, db in grads])


def flatten_params(params: ModelParams) -> np.ndarray:
    return np.concatenate([np.concatenate([w.ravel(), b]) for w, b in params.layers])


def set_flat_params(params: ModelParams, flat: np.ndarray) -> None:
    """Inverse of flatten_params; writes in place."""
    vec = np.asarray(flat, dtype=np.float64)
    if vec.shape != (params.num_params,):
        raise DimensionError(
            f"flat vector has length {vec.size}, model has {params.num_params} params"
        )
    offset = 0
    for w, b in params.layers:
        w[...] = vec[offset : offset + w.size].reshape(w.shape)
        offset += w.size
        b[...] = vec[offset : offset + b.size]
        offset += b.size


def sgd_step(
    params: ModelParams,
    grad: np.ndarray,
    lr: float,
    momentum: float,
    velocity: np.ndarray,
) -> tuple[ModelParams, np.ndarray]:
    """Heavy-ball update: v <- momentum*v + g; theta <- theta - lr*v. In place."""
    g = np.asarray(grad, dtype=np.float64)
    if g.shape != (params.num_params,):
        raise DimensionError(
            f"gradient has length {g.size}, model has {params.num_params} params"
        )
    if not (lr > 0):
        raise ParameterError(f"learning rate must be positive, got {lr}")
    if not (0 <= momentum < 1):
        raise ParameterError(f"momentum must be in [0, 1), got {momentum}")
    if not np.isfinite(g).all():
        raise NumericError("gradient contains non-finite entries; step aborted")
    velocity *= momentum
    velocity += g
    set_flat_params(params, flatten_params(params) - lr * velocity)
    return params, velocity
