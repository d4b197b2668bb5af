"""Regularized empirical-risk training by plain minibatch SGD.

The loss is the mean squared coordinate error over a batch plus an optional
parameter penalty (Tikhonov or L1 on weights; biases are never penalized).
Gradients come from exact reverse-mode differentiation through the dense and
space-time convolution layers; the update is theta <- theta - lr * grad with
no momentum or schedule.

The train loop runs on raw parameter arrays (dataclass construction and
invariant checks happen once at the boundaries, not per step); the public
`loss_and_gradients` / `sgd_step` operations share the same forward/backward
kernels.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.linalg.blas import daxpy

from .errors import InvalidArgumentError, NumericError
from .network import (
    IDENTITY,
    RELU,
    SIGMOID,
    DenseLayer,
    NetworkModel,
    SpaceTimeConvLayer,
    _apply_activation,
    _conv_windows,
    with_parameters,
)
from .rng import derive_seed, make_rng
from .signals import LabeledDataset

REG_NONE, REG_TIKHONOV, REG_L1 = "none", "tikhonov", "l1"
_HISTORY_EVERY = 100


@dataclass(frozen=True)
class TrainingConfig:
    """Hyperparameters for one training run."""

    steps: int
    learning_rate: float = 0.001
    batch_size: int = 32
    loss: str = "mse"
    reg_type: str = REG_NONE
    reg_weight: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if self.learning_rate <= 0:
            raise InvalidArgumentError("learning_rate must be positive")
        if self.batch_size < 1:
            raise InvalidArgumentError("batch_size must be >= 1")
        if self.steps < 0:
            raise InvalidArgumentError("steps must be >= 0")
        if self.loss != "mse":
            raise InvalidArgumentError("only mean-squared-error loss is supported")
        if self.reg_type not in (REG_NONE, REG_TIKHONOV, REG_L1):
            raise InvalidArgumentError(f"unknown regularizer {self.reg_type!r}")
        if self.reg_weight < 0:
            raise InvalidArgumentError("reg_weight must be >= 0")


class _RawLayer:
    """Mutable parameter holder for the inner training loop."""

    __slots__ = (
        "is_conv", "w", "b", "activation", "center", "n_filters", "n_taps", "kernel_shape"
    )

    def __init__(self, layer):
        if isinstance(layer, SpaceTimeConvLayer):
            self.is_conv = True
            self.kernel_shape = layer.kernels.shape
            self.w = layer.kernels.reshape(layer.n_filters, -1).copy()
            self.b = layer.biases.copy()
            self.activation = IDENTITY
            self.center = 0.0
            self.n_filters = layer.n_filters
            self.n_taps = layer.n_taps
        else:
            self.is_conv = False
            self.kernel_shape = None
            self.w = layer.weights.copy()
            self.b = layer.biases.copy()
            self.activation = layer.activation
            self.center = layer.center

    def to_layer(self):
        if self.is_conv:
            return SpaceTimeConvLayer(kernels=self.w.reshape(self.kernel_shape), biases=self.b)
        return DenseLayer(
            weights=self.w, biases=self.b, activation=self.activation, center=self.center
        )


def _extract_raw(model: NetworkModel) -> list:
    return [_RawLayer(layer) for layer in model.layers]


def _batch_input(model: NetworkModel, batch_inputs: np.ndarray) -> np.ndarray:
    x = np.asarray(batch_inputs, dtype=np.float64)
    if model.has_conv:
        if x.ndim != 3 or x.shape[1:] != model.input_shape:
            raise InvalidArgumentError(
                f"expected batch of {model.input_shape} inputs, got {x.shape}"
            )
        return x
    m = model.input_shape[0]
    if x.ndim == 3 and x.shape[1:] == (m, 1):
        x = x[:, :, 0]
    if x.ndim != 2 or x.shape[1] != m:
        raise InvalidArgumentError(f"expected batch of length-{m} snapshots, got {x.shape}")
    return x


def _forward_raw(raw: list, x: np.ndarray, model: NetworkModel):
    """Batched forward pass keeping the caches backprop needs."""
    if model.normalize_input:
        from .network import _unit_rms_rows

        x = _unit_rms_rows(x)
    x = x / model.input_scale
    caches = []
    for index, layer in enumerate(raw):
        if layer.is_conv:
            win = _conv_windows(x, layer.n_taps)  # (B, F, M*T)
            feat = win @ layer.w.T
            feat += layer.b
            # (B, F, L) -> (B, L, F) -> flatten filter-major
            h = np.ascontiguousarray(np.swapaxes(feat, 1, 2)).reshape(x.shape[0], -1)
            caches.append({"windows": win})
        else:
            centered = x - layer.center if layer.center != 0.0 else x
            z = centered @ layer.w.T + layer.b
            h = _apply_activation(layer.activation, z)
            cache = {"input": centered, "output": h}
            if layer.activation == RELU:
                cache["z"] = z
            caches.append(cache)
        if not np.all(np.isfinite(h)):
            raise NumericError(f"non-finite activations in layer {index}")
        x = h
    if model.output_scale != 1.0:
        x = x * model.output_scale
    return caches, x


def _backward_raw(raw: list, caches: list, upstream: np.ndarray, buffers=None) -> list:
    """Gradients of the data loss; `upstream` is dLoss/dOutput.

    `buffers` optionally supplies preallocated weight-gradient arrays (the
    train loop reuses them across steps; writing a fresh tens-of-MB output
    per step is dominated by page faults otherwise).
    """
    grads: list = [None] * len(raw)
    for i in range(len(raw) - 1, -1, -1):
        layer = raw[i]
        out = None if buffers is None else buffers[i]
        if layer.is_conv:
            win = caches[i]["windows"]
            batch, n_frames = win.shape[0], win.shape[1]
            dfeat = upstream.reshape(batch, layer.n_filters, n_frames)
            # (L, B*F) @ (B*F, M*T) — the frame axis joins the batch axis
            gw = np.matmul(
                np.ascontiguousarray(np.swapaxes(dfeat, 0, 1)).reshape(layer.n_filters, -1),
                win.reshape(batch * n_frames, -1),
                out=out,
            )
            grads[i] = (gw, dfeat.sum(axis=(0, 2)))
        else:
            cache = caches[i]
            if layer.activation == SIGMOID:
                h = cache["output"]
                dz = upstream * h * (1.0 - h)
            elif layer.activation == RELU:
                dz = upstream * (cache["z"] > 0.0)
            else:
                dz = upstream
            gw = np.matmul(dz.T, cache["input"], out=out)
            grads[i] = (gw, dz.sum(axis=0))
            if i > 0:  # the model input needs no gradient
                upstream = dz @ layer.w
    return grads


def _penalty(raw: list, reg_type: str):
    """Penalty value and weight gradients (biases excluded)."""
    if reg_type == REG_TIKHONOV:
        return (
            sum(float(np.sum(layer.w * layer.w)) for layer in raw),
            [2.0 * layer.w for layer in raw],
        )
    if reg_type == REG_L1:
        return (
            sum(float(np.sum(np.abs(layer.w))) for layer in raw),
            [np.sign(layer.w) for layer in raw],
        )
    return 0.0, [None] * len(raw)


def _loss_and_grads_raw(raw, x, targets, model, reg_type, reg_weight, buffers=None):
    caches, out = _forward_raw(raw, x, model)
    diff = out - targets
    loss = float(np.mean(diff * diff))
    upstream = (2.0 * model.output_scale / diff.size) * diff
    grads = _backward_raw(raw, caches, upstream, buffers)
    if reg_type != REG_NONE and reg_weight != 0.0:
        value, reg_grads = _penalty(raw, reg_type)
        loss += reg_weight * value
        for i, rg in enumerate(reg_grads):
            gw, gb = grads[i]
            grads[i] = (gw + reg_weight * rg, gb)
    return loss, grads


def _check_targets(model: NetworkModel, x: np.ndarray, batch_targets) -> np.ndarray:
    t = np.asarray(batch_targets, dtype=np.float64)
    if t.ndim == 3:
        t = t.reshape(t.shape[0], -1)
    if x.shape[0] == 0:
        raise InvalidArgumentError("batch must be nonempty")
    if t.shape != (x.shape[0], model.output_dim):
        raise InvalidArgumentError(
            f"targets must have shape ({x.shape[0]}, {model.output_dim})"
        )
    return t


def loss_and_gradients(
    model: NetworkModel,
    batch_inputs: np.ndarray,
    batch_targets: np.ndarray,
    config: TrainingConfig,
):
    """Regularized batch loss and exact gradients for every parameter.

    Args:
        model: network to differentiate.
        batch_inputs: (B, M) snapshots or (B, M, N) time series.
        batch_targets: (B, 3Q) coordinates, or (B, Q, 3) flattened row-major.
        config: supplies the regularizer; the data term is always MSE.

    Returns:
        (loss, gradients): gradients is a list of (weight_grad, bias_grad)
        pairs aligned with model.layers; conv layers get kernel-shaped
        gradients.
    """
    x = _batch_input(model, batch_inputs)
    t = _check_targets(model, x, batch_targets)
    raw = _extract_raw(model)
    loss, grads = _loss_and_grads_raw(
        raw, x, t, model, config.reg_type, config.reg_weight
    )
    shaped = []
    for layer, (gw, gb) in zip(raw, grads):
        shaped.append((gw.reshape(layer.kernel_shape), gb) if layer.is_conv else (gw, gb))
    return loss, shaped


def regularization_term(model: NetworkModel, config: TrainingConfig) -> float:
    """The bare penalty R(theta) for the configured regularizer."""
    return _penalty(_extract_raw(model), config.reg_type)[0]


def sgd_step(model: NetworkModel, gradients, learning_rate: float) -> NetworkModel:
    """One descent update; returns a new model, the input stays unchanged."""
    if learning_rate < 0:
        raise InvalidArgumentError("learning_rate must be >= 0")
    new_layers = []
    for layer, (gw, gb) in zip(model.layers, gradients):
        if isinstance(layer, SpaceTimeConvLayer):
            if gw.shape != layer.kernels.shape or gb.shape != layer.biases.shape:
                raise InvalidArgumentError("gradient shapes do not match the conv layer")
            new_layers.append(
                SpaceTimeConvLayer(
                    kernels=layer.kernels - learning_rate * gw,
                    biases=layer.biases - learning_rate * gb,
                )
            )
        else:
            if gw.shape != layer.weights.shape or gb.shape != layer.biases.shape:
                raise InvalidArgumentError("gradient shapes do not match the dense layer")
            new_layers.append(
                DenseLayer(
                    weights=layer.weights - learning_rate * gw,
                    biases=layer.biases - learning_rate * gb,
                    activation=layer.activation,
                )
            )
    return with_parameters(model, new_layers)


def _materialized_batches(dataset: LabeledDataset, batch_size: int, seed: int):
    """Endless deterministic batches: reshuffle per epoch with derived seeds."""
    count = len(dataset)
    if count < batch_size:
        raise InvalidArgumentError(
            f"dataset has {count} examples, smaller than one batch of {batch_size}"
        )
    inputs = np.stack(dataset.inputs)
    targets = np.stack(dataset.targets)
    epoch = 0
    while True:
        order = make_rng(derive_seed(seed, "shuffle", epoch)).permutation(count)
        for start in range(0, count - batch_size + 1, batch_size):
            sel = order[start : start + batch_size]
            yield inputs[sel], targets[sel]
        epoch += 1


def _cycle_stream(source):
    """Batches from a stream factory (callable) or a one-shot iterable."""
    if callable(source):
        while True:
            yielded = False
            for batch in source():
                yielded = True
                yield batch
            if not yielded:
                raise InvalidArgumentError("example source produced no batches")
    else:
        yield from source
        raise InvalidArgumentError(
            "example source exhausted before training finished; pass a callable "
            "stream factory or a larger dataset"
        )


def train(model: NetworkModel, example_source, config: TrainingConfig):
    """Run config.steps minibatch SGD steps from a dataset or stream.

    Args:
        model: initial parameters (not modified).
        example_source: a LabeledDataset (shuffled per epoch with seeds
            derived from config.seed), a zero-argument callable returning a
            fresh batch iterator (restarted when exhausted), or a one-shot
            iterable of (inputs, targets) batches.
        config: hyperparameters; the loss on every 100th step's batch is
            recorded as (step, loss, reg_term).

    Returns:
        (trained model, history list).
    """
    if isinstance(example_source, LabeledDataset):
        batches = _materialized_batches(example_source, config.batch_size, config.seed)
    else:
        batches = _cycle_stream(example_source)

    raw = _extract_raw(model)
    buffers = [np.empty_like(layer.w) for layer in raw]
    history = []
    for step in range(1, config.steps + 1):
        batch_inputs, batch_targets = next(batches)
        x = _batch_input(model, batch_inputs)
        t = _check_targets(model, x, batch_targets)
        try:
            loss, grads = _loss_and_grads_raw(
                raw, x, t, model, config.reg_type, config.reg_weight, buffers
            )
        except NumericError as exc:
            raise NumericError(f"step {step}: {exc}") from exc
        record = step % _HISTORY_EVERY == 0
        if record:
            reg_term = _penalty(raw, config.reg_type)[0]
        for layer, (gw, gb) in zip(raw, grads):
            # fused in-place y += a*x keeps the update to one memory pass
            daxpy(gw.reshape(-1), layer.w.reshape(-1), a=-config.learning_rate)
            daxpy(gb, layer.b, a=-config.learning_rate)
        if record:
            history.append((step, loss, reg_term))
    if config.steps == 0:
        return model, history
    return with_parameters(model, [layer.to_layer() for layer in raw]), history
