"""Dense layered network with enumerable per-layer weights.

This is the trainable object every protocol manipulates.  Parameters live
in one flat float64 vector; layer ``l`` occupies the contiguous block
``theta[offsets[l]:offsets[l+1]]`` laid out as the weight matrix
(``output_dim x input_dim``, row-major) followed by the bias vector.  That
block is exactly what ``flat_layer`` returns and what the aggregation,
distance, and cost code slice.

The forward pass applies each layer's activation (ReLU or identity) and
always ends with a softmax normalization of the final layer's output; a
``softmax`` activation marks that normalization and is only legal on the
last layer.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field

import numpy as np

from .backend import kernels
from .errors import ConfigurationError, InputError

log = logging.getLogger(__name__)

ACTIVATIONS = ("relu", "softmax", "identity")


@dataclass(frozen=True)
class LayerSpec:
    input_dim: int
    output_dim: int
    activation: str = "relu"

    def __post_init__(self):
        if self.input_dim < 1 or self.output_dim < 1:
            raise ConfigurationError(
                f"layer dims must be >= 1, got {self.input_dim}x{self.output_dim}"
            )
        if self.activation not in ACTIVATIONS:
            raise ConfigurationError(f"unknown activation {self.activation!r}")

    @property
    def block_length(self) -> int:
        """Flat length of this layer's weights-plus-bias block."""
        return self.output_dim * self.input_dim + self.output_dim


def validate_specs(specs) -> tuple[LayerSpec, ...]:
    specs = tuple(specs)
    if not specs:
        raise ConfigurationError("model needs at least one layer")
    for l in range(1, len(specs)):
        if specs[l].input_dim != specs[l - 1].output_dim:
            raise ConfigurationError(
                f"dimension chain broken at layer {l}: "
                f"{specs[l - 1].output_dim} -> {specs[l].input_dim}"
            )
    for l, s in enumerate(specs):
        if s.activation == "softmax" and l != len(specs) - 1:
            raise ConfigurationError("softmax is only allowed on the final layer")
    return specs


class ModelParams:
    """Flat parameter vector plus the layer structure describing it."""

    def __init__(self, specs, theta: np.ndarray):
        self.specs = validate_specs(specs)
        offsets = np.zeros(len(self.specs) + 1, dtype=np.int64)
        for l, s in enumerate(self.specs):
            offsets[l + 1] = offsets[l] + s.block_length
        theta = np.ascontiguousarray(theta, dtype=np.float64)
        if theta.shape != (offsets[-1],):
            raise ConfigurationError(
                f"theta has length {theta.shape}, structure wants ({offsets[-1]},)"
            )
        self.theta = theta
        self.offsets = offsets
        self.in_dims = np.array([s.input_dim for s in self.specs], dtype=np.int64)
        self.out_dims = np.array([s.output_dim for s in self.specs], dtype=np.int64)
        self.relu_mask = np.array(
            [1 if s.activation == "relu" else 0 for s in self.specs], dtype=np.int64
        )

    @property
    def n_layers(self) -> int:
        return len(self.specs)

    @property
    def n_params(self) -> int:
        return int(self.offsets[-1])

    @property
    def input_dim(self) -> int:
        return self.specs[0].input_dim

    @property
    def n_classes(self) -> int:
        return self.specs[-1].output_dim

    def block_lengths(self) -> list[int]:
        return [s.block_length for s in self.specs]

    def flat_layer(self, l: int) -> np.ndarray:
        """Copy of layer ``l``'s block: row-major weights then bias."""
        return self.theta[self.offsets[l] : self.offsets[l + 1]].copy()

    def set_flat_layer(self, l: int, flat: np.ndarray) -> None:
        if flat.shape != (self.specs[l].block_length,):
            raise InputError(f"flat block for layer {l} has wrong length")
        self.theta[self.offsets[l] : self.offsets[l + 1]] = flat

    def weights(self, l: int) -> np.ndarray:
        s = self.specs[l]
        o = self.offsets[l]
        return self.theta[o : o + s.output_dim * s.input_dim].reshape(
            s.output_dim, s.input_dim
        )

    def bias(self, l: int) -> np.ndarray:
        s = self.specs[l]
        o = self.offsets[l] + s.output_dim * s.input_dim
        return self.theta[o : o + s.output_dim]

    def same_structure(self, other: "ModelParams") -> bool:
        return self.specs == other.specs

    def copy(self) -> "ModelParams":
        return ModelParams(self.specs, self.theta.copy())

    # -- checkpoint form: layer dims header + row-major weight list --

    def to_dict(self) -> dict:
        return {
            "layers": [
                {"input_dim": s.input_dim, "output_dim": s.output_dim,
                 "activation": s.activation}
                for s in self.specs
            ],
            "params": self.theta.tolist(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ModelParams":
        specs = [
            LayerSpec(x["input_dim"], x["output_dim"], x["activation"])
            for x in d["layers"]
        ]
        return cls(specs, np.asarray(d["params"], dtype=np.float64))

    def save(self, path) -> None:
        with open(path, "w") as f:
            json.dump(self.to_dict(), f)

    @classmethod
    def load(cls, path) -> "ModelParams":
        with open(path) as f:
            return cls.from_dict(json.load(f))


@dataclass
class TrainConfig:
    learning_rate: float = 1e-4
    batch_size: int = 32
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_epsilon: float = 1e-8
    seed: int = 0

    def __post_init__(self):
        if self.learning_rate <= 0:
            raise ConfigurationError("learning_rate must be > 0")
        if not (0 < self.adam_beta1 < 1 and 0 < self.adam_beta2 < 1):
            raise ConfigurationError("adam betas must lie in (0, 1)")
        if self.batch_size < 1:
            raise ConfigurationError("batch_size must be >= 1")


@dataclass
class Batch:
    """A batch of flat feature vectors with integer class labels."""

    x: np.ndarray
    y: np.ndarray

    def __post_init__(self):
        self.x = np.ascontiguousarray(self.x, dtype=np.float64)
        self.y = np.ascontiguousarray(self.y, dtype=np.int64)
        if self.x.ndim != 2 or self.y.ndim != 1 or self.x.shape[0] != self.y.shape[0]:
            raise InputError("features and labels must align (n, d) with (n,)")

    def __len__(self) -> int:
        return self.x.shape[0]

    @classmethod
    def empty(cls, dim: int) -> "Batch":
        return cls(np.zeros((0, dim)), np.zeros((0,), dtype=np.int64))


@dataclass
class AdamState:
    m: np.ndarray
    v: np.ndarray
    step: int = 0

    @classmethod
    def zeros(cls, n_params: int) -> "AdamState":
        return cls(np.zeros(n_params), np.zeros(n_params))

    def reset(self) -> None:
        self.m[:] = 0.0
        self.v[:] = 0.0
        self.step = 0


@dataclass
class ClientState:
    """One simulated participant: data shard, model, optimizer, history."""

    client_id: int
    train: Batch
    test: Batch
    model: ModelParams
    adam: AdamState
    rng: np.random.Generator
    loss_history: list = field(default_factory=list)
    acc_history: list = field(default_factory=list)
    events: list = field(default_factory=list)


def init_model(specs, seed: int) -> ModelParams:
    """Glorot-uniform weights (+-sqrt(6/(fan_in+fan_out))), zero biases.

    Same (specs, seed) always yields bit-identical parameters.
    """
    specs = validate_specs(specs)
    rng = np.random.default_rng(seed)
    blocks = []
    for s in specs:
        limit = np.sqrt(6.0 / (s.input_dim + s.output_dim))
        w = rng.uniform(-limit, limit, size=(s.output_dim, s.input_dim))
        blocks.append(w.ravel())
        blocks.append(np.zeros(s.output_dim))
    return ModelParams(specs, np.concatenate(blocks))


def forward(m: ModelParams, x: np.ndarray) -> np.ndarray:
    """Probability vector for one input."""
    x = np.asarray(x, dtype=np.float64)
    if x.shape != (m.input_dim,):
        raise InputError(f"input has shape {x.shape}, model wants ({m.input_dim},)")
    probs = kernels.forward_batch(
        m.theta, m.in_dims, m.out_dims, m.offsets, m.relu_mask,
        np.ascontiguousarray(x[None, :]),
    )
    return probs[0]


def forward_batch(m: ModelParams, x: np.ndarray) -> np.ndarray:
    x = np.ascontiguousarray(x, dtype=np.float64)
    if x.ndim != 2 or x.shape[1] != m.input_dim:
        raise InputError(f"batch features have shape {x.shape}, model wants (*, {m.input_dim})")
    return kernels.forward_batch(
        m.theta, m.in_dims, m.out_dims, m.offsets, m.relu_mask, x
    )


def loss_and_grads(m: ModelParams, b: Batch) -> tuple[float, ModelParams]:
    """Mean cross-entropy over the batch and ModelParams-shaped gradients."""
    if len(b) == 0:
        raise InputError("batch is empty")
    if b.x.shape[1] != m.input_dim:
        raise InputError("batch feature dimension does not match model")
    loss, grad = kernels.loss_grads_batch(
        m.theta, m.in_dims, m.out_dims, m.offsets, m.relu_mask, b.x, b.y
    )
    return loss, ModelParams(m.specs, grad)


def adam_step(m: ModelParams, grads: ModelParams, state: AdamState,
              cfg: TrainConfig) -> tuple[ModelParams, AdamState]:
    """Standard bias-corrected Adam update, in place; advances the state."""
    if not m.same_structure(grads):
        raise InputError("gradient structure does not match model")
    if state.m.shape != m.theta.shape:
        raise InputError("optimizer state does not match model size")
    state.step += 1
    kernels.adam_update(
        m.theta, grads.theta, state.m, state.v, state.step,
        cfg.learning_rate, cfg.adam_beta1, cfg.adam_beta2, cfg.adam_epsilon,
    )
    return m, state


def evaluate(m: ModelParams, b: Batch) -> float:
    """Fraction of argmax-correct predictions; argmax ties go to the lowest class."""
    if len(b) == 0:
        raise InputError("batch is empty")
    probs = forward_batch(m, b.x)
    pred = np.argmax(probs, axis=1)
    return float(np.mean(pred == b.y))


def train_episodes(c: ClientState, n_episodes: int, cfg: TrainConfig) -> ClientState:
    """Run full passes over the client's train shard, recording loss/accuracy.

    Each episode shuffles the shard with the client's own generator, then
    steps Adam batch by batch.  An empty shard is skipped with a recorded
    warning event rather than an error.
    """
    if n_episodes < 0:
        raise InputError("n_episodes must be >= 0")
    n = len(c.train)
    if n == 0:
        msg = f"client {c.client_id} has no training data; skipped"
        log.warning(msg)
        c.events.append(msg)
        return c
    m, st = c.model, c.adam
    for _ in range(n_episodes):
        order = c.rng.permutation(n)
        losses = []
        for start in range(0, n, cfg.batch_size):
            idx = order[start : start + cfg.batch_size]
            loss, grad = kernels.loss_grads_batch(
                m.theta, m.in_dims, m.out_dims, m.offsets, m.relu_mask,
                c.train.x[idx], c.train.y[idx],
            )
            st.step += 1
            kernels.adam_update(
                m.theta, grad, st.m, st.v, st.step,
                cfg.learning_rate, cfg.adam_beta1, cfg.adam_beta2,
                cfg.adam_epsilon,
            )
            losses.append(loss)
        c.loss_history.append(float(np.mean(losses)))
        c.acc_history.append(
            evaluate(c.model, c.test) if len(c.test) else float("nan")
        )
    return c
