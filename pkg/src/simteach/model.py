"""Framewise acoustic model: context-stacked frames into an MLP.

Each frame is concatenated with its `context` left and right neighbours
(edges padded by repeating the boundary frame), passed through ReLU hidden
layers and an affine output layer, and row-softmaxed into per-frame token
posteriors. Output dimension is vocab_size + 1; index 0 is the blank.

Parameters live in a single flat float64 vector in canonical order: for
each layer in sequence, the weight matrix row-major (out x in), then the
bias. All math is float64 and purely functional; forward/backward never
mutate their inputs.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Sequence

import numpy as np

from .errors import DivergenceError, ShapeError
from .rng import make_rng


def log_softmax(x: np.ndarray) -> np.ndarray:
    """Row-wise log-softmax with max subtraction."""
    shifted = x - x.max(axis=-1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=-1, keepdims=True))


def softmax(x: np.ndarray) -> np.ndarray:
    shifted = x - x.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=-1, keepdims=True)


@dataclass(frozen=True)
class Architecture:
    feature_dim: int
    context: int
    hidden_sizes: tuple[int, ...]
    vocab_size: int

    def __post_init__(self):
        object.__setattr__(self, "hidden_sizes", tuple(int(h) for h in self.hidden_sizes))
        if self.feature_dim < 1 or self.vocab_size < 1 or self.context < 0:
            raise ShapeError(f"invalid architecture: {self}")
        if any(h < 1 for h in self.hidden_sizes):
            raise ShapeError("hidden sizes must all be >= 1")

    @property
    def output_dim(self) -> int:
        return self.vocab_size + 1

    @property
    def input_dim(self) -> int:
        return (2 * self.context + 1) * self.feature_dim

    def layer_dims(self) -> list[tuple[int, int]]:
        """(fan_in, fan_out) for every affine layer, input to output."""
        dims = []
        fan_in = self.input_dim
        for h in self.hidden_sizes:
            dims.append((fan_in, h))
            fan_in = h
        dims.append((fan_in, self.output_dim))
        return dims

    def param_count(self) -> int:
        return sum(i * o + o for i, o in self.layer_dims())


@dataclass(eq=False)
class ParamVector:
    values: np.ndarray
    arch: Architecture

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.values.shape != (self.arch.param_count(),):
            raise ShapeError(
                f"param vector has {self.values.shape} values, architecture needs {self.arch.param_count()}"
            )

    def copy(self) -> "ParamVector":
        return ParamVector(self.values.copy(), self.arch)

    def layers(self) -> list[tuple[np.ndarray, np.ndarray]]:
        """Zero-copy (W, b) views per layer, W shaped (out, in)."""
        out = []
        pos = 0
        for fan_in, fan_out in self.arch.layer_dims():
            w = self.values[pos : pos + fan_in * fan_out].reshape(fan_out, fan_in)
            pos += fan_in * fan_out
            b = self.values[pos : pos + fan_out]
            pos += fan_out
            out.append((w, b))
        return out


@dataclass(eq=False)
class PosteriorGrid:
    rows: np.ndarray  # (T', V) posteriors, rows sum to 1
    logits: np.ndarray  # (T', V) pre-softmax scores


@dataclass(eq=False)
class OptimizerState:
    """Adam moments plus hyperparameters; step counts completed updates."""

    m: np.ndarray
    v: np.ndarray
    step: int
    lr: float
    beta1: float
    beta2: float
    epsilon: float

    @classmethod
    def fresh(cls, n: int, lr: float = 1e-3, beta1: float = 0.9, beta2: float = 0.999, epsilon: float = 1e-8):
        return cls(np.zeros(n), np.zeros(n), 0, lr, beta1, beta2, epsilon)


def init_params(arch: Architecture, seed: int) -> ParamVector:
    """Uniform +-sqrt(6/(fan_in+fan_out)) weights, zero biases."""
    rng = make_rng(seed, "param-init")
    chunks = []
    for fan_in, fan_out in arch.layer_dims():
        bound = np.sqrt(6.0 / (fan_in + fan_out))
        chunks.append(rng.uniform(-bound, bound, size=fan_in * fan_out))
        chunks.append(np.zeros(fan_out))
    return ParamVector(np.concatenate(chunks), arch)


def stack_context(frames: np.ndarray, context: int) -> np.ndarray:
    """Concatenate each frame with its neighbours at offsets -c..+c (edge padded)."""
    if context == 0:
        return frames
    t = frames.shape[0]
    padded = np.pad(frames, ((context, context), (0, 0)), mode="edge")
    return np.concatenate([padded[k : k + t] for k in range(2 * context + 1)], axis=1)


def _check_frames(arch: Architecture, frames: np.ndarray) -> np.ndarray:
    frames = np.asarray(frames, dtype=np.float64)
    if frames.ndim != 2 or frames.shape[1] != arch.feature_dim:
        raise ShapeError(f"frames shape {frames.shape} does not match feature_dim {arch.feature_dim}")
    if frames.shape[0] < 1:
        raise ShapeError("utterance must have at least one frame")
    return frames


def _pipeline(p: ParamVector, frames_list: Sequence[np.ndarray]):
    """Shared forward pass over the concatenation of all utterances.

    Returns (activations, logits, lengths): activations[0] is the stacked
    input, activations[i] the output of hidden layer i, with the ReLU
    pre-activations kept alongside for backprop.
    """
    arch = p.arch
    stacked = [stack_context(_check_frames(arch, f), arch.context) for f in frames_list]
    lengths = [s.shape[0] for s in stacked]
    x = np.vstack(stacked)
    layers = p.layers()
    acts = [x]
    pres = []
    h = x
    for w, b in layers[:-1]:
        pre = h @ w.T + b
        pres.append(pre)
        h = np.maximum(pre, 0.0)
        acts.append(h)
    w_out, b_out = layers[-1]
    logits = h @ w_out.T + b_out
    return acts, pres, logits, lengths


def forward_many(p: ParamVector, frames_list: Sequence[np.ndarray]) -> list[PosteriorGrid]:
    """Posterior grids for several utterances in one fused pass."""
    _, _, logits, lengths = _pipeline(p, frames_list)
    rows = softmax(logits)
    grids = []
    pos = 0
    for n in lengths:
        grids.append(PosteriorGrid(rows[pos : pos + n], logits[pos : pos + n]))
        pos += n
    return grids


def forward(p: ParamVector, frames: np.ndarray) -> PosteriorGrid:
    return forward_many(p, [frames])[0]


def backward_many(
    p: ParamVector, frames_list: Sequence[np.ndarray], grad_logits_list: Sequence[np.ndarray]
) -> np.ndarray:
    """Gradient of sum_u sum_t <grad_logits[u][t], logits[u][t]> w.r.t. the flat params."""
    if len(frames_list) != len(grad_logits_list):
        raise ShapeError("frames and grad_logits lists differ in length")
    acts, pres, logits, lengths = _pipeline(p, frames_list)
    v = p.arch.output_dim
    for g, n in zip(grad_logits_list, lengths):
        g = np.asarray(g)
        if g.shape != (n, v):
            raise ShapeError(f"grad_logits shape {g.shape}, expected {(n, v)}")
    g = np.vstack([np.asarray(gl, dtype=np.float64) for gl in grad_logits_list])

    layers = p.layers()
    grads: list[np.ndarray] = [None] * len(layers)
    upstream = g
    for i in range(len(layers) - 1, -1, -1):
        w, _ = layers[i]
        gw = upstream.T @ acts[i]
        gb = upstream.sum(axis=0)
        grads[i] = np.concatenate([gw.ravel(), gb])
        if i > 0:
            upstream = (upstream @ w) * (pres[i - 1] > 0.0)
    return np.concatenate(grads)


def backward(p: ParamVector, frames: np.ndarray, grad_logits: np.ndarray) -> np.ndarray:
    return backward_many(p, [frames], [grad_logits])


def optimizer_step(p: ParamVector, grad: np.ndarray, state: OptimizerState) -> tuple[ParamVector, OptimizerState]:
    """One Adam update with bias correction; returns fresh (params, state)."""
    grad = np.asarray(grad, dtype=np.float64)
    if grad.shape != p.values.shape:
        raise ShapeError(f"gradient shape {grad.shape} does not match params {p.values.shape}")
    if not np.isfinite(grad).all():
        bad = int(np.count_nonzero(~np.isfinite(grad)))
        raise DivergenceError(f"non-finite gradient entries: {bad} of {grad.size}", step=state.step)
    t = state.step + 1
    m = state.beta1 * state.m + (1.0 - state.beta1) * grad
    v = state.beta2 * state.v + (1.0 - state.beta2) * grad * grad
    m_hat = m / (1.0 - state.beta1**t)
    v_hat = v / (1.0 - state.beta2**t)
    new_values = p.values - state.lr * m_hat / (np.sqrt(v_hat) + state.epsilon)
    new_state = replace(state, m=m, v=v, step=t)
    return ParamVector(new_values, p.arch), new_state
