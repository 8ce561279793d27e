"""Small transducer networks: recurrent encoder, recurrent prediction
network, and a single-hidden-layer joint network.

Cells are plain tanh recurrences so every gradient can be written out by
hand; the penalty/gating/sequence-risk machinery built on top does not
depend on the cell type.  All arrays are float64.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterator, Mapping

import numpy as np

from .errors import ConfigError, TrainingError, UsageError
from .numerics import log_softmax
from .transducer import LogitLattice
from .vocab import blank_id, eos_id


@dataclass(frozen=True)
class ModelConfig:
    input_dim: int = 8
    encoder_layers: int = 1
    encoder_units: int = 24
    encoder_stride: int = 1  # subsampling of encoder outputs; 1 = none
    prediction_layers: int = 1
    prediction_units: int = 16
    joint_units: int = 24
    vocab_size: int = 8  # incl. end-of-speech token, excl. blank
    seed: int = 0

    @property
    def blank_id(self) -> int:
        return blank_id(self.vocab_size)

    @property
    def eos_id(self) -> int:
        return eos_id(self.vocab_size)

    def validate(self) -> None:
        for name in (
            "input_dim",
            "encoder_layers",
            "encoder_units",
            "encoder_stride",
            "prediction_layers",
            "prediction_units",
            "joint_units",
        ):
            if getattr(self, name) < 1:
                raise ConfigError(f"ModelConfig: field '{name}' must be positive")
        if self.vocab_size < 2:
            raise ConfigError("ModelConfig: field 'vocab_size' must be >= 2")


class ParamStore:
    """Ordered named float64 arrays with a flat-vector view.

    The flat view is what the optimizer and the finite-difference checks
    operate on; ``with_flat`` rebuilds a store of the same type.
    """

    def __init__(self, config, arrays: dict[str, np.ndarray]):
        self.config = config
        self.arrays = {k: np.asarray(v, dtype=np.float64) for k, v in arrays.items()}

    def __getitem__(self, name: str) -> np.ndarray:
        return self.arrays[name]

    def names(self) -> list[str]:
        return list(self.arrays.keys())

    def items(self) -> Iterator[tuple[str, np.ndarray]]:
        return iter(self.arrays.items())

    def num_params(self) -> int:
        return int(sum(a.size for a in self.arrays.values()))

    def flat(self) -> np.ndarray:
        return np.concatenate([a.ravel() for a in self.arrays.values()])

    def with_flat(self, vec: np.ndarray) -> "ParamStore":
        vec = np.asarray(vec, dtype=np.float64)
        if vec.size != self.num_params():
            raise UsageError("with_flat: size mismatch")
        out, offset = {}, 0
        for name, arr in self.arrays.items():
            out[name] = vec[offset : offset + arr.size].reshape(arr.shape).copy()
            offset += arr.size
        return type(self)(self.config, out)

    def copy(self) -> "ParamStore":
        return type(self)(self.config, {k: v.copy() for k, v in self.arrays.items()})

    def zero_grads(self) -> dict[str, np.ndarray]:
        return {k: np.zeros_like(v) for k, v in self.arrays.items()}


class ModelParams(ParamStore):
    config: ModelConfig


def flatten_grads(params: ParamStore, grads: Mapping[str, np.ndarray]) -> np.ndarray:
    return np.concatenate([np.asarray(grads[name]).ravel() for name in params.names()])


def add_grads(acc: dict[str, np.ndarray], extra: Mapping[str, np.ndarray], scale: float = 1.0) -> None:
    for name, g in extra.items():
        acc[name] += scale * g


def init_params(config: ModelConfig) -> ModelParams:
    """Uniform [-0.1, 0.1] init, deterministic in config.seed."""
    config.validate()
    rng = np.random.default_rng(config.seed)

    def u(*shape: int) -> np.ndarray:
        return rng.uniform(-0.1, 0.1, size=shape)

    arrays: dict[str, np.ndarray] = {}
    in_dim = config.input_dim
    for layer in range(config.encoder_layers):
        arrays[f"enc{layer}/w_x"] = u(config.encoder_units, in_dim)
        arrays[f"enc{layer}/w_h"] = u(config.encoder_units, config.encoder_units)
        arrays[f"enc{layer}/b"] = u(config.encoder_units)
        in_dim = config.encoder_units
    # Embedding row vocab_size is the start-of-sequence input.
    arrays["pred/embed"] = u(config.vocab_size + 1, config.prediction_units)
    in_dim = config.prediction_units
    for layer in range(config.prediction_layers):
        arrays[f"pred{layer}/w_x"] = u(config.prediction_units, in_dim)
        arrays[f"pred{layer}/w_h"] = u(config.prediction_units, config.prediction_units)
        arrays[f"pred{layer}/b"] = u(config.prediction_units)
        in_dim = config.prediction_units
    arrays["joint/w_e"] = u(config.joint_units, config.encoder_units)
    arrays["joint/w_p"] = u(config.joint_units, config.prediction_units)
    arrays["joint/b"] = u(config.joint_units)
    arrays["joint/w_out"] = u(config.vocab_size + 1, config.joint_units)
    arrays["joint/b_out"] = u(config.vocab_size + 1)
    return ModelParams(config, arrays)


# ---------------------------------------------------------------------------
# tanh recurrence
# ---------------------------------------------------------------------------


def _rnn_forward(w_x: np.ndarray, w_h: np.ndarray, b: np.ndarray, inputs: np.ndarray) -> np.ndarray:
    """States h_t = tanh(w_x x_t + w_h h_{t-1} + b) with h_0 = 0; shape (T, units)."""
    T = inputs.shape[0]
    states = np.zeros((T, w_h.shape[0]))
    drive = inputs @ w_x.T + b
    h = np.zeros(w_h.shape[0])
    for t in range(T):
        h = np.tanh(drive[t] + w_h @ h)
        states[t] = h
    return states


def _rnn_backward(
    w_x: np.ndarray,
    w_h: np.ndarray,
    inputs: np.ndarray,
    states: np.ndarray,
    d_states: np.ndarray,
) -> tuple[dict[str, np.ndarray], np.ndarray]:
    """Backprop through time for one layer; returns (weight grads, d_inputs)."""
    T = inputs.shape[0]
    d_wx = np.zeros_like(w_x)
    d_wh = np.zeros_like(w_h)
    d_b = np.zeros(w_h.shape[0])
    d_inputs = np.zeros_like(inputs)
    carry = np.zeros(w_h.shape[0])
    for t in range(T - 1, -1, -1):
        dh = d_states[t] + carry
        dz = dh * (1.0 - states[t] ** 2)
        d_wx += np.outer(dz, inputs[t])
        prev = states[t - 1] if t > 0 else np.zeros(w_h.shape[0])
        d_wh += np.outer(dz, prev)
        d_b += dz
        d_inputs[t] = w_x.T @ dz
        carry = w_h.T @ dz
    return {"w_x": d_wx, "w_h": d_wh, "b": d_b}, d_inputs


def _stack_forward(
    params: ParamStore, prefix: str, num_layers: int, inputs: np.ndarray
) -> list[np.ndarray]:
    """Per-layer state sequences for a stack of tanh recurrences."""
    layer_states = []
    x = inputs
    for layer in range(num_layers):
        x = _rnn_forward(
            params[f"{prefix}{layer}/w_x"], params[f"{prefix}{layer}/w_h"], params[f"{prefix}{layer}/b"], x
        )
        layer_states.append(x)
    return layer_states


def _stack_backward(
    params: ParamStore,
    prefix: str,
    num_layers: int,
    inputs: np.ndarray,
    layer_states: list[np.ndarray],
    d_top: np.ndarray,
) -> tuple[dict[str, np.ndarray], np.ndarray]:
    grads: dict[str, np.ndarray] = {}
    d = d_top
    for layer in range(num_layers - 1, -1, -1):
        below = inputs if layer == 0 else layer_states[layer - 1]
        layer_grads, d = _rnn_backward(
            params[f"{prefix}{layer}/w_x"], params[f"{prefix}{layer}/w_h"], below, layer_states[layer], d
        )
        for key, val in layer_grads.items():
            grads[f"{prefix}{layer}/{key}"] = val
    return grads, d


# ---------------------------------------------------------------------------
# Encoder
# ---------------------------------------------------------------------------


def encode(params: ModelParams, features: np.ndarray) -> np.ndarray:
    """Causal encoder states, one per (possibly strided) input frame."""
    states, _ = encode_with_cache(params, features)
    return states


def encode_with_cache(params: ModelParams, features: np.ndarray):
    cfg = params.config
    feats = np.asarray(features, dtype=np.float64)
    if feats.ndim != 2 or feats.shape[1] != cfg.input_dim:
        raise UsageError(f"encode: features must be (T, {cfg.input_dim})")
    layer_states = _stack_forward(params, "enc", cfg.encoder_layers, feats)
    top = layer_states[-1]
    kept = np.arange(0, top.shape[0], cfg.encoder_stride)
    return top[kept], (feats, layer_states, kept)


def encode_backward(params: ModelParams, cache, d_encoded: np.ndarray) -> dict[str, np.ndarray]:
    feats, layer_states, kept = cache
    d_top = np.zeros_like(layer_states[-1])
    d_top[kept] = d_encoded
    grads, _ = _stack_backward(params, "enc", params.config.encoder_layers, feats, layer_states, d_top)
    return grads


# ---------------------------------------------------------------------------
# Prediction network
# ---------------------------------------------------------------------------


def _check_labels(cfg: ModelConfig, labels: np.ndarray) -> np.ndarray:
    labels = np.asarray(labels, dtype=np.int64)
    if labels.ndim != 1:
        raise UsageError("labels must be a 1-d id sequence")
    if labels.size and (labels.min() < 0 or labels.max() >= cfg.vocab_size):
        raise UsageError(f"label id out of range [0, {cfg.vocab_size})")
    return labels


def predict_states(params: ModelParams, label_prefix: np.ndarray) -> np.ndarray:
    """States p_0..p_U; p_0 comes from the start-of-sequence embedding."""
    states, _ = predict_with_cache(params, label_prefix)
    return states


def predict_with_cache(params: ModelParams, label_prefix: np.ndarray):
    cfg = params.config
    labels = _check_labels(cfg, label_prefix)
    ids = np.concatenate([[cfg.vocab_size], labels])  # start-of-sequence first
    inputs = params["pred/embed"][ids]
    layer_states = _stack_forward(params, "pred", cfg.prediction_layers, inputs)
    return layer_states[-1], (ids, inputs, layer_states)


def predict_backward(params: ModelParams, cache, d_states: np.ndarray) -> dict[str, np.ndarray]:
    ids, inputs, layer_states = cache
    grads, d_inputs = _stack_backward(
        params, "pred", params.config.prediction_layers, inputs, layer_states, d_states
    )
    d_embed = np.zeros_like(params["pred/embed"])
    np.add.at(d_embed, ids, d_inputs)
    grads["pred/embed"] = d_embed
    return grads


def predict_init(params: ModelParams) -> tuple[np.ndarray, ...]:
    """Per-layer hidden state after consuming the start-of-sequence embedding."""
    return predict_step(params, None, params.config.vocab_size)


def predict_step(
    params: ModelParams, state: tuple[np.ndarray, ...] | None, token: int
) -> tuple[np.ndarray, ...]:
    """Advance the prediction recurrence by one token; used by beam search."""
    cfg = params.config
    if not 0 <= token <= cfg.vocab_size:
        raise UsageError("predict_step: token id out of range")
    x = params["pred/embed"][token]
    new_layers = []
    for layer in range(cfg.prediction_layers):
        h_prev = state[layer] if state is not None else np.zeros(cfg.prediction_units)
        x = np.tanh(params[f"pred{layer}/w_x"] @ x + params[f"pred{layer}/w_h"] @ h_prev + params[f"pred{layer}/b"])
        new_layers.append(x)
    return tuple(new_layers)


# ---------------------------------------------------------------------------
# Joint network
# ---------------------------------------------------------------------------


def joint_logits(params: ModelParams, e_t: np.ndarray, p_u: np.ndarray) -> np.ndarray:
    """Logits over tokens + blank for one (encoder state, prediction state) pair."""
    cfg = params.config
    e_t = np.asarray(e_t, dtype=np.float64)
    p_u = np.asarray(p_u, dtype=np.float64)
    if e_t.shape != (cfg.encoder_units,) or p_u.shape != (cfg.prediction_units,):
        raise UsageError("joint_logits: state dimension mismatch")
    hidden = np.tanh(params["joint/w_e"] @ e_t + params["joint/w_p"] @ p_u + params["joint/b"])
    return params["joint/w_out"] @ hidden + params["joint/b_out"]


def joint_grid_forward(params: ModelParams, enc: np.ndarray, pred: np.ndarray):
    """Vectorized joint over the full (frame, label-position) grid.

    Returns (logits (T, U+1, V+1), hidden tanh activations for backward).
    """
    pre = enc @ params["joint/w_e"].T
    pre = pre[:, None, :] + (pred @ params["joint/w_p"].T)[None, :, :] + params["joint/b"]
    hidden = np.tanh(pre)
    logits = hidden @ params["joint/w_out"].T + params["joint/b_out"]
    return logits, hidden


def joint_grid_backward(
    params: ModelParams,
    enc: np.ndarray,
    pred: np.ndarray,
    hidden: np.ndarray,
    d_logits: np.ndarray,
) -> tuple[dict[str, np.ndarray], np.ndarray, np.ndarray]:
    """Grads of the joint parameters plus upstream d_enc / d_pred."""
    d_hidden = d_logits @ params["joint/w_out"]
    d_pre = d_hidden * (1.0 - hidden**2)
    grads = {
        "joint/w_out": np.einsum("tuv,tuj->vj", d_logits, hidden),
        "joint/b_out": d_logits.sum(axis=(0, 1)),
        "joint/w_e": np.einsum("tuj,te->je", d_pre, enc),
        "joint/w_p": np.einsum("tuj,up->jp", d_pre, pred),
        "joint/b": d_pre.sum(axis=(0, 1)),
    }
    d_enc = np.einsum("tuj,je->te", d_pre, params["joint/w_e"])
    d_pred = np.einsum("tuj,jp->up", d_pre, params["joint/w_p"])
    return grads, d_enc, d_pred


def joint_logit_rows(params: ModelParams, e_t: np.ndarray, pred_rows: np.ndarray) -> np.ndarray:
    """Joint logits for one frame against a stack of prediction states (H, V+1)."""
    pre = params["joint/w_e"] @ e_t + params["joint/b"]
    hidden = np.tanh(pre[None, :] + pred_rows @ params["joint/w_p"].T)
    return hidden @ params["joint/w_out"].T + params["joint/b_out"]


# ---------------------------------------------------------------------------
# Lattice
# ---------------------------------------------------------------------------


def build_lattice(params: ModelParams, features: np.ndarray, labels: np.ndarray) -> LogitLattice:
    """Log-distributions over tokens + blank at every (frame, label-position) node."""
    lattice, _ = build_lattice_with_cache(params, features, labels)
    return lattice


def build_lattice_with_cache(params: ModelParams, features: np.ndarray, labels: np.ndarray):
    labels = _check_labels(params.config, labels)
    enc, enc_cache = encode_with_cache(params, features)
    pred, pred_cache = predict_with_cache(params, labels)
    logits, hidden = joint_grid_forward(params, enc, pred)
    log_probs = log_softmax(logits, axis=-1)
    lattice = LogitLattice(log_probs)
    return lattice, (enc, enc_cache, pred, pred_cache, hidden, log_probs)


# ---------------------------------------------------------------------------
# Optimizer step
# ---------------------------------------------------------------------------


def global_norm(grads: Mapping[str, np.ndarray]) -> float:
    return float(np.sqrt(sum(float(np.sum(np.asarray(g) ** 2)) for g in grads.values())))


def sgd_step(
    params: ParamStore,
    grads: Mapping[str, np.ndarray],
    learning_rate: float,
    clip_norm: float = 0.0,
) -> ParamStore:
    """Global-norm clipping followed by a plain gradient step."""
    if learning_rate <= 0:
        raise UsageError("sgd_step: learning_rate must be positive")
    for name in params.names():
        g = np.asarray(grads[name])
        if not np.all(np.isfinite(g)):
            raise TrainingError(f"sgd_step: non-finite gradient in '{name}'")
    scale = 1.0
    if clip_norm and clip_norm > 0:
        norm = global_norm(grads)
        if norm > clip_norm:
            scale = clip_norm / norm
    new_arrays = {
        name: arr - learning_rate * scale * np.asarray(grads[name]) for name, arr in params.items()
    }
    return type(params)(params.config, new_arrays)
