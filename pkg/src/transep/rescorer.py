"""Second-pass attention rescorer.

A non-streaming stack: an extra recurrent encoder consumes the full
first-pass encoder output sequence, and a single-cell recurrent decoder
with content-based attention scores token sequences in teacher-forcing
mode.  Scores combine the teacher-forced log-probability with a coverage
bonus (count of frames whose accumulated attention mass clears a
threshold) and, optionally, the first-pass end-of-speech score of the
hypothesis being rescored.

Gradients are hand-derived, mirroring the first-pass networks, so the
whole stack is finite-difference checkable.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from . import model
from .decoder import Hypothesis
from .errors import ConfigError, TrainingError, UsageError
from .model import ParamStore, _stack_backward, _stack_forward
from .numerics import log_softmax
from .vocab import ends_with_eos, eos_id, strip_eos


@dataclass(frozen=True)
class LasConfig:
    encoder_input_dim: int = 24  # first-pass encoder units
    encoder_layers: int = 1
    encoder_units: int = 24
    attention_dim: int = 16
    attention_heads: int = 1
    decoder_units: int = 24
    vocab_size: int = 8
    seed: int = 1

    def validate(self) -> None:
        for name in (
            "encoder_input_dim",
            "encoder_layers",
            "encoder_units",
            "attention_dim",
            "attention_heads",
            "decoder_units",
        ):
            if getattr(self, name) < 1:
                raise ConfigError(f"LasConfig: field '{name}' must be positive")
        if self.vocab_size < 2:
            raise ConfigError("LasConfig: field 'vocab_size' must be >= 2")


@dataclass(frozen=True)
class RescoreConfig:
    lambda_coverage: float = 0.01
    tau_coverage: float = 0.5
    include_rnnt_eos_score: bool = True
    global_eos_offset: float = 0.0  # used only when the flag above is off

    def validate(self) -> None:
        if self.lambda_coverage < 0:
            raise ConfigError("RescoreConfig: field 'lambda_coverage' must be >= 0")
        if not 0.0 < self.tau_coverage <= 1.0:
            raise ConfigError("RescoreConfig: field 'tau_coverage' must lie in (0, 1]")


class LasParams(ParamStore):
    config: LasConfig


def init_las_params(config: LasConfig) -> LasParams:
    config.validate()
    rng = np.random.default_rng(config.seed)

    def u(*shape: int) -> np.ndarray:
        return rng.uniform(-0.1, 0.1, size=shape)

    arrays: dict[str, np.ndarray] = {}
    in_dim = config.encoder_input_dim
    for layer in range(config.encoder_layers):
        arrays[f"lasenc{layer}/w_x"] = u(config.encoder_units, in_dim)
        arrays[f"lasenc{layer}/w_h"] = u(config.encoder_units, config.encoder_units)
        arrays[f"lasenc{layer}/b"] = u(config.encoder_units)
        in_dim = config.encoder_units
    for head in range(config.attention_heads):
        arrays[f"att{head}/w_q"] = u(config.attention_dim, config.decoder_units)
        arrays[f"att{head}/w_k"] = u(config.attention_dim, config.encoder_units)
        arrays[f"att{head}/b"] = u(config.attention_dim)
        arrays[f"att{head}/v"] = u(config.attention_dim)
    arrays["dec/embed"] = u(config.vocab_size + 1, config.decoder_units)
    arrays["dec/w_x"] = u(config.decoder_units, config.decoder_units)
    arrays["dec/w_h"] = u(config.decoder_units, config.decoder_units)
    arrays["dec/b"] = u(config.decoder_units)
    ctx_dim = config.attention_heads * config.encoder_units
    arrays["comb/w"] = u(config.decoder_units, config.decoder_units + ctx_dim)
    arrays["comb/b"] = u(config.decoder_units)
    arrays["out/w"] = u(config.vocab_size, config.decoder_units)
    arrays["out/b"] = u(config.vocab_size)
    return LasParams(config, arrays)


def _check_tokens(cfg: LasConfig, tokens: Sequence[int]) -> np.ndarray:
    toks = np.asarray(tokens, dtype=np.int64)
    if toks.ndim != 1 or toks.size == 0:
        raise UsageError("rescorer: token sequence must be non-empty")
    if toks.min() < 0 or toks.max() >= cfg.vocab_size:
        raise UsageError(f"rescorer: token id out of range [0, {cfg.vocab_size})")
    if toks[-1] != eos_id(cfg.vocab_size):
        raise UsageError("rescorer: token sequence must end with the end-of-speech token")
    return toks


def _forward(las: LasParams, encoder_outputs: np.ndarray, tokens: np.ndarray):
    cfg = las.config
    E = np.asarray(encoder_outputs, dtype=np.float64)
    if E.ndim != 2 or E.shape[1] != cfg.encoder_input_dim:
        raise UsageError(f"rescorer: encoder outputs must be (T, {cfg.encoder_input_dim})")
    enc_states = _stack_forward(las, "lasenc", cfg.encoder_layers, E)
    H = enc_states[-1]
    T = H.shape[0]

    ids = np.concatenate([[cfg.vocab_size], tokens[:-1]])
    emb = las["dec/embed"][ids]
    S = model._rnn_forward(las["dec/w_x"], las["dec/w_h"], las["dec/b"], emb)
    U = S.shape[0]

    keys = [H @ las[f"att{m}/w_k"].T for m in range(cfg.attention_heads)]  # (T, A) per head
    attn = np.zeros((U, cfg.attention_heads, T))
    pre_acts = np.zeros((U, cfg.attention_heads, T, cfg.attention_dim))
    contexts = np.zeros((U, cfg.attention_heads * cfg.encoder_units))
    for u in range(U):
        parts = []
        for m in range(cfg.attention_heads):
            q = las[f"att{m}/w_q"] @ S[u] + las[f"att{m}/b"]
            pre = np.tanh(q[None, :] + keys[m])
            energy = pre @ las[f"att{m}/v"]
            a = np.exp(log_softmax(energy))
            pre_acts[u, m] = pre
            attn[u, m] = a
            parts.append(a @ H)
        contexts[u] = np.concatenate(parts)

    comb_in = np.concatenate([S, contexts], axis=1)
    comb = np.tanh(comb_in @ las["comb/w"].T + las["comb/b"])
    logits = comb @ las["out/w"].T + las["out/b"]
    logp = log_softmax(logits, axis=-1)
    token_logp = logp[np.arange(U), tokens]
    cache = (E, enc_states, H, ids, emb, S, keys, pre_acts, attn, contexts, comb, logits, logp)
    return float(token_logp.sum()), attn, cache


def _backward(las: LasParams, tokens: np.ndarray, cache) -> tuple[dict[str, np.ndarray], np.ndarray]:
    """Gradients of the teacher-forced log-probability sum (not the CE loss).

    Returns (param grads, d encoder_outputs); the latter feeds the
    first-pass encoder when both passes are trained jointly.
    """
    cfg = las.config
    E, enc_states, H, ids, emb, S, keys, pre_acts, attn, contexts, comb, logits, logp = cache
    T = H.shape[0]
    U = S.shape[0]

    grads = las.zero_grads()
    # d(sum logp[y]) / dlogits = onehot - softmax
    d_logits = -np.exp(logp)
    d_logits[np.arange(U), tokens] += 1.0

    grads["out/w"] += d_logits.T @ comb
    grads["out/b"] += d_logits.sum(axis=0)
    d_comb = d_logits @ las["out/w"]
    d_comb_pre = d_comb * (1.0 - comb**2)
    comb_in = np.concatenate([S, contexts], axis=1)
    grads["comb/w"] += d_comb_pre.T @ comb_in
    grads["comb/b"] += d_comb_pre.sum(axis=0)
    d_comb_in = d_comb_pre @ las["comb/w"]
    d_S = d_comb_in[:, : cfg.decoder_units].copy()
    d_ctx = d_comb_in[:, cfg.decoder_units :]

    d_H = np.zeros_like(H)
    d_keys = [np.zeros((T, cfg.attention_dim)) for _ in range(cfg.attention_heads)]
    for u in range(U):
        for m in range(cfg.attention_heads):
            dc = d_ctx[u, m * cfg.encoder_units : (m + 1) * cfg.encoder_units]
            a = attn[u, m]
            d_H += np.outer(a, dc)
            da = H @ dc
            de = a * (da - float(a @ da))  # softmax backward
            pre = pre_acts[u, m]
            grads[f"att{m}/v"] += pre.T @ de
            d_pre = np.outer(de, las[f"att{m}/v"])
            dz = d_pre * (1.0 - pre**2)
            dq = dz.sum(axis=0)
            grads[f"att{m}/w_q"] += np.outer(dq, S[u])
            grads[f"att{m}/b"] += dq
            d_S[u] += las[f"att{m}/w_q"].T @ dq
            d_keys[m] += dz
    for m in range(cfg.attention_heads):
        grads[f"att{m}/w_k"] += d_keys[m].T @ H
        d_H += d_keys[m] @ las[f"att{m}/w_k"]

    dec_grads, d_emb = model._rnn_backward(las["dec/w_x"], las["dec/w_h"], emb, S, d_S)
    grads["dec/w_x"] += dec_grads["w_x"]
    grads["dec/w_h"] += dec_grads["w_h"]
    grads["dec/b"] += dec_grads["b"]
    np.add.at(grads["dec/embed"], ids, d_emb)

    enc_grads, d_E = _stack_backward(las, "lasenc", cfg.encoder_layers, E, enc_states, d_H)
    for name, g in enc_grads.items():
        grads[name] += g
    return grads, d_E


def coverage_bonus(attn: np.ndarray, cfg: RescoreConfig) -> float:
    """lambda * number of frames whose accumulated attention mass exceeds tau.

    Head attentions are averaged so a single head reduces to the plain
    accumulated-mass rule.
    """
    per_frame = attn.mean(axis=1).sum(axis=0)
    return cfg.lambda_coverage * float(np.count_nonzero(per_frame > cfg.tau_coverage))


def las_score(
    las: LasParams,
    encoder_outputs: np.ndarray,
    tokens: Sequence[int],
    cfg: RescoreConfig | None = None,
) -> float:
    """Teacher-forced sequence log-probability plus the coverage bonus."""
    cfg = cfg or RescoreConfig()
    cfg.validate()
    toks = _check_tokens(las.config, tokens)
    logp_sum, attn, _ = _forward(las, encoder_outputs, toks)
    return logp_sum + coverage_bonus(attn, cfg)


def attention_matrix(las: LasParams, encoder_outputs: np.ndarray, tokens: Sequence[int]) -> np.ndarray:
    """(decode step, head, frame) attention weights; rows sum to one."""
    toks = _check_tokens(las.config, tokens)
    _, attn, _ = _forward(las, encoder_outputs, toks)
    return attn


def las_sequence_grads(
    las: LasParams, encoder_outputs: np.ndarray, tokens: Sequence[int]
) -> tuple[float, dict[str, np.ndarray], np.ndarray]:
    """Teacher-forced log-probability sum with gradients.

    The coverage bonus is piecewise constant, so it contributes no
    gradient; callers adding it to scores get the same derivative.
    """
    toks = _check_tokens(las.config, tokens)
    logp_sum, _, cache = _forward(las, encoder_outputs, toks)
    grads, d_enc = _backward(las, toks, cache)
    return logp_sum, grads, d_enc


@dataclass
class RescoredHypothesis:
    hypothesis: Hypothesis
    las_score: float
    combined_score: float


def rescore_nbest(
    las: LasParams,
    encoder_outputs: np.ndarray,
    nbest: list[Hypothesis],
    cfg: RescoreConfig,
) -> list[RescoredHypothesis]:
    """Rerank first-pass hypotheses by LAS score plus an end-of-speech term.

    With the flag on, the per-hypothesis first-pass end-of-speech score is
    added; with it off, hypotheses that endpointed get a flat swept offset
    instead (first-pass confidence discarded).  Sorting is stable, and the
    first-pass endpoint is never touched.
    """
    cfg.validate()
    if not nbest:
        raise UsageError("rescore_nbest: empty N-best list")
    V = las.config.vocab_size
    scored = []
    for hyp in nbest:
        seq = strip_eos(hyp.tokens, V) + (eos_id(V),)
        base = las_score(las, encoder_outputs, seq, cfg)
        if cfg.include_rnnt_eos_score:
            extra = hyp.eos_score
        else:
            extra = cfg.global_eos_offset if ends_with_eos(hyp.tokens, V) else 0.0
        scored.append(RescoredHypothesis(hyp, base, base + extra))
    return sorted(scored, key=lambda r: -r.combined_score)


def las_ce_loss_and_grads(
    las: LasParams, encoder_outputs: np.ndarray, tokens: Sequence[int]
) -> tuple[float, dict[str, np.ndarray], np.ndarray]:
    """Teacher-forced cross-entropy (total nats) and its gradients."""
    logp_sum, grads, d_enc = las_sequence_grads(las, encoder_outputs, tokens)
    neg = {name: -g for name, g in grads.items()}
    return -logp_sum, neg, -d_enc


def las_ce_train(
    las: LasParams,
    rnnt_params: model.ModelParams,
    corpus,
    *,
    epochs: int,
    learning_rate: float,
    batch_size: int = 8,
    clip_norm: float = 5.0,
    seed: int = 0,
) -> tuple[LasParams, list[dict]]:
    """Teacher-forced cross-entropy training with the first pass frozen.

    Returns the trained rescorer and a per-epoch metrics log with the mean
    cross-entropy in nats per token.
    """
    if not corpus:
        raise UsageError("las_ce_train: empty corpus")
    encoded = [model.encode(rnnt_params, utt.features) for utt in corpus]
    metrics: list[dict] = []
    step = 0
    for epoch in range(epochs):
        order = np.random.default_rng([seed, 3, epoch]).permutation(len(corpus))
        total_nats = 0.0
        total_tokens = 0
        for start in range(0, len(order), batch_size):
            batch = order[start : start + batch_size]
            grads = las.zero_grads()
            for idx in batch:
                utt = corpus[idx]
                loss, g, _ = las_ce_loss_and_grads(las, encoded[idx], utt.labels)
                if not np.isfinite(loss):
                    raise TrainingError("las_ce_train: non-finite loss")
                model.add_grads(grads, g, scale=1.0 / len(batch))
                total_nats += loss
                total_tokens += len(utt.labels)
            las = sgd_las_step(las, grads, learning_rate, clip_norm)
            step += 1
        metrics.append({"epoch": epoch, "step": step, "ce_per_token": total_nats / total_tokens})
    return las, metrics


def sgd_las_step(las: LasParams, grads, learning_rate: float, clip_norm: float) -> LasParams:
    return model.sgd_step(las, grads, learning_rate, clip_norm)  # type: ignore[return-value]
