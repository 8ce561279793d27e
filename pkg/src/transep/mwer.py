"""Sequence-risk fine-tuning over N-best lists.

The loss is the expected excess token-error count under the softmax of the
per-hypothesis sequence scores, with the mean N-best error count as the
baseline.  Gradients flow through the softmax into each hypothesis score,
and from there into the first-pass model (via the lattice gradients) and
optionally into the rescorer.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Sequence

import numpy as np

from . import model, training
from .datagen import PrototypeBank, Utterance
from .decoder import DecodeConfig, beam_search
from .errors import UsageError
from .evaluate import edit_distance
from .rescorer import LasParams, las_sequence_grads
from .transducer import PenaltyConfig
from .vocab import eos_id, strip_eos

UPDATE_SCOPES = ("rnnt", "las", "both")


@dataclass
class NBestItem:
    tokens: tuple[int, ...]
    word_errors: int
    seq_log_prob: float

    def __post_init__(self) -> None:
        if self.word_errors < 0:
            raise UsageError("NBestItem: word_errors must be >= 0")


def _softmax_over_items(scores: np.ndarray) -> np.ndarray:
    if np.all(scores == float("-inf")):
        raise UsageError("mwer: every hypothesis score is log-zero")
    shifted = scores - scores.max()
    w = np.exp(shifted)
    return w / w.sum()


def mwer_loss(items: Sequence[NBestItem]) -> float:
    """Expected (error - mean error) under the renormalized N-best posterior."""
    if not items:
        raise UsageError("mwer_loss: empty N-best")
    scores = np.array([it.seq_log_prob for it in items], dtype=np.float64)
    errors = np.array([it.word_errors for it in items], dtype=np.float64)
    p = _softmax_over_items(scores)
    return float(p @ (errors - errors.mean()))


def mwer_grad(items: Sequence[NBestItem]) -> np.ndarray:
    """d(loss)/d(seq_log_prob_i) = p_i * ((W_i - mean W) - loss)."""
    if not items:
        raise UsageError("mwer_grad: empty N-best")
    scores = np.array([it.seq_log_prob for it in items], dtype=np.float64)
    errors = np.array([it.word_errors for it in items], dtype=np.float64)
    p = _softmax_over_items(scores)
    centered = errors - errors.mean()
    loss = float(p @ centered)
    return p * (centered - loss)


@dataclass
class MwerStepDiagnostics:
    skipped: bool
    loss: float
    num_hypotheses: int
    error_counts: tuple[int, ...]


def _scoring_penalty(penalty_cfg: PenaltyConfig, include_late_penalty: bool) -> PenaltyConfig | None:
    """Sequence scores keep the late penalty only; the early penalty is off
    during sequence-risk training (premature endpoints are already punished
    through their deletion errors)."""
    if not include_late_penalty:
        return None
    return replace(penalty_cfg, alpha_early=0.0)


def mwer_train_step(
    params: model.ModelParams,
    utterance: Utterance,
    decode_cfg: DecodeConfig,
    penalty_cfg: PenaltyConfig,
    *,
    include_late_penalty: bool = True,
    update_scope: str = "rnnt",
    las: LasParams | None = None,
    learning_rate: float = 0.02,
    clip_norm: float = 5.0,
    bank: PrototypeBank | None = None,
) -> tuple[model.ModelParams, LasParams | None, MwerStepDiagnostics]:
    """One sequence-risk update from a freshly decoded N-best.

    ``update_scope`` selects which parameter set moves: the first-pass
    model, the rescorer, or both.  Scores include the rescorer's sequence
    log-probability whenever the scope touches it.
    """
    if update_scope not in UPDATE_SCOPES:
        raise UsageError(f"mwer_train_step: update_scope must be one of {UPDATE_SCOPES}")
    if update_scope in ("las", "both") and las is None:
        raise UsageError("mwer_train_step: las parameters required for this scope")

    vocab = params.config.vocab_size
    result = beam_search(params, utterance.features, decode_cfg, bank)
    contents = []
    seen = set()
    for hyp in result.nbest:
        content = strip_eos(hyp.tokens, vocab)
        if content not in seen:
            seen.add(content)
            contents.append(content)
    if len(contents) < 2:
        return params, las, MwerStepDiagnostics(True, 0.0, len(contents), ())

    ref = strip_eos(utterance.labels, vocab)
    scoring_penalty = _scoring_penalty(penalty_cfg, include_late_penalty)
    use_las = update_scope in ("las", "both")
    enc = model.encode(params, utterance.features) if use_las else None

    items = []
    rnnt_grad_parts = []
    las_grad_parts = []
    las_enc_grad_parts = []
    need_rnnt_grads = update_scope in ("rnnt", "both")
    for content in contents:
        labels = np.asarray(content + (eos_id(vocab),), dtype=np.int64)
        if need_rnnt_grads:
            nll, g = training.rnnt_objective_grads(
                params, utterance.features, labels, utterance.t_eos, scoring_penalty
            )
            score = -nll
            rnnt_grad_parts.append(g)
        else:
            score = training.sequence_log_prob(
                params, utterance.features, labels, utterance.t_eos, scoring_penalty
            )
        if use_las:
            las_lp, las_g, las_d_enc = las_sequence_grads(las, enc, labels)
            score += las_lp
            las_grad_parts.append(las_g)
            las_enc_grad_parts.append(las_d_enc)
        sub, ins, dele = edit_distance(ref, content)
        items.append(NBestItem(tokens=content, word_errors=sub + ins + dele, seq_log_prob=score))

    loss = mwer_loss(items)
    outer = mwer_grad(items)

    new_params = params
    if update_scope in ("rnnt", "both"):
        grads = params.zero_grads()
        for weight, g in zip(outer, rnnt_grad_parts):
            # d score / d theta = -d nll / d theta
            model.add_grads(grads, g, scale=-float(weight))
        if update_scope == "both":
            # Rescorer scores reach the first pass through the encoder outputs.
            _, enc_cache = model.encode_with_cache(params, utterance.features)
            d_enc_total = sum(
                float(weight) * d for weight, d in zip(outer, las_enc_grad_parts)
            )
            model.add_grads(grads, model.encode_backward(params, enc_cache, d_enc_total))
        new_params = model.sgd_step(params, grads, learning_rate, clip_norm)

    new_las = las
    if use_las:
        las_grads = las.zero_grads()
        for weight, g in zip(outer, las_grad_parts):
            model.add_grads(las_grads, g, scale=float(weight))
        new_las = model.sgd_step(las, las_grads, learning_rate, clip_norm)

    diag = MwerStepDiagnostics(
        skipped=False,
        loss=loss,
        num_hypotheses=len(items),
        error_counts=tuple(it.word_errors for it in items),
    )
    return new_params, new_las, diag


def train_mwer(
    params: model.ModelParams,
    corpus: Sequence[Utterance],
    decode_cfg: DecodeConfig,
    penalty_cfg: PenaltyConfig,
    *,
    include_late_penalty: bool = True,
    update_scope: str = "rnnt",
    las: LasParams | None = None,
    learning_rate: float = 0.02,
    clip_norm: float = 5.0,
    bank: PrototypeBank | None = None,
    epochs: int = 1,
    seed: int = 0,
) -> tuple[model.ModelParams, LasParams | None, dict]:
    """Per-utterance sequence-risk updates over the corpus."""
    skipped = 0
    steps = 0
    total_loss = 0.0
    for epoch in range(epochs):
        order = np.random.default_rng([seed, 4, epoch]).permutation(len(corpus))
        for idx in order:
            params, las, diag = mwer_train_step(
                params,
                corpus[idx],
                decode_cfg,
                penalty_cfg,
                include_late_penalty=include_late_penalty,
                update_scope=update_scope,
                las=las,
                learning_rate=learning_rate,
                clip_norm=clip_norm,
                bank=bank,
            )
            if diag.skipped:
                skipped += 1
            else:
                steps += 1
                total_loss += diag.loss
    summary = {
        "steps": steps,
        "skipped": skipped,
        "mean_loss": total_loss / steps if steps else 0.0,
    }
    return params, las, summary
