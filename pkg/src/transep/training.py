"""Full-model training: chains the lattice loss gradient through the
joint, encoder, and prediction networks, and runs the likelihood-training
stage with periodic held-out evaluation.
"""

from __future__ import annotations

from dataclasses import replace
from typing import Sequence

import numpy as np

from . import model, transducer
from .datagen import Utterance
from .decoder import DecodeConfig, greedy_reference
from .errors import TrainingError, UsageError
from .evaluate import edit_distance
from .transducer import PenaltyConfig
from .vocab import strip_eos


def rnnt_objective_grads(
    params: model.ModelParams,
    features: np.ndarray,
    labels: np.ndarray,
    t_eos: int | None = None,
    penalty_cfg: PenaltyConfig | None = None,
) -> tuple[float, dict[str, np.ndarray]]:
    """Penalized transducer loss for one utterance, with parameter gradients.

    The penalty is additive on the end-of-speech lattice entries, so the
    loss gradient flows through it unchanged; the log-softmax backward then
    maps lattice gradients onto joint logits and from there into every
    network parameter.
    """
    lattice, cache = model.build_lattice_with_cache(params, features, labels)
    enc, enc_cache, pred, pred_cache, hidden, log_probs = cache
    if penalty_cfg is not None and (penalty_cfg.alpha_early > 0 or penalty_cfg.alpha_late > 0):
        if t_eos is None:
            raise UsageError("rnnt_objective_grads: penalties need t_eos")
        lattice = transducer.apply_endpoint_penalty(lattice, t_eos, penalty_cfg)
    loss, d_lattice = transducer.rnnt_loss_and_grad(lattice, labels)
    # Through log-softmax: dL/dz = G - softmax(z) * sum_k G_k.
    d_logits = d_lattice - np.exp(log_probs) * d_lattice.sum(axis=-1, keepdims=True)
    joint_grads, d_enc, d_pred = model.joint_grid_backward(params, enc, pred, hidden, d_logits)
    grads = params.zero_grads()
    model.add_grads(grads, joint_grads)
    model.add_grads(grads, model.encode_backward(params, enc_cache, d_enc))
    model.add_grads(grads, model.predict_backward(params, pred_cache, d_pred))
    return loss, grads


def sequence_log_prob(
    params: model.ModelParams,
    features: np.ndarray,
    labels: np.ndarray,
    t_eos: int | None = None,
    penalty_cfg: PenaltyConfig | None = None,
) -> float:
    """Log-probability of a label sequence under the (optionally penalized) model."""
    lattice = model.build_lattice(params, features, labels)
    if penalty_cfg is not None and (penalty_cfg.alpha_early > 0 or penalty_cfg.alpha_late > 0):
        if t_eos is None:
            raise UsageError("sequence_log_prob: penalties need t_eos")
        lattice = transducer.apply_endpoint_penalty(lattice, t_eos, penalty_cfg)
    return -transducer.rnnt_loss(lattice, labels)


def training_labels(utt: Utterance, vocab_size: int, use_eos_label: bool) -> np.ndarray:
    if use_eos_label:
        return utt.labels
    return np.asarray(strip_eos(utt.labels, vocab_size), dtype=np.int64)


def dev_error_rate(
    params: model.ModelParams,
    dev: Sequence[Utterance],
    decode_cfg: DecodeConfig,
    use_eos_label: bool = True,
) -> float:
    """Greedy-decoding token error rate (percent) on a held-out set."""
    vocab = params.config.vocab_size
    cfg = decode_cfg if use_eos_label else replace(decode_cfg, beta=1.5)
    errors = 0
    ref_len = 0
    for utt in dev:
        hyp = strip_eos(greedy_reference(params, utt.features, cfg), vocab)
        ref = strip_eos(utt.labels, vocab)
        sub, ins, dele = edit_distance(ref, hyp)
        errors += sub + ins + dele
        ref_len += len(ref)
    if ref_len == 0:
        raise UsageError("dev_error_rate: empty references")
    return 100.0 * errors / ref_len


def train_rnnt_ce(
    params: model.ModelParams,
    train: Sequence[Utterance],
    dev: Sequence[Utterance],
    *,
    epochs: int,
    learning_rate: float,
    lr_decay: float = 1.0,
    batch_size: int = 8,
    clip_norm: float = 5.0,
    penalty_cfg: PenaltyConfig | None = None,
    eval_every: int = 100,
    seed: int = 0,
    use_eos_label: bool = True,
    dev_decode_cfg: DecodeConfig | None = None,
) -> tuple[model.ModelParams, list[dict]]:
    """Likelihood training with optional end-of-speech timing penalties.

    Returns trained parameters and a metrics log; one entry per evaluation
    event with (step, train loss, dev error rate).
    """
    if not train:
        raise UsageError("train_rnnt_ce: empty training set")
    vocab = params.config.vocab_size
    dev_cfg = dev_decode_cfg or DecodeConfig()
    metrics: list[dict] = []
    step = 0
    total_steps = epochs * ((len(train) + batch_size - 1) // batch_size)

    def evaluate(loss_value: float) -> None:
        wer = dev_error_rate(params, dev, dev_cfg, use_eos_label) if dev else float("nan")
        metrics.append({"step": step, "loss": loss_value, "dev_wer": wer})

    lr = learning_rate
    for epoch in range(epochs):
        order = np.random.default_rng([seed, 2, epoch]).permutation(len(train))
        for start in range(0, len(order), batch_size):
            batch = order[start : start + batch_size]
            grads = params.zero_grads()
            batch_loss = 0.0
            for idx in batch:
                utt = train[idx]
                labels = training_labels(utt, vocab, use_eos_label)
                loss, g = rnnt_objective_grads(params, utt.features, labels, utt.t_eos, penalty_cfg)
                if not np.isfinite(loss):
                    raise TrainingError(f"train_rnnt_ce: non-finite loss on {utt.id}")
                model.add_grads(grads, g, scale=1.0 / len(batch))
                batch_loss += loss / len(batch)
            params = model.sgd_step(params, grads, lr, clip_norm)
            step += 1
            if step % eval_every == 0 or step == total_steps:
                evaluate(batch_loss)
        lr *= lr_decay
    return params, metrics


def write_metrics_log(path, metrics: list[dict]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for row in metrics:
            fh.write(f"{row['step']}\t{row['loss']!r}\t{row['dev_wer']!r}\n")
