"""Finite-difference verification of every analytic gradient path.

Runs on fixed tiny instances (a few hundred parameters, a handful of
frames) so the whole battery completes in seconds.  A corruption hook lets
the negative-control test verify that a broken gradient is caught and
named.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import model, mwer, training
from .model import ModelConfig
from .numerics import finite_difference_gradient, max_relative_error
from .rescorer import LasConfig, init_las_params, las_ce_loss_and_grads
from .transducer import PenaltyConfig

TOLERANCE = 1e-4


@dataclass
class GradCheckResult:
    component: str
    max_rel_error: float
    passed: bool


@dataclass
class GradCheckReport:
    results: list[GradCheckResult]

    @property
    def passed(self) -> bool:
        return all(r.passed for r in self.results)


def _tiny_model(seed: int) -> model.ModelParams:
    cfg = ModelConfig(
        input_dim=3,
        encoder_layers=1,
        encoder_units=4,
        prediction_layers=1,
        prediction_units=4,
        joint_units=4,
        vocab_size=3,
        seed=seed,
    )
    return model.init_params(cfg)


def _check(component: str, analytic: np.ndarray, fd: np.ndarray, corrupt: str | None) -> GradCheckResult:
    analytic = np.asarray(analytic, dtype=np.float64)
    if corrupt == component:
        analytic = analytic + 0.05 * (1.0 + np.abs(analytic))
    err = max_relative_error(analytic, fd)
    return GradCheckResult(component=component, max_rel_error=err, passed=err < TOLERANCE)


def run_gradient_checks(seed: int = 0, corrupt: str | None = None) -> GradCheckReport:
    rng = np.random.default_rng([seed, 7])
    params = _tiny_model(seed)
    cfg = params.config
    T, U = 5, 2
    features = rng.normal(size=(T, cfg.input_dim))
    labels = np.array([0, cfg.eos_id], dtype=np.int64)
    t_eos = 3
    penalty = PenaltyConfig(alpha_early=0.1, alpha_late=1.0, t_buffer=1)
    results = []

    # Encoder: gradient of sum of squared states.
    def enc_loss(vec: np.ndarray) -> float:
        states = model.encode(params.with_flat(vec), features)
        return float(np.sum(states**2))

    states, cache = model.encode_with_cache(params, features)
    enc_grads = model.encode_backward(params, cache, 2.0 * states)
    full = params.zero_grads()
    model.add_grads(full, enc_grads)
    fd = finite_difference_gradient(enc_loss, params.flat())
    results.append(_check("encoder", model.flatten_grads(params, full), fd, corrupt))

    # Prediction network: same probe through the label side.
    def pred_loss(vec: np.ndarray) -> float:
        states = model.predict_states(params.with_flat(vec), labels)
        return float(np.sum(states**2))

    pstates, pcache = model.predict_with_cache(params, labels)
    pred_grads = model.predict_backward(params, pcache, 2.0 * pstates)
    full = params.zero_grads()
    model.add_grads(full, pred_grads)
    fd = finite_difference_gradient(pred_loss, params.flat())
    results.append(_check("prediction", model.flatten_grads(params, full), fd, corrupt))

    # Full chain: penalized transducer loss into every parameter.
    def rnnt_loss_fn(vec: np.ndarray) -> float:
        loss, _ = training.rnnt_objective_grads(
            params.with_flat(vec), features, labels, t_eos, penalty
        )
        return loss

    _, grads = training.rnnt_objective_grads(params, features, labels, t_eos, penalty)
    fd = finite_difference_gradient(rnnt_loss_fn, params.flat())
    results.append(_check("transducer_loss", model.flatten_grads(params, grads), fd, corrupt))

    # Sequence-risk outer gradient over hypothesis scores.
    scores = rng.normal(size=4)
    errors = rng.integers(0, 4, size=4)

    def mwer_loss_fn(vec: np.ndarray) -> float:
        items = [
            mwer.NBestItem(tokens=(int(i),), word_errors=int(e), seq_log_prob=float(s))
            for i, (s, e) in enumerate(zip(vec, errors))
        ]
        return mwer.mwer_loss(items)

    items = [
        mwer.NBestItem(tokens=(int(i),), word_errors=int(e), seq_log_prob=float(s))
        for i, (s, e) in enumerate(zip(scores, errors))
    ]
    fd = finite_difference_gradient(mwer_loss_fn, scores)
    results.append(_check("sequence_risk", mwer.mwer_grad(items), fd, corrupt))

    # Rescorer cross-entropy into the rescorer parameters.
    las_cfg = LasConfig(
        encoder_input_dim=cfg.encoder_units,
        encoder_layers=1,
        encoder_units=4,
        attention_dim=3,
        attention_heads=2,
        decoder_units=4,
        vocab_size=cfg.vocab_size,
        seed=seed + 1,
    )
    las = init_las_params(las_cfg)
    enc_out = model.encode(params, features)

    def las_loss_fn(vec: np.ndarray) -> float:
        loss, _, _ = las_ce_loss_and_grads(las.with_flat(vec), enc_out, labels)
        return loss

    _, las_grads, _ = las_ce_loss_and_grads(las, enc_out, labels)
    fd = finite_difference_gradient(las_loss_fn, las.flat())
    results.append(_check("rescorer_ce", model.flatten_grads(las, las_grads), fd, corrupt))

    # Rescorer cross-entropy back into the first-pass encoder outputs.
    def las_enc_loss_fn(vec: np.ndarray) -> float:
        loss, _, _ = las_ce_loss_and_grads(las, vec.reshape(enc_out.shape), labels)
        return loss

    _, _, d_enc = las_ce_loss_and_grads(las, enc_out, labels)
    fd = finite_difference_gradient(las_enc_loss_fn, enc_out.ravel())
    results.append(_check("rescorer_encoder_input", d_enc.ravel(), fd, corrupt))

    return GradCheckReport(results=results)


def format_report(report: GradCheckReport) -> str:
    lines = []
    for r in report.results:
        status = "PASS" if r.passed else "FAIL"
        lines.append(f"{status}  {r.component:24s} max_rel_error={r.max_rel_error:.3e}")
    lines.append("gradcheck: " + ("all components passed" if report.passed else "FAILED"))
    return "\n".join(lines)
