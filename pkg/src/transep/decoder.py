"""Frame-synchronous beam search with joint endpointing.

Each active hypothesis consumes one frame per step, extended either by
blank (label position unchanged) or by a single token emission.  The
end-of-speech token is admitted only when its posterior passes the
p ** alpha >= beta gate; when admitted it terminates the hypothesis and
its score contribution is the alpha-scaled log-probability, which lets
the gate scale reorder hypotheses that endpoint.

The utterance endpoint is declared at the first frame where the globally
best hypothesis is end-of-speech-terminated (a config flag switches to
any-hypothesis declaration), with a feature-distance fallback endpointer
as backup; the combined endpoint is whichever fires first.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from . import model
from .datagen import PrototypeBank
from .errors import ConfigError, DecodeError, UsageError
from .numerics import log_softmax
from .vocab import ends_with_eos


@dataclass(frozen=True)
class DecodeConfig:
    beam_size: int = 8
    nbest_k: int = 4
    alpha_eos: float = 1.0
    beta: float = 0.5  # values > 1 disable end-of-speech emission entirely
    fallback_silence_frames: int = 6
    fallback_enabled: bool = True
    max_token_expansions: int = 4  # non-eos token branches per hypothesis per frame
    stop_on_endpoint: bool = True
    endpoint_on_any_hypothesis: bool = False

    def validate(self) -> None:
        if self.nbest_k < 1 or self.beam_size < self.nbest_k:
            raise ConfigError("DecodeConfig: need beam_size >= nbest_k >= 1")
        if self.alpha_eos <= 0:
            raise ConfigError("DecodeConfig: field 'alpha_eos' must be positive")
        if self.beta < 0:
            raise ConfigError("DecodeConfig: field 'beta' must be >= 0")
        if self.fallback_silence_frames < 1:
            raise ConfigError("DecodeConfig: field 'fallback_silence_frames' must be >= 1")
        if self.max_token_expansions < 1:
            raise ConfigError("DecodeConfig: field 'max_token_expansions' must be >= 1")


@dataclass
class Hypothesis:
    tokens: tuple[int, ...]
    token_frames: tuple[int, ...]
    log_score: float
    terminated: bool
    endpoint_frame: int | None = None  # frame of the end-of-speech emission
    eos_score: float = 0.0  # alpha-scaled end-of-speech term inside log_score


@dataclass
class DecodeResult:
    nbest: list[Hypothesis]
    endpoint_frame: int | None
    endpoint_source: str  # "eos" | "fallback" | "none"

    @property
    def best(self) -> Hypothesis:
        return self.nbest[0]


def eos_allowed(p_eos: float, alpha_eos: float, beta: float) -> bool:
    """Admission gate for the end-of-speech token: p ** alpha >= beta."""
    if not 0.0 <= p_eos <= 1.0:
        raise UsageError("eos_allowed: p_eos must lie in [0, 1]")
    return p_eos**alpha_eos >= beta


def first_allowed_frame(p_stream, alpha_eos: float, beta: float) -> int | None:
    """First frame of a posterior stream that passes the admission gate."""
    for t, p in enumerate(p_stream):
        if eos_allowed(float(p), alpha_eos, beta):
            return t
    return None


def silence_mask(features: np.ndarray, bank: PrototypeBank) -> np.ndarray:
    """Per-frame flag: nearest prototype is the silence prototype."""
    feats = np.asarray(features, dtype=np.float64)
    d_sil = np.sum((feats - bank.silence) ** 2, axis=1)
    d_tok = np.min(
        np.sum((feats[:, None, :] - bank.tokens[None, :, :]) ** 2, axis=2), axis=1
    )
    return d_sil <= d_tok


def fallback_eoq(features: np.ndarray, silence_frames: int, bank: PrototypeBank) -> int | None:
    """First frame index f whose preceding silence_frames frames are all silence."""
    if silence_frames < 1:
        raise UsageError("fallback_eoq: silence_frames must be >= 1")
    mask = silence_mask(features, bank)
    run = 0
    for t, is_sil in enumerate(mask):
        run = run + 1 if is_sil else 0
        if run >= silence_frames:
            return t + 1
    return None


def latency_of(endpoint_frame: int, t_eos: int, frame_ms: float) -> float:
    """Signed endpoint latency in milliseconds; negative means premature."""
    return (endpoint_frame - t_eos) * frame_ms


@dataclass
class _Entry:
    tokens: tuple[int, ...]
    token_frames: tuple[int, ...]
    score: float
    terminated: bool
    eos_terminated: bool
    endpoint_frame: int | None
    eos_score: float
    pred_state: tuple[np.ndarray, ...] | None = field(repr=False, default=None)


def _merge(pool: dict[tuple[int, ...], _Entry], entry: _Entry) -> None:
    """Duplicate token sequences share probability mass (log-add); the
    higher-scoring constituent keeps the path bookkeeping."""
    old = pool.get(entry.tokens)
    if old is None:
        pool[entry.tokens] = entry
        return
    merged_score = float(np.logaddexp(old.score, entry.score))
    winner = entry if entry.score > old.score else old
    pool[entry.tokens] = replace(winner, score=merged_score)


def _to_hypothesis(entry: _Entry) -> Hypothesis:
    return Hypothesis(
        tokens=entry.tokens,
        token_frames=entry.token_frames,
        log_score=entry.score,
        terminated=entry.terminated,
        endpoint_frame=entry.endpoint_frame if entry.eos_terminated else None,
        eos_score=entry.eos_score,
    )


def beam_search(
    params: model.ModelParams,
    features: np.ndarray,
    cfg: DecodeConfig,
    bank: PrototypeBank | None = None,
) -> DecodeResult:
    cfg.validate()
    mcfg = params.config
    eos, blank = mcfg.eos_id, mcfg.blank_id
    enc = model.encode(params, features)
    T = enc.shape[0]
    if T == 0:
        raise UsageError("beam_search: empty feature sequence")

    fallback_frame: int | None = None
    if cfg.fallback_enabled:
        if bank is None:
            raise UsageError("beam_search: fallback endpointing requires a prototype bank")
        fallback_frame = fallback_eoq(features, cfg.fallback_silence_frames, bank)

    beam = [
        _Entry(
            tokens=(),
            token_frames=(),
            score=0.0,
            terminated=False,
            eos_terminated=False,
            endpoint_frame=None,
            eos_score=0.0,
            pred_state=model.predict_init(params),
        )
    ]
    endpoint: int | None = None
    source = "none"
    last_frame = T - 1

    for t in range(T):
        pool: dict[tuple[int, ...], _Entry] = {}
        actives = [e for e in beam if not e.terminated]
        for e in beam:
            if e.terminated:
                _merge(pool, e)
        if actives:
            pred_rows = np.stack([e.pred_state[-1] for e in actives])
            logp = log_softmax(model.joint_logit_rows(params, enc[t], pred_rows), axis=-1)
            for e, lp in zip(actives, logp):
                _merge(pool, replace(e, score=e.score + float(lp[blank])))
                # Gated end-of-speech emission terminates the hypothesis.
                if eos_allowed(math.exp(lp[eos]), cfg.alpha_eos, cfg.beta):
                    contribution = cfg.alpha_eos * float(lp[eos])
                    _merge(
                        pool,
                        _Entry(
                            tokens=e.tokens + (eos,),
                            token_frames=e.token_frames + (t,),
                            score=e.score + contribution,
                            terminated=True,
                            eos_terminated=True,
                            endpoint_frame=t,
                            eos_score=contribution,
                            pred_state=None,
                        ),
                    )
                if t == last_frame:
                    continue  # a token at the final frame could never be blank-closed
                order = np.argsort(lp[:eos + 1], kind="stable")[::-1]
                expansions = 0
                for k in order:
                    k = int(k)
                    if k == eos:
                        continue
                    if expansions >= cfg.max_token_expansions:
                        break
                    expansions += 1
                    _merge(
                        pool,
                        _Entry(
                            tokens=e.tokens + (k,),
                            token_frames=e.token_frames + (t,),
                            score=e.score + float(lp[k]),
                            terminated=False,
                            eos_terminated=False,
                            endpoint_frame=None,
                            eos_score=e.eos_score,
                            pred_state=model.predict_step(params, e.pred_state, k),
                        ),
                    )
        beam = sorted(pool.values(), key=lambda e: (-e.score, e.tokens))[: cfg.beam_size]
        if not beam or all(e.score == float("-inf") for e in beam):
            raise DecodeError("beam_search: all hypotheses collapsed to zero probability")

        if endpoint is None:
            eos_fired = (
                any(e.eos_terminated for e in beam)
                if cfg.endpoint_on_any_hypothesis
                else beam[0].eos_terminated
            )
            if eos_fired:
                endpoint, source = t, "eos"
            elif fallback_frame is not None and fallback_frame <= t + 1:
                endpoint, source = fallback_frame, "fallback"
            if endpoint is not None and cfg.stop_on_endpoint:
                break

    # Close whatever is still active: at a full pass this is the final-frame
    # blank closure; at an early stop it freezes the streaming state.
    closed = [e if e.terminated else replace(e, terminated=True, pred_state=None) for e in beam]
    closed.sort(key=lambda e: (-e.score, e.tokens))
    nbest = [_to_hypothesis(e) for e in closed[: cfg.nbest_k]]
    return DecodeResult(nbest=nbest, endpoint_frame=endpoint, endpoint_source=source)


def write_decode_outputs(path: str | Path, rows: list[tuple[str, DecodeResult]]) -> None:
    """One line per utterance: id, top-1 tokens, score, endpoint, source."""
    with open(path, "w", encoding="utf-8") as fh:
        for utt_id, res in rows:
            top = res.best
            tokens = " ".join(str(k) for k in top.tokens)
            endpoint = -1 if res.endpoint_frame is None else res.endpoint_frame
            fh.write(f"{utt_id}\t{tokens}\t{top.log_score!r}\t{endpoint}\t{res.endpoint_source}\n")


def greedy_reference(
    params: model.ModelParams, features: np.ndarray, cfg: DecodeConfig
) -> list[int]:
    """Per-frame argmax decoding; test oracle for beam_size=1 equivalence."""
    mcfg = params.config
    eos, blank = mcfg.eos_id, mcfg.blank_id
    enc = model.encode(params, features)
    state = model.predict_init(params)
    tokens: list[int] = []
    for t in range(enc.shape[0]):
        lp = log_softmax(model.joint_logits(params, enc[t], state[-1]))
        choices = {k: float(v) for k, v in enumerate(lp)}
        if eos_allowed(math.exp(lp[eos]), cfg.alpha_eos, cfg.beta):
            choices[eos] = cfg.alpha_eos * choices[eos]
        else:
            del choices[eos]
        if t == enc.shape[0] - 1:
            for k in list(choices):
                if k not in (eos, blank):
                    del choices[k]
        best = max(choices, key=lambda k: choices[k])
        if best == blank:
            continue
        tokens.append(best)
        if best == eos:
            break
        state = model.predict_step(params, state, best)
    return tokens
