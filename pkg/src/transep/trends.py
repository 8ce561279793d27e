"""Directional trend harness.

Trains the ladder of system variants on the reference synthetic corpus and
checks the qualitative comparisons the method is supposed to produce:
joint endpointing beats the fallback-only baseline on latency, the early
penalty removes the accuracy regression, the late penalty tightens median
latency, sequence-risk fine-tuning does not hurt accuracy or tail latency,
rescoring strictly improves accuracy without touching endpoints, and
discarding the first-pass end-of-speech score does not help.

Every trend is reported machine-readably (JSON) whether it passes or not.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, replace
from pathlib import Path

from . import datagen, evaluate, model, mwer, rescorer, training
from .config import ExperimentConfig
from .transducer import PenaltyConfig

EOS_OFFSET_GRID = (-4.0, -2.0, -1.0, 0.0, 1.0, 2.0, 4.0)

TREND_NAMES = (
    "joint_endpointing_beats_fallback_latency",
    "early_penalty_does_not_hurt_accuracy",
    "late_penalty_reduces_median_latency",
    "sequence_risk_keeps_accuracy_and_tail_latency",
    "rescoring_improves_accuracy_endpoints_fixed",
    "dropping_first_pass_eos_score_does_not_help",
)


@dataclass
class SystemMetrics:
    name: str
    wer_pct: float
    ep50_ms: float | None
    ep90_ms: float | None
    eou_pct: float


@dataclass
class TrendResult:
    name: str
    passed: bool
    details: dict


@dataclass
class TrendReport:
    systems: list[SystemMetrics]
    trends: list[TrendResult]

    @property
    def passed(self) -> bool:
        return all(t.passed for t in self.trends)

    def to_json(self) -> str:
        return json.dumps(
            {
                "passed": self.passed,
                "systems": [asdict(s) for s in self.systems],
                "trends": [asdict(t) for t in self.trends],
                "failed_trends": [t.name for t in self.trends if not t.passed],
            },
            indent=2,
            sort_keys=True,
        )


def _metrics(name: str, results) -> SystemMetrics:
    wer, lat = evaluate.summarize(results)
    return SystemMetrics(name, wer, lat.ep50_ms, lat.ep90_ms, lat.eou_pct)


def _rescore_results(params, test, raw, las, rcfg, frame_ms):
    """Re-derive per-utterance results from cached first-pass decodes."""
    from .decoder import latency_of
    from .vocab import strip_eos

    vocab = params.config.vocab_size
    by_id = {utt.id: utt for utt in test}
    out = []
    for utt_id, res in raw:
        utt = by_id[utt_id]
        enc = model.encode(params, utt.features)
        top = rescorer.rescore_nbest(las, enc, res.nbest, rcfg)[0].hypothesis
        ref = strip_eos(utt.labels, vocab)
        hyp = strip_eos(top.tokens, vocab)
        sub, ins, dele = evaluate.edit_distance(ref, hyp)
        lat = (
            latency_of(res.endpoint_frame, utt.t_eos, frame_ms)
            if res.endpoint_frame is not None
            else None
        )
        out.append(
            evaluate.UtteranceResult(
                id=utt.id,
                ref_tokens=ref,
                hyp_tokens=hyp,
                substitutions=sub,
                insertions=ins,
                deletions=dele,
                latency_ms=lat,
                endpoint_source=res.endpoint_source,
            )
        )
    return out


def run_trends(cfg: ExperimentConfig, out_dir: str | Path | None = None) -> TrendReport:
    cfg.validate()
    corpus = datagen.generate_corpus(cfg.corpus)
    train, test = datagen.split_corpus(corpus, cfg.train_fraction)
    bank = datagen.prototype_bank(cfg.corpus)
    frame_ms = cfg.corpus.frame_ms
    tc = cfg.training
    decode_cfg = cfg.decode
    no_eos_decode = replace(decode_cfg, beta=1.5)

    def fit(penalty: PenaltyConfig | None, use_eos: bool) -> model.ModelParams:
        params = model.init_params(cfg.model)
        params, _ = training.train_rnnt_ce(
            params,
            train,
            test,
            epochs=tc.rnnt_epochs,
            learning_rate=tc.rnnt_learning_rate,
            batch_size=tc.rnnt_batch_size,
            clip_norm=tc.clip_norm,
            penalty_cfg=penalty,
            eval_every=tc.eval_every,
            seed=tc.seed,
            use_eos_label=use_eos,
            dev_decode_cfg=decode_cfg,
        )
        return params

    early_only = replace(cfg.penalty, alpha_late=0.0)

    b1 = fit(None, use_eos=False)
    b2 = fit(None, use_eos=True)
    e1 = fit(early_only, use_eos=True)
    e2 = fit(cfg.penalty, use_eos=True)

    e5, _, _ = mwer.train_mwer(
        e2,
        train,
        decode_cfg,
        cfg.penalty,
        include_late_penalty=tc.mwer_include_late_penalty,
        update_scope="rnnt",
        learning_rate=tc.mwer_learning_rate,
        clip_norm=tc.clip_norm,
        bank=bank,
        epochs=tc.mwer_epochs,
        seed=tc.seed,
    )

    las = rescorer.init_las_params(cfg.las)
    las, _ = rescorer.las_ce_train(
        las,
        e2,
        train,
        epochs=tc.las_epochs,
        learning_rate=tc.las_learning_rate,
        batch_size=tc.las_batch_size,
        clip_norm=tc.clip_norm,
        seed=tc.seed,
    )

    b1_results, _ = evaluate.decode_corpus(b1, test, no_eos_decode, bank, frame_ms)
    b2_results, _ = evaluate.decode_corpus(b2, test, decode_cfg, bank, frame_ms)
    e1_results, _ = evaluate.decode_corpus(e1, test, decode_cfg, bank, frame_ms)
    e2_results, e2_raw = evaluate.decode_corpus(e2, test, decode_cfg, bank, frame_ms)
    e5_results, _ = evaluate.decode_corpus(e5, test, decode_cfg, bank, frame_ms)

    rescore_on = replace(cfg.rescore, include_rnnt_eos_score=True)
    e6_results = _rescore_results(e2, test, e2_raw, las, rescore_on, frame_ms)

    off_candidates = []
    for offset in EOS_OFFSET_GRID:
        rcfg = replace(cfg.rescore, include_rnnt_eos_score=False, global_eos_offset=offset)
        res = _rescore_results(e2, test, e2_raw, las, rcfg, frame_ms)
        off_candidates.append((evaluate.corpus_wer(res), offset, res))
    best_off_wer, best_offset, _ = min(off_candidates, key=lambda c: (c[0], c[1]))

    systems = [
        _metrics("b1_no_eos_fallback_only", b1_results),
        _metrics("b2_joint_eos", b2_results),
        _metrics("e1_early_penalty", e1_results),
        _metrics("e2_early_late_penalty", e2_results),
        _metrics("e5_sequence_risk_late_only", e5_results),
        _metrics("e6_rescored", e6_results),
    ]
    by_name = {s.name: s for s in systems}

    trends: list[TrendResult] = []

    b1m, b2m = by_name["b1_no_eos_fallback_only"], by_name["b2_joint_eos"]
    trends.append(
        TrendResult(
            name=TREND_NAMES[0],
            passed=(
                b1m.ep50_ms is not None
                and b2m.ep50_ms is not None
                and b2m.ep50_ms < b1m.ep50_ms
                and b2m.ep90_ms < b1m.ep90_ms
                and b2m.eou_pct >= b1m.eou_pct
            ),
            details={
                "b1": asdict(b1m),
                "b2": asdict(b2m),
            },
        )
    )

    e1m, e2m = by_name["e1_early_penalty"], by_name["e2_early_late_penalty"]
    trends.append(
        TrendResult(
            name=TREND_NAMES[1],
            passed=e1m.wer_pct <= b2m.wer_pct,
            details={"e1_wer": e1m.wer_pct, "b2_wer": b2m.wer_pct},
        )
    )

    trends.append(
        TrendResult(
            name=TREND_NAMES[2],
            passed=(
                e1m.ep50_ms is not None
                and e2m.ep50_ms is not None
                and e2m.ep50_ms < e1m.ep50_ms
            ),
            details={"e1_ep50": e1m.ep50_ms, "e2_ep50": e2m.ep50_ms},
        )
    )

    e5m = by_name["e5_sequence_risk_late_only"]
    trends.append(
        TrendResult(
            name=TREND_NAMES[3],
            passed=(
                e5m.wer_pct <= e2m.wer_pct
                and e5m.ep90_ms is not None
                and e2m.ep90_ms is not None
                and e5m.ep90_ms <= e2m.ep90_ms
            ),
            details={
                "e5_wer": e5m.wer_pct,
                "e2_wer": e2m.wer_pct,
                "e5_ep90": e5m.ep90_ms,
                "e2_ep90": e2m.ep90_ms,
            },
        )
    )

    e6m = by_name["e6_rescored"]
    endpoints_unchanged = all(
        a.latency_ms == b.latency_ms and a.endpoint_source == b.endpoint_source
        for a, b in zip(e2_results, e6_results)
    )
    trends.append(
        TrendResult(
            name=TREND_NAMES[4],
            passed=e6m.wer_pct < e2m.wer_pct and endpoints_unchanged,
            details={
                "e6_wer": e6m.wer_pct,
                "e2_wer": e2m.wer_pct,
                "endpoints_unchanged": endpoints_unchanged,
            },
        )
    )

    trends.append(
        TrendResult(
            name=TREND_NAMES[5],
            passed=best_off_wer >= e6m.wer_pct,
            details={
                "flag_on_wer": e6m.wer_pct,
                "flag_off_best_wer": best_off_wer,
                "flag_off_best_offset": best_offset,
            },
        )
    )

    report = TrendReport(systems=systems, trends=trends)
    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        (out / "trends.json").write_text(report.to_json(), encoding="utf-8")
        lines = ["name,wer_pct,ep50_ms,ep90_ms,eou_pct"]
        for s in systems:
            ep50 = "" if s.ep50_ms is None else repr(s.ep50_ms)
            ep90 = "" if s.ep90_ms is None else repr(s.ep90_ms)
            lines.append(f"{s.name},{s.wer_pct!r},{ep50},{ep90},{s.eou_pct!r}")
        (out / "trend_table.csv").write_text("\n".join(lines) + "\n", encoding="utf-8")
    return report
