"""Accuracy and latency metrics: token error counts, corpus error rate,
latency percentiles/coverage, and the operating-point sweep over the
end-of-speech gate parameters.
"""

from __future__ import annotations

import csv
import functools
import io
import multiprocessing
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Sequence

import numpy as np

from . import model
from .datagen import PrototypeBank, Utterance
from .decoder import DecodeConfig, beam_search, latency_of
from .errors import FormatError, UsageError
from .rescorer import LasParams, RescoreConfig, rescore_nbest
from .vocab import strip_eos


def edit_distance(ref: Sequence[int], hyp: Sequence[int]) -> tuple[int, int, int]:
    """(substitutions, insertions, deletions) of a minimal edit script.

    Both sequences must already have the end-of-speech token stripped.
    Ties between alignments prefer a substitution over an insertion plus
    deletion, then deletions over insertions, making counts deterministic.
    """
    n, m = len(ref), len(hyp)
    # dp[i][j] = (total, sub, ins, del) for ref[:i] vs hyp[:j]
    dp = [[(0, 0, 0, 0)] * (m + 1) for _ in range(n + 1)]
    for i in range(1, n + 1):
        dp[i][0] = (i, 0, 0, i)
    for j in range(1, m + 1):
        dp[0][j] = (j, 0, j, 0)
    for i in range(1, n + 1):
        for j in range(1, m + 1):
            t, s, ins, dele = dp[i - 1][j - 1]
            if ref[i - 1] == hyp[j - 1]:
                diag = (t, s, ins, dele)
            else:
                diag = (t + 1, s + 1, ins, dele)
            t, s, ins, dele = dp[i - 1][j]
            drop = (t + 1, s, ins, dele + 1)
            t, s, ins, dele = dp[i][j - 1]
            add = (t + 1, s, ins + 1, dele)
            dp[i][j] = min(diag, drop, add, key=lambda c: c[0])  # stable: diag preferred
    _, s, ins, dele = dp[n][m]
    return s, ins, dele


@dataclass
class UtteranceResult:
    id: str
    ref_tokens: tuple[int, ...]
    hyp_tokens: tuple[int, ...]
    substitutions: int
    insertions: int
    deletions: int
    latency_ms: float | None
    endpoint_source: str

    @property
    def errors(self) -> int:
        return self.substitutions + self.insertions + self.deletions


@dataclass
class LatencySummary:
    ep50_ms: float | None
    ep90_ms: float | None
    eou_pct: float


def corpus_wer(results: Sequence[UtteranceResult]) -> float:
    """100 * total errors / total reference length."""
    if not results:
        raise UsageError("corpus_wer: no results")
    total_ref = sum(len(r.ref_tokens) for r in results)
    if total_ref == 0:
        raise UsageError("corpus_wer: zero total reference length")
    return 100.0 * sum(r.errors for r in results) / total_ref


def _nearest_rank(sorted_vals: list[float], pct: float) -> float:
    rank = int(np.ceil(pct * len(sorted_vals)))
    return sorted_vals[max(rank, 1) - 1]


def latency_summary(latencies: Sequence[float | None], total: int | None = None) -> LatencySummary:
    """Nearest-rank percentiles over endpointed utterances; coverage over all.

    Negative (premature) latencies stay in the percentile pool.
    """
    latencies = list(latencies)
    total = len(latencies) if total is None else total
    if total < 1:
        raise UsageError("latency_summary: total must be >= 1")
    defined = sorted(v for v in latencies if v is not None)
    eou = 100.0 * len(defined) / total
    if not defined:
        return LatencySummary(ep50_ms=None, ep90_ms=None, eou_pct=0.0)
    return LatencySummary(
        ep50_ms=_nearest_rank(defined, 0.5),
        ep90_ms=_nearest_rank(defined, 0.9),
        eou_pct=eou,
    )


def decode_corpus(
    params: model.ModelParams,
    corpus: Sequence[Utterance],
    decode_cfg: DecodeConfig,
    bank: PrototypeBank | None,
    frame_ms: float,
    las: LasParams | None = None,
    rescore_cfg: RescoreConfig | None = None,
) -> tuple[list[UtteranceResult], list]:
    """First-pass decode (plus optional rescoring) of every utterance.

    Rescoring permutes the hypothesis list only; latency always comes from
    the first-pass endpoint.
    """
    vocab = params.config.vocab_size
    results: list[UtteranceResult] = []
    raw = []
    for utt in corpus:
        res = beam_search(params, utt.features, decode_cfg, bank)
        raw.append((utt.id, res))
        if las is not None:
            enc = model.encode(params, utt.features)
            reranked = rescore_nbest(las, enc, res.nbest, rescore_cfg or RescoreConfig())
            top = reranked[0].hypothesis
        else:
            top = res.best
        ref = strip_eos(utt.labels, vocab)
        hyp = strip_eos(top.tokens, vocab)
        sub, ins, dele = edit_distance(ref, hyp)
        lat = (
            latency_of(res.endpoint_frame, utt.t_eos, frame_ms)
            if res.endpoint_frame is not None
            else None
        )
        results.append(
            UtteranceResult(
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
    return results, raw


def summarize(results: Sequence[UtteranceResult]) -> tuple[float, LatencySummary]:
    wer = corpus_wer(results)
    lat = latency_summary([r.latency_ms for r in results])
    return wer, lat


@dataclass(frozen=True)
class SweepRow:
    alpha_eos: float
    beta: float
    wer_pct: float
    ep50_ms: float | None
    ep90_ms: float | None
    eou_pct: float


@dataclass
class SweepReport:
    rows: list[SweepRow]


SWEEP_HEADER = ["alpha_eos", "beta", "wer_pct", "ep50_ms", "ep90_ms", "eou_pct"]


def _sweep_point(
    point: tuple[float, float],
    params: model.ModelParams,
    corpus: Sequence[Utterance],
    decode_cfg: DecodeConfig,
    bank: PrototypeBank | None,
    frame_ms: float,
    las: LasParams | None,
    rescore_cfg: RescoreConfig | None,
) -> SweepRow:
    alpha, beta = point
    cfg = replace(decode_cfg, alpha_eos=float(alpha), beta=float(beta))
    results, _ = decode_corpus(params, corpus, cfg, bank, frame_ms, las, rescore_cfg)
    wer, lat = summarize(results)
    return SweepRow(
        alpha_eos=float(alpha),
        beta=float(beta),
        wer_pct=wer,
        ep50_ms=lat.ep50_ms,
        ep90_ms=lat.ep90_ms,
        eou_pct=lat.eou_pct,
    )


def roc_sweep(
    params: model.ModelParams,
    corpus: Sequence[Utterance],
    alpha_grid: Sequence[float],
    beta_grid: Sequence[float],
    decode_cfg: DecodeConfig,
    bank: PrototypeBank | None,
    frame_ms: float,
    las: LasParams | None = None,
    rescore_cfg: RescoreConfig | None = None,
    jobs: int = 1,
) -> SweepReport:
    """Decode + evaluate at every (alpha_eos, beta) grid point, in grid order.

    Grid points are independent; ``jobs`` > 1 fans them out over worker
    processes and reassembles rows in grid order, so the report is
    identical to a serial run.
    """
    if not alpha_grid or not beta_grid:
        raise UsageError("roc_sweep: empty grid")
    points = [(float(a), float(b)) for a in alpha_grid for b in beta_grid]
    worker = functools.partial(
        _sweep_point,
        params=params,
        corpus=corpus,
        decode_cfg=decode_cfg,
        bank=bank,
        frame_ms=frame_ms,
        las=las,
        rescore_cfg=rescore_cfg,
    )
    if jobs > 1:
        with multiprocessing.get_context("fork").Pool(jobs) as pool:
            rows = pool.map(worker, points)
    else:
        rows = [worker(p) for p in points]
    return SweepReport(rows=rows)


def _cell(value: float | None) -> str:
    return "" if value is None else repr(value)


def sweep_to_csv(report: SweepReport) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(SWEEP_HEADER)
    for row in report.rows:
        writer.writerow(
            [
                repr(row.alpha_eos),
                repr(row.beta),
                repr(row.wer_pct),
                _cell(row.ep50_ms),
                _cell(row.ep90_ms),
                repr(row.eou_pct),
            ]
        )
    return buf.getvalue()


def write_sweep_csv(path: str | Path, report: SweepReport) -> None:
    Path(path).write_text(sweep_to_csv(report), encoding="utf-8")


def read_sweep_csv(path: str | Path) -> SweepReport:
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        if header != SWEEP_HEADER:
            raise FormatError(f"{path}: unexpected sweep header {header}")
        rows = []
        for rec in reader:
            rows.append(
                SweepRow(
                    alpha_eos=float(rec[0]),
                    beta=float(rec[1]),
                    wer_pct=float(rec[2]),
                    ep50_ms=float(rec[3]) if rec[3] else None,
                    ep90_ms=float(rec[4]) if rec[4] else None,
                    eou_pct=float(rec[5]),
                )
            )
    return SweepReport(rows=rows)
