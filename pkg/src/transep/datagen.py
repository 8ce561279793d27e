"""Synthetic aligned corpus generation.

Utterances are built from per-token prototype vectors plus Gaussian noise,
so the token-to-frame alignment (and hence the ground-truth end-of-speech
frame) is known by construction.  Silence is its own prototype rather than
zeros, which lets a distance-based fallback endpointer work on features.
"""

from __future__ import annotations

import hashlib
import io
import json
import struct
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .errors import ConfigError, FormatError, UsageError
from .vocab import eos_id

# Prototype table size is fixed so the bank is a pure function of the seed
# regardless of vocab_size.
PROTOTYPE_CAPACITY = 64

_PROTO_STREAM = 1
_UTT_STREAM = 2

_MAGIC = b"TEPD"
_VERSION = 1


@dataclass(frozen=True)
class CorpusSpec:
    """Knobs for the synthetic corpus; generation is a pure function of this."""

    vocab_size: int = 8  # token ids incl. end-of-speech, excl. blank
    feature_dim: int = 8
    frames_per_token: int = 2
    tokens_per_utterance: tuple[int, int] = (2, 4)  # inclusive range
    leading_silence_frames: tuple[int, int] = (0, 2)
    trailing_silence_frames: tuple[int, int] = (6, 9)
    # Decaying copies of the last token appended before the silence starts
    # (trailing-voicing analog).  A random hangover length makes the exact
    # end-of-speech frame ambiguous from features alone, which is what the
    # early/late penalty trade-off needs to be non-trivial.
    hangover_frames: tuple[int, int] = (0, 2)
    hangover_decay: float = 0.5
    silence_scale: float = 0.25  # low-energy silence prototype
    feature_noise_std: float = 0.3
    num_utterances: int = 2200
    seed: int = 17
    frame_ms: float = 60.0

    def validate(self) -> None:
        if self.vocab_size < 3:
            raise ConfigError("CorpusSpec: field 'vocab_size' must be >= 3")
        if self.vocab_size - 1 > PROTOTYPE_CAPACITY:
            raise ConfigError(
                f"CorpusSpec: field 'vocab_size' exceeds prototype capacity {PROTOTYPE_CAPACITY + 1}"
            )
        if self.feature_dim < 1:
            raise ConfigError("CorpusSpec: field 'feature_dim' must be positive")
        if self.frames_per_token < 1:
            raise ConfigError("CorpusSpec: field 'frames_per_token' must be >= 1")
        for name in (
            "tokens_per_utterance",
            "leading_silence_frames",
            "trailing_silence_frames",
            "hangover_frames",
        ):
            lo, hi = getattr(self, name)
            if lo < 0 or hi < lo:
                raise ConfigError(f"CorpusSpec: field '{name}' must be a non-empty range of non-negatives")
        if self.tokens_per_utterance[0] < 1:
            raise ConfigError("CorpusSpec: field 'tokens_per_utterance' must start at >= 1")
        if not 0.0 < self.hangover_decay < 1.0:
            raise ConfigError("CorpusSpec: field 'hangover_decay' must lie in (0, 1)")
        if self.silence_scale <= 0:
            raise ConfigError("CorpusSpec: field 'silence_scale' must be positive")
        if self.feature_noise_std < 0:
            raise ConfigError("CorpusSpec: field 'feature_noise_std' must be >= 0")
        if self.num_utterances < 1:
            raise ConfigError("CorpusSpec: field 'num_utterances' must be positive")
        if self.frame_ms <= 0:
            raise ConfigError("CorpusSpec: field 'frame_ms' must be positive")
        # Every label sequence (incl. the end-of-speech token) must fit into
        # the frame count for the transducer likelihood to be nonzero.
        if self.frames_per_token == 1 and (
            self.leading_silence_frames[0] + self.trailing_silence_frames[0] < 1
        ):
            raise ConfigError(
                "CorpusSpec: with frames_per_token=1 the minimum leading+trailing silence must be >= 1"
            )


@dataclass
class Utterance:
    id: str
    features: np.ndarray  # (T, feature_dim) float64
    labels: np.ndarray  # (U,) int64, last entry is the end-of-speech token
    t_eos: int  # index of the first trailing-silence frame

    @property
    def num_frames(self) -> int:
        return int(self.features.shape[0])


@dataclass(frozen=True)
class PrototypeBank:
    """Unit-vector prototypes for the real tokens plus one silence prototype."""

    tokens: np.ndarray  # (vocab_size - 1, feature_dim)
    silence: np.ndarray  # (feature_dim,)


def prototype_bank(spec: CorpusSpec) -> PrototypeBank:
    spec.validate()
    rng = np.random.default_rng([spec.seed, _PROTO_STREAM])
    raw = rng.normal(size=(PROTOTYPE_CAPACITY + 1, spec.feature_dim))
    raw /= np.linalg.norm(raw, axis=1, keepdims=True)
    n_real = spec.vocab_size - 1
    return PrototypeBank(
        tokens=raw[:n_real].copy(),
        silence=spec.silence_scale * raw[PROTOTYPE_CAPACITY],
    )


def _generate_utterance(spec: CorpusSpec, bank: PrototypeBank, index: int) -> Utterance:
    rng = np.random.default_rng([spec.seed, _UTT_STREAM, index])
    lo, hi = spec.tokens_per_utterance
    n_tokens = int(rng.integers(lo, hi + 1))
    # No immediate repeats: a token boundary is always a prototype change,
    # so the alignment is recoverable from the features alone.
    n_real = spec.vocab_size - 1
    tokens = np.empty(n_tokens, dtype=np.int64)
    tokens[0] = rng.integers(0, n_real)
    for i in range(1, n_tokens):
        draw = int(rng.integers(0, n_real - 1))
        tokens[i] = draw if draw < tokens[i - 1] else draw + 1
    lead = int(rng.integers(spec.leading_silence_frames[0], spec.leading_silence_frames[1] + 1))
    trail = int(rng.integers(spec.trailing_silence_frames[0], spec.trailing_silence_frames[1] + 1))
    hangover = int(rng.integers(spec.hangover_frames[0], spec.hangover_frames[1] + 1))

    rows = [np.tile(bank.silence, (lead, 1))]
    for tok in tokens:
        rows.append(np.tile(bank.tokens[tok], (spec.frames_per_token, 1)))
    for i in range(hangover):
        rows.append(spec.hangover_decay ** (i + 1) * bank.tokens[tokens[-1]][None, :])
    rows.append(np.tile(bank.silence, (trail, 1)))
    features = np.concatenate(rows, axis=0)
    if spec.feature_noise_std > 0:
        features = features + rng.normal(0.0, spec.feature_noise_std, size=features.shape)

    labels = np.concatenate([tokens, [eos_id(spec.vocab_size)]]).astype(np.int64)
    t_eos = lead + n_tokens * spec.frames_per_token + hangover
    utt = Utterance(
        id=f"utt{index:06d}",
        features=np.ascontiguousarray(features, dtype=np.float64),
        labels=labels,
        t_eos=t_eos,
    )
    if len(labels) > utt.num_frames:
        raise ConfigError(
            "CorpusSpec: generated an utterance with more labels than frames; "
            "increase silence ranges or frames_per_token"
        )
    return utt


def generate_corpus(spec: CorpusSpec) -> list[Utterance]:
    """Deterministic corpus; utterance i depends only on (spec, i)."""
    spec.validate()
    bank = prototype_bank(spec)
    return [_generate_utterance(spec, bank, i) for i in range(spec.num_utterances)]


def _id_hash(utt_id: str) -> int:
    return int.from_bytes(hashlib.sha256(utt_id.encode("utf-8")).digest()[:8], "big")


def split_corpus(
    corpus: list[Utterance], train_fraction: float
) -> tuple[list[Utterance], list[Utterance]]:
    """Disjoint, covering split keyed by a stable hash of the utterance id."""
    if not 0.0 < train_fraction < 1.0:
        raise UsageError("split_corpus: train_fraction must lie strictly between 0 and 1")
    ranked = sorted(corpus, key=lambda u: (_id_hash(u.id), u.id))
    k = int(round(train_fraction * len(corpus)))
    k = min(max(k, 0), len(corpus))
    return ranked[:k], ranked[k:]


# ---------------------------------------------------------------------------
# Record file format (see README "Corpus file" for the byte layout)
# ---------------------------------------------------------------------------


def _spec_to_json(spec: CorpusSpec) -> bytes:
    return json.dumps(asdict(spec), sort_keys=True).encode("utf-8")


def _spec_from_json(blob: bytes) -> CorpusSpec:
    d = json.loads(blob.decode("utf-8"))
    for key in ("tokens_per_utterance", "leading_silence_frames", "trailing_silence_frames"):
        d[key] = tuple(d[key])
    return CorpusSpec(**d)


def save_corpus(path: str | Path, spec: CorpusSpec, utterances: list[Utterance]) -> None:
    spec_blob = _spec_to_json(spec)
    with open(path, "wb") as fh:
        fh.write(_MAGIC)
        fh.write(struct.pack("<II", _VERSION, len(utterances)))
        fh.write(struct.pack("<I", len(spec_blob)))
        fh.write(spec_blob)
        for utt in utterances:
            ident = utt.id.encode("utf-8")
            T, d = utt.features.shape
            fh.write(struct.pack("<H", len(ident)))
            fh.write(ident)
            fh.write(struct.pack("<IIII", T, d, utt.t_eos, len(utt.labels)))
            fh.write(np.asarray(utt.labels, dtype="<u4").tobytes())
            fh.write(np.ascontiguousarray(utt.features, dtype="<f8").tobytes())


def load_corpus(path: str | Path) -> tuple[CorpusSpec, list[Utterance]]:
    with open(path, "rb") as fh:
        data = fh.read()
    buf = io.BytesIO(data)
    if buf.read(4) != _MAGIC:
        raise FormatError(f"{path}: not a corpus file")
    version, count = struct.unpack("<II", buf.read(8))
    if version != _VERSION:
        raise FormatError(f"{path}: unsupported corpus version {version}")
    (spec_len,) = struct.unpack("<I", buf.read(4))
    spec = _spec_from_json(buf.read(spec_len))
    utterances = []
    for _ in range(count):
        (id_len,) = struct.unpack("<H", buf.read(2))
        ident = buf.read(id_len).decode("utf-8")
        T, d, t_eos, U = struct.unpack("<IIII", buf.read(16))
        labels = np.frombuffer(buf.read(4 * U), dtype="<u4").astype(np.int64)
        feats = np.frombuffer(buf.read(8 * T * d), dtype="<f8").reshape(T, d).copy()
        utterances.append(Utterance(id=ident, features=feats, labels=labels, t_eos=t_eos))
    return spec, utterances
