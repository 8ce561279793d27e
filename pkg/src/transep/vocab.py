"""Symbol-id conventions shared by data generation, models, and decoding.

The token vocabulary has ``vocab_size`` entries.  The end-of-speech token
sits at the last vocabulary index; blank (the non-emission symbol) is one
past the vocabulary and never appears in label sequences.
"""

from __future__ import annotations

from typing import Iterable, Sequence


def eos_id(vocab_size: int) -> int:
    return vocab_size - 1


def blank_id(vocab_size: int) -> int:
    return vocab_size


def strip_eos(tokens: Sequence[int], vocab_size: int) -> tuple[int, ...]:
    """Drop a trailing end-of-speech token if present."""
    toks = tuple(tokens)
    if toks and toks[-1] == eos_id(vocab_size):
        return toks[:-1]
    return toks


def ends_with_eos(tokens: Iterable[int], vocab_size: int) -> bool:
    toks = tuple(tokens)
    return bool(toks) and toks[-1] == eos_id(vocab_size)
