"""Binary codebooks: extraction from trained models, audits, file format.

A codebook is the set of deterministic codewords a trained encoder emits for
one dimming target.  The text format is one codeword per line (0/1 digits)
after three header fields.
"""

from __future__ import annotations

from dataclasses import dataclass
from itertools import combinations

import numpy as np

from .binarize import deterministic_binarize
from .channel import LINEAR_LED, led_forward


@dataclass
class Codebook:
    n: int
    m: int
    dimming: float
    words: np.ndarray          # (m, n) uint8
    provenance: str = "learned"

    def __post_init__(self):
        words = np.asarray(self.words, dtype=np.uint8)
        if words.shape != (self.m, self.n):
            raise ValueError(f"expected {self.m}x{self.n} codewords, got {words.shape}")
        if not np.isin(words, (0, 1)).all():
            raise ValueError("codewords must be binary")
        self.words = words

    def __iter__(self):
        return iter(self.words)


@dataclass(frozen=True)
class CodebookAudit:
    average_weight: float
    min_distance: int
    duplicates: int
    weights: tuple


def audit(codebook):
    """Average Hamming weight, minimum pairwise distance, duplicate count."""
    words = codebook.words.astype(np.int64)
    if len(words) < 2:
        raise ValueError("audit needs at least two codewords")
    weights = words.sum(axis=1)
    dmin = min(int(np.abs(a - b).sum()) for a, b in combinations(words, 2))
    duplicates = len(words) - len(np.unique(words, axis=0))
    return CodebookAudit(average_weight=float(weights.mean()),
                         min_distance=dmin,
                         duplicates=duplicates,
                         weights=tuple(int(w) for w in weights))


def distance_spectrum(codebook):
    """Sorted multiset of pairwise Hamming distances."""
    words = codebook.words.astype(np.int64)
    return tuple(sorted(int(np.abs(a - b).sum())
                        for a, b in combinations(words, 2)))


def average_power(codebook, led=LINEAR_LED):
    """Mean per-codeword emitted power sum (equals average weight when linear)."""
    vals = led_forward(codebook.words.astype(np.float64), led)
    return float(vals.sum() / codebook.m)


def flip_complement(codebook):
    """Complement view serving the mirrored dimming target n - d."""
    return Codebook(codebook.n, codebook.m, codebook.n - codebook.dimming,
                    1 - codebook.words, provenance=codebook.provenance)


def extract_codebook(model, binarizer, d):
    """Deterministic codewords of a trained model at dimming target ``d``."""
    u = model.forward_encoder(np.arange(model.m), np.full(model.m, float(d)),
                              train=False)
    s = deterministic_binarize(u, np.full(model.m, binarizer.offset(d)))
    return Codebook(model.n, model.m, float(d), s.astype(np.uint8))


def save_codebook(codebook, path):
    lines = ["# ooklearn codebook",
             f"N {codebook.n}",
             f"M {codebook.m}",
             f"d {codebook.dimming!r}"]
    lines += ["".join(str(int(b)) for b in w) for w in codebook.words]
    with open(path, "w", encoding="ascii") as fh:
        fh.write("\n".join(lines) + "\n")


class CodebookFormatError(ValueError):
    """Malformed codebook file; message carries the offending line number."""


def load_codebook(path):
    with open(path, "r", encoding="ascii") as fh:
        raw = fh.read().splitlines()
    header = {}
    words = []
    n = None
    for lineno, line in enumerate(raw, start=1):
        text = line.strip()
        if not text or text.startswith("#"):
            continue
        parts = text.split()
        if len(parts) == 2 and parts[0] in ("N", "M", "d") and parts[0] not in header:
            try:
                header[parts[0]] = int(parts[1]) if parts[0] in ("N", "M") else float(parts[1])
            except ValueError:
                raise CodebookFormatError(
                    f"{path}: line {lineno}: bad value for {parts[0]}: {parts[1]!r}") from None
            continue
        if len(header) < 3:
            raise CodebookFormatError(
                f"{path}: line {lineno}: expected N/M/d header before codewords")
        if n is None:
            n = header["N"]
        if set(text) - {"0", "1"}:
            raise CodebookFormatError(
                f"{path}: line {lineno}: codeword must be 0/1 digits, got {text!r}")
        if len(text) != n:
            raise CodebookFormatError(
                f"{path}: line {lineno}: codeword length {len(text)} != N={n}")
        words.append([int(c) for c in text])
    if len(header) < 3:
        raise CodebookFormatError(f"{path}: missing N/M/d header")
    if len(words) != header["M"]:
        raise CodebookFormatError(
            f"{path}: expected M={header['M']} codewords, found {len(words)}")
    return Codebook(header["N"], header["M"], header["d"],
                    np.array(words, dtype=np.uint8), provenance=str(path))


# Bundled reference codebooks (published length-8 designs), used as
# regression fixtures for the audit path.
_FIXTURE_WORDS = {
    "IIa": (4.0, """
        01110111 10000101 01011000 10101010
    """),
    "IIb": (2.5, """
        10010001 01010000 01000011 00011010
        00100001 10100010 11001000 00000100
    """),
    "IIc": (3.5, """
        11001001 10101010 00010110 00110000
        01000010 00000101 00011011 01110011
        01101111 10011100 10100111 01011000
        10000000 01100100 11010101 00101001
    """),
    "IId": (4.0, """
        01011001 00101011 01111110 00110000
        01000010 00010111 10011010 11110011
        11001111 00001100 10100110 11101000
        10000001 01100101 11010100 10111101
    """),
}

FIXTURE_IDS = tuple(sorted(_FIXTURE_WORDS))


def load_fixture(fixture_id):
    """One of the bundled reference codebooks (ids ``IIa`` .. ``IId``)."""
    if fixture_id not in _FIXTURE_WORDS:
        raise ValueError(f"unknown fixture {fixture_id!r}; have {FIXTURE_IDS}")
    dimming, blob = _FIXTURE_WORDS[fixture_id]
    words = np.array([[int(c) for c in w] for w in blob.split()], dtype=np.uint8)
    return Codebook(words.shape[1], words.shape[0], dimming, words,
                    provenance=f"fixture:{fixture_id}")
