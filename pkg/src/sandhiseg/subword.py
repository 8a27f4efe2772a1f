"""Subword vocabulary ("gibberish vocabulary") learned by likelihood-gain merges.

Spaces are rewritten to ``_`` before learning, so a piece can straddle a word
boundary. Encoding picks the segmentation with the highest total piece score;
decoding concatenates pieces and turns ``_`` back into spaces.
"""
from __future__ import annotations

import math
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from .validation import check_id_sequences, check_text_sequence

SPACE_MARKER = "_"
PAD, BOS, EOS, UNK = 0, 1, 2, 3
SPECIALS = ("<pad>", "<s>", "</s>", "<unk>")
MIN_MERGE_COUNT = 2
HEADER_PREFIX = "#gibberish-vocab v1 size="


class VocabFormatError(ValueError):
    pass


@dataclass
class SubwordVocab:
    """Piece inventory with log-probability scores; ids are list positions.

    ``merges`` records the learned merge order; it is informational and is not
    written to the vocab file.
    """

    pieces: list[str]
    scores: list[float]
    merges: list[tuple[str, str]] = field(default_factory=list, compare=False)

    def __post_init__(self):
        if len(self.pieces) != len(self.scores):
            raise ValueError("pieces and scores differ in length")
        if tuple(self.pieces[:4]) != SPECIALS:
            raise ValueError("the first four pieces must be the specials")
        self.id_of = {}
        for i, p in enumerate(self.pieces):
            if p in self.id_of:
                raise ValueError(f"duplicate piece {p!r}")
            self.id_of[p] = i
        regular = self.pieces[4:]
        self.alphabet = frozenset(p for p in regular if len(p) == 1)
        self.max_piece_len = max((len(p) for p in regular), default=1)

    def __len__(self) -> int:
        return len(self.pieces)

    def __eq__(self, other) -> bool:
        if not isinstance(other, SubwordVocab):
            return NotImplemented
        return self.pieces == other.pieces and self.scores == other.scores


# -- learning ---------------------------------------------------------------

def _merge_sequence(seq: list[str], x: str, y: str) -> list[str]:
    out = []
    i = 0
    n = len(seq)
    while i < n:
        if i + 1 < n and seq[i] == x and seq[i + 1] == y:
            out.append(x + y)
            i += 2
        else:
            out.append(seq[i])
            i += 1
    return out


def _better(cand, best) -> bool:
    """Candidate (count, count_x, count_y, merged, pair) beats best?

    Order: higher count(xy)/(count(x)count(y)), then higher count(xy), then the
    lexicographically smaller merged string, then the smaller (x, y) pair.
    Scores are compared exactly by cross-multiplication.
    """
    c, cx, cy, merged, pair = cand
    bc, bx, by, bmerged, bpair = best
    lhs = c * bx * by
    rhs = bc * cx * cy
    if lhs != rhs:
        return lhs > rhs
    if c != bc:
        return c > bc
    if merged != bmerged:
        return merged < bmerged
    return pair < bpair


def learn_vocab(lines: Sequence[str], target_size: int) -> SubwordVocab:
    """Greedily merge the adjacent piece pair with the largest likelihood gain.

    The gain of merging (x, y) is scored count(xy) / (count(x) * count(y)) over
    the current segmentation; only pairs seen at least twice are eligible.
    Learning stops once the inventory (specials included) reaches
    ``target_size`` or no eligible pair remains.
    """
    lines = list(lines)
    if not lines:
        raise ValueError("cannot learn a vocabulary from an empty corpus")
    line_counts = Counter(line.replace(" ", SPACE_MARKER) for line in lines)
    seqs = [list(text) for text in line_counts]
    weights = list(line_counts.values())

    alphabet = sorted({ch for seq in seqs for ch in seq})
    if not alphabet:
        raise ValueError("cannot learn a vocabulary from an empty corpus")
    if target_size < len(alphabet) + len(SPECIALS):
        raise ValueError(
            f"target_size {target_size} is below alphabet ({len(alphabet)}) + specials ({len(SPECIALS)})"
        )

    piece_count: Counter = Counter()
    pair_count: Counter = Counter()
    pair_lines: dict[tuple[str, str], set[int]] = {}

    def account(idx: int, sign: int) -> None:
        seq, w = seqs[idx], weights[idx] * sign
        for p in seq:
            piece_count[p] += w
        for pair in zip(seq, seq[1:]):
            pair_count[pair] += w
            if sign > 0:
                pair_lines.setdefault(pair, set()).add(idx)

    for idx in range(len(seqs)):
        account(idx, +1)

    pieces = list(SPECIALS) + alphabet
    known = set(pieces)
    merges: list[tuple[str, str]] = []
    while len(pieces) < target_size:
        best = None
        for pair, c in pair_count.items():
            if c < MIN_MERGE_COUNT:
                continue
            cand = (c, piece_count[pair[0]], piece_count[pair[1]], pair[0] + pair[1], pair)
            if best is None or _better(cand, best):
                best = cand
        if best is None:
            break
        x, y = best[4]
        merges.append((x, y))
        merged = x + y
        if merged not in known:
            known.add(merged)
            pieces.append(merged)
        for idx in sorted(pair_lines.pop((x, y), ())):
            account(idx, -1)
            seqs[idx] = _merge_sequence(seqs[idx], x, y)
            account(idx, +1)
        for pair in [p for p, c in pair_count.items() if c == 0]:
            del pair_count[pair]
            pair_lines.pop(pair, None)

    total = sum(c for c in piece_count.values() if c > 0)
    scores = [0.0] * len(SPECIALS)
    for p in pieces[len(SPECIALS):]:
        # unseen pieces are floored at one occurrence so they stay usable
        scores.append(math.log(max(piece_count[p], 1) / total))
    return SubwordVocab(pieces, scores, merges)


# -- encoding ---------------------------------------------------------------

def _segment_known(text: str, vocab: SubwordVocab) -> list[int]:
    """Best-scoring segmentation of an all-in-alphabet string."""
    n = len(text)
    id_of, scores, maxlen = vocab.id_of, vocab.scores, vocab.max_piece_len
    best = [-math.inf] * (n + 1)
    best[n] = 0.0
    for i in range(n - 1, -1, -1):
        top = -math.inf
        for j in range(min(n, i + maxlen), i, -1):
            pid = id_of.get(text[i:j])
            if pid is not None and pid >= len(SPECIALS):
                s = scores[pid] + best[j]
                if s > top:
                    top = s
        best[i] = top
    out = []
    i = 0
    while i < n:
        # longest piece that attains the optimum from position i
        for j in range(min(n, i + maxlen), i, -1):
            pid = id_of.get(text[i:j])
            if pid is not None and pid >= len(SPECIALS) and scores[pid] + best[j] == best[i]:
                out.append(pid)
                i = j
                break
        else:  # pragma: no cover - single characters always reach the optimum
            raise AssertionError("segmentation backtrack failed")
    return out


def encode_pieces(text: str, vocab: SubwordVocab) -> list[int]:
    """Encode text to piece ids; each out-of-alphabet character becomes one unk."""
    text = text.replace(" ", SPACE_MARKER)
    out: list[int] = []
    start = 0
    for k, ch in enumerate(text):
        if ch not in vocab.alphabet:
            if k > start:
                out.extend(_segment_known(text[start:k], vocab))
            out.append(UNK)
            start = k + 1
    if start < len(text):
        out.extend(_segment_known(text[start:], vocab))
    return out


def decode_pieces(ids: Iterable[int], vocab: SubwordVocab) -> str:
    parts = []
    for i in ids:
        i = int(i)
        if not 0 <= i < len(vocab):
            raise ValueError(f"piece id {i} out of range for vocabulary of size {len(vocab)}")
        if i >= len(SPECIALS):
            parts.append(vocab.pieces[i])
    return "".join(parts).replace(SPACE_MARKER, " ")


def realized_ids(lines: Iterable[str], vocab: SubwordVocab) -> list[int]:
    """Sorted ids of pieces used when encoding ``lines``, specials always included."""
    used = set(range(len(SPECIALS)))
    for line in lines:
        used.update(encode_pieces(line, vocab))
    return sorted(used)


# -- files ------------------------------------------------------------------

def format_vocab(vocab: SubwordVocab) -> str:
    rows = [f"{HEADER_PREFIX}{len(vocab)}\n"]
    for p, s in zip(vocab.pieces, vocab.scores):
        rows.append(f"{p}\t{s!r}\n")
    return "".join(rows)


def save_vocab(vocab: SubwordVocab, path) -> None:
    Path(path).write_bytes(format_vocab(vocab).encode("utf-8"))


def parse_vocab(text: str, source: str = "<string>") -> SubwordVocab:
    lines = text.split("\n")
    if lines and lines[-1] == "":
        lines.pop()
    if not lines or not lines[0].startswith(HEADER_PREFIX):
        raise VocabFormatError(f"{source}:1: missing '{HEADER_PREFIX}<N>' header")
    try:
        size = int(lines[0][len(HEADER_PREFIX):])
    except ValueError:
        raise VocabFormatError(f"{source}:1: bad size in header") from None
    pieces, scores, seen = [], [], {}
    for lineno, line in enumerate(lines[1:], start=2):
        parts = line.split("\t")
        if len(parts) != 2 or not parts[0]:
            raise VocabFormatError(f"{source}:{lineno}: expected 'piece<TAB>score'")
        piece, raw = parts
        try:
            score = float(raw)
        except ValueError:
            raise VocabFormatError(f"{source}:{lineno}: bad score {raw!r}") from None
        if piece in seen:
            raise VocabFormatError(
                f"{source}:{lineno}: duplicate piece {piece!r} (first on line {seen[piece]})"
            )
        seen[piece] = lineno
        pieces.append(piece)
        scores.append(score)
    if tuple(pieces[:4]) != SPECIALS:
        raise VocabFormatError(f"{source}:2: specials {SPECIALS} must occupy ids 0..3")
    if len(pieces) != size:
        raise VocabFormatError(f"{source}:1: header says size={size}, file has {len(pieces)} pieces")
    return SubwordVocab(pieces, scores)


def load_vocab(path) -> SubwordVocab:
    return parse_vocab(Path(path).read_text(encoding="utf-8"), str(path))


class GibberishVocab(TransformerMixin, BaseEstimator):
    """Transformer wrapper: text lines in, piece-id lists out.

    ``fit(X, y)`` learns one shared vocabulary over source lines ``X`` and,
    when given, target lines ``y``.
    """

    def __init__(self, target_size: int = 8000):
        self.target_size = target_size

    def fit(self, X, y=None):
        lines = check_text_sequence(X, "X")
        if y is not None:
            lines = lines + check_text_sequence(y, "y")
        self.vocab_ = learn_vocab(lines, self.target_size)
        return self

    def transform(self, X):
        check_is_fitted(self, "vocab_")
        return [encode_pieces(line, self.vocab_) for line in check_text_sequence(X, "X")]

    def inverse_transform(self, X):
        check_is_fitted(self, "vocab_")
        return [decode_pieces(ids, self.vocab_) for ids in check_id_sequences(X, "X")]
