"""Parallel corpus container and the shared TSV file format.

One pair per line: ``sandhied<TAB>unsandhied``, UTF-8, LF line endings.
"""
from __future__ import annotations

import hashlib
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Iterator, Sequence


class CorpusFormatError(ValueError):
    pass


@dataclass
class ParallelCorpus:
    """Ordered (sandhied, unsandhied) string pairs."""

    pairs: list[tuple[str, str]] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.pairs)

    def __iter__(self) -> Iterator[tuple[str, str]]:
        return iter(self.pairs)

    def __getitem__(self, idx):
        if isinstance(idx, slice):
            return ParallelCorpus(self.pairs[idx])
        return self.pairs[idx]

    @property
    def sources(self) -> list[str]:
        return [s for s, _ in self.pairs]

    @property
    def targets(self) -> list[str]:
        return [t for _, t in self.pairs]

    def lines(self) -> list[str]:
        """Both sides, source then target per pair (input for vocabulary learning)."""
        out = []
        for s, t in self.pairs:
            out.append(s)
            out.append(t)
        return out


def format_corpus(corpus: Iterable[tuple[str, str]]) -> str:
    rows = []
    for i, (s, t) in enumerate(corpus):
        for side in (s, t):
            if "\t" in side or "\n" in side or "\r" in side:
                raise CorpusFormatError(f"pair {i}: field contains TAB or newline")
        rows.append(f"{s.rstrip()}\t{t.rstrip()}\n")
    return "".join(rows)


def write_corpus(corpus: Iterable[tuple[str, str]], path) -> None:
    Path(path).write_bytes(format_corpus(corpus).encode("utf-8"))


def parse_corpus(text: str, source: str = "<string>") -> ParallelCorpus:
    pairs = []
    for lineno, line in enumerate(text.split("\n"), start=1):
        line = line.rstrip("\r")
        if not line:
            continue
        parts = line.split("\t")
        if len(parts) != 2:
            raise CorpusFormatError(
                f"{source}:{lineno}: expected 2 TAB-separated fields, got {len(parts)}"
            )
        pairs.append((parts[0], parts[1]))
    return ParallelCorpus(pairs)


def read_corpus(path) -> ParallelCorpus:
    return parse_corpus(Path(path).read_text(encoding="utf-8"), str(path))


def pair_bucket(pair: tuple[str, str], seed: int) -> float:
    """Stable pseudo-uniform value in [0, 1) derived from the pair text and seed."""
    h = hashlib.sha256(f"{seed}\x00{pair[0]}\x00{pair[1]}".encode("utf-8")).digest()
    return int.from_bytes(h[:8], "big") / 2.0**64


def hash_split(
    corpus: ParallelCorpus,
    test_fraction: float,
    seed: int,
    train_fraction: float | None = None,
    exclude: Sequence[tuple[str, str]] | None = None,
) -> tuple[ParallelCorpus, ParallelCorpus]:
    """Split by a seeded hash of each pair, so membership is stable across runs.

    Pairs whose bucket falls past ``test_fraction + train_fraction``, and pairs
    listed in ``exclude``, end up in neither split.
    """
    if train_fraction is None:
        train_fraction = 1.0 - test_fraction
    for name, frac in (("test_fraction", test_fraction), ("train_fraction", train_fraction)):
        if not 0.0 < frac < 1.0:
            raise ValueError(f"{name} must lie in (0, 1), got {frac}")
    if test_fraction + train_fraction > 1.0 + 1e-12:
        raise ValueError("train_fraction + test_fraction must not exceed 1")
    excluded = set(exclude or ())
    train, test = [], []
    for pair in corpus:
        if pair in excluded:
            continue
        u = pair_bucket(pair, seed)
        if u < test_fraction:
            test.append(pair)
        elif u < test_fraction + train_fraction:
            train.append(pair)
    return ParallelCorpus(train), ParallelCorpus(test)
