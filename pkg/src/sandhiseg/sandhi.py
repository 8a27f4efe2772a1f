"""Rule-driven synthetic sandhi generator.

Words are fused at their boundaries by simple suffix/prefix rewrite rules,
producing (sandhied, unsandhied) pairs for training and testing the splitter.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .corpus import ParallelCorpus

SPACE_MARKER = "_"


class RuleFormatError(ValueError):
    pass


@dataclass(frozen=True)
class SandhiRule:
    left_pattern: str
    right_pattern: str
    replacement: str
    id: str = ""

    def __post_init__(self):
        if not self.left_pattern or not self.right_pattern:
            raise ValueError(f"rule {self.id!r}: patterns must be nonempty")

    def matches(self, left: str, right: str) -> bool:
        return left.endswith(self.left_pattern) and right.startswith(self.right_pattern)

    def rewrite(self, left: str, right: str) -> str:
        return left[: len(left) - len(self.left_pattern)] + self.replacement + right[len(self.right_pattern):]


@dataclass
class SandhiRuleSet:
    """Ordered rules; the first matching rule wins."""

    rules: list[SandhiRule] = field(default_factory=list)
    apply_probability: float = 1.0

    def __post_init__(self):
        if not 0.0 <= self.apply_probability <= 1.0:
            raise ValueError(f"apply_probability must lie in [0, 1], got {self.apply_probability}")
        seen = {}
        for rule in self.rules:
            key = (rule.left_pattern, rule.right_pattern)
            if key in seen:
                raise ValueError(
                    f"rules {seen[key]!r} and {rule.id!r} share patterns {key[0]}+{key[1]}"
                )
            seen[key] = rule.id

    def find(self, left: str, right: str) -> SandhiRule | None:
        for rule in self.rules:
            if rule.matches(left, right):
                return rule
        return None

    def with_probability(self, p: float) -> "SandhiRuleSet":
        return SandhiRuleSet(list(self.rules), p)


@dataclass(frozen=True)
class Lexicon:
    word_forms: tuple[str, ...]

    def __init__(self, words: Iterable[str]):
        forms = tuple(sorted(set(words)))
        if not forms:
            raise ValueError("lexicon is empty")
        for w in forms:
            if not w or " " in w or SPACE_MARKER in w or "\t" in w:
                raise ValueError(f"invalid word form {w!r}")
        object.__setattr__(self, "word_forms", forms)

    def __len__(self) -> int:
        return len(self.word_forms)


def apply_rule(left: str, right: str, rules: SandhiRuleSet) -> str:
    """Fuse two words with the first matching rule, else join with a space."""
    rule = rules.find(left, right)
    if rule is None:
        return left + " " + right
    return rule.rewrite(left, right)


def generate_pair(
    words: Sequence[str], rules: SandhiRuleSet, rng: np.random.Generator
) -> tuple[str, str]:
    """Left-to-right fold over word boundaries.

    Every boundary draws one uniform number; the rule table is consulted only
    when that draw falls below ``rules.apply_probability``.
    """
    if len(words) == 0:
        raise ValueError("generate_pair needs at least one word")
    chunk = words[0]
    for word in words[1:]:
        if rng.random() < rules.apply_probability:
            chunk = apply_rule(chunk, word, rules)
        else:
            chunk = chunk + " " + word
    return chunk, " ".join(words)


def generate_corpus(
    lexicon: Lexicon,
    n: int,
    len_range: tuple[int, int],
    rules: SandhiRuleSet,
    seed: int,
) -> ParallelCorpus:
    lo, hi = len_range
    if n <= 0:
        raise ValueError(f"n must be positive, got {n}")
    if not 1 <= lo <= hi:
        raise ValueError(f"invalid length range {len_range}")
    if len(lexicon) == 0:
        raise ValueError("lexicon is empty")
    rng = np.random.default_rng(seed)
    forms = lexicon.word_forms
    pairs = []
    for _ in range(n):
        k = int(rng.integers(lo, hi + 1))
        words = [forms[int(i)] for i in rng.integers(0, len(forms), size=k)]
        pairs.append(generate_pair(words, rules, rng))
    return ParallelCorpus(pairs)


# -- files ------------------------------------------------------------------

def parse_rules(text: str, apply_probability: float = 1.0, source: str = "<string>") -> SandhiRuleSet:
    rules = []
    for lineno, line in enumerate(text.splitlines(), start=1):
        if not line.strip() or line.lstrip().startswith("#"):
            continue
        parts = line.split("\t")
        if len(parts) != 4:
            raise RuleFormatError(f"{source}:{lineno}: expected 4 TAB-separated fields, got {len(parts)}")
        left, right, repl, rid = parts
        try:
            rules.append(SandhiRule(left, right, repl, rid))
        except ValueError as exc:
            raise RuleFormatError(f"{source}:{lineno}: {exc}") from None
    try:
        return SandhiRuleSet(rules, apply_probability)
    except ValueError as exc:
        raise RuleFormatError(f"{source}: {exc}") from None


def load_rules(path, apply_probability: float = 1.0) -> SandhiRuleSet:
    return parse_rules(Path(path).read_text(encoding="utf-8"), apply_probability, str(path))


def format_rules(rules: SandhiRuleSet) -> str:
    return "".join(
        f"{r.left_pattern}\t{r.right_pattern}\t{r.replacement}\t{r.id}\n" for r in rules.rules
    )


def load_lexicon(path) -> Lexicon:
    text = Path(path).read_text(encoding="utf-8")
    return Lexicon(w.strip() for w in text.splitlines() if w.strip() and not w.startswith("#"))


def _data_text(name: str) -> str:
    return resources.files("sandhiseg").joinpath("data", name).read_text(encoding="utf-8")


def default_rules(apply_probability: float = 1.0) -> SandhiRuleSet:
    """The shipped eight-rule vowel sandhi table."""
    return parse_rules(_data_text("default_rules.tsv"), apply_probability, "default_rules.tsv")


def default_lexicon() -> Lexicon:
    """The shipped 60-form demonstration lexicon."""
    text = _data_text("lexicon.txt")
    return Lexicon(w.strip() for w in text.splitlines() if w.strip())
