"""Input checks shared by the estimators."""
from __future__ import annotations

import numbers

import numpy as np


def check_text_sequence(X, name: str = "X", allow_empty: bool = False) -> list[str]:
    """Coerce an iterable of strings (list, tuple, 1-d array, Series) to a list.

    A bare string is rejected, since iterating it would yield characters.
    """
    if isinstance(X, (str, bytes)):
        raise TypeError(f"{name} must be a sequence of strings, not a single string")
    if isinstance(X, np.ndarray) and X.ndim != 1:
        raise ValueError(f"{name} must be 1-dimensional, got shape {X.shape}")
    try:
        items = list(X)
    except TypeError:
        raise TypeError(f"{name} must be an iterable of strings, got {type(X).__name__}") from None
    for i, item in enumerate(items):
        if not isinstance(item, str):
            raise TypeError(f"{name}[{i}] is {type(item).__name__}, expected str")
    if not items and not allow_empty:
        raise ValueError(f"{name} is empty")
    return items


def check_paired(X, y, allow_empty: bool = False) -> tuple[list[str], list[str]]:
    xs = check_text_sequence(X, "X", allow_empty)
    ys = check_text_sequence(y, "y", allow_empty)
    if len(xs) != len(ys):
        raise ValueError(f"X and y differ in length: {len(xs)} != {len(ys)}")
    return xs, ys


def check_id_sequences(X, name: str = "X") -> list[list[int]]:
    out = []
    for i, seq in enumerate(X):
        row = []
        for v in seq:
            if not isinstance(v, numbers.Integral):
                raise TypeError(f"{name}[{i}] contains non-integer {v!r}")
            row.append(int(v))
        out.append(row)
    return out


def check_word_sequences(X, name: str = "X") -> list[list[str]]:
    """Each row is either a list of words or a space-separated string."""
    out = []
    for i, row in enumerate(X):
        if isinstance(row, str):
            out.append(row.split())
        else:
            words = list(row)
            for w in words:
                if not isinstance(w, str):
                    raise TypeError(f"{name}[{i}] contains non-string {w!r}")
            out.append(words)
    return out
