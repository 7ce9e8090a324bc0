"""Version spaces, exact Bayes label prediction, and optimal teaching sets."""

from __future__ import annotations

from functools import lru_cache
from itertools import combinations
from typing import Iterable, Sequence

import numpy as np

from .errors import InconsistencyError
from .hypotheses import ClassTuple, label_of

__all__ = [
    "version_space",
    "bayes_predict_label",
    "optimal_teaching_set",
    "minimal_teaching_sets",
]

Pair = tuple[int, int]


def version_space(members: Sequence[int], observations: Iterable[Pair]) -> ClassTuple:
    """Members of the class consistent with every (x, y) observation."""
    alive = list(members)
    for x, y in observations:
        if y not in (0, 1):
            raise ValueError(f"label must be 0 or 1, got {y}")
        alive = [h for h in alive if label_of(h, x) == y]
        if not alive:
            return ()
    return tuple(alive)


def bayes_predict_label(
    members: Sequence[int],
    observations: Sequence[Pair],
    query_x: int,
    rng: np.random.Generator | None = None,
) -> tuple[int, bool]:
    """Majority-vote label of the version space at ``query_x``.

    Returns ``(label, tied)``.  Ties are broken by ``rng`` when given and in
    favor of label 0 otherwise; analytic accuracy computations should score a
    tie as 1/2 rather than resolving it.
    """
    space = version_space(members, observations)
    if not space:
        raise InconsistencyError("observations are inconsistent with every class member")
    ones = sum(label_of(h, query_x) for h in space)
    zeros = len(space) - ones
    if ones == zeros:
        label = int(rng.integers(2)) if rng is not None else 0
        return label, True
    return (1 if ones > zeros else 0), False


def _pairs_for(hypothesis_id: int, xs: Iterable[int]) -> tuple[Pair, ...]:
    return tuple((x, label_of(hypothesis_id, x)) for x in xs)


@lru_cache(maxsize=1 << 16)
def _minimal_input_sets(members: ClassTuple, hypothesis_id: int, n: int) -> tuple[tuple[int, ...], ...]:
    """All minimum-cardinality input sets whose labels isolate the hypothesis.

    Input sets are searched in size order and, within a size, in
    lexicographic order, so the first entry is the canonical teaching set.
    """
    if hypothesis_id not in members:
        raise ValueError(f"hypothesis {hypothesis_id} is not a member of the class")
    others = [h for h in members if h != hypothesis_id]
    if not others:
        return ((),)
    for size in range(1, n + 1):
        found = [
            xs
            for xs in combinations(range(n), size)
            # xs isolates h iff every rival disagrees with h somewhere on xs
            if all(any(label_of(o, x) != label_of(hypothesis_id, x) for x in xs) for o in others)
        ]
        if found:
            return tuple(found)
    raise InconsistencyError("class contains duplicate hypotheses")  # pragma: no cover


def minimal_teaching_sets(
    members: Sequence[int], hypothesis_id: int, n: int
) -> tuple[tuple[Pair, ...], ...]:
    """Every minimum-size teaching set for the hypothesis within the class."""
    sets = _minimal_input_sets(tuple(members), hypothesis_id, n)
    return tuple(_pairs_for(hypothesis_id, xs) for xs in sets)


def optimal_teaching_set(
    members: Sequence[int],
    hypothesis_id: int,
    n: int,
    rng: np.random.Generator | None = None,
) -> tuple[Pair, ...]:
    """Smallest (x, y) set that uniquely identifies the hypothesis in-class.

    Deterministically the lexicographically smallest minimum input set; pass
    ``rng`` to draw uniformly among all minimum sets instead.
    """
    sets = _minimal_input_sets(tuple(members), hypothesis_id, n)
    xs = sets[int(rng.integers(len(sets)))] if rng is not None else sets[0]
    return _pairs_for(hypothesis_id, xs)
