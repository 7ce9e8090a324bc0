"""Finite hypothesis universes, classes, pool splits, and generalization setups.

A hypothesis over an input space of size ``n`` is a binary labeling of the
inputs, stored as an integer bitmask: bit ``j`` of the id is the label of
input ``j``.  A hypothesis class is a canonically sorted tuple of distinct
ids, so two classes with the same member set compare equal.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable, Iterator, Sequence

import numpy as np

from .errors import CapacityError, ConfigError
from .rng import stream

__all__ = [
    "GENERALIZATION_KINDS",
    "MAX_INPUT_SPACE",
    "Hypothesis",
    "HypothesisUniverse",
    "PoolSplit",
    "GeneralizationSetup",
    "label_of",
    "enumerate_universe",
    "split_pools",
    "count_classes",
    "sample_classes",
    "build_class_sets",
    "build_generalization_setup",
]

GENERALIZATION_KINDS = ("id-class", "ood-class", "id-size", "ood-size")

# 2^n hypotheses are enumerated eagerly in several code paths.
MAX_INPUT_SPACE = 20

# Below this many candidate classes we enumerate them all and shuffle;
# above it we rejection-sample distinct classes.
ENUMERATION_CAP = 1_000_000

ClassTuple = tuple[int, ...]


def label_of(hypothesis_id: int, x: int) -> int:
    """Label assigned to input ``x`` by the hypothesis bitmask."""
    return (hypothesis_id >> x) & 1


@dataclass(frozen=True)
class Hypothesis:
    """One binary labeling of ``n`` inputs, identified by its bitmask."""

    id: int
    n: int

    def __post_init__(self) -> None:
        if not 0 <= self.id < (1 << self.n):
            raise ValueError(f"hypothesis id {self.id} out of range for n={self.n}")

    def label(self, x: int) -> int:
        if not 0 <= x < self.n:
            raise ValueError(f"input index {x} out of range for n={self.n}")
        return label_of(self.id, x)

    def labels(self) -> tuple[int, ...]:
        return tuple(label_of(self.id, x) for x in range(self.n))


@dataclass(frozen=True)
class HypothesisUniverse:
    """All 2^n labelings of an input space of size ``n``."""

    n: int

    @property
    def size(self) -> int:
        return 1 << self.n

    def ids(self) -> range:
        return range(self.size)

    def __len__(self) -> int:
        return self.size

    def __iter__(self) -> Iterator[Hypothesis]:
        return (Hypothesis(i, self.n) for i in self.ids())

    def __contains__(self, hypothesis_id: int) -> bool:
        return 0 <= hypothesis_id < self.size


@dataclass(frozen=True)
class PoolSplit:
    """Disjoint hypothesis pools for training/ID-testing vs OOD-testing."""

    id_pool: ClassTuple
    ood_pool: ClassTuple

    def __post_init__(self) -> None:
        if set(self.id_pool) & set(self.ood_pool):
            raise ValueError("id_pool and ood_pool overlap")


def enumerate_universe(n: int) -> HypothesisUniverse:
    """Universe of all binary hypotheses over ``n`` inputs."""
    if not 1 <= n <= MAX_INPUT_SPACE:
        raise ValueError(f"input-space size must be in [1, {MAX_INPUT_SPACE}], got {n}")
    return HypothesisUniverse(n)


def split_pools(
    universe: HypothesisUniverse, id_size: int, ood_size: int, seed: int | np.random.Generator
) -> PoolSplit:
    """Uniformly random disjoint pools of the requested sizes."""
    if id_size < 0 or ood_size < 0:
        raise ValueError("pool sizes must be non-negative")
    if id_size + ood_size > universe.size:
        raise CapacityError(
            f"pool sizes {id_size}+{ood_size} exceed universe of {universe.size}"
        )
    rng = seed if isinstance(seed, np.random.Generator) else stream(seed, "pools")
    perm = rng.permutation(universe.size)
    id_pool = tuple(sorted(int(i) for i in perm[:id_size]))
    ood_pool = tuple(sorted(int(i) for i in perm[id_size : id_size + ood_size]))
    return PoolSplit(id_pool=id_pool, ood_pool=ood_pool)


def count_classes(pool_size: int, m: int) -> int:
    """Number of distinct hypothesis classes of size ``m`` from a pool."""
    if pool_size < 0:
        raise ValueError("pool_size must be non-negative")
    if not 0 <= m <= pool_size:
        raise CapacityError(f"class size {m} out of range for pool of {pool_size}")
    return math.comb(pool_size, m)


def _total_classes(pool_size: int, sizes: Sequence[int]) -> int:
    return sum(count_classes(pool_size, m) for m in sizes)


def _enumerate_all_classes(pool: Sequence[int], sizes: Sequence[int]) -> list[ClassTuple]:
    from itertools import combinations

    ordered = sorted(pool)
    out: list[ClassTuple] = []
    for m in sorted(sizes):
        out.extend(combinations(ordered, m))
    return out


def sample_classes(
    pool: Sequence[int],
    sizes: Iterable[int],
    count: int,
    rng: np.random.Generator,
    *,
    exclude: Iterable[ClassTuple] = (),
    enumeration_cap: int = ENUMERATION_CAP,
) -> list[ClassTuple]:
    """Draw ``count`` distinct classes with sizes in ``sizes``, uniformly.

    Uniform over the union of all classes of the given sizes (so a size's
    share is proportional to how many classes it has), excluding any class
    in ``exclude``.
    """
    pool = tuple(sorted(set(int(p) for p in pool)))
    sizes = tuple(sorted(set(int(m) for m in sizes)))
    if not sizes:
        raise ConfigError("at least one class size is required")
    for m in sizes:
        if m < 1:
            raise ConfigError(f"class sizes must be >= 1, got {m}")
        if m > len(pool):
            raise CapacityError(f"class size {m} exceeds pool of {len(pool)}")
    excluded = {tuple(sorted(c)) for c in exclude}
    total = _total_classes(len(pool), sizes)
    available = total - sum(1 for c in excluded if len(c) in sizes and set(c) <= set(pool))
    if count > available:
        raise CapacityError(
            f"requested {count} classes but only {available} are available "
            f"(pool {len(pool)}, sizes {sizes})"
        )

    if total <= enumeration_cap:
        universe = [c for c in _enumerate_all_classes(pool, sizes) if c not in excluded]
        rng.shuffle(universe)
        return universe[:count]

    # Rejection sampling: pick the size with probability proportional to its
    # class count, then a uniform subset of that size; a seen-set keeps draws
    # distinct.
    weights = np.array([count_classes(len(pool), m) for m in sizes], dtype=np.float64)
    weights /= weights.sum()
    pool_arr = np.array(pool, dtype=np.int64)
    seen: set[ClassTuple] = set(excluded)
    out: list[ClassTuple] = []
    while len(out) < count:
        m = sizes[int(rng.choice(len(sizes), p=weights))]
        members = tuple(sorted(int(i) for i in rng.choice(pool_arr, size=m, replace=False)))
        if members in seen:
            continue
        seen.add(members)
        out.append(members)
    return out


def build_class_sets(
    pool: Sequence[int],
    sizes: Iterable[int],
    train_count: int,
    test_count: int,
    seed: int | np.random.Generator,
    *,
    enumeration_cap: int = ENUMERATION_CAP,
) -> tuple[list[ClassTuple], list[ClassTuple]]:
    """Disjoint train/test class lists drawn from one pool.

    When every candidate class can be enumerated under the cap, the full list
    is shuffled once and split, which lets callers exhaust the pool exactly
    (e.g. 12358 + 512 = C(16, 8)); otherwise the train list is rejection
    sampled and the test list is sampled with the train list excluded.
    """
    rng = seed if isinstance(seed, np.random.Generator) else stream(seed, "classes")
    pool = tuple(sorted(set(int(p) for p in pool)))
    sizes = tuple(sorted(set(int(m) for m in sizes)))
    total = _total_classes(len(pool), sizes)
    if train_count + test_count > total:
        raise CapacityError(
            f"requested {train_count}+{test_count} classes but only {total} exist"
        )
    if total <= enumeration_cap:
        universe = _enumerate_all_classes(pool, sizes)
        rng.shuffle(universe)
        return universe[:train_count], universe[train_count : train_count + test_count]
    train = sample_classes(pool, sizes, train_count, rng, enumeration_cap=enumeration_cap)
    test = sample_classes(
        pool, sizes, test_count, rng, exclude=train, enumeration_cap=enumeration_cap
    )
    return train, test


@dataclass(frozen=True)
class GeneralizationSetup:
    """Train/test hypothesis-class collections for one generalization kind."""

    kind: str
    n: int
    train_sizes: tuple[int, ...]
    test_sizes: tuple[int, ...]
    train_classes: tuple[ClassTuple, ...]
    test_classes: tuple[ClassTuple, ...]
    pool_split: PoolSplit
    seed: int

    def __post_init__(self) -> None:
        if self.kind not in GENERALIZATION_KINDS:
            raise ConfigError(f"unknown generalization kind {self.kind!r}")
        train_set = set(self.train_classes)
        if len(train_set) != len(self.train_classes):
            raise ValueError("duplicate training classes")
        if train_set & set(self.test_classes):
            raise ValueError("train and test classes overlap")
        if self.kind in ("ood-class", "ood-size"):
            ood = set(self.pool_split.ood_pool)
            idp = set(self.pool_split.id_pool)
            if not all(set(c) <= ood for c in self.test_classes):
                raise ValueError("test classes must draw only from the OOD pool")
            if not all(set(c) <= idp for c in self.train_classes):
                raise ValueError("train classes must draw only from the ID pool")


def build_generalization_setup(
    kind: str,
    n: int,
    *,
    id_pool_size: int,
    ood_pool_size: int,
    train_sizes: Iterable[int],
    test_sizes: Iterable[int],
    train_count: int,
    test_count: int,
    seed: int,
    train_pool_size: int | None = None,
    enumeration_cap: int = ENUMERATION_CAP,
) -> GeneralizationSetup:
    """Build a full generalization setup from pool/class-count parameters.

    ``test_count`` is a per-size cap for the size kinds (capped at what the
    pool offers, mirroring min{cap, #possible}) and an exact count otherwise.
    Random streams are keyed by purpose, so two setups built with the same
    seed but different kinds share the same pool split and training classes.

    ``train_pool_size``, when given, restricts training classes to a random
    subset of the ID pool of that size (pretraining-diversity sweeps); test
    classes still use the full pools.
    """
    if kind not in GENERALIZATION_KINDS:
        raise ConfigError(f"unknown generalization kind {kind!r}")
    train_sizes = tuple(sorted(set(int(m) for m in train_sizes)))
    test_sizes = tuple(sorted(set(int(m) for m in test_sizes)))
    universe = enumerate_universe(n)
    pools = split_pools(universe, id_pool_size, ood_pool_size, stream(seed, "pools"))
    if kind in ("ood-class", "ood-size") and not pools.ood_pool:
        raise ConfigError(f"{kind} requires a non-empty OOD pool")

    train_pool = pools.id_pool
    if train_pool_size is not None:
        if train_pool_size > len(pools.id_pool):
            raise CapacityError(
                f"train_pool_size {train_pool_size} exceeds ID pool of {len(pools.id_pool)}"
            )
        rng = stream(seed, "train-pool")
        picked = rng.choice(len(pools.id_pool), size=train_pool_size, replace=False)
        train_pool = tuple(sorted(pools.id_pool[int(i)] for i in picked))

    joint = (
        kind == "id-class"
        and train_sizes == test_sizes
        and train_pool == pools.id_pool
    )
    if joint:
        train, test = build_class_sets(
            pools.id_pool,
            train_sizes,
            train_count,
            test_count,
            stream(seed, "id-classes"),
            enumeration_cap=enumeration_cap,
        )
    else:
        train = sample_classes(
            train_pool,
            train_sizes,
            train_count,
            stream(seed, "id-classes"),
            enumeration_cap=enumeration_cap,
        )
        if kind in ("id-class", "id-size"):
            test_pool, test_stream = pools.id_pool, "id-test"
            exclude: list[ClassTuple] = list(train)
        else:
            test_pool, test_stream = pools.ood_pool, "ood-test"
            exclude = []
        rng = stream(seed, test_stream)
        if kind in ("id-size", "ood-size"):
            test: list[ClassTuple] = []
            for m in test_sizes:
                possible = count_classes(len(test_pool), m)
                taken = sum(1 for c in exclude if len(c) == m)
                per_size = min(test_count, possible - taken)
                test.extend(
                    sample_classes(
                        test_pool, (m,), per_size, rng,
                        exclude=exclude, enumeration_cap=enumeration_cap,
                    )
                )
        else:
            test = sample_classes(
                test_pool, test_sizes, test_count, rng,
                exclude=exclude, enumeration_cap=enumeration_cap,
            )

    return GeneralizationSetup(
        kind=kind,
        n=n,
        train_sizes=train_sizes,
        test_sizes=test_sizes,
        train_classes=tuple(train),
        test_classes=tuple(test),
        pool_split=pools,
        seed=seed,
    )
