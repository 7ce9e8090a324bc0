"""Episode generation: i.i.d. sampling, teaching-set (Opt-T) sampling, batches.

All sampling is driven by Philox streams keyed on (seed, purpose, index), so
episode ``i`` of a batch is reproducible in isolation and batches can be
generated by parallel workers without changing the serial result.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Sequence

import numpy as np

from .codec import EncodedEpisode, Vocabulary, build_vocabulary, encode_episode, write_episode_file
from .errors import CapacityError, ConfigError, GeneratorBugError, UnsupportedEpisodeError
from .hypotheses import ClassTuple, label_of
from .rng import stream
from .teaching import optimal_teaching_set, version_space

__all__ = [
    "GENERATION_MODES",
    "InputDistribution",
    "EpisodeSpec",
    "Batch",
    "uniform_distribution",
    "imbalanced_distribution",
    "gen_iid_episode",
    "gen_optt_episode",
    "make_batch",
    "episode_stream",
    "write_dataset",
]

GENERATION_MODES = ("iid", "opt-t")

Pair = tuple[int, int]


@dataclass(frozen=True)
class InputDistribution:
    """Probability vector over the input space."""

    probs: tuple[float, ...]

    def __post_init__(self) -> None:
        p = np.asarray(self.probs, dtype=np.float64)
        if p.ndim != 1 or len(p) < 1:
            raise ConfigError("probs must be a non-empty vector")
        if np.any(p <= 0):
            raise ConfigError("probabilities must be positive")
        if abs(float(p.sum()) - 1.0) > 1e-12:
            raise ConfigError(f"probabilities sum to {p.sum()}, not 1")

    @property
    def n(self) -> int:
        return len(self.probs)

    @property
    def disparity(self) -> float:
        p = np.asarray(self.probs)
        return float(p.max() / p.min())

    def as_array(self) -> np.ndarray:
        return np.asarray(self.probs, dtype=np.float64)


def uniform_distribution(n: int) -> InputDistribution:
    return imbalanced_distribution(n, 1.0)


def imbalanced_distribution(n: int, disparity: float) -> InputDistribution:
    """Distribution with max/min probability ratio ``disparity``.

    Unnormalized weights: floor(n/2) copies of 1/sqrt(D), a single 1 when n
    is odd, and sqrt(D) for the remaining inputs.
    """
    if n < 1:
        raise ConfigError("n must be >= 1")
    if disparity < 1:
        raise ConfigError(f"disparity must be >= 1, got {disparity}")
    root = float(np.sqrt(disparity))
    weights = [1.0 / root] * (n // 2)
    if n % 2 == 1:
        weights.append(1.0)
    weights += [root] * (n - len(weights))
    total = sum(weights)
    return InputDistribution(probs=tuple(w / total for w in weights))


@dataclass(frozen=True)
class EpisodeSpec:
    """Everything needed to sample and encode one family of episodes."""

    n: int
    K: int
    L: int
    classes: tuple[ClassTuple, ...]
    generation: str = "iid"
    distribution: InputDistribution | None = None  # None = uniform
    slots: int | None = None  # None = L; 0 disables the class prefix

    def __post_init__(self) -> None:
        if self.K < 1:
            raise ConfigError("context length K must be >= 1")
        if self.generation not in GENERATION_MODES:
            raise ConfigError(f"generation must be one of {GENERATION_MODES}")
        if not self.classes:
            raise ConfigError("the class list is empty")
        if self.distribution is not None and self.distribution.n != self.n:
            raise ConfigError("distribution length does not match the input space")
        for c in self.classes:
            if len(c) > self.L:
                raise CapacityError(f"class of {len(c)} exceeds index pool L={self.L}")

    @property
    def prefix_slots(self) -> int:
        return self.L if self.slots is None else self.slots

    def probs(self) -> np.ndarray:
        if self.distribution is None:
            return uniform_distribution(self.n).as_array()
        return self.distribution.as_array()

    def vocabulary(self) -> Vocabulary:
        return build_vocabulary(self.n, self.L)


@dataclass(frozen=True)
class Batch:
    """Uniform-(n, L, K) collection of encoded episodes."""

    episodes: tuple[EncodedEpisode, ...]
    tokens: np.ndarray  # (B, T) int64
    y_target_positions: tuple[int, ...]
    z_target_position: int

    @property
    def size(self) -> int:
        return len(self.episodes)


def _pick_class_and_hypothesis(
    spec: EpisodeSpec, rng: np.random.Generator
) -> tuple[ClassTuple, int]:
    members = spec.classes[int(rng.integers(len(spec.classes)))]
    hypothesis = members[int(rng.integers(len(members)))]
    return members, hypothesis


def _shuffled(members: ClassTuple, rng: np.random.Generator) -> ClassTuple:
    order = rng.permutation(len(members))
    return tuple(members[int(i)] for i in order)


def gen_iid_episode(
    spec: EpisodeSpec, rng: np.random.Generator
) -> tuple[ClassTuple, int, tuple[Pair, ...]]:
    """Sample (class, hypothesis, pairs) with i.i.d. inputs.

    The class member order is reshuffled so the prefix slot order carries no
    signal about which member generated the data.
    """
    members, hypothesis = _pick_class_and_hypothesis(spec, rng)
    xs = rng.choice(spec.n, size=spec.K, p=spec.probs())
    pairs = tuple((int(x), label_of(hypothesis, int(x))) for x in xs)
    return _shuffled(members, rng), hypothesis, pairs


def gen_optt_episode(
    spec: EpisodeSpec, rng: np.random.Generator
) -> tuple[ClassTuple, int, tuple[Pair, ...]]:
    """Sample (class, hypothesis, pairs) from the optimal teaching set.

    The teaching set is padded to length K by uniform duplication and then
    uniformly permuted, so the version space of the result is exactly the
    generating hypothesis.
    """
    members, hypothesis = _pick_class_and_hypothesis(spec, rng)
    teaching = optimal_teaching_set(members, hypothesis, spec.n)
    if not teaching:
        raise UnsupportedEpisodeError(
            "a singleton class has an empty teaching set; opt-t episodes are undefined"
        )
    if len(teaching) > spec.K:
        raise CapacityError(
            f"teaching set of {len(teaching)} does not fit context length K={spec.K}"
        )
    extra = rng.integers(0, len(teaching), size=spec.K - len(teaching))
    multiset = list(teaching) + [teaching[int(i)] for i in extra]
    order = rng.permutation(spec.K)
    pairs = tuple(multiset[int(i)] for i in order)
    if version_space(members, pairs) != (hypothesis,):
        raise GeneratorBugError("opt-t episode does not isolate its hypothesis")
    return _shuffled(members, rng), hypothesis, pairs


def _generate(spec: EpisodeSpec, rng: np.random.Generator) -> tuple[ClassTuple, int, tuple[Pair, ...]]:
    if spec.generation == "iid":
        return gen_iid_episode(spec, rng)
    return gen_optt_episode(spec, rng)


def episode_stream(
    spec: EpisodeSpec, count: int, seed: int, vocab: Vocabulary | None = None
) -> list[EncodedEpisode]:
    """Encode ``count`` episodes; episode ``i`` depends only on (seed, i)."""
    if vocab is None:
        vocab = spec.vocabulary()
    out = []
    for i in range(count):
        rng = stream(seed, "episode", i)
        members, hypothesis, pairs = _generate(spec, rng)
        out.append(
            encode_episode(
                members, hypothesis, pairs, spec.L, vocab, rng, slots=spec.prefix_slots
            )
        )
    return out


def make_batch(spec: EpisodeSpec, batch_size: int, seed: int, vocab: Vocabulary | None = None) -> Batch:
    """A batch of independent episodes with shared target-position metadata."""
    if batch_size < 1:
        raise ConfigError("batch size must be >= 1")
    episodes = episode_stream(spec, batch_size, seed, vocab)
    tokens = np.stack([ep.tokens for ep in episodes])
    return Batch(
        episodes=tuple(episodes),
        tokens=tokens,
        y_target_positions=episodes[0].y_target_positions,
        z_target_position=episodes[0].z_target_position,
    )


def _classes_digest(classes: Sequence[ClassTuple]) -> str:
    blob = json.dumps([list(c) for c in classes]).encode("utf-8")
    return hashlib.sha256(blob).hexdigest()


def write_dataset(
    out_dir: str | Path,
    spec: EpisodeSpec,
    count: int,
    seed: int,
    *,
    config_echo: dict | None = None,
) -> dict:
    """Dump ``count`` episodes plus a manifest for offline reuse."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    vocab = spec.vocabulary()
    episodes = episode_stream(spec, count, seed, vocab)
    episodes_path = out_dir / "episodes.bin"
    header = write_episode_file(episodes_path, episodes, vocab)
    manifest = {
        "format": "hypolab-dataset",
        "version": 1,
        "seed": seed,
        "count": count,
        "generation": spec.generation,
        "n": spec.n,
        "K": spec.K,
        "L": spec.L,
        "slots": spec.prefix_slots,
        "disparity": 1.0 if spec.distribution is None else spec.distribution.disparity,
        "num_classes": len(spec.classes),
        "classes_sha256": _classes_digest(spec.classes),
        "episodes_file": episodes_path.name,
        "episodes_sha256": hashlib.sha256(episodes_path.read_bytes()).hexdigest(),
        "episode_header": header,
    }
    if config_echo is not None:
        manifest["config"] = config_echo
    with open(out_dir / "manifest.json", "w") as f:
        json.dump(manifest, f, indent=2, sort_keys=True)
        f.write("\n")
    return manifest
