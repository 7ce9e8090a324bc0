"""Bit-exact tokenization of hypothesis-class episodes.

An episode renders a hypothesis class as a fixed-width *class prefix* (one
slot per member, blank-padded to capacity), appends the in-context example
pairs as a *context query*, and closes with the index token naming the true
member.  Layout, with slot width 3n+2 and vocabulary ids frozen at version 1:

    slot   = x_0 y_0 ; x_1 y_1 ; ... x_{n-1} y_{n-1} > z P
    blank  = N ... N P                    (3n+1 empties, one pad)
    query  = x^(1) y^(1) ; ... x^(K) y^(K) >
    tokens = slots * slot  ++  query  ++  [z of true member]

Total length is always ``slots*(3n+2) + 3K + 1``.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .errors import CapacityError, InconsistencyError, ParseError
from .hypotheses import label_of
from .rng import stream

__all__ = [
    "VOCAB_VERSION",
    "Vocabulary",
    "EncodedEpisode",
    "DecodedEpisode",
    "build_vocabulary",
    "episode_length",
    "encode_prefix",
    "encode_query",
    "encode_episode",
    "decode_episode",
    "render_episode",
    "write_episode_file",
    "read_episode_file",
]

VOCAB_VERSION = 1

Pair = tuple[int, int]


@dataclass(frozen=True)
class Vocabulary:
    """Token-id layout for input space size ``n`` and index-pool size ``L``.

    Ids are assigned contiguously: inputs, then labels, then the L index
    tokens, then pad / separator / empty / query.
    """

    n: int
    L: int

    def __post_init__(self) -> None:
        if self.n < 1 or self.L < 1:
            raise ValueError("n and L must both be >= 1")

    @property
    def size(self) -> int:
        return self.n + 2 + self.L + 4

    def x(self, j: int) -> int:
        if not 0 <= j < self.n:
            raise ValueError(f"input index {j} out of range")
        return j

    def y(self, v: int) -> int:
        if v not in (0, 1):
            raise ValueError(f"label {v} must be 0 or 1")
        return self.n + v

    def z(self, j: int) -> int:
        if not 0 <= j < self.L:
            raise ValueError(f"index-token slot {j} out of range")
        return self.n + 2 + j

    @property
    def pad(self) -> int:
        return self.n + 2 + self.L

    @property
    def sep(self) -> int:
        return self.n + 3 + self.L

    @property
    def empty(self) -> int:
        return self.n + 4 + self.L

    @property
    def query(self) -> int:
        return self.n + 5 + self.L

    @property
    def index_tokens(self) -> range:
        return range(self.n + 2, self.n + 2 + self.L)

    @property
    def label_tokens(self) -> range:
        return range(self.n, self.n + 2)

    def is_x(self, t: int) -> bool:
        return 0 <= t < self.n

    def is_y(self, t: int) -> bool:
        return self.n <= t < self.n + 2

    def is_z(self, t: int) -> bool:
        return self.n + 2 <= t < self.n + 2 + self.L

    def glyph(self, t: int) -> str:
        """Display form: x0.., 0/1, A/B/.., P, ;, N, >."""
        if self.is_x(t):
            return f"x{t}"
        if self.is_y(t):
            return str(t - self.n)
        if self.is_z(t):
            j = t - self.n - 2
            return chr(ord("A") + j) if j < 26 else f"I{j}"
        if t == self.pad:
            return "P"
        if t == self.sep:
            return ";"
        if t == self.empty:
            return "N"
        if t == self.query:
            return ">"
        raise ValueError(f"token id {t} outside vocabulary of size {self.size}")


def build_vocabulary(n: int, L: int) -> Vocabulary:
    return Vocabulary(n=n, L=L)


def slot_width(n: int) -> int:
    return 3 * n + 2


def episode_length(n: int, slots: int, K: int) -> int:
    return slots * slot_width(n) + 3 * K + 1


@dataclass(frozen=True)
class EncodedEpisode:
    """Token sequence plus target-position metadata and generating truth."""

    tokens: np.ndarray  # int64, shape (length,)
    n: int
    L: int
    slots: int
    K: int
    y_target_positions: tuple[int, ...]
    z_target_position: int
    assignment: tuple[int, ...]  # index-token id per class member position
    class_members: tuple[int, ...]  # member order as laid out in the prefix
    hypothesis_id: int
    pairs: tuple[Pair, ...]

    def __post_init__(self) -> None:
        assert self.z_target_position == len(self.tokens) - 1
        assert len(self.y_target_positions) == self.K

    @property
    def query_start(self) -> int:
        return self.slots * slot_width(self.n)


@dataclass(frozen=True)
class DecodedEpisode:
    """Truth recovered from a token sequence."""

    class_members: tuple[int, ...]
    hypothesis_id: int | None  # None when the prefix has no slots
    pairs: tuple[Pair, ...]
    assignment: tuple[int, ...]
    index_token: int


def encode_prefix(
    members: Sequence[int], assignment: Sequence[int], slots: int, vocab: Vocabulary
) -> list[int]:
    """Fixed-width class prefix: one slot per member, blanks to capacity."""
    if len(members) > slots:
        raise CapacityError(f"class of {len(members)} exceeds prefix capacity {slots}")
    if len(assignment) != len(members):
        raise ValueError("assignment must map every class member")
    n = vocab.n
    out: list[int] = []
    for h, z_token in zip(members, assignment):
        if not vocab.is_z(z_token):
            raise ValueError(f"assignment token {z_token} is not an index token")
        for j in range(n):
            out.append(vocab.x(j))
            out.append(vocab.y(label_of(h, j)))
            out.append(vocab.sep if j < n - 1 else vocab.query)
        out.append(z_token)
        out.append(vocab.pad)
    blank = [vocab.empty] * (3 * n + 1) + [vocab.pad]
    for _ in range(slots - len(members)):
        out.extend(blank)
    return out


def encode_query(pairs: Sequence[Pair], vocab: Vocabulary) -> list[int]:
    """Context query: the K example pairs, closed by the query token."""
    if len(pairs) < 1:
        raise ValueError("context query needs at least one pair")
    out: list[int] = []
    last = len(pairs) - 1
    for k, (x, y) in enumerate(pairs):
        out.append(vocab.x(x))
        out.append(vocab.y(y))
        out.append(vocab.query if k == last else vocab.sep)
    return out


def encode_episode(
    members: Sequence[int],
    hypothesis_id: int,
    pairs: Sequence[Pair],
    L: int,
    vocab: Vocabulary,
    seed: int | np.random.Generator,
    *,
    slots: int | None = None,
) -> EncodedEpisode:
    """Encode one episode, sampling the index assignment without replacement."""
    if vocab.L != L:
        raise ValueError(f"vocabulary was built for L={vocab.L}, episode asks {L}")
    if slots is None:
        slots = L
    members = tuple(int(h) for h in members)
    if hypothesis_id not in members:
        raise ValueError(f"hypothesis {hypothesis_id} is not in the class")
    if len(set(members)) != len(members):
        raise ValueError("class members must be distinct")
    if len(members) > L:
        raise CapacityError(f"class of {len(members)} exceeds index pool L={L}")
    for x, y in pairs:
        if label_of(hypothesis_id, x) != y:
            raise InconsistencyError(
                f"pair (x{x}, {y}) contradicts the generating hypothesis"
            )
    rng = seed if isinstance(seed, np.random.Generator) else stream(seed, "assignment")
    drawn = rng.choice(L, size=len(members), replace=False)
    assignment = tuple(vocab.z(int(j)) for j in drawn)

    prefix = encode_prefix(members, assignment, slots, vocab) if slots else []
    query = encode_query(pairs, vocab)
    z_token = assignment[members.index(hypothesis_id)]
    tokens = np.array(prefix + query + [z_token], dtype=np.int64)

    qstart = slots * slot_width(vocab.n)
    y_positions = tuple(qstart + 3 * k + 1 for k in range(len(pairs)))
    return EncodedEpisode(
        tokens=tokens,
        n=vocab.n,
        L=L,
        slots=slots,
        K=len(pairs),
        y_target_positions=y_positions,
        z_target_position=len(tokens) - 1,
        assignment=assignment,
        class_members=members,
        hypothesis_id=hypothesis_id,
        pairs=tuple((int(x), int(y)) for x, y in pairs),
    )


def _parse_slot(tokens: np.ndarray, start: int, vocab: Vocabulary) -> tuple[int, int] | None:
    """Parse one prefix slot; returns (hypothesis_id, index_token) or None if blank."""
    n = vocab.n
    width = slot_width(n)
    slot = tokens[start : start + width]
    if len(slot) < width:
        raise ParseError("sequence truncated inside a prefix slot", start)
    if slot[0] == vocab.empty:
        for off in range(3 * n + 1):
            if slot[off] != vocab.empty:
                raise ParseError("blank slot interrupted", start + off)
        if slot[3 * n + 1] != vocab.pad:
            raise ParseError("blank slot must end with the pad token", start + 3 * n + 1)
        return None
    hypothesis = 0
    for j in range(n):
        base = start + 3 * j
        if slot[3 * j] != vocab.x(j):
            raise ParseError(f"expected input token x{j}", base)
        y_tok = int(slot[3 * j + 1])
        if not vocab.is_y(y_tok):
            raise ParseError("expected a label token", base + 1)
        hypothesis |= (y_tok - vocab.n) << j
        expect = vocab.sep if j < n - 1 else vocab.query
        if slot[3 * j + 2] != expect:
            raise ParseError("bad pair separator in slot", base + 2)
    z_tok = int(slot[3 * n])
    if not vocab.is_z(z_tok):
        raise ParseError("expected an index token in slot", start + 3 * n)
    if slot[3 * n + 1] != vocab.pad:
        raise ParseError("slot must end with the pad token", start + 3 * n + 1)
    return hypothesis, z_tok


def decode_episode(
    tokens: np.ndarray | Sequence[int], vocab: Vocabulary, *, slots: int | None = None
) -> DecodedEpisode:
    """Recover (class, pairs, assignment, true member) from a token sequence."""
    tokens = np.asarray(tokens, dtype=np.int64)
    if slots is None:
        slots = vocab.L
    width = slot_width(vocab.n)
    prefix_len = slots * width
    if len(tokens) < prefix_len + 4:
        raise ParseError(
            f"sequence of {len(tokens)} too short for {slots} slots plus a query"
        )
    rem = len(tokens) - prefix_len - 1
    if rem % 3 != 0:
        raise ParseError(f"query region of {rem} tokens is not made of (x, y, sep) triples")
    K = rem // 3

    members: list[int] = []
    assignment: list[int] = []
    seen_blank = False
    for s in range(slots):
        parsed = _parse_slot(tokens, s * width, vocab)
        if parsed is None:
            seen_blank = True
            continue
        if seen_blank:
            raise ParseError("filled slot after a blank slot", s * width)
        hypothesis, z_tok = parsed
        if hypothesis in members:
            raise ParseError("duplicate hypothesis in prefix", s * width)
        if z_tok in assignment:
            raise ParseError("index token reused across slots", s * width + 3 * vocab.n)
        members.append(hypothesis)
        assignment.append(z_tok)

    pairs: list[Pair] = []
    for k in range(K):
        base = prefix_len + 3 * k
        x_tok, y_tok, sep_tok = (int(t) for t in tokens[base : base + 3])
        if not vocab.is_x(x_tok):
            raise ParseError("expected an input token in query", base)
        if not vocab.is_y(y_tok):
            raise ParseError("expected a label token in query", base + 1)
        expect = vocab.query if k == K - 1 else vocab.sep
        if sep_tok != expect:
            raise ParseError("bad separator in query", base + 2)
        pairs.append((x_tok, y_tok - vocab.n))

    final = int(tokens[-1])
    if not vocab.is_z(final):
        raise ParseError("final token must be an index token", len(tokens) - 1)
    if slots > 0:
        if final not in assignment:
            raise ParseError("final index token was never assigned", len(tokens) - 1)
        hypothesis_id: int | None = members[assignment.index(final)]
    else:
        hypothesis_id = None
    return DecodedEpisode(
        class_members=tuple(members),
        hypothesis_id=hypothesis_id,
        pairs=tuple(pairs),
        assignment=tuple(assignment),
        index_token=final,
    )


def render_episode(tokens: np.ndarray | Sequence[int], vocab: Vocabulary) -> str:
    """Human-readable rendering using the display glyphs."""
    return " ".join(vocab.glyph(int(t)) for t in tokens)


def write_episode_file(
    path: str | Path,
    episodes: Iterable[EncodedEpisode],
    vocab: Vocabulary,
) -> dict:
    """Write episodes (uniform n, L, slots, K) as a versioned binary file.

    Layout: one JSON header line, then little-endian uint16 token ids.
    """
    episodes = list(episodes)
    if not episodes:
        raise ValueError("nothing to write")
    first = episodes[0]
    for ep in episodes:
        if (ep.n, ep.L, ep.slots, ep.K) != (first.n, first.L, first.slots, first.K):
            raise ValueError("episode files require uniform (n, L, slots, K)")
    header = {
        "format": "hypolab-episodes",
        "version": 1,
        "vocab_version": VOCAB_VERSION,
        "n": first.n,
        "L": first.L,
        "slots": first.slots,
        "K": first.K,
        "count": len(episodes),
        "episode_length": int(len(first.tokens)),
    }
    if vocab.size >= 1 << 16:
        raise CapacityError("vocabulary too large for uint16 serialization")
    with open(path, "wb") as f:
        f.write(json.dumps(header, sort_keys=True).encode("utf-8") + b"\n")
        for ep in episodes:
            f.write(ep.tokens.astype("<u2").tobytes())
    return header


def read_episode_file(path: str | Path) -> tuple[list[np.ndarray], dict]:
    """Read a file written by :func:`write_episode_file`."""
    with open(path, "rb") as f:
        header_line = f.readline()
        try:
            header = json.loads(header_line.decode("utf-8"))
        except (UnicodeDecodeError, json.JSONDecodeError) as exc:
            raise ParseError(f"unreadable episode-file header: {exc}") from exc
        if header.get("format") != "hypolab-episodes" or header.get("version") != 1:
            raise ParseError("not a version-1 episode file")
        if header.get("vocab_version") != VOCAB_VERSION:
            raise ParseError(
                f"vocabulary version {header.get('vocab_version')} != {VOCAB_VERSION}"
            )
        length = header["episode_length"]
        count = header["count"]
        raw = f.read()
    expected = 2 * length * count
    if len(raw) != expected:
        raise ParseError(f"episode payload is {len(raw)} bytes, expected {expected}")
    flat = np.frombuffer(raw, dtype="<u2").astype(np.int64)
    return [flat[i * length : (i + 1) * length] for i in range(count)], header
