"""Toy tokenizer, synthetic world, and triplet record files.

A world is a pool of entities, each with exactly one synonym alias. A
document is a rendering of an entity set: elements in random order, each
shown either as its base symbol or its alias. Two renderings of the same
set are therefore paraphrases, and graded similarity between documents is
the Jaccard overlap of their underlying (de-aliased) sets, which is exactly
the brute-force gold score attached to evaluation pairs.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Iterable, NamedTuple

import numpy as np

from .errors import RecordParseError, VocabularyError

PAD, BOS, EOS = "<pad>", "<bos>", "<eos>"
INSTR_NEXT, INSTR_SELF = "<next>", "<self>"
_SPECIALS = (PAD, BOS, EOS, INSTR_NEXT, INSTR_SELF)


class Tokenizer:
    """Bijective symbol <-> dense-id mapping over a fixed symbol list."""

    def __init__(self, symbols: Iterable[str]):
        self.symbols = tuple(symbols)
        self._index = {s: i for i, s in enumerate(self.symbols)}
        if len(self._index) != len(self.symbols):
            raise VocabularyError("duplicate symbols in vocabulary")

    @property
    def size(self) -> int:
        return len(self.symbols)

    def encode(self, symbols: Iterable[str]) -> list[int]:
        try:
            return [self._index[s] for s in symbols]
        except KeyError as exc:
            raise VocabularyError(f"unknown symbol {exc.args[0]!r}") from None

    def decode(self, ids: Iterable[int]) -> list[str]:
        ids = list(ids)
        for i in ids:
            if not 0 <= i < self.size:
                raise VocabularyError(f"token id {i} outside [0, {self.size})")
        return [self.symbols[i] for i in ids]


@dataclass
class TripletRecord:
    """One training/eval unit; negatives come only from here, never the batch."""

    anchor: list[int]
    positive: list[int]
    negatives: list[list[int]] = field(default_factory=list)
    instr_next: list[int] = field(default_factory=list)
    instr_self: list[int] = field(default_factory=list)
    gold: float | None = None


@dataclass(frozen=True)
class WorldSpec:
    n_entities: int = 20
    set_min: int = 3
    set_max: int = 4
    seed: int = 0
    n_negatives: int = 1

    def __post_init__(self):
        if self.n_entities < 8:
            raise ValueError(f"n_entities must be >= 8, got {self.n_entities}")
        if not 2 <= self.set_min <= self.set_max:
            raise ValueError(f"need 2 <= set_min <= set_max, got {self.set_min}..{self.set_max}")
        if self.set_max > self.n_entities:
            raise ValueError(
                f"set_max {self.set_max} exceeds n_entities {self.n_entities}"
            )
        if self.n_negatives < 0:
            raise ValueError("n_negatives must be >= 0")

    def entity_symbols(self) -> list[str]:
        return [f"e{i}" for i in range(self.n_entities)]

    def alias_symbols(self) -> list[str]:
        return [f"a{i}" for i in range(self.n_entities)]

    def synonym_map(self) -> dict[str, str]:
        return dict(zip(self.entity_symbols(), self.alias_symbols()))


def build_tokenizer(world: WorldSpec) -> Tokenizer:
    return Tokenizer(_SPECIALS + tuple(world.entity_symbols()) + tuple(world.alias_symbols()))


def instruction_ids(tok: Tokenizer) -> tuple[list[int], list[int]]:
    """(I_next ids, I_self ids): single-token instructions in this toy world."""
    return tok.encode([INSTR_NEXT]), tok.encode([INSTR_SELF])


class GeneratedData(NamedTuple):
    compression: list[TripletRecord]
    alignment: list[TripletRecord]
    eval_pairs: list[TripletRecord]


def _jaccard(a: frozenset, b: frozenset) -> float:
    return len(a & b) / len(a | b)


def _render(world: WorldSpec, entities: frozenset, rng: np.random.Generator,
            mode: str = "mixed") -> list[str]:
    order = rng.permutation(sorted(entities))
    if mode == "base":
        return [f"e{i}" for i in order]
    if mode == "alias":
        return [f"a{i}" for i in order]
    return [f"a{i}" if rng.random() < 0.5 else f"e{i}" for i in order]


def _sample_set(world: WorldSpec, rng: np.random.Generator) -> frozenset:
    size = int(rng.integers(world.set_min, world.set_max + 1))
    return frozenset(int(x) for x in rng.choice(world.n_entities, size=size, replace=False))


def generate(world: WorldSpec, n_train: int, n_eval: int) -> GeneratedData:
    """Synthesize training records and graded eval pairs, seeded and deduplicated.

    Training anchors are unique by underlying set. Positives re-render the
    anchor's set (de-aliased Jaccard 1); negatives overlap at most 0.25.
    Eval pairs render one side with base symbols and the other with aliases,
    so surface token overlap says nothing about gold: scoring them requires
    the synonym structure, not token matching. Returns the compression-stage
    records, the alignment triplets (the same records; one generator serves
    both stages), and the eval pairs.
    """
    rng = np.random.default_rng(world.seed)
    tok = build_tokenizer(world)
    i_next, i_self = instruction_ids(tok)
    eos = tok.encode([EOS])

    def render_ids(entities: frozenset, mode: str = "mixed") -> list[int]:
        # every document is EOS-terminated, as targets need a stop symbol
        return tok.encode(_render(world, entities, rng, mode)) + eos

    records: list[TripletRecord] = []
    seen: set[frozenset] = set()
    attempts = 0
    while len(records) < n_train:
        attempts += 1
        if attempts > 200 * n_train + 1000:
            raise ValueError(
                f"cannot draw {n_train} distinct anchors from this world; enlarge it"
            )
        anchor_set = _sample_set(world, rng)
        if anchor_set in seen:
            continue
        seen.add(anchor_set)
        negatives = []
        while len(negatives) < world.n_negatives:
            neg_set = _sample_set(world, rng)
            if _jaccard(anchor_set, neg_set) <= 0.25:
                negatives.append(render_ids(neg_set))
        records.append(TripletRecord(
            anchor=render_ids(anchor_set),
            positive=render_ids(anchor_set),
            negatives=negatives,
            instr_next=list(i_next),
            instr_self=list(i_self),
        ))

    eval_pairs: list[TripletRecord] = []
    for _ in range(n_eval):
        set_a = _sample_set(world, rng)
        size_b = int(rng.integers(world.set_min, world.set_max + 1))
        max_overlap = min(len(set_a), size_b)
        # fresh elements must exist outside the union
        overlap = int(rng.integers(0, max_overlap + 1))
        while size_b - overlap > world.n_entities - len(set_a):
            overlap += 1
        shared = rng.choice(sorted(set_a), size=overlap, replace=False)
        pool = sorted(set(range(world.n_entities)) - set_a)
        fresh = rng.choice(pool, size=size_b - overlap, replace=False) if size_b > overlap else []
        set_b = frozenset(int(x) for x in shared) | frozenset(int(x) for x in fresh)
        eval_pairs.append(TripletRecord(
            anchor=render_ids(set_a, mode="base"),
            positive=render_ids(set_b, mode="alias"),
            negatives=[],
            instr_next=list(i_next),
            instr_self=list(i_self),
            gold=_jaccard(set_a, set_b),
        ))

    return GeneratedData(records, records, eval_pairs)


# ---- record files (UTF-8 JSON Lines) --------------------------------------


def save_records(records: Iterable[TripletRecord], path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for rec in records:
            obj = {
                "anchor": rec.anchor,
                "positive": rec.positive,
                "negatives": rec.negatives,
                "instr_next": rec.instr_next,
                "instr_self": rec.instr_self,
            }
            if rec.gold is not None:
                obj["gold"] = rec.gold
            fh.write(json.dumps(obj, separators=(",", ":")) + "\n")


def load_records(path) -> list[TripletRecord]:
    records = []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                obj = json.loads(line)
                records.append(TripletRecord(
                    anchor=list(obj["anchor"]),
                    positive=list(obj["positive"]),
                    negatives=[list(n) for n in obj["negatives"]],
                    instr_next=list(obj["instr_next"]),
                    instr_self=list(obj["instr_self"]),
                    gold=obj.get("gold"),
                ))
            except (json.JSONDecodeError, KeyError, TypeError) as exc:
                raise RecordParseError(f"line {lineno}: {exc}") from None
    return records
