"""Random hierarchy grammars and data generation.

A grammar lives on a regular tree of depth L and branching factor s. Every
level has its own vocabulary of v integer symbols, and each symbol owns m
production rules, each rule an s-tuple of lower-level symbols. Within a
layer all ``m * v`` tuples are drawn without replacement from the ``v**s``
possibilities, so every generable s-block has exactly one parent symbol:
the grammar is unambiguous and leaf strings can be parsed bottom-up.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import NotGenerableError, ParameterError


@dataclass(frozen=True)
class GrammarParams:
    """Vocabulary size v, rules per symbol m, branching s, depth L."""

    v: int
    m: int
    s: int
    L: int

    def __post_init__(self):
        if self.v < 2:
            raise ParameterError(f"need v >= 2, got v={self.v}")
        if self.s < 2:
            raise ParameterError(f"need s >= 2, got s={self.s}")
        if self.L < 1:
            raise ParameterError(f"need L >= 1, got L={self.L}")
        if self.m < 1:
            raise ParameterError(f"need m >= 1, got m={self.m}")
        if self.m * self.v > self.v**self.s:
            raise ParameterError(
                f"m*v = {self.m * self.v} exceeds the {self.v**self.s} distinct "
                f"s-tuples available per layer"
            )

    @property
    def n_leaves(self) -> int:
        return self.s**self.L

    def level_size(self, level: int) -> int:
        """Number of nodes at a level (0 = leaves, L = root)."""
        return self.s ** (self.L - level)


class RuleTable:
    """Production rules of one grammar realization, all layers.

    ``children(layer)`` is an integer array of shape (v, m, s): the rule
    tuples of each upper-level symbol. Layers are numbered 1..L; layer
    ``l`` rewrites a symbol at level ``l`` into s symbols at level ``l-1``.
    The inverse map (tuple -> parent symbol, rule index) is precomputed for
    bottom-up parsing.
    """

    def __init__(self, params: GrammarParams, layers: Sequence[np.ndarray]):
        if len(layers) != params.L:
            raise ParameterError(f"expected {params.L} layers, got {len(layers)}")
        v, m, s = params.v, params.m, params.s
        self.params = params
        self._layers = []
        self._inverse = []
        for l, table in enumerate(layers, start=1):
            table = np.ascontiguousarray(np.asarray(table, dtype=np.int64))
            if table.shape != (v, m, s):
                raise ParameterError(
                    f"layer {l} table has shape {table.shape}, expected {(v, m, s)}"
                )
            if table.min() < 0 or table.max() >= v:
                raise ParameterError(f"layer {l} contains symbols outside 0..{v - 1}")
            inv = {}
            flat = table.reshape(v * m, s)
            for r, tup in enumerate(map(tuple, flat.tolist())):
                if tup in inv:
                    raise ParameterError(
                        f"layer {l}: tuple {tup} assigned to more than one rule"
                    )
                inv[tup] = (r // m, r % m)
            table.setflags(write=False)
            self._layers.append(table)
            self._inverse.append(inv)

    def children(self, layer: int) -> np.ndarray:
        """Rule tuples for ``layer`` in 1..L, shape (v, m, s)."""
        return self._layers[layer - 1]

    def parent_of(self, layer: int, block) -> tuple[int, int]:
        """Invert one s-block: return (parent symbol, rule index).

        Raises NotGenerableError when the block is not a rule of ``layer``.
        """
        key = tuple(int(a) for a in block)
        try:
            return self._inverse[layer - 1][key]
        except KeyError:
            raise NotGenerableError(
                f"block {key} is not a production of layer {layer}"
            ) from None

    def to_json(self) -> str:
        doc = {
            "params": {"v": self.params.v, "m": self.params.m,
                       "s": self.params.s, "L": self.params.L},
            "layers": [t.tolist() for t in self._layers],
        }
        return json.dumps(doc, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "RuleTable":
        doc = json.loads(text)
        params = GrammarParams(**doc["params"])
        return cls(params, [np.asarray(t) for t in doc["layers"]])


@dataclass(frozen=True)
class Datum:
    """A full derivation tree: one symbol array per level, leaves first.

    ``levels[l]`` has length s**(L-l); ``levels[L]`` is the single root
    symbol (the class) and ``levels[0]`` the visible token string. ``v``
    is the (per-level) vocabulary size of the generating grammar.
    """

    levels: tuple
    v: int

    def __post_init__(self):
        for arr in self.levels:
            arr.setflags(write=False)
            if arr.size and (arr.min() < 0 or arr.max() >= self.v):
                raise ParameterError(
                    f"datum contains symbols outside 0..{self.v - 1}"
                )

    @property
    def leaves(self) -> np.ndarray:
        return self.levels[0]

    @property
    def class_symbol(self) -> int:
        return int(self.levels[-1][0])

    def to_lists(self):
        return [lvl.tolist() for lvl in self.levels]


def build_grammar(params: GrammarParams, seed) -> RuleTable:
    """Draw a random rule table: per layer, m*v distinct s-tuples.

    Tuples are sampled uniformly without replacement from the v**s
    possibilities and dealt out m per symbol, so distinctness holds across
    the whole layer, not just within a symbol. Deterministic given seed.
    """
    rng = np.random.default_rng(seed)
    v, m, s = params.v, params.m, params.s
    layers = []
    for _ in range(params.L):
        codes = rng.choice(v**s, size=m * v, replace=False)
        tuples = np.stack(np.unravel_index(codes, (v,) * s), axis=1)
        layers.append(tuples.reshape(v, m, s))
    return RuleTable(params, layers)


def generate_datum(rules: RuleTable, root="random", seed=None) -> Datum:
    """Sample one derivation tree top-down.

    The root symbol is drawn uniformly (or fixed when ``root`` is an int),
    then each node independently picks one of its m rules uniformly.
    """
    params = rules.params
    rng = np.random.default_rng(seed)
    if root == "random":
        root_sym = int(rng.integers(params.v))
    else:
        root_sym = int(root)
        if not 0 <= root_sym < params.v:
            raise ParameterError(f"root symbol {root_sym} outside 0..{params.v - 1}")
    levels = [np.array([root_sym], dtype=np.int64)]
    for layer in range(params.L, 0, -1):
        syms = levels[-1]
        choices = rng.integers(params.m, size=syms.shape[0])
        children = rules.children(layer)[syms, choices, :]
        levels.append(children.reshape(-1))
    return Datum(tuple(levels[::-1]), params.v)


def parse_leaves(rules: RuleTable, leaves) -> Datum:
    """Reconstruct the unique derivation tree of a generable leaf string.

    Unambiguity guarantees at most one parse; NotGenerableError signals a
    string outside the grammar's support.
    """
    params = rules.params
    leaves = np.array(leaves, dtype=np.int64)  # copy: Datum freezes its arrays
    if leaves.shape != (params.n_leaves,):
        raise ParameterError(
            f"leaf string has shape {leaves.shape}, expected ({params.n_leaves},)"
        )
    levels = [leaves]
    for layer in range(1, params.L + 1):
        blocks = levels[-1].reshape(-1, params.s)
        parents = np.empty(blocks.shape[0], dtype=np.int64)
        for i, block in enumerate(blocks):
            parents[i], _ = rules.parent_of(layer, block)
        levels.append(parents)
    return Datum(tuple(levels), params.v)


def validate_datum(rules: RuleTable, datum: Datum) -> bool:
    """Check that every s-block of children is one of its parent's rules."""
    params = rules.params
    if len(datum.levels) != params.L + 1:
        return False
    for layer in range(1, params.L + 1):
        blocks = datum.levels[layer - 1].reshape(-1, params.s)
        parents = datum.levels[layer]
        for parent, block in zip(parents, blocks):
            try:
                sym, _ = rules.parent_of(layer, block)
            except NotGenerableError:
                return False
            if sym != parent:
                return False
    return True


def leaf_pair_distance(i: int, j: int, params: GrammarParams) -> tuple[int, int]:
    """Tree distance (edges to the lowest common ancestor) and real distance.

    Real distance is r = s**ltilde - 1; identical leaves give (0, 0).
    """
    d = params.n_leaves
    if not (0 <= i < d and 0 <= j < d):
        raise ParameterError(f"leaf indices ({i}, {j}) outside 0..{d - 1}")
    ltilde = 0
    a, b = int(i), int(j)
    while a != b:
        a //= params.s
        b //= params.s
        ltilde += 1
    return ltilde, params.s**ltilde - 1


def tree_distance_matrix(params: GrammarParams) -> np.ndarray:
    """Pairwise tree distances between leaves, shape (s**L, s**L)."""
    idx = np.arange(params.n_leaves)
    dist = np.zeros((params.n_leaves, params.n_leaves), dtype=np.int64)
    anc_prev = idx
    for k in range(1, params.L + 1):
        anc = anc_prev // params.s
        newly = np.equal.outer(anc, anc) & ~np.equal.outer(anc_prev, anc_prev)
        dist[newly] = k
        anc_prev = anc
    return dist
