"""Exact Bayes-optimal inference on the grammar tree.

Sum-product message passing on a tree factor graph is exact, so one upward
sweep (leaves to root) followed by one downward sweep (root to leaves)
yields the true conditional marginals of every node given noisy leaf
evidence. Ancestral sampling with the resulting messages draws from the
exact posterior over complete derivations.

Messages are kept normalized after every update; the rule factor is 0/1
(an s-block either is or is not a production), so sums over child
configurations run only over the stored ``m * v`` rules of a layer.
"""

from __future__ import annotations

from dataclasses import dataclass, field as dc_field

import numpy as np

from .errors import (
    ParameterError,
    PassesNotRunError,
    ZeroNormalizationError,
)
from .grammar import Datum, RuleTable

NORM_TOL = 1e-9


@dataclass(frozen=True)
class LeafPriorField:
    """Per-leaf belief vectors over the visible vocabulary.

    ``kind`` records the provenance ("masking", "epsilon" or "custom") and
    ``noise`` the corresponding parameter (masked fraction t/T, or epsilon).
    """

    values: np.ndarray  # (n_leaves, v)
    kind: str
    noise: float | None = None

    def __post_init__(self):
        vals = self.values
        if vals.ndim != 2:
            raise ParameterError("leaf priors must be a 2-d array")
        if (vals < 0).any():
            raise ParameterError("leaf priors must be nonnegative")
        sums = vals.sum(axis=1)
        if np.abs(sums - 1.0).max() > NORM_TOL:
            raise ParameterError("each leaf prior must sum to 1")
        vals.setflags(write=False)


def priors_from_masking(datum: Datum, mask) -> LeafPriorField:
    """One-hot beliefs on unmasked tokens, uniform 1/v on masked ones."""
    leaves = datum.leaves
    mask = np.asarray(mask, dtype=bool)
    if mask.shape != leaves.shape:
        raise ParameterError(
            f"mask shape {mask.shape} does not match {leaves.shape} leaves"
        )
    vals = np.zeros((leaves.shape[0], datum.v))
    vals[np.arange(leaves.shape[0]), leaves] = 1.0
    vals[mask] = 1.0 / datum.v
    return LeafPriorField(vals, "masking", float(mask.mean()))


def priors_from_epsilon(datum: Datum, eps: float) -> LeafPriorField:
    """Belief 1 - eps + eps/v on the true token, eps/v elsewhere."""
    if not 0.0 <= eps <= 1.0:
        raise ParameterError(f"epsilon must lie in [0, 1], got {eps}")
    leaves = datum.leaves
    vals = np.full((leaves.shape[0], datum.v), eps / datum.v)
    vals[np.arange(leaves.shape[0]), leaves] += 1.0 - eps
    return LeafPriorField(vals, "epsilon", float(eps))


@dataclass
class MessageField:
    """Upward and downward belief vectors for every node of the tree.

    ``up[l]`` and ``down[l]`` have shape (s**(L-l), v). The two validity
    flags guard against reading marginals from a half-initialized field.
    """

    up: list
    down: list
    priors: LeafPriorField
    v: int
    s: int
    L: int
    upward_valid: bool = True
    downward_valid: bool = True
    _marginals: list = dc_field(default=None, init=False, repr=False)

    def freeze(self):
        for arr in self.up + self.down:
            arr.setflags(write=False)
        return self


def _upward_unnormalized(child_msgs: np.ndarray, flat_rules: np.ndarray,
                         v: int, m: int) -> np.ndarray:
    """Sum rule products into parent beliefs.

    child_msgs: (n_parent, s, v); flat_rules: (v*m, s) ordered so that rules
    of symbol y occupy the slice [y*m, (y+1)*m).
    """
    s = child_msgs.shape[1]
    prod = child_msgs[:, 0, flat_rules[:, 0]]
    for i in range(1, s):
        prod = prod * child_msgs[:, i, flat_rules[:, i]]
    return prod.reshape(-1, v, m).sum(axis=2)


def _normalize(unnorm: np.ndarray, what: str) -> np.ndarray:
    totals = unnorm.sum(axis=1, keepdims=True)
    if not np.all(totals > 0.0):
        raise ZeroNormalizationError(
            f"{what} summed to zero: leaf priors are inconsistent with every "
            f"generable datum"
        )
    return unnorm / totals


def run_bp(rules: RuleTable, priors: LeafPriorField) -> MessageField:
    """One upward sweep, uniform root initialization, one downward sweep.

    Every message is normalized per node; a zero normalizer aborts with
    ZeroNormalizationError (impossible for masking/epsilon priors on a
    generable datum, possible for hand-built evidence).
    """
    params = rules.params
    v, m, s, L = params.v, params.m, params.s, params.L
    if priors.values.shape != (params.n_leaves, v):
        raise ParameterError(
            f"priors have shape {priors.values.shape}, grammar expects "
            f"{(params.n_leaves, v)}"
        )

    up = [_normalize(np.array(priors.values), "leaf prior")]
    for layer in range(1, L + 1):
        flat = rules.children(layer).reshape(v * m, s)
        child = up[layer - 1].reshape(-1, s, v)
        up.append(_normalize(_upward_unnormalized(child, flat, v, m),
                             f"upward message at level {layer}"))

    down = [None] * (L + 1)
    down[L] = np.full((1, v), 1.0 / v)  # class-unconditional: uniform root prior
    for layer in range(L, 0, -1):
        down[layer - 1] = _normalize(
            _downward_unnormalized(rules, layer, up[layer - 1], down[layer]),
            f"downward message below level {layer}",
        )

    return MessageField(up=up, down=down, priors=priors, v=v, s=s, L=L).freeze()


def _downward_unnormalized(rules: RuleTable, layer: int,
                           child_up: np.ndarray, parent_down: np.ndarray) -> np.ndarray:
    """Downward messages to the s children of every node at ``layer``.

    For child position c the message gathers, over all rules, the parent's
    downward belief times the upward beliefs of the other s-1 siblings.
    Products-except-self use prefix/suffix products; division by a possibly
    zero message would be ill-defined under one-hot evidence.
    """
    params = rules.params
    v, m, s = params.v, params.m, params.s
    flat = rules.children(layer).reshape(v * m, s)
    parent_sym = np.repeat(np.arange(v), m)
    child = child_up.reshape(-1, s, v)
    n = child.shape[0]
    R = v * m

    gathered = np.stack([child[:, i, flat[:, i]] for i in range(s)], axis=1)
    prefix = np.ones((n, s + 1, R))
    suffix = np.ones((n, s + 1, R))
    for i in range(s):
        prefix[:, i + 1] = prefix[:, i] * gathered[:, i]
    for i in range(s - 1, -1, -1):
        suffix[:, i] = suffix[:, i + 1] * gathered[:, i]

    parent_weight = parent_down[:, parent_sym]  # (n, R)
    out = np.empty((n, s, v))
    for c in range(s):
        weights = parent_weight * prefix[:, c] * suffix[:, c + 1]
        onehot = np.zeros((R, v))
        onehot[np.arange(R), flat[:, c]] = 1.0
        out[:, c, :] = weights @ onehot
    return out.reshape(n * s, v)


def marginals(field: MessageField) -> list:
    """Per-node conditional marginals, one (nodes, v) array per level.

    The product of the upward and downward message at a node, renormalized,
    is the exact posterior marginal given the leaf evidence. The level-0
    entry is the conditional expectation of one-hot tokens, i.e. the exact
    score direction of the denoising process.
    """
    if not (field.upward_valid and field.downward_valid):
        raise PassesNotRunError("both sweeps must be valid to read marginals")
    if field._marginals is None:
        out = []
        for lvl in range(field.L + 1):
            out.append(_normalize(field.up[lvl] * field.down[lvl],
                                  f"marginal at level {lvl}"))
            out[-1].setflags(write=False)
        field._marginals = out
    return field._marginals


def leaf_score(field: MessageField) -> np.ndarray:
    """Leaf-level conditional expectation of the one-hot tokens."""
    return marginals(field)[0]


def class_probability(field: MessageField, true_class: int) -> float:
    """Posterior mass the root marginal puts on ``true_class``."""
    root = marginals(field)[field.L]
    if not 0 <= true_class < field.v:
        raise ParameterError(f"class {true_class} outside 0..{field.v - 1}")
    return float(root[0, true_class])


def _sample_rows(probs: np.ndarray, rng) -> np.ndarray:
    """Draw one category per row of a row-stochastic matrix."""
    u = rng.random(probs.shape[0])
    return (probs.cumsum(axis=1) < u[:, None]).sum(axis=1)


def sample_posterior(rules: RuleTable, field: MessageField, seed=None) -> Datum:
    """Ancestral sample of a full derivation from the exact posterior.

    Root-first: draw the root from its marginal (clamping its downward
    belief to a one-hot), then per node draw one of its m rules with
    probability proportional to the product of the children's upward
    messages on the rule's tuple, and descend. The input field is never
    modified, so one BP result can seed many independent samples.
    """
    if not (field.upward_valid and field.downward_valid):
        raise PassesNotRunError("both sweeps must be valid to sample")
    params = rules.params
    rng = np.random.default_rng(seed)

    root_marginal = marginals(field)[params.L]
    syms = np.array([_sample_rows(root_marginal, rng)[0]], dtype=np.int64)
    levels = [syms]
    for layer in range(params.L, 0, -1):
        table = rules.children(layer)  # (v, m, s)
        child_up = field.up[layer - 1].reshape(-1, params.s, params.v)
        n = syms.shape[0]
        rows = np.arange(n)[:, None]
        rule_probs = np.ones((n, params.m))
        for i in range(params.s):
            rule_probs = rule_probs * child_up[rows, i, table[syms, :, i]]
        rule_probs = _normalize(rule_probs, f"rule choice at level {layer}")
        chosen = _sample_rows(rule_probs, rng)
        syms = table[syms, chosen, :].reshape(-1)
        levels.append(syms)
    return Datum(tuple(levels[::-1]), params.v)
