"""Independent reference computations used to check the package.

Everything here is deliberately brute force and shares no code with the
implementation under test: derivations are enumerated recursively from
the rule table, posteriors are formed by direct weighting, and tree
distances come from repeated integer division.
"""

from __future__ import annotations

import itertools

import numpy as np

from hierdiff.grammar import Datum


def enumerate_derivations(rules):
    """All complete derivation trees with their prior probabilities.

    Returns a list of (Datum, probability); probabilities sum to 1. The
    prior of a derivation is 1/v times (1/m) per internal node.
    """
    params = rules.params
    v, m, s, L = params.v, params.m, params.s, params.L
    results = []

    def expand(levels):
        depth = len(levels) - 1  # levels built root-down
        level = L - depth
        if level == 0:
            n_internal = sum(len(lvl) for lvl in levels[:-1])
            prob = (1.0 / v) * (1.0 / m) ** n_internal
            datum = Datum(tuple(np.asarray(lvl, dtype=np.int64)
                                for lvl in levels[::-1]), v)
            results.append((datum, prob))
            return
        parent = levels[-1]
        table = rules.children(level)
        for choice in itertools.product(range(m), repeat=len(parent)):
            child = np.concatenate(
                [table[sym, c] for sym, c in zip(parent, choice)])
            expand(levels + [child])

    for root in range(v):
        expand([np.array([root])])
    return results


def posterior_weights(derivations, leaf_priors):
    """Posterior probability of each derivation given per-leaf beliefs."""
    weights = np.array([
        prob * np.prod(leaf_priors[np.arange(len(datum.leaves)), datum.leaves])
        for datum, prob in derivations
    ])
    total = weights.sum()
    if total <= 0:
        raise ArithmeticError("evidence inconsistent with every derivation")
    return weights / total


def posterior_marginals(rules, leaf_priors):
    """Exhaustive node marginals at every level, shape [(nodes, v)] per level."""
    params = rules.params
    derivations = enumerate_derivations(rules)
    weights = posterior_weights(derivations, leaf_priors)
    out = [np.zeros((params.level_size(l), params.v))
           for l in range(params.L + 1)]
    for (datum, _), w in zip(derivations, weights):
        for l in range(params.L + 1):
            out[l][np.arange(len(datum.levels[l])), datum.levels[l]] += w
    return out


def leaf_string_law(rules, leaf_priors):
    """Exhaustive posterior over leaf strings: dict tuple -> probability."""
    derivations = enumerate_derivations(rules)
    weights = posterior_weights(derivations, leaf_priors)
    law = {}
    for (datum, _), w in zip(derivations, weights):
        key = tuple(datum.leaves.tolist())
        law[key] = law.get(key, 0.0) + w
    return law


def lca_distance(i, j, s, L):
    """Tree distance by repeated integer division of leaf indices."""
    steps = 0
    while i != j:
        i //= s
        j //= s
        steps += 1
    assert steps <= L
    return steps


def planted_block_spins(n_groups, n_traj, d, block, flip_prob, rng):
    """Spin ensembles where positions flip jointly in fixed blocks.

    Every block of ``block`` consecutive positions flips as one unit with
    probability ``flip_prob``, independently across blocks and
    trajectories. The exact dynamical susceptibility of this generator is
    the block size.
    """
    assert d % block == 0
    groups = []
    for _ in range(n_groups):
        flips = rng.random((n_traj, d // block)) < flip_prob
        spins = np.where(np.repeat(flips, block, axis=1), 1.0, -1.0)
        groups.append(spins)
    return groups


def planted_block_transcripts(path, n_data, n_traj, d, block, flip_prob,
                              t_over_T, rng, source="planted"):
    """Write planted-block forward-backward transcripts as JSONL."""
    import json

    with open(path, "w") as fh:
        for d_idx in range(n_data):
            x0 = rng.integers(0, 50, size=d)
            for _ in range(n_traj):
                flips = rng.random(d // block) < flip_prob
                xhat = x0.copy()
                changed = np.repeat(flips, block)
                # move changed tokens off their original value
                xhat[changed] = (x0[changed] + 1 + rng.integers(0, 49, size=changed.sum())) % 50 + 50
                fh.write(json.dumps({
                    "source": source, "t_over_T": t_over_T,
                    "x0": x0.tolist(), "xhat0": xhat.tolist(),
                }) + "\n")
