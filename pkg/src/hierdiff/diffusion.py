"""Forward-backward experiments on grammar data.

Two noising schemes: absorbing-state masking (each token independently
masked with probability t/T at inversion time t, the time-t marginal of
the schedule beta_t = (T - t + 1)^-1) and the trajectory-free epsilon
scheme that lowers the leaf priors directly. Denoising is exact in both
cases: either a single posterior sample given the noisy state, or the
step-by-step backward chain driven by the exact leaf marginals. The two
routes sample the same law.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .belief_prop import (
    LeafPriorField,
    marginals,
    priors_from_epsilon,
    priors_from_masking,
    run_bp,
    sample_posterior,
)
from .errors import ParameterError
from .grammar import Datum, RuleTable, generate_datum, parse_leaves

ROUTES = ("bp_direct", "backward_chain")


@dataclass(frozen=True)
class MaskPattern:
    """Which tokens are masked at inversion time t of horizon T."""

    mask: np.ndarray
    t: int
    T: int

    def __post_init__(self):
        self.mask.setflags(write=False)

    @property
    def fraction(self) -> float:
        return self.t / self.T


@dataclass(frozen=True)
class TrajectoryResult:
    """One forward-backward run: original datum, noise, regeneration."""

    x0: Datum
    xhat0: Datum
    route: str
    noise: float                 # t/T for masking, epsilon otherwise
    mask: np.ndarray | None
    seed: object | None = None

    def changed(self) -> np.ndarray:
        return self.x0.leaves != self.xhat0.leaves


def sample_mask(dim: int, t: int, T: int, seed=None) -> MaskPattern:
    """Mask each of ``dim`` positions independently with probability t/T."""
    if not 0 <= t <= T:
        raise ParameterError(f"need 0 <= t <= T, got t={t}, T={T}")
    rng = np.random.default_rng(seed)
    mask = rng.random(dim) < t / T
    return MaskPattern(mask, t, T)


def forward_backward_masking(rules: RuleTable, datum: Datum, t: int, T: int,
                             route: str = "bp_direct", seed=None) -> TrajectoryResult:
    """Noise by masking up to time t, then regenerate exactly.

    ``bp_direct`` draws one sample from the posterior given the masked
    state. ``backward_chain`` walks t -> 0: at step t each still-masked
    token is revealed with probability 1/t, and revealed tokens are
    assigned one at a time, in random order, from their current leaf
    marginal (messages refreshed after every assignment). Unmasked tokens
    are never altered by either route, and both sample the same law.
    """
    if route not in ROUTES:
        raise ParameterError(f"unknown route {route!r}; expected one of {ROUTES}")
    rng = np.random.default_rng(seed)
    pattern = sample_mask(datum.leaves.shape[0], t, T, rng)
    if route == "bp_direct":
        priors = priors_from_masking(datum, pattern.mask)
        field = run_bp(rules, priors)
        xhat = sample_posterior(rules, field, rng)
    else:
        xhat = _backward_chain(rules, datum, pattern, rng)
    return TrajectoryResult(x0=datum, xhat0=xhat, route=route,
                            noise=t / T, mask=pattern.mask)


def _backward_chain(rules: RuleTable, datum: Datum, pattern: MaskPattern,
                    rng) -> Datum:
    """Integrate the absorbing-state backward dynamics with exact marginals.

    With the t/T schedule, a token masked at step tau is revealed at
    tau - 1 with probability 1/tau; the last step reveals everything.
    Within a step, assignments are sequential so each draw conditions on
    all previously revealed tokens (per-token independent draws would
    sample the wrong joint).
    """
    d = datum.leaves.shape[0]
    priors = np.array(priors_from_masking(datum, pattern.mask).values)
    masked = pattern.mask.copy()
    field = None
    for step in range(pattern.t, 0, -1):
        if not masked.any():
            break
        reveal = np.flatnonzero(masked & (rng.random(d) < 1.0 / step))
        rng.shuffle(reveal)
        for i in reveal:
            if field is None:
                field = run_bp(rules, LeafPriorField(priors.copy(), "custom"))
            token = _sample_category(marginals(field)[0][i], rng)
            priors[i] = 0.0
            priors[i, token] = 1.0
            masked[i] = False
            field = None  # evidence changed; recompute before the next draw
    leaves = priors.argmax(axis=1)
    return parse_leaves(rules, leaves)


def _sample_category(probs: np.ndarray, rng) -> int:
    return int((probs.cumsum() < rng.random()).sum())


def forward_backward_epsilon(rules: RuleTable, datum: Datum, eps: float,
                             seed=None) -> TrajectoryResult:
    """Lower the leaf priors to noise level eps and resample once.

    There is no forward trajectory here by construction; the noisy state
    is the prior field itself.
    """
    rng = np.random.default_rng(seed)
    priors = priors_from_epsilon(datum, eps)
    field = run_bp(rules, priors)
    xhat = sample_posterior(rules, field, rng)
    return TrajectoryResult(x0=datum, xhat0=xhat, route="bp_direct",
                            noise=eps, mask=None)


def class_reconstruction_curve(rules: RuleTable, process: str, grid,
                               n_data: int, n_traj: int, seed=None,
                               T: int = 100, route: str = "bp_direct") -> np.ndarray:
    """Per-layer probability that the regenerated latent equals the original.

    Returns an array of shape (len(grid), L + 1): row g, column l is the
    average over data, trajectories and layer-l nodes of the indicator
    that the regenerated derivation tree matches the original at that
    node. Grid values are masking fractions t/T or epsilons depending on
    ``process``. Derivation trees of regenerations are unique by grammar
    unambiguity, so the comparison is well defined.
    """
    if process not in ("masking", "epsilon"):
        raise ParameterError(f"unknown process {process!r}")
    params = rules.params
    grid = np.asarray(grid, dtype=float)
    if (grid < 0).any() or (grid > 1).any():
        raise ParameterError("noise grid values must lie in [0, 1]")
    root_seq = np.random.SeedSequence(seed)
    out = np.zeros((grid.shape[0], params.L + 1))

    for d_idx in range(n_data):
        datum = generate_datum(
            rules, seed=np.random.SeedSequence(entropy=root_seq.entropy,
                                               spawn_key=(0, d_idx)))
        for g_idx, noise in enumerate(grid):
            # The epsilon priors carry no trajectory randomness, so one
            # message pass serves every trajectory of this grid point.
            shared_field = None
            if process == "epsilon":
                shared_field = run_bp(rules, priors_from_epsilon(datum, noise))
            for t_idx in range(n_traj):
                traj_seq = np.random.SeedSequence(
                    entropy=root_seq.entropy, spawn_key=(1, d_idx, g_idx, t_idx))
                if process == "masking":
                    t_step = int(round(noise * T))
                    res = forward_backward_masking(
                        rules, datum, t_step, T, route=route, seed=traj_seq)
                    xhat = res.xhat0
                else:
                    xhat = sample_posterior(rules, shared_field, traj_seq)
                for lvl in range(params.L + 1):
                    eq = datum.levels[lvl] == xhat.levels[lvl]
                    out[g_idx, lvl] += eq.mean()
    out /= n_data * n_traj
    return out
