"""Closed-form layer-wise theory of the epsilon noising process.

Averaging belief-propagation messages over random rule tables gives two
scalar recursions per layer: the mean upward belief p in a node's true
symbol and the mean downward belief q. Their fixed-point structure
controls whether the root (class) can be reconstructed: when the map F
has a repulsive interior fixed point p*, reconstruction jumps from
certain to chance-level at a critical noise eps*, and the correlation
length of token changes diverges there with exponent
nu = log s / log F'(p*).

Pair statistics follow from 2x2 matrices over reconstruct/changed states:
T (leaf state conditioned on an ancestor's state) and C (joint of two
sibling branches), combined as P = T C T^T for leaf pairs at a given tree
distance.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import BracketingError, ParameterError
from .stats import CorrelationProfile

_BRACKET_MARGIN = 1e-9
_FD_STEP = 1e-6


def _check_vms(v: int, m: int, s: int):
    if v < 2 or s < 2 or m < 1:
        raise ParameterError(f"invalid parameters v={v}, m={m}, s={s}")
    if m * v > v**s:
        raise ParameterError(f"m*v = {m * v} exceeds v**s = {v**s}")


def branch_ratio(v: int, m: int, s: int) -> float:
    """f = (mv - 1)/(v**s - 1): density of occupied tuples, minus the true one."""
    return (m * v - 1) / (v**s - 1)


def upward_map(p, v: int, m: int, s: int):
    """Mean upward belief in the true symbol, one layer up.

    F(p) has fixed points at 1 (perfect reconstruction) and 1/v (chance).
    """
    u = (1.0 - np.asarray(p, dtype=float) ** s) / (v**s - 1)
    num = np.asarray(p, dtype=float) ** s + (m - 1) * u
    den = np.asarray(p, dtype=float) ** s + (m * v - 1) * u
    return num / den


def upward_map_derivative(p, v: int, m: int, s: int):
    """Analytic dF/dp."""
    p = np.asarray(p, dtype=float)
    A = (m - 1) / (v**s - 1)
    B = (m * v - 1) / (v**s - 1)
    num = p**s + A * (1 - p**s)
    den = p**s + B * (1 - p**s)
    dnum = s * p ** (s - 1) * (1 - A)
    dden = s * p ** (s - 1) * (1 - B)
    return (dnum * den - num * dden) / den**2


def downward_map(q, p, v: int, m: int, s: int):
    """Mean downward belief in the true symbol, one layer down.

    Depends on the downward belief q of the parent and the upward belief p
    of the s - 1 sibling branches at the lower layer.
    """
    q = np.asarray(q, dtype=float)
    p = np.asarray(p, dtype=float)
    u = (m - q) / (v**s - 1)
    num = q * p ** (s - 1) + u * (1 - p ** (s - 1))
    return num / (num + (v - 1) * u)


def reconstruction_marginal(p, q, v: int):
    """Probability of the true symbol from its up/down mean beliefs."""
    p = np.asarray(p, dtype=float)
    q = np.asarray(q, dtype=float)
    wrong = (1 - p) * (1 - q) / (v - 1)
    return p * q / (p * q + wrong)


@dataclass(frozen=True)
class MapState:
    """Layer profiles of the two mean beliefs for one noise level.

    ``q`` entries above the anchor layer are NaN when the downward chain is
    started from a clamped value (q_anchor in {0, 1}) instead of the
    uniform root initialization q_L = 1/v.
    """

    p: np.ndarray
    q: np.ndarray
    f: float
    eps: float

    def __post_init__(self):
        self.p.setflags(write=False)
        self.q.setflags(write=False)


def iterate_maps(v: int, m: int, s: int, L: int, eps: float,
                 q_override: tuple[int, float] | None = None) -> MapState:
    """Run the upward recursion from p_0 and the downward one from q_L.

    ``q_override = (layer, value)`` anchors the downward chain at an inner
    layer instead of the root, as needed for conditional leaf marginals.
    """
    _check_vms(v, m, s)
    if L < 1:
        raise ParameterError(f"need L >= 1, got {L}")
    if not 0.0 <= eps <= 1.0:
        raise ParameterError(f"epsilon must lie in [0, 1], got {eps}")
    p = np.empty(L + 1)
    p[0] = 1.0 - eps + eps / v
    for l in range(L):
        p[l + 1] = upward_map(p[l], v, m, s)

    q = np.full(L + 1, np.nan)
    if q_override is None:
        anchor, value = L, 1.0 / v
    else:
        anchor, value = q_override
        if not 0 <= anchor <= L:
            raise ParameterError(f"override layer {anchor} outside 0..{L}")
    q[anchor] = value
    for l in range(anchor, 0, -1):
        q[l - 1] = downward_map(q[l], p[l - 1], v, m, s)
    return MapState(p=p, q=q, f=branch_ratio(v, m, s), eps=eps)


@dataclass(frozen=True)
class PhaseDiagnosis:
    """Existence and location of the class phase transition.

    When the transition exists: p_star is the repulsive fixed point of the
    upward map, eps_star the matching critical noise, F_prime_star the
    slope at p_star and nu = log s / log F_prime_star the correlation
    length exponent.
    """

    v: int
    m: int
    s: int
    condition_value: float
    transition_exists: bool
    p_star: float | None = None
    eps_star: float | None = None
    F_prime_star: float | None = None
    nu: float | None = None


def phase_diagnosis(v: int, m: int, s: int, tol: float = 1e-12) -> PhaseDiagnosis:
    """Locate the interior fixed point of the upward map, if any.

    The transition requires s*m*(v-1)/(v**s - 1) < 1 (slope of F at the
    perfect-reconstruction fixed point below one). p* is found by
    bisection of F(p) - p on (1/v + delta, 1 - delta); the analytic slope
    at p* is cross-checked against a central finite difference.
    """
    _check_vms(v, m, s)
    condition = s * m * (v - 1) / (v**s - 1)
    if condition >= 1.0:
        return PhaseDiagnosis(v, m, s, condition, False)

    def g(p):
        return float(upward_map(p, v, m, s)) - p

    lo, hi = 1.0 / v + _BRACKET_MARGIN, 1.0 - _BRACKET_MARGIN
    glo, ghi = g(lo), g(hi)
    if not (glo < 0.0 < ghi):
        raise BracketingError(
            f"F(p) - p does not change sign on ({lo}, {hi}); got "
            f"({glo:.3e}, {ghi:.3e})"
        )
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        if g(mid) < 0.0:
            lo = mid
        else:
            hi = mid
    p_star = 0.5 * (lo + hi)

    slope = float(upward_map_derivative(p_star, v, m, s))
    fd = (float(upward_map(p_star + _FD_STEP, v, m, s))
          - float(upward_map(p_star - _FD_STEP, v, m, s))) / (2 * _FD_STEP)
    if abs(slope - fd) > 1e-6 * max(1.0, abs(slope)):
        raise ArithmeticError(
            f"analytic slope {slope} disagrees with finite difference {fd}"
        )
    eps_star = (1.0 - p_star) / (1.0 - 1.0 / v)
    nu = float(np.log(s) / np.log(slope))
    return PhaseDiagnosis(v, m, s, condition, True, p_star=p_star,
                          eps_star=eps_star, F_prime_star=slope, nu=nu)


@dataclass(frozen=True)
class MFJoint:
    """Mean joint law of two leaves at a given tree distance.

    State 1 means the starting symbol was reconstructed, state 2 that it
    changed. ``T`` conditions a leaf on its branch's top node, ``C`` is the
    joint of the two branch tops, and ``P = T C T^T`` the leaf-pair joint.
    """

    T: np.ndarray
    C: np.ndarray
    P: np.ndarray
    ltilde: int
    leaf_marginal: float

    def __post_init__(self):
        for mat in (self.T, self.C, self.P):
            mat.setflags(write=False)

    def spin_correlation(self) -> float:
        """Covariance of the two change indicators as +/-1 spins."""
        joint = self.P[0, 0] + self.P[1, 1] - self.P[0, 1] - self.P[1, 0]
        mean = 1.0 - 2.0 * self.leaf_marginal
        return float(joint - mean**2)


def mf_pair_joint(v: int, m: int, s: int, L: int, eps: float,
                  ltilde: int) -> MFJoint:
    """Joint reconstruction law of two leaves at tree distance ``ltilde``.

    The two leaves hang below a common ancestor at level ltilde through two
    distinct children at level ltilde - 1. Conditioning a leaf on a branch
    top uses the downward chain anchored at q = 1 (top reconstructed) or
    q = 0 (top changed); the branch-top joint follows from rule averages
    given the ancestor's state, mixed by the ancestor's marginal.
    """
    if not 1 <= ltilde <= L:
        raise ParameterError(f"tree distance {ltilde} outside 1..{L}")
    state = iterate_maps(v, m, s, L, eps)
    marg = reconstruction_marginal(state.p, state.q, v)

    t_rec = iterate_maps(v, m, s, L, eps, q_override=(ltilde - 1, 1.0))
    t_chg = iterate_maps(v, m, s, L, eps, q_override=(ltilde - 1, 0.0))
    T11 = float(reconstruction_marginal(t_rec.p[0], t_rec.q[0], v))
    T12 = float(reconstruction_marginal(t_chg.p[0], t_chg.q[0], v))
    T = np.array([[T11, T12], [1.0 - T11, 1.0 - T12]])

    p = float(state.p[ltilde - 1])
    off = (m - 1) / (v**s - 1)
    z_rec = p**2 + off * (1 - p**2)
    given_rec = np.array([
        [p**2, p * (1 - p) * off],
        [p * (1 - p) * off, (1 - p) ** 2 * off],
    ]) / z_rec
    # Given a changed ancestor the true rule is unavailable and the m
    # candidate rules cancel, leaving a p-only law; the reduced form stays
    # finite at p = 1 where the raw normalizer vanishes.
    given_chg = np.array([
        [0.0, p / (1 + p)],
        [p / (1 + p), (1 - p) / (1 + p)],
    ])
    M = float(marg[ltilde])
    C = M * given_rec + (1.0 - M) * given_chg
    P = T @ C @ T.T
    return MFJoint(T=T, C=C, P=P, ltilde=ltilde, leaf_marginal=float(marg[0]))


def mf_profile(v: int, m: int, s: int, L: int, eps_grid) -> list:
    """Theory correlation profiles and susceptibilities on a noise grid.

    For each noise level the normalized spin correlation is evaluated at
    every tree distance, and chi sums it with the exact leaf-pair
    multiplicity (s - 1) s**(ltilde - 1) of the regular tree, mirroring
    the empirical all-pairs susceptibility.
    """
    profiles = []
    n_leaves = s**L
    for eps in np.asarray(eps_grid, dtype=float):
        corr = np.empty(L)
        leaf_marg = None
        for lt in range(1, L + 1):
            joint = mf_pair_joint(v, m, s, L, float(eps), lt)
            corr[lt - 1] = joint.spin_correlation()
            leaf_marg = joint.leaf_marginal
        c0 = 4.0 * leaf_marg * (1.0 - leaf_marg)  # variance of a +/-1 spin
        degenerate = not (c0 > 0.0)
        mult = (s - 1) * s ** np.arange(L, dtype=float)  # pairs per leaf
        if degenerate:
            values = np.full(L + 1, np.nan)
            chi = float("nan")
        else:
            values = np.concatenate([[1.0], corr / c0])
            chi = float(1.0 + (mult * corr / c0).sum())
        coords = np.concatenate([[0.0], s ** np.arange(1.0, L + 1) - 1.0])
        pairs = np.concatenate([[n_leaves], n_leaves * mult / 2]).astype(np.int64)
        profiles.append(CorrelationProfile(
            binning="tree", r=coords, values=values, pair_counts=pairs,
            c0=float(c0), chi=chi, noise=float(eps), degenerate=degenerate,
            source="theory",
        ))
    return profiles
