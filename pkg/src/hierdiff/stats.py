"""Estimators of token-change correlations and dynamical susceptibility.

Per starting datum, the covariance of the spin variables over stochastic
trajectories measures which positions change together; averaging these
covariances over starting data gives the dynamical correlation matrix.
Binned by distance (tree distance for grammar data, index distance for
transcripts, radial for fields) and normalized by the autocorrelation,
it yields a correlation profile; the ratio of the total correlation to
the total autocorrelation is the dynamical susceptibility, the typical
volume of a block of jointly changing positions.
"""

from __future__ import annotations

from dataclasses import dataclass, field as dc_field

import numpy as np

from .errors import BracketingError, InsufficientDataError, ParameterError
from .grammar import GrammarParams, tree_distance_matrix


@dataclass(frozen=True)
class SpinSample:
    """Per-position change variables for one trajectory.

    Discrete mode: +1 where the token changed, -1 where it did not.
    Continuous mode: nonnegative magnitude of the per-position change.
    """

    values: np.ndarray
    mode: str

    def __post_init__(self):
        if self.mode == "discrete":
            if not np.isin(self.values, (-1, 1)).all():
                raise ParameterError("discrete spins must be +/-1")
        elif self.mode == "continuous":
            if (self.values < 0).any():
                raise ParameterError("continuous spins must be nonnegative")
        else:
            raise ParameterError(f"unknown spin mode {self.mode!r}")
        self.values.setflags(write=False)


def make_spins(x0, xhat0, mode: str = "discrete") -> SpinSample:
    """Compare original and regenerated tokens position by position.

    Continuous mode expects per-position embedding vectors of equal
    dimension and returns the difference norms.
    """
    a = np.asarray(x0)
    b = np.asarray(xhat0)
    if a.shape != b.shape:
        raise ParameterError(f"shape mismatch: {a.shape} vs {b.shape}")
    if mode == "discrete":
        if a.ndim != 1:
            raise ParameterError("discrete mode expects 1-d token sequences")
        vals = np.where(a != b, 1, -1).astype(np.int8)
    elif mode == "continuous":
        if a.ndim == 1:
            vals = np.abs(a.astype(float) - b.astype(float))
        elif a.ndim == 2:
            vals = np.linalg.norm(a.astype(float) - b.astype(float), axis=1)
        else:
            raise ParameterError("continuous mode expects 1-d or 2-d arrays")
    else:
        raise ParameterError(f"unknown spin mode {mode!r}")
    return SpinSample(vals, mode)


@dataclass(frozen=True)
class EnsembleCorrelations:
    """Trajectory covariance per datum and its average over data.

    ``mean`` is the (d, d) dynamical correlation matrix; ``per_datum``
    stacks the per-datum covariance matrices, used for error bars.
    """

    mean: np.ndarray
    per_datum: np.ndarray

    def __post_init__(self):
        self.mean.setflags(write=False)
        self.per_datum.setflags(write=False)


def ensemble_correlations(groups) -> EnsembleCorrelations:
    """Covariance of spins over trajectories, then averaged over data.

    ``groups`` is a sequence of (n_traj, d) float arrays, one per starting
    datum. Uses the unbiased 1/(n-1) estimator per datum; requires at
    least two trajectories everywhere.
    """
    groups = [np.asarray(g, dtype=float) for g in groups]
    if not groups:
        raise InsufficientDataError("no trajectory groups supplied")
    d = groups[0].shape[1]
    per = np.empty((len(groups), d, d))
    for k, g in enumerate(groups):
        if g.ndim != 2 or g.shape[1] != d:
            raise ParameterError("all groups must share the sequence length")
        if g.shape[0] < 2:
            raise InsufficientDataError(
                f"group {k} has {g.shape[0]} trajectories, need >= 2"
            )
        per[k] = np.cov(g, rowvar=False, ddof=1)
    mean = per.mean(axis=0)
    mean = 0.5 * (mean + mean.T)
    return EnsembleCorrelations(mean, per)


@dataclass
class CorrelationProfile:
    """Distance-binned correlations with normalization and susceptibility.

    ``values`` holds C(r)/C(0) per bin; ``c0`` the autocorrelation used as
    normalizer; ``errors`` standard errors of the normalized bins when an
    across-data scatter is available. ``degenerate`` flags an ensemble in
    which nothing changed (zero autocorrelation), where the normalized
    profile and chi are undefined.
    """

    binning: str                     # "tree" | "index" | "radial"
    r: np.ndarray                    # bin coordinate (real distance)
    values: np.ndarray               # C(r)/C(0) per bin
    pair_counts: np.ndarray
    c0: float
    chi: float
    chi_window: float | None = None
    n_data: int = 0
    n_traj: int = 0
    noise: float | None = None
    errors: np.ndarray | None = None
    degenerate: bool = False
    source: str = "empirical"
    meta: dict = dc_field(default_factory=dict)


def _distance_matrix(d: int, binning: str, params: GrammarParams | None):
    if binning == "index":
        idx = np.arange(d)
        return np.abs(idx[:, None] - idx[None, :])
    if binning == "tree":
        if params is None:
            raise ParameterError("tree binning requires grammar parameters")
        if params.n_leaves != d:
            raise ParameterError(
                f"matrix is {d}x{d} but the grammar has {params.n_leaves} leaves"
            )
        return tree_distance_matrix(params)
    raise ParameterError(f"unknown binning {binning!r}")


def _bin_means(C: np.ndarray, dist: np.ndarray):
    """Average matrix entries over groups of equal distance."""
    labels = np.unique(dist)
    sums = np.array([C[dist == g].sum() for g in labels])
    counts = np.array([(dist == g).sum() for g in labels])
    return labels, sums / counts, counts


def bin_profile(C: np.ndarray, binning: str,
                params: GrammarParams | None = None,
                per_datum: np.ndarray | None = None,
                noise: float | None = None,
                n_data: int = 0, n_traj: int = 0) -> CorrelationProfile:
    """Bin a correlation matrix by pair distance and normalize by C(0).

    Tree binning groups leaf pairs by tree distance ltilde and reports the
    real distance r = s**ltilde - 1; index binning groups by |i - j|.
    When ``per_datum`` covariances are given, per-bin standard errors of
    the normalized profile are estimated from the across-data scatter.
    """
    C = np.asarray(C, dtype=float)
    if C.ndim != 2 or C.shape[0] != C.shape[1]:
        raise ParameterError("correlation matrix must be square")
    if np.abs(C - C.T).max() > 1e-8 * max(1.0, np.abs(C).max()):
        raise ParameterError("correlation matrix must be symmetric")
    d = C.shape[0]
    dist = _distance_matrix(d, binning, params)

    labels, means, counts = _bin_means(C, dist)
    c0 = float(means[labels == 0][0])
    degenerate = not (c0 > 0.0)

    if binning == "tree":
        coords = params.s ** labels.astype(float) - 1.0
        coords[labels == 0] = 0.0
    else:
        coords = labels.astype(float)
    pair_counts = counts.copy()
    pair_counts[labels != 0] //= 2  # unordered pairs off the diagonal

    if degenerate:
        values = np.full(means.shape, np.nan)
        chi = float("nan")
    else:
        values = means / c0
        chi = susceptibility(C, window=None)

    errors = None
    if per_datum is not None and not degenerate:
        per_vals = []
        for Ck in per_datum:
            _, mk, _ = _bin_means(np.asarray(Ck, dtype=float), dist)
            per_vals.append(mk / c0)
        per_vals = np.stack(per_vals)
        n = per_vals.shape[0]
        errors = per_vals.std(axis=0, ddof=1) / np.sqrt(n) if n > 1 else None

    return CorrelationProfile(
        binning=binning, r=coords, values=values, pair_counts=pair_counts,
        c0=c0, chi=chi, n_data=n_data, n_traj=n_traj, noise=noise,
        errors=errors, degenerate=degenerate,
    )


def susceptibility(C: np.ndarray, window: float | None = None) -> float:
    """Total correlation normalized by total autocorrelation.

    ``window`` restricts the numerator to pairs with index distance
    |i - j| <= window (used for transcripts to avoid finite-size effects);
    by default all pairs are summed. Returns NaN when the autocorrelation
    sum is zero (no changes anywhere in the ensemble).
    """
    C = np.asarray(C, dtype=float)
    if C.ndim != 2 or C.shape[0] != C.shape[1]:
        raise ParameterError("correlation matrix must be square")
    diag = np.trace(C)
    if not diag > 0.0:
        return float("nan")
    if window is None:
        total = C.sum()
    else:
        idx = np.arange(C.shape[0])
        keep = np.abs(idx[:, None] - idx[None, :]) <= window
        total = C[keep].sum()
    return float(total / diag)


@dataclass(frozen=True)
class CollapseFit:
    """Critical-decay exponent and the quality of the rescaled overlay."""

    a: float
    score: float
    eps_star: float
    nu: float


def collapse_fit(profiles, diagnosis, min_pairs: int = 30) -> CollapseFit:
    """Fit the critical decay and score the correlation-length collapse.

    ``profiles`` maps noise values to CorrelationProfile objects that must
    bracket the critical point. The decay exponent ``a`` is fit by least
    squares on log C vs log r at the grid point nearest the critical noise,
    using bins with at least ``min_pairs`` pairs. Each profile is then
    rescaled (r -> r / xi, C -> C * xi**a with xi = |eps - eps*|**-nu) and
    the score is the mean squared deviation of log C across curves on a
    common log-spaced grid; exact scaling curves give a score near zero.
    """
    if not diagnosis.transition_exists:
        raise ParameterError("no phase transition for these parameters")
    eps_star, nu = diagnosis.eps_star, diagnosis.nu
    eps_vals = np.array(sorted(profiles))
    if len(eps_vals) < 3:
        raise BracketingError("need at least three noise values")
    if not (eps_vals.min() < eps_star < eps_vals.max()):
        raise BracketingError(
            f"noise grid [{eps_vals.min()}, {eps_vals.max()}] does not bracket "
            f"the critical point {eps_star:.4f}"
        )

    def usable(profile):
        keep = (profile.r >= 1) & (profile.pair_counts >= min_pairs)
        keep &= np.isfinite(profile.values) & (profile.values > 0)
        return profile.r[keep], profile.values[keep]

    nearest = eps_vals[np.argmin(np.abs(eps_vals - eps_star))]
    r_fit, c_fit = usable(profiles[nearest])
    if r_fit.size < 3:
        raise InsufficientDataError("too few valid bins to fit the critical decay")
    slope, _ = np.polyfit(np.log(r_fit), np.log(c_fit), 1)
    a = -float(slope)

    curves = []
    for eps in eps_vals:
        gap = abs(eps - eps_star)
        if gap < 1e-12:
            continue  # infinite correlation length, nothing to rescale
        xi = gap ** (-nu)
        r, c = usable(profiles[eps])
        if r.size >= 2:
            curves.append((np.log(r / xi), np.log(c * xi**a)))
    if len(curves) < 2:
        raise InsufficientDataError("too few valid curves for a collapse score")

    lo = max(x[0] for x, _ in curves)
    hi = min(x[-1] for x, _ in curves)
    if not hi > lo:
        raise InsufficientDataError("rescaled curves share no overlap range")
    grid = np.linspace(lo, hi, 25)
    stack = np.stack([np.interp(grid, x, y) for x, y in curves])
    score = float(stack.var(axis=0, ddof=0).mean())
    return CollapseFit(a=a, score=score, eps_star=eps_star, nu=nu)
