"""Experiment orchestration: configs, deterministic execution, CSV output.

Every run derives all randomness from one master seed through named
SeedSequence spawn keys, (datum index, trajectory index, grid index), so
results are identical under any worker count and re-running a config
byte-reproduces its output files. Output is CSV for curves and JSON for
scalar diagnoses; every file set ships a meta.json with the config hash,
seed, and code version.
"""

from __future__ import annotations

import csv
import hashlib
import json
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field as dc_field
from functools import partial

import numpy as np
import yaml

from . import __version__
from .belief_prop import priors_from_epsilon, run_bp, sample_posterior
from .diffusion import forward_backward_masking
from .errors import (
    DataFormatError,
    HierdiffError,
    InsufficientDataError,
    ParameterError,
)
from .grammar import GrammarParams, RuleTable, build_grammar, generate_datum
from .grf import (
    SpectralGrid,
    diff_field_correlations,
    correlation_length,
    mode_error_profile,
    sample_and_diffuse,
)
from .meanfield import mf_profile, phase_diagnosis
from .stats import bin_profile, ensemble_correlations, make_spins, susceptibility

KINDS = ("rhm_epsilon", "rhm_masking", "meanfield", "grf", "transcripts")


class TrajectoryError(HierdiffError, RuntimeError):
    """A trajectory failed; carries (datum, trajectory, noise) context."""

    def __init__(self, datum_index, traj_index, noise, cause):
        super().__init__(
            f"trajectory failed at datum={datum_index}, trajectory={traj_index}, "
            f"noise={noise}: {cause}"
        )
        self.datum_index = datum_index
        self.traj_index = traj_index
        self.noise = noise


@dataclass
class ExperimentConfig:
    """Full description of one run; all defaults are explicit in metadata."""

    kind: str
    seed: int = 0
    outdir: str = "results"
    grammar: GrammarParams | None = None
    noise_grid: tuple = ()
    n_data: int = 32
    n_traj: int = 64
    route: str = "bp_direct"
    binning: str = "tree"
    chi_window: float | None = None
    masking_T: int = 100
    workers: int = 1
    save_trajectories: bool = False
    grf: dict = dc_field(default_factory=dict)
    transcripts: str | None = None

    @classmethod
    def from_dict(cls, doc: dict) -> "ExperimentConfig":
        doc = dict(doc)
        grammar = doc.pop("grammar", None)
        if grammar is not None:
            grammar = GrammarParams(**grammar)
        grid = tuple(float(x) for x in doc.pop("noise_grid", ()))
        known = {f for f in cls.__dataclass_fields__}
        extra = set(doc) - known
        if extra:
            raise ParameterError(f"unknown config keys: {sorted(extra)}")
        cfg = cls(grammar=grammar, noise_grid=grid, **doc)
        cfg.validate()
        return cfg

    @classmethod
    def from_yaml(cls, path) -> "ExperimentConfig":
        with open(path) as fh:
            doc = yaml.safe_load(fh)
        if not isinstance(doc, dict):
            raise ParameterError(f"config file {path} is not a mapping")
        return cls.from_dict(doc)

    def validate(self):
        if self.kind not in KINDS:
            raise ParameterError(f"unknown experiment kind {self.kind!r}")
        if self.kind in ("rhm_epsilon", "rhm_masking"):
            if self.grammar is None:
                raise ParameterError(f"{self.kind} requires grammar parameters")
            if not self.noise_grid:
                raise ParameterError(f"{self.kind} requires a noise grid")
            if any(not 0.0 <= x <= 1.0 for x in self.noise_grid):
                raise ParameterError("noise grid values must lie in [0, 1]")
            if self.n_traj < 2:
                raise InsufficientDataError(
                    "correlation estimation needs n_traj >= 2 per datum"
                )
            if self.n_data < 1:
                raise ParameterError("need n_data >= 1")
        if self.kind == "meanfield":
            if self.grammar is None:
                raise ParameterError("meanfield requires grammar parameters")
            if not self.noise_grid:
                raise ParameterError("meanfield requires a noise grid")
        if self.kind == "grf":
            if not self.noise_grid:
                raise ParameterError("grf requires a grid of t/T fractions")
            if any(not 0.0 < x <= 1.0 for x in self.noise_grid):
                raise ParameterError("grf grid fractions must lie in (0, 1]")
            if self.n_data < 2:
                raise InsufficientDataError("grf needs n_data >= 2 samples per time")
        if self.kind == "transcripts" and not self.transcripts:
            raise ParameterError("transcripts kind requires a transcripts path")
        if self.route not in ("bp_direct", "backward_chain"):
            raise ParameterError(f"unknown route {self.route!r}")
        if self.workers < 1:
            raise ParameterError("workers must be >= 1")

    def canonical(self) -> dict:
        doc = {
            "kind": self.kind, "seed": self.seed, "outdir": self.outdir,
            "noise_grid": list(self.noise_grid), "n_data": self.n_data,
            "n_traj": self.n_traj, "route": self.route, "binning": self.binning,
            "chi_window": self.chi_window, "masking_T": self.masking_T,
            "save_trajectories": self.save_trajectories,
            "grf": dict(self.grf), "transcripts": self.transcripts,
        }
        if self.grammar is not None:
            doc["grammar"] = {"v": self.grammar.v, "m": self.grammar.m,
                              "s": self.grammar.s, "L": self.grammar.L}
        return doc

    def config_hash(self) -> str:
        blob = json.dumps(self.canonical(), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()

    def spectral_grid(self) -> SpectralGrid:
        return SpectralGrid(**self.grf)


@dataclass
class ExperimentResult:
    """In-memory results plus the paths of everything written."""

    config: ExperimentConfig
    profiles: list
    theory_profiles: list = dc_field(default_factory=list)
    phase: object = None
    reconstruction: np.ndarray | None = None
    extras: dict = dc_field(default_factory=dict)
    files: dict = dc_field(default_factory=dict)


# ---------------------------------------------------------------------------
# transcripts

@dataclass(frozen=True)
class TranscriptPair:
    """One external forward-backward record: original and regenerated ids."""

    source: str
    t_over_T: float
    x0: np.ndarray
    xhat0: np.ndarray

    def __post_init__(self):
        self.x0.setflags(write=False)
        self.xhat0.setflags(write=False)


def ingest_transcripts(path) -> dict:
    """Read a JSONL transcript file into groups keyed by (source, t/T).

    Each line is an object {source, t_over_T, x0: [int], xhat0: [int]};
    sequences in a pair must have equal length and nonnegative ids.
    Malformed records raise DataFormatError with their line number; an
    empty file yields an empty mapping.
    """
    groups: dict = {}
    with open(path) as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                doc = json.loads(line)
            except json.JSONDecodeError as exc:
                raise DataFormatError(f"invalid JSON ({exc.msg})", line=lineno) from None
            if not isinstance(doc, dict):
                raise DataFormatError("record is not an object", line=lineno)
            missing = {"source", "t_over_T", "x0", "xhat0"} - set(doc)
            if missing:
                raise DataFormatError(f"missing fields {sorted(missing)}", line=lineno)
            x0 = np.asarray(doc["x0"], dtype=np.int64)
            xhat0 = np.asarray(doc["xhat0"], dtype=np.int64)
            if x0.ndim != 1 or xhat0.ndim != 1:
                raise DataFormatError("token sequences must be flat lists", line=lineno)
            if x0.shape != xhat0.shape:
                raise DataFormatError(
                    f"length mismatch: {x0.shape[0]} vs {xhat0.shape[0]}", line=lineno)
            if x0.size and (x0.min() < 0 or xhat0.min() < 0):
                raise DataFormatError("token ids must be nonnegative", line=lineno)
            pair = TranscriptPair(str(doc["source"]), float(doc["t_over_T"]), x0, xhat0)
            groups.setdefault((pair.source, pair.t_over_T), []).append(pair)
    return groups


def analyze_transcript_group(pairs, window: float | None = 10.0):
    """Correlation profile and windowed susceptibility for one (source, t).

    Trajectories are grouped by identical starting sequence; a starting
    sequence seen only once carries no trajectory variance and is skipped.
    """
    by_datum: dict = {}
    for pair in pairs:
        by_datum.setdefault(tuple(pair.x0.tolist()), []).append(pair)
    groups = []
    for runs in by_datum.values():
        if len(runs) < 2:
            continue
        spins = np.stack([
            make_spins(run.x0, run.xhat0, "discrete").values.astype(float)
            for run in runs])
        groups.append(spins)
    if not groups:
        raise InsufficientDataError(
            "no starting sequence has >= 2 trajectories; cannot estimate "
            "trajectory correlations"
        )
    ens = ensemble_correlations(groups)
    profile = bin_profile(ens.mean, "index", per_datum=ens.per_datum,
                          noise=pairs[0].t_over_T,
                          n_data=len(groups), n_traj=min(len(g) for g in groups))
    profile.chi = susceptibility(ens.mean, window=window)
    profile.chi_window = window
    return profile


# ---------------------------------------------------------------------------
# seeded jobs (module level so process pools can pickle them)

def _seq(entropy, *key):
    return np.random.SeedSequence(entropy=entropy, spawn_key=key)


def _datum_for(rules, entropy, d_idx):
    return generate_datum(rules, seed=_seq(entropy, 1, d_idx))


def _epsilon_datum_job(d_idx, rules=None, grid=(), n_traj=0, entropy=0):
    """Spins for all trajectories of one datum, at every noise level.

    The epsilon priors are deterministic given (datum, eps), so one message
    pass per grid point serves all trajectories.
    """
    datum = _datum_for(rules, entropy, d_idx)
    out = []
    for g_idx, eps in enumerate(grid):
        field = run_bp(rules, priors_from_epsilon(datum, eps))
        spins = np.empty((n_traj, datum.leaves.shape[0]), dtype=np.int8)
        for t_idx in range(n_traj):
            try:
                xhat = sample_posterior(rules, field,
                                        _seq(entropy, 2, g_idx, d_idx, t_idx))
            except Exception as exc:
                raise TrajectoryError(d_idx, t_idx, eps, exc) from exc
            spins[t_idx] = make_spins(datum.leaves, xhat.leaves).values
        out.append(spins)
    return out


def _masking_datum_job(d_idx, rules=None, grid=(), n_traj=0, entropy=0,
                       T=100, route="bp_direct", keep_raw=False):
    """Spins, per-layer reconstruction stats and optional raw trajectories."""
    datum = _datum_for(rules, entropy, d_idx)
    L = rules.params.L
    spins_out, recon = [], np.zeros((len(grid), L + 1))
    raw = []
    for g_idx, frac in enumerate(grid):
        t_step = int(round(frac * T))
        spins = np.empty((n_traj, datum.leaves.shape[0]), dtype=np.int8)
        for t_idx in range(n_traj):
            try:
                res = forward_backward_masking(
                    rules, datum, t_step, T, route=route,
                    seed=_seq(entropy, 2, g_idx, d_idx, t_idx))
            except Exception as exc:
                raise TrajectoryError(d_idx, t_idx, frac, exc) from exc
            spins[t_idx] = make_spins(datum.leaves, res.xhat0.leaves).values
            for lvl in range(L + 1):
                recon[g_idx, lvl] += (datum.levels[lvl] == res.xhat0.levels[lvl]).mean()
            if keep_raw:
                raw.append({
                    "datum_id": d_idx, "noise": frac, "route": route,
                    "x0": datum.leaves.tolist(),
                    "xhat0": res.xhat0.leaves.tolist(),
                    "mask": res.mask.astype(int).tolist(),
                })
        spins_out.append(spins)
    recon /= n_traj
    return spins_out, recon, raw


def _map_jobs(job, n_jobs, workers):
    """Run a seeded per-index job, serially or in a process pool.

    Results are collected in index order either way, so the output is
    independent of the worker count.
    """
    if workers <= 1:
        return [job(i) for i in range(n_jobs)]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(job, range(n_jobs)))


# ---------------------------------------------------------------------------
# pipelines

def _grammar_and_theory(config):
    params = config.grammar
    entropy = config.seed
    rules = build_grammar(params, _seq(entropy, 0))
    return params, entropy, rules


def _run_rhm(config: ExperimentConfig) -> ExperimentResult:
    params, entropy, rules = _grammar_and_theory(config)
    if config.kind == "rhm_epsilon":
        job = partial(_epsilon_datum_job, rules=rules, grid=config.noise_grid,
                      n_traj=config.n_traj, entropy=entropy)
        per_datum = _map_jobs(job, config.n_data, config.workers)
        spins_by_grid = list(zip(*per_datum))
        recon = None
        raw = []
    else:
        job = partial(_masking_datum_job, rules=rules, grid=config.noise_grid,
                      n_traj=config.n_traj, entropy=entropy, T=config.masking_T,
                      route=config.route, keep_raw=config.save_trajectories)
        results = _map_jobs(job, config.n_data, config.workers)
        spins_by_grid = list(zip(*[r[0] for r in results]))
        recon = np.mean([r[1] for r in results], axis=0)
        raw = [rec for r in results for rec in r[2]]

    profiles = []
    for g_idx, noise in enumerate(config.noise_grid):
        groups = [s.astype(float) for s in spins_by_grid[g_idx]]
        ens = ensemble_correlations(groups)
        profile = bin_profile(ens.mean, config.binning, params=params,
                              per_datum=ens.per_datum, noise=noise,
                              n_data=config.n_data, n_traj=config.n_traj)
        if config.chi_window is not None:
            profile.chi = susceptibility(ens.mean, window=config.chi_window)
            profile.chi_window = config.chi_window
        profiles.append(profile)

    theory = []
    if config.kind == "rhm_epsilon":
        theory = mf_profile(params.v, params.m, params.s, params.L,
                            config.noise_grid)
    extras = {"raw_trajectories": raw} if raw else {}
    return ExperimentResult(config=config, profiles=profiles,
                            theory_profiles=theory, reconstruction=recon,
                            extras=extras)


def _run_meanfield(config: ExperimentConfig) -> ExperimentResult:
    params = config.grammar
    phase = phase_diagnosis(params.v, params.m, params.s)
    theory = mf_profile(params.v, params.m, params.s, params.L,
                        config.noise_grid)
    return ExperimentResult(config=config, profiles=[], theory_profiles=theory,
                            phase=phase)


def _run_grf(config: ExperimentConfig) -> ExperimentResult:
    grid = config.spectral_grid()
    entropy = config.seed
    profiles, modal_rows, corr_lengths = [], [], []
    theory_overlays = {}
    for g_idx, frac in enumerate(config.noise_grid):
        t = max(1, int(round(frac * grid.T)))
        ensembles = [
            sample_and_diffuse(grid, t, seed=_seq(entropy, 3, g_idx, k))
            for k in range(config.n_data)
        ]
        fc = diff_field_correlations(ensembles, grid)
        fc.profile.noise = frac
        profiles.append(fc.profile)
        theory_overlays[frac] = fc.theory_values
        corr_lengths.append(correlation_length(fc.profile))
        kappa, e2, se, theo = mode_error_profile(ensembles, grid)
        for row in zip(kappa, e2, se, theo):
            modal_rows.append((frac,) + tuple(float(x) for x in row))
    extras = {
        "modal_rows": modal_rows,
        "corr_lengths": corr_lengths,
        "theory_overlays": theory_overlays,
        "grid": grid,
    }
    return ExperimentResult(config=config, profiles=profiles, extras=extras)


def _run_transcripts(config: ExperimentConfig) -> ExperimentResult:
    window = 10.0 if config.chi_window is None else config.chi_window
    groups = ingest_transcripts(config.transcripts)
    profiles = []
    for (source, t_over_T) in sorted(groups):
        profile = analyze_transcript_group(groups[(source, t_over_T)], window)
        profile.meta["source"] = source
        profiles.append(profile)
    return ExperimentResult(config=config, profiles=profiles)


# ---------------------------------------------------------------------------
# output

def _fmt(x):
    if x is None:
        return ""
    if isinstance(x, float):
        return repr(x)
    return str(x)


def _write_csv(path, header, rows):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for row in rows:
            writer.writerow([_fmt(x) for x in row])


def _profile_rows(profiles, extra=()):
    for prof in profiles:
        for j in range(prof.r.shape[0]):
            err = "" if prof.errors is None else repr(float(prof.errors[j]))
            yield ((prof.noise, prof.r[j], float(prof.values[j]),
                    int(prof.pair_counts[j]), err) + tuple(extra))


def _susceptibility_rows(profiles):
    for prof in profiles:
        yield (prof.noise, prof.chi, prof.chi_window, prof.n_data, prof.n_traj)


def write_results(result: ExperimentResult) -> ExperimentResult:
    """Emit the CSV/JSON bundle for a finished run (and nothing earlier)."""
    config = result.config
    outdir = config.outdir
    os.makedirs(outdir, exist_ok=True)
    files = {}

    def path(name):
        files[name] = os.path.join(outdir, name)
        return files[name]

    if result.profiles:
        _write_csv(path("profiles.csv"),
                   ("noise", "r", "C_over_C0", "pair_count", "se"),
                   _profile_rows(result.profiles))
        _write_csv(path("susceptibility.csv"),
                   ("noise", "chi", "window", "n_data", "n_traj"),
                   _susceptibility_rows(result.profiles))
    if result.theory_profiles:
        _write_csv(path("theory_profiles.csv"),
                   ("noise", "r", "C_over_C0", "pair_count", "se"),
                   _profile_rows(result.theory_profiles))
        _write_csv(path("theory_susceptibility.csv"),
                   ("noise", "chi", "window", "n_data", "n_traj"),
                   _susceptibility_rows(result.theory_profiles))
    if result.phase is not None:
        ph = result.phase
        _write_csv(path("phase.csv"),
                   ("v", "m", "s", "condition_value", "transition_exists",
                    "p_star", "eps_star", "nu"),
                   [(ph.v, ph.m, ph.s, ph.condition_value,
                     int(ph.transition_exists), ph.p_star, ph.eps_star, ph.nu)])
        with open(path("phase.json"), "w") as fh:
            json.dump({
                "v": ph.v, "m": ph.m, "s": ph.s,
                "condition_value": ph.condition_value,
                "transition_exists": ph.transition_exists,
                "p_star": ph.p_star, "eps_star": ph.eps_star,
                "F_prime_star": ph.F_prime_star, "nu": ph.nu,
            }, fh, sort_keys=True, indent=1)
    if result.reconstruction is not None:
        rows = []
        for g_idx, noise in enumerate(config.noise_grid):
            for lvl in range(result.reconstruction.shape[1]):
                rows.append((noise, lvl, float(result.reconstruction[g_idx, lvl])))
        _write_csv(path("reconstruction.csv"), ("noise", "layer", "prob"), rows)
    if config.kind == "grf" and result.profiles:
        grid = result.extras["grid"]
        _write_csv(path("grf_profiles.csv"),
                   ("noise", "r", "C_over_C0", "pair_count", "se",
                    "d", "n", "a", "T"),
                   _profile_rows(result.profiles,
                                 extra=(grid.d, grid.n, grid.a, grid.T)))
        _write_csv(path("grf_modal.csv"),
                   ("noise", "kappa", "E2_mean", "E2_se", "E2_theory"),
                   result.extras["modal_rows"])
        _write_csv(path("grf_correlation_length.csv"),
                   ("noise", "xi"),
                   list(zip(config.noise_grid, result.extras["corr_lengths"])))
    if result.extras.get("raw_trajectories"):
        with open(path("trajectories.jsonl"), "w") as fh:
            for rec in result.extras["raw_trajectories"]:
                fh.write(json.dumps(rec, sort_keys=True) + "\n")

    meta = {
        "config": config.canonical(),
        "config_hash": config.config_hash(),
        "seed": config.seed,
        "version": __version__,
    }
    with open(path("meta.json"), "w") as fh:
        json.dump(meta, fh, sort_keys=True, indent=1)
    result.files = files
    return result


def run_experiment(config: ExperimentConfig) -> ExperimentResult:
    """Validate, execute and write one experiment end to end.

    Output files appear only after the whole computation succeeded; a
    failing trajectory aborts the run with its (datum, trajectory, noise)
    coordinates and writes nothing.
    """
    config.validate()
    if config.kind in ("rhm_epsilon", "rhm_masking"):
        result = _run_rhm(config)
    elif config.kind == "meanfield":
        result = _run_meanfield(config)
    elif config.kind == "grf":
        result = _run_grf(config)
    else:
        result = _run_transcripts(config)
    return write_results(result)
