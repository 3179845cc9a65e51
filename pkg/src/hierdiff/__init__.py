"""Probing hierarchical latent structure with forward-backward diffusion.

Generate data from random hierarchy grammars, denoise it exactly with
belief propagation, measure how token changes correlate across inversion
times or noise levels, and compare against the closed-form mean-field
theory of the class phase transition. A Gaussian random field baseline
and an analyzer for externally produced forward-backward transcripts
round out the toolkit.
"""

__version__ = "0.1.0"

from .grammar import (
    Datum,
    GrammarParams,
    RuleTable,
    build_grammar,
    generate_datum,
    leaf_pair_distance,
    parse_leaves,
    validate_datum,
)
from .belief_prop import (
    LeafPriorField,
    MessageField,
    class_probability,
    marginals,
    priors_from_epsilon,
    priors_from_masking,
    run_bp,
    sample_posterior,
)
from .diffusion import (
    MaskPattern,
    TrajectoryResult,
    class_reconstruction_curve,
    forward_backward_epsilon,
    forward_backward_masking,
    sample_mask,
)
from .meanfield import (
    MFJoint,
    MapState,
    PhaseDiagnosis,
    iterate_maps,
    mf_pair_joint,
    mf_profile,
    phase_diagnosis,
)
from .stats import (
    CollapseFit,
    CorrelationProfile,
    SpinSample,
    bin_profile,
    collapse_fit,
    ensemble_correlations,
    make_spins,
    susceptibility,
)
from .grf import (
    ModeEnsemble,
    SpectralGrid,
    diff_field_correlations,
    mode_diagnostics,
    sample_and_diffuse,
)
from .runner import (
    ExperimentConfig,
    ExperimentResult,
    TranscriptPair,
    ingest_transcripts,
    run_experiment,
)
