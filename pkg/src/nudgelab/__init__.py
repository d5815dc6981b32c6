"""nudgelab: decision engine and simulation harness for agentic,
user-level personalisation of marketing messages."""

from .events import (
    EventRecord,
    EventStream,
    GoalSpec,
    IngestError,
    IngestReport,
    Window,
    ingest_events,
    slice_window,
    write_events,
)
from .outcome import DecayConfig, EventWeightTable, OutcomeScore, fit_event_weights, outcome_score, temporal_weight
from .did import (
    ControlSelection,
    DidConfig,
    InterventionRecord,
    IteEstimate,
    ProfileIndex,
    UserProfile,
    binarize,
    build_profile,
    did_estimate,
    pre_post_windows,
    select_controls,
)
from .policy import (
    ActionCombo,
    ActionSet,
    ActionSpace,
    BetaPosterior,
    PosteriorStore,
    empirical_bayes_prior,
    thompson_select,
    update_posterior,
)
from .catalog import (
    MessageCatalog,
    MessageTemplate,
    NoEligibleMessageError,
    eligible_templates,
    load_catalog,
    match_message,
)
from .simulate import LatentUser, PreferenceModel, SimConfig, apply_intervention, generate_population, simulate_organic
from .experiment import (
    ConfigError,
    Experiment,
    ExperimentConfig,
    ExperimentResult,
    LiftReport,
    MetricLift,
    MetricSpec,
    SnapshotError,
    load_experiment_config,
    matched_lift,
    restore_state,
    run_experiment,
    sample_did_estimates,
    snapshot_state,
)
from .rng import rng_for

__version__ = "0.1.0"

__all__ = [
    "ActionCombo",
    "ActionSet",
    "ActionSpace",
    "BetaPosterior",
    "ConfigError",
    "ControlSelection",
    "DecayConfig",
    "DidConfig",
    "EventRecord",
    "EventStream",
    "EventWeightTable",
    "Experiment",
    "ExperimentConfig",
    "ExperimentResult",
    "GoalSpec",
    "IngestError",
    "IngestReport",
    "InterventionRecord",
    "IteEstimate",
    "LatentUser",
    "LiftReport",
    "MessageCatalog",
    "MessageTemplate",
    "MetricLift",
    "MetricSpec",
    "NoEligibleMessageError",
    "OutcomeScore",
    "PosteriorStore",
    "PreferenceModel",
    "ProfileIndex",
    "SimConfig",
    "SnapshotError",
    "UserProfile",
    "Window",
    "apply_intervention",
    "binarize",
    "build_profile",
    "did_estimate",
    "eligible_templates",
    "empirical_bayes_prior",
    "fit_event_weights",
    "generate_population",
    "ingest_events",
    "load_catalog",
    "load_experiment_config",
    "match_message",
    "matched_lift",
    "outcome_score",
    "pre_post_windows",
    "restore_state",
    "rng_for",
    "run_experiment",
    "sample_did_estimates",
    "select_controls",
    "simulate_organic",
    "slice_window",
    "snapshot_state",
    "temporal_weight",
    "thompson_select",
    "update_posterior",
    "write_events",
]
