"""Joint progression model: rank-aggregation priors for mixed-pathology event ordering."""

from .cohort import (
    BiomarkerRegistry,
    ExperimentConfig,
    GenerationSpec,
    generate_cohort,
    generate_experiment_suite,
    random_partial_rankings,
)
from .ebm import (
    BiomarkerDist,
    Cohort,
    EventBasedModel,
    StagePosterior,
    ebm_log_likelihood,
    estimate_partial_ranking,
    stage_posteriors,
    staging_mae,
)
from .energy import (
    BradleyTerryModel,
    ConvergenceError,
    MallowsModel,
    PairwiseModel,
    PlackettLuceModel,
    fit_energy,
)
from .inference import (
    InferenceConfig,
    InferenceResult,
    JointProgressionModel,
    baseline_infer,
    jpm_infer,
    multi_seed_infer,
)
from .rankings import (
    AggregateRanking,
    Item,
    PartialRanking,
    RankingProblem,
    kendall_tau_normalized,
    kendall_tau_restricted,
    kendalls_w,
    spearman_rho,
)
from .sampling import MhConfig, SampleTrace, generate_aggregate, sample_mh, sample_plackett_luce

__version__ = "0.1.0"

__all__ = [name for name in dir() if not name.startswith("_")]
