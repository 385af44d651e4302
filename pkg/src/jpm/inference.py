"""Posterior search over aggregate rankings: data likelihood plus an energy prior."""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from ._validation import check_positive, check_values, derive_seed
from .ebm import (
    Cohort,
    EbmLikelihood,
    EventBasedModel,
    StagePosterior,
    dists_to_list,
    estimate_distributions,
    maximize_likelihood,
    stage_posteriors,
)
from .energy import EnergyModel, fit_energy
from .rankings import AggregateRanking, RankingProblem
from .sampling import MhConfig, SampleTrace

INFERENCE_VARIANTS = (None, "pp", "bt", "pl", "mallows")


@dataclass(frozen=True)
class InferenceConfig:
    """Settings for one inference run.

    ``variant=None`` is the likelihood-only baseline. ``dispersion`` only
    matters for the Mallows prior.
    """

    variant: str | None = None
    dispersion: float = 1.0
    mcmc: MhConfig = field(default_factory=MhConfig.for_inference)
    n_seeds: int = 10
    mallows_mcmc_iters: int = 5000

    def __post_init__(self):
        v = None if self.variant in (None, "none", "baseline") else str(self.variant).lower()
        if v not in INFERENCE_VARIANTS:
            raise ValueError(f"unknown inference variant {self.variant!r}")
        object.__setattr__(self, "variant", v)
        if v == "mallows":
            check_positive(self.dispersion, "dispersion")
        if self.n_seeds < 1:
            raise ValueError("n_seeds must be >= 1")

    def replace(self, **changes) -> "InferenceConfig":
        return InferenceConfig(**{**self.__dict__, **changes})


@dataclass
class InferenceResult:
    best_ranking: AggregateRanking
    best_objective: float
    data_loglik: float
    trace: SampleTrace
    stage_posteriors: StagePosterior
    seed_used: int
    variant: str | None
    labels: tuple[str, ...]
    dists: list = field(default_factory=list, repr=False)

    def to_dict(self, trace_path: str | None = None) -> dict:
        return {
            "variant": self.variant or "none",
            "seed": int(self.seed_used),
            "best_ranking": [self.labels[i] for i in self.best_ranking],
            "best_objective": float(self.best_objective),
            "data_loglik": float(self.data_loglik),
            "stage_point_estimates": [float(x) for x in self.stage_posteriors.point_estimates()],
            "trace_path": trace_path,
        }

    def to_json(self, trace_path: str | None = None) -> str:
        return json.dumps(self.to_dict(trace_path), indent=2)


def _align(cohort: Cohort, problem: RankingProblem) -> Cohort:
    labels = problem.labels
    if set(cohort.biomarkers) != set(labels):
        raise ValueError(
            f"cohort biomarkers {sorted(cohort.biomarkers)} differ from the ranking universe {sorted(labels)}"
        )
    return cohort if list(cohort.biomarkers) == labels else cohort.select(labels)


def fit_prior(problem: RankingProblem, cfg: InferenceConfig) -> EnergyModel | None:
    """Energy model for ``cfg.variant`` fitted on the problem's partial rankings."""
    if cfg.variant is None:
        return None
    kw = {"mcmc_iters": cfg.mallows_mcmc_iters} if cfg.variant == "mallows" else {}
    rng = np.random.default_rng(cfg.mcmc.seed)
    return fit_energy(cfg.variant, problem, dispersion=cfg.dispersion, rng=rng, **kw)


def _run(cohort: Cohort, lik: EbmLikelihood, model, cfg: InferenceConfig, dists, labels) -> InferenceResult:
    energy = model._fast_energy() if model is not None else None
    order, objective, trace = maximize_likelihood(lik, cfg.mcmc, energy)
    best = AggregateRanking(tuple(int(i) for i in order))
    return InferenceResult(
        best_ranking=best,
        best_objective=objective,
        data_loglik=lik(order),
        trace=trace,
        stage_posteriors=stage_posteriors(cohort, best, dists),
        seed_used=cfg.mcmc.seed,
        variant=cfg.variant,
        labels=tuple(labels),
        dists=list(dists),
    )


def jpm_infer(
    cohort: Cohort,
    problem: RankingProblem | None,
    cfg: InferenceConfig | None = None,
    dists=None,
    model: EnergyModel | None = None,
) -> InferenceResult:
    """Maximize ``log P(D | sigma) - E(sigma)`` by Metropolis-Hastings.

    The chain starts from a random permutation with objective ``-inf`` so
    the first proposal is always accepted. ``dists`` defaults to the
    moment-plus-refinement estimate from ``cohort`` itself; ``model``
    defaults to ``cfg.variant`` fitted on ``problem``.
    """
    cfg = cfg or InferenceConfig()
    if problem is not None:
        cohort = _align(cohort, problem)
    elif cfg.variant is not None:
        raise ValueError("a ranking problem is required for a prior variant")
    if dists is None:
        dists, _ = estimate_distributions(cohort, cfg.mcmc)
    dists = dists_to_list(dists, cohort.biomarkers)
    if model is None and cfg.variant is not None:
        model = fit_prior(problem, cfg)
    if model is not None and getattr(model, "n_items_", cohort.m) != cohort.m:
        raise ValueError("energy model and cohort cover different numbers of biomarkers")
    return _run(cohort, EbmLikelihood(cohort, dists), model, cfg, dists, cohort.biomarkers)


def baseline_infer(cohort: Cohort, cfg: InferenceConfig | None = None, dists=None) -> InferenceResult:
    """Likelihood-only search (no prior)."""
    cfg = (cfg or InferenceConfig()).replace(variant=None)
    return jpm_infer(cohort, None, cfg, dists)


def multi_seed_infer(
    cohort: Cohort,
    problem: RankingProblem | None,
    cfg: InferenceConfig | None = None,
    dists=None,
    model: EnergyModel | None = None,
) -> InferenceResult:
    """Run ``cfg.n_seeds`` chains and keep the one with the highest data log-likelihood.

    Seed ``i`` is ``derive_seed(cfg.mcmc.seed, i)``, so seed 0 is the base
    seed itself. The prior and distributions are fitted once and shared.
    """
    cfg = cfg or InferenceConfig()
    if problem is not None:
        cohort = _align(cohort, problem)
    if dists is None:
        dists, _ = estimate_distributions(cohort, cfg.mcmc)
    dists = dists_to_list(dists, cohort.biomarkers)
    if model is None and cfg.variant is not None:
        if problem is None:
            raise ValueError("a ranking problem is required for a prior variant")
        model = fit_prior(problem, cfg)
    lik = EbmLikelihood(cohort, dists)
    best = None
    for i in range(cfg.n_seeds):
        run_cfg = cfg.replace(mcmc=cfg.mcmc.replace(seed=derive_seed(cfg.mcmc.seed, i)))
        res = _run(cohort, lik, model, run_cfg, dists, cohort.biomarkers)
        if best is None or res.data_loglik > best.data_loglik:
            best = res
    return best


class JointProgressionModel(EventBasedModel):
    """Event ordering of a mixed-pathology cohort under a rank-aggregation prior.

    Parameters
    ----------
    variant : {None, "pp", "bt", "pl", "mallows"}
        Prior built from the partial rankings passed to :meth:`fit`.
    dispersion : float
        Mallows concentration.
    n_iter, burn_in, thinning : int
        Metropolis-Hastings settings per seed.
    n_seeds : int
        Independent chains; the highest data log-likelihood wins.
    random_state : int
        Base seed.

    Examples
    --------
    >>> model = JointProgressionModel("bt", n_iter=2000, n_seeds=2)  # doctest: +SKIP
    >>> model.fit(X, diseased, partials=[["A", "B"], ["B", "C"]], labels=["A", "B", "C"])  # doctest: +SKIP
    """

    def __init__(self, variant="bt", dispersion=1.0, n_iter=20_000, burn_in=500, thinning=1, n_seeds=10, random_state=0):
        self.variant = variant
        self.dispersion = dispersion
        self.n_iter = n_iter
        self.burn_in = burn_in
        self.thinning = thinning
        self.n_seeds = n_seeds
        self.random_state = random_state

    def fit(self, X, y, partials=None, labels=None):
        """Fit on values ``X`` (participants x biomarkers) and disease labels ``y``.

        ``partials`` is a :class:`RankingProblem` or a list of label
        sequences; ``labels`` names the columns of ``X`` (defaults to the
        problem's labels).
        """
        X = check_values(X)
        cfg = InferenceConfig(self.variant, self.dispersion, self._cfg(), self.n_seeds)
        problem = None
        if partials is not None:
            problem = partials if isinstance(partials, RankingProblem) else RankingProblem.from_labels(partials)
        elif cfg.variant is not None:
            raise ValueError("partial rankings are required for a prior variant")
        if labels is None:
            labels = problem.labels if problem is not None else [f"x{c}" for c in range(X.shape[1])]
        cohort = Cohort(X, y, tuple(labels))
        result = multi_seed_infer(cohort, problem, cfg)
        # result columns follow the problem's label order
        col = {lab: c for c, lab in enumerate(labels)}
        perm = [col[lab] for lab in result.labels]
        self.labels_ = list(labels)
        self.ordering_ = AggregateRanking(tuple(perm[i] for i in result.best_ranking))
        self.distributions_ = dists_to_list(dict(zip(result.labels, result.dists)), labels)
        self.log_likelihood_ = result.data_loglik
        self.result_ = result
        self.n_features_in_ = X.shape[1]
        return self

