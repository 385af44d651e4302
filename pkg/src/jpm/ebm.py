"""Gaussian event-based model: data likelihood, staging and sequence estimation.

A participant at stage ``k`` has the first ``k`` biomarkers of the ordering
in their post-event (``theta``) distribution and the rest in the pre-event
(``phi``) distribution. Stages have a uniform prior over ``0..m``.
"""

from __future__ import annotations

import csv
import io
import math
from functools import lru_cache
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np
from scipy.special import logsumexp
from scipy.stats import norm
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from ._mcmc import metropolis
from ._validation import check_order, check_values, derive_seed
from .rankings import AggregateRanking, PartialRanking
from .sampling import MhConfig, SampleTrace

DENSITY_FLOOR = 1e-300
LOG_FLOOR = math.log(DENSITY_FLOOR)
# per-run memo of evaluated permutations
CACHE_SIZE = 10**6


@dataclass(frozen=True)
class BiomarkerDist:
    theta_mean: float
    theta_std: float
    phi_mean: float
    phi_std: float

    def __post_init__(self):
        for name in ("theta_std", "phi_std"):
            v = getattr(self, name)
            if not (np.isfinite(v) and v > 0):
                raise ValueError(f"{name} must be finite and > 0, got {v}")

    def to_dict(self) -> dict:
        return {
            "theta_mean": self.theta_mean,
            "theta_std": self.theta_std,
            "phi_mean": self.phi_mean,
            "phi_std": self.phi_std,
        }


@dataclass
class Cohort:
    """Participants x biomarkers measurement table.

    Column ``c`` holds item id ``c``; ``biomarkers[c]`` is its label.
    ``stages`` is only present for synthetic cohorts.
    """

    values: np.ndarray
    diseased: np.ndarray
    biomarkers: tuple[str, ...]
    stages: np.ndarray | None = None
    participant_ids: np.ndarray | None = field(default=None)

    def __post_init__(self):
        self.values = check_values(self.values, n_features=len(self.biomarkers))
        self.diseased = np.asarray(self.diseased, dtype=bool)
        self.biomarkers = tuple(self.biomarkers)
        if self.diseased.shape != (self.values.shape[0],):
            raise ValueError("one diseased flag per participant is required")
        if self.participant_ids is None:
            self.participant_ids = np.arange(self.values.shape[0])
        self.participant_ids = np.asarray(self.participant_ids)
        if self.stages is not None:
            self.stages = np.asarray(self.stages, dtype=np.float64)
            m = len(self.biomarkers)
            if self.stages.shape != self.diseased.shape or np.any((self.stages < 0) | (self.stages > m)):
                raise ValueError(f"stages must be one per participant within [0, {m}]")

    @property
    def n_participants(self) -> int:
        return self.values.shape[0]

    @property
    def m(self) -> int:
        return len(self.biomarkers)

    def select(self, labels: Sequence[str]) -> "Cohort":
        """Reorder/subset columns to ``labels`` (so column ``c`` is ``labels[c]``)."""
        index = {lab: c for c, lab in enumerate(self.biomarkers)}
        missing = [lab for lab in labels if lab not in index]
        if missing:
            raise ValueError(f"cohort has no biomarker(s) {missing}")
        cols = [index[lab] for lab in labels]
        return Cohort(self.values[:, cols], self.diseased, tuple(labels), self.stages, self.participant_ids)

    def to_csv(self) -> str:
        """Long format: one row per (participant, biomarker)."""
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        header = ["participant_id", "biomarker", "value", "diseased"]
        if self.stages is not None:
            header.append("true_stage")
        w.writerow(header)
        for j in range(self.n_participants):
            for c, lab in enumerate(self.biomarkers):
                row = [self.participant_ids[j], lab, repr(float(self.values[j, c])), int(self.diseased[j])]
                if self.stages is not None:
                    row.append(repr(float(self.stages[j])))
                w.writerow(row)
        return buf.getvalue()

    @classmethod
    def from_csv(cls, text: str) -> "Cohort":
        rows = list(csv.DictReader(io.StringIO(text)))
        if not rows:
            raise ValueError("empty cohort file")
        required = {"participant_id", "biomarker", "value", "diseased"}
        if not required <= set(rows[0]):
            raise ValueError(f"cohort CSV needs columns {sorted(required)}")
        pids: list[str] = []
        labels: list[str] = []
        for r in rows:
            if r["participant_id"] not in pids:
                pids.append(r["participant_id"])
            if r["biomarker"] not in labels:
                labels.append(r["biomarker"])
        pindex = {p: i for i, p in enumerate(pids)}
        bindex = {b: i for i, b in enumerate(labels)}
        values = np.full((len(pids), len(labels)), np.nan)
        diseased = np.zeros(len(pids), dtype=bool)
        has_stage = "true_stage" in rows[0] and rows[0]["true_stage"] not in ("", None)
        stages = np.zeros(len(pids)) if has_stage else None
        for r in rows:
            j = pindex[r["participant_id"]]
            values[j, bindex[r["biomarker"]]] = float(r["value"])
            diseased[j] = r["diseased"].strip().lower() in ("1", "true", "yes")
            if has_stage:
                stages[j] = float(r["true_stage"])
        if np.isnan(values).any():
            raise ValueError("cohort CSV is missing (participant, biomarker) rows")
        ids = np.asarray([int(p) if p.lstrip("-").isdigit() else p for p in pids])
        return cls(values, diseased, tuple(labels), stages, ids)


def dists_to_list(dists, biomarkers: Sequence[str]) -> list[BiomarkerDist]:
    """Align distribution parameters with cohort columns.

    ``dists`` is either a sequence aligned with the columns or a mapping
    from biomarker label to :class:`BiomarkerDist` (or its dict form).
    """
    if isinstance(dists, Mapping):
        missing = [b for b in biomarkers if b not in dists]
        if missing:
            raise ValueError(f"no distribution parameters for biomarker(s) {missing}")
        out = [dists[b] for b in biomarkers]
    else:
        out = list(dists)
        if len(out) != len(biomarkers):
            raise ValueError(f"expected {len(biomarkers)} biomarker distributions, got {len(out)}")
    return [d if isinstance(d, BiomarkerDist) else BiomarkerDist(**d) for d in out]


def log_densities(values: np.ndarray, dists: Sequence[BiomarkerDist]) -> tuple[np.ndarray, np.ndarray]:
    """Per-entry Gaussian log-densities under theta and phi, floored at 1e-300."""
    tm = np.array([d.theta_mean for d in dists])
    ts = np.array([d.theta_std for d in dists])
    pm = np.array([d.phi_mean for d in dists])
    ps = np.array([d.phi_std for d in dists])
    log_theta = np.maximum(norm.logpdf(values, tm, ts), LOG_FLOOR)
    log_phi = np.maximum(norm.logpdf(values, pm, ps), LOG_FLOOR)
    return log_theta, log_phi


class EbmLikelihood:
    """Precomputed log-density tables for repeated ``log P(D | sigma)`` calls."""

    def __init__(self, cohort: Cohort, dists):
        dists = dists_to_list(dists, cohort.biomarkers)
        self.log_theta, self.log_phi = log_densities(cohort.values, dists)
        self.delta = self.log_theta - self.log_phi
        self.base = self.log_phi.sum(axis=1)
        self.m = cohort.m
        self.log_norm = math.log(cohort.m + 1)

    def stage_loglik(self, order: np.ndarray) -> np.ndarray:
        """``L[j, k] = log P(x_j | stage k, sigma)``, shape ``(J, m + 1)``."""
        cum = np.cumsum(self.delta[:, order], axis=1)
        L = np.empty((self.delta.shape[0], self.m + 1))
        L[:, 0] = self.base
        L[:, 1:] = self.base[:, None] + cum
        return L

    def __call__(self, order: np.ndarray) -> float:
        L = self.stage_loglik(order)
        return float(np.sum(logsumexp(L, axis=1)) - L.shape[0] * self.log_norm)


def _check_sigma(cohort: Cohort, sigma) -> np.ndarray:
    arr = np.asarray(getattr(sigma, "order", sigma))
    if arr.size != cohort.m:
        raise ValueError(f"ordering covers {arr.size} biomarkers but the cohort has {cohort.m}")
    return check_order(arr, cohort.m)


def ebm_log_likelihood(cohort: Cohort, sigma, dists) -> float:
    """``sum_j log( 1/(m+1) sum_k prod_b N(x_jb; params(b, k, sigma)) )``."""
    return EbmLikelihood(cohort, dists)(_check_sigma(cohort, sigma))


@dataclass
class StagePosterior:
    probs: np.ndarray
    participant_ids: np.ndarray | None = None

    def point_estimates(self) -> np.ndarray:
        """Posterior-mean stage per participant."""
        return self.probs @ np.arange(self.probs.shape[1])

    def map_stages(self) -> np.ndarray:
        return np.argmax(self.probs, axis=1)


def _posterior_from_loglik(L: np.ndarray, participant_ids) -> StagePosterior:
    norm_ = logsumexp(L, axis=1)
    bad = ~np.isfinite(norm_)
    if bad.any():
        j = int(np.flatnonzero(bad)[0])
        pid = participant_ids[j] if participant_ids is not None else j
        raise FloatingPointError(f"all stage likelihoods underflow for participant {pid}")
    return StagePosterior(np.exp(L - norm_[:, None]), participant_ids)


def stage_posteriors(cohort: Cohort, sigma, dists) -> StagePosterior:
    """Normalized per-participant stage likelihoods under ``sigma``."""
    lik = EbmLikelihood(cohort, dists)
    return _posterior_from_loglik(lik.stage_loglik(_check_sigma(cohort, sigma)), cohort.participant_ids)


def staging_mae(posteriors, truth) -> float:
    """Mean absolute error between posterior-mean stages and true stages."""
    if truth is None:
        raise ValueError("ground-truth stages are required")
    est = posteriors.point_estimates() if isinstance(posteriors, StagePosterior) else np.asarray(posteriors, float)
    truth = np.asarray(truth, dtype=np.float64)
    if est.shape != truth.shape:
        raise ValueError("one true stage per participant is required")
    return float(np.mean(np.abs(est - truth)))


# -- parameter estimation --------------------------------------------------


def _moments(x: np.ndarray) -> tuple[float, float]:
    return float(np.mean(x)), float(np.std(x, ddof=1)) if x.size > 1 else 0.0


def labeled_moments(cohort: Cohort) -> list[BiomarkerDist]:
    """Diseased-group (theta) and healthy-group (phi) mean/std per biomarker."""
    if not cohort.diseased.any() or cohort.diseased.all():
        raise ValueError("need at least one diseased and one healthy participant")
    out = []
    for c, lab in enumerate(cohort.biomarkers):
        tm, ts = _moments(cohort.values[cohort.diseased, c])
        pm, ps = _moments(cohort.values[~cohort.diseased, c])
        if ts <= 0 or ps <= 0:
            raise ValueError(f"biomarker {lab!r} has zero variance in the diseased or healthy group")
        out.append(BiomarkerDist(tm, ts, pm, ps))
    return out


def refine_dists(cohort: Cohort, dists: Sequence[BiomarkerDist], order: np.ndarray) -> list[BiomarkerDist]:
    """Re-estimate moments after assigning diseased participants their MAP stage.

    Under ``order`` a diseased participant at MAP stage ``k`` contributes the
    first ``k`` biomarkers to the theta pools and the rest (with all healthy
    participants) to the phi pools. Pools too small for a positive std keep
    the incoming estimate.
    """
    lik = EbmLikelihood(cohort, dists)
    k = np.argmax(lik.stage_loglik(order), axis=1)
    k[~cohort.diseased] = 0
    pos = np.empty(cohort.m, dtype=np.int64)
    pos[order] = np.arange(cohort.m)
    out = []
    for c, d in enumerate(dists):
        post = pos[c] < k
        tm, ts = _moments(cohort.values[post, c])
        pm, ps = _moments(cohort.values[~post, c])
        if post.sum() < 2 or ts <= 0:
            tm, ts = d.theta_mean, d.theta_std
        if (~post).sum() < 2 or ps <= 0:
            pm, ps = d.phi_mean, d.phi_std
        out.append(BiomarkerDist(tm, ts, pm, ps))
    return out


def maximize_likelihood(lik: EbmLikelihood, cfg: MhConfig, energy=None) -> tuple[np.ndarray, float, SampleTrace]:
    """Metropolis-Hastings on ``log P(D | sigma) - E(sigma)`` starting from ``-inf``.

    Returns the best ordering, its objective, and the chain.
    """
    m = lik.m
    rng = np.random.default_rng(cfg.seed)
    if m == 1:
        order = np.zeros(1, dtype=np.int64)
        val = lik(order) - (energy(order) if energy else 0.0)
        empty = np.empty((0, 1), dtype=np.int64)
        trace = SampleTrace(AggregateRanking((0,)), 0.0, AggregateRanking((0,)), 0.0, empty)
        return order, val, trace

    @lru_cache(maxsize=CACHE_SIZE)
    def cached(key: bytes):
        s = np.frombuffer(key, dtype=np.int64)
        ll = lik(s)
        return (ll - energy(s) if energy is not None else ll), ll

    def score(s):
        return cached(s.tobytes())

    out = metropolis(
        score,
        m,
        cfg.iterations,
        rng,
        evaluate_initial=False,
        burn_in=cfg.burn_in,
        thinning=cfg.thinning,
        record_chain=cfg.record_chain,
    )
    rec = cfg.record_chain
    trace = SampleTrace(
        best=AggregateRanking(tuple(out.best.tolist())),
        best_energy=float(out.best_aux - out.best_score),
        final=AggregateRanking(tuple(out.state.tolist())),
        final_energy=float(out.aux - out.score),
        samples=out.samples,
        iters=out.iters[1:] if rec else None,
        energies=(out.auxes - out.scores)[1:] if rec else None,
        accepted=out.accepted[1:] if rec else None,
        data_loglik=out.auxes[1:] if rec else None,
    )
    return out.best, float(out.best_score), trace


def estimate_distributions(cohort: Cohort, cfg: MhConfig) -> tuple[list[BiomarkerDist], np.ndarray]:
    """Labeled moments refined once under a likelihood-only best ordering.

    Returns ``(dists, ordering)`` where ``ordering`` is the best ordering
    found with the unrefined parameters.
    """
    dists = labeled_moments(cohort)
    order, _, _ = maximize_likelihood(EbmLikelihood(cohort, dists), cfg.replace(record_chain=False))
    return refine_dists(cohort, dists, order), order


def estimate_partial_ranking(cohort: Cohort, cfg: MhConfig | None = None) -> tuple[PartialRanking, list[BiomarkerDist]]:
    """Event ordering of a single-disease cohort plus its biomarker distributions.

    Parameters start from labeled moments, are refined once under the best
    ordering of a first MCMC run, and a second run (seed derived from
    ``cfg.seed``) maximizes the likelihood under the refined parameters.
    The returned ranking uses the cohort's column indices as item ids.
    """
    cfg = cfg or MhConfig.for_inference()
    dists, _ = estimate_distributions(cohort, cfg)
    order, _, _ = maximize_likelihood(
        EbmLikelihood(cohort, dists), cfg.replace(seed=derive_seed(cfg.seed, 1), record_chain=False)
    )
    return PartialRanking(tuple(int(i) for i in order)), dists


class EventBasedModel(BaseEstimator):
    """Likelihood-only event-based model with MCMC sequence estimation.

    Parameters
    ----------
    n_iter : int
        Metropolis-Hastings iterations per run.
    burn_in, thinning : int
        Applied to the retained samples of the final run.
    random_state : int
        Seed of the first run; the second run uses a derived seed.

    Attributes
    ----------
    ordering_ : AggregateRanking
        Best event ordering over the columns of ``X``.
    distributions_ : list of BiomarkerDist
        Refined theta/phi parameters per column.
    """

    def __init__(self, n_iter=20_000, burn_in=500, thinning=1, random_state=0):
        self.n_iter = n_iter
        self.burn_in = burn_in
        self.thinning = thinning
        self.random_state = random_state

    def _cfg(self) -> MhConfig:
        return MhConfig(self.n_iter, self.burn_in, self.thinning, int(self.random_state), "best", False)

    def fit(self, X, y):
        X = check_values(X)
        cohort = Cohort(X, y, tuple(f"x{c}" for c in range(X.shape[1])))
        partial, dists = estimate_partial_ranking(cohort, self._cfg())
        self.ordering_ = AggregateRanking(partial.items)
        self.distributions_ = dists
        self.n_features_in_ = X.shape[1]
        return self

    def _lik(self, X) -> EbmLikelihood:
        check_is_fitted(self)
        X = check_values(X, self.n_features_in_)
        return EbmLikelihood(Cohort(X, np.zeros(X.shape[0], bool), tuple(f"x{c}" for c in range(X.shape[1]))), self.distributions_)

    def predict_proba(self, X) -> np.ndarray:
        """Stage posterior per row, shape ``(n, m + 1)``."""
        lik = self._lik(X)
        return _posterior_from_loglik(lik.stage_loglik(self.ordering_.array), None).probs

    def predict(self, X) -> np.ndarray:
        """Posterior-mean stage per row."""
        return self.predict_proba(X) @ np.arange(self.n_features_in_ + 1)

    def score(self, X, y=None) -> float:
        """Data log-likelihood of ``X`` under the fitted ordering."""
        return self._lik(X)(self.ordering_.array)
