"""Drawing aggregate rankings from fitted energy models."""

from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass, field

import numpy as np

from ._mcmc import metropolis, metropolis_batch
from ._validation import check_generator
from .energy import EnergyModel, PlackettLuceModel, fit_energy
from .rankings import AggregateRanking, RankingProblem

GENERATION_ITERATIONS = 500
INFERENCE_ITERATIONS = 20_000

MCMC_VARIANTS = ("pp", "bt", "pl_mcmc", "mallows")
GENERATIVE_VARIANTS = MCMC_VARIANTS + ("pl_direct",)


@dataclass(frozen=True)
class MhConfig:
    """Metropolis-Hastings run settings.

    ``return_mode`` picks what a generating run hands back: ``"best"`` (the
    lowest-energy state visited, the default) or ``"final"`` (the last chain
    state, an approximate draw from ``exp(-E)``).
    """

    iterations: int = GENERATION_ITERATIONS
    burn_in: int = 0
    thinning: int = 1
    seed: int = 0
    return_mode: str = "best"
    record_chain: bool = True

    def __post_init__(self):
        if self.iterations < 1:
            raise ValueError("iterations must be >= 1")
        if not 0 <= self.burn_in < self.iterations:
            raise ValueError("burn_in must satisfy 0 <= burn_in < iterations")
        if self.thinning < 1:
            raise ValueError("thinning must be >= 1")
        if self.return_mode not in ("final", "best"):
            raise ValueError("return_mode must be 'final' or 'best'")

    @classmethod
    def for_inference(cls, seed: int = 0, **kw) -> "MhConfig":
        kw.setdefault("iterations", INFERENCE_ITERATIONS)
        kw.setdefault("burn_in", 500)
        kw.setdefault("return_mode", "best")
        return cls(seed=seed, **kw)

    def replace(self, **changes) -> "MhConfig":
        return MhConfig(**{**self.__dict__, **changes})


@dataclass
class SampleTrace:
    best: AggregateRanking
    best_energy: float
    final: AggregateRanking
    final_energy: float
    samples: np.ndarray
    iters: np.ndarray | None = None
    energies: np.ndarray | None = None
    accepted: np.ndarray | None = None
    data_loglik: np.ndarray | None = field(default=None, repr=False)

    @property
    def acceptance_rate(self) -> float:
        """Fraction of accepted proposals (iteration 0 is the starting state)."""
        if self.accepted is None:
            raise ValueError("chain was not recorded")
        return float(self.accepted[self.iters > 0].mean())

    def ranking(self, mode: str) -> AggregateRanking:
        return self.best if mode == "best" else self.final

    def chain_csv(self) -> str:
        if self.iters is None:
            raise ValueError("chain was not recorded")
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        header = ["iter", "energy", "accepted"]
        if self.data_loglik is not None:
            header.append("data_loglik")
        w.writerow(header)
        for t in range(len(self.iters)):
            row = [int(self.iters[t]), repr(float(self.energies[t])), int(self.accepted[t])]
            if self.data_loglik is not None:
                row.append(repr(float(self.data_loglik[t])))
            w.writerow(row)
        return buf.getvalue()

    def samples_jsonl(self) -> str:
        return "".join(json.dumps(row) + "\n" for row in self.samples.tolist())


def sample_plackett_luce(model: PlackettLuceModel, rng, size: int | None = None):
    """Sequential sampling without replacement, each pick proportional to ``exp(score)``.

    With ``size`` returns an ``(size, m)`` array of rankings instead of one
    :class:`AggregateRanking`. Uses the Gumbel-max identity: sorting
    ``score + Gumbel`` noise in decreasing order draws the same distribution
    as the item-by-item procedure.
    """
    rng = check_generator(rng)
    alpha = np.asarray(model.scores_, dtype=np.float64)
    if size is None:
        return AggregateRanking(tuple(_pl_sequential(alpha, rng).tolist()))
    keys = alpha[None, :] + rng.gumbel(size=(size, alpha.size))
    return np.argsort(-keys, axis=1, kind="stable").astype(np.int64)


def _pl_sequential(alpha: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    remaining = list(range(alpha.size))
    out = []
    while remaining:
        a = alpha[remaining]
        w = np.exp(a - a.max())
        pick = rng.choice(len(remaining), p=w / w.sum())
        out.append(remaining.pop(pick))
    return np.asarray(out, dtype=np.int64)


def sample_mh(energy: EnergyModel, m: int, cfg: MhConfig) -> SampleTrace:
    """One Metropolis-Hastings chain on ``exp(-E)`` with transposition proposals.

    Starts from a uniform random permutation; the proposal swaps a uniformly
    chosen unordered pair of positions and is accepted with probability
    ``min(1, exp(E_current - E_proposed))``.
    """
    if m < 2:
        raise ValueError("MH over permutations needs m >= 2")
    rng = np.random.default_rng(cfg.seed)
    e = energy._fast_energy() if hasattr(energy, "_fast_energy") else energy
    out = metropolis(
        lambda s: (-e(s), np.nan),
        m,
        cfg.iterations,
        rng,
        burn_in=cfg.burn_in,
        thinning=cfg.thinning,
        record_chain=cfg.record_chain,
    )
    return SampleTrace(
        best=AggregateRanking(tuple(out.best.tolist())),
        best_energy=-out.best_score,
        final=AggregateRanking(tuple(out.state.tolist())),
        final_energy=-out.score,
        samples=out.samples,
        iters=out.iters,
        energies=None if out.scores is None else -out.scores,
        accepted=out.accepted,
    )


def sample_mh_chains(energy: EnergyModel, m: int, n_chains: int, iterations: int, rng, return_mode: str = "best") -> np.ndarray:
    """``n_chains`` independent MH chains run in lockstep; returns an ``(n, m)`` array."""
    if m < 2:
        return np.zeros((n_chains, m), dtype=np.int64)
    final, _, best, _ = metropolis_batch(energy._fast_energies(), m, n_chains, iterations, check_generator(rng))
    return best if return_mode == "best" else final


def _variant_key(variant: str) -> str:
    v = variant.lower()
    if v == "pl":
        return "pl_direct"
    if v not in GENERATIVE_VARIANTS:
        raise ValueError(f"unknown generative variant {variant!r}")
    return v


def fit_generative(problem: RankingProblem, variant: str, dispersion: float | None, rng) -> EnergyModel:
    v = _variant_key(variant)
    if v == "mallows" and dispersion is None:
        raise ValueError("the Mallows variant needs a dispersion")
    return fit_energy("pl" if v.startswith("pl") else v, problem, dispersion=dispersion, rng=rng)


def generate_aggregates(
    problem: RankingProblem,
    variant: str,
    n: int,
    cfg: MhConfig,
    dispersion: float | None = None,
    model: EnergyModel | None = None,
) -> tuple[np.ndarray, EnergyModel]:
    """Fit ``variant`` once and draw ``n`` aggregate rankings from it.

    Returns ``(rankings, model)``. MCMC variants run ``n`` independent
    chains of ``cfg.iterations`` steps and keep each chain's final or best
    state per ``cfg.return_mode``.
    """
    v = _variant_key(variant)
    rng = np.random.default_rng(cfg.seed)
    if model is None:
        model = fit_generative(problem, v, dispersion, rng)
    if v == "pl_direct":
        return sample_plackett_luce(model, rng, size=n), model
    return sample_mh_chains(model, problem.m, n, cfg.iterations, rng, cfg.return_mode), model


def generate_aggregate(
    problem: RankingProblem,
    variant: str,
    dispersion: float | None = None,
    cfg: MhConfig | None = None,
) -> AggregateRanking:
    """Fit the requested model and return one sampled aggregate ranking.

    ``variant`` is one of ``pp``, ``bt``, ``pl_direct`` (alias ``pl``),
    ``pl_mcmc`` or ``mallows``; the Mallows variant needs ``dispersion``.
    """
    cfg = cfg or MhConfig()
    v = _variant_key(variant)
    rng = np.random.default_rng(cfg.seed)
    model = fit_generative(problem, v, dispersion, rng)
    if v == "pl_direct":
        return sample_plackett_luce(model, rng)
    if problem.m < 2:
        return AggregateRanking((0,))
    out = metropolis(
        _neg_energy(model), problem.m, cfg.iterations, rng, record_chain=False
    )
    state = out.best if cfg.return_mode == "best" else out.state
    return AggregateRanking(tuple(state.tolist()))


def _neg_energy(model: EnergyModel):
    e = model._fast_energy()
    return lambda s: (-e(s), np.nan)
