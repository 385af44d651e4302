"""Synthetic mixed-pathology cohorts: partial rankings, stages and biomarker values."""

from __future__ import annotations

import json
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from ._validation import check_generator, check_order, derive_seed
from .ebm import BiomarkerDist, Cohort
from .rankings import AggregateRanking, RankingProblem
from .sampling import MhConfig, generate_aggregate

MANIFEST_VERSION = 1

FAMILIES = ("cognitive", "csf", "subcortical", "cortical", "cauchy", "spike_logistic")

STAGE_DISTRIBUTIONS = ("dirichlet_multinomial", "uniform_discrete", "continuous_uniform", "continuous_beta")
BIOMARKER_DISTRIBUTIONS = ("normal", "non_normal", "sigmoid")
EXPERIMENTS = {
    1: ("dirichlet_multinomial", "normal"),
    2: ("dirichlet_multinomial", "non_normal"),
    3: ("uniform_discrete", "normal"),
    4: ("uniform_discrete", "non_normal"),
    5: ("continuous_uniform", "normal"),
    6: ("continuous_uniform", "non_normal"),
    7: ("continuous_beta", "non_normal"),
    8: ("continuous_uniform", "sigmoid"),
    9: ("continuous_beta", "sigmoid"),
}

# generative variants of the sharpness/separation study
DEFAULT_VARIANTS = ("pp", "bt", "pl", "mallows:1", "mallows:10")


# -- registry ---------------------------------------------------------------


@dataclass(frozen=True)
class BiomarkerSpec:
    name: str
    dist: BiomarkerDist
    family: str
    mixture: str = ""

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise ValueError(f"unknown mixture family {self.family!r} for {self.name}")


class BiomarkerRegistry:
    """Named biomarkers with their theta/phi Gaussians and non-normal mixture family."""

    def __init__(self, specs: Iterable[BiomarkerSpec]):
        self._specs = {}
        for s in specs:
            if s.name in self._specs:
                raise ValueError(f"duplicate biomarker {s.name!r}")
            self._specs[s.name] = s

    @classmethod
    def default(cls) -> "BiomarkerRegistry":
        """The 18 ADNI-derived biomarkers shipped with the package."""
        text = resources.files("jpm").joinpath("data/biomarkers.json").read_text()
        return cls.from_json(text)

    @classmethod
    def from_json(cls, text: str) -> "BiomarkerRegistry":
        rows = json.loads(text)["biomarkers"]
        return cls(
            BiomarkerSpec(
                r["name"],
                BiomarkerDist(r["theta_mean"], r["theta_std"], r["phi_mean"], r["phi_std"]),
                r["family"],
                r.get("mixture", ""),
            )
            for r in rows
        )

    def to_json(self) -> str:
        rows = [{"name": s.name, **s.dist.to_dict(), "family": s.family, "mixture": s.mixture} for s in self]
        return json.dumps({"biomarkers": rows}, indent=2)

    @property
    def names(self) -> list[str]:
        return list(self._specs)

    def dists(self, names: Sequence[str] | None = None) -> dict[str, BiomarkerDist]:
        names = self.names if names is None else names
        return {n: self[n].dist for n in names}

    def __getitem__(self, name: str) -> BiomarkerSpec:
        try:
            return self._specs[name]
        except KeyError:
            raise KeyError(f"biomarker {name!r} is not in the registry") from None

    def __contains__(self, name) -> bool:
        return name in self._specs

    def __iter__(self):
        return iter(self._specs.values())

    def __len__(self) -> int:
        return len(self._specs)


# -- configuration ----------------------------------------------------------


@dataclass(frozen=True)
class ExperimentConfig:
    """One of the nine simulation settings plus cohort size ``J`` and healthy ratio ``R``.

    ``stage_distribution`` and ``biomarker_distribution`` are filled from
    ``experiment_id``; passing them explicitly only checks consistency.
    """

    experiment_id: int
    J: int = 100
    R: float = 0.5
    stage_distribution: str | None = None
    biomarker_distribution: str | None = None
    dirichlet_concentration: float = 1.0
    beta_params: tuple[float, float] = (5.0, 2.0)

    def __post_init__(self):
        if self.experiment_id not in EXPERIMENTS:
            raise ValueError(f"experiment_id must be in 1..9, got {self.experiment_id}")
        stage, values = EXPERIMENTS[self.experiment_id]
        for name, want in (("stage_distribution", stage), ("biomarker_distribution", values)):
            got = getattr(self, name)
            if got is None:
                object.__setattr__(self, name, want)
            elif got != want:
                raise ValueError(f"experiment {self.experiment_id} uses {name}={want!r}, got {got!r}")
        if int(self.J) != self.J or self.J < 1:
            raise ValueError("J must be a positive integer")
        if not 0.0 <= self.R <= 1.0:
            raise ValueError("R must lie in [0, 1]")
        if self.dirichlet_concentration <= 0:
            raise ValueError("dirichlet_concentration must be > 0")

    @property
    def continuous(self) -> bool:
        return self.stage_distribution.startswith("continuous")

    @property
    def n_healthy(self) -> int:
        """``round(J * R)`` with halves rounded up."""
        return int(math.floor(self.J * self.R + 0.5))

    def replace(self, **changes) -> "ExperimentConfig":
        d = {**self.__dict__, **changes}
        if "experiment_id" in changes:
            d["stage_distribution"] = d["biomarker_distribution"] = None
        return ExperimentConfig(**d)


@dataclass(frozen=True)
class GenerationSpec:
    n_partials: tuple[int, int] = (2, 4)
    length_range: tuple[int, int] = (6, 12)
    variant: str = "pp"
    dispersion: float | None = None
    seed: int = 0

    def __post_init__(self):
        lo, hi = self.n_partials
        if not 1 <= lo <= hi:
            raise ValueError("n_partials must be an interval with 1 <= lo <= hi")
        lo, hi = self.length_range
        if not 1 <= lo <= hi:
            raise ValueError("length_range must be an interval with 1 <= lo <= hi")


def parse_variant(name: str) -> tuple[str, float | None]:
    """``"mallows:10"`` -> ``("mallows", 10.0)``; ``"pl"`` -> ``("pl_direct", None)``."""
    base, _, disp = name.lower().partition(":")
    if base == "pl":
        base = "pl_direct"
    if base not in ("pp", "bt", "pl_direct", "pl_mcmc", "mallows"):
        raise ValueError(f"unknown generative variant {name!r}")
    if base == "mallows":
        if not disp:
            raise ValueError("Mallows variants need a dispersion, e.g. 'mallows:1'")
        return base, float(disp)
    if disp:
        raise ValueError(f"variant {base!r} takes no dispersion")
    return base, None


# -- partial rankings and stages -------------------------------------------


def random_partial_rankings(registry, spec: GenerationSpec | None = None, rng=None) -> RankingProblem:
    """``K`` random partial orders over registry biomarkers.

    ``K`` and each length are uniform over their inclusive ranges; items are
    drawn without replacement in uniformly random order.
    """
    spec = spec or GenerationSpec()
    rng = check_generator(rng)
    names = registry.names if isinstance(registry, BiomarkerRegistry) else list(registry)
    if len(names) < spec.length_range[1]:
        raise ValueError(f"registry needs at least {spec.length_range[1]} biomarkers")
    K = int(rng.integers(spec.n_partials[0], spec.n_partials[1] + 1))
    partials = []
    for _ in range(K):
        n = int(rng.integers(spec.length_range[0], spec.length_range[1] + 1))
        idx = rng.choice(len(names), size=n, replace=False)
        partials.append([names[i] for i in idx])
    return RankingProblem.from_labels(partials)


def sample_stages(config: ExperimentConfig, m: int, n_diseased: int, rng) -> np.ndarray:
    """Stages of diseased participants under ``config.stage_distribution``.

    Discrete settings return integers in ``1..m``; continuous ones return
    reals in ``(0, m]``.
    """
    if m < 1:
        raise ValueError("m must be >= 1")
    rng = check_generator(rng)
    kind = config.stage_distribution
    if kind == "dirichlet_multinomial":
        w = rng.dirichlet(np.full(m, config.dirichlet_concentration))
        return 1 + rng.choice(m, size=n_diseased, p=w)
    if kind == "uniform_discrete":
        return rng.integers(1, m + 1, size=n_diseased)
    if kind == "continuous_uniform":
        # 1 - U maps [0, 1) onto (0, 1]
        return m * (1.0 - rng.random(n_diseased))
    a, b = config.beta_params
    return m * rng.beta(a, b, size=n_diseased)


# -- biomarker values --------------------------------------------------------


def _state_params(dist: BiomarkerDist, post_event: bool) -> tuple[float, float]:
    return (dist.theta_mean, dist.theta_std) if post_event else (dist.phi_mean, dist.phi_std)


def _sign(rng, n):
    return np.where(rng.random(n) < 0.5, -1.0, 1.0)


def _mixture(family: str, mu: float, s: float, n: int, rng: np.random.Generator) -> np.ndarray:
    """Raw non-normal draws before the global noise/clip step."""
    if family == "cauchy":
        x = mu + s * rng.standard_cauchy(n) + rng.normal(0.0, 0.2 * s, n)
        return np.clip(x, mu - 4 * s, mu + 4 * s)
    if family == "spike_logistic":
        spike = rng.random(n) < 0.1
        return np.where(spike, rng.normal(mu, 0.2 * s, n), rng.logistic(mu + s, 2 * s, n))
    comp = rng.integers(3, size=n)
    if family == "cognitive":
        parts = (
            rng.triangular(mu - 2 * s, mu - 1.5 * s, mu, n),
            rng.normal(mu + s, 0.3 * s, n),
            rng.exponential(0.7 * s, n) + (mu - 0.5 * s),
        )
    elif family == "csf":
        parts = (
            rng.pareto(1.5, n) * s + (mu - 2 * s),
            rng.uniform(mu - 1.5 * s, mu + 1.5 * s, n),
            rng.logistic(mu, s, n),
        )
    elif family == "subcortical":
        parts = (
            rng.beta(0.5, 0.5, n) * 4 * s + (mu - 2 * s),
            mu + _sign(rng, n) * rng.exponential(0.4 * s, n),
            rng.normal(mu, 0.5 * s, n) + np.where(rng.random(n) < 0.5, 0.0, 2 * s),
        )
    elif family == "cortical":
        parts = (
            rng.gamma(2.0, 0.5 * s, n) + (mu - s),
            rng.weibull(1.0, n) * s + (mu - s),
            rng.normal(mu, 0.5 * s, n) + _sign(rng, n) * s,
        )
    else:
        raise ValueError(f"unknown mixture family {family!r}")
    return np.choose(comp, parts)


def sample_biomarker_values(spec: BiomarkerSpec, post_event: bool, mode: str, size: int, rng) -> np.ndarray:
    """``size`` draws of one biomarker in one state.

    ``mode="normal"`` draws the state's Gaussian. ``mode="non_normal"`` draws
    the family's mixture, adds ``N(0, (0.2 sigma)^2)`` noise and clips to
    ``mu +/- 5 sigma``; the Cauchy family carries its own noise and tighter
    ``+/- 4 sigma`` clip, so only the outer clip is applied on top.
    """
    rng = check_generator(rng)
    mu, s = _state_params(spec.dist, post_event)
    if mode == "normal":
        return rng.normal(mu, s, size)
    if mode != "non_normal":
        raise ValueError(f"mode must be 'normal' or 'non_normal', got {mode!r}")
    x = _mixture(spec.family, mu, s, size, rng)
    if spec.family != "cauchy":
        x = x + rng.normal(0.0, 0.2 * s, size)
    return np.clip(x, mu - 5 * s, mu + 5 * s)


def sample_biomarker_value(spec: BiomarkerSpec, post_event: bool, mode: str, rng) -> float:
    return float(sample_biomarker_values(spec, post_event, mode, 1, rng)[0])


def sigmoid_slope(dist: BiomarkerDist) -> float:
    """``rho = max(1, |R| / sqrt(theta_std^2 + phi_std^2))``."""
    R = dist.theta_mean - dist.phi_mean
    return max(1.0, abs(R) / math.hypot(dist.theta_std, dist.phi_std))


def sigmoid_shift(dist: BiomarkerDist, stage, xi: float, direction: int):
    """Deterministic part ``(-1)^I R / (1 + exp(-rho (k - xi)))``."""
    R = dist.theta_mean - dist.phi_mean
    z = -sigmoid_slope(dist) * (np.asarray(stage, dtype=np.float64) - xi)
    with np.errstate(over="ignore"):
        return (-1.0) ** direction * R / (1.0 + np.exp(z))


def sample_sigmoid_value(spec, stage, xi: float, rng, direction: int | None = None):
    """Healthy-state Gaussian plus the sigmoid disease shift.

    ``direction`` is the Bernoulli(0.5) flip ``I``; it is drawn here when not
    given, but cohort generation draws it once per biomarker and passes it in.
    """
    rng = check_generator(rng)
    dist = spec.dist if isinstance(spec, BiomarkerSpec) else spec
    if direction is None:
        direction = int(rng.integers(2))
    stage = np.asarray(stage, dtype=np.float64)
    base = rng.normal(dist.phi_mean, dist.phi_std, stage.shape)
    out = base + sigmoid_shift(dist, stage, xi, direction)
    return float(out) if out.ndim == 0 else out


# -- cohorts ----------------------------------------------------------------


def post_event_mask(stages: np.ndarray, positions: np.ndarray, continuous: bool) -> np.ndarray:
    """``(J, m)`` mask: biomarker at 1-based ``position`` is post-event iff ``position <= ceil(k)``."""
    k = np.ceil(stages) if continuous else np.asarray(stages)
    return positions[None, :] <= k[:, None]


def generate_cohort(
    problem: RankingProblem,
    aggregate,
    config: ExperimentConfig,
    rng,
    registry: BiomarkerRegistry | None = None,
) -> Cohort:
    """Simulate ``config.J`` participants whose diseased members progress along ``aggregate``.

    The first ``round(J * R)`` participants are healthy (stage 0, all
    biomarkers pre-event); the rest are diseased with stages from
    :func:`sample_stages`. Columns follow ``problem.labels``.
    """
    rng = check_generator(rng)
    registry = registry or BiomarkerRegistry.default()
    m = problem.m
    order = check_order(aggregate, m)
    specs = [registry[lab] for lab in problem.labels]
    positions = np.empty(m, dtype=np.float64)
    positions[order] = np.arange(1, m + 1)

    J, n_h = config.J, config.n_healthy
    n_d = J - n_h
    stages = np.zeros(J)
    stages[n_h:] = sample_stages(config, m, n_d, rng)
    diseased = np.arange(J) >= n_h
    values = np.empty((J, m))

    if config.biomarker_distribution == "sigmoid":
        directions = rng.integers(2, size=m)
        for c, spec in enumerate(specs):
            d = spec.dist
            values[:n_h, c] = rng.normal(d.phi_mean, d.phi_std, n_h)
            values[n_h:, c] = sample_sigmoid_value(spec, stages[n_h:], positions[c], rng, int(directions[c]))
    else:
        post = post_event_mask(stages, positions, config.continuous)
        post[:n_h] = False
        for c, spec in enumerate(specs):
            for state in (False, True):
                rows = post[:, c] == state
                values[rows, c] = sample_biomarker_values(spec, state, config.biomarker_distribution, int(rows.sum()), rng)
    if not config.continuous:
        stages = stages.astype(np.int64)
    return Cohort(values, diseased, tuple(problem.labels), stages)


# -- experiment suites -------------------------------------------------------


@dataclass
class _Cell:
    index: int
    variant: str
    experiment_id: int
    J: int
    R: float
    replicate: int
    out_dir: str
    master_seed: int
    registry_json: str
    spec: GenerationSpec = field(default_factory=GenerationSpec)

    @property
    def cell_id(self) -> str:
        v = self.variant.replace(":", "")
        return f"{v}_e{self.experiment_id}_J{self.J}_R{self.R:g}_r{self.replicate}"


def _generate_cell(cell: _Cell) -> dict:
    registry = BiomarkerRegistry.from_json(cell.registry_json)
    seed = derive_seed(cell.master_seed, cell.index)
    variant, dispersion = parse_variant(cell.variant)
    problem = random_partial_rankings(registry, cell.spec, np.random.default_rng(seed))
    aggregate = generate_aggregate(problem, variant, dispersion, MhConfig(seed=derive_seed(seed, 1)))
    config = ExperimentConfig(cell.experiment_id, cell.J, cell.R)

    rel = Path("cells") / cell.cell_id
    cell_dir = Path(cell.out_dir) / rel
    _write(cell_dir / "mixed.csv", generate_cohort(problem, aggregate, config, derive_seed(seed, 2), registry).to_csv())
    labels = problem.labels
    single = []
    for k, partial in enumerate(problem.partials):
        sub_labels = [labels[i] for i in partial.items]
        sub = RankingProblem.from_labels([sub_labels])
        cohort = generate_cohort(
            sub, tuple(range(sub.m)), config.replace(J=4 * cell.J), derive_seed(seed, 3 + k), registry
        )
        path = rel / f"single_{k}.csv"
        _write(Path(cell.out_dir) / path, cohort.to_csv())
        single.append(path.as_posix())
    return {
        "cell_id": cell.cell_id,
        "variant": cell.variant,
        "experiment_id": cell.experiment_id,
        "J": cell.J,
        "R": cell.R,
        "replicate": cell.replicate,
        "seed": seed,
        "labels": labels,
        "aggregate": [labels[i] for i in aggregate],
        "partials": [[labels[i] for i in p.items] for p in problem.partials],
        "mixed": (rel / "mixed.csv").as_posix(),
        "single": single,
    }


def _write(path: Path, text: str) -> None:
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(text)
    except OSError as exc:
        raise OSError(f"could not write {path}: {exc}") from exc


def generate_experiment_suite(
    registry: BiomarkerRegistry | None,
    variants: Sequence[str],
    configs: Sequence[int],
    sizes: Sequence[int],
    ratios: Sequence[float],
    replicates: int,
    master_seed: int,
    out_dir,
    jobs: int = 1,
    spec: GenerationSpec | None = None,
) -> dict:
    """Generate every (variant, experiment, J, R, replicate) cell and write a manifest.

    Each cell holds one mixed cohort drawn from the generated aggregate
    ranking and one single-disease cohort per partial ranking at ``4 J``
    participants. Cell seeds are split from ``master_seed``, so the output
    does not depend on ``jobs``.
    """
    registry = registry or BiomarkerRegistry.default()
    spec = spec or GenerationSpec()
    for v in variants:
        parse_variant(v)
    out_dir = Path(out_dir)
    reg_json = registry.to_json()
    cells = []
    for v in variants:
        for e in configs:
            for J in sizes:
                for R in ratios:
                    for r in range(replicates):
                        cells.append(_Cell(len(cells), v, int(e), int(J), float(R), r, str(out_dir), int(master_seed), reg_json, spec))
    if jobs > 1 and len(cells) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            records = list(pool.map(_generate_cell, cells))
    else:
        records = [_generate_cell(c) for c in cells]
    manifest = {
        "schema_version": MANIFEST_VERSION,
        "master_seed": int(master_seed),
        "grid": {
            "variants": list(variants),
            "experiments": [int(e) for e in configs],
            "sizes": [int(J) for J in sizes],
            "ratios": [float(R) for R in ratios],
            "replicates": int(replicates),
        },
        "cells": records,
    }
    _write(out_dir / "manifest.json", json.dumps(manifest, indent=2) + "\n")
    return manifest
