"""Calibration, separation, sharpness, partial-ranking features and evaluation summaries."""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass
from itertools import combinations

import numpy as np
from sklearn.metrics import roc_auc_score

from ._validation import check_generator, check_order
from .energy import EnergyModel, fit_energy
from .rankings import (
    RankingProblem,
    kendall_tau_normalized,
    kendall_tau_restricted,
    kendalls_w,
    spearman_rho,
)
from .sampling import MhConfig, generate_aggregates

# const, n_pr, mean_len, conflict, overlap_rate
SHARPNESS_COEFFICIENTS = {
    "pl": (1.142, -0.003, 0.004, -0.257, -0.567),
    "bt": (1.013, -0.000, 0.001, -0.030, -0.073),
    "pp": (0.942, 0.001, 0.002, -0.116, -0.095),
    "mallows1": (1.082, -0.113, -0.047, -0.001, 0.283),
    "mallows10": (1.240, -0.121, -0.048, 0.002, 0.292),
}

REPORT_COLUMNS = ("generative_variant", "inference_variant", "experiment_id", "replicate", "metric", "value")


@dataclass(frozen=True)
class PartialRankingFeatures:
    n_pr: int
    mean_len: float
    conflict: float
    overlap_rate: float

    def as_array(self) -> np.ndarray:
        return np.array([self.n_pr, self.mean_len, self.conflict, self.overlap_rate], dtype=np.float64)


@dataclass(frozen=True)
class SeparationSharpnessReport:
    variant: str
    separation: float
    sharpness: float


@dataclass(frozen=True)
class CalibrationReport:
    generative_variant: str
    inference_variant: str
    rhos: tuple[float, ...]

    @property
    def mean(self) -> float:
        return mean_ci(self.rhos)[0]

    @property
    def ci(self) -> float:
        return mean_ci(self.rhos)[1]


def tau_distances(perms: np.ndarray, reference) -> np.ndarray:
    """Normalized Kendall distance of each row of ``perms`` to ``reference``."""
    perms = np.atleast_2d(np.asarray(perms, dtype=np.int64))
    m = perms.shape[1]
    if m < 2:
        return np.zeros(perms.shape[0])
    ref_pos = np.empty(m, dtype=np.int64)
    ref_pos[check_order(reference, m)] = np.arange(m)
    p = ref_pos[perms]
    upper = np.triu(np.ones((m, m), dtype=bool), 1)
    inversions = (p[:, :, None] > p[:, None, :])[:, upper].sum(axis=1)
    return inversions / (m * (m - 1) / 2)


def uniform_permutations(m: int, n: int, rng) -> np.ndarray:
    return np.argsort(check_generator(rng).random((n, m)), axis=1).astype(np.int64)


def calibration(
    problem: RankingProblem,
    sigma_gt,
    inference_variant: str,
    n_random: int = 1000,
    rng=None,
    dispersion: float = 1.0,
    model: EnergyModel | None = None,
) -> float:
    """Spearman correlation between energies and Kendall distances to ``sigma_gt``.

    ``n_random`` uniform permutations are scored by the fitted
    ``inference_variant`` energy and by their distance to ``sigma_gt``.
    """
    rng = check_generator(rng)
    if model is None:
        model = fit_energy(inference_variant, problem, dispersion=dispersion, rng=rng)
    perms = uniform_permutations(problem.m, n_random, rng)
    energies = model.energies(perms)
    if np.ptp(energies) == 0:
        raise ValueError("energy is constant over the sampled rankings")
    return spearman_rho(energies, tau_distances(perms, sigma_gt))


def auroc(e_model, e_random) -> float:
    """``P(E_model < E_random) + P(E_model = E_random) / 2``."""
    e_model = np.asarray(e_model, dtype=np.float64)
    e_random = np.asarray(e_random, dtype=np.float64)
    y = np.r_[np.ones(e_model.size), np.zeros(e_random.size)]
    return float(roc_auc_score(y, -np.r_[e_model, e_random]))


def _samples(problem, variant, n_samples, cfg, dispersion, model):
    cfg = cfg or MhConfig()
    return generate_aggregates(problem, variant, n_samples, cfg, dispersion=dispersion, model=model)


def separation(
    problem: RankingProblem,
    variant: str,
    n_samples: int = 1000,
    cfg: MhConfig | None = None,
    rng=None,
    dispersion: float | None = None,
    model: EnergyModel | None = None,
) -> float:
    """AUROC of variant-generated rankings against uniform permutations, under the variant's energy.

    Generation draws from ``cfg.seed``; the uniform permutations come from ``rng``.
    """
    return separation_sharpness(problem, variant, n_samples, cfg, rng, dispersion, model).separation


def sharpness(
    problem: RankingProblem,
    variant: str,
    n_samples: int = 1000,
    cfg: MhConfig | None = None,
    rng=None,
    dispersion: float | None = None,
    model: EnergyModel | None = None,
) -> float:
    """Kendall's W of ``n_samples`` variant-generated aggregate rankings."""
    if n_samples < 2:
        raise ValueError("sharpness needs n_samples >= 2")
    samples, _ = _samples(problem, variant, n_samples, cfg, dispersion, model)
    return kendalls_w(samples)


def separation_sharpness(
    problem: RankingProblem,
    variant: str,
    n_samples: int = 1000,
    cfg: MhConfig | None = None,
    rng=None,
    dispersion: float | None = None,
    model: EnergyModel | None = None,
) -> SeparationSharpnessReport:
    """Both generation statistics from one shared sample."""
    samples, model = _samples(problem, variant, n_samples, cfg, dispersion, model)
    rand = uniform_permutations(problem.m, n_samples, rng)
    sep = auroc(model.energies(samples), model.energies(rand))
    shp = kendalls_w(samples) if n_samples >= 2 else math.nan
    return SeparationSharpnessReport(variant, sep, shp)


def conflict(problem: RankingProblem) -> float:
    """Mean restricted Kendall distance over all unordered pairs of partial rankings."""
    if problem.K < 2:
        raise ValueError("conflict needs at least two partial rankings")
    d = [kendall_tau_restricted(a, b) for a, b in combinations(problem.partials, 2)]
    return float(np.mean(d))


def overlap(problem: RankingProblem) -> float:
    """Fraction of items that appear in at least two partial rankings."""
    counts = np.zeros(problem.m, dtype=np.int64)
    for p in problem.partials:
        counts[list(p.items)] += 1
    return float(np.mean(counts >= 2))


def features(problem: RankingProblem) -> PartialRankingFeatures:
    return PartialRankingFeatures(
        n_pr=problem.K,
        mean_len=float(np.mean([len(p) for p in problem.partials])),
        conflict=conflict(problem),
        overlap_rate=overlap(problem),
    )


def _coef_key(variant: str) -> str:
    key = variant.lower().replace(" ", "").replace("θ=", "").replace("theta=", "").replace(":", "")
    key = {"pl_direct": "pl", "pl_mcmc": "pl", "pairwise": "pp"}.get(key, key)
    if key.startswith("mallows"):
        try:
            key = f"mallows{float(key[7:]):g}"
        except ValueError:
            pass
    if key not in SHARPNESS_COEFFICIENTS:
        raise ValueError(f"no sharpness coefficients for variant {variant!r}")
    return key


def predict_sharpness(feats: PartialRankingFeatures, variant: str) -> float:
    """Published linear predictor of sharpness; not clamped to ``[0, 1]``."""
    c = SHARPNESS_COEFFICIENTS[_coef_key(variant)]
    return c[0] + c[1] * feats.n_pr + c[2] * feats.mean_len + c[3] * feats.conflict + c[4] * feats.overlap_rate


def ordering_error(estimated, truth) -> float:
    """Normalized Kendall distance between an estimated and a true ordering."""
    return kendall_tau_normalized(estimated, truth)


def mean_ci(values) -> tuple[float, float]:
    """Mean and normal-approximation 95% half-width ``1.96 * SE``."""
    v = np.asarray(values, dtype=np.float64)
    if v.size == 0:
        raise ValueError("no values")
    half = 1.96 * v.std(ddof=1) / math.sqrt(v.size) if v.size > 1 else 0.0
    return float(v.mean()), float(half)


def r_squared(y, y_hat) -> float:
    y = np.asarray(y, dtype=np.float64)
    y_hat = np.asarray(y_hat, dtype=np.float64)
    ss_res = np.sum((y - y_hat) ** 2)
    ss_tot = np.sum((y - y.mean()) ** 2)
    return float(1.0 - ss_res / ss_tot)


def tidy_csv(rows) -> str:
    """Rows of ``REPORT_COLUMNS`` tuples or dicts as CSV text."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(REPORT_COLUMNS)
    for r in rows:
        r = [r[c] for c in REPORT_COLUMNS] if isinstance(r, dict) else list(r)
        r[-1] = repr(float(r[-1]))
        w.writerow(r)
    return buf.getvalue()


def summary_csv(rows) -> str:
    """Mean and CI half-width per (generative_variant, inference_variant, metric)."""
    groups: dict[tuple, list[float]] = {}
    for r in rows:
        r = r if isinstance(r, dict) else dict(zip(REPORT_COLUMNS, r))
        groups.setdefault((r["generative_variant"], r["inference_variant"], r["metric"]), []).append(float(r["value"]))
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["generative_variant", "inference_variant", "metric", "n", "mean", "ci95"])
    for key in sorted(groups):
        m, h = mean_ci(groups[key])
        w.writerow([*key, len(groups[key]), repr(m), repr(h)])
    return buf.getvalue()
