"""Energy functions over aggregate rankings and their fitting procedures.

Every model follows the scikit-learn estimator protocol: hyperparameters in
``__init__``, ``fit`` on a :class:`~jpm.rankings.RankingProblem` (or a list
of item-id sequences), fitted state in trailing-underscore attributes. A
fitted model scores a ranking with :meth:`EnergyModel.energy` and a stack of
rankings with :meth:`EnergyModel.energies`; lower energy means a ranking is
more consistent with the partial rankings, and the prior is ``exp(-E)``.
"""

from __future__ import annotations

import json
from typing import ClassVar

import numpy as np
from scipy.special import log_expit
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from ._mcmc import metropolis
from ._validation import check_generator, check_order, check_orders, check_positive
from .rankings import AggregateRanking, PartialRanking, RankingProblem

CAP = 20.0


class ConvergenceError(RuntimeError):
    """Raised when a maximum-likelihood fit exhausts ``max_iter``.

    The last iterate is available as ``params``.
    """

    def __init__(self, message: str, params: np.ndarray):
        super().__init__(message)
        self.params = params


def as_problem(X) -> RankingProblem:
    if isinstance(X, RankingProblem):
        return X
    return RankingProblem.from_orders(
        [p if isinstance(p, PartialRanking) else PartialRanking(tuple(p)) for p in X]
    )


def pairwise_energies(pair_scores: np.ndarray, perms: np.ndarray) -> np.ndarray:
    """``-sum_{s<t} pair_scores[y_s, y_t]`` for every row ``y`` of ``perms``."""
    m = perms.shape[1]
    gathered = pair_scores[perms[:, :, None], perms[:, None, :]]
    upper = np.triu(np.ones((m, m), dtype=bool), k=1)
    return -gathered[:, upper].sum(axis=1)


def precedence_counts(problem: RankingProblem, weighted: bool = False) -> np.ndarray:
    """``C[i, j]``: (weighted) number of partials placing ``i`` before ``j``."""
    C = np.zeros((problem.m, problem.m))
    for p in problem.partials:
        idx = np.asarray(p.items)
        n = idx.size
        upper = np.triu(np.ones((n, n), dtype=bool), k=1)
        C[np.ix_(idx, idx)] += np.where(upper, p.weight if weighted else 1.0, 0.0)
    return C


class EnergyModel(BaseEstimator):
    variant: ClassVar[str] = ""

    def _pair_scores(self) -> np.ndarray:
        raise NotImplementedError

    def energies(self, perms) -> np.ndarray:
        """Energies of a stack of rankings, shape ``(n, m)`` -> ``(n,)``."""
        check_is_fitted(self)
        perms = check_orders(perms, self.n_items_)
        return pairwise_energies(self._pair_scores(), perms)

    def energy(self, sigma) -> float:
        check_is_fitted(self)
        return float(self.energies(check_order(sigma, self.n_items_)[None, :])[0])

    def _fast_energy(self):
        """Unchecked single-ranking energy callable for the MCMC inner loop."""
        scores = self._pair_scores()
        return lambda perm: float(pairwise_energies(scores, perm[None, :])[0])

    def _fast_energies(self):
        scores = self._pair_scores()
        return lambda perms: pairwise_energies(scores, perms)

    def to_dict(self) -> dict:
        raise NotImplementedError

    def to_json(self) -> str:
        return json.dumps(self.to_dict())

    @staticmethod
    def from_dict(payload: dict) -> "EnergyModel":
        cls = _VARIANTS[payload["variant"]]
        return cls._from_dict(payload)

    @staticmethod
    def from_json(text: str) -> "EnergyModel":
        return EnergyModel.from_dict(json.loads(text))


class PairwiseModel(EnergyModel):
    """Weighted pairwise-preference (generalized majority vote) energy.

    ``w[i, j] = sum_k weight_k * r_k(i, j)`` where ``r_k`` is +1 when partial
    ``k`` places ``i`` before ``j``, -1 when after, and 0 when either item is
    missing from it.
    """

    variant = "pp"

    def fit(self, X, y=None):
        problem = as_problem(X)
        C = precedence_counts(problem, weighted=True)
        self.weights_ = C - C.T
        self.n_items_ = problem.m
        return self

    def _pair_scores(self):
        return self.weights_

    def to_dict(self):
        check_is_fitted(self)
        return {"variant": self.variant, "weights": self.weights_.tolist()}

    @classmethod
    def _from_dict(cls, payload):
        model = cls()
        model.weights_ = np.asarray(payload["weights"], dtype=np.float64)
        model.n_items_ = model.weights_.shape[0]
        return model


# -- constrained maximum likelihood ----------------------------------------


def project_gauge_box(x: np.ndarray, cap: float) -> np.ndarray:
    """Euclidean projection onto ``{sum(x) = 0, |x_i| <= cap}``."""
    x = np.asarray(x, dtype=np.float64)
    c = x.mean()
    y = x - c
    if np.max(np.abs(y)) <= cap:
        return y
    lo, hi = x.min() - cap, x.max() + cap
    for _ in range(200):
        c = 0.5 * (lo + hi)
        s = np.clip(x - c, -cap, cap).sum()
        if s > 0:
            lo = c
        else:
            hi = c
        if hi - lo < 1e-15 * max(1.0, abs(c)):
            break
    return np.clip(x - 0.5 * (lo + hi), -cap, cap)


def _free_set(x, g, cap, eps=1e-9):
    """Coordinates not pinned at the box by the current gradient.

    Returns ``(free mask, multiplier)`` where the multiplier is the mean
    gradient over free coordinates (the gauge constraint's Lagrange term).
    """
    at_hi = x >= cap - eps
    at_lo = x <= -cap + eps
    free = ~(at_hi | at_lo)
    for _ in range(x.size + 1):
        mu = g[free].mean() if free.any() else 0.0
        new_free = ~((at_hi & (g - mu > 0)) | (at_lo & (g - mu < 0)))
        if np.array_equal(new_free, free):
            break
        free = new_free
    return free, mu


def projected_gradient(x, g, cap):
    """KKT residual for ``max f`` on the gauge/box set; zero at the optimum."""
    free, mu = _free_set(x, g, cap)
    pg = np.zeros_like(g)
    pg[free] = g[free] - mu
    return pg


def maximize_gauge_box(fun, x0, tol=1e-6, max_iter=10_000, cap=CAP):
    """Maximize a concave ``fun(x) -> (f, grad, hess)`` on ``{sum x = 0, |x| <= cap}``.

    Projected Newton iterations with Armijo backtracking on the projection
    arc; falls back to the projected gradient when the Newton step is not an
    ascent direction. Returns ``(x, n_iter)``.
    """
    x = project_gauge_box(x0, cap)
    f, g, H = fun(x)
    for it in range(max_iter):
        pg = projected_gradient(x, g, cap)
        if np.max(np.abs(pg)) < tol:
            return x, it
        # epsilon-active set: near-bound coordinates pushed outward take a
        # gradient step instead of a Newton step, so they reach the bound
        eps = min(1e-2 * cap, float(np.max(np.abs(x - project_gauge_box(x + g, cap)))))
        free, mu = _free_set(x, g, cap, eps)
        idx = np.flatnonzero(free)
        n = idx.size
        kkt = np.zeros((n + 1, n + 1))
        kkt[:n, :n] = -H[np.ix_(idx, idx)]
        kkt[:n, n] = kkt[n, :n] = 1.0
        rhs = np.append(g[idx], 0.0)
        d = np.zeros_like(x)
        d[idx] = np.linalg.lstsq(kkt, rhs, rcond=None)[0][:n]
        d[~free] = g[~free] - mu
        if not np.all(np.isfinite(d)) or g @ d <= 0:
            d = pg
        t = 1.0
        while True:
            x_new = project_gauge_box(x + t * d, cap)
            f_new, g_new, H_new = fun(x_new)
            if f_new >= f + 1e-4 * (g @ (x_new - x)):
                break
            t *= 0.5
            if t < 1e-12:
                # no representable ascent along d: switch to plain gradient
                if d is pg:
                    raise ConvergenceError("line search failed", x)
                d, t = pg, 1.0
        x, f, g, H = x_new, f_new, g_new, H_new
    raise ConvergenceError(f"no convergence after {max_iter} iterations", x)


def bt_loglik(theta: np.ndarray, C: np.ndarray):
    """Bradley-Terry log-likelihood ``sum C_ij log sigma(theta_i - theta_j)``
    with gradient and Hessian."""
    diff = theta[:, None] - theta[None, :]
    logP = log_expit(diff)
    P = np.exp(logP)
    f = float(np.sum(C * logP))
    g = (C * P.T).sum(axis=1) - (C.T * P).sum(axis=1)
    N = C + C.T
    W = N * P * P.T
    H = W.copy()
    np.fill_diagonal(H, 0.0)
    H[np.diag_indices_from(H)] = -H.sum(axis=1)
    return f, g, H


def _suffix_sets(problem: RankingProblem) -> list[np.ndarray]:
    return [np.asarray(p.items[t:]) for p in problem.partials for t in range(len(p))]


def pl_loglik(alpha: np.ndarray, suffixes: list[np.ndarray]):
    """Plackett-Luce log-likelihood over the choice sets of every partial."""
    m = alpha.size
    f = 0.0
    g = np.zeros(m)
    H = np.zeros((m, m))
    for S in suffixes:
        a = alpha[S]
        top = a.max()
        lse = top + np.log(np.exp(a - top).sum())
        p = np.exp(a - lse)
        f += a[0] - lse
        g[S[0]] += 1.0
        g[S] -= p
        H[np.ix_(S, S)] -= np.diag(p) - np.outer(p, p)
    return f, g, H


def pl_log_prob(alpha: np.ndarray, perms: np.ndarray) -> np.ndarray:
    """Sequential-choice log-probability of each full ranking row."""
    a = alpha[perms]
    suffix_lse = np.logaddexp.accumulate(a[:, ::-1], axis=1)[:, ::-1]
    return (a - suffix_lse).sum(axis=1)


class BradleyTerryModel(EnergyModel):
    """Bradley-Terry strengths fitted by maximum likelihood.

    Parameters
    ----------
    tol : float
        Max-norm of the (projected) log-likelihood gradient at convergence.
    max_iter : int
        Newton iterations before :class:`ConvergenceError`.
    cap : float
        Strengths are confined to ``[-cap, cap]``; reached when the
        comparison graph lets an item win (or lose) every comparison.
    """

    variant = "bt"

    def __init__(self, tol=1e-6, max_iter=10_000, cap=CAP):
        self.tol = tol
        self.max_iter = max_iter
        self.cap = cap

    def fit(self, X, y=None):
        problem = as_problem(X)
        C = precedence_counts(problem)
        theta, n_iter = maximize_gauge_box(
            lambda t: bt_loglik(t, C), np.zeros(problem.m), self.tol, self.max_iter, self.cap
        )
        self.counts_ = C.astype(np.int64)
        self.strengths_ = theta
        self.n_iter_ = n_iter
        self.n_items_ = problem.m
        return self

    def log_likelihood(self, strengths=None):
        """Training log-likelihood, gradient and Hessian at ``strengths``."""
        check_is_fitted(self)
        theta = self.strengths_ if strengths is None else np.asarray(strengths, dtype=np.float64)
        return bt_loglik(theta, self.counts_.astype(np.float64))

    def prob_before(self, i: int, j: int) -> float:
        """``P(i before j) = e^theta_i / (e^theta_i + e^theta_j)``."""
        check_is_fitted(self)
        return float(np.exp(log_expit(self.strengths_[i] - self.strengths_[j])))

    def _pair_scores(self):
        s = self.strengths_
        return log_expit(s[:, None] - s[None, :])

    def to_dict(self):
        check_is_fitted(self)
        return {
            "variant": self.variant,
            "strengths": self.strengths_.tolist(),
            "counts": self.counts_.tolist(),
        }

    @classmethod
    def _from_dict(cls, payload):
        model = cls()
        model.strengths_ = np.asarray(payload["strengths"], dtype=np.float64)
        model.counts_ = np.asarray(payload["counts"], dtype=np.int64)
        model.n_items_ = model.strengths_.size
        return model

    @classmethod
    def from_strengths(cls, strengths) -> "BradleyTerryModel":
        model = cls()
        model.strengths_ = np.asarray(strengths, dtype=np.float64)
        model.n_items_ = model.strengths_.size
        model.counts_ = np.zeros((model.n_items_, model.n_items_), dtype=np.int64)
        return model


class PlackettLuceModel(EnergyModel):
    """Plackett-Luce scores fitted by maximum likelihood.

    The energy of a full ranking is its negative sequential-choice
    log-probability, so ``exp(-E)`` sums to one over all permutations.
    Parameters are as for :class:`BradleyTerryModel`.
    """

    variant = "pl"

    def __init__(self, tol=1e-6, max_iter=10_000, cap=CAP):
        self.tol = tol
        self.max_iter = max_iter
        self.cap = cap

    def fit(self, X, y=None):
        problem = as_problem(X)
        suffixes = _suffix_sets(problem)
        alpha, n_iter = maximize_gauge_box(
            lambda a: pl_loglik(a, suffixes), np.zeros(problem.m), self.tol, self.max_iter, self.cap
        )
        self.scores_ = alpha
        self.n_iter_ = n_iter
        self.n_items_ = problem.m
        self._suffixes = suffixes
        return self

    def log_likelihood(self, scores=None, problem=None):
        check_is_fitted(self)
        alpha = self.scores_ if scores is None else np.asarray(scores, dtype=np.float64)
        suffixes = self._suffixes if problem is None else _suffix_sets(as_problem(problem))
        return pl_loglik(alpha, suffixes)

    def energies(self, perms):
        check_is_fitted(self)
        return -pl_log_prob(self.scores_, check_orders(perms, self.n_items_))

    def _fast_energy(self):
        alpha = self.scores_
        return lambda perm: float(-pl_log_prob(alpha, perm[None, :])[0])

    def _fast_energies(self):
        alpha = self.scores_
        return lambda perms: -pl_log_prob(alpha, perms)

    def to_dict(self):
        check_is_fitted(self)
        return {"variant": self.variant, "scores": self.scores_.tolist()}

    @classmethod
    def _from_dict(cls, payload):
        return cls.from_scores(payload["scores"])

    @classmethod
    def from_scores(cls, scores) -> "PlackettLuceModel":
        model = cls()
        model.scores_ = np.asarray(scores, dtype=np.float64)
        model.n_items_ = model.scores_.size
        model._suffixes = []
        return model


class MallowsModel(EnergyModel):
    """Mallows energy ``dispersion * d(sigma, central)`` with normalized Kendall d.

    ``fit`` is the BT-informed estimate: Bradley-Terry strengths are fitted
    and the central ranking is the lowest-energy state visited by a
    Metropolis-Hastings run of ``mcmc_iters`` steps on the BT energy. The
    dispersion is never estimated.
    """

    variant = "mallows"

    def __init__(self, dispersion=1.0, mcmc_iters=5000, random_state=None, tol=1e-6, max_iter=10_000):
        self.dispersion = dispersion
        self.mcmc_iters = mcmc_iters
        self.random_state = random_state
        self.tol = tol
        self.max_iter = max_iter

    def fit(self, X, y=None):
        check_positive(self.dispersion, "dispersion")
        problem = as_problem(X)
        bt = BradleyTerryModel(tol=self.tol, max_iter=self.max_iter).fit(problem)
        rng = check_generator(self.random_state)
        self.bt_ = bt
        self.central_ = AggregateRanking(tuple(_bt_mode_by_mcmc(bt, self.mcmc_iters, rng).tolist()))
        self.n_items_ = problem.m
        return self

    @classmethod
    def from_central(cls, central, dispersion) -> "MallowsModel":
        """Model with a given central ranking; ``dispersion = 0`` gives a flat prior."""
        check_positive(dispersion, "dispersion", allow_zero=True)
        model = cls(dispersion=float(dispersion))
        model.central_ = central if isinstance(central, AggregateRanking) else AggregateRanking(tuple(central))
        model.n_items_ = len(model.central_)
        return model

    def _pair_scores(self):
        m = self.n_items_
        n_pairs = m * (m - 1) / 2
        if n_pairs == 0:
            return np.zeros((m, m))
        pos0 = self.central_.positions()
        discordant = pos0[:, None] > pos0[None, :]
        return -float(self.dispersion) / n_pairs * discordant

    def to_dict(self):
        check_is_fitted(self)
        return {
            "variant": self.variant,
            "central": list(self.central_.order),
            "dispersion": float(self.dispersion),
        }

    @classmethod
    def _from_dict(cls, payload):
        return cls.from_central(payload["central"], payload["dispersion"])


def _bt_mode_by_mcmc(bt: BradleyTerryModel, iterations: int, rng) -> np.ndarray:
    m = bt.n_items_
    if m == 1:
        return np.zeros(1, dtype=np.int64)
    energy = bt._fast_energy()
    out = metropolis(lambda s: (-energy(s), np.nan), m, iterations, rng, record_chain=False)
    return out.best


_VARIANTS = {
    "pp": PairwiseModel,
    "bt": BradleyTerryModel,
    "pl": PlackettLuceModel,
    "mallows": MallowsModel,
}


# -- functional API --------------------------------------------------------


def fit_pairwise(problem: RankingProblem) -> PairwiseModel:
    return PairwiseModel().fit(problem)


def fit_bradley_terry(problem: RankingProblem, tol: float = 1e-6, max_iter: int = 10_000) -> BradleyTerryModel:
    return BradleyTerryModel(tol=tol, max_iter=max_iter).fit(problem)


def fit_plackett_luce(problem: RankingProblem, tol: float = 1e-6, max_iter: int = 10_000) -> PlackettLuceModel:
    return PlackettLuceModel(tol=tol, max_iter=max_iter).fit(problem)


def fit_mallows_bt_informed(problem: RankingProblem, dispersion: float, mcmc_iters: int = 5000, rng=None) -> MallowsModel:
    return MallowsModel(dispersion=dispersion, mcmc_iters=mcmc_iters, random_state=check_generator(rng)).fit(problem)


def energy_pairwise(model: PairwiseModel, sigma) -> float:
    return model.energy(sigma)


def energy_bradley_terry(model: BradleyTerryModel, sigma) -> float:
    return model.energy(sigma)


def energy_plackett_luce(model: PlackettLuceModel, sigma) -> float:
    return model.energy(sigma)


def energy_mallows(model: MallowsModel, sigma) -> float:
    return model.energy(sigma)


def fit_energy(variant: str, problem: RankingProblem, dispersion: float | None = None, rng=None, **kwargs) -> EnergyModel:
    """Fit the named variant (``pp``, ``bt``, ``pl`` or ``mallows``)."""
    variant = variant.lower()
    if variant == "pp":
        return fit_pairwise(problem)
    if variant == "bt":
        return fit_bradley_terry(problem, **kwargs)
    if variant in ("pl", "pl_direct", "pl_mcmc"):
        return fit_plackett_luce(problem, **kwargs)
    if variant == "mallows":
        if dispersion is None:
            raise ValueError("the Mallows variant needs a dispersion")
        return fit_mallows_bt_informed(problem, dispersion, rng=rng, **kwargs)
    raise ValueError(f"unknown energy variant {variant!r}")
