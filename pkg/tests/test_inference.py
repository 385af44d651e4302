import json

import numpy as np
import pytest

from jpm._validation import derive_seed
from jpm.ebm import BiomarkerDist, Cohort, EbmLikelihood
from jpm.energy import MallowsModel, fit_pairwise
from jpm.inference import (
    InferenceConfig,
    JointProgressionModel,
    baseline_infer,
    fit_prior,
    jpm_infer,
    multi_seed_infer,
)
from jpm.rankings import RankingProblem, kendall_tau_normalized
from jpm.sampling import MhConfig

LABELS = ("a", "b", "c", "d", "e")


def simulate(order, J, seed, sep=3.0, healthy=0.3):
    rng = np.random.default_rng(seed)
    m = len(order)
    n_h = int(J * healthy)
    stages = np.r_[np.zeros(n_h, int), rng.integers(1, m + 1, J - n_h)]
    pos = np.empty(m, int)
    pos[list(order)] = np.arange(m)
    values = rng.normal(size=(J, m)) + sep * (pos[None, :] < stages[:, None])
    return Cohort(values, stages > 0, LABELS[:m], stages)


def known(m, sep=3.0):
    return [BiomarkerDist(sep, 1.0, 0.0, 1.0)] * m


def cfg(variant=None, iters=600, seed=0, **kw):
    return InferenceConfig(variant, mcmc=MhConfig(iterations=iters, seed=seed), **kw)


@pytest.fixture
def problem():
    return RankingProblem.from_labels([["a", "b", "c"], ["c", "d", "e"], ["b", "d"]])


class TestConfig:
    def test_aliases(self):
        assert InferenceConfig("none").variant is None
        assert InferenceConfig("baseline").variant is None
        assert InferenceConfig("BT").variant == "bt"

    def test_invalid(self):
        with pytest.raises(ValueError):
            InferenceConfig("borda")
        with pytest.raises(ValueError):
            InferenceConfig("mallows", dispersion=0)
        with pytest.raises(ValueError):
            InferenceConfig(n_seeds=0)

    def test_defaults(self):
        c = InferenceConfig()
        assert c.mcmc.iterations == 20000 and c.mcmc.burn_in == 500 and c.n_seeds == 10


class TestInfer:
    def test_baseline_equals_no_prior(self, problem):
        c = simulate((0, 1, 2, 3, 4), 60, 1)
        a = baseline_infer(c, cfg(), known(5))
        b = jpm_infer(c, problem, cfg(None), known(5))
        assert a.best_ranking == b.best_ranking
        np.testing.assert_array_equal(a.trace.energies, b.trace.energies)
        np.testing.assert_array_equal(a.trace.data_loglik, b.trace.data_loglik)
        assert a.to_dict()["variant"] == "none"

    def test_flat_mallows_equals_baseline(self, problem):
        c = simulate((0, 1, 2, 3, 4), 60, 2)
        flat = MallowsModel.from_central((4, 3, 2, 1, 0), 0.0)
        a = jpm_infer(c, problem, cfg("mallows"), known(5), model=flat)
        b = baseline_infer(c, cfg(), known(5))
        assert a.best_ranking == b.best_ranking and a.best_objective == b.best_objective
        np.testing.assert_array_equal(a.trace.accepted, b.trace.accepted)

    @pytest.mark.parametrize("variant", ["pp", "bt", "pl", "mallows"])
    def test_objective_decomposes(self, problem, variant):
        c = simulate((0, 1, 2, 3, 4), 40, 3)
        res = jpm_infer(c, problem, cfg(variant, iters=300), known(5))
        model = fit_prior(problem, cfg(variant, iters=300))
        lik = EbmLikelihood(c, known(5))
        assert res.best_objective == pytest.approx(lik(res.best_ranking.array) - model.energy(res.best_ranking), abs=1e-9)
        assert res.data_loglik == pytest.approx(lik(res.best_ranking.array), abs=1e-9)
        total = res.trace.data_loglik - res.trace.energies
        assert total.max() == pytest.approx(res.best_objective, abs=1e-9)
        assert res.trace.energies[-1] == pytest.approx(model.energy(res.trace.final), abs=1e-9)

    def test_first_proposal_accepted(self, problem):
        res = jpm_infer(simulate((0, 1, 2, 3, 4), 30, 4), problem, cfg("bt", iters=50), known(5))
        assert res.trace.accepted[0] and res.trace.iters[0] == 1

    def test_strong_prior_dominates_weak_data(self, problem):
        c = simulate((0, 1, 2, 3, 4), 10, 5, sep=0.2)
        prior = MallowsModel.from_central((4, 2, 0, 3, 1), 1e4)
        res = jpm_infer(c, problem, cfg("mallows", iters=3000), known(5, 0.2), model=prior)
        assert res.best_ranking.order == (4, 2, 0, 3, 1)

    def test_recovery_with_informative_data(self):
        truth = (2, 0, 3, 1)
        p = RankingProblem.from_labels([["c", "a", "d", "b"]])
        res = jpm_infer(simulate(truth, 800, 6), p, cfg("mallows", iters=2000, dispersion=10), known(4))
        assert res.to_dict()["best_ranking"] == [LABELS[i] for i in truth]

    def test_pp_prior_helps_noisy_data(self):
        truth = (0, 1, 2, 3, 4)
        p = RankingProblem.from_labels([["a", "b", "c"], ["c", "d", "e"], ["a", "c", "e"], ["b", "d"]])
        errs = {"none": [], "pp": []}
        for s in range(8):
            c = simulate(truth, 30, 100 + s, sep=1.0)
            errs["none"].append(kendall_tau_normalized(baseline_infer(c, cfg(iters=800), known(5, 1.0)).best_ranking, truth))
            errs["pp"].append(kendall_tau_normalized(jpm_infer(c, p, cfg("pp", iters=800), known(5, 1.0)).best_ranking, truth))
        assert np.mean(errs["pp"]) < np.mean(errs["none"])

    def test_column_order_irrelevant(self, problem):
        c = simulate((0, 1, 2, 3, 4), 50, 7)
        shuffled = c.select(["e", "c", "a", "d", "b"])
        a = jpm_infer(c, problem, cfg("bt"), known(5))
        b = jpm_infer(shuffled, problem, cfg("bt"), known(5))
        assert a.to_dict()["best_ranking"] == b.to_dict()["best_ranking"]

    def test_universe_mismatch(self, problem):
        c = simulate((0, 1, 2, 3), 20, 8)
        with pytest.raises(ValueError, match="differ"):
            jpm_infer(c, problem, cfg("bt"), known(4))

    def test_prior_needs_problem(self):
        with pytest.raises(ValueError):
            jpm_infer(simulate((0, 1, 2), 20, 9), None, cfg("bt"), known(3))

    def test_model_size_checked(self, problem):
        bad = fit_pairwise(RankingProblem.from_orders([(0, 1, 2)]))
        with pytest.raises(ValueError):
            jpm_infer(simulate((0, 1, 2, 3, 4), 20, 9), problem, cfg("pp"), known(5), model=bad)

    def test_small_cohort_total(self, problem):
        # ten participants with estimated distributions still give a valid ranking
        c = simulate((0, 1, 2, 3, 4), 10, 10)
        res = jpm_infer(c, problem, cfg("pl", iters=200))
        assert sorted(res.best_ranking.order) == list(range(5))
        assert np.all(np.isfinite(res.stage_posteriors.probs))

    def test_deterministic(self, problem):
        c = simulate((0, 1, 2, 3, 4), 40, 11)
        a = jpm_infer(c, problem, cfg("pp", seed=3), known(5))
        b = jpm_infer(c, problem, cfg("pp", seed=3), known(5))
        assert a.to_json() == b.to_json()
        d = json.loads(a.to_json("t.csv"))
        assert d["trace_path"] == "t.csv" and len(d["stage_point_estimates"]) == 40


class TestMultiSeed:
    def test_one_seed_equals_single_run(self, problem):
        c = simulate((0, 1, 2, 3, 4), 40, 12)
        a = multi_seed_infer(c, problem, cfg("bt", seed=5, n_seeds=1), known(5))
        b = jpm_infer(c, problem, cfg("bt", seed=5), known(5))
        assert a.to_json() == b.to_json()

    def test_picks_highest_data_loglik(self, problem):
        c = simulate((0, 1, 2, 3, 4), 40, 13, sep=1.0)
        best = multi_seed_infer(c, problem, cfg("pp", iters=100, seed=1, n_seeds=4), known(5, 1.0))
        runs = [jpm_infer(c, problem, cfg("pp", iters=100, seed=derive_seed(1, i)), known(5, 1.0)) for i in range(4)]
        assert best.data_loglik == max(r.data_loglik for r in runs)
        assert best.seed_used in [derive_seed(1, i) for i in range(4)]


class TestEstimator:
    def test_fit(self, problem):
        c = simulate((0, 1, 2, 3, 4), 200, 14)
        est = JointProgressionModel("bt", n_iter=800, burn_in=0, n_seeds=2).fit(
            c.values, c.diseased, partials=[["a", "b", "c"], ["c", "d", "e"], ["b", "d"]], labels=list(LABELS)
        )
        assert est.ordering_.order == (0, 1, 2, 3, 4)
        assert est.predict_proba(c.values).shape == (200, 6)
        assert est.score(c.values) == pytest.approx(est.log_likelihood_)

    def test_labels_reorder_columns(self):
        c = simulate((0, 1, 2, 3, 4), 200, 15)
        perm = [3, 0, 4, 1, 2]
        labels = [LABELS[i] for i in perm]
        est = JointProgressionModel("pp", n_iter=800, burn_in=0, n_seeds=1).fit(
            c.values[:, perm], c.diseased, partials=[["a", "b", "c"], ["c", "d", "e"]], labels=labels
        )
        assert [labels[i] for i in est.ordering_] == list(LABELS)

    def test_requires_partials(self):
        c = simulate((0, 1, 2), 20, 16)
        with pytest.raises(ValueError):
            JointProgressionModel("bt", n_iter=10, burn_in=0).fit(c.values, c.diseased)

    def test_baseline_without_partials(self):
        c = simulate((0, 1, 2), 200, 17)
        est = JointProgressionModel(None, n_iter=400, burn_in=0, n_seeds=1).fit(c.values, c.diseased)
        assert est.ordering_.order == (0, 1, 2)
