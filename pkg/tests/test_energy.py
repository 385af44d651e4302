import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from oracles import all_perms, kendall_inversions
from scipy.optimize import minimize

from jpm.energy import (
    BradleyTerryModel,
    ConvergenceError,
    EnergyModel,
    MallowsModel,
    PairwiseModel,
    PlackettLuceModel,
    bt_loglik,
    energy_bradley_terry,
    energy_mallows,
    energy_pairwise,
    energy_plackett_luce,
    fit_bradley_terry,
    fit_energy,
    fit_mallows_bt_informed,
    fit_pairwise,
    fit_plackett_luce,
    pl_loglik,
    project_gauge_box,
    projected_gradient,
    _suffix_sets,
)
from jpm.rankings import PartialRanking, RankingProblem


def central_diff(f, x, h=1e-5):
    g = np.zeros_like(x)
    for i in range(x.size):
        e = np.zeros_like(x)
        e[i] = h
        g[i] = (f(x + e) - f(x - e)) / (2 * h)
    return g


def random_problem(rng, m=7, K=4):
    partials = []
    for _ in range(K):
        n = rng.integers(3, m + 1)
        partials.append(tuple(rng.choice(m, n, replace=False).tolist()))
    covered = set().union(*partials)
    missing = [i for i in range(m) if i not in covered]
    if missing:
        partials.append(tuple(missing) + (partials[0][0],) if len(missing) == 1 else tuple(missing))
    return RankingProblem.from_orders(partials)


class TestPairwise:
    def test_single_pair(self):
        w = fit_pairwise(RankingProblem.from_orders([(0, 1)])).weights_
        assert w[0, 1] == 1 and w[1, 0] == -1

    def test_cancellation(self):
        assert fit_pairwise(RankingProblem.from_orders([(0, 1), (1, 0)])).weights_[0, 1] == 0

    def test_counted_in_both(self):
        assert fit_pairwise(RankingProblem.from_orders([(0, 1, 2), (0, 2)])).weights_[0, 2] == 2

    def test_weights_scale_votes(self):
        p = RankingProblem(
            RankingProblem.from_orders([(0, 1)]).registry, (PartialRanking((0, 1), 2.5), PartialRanking((1, 0), 1.0))
        )
        assert fit_pairwise(p).weights_[0, 1] == pytest.approx(1.5)

    def test_energy_two_items(self):
        model = fit_pairwise(RankingProblem.from_orders([(0, 1)]))
        assert energy_pairwise(model, [0, 1]) == -1.0

    def test_zero_weights_zero_energy(self):
        model = fit_pairwise(RankingProblem.from_orders([(0, 1, 2), (2, 1, 0)]))
        np.testing.assert_array_equal(model.energies(all_perms(3)), 0.0)

    def test_reverse_negates(self, small_problem):
        model = fit_pairwise(small_problem)
        for p in all_perms(5)[:30]:
            assert model.energy(p) == pytest.approx(-model.energy(p[::-1]))

    @pytest.mark.parametrize("m", [2, 3, 4])
    def test_sum_over_permutations_is_zero(self, m, rng):
        model = PairwiseModel()
        a = rng.normal(size=(m, m))
        model.weights_, model.n_items_ = a - a.T, m
        assert model.energies(all_perms(m)).sum() == pytest.approx(0.0, abs=1e-9)

    def test_energy_matches_loop(self, small_problem, rng):
        model = fit_pairwise(small_problem)
        w = model.weights_
        for _ in range(10):
            s = rng.permutation(5)
            ref = -sum(w[s[a], s[b]] for a in range(5) for b in range(a + 1, 5))
            assert model.energy(s) == pytest.approx(ref)


class TestBradleyTerry:
    def test_symmetric_evidence(self):
        model = fit_bradley_terry(RankingProblem.from_orders([(0, 1), (1, 0)]))
        np.testing.assert_allclose(model.strengths_, 0.0, atol=1e-12)
        assert model.prob_before(0, 1) == pytest.approx(0.5)

    def test_closed_form_three_to_one(self):
        model = fit_bradley_terry(RankingProblem.from_orders([(0, 1)] * 3 + [(1, 0)]), tol=1e-12)
        assert model.strengths_[0] - model.strengths_[1] == pytest.approx(math.log(3), abs=1e-8)
        assert model.prob_before(0, 1) == pytest.approx(0.75, abs=1e-9)

    def test_counts(self):
        model = fit_bradley_terry(RankingProblem.from_orders([(0, 1, 2), (0, 2)]))
        assert model.counts_[0, 2] == 2 and model.counts_[2, 0] == 0

    def test_gauge_and_gradient(self, rng):
        for _ in range(5):
            p = random_problem(rng)
            model = fit_bradley_terry(p)
            assert model.strengths_.sum() == pytest.approx(0.0, abs=1e-9)
            _, g, _ = model.log_likelihood()
            assert np.max(np.abs(projected_gradient(model.strengths_, g, 20.0))) < 1e-6

    def test_matches_unconstrained_optimizer(self):
        # a strongly connected comparison graph has a finite MLE
        p = RankingProblem.from_orders([(0, 1, 2, 3), (1, 0, 3, 2), (2, 0, 1, 3), (3, 1, 2, 0), (0, 2, 1, 3)])
        C = fit_bradley_terry(p).counts_.astype(float)

        def nll(t):
            f, g, _ = bt_loglik(t, C)
            return -f, -g

        ref = minimize(nll, np.zeros(4), jac=True, method="BFGS", options={"gtol": 1e-10}).x
        np.testing.assert_allclose(fit_bradley_terry(p).strengths_, ref - ref.mean(), atol=1e-6)

    def test_degenerate_hits_cap(self):
        model = fit_bradley_terry(RankingProblem.from_orders([(0, 1, 2)]))
        assert np.max(np.abs(model.strengths_)) <= 20.0 + 1e-12
        assert model.strengths_[0] > model.strengths_[1] > model.strengths_[2]

    @pytest.mark.parametrize("seed", range(10))
    def test_gradient_and_hessian_finite_differences(self, seed):
        rng = np.random.default_rng(seed)
        C = rng.integers(0, 4, size=(5, 5)).astype(float)
        np.fill_diagonal(C, 0)
        theta = rng.normal(size=5)
        f, g, H = bt_loglik(theta, C)
        fd = central_diff(lambda t: bt_loglik(t, C)[0], theta)
        np.testing.assert_allclose(g, fd, rtol=1e-4, atol=1e-8)
        fdH = np.array([central_diff(lambda t: bt_loglik(t, C)[1][i], theta) for i in range(5)])
        np.testing.assert_allclose(H, fdH, rtol=1e-4, atol=1e-7)

    def test_energy_zero_strengths(self):
        model = BradleyTerryModel.from_strengths(np.zeros(3))
        for s in all_perms(3):
            assert model.energy(s) == pytest.approx(3 * math.log(2))

    def test_energy_two_item_closed_form(self):
        model = BradleyTerryModel.from_strengths(np.array([1, -1]) * math.log(3) / 2)
        assert energy_bradley_terry(model, [0, 1]) == pytest.approx(-math.log(0.75))
        assert energy_bradley_terry(model, [1, 0]) == pytest.approx(-math.log(0.25))

    @given(st.lists(st.floats(-20, 20), min_size=2, max_size=6))
    def test_pair_probabilities_sum_to_one(self, s):
        model = BradleyTerryModel.from_strengths(np.asarray(s))
        for i in range(len(s)):
            for j in range(i + 1, len(s)):
                assert model.prob_before(i, j) + model.prob_before(j, i) == pytest.approx(1.0, abs=1e-12)

    def test_gauge_shift_leaves_energy(self, rng):
        s = rng.normal(size=5)
        a, b = BradleyTerryModel.from_strengths(s), BradleyTerryModel.from_strengths(s + 3.7)
        P = all_perms(5)
        np.testing.assert_allclose(a.energies(P), b.energies(P), atol=1e-12)

    def test_convergence_error_carries_params(self):
        p = RankingProblem.from_orders([(0, 1, 2, 3), (1, 0, 3, 2), (2, 0, 1, 3)])
        with pytest.raises(ConvergenceError) as err:
            BradleyTerryModel(max_iter=1, tol=1e-14).fit(p)
        assert err.value.params.shape == (4,)


class TestPlackettLuce:
    def test_symmetric(self):
        model = fit_plackett_luce(RankingProblem.from_orders([(0, 1), (1, 0)]))
        np.testing.assert_allclose(model.scores_, 0.0, atol=1e-12)

    def test_loglik_at_zero(self):
        p = RankingProblem.from_orders([(0, 1, 2)])
        f, _, _ = pl_loglik(np.zeros(3), _suffix_sets(p))
        assert f == pytest.approx(-math.log(3) - math.log(2))

    def test_energy_uniform(self):
        model = PlackettLuceModel.from_scores(np.zeros(3))
        for s in all_perms(3):
            assert energy_plackett_luce(model, s) == pytest.approx(math.log(6))

    @pytest.mark.parametrize("m", [1, 2, 3, 4, 5])
    def test_normalizes(self, m, rng):
        model = PlackettLuceModel.from_scores(rng.normal(scale=2, size=m))
        assert np.exp(-model.energies(all_perms(m))).sum() == pytest.approx(1.0, abs=1e-9)

    def test_first_item_monotone(self):
        a = PlackettLuceModel.from_scores(np.array([0.0, 0.5, -0.5]))
        b = PlackettLuceModel.from_scores(np.array([1.0, 0.5, -0.5]))
        assert b.energy([0, 1, 2]) < a.energy([0, 1, 2])

    @pytest.mark.parametrize("seed", range(10))
    def test_gradient_finite_differences(self, seed, small_problem):
        rng = np.random.default_rng(seed)
        suffixes = _suffix_sets(small_problem)
        a = rng.normal(size=5)
        _, g, H = pl_loglik(a, suffixes)
        np.testing.assert_allclose(g, central_diff(lambda x: pl_loglik(x, suffixes)[0], a), rtol=1e-4, atol=1e-8)
        fdH = np.array([central_diff(lambda x: pl_loglik(x, suffixes)[1][i], a) for i in range(5)])
        np.testing.assert_allclose(H, fdH, rtol=1e-4, atol=1e-7)

    def test_gradient_vanishes_at_fit(self, rng):
        for _ in range(5):
            model = fit_plackett_luce(random_problem(rng))
            _, g, _ = model.log_likelihood()
            assert np.max(np.abs(projected_gradient(model.scores_, g, 20.0))) < 1e-6
            assert model.scores_.sum() == pytest.approx(0.0, abs=1e-9)

    def test_two_chains_sharing_two_items(self):
        # most scores run to the box, the rest stay interior
        p = RankingProblem.from_orders([(0, 1, 2, 3, 4, 5), (6, 7, 8, 3, 1, 9)])
        model = fit_plackett_luce(p)
        _, g, _ = model.log_likelihood()
        assert np.max(np.abs(projected_gradient(model.scores_, g, 20.0))) < 1e-6
        assert model.scores_[0] == pytest.approx(20.0) and model.scores_[5] == pytest.approx(-20.0)

    def test_matches_unconstrained_optimizer(self):
        p = RankingProblem.from_orders([(0, 1, 2, 3), (1, 0, 3, 2), (2, 0, 1, 3), (3, 1, 2, 0)])
        suffixes = _suffix_sets(p)
        ref = minimize(lambda a: -pl_loglik(a, suffixes)[0], np.zeros(4), jac=lambda a: -pl_loglik(a, suffixes)[1],
                       method="BFGS", options={"gtol": 1e-10}).x
        np.testing.assert_allclose(fit_plackett_luce(p).scores_, ref - ref.mean(), atol=1e-6)


class TestMallows:
    def test_unanimous_central(self):
        model = fit_mallows_bt_informed(RankingProblem.from_orders([(0, 1, 2), (0, 1, 2)]), 1.0, rng=0)
        assert model.central_.order == (0, 1, 2)

    def test_dispersion_verbatim(self, small_problem):
        assert fit_mallows_bt_informed(small_problem, 10, rng=0).dispersion == 10

    def test_deterministic(self, small_problem):
        a = fit_mallows_bt_informed(small_problem, 1.0, rng=3)
        b = fit_mallows_bt_informed(small_problem, 1.0, rng=3)
        assert a.central_ == b.central_

    def test_energy_examples(self):
        model = MallowsModel.from_central((0, 1, 2), 10)
        assert energy_mallows(model, [0, 1, 2]) == 0
        assert energy_mallows(model, [2, 1, 0]) == pytest.approx(10)
        assert MallowsModel.from_central((0, 1, 2), 1).energy([1, 0, 2]) == pytest.approx(1 / 3)

    def test_matches_kendall_oracle(self, rng):
        central = rng.permutation(5)
        model = MallowsModel.from_central(central, 2.5)
        for s in all_perms(5)[::7]:
            assert model.energy(s) == pytest.approx(2.5 * kendall_inversions(s.tolist(), central.tolist()) / 10)

    def test_relabeling_invariant(self, rng):
        central, sigma, relabel = rng.permutation(6), rng.permutation(6), rng.permutation(6)
        a = MallowsModel.from_central(central, 1.0).energy(sigma)
        b = MallowsModel.from_central(relabel[central], 1.0).energy(relabel[sigma])
        assert a == pytest.approx(b)

    def test_zero_dispersion_flat(self):
        model = MallowsModel.from_central((1, 0, 2), 0.0)
        np.testing.assert_array_equal(model.energies(all_perms(3)), 0.0)

    def test_fit_rejects_nonpositive_dispersion(self, small_problem):
        with pytest.raises(ValueError):
            MallowsModel(dispersion=0.0).fit(small_problem)


class TestCommon:
    @pytest.mark.parametrize("variant", ["pp", "bt", "pl", "mallows"])
    def test_unanimous_order_beats_reverse(self, variant):
        p = RankingProblem.from_orders([(0, 1, 2, 3), (0, 1, 2, 3)])
        model = fit_energy(variant, p, dispersion=1.0, rng=0)
        assert model.energy([0, 1, 2, 3]) < model.energy([3, 2, 1, 0])

    @pytest.mark.parametrize("variant", ["pp", "bt", "pl", "mallows"])
    def test_json_roundtrip(self, variant, small_problem):
        model = fit_energy(variant, small_problem, dispersion=2.0, rng=0)
        clone = EnergyModel.from_json(model.to_json())
        P = all_perms(5)
        np.testing.assert_allclose(clone.energies(P), model.energies(P))

    def test_sklearn_params(self):
        assert BradleyTerryModel(tol=1e-3).get_params()["tol"] == 1e-3
        assert MallowsModel(dispersion=4).set_params(dispersion=5).dispersion == 5

    def test_fit_accepts_id_sequences(self):
        model = BradleyTerryModel().fit([(0, 1), (1, 2)])
        assert model.n_items_ == 3

    def test_unknown_variant(self, small_problem):
        with pytest.raises(ValueError):
            fit_energy("nope", small_problem)
        with pytest.raises(ValueError):
            fit_energy("mallows", small_problem)

    @given(st.lists(st.floats(-50, 50), min_size=2, max_size=8))
    @settings(max_examples=50)
    def test_projection_feasible(self, x):
        y = project_gauge_box(np.asarray(x), 20.0)
        assert abs(y.sum()) < 1e-8 * max(1, len(x))
        assert np.max(np.abs(y)) <= 20.0 + 1e-12
