"""Metropolis-Hastings over permutations with transposition proposals."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import numpy as np


def draw_transpositions(rng: np.random.Generator, m: int, size) -> tuple[np.ndarray, np.ndarray]:
    """Uniform unordered pairs of distinct positions, ``size`` of them."""
    p = rng.integers(m, size=size)
    q = rng.integers(m - 1, size=size)
    q = q + (q >= p)
    return p, q


@dataclass
class ChainOutput:
    state: np.ndarray
    score: float
    aux: float
    best: np.ndarray
    best_score: float
    best_aux: float
    iters: np.ndarray | None
    scores: np.ndarray | None
    auxes: np.ndarray | None
    accepted: np.ndarray | None
    samples: np.ndarray


def metropolis(
    score: Callable[[np.ndarray], tuple[float, float]],
    m: int,
    iterations: int,
    rng: np.random.Generator,
    *,
    evaluate_initial: bool = True,
    burn_in: int = 0,
    thinning: int = 1,
    record_chain: bool = True,
) -> ChainOutput:
    """Single chain maximizing/sampling ``exp(score)``.

    ``score`` maps a permutation to ``(log_target, aux)``; ``aux`` is carried
    along in the chain record (e.g. the data log-likelihood). With
    ``evaluate_initial=False`` the starting score is ``-inf`` so the first
    proposal is always accepted.
    """
    state = rng.permutation(m).astype(np.int64)
    if evaluate_initial:
        cur, cur_aux = score(state)
    else:
        cur, cur_aux = -math.inf, math.nan
    best, best_score, best_aux = state.copy(), cur, cur_aux

    ps, qs = draw_transpositions(rng, m, iterations)
    us = rng.random(iterations)

    n_keep = max(0, (iterations - burn_in) // thinning)
    samples = np.empty((n_keep, m), dtype=np.int64)
    k = 0
    if record_chain:
        scores = np.empty(iterations + 1)
        auxes = np.empty(iterations + 1)
        accepted = np.zeros(iterations + 1, dtype=bool)
        scores[0], auxes[0] = cur, cur_aux

    for t in range(1, iterations + 1):
        p, q = ps[t - 1], qs[t - 1]
        prop = state.copy()
        prop[p], prop[q] = state[q], state[p]
        new, new_aux = score(prop)
        delta = new - cur
        prob = 1.0 if delta >= 0 else math.exp(delta)
        ok = us[t - 1] < prob
        if ok:
            state, cur, cur_aux = prop, new, new_aux
        if cur > best_score:
            best, best_score, best_aux = state.copy(), cur, cur_aux
        if record_chain:
            scores[t], auxes[t], accepted[t] = cur, cur_aux, ok
        if t > burn_in and (t - burn_in) % thinning == 0:
            samples[k] = state
            k += 1

    return ChainOutput(
        state=state,
        score=cur,
        aux=cur_aux,
        best=best,
        best_score=best_score,
        best_aux=best_aux,
        iters=np.arange(iterations + 1) if record_chain else None,
        scores=scores if record_chain else None,
        auxes=auxes if record_chain else None,
        accepted=accepted if record_chain else None,
        samples=samples,
    )


def metropolis_batch(
    energies: Callable[[np.ndarray], np.ndarray],
    m: int,
    n_chains: int,
    iterations: int,
    rng: np.random.Generator,
) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    """Run ``n_chains`` independent chains in lockstep on a vectorized energy.

    Each chain follows the same transition kernel as :func:`metropolis` with
    ``score = -energy``. Returns ``(final, final_energy, best, best_energy)``.
    """
    states = np.argsort(rng.random((n_chains, m)), axis=1).astype(np.int64)
    cur = energies(states)
    best, best_e = states.copy(), cur.copy()
    rows = np.arange(n_chains)
    for _ in range(iterations):
        p, q = draw_transpositions(rng, m, n_chains)
        u = rng.random(n_chains)
        prop = states.copy()
        prop[rows, p] = states[rows, q]
        prop[rows, q] = states[rows, p]
        new = energies(prop)
        delta = cur - new
        with np.errstate(over="ignore"):
            prob = np.where(delta >= 0, 1.0, np.exp(np.minimum(delta, 0.0)))
        ok = u < prob
        states[ok] = prop[ok]
        cur = np.where(ok, new, cur)
        better = cur < best_e
        best[better] = states[better]
        best_e = np.where(better, cur, best_e)
    return states, cur, best, best_e
