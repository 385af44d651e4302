"""Ranking data structures and rank-correlation primitives.

Rankings are stored as item sequences (position -> item id). The inverse
view (item -> position) is computed on demand with :meth:`positions`.
"""

from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass, field
from itertools import combinations
from typing import Iterable, Sequence

import numpy as np
from scipy.stats import rankdata

from ._validation import check_generator, check_order


@dataclass(frozen=True)
class Item:
    id: int
    label: str


@dataclass(frozen=True)
class PartialRanking:
    """A strict total order over a subset of the items, with importance weight."""

    items: tuple[int, ...]
    weight: float = 1.0

    def __post_init__(self):
        items = tuple(int(i) for i in self.items)
        if not items:
            raise ValueError("a partial ranking must contain at least one item")
        if len(set(items)) != len(items):
            raise ValueError(f"duplicate items in partial ranking {items}")
        if min(items) < 0:
            raise ValueError("item ids must be non-negative")
        if not np.isfinite(self.weight) or self.weight < 0:
            raise ValueError(f"weight must be finite and non-negative, got {self.weight}")
        object.__setattr__(self, "items", items)
        object.__setattr__(self, "weight", float(self.weight))

    def __len__(self) -> int:
        return len(self.items)

    def __iter__(self):
        return iter(self.items)

    def positions(self) -> dict[int, int]:
        return {item: p for p, item in enumerate(self.items)}


@dataclass(frozen=True)
class AggregateRanking:
    """A permutation of all item ids ``0..m-1``."""

    order: tuple[int, ...]

    def __post_init__(self):
        arr = check_order(self.order)
        object.__setattr__(self, "order", tuple(int(i) for i in arr))

    def __len__(self) -> int:
        return len(self.order)

    def __iter__(self):
        return iter(self.order)

    def __getitem__(self, idx):
        return self.order[idx]

    @property
    def array(self) -> np.ndarray:
        return np.asarray(self.order, dtype=np.int64)

    def positions(self) -> np.ndarray:
        """Inverse permutation: ``positions()[item]`` is the item's 0-based rank."""
        pos = np.empty(len(self.order), dtype=np.int64)
        pos[self.array] = np.arange(len(self.order))
        return pos

    def reversed(self) -> "AggregateRanking":
        return AggregateRanking(self.order[::-1])

    def labels(self, registry: Sequence[Item]) -> list[str]:
        return [registry[i].label for i in self.order]


@dataclass(frozen=True)
class RankingProblem:
    """K partial rankings over a dense item registry (the union of their items)."""

    registry: tuple[Item, ...]
    partials: tuple[PartialRanking, ...]
    _label_index: dict = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        registry = tuple(self.registry)
        partials = tuple(
            p if isinstance(p, PartialRanking) else PartialRanking(tuple(p)) for p in self.partials
        )
        if not partials:
            raise ValueError("a ranking problem needs at least one partial ranking")
        ids = [it.id for it in registry]
        if ids != list(range(len(registry))):
            raise ValueError("registry ids must be dense and ordered 0..m-1")
        labels = [it.label for it in registry]
        if len(set(labels)) != len(labels):
            raise ValueError("registry labels must be unique")
        union = set()
        for p in partials:
            union.update(p.items)
        if union != set(ids):
            missing = sorted(set(ids) - union)
            unknown = sorted(union - set(ids))
            raise ValueError(
                f"partials must cover the registry exactly (uncovered ids {missing}, unknown ids {unknown})"
            )
        object.__setattr__(self, "registry", registry)
        object.__setattr__(self, "partials", partials)
        object.__setattr__(self, "_label_index", {lab: i for i, lab in enumerate(labels)})

    @classmethod
    def from_labels(
        cls, partials: Iterable[Sequence[str]], weights: Sequence[float] | None = None
    ) -> "RankingProblem":
        """Build a problem from label sequences; ids follow first appearance."""
        partials = [list(p) for p in partials]
        labels: list[str] = []
        for p in partials:
            for lab in p:
                if lab not in labels:
                    labels.append(lab)
        index = {lab: i for i, lab in enumerate(labels)}
        weights = [1.0] * len(partials) if weights is None else list(weights)
        if len(weights) != len(partials):
            raise ValueError("one weight per partial ranking is required")
        return cls(
            tuple(Item(i, lab) for i, lab in enumerate(labels)),
            tuple(PartialRanking(tuple(index[lab] for lab in p), w) for p, w in zip(partials, weights)),
        )

    @classmethod
    def from_orders(cls, partials: Iterable[Sequence[int]], labels: Sequence[str] | None = None):
        partials = [PartialRanking(tuple(p)) if not isinstance(p, PartialRanking) else p for p in partials]
        m = max(max(p.items) for p in partials) + 1
        labels = [f"b{i}" for i in range(m)] if labels is None else list(labels)
        return cls(tuple(Item(i, lab) for i, lab in enumerate(labels)), tuple(partials))

    @property
    def m(self) -> int:
        return len(self.registry)

    universe_size = m

    @property
    def K(self) -> int:
        return len(self.partials)

    @property
    def labels(self) -> list[str]:
        return [it.label for it in self.registry]

    def index_of(self, label: str) -> int:
        return self._label_index[label]


def _as_array(x) -> np.ndarray:
    if isinstance(x, AggregateRanking):
        x = x.order
    elif isinstance(x, PartialRanking):
        x = x.items
    return np.asarray(x, dtype=np.int64)


def _discordant_fraction(pos_a: np.ndarray, pos_b: np.ndarray) -> float:
    n = pos_a.size
    if n < 2:
        return 0.0
    iu = np.triu_indices(n, k=1)
    prod = (pos_a[iu[0]] - pos_a[iu[1]]) * (pos_b[iu[0]] - pos_b[iu[1]])
    concordant = int(np.count_nonzero(prod > 0))
    discordant = int(np.count_nonzero(prod < 0))
    total = concordant + discordant
    return 0.0 if total == 0 else discordant / total


def kendall_tau_normalized(a, b) -> float:
    """Fraction of item pairs ordered differently by two rankings of one item set.

    Returns 0 when there are no comparable pairs.
    """
    a, b = _as_array(a), _as_array(b)
    if a.size != b.size or set(a.tolist()) != set(b.tolist()) or len(set(a.tolist())) != a.size:
        raise ValueError("rankings must be permutations of the same item set")
    items = np.sort(a)
    # rank of each (sorted) item in a and in b
    pos_a = np.empty(a.size, dtype=np.int64)
    pos_b = np.empty(b.size, dtype=np.int64)
    pos_a[np.searchsorted(items, a)] = np.arange(a.size)
    pos_b[np.searchsorted(items, b)] = np.arange(b.size)
    return _discordant_fraction(pos_a, pos_b)


def kendall_tau_restricted(a, b) -> float:
    """Normalized Kendall distance on the items two partial rankings share.

    Fewer than two common items count as no evidence of conflict (0.0).
    """
    a, b = _as_array(a).tolist(), _as_array(b).tolist()
    common = set(a) & set(b)
    if len(common) < 2:
        return 0.0
    return kendall_tau_normalized([i for i in a if i in common], [i for i in b if i in common])


def kendalls_w(rankings) -> float:
    """Kendall's coefficient of concordance W for k rankings of the same m items."""
    arr = np.asarray([_as_array(r) for r in rankings], dtype=np.int64)
    if arr.ndim != 2:
        raise ValueError("rankings must all have the same length")
    k, m = arr.shape
    if m < 2:
        raise ValueError("Kendall's W needs at least two items")
    if k < 2:
        raise ValueError("Kendall's W needs at least two rankings")
    ref = np.sort(arr[0])
    if not np.array_equal(np.sort(arr, axis=1), np.broadcast_to(ref, arr.shape)):
        raise ValueError("rankings must be permutations of the same item set")
    ranks = np.empty_like(arr)
    rows = np.arange(k)[:, None]
    ranks[rows, np.searchsorted(ref, arr)] = np.arange(1, m + 1)
    rank_sums = ranks.sum(axis=0).astype(np.float64)
    s = float(np.sum((rank_sums - rank_sums.mean()) ** 2))
    return 12.0 * s / (k**2 * (m**3 - m))


def spearman_rho(x, y) -> float:
    """Spearman correlation with mid-ranks for ties."""
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.shape != y.shape or x.ndim != 1:
        raise ValueError("x and y must be one-dimensional and of equal length")
    if x.size < 2:
        raise ValueError("need at least two observations")
    rx, ry = rankdata(x), rankdata(y)
    rx -= rx.mean()
    ry -= ry.mean()
    denom = np.sqrt(np.dot(rx, rx) * np.dot(ry, ry))
    if denom == 0:
        raise ValueError("Spearman's rho is undefined for a constant input")
    return float(np.clip(np.dot(rx, ry) / denom, -1.0, 1.0))


def random_permutation(m: int, rng) -> AggregateRanking:
    """Uniformly random permutation of ``0..m-1``."""
    if m < 1:
        raise ValueError("m must be >= 1")
    return AggregateRanking(tuple(check_generator(rng).permutation(m).tolist()))


def pair_enumeration_tau(a: Sequence[int], b: Sequence[int]) -> float:
    """Reference O(m^2) Python loop over item pairs, used as a test oracle."""
    pa = {item: p for p, item in enumerate(a)}
    pb = {item: p for p, item in enumerate(b)}
    disc = conc = 0
    for i, j in combinations(sorted(pa), 2):
        s = (pa[i] - pa[j]) * (pb[i] - pb[j])
        conc += s > 0
        disc += s < 0
    return 0.0 if conc + disc == 0 else disc / (conc + disc)


# -- serialization ---------------------------------------------------------


def ranking_to_json(ranking, labels: Sequence[str], weight: float | None = None) -> str:
    payload = {"items": list(labels), "order": [int(i) for i in _as_array(ranking)]}
    if isinstance(ranking, PartialRanking):
        weight = ranking.weight if weight is None else weight
    if weight is not None:
        payload["weight"] = float(weight)
    return json.dumps(payload)


def ranking_from_json(text: str):
    """Inverse of :func:`ranking_to_json`; returns ``(ranking, labels)``.

    A payload whose order covers every listed item becomes an
    :class:`AggregateRanking` unless it carries a ``weight``.
    """
    payload = json.loads(text)
    labels = list(payload["items"])
    order = tuple(int(i) for i in payload["order"])
    if "weight" in payload or len(order) != len(labels):
        return PartialRanking(order, payload.get("weight", 1.0)), labels
    return AggregateRanking(order), labels


def problem_to_dict(problem: RankingProblem) -> dict:
    return {
        "items": problem.labels,
        "partials": [
            {"order": list(p.items), "weight": p.weight} for p in problem.partials
        ],
    }


def problem_from_dict(payload: dict) -> RankingProblem:
    """Accepts ``{"items": [...], "partials": [{"order": [...], "weight": w}]}``
    or a bare list of label lists under ``"partials"``."""
    parts = payload["partials"]
    if "items" not in payload:
        weights = payload.get("weights")
        return RankingProblem.from_labels(parts, weights)
    labels = list(payload["items"])
    registry = tuple(Item(i, lab) for i, lab in enumerate(labels))
    partials = []
    for p in parts:
        if isinstance(p, dict):
            partials.append(PartialRanking(tuple(p["order"]), p.get("weight", 1.0)))
        else:
            partials.append(PartialRanking(tuple(labels.index(x) if isinstance(x, str) else x for x in p)))
    return RankingProblem(registry, tuple(partials))


def rankings_to_csv(rankings, labels: Sequence[str]) -> str:
    """One row per ranking, item labels in rank order."""
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    for r in rankings:
        writer.writerow([labels[i] for i in _as_array(r)])
    return buf.getvalue()


def rankings_from_csv(text: str, labels: Sequence[str]) -> list[tuple[int, ...]]:
    index = {lab: i for i, lab in enumerate(labels)}
    return [tuple(index[x] for x in row) for row in csv.reader(io.StringIO(text)) if row]
