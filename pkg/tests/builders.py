"""Shared constructors and independent oracles for the test-suite."""

from __future__ import annotations

import itertools

import numpy as np

from fairgame.metrics import JointTable
from fairgame.model import Classifier, ThresholdPolicy
from fairgame.population import Dataset, PopulationSpec


def random_spec(rng: np.random.Generator, g: int = 2, k: int = 5, floor: float = 0.0) -> PopulationSpec:
    w = rng.dirichlet(np.ones(g)) * (1 - g * floor) + floor
    sd = rng.dirichlet(np.ones(k), size=g)
    q = rng.uniform(0.05, 0.95, size=(k, g))
    return PopulationSpec(tuple(f"g{i}" for i in range(g)), k, w / w.sum(), sd, q)


def uniform_spec(g: int = 2, k: int = 5, label_prob=None, weights=None) -> PopulationSpec:
    q = np.full((k, g), 0.5) if label_prob is None else np.asarray(label_prob, dtype=float)
    w = np.full(g, 1.0 / g) if weights is None else np.asarray(weights, dtype=float)
    return PopulationSpec(tuple(f"g{i}" for i in range(g)), k, w, np.full((g, k), 1.0 / k), q)


def rates_spec():
    """Two groups, 5 uniform score levels; thresholds (1, 2) accept 0.8 and 0.6."""
    q = np.array([[0.1 + 0.2 * x, 0.15 * x + 0.1] for x in range(5)])
    return uniform_spec(2, 5, label_prob=q), Classifier(ThresholdPolicy((1, 2)))


def spec_and_data_from_counts(counts: np.ndarray) -> tuple[PopulationSpec, Dataset]:
    """Spec whose cell law is exactly ``counts / counts.sum()`` plus the matching dataset.

    ``counts[a, x, y]``; every (a, x) pair must have at least one sample.
    """
    counts = np.asarray(counts, dtype=np.int64)
    g, k, _ = counts.shape
    n = counts.sum()
    per_ax = counts.sum(axis=2)
    per_a = per_ax.sum(axis=1)
    spec = PopulationSpec(
        tuple(f"g{i}" for i in range(g)),
        k,
        per_a / n,
        per_ax / per_a[:, None],
        (counts[:, :, 1] / per_ax).T,
    )
    xs, as_, ys = [], [], []
    for a, x, y in itertools.product(range(g), range(k), range(2)):
        c = int(counts[a, x, y])
        xs += [x] * c
        as_ += [a] * c
        ys += [y] * c
    data = Dataset(np.array(xs), np.array(as_), np.array(ys), num_groups=g, num_score_levels=k)
    return spec, data


def random_table(rng: np.random.Generator, g: int = 3, floor: float = 0.0) -> JointTable:
    m = rng.uniform(0, 1, size=(g, 2, 2)) + floor
    return JointTable(m / m.sum())


def brute_metric(kind: str, masses) -> float | None:
    """Loop-and-divide re-derivation; None when a conditioning event is empty."""
    m = [[[float(masses[a][y][v]) for v in range(2)] for y in range(2)] for a in range(len(masses))]
    groups = range(len(m))

    def cond(num, den):
        return None if den < 1e-12 else num / den

    if kind in ("SP", "DP_RATIO", "SELECTION_RATE_RATIO"):
        rates = [cond(m[a][0][1] + m[a][1][1], sum(m[a][0]) + sum(m[a][1])) for a in groups]
        if None in rates:
            return None
        if kind == "SP":
            return max(rates) - min(rates)
        return None if max(rates) < 1e-12 else min(rates) / max(rates)
    if kind == "EO":
        rates = [cond(m[a][1][1], m[a][1][0] + m[a][1][1]) for a in groups]
        if None in rates:
            return None
        return max(abs(r - s) for r in rates for s in rates)
    spreads = []
    for v in range(2):
        rates = [cond(m[a][1][v], m[a][0][v] + m[a][1][v]) for a in groups]
        if None in rates:
            return None
        spreads.append(max(rates) - min(rates))
    return max(spreads)


def grid_policies(g: int, k: int):
    return [ThresholdPolicy(t) for t in itertools.product(range(k + 1), repeat=g)]


def exact_objective(table: np.ndarray, policy: ThresholdPolicy, kind: str, lam: float):
    """Independent loop-based bias/error of a threshold policy on a (g, K, 2) table."""
    table = np.asarray(table, dtype=float) / np.sum(table)
    g, k, _ = table.shape
    masses = np.zeros((g, 2, 2))
    for a in range(g):
        for x in range(k):
            v = 1 if x >= policy.thresholds[a] else 0
            for y in range(2):
                masses[a, y, v] += table[a, x, y]
    bias = brute_metric(kind, masses)
    err = masses[:, 1, 0].sum() + masses[:, 0, 1].sum()
    if bias is None:
        return None, err, None
    return bias, err, lam * bias + (1 - lam) * err


def skewed_spec() -> PopulationSpec:
    """Same label law given the score, group 1 sits higher on the score scale.

    A logistic model trained on it lands on (2, 2), (2, 3) or (3, 3) thresholds,
    all with exact SP of at least 0.3.
    """
    q = np.array([[0.1 + 0.2 * x] * 2 for x in range(5)])
    return PopulationSpec(
        ("g0", "g1"), 5, [0.5, 0.5], [[0.35, 0.3, 0.2, 0.1, 0.05], [0.05, 0.1, 0.2, 0.3, 0.35]], q
    )


def drifting_schedule(horizon: int = 20):
    from fairgame.population import DriftSchedule

    q_end = np.array([[0.05 + 0.2 * x, 0.2 + 0.15 * x] for x in range(5)])
    end = PopulationSpec(
        ("g0", "g1"), 5, [0.3, 0.7], [[0.2, 0.2, 0.2, 0.2, 0.2], [0.1, 0.15, 0.2, 0.25, 0.3]], q_end
    )
    return DriftSchedule(((0, skewed_spec()), (horizon, end)))
