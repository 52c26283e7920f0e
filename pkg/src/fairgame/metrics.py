"""Group-fairness measures over the joint law of (group, label, prediction).

Everything reduces to a ``(g, 2, 2)`` mass array indexed ``[a, y, y_hat]``.
Exact values come from a :class:`JointTable`; empirical values normalise a
count table and then go through the same formulas. The core works on batches
(any leading dimensions) so the debiaser can score many policies at once.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum
from typing import Iterable

import numpy as np

from .errors import InsufficientSupport, UndefinedConditional, ValidationError

ZERO_MASS = 1e-12
TABLE_TOL = 1e-10


class MetricKind(str, Enum):
    SP = "SP"
    DP_RATIO = "DP_RATIO"
    EO = "EO"
    PVP = "PVP"
    SELECTION_RATE_RATIO = "SELECTION_RATE_RATIO"

    @classmethod
    def parse(cls, value: "str | MetricKind") -> "MetricKind":
        try:
            return cls(value)
        except ValueError:
            raise ValidationError(f"unknown metric {value!r}; expected one of {[m.value for m in cls]}") from None


@dataclass(frozen=True, eq=False)
class JointTable:
    """Probability masses ``P(a, y, y_hat)`` as a ``(g, 2, 2)`` array."""

    masses: np.ndarray

    def __post_init__(self) -> None:
        m = np.array(self.masses, dtype=float)
        if m.ndim != 3 or m.shape[1:] != (2, 2) or m.shape[0] < 1:
            raise ValidationError(f"joint table must have shape (g, 2, 2), got {m.shape}")
        if not np.all(np.isfinite(m)) or np.any(m < 0):
            raise ValidationError("joint table masses must be finite and nonnegative")
        if abs(m.sum() - 1.0) > TABLE_TOL:
            raise ValidationError(f"joint table masses sum to {m.sum()!r}, not 1")
        m.setflags(write=False)
        object.__setattr__(self, "masses", m)

    @property
    def num_groups(self) -> int:
        return self.masses.shape[0]

    def group_masses(self) -> np.ndarray:
        return self.masses.sum(axis=(1, 2))

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, JointTable):
            return NotImplemented
        return np.array_equal(self.masses, other.masses)

    def to_dict(self) -> dict:
        return {"masses": self.masses.tolist()}

    @classmethod
    def from_dict(cls, d: dict) -> "JointTable":
        return cls(np.asarray(d["masses"]))


@dataclass(frozen=True)
class MetricValue:
    kind: MetricKind
    value: float
    support_counts: tuple[int, ...] | None = None


def _ratio(num: np.ndarray, den: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    ok = den >= ZERO_MASS
    with np.errstate(divide="ignore", invalid="ignore"):
        r = np.where(ok, num / np.where(ok, den, 1.0), np.nan)
    return r, ok


def _spread(rates: np.ndarray) -> np.ndarray:
    return rates.max(axis=-1) - rates.min(axis=-1)


def metric_values(kind: MetricKind, masses: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Vectorised metric over ``(..., g, 2, 2)`` masses.

    Returns ``(values, defined)``; values are NaN wherever a conditioning
    event has probability below ``1e-12``. Masses need not be normalised.
    """
    kind = MetricKind(kind)
    m = np.asarray(masses, dtype=float)
    m = m / m.sum(axis=(-3, -2, -1), keepdims=True)
    if kind in (MetricKind.SP, MetricKind.DP_RATIO, MetricKind.SELECTION_RATE_RATIO):
        rates, ok = _ratio(m[..., :, 1].sum(axis=-1), m.sum(axis=(-2, -1)))
        defined = ok.all(axis=-1)
        if kind is MetricKind.SP:
            vals = _spread(rates)
        else:
            hi = rates.max(axis=-1)
            defined &= np.nan_to_num(hi) >= ZERO_MASS
            with np.errstate(divide="ignore", invalid="ignore"):
                vals = rates.min(axis=-1) / hi
    elif kind is MetricKind.EO:
        rates, ok = _ratio(m[..., 1, 1], m[..., 1, :].sum(axis=-1))
        defined = ok.all(axis=-1)
        vals = _spread(rates)
    else:  # PVP
        # rates[..., a, v] = P(y=1 | y_hat=v, a)
        rates, ok = _ratio(m[..., 1, :], m.sum(axis=-2))
        defined = ok.all(axis=(-2, -1))
        vals = np.maximum(_spread(rates[..., 1]), _spread(rates[..., 0]))
    vals = np.where(defined, vals, np.nan)
    return vals, defined


def _undefined_message(kind: MetricKind) -> str:
    return {
        MetricKind.SP: "a group has zero mass",
        MetricKind.DP_RATIO: "a group has zero mass or every acceptance rate is zero",
        MetricKind.SELECTION_RATE_RATIO: "a group has zero mass or every acceptance rate is zero",
        MetricKind.EO: "some group has no positive-label mass",
        MetricKind.PVP: "some group never receives one of the two predictions",
    }[kind]


def exact_metric(kind: MetricKind | str, table: JointTable) -> MetricValue:
    kind = MetricKind.parse(kind)
    vals, defined = metric_values(kind, table.masses)
    if not bool(defined):
        raise UndefinedConditional(f"{kind.value} undefined: {_undefined_message(kind)}")
    return MetricValue(kind, float(vals))


def support_counts(kind: MetricKind, counts: np.ndarray) -> np.ndarray:
    """Observation counts of each conditioning cell the metric divides by."""
    kind = MetricKind(kind)
    if kind is MetricKind.EO:
        return counts[:, 1, :].sum(axis=-1)
    if kind is MetricKind.PVP:
        return counts.sum(axis=1).ravel()
    return counts.sum(axis=(1, 2))


def counts_table(data, num_groups: int | None = None) -> np.ndarray:
    """``(g, 2, 2)`` count table from ``(a, y, y_hat)`` triples or an ``(n, 3)`` array."""
    arr = np.asarray(list(data) if not isinstance(data, np.ndarray) else data, dtype=np.int64)
    if arr.size == 0:
        raise ValidationError("data must be nonempty")
    arr = arr.reshape(-1, 3)
    a, y, yh = arr[:, 0], arr[:, 1], arr[:, 2]
    if np.any((y < 0) | (y > 1) | (yh < 0) | (yh > 1)) or np.any(a < 0):
        raise ValidationError("labels and predictions must be binary, groups nonnegative")
    g = int(a.max()) + 1 if num_groups is None else num_groups
    if a.max() >= g:
        raise ValidationError(f"group index {int(a.max())} out of range for {g} groups")
    counts = np.zeros((g, 2, 2), dtype=np.int64)
    np.add.at(counts, (a, y, yh), 1)
    return counts


def metric_from_counts(kind: MetricKind | str, counts: np.ndarray, min_cell: int = 10) -> MetricValue:
    kind = MetricKind.parse(kind)
    counts = np.asarray(counts)
    if counts.sum() <= 0:
        raise ValidationError("data must be nonempty")
    support = support_counts(kind, counts)
    vals, defined = metric_values(kind, counts)
    if not bool(defined):
        raise UndefinedConditional(f"{kind.value} undefined: {_undefined_message(kind)}")
    if np.any(support < min_cell):
        raise InsufficientSupport(
            f"{kind.value}: conditioning cell counts {support.tolist()} below min_cell={min_cell}"
        )
    return MetricValue(kind, float(vals), tuple(int(s) for s in support))


def empirical_metric(
    kind: MetricKind | str,
    data: Iterable[tuple[int, int, int]] | np.ndarray,
    min_cell: int = 10,
    num_groups: int | None = None,
) -> MetricValue:
    """Plug-in estimate of ``kind`` from observed ``(a, y, y_hat)`` triples."""
    return metric_from_counts(kind, counts_table(data, num_groups), min_cell)
