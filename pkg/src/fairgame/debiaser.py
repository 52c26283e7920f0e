"""Threshold post-processing, reweighing, and the exact-knowledge oracle.

The debiaser picks per-group score thresholds minimising

    lam * bias + (1 - lam) * error

on a ``(g, K, 2)`` table of masses ``P(a, x, y)``. The table may be an audit's
empirical estimate or the exact population law; the oracle is this same
search run on the exact law.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .errors import EmptyCell, MissingGroup, NoFeasiblePolicy, ValidationError
from .metrics import MetricKind, metric_values
from .model import ThresholdPolicy
from .population import Dataset, PopulationSpec

EXHAUSTIVE_LIMIT = 10**6
TIE_TOL = 1e-12
_CHUNK = 1 << 16


@dataclass(frozen=True)
class DebiaserConfig:
    lam: float = 1.0
    target_metric: MetricKind = MetricKind.SP
    smoothing: float = 0.0
    max_sweeps: int = 10
    # "audit": post-process the audited table; "oracle": use the exact law;
    # "fixed": always deploy fixed_thresholds
    mode: str = "audit"
    fixed_thresholds: tuple[int, ...] | None = None

    def __post_init__(self) -> None:
        object.__setattr__(self, "target_metric", MetricKind.parse(self.target_metric))
        if not 0.0 <= self.lam <= 1.0:
            raise ValidationError("lambda must lie in [0, 1]")
        if not 0.0 <= self.smoothing <= 1.0:
            raise ValidationError("smoothing must lie in [0, 1]")
        if self.max_sweeps < 1:
            raise ValidationError("max_sweeps must be at least 1")
        if self.mode not in ("audit", "oracle", "fixed"):
            raise ValidationError(f"unknown debiaser mode {self.mode!r}")
        if self.mode == "fixed" and self.fixed_thresholds is None:
            raise ValidationError("mode 'fixed' needs fixed_thresholds")
        if self.fixed_thresholds is not None:
            object.__setattr__(self, "fixed_thresholds", tuple(int(t) for t in self.fixed_thresholds))

    def to_dict(self) -> dict:
        return {
            "lambda": self.lam,
            "target_metric": self.target_metric.value,
            "smoothing": self.smoothing,
            "max_sweeps": self.max_sweeps,
            "mode": self.mode,
            "fixed_thresholds": None if self.fixed_thresholds is None else list(self.fixed_thresholds),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "DebiaserConfig":
        d = dict(d)
        if "lambda" in d:
            d["lam"] = d.pop("lambda")
        if d.get("fixed_thresholds") is not None:
            d["fixed_thresholds"] = tuple(d["fixed_thresholds"])
        return cls(**d)


@dataclass(frozen=True)
class DebiasDecision:
    policy: ThresholdPolicy
    predicted_bias: float
    predicted_error: float
    objective: float


def _check_table(table: np.ndarray) -> np.ndarray:
    t = np.asarray(table, dtype=float)
    if t.ndim != 3 or t.shape[2] != 2:
        raise ValidationError(f"table must have shape (g, K, 2), got {t.shape}")
    if np.any(t < 0) or not np.all(np.isfinite(t)):
        raise ValidationError("table entries must be finite and nonnegative")
    empty = [a for a in range(t.shape[0]) if t[a].sum() <= 0]
    if empty:
        raise MissingGroup(f"no mass for group(s) {empty}")
    return t / t.sum()


def _suffix_sums(table: np.ndarray) -> np.ndarray:
    """``S[a, tau, y] = sum_{x >= tau} P(a, x, y)`` with ``S[a, K, y] = 0``."""
    g, k, _ = table.shape
    s = np.zeros((g, k + 1, 2))
    s[:, :k] = np.cumsum(table[:, ::-1], axis=1)[:, ::-1]
    return s


def _evaluate(suffix: np.ndarray, taus: np.ndarray, kind: MetricKind, lam: float):
    """Bias, error and objective for each row of ``taus`` (shape ``(n, g)``)."""
    g = suffix.shape[0]
    acc = suffix[np.arange(g)[None, :], taus]  # (n, g, 2): accepted mass per label
    tot = suffix[:, 0][None]  # (1, g, 2)
    masses = np.stack([tot - acc, acc], axis=-1)  # (n, g, y, y_hat)
    masses = np.maximum(masses, 0.0)
    bias, defined = metric_values(kind, masses)
    error = (masses[..., 1, 0] + masses[..., 0, 1]).sum(axis=-1)
    obj = np.where(defined, lam * bias + (1.0 - lam) * error, np.inf)
    return bias, error, obj


def _decision(suffix, taus, kind, lam) -> DebiasDecision:
    bias, error, _ = _evaluate(suffix, taus[None, :], kind, lam)
    b, e = float(bias[0]), float(error[0])
    return DebiasDecision(ThresholdPolicy(tuple(int(t) for t in taus)), b, e, lam * b + (1.0 - lam) * e)


def _exhaustive(suffix: np.ndarray, kind: MetricKind, lam: float) -> np.ndarray:
    g, k1 = suffix.shape[0], suffix.shape[1]
    total = k1**g
    best_obj, best = np.inf, None
    for start in range(0, total, _CHUNK):
        idx = np.arange(start, min(start + _CHUNK, total))
        taus = np.stack(np.unravel_index(idx, (k1,) * g), axis=1)  # lexicographic order
        _, _, obj = _evaluate(suffix, taus, kind, lam)
        i = int(np.argmin(obj))
        if obj[i] < best_obj - TIE_TOL:
            cands = np.flatnonzero(obj <= obj[i] + TIE_TOL)
            best_obj, best = float(obj[i]), taus[cands[0]]
    if best is None:
        raise NoFeasiblePolicy(f"{kind.value} is undefined for every threshold policy")
    return best


def _descend(suffix: np.ndarray, kind: MetricKind, lam: float, taus: np.ndarray, max_sweeps: int):
    g, k1 = suffix.shape[0], suffix.shape[1]
    current = float(_evaluate(suffix, taus[None, :], kind, lam)[2][0])
    for _ in range(max_sweeps):
        moved = False
        for a in range(g):
            cand = np.repeat(taus[None, :], k1, axis=0)
            cand[:, a] = np.arange(k1)
            _, _, obj = _evaluate(suffix, cand, kind, lam)
            i = int(np.argmin(obj))
            if obj[i] < current - TIE_TOL:
                j = int(np.flatnonzero(obj <= obj[i] + TIE_TOL)[0])
                taus, current, moved = cand[j], float(obj[j]), True
        if not moved:
            break
    return taus, current


def _coordinate_descent(suffix: np.ndarray, kind: MetricKind, lam: float, max_sweeps: int) -> np.ndarray:
    # Starts from all-zeros, then restarts from every constant vector (tau, ..., tau).
    # A single start stalls in poor local optima and, for PVP, cannot leave
    # the accept-all policy at all since the reject cell is then empty in every group.
    g, k1 = suffix.shape[0], suffix.shape[1]
    best, best_obj = None, np.inf
    for tau in range(k1):
        taus, obj = _descend(suffix, kind, lam, np.full(g, tau, dtype=np.int64), max_sweeps)
        if obj < best_obj - TIE_TOL or (
            best is not None and obj <= best_obj + TIE_TOL and tuple(taus) < tuple(best)
        ):
            best, best_obj = taus, min(obj, best_obj)
    if best is None:
        raise NoFeasiblePolicy(f"{kind.value} is undefined along every coordinate move")
    return best


def post_process(empirical_table: np.ndarray, cfg: DebiaserConfig) -> DebiasDecision:
    """Best threshold policy for the ``(g, K, 2)`` table of ``P(a, x, y)`` estimates.

    Searches all ``(K + 1)^g`` policies when that is at most 10^6, otherwise
    runs coordinate descent from the all-zero (accept-all) policy and from
    each constant threshold vector, keeping the best result. Ties go to
    the lexicographically smallest threshold vector.
    """
    table = _check_table(empirical_table)
    suffix = _suffix_sums(table)
    g, k = table.shape[:2]
    if (k + 1) ** g <= EXHAUSTIVE_LIMIT:
        taus = _exhaustive(suffix, cfg.target_metric, cfg.lam)
    else:
        taus = _coordinate_descent(suffix, cfg.target_metric, cfg.lam, cfg.max_sweeps)
    return _decision(suffix, taus, cfg.target_metric, cfg.lam)


def coordinate_descent(empirical_table: np.ndarray, cfg: DebiaserConfig) -> DebiasDecision:
    """Coordinate-descent search regardless of the grid size."""
    suffix = _suffix_sums(_check_table(empirical_table))
    taus = _coordinate_descent(suffix, cfg.target_metric, cfg.lam, cfg.max_sweeps)
    return _decision(suffix, taus, cfg.target_metric, cfg.lam)


def oracle_debias(spec: PopulationSpec, cfg: DebiaserConfig) -> DebiasDecision:
    """The same search run on the exact population law."""
    return post_process(spec.joint_masses(), cfg)


def evaluate_policy(table: np.ndarray, policy: ThresholdPolicy, cfg: DebiaserConfig) -> DebiasDecision:
    """Bias, error and objective of a given policy on ``table``; bias is NaN when undefined."""
    t = _check_table(table)
    policy.validate(t.shape[0], t.shape[1])
    return _decision(_suffix_sums(t), np.asarray(policy.thresholds), cfg.target_metric, cfg.lam)


class TableSmoother:
    """Exponential smoothing of successive empirical tables; single owner."""

    def __init__(self, smoothing: float):
        self.smoothing = smoothing
        self.state: np.ndarray | None = None

    def update(self, table: np.ndarray) -> np.ndarray:
        table = np.asarray(table, dtype=float)
        if self.state is None or self.state.shape != table.shape or self.smoothing == 0.0:
            self.state = table
        else:
            self.state = self.smoothing * self.state + (1.0 - self.smoothing) * table
        return self.state


def reweigh(data: Dataset) -> Dataset:
    """Attach weights ``P(a) P(y) / P(a, y)`` so that group and label become independent."""
    g = data.num_groups or int(data.a.max()) + 1
    counts = np.zeros((g, 2))
    np.add.at(counts, (data.a, data.y), 1.0)
    empty = [(a, y) for a in range(g) for y in range(2) if counts[a, y] == 0]
    if empty:
        raise EmptyCell(f"empty (group, label) cell(s): {empty}")
    p = counts / counts.sum()
    cell_w = p.sum(axis=1, keepdims=True) * p.sum(axis=0, keepdims=True) / p
    return replace(data, weights=cell_w[data.a, data.y])
