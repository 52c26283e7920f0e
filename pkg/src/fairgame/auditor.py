"""PAC auditing of group-fairness metrics, anytime auditing and TV-ball certificates.

The auditor treats the classifier as a black box: it only ever calls
``classifier.predict(x, a)`` on arrays of sampled points. Samples come from the
population either i.i.d. (``UNIFORM``) or by a uniform pilot followed by
group-conditional top-ups (``STRATIFIED``).

Accuracy comes from per-cell Hoeffding bounds combined by a union bound over
the cells the metric conditions on. Sampling stops once every cell holds the
required count. The stopping rule looks only at cell membership, never at the
outcome being averaged inside a cell, so the in-cell outcomes stay i.i.d.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Any

import numpy as np

from .errors import AuditAborted, RadiusDegenerate, ValidationError
from .metrics import JointTable, MetricKind, MetricValue, exact_metric, metric_from_counts
from .population import PopulationSpec, draw, draw_group

BUDGET_CAP_FACTOR = 50
MIN_MEANINGFUL_MASS = 1e-9


class Sampler(str, Enum):
    UNIFORM = "UNIFORM"
    STRATIFIED = "STRATIFIED"


@dataclass(frozen=True)
class AuditorConfig:
    epsilon: float = 0.05
    delta: float = 0.1
    sampler: Sampler = Sampler.UNIFORM
    metric: MetricKind = MetricKind.SP
    dp_denominator_floor: float = 0.05
    pilot_per_group: int = 50
    min_cell: int = 10

    def __post_init__(self) -> None:
        object.__setattr__(self, "sampler", Sampler(self.sampler))
        object.__setattr__(self, "metric", MetricKind.parse(self.metric))
        for name in ("epsilon", "delta", "dp_denominator_floor"):
            v = getattr(self, name)
            if not 0.0 < v < 1.0:
                raise ValidationError(f"{name} must lie in (0, 1), got {v!r}")
        if self.pilot_per_group < 1:
            raise ValidationError("pilot_per_group must be at least 1")

    def to_dict(self) -> dict:
        return {
            "epsilon": self.epsilon,
            "delta": self.delta,
            "sampler": self.sampler.value,
            "metric": self.metric.value,
            "dp_denominator_floor": self.dp_denominator_floor,
            "pilot_per_group": self.pilot_per_group,
            "min_cell": self.min_cell,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "AuditorConfig":
        return cls(**d)


# -- sample complexity ------------------------------------------------------


def hoeffding_sample_size(epsilon: float, delta: float) -> int:
    """Samples for a two-sided ``epsilon`` interval on one [0, 1] mean: ``ceil(ln(2/delta) / (2 eps^2))``."""
    return math.ceil(math.log(2.0 / delta) / (2.0 * epsilon**2))


def num_cells(metric: MetricKind, num_groups: int) -> int:
    """How many conditioning cells the metric's estimate is built from."""
    return 2 * num_groups if MetricKind(metric) is MetricKind.PVP else num_groups


def per_cell_tolerance(cfg: AuditorConfig) -> float:
    """Accuracy each conditional rate needs for the metric to be ``epsilon``-accurate.

    Spreads move by at most twice the worst rate error. For the ratio
    ``lo / hi`` with ``lo <= hi`` and ``hi >= rho``, rate errors of ``eta``
    move it by at most ``2 eta / (hi - eta)``, which is ``<= epsilon`` for
    ``eta = epsilon * rho / (2 + epsilon)``.
    """
    if cfg.metric in (MetricKind.DP_RATIO, MetricKind.SELECTION_RATE_RATIO):
        return cfg.epsilon * cfg.dp_denominator_floor / (2.0 + cfg.epsilon)
    return cfg.epsilon / 2.0


def per_cell_count(cfg: AuditorConfig, num_groups: int, delta: float | None = None) -> int:
    """In-cell samples so that every cell rate is within tolerance with total failure ``delta``."""
    delta = cfg.delta if delta is None else delta
    cells = num_cells(cfg.metric, num_groups)
    tol = per_cell_tolerance(cfg)
    return math.ceil(math.log(4.0 * cells / delta) / (2.0 * tol**2))


def sample_complexity(
    cfg: AuditorConfig, num_groups: int, min_mass: float = 1.0, delta: float | None = None
) -> int:
    """Expected uniform draws ``ceil(n_cell / min_mass)`` to fill the rarest cell.

    With the default ``min_mass=1`` this is the per-cell count itself.
    """
    if not 0.0 < min_mass <= 1.0:
        raise ValidationError("min_mass must lie in (0, 1]")
    return math.ceil(per_cell_count(cfg, num_groups, delta) / min_mass)


def anytime_delta(delta: float, t: int) -> float:
    """Per-round failure budget ``6 delta / (pi^2 t^2)``; sums to ``delta`` over t >= 1."""
    if t < 1:
        raise ValidationError("rounds are numbered from 1")
    return 6.0 * delta / (math.pi**2 * t * t)


# -- audit ------------------------------------------------------------------


@dataclass(frozen=True)
class AuditEstimate:
    metric: MetricKind
    estimate: float
    ci_low: float
    ci_high: float
    samples_used: int
    round: int = 0
    delta_spent: float = 0.0
    # (g, K, 2) estimated masses P(a, x, y); feeds the debiaser, never serialised
    table: np.ndarray | None = field(default=None, repr=False, compare=False)

    CSV_COLUMNS = ("t", "metric", "estimate", "ci_low", "ci_high", "samples", "delta_spent")

    def csv_row(self) -> dict:
        return {
            "t": self.round,
            "metric": self.metric.value,
            "estimate": repr(self.estimate),
            "ci_low": repr(self.ci_low),
            "ci_high": repr(self.ci_high),
            "samples": self.samples_used,
            "delta_spent": repr(self.delta_spent),
        }

    def to_dict(self) -> dict:
        return {
            "t": self.round,
            "metric": self.metric.value,
            "estimate": self.estimate,
            "ci_low": self.ci_low,
            "ci_high": self.ci_high,
            "samples": self.samples_used,
            "delta_spent": self.delta_spent,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "AuditEstimate":
        return cls(
            metric=MetricKind.parse(d["metric"]),
            estimate=float(d["estimate"]),
            ci_low=float(d["ci_low"]),
            ci_high=float(d["ci_high"]),
            samples_used=int(d["samples"]),
            round=int(d["t"]),
            delta_spent=float(d["delta_spent"]),
        )


def _cell_index(metric: MetricKind, a: np.ndarray, y: np.ndarray, yhat: np.ndarray) -> np.ndarray:
    """Conditioning cell of each sample, or -1 when it conditions on nothing."""
    if metric is MetricKind.EO:
        return np.where(y == 1, a, -1)
    if metric is MetricKind.PVP:
        return 2 * a + yhat
    return a


class _Pool:
    """Accumulates drawn samples and their black-box predictions."""

    def __init__(self, metric: MetricKind, num_groups: int, num_score_levels: int):
        self.metric = metric
        self.g = num_groups
        self.k = num_score_levels
        self.cell_counts = np.zeros(num_cells(metric, num_groups), dtype=np.int64)
        self.abc = np.zeros((num_groups, 2, 2), dtype=np.int64)  # (a, y, y_hat)
        self.axy = np.zeros((num_groups, num_score_levels, 2), dtype=np.int64)
        self.draws = 0

    def add(self, data, classifier: Any) -> None:
        yhat = np.asarray(classifier.predict(data.x, data.a), dtype=np.int64)
        cells = _cell_index(self.metric, data.a, data.y, yhat)
        self.cell_counts += np.bincount(cells[cells >= 0], minlength=len(self.cell_counts))
        self.abc += np.bincount((data.a * 2 + data.y) * 2 + yhat, minlength=self.abc.size).reshape(self.abc.shape)
        self.axy += np.bincount((data.a * self.k + data.x) * 2 + data.y, minlength=self.axy.size).reshape(
            self.axy.shape
        )
        self.draws += len(data)

    def group_counts(self) -> np.ndarray:
        return self.abc.sum(axis=(1, 2))


MAX_BATCH = 1 << 21


def _topup_size(have: int, need: int, rate: float, floor: int = 64) -> int:
    return min(MAX_BATCH, max(floor, math.ceil(1.05 * (need - have) / max(rate, 1e-6))))


def _collect_uniform(pool, classifier, spec, rng, n_cell, cap, t) -> None:
    w_min = float(spec.group_weights.min())
    batch = min(MAX_BATCH, max(1, math.ceil(n_cell / max(w_min, 1e-12))))
    while True:
        take = min(batch, cap - pool.draws)
        if take <= 0:
            raise AuditAborted(
                f"cells {pool.cell_counts.tolist()} short of {n_cell} after {pool.draws} draws"
            )
        pool.add(draw(spec, take, rng, t), classifier)
        if pool.cell_counts.min() >= n_cell:
            return
        worst = int(np.argmin(pool.cell_counts))
        rate = pool.cell_counts[worst] / pool.draws
        batch = _topup_size(int(pool.cell_counts[worst]), n_cell, rate)


def _collect_stratified(pool, classifier, spec, rng, n_cell, cap, pilot, t) -> np.ndarray:
    """Fill every cell; returns the pilot's group counts (the only unbiased weight estimate)."""
    # pilot: uniform draws until every group holds `pilot` samples
    while pool.group_counts().min() < pilot:
        gc = pool.group_counts()
        w_hat = np.maximum(gc, 1) / max(pool.draws, 1)
        need = max(math.ceil((pilot - gc[i]) / w_hat[i]) for i in range(pool.g) if gc[i] < pilot)
        take = min(max(need, pilot), MAX_BATCH, cap - pool.draws)
        if take <= 0:
            raise AuditAborted(f"pilot could not reach {pilot} samples per group within {cap} draws")
        pool.add(draw(spec, take, rng, t), classifier)
    pilot_counts = pool.group_counts().astype(float)
    # allocation: per-group draws sized by the group's estimated cell rate
    per_group = num_cells(pool.metric, pool.g) // pool.g
    while pool.cell_counts.min() < n_cell:
        gc = pool.group_counts()
        for a in range(pool.g):
            cells = pool.cell_counts[a * per_group:(a + 1) * per_group]
            if cells.min() >= n_cell:
                continue
            rate = (cells.min() + 1.0) / (gc[a] + 2.0)
            take = min(_topup_size(int(cells.min()), n_cell, rate, floor=16), cap - pool.draws)
            if take <= 0:
                raise AuditAborted(
                    f"cells {pool.cell_counts.tolist()} short of {n_cell} after {pool.draws} draws"
                )
            pool.add(draw_group(spec, a, take, rng, t), classifier)
            gc = pool.group_counts()
    return pilot_counts


def estimate(cfg: AuditorConfig, classifier: Any, data) -> MetricValue:
    """Estimator half of the auditor: plug-in metric on an already drawn dataset."""
    pool = _Pool(cfg.metric, data.num_groups, data.num_score_levels)
    pool.add(data, classifier)
    return metric_from_counts(cfg.metric, pool.abc, cfg.min_cell)


def _estimate_from_pool(cfg, pool, group_weights, delta_t, t) -> AuditEstimate:
    value = metric_from_counts(cfg.metric, pool.abc, cfg.min_cell).value
    gc = pool.group_counts()
    cond = pool.axy / np.maximum(gc, 1)[:, None, None]
    table = group_weights[:, None, None] * cond
    return AuditEstimate(
        metric=cfg.metric,
        estimate=value,
        ci_low=max(0.0, value - cfg.epsilon),
        ci_high=min(1.0, value + cfg.epsilon),
        samples_used=pool.draws,
        round=t,
        delta_spent=delta_t,
        table=table / table.sum(),
    )


def audit_once(
    cfg: AuditorConfig,
    classifier: Any,
    spec: PopulationSpec,
    rng: np.random.Generator,
    t: int = 0,
    delta: float | None = None,
) -> AuditEstimate:
    """One PAC audit: ``|estimate - true metric| <= epsilon`` with probability ``>= 1 - delta``.

    ``classifier`` is anything with a vectorised ``predict(x, a)``.
    """
    delta = cfg.delta if delta is None else delta
    g = spec.num_groups
    n_cell = per_cell_count(cfg, g, delta)
    nominal = sample_complexity(cfg, g, max(float(spec.group_weights.min()), 1e-12), delta)
    cap = BUDGET_CAP_FACTOR * nominal
    pool = _Pool(cfg.metric, g, spec.num_score_levels)
    if cfg.sampler is Sampler.UNIFORM:
        _collect_uniform(pool, classifier, spec, rng, n_cell, cap, t)
        weights = pool.group_counts() / pool.draws
    else:
        pilot_counts = _collect_stratified(pool, classifier, spec, rng, n_cell, cap, cfg.pilot_per_group, t)
        weights = pilot_counts / pilot_counts.sum()
    return _estimate_from_pool(cfg, pool, weights, delta, t)


@dataclass
class AnytimeAuditorState:
    """Single-owner state of an anytime auditor; one instance per game loop."""

    config: AuditorConfig
    total_delta: float | None = None
    round_counter: int = 0
    delta_spent_total: float = 0.0

    def __post_init__(self) -> None:
        if self.total_delta is None:
            self.total_delta = self.config.delta
        if not 0.0 < self.total_delta < 1.0:
            raise ValidationError("total_delta must lie in (0, 1)")


def audit_anytime(
    state: AnytimeAuditorState,
    classifier: Any,
    spec: PopulationSpec,
    rng: np.random.Generator,
    metric: MetricKind | None = None,
) -> AuditEstimate:
    """Audit the next round with budget ``6 delta / (pi^2 t^2)`` so accuracy holds for all rounds at once."""
    state.round_counter += 1
    t = state.round_counter
    delta_t = anytime_delta(state.total_delta, t)
    cfg = state.config
    if metric is not None and MetricKind(metric) is not cfg.metric:
        cfg = AuditorConfig(**{**cfg.to_dict(), "metric": MetricKind(metric)})
    est = audit_once(cfg, classifier, spec, rng, t=t, delta=delta_t)
    state.delta_spent_total += delta_t
    return est


# -- manipulation-proof certificate ----------------------------------------


def tv_distance(p: JointTable | np.ndarray, q: JointTable | np.ndarray) -> float:
    """Total variation ``0.5 * sum |p - q|`` over all cells."""
    pm = p.masses if isinstance(p, JointTable) else np.asarray(p, dtype=float)
    qm = q.masses if isinstance(q, JointTable) else np.asarray(q, dtype=float)
    if pm.shape != qm.shape:
        raise ValidationError(f"table shapes differ: {pm.shape} vs {qm.shape}")
    return 0.5 * float(np.abs(pm - qm).sum())


def certificate_radius(epsilon: float, w_min: float) -> float:
    return epsilon * w_min / 4.0


@dataclass(frozen=True)
class ManipulationCertificate:
    radius: float
    reference_table: JointTable
    epsilon: float
    metric: MetricKind
    heuristic: bool = False
    w_min: float = 0.0

    def to_dict(self) -> dict:
        return {
            "radius": self.radius,
            "epsilon": self.epsilon,
            "metric": self.metric.value,
            "heuristic": self.heuristic,
            "w_min": self.w_min,
            "reference_table": self.reference_table.to_dict(),
        }


def reference_table(classifier: Any, spec: PopulationSpec) -> JointTable:
    """Exact ``P(a, y, y_hat)`` obtained by querying ``classifier`` on every grid cell."""
    g, k = spec.num_groups, spec.num_score_levels
    a, x = np.meshgrid(np.arange(g), np.arange(k), indexing="ij")
    accept = np.asarray(classifier.predict(x.ravel(), a.ravel()), dtype=float).reshape(g, k)
    cells = spec.joint_masses()
    masses = np.empty((g, 2, 2))
    masses[:, :, 1] = np.einsum("gk,gky->gy", accept, cells)
    masses[:, :, 0] = np.einsum("gk,gky->gy", 1.0 - accept, cells)
    return JointTable(masses)


def certificate_for_table(table: JointTable, epsilon: float, metric: MetricKind) -> ManipulationCertificate:
    """Certificate around ``table``.

    ``w_min`` is the smallest mass among the events SP and EO divide by
    (group masses and positive-label masses), which makes every rate move by
    at most ``r / (w_min - r)`` inside the ball and both metrics by less than
    ``epsilon``.
    """
    metric = MetricKind.parse(metric)
    m = table.masses
    w_min = float(min(m.sum(axis=(1, 2)).min(), m[:, 1, :].sum(axis=-1).min()))
    if w_min < 4 * MIN_MEANINGFUL_MASS:
        raise RadiusDegenerate(f"smallest conditioning mass {w_min!r} is too small to certify")
    r = certificate_radius(epsilon, w_min)
    if np.any(m.sum(axis=(1, 2)) < 2 * r):
        raise RadiusDegenerate("a group mass is below twice the candidate radius")
    heuristic = metric not in (MetricKind.SP, MetricKind.EO)
    return ManipulationCertificate(r, table, epsilon, metric, heuristic, w_min)


def manipulation_certificate(classifier: Any, spec: PopulationSpec, cfg: AuditorConfig) -> ManipulationCertificate:
    return certificate_for_table(reference_table(classifier, spec), cfg.epsilon, cfg.metric)


def is_within(cert: ManipulationCertificate, candidate: JointTable) -> bool:
    return tv_distance(candidate, cert.reference_table) <= cert.radius * (1.0 + 1e-9)


def certified_shift(cert: ManipulationCertificate, candidate: JointTable) -> float:
    """Observed metric shift of ``candidate`` relative to the reference."""
    return abs(exact_metric(cert.metric, candidate).value - exact_metric(cert.metric, cert.reference_table).value)
