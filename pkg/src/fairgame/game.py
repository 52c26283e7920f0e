"""The audit/debias feedback loop and its value and regret accounting.

Round ``t`` runs in this order:

1. the population ``D_t`` is read off the drift schedule;
2. on the retraining cadence a fresh logistic model is fit and deployed;
3. the deployed classifier is audited with the anytime auditor;
4. exact bias, error and the oracle's bias are computed for the record;
5. the debiaser turns the audit into next round's deployed policy.

Under ``mode="oracle"`` and ``mode="fixed"`` the debiaser needs no audit,
so its policy is deployed in the same round.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Any

import numpy as np

from .auditor import AnytimeAuditorState, AuditorConfig, audit_anytime, certificate_for_table
from .debiaser import DebiasDecision, DebiaserConfig, TableSmoother, oracle_debias, post_process, reweigh
from .errors import (
    AuditAborted,
    GameAborted,
    InsufficientSupport,
    NoFeasiblePolicy,
    RadiusDegenerate,
    UndefinedConditional,
    ValidationError,
)
from .metrics import MetricKind, exact_metric
from .model import Classifier, ThresholdPolicy, TrainConfig, prediction_distribution, to_threshold_policy, train_erm
from .population import DriftSchedule, draw, spec_at

TRACE_COLUMNS = (
    "t",
    "metric",
    "exact_bias",
    "estimate",
    "ci_low",
    "ci_high",
    "samples",
    "exact_error",
    "thresholds",
    "oracle_bias",
    "cert_radius",
)

BASELINE_NOTE = "same threshold-policy class with exact knowledge of D_t"


@dataclass(frozen=True)
class GameConfig:
    horizon: int
    schedule: DriftSchedule
    metric_schedule: tuple[tuple[int, MetricKind], ...] = ((1, MetricKind.SP),)
    retrain_every: int = 10**9
    n_train: int = 2000
    auditor: AuditorConfig = field(default_factory=AuditorConfig)
    debiaser: DebiaserConfig = field(default_factory=DebiaserConfig)
    seed: int = 0
    train: TrainConfig = field(default_factory=TrainConfig)
    reweigh: bool = False

    def __post_init__(self) -> None:
        sched = tuple((int(t), MetricKind.parse(m)) for t, m in self.metric_schedule)
        object.__setattr__(self, "metric_schedule", sched)
        if int(self.horizon) != self.horizon or self.horizon < 1:
            raise ValidationError("horizon must be a positive integer")
        if not sched or sched[0][0] != 1:
            raise ValidationError("metric_schedule must start at t = 1")
        if any(b[0] <= a[0] for a, b in zip(sched, sched[1:])):
            raise ValidationError("metric_schedule times must be strictly increasing")
        if self.retrain_every < 1:
            raise ValidationError("retrain_every must be positive")
        if self.n_train < 1:
            raise ValidationError("n_train must be positive")

    def metric_at(self, t: int) -> MetricKind:
        active = self.metric_schedule[0][1]
        for start, kind in self.metric_schedule:
            if start <= t:
                active = kind
        return active

    def to_dict(self) -> dict:
        return {
            "horizon": self.horizon,
            "schedule": self.schedule.to_dict(),
            "metric_schedule": [{"start": t, "metric": m.value} for t, m in self.metric_schedule],
            "retrain_every": self.retrain_every,
            "n_train": self.n_train,
            "auditor": self.auditor.to_dict(),
            "debiaser": self.debiaser.to_dict(),
            "seed": self.seed,
            "train": {
                "learning_rate": self.train.learning_rate,
                "epochs": self.train.epochs,
                "l2_penalty": self.train.l2_penalty,
            },
            "reweigh": self.reweigh,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "GameConfig":
        kwargs: dict[str, Any] = {
            "horizon": d["horizon"],
            "schedule": DriftSchedule.from_dict(d["schedule"]),
        }
        if "metric_schedule" in d:
            kwargs["metric_schedule"] = tuple((e["start"], e["metric"]) for e in d["metric_schedule"])
        for key in ("retrain_every", "n_train", "seed", "reweigh"):
            if key in d:
                kwargs[key] = d[key]
        if "auditor" in d:
            kwargs["auditor"] = AuditorConfig.from_dict(d["auditor"])
        if "debiaser" in d:
            kwargs["debiaser"] = DebiaserConfig.from_dict(d["debiaser"])
        if "train" in d:
            kwargs["train"] = TrainConfig(**d["train"])
        return cls(**kwargs)


@dataclass(frozen=True)
class RoundRecord:
    t: int
    metric: MetricKind
    exact_bias: float
    estimate: float
    ci_low: float
    ci_high: float
    samples_used: int
    exact_error: float
    policy: ThresholdPolicy | None
    oracle_bias: float
    certificate_radius: float
    delta_spent: float = 0.0
    # decision taken after this round's audit (deployed at t + 1)
    decision: DebiasDecision | None = field(default=None, compare=False, repr=False)
    audit_table: np.ndarray | None = field(default=None, compare=False, repr=False)

    def csv_row(self) -> dict:
        return {
            "t": self.t,
            "metric": self.metric.value,
            "exact_bias": repr(self.exact_bias),
            "estimate": repr(self.estimate),
            "ci_low": repr(self.ci_low),
            "ci_high": repr(self.ci_high),
            "samples": self.samples_used,
            "exact_error": repr(self.exact_error),
            "thresholds": format_thresholds(self.policy),
            "oracle_bias": repr(self.oracle_bias),
            "cert_radius": repr(self.certificate_radius),
        }


@dataclass
class GameTrace:
    rounds: list[RoundRecord]
    v_t_estimated: float = math.nan
    v_t_exact: float = math.nan
    regret_estimated: float = math.nan
    regret_exact: float = math.nan
    anytime_violations: int = 0
    epsilon: float = math.nan

    def finalize(self) -> "GameTrace":
        if self.rounds:
            self.v_t_estimated, self.v_t_exact = value(self)
            self.regret_estimated, self.regret_exact = regret(self)
            self.anytime_violations = sum(
                1 for r in self.rounds if not (r.ci_low <= r.exact_bias <= r.ci_high)
            )
        return self

    def policy_stable_from(self) -> int | None:
        """Earliest ``t*`` such that the deployed policy is the same for every ``t >= t*``."""
        if not self.rounds:
            return None
        last = self.rounds[-1].policy
        t_star = self.rounds[-1].t
        for r in reversed(self.rounds):
            if r.policy != last:
                break
            t_star = r.t
        return t_star


def format_thresholds(policy: ThresholdPolicy | None) -> str:
    return "-" if policy is None else ";".join(str(t) for t in policy.thresholds)


def parse_thresholds(text: str) -> ThresholdPolicy | None:
    return None if text == "-" else ThresholdPolicy(tuple(int(t) for t in text.split(";")))


def value(trace: GameTrace) -> tuple[float, float]:
    """Average estimated and exact bias over the horizon."""
    if not trace.rounds:
        raise ValidationError("empty trace")
    est = float(np.mean([r.estimate for r in trace.rounds]))
    exact = float(np.mean([r.exact_bias for r in trace.rounds]))
    return est, exact


def regret(trace: GameTrace) -> tuple[float, float]:
    """Deployed average bias minus the oracle's, as-written (estimated) and exact."""
    est, exact = value(trace)
    base = float(np.mean([r.oracle_bias for r in trace.rounds]))
    return est - base, exact - base


def _error_rate(table) -> float:
    m = table.masses
    return float(m[:, 1, 0].sum() + m[:, 0, 1].sum())


def _radius(table, epsilon: float, metric: MetricKind) -> float:
    try:
        return certificate_for_table(table, epsilon, metric).radius
    except RadiusDegenerate:
        return math.nan


def run(cfg: GameConfig) -> GameTrace:
    """Play ``cfg.horizon`` rounds; deterministic given ``cfg.seed``."""
    train_ss, audit_ss = np.random.SeedSequence(cfg.seed).spawn(2)
    train_rng = np.random.default_rng(train_ss)
    audit_rng = np.random.default_rng(audit_ss)
    state = AnytimeAuditorState(cfg.auditor)
    smoother = TableSmoother(cfg.debiaser.smoothing)
    trace = GameTrace([], epsilon=cfg.auditor.epsilon)
    deployed: Classifier | None = None
    k = cfg.schedule.keyframes[0][1].num_score_levels

    for t in range(1, cfg.horizon + 1):
        spec = spec_at(cfg.schedule, t)
        metric = cfg.metric_at(t)
        dcfg = replace(cfg.debiaser, target_metric=metric)
        try:
            if (t - 1) % cfg.retrain_every == 0:
                data = draw(spec, cfg.n_train, train_rng, t)
                if cfg.reweigh:
                    data = reweigh(data)
                deployed = Classifier(train_erm(data, cfg.train, train_rng))
            oracle = oracle_debias(spec, dcfg)
            if dcfg.mode == "oracle":
                deployed = Classifier(oracle.policy)
            elif dcfg.mode == "fixed":
                deployed = Classifier(ThresholdPolicy(dcfg.fixed_thresholds))
            est = audit_anytime(state, deployed, spec, audit_rng, metric=metric)
            table = prediction_distribution(deployed, spec)
            exact = exact_metric(metric, table).value
            decision = None
            if dcfg.mode == "audit":
                decision = post_process(smoother.update(est.table), dcfg)
        except (AuditAborted, NoFeasiblePolicy, UndefinedConditional, InsufficientSupport) as exc:
            trace.finalize()
            raise GameAborted(f"round {t}: {type(exc).__name__}: {exc}", trace, exc) from exc

        trace.rounds.append(
            RoundRecord(
                t=t,
                metric=metric,
                exact_bias=exact,
                estimate=est.estimate,
                ci_low=est.ci_low,
                ci_high=est.ci_high,
                samples_used=est.samples_used,
                exact_error=_error_rate(table),
                policy=to_threshold_policy(deployed, k),
                oracle_bias=oracle.predicted_bias,
                certificate_radius=_radius(table, cfg.auditor.epsilon, metric),
                delta_spent=est.delta_spent,
                decision=decision,
                audit_table=est.table,
            )
        )
        if decision is not None:
            deployed = Classifier(decision.policy)
    return trace.finalize()


# -- files --------------------------------------------------------------------


def write_trace_csv(trace: GameTrace, path: str | Path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=TRACE_COLUMNS, lineterminator="\n")
        writer.writeheader()
        for r in trace.rounds:
            writer.writerow(r.csv_row())


def read_trace_csv(path: str | Path) -> list[dict]:
    rows = []
    with open(path, newline="") as fh:
        for raw in csv.DictReader(fh):
            rows.append(
                {
                    "t": int(raw["t"]),
                    "metric": MetricKind.parse(raw["metric"]),
                    "exact_bias": float(raw["exact_bias"]),
                    "estimate": float(raw["estimate"]),
                    "ci_low": float(raw["ci_low"]),
                    "ci_high": float(raw["ci_high"]),
                    "samples": int(raw["samples"]),
                    "exact_error": float(raw["exact_error"]),
                    "thresholds": parse_thresholds(raw["thresholds"]),
                    "oracle_bias": float(raw["oracle_bias"]),
                    "cert_radius": float(raw["cert_radius"]),
                }
            )
    return rows


def summary_dict(trace: GameTrace, cfg: GameConfig, aborted: str | None = None) -> dict:
    return {
        "seed": cfg.seed,
        "rounds": len(trace.rounds),
        "v_t_estimated": trace.v_t_estimated,
        "v_t_exact": trace.v_t_exact,
        "regret_estimated": trace.regret_estimated,
        "regret_exact": trace.regret_exact,
        "anytime_violations": trace.anytime_violations,
        "policy_stable_from": trace.policy_stable_from(),
        "baseline": BASELINE_NOTE,
        "aborted": aborted,
        "config": cfg.to_dict(),
    }


def write_summary(summary: dict, path: str | Path) -> None:
    Path(path).write_text(json.dumps(summary, indent=2, sort_keys=True, allow_nan=True) + "\n")


def read_summary(path: str | Path) -> dict:
    return json.loads(Path(path).read_text())
