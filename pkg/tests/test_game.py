import csv
import json
import math

import pytest

from builders import drifting_schedule, exact_objective, grid_policies, skewed_spec, uniform_spec
from fairgame.auditor import AuditorConfig
from fairgame.debiaser import DebiaserConfig
from fairgame.errors import GameAborted, ValidationError
from fairgame.game import (
    GameConfig,
    GameTrace,
    RoundRecord,
    read_summary,
    read_trace_csv,
    regret,
    run,
    summary_dict,
    value,
    write_summary,
    write_trace_csv,
)
from fairgame.metrics import MetricKind
from fairgame.model import ThresholdPolicy
from fairgame.population import DriftSchedule


def static_cfg(**kw):
    base = dict(horizon=10, schedule=DriftSchedule.static(skewed_spec()), auditor=AuditorConfig(0.05, 0.1))
    base.update(kw)
    return GameConfig(**base)


def record(t, bias, est=None, oracle=0.0):
    est = bias if est is None else est
    return RoundRecord(t, MetricKind.SP, bias, est, max(0.0, est - 0.05), est + 0.05, 100, 0.2, None, oracle, 0.01)


def test_value_trivial_cases():
    assert value(GameTrace([record(t, 0.0) for t in range(1, 6)])) == (0.0, 0.0)
    v = value(GameTrace([record(t, 0.3) for t in range(1, 6)]))
    assert v == pytest.approx((0.3, 0.3), abs=1e-15)
    with pytest.raises(ValidationError):
        value(GameTrace([]))


def test_regret_hand_computed():
    tr = GameTrace([record(1, 0.4, 0.35, 0.1), record(2, 0.2, 0.25, 0.1)])
    est, exact = regret(tr)
    assert est == pytest.approx(0.2)
    assert exact == pytest.approx(0.2)


@pytest.mark.parametrize("seed", range(3))
def test_convergence_on_static_spec(seed):
    tr = run(static_cfg(seed=seed))
    assert tr.rounds[0].exact_bias >= 0.25
    assert all(r.exact_bias <= 1 / 5 for r in tr.rounds if r.t >= 3)
    assert tr.policy_stable_from() <= 10


def test_oracle_mode_has_zero_regret():
    for sched in (DriftSchedule.static(skewed_spec()), drifting_schedule(10)):
        tr = run(static_cfg(schedule=sched, debiaser=DebiaserConfig(mode="oracle")))
        assert abs(tr.regret_exact) <= 1e-12
        assert abs(tr.regret_estimated) <= 2 * 0.05


@pytest.mark.parametrize("seed", range(3))
@pytest.mark.parametrize("metric", ["SP", "EO"])
def test_regret_nonnegative_and_dominance(seed, metric):
    tr = run(static_cfg(schedule=drifting_schedule(10), metric_schedule=((1, metric),), seed=seed))
    assert tr.regret_exact >= -1e-12
    assert all(r.oracle_bias <= r.exact_bias + 1e-12 for r in tr.rounds)
    assert all(r.ci_low <= r.estimate <= r.ci_high for r in tr.rounds)


def test_bad_fixed_debiaser_has_positive_regret():
    cfg = static_cfg(debiaser=DebiaserConfig(mode="fixed", fixed_thresholds=(1, 4)))
    # exhaustive scan: the best policy reaches SP 0, (1, 4) does not
    table = skewed_spec().joint_masses()
    assert min(exact_objective(table, p, "SP", 1.0)[0] for p in grid_policies(2, 5)) == 0.0
    assert exact_objective(table, ThresholdPolicy((1, 4)), "SP", 1.0)[0] > 0.1
    tr = run(cfg)
    assert tr.regret_exact > 0.1
    assert all(r.policy == ThresholdPolicy((1, 4)) for r in tr.rounds)


def test_metric_switch_plumbing():
    cfg = static_cfg(
        metric_schedule=((1, "SP"), (6, "EO")), debiaser=DebiaserConfig(lam=0.5), schedule=drifting_schedule(10)
    )
    tr = run(cfg)
    assert [r.metric.value for r in tr.rounds] == ["SP"] * 5 + ["EO"] * 5
    for r in tr.rounds:
        table = r.audit_table / r.audit_table.sum()
        scores = [(exact_objective(table, p, r.metric.value, 0.5)[2], p) for p in grid_policies(2, 5)]
        best = min(o for o, _ in scores if o is not None)
        assert r.decision.policy == next(p for o, p in scores if o is not None and o <= best + 1e-12)


def test_deterministic():
    cfg = static_cfg(schedule=drifting_schedule(8), horizon=8, retrain_every=3, seed=11)
    assert run(cfg).rounds == run(cfg).rounds


def test_aborts_with_partial_trace():
    spec = uniform_spec(2, 1)
    cfg = GameConfig(horizon=5, schedule=DriftSchedule.static(spec), metric_schedule=((1, "SP"), (3, "PVP")),
                     auditor=AuditorConfig(0.2, 0.1))
    with pytest.raises(GameAborted) as info:
        run(cfg)
    assert len(info.value.trace.rounds) == 2
    assert "round 3" in str(info.value)


def test_config_validation_and_json():
    with pytest.raises(ValidationError):
        static_cfg(horizon=0)
    with pytest.raises(ValidationError):
        static_cfg(metric_schedule=((2, "SP"),))
    with pytest.raises(ValidationError):
        static_cfg(metric_schedule=((1, "SP"), (1, "EO")))
    cfg = static_cfg(metric_schedule=((1, "SP"), (4, "PVP")), reweigh=True, schedule=drifting_schedule())
    assert GameConfig.from_dict(json.loads(json.dumps(cfg.to_dict()))) == cfg


def test_files_round_trip_and_reaggregate(tmp_path):
    cfg = static_cfg(schedule=drifting_schedule(6), horizon=6, seed=4)
    tr = run(cfg)
    write_trace_csv(tr, tmp_path / "trace.csv")
    write_summary(summary_dict(tr, cfg), tmp_path / "summary.json")

    rows = read_trace_csv(tmp_path / "trace.csv")
    assert [r["thresholds"] for r in rows] == [r.policy for r in tr.rounds]
    assert [r["exact_bias"] for r in rows] == [r.exact_bias for r in tr.rounds]

    # independent re-aggregation with the csv module only
    with open(tmp_path / "trace.csv", newline="") as fh:
        raw = list(csv.DictReader(fh))
    est = sum(float(r["estimate"]) for r in raw) / len(raw)
    exact = sum(float(r["exact_bias"]) for r in raw) / len(raw)
    base = sum(float(r["oracle_bias"]) for r in raw) / len(raw)
    summ = read_summary(tmp_path / "summary.json")
    assert abs(summ["v_t_estimated"] - est) <= 1e-12
    assert abs(summ["v_t_exact"] - exact) <= 1e-12
    assert abs(summ["regret_exact"] - (exact - base)) <= 1e-12
    assert GameConfig.from_dict(summ["config"]) == cfg
    assert summ["seed"] == 4 and not math.isnan(summ["regret_estimated"])
