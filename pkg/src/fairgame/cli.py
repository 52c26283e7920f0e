"""Command-line entry point: ``fairgame simulate | audit | metrics | report``.

Exit codes: 0 success, 2 bad input, 3 a game aborted mid-run (partial
outputs kept), 4 an audit aborted.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Sequence

import numpy as np

from .auditor import AuditorConfig, audit_once
from .errors import AuditAborted, FairGameError, GameAborted, UndefinedConditional
from .game import GameConfig, run, summary_dict, write_summary, write_trace_csv, read_summary
from .metrics import MetricKind, exact_metric
from .model import classifier_from_dict, prediction_distribution
from .population import PopulationSpec

EXIT_OK, EXIT_CONFIG, EXIT_ABORT, EXIT_AUDIT_ABORT = 0, 2, 3, 4
DEFAULT_OUTPUT = "fairgame_out"
AGG_FIELDS = ("v_t_estimated", "v_t_exact", "regret_estimated", "regret_exact")


class ConfigError(Exception):
    def __init__(self, message: str, path: str = "<config>", line: int = 1):
        super().__init__(f"{path}:{line}: {message}")


@dataclass(frozen=True)
class ExperimentConfig:
    game: GameConfig
    replications: int = 1
    seed_base: int = 0
    output_dir: str = DEFAULT_OUTPUT
    converge_by: int | None = None

    def __post_init__(self) -> None:
        if self.replications < 1:
            raise FairGameError("replications must be at least 1")


# -- config loading -----------------------------------------------------------


def _line_of(text: str, key: str) -> int:
    needle = f'"{key}"'
    for i, line in enumerate(text.splitlines(), start=1):
        if needle in line:
            return i
    return 1


def apply_override(doc: dict, assignment: str) -> None:
    """Apply ``a.b.c=value``; the value is parsed as JSON when possible."""
    if "=" not in assignment:
        raise ConfigError(f"override {assignment!r} is not of the form path=value")
    path, raw = assignment.split("=", 1)
    try:
        val: Any = json.loads(raw)
    except json.JSONDecodeError:
        val = raw
    keys = path.split(".")
    node: Any = doc
    for k in keys[:-1]:
        node = node[int(k)] if isinstance(node, list) else node.setdefault(k, {})
    last = keys[-1]
    if isinstance(node, list):
        node[int(last)] = val
    else:
        node[last] = val


_REQUIRED_GAME = ("horizon", "schedule")


def parse_experiment(doc: dict, text: str = "", path: str = "<config>") -> ExperimentConfig:
    if not isinstance(doc, dict) or "game" not in doc:
        raise ConfigError("missing required field 'game'", path, 1)
    game = doc["game"]
    for key in _REQUIRED_GAME:
        if key not in game:
            raise ConfigError(f"missing required field 'game.{key}'", path, _line_of(text, "game"))
    try:
        gcfg = GameConfig.from_dict(game)
        out = doc.get("output_dir") or os.environ.get("FAIRGAME_OUTPUT_DIR") or DEFAULT_OUTPUT
        return ExperimentConfig(
            game=gcfg,
            replications=int(doc.get("replications", 1)),
            seed_base=int(doc.get("seed_base", gcfg.seed)),
            output_dir=str(out),
            converge_by=doc.get("converge_by"),
        )
    except KeyError as exc:
        key = str(exc.args[0])
        raise ConfigError(f"missing required field {key!r}", path, _line_of(text, key)) from None
    except (FairGameError, ValueError, TypeError) as exc:
        raise ConfigError(str(exc), path, _first_mentioned_line(text, str(exc))) from None


def _first_mentioned_line(text: str, message: str) -> int:
    for word in message.replace(",", " ").split():
        word = word.strip("'\"():")
        if word.isidentifier() and f'"{word}"' in text:
            return _line_of(text, word)
    return 1


def load_experiment(path: str | Path, overrides: Sequence[str] = ()) -> ExperimentConfig:
    path = str(path)
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config: {exc.strerror}", path, 1) from None
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"invalid JSON: {exc.msg}", path, exc.lineno) from None
    for ov in overrides:
        apply_override(doc, ov)
    return parse_experiment(doc, text, path)


# -- simulate / report ------------------------------------------------------------


def _replication(game_doc: dict, seed: int, out_dir: str) -> dict:
    game_doc = dict(game_doc, seed=seed)
    cfg = GameConfig.from_dict(game_doc)
    Path(out_dir).mkdir(parents=True, exist_ok=True)
    try:
        trace = run(cfg)
        aborted = None
    except GameAborted as exc:
        trace, aborted = exc.trace, str(exc)
    write_trace_csv(trace, Path(out_dir) / "trace.csv")
    summary = summary_dict(trace, cfg, aborted)
    write_summary(summary, Path(out_dir) / "summary.json")
    return summary


def aggregate(summaries: list[dict], converge_by: int | None = None) -> dict:
    """Means and standard deviations across replications (population std, ddof=0)."""
    done = [s for s in summaries if s.get("aborted") is None]
    agg: dict[str, Any] = {"replications": len(summaries), "completed": len(done)}
    for key in AGG_FIELDS:
        vals = np.array([s[key] for s in done], dtype=float)
        agg[key] = {
            "mean": float(vals.mean()) if len(vals) else None,
            "std": float(vals.std()) if len(vals) else None,
        }
    covered = [s["anytime_violations"] == 0 for s in done]
    agg["coverage"] = float(np.mean(covered)) if covered else None
    agg["anytime_violations_mean"] = float(np.mean([s["anytime_violations"] for s in done])) if done else None
    agg["policy_stable_from"] = {str(s["seed"]): s["policy_stable_from"] for s in summaries}
    if summaries:
        horizon = summaries[0]["config"]["horizon"]
        limit = converge_by if converge_by is not None else max(1, horizon // 5)
        agg["converge_by"] = limit
        agg["non_converging_seeds"] = [
            s["seed"] for s in done if s["policy_stable_from"] is None or s["policy_stable_from"] > limit
        ]
    agg["aborted_seeds"] = [s["seed"] for s in summaries if s.get("aborted") is not None]
    return agg


def _write_json(obj: dict, path: Path) -> None:
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")


def simulate(exp: ExperimentConfig, jobs: int = 1) -> int:
    out = Path(exp.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    game_doc = exp.game.to_dict()
    seeds = [exp.seed_base + i for i in range(exp.replications)]
    dirs = [str(out / f"rep_{i:03d}") for i in range(exp.replications)]
    if jobs > 1 and exp.replications > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            summaries = list(pool.map(_replication, [game_doc] * len(seeds), seeds, dirs))
    else:
        summaries = [_replication(game_doc, s, d) for s, d in zip(seeds, dirs)]
    _write_json(aggregate(summaries, exp.converge_by), out / "aggregate.json")
    return EXIT_ABORT if any(s.get("aborted") for s in summaries) else EXIT_OK


def report(output_dir: str | Path, converge_by: int | None = None) -> dict:
    out = Path(output_dir)
    paths = sorted(out.glob("rep_*/summary.json"))
    if not paths:
        raise FileNotFoundError(f"no replication summaries under {out}")
    agg = aggregate([read_summary(p) for p in paths], converge_by)
    _write_json(agg, out / "aggregate.json")
    return agg


# -- audit / metrics ----------------------------------------------------------------


def _load_json(path: str) -> dict:
    return json.loads(Path(path).read_text())


def load_spec(path: str) -> PopulationSpec:
    doc = _load_json(path)
    return PopulationSpec.from_dict(doc.get("spec", doc))


def exact_metrics_report(spec: PopulationSpec, classifier) -> dict:
    table = prediction_distribution(classifier, spec)
    out: dict[str, Any] = {}
    for kind in MetricKind:
        try:
            out[kind.value] = exact_metric(kind, table).value
        except UndefinedConditional:
            out[kind.value] = "UndefinedConditional"
    return out


def _cmd_simulate(args) -> int:
    try:
        exp = load_experiment(args.config, args.set or [])
    except ConfigError as exc:
        print(str(exc), file=sys.stderr)
        return EXIT_CONFIG
    if args.output_dir:
        exp = ExperimentConfig(exp.game, exp.replications, exp.seed_base, args.output_dir, exp.converge_by)
    code = simulate(exp, args.jobs)
    if code == EXIT_ABORT:
        print(f"a replication aborted; partial outputs kept in {exp.output_dir}", file=sys.stderr)
    return code


def _cmd_audit(args) -> int:
    try:
        classifier = classifier_from_dict(_load_json(args.model))
        spec = load_spec(args.spec)
        cfg = AuditorConfig(
            epsilon=args.epsilon,
            delta=args.delta,
            sampler=args.sampler,
            metric=args.metric,
            dp_denominator_floor=args.dp_floor,
            pilot_per_group=args.pilot_per_group,
        )
    except (OSError, ValueError, KeyError, TypeError, FairGameError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    try:
        est = audit_once(cfg, classifier, spec, np.random.default_rng(args.seed))
    except AuditAborted as exc:
        print(f"audit aborted: {exc}", file=sys.stderr)
        return EXIT_AUDIT_ABORT
    except FairGameError as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_AUDIT_ABORT
    print(json.dumps(est.to_dict(), sort_keys=True))
    return EXIT_OK


def _cmd_metrics(args) -> int:
    try:
        classifier = classifier_from_dict(_load_json(args.model))
        spec = load_spec(args.spec)
        report_ = exact_metrics_report(spec, classifier)
    except (OSError, ValueError, KeyError, TypeError, FairGameError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    print(json.dumps(report_, sort_keys=True))
    return EXIT_OK


def _cmd_report(args) -> int:
    dirs = args.output_dirs or [os.environ.get("FAIRGAME_OUTPUT_DIR", DEFAULT_OUTPUT)]
    try:
        for d in dirs:
            print(json.dumps(report(d, args.converge_by), indent=2, sort_keys=True))
    except (OSError, ValueError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="fairgame", description="Audit/debias feedback-loop simulator")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("simulate", help="run replications of a game from a JSON config")
    s.add_argument("config")
    s.add_argument("--set", action="append", metavar="PATH=VALUE", help="override a config field")
    s.add_argument("--output-dir", default=None)
    s.add_argument("--jobs", type=int, default=1)
    s.set_defaults(func=_cmd_simulate)

    a = sub.add_parser("audit", help="audit a saved classifier once")
    a.add_argument("--model", required=True)
    a.add_argument("--spec", required=True)
    a.add_argument("--metric", default="SP", choices=[m.value for m in MetricKind])
    a.add_argument("--epsilon", type=float, default=0.05)
    a.add_argument("--delta", type=float, default=0.1)
    a.add_argument("--sampler", default="UNIFORM", choices=["UNIFORM", "STRATIFIED"])
    a.add_argument("--dp-floor", type=float, default=0.05)
    a.add_argument("--pilot-per-group", type=int, default=50)
    a.add_argument("--seed", type=int, default=0)
    a.set_defaults(func=_cmd_audit)

    m = sub.add_parser("metrics", help="exact bias metrics of a saved classifier")
    m.add_argument("--spec", required=True)
    m.add_argument("--model", required=True)
    m.set_defaults(func=_cmd_metrics)

    r = sub.add_parser("report", help="re-aggregate existing output directories")
    r.add_argument("output_dirs", nargs="*", help="defaults to $FAIRGAME_OUTPUT_DIR")
    r.add_argument("--converge-by", type=int, default=None)
    r.set_defaults(func=_cmd_report)
    return p


def main(argv: Sequence[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
