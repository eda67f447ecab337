"""Command line: ``needsense pipeline | sim | eval``.

Exit codes: 0 success, 1 configuration error, 2 data error, 3 gateway error.
Settings resolve as flags, then the ``--config`` JSON file, then defaults.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from concurrent.futures import ThreadPoolExecutor
from datetime import datetime, timezone
from pathlib import Path
from typing import Any, Sequence

from .errors import (
    ExhaustedRepairs,
    GatewayError,
    NeedSenseError,
    ParseError,
    QuotaNotMet,
    SolutionPlanMismatch,
    UnknownVariant,
)
from .model import ActionPlan, PromptVariant, parse_action_list
from .scenarios import UnknownScenario, load_spec, load_world, parse_task_selection

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_GATEWAY = 0, 1, 2, 3
FORMATS = ("md", "csv", "json")

log = logging.getLogger("needsense")


class ConfigError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    """Usage errors become config errors (exit 1) instead of argparse's exit 2."""

    def error(self, message: str):  # type: ignore[override]
        raise ConfigError(f"{self.prog}: {message}")


# ---------------------------------------------------------------------------
# pipeline


def _run_id(given: str | None) -> str:
    return given or datetime.now(timezone.utc).strftime("%Y%m%dT%H%M%SZ")


def cmd_pipeline(args: argparse.Namespace) -> int:
    from .gateway import make_gateway
    from .pipeline import Pipeline, write_run

    variant = PromptVariant.parse(args.variant)
    if not variant.is_detection:
        raise ConfigError(f"{variant.value} is not a detection variant")
    tasks = parse_task_selection(args.tasks)
    if args.backend == "remote" and not args.endpoint:
        raise ConfigError("--backend remote needs --endpoint")
    gateway = make_gateway(args.backend, endpoint=args.endpoint, fixtures=args.fixtures,
                           max_in_flight=max(1, args.jobs), model=args.model)
    pipe = Pipeline(gateway, repair_limit=args.repair_limit, strict=args.strict)
    out_dir = Path(args.out) / _run_id(args.run_id)

    def one(task: int):
        return pipe.run_full(load_spec(task), variant)

    with ThreadPoolExecutor(max_workers=max(1, args.jobs)) as pool:
        futures = [(t, pool.submit(one, t)) for t in tasks]
        status = EXIT_OK
        for task, future in futures:
            try:
                run = future.result()
            except GatewayError as exc:
                print(f"task {task:02d}: gateway error: {exc}", file=sys.stderr)
                status = max(status, EXIT_GATEWAY)
                continue
            except (ExhaustedRepairs, SolutionPlanMismatch, QuotaNotMet, ParseError) as exc:
                print(f"task {task:02d}: {exc}", file=sys.stderr)
                status = max(status, EXIT_DATA) if status != EXIT_GATEWAY else status
                continue
            path = write_run(run, out_dir)
            flagged = len(run.violations)
            print(f"task {task:02d}: {len(run.report.needs)} needs, {len(run.plans)} plans, "
                  f"{flagged} findings -> {path}")
    return status


# ---------------------------------------------------------------------------
# sim


def _fixture_plans(task: int) -> list[ActionPlan]:
    from .gateway import fixture_path, fixture_root

    path = fixture_path(fixture_root(), task, PromptVariant.ACTION_GENERATION)
    return parse_action_list(path.read_text("utf-8"))


def _run_plans(runs_dir: Path) -> dict[int, list[ActionPlan]]:
    from .pipeline import read_run

    files = sorted(runs_dir.glob("task_*.json"))
    if not files:
        raise FileNotFoundError(f"no run artifacts in {runs_dir}")
    out: dict[int, list[ActionPlan]] = {}
    for path in files:
        run = read_run(path)
        out.setdefault(run.scenario_id, []).extend(run.plans)
    return out


def parse_counts(text: str, attempts: int) -> dict[int, tuple[int, int]]:
    """Per-task counts from ``"8,9,5"`` (tasks 1..n) or a JSON file ``{"1": [8, 10], ...}``."""
    path = Path(text)
    if path.suffix == ".json" and path.is_file():
        raw = json.loads(path.read_text("utf-8"))
        counts = {int(k): (int(v[0]), int(v[1])) for k, v in raw.items()}
    else:
        try:
            values = [int(v) for v in text.split(",") if v.strip()]
        except ValueError:
            raise ConfigError(f"cannot parse counts {text!r}") from None
        counts = {i: (v, attempts) for i, v in enumerate(values, 1)}
    for task, (wins, n) in counts.items():
        if n < 1 or not 0 <= wins <= n:
            raise ConfigError(f"task {task}: invalid count {wins}/{n}")
    return counts


def _summary_lines(counts: dict[int, tuple[int, int]]) -> list[str]:
    from .sim import pooled_success

    lines = [f"task {t:02d}: {w}/{n}" for t, (w, n) in sorted(counts.items())]
    lines.append(f"pooled: {100 * pooled_success(counts.values()):.1f}%")
    return lines


def _render_counts(counts: dict[int, tuple[int, int]], fmt: str) -> str:
    from .sim import pooled_success

    pooled = 100 * pooled_success(counts.values())
    if fmt == "json":
        body = {"tasks": {str(t): {"successes": w, "trials": n} for t, (w, n) in sorted(counts.items())},
                "pooled_percent": round(pooled, 4)}
        return json.dumps(body, indent=2) + "\n"
    if fmt == "csv":
        rows = ["task_id,successes,trials"] + [f"{t},{w},{n}" for t, (w, n) in sorted(counts.items())]
        return "\n".join(rows + [f"pooled,{pooled:.1f}%,"]) + "\n"
    rows = ["| Task ID | Success Rate |", "|---|---|"]
    rows += [f"| {t} | {w}/{n} |" for t, (w, n) in sorted(counts.items())]
    return "\n".join(rows + [f"| Average | {pooled:.1f}% |"]) + "\n"


def _sim_task(task: int, plans: list[ActionPlan], noise, trials: int, seed: int) -> tuple[int, int, tuple[int, int]]:
    from .sim import task_trials

    return task, len(plans), task_trials(load_world(task), plans, noise, trials, seed + task)


def cmd_sim(args: argparse.Namespace) -> int:
    from .sim import NoiseConfig, execute_plan

    if args.trials < 1:
        raise ConfigError("--trials must be >= 1")
    if args.counts:
        counts = parse_counts(args.counts, args.attempts)
    else:
        try:
            noise = NoiseConfig.parse(args.noise)
        except ValueError as exc:
            raise ConfigError(str(exc)) from None
        tasks = parse_task_selection(args.tasks)
        if args.runs:
            available = _run_plans(Path(args.runs))
            plans = {t: available[t] for t in tasks if t in available}
        else:
            plans = {t: _fixture_plans(t) for t in tasks}
        plans = {t: p for t, p in plans.items() if p}
        if not plans:
            raise FileNotFoundError("no plans to execute")
        if args.traces:
            trace_dir = Path(args.traces)
            trace_dir.mkdir(parents=True, exist_ok=True)
            for task, task_plans in plans.items():
                world = load_world(task)
                with open(trace_dir / f"task_{task:02d}.jsonl", "w", encoding="utf-8") as fh:
                    for i, plan in enumerate(task_plans):
                        trace = execute_plan(world, plan, noise, seed=args.seed + task)
                        for line in trace.to_jsonl().splitlines():
                            record = json.loads(line)
                            record["plan"] = i
                            fh.write(json.dumps(record, ensure_ascii=False) + "\n")
        counts = {}
        if args.jobs > 1:
            from concurrent.futures import ProcessPoolExecutor

            with ProcessPoolExecutor(max_workers=args.jobs) as pool:
                futures = [pool.submit(_sim_task, t, p, noise, args.trials, args.seed) for t, p in plans.items()]
                results = [f.result() for f in futures]
        else:
            results = [_sim_task(t, p, noise, args.trials, args.seed) for t, p in plans.items()]
        for task, _, count in results:
            counts[task] = count
    for line in _summary_lines(counts):
        print(line)
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        (out / f"sim_summary.{args.format}").write_text(_render_counts(counts, args.format), "utf-8")
        if not args.no_plots:
            from .plotting import success_bars

            success_bars(counts, out / "success.png")
    return EXIT_OK


# ---------------------------------------------------------------------------
# eval


def cmd_eval(args: argparse.Namespace) -> int:
    from .evaluation import HashingEmbedder, RemoteEmbedder, evaluate_corpus, load_corpus
    from .evaluation.corpus import load_robot_responses
    from .evaluation.report import RENDERERS, robot_responses_from_runs

    if not args.corpus:
        raise ConfigError("--corpus is required")
    if bool(args.robot) == bool(args.runs):
        raise ConfigError("give exactly one of --robot or --runs")
    rows = load_corpus(args.corpus)
    if args.robot:
        robots = load_robot_responses(args.robot)
    else:
        from .pipeline import read_run

        files = sorted(Path(args.runs).glob("task_*.json"))
        if not files:
            raise FileNotFoundError(f"no run artifacts in {args.runs}")
        robots = robot_responses_from_runs(read_run(p) for p in files)
    if args.embedder == "remote":
        if not args.embed_endpoint:
            raise ConfigError("--embedder remote needs --embed-endpoint")
        embedder = RemoteEmbedder(args.embed_endpoint)
    else:
        embedder = HashingEmbedder()
    success = parse_counts(args.success_counts, args.attempts) if args.success_counts else None
    if args.k_min > args.k_max:
        raise ConfigError("--k-min must not exceed --k-max")
    result = evaluate_corpus(rows, robots, embedder, seed=args.seed, k_range=(args.k_min, args.k_max),
                             mode=args.mode, success=success)
    text = RENDERERS[args.format](result)
    sys.stdout.write(text)
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        (out / f"report.{args.format}").write_text(text, "utf-8")
        if not args.no_plots:
            from .plotting import render_all

            render_all(result, out, success)
    return EXIT_OK


# ---------------------------------------------------------------------------
# parser


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="needsense", description=__doc__.splitlines()[0])
    parser.add_argument("--config", help="JSON file of option defaults (flags still win)")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("pipeline", help="detect needs and decompose solutions into plans")
    p.add_argument("--backend", choices=("replay", "remote"), default="replay")
    p.add_argument("--endpoint", help="chat-completions URL for the remote backend")
    p.add_argument("--model", help="remote model name")
    p.add_argument("--fixtures", help="replay fixture directory (default: bundled)")
    p.add_argument("--variant", default="full_atom_constraints")
    p.add_argument("--tasks", default="1..16")
    p.add_argument("--repair-limit", type=int, default=2)
    p.add_argument("--strict", action="store_true", help="enforce the 6-needs / 3-possible-items quota")
    p.add_argument("--jobs", type=int, default=1)
    p.add_argument("--out", default="runs")
    p.add_argument("--run-id", help="subdirectory name (default: UTC timestamp)")
    p.set_defaults(func=cmd_pipeline)

    s = sub.add_parser("sim", help="execute plans in the scenario worlds")
    s.add_argument("--tasks", default="1..16")
    s.add_argument("--runs", help="directory of pipeline run artifacts (default: bundled fixture plans)")
    s.add_argument("--noise", default="0", help="p_scan,p_grasp,p_place,p_use or one value for all")
    s.add_argument("--trials", type=int, default=10)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--jobs", type=int, default=1)
    s.add_argument("--counts", help="per-task success counts (comma list or JSON file) instead of simulating")
    s.add_argument("--attempts", type=int, default=10, help="attempts per task for a comma list of counts")
    s.add_argument("--traces", help="write one JSONL trace file per task here")
    s.add_argument("--out")
    s.add_argument("--format", choices=FORMATS, default="md")
    s.add_argument("--no-plots", action="store_true")
    s.set_defaults(func=cmd_sim)

    e = sub.add_parser("eval", help="compare robot responses with a human corpus")
    e.add_argument("--corpus", help="CSV/TSV with participant_id, task_id, stage, text, likert")
    e.add_argument("--robot", help="CSV/TSV with task_id, stage, text[, variant]")
    e.add_argument("--runs", help="directory of pipeline run artifacts to use as robot responses")
    e.add_argument("--embedder", choices=("local", "remote"), default="local")
    e.add_argument("--embed-endpoint")
    e.add_argument("--mode", choices=("assigned", "modal"), default="assigned")
    e.add_argument("--seed", type=int, default=0)
    e.add_argument("--k-min", type=int, default=2)
    e.add_argument("--k-max", type=int, default=6)
    e.add_argument("--success-counts", help="per-task execution counts for the success column")
    e.add_argument("--attempts", type=int, default=10)
    e.add_argument("--out")
    e.add_argument("--format", choices=FORMATS, default="md")
    e.add_argument("--no-plots", action="store_true")
    e.set_defaults(func=cmd_eval)
    return parser


def _load_config(path: str) -> dict[str, Any]:
    try:
        data = json.loads(Path(path).read_text("utf-8"))
    except (OSError, ValueError) as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    if not isinstance(data, dict):
        raise ConfigError("config must be a JSON object")
    return {k.replace("-", "_"): v for k, v in data.items()}


def parse_args(argv: Sequence[str] | None) -> argparse.Namespace:
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.config:
        config = _load_config(args.config)
        sub = parser._subparsers._group_actions[0].choices[args.command]  # type: ignore[union-attr]
        known = {a.dest for a in sub._actions}
        unknown = sorted(set(config) - known)
        if unknown:
            raise ConfigError(f"unknown config keys: {', '.join(unknown)}")
        sub.set_defaults(**config)
        args = parser.parse_args(argv)
    return args


def main(argv: Sequence[str] | None = None) -> int:
    try:
        args = parse_args(argv)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except (ConfigError, UnknownScenario, UnknownVariant, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except GatewayError as exc:
        print(f"gateway error: {exc}", file=sys.stderr)
        return EXIT_GATEWAY
    except (NeedSenseError, OSError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    raise SystemExit(main())
