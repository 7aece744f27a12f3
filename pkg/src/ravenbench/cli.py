"""Command-line entry points: gen-worlds, run, bench, report.

Config precedence is built-in defaults < --config file < --override
flags; the effective configuration is dumped next to every output for
reproducibility. Exit codes: 0 ok, 1 validation/config error, 2 runtime
episode error, 3 I/O error.
"""

import argparse
import dataclasses
import json
import os
import sys
from pathlib import Path

from .behavior import CooccurrenceOracle, load_cooccurrence
from .evaluation import (
    CSV_HEADER,
    EpisodeConfig,
    MetricsReport,
    PolicyKind,
    aggregate_rows,
    episode_row,
    plot_trajectory,
    run_benchmark,
)
from .world import (
    GenerationError,
    GeneratorParams,
    ScenarioError,
    TaskKind,
    generate_world,
    load_scenario,
    save_scenario,
)

EXIT_OK = 0
EXIT_CONFIG = 1
EXIT_RUNTIME = 2
EXIT_IO = 3


class ConfigError(ValueError):
    pass


def _config_sections(cfg: EpisodeConfig):
    return {"sensor": cfg.sensor, "behavior": cfg.behavior, "nav": cfg.nav, "": cfg}


def _coerce(current, text):
    if isinstance(current, bool):
        if text.lower() in ("1", "true", "yes"):
            return True
        if text.lower() in ("0", "false", "no"):
            return False
        raise ConfigError(f"expected boolean, got {text!r}")
    if isinstance(current, int):
        return int(text)
    if isinstance(current, float):
        return float(text)
    raise ConfigError(f"field of type {type(current).__name__} is not overridable")


def apply_override(cfg: EpisodeConfig, key: str, value: str):
    """Set one field by bare name or section.name; bare names must be unique."""
    sections = _config_sections(cfg)
    if "." in key:
        sec, name = key.split(".", 1)
        if sec not in sections or sec == "":
            raise ConfigError(f"unknown config section {sec!r}")
        targets = [(sections[sec], name)]
    else:
        targets = []
        for sec, obj in sections.items():
            fields = {f.name for f in dataclasses.fields(obj)}
            if sec == "":
                fields -= {"sensor", "behavior", "nav"}
            if key in fields:
                targets.append((obj, key))
        if len(targets) > 1:
            raise ConfigError(f"ambiguous override key {key!r}; qualify with a section")
    if not targets:
        raise ConfigError(f"unknown config key {key!r}")
    obj, name = targets[0]
    if not hasattr(obj, name):
        raise ConfigError(f"unknown config key {key!r}")
    setattr(obj, name, _coerce(getattr(obj, name), value))


def build_config(config_path, overrides):
    cfg = EpisodeConfig()
    applied = {}
    if config_path:
        try:
            text = Path(config_path).read_text()
        except OSError as e:
            raise ConfigError(f"cannot read config file: {e}") from e
        for line_no, raw in enumerate(text.splitlines(), start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigError(f"{config_path}:{line_no}: expected key=value")
            k, v = (s.strip() for s in line.split("=", 1))
            apply_override(cfg, k, v)
            applied[k] = v
    for item in overrides or []:
        if "=" not in item:
            raise ConfigError(f"--override needs key=value, got {item!r}")
        k, v = (s.strip() for s in item.split("=", 1))
        apply_override(cfg, k, v)
        applied[k] = v
    return cfg, applied


def effective_config_doc(cfg: EpisodeConfig, overrides) -> str:
    doc = {
        "sensor": dataclasses.asdict(cfg.sensor),
        "behavior": dataclasses.asdict(cfg.behavior),
        "nav": dataclasses.asdict(cfg.nav),
        "semantic": {
            "d_emb": cfg.d_emb,
            "noise_sigma": cfg.noise_sigma,
            "max_cross_sim": cfg.max_cross_sim,
        },
        "overrides": overrides,
    }
    return json.dumps(doc, sort_keys=True, indent=2) + "\n"


def _out_dir(arg):
    out = arg or os.environ.get("RAVENBENCH_OUT") or "out"
    path = Path(out)
    path.mkdir(parents=True, exist_ok=True)
    return path


def _parse_policy(name: str) -> PolicyKind:
    for p in PolicyKind:
        if p.value == name:
            return p
    valid = ", ".join(p.value for p in PolicyKind)
    raise ConfigError(f"unknown policy {name!r}; valid policies: {valid}")


def _load_cooc_for(scenario_path: Path, explicit):
    if explicit:
        return load_cooccurrence(Path(explicit).read_text())
    side = scenario_path.parent / "cooccurrence.txt"
    if side.exists():
        return load_cooccurrence(side.read_text())
    return {}


def cmd_gen_worlds(args) -> int:
    try:
        params_doc = json.loads(Path(args.params).read_text())
        params = GeneratorParams.from_dict(params_doc)
    except OSError as e:
        print(f"error: cannot read params: {e}", file=sys.stderr)
        return EXIT_IO
    except (ScenarioError, ValueError, TypeError) as e:
        print(f"error: invalid params: {e}", file=sys.stderr)
        return EXIT_CONFIG
    try:
        out = _out_dir(args.out)
    except OSError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_IO
    names = []
    kinds = params.task_kinds
    try:
        for w in range(args.count):
            for s in range(params.starts_per_world):
                kind = kinds[s % len(kinds)]
                p = dataclasses.replace(params, task_kind=kind, start_index=s)
                sc = generate_world(p, args.seed * 1000 + w)
                name = f"w{w:03d}_s{s}_{kind.value}.scn"
                (out / name).write_text(save_scenario(sc))
                names.append(name)
    except (GenerationError, ScenarioError) as e:
        print(f"error: generation failed: {e}", file=sys.stderr)
        return EXIT_CONFIG
    names.sort()
    (out / "suite.txt").write_text("\n".join(names) + "\n")
    if params.cooccurrence:
        lines = [
            f"{k}: " + ", ".join(v) for k, v in sorted(params.cooccurrence.items())
        ]
        (out / "cooccurrence.txt").write_text("\n".join(lines) + "\n")
    print(f"wrote {len(names)} scenarios to {out}")
    return EXIT_OK


def cmd_run(args) -> int:
    try:
        cfg, overrides = build_config(args.config, args.override)
        policy = _parse_policy(args.policy)
    except ConfigError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    scenario_path = Path(args.scenario)
    try:
        scenario = load_scenario(scenario_path.read_text())
        table = _load_cooc_for(scenario_path, args.cooc)
    except OSError as e:
        print(f"error: cannot read scenario: {e}", file=sys.stderr)
        return EXIT_IO
    except ScenarioError as e:
        print(f"error: invalid scenario: {e}", file=sys.stderr)
        return EXIT_CONFIG
    try:
        out = _out_dir(args.out)
    except OSError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_IO
    provider = CooccurrenceOracle(table, cfg.behavior.j_aux)
    try:
        row, result = episode_row(
            scenario_path.stem, scenario, policy, args.seed,
            config=cfg, provider=provider, audit=True,
        )
    except Exception as e:  # noqa: BLE001 - surfaced as exit code
        print(f"error: episode failed: {e}", file=sys.stderr)
        return EXIT_RUNTIME
    stem = f"{scenario_path.stem}_{policy.value}_{args.seed}"
    try:
        (out / f"{stem}_result.json").write_text(result.to_json())
        header = {
            "type": "header",
            "scenario": scenario_path.stem,
            "policy": policy.value,
            "seed": args.seed,
            "overrides": overrides,
        }
        log_lines = [json.dumps(header, sort_keys=True, separators=(",", ":"))]
        log_lines += [
            json.dumps(rec, sort_keys=True, separators=(",", ":"))
            for rec in result.behavior_log
        ]
        (out / f"{stem}_behavior.jsonl").write_text("\n".join(log_lines) + "\n")
        (out / f"{stem}_config.json").write_text(effective_config_doc(cfg, overrides))
        if args.plot:
            plot_trajectory(result, scenario, str(out / f"{stem}_trajectory.svg"))
    except OSError as e:
        print(f"error: cannot write outputs: {e}", file=sys.stderr)
        return EXIT_IO
    print(
        f"{stem}: progress={row['progress']:.3f} ppl={row['ppl']:.3f} "
        f"steps={row['steps']} terminated_by={row['terminated_by']}"
    )
    return EXIT_OK


def cmd_bench(args) -> int:
    try:
        cfg, overrides = build_config(args.config, args.override)
        policies = [_parse_policy(p.strip()) for p in args.policies.split(",") if p.strip()]
        seeds = [int(s) for s in args.seeds.split(",") if s.strip()]
    except (ConfigError, ValueError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    if not policies or not seeds:
        print("error: need at least one policy and one seed", file=sys.stderr)
        return EXIT_CONFIG
    suite_path = Path(args.suite)
    try:
        manifest = [
            line.strip()
            for line in suite_path.read_text().splitlines()
            if line.strip()
        ]
    except OSError as e:
        print(f"error: cannot read suite manifest: {e}", file=sys.stderr)
        return EXIT_IO
    if not manifest:
        print("error: empty suite manifest", file=sys.stderr)
        return EXIT_CONFIG
    suite = []
    try:
        for name in manifest:
            path = suite_path.parent / name
            suite.append((Path(name).stem, load_scenario(path.read_text())))
        table = _load_cooc_for(suite_path, args.cooc)
    except OSError as e:
        print(f"error: cannot read scenario: {e}", file=sys.stderr)
        return EXIT_IO
    except ScenarioError as e:
        print(f"error: invalid scenario: {e}", file=sys.stderr)
        return EXIT_CONFIG
    try:
        out = _out_dir(args.out)
    except OSError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_IO
    report = run_benchmark(
        suite, policies, seeds, jobs=args.jobs, config=cfg,
        cooc_table=table, audit=args.audit,
    )
    try:
        (out / "report.csv").write_text(report.to_csv())
        (out / "aggregate.csv").write_text(report.aggregate_table())
        (out / "effective_config.json").write_text(effective_config_doc(cfg, overrides))
    except OSError as e:
        print(f"error: cannot write outputs: {e}", file=sys.stderr)
        return EXIT_IO
    print(report.aggregate_table(), end="")
    errored = [r for r in report.rows if r["terminated_by"] == "error"]
    if errored:
        print(f"error: {len(errored)} episodes failed", file=sys.stderr)
        return EXIT_RUNTIME
    return EXIT_OK


def cmd_report(args) -> int:
    in_dir = Path(args.in_dir)
    rows = []
    try:
        csvs = sorted(in_dir.glob("**/report*.csv"))
        for path in csvs:
            lines = path.read_text().splitlines()
            if not lines or lines[0] != CSV_HEADER:
                continue
            for line in lines[1:]:
                parts = line.split(",")
                rows.append(
                    {
                        "policy": parts[0],
                        "scenario": parts[1],
                        "seed": int(parts[2]),
                        "task_type": parts[3],
                        "progress": float(parts[4]),
                        "ppl": float(parts[5]),
                        "steps": int(parts[6]),
                        "path_length": float(parts[7]),
                        "terminated_by": parts[8],
                    }
                )
    except OSError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_IO
    if not rows:
        print("error: no report CSVs found", file=sys.stderr)
        return EXIT_CONFIG
    report = MetricsReport(rows=rows, aggregates=aggregate_rows(rows))
    out_path = in_dir / "aggregate.csv"
    try:
        out_path.write_text(report.aggregate_table())
    except OSError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_IO
    print(report.aggregate_table(), end="")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(
        prog="ravenbench",
        description="Desk-scale aerial semantic navigation benchmark",
    )
    sub = ap.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen-worlds", help="generate a scenario suite")
    g.add_argument("--params", required=True, help="generator params JSON")
    g.add_argument("--count", type=int, required=True, help="number of worlds")
    g.add_argument("--seed", type=int, required=True)
    g.add_argument("--out", default=None, help="output directory")
    g.set_defaults(func=cmd_gen_worlds)

    r = sub.add_parser("run", help="run one episode")
    r.add_argument("--scenario", required=True)
    r.add_argument("--policy", required=True)
    r.add_argument("--seed", type=int, required=True)
    r.add_argument("--plot", action="store_true")
    r.add_argument("--override", action="append", metavar="KEY=VALUE")
    r.add_argument("--config", default=None, help="key=value config file")
    r.add_argument("--cooc", default=None, help="co-occurrence table file")
    r.add_argument("--out", default=None)
    r.set_defaults(func=cmd_run)

    b = sub.add_parser("bench", help="run a benchmark sweep")
    b.add_argument("--suite", required=True, help="suite manifest file")
    b.add_argument("--policies", required=True, help="comma-separated policy names")
    b.add_argument("--seeds", required=True, help="comma-separated seeds")
    b.add_argument("--jobs", type=int, default=1)
    b.add_argument("--override", action="append", metavar="KEY=VALUE")
    b.add_argument("--config", default=None)
    b.add_argument("--cooc", default=None)
    b.add_argument("--audit", action="store_true", help="run invariant audits")
    b.add_argument("--out", default=None)
    b.set_defaults(func=cmd_bench)

    p = sub.add_parser("report", help="re-aggregate report CSVs")
    p.add_argument("--in", dest="in_dir", required=True)
    p.set_defaults(func=cmd_report)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
