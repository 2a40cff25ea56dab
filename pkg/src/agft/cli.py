"""``agft`` command line: tune, sweep, compare, ablate, report, presets."""

from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import sys
from dataclasses import replace
from pathlib import Path

from .harness import (ConfigError, SessionConfig, ablation_table, baseline_of, edp_cv, run_ablation,
                      run_comparison, run_session)
from .sim.sweep import sweep_oracle
from .sim.workload import PRESETS, get_preset

LOG_LEVELS = {"error": logging.ERROR, "warn": logging.WARNING, "info": logging.INFO, "debug": logging.DEBUG}

EXIT_OK, EXIT_CONFIG, EXIT_RUNTIME = 0, 1, 2
HELP_WIDTH = 100


def _formatter(prog):
    # fixed width so --help output does not depend on the terminal
    return argparse.HelpFormatter(prog, width=HELP_WIDTH)


def _with_formatter(add):
    def wrapped(*args, **kwargs):
        kwargs.setdefault("formatter_class", _formatter)
        return add(*args, **kwargs)
    return wrapped


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False, formatter_class=_formatter)
    common.add_argument("--config", metavar="PATH", help="JSON session config; flags override its values")
    common.add_argument("--out", metavar="DIR", default="agft-out", help="output directory (default: agft-out)")
    common.add_argument("--seed", type=int, metavar="N", help="workload and session seed")
    common.add_argument("--preset", metavar="NAME", help=f"workload preset: {', '.join(PRESETS)}")
    common.add_argument("--rounds", type=int, metavar="N", help="tuning rounds (0.8 s windows)")
    common.add_argument("--baseline", metavar="MODE", help="max or fixed:MHZ (run a locked-clock baseline)")
    common.add_argument("--no-pruning", action="store_true", help="disable action-space pruning")
    common.add_argument("--no-grain", action="store_true", help="use the coarse 120 MHz action grid")
    common.add_argument("--no-refinement", action="store_true", help="disable anchor-based refinement")

    p = argparse.ArgumentParser(prog="agft", formatter_class=_formatter, description="Adaptive GPU frequency tuning on a simulated LLM server.",
                                epilog="Log verbosity: AGFT_LOG_LEVEL=error|warn|info|debug.")
    sub = p.add_subparsers(dest="command", required=True, metavar="COMMAND")
    sub.add_parser = _with_formatter(sub.add_parser)
    sub.add_parser("tune", parents=[common], help="run one tuning session")
    sp = sub.add_parser("sweep", parents=[common], help="brute-force EDP sweep over locked clocks")
    sp.add_argument("--requests", type=int, default=500, metavar="N", help="requests per frequency (default: 500)")
    sub.add_parser("compare", parents=[common], help="tuner against a locked-clock baseline on one trace")
    sub.add_parser("ablate", parents=[common], help="full, no-grain and no-pruning sessions side by side")
    rp = sub.add_parser("report", parents=[common], help="re-render report.json from a session directory")
    rp.add_argument("session_dir", metavar="SESSION_DIR")
    sub.add_parser("presets", parents=[common], help="list the built-in workload presets")
    return p


def resolve_config(args) -> SessionConfig:
    data = {}
    if args.config:
        try:
            data = json.loads(Path(args.config).read_text())
        except FileNotFoundError:
            raise ConfigError(f"config file {args.config} not found") from None
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config file {args.config} is not valid JSON: {exc}") from None
        if not isinstance(data, dict):
            raise ConfigError("config file must hold a JSON object")
    if args.preset is not None:
        data["preset"] = args.preset
        data.pop("trace_path", None)
    for key, val in (("seed", args.seed), ("rounds", args.rounds), ("baseline", args.baseline)):
        if val is not None:
            data[key] = val
    for key, flag in (("disable_pruning", args.no_pruning), ("disable_fine_grained", args.no_grain),
                      ("disable_refinement", args.no_refinement)):
        if flag:
            data[key] = True
    if "trace_path" in data and "preset" not in data:
        data["preset"] = None
    return SessionConfig.from_dict(data)


def _write_json(path: Path, obj) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")


def cmd_tune(args, out: Path) -> None:
    rep = run_session(resolve_config(args))
    rep.write(out)
    print(f"{rep.config.label}: converged at round {rep.convergence_round}, "
          f"frequency {rep.converged_frequency} MHz -> {out}")


def cmd_sweep(args, out: Path) -> None:
    cfg = resolve_config(args)
    if cfg.preset is None:
        raise ConfigError("sweep needs a preset")
    res = sweep_oracle(get_preset(cfg.preset), requests=args.requests, seed=cfg.seed, hardware=cfg.hardware)
    out.mkdir(parents=True, exist_ok=True)
    cols = ["frequency_mhz", "edp", "energy_joules", "total_energy_joules", "ttft_mean", "tpot_mean", "windows"]
    with open(out / "sweep.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(cols)
        for f in res.frequencies:
            pt = res.points[f]
            w.writerow([f] + [repr(pt[c]) if isinstance(pt[c], float) else pt[c] for c in cols[1:]])
    _write_json(out / "sweep.json", res.to_dict())
    lo, hi = res.endpoint_margins()
    print(f"{res.preset}: argmin {res.argmin} MHz, {100 * lo:.1f}% below f_min, {100 * hi:.1f}% below f_max")


def cmd_compare(args, out: Path) -> None:
    cfg = resolve_config(args)
    mode = cfg.baseline if cfg.baseline != "none" else "max"
    tuned_cfg = replace(cfg, baseline="none", drain=True)
    cmp = run_comparison(tuned_cfg, baseline_of(tuned_cfg, mode))
    cmp.write(out)
    d = cmp.summary["totals"]["diff_pct"]
    print("change vs baseline: " + ", ".join(f"{k} {v:+.1f}%" for k, v in d.items() if v is not None))


def cmd_ablate(args, out: Path) -> None:
    cfg = replace(resolve_config(args), disable_pruning=False, disable_fine_grained=False,
                  disable_refinement=False)
    reps = run_ablation(cfg)
    for name, rep in reps.items():
        rep.write(out / name)
    rows = ablation_table(reps)
    for row in rows:
        row["edp_cv_stable"] = edp_cv(reps[row["config"]], stable=True)
    _write_json(out / "ablation.json", rows)
    with open(out / "ablation.csv", "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=list(rows[0]))
        w.writeheader()
        w.writerows(rows)
    for row in rows:
        print(f"{row['config']:>10}: EDP CV {row['edp_cv']:.4f} (stable phase {row['edp_cv_stable']:.4f})")


def cmd_report(args, out: Path) -> None:
    d = Path(args.session_dir)
    path = d / "report.json"
    if not path.exists():
        raise ConfigError(f"{d} has no report.json")
    rep = json.loads(path.read_text())
    lines = [f"session {d.name}: {rep['label']} on {rep['preset']} (seed {rep['seed']})",
             f"rounds {rep['rounds']}, convergence round {rep['convergence_round']}, "
             f"frequency {rep['converged_frequency']} MHz"]
    for phase in ("pre_convergence", "post_convergence"):
        block = rep.get(phase)
        if block:
            lines.append(f"{phase.replace('_', '-')}: " + ", ".join(
                f"{k} {v['mean']:.4g} (cv {v['cv']:.3f})" for k, v in block.items() if v["mean"] is not None))
    text = "\n".join(lines) + "\n"
    out.mkdir(parents=True, exist_ok=True)
    (out / "report.txt").write_text(text)
    print(text, end="")


def cmd_presets(args, out: Path) -> None:
    print(f"{'name':<18}{'context':>12}{'generation':>12}{'concurrency':>13}{'templates':>11}")
    for name, p in PRESETS.items():
        ctx = f"{p.context_tokens[0]}-{p.context_tokens[1]}"
        gen = f"{p.generation_tokens[0]}-{p.generation_tokens[1]}"
        print(f"{name:<18}{ctx:>12}{gen:>12}{p.concurrency_multiplier:>12g}x{p.template_pool_size:>11}")


COMMANDS = {"tune": cmd_tune, "sweep": cmd_sweep, "compare": cmd_compare, "ablate": cmd_ablate,
            "report": cmd_report, "presets": cmd_presets}


def main(argv=None) -> int:
    level = os.environ.get("AGFT_LOG_LEVEL", "warn").lower()
    logging.basicConfig(level=LOG_LEVELS.get(level, logging.WARNING), format="%(levelname)s %(name)s: %(message)s")
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_CONFIG
    try:
        COMMANDS[args.command](args, Path(args.out))
    except (ConfigError, KeyError) as exc:
        msg = exc.args[0] if exc.args else str(exc)
        print(f"agft: config error: {msg}", file=sys.stderr)
        return EXIT_CONFIG
    except Exception as exc:  # noqa: BLE001 - any other failure is a runtime error
        logging.getLogger("agft").debug("runtime failure", exc_info=True)
        print(f"agft: runtime failure: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
