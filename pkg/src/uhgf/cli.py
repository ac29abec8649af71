"""Command-line entry point: ``uhgf <subcommand> [options]``.

Exit status is 0 on success, 1 on a usage error and 2 when the
configuration (config file, network file, series file or option values)
cannot be used. A classic-mode crash inside a run is reported in the
output files and is not a process failure.
"""

import argparse
import json
import os
import sys
from dataclasses import asdict

from .harness import (
    PRESETS,
    SCAN_COLUMNS,
    KL_GRID_COLUMNS,
    ConfigError,
    FilterConfig,
    KlGridConfig,
    ScanConfig,
    SeriesSpec,
    generate_series,
    read_series_csv,
    run_compare,
    run_filter,
    run_kl_grid,
    run_param_scan,
    series_stats,
    write_json,
    write_series_csv,
    write_table,
)
from .network import CLASSIC, MODES, TRAJECTORY_HEADER, UHGF, Network, NetworkError

EXIT_USAGE = 1
EXIT_CONFIG = 2

CONFIG_SECTIONS = {
    "seed": None,
    "threads": None,
    "kl_grid": {"alpha", "ratios", "gammas", "refine_tol"},
    "series": {"seed", "length", "regimes", "noise_sd"},
    "filter": {"preset", "mode", "omega1", "omega2", "alpha_u", "kappa",
               "mu1", "pi1", "mu2", "pi2"},
    "scan": {"preset", "omega1", "omega2"},
}


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _positive_int(text):
    try:
        value = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not an integer: {text!r}")
    if value < 1:
        raise argparse.ArgumentTypeError("must be at least 1")
    return value


def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON config file (see README)")
    common.add_argument("--out", default=".", help="output directory (created if missing)")
    common.add_argument("--seed", type=int, help="seed of the synthetic series")
    common.add_argument("--threads", type=_positive_int,
                        help="worker processes for grid scans (default 1)")
    common.add_argument("--format", choices=("csv", "json"), default="csv",
                        help="format of table outputs; summaries are always JSON")

    parser = _Parser(prog="uhgf", description="uHGF simulation harness")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    sub.add_parser("kl-grid", parents=[common],
                   help="approximation quality over (beta/alpha, gamma)")
    sub.add_parser("gen-series", parents=[common], help="write the synthetic series")

    for name, text in (("filter", "filter one series in one mode"),
                       ("compare", "filter in both modes and diff the trajectories")):
        p = sub.add_parser(name, parents=[common], help=text)
        p.add_argument("--input", help="series CSV: observation[,true mean] per line")
        p.add_argument("--preset", choices=sorted(PRESETS), help="parameter preset")
        p.add_argument("--network", help="network JSON file (replaces the two-level model)")
        p.add_argument("--omega1", type=float)
        p.add_argument("--omega2", type=float)
        p.add_argument("--alpha-u", dest="alpha_u", type=float)
        if name == "filter":
            p.add_argument("--mode", choices=MODES)

    p = sub.add_parser("scan", parents=[common], help="coverage over (omega1, omega2)")
    p.add_argument("--input", help="series CSV to scan on instead of the synthetic one")
    p.add_argument("--preset", dest="grid_preset", choices=("desk", "full"),
                   help="grid preset")
    return parser


# ---------------------------------------------------------------------------
# configuration
# ---------------------------------------------------------------------------


def load_config(path):
    if path is None:
        return {}
    try:
        with open(path) as fh:
            cfg = json.load(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc.strerror}")
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config {path} is not valid JSON: {exc}")
    if not isinstance(cfg, dict):
        raise ConfigError("config must be a JSON object")
    for key, value in cfg.items():
        if key not in CONFIG_SECTIONS:
            raise ConfigError(f"unknown config key {key!r}")
        allowed = CONFIG_SECTIONS[key]
        if allowed is None:
            continue
        if not isinstance(value, dict):
            raise ConfigError(f"config section {key!r} must be an object")
        extra = set(value) - allowed
        if extra:
            raise ConfigError(f"unknown keys in {key!r}: {sorted(extra)}")
    return cfg


def _build(cls, values, section):
    try:
        return cls(**values)
    except TypeError as exc:
        raise ConfigError(f"bad {section} settings: {exc}")


def series_spec(args, cfg):
    values = dict(cfg.get("series", {}))
    if args.seed is not None:
        values["seed"] = args.seed
    elif "seed" in cfg:
        values.setdefault("seed", cfg["seed"])
    return _build(SeriesSpec, values, "series")


def load_series(args, cfg):
    if getattr(args, "input", None):
        if not os.path.exists(args.input):
            raise ConfigError(f"series file {args.input} does not exist")
        return read_series_csv(args.input)
    return generate_series(series_spec(args, cfg))


def filter_config(args, cfg):
    section = dict(cfg.get("filter", {}))
    section.pop("mode", None)
    preset = args.preset or section.pop("preset", None) or "standard"
    section.pop("preset", None)
    if preset not in PRESETS:
        raise ConfigError(f"unknown filter preset {preset!r}")
    values = asdict(PRESETS[preset])
    values.update(section)
    for name in ("omega1", "omega2", "alpha_u"):
        if getattr(args, name, None) is not None:
            values[name] = getattr(args, name)
    return _build(FilterConfig, values, "filter")


def filter_network(args, cfg, series):
    if args.network:
        try:
            return Network.load(args.network)
        except OSError as exc:
            raise ConfigError(f"cannot read network {args.network}: {exc.strerror}")
        except (json.JSONDecodeError, KeyError, TypeError) as exc:
            raise ConfigError(f"network file {args.network} is malformed: {exc}")
    return filter_config(args, cfg).network(series)


def threads(args, cfg):
    n = args.threads if args.threads is not None else cfg.get("threads", 1)
    if not isinstance(n, int) or n < 1:
        raise ConfigError("threads must be a positive integer")
    return n


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------


def _table_path(out, stem, fmt):
    return os.path.join(out, f"{stem}.{fmt}")


def _write_trajectory(traj, out, stem, fmt):
    path = _table_path(out, stem, fmt)
    if fmt == "csv":
        traj.to_csv(path)
    else:
        write_table([asdict(r) for r in traj.records], TRAJECTORY_HEADER, path, "json")
    return path


def cmd_kl_grid(args, cfg):
    grid_cfg = _build(KlGridConfig, cfg.get("kl_grid", {}), "kl_grid")
    rows, summary = run_kl_grid(grid_cfg, threads(args, cfg))
    write_table(rows, KL_GRID_COLUMNS, _table_path(args.out, "kl_grid", args.format), args.format)
    write_json(summary, os.path.join(args.out, "summary.json"))
    print(f"cells {summary['n_cells']}: classic failures {summary['classic_failures']}, "
          f"uhgf successes {summary['uhgf_successes']}, "
          f"mean KL classic {summary['mean_kl_classic']:.4g} uhgf {summary['mean_kl_uhgf']:.4g}")


def cmd_gen_series(args, cfg):
    spec = series_spec(args, cfg)
    series = generate_series(spec)
    if args.format == "csv":
        write_series_csv(series, os.path.join(args.out, "series.csv"))
    else:
        write_json({"u": series.u.tolist(), "truth": series.truth.tolist()},
                   os.path.join(args.out, "series.json"))
    summary = {"schema_version": 1, "report": "series", "seed": spec.seed,
               "noise_sd": spec.noise_sd, "regimes": [list(r) for r in spec.regimes]}
    summary.update(series_stats(series))
    write_json(summary, os.path.join(args.out, "summary.json"))
    print(f"{summary['length']} observations, seed {spec.seed}")


def cmd_filter(args, cfg):
    mode = args.mode or cfg.get("filter", {}).get("mode", UHGF)
    if mode not in MODES:
        raise ConfigError(f"filter mode must be one of {MODES}")
    series = load_series(args, cfg)
    traj, summary = run_filter(series, filter_network(args, cfg, series), mode)
    _write_trajectory(traj, args.out, "trajectory", args.format)
    write_json(summary, os.path.join(args.out, "summary.json"))
    if traj.completed:
        print(f"{mode}: completed {traj.n_steps} steps")
    else:
        f = traj.failure
        print(f"{mode}: failed at step {f.step} on node {f.node} ({f.reason}, pi={f.pi:.6g})")


def cmd_compare(args, cfg):
    series = load_series(args, cfg)
    trajs, summary = run_compare(series, filter_network(args, cfg, series))
    for mode, traj in trajs.items():
        _write_trajectory(traj, args.out, f"trajectory_{mode}", args.format)
    write_json(summary, os.path.join(args.out, "summary.json"))
    c, u = summary[CLASSIC], summary[UHGF]
    if c["failure"]:
        print(f"classic: failed at step {c['failure']['step']} on node {c['failure']['node']}")
    else:
        print(f"classic: completed {c['n_steps']} steps")
    mins = ", ".join(f"{n}={v:.6g}" for n, v in u["min_pi"].items() if v is not None)
    state = "completed" if u["completed"] else "failed"
    print(f"uhgf: {state} {u['n_steps']} steps, min precision {mins}")


def cmd_scan(args, cfg):
    section = dict(cfg.get("scan", {}))
    preset = args.grid_preset or section.pop("preset", None) or "desk"
    section.pop("preset", None)
    scan_cfg = ScanConfig.preset(preset)
    try:
        scan_cfg = ScanConfig(
            tuple(section.get("omega1", scan_cfg.omega1)),
            tuple(section.get("omega2", scan_cfg.omega2)),
            filter_config(args, cfg),
        )
    except (TypeError, ValueError) as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError(f"bad scan settings: {exc}")
    series = load_series(args, cfg)
    rows, summary = run_param_scan(scan_cfg, series, threads(args, cfg))
    write_table(rows, SCAN_COLUMNS, _table_path(args.out, "scan", args.format), args.format)
    write_json(summary, os.path.join(args.out, "summary.json"))
    print(f"{summary['n_cells']} cells: classic coverage {summary['classic_coverage']:.2%}, "
          f"uhgf coverage {summary['uhgf_coverage']:.2%}")


COMMANDS = {
    "kl-grid": cmd_kl_grid,
    "gen-series": cmd_gen_series,
    "filter": cmd_filter,
    "compare": cmd_compare,
    "scan": cmd_scan,
}


def main(argv=None):
    args = build_parser().parse_args(argv)
    # scan reuses the filter parameter plumbing without exposing its options
    for name in ("preset", "network", "omega1", "omega2", "alpha_u", "input"):
        if not hasattr(args, name):
            setattr(args, name, None)
    try:
        cfg = load_config(args.config)
        os.makedirs(args.out, exist_ok=True)
        COMMANDS[args.command](args, cfg)
    except (ConfigError, NetworkError, ValueError) as exc:
        print(f"uhgf: configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except OSError as exc:
        print(f"uhgf: cannot write output: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    return 0


if __name__ == "__main__":
    sys.exit(main())
