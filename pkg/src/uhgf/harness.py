"""Simulation harness: approximation-quality grid, synthetic series, filter
runs and parameter-space coverage scans, with CSV/JSON reports.
"""

import csv
import json
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from .approx import NegativePrecision, classic_update, uhgf_update
from .energy import CanonicalParams
from .network import CLASSIC, UHGF, Network, filter_sequence, two_level_network
from .oracle import QuadratureError, auto_window, canonical_posterior, kl_divergence

REPORT_SCHEMA_VERSION = 1

KL_GRID_COLUMNS = ["beta_over_alpha", "gamma", "classic_status", "classic_kl", "uhgf_kl"]
SCAN_COLUMNS = ["omega1", "omega2", "classic_ok", "uhgf_ok", "fail_step"]


class ConfigError(ValueError):
    """A harness configuration that cannot be run."""


# ---------------------------------------------------------------------------
# Report formatting
# ---------------------------------------------------------------------------


def fmt_float(x):
    if x is None or (isinstance(x, float) and not math.isfinite(x)):
        return ""
    return format(float(x), ".17g")


def _json_value(obj, indent, level):
    pad = " " * (indent * (level + 1))
    end = " " * (indent * level)
    if isinstance(obj, bool) or obj is None:
        return json.dumps(obj)
    if isinstance(obj, (int, np.integer)):
        return str(int(obj))
    if isinstance(obj, (float, np.floating)):
        if not math.isfinite(obj):
            return "null"
        text = format(float(obj), ".17g")
        return text if any(c in text for c in ".en") else text + ".0"
    if isinstance(obj, str):
        return json.dumps(obj)
    if isinstance(obj, dict):
        if not obj:
            return "{}"
        items = [f"{pad}{json.dumps(str(k))}: {_json_value(v, indent, level + 1)}"
                 for k, v in obj.items()]
        return "{\n" + ",\n".join(items) + "\n" + end + "}"
    if isinstance(obj, (list, tuple, np.ndarray)):
        if len(obj) == 0:
            return "[]"
        items = [f"{pad}{_json_value(v, indent, level + 1)}" for v in obj]
        return "[\n" + ",\n".join(items) + "\n" + end + "]"
    raise TypeError(f"cannot serialize {type(obj).__name__}")


def dumps_json(obj, indent=2):
    """JSON with insertion-ordered keys and 17-significant-digit floats,
    so reports diff cleanly between runs."""
    return _json_value(obj, indent, 0) + "\n"


def write_json(obj, path):
    with open(path, "w") as fh:
        fh.write(dumps_json(obj))


def write_table(rows, columns, path, fmt="csv"):
    """Write a list of dicts as CSV (floats in .17g) or as a JSON list."""
    if fmt == "json":
        write_json([{c: r[c] for c in columns} for r in rows], path)
        return
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(columns)
        for r in rows:
            writer.writerow([
                fmt_float(r[c]) if isinstance(r[c], float) else
                ("" if r[c] is None else str(r[c]).lower() if isinstance(r[c], bool) else r[c])
                for c in columns
            ])


def _pool_map(fn, jobs, threads):
    if threads <= 1:
        return [fn(j) for j in jobs]
    with ProcessPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(fn, jobs, chunksize=max(1, len(jobs) // (8 * threads))))


# ---------------------------------------------------------------------------
# Approximation quality over (beta / alpha, gamma)
# ---------------------------------------------------------------------------


def default_ratios():
    return [float(r) for r in np.geomspace(1.0, 200.0, 8)]


def default_gammas():
    return [float(g) for g in np.linspace(-15.0, 15.0, 61)]


@dataclass
class KlGridConfig:
    alpha: float = 0.005
    ratios: list = field(default_factory=default_ratios)
    gammas: list = field(default_factory=default_gammas)
    refine_tol: float = 1e-9

    def __post_init__(self):
        if not self.alpha > 0:
            raise ConfigError("kl_grid.alpha must be positive")
        if not self.ratios or any(not r > 0 for r in self.ratios):
            raise ConfigError("kl_grid.ratios must be a non-empty list of positive numbers")
        if not self.gammas or any(not math.isfinite(g) for g in self.gammas):
            raise ConfigError("kl_grid.gammas must be a non-empty list of finite numbers")


def kl_cell(job):
    """Classic and uHGF divergence from the quadrature posterior at one cell."""
    alpha, ratio, gamma, refine_tol = job
    p = CanonicalParams(alpha, ratio * alpha, gamma)
    row = {"beta_over_alpha": ratio, "gamma": gamma, "classic_status": "ok",
           "classic_kl": None, "uhgf_kl": None, "uhgf_status": "ok"}
    try:
        spec = replace(auto_window(p), refine_tol=refine_tol)
        table = canonical_posterior(p, spec)
    except (QuadratureError, ValueError) as exc:
        row["classic_status"] = row["uhgf_status"] = "quadrature_error"
        row["error"] = str(exc)
        return row
    try:
        row["classic_kl"] = kl_divergence(table, classic_update(p))
    except NegativePrecision:
        row["classic_status"] = "negative_precision"
    q, _ = uhgf_update(p)
    if q.pi > 0 and math.isfinite(q.mu):
        row["uhgf_kl"] = kl_divergence(table, q)
    else:
        row["uhgf_status"] = "invalid"
    return row


def run_kl_grid(cfg=None, threads=1):
    """Returns ``(rows, summary)``; rows are sorted by (ratio, gamma)."""
    cfg = cfg or KlGridConfig()
    jobs = [(cfg.alpha, float(r), float(g), cfg.refine_tol)
            for r in sorted(cfg.ratios) for g in sorted(cfg.gammas)]
    rows = _pool_map(kl_cell, jobs, threads)
    rows.sort(key=lambda r: (r["beta_over_alpha"], r["gamma"]))

    n = len(rows)
    classic_fail = sum(r["classic_status"] == "negative_precision" for r in rows)
    uhgf_ok = sum(r["uhgf_status"] == "ok" for r in rows)
    both = [r for r in rows if r["classic_status"] == "ok" and r["uhgf_status"] == "ok"]
    mean_classic = float(np.mean([r["classic_kl"] for r in both])) if both else None
    mean_uhgf_both = float(np.mean([r["uhgf_kl"] for r in both])) if both else None
    uhgf_kls = [r["uhgf_kl"] for r in rows if r["uhgf_status"] == "ok"]
    summary = {
        "schema_version": REPORT_SCHEMA_VERSION,
        "report": "kl_grid",
        "alpha": cfg.alpha,
        "n_cells": n,
        "classic_failures": classic_fail,
        "classic_failure_rate": classic_fail / n,
        "quadrature_errors": sum(r["classic_status"] == "quadrature_error" for r in rows),
        "uhgf_successes": uhgf_ok,
        "uhgf_success_rate": uhgf_ok / n,
        "mean_kl_classic": mean_classic,
        "mean_kl_uhgf": mean_uhgf_both,
        "mean_kl_uhgf_all": float(np.mean(uhgf_kls)) if uhgf_kls else None,
        "kl_ratio_classic_over_uhgf": (
            mean_classic / mean_uhgf_both if both and mean_uhgf_both > 0 else None
        ),
    }
    return rows, summary


# ---------------------------------------------------------------------------
# Synthetic series
# ---------------------------------------------------------------------------


def default_regimes():
    return [(0.0, 80), (80.0, 80), (0.0, 80), (80.0, 80)]


@dataclass
class SeriesSpec:
    """Piecewise-constant mean plus Gaussian noise.

    Noise comes from numpy's PCG64 bit generator seeded with ``seed``; the
    whole noise vector is one ``standard_normal(length)`` draw, so a given
    seed and length always give the same series.
    """

    seed: int = 7
    length: int = 320
    regimes: list = field(default_factory=default_regimes)
    noise_sd: float = math.sqrt(1000.0)

    def __post_init__(self):
        self.regimes = [(float(level), int(n)) for level, n in self.regimes]
        if self.length <= 0:
            raise ConfigError("series.length must be positive")
        if any(n <= 0 for _, n in self.regimes):
            raise ConfigError("series regime durations must be positive")
        if self.regimes and sum(n for _, n in self.regimes) != self.length:
            raise ConfigError("series regime durations must add up to series.length")
        if not self.noise_sd >= 0:
            raise ConfigError("series.noise_sd must be non-negative")


@dataclass
class Series:
    u: np.ndarray
    truth: np.ndarray = None

    def __len__(self):
        return len(self.u)


def generate_series(spec=None):
    spec = spec or SeriesSpec()
    if spec.regimes:
        truth = np.concatenate([np.full(n, level) for level, n in spec.regimes])
    else:
        truth = np.zeros(spec.length)
    rng = np.random.Generator(np.random.PCG64(spec.seed))
    noise = rng.standard_normal(spec.length)
    return Series(truth + spec.noise_sd * noise, truth)


def series_stats(series):
    u = np.asarray(series.u)
    return {
        "length": int(u.size),
        "mean": float(np.mean(u)),
        "sd": float(np.std(u)),
        "min": float(np.min(u)),
        "max": float(np.max(u)),
        "sum": float(np.sum(u)),
    }


def write_series_csv(series, path):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        for i, u in enumerate(series.u):
            row = [fmt_float(u)]
            if series.truth is not None:
                row.append(fmt_float(series.truth[i]))
            writer.writerow(row)


def read_series_csv(path):
    """One observation per line, optional second column with the true mean.
    A non-numeric first line is taken as a header."""
    u, truth = [], []
    with open(path, newline="") as fh:
        for i, row in enumerate(csv.reader(fh)):
            if not row or not row[0].strip():
                continue
            try:
                vals = [float(v) for v in row[:2] if v.strip()]
            except ValueError:
                if i == 0:
                    continue
                raise ConfigError(f"{path}:{i + 1}: not a number: {row!r}")
            u.append(vals[0])
            if len(vals) > 1:
                truth.append(vals[1])
    if not u:
        raise ConfigError(f"{path}: no observations")
    if truth and len(truth) != len(u):
        raise ConfigError(f"{path}: ground-truth column is incomplete")
    return Series(np.array(u), np.array(truth) if truth else None)


# ---------------------------------------------------------------------------
# Filtering
# ---------------------------------------------------------------------------


@dataclass
class FilterConfig:
    """Two-level continuous HGF. ``mu1=None`` starts level 1 at the first
    observation."""

    omega1: float = 2.0
    omega2: float = -1.0
    alpha_u: float = 1000.0
    kappa: float = 1.0
    mu1: float = None
    pi1: float = 1.0
    mu2: float = 0.0
    pi2: float = 1.0

    def __post_init__(self):
        if not self.alpha_u > 0:
            raise ConfigError("filter.alpha_u must be positive")
        if not self.kappa > 0:
            raise ConfigError("filter.kappa must be positive")
        if not (self.pi1 > 0 and self.pi2 > 0):
            raise ConfigError("filter prior precisions must be positive")

    def network(self, series):
        mu1 = float(series.u[0]) if self.mu1 is None else self.mu1
        return two_level_network(self.omega1, self.omega2, self.alpha_u,
                                 mu1, self.pi1, self.mu2, self.pi2, self.kappa)


PRESETS = {
    "standard": FilterConfig(omega1=2.0, omega2=-1.0, alpha_u=1000.0),
    "robust": FilterConfig(omega1=2.0, omega2=2.0, alpha_u=1000.0),
}


def trajectory_summary(traj, series=None, level1="x1"):
    out = {
        "mode": traj.mode,
        "completed": traj.completed,
        "n_steps": traj.n_steps,
        "n_inputs": len(series) if series is not None else None,
        "failure": None,
        "min_pi": {n: (v if math.isfinite(v) else None) for n, v in traj.min_pi.items()},
        "min_pi_hat": {n: (v if math.isfinite(v) else None) for n, v in traj.min_pi_hat.items()},
        "rmse_level1": None,
    }
    if traj.failure is not None:
        out["failure"] = {"step": traj.failure.step, "node": traj.failure.node,
                          "reason": traj.failure.reason, "pi": traj.failure.pi}
    if series is not None and series.truth is not None and traj.records and level1 in traj.node_ids:
        mu = np.array(traj.series(level1))
        out["rmse_level1"] = float(np.sqrt(np.mean((mu - series.truth[: mu.size]) ** 2)))
    return out


def run_filter(series, network, mode=UHGF):
    """Filter ``series`` through ``network``; returns ``(Trajectory, summary)``."""
    traj = filter_sequence(network, [float(u) for u in series.u], mode)
    summary = {"schema_version": REPORT_SCHEMA_VERSION, "report": "filter"}
    summary.update(trajectory_summary(traj, series))
    return traj, summary


def run_compare(series, network):
    """Run both modes on the same input and diff the trajectories."""
    trajs = {m: filter_sequence(network, [float(u) for u in series.u], m) for m in (CLASSIC, UHGF)}
    common = min(t.n_steps for t in trajs.values())
    diffs = {}
    for n in trajs[UHGF].node_ids:
        a = np.array(trajs[CLASSIC].series(n)[:common])
        b = np.array(trajs[UHGF].series(n)[:common])
        diffs[n] = {
            "max_abs_mu_diff": float(np.max(np.abs(a - b))) if common else None,
            "rmse_mu_diff": float(np.sqrt(np.mean((a - b) ** 2))) if common else None,
        }
    summary = {
        "schema_version": REPORT_SCHEMA_VERSION,
        "report": "compare",
        "common_steps": common,
        CLASSIC: trajectory_summary(trajs[CLASSIC], series),
        UHGF: trajectory_summary(trajs[UHGF], series),
        "differences": diffs,
    }
    return trajs, summary


# ---------------------------------------------------------------------------
# Coverage over (omega1, omega2)
# ---------------------------------------------------------------------------


def axis(lo, hi, step):
    n = int(round((hi - lo) / step)) + 1
    if n < 1:
        raise ConfigError(f"empty axis [{lo}, {hi}] step {step}")
    return [round(lo + i * step, 10) for i in range(n)]


@dataclass
class ScanConfig:
    omega1: tuple = (-16.0, 2.0, 1.0)
    omega2: tuple = (-16.0, 2.0, 1.0)
    base: FilterConfig = field(default_factory=lambda: FilterConfig())

    def __post_init__(self):
        for name in ("omega1", "omega2"):
            lo, hi, step = getattr(self, name)
            if not (step > 0 and hi >= lo):
                raise ConfigError(f"scan.{name} must be [lo, hi, step] with hi >= lo, step > 0")

    @classmethod
    def preset(cls, name):
        if name == "desk":
            return cls((-16.0, 2.0, 1.0), (-16.0, 2.0, 1.0))
        if name == "full":
            return cls((-16.0, 2.0, 0.1), (-16.0, 2.0, 0.1))
        raise ConfigError(f"unknown scan preset {name!r}")

    def cells(self):
        return [(w1, w2) for w1 in axis(*self.omega1) for w2 in axis(*self.omega2)]


def _run_ok(series, cfg, mode):
    traj = filter_sequence(cfg.network(series), series.u.tolist(), mode, record=False)
    if not traj.completed:
        return False, traj.failure.step
    return True, None


def scan_cell(job):
    u, truth, base, w1, w2 = job
    series = Series(np.asarray(u), truth)
    cfg = FilterConfig(**{**asdict(base), "omega1": w1, "omega2": w2})
    classic_ok, fail_step = _run_ok(series, cfg, CLASSIC)
    uhgf_ok, _ = _run_ok(series, cfg, UHGF)
    return {"omega1": w1, "omega2": w2, "classic_ok": classic_ok,
            "uhgf_ok": uhgf_ok, "fail_step": fail_step}


def run_param_scan(cfg, series, threads=1):
    """Returns ``(rows, summary)``; one row per (omega1, omega2) cell."""
    jobs = [(series.u, None, cfg.base, w1, w2) for w1, w2 in cfg.cells()]
    rows = _pool_map(scan_cell, jobs, threads)
    rows.sort(key=lambda r: (r["omega1"], r["omega2"]))
    n = len(rows)
    c_ok = sum(r["classic_ok"] for r in rows)
    u_ok = sum(r["uhgf_ok"] for r in rows)
    summary = {
        "schema_version": REPORT_SCHEMA_VERSION,
        "report": "scan",
        "n_cells": n,
        "omega1_axis": list(cfg.omega1),
        "omega2_axis": list(cfg.omega2),
        "classic_successes": c_ok,
        "classic_coverage": c_ok / n,
        "uhgf_successes": u_ok,
        "uhgf_coverage": u_ok / n,
        "classic_only_failures": sum((not r["classic_ok"]) and r["uhgf_ok"] for r in rows),
    }
    return rows, summary


def load_network(path):
    return Network.load(path)
