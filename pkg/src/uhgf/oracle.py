"""Brute-force reference posterior by quadrature.

The variational posterior of a node is exp(energy) normalized over the
real line. Here it is tabulated on a uniform grid with the trapezoid rule
(accumulated in log space), which is all the reference checks need: the
energies are smooth and their quadratic tails make truncation negligible.

Deliberately independent of ``uhgf.approx`` so it can check that module.
"""

import csv
import math
from dataclasses import dataclass

import numpy as np

from .special import lambert_w0_of_exp

# exp() underflows to zero below this
LOG_TINY = -745.0


class QuadratureError(RuntimeError):
    def __init__(self, achieved, wanted):
        self.achieved = achieved
        self.wanted = wanted
        super().__init__(
            f"quadrature did not converge: |d log Z| = {achieved:.3g} > {wanted:.3g}"
        )


@dataclass(frozen=True)
class QuadratureSpec:
    lo: float
    hi: float
    n_points: int = 2049
    refine_tol: float = 1e-9
    max_refinements: int = 6

    def __post_init__(self):
        if not self.lo < self.hi:
            raise ValueError(f"need lo < hi, got [{self.lo}, {self.hi}]")
        if self.n_points < 64:
            raise ValueError("n_points must be at least 64")
        if not self.refine_tol > 0:
            raise ValueError("refine_tol must be positive")


@dataclass(frozen=True)
class DensityTable:
    grid: np.ndarray
    log_density: np.ndarray
    log_z: float

    def to_csv(self, path):
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["x", "log_density"])
            for x, ld in zip(self.grid, self.log_density):
                writer.writerow([format(float(x), ".17g"), format(float(ld), ".17g")])


def _trapezoid_weights(n, step):
    w = np.full(n, step)
    w[0] = w[-1] = 0.5 * step
    return w


def _log_trapezoid(log_f, step):
    log_w = np.log(_trapezoid_weights(log_f.size, step))
    terms = log_f + log_w
    m = np.max(terms)
    if not np.isfinite(m):
        return float(m)
    return float(m + np.log(np.sum(np.exp(terms - m))))


def _evaluate(energy, grid, vectorized):
    if vectorized:
        values = np.asarray(energy(grid), dtype=float)
    else:
        values = np.fromiter((energy(float(x)) for x in grid), float, grid.size)
    if not np.all(np.isfinite(values)):
        raise ValueError("energy is not finite on the quadrature window")
    return values


def normalize_posterior(energy, spec, vectorized=False):
    """Tabulate ``exp(energy)`` normalized on ``[spec.lo, spec.hi]``.

    The grid is doubled until log Z moves by at most ``spec.refine_tol``.
    Pass ``vectorized=True`` when ``energy`` accepts a numpy array.
    """
    n = spec.n_points
    grid = np.linspace(spec.lo, spec.hi, n)
    values = _evaluate(energy, grid, vectorized)
    log_z = _log_trapezoid(values, grid[1] - grid[0])
    change = math.inf
    for _ in range(spec.max_refinements):
        n = 2 * n - 1
        fine = np.linspace(spec.lo, spec.hi, n)
        # reuse the coarse values at the even nodes
        fine_values = np.empty(n)
        fine_values[0::2] = values
        fine_values[1::2] = _evaluate(energy, fine[1::2], vectorized)
        new_log_z = _log_trapezoid(fine_values, fine[1] - fine[0])
        change = abs(new_log_z - log_z)
        grid, values, log_z = fine, fine_values, new_log_z
        if change <= spec.refine_tol:
            break
    else:
        raise QuadratureError(change, spec.refine_tol)
    return DensityTable(grid, values - log_z, log_z)


def _weights_and_density(table):
    step = table.grid[1] - table.grid[0]
    p = np.where(table.log_density > LOG_TINY, np.exp(table.log_density), 0.0)
    return _trapezoid_weights(table.grid.size, step), p


def posterior_moments(table):
    """Mean and variance of the tabulated density."""
    w, p = _weights_and_density(table)
    mean = float(np.sum(w * p * table.grid))
    var = float(np.sum(w * p * (table.grid - mean) ** 2))
    return mean, var


def kl_divergence(table, q):
    """D_KL(p || q) of the tabulated p from a Gaussian q (mean ``q.mu``,
    precision ``q.pi``). Round-off negatives are clamped to zero."""
    if not q.pi > 0:
        raise ValueError("q must have positive precision")
    w, p = _weights_and_density(table)
    log_q = 0.5 * math.log(q.pi / (2.0 * math.pi)) - 0.5 * q.pi * (table.grid - q.mu) ** 2
    mask = p > 0
    d = float(np.sum(w[mask] * p[mask] * (table.log_density[mask] - log_q[mask])))
    return max(d, 0.0)


def window_for(centres, half_width, max_step=0.01, refine_tol=1e-9):
    lo = min(centres) - half_width
    hi = max(centres) + half_width
    n = int(math.ceil((hi - lo) / max_step)) + 1
    return QuadratureSpec(lo, hi, max(n, 64), refine_tol)


def auto_window(p, margin=12.0, max_step=0.01):
    """Window covering the prediction gamma and the second mode of J.

    The mode is computed here from the Lambert W closed form directly,
    not through ``uhgf.approx``.
    """
    x_mode = p.gamma - 1.0 + lambert_w0_of_exp(math.log(p.beta) + 1.0 - p.gamma)
    return window_for((p.gamma, x_mode), margin, max_step)


def canonical_posterior(p, spec=None):
    """Normalized exp(J) for canonical parameters ``p`` (vectorized J)."""
    if spec is None:
        spec = auto_window(p)
    log_alpha = math.log(p.alpha)

    def energy(x):
        log_d = np.logaddexp(log_alpha, x)
        return -0.5 * log_d - 0.5 * np.exp(math.log(p.beta) - log_d) - 0.25 * (x - p.gamma) ** 2

    return normalize_posterior(energy, spec, vectorized=True)
