"""Gaussian updates for a volatility parent in canonical form.

Two rules live here. ``classic_update`` expands J to second order at the
prediction gamma and fails when the curvature there is convex.
``uhgf_update`` never fails: it takes a first expansion at gamma whose
precision comes from the concave energy K, a second expansion at the
Lambert-W estimate of the other mode of J, weighs the two by the exact
energy at their means and collapses the mixture to one Gaussian.
"""

import math
from dataclasses import dataclass

from .energy import coupling_terms, energy_J
from .special import lambert_w0_of_exp, stable_sigmoid


class NegativePrecision(ArithmeticError):
    """The classic quadratic approximation produced a non-positive precision.

    Recoverable: callers record it and carry on (or stop a run).
    """

    def __init__(self, pi, node=None, step=None):
        self.pi = pi
        self.node = node
        self.step = step
        where = ""
        if node is not None:
            where = f" at node {node!r}"
        if step is not None:
            where += f" (step {step})"
        super().__init__(f"non-positive posterior precision {pi!r}{where}")


@dataclass(frozen=True)
class Gaussian:
    mu: float
    pi: float

    @property
    def variance(self):
        return 1.0 / self.pi


@dataclass(frozen=True)
class Expansion:
    """A quadratic expansion of the energy, i.e. one Gaussian component.

    ``used_fallback`` is set when the curvature of J at ``point`` was not
    concave and the concave K curvature was used instead.
    """

    mu: float
    pi: float
    point: float
    used_fallback: bool = False


@dataclass(frozen=True)
class UpdateDiagnostics:
    b: float
    x_star: float
    expansions: tuple
    classic_pi: float
    classic_failed: bool
    weights: tuple = ()
    x_stars: tuple = ()
    clamped: bool = False


def lambert_mode(beta, gamma, prior_precision=0.5):
    """Approximate mode of the energy in the log-variance variable.

    Solves ``beta * exp(-y) = 1 + 2 * prior_precision * (y - gamma)``, the
    stationarity condition when the child's previous variance vanishes, as

        y = gamma - s + W0(beta / (2 pi) * exp(s - gamma)),   s = 1 / (2 pi)

    with ``pi = prior_precision``. When W0 is large the equivalent form
    ``log(beta / (2 pi)) - log W0`` is used; it avoids cancelling the two
    large terms ``s`` and ``W0`` when the prior is nearly flat.
    """
    s = 0.5 / prior_precision
    log_scaled_beta = math.log(beta) - math.log(2.0 * prior_precision)
    w = lambert_w0_of_exp(log_scaled_beta + s - gamma)
    if w > 1.0:
        return log_scaled_beta - math.log(w)
    return gamma - s + w


def canonical_mode(beta, gamma):
    """x* = gamma - 1 + W0(beta * e^(1 - gamma))."""
    return lambert_mode(beta, gamma, 0.5)


def classic_update(p):
    """Second-order expansion of J at gamma.

    Raises ``NegativePrecision`` when -J''(gamma) <= 0.
    """
    w, delta, _, _, _ = coupling_terms(p.gamma, p.alpha, p.beta)
    pi = 0.5 * w * (w + (2.0 * w - 1.0) * delta) + 0.5
    if not pi > 0.0:
        raise NegativePrecision(pi)
    return Gaussian(p.gamma + w / (2.0 * pi) * delta, pi)


def expansion_l1(p):
    w, delta, _, _, _ = coupling_terms(p.gamma, p.alpha, p.beta)
    pi = 0.5 * w * (1.0 - w) + 0.5
    return Expansion(p.gamma + w / (2.0 * pi) * delta, pi, p.gamma, False)


def expansion_l2(p, x_star=None):
    if x_star is None:
        x_star = canonical_mode(p.beta, p.gamma)
    w, delta, _, _, _ = coupling_terms(x_star, p.alpha, p.beta)
    pi = 0.5 * w * (w + (2.0 * w - 1.0) * delta) + 0.5
    fallback = not pi > 0.0
    if fallback:
        pi = 0.5 * w * (1.0 - w) + 0.5
    grad = 0.5 * w * delta - 0.5 * (x_star - p.gamma)
    return Expansion(x_star + grad / pi, pi, x_star, fallback)


def blend_weight(p, e1, e2):
    """Weight of the second expansion: sigmoid of J(mu2) - J(mu1)."""
    return stable_sigmoid(energy_J(e2.mu, p) - energy_J(e1.mu, p))


def _blend_pair(p, e1, e2):
    # both weights straight from the sigmoid: 1 - b loses all digits once b
    # is within a few ulps of 1
    d = energy_J(e2.mu, p) - energy_J(e1.mu, p)
    return stable_sigmoid(d), stable_sigmoid(-d)


def moment_match(e1, e2, b, b_complement=None):
    """Single Gaussian with the mean and variance of
    ``(1 - b) N(mu1, 1/pi1) + b N(mu2, 1/pi2)``.

    ``b_complement`` may carry an accurately computed ``1 - b``.
    """
    a = 1.0 - b if b_complement is None else b_complement
    if b == 0.0:
        return Gaussian(e1.mu, e1.pi)
    if a == 0.0:
        return Gaussian(e2.mu, e2.pi)
    mu = a * e1.mu + b * e2.mu
    var = a / e1.pi + b / e2.pi + a * b * (e1.mu - e2.mu) ** 2
    return Gaussian(mu, 1.0 / var)


def uhgf_update(p):
    """Positive-precision Gaussian update; returns ``(Gaussian, UpdateDiagnostics)``."""
    e1 = expansion_l1(p)
    x_star = canonical_mode(p.beta, p.gamma)
    e2 = expansion_l2(p, x_star)
    b, a = _blend_pair(p, e1, e2)
    result = moment_match(e1, e2, b, a)

    w, delta, _, _, _ = coupling_terms(p.gamma, p.alpha, p.beta)
    classic_pi = 0.5 * w * (w + (2.0 * w - 1.0) * delta) + 0.5
    diag = UpdateDiagnostics(
        b=b,
        x_star=x_star,
        expansions=(e1, e2),
        classic_pi=classic_pi,
        classic_failed=not classic_pi > 0.0,
    )
    return result, diag
