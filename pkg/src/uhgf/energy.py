"""Canonical variational energy J(x; alpha, beta, gamma) of a volatility parent.

    J(x) = -1/2 log(alpha + e^x) - 1/2 beta / (alpha + e^x) - 1/4 (x - gamma)^2

``alpha`` is the child's previous variance, ``beta`` the child's total
posterior uncertainty (variance plus squared value prediction error) and
``gamma`` the parent's predicted mean. J splits into a concave log term
(j1), a sigmoid-shaped term that can be convex (j2) and the quadratic
prior (j3). Dropping j2 gives the concave energy K.
"""

import math
from collections import namedtuple
from dataclasses import dataclass

EXP_LIMIT = 700.0


@dataclass(frozen=True)
class CanonicalParams:
    alpha: float
    beta: float
    gamma: float

    def __post_init__(self):
        if not (self.alpha > 0.0 and math.isfinite(self.alpha)):
            raise ValueError(f"alpha must be positive and finite, got {self.alpha}")
        if not (self.beta > 0.0 and math.isfinite(self.beta)):
            raise ValueError(f"beta must be positive and finite, got {self.beta}")
        if not math.isfinite(self.gamma):
            raise ValueError(f"gamma must be finite, got {self.gamma}")


@dataclass(frozen=True)
class EnergyComponents:
    j1: float
    j2: float
    j3: float

    @property
    def total(self):
        return self.j1 + self.j2 + self.j3


Coupling = namedtuple("Coupling", ["w", "delta", "ratio", "log_d", "clamped"])


def coupling_terms(y, sigma0, beta):
    """Shared evaluation of ``D = sigma0 + e^y`` and the quantities built on it.

    Returns a ``Coupling`` with ``w = e^y / D``, ``ratio = beta / D``,
    ``delta = ratio - 1`` and ``log_d = log D``. All of them come from the
    same ``D``, so identities between them hold exactly. Above ``EXP_LIMIT`` the
    denominator is handled in log space; ``clamped`` reports that the ratio
    ``beta / D`` had to be capped at exp(EXP_LIMIT).
    """
    clamped = False
    if y <= EXP_LIMIT:
        ey = math.exp(y)
        d = sigma0 + ey
        w = ey / d
        log_d = math.log(d)
        ratio = beta / d
        if math.isinf(ratio):
            ratio = math.exp(EXP_LIMIT)
            clamped = True
    else:
        tail = sigma0 * math.exp(-y)
        log_d = y + math.log1p(tail)
        w = 1.0 / (1.0 + tail)
        ratio = math.exp(math.log(beta) - log_d)
    return Coupling(w, ratio - 1.0, ratio, log_d, clamped)


def _finite(x):
    x = float(x)
    if not math.isfinite(x):
        raise ValueError(f"x must be finite, got {x}")
    return x


def weight_w(x, alpha):
    """w(x) = e^x / (alpha + e^x), the share of the child's predicted
    variance contributed by the parent."""
    return coupling_terms(_finite(x), alpha, 1.0).w


def vape_delta(x, alpha, beta):
    """Volatility prediction error delta(x) = beta / (alpha + e^x) - 1."""
    return coupling_terms(_finite(x), alpha, beta).delta


def energy_components(x, p):
    x = _finite(x)
    c = coupling_terms(x, p.alpha, p.beta)
    j1 = -0.5 * c.log_d
    j2 = -0.5 * c.ratio
    j3 = -0.25 * (x - p.gamma) ** 2
    return EnergyComponents(j1, j2, j3)


def energy_J(x, p):
    x = _finite(x)
    c = coupling_terms(x, p.alpha, p.beta)
    return -0.5 * c.log_d - 0.5 * c.ratio - 0.25 * (x - p.gamma) ** 2


def grad_J(x, p):
    w, delta, _, _, _ = coupling_terms(x, p.alpha, p.beta)
    return 0.5 * w * delta - 0.5 * (x - p.gamma)


def hess_J(x, p):
    w, delta, _, _, _ = coupling_terms(x, p.alpha, p.beta)
    return -0.5 * w * (w + (2.0 * w - 1.0) * delta) - 0.5


def energy_K(x, p):
    log_d = coupling_terms(_finite(x), p.alpha, p.beta).log_d
    return -0.5 * log_d - 0.25 * (x - p.gamma) ** 2


def grad_K(x, p):
    w = coupling_terms(x, p.alpha, p.beta).w
    return -0.5 * w - 0.5 * (x - p.gamma)


def hess_K(x, p):
    # w(1 - w) lies in [0, 1/4], so this stays within [-0.625, -0.5]
    w = coupling_terms(x, p.alpha, p.beta).w
    return -0.5 * w * (1.0 - w) - 0.5
