"""Scalar special functions: principal Lambert W, stable sigmoid, log-sum-exp."""

import math

_MAX_ITER = 20


def _check_real(x, name):
    if math.isnan(x):
        raise ValueError(f"{name} must not be NaN")


def lambert_w0(z):
    """Principal branch W0 of the Lambert W function for real z >= 0.

    Returns the w >= 0 with ``w * exp(w) == z``. Evaluated by Halley's
    method from a seed chosen by the size of z; a handful of iterations
    reach machine precision over the whole positive axis.
    """
    z = float(z)
    _check_real(z, "z")
    if z < 0.0:
        raise ValueError(f"lambert_w0 is only defined here for z >= 0, got {z}")
    if z == 0.0:
        return 0.0
    if math.isinf(z):
        return math.inf

    ell = math.log(z)
    if ell > 2.0:
        w = ell - math.log(max(ell, 1.0))
    elif z < 0.25:
        w = z * (1.0 - z)
    else:
        w = math.log1p(z)

    for _ in range(_MAX_ITER):
        ew = math.exp(w)
        f = w * ew - z
        wp1 = w + 1.0
        dw = f / (ew * wp1 - (w + 2.0) * f / (2.0 * wp1))
        w -= dw
        if abs(dw) <= 1e-15 * (1.0 + abs(w)):
            break
    return w


def lambert_w0_of_exp(ell):
    """W0(exp(ell)) without forming exp(ell).

    For large ``ell`` the root of ``w + log(w) = ell`` is found directly, so
    arguments far beyond the float range (ell in the thousands and more) are
    fine. Below the switch-over point exp(ell) is representable and the
    ordinary evaluation is used.
    """
    ell = float(ell)
    if not math.isfinite(ell):
        raise ValueError(f"ell must be finite, got {ell}")
    if ell < 20.0:
        return lambert_w0(math.exp(ell))

    w = ell - math.log(ell)
    for _ in range(_MAX_ITER):
        g = w + math.log(w) - ell
        g1 = 1.0 + 1.0 / w
        g2 = -1.0 / (w * w)
        dw = (g / g1) / (1.0 - g * g2 / (2.0 * g1 * g1))
        w -= dw
        if abs(dw) <= 1e-15 * (1.0 + abs(w)):
            break
    return w


def stable_sigmoid(d):
    """Logistic function 1 / (1 + exp(-d)) that never overflows."""
    d = float(d)
    _check_real(d, "d")
    if d >= 0.0:
        return 1.0 / (1.0 + math.exp(-d))
    e = math.exp(d)
    return e / (1.0 + e)


def log_sum_exp(values):
    """log(sum(exp(v))) over an iterable of reals; -inf entries are allowed."""
    values = [float(v) for v in values]
    if not values:
        return -math.inf
    m = max(values)
    if math.isinf(m):
        return m
    return m + math.log(math.fsum(math.exp(v - m) for v in values))


def softmax(values):
    """Normalized exp weights of ``values`` (max-shifted)."""
    values = [float(v) for v in values]
    lse = log_sum_exp(values)
    return [math.exp(v - lse) for v in values]
