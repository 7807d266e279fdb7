"""
Gaussian tail probability Q(x) = P(N(0,1) > x) and its inverse.
"""

import numpy as np
from scipy import special

from oppspec.utils.exceptions import DomainError


SQRT2 = np.sqrt(2.0)
_INV_SQRT_2PI = 1.0 / np.sqrt(2.0 * np.pi)


def q_function(x):
    """Q(x) via the complementary error function; accurate deep into both tails."""
    return 0.5 * special.erfc(np.asarray(x, dtype=float) / SQRT2)


def _q_prime(x: float) -> float:
    return -_INV_SQRT_2PI * np.exp(-0.5 * x * x)


def q_inverse(p: float, max_iter: int = 50) -> float:
    """
    Inverse of Q on (0, 1).

    Starts from the erfc inversion, then polishes with Newton steps on Q,
    falling back to bisection whenever a step leaves the current bracket.
    """
    if not 0.0 < p < 1.0:
        raise DomainError(f"Q inverse needs an argument in (0, 1), got {p!r}")
    if p > 0.5:
        return -q_inverse(1.0 - p, max_iter)

    x = float(SQRT2 * special.erfcinv(2.0 * p))
    lo, hi = 0.0, max(2.0 * x, 1.0)
    while q_function(hi) > p:
        hi *= 2.0

    for _ in range(max_iter):
        err = float(q_function(x)) - p
        if abs(err) <= 1e-15 * p:
            break
        # Q is decreasing: positive error means x sits left of the root
        if err > 0:
            lo = max(lo, x)
        else:
            hi = min(hi, x)
        step = x - err / _q_prime(x)
        x = step if lo < step < hi else 0.5 * (lo + hi)
    return x
