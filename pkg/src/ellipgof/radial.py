"""Radial orthonormal polynomials built from the moments of ``T = R^2``.

For each ``i`` the polynomials ``s_{j,i}``, ``j = 0, 1, ...``, have degree
``j`` in ``t = r^2`` and satisfy ``E[s_{j,i}(T) s_{j',i}(T) T^i] = delta``.
They are the rows of the inverse Cholesky factor of the Hankel matrix
``[E T^{i+a+b}]``, which fixes the leading coefficient to be positive.
"""

import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy import linalg, special

__all__ = [
    "MomentTable",
    "RadialPolynomial",
    "MomentConsistencyError",
    "moments",
    "radial_polys",
    "radial_poly",
    "mvn_radial_closed_form",
]


class MomentConsistencyError(ValueError):
    """Hankel matrix of the moment sequence is not positive definite."""


@dataclass(frozen=True)
class MomentTable:
    """Moments ``E[T^q]``, ``q = 0..max_order``, of ``T = R^2``.

    Attributes
    ----------
    family : str
    m : int
    values : ndarray
        ``values[q] = E[T^q]``; ``values[0] == 1``.
    provenance : tuple of str
        ``"closed-form"`` or ``"quadrature"`` per entry.
    """

    family: str
    m: int
    values: np.ndarray
    provenance: tuple = field(default=())

    @property
    def max_order(self):
        return len(self.values) - 1

    def mu(self, j, i):
        """``E[R^{2(j+i)}]``."""
        return float(self.values[j + i])


@dataclass(frozen=True)
class RadialPolynomial:
    """``s_{j,i}`` with ``coef[q]`` the coefficient of ``t^q = r^{2q}``."""

    j: int
    i: int
    coef: np.ndarray

    def of_t(self, t):
        return np.polynomial.polynomial.polyval(t, self.coef)

    def __call__(self, r):
        r = np.asarray(r, dtype=float)
        return self.of_t(r * r)


def moments(family, m=None, max_order=None):
    """Moment table of ``R^2`` under ``family``.

    Parameters
    ----------
    family : NullFamily
        Supplies ``r2_moment(q)`` and ``moment_provenance``.
    m : int, optional
        Must match ``family.m`` when given.
    max_order : int
        Highest power of ``T``.

    Returns
    -------
    MomentTable
    """
    if m is not None and m != family.m:
        raise ValueError("family was built for m=%d, not %d" % (family.m, m))
    if max_order is None or max_order < 0:
        raise ValueError("max_order must be a nonnegative integer")
    vals = np.array([family.r2_moment(q) for q in range(max_order + 1)])
    if not np.all(np.isfinite(vals)) or np.any(vals <= 0):
        raise MomentConsistencyError("moments must be finite and positive: %r" % vals)
    prov = (family.moment_provenance,) * len(vals)
    return MomentTable(family.name, family.m, vals, prov)


def _hankel(table, i, size):
    idx = np.add.outer(np.arange(size), np.arange(size)) + i
    if idx.max() > table.max_order:
        raise ValueError("moment table stops at order %d; need %d"
                         % (table.max_order, idx.max()))
    return table.values[idx]


def radial_poly(table, j, i):
    """Single ``s_{j,i}`` from a moment table.

    Raises
    ------
    MomentConsistencyError
        If the Hankel matrix is not positive definite.
    """
    h = _hankel(table, i, j + 1)
    # equilibrate: the raw Hankel entries span many orders of magnitude
    d = 1.0 / np.sqrt(np.diag(h))
    hs = h * d[:, None] * d[None, :]
    try:
        low = linalg.cholesky(hs, lower=True)
    except linalg.LinAlgError as exc:
        raise MomentConsistencyError(
            "Hankel matrix for (j=%d, i=%d) is not positive definite" % (j, i)) from exc
    cond = np.linalg.cond(hs)
    if cond > 1e12:
        warnings.warn("Hankel matrix for (j=%d, i=%d) has condition %.3g" % (j, i, cond))
    e = np.zeros(j + 1)
    e[j] = 1.0
    # last row of L^{-1}, mapped back through the scaling
    row = linalg.solve_triangular(low.T, e, lower=False)
    return RadialPolynomial(j, i, row * d)


def radial_polys(table, K):
    """All ``s_{j,k-2j}`` with ``0 <= j <= k/2`` and ``0 <= k <= K``.

    Returns
    -------
    dict
        Keyed by ``(j, i)``.
    """
    out = {}
    for k in range(K + 1):
        for j in range(k // 2 + 1):
            out[(j, k - 2 * j)] = radial_poly(table, j, k - 2 * j)
    return out


def mvn_radial_closed_form(m, j, i):
    """``s_{j,i}`` for the normal null via generalised Laguerre polynomials.

    ``(-1)^j sqrt(j! Gamma(m/2) / (2^i Gamma(m/2 + j + i))) L_j^{(a)}(r^2/2)``
    with ``a = m/2 + i - 1``, expanded in powers of ``t = r^2``.
    """
    a = m / 2.0 + i - 1
    q = np.arange(j + 1)
    lag = (-1.0) ** q * special.binom(j + a, j - q) / special.factorial(q) / 2.0 ** q
    lognorm = 0.5 * (special.gammaln(j + 1) + special.gammaln(m / 2.0)
                     - i * np.log(2.0) - special.gammaln(m / 2.0 + j + i))
    return RadialPolynomial(j, i, (-1.0) ** j * np.exp(lognorm) * lag)
