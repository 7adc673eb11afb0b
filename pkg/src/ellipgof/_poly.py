"""Sparse multivariate polynomials stored as ``{exponent tuple: coefficient}``.

Only what the basis construction needs: products, sums, homogenisation by
powers of ``|x|^2`` and exact averages of monomials over the unit sphere.
"""

import itertools
from functools import lru_cache
from math import lgamma, pi, exp, log

import numpy as np


def monomials(m, degree):
    """Exponent tuples of all monomials of exact total ``degree`` in ``m``
    variables, in reverse lexicographic order (``x1^k`` first)."""
    if m == 1:
        return [(degree,)]
    out = []
    for a in range(degree, -1, -1):
        for rest in monomials(m - 1, degree - a):
            out.append((a,) + rest)
    return out


def monomials_upto(m, degree):
    out = []
    for d in range(degree + 1):
        out.extend(monomials(m, d))
    return out


def add(p, q, scale=1.0):
    out = dict(p)
    for e, c in q.items():
        out[e] = out.get(e, 0.0) + scale * c
    return out


def scale(p, s):
    return {e: s * c for e, c in p.items()}


def mul(p, q):
    out = {}
    for (e1, c1), (e2, c2) in itertools.product(p.items(), q.items()):
        e = tuple(a + b for a, b in zip(e1, e2))
        out[e] = out.get(e, 0.0) + c1 * c2
    return out


def prune(p, tol=0.0):
    return {e: c for e, c in p.items() if abs(c) > tol}


def norm2_power(m, power):
    """``(x1^2 + ... + xm^2)^power`` expanded."""
    out = {(0,) * m: 1.0}
    sq = {tuple(2 if i == j else 0 for i in range(m)): 1.0 for j in range(m)}
    for _ in range(power):
        out = mul(out, sq)
    return out


def homogenize(p, m, degree):
    """Homogeneous degree-``degree`` polynomial agreeing with ``p`` on the
    unit sphere.  Every term must have the parity of ``degree``."""
    out = {}
    for e, c in p.items():
        d = sum(e)
        if d > degree or (degree - d) % 2:
            raise ValueError("term %r cannot be homogenized to degree %d" % (e, degree))
        out = add(out, mul({e: c}, norm2_power(m, (degree - d) // 2)))
    return out


def degree(p):
    return max((sum(e) for e in p), default=0)


@lru_cache(maxsize=None)
def sphere_mean_monomial(exps):
    """Average of ``u^exps`` over the uniform distribution on the unit
    sphere in ``len(exps)`` dimensions (exact)."""
    if any(a % 2 for a in exps):
        return 0.0
    m = len(exps)
    total = sum(exps)
    lg = sum(lgamma((a + 1) / 2.0) for a in exps)
    lg += lgamma(m / 2.0) - lgamma((total + m) / 2.0) - (m / 2.0) * log(pi)
    return exp(lg)


def sphere_inner(p, q):
    """``<p, q>`` for the normalised surface measure."""
    s = 0.0
    for e1, c1 in p.items():
        for e2, c2 in q.items():
            s += c1 * c2 * sphere_mean_monomial(tuple(a + b for a, b in zip(e1, e2)))
    return s


def evaluate(p, x):
    """Evaluate at points ``x`` of shape (n, m)."""
    x = np.atleast_2d(np.asarray(x, dtype=float))
    out = np.zeros(x.shape[0])
    for e, c in p.items():
        out += c * np.prod(x ** np.asarray(e), axis=1)
    return out


def laplacian(p):
    out = {}
    for e, c in p.items():
        for i, a in enumerate(e):
            if a >= 2:
                e2 = list(e)
                e2[i] -= 2
                key = tuple(e2)
                out[key] = out.get(key, 0.0) + c * a * (a - 1)
    return out
