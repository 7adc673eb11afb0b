"""Elliptical null families, maximum-likelihood fitting and standardisation.

A family is described by its density generator ``phi(y)`` with
``f(x) = c_m sqrt(det V^{-1}) phi((x - mu)' V^{-1} (x - mu))``.  Under the
null, ``Y = V^{-1/2}(X - mu) = R U`` with ``U`` uniform on the sphere and
``R`` independent with density proportional to ``r^{m-1} phi(r^2)``.

``g(y) = -2 phi'(y) / phi(y)`` drives both the likelihood equations and the
decomposition constants, with ``zeta(y) = y g(y)``.
"""

import warnings
from dataclasses import dataclass, field
from math import lgamma, log, pi

import numpy as np
from scipy import integrate, interpolate, special, stats

from . import radial

__all__ = [
    "NullFamily",
    "MVN",
    "Laplace",
    "Logistic",
    "PearsonII",
    "get_family",
    "FAMILIES",
    "FittedParams",
    "StandardizedSample",
    "DegenerateDataError",
    "ConvergenceError",
    "SupportError",
    "ConstantsError",
    "fit_mle",
    "standardize",
    "decomposition_constants",
    "DecompositionConstants",
    "sample_null",
    "sym_sqrt",
]


class DegenerateDataError(ValueError):
    """Scatter is singular or an observation sits at the fitted centre."""


class ConvergenceError(RuntimeError):
    """The likelihood fixed point did not settle."""


class SupportError(RuntimeError):
    """No feasible iterate keeps every observation inside a bounded support."""


class ConstantsError(ArithmeticError):
    """A decomposition constant has a nonpositive denominator."""


_QUAD = dict(epsabs=1e-15, epsrel=1e-12, limit=400)



def _quad(f, a, b, **kw):
    # quadpack flags roundoff when the tight relative target meets
    # cancelling integrands; only a large error estimate is worth a warning
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", integrate.IntegrationWarning)
        val, err = integrate.quad(f, a, b, **_QUAD, **kw)
    if err > 1e-9 * max(1.0, abs(val)):
        warnings.warn("quadrature error estimate %.2g on [%g, %g]" % (err, a, b),
                      integrate.IntegrationWarning, stacklevel=3)
    return val

class NullFamily:
    """Base class; subclasses set ``name`` and the generator functions.

    Parameters
    ----------
    m : int
        Dimension.
    """

    name = None
    k_min = 1
    moment_provenance = "quadrature"
    #: upper end of the support of ``T = R^2``
    t_max = np.inf

    def __init__(self, m):
        if int(m) != m or m < 2:
            raise ValueError("m must be an integer >= 2")
        self.m = int(m)
        self._log_norm = None

    # -- generator ----------------------------------------------------------
    def log_phi(self, y):
        raise NotImplementedError

    def phi(self, y):
        return np.exp(self.log_phi(y))

    def g(self, y):
        raise NotImplementedError

    def zeta(self, y):
        return np.asarray(y, dtype=float) * self.g(y)

    # -- radial law ---------------------------------------------------------
    def _radial_integral(self, fn):
        """``int_0^inf fn(r^2) r^{m-1} phi(r^2) dr``."""
        m = self.m

        def f(r):
            return fn(r * r) * np.exp((m - 1) * np.log(r) + self.log_phi(r * r)) if r > 0 else 0.0

        edges = [0.0, 0.5, 1.0, 2.0, 4.0, 8.0, 16.0, 32.0, 64.0, np.inf]
        return sum(_quad(f, a, b) for a, b in zip(edges[:-1], edges[1:]))

    def _log_radial_norm(self):
        if self._log_norm is None:
            self._log_norm = log(self._radial_integral(lambda t: 1.0))
        return self._log_norm

    def log_cm(self):
        """Log of the normalising constant ``c_m``."""
        # c_m * omega_m * int r^{m-1} phi(r^2) dr = 1
        log_omega = log(2.0) + (self.m / 2.0) * log(pi) - lgamma(self.m / 2.0)
        return -log_omega - self._log_radial_norm()

    def expect(self, fn):
        """``E[fn(T)]`` for ``T = R^2`` under the null."""
        return self._radial_integral(fn) / np.exp(self._log_radial_norm())

    def r2_moment(self, q):
        """``E[T^q]``."""
        return self.expect(lambda t: t ** q)

    def sample_radius(self, rng, n):
        raise NotImplementedError

    def logpdf(self, x, mu=None, V=None):
        """Log density at rows of ``x``."""
        x = np.atleast_2d(np.asarray(x, dtype=float))
        mu = np.zeros(self.m) if mu is None else np.asarray(mu, dtype=float)
        V = np.eye(self.m) if V is None else np.asarray(V, dtype=float)
        vinv = np.linalg.inv(V)
        d = x - mu
        y = np.einsum("ij,jk,ik->i", d, vinv, d)
        return self.log_cm() - 0.5 * np.linalg.slogdet(V)[1] + self.log_phi(y)

    def describe(self):
        return {"name": self.name, "m": self.m}

    def __repr__(self):
        extra = "".join(", %s=%r" % kv for kv in self.describe().items() if kv[0] not in ("name", "m"))
        return "%s(m=%d%s)" % (type(self).__name__, self.m, extra)


class MVN(NullFamily):
    """Multivariate normal, ``phi(y) = exp(-y/2)``."""

    name = "mvn"
    k_min = 3
    moment_provenance = "closed-form"

    def log_phi(self, y):
        return -0.5 * np.asarray(y, dtype=float)

    def g(self, y):
        return np.ones_like(np.asarray(y, dtype=float))

    def r2_moment(self, q):
        m = self.m
        return float(np.exp(q * log(2.0) + lgamma(m / 2.0 + q) - lgamma(m / 2.0)))

    def sample_radius(self, rng, n):
        return np.sqrt(rng.chisquare(self.m, size=n))


class Laplace(NullFamily):
    """Multivariate Laplace, ``phi(y) = exp(-sqrt(y))``; ``R ~ Gamma(m, 1)``."""

    name = "laplace"
    moment_provenance = "closed-form"

    def log_phi(self, y):
        return -np.sqrt(np.asarray(y, dtype=float))

    def g(self, y):
        return 1.0 / np.sqrt(np.asarray(y, dtype=float))

    def r2_moment(self, q):
        return float(np.exp(lgamma(self.m + 2 * q) - lgamma(self.m)))

    def expect(self, fn):
        # Gamma(m, 1) radius; integrate in r directly
        m = self.m
        lg = lgamma(m)

        def f(r):
            return fn(r * r) * np.exp((m - 1) * np.log(r) - r - lg) if r > 0 else 0.0

        edges = [0.0, 1.0, 2.0, 4.0, 8.0, 16.0, 32.0, 64.0, 128.0, np.inf]
        return sum(_quad(f, a, b) for a, b in zip(edges[:-1], edges[1:]))

    def sample_radius(self, rng, n):
        return rng.gamma(self.m, 1.0, size=n)


class Logistic(NullFamily):
    """Multivariate logistic, ``phi(y) = exp(-y) / (1 + exp(-y))^2``.

    The radius is drawn by inverting a monotone spline of its CDF.
    """

    name = "logistic"
    n_knots = 4096

    def __init__(self, m):
        super().__init__(m)
        self._inv_cdf = None

    def log_phi(self, y):
        y = np.asarray(y, dtype=float)
        return -y - 2.0 * np.log1p(np.exp(-y))

    def g(self, y):
        return 2.0 * np.tanh(np.asarray(y, dtype=float) / 2.0)

    def _build_inverse_cdf(self):
        m = self.m
        z = np.exp(self._log_radial_norm())
        # radius grid out to where the tail mass is negligible
        r_hi = np.sqrt(60.0 + 2.0 * m * np.log(60.0 + m))
        r = np.linspace(0.0, r_hi, self.n_knots)
        # Gauss-Legendre on each cell, then cumulate
        xg, wg = np.polynomial.legendre.leggauss(20)
        a, b = r[:-1], r[1:]
        mid, half = (a + b) / 2, (b - a) / 2
        nodes = mid[:, None] + half[:, None] * xg[None, :]
        dens = np.exp((m - 1) * np.log(nodes) + self.log_phi(nodes ** 2))
        cell = (dens * wg[None, :]).sum(axis=1) * half / z
        cdf = np.concatenate([[0.0], np.cumsum(cell)])
        cdf /= cdf[-1]
        keep = np.concatenate([[True], np.diff(cdf) > 0])
        self._cdf_spline = interpolate.PchipInterpolator(r[keep], cdf[keep])
        self._inv_cdf = interpolate.PchipInterpolator(cdf[keep], r[keep])
        return self._inv_cdf

    def radius_cdf(self, r):
        if self._inv_cdf is None:
            self._build_inverse_cdf()
        return self._cdf_spline(r)

    def radius_ppf(self, p):
        inv = self._inv_cdf or self._build_inverse_cdf()
        return inv(p)

    def sample_radius(self, rng, n):
        return self.radius_ppf(rng.random(n))


class PearsonII(NullFamily):
    """Pearson type II, ``phi(y) = (1 - y)^alpha`` on ``0 <= y < 1``;
    ``R^2 ~ Beta(m/2, alpha + 1)``.

    Parameters
    ----------
    m : int
    alpha : float
        Known shape parameter, ``alpha > 1`` so that the score has finite
        variance.
    """

    name = "pearson2"
    moment_provenance = "closed-form"
    t_max = 1.0

    def __init__(self, m, alpha=2.0):
        super().__init__(m)
        alpha = float(alpha)
        if not alpha > 1.0:
            raise ValueError("alpha must exceed 1")
        self.alpha = alpha

    def describe(self):
        return {"name": self.name, "m": self.m, "alpha": self.alpha}

    def log_phi(self, y):
        y = np.asarray(y, dtype=float)
        with np.errstate(divide="ignore", invalid="ignore"):
            return np.where(y < 1.0, self.alpha * np.log1p(-np.minimum(y, 1.0)), -np.inf)

    def g(self, y):
        return 2.0 * self.alpha / (1.0 - np.asarray(y, dtype=float))

    def _log_radial_norm(self):
        # int r^{m-1} (1 - r^2)^a dr = B(m/2, a + 1) / 2
        return special.betaln(self.m / 2.0, self.alpha + 1.0) - log(2.0)

    def expect(self, fn):
        a, h = self.m / 2.0 - 1.0, self.alpha
        # the algebraic weight absorbs both endpoint behaviours; two powers
        # of (1 - t) are moved into the integrand so 1/(1-t)^2 terms stay finite
        top = np.nextafter(1.0, 0.0)
        val = _quad(lambda t: fn(min(t, top)) * (1.0 - min(t, top)) ** 2, 0.0, 1.0,
                    weight="alg", wvar=(a, h - 2.0))
        return val / np.exp(special.betaln(self.m / 2.0, h + 1.0))

    def r2_moment(self, q):
        a, b = self.m / 2.0, self.alpha + 1.0
        return float(np.exp(special.betaln(a + q, b) - special.betaln(a, b)))

    def sample_radius(self, rng, n):
        return np.sqrt(rng.beta(self.m / 2.0, self.alpha + 1.0, size=n))


FAMILIES = {"mvn": MVN, "laplace": Laplace, "logistic": Logistic, "pearson2": PearsonII}


def get_family(name, m, alpha=None):
    """Construct a family by name (``mvn``, ``laplace``, ``logistic`` or
    ``pearson2``)."""
    try:
        cls = FAMILIES[name]
    except KeyError:
        raise ValueError("unknown family %r; choose from %s" % (name, sorted(FAMILIES))) from None
    if cls is PearsonII:
        return cls(m, 2.0 if alpha is None else alpha)
    if alpha is not None:
        raise ValueError("family %r has no shape parameter" % name)
    return cls(m)


# ---------------------------------------------------------------------------
# estimation

def sym_sqrt(a, inverse=False):
    """Symmetric square root (or inverse root) of an SPD matrix."""
    w, q = np.linalg.eigh(a)
    if w.min() <= 0:
        raise DegenerateDataError("matrix is not positive definite")
    p = -0.5 if inverse else 0.5
    return (q * w ** p) @ q.T


@dataclass(frozen=True)
class FittedParams:
    """Fitted location and scatter.

    Attributes
    ----------
    mu : ndarray (m,)
    V : ndarray (m, m)
    V_inv : ndarray (m, m)
    V_inv_sqrt : ndarray (m, m)
        Symmetric root with ``V_inv_sqrt @ V_inv_sqrt == V_inv``.
    iterations : int
    gap : float
        Final (affine-invariant) parameter change.
    """

    mu: np.ndarray
    V: np.ndarray
    V_inv: np.ndarray
    V_inv_sqrt: np.ndarray
    iterations: int = 0
    gap: float = 0.0


@dataclass(frozen=True)
class StandardizedSample:
    """Radii and directions of ``Y_i = V^{-1/2}(X_i - mu)``."""

    R: np.ndarray
    U: np.ndarray
    params: FittedParams = field(repr=False)

    @property
    def n(self):
        return self.R.shape[0]

    @property
    def Y(self):
        return self.R[:, None] * self.U


def _params(mu, V, iterations=0, gap=0.0):
    V = (V + V.T) / 2
    vis = sym_sqrt(V, inverse=True)
    return FittedParams(mu, V, vis @ vis, vis, iterations, gap)


def _scatter(x, mu, w=None):
    d = x - mu
    if w is None:
        return d.T @ d / x.shape[0]
    return (d * w[:, None]).T @ d / x.shape[0]


def _mvn_fit(x):
    mu = x.mean(axis=0)
    V = _scatter(x, mu)
    if np.linalg.matrix_rank(V) < x.shape[1] or np.linalg.eigvalsh(V).min() <= 1e-14 * np.trace(V):
        raise DegenerateDataError("sample scatter matrix is singular")
    return mu, V


def _r2(x, mu, V):
    d = x - mu
    return np.einsum("ij,ij->i", d, np.linalg.solve(V, d.T).T)


def _gap(mu0, V0, mu1, V1):
    # parameter change in the metric of the current scatter: affine invariant
    L = np.linalg.cholesky(V0)
    dm = np.linalg.solve(L, mu1 - mu0)
    dV = np.linalg.solve(L, np.linalg.solve(L, V1 - V0).T)
    return float(max(np.abs(dm).max(), np.abs(dV).max()))


def _loglik(family, z, mu, L):
    # log-likelihood of standardised rows z under location mu, scatter L L'
    e = np.linalg.solve(L, (z - mu).T).T
    t = np.einsum("ij,ij->i", e, e)
    if np.any(t >= family.t_max):
        return -np.inf, e, t
    with np.errstate(divide="ignore"):
        val = family.log_phi(t).sum()
    return float(val - z.shape[0] * np.log(np.abs(np.diag(L))).sum()), e, t


def _pack(mu, L, tril):
    return np.concatenate([mu, L[tril]])


def _unpack(theta, m, tril):
    L = np.zeros((m, m))
    L[tril] = theta[m:]
    return theta[:m], L


def _gradient(family, z, theta, tril):
    m = z.shape[1]
    mu, L = _unpack(theta, m, tril)
    e = np.linalg.solve(L, (z - mu).T).T
    t = np.einsum("ij,ij->i", e, e)
    w = family.g(t)
    Li = np.linalg.inv(L)
    g_mu = Li.T @ (w @ e)
    g_L = Li.T @ ((e * w[:, None]).T @ e - z.shape[0] * np.eye(m))
    return np.concatenate([g_mu, g_L[tril]])


def _check_centre(t):
    # a kinked log phi (Laplace) can put the maximiser on an observation
    if t.min() < 1e-8:
        raise DegenerateDataError("the likelihood maximiser coincides with observation %d"
                                  % int(np.argmin(t)))


def fit_mle(family, data, tol=1e-10, max_iter=100):
    """Maximum-likelihood location and scatter.

    Parameters
    ----------
    family : NullFamily
    data : array_like (n, m)
    tol : float
        Convergence threshold on the affine-invariant parameter change.
    max_iter : int
        Maximum number of Newton steps.

    Returns
    -------
    FittedParams

    Notes
    -----
    The normal fit is closed form (mean and scatter with divisor ``n``).
    Otherwise each step re-standardises the data by the current fit and
    takes a Newton step on the location and Cholesky factor, with a
    finite-difference Hessian of the analytic score.  If the Hessian is
    not negative definite the weighted-mean/weighted-scatter fixed-point
    step is used instead.  Steps are halved until the likelihood
    increases, which also keeps every point inside a bounded support.
    """
    x = np.asarray(data, dtype=float)
    if x.ndim != 2:
        raise ValueError("data must be an (n, m) array")
    n, m = x.shape
    if m != family.m:
        raise ValueError("data has %d columns but family has m=%d" % (m, family.m))
    if n <= m:
        raise DegenerateDataError("need n > m observations, got n=%d, m=%d" % (n, m))
    if not np.all(np.isfinite(x)):
        raise DegenerateDataError("data contain non-finite values")
    mu, V = _mvn_fit(x)
    if isinstance(family, MVN):
        return _params(mu, V)
    if np.isfinite(family.t_max):
        # inflate the normal scatter until every point is well inside
        V = V * (_r2(x, mu, V).max() / 0.5)
    C = np.linalg.cholesky(V)
    tril = np.tril_indices(m)
    eye = np.eye(m)
    theta0 = _pack(np.zeros(m), eye, tril)
    p = theta0.size
    h = 1e-6
    gap = np.inf
    for it in range(1, max_iter + 1):
        z = np.linalg.solve(C, (x - mu).T).T
        ll0, e, t = _loglik(family, z, np.zeros(m), eye)
        _check_centre(t)
        grad = _gradient(family, z, theta0, tril)
        H = np.empty((p, p))
        for a in range(p):
            step = np.zeros(p)
            step[a] = h
            H[:, a] = (_gradient(family, z, theta0 + step, tril)
                       - _gradient(family, z, theta0 - step, tril)) / (2 * h)
        H = 0.5 * (H + H.T)
        try:
            np.linalg.cholesky(-H)
            delta = np.linalg.solve(H, -grad)
        except np.linalg.LinAlgError:
            w = family.g(t)
            mu1 = (w @ e) / w.sum()
            L1 = np.linalg.cholesky(_scatter(e, mu1, w))
            delta = _pack(mu1, L1, tril) - theta0
        gap = float(np.abs(delta).max())
        if gap < tol:
            return _params(mu, C @ C.T, it, gap)
        lam = 1.0
        while True:
            mu_t, L_t = _unpack(theta0 + lam * delta, m, tril)
            if np.all(np.diag(L_t) > 0):
                ll_t = _loglik(family, z, mu_t, L_t)[0]
                if ll_t >= ll0:
                    break
            lam *= 0.5
            if lam < 1e-10:
                if gap < 1e3 * tol:
                    # at the rounding floor of the likelihood
                    return _params(mu, C @ C.T, it, gap)
                raise ConvergenceError("line search failed at gap %.3g" % gap)
        mu = mu + C @ mu_t
        C = C @ L_t
    if gap < 1e3 * tol:
        # creeping at the rounding floor rather than diverging
        return _params(mu, C @ C.T, max_iter, gap)
    raise ConvergenceError("Newton iteration did not converge in %d steps, last gap %.3g"
                           % (max_iter, gap))


def standardize(params, data):
    """Radii and directions after standardising with the fitted parameters.

    Raises
    ------
    DegenerateDataError
        If an observation is at the fitted centre.
    """
    x = np.asarray(data, dtype=float)
    y = (x - params.mu) @ params.V_inv_sqrt
    r = np.linalg.norm(y, axis=1)
    bad = np.flatnonzero(r <= 1e-300)
    if bad.size:
        raise DegenerateDataError("row %d equals the fitted centre" % bad[0])
    return StandardizedSample(r, y / r[:, None], params)


def sample_null(family, n, seed=None, rng=None):
    """Draw ``n`` observations from ``family`` with ``mu = 0`` and ``V = I``.

    Directions are normalised Gaussian vectors; radii come from the
    family's radius law.
    """
    if rng is None:
        rng = np.random.default_rng(seed)
    z = rng.standard_normal((n, family.m))
    u = z / np.linalg.norm(z, axis=1, keepdims=True)
    return family.sample_radius(rng, n)[:, None] * u


# ---------------------------------------------------------------------------
# decomposition constants

@dataclass(frozen=True)
class DecompositionConstants:
    """Constants entering the global statistic for non-normal nulls.

    ``c0`` pairs with the radial block (``k = 2j``, ``j >= 1``), ``c1`` with
    ``k - 2j = 1`` (``j >= 0``) and ``c2`` with ``k - 2j = 2`` (``j >= 0``).
    """

    sigma1: float
    sigma2: float
    c0: np.ndarray
    c1: np.ndarray
    c2: np.ndarray
    d0: float
    d1: float
    d2: float
    E_zeta2: float

    def as_dict(self):
        return {"sigma1": self.sigma1, "sigma2": self.sigma2,
                "c0": self.c0.tolist(), "c1": self.c1.tolist(), "c2": self.c2.tolist(),
                "d0": self.d0, "d1": self.d1, "d2": self.d2, "E_zeta2": self.E_zeta2}


def decomposition_constants(family, m=None, K=5, polys=None):
    """Score-correction constants for the family up to order ``K``.

    Parameters
    ----------
    family : NullFamily
    m : int, optional
        Checked against ``family.m``.
    K : int
    polys : dict, optional
        Radial polynomials keyed by ``(j, i)``; built from moments if absent.

    Returns
    -------
    DecompositionConstants

    Notes
    -----
    With ``s2 = E[zeta^2]``:

    * ``sigma1 = E[T g^2]``, ``sigma2 = m (m + 2) / s2``;
    * ``c0_j = -E[s_{j,0} zeta]``, ``c1_j = E[s_{j,1} zeta] / sqrt(m)``,
      ``c2_j = -E[T s_{j,2} zeta]``;
    * ``d1 = m / (sigma1 - m |c1|^2)``,
      ``d2 = sigma2 / (m (m + 2) - sigma2 |c2|^2)`` and
      ``d0 = sigma2 / (m (2 + m (1 - sigma2)) - sigma2 |c0|^2)``.

    The bracket in ``d0`` is placed so that ``d0 = 1 / (s2 - m^2 - |c0|^2)``;
    this is the only placement consistent with the normal reduction and the
    tabulated Laplace and logistic constants.
    """
    if m is not None and m != family.m:
        raise ValueError("family was built for m=%d, not %d" % (family.m, m))
    m = family.m
    if polys is None:
        polys = radial.radial_polys(radial.moments(family, max_order=K + 1), K)
    zeta = family.zeta
    s2 = family.expect(lambda t: zeta(t) ** 2)
    sigma1 = family.expect(lambda t: t * family.g(t) ** 2)
    sigma2 = m * (m + 2) / s2
    c0 = np.array([-family.expect(lambda t, p=polys[(j, 0)]: p.of_t(t) * zeta(t))
                   for j in range(1, K // 2 + 1)])
    c1 = np.array([family.expect(lambda t, p=polys[(j, 1)]: p.of_t(t) * zeta(t)) / np.sqrt(m)
                   for j in range(0, (K - 1) // 2 + 1)])
    c2 = np.array([-family.expect(lambda t, p=polys[(j, 2)]: t * p.of_t(t) * zeta(t))
                   for j in range(0, (K - 2) // 2 + 1)])
    den0 = m * (2 + m * (1 - sigma2)) - sigma2 * (c0 @ c0)
    den1 = sigma1 - m * (c1 @ c1)
    den2 = m * (m + 2) - sigma2 * (c2 @ c2)
    dens = {"d0": den0, "d1": den1, "d2": den2}
    if isinstance(family, MVN):
        # the excluded k = 1, 2 components make these degenerate by design
        d0 = d1 = d2 = 0.0
    else:
        bad = {k: v for k, v in dens.items() if not v > 1e-12 * max(1.0, abs(sigma1), s2)}
        if bad:
            raise ConstantsError("nonpositive denominators %r (sigma1=%g, sigma2=%g)"
                                 % (bad, sigma1, sigma2))
        d0, d1, d2 = sigma2 / den0, m / den1, sigma2 / den2
    return DecompositionConstants(float(sigma1), float(sigma2), c0, c1, c2,
                                  float(d0), float(d1), float(d2), float(s2))
