"""Basis assembly, the global statistic and its U / I / R decomposition.

The basis functions are ``pi_{k,j,l}(y) = s_{j,i}(|y|^2) H_{i,l}(y)``
with ``i = k - 2j`` and ``H_{i,l}(y) = |y|^i Psi_{i,l}(y / |y|)`` the solid
harmonic, so every ``pi`` is a polynomial of degree ``k`` in ``y``.

Indices are grouped into three blocks:

* ``U`` -- ``j = 0`` and ``k >= 3`` (direction only);
* ``R`` -- ``k`` even and ``j = k / 2`` (radius only);
* ``I`` -- everything else, further split by ``i = 1``, ``i = 2`` and
  ``i > 2`` into ``I1``, ``I2`` and ``I3``.

Only ``I1``, ``I2`` and ``R`` are correlated with the likelihood score, and
for those the global statistic carries the rank-one corrections
``d1 |I1' c1|^2``, ``d2 |I2' c2|^2`` and ``d0 (c0' pi_R)^2``.
"""

from dataclasses import dataclass, field
from math import comb, log

import numpy as np
from scipy import linalg, stats

from . import _backend, _poly
from .families import MVN, decomposition_constants, fit_mle, standardize
from .harmonics import build_harmonics, harmonic_dimension
from .radial import moments, radial_polys

__all__ = [
    "BasisIndex",
    "BasisSet",
    "PiBar",
    "DecompositionResult",
    "ScalingError",
    "build_basis",
    "compute_pi_bar",
    "global_statistic",
    "scaled_components",
    "score_covariance",
    "degrees_of_freedom",
    "Decomposer",
    "decompose",
    "select_K",
    "BLOCK_ORDER",
]

BLOCK_ORDER = ("U", "I1", "I2", "I3", "R")


class ScalingError(np.linalg.LinAlgError):
    """An empirical covariance block is singular."""


@dataclass(frozen=True)
class BasisIndex:
    """Triple ``(k, j, l)`` with its block tags (``l`` starts at 1)."""

    k: int
    j: int
    l: int
    block: str
    sub: str
    retained: bool = True

    @property
    def i(self):
        return self.k - 2 * self.j

    @property
    def label(self):
        return "pi_%d_%d_%d" % (self.k, self.j, self.l)


def _tags(k, j):
    i = k - 2 * j
    if j == 0 and k >= 3:
        return "U", "U"
    if i == 0:
        return "R", "R"
    return "I", ("I1" if i == 1 else "I2" if i == 2 else "I3")


class BasisSet:
    """Evaluable basis for a family and order ``K``.

    Attributes
    ----------
    family : NullFamily
    m, K, k_min : int
    harmonics : HarmonicBasis
    polys : dict
        Radial polynomials keyed by ``(j, i)``.
    all_indices : list of BasisIndex
        Every ``(k, j, l)`` with ``1 <= k <= K``.
    indices : list of BasisIndex
        The retained ones, ``k >= k_min``, in lexicographic order.
    """

    def __init__(self, family, K, harmonics=None, polys=None):
        m = family.m
        if K < family.k_min:
            raise ValueError("K=%d is below k_min=%d for family %s" % (K, family.k_min, family.name))
        self.family, self.m, self.K, self.k_min = family, m, int(K), family.k_min
        self.harmonics = harmonics or build_harmonics(m, K)
        self.polys = polys or radial_polys(moments(family, max_order=K + 1), K)
        self.all_indices = []
        for k in range(1, K + 1):
            for j in range(k // 2 + 1):
                block, sub = _tags(k, j)
                for l in range(1, harmonic_dimension(m, k - 2 * j) + 1):
                    self.all_indices.append(BasisIndex(k, j, l, block, sub, k >= self.k_min))
        self.indices = [b for b in self.all_indices if b.retained]
        self.p = len(self.indices)
        self._arrays()
        self._build_plan()

    def _arrays(self):
        ix = self.indices
        self.k_arr = np.array([b.k for b in ix])
        self.j_arr = np.array([b.j for b in ix])
        self.l_arr = np.array([b.l for b in ix])
        self.i_arr = self.k_arr - 2 * self.j_arr
        self.sub_arr = np.array([b.sub for b in ix])
        self.block_arr = np.array([b.block for b in ix])
        order = [n for s in BLOCK_ORDER for n in range(self.p) if ix[n].sub == s]
        self.permutation = np.array(order, dtype=np.intp)

    def _build_plan(self):
        m, K = self.m, self.K
        mons = _poly.monomials_upto(m, K)
        pos = {e: c for c, e in enumerate(mons)}
        parent = np.full(len(mons), -1, dtype=np.intp)
        var = np.zeros(len(mons), dtype=np.intp)
        for c, e in enumerate(mons[1:], start=1):
            v = next(a for a in range(m) if e[a])
            par = list(e)
            par[v] -= 1
            parent[c], var[c] = pos[tuple(par)], v
        harm_rows = {}
        ptr, idx, val = [0], [], []
        for i in range(K + 1):
            exps = [tuple(int(a) for a in e) for e in self.harmonics.exponents[i]]
            for l in range(1, self.harmonics.dimension(i) + 1):
                row = self.harmonics.coefs[i][l - 1]
                nz = np.flatnonzero(row)
                idx.extend(pos[exps[c]] for c in nz)
                val.extend(row[nz])
                ptr.append(len(idx))
                harm_rows[(i, l)] = len(harm_rows)
        rad_keys = sorted({(b.j, b.i) for b in self.indices})
        rad_rows = {key: r for r, key in enumerate(rad_keys)}
        width = max(key[0] for key in rad_keys) + 1
        rad = np.zeros((len(rad_keys), width))
        for key, r in rad_rows.items():
            coef = self.polys[key].coef
            rad[r, :len(coef)] = coef
        self._plan = dict(
            parent=parent, var=var,
            harm_ptr=np.array(ptr, dtype=np.intp), harm_idx=np.array(idx, dtype=np.intp),
            harm_val=np.array(val, dtype=float), rad_coef=np.ascontiguousarray(rad),
            col_harm=np.array([harm_rows[(b.i, b.l)] for b in self.indices], dtype=np.intp),
            col_rad=np.array([rad_rows[(b.j, b.i)] for b in self.indices], dtype=np.intp))

    # -- evaluation ---------------------------------------------------------
    def evaluate_y(self, Y):
        """Basis matrix (n, p) at standardised points ``Y``."""
        Y = np.ascontiguousarray(np.atleast_2d(Y), dtype=float)
        T = np.einsum("ij,ij->i", Y, Y)
        return _backend.evaluate_basis(Y, T, **self._plan)

    def evaluate(self, sample):
        """Basis matrix (n, p) for a ``StandardizedSample``."""
        return self.evaluate_y(sample.R[:, None] * sample.U)

    def evaluate_polar(self, r, u):
        return self.evaluate_y(np.asarray(r, dtype=float)[:, None] * np.asarray(u, dtype=float))

    # -- bookkeeping --------------------------------------------------------
    def mask(self, K=None, sub=None, block=None):
        m = np.ones(self.p, dtype=bool)
        if K is not None:
            m &= self.k_arr <= K
        if sub is not None:
            m &= self.sub_arr == sub
        if block is not None:
            m &= self.block_arr == block
        return m

    def groups(self, K=None):
        """Column groups used by the scaled components.

        For the normal null one group per ``(k, j)``; otherwise one group per
        sub-block and degree ``k``.  Returns a list of ``(key, block, cols)``.
        """
        K = self.K if K is None else K
        out = {}
        for n, b in enumerate(self.indices):
            if b.k > K:
                continue
            key = (b.k, b.j) if isinstance(self.family, MVN) else (b.sub, b.k)
            out.setdefault(key, (b.block, []))[1].append(n)
        return [(key, blk, np.array(cols)) for key, (blk, cols) in out.items()]

    def describe(self):
        """Coefficient-level description of every retained ``pi``."""
        out = []
        for b in self.indices:
            harm = self.harmonics.polynomial(b.i, b.l)
            out.append({
                "k": b.k, "j": b.j, "l": b.l, "block": b.block, "sub_block": b.sub,
                "radial_coefficients": self.polys[(b.j, b.i)].coef.tolist(),
                "harmonic_degree": b.i,
                "harmonic_monomials": [[list(e), c] for e, c in sorted(harm.items(), reverse=True)],
                "monomials": [[list(e), c] for e, c in sorted(self.polynomial(b).items(), reverse=True)],
            })
        return out

    def polynomial(self, b):
        """``pi_{k,j,l}`` as a sparse polynomial in ``y``."""
        harm = self.harmonics.polynomial(b.i, b.l)
        coef = self.polys[(b.j, b.i)].coef
        out = {}
        for q, c in enumerate(coef):
            out = _poly.add(out, _poly.scale(_poly.mul(harm, _poly.norm2_power(self.m, q)), c))
        return _poly.prune(out, 0.0)


def build_basis(family, K):
    """Retained basis for ``family`` up to order ``K``."""
    return BasisSet(family, K)


# ---------------------------------------------------------------------------

@dataclass
class PiBar:
    """Sample means of the basis, in lexicographic and block order."""

    lex: np.ndarray
    basis: BasisSet = field(repr=False)

    @property
    def blocks(self):
        b = self.basis
        return {s: self.lex[b.sub_arr == s] for s in BLOCK_ORDER}

    @property
    def permuted(self):
        return self.lex[self.basis.permutation]

    def unpermute(self, vec):
        out = np.empty_like(vec)
        out[self.basis.permutation] = vec
        return out

    def matrix(self, i, K=None):
        """Rows indexed by ``j``, columns by ``l``, for fixed ``i = k - 2j``."""
        b = self.basis
        K = b.K if K is None else K
        sel = (b.i_arr == i) & (b.k_arr <= K)
        js = np.unique(b.j_arr[sel])
        out = np.zeros((len(js), harmonic_dimension(b.m, i)))
        for n in np.flatnonzero(sel):
            out[np.searchsorted(js, b.j_arr[n]), b.l_arr[n] - 1] = self.lex[n]
        return js, out

    @property
    def I1(self):
        return self.matrix(1)[1]

    @property
    def I2(self):
        return self.matrix(2)[1]


def compute_pi_bar(basis, sample):
    """Mean of every retained basis function over the standardised sample."""
    vals = basis.evaluate(sample)
    return PiBar(vals.mean(axis=0), basis)


def degrees_of_freedom(basis, K=None):
    """Counts of retained indices per block (these reduce to the closed
    forms ``sum e_m(k)``, ``floor((K-2)/2)`` for the normal null)."""
    msk = basis.mask(K=K)
    nu = {blk: int((msk & (basis.block_arr == blk)).sum()) for blk in ("U", "I", "R")}
    nu["Q"] = nu["U"] + nu["I"] + nu["R"]
    return nu


def _truncate(consts, K):
    c0 = consts.c0[: K // 2]
    c1 = consts.c1[: (K - 1) // 2 + 1]
    c2 = consts.c2[: max((K - 2) // 2 + 1, 0)]
    return c0, c1, c2


def _d_constants(consts, m, K):
    c0, c1, c2 = _truncate(consts, K)
    s1, s2 = consts.sigma1, consts.sigma2
    d0 = s2 / (m * (2 + m * (1 - s2)) - s2 * (c0 @ c0))
    d1 = m / (s1 - m * (c1 @ c1))
    d2 = s2 / (m * (m + 2) - s2 * (c2 @ c2))
    return (c0, d0), (c1, d1), (c2, d2)


def global_statistic(pi_bar, constants, n, K=None):
    """Raw ``Q``, ``U``, ``I``, ``R`` and the per-``(k, j)`` subcomponents.

    Parameters
    ----------
    pi_bar : PiBar
    constants : DecompositionConstants or None
        Ignored for the normal null, where all corrections vanish.
    n : int
    K : int, optional
        Evaluate at a smaller order than the basis was built for.

    Returns
    -------
    dict
    """
    b = pi_bar.basis
    K = b.K if K is None else K
    v = pi_bar.lex
    msk = b.mask(K=K)
    sq = n * v ** 2
    U = float(sq[msk & (b.block_arr == "U")].sum())
    I = float(sq[msk & (b.block_arr == "I")].sum())
    R = float(sq[msk & (b.block_arr == "R")].sum())
    if not isinstance(b.family, MVN):
        if constants is None:
            raise ValueError("non-normal families need decomposition constants")
        (c0, d0), (c1, d1), (c2, d2) = _d_constants(constants, b.m, K)
        js1, I1 = pi_bar.matrix(1, K)
        js2, I2 = pi_bar.matrix(2, K)
        js0, Rb = pi_bar.matrix(0, K)
        if len(js1) != len(c1) or len(js2) != len(c2) or len(js0) != len(c0):
            raise ValueError("basis and constants disagree on the block layout")
        I += n * d1 * float(np.sum((I1.T @ c1) ** 2))
        I += n * d2 * float(np.sum((I2.T @ c2) ** 2))
        R += n * d0 * float(Rb[:, 0] @ c0) ** 2
    sub = {}
    for key in sorted({(int(k), int(j)) for k, j in zip(b.k_arr[msk], b.j_arr[msk])}):
        sel = msk & (b.k_arr == key[0]) & (b.j_arr == key[1])
        sub[key] = float(sq[sel].sum())
    return {"Q": U + I + R, "U": U, "I": I, "R": R, "sub": sub}


def score_covariance(basis):
    """Exact null moments linking the basis to the likelihood score.

    The score per observation is represented by ``Z = (g(T) Y,
    vech(I - g(T) Y Y'))``.  Returns ``(C, VZ)`` with ``C = E[pi Z']`` and
    ``VZ = Cov(Z)``, so that the null covariance of ``sqrt(n) pi_bar`` at
    the fitted parameters is ``I - C VZ^{-1} C'``.
    """
    fam, m, hb = basis.family, basis.m, basis.harmonics
    pairs = [(a, c) for a in range(m) for c in range(a, m)]
    q = m + len(pairs)
    unit = np.eye(m, dtype=int)
    zeta = fam.zeta

    def sph(i, l, extra):
        exps = hb.exponents[i]
        return float(sum(c * _poly.sphere_mean_monomial(tuple(e + extra))
                         for e, c in zip(exps, hb.coefs[i][l - 1]) if c))

    cache = {}

    def rad(key, fn):
        if key not in cache:
            cache[key] = fam.expect(fn)
        return cache[key]

    C = np.zeros((basis.p, q))
    for n, bi in enumerate(basis.indices):
        i, s = bi.i, basis.polys[(bi.j, bi.i)]
        if i == 1:
            e1 = rad(("z", bi.j, 1), lambda t: s.of_t(t) * zeta(t))
            for a in range(m):
                C[n, a] = e1 * sph(1, bi.l, unit[a])
        elif i in (0, 2):
            # E[s(T) T^{i/2} Psi] vanishes unless i = 0, j = 0
            e0 = rad(("p", bi.j, i), lambda t: s.of_t(t) * t ** (i // 2))
            ez = rad(("tz", bi.j, i), lambda t: s.of_t(t) * t ** (i // 2) * zeta(t))
            for r, (a, c) in enumerate(pairs):
                val = -ez * sph(i, bi.l, unit[a] + unit[c])
                if a == c:
                    val += e0 * sph(i, bi.l, np.zeros(m, dtype=int))
                C[n, m + r] = val
    sigma1 = fam.expect(lambda t: t * fam.g(t) ** 2)
    ez = fam.expect(zeta)
    ez2 = fam.expect(lambda t: zeta(t) ** 2)
    VZ = np.zeros((q, q))
    VZ[:m, :m] = np.eye(m) * sigma1 / m
    for r1, (a, b_) in enumerate(pairs):
        for r2, (c, d) in enumerate(pairs):
            val = ez2 * _poly.sphere_mean_monomial(tuple(unit[a] + unit[b_] + unit[c] + unit[d]))
            val -= ez * (float(a == b_) * _poly.sphere_mean_monomial(tuple(unit[c] + unit[d]))
                         + float(c == d) * _poly.sphere_mean_monomial(tuple(unit[a] + unit[b_])))
            val += float(a == b_) * float(c == d)
            VZ[m + r1, m + r2] = val
    return C, VZ


def _score_vectors(family, Y):
    m = Y.shape[1]
    T = np.einsum("ij,ij->i", Y, Y)
    g = family.g(T)
    pairs = [(a, c) for a in range(m) for c in range(a, m)]
    Z2 = np.column_stack([float(a == c) - g * Y[:, a] * Y[:, c] for a, c in pairs])
    return np.hstack([g[:, None] * Y, Z2])


def scaled_components(basis, sample, pi_bar, n=None, K=None, values=None,
                      projection=None, ddof=1, center=True):
    """Studentised block statistics.

    Each column group is scaled by the inverse of its empirical covariance.
    For non-normal families the basis vectors are first residualised on
    the score, ``pi_i - C VZ^{-1} Z_i``, so that the covariance estimates
    the null covariance of ``pi_bar`` at the fitted parameters.

    Returns
    -------
    dict
        ``U_s``, ``I_s``, ``R_s``, ``Q_s`` and ``sub_scaled`` keyed by group.

    Raises
    ------
    ScalingError
        If a covariance block is singular.
    """
    n = sample.n if n is None else n
    K = basis.K if K is None else K
    vals = basis.evaluate(sample) if values is None else values
    if projection is not None:
        vals = vals - _score_vectors(basis.family, sample.Y) @ projection.T
    if center:
        resid = vals - vals.mean(axis=0)
    else:
        resid = vals
    out = {"U_s": 0.0, "I_s": 0.0, "R_s": 0.0}
    sub = {}
    v = pi_bar.lex
    for key, blk, cols in basis.groups(K):
        a = resid[:, cols]
        cov = a.T @ a / (n - ddof)
        try:
            ch = linalg.cho_factor(cov, lower=True)
        except linalg.LinAlgError as exc:
            raise ScalingError("covariance block %r is singular" % (key,)) from exc
        stat = float(n * v[cols] @ linalg.cho_solve(ch, v[cols]))
        sub[key] = stat
        out[blk + "_s"] += stat
    out["Q_s"] = out["U_s"] + out["I_s"] + out["R_s"]
    out["sub_scaled"] = sub
    return out


# ---------------------------------------------------------------------------

@dataclass
class DecompositionResult:
    """All statistics of one test run."""

    family: str
    m: int
    n: int
    K: int
    k_min: int
    Q: float
    U: float
    I: float
    R: float
    U_s: float = np.nan
    I_s: float = np.nan
    R_s: float = np.nan
    Q_s: float = np.nan
    sub: dict = field(default_factory=dict)
    sub_scaled: dict = field(default_factory=dict)
    dof: dict = field(default_factory=dict)
    p_asymptotic: dict = field(default_factory=dict)
    p_montecarlo: dict = None
    K_hat: int = None
    extra: dict = field(default_factory=dict)

    def statistics(self):
        """Flat ``name -> value`` mapping of every reported statistic."""
        out = {k: getattr(self, k) for k in ("Q", "U", "I", "R", "U_s", "I_s", "R_s", "Q_s")}
        for (k, j), v in self.sub.items():
            out["C2_%d_%d" % (k, j)] = v
        for key, v in self.sub_scaled.items():
            out["C2s_%s_%s" % key] = v
        if self.family == "mvn":
            # Mardia-type quantities: n b1 / 6 and the kurtosis square
            if self.K >= 3:
                out["skewness"] = sum(v for (k, _), v in self.sub.items() if k == 3)
            if self.K >= 4 and (4, 2) in self.sub:
                out["kurtosis"] = self.sub[(4, 2)]
        if "Q_Khat" in self.extra:
            out["Q_Khat"] = self.extra["Q_Khat"]
        return out

    def to_dict(self):
        return {
            "family": self.family, "m": self.m, "n": self.n, "K": self.K, "k_min": self.k_min,
            "statistics": {
                "raw": {k: getattr(self, k) for k in ("Q", "U", "I", "R")},
                "scaled": {k: getattr(self, k) for k in ("U_s", "I_s", "R_s", "Q_s")},
                "subcomponents": {"%d,%d" % key: v for key, v in self.sub.items()},
                "scaled_subcomponents": {"%s,%s" % key: v for key, v in self.sub_scaled.items()},
            },
            "dof": dict(self.dof),
            "p_asymptotic": dict(self.p_asymptotic),
            "p_montecarlo": None if self.p_montecarlo is None else dict(self.p_montecarlo),
            "K_hat": self.K_hat,
        }


def _p_values(stats_, dof):
    chi = stats.chi2.sf
    pairs = {"Q": "Q", "U": "U", "I": "I", "R": "R", "U_s": "U", "I_s": "I", "R_s": "R", "Q_s": "Q"}
    return {k: float(chi(stats_[k], dof[d])) if dof[d] > 0 else np.nan
            for k, d in pairs.items() if np.isfinite(stats_.get(k, np.nan))}


class Decomposer:
    """Reusable fit-and-decompose pipeline for one ``(family, K)``.

    Parameters
    ----------
    family : NullFamily
    K : int
    scaled : bool
        Compute the studentised components.
    ddof : int
        Divisor offset of the empirical covariances.
    """

    def __init__(self, family, K, scaled=True, ddof=1):
        self.family = family
        self.K = K
        self.basis = BasisSet(family, K)
        self.scaled = scaled
        self.ddof = ddof
        if isinstance(family, MVN):
            self.constants = None
            self.projection = None
        else:
            self.constants = decomposition_constants(family, K=K, polys=self.basis.polys)
            C, VZ = score_covariance(self.basis)
            self.projection = np.linalg.solve(VZ, C.T).T

    def standardize(self, data):
        return standardize(fit_mle(self.family, data), data)

    def from_sample(self, sample, K=None):
        K = self.K if K is None else K
        b = self.basis
        vals = b.evaluate(sample)
        pb = PiBar(vals.mean(axis=0), b)
        n = sample.n
        raw = global_statistic(pb, self.constants, n, K)
        stats_ = dict(raw)
        if self.scaled:
            stats_.update(scaled_components(b, sample, pb, n, K, values=vals,
                                            projection=self.projection, ddof=self.ddof))
        dof = degrees_of_freedom(b, K)
        res = DecompositionResult(
            self.family.name, b.m, n, K, b.k_min,
            raw["Q"], raw["U"], raw["I"], raw["R"],
            stats_.get("U_s", np.nan), stats_.get("I_s", np.nan),
            stats_.get("R_s", np.nan), stats_.get("Q_s", np.nan),
            raw["sub"], stats_.get("sub_scaled", {}), dof)
        res.p_asymptotic = _p_values(stats_, dof)
        res.extra["pi_bar"] = pb
        return res

    def __call__(self, data, K=None):
        return self.from_sample(self.standardize(data), K)


def decompose(data, family, K=5, scaled=True):
    """Fit ``family`` to ``data`` and return the full decomposition."""
    return Decomposer(family, K, scaled=scaled)(data)


def penalty(m, k, n):
    """Schwarz-type penalty ``sum_{j=1}^k C(m+j-1, j) log n``."""
    return sum(comb(m + j - 1, j) for j in range(1, k + 1)) * log(n)


def select_K(data, family, d_n, decomposer=None):
    """Data-driven order: the first maximiser of ``Q_k - penalty(k)`` over
    ``k_min <= k <= d_n``.

    Returns
    -------
    K_hat : int
    result : DecompositionResult
        The test at ``K_hat``; ``extra`` holds the whole ``Q_k`` path and
        the chi-square reference with ``m`` degrees of freedom.
    """
    if d_n < family.k_min:
        raise ValueError("d_n=%d is below k_min=%d" % (d_n, family.k_min))
    dec = decomposer or Decomposer(family, d_n)
    sample = dec.standardize(data)
    n = sample.n
    pb = PiBar(dec.basis.evaluate(sample).mean(axis=0), dec.basis)
    path, crit = {}, {}
    best = None
    for k in range(family.k_min, d_n + 1):
        path[k] = global_statistic(pb, dec.constants, n, k)["Q"]
        crit[k] = path[k] - penalty(family.m, k, n)
        if best is None or crit[k] > crit[best]:
            best = k
    res = dec.from_sample(sample, K=best)
    res.K_hat = best
    res.extra.update(Q_path=path, criterion=crit, Q_Khat=res.Q,
                     p_chi2_m=float(stats.chi2.sf(res.Q, family.m)))
    return best, res
