"""Bivariate alternatives used in the power experiments.

Gamma laws are written ``Gamma(shape, scale)`` throughout.

The ``power_exp_2`` generator draws a Gamma radius by default.  Its
``radius_law="power_exponential"`` option instead draws from the elliptical
law with ``phi(t) = exp(-t^pe_alpha)``.
"""

from dataclasses import dataclass, field
from math import gamma, sqrt

import numpy as np

__all__ = ["AlternativeSpec", "sample_alternative", "ALTERNATIVES", "DEFAULTS"]

DEFAULTS = {
    "khintchine": {"shape": 1.5, "gamma_exponent": 0.3998935, "power": 0.398935},
    "contaminated_mvn": {"weight": 0.8, "shift": (1.0, 1.0), "variances": (1.0, 2.0)},
    "laplace_type": {},
    "power_exp_2": {"shape": 2.0, "scale": 2.0, "scale_is_rate": False,
                    "radius_law": "gamma", "pe_alpha": 2.0},
}
ALTERNATIVES = tuple(DEFAULTS)


@dataclass(frozen=True)
class AlternativeSpec:
    """Named alternative with its parameters (defaults filled in).

    Parameters
    ----------
    name : str
        One of ``khintchine``, ``contaminated_mvn``, ``laplace_type``,
        ``power_exp_2``.
    params : dict, optional
        Overrides of the defaults.
    m : int
        Dimension; only 2 is implemented.
    """

    name: str
    params: dict = field(default_factory=dict)
    m: int = 2

    def __post_init__(self):
        if self.name not in DEFAULTS:
            raise ValueError("unknown alternative %r; choose from %s" % (self.name, ALTERNATIVES))
        if self.m != 2:
            raise ValueError("alternatives are bivariate")
        unknown = set(self.params) - set(DEFAULTS[self.name])
        if unknown:
            raise ValueError("unknown parameters for %s: %s" % (self.name, sorted(unknown)))
        merged = dict(DEFAULTS[self.name])
        merged.update(self.params)
        object.__setattr__(self, "params", merged)


def _khintchine(rng, n, shape, gamma_exponent, power):
    z = rng.gamma(shape, 1.0, size=n)
    # the two exponents are kept exactly as published
    mult = sqrt(3.0 * gamma(shape) / gamma(shape + 2.0 * gamma_exponent))
    v = rng.random((n, 2))
    return (mult * z ** power)[:, None] * 2.0 * (v - 0.5)


def _contaminated(rng, n, weight, shift, variances):
    first = rng.random(n) < weight
    z = rng.standard_normal((n, 2))
    alt = np.asarray(shift) + z * np.sqrt(np.asarray(variances))
    return np.where(first[:, None], z, alt)


def _laplace_type(rng, n):
    w = rng.exponential(1.0, size=(n, 3))
    return w[:, 1:] - w[:, :1]


def _power_exp_2(rng, n, shape, scale, scale_is_rate, radius_law, pe_alpha):
    if radius_law == "gamma":
        scale = 1.0 / scale if scale_is_rate else scale
        r = rng.gamma(shape, scale, size=n)
    elif radius_law == "power_exponential":
        # phi(t) = exp(-t^a) in two dimensions: (R^2)^a ~ Gamma(1 / a, 1)
        r = rng.gamma(1.0 / pe_alpha, 1.0, size=n) ** (0.5 / pe_alpha)
    else:
        raise ValueError("radius_law must be 'gamma' or 'power_exponential'")
    theta = rng.uniform(0.0, 2.0 * np.pi, size=n)
    return r[:, None] * np.column_stack([np.cos(theta), np.sin(theta)])


_GENERATORS = {
    "khintchine": _khintchine,
    "contaminated_mvn": _contaminated,
    "laplace_type": _laplace_type,
    "power_exp_2": _power_exp_2,
}


def sample_alternative(spec, n, seed=None, rng=None):
    """Draw ``n`` bivariate observations from an alternative.

    Parameters
    ----------
    spec : AlternativeSpec or str
    n : int
    seed : int or sequence, optional
    rng : numpy.random.Generator, optional
        Takes precedence over ``seed``.

    Returns
    -------
    ndarray (n, 2)
    """
    if isinstance(spec, str):
        spec = AlternativeSpec(spec)
    if rng is None:
        rng = np.random.default_rng(seed)
    return _GENERATORS[spec.name](rng, int(n), **spec.params)
