"""Monte Carlo null distributions and p-values.

Replicate ``b`` of a batch with seed ``s`` draws from the generator
``default_rng([s, *stream, b, attempt])``, where ``stream`` labels the batch
(empty for null tables).  Because each replicate owns its stream,
the table does not depend on how replicates are scheduled across workers.
A replicate whose fit fails is redrawn with ``attempt + 1``.
"""

import json
import os
import time
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import __version__
from .decomposition import Decomposer, ScalingError, select_K
from .alternatives import AlternativeSpec, sample_alternative
from .families import (ConvergenceError, DegenerateDataError, SupportError,
                       get_family, sample_null)

__all__ = [
    "NullTable",
    "ConfigurationError",
    "build_null_table",
    "build_null_tables",
    "make_spec",
    "run_replicates",
    "mc_pvalue",
    "critical_value",
    "resolve_workers",
    "replicate_statistics",
]

#: failures that trigger a redraw of the replicate
REDRAW_ERRORS = (DegenerateDataError, ConvergenceError, SupportError, ScalingError,
                 np.linalg.LinAlgError, FloatingPointError)
MAX_ATTEMPTS = 50


class ConfigurationError(ValueError):
    """Table and observed result were produced under different settings."""


def resolve_workers(workers=None):
    """Worker count: explicit value, else the ``WORKERS`` environment
    variable, else 1."""
    if workers is None:
        workers = os.environ.get("WORKERS", 1)
    workers = int(workers)
    if workers < 1:
        raise ValueError("workers must be >= 1")
    return workers


@dataclass
class NullTable:
    """Sorted null samples of every statistic for one configuration."""

    key: dict
    samples: dict
    B: int
    seed: int
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        self.samples = {k: np.sort(np.asarray(v, dtype=float)) for k, v in self.samples.items()}

    def save(self, path):
        """Write ``path`` (JSON lines, one statistic per line) and the
        sidecar ``path + '.meta.json'``."""
        with open(path, "w", encoding="utf-8") as fh:
            for name in sorted(self.samples):
                vals = ",".join("%.17g" % v for v in self.samples[name])
                fh.write('{"statistic": %s, "values": [%s]}\n' % (json.dumps(name), vals))
        meta = {"key": self.key, "B": self.B, "seed": self.seed, "metadata": self.metadata}
        with open(path + ".meta.json", "w", encoding="utf-8") as fh:
            json.dump(meta, fh, indent=2, sort_keys=True)

    @classmethod
    def load(cls, path):
        samples = {}
        with open(path, encoding="utf-8") as fh:
            for line in fh:
                if line.strip():
                    rec = json.loads(line)
                    samples[rec["statistic"]] = rec["values"]
        with open(path + ".meta.json", encoding="utf-8") as fh:
            meta = json.load(fh)
        return cls(meta["key"], samples, meta["B"], meta["seed"], meta.get("metadata", {}))

    def matches(self, result):
        k = self.key
        return (k["family"] == result.family and k["m"] == result.m
                and k["n"] == result.n and k["K"] == result.K)


def _table_key(family, n, K, d_n, ddof):
    key = {"family": family.name, "m": family.m, "n": int(n), "K": int(K),
           "k_min": family.k_min, "ddof": int(ddof),
           "granularity": "(k,j)" if family.name == "mvn" else "(sub-block,k)"}
    if getattr(family, "alpha", None) is not None:
        key["alpha"] = family.alpha
    if d_n is not None:
        key["d_n"] = int(d_n)
    return key


def _family_spec(family):
    return {"family": family.name, "m": family.m, "alpha": getattr(family, "alpha", None)}


def make_spec(family, n, K, seed, source=None, stream=(), d_n=None, ddof=1):
    """Picklable description of a batch of replicates.

    Parameters
    ----------
    family : NullFamily
        Family that is fitted and tested.
    n : int
    K : int or sequence of int
        Orders at which statistics are recorded.
    seed : int
    source : dict, optional
        Data generator: ``None`` draws from ``family`` itself, otherwise
        ``{"alternative": name, "params": {...}}``.
    stream : sequence of int
        Extra stream labels placed between the seed and the replicate index.
    d_n : int, optional
        Also record the statistic at the data-driven order.
    ddof : int
    """
    Ks = sorted({int(K)} if np.isscalar(K) else {int(k) for k in K})
    if Ks[0] < family.k_min:
        raise ValueError("K=%d is below k_min=%d" % (Ks[0], family.k_min))
    return {**_family_spec(family), "n": int(n), "K": Ks, "seed": int(seed),
            "source": source, "stream": [int(s) for s in stream],
            "ddof": int(ddof), "d_n": None if d_n is None else int(d_n)}


_WORKER = {}


def _init_worker(spec):
    fam = get_family(spec["family"], spec["m"], spec.get("alpha"))
    _WORKER["spec"] = spec
    _WORKER["family"] = fam
    _WORKER["dec"] = Decomposer(fam, max(spec["K"]), ddof=spec["ddof"])
    d_n = spec.get("d_n")
    _WORKER["dec_sel"] = Decomposer(fam, d_n, ddof=spec["ddof"]) if d_n else None
    src = spec.get("source")
    if src is None:
        _WORKER["draw"] = lambda rng, n: sample_null(fam, n, rng=rng)
    else:
        alt = AlternativeSpec(src["alternative"], src.get("params", {}), fam.m)
        _WORKER["draw"] = lambda rng, n: sample_alternative(alt, n, rng=rng)


def replicate_statistics(index, spec=None):
    """Statistics of replicate ``index``.

    Returns
    -------
    stats : dict
        ``K -> {name: value}``; ``Q_Khat`` is added to every order when
        ``d_n`` is set.
    attempts : int
        Number of redraws before the pipeline succeeded.
    """
    if spec is not None and _WORKER.get("spec") != spec:
        _init_worker(spec)
    spec, fam, dec = _WORKER["spec"], _WORKER["family"], _WORKER["dec"]
    head = [spec["seed"], *spec.get("stream", [])]
    for attempt in range(MAX_ATTEMPTS):
        rng = np.random.default_rng(head + [index, attempt])
        x = _WORKER["draw"](rng, spec["n"])
        try:
            with np.errstate(divide="raise", invalid="raise", over="raise"):
                sample = dec.standardize(x)
                out = {K: dec.from_sample(sample, K).statistics() for K in spec["K"]}
                if _WORKER["dec_sel"] is not None:
                    q = select_K(x, fam, spec["d_n"], _WORKER["dec_sel"])[1].Q
                    for v in out.values():
                        v["Q_Khat"] = q
        except REDRAW_ERRORS:
            continue
        return out, attempt
    raise RuntimeError("replicate %d failed %d times" % (index, MAX_ATTEMPTS))


def _chunk(args):
    spec, lo, hi = args
    if _WORKER.get("spec") != spec:
        _init_worker(spec)
    return lo, [replicate_statistics(b) for b in range(lo, hi)]


def run_replicates(spec, B, workers=None, chunk=None):
    """Run replicates ``0 .. B-1`` of ``spec`` and return them in index order.

    Returns
    -------
    rows : list of dict
        One ``K -> statistics`` mapping per replicate.
    redraws : int
    """
    workers = resolve_workers(workers)
    chunk = chunk or max(1, min(250, B // (4 * workers) or 1))
    jobs = [(spec, lo, min(lo + chunk, B)) for lo in range(0, B, chunk)]
    results = {}
    if workers == 1:
        for job in jobs:
            lo, res = _chunk(job)
            results[lo] = res
    else:
        with ProcessPoolExecutor(max_workers=workers, initializer=_init_worker,
                                 initargs=(spec,)) as ex:
            for lo, res in ex.map(_chunk, jobs):
                results[lo] = res
    rows = [r for lo in sorted(results) for r in results[lo]]
    return [r[0] for r in rows], int(sum(r[1] for r in rows))


def build_null_tables(family, n, K_list, B, seed=0, workers=None, d_n=None, ddof=1,
                      chunk=None):
    """Null tables for several orders from one set of simulated datasets.

    Each replicate is fitted once and decomposed at every order, so the
    table for a given ``K`` is identical to the one returned by
    :func:`build_null_table` with the same seed.

    Returns
    -------
    dict
        ``K -> NullTable``.
    """
    if B < 100:
        raise ValueError("B must be at least 100")
    spec = make_spec(family, n, K_list, seed, d_n=d_n, ddof=ddof)
    t0 = time.time()
    rows, redraws = run_replicates(spec, B, workers, chunk)
    meta = {"redraws": redraws, "created": time.strftime("%Y-%m-%dT%H:%M:%S"),
            "runtime_seconds": round(time.time() - t0, 3), "workers": resolve_workers(workers),
            "version": __version__}
    if redraws > 0.01 * B:
        meta["warning"] = "%d of %d replicates were redrawn" % (redraws, B)
        warnings.warn(meta["warning"])
    tables = {}
    for K in spec["K"]:
        names = rows[0][K].keys()
        samples = {name: [r[K][name] for r in rows] for name in names}
        tables[K] = NullTable(_table_key(family, n, K, d_n, ddof), samples, int(B), int(seed),
                              dict(meta))
    return tables


def build_null_table(family, n, K, B, seed=0, workers=None, d_n=None, ddof=1, chunk=None):
    """Simulate ``B`` null datasets of size ``n`` and collect all statistics.

    Parameters
    ----------
    family : NullFamily
    n, K, B : int
    seed : int
    workers : int, optional
        Process count (defaults to ``$WORKERS`` or 1).
    d_n : int, optional
        Also record the statistic at the data-driven order.
    ddof : int
        Covariance divisor offset of the scaled components.

    Returns
    -------
    NullTable
    """
    return build_null_tables(family, n, [K], B, seed, workers, d_n, ddof, chunk)[int(K)]


def mc_pvalue(table, observed, statistics=None):
    """``(1 + #{null >= observed}) / (1 + B)`` per statistic.

    Parameters
    ----------
    table : NullTable
    observed : DecompositionResult or dict
    statistics : iterable of str, optional

    Raises
    ------
    ConfigurationError
        If the table was built for another configuration.
    """
    if hasattr(observed, "statistics"):
        if not table.matches(observed):
            raise ConfigurationError("null table %r does not match (family=%s, m=%d, n=%d, K=%d)"
                                     % (table.key, observed.family, observed.m, observed.n, observed.K))
        observed = observed.statistics()
    names = statistics or [k for k in observed if k in table.samples]
    out = {}
    for k in names:
        arr = table.samples[k]
        ge = arr.size - np.searchsorted(arr, observed[k], side="left")
        out[k] = float((1 + ge) / (1 + arr.size))
    return out


def critical_value(table, statistic, alpha=0.05):
    """Smallest table value ``c`` such that observing ``c`` gives a Monte
    Carlo p-value of at most ``alpha``; reject when the statistic is at
    least ``c``."""
    arr = table.samples[statistic]
    B = arr.size
    # p <= alpha  <=>  #{null >= x} <= alpha (B + 1) - 1
    allowed = int(np.floor(alpha * (B + 1) + 1e-9)) - 1
    if allowed < 0:
        return np.inf
    if allowed == 0:
        return float(np.nextafter(arr[-1], np.inf))
    return float(arr[B - allowed])
