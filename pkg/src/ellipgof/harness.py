"""Power studies: rejection rates of the statistics under alternatives,
calibrated by Monte Carlo null tables.

A cell is an ``(alternative, n)`` pair.  The datasets of a cell depend only
on the study seed, the alternative name and ``n``, so a cell gives the same
numbers whichever study it appears in.
"""

import json
import time
import zlib
from dataclasses import asdict, dataclass, field

import numpy as np

from . import __version__
from .alternatives import DEFAULTS as ALT_DEFAULTS
from .families import get_family
from .montecarlo import (ConfigurationError, NullTable, build_null_tables, make_spec,
                         resolve_workers, run_replicates)

__all__ = [
    "PowerStudyConfig",
    "PowerMatrix",
    "run_power_study",
    "component_sweep",
    "format_table",
    "NULL_SOURCE",
]

#: cell name that draws from the null family itself
NULL_SOURCE = "null"
DEFAULT_STATISTICS = ("Q", "U_s", "I_s", "R_s", "Q_s")
FULL_SCALE = {"replicates": 5000, "null_B": 20000}


@dataclass
class PowerStudyConfig:
    """Settings of a power study.

    Parameters
    ----------
    cells : list of dict
        Each ``{"alternative": name, "n": int}`` with optional ``"params"``.
        ``alternative = "null"`` samples from the null family.
    K : list of int
    alpha : float
    replicates : int
        Datasets per cell.
    statistics : sequence of str
        Keys of :meth:`DecompositionResult.statistics`.
    family : str
        Null family that is fitted and tested.
    null_B, null_seed : int
        Size and seed of null tables built on demand.
    null_tables : dict, optional
        ``str(n) -> {str(K): path}`` of prebuilt tables.
    build_null : bool
        Build missing tables instead of raising.
    seed : int
    workers : int, optional
    output : str, optional
    full_scale : bool
        Use 5000 replicates and 20000-replicate null tables.
    """

    cells: list
    K: list = field(default_factory=lambda: [5])
    alpha: float = 0.05
    replicates: int = 500
    statistics: tuple = DEFAULT_STATISTICS
    family: str = "mvn"
    m: int = 2
    null_B: int = 2000
    null_seed: int = 0
    null_tables: dict = None
    build_null: bool = True
    seed: int = 1
    workers: int = None
    output: str = None
    full_scale: bool = False

    def __post_init__(self):
        if self.full_scale:
            self.replicates = max(self.replicates, FULL_SCALE["replicates"])
            self.null_B = max(self.null_B, FULL_SCALE["null_B"])
        if not 0.0 < self.alpha < 1.0:
            raise ValueError("alpha must lie in (0, 1)")
        if self.replicates < 100:
            raise ValueError("replicates must be at least 100")
        self.K = sorted({int(k) for k in np.atleast_1d(self.K)})
        self.statistics = tuple(self.statistics)
        cells = []
        for c in self.cells:
            if isinstance(c, (list, tuple)):
                c = {"alternative": c[0], "n": c[1]}
            c = {"alternative": c["alternative"], "n": int(c["n"]),
                 "params": dict(c.get("params", {}))}
            if c["alternative"] != NULL_SOURCE and c["alternative"] not in ALT_DEFAULTS:
                raise ValueError("unknown alternative %r" % c["alternative"])
            cells.append(c)
        self.cells = cells

    @classmethod
    def from_dict(cls, d):
        return cls(**d)

    @classmethod
    def from_json(cls, path):
        with open(path, encoding="utf-8") as fh:
            return cls.from_dict(json.load(fh))

    def to_dict(self):
        return asdict(self)


@dataclass
class PowerMatrix:
    """Rejection proportions per cell, order and statistic.

    ``entries`` is a list of records with keys ``alternative``, ``n``, ``K``,
    ``statistic``, ``power``, ``se``, ``critical_value`` and ``replicates``.
    """

    entries: list
    alpha: float
    metadata: dict = field(default_factory=dict)

    def power(self, alternative, n, K, statistic):
        e = self._find(alternative, n, K, statistic)
        return e["power"]

    def se(self, alternative, n, K, statistic):
        return self._find(alternative, n, K, statistic)["se"]

    def _find(self, alternative, n, K, statistic):
        for e in self.entries:
            if (e["alternative"], e["n"], e["K"], e["statistic"]) == (alternative, n, K, statistic):
                return e
        raise KeyError((alternative, n, K, statistic))

    def to_dict(self):
        return {"alpha": self.alpha, "entries": self.entries, "metadata": self.metadata}

    def save(self, path):
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.to_dict(), fh, indent=2)

    @classmethod
    def load(cls, path):
        with open(path, encoding="utf-8") as fh:
            d = json.load(fh)
        return cls(d["entries"], d["alpha"], d.get("metadata", {}))


def _cell_stream(cell):
    # stable labels so a cell's datasets do not depend on its position
    tag = json.dumps([cell["alternative"], cell["params"]], sort_keys=True)
    return [2, zlib.crc32(tag.encode()), cell["n"]]


def _null_tables_for(config, family, n, workers):
    K = config.K
    given = (config.null_tables or {}).get(str(n))
    if given:
        tables = {}
        for k in K:
            path = given.get(str(k))
            if path is None:
                raise ConfigurationError("no null table for n=%d, K=%d" % (n, k))
            t = NullTable.load(path)
            if t.key["n"] != n or t.key["K"] != k or t.key["family"] != family.name:
                raise ConfigurationError("null table %s has key %r, expected n=%d, K=%d"
                                         % (path, t.key, n, k))
            tables[k] = t
        return tables
    if not config.build_null:
        raise ConfigurationError("missing null table for n=%d and building is disabled" % n)
    return build_null_tables(family, n, K, config.null_B, config.null_seed, workers)


def _reject(table, name, values, alpha):
    # reject when the Monte Carlo p-value (1 + #{null >= x}) / (1 + B) <= alpha
    arr = table.samples[name]
    ge = arr.size - np.searchsorted(arr, values, side="left")
    return (1.0 + ge) / (1.0 + arr.size) <= alpha


def run_power_study(config, null_tables=None):
    """Empirical power of every configured statistic in every cell.

    Parameters
    ----------
    config : PowerStudyConfig
    null_tables : dict, optional
        Cache ``n -> {K: NullTable}``; filled in as tables are built.

    Returns
    -------
    PowerMatrix

    Raises
    ------
    ConfigurationError
        If a null table is missing or does not match its cell.
    """
    t0 = time.time()
    workers = resolve_workers(config.workers)
    family = get_family(config.family, config.m)
    cache = {} if null_tables is None else null_tables
    entries = []
    redraws = {}
    for cell in config.cells:
        n = cell["n"]
        if n not in cache:
            cache[n] = _null_tables_for(config, family, n, workers)
        tables = cache[n]
        source = None
        if cell["alternative"] != NULL_SOURCE:
            source = {"alternative": cell["alternative"], "params": cell["params"]}
        spec = make_spec(family, n, config.K, config.seed, source=source,
                         stream=_cell_stream(cell))
        rows, nredraw = run_replicates(spec, config.replicates, workers)
        redraws["%s/%d" % (cell["alternative"], n)] = nredraw
        for K in config.K:
            for name in config.statistics:
                if name not in tables[K].samples:
                    raise ConfigurationError("statistic %r is not in the null table" % name)
                vals = np.array([r[K][name] for r in rows])
                p = float(_reject(tables[K], name, vals, config.alpha).mean())
                entries.append({
                    "alternative": cell["alternative"], "n": n, "K": K, "statistic": name,
                    "power": p, "se": float(np.sqrt(p * (1.0 - p) / vals.size)),
                    "replicates": int(vals.size),
                })
    meta = {"seed": config.seed, "null_seed": config.null_seed, "null_B": config.null_B,
            "family": config.family, "m": config.m, "redraws": redraws, "workers": workers,
            "runtime_seconds": round(time.time() - t0, 3), "version": __version__}
    out = PowerMatrix(entries, config.alpha, meta)
    if config.output:
        out.save(config.output)
    return out


def component_sweep(alternative, n, statistic_family, K_range, replicates=500, alpha=0.05,
                    seed=1, null_B=2000, null_seed=0, workers=None, params=None,
                    null_tables=None):
    """Power of one scaled component as the order varies.

    Parameters
    ----------
    alternative : str
    n : int
    statistic_family : {"U", "I", "R", "Q"}
    K_range : iterable of int

    Returns
    -------
    dict
        ``K -> (power, se)``.
    """
    if statistic_family not in ("U", "I", "R", "Q"):
        raise ValueError("statistic_family must be U, I, R or Q")
    name = statistic_family if statistic_family == "Q" else statistic_family + "_s"
    cfg = PowerStudyConfig(cells=[{"alternative": alternative, "n": n, "params": params or {}}],
                           K=list(K_range), alpha=alpha, replicates=replicates,
                           statistics=(name,), null_B=null_B, null_seed=null_seed,
                           seed=seed, workers=workers)
    pm = run_power_study(cfg, null_tables)
    return {K: (pm.power(alternative, n, K, name), pm.se(alternative, n, K, name))
            for K in cfg.K}


_LABELS = {"Q": "Q", "U_s": "U(s)", "I_s": "I(s)", "R_s": "R(s)", "Q_s": "Q(s)",
           "U": "U", "I": "I", "R": "R", "skewness": "b1", "kurtosis": "b2"}


def format_table(matrix, K=None):
    """Plain-text power table in percent: one row per cell, one column per
    statistic (suffixed by the order when several are present)."""
    Ks = sorted({e["K"] for e in matrix.entries}) if K is None else [K]
    stats_ = list(dict.fromkeys(e["statistic"] for e in matrix.entries))
    cols = [(k, s) for k in Ks for s in stats_]
    head = ["%s_%d" % (_LABELS.get(s, s), k) for k, s in cols]
    cells = list(dict.fromkeys((e["alternative"], e["n"]) for e in matrix.entries))
    lookup = {(e["alternative"], e["n"], e["K"], e["statistic"]): e["power"]
              for e in matrix.entries}
    width = max(len("alternative (n)"), *(len("%s (%d)" % c) for c in cells))
    lines = ["%-*s  %s" % (width, "alternative (n)", "  ".join("%8s" % h for h in head))]
    for c in cells:
        vals = ["%8.1f" % (100 * lookup[c + col]) for col in cols]
        lines.append("%-*s  %s" % (width, "%s (%d)" % c, "  ".join(vals)))
    return "\n".join(lines)
