"""Self-describing on-disk store for calibration artifacts.

One file per artifact: an 8-byte magic, a little-endian uint32 header
length, a JSON header (sorted keys) naming the payload arrays and their
shapes, then the raw float64 arrays.  No timestamps are written anywhere,
so rebuilding with the same seed yields byte-identical files; build times
go to the log only.  A ``manifest.json`` index is regenerated from the
directory contents after every write.

``TableStore`` adds caching and deterministic lazy building: the stream
seed of every artifact is derived from (store seed, artifact identity),
never from build order.
"""

from __future__ import annotations

import bisect
import json
import logging
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import tables
from .errors import TableError, TableMissingError
from .tables import GaussianAsymptote, TabulatedNull

log = logging.getLogger(__name__)

MAGIC = b"CGNULTB1"

# Event-count grid for prebuilt tables: dense where Poisson mass sits in
# limit setting (every m up to 200), then ~30 points per decade.
_GRID_DENSE_MAX = 200
_GRID_CAP = 10_000

# Rate grid for the rate-conditioned outer calibrations: a 24-per-decade
# exponent lattice from ~0.02 to ~420 (hits every power of ten exactly).
RATE_GRID_EXPONENTS = (-41, 63)
RATE_GRID_PER_DECADE = 24


def default_m_grid(cap: int = _GRID_CAP) -> list[int]:
    pts = set(range(1, _GRID_DENSE_MAX + 1))
    x = float(_GRID_DENSE_MAX)
    ratio = 10 ** (1 / 30)
    while x < cap:
        x *= ratio
        pts.add(min(int(round(x)), cap))
    pts.update(10 ** k for k in range(3, int(math.log10(cap)) + 1))
    return sorted(p for p in pts if p <= cap)


def rate_grid() -> np.ndarray:
    lo, hi = RATE_GRID_EXPONENTS
    return 10.0 ** (np.arange(lo, hi + 1) / RATE_GRID_PER_DECADE)


def default_trials(test_id: str, m: int) -> int:
    """Per-table trial budget: dense accuracy at low m, bounded cost above."""
    if m <= 20:
        return 1_000_000
    if m <= 60:
        return 500_000
    if m <= 200:
        return 250_000
    if m <= 1000:
        return 150_000
    return 100_000


# ---------------------------------------------------------------------------
# Serialization
# ---------------------------------------------------------------------------


def _write_blob(path: Path, header: dict, arrays: dict[str, np.ndarray]) -> None:
    header = dict(header)
    header["arrays"] = [[name, list(arr.shape)] for name, arr in arrays.items()]
    blob = json.dumps(header, sort_keys=True, separators=(",", ":")).encode()
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(np.uint32(len(blob)).tobytes())
        fh.write(blob)
        for arr in arrays.values():
            fh.write(np.ascontiguousarray(arr, dtype="<f8").tobytes())


def _read_blob(path: Path) -> tuple[dict, dict[str, np.ndarray]]:
    with open(path, "rb") as fh:
        if fh.read(8) != MAGIC:
            raise TableError(f"{path}: not a cubegof table file")
        (hlen,) = np.frombuffer(fh.read(4), dtype="<u4")
        header = json.loads(fh.read(int(hlen)).decode())
        arrays = {}
        for name, shape in header["arrays"]:
            count = int(np.prod(shape)) if shape else 1
            data = np.frombuffer(fh.read(8 * count), dtype="<f8").reshape(shape)
            arrays[name] = data.copy()
    return header, arrays


def write_table(path: Path, table: TabulatedNull) -> None:
    header = {
        "format": tables.FORMAT_VERSION,
        "kind": table.kind,
        "test_id": table.test_id,
        "m": int(table.m),
        "mu": None if math.isnan(table.mu) else float(table.mu),
        "trials": int(table.trials),
        "seed": int(table.seed),
    }
    arrays = {"knots": table.knots, "cdf": table.cdf_values}
    if table.has_orders:
        arrays["inner_ks"] = table.inner_ks.astype(float)
        arrays["inner_knots"] = table.inner_knots
        arrays["inner_cdf"] = table.inner_cdf
    _write_blob(path, header, arrays)


def read_table(path: Path) -> TabulatedNull:
    header, arrays = _read_blob(path)
    if header["kind"] not in ("count", "rate"):
        raise TableError(f"{path}: kind {header['kind']!r} is not a null table")
    return TabulatedNull(
        test_id=header["test_id"],
        m=int(header["m"]),
        knots=arrays["knots"],
        cdf_values=arrays["cdf"],
        trials=int(header["trials"]),
        seed=int(header["seed"]),
        version=int(header["format"]),
        kind=header["kind"],
        mu=float("nan") if header.get("mu") is None else float(header["mu"]),
        inner_ks=arrays.get("inner_ks", np.empty(0)).astype(int),
        inner_knots=arrays.get("inner_knots", np.empty((0, 0))),
        inner_cdf=arrays.get("inner_cdf", np.empty((0, 0))),
    )


def write_asymptote(path: Path, asym: GaussianAsymptote) -> None:
    header = {
        "format": tables.FORMAT_VERSION,
        "kind": "asymptote",
        "test_id": asym.test_id,
        "threshold": int(asym.threshold),
        "trials": int(asym.trials),
        "seed": int(asym.seed),
    }
    _write_blob(path, header, {"m_grid": asym.m_grid, "means": asym.means, "sds": asym.sds})


def write_surface(path: Path, surface) -> None:
    header = {
        "format": tables.FORMAT_VERSION,
        "kind": "surface",
        "test_id": surface.test_id,
        "n": int(surface.n),
        "trials": int(surface.trials),
        "seed": int(surface.seed),
    }
    _write_blob(
        path, header,
        {"mu_grid": surface.mu_grid, "c1_grid": surface.c1_grid,
         "coverage": surface.coverage},
    )


def read_surface(path: Path):
    from .limits import CorrectionSurface

    header, arrays = _read_blob(path)
    if header["kind"] != "surface":
        raise TableError(f"{path}: not a correction surface file")
    return CorrectionSurface(
        test_id=header["test_id"],
        n=int(header["n"]),
        mu_grid=arrays["mu_grid"],
        c1_grid=arrays["c1_grid"],
        coverage=arrays["coverage"],
        trials=int(header["trials"]),
        seed=int(header["seed"]),
    )


def read_asymptote(path: Path) -> GaussianAsymptote:
    header, arrays = _read_blob(path)
    if header["kind"] != "asymptote":
        raise TableError(f"{path}: not an asymptote file")
    return GaussianAsymptote(
        test_id=header["test_id"],
        m_grid=arrays["m_grid"],
        means=arrays["means"],
        sds=arrays["sds"],
        trials=int(header["trials"]),
        seed=int(header["seed"]),
        threshold=int(header["threshold"]),
    )


# ---------------------------------------------------------------------------
# The store
# ---------------------------------------------------------------------------


@dataclass
class _Key:
    kind: str
    test_id: str
    index: int  # m for count tables, rate-grid index for rate tables


class TableStore:
    """Directory of null tables with deterministic lazy building.

    ``auto_build=False`` gives the strict contract used by the CLI: a
    missing table raises ``TableMissingError`` instead of being built.
    """

    def __init__(self, root, *, seed: int = 0, auto_build: bool = True,
                 trials_policy=None, threads: int = 1):
        self.root = Path(root)
        self.root.mkdir(parents=True, exist_ok=True)
        self.seed = int(seed)
        self.auto_build = bool(auto_build)
        self.threads = max(int(threads), 1)
        self.trials_policy = trials_policy or default_trials
        self.m_grid = default_m_grid()
        self._grid_set = set(self.m_grid)
        self.rate_grid = rate_grid()
        self._cache: dict[tuple, object] = {}

    # -- paths ------------------------------------------------------------

    def count_path(self, test_id: str, m: int) -> Path:
        return self.root / f"{test_id}_m{int(m):07d}.cgt"

    def rate_path(self, test_id: str, idx: int) -> Path:
        return self.root / f"{test_id}_r{int(idx):04d}.cgt"

    def asymptote_path(self, test_id: str) -> Path:
        return self.root / f"{test_id}_asym.cgt"

    def surface_path(self, test_id: str, n: int) -> Path:
        return self.root / f"surface_{test_id}_n{int(n)}.cgt"

    # -- manifest ----------------------------------------------------------

    def refresh_manifest(self) -> Path:
        entries = []
        for path in sorted(self.root.glob("*.cgt")):
            header, _ = _read_blob(path)
            header.pop("arrays", None)
            header["file"] = path.name
            entries.append(header)
        payload = {"format": tables.FORMAT_VERSION, "entries": entries}
        out = self.root / "manifest.json"
        out.write_text(json.dumps(payload, sort_keys=True, indent=1) + "\n")
        return out

    # -- count tables -------------------------------------------------------

    def table_seed(self, test_id: str) -> int:
        return self.seed

    def count_table(self, test_id: str, m: int, *, trials: int | None = None) -> TabulatedNull:
        key = ("count", test_id, int(m))
        cached = self._cache.get(key)
        if cached is not None and (trials is None or cached.trials >= trials):
            return cached
        path = self.count_path(test_id, m)
        table = read_table(path) if path.exists() else None
        if table is None or (trials is not None and table.trials < trials):
            if not self.auto_build:
                raise TableMissingError(
                    f"no null table for ({test_id}, m={m}) in {self.root}"
                )
            budget = int(trials if trials is not None else self.trials_policy(test_id, m))
            log.info("tabulating %s at m=%d (%d trials)", test_id, m, budget)
            table = tables.tabulate_null(
                test_id, int(m), budget, self.seed, threads=self.threads
            )
            write_table(path, table)
            self.refresh_manifest()
        self._cache[key] = table
        return table

    def put_rate_table(self, table: TabulatedNull, idx: int) -> None:
        write_table(self.rate_path(table.test_id, idx), table)
        self._cache[("rate", table.test_id, int(idx))] = table
        self.refresh_manifest()

    def rate_table(self, test_id: str, idx: int) -> TabulatedNull | None:
        key = ("rate", test_id, int(idx))
        if key in self._cache:
            return self._cache[key]
        path = self.rate_path(test_id, idx)
        if not path.exists():
            return None
        table = read_table(path)
        self._cache[key] = table
        return table

    def asymptote(self, test_id: str, *, m_grid=None, trials: int = 100_000) -> GaussianAsymptote:
        key = ("asym", test_id)
        if key in self._cache:
            return self._cache[key]
        path = self.asymptote_path(test_id)
        if path.exists():
            asym = read_asymptote(path)
        else:
            if not self.auto_build:
                raise TableMissingError(f"no asymptote fit for {test_id} in {self.root}")
            grid = m_grid or [10_000, 14_000, 20_000]
            log.info("fitting %s asymptote on m grid %s", test_id, grid)
            asym = tables.fit_asymptote(test_id, grid, trials, self.seed)
            write_asymptote(path, asym)
            self.refresh_manifest()
        self._cache[key] = asym
        return asym

    def put_surface(self, surface) -> None:
        write_surface(self.surface_path(surface.test_id, surface.n), surface)
        self._cache[("surface", surface.test_id, int(surface.n))] = surface
        self.refresh_manifest()

    def surface(self, test_id: str, n: int):
        key = ("surface", test_id, int(n))
        if key in self._cache:
            return self._cache[key]
        path = self.surface_path(test_id, n)
        if not path.exists():
            raise TableMissingError(
                f"no correction surface for ({test_id}, n={n}) in {self.root}; "
                f"run calibrate first"
            )
        surf = read_surface(path)
        self._cache[key] = surf
        return surf

    # -- grid helpers --------------------------------------------------------

    def grid_round(self, m: int) -> tuple[int, int, float]:
        """Bracketing grid points and the ln-m weight of the upper one."""
        m = int(m)
        if m in self._grid_set:
            return m, m, 0.0
        if m < 1 or m > self.m_grid[-1]:
            raise TableError(f"event count m={m} outside the table grid")
        pos = bisect.bisect_left(self.m_grid, m)
        lo, hi = self.m_grid[pos - 1], self.m_grid[pos]
        lam = (math.log(m) - math.log(lo)) / (math.log(hi) - math.log(lo))
        return lo, hi, lam

    def rate_bracket(self, mu: float) -> tuple[int, int, float]:
        """Bracketing rate-grid indices and the ln-mu weight of the upper one."""
        grid = self.rate_grid
        if mu <= grid[0]:
            return 0, 0, 0.0
        if mu > grid[-1]:
            raise TableError(f"rate mu={mu} beyond the rate-calibration grid")
        pos = int(np.searchsorted(grid, mu))
        lo, hi = pos - 1, pos
        lam = (math.log(mu) - math.log(grid[lo])) / (math.log(grid[hi]) - math.log(grid[lo]))
        return lo, hi, lam


class NullEvaluator:
    """CDF lookups for one test across event counts, via the store grid.

    Off-grid counts (only possible above the dense range) interpolate the
    CDF value linearly in ln m between the bracketing grid tables.
    """

    def __init__(self, store: TableStore, test_id: str):
        self.store = store
        self.test_id = test_id

    def cdf(self, t, m: int):
        lo, hi, lam = self.store.grid_round(m)
        val = self.store.count_table(self.test_id, lo).eval(t)
        if hi != lo and lam > 0:
            val_hi = self.store.count_table(self.test_id, hi).eval(t)
            val = (1 - lam) * val + lam * val_hi
        return val

    def deficiency_pvalue(self, t, m: int):
        """P(null statistic >= t); small means the data look non-uniform."""
        return 1.0 - self.cdf(t, m)

    def cdf_matrix(self, t_vec: np.ndarray, m_values: np.ndarray) -> np.ndarray:
        """F(t_i | m_j) matrix, shape (len(t_vec), len(m_values)).

        Grid tables are evaluated once each; off-grid columns are linear
        blends of their bracketing grid columns.
        """
        t_vec = np.asarray(t_vec, dtype=float)
        m_values = np.asarray(m_values, dtype=int)
        cols = {}
        for m in np.unique(m_values):
            lo, hi, _ = self.store.grid_round(int(m))
            for g in (lo, hi):
                if g not in cols:
                    cols[g] = self.store.count_table(self.test_id, g).eval(t_vec)
        out = np.empty((t_vec.size, m_values.size))
        for j, m in enumerate(m_values):
            lo, hi, lam = self.store.grid_round(int(m))
            col = cols[lo]
            if hi != lo and lam > 0:
                col = (1 - lam) * col + lam * cols[hi]
            out[:, j] = col
        return out

    def combined_statistic(self, values) -> float:
        """Scalar statistic of one dataset (rank tests need their own m table)."""
        u = np.sort(np.asarray(values, dtype=float).ravel())
        if self.test_id in tables.SCALAR_TESTS:
            from . import stats

            return stats.ks_statistic(u) if self.test_id == "ks" else stats.pcs_statistic(u)
        if u.size == 0:
            return float("inf")
        # rank statistics need the order tables at the dataset's exact m
        table = self.store.count_table(self.test_id, u.size)
        return table.combined_statistic(u)
