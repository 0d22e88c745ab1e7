"""Command line interface.

Subcommands: tabulate, calibrate, transform, discover, limit, study.
Exit status: 0 success, 1 usage error, 2 data or table error.
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

import numpy as np

from . import limits, sampleio, studies
from .discovery import discover
from .errors import CubegofError, UsageError
from .generators import BackgroundSpec
from .store import TableStore
from .transforms import (
    HierarchicalModel,
    ProductModel,
    UnitCubeSample,
    hierarchical_transform,
    normal_marginal,
    pit_independent,
    product_high_transform,
    volume_pit,
)

log = logging.getLogger("cubegof")

LIMIT_CHOICES = studies.LIMIT_METHODS


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # argparse exits 2 by default; we want 1
        raise UsageError(message)


def _build_parser() -> _Parser:
    p = _Parser(prog="cubegof", description=__doc__)
    p.add_argument("--tables", default="tables", help="null-table store directory")
    p.add_argument("--seed", type=int, default=0, help="store / run seed")
    p.add_argument("--threads", type=int, default=1, help="tabulation workers")
    p.add_argument("--config", default=None, help="study config file")
    p.add_argument("--output", default=None, help="output file (default stdout)")
    p.add_argument("--format", choices=("csv", "json"), default="csv")
    p.add_argument("--build-missing", action="store_true",
                   help="build absent null tables on demand instead of failing")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    t = sub.add_parser("tabulate", help="build null tables")
    t.add_argument("--test", required=True, choices=("ks", "pcs", "slss", "oi"))
    t.add_argument("--m", default=None, help="event counts, e.g. 1:200 or 5,10,100")
    t.add_argument("--trials", type=float, default=1e6)
    t.add_argument("--rates", default=None,
                   help="rate-grid index range for the rate calibrations, e.g. 40:60")
    t.add_argument("--asymptote", action="store_true",
                   help="fit the large-m Gaussian asymptote instead")
    t.add_argument("--m-grid", default="10000,14000,20000",
                   help="asymptote fit grid (with --asymptote)")

    c = sub.add_parser("calibrate", help="build a projection correction surface")
    c.add_argument("--test", default="pcs", choices=("ks", "pcs", "slss", "oi"))
    c.add_argument("--n", type=int, required=True)
    c.add_argument("--trials", type=float, default=5e4)
    c.add_argument("--cl", type=float, default=0.9)
    c.add_argument("--mu-grid", default=None,
                   help="comma-separated true-rate grid (default: log grid to 280)")

    tr = sub.add_parser("transform", help="map a sample file into the unit cube")
    tr.add_argument("--model", default=None, help="model file (one marginal per line)")
    tr.add_argument("--hierarchical", default=None, choices=("normal-chain",),
                    help="built-in hierarchical model instead of --model")
    tr.add_argument("--volume", action="store_true",
                    help="also reduce to the univariate volume-uniform column")
    tr.add_argument("--input", required=True, nargs="+")
    tr.add_argument("--output-dir", default=None,
                    help="write per-input outputs here (default: alongside input)")

    d = sub.add_parser("discover", help="goodness-of-fit p-value for unit-cube data")
    d.add_argument("--method", required=True, choices=("min-p", "prod-p", "volume"))
    d.add_argument("--test", default="ks", choices=("ks", "pcs", "slss", "oi"))
    d.add_argument("--input", required=True, nargs="+")

    l = sub.add_parser("limit", help="event-rate upper limit for unit-cube data")
    l.add_argument("--method", required=True, choices=LIMIT_CHOICES)
    l.add_argument("--cl", type=float, default=0.9)
    l.add_argument("--input", required=True, nargs="+")

    s = sub.add_parser("study", help="run configured studies")
    s.add_argument("--section", default=None, help="run one config section only")
    s.add_argument("--full-records", action="store_true",
                   help="emit per-trial records instead of medians")
    return p


def _parse_counts(spec: str) -> list[int]:
    out: list[int] = []
    for item in spec.split(","):
        item = item.strip()
        if ":" in item:
            lo, hi = item.split(":")
            out.extend(range(int(lo), int(hi) + 1))
        elif item:
            out.append(int(item))
    if not out:
        raise UsageError(f"empty event-count spec {spec!r}")
    return out


def _emit(args, records: list[dict]) -> None:
    if args.format == "json":
        text = "".join(sampleio.record_to_json(r) for r in records)
    else:
        text = sampleio.records_to_csv(records)
    if args.output:
        Path(args.output).write_text(text)
    else:
        sys.stdout.write(text)


def _normal_chain_model(n: int) -> HierarchicalModel:
    """First column standard normal; each later column normal around it."""
    high = ProductModel((normal_marginal(0, 1),))

    def factory(x_high: np.ndarray) -> ProductModel:
        center = float(x_high[0])
        return ProductModel(tuple(normal_marginal(center, 1) for _ in range(n - 1)))

    return HierarchicalModel(
        high_indices=(0,), low_indices=tuple(range(1, n)),
        high_transform=product_high_transform(high),
        conditional_factory=factory,
    )


def _cmd_tabulate(args, store: TableStore) -> list[dict]:
    records = []
    if args.asymptote:
        grid = [int(float(x)) for x in args.m_grid.split(",")]
        asym = store.asymptote(args.test, m_grid=grid, trials=int(args.trials))
        records.append({"test": args.test, "kind": "asymptote",
                        "m_grid": list(asym.m_grid), "trials": asym.trials})
        return records
    if args.rates:
        lo, hi = (int(x) for x in args.rates.split(":"))
        engine = limits.RankEngine(store, args.test)
        for idx in range(lo, hi + 1):
            table = engine.rate_table(idx)
            records.append({"test": args.test, "kind": "rate", "mu": table.mu,
                            "trials": table.trials, "knots": table.knots.size})
        return records
    if not args.m:
        raise UsageError("tabulate needs --m, --rates or --asymptote")
    for m in _parse_counts(args.m):
        table = store.count_table(args.test, m, trials=int(args.trials))
        records.append({"test": args.test, "kind": "count", "m": m,
                        "trials": table.trials, "knots": table.knots.size})
    return records


def _cmd_calibrate(args, store: TableStore) -> list[dict]:
    mu_grid = None
    if args.mu_grid:
        mu_grid = np.array([float(x) for x in args.mu_grid.split(",")])
    surface = limits.calibrate_correction(
        store, args.n, args.test, trials=int(args.trials),
        c1_grid=limits.default_c1_grid(args.cl), mu_grid=mu_grid,
    )
    store.put_surface(surface)
    return [{
        "test": args.test, "n": args.n, "kind": "surface",
        "mu_grid": [round(float(x), 4) for x in surface.mu_grid],
        "trials": surface.trials,
    }]


def _cmd_transform(args, store: TableStore) -> list[dict]:
    records = []
    for inp in args.input:
        pts = sampleio.read_points(inp)
        if args.hierarchical:
            if pts.size == 0:
                raise UsageError(f"{inp}: empty input cannot fix a model dimension")
            model = _normal_chain_model(pts.shape[1])
            cube = hierarchical_transform(pts, model)
        elif args.model:
            model = sampleio.parse_model_spec(args.model)
            cube = (
                UnitCubeSample(np.empty((0, model.dim)))
                if pts.size == 0
                else pit_independent(pts, model)
            )
        else:
            raise UsageError("transform needs --model or --hierarchical")
        out_dir = Path(args.output_dir) if args.output_dir else Path(inp).parent
        out_dir.mkdir(parents=True, exist_ok=True)
        stem = Path(inp).stem
        cube_path = out_dir / f"{stem}.cube.csv"
        sampleio.write_points(cube_path, cube.points)
        rec = {"input": inp, "output": str(cube_path), "m": cube.m, "n": cube.n}
        if args.volume:
            z, clamped = volume_pit(cube.points, cube.n)
            z_path = out_dir / f"{stem}.volume.csv"
            sampleio.write_points(z_path, z.reshape(-1, 1))
            rec["volume_output"] = str(z_path)
            rec["clamped"] = clamped
        records.append(rec)
    return records


def _cmd_discover(args, store: TableStore) -> list[dict]:
    records = []
    for inp in args.input:
        pts = sampleio.read_points(inp)
        res = discover(store, pts, args.method, args.test)
        rec = {
            "input": inp, "method": res.method, "test": res.test_id,
            "m": res.m, "p_final": res.p_final, "flags": ",".join(res.flags),
        }
        if res.per_axis is not None:
            rec["p_axes"] = list(res.per_axis.p)
        records.append(rec)
    return records


def _cmd_limit(args, store: TableStore) -> list[dict]:
    records = []
    for inp in args.input:
        pts = sampleio.read_points(inp)
        m_obs = pts.shape[0]
        method = args.method
        if m_obs == 0:
            res = limits.solve_limit(
                limits.counting_curve(0), args.cl, method=method
            )
        elif method == "poisson":
            res = limits.solve_limit(limits.counting_curve(m_obs), args.cl, method=method)
        elif method.startswith("volume-"):
            curve = limits.volume_curve(store, method.split("-", 1)[1], pts)
            res = limits.solve_limit(curve, args.cl, method=method)
        elif method == "pcs-best":
            res = limits.pcs_best_projection_limit(store, pts, args.cl)
        elif method == "pcs-sum":
            res = limits.pcs_sum_projection_limit(store, pts, args.cl)
        else:  # corrected-<test>
            test_id = method.split("-", 1)[1]
            surface = store.surface(test_id, pts.shape[1])
            res = limits.corrected_projection_limit(store, pts, test_id, args.cl, surface)
        rec = {
            "input": inp, "method": method, "cl": args.cl, "m": m_obs,
            "mu_lim": res.mu_lim, "flags": ",".join(res.flags),
        }
        if res.per_axis:
            rec["mu_axes"] = list(res.per_axis)
        records.append(rec)
    return records


def _study_section(store: TableStore, name: str, cfg: dict, seed: int,
                   full_records: bool) -> list[dict]:
    kind = cfg.get("kind")
    as_floats = lambda key: [float(x) for x in cfg[key].split(",")]
    methods = tuple(x.strip() for x in cfg["methods"].split(","))
    trials = int(cfg.get("trials", "500"))
    n = int(cfg["n"])
    if kind == "discovery":
        bkg = BackgroundSpec(kind=cfg.get("background", "uniform"), n=n,
                             n_expected=float(cfg.get("n_b", "1000")))
        report = studies.run_discovery_study(
            store, bkg, cfg.get("signal") or None, as_floats("ns_grid"),
            trials=trials, seed=seed, test_id=cfg.get("test", "ks"),
            methods=methods, signal_sigma=float(cfg.get("sigma", "0.1")),
            shell_radius=float(cfg.get("radius", "0.25")),
            shell_sigma_r=float(cfg.get("sigma_r", "0.02")),
        )
        value_keys = [f"p_{m}" for m in methods]
        group = ("ns",)
    elif kind == "limit":
        bkg = BackgroundSpec(
            kind=cfg.get("background", "uniform"), n=n, n_expected=0.0,
            rate=float(cfg.get("rate", "0.1")),
            window_efolds=float(cfg.get("window_efolds", "3.0")),
            sigma=float(cfg.get("sigma", "0.1")), mu=float(cfg.get("mu", "0.5")),
        )
        report = studies.run_limit_study(
            store, bkg, as_floats("mu_grid"), trials=trials, seed=seed,
            cl=float(cfg.get("cl", "0.9")), methods=methods,
            mu_cap=float(cfg.get("mu_cap", "150")),
        )
        value_keys = [f"mu_{m}" for m in methods]
        group = ("mu_bkg",)
    else:
        raise UsageError(f"section [{name}]: kind must be discovery or limit")
    if full_records:
        return [{"section": name, **rec} for rec in report.records]
    out = []
    for key in value_keys:
        for row in report.medians(key, group):
            out.append({"section": name, "value": key, **row})
    return out


def _cmd_study(args, store: TableStore) -> list[dict]:
    if not args.config:
        raise UsageError("study needs --config")
    sections = sampleio.read_config(args.config)
    if args.section:
        if args.section not in sections:
            raise UsageError(f"no section [{args.section}] in {args.config}")
        sections = {args.section: sections[args.section]}
    records = []
    for name, cfg in sections.items():
        records.extend(_study_section(store, name, cfg, args.seed, args.full_records))
    return records


def main(argv=None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return 1
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
    )
    auto = args.build_missing or args.command in ("tabulate", "calibrate", "study")
    store = TableStore(args.tables, seed=args.seed, auto_build=auto,
                       threads=args.threads)
    handlers = {
        "tabulate": _cmd_tabulate,
        "calibrate": _cmd_calibrate,
        "transform": _cmd_transform,
        "discover": _cmd_discover,
        "limit": _cmd_limit,
        "study": _cmd_study,
    }
    try:
        records = handlers[args.command](args, store)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return 1
    except CubegofError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    _emit(args, records)
    return 0


if __name__ == "__main__":
    sys.exit(main())
