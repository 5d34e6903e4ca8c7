"""Batch command line: ``relspec {traces,fit,coeffs,verify,bogolyubov,synge}``.

Exit status is 0 on success, 1 when a task or a verification fails and 2
for configuration errors. Every CSV artifact starts with a comment line
carrying the format version and the SHA-256 of the effective configuration;
floats are written with 17 significant digits.
"""

from __future__ import annotations

import argparse
import copy
import csv
import hashlib
import io
import itertools
import json
import math
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from importlib import resources
from pathlib import Path
from typing import Optional

import jsonschema
import numpy as np

from . import bogolyubov as bg
from . import fixtures
from . import synge_lab as sl
from .coeff_engine import b_coeffs, c_coeffs, phi_coeffs, psi_coeffs
from .fit_harness import default_window, epsilon_fit, sample_epsilon
from .spectral_engine import SpectralPair, TraceGrid, decompose
from .suites import SUITES, run_suites
from .tensor_core import combine

CSV_VERSION = 1
TASKS = ("traces", "fit", "coeffs", "verify", "bogolyubov", "synge")
DEFAULTS = {
    "version": 1,
    "pair": {"fixture": "two-scale", "params": {}},
    "grids": {"t": [1.0], "s": [1.0], "eps_max": 3e-3, "eps_points": 12, "beta": [1.0]},
    "tolerance": 1e-4,
    "bogolyubov": {"kind": "b", "t_max": 60.0, "intervals": 400},
    "synge": {"patch": "conformal", "h": 0.02},
    "verify": {"suites": ["laplace", "synge", "spectral"]},
    "output": {"dir": ".", "gnuplot": False},
}


class ConfigError(ValueError):
    pass


# -- configuration -------------------------------------------------------------


def load_schema() -> dict:
    return json.loads(resources.files("relspec").joinpath("schema/run_config.json").read_text())


def _field_path(path) -> str:
    out = ""
    for p in path:
        out += f"[{p}]" if isinstance(p, int) else (f".{p}" if out else str(p))
    return out or "<root>"


def validate(cfg: dict) -> None:
    validator = jsonschema.Draft202012Validator(load_schema())
    errors = sorted(validator.iter_errors(cfg), key=lambda e: list(map(str, e.absolute_path)))
    if errors:
        e = errors[0]
        raise ConfigError(f"{_field_path(e.absolute_path)}: {e.message}")


def _merge(base: dict, over: dict) -> dict:
    out = copy.deepcopy(base)
    for k, v in over.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = _merge(out[k], v)
        else:
            out[k] = copy.deepcopy(v)
    return out


def load_config(path: Optional[str]) -> tuple:
    """Validated configuration merged over the defaults, and the set of sections given explicitly."""
    raw = {}
    if path:
        text = Path(path).read_text()
        try:
            raw = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"line {exc.lineno}, column {exc.colno}: {exc.msg}") from None
        if not isinstance(raw, dict):
            raise ConfigError("<root>: configuration must be a JSON object")
        validate(raw)
    return _merge(DEFAULTS, raw), set(raw)


def config_hash(cfg: dict) -> str:
    """SHA-256 of the configuration without task, tolerance, output location and thread count.

    Stages of one pipeline (traces, fit, coeffs) share the hash, which is how
    each stage recognizes the artifacts of the previous one.
    """
    core = {k: v for k, v in cfg.items() if k not in ("task", "tolerance", "output", "threads")}
    return hashlib.sha256(json.dumps(core, sort_keys=True, separators=(",", ":")).encode()).hexdigest()


def resolve_threads(arg: Optional[int], cfg: dict) -> int:
    if arg is not None:
        return max(1, arg)
    if "threads" in cfg:
        return cfg["threads"]
    env = os.environ.get("HEATRACE_THREADS")
    if env:
        try:
            return max(1, int(env))
        except ValueError:
            raise ConfigError(f"HEATRACE_THREADS: expected an integer, got {env!r}") from None
    return 1


# -- artifacts -----------------------------------------------------------------


def _fmt(x) -> str:
    if isinstance(x, (float, np.floating)):
        return "%.17g" % x
    return str(x)


def write_csv(path: Path, columns: list, rows: list, digest: str) -> None:
    buf = io.StringIO()
    buf.write(f"# relspec-csv v{CSV_VERSION} config_sha256={digest}\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(columns)
    for r in rows:
        w.writerow([_fmt(x) for x in r])
    path.write_text(buf.getvalue())


def read_csv(path: Path) -> tuple:
    lines = path.read_text().splitlines()
    digest = lines[0].split("config_sha256=")[-1] if lines and lines[0].startswith("#") else ""
    rows = list(csv.reader(lines[1:] if digest else lines))
    return digest, rows[0], rows[1:]


def write_json(path: Path, payload: dict, digest: str) -> None:
    payload = {"config_sha256": digest, **payload}
    path.write_text(json.dumps(payload, indent=2, sort_keys=True, default=_json_default) + "\n")


def _json_default(o):
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, (np.floating, np.integer)):
        return o.item()
    if isinstance(o, complex):
        return [o.real, o.imag]
    raise TypeError(type(o))


def emit_gnuplot(path: Path, csv_name: str, xcol: int, ycol: int, title: str, logx: bool = True) -> None:
    text = (f"# {title}\nset datafile separator ','\nset key autotitle columnhead\n"
            + ("set logscale x\n" if logx else "")
            + f"plot '{csv_name}' every ::1 using {xcol}:{ycol} with linespoints title '{title}'\n")
    path.write_text(text)


# -- tasks ---------------------------------------------------------------------


class Context:
    def __init__(self, cfg: dict, out: Path, threads: int, tolerance: float, gnuplot: bool, log,
                 tolerance_given: bool = False, explicit=()):
        self.cfg = cfg
        self.tolerance_given = tolerance_given
        self.explicit = set(explicit)
        self.out = out
        self.threads = threads
        self.tolerance = tolerance
        self.gnuplot = gnuplot
        self.log = log
        self.digest = config_hash(cfg)
        self._pair = None

    def map(self, fn, items):
        items = list(items)
        if self.threads == 1 or len(items) < 2:
            return [fn(x) for x in items]
        with ThreadPoolExecutor(max_workers=self.threads) as pool:
            return list(pool.map(fn, items))

    @property
    def geometries(self):
        spec = self.cfg["pair"]
        if spec["fixture"] not in fixtures.FIXTURES:
            raise ConfigError(f"pair.fixture: unknown fixture {spec['fixture']!r}")
        try:
            return fixtures.FIXTURES[spec["fixture"]](**spec.get("params", {}))
        except TypeError as exc:
            raise ConfigError(f"pair.params: {exc}") from None

    def pair(self):
        if self._pair is None:
            plus, minus = self.geometries
            self._pair = (plus, minus, SpectralPair(decompose(plus), decompose(minus, sign="-")))
        return self._pair

    @property
    def directions(self):
        g = self.cfg["grids"]
        return list(itertools.product(g["t"], g["s"]))


def _trace_tags(pair: SpectralPair) -> tuple:
    return ("Y", "Phi") if pair.is_dirac else ("X", "Psi")


TRACE_COLUMNS = ["t", "s", "eps", "theta_plus", "theta_minus", "X", "Y", "Psi", "Phi", "tail"]


def _sample(ctx: Context) -> list:
    """One row per (t, s, ε): Θ± at ε(t+s), X, Y, Ψ, Φ at (εt, εs) and the largest tail bound.

    Y and Φ are left empty for Laplace pairs. The traces that get fitted pass
    the truncation guard of :func:`sample_epsilon`.
    """
    plus, minus, pair = ctx.pair()
    g = ctx.cfg["grids"]
    lam = min(pair.plus.resolved, pair.minus.resolved)

    def one(direction):
        t, s = direction
        eps = np.asarray(g["eps"], dtype=float) if "eps" in g else default_window(
            lam, t, s, points=g["eps_points"], eps_max=g["eps_max"])
        grids = {tag: sample_epsilon(pair, tag, t, s, eps) for tag in _trace_tags(pair)}
        rows = []
        for a, e in enumerate(eps):
            tail = max(float(gr.tail[a]) for gr in grids.values())
            X = pair.X(e * t, e * s)
            Psi = pair.Psi(e * t, e * s)
            Y = pair.Y(e * t, e * s) if pair.is_dirac else ""
            Phi = pair.Phi(e * t, e * s) if pair.is_dirac else ""
            rows.append((float(t), float(s), float(e), pair.theta("+", e * (t + s)), pair.theta("-", e * (t + s)),
                         X, Y, Psi, Phi, tail))
        return rows

    return [r for part in ctx.map(one, ctx.directions) for r in part]


def task_traces(ctx: Context) -> int:
    rows = _sample(ctx)
    write_csv(ctx.out / "traces.csv", TRACE_COLUMNS, rows, ctx.digest)
    ctx.log(f"wrote {ctx.out / 'traces.csv'} ({len(rows)} rows)")
    if ctx.gnuplot:
        emit_gnuplot(ctx.out / "traces.gp", "traces.csv", 3, 6, "X(eps t, eps s) against eps")
    if "bogolyubov" in ctx.explicit:
        _write_lattice(ctx)
    return 0


def _write_lattice(ctx: Context) -> None:
    _, _, pair = ctx.pair()
    b = ctx.cfg["bogolyubov"]
    betas = ctx.cfg["grids"]["beta"]
    fn = pair.Phi_matrix if b["kind"] == "f" else pair.Psi_matrix
    lat = bg.TraceLattice.from_function("Phi" if b["kind"] == "f" else "Psi", fn, bg.T_LOW * min(betas) ** 2 / 2,
                                        b["t_max"])
    path = ctx.out / "lattice.csv"
    path.write_text(f"# relspec-csv v{CSV_VERSION} config_sha256={ctx.digest}\n" + lat.to_csv())
    ctx.log(f"wrote {path}")


def _load_traces(ctx: Context) -> list:
    path = ctx.out / "traces.csv"
    if path.exists():
        digest, cols, rows = read_csv(path)
        if digest == ctx.digest and cols == TRACE_COLUMNS:
            ctx.log(f"using {path}")
            return [tuple(float(x) if x != "" else "" for x in r) for r in rows]
        ctx.log(f"{path} belongs to another configuration; resampling")
    return _sample(ctx)


def _fits(ctx: Context) -> dict:
    plus = ctx.geometries[0]
    n = plus.n
    tags = ("Y", "Phi") if plus.dirac is not None else ("X", "Psi")
    col = {name: i for i, name in enumerate(TRACE_COLUMNS)}
    groups = {}
    for r in _load_traces(ctx):
        groups.setdefault((r[0], r[1]), []).append(r)
    out = {}
    for (t, s), rows in groups.items():
        eps = np.array([r[col["eps"]] for r in rows])
        tail = np.array([r[col["tail"]] for r in rows])
        for tag in tags:
            vals = np.array([r[col[tag]] for r in rows], dtype=float)
            grid = TraceGrid(tag, np.array([t]), np.array([s]), vals, tail, eps=eps)
            out[(tag, t, s)] = epsilon_fit(grid, n, 2)
    return out


FIT_COLUMNS = ["trace", "t", "s", "k", "coefficient", "sigma"]


def task_fit(ctx: Context) -> int:
    fits = _fits(ctx)
    rows = []
    for (tag, t, s), f in fits.items():
        for k in range(f.k_max + 1):
            rows.append((tag, t, s, k, float(f.coefficients[k]), float(f.sigma[k])))
    write_csv(ctx.out / "fit.csv", FIT_COLUMNS, rows, ctx.digest)
    write_json(ctx.out / "fit.json", {"fits": [f.to_dict() for f in fits.values()]}, ctx.digest)
    ctx.log(f"wrote {ctx.out / 'fit.csv'} ({len(rows)} rows)")
    return 0


COEFF_COLUMNS = ["t", "s", "label", "value", "subterms"]
FIT_TO_COEFF = {"X": "B", "Y": "C", "Psi": "Psi", "Phi": "Phi"}


def _subterms(report) -> str:
    return ";".join(f"{k}={v:.17g}" for k, v in sorted(report.subterms.items()))


def _geometric(ctx: Context) -> list:
    plus, minus = ctx.geometries
    dirac = plus.dirac is not None

    def one(direction):
        t, s = direction
        if dirac:
            reps = {k: v for k, v in c_coeffs(combine(plus, minus, t, s)).items() if k in ("C0", "C1")}
            reps.update(phi_coeffs(plus, minus, t, s))
        else:
            reps = {k: v for k, v in b_coeffs(combine(plus, minus, t, s, with_v6=False)).items() if k in ("B0", "B1")}
            reps.update(psi_coeffs(plus, minus, t, s))
        return [(float(t), float(s), name, float(reps[name].value), _subterms(reps[name])) for name in sorted(reps)]

    return [r for part in ctx.map(one, ctx.directions) for r in part]


def task_coeffs(ctx: Context) -> int:
    rows = _geometric(ctx)
    write_csv(ctx.out / "coeffs.csv", COEFF_COLUMNS, rows, ctx.digest)
    ctx.log(f"wrote {ctx.out / 'coeffs.csv'} ({len(rows)} rows)")
    fit_path = ctx.out / "fit.csv"
    if not fit_path.exists():
        return 0
    digest, cols, fit_rows = read_csv(fit_path)
    if digest != ctx.digest or cols != FIT_COLUMNS:
        ctx.log(f"{fit_path} belongs to another configuration; no comparison")
        return 0
    geo = {(r[2], r[0], r[1]): r[3] for r in rows}
    report = []
    for tag, t, s, k, c, sig in fit_rows:
        key = (f"{FIT_TO_COEFF[tag]}{k}", float(t), float(s))
        if key not in geo:
            continue
        ref = geo[key]
        err = abs(float(c) - ref)
        ok = err <= ctx.tolerance * max(abs(ref), 1e-12)
        report.append({"coefficient": key[0], "t": key[1], "s": key[2], "fit": float(c), "sigma": float(sig),
                       "geometric": ref, "rel_error": err / max(abs(ref), 1e-300), "passed": ok})
        ctx.log(f"{'PASS' if ok else 'FAIL'}  {key[0]}({key[1]:g},{key[2]:g}) fit={float(c):.12g} "
                f"geometric={ref:.12g}")
    passed = all(r["passed"] for r in report)
    write_json(ctx.out / "report.json", {"tolerance": ctx.tolerance, "passed": passed, "rows": report}, ctx.digest)
    return 0 if passed else 1


def task_verify(ctx: Context, suites: list) -> int:
    rows = run_suites(suites, ctx.tolerance if ctx.tolerance_given else None, log=ctx.log)
    write_csv(ctx.out / "verify.csv", ["suite", "check", "measured", "expected", "error", "tol", "passed"],
              [(r.suite, r.name, r.measured, r.expected, r.error, r.tol, r.passed) for r in rows], ctx.digest)
    failed = sum(not r.passed for r in rows)
    ctx.log(f"{len(rows) - failed}/{len(rows)} checks passed")
    return 0 if failed == 0 else 1


def task_bogolyubov(ctx: Context) -> int:
    b = ctx.cfg["bogolyubov"]
    betas = ctx.cfg["grids"]["beta"]
    pair = None
    if "trace_csv" in b:
        text = Path(b["trace_csv"]).read_text()
        body = "\n".join(line for line in text.splitlines() if not line.startswith("#"))
        trace = bg.TraceLattice.from_csv(body)
        t_max = None
    else:
        _, _, pair = ctx.pair()
        trace = pair.Phi_matrix if b["kind"] == "f" else pair.Psi_matrix
        t_max = b["t_max"]

    def one(beta):
        r = bg.bogolyubov_invariant(b["kind"], trace, beta, t_max=t_max, intervals=b["intervals"])
        oracle = bg.trace_formula(pair, b["kind"], beta) if pair is not None else math.nan
        return (float(beta), r.value, r.error, r.coarse, oracle)

    rows = ctx.map(one, betas)
    write_csv(ctx.out / "bogolyubov.csv", ["beta", "value", "error", "coarse", "trace_formula"], rows, ctx.digest)
    for r in rows:
        ctx.log(f"beta={r[0]:g}  B_{b['kind']}={r[1]:.12g}  error={r[2]:.2e}")
    if ctx.gnuplot:
        emit_gnuplot(ctx.out / "bogolyubov.gp", "bogolyubov.csv", 1, 2, f"B_{b['kind']} against beta")
    return 0


PATCHES = {
    "flat": lambda: sl.MetricPatch.flat(2, center=(0.3, -0.2)),
    "conformal": lambda: sl.MetricPatch.wavy(),
    "sphere": lambda: sl.MetricPatch.sphere(center=(0.3, -0.2)),
}


def task_synge(ctx: Context) -> int:
    sc = ctx.cfg["synge"]
    patch = PATCHES[sc["patch"]]()
    tol = ctx.tolerance if ctx.tolerance_given else 1e-6
    reports = {"coincidence": sl.coincidence_suite(patch, h=sc["h"], tol=tol),
               "transport": sl.transport_suite(patch, sl.Connection.sample_u1(0), patch, sl.Connection.sample_u1(1),
                                               h=sc["h"], tol=tol)}
    if "partner" in sc:
        reports["two-metric"] = sl.two_metric_tensors(patch, PATCHES[sc["partner"]](), h=sc["h"], tol=tol)
    rows = []
    for label, rep in reports.items():
        ctx.log(rep.format())
        for r in rep.rows:
            rows.append((label, r.name, float(r.error), float(r.fd_error), float(r.tol),
                         "" if r.order is None else float(r.order), r.passed))
    write_csv(ctx.out / "synge.csv", ["suite", "check", "error", "fd_error", "tol", "order", "passed"], rows,
              ctx.digest)
    write_json(ctx.out / "synge.json", {k: v.to_dict() for k, v in reports.items()}, ctx.digest)
    return 0 if all(r.passed for r in reports.values()) else 1


# -- entry point ---------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", metavar="PATH", help="JSON run configuration")
    common.add_argument("--out", metavar="DIR", help="output directory (overrides output.dir)")
    common.add_argument("--threads", type=int, metavar="N", help="worker threads (default: HEATRACE_THREADS or 1)")
    common.add_argument("--tolerance", type=float, metavar="X", help="acceptance tolerance")
    common.add_argument("--emit-gnuplot", action="store_true", help="write gnuplot scripts next to the CSV files")
    p = argparse.ArgumentParser(prog="relspec", description="Relative spectral invariants of operator pairs.")
    sub = p.add_subparsers(dest="command", required=True)
    for name in TASKS:
        sp = sub.add_parser(name, parents=[common])
        if name == "verify":
            sp.add_argument("suite", nargs="?", default="all", choices=["all", *SUITES])
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    log = lambda msg: print(msg, flush=True)  # noqa: E731
    try:
        cfg, explicit = load_config(args.config)
        cfg["task"] = args.command
        if args.tolerance is not None:
            if not args.tolerance > 0:
                raise ConfigError("--tolerance: must be positive")
            cfg["tolerance"] = args.tolerance
        out = Path(args.out or cfg["output"]["dir"])
        threads = resolve_threads(args.threads, cfg)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    out.mkdir(parents=True, exist_ok=True)
    ctx = Context(cfg, out, threads, cfg["tolerance"], args.emit_gnuplot or cfg["output"].get("gnuplot", False), log,
                  tolerance_given=args.tolerance is not None, explicit=explicit)
    try:
        if args.command == "verify":
            suites = list(SUITES) if args.suite == "all" else [args.suite]
            if args.suite == "all" and args.config:
                suites = cfg["verify"]["suites"]
            return task_verify(ctx, suites)
        return {"traces": task_traces, "fit": task_fit, "coeffs": task_coeffs, "bogolyubov": task_bogolyubov,
                "synge": task_synge}[args.command](ctx)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # module errors are reported verbatim
        print(f"{type(exc).__name__}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
