"""Batch front end: bond curves, log-utility solutions, Monte Carlo checks and sweeps.

Usage::

    python -m regimedefault price    --preset table1 --out psi.csv
    python -m regimedefault solve    --spec my.json --out sol.json
    python -m regimedefault simulate --preset table1 --paths 100000 --seed 42
    python -m regimedefault sweep    --preset fig1 --out fig1.csv
    python -m regimedefault sweep    --preset table1 --sweep h1:0.05:0.5:20 --sweep h2:0.05:0.5:20

Exit codes: 0 success, 2 bad input, 3 solver failure, 4 simulation failure.
"""
from __future__ import annotations

import argparse
import csv
import io
import itertools
import json
import math
import os
import re
import sys
from dataclasses import dataclass, field
from importlib import resources

import numpy as np

from . import bond, hjb, sim
from .market import MarketSpec, SpecError, from_dict, load_spec, validate
from .numerics import NumericsError, TimeGrid

SCHEMA_VERSION = 1
EXIT_OK, EXIT_INPUT, EXIT_SOLVER, EXIT_SIM = 0, 2, 3, 4
MAX_SWEEP_AXES = 2
OUTPUTS = ("p", "psi", "K", "merton", "J")

_AXIS_RE = re.compile(r"^(h|h_hist|loss|r|mu|sigma)(\d+)$|^a(\d)(\d)$|^(horizon|maturity)$")


class InputError(ValueError):
    pass


@dataclass(frozen=True)
class Axis:
    name: str
    values: tuple

    @classmethod
    def parse(cls, text: str) -> "Axis":
        """``NAME:MIN:MAX:POINTS`` with an evenly spaced grid."""
        parts = text.split(":")
        if len(parts) != 4:
            raise InputError(f"sweep axis {text!r} is not NAME:MIN:MAX:POINTS")
        name = parts[0]
        try:
            lo, hi, pts = float(parts[1]), float(parts[2]), int(parts[3])
        except ValueError as exc:
            raise InputError(f"sweep axis {text!r}: {exc}") from exc
        return cls.linear(name, lo, hi, pts)

    @classmethod
    def linear(cls, name, lo, hi, points) -> "Axis":
        if points < 2:
            raise InputError(f"sweep axis {name}: points must be at least 2")
        return cls(name, tuple(float(x) for x in np.linspace(lo, hi, points)))


@dataclass
class RunConfig:
    subcommand: str
    spec: MarketSpec
    out: str | None = None
    grid_steps: int = 2000
    paths: int = 100_000
    seed: int = 42
    axes: list = field(default_factory=list)
    variants: tuple | None = None  # (names, rows) swept jointly
    outputs: tuple = ("p", "psi")
    times: int = 1
    regime: int | None = None
    workers: int = 1
    paths_csv: str | None = None


# --------------------------------------------------------------------------
# spec and preset handling
# --------------------------------------------------------------------------

def preset_names() -> list[str]:
    root = resources.files("regimedefault") / "presets"
    return sorted(p.name[:-5] for p in root.iterdir() if p.name.endswith(".json"))


def load_preset(name: str) -> dict:
    path = resources.files("regimedefault") / "presets" / f"{name}.json"
    if not path.is_file():
        raise InputError(f"unknown preset {name!r}; available: {', '.join(preset_names())}")
    return json.loads(path.read_text(encoding="utf-8"))


def apply_axis(spec: MarketSpec, name: str, value: float) -> MarketSpec:
    """Copy of ``spec`` with one named scalar changed.

    ``h1`` also moves ``h_hist1`` when the two coincide; ``a12`` moves both
    generators (diagonal rebalanced); ``horizon`` ties maturity to it.
    """
    m = _AXIS_RE.match(name)
    if m is None:
        raise InputError(f"unknown sweep axis {name!r}")
    n = spec.n_regimes
    if m.group(1):
        field_name, i = m.group(1), int(m.group(2)) - 1
        if not 0 <= i < n:
            raise InputError(f"sweep axis {name!r}: regime out of range 1..{n}")
        arr = getattr(spec, field_name).copy()
        arr[i] = value
        return spec.replace(**{field_name: arr.tolist()})
    if m.group(3):
        i, j = int(m.group(3)) - 1, int(m.group(4)) - 1
        if not (0 <= i < n and 0 <= j < n) or i == j:
            raise InputError(f"sweep axis {name!r}: needs two distinct regimes in 1..{n}")
        gens = {}
        for g in ("gen_p", "gen_q"):
            a = getattr(spec, g).copy()
            a[i, j] = value
            a[i, i] = 0.0
            a[i, i] = -math.fsum(a[i])
            gens[g] = a.tolist()
        return spec.replace(**gens)
    if m.group(5) == "horizon":
        return spec.replace(horizon=value, maturity=value)
    return spec.replace(maturity=value)


def _check(spec: MarketSpec, where: str) -> MarketSpec:
    problems = validate(spec)
    if problems:
        raise SpecError(f"invalid spec at {where}: " + "; ".join(map(str, problems)), problems)
    return spec


# --------------------------------------------------------------------------
# commands
# --------------------------------------------------------------------------

def _fmt(x) -> str:
    return repr(float(x))


def _csv_text(header, rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for row in rows:
        w.writerow([_fmt(v) for v in row])
    return buf.getvalue()


def price_table(spec: MarketSpec, steps: int):
    """Header and rows of the bond-price table on ``[0, T]``."""
    psi = bond.psi_ode(spec, TimeGrid(0.0, spec.maturity, steps))
    th = bond.theta(spec, psi).values
    d = bond.risk_premium_d(spec, psi).values
    m = bond.lower_bounds(psi)
    n = spec.n_regimes
    header = ["t"] + [f"{k}_{i}" for k in ("psi", "theta", "d", "m") for i in range(1, n + 1)]
    rows = np.column_stack([psi.grid.nodes, psi.values, th, d, m])
    return header, rows


def cmd_price(cfg: RunConfig) -> str:
    header, rows = price_table(cfg.spec, cfg.grid_steps)
    return _csv_text(header, rows)


def solve_document(spec: MarketSpec, steps: int):
    """Solution JSON document and the companion curve table."""
    sol = hjb.solve_log(spec, steps=steps)
    post = hjb.hjb_residual_post(spec, sol.K)
    foc_res, pde_res = hjb.hjb_residual_pre(spec, sol.K, sol.J, sol.p, sol.psi, sol.theta)
    t = sol.grid.nodes
    doc = {
        "schema_version": SCHEMA_VERSION,
        "spec_fingerprint": sol.fingerprint,
        "spec": spec.to_dict(),
        "grid": {"t0": 0.0, "t1": spec.horizon, "steps": sol.grid.steps},
        "stock_frac": sol.stock_frac.tolist(),
        "t": t.tolist(),
        "K": sol.K.values.T.tolist(),
        "J": sol.J.values.T.tolist(),
        "p": sol.p.values.T.tolist(),
        "diagnostics": {
            "residual_post": float(np.max(np.abs(post))),
            "residual_pre": float(np.max(np.abs(pde_res))),
            "residual_foc": float(np.max(np.abs(foc_res))),
        },
    }
    n = spec.n_regimes
    header = ["t"] + [f"{k}_{i}" for k in ("K", "J", "p") for i in range(1, n + 1)]
    rows = np.column_stack([t, sol.K.values, sol.J.values, sol.p.values])
    return doc, (header, rows), sol


def _json_text(doc) -> str:
    return json.dumps(doc, indent=2, allow_nan=True) + "\n"


def cmd_solve(cfg: RunConfig):
    doc, (header, rows), _ = solve_document(cfg.spec, cfg.grid_steps)
    extra = {}
    if cfg.out:
        stem, _ = os.path.splitext(cfg.out)
        extra[stem + "_curves.csv"] = _csv_text(header, rows)
    return _json_text(doc), extra


def simulate_document(spec: MarketSpec, steps: int, paths: int, seed: int,
                      regimes=None, workers: int = 1, v0: float = 1.0):
    """Monte Carlo value check from each requested starting regime.

    Regime i uses master seed ``seed + i`` so runs per regime are independent.
    """
    if paths < sim.MIN_PATHS:
        raise InputError(f"--paths must be at least {sim.MIN_PATHS}, got {paths}")
    sol = hjb.solve_log(spec, steps=steps)
    strategy = sol.strategy()
    regimes = range(spec.n_regimes) if regimes is None else regimes
    results, log_wealth = [], {}
    for i in regimes:
        batch = sim.sample_batch(spec, i, 0.0, spec.horizon, paths, seed + i, workers=workers)
        lw = sim.log_terminal_wealth(spec, strategy, sol.psi, batch, v0, sol.theta)
        rep = sim.report(lw, seed + i, strategy.name)
        target = math.log(v0) + float(sol.J.values[0, i])
        entry = {"regime": i + 1, **rep.to_dict(), "target": target,
                 "z_score": (rep.mean_log_wealth - target) / rep.stderr}
        results.append(entry)
        log_wealth[i] = lw
    doc = {"schema_version": SCHEMA_VERSION, "spec_fingerprint": sol.fingerprint,
           "v0": v0, "grid_steps": steps, "scheme_steps_per_year": sim.DEFAULT_SCHEME_STEPS,
           "results": results}
    return doc, log_wealth


def cmd_simulate(cfg: RunConfig):
    regimes = None if cfg.regime is None else [cfg.regime - 1]
    if cfg.regime is not None and not 1 <= cfg.regime <= cfg.spec.n_regimes:
        raise InputError(f"--regime must lie in 1..{cfg.spec.n_regimes}")
    doc, lw = simulate_document(cfg.spec, cfg.grid_steps, cfg.paths, cfg.seed, regimes,
                                cfg.workers)
    extra = {}
    if cfg.paths_csv:
        rows = [(i + 1, k, v) for i, arr in lw.items() for k, v in enumerate(arr)]
        extra[cfg.paths_csv] = _csv_text(["regime", "path", "log_wealth"], rows)
    return _json_text(doc), extra


def sweep_table(spec: MarketSpec, axes, outputs=("p", "psi"), times: int = 1,
                variants=None, steps: int = 2000):
    """Long-format sweep over the product of ``axes`` (and joint ``variants``).

    Each parameter point emits ``times`` rows at evenly spaced ``t`` in
    ``[0, R]`` (``t = 0`` only when ``times == 1``). Column order is the
    axis names, ``t``, then the requested outputs in the order
    p, psi, K, merton, J.
    """
    if len(axes) > MAX_SWEEP_AXES:
        raise InputError(f"at most {MAX_SWEEP_AXES} sweep axes")
    unknown = [o for o in outputs if o not in OUTPUTS]
    if unknown:
        raise InputError(f"unknown sweep outputs {unknown}")
    for ax in axes:
        apply_axis(spec, ax.name, ax.values[0])  # name check before any work
    names = [ax.name for ax in axes]
    var_names, var_rows = variants if variants else ((), ((),))
    for nm in var_names:
        apply_axis(spec, nm, 1.0)
    n = spec.n_regimes
    ordered = [o for o in OUTPUTS if o in outputs]
    header = list(var_names) + names + ["t"]
    for o in ordered:
        header += [f"{o}_{i}" for i in range(1, n + 1)]
    rows = []
    for vrow in var_rows:
        for point in itertools.product(*(ax.values for ax in axes)):
            s = spec
            for nm, v in zip(var_names, vrow):
                s = apply_axis(s, nm, v)
            for nm, v in zip(names, point):
                s = apply_axis(s, nm, v)
            label = ", ".join(f"{k}={v:g}" for k, v in zip(list(var_names) + names,
                                                           list(vrow) + list(point)))
            _check(s, label or "base spec")
            ts = np.linspace(0.0, s.horizon, times) if times > 1 else np.array([0.0])
            cols = _sweep_point(s, ordered, ts, steps)
            for k, t in enumerate(ts):
                rows.append(list(vrow) + list(point) + [t] + [c[k] for c in cols])
    return header, rows


def _sweep_point(spec, outputs, ts, steps):
    """Requested output values at times ``ts``, flattened column by column."""
    cols = []
    need_p = "p" in outputs or "psi" in outputs
    sol = hjb.solve_log(spec, steps=steps) if "J" in outputs else None
    if need_p:
        psi = bond.psi_ode(spec, TimeGrid(0.0, spec.maturity, steps))
        th = bond.theta(spec, psi)
    K = sol.K if sol is not None else (
        hjb.solve_k(spec, hjb.horizon_grid(spec, steps)) if "K" in outputs else None)
    for o in outputs:
        for i in range(spec.n_regimes):
            if o == "psi":
                cols.append([psi.at(t)[i] for t in ts])
            elif o == "p":
                cols.append([_p_at(spec, psi, th, t, i) for t in ts])
            elif o == "K":
                cols.append([K.at(t)[i] for t in ts])
            elif o == "merton":
                cols.append([spec.zeta[i] * (spec.horizon - t) for t in ts])
            else:
                cols.append([sol.J.at(t)[i] for t in ts])
    return cols


def _p_at(spec, psi, th, t, i):
    n = spec.n_regimes
    rates = np.where(np.arange(n) == i, 0.0, spec.gen_p[i])
    try:
        return hjb.solve_p_node(th.at(t)[i], spec.h_hist[i], rates, psi.at(t), i)
    except NumericsError as exc:
        raise hjb.SolverError(f"bond fraction at t={t:g}, regime {i + 1}: {exc}") from exc


def cmd_sweep(cfg: RunConfig) -> str:
    header, rows = sweep_table(cfg.spec, cfg.axes, cfg.outputs, cfg.times, cfg.variants,
                               cfg.grid_steps)
    return _csv_text(header, rows)


# --------------------------------------------------------------------------
# entry point
# --------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="regimedefault", description=__doc__.splitlines()[0])
    sub = ap.add_subparsers(dest="subcommand", required=True)
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--spec", help="market spec JSON file")
    common.add_argument("--preset", help=f"named preset ({', '.join(preset_names())})")
    common.add_argument("--out", help="output file (stdout when omitted)")
    common.add_argument("--grid-steps", type=int, default=2000,
                        help="time steps over [0, R] (over [0, T] for price)")
    sub.add_parser("price", parents=[common], help="bond price curves")
    sub.add_parser("solve", parents=[common], help="log-utility solution")
    p_sim = sub.add_parser("simulate", parents=[common], help="Monte Carlo value check")
    p_sim.add_argument("--paths", type=int, default=100_000)
    p_sim.add_argument("--seed", type=int, default=42)
    p_sim.add_argument("--regime", type=int, help="starting regime 1..N (all when omitted)")
    p_sim.add_argument("--workers", type=int, default=1)
    p_sim.add_argument("--paths-csv", help="also write per-path log wealth here")
    p_sw = sub.add_parser("sweep", parents=[common], help="parameter sweep")
    p_sw.add_argument("--sweep", action="append", default=[], metavar="AXIS:MIN:MAX:POINTS")
    p_sw.add_argument("--outputs", help="comma list from " + ",".join(OUTPUTS))
    p_sw.add_argument("--times", type=int, help="time samples per point on [0, R]")
    return ap


def config_from_args(args) -> RunConfig:
    preset = load_preset(args.preset) if args.preset else {}
    if args.spec:
        try:
            with open(args.spec, encoding="utf-8") as fh:
                text = fh.read()
        except OSError as exc:
            raise InputError(f"cannot read spec: {exc}") from exc
        spec = load_spec(text)
    elif preset:
        spec = from_dict(preset["spec"])
    else:
        raise InputError("one of --spec or --preset is required")
    if args.grid_steps < 2:
        raise InputError("--grid-steps must be at least 2")
    cfg = RunConfig(args.subcommand, spec, args.out, args.grid_steps)
    if args.subcommand == "simulate":
        cfg.paths, cfg.seed, cfg.regime = args.paths, args.seed, args.regime
        cfg.workers, cfg.paths_csv = args.workers, args.paths_csv
        if cfg.paths < sim.MIN_PATHS:
            raise InputError(f"--paths must be at least {sim.MIN_PATHS}, got {cfg.paths}")
    if args.subcommand == "sweep":
        sw = preset.get("sweep", {})
        if args.sweep:
            if len(args.sweep) > MAX_SWEEP_AXES:
                raise InputError(f"at most {MAX_SWEEP_AXES} --sweep axes")
            cfg.axes = [Axis.parse(s) for s in args.sweep]
        else:
            cfg.axes = [Axis.linear(a["name"], a["min"], a["max"], a["points"])
                        for a in sw.get("axes", [])]
        if "variants" in sw and not args.sweep:
            v = sw["variants"]
            cfg.variants = (tuple(v["names"]), tuple(tuple(r) for r in v["values"]))
        if args.outputs:
            cfg.outputs = tuple(o.strip() for o in args.outputs.split(",") if o.strip())
        else:
            cfg.outputs = tuple(sw.get("outputs", ("p", "psi")))
        cfg.times = args.times if args.times is not None else int(sw.get("times", 1))
        if cfg.times < 1:
            raise InputError("--times must be at least 1")
        if not cfg.axes and not cfg.variants and cfg.times == 1 and not sw:
            raise InputError("sweep needs --sweep axes or a preset with a sweep block")
    return cfg


def _write(path, text):
    tmp = path + ".tmp"
    with open(tmp, "w", encoding="utf-8", newline="") as fh:
        fh.write(text)
    os.replace(tmp, path)


def run(cfg: RunConfig):
    """Execute ``cfg``; returns ``(main_text, {path: text})``."""
    if cfg.subcommand == "price":
        return cmd_price(cfg), {}
    if cfg.subcommand == "solve":
        return cmd_solve(cfg)
    if cfg.subcommand == "simulate":
        return cmd_simulate(cfg)
    return cmd_sweep(cfg), {}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = config_from_args(args)
        text, extra = run(cfg)
    except SpecError as exc:
        print(f"error: {exc}", file=sys.stderr)
        for v in exc.violations:
            print(f"  {v}", file=sys.stderr)
        return EXIT_INPUT
    except (InputError, json.JSONDecodeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except (hjb.SolverError, hjb.AdmissibilityError, NumericsError, ArithmeticError) as exc:
        print(f"solver error: {exc}", file=sys.stderr)
        return EXIT_SOLVER
    except sim.SimulationError as exc:
        print(f"simulation error: {exc}", file=sys.stderr)
        return EXIT_SIM
    if cfg.out:
        _write(cfg.out, text)
    else:
        sys.stdout.write(text)
    for path, body in extra.items():
        _write(path, body)
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
