"""Command-line experiment driver.

    dehnfill <subcommand> --config FILE [--out DIR] [--threads N]

Each subcommand reads one TOML table named after it (see ``configs/``),
runs the experiment and writes ``report.json``, CSV extracts and SVG
plots into the output directory.  Exit status is 0 when every verdict
passes, 2 for an invalid configuration and 3 when a verdict fails.

Thread count: ``--threads`` beats the DEHNFILL_THREADS environment
variable, which beats a top-level ``threads`` key in the config.
"""

from __future__ import annotations

import argparse
import csv
import itertools
import json
import math
import os
import sys
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path

import numpy as np

from . import __version__
from .bieberbach import (
    catalog_flat3,
    check_relations,
    deform_action,
    enumerate_admissible,
    load_groups,
)
from .curvature import (
    annulus_sup_residual,
    curvature_bounds,
    curvature_fd,
    frame_curvature,
    loglog_fit,
    sectional_closed_form,
)
from .errors import ConfigError, DehnFillError
from .lattice import Lattice
from .metrics import (
    CutoffSpec,
    bh_params,
    black_hole_metric,
    cusp_metric,
    filled_end,
    theta_period,
    unit_area_end,
)
from .modes import (
    CLASSES,
    bounded_dimension_numeric,
    closed_form_modes,
    closed_form_solution,
    euler_coeffs,
    integrate_mode,
    relative_error,
)
from .topo import (
    exact_volume_ratio,
    hyperbolic_volume_gb,
    volume_defect,
)

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

import tomli_w

SCHEMA_VERSION = 1
THREADS_ENV = "DEHNFILL_THREADS"
COMMANDS = ("curvature-check", "residual-decay", "modes", "admissible", "volume",
            "glue-inspect", "sweep")
EXIT_OK, EXIT_CONFIG, EXIT_VERDICT = 0, 2, 3
_MISSING = object()


# --------------------------------------------------------------------------
# config reading


def _kind_name(x):
    return type(x).__name__


def _as_int(v, where, lo=None, hi=None):
    if isinstance(v, bool) or not isinstance(v, int):
        raise ConfigError(where, f"expected an integer, got {_kind_name(v)} {v!r}")
    if (lo is not None and v < lo) or (hi is not None and v > hi):
        raise ConfigError(where, f"{v} is outside the allowed range [{lo}, {hi}]")
    return v


def _as_float(v, where, positive=False, lo=None, hi=None):
    if isinstance(v, bool) or not isinstance(v, (int, float)):
        raise ConfigError(where, f"expected a number, got {_kind_name(v)} {v!r}")
    v = float(v)
    if not math.isfinite(v):
        raise ConfigError(where, "must be finite")
    if positive and v <= 0:
        raise ConfigError(where, f"must be positive, got {v}")
    if (lo is not None and v < lo) or (hi is not None and v > hi):
        raise ConfigError(where, f"{v} is outside the allowed range [{lo}, {hi}]")
    return v


def _as_list(v, where, item, min_len=1):
    if not isinstance(v, list):
        raise ConfigError(where, f"expected a list, got {_kind_name(v)}")
    if len(v) < min_len:
        raise ConfigError(where, f"needs at least {min_len} entries, got {len(v)}")
    return [item(x, f"{where}[{i}]") for i, x in enumerate(v)]


def _as_str(v, where):
    if not isinstance(v, str) or not v:
        raise ConfigError(where, f"expected a non-empty string, got {v!r}")
    return v


def _as_rational_text(v, where):
    if isinstance(v, bool):
        raise ConfigError(where, "expected a number")
    try:
        q = Fraction(str(v)) if isinstance(v, (int, float, str)) else None
    except ValueError:
        q = None
    if q is None:
        raise ConfigError(where, f"cannot read {v!r} as a rational number")
    return str(q)


def _as_matrix_entry(v, where):
    if isinstance(v, bool):
        raise ConfigError(where, "expected a number")
    if isinstance(v, (int, float)):
        return v
    if isinstance(v, str):
        return _as_rational_text(v, where)
    raise ConfigError(where, f"expected a number or rational string, got {_kind_name(v)}")


def _matrix_value(v):
    return Fraction(v) if isinstance(v, str) else v


class _Table:
    """A config table that tracks which keys were read."""

    def __init__(self, data, where):
        if not isinstance(data, dict):
            raise ConfigError(where, f"expected a table, got {_kind_name(data)}")
        self.data = data
        self.where = where
        self.used = set()

    def _loc(self, key):
        return f"{self.where}.{key}" if self.where else key

    def get(self, key, conv, default=_MISSING):
        self.used.add(key)
        if key not in self.data:
            if default is _MISSING:
                raise ConfigError(self._loc(key), "required key is missing")
            return default
        return conv(self.data[key], self._loc(key))

    def has(self, key):
        return key in self.data

    def table(self, key, default=_MISSING):
        self.used.add(key)
        if key not in self.data:
            if default is _MISSING:
                raise ConfigError(self._loc(key), "required table is missing")
            return _Table(default, self._loc(key))
        return _Table(self.data[key], self._loc(key))

    def finish(self):
        extra = sorted(set(self.data) - self.used)
        if extra:
            raise ConfigError(self._loc(extra[0]), "unknown key")


def _dims(t, default):
    return t.get("dims", lambda v, w: _as_list(v, w, lambda x, ww: _as_int(x, ww, 3, 12)), default)


def _cutoff(t):
    def conv(v, w):
        if v not in ("smooth", "quintic"):
            raise ConfigError(w, f"unknown cutoff {v!r}; expected 'smooth' or 'quintic'")
        return v
    return t.get("cutoff", conv, "smooth")


def _pos(v, w):
    return _as_float(v, w, positive=True)


def _window(v, w):
    vals = _as_list(v, w, lambda x, ww: _as_float(x, ww, lo=0.0), min_len=2)
    if len(vals) != 2 or vals[0] > vals[1]:
        raise ConfigError(w, "expected [lower, upper] with lower <= upper")
    return vals


def _parse_curvature(t):
    return {
        "dims": _dims(t, [3, 4, 5, 6, 7]),
        "mass": t.get("mass", _pos, 0.5),
        "samples": t.get("samples", lambda v, w: _as_int(v, w, 2, 10000), 20),
        "r_max": t.get("r_max", lambda v, w: _as_float(v, w, lo=1.01), 50.0),
        "tolerance": t.get("tolerance", _pos, 1e-6),
        "einstein_tolerance": t.get("einstein_tolerance", _pos, 1e-6),
    }


def _parse_residual(t):
    out = {
        "dims": _dims(t, [4]),
        "mass": t.get("mass", _pos, 0.5),
        "radii": t.get("radii", lambda v, w: _as_list(v, w, _pos, 3), [8.0, 16.0, 32.0, 64.0]),
        "cutoff": _cutoff(t),
        "samples": t.get("samples", lambda v, w: _as_int(v, w, 11, 100001), 801),
        "slope_tolerance": t.get("slope_tolerance", _pos, 0.3),
    }
    out["radii"] = [float(r) for r in out["radii"]]
    return out


def _parse_modes(t):
    def rng(v, w):
        lo, hi = _window(v, w)
        if lo <= 0:
            raise ConfigError(w, "radii must be positive")
        return [lo, hi]

    return {
        "dims": _dims(t, [4]),
        "r_range": t.get("r_range", rng, [0.1, 10.0]),
        "steps": t.get("steps", lambda v, w: _as_int(v, w, 2, 100000), 200),
        "tolerance": t.get("tolerance", _pos, 1e-6),
        "mass_range": t.get("mass_range", rng, [0.1, 2.0]),
        "mass_points": t.get("mass_points", lambda v, w: _as_int(v, w, 2, 10000), 40),
    }


def _parse_admissible(t):
    out = {"window": t.get("window", _window)}
    has_cat, has_file = t.has("catalog"), t.has("group_file")
    if has_cat == has_file:
        raise ConfigError(t._loc("catalog"), "give exactly one of 'catalog' or 'group_file'")
    if has_cat:
        def tag(v, w):
            try:
                catalog_flat3(_as_str(v, w))
            except KeyError as exc:
                raise ConfigError(w, exc.args[0]) from None
            return v
        out["catalog"] = t.get("catalog", tag)
    else:
        def path(v, w):
            if not Path(_as_str(v, w)).is_file():
                raise ConfigError(w, f"file {v!r} does not exist")
            return v
        out["group_file"] = t.get("group_file", path)
        out["group"] = t.get("group", _as_str)
    out["lambdas"] = t.get("lambdas", lambda v, w: _as_list(v, w, _lambda_text),
                           ["0", "1/4", "1/2", "3/4", "1"])
    return out


def _lambda_text(v, w):
    s = _as_rational_text(v, w)
    if not 0 <= Fraction(s) <= 1:
        raise ConfigError(w, f"deformation parameter {s} is outside [0, 1]")
    return s


def _parse_volume(t):
    out = {
        "dims": _dims(t, [4]),
        "mass": t.get("mass", _pos, 0.5),
        "radii": t.get("radii", lambda v, w: _as_list(v, w, _pos, 2), [8.0, 16.0, 32.0, 64.0]),
        "cutoff": _cutoff(t),
        "slope_tolerance": t.get("slope_tolerance", _pos, 0.1),
        "ratio_tolerance": t.get("ratio_tolerance", _pos, 1e-9),
    }
    out["radii"] = [float(r) for r in out["radii"]]
    if t.has("chi"):
        out["chi"] = t.get("chi", lambda v, w: _as_int(v, w))
    return out


def _parse_glue(t):
    out = {
        "n": t.get("n", lambda v, w: _as_int(v, w, 3, 12), 4),
        "mass": t.get("mass", _pos, 0.5),
        "cutoff": _cutoff(t),
        "samples": t.get("samples", lambda v, w: _as_int(v, w, 2, 100000), 41),
        "seam_tolerance": t.get("seam_tolerance", _pos, 1e-10),
    }
    if t.has("gram"):
        d = out["n"] - 1

        def mat(v, w):
            rows = _as_list(v, w, lambda r, ww: _as_list(r, ww, _as_matrix_entry))
            if len(rows) != d or any(len(r) != d for r in rows):
                raise ConfigError(w, f"expected a {d}x{d} matrix for n = {out['n']}")
            return rows
        out["gram"] = t.get("gram", mat)
        out["sigma"] = t.get("sigma", lambda v, w: _as_list(v, w, lambda x, ww: _as_int(x, ww)))
        if len(out["sigma"]) != d:
            raise ConfigError(t._loc("sigma"), f"expected {d} coefficients")
    else:
        out["R"] = t.get("R", lambda v, w: _as_float(v, w, positive=True), 16.0)
    return out


_PARSERS = {
    "curvature-check": ("curvature", _parse_curvature),
    "residual-decay": ("residual_decay", _parse_residual),
    "modes": ("modes", _parse_modes),
    "admissible": ("admissible", _parse_admissible),
    "volume": ("volume", _parse_volume),
    "glue-inspect": ("glue", _parse_glue),
}


def _parse_params(command, table):
    if command == "sweep":
        return _parse_sweep(table)
    _, parser = _PARSERS[command]
    out = parser(table)
    table.finish()
    return out


def _parse_sweep(t):
    def exp(v, w):
        if v not in _PARSERS:
            raise ConfigError(w, f"unknown experiment {v!r}; expected one of {', '.join(_PARSERS)}")
        return v
    experiment = t.get("experiment", exp)
    base = t.table("base", {})
    vary = t.table("vary")
    t.finish()
    axes = {}
    for key, vals in vary.data.items():
        if not isinstance(vals, list) or not vals:
            raise ConfigError(vary._loc(key), "expected a non-empty list of values")
        axes[key] = vals
    vary.used.update(axes)
    if not axes:
        raise ConfigError(vary.where, "nothing to vary")
    runs = []
    for combo in itertools.product(*axes.values()):
        over = dict(zip(axes, combo))
        merged = {**base.data, **over}
        where = f"{vary.where}[" + ", ".join(f"{k}={v!r}" for k, v in over.items()) + "]"
        runs.append(_parse_params(experiment, _Table(merged, where)))
    return {"experiment": experiment, "base": dict(base.data), "vary": axes, "runs": runs}


@dataclass
class ExperimentConfig:
    """A validated experiment: command, its parameters, output and threads."""

    command: str
    params: dict
    output_dir: str = "dehnfill-out"
    plots: bool = True
    csv: bool = True
    threads: int = 1

    def to_dict(self):
        out = {"command": self.command, "threads": self.threads,
               "output": {"dir": self.output_dir, "plots": self.plots, "csv": self.csv}}
        if self.command == "sweep":
            p = self.params
            out["sweep"] = {"experiment": p["experiment"], "base": p["base"], "vary": p["vary"]}
        else:
            out[_PARSERS[self.command][0]] = self.params
        return out

    def to_toml(self):
        return tomli_w.dumps(self.to_dict())


def config_from_dict(data, command=None):
    """Validate a parsed config.  ``command`` comes from the command line."""
    root = _Table(data, "")
    cmd = root.get("command", _as_str, command)
    if cmd not in COMMANDS:
        raise ConfigError("command", f"unknown command {cmd!r}; expected one of {', '.join(COMMANDS)}")
    if command is not None and cmd != command:
        raise ConfigError("command", f"config is for {cmd!r} but {command!r} was requested")
    threads = root.get("threads", lambda v, w: _as_int(v, w, 1, 256), 1)
    out = root.table("output", {})
    out_dir = out.get("dir", _as_str, "dehnfill-out")
    plots = out.get("plots", _as_bool, True)
    csv_on = out.get("csv", _as_bool, True)
    out.finish()
    section = "sweep" if cmd == "sweep" else _PARSERS[cmd][0]
    params = _parse_params(cmd, root.table(section))
    root.finish()
    return ExperimentConfig(cmd, params, out_dir, plots, csv_on, threads)


def _as_bool(v, w):
    if not isinstance(v, bool):
        raise ConfigError(w, f"expected true or false, got {v!r}")
    return v


def load_config(path, command=None):
    p = Path(path)
    if not p.is_file():
        raise ConfigError(str(path), "config file does not exist")
    try:
        with open(p, "rb") as fh:
            data = tomllib.load(fh)
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(str(path), f"not valid TOML: {exc}") from None
    return config_from_dict(data, command)


# --------------------------------------------------------------------------
# experiments


def _verdict(name, invariant, passed, value=None, tolerance=None, row=None):
    return {"name": name, "invariant": invariant, "passed": bool(passed),
            "value": value, "tolerance": tolerance, "row": row}


def _pmap(fn, items, threads):
    """map in a worker pool; results come back in input order."""
    items = list(items)
    if threads <= 1 or len(items) <= 1:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(fn, items))


@dataclass
class Outcome:
    rows: list
    verdicts: list
    tables: dict = field(default_factory=dict)
    plots: list = field(default_factory=list)


def _curvature_rows(n, p):
    m = p["mass"]
    bh = black_hole_metric(bh_params(n, m), Lattice(np.eye(n - 2)))
    cusp = cusp_metric(n, Lattice(np.eye(n - 1)))
    rows = []
    for r in bh.params.r_plus * np.geomspace(1.0, p["r_max"], p["samples"]):
        r = float(r)
        cf = sectional_closed_form(n, m, r)
        fd = curvature_fd(bh, r)
        diff = max(abs(cf.sectional[k] - fd.sectional[k]) for k in cf.sectional)
        cfd = curvature_fd(cusp, r)
        rows.append({"n": n, "r": r, "chart": fd.chart, "max_abs_diff": diff,
                     "einstein_residual": fd.einstein_residual,
                     "cusp_einstein_residual": cfd.einstein_residual,
                     "weyl_norm": fd.weyl_norm})
    return rows


def run_curvature(p, threads):
    rows = [r for block in _pmap(lambda n: _curvature_rows(n, p), p["dims"], threads) for r in block]
    worst = max(rows, key=lambda r: r["max_abs_diff"])
    resid = max(rows, key=lambda r: max(r["einstein_residual"], r["cusp_einstein_residual"]))
    rv = max(resid["einstein_residual"], resid["cusp_einstein_residual"])
    verdicts = [
        _verdict("fd-vs-closed-form", "finite-difference sectional curvatures equal the closed forms",
                 worst["max_abs_diff"] <= p["tolerance"], worst["max_abs_diff"], p["tolerance"], worst),
        _verdict("einstein-residual", "|Ric + (n-1) g| vanishes for the cusp and the black hole",
                 rv <= p["einstein_tolerance"], rv, p["einstein_tolerance"], resid),
    ]
    return Outcome(rows, verdicts, {"curvature": rows})


def run_residual(p, threads):
    cutoff = CutoffSpec(p["cutoff"])
    jobs = [(n, R) for n in p["dims"] for R in p["radii"]]

    def one(job):
        n, R = job
        end = unit_area_end(n, R, p["mass"], cutoff)
        sup = annulus_sup_residual(end.glued, p["samples"])
        return {"n": n, "R": R, "sup_residual": sup, "scaled": sup * R ** (n - 1)}

    rows = _pmap(one, jobs, threads)
    verdicts, fits = [], []
    for n in p["dims"]:
        sub = [r for r in rows if r["n"] == n]
        slope, _ = loglog_fit([r["R"] for r in sub], [r["sup_residual"] for r in sub])
        target = -(n - 1)
        fits.append({"n": n, "slope": slope, "expected": target})
        verdicts.append(_verdict(f"decay-slope-n{n}", "glued residual decays like R^-(n-1)",
                                 abs(slope - target) <= p["slope_tolerance"], slope,
                                 p["slope_tolerance"], {"n": n, "expected": target}))
    plot_rows = [{"series": f"n={r['n']}", "x": r["R"], "y": r["sup_residual"]} for r in rows]
    return Outcome(rows, verdicts, {"residual_decay": rows, "residual_fit": fits},
                   [("decay", plot_rows, "residual_decay.svg")])


def run_modes(p, threads):
    rows, profiles = [], []
    lo, hi = p["r_range"]
    for n in p["dims"]:
        for cls in CLASSES:
            ode = euler_coeffs(n, cls)
            closed = closed_form_modes(n, cls)
            err = 0.0
            for h0, dh0 in ((1.0, 0.0), (0.0, 1.0)):
                prof = integrate_mode(n, cls, h0, dh0, (lo, hi), steps=p["steps"])
                err = max(err, relative_error(n, cls, prof, h0, dh0))
            exact = closed_form_solution(n, cls, 1.0, 0.0)
            rs = np.geomspace(lo, hi, 60)
            profiles += [{"series": f"n={n} {cls}", "x": float(r), "y": float(v)}
                         for r, v in zip(rs, exact(rs))]
            rows.append({"n": n, "class": cls, "B": ode.B, "C": ode.C,
                         "exponent_hi": closed.exponents[0], "exponent_lo": closed.exponents[1],
                         "indicial_residual": max(abs(ode.indicial(a)) for a in closed.exponents),
                         "bounded_dim": closed.bounded_dim,
                         "bounded_dim_numeric": bounded_dimension_numeric(n, cls),
                         "max_rel_error": err})
    m_lo, m_hi = p["mass_range"]
    beta_rows = []
    for n in p["dims"]:
        beta_rows += [{"series": f"n={n}", "x": float(m), "y": theta_period(n, float(m))}
                      for m in np.geomspace(m_lo, m_hi, p["mass_points"])]
    worst = max(rows, key=lambda r: r["max_rel_error"])
    dims_ok = all(r["bounded_dim"] == r["bounded_dim_numeric"] == (1 if r["class"] == "ab" else 0)
                  for r in rows)
    ind = max(r["indicial_residual"] for r in rows)
    decreasing = all(b["y"] < a["y"] for a, b in zip(beta_rows, beta_rows[1:]) if a["series"] == b["series"])
    verdicts = [
        _verdict("integration-vs-closed-form", "numeric mode profiles equal the power-law solutions",
                 worst["max_rel_error"] <= p["tolerance"], worst["max_rel_error"], p["tolerance"], worst),
        _verdict("indicial-roots", "exponents solve the indicial equation", ind <= 1e-10, ind, 1e-10),
        _verdict("bounded-dimensions", "bounded solutions: 1 for ab, 0 for 1b and 11", dims_ok,
                 [r["bounded_dim_numeric"] for r in rows]),
        _verdict("period-decreasing", "theta period strictly decreases with the mass", decreasing),
    ]
    return Outcome(rows, verdicts, {"modes": rows, "beta": beta_rows},
                   [("modes", profiles, "mode_profiles.svg"), ("beta", beta_rows, "beta_mass.svg")])


def _group_for(p):
    if "catalog" in p:
        return catalog_flat3(p["catalog"])
    groups = load_groups(p["group_file"])
    if p["group"] not in groups:
        raise ConfigError("admissible.group", f"no group {p['group']!r} in {p['group_file']}")
    return groups[p["group"]]


def run_admissible(p, threads):
    group = _group_for(p)
    lo, hi = p["window"]
    reports = enumerate_admissible(group, lo, hi, workers=threads)
    lams = [Fraction(x) for x in p["lambdas"]]
    rows, worst = [], None
    for rep in reports:
        res = [check_relations(deform_action(group, rep.sigma, lam)) for lam in lams]
        exact = all(r.exact_zero for r in res)
        row = {"sigma": " ".join(map(str, rep.sigma.coeffs)), "length": rep.sigma.length(),
               "parallel_ok": all(rep.parallel_ok.values()), "core_free_ok": rep.core_free_ok,
               "deformed_relations_exact": exact}
        rows.append(row)
        if not exact and worst is None:
            worst = row
    verdicts = [
        _verdict("group-validates", "relations, freeness and lattice preservation hold", True,
                 group.name),
        _verdict("deformed-relations-exact", "shrinking sigma keeps every relation exactly",
                 worst is None, len(rows), None, worst),
    ]
    return Outcome(rows, verdicts, {"admissible": rows})


def run_volume(p, threads):
    cutoff = CutoffSpec(p["cutoff"])
    rows, ratio_rows, verdicts = [], [], []
    tables = _pmap(lambda n: volume_defect(n, p["radii"], p["mass"], cutoff), p["dims"], threads)
    for n, table in zip(p["dims"], tables):
        sub = [r.as_row() for r in table]
        rows += sub
        ds = [r["delta"] for r in sub]
        slope, _ = loglog_fit([r["R"] for r in sub], ds)
        target = -(n - 1)
        verdicts.append(_verdict(f"defect-positive-decreasing-n{n}", "filling removes volume, less for longer curves",
                                 all(d > 0 for d in ds) and all(b < a for a, b in zip(ds, ds[1:])), ds))
        verdicts.append(_verdict(f"defect-slope-n{n}", "per-area defect scales like R^-(n-1)",
                                 abs(slope - target) <= p["slope_tolerance"], slope, p["slope_tolerance"],
                                 {"n": n, "expected": target}))
        for R in p["radii"]:
            end = unit_area_end(n, R, p["mass"], cutoff)
            ratio = exact_volume_ratio(end)
            expect = 1 - (end.params.r_plus / end.R) ** (n - 1)
            ratio_rows.append({"n": n, "R": R, "ratio": ratio, "expected": expect,
                               "error": abs(ratio - expect)})
    worst = max(ratio_rows, key=lambda r: r["error"])
    verdicts.append(_verdict("exact-volume-ratio", "black hole / cusp volume below R is 1 - (r_+/R)^(n-1)",
                             worst["error"] <= p["ratio_tolerance"], worst["error"], p["ratio_tolerance"], worst))
    if "chi" in p:
        vols = []
        for n in p["dims"]:
            if n % 2 == 0:
                vols.append({"n": n, "chi": p["chi"], "volume": hyperbolic_volume_gb(n, p["chi"])})
        tables_out = {"volume_defect": rows, "volume_ratio": ratio_rows, "gauss_bonnet": vols}
    else:
        tables_out = {"volume_defect": rows, "volume_ratio": ratio_rows}
    plot_rows = [{"series": f"n={r['n']}", "x": r["R"], "y": r["delta"]} for r in rows]
    return Outcome(rows + ratio_rows, verdicts, tables_out, [("defect", plot_rows, "volume_defect.svg")])


def run_glue(p, threads):
    n, m = p["n"], p["mass"]
    cutoff = CutoffSpec(p["cutoff"])
    if "gram" in p:
        target = Lattice([[_matrix_value(x) for x in row] for row in p["gram"]])
        end = filled_end(n, target, p["sigma"], m=m, cutoff=cutoff)
    else:
        end = unit_area_end(n, p["R"], m, cutoff)
    g, R, rp = end.glued, end.R, end.params.r_plus
    seam = float(np.max(np.abs(end.black_hole.cross_gram(R) - end.target.matrix))
                 / np.max(np.abs(end.target.matrix)))
    radii = np.unique(np.concatenate([np.geomspace(rp, 4 * R, p["samples"]), [R / 2, R, 2 * R]]))
    rows = []
    for r in radii:
        r = float(r)
        fc = frame_curvature(g, r)
        chi = g.spec.chi(r)[0]
        rows.append({"r": r, "F": float(g.F(r)), "chi": float(chi),
                     "einstein_residual": fc.einstein_residual,
                     "K_min": float(fc.sectional_values().min()),
                     "K_max": float(fc.sectional_values().max())})
    lo = radii[radii <= R / 2]
    hi = radii[radii >= 2 * R]
    inner_ok = bool(np.all(np.asarray(g.F(lo)) == np.asarray(end.black_hole.F(lo))))
    outer_ok = bool(np.all(np.asarray(g.F(hi)) == np.asarray(end.cusp.F(hi))))
    bounds = curvature_bounds(g, radii)
    verdicts = [
        _verdict("seam-matches-target", "the black-hole slice at R is the target torus",
                 seam <= p["seam_tolerance"], seam, p["seam_tolerance"]),
        _verdict("cutoff-regions", "glued metric is the black hole below R/2 and the cusp above 2R",
                 inner_ok and outer_ok),
        _verdict("curvature-window", "sectional curvatures stay inside the leading-order window",
                 bounds.ok, {"kmin": bounds.kmin, "kmax": bounds.kmax,
                             "lower": bounds.lower, "upper": bounds.upper}, bounds.eps),
    ]
    meta = {"R": R, "r_plus": rp, "beta": end.params.beta, "length": end.length}
    return Outcome(rows, verdicts, {"glue": rows, "glue_summary": [meta]})


_RUNNERS = {
    "curvature-check": run_curvature,
    "residual-decay": run_residual,
    "modes": run_modes,
    "admissible": run_admissible,
    "volume": run_volume,
    "glue-inspect": run_glue,
}


def run_sweep(p, threads):
    runner = _RUNNERS[p["experiment"]]
    outs = _pmap(lambda params: runner(params, 1), p["runs"], threads)
    rows, verdicts = [], []
    for i, (params, out) in enumerate(zip(p["runs"], outs)):
        over = {k: params[k] for k in p["vary"] if k in params}
        rows.append({"run": i, **{k: json.dumps(v) for k, v in over.items()},
                     "passed": all(v["passed"] for v in out.verdicts)})
        for v in out.verdicts:
            verdicts.append({**v, "name": f"run{i}:{v['name']}"})
    return Outcome(rows, verdicts, {"sweep": rows})


_RUNNERS["sweep"] = run_sweep


# --------------------------------------------------------------------------
# output


def _jsonable(x):
    if isinstance(x, dict):
        return {str(k): _jsonable(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_jsonable(v) for v in x]
    if isinstance(x, (np.floating, float)):
        x = float(x)
        return x if math.isfinite(x) else None
    if isinstance(x, (np.integer,)):
        return int(x)
    if isinstance(x, (np.bool_,)):
        return bool(x)
    if isinstance(x, Fraction):
        return str(x)
    return x


def write_csv(rows, path):
    rows = list(rows)
    if not rows:
        return
    cols = list(rows[0])
    for r in rows[1:]:
        cols += [k for k in r if k not in cols]
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=cols, lineterminator="\n")
        w.writeheader()
        for r in rows:
            w.writerow({k: _csv_cell(r.get(k)) for k in cols})


def _csv_cell(v):
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    if isinstance(v, (list, tuple, dict)):
        return json.dumps(_jsonable(v))
    return "" if v is None else v


_PLOT_STYLE = {
    "decay": ("matching radius R", "sup |Ric + (n-1)g| on [R/2, 2R]", True),
    "defect": ("matching radius R", "volume defect per unit area", True),
    "modes": ("r", "h(r), data (1, 0) at r = 1", False),
    "beta": ("mass m", "theta period", False),
}


def emit_plot(rows, kind, path):
    """Write a deterministic SVG plot of ``rows`` (dicts with series, x, y)."""
    import matplotlib
    from matplotlib.figure import Figure

    rows = list(rows)
    if len(rows) < 2:
        raise DehnFillError(f"a {kind} plot needs at least two rows, got {len(rows)}")
    if kind not in _PLOT_STYLE:
        raise DehnFillError(f"unknown plot kind {kind!r}")
    xlabel, ylabel, loglog = _PLOT_STYLE[kind]
    series = {}
    for r in rows:
        series.setdefault(r["series"], []).append((r["x"], r["y"]))
    with matplotlib.rc_context({"svg.hashsalt": "dehnfill", "svg.fonttype": "none"}):
        fig = Figure(figsize=(6, 4.5))
        ax = fig.add_subplot()
        for name, pts in series.items():
            xs, ys = map(np.asarray, zip(*pts))
            label = name
            if loglog and len(xs) >= 2 and np.all(ys > 0):
                slope, icpt = loglog_fit(xs, ys)
                label = f"{name}  slope {slope:.3f}"
                ax.plot(xs, np.exp(icpt) * xs**slope, linestyle=":", color="0.5", linewidth=1)
            ax.plot(xs, ys, marker="o" if loglog else None, markersize=4, label=label)
        if loglog:
            ax.set_xscale("log")
            ax.set_yscale("log")
        if kind == "modes":
            ax.set_xscale("log")
            ax.set_yscale("symlog", linthresh=1e-2)
        ax.set_xlabel(xlabel)
        ax.set_ylabel(ylabel)
        ax.legend(fontsize=8)
        fig.tight_layout()
        fig.savefig(path, format="svg", metadata={"Date": None, "Creator": f"dehnfill {__version__}"})
    return Path(path)


def run(config, out_dir=None, threads=None):
    """Execute an experiment, write its artifacts and return the report dict."""
    threads = threads or config.threads
    out = Path(out_dir or config.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    t0 = time.perf_counter()
    outcome = _RUNNERS[config.command](config.params, threads)
    artifacts = []
    if config.csv:
        for name, rows in outcome.tables.items():
            if rows:
                write_csv(rows, out / f"{name}.csv")
                artifacts.append(f"{name}.csv")
    if config.plots:
        for kind, rows, fname in outcome.plots:
            if len(rows) >= 2:
                emit_plot(rows, kind, out / fname)
                artifacts.append(fname)
    report = {
        "schema_version": SCHEMA_VERSION,
        "tool": "dehnfill",
        "version": __version__,
        "command": config.command,
        "config": config.to_dict(),
        "rows": outcome.rows,
        "verdicts": outcome.verdicts,
        "passed": all(v["passed"] for v in outcome.verdicts),
        "artifacts": artifacts,
        "timing": {"wall_clock_s": time.perf_counter() - t0, "threads": threads},
    }
    report = _jsonable(report)
    with open(out / "report.json", "w") as fh:
        json.dump(report, fh, indent=2, allow_nan=False)
        fh.write("\n")
    return report


def _threads_from(args, config):
    if args.threads is not None:
        return args.threads
    env = os.environ.get(THREADS_ENV)
    if env:
        try:
            return _as_int(int(env), THREADS_ENV, 1, 256)
        except ValueError:
            raise ConfigError(THREADS_ENV, f"expected a positive integer, got {env!r}") from None
    return config.threads


def build_parser():
    ap = argparse.ArgumentParser(prog="dehnfill", description=__doc__.split("\n\n")[0])
    ap.add_argument("--version", action="version", version=f"dehnfill {__version__}")
    sub = ap.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        sp = sub.add_parser(name)
        sp.add_argument("--config", required=True, help="TOML experiment file")
        sp.add_argument("--out", help="output directory (overrides output.dir)")
        sp.add_argument("--threads", type=int, help=f"worker threads (overrides {THREADS_ENV})")
    return ap


def main(argv=None):
    ap = build_parser()
    try:
        args = ap.parse_args(argv)
    except SystemExit as exc:
        return EXIT_CONFIG if exc.code else EXIT_OK
    try:
        if args.threads is not None and args.threads < 1:
            raise ConfigError("--threads", "must be at least 1")
        config = load_config(args.config, args.command)
        threads = _threads_from(args, config)
        report = run(config, args.out, threads)
    except DehnFillError as exc:
        print(f"dehnfill: config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except KeyError as exc:
        print(f"dehnfill: config error: {exc.args[0]}", file=sys.stderr)
        return EXIT_CONFIG
    except (ArithmeticError, np.linalg.LinAlgError, RuntimeError) as exc:
        print(f"dehnfill: numeric failure: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_VERDICT
    failed = [v for v in report["verdicts"] if not v["passed"]]
    for v in report["verdicts"]:
        mark = "PASS" if v["passed"] else "FAIL"
        print(f"{mark}  {v['name']}: {v['invariant']}")
    if failed:
        v = failed[0]
        print(f"dehnfill: verdict {v['name']} failed (value {v['value']}, tolerance {v['tolerance']}); "
              f"row: {json.dumps(v['row'])}", file=sys.stderr)
        return EXIT_VERDICT
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
