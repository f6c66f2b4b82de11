"""Config-driven experiment runner.

    hardylab <subcommand> [--config PATH] [--seed INT] [--out DIR]

Each run writes ``report.json`` (sorted keys, with a full echo of the
effective config) plus plot-ready CSV tables and HQF1 fields into the output
directory.  Exit codes: 0 ok, 2 validation error, 3 numerical
non-convergence.
"""

from __future__ import annotations

import argparse
import configparser
import csv
import json
import logging
import os
import sys
import time
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Optional

import numpy as np

from . import __version__
from . import factorization as fz
from . import findim_lab as fl
from . import norms as nm
from . import operators as ops
from . import quantities as qt
from . import spectral_core as sc
from . import variational as vr

logger = logging.getLogger(__name__)

SUBCOMMANDS = ("transform", "norms", "quantity", "minnorm", "factorize", "findim")
EXIT_OK, EXIT_INVALID, EXIT_NONCONVERGED = 0, 2, 3
SHIPPED = "shipped:"

# section -> key -> type; anything else in a config file is rejected
SCHEMA = {
    "run": {"subcommand": str, "seed": int},
    "grid": {"dim": int, "n": int, "period": float},
    "quantity": {"kind": str, "probes": int, "kmax": int, "decay": float},
    "io": {"input": str, "multiplier": str, "output": str},
    "tolerances": {"tol": float, "eig_tol": float, "loose_tol": float},
    "transform": {"symbol": str, "kmax": int, "decay": float},
    "norms": {"p": str, "t_min": float, "levels": int, "max_depth": int, "kmax": int, "decay": float},
    "minnorm": {"max_outer": int, "max_inner": int, "n_starts": int, "bounds": bool,
                "n_samples": int, "max_terms": int},
    "factorize": {"source": str, "levels": int},
    "findim": {"model": str, "n": int, "m": int, "samples": int, "trials": int, "starts": int,
               "probes": int},
}

DEFAULTS = {
    "grid": {"dim": 2, "n": 32, "period": 2 * np.pi},
    "tolerances": {"tol": 1e-6, "eig_tol": 1e-10, "loose_tol": 1e-4},
    "transform": {"decay": 1.0},
    "norms": {"p": "1,2,4", "decay": 1.0},
    "quantity": {"probes": 8, "decay": 1.0},
    "minnorm": {"max_outer": 80, "max_inner": 400, "n_starts": 1, "bounds": False, "n_samples": 8,
                "max_terms": 50},
    "factorize": {"source": "corpus", "levels": 2},
    "findim": {"model": "chiral", "n": 4, "m": 3, "samples": 256, "trials": 20, "starts": 8, "probes": 2},
}


class ConfigError(ValueError):
    pass


class NonConvergence(RuntimeError):
    pass


@dataclass
class ExperimentConfig:
    subcommand: str
    grid: tuple = (2, 32, 2 * np.pi)
    quantity: str = ""
    io: dict = field(default_factory=dict)
    seed: int = 0
    tolerances: dict = field(default_factory=dict)
    params: dict = field(default_factory=dict)
    out_dir: Path = Path("hardylab_out")
    # the effective sections, echoed into the report
    echo: dict = field(default_factory=dict)

    def section(self, name: str) -> dict:
        return self.params.get(name, {})


# --------------------------------------------------------------------------
# config parsing


def _coerce(section: str, key: str, raw: str):
    typ = SCHEMA[section][key]
    try:
        if typ is bool:
            low = raw.strip().lower()
            if low in ("1", "true", "yes", "on"):
                return True
            if low in ("0", "false", "no", "off"):
                return False
            raise ValueError(raw)
        return typ(raw.strip())
    except ValueError:
        raise ConfigError(f"[{section}] {key}: cannot read {raw!r} as {typ.__name__}") from None


def _resolve_path(value: str, base: Path) -> str:
    if value.startswith(SHIPPED):
        name = value[len(SHIPPED):]
        p = resources.files("hardylab").joinpath("data", name)
        if not p.is_file():
            raise ConfigError(f"no shipped data file {name!r}")
        return str(p)
    p = Path(value)
    if not p.is_absolute():
        p = base / p
    return str(p.resolve())


def load_config(subcommand: Optional[str], path: Optional[str] = None, seed: Optional[int] = None,
                out: Optional[str] = None) -> ExperimentConfig:
    """Parse an INI-style config strictly and resolve all paths."""
    sections: dict = {}
    base = Path.cwd()
    if path is not None:
        cp = configparser.ConfigParser(interpolation=None, default_section="__none__")
        cp.optionxform = str
        try:
            with open(path, encoding="utf-8") as fh:
                cp.read_file(fh)
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from None
        except configparser.Error as exc:
            raise ConfigError(f"malformed config {path}: {exc}") from None
        base = Path(path).resolve().parent
        for sec in cp.sections():
            if sec not in SCHEMA:
                raise ConfigError(f"unknown config section [{sec}]")
            for key, raw in cp.items(sec):
                if key not in SCHEMA[sec]:
                    raise ConfigError(f"unknown config key {key!r} in section [{sec}]")
                sections.setdefault(sec, {})[key] = _coerce(sec, key, raw)

    run = sections.get("run", {})
    sub = subcommand or run.get("subcommand")
    if sub is None:
        raise ConfigError("no subcommand given")
    if sub not in SUBCOMMANDS:
        raise ConfigError(f"unknown subcommand {sub!r}")
    if run.get("subcommand", sub) != sub:
        raise ConfigError(f"config is for {run['subcommand']!r}, not {sub!r}")
    if seed is None:
        seed = run.get("seed", 0)

    eff = {}
    for sec in SCHEMA:
        merged = {**DEFAULTS.get(sec, {}), **sections.get(sec, {})}
        if merged:
            eff[sec] = merged
    eff["run"] = {"subcommand": sub, "seed": int(seed)}
    io = dict(eff.get("io", {}))
    for key in ("input", "multiplier"):
        if key in io:
            io[key] = _resolve_path(io[key], base)
    eff["io"] = io
    g = eff["grid"]
    cfg = ExperimentConfig(
        subcommand=sub,
        grid=(g["dim"], g["n"], g["period"]),
        quantity=eff.get("quantity", {}).get("kind", ""),
        io=io,
        seed=int(seed),
        tolerances=eff["tolerances"],
        params=eff,
        out_dir=Path(out or io.get("output") or "hardylab_out").resolve(),
    )
    # the echo keeps the user's spelling of paths so reports are portable
    cfg.echo = {s: dict(v) for s, v in eff.items()}
    cfg.echo["io"] = {k: v for k, v in sections.get("io", {}).items() if k != "output"}
    return cfg


# --------------------------------------------------------------------------
# helpers


def _grid(cfg: ExperimentConfig) -> sc.GridSpec:
    try:
        return sc.GridSpec(*cfg.grid)
    except ValueError as exc:
        raise ConfigError(str(exc)) from None


def _input_field(cfg: ExperimentConfig, rng, kmax=None, decay=1.0, real=True) -> sc.Field:
    path = cfg.io.get("input")
    if path is not None:
        try:
            return sc.read_field(path)
        except (OSError, ValueError) as exc:
            raise ConfigError(f"cannot read input field: {exc}") from None
    g = _grid(cfg)
    return sc.random_bandlimited(g, rng, kmax=kmax, real=real, decay=decay)


def _write_csv(path: Path, header, rows) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for r in rows:
            w.writerow([_csv_value(v) for v in r])


def _csv_value(v):
    if isinstance(v, (bool, np.bool_)):
        return int(v)
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return v


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, (np.bool_, bool)):
        return bool(obj)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        x = float(obj)
        return x if np.isfinite(x) else repr(x)
    if isinstance(obj, complex):
        return [obj.real, obj.imag]
    if isinstance(obj, Path):
        return str(obj)
    return obj


def _descriptor(cfg: ExperimentConfig, grid: sc.GridSpec, fallback: str) -> qt.QuantityDescriptor:
    try:
        return qt.QuantityDescriptor.parse(cfg.quantity or fallback, grid)
    except ValueError as exc:
        raise ConfigError(str(exc)) from None


def _default_kind(grid: sc.GridSpec) -> str:
    return "planar_jacobian" if grid.dim == 2 else "line_q1"


def _shipped_kind(path: Optional[str]) -> Optional[str]:
    if path is None:
        return None
    meta = json.loads(resources.files("hardylab").joinpath("data", "instances.json").read_text())
    for inst in meta["instances"]:
        if Path(path).name == inst["data"]:
            return inst["kind"]
    return None


def _field_rows(f: sc.Field, g: Optional[sc.Field] = None):
    coords = [c.ravel() for c in f.grid.coords()]
    a = f.values.ravel()
    b = None if g is None else g.values.ravel()
    for i in range(a.size):
        row = [i] + [c[i] for c in coords] + [a[i].real, a[i].imag]
        if b is not None:
            row += [b[i].real, b[i].imag]
        yield row


def _coord_names(grid: sc.GridSpec):
    return ["x", "y"][: grid.dim]


# --------------------------------------------------------------------------
# subcommands; each returns (results, status)


def run_transform(cfg: ExperimentConfig, rng) -> tuple:
    p = cfg.section("transform")
    f = _input_field(cfg, rng, p.get("kmax"), p["decay"])
    if "symbol" not in p:
        p["symbol"] = "hilbert" if f.grid.dim == 1 else "beurling"
        cfg.echo["transform"]["symbol"] = p["symbol"]
    try:
        sym = sc.symbol_from_string(p["symbol"])
        out = sc.apply_multiplier(f, sym)
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    sc.write_field(cfg.out_dir / "transform.hqf", out)
    _write_csv(cfg.out_dir / "transform.csv",
               ["index"] + _coord_names(f.grid) + ["re_in", "im_in", "re_out", "im_out"],
               _field_rows(f, out))
    res = {"symbol": p["symbol"], "grid": [f.grid.dim, f.grid.n, f.grid.period],
           "l2_in": f.norm(), "l2_out": out.norm(),
           "ratio": out.norm() / f.norm() if f.norm() > 0 else 0.0}
    return res, EXIT_OK


def run_norms(cfg: ExperimentConfig, rng) -> tuple:
    p = cfg.section("norms")
    f = _input_field(cfg, rng, p.get("kmax"), p["decay"])
    try:
        ps = [float(s) for s in p["p"].split(",")]
        ladder = nm.ScaleLadder.default(f.grid)
        if "t_min" in p or "levels" in p:
            ladder = nm.ScaleLadder(p.get("t_min", ladder.t_min), p.get("levels", ladder.levels))
        ladder.check(f.grid)
        lp = {repr(q): nm.lp_norm(f, q) for q in ps}
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    est = nm.h1_norm(f, ladder)
    bmo = nm.bmo_norm(f, p.get("max_depth"))
    # plot-ready H1 ladder: the estimate using the first j scales
    rows = []
    for j in range(1, ladder.levels + 1):
        sub = nm.ScaleLadder(ladder.t_min, j)
        rows.append([j, sub.scales[-1], nm.h1_norm(f, sub).value])
    _write_csv(cfg.out_dir / "h1_ladder.csv", ["levels", "t_max", "h1_estimate"], rows)
    res = {"lp": lp, "h1": est.value, "h1_divergent": est.divergent, "mean_ratio": est.mean_ratio,
           "bmo": bmo, "ladder": {"t_min": ladder.t_min, "levels": ladder.levels}}
    return res, EXIT_OK


def run_quantity(cfg: ExperimentConfig, rng) -> tuple:
    p = cfg.section("quantity")
    g = None
    if "input" in cfg.io:
        w = _input_field(cfg, rng)
        g = w.grid
    else:
        g = _grid(cfg)
    d = _descriptor(cfg, g, _default_kind(g))
    if "input" not in cfg.io:
        w = sc.random_bandlimited(g, rng, kmax=p.get("kmax"), real=not d.complex_h, decay=p["decay"])
    q = qt.eval_quantity(d, w)
    sc.write_field(cfg.out_dir / "quantity.hqf", q)
    # <b, Q w> against <T_b w, w> on random probes
    rows = []
    worst = 0.0
    for i in range(p["probes"]):
        b = sc.random_bandlimited(g, rng, real=True, decay=1.0)
        lhs = qt.real_pairing(b, q)
        rhs = ops.make_handle(d, b).apply(w).inner(w)
        err = abs(lhs - rhs) / max(abs(lhs), abs(rhs), 1e-300)
        worst = max(worst, err)
        rows.append([i, lhs, rhs, err])
    _write_csv(cfg.out_dir / "quantity_pairing.csv", ["probe", "pairing", "form", "rel_err"], rows)
    est = nm.h1_norm(q.real_part()) if q.is_real(1e-10) else None
    res = {"kind": d.to_string(), "grid": [g.dim, g.n, g.period], "l2": q.norm(),
           "integral": abs(q.mean()) * g.period**g.dim, "pairing_max_rel_err": worst}
    if est is not None:
        res["h1"] = est.value
    return res, EXIT_OK


def run_minnorm(cfg: ExperimentConfig, rng) -> tuple:
    p = cfg.section("minnorm")
    if "input" not in cfg.io:
        cfg.io["input"] = _resolve_path(SHIPPED + "jacobian_n16.hqf", Path.cwd())
        cfg.echo["io"].setdefault("input", SHIPPED + "jacobian_n16.hqf")
    f = _input_field(cfg, rng)
    if not cfg.quantity:
        cfg.quantity = _shipped_kind(cfg.io["input"]) or _default_kind(f.grid)
    d = _descriptor(cfg, f.grid, "")
    tol = cfg.tolerances["tol"]
    opts = vr.SolveOptions(tol=tol, max_outer=p["max_outer"], max_inner=p["max_inner"],
                           n_starts=p["n_starts"], seed=cfg.seed)
    try:
        sol = vr.min_norm_solve(d, f, opts)
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    sc.write_field(cfg.out_dir / "solution.hqf", sol.solution)
    sc.write_field(cfg.out_dir / "multiplier.hqf", sol.multiplier)
    _write_csv(cfg.out_dir / "minnorm_history.csv", ["outer", "rho", "residual", "energy"], sol.history)
    res = {"kind": d.to_string(), **sol.report(),
           "lagrange_residual": vr.lagrange_residual(d, sol.multiplier, sol.solution),
           "pairing": qt.real_pairing(sol.multiplier, f)}
    if p["bounds"]:
        budget = vr.Budget(n_samples=p["n_samples"], tol=tol, max_terms=p["max_terms"],
                           loose_tol=cfg.tolerances["loose_tol"], seed=cfg.seed, solve=opts)
        bnd = vr.xqstar_bounds(d, f, budget)
        res.update(lower=bnd.lower, upper=bnd.upper, terms=bnd.terms, stagnated=bnd.stagnated)
    return res, EXIT_OK if sol.converged else EXIT_NONCONVERGED


def run_factorize(cfg: ExperimentConfig, rng) -> tuple:
    p = cfg.section("factorize")
    tol = cfg.tolerances["tol"]
    rows = []
    if p["source"] == "corpus" and "input" not in cfg.io:
        grid, corpus = fz.load_rational_corpus()
        items = [(name, U, grid) for name, U in corpus]
    elif p["source"] in ("corpus", "input"):
        if "input" not in cfg.io:
            raise ConfigError("factorize source 'input' needs [io] input")
        f = _input_field(cfg, rng)
        items = [(Path(cfg.io["input"]).stem, f, None)]
    else:
        raise ConfigError(f"unknown factorize source {p['source']!r}")
    worst = 0.0
    failed = []
    for name, U, grid in items:
        try:
            out = fz.factorize(U, tol=tol, grid=grid, levels=p["levels"])
        except fz.FactorizationError as exc:
            logger.error("%s: %s", name, exc)
            failed.append(name)
            rows.append([name, "", "", "", 0, float("nan")])
            continue
        except ValueError as exc:
            raise ConfigError(f"{name}: {exc}") from None
        worst = max(worst, out.residual_l1)
        n_zeros = sum(m for _, m in out.zero_report)
        rows.append([name, n_zeros, out.blaschke_degree, out.is_square, len(out.zero_report), out.residual_l1])
        if len(items) == 1:
            sc.write_field(cfg.out_dir / "omega.hqf", out.omega)
            sc.write_field(cfg.out_dir / "gamma.hqf", out.gamma)
    _write_csv(cfg.out_dir / "factorization.csv",
               ["name", "zero_count", "blaschke_degree", "is_square", "distinct_zeros", "residual_l1"], rows)
    res = {"instances": len(items), "max_residual_l1": worst, "failed": failed,
           "rows": [dict(zip(["name", "zero_count", "blaschke_degree", "is_square", "distinct_zeros",
                              "residual_l1"], r)) for r in rows]}
    ok = not failed and worst <= tol
    return res, EXIT_OK if ok else EXIT_NONCONVERGED


def _findim_model(p: dict, seed: int) -> fl.FinDimModel:
    kind, n, m = p["model"], p["n"], p["m"]
    if kind == "chiral":
        if n % 2:
            raise ConfigError("chiral models need even n")
        return fl.build_model(n, m, seed, chiral=True)
    if kind == "generic":
        return fl.build_model(n, m, seed, chiral=False).verified(seed=seed)
    if kind == "simple":
        return fl.simple_model()
    if kind == "hilbert_type":
        if n % 4:
            raise ConfigError("hilbert_type models need n divisible by 4")
        return fl.hilbert_type_model(n // 4, m, seed).doubled()
    if kind == "degenerate":
        if n % 2:
            raise ConfigError("degenerate models need even n")
        return fl.degenerate_chiral_model(n // 2, m, 2, seed)
    raise ConfigError(f"unknown findim model {kind!r}")


def run_findim(cfg: ExperimentConfig, rng) -> tuple:
    p = cfg.section("findim")
    try:
        model = _findim_model(p, cfg.seed)
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    with open(cfg.out_dir / "model.json", "w", encoding="utf-8") as fh:
        json.dump(_jsonable(model.to_json()), fh, sort_keys=True, indent=1)
        fh.write("\n")

    b = rng.standard_normal(model.m)
    while model.xq_norm(b) <= 0:
        b = rng.standard_normal(model.m)
    b = fl.normalize(model, b)
    face = fl.duality_face(model, b, p["samples"], cfg.seed)
    _write_csv(cfg.out_dir / "findim_face.csv",
               ["sample"] + [f"q{j}" for j in range(model.m)],
               ([i] + list(s) for i, s in enumerate(face.samples)))

    search = fl.assumption2_search(model, p["trials"], cfg.seed, p["starts"])
    corollary = []
    extreme = []
    for i in range(p["probes"]):
        f = rng.standard_normal(model.m)
        dn, dc = fl.norm_corollary_check(model, f, seed=cfg.seed + i)
        corollary.append({"dual": dn.value, "decomposition": dc.value,
                          "converged": bool(dn.converged and dc.converged)})
        chk = fl.extreme_point_check(model, f / dn.value, seed=cfg.seed + i)
        extreme.append(bool(chk["extreme"]))
    res = {"model": model.label, "n": model.n, "m": model.m, "flags": list(model.flags),
           "face": face.report(), "simple_top_fraction": fl.simple_top_fraction(model, seed=cfg.seed),
           "assumption2": {"trials": search["trials"], "violations": len(search["violations"]),
                           "fixed_dims": search["fixed_dims"], "summary": search["summary"]},
           "norm_corollary": corollary, "extreme": extreme}
    ok = all(c["converged"] for c in corollary)
    return res, EXIT_OK if ok else EXIT_NONCONVERGED


RUNNERS = {
    "transform": run_transform,
    "norms": run_norms,
    "quantity": run_quantity,
    "minnorm": run_minnorm,
    "factorize": run_factorize,
    "findim": run_findim,
}


def run_experiment(cfg: ExperimentConfig) -> int:
    """Run one experiment, write report.json and return the exit code."""
    cfg.out_dir.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(cfg.seed)
    t0 = time.perf_counter()
    results, status = RUNNERS[cfg.subcommand](cfg, rng)
    elapsed = time.perf_counter() - t0
    report = {
        "command": cfg.subcommand,
        "config_echo": cfg.echo,
        "results": results,
        "timings": {"total_seconds": elapsed},
        "version": __version__,
    }
    with open(cfg.out_dir / "report.json", "w", encoding="utf-8", newline="\n") as fh:
        json.dump(_jsonable(report), fh, sort_keys=True, indent=1, ensure_ascii=False)
        fh.write("\n")
    if status == EXIT_NONCONVERGED:
        print(f"hardylab {cfg.subcommand}: numerical non-convergence, see report.json", file=sys.stderr)
    return status


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="hardylab", description=__doc__.splitlines()[0])
    ap.add_argument("--version", action="version", version=__version__)
    sub = ap.add_subparsers(dest="subcommand")
    for name in SUBCOMMANDS:
        sp = sub.add_parser(name)
        sp.add_argument("--config", metavar="PATH")
        sp.add_argument("--seed", type=int)
        sp.add_argument("--out", metavar="DIR")
    return ap


def main(argv=None) -> int:
    logging.basicConfig(level=os.environ.get("HARDYLAB_LOG", "WARNING"), stream=sys.stderr,
                        format="%(levelname)s %(name)s: %(message)s")
    ap = build_parser()
    try:
        args = ap.parse_args(argv)
    except SystemExit as exc:
        return EXIT_INVALID if exc.code else EXIT_OK
    if args.subcommand is None:
        ap.print_usage(sys.stderr)
        return EXIT_INVALID
    try:
        cfg = load_config(args.subcommand, args.config, args.seed, args.out)
        return run_experiment(cfg)
    except ConfigError as exc:
        print(f"hardylab: error: {exc}", file=sys.stderr)
        return EXIT_INVALID


if __name__ == "__main__":
    sys.exit(main())
