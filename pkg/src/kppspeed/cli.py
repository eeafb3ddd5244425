"""Command-line experiments.

Every command reads an optional flat JSON config, applies flag overrides and
writes CSV tables plus ``manifest.json`` into ``--out``.  The manifest holds
the fully resolved config, so ``--config <out>/manifest.json`` reruns the
same experiment.  Outputs are first written to a staging directory and moved
into place only when the command succeeds.
"""

from __future__ import annotations

import argparse
import json
import math
import os
import shutil
import sys
import tempfile
from pathlib import Path

import numpy as np

from . import cellproblem, ensemble, pdesim
from .errors import KPPError
from .shear import Grid, OUParams, ShearPath
from .varspeed import SolverOptions, minimal_speed, write_trace_csv

COMMANDS = ("speed", "ensemble", "scaling", "cov-sweep", "pdf", "bounds", "pdesim-compare")

COMMON = {
    "a": 4.0,
    "r": 4.0,
    "L": 1.0,
    "m": 201,
    "N": 10000,
    "seed": 0,
    "f_prime0": 1.0,
    "kappa": 1.0,
    "Q": 300,
    "threads": 0,  # 0 means one worker per CPU
    "sampler": "milstein",
    "deltas": [0.05, 0.1, 0.2, 0.3, 0.4],
}

SPECIFIC = {
    "speed": {"shear": "zero", "shear_value": 0.0, "index": 0, "delta": 1.0, "trace": False},
    "ensemble": {},
    "scaling": {
        "L_list": [1.0, 2.0, 3.0, 4.0],
        "small_deltas": [0.05, 0.1, 0.2, 0.3, 0.4],
        "large_deltas": [20.0, 29.355985, 43.088694, 63.245553, 92.831777, 136.258414, 200.0],
    },
    "cov-sweep": {"alphas": [0.25 * 2.0**j for j in range(9)], "delta": 1.0},
    "pdf": {"deltas": [1.0, 14.0]},
    "bounds": {"delta": 50.0, "kappa": 0.01, "N": 1000},
    "pdesim-compare": {
        "N": 20,
        "kappa": 0.025,
        "deltas": [0.5],
        "nonlinearities": ["kpp"],
        "theta": 0.3,
        "mu": 0.25,
        "dx": 0.05,
        "dt": 0.004,
        "t_final": 100.0,
    },
}


class ConfigError(Exception):
    pass


def defaults(command: str) -> dict:
    cfg = dict(COMMON)
    cfg.update(SPECIFIC[command])
    return cfg


def _coerce(key, value, default):
    if isinstance(default, bool):
        if not isinstance(value, bool):
            raise ConfigError(f"config key {key!r} must be a boolean, got {value!r}")
        return value
    if isinstance(default, int):
        if isinstance(value, bool) or not isinstance(value, int):
            if isinstance(value, float) and value.is_integer():
                return int(value)
            raise ConfigError(f"config key {key!r} must be an integer, got {value!r}")
        return value
    if isinstance(default, float):
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"config key {key!r} must be a number, got {value!r}")
        return float(value)
    if isinstance(default, str):
        if not isinstance(value, str):
            raise ConfigError(f"config key {key!r} must be a string, got {value!r}")
        return value
    if isinstance(default, list):
        if not isinstance(value, list) or not value:
            raise ConfigError(f"config key {key!r} must be a non-empty list, got {value!r}")
        proto = default[0]
        return [_coerce(key, v, proto) for v in value]
    return value


def resolve_config(command: str, path=None, overrides=None) -> dict:
    """Defaults, then the JSON file, then flag overrides; every key type-checked."""
    cfg = defaults(command)
    if path is not None:
        p = Path(path)
        if not p.is_file():
            raise FileNotFoundError(f"config file not found: {p}")
        try:
            data = json.loads(p.read_text())
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config file {p} is not valid JSON: {exc}") from None
        if isinstance(data, dict) and "command" in data and "config" in data:
            data = data["config"]  # a manifest from an earlier run
        if not isinstance(data, dict):
            raise ConfigError("config must be a JSON object")
        for key, value in data.items():
            if key not in cfg:
                raise ConfigError(f"unknown config key {key!r} for command {command!r}")
            cfg[key] = _coerce(key, value, cfg[key])
    for key, value in (overrides or {}).items():
        if value is not None:
            cfg[key] = _coerce(key, value, cfg[key])
    return cfg


def _ou(cfg, L=None) -> OUParams:
    return OUParams(cfg["a"], cfg["r"], cfg["L"] if L is None else L)


def _grid(cfg, L=None) -> Grid:
    return Grid(cfg["L"] if L is None else L, cfg["m"])


def _threads(cfg) -> int:
    return cfg["threads"] or os.cpu_count() or 1


def _fmt(x) -> str:
    if isinstance(x, (int, np.integer)) and not isinstance(x, bool):
        return str(int(x))
    if isinstance(x, str):
        return x
    return f"{float(x):.17g}"


def _write_csv(path, header, rows):
    with open(path, "w") as fh:
        fh.write(",".join(header) + "\n")
        for row in rows:
            fh.write(",".join(_fmt(v) for v in row) + "\n")


def _ensemble_config(cfg, deltas, L=None, N=None, kappa=None, ou=None):
    return ensemble.EnsembleConfig(
        ou=ou or _ou(cfg, L), grid=_grid(cfg, L), deltas=tuple(deltas),
        N=N or cfg["N"], master_seed=cfg["seed"], f_prime0=cfg["f_prime0"], Q=cfg["Q"],
        kappa=cfg["kappa"] if kappa is None else kappa, sampler=cfg["sampler"])


def run_speed(cfg, out: Path) -> dict:
    grid = _grid(cfg)
    kind = cfg["shear"]
    if kind == "zero":
        shear = ShearPath.constant(grid, 0.0)
    elif kind == "constant":
        shear = ShearPath.constant(grid, cfg["shear_value"])
    elif kind == "cos":
        shear = ShearPath.from_function(grid, lambda y: np.cos(2 * np.pi * y / grid.L))
    elif kind == "ou":
        cfg_e = _ensemble_config(cfg, [cfg["delta"]], N=1)
        shear = ensemble.draw_path(cfg_e, cfg["index"])
    else:
        raise ConfigError(f"config key 'shear' must be zero, constant, cos or ou, got {kind!r}")
    res = minimal_speed(shear, cfg["delta"], cfg["f_prime0"],
                        SolverOptions(trace=cfg["trace"]), cfg["kappa"])
    _write_csv(out / "speed.csv",
               ["c_star", "lambda_star", "mu_star", "iterations", "converged", "fallback_used"],
               [[res.c_star, res.lambda_star, res.mu_star, res.iterations,
                 int(res.converged), int(res.fallback_used)]])
    if cfg["trace"]:
        write_trace_csv(res, out / "trace.csv")
    return {"c_star": res.c_star, "lambda_star": res.lambda_star}


def run_ensemble_cmd(cfg, out: Path) -> dict:
    res = ensemble.run_ensemble(_ensemble_config(cfg, cfg["deltas"]), threads=_threads(cfg))
    res.write(out)
    m = res.manifest()
    m.pop("config")
    return m


def run_scaling(cfg, out: Path) -> dict:
    small, large = cfg["small_deltas"], cfg["large_deltas"]
    deltas = sorted(set(small) | set(large))
    table = {}
    extra = {}
    for L in cfg["L_list"]:
        res = ensemble.run_ensemble(_ensemble_config(cfg, deltas, L=L), threads=_threads(cfg))
        reliable = res.n_used >= 2 and np.all(res.mean_M > 0)
        if reliable:
            p_small, p_large = res.fit(small)[0], res.fit(large)[0]
        else:
            p_small = p_large = math.nan
        table[L] = (p_small, p_large)
        extra[f"L={L:g}"] = {"n_used": res.n_used, "n_failed": len(res.failures),
                             "statistically_reliable": bool(res.n_used >= 100)}
        _write_csv(out / f"curve_L{L:g}.csv", ["delta", "mean_speed", "mean_M", "stderr"],
                   zip(res.deltas, res.mean_speed, res.mean_M, res.stderr))
    Ls = cfg["L_list"]
    _write_csv(out / "exponents.csv", ["regime"] + [f"L={L:g}" for L in Ls],
               [["small"] + [table[L][0] for L in Ls], ["large"] + [table[L][1] for L in Ls]])
    return {"exponents": {f"{L:g}": list(table[L]) for L in Ls}, "ensembles": extra}


def run_cov_sweep(cfg, out: Path) -> dict:
    alphas = cfg["alphas"]
    if any(b <= a for a, b in zip(alphas, alphas[1:])):
        raise ConfigError("config key 'alphas' must be strictly increasing")
    d = cfg["delta"]
    rows = []
    for alpha in alphas:
        ou = OUParams.energy_normalized(alpha, cfg["L"])
        res = ensemble.run_ensemble(_ensemble_config(cfg, [d], ou=ou), threads=_threads(cfg))
        enh = cellproblem.ou_enh_closed_form(ou.a, ou.r, ou.L)
        rows.append([alpha, ou.r, res.mean_speed[0], res.mean_M[0], res.stderr[0], enh,
                     cellproblem.predicted_mean_speed(ou, d, cfg["f_prime0"], cfg["kappa"])])
    _write_csv(out / "cov_sweep.csv",
               ["alpha", "r", "mean_speed", "mean_M", "stderr", "enh", "predicted_speed"], rows)
    info = {"delta": d}
    if len(alphas) >= 3:
        mc = int(np.argmax([r[3] for r in rows]))
        cf = int(np.argmax([r[5] for r in rows]))
        info.update(argmax_alpha=alphas[mc], closed_form_argmax_alpha=alphas[cf],
                    interior_maximum=bool(0 < mc < len(alphas) - 1))
    else:
        info["argmax_alpha"] = None  # too few points to locate a maximum
    return info


def run_pdf(cfg, out: Path) -> dict:
    res = ensemble.run_ensemble(_ensemble_config(cfg, cfg["deltas"]), threads=_threads(cfg))
    info = {}
    for d in cfg["deltas"]:
        pdf = res.pdf(d, cfg["Q"])
        pdf.to_csv(out / f"pdf_{d:g}.csv")
        info[f"{d:g}"] = {"integral": pdf.integral(),
                          "half_sample_sup_gap": ensemble.pdf_convergence(res.samples(d), cfg["Q"])}
    return info


def run_bounds(cfg, out: Path) -> dict:
    d, kappa, f0 = cfg["delta"], cfg["kappa"], cfg["f_prime0"]
    cfg_e = _ensemble_config(cfg, [d])
    rows = []
    for i in range(cfg["N"]):
        # the bounds hold for mean-zero shears; b - bbar carries the enhancement
        path = ensemble.draw_path(cfg_e, i).mean_free()
        chi = cellproblem.solve_cell_problem(path.values, path.grid)
        c = minimal_speed(path, d, f0, kappa=kappa).c_star
        g1, g2 = ensemble.upper_bounds(path, chi, d, kappa, f0)
        rows.append([i, c, g1, ensemble.g1_scaled(path, d, kappa, f0), g2])
    _write_csv(out / "bounds.csv", ["i", "c_star", "g1", "g1_scaled", "g2"], rows)
    arr = np.array(rows)
    return {"violations_literal": int(np.sum(arr[:, 1] > np.minimum(arr[:, 2], arr[:, 4]))),
            "violations_scaled": int(np.sum(arr[:, 1] > np.minimum(arr[:, 3], arr[:, 4])))}


def run_pdesim_compare(cfg, out: Path) -> dict:
    from scipy.stats import ks_2samp

    params = pdesim.SimulationParams(kappa=cfg["kappa"], dx=cfg["dx"], dt=cfg["dt"],
                                     t_final=cfg["t_final"])
    ou = _ou(cfg)
    nls = {"kpp": pdesim.Nonlinearity.kpp(), "combustion": pdesim.Nonlinearity.combustion(cfg["theta"]),
           "bistable": pdesim.Nonlinearity.bistable(cfg["mu"])}
    info = {}
    runs = {}
    for offset, name in enumerate(cfg["nonlinearities"]):
        if name not in nls:
            raise ConfigError(f"config key 'nonlinearities' has unknown entry {name!r}")
        # independent shears per nonlinearity so that the two-sample tests apply
        seed = cfg["seed"] + offset
        run = pdesim.run_direct_ensemble(ou, cfg["deltas"], nls[name], cfg["N"], seed, params)
        runs[name] = run
        grid = pdesim.direct_grid(ou.L, params.dx)
        rows = []
        for i in range(cfg["N"]):
            path = ensemble.draw_path(ensemble.EnsembleConfig(ou, grid, (1.0,), 1, seed), i)
            k = cellproblem.solve_cell_problem(path.fluctuation, grid).k
            for j, d in enumerate(run.deltas):
                c_var = (minimal_speed(path, params.kappa * d, 1.0, kappa=params.kappa).c_star
                         if name == "kpp" else math.nan)
                rows.append([i, d, run.b_bar[i], k, run.speeds[i, j], run.normalized[i, j], c_var])
        _write_csv(out / f"direct_{name}.csv",
                   ["i", "delta", "b_bar", "k", "speed", "M_over_c0", "c_star_variational"], rows)
        info[name] = {"seed": seed, "c0_measured": run.c0}
        if len(run.deltas) >= 2 and np.all(run.M.mean(axis=0) > 0):
            info[name]["exponent"] = run.fit()[0]
    names = list(runs)
    for a in range(len(names)):
        for b in range(a + 1, len(names)):
            for j, d in enumerate(runs[names[a]].deltas):
                ks = ks_2samp(runs[names[a]].normalized[:, j], runs[names[b]].normalized[:, j])
                info[f"ks_{names[a]}_{names[b]}_{d:g}"] = {"statistic": float(ks.statistic),
                                                           "pvalue": float(ks.pvalue)}
    return info


DISPATCH = {
    "speed": run_speed,
    "ensemble": run_ensemble_cmd,
    "scaling": run_scaling,
    "cov-sweep": run_cov_sweep,
    "pdf": run_pdf,
    "bounds": run_bounds,
    "pdesim-compare": run_pdesim_compare,
}


def _float_list(text):
    try:
        return [float(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="kppspeed", description="KPP front speeds in random shear flows")
    ap.add_argument("command", choices=COMMANDS)
    ap.add_argument("--config", help="flat JSON config (or a manifest from a previous run)")
    ap.add_argument("--out", default="out", help="output directory")
    ap.add_argument("--seed", type=int, help="master seed")
    ap.add_argument("--n", type=int, dest="N", help="number of realizations")
    ap.add_argument("--threads", type=int, help="worker processes (0 = all CPUs)")
    ap.add_argument("--deltas", type=_float_list, help="comma-separated amplitudes")
    ap.add_argument("--m", type=int, help="grid nodes across the channel")
    return ap


def main(argv=None) -> int:
    ap = build_parser()
    args = ap.parse_args(argv)
    overrides = {"seed": args.seed, "N": args.N, "threads": args.threads,
                 "deltas": args.deltas, "m": args.m}
    try:
        cfg = resolve_config(args.command, args.config, overrides)
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2

    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    stage = Path(tempfile.mkdtemp(prefix=".stage-", dir=out.parent))
    try:
        info = DISPATCH[args.command](cfg, stage)
        manifest = {"command": args.command, "config": cfg, "master_seed": cfg["seed"],
                    "result": info,
                    "statistically_reliable": args.command == "speed" or cfg["N"] >= 100}
        with open(stage / "manifest.json", "w") as fh:
            json.dump(manifest, fh, indent=2, sort_keys=True, default=_json_default)
        out.mkdir(parents=True, exist_ok=True)
        for f in sorted(stage.iterdir()):
            shutil.move(str(f), str(out / f.name))
    except (ConfigError, KPPError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    finally:
        shutil.rmtree(stage, ignore_errors=True)
    return 0


def _json_default(o):
    if isinstance(o, np.generic):
        return o.item()
    if isinstance(o, np.ndarray):
        return o.tolist()
    raise TypeError(f"not JSON serializable: {type(o).__name__}")


if __name__ == "__main__":
    sys.exit(main())
