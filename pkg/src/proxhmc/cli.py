"""Command-line entry point: ``proxhmc {run,tune,trajectory,audit}``.

Settings come from, in increasing priority: built-in defaults, a flat
TOML file given with ``--config``, and command-line flags. Every output
file gets a JSON sidecar with the full settings, seed and code version.
"""
from __future__ import annotations

import argparse
import csv
import math
import sys
from pathlib import Path

import numpy as np

from . import experiments as ex
from . import io, tuning

try:  # Python >= 3.11
    import tomllib
except ModuleNotFoundError:  # pragma: no cover
    import tomli as tomllib

# flags shared by every subcommand: (dest, type, help)
_COMMON = [
    ("experiment", str, "toy, logistic or lowrank"),
    ("seed", int, "master seed (data, tuning and chains)"),
    ("out", str, "output directory"),
    ("data", str, "Pima CSV for the logistic experiment (default: bundled copy)"),
    ("alpha", float, "prior scale (logistic default 1.0, lowrank default 1.15/sigma2)"),
    ("sigma2", float, "noise variance of the lowrank experiment"),
]
_RUN = [
    ("methods", str, "comma-separated subset of phmc,nshmc,pmala,mymala,rwm"),
    ("iters", int, "iterations per chain"),
    ("reps", int, "replications per method"),
    ("eps", float, "leapfrog step of the HMC kernels (default: reference value or tuned)"),
    ("scale", float, "proposal scale of pmala/mymala/rwm (default: tuned)"),
    ("leapfrog", int, "leapfrog steps; negative L draws uniformly from 1..L"),
    ("lambda", float, "lambda_g of p-HMC and my-MALA"),
    ("ns-lambda", float, "lambda of ns-HMC"),
    ("threads", int, "worker processes for replications (default: all cores)"),
    ("discard", float, "burn-in fraction dropped before diagnostics"),
]
_TUNE = [
    ("grid", str, "lambda_g grid: 'low:high:n' (log-spaced) or a comma list"),
    ("threshold", float, "largest acceptable relative energy error"),
    ("eps", float, "probe leapfrog step"),
    ("leapfrog", int, "probe leapfrog steps"),
]
_TRAJ = [
    ("eps", float, "leapfrog step"),
    ("leapfrog", int, "leapfrog steps per trajectory"),
    ("lambda", str, "comma list of lambda_g values for p-HMC"),
    ("ns-lambda", str, "comma list of lambda values for ns-HMC"),
    ("starts", str, "starting states 'x:p,x:p' (default: two states near the mode)"),
    ("grid-size", int, "points per axis of the contour grid"),
]
_AUDIT = [
    ("lambda", float, "lambda_g used for the envelope gradient"),
    ("rays", int, "number of random directions"),
    ("max-radius", float, "largest probed radius"),
]

_DEFAULTS = {
    "experiment": "toy", "seed": 0, "methods": ",".join(ex.METHODS), "iters": 10_000,
    "reps": 10, "threshold": tuning.DEFAULT_THRESHOLD, "rays": 32, "max-radius": 1e4,
    "grid-size": 101, "discard": 0.0, "sigma2": 0.01,
}
_TRAJ_DEFAULTS = {"eps": 0.01, "leapfrog": 20, "lambda": "0.001,0.01,0.1,1",
                  "ns-lambda": "0.001,0.01,0.1,1"}
_TUNE_DEFAULTS = {"eps": 1e-7, "leapfrog": 1}


class UsageError(Exception):
    pass


def _add(parser, specs):
    for name, typ, text in specs:
        parser.add_argument(f"--{name}", dest=name.replace("-", "_"), type=typ, default=None,
                            help=text)


def build_parser():
    p = argparse.ArgumentParser(prog="proxhmc", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=f"%(prog)s {ex.code_version()}")
    sub = p.add_subparsers(dest="command", required=True)
    specs = {"run": _RUN, "tune": _TUNE, "trajectory": _TRAJ, "audit": _AUDIT}
    helps = {"run": "run samplers and write traces plus ESS summaries",
             "tune": "sweep lambda_g and report the recommended value",
             "trajectory": "write leapfrog paths and an energy grid for the toy target",
             "audit": "probe the tail conditions on grad f and grad g^lambda"}
    for name, extra in specs.items():
        sp = sub.add_parser(name, help=helps[name])
        sp.add_argument("--config", type=str, default=None, help="flat TOML settings file")
        _add(sp, _COMMON)
        _add(sp, extra)
    return p


def _settings(args):
    """Merge defaults, the config file and explicit flags into one dict."""
    merged = dict(_DEFAULTS)
    if args.command == "trajectory":
        merged.update(_TRAJ_DEFAULTS)
    if args.command == "tune":
        merged.update(_TUNE_DEFAULTS)
    if args.config:
        path = Path(args.config)
        if not path.is_file():
            raise UsageError(f"config file not found: {path}")
        try:
            with open(path, "rb") as fh:
                conf = tomllib.load(fh)
        except tomllib.TOMLDecodeError as exc:
            raise UsageError(f"{path}: {exc}") from None
        for key, value in conf.items():
            if isinstance(value, dict):
                raise UsageError(f"{path}: config must be flat, found table [{key}]")
            merged[key.replace("_", "-")] = value
    for key, value in vars(args).items():
        if key in ("command", "config") or value is None:
            continue
        merged[key.replace("_", "-")] = value
    return merged


def _experiment_config(s, **extra):
    try:
        return ex.ExperimentConfig(
            experiment=s["experiment"],
            methods=s.get("methods", ",".join(ex.METHODS)),
            n_iterations=int(s.get("iters", 10_000)),
            reps=int(s.get("reps", 10)),
            seed=int(s["seed"]),
            eps=s.get("eps"),
            scale=s.get("scale"),
            leapfrog=s.get("leapfrog"),
            lam=s.get("lambda"),
            ns_lam=s.get("ns-lambda"),
            out=s.get("out"),
            data=s.get("data"),
            threads=s.get("threads"),
            alpha=s.get("alpha"),
            sigma2=float(s.get("sigma2", 0.01)),
            discard=float(s.get("discard", 0.0)),
            **extra,
        )
    except FileNotFoundError:
        raise
    except (TypeError, ValueError) as exc:
        raise UsageError(str(exc)) from None


def _out_dir(s, command):
    out = Path(s.get("out") or Path("proxhmc-out") / f"{command}-{s['experiment']}")
    out.mkdir(parents=True, exist_ok=True)
    return out


def _meta(s, command):
    return {"command": command, "settings": s, "seed": s["seed"],
            "code_version": ex.code_version()}


def _parse_floats(text, what):
    try:
        return [float(v) for v in str(text).split(",") if v.strip()]
    except ValueError:
        raise UsageError(f"cannot parse {what} {text!r} as a comma list of numbers") from None


def _parse_grid(text):
    text = str(text)
    if ":" in text:
        parts = text.split(":")
        if len(parts) != 3:
            raise UsageError(f"grid {text!r} must look like low:high:n")
        try:
            low, high, n = float(parts[0]), float(parts[1]), int(parts[2])
        except ValueError:
            raise UsageError(f"cannot parse grid {text!r}") from None
        if not (0 < low < high) or n < 1:
            raise UsageError(f"grid {text!r} needs 0 < low < high and n >= 1")
        return tuning.default_lambda_grid(n, low, high)
    return np.array(_parse_floats(text, "grid"))


def _write_csv(path, header, rows, meta):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        w.writerows(rows)
    io.write_sidecar(Path(str(path) + ".json"), meta)


# ---------------------------------------------------------------- commands

def cmd_run(s):
    out = _out_dir(s, "run")
    s = dict(s, out=str(out))
    cfg = _experiment_config(s)
    results = ex.run_experiment(cfg, log=lambda msg: print(msg, flush=True))
    print(f"{'method':8s} {'accept':>7s} {'min':>12s} {'median':>12s} {'max':>12s}  (ESS/sec)")
    for m, r in results.items():
        reps = [rep for rep in r.reports if rep is not None]
        if not reps:
            print(f"{m:8s} {np.mean(r.acceptance):7.3f}  (too few iterations for ESS)")
            continue
        avg = np.mean([rep.ess_per_second for rep in reps], axis=0)
        print(f"{m:8s} {np.mean(r.acceptance):7.3f} {avg.min():12.4g} "
              f"{np.median(avg):12.4g} {avg.max():12.4g}")
    print(f"outputs written to {out}")
    return 0


_REFERENCE_LAMBDA = {"logistic": 0.01, "lowrank": 1e-4}


def cmd_tune(s):
    out = _out_dir(s, "tune")
    cfg = _experiment_config(s)
    potential, _ = ex.build_target(cfg)
    grid = _parse_grid(s["grid"]) if s.get("grid") is not None else None
    try:
        res = tuning.lambda_sweep(potential, grid=grid, eps=float(s["eps"]),
                                  n_steps=int(s["leapfrog"]), seed=int(s["seed"]),
                                  threshold=float(s["threshold"]))
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    meta = _meta(s, "tune")
    meta.update({"H0": res.h0, "denominator": res.denominator, "shifted": res.shifted,
                 "chosen": res.chosen, "fallback": res.fallback, "p0": res.p0 if res.p0.size <= 64
                 else None})
    tuning.write_sweep_csv(out / "lambda_sweep.csv", res)
    io.write_sidecar(out / "lambda_sweep.csv.json", meta)
    if res.shifted:
        print(f"note: |H(x0, p0)| = {abs(res.h0):.3g} < 1, relative errors use denominator 1")
    line = f"chosen lambda_g = {res.chosen:.6g}"
    if res.fallback:
        line += f" (no grid value reached R <= {res.threshold:g}; smallest grid value used)"
    ref = _REFERENCE_LAMBDA.get(cfg.experiment)
    if ref is not None:
        line += f"; reference value used in the experiments = {ref:g}"
    print(line)
    print(f"sweep written to {out / 'lambda_sweep.csv'}")
    return 0


def _parse_starts(text):
    starts = []
    for item in str(text).split(","):
        try:
            x, p = item.split(":")
            starts.append((float(x), float(p)))
        except ValueError:
            raise UsageError(f"cannot parse start {item!r}; expected x:p") from None
    return starts


def cmd_trajectory(s):
    cfg = _experiment_config(s)
    potential, _ = ex.build_target(cfg)
    if potential.dimension != 1:
        raise UsageError(f"trajectory needs a scalar target; {cfg.experiment!r} has "
                         f"dimension {potential.dimension}")
    out = _out_dir(s, "trajectory")
    starts = (_parse_starts(s["starts"]) if s.get("starts")
              else ex.default_trajectory_starts(potential))
    rows = ex.toy_trajectories(potential, starts, eps=float(s["eps"]),
                               n_steps=int(s["leapfrog"]),
                               lam_gs=_parse_floats(s["lambda"], "lambda list"),
                               ns_lams=_parse_floats(s["ns-lambda"], "ns-lambda list"))
    meta = _meta(s, "trajectory")
    meta["starts"] = starts
    keys = ["method", "lam", "start", "step", "x", "p", "H", "dH"]
    _write_csv(out / "trajectory.csv", keys,
               [[r[k] if isinstance(r[k], (str, int)) else repr(float(r[k])) for k in keys]
                for r in rows], meta)
    xs = [r["x"] for r in rows] + [x for x, _ in starts]
    ps = [r["p"] for r in rows] + [p for _, p in starts]
    pad = lambda lo, hi: (lo - 0.25 * (hi - lo + 1e-3), hi + 0.25 * (hi - lo + 1e-3))
    grid = ex.energy_grid(potential, pad(min(xs), max(xs)), pad(min(ps), max(ps)),
                          int(s["grid-size"]))
    _write_csv(out / "contour.csv", ["x", "p", "H", "exp_neg_H"],
               [[repr(float(v)) for v in row] for row in grid], meta)
    print(f"{len(rows)} trajectory rows and {grid.shape[0]} grid points written to {out}")
    return 0


def cmd_audit(s):
    out = _out_dir(s, "audit")
    cfg = _experiment_config(s)
    potential, _ = ex.build_target(cfg)
    lam = cfg.lam_g
    radii = np.logspace(0, math.log10(float(s["max-radius"])), 41)
    try:
        audit = tuning.assumption_audit(potential, lam, n_rays=int(s["rays"]), radii=radii,
                                        seed=int(s["seed"]))
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    meta = _meta(s, "audit")
    meta.update({"lambda_g": lam, "skipped_rays": audit.skipped,
                 "gradient_bound": audit.gradient_bound, "bound_holds": audit.bound_holds})
    _write_csv(out / "audit_table.csv", ["condition", "statement", "verdict"], audit.table(), meta)
    tuning.write_audit_csv(out / "audit_rays.csv", audit)
    io.write_sidecar(out / "audit_rays.csv.json", meta)
    for cond, text, verdict in audit.table():
        print(f"({cond}) {verdict:4s}  {text}")
    peak = float(np.nanmax(audit.grad_g_norm))
    print(f"max |grad g^lambda| = {peak:.6g} <= bound {audit.gradient_bound:.6g}: "
          f"{'yes' if audit.bound_holds else 'NO'}")
    if audit.skipped:
        print(f"skipped {len(audit.skipped)} ray(s) where U is infinite")
    return 0


_COMMANDS = {"run": cmd_run, "tune": cmd_tune, "trajectory": cmd_trajectory, "audit": cmd_audit}


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        settings = _settings(args)
        return _COMMANDS[args.command](settings)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except ex.ExperimentError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except (ValueError, RuntimeError) as exc:
        print(f"error ({args.command}, experiment {getattr(args, 'experiment', None)}): {exc}",
              file=sys.stderr)
        return 1


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
