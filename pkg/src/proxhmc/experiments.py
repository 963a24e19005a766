"""The three benchmark experiments: configuration, seeding, running, emitting.

Everything here is deterministic given the configuration: target data,
tuning pilots and every chain draw their randomness from
``SeedSequence([seed, method_index, stream])``.
"""
from __future__ import annotations

import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Optional

import numpy as np

from . import diagnostics, io, samplers, targets, tuning
from .samplers import Fixed, SamplerConfig, UniformRandom

__all__ = [
    "EXPERIMENTS",
    "METHODS",
    "ExperimentConfig",
    "ExperimentError",
    "MethodResult",
    "build_target",
    "start_point",
    "method_config",
    "run_experiment",
    "toy_trajectories",
    "energy_grid",
    "default_trajectory_starts",
    "code_version",
]

EXPERIMENTS = ("toy", "logistic", "lowrank")
METHODS = ("phmc", "nshmc", "pmala", "mymala", "rwm")
_TUNE_STREAM = 1 << 20


class ExperimentError(RuntimeError):
    """A failure inside an experiment, with experiment/method/replication context."""


def code_version():
    from . import __version__
    return __version__


# per-experiment defaults; ``None`` step sizes are tuned
_DEFAULTS = {
    "toy": {"lam_g": 0.01, "ns_lam": 1.0, "leapfrog": 10, "eps": {}},
    "logistic": {"lam_g": 0.01, "ns_lam": 1.0, "leapfrog": 10,
                 "eps": {"phmc": 0.00192, "nshmc": 0.00014}},
    "lowrank": {"lam_g": 1e-4, "ns_lam": 1.0, "leapfrog": 10, "eps": {}},
}


@dataclass
class ExperimentConfig:
    """Everything needed to reproduce one experiment run.

    ``eps`` overrides the leapfrog step of both HMC kernels and ``scale``
    the proposal scale of the others; unset values fall back to the
    experiment defaults and are tuned when no default exists. ``lam`` is
    ``lam_g`` (p-HMC, my-MALA) and ``ns_lam`` the ns-HMC ``lam``.
    ``leapfrog`` is a step count, or ``-L`` for a uniformly random count on
    ``{1..L}``.
    """

    experiment: str = "toy"
    methods: tuple = METHODS
    n_iterations: int = 10_000
    reps: int = 10
    seed: int = 0
    eps: Optional[float] = None
    scale: Optional[float] = None
    leapfrog: Optional[int] = None
    lam: Optional[float] = None
    ns_lam: Optional[float] = None
    out: Optional[str] = None
    data: Optional[str] = None
    threads: Optional[int] = None
    alpha: Optional[float] = None
    sigma2: float = 0.01
    size: int = 64
    block: int = 8
    toy_n: int = 100
    data_seed: Optional[int] = None
    n_pilot: int = 200
    discard: float = 0.0
    save_traces: bool = True
    keep_traces: bool = False

    def __post_init__(self):
        if self.experiment not in EXPERIMENTS:
            raise ValueError(f"unknown experiment {self.experiment!r}; "
                             f"choose from {', '.join(EXPERIMENTS)}")
        if isinstance(self.methods, str):
            self.methods = tuple(m.strip() for m in self.methods.split(",") if m.strip())
        self.methods = tuple(self.methods)
        if not self.methods:
            raise ValueError("at least one method is required")
        bad = [m for m in self.methods if m not in METHODS]
        if bad:
            raise ValueError(f"unknown method(s) {', '.join(bad)}; choose from {', '.join(METHODS)}")
        if self.n_iterations < 0:
            raise ValueError("iteration count must be nonnegative")
        if self.reps < 1:
            raise ValueError("replication count must be >= 1")
        if self.experiment == "logistic" and self.data is not None and not Path(self.data).is_file():
            raise FileNotFoundError(f"data file not found: {self.data}")

    @property
    def lam_g(self):
        return _DEFAULTS[self.experiment]["lam_g"] if self.lam is None else float(self.lam)

    @property
    def ns_lambda(self):
        return _DEFAULTS[self.experiment]["ns_lam"] if self.ns_lam is None else float(self.ns_lam)

    def schedule(self):
        n = _DEFAULTS[self.experiment]["leapfrog"] if self.leapfrog is None else int(self.leapfrog)
        if n == 0:
            raise ValueError("leapfrog steps must be nonzero")
        return Fixed(n) if n > 0 else UniformRandom(-n)

    def to_dict(self):
        d = asdict(self)
        d["methods"] = list(self.methods)
        d["lam_g"] = self.lam_g
        d["ns_lambda"] = self.ns_lambda
        return d


def _seed(cfg_seed, method, stream):
    ss = np.random.SeedSequence([int(cfg_seed) & 0xFFFFFFFFFFFFFFFF, METHODS.index(method), stream])
    return int(ss.generate_state(1, dtype=np.uint64)[0])


def build_target(cfg):
    """Return ``(potential, extras)``; ``extras`` carries ``Y`` / ``X_true`` for lowrank."""
    data_seed = cfg.seed if cfg.data_seed is None else cfg.data_seed
    if cfg.experiment == "toy":
        return targets.toy_target(seed=data_seed, n=cfg.toy_n), {}
    if cfg.experiment == "logistic":
        data = targets.load_pima(cfg.data, alpha=1.0 if cfg.alpha is None else cfg.alpha)
        return targets.logistic_target(data), {"data": data}
    alpha = 1.15 / cfg.sigma2 if cfg.alpha is None else cfg.alpha
    X, Y = targets.noisy_checkerboard(cfg.size, cfg.block, cfg.sigma2, seed=data_seed)
    return targets.matrix_target(Y, cfg.sigma2, alpha, X_true=X), {"X_true": X, "Y": Y}


def start_point(cfg, potential, extras):
    """MAP for toy and logistic; the observation ``Y`` for the low-rank target.

    The low-rank MAP is exactly low rank, where the nuclear norm has a kink in
    every direction orthogonal to its support; chains started there face a
    first-order energy barrier, so the observation (full rank, close to the
    bulk) is used instead.
    """
    if cfg.experiment == "lowrank":
        return extras["Y"].ravel().copy()
    return tuning.find_map(potential).x


def method_config(cfg, method, potential, x_start):
    """Sampler config for ``method``, tuning the step when none is given.

    Returns ``(sampler_config, x_warm, tuning_history)``. ``x_warm`` is where
    the tuning pilots ended (``x_start`` if nothing was tuned).
    """
    defaults = _DEFAULTS[cfg.experiment]
    lam = cfg.ns_lambda if method == "nshmc" else cfg.lam_g
    base = SamplerConfig(leapfrog=cfg.schedule(), lam=lam, n_iterations=cfg.n_iterations,
                         seed=_seed(cfg.seed, method, 0))
    if method in samplers.HMC_KERNELS:
        step = cfg.eps if cfg.eps is not None else defaults["eps"].get(method)
        attr = "step_size"
    else:
        step = cfg.scale
        attr = "proposal_scale"
    if step is not None:
        return replace(base, **{attr: float(step)}), np.asarray(x_start, dtype=float), []
    initial = _initial_step(potential, method)
    tcfg = replace(base, seed=_seed(cfg.seed, method, _TUNE_STREAM))
    tuned, x_warm, history = samplers.tune_step_size(method, x_start, potential, tcfg,
                                                     initial=initial, n_pilot=cfg.n_pilot)
    return replace(base, **{attr: getattr(tuned, attr)}), x_warm, history


def _initial_step(potential, method):
    # a curvature-based first guess keeps the coarse pass short
    c = potential.f_lipschitz or 1.0
    d = potential.dimension
    if method in samplers.HMC_KERNELS:
        return 1.0 / math.sqrt(c) / d ** 0.25
    if method == "rwm":
        return 2.38 / math.sqrt(c * d)
    return 1.0 / c / d ** (1.0 / 3.0)


@dataclass
class MethodResult:
    method: str
    config: SamplerConfig
    reports: list
    acceptance: list
    wall_times: list
    means: list
    tuning_history: list = field(default_factory=list)
    traces: list = field(default_factory=list)
    intervals: Optional[diagnostics.IntervalReport] = None
    acf: Optional[diagnostics.AcfCurve] = None


def _chain(args):
    cfg, method, rep, scfg, x_start, potential = args
    if potential is None:
        potential, _ = build_target(cfg)
    scfg = replace(scfg, seed=_seed(cfg.seed, method, rep + 1))
    try:
        trace = samplers.run_chain(method, x_start, potential, scfg)
        report = diagnostics.ess(trace, discard=cfg.discard) if trace.n >= 100 else None
    except Exception as exc:  # surface context, keep the original as cause
        raise ExperimentError(f"{cfg.experiment}/{method}/replication {rep}: {exc}") from exc
    if cfg.out is not None and cfg.save_traces:
        stem = Path(cfg.out) / "traces" / f"{method}_rep{rep:03d}"
        io.save_trace(stem, trace, {"experiment": cfg.to_dict(), "replication": rep,
                                    "seed": scfg.seed, "code_version": code_version()})
    return trace, report


def _workers(cfg):
    if cfg.threads is not None:
        return max(1, int(cfg.threads))
    return max(1, os.cpu_count() or 1)


def run_experiment(cfg, log=None):
    """Run every method and replication of ``cfg`` and emit the outputs.

    Returns ``{method: MethodResult}`` in the order of ``cfg.methods``.
    Replications fan out over a process pool when more than one worker is
    requested; results are collected by replication index.
    """
    log = log or (lambda msg: None)
    potential, extras = build_target(cfg)
    x0 = start_point(cfg, potential, extras)
    out = Path(cfg.out) if cfg.out is not None else None
    if out is not None:
        (out / "traces").mkdir(parents=True, exist_ok=True)
    results = {}
    workers = _workers(cfg)
    for method in cfg.methods:
        try:
            scfg, x_warm, history = method_config(cfg, method, potential, x0)
        except Exception as exc:
            raise ExperimentError(f"{cfg.experiment}/{method}/tuning: {exc}") from exc
        step = scfg.step_size if method in samplers.HMC_KERNELS else scfg.proposal_scale
        log(f"{cfg.experiment}/{method}: step {step:.6g}, {cfg.reps} replication(s)")
        jobs = [(cfg, method, r, scfg, x_warm, None if workers > 1 else potential)
                for r in range(cfg.reps)]
        if workers > 1 and cfg.reps > 1:
            with ProcessPoolExecutor(max_workers=min(workers, cfg.reps)) as pool:
                outcomes = list(pool.map(_chain, jobs))
        else:
            outcomes = [_chain(j) for j in jobs]
        res = MethodResult(method=method, config=scfg, reports=[], acceptance=[],
                           wall_times=[], means=[], tuning_history=history)
        for r, (trace, report) in enumerate(outcomes):
            res.reports.append(report)
            res.acceptance.append(trace.acceptance_rate)
            res.wall_times.append(trace.wall_time)
            res.means.append(trace.samples.mean(axis=0) if trace.n else x_warm.copy())
            if r == 0 and trace.n >= 100:
                res.intervals = diagnostics.credible_intervals(trace, discard=cfg.discard)
                res.acf = diagnostics.acf(trace, max_lag=min(100, trace.n - 1),
                                          discard=cfg.discard)
            if cfg.keep_traces:
                res.traces.append(trace)
        results[method] = res
        del outcomes
    if out is not None:
        emit_run_outputs(cfg, results, potential, extras)
    return results


def _with_sidecar(path, meta):
    io.write_sidecar(Path(str(path) + ".json"), meta)


def emit_run_outputs(cfg, results, potential, extras):
    out = Path(cfg.out)
    meta = {"experiment": cfg.to_dict(), "seed": cfg.seed, "code_version": code_version(),
            "target": {k: v for k, v in potential.metadata.items() if k not in ("Y", "X_true", "y")},
            "methods": {m: {"sampler": r.config.to_dict(),
                            "acceptance": r.acceptance,
                            "wall_time": r.wall_times}
                        for m, r in results.items()}}
    complete = {m: r for m, r in results.items() if all(rep is not None for rep in r.reports)}
    if complete:
        rows = diagnostics.summarize({m: r.reports for m, r in complete.items()})
        diagnostics.write_summary_csv(out / "summary_ess_per_sec.csv", rows)
        _with_sidecar(out / "summary_ess_per_sec.csv", meta)
        ess_rows = []
        for m, r in complete.items():
            avg = np.mean([rep.ess for rep in r.reports], axis=0)
            ess_rows.append((m, float(avg.min()), float(np.median(avg)), float(avg.max())))
        diagnostics.write_summary_csv(out / "summary_ess.csv", ess_rows)
        _with_sidecar(out / "summary_ess.csv", meta)
    for m, r in results.items():
        if r.acf is not None:
            d = r.acf.values.shape[1]
            comps = range(d) if d <= 16 else np.linspace(0, d - 1, 16).astype(int)
            diagnostics.write_acf_csv(out / f"acf_{m}.csv", r.acf, comps)
            _with_sidecar(out / f"acf_{m}.csv", meta)
        mean = np.mean(r.means, axis=0)
        if potential.shape is not None:
            io.write_matrix_csv(out / f"posterior_mean_{m}.csv", mean.reshape(potential.shape))
            _with_sidecar(out / f"posterior_mean_{m}.csv", meta)
            if r.intervals is not None:
                diagnostics.write_mask_csv(out / f"widest_mask_{m}.csv",
                                           r.intervals.mask(potential.shape))
                _with_sidecar(out / f"widest_mask_{m}.csv", meta)
        else:
            io.write_matrix_csv(out / f"posterior_mean_{m}.csv", mean[None, :])
            _with_sidecar(out / f"posterior_mean_{m}.csv", meta)
    if "X_true" in extras:
        io.write_matrix(out / "truth.bin", extras["X_true"])
        io.write_matrix(out / "observation.bin", extras["Y"])
        _with_sidecar(out / "truth.bin", meta)
        _with_sidecar(out / "observation.bin", meta)
    io.write_sidecar(out / "run.json", meta)


# ------------------------------------------------------------ trajectories

def default_trajectory_starts(potential):
    """Two phase-space starts near the mode: displaced at rest, and kicked at the mode."""
    x_map = float(tuning.find_map(potential).x[0])
    return [(x_map + 0.25, 0.0), (x_map, 2.0)]


def toy_trajectories(potential, starts, eps=0.01, n_steps=20, lam_gs=(1e-3, 1e-2, 1e-1, 1.0),
                     ns_lams=(1e-3, 1e-2, 1e-1, 1.0)):
    """Deterministic leapfrog paths of p-HMC and ns-HMC on a scalar target.

    Returns a list of dicts with keys ``method, lam, start, step, x, p, H,
    dH``; every trajectory contributes ``n_steps + 1`` rows (step 0 is the
    start). ``dH`` is ``H(step) - H(start)`` with the exact potential.
    """
    if potential.dimension != 1:
        raise ValueError(f"trajectories need a scalar target, {potential.name!r} has "
                         f"dimension {potential.dimension}")
    rows = []
    plans = [("phmc", lam, lambda x, lam=lam: potential.smoothed_gradient(x, lam)) for lam in lam_gs]
    if potential.full_prox is not None:
        plans += [("nshmc", lam, lambda x, lam=lam: potential.full_envelope_gradient(x, lam))
                  for lam in ns_lams]
    for s, (x0, p0) in enumerate(starts):
        state = samplers.PhaseState(np.array([x0], dtype=float), np.array([p0], dtype=float))
        h0 = samplers.hamiltonian(state.x, state.p, potential)
        for method, lam, grad in plans:
            path = samplers.leapfrog(state, grad, eps, n_steps)
            for k, ps in enumerate(path):
                h = samplers.hamiltonian(ps.x, ps.p, potential)
                rows.append({"method": method, "lam": lam, "start": s, "step": k,
                             "x": float(ps.x[0]), "p": float(ps.p[0]), "H": h, "dH": h - h0})
    return rows


def energy_grid(potential, x_range, p_range, n=101):
    """Rows ``(x, p, H, exp(-H))`` on an ``n x n`` grid for contour plots."""
    xs = np.linspace(*x_range, n)
    ps = np.linspace(*p_range, n)
    u = np.array([potential.value(np.array([x])) for x in xs])
    H = u[:, None] + 0.5 * ps[None, :] ** 2
    X, P = np.meshgrid(xs, ps, indexing="ij")
    return np.column_stack([X.ravel(), P.ravel(), H.ravel(), np.exp(-H).ravel()])
