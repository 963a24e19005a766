"""Choosing the smoothing parameter ``lam_g`` and auditing tail conditions.

The sweep measures how badly one tiny leapfrog step driven by
``grad f + grad g^lam`` fails to conserve the exact Hamiltonian, starting
from a minimiser of ``U``. The relative error

    R(lam) = |H(x0, p0) - H(x1, p1)| / max(|H(x0, p0)|, 1)

grows with ``lam``; the recommended ``lam_g`` is the largest grid value
with ``R`` under a threshold.
"""
from __future__ import annotations

import csv
import math
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .prox import FistaSettings, StepSizeRule, fista_minimize
from .samplers import hamiltonian

__all__ = [
    "LambdaSweepResult",
    "AssumptionAudit",
    "find_map",
    "default_lambda_grid",
    "lambda_sweep",
    "choose_lambda",
    "assumption_audit",
    "envelope_gradient_bound",
    "write_sweep_csv",
    "write_audit_csv",
]

DEFAULT_THRESHOLD = 1e-3


def find_map(potential, x0=None, tolerance=1e-10, max_iterations=10_000):
    """Minimise ``U = f + g`` by FISTA with adaptive restart.

    Uses the fixed step ``1 / C_f`` when the target knows ``C_f`` and
    backtracking otherwise. Starts from zero unless ``x0`` is given.
    """
    rule = (StepSizeRule.FIXED_FROM_LIPSCHITZ if potential.f_lipschitz
            else StepSizeRule.BACKTRACKING)
    settings = FistaSettings(max_iterations=max_iterations, tolerance=tolerance,
                             step_size_rule=rule)
    start = np.zeros(potential.dimension) if x0 is None else np.asarray(x0, dtype=float)
    return fista_minimize(potential.f_value_grad, potential.g_prox, start,
                          potential.f_lipschitz, settings,
                          nonsmooth_value=potential.g_value, restart=True)


def default_lambda_grid(n=40, low=1e-6, high=10.0):
    return np.logspace(math.log10(low), math.log10(high), n)


@dataclass
class LambdaSweepResult:
    grid: np.ndarray
    r_values: np.ndarray
    chosen: float
    threshold: float
    eps: float
    n_steps: int
    x0: np.ndarray
    p0: np.ndarray
    h0: float
    denominator: float
    seed: int
    fallback: bool = False  # no grid value met the threshold

    @property
    def shifted(self):
        """True when ``|H(x0, p0)| < 1`` and the denominator was floored at 1."""
        return abs(self.h0) < 1.0


def choose_lambda(result, threshold=None):
    """Largest grid value whose ``R`` is at most ``threshold``.

    Returns ``(lam, fallback)``; with nothing under the threshold it is the
    smallest grid value, ``fallback`` is True and a warning is issued.
    """
    grid = np.asarray(result.grid if hasattr(result, "grid") else result[0], dtype=float)
    r = np.asarray(result.r_values if hasattr(result, "r_values") else result[1], dtype=float)
    if grid.size == 0:
        raise ValueError("lambda grid is empty")
    if threshold is None:
        threshold = getattr(result, "threshold", DEFAULT_THRESHOLD)
    ok = np.flatnonzero(r <= threshold)
    if ok.size == 0:
        warnings.warn(f"no lambda_g meets R <= {threshold:g}; using the smallest grid value",
                      RuntimeWarning, stacklevel=2)
        return float(grid.min()), True
    return float(grid[ok].max()), False


def lambda_sweep(potential, x0=None, grid=None, eps=1e-7, n_steps=1, seed=0,
                 threshold=DEFAULT_THRESHOLD, mass_diagonal=None):
    """Relative Hamiltonian error of a p-HMC trajectory for each ``lam_g``.

    Parameters
    ----------
    potential : SplitPotential
    x0 : array, optional
        Start of the probe trajectory; defaults to the MAP from :func:`find_map`.
    grid : array, optional
        Strictly increasing ``lam_g`` values; default 40 log-spaced points on
        ``[1e-6, 10]``.
    eps, n_steps : float, int
        Leapfrog step and number of steps of the probe.
    seed : int
        Seed for the single momentum draw ``p0 ~ N(0, M)`` shared by all grid
        points.
    threshold : float
        Passed to :func:`choose_lambda`.
    """
    grid = default_lambda_grid() if grid is None else np.atleast_1d(np.asarray(grid, dtype=float))
    if grid.size == 0:
        raise ValueError("lambda grid is empty")
    if np.any(grid <= 0) or np.any(np.diff(grid) <= 0):
        raise ValueError("lambda grid must be positive and strictly increasing")
    if not eps > 0 or n_steps < 1:
        raise ValueError("probe needs eps > 0 and at least one step")
    d = potential.dimension
    if x0 is None:
        x0 = find_map(potential).x
    x0 = np.asarray(x0, dtype=float).ravel()
    mass = np.ones(d) if mass_diagonal is None else np.asarray(mass_diagonal, dtype=float)
    rng = np.random.default_rng(seed)
    p0 = rng.standard_normal(d) * np.sqrt(mass)
    h0 = hamiltonian(x0, p0, potential, mass)
    if not math.isfinite(h0):
        raise ValueError("probe start has infinite energy")
    denom = max(abs(h0), 1.0)
    inv_mass = 1.0 / mass
    r = np.empty(grid.size)
    for j, lam in enumerate(grid):
        x, p = x0, p0
        g = potential.smoothed_gradient(x, lam)
        for _ in range(n_steps):
            p = p - 0.5 * eps * g
            x = x + eps * inv_mass * p
            g = potential.smoothed_gradient(x, lam)
            p = p - 0.5 * eps * g
        h1 = hamiltonian(x, p, potential, mass)
        r[j] = abs(h0 - h1) / denom if math.isfinite(h1) else math.inf
    res = LambdaSweepResult(grid=grid, r_values=r, chosen=math.nan, threshold=threshold,
                            eps=eps, n_steps=n_steps, x0=x0, p0=p0, h0=h0,
                            denominator=denom, seed=seed)
    res.chosen, res.fallback = choose_lambda(res, threshold)
    return res


def write_sweep_csv(path, result):
    with open(Path(path), "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["lambda_g", "R"])
        for lam, r in zip(result.grid, result.r_values):
            w.writerow([repr(float(lam)), repr(float(r))])


# ------------------------------------------------------------------ audit

CONDITIONS = ("a", "b", "c", "d")
_DESCRIPTIONS = {
    "a": "|grad f| grows without bound",
    "b": "|grad f| / |x| stays bounded",
    "c": "<grad f, x> / (|grad f| |x|) stays positive",
    "d": "|grad g^lam| / |grad f| settles below one",
}


@dataclass
class AssumptionAudit:
    """Per-ray statistics along ``x = r u`` and a pass/warn verdict per condition.

    Statistic arrays have shape ``(n_rays, n_radii)``; rows of skipped rays
    are NaN.
    """

    directions: np.ndarray
    radii: np.ndarray
    grad_f_norm: np.ndarray
    growth_ratio: np.ndarray  # |grad f| / |x|
    cosine: np.ndarray        # <grad f, x> / (|grad f| |x|)
    smoothing_ratio: np.ndarray  # |grad g^lam| / |grad f|
    grad_g_norm: np.ndarray
    lam_g: float
    verdicts: dict = field(default_factory=dict)
    skipped: list = field(default_factory=list)
    gradient_bound: float = math.nan

    @property
    def bound_holds(self):
        """Every probed ``|grad g^lam|`` is within the prior's bound."""
        vals = self.grad_g_norm[np.isfinite(self.grad_g_norm)]
        return bool(np.all(vals <= self.gradient_bound * (1 + 1e-12)))

    @property
    def all_pass(self):
        return all(v == "pass" for v in self.verdicts.values())

    def table(self):
        return [(c, _DESCRIPTIONS[c], self.verdicts[c]) for c in CONDITIONS]


def envelope_gradient_bound(potential):
    """Uniform bound on ``|grad g^lam|`` for the shipped priors.

    ``alpha sqrt(d)`` for ``alpha |x|_1``; ``alpha sqrt(min(m, k))`` for the
    nuclear norm of an ``m x k`` matrix.
    """
    if potential.shape is not None:
        return potential.g_scale * math.sqrt(min(potential.shape))
    return potential.g_scale * math.sqrt(potential.dimension)


def _directions(d, n_rays, rng):
    if d == 1:
        return np.array([[1.0], [-1.0]])
    u = rng.standard_normal((n_rays, d))
    return u / np.linalg.norm(u, axis=1, keepdims=True)


def assumption_audit(potential, lam_g, n_rays=32, radii=None, seed=0, tail_factor=1.5):
    """Probe the tail conditions on ``grad f`` and ``grad g^lam`` along random rays.

    Verdicts look at the last decade of ``radii`` (default 41 log-spaced
    points on ``[1, 1e4]``), comparing each statistic at the largest radius
    ``r`` with its value at ``r / 10``:

    * (a) pass if ``|grad f|`` grew by more than ``tail_factor`` on every ray;
    * (b) pass if ``|grad f| / |x|`` grew by at most ``tail_factor``;
    * (c) pass if the cosine between ``grad f`` and ``x`` is positive
      throughout the decade on every ray;
    * (d) pass if ``|grad g^lam| / |grad f|`` grew by at most ``tail_factor``
      and is below 1 at the largest radius.

    One-dimensional targets use the two rays ``+1`` and ``-1``. Rays on
    which ``U`` is infinite are skipped and listed in ``skipped``.
    """
    if not lam_g > 0:
        raise ValueError("lam_g must be positive")
    radii = np.logspace(0, 4, 41) if radii is None else np.asarray(radii, dtype=float)
    if radii.size < 2 or np.any(np.diff(radii) <= 0) or radii[0] <= 0:
        raise ValueError("radii must be positive and increasing")
    rng = np.random.default_rng(seed)
    dirs = _directions(potential.dimension, n_rays, rng)
    shape = (dirs.shape[0], radii.size)
    gf = np.full(shape, np.nan)
    gg = np.full(shape, np.nan)
    cos = np.full(shape, np.nan)
    skipped = []
    for i, u in enumerate(dirs):
        rows = []
        for r in radii:
            x = r * u
            if not math.isfinite(potential.value(x)):
                rows = None
                break
            df = potential.f_gradient(x)
            dg = potential.envelope_gradient_g(x, lam_g)
            nf = float(np.linalg.norm(df))
            rows.append((nf, float(np.linalg.norm(dg)),
                         float(np.dot(df, x)) / (nf * r) if nf > 0 else 0.0))
        if rows is None:
            skipped.append(i)
            continue
        gf[i], gg[i], cos[i] = np.array(rows).T
    growth = gf / radii
    with np.errstate(divide="ignore", invalid="ignore"):
        smooth = np.where(gf > 0, gg / gf, np.inf)

    live = np.array([i for i in range(shape[0]) if i not in skipped], dtype=int)
    top = radii[-1]
    j0 = int(np.searchsorted(radii, top / 10.0 * (1 - 1e-12)))
    verdicts = {}
    if live.size == 0:
        verdicts = {c: "warn" for c in CONDITIONS}
    else:
        a = gf[live, -1] > tail_factor * gf[live, j0]
        b = growth[live, -1] <= tail_factor * growth[live, j0]
        c = np.all(cos[live, j0:] > 0, axis=1)
        d = (smooth[live, -1] <= tail_factor * smooth[live, j0]) & (smooth[live, -1] < 1)
        for name, ok in zip(CONDITIONS, (a, b, c, d)):
            verdicts[name] = "pass" if bool(np.all(ok)) else "warn"
    return AssumptionAudit(directions=dirs, radii=radii, grad_f_norm=gf, growth_ratio=growth,
                           cosine=cos, smoothing_ratio=smooth, grad_g_norm=gg, lam_g=lam_g,
                           verdicts=verdicts, skipped=skipped,
                           gradient_bound=envelope_gradient_bound(potential))


def write_audit_csv(path, audit):
    """Per-ray CSV: ray, radius, |grad f|, |grad f|/|x|, cosine, ratio, |grad g^lam|."""
    with open(Path(path), "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["ray", "radius", "grad_f_norm", "growth_ratio", "cosine",
                    "smoothing_ratio", "grad_g_norm"])
        for i in range(audit.directions.shape[0]):
            if i in audit.skipped:
                continue
            for j, r in enumerate(audit.radii):
                w.writerow([i, repr(float(r)), repr(float(audit.grad_f_norm[i, j])),
                            repr(float(audit.growth_ratio[i, j])),
                            repr(float(audit.cosine[i, j])),
                            repr(float(audit.smoothing_ratio[i, j])),
                            repr(float(audit.grad_g_norm[i, j]))])
