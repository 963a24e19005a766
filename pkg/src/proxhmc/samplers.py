"""MCMC kernels for split potentials.

Five kernels share one leapfrog integrator and Metropolis acceptance:

* ``phmc``   - HMC driven by ``grad f + grad g^lam_g`` (only ``g`` smoothed)
* ``nshmc``  - HMC driven by ``(x - prox_U^lam(x)) / lam``
* ``pmala``  - Langevin proposal on the envelope of ``U`` with ``lam = h/2``
* ``mymala`` - Langevin proposal on ``f + g^lam_g``
* ``rwm``    - Gaussian random walk Metropolis

Acceptance always uses the exact potential ``U = f + g``, never an
envelope, so every kernel leaves the same distribution invariant.
"""
from __future__ import annotations

import math
import time
from dataclasses import dataclass, field, replace
from typing import Callable, Optional, Union

import numpy as np

__all__ = [
    "Fixed",
    "UniformRandom",
    "PhaseState",
    "SamplerConfig",
    "StepResult",
    "ChainTrace",
    "leapfrog_step",
    "leapfrog",
    "hamiltonian",
    "phmc_step",
    "nshmc_step",
    "pmala_step",
    "mymala_step",
    "rwm_step",
    "run_chain",
    "KERNELS",
    "HMC_KERNELS",
    "TARGET_ACCEPTANCE",
    "tune_step_size",
]


@dataclass(frozen=True)
class Fixed:
    """Always ``steps`` leapfrog steps."""

    steps: int = 10

    def __post_init__(self):
        if self.steps < 1:
            raise ValueError("number of leapfrog steps must be >= 1")

    def draw(self, rng):
        return self.steps


@dataclass(frozen=True)
class UniformRandom:
    """Leapfrog count drawn uniformly from ``{1, ..., max_steps}``.

    ``P[L = 1] > 0``, which makes the chain irreducible.
    """

    max_steps: int = 10

    def __post_init__(self):
        if self.max_steps < 1:
            raise ValueError("max_steps must be >= 1")

    def draw(self, rng):
        return int(rng.integers(1, self.max_steps + 1))


@dataclass
class PhaseState:
    x: np.ndarray
    p: np.ndarray

    def __post_init__(self):
        self.x = np.asarray(self.x, dtype=float)
        self.p = np.asarray(self.p, dtype=float)
        if self.x.shape != self.p.shape:
            raise ValueError("position and momentum must have the same shape")


@dataclass
class SamplerConfig:
    """Tuning parameters shared by all kernels.

    ``step_size`` is the leapfrog step for the HMC kernels; ``proposal_scale``
    is ``h`` for the Langevin kernels and the random-walk standard deviation
    for ``rwm``. ``lam`` is ``lam_g`` for p-HMC / my-MALA and the full-potential
    ``lam`` for ns-HMC; p-MALA ignores it and uses ``h / 2``.
    """

    step_size: float = 0.01
    leapfrog: Union[Fixed, UniformRandom] = field(default_factory=Fixed)
    lam: float = 0.01
    mass_diagonal: Optional[np.ndarray] = None
    n_iterations: int = 1000
    seed: int = 0
    proposal_scale: float = 0.01

    def __post_init__(self):
        if isinstance(self.leapfrog, int):
            self.leapfrog = Fixed(self.leapfrog)
        if not self.step_size > 0:
            raise ValueError("step size must be positive")
        if not self.lam > 0:
            raise ValueError("lambda must be positive")
        if not self.proposal_scale > 0:
            raise ValueError("proposal scale must be positive")
        if self.n_iterations < 0:
            raise ValueError("n_iterations must be nonnegative")
        if self.mass_diagonal is not None:
            self.mass_diagonal = np.asarray(self.mass_diagonal, dtype=float)
            if np.any(self.mass_diagonal <= 0):
                raise ValueError("mass matrix entries must be positive")

    def mass(self, dimension):
        if self.mass_diagonal is None:
            return np.ones(dimension)
        if self.mass_diagonal.size != dimension:
            raise ValueError("mass diagonal length does not match the target dimension")
        return self.mass_diagonal

    def to_dict(self):
        lf = self.leapfrog
        return {
            "step_size": self.step_size,
            "leapfrog": {"kind": type(lf).__name__,
                         "steps": lf.steps if isinstance(lf, Fixed) else lf.max_steps},
            "lam": self.lam,
            "mass_diagonal": None if self.mass_diagonal is None else self.mass_diagonal.tolist(),
            "n_iterations": self.n_iterations,
            "seed": self.seed,
            "proposal_scale": self.proposal_scale,
        }


@dataclass
class StepResult:
    """One transition: new state, acceptance flag and energy error.

    ``delta_h`` is ``H(proposal) - H(current)`` for the HMC kernels and
    ``-log`` of the Metropolis ratio for the others. ``value`` / ``force``
    cache ``U`` and the kernel's force at ``x`` for the next call.
    """

    x: np.ndarray
    accepted: bool
    delta_h: float
    nonfinite: bool = False
    value: float = math.nan
    force: Optional[np.ndarray] = None


@dataclass
class ChainTrace:
    samples: np.ndarray
    accepted: np.ndarray
    energy_error: np.ndarray
    wall_time: float
    kernel: str = ""
    initial: Optional[np.ndarray] = None
    nonfinite: int = 0
    config: dict = field(default_factory=dict)

    @property
    def acceptance_rate(self):
        if self.accepted.size == 0:
            return 0.0
        return float(np.mean(self.accepted))

    @property
    def n(self):
        return self.samples.shape[0]

    @property
    def dimension(self):
        return self.samples.shape[1]


# ------------------------------------------------------------- integrator

def leapfrog_step(state, grad, eps, mass_diagonal=None):
    """One leapfrog step: half kick, drift with ``M^-1 p``, half kick."""
    x, p = state.x, state.p
    inv_mass = 1.0 if mass_diagonal is None else 1.0 / np.asarray(mass_diagonal)
    p_half = p - 0.5 * eps * grad(x)
    x_new = x + eps * inv_mass * p_half
    p_new = p_half - 0.5 * eps * grad(x_new)
    return PhaseState(x_new, p_new)


def leapfrog(state, grad, eps, n_steps, mass_diagonal=None):
    """Run ``n_steps`` leapfrog steps and return every visited state.

    The returned list has ``n_steps + 1`` entries, starting with ``state``.
    Each gradient is evaluated once.
    """
    inv_mass = 1.0 if mass_diagonal is None else 1.0 / np.asarray(mass_diagonal)
    path = [PhaseState(state.x.copy(), state.p.copy())]
    x, p = state.x, state.p
    g = grad(x)
    for _ in range(n_steps):
        p = p - 0.5 * eps * g
        x = x + eps * inv_mass * p
        g = grad(x)
        p = p - 0.5 * eps * g
        path.append(PhaseState(x, p))
    return path


def _integrate(x, p, g, force, eps, n_steps, inv_mass, value_and_force=None):
    """Leapfrog from ``(x, p)`` with ``g = force(x)``.

    Returns ``(x, p, g, u, ok)``; ``u`` is ``U(x)`` when ``value_and_force``
    supplied the final gradient, else None. ``ok`` is False when the
    trajectory left the finite range; the force is never evaluated there.
    """
    u = None
    for i in range(n_steps):
        p = p - 0.5 * eps * g
        x = x + eps * inv_mass * p
        if not np.all(np.isfinite(x)):
            return x, p, g, None, False
        if value_and_force is not None and i == n_steps - 1:
            u, g = value_and_force(x)
        else:
            g = force(x)
        p = p - 0.5 * eps * g
    ok = bool(np.all(np.isfinite(p)) and np.all(np.isfinite(g)))
    return x, p, g, u, ok


def hamiltonian(x, p, potential, mass_diagonal=None):
    """Total energy ``U(x) + p^T M^-1 p / 2`` using the exact potential."""
    p = np.asarray(p, dtype=float)
    m = 1.0 if mass_diagonal is None else np.asarray(mass_diagonal)
    u = potential.value(x)
    if not np.isfinite(u):
        return math.inf
    return u + 0.5 * float(np.sum(p * p / m))


def _cached(cache, x0):
    if cache is not None and cache.x is x0 and cache.force is not None:
        return cache.value, cache.force
    return None


def _hmc_step(x0, potential, config, rng, force, cache, value_and_force=None):
    x0 = np.asarray(x0, dtype=float)
    d = x0.size
    mass = config.mass(d)
    inv_mass = 1.0 / mass
    hit = _cached(cache, x0)
    if hit is None:
        u0, g0 = potential.value(x0), force(x0)
    else:
        u0, g0 = hit
    n_steps = config.leapfrog.draw(rng)
    p0 = rng.standard_normal(d) * np.sqrt(mass)
    log_u = math.log(rng.random())

    with np.errstate(over="ignore", invalid="ignore"):
        x, p, g, u1, ok = _integrate(x0, p0, g0, force, config.step_size, n_steps,
                                     inv_mass, value_and_force)
    if not ok:
        return StepResult(x0, False, math.inf, True, u0, g0)
    if u1 is None:
        u1 = potential.value(x)
    if not np.isfinite(u1):
        return StepResult(x0, False, math.inf, False, u0, g0)
    k0 = 0.5 * float(np.sum(p0 * p0 * inv_mass))
    k1 = 0.5 * float(np.sum(p * p * inv_mass))
    delta_h = (u1 - u0) + (k1 - k0)
    if not math.isfinite(delta_h):
        return StepResult(x0, False, math.inf, True, u0, g0)
    if log_u < -delta_h:
        return StepResult(x, True, delta_h, False, u1, g)
    return StepResult(x0, False, delta_h, False, u0, g0)


def phmc_step(x0, potential, config, rng, cache=None):
    """Proximal HMC transition.

    Momentum ``p0 ~ N(0, M)``, ``L`` leapfrog steps with force
    ``grad f + (x - prox_g(x, lam_g)) / lam_g``, then accept with
    ``min(1, exp(H(x0, p0) - H(xL, pL)))`` where ``H`` uses the exact ``U``.
    """
    lam = config.lam
    return _hmc_step(x0, potential, config, rng,
                     lambda x: potential.smoothed_gradient(x, lam), cache,
                     lambda x: potential.value_and_smoothed_gradient(x, lam))


def nshmc_step(x0, potential, config, rng, cache=None):
    """Non-smooth HMC transition with force ``(x - prox_U(x, lam)) / lam``."""
    if potential.full_prox is None:
        raise ValueError(f"ns-HMC needs the prox of the full potential ({potential.name})")
    lam = config.lam
    return _hmc_step(x0, potential, config, rng,
                     lambda x: potential.full_envelope_gradient(x, lam), cache)


def _langevin_step(x0, potential, h, rng, force, cache, value_and_force=None):
    x0 = np.asarray(x0, dtype=float)
    hit = _cached(cache, x0)
    if hit is None:
        u0, g0 = potential.value(x0), force(x0)
    else:
        u0, g0 = hit
    mean0 = x0 - 0.5 * h * g0
    x1 = mean0 + math.sqrt(h) * rng.standard_normal(x0.size)
    log_u = math.log(rng.random())
    if not np.all(np.isfinite(x1)):
        return StepResult(x0, False, math.inf, True, u0, g0)
    if value_and_force is not None:
        u1, g1 = value_and_force(x1)
    else:
        u1, g1 = None, force(x1)
    if not np.all(np.isfinite(g1)):
        return StepResult(x0, False, math.inf, True, u0, g0)
    if u1 is None:
        u1 = potential.value(x1)
    if not np.isfinite(u1):
        return StepResult(x0, False, math.inf, False, u0, g0)
    mean1 = x1 - 0.5 * h * g1
    log_q_fwd = -float(np.sum((x1 - mean0) ** 2)) / (2.0 * h)
    log_q_rev = -float(np.sum((x0 - mean1) ** 2)) / (2.0 * h)
    log_ratio = (u0 - u1) + log_q_rev - log_q_fwd
    if log_u < log_ratio:
        return StepResult(x1, True, -log_ratio, False, u1, g1)
    return StepResult(x0, False, -log_ratio, False, u0, g0)


def pmala_step(x0, potential, config, rng, cache=None):
    """Proximal MALA: ``x* = x - (h/2) grad U^lam(x) + sqrt(h) z`` with ``lam = h/2``.

    The Metropolis-Hastings ratio uses the Gaussian proposal density in both
    directions and the exact target.
    """
    if potential.full_prox is None:
        raise ValueError(f"p-MALA needs the prox of the full potential ({potential.name})")
    h = config.proposal_scale
    lam = 0.5 * h
    return _langevin_step(x0, potential, h, rng,
                          lambda x: potential.full_envelope_gradient(x, lam), cache)


def mymala_step(x0, potential, config, rng, cache=None):
    """Moreau-Yosida MALA: Langevin drift ``-(h/2)(grad f + grad g^lam_g)``."""
    h = config.proposal_scale
    lam = config.lam
    return _langevin_step(x0, potential, h, rng,
                          lambda x: potential.smoothed_gradient(x, lam), cache,
                          lambda x: potential.value_and_smoothed_gradient(x, lam))


def rwm_step(x0, potential, config, rng, cache=None):
    """Random walk Metropolis with ``x* = x + scale * z``."""
    x0 = np.asarray(x0, dtype=float)
    if cache is not None and cache.x is x0 and np.isfinite(cache.value):
        u0 = cache.value
    else:
        u0 = potential.value(x0)
    x1 = x0 + config.proposal_scale * rng.standard_normal(x0.size)
    log_u = math.log(rng.random())
    u1 = potential.value(x1)
    if not np.isfinite(u1):
        return StepResult(x0, False, math.inf, False, u0)
    delta = u1 - u0
    if log_u < -delta:
        return StepResult(x1, True, delta, False, u1)
    return StepResult(x0, False, delta, False, u0)


KERNELS = {
    "phmc": phmc_step,
    "nshmc": nshmc_step,
    "pmala": pmala_step,
    "mymala": mymala_step,
    "rwm": rwm_step,
}
HMC_KERNELS = ("phmc", "nshmc")
TARGET_ACCEPTANCE = {"phmc": 0.65, "nshmc": 0.65, "pmala": 0.574, "mymala": 0.574,
                     "rwm": 0.234}


def _resolve(kernel):
    if callable(kernel):
        return getattr(kernel, "__name__", "custom").replace("_step", ""), kernel
    try:
        return kernel, KERNELS[kernel]
    except KeyError:
        raise ValueError(f"unknown kernel {kernel!r}; choose from {sorted(KERNELS)}") from None


def run_chain(kernel, x_init, potential, config, rng=None):
    """Apply ``kernel`` ``config.n_iterations`` times starting from ``x_init``.

    Row ``t`` of ``samples`` is the state after transition ``t``. The wall
    time covers the transitions only.
    """
    name, step = _resolve(kernel)
    x = np.array(x_init, dtype=float).ravel()
    if x.size != potential.dimension:
        raise ValueError(f"initial point has {x.size} entries, target dimension is "
                         f"{potential.dimension}")
    if not np.all(np.isfinite(x)):
        raise ValueError("initial point must be finite")
    if not np.isfinite(potential.value(x)):
        raise ValueError("initial point lies outside the support of the target")
    if rng is None:
        rng = np.random.default_rng(config.seed)
    n = config.n_iterations
    samples = np.empty((n, x.size))
    accepted = np.zeros(n, dtype=bool)
    energy = np.empty(n)
    nonfinite = 0
    res = None
    start = time.perf_counter()
    for t in range(n):
        res = step(x, potential, config, rng, cache=res)
        x = res.x
        samples[t] = x
        accepted[t] = res.accepted
        energy[t] = res.delta_h
        nonfinite += res.nonfinite
    wall = time.perf_counter() - start
    return ChainTrace(samples=samples, accepted=accepted, energy_error=energy,
                      wall_time=wall, kernel=name, initial=np.array(x_init, dtype=float).ravel(),
                      nonfinite=nonfinite, config=config.to_dict())


def tune_step_size(kernel, x_init, potential, config, target=None, initial=None,
                   n_pilot=200, coarse_factor=4.0, fine_factor=2 ** 0.25, max_trials=60):
    """Descending grid search for the largest step with acceptance >= target.

    The tuned quantity is ``step_size`` for the HMC kernels and
    ``proposal_scale`` otherwise. Pilot chains are chained together (each
    starts where the last ended), so the search doubles as warm-up. A
    coarse pass with short pilots brackets the step, a fine pass picks it.

    Returns ``(config, x_end, history)`` where ``config`` carries the chosen
    step and ``history`` lists ``(step, acceptance)`` pairs.
    """
    name, _ = _resolve(kernel)
    target = TARGET_ACCEPTANCE.get(name, 0.5) if target is None else target
    attr = "step_size" if name in HMC_KERNELS else "proposal_scale"
    step = float(initial if initial is not None else getattr(config, attr))
    x = np.array(x_init, dtype=float)
    rng = np.random.default_rng(np.random.SeedSequence([int(config.seed), 0x7E57]))
    history = []

    def pilot(s, n):
        nonlocal x
        cfg = replace(config, n_iterations=n, **{attr: s})
        tr = run_chain(kernel, x, potential, cfg, rng=rng)
        if n:
            x = tr.samples[-1].copy()
        history.append((s, tr.acceptance_rate))
        return tr.acceptance_rate

    trials = 0
    coarse_n = max(n_pilot // 4, 20)
    if pilot(step, coarse_n) >= target:
        # grow until the acceptance drops below target
        while trials < max_trials:
            step *= coarse_factor
            trials += 1
            if pilot(step, coarse_n) < target:
                break
    else:
        while trials < max_trials:
            step /= coarse_factor
            trials += 1
            if pilot(step, coarse_n) >= target:
                break
        step *= coarse_factor
    trials = 0
    while pilot(step, n_pilot) < target and trials < max_trials:
        step /= fine_factor
        trials += 1
    return replace(config, **{attr: step}), x, history
