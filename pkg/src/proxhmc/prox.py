"""Proximal mappings, Moreau-Yosida envelopes and a FISTA solver.

For a convex, proper, lower-semicontinuous ``psi`` and ``lam > 0``::

    prox(x)   = argmin_y  psi(y) + |y - x|^2 / (2 lam)
    env(x)    = psi(prox(x)) + |prox(x) - x|^2 / (2 lam)
    grad_env  = (x - prox(x)) / lam

``grad_env`` is 1/lam-Lipschitz and ``env`` increases to ``psi`` as
``lam`` decreases to zero.
"""
from __future__ import annotations

import enum
import warnings
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

__all__ = [
    "ProxKind",
    "ProxOperator",
    "FistaSettings",
    "StepSizeRule",
    "FistaResult",
    "soft_threshold",
    "svt",
    "l1_operator",
    "nuclear_operator",
    "toy_full_operator",
    "composite_operator",
    "envelope_value",
    "envelope_gradient",
    "fista_prox",
    "fista_minimize",
]


def _check_lambda(lam):
    if not lam > 0:
        raise ValueError(f"lambda must be positive, got {lam!r}")


def soft_threshold(x, tau):
    """Element-wise soft-thresholding ``sign(x) * max(|x| - tau, 0)``.

    Entries with ``|x_i| <= tau`` map to exactly zero.
    """
    if tau < 0:
        raise ValueError(f"threshold must be nonnegative, got {tau!r}")
    x = np.asarray(x, dtype=float)
    return np.sign(x) * np.maximum(np.abs(x) - tau, 0.0)


def svt(X, tau, return_singular_values=False):
    """Singular value soft-thresholding of a matrix.

    With ``X = B diag(s) D^T`` returns ``B diag(max(s - tau, 0)) D^T``.

    Parameters
    ----------
    X : (m, k) array
    tau : float
        Nonnegative threshold.
    return_singular_values : bool
        Also return the singular values of the input.
    """
    if tau < 0:
        raise ValueError(f"threshold must be nonnegative, got {tau!r}")
    X = np.asarray(X, dtype=float)
    if X.ndim != 2:
        raise ValueError(f"svt expects a matrix, got shape {X.shape}")
    if not np.all(np.isfinite(X)):
        raise ValueError("svt input contains non-finite entries")
    B, s, Dt = np.linalg.svd(X, full_matrices=False)
    out = (B * np.maximum(s - tau, 0.0)) @ Dt
    if return_singular_values:
        return out, s
    return out


class ProxKind(enum.Enum):
    L1 = "l1"
    NUCLEAR_NORM = "nuclear_norm"
    TOY_FULL_POTENTIAL = "toy_full_potential"
    COMPOSITE_ITERATIVE = "composite_iterative"


class StepSizeRule(enum.Enum):
    FIXED_FROM_LIPSCHITZ = "fixed"
    BACKTRACKING = "backtracking"


@dataclass(frozen=True)
class FistaSettings:
    max_iterations: int = 500
    tolerance: float = 1e-8
    step_size_rule: StepSizeRule = StepSizeRule.FIXED_FROM_LIPSCHITZ

    def __post_init__(self):
        if self.max_iterations < 1:
            raise ValueError("max_iterations must be >= 1")
        if not self.tolerance > 0:
            raise ValueError("tolerance must be positive")


@dataclass
class FistaResult:
    """Outcome of a FISTA solve.

    ``converged`` is False when ``max_iterations`` was hit; the iterate is
    still returned, since a Metropolis correction downstream keeps samplers
    exact regardless of prox accuracy.
    """

    x: np.ndarray
    iterations: int
    objective: float
    converged: bool


@dataclass(frozen=True)
class ProxOperator:
    """A proximal mapping together with the function it belongs to.

    Use the factory functions (:func:`l1_operator`, :func:`nuclear_operator`,
    :func:`toy_full_operator`, :func:`composite_operator`) rather than
    building instances directly.
    """

    kind: ProxKind
    scale: float
    shape: tuple
    value: Callable[[np.ndarray], float] = field(repr=False)
    prox: Callable[[np.ndarray, float], np.ndarray] = field(repr=False)
    gradient: Optional[Callable[[np.ndarray, float], np.ndarray]] = field(
        default=None, repr=False
    )

    def __post_init__(self):
        if self.scale < 0:
            raise ValueError("scale must be nonnegative")
        if not self.shape or min(self.shape) < 1:
            raise ValueError(f"dimension must be >= 1, got {self.shape}")

    @property
    def size(self):
        return int(np.prod(self.shape))


def _l1_envelope_grad(scale):
    def grad(x, lam):
        x = np.asarray(x, dtype=float)
        if scale == 0:
            return np.zeros_like(x)
        # closed form of (x - soft_threshold(x, scale*lam)) / lam; exact +-scale
        # outside the threshold band
        return np.clip(x / lam, -scale, scale)

    return grad


def l1_operator(scale, dimension):
    """``psi(x) = scale * |x|_1`` on vectors of length ``dimension``."""
    scale = float(scale)
    return ProxOperator(
        kind=ProxKind.L1,
        scale=scale,
        shape=(int(dimension),),
        value=lambda x: scale * float(np.sum(np.abs(x))),
        prox=lambda x, lam: soft_threshold(x, scale * lam),
        gradient=_l1_envelope_grad(scale),
    )


def nuclear_operator(scale, shape):
    """``psi(X) = scale * |X|_*`` on flattened (row-major) matrices."""
    scale = float(scale)
    m, k = (int(s) for s in shape)

    def value(x):
        X = np.reshape(x, (m, k))
        return scale * float(np.sum(np.linalg.svd(X, compute_uv=False)))

    def prox(x, lam):
        x = np.asarray(x, dtype=float)
        return svt(np.reshape(x, (m, k)), scale * lam).reshape(x.shape)

    def gradient(x, lam):
        x = np.asarray(x, dtype=float)
        B, s, Dt = np.linalg.svd(np.reshape(x, (m, k)), full_matrices=False)
        # (X - SVT(X, scale*lam)) / lam = B diag(min(s/lam, scale)) D^T
        return ((B * np.minimum(s / lam, scale)) @ Dt).reshape(x.shape)

    return ProxOperator(
        kind=ProxKind.NUCLEAR_NORM,
        scale=scale,
        shape=(m, k),
        value=value,
        prox=prox,
        gradient=gradient,
    )


def toy_full_operator(y):
    """Prox of the whole toy potential ``0.5 * sum (y_i - x)^2 + |x|``.

    Closed form: with ``w = (x + lam * sum(y)) / (1 + n lam)`` the prox is
    ``sign(w) * max(|w| - lam / (1 + n lam), 0)``.
    """
    y = np.asarray(y, dtype=float)
    n = y.size
    total = float(np.sum(y))

    def value(x):
        x = np.asarray(x, dtype=float)
        return 0.5 * float(np.sum((y - x.reshape(-1, 1)) ** 2)) + float(np.sum(np.abs(x)))

    def prox(x, lam):
        x = np.asarray(x, dtype=float)
        w = (x + lam * total) / (1.0 + n * lam)
        return soft_threshold(w, lam / (1.0 + n * lam))

    return ProxOperator(
        kind=ProxKind.TOY_FULL_POTENTIAL, scale=1.0, shape=(1,), value=value, prox=prox
    )


def composite_operator(f_value_grad, g_value, g_prox, dimension, lipschitz=None,
                       settings=None, scale=1.0):
    """Prox of ``f + g`` computed iteratively with :func:`fista_prox`.

    ``f_value_grad(x)`` returns ``(f(x), grad f(x))``; ``g_prox(x, t)`` is the
    prox of ``g`` at parameter ``t``.
    """
    settings = settings or FistaSettings()

    def value(x):
        return float(f_value_grad(x)[0]) + float(g_value(x))

    def prox(x, lam):
        res = fista_prox(f_value_grad, g_prox, x, lam, settings,
                         lipschitz=lipschitz, nonsmooth_value=g_value)
        return res.x

    return ProxOperator(
        kind=ProxKind.COMPOSITE_ITERATIVE,
        scale=float(scale),
        shape=(int(dimension),),
        value=value,
        prox=prox,
    )


def envelope_value(op, lam, x):
    """Moreau-Yosida envelope ``psi(p) + |p - x|^2 / (2 lam)`` with ``p = prox(x)``."""
    _check_lambda(lam)
    x = np.asarray(x, dtype=float)
    p = op.prox(x, lam)
    return op.value(p) + float(np.sum((p - x) ** 2)) / (2.0 * lam)


def envelope_gradient(op, lam, x):
    """Gradient ``(x - prox(x)) / lam`` of the envelope."""
    _check_lambda(lam)
    x = np.asarray(x, dtype=float)
    if op.gradient is not None:
        return op.gradient(x, lam)
    return (x - op.prox(x, lam)) / lam


def fista_minimize(smooth_value_grad, nonsmooth_prox, x0, lipschitz, settings=None,
                   strong_convexity=0.0, nonsmooth_value=None, restart=False):
    """Minimise ``h(z) + g(z)`` by accelerated proximal gradient (FISTA).

    Parameters
    ----------
    smooth_value_grad : callable
        ``z -> (h(z), grad h(z))``.
    nonsmooth_prox : callable
        ``(z, t) -> prox_{t g}(z)``.
    x0 : array
        Starting iterate.
    lipschitz : float or None
        Lipschitz constant of ``grad h``. Required for the fixed step rule; with
        backtracking it is the initial guess (default 1).
    strong_convexity : float
        Known strong convexity modulus of ``h``. When positive, the constant
        momentum ``(sqrt(q) - 1) / (sqrt(q) + 1)`` with ``q = L / mu`` replaces
        the ``t_k`` sequence, which gives a linear rate.
    nonsmooth_value : callable, optional
        ``g`` itself; only used to report the final objective.
    restart : bool
        Reset the momentum whenever it points uphill (gradient-based adaptive
        restart). Useful when no strong convexity bound is known.

    Stops when ``|z_{k+1} - z_k| <= tol * max(|z_{k+1}|, 1)``.
    """
    settings = settings or FistaSettings()
    backtrack = settings.step_size_rule is StepSizeRule.BACKTRACKING
    if lipschitz is None:
        if not backtrack:
            raise ValueError("fixed step rule needs a Lipschitz constant")
        lipschitz = 1.0
    L = float(lipschitz)
    if not L > 0:
        raise ValueError("Lipschitz constant must be positive")

    x = np.array(x0, dtype=float)
    y = x.copy()
    t = 1.0
    converged = False
    it = 0
    for it in range(1, settings.max_iterations + 1):
        hy, gy = smooth_value_grad(y)
        if backtrack:
            while True:
                x_new = nonsmooth_prox(y - gy / L, 1.0 / L)
                d = x_new - y
                h_new = smooth_value_grad(x_new)[0]
                if h_new <= hy + float(np.vdot(gy, d)) + 0.5 * L * float(np.vdot(d, d)):
                    break
                L *= 2.0
        else:
            x_new = nonsmooth_prox(y - gy / L, 1.0 / L)
        if strong_convexity > 0:
            sq = np.sqrt(L / strong_convexity)
            beta = (sq - 1.0) / (sq + 1.0)
        else:
            t_new = 0.5 * (1.0 + np.sqrt(1.0 + 4.0 * t * t))
            beta = (t - 1.0) / t_new
            t = t_new
        step = x_new - x
        if restart and float(np.vdot(y - x_new, step)) > 0:
            t, beta = 1.0, 0.0
        y = x_new + beta * step
        x = x_new
        if np.linalg.norm(step) <= settings.tolerance * max(np.linalg.norm(x), 1.0):
            converged = True
            break

    objective = float(smooth_value_grad(x)[0])
    if nonsmooth_value is not None:
        objective += float(nonsmooth_value(x))
    return FistaResult(x=x, iterations=it, objective=objective, converged=converged)


def fista_prox(smooth_value_grad, nonsmooth_prox, anchor, lam, settings=None,
               lipschitz=None, nonsmooth_value=None, x0=None, warn=True):
    """Approximate ``argmin_z f(z) + g(z) + |anchor - z|^2 / (2 lam)``.

    The quadratic is folded into the smooth part, so the step size is
    ``1 / (C_f + 1/lam)`` and the problem is ``1/lam``-strongly convex.
    A non-converged solve emits a :class:`RuntimeWarning` and sets
    ``converged=False`` on the result.

    Parameters
    ----------
    smooth_value_grad : callable
        ``z -> (f(z), grad f(z))``.
    nonsmooth_prox : callable
        ``(z, t) -> prox`` of ``g`` with parameter ``t``.
    anchor : array
    lam : float
    settings : FistaSettings, optional
    lipschitz : float, optional
        Lipschitz constant ``C_f`` of ``grad f``. Required unless
        backtracking is selected.
    x0 : array, optional
        Starting iterate, defaults to ``anchor``.
    warn : bool
        Emit the non-convergence warning.
    """
    _check_lambda(lam)
    settings = settings or FistaSettings()
    anchor = np.asarray(anchor, dtype=float)
    inv_lam = 1.0 / lam

    def h(z):
        fz, gz = smooth_value_grad(z)
        r = z - anchor
        return fz + 0.5 * inv_lam * float(np.vdot(r, r)), gz + inv_lam * r

    if lipschitz is None and settings.step_size_rule is StepSizeRule.FIXED_FROM_LIPSCHITZ:
        raise ValueError("fixed step rule needs the Lipschitz constant of grad f")
    total = None if lipschitz is None else float(lipschitz) + inv_lam
    start = anchor if x0 is None else x0
    res = fista_minimize(h, nonsmooth_prox, start, total, settings,
                         strong_convexity=inv_lam, nonsmooth_value=nonsmooth_value)
    if warn and not res.converged:
        warnings.warn(
            f"fista_prox stopped after {res.iterations} iterations without reaching "
            f"tolerance {settings.tolerance:g}",
            RuntimeWarning,
            stacklevel=2,
        )
    return res
