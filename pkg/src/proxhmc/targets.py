"""Split potentials ``U = f + g`` for the three benchmark problems.

Every target works on flat float vectors; the matrix problem uses the
row-major flattening of its ``m x k`` state.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Optional

import numpy as np
from scipy.special import expit

from .prox import (
    FistaSettings,
    fista_prox,
    l1_operator,
    nuclear_operator,
    svt,
    toy_full_operator,
)

__all__ = [
    "SplitPotential",
    "ToyTarget",
    "LogisticTarget",
    "MatrixTarget",
    "DataFormatError",
    "toy_target",
    "logistic_target",
    "matrix_target",
    "make_checkerboard",
    "noisy_checkerboard",
    "load_pima",
    "default_pima_path",
]


class DataFormatError(ValueError):
    """Raised when an input data file cannot be parsed."""


@dataclass
class SplitPotential:
    """Potential ``U(x) = f(x) + g(x)`` with smooth ``f`` and convex ``g``.

    ``g_prox(x, lam)`` is the prox of ``g``; ``full_prox(x, lam)`` (optional)
    the prox of ``U`` itself. ``g_envelope_gradient`` may supply a closed form
    of ``(x - g_prox(x, lam)) / lam``; ``g_value_and_envelope_gradient`` may
    return both quantities from one factorisation.
    """

    name: str
    dimension: int
    f_value: Callable[[np.ndarray], float]
    f_gradient: Callable[[np.ndarray], np.ndarray]
    g_value: Callable[[np.ndarray], float]
    g_prox: Callable[[np.ndarray, float], np.ndarray]
    full_prox: Optional[Callable[[np.ndarray, float], np.ndarray]] = None
    f_lipschitz: Optional[float] = None
    g_envelope_gradient: Optional[Callable[[np.ndarray, float], np.ndarray]] = None
    g_value_and_envelope_gradient: Optional[Callable] = None
    g_scale: float = 1.0
    shape: Optional[tuple] = None
    metadata: dict = field(default_factory=dict)
    stats: dict = field(default_factory=dict)

    def value(self, x):
        """``U(x)``; may be ``inf`` outside the domain of ``g``."""
        return float(self.f_value(x)) + float(self.g_value(x))

    __call__ = value

    def f_value_grad(self, x):
        return float(self.f_value(x)), self.f_gradient(x)

    def envelope_gradient_g(self, x, lam):
        if self.g_envelope_gradient is not None:
            return self.g_envelope_gradient(x, lam)
        return (x - self.g_prox(x, lam)) / lam

    def smoothed_gradient(self, x, lam):
        """``grad f(x) + grad g^lam(x)``, the force used by p-HMC."""
        return self.f_gradient(x) + self.envelope_gradient_g(x, lam)

    def value_and_smoothed_gradient(self, x, lam):
        """``(U(x), grad f(x) + grad g^lam(x))`` sharing work where possible."""
        if self.g_value_and_envelope_gradient is not None:
            gv, gg = self.g_value_and_envelope_gradient(x, lam)
            return float(self.f_value(x)) + gv, self.f_gradient(x) + gg
        return self.value(x), self.smoothed_gradient(x, lam)

    def full_envelope_gradient(self, x, lam):
        """``(x - prox_U(x)) / lam``, the force used by ns-HMC and p-MALA."""
        if self.full_prox is None:
            raise ValueError(f"target {self.name!r} has no prox for the full potential")
        return (x - self.full_prox(x, lam)) / lam


# ---------------------------------------------------------------- toy (1-D)

@dataclass(frozen=True)
class ToyTarget:
    y: np.ndarray
    seed: Optional[int] = None

    @property
    def n(self):
        return self.y.size


def toy_target(seed=0, n=100, data=None):
    """One-dimensional lasso-type potential ``0.5 sum (y_i - x)^2 + |x|``.

    ``y_i`` are drawn iid from a normal with mean 1 and variance 0.5 unless
    ``data`` (a :class:`ToyTarget` or array) is supplied.
    """
    if data is None:
        rng = np.random.default_rng(seed)
        y = rng.normal(1.0, np.sqrt(0.5), size=n)
        data = ToyTarget(y=y, seed=seed)
    elif not isinstance(data, ToyTarget):
        data = ToyTarget(y=np.asarray(data, dtype=float))
    y = np.asarray(data.y, dtype=float)
    if not np.all(np.isfinite(y)):
        raise ValueError("toy data must be finite")
    n = y.size
    total = float(np.sum(y))
    total_sq = float(np.sum(y * y))

    def f_value(x):
        x = float(np.asarray(x).reshape(-1)[0])
        return 0.5 * float(np.sum((y - x) ** 2))

    def f_gradient(x):
        return n * np.asarray(x, dtype=float) - total

    l1 = l1_operator(1.0, 1)
    full = toy_full_operator(y)
    return SplitPotential(
        name="toy",
        dimension=1,
        f_value=f_value,
        f_gradient=f_gradient,
        g_value=l1.value,
        g_prox=l1.prox,
        full_prox=full.prox,
        f_lipschitz=float(n),
        g_envelope_gradient=l1.gradient,
        g_scale=1.0,
        metadata={"n": n, "sum_y": total, "sum_y2": total_sq, "seed": data.seed,
                  "y": y},
    )


# ------------------------------------------------------- sparse logistic

@dataclass(frozen=True)
class LogisticTarget:
    """Design matrix (with intercept column), binary response and prior scale.

    ``center`` / ``scale`` hold the per-column standardisation constants of
    the raw covariates so coefficients can be mapped back to the data scale.
    """

    X: np.ndarray
    y: np.ndarray
    alpha: float = 1.0
    columns: tuple = ()
    center: Optional[np.ndarray] = None
    scale: Optional[np.ndarray] = None
    source: Optional[str] = None

    def __post_init__(self):
        if self.X.ndim != 2:
            raise ValueError("design matrix must be 2-D")
        if self.X.shape[0] != self.y.shape[0]:
            raise ValueError(
                f"design has {self.X.shape[0]} rows but response has {self.y.shape[0]}"
            )
        if not np.all(np.isin(self.y, (0.0, 1.0))):
            raise ValueError("response must be binary 0/1")
        if not np.all(np.isfinite(self.X)):
            raise ValueError("design matrix has non-finite entries")
        if not self.alpha > 0:
            raise ValueError("prior scale alpha must be positive")

    @property
    def n(self):
        return self.X.shape[0]

    @property
    def d(self):
        return self.X.shape[1]

    def to_original_scale(self, beta):
        """Map coefficients on standardised covariates back to raw units.

        Column 0 is the intercept.
        """
        beta = np.asarray(beta, dtype=float)
        if self.center is None or self.scale is None:
            return beta.copy()
        out = beta.copy()
        out[..., 1:] = beta[..., 1:] / self.scale
        out[..., 0] = beta[..., 0] - np.sum(beta[..., 1:] * self.center / self.scale, axis=-1)
        return out


def logistic_target(data, fista_settings=None):
    """Sparse Bayesian logistic regression with a Laplace prior on all coefficients.

    ``f(b) = sum log(1 + exp(x_i.b)) - y_i x_i.b`` and ``g(b) = alpha |b|_1``.
    The prox of ``f + g`` has no closed form and is computed with FISTA.
    """
    X = np.ascontiguousarray(data.X, dtype=float)
    y = np.asarray(data.y, dtype=float)
    if X.shape[0] != y.shape[0]:
        raise ValueError("dimension mismatch between X and y")
    alpha = float(data.alpha)
    settings = fista_settings or FistaSettings()
    lipschitz = float(np.linalg.norm(X, 2) ** 2 / 4.0)
    Xt = np.ascontiguousarray(X.T)

    def f_value(b):
        eta = X @ b
        return float(np.sum(np.logaddexp(0.0, eta) - y * eta))

    def f_gradient(b):
        return Xt @ (expit(X @ b) - y)

    def f_value_grad(b):
        eta = X @ b
        return (float(np.sum(np.logaddexp(0.0, eta) - y * eta)),
                Xt @ (expit(eta) - y))

    l1 = l1_operator(alpha, X.shape[1])
    stats = {"fista_calls": 0, "fista_nonconverged": 0, "fista_iterations": 0}

    def full_prox(b, lam):
        res = fista_prox(f_value_grad, l1.prox, b, lam, settings,
                         lipschitz=lipschitz, warn=False)
        stats["fista_calls"] += 1
        stats["fista_iterations"] += res.iterations
        if not res.converged:
            stats["fista_nonconverged"] += 1
        return res.x

    return SplitPotential(
        name="logistic",
        dimension=X.shape[1],
        f_value=f_value,
        f_gradient=f_gradient,
        g_value=l1.value,
        g_prox=l1.prox,
        full_prox=full_prox,
        f_lipschitz=lipschitz,
        g_envelope_gradient=l1.gradient,
        g_scale=alpha,
        metadata={"alpha": alpha, "n": X.shape[0], "columns": list(data.columns),
                  "source": data.source, "intercept_penalized": True,
                  "standardized": data.center is not None},
        stats=stats,
    )


def default_pima_path():
    """Path of the bundled ``Pima.tr`` CSV (200 rows, 7 covariates, Yes/No label)."""
    return Path(__file__).resolve().parent / "data" / "pima_tr.csv"


_LABELS = {"0": 0.0, "1": 1.0, "no": 0.0, "yes": 1.0}


def load_pima(path=None, alpha=1.0, n_covariates=7):
    """Read a Pima-style CSV into a standardised :class:`LogisticTarget`.

    The file has a header row, ``n_covariates`` numeric columns and a final
    label column holding ``0/1`` or ``No/Yes``. Covariates are standardised
    to zero mean and unit (population) variance and an intercept column of
    ones is prepended. Data rows are numbered from 1 in error messages.
    """
    path = Path(default_pima_path() if path is None else path)
    if not path.is_file():
        raise FileNotFoundError(f"data file not found: {path}")
    rows, labels = [], []
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise DataFormatError(f"{path}: empty file") from None
        if len(header) != n_covariates + 1:
            raise DataFormatError(
                f"{path}: header has {len(header)} columns, expected {n_covariates + 1}"
            )
        for i, row in enumerate(reader, start=1):
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != n_covariates + 1:
                raise DataFormatError(
                    f"{path}: row {i} has {len(row)} fields, expected {n_covariates + 1}"
                )
            try:
                values = [float(c) for c in row[:n_covariates]]
            except ValueError:
                raise DataFormatError(f"{path}: row {i} has a non-numeric covariate") from None
            if not all(np.isfinite(values)):
                raise DataFormatError(f"{path}: row {i} has a non-finite covariate")
            label = _LABELS.get(row[-1].strip().lower())
            if label is None:
                raise DataFormatError(
                    f"{path}: row {i} has non-binary label {row[-1].strip()!r}"
                )
            rows.append(values)
            labels.append(label)
    if not rows:
        raise DataFormatError(f"{path}: no data rows")
    raw = np.array(rows)
    center = raw.mean(axis=0)
    scale = raw.std(axis=0)
    if np.any(scale == 0):
        raise DataFormatError(f"{path}: constant covariate column cannot be standardised")
    Z = (raw - center) / scale
    X = np.hstack([np.ones((Z.shape[0], 1)), Z])
    return LogisticTarget(
        X=X,
        y=np.array(labels),
        alpha=float(alpha),
        columns=("intercept", *header[:n_covariates]),
        center=center,
        scale=scale,
        source=str(path),
    )


# ------------------------------------------------------ low-rank matrix

@dataclass(frozen=True)
class MatrixTarget:
    Y: np.ndarray
    sigma2: float
    alpha: float
    X_true: Optional[np.ndarray] = None

    def __post_init__(self):
        if not self.sigma2 > 0:
            raise ValueError("noise variance must be positive")
        if not self.alpha > 0:
            raise ValueError("prior scale alpha must be positive")


def matrix_target(Y, sigma2, alpha, X_true=None):
    """Nuclear-norm denoising posterior ``|Y - X|_F^2 / (2 s2) + alpha |X|_*``.

    The state is ``X.ravel()`` (row-major).
    """
    Y = np.asarray(Y, dtype=float)
    if Y.ndim != 2:
        raise ValueError(f"observation must be a matrix, got shape {Y.shape}")
    if X_true is not None and np.shape(X_true) != Y.shape:
        raise ValueError("shape mismatch between Y and X_true")
    data = MatrixTarget(Y=Y, sigma2=float(sigma2), alpha=float(alpha), X_true=X_true)
    m, k = Y.shape
    size = m * k
    y = Y.ravel().copy()
    s2 = data.sigma2
    a = data.alpha
    nuc = nuclear_operator(a, (m, k))

    def _check(x):
        x = np.asarray(x, dtype=float)
        if x.size != size:
            raise ValueError(f"state has {x.size} entries, expected {size}")
        return x

    def f_value(x):
        r = _check(x) - y
        return float(np.dot(r, r)) / (2.0 * s2)

    def f_gradient(x):
        return (_check(x) - y) / s2

    def g_value_and_envelope_gradient(x, lam):
        x = _check(x)
        B, s, Dt = np.linalg.svd(x.reshape(m, k), full_matrices=False)
        grad = (B * np.minimum(s / lam, a)) @ Dt
        return a * float(np.sum(s)), grad.ravel()

    def full_prox(x, lam):
        x = _check(x)
        w = lam / (lam + s2)
        anchor = w * Y + (1.0 - w) * x.reshape(m, k)
        return svt(anchor, a * lam * s2 / (lam + s2)).ravel()

    return SplitPotential(
        name="lowrank",
        dimension=size,
        f_value=f_value,
        f_gradient=f_gradient,
        g_value=lambda x: nuc.value(_check(x)),
        g_prox=lambda x, lam: nuc.prox(_check(x), lam),
        full_prox=full_prox,
        f_lipschitz=1.0 / s2,
        g_envelope_gradient=lambda x, lam: nuc.gradient(_check(x), lam),
        g_value_and_envelope_gradient=g_value_and_envelope_gradient,
        g_scale=a,
        shape=(m, k),
        metadata={"sigma2": s2, "alpha": a, "shape": [m, k], "Y": Y, "X_true": X_true},
    )


def make_checkerboard(size=64, block=8):
    """0/1 checkerboard of ``block x block`` tiles; the top-left tile is 0."""
    if size < 1 or block < 1 or size % block:
        raise ValueError(f"block {block} must divide size {size}")
    idx = np.arange(size) // block
    return ((idx[:, None] + idx[None, :]) % 2).astype(float)


def noisy_checkerboard(size=64, block=8, sigma2=0.01, seed=0):
    """Return ``(X_true, Y)`` with ``Y = X_true + E`` and ``E_ij ~ N(0, sigma2)``."""
    X = make_checkerboard(size, block)
    rng = np.random.default_rng(seed)
    return X, X + rng.normal(0.0, np.sqrt(sigma2), size=X.shape)
