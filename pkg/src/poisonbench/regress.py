"""Linear model trainers and losses: OLS, Ridge, LASSO, Elastic-net.

The training objective is

    L(D, theta) = 1/2 * sum_i (w.x_i + b - y_i)^2 + lambda * Omega(w)

with Omega = 0 (OLS), 1/2 ||w||_2^2 (Ridge), ||w||_1 (LASSO), and
rho ||w||_1 + (1 - rho)/2 ||w||_2^2 (Elastic-net). The bias is never
regularized. OLS/Ridge are solved in closed form; LASSO/Elastic-net by
cyclic coordinate descent with soft-thresholding.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass

import numpy as np

from .data import Dataset

FAMILIES = ("ols", "ridge", "lasso", "enet")

DEFAULT_TOL = 1e-8
DEFAULT_MAX_ITERS = 10_000
LAMBDA_GRID = tuple(np.logspace(-4, 0, 9))


@dataclass(frozen=True)
class RegressionModel:
    weights: np.ndarray
    bias: float
    family: str = "ols"
    lam: float = 0.0
    rho: float = 0.5

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=float)
        w.setflags(write=False)
        object.__setattr__(self, "weights", w)
        if self.family not in FAMILIES:
            raise ValueError(f"unknown family {self.family!r}")
        if self.lam < 0:
            raise ValueError("lambda must be >= 0")
        if not 0.0 <= self.rho <= 1.0:
            raise ValueError("rho must be in [0, 1]")

    def predict(self, features: np.ndarray) -> np.ndarray:
        return np.asarray(features) @ self.weights + self.bias

    def penalty(self) -> float:
        """lambda * Omega(w) for this model's family."""
        w = self.weights
        if self.family == "ols":
            return 0.0
        if self.family == "ridge":
            return self.lam * 0.5 * float(w @ w)
        if self.family == "lasso":
            return self.lam * float(np.sum(np.abs(w)))
        return self.lam * (
            self.rho * float(np.sum(np.abs(w))) + (1.0 - self.rho) * 0.5 * float(w @ w)
        )

    def curvature_scale(self) -> float:
        """Second derivative of Omega's smooth part: 0, 1, 0, (1 - rho).

        The l1 penalty contributes zero curvature almost everywhere.
        """
        if self.family == "ridge":
            return 1.0
        if self.family == "enet":
            return 1.0 - self.rho
        return 0.0

    def to_json(self) -> str:
        return json.dumps(
            {
                "family": self.family,
                "lambda": self.lam,
                "rho": self.rho,
                "weights": self.weights.tolist(),
                "bias": self.bias,
            },
            indent=2,
        )

    @classmethod
    def from_json(cls, text: str) -> "RegressionModel":
        doc = json.loads(text)
        return cls(
            weights=np.array(doc["weights"], dtype=float),
            bias=float(doc["bias"]),
            family=doc["family"],
            lam=float(doc["lambda"]),
            rho=float(doc.get("rho", 0.5)),
        )


@dataclass(frozen=True)
class FitReport:
    model: RegressionModel
    train_loss: float
    train_mse: float
    iterations: int
    converged: bool
    fallback: bool = False  # minimum-norm least-squares used on a singular system


def loss(ds: Dataset, model: RegressionModel, include_regularizer: bool = True) -> float:
    """1/2 sum of squared residuals, plus lambda*Omega(w) when the flag is on."""
    if ds.d != model.weights.shape[0]:
        raise ValueError(f"dimension mismatch: data d={ds.d}, model d={model.weights.shape[0]}")
    r = model.predict(ds.features) - ds.responses
    value = 0.5 * float(r @ r)
    if include_regularizer:
        value += model.penalty()
    return value


def mse(ds: Dataset, model: RegressionModel) -> float:
    """Mean squared error over the dataset; equals 2 * loss(off) / N."""
    if ds.n == 0:
        raise ValueError("mse of an empty dataset")
    if ds.d != model.weights.shape[0]:
        raise ValueError(f"dimension mismatch: data d={ds.d}, model d={model.weights.shape[0]}")
    r = model.predict(ds.features) - ds.responses
    return float(r @ r) / ds.n


def _fit_closed_form(x, y, lam):
    """OLS / Ridge via least squares on the bias-augmented design matrix.

    Ridge appends sqrt(lam) rows penalizing the weights only, so the solve
    minimizes ||r||^2 + lam ||w||^2, which has the same argmin as
    1/2 ||r||^2 + lam/2 ||w||^2.
    """
    n, d = x.shape
    a = np.hstack([x, np.ones((n, 1))])
    rhs = y
    if lam > 0:
        a = np.vstack([a, np.sqrt(lam) * np.hstack([np.eye(d), np.zeros((d, 1))])])
        rhs = np.concatenate([y, np.zeros(d)])
    theta, _, rank, _ = np.linalg.lstsq(a, rhs, rcond=None)
    fallback = rank < d + 1
    return theta[:d], float(theta[d]), fallback


def _fit_coordinate_descent(x, y, lam, rho, tol, max_iters, w0=None, b0=None):
    """Cyclic coordinate descent with soft-thresholding, bias unpenalized.

    Stops when the largest coordinate change in a sweep is below tol.
    """
    n, d = x.shape
    w = np.zeros(d) if w0 is None else np.array(w0, dtype=float)
    b = float(np.mean(y)) if b0 is None else float(b0)
    col_sq = np.einsum("ij,ij->j", x, x)
    l1 = lam * rho
    l2 = lam * (1.0 - rho)
    resid = y - x @ w - b  # y - prediction
    for it in range(1, max_iters + 1):
        max_delta = 0.0
        for j in range(d):
            if col_sq[j] == 0.0:
                continue
            wj = w[j]
            rho_j = x[:, j] @ resid + col_sq[j] * wj
            new = math.copysign(max(abs(rho_j) - l1, 0.0), rho_j) / (col_sq[j] + l2)
            if new != wj:
                resid += x[:, j] * (wj - new)
                w[j] = new
                max_delta = max(max_delta, abs(new - wj))
        b_new = b + float(np.mean(resid))
        max_delta = max(max_delta, abs(b_new - b))
        resid -= b_new - b
        b = b_new
        if max_delta < tol:
            return w, b, it, True
    return w, b, max_iters, False


def fit(
    ds: Dataset,
    family: str = "ols",
    lam: float = 0.0,
    rho: float = 0.5,
    tol: float = DEFAULT_TOL,
    max_iters: int = DEFAULT_MAX_ITERS,
    warm_start: RegressionModel | None = None,
) -> FitReport:
    """Minimize the regularized training loss; deterministic.

    warm_start seeds the coordinate-descent families only; closed-form
    families ignore it.
    """
    if family not in FAMILIES:
        raise ValueError(f"unknown family {family!r}")
    if lam < 0:
        raise ValueError("lambda must be >= 0")
    if ds.n < ds.d + 1:
        raise ValueError(f"need N >= d+1 rows to fit, got N={ds.n}, d={ds.d}")
    if family == "ols":
        lam = 0.0  # OLS has no penalty by definition

    x, y = ds.features, ds.responses
    fallback = False
    if family in ("ols", "ridge"):
        w, b, fallback = _fit_closed_form(x, y, lam)
        iterations, converged = 1, True
    else:
        cd_rho = 1.0 if family == "lasso" else rho
        w0 = b0 = None
        if warm_start is not None and warm_start.weights.shape[0] == ds.d:
            w0, b0 = warm_start.weights, warm_start.bias
        w, b, iterations, converged = _fit_coordinate_descent(
            x, y, lam, cd_rho, tol, max_iters, w0, b0
        )
    model = RegressionModel(w, b, family, lam, rho)
    return FitReport(
        model=model,
        train_loss=loss(ds, model, include_regularizer=True),
        train_mse=mse(ds, model),
        iterations=iterations,
        converged=converged,
        fallback=fallback,
    )


def select_lambda(
    train: Dataset,
    validation: Dataset,
    family: str,
    grid=LAMBDA_GRID,
    rho: float = 0.5,
) -> float:
    """Pick lambda from a log grid by validation MSE; ties go to the
    smallest candidate. OLS always gets 0."""
    if family == "ols":
        return 0.0
    best_lam, best_mse = None, None
    for lam in grid:
        model = fit(train, family, float(lam), rho=rho).model
        v = mse(validation, model)
        if best_mse is None or v < best_mse:
            best_lam, best_mse = float(lam), v
    return best_lam
