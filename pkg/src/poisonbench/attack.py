"""Gradient-based poisoning attacks on linear regression.

Nopt maximizes the dispersion objective

    E = | loss_off(clean u poison, theta) / L_o  -  N / n_o |

where L_o is the clean-fit residual loss on the clean set (frozen before the
attack by default) and theta re-solves the training problem after every point
update. The Opt baseline runs the same machinery but maximizes the residual
loss on the clean points only.

Gradients flow through the trained parameters via the implicit function
theorem applied to the training stationarity condition: with n training rows,
Sigma = (1/n) sum_i x_i x_i^T and mu = (1/n) sum_i x_i,

    d theta / d z_c (transposed) =
        -(1/n) [[M, w], [-x_c^T, -1]] @ [[Sigma + reg, mu], [mu^T, 1]]^-1

with M = w x_c^T + (f(x_c) - y_c) I. The reg block is the curvature of the
penalty scaled by lambda/n so the system is the exact Hessian of the
training objective (1/2 sum r^2 + lambda Omega); the l1 part contributes
zero curvature almost everywhere.
"""

from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass

import numpy as np

from .data import Dataset, poison_count
from .regress import RegressionModel, fit, loss, mse

logger = logging.getLogger(__name__)

KKT_JITTER = 1e-8
ARMIJO_C = 1e-4
# training MSE at or below this is "zero" (noiseless data up to rounding)
DEGENERATE_MSE = 1e-18

REFERENCE_MODES = ("clean_fit", "current_theta")


class DegenerateCleanLossError(ValueError):
    """Clean data fits exactly, so the loss-ratio objective is undefined."""


@dataclass(frozen=True)
class AttackConfig:
    """Knobs for the projected gradient-ascent loop (Nopt and Opt)."""

    alpha: float
    eps_conv: float = 1e-6
    max_outer_iters: int = 100
    step0: float = 0.1
    shrink: float = 0.5
    max_backtracks: int = 20
    box: tuple[float, float] = (0.0, 1.0)
    seed: int = 0
    n_poison: int | None = None  # overrides floor(alpha*n_o/(1-alpha)) when set
    reference_loss: str = "clean_fit"

    def __post_init__(self):
        if not 0.0 < self.alpha <= 0.2:
            raise ValueError(f"alpha must be in (0, 0.2], got {self.alpha}")
        if self.eps_conv <= 0:
            raise ValueError("eps_conv must be > 0")
        if self.max_outer_iters < 1:
            raise ValueError("max_outer_iters must be >= 1")
        if self.reference_loss not in REFERENCE_MODES:
            raise ValueError(f"reference_loss must be one of {REFERENCE_MODES}")
        if self.box[0] >= self.box[1]:
            raise ValueError("box must be (lo, hi) with lo < hi")


@dataclass(frozen=True)
class KktSystem:
    """Blocks of the stationarity system for one training point z_c = (x_c, y_c)."""

    sigma: np.ndarray      # (1/n) sum x x^T
    mu: np.ndarray         # (1/n) sum x
    m: np.ndarray          # w x_c^T + (f(x_c) - y_c) I
    reg_block: np.ndarray  # (lambda/n) * penalty curvature * I
    n: int

    def matrix(self) -> np.ndarray:
        d = self.sigma.shape[0]
        h = np.empty((d + 1, d + 1))
        h[:d, :d] = self.sigma + self.reg_block
        h[:d, d] = self.mu
        h[d, :d] = self.mu
        h[d, d] = 1.0
        return h


@dataclass(frozen=True)
class AttackState:
    """Final poisoning set plus the optimization trace."""

    poison: Dataset
    model: RegressionModel
    clean_ref_loss: float
    trace: tuple[dict, ...]
    converged: bool
    iterations: int
    objective_name: str
    refit_count: int = 0

    @property
    def e_trace(self) -> tuple[float, ...]:
        return tuple(t["objective"] for t in self.trace)

    def to_jsonl(self) -> str:
        """One record per outer iteration: {iter, E, mse_train, theta}."""
        lines = []
        for t in self.trace:
            lines.append(
                json.dumps(
                    {
                        "iter": t["iter"],
                        "E": t["objective"],
                        "mse_train": t["mse_train"],
                        "theta": {"weights": t["weights"], "bias": t["bias"]},
                    }
                )
            )
        return "\n".join(lines) + "\n"


def _degenerate(ref_loss: float, n_clean: int) -> bool:
    return ref_loss <= 0.5 * n_clean * DEGENERATE_MSE


def dispersion_objective(
    clean: Dataset, poison: Dataset, model: RegressionModel, ref_loss: float
) -> float:
    """E = |loss_off(clean u poison, model) / ref_loss - (n_o + n_p) / n_o|."""
    if _degenerate(ref_loss, clean.n):
        raise DegenerateCleanLossError(
            "clean reference loss is zero; add noise to the data or use a relative floor"
        )
    total = loss(clean, model, include_regularizer=False)
    if poison.n:
        total += loss(poison, model, include_regularizer=False)
    size_ratio = (clean.n + poison.n) / clean.n
    return abs(total / ref_loss - size_ratio)


def build_kkt(training: Dataset, model: RegressionModel, x_c: np.ndarray, y_c: float) -> KktSystem:
    n, d = training.n, training.d
    x = training.features
    sigma = x.T @ x / n
    mu = x.mean(axis=0)
    r_c = float(model.weights @ x_c + model.bias - y_c)
    m = np.outer(model.weights, x_c) + r_c * np.eye(d)
    reg = (model.lam / n) * model.curvature_scale() * np.eye(d)
    return KktSystem(sigma=sigma, mu=mu, m=m, reg_block=reg, n=n)


def _solve_kkt(h: np.ndarray, rhs: np.ndarray) -> np.ndarray:
    try:
        return np.linalg.solve(h, rhs)
    except np.linalg.LinAlgError:
        logger.warning("KKT matrix singular; retrying with diagonal jitter %.0e", KKT_JITTER)
        try:
            return np.linalg.solve(h + KKT_JITTER * np.eye(h.shape[0]), rhs)
        except np.linalg.LinAlgError as exc:
            raise RuntimeError("KKT matrix singular even after jitter") from exc


def theta_jacobian(
    training: Dataset, model: RegressionModel, x_c: np.ndarray, y_c: float
) -> np.ndarray:
    """(d+1, d+1) matrix J with J[i, j] = d theta_j / d z_c[i].

    Rows index the point coordinates (x_c then y_c); columns index the
    parameters (weights then bias). model must (approximately) minimize the
    training loss on `training`, which must contain z_c.
    """
    if training.n < training.d + 1:
        raise ValueError("need n >= d+1 training rows for the KKT system")
    x_c = np.asarray(x_c, dtype=float)
    kkt = build_kkt(training, model, x_c, y_c)
    d = training.d
    explicit = np.empty((d + 1, d + 1))
    explicit[:d, :d] = kkt.m
    explicit[:d, d] = model.weights
    explicit[d, :d] = -x_c
    explicit[d, d] = -1.0
    h = kkt.matrix()
    # J = -(1/n) explicit @ H^-1; H is symmetric so solve on the transpose.
    return -(1.0 / kkt.n) * _solve_kkt(h, explicit.T).T


def _loss_gradient_theta(ds: Dataset, model: RegressionModel) -> np.ndarray:
    """Gradient of the unregularized residual loss w.r.t. (w, b)."""
    r = model.predict(ds.features) - ds.responses
    return np.concatenate([ds.features.T @ r, [float(r.sum())]])


def _sign(value: float) -> float:
    return -1.0 if value < 0 else 1.0  # subgradient at the kink: +1


def objective_gradient(
    clean: Dataset,
    poison: Dataset,
    model: RegressionModel,
    ref_loss: float,
    index: int,
    reference: str = "clean_fit",
) -> np.ndarray:
    """Gradient of the dispersion objective w.r.t. poison point `index`.

    Chain rule through the trained parameters plus the point's own explicit
    residual term. With reference="current_theta" the denominator is the
    clean-set loss at the current parameters and its theta-dependence is
    differentiated as a quotient.
    """
    if reference not in REFERENCE_MODES:
        raise ValueError(f"reference must be one of {REFERENCE_MODES}")
    x_c = poison.features[index]
    y_c = float(poison.responses[index])
    merged = Dataset(
        np.vstack([clean.features, poison.features]),
        np.concatenate([clean.responses, poison.responses]),
        clean.feature_names,
        "mixed",
    )
    total = loss(merged, model, include_regularizer=False)
    if reference == "current_theta":
        ref_loss = loss(clean, model, include_regularizer=False)
    if _degenerate(ref_loss, clean.n):
        raise DegenerateCleanLossError(
            "clean reference loss is zero; add noise to the data or use a relative floor"
        )
    size_ratio = merged.n / clean.n
    s = _sign(total / ref_loss - size_ratio)

    grad_total = _loss_gradient_theta(merged, model)
    if reference == "clean_fit":
        grad_theta = grad_total / ref_loss
    else:
        grad_ref = _loss_gradient_theta(clean, model)
        grad_theta = (grad_total * ref_loss - total * grad_ref) / ref_loss**2

    r_c = float(model.weights @ x_c + model.bias - y_c)
    explicit = r_c * np.concatenate([model.weights, [-1.0]]) / ref_loss

    jac = theta_jacobian(merged, model, x_c, y_c)
    return s * (jac @ grad_theta + explicit)


def opt_objective_gradient(
    clean: Dataset, poison: Dataset, model: RegressionModel, index: int
) -> np.ndarray:
    """Gradient of the clean-points residual loss w.r.t. poison point `index`.

    The poison point enters only through the trained parameters, so there is
    no explicit term.
    """
    x_c = poison.features[index]
    y_c = float(poison.responses[index])
    merged = Dataset(
        np.vstack([clean.features, poison.features]),
        np.concatenate([clean.responses, poison.responses]),
        clean.feature_names,
        "mixed",
    )
    jac = theta_jacobian(merged, model, x_c, y_c)
    return jac @ _loss_gradient_theta(clean, model)


def _initial_poison(clean: Dataset, p: int, rng: np.random.Generator):
    """Sample p clean rows and flip their responses to the far boundary."""
    idx = rng.choice(clean.n, size=p, replace=False)
    px = clean.features[idx].copy()
    py = 1.0 - np.round(clean.responses[idx])
    return px, py


def _run_attack(clean, cfg, family, lam, rho, kind):
    if kind == "nopt":
        objective_name = "dispersion"
    elif kind == "opt":
        objective_name = "clean_loss"
    else:
        raise ValueError(f"unknown attack kind {kind!r}")

    p = cfg.n_poison if cfg.n_poison is not None else poison_count(clean.n, cfg.alpha)
    if p < 1:
        raise ValueError(f"poison budget rounds to zero points (alpha={cfg.alpha}, n={clean.n})")

    clean_model = fit(clean, family, lam, rho=rho).model
    ref_loss = loss(clean, clean_model, include_regularizer=False)
    if kind == "nopt" and _degenerate(ref_loss, clean.n):
        raise DegenerateCleanLossError(
            "clean-fit loss is zero; add noise to the data or use a relative floor"
        )

    rng = np.random.default_rng(cfg.seed)
    px, py = _initial_poison(clean, p, rng)
    lo, hi = cfg.box
    d = clean.d

    def merged_with(px_arr, py_arr):
        return Dataset(
            np.vstack([clean.features, px_arr]),
            np.concatenate([clean.responses, py_arr]),
            clean.feature_names,
            "mixed",
        )

    def objective(merged, model):
        if kind == "opt":
            return loss(clean, model, include_regularizer=False)
        if cfg.reference_loss == "current_theta":
            denom = loss(clean, model, include_regularizer=False)
        else:
            denom = ref_loss
        if _degenerate(denom, clean.n):
            raise DegenerateCleanLossError(
                "clean reference loss is zero; add noise to the data or use a relative floor"
            )
        total = loss(merged, model, include_regularizer=False)
        return abs(total / denom - merged.n / clean.n)

    def gradient(poison_ds, model, c):
        if kind == "opt":
            return opt_objective_gradient(clean, poison_ds, model, c)
        return objective_gradient(
            clean, poison_ds, model, ref_loss, c, reference=cfg.reference_loss
        )

    refits = 1  # the clean reference fit
    merged = merged_with(px, py)
    theta = fit(merged, family, lam, rho=rho).model
    refits += 1
    obj = objective(merged, theta)

    def record(i, model, value):
        return {
            "iter": i,
            "objective": value,
            "mse_train": mse(clean, model),
            "weights": model.weights.tolist(),
            "bias": model.bias,
        }

    trace = [record(0, theta, obj)]
    converged = False
    outer = 0
    for outer in range(1, cfg.max_outer_iters + 1):
        sweep_start = obj
        for c in range(p):
            poison_ds = Dataset(px.copy(), py.copy(), clean.feature_names, "poisoned")
            grad = gradient(poison_ds, theta, c)
            norm = float(np.linalg.norm(grad))
            if norm == 0.0 or not math.isfinite(norm):
                continue
            direction = grad / norm
            eta = cfg.step0
            for _ in range(cfg.max_backtracks):
                cand_x = np.clip(px[c] + eta * direction[:d], lo, hi)
                cand_y = float(np.clip(py[c] + eta * direction[d], lo, hi))
                trial_px = px.copy()
                trial_py = py.copy()
                trial_px[c] = cand_x
                trial_py[c] = cand_y
                trial_merged = merged_with(trial_px, trial_py)
                trial_theta = fit(trial_merged, family, lam, rho=rho, warm_start=theta).model
                refits += 1
                trial_obj = objective(trial_merged, trial_theta)
                if trial_obj >= obj + ARMIJO_C * eta * norm:
                    px, py = trial_px, trial_py
                    theta, obj = trial_theta, trial_obj
                    break
                eta *= cfg.shrink
            # all backtracks rejected: the point stays where it was
        trace.append(record(outer, theta, obj))
        if abs(obj - sweep_start) < cfg.eps_conv:
            converged = True
            break

    poison_final = Dataset(px.copy(), py.copy(), clean.feature_names, "poisoned")
    return AttackState(
        poison=poison_final,
        model=theta,
        clean_ref_loss=ref_loss,
        trace=tuple(trace),
        converged=converged,
        iterations=outer,
        objective_name=objective_name,
        refit_count=refits,
    )


def nopt_attack(
    clean: Dataset, cfg: AttackConfig, family: str = "ols", lam: float = 0.0, rho: float = 0.5
) -> AttackState:
    """Dispersion-maximizing attack: sweep the poison points, moving each
    along its objective gradient with a projected backtracking line search
    and refitting the model after every accepted step."""
    return _run_attack(clean, cfg, family, lam, rho, "nopt")


def opt_attack(
    clean: Dataset, cfg: AttackConfig, family: str = "ols", lam: float = 0.0, rho: float = 0.5
) -> AttackState:
    """Baseline attack maximizing the residual loss on the clean points."""
    return _run_attack(clean, cfg, family, lam, rho, "opt")


def poison_to_csv(state: AttackState, target_name: str = "y") -> str:
    """Poison set as CSV text matching the input schema (features + target)."""
    header = ",".join(list(state.poison.feature_names) + [target_name])
    lines = [header]
    for row, y in zip(state.poison.features, state.poison.responses):
        lines.append(",".join(repr(float(v)) for v in row) + "," + repr(float(y)))
    return "\n".join(lines) + "\n"
