"""Maximum-likelihood multinomial and binary logistic fits.

One damped-Newton engine backs everything: hard labels or fractional
probability-vector responses (the quasi-likelihood has the same gradient and
Hessian either way), optional nonnegative weights, zero initialization, and
step halving whenever a Newton step fails to increase the objective. The
engine is fully deterministic, which the reproducibility contract depends on.

A response category with zero total weight is pinned: it is dropped from the
optimization and predicted with probability exactly 0. This is the boundary
maximum of the likelihood and it makes the 3-state machinery degenerate
cleanly to binary logistic regression on terminal-event-free data.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConvergenceError, DataError, UsageError
from .panel import OutcomeState

_SEPARATION_NORM = 30.0


@dataclass(frozen=True)
class FitOptions:
    """Newton solver controls. Tolerance is on the gradient max-norm."""

    tolerance: float = 1e-8
    max_iterations: int = 100
    step_halving_max: int = 30
    ridge: float = 0.0

    def __post_init__(self):
        if self.tolerance <= 0:
            raise UsageError("tolerance must be > 0")
        if self.max_iterations < 1:
            raise UsageError("max_iterations must be >= 1")
        if self.ridge < 0:
            raise UsageError("ridge must be >= 0")


@dataclass(frozen=True)
class FittedMultinomial:
    """3-category fit; coefficient rows are (intermediate, terminal) against
    the event-free reference."""

    coefficients: np.ndarray            # (2, p)
    converged: bool
    iterations: int
    final_gradient_norm: float
    reference_category: OutcomeState = OutcomeState.EVENT_FREE
    pinned_categories: tuple[int, ...] = ()   # state codes with zero response mass

    @property
    def p(self) -> int:
        return self.coefficients.shape[1]


@dataclass(frozen=True)
class FittedBinary:
    coefficients: np.ndarray            # (p,)
    converged: bool
    iterations: int
    final_gradient_norm: float
    pinned: bool = False                # response had zero total mass


def _check_design(X: np.ndarray) -> np.ndarray:
    X = np.asarray(X, dtype=float)
    if X.ndim != 2 or X.shape[0] < 1 or X.shape[1] < 1:
        raise DataError(f"design must be a 2-D matrix, got shape {X.shape}")
    if not np.isfinite(X).all():
        raise DataError("design matrix contains non-finite entries")
    return X


def _check_weights(weights, n: int) -> np.ndarray:
    if weights is None:
        return np.ones(n)
    w = np.asarray(weights, dtype=float)
    if w.shape != (n,):
        raise DataError(f"weights must have shape ({n},)")
    if np.any(w < 0) or not np.isfinite(w).all():
        raise DataError("weights must be finite and nonnegative")
    return w


def _response_matrix(y, n_categories: int) -> np.ndarray:
    """Hard labels (1..C) or fractional (n, C) rows -> (n, C) matrix."""
    Y = np.asarray(y, dtype=float)
    if Y.ndim == 1:
        if np.isnan(Y).any():
            raise DataError("response contains missing values")
        labels = Y.astype(int)
        if not np.isin(labels, np.arange(1, n_categories + 1)).all():
            raise DataError(f"hard labels must lie in 1..{n_categories}")
        out = np.zeros((len(Y), n_categories))
        out[np.arange(len(Y)), labels - 1] = 1.0
        return out
    if Y.ndim == 2 and Y.shape[1] == n_categories:
        if not np.isfinite(Y).all() or np.any(Y < -1e-12):
            raise DataError("fractional responses must be finite and nonnegative")
        if np.any(np.abs(Y.sum(axis=1) - 1.0) > 1e-8):
            raise DataError("fractional response rows must sum to 1 within 1e-8")
        return np.clip(Y, 0.0, None)
    raise DataError(f"response shape {Y.shape} not understood for "
                    f"{n_categories} categories")


def _softmax_full(eta: np.ndarray) -> np.ndarray:
    """Probabilities over (reference, categories...) from active logits.

    eta: (n, A) logits of the active non-reference categories; the reference
    logit is 0. Returns (n, A + 1) with the reference in column 0.
    """
    m = np.maximum(eta.max(axis=1, keepdims=True), 0.0)
    ex = np.exp(eta - m)
    ref = np.exp(-m)
    denom = ref + ex.sum(axis=1, keepdims=True)
    return np.hstack([ref, ex]) / denom


def _engine(X, Ymat, w, options):
    """Newton maximization of the multinomial quasi-log-likelihood.

    Returns (coef (C-1, p), converged, iterations, gradient max-norm, active),
    where `active` marks the non-reference categories that were optimized;
    the rest had zero response mass and are pinned to probability 0.
    """
    n, p = X.shape
    C = Ymat.shape[1]
    mass = (Ymat * w[:, None]).sum(axis=0)
    active = mass[1:] > 0.0
    A = int(active.sum())
    coef = np.zeros((C - 1, p))
    if A == 0:
        # everything in the reference category: zero coefficients are the MLE
        return coef, True, 0, 0.0, active

    Ya = Ymat[:, 1:][:, active]
    beta = np.zeros((A, p))
    ridge = options.ridge

    def evaluate(b):
        # objective = sum_i w_i [sum_a y_ia eta_ia - log denom], the quasi-LL
        # up to the response-entropy constant
        eta = X @ b.T
        m = np.maximum(eta.max(axis=1), 0.0)
        lse = m + np.log(np.exp(-m) + np.exp(eta - m[:, None]).sum(axis=1))
        obj = float(np.sum(w * ((Ya * eta).sum(axis=1) - lse)))
        return _softmax_full(eta), obj

    def gradient_norm(P):
        resid = w[:, None] * (Ya - P[:, 1:])
        grad = (X.T @ resid).T.reshape(-1)          # (A*p,), category-major
        return grad, float(np.abs(grad).max())

    P, obj = evaluate(beta)
    iterations = 0
    converged = False
    gnorm = np.inf
    for _ in range(options.max_iterations):
        grad, gnorm = gradient_norm(P)
        if gnorm <= options.tolerance:
            converged = True
            break
        H = np.empty((A * p, A * p))
        Pa = P[:, 1:]
        for a in range(A):
            for b in range(a, A):
                wab = w * Pa[:, a] * ((a == b) - Pa[:, b])
                block = X.T @ (X * wab[:, None])
                H[a * p:(a + 1) * p, b * p:(b + 1) * p] = block
                if b != a:
                    H[b * p:(b + 1) * p, a * p:(a + 1) * p] = block
        if ridge > 0:
            H[np.diag_indices_from(H)] += ridge
        try:
            step = np.linalg.solve(H, grad)
        except np.linalg.LinAlgError:
            step = np.linalg.lstsq(H, grad, rcond=None)[0]
        if not np.isfinite(step).all():
            step = np.linalg.lstsq(H, grad, rcond=None)[0]
        step = step.reshape(A, p)

        # near the optimum the true gain can sit below float rounding of the
        # objective; tolerate a rounding-level plateau so halving only fights
        # genuine non-increase
        plateau = 1e-10 * (abs(obj) + 1.0)
        scale = 1.0
        accepted = False
        for _ in range(options.step_halving_max + 1):
            trial = beta + scale * step
            P_trial, obj_trial = evaluate(trial)
            if np.isfinite(obj_trial) and obj_trial >= obj - plateau:
                accepted = True
                break
            scale *= 0.5
        if not accepted:
            break
        beta, P, obj = trial, P_trial, obj_trial
        iterations += 1
        if np.abs(beta).max() > _SEPARATION_NORM:
            # diverging coefficients: separation, flag rather than converge
            _, gnorm = gradient_norm(P)
            converged = False
            break
    else:
        _, gnorm = gradient_norm(P)
        converged = gnorm <= options.tolerance

    coef[active] = beta
    return coef, converged, iterations, gnorm, active


def fit_multinomial(X, y, weights=None, options: FitOptions | None = None
                    ) -> FittedMultinomial:
    """Fit a 3-category multinomial logistic model.

    `y` is either hard states in {1,2,3} or an (n, 3) matrix of fractional
    responses (each row a probability vector). Complete separation is flagged
    through `converged=False` once the coefficient max-norm passes 30.
    """
    options = options or FitOptions()
    X = _check_design(X)
    Ymat = _response_matrix(y, 3)
    if Ymat.shape[0] != X.shape[0]:
        raise DataError("X and y row counts differ")
    w = _check_weights(weights, X.shape[0])
    coef, converged, iters, gnorm, active = _engine(X, Ymat, w, options)
    pinned = tuple(int(c + 2) for c in range(2) if not active[c])
    return FittedMultinomial(coefficients=coef, converged=converged,
                             iterations=iters, final_gradient_norm=gnorm,
                             pinned_categories=pinned)


def predict_multinomial(model: FittedMultinomial, X) -> np.ndarray:
    """Predicted state probabilities, one (p1, p2, p3) row per design row."""
    X = _check_design(X)
    if X.shape[1] != model.p:
        raise DataError(f"design has {X.shape[1]} columns, model expects {model.p}")
    active = np.array([s not in model.pinned_categories for s in (2, 3)])
    out = np.zeros((X.shape[0], 3))
    probs = _softmax_full(X @ model.coefficients[active].T)
    out[:, 0] = probs[:, 0]
    out[:, 1:][:, active] = probs[:, 1:]
    return out


def fit_logistic(X, y, weights=None, options: FitOptions | None = None
                 ) -> FittedBinary:
    """Binary logistic fit; `y` may be 0/1 or fractional in [0, 1]."""
    options = options or FitOptions()
    X = _check_design(X)
    yv = np.asarray(y, dtype=float)
    if yv.ndim != 1 or yv.shape[0] != X.shape[0]:
        raise DataError("binary response must be a vector matching X rows")
    if not np.isfinite(yv).all() or np.any(yv < -1e-12) or np.any(yv > 1 + 1e-12):
        raise DataError("binary responses must lie in [0, 1]")
    yv = np.clip(yv, 0.0, 1.0)
    Ymat = np.column_stack([1.0 - yv, yv])
    w = _check_weights(weights, X.shape[0])
    coef, converged, iters, gnorm, active = _engine(X, Ymat, w, options)
    return FittedBinary(coefficients=coef[0], converged=converged,
                        iterations=iters, final_gradient_norm=gnorm,
                        pinned=not bool(active[0]))


def predict_logistic(model: FittedBinary, X) -> np.ndarray:
    X = _check_design(X)
    if X.shape[1] != model.coefficients.shape[0]:
        raise DataError("design column count does not match the fit")
    if model.pinned:
        return np.zeros(X.shape[0])
    return _softmax_full(X @ model.coefficients[None, :].T)[:, 1]


def loglik_and_gradient(coefficients, X, y, weights=None):
    """Quasi-log-likelihood and its analytic gradient (test hook).

    Multinomial when `coefficients` has 2*p entries (flat or (2, p)); binary
    when it is a p-vector. The returned gradient is flat, category-major.
    """
    X = _check_design(X)
    n, p = X.shape
    coef = np.asarray(coefficients, dtype=float)
    if coef.size == p and coef.ndim == 1:
        yv = np.clip(np.asarray(y, dtype=float), 0.0, 1.0)
        Ymat = np.column_stack([1.0 - yv, yv])
        beta = coef[None, :]
    else:
        Ymat = _response_matrix(y, 3)
        beta = coef.reshape(2, p)
    w = _check_weights(weights, n)
    eta = X @ beta.T
    m = np.maximum(eta.max(axis=1), 0.0)
    lse = m + np.log(np.exp(-m) + np.exp(eta - m[:, None]).sum(axis=1))
    Ya = Ymat[:, 1:]
    value = float(np.sum(w * ((Ya * eta).sum(axis=1) - lse)))
    P = _softmax_full(eta)
    grad = (X.T @ (w[:, None] * (Ya - P[:, 1:]))).T.reshape(-1)
    return value, grad


def require_converged(model, context: str):
    """Raise ConvergenceError when a fit is unusable downstream."""
    if not model.converged:
        raise ConvergenceError(
            f"{context}: fit did not converge "
            f"(iterations={model.iterations}, "
            f"gradient max-norm={model.final_gradient_norm:.3g}); "
            "possible separation or collinearity")
