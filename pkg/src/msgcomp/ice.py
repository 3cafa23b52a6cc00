"""Iterated-conditional-expectation g-computation for the multistate outcome.

The recursion runs backward from the horizon t. The top step fits the observed
states Y_t among those uncensored at t and alive at t-1, then predicts state
probabilities under the action plan for everyone uncensored and alive at t-1.
Each backward step k = t-1..1 builds pseudo-outcomes for the interval-k fit
population (uncensored at k, alive at k-1): individuals dying exactly at k are
replaced with the degenerate vector (0, 0, 1), everyone else carries the
prediction from the step above. A fractional multinomial fit of those
pseudo-outcomes on history through k-1 is then predicted, under the plan, for
everyone uncensored and alive at k-1. The proportions are the mean of the
baseline-level prediction vectors across all n individuals.

Everything here is deterministic: identical inputs give bit-identical output.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .design import ModelSpec, PanelColumns, build_design_columns
from .errors import DataError, UsageError
from .glm import FitOptions, FittedMultinomial, fit_multinomial, \
    predict_multinomial, require_converged
from .panel import ActionPlan, PanelDataset, PsiResult, RiskPurpose, \
    StateDistribution, risk_set

TERMINAL_VECTOR = np.array([0.0, 0.0, 1.0])


@dataclass(frozen=True)
class IceStep:
    """Bookkeeping for one backward step (k = horizon is the top fit)."""

    k: int
    n_fit: int
    n_pred: int
    n_replaced: int
    model: FittedMultinomial


@dataclass(frozen=True)
class IceTrace:
    """Per-step diagnostics of one ICE recursion, top step first."""

    horizon: int
    plan: str
    steps: tuple[IceStep, ...]

    def to_dict(self) -> dict:
        return {
            "horizon": self.horizon,
            "plan": self.plan,
            "steps": [{
                "k": s.k,
                "n_fit": s.n_fit,
                "n_pred": s.n_pred,
                "n_replaced": s.n_replaced,
                "iterations": s.model.iterations,
                "converged": s.model.converged,
            } for s in self.steps],
        }


def _spec_for(specs, k: int) -> ModelSpec:
    try:
        return specs[k]
    except (KeyError, IndexError):
        raise UsageError(f"no model spec provided for interval {k}") from None


def _check_horizon(dataset: PanelDataset, horizon: int):
    if not 1 <= horizon <= dataset.tau:
        raise UsageError(f"horizon {horizon} outside 1..{dataset.tau}")


def _recursion(dataset: PanelDataset, plan_actions: np.ndarray, horizon: int,
               specs, options: FitOptions, plan_label: str
               ) -> tuple[np.ndarray, IceTrace]:
    """Backward ICE recursion; returns the n x 3 baseline-level predictions."""
    observed = PanelColumns(dataset)
    planned = PanelColumns(dataset, actions=plan_actions)
    yhat = np.full((dataset.n, 3), np.nan)
    steps: list[IceStep] = []

    for k in range(horizon, 0, -1):
        spec = _spec_for(specs, k)
        fit_rows = risk_set(dataset, k, RiskPurpose.OUTCOME_FIT)
        if len(fit_rows) == 0:
            raise DataError(f"no individuals at risk for the fit at interval {k}")
        y_k = dataset.outcomes[fit_rows, k - 1]

        if k == horizon:
            response = y_k
            n_replaced = 0
        else:
            dead_now = y_k == 3
            carried = yhat[fit_rows]
            missing = np.isnan(carried[:, 0]) & ~dead_now
            if missing.any():
                i = fit_rows[int(np.flatnonzero(missing)[0])]
                raise DataError(f"no carried prediction for individual "
                                f"{dataset.ids[i]} at interval {k}")
            response = np.where(dead_now[:, None], TERMINAL_VECTOR, carried)
            n_replaced = int(dead_now.sum())

        X = build_design_columns(spec, observed, fit_rows, k)
        model = fit_multinomial(X, response, options=options)
        require_converged(model, f"ICE step {k} ({plan_label})")

        pred_rows = risk_set(dataset, k, RiskPurpose.PREDICTION)
        X_pred = build_design_columns(spec, planned, pred_rows, k)
        yhat[pred_rows] = predict_multinomial(model, X_pred)
        steps.append(IceStep(k=k, n_fit=len(fit_rows), n_pred=len(pred_rows),
                             n_replaced=n_replaced, model=model))

    trace = IceTrace(horizon=horizon, plan=plan_label, steps=tuple(steps))
    baseline_rows = risk_set(dataset, 1, RiskPurpose.PREDICTION)
    final = np.tile(TERMINAL_VECTOR, (dataset.n, 1))
    final[baseline_rows] = yhat[baseline_rows]
    return final, trace


def ice_proportions(dataset: PanelDataset, plan: ActionPlan, horizon: int,
                    specs, options: FitOptions | None = None
                    ) -> tuple[StateDistribution, IceTrace]:
    """State proportions at `horizon` under an action plan.

    `specs` maps each interval k = 1..horizon to the ModelSpec used for the
    fit at that backward step. Deterministic plans overwrite every action
    column in the prediction designs; the natural course leaves the observed
    actions untouched.
    """
    _check_horizon(dataset, horizon)
    options = options or FitOptions()
    if not plan.is_natural and len(plan) < horizon:
        raise UsageError(f"plan of length {len(plan)} shorter than horizon {horizon}")
    actions = plan.action_matrix(dataset)
    final, trace = _recursion(dataset, actions, horizon, specs, options, str(plan))
    return StateDistribution(final.mean(axis=0)), trace


def ice_psi(dataset: PanelDataset, plan_a: ActionPlan, plan_b: ActionPlan,
            horizon: int, specs, options: FitOptions | None = None) -> PsiResult:
    """Contrast of two plans: intermediate prevalence difference and terminal
    risk difference at `horizon`."""
    props_a, _ = ice_proportions(dataset, plan_a, horizon, specs, options)
    props_b, _ = ice_proportions(dataset, plan_b, horizon, specs, options)
    return PsiResult(
        horizon=horizon,
        proportions_plan_a=props_a,
        proportions_plan_b=props_b,
        psi2=props_a.intermediate - props_b.intermediate,
        psi3=props_a.terminal - props_b.terminal,
    )


def ice_trajectory(dataset: PanelDataset, plan_a: ActionPlan, plan_b: ActionPlan,
                   specs, options: FitOptions | None = None) -> list[PsiResult]:
    """One full ICE contrast per horizon t = 1..tau."""
    return [ice_psi(dataset, plan_a, plan_b, t, specs, options)
            for t in range(1, dataset.tau + 1)]
