"""Naive comparator estimators from the simulation study.

Both are deliberately deficient readings of the estimation problem:

* `alt1_baseline_psi` is a multistate g-computation that intervenes only on
  the baseline action (an intent-to-treat style estimator aimed at a
  per-protocol parameter). It runs the full ICE recursion with the terminal
  pseudo-outcome replacement, but the model specs may reference no action
  beyond A_0, and only the baseline action column is set when predicting.

* `alt2_censor_terminal_psi` accounts for time-varying confounding but treats
  the terminal event as censoring: individuals leave every fit population
  from their death interval onward and a binary recursion tracks only the
  intermediate state, so no terminal risk is estimated (psi3 is absent, not
  zero).
"""

from __future__ import annotations

import numpy as np

from .design import ModelSpec, PanelColumns, build_design_columns
from .errors import DataError, UsageError
from .glm import FitOptions, fit_logistic, predict_logistic, require_converged
from .ice import _recursion, _spec_for
from .panel import ActionPlan, PanelDataset, PsiResult, RiskPurpose, \
    StateDistribution, risk_set


def _require_baseline_only_actions(specs, horizon: int):
    for k in range(1, horizon + 1):
        spec = _spec_for(specs, k)
        for term in spec.action_lags():
            if term.lag != k - 1:
                raise UsageError(
                    f"alternative estimator 1 allows only the baseline action "
                    f"in designs; spec at interval {k} references action lag "
                    f"{term.lag} (time {k - 1 - term.lag})")


def alt1_baseline_psi(dataset: PanelDataset, a0: int, a0_prime: int,
                      horizon: int, specs,
                      options: FitOptions | None = None) -> PsiResult:
    """Baseline-action-only multistate g-computation contrast.

    `specs` must reference only A_0 among actions (covariate and prior-state
    terms are unrestricted and enter at their observed values).
    """
    if a0 not in (0, 1) or a0_prime not in (0, 1):
        raise UsageError("baseline actions must be 0 or 1")
    if not 1 <= horizon <= dataset.tau:
        raise UsageError(f"horizon {horizon} outside 1..{dataset.tau}")
    options = options or FitOptions()
    _require_baseline_only_actions(specs, horizon)

    def run(a_base: int) -> StateDistribution:
        actions = dataset.actions.copy()
        actions[:, 0] = float(a_base)
        final, _ = _recursion(dataset, actions, horizon, specs, options,
                              f"baseline a0={a_base}")
        return StateDistribution(final.mean(axis=0))

    props_a = run(a0)
    props_b = run(a0_prime)
    return PsiResult(
        horizon=horizon,
        proportions_plan_a=props_a,
        proportions_plan_b=props_b,
        psi2=props_a.intermediate - props_b.intermediate,
        psi3=props_a.terminal - props_b.terminal,
    )


def _binary_recursion(dataset: PanelDataset, plan_actions: np.ndarray,
                      horizon: int, specs, options: FitOptions,
                      label: str) -> np.ndarray:
    """ICE recursion for the intermediate state with deaths handled as
    censoring: the dead leave every fit population from their death interval
    onward."""
    observed = PanelColumns(dataset)
    planned = PanelColumns(dataset, actions=plan_actions)
    yhat = np.full(dataset.n, np.nan)

    for k in range(horizon, 0, -1):
        spec = _spec_for(specs, k)
        # uncensored at k and alive at k: exactly the covariate-fit risk set,
        # i.e. the outcome-fit population with deaths-at-k removed
        fit_rows = risk_set(dataset, k, RiskPurpose.COVARIATE_FIT)
        if len(fit_rows) == 0:
            raise DataError(f"no individuals at risk for the fit at interval {k}")
        if k == horizon:
            response = (dataset.outcomes[fit_rows, k - 1] == 2).astype(float)
        else:
            response = yhat[fit_rows]
            if np.isnan(response).any():
                i = fit_rows[int(np.flatnonzero(np.isnan(response))[0])]
                raise DataError(f"no carried prediction for individual "
                                f"{dataset.ids[i]} at interval {k}")
        X = build_design_columns(spec, observed, fit_rows, k)
        model = fit_logistic(X, response, options=options)
        require_converged(model, f"terminal-censoring step {k} ({label})")
        pred_rows = risk_set(dataset, k, RiskPurpose.PREDICTION)
        X_pred = build_design_columns(spec, planned, pred_rows, k)
        yhat[pred_rows] = predict_logistic(model, X_pred)

    baseline_rows = risk_set(dataset, 1, RiskPurpose.PREDICTION)
    final = np.zeros(dataset.n)
    final[baseline_rows] = yhat[baseline_rows]
    return final


def alt2_censor_terminal_psi(dataset: PanelDataset, plan_a: ActionPlan,
                             plan_b: ActionPlan, horizon: int, specs,
                             options: FitOptions | None = None) -> PsiResult:
    """Terminal-event-as-censoring ICE contrast; estimates only psi2.

    The returned proportions place zero mass on the terminal state (the
    estimator assumes no one dies) and the psi3 fields are absent.
    """
    if not 1 <= horizon <= dataset.tau:
        raise UsageError(f"horizon {horizon} outside 1..{dataset.tau}")
    options = options or FitOptions()

    def run(plan: ActionPlan) -> StateDistribution:
        if not plan.is_natural and len(plan) < horizon:
            raise UsageError(f"plan of length {len(plan)} shorter than "
                             f"horizon {horizon}")
        m = _binary_recursion(dataset, plan.action_matrix(dataset), horizon,
                              specs, options, str(plan)).mean()
        return StateDistribution(np.array([1.0 - m, m, 0.0]))

    props_a = run(plan_a)
    props_b = run(plan_b)
    return PsiResult(
        horizon=horizon,
        proportions_plan_a=props_a,
        proportions_plan_b=props_b,
        psi2=props_a.intermediate - props_b.intermediate,
        psi3=None,
    )
