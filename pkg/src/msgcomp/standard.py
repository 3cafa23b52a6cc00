"""Standard (Monte Carlo) g-computation.

Sequential outcome and covariate models are fit on their interval risk sets,
then a synthetic cohort of B trajectories is simulated forward under the
action plan: baseline covariates resampled with replacement from the observed
data, states drawn from the fitted multinomial at each interval, covariates
drawn from their fitted models among survivors. The terminal state is
absorbing; downstream values of dead trajectories stay missing.

All randomness is addressed by (seed, trajectory, stage) through the
counter-based generator, so chunking and worker partitioning cannot change a
single draw, and two plans simulated from the same seed share their uniforms
(common random numbers) unless independent streams are requested.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .design import ModelSpec, build_design_columns
from .errors import DataError, UsageError
from .glm import FitOptions, FittedBinary, FittedMultinomial, fit_logistic, \
    fit_multinomial, predict_logistic, predict_multinomial, require_converged
from .panel import ActionPlan, PanelDataset, PsiResult, RiskPurpose, \
    StateDistribution, compose_state_matrix, risk_set
from .rng import derive_key, integers, uniforms


@dataclass(frozen=True)
class MonteCarloConfig:
    """Synthetic-cohort size and seed. The paper-scale default is B=100,000."""

    B: int = 100_000
    seed: int = 0

    def __post_init__(self):
        if self.B < 1:
            raise UsageError("B must be >= 1")


@dataclass(frozen=True)
class SequentialModels:
    """Fitted interval models plus the specs that produced them."""

    tau: int
    outcome_models: dict[int, FittedMultinomial]
    covariate_models: dict[str, dict[int, FittedBinary]]
    outcome_specs: dict[int, ModelSpec]
    covariate_specs: dict[str, dict[int, ModelSpec]]
    covariate_order: tuple[str, ...]


@dataclass
class SimulatedCohort:
    """Synthetic trajectories: states/actions over intervals, covariates over
    times 0..tau-1, and the baseline resample indices."""

    states: np.ndarray                    # (B, tau), NaN after death
    actions: np.ndarray                   # (B, tau), NaN after death
    covariates: dict[str, np.ndarray]     # name -> (B, tau) with col 0 = baseline
    baseline_state: np.ndarray | None
    baseline_index: np.ndarray            # (B,) rows resampled from the data


class _SimColumns:
    """Design-column adapter over the synthetic arrays of one chunk."""

    def __init__(self, cohort_slice: SimulatedCohort, source: PanelDataset):
        self._c = cohort_slice
        self._src = source

    @property
    def n(self) -> int:
        return self._c.states.shape[0]

    def label(self, i: int):
        return f"synthetic:{i}"

    def covariate(self, name: str, time: int) -> np.ndarray:
        try:
            return self._c.covariates[name][:, time]
        except (KeyError, IndexError):
            raise DataError(f"synthetic covariate {name!r} at time {time} "
                            "not available") from None

    def action(self, time: int) -> np.ndarray:
        return self._c.actions[:, time]

    def state(self, time: int) -> np.ndarray:
        if time == 0:
            if self._c.baseline_state is None:
                raise DataError("no baseline state column to reference")
            return self._c.baseline_state
        return self._c.states[:, time - 1]

    def covariate_type(self, name: str) -> str:
        return self._src.covariate_types[name]

    def declared_levels(self, name: str):
        return self._src.categorical_levels.get(name)


def fit_sequential(dataset: PanelDataset, outcome_specs, covariate_specs,
                   options: FitOptions | None = None) -> SequentialModels:
    """Fit the interval outcome models (k = 1..tau) and covariate models
    (k = 1..tau-1) on their respective risk sets."""
    options = options or FitOptions()
    tau = dataset.tau
    outcome_specs = dict(outcome_specs)
    covariate_specs = {name: dict(per_k) for name, per_k in
                       (covariate_specs or {}).items()}

    needed = [n for n in dataset.time_varying_names if n in covariate_specs]
    for name in covariate_specs:
        if name not in dataset.time_varying_names:
            raise UsageError(f"covariate spec given for {name!r}, which is not "
                             "a time-varying covariate")
        if dataset.covariate_types[name] != "binary":
            raise UsageError(f"time-varying covariate {name!r} is "
                             f"{dataset.covariate_types[name]}; only binary "
                             "covariates can be simulated")

    outcome_models: dict[int, FittedMultinomial] = {}
    for k in range(1, tau + 1):
        spec = outcome_specs.get(k)
        if spec is None:
            raise UsageError(f"no outcome spec for interval {k}")
        rows = risk_set(dataset, k, RiskPurpose.OUTCOME_FIT)
        if len(rows) == 0:
            raise DataError(f"no individuals at risk for the outcome fit at {k}")
        X = build_design_columns(spec, _panel_cols(dataset), rows, k)
        model = fit_multinomial(X, dataset.outcomes[rows, k - 1], options=options)
        require_converged(model, f"outcome model at interval {k}")
        outcome_models[k] = model

    covariate_models: dict[str, dict[int, FittedBinary]] = {n: {} for n in needed}
    for k in range(1, tau):
        rows = risk_set(dataset, k, RiskPurpose.COVARIATE_FIT)
        if needed and len(rows) == 0:
            raise DataError(f"no individuals at risk for covariate fits at {k}")
        for name in needed:
            spec = covariate_specs[name].get(k)
            if spec is None:
                raise UsageError(f"no spec for covariate {name!r} at interval {k}")
            X = build_design_columns(spec, _panel_cols(dataset), rows, k,
                                     role="covariate")
            model = fit_logistic(X, dataset.covariate_at(name, k)[rows],
                                 options=options)
            require_converged(model, f"covariate model {name!r} at interval {k}")
            covariate_models[name][k] = model

    return SequentialModels(tau=tau, outcome_models=outcome_models,
                            covariate_models=covariate_models,
                            outcome_specs=outcome_specs,
                            covariate_specs=covariate_specs,
                            covariate_order=tuple(needed))


def _panel_cols(dataset: PanelDataset):
    from .design import PanelColumns
    return PanelColumns(dataset)


def _stage_offsets(tau: int, names: tuple[str, ...]):
    """Fixed stage ids per (interval, draw); stage 0 is the baseline resample."""
    per_k = 1 + len(names)
    state_stage = {k: 1 + (k - 1) * per_k for k in range(1, tau + 1)}
    cov_stage = {(k, name): 1 + (k - 1) * per_k + 1 + j
                 for k in range(1, tau + 1) for j, name in enumerate(names)}
    return state_stage, cov_stage


def simulate_cohort(models: SequentialModels, dataset: PanelDataset,
                    plan: ActionPlan, mc: MonteCarloConfig, *, stream: int = 0,
                    chunk_size: int = 200_000) -> SimulatedCohort:
    """Forward-simulate B trajectories under a deterministic plan.

    Chunked to bound memory; results are independent of the chunk size by the
    counter-based seeding contract.
    """
    if plan.is_natural:
        raise UsageError("natural-course plans are unsupported for standard "
                         "g-computation; use the ICE estimator")
    tau = models.tau
    if len(plan) < tau:
        raise UsageError(f"plan of length {len(plan)} shorter than tau={tau}")
    key = derive_key(mc.seed, stream)
    names = models.covariate_order
    state_stage, cov_stage = _stage_offsets(tau, names)

    B = mc.B
    states = np.full((B, tau), np.nan)
    actions = np.full((B, tau), np.nan)
    covs = {name: np.full((B, tau), np.nan) for name in dataset.covariate_names}
    base_state_all = (np.full(B, np.nan) if dataset.baseline_state is not None
                      else None)
    base_idx_all = np.empty(B, dtype=np.int64)

    for lo in range(0, B, chunk_size):
        hi = min(lo + chunk_size, B)
        idx = np.arange(lo, hi, dtype=np.int64)
        b = hi - lo
        base_idx = integers(key, idx, 0, dataset.n)
        base_idx_all[lo:hi] = base_idx

        chunk = SimulatedCohort(
            states=np.full((b, tau), np.nan),
            actions=np.full((b, tau), np.nan),
            covariates={name: np.full((b, tau), np.nan)
                        for name in dataset.covariate_names},
            baseline_state=(dataset.baseline_state[base_idx]
                            if dataset.baseline_state is not None else None),
            baseline_index=base_idx,
        )
        for name in dataset.covariate_names:
            chunk.covariates[name][:, 0] = dataset.baseline[name][base_idx]

        cols = _SimColumns(chunk, dataset)
        alive = np.ones(b, dtype=bool)
        for k in range(1, tau + 1):
            rows = np.flatnonzero(alive)
            if len(rows) == 0:
                break
            chunk.actions[rows, k - 1] = plan.values[k - 1]
            X = build_design_columns(models.outcome_specs[k], cols, rows, k)
            probs = predict_multinomial(models.outcome_models[k], X)
            u = uniforms(key, idx[rows], state_stage[k])
            drawn = 1.0 + (u >= probs[:, 0]) + (u >= probs[:, 0] + probs[:, 1])
            chunk.states[rows, k - 1] = drawn
            alive_rows = rows[drawn != 3.0]
            alive = np.zeros(b, dtype=bool)
            alive[alive_rows] = True
            if k <= tau - 1:
                for name in names:
                    Xc = build_design_columns(models.covariate_specs[name][k],
                                              cols, alive_rows, k, role="covariate")
                    pc = predict_logistic(models.covariate_models[name][k], Xc)
                    uc = uniforms(key, idx[alive_rows], cov_stage[(k, name)])
                    chunk.covariates[name][alive_rows, k] = (uc < pc).astype(float)

        states[lo:hi] = chunk.states
        actions[lo:hi] = chunk.actions
        for name in dataset.covariate_names:
            covs[name][lo:hi] = chunk.covariates[name]
        if base_state_all is not None:
            base_state_all[lo:hi] = chunk.baseline_state

    return SimulatedCohort(states=states, actions=actions, covariates=covs,
                           baseline_state=base_state_all,
                           baseline_index=base_idx_all)


def cohort_proportions(cohort: SimulatedCohort, horizon: int) -> StateDistribution:
    """Composite-state proportions of a simulated cohort at `horizon`."""
    z = compose_state_matrix(cohort.states, horizon)
    counts = np.array([(z == s).sum() for s in (1.0, 2.0, 3.0)], dtype=float)
    return StateDistribution(counts / len(z))


def standard_proportions(dataset: PanelDataset, plan: ActionPlan, horizon: int,
                         outcome_specs, covariate_specs,
                         mc: MonteCarloConfig | None = None,
                         options: FitOptions | None = None,
                         models: SequentialModels | None = None,
                         stream: int = 0) -> StateDistribution:
    """Fit, simulate under `plan`, and return composite-state proportions."""
    if not 1 <= horizon <= dataset.tau:
        raise UsageError(f"horizon {horizon} outside 1..{dataset.tau}")
    mc = mc or MonteCarloConfig()
    if models is None:
        models = fit_sequential(dataset, outcome_specs, covariate_specs, options)
    cohort = simulate_cohort(models, dataset, plan, mc, stream=stream)
    return cohort_proportions(cohort, horizon)


def standard_psi(dataset: PanelDataset, plan_a: ActionPlan, plan_b: ActionPlan,
                 horizon: int, outcome_specs, covariate_specs,
                 mc: MonteCarloConfig | None = None,
                 options: FitOptions | None = None,
                 common_random_numbers: bool = True) -> PsiResult:
    """Contrast two deterministic plans with one model fit and two simulated
    cohorts.

    With common random numbers (the default) the two cohorts share all
    uniforms, so identical plans give a contrast of exactly (0, 0) and the
    Monte Carlo noise largely cancels from the contrast.
    """
    for plan in (plan_a, plan_b):
        if plan.is_natural:
            raise UsageError("natural-course plans are unsupported for "
                             "standard g-computation; use the ICE estimator")
    mc = mc or MonteCarloConfig()
    models = fit_sequential(dataset, outcome_specs, covariate_specs, options)
    props_a = standard_proportions(dataset, plan_a, horizon, outcome_specs,
                                   covariate_specs, mc, options, models=models,
                                   stream=0)
    props_b = standard_proportions(dataset, plan_b, horizon, outcome_specs,
                                   covariate_specs, mc, options, models=models,
                                   stream=0 if common_random_numbers else 1)
    return PsiResult(
        horizon=horizon,
        proportions_plan_a=props_a,
        proportions_plan_b=props_b,
        psi2=props_a.intermediate - props_b.intermediate,
        psi3=props_a.terminal - props_b.terminal,
    )
