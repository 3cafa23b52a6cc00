"""Longitudinal panel data model for a three-state outcome process.

Data are wide: one row per individual, discrete intervals k = 1..tau. The
temporal order within follow-up is

    L_0 -> A_0 -> C_1 -> Y_1 -> L_1 -> A_1 -> ... -> C_tau -> Y_tau

so the covariate process L runs over times 0..tau-1, actions A over 0..tau-1,
and censoring C / outcomes Y over 1..tau. The terminal state (3) is absorbing
and censoring is monotone; `validate_panel` checks both plus the missingness
structure those rules imply.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field

import numpy as np

from .errors import DataError, UsageError


class OutcomeState(enum.IntEnum):
    """Three-state outcome: event-free / intermediate / terminal (absorbing)."""

    EVENT_FREE = 1
    INTERMEDIATE = 2
    TERMINAL = 3


class RiskPurpose(enum.Enum):
    """Which risk set a model fit or prediction operates on."""

    OUTCOME_FIT = "outcome_fit"
    COVARIATE_FIT = "covariate_fit"
    PREDICTION = "prediction"


_ALIVE = (OutcomeState.EVENT_FREE, OutcomeState.INTERMEDIATE)


def _frozen(a: np.ndarray) -> np.ndarray:
    a = np.asarray(a)
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class PanelDataset:
    """Immutable wide-format panel.

    All per-interval arrays are float with NaN marking missing cells.
    Rows are kept in canonical sorted-id order when built through
    `from_arrays`; `take` preserves whatever order it is given (bootstrap
    resamples rely on that).
    """

    ids: np.ndarray                      # (n,)
    tau: int
    outcomes: np.ndarray                 # (n, tau): Y_1..Y_tau
    actions: np.ndarray                  # (n, tau): A_0..A_{tau-1}
    censoring: np.ndarray                # (n, tau): C_1..C_tau
    baseline: dict[str, np.ndarray]      # covariate name -> (n,) L_0 values
    time_varying: dict[str, np.ndarray]  # name -> (n, tau-1): L_1..L_{tau-1}
    covariate_types: dict[str, str]      # binary | continuous | categorical
    categorical_levels: dict[str, tuple] = field(default_factory=dict)
    baseline_state: np.ndarray | None = None   # (n,) Y_0 when recorded

    @classmethod
    def from_arrays(cls, ids, tau, outcomes, actions, censoring, baseline,
                    time_varying, covariate_types, categorical_levels=None,
                    baseline_state=None) -> "PanelDataset":
        """Build a dataset in canonical sorted-id row order."""
        ids = np.asarray(ids)
        order = np.argsort(ids, kind="stable")
        f = np.asarray(outcomes, dtype=float)
        if f.shape != (len(ids), tau):
            raise DataError(f"outcomes must be (n, {tau}), got {f.shape}")
        take = lambda a: _frozen(np.asarray(a, dtype=float)[order])
        return cls(
            ids=_frozen(ids[order]),
            tau=int(tau),
            outcomes=take(outcomes),
            actions=take(actions),
            censoring=take(censoring),
            baseline={k: take(v) for k, v in baseline.items()},
            time_varying={k: take(v) for k, v in time_varying.items()},
            covariate_types=dict(covariate_types),
            categorical_levels=dict(categorical_levels or {}),
            baseline_state=(None if baseline_state is None
                            else take(baseline_state)),
        )

    @property
    def n(self) -> int:
        return len(self.ids)

    @property
    def covariate_names(self) -> tuple[str, ...]:
        return tuple(self.baseline)

    @property
    def time_varying_names(self) -> tuple[str, ...]:
        return tuple(self.time_varying)

    def covariate_at(self, name: str, time: int) -> np.ndarray:
        """Value of covariate `name` at time 0..tau-1 (0 = baseline)."""
        if name not in self.baseline:
            raise DataError(f"unknown covariate {name!r}")
        if time == 0:
            return self.baseline[name]
        if name not in self.time_varying:
            raise DataError(f"covariate {name!r} is time-fixed; "
                            f"cannot reference it at time {time}")
        if not 1 <= time <= self.tau - 1:
            raise DataError(f"covariate time {time} outside 0..{self.tau - 1}")
        return self.time_varying[name][:, time - 1]

    def state_at(self, time: int) -> np.ndarray:
        """Outcome state at time 0..tau (0 = baseline state column)."""
        if time == 0:
            if self.baseline_state is None:
                raise DataError("dataset has no baseline state column")
            return self.baseline_state
        if not 1 <= time <= self.tau:
            raise DataError(f"state time {time} outside 0..{self.tau}")
        return self.outcomes[:, time - 1]

    def alive_at(self, k: int) -> np.ndarray:
        """Alive (state 1 or 2) at time k; everyone counts as alive at 0."""
        if k == 0:
            if self.baseline_state is None:
                return np.ones(self.n, dtype=bool)
            return np.isin(self.baseline_state, _ALIVE)
        y = self.outcomes[:, k - 1]
        return (y == 1) | (y == 2)

    def uncensored_at(self, k: int) -> np.ndarray:
        """C_k == 0; everyone is uncensored at time 0. NaN counts as censored."""
        if k == 0:
            return np.ones(self.n, dtype=bool)
        return self.censoring[:, k - 1] == 0

    def take(self, indices) -> "PanelDataset":
        """Row subset / resample preserving the given index order."""
        idx = np.asarray(indices)
        pick = lambda a: _frozen(a[idx])
        return PanelDataset(
            ids=pick(self.ids),
            tau=self.tau,
            outcomes=pick(self.outcomes),
            actions=pick(self.actions),
            censoring=pick(self.censoring),
            baseline={k: pick(v) for k, v in self.baseline.items()},
            time_varying={k: pick(v) for k, v in self.time_varying.items()},
            covariate_types=self.covariate_types,
            categorical_levels=self.categorical_levels,
            baseline_state=(None if self.baseline_state is None
                            else pick(self.baseline_state)),
        )


@dataclass(frozen=True)
class ActionPlan:
    """Deterministic 0/1 action sequence, or the natural course marker."""

    kind: str                                # "deterministic" | "natural"
    values: tuple[int, ...] | None = None

    def __post_init__(self):
        if self.kind == "deterministic":
            if not self.values or any(v not in (0, 1) for v in self.values):
                raise UsageError("deterministic plan needs 0/1 values")
        elif self.kind == "natural":
            if self.values is not None:
                raise UsageError("natural-course plan carries no values")
        else:
            raise UsageError(f"unknown plan kind {self.kind!r}")

    @classmethod
    def deterministic(cls, values) -> "ActionPlan":
        return cls(kind="deterministic", values=tuple(int(v) for v in values))

    @classmethod
    def natural(cls) -> "ActionPlan":
        return cls(kind="natural")

    @classmethod
    def parse(cls, text: str) -> "ActionPlan":
        text = text.strip().lower()
        if text == "natural":
            return cls.natural()
        try:
            return cls.deterministic(int(v) for v in text.split(","))
        except (ValueError, UsageError) as exc:
            raise UsageError(f"cannot parse action plan {text!r}: "
                             "expected comma-separated 0/1 bits or 'natural'") from exc

    @property
    def is_natural(self) -> bool:
        return self.kind == "natural"

    def __len__(self) -> int:
        return 0 if self.values is None else len(self.values)

    def action_matrix(self, dataset: PanelDataset) -> np.ndarray:
        """(n, tau) action values used when predicting under this plan."""
        if self.is_natural:
            return dataset.actions
        if len(self.values) < dataset.tau:
            raise UsageError(f"plan of length {len(self.values)} is shorter than "
                             f"tau={dataset.tau}")
        return np.tile(np.asarray(self.values[:dataset.tau], dtype=float),
                       (dataset.n, 1))

    def __str__(self) -> str:
        return "natural" if self.is_natural else ",".join(map(str, self.values))


@dataclass(frozen=True)
class StateDistribution:
    """Probability vector over (event-free, intermediate, terminal)."""

    p: np.ndarray

    def __post_init__(self):
        p = np.asarray(self.p, dtype=float)
        if p.shape != (3,):
            raise ValueError(f"state distribution must have 3 entries, got {p.shape}")
        if np.any(p < -1e-12) or np.any(p > 1 + 1e-12):
            raise ValueError(f"probabilities outside [0, 1]: {p}")
        if abs(p.sum() - 1.0) > 1e-10:
            raise ValueError(f"probabilities sum to {p.sum()!r}, not 1")
        object.__setattr__(self, "p", _frozen(p))

    @property
    def event_free(self) -> float:
        return float(self.p[0])

    @property
    def intermediate(self) -> float:
        return float(self.p[1])

    @property
    def terminal(self) -> float:
        return float(self.p[2])

    def __getitem__(self, state: int) -> float:
        return float(self.p[int(state) - 1])


@dataclass(frozen=True)
class PsiResult:
    """Per-horizon state proportions under two plans and their contrast.

    psi2 is the intermediate-state prevalence difference, psi3 the terminal
    risk difference (None for estimators that cannot estimate it). Standard
    errors and Wald intervals are attached by the bootstrap layer.
    """

    horizon: int
    proportions_plan_a: StateDistribution
    proportions_plan_b: StateDistribution
    psi2: float
    psi3: float | None
    se2: float | None = None
    se3: float | None = None
    ci2: tuple[float, float] | None = None
    ci3: tuple[float, float] | None = None

    @property
    def psi1(self) -> float:
        """Event-free difference, implied by the simplex identity."""
        return self.proportions_plan_a.event_free - self.proportions_plan_b.event_free

    def to_dict(self) -> dict:
        out = {
            "horizon": self.horizon,
            "proportions_plan_a": list(map(float, self.proportions_plan_a.p)),
            "proportions_plan_b": list(map(float, self.proportions_plan_b.p)),
            "psi2": self.psi2,
            "psi3": self.psi3,
        }
        for name in ("se2", "se3", "ci2", "ci3"):
            v = getattr(self, name)
            if v is not None:
                out[name] = list(v) if isinstance(v, tuple) else v
        return out


def compose_Z(outcomes, horizon: int) -> OutcomeState:
    """Composite state at `horizon`: terminal if the terminal event happened
    at any time <= horizon, otherwise the state at `horizon`.

    `outcomes` is the per-interval sequence Y_1, Y_2, ... with None/NaN for
    missing entries.
    """
    if horizon < 1:
        raise UsageError("horizon must be >= 1")
    vals = list(outcomes)[:horizon]
    if len(vals) < horizon:
        raise DataError("insufficient follow-up: fewer intervals than horizon")
    for v in vals:
        if v is not None and not (isinstance(v, float) and np.isnan(v)):
            if int(v) == OutcomeState.TERMINAL:
                return OutcomeState.TERMINAL
    last = vals[horizon - 1]
    if last is None or (isinstance(last, float) and np.isnan(last)):
        raise DataError("insufficient follow-up: outcome missing at horizon "
                        f"{horizon} with no prior terminal event")
    return OutcomeState(int(last))


def compose_state_matrix(outcomes: np.ndarray, horizon: int) -> np.ndarray:
    """Vectorized composite state over an (n, >=horizon) outcome matrix."""
    if horizon < 1 or horizon > outcomes.shape[1]:
        raise UsageError(f"horizon {horizon} outside 1..{outcomes.shape[1]}")
    window = outcomes[:, :horizon]
    dead = np.any(window == OutcomeState.TERMINAL, axis=1)
    z = np.where(dead, float(OutcomeState.TERMINAL), window[:, horizon - 1])
    if np.isnan(z).any():
        i = int(np.flatnonzero(np.isnan(z))[0])
        raise DataError(f"insufficient follow-up for row {i} at horizon {horizon}")
    return z


def risk_set(dataset: PanelDataset, k: int, purpose: RiskPurpose) -> np.ndarray:
    """Indices of individuals eligible at interval k for the given purpose.

    OUTCOME_FIT at k: uncensored at k and alive at k-1 (so individuals who
    die exactly at k are included, carrying their terminal outcome).
    COVARIATE_FIT at k: uncensored at k and alive at k.
    PREDICTION at k: uncensored and alive at k-1.
    """
    if not 1 <= k <= dataset.tau:
        raise UsageError(f"interval {k} outside 1..{dataset.tau}")
    purpose = RiskPurpose(purpose)
    if purpose is RiskPurpose.OUTCOME_FIT:
        mask = dataset.uncensored_at(k) & dataset.alive_at(k - 1)
    elif purpose is RiskPurpose.COVARIATE_FIT:
        mask = dataset.uncensored_at(k) & dataset.alive_at(k)
    else:
        mask = dataset.uncensored_at(k - 1) & dataset.alive_at(k - 1)
    return np.flatnonzero(mask)


@dataclass(frozen=True)
class Violation:
    individual: object
    interval: int
    rule: str
    message: str


@dataclass(frozen=True)
class ValidationReport:
    violations: tuple[Violation, ...]

    @property
    def ok(self) -> bool:
        return not self.violations

    def __len__(self) -> int:
        return len(self.violations)

    def summary(self) -> str:
        if self.ok:
            return "no violations"
        lines = [f"{len(self.violations)} violation(s):"]
        for v in self.violations[:50]:
            lines.append(f"  id={v.individual} k={v.interval} [{v.rule}] {v.message}")
        if len(self.violations) > 50:
            lines.append(f"  ... and {len(self.violations) - 50} more")
        return "\n".join(lines)


def validate_panel(dataset: PanelDataset) -> ValidationReport:
    """Check the structural invariants of the panel.

    Violations are data, not failures: the report lists each offending
    (individual, interval, rule) and is empty iff the panel is valid.
    """
    v: list[Violation] = []
    ids, tau = dataset.ids, dataset.tau
    Y, A, C = dataset.outcomes, dataset.actions, dataset.censoring
    obs = lambda a: ~np.isnan(a)

    def flag(mask, interval, rule, message):
        for i in np.flatnonzero(mask):
            v.append(Violation(ids[i], interval, rule, message))

    # Value domains
    for k in range(1, tau + 1):
        flag(obs(Y[:, k - 1]) & ~np.isin(Y[:, k - 1], (1.0, 2.0, 3.0)),
             k, "invalid value", "outcome outside {1,2,3}")
        flag(obs(C[:, k - 1]) & ~np.isin(C[:, k - 1], (0.0, 1.0)),
             k, "invalid value", "censoring indicator outside {0,1}")
    for j in range(tau):
        flag(obs(A[:, j]) & ~np.isin(A[:, j], (0.0, 1.0)),
             j, "invalid value", f"action A_{j} outside {{0,1}}")
    for name, kind in dataset.covariate_types.items():
        times = [0] + ([t for t in range(1, tau)] if name in dataset.time_varying else [])
        for t in times:
            col = dataset.covariate_at(name, t)
            if kind == "binary":
                bad = obs(col) & ~np.isin(col, (0.0, 1.0))
            elif kind == "categorical":
                levels = np.asarray(dataset.categorical_levels.get(name, ()), dtype=float)
                bad = obs(col) & ~np.isin(col, levels)
            else:
                bad = np.isinf(col)
            flag(bad, t, "invalid value", f"covariate {name} ({kind}) out of domain")

    if dataset.baseline_state is not None:
        flag(~np.isin(dataset.baseline_state, (1.0, 2.0)), 0, "invalid baseline state",
             "baseline state must be 1 or 2 (everyone alive at baseline)")

    dead_before = np.zeros(dataset.n, dtype=bool)   # terminal at some j <= k-1
    cens_before = np.zeros(dataset.n, dtype=bool)   # censored at some j <= k-1
    for k in range(1, tau + 1):
        yk, ck = Y[:, k - 1], C[:, k - 1]
        at_risk = ~dead_before & ~cens_before

        flag(cens_before & ~(ck == 1), k, "non-monotone censoring",
             "censoring indicator must stay 1 after loss to follow-up")
        flag(at_risk & np.isnan(ck), k, "missing censoring indicator",
             "censoring indicator absent while at risk")
        cens_by = cens_before | (at_risk & (ck == 1))

        flag(cens_by & obs(yk), k, "data after censoring",
             "outcome recorded at or after censoring")
        flag(dead_before & obs(yk), k, "terminal state not absorbing",
             "outcome recorded after the terminal event")
        flag(at_risk & (ck == 0) & np.isnan(yk), k, "missing outcome while at risk",
             "outcome missing for an uncensored individual at risk")

        dead_by = dead_before | (yk == 3)

        # L_k and A_k are measured after Y_k: both must be missing from the
        # censoring interval on and from the terminal-event interval on.
        lk = ({name: dataset.time_varying[name][:, k - 1]
               for name in dataset.time_varying} if k <= tau - 1 else {})
        ak = A[:, k] if k <= tau - 1 else None
        for name, col in lk.items():
            flag(cens_by & obs(col), k, "data after censoring",
                 f"covariate {name} recorded at or after censoring")
            flag(dead_by & obs(col), k, "terminal state not absorbing",
                 f"covariate {name} recorded at or after the terminal event")
        if ak is not None:
            flag(cens_by & obs(ak), k, "data after censoring",
                 f"action A_{k} recorded at or after censoring")
            flag(dead_by & obs(ak), k, "terminal state not absorbing",
                 f"action A_{k} recorded at or after the terminal event")

        # Monotone missingness: a missing covariate or action while still in
        # follow-up is only tolerable when nothing is observed afterwards.
        in_follow = at_risk & (ck == 0) & ~dead_by
        later_y = obs(Y[:, k:]).any(axis=1) if k < tau else np.zeros(dataset.n, bool)
        if lk:
            later_after_l = later_y.copy()
            if ak is not None:
                later_after_l |= obs(ak)
            for name, col in lk.items():
                flag(in_follow & np.isnan(col) & later_after_l, k, "non-monotone missingness",
                     f"covariate {name} missing at {k} but later data observed")
        if ak is not None:
            flag(in_follow & np.isnan(ak) & later_y, k, "non-monotone missingness",
                 f"action A_{k} missing but later data observed")

        dead_before, cens_before = dead_by, cens_by

    return ValidationReport(tuple(v))
