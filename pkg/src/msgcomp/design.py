"""Declarative model specifications and design-matrix construction.

A ModelSpec maps covariate/action/state histories to numeric design columns.
Lags are relative to the modeled variable: for a model of Y_k ("outcome" role)
lag 0 means the most recent measurement preceding Y_k in temporal order, so
action lag 0 is A_{k-1}, covariate lag 0 is L_{k-1}, state lag 0 is Y_{k-1}.
For a model of L_k ("covariate" role) the state process has already advanced,
so state lag 0 is Y_k, covariate lag 1 is L_{k-1}, and covariate lag 0 refers
to a same-interval covariate drawn earlier in the declared order.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field

import numpy as np

from .errors import DataError, UsageError
from .panel import PanelDataset

_SOURCES = ("baseline", "covariate", "action", "state", "interaction")
_TRANSFORMS = ("identity", "indicators", "rq_spline")


@dataclass(frozen=True)
class TermSpec:
    """One model term: a data source plus a basis transform."""

    source: str
    name: str | None = None
    lag: int = 0
    transform: str = "identity"
    knots: tuple[float, ...] | None = None
    omit: float | None = None                       # omitted indicator level
    levels: tuple[float, ...] | None = None         # explicit indicator levels
    factors: tuple["TermSpec", ...] | None = None   # interaction product

    def __post_init__(self):
        if self.source not in _SOURCES:
            raise UsageError(f"unknown term source {self.source!r}")
        if self.transform not in _TRANSFORMS:
            raise UsageError(f"unknown transform {self.transform!r}")
        if self.lag < 0:
            raise UsageError("lag must be >= 0")
        if self.source in ("baseline", "covariate") and not self.name:
            raise UsageError(f"{self.source} term needs a covariate name")
        if self.transform == "rq_spline":
            if self.knots is None or len(self.knots) < 3:
                raise UsageError("rq_spline needs at least 3 knots")
            if np.any(np.diff(self.knots) <= 0):
                raise UsageError("rq_spline knots must be strictly increasing")
        if self.source == "interaction":
            if not self.factors or len(self.factors) < 2:
                raise UsageError("interaction needs at least 2 factors")
            for f in self.factors:
                if f.source == "interaction" or f.transform != "identity":
                    raise UsageError("interaction factors must be atomic identity terms")

    def describe(self) -> str:
        if self.source == "interaction":
            return " * ".join(f.describe() for f in self.factors)
        base = {"baseline": f"L0[{self.name}]",
                "covariate": f"{self.name}(lag {self.lag})",
                "action": f"A(lag {self.lag})",
                "state": f"Y(lag {self.lag})"}[self.source]
        if self.transform != "identity":
            base += f":{self.transform}"
        return base

    def to_dict(self) -> dict:
        out = {"source": self.source}
        if self.name is not None:
            out["name"] = self.name
        if self.source not in ("baseline", "interaction"):
            out["lag"] = self.lag
        if self.transform != "identity":
            out["transform"] = self.transform
        if self.knots is not None:
            out["knots"] = list(self.knots)
        if self.omit is not None:
            out["omit"] = self.omit
        if self.levels is not None:
            out["levels"] = list(self.levels)
        if self.factors is not None:
            out["factors"] = [f.to_dict() for f in self.factors]
        return out

    @classmethod
    def from_dict(cls, d: dict) -> "TermSpec":
        kw = dict(d)
        if "knots" in kw:
            kw["knots"] = tuple(kw["knots"])
        if "levels" in kw:
            kw["levels"] = tuple(kw["levels"])
        if "factors" in kw:
            kw["factors"] = tuple(cls.from_dict(f) for f in kw["factors"])
        return cls(**kw)


@dataclass(frozen=True)
class ModelSpec:
    """Ordered term list; the intercept is always included first."""

    terms: tuple[TermSpec, ...] = ()

    def to_dict(self) -> dict:
        return {"terms": [t.to_dict() for t in self.terms]}

    @classmethod
    def from_dict(cls, d: dict) -> "ModelSpec":
        return cls(terms=tuple(TermSpec.from_dict(t) for t in d.get("terms", ()))) \
            if isinstance(d, dict) else cls(terms=tuple(TermSpec.from_dict(t) for t in d))

    def column_names(self) -> list[str]:
        names = ["(intercept)"]
        for t in self.terms:
            if t.transform == "identity":
                names.append(t.describe())
            elif t.transform == "indicators":
                names.append(t.describe())
            else:
                names.extend(f"{t.describe()}[{j}]" for j in range(len(t.knots) - 1))
        return names

    def action_lags(self) -> list[TermSpec]:
        """All atomic action references, including inside interactions."""
        out = []
        for t in self.terms:
            if t.source == "action":
                out.append(t)
            elif t.source == "interaction":
                out.extend(f for f in t.factors if f.source == "action")
        return out


def rq_spline_basis(x, knots) -> np.ndarray:
    """Restricted quadratic spline basis: K knots -> K-1 columns.

    Column 0 is the identity; column j (j = 1..K-2) is
    (x - knots[j])_+^2 - (x - knots[K-1])_+^2, which keeps the span linear
    beyond the last knot while remaining C1 everywhere.
    """
    knots = np.asarray(knots, dtype=float)
    if knots.ndim != 1 or len(knots) < 3:
        raise UsageError("rq_spline_basis needs at least 3 knots")
    if np.any(np.diff(knots) <= 0):
        raise UsageError("knots must be strictly increasing")
    x = np.asarray(x, dtype=float)
    scalar = x.ndim == 0
    x = np.atleast_1d(x)
    K = len(knots)
    cols = [x]
    last = np.clip(x - knots[-1], 0.0, None) ** 2
    for j in range(1, K - 1):
        cols.append(np.clip(x - knots[j], 0.0, None) ** 2 - last)
    out = np.column_stack(cols)
    return out[0] if scalar else out


def quantile_knots(values, probs=(0.05, 0.35, 0.65, 0.95)) -> tuple[float, ...]:
    """Default knot placement at the given quantiles of the observed values."""
    vals = np.asarray(values, dtype=float)
    vals = vals[~np.isnan(vals)]
    knots = np.quantile(vals, probs)
    if np.any(np.diff(knots) <= 0):
        raise UsageError("quantile knots are not strictly increasing; "
                         "supply knots explicitly")
    return tuple(float(k) for k in knots)


class PanelColumns:
    """Adapter exposing a PanelDataset to the design builder.

    `actions` optionally overrides the observed action matrix (used when
    predicting under an action plan).
    """

    def __init__(self, dataset: PanelDataset, actions: np.ndarray | None = None):
        self._d = dataset
        self._actions = dataset.actions if actions is None else np.asarray(actions, float)

    @property
    def n(self) -> int:
        return self._d.n

    def label(self, i: int):
        return self._d.ids[i]

    def covariate(self, name: str, time: int) -> np.ndarray:
        return self._d.covariate_at(name, time)

    def action(self, time: int) -> np.ndarray:
        if not 0 <= time <= self._d.tau - 1:
            raise DataError(f"action time {time} outside 0..{self._d.tau - 1}")
        return self._actions[:, time]

    def state(self, time: int) -> np.ndarray:
        return self._d.state_at(time)

    def covariate_type(self, name: str) -> str:
        try:
            return self._d.covariate_types[name]
        except KeyError:
            raise DataError(f"unknown covariate {name!r}") from None

    def declared_levels(self, name: str):
        return self._d.categorical_levels.get(name)


def _resolve_time(term: TermSpec, k: int, role: str) -> int:
    if term.source == "baseline":
        return 0
    if term.source == "action":
        return k - 1 - term.lag
    if term.source == "covariate":
        return (k - 1 - term.lag) if role == "outcome" else (k - term.lag)
    # state
    return (k - 1 - term.lag) if role == "outcome" else (k - term.lag)


def _atomic_values(term: TermSpec, cols, k: int, role: str) -> np.ndarray:
    time = _resolve_time(term, k, role)
    if time < 0:
        raise UsageError(f"term {term.describe()} at interval {k} references "
                         "data before baseline")
    if term.source == "baseline":
        return cols.covariate(term.name, 0)
    if term.source == "action":
        return cols.action(time)
    if term.source == "covariate":
        return cols.covariate(term.name, time)
    return cols.state(time)


def _indicator_levels(term: TermSpec, cols, values_full: np.ndarray):
    if term.levels is not None:
        return list(term.levels)
    if term.source in ("baseline", "covariate"):
        declared = cols.declared_levels(term.name)
        if declared:
            return list(declared)
    seen = values_full[~np.isnan(values_full)]
    # first-observed order keeps the omitted-level default deterministic
    _, first_pos = np.unique(seen, return_index=True)
    return [float(v) for v in seen[np.sort(first_pos)]]


def build_design_columns(spec: ModelSpec, cols, rows, k: int,
                         role: str = "outcome") -> np.ndarray:
    """Design matrix (len(rows) x p) against an arbitrary column adapter."""
    rows = np.asarray(rows)
    out = [np.ones(len(rows))]
    for term in spec.terms:
        if term.source == "interaction":
            col = np.ones(len(rows))
            for f in term.factors:
                col = col * _fetch(f, cols, rows, k, role)
            out.append(col)
            continue
        vals = _fetch(term, cols, rows, k, role, full=True)
        sub = vals[rows]
        if term.transform == "identity":
            out.append(sub)
        elif term.transform == "indicators":
            levels = _indicator_levels(term, cols, vals)
            if len(levels) < 2:
                raise UsageError(f"indicator term {term.describe()} has "
                                 f"{len(levels)} level(s)")
            omitted = term.omit if term.omit is not None else levels[0]
            if omitted not in levels:
                raise UsageError(f"omitted level {omitted!r} not among levels "
                                 f"{levels} for {term.describe()}")
            for lev in levels:
                if lev != omitted:
                    out.append((sub == lev).astype(float))
        else:
            basis = rq_spline_basis(sub, term.knots)
            out.extend(basis[:, j] for j in range(basis.shape[1]))
    return np.column_stack(out)


def _fetch(term: TermSpec, cols, rows, k, role, full: bool = False) -> np.ndarray:
    vals = _atomic_values(term, cols, k, role)
    sub = vals[rows]
    if np.isnan(sub).any():
        i = rows[int(np.flatnonzero(np.isnan(sub))[0])]
        raise DataError(f"missing value for {term.describe()} at interval {k} "
                        f"(individual {cols.label(i)}, lag {term.lag})")
    return vals if full else sub


def build_design(spec: ModelSpec, dataset: PanelDataset, rows, k: int, *,
                 actions: np.ndarray | None = None,
                 role: str = "outcome") -> np.ndarray:
    """Design matrix for the given rows with history conditioned at interval k.

    The first column is the intercept; column order follows the term list and
    is deterministic given the data schema.
    """
    if role not in ("outcome", "covariate"):
        raise UsageError(f"unknown design role {role!r}")
    return build_design_columns(spec, PanelColumns(dataset, actions), rows, k, role)


def saturated_spec(covariates, k: int, *, include_prior_states: bool = False,
                   role: str = "outcome", max_bits: int = 12) -> ModelSpec:
    """Full-interaction basis over a small binary history at interval k.

    The design spans every cell of the (A_0..A_{k-1}, L_0..L_{k-1}[, Y_1..
    Y_{k-1}]) history, which makes a multinomial fit nonparametric on discrete
    worlds. With role="covariate" (a model for L_k) the state history extends
    through the current interval's Y_k. Guarded against cell explosion at
    `max_bits` history bits.
    """
    if role not in ("outcome", "covariate"):
        raise UsageError(f"unknown design role {role!r}")
    covariates = list(covariates)
    state_times = range(1, k) if role == "outcome" else range(1, k + 1)
    lag_of = (lambda t: k - 1 - t) if role == "outcome" else (lambda t: k - t)
    atoms: list[TermSpec] = []
    for t in range(k):
        atoms.append(TermSpec(source="action", lag=k - 1 - t))
    for name in covariates:
        for t in range(k):
            if t == 0:
                atoms.append(TermSpec(source="baseline", name=name))
            else:
                atoms.append(TermSpec(source="covariate", name=name, lag=lag_of(t)))
    if include_prior_states:
        for t in state_times:
            atoms.append(TermSpec(source="state", lag=lag_of(t)))
    if len(atoms) > max_bits:
        raise UsageError(f"saturated history has {len(atoms)} binary columns; "
                         f"the guard allows at most {max_bits}")
    terms: list[TermSpec] = []
    for size in range(1, len(atoms) + 1):
        for combo in itertools.combinations(range(len(atoms)), size):
            if size == 1:
                terms.append(atoms[combo[0]])
            else:
                terms.append(TermSpec(source="interaction",
                                      factors=tuple(atoms[i] for i in combo)))
    return ModelSpec(terms=tuple(terms))
