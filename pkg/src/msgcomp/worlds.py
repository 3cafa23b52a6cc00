"""Small discrete worlds and exact identification oracles.

A DiscreteWorld is a complete discrete data-generating process: one binary
time-varying covariate L, a binary action A, the three-state outcome Y with
terminal state absorbing, and optional monotone censoring. Every transition
probability is an explicit conditional table over the full preceding history,
so two independent computations of a plan's state proportions are available:

* `enumerate_truth` sums over all potential trajectories under forced actions
  (censoring and the action process never enter), and
* `nested_formula_truth` evaluates the iterated conditional expectations of
  the observed-data law, conditioning on being uncensored at each step and
  replacing the dying with the degenerate terminal vector.

Their agreement on positive worlds is the computational check of the
identification argument, and it is also the exact finite-sample oracle for
the ICE estimator: run `nested_formula_truth` on `empirical_world(data)` and
the result matches saturated-spec ICE g-computation to solver precision.

History cells are bit-packed in the fixed order (l_0..l_k, a_0..a_k,
y_1..y_k) with states encoded as y - 1; tables are dense arrays indexed by
the packed cell.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import PositivityError, UsageError
from .panel import ActionPlan, PanelDataset, StateDistribution
from .rng import derive_key, uniforms

_ST_L0 = 0
_ST_Y = 100
_ST_L = 200
_ST_A = 300
_ST_C = 400


def _pack(ls, as_, ys):
    """Packed cell index for history (l_0.., a_0.., y_1..); accepts ints or
    integer arrays. States are encoded as y - 1 (clipped to one bit; packed
    indices are only ever consumed for rows that are alive)."""
    bits = [np.asarray(c).astype(np.int64) for c in ls]
    bits += [np.asarray(c).astype(np.int64) for c in as_]
    bits += [np.minimum(np.asarray(c).astype(np.int64) - 1, 1) for c in ys]
    idx = np.int64(0)
    for pos, c in enumerate(bits):
        idx = idx + (c << pos)
    return idx


def outcome_bits(k: int) -> int:
    """History bits conditioning Y_k (and C_k): l_0..l_{k-1}, a_0..a_{k-1},
    y_1..y_{k-1}."""
    return 3 * k - 1


def covariate_bits(k: int) -> int:
    """History bits conditioning L_k: outcome history plus y_k."""
    return 3 * k


def action_bits(k: int) -> int:
    """History bits conditioning A_k: l_0..l_k, a_0..a_{k-1}, y_1..y_k."""
    return 3 * k + 1


@dataclass(frozen=True)
class DiscreteWorld:
    """Explicit conditional probability tables of a small discrete DGP."""

    tau: int
    p_l0: float
    outcome: tuple[np.ndarray, ...]        # k=1..tau: (2**outcome_bits(k), 3)
    covariate: tuple[np.ndarray, ...]      # k=1..tau-1: (2**covariate_bits(k),)
    action: tuple[np.ndarray, ...]         # k=0..tau-1: (2**action_bits(k),)
    censor: tuple[np.ndarray, ...] | None  # k=1..tau: (2**outcome_bits(k),)

    def __post_init__(self):
        if not 1 <= self.tau:
            raise UsageError("tau must be >= 1")
        if outcome_bits(self.tau) > 12:
            raise UsageError(f"tau={self.tau} needs {outcome_bits(self.tau)} "
                             "history bits; the oracle allows at most 12")
        if len(self.outcome) != self.tau or len(self.covariate) != self.tau - 1 \
                or len(self.action) != self.tau:
            raise UsageError("table count does not match tau")
        for k in range(1, self.tau + 1):
            t = self.outcome[k - 1]
            if t.shape != (2 ** outcome_bits(k), 3):
                raise UsageError(f"outcome table at {k} has shape {t.shape}")
            if np.any(t < 0) or np.any(np.abs(t.sum(axis=1) - 1.0) > 1e-12):
                raise UsageError(f"outcome table rows at {k} must sum to 1")
        if self.censor is not None and len(self.censor) != self.tau:
            raise UsageError("censor table count does not match tau")


def random_world(seed: int, tau: int = 3, censoring: bool = True,
                 p_bounds: tuple[float, float] = (0.25, 0.75),
                 state_floor: float = 0.12,
                 censor_max: float = 0.12) -> DiscreteWorld:
    """Random positive world: all conditional probabilities bounded away from
    0 and 1, so every identification assumption holds by construction."""
    rng = np.random.default_rng(seed)
    lo, hi = p_bounds

    def outcome_table(k):
        raw = rng.uniform(1.0, 4.0, size=(2 ** outcome_bits(k), 3))
        p = raw / raw.sum(axis=1, keepdims=True)
        return state_floor + (1.0 - 3.0 * state_floor) * p

    outcome = tuple(outcome_table(k) for k in range(1, tau + 1))
    covariate = tuple(rng.uniform(lo, hi, size=2 ** covariate_bits(k))
                      for k in range(1, tau))
    action = tuple(rng.uniform(lo, hi, size=2 ** action_bits(k))
                   for k in range(tau))
    censor = (tuple(rng.uniform(0.01, censor_max, size=2 ** outcome_bits(k))
                    for k in range(1, tau + 1)) if censoring else None)
    return DiscreteWorld(tau=tau, p_l0=float(rng.uniform(lo, hi)),
                         outcome=outcome, covariate=covariate, action=action,
                         censor=censor)


def sample_world(world: DiscreteWorld, n: int, seed: int) -> PanelDataset:
    """Draw an observed panel of n individuals from the world."""
    if n < 1:
        raise UsageError("n must be >= 1")
    key = derive_key(seed)
    idx = np.arange(n, dtype=np.int64)
    tau = world.tau

    l_cols = [(uniforms(key, idx, _ST_L0) < world.p_l0).astype(float)]
    a_cols: list[np.ndarray] = []
    y_cols: list[np.ndarray] = []
    c_cols: list[np.ndarray] = []

    for k in range(tau):
        cell = _pack(l_cols[:k + 1], a_cols[:k], y_cols[:k])
        pa = world.action[k][cell]
        a_cols.append((uniforms(key, idx, _ST_A + k) < pa).astype(float))

        cell_y = _pack(l_cols[:k + 1], a_cols[:k + 1], y_cols[:k])
        if world.censor is not None:
            pc = world.censor[k][cell_y]
            c_cols.append((uniforms(key, idx, _ST_C + k + 1) < pc).astype(float))
        else:
            c_cols.append(np.zeros(n))
        rows = world.outcome[k][cell_y]
        u = uniforms(key, idx, _ST_Y + k + 1)
        y = 1.0 + (u >= rows[:, 0]) + (u >= rows[:, 0] + rows[:, 1])
        if k > 0:
            y = np.where(y_cols[k - 1] == 3.0, 3.0, y)
        y_cols.append(y)

        if k + 1 <= tau - 1:
            cell_l = _pack(l_cols[:k + 1], a_cols[:k + 1], y_cols[:k + 1])
            pl = world.covariate[k][cell_l]
            l_cols.append((uniforms(key, idx, _ST_L + k + 1) < pl).astype(float))

    Y = np.column_stack(y_cols)
    A = np.column_stack(a_cols)
    C = np.column_stack(c_cols)
    L = np.column_stack(l_cols[1:]) if tau > 1 else np.empty((n, 0))

    # monotone censoring, then blank everything the process never measures
    for k in range(1, tau):
        C[:, k] = np.where(C[:, k - 1] == 1, 1.0, C[:, k])
    dead_before = np.zeros(n, dtype=bool)
    cens_by = np.zeros(n, dtype=bool)
    for k in range(1, tau + 1):
        cens_by = cens_by | (C[:, k - 1] == 1) & ~dead_before
        C[dead_before, k - 1] = np.nan
        Y[cens_by | dead_before, k - 1] = np.nan
        dead_now = Y[:, k - 1] == 3.0
        dead_cum = dead_before | dead_now
        if k <= tau - 1:
            L[cens_by | dead_cum, k - 1] = np.nan
            A[cens_by | dead_cum, k] = np.nan
        dead_before = dead_cum

    return PanelDataset.from_arrays(
        ids=np.arange(n), tau=tau, outcomes=Y, actions=A, censoring=C,
        baseline={"L": l_cols[0]},
        time_varying={"L": L} if tau > 1 else {},
        covariate_types={"L": "binary"},
    )


def _plan_check(plan: ActionPlan, horizon: int):
    if not plan.is_natural and len(plan) < horizon:
        raise UsageError(f"plan of length {len(plan)} shorter than horizon {horizon}")


def enumerate_truth(world: DiscreteWorld, plan: ActionPlan, horizon: int
                    ) -> StateDistribution:
    """Exact composite-state proportions by exhaustive summation over the
    potential-trajectory law under the plan (no censoring, no action draws
    for deterministic plans)."""
    if not 1 <= horizon <= world.tau:
        raise UsageError(f"horizon {horizon} outside 1..{world.tau}")
    _plan_check(plan, horizon)
    probs = np.zeros(3)

    def actions_at(k, ls, as_, ys):
        if plan.is_natural:
            pa = float(world.action[k][_pack(ls, as_, ys)])
            return ((1, pa), (0, 1.0 - pa))
        return ((plan.values[k], 1.0),)

    def recurse(k, ls, as_, ys, weight):
        # entering interval k with an alive history through k-1
        row = world.outcome[k - 1][_pack(ls, as_, ys)]
        for y in (1, 2, 3):
            w = weight * float(row[y - 1])
            if w == 0.0:
                continue
            if y == 3:
                probs[2] += w
            elif k == horizon:
                probs[y - 1] += w
            else:
                for l in (0, 1):
                    pl = float(world.covariate[k - 1][_pack(ls, as_, ys + [y])])
                    wl = w * (pl if l == 1 else 1.0 - pl)
                    if wl == 0.0:
                        continue
                    for a, pa in actions_at(k, ls + [l], as_, ys + [y]):
                        if wl * pa == 0.0:
                            continue
                        recurse(k + 1, ls + [l], as_ + [a], ys + [y], wl * pa)

    for l0 in (0, 1):
        w0 = world.p_l0 if l0 == 1 else 1.0 - world.p_l0
        if w0 == 0.0:
            continue
        for a0, pa0 in ( ((plan.values[0], 1.0),) if not plan.is_natural else
                         ((1, float(world.action[0][_pack([l0], [], [])])),
                          (0, 1.0 - float(world.action[0][_pack([l0], [], [])]))) ):
            if w0 * pa0 == 0.0:
                continue
            recurse(1, [l0], [a0], [], w0 * pa0)

    return StateDistribution(probs)


def nested_formula_truth(world: DiscreteWorld, plan: ActionPlan, horizon: int
                         ) -> StateDistribution:
    """The identification formula evaluated literally: iterated conditional
    expectations of the observed-data law, conditioning on remaining
    uncensored at every step, with the dying replaced by (0, 0, 1).

    Raises PositivityError naming the cell whenever a conditioning event
    (a forced action, or remaining uncensored) has zero probability.
    """
    if not 1 <= horizon <= world.tau:
        raise UsageError(f"horizon {horizon} outside 1..{world.tau}")
    _plan_check(plan, horizon)

    def force_action(k, ls, as_, ys):
        if plan.is_natural:
            pa = float(world.action[k][_pack(ls, as_, ys)])
            return ((1, pa), (0, 1.0 - pa))
        a = plan.values[k]
        pa = float(world.action[k][_pack(ls, as_, ys)])
        pa = pa if a == 1 else 1.0 - pa
        if pa <= 0.0:
            raise PositivityError(
                f"action {a} at time {k} has zero probability in cell "
                f"(l={ls}, a={as_}, y={ys})")
        return ((a, 1.0),)

    def m(k, ls, as_, ys):
        """E over Z_horizon given alive-uncensored history through k-1."""
        cell = _pack(ls, as_, ys)
        if world.censor is not None:
            pc0 = 1.0 - float(world.censor[k - 1][cell])
            if pc0 <= 0.0:
                raise PositivityError(
                    f"everyone censored at interval {k} in cell "
                    f"(l={ls}, a={as_}, y={ys})")
        row = world.outcome[k - 1][cell]
        out = np.zeros(3)
        for y in (1, 2, 3):
            py = float(row[y - 1])
            if py == 0.0:
                continue
            if y == 3:
                out[2] += py              # the terminal replacement vector
            elif k == horizon:
                out[y - 1] += py
            else:
                acc = np.zeros(3)
                for l in (0, 1):
                    pl = float(world.covariate[k - 1][_pack(ls, as_, ys + [y])])
                    wl = pl if l == 1 else 1.0 - pl
                    if wl == 0.0:
                        continue
                    for a, pa in force_action(k, ls + [l], as_, ys + [y]):
                        if pa == 0.0:
                            continue
                        acc += wl * pa * m(k + 1, ls + [l], as_ + [a], ys + [y])
                out += py * acc
        return out

    total = np.zeros(3)
    for l0 in (0, 1):
        w0 = world.p_l0 if l0 == 1 else 1.0 - world.p_l0
        if w0 == 0.0:
            continue
        for a0, pa0 in force_action(0, [l0], [], []):
            total += w0 * pa0 * m(1, [l0], [a0], [])
    return StateDistribution(total)


def empirical_world(dataset: PanelDataset) -> DiscreteWorld:
    """Conditional-frequency tables of an observed censoring-free sample.

    The resulting world's nested formula is the exact finite-sample oracle
    for saturated-spec ICE g-computation on the same data. Cells with no
    observations get uniform placeholders; they carry zero weight in any
    traversal of the empirical law.
    """
    tau = dataset.tau
    if dataset.time_varying_names not in ((), ("L",)) or \
            "L" not in dataset.covariate_names:
        raise UsageError("empirical worlds need the single binary covariate 'L'")
    if np.nansum(dataset.censoring) > 0:
        raise UsageError("empirical worlds are defined for censoring-free data")

    l_cols = [dataset.baseline["L"]]
    l_cols += [dataset.covariate_at("L", t) for t in range(1, tau)]
    a_cols = [dataset.actions[:, t] for t in range(tau)]
    y_cols = [dataset.outcomes[:, k - 1] for k in range(1, tau + 1)]

    def packed_for(rows, ls, as_, ys):
        return _pack([c[rows] for c in ls], [c[rows] for c in as_],
                     [c[rows] for c in ys])

    def mean_table(n_cells, rows, packed, values):
        num = np.bincount(packed, weights=values[rows], minlength=n_cells)
        den = np.bincount(packed, minlength=n_cells).astype(float)
        out = np.full(n_cells, 0.5)
        out[den > 0] = num[den > 0] / den[den > 0]
        return out

    action = []
    for k in range(tau):
        rows = ~np.isnan(a_cols[k])
        packed = packed_for(rows, l_cols[:k + 1], a_cols[:k], y_cols[:k])
        action.append(mean_table(2 ** action_bits(k), rows, packed, a_cols[k]))

    outcome = []
    for k in range(1, tau + 1):
        rows = ~np.isnan(y_cols[k - 1])
        packed = packed_for(rows, l_cols[:k], a_cols[:k], y_cols[:k - 1])
        n_cells = 2 ** outcome_bits(k)
        tab = np.full((n_cells, 3), 1.0 / 3.0)
        den = np.bincount(packed, minlength=n_cells).astype(float)
        for s in (1, 2, 3):
            num = np.bincount(packed, weights=(y_cols[k - 1][rows] == s).astype(float),
                              minlength=n_cells)
            tab[den > 0, s - 1] = num[den > 0] / den[den > 0]
        outcome.append(tab)

    covariate = []
    for k in range(1, tau):
        rows = ~np.isnan(l_cols[k])
        packed = packed_for(rows, l_cols[:k], a_cols[:k], y_cols[:k])
        covariate.append(mean_table(2 ** covariate_bits(k), rows, packed, l_cols[k]))

    return DiscreteWorld(tau=tau, p_l0=float(np.mean(l_cols[0])),
                         outcome=tuple(outcome), covariate=tuple(covariate),
                         action=tuple(action), censor=None)
