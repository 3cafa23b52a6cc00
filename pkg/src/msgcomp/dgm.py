"""Simulation-study data-generating mechanism over three intervals.

One binary time-varying confounder L, a binary action A, a three-state
outcome Y with the terminal state absorbing, and monotone loss to follow-up
driven by the prior action. Potential outcomes are generated for every action
history and the observed data are selected through causal consistency, so the
sampler and the truth computation share a single mechanism: under the same
seed, the potential trajectory a sampled individual would have under a forced
plan is exactly the trajectory the truth oracle generates.

State probabilities come from exp(eta_state) / sum(exp(eta)) with the
event-free predictor held at the constant reference value (1.0, not 0) and
the intermediate/terminal predictors linear in the previous action, the
previous confounder, and the numeric value of the previous state (1 or 2).

The terminal-event predictor at the third interval uses the second-interval
action (a_1); set `eta3_k3_action_lag=2` to switch it to a_2.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import UsageError
from .panel import ActionPlan, PanelDataset, StateDistribution
from .rng import derive_key, uniforms

TAU = 3

# stage ids for the counter-based generator, one per elementary draw
_ST_L0 = 0
_ST_A = {0: 1, 1: 2, 2: 3}
_ST_C = {1: 4, 2: 5, 3: 6}
_ST_L1 = {a0: 8 + a0 for a0 in range(2)}
_ST_L2 = {(a0, a1): 10 + a0 + 2 * a1 for a0 in range(2) for a1 in range(2)}
_ST_Y1 = {a0: 16 + a0 for a0 in range(2)}
_ST_Y2 = {(a0, a1): 18 + a0 + 2 * a1 for a0 in range(2) for a1 in range(2)}
_ST_Y3 = {(a0, a1, a2): 24 + a0 + 2 * a1 + 4 * a2
          for a0 in range(2) for a1 in range(2) for a2 in range(2)}


def expit(x):
    return 1.0 / (1.0 + np.exp(-np.asarray(x, dtype=float)))


@dataclass(frozen=True)
class DGMConfig:
    """Coefficients of the generating mechanism; defaults are the study values."""

    l0_prob: float = 0.5
    # L_k ~ Bernoulli(expit(c0 + c_a * a_{k-1} + c_l * L_{k-1})), k = 1, 2
    l_coef: tuple[tuple[float, float, float], ...] = ((-1.0, -1.0, 1.0),
                                                      (-1.0, -1.0, 1.0))
    # A_0 ~ Bernoulli(expit(c0 + c_l * L_0))
    a0_coef: tuple[float, float] = (1.0, -2.0)
    # A_k ~ Bernoulli(expit(c0 + c_l * L_k + c_a * A_{k-1})), k = 1, 2
    a_coef: tuple[tuple[float, float, float], ...] = ((-1.0, -1.0, 1.75),
                                                      (-1.0, -1.0, 1.75))
    # C_k ~ Bernoulli(expit(c0 + c_a * A_{k-1})), k = 1..3, monotone
    c_coef: tuple[tuple[float, float], ...] = ((-3.0, -0.5),) * 3
    # eta for states 2 and 3 per interval: (const, action, L, prior state)
    eta2_coef: tuple[tuple[float, float, float, float], ...] = (
        (0.05, -0.6, -2.0, 0.0),
        (0.10, -0.8, -2.2, 0.5),
        (0.30, -0.9, -2.2, 0.5),
    )
    eta3_coef: tuple[tuple[float, float, float, float], ...] = (
        (-1.75, -0.6, -2.0, 0.0),
        (-2.00, -0.6, -2.0, 0.4),
        (-4.00, -0.6, -2.0, 0.4),
    )
    eta1_ref: float = 1.0
    eta3_k3_action_lag: int = 1     # 1 = a_1 as printed, 2 = a_2

    def __post_init__(self):
        if self.eta3_k3_action_lag not in (1, 2):
            raise UsageError("eta3_k3_action_lag must be 1 or 2")


def _state_draw(u: np.ndarray, eta2: np.ndarray, eta3: np.ndarray,
                ref: float) -> np.ndarray:
    """Draw states 1/2/3 from softmax((ref, eta2, eta3)) with one uniform."""
    e1 = np.exp(ref)
    e2 = np.exp(eta2)
    e3 = np.exp(eta3)
    denom = e1 + e2 + e3
    p1 = e1 / denom
    p2 = e2 / denom
    return 1.0 + (u >= p1) + (u >= p1 + p2)


def _outcome_eta(config: DGMConfig, k: int, a, l, y_prev):
    """Linear predictors (eta2, eta3) at interval k given the plan action a,
    the previous confounder value, and the numeric previous state."""
    c2 = config.eta2_coef[k - 1]
    c3 = config.eta3_coef[k - 1]
    eta2 = c2[0] + c2[1] * a + c2[2] * l + c2[3] * y_prev
    eta3 = c3[0] + c3[1] * a + c3[2] * l + c3[3] * y_prev
    return eta2, eta3


def _potential_trajectory(key: int, idx: np.ndarray, history: tuple[int, ...],
                          l0: np.ndarray, config: DGMConfig):
    """Potential (L_1, L_2, Y_1, Y_2, Y_3) under the forced action history."""
    a0, a1, a2 = history
    c_l1, c_l2 = config.l_coef
    l1 = (uniforms(key, idx, _ST_L1[a0])
          < expit(c_l1[0] + c_l1[1] * a0 + c_l1[2] * l0)).astype(float)
    l2 = (uniforms(key, idx, _ST_L2[(a0, a1)])
          < expit(c_l2[0] + c_l2[1] * a1 + c_l2[2] * l1)).astype(float)

    e2, e3 = _outcome_eta(config, 1, a0, l0, 0.0)
    y1 = _state_draw(uniforms(key, idx, _ST_Y1[a0]), e2, e3, config.eta1_ref)

    e2, e3 = _outcome_eta(config, 2, a1, l1, y1)
    y2 = _state_draw(uniforms(key, idx, _ST_Y2[(a0, a1)]), e2, e3, config.eta1_ref)
    y2 = np.where(y1 == 3.0, 3.0, y2)

    a_for_eta3 = a1 if config.eta3_k3_action_lag == 1 else a2
    c2 = config.eta2_coef[2]
    c3 = config.eta3_coef[2]
    eta2 = c2[0] + c2[1] * a2 + c2[2] * l2 + c2[3] * y2
    eta3 = c3[0] + c3[1] * a_for_eta3 + c3[2] * l2 + c3[3] * y2
    y3 = _state_draw(uniforms(key, idx, _ST_Y3[(a0, a1, a2)]), eta2, eta3,
                     config.eta1_ref)
    y3 = np.where(y2 == 3.0, 3.0, y3)
    return l1, l2, y1, y2, y3


def dgm_sample(n: int, seed: int, config: DGMConfig | None = None
               ) -> PanelDataset:
    """Draw an observed-data panel of n individuals.

    Generates the potential trajectories for all eight action histories and
    selects the observed ones by the drawn actions; censoring and the
    absorbing terminal state blank out downstream values.
    """
    if n < 1:
        raise UsageError("n must be >= 1")
    config = config or DGMConfig()
    key = derive_key(seed)
    idx = np.arange(n, dtype=np.int64)

    l0 = (uniforms(key, idx, _ST_L0) < config.l0_prob).astype(float)
    pot = {h: _potential_trajectory(key, idx, h, l0, config)
           for h in _ST_Y3}

    def select(position, a_hist_len, chosen):
        """Causal-consistency selection of the observed value at `position`
        (0=L1, 1=L2, 2=Y1, 3=Y2, 4=Y3) given observed actions so far."""
        out = np.zeros(n)
        for h, arrs in pot.items():
            match = np.ones(n, dtype=bool)
            for j in range(a_hist_len):
                match &= chosen[j] == h[j]
            out = np.where(match, arrs[position], out)
        return out

    a0 = (uniforms(key, idx, _ST_A[0])
          < expit(config.a0_coef[0] + config.a0_coef[1] * l0)).astype(float)
    y1 = select(2, 1, [a0])
    l1 = select(0, 1, [a0])
    ca1 = config.a_coef[0]
    a1 = (uniforms(key, idx, _ST_A[1])
          < expit(ca1[0] + ca1[1] * l1 + ca1[2] * a0)).astype(float)
    y2 = select(3, 2, [a0, a1])
    l2 = select(1, 2, [a0, a1])
    ca2 = config.a_coef[1]
    a2 = (uniforms(key, idx, _ST_A[2])
          < expit(ca2[0] + ca2[1] * l2 + ca2[2] * a1)).astype(float)
    y3 = select(4, 3, [a0, a1, a2])

    cc = config.c_coef
    c1 = (uniforms(key, idx, _ST_C[1]) < expit(cc[0][0] + cc[0][1] * a0)).astype(float)
    c2 = (uniforms(key, idx, _ST_C[2]) < expit(cc[1][0] + cc[1][1] * a1)).astype(float)
    c3 = (uniforms(key, idx, _ST_C[3]) < expit(cc[2][0] + cc[2][1] * a2)).astype(float)

    nan = np.nan
    Y = np.column_stack([y1, y2, y3])
    A = np.column_stack([a0, a1, a2])
    C = np.column_stack([c1, c2, c3])
    L = np.column_stack([l1, l2])

    # monotone censoring; the dead are no longer at risk of censoring
    C[:, 1] = np.where(C[:, 0] == 1, 1.0, C[:, 1])
    C[:, 2] = np.where(C[:, 1] == 1, 1.0, C[:, 2])

    cens1, cens2, cens3 = (C[:, j] == 1 for j in range(3))
    dead1 = (~cens1) & (Y[:, 0] == 3)
    dead2 = (~cens2) & (Y[:, 1] == 3)

    # censored at k: Y_k, L_k, A_k and everything later missing
    Y[cens1, 0] = nan
    L[cens1, 0] = nan
    A[cens1, 1] = nan
    Y[cens1 | cens2, 1] = nan
    L[cens1 | cens2, 1] = nan
    A[cens1 | cens2, 2] = nan
    Y[cens1 | cens2 | cens3, 2] = nan

    # terminal at k: state recorded, later values missing; censoring is no
    # longer defined for the dead
    L[dead1, 0] = nan
    A[dead1, 1] = nan
    C[dead1, 1] = nan
    Y[dead1, 1] = nan
    L[dead1 | dead2, 1] = nan
    A[dead1 | dead2, 2] = nan
    C[dead1 | dead2, 2] = nan
    Y[dead1 | dead2, 2] = nan

    return PanelDataset.from_arrays(
        ids=np.arange(n), tau=TAU, outcomes=Y, actions=A, censoring=C,
        baseline={"L": l0}, time_varying={"L": L},
        covariate_types={"L": "binary"},
    )


def dgm_truth(plan: ActionPlan, N: int = 10_000_000, seed: int = 0,
              config: DGMConfig | None = None, horizon: int = TAU,
              chunk_size: int = 1_000_000) -> StateDistribution:
    """Composite-state proportions at `horizon` under a forced plan.

    Simulates the potential outcomes directly (no censoring, actions set to
    the plan) and composes the terminal-absorbing state. This operation is the
    oracle that defines the study's true psi values.
    """
    if plan.is_natural:
        raise UsageError("truth is defined for deterministic plans")
    if len(plan) < horizon:
        raise UsageError("plan shorter than the requested horizon")
    if not 1 <= horizon <= TAU:
        raise UsageError(f"horizon {horizon} outside 1..{TAU}")
    config = config or DGMConfig()
    key = derive_key(seed)
    # actions after the horizon cannot affect earlier outcomes; pad with 0
    history = tuple(plan.values) + (0,) * (TAU - len(plan))
    history = history[:TAU]

    counts = np.zeros(3, dtype=np.int64)
    for lo in range(0, N, chunk_size):
        hi = min(lo + chunk_size, N)
        idx = np.arange(lo, hi, dtype=np.int64)
        l0 = (uniforms(key, idx, _ST_L0) < config.l0_prob).astype(float)
        _, _, y1, y2, y3 = _potential_trajectory(key, idx, history, l0, config)
        traj = np.column_stack([y1, y2, y3])
        window = traj[:, :horizon]
        dead = np.any(window == 3.0, axis=1)
        z = np.where(dead, 3.0, window[:, horizon - 1])
        counts += np.array([(z == s).sum() for s in (1.0, 2.0, 3.0)])
    return StateDistribution(counts / float(N))


def dgm_truth_psi(plan_a: ActionPlan, plan_b: ActionPlan, N: int = 10_000_000,
                  seed: int = 0, config: DGMConfig | None = None,
                  horizon: int = TAU) -> tuple[float, float]:
    """(psi2, psi3) truth: contrast of two dgm_truth calls."""
    pa = dgm_truth(plan_a, N, seed, config, horizon)
    pb = dgm_truth(plan_b, N, seed, config, horizon)
    return (pa.intermediate - pb.intermediate, pa.terminal - pb.terminal)
