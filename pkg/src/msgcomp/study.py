"""Simulation-study harness: runs the estimators over repeated draws from the
data-generating mechanism and aggregates bias / ESE / RMSE / ASE / SER /
coverage per estimator and outcome component.

Iterations are independent and seeded by (study seed, sample size, iteration),
so a run parallelized over any number of workers is bit-identical to the
serial run.
"""

from __future__ import annotations

import json
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from importlib import resources

import numpy as np

from .alternatives import alt1_baseline_psi, alt2_censor_terminal_psi
from .bootstrap import bootstrap
from .design import ModelSpec, TermSpec
from .dgm import TAU, DGMConfig, dgm_sample, dgm_truth
from .errors import MsgcompError, UsageError
from .glm import FitOptions
from .ice import ice_psi
from .panel import ActionPlan
from .rng import derive_key
from .standard import MonteCarloConfig, standard_psi

ESTIMATORS = ("standard", "ice", "alt1", "alt2")

_TAG_ITER = 0x17E2
_TAG_MC = 0x3C5
_TAG_BOOT = 0xB5E


def _terms(*specs) -> ModelSpec:
    return ModelSpec(terms=tuple(specs))


def default_dgm_specs() -> dict:
    """Model specifications matched to the generating mechanism.

    Outcome models condition on the full action/confounder history plus the
    numeric previous state; the interval-3 model carries the extra action lag
    that the terminal-event predictor uses. Covariate models condition on the
    previous action and confounder. The alt1 specs drop every action term
    except the baseline one; alt2 reuses the outcome designs.
    """
    a = lambda lag: TermSpec(source="action", lag=lag)
    l = lambda lag: TermSpec(source="covariate", name="L", lag=lag)
    l0 = TermSpec(source="baseline", name="L")
    y = lambda lag: TermSpec(source="state", lag=lag)

    outcome = {
        1: _terms(a(0), l0),
        2: _terms(a(0), a(1), l(0), l0, y(0)),
        3: _terms(a(0), a(1), a(2), l(0), l(1), l0, y(0), y(1)),
    }
    covariate = {"L": {
        1: _terms(a(0), TermSpec(source="covariate", name="L", lag=1)),
        2: _terms(a(0), TermSpec(source="covariate", name="L", lag=1)),
    }}
    alt1 = {
        1: _terms(a(0), l0),
        2: _terms(a(1), l(0), l0, y(0)),
        3: _terms(a(2), l(0), l(1), l0, y(0), y(1)),
    }
    return {"outcome": outcome, "covariate": covariate,
            "alt1": alt1, "alt2": dict(outcome)}


@dataclass(frozen=True)
class MetricsRow:
    """One Table-2-style row: an estimator x component summary."""

    estimator: str
    component: str                  # "intermediate" | "terminal"
    sample_size: int
    bias: float
    ese: float
    rmse: float
    ase: float
    ser: float
    coverage: float
    iterations_used: int

    def to_dict(self) -> dict:
        return {k: getattr(self, k) for k in (
            "estimator", "component", "sample_size", "bias", "ese", "rmse",
            "ase", "ser", "coverage", "iterations_used")}


def compute_metrics(estimates, ses, ci_hits, truth: float, estimator: str = "",
                    component: str = "", sample_size: int = 0) -> MetricsRow:
    """Aggregate one estimator x component cell.

    bias = mean(estimate) - truth; ESE = sd(estimates); RMSE^2 = bias^2 +
    ESE^2; ASE = mean(se); SER = ASE / ESE; coverage = share of CIs holding
    the truth. NaN estimates (failed iterations) are dropped and counted.
    """
    est = np.asarray(estimates, dtype=float)
    ses = np.asarray(ses, dtype=float)
    hits = np.asarray(ci_hits, dtype=float)
    keep = ~np.isnan(est)
    if keep.sum() < 2:
        raise UsageError("compute_metrics needs at least 2 estimates")
    est, ses, hits = est[keep], ses[keep], hits[keep]
    bias = float(est.mean() - truth)
    ese = float(est.std(ddof=1))
    rmse = float(np.sqrt(bias ** 2 + ese ** 2))
    ase = float(np.nanmean(ses))
    ser = float(ase / ese) if ese > 0 else float("inf")
    coverage = float(np.nanmean(hits))
    return MetricsRow(estimator=estimator, component=component,
                      sample_size=sample_size, bias=bias, ese=ese, rmse=rmse,
                      ase=ase, ser=ser, coverage=coverage,
                      iterations_used=int(keep.sum()))


@dataclass(frozen=True)
class StudyConfig:
    """Study settings; defaults are the paper-scale ones."""

    sample_sizes: tuple[int, ...] = (500, 2000)
    iterations: int = 2000
    bootstrap_reps: int = 500
    seed: int = 20250
    estimators: tuple[str, ...] = ESTIMATORS
    mc_size: int = 100_000
    level: float = 0.95
    threads: int = 1
    horizon: int = TAU
    plan_a: tuple[int, ...] = (1, 1, 1)
    plan_b: tuple[int, ...] = (0, 0, 0)
    dgm: DGMConfig = field(default_factory=DGMConfig)
    truth: tuple[float, float] | None = None   # (psi2, psi3); fixture if None
    truth_n: int = 10_000_000                  # used only when recomputing

    def __post_init__(self):
        for e in self.estimators:
            if e not in ESTIMATORS:
                raise UsageError(f"unknown estimator {e!r}")


def load_truth_fixture() -> dict:
    """Frozen truth values for the default mechanism (seed and N recorded)."""
    path = resources.files("msgcomp").joinpath("data/dgm_truth.json")
    return json.loads(path.read_text())


def resolve_truth(config: StudyConfig) -> tuple[float, float]:
    if config.truth is not None:
        return config.truth
    if config.dgm == DGMConfig():
        fx = load_truth_fixture()
        return (float(fx["psi2"]), float(fx["psi3"]))
    pa = dgm_truth(ActionPlan.deterministic(config.plan_a), config.truth_n,
                   seed=20_250_101, config=config.dgm, horizon=config.horizon)
    pb = dgm_truth(ActionPlan.deterministic(config.plan_b), config.truth_n,
                   seed=20_250_101, config=config.dgm, horizon=config.horizon)
    return (pa.intermediate - pb.intermediate, pa.terminal - pb.terminal)


def _estimator_callable(name: str, config: StudyConfig, specs: dict,
                        iter_seed: int):
    plan_a = ActionPlan.deterministic(config.plan_a)
    plan_b = ActionPlan.deterministic(config.plan_b)
    options = FitOptions()
    h = config.horizon

    if name == "ice":
        def fn(data):
            r = ice_psi(data, plan_a, plan_b, h, specs["outcome"], options)
            return np.array([r.psi2, r.psi3])
    elif name == "standard":
        def fn(data, replicate=None):
            mc = MonteCarloConfig(B=config.mc_size,
                                  seed=derive_key(iter_seed, _TAG_MC,
                                                  -1 if replicate is None else replicate))
            r = standard_psi(data, plan_a, plan_b, h, specs["outcome"],
                             specs["covariate"], mc, options)
            return np.array([r.psi2, r.psi3])
    elif name == "alt1":
        def fn(data):
            r = alt1_baseline_psi(data, config.plan_a[0], config.plan_b[0], h,
                                  specs["alt1"], options)
            return np.array([r.psi2, r.psi3])
    else:
        def fn(data):
            r = alt2_censor_terminal_psi(data, plan_a, plan_b, h,
                                         specs["alt2"], options)
            return np.array([r.psi2, np.nan])
    return fn


def _run_iteration(args):
    config, n, i, truth = args
    specs = default_dgm_specs()
    iter_seed = derive_key(config.seed, _TAG_ITER, n, i)
    data = dgm_sample(n, iter_seed, config.dgm)
    out = {}
    for name in config.estimators:
        fn = _estimator_callable(name, config, specs, iter_seed)
        try:
            res = bootstrap(data, fn, R=config.bootstrap_reps,
                            seed=derive_key(iter_seed, _TAG_BOOT, ESTIMATORS.index(name)),
                            level=config.level)
        except MsgcompError:
            out[name] = None
            continue
        hits = ((res.ci[:, 0] <= truth) & (truth <= res.ci[:, 1])).astype(float)
        out[name] = (res.point, res.se, hits, res.discarded)
    return out


def run_study(config: StudyConfig, progress=None) -> list[MetricsRow]:
    """Run the full study and return one MetricsRow per estimator x component
    x sample size. `progress` is an optional callable(done, total)."""
    truth2, truth3 = resolve_truth(config)
    truth = np.array([truth2, truth3])
    rows: list[MetricsRow] = []
    components = ("intermediate", "terminal")

    for n in config.sample_sizes:
        tasks = [(config, n, i, truth) for i in range(config.iterations)]
        if config.threads > 1:
            with ProcessPoolExecutor(max_workers=config.threads) as pool:
                results = []
                for done, r in enumerate(pool.map(_run_iteration, tasks,
                                                  chunksize=4), 1):
                    results.append(r)
                    if progress:
                        progress(done, config.iterations)
        else:
            results = []
            for done, t in enumerate(tasks, 1):
                results.append(_run_iteration(t))
                if progress:
                    progress(done, config.iterations)

        for name in config.estimators:
            n_comp = 1 if name == "alt2" else 2
            for c in range(n_comp):
                est, ses, hits = [], [], []
                for r in results:
                    cell = r[name]
                    if cell is None:
                        est.append(np.nan)
                        ses.append(np.nan)
                        hits.append(np.nan)
                    else:
                        est.append(cell[0][c])
                        ses.append(cell[1][c])
                        hits.append(cell[2][c])
                rows.append(compute_metrics(est, ses, hits, truth[c],
                                            estimator=name,
                                            component=components[c],
                                            sample_size=n))
    return rows
