"""Nonparametric bootstrap standard errors and Wald confidence intervals.

Resampling is at the individual level (whole rows, preserving within-person
history) against the dataset's canonical sorted-id row order, and replicate
r's resample is a pure function of (seed, r) — so row order, scheduling, and
parallel execution cannot change any result. Replicates on which the
estimator fails (separation in a small resample, say) are discarded and
counted; the count is surfaced in the result.
"""

from __future__ import annotations

import inspect
import math
from dataclasses import dataclass

import numpy as np

from .errors import BootstrapError, MsgcompError, UsageError
from .panel import PanelDataset
from .rng import derive_key, integers

_BOOT_TAG = 0xB007


def norm_ppf(p: float) -> float:
    """Standard normal quantile (Wichura's AS241, |error| < 1e-15)."""
    if not 0.0 < p < 1.0:
        raise UsageError(f"quantile probability must be in (0, 1), got {p}")
    a = (3.3871328727963666080, 1.3314166789178437745e2,
         1.9715909503065514427e3, 1.3731693765509461125e4,
         4.5921953931549871457e4, 6.7265770927008700853e4,
         3.3430575583588128105e4, 2.5090809287301226727e3)
    b = (1.0, 4.2313330701600911252e1, 6.8718700749205790830e2,
         5.3941960214247511077e3, 2.1213794301586595867e4,
         3.9307895800092710610e4, 2.8729085735721942674e4,
         5.2264952788528545610e3)
    c = (1.42343711074968357734, 4.63033784615654529590,
         5.76949722146069140550, 3.64784832476320460504,
         1.27045825245236838258, 2.41780725177450611770e-1,
         2.27238449892691845833e-2, 7.74545014278341407640e-4)
    d = (1.0, 2.05319162663775882187, 1.67638483018380384940,
         6.89767334985100004550e-1, 1.48103976427480074590e-1,
         1.51986665636164571966e-2, 5.47593808499534494600e-4,
         1.05075007164441684324e-9)
    e = (6.65790464350110377720, 5.46378491116411436990,
         1.78482653991729133580, 2.96560571828504891230e-1,
         2.65321895265761230930e-2, 1.24266094738807843860e-3,
         2.71155556874348757815e-5, 2.01033439929228813265e-7)
    f = (1.0, 5.99832206555887937690e-1, 1.36929880922735805310e-1,
         1.48753612908506148525e-2, 7.86869131145613259100e-4,
         1.84631831751005468180e-5, 1.42151175831644588870e-7,
         2.04426310338993978564e-15)

    def horner(coefs, r):
        acc = 0.0
        for co in reversed(coefs):
            acc = acc * r + co
        return acc

    q = p - 0.5
    if abs(q) <= 0.425:
        r = 0.180625 - q * q
        return q * horner(a, r) / horner(b, r)
    r = p if q < 0 else 1.0 - p
    r = math.sqrt(-math.log(r))
    if r <= 5.0:
        r -= 1.6
        val = horner(c, r) / horner(d, r)
    else:
        r -= 5.0
        val = horner(e, r) / horner(f, r)
    return -val if q < 0 else val


def wald_interval(estimate: float, se: float, level: float = 0.95
                  ) -> tuple[float, float]:
    """Pointwise Wald interval: estimate +/- z * se."""
    if se < 0:
        raise UsageError("standard error must be >= 0")
    z = norm_ppf(0.5 + level / 2.0)
    return estimate - z * se, estimate + z * se


def resample_indices(seed: int, r: int, n: int) -> np.ndarray:
    """With-replacement resample of 0..n-1 for replicate r; depends only on
    (seed, r)."""
    return integers(derive_key(seed, _BOOT_TAG, r), np.arange(n), 0, n)


@dataclass(frozen=True)
class BootstrapResult:
    point: np.ndarray           # (q,) estimate on the original data
    replicates: np.ndarray      # (retained, q)
    discarded: int
    se: np.ndarray              # (q,)
    ci: np.ndarray              # (q, 2)
    level: float

    @property
    def retained(self) -> int:
        return self.replicates.shape[0]


def bootstrap(dataset: PanelDataset, estimator, R: int = 500, seed: int = 0,
              level: float = 0.95) -> BootstrapResult:
    """Bootstrap an estimator mapping a dataset to a vector of quantities.

    The estimator may optionally accept a `replicate` keyword (None for the
    point estimate, the replicate index otherwise); estimators with internal
    Monte Carlo steps use it to refresh their simulation seed per replicate.
    Estimator errors inside a replicate are caught and counted as discarded;
    an error on the original data propagates.
    """
    if R < 2:
        raise UsageError("bootstrap needs R >= 2 replicates")
    if not 0.0 < level < 1.0:
        raise UsageError("confidence level must be in (0, 1)")

    takes_replicate = "replicate" in inspect.signature(estimator).parameters

    def call(data, r):
        if takes_replicate:
            return np.atleast_1d(np.asarray(estimator(data, replicate=r), float))
        return np.atleast_1d(np.asarray(estimator(data), float))

    point = call(dataset, None)
    kept = []
    discarded = 0
    for r in range(R):
        idx = resample_indices(seed, r, dataset.n)
        try:
            est = call(dataset.take(idx), r)
        except (MsgcompError, np.linalg.LinAlgError, FloatingPointError):
            discarded += 1
            continue
        if est.shape != point.shape or not np.isfinite(est).all():
            discarded += 1
            continue
        kept.append(est)

    if len(kept) < 2:
        raise BootstrapError(
            f"bootstrap failed: {discarded} of {R} replicates discarded, "
            f"{len(kept)} retained")
    reps = np.vstack(kept)
    se = reps.std(axis=0, ddof=1)
    z = norm_ppf(0.5 + level / 2.0)
    ci = np.column_stack([point - z * se, point + z * se])
    return BootstrapResult(point=point, replicates=reps, discarded=discarded,
                           se=se, ci=ci, level=level)
