"""Test-set likelihood, bootstrap intervals, marginal-deviation metrics and harnesses."""

from dataclasses import dataclass, replace

import numpy as np

from .copulas import ReferenceCopula
from .empirical import Kde, as_raw, empirical_dC_du, empirical_dC_dv, pseudo_obs, r_squared
from .rng import DEFAULT_SEED, make_rng
from .training import DENSITY_FLOOR, LossWeights, TrainConfig, TrainingData, loss_C, loss_c, loss_dC, train

VALIDATION_GRID = (
    ("gaussian", (0.1, 0.5, 0.9)),
    ("clayton", (1.0, 5.0, 10.0)),
    ("frank", (1.0, 5.0, 10.0)),
)

ABLATION_CONFIGS = (
    ("only_c", (False, False, True)),
    ("c_dC", (False, True, True)),
    ("c_C", (True, False, True)),
    ("all", (True, True, True)),
)


@dataclass(frozen=True)
class EvalReport:
    per_point: np.ndarray
    mean: float
    lo: float
    hi: float
    level: float
    resamples: int
    n: int
    floored: int = 0

    def as_dict(self):
        return {
            "n": self.n, "mean_nll": self.mean, "ci_lo": self.lo, "ci_hi": self.hi,
            "level": self.level, "resamples": self.resamples, "floored": self.floored,
        }


@dataclass(frozen=True)
class P3Report:
    abs_u: float
    abs_v: float
    rel_u: float
    rel_v: float

    def as_dict(self):
        return {"abs_u": self.abs_u, "abs_v": self.abs_v, "rel_u": self.rel_u, "rel_v": self.rel_v}


def bootstrap_ci(values, resamples=1000, level=0.95, seed=DEFAULT_SEED):
    """Percentile bootstrap interval for the mean.

    The interval is widened, if needed, to contain the sample mean itself
    (this only matters at the last ulp for near-constant inputs).
    """
    x = np.asarray(values, dtype=np.float64).ravel()
    if x.size == 0:
        raise ValueError("bootstrap needs at least one value")
    if resamples < 100:
        raise ValueError("use at least 100 bootstrap resamples")
    if not 0.0 < level < 1.0:
        raise ValueError("level must lie in (0, 1)")
    rng = make_rng(seed)
    means = np.empty(resamples)
    rows = max(1, 2_000_000 // x.size)
    for s in range(0, resamples, rows):
        k = min(rows, resamples - s)
        means[s:s + k] = x[rng.integers(0, x.size, size=(k, x.size))].mean(axis=1)
    tail = 50.0 * (1.0 - level)
    lo, hi = np.percentile(means, [tail, 100.0 - tail])
    m = x.mean()
    return float(min(lo, m)), float(max(hi, m))


def marginal_pobs(train_col, query):
    """Training-ECDF transform ``#{x_j <= q} / (n + 1)``, clamped to ``[1/(n+1), n/(n+1)]``."""
    s = np.sort(np.asarray(train_col, dtype=np.float64))
    n = s.size
    counts = np.searchsorted(s, np.asarray(query, dtype=np.float64), side="right")
    return np.clip(counts, 1, n) / (n + 1.0)


def nll(model, train_raw, test_raw, resamples=1000, level=0.95, seed=DEFAULT_SEED):
    """Per-point test NLL: KDE marginals plus the model's copula density."""
    train_raw = as_raw(train_raw)
    test_raw = as_raw(test_raw, min_rows=1)
    kdes = [Kde.fit(train_raw[:, j]) for j in range(2)]
    u = marginal_pobs(train_raw[:, 0], test_raw[:, 0])
    v = marginal_pobs(train_raw[:, 1], test_raw[:, 1])
    dens = np.asarray(model.density(u, v), dtype=np.float64)
    floored = int(np.count_nonzero(~(dens >= DENSITY_FLOOR)))
    dens = np.where(dens >= DENSITY_FLOOR, dens, DENSITY_FLOOR)
    per_point = -kdes[0].logpdf(test_raw[:, 0]) - kdes[1].logpdf(test_raw[:, 1]) - np.log(dens)
    lo, hi = bootstrap_ci(per_point, resamples, level, seed)
    return EvalReport(per_point, float(per_point.mean()), lo, hi, level, resamples, per_point.size, floored)


def p3_report(model, pobs, cutoff=1e-6):
    """Mean absolute and relative (percent) deviations of ``H(u,1)`` from ``u`` and ``H(1,v)`` from ``v``."""
    p = np.asarray(pobs, dtype=np.float64)
    if p.ndim != 2 or p.shape[1] != 2 or p.shape[0] == 0:
        raise ValueError("expected a nonempty (n, 2) array")
    u, v = p[:, 0], p[:, 1]
    dev_u = np.abs(np.asarray(model.H(u, np.ones_like(u))) - u)
    dev_v = np.abs(np.asarray(model.H(np.ones_like(v), v)) - v)

    def rel(dev, x):
        keep = x >= cutoff
        return float(100.0 * np.mean(dev[keep] / x[keep])) if keep.any() else 0.0

    return P3Report(float(dev_u.mean()), float(dev_v.mean()), rel(dev_u, u), rel(dev_v, v))


def minmax_scale(train_raw, test_raw):
    """Scale each split to [0, 1] column-wise by its own extrema."""

    def scale(x):
        x = as_raw(x, min_rows=1)
        lo, hi = x.min(axis=0), x.max(axis=0)
        if np.any(hi <= lo):
            raise ValueError("cannot min-max scale a column with zero range")
        return (x - lo) / (hi - lo)

    return scale(train_raw), scale(test_raw)


def ablation_run(raw, cfg=TrainConfig(), weights=LossWeights(), head="logistic", configs=ABLATION_CONFIGS,
                 data=None):
    """Train once per loss subset (barrier off) and report held-in loss values.

    Returns a list of dicts with keys ``name, w_C, w_dC, w_c, loss_C, loss_dC, loss_c``.
    Pass ``data`` (a :class:`TrainingData`) to skip recomputing the targets.
    """
    td = data if data is not None else TrainingData.from_raw(raw)
    cfg = replace(cfg, lagrangian=False)
    rows = []
    for name, (use_C, use_dC, use_c) in configs:
        w = LossWeights(weights.w_C * use_C, weights.w_dC * use_dC, weights.w_c * use_c)
        model, _ = train(td, cfg, w, head)
        p = td.pobs
        rows.append({
            "name": name, "w_C": w.w_C, "w_dC": w.w_dC, "w_c": w.w_c,
            "loss_C": loss_C(model, p, td.ecdf),
            "loss_dC": loss_dC(model, p, td.d_u, td.d_v),
            "loss_c": loss_c(model, p)[0],
        })
    return rows


def validate_derivs(n=1500, seed=DEFAULT_SEED, grid=VALIDATION_GRID):
    """R^2 of the empirical h-function estimates against the closed forms.

    Returns rows ``{family, param, r2_u, r2_v}``.
    """
    rows = []
    for family, params in grid:
        for param in params:
            cop = ReferenceCopula(family, param)
            p = pseudo_obs(cop.sample(n, seed))
            u, v = p[:, 0], p[:, 1]
            rows.append({
                "family": family, "param": float(param),
                "r2_u": float(r_squared(cop.h(u, v), empirical_dC_du(p))),
                # dC/dv(u, v) is h evaluated with the roles swapped (all three families are exchangeable)
                "r2_v": float(r_squared(cop.h(v, u), empirical_dC_dv(p))),
            })
    return rows
