"""Sobolev losses, boundary constraints and the barrier-scheduled training loop.

The training objective is

    L = w_C * L^C + w_dC * L^dC + w_c * L^c

with ``L^C`` the squared error against the bivariate ECDF, ``L^dC`` the
squared error of the two first derivatives against the empirical
h-function estimates and ``L^c`` the negative mean log copula density.
With the barrier enabled each epoch minimizes ``lambda_t * L + r`` where
``lambda_t = lambda_0 * decay**t`` and ``r`` aggregates the derivatives of
the squared marginal deviations ``(H(u,1) - u)^2`` and ``(H(1,v) - v)^2``.
"""

import csv
import functools
import math
from dataclasses import asdict, dataclass, field
from typing import Optional

import jax
import jax.numpy as jnp
import numpy as np

from .diff import NumericError, flatten
from .empirical import as_raw, ecdf2, empirical_dC_du, empirical_dC_dv, pseudo_obs
from .model import GRID_SIZE, HEADS, TwoCatsModel, edge_jets, hypothesis_jets
from .rng import DEFAULT_SEED, make_rng

DENSITY_FLOOR = 1e-12
TRACE_COLUMNS = ("epoch", "lambda", "loss_C", "loss_dC", "loss_c", "r", "total", "floored")


@dataclass(frozen=True)
class LossWeights:
    w_C: float = 0.01
    w_dC: float = 0.5
    w_c: float = 0.1

    def __post_init__(self):
        if min(self.w_C, self.w_dC, self.w_c) < 0:
            raise ValueError("loss weights must be nonnegative")

    def as_array(self):
        return np.array([self.w_C, self.w_dC, self.w_c])


@dataclass(frozen=True)
class TrainConfig:
    """Optimizer, schedule and stopping settings.

    ``batch_size=None`` means full-batch steps.  ``patience`` stops the
    loop after that many epochs without a new best pseudo-log-likelihood
    (``None`` runs every epoch).  ``dtype`` is the working precision of
    the optimization; the returned model is always float64.
    """

    epochs: int = 300
    batch_size: Optional[int] = None
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    lagrangian: bool = False
    lambda0: float = 1.0
    lambda_decay: float = 0.95
    early_stop: bool = True
    patience: Optional[int] = None
    seed: int = DEFAULT_SEED
    init_seed: Optional[int] = None
    grid_size: int = GRID_SIZE
    dtype: str = "float32"
    chunk: int = 128

    def __post_init__(self):
        if self.epochs < 1:
            raise ValueError("epochs must be at least 1")
        if self.batch_size is not None and self.batch_size < 1:
            raise ValueError("batch_size must be positive")
        if not 0.0 < self.lambda0 <= 1.0:
            raise ValueError("lambda0 must lie in (0, 1]")
        if not 0.0 < self.lambda_decay < 1.0:
            raise ValueError("lambda_decay must lie in (0, 1)")
        if self.lr <= 0 or self.eps <= 0:
            raise ValueError("lr and eps must be positive")
        if not (0.0 <= self.beta1 < 1.0 and 0.0 <= self.beta2 < 1.0):
            raise ValueError("Adam betas must lie in [0, 1)")
        if self.dtype not in ("float32", "float64"):
            raise ValueError("dtype must be float32 or float64")
        if self.chunk < 1:
            raise ValueError("chunk must be positive")

    def lambda_at(self, epoch):
        return self.lambda0 * self.lambda_decay ** epoch


@dataclass
class TrainTrace:
    rows: list = field(default_factory=list)
    best_epoch: Optional[int] = None
    warnings: list = field(default_factory=list)

    def column(self, name):
        return np.array([row[name] for row in self.rows])

    @property
    def lambdas(self):
        return self.column("lambda")

    def write_csv(self, path):
        with open(path, "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(TRACE_COLUMNS)
            for row in self.rows:
                writer.writerow([row["epoch"]] + [repr(float(row[c])) for c in TRACE_COLUMNS[1:]])


class TrainingAborted(NumericError):
    """Non-finite loss or gradient; ``trace`` holds the epochs completed so far."""

    def __init__(self, message, trace, where=None, index=None):
        super().__init__(message, where=where, index=index)
        self.trace = trace


# ----------------------------------------------------------------------
# training targets

@dataclass(frozen=True)
class TrainingData:
    """Pseudo-observations plus every empirical target the losses need."""

    u: np.ndarray
    v: np.ndarray
    ecdf: np.ndarray
    d_u: np.ndarray
    d_v: np.ndarray

    @classmethod
    def from_raw(cls, raw):
        raw = as_raw(raw, min_rows=10)
        p = pseudo_obs(raw)
        target = ecdf2(raw)(raw[:, 0], raw[:, 1])
        return cls(p[:, 0], p[:, 1], target, empirical_dC_du(p), empirical_dC_dv(p))

    @property
    def n(self):
        return self.u.size

    @property
    def pobs(self):
        return np.column_stack([self.u, self.v])

    def columns(self):
        return np.stack([self.u, self.v, self.ecdf, self.d_u, self.d_v])


# ----------------------------------------------------------------------
# losses on any model exposing H / jets / density / edge_jets

def _uv(pobs):
    p = np.asarray(pobs, dtype=np.float64)
    if p.ndim != 2 or p.shape[1] != 2 or p.shape[0] == 0:
        raise ValueError("expected a nonempty (n, 2) array of pseudo-observations")
    return p[:, 0], p[:, 1]


def loss_C(model, pobs, ecdf_values):
    """Mean squared error between ``H`` and the ECDF at the data rows."""
    u, v = _uv(pobs)
    target = np.asarray(ecdf_values, dtype=np.float64)
    if target.shape != u.shape:
        raise ValueError("ecdf values must align with the data rows")
    return float(np.mean((np.asarray(model.H(u, v)) - target) ** 2))


def loss_dC(model, pobs, d_u, d_v):
    """``(1/2n) * sum((H_u - d_u)^2 + (H_v - d_v)^2)``."""
    u, v = _uv(pobs)
    d_u = np.asarray(d_u, dtype=np.float64)
    d_v = np.asarray(d_v, dtype=np.float64)
    if d_u.shape != u.shape or d_v.shape != u.shape:
        raise ValueError("derivative table must align with the data rows")
    _, hu, hv, _ = model.jets(u, v)
    return float(np.mean((np.asarray(hu) - d_u) ** 2 + (np.asarray(hv) - d_v) ** 2) / 2.0)


def loss_c(model, pobs, floor=DENSITY_FLOOR):
    """Negative mean log density, with the density floored before the log.

    Returns ``(loss, floored_count)``.
    """
    u, v = _uv(pobs)
    dens = np.asarray(model.density(u, v), dtype=np.float64)
    return float(-np.mean(np.log(np.maximum(dens, floor)))), int(np.count_nonzero(dens < floor))


def constraints_r(model, pobs):
    """``sum 2(H(u,1)-u)(H_u(u,1)-1) + sum 2(H(1,v)-v)(H_v(1,v)-1)``."""
    u, v = _uv(pobs)
    hu1, du1, h1v, dv1 = (np.asarray(x, dtype=np.float64) for x in model.edge_jets(u, v))
    return float(np.sum(2.0 * (hu1 - u) * (du1 - 1.0)) + np.sum(2.0 * (h1v - v) * (dv1 - 1.0)))


# ----------------------------------------------------------------------
# jitted batch terms

def _term_sums(params, cols, mask, head, grid_size):
    u, v, target, du_hat, dv_hat = cols
    h, hu, hv, huv = hypothesis_jets(params, u, v, head, grid_size)
    eu, deu, ev, dev = edge_jets(params, u, v, head, grid_size)
    floor = jnp.asarray(DENSITY_FLOOR, dtype=u.dtype)
    l_C = jnp.sum(mask * (h - target) ** 2)
    l_dC = jnp.sum(mask * ((hu - du_hat) ** 2 + (hv - dv_hat) ** 2)) / 2.0
    l_c = -jnp.sum(mask * jnp.log(jnp.maximum(huv, floor)))
    r = jnp.sum(mask * (2.0 * (eu - u) * (deu - 1.0) + 2.0 * (ev - v) * (dev - 1.0)))
    floored = jnp.sum(mask * (huv < floor))
    return jnp.stack([l_C, l_dC, l_c, r, floored])


def _objective(params, cols, mask, coefs, head, grid_size, lagrangian):
    # coefs = (lambda * w / N for the three losses, scale of r)
    sums = _term_sums(params, cols, mask, head, grid_size)
    obj = coefs[0] * sums[0] + coefs[1] * sums[1] + coefs[2] * sums[2]
    if lagrangian:
        obj = obj + coefs[3] * sums[3]
    return obj, sums


_value_and_grad = jax.jit(
    jax.value_and_grad(_objective, has_aux=True), static_argnames=("head", "grid_size", "lagrangian")
)
_eval_sums = jax.jit(_term_sums, static_argnames=("head", "grid_size"))


@functools.partial(jax.jit, static_argnames=())
def _adam_update(params, grads, m, s, step, lr, b1, b2, eps):
    m = jax.tree_util.tree_map(lambda a, g: b1 * a + (1 - b1) * g, m, grads)
    s = jax.tree_util.tree_map(lambda a, g: b2 * a + (1 - b2) * g * g, s, grads)
    c1 = 1 - b1 ** step
    c2 = 1 - b2 ** step
    params = jax.tree_util.tree_map(
        lambda p, a, b: p - lr * (a / c1) / (jnp.sqrt(b / c2) + eps), params, m, s
    )
    return params, m, s


class Adam:
    """Plain Adam over a parameter pytree."""

    def __init__(self, params, lr=1e-3, beta1=0.9, beta2=0.999, eps=1e-8):
        zeros = jax.tree_util.tree_map(jnp.zeros_like, params)
        self.m, self.s = zeros, zeros
        self.step_count = 0
        self.hyper = (lr, beta1, beta2, eps)

    def step(self, params, grads):
        self.step_count += 1
        dtype = jax.tree_util.tree_leaves(params)[0].dtype
        lr, b1, b2, eps = (jnp.asarray(x, dtype=dtype) for x in self.hyper)
        params, self.m, self.s = _adam_update(
            params, grads, self.m, self.s, jnp.asarray(self.step_count, dtype=dtype), lr, b1, b2, eps
        )
        return params


def _batched_pass(params, cols, idx, coefs, head, grid_size, lagrangian, chunk, with_grad):
    """Sum the terms (and optionally gradients) over rows ``idx`` in fixed-size chunks."""
    size = min(chunk, idx.size)
    pad = (-idx.size) % size
    idx_p = np.concatenate([idx, np.full(pad, idx[-1])])
    mask_all = np.concatenate([np.ones(idx.size), np.zeros(pad)])
    dtype = jax.tree_util.tree_leaves(params)[0].dtype
    sums = np.zeros(5)
    grads = None
    for start in range(0, idx_p.size, size):
        sel = idx_p[start:start + size]
        c = jnp.asarray(cols[:, sel], dtype=dtype)
        mask = jnp.asarray(mask_all[start:start + size], dtype=dtype)
        if with_grad:
            (_, s), g = _value_and_grad(params, c, mask, coefs, head, grid_size, lagrangian)
            grads = g if grads is None else jax.tree_util.tree_map(jnp.add, grads, g)
        else:
            s = _eval_sums(params, c, mask, head, grid_size)
        sums += np.asarray(s, dtype=np.float64)
    return sums, grads


def _check_grads(grads, trace):
    flat, layout = flatten(grads)
    bad = np.flatnonzero(~np.isfinite(np.asarray(flat)))
    if bad.size:
        idx = int(bad[0])
        bounds = np.cumsum(layout.sizes)
        name = layout.names[int(np.searchsorted(bounds, idx, side="right"))]
        raise TrainingAborted(f"non-finite gradient at flat index {idx} ({name})", trace, name, idx)


def _row(epoch, lam, sums, n, weights, lagrangian):
    l_C, l_dC, l_c = sums[0] / n, sums[1] / n, sums[2] / n
    loss = weights.w_C * l_C + weights.w_dC * l_dC + weights.w_c * l_c
    total = lam * loss + sums[3] if lagrangian else loss
    return {
        "epoch": epoch, "lambda": lam, "loss_C": l_C, "loss_dC": l_dC, "loss_c": l_c,
        "r": sums[3], "total": total, "floored": sums[4] / n,
    }


def train(data, cfg: TrainConfig = TrainConfig(), weights: LossWeights = LossWeights(),
          head="logistic", init=None, callback=None):
    """Fit a 2-Cats model.

    Parameters
    ----------
    data : array_like of shape (n, 2) or TrainingData
        Raw samples (ranked internally) or precomputed training targets.
    init : TwoCatsModel, optional
        Starting point; by default a fresh model seeded from
        ``cfg.init_seed`` (falling back to ``cfg.seed``).
    callback : callable, optional
        Called as ``callback(epoch, row, params)`` after every epoch.

    Returns
    -------
    model : TwoCatsModel
        float64 model: the best-pseudo-likelihood snapshot when
        ``cfg.early_stop`` is set, otherwise the final parameters.
    trace : TrainTrace
    """
    if head not in HEADS:
        raise ValueError(f"unknown head {head!r}; expected one of {HEADS}")
    td = data if isinstance(data, TrainingData) else TrainingData.from_raw(data)
    n = td.n
    cols = td.columns()
    if init is None:
        seed = cfg.seed if cfg.init_seed is None else cfg.init_seed
        init = TwoCatsModel.init(seed, head, cfg.grid_size)
    elif init.head != head:
        raise ValueError("initial model head does not match the requested head")
    dtype = jnp.float32 if cfg.dtype == "float32" else jnp.float64
    params = init.astype(dtype).params
    opt = Adam(params, cfg.lr, cfg.beta1, cfg.beta2, cfg.eps)
    rng = make_rng(cfg.seed)
    batch = n if cfg.batch_size is None else min(cfg.batch_size, n)
    full_batch = batch == n
    trace = TrainTrace()
    best = (-math.inf, None, None)  # (pseudo-log-likelihood, epoch, params)
    w = weights.as_array()
    stale = 0

    def consider(epoch, row, snapshot):
        nonlocal best, stale
        score = -row["loss_c"]
        if score > best[0]:
            best = (score, epoch, snapshot)
            stale = 0
        else:
            stale += 1

    for epoch in range(cfg.epochs):
        # without the barrier the losses keep their full weight
        lam = cfg.lambda_at(epoch) if cfg.lagrangian else 1.0
        order = np.arange(n) if full_batch else rng.permutation(n)
        start_params = params
        sums_epoch = np.zeros(5)
        for b0 in range(0, n, batch):
            idx = order[b0:b0 + batch]
            coefs = np.concatenate([lam * w / idx.size, [n / idx.size]])
            sums, grads = _batched_pass(
                params, cols, idx, jnp.asarray(coefs, dtype=dtype), head, cfg.grid_size,
                cfg.lagrangian, cfg.chunk, True,
            )
            if not np.all(np.isfinite(sums)):
                raise TrainingAborted(f"non-finite loss at epoch {epoch}", trace, where="loss")
            _check_grads(grads, trace)
            sums_epoch += sums
            params = opt.step(params, grads)
        if full_batch:
            row = _row(epoch, lam, sums_epoch, n, weights, cfg.lagrangian)
            snapshot = start_params
        else:
            sums, _ = _batched_pass(params, cols, np.arange(n), None, head, cfg.grid_size,
                                    False, cfg.chunk, False)
            row = _row(epoch, lam, sums, n, weights, cfg.lagrangian)
            snapshot = params
        trace.rows.append(row)
        if row["floored"] > 0.5:
            trace.warnings.append(f"epoch {epoch}: density floored at {row['floored']:.0%} of rows")
        consider(epoch, row, snapshot)
        if callback is not None:
            callback(epoch, row, params)
        if cfg.early_stop and cfg.patience is not None and stale >= cfg.patience:
            break

    if full_batch:
        # the parameters after the last step have not been scored yet
        sums, _ = _batched_pass(params, cols, np.arange(n), None, head, cfg.grid_size, False, cfg.chunk, False)
        last_lam = cfg.lambda_at(len(trace.rows)) if cfg.lagrangian else 1.0
        last = _row(len(trace.rows), last_lam, sums, n, weights, cfg.lagrangian)
        if not np.all(np.isfinite([last["loss_c"]])):
            raise TrainingAborted("non-finite loss after the final step", trace, where="loss")
        consider(last["epoch"], last, params)
    final = params
    if cfg.early_stop:
        trace.best_epoch = best[1]
        final = best[2]
    else:
        trace.best_epoch = best[1]
    model = TwoCatsModel(final, head, cfg.grid_size).astype(jnp.float64)
    return model, trace


def config_dict(cfg: TrainConfig, weights: LossWeights):
    out = asdict(cfg)
    out.update(asdict(weights))
    return out
