"""Conditional inverse-transform sampling from a fitted copula model.

Draw ``u, p ~ U(0, 1)`` and solve ``h_u(v) = dH/du(u, v) = p`` for ``v``.
The solver is a vectorized safeguarded Newton iteration: the Newton step
uses the copula density ``d2H/dudv`` as the derivative of ``h_u`` and
falls back to bisection whenever the step leaves the current bracket.
"""

from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from .rng import DEFAULT_SEED, make_rng


class RootFindError(ArithmeticError):
    """The conditional inverse did not converge; carries per-point diagnostics."""

    def __init__(self, message, u=None, p=None, residual=None):
        super().__init__(message)
        self.u = u
        self.p = p
        self.residual = residual


@dataclass(frozen=True)
class SamplerConfig:
    seed: int = DEFAULT_SEED
    tol: float = 1e-8
    max_iter: int = 100
    retries: int = 10

    def __post_init__(self):
        if not self.tol > 0:
            raise ValueError("tolerance must be positive")
        if self.max_iter < 1 or self.retries < 0:
            raise ValueError("max_iter must be positive and retries nonnegative")


@dataclass(frozen=True)
class SampleResult:
    uv: np.ndarray
    retries: int
    x: Optional[np.ndarray] = None


def conditional_h(model, u, v):
    """``P[V <= v | U = u]`` under the model, clipped to [0, 1]."""
    _, hu, _, _ = model.jets(u, v)
    return np.clip(hu, 0.0, 1.0)


def _solve(model, u, p, tol, max_iter):
    """Return ``(v, converged, residual)`` for equally shaped 1-D arrays."""
    n = u.size
    lo = np.zeros(n)
    hi = np.ones(n)
    v = p.copy()
    last_step = np.ones(n)
    resid = np.full(n, np.inf)
    done = np.zeros(n, dtype=bool)
    # a root exists only if h_u(1) reaches p
    _, top, _, _ = model.jets(u, np.ones(n))
    feasible = np.clip(top, 0.0, 1.0) >= p - tol
    active = np.flatnonzero(feasible)
    for _ in range(max_iter):
        if active.size == 0:
            break
        _, hu, _, huv = (np.asarray(x).reshape(-1) for x in model.jets(u[active], v[active]))
        f = np.clip(hu, 0.0, 1.0) - p[active]
        resid[active] = np.abs(f)
        ok = np.abs(f) <= tol
        done[active[ok]] = True
        lo[active] = np.where(f < 0, v[active], lo[active])
        hi[active] = np.where(f > 0, v[active], hi[active])
        with np.errstate(divide="ignore", invalid="ignore"):
            step = v[active] - f / huv
        a, b = lo[active], hi[active]
        # bisect when Newton leaves the bracket or fails to halve the previous step
        newton = (huv > 0) & (step > a) & (step < b) & (np.abs(step - v[active]) <= 0.5 * last_step[active])
        new = np.where(newton, step, 0.5 * (a + b))
        last_step[active] = np.abs(new - v[active])
        v[active] = np.where(ok, v[active], new)
        # a collapsed bracket cannot improve further
        stuck = (b - a) <= 4 * np.finfo(float).eps
        active = active[~ok & ~stuck]
    return v, done, resid


def inverse_conditional(model, u, p, tol=1e-8, max_iter=100):
    """Solve ``conditional_h(model, u, v) = p`` for ``v``.

    Raises
    ------
    RootFindError
        If any point fails to reach ``|h_u(v) - p| <= tol`` within
        ``max_iter`` iterations (including when ``p`` exceeds ``h_u(1)``).
    """
    u_arr, p_arr = np.broadcast_arrays(np.asarray(u, dtype=np.float64), np.asarray(p, dtype=np.float64))
    if np.any((u_arr <= 0) | (u_arr >= 1)):
        raise ValueError("u must lie strictly inside (0, 1)")
    if np.any((p_arr < 0) | (p_arr > 1)):
        raise ValueError("p must lie in [0, 1]")
    v, done, resid = _solve(model, u_arr.ravel(), p_arr.ravel(), tol, max_iter)
    if not done.all():
        bad = np.flatnonzero(~done)
        raise RootFindError(
            f"conditional inverse failed at {bad.size} point(s); first u={u_arr.ravel()[bad[0]]!r} "
            f"p={p_arr.ravel()[bad[0]]!r} residual={resid[bad[0]]!r}",
            u_arr.ravel()[bad], p_arr.ravel()[bad], resid[bad],
        )
    v = v.reshape(u_arr.shape)
    return float(v) if v.ndim == 0 else v


def sample_pairs(model, n, cfg: SamplerConfig = SamplerConfig(),
                 quantiles: Optional[tuple] = None) -> SampleResult:
    """Draw ``n`` pairs ``(u, v)`` from the model.

    Draws whose inverse fails are redrawn (fresh ``u`` and ``p``) up to
    ``cfg.retries`` times each.  ``quantiles`` is an optional pair of
    callables mapping ``u`` and ``v`` to the data scale.
    """
    if n <= 0:
        raise ValueError("n must be positive")
    rng = make_rng(cfg.seed)
    u = rng.random(n)
    p = rng.random(n)
    v = np.empty(n)
    pending = np.arange(n)
    attempts = np.zeros(n, dtype=int)
    retries = 0
    while pending.size:
        # keep u strictly interior; random() can return exactly 0
        u[pending] = np.clip(u[pending], 1e-12, 1 - 1e-12)
        sol, done, _ = _solve(model, u[pending], p[pending], cfg.tol, cfg.max_iter)
        v[pending[done]] = sol[done]
        failed = pending[~done]
        if failed.size and np.any(attempts[failed] >= cfg.retries):
            raise RootFindError(f"conditional inverse failed after {cfg.retries} retries")
        attempts[failed] += 1
        retries += failed.size
        u[failed] = rng.random(failed.size)
        p[failed] = rng.random(failed.size)
        pending = failed
    uv = np.column_stack([u, np.clip(v, 0.0, 1.0)])
    x = None
    if quantiles is not None:
        q1, q2 = quantiles
        x = np.column_stack([q1(uv[:, 0]), q2(uv[:, 1])])
    return SampleResult(uv, retries, x)


def empirical_quantile(samples) -> Callable:
    """Quantile function of a 1-D sample (linear interpolation)."""
    s = np.sort(np.asarray(samples, dtype=np.float64))
    return lambda q: np.quantile(s, q)
