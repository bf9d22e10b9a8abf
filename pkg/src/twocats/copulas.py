"""Closed-form reference copulas (Gaussian, Clayton, Frank).

These generate the synthetic benchmarks and serve as ground truth for
the empirical derivative estimator.  All functions broadcast over numpy
arrays.
"""

from dataclasses import dataclass

import numpy as np
from scipy import integrate
from scipy.special import ndtr, ndtri

from .rng import DEFAULT_SEED, make_rng

FAMILIES = ("gaussian", "clayton", "frank")
PDF_CLAMP = 1e-9


class CopulaDomainError(ValueError):
    pass


def _unit(x):
    return np.asarray(x, dtype=np.float64)


@dataclass(frozen=True)
class ReferenceCopula:
    """A one-parameter bivariate copula.

    Parameters
    ----------
    family : {"gaussian", "clayton", "frank"}
    param : float
        Correlation ``rho`` in (-1, 1) for the Gaussian family, ``theta > 0``
        for Clayton and Frank.
    """

    family: str
    param: float

    def __post_init__(self):
        family = self.family.lower()
        object.__setattr__(self, "family", family)
        object.__setattr__(self, "param", float(self.param))
        if family not in FAMILIES:
            raise CopulaDomainError(f"unknown copula family {self.family!r}")
        if family == "gaussian" and not -1.0 < self.param < 1.0:
            raise CopulaDomainError(f"gaussian copula needs |rho| < 1, got {self.param}")
        if family in ("clayton", "frank") and not self.param > 0.0:
            raise CopulaDomainError(f"{family} copula needs theta > 0, got {self.param}")

    # ------------------------------------------------------------------
    def cdf(self, u, v):
        u, v = np.broadcast_arrays(_unit(u), _unit(v))
        if np.any((u < 0) | (u > 1) | (v < 0) | (v > 1)):
            raise ValueError("u and v must lie in [0, 1]")
        us = np.clip(u, PDF_CLAMP, 1 - PDF_CLAMP)
        vs = np.clip(v, PDF_CLAMP, 1 - PDF_CLAMP)
        with np.errstate(divide="ignore", over="ignore", invalid="ignore"):
            out = getattr(self, f"_cdf_{self.family}")(us, vs)
        out = np.where(u >= 1, v, out)
        out = np.where(v >= 1, u, out)
        out = np.where((u <= 0) | (v <= 0), 0.0, out)
        return out[()] if out.ndim == 0 else out

    def pdf(self, u, v):
        """Copula density; inputs are clamped into [1e-9, 1 - 1e-9]."""
        u, v = np.broadcast_arrays(_unit(u), _unit(v))
        u = np.clip(u, PDF_CLAMP, 1 - PDF_CLAMP)
        v = np.clip(v, PDF_CLAMP, 1 - PDF_CLAMP)
        out = getattr(self, f"_pdf_{self.family}")(u, v)
        return out[()] if out.ndim == 0 else out

    def h(self, u, v):
        """``dC/du = P[V <= v | U = u]``."""
        u, v = np.broadcast_arrays(_unit(u), _unit(v))
        us = np.clip(u, PDF_CLAMP, 1 - PDF_CLAMP)
        vs = np.clip(v, PDF_CLAMP, 1 - PDF_CLAMP)
        with np.errstate(divide="ignore", over="ignore", invalid="ignore"):
            out = getattr(self, f"_h_{self.family}")(us, vs)
        out = np.clip(out, 0.0, 1.0)
        out = np.where(v >= 1, 1.0, np.where(v <= 0, 0.0, out))
        return out[()] if out.ndim == 0 else out

    h_function = h

    def h_inverse(self, u, p):
        """Solve ``h(u, v) = p`` for ``v`` (closed form for all three families)."""
        u, p = np.broadcast_arrays(_unit(u), _unit(p))
        us = np.clip(u, PDF_CLAMP, 1 - PDF_CLAMP)
        ps = np.clip(p, PDF_CLAMP, 1 - PDF_CLAMP)
        out = getattr(self, f"_hinv_{self.family}")(us, ps)
        out = np.clip(out, 0.0, 1.0)
        return out[()] if out.ndim == 0 else out

    def sample(self, n, seed=DEFAULT_SEED):
        """``n`` iid pairs: ``u, p ~ U(0,1)`` and ``v = h_inverse(u, p)``."""
        if n <= 0:
            raise ValueError("n must be positive")
        rng = make_rng(seed)
        u = rng.random(n)
        p = rng.random(n)
        return np.column_stack([u, self.h_inverse(u, p)])

    def kendall_tau(self):
        t = self.param
        if self.family == "gaussian":
            return 2.0 * np.arcsin(t) / np.pi
        if self.family == "clayton":
            return t / (t + 2.0)
        debye1 = integrate.quad(lambda x: x / np.expm1(x) if x > 0 else 1.0, 0.0, t)[0] / t
        return 1.0 - 4.0 / t * (1.0 - debye1)

    # Gaussian ----------------------------------------------------------
    def _cdf_gaussian(self, u, v):
        from .heads import bivariate_normal_cdf

        return bivariate_normal_cdf(ndtri(u), ndtri(v), self.param)

    def _pdf_gaussian(self, u, v):
        r = self.param
        x, y = ndtri(u), ndtri(v)
        s2 = 1.0 - r * r
        return np.exp(-(r * r * (x * x + y * y) - 2.0 * r * x * y) / (2.0 * s2)) / np.sqrt(s2)

    def _h_gaussian(self, u, v):
        r = self.param
        return ndtr((ndtri(v) - r * ndtri(u)) / np.sqrt(1.0 - r * r))

    def _hinv_gaussian(self, u, p):
        r = self.param
        return ndtr(ndtri(p) * np.sqrt(1.0 - r * r) + r * ndtri(u))

    # Clayton -----------------------------------------------------------
    def _clayton_s(self, u, v):
        t = self.param
        return np.expm1(-t * np.log(u)) + np.expm1(-t * np.log(v))

    def _cdf_clayton(self, u, v):
        return np.exp(-np.log1p(self._clayton_s(u, v)) / self.param)

    def _pdf_clayton(self, u, v):
        t = self.param
        la = np.log1p(self._clayton_s(u, v))
        return (1.0 + t) * np.exp((-t - 1.0) * (np.log(u) + np.log(v)) + (-1.0 / t - 2.0) * la)

    def _h_clayton(self, u, v):
        t = self.param
        la = np.log1p(self._clayton_s(u, v))
        return np.exp((-t - 1.0) * np.log(u) + (-1.0 / t - 1.0) * la)

    def _hinv_clayton(self, u, p):
        t = self.param
        w = np.exp(-t * np.log(u)) * np.expm1(-t / (t + 1.0) * np.log(p))
        return np.exp(-np.log1p(w) / t)

    # Frank -------------------------------------------------------------
    def _cdf_frank(self, u, v):
        t = self.param
        a, b, c = np.expm1(-t * u), np.expm1(-t * v), np.expm1(-t)
        return -np.log1p(a * b / c) / t

    def _pdf_frank(self, u, v):
        t = self.param
        a, b, c = np.expm1(-t * u), np.expm1(-t * v), np.expm1(-t)
        return -t * c * np.exp(-t * (u + v)) / (c + a * b) ** 2

    def _h_frank(self, u, v):
        t = self.param
        a, b, c = np.expm1(-t * u), np.expm1(-t * v), np.expm1(-t)
        return np.exp(-t * u) * b / (c + a * b)

    def _hinv_frank(self, u, p):
        t = self.param
        a, c = np.expm1(-t * u), np.expm1(-t)
        b = p * c / (np.exp(-t * u) - p * a)
        return -np.log1p(b) / t


def volume(cop, u1, u2, v1, v2):
    """Rectangle measure ``C(u2,v2) - C(u2,v1) - C(u1,v2) + C(u1,v1)``."""
    return cop.cdf(u2, v2) - cop.cdf(u2, v1) - cop.cdf(u1, v2) + cop.cdf(u1, v1)


@dataclass(frozen=True)
class SyntheticSpec:
    copula: ReferenceCopula
    n_train: int = 1500
    n_test: int = 500
    marginal: str = "normal"
    seed: int = DEFAULT_SEED

    def __post_init__(self):
        if self.n_train <= 0 or self.n_test <= 0:
            raise ValueError("n_train and n_test must be positive")
        if self.marginal not in ("normal", "uniform"):
            raise ValueError("marginal must be 'normal' or 'uniform'")


def make_synthetic(spec: SyntheticSpec):
    """Draw ``(train, test)`` raw datasets, each an ``(n, 2)`` array.

    Copula samples are pushed through the standard-normal quantile for
    ``marginal="normal"`` and left as-is for ``"uniform"``.  The first
    ``n_train`` draws form the training split.
    """
    uv = spec.copula.sample(spec.n_train + spec.n_test, seed=spec.seed)
    raw = ndtri(uv) if spec.marginal == "normal" else uv
    return raw[: spec.n_train].copy(), raw[spec.n_train:].copy()
