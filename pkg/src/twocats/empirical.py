"""Rank transforms, empirical CDFs, KDE and the empirical h-function estimator."""

from bisect import insort
from dataclasses import dataclass

import numpy as np
from scipy import stats

_INV_SQRT_2PI = 1.0 / np.sqrt(2.0 * np.pi)


class DegenerateDataError(ValueError):
    """Raised when a sample has no spread, so no bandwidth can be chosen."""


def as_raw(data, min_rows=2):
    """Validate a raw two-column dataset and return it as a float array."""
    arr = np.asarray(data, dtype=np.float64)
    if arr.ndim != 2 or arr.shape[1] != 2:
        raise ValueError(f"expected an (n, 2) array, got shape {arr.shape}")
    if arr.shape[0] < min_rows:
        raise ValueError(f"need at least {min_rows} rows, got {arr.shape[0]}")
    if not np.all(np.isfinite(arr)):
        raise ValueError("dataset contains non-finite values")
    return arr


def pseudo_obs(data):
    """Column-wise ``rank / (n + 1)`` with average ranks for ties."""
    raw = as_raw(data)
    return stats.rankdata(raw, method="average", axis=0) / (raw.shape[0] + 1.0)


@dataclass(frozen=True)
class Ecdf2:
    """Bivariate empirical CDF ``F(a, b) = #{u_i <= a, v_i <= b} / n``."""

    points: np.ndarray

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=np.float64)
        if pts.ndim != 2 or pts.shape[1] != 2 or pts.shape[0] == 0:
            raise ValueError("ecdf2 needs a nonempty (n, 2) array")
        object.__setattr__(self, "points", pts)

    def __call__(self, a, b, chunk=2048):
        a, b = np.broadcast_arrays(np.asarray(a, dtype=np.float64), np.asarray(b, dtype=np.float64))
        flat_a, flat_b = a.ravel(), b.ravel()
        u, v = self.points[:, 0], self.points[:, 1]
        out = np.empty(flat_a.size)
        for s in range(0, flat_a.size, chunk):
            qa = flat_a[s:s + chunk, None]
            qb = flat_b[s:s + chunk, None]
            out[s:s + chunk] = np.count_nonzero((u <= qa) & (v <= qb), axis=1)
        out = (out / len(u)).reshape(a.shape)
        return out[()] if out.ndim == 0 else out


def ecdf2(points):
    return Ecdf2(points)


def silverman_bandwidth(samples):
    """``0.9 * min(sd, IQR / 1.34) * n^(-1/5)``; falls back to ``sd`` when IQR is zero."""
    x = np.asarray(samples, dtype=np.float64).ravel()
    if x.size < 2:
        raise DegenerateDataError("kde needs at least 2 samples")
    sd = np.std(x, ddof=1)
    if not sd > 0:
        raise DegenerateDataError("kde samples have zero spread")
    q75, q25 = np.percentile(x, [75, 25])
    spread = min(sd, (q75 - q25) / 1.34) or sd
    return 0.9 * spread * x.size ** -0.2


@dataclass(frozen=True)
class Kde:
    """Gaussian-kernel density estimate with a fixed bandwidth."""

    samples: np.ndarray
    bandwidth: float

    @classmethod
    def fit(cls, samples):
        x = np.asarray(samples, dtype=np.float64).ravel()
        return cls(x, silverman_bandwidth(x))

    def __post_init__(self):
        if not self.bandwidth > 0:
            raise ValueError("bandwidth must be positive")

    def pdf(self, x, chunk=1024):
        x = np.asarray(x, dtype=np.float64)
        flat = x.ravel()
        out = np.empty(flat.size)
        for s in range(0, flat.size, chunk):
            z = (flat[s:s + chunk, None] - self.samples) / self.bandwidth
            out[s:s + chunk] = np.exp(-0.5 * z * z).mean(axis=1)
        out = (out * _INV_SQRT_2PI / self.bandwidth).reshape(x.shape)
        return out[()] if out.ndim == 0 else out

    def logpdf(self, x):
        with np.errstate(divide="ignore"):
            return np.log(self.pdf(x))


def kde_pdf(samples, x):
    return Kde.fit(samples).pdf(x)


def _prefix_kde_sweep(key, other):
    """For each row, ``key_i * KDE({other_j : key_j <= key_i})(other_i)``."""
    n = key.size
    order = np.argsort(key, kind="stable")
    key_sorted = key[order]
    ends = np.searchsorted(key_sorted, key_sorted, side="right")
    out = np.empty(n)
    buf = []  # sorted values of ``other`` over the current prefix
    filled = 0
    for pos, i in enumerate(order):
        end = ends[pos]
        while filled < end:
            insort(buf, other[order[filled]])
            filled += 1
        if end < 2:
            out[i] = key[i]
            continue
        prefix = np.asarray(buf)
        try:
            h = silverman_bandwidth(prefix)
        except DegenerateDataError:
            out[i] = key[i]
            continue
        z = (other[i] - prefix) / h
        out[i] = key[i] * np.exp(-0.5 * z * z).mean() * _INV_SQRT_2PI / h
    return out


def empirical_dC_du(pobs):
    """Estimate ``dC/du`` at every pseudo-observation.

    ``dC/du (u, v) = P[V <= v | U = u] = v * f(u | V <= v)`` since ``U`` is
    uniform.  The conditional density is a KDE over the ``u`` values of
    the rows with ``v_j <= v_i``.  Prefixes with fewer than two rows (or no
    spread) fall back to the independence value ``v_i``.
    """
    p = _check_pobs(pobs)
    return _prefix_kde_sweep(p[:, 1], p[:, 0])


def empirical_dC_dv(pobs):
    """Mirror of :func:`empirical_dC_du` with the roles of ``u`` and ``v`` swapped."""
    p = _check_pobs(pobs)
    return _prefix_kde_sweep(p[:, 0], p[:, 1])


def _check_pobs(pobs):
    p = np.asarray(pobs, dtype=np.float64)
    if p.ndim != 2 or p.shape[1] != 2:
        raise ValueError("pseudo-observations must be an (n, 2) array")
    if p.shape[0] < 10:
        raise ValueError("the derivative estimator needs at least 10 rows")
    if np.any((p <= 0) | (p >= 1)):
        raise ValueError("pseudo-observations must lie strictly inside (0, 1)")
    return p


def r_squared(y, y_hat):
    """``1 - SS_res / SS_tot``."""
    y = np.asarray(y, dtype=np.float64)
    y_hat = np.asarray(y_hat, dtype=np.float64)
    ss_tot = np.sum((y - y.mean()) ** 2)
    return 1.0 - np.sum((y - y_hat) ** 2) / ss_tot
