"""Frequencies, small divisors and the smallest effective index.

A signed tuple is a pair (signs, degrees) of equal length r; its small
divisor is sum_j sigma_j omega_{l_j} with omega_l = sqrt(l(l+1) + mu).
"""
import csv
import itertools
from math import comb
from dataclasses import dataclass

import numpy as np

from .sphere import bracket

DEFAULT_MU = float(np.sqrt(2.0))


def omega(l, mu=DEFAULT_MU):
    if mu <= 0:
        raise ValueError("mass must be positive")
    l = np.asarray(l, dtype=float)
    return np.sqrt(l * (l + 1.0) + mu)


def small_divisor(signs, degs, mu=DEFAULT_MU):
    signs = np.asarray(signs, dtype=float)
    return float(np.sum(signs * omega(np.asarray(degs), mu)))


def effective_index(signs, degs):
    """Smallest <l> among degree classes whose sign sum is nonzero (inf if none)."""
    sums = {}
    for s, l in zip(signs, degs):
        sums[int(l)] = sums.get(int(l), 0) + int(s)
    live = [l for l, s in sums.items() if s != 0]
    if not live:
        return np.inf
    return float(bracket(min(live)))


@dataclass
class ScanReport:
    r: int
    mu: float
    M: int
    N: float
    min_abs_omega: float
    argmin: tuple           # ((sigma, l), ...)
    gamma_fit: float
    alpha_fit: float
    kappa: np.ndarray       # record-minimal envelope points
    envelope: np.ndarray
    n_tuples: int
    sampled: bool

    def rows(self):
        tup = " ".join(f"{'+' if s > 0 else '-'}{l}" for s, l in self.argmin)
        return [dict(r=self.r, mu=repr(self.mu), M=self.M, N=repr(float(self.N)),
                     min_abs_omega=repr(self.min_abs_omega), argmin=tup,
                     gamma_fit=repr(self.gamma_fit), alpha_fit=repr(self.alpha_fit))]

    def to_csv(self, path):
        cols = ["r", "mu", "M", "N", "min_abs_omega", "argmin", "gamma_fit", "alpha_fit"]
        with open(path, "w", newline="") as f:
            wr = csv.DictWriter(f, fieldnames=cols, lineterminator="\n")
            wr.writeheader()
            wr.writerows(self.rows())


def _signed_multisets(r, M):
    """All multisets of r (sigma, l) pairs, as arrays (signs, degs) of shape (n, r)."""
    items = [(s, l) for l in range(M + 1) for s in (-1, 1)]
    combos = np.array(list(itertools.combinations_with_replacement(range(len(items)), r)))
    items = np.array(items)
    return items[combos, 0], items[combos, 1]


def _kappa_rows(signs, degs):
    """Vectorized effective index for arrays of shape (n, r)."""
    n, r = degs.shape
    kap = np.full(n, np.inf)
    for j in range(r):
        same = degs == degs[:, [j]]
        ssum = np.sum(signs * same, axis=1)
        live = ssum != 0
        kap = np.where(live, np.minimum(kap, bracket(degs[:, j])), kap)
    return kap


def nonresonance_scan(mu, r, M, N, max_enum=2_000_000, n_samples=200_000, rng=None):
    """Minimum |Omega| over signed degree tuples with kappa <= N.

    Enumerates degree multisets exhaustively when their number is at most
    max_enum, otherwise draws n_samples random tuples.  The envelope fit
    log|Omega| = log(gamma) - alpha log(kappa) uses the record-minimal points.
    """
    if r < 2:
        raise ValueError("tuple length must be at least 2")
    total = comb(2 * (M + 1) + r - 1, r)
    sampled = total > max_enum
    if not sampled:
        signs, degs = _signed_multisets(r, M)
    else:
        rng = np.random.default_rng(rng)
        signs = rng.choice([-1, 1], size=(n_samples, r))
        degs = rng.integers(0, M + 1, size=(n_samples, r))
    kap = _kappa_rows(signs, degs)
    keep = np.isfinite(kap) & (kap <= N + 1e-12)
    signs, degs, kap = signs[keep], degs[keep], kap[keep]
    if kap.size == 0:
        raise ValueError("no tuple with finite effective index below the cutoff")
    Om = np.abs(np.sum(signs * omega(degs, mu), axis=1))
    i = int(np.argmin(Om))
    order = np.lexsort((signs[i], degs[i]))
    argmin = tuple((int(signs[i][j]), int(degs[i][j])) for j in order)

    # record-minimal envelope in kappa
    ks = np.unique(kap)
    per_k = np.array([Om[kap == k].min() for k in ks])
    env = np.minimum.accumulate(per_k)
    rec = np.concatenate([[True], env[1:] < env[:-1]])
    kx, ey = ks[rec], env[rec]
    if kx.size >= 2 and np.all(ey > 0):
        slope, icpt = np.polyfit(np.log(kx), np.log(ey), 1)
        alpha, gamma = float(-slope), float(np.exp(icpt))
    else:
        alpha, gamma = 0.0, float(ey.min())
    return ScanReport(r, float(mu), M, float(N), float(Om[i]), argmin, gamma, alpha,
                      kx, ey, int(kap.size), sampled)
