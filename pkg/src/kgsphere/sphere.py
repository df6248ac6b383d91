"""Reference real spherical harmonics, quadrature on the unit sphere and
spectral multipliers.

Modes k = (l, m) with |m| <= l <= M are enumerated lexicographically, so the
flat index of (l, m) is l*l + l + m and a cutoff M carries (M+1)**2 modes.

Real harmonics are orthonormal for the surface measure of total mass 4*pi:

    Y_{l,0}  = q_l^0(cos t)
    Y_{l,m}  = sqrt(2) q_l^m(cos t) cos(m p)      m > 0
    Y_{l,-m} = sqrt(2) q_l^m(cos t) sin(m p)      m > 0

with q_l^m the fully normalized associated Legendre functions
(no Condon-Shortley phase).
"""
from dataclasses import dataclass
from functools import cached_property

import numpy as np

MAX_DEGREE = 4096


def bracket(x):
    """Japanese bracket <x> = sqrt(1 + x^2)."""
    x = np.asarray(x, dtype=float)
    return np.sqrt(1.0 + x * x)


def n_modes(M):
    return (M + 1) ** 2


def mode_index(l, m):
    if abs(m) > l or l < 0:
        raise ValueError(f"invalid mode ({l}, {m})")
    return l * l + l + m


def mode_of(k):
    l = int(np.sqrt(k))
    return l, k - l * l - l


def cutoff_of(n):
    """Cutoff M such that (M+1)^2 == n."""
    M = int(round(np.sqrt(n))) - 1
    if (M + 1) ** 2 != n:
        raise ValueError(f"{n} is not the size of an index triangle")
    return M


def triangle(M):
    """Arrays (l, m) of all modes with l <= M in canonical order."""
    ls = np.repeat(np.arange(M + 1), 2 * np.arange(M + 1) + 1)
    ms = np.concatenate([np.arange(-l, l + 1) for l in range(M + 1)])
    return ls, ms


def degrees(M):
    return triangle(M)[0]


def block(l):
    """Slice of the degree-l block in a flat coefficient vector."""
    return slice(l * l, (l + 1) * (l + 1))


@dataclass(frozen=True)
class QuadratureGrid:
    """Gauss-Legendre nodes in cos(theta) times uniform longitudes.

    Exact for spherical polynomials of degree <= D.
    """
    D: int
    x: np.ndarray        # cos(theta) nodes, shape (n_theta,)
    w: np.ndarray        # Gauss-Legendre weights, sum 2
    phi: np.ndarray      # longitudes, shape (n_phi,)

    @property
    def n_theta(self):
        return self.x.size

    @property
    def n_phi(self):
        return self.phi.size

    @property
    def shape(self):
        return (self.n_theta, self.n_phi)

    @cached_property
    def theta(self):
        return np.arccos(self.x)

    @cached_property
    def weights(self):
        """Full node weights, shape (n_theta, n_phi)."""
        return np.outer(self.w, np.full(self.n_phi, 2 * np.pi / self.n_phi))

    @cached_property
    def cartesian(self):
        """Ambient coordinates (x, y, z) of the nodes, each (n_theta, n_phi)."""
        s = np.sqrt(1.0 - self.x ** 2)
        X = np.outer(s, np.cos(self.phi))
        Y = np.outer(s, np.sin(self.phi))
        Z = np.outer(self.x, np.ones(self.n_phi))
        return X, Y, Z


def build_grid(D, cap=MAX_DEGREE):
    """Quadrature grid exact up to spherical degree D."""
    D = int(D)
    if D < 0:
        raise ValueError("exactness degree must be nonnegative")
    if D > cap:
        raise ValueError(f"exactness degree {D} exceeds the cap {cap}")
    n_theta = D // 2 + 1
    n_phi = D + 1
    x, w = np.polynomial.legendre.leggauss(n_theta)
    phi = 2 * np.pi * np.arange(n_phi) / n_phi
    return QuadratureGrid(D, x, w, phi)


def integrate(grid, values):
    values = np.asarray(values)
    if values.shape[-2:] != grid.shape:
        raise ValueError(f"values of shape {values.shape} do not match grid {grid.shape}")
    return np.einsum("...tf,t->...", values, grid.w) * (2 * np.pi / grid.n_phi)


def normalized_legendre(M, x):
    """Fully normalized associated Legendre functions.

    Returns q of shape (M+1, M+1, len(x)) with q[l, m] = 0 for m > l and
    int_{-1}^{1} q[l, m]^2 dx = 1/(2 pi).
    """
    x = np.atleast_1d(np.asarray(x, dtype=float))
    s = np.sqrt(np.clip(1.0 - x * x, 0.0, None))
    q = np.zeros((M + 1, M + 1, x.size))
    qmm = np.full(x.size, 1.0 / np.sqrt(4 * np.pi))
    for m in range(M + 1):
        if m > 0:
            qmm = np.sqrt((2 * m + 1) / (2.0 * m)) * s * qmm
        q[m, m] = qmm
        if m + 1 <= M:
            q[m + 1, m] = np.sqrt(2 * m + 3.0) * x * qmm
        for l in range(m + 2, M + 1):
            a = np.sqrt((4.0 * l * l - 1) / (l * l - m * m))
            b = np.sqrt(((l - 1.0) ** 2 - m * m) / (4.0 * (l - 1) ** 2 - 1))
            q[l, m] = a * (x * q[l - 1, m] - b * q[l - 2, m])
    return q


def trig_table(M, phi):
    """Rows sqrt(2) sin(|m| phi) for m<0, 1 for m=0, sqrt(2) cos(m phi) for m>0.

    Row j corresponds to m = j - M.
    """
    phi = np.atleast_1d(np.asarray(phi, dtype=float))
    T = np.empty((2 * M + 1, phi.size))
    T[M] = 1.0
    for m in range(1, M + 1):
        T[M + m] = np.sqrt(2.0) * np.cos(m * phi)
        T[M - m] = np.sqrt(2.0) * np.sin(m * phi)
    return T


def real_harmonics(M, theta, phi):
    """Values of every Y_k, l <= M, at scattered points; shape (n_modes, n_points)."""
    theta = np.atleast_1d(theta)
    phi = np.atleast_1d(phi)
    q = normalized_legendre(M, np.cos(theta))
    T = trig_table(M, phi)
    ls, ms = triangle(M)
    return q[ls, np.abs(ms)] * T[ms + M]


class HarmonicTable:
    """Reference harmonics Y_k, l <= M, tabulated on a quadrature grid.

    Stored in factored form (Legendre part times trigonometric part); the
    dense (n_modes, n_theta, n_phi) matrix is built on request only.
    """

    def __init__(self, grid, M, gram_tol=1e-8):
        if grid.D < 2 * M:
            raise ValueError(f"grid exactness {grid.D} below 2M = {2 * M}")
        self.grid = grid
        self.M = M
        self.q = normalized_legendre(M, grid.x)
        self.T = trig_table(M, grid.phi)
        self.ls, self.ms = triangle(M)
        # signed-order Legendre stack, (2M+1, n_theta, M+1)
        absm = np.abs(np.arange(-M, M + 1))
        self._qs = np.ascontiguousarray(np.transpose(self.q[:, absm, :], (1, 2, 0)))
        dev = self.gram_deviation()
        if dev > gram_tol:
            raise ValueError(f"Gram deviation {dev:.3e} exceeds {gram_tol:.1e}")

    @property
    def n_modes(self):
        return n_modes(self.M)

    def gram_deviation(self):
        """Max deviation of the quadrature Gram matrix from the identity."""
        dev = 0.0
        w = self.grid.w
        for m in range(self.M + 1):
            Q = self.q[m:, m]
            G = 2 * np.pi * (Q * w) @ Q.T
            dev = max(dev, np.abs(G - np.eye(G.shape[0])).max())
        Tg = self.T @ self.T.T * (2 * np.pi / self.grid.n_phi) / (2 * np.pi)
        return max(dev, np.abs(Tg - np.eye(Tg.shape[0])).max())

    @cached_property
    def values(self):
        """Dense table Y_k(node), shape (n_modes, n_theta, n_phi)."""
        return self.q[self.ls, np.abs(self.ms)][:, :, None] * self.T[self.ms + self.M][:, None, :]

    def block_values(self, l):
        """Values of Y_{(l,m)}, m = -l..l, shape (2l+1, n_theta, n_phi)."""
        ms = np.arange(-l, l + 1)
        return self.q[l, np.abs(ms)][:, :, None] * self.T[ms + self.M][:, None, :]

    def _to_grid2(self, coeffs):
        C = np.zeros(coeffs.shape[:-1] + (self.M + 1, 2 * self.M + 1), dtype=coeffs.dtype)
        C[..., self.ls, self.ms + self.M] = coeffs
        return C

    def synthesize(self, coeffs):
        coeffs = np.asarray(coeffs)
        if coeffs.shape[-1] != self.n_modes:
            raise ValueError(f"expected {self.n_modes} coefficients, got {coeffs.shape[-1]}")
        C = self._to_grid2(coeffs)
        G = np.einsum("jtl,...lj->...tj", self._qs, C, optimize=True)
        return G @ self.T

    def project(self, values):
        values = np.asarray(values)
        if values.shape[-2:] != self.grid.shape:
            raise ValueError(f"values of shape {values.shape} do not match grid {self.grid.shape}")
        F = values @ self.T.T * (2 * np.pi / self.grid.n_phi)
        F = F * self.grid.w[:, None]
        C = np.einsum("jtl,...tj->...lj", self._qs, F, optimize=True)
        return C[..., self.ls, self.ms + self.M]


def eval_reference_harmonics(grid, M):
    return HarmonicTable(grid, M)


def project(table, values):
    return table.project(values)


def synthesize(table, coeffs):
    return table.synthesize(coeffs)


def lambda_multiplier(M, mu, a):
    """Per-mode multiplier (l(l+1) + mu)^(a/4)."""
    if mu <= 0:
        raise ValueError("mass must be positive")
    l = degrees(M)
    return (l * (l + 1.0) + mu) ** (a / 4.0)


def apply_lambda(coeffs, mu, a):
    coeffs = np.asarray(coeffs)
    M = cutoff_of(coeffs.shape[-1])
    return coeffs * lambda_multiplier(M, mu, a)


def sobolev_norm(coeffs, s):
    coeffs = np.asarray(coeffs)
    M = cutoff_of(coeffs.shape[-1])
    wt = bracket(degrees(M)) ** (2 * s)
    return float(np.sqrt(np.sum(wt * np.abs(coeffs) ** 2)))
