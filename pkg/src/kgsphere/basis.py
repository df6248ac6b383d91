"""Random orthonormal eigenbases, product integrals and concentration probes.

A family holds one orthogonal matrix R_l per degree and defines

    e_(l,m) = sum_m' R_l[m', m] Y_(l,m')

so columns of R_l are the reference coefficients of the new basis vectors.
"""
import csv
import json
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .sphere import bracket, build_grid, HarmonicTable, integrate, n_modes, block

FORMAT = "kgsphere.basis"
VERSION = 1
CHUNK = 250


def haar_rotation(l, rng):
    """Haar-distributed orthogonal matrix of size 2l+1."""
    n = 2 * l + 1
    Q, R = np.linalg.qr(rng.standard_normal((n, n)))
    return Q * np.sign(np.diag(R))


def _stream(seed, *ids):
    return np.random.default_rng(np.random.SeedSequence(entropy=seed, spawn_key=tuple(ids)))


@dataclass(frozen=True)
class RandomBasisFamily:
    M: int
    seed: object
    rotations: tuple = field(repr=False)

    def rotation(self, l):
        if not 0 <= l <= self.M:
            raise IndexError(f"degree {l} outside 0..{self.M}")
        return self.rotations[l]

    def to_reference(self, coeffs):
        """Reference-basis coefficients of sum_k coeffs[k] e_k."""
        coeffs = np.asarray(coeffs)
        out = np.empty_like(coeffs)
        for l, R in enumerate(self.rotations):
            out[..., block(l)] = coeffs[..., block(l)] @ R.T
        return out

    def from_reference(self, coeffs):
        coeffs = np.asarray(coeffs)
        out = np.empty_like(coeffs)
        for l, R in enumerate(self.rotations):
            out[..., block(l)] = coeffs[..., block(l)] @ R
        return out

    def to_dict(self):
        return {"format": FORMAT, "version": VERSION, "M": self.M, "seed": self.seed,
                "rotations": [R.ravel().tolist() for R in self.rotations]}

    @classmethod
    def from_dict(cls, d):
        if d.get("format") != FORMAT or d.get("version") != VERSION:
            raise ValueError("unsupported basis container")
        M = int(d["M"])
        rots = tuple(np.array(v, dtype=float).reshape(2 * l + 1, 2 * l + 1)
                     for l, v in enumerate(d["rotations"]))
        if len(rots) != M + 1:
            raise ValueError("rotation count does not match M")
        return cls(M, d["seed"], rots)

    def save(self, path):
        with open(path, "w") as f:
            json.dump(self.to_dict(), f, separators=(",", ":"))

    @classmethod
    def load(cls, path):
        with open(path) as f:
            return cls.from_dict(json.load(f))


def sample_family(M, seed):
    """One Haar rotation per degree; degree l uses the stream (seed, l)."""
    rots = tuple(haar_rotation(l, _stream(seed, l)) for l in range(M + 1))
    return RandomBasisFamily(M, seed, rots)


def reference_family(M):
    return RandomBasisFamily(M, None, tuple(np.eye(2 * l + 1) for l in range(M + 1)))


@dataclass(frozen=True)
class Weight:
    """Weight g sampled on a grid; degree is its polynomial degree or None."""
    values: np.ndarray
    degree: object = None

    @classmethod
    def constant(cls, grid, c=1.0):
        return cls(np.full(grid.shape, float(c)), 0)

    @classmethod
    def polynomial(cls, grid, coeffs):
        """g = sum c * x^a y^b z^c from {(a, b, c): coef}."""
        X, Y, Z = grid.cartesian
        v = np.zeros(grid.shape)
        deg = 0
        for (a, b, c), coef in coeffs.items():
            v = v + coef * X ** a * Y ** b * Z ** c
            deg = max(deg, a + b + c)
        return cls(v, deg)

    @classmethod
    def sampled(cls, grid, fn):
        X, Y, Z = grid.cartesian
        return cls(np.asarray(fn(X, Y, Z), dtype=float), None)


def basis_values(family, table, k):
    """Values of e_k on the grid of the table."""
    l, m = k
    if not (0 <= l <= min(family.M, table.M) and abs(m) <= l):
        raise IndexError(f"mode {k} out of range")
    R = family.rotation(l)
    ms = np.arange(-l, l + 1)
    A = table.q[l, np.abs(ms)].T * R[:, m + l]
    return A @ table.T[ms + table.M]


def block_basis_values(family, table, l):
    """Values of e_(l,m), m=-l..l, shape (2l+1, n_theta, n_phi)."""
    V = table.block_values(l)
    return np.tensordot(family.rotation(l).T, V, axes=1)


def product_integral(family, table, ks, g=None):
    """Quadrature value of int e_k1 ... e_kp g."""
    grid = table.grid
    if g is None:
        g = Weight.constant(grid)
    if g.degree is not None:
        need = sum(l for l, _ in ks) + g.degree
        if need > grid.D:
            raise ValueError(f"grid exactness {grid.D} below integrand degree {need}")
    f = g.values
    for k in ks:
        f = f * basis_values(family, table, k)
    return float(integrate(grid, f))


def upsilon(ks):
    """max({1} and <l_j> for k_j appearing exactly once)."""
    ks = [tuple(k) for k in ks]
    out = 1.0
    for k in ks:
        if ks.count(k) == 1:
            out = max(out, float(bracket(k[0])))
    return out


def statistic(integral, ks):
    p = len(ks)
    linf = max(l for l, _ in ks)
    return abs(integral) * np.sqrt(upsilon(ks)) / np.log(2 + linf) ** p


@dataclass
class ProductIntegralReport:
    p: int
    ks: np.ndarray            # (n, p, 2)
    integrals: np.ndarray
    upsilons: np.ndarray
    statistics: np.ndarray
    simple_degrees: np.ndarray
    decay_exponent: float
    max_statistic: float
    quantiles: dict
    seed: object

    @property
    def fitted_constant(self):
        return self.max_statistic

    def to_csv(self, path):
        p = self.p
        cols = ["p"] + [f"l{j+1}" for j in range(p)] + [f"m{j+1}" for j in range(p)] \
            + ["integral", "upsilon", "statistic"]
        with open(path, "w", newline="") as f:
            wr = csv.writer(f, lineterminator="\n")
            wr.writerow(cols)
            for k, I, U, S in zip(self.ks, self.integrals, self.upsilons, self.statistics):
                wr.writerow([p] + [int(x) for x in k[:, 0]] + [int(x) for x in k[:, 1]]
                            + [repr(float(I)), repr(float(U)), repr(float(S))])


def _draw_tuple(rng, M, p, lo, hi, anchor_max, parity):
    """Tuple with a simple index of degree L in [lo, hi]: anchors of low degree,
    one partner of degree near L, all compatible with the selection rule."""
    L = int(rng.integers(lo, hi + 1))
    anchors = [int(a) for a in rng.integers(1, anchor_max + 1, size=p - 2)]
    S = sum(anchors)
    cand = np.arange(max(0, L - S), min(M, L + S) + 1)
    if parity:
        cand = cand[(cand + L + S) % 2 == 0]
    Lp = int(rng.choice(cand))
    degs = [L, Lp] + anchors
    ms = [int(rng.integers(-l, l + 1)) for l in degs]
    while Lp == L and ms[1] == ms[0]:
        ms[1] = int(rng.integers(-Lp, Lp + 1))
    return list(zip(degs, ms)), L


def estimate_bound_check(family, p=3, degree_range=(8, 64), n_samples=1000, seed=0,
                         g_poly=None, anchor_max=4, n_workers=1, table=None):
    """Sample product integrals and the normalized decay statistic.

    Each tuple carries a designated simple index of degree L drawn uniformly
    from degree_range, p-2 anchors of degree <= anchor_max and a partner of
    degree within reach of L, so that the selection rule leaves the integral
    generically nonzero.  g_poly is None (g = 1) or a {(a,b,c): coef} map.
    """
    if p < 3:
        raise ValueError("p must be at least 3")
    lo, hi = degree_range
    M = family.M
    if hi > M:
        raise ValueError("degree range exceeds the family cutoff")
    if table is None:
        gdeg = 0 if g_poly is None else max(sum(a) for a in g_poly)
        table = HarmonicTable(build_grid(p * M + gdeg), M)
    g = Weight.constant(table.grid) if g_poly is None else Weight.polynomial(table.grid, g_poly)
    parity = g_poly is None

    n_chunks = (n_samples + CHUNK - 1) // CHUNK

    def run(c):
        rng = _stream(seed, 10_000 + c)
        n = min(CHUNK, n_samples - c * CHUNK)
        out = []
        for _ in range(n):
            ks, L = _draw_tuple(rng, M, p, lo, hi, anchor_max, parity)
            I = product_integral(family, table, ks, g)
            out.append((ks, L, I))
        return out

    if n_workers > 1:
        with ThreadPoolExecutor(n_workers) as ex:
            chunks = list(ex.map(run, range(n_chunks)))
    else:
        chunks = [run(c) for c in range(n_chunks)]
    rows = [r for ch in chunks for r in ch]
    ks = np.array([r[0] for r in rows], dtype=int)
    Ls = np.array([r[1] for r in rows])
    Is = np.array([r[2] for r in rows])
    Us = np.array([upsilon(k) for k in ks])
    St = np.array([statistic(I, k) for I, k in zip(Is, ks)])
    decay = fit_decay(Ls, Is)
    q = {str(x): float(np.quantile(St, x)) for x in (0.5, 0.9, 0.99)}
    return ProductIntegralReport(p, ks, Is, Us, St, Ls, decay, float(St.max()), q, seed)


def fit_decay(simple_degrees, integrals, min_count=5):
    """Slope of log median |I| against log <L>."""
    Ls = np.asarray(simple_degrees)
    absI = np.abs(np.asarray(integrals))
    xs, ys = [], []
    for L in np.unique(Ls):
        sel = absI[Ls == L]
        if sel.size >= min_count and np.median(sel) > 0:
            xs.append(np.log(bracket(L)))
            ys.append(np.log(np.median(sel)))
    if len(xs) < 2:
        return float("nan")
    return float(np.polyfit(xs, ys, 1)[0])


@dataclass
class LqSummary:
    l: int
    q: float
    norms: np.ndarray
    median: float
    tails: dict


def lq_concentration_probe(l, q, n_samples, seed=0, offsets=(0.1, 0.25, 0.5), batch=256):
    """L^q norms of random unit vectors of the degree-l eigenspace.

    Norms use the probability measure dvol/(4 pi) and vectors normalized in
    the same measure, so q=2 gives exactly 1.
    """
    if q < 2:
        raise ValueError("q must be at least 2")
    D = max(2 * l, int(np.ceil(q)) * l)
    table = HarmonicTable(build_grid(D), l)
    V = table.block_values(l).reshape(2 * l + 1, -1)
    w = table.grid.weights.ravel() / (4 * np.pi)
    rng = _stream(seed, 20_000 + l)
    C = rng.standard_normal((n_samples, 2 * l + 1))
    C /= np.linalg.norm(C, axis=1, keepdims=True)
    C *= np.sqrt(4 * np.pi)
    norms = np.empty(n_samples)
    for s in range(0, n_samples, batch):
        F = C[s:s + batch] @ V
        norms[s:s + batch] = (np.abs(F) ** q @ w) ** (1.0 / q)
    med = float(np.median(norms))
    tails = {str(o): float(np.mean(norms > med + o)) for o in offsets}
    return LqSummary(l, q, norms, med, tails)
