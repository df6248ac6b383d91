"""Real-valued homogeneous polynomials on C^{T_M}, Poisson brackets,
weighted coefficient norms and Hamiltonian flows.

A factor u_k^sigma is encoded by the integer code 2*k + (sigma > 0), where k
is the flat mode index; code 2k stands for conj(u_k) and 2k+1 for u_k.  A
monomial key is a sorted row of codes, so rows are ordered lexicographically
by (l, m, sigma).

Coefficients are monomial coefficients: H(u) = sum_key c(key) prod u^sigma.
The fully symmetric tensor entry of a key is c(key) divided by the number of
distinct orderings of the key.  Only one key of each conjugate pair is stored
(the one with the smaller lexicographic row); its partner carries the complex
conjugate coefficient.

Conventions: grad H = 2 dH/d(conj u), (u, v) = Re sum u conj(v),
{H, K} = 2i sum_k (dH/d(conj u_k) dK/du_k - dH/du_k dK/d(conj u_k)),
and the flow of chi solves du/dt = i grad chi(u).
"""
import json
import warnings
from functools import cached_property
from math import factorial

import numpy as np
from scipy.integrate import solve_ivp

from .sphere import bracket, degrees, n_modes, mode_index, mode_of, sobolev_norm
from .resonance import omega as _omega

FORMAT = "kgsphere.polynomial"
VERSION = 1
PAIR_CHUNK = 4_000_000


class FlowError(RuntimeError):
    pass


class NearIdentityWarning(RuntimeWarning):
    pass


def encode(factors):
    """Codes for factors given as (l, m, sigma) or ((l, m), sigma)."""
    out = []
    for f in factors:
        if len(f) == 2:
            (l, m), s = f
        else:
            l, m, s = f
        if s not in (-1, 1):
            raise ValueError(f"sign must be +-1, got {s}")
        out.append(2 * mode_index(l, m) + (1 if s > 0 else 0))
    return tuple(sorted(out))


def decode(codes):
    """Inverse of encode: tuple of (l, m, sigma)."""
    out = []
    for c in codes:
        l, m = mode_of(int(c) >> 1)
        out.append((l, m, 1 if c & 1 else -1))
    return tuple(out)


def _conj_rows(keys):
    return np.sort(keys ^ 1, axis=1)


def _row_ids(rows, base):
    """Integer ids preserving lexicographic order (needs base**r < 2**63)."""
    ids = np.zeros(rows.shape[0], dtype=np.int64)
    for j in range(rows.shape[1]):
        ids = ids * base + rows[:, j]
    return ids


def _ids_pair(keys, ckeys, base):
    """Order-consistent ids for keys and their conjugates."""
    r = keys.shape[1]
    if r == 0 or r * np.log2(base) < 62:
        return _row_ids(keys, base), _row_ids(ckeys, base)
    both = np.concatenate([keys, ckeys])
    _, inv = np.unique(both, axis=0, return_inverse=True)
    inv = inv.ravel().astype(np.int64)
    return inv[: keys.shape[0]], inv[keys.shape[0]:]


def _multinomial(keys):
    """Number of distinct orderings of each sorted row."""
    n, r = keys.shape
    out = np.full(n, float(factorial(r)))
    if r == 0 or n == 0:
        return out
    run = np.ones(n)
    for j in range(1, r):
        same = keys[:, j] == keys[:, j - 1]
        run = np.where(same, run + 1, 1.0)
        out = out / np.where(same, run, 1.0)
    return out


def _canonical(M, r, keys, coefs, full):
    """Reduce rows (sorted codes) with coefficients to stored representatives.

    full=True: rows describe a whole real polynomial (both keys of each pair
    present); the representative gets (c_K + conj c_Kbar) / 2.
    full=False: rows are one-sided; conjugate partners are implied.
    """
    keys = np.asarray(keys, dtype=np.int64).reshape(-1, r)
    coefs = np.asarray(coefs, dtype=complex).ravel()
    if keys.shape[0] == 0:
        return np.zeros((0, r), dtype=np.int64), np.zeros(0, dtype=complex)
    keys = np.sort(keys, axis=1)
    ckeys = _conj_rows(keys)
    base = 2 * n_modes(M)
    ids, cids = _ids_pair(keys, ckeys, base)
    own = ids <= cids
    rep_ids = np.where(own, ids, cids)
    rep_rows = np.where(own[:, None], keys, ckeys)
    vals = np.where(own, coefs, np.conj(coefs))
    uniq, first, inv = np.unique(rep_ids, return_index=True, return_inverse=True)
    inv = inv.ravel()
    S = np.bincount(inv, vals.real, uniq.size) + 1j * np.bincount(inv, vals.imag, uniq.size)
    rows = rep_rows[first]
    selfc = ids[first] == cids[first]
    if full:
        S = np.where(selfc, S.real, S / 2)
    else:
        S = np.where(selfc, S.real, S)
    nz = S != 0
    return rows[nz], S[nz].astype(complex)


class HomogeneousPolynomial:
    """Degree-r real polynomial on C^{T_M}, immutable."""

    def __init__(self, M, degree, keys=None, coefs=None):
        self.M = int(M)
        self.degree = int(degree)
        if keys is None:
            keys = np.zeros((0, degree), dtype=np.int64)
            coefs = np.zeros(0, dtype=complex)
        self.keys = np.asarray(keys, dtype=np.int64).reshape(-1, degree)
        self.coefs = np.asarray(coefs, dtype=complex).ravel()
        self.keys.setflags(write=False)
        self.coefs.setflags(write=False)

    # -- construction ---------------------------------------------------
    @classmethod
    def zero(cls, M, degree):
        return cls(M, degree)

    @classmethod
    def _from_rows(cls, M, degree, keys, coefs, full):
        k, c = _canonical(M, degree, keys, coefs, full)
        return cls(M, degree, k, c)

    @classmethod
    def from_terms(cls, M, terms, tensor=False, tol=1e-12):
        """Build from {key: coefficient}; keys are tuples of (l, m, sigma).

        Coefficients are monomial coefficients, or symmetric tensor entries
        when tensor=True.  A key whose conjugate is absent implies it; when
        both are given they must agree.
        """
        if not terms:
            raise ValueError("empty term map; use zero()")
        items = {}
        for key, c in terms.items():
            codes = encode(key)
            items[codes] = items.get(codes, 0) + complex(c)
        degree = len(next(iter(items)))
        rows, vals = [], []
        for codes, c in items.items():
            if len(codes) != degree:
                raise ValueError("mixed degrees in term map")
            conj = tuple(sorted(x ^ 1 for x in codes))
            if tensor:
                c = c * _multinomial(np.array([codes]))[0]
            if conj == codes:
                if abs(c.imag) > tol * max(1.0, abs(c)):
                    raise ValueError(f"self-conjugate key {decode(codes)} needs a real coefficient")
            elif conj in items:
                cc = items[conj] * (_multinomial(np.array([conj]))[0] if tensor else 1)
                if abs(cc - np.conj(c)) > tol * max(1.0, abs(c)):
                    raise ValueError(f"coefficients of {decode(codes)} and its conjugate violate reality")
                if conj < codes:
                    continue
            rows.append(codes)
            vals.append(c)
        return cls._from_rows(M, degree, np.array(rows), np.array(vals), full=False)

    # -- structure ------------------------------------------------------
    def __len__(self):
        return self.coefs.size

    def is_zero(self):
        return self.coefs.size == 0 or not np.any(self.coefs)

    @cached_property
    def _full(self):
        """Both keys of each conjugate pair: (keys, coefs)."""
        ck = _conj_rows(self.keys)
        selfc = np.all(ck == self.keys, axis=1)
        keys = np.concatenate([self.keys, ck[~selfc]])
        coefs = np.concatenate([self.coefs, np.conj(self.coefs[~selfc])])
        return keys, coefs

    def full_terms(self):
        return self._full

    def terms(self):
        """Stored representatives as {((l, m, sigma), ...): coefficient}."""
        return {decode(k): complex(c) for k, c in zip(self.keys, self.coefs)}

    @cached_property
    def modes(self):
        return self.keys >> 1

    @cached_property
    def signs(self):
        return 2 * (self.keys & 1) - 1

    @cached_property
    def ells(self):
        return degrees(self.M)[self.modes]

    def tensor_coefs(self):
        """Symmetric tensor entries of the stored keys."""
        return self.coefs / _multinomial(self.keys)

    def _check(self, other):
        if other.M != self.M:
            raise ValueError(f"cutoff mismatch {self.M} != {other.M}")

    # -- arithmetic -----------------------------------------------------
    def __add__(self, other):
        self._check(other)
        if other.degree != self.degree:
            raise ValueError("cannot add polynomials of different degrees")
        keys = np.concatenate([self.keys, other.keys])
        coefs = np.concatenate([self.coefs, other.coefs])
        return HomogeneousPolynomial._from_rows(self.M, self.degree, keys, coefs, full=False)

    def __neg__(self):
        return HomogeneousPolynomial(self.M, self.degree, self.keys, -self.coefs)

    def __sub__(self, other):
        return self + (-other)

    def scale(self, lam):
        lam = float(lam)
        return HomogeneousPolynomial(self.M, self.degree, self.keys, lam * self.coefs)

    def __mul__(self, lam):
        return self.scale(lam)

    __rmul__ = __mul__

    def select(self, mask):
        mask = np.asarray(mask, dtype=bool)
        return HomogeneousPolynomial(self.M, self.degree, self.keys[mask], self.coefs[mask])

    def with_coefs(self, coefs):
        """Same keys, new coefficients (caller guarantees reality)."""
        coefs = np.asarray(coefs, dtype=complex)
        nz = coefs != 0
        return HomogeneousPolynomial(self.M, self.degree, self.keys[nz], coefs[nz])

    # -- serialization --------------------------------------------------
    def to_dict(self):
        entries = [[[list(f) for f in decode(k)], float(c.real), float(c.imag)]
                   for k, c in zip(self.keys, self.coefs)]
        return {"format": FORMAT, "version": VERSION, "degree": self.degree, "M": self.M,
                "entries": entries}

    @classmethod
    def from_dict(cls, d):
        if d.get("format") != FORMAT or d.get("version") != VERSION:
            raise ValueError("unsupported polynomial container")
        M, degree = int(d["M"]), int(d["degree"])
        if not d["entries"]:
            return cls.zero(M, degree)
        rows = np.array([encode([tuple(f) for f in e[0]]) for e in d["entries"]])
        coefs = np.array([complex(e[1], e[2]) for e in d["entries"]])
        return cls._from_rows(M, degree, rows, coefs, full=False)

    def dumps(self):
        return json.dumps(self.to_dict(), separators=(",", ":"))

    @classmethod
    def loads(cls, s):
        return cls.from_dict(json.loads(s))

    def __repr__(self):
        return f"HomogeneousPolynomial(M={self.M}, degree={self.degree}, terms={len(self)})"


class DiagonalQuadratic:
    """Z2(u) = 1/2 sum omega_k |u_k|^2."""

    def __init__(self, freqs):
        self.freqs = np.asarray(freqs, dtype=float)
        if np.any(self.freqs <= 0):
            raise ValueError("frequencies must be positive")
        self.M = int(round(np.sqrt(self.freqs.size))) - 1

    @classmethod
    def klein_gordon(cls, M, mu):
        return cls(_omega(degrees(M), mu))

    def __call__(self, u):
        return 0.5 * float(np.sum(self.freqs * np.abs(u) ** 2))

    def gradient(self, u):
        return self.freqs * u

    def as_polynomial(self):
        k = np.arange(self.freqs.size)
        keys = np.stack([2 * k, 2 * k + 1], axis=1)
        return HomogeneousPolynomial(self.M, 2, keys, 0.5 * self.freqs.astype(complex))

    def divisors(self, H):
        """Omega(sigma, k) for every stored key of H."""
        return np.sum(H.signs * self.freqs[H.modes], axis=1)


def super_action(M, l):
    """J_l = sum_m |u_(l,m)|^2 as a polynomial."""
    k = np.arange(l * l, (l + 1) ** 2)
    keys = np.stack([2 * k, 2 * k + 1], axis=1)
    return HomogeneousPolynomial(M, 2, keys, np.ones(k.size, dtype=complex))


def _interleave(u):
    u = np.asarray(u, dtype=complex)
    z = np.empty(2 * u.size, dtype=complex)
    z[0::2] = np.conj(u)
    z[1::2] = u
    return z


def eval_poly(H, u):
    u = np.asarray(u, dtype=complex)
    if u.size != n_modes(H.M):
        raise ValueError(f"state has {u.size} entries, cutoff {H.M} needs {n_modes(H.M)}")
    if len(H) == 0:
        return 0.0
    z = _interleave(u)
    mono = np.prod(z[H.keys], axis=1)
    selfc = np.all(_conj_rows(H.keys) == H.keys, axis=1)
    fac = np.where(selfc, 1.0, 2.0)
    return float(np.sum(fac * H.coefs * mono).real)


def _others_products(zk):
    """For each column i, product of the remaining columns."""
    n, r = zk.shape
    pre = np.ones((n, r + 1), dtype=complex)
    suf = np.ones((n, r + 1), dtype=complex)
    for j in range(r):
        pre[:, j + 1] = pre[:, j] * zk[:, j]
        suf[:, r - 1 - j] = suf[:, r - j] * zk[:, r - 1 - j]
    return [pre[:, i] * suf[:, i + 1] for i in range(r)]


def gradient(H, u):
    """grad H(u) = 2 dH/d(conj u)."""
    u = np.asarray(u, dtype=complex)
    nm = n_modes(H.M)
    if u.size != nm:
        raise ValueError(f"state has {u.size} entries, cutoff {H.M} needs {nm}")
    out = np.zeros(nm, dtype=complex)
    if len(H) == 0:
        return out
    keys, coefs = H._full
    z = _interleave(u)
    zk = z[keys]
    for i, oth in enumerate(_others_products(zk)):
        codes = keys[:, i]
        bar = (codes & 1) == 0
        if not np.any(bar):
            continue
        val = coefs[bar] * oth[bar]
        idx = codes[bar] >> 1
        out += np.bincount(idx, val.real, nm) + 1j * np.bincount(idx, val.imag, nm)
    return 2 * out


def _expand_pairs(ca, cb_sorted, lo_hi):
    lo, hi = lo_hi
    counts = hi - lo
    total = int(counts.sum())
    a_idx = np.repeat(np.arange(ca.size), counts)
    offs = np.arange(total) - np.repeat(np.cumsum(counts) - counts, counts)
    b_pos = np.repeat(lo, counts) + offs
    return a_idx, b_pos


def poisson(A, B):
    """Poisson bracket {A, B} = (i grad A, grad B)."""
    A._check(B)
    M = A.M
    r = A.degree + B.degree - 2
    if len(A) == 0 or len(B) == 0:
        return HomogeneousPolynomial.zero(M, r)
    if not np.intersect1d(A.modes.ravel(), B.modes.ravel()).size:
        return HomogeneousPolynomial.zero(M, r)
    ka, ca_ = A._full
    kb, cb_ = B._full
    rows_out, vals_out = [], []
    for j in range(B.degree):
        ob = np.argsort(kb[:, j], kind="stable")
        cbs = kb[ob, j]
        restb = np.delete(kb, j, axis=1)[ob]
        coefb = cb_[ob]
        for i in range(A.degree):
            codes = ka[:, i]
            target = codes ^ 1
            lo = np.searchsorted(cbs, target, "left")
            hi = np.searchsorted(cbs, target, "right")
            sgn = np.where((codes & 1) == 0, 2j, -2j)
            resta = np.delete(ka, i, axis=1)
            counts = hi - lo
            # chunk over rows of A to bound memory
            csum = np.cumsum(counts)
            start = 0
            while start < ka.shape[0]:
                base = csum[start - 1] if start else 0
                stop = int(np.searchsorted(csum, base + PAIR_CHUNK, "right"))
                stop = max(stop, start + 1)
                sl = slice(start, stop)
                a_loc, b_pos = _expand_pairs(codes[sl], cbs, (lo[sl], hi[sl]))
                if a_loc.size:
                    a_idx = a_loc + start
                    rows = np.concatenate([resta[a_idx], restb[b_pos]], axis=1)
                    vals = sgn[a_idx] * ca_[a_idx] * coefb[b_pos]
                    k, c = _aggregate(M, r, rows, vals)
                    rows_out.append(k)
                    vals_out.append(c)
                start = stop
    if not rows_out:
        return HomogeneousPolynomial.zero(M, r)
    rows, vals = _aggregate(M, r, np.concatenate(rows_out), np.concatenate(vals_out))
    return HomogeneousPolynomial._from_rows(M, r, rows, vals, full=True)


def _aggregate(M, r, rows, vals):
    """Sum coefficients of identical sorted rows."""
    rows = np.sort(rows, axis=1)
    if rows.shape[0] == 0:
        return rows, vals
    base = 2 * n_modes(M)
    if r * np.log2(base) < 62:
        ids = _row_ids(rows, base)
        uniq, first, inv = np.unique(ids, return_index=True, return_inverse=True)
    else:
        uniq, first, inv = np.unique(rows, axis=0, return_index=True, return_inverse=True)
    inv = inv.ravel()
    n = first.size
    S = np.bincount(inv, vals.real, n) + 1j * np.bincount(inv, vals.imag, n)
    return rows[first], S


def multiply(A, B):
    """Pointwise product of two polynomials."""
    A._check(B)
    ka, ca = A._full
    kb, cb = B._full
    r = A.degree + B.degree
    if ka.shape[0] == 0 or kb.shape[0] == 0:
        return HomogeneousPolynomial.zero(A.M, r)
    ia, ib = np.meshgrid(np.arange(ka.shape[0]), np.arange(kb.shape[0]), indexing="ij")
    ia, ib = ia.ravel(), ib.ravel()
    rows = np.concatenate([ka[ia], kb[ib]], axis=1)
    rows, vals = _aggregate(A.M, r, rows, ca[ia] * cb[ib])
    return HomogeneousPolynomial._from_rows(A.M, r, rows, vals, full=True)


def poisson_with_Z2(H, Z2):
    """{H, Z2}: every coefficient times -i Omega(sigma, k)."""
    return H.with_coefs(-1j * Z2.divisors(H) * H.coefs)


def upsilon_rows(modes, ells):
    """Largest <l> over modes appearing once in each row (1 if none)."""
    n, r = modes.shape
    out = np.ones(n)
    for j in range(r):
        cnt = np.sum(modes == modes[:, [j]], axis=1)
        out = np.where(cnt == 1, np.maximum(out, bracket(ells[:, j])), out)
    return out


def norm_weights(H):
    return np.sqrt(np.prod(bracket(H.ells), axis=1) * upsilon_rows(H.modes, H.ells))


def h_norm(H):
    if len(H) == 0:
        return 0.0
    return float(np.max(np.abs(H.tensor_coefs()) * norm_weights(H)))


def c_norm(H):
    if len(H) == 0:
        return 0.0
    sig = bracket(np.sum(H.signs * H.ells, axis=1))
    return float(np.max(np.abs(H.tensor_coefs()) * norm_weights(H) * sig))


def eps0(chi):
    """Flow radius ((log M)^((r-1)/2) ||chi||_C)^(-1/(r-2)), constant 1."""
    r = chi.degree
    if r < 3:
        raise ValueError("flow radius needs degree >= 3")
    c = c_norm(chi)
    if c == 0:
        return np.inf
    L = np.log(max(chi.M, 2))
    return float((L ** ((r - 1) / 2) * c) ** (-1.0 / (r - 2)))


def flow(chi, u0, t=1.0, tol=1e-12, safety=0.5, check=True):
    """Time-t map of du/dt = i grad chi(u) by an adaptive embedded pair."""
    u0 = np.asarray(u0, dtype=complex)
    if u0.size != n_modes(chi.M):
        raise ValueError("state size does not match the cutoff")
    if abs(t) > 1:
        raise ValueError("flow time must lie in [-1, 1]")
    if t == 0 or chi.is_zero():
        return u0.copy()
    e0 = eps0(chi)
    nu = sobolev_norm(u0, 0.5)
    if safety is not None and nu > safety * e0:
        raise ValueError(f"|u|_h1/2 = {nu:.3e} exceeds {safety} * eps0 = {safety * e0:.3e}")
    scale = max(np.abs(u0).max(), 1e-300)

    def rhs(_, y):
        return 1j * gradient(chi, y)

    sol = solve_ivp(rhs, (0.0, t), u0, method="DOP853", rtol=tol, atol=tol * scale)
    if sol.status != 0:
        raise FlowError(f"flow integration failed: {sol.message}")
    u1 = sol.y[:, -1]
    if check:
        dev = sobolev_norm(u1 - u0, 0.5)
        bound = (nu / e0) ** (chi.degree - 2) * nu
        if dev > bound:
            warnings.warn(f"near-identity bound violated: {dev:.3e} > {bound:.3e}",
                          NearIdentityWarning)
    return u1


def random_polynomial(M, degree, n_terms, rng, scale=1.0, max_l=None):
    """Sparse random real polynomial with complex Gaussian coefficients."""
    rng = np.random.default_rng(rng)
    top = n_modes(M if max_l is None else min(M, max_l))
    rows = np.sort(rng.integers(0, 2 * top, size=(n_terms, degree)), axis=1)
    c = scale * (rng.standard_normal(n_terms) + 1j * rng.standard_normal(n_terms))
    return HomogeneousPolynomial._from_rows(M, degree, rows, c, full=False)


# short name used by callers that think of H as a function
eval = eval_poly
