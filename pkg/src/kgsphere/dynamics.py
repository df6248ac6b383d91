"""Truncated nonlinear Klein-Gordon dynamics in diagonal variables.

With omega_l = sqrt(l(l+1) + mu) and Lambda^a the multiplier omega^(a/2),

    u = Lambda Phi + i Lambda^-1 dPhi/dt,
    i du/dt = Lambda^2 u - N(u),   N(u) = Lambda^-1 P_M( g (Lambda^-1 Re u)^(p-1) ),

which is i du/dt = grad H(u) for H = Z2 + P with
P(u) = -(1/p) int g (Lambda^-1 Re u)^p.  Time stepping is Strang splitting
of the exact phase rotation and the exact kick (Re u is frozen by the kick).
"""
import csv
import itertools
import json
import os
from dataclasses import dataclass, field, asdict

import numpy as np

from .sphere import (HarmonicTable, bracket, block, build_grid, degrees, integrate,
                     n_modes, sobolev_norm)
from .resonance import omega
from .poly import HomogeneousPolynomial

CHECKPOINT_VERSION = 1
DENSE_LIMIT = 4_000_000


class SimulationError(RuntimeError):
    pass


def _g_degree(g_poly):
    if not g_poly:
        return 0
    return max(a + b + c for (a, b, c) in g_poly)


def _g_values(grid, g_poly):
    if g_poly is None:
        return None
    X, Y, Z = grid.cartesian
    v = np.zeros(grid.shape)
    for (a, b, c), coef in g_poly.items():
        v = v + coef * X ** a * Y ** b * Z ** c
    return v


def to_u(phi, dphi, mu):
    M = int(round(np.sqrt(np.size(phi)))) - 1
    w = omega(degrees(M), mu)
    return np.sqrt(w) * phi + 1j * dphi / np.sqrt(w)


def from_u(u, mu):
    M = int(round(np.sqrt(np.size(u)))) - 1
    w = omega(degrees(M), mu)
    return u.real / np.sqrt(w), u.imag * np.sqrt(w)


def super_action(u, l):
    return float(np.sum(np.abs(u[block(l)]) ** 2))


def super_actions(u, L=None):
    M = int(round(np.sqrt(np.size(u)))) - 1
    L = M if L is None else L
    a2 = np.abs(u) ** 2
    return np.array([a2[block(l)].sum() for l in range(L + 1)])


def harmonic_energy(phi, dphi, l, mu):
    w = np.sqrt(l * (l + 1.0) + mu)
    b = block(l)
    return float(w * np.sum(phi[b] ** 2) + np.sum(dphi[b] ** 2) / w)


class KGSystem:
    """Truncated equation at cutoff M with nonlinearity degree p and weight g.

    g_poly is None (g = 1), {} (g = 0) or {(a, b, c): coef} for
    sum coef x^a y^b z^c in ambient coordinates.
    """

    def __init__(self, M, mu=np.sqrt(2.0), p=3, g_poly=None, extra_degree=0):
        if p < 3 or int(p) != p:
            raise ValueError("p must be an integer >= 3")
        self.M, self.mu, self.p = M, float(mu), int(p)
        self.g_poly = g_poly
        self.linear = g_poly is not None and len(g_poly) == 0
        D = max(2 * M, p * M + _g_degree(g_poly)) + extra_degree
        self.table = HarmonicTable(build_grid(D), M)
        self.grid = self.table.grid
        self.g = _g_values(self.grid, g_poly)
        self.freqs = omega(degrees(M), mu)
        self.lam_inv = 1.0 / np.sqrt(self.freqs)
        nn = self.grid.n_theta * self.grid.n_phi
        self.dense = n_modes(M) * nn <= DENSE_LIMIT
        if self.dense:
            V = self.table.values.reshape(n_modes(M), nn)
            self._A = np.ascontiguousarray((V * self.lam_inv[:, None]).T)
            self._B = np.ascontiguousarray(V * self.grid.weights.ravel() * self.lam_inv[:, None])

    # field and forcing
    def field(self, u):
        """Phi = Lambda^-1 Re u on the grid."""
        return self.table.synthesize(self.lam_inv * np.real(u))

    def _forcing_real(self, q):
        """N for Re u = q (real array)."""
        if self.linear:
            return np.zeros_like(q)
        if self.dense:
            f = self._A @ q
            f = f * f if self.p == 3 else f ** (self.p - 1)
            if self.g is not None:
                f = f * self.g.ravel()
            return self._B @ f
        f = self.table.synthesize(self.lam_inv * q)
        f = f ** (self.p - 1)
        if self.g is not None:
            f = f * self.g
        return self.lam_inv * self.table.project(f)

    def nonlinearity(self, u):
        return self._forcing_real(np.real(np.asarray(u))).astype(complex)

    def potential(self, u):
        if self.linear:
            return 0.0
        f = self.field(u) ** self.p
        if self.g is not None:
            f = f * self.g
        return -float(integrate(self.grid, f)) / self.p

    def hamiltonian(self, u):
        phi, dphi = from_u(np.asarray(u), self.mu)
        ell = degrees(self.M)
        quad = 0.5 * np.sum((ell * (ell + 1.0) + self.mu) * phi ** 2) + 0.5 * np.sum(dphi ** 2)
        return float(quad) + self.potential(u)

    def step(self, u, dt):
        """One Strang step: half phase, kick, half phase."""
        h = np.exp(-0.5j * self.freqs * dt)
        u = h * u
        u = u + 1j * dt * self._forcing_real(u.real)
        return h * u

    def advance(self, v, n0, nsteps, dt):
        """Advance the twisted state v = exp(i omega t) u by nsteps Strang steps.

        The step count n0 fixes the absolute time t = n0 dt.  Works in place
        on (real, imag) copies and returns the new v.
        """
        vr, vi = v.real.copy(), v.imag.copy()
        if self.linear:
            return vr + 1j * vi
        w = self.freqs
        for n in range(n0, n0 + nsteps):
            th = w * ((n + 0.5) * dt)
            c, s = np.cos(th), np.sin(th)
            nl = dt * self._forcing_real(c * vr + s * vi)
            vr -= s * nl
            vi += c * nl
        return vr + 1j * vi

    def untwist(self, v, t):
        return np.exp(-1j * self.freqs * t) * v

    def twist(self, u, t):
        return np.exp(1j * self.freqs * t) * u


def discretized_hamiltonian(M, mu, p, family=None, g_poly=None):
    """Degree-p part P as a polynomial in the basis of the family.

    Monomial coefficient of a code multiset K:
    -(1/(p 2^p)) * (#orderings of K) * prod omega^(-1/2) * int e_k1...e_kp g.
    """
    from .basis import reference_family, block_basis_values
    from .poly import _multinomial
    if family is None:
        family = reference_family(M)
    sysm = KGSystem(M, mu, p, g_poly)
    table, grid = sysm.table, sysm.grid
    E = np.concatenate([block_basis_values(family, table, l) for l in range(M + 1)])
    E = E.reshape(n_modes(M), -1)
    wg = grid.weights.ravel() * (1.0 if sysm.g is None else sysm.g.ravel())
    nm = n_modes(M)
    mode_sets = np.array(list(itertools.combinations_with_replacement(range(nm), p)))
    prod = np.ones((mode_sets.shape[0], E.shape[1]))
    for j in range(p):
        prod *= E[mode_sets[:, j]]
    I = prod @ wg
    I[np.abs(I) < 1e-14] = 0.0
    integral = {tuple(ms): v for ms, v in zip(mode_sets, I) if v != 0}
    code_sets = np.array(list(itertools.combinations_with_replacement(range(2 * nm), p)))
    modes = code_sets >> 1
    keep = np.array([tuple(np.sort(r)) in integral for r in modes])
    code_sets, modes = code_sets[keep], modes[keep]
    Ivals = np.array([integral[tuple(np.sort(r))] for r in modes])
    amp = np.prod(sysm.lam_inv[modes], axis=1)
    coefs = -_multinomial(code_sets) * amp * Ivals / (p * 2.0 ** p)
    return HomogeneousPolynomial._from_rows(M, p, code_sets, coefs, full=True)


def random_initial(M, eps, seed, decay=1.51):
    """Random u with |u_k| profile <l>^-decay, rescaled to |u|_h1/2 = eps."""
    rng = np.random.default_rng(np.random.SeedSequence(entropy=seed, spawn_key=(M,)))
    n = n_modes(M)
    c = (rng.standard_normal(n) + 1j * rng.standard_normal(n)) * bracket(degrees(M)) ** (-decay)
    return eps * c / sobolev_norm(c, 0.5)


@dataclass
class SimulationConfig:
    M: int = 8
    mu: float = float(np.sqrt(2.0))
    p: int = 3
    g: object = None            # None -> g = 1; {} -> g = 0; {(a,b,c): coef}
    eps: float = 0.05
    dt: float = 1e-3
    T: float = 20.0
    stride: int = 100
    seed: int = 0
    decay: float = 1.51
    L_obs: object = None
    apriori_factor: float = 4.0
    max_steps: int = 50_000_000
    max_M: int = 64

    def __post_init__(self):
        if self.dt <= 0:
            raise ValueError("dt must be positive")
        if self.p < 3 or int(self.p) != self.p:
            raise ValueError("p must be an integer >= 3")

    @property
    def n_steps(self):
        return int(round(self.T / self.dt))


@dataclass
class ObservableSeries:
    t: np.ndarray
    H: np.ndarray
    norm_h12: np.ndarray
    J: np.ndarray               # (n_t, L+1)
    E: np.ndarray               # harmonic energies from (Phi, dPhi)
    apriori_violations: int = 0
    u0: np.ndarray = None
    u_final: np.ndarray = None

    def drift(self, L=None):
        """max over l <= L and t of |J_l(t) - J_l(0)|."""
        J = self.J if L is None else self.J[:, :L + 1]
        return float(np.max(np.abs(J - J[0])))

    def relative_energy_drift(self):
        return float(np.max(np.abs(self.H - self.H[0])) / abs(self.H[0]))

    def to_csv(self, path):
        L = self.J.shape[1] - 1
        with open(path, "w", newline="") as f:
            wr = csv.writer(f, lineterminator="\n")
            wr.writerow(["t", "H", "norm_h12"] + [f"J_{l}" for l in range(L + 1)])
            for i in range(self.t.size):
                wr.writerow([repr(float(self.t[i])), repr(float(self.H[i])),
                             repr(float(self.norm_h12[i]))] + [repr(float(x)) for x in self.J[i]])


def save_checkpoint(path, v, n, config):
    tmp = path + ".tmp"
    with open(tmp, "wb") as f:
        header = json.dumps({"version": CHECKPOINT_VERSION, "step": int(n), "size": int(v.size),
                             "config": _config_echo(config)}).encode()
        f.write(b"KGSCKPT\n")
        f.write(len(header).to_bytes(8, "little"))
        f.write(header)
        f.write(np.ascontiguousarray(v, dtype="<c16").tobytes())
    os.replace(tmp, path)


def load_checkpoint(path):
    with open(path, "rb") as f:
        if f.read(8) != b"KGSCKPT\n":
            raise ValueError("not a checkpoint file")
        hlen = int.from_bytes(f.read(8), "little")
        header = json.loads(f.read(hlen))
        if header.get("version") != CHECKPOINT_VERSION:
            raise ValueError("unsupported checkpoint version")
        v = np.frombuffer(f.read(), dtype="<c16").copy()
    if v.size != header["size"]:
        raise ValueError("truncated checkpoint")
    return v, header["step"], header["config"]


def _config_echo(cfg):
    d = asdict(cfg)
    if isinstance(d.get("g"), dict):
        d["g"] = [[list(k), v] for k, v in d["g"].items()]
    return d


def simulate(config, u0=None, checkpoint=None, checkpoint_every=None, resume=None,
             system=None, on_sample=None):
    """Integrate from seeded random data (or u0) and record observables."""
    cfg = config
    if cfg.M > cfg.max_M:
        raise ValueError(f"cutoff {cfg.M} exceeds the guard {cfg.max_M}")
    nsteps = cfg.n_steps
    if nsteps > cfg.max_steps:
        raise ValueError(f"{nsteps} steps exceed the guard {cfg.max_steps}")
    sysm = system or KGSystem(cfg.M, cfg.mu, cfg.p, cfg.g)
    if u0 is None:
        u0 = random_initial(cfg.M, cfg.eps, cfg.seed, cfg.decay)
    u0 = np.asarray(u0, dtype=complex)
    L = cfg.M if cfg.L_obs is None else cfg.L_obs
    n = 0
    v = u0.copy()
    if resume is not None:
        v, n, _ = load_checkpoint(resume)
    bound = cfg.apriori_factor * sobolev_norm(u0, 0.5)
    ts, Hs, Ns, Js, Es = [], [], [], [], []
    violations = 0

    def record(n, v):
        nonlocal violations
        t = n * cfg.dt
        u = sysm.untwist(v, t)
        nu = sobolev_norm(u, 0.5)
        if not np.isfinite(nu) or nu > 1e3 * max(bound, 1e-300):
            raise SimulationError(f"norm explosion at t={t:.6g}: |u|_h1/2 = {nu:.3e}")
        if nu > bound:
            violations += 1
        phi, dphi = from_u(u, cfg.mu)
        ts.append(t)
        Hs.append(sysm.hamiltonian(u))
        Ns.append(nu)
        Js.append(super_actions(u, L))
        Es.append([harmonic_energy(phi, dphi, l, cfg.mu) for l in range(L + 1)])
        if on_sample is not None:
            on_sample(t, u)

    if resume is None or n % cfg.stride == 0:
        record(n, v)
    while n < nsteps:
        k = min(cfg.stride - n % cfg.stride, nsteps - n)
        if checkpoint_every:
            k = min(k, checkpoint_every - n % checkpoint_every)
        v = sysm.advance(v, n, k, cfg.dt)
        n += k
        if n % cfg.stride == 0 or n == nsteps:
            record(n, v)
        if checkpoint_every and checkpoint and n % checkpoint_every == 0:
            save_checkpoint(checkpoint, v, n, cfg)
    return ObservableSeries(np.array(ts), np.array(Hs), np.array(Ns), np.array(Js),
                            np.array(Es), violations, u0, sysm.untwist(v, n * cfg.dt))


def truncation_norm(system, u, M):
    """|P_M[N(P_M u) - N(u)]|_h^-1/2 for u at the system cutoff."""
    keep = n_modes(M)
    uM = np.array(u, dtype=complex)
    uM[keep:] = 0
    F = system.nonlinearity(uM) - system.nonlinearity(u)
    return sobolev_norm(F[:keep], -0.5)


def truncation_sweep(config, Ms, M_prime):
    """sup over the M'-trajectory of the truncation forcing for each M in Ms."""
    if any(M_prime < 2 * M for M in Ms):
        raise ValueError("M' must be at least 2M")
    cfg = SimulationConfig(**{**asdict(config), "M": M_prime})
    sysm = KGSystem(M_prime, cfg.mu, cfg.p, cfg.g)
    sup = {M: 0.0 for M in Ms}

    def probe(t, u):
        for M in Ms:
            sup[M] = max(sup[M], truncation_norm(sysm, u, M))

    simulate(cfg, system=sysm, on_sample=probe)
    return sup


def truncation_probe(config, M, M_prime):
    return truncation_sweep(config, [M], M_prime)[M]


def phase_shadow(u_t, u_0, s, zero_tol=1e-14):
    """Blockwise rescaling of u_t to the super-actions of u_0 and its H^s distance."""
    if s >= 0.5:
        raise ValueError("s must be below 1/2")
    u_t = np.asarray(u_t, dtype=complex)
    u_0 = np.asarray(u_0, dtype=complex)
    M = int(round(np.sqrt(u_t.size))) - 1
    w = np.empty_like(u_t)
    for l in range(M + 1):
        b = block(l)
        Jt, J0 = super_action(u_t, l), super_action(u_0, l)
        if Jt > zero_tol:
            w[b] = np.sqrt(J0 / Jt) * u_t[b]
        else:
            w[b] = u_0[b]
    return w, sobolev_norm(u_t - w, s)


def shadow_envelope(J_t, J_0, s, alpha=2.0):
    """Upper bounds for |u_t - w|_H^s from super-action drifts.

    Returns (direct, interpolated): direct is (sum <l>^2s |dJ_l|)^1/2; the
    interpolated bound combines the h^1/2 and h^-alpha/2 drift sums with the
    Holder exponent theta fixed by 2s = (1-theta) - alpha theta.
    """
    dJ = np.abs(np.asarray(J_t) - np.asarray(J_0))
    br = bracket(np.arange(dJ.size))
    direct = np.sqrt(np.sum(br ** (2 * s) * dJ))
    theta = (1 - 2 * s) / (1 + alpha)
    hi = np.sum(br * dJ)
    lo = np.sum(br ** (-alpha) * dJ)
    interp = np.sqrt(hi ** (1 - theta) * lo ** theta)
    return float(direct), float(interp)
