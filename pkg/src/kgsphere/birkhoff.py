"""Birkhoff normal form for Z2 + P, P homogeneous of degree p.

Step n (n = p, ..., r+p-1) splits Q^(n) = L + U by the effective index
(kappa <= N goes to L), solves {chi, Z2} + L = 0 by chi = L / (i Omega) and
recombines the graded pieces with the Lie series of ad_chi = {chi, .}:

    Q#^(n) = U
    Q#^(j) = sum_{j* + h(n-2) = j} ad^h Q^(j*) / h!
             - sum_{n + h(n-2) = j, h >= 1} ad^h L / (h+1)!       (j > n)

Degrees above r+p-1 are not expanded.  The forward transform applies the
time-one flows of the generators from the last one to the first.
"""
import json
import warnings
from dataclasses import dataclass, field, asdict
from math import factorial

import numpy as np

from .sphere import bracket, n_modes, sobolev_norm
from .resonance import _kappa_rows
from .poly import (HomogeneousPolynomial, DiagonalQuadratic, NearIdentityWarning, c_norm,
                   eps0, eval_poly, flow, h_norm, poisson, super_action)


class SmallDivisorError(ArithmeticError):
    pass


@dataclass
class NormalFormConfig:
    p: int = 3
    r: int = 1
    N: float = 2.0
    M: int = 3
    mu: float = float(np.sqrt(2.0))
    tol: float = 1e-13
    delta_min: float = 1e-8
    allow_large: bool = False

    def __post_init__(self):
        if self.p < 3 or self.r < 1:
            raise ValueError("need p >= 3 and r >= 1")
        if self.N > bracket(self.M) and self.N > self.M:
            raise ValueError("N must not exceed M")
        if not self.allow_large and (self.p != 3 or self.r > 3 or self.M > 4):
            raise ValueError("outside the desk-scale envelope p=3, r<=3, M<=4 "
                             "(set allow_large to override)")

    @property
    def top(self):
        return self.r + self.p - 1


def kappa(H):
    """Effective index of every stored key."""
    if len(H) == 0:
        return np.zeros(0)
    return _kappa_rows(H.signs, H.ells)


def split_resonant(Q, N):
    """(L, U) with L the keys of effective index <= N."""
    low = kappa(Q) <= N + 1e-12
    return Q.select(low), Q.select(~low)


def solve_cohomological(L, Z2, delta_min=1e-8):
    """chi with {chi, Z2} + L = 0, i.e. chi = L / (i Omega)."""
    if len(L) == 0:
        return HomogeneousPolynomial.zero(L.M, L.degree)
    Om = Z2.divisors(L)
    bad = np.abs(Om) < delta_min
    if np.any(bad):
        i = int(np.argmax(bad))
        from .poly import decode
        raise SmallDivisorError(f"|Omega| = {abs(Om[i]):.3e} below {delta_min:.1e} "
                                f"at key {decode(L.keys[i])}")
    return L.with_coefs(L.coefs / (1j * Om))


def _acc(parts, j, P):
    parts[j] = P if j not in parts else parts[j] + P


def lie_step(parts, chi, L, top):
    """New graded pieces after conjugation by the time-one flow of chi.

    parts maps degree -> polynomial.  Returns (new parts, remainder records)
    where each record describes the first bracket beyond the degree cap.
    """
    n = chi.degree
    if chi.is_zero():
        return dict(parts), []
    new = {}
    rem = []
    cn = c_norm(chi)
    U = parts[n] - L if n in parts else -L
    for js, Q in parts.items():
        if js == n:
            continue
        _acc(new, js, Q)
    _acc(new, n, U)

    def series(P, j0, weight):
        A, h = P, 0
        while True:
            h += 1
            deg = j0 + h * (n - 2)
            if deg > top:
                rem.append({"degree": deg, "h": h, "source_degree": j0,
                            "h_norm": h_norm(A), "chi_c_norm": cn})
                return
            A = poisson(chi, A)
            if A.is_zero():
                return
            _acc(new, deg, A.scale(weight(h)))

    for js, Q in parts.items():
        if js == n or Q.is_zero():
            continue
        series(Q, js, lambda h: 1.0 / factorial(h))
    if not U.is_zero():
        series(U, n, lambda h: 1.0 / factorial(h))
    series(L, n, lambda h: h / factorial(h + 1))
    return new, rem


@dataclass
class NormalFormResult:
    config: NormalFormConfig
    generators: list            # chi^(n), n = p .. r+p-1
    parts: dict                 # degree -> Q^(j)
    eps2: float
    diagnostics: list = field(default_factory=list)
    remainders: list = field(default_factory=list)

    @property
    def Z2(self):
        return DiagonalQuadratic.klein_gordon(self.config.M, self.config.mu)

    def Q_res(self, u):
        return sum(eval_poly(Q, u) for Q in self.parts.values())

    def to_dict(self):
        return {
            "format": "kgsphere.normal_form", "version": 1,
            "config": asdict(self.config),
            "eps2": self.eps2 if np.isfinite(self.eps2) else "inf",
            "generators": [g.to_dict() for g in self.generators],
            "parts": {str(j): Q.to_dict() for j, Q in sorted(self.parts.items())},
            "diagnostics": self.diagnostics,
            "remainders": self.remainders,
        }

    @classmethod
    def from_dict(cls, d):
        if d.get("format") != "kgsphere.normal_form":
            raise ValueError("unsupported normal form container")
        cfg = NormalFormConfig(**d["config"])
        eps2 = np.inf if d["eps2"] == "inf" else float(d["eps2"])
        gens = [HomogeneousPolynomial.from_dict(g) for g in d["generators"]]
        parts = {int(j): HomogeneousPolynomial.from_dict(Q) for j, Q in d["parts"].items()}
        return cls(cfg, gens, parts, eps2, d.get("diagnostics", []), d.get("remainders", []))

    def dumps(self):
        return json.dumps(self.to_dict(), indent=1, sort_keys=True)


def normal_form(Hp, config):
    cfg = config
    if Hp.M != cfg.M or Hp.degree != cfg.p:
        raise ValueError("polynomial does not match the configuration")
    Z2 = DiagonalQuadratic.klein_gordon(cfg.M, cfg.mu)
    parts = {cfg.p: Hp}
    gens, diags, rems = [], [], []
    eps2 = np.inf
    for n in range(cfg.p, cfg.top + 1):
        Qn = parts.get(n, HomogeneousPolynomial.zero(cfg.M, n))
        L, U = split_resonant(Qn, cfg.N)
        chi = solve_cohomological(L, Z2, cfg.delta_min)
        parts, rem = lie_step(parts, chi, L, cfg.top)
        parts = {j: Q for j, Q in parts.items() if not Q.is_zero()}
        if n not in parts:
            parts[n] = HomogeneousPolynomial.zero(cfg.M, n)
        e1 = eps0(chi)
        eps2 = min(eps2, e1) / 6 if np.isfinite(min(eps2, e1)) else np.inf
        gens.append(chi)
        rems.extend({"step": n, **x} for x in rem)
        Om = Z2.divisors(L)
        diags.append({"step": n, "L_terms": len(L), "U_terms": len(U),
                      "L_h_norm": h_norm(L), "U_h_norm": h_norm(U),
                      "chi_c_norm": c_norm(chi),
                      "min_abs_omega": float(np.abs(Om).min()) if Om.size else None,
                      "eps1": e1 if np.isfinite(e1) else None,
                      "eps2": eps2 if np.isfinite(eps2) else None})
    return NormalFormResult(cfg, gens, parts, eps2, diags, rems)


def _near_identity(u, v, radius, p, what):
    nu = sobolev_norm(u, 0.5)
    if not np.isfinite(radius) or nu == 0:
        return
    dev = sobolev_norm(v - u, 0.5)
    bound = (nu / radius) ** (p - 2) * nu
    if dev > bound:
        warnings.warn(f"{what}: |tau(u) - u| = {dev:.3e} exceeds {bound:.3e}", NearIdentityWarning)


def tau_forward(result, u, tol=None):
    """tau^(1): flows at time +1, last generator first."""
    cfg = result.config
    tol = cfg.tol if tol is None else tol
    u = np.asarray(u, dtype=complex)
    nu = sobolev_norm(u, 0.5)
    if nu >= 2 * result.eps2:
        raise ValueError(f"|u| = {nu:.3e} outside the ball of radius 2 eps2 = {2 * result.eps2:.3e}")
    v = u
    for chi in reversed(result.generators):
        v = flow(chi, v, 1.0, tol, safety=1.0, check=False)
    _near_identity(u, v, 2 * result.eps2, cfg.p, "tau1")
    return v


def tau_backward(result, u, tol=None):
    """tau^(0): flows at time -1, first generator first."""
    cfg = result.config
    tol = cfg.tol if tol is None else tol
    u = np.asarray(u, dtype=complex)
    nu = sobolev_norm(u, 0.5)
    if nu >= result.eps2:
        raise ValueError(f"|u| = {nu:.3e} outside the ball of radius eps2 = {result.eps2:.3e}")
    v = u
    for chi in result.generators:
        v = flow(chi, v, -1.0, tol, safety=1.0, check=False)
    _near_identity(u, v, result.eps2, cfg.p, "tau0")
    return v


def verify_commutation(result, N=None):
    """max over <l> <= N of h_norm({J_l, Q_res})."""
    cfg = result.config
    N = cfg.N if N is None else N
    worst = 0.0
    for l in range(cfg.M + 1):
        if bracket(l) > N + 1e-12:
            break
        J = super_action(cfg.M, l)
        for Q in result.parts.values():
            worst = max(worst, h_norm(poisson(J, Q)))
    return worst


def remainder_values(result, P, u0, scales, tol=None):
    """rho(s) = H(tau1(s u0)) - Z2(s u0) - Q_res(s u0) with H = Z2 + P."""
    Z2 = result.Z2
    rho = []
    for s in scales:
        u = s * u0
        v = tau_forward(result, u, tol)
        dz = 0.5 * float(np.sum(Z2.freqs * np.real((v - u) * np.conj(v + u))))
        rho.append(dz + eval_poly(P, v) - result.Q_res(u))
    return np.array(rho)


def remainder_probe(result, P, u0, scales=None, n_scales=6, tol=None):
    """Fitted exponent of |rho(s)| against s; returns (exponent, scales, rho)."""
    u0 = np.asarray(u0, dtype=complex)
    u0 = u0 / sobolev_norm(u0, 0.5)
    if scales is None:
        e2 = result.eps2 if np.isfinite(result.eps2) else 1.0
        scales = np.geomspace(e2 / 64, e2 / 8, n_scales)
    scales = np.asarray(scales, dtype=float)
    rho = remainder_values(result, P, u0, scales, tol)
    if np.all(rho == 0):
        return np.inf, scales, rho
    slope = np.polyfit(np.log(scales), np.log(np.abs(rho)), 1)[0]
    return float(slope), scales, rho
