import json
import warnings

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from kgsphere.basis import sample_family
from kgsphere.birkhoff import (NormalFormConfig, NormalFormResult, SmallDivisorError, kappa,
                               normal_form, solve_cohomological, split_resonant, tau_backward,
                               tau_forward, verify_commutation)
from kgsphere.dynamics import discretized_hamiltonian
from kgsphere.poly import (DiagonalQuadratic, HomogeneousPolynomial, h_norm, poisson,
                           random_polynomial)
from kgsphere.sphere import n_modes, sobolev_norm

MU = float(np.sqrt(2.0))


@pytest.fixture(scope="module")
def P():
    return discretized_hamiltonian(3, MU, 3, sample_family(3, 1))


@pytest.fixture(scope="module")
def nf1(P):
    return normal_form(P, NormalFormConfig(r=1))


def test_config_guard():
    with pytest.raises(ValueError):
        NormalFormConfig(M=10)
    with pytest.raises(ValueError):
        NormalFormConfig(p=2)
    NormalFormConfig(M=10, N=4.0, allow_large=True)


def test_split_partitions(P):
    L, U = split_resonant(P, 2.0)
    assert h_norm(L + U - P) == 0.0
    assert np.all(kappa(L) <= 2.0) and np.all(kappa(U) > 2.0)


def test_first_step_keeps_nonresonant_cubic(P, nf1):
    _, U = split_resonant(P, 2.0)
    assert h_norm(nf1.parts[3] - U) == 0.0
    assert len(nf1.generators) == 1


def test_cohomological_equation(P):
    Z2 = DiagonalQuadratic.klein_gordon(3, MU)
    L, _ = split_resonant(P, 2.0)
    chi = solve_cohomological(L, Z2)
    assert h_norm(poisson(chi, Z2.as_polynomial()) + L) <= 1e-13 * h_norm(L)


def test_small_divisor_error(P):
    L, _ = split_resonant(P, 2.0)
    with pytest.raises(SmallDivisorError):
        solve_cohomological(L, DiagonalQuadratic.klein_gordon(3, MU), delta_min=100.0)


def test_zero_hamiltonian():
    res = normal_form(HomogeneousPolynomial.zero(3, 3), NormalFormConfig(r=2))
    assert res.eps2 == np.inf
    assert all(g.is_zero() for g in res.generators)
    assert verify_commutation(res) == 0.0


def test_result_roundtrip(P):
    res = normal_form(P, NormalFormConfig(r=2))
    back = NormalFormResult.from_dict(json.loads(res.dumps()))
    assert back.eps2 == res.eps2
    for j in res.parts:
        assert h_norm(back.parts[j] - res.parts[j]) == 0.0
    with pytest.raises(ValueError):
        NormalFormResult.from_dict({"format": "nope"})


def test_transform_inverse(nf1):
    rng = np.random.default_rng(4)
    u = rng.standard_normal(n_modes(3)) + 1j * rng.standard_normal(n_modes(3))
    u *= 0.05 * nf1.eps2 / sobolev_norm(u, 0.5)
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        v = tau_forward(nf1, u)
        w = tau_backward(nf1, v)
    assert np.abs(w - u).max() <= 1e-11 * np.abs(u).max()
    with pytest.raises(ValueError):
        tau_forward(nf1, 100 * u)


def test_commutation_detects_unnormalized(P):
    cfg = NormalFormConfig(r=1)
    res = NormalFormResult(cfg, [], {3: P}, np.inf)
    assert verify_commutation(res) > 1e-3


@settings(max_examples=15, deadline=None)
@given(st.integers(0, 2 ** 31), st.sampled_from([1.5, 2.0, 3.0]))
def test_normal_form_random_cubic_commutes(seed, N):
    P = random_polynomial(3, 3, 40, seed)
    res = normal_form(P, NormalFormConfig(r=2, N=N))
    scale = max(h_norm(Q) for Q in res.parts.values())
    assert verify_commutation(res) <= 1e-12 * max(scale, 1.0)


@pytest.mark.parametrize("r", [1, 2])
def test_transform_jacobian_bound(P, r):
    # finite-difference estimate of |d tau(u)| in h^(1/2), compared to 2^r
    res = normal_form(P, NormalFormConfig(r=r))
    rng = np.random.default_rng(r)
    n = n_modes(3)
    u = rng.standard_normal(n) + 1j * rng.standard_normal(n)
    u *= 0.5 * res.eps2 / sobolev_norm(u, 0.5)
    worst = 0.0
    for _ in range(8):
        v = rng.standard_normal(n) + 1j * rng.standard_normal(n)
        v /= sobolev_norm(v, 0.5)
        h = 1e-6 * res.eps2
        dv = (tau_forward(res, u + h * v) - tau_forward(res, u - h * v)) / (2 * h)
        worst = max(worst, sobolev_norm(dv, 0.5))
    assert worst <= 2 ** r
