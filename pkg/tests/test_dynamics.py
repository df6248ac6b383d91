import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from kgsphere.dynamics import (KGSystem, SimulationConfig, SimulationError, discretized_hamiltonian,
                               from_u, harmonic_energy, load_checkpoint, phase_shadow,
                               random_initial, save_checkpoint, shadow_envelope, simulate,
                               super_actions, to_u, truncation_norm)
from kgsphere.poly import DiagonalQuadratic, eval_poly, gradient
from kgsphere.sphere import n_modes, sobolev_norm

MU = float(np.sqrt(2.0))


def state(rng, M, scale=0.1):
    return scale * (rng.standard_normal(n_modes(M)) + 1j * rng.standard_normal(n_modes(M)))


def test_variables_roundtrip():
    rng = np.random.default_rng(0)
    phi, dphi = rng.standard_normal((2, n_modes(4)))
    a, b = from_u(to_u(phi, dphi, MU), MU)
    np.testing.assert_allclose(a, phi, atol=1e-14)
    np.testing.assert_allclose(b, dphi, atol=1e-14)
    u = to_u(phi, dphi, MU)
    # harmonic energies are the super-actions
    for l in range(5):
        assert harmonic_energy(phi, dphi, l, MU) == pytest.approx(super_actions(u)[l])


@pytest.mark.parametrize("g", [None, {(0, 0, 1): 0.5, (0, 0, 0): 1.0}])
def test_polynomial_matches_quadrature(g):
    # the degree-3 polynomial and the grid potential are two routes to the same P
    M = 3
    sysm = KGSystem(M, MU, 3, g)
    P = discretized_hamiltonian(M, MU, 3, g_poly=g)
    rng = np.random.default_rng(1)
    for _ in range(3):
        u = state(rng, M)
        assert eval_poly(P, u) == pytest.approx(sysm.potential(u), rel=1e-11)
        np.testing.assert_allclose(gradient(P, u), -sysm.nonlinearity(u), atol=1e-14)
        Z2 = DiagonalQuadratic.klein_gordon(M, MU)
        assert sysm.hamiltonian(u) == pytest.approx(Z2(u) + eval_poly(P, u), rel=1e-12)


def test_factored_path_matches_dense():
    rng = np.random.default_rng(2)
    a = KGSystem(6, MU, 3)
    b = KGSystem(6, MU, 3)
    b.dense = False
    u = state(rng, 6)
    np.testing.assert_allclose(a.nonlinearity(u), b.nonlinearity(u), atol=1e-15)


def test_advance_matches_strang_steps():
    rng = np.random.default_rng(3)
    sysm = KGSystem(4, MU, 3)
    u = state(rng, 4)
    dt, n = 0.01, 37
    w = u.copy()
    for _ in range(n):
        w = sysm.step(w, dt)
    v = sysm.advance(u.copy(), 0, n, dt)
    np.testing.assert_allclose(sysm.untwist(v, n * dt), w, atol=1e-14)


def test_linear_step_conserves_actions():
    sysm = KGSystem(5, MU, 3, {})
    u = state(np.random.default_rng(4), 5)
    J0 = super_actions(u)
    w = u
    for _ in range(2000):
        w = sysm.step(w, 0.01)
    # only rounding in |exp(i theta)| accumulates, 4000 factors of ~1e-16
    np.testing.assert_allclose(super_actions(w), J0, rtol=2e-12)


def test_random_initial_norm_and_determinism():
    a = random_initial(6, 0.05, 3)
    assert sobolev_norm(a, 0.5) == pytest.approx(0.05)
    assert np.array_equal(a, random_initial(6, 0.05, 3))


def test_checkpoint_restart(tmp_path):
    base = dict(M=6, eps=0.1, dt=1e-3, stride=50, seed=2)
    full = simulate(SimulationConfig(T=2.0, **base))
    ck = str(tmp_path / "ck.bin")
    simulate(SimulationConfig(T=1.0, **base), checkpoint=ck, checkpoint_every=1000)
    v, n, cfg = load_checkpoint(ck)
    assert n == 1000 and cfg["M"] == 6
    resumed = simulate(SimulationConfig(T=2.0, **base), checkpoint=ck, checkpoint_every=500,
                       resume=ck)
    assert np.abs(resumed.u_final - full.u_final).max() <= 1e-12
    np.testing.assert_allclose(resumed.J[-1], full.J[-1], atol=1e-12)


def test_checkpoint_format(tmp_path):
    p = tmp_path / "bad.bin"
    p.write_bytes(b"garbage")
    with pytest.raises(ValueError):
        load_checkpoint(p)
    v = np.arange(4) + 1j
    save_checkpoint(str(tmp_path / "ok.bin"), v, 7, SimulationConfig(M=1))
    w, n, _ = load_checkpoint(tmp_path / "ok.bin")
    assert n == 7 and np.array_equal(v, w)


def test_guards():
    with pytest.raises(ValueError):
        simulate(SimulationConfig(M=100))
    with pytest.raises(ValueError):
        simulate(SimulationConfig(T=1e6, dt=1e-3, max_steps=1000))
    with pytest.raises(SimulationError):
        simulate(SimulationConfig(M=4, eps=50.0, dt=1e-2, T=5.0, stride=1))


def test_series_csv(tmp_path):
    ser = simulate(SimulationConfig(M=4, T=0.5, stride=100, L_obs=2))
    ser.to_csv(tmp_path / "s.csv")
    lines = (tmp_path / "s.csv").read_text().splitlines()
    assert lines[0] == "t,H,norm_h12,J_0,J_1,J_2"
    assert len(lines) == 1 + 6


def test_truncation_norm_vanishes_at_full_cutoff():
    sysm = KGSystem(8, MU, 3)
    u = state(np.random.default_rng(5), 8)
    assert truncation_norm(sysm, u, 8) == 0.0
    assert truncation_norm(sysm, u, 3) > 0.0


def test_phase_shadow_guard():
    u = state(np.random.default_rng(6), 3)
    with pytest.raises(ValueError):
        phase_shadow(u, u, 0.5)


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2 ** 31), st.floats(0.0, 0.45))
def test_shadow_bounds(seed, s):
    rng = np.random.default_rng(seed)
    u0 = state(rng, 5)
    ut = u0 * np.exp(1j * rng.uniform(0, 6, u0.size)) * (1 + 0.1 * rng.standard_normal(u0.size))
    w, dev = phase_shadow(ut, u0, s)
    np.testing.assert_allclose(super_actions(w), super_actions(u0), rtol=1e-12)
    direct, interp = shadow_envelope(super_actions(ut), super_actions(u0), s)
    assert dev <= direct * (1 + 1e-12)
    assert dev <= interp * (1 + 1e-12)
