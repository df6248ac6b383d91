import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from kgsphere.resonance import effective_index, nonresonance_scan, omega, small_divisor

MU = float(np.sqrt(2.0))


def test_omega_values():
    assert omega(0, MU) == pytest.approx(2 ** 0.25, rel=1e-15)
    assert omega(3, 2.0) == pytest.approx(np.sqrt(14.0))
    with pytest.raises(ValueError):
        omega(1, 0.0)


def test_small_divisor_and_effective_index():
    assert small_divisor([1, -1], [4, 4], MU) == 0.0
    assert effective_index([1, -1], [4, 4]) == np.inf
    assert effective_index([1, -1, 1], [4, 4, 2]) == pytest.approx(np.sqrt(5))
    assert effective_index([1, 1, -1], [3, 3, 5]) == pytest.approx(np.sqrt(10))


def test_scan_frozen_cubic():
    # brute force over ordered signed tuples gives the same minimizer
    rep = nonresonance_scan(MU, 3, 16, 16.0)
    assert rep.min_abs_omega == pytest.approx(0.032976176377845334, rel=1e-13)
    assert rep.argmin == ((-1, 1), (-1, 1), (1, 3))
    assert not rep.sampled


def test_scan_frozen_quartic():
    rep = nonresonance_scan(MU, 4, 6, 4.0)
    assert rep.min_abs_omega == pytest.approx(0.012281535708950742, rel=1e-13)
    assert rep.argmin == ((-1, 3), (1, 4), (1, 4), (-1, 5))


def test_scan_sampling_and_csv(tmp_path):
    rep = nonresonance_scan(MU, 5, 30, 30.0, max_enum=1000, n_samples=5000, rng=3)
    assert rep.sampled and rep.min_abs_omega > 0
    path = tmp_path / "scan.csv"
    rep.to_csv(path)
    head = path.read_text().splitlines()[0]
    assert head == "r,mu,M,N,min_abs_omega,argmin,gamma_fit,alpha_fit"


def test_scan_rejects_empty():
    with pytest.raises(ValueError):
        nonresonance_scan(MU, 2, 3, 0.5)


@settings(max_examples=60, deadline=None)
@given(st.lists(st.tuples(st.sampled_from([-1, 1]), st.integers(0, 8)), min_size=2, max_size=6))
def test_divisor_sign_flip(tup):
    s = [a for a, _ in tup]
    l = [b for _, b in tup]
    assert small_divisor(s, l, MU) == pytest.approx(-small_divisor([-x for x in s], l, MU))
    assert effective_index(s, l) == effective_index([-x for x in s], l)
    # a finite effective index means some degree class is unbalanced
    if effective_index(s, l) == np.inf:
        assert abs(small_divisor(s, l, MU)) < 1e-12
