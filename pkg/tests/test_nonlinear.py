import itertools

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from sphere_nls.fields import SpectralField, inner, project
from sphere_nls.harmonics import basis_for
from sphere_nls.nonlinear import (
    PairingConstraint,
    decomposition_check,
    divisor_count,
    divisor_pairs,
    divisor_profile,
    nonsingular_form,
    resonant_rhs,
    singular_form,
    trilinear_form,
    trilinear_pairing,
    wick_cubic,
    wick_square_pair,
)

from conftest import random_field


def _norm(f):
    return float(np.linalg.norm(f.coeffs))


def test_wick_square_of_constant_vanishes():
    one = SpectralField.mode(2, 0, 0)
    assert _norm(wick_square_pair(one, one)) < 1e-14


def test_wick_square_has_zero_mean():
    b = SpectralField.mode(2, 1, 0)
    assert abs(wick_square_pair(b, b).coeffs[0]) < 1e-14


def test_wick_square_orthogonal_pair_is_plain_product():
    g, h = SpectralField.mode(2, 1, 0), SpectralField.mode(2, 2, 0)
    basis = basis_for(4)
    plain = basis.analyze(np.conj(basis.synthesize(g.resized(4).coeffs)) * basis.synthesize(h.resized(4).coeffs))
    assert np.allclose(wick_square_pair(g, h).coeffs, plain, atol=1e-13)


@pytest.mark.parametrize("c", [1.0, 0.5 - 0.2j, 2j])
def test_wick_cubic_constant(c):
    out = wick_cubic(SpectralField.mode(1, 0, 0, c))
    expected = np.zeros_like(out.coeffs)
    expected[0] = -abs(c) ** 2 * c
    assert np.allclose(out.coeffs, expected, atol=1e-13)


def test_wick_cubic_matches_brute_force_pairing():
    u = SpectralField.mode(1, 1, 0)
    full = trilinear_pairing(u, u, u)
    expected = full - 2 * SpectralField(3, u.resized(3).coeffs)
    assert abs(_norm(wick_cubic(u)) - _norm(expected)) < 1e-12
    assert np.allclose(wick_cubic(u).coeffs, expected.coeffs, atol=1e-13)


def test_wick_cubic_homogeneity():
    u = random_field(4, 1)
    assert np.allclose(wick_cubic(2 * u).coeffs, 8 * wick_cubic(u).coeffs, atol=1e-12)


def test_wick_cubic_is_diagonal_of_trilinear_form():
    u = random_field(3, 2)
    assert np.allclose(wick_cubic(u).coeffs, trilinear_form(u, u, u).coeffs, atol=1e-13)


def test_pairing_single_modes():
    f1 = SpectralField.mode(3, 2, 1)
    f2 = SpectralField.mode(3, 3, -2)
    f3 = SpectralField.mode(3, 3, 0)
    plain = trilinear_pairing(f1, f2, f3)
    assert np.allclose(trilinear_pairing(f1, f2, f3, "(2,3)").coeffs, plain.coeffs)
    assert _norm(trilinear_pairing(f1, f2, f3, "[2,3]")) == 0


@pytest.mark.parametrize("slots", list(itertools.combinations(range(4), 2)))
def test_partition_property(slots):
    u = random_field(4, 3)
    a, b = slots
    plain = trilinear_pairing(u, u, u)
    paired = trilinear_pairing(u, u, u, PairingConstraint(pairs=(slots,)))
    unpaired = trilinear_pairing(u, u, u, PairingConstraint(nonpairs=(slots,)))
    assert _norm(paired + unpaired - plain) < 1e-12


def test_constraint_parsing_and_validation():
    c = PairingConstraint.parse("(0,1)[3,2]")
    assert c.pairs == ((0, 1),) and c.nonpairs == ((2, 3),)
    assert str(c) == "(0,1)[2,3]"
    with pytest.raises(ValueError):
        PairingConstraint.parse("(0,1)x")
    with pytest.raises(ValueError):
        PairingConstraint(pairs=((1, 2),), nonpairs=((2, 1),))
    with pytest.raises(ValueError):
        PairingConstraint(pairs=((0, 4),))


def test_impossible_constraint_gives_zero():
    u = random_field(2, 4)
    assert _norm(trilinear_pairing(u, u, u, "[1,1]")) == 0


def test_singular_form_of_constants():
    one = SpectralField.mode(2, 0, 0)
    f = random_field(2, 5)
    assert _norm(singular_form(f, one, one)) < 1e-14


def test_singular_form_keeps_degree_of_f():
    f = SpectralField.mode(3, 3, 0)
    b = SpectralField.mode(3, 1, 0)
    out = singular_form(f, b, b)
    assert _norm(project(out, "pi_n", 3)) > 0.1
    assert _norm(out - project(out, "pi_n", 3)) < 1e-14


def test_singular_form_cross_check_with_pairing():
    f, g, h = (random_field(3, s) for s in (6, 7, 8))
    nm = 3
    constrained = trilinear_pairing(f, g, h, "(0,1)", nmax_out=nm)
    corr = inner(h, g) * f
    assert np.allclose(singular_form(f, g, h).coeffs, (constrained - corr).coeffs, atol=1e-12)


@settings(max_examples=10, deadline=None)
@given(st.complex_numbers(max_magnitude=3, allow_nan=False, allow_infinity=False),
       st.complex_numbers(max_magnitude=3, allow_nan=False, allow_infinity=False))
def test_singular_form_multilinearity(a, b):
    f1, f2, g, h = (random_field(3, s) for s in (9, 10, 11, 12))
    lhs = singular_form(a * f1 + b * f2, g, h)
    rhs = a * singular_form(f1, g, h) + b * singular_form(f2, g, h)
    assert _norm(lhs - rhs) < 1e-11
    lhs = singular_form(f1, a * g + b * f2, h)
    rhs = np.conj(a) * singular_form(f1, g, h) + np.conj(b) * singular_form(f1, f2, h)
    assert _norm(lhs - rhs) < 1e-11
    lhs = singular_form(f1, g, a * h + b * f2)
    rhs = a * singular_form(f1, g, h) + b * singular_form(f1, g, f2)
    assert _norm(lhs - rhs) < 1e-11


def test_singular_plus_nonsingular_is_full_form():
    f, g, h = (random_field(3, s) for s in (13, 14, 15))
    total = singular_form(f, g, h).resized(9) + nonsingular_form(f, g, h, 9)
    assert _norm(total - trilinear_form(f, g, h)) < 1e-12


def test_decomposition_of_constant():
    assert decomposition_check(SpectralField.mode(2, 0, 0)) < 1e-14


def test_decomposition_random_degree4():
    assert decomposition_check(random_field(4, 16)) < 1e-10


def test_decomposition_scaled_degree8():
    assert decomposition_check(10 * random_field(8, 17)) < 1e-7


@pytest.mark.parametrize("c", [1.0, 0.3 + 0.4j])
def test_resonant_rhs_constant(c):
    out = resonant_rhs(SpectralField.mode(2, 0, 0, c))
    assert out.coeffs[0] == pytest.approx(abs(c) ** 2 * c, abs=1e-14)
    assert np.max(np.abs(out.coeffs[1:])) < 1e-14


@pytest.mark.parametrize("n, k", [(1, 0), (2, -1), (3, 2)])
def test_resonant_rhs_single_mode_pairing_real(n, k):
    u = SpectralField.mode(3, n, k, 0.7 - 0.2j)
    assert abs(inner(resonant_rhs(u), u).imag) < 1e-14


@pytest.mark.parametrize("seed", range(3))
def test_resonant_conservation_pairing(seed):
    u = random_field(5, seed)
    rhs = resonant_rhs(u)
    for n in range(6):
        assert abs(inner(project(rhs, "pi_n", n), project(u, "pi_n", n)).imag) < 1e-12


def test_resonant_rhs_against_pairing_sum():
    u = random_field(3, 20)
    basis = basis_for(3)
    total = np.zeros(16, dtype=complex)
    mass_density = sum(np.abs(basis.synthesize(project(u, "pi_n", m).coeffs)) ** 2 for m in range(4))
    for n in range(4):
        prod = basis.synthesize(project(u, "pi_n", n).coeffs) * mass_density
        total += project(SpectralField(3, basis_for(3).analyze(prod)), "pi_n", n).coeffs
    assert np.allclose(resonant_rhs(u).coeffs, total, atol=1e-13)


@pytest.mark.parametrize("m, cap, expected", [(0, 10, 0), (2, 10, 1), (12, 10, 2)])
def test_divisor_count(m, cap, expected):
    assert divisor_count(m, cap) == expected


def test_divisor_pairs_m12():
    assert divisor_pairs(12, 10) == [(6, 5), (3, 0)]


@settings(max_examples=50)
@given(st.integers(-400, 400), st.integers(1, 20))
def test_divisor_count_brute_force(m, cap):
    brute = sum(
        1 for a in range(cap + 1) for b in range(cap + 1)
        if a != b and (a - b) * (a + b + 1) == m
    )
    assert divisor_count(m, cap) == brute


def test_divisor_cap_validated():
    with pytest.raises(ValueError):
        divisor_count(3, 0)


def test_divisor_profile_at_64():
    prof = divisor_profile(64)
    assert prof["max_count"] >= 1
    assert divisor_count(prof["argmax_m"], 64) == prof["max_count"]
