import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from sphere_nls.fields import (
    SpectralField,
    field_from_bytes,
    inner,
    inner_quadrature,
    lp_norm,
    project,
    read_snapshot,
    snapshot_bytes,
    sobolev_norm,
    write_snapshot,
)
from sphere_nls.harmonics import basis_for, index

from conftest import random_field


def _degrees(f):
    return {n for n in range(f.nmax + 1) if np.any(f.degree_block(n) != 0)}


def test_pi_n_idempotent_on_mode():
    f = SpectralField.mode(4, 2, 1)
    assert np.array_equal(project(f, "pi_n", 2).coeffs, f.coeffs)


def test_P4_keeps_upper_half_of_shell():
    c = np.zeros(25, dtype=complex)
    c[1:] = 1.0
    f = SpectralField(4, c)
    assert _degrees(project(f, "P_N", 4)) == {3, 4}


def test_P1_keeps_degrees_zero_and_one():
    f = random_field(3, 1)
    assert _degrees(project(f, "P_N", 1)) == {0, 1}


def test_partition_of_identity():
    f = random_field(12, 2)
    total = project(f, "Pi_N", 8) + project(f, "Pi_N_perp", 8)
    assert np.max(np.abs(total.coeffs - f.coeffs)) < 1e-14


def test_out_of_range_projection_is_zero():
    f = random_field(3, 3)
    assert not np.any(project(f, "pi_n", 7).coeffs)


def test_non_dyadic_P_N_raises():
    with pytest.raises(ValueError):
        project(random_field(4), "P_N", 3)


@pytest.mark.parametrize("kind, idx", [("pi_n", 3), ("Pi_N", 4), ("Pi_N_perp", 2), ("P_N", 4)])
def test_projection_self_adjoint(kind, idx):
    f, g = random_field(6, 4), random_field(6, 5)
    lhs = inner(project(f, kind, idx), g)
    rhs = inner(f, project(g, kind, idx))
    assert abs(lhs - rhs) < 1e-12


@pytest.mark.parametrize(
    "field, s, expected",
    [
        (SpectralField.mode(3, 2, -1), 2, 7.0),
        (SpectralField.mode(3, 0, 0), 5.3, 1.0),
        (SpectralField.mode(3, 1, 0) + SpectralField.mode(3, 3, 0), 1, 4.0),
    ],
)
def test_sobolev_examples(field, s, expected):
    assert sobolev_norm(field, s) == pytest.approx(expected, rel=1e-14)


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 10_000), st.floats(-2, 2), st.floats(0, 1))
def test_sobolev_monotone_in_s(seed, s, ds):
    f = random_field(5, seed)
    assert sobolev_norm(f, s + ds) >= sobolev_norm(f, s) * (1 - 1e-12)


@pytest.mark.parametrize("p", [1, 2, 3.5, 4, np.inf])
def test_lp_of_constant(p):
    assert lp_norm(SpectralField.mode(2, 0, 0), p) == pytest.approx(1.0, abs=1e-13)


def test_lp_b10():
    assert lp_norm(SpectralField.mode(3, 1, 0), 2) == pytest.approx(1.0, abs=1e-12)


def test_lp_rejects_small_exponent():
    with pytest.raises(ValueError):
        lp_norm(SpectralField.mode(2, 0, 0), 0.5)


def test_inner_orthogonal_modes():
    assert inner(SpectralField.mode(2, 1, 0), SpectralField.mode(2, 1, 1)) == 0


@pytest.mark.parametrize("seed", range(4))
def test_parseval_and_sobolev_zero(seed):
    f = random_field(10, seed)
    l2 = np.linalg.norm(f.coeffs)
    assert abs(lp_norm(f, 2) - l2) < 1e-10
    assert abs(sobolev_norm(f, 0) - lp_norm(f, 2)) < 1e-10


def test_inner_is_conjugate_linear_in_second_slot():
    f, g = random_field(4, 6), random_field(4, 7)
    a = 0.3 - 1.1j
    assert inner(f, a * g) == pytest.approx(np.conj(a) * inner(f, g), abs=1e-13)
    assert inner(f, g) == pytest.approx(inner_quadrature(f, g), abs=1e-12)
    assert inner(f, f).real >= 0 and abs(inner(f, f).imag) < 1e-15


def test_values_match_basis_synthesis():
    f = random_field(4, 8)
    basis = basis_for(4)
    assert np.allclose(f.values(), basis.synthesize(f.coeffs))
    assert np.allclose(SpectralField.from_values(f.values(), basis).coeffs, f.coeffs, atol=1e-12)


def test_snapshot_layout():
    f = SpectralField.mode(1, 1, -1, 2.0 - 0.5j)
    data = snapshot_bytes(f)
    assert data[:4] == b"SNLS"
    assert data[4:12] == (1).to_bytes(4, "little") + (1).to_bytes(4, "little")
    assert len(data) == 12 + 16 * 4
    body = np.frombuffer(data[12:], dtype="<f8")
    assert body[2 * index(1, -1)] == 2.0 and body[2 * index(1, -1) + 1] == -0.5


def test_snapshot_roundtrip(tmp_path):
    f = random_field(7, 9)
    path = tmp_path / "f.snls"
    write_snapshot(f, path)
    g = read_snapshot(path)
    assert g.nmax == 7 and np.array_equal(g.coeffs, f.coeffs)


@pytest.mark.parametrize(
    "mutate",
    [lambda d: b"XXXX" + d[4:], lambda d: d[:4] + (2).to_bytes(4, "little") + d[8:], lambda d: d[:-1]],
)
def test_snapshot_corruption_detected(mutate):
    with pytest.raises(ValueError):
        field_from_bytes(mutate(snapshot_bytes(random_field(2))))


def test_field_is_immutable():
    f = random_field(2)
    with pytest.raises(ValueError):
        f.coeffs[0] = 1


def test_wrong_length_rejected():
    with pytest.raises(ValueError):
        SpectralField(2, np.zeros(5))
