"""
Cubic nonlinearities and their degree-resolved pieces.

All products are formed on a Gauss-Legendre grid that integrates degree
``4 * max(input degree, output degree)`` polynomials exactly, so projecting a
product back onto the basis involves no aliasing.

Conventions
-----------
``<f|g> = mean(f * conj(g))`` over the unit-mass sphere.
``N(f, g, h) = f conj(g) h - <f|g> h - <h|g> f`` is the symmetric trilinear
form with ``N(u, u, u) = |u|**2 u - 2 ||u||**2 u``.
``g <> h = conj(g) h - <h|g>`` is the Wick product.
"""
from __future__ import annotations

import itertools
import re
from dataclasses import dataclass

import numpy as np

from .fields import SpectralField, nmax_of, resize
from .harmonics import HarmonicBasis, basis_for


def product_basis(*nmaxes: int) -> HarmonicBasis:
    """Basis whose grid is alias-free for a product of inputs/outputs of these degrees."""
    return basis_for(max(nmaxes))


def _as_field(f) -> SpectralField:
    return f if isinstance(f, SpectralField) else SpectralField.from_coeffs(f)


def _degree_values(coeffs: np.ndarray, basis: HarmonicBasis) -> np.ndarray:
    """Grid samples of pi_n f for every degree n, shape (nmax+1, n_lat, n_lon)."""
    nm = nmax_of(coeffs.shape[-1])
    stack = np.zeros((nm + 1, coeffs.shape[-1]), dtype=complex)
    for n in range(nm + 1):
        stack[n, n * n : (n + 1) ** 2] = coeffs[n * n : (n + 1) ** 2]
    return basis.synthesize(stack)


# ---------------------------------------------------------------------------
# grid-level kernels (batch axes allowed)

def wick_cubic_values(vals: np.ndarray, grid) -> np.ndarray:
    """Grid values of |u|^2 u - 2 ||u||^2 u from grid values of u."""
    dens = np.abs(vals) ** 2
    mass = grid.integrate(dens)
    return (dens - 2.0 * mass[..., None, None]) * vals


def trilinear_values(fv: np.ndarray, gv: np.ndarray, hv: np.ndarray, grid) -> np.ndarray:
    """Grid values of N(f, g, h) from grid values."""
    gc = np.conj(gv)
    fg = grid.integrate(fv * gc)[..., None, None]
    hg = grid.integrate(hv * gc)[..., None, None]
    return fv * gc * hv - fg * hv - hg * fv


def wick_values(gv: np.ndarray, hv: np.ndarray, grid) -> np.ndarray:
    """Grid values of conj(g) h - <h|g>."""
    prod = np.conj(gv) * hv
    return prod - grid.integrate(prod)[..., None, None]


def degreewise_multiply(coeffs: np.ndarray, weight_values: np.ndarray, basis: HarmonicBasis) -> np.ndarray:
    """sum_n pi_n(pi_n f * W) for a complex grid function W.

    ``coeffs`` carries degree <= basis.nmax; batch axes of ``coeffs`` and
    ``weight_values`` must agree. Output has the same degree range as f.
    """
    coeffs = np.asarray(coeffs)
    nm = nmax_of(coeffs.shape[-1])
    size = coeffs.shape[-1]
    batch = coeffs.shape[:-1]
    out = np.zeros_like(coeffs, dtype=complex)
    for n in range(nm + 1):
        blk = np.zeros(batch + (size,), dtype=complex)
        blk[..., n * n : (n + 1) ** 2] = coeffs[..., n * n : (n + 1) ** 2]
        if not np.any(blk):
            continue
        prod = basis.synthesize(blk) * weight_values
        out[..., n * n : (n + 1) ** 2] = basis.analyze(prod, n)[..., n * n : (n + 1) ** 2]
    return out


# ---------------------------------------------------------------------------
# field-level operations

def wick_square_pair(g: SpectralField, h: SpectralField, nmax_out: int | None = None) -> SpectralField:
    """Wick product conj(g) h - <h|g>, exact up to degree g.nmax + h.nmax by default."""
    if g.nmax != h.nmax:
        raise ValueError("Wick product needs fields of equal nmax")
    nmax_out = 2 * g.nmax if nmax_out is None else nmax_out
    basis = product_basis(g.nmax, nmax_out)
    vals = wick_values(basis.synthesize(g.coeffs), basis.synthesize(h.coeffs), basis.grid)
    return SpectralField(nmax_out, basis.analyze(vals, nmax_out))


def wick_cubic(u: SpectralField, nmax_out: int | None = None) -> SpectralField:
    """N(u) = |u|^2 u - 2 ||u||^2 u projected to degree ``nmax_out`` (default 3 nmax, exact)."""
    nmax_out = 3 * u.nmax if nmax_out is None else nmax_out
    basis = product_basis(u.nmax, nmax_out)
    vals = wick_cubic_values(basis.synthesize(u.coeffs), basis.grid)
    return SpectralField(nmax_out, basis.analyze(vals, nmax_out))


def trilinear_form(f: SpectralField, g: SpectralField, h: SpectralField,
                   nmax_out: int | None = None) -> SpectralField:
    """Canonical symmetric form N(f, g, h)."""
    nm = max(f.nmax, g.nmax, h.nmax)
    nmax_out = 3 * nm if nmax_out is None else nmax_out
    basis = product_basis(nm, nmax_out)
    vals = trilinear_values(
        basis.synthesize(f.coeffs), basis.synthesize(g.coeffs), basis.synthesize(h.coeffs), basis.grid
    )
    return SpectralField(nmax_out, basis.analyze(vals, nmax_out))


def singular_form(f: SpectralField, g: SpectralField, h: SpectralField) -> SpectralField:
    """N_(0,1)(f, g, h) = sum_n pi_n(pi_n f * (g <> h)).

    The output keeps the degree range of ``f``.
    """
    nm = max(f.nmax, g.nmax, h.nmax)
    basis = product_basis(nm)
    w = wick_values(basis.synthesize(g.coeffs), basis.synthesize(h.coeffs), basis.grid)
    return SpectralField(f.nmax, degreewise_multiply(f.coeffs, w, basis))


def nonsingular_form(f: SpectralField, g: SpectralField, h: SpectralField,
                     nmax_out: int | None = None) -> SpectralField:
    """N_[0,1](f, g, h) = Pi N(f, g, h) - N_(0,1)(f, g, h), projected to ``nmax_out``.

    Defined as the complement of the singular form inside the full trilinear
    form so that the two pieces add up to N exactly, inner-product
    contractions included.
    """
    nmax_out = max(f.nmax, g.nmax, h.nmax) if nmax_out is None else nmax_out
    full = trilinear_form(f, g, h, nmax_out)
    sing = singular_form(f, g, h).resized(max(nmax_out, f.nmax))
    return (full.resized(max(nmax_out, f.nmax)) - sing).resized(nmax_out)


# ---------------------------------------------------------------------------
# pairing constraints

@dataclass(frozen=True)
class PairingConstraint:
    """Equalities (j, k) and inequalities [l, i] between degree slots 0..3.

    Slot 0 is the output degree; slots 1..3 are the degrees of the three
    inputs (the middle one conjugated).
    """

    pairs: tuple = ()
    nonpairs: tuple = ()

    def __post_init__(self):
        pairs = tuple(tuple(sorted(map(int, p))) for p in self.pairs)
        nonpairs = tuple(tuple(sorted(map(int, p))) for p in self.nonpairs)
        for p in pairs + nonpairs:
            if len(p) != 2 or not all(0 <= i <= 3 for i in p):
                raise ValueError(f"slot indices must be pairs in 0..3, got {p}")
        if set(pairs) & set(nonpairs):
            raise ValueError("a slot pair cannot be both paired and non-paired")
        object.__setattr__(self, "pairs", pairs)
        object.__setattr__(self, "nonpairs", nonpairs)

    @classmethod
    def parse(cls, text: str) -> "PairingConstraint":
        """Parse subscripts such as ``"(0,1)[2,3]"``."""
        pairs = [tuple(map(int, m.split(","))) for m in re.findall(r"\((\d\s*,\s*\d)\)", text)]
        nonpairs = [tuple(map(int, m.split(","))) for m in re.findall(r"\[(\d\s*,\s*\d)\]", text)]
        leftover = re.sub(r"\(\d\s*,\s*\d\)|\[\d\s*,\s*\d\]|\s", "", text)
        if leftover:
            raise ValueError(f"cannot parse constraint {text!r}")
        return cls(tuple(pairs), tuple(nonpairs))

    def __str__(self) -> str:
        return "".join(f"({a},{b})" for a, b in self.pairs) + "".join(
            f"[{a},{b}]" for a, b in self.nonpairs
        )

    def inner_ok(self, n: tuple) -> bool:
        """Check the conditions among slots 1..3 for degrees n = (n0?, n1, n2, n3)."""
        for a, b in self.pairs:
            if a and n[a] != n[b]:
                return False
        for a, b in self.nonpairs:
            if a and n[a] == n[b]:
                return False
        return True

    def output_slots(self) -> tuple[tuple[int, ...], tuple[int, ...]]:
        eq = tuple(b for a, b in self.pairs if a == 0 and b != 0)
        ne = tuple(b for a, b in self.nonpairs if a == 0)
        return eq, ne


def trilinear_pairing(f1: SpectralField, f2: SpectralField, f3: SpectralField,
                      constraint: PairingConstraint | str | None = None,
                      nmax_out: int | None = None) -> SpectralField:
    """Constrained sum of pi_{n0}(pi_{n1} f1 * conj(pi_{n2} f2) * pi_{n3} f3).

    Degree triples (n1, n2, n3) are looped explicitly; products sharing the
    same output-side condition are accumulated on the grid and analyzed once.
    With no constraint this is the plain product f1 conj(f2) f3. The hexagon
    products are the special cases (2,3) and [2,3] of the inner pair.

    Impossible constraints (e.g. ``[1,1]``) give the zero field.
    """
    if isinstance(constraint, str):
        constraint = PairingConstraint.parse(constraint)
    constraint = constraint or PairingConstraint()
    if not (f1.nmax == f2.nmax == f3.nmax):
        raise ValueError("trilinear_pairing needs fields of equal nmax")
    nm = f1.nmax
    nmax_out = 3 * nm if nmax_out is None else nmax_out
    basis = product_basis(nm, nmax_out)
    out = np.zeros((nmax_out + 1) ** 2, dtype=complex)
    if any(a == b for a, b in constraint.nonpairs):
        return SpectralField(nmax_out, out)
    v1 = _degree_values(f1.coeffs, basis)
    v2 = np.conj(_degree_values(f2.coeffs, basis))
    v3 = _degree_values(f3.coeffs, basis)
    eq_slots, ne_slots = constraint.output_slots()
    key_slots = tuple(sorted(set(eq_slots + ne_slots)))
    groups: dict[tuple, np.ndarray] = {}
    for n1, n2, n3 in itertools.product(range(nm + 1), repeat=3):
        n = (None, n1, n2, n3)
        if not constraint.inner_ok(n):
            continue
        key = tuple(n[s] for s in key_slots)
        prod = v1[n1] * v2[n2] * v3[n3]
        if key in groups:
            groups[key] += prod
        else:
            groups[key] = prod.copy()
    if not groups:
        return SpectralField(nmax_out, out)
    deg = np.repeat(np.arange(nmax_out + 1), 2 * np.arange(nmax_out + 1) + 1)
    for key, vals in groups.items():
        coeffs = basis.analyze(vals, nmax_out)
        lookup = dict(zip(key_slots, key))
        keep = np.ones(deg.shape, dtype=bool)
        for s in eq_slots:
            keep &= deg == lookup[s]
        for s in ne_slots:
            keep &= deg != lookup[s]
        out += np.where(keep, coeffs, 0)
    return SpectralField(nmax_out, out)


def _block_inner(f: SpectralField, g: SpectralField, n: int) -> complex:
    return complex(np.vdot(g.degree_block(n), f.degree_block(n)))


def pairing_decomposition(f1: SpectralField, f2: SpectralField, f3: SpectralField) -> tuple:
    """The three pieces N^(1), N^(2), N^(3) whose sum is N(f1, f2, f3).

    N^(1) has n2 distinct from n1 and n3; N^(2) collects the single pairings
    n2 = n3 != n1 and n1 = n2 != n3 with their Wick subtractions; N^(3) is
    the fully paired diagonal n1 = n2 = n3 with both contractions removed.
    """
    nm = f1.nmax
    out = 3 * nm
    n1 = trilinear_pairing(f1, f2, f3, "[1,2][2,3]", out)
    # contraction coefficients <pi_m f3|pi_m f2> and <pi_m f1|pi_m f2>
    c32 = np.array([_block_inner(f3, f2, m) for m in range(nm + 1)])
    c12 = np.array([_block_inner(f1, f2, m) for m in range(nm + 1)])
    deg = np.repeat(np.arange(nm + 1), 2 * np.arange(nm + 1) + 1)
    # sum_{n1 != n2} <pi_n2 f3|pi_n2 f2> pi_n1 f1 = (sum_m c32[m] - c32[n1]) pi_n1 f1
    corr_a = (c32.sum() - c32[deg]) * f1.coeffs
    corr_b = (c12.sum() - c12[deg]) * f3.coeffs
    n2 = (
        trilinear_pairing(f1, f2, f3, "(2,3)[1,2]", out)
        + trilinear_pairing(f1, f2, f3, "(1,2)[2,3]", out)
        - SpectralField(nm, corr_a + corr_b).resized(out)
    )
    diag_corr = c12[deg] * f3.coeffs + c32[deg] * f1.coeffs
    n3 = trilinear_pairing(f1, f2, f3, "(1,2)(2,3)", out) - SpectralField(nm, diag_corr).resized(out)
    return n1, n2, n3


def decomposition_check(u: SpectralField) -> float:
    """L2 norm of N(u) - N^(1) - N^(2) - N^(3); zero up to roundoff."""
    n1, n2, n3 = pairing_decomposition(u, u, u)
    full = wick_cubic(u)
    return float(np.linalg.norm((full - n1 - n2 - n3).coeffs))


def resonant_rhs_coeffs(coeffs: np.ndarray, basis: HarmonicBasis | None = None) -> np.ndarray:
    """sum_n pi_n(pi_n u * sum_m |pi_m u|^2) on coefficient arrays (batch allowed)."""
    coeffs = np.asarray(coeffs)
    nm = nmax_of(coeffs.shape[-1])
    basis = product_basis(nm) if basis is None else basis
    degvals = np.stack(
        [basis.synthesize(np.where(_deg_mask(nm, n), coeffs, 0)) for n in range(nm + 1)], axis=-3
    )
    q = np.sum(np.abs(degvals) ** 2, axis=-3)
    out = np.zeros_like(coeffs, dtype=complex)
    for n in range(nm + 1):
        mat = basis.multiplication_matrix(q, n)
        blk = coeffs[..., n * n : (n + 1) ** 2]
        out[..., n * n : (n + 1) ** 2] = np.einsum("...lk,...k->...l", mat, blk)
    return out


def _deg_mask(nm: int, n: int) -> np.ndarray:
    m = np.zeros((nm + 1) ** 2, dtype=bool)
    m[n * n : (n + 1) ** 2] = True
    return m


def resonant_rhs(u: SpectralField) -> SpectralField:
    """Right-hand side of the completely resonant system."""
    return SpectralField(u.nmax, resonant_rhs_coeffs(u.coeffs))


# ---------------------------------------------------------------------------
# small divisors

def divisor_pairs(m: int, n_cap: int) -> list[tuple[int, int]]:
    """Pairs n2 != n3 <= n_cap with lambda_{n2}^2 - lambda_{n3}^2 = m.

    Uses lambda_{n2}^2 - lambda_{n3}^2 = (n2 - n3)(n2 + n3 + 1): each
    divisor d = n2 - n3 of m fixes e = m / d = n2 + n3 + 1.
    """
    if n_cap < 1:
        raise ValueError("n_cap must be >= 1")
    if m == 0:
        return []
    found = []
    am = abs(m)
    for d_abs in range(1, int(np.sqrt(am)) + 2):
        if am % d_abs:
            continue
        for d0 in {d_abs, am // d_abs}:
            d = d0 if m > 0 else -d0
            e = m // d
            if e < 1 or (d + e - 1) % 2:
                continue
            n2 = (d + e - 1) // 2
            n3 = (e - d - 1) // 2
            if 0 <= n2 <= n_cap and 0 <= n3 <= n_cap and n2 != n3:
                found.append((n2, n3))
    return sorted(set(found), reverse=True)


def divisor_count(m: int, n_cap: int) -> int:
    return len(divisor_pairs(m, n_cap))


def divisor_profile(n_cap: int) -> dict:
    """Maximum divisor count over 1 <= |m| <= 2 n_cap^2 (descriptive)."""
    counts = np.zeros(2 * n_cap * n_cap + 1, dtype=int)
    n = np.arange(n_cap + 1)
    gaps = (n[:, None] - n[None, :]) * (n[:, None] + n[None, :] + 1)
    vals = gaps[(gaps > 0) & (gaps <= 2 * n_cap * n_cap)]
    np.add.at(counts, vals, 1)
    m_star = int(np.argmax(counts))
    return {"n_cap": n_cap, "max_count": int(counts.max()), "argmax_m": m_star,
            "ratio_to_log": float(counts.max() / np.log(max(n_cap, 2)))}
