"""
Spectral fields: coefficient vectors over the real harmonic basis, their
projections, norms and a small binary snapshot format.
"""
from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .harmonics import (
    HarmonicBasis,
    basis_for,
    degree_table,
    index,
    lambda_sq_table,
    ncoeffs,
)

SNAPSHOT_MAGIC = b"SNLS"
SNAPSHOT_VERSION = 1


def nmax_of(size: int) -> int:
    nm = int(round(np.sqrt(size))) - 1
    if ncoeffs(nm) != size:
        raise ValueError(f"coefficient length {size} is not (nmax+1)**2")
    return nm


@dataclass(frozen=True, eq=False)
class SpectralField:
    """Complex coefficients c_{n,k}, 0 <= n <= nmax, |k| <= n.

    The coefficient array is copied and frozen on construction.
    """

    nmax: int
    coeffs: np.ndarray

    def __post_init__(self):
        c = np.array(self.coeffs, dtype=complex)
        if c.shape != (ncoeffs(self.nmax),):
            raise ValueError(
                f"expected {ncoeffs(self.nmax)} coefficients for nmax={self.nmax}, got {c.shape}"
            )
        c.flags.writeable = False
        object.__setattr__(self, "coeffs", c)

    @classmethod
    def zeros(cls, nmax: int) -> "SpectralField":
        return cls(nmax, np.zeros(ncoeffs(nmax), dtype=complex))

    @classmethod
    def from_coeffs(cls, coeffs: np.ndarray) -> "SpectralField":
        coeffs = np.asarray(coeffs)
        return cls(nmax_of(coeffs.shape[-1]), coeffs)

    @classmethod
    def mode(cls, nmax: int, n: int, k: int, amplitude: complex = 1.0) -> "SpectralField":
        c = np.zeros(ncoeffs(nmax), dtype=complex)
        c[index(n, k)] = amplitude
        return cls(nmax, c)

    @classmethod
    def from_values(cls, values: np.ndarray, basis: HarmonicBasis, nmax: int | None = None):
        return cls(basis.nmax if nmax is None else nmax, basis.analyze(values, nmax))

    def resized(self, nmax: int) -> "SpectralField":
        """Zero-pad or truncate to degree ``nmax``."""
        return SpectralField(nmax, resize(self.coeffs, nmax))

    def values(self, basis: HarmonicBasis | None = None) -> np.ndarray:
        basis = basis_for(self.nmax) if basis is None else basis
        return basis.synthesize(self.coeffs)

    def degree_block(self, n: int) -> np.ndarray:
        if n > self.nmax:
            return np.zeros(2 * n + 1, dtype=complex)
        return self.coeffs[n * n : (n + 1) ** 2]

    def __add__(self, other: "SpectralField") -> "SpectralField":
        nm = max(self.nmax, other.nmax)
        return SpectralField(nm, resize(self.coeffs, nm) + resize(other.coeffs, nm))

    def __sub__(self, other: "SpectralField") -> "SpectralField":
        return self + (-1.0) * other

    def __mul__(self, scalar: complex) -> "SpectralField":
        return SpectralField(self.nmax, self.coeffs * scalar)

    __rmul__ = __mul__

    def __neg__(self) -> "SpectralField":
        return (-1.0) * self

    def __repr__(self) -> str:
        return f"SpectralField(nmax={self.nmax}, l2={np.linalg.norm(self.coeffs):.6g})"


def resize(coeffs: np.ndarray, nmax: int) -> np.ndarray:
    """Pad or truncate the trailing coefficient axis to degree ``nmax``."""
    coeffs = np.asarray(coeffs)
    size = ncoeffs(nmax)
    have = coeffs.shape[-1]
    if have == size:
        return coeffs
    if have > size:
        return coeffs[..., :size]
    out = np.zeros(coeffs.shape[:-1] + (size,), dtype=np.result_type(coeffs, complex))
    out[..., :have] = coeffs
    return out


def degree_mask(nmax: int, lo: int, hi: int) -> np.ndarray:
    """Boolean mask of coefficients with lo <= n <= hi."""
    deg, _ = degree_table(nmax)
    return (deg >= lo) & (deg <= hi)


def project_coeffs(coeffs: np.ndarray, kind: str, index_: int) -> np.ndarray:
    """Array form of :func:`project`; batch axes lead."""
    coeffs = np.asarray(coeffs)
    nmax = nmax_of(coeffs.shape[-1])
    if kind == "pi_n":
        keep = degree_mask(nmax, index_, index_)
    elif kind == "Pi_N":
        keep = degree_mask(nmax, 0, index_)
    elif kind == "Pi_N_perp":
        keep = ~degree_mask(nmax, 0, index_)
    elif kind == "P_N":
        if index_ < 1 or index_ & (index_ - 1):
            raise ValueError(f"P_N needs a dyadic N, got {index_}")
        lo = 0 if index_ == 1 else index_ // 2 + 1
        keep = degree_mask(nmax, lo, index_)
    else:
        raise ValueError(f"unknown projection kind {kind!r}")
    return np.where(keep, coeffs, 0)


def project(f: SpectralField, kind: str, index_: int) -> SpectralField:
    """Spectral projections.

    Parameters
    ----------
    kind : {"pi_n", "Pi_N", "Pi_N_perp", "P_N"}
        ``pi_n`` keeps degree n, ``Pi_N`` degrees <= N, ``Pi_N_perp`` the rest,
        and ``P_N`` the dyadic shell N/2 < n <= N (P_1 keeps n <= 1).
    """
    return SpectralField(f.nmax, project_coeffs(f.coeffs, kind, index_))


def degree_masses(coeffs: np.ndarray) -> np.ndarray:
    """Per-degree squared L2 norms ||pi_n f||**2; shape batch + (nmax+1,)."""
    coeffs = np.asarray(coeffs)
    nmax = nmax_of(coeffs.shape[-1])
    sq = np.abs(coeffs) ** 2
    edges = np.arange(nmax + 2) ** 2
    return np.add.reduceat(sq, edges[:-1], axis=-1)


def sobolev_norm_coeffs(coeffs: np.ndarray, s: float) -> np.ndarray:
    coeffs = np.asarray(coeffs)
    lam2 = lambda_sq_table(nmax_of(coeffs.shape[-1]))
    return np.sqrt(np.sum(lam2**s * np.abs(coeffs) ** 2, axis=-1))


def sobolev_norm(f: SpectralField, s: float) -> float:
    """(sum_n lambda_n**(2s) ||pi_n f||**2)**(1/2)."""
    return float(sobolev_norm_coeffs(f.coeffs, s))


def lp_norm(f: SpectralField, p: float, basis: HarmonicBasis | None = None) -> float:
    """Quadrature L^p norm under the unit-mass measure.

    ``p = inf`` returns the maximum over grid nodes, which can only
    under-estimate the true supremum.
    """
    if not p >= 1:
        raise ValueError(f"L^p exponent must be >= 1, got {p}")
    basis = basis_for(f.nmax) if basis is None else basis
    vals = np.abs(basis.synthesize(f.coeffs))
    if np.isinf(p):
        return float(vals.max())
    return float(basis.grid.integrate(vals**p) ** (1.0 / p))


def inner(f: SpectralField, g: SpectralField) -> complex:
    """<f|g> = integral of f * conj(g) (coefficient form, exact by Parseval)."""
    nm = max(f.nmax, g.nmax)
    return complex(np.vdot(resize(g.coeffs, nm), resize(f.coeffs, nm)))


def inner_quadrature(f: SpectralField, g: SpectralField) -> complex:
    """<f|g> evaluated on the grid; agrees with :func:`inner` up to roundoff."""
    nm = max(f.nmax, g.nmax)
    basis = basis_for(nm)
    fv = basis.synthesize(resize(f.coeffs, nm))
    gv = basis.synthesize(resize(g.coeffs, nm))
    return complex(basis.grid.integrate(fv * np.conj(gv)))


# ---------------------------------------------------------------------------
# binary snapshots

def snapshot_bytes(f: SpectralField) -> bytes:
    header = SNAPSHOT_MAGIC + struct.pack("<II", SNAPSHOT_VERSION, f.nmax)
    return header + np.ascontiguousarray(f.coeffs, dtype="<c16").tobytes()


def field_from_bytes(data: bytes) -> SpectralField:
    if data[:4] != SNAPSHOT_MAGIC:
        raise ValueError("not a field snapshot (bad magic)")
    version, nmax = struct.unpack("<II", data[4:12])
    if version != SNAPSHOT_VERSION:
        raise ValueError(f"unsupported snapshot version {version}")
    body = data[12:]
    expected = 16 * ncoeffs(nmax)
    if len(body) != expected:
        raise ValueError(f"snapshot body has {len(body)} bytes, expected {expected}")
    return SpectralField(nmax, np.frombuffer(body, dtype="<c16").astype(complex))


def write_snapshot(f: SpectralField, path: str | Path) -> None:
    Path(path).write_bytes(snapshot_bytes(f))


def read_snapshot(path: str | Path) -> SpectralField:
    return field_from_bytes(Path(path).read_bytes())
