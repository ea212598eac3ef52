"""
Real spherical harmonics on a Gauss-Legendre grid.

The sphere carries the normalized surface measure (total mass 1), so the
orthonormal basis is the classical one multiplied by sqrt(4*pi):

    b_{n,k}(theta, phi) = Pbar_{n,|k|}(cos theta) * cos(k phi)     k >= 0
    b_{n,k}(theta, phi) = Pbar_{n,|k|}(cos theta) * sin(|k| phi)   k < 0

with Pbar the fully normalized ("4 pi") associated Legendre functions.
Coefficients of degree <= nmax are stored flat in (n, k) lexicographic order,
index n**2 + n + k.

Transforms use an FFT in longitude and one Legendre matrix per order, which
is O(nmax**3) per field and vectorizes over leading batch axes.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np


class ConfigurationError(ValueError):
    """Raised when a grid or basis cannot support the requested degree."""


def eigenvalue_sq(n: int) -> int:
    """Eigenvalue lambda_n**2 = n**2 + n + 1 of -Delta + 1 on E_n."""
    if n < 0:
        raise ValueError("degree must be non-negative")
    n = int(n)
    return n * n + n + 1


def eigenspace_dim(n: int) -> int:
    """Dimension 2n+1 of the degree-n eigenspace."""
    if n < 0:
        raise ValueError("degree must be non-negative")
    return 2 * int(n) + 1


def ncoeffs(nmax: int) -> int:
    return (nmax + 1) ** 2


def index(n: int, k: int) -> int:
    """Flat position of (n, k) in the lexicographic coefficient layout."""
    if abs(k) > n:
        raise ValueError(f"order {k} out of range for degree {n}")
    return n * n + n + k


@lru_cache(maxsize=None)
def degree_table(nmax: int) -> tuple[np.ndarray, np.ndarray]:
    """Arrays (deg, order) giving n and k for every flat coefficient index."""
    deg = np.concatenate([np.full(2 * n + 1, n) for n in range(nmax + 1)])
    order = np.concatenate([np.arange(-n, n + 1) for n in range(nmax + 1)])
    deg.flags.writeable = False
    order.flags.writeable = False
    return deg, order


def lambda_sq_table(nmax: int) -> np.ndarray:
    """lambda_n**2 broadcast over the flat coefficient layout (float)."""
    deg, _ = degree_table(nmax)
    return (deg * deg + deg + 1).astype(float)


def legendre_normalized(x: np.ndarray, nmax: int) -> np.ndarray:
    """
    Fully normalized associated Legendre functions Pbar_{n,m}(x).

    Parameters
    ----------
    x : array of cos(theta) values in [-1, 1]
    nmax : maximal degree

    Returns
    -------
    p : array of shape (nmax+1, nmax+1, len(x)), p[n, m] zero for m > n.
        Normalized so that the mean of (Pbar_{n,m}(x) trig(m phi))**2 over the
        unit sphere is 1.
    """
    x = np.asarray(x, dtype=float)
    u = np.sqrt(np.clip(1.0 - x * x, 0.0, None))
    p = np.zeros((nmax + 1, nmax + 1, x.size))
    p[0, 0] = 1.0
    # sectoral terms
    if nmax >= 1:
        p[1, 1] = np.sqrt(3.0) * u
    for m in range(2, nmax + 1):
        p[m, m] = u * np.sqrt((2.0 * m + 1.0) / (2.0 * m)) * p[m - 1, m - 1]
    # three-term recurrence in n for fixed m, normalized coefficients
    for m in range(0, nmax + 1):
        if m + 1 <= nmax:
            p[m + 1, m] = np.sqrt(2.0 * m + 3.0) * x * p[m, m]
        for n in range(m + 2, nmax + 1):
            a = np.sqrt((2.0 * n - 1.0) * (2.0 * n + 1.0) / ((n - m) * (n + m)))
            b = np.sqrt(
                (2.0 * n + 1.0) * (n + m - 1.0) * (n - m - 1.0)
                / ((n - m) * (n + m) * (2.0 * n - 3.0))
            )
            p[n, m] = a * x * p[n - 1, m] - b * p[n - 2, m]
    return p


@dataclass(frozen=True)
class SphericalGrid:
    """Gauss-Legendre latitudes times equispaced longitudes.

    ``weights`` has shape (n_lat, n_lon) and sums to one.
    """

    n_lat: int
    n_lon: int
    x: np.ndarray = field(repr=False)
    theta: np.ndarray = field(repr=False)
    phi: np.ndarray = field(repr=False)
    lat_weights: np.ndarray = field(repr=False)

    @classmethod
    def create(cls, n_lat: int, n_lon: int) -> "SphericalGrid":
        if n_lat < 1 or n_lon < 1:
            raise ConfigurationError("grid needs at least one node per axis")
        x, w = np.polynomial.legendre.leggauss(n_lat)
        # descending cos(theta) so theta increases from the north pole
        x, w = x[::-1].copy(), w[::-1].copy()
        w = w / w.sum()
        phi = 2.0 * np.pi * np.arange(n_lon) / n_lon
        for arr in (x, w, phi):
            arr.flags.writeable = False
        return cls(n_lat, n_lon, x, np.arccos(x), phi, w)

    @classmethod
    def for_degree(cls, nmax: int) -> "SphericalGrid":
        """Smallest grid exact for products of four degree-nmax harmonics."""
        return cls.create(2 * nmax + 1, 4 * nmax + 1)

    @property
    def weights(self) -> np.ndarray:
        return np.outer(self.lat_weights, np.full(self.n_lon, 1.0 / self.n_lon))

    @property
    def shape(self) -> tuple[int, int]:
        return (self.n_lat, self.n_lon)

    def cartesian(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        st = np.sin(self.theta)[:, None]
        return (
            st * np.cos(self.phi)[None, :],
            st * np.sin(self.phi)[None, :],
            np.broadcast_to(self.x[:, None], self.shape),
        )

    def integrate(self, values: np.ndarray) -> np.ndarray:
        """Quadrature over the trailing two (grid) axes."""
        return np.einsum("...ij,i->...", values, self.lat_weights) / self.n_lon


class HarmonicBasis:
    """Real orthonormal harmonics of degree <= nmax tabulated on a grid.

    The basis is immutable after construction; transforms are pure and accept
    arbitrary leading batch axes.
    """

    def __init__(self, nmax: int, grid: SphericalGrid | None = None):
        if nmax < 0:
            raise ConfigurationError("nmax must be non-negative")
        grid = SphericalGrid.for_degree(nmax) if grid is None else grid
        if grid.n_lat < 2 * nmax + 1 or grid.n_lon < 4 * nmax + 1:
            raise ConfigurationError(
                f"grid {grid.n_lat}x{grid.n_lon} too small for nmax={nmax}: "
                f"need at least {2 * nmax + 1}x{4 * nmax + 1}"
            )
        self.nmax = nmax
        self.grid = grid
        self.size = ncoeffs(nmax)
        plm = legendre_normalized(grid.x, nmax)
        self._plm = plm
        self.plm_by_order = []
        for m in range(nmax + 1):
            mat = np.ascontiguousarray(plm[m:, m, :].T)  # (n_lat, nmax-m+1)
            mat.flags.writeable = False
            self.plm_by_order.append(mat)
        self._weighted_by_order = [
            np.ascontiguousarray(p * grid.lat_weights[:, None]) for p in self.plm_by_order
        ]
        deg = np.arange(nmax + 1)
        self._cos_idx = [deg[m:] ** 2 + deg[m:] + m for m in range(nmax + 1)]
        self._sin_idx = [deg[m:] ** 2 + deg[m:] - m for m in range(nmax + 1)]

    def __repr__(self) -> str:
        return f"HarmonicBasis(nmax={self.nmax}, grid={self.grid.n_lat}x{self.grid.n_lon})"

    def describe(self) -> dict:
        """Basis metadata recorded in reports."""
        return {
            "family": "real orthonormal spherical harmonics (cos for k>=0, sin for k<0)",
            "normalization": "unit L2 norm under the surface measure of total mass 1",
            "nmax": self.nmax,
            "grid": {"n_lat": self.grid.n_lat, "n_lon": self.grid.n_lon,
                     "rule": "Gauss-Legendre x equispaced"},
        }

    # ------------------------------------------------------------------
    def values(self) -> np.ndarray:
        """Table b[idx, i, j] of every basis function on the grid."""
        return self.synthesize(np.eye(self.size)).real

    def degree_values(self, n: int) -> np.ndarray:
        """Values of the 2n+1 degree-n basis functions, shape (2n+1, n_lat, n_lon)."""
        if n > self.nmax:
            raise ConfigurationError(f"degree {n} exceeds nmax={self.nmax}")
        p = self._plm[n, : n + 1, :]  # (m, lat)
        ks = np.arange(-n, n + 1)
        m = np.abs(ks)
        trig = np.where(
            (ks >= 0)[:, None],
            np.cos(m[:, None] * self.grid.phi[None, :]),
            np.sin(m[:, None] * self.grid.phi[None, :]),
        )
        return p[m][:, :, None] * trig[:, None, :]

    def legendre_degree(self, n: int) -> np.ndarray:
        """Pbar_{n,|k|}(x_i) for k = -n..n, shape (2n+1, n_lat)."""
        return self._plm[n, np.abs(np.arange(-n, n + 1)), :]

    def _pad(self, coeffs: np.ndarray) -> np.ndarray:
        coeffs = np.asarray(coeffs)
        size = coeffs.shape[-1]
        if size == self.size:
            return coeffs
        nm = int(round(np.sqrt(size))) - 1
        if ncoeffs(nm) != size:
            raise ValueError(f"coefficient axis of length {size} is not a square")
        if nm > self.nmax:
            raise ConfigurationError(f"field degree {nm} exceeds basis nmax={self.nmax}")
        out = np.zeros(coeffs.shape[:-1] + (self.size,), dtype=np.result_type(coeffs, complex))
        out[..., :size] = coeffs
        return out

    def synthesize(self, coeffs: np.ndarray) -> np.ndarray:
        """Grid values of sum_{n,k} c_{n,k} b_{n,k}; batch axes lead."""
        c = self._pad(coeffs)
        batch = c.shape[:-1]
        n_lat, n_lon = self.grid.shape
        spec = np.zeros(batch + (n_lat, n_lon), dtype=complex)
        for m in range(self.nmax + 1):
            p = self.plm_by_order[m]
            a = c[..., self._cos_idx[m]] @ p.T
            if m == 0:
                spec[..., 0] = a
                continue
            b = c[..., self._sin_idx[m]] @ p.T
            spec[..., m] = 0.5 * (a - 1j * b)
            spec[..., n_lon - m] = 0.5 * (a + 1j * b)
        return np.fft.ifft(spec, axis=-1) * n_lon

    def analyze(self, values: np.ndarray, nmax: int | None = None) -> np.ndarray:
        """Quadrature coefficients <f | b_{n,k}> for n <= nmax (default: basis nmax)."""
        values = np.asarray(values)
        if values.shape[-2:] != self.grid.shape:
            raise ValueError(
                f"samples of shape {values.shape[-2:]} do not match grid {self.grid.shape}"
            )
        nmax = self.nmax if nmax is None else nmax
        if nmax > self.nmax:
            raise ConfigurationError(f"requested degree {nmax} exceeds basis nmax={self.nmax}")
        n_lon = self.grid.n_lon
        g = np.fft.fft(values, axis=-1) / n_lon
        batch = values.shape[:-2]
        out = np.zeros(batch + (ncoeffs(nmax),), dtype=complex)
        for m in range(nmax + 1):
            pw = self._weighted_by_order[m][:, : nmax - m + 1]
            gp = g[..., m]
            if m == 0:
                out[..., self._cos_idx[m][: nmax + 1]] = gp @ pw
                continue
            gm = g[..., n_lon - m]
            cos_part = 0.5 * (gp + gm)
            sin_part = (gm - gp) / 2j
            cnt = nmax - m + 1
            out[..., self._cos_idx[m][:cnt]] = cos_part @ pw
            out[..., self._sin_idx[m][:cnt]] = sin_part @ pw
        return out

    def weyl_sum(self, n: int, i: int, j: int) -> float:
        """sum_k |b_{n,k}(x)|**2 at grid node (i, j)."""
        vals = self.degree_values(n)[:, i, j]
        return float(np.sum(vals * vals))

    def multiplication_matrix(self, potential: np.ndarray, n: int) -> np.ndarray:
        """Matrix of f -> pi_n(f * V) on E_n for real grid potentials V.

        ``potential`` may carry leading batch axes; the result has shape
        batch + (2n+1, 2n+1) and is real symmetric.
        """
        v = np.asarray(potential, dtype=float)
        if v.shape[-2:] != self.grid.shape:
            raise ValueError("potential is not sampled on the basis grid")
        if n > self.nmax:
            raise ConfigurationError(f"degree {n} exceeds nmax={self.nmax}")
        n_lon = self.grid.n_lon
        vh = np.fft.rfft(v, axis=-1)[..., : 2 * n + 1] / n_lon
        cs = vh.real  # mean of V cos(m phi)
        sn = -vh.imag  # mean of V sin(m phi)
        mats = _trig_product_tables(n)
        # Phi[..., i, l, k] assembled from cos/sin tables of |m|
        lat = (
            cs[..., mats["c_plus"]] * mats["w_c_plus"]
            + cs[..., mats["c_minus"]] * mats["w_c_minus"]
            + sn[..., mats["s_plus"]] * mats["w_s_plus"]
            + sn[..., mats["s_minus"]] * mats["w_s_minus"]
        )
        leg = self.legendre_degree(n) * np.sqrt(self.grid.lat_weights)[None, :]
        return np.einsum("li,ki,...ilk->...lk", leg, leg, lat, optimize=True)


@lru_cache(maxsize=None)
def _trig_product_tables(n: int) -> dict:
    """Index/weight tables expressing mean_phi(V trig_l trig_k) through the
    cosine and sine moments of V at |l|±|k|."""
    ks = np.arange(-n, n + 1)
    a = np.abs(ks)[:, None]
    b = np.abs(ks)[None, :]
    is_cos_l = (ks >= 0)[:, None]
    is_cos_k = (ks >= 0)[None, :]
    plus = a + b
    minus = a - b
    shape = (2 * n + 1, 2 * n + 1)
    w_c_plus = np.zeros(shape)
    w_c_minus = np.zeros(shape)
    w_s_plus = np.zeros(shape)
    w_s_minus = np.zeros(shape)
    cc = is_cos_l & is_cos_k
    ss = ~is_cos_l & ~is_cos_k
    cs_ = is_cos_l & ~is_cos_k  # cos(a) sin(b) = [sin(a+b) - sin(a-b)] / 2
    sc = ~is_cos_l & is_cos_k  # sin(a) cos(b) = [sin(a+b) + sin(a-b)] / 2
    w_c_plus[cc] = 0.5
    w_c_minus[cc] = 0.5
    w_c_plus[ss] = -0.5
    w_c_minus[ss] = 0.5
    sign_minus = np.sign(minus)
    w_s_plus[cs_] = 0.5
    w_s_minus[cs_] = -0.5 * sign_minus[cs_]
    w_s_plus[sc] = 0.5
    w_s_minus[sc] = 0.5 * sign_minus[sc]
    # sin of an order-0 factor vanishes; those entries must stay zero
    zero_sin = (~is_cos_l & (a == 0)) | (~is_cos_k & (b == 0))
    for w in (w_c_plus, w_c_minus, w_s_plus, w_s_minus):
        w[np.broadcast_to(zero_sin, shape)] = 0.0
    return {
        "c_plus": plus,
        "c_minus": np.abs(minus),
        "s_plus": plus,
        "s_minus": np.abs(minus),
        "w_c_plus": w_c_plus,
        "w_c_minus": w_c_minus,
        "w_s_plus": w_s_plus,
        "w_s_minus": w_s_minus,
    }


@lru_cache(maxsize=16)
def basis_for(nmax: int) -> HarmonicBasis:
    """Shared basis on the minimal quartic-exact grid for ``nmax``."""
    return HarmonicBasis(nmax)


def build_basis(nmax: int, grid: SphericalGrid | None = None) -> HarmonicBasis:
    return HarmonicBasis(nmax, grid)


def sht_forward(values: np.ndarray, basis: HarmonicBasis) -> np.ndarray:
    return basis.analyze(values)


def sht_inverse(coeffs: np.ndarray, basis: HarmonicBasis) -> np.ndarray:
    return basis.synthesize(coeffs)


def weyl_sum(n: int, point: tuple[int, int], basis: HarmonicBasis) -> float:
    return basis.weyl_sum(n, *point)
