"""
Deterministic Gaussian sampling for random spherical-harmonic data.

Randomness comes from a counter-based generator: the i-th 64-bit word of a
stream is ``splitmix64_mix(key + (i + 1) * GOLDEN)`` where ``key`` is derived
from ``(master_seed, stream_id)``. Words are consumed in pairs by Box-Muller,
``(w0, w1) -> z0 + i z1``, scaled by 1/sqrt(2) so that E|g|**2 = 1.

Random fields draw degree n from the child stream ``stream.child(DEGREE, n)``;
truncations at different nmax therefore share their low-degree Gaussians and
the E_n samples coincide with the degree-n block of the full field.
"""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .fields import SpectralField
from .harmonics import HarmonicBasis, eigenspace_dim, eigenvalue_sq, ncoeffs

GOLDEN = np.uint64(0x9E3779B97F4A7C15)
_M1 = np.uint64(0xBF58476D1CE4E5B9)
_M2 = np.uint64(0x94D049BB133111EB)
_MASK = (1 << 64) - 1

# child-stream labels
DEGREE = 0x6465670A
SHELL = 0x7368656C


def splitmix64_mix(z: np.ndarray) -> np.ndarray:
    """Finalizer of splitmix64 on uint64 arrays (wrapping arithmetic)."""
    z = np.asarray(z, dtype=np.uint64)
    with np.errstate(over="ignore"):
        z = (z ^ (z >> np.uint64(30))) * _M1
        z = (z ^ (z >> np.uint64(27))) * _M2
        return z ^ (z >> np.uint64(31))


def _mix_int(value: int) -> int:
    return int(splitmix64_mix(np.array([value & _MASK], dtype=np.uint64))[0])


@dataclass(frozen=True)
class GaussianStream:
    """Value-type handle on one reproducible random sequence."""

    master_seed: int
    stream_id: int
    counter: int = 0

    def __post_init__(self):
        object.__setattr__(self, "master_seed", int(self.master_seed) & _MASK)
        object.__setattr__(self, "stream_id", int(self.stream_id) & _MASK)

    @property
    def key(self) -> int:
        return _mix_int(self.master_seed ^ _mix_int(self.stream_id + 0x632BE59BD9B4E019))

    def child(self, *labels: int) -> "GaussianStream":
        """Independent sub-stream addressed by integer labels."""
        sid = self.stream_id
        for lab in labels:
            sid = _mix_int(sid ^ _mix_int((int(lab) & _MASK) + 0x2545F4914F6CDD1D))
        return GaussianStream(self.master_seed, sid, 0)

    def advanced(self, words: int) -> "GaussianStream":
        return GaussianStream(self.master_seed, self.stream_id, self.counter + words)

    def words(self, count: int) -> np.ndarray:
        """``count`` raw uint64 words starting at the stream counter."""
        i = np.arange(self.counter + 1, self.counter + count + 1, dtype=np.uint64)
        with np.errstate(over="ignore"):
            state = np.uint64(self.key) + i * GOLDEN
        return splitmix64_mix(state)

    def uniforms(self, count: int) -> np.ndarray:
        """Doubles in (0, 1] built from the top 53 bits."""
        w = self.words(count)
        return ((w >> np.uint64(11)).astype(np.float64) + 1.0) * 2.0**-53

    def to_dict(self) -> dict:
        return {"master_seed": self.master_seed, "stream_id": self.stream_id,
                "counter": self.counter, "generator": "splitmix64 + Box-Muller"}


def sample_complex_gaussians(stream: GaussianStream, count: int) -> np.ndarray:
    """Standard complex Gaussians g = (X + iY)/sqrt(2), X, Y ~ N(0, 1)."""
    u = stream.uniforms(2 * count).reshape(count, 2) if count else np.zeros((0, 2))
    r = np.sqrt(-2.0 * np.log(u[:, 0]))
    ang = 2.0 * np.pi * u[:, 1]
    return (r * np.cos(ang) + 1j * r * np.sin(ang)) / np.sqrt(2.0)


def degree_gaussians(stream: GaussianStream, n: int) -> np.ndarray:
    """The 2n+1 Gaussians g_{n,k} attached to degree n of a sample."""
    return sample_complex_gaussians(stream.child(DEGREE, n), eigenspace_dim(n))


def sample_e_n(stream: GaussianStream, n: int, basis: HarmonicBasis | int) -> SpectralField:
    """Normalized Gaussian eigenfunction sum_k g_{n,k} b_{n,k} / sqrt(2n+1)."""
    nmax = basis if isinstance(basis, int) else basis.nmax
    if n > nmax:
        raise ValueError(f"degree {n} exceeds nmax={nmax}")
    c = np.zeros(ncoeffs(nmax), dtype=complex)
    c[n * n : (n + 1) ** 2] = degree_gaussians(stream, n) / math.sqrt(2 * n + 1)
    return SpectralField(nmax, c)


def phi_alpha_coeffs(stream: GaussianStream, alpha: float, nmax: int) -> np.ndarray:
    c = np.empty(ncoeffs(nmax), dtype=complex)
    for n in range(nmax + 1):
        c[n * n : (n + 1) ** 2] = eigenvalue_sq(n) ** (-alpha / 2.0) * degree_gaussians(stream, n)
    return c


def sample_phi_alpha(
    stream: GaussianStream, alpha: float, nmax: int, basis: HarmonicBasis | None = None
) -> SpectralField:
    """Random field sum_{n <= nmax} lambda_n**(-alpha) sum_k g_{n,k} b_{n,k}.

    ``basis`` is accepted for symmetry with the other samplers; the field is
    returned in coefficients. Values alpha <= 1 are allowed with a warning
    since the untruncated series then fails to converge in L2.
    """
    if alpha <= 1:
        warnings.warn(f"alpha={alpha} <= 1: the untruncated field is not in L2", stacklevel=2)
    if basis is not None and basis.nmax < nmax:
        raise ValueError("basis degree smaller than requested nmax")
    return SpectralField(nmax, phi_alpha_coeffs(stream, alpha, nmax))


def expected_hs_sq(alpha: float, s: float, nmax: int) -> float:
    """Exact E ||phi_alpha||_{H^s}**2 = sum_{n<=nmax} lambda_n**(2s-2alpha) (2n+1)."""
    return float(
        sum(eigenvalue_sq(n) ** (s - alpha) * eigenspace_dim(n) for n in range(nmax + 1))
    )


# ---------------------------------------------------------------------------
# ensembles

class EnsembleError(RuntimeError):
    def __init__(self, sample_index: int, cause: BaseException):
        super().__init__(f"functional failed on sample {sample_index}: {cause!r}")
        self.sample_index = sample_index
        self.cause = cause


@dataclass(frozen=True)
class EnsembleEstimate:
    mean: float
    stderr: float
    count: int
    name: str = ""

    def z_score(self, value: float) -> float:
        if self.stderr == 0:
            return 0.0 if self.mean == value else math.inf
        return abs(self.mean - value) / self.stderr

    def to_dict(self) -> dict:
        return {"name": self.name, "mean": self.mean, "stderr": self.stderr, "count": self.count}


def ensemble_values(
    master_seed: int, functional: Callable[[GaussianStream], float], count: int
) -> np.ndarray:
    """Evaluate ``functional`` on streams ``(master_seed, i)`` for i < count."""
    out = np.empty(count)
    for i in range(count):
        try:
            out[i] = functional(GaussianStream(master_seed, i))
        except Exception as exc:  # noqa: BLE001 - re-raised with the sample index
            raise EnsembleError(i, exc) from exc
    return out


def ensemble_estimate(
    master_seed: int,
    functional: Callable[[GaussianStream], float],
    count: int,
    name: str | None = None,
) -> EnsembleEstimate:
    """Sample mean and standard error over independent per-sample streams."""
    if count < 2:
        raise ValueError("an ensemble needs at least two samples")
    vals = ensemble_values(master_seed, functional, count)
    return summarize(vals, name or getattr(functional, "__name__", "functional"))


def summarize(values: np.ndarray, name: str = "") -> EnsembleEstimate:
    values = np.asarray(values, dtype=float)
    return EnsembleEstimate(
        float(values.mean()), float(values.std(ddof=1) / math.sqrt(values.size)), values.size, name
    )


def tail_fit(values: np.ndarray, quantiles=(0.5, 0.9, 0.99)) -> dict:
    """Fit log P[X > R] ~ a - c R**2 through empirical tail points.

    Returns the fitted Gaussian-type exponent c together with the
    (R, probability) pairs used. Only a descriptive statistic.
    """
    values = np.sort(np.asarray(values, dtype=float))
    rs = np.quantile(values, quantiles)
    probs = np.array([np.mean(values > r) for r in rs])
    ok = probs > 0
    if ok.sum() < 2:
        return {"exponent": float("nan"), "R": rs.tolist(), "prob": probs.tolist()}
    slope, _ = np.polyfit(rs[ok] ** 2, np.log(probs[ok]), 1)
    return {"exponent": float(-slope), "R": rs.tolist(), "prob": probs.tolist()}
