"""
Time integration on the harmonic coefficients.

Sign convention: i u' = (-Delta + 1) u + N(u) with N(u) = |u|^2 u - 2 ||u||^2 u,
so the free flow multiplies c_{n,k} by exp(-i t lambda_n^2).

Trajectories are stored on a uniform grid of spacing dt/2 (integer steps at
even node offsets from the origin, half steps in between) and may extend to
negative times.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .fields import SpectralField, field_from_bytes, nmax_of, resize, snapshot_bytes
from .harmonics import HarmonicBasis, basis_for, degree_table, lambda_sq_table
from .nonlinear import resonant_rhs_coeffs, wick_cubic_values


class StabilityError(ValueError):
    """Requested step violates the nonlinear phase guard."""

    def __init__(self, message: str, suggested_dt: float):
        super().__init__(message)
        self.suggested_dt = suggested_dt


class IntegrationError(RuntimeError):
    def __init__(self, message: str, step: int):
        super().__init__(message)
        self.step = step


@dataclass(frozen=True, eq=False)
class FieldTrajectory:
    """Coefficient snapshots on a uniform grid of spacing ``dt / 2``.

    ``times[origin] == 0``; node ``origin + 2 k`` is integer step k.
    """

    nmax: int
    dt: float
    times: np.ndarray = field(repr=False)
    coeffs: np.ndarray = field(repr=False)
    origin: int = 0
    meta: dict = field(default_factory=dict, repr=False)

    def __post_init__(self):
        times = np.asarray(self.times, dtype=float)
        coeffs = np.asarray(self.coeffs, dtype=complex)
        if coeffs.shape != (times.size, (self.nmax + 1) ** 2):
            raise ValueError(f"coefficients {coeffs.shape} do not match {times.size} nodes at nmax={self.nmax}")
        if times.size > 1 and not np.allclose(np.diff(times), self.dt / 2, rtol=0, atol=1e-12 * max(1, abs(self.dt))):
            raise ValueError("trajectory nodes must be uniformly spaced by dt/2")
        object.__setattr__(self, "times", times)
        object.__setattr__(self, "coeffs", coeffs)

    @property
    def h(self) -> float:
        return self.dt / 2

    @property
    def nodes(self) -> int:
        return self.times.size

    @property
    def t0(self) -> float:
        return float(self.times[0])

    @property
    def steps(self) -> int:
        return (self.nodes - 1) // 2

    def field(self, i: int) -> SpectralField:
        return SpectralField(self.nmax, self.coeffs[i])

    def index_of(self, t: float) -> int:
        i = int(round((t - self.t0) / self.h))
        if not (0 <= i < self.nodes) or abs(self.times[i] - t) > 1e-9 * max(1.0, abs(t)):
            raise ValueError(f"time {t} is not a trajectory node")
        return i

    def window_mask(self, half_width: float) -> np.ndarray:
        return np.abs(self.times) <= half_width * (1 + 1e-12)

    def with_coeffs(self, coeffs: np.ndarray, **meta) -> "FieldTrajectory":
        nm = nmax_of(coeffs.shape[-1])
        return FieldTrajectory(nm, self.dt, self.times, coeffs, self.origin, {**self.meta, **meta})

    def resized(self, nmax: int) -> "FieldTrajectory":
        return FieldTrajectory(nmax, self.dt, self.times, resize(self.coeffs, nmax), self.origin, dict(self.meta))

    def __add__(self, other: "FieldTrajectory") -> "FieldTrajectory":
        _check_same_grid(self, other)
        nm = max(self.nmax, other.nmax)
        return self.with_coeffs(resize(self.coeffs, nm) + resize(other.coeffs, nm))

    def __sub__(self, other: "FieldTrajectory") -> "FieldTrajectory":
        return self + other.scaled(-1.0)

    def scaled(self, factor) -> "FieldTrajectory":
        factor = np.asarray(factor)
        if factor.ndim == 1:
            factor = factor[:, None]
        return self.with_coeffs(self.coeffs * factor)

    # persistence ---------------------------------------------------------
    def save(self, directory: str | Path) -> Path:
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        with open(directory / "snapshots.bin", "wb") as fh:
            for c in self.coeffs:
                fh.write(snapshot_bytes(SpectralField(self.nmax, c)))
        manifest = {
            "nmax": self.nmax, "dt": self.dt, "t0": self.t0, "nodes": self.nodes,
            "origin": self.origin, "steps": self.steps, "snapshot_spacing": "dt/2",
            "meta": _jsonable(self.meta),
        }
        (directory / "trajectory.json").write_text(json.dumps(manifest, indent=2, sort_keys=True))
        return directory

    @classmethod
    def load(cls, directory: str | Path) -> "FieldTrajectory":
        directory = Path(directory)
        manifest = json.loads((directory / "trajectory.json").read_text())
        nm = manifest["nmax"]
        blob = (directory / "snapshots.bin").read_bytes()
        rec = 12 + 16 * (nm + 1) ** 2
        coeffs = np.stack([field_from_bytes(blob[i : i + rec]).coeffs for i in range(0, len(blob), rec)])
        times = manifest["t0"] + manifest["dt"] / 2 * np.arange(manifest["nodes"])
        return cls(nm, manifest["dt"], times, coeffs, manifest["origin"], manifest["meta"])


def _check_same_grid(a: FieldTrajectory, b: FieldTrajectory) -> None:
    if a.nodes != b.nodes or a.origin != b.origin or not np.isclose(a.dt, b.dt):
        raise ValueError("trajectories live on different time grids")


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.generic):
        return obj.item()
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    return obj


def time_grid(T: float, dt: float, two_sided: bool) -> tuple[np.ndarray, int]:
    """Nodes of spacing dt/2 on [0, T] or [-T, T]; returns (times, origin)."""
    steps = int(round(T / dt))
    if steps < 1 or abs(steps * dt - T) > 1e-9 * T:
        raise ValueError(f"dt={dt} must divide T={T}")
    half = 2 * steps
    if two_sided:
        return dt / 2 * np.arange(-half, half + 1), half
    return dt / 2 * np.arange(half + 1), 0


def free_phase(nmax: int, t) -> np.ndarray:
    """exp(-i t lambda_n^2) over the coefficient layout; t may be an array."""
    lam2 = lambda_sq_table(nmax)
    t = np.asarray(t, dtype=float)
    return np.exp(-1j * t[..., None] * lam2)


def free_evolution(u0: SpectralField, times: np.ndarray) -> np.ndarray:
    return free_phase(u0.nmax, times) * u0.coeffs


# ---------------------------------------------------------------------------
# Wick-ordered NLS

def _projected_exp(theta: np.ndarray, x: np.ndarray, h: float, basis: HarmonicBasis,
                   nmax: int, tol: float = 1e-17) -> np.ndarray:
    """exp(-i h A) x with A y = Pi(theta * y), by Taylor series to roundoff."""
    acc = x.copy()
    term = x
    scale = np.maximum(np.linalg.norm(x, axis=-1), 1e-300)
    for j in range(1, 60):
        term = (-1j * h / j) * basis.analyze(theta * basis.synthesize(term), nmax)
        acc += term
        if np.all(np.linalg.norm(term, axis=-1) <= tol * scale):
            return acc
    raise IntegrationError("Taylor series for the nonlinear substep did not converge", -1)


def _theta(c: np.ndarray, basis: HarmonicBasis) -> np.ndarray:
    vals = basis.synthesize(c)
    dens = np.abs(vals) ** 2
    return dens - 2.0 * basis.grid.integrate(dens)[..., None, None]


def nonlinear_substep(c: np.ndarray, h: float, basis: HarmonicBasis, nmax: int,
                      kind: str = "exponential") -> np.ndarray:
    """Advance i c' = Pi(theta(c) c), theta = |u|^2 - 2 ||u||^2, by ``h``.

    ``exponential``: unitary exponential midpoint rule (second order, exact
    mass conservation). ``pointwise``: multiply grid values by
    exp(-i h theta) and re-analyze, which is exact for the unprojected
    substep but leaks mass through the projection.
    """
    if kind == "exponential":
        mid = _projected_exp(_theta(c, basis), c, h / 2, basis, nmax)
        return _projected_exp(_theta(mid, basis), c, h, basis, nmax)
    if kind == "pointwise":
        vals = basis.synthesize(c)
        theta = _theta(c, basis)
        return basis.analyze(vals * np.exp(-1j * h * theta), nmax)
    raise ValueError(f"unknown nonlinear substep {kind!r}")


def stability_number(u0: SpectralField, dt: float) -> float:
    vals = basis_for(u0.nmax).synthesize(u0.coeffs)
    return float(abs(dt) * np.max(np.abs(vals) ** 2))


def _guard(u0: SpectralField, step: float, limit: float = 0.05) -> None:
    num = stability_number(u0, step)
    if num > limit:
        peak = num / abs(step)
        raise StabilityError(
            f"dt * max|u0|^2 = {num:.3g} exceeds {limit}; use dt <= {limit / peak:.3g}",
            limit / peak,
        )


def evolve_nls(
    u0: SpectralField,
    N: int,
    T: float,
    dt: float,
    *,
    two_sided: bool = False,
    substeps: int = 1,
    nonlinear_step: str = "exponential",
    projection: str = "each_step",
    resolution: int | None = None,
) -> FieldTrajectory:
    """Strang-split integration of the truncated Wick-ordered NLS.

    Each snapshot interval dt/2 is covered by ``substeps`` Strang steps:
    half free step, nonlinear substep, half free step.

    Parameters
    ----------
    N : truncation degree; the data are projected to degrees <= N.
    projection : ``"each_step"`` keeps the flow in degrees <= N (Galerkin).
        ``"never"`` keeps the data truncated at N but evolves in the wider
        space of degree ``resolution`` (default 2N) so the nonlinearity is
        not projected back to N.
    """
    if projection == "each_step":
        work = N
    elif projection == "never":
        work = 2 * N if resolution is None else int(resolution)
        if work < N:
            raise ValueError("resolution must be >= N")
    else:
        raise ValueError(f"unknown projection mode {projection!r}")
    u0 = u0.resized(N).resized(work)
    step = dt / 2 / substeps
    _guard(u0, step)
    basis = basis_for(work)
    times, origin = time_grid(T, dt, two_sided)
    out = np.empty((times.size, (work + 1) ** 2), dtype=complex)
    out[origin] = u0.coeffs
    lam2 = lambda_sq_table(work)

    def march(direction: int, last: int):
        c = u0.coeffs.copy()
        h = direction * step
        half_phase = np.exp(-1j * lam2 * h / 2)
        i = origin
        while i != last:
            for _ in range(substeps):
                c = half_phase * c
                c = nonlinear_substep(c, h, basis, work, nonlinear_step)
                c = half_phase * c
            i += direction
            if not np.all(np.isfinite(c)):
                raise IntegrationError(f"non-finite state at node {i}", i)
            out[i] = c

    march(+1, times.size - 1)
    if two_sided:
        march(-1, 0)
    meta = {"integrator": f"strang/{nonlinear_step}", "N": N, "projection": projection,
            "substeps": substeps, "T": T, "two_sided": two_sided}
    return FieldTrajectory(work, dt, times, out, origin, meta)


def evolve_nls_batch(coeffs: np.ndarray, N: int, T: float, dt: float, *,
                     substeps: int = 1) -> np.ndarray:
    """Galerkin Strang integration of many data at once on [0, T].

    ``coeffs`` has shape (batch, ncoef) at any degree; returns the states at
    every dt/2 node, shape (nodes, batch, ncoeffs(N)). Same scheme as
    :func:`evolve_nls` with ``projection="each_step"``.
    """
    c = resize(np.asarray(coeffs, dtype=complex), N)
    step = dt / 2 / substeps
    basis = basis_for(N)
    peak = np.max(np.abs(basis.synthesize(c)) ** 2) if c.size else 0.0
    if step * peak > 0.05:
        raise StabilityError(f"dt * max|u0|^2 = {step * peak:.3g} exceeds 0.05", 0.05 / peak)
    times, _ = time_grid(T, dt, two_sided=False)
    out = np.empty((times.size,) + c.shape, dtype=complex)
    out[0] = c
    half_phase = np.exp(-1j * lambda_sq_table(N) * step / 2)
    for i in range(1, times.size):
        for _ in range(substeps):
            c = half_phase * c
            c = nonlinear_substep(c, step, basis, N)
            c = half_phase * c
        if not np.all(np.isfinite(c)):
            raise IntegrationError(f"non-finite state at node {i}", i)
        out[i] = c
    return out


def mass(coeffs: np.ndarray) -> np.ndarray:
    return np.sum(np.abs(coeffs) ** 2, axis=-1)


def energy(coeffs: np.ndarray) -> np.ndarray:
    """<(-Delta+1)u, u> + (1/2) int |u|^4 - ||u||^4 (batch over leading axes)."""
    coeffs = np.asarray(coeffs)
    nm = nmax_of(coeffs.shape[-1])
    basis = basis_for(nm)
    dens = np.abs(basis.synthesize(coeffs)) ** 2
    m = mass(coeffs)
    kinetic = np.sum(lambda_sq_table(nm) * np.abs(coeffs) ** 2, axis=-1)
    return kinetic + 0.5 * basis.grid.integrate(dens**2) - m**2


# ---------------------------------------------------------------------------
# completely resonant system

def evolve_resonant(u0: SpectralField, T: float, dt: float, *, two_sided: bool = False) -> FieldTrajectory:
    """RK4 for i u' = -Delta u + R(u), R the resonant right-hand side.

    R commutes with the degree-wise phases exp(-i t n(n+1)), so the variable
    w = exp(-i t Delta) u obeys the autonomous system i w' = R(w); RK4 runs
    on w with step dt/2 and the free phases are reapplied exactly.
    """
    h = dt / 2
    _guard(u0, h)
    nm = u0.nmax
    basis = basis_for(nm)
    deg, _ = degree_table(nm)
    lap = (deg * (deg + 1)).astype(float)
    times, origin = time_grid(T, dt, two_sided)
    w = np.empty((times.size, u0.coeffs.size), dtype=complex)
    w[origin] = u0.coeffs

    def f(y):
        return -1j * resonant_rhs_coeffs(y, basis)

    def march(direction: int, last: int):
        y = u0.coeffs.copy()
        s = direction * h
        i = origin
        while i != last:
            k1 = f(y)
            k2 = f(y + s / 2 * k1)
            k3 = f(y + s / 2 * k2)
            k4 = f(y + s * k3)
            y = y + s / 6 * (k1 + 2 * k2 + 2 * k3 + k4)
            i += direction
            if not np.all(np.isfinite(y)):
                raise IntegrationError(f"non-finite state at node {i}", i)
            w[i] = y

    march(+1, times.size - 1)
    if two_sided:
        march(-1, 0)
    coeffs = np.exp(-1j * times[:, None] * lap) * w
    meta = {"integrator": "rk4/interaction-picture", "system": "resonant", "T": T}
    return FieldTrajectory(nm, dt, times, coeffs, origin, meta)


# ---------------------------------------------------------------------------
# gauge transform and residuals

def gauge_transform(traj: FieldTrajectory) -> FieldTrajectory:
    """v(t) = exp(i t - 2 i t ||u(t)||^2) u(t)."""
    m = mass(traj.coeffs)
    phase = np.exp(1j * traj.times - 2j * traj.times * m)
    return traj.with_coeffs(traj.coeffs * phase[:, None], gauge="exp(it - 2it||u||^2)")


def standard_nls_residual(v: FieldTrajectory) -> np.ndarray:
    """||i v' + Delta v - Pi_N(|v|^2 v)||_{L2} at interior nodes.

    The time derivative is a central difference over neighbouring dt/2
    snapshots taken in the frame rotating with the free Laplacian flow, which
    removes the stiff linear phase from the differenced quantity.
    Returns an array aligned with ``v.times[1:-1]``.
    """
    nm = v.nmax
    basis = basis_for(nm)
    deg, _ = degree_table(nm)
    lap = (deg * (deg + 1)).astype(float)
    rot = np.exp(1j * v.times[:, None] * lap)
    y = rot * v.coeffs
    dy = (y[2:] - y[:-2]) / (2 * v.h)
    vals = basis.synthesize(v.coeffs[1:-1])
    cubic = basis.analyze(np.abs(vals) ** 2 * vals)
    res = 1j * dy / rot[1:-1] - cubic
    return np.linalg.norm(res, axis=-1)


# ---------------------------------------------------------------------------
# Duhamel integrals

def cumulative_integral(values: np.ndarray, h: float, origin: int) -> tuple[np.ndarray, bool]:
    """Integral from the origin node to every node of samples spaced by ``h``.

    Pairs of intervals form Simpson panels; odd offsets add a three-point
    rule over the first half of the next panel. Falls back to the trapezoid
    rule when a direction has fewer than three nodes. Returns (integral,
    used_fallback). Works on arrays with time as the leading axis.
    """
    values = np.asarray(values)
    out = np.zeros_like(values, dtype=np.result_type(values, float))
    fallback = False
    for direction in (+1, -1):
        idx = np.arange(origin, values.shape[0]) if direction > 0 else np.arange(origin, -1, -1)
        if idx.size < 2:
            continue
        f = values[idx]
        s = direction * h
        acc = np.zeros_like(out[idx])
        if idx.size < 3:
            fallback = True
            acc[1] = s / 2 * (f[0] + f[1])
        else:
            panels = (f[0:-2:2] + 4 * f[1:-1:2] + f[2::2]) * (s / 3)
            acc[2::2] = np.cumsum(panels, axis=0)
            # odd offsets: previous even value + int over [t_{2j}, t_{2j+1}]
            odd = np.arange(1, idx.size, 2)
            for j in odd:
                base = acc[j - 1]
                if j + 1 < idx.size:
                    acc[j] = base + s * (5 * f[j - 1] + 8 * f[j] - f[j + 1]) / 12
                else:
                    acc[j] = base + s * (-f[j - 2] + 8 * f[j - 1] + 5 * f[j]) / 12
        out[idx] = acc
    return out, fallback


def duhamel_trajectory(F: FieldTrajectory) -> FieldTrajectory:
    """I F(t) = int_0^t exp(-i (t - t') (-Delta + 1)) F(t') dt' at every node."""
    phase = free_phase(F.nmax, F.times)
    integral, fallback = cumulative_integral(F.coeffs / phase, F.h, F.origin)
    return F.with_coeffs(phase * integral, duhamel_rule="trapezoid" if fallback else "simpson")


def duhamel(F: FieldTrajectory, t_index: int) -> SpectralField:
    """Duhamel integral of ``F`` evaluated at node ``t_index``."""
    if not 0 <= t_index < F.nodes:
        raise IndexError(f"node {t_index} outside trajectory of {F.nodes} nodes")
    return duhamel_trajectory(F).field(t_index)


def trajectory_norms(traj: FieldTrajectory, s: float, mask: np.ndarray | None = None) -> np.ndarray:
    """H^s norm at each node (optionally restricted by a boolean mask)."""
    c = traj.coeffs if mask is None else traj.coeffs[mask]
    return np.sqrt(np.sum(lambda_sq_table(traj.nmax) ** s * np.abs(c) ** 2, axis=-1))
