"""
Random averaging operators and the colored/remainder decomposition.

For a dyadic shell N the operator H_n(t) on E_n (N/2 < n <= N) propagates

    i b' = lambda_n^2 b + 2 pi_n(b * V),   V = |u_{N/2}|^2 - ||u_{N/2}||^2,

from b(0) = identity. Matrices are stored with the output coordinate first,
``H[k, l] = <H(t) b_l | b_k>``, and factored as H(t) = exp(-i t lambda_n^2) W(t)
where W solves W' = -2 i P(t) W with P(t) the (real symmetric) matrix of
f -> pi_n(f V(t)).

The colored field of a shell is psi_N(t) = sum_n c_n H_n(t) e_n and the
remainder w_N solves the Duhamel fixed point that makes
u_{N/2} + psi_N + w_N the Galerkin solution at truncation N.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping

import numpy as np
from scipy import stats

from .dynamics import (
    FieldTrajectory,
    StabilityError,
    duhamel_trajectory,
    evolve_nls,
    evolve_nls_batch,
    free_evolution,
    time_grid,
    trajectory_norms,
)
from .fields import SpectralField, project_coeffs, resize
from .harmonics import basis_for, eigenspace_dim, eigenvalue_sq, ncoeffs
from .nonlinear import degreewise_multiply, trilinear_values, wick_cubic_values, wick_values
from .rnorms import TimeWindow, bump_chi, bump_transform, norm_report, sn_operator_norm, x_norm
from .stochastic import GaussianStream, degree_gaussians, phi_alpha_coeffs, sample_phi_alpha

UNITARITY_TOL = 1e-6

#: representative exponents used by every diagnostic report
DIAGNOSTIC_PARAMS = {"q": 8.0, "gamma": 0.9, "gamma1": 0.92, "b": 0.55, "delta": 0.01}


def _check_shell(N: int) -> None:
    if N < 1 or N & (N - 1):
        raise ValueError(f"shell index must be dyadic, got {N}")


def shell_degrees(N: int) -> range:
    """Degrees of the dyadic shell N: N/2 < n <= N (n <= 1 for N = 1)."""
    _check_shell(N)
    return range(0, 2) if N == 1 else range(N // 2 + 1, N + 1)


# ---------------------------------------------------------------------------
# potentials and the matrix ODE

def potential_values(u_half: FieldTrajectory, N: int) -> np.ndarray:
    """|u|^2 - ||u||^2 on the grid of ``basis_for(N)`` at every node."""
    basis = basis_for(N)
    vals = basis.synthesize(resize(u_half.coeffs, N))
    dens = np.abs(vals) ** 2
    return dens - basis.grid.integrate(dens)[:, None, None]


def potential_matrices(u_half: FieldTrajectory, n: int, N: int, chunk: int = 64) -> np.ndarray:
    """Matrices of f -> pi_n(f V(t)) on E_n at every node, shape (M, 2n+1, 2n+1)."""
    basis = basis_for(N)
    out = np.empty((u_half.nodes, 2 * n + 1, 2 * n + 1))
    for start in range(0, u_half.nodes, chunk):
        sl = slice(start, start + chunk)
        vals = basis.synthesize(resize(u_half.coeffs[sl], N))
        dens = np.abs(vals) ** 2
        pot = dens - basis.grid.integrate(dens)[:, None, None]
        out[sl] = basis.multiplication_matrix(pot, n)
    return out


@dataclass(frozen=True, eq=False)
class RaoTrajectory:
    """Operators H_n(t) for every degree of one shell on a dynamics time grid.

    ``interaction[n]`` holds W_n(t) = exp(i t lambda_n^2) H_n(t), shape
    (nodes, 2n+1, 2n+1).
    """

    N: int
    dt: float
    times: np.ndarray = field(repr=False)
    origin: int
    interaction: Mapping[int, np.ndarray] = field(repr=False)
    meta: dict = field(default_factory=dict, repr=False)

    @property
    def degrees(self) -> list[int]:
        return sorted(self.interaction)

    def H(self, n: int) -> np.ndarray:
        phase = np.exp(-1j * eigenvalue_sq(n) * self.times)
        return phase[:, None, None] * self.interaction[n]

    def unitarity_defect(self, n: int | None = None) -> float:
        """max_t ||H H* - I||_F (over one degree or the whole shell)."""
        worst = 0.0
        for m in self.degrees if n is None else [n]:
            W = self.interaction[m]
            eye = np.eye(W.shape[-1])
            rows = np.linalg.norm(W @ np.conj(np.swapaxes(W, 1, 2)) - eye, axis=(1, 2))
            cols = np.linalg.norm(np.conj(np.swapaxes(W, 1, 2)) @ W - eye, axis=(1, 2))
            worst = max(worst, float(rows.max()), float(cols.max()))
        return worst


def _hermite_midpoints(W: np.ndarray, dW: np.ndarray, idx: np.ndarray, step: float) -> np.ndarray:
    """Cubic Hermite values halfway between consecutive entries of ``idx``."""
    a, b = idx[:-1], idx[1:]
    return 0.5 * (W[a] + W[b]) + (step / 8.0) * (dW[a] - dW[b])


def rao_solve(n: int, N: int, u_half: FieldTrajectory, T: float | None = None,
              dt: float | None = None, tol: float = UNITARITY_TOL) -> np.ndarray:
    """Interaction-picture propagator W_n(t) for one degree of shell N.

    RK4 runs over integer steps (node spacing 2 on the dt/2 grid) using the
    potential at both ends and the midpoint node; half-step nodes are filled
    by cubic Hermite interpolation from the RK4 values and derivatives.
    Raises :class:`StabilityError` if the unitarity defect exceeds 10 * tol.
    """
    _check_shell(N)
    if n not in shell_degrees(N):
        raise ValueError(f"degree {n} is not in shell {N}")
    if u_half.nmax > max(N // 2, 1) and np.any(project_coeffs(u_half.coeffs, "Pi_N_perp", max(N // 2, 1))):
        raise ValueError("driving field carries degrees above N/2")
    if dt is not None and not math.isclose(dt, u_half.dt, rel_tol=1e-12):
        raise ValueError("dt does not match the driving trajectory")
    if T is not None and (u_half.times[-1] < T - 1e-12):
        raise ValueError("driving trajectory does not cover [0, T]")
    P = potential_matrices(u_half, n, N)
    d = 2 * n + 1
    W = np.empty((u_half.nodes, d, d), dtype=complex)
    o = u_half.origin
    W[o] = np.eye(d)
    step_len = u_half.dt

    def rhs(Pm, Y):
        return -2j * (Pm @ Y)

    for direction in (+1, -1):
        idx = np.arange(o, u_half.nodes, 2) if direction > 0 else np.arange(o, -1, -2)
        s = direction * step_len
        for a, b in zip(idx[:-1], idx[1:]):
            mid = (a + b) // 2
            Y = W[a]
            k1 = rhs(P[a], Y)
            k2 = rhs(P[mid], Y + s / 2 * k1)
            k3 = rhs(P[mid], Y + s / 2 * k2)
            k4 = rhs(P[b], Y + s * k3)
            W[b] = Y + s / 6 * (k1 + 2 * k2 + 2 * k3 + k4)
        if idx.size > 1:
            dW = np.zeros_like(W)
            dW[idx] = -2j * (P[idx] @ W[idx])
            W[(idx[:-1] + idx[1:]) // 2] = _hermite_midpoints(W, dW, idx, s)
    defect = np.linalg.norm(W @ np.conj(np.swapaxes(W, 1, 2)) - np.eye(d), axis=(1, 2)).max()
    if defect > 10 * tol:
        raise StabilityError(
            f"unitarity defect {defect:.3g} for degree {n} exceeds {10 * tol:.1g}; reduce dt",
            u_half.dt / 2,
        )
    return W


def rao_shell(N: int, u_half: FieldTrajectory, degrees=None, tol: float = UNITARITY_TOL) -> RaoTrajectory:
    """Solve the operator ODE for every degree of shell N (or the given subset)."""
    degrees = list(shell_degrees(N) if degrees is None else degrees)
    mats = {n: rao_solve(n, N, u_half, tol=tol) for n in degrees}
    out = RaoTrajectory(N, u_half.dt, u_half.times, u_half.origin, mats,
                        {"integrator": "rk4/interaction-picture+hermite"})
    out.meta["unitarity_defect"] = out.unitarity_defect()
    return out


def free_rao(N: int, times: np.ndarray, dt: float, origin: int) -> RaoTrajectory:
    """Operators of a vanishing potential: W = identity."""
    mats = {n: np.broadcast_to(np.eye(2 * n + 1, dtype=complex), (times.size, 2 * n + 1, 2 * n + 1)).copy()
            for n in shell_degrees(N)}
    return RaoTrajectory(N, dt, times, origin, mats, {"integrator": "free"})


# ---------------------------------------------------------------------------
# colored fields and the Wick / law checks

def shell_weights(N: int, alpha: float, weighting: str = "eigenvalue") -> dict[int, float]:
    """Per-degree factors multiplying H_n e_n.

    ``eigenvalue``: lambda_n^{-(alpha - 1/2)}.
    ``canonical``: lambda_n^{-alpha} sqrt(2n+1), so that with e_n normalized
    by 1/sqrt(2n+1) the shell at t = 0 equals the degree blocks of phi_alpha.
    """
    if weighting == "eigenvalue":
        return {n: eigenvalue_sq(n) ** (-(alpha - 0.5) / 2) for n in shell_degrees(N)}
    if weighting == "canonical":
        return {n: eigenvalue_sq(n) ** (-alpha / 2) * math.sqrt(2 * n + 1) for n in shell_degrees(N)}
    raise ValueError(f"unknown weighting {weighting!r}")


def shell_inputs(phi: SpectralField, N: int, alpha: float) -> dict[int, np.ndarray]:
    """Normalized E_n samples e_n = lambda_n^alpha pi_n phi / sqrt(2n+1) of a shell.

    For phi drawn by :func:`~sphere_nls.stochastic.sample_phi_alpha` these are
    the Gaussians of degree n over sqrt(2n+1), and canonical weights map them
    back to pi_n phi.
    """
    return {n: phi.degree_block(n) * eigenvalue_sq(n) ** (alpha / 2) / math.sqrt(2 * n + 1)
            for n in shell_degrees(N)}


def _block(e) -> np.ndarray:
    return e.coeffs[-(2 * e.nmax + 1):] if isinstance(e, SpectralField) else np.asarray(e, dtype=complex)


def colored_field(rao: RaoTrajectory, e_inputs: Mapping[int, object], alpha: float,
                  weighting: str = "eigenvalue", nmax: int | None = None) -> FieldTrajectory:
    """psi_N(t) = sum_n c_n H_n(t) e_n as a trajectory of degree ``nmax`` (default N).

    ``e_inputs`` maps each degree of the shell to its E_n sample, either a
    2n+1 coefficient block or a field whose top degree is n (as returned by
    :func:`~sphere_nls.stochastic.sample_e_n` with nmax = n).
    """
    expected = set(rao.degrees)
    if set(e_inputs) != expected:
        raise ValueError(f"inputs cover degrees {sorted(e_inputs)}, shell has {sorted(expected)}")
    nmax = rao.N if nmax is None else nmax
    weights = shell_weights(rao.N, alpha, weighting)
    out = np.zeros((rao.times.size, ncoeffs(nmax)), dtype=complex)
    for n in rao.degrees:
        e = _block(e_inputs[n])
        if e.shape != (2 * n + 1,):
            raise ValueError(f"E_{n} input has shape {e.shape}")
        out[:, n * n : (n + 1) ** 2] = weights[n] * (rao.H(n) @ e)
    return FieldTrajectory(nmax, rao.dt, rao.times, out, rao.origin,
                           {"kind": "colored", "N": rao.N, "alpha": alpha, "weighting": weighting})


def wick_cancellation_terms(H: np.ndarray, g: np.ndarray, n: int) -> dict[str, np.ndarray]:
    """Both sides of the Wick-cancellation identity on the grid of degree n.

    ``H`` is one (2n+1)^2 matrix, ``g`` the Gaussians of E_n (e_n = g / sqrt(2n+1)).
    """
    basis = basis_for(max(n, 1))
    b = basis.degree_values(n)  # (2n+1, lat, lon), real
    d = 2 * n + 1
    B = np.einsum("kl,kxy->lxy", H, b)  # B_l(x) = sum_k H_kl b_k(x)
    e_vals = np.einsum("l,lxy->xy", g, B) / math.sqrt(d)
    lhs = np.abs(e_vals) ** 2 - np.sum(np.abs(H @ g) ** 2) / d
    mask = 1.0 - np.eye(d)
    gg = np.outer(g, np.conj(g)) * mask
    off = np.einsum("lm,lxy,mxy->xy", gg, B, np.conj(B)) / d
    excess = np.abs(g) ** 2 - 1.0
    diag = np.einsum("l,lxy->xy", excess, np.abs(B) ** 2) / d
    const = -np.sum(excess) / d
    return {"lhs": lhs, "offdiagonal": off, "diagonal": diag, "constant": const}


def wick_cancellation_residual(rao: RaoTrajectory, n: int, g: np.ndarray, t_index: int) -> float:
    """max_x |lhs - rhs| of the Wick-cancellation identity at one node."""
    H = rao.H(n)[t_index]
    terms = wick_cancellation_terms(H, np.asarray(g, dtype=complex), n)
    rhs = terms["offdiagonal"] + terms["diagonal"] + terms["constant"]
    return float(np.max(np.abs(terms["lhs"] - rhs)))


@dataclass
class LawReport:
    n: int
    N: int
    t: float
    samples: int
    mean_max: float
    mean_bound: float
    cov_diag_dev: float
    cov_bound: float
    cov_offdiag_max: float
    ks_stat: float
    ks_critical: float
    ks_pvalue: float

    @property
    def passed(self) -> bool:
        return (self.mean_max < self.mean_bound and self.cov_diag_dev < self.cov_bound
                and self.ks_stat < self.ks_critical)

    def to_dict(self) -> dict:
        d = dict(self.__dict__)
        d["passed"] = self.passed
        return d


def law_invariance_stat(n: int, N: int, t: float, samples: int, *, alpha: float = 1.5,
                        master_seed: int = 0, dt: float = 1e-3, zero_potential: bool = False,
                        point: tuple[int, int] = (3, 5), chunk: int = 250) -> LawReport:
    """Empirical check that H_n(t) e_n has the law of e_n.

    Sample i drives the operator with u_{N/2} evolved from the degree <= N/2
    Gaussians of stream (master_seed, i) and applies it to the degree-n
    Gaussians of the same stream, which are independent by the stream
    layout. Coordinates sqrt(2n+1) * e_n^N(t) are compared to N(0, I) through
    their mean and covariance; |e_n^N(t, x0)|^2 is compared by a two-sample
    Kolmogorov-Smirnov test with an independent t = 0 ensemble drawn from
    streams (master_seed, samples + i).
    """
    if samples < 200:
        raise ValueError(f"law test needs at least 200 samples, got {samples}")
    if n not in shell_degrees(N):
        raise ValueError(f"degree {n} is not in shell {N}")
    half = max(N // 2, 1)
    steps = int(round(t / dt))
    if t > 0 and abs(steps * dt - t) > 1e-9:
        raise ValueError("t must be a multiple of dt")
    basis = basis_for(n)
    b0 = basis.degree_values(n)[:, point[0], point[1]]
    d = 2 * n + 1
    z = np.empty((samples, d), dtype=complex)
    for i in range(samples):
        z[i] = degree_gaussians(GaussianStream(master_seed, i), n)
    phase = np.exp(-1j * eigenvalue_sq(n) * t)
    if t == 0 or zero_potential:
        z *= phase
    else:
        times, _ = time_grid(t, dt, two_sided=False)
        for start in range(0, samples, chunk):
            idx = range(start, min(start + chunk, samples))
            data = np.stack([phi_alpha_coeffs(GaussianStream(master_seed, i), alpha, half) for i in idx])
            states = evolve_nls_batch(data, half, t, dt)
            for j, i in enumerate(idx):
                u = FieldTrajectory(half, dt, times, states[:, j], 0)
                z[i] = phase * (rao_solve(n, N, u)[-1] @ z[i])
    ref = np.empty(samples)
    for i in range(samples):
        g0 = degree_gaussians(GaussianStream(master_seed, samples + i), n)
        ref[i] = abs(g0 @ b0) ** 2 / d
    mean = z.mean(axis=0)
    cov = (z.T @ np.conj(z)) / samples
    pointwise = np.abs(z @ b0) ** 2 / d
    ks = stats.ks_2samp(pointwise, ref)
    return LawReport(
        n=n, N=N, t=t, samples=samples,
        mean_max=float(np.max(np.abs(np.concatenate([mean.real, mean.imag])))),
        mean_bound=5.0 / math.sqrt(samples),
        cov_diag_dev=float(np.max(np.abs(np.real(np.diag(cov)) - 1.0))),
        cov_bound=5.0 * math.sqrt(2.0 / samples),
        cov_offdiag_max=float(np.max(np.abs(cov - np.diag(np.diag(cov))))),
        ks_stat=float(ks.statistic), ks_critical=1.628 * math.sqrt(2.0 / samples),
        ks_pvalue=float(ks.pvalue),
    )


# ---------------------------------------------------------------------------
# remainder fixed point

@dataclass
class RemainderResult:
    w: FieldTrajectory
    residual: float
    iterations: int
    converged: bool
    diverged: bool = False
    iterate_norms: list = field(default_factory=list)
    residuals: list = field(default_factory=list)

    def to_dict(self) -> dict:
        return {"residual": self.residual, "iterations": self.iterations, "converged": self.converged,
                "diverged": self.diverged, "iterate_norms": self.iterate_norms,
                "residuals": self.residuals}


def _sup_l2(c: np.ndarray) -> float:
    return float(np.max(np.linalg.norm(c, axis=-1))) if c.size else 0.0


class RemainderSource:
    """Right-hand side of the remainder equation for fixed (u, psi).

    ``compact``: Pi_N N(u + psi + w) - Pi_{N/2} N(u) - 2 N_(0,1)(psi, u, u).
    ``split``: the same quantity written as
    2 N_(0,1)(w,u,u) + 2 N_[0,1](v,u,u) + Pi_N[N(u,v,u) + 2 N(v,v,u) + N(v,u,v) + N(v)]
    + P_N N(u), v = psi + w; the two agree to roundoff.
    """

    def __init__(self, N: int, psi: np.ndarray, u: np.ndarray):
        if N < 2:
            raise ValueError("the remainder equation starts at shell 2")
        self.N = N
        self.half = N // 2
        self.basis = basis_for(N)
        self.psi = psi
        self.u = u
        self.u_vals = self.basis.synthesize(u)
        self.psi_vals = self.basis.synthesize(psi)
        grid = self.basis.grid
        self.wick_uu = wick_values(self.u_vals, self.u_vals, grid)
        nu = self.basis.analyze(wick_cubic_values(self.u_vals, grid), N)
        self.nu_low = project_coeffs(nu, "Pi_N", self.half)
        self.sing_psi = degreewise_multiply(psi, self.wick_uu, self.basis)

    def compact(self, w: np.ndarray) -> np.ndarray:
        vals = self.u_vals + self.psi_vals + self.basis.synthesize(w)
        full = self.basis.analyze(wick_cubic_values(vals, self.basis.grid), self.N)
        return full - self.nu_low - 2.0 * self.sing_psi

    def split(self, w: np.ndarray) -> np.ndarray:
        grid = self.basis.grid
        an = lambda vals: self.basis.analyze(vals, self.N)  # noqa: E731
        uv = self.u_vals
        v = self.psi + w
        vv = self.basis.synthesize(v)
        sing_w = degreewise_multiply(w, self.wick_uu, self.basis)
        sing_v = self.sing_psi + sing_w
        nonsing_v = an(trilinear_values(vv, uv, uv, grid)) - sing_v
        rest = an(trilinear_values(uv, vv, uv, grid) + 2.0 * trilinear_values(vv, vv, uv, grid)
                  + trilinear_values(vv, uv, vv, grid) + wick_cubic_values(vv, grid))
        shell = project_coeffs(an(wick_cubic_values(uv, grid)), "P_N", self.N)
        return 2.0 * sing_w + 2.0 * nonsing_v + rest + shell


def remainder_solve(N: int, psi: FieldTrajectory, u_half: FieldTrajectory, T: float | None = None,
                    chi_T: float | None = None, *, tol: float = 1e-9, max_iter: int = 40,
                    assembly: str = "compact") -> RemainderResult:
    """Picard iteration w <- -i I[RHS(w)] (times chi_T if a cutoff width is given).

    ``T`` is only checked against the trajectory span. Iteration stops when
    the sup-in-time L2 distance of successive iterates drops below ``tol``,
    after ``max_iter`` iterations, or when that distance grows three times in
    a row (reported as divergence, not raised).
    """
    _check_shell(N)
    if psi.times.shape != u_half.times.shape or not np.allclose(psi.times, u_half.times):
        raise ValueError("psi and u_half live on different time grids")
    if T is not None and psi.times[-1] < T - 1e-12:
        raise ValueError("trajectories do not cover [0, T]")
    half = N // 2
    u = resize(u_half.coeffs, N)
    if np.any(project_coeffs(u, "Pi_N_perp", half)):
        raise ValueError("u_half carries degrees above N/2")
    source = RemainderSource(N, resize(psi.coeffs, N), u)
    rhs = {"compact": source.compact, "split": source.split}[assembly]
    cut = None if chi_T is None else bump_chi(psi.times, chi_T)[:, None]
    template = psi.resized(N) if psi.nmax != N else psi
    w = np.zeros_like(source.psi)
    residuals, norms = [], []
    converged = diverged = False
    it = 0
    for it in range(1, max_iter + 1):
        F = template.with_coeffs(rhs(w))
        new = -1j * duhamel_trajectory(F).coeffs
        if cut is not None:
            new = cut * new
        res = _sup_l2(new - w)
        w = new
        residuals.append(res)
        norms.append(_sup_l2(w))
        if res < tol:
            converged = True
            break
        if len(residuals) >= 4 and all(residuals[-j] > residuals[-j - 1] for j in (1, 2, 3)):
            diverged = True
            break
    traj = template.with_coeffs(w, kind="remainder", N=N, cutoff=chi_T)
    return RemainderResult(traj, residuals[-1] if residuals else 0.0, it, converged, diverged,
                           norms, residuals)


# ---------------------------------------------------------------------------
# extended operators and Loc(N)-type diagnostics

def extended_operators(rao: RaoTrajectory, n: int, T: float) -> dict[str, np.ndarray]:
    """Twisted forms of the extended operators on [-2T, 2T] with W frozen beyond |t| = T.

    Returns the time grid and, for |t| < 2T where chi = 1,
    ``h_tw = exp(i t lambda^2) h(t) = chi_2T (W - I)`` and
    ``g_tw = exp(-i t lambda^2) g(t) = (I + chi_2T (W - I))^{-1} - I``.
    The full operators add chi(t) I to these twisted parts.
    """
    h = rao.dt / 2
    k_T = int(round(T / h))
    o = rao.origin
    if o - k_T < 0 or o + k_T >= rao.times.size:
        raise ValueError("operator trajectory does not cover [-T, T]")
    times = h * np.arange(-2 * k_T, 2 * k_T + 1)
    src = np.clip(np.arange(-2 * k_T, 2 * k_T + 1), -k_T, k_T) + o
    W = rao.interaction[n][src]
    d = W.shape[-1]
    eye = np.eye(d)
    c2 = bump_chi(times, 2 * T)[:, None, None]
    h_tw = c2 * (W - eye)
    g_tw = np.linalg.inv(eye + h_tw) - eye
    return {"times": times, "h_tw": h_tw, "g_tw": g_tw}


def operator_norms(rao: RaoTrajectory, n: int, T: float, q: float, gamma: float,
                   seed: int = 0, padding: int = 8) -> dict[str, dict]:
    """S-type norms of h, H (plain) and g, G (starred) for one degree."""
    ext = extended_operators(rao, n, T)
    window = TimeWindow.build(ext["times"], 2 * T, padding, fine_support=2.0)
    chi_hat = bump_transform(window.kappa, 1.0)
    out = {}
    for name, key, variant, static in (("h", "h_tw", "plain", None), ("H", "h_tw", "plain", chi_hat),
                                       ("g", "g_tw", "star", None), ("G", "g_tw", "star", chi_hat)):
        out[name] = sn_operator_norm(ext[key], n, q, gamma, window, variant, static, seed,
                                     pretwisted=True)
    return out


def _lq_time(values: np.ndarray, h: float, q: float) -> float:
    return float((np.sum(values**q) * h) ** (1.0 / q))


def colored_diagnostics(psi: FieldTrajectory, T: float, q: float, gamma: float) -> dict:
    """L^q_t L^inf_x of psi and of its degree-wise Wick square, and X^{0,gamma}_{q,q,inf}."""
    basis = basis_for(max(psi.nmax, 1))
    vals = basis.synthesize(psi.coeffs)
    sup = np.abs(vals).reshape(psi.nodes, -1).max(axis=1)
    hexa = np.zeros(vals.shape)
    lo = min(n for n in range(psi.nmax + 1) if np.any(psi.coeffs[:, n * n : (n + 1) ** 2])) \
        if np.any(psi.coeffs) else 0
    for n in range(lo, psi.nmax + 1):
        blk = project_coeffs(psi.coeffs, "pi_n", n)
        if not np.any(blk):
            continue
        dens = np.abs(basis.synthesize(blk)) ** 2
        hexa += dens - np.sum(np.abs(blk) ** 2, axis=1)[:, None, None]
    hex_sup = np.abs(hexa).reshape(psi.nodes, -1).max(axis=1)
    window = TimeWindow.build(psi.times, T)
    xn = x_norm(psi, 0.0, gamma, q, q, np.inf, window, cutoff=False)
    return {"LqLinf": _lq_time(sup, psi.h, q), "hexagon_LqLinf": _lq_time(hex_sup, psi.h, q),
            "X_0_gamma_qqinf": xn}


def remainder_diagnostics(w: FieldTrajectory, M: int, T: float, b: float) -> dict:
    window = TimeWindow.build(w.times, T)
    xb = x_norm(w, 0.0, b, 2, 2, 2, window, cutoff=False)
    perp = project_coeffs(w.coeffs, "Pi_N_perp", 2 * M) if w.nmax > 2 * M else np.zeros(0)
    tail = 0.0 if perp.size == 0 or not np.any(perp) else x_norm(
        w.with_coeffs(perp), 0.0, b, 2, 2, 2, window, cutoff=False)
    return {"X_0_b": xb, "X_0_b_tail_2M": tail}


# ---------------------------------------------------------------------------
# the ladder

@dataclass
class ShellRecord:
    M: int
    psi: FieldTrajectory
    w: FieldTrajectory
    rao: RaoTrajectory | None
    diagnostics: dict = field(default_factory=dict)


@dataclass
class AnsatzRecord:
    """Shells M = 1, 2, 4, ... of the ladder with their diagnostics."""

    alpha: float
    T: float
    dt: float
    seed: int
    phi: SpectralField
    shells: list = field(default_factory=list)
    complete: bool = True
    failure: str | None = None
    params: dict = field(default_factory=lambda: dict(DIAGNOSTIC_PARAMS))

    @property
    def N(self) -> int:
        return self.shells[-1].M if self.shells else 0

    def reconstruction(self, upto: int | None = None) -> FieldTrajectory:
        """sum over shells M <= upto of psi_M + w_M."""
        shells = [s for s in self.shells if upto is None or s.M <= upto]
        top = max(s.M for s in shells)
        total = None
        for s in shells:
            part = (s.psi + s.w).resized(top)
            total = part if total is None else total + part
        return total

    def reconstruction_error(self, direct: FieldTrajectory, upto: int | None = None,
                             half_width: float | None = None) -> float:
        """sup over |t| <= half_width (default T/2) of ||direct - reconstruction||_{L2}."""
        rec = self.reconstruction(upto)
        half_width = self.T / 2 if half_width is None else half_width
        mask = rec.window_mask(half_width)
        if direct.times.shape != rec.times.shape or not np.allclose(direct.times, rec.times):
            raise ValueError("direct solution lives on a different time grid")
        nm = max(direct.nmax, rec.nmax)
        diff = resize(direct.coeffs[mask], nm) - resize(rec.coeffs[mask], nm)
        return _sup_l2(diff)

    def diagnostics_table(self) -> list[dict]:
        return [{"M": s.M, **s.diagnostics} for s in self.shells]

    def save(self, directory: str | Path) -> Path:
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        for s in self.shells:
            s.psi.save(directory / f"shell_{s.M:03d}" / "psi")
            s.w.save(directory / f"shell_{s.M:03d}" / "w")
        manifest = {"alpha": self.alpha, "T": self.T, "dt": self.dt, "seed": self.seed,
                    "complete": self.complete, "failure": self.failure, "params": self.params,
                    "shells": self.diagnostics_table()}
        (directory / "diagnostics.json").write_text(json.dumps(manifest, indent=2, default=float))
        return directory


class LadderDivergence(RuntimeError):
    pass


def ansatz_ladder(alpha: float, N_final: int, T: float, seed: int = 0, *, dt: float = 1e-3,
                  phi: SpectralField | None = None, diagnostics: bool = True,
                  sn_degrees: str = "top", picard_tol: float = 1e-9) -> AnsatzRecord:
    """Run the shell-by-shell construction up to ``N_final`` on [-T, T].

    Base case: u_1 is the truncation-1 solution; psi_1 = chi_T times the free
    evolution of Pi_1 phi and w_1 = chi_T u_1 - psi_1. For each next shell
    2N the operators are driven by the cut-off field u_N built so far,
    psi_2N = chi_T sum_n H_n P_n phi (canonical weights), w_2N solves the
    cut-off remainder equation, and u_2N = u_N + psi_2N + w_2N. On
    |t| <= T/2 the cutoffs are inactive and u_2N is the Galerkin solution.

    ``sn_degrees``: ``"top"`` measures operator norms at n = M only,
    ``"all"`` at every degree of the shell.
    """
    _check_shell(N_final)
    if N_final > 32:
        raise ValueError("ladder is limited to N_final <= 32")
    if phi is None:
        phi = sample_phi_alpha(GaussianStream(seed, 0), alpha, N_final)
    phi = phi.resized(N_final)
    q, gamma, b = DIAGNOSTIC_PARAMS["q"], DIAGNOSTIC_PARAMS["gamma"], DIAGNOSTIC_PARAMS["b"]
    record = AnsatzRecord(alpha, T, dt, seed, phi)
    times, origin = time_grid(T, dt, two_sided=True)
    chi = bump_chi(times, T)[:, None]

    base_phi = phi.resized(1)
    u1 = evolve_nls(base_phi, 1, T, dt, two_sided=True)
    psi1 = FieldTrajectory(1, dt, times, chi * free_evolution(base_phi, times), origin,
                           {"kind": "colored", "N": 1})
    w1 = psi1.with_coeffs(chi * u1.coeffs - psi1.coeffs, kind="remainder", N=1)
    shell = ShellRecord(1, psi1, w1, None)
    if diagnostics:
        shell.diagnostics.update(_shell_diagnostics(shell, T, q, gamma, b, seed, sn_degrees))
    record.shells.append(shell)
    u_dag = psi1 + w1

    M = 2
    while M <= N_final:
        rao = rao_shell(M, u_dag)
        e_inputs = shell_inputs(phi, M, alpha)
        psi = colored_field(rao, e_inputs, alpha, weighting="canonical")
        psi = psi.with_coeffs(chi * psi.coeffs, cutoff=T)
        rem = remainder_solve(M, psi, u_dag, T, chi_T=T, tol=picard_tol)
        shell = ShellRecord(M, psi, rem.w, rao, {"picard": rem.to_dict(),
                                                  "unitarity_defect": rao.meta["unitarity_defect"]})
        if rem.diverged:
            record.shells.append(shell)
            record.complete = False
            record.failure = f"remainder iteration diverged at shell {M}"
            return record
        if diagnostics:
            shell.diagnostics.update(_shell_diagnostics(shell, T, q, gamma, b, seed, sn_degrees))
        record.shells.append(shell)
        u_dag = u_dag.resized(M) + psi + rem.w
        M *= 2
    return record


def _shell_diagnostics(shell: ShellRecord, T: float, q: float, gamma: float, b: float,
                       seed: int, sn_degrees: str) -> dict:
    diag = {"psi": colored_diagnostics(shell.psi, T, q, gamma),
            "w": remainder_diagnostics(shell.w, shell.M, T, b)}
    if shell.rao is not None:
        degs = shell.rao.degrees if sn_degrees == "all" else [shell.rao.degrees[-1]]
        ops = {}
        for n in degs:
            ops[str(n)] = {k: v["value"] for k, v in operator_norms(shell.rao, n, T, q, gamma, seed).items()}
        diag["operators"] = ops
        diag["operator_estimator"] = "lower_bound"
    return diag


def diagnostics_reports(record: AnsatzRecord) -> list[dict]:
    """Flatten ladder diagnostics into NormReport rows."""
    rows = []
    p = record.params
    for s in record.shells:
        d = s.diagnostics
        if "psi" in d:
            for key, val in d["psi"].items():
                rows.append(norm_report(f"psi.{key}", val, "quadrature", record.seed, M=s.M, q=p["q"],
                                        gamma=p["gamma"], T=record.T))
        if "w" in d:
            for key, val in d["w"].items():
                rows.append(norm_report(f"w.{key}", val, "quadrature", record.seed, M=s.M, b=p["b"],
                                        T=record.T))
        for n, ops in d.get("operators", {}).items():
            for key, val in ops.items():
                rows.append(norm_report(f"S.{key}", val, "lower_bound", record.seed, M=s.M, n=int(n),
                                        q=p["q"], gamma=p["gamma"], T=record.T))
    return rows


# ---------------------------------------------------------------------------
# one-sided shell decomposition used by the trend experiments

def shell_decomposition(phi: SpectralField, alpha: float, N: int, T: float, dt: float, *,
                        direct: Mapping[int, FieldTrajectory] | None = None,
                        tol: float = 1e-9) -> dict:
    """psi_N and w_N on [0, T] driven by the Galerkin solution at N/2.

    ``direct`` may carry precomputed truncation-N/2 and truncation-N solves
    keyed by truncation. Returns psi, w, the Picard report and the
    consistency defect ||u_N - u_{N/2} - psi_N - w_N||_{L^inf_T L^2}.
    """
    _check_shell(N)
    if N < 2:
        raise ValueError("shell decomposition needs N >= 2")
    direct = dict(direct or {})
    for m in (N // 2, N):
        if m not in direct:
            direct[m] = evolve_nls(phi, m, T, dt)
    u_half, u_N = direct[N // 2], direct[N]
    rao = rao_shell(N, u_half)
    psi = colored_field(rao, shell_inputs(phi, N, alpha), alpha, weighting="canonical")
    rem = remainder_solve(N, psi, u_half, T, tol=tol)
    defect = _sup_l2(resize(u_N.coeffs, N) - resize(u_half.coeffs, N) - psi.coeffs - rem.w.coeffs)
    return {"psi": psi, "w": rem.w, "picard": rem, "rao": rao, "defect": defect}


def hs_sup(traj: FieldTrajectory, s: float) -> float:
    return float(np.max(trajectory_norms(traj, s)))
