"""
Fourier-restriction norms of trajectories and of operator-valued paths,
the time cutoff, and empirical probes of eigenfunction estimates.

Conventions
-----------
``F_hat(tau) = int F(t) exp(-i t tau) dt`` and the twisted transform of the
degree-n part is ``F~_n(kappa) = FT[exp(i t lambda_n^2) pi_n F(t)](kappa)``,
so a free wave ``exp(-i t lambda_n^2) g`` sits at kappa = 0. Integrals in
kappa carry the measure ``dkappa / (2 pi)``, which makes the (2,2,2) norm with
zero weights equal to the time-domain L2 norm.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .dynamics import FieldTrajectory
from .harmonics import basis_for, eigenvalue_sq
from .stochastic import GaussianStream, degree_gaussians, sample_complex_gaussians


def bump_chi(t, T: float = 1.0):
    """Smooth cutoff: 1 on |t| <= T/2, 0 on |t| >= T.

    In between, exp(1 - 1/(1 - rho^2)) with rho = 2|t|/T - 1 running over
    [0, 1); every derivative vanishes at both seams.
    """
    if not T > 0:
        raise ValueError("cutoff width T must be positive")
    s = np.abs(np.asarray(t, dtype=float)) / T
    rho = 2.0 * s - 1.0
    with np.errstate(divide="ignore", over="ignore", invalid="ignore"):
        bridge = np.exp(1.0 - 1.0 / (1.0 - rho**2))
    out = np.where(s <= 0.5, 1.0, np.where(s >= 1.0, 0.0, bridge))
    return float(out) if np.ndim(out) == 0 else out


def bump_transform(kappa: np.ndarray, T: float = 1.0, nodes: int = 2048) -> np.ndarray:
    """chi_T_hat(kappa) by Gauss-Legendre quadrature on [0, T/2] and [T/2, T]."""
    x, w = np.polynomial.legendre.leggauss(nodes)
    kappa = np.asarray(kappa, dtype=float)
    total = np.zeros(kappa.shape)
    for a, b in ((0.0, T / 2), (T / 2, T)):
        t = 0.5 * (b - a) * x + 0.5 * (a + b)
        wt = 0.5 * (b - a) * w * bump_chi(t, T)
        # chi is even: transform = 2 int_0^T chi cos
        for chunk in np.array_split(np.arange(kappa.size), max(1, kappa.size // 512)):
            total.flat[chunk] += 2.0 * np.cos(np.outer(kappa.flat[chunk], t)) @ wt
    return total


def japanese(kappa: np.ndarray) -> np.ndarray:
    return np.sqrt(1.0 + np.asarray(kappa) ** 2)


def _trapezoid_weights(x: np.ndarray) -> np.ndarray:
    w = np.zeros_like(x)
    d = np.diff(x)
    w[:-1] += d / 2
    w[1:] += d / 2
    return w


@dataclass(frozen=True, eq=False)
class TimeWindow:
    """Cutoff samples on a trajectory grid plus the kappa quadrature.

    The kappa grid is uniform with spacing ``2 pi / (padding * 2T)`` over the
    band |kappa| <= pi / h resolved by the time step. If ``fine_support`` is
    given, the region |kappa| <= ``fine_band`` is additionally sampled with
    spacing ``2 pi / (padding * fine_support)`` to resolve slower components.
    """

    T: float
    times: np.ndarray = field(repr=False)
    chi: np.ndarray = field(repr=False)
    kappa: np.ndarray = field(repr=False)
    weights: np.ndarray = field(repr=False)
    padding: int = 8

    @classmethod
    def build(cls, times: np.ndarray, T: float, padding: int = 8,
              fine_support: float | None = None, fine_band: float = 80.0) -> "TimeWindow":
        times = np.asarray(times, dtype=float)
        h = float(times[1] - times[0])
        band = math.pi / h
        step = 2 * math.pi / (padding * 2 * T)
        m = int(band // step)
        kappa = step * np.arange(-m, m + 1)
        if fine_support is not None:
            fstep = 2 * math.pi / (padding * fine_support)
            fm = int(min(fine_band, band) // fstep)
            kappa = np.union1d(kappa, fstep * np.arange(-fm, fm + 1))
        weights = _trapezoid_weights(kappa) / (2 * math.pi)
        for arr in (kappa, weights):
            arr.flags.writeable = False
        return cls(T, times, bump_chi(times, T), kappa, weights, padding)

    @classmethod
    def for_trajectory(cls, traj: FieldTrajectory, T: float, padding: int = 8) -> "TimeWindow":
        if traj.times[0] > -T + 1e-12 or traj.times[-1] < T - 1e-12:
            raise ValueError(
                f"window [-{T}, {T}] exceeds trajectory span [{traj.times[0]}, {traj.times[-1]}]"
            )
        return cls.build(traj.times, T, padding)

    @property
    def h(self) -> float:
        return float(self.times[1] - self.times[0])

    def dft_matrix(self) -> np.ndarray:
        """h * exp(-i kappa t): Riemann sum of the time Fourier transform."""
        return self.h * np.exp(-1j * np.outer(self.kappa, self.times))

    def lq(self, values: np.ndarray, q: float) -> np.ndarray:
        """L^q_kappa norm along axis 0 with the dkappa/(2pi) measure."""
        values = np.abs(values)
        if np.isinf(q):
            return values.max(axis=0)
        return np.tensordot(self.weights, values**q, axes=(0, 0)) ** (1.0 / q)


def _check_grid(traj_times: np.ndarray, window: TimeWindow) -> None:
    if traj_times.shape != window.times.shape or not np.allclose(traj_times, window.times):
        raise ValueError("window was built on a different time grid")


def twisted_transform(traj: FieldTrajectory, n: int, window: TimeWindow,
                      cutoff: bool = True) -> np.ndarray:
    """kappa-samples of FT[exp(i t lambda_n^2) chi_T(t) pi_n F(t)], shape (K, 2n+1).

    With ``cutoff=False`` the trajectory is transformed as given (use for
    objects that already carry their time cutoff).
    """
    _check_grid(traj.times, window)
    if n > traj.nmax:
        return np.zeros((window.kappa.size, 2 * n + 1), dtype=complex)
    blk = traj.coeffs[:, n * n : (n + 1) ** 2]
    twist = np.exp(1j * eigenvalue_sq(n) * traj.times)
    if cutoff:
        twist = twist * window.chi
    return window.dft_matrix() @ (twist[:, None] * blk)


def _lebesgue_x(coeffs: np.ndarray, n: int, r: float) -> np.ndarray:
    """L^r_x norm of degree-n fields given by coefficient rows."""
    if r == 2:
        return np.linalg.norm(coeffs, axis=-1)
    if np.isinf(r):
        basis = basis_for(max(n, 1))
        full = np.zeros(coeffs.shape[:-1] + ((basis.nmax + 1) ** 2,), dtype=complex)
        full[..., n * n : (n + 1) ** 2] = coeffs
        out = np.empty(coeffs.shape[:-1])
        for chunk in np.array_split(np.arange(coeffs.shape[0]), max(1, coeffs.shape[0] // 256)):
            out[chunk] = np.abs(basis.synthesize(full[chunk])).reshape(chunk.size, -1).max(axis=-1)
        return out
    raise ValueError(f"unsupported spatial exponent r={r}; use 2 or inf")


def x_norm(traj: FieldTrajectory, s: float, gamma: float, p: float, q: float, r: float,
           window: TimeWindow, cutoff: bool = True, degrees=None) -> float:
    """||lambda_n^s <kappa>^gamma F~_n||_{l^p_n L^q_kappa L^r_x}.

    ``r = inf`` uses grid maxima (a lower bound of the true sup norm).
    """
    for e in (p, q, r):
        if not e >= 1:
            raise ValueError("exponents must lie in [1, inf]")
    if r not in (2, np.inf):
        raise ValueError(f"unsupported spatial exponent r={r}; use 2 or inf")
    weight = japanese(window.kappa) ** gamma
    per_degree = []
    for n in range(traj.nmax + 1) if degrees is None else degrees:
        tf = twisted_transform(traj, n, window, cutoff)
        inner = _lebesgue_x(tf, n, r) * weight
        per_degree.append(eigenvalue_sq(n) ** (s / 2) * window.lq(inner, q))
    per_degree = np.asarray(per_degree)
    if np.isinf(p):
        return float(per_degree.max(initial=0.0))
    return float(np.sum(per_degree**p) ** (1.0 / p))


# ---------------------------------------------------------------------------
# operator-valued paths

def operator_transform(mats: np.ndarray, n: int, window: TimeWindow, variant: str = "plain",
                       static: np.ndarray | None = None, pretwisted: bool = False) -> np.ndarray:
    """kappa-samples A(kappa) of the operator whose S-type norm is measured.

    ``mats`` holds T(t) on the window nodes, shape (M, d, d) with the first
    index the output coordinate.

    variant
        ``plain``: A = FT[exp(i t lambda^2) T(t)] (the S_n norm of T).
        ``adjoint``: A = FT[exp(i t lambda^2) T(t)]^dagger, the S_n^* norm of T^*.
        ``star``: A = FT[exp(-i t lambda^2) T(t)] (the S_n^* norm of T itself).
    ``static`` optionally adds a kappa-dependent scalar multiple of the
    identity to A (used for the slowly varying free part of a propagator).
    ``pretwisted=True`` means ``mats`` already carries the exp(+-i t lambda^2)
    factor of the chosen variant.
    """
    if variant not in ("plain", "adjoint", "star"):
        raise ValueError(f"unknown variant {variant!r}")
    lam2 = eigenvalue_sq(n)
    sign = -1.0 if variant == "star" else 1.0
    if pretwisted:
        twisted = mats
    else:
        twisted = np.exp(1j * sign * lam2 * window.times)[:, None, None] * mats
    d = mats.shape[-1]
    A = (window.dft_matrix() @ twisted.reshape(twisted.shape[0], -1)).reshape(-1, d, d)
    if static is not None:
        A = A + static[:, None, None] * np.eye(d)
    if variant == "adjoint":
        A = np.conj(np.swapaxes(A, -1, -2))
    return A


def operator_lq_norm(A: np.ndarray, q: float, gamma: float, window: TimeWindow,
                     starts: int = 64, ascent_steps: int = 20, seed: int = 0) -> dict:
    """Lower bound for sup_{|f|=1} ||<kappa>^gamma A(kappa) f||_{L^q_kappa l^2}.

    Evaluates ``starts`` random complex unit vectors, then runs
    ``ascent_steps`` of normalized-gradient ascent from each (monotone for
    this convex functional). Every reported value is attained by an explicit
    unit vector, so it is a lower bound up to kappa quadrature error.
    """
    d = A.shape[-1]
    wq = window.weights * japanese(window.kappa) ** (gamma * q)
    g = sample_complex_gaussians(GaussianStream(seed, 0x5A4E), starts * d).reshape(starts, d)
    f = g / np.linalg.norm(g, axis=1, keepdims=True)

    Ah = np.conj(np.swapaxes(A, 1, 2))

    def objective(f):
        Af = A @ f.T  # (K, d, s)
        amp = np.linalg.norm(Af, axis=1).T  # (s, K)
        return amp, Af

    amp, Af = objective(f)
    initial = (amp**q @ wq) ** (1.0 / q)
    best = initial.copy()
    for _ in range(ascent_steps):
        coef = wq[None, :] * amp ** (q - 2)
        # sum_k coef A_k^dagger A_k f
        grad = (Ah @ (Af * coef.T[:, None, :])).sum(axis=0).T
        norms = np.linalg.norm(grad, axis=1, keepdims=True)
        if not np.all(norms > 0):
            break
        f = grad / norms
        amp, Af = objective(f)
        best = np.maximum(best, (amp**q @ wq) ** (1.0 / q))
    return {"value": float(best.max()), "random_start_max": float(initial.max()),
            "estimator_kind": "lower_bound", "starts": starts, "ascent_steps": ascent_steps}


def sn_operator_norm(mats: np.ndarray, n: int, q: float, gamma: float, window: TimeWindow,
                     variant: str = "plain", static: np.ndarray | None = None,
                     seed: int = 0, pretwisted: bool = False) -> dict:
    """Lower-bound estimate of the S_n^{q,gamma} (or starred) norm of an operator path."""
    if not np.any(mats) and static is None:
        return {"value": 0.0, "random_start_max": 0.0, "estimator_kind": "lower_bound",
                "starts": 0, "ascent_steps": 0}
    A = operator_transform(mats, n, window, variant, static, pretwisted)
    return operator_lq_norm(A, q, gamma, window, seed=seed)


# ---------------------------------------------------------------------------
# empirical probes

def sogge_exponent(p: float) -> float:
    if p < 2:
        raise ValueError("eigenfunction estimate needs p >= 2")
    if np.isinf(p):
        return 0.5
    return 0.5 * (0.5 - 1.0 / p) if p <= 6 else 0.5 - 2.0 / p


def _random_unit_degree_fields(seed: int, n: int, count: int, nmax: int) -> np.ndarray:
    c = np.zeros((count, (nmax + 1) ** 2), dtype=complex)
    for i in range(count):
        g = degree_gaussians(GaussianStream(seed, i), n)
        c[i, n * n : (n + 1) ** 2] = g / np.linalg.norm(g)
    return c


def probe_sogge(p: float, degrees, samples: int = 100, seed: int = 0) -> dict:
    """max ||pi_n f||_{L^p} / n^{sigma(p)} over random unit eigenfunctions."""
    degrees = list(degrees)
    basis = basis_for(max(max(degrees), 1))
    sig = sogge_exponent(p)
    worst = 0.0
    for n in degrees:
        vals = np.abs(basis.synthesize(_random_unit_degree_fields(seed, n, samples, basis.nmax)))
        if np.isinf(p):
            norms = vals.reshape(samples, -1).max(axis=1)
        else:
            norms = basis.grid.integrate(vals**p) ** (1.0 / p)
        worst = max(worst, float(np.max(norms / max(n, 1) ** sig)))
    return {"kind": "sogge_Lp", "p": p, "exponent": sig, "value": worst,
            "degrees": [min(degrees), max(degrees)], "samples": samples}


def probe_bilinear(n_max: int = 32, samples: int = 100, seed: int = 0) -> dict:
    """max ||pi_{n1} f pi_{n2} g||_{L2} / (max(n2,1)^{1/4} ||f|| ||g||), n1 >= n2."""
    basis = basis_for(max(n_max, 1))
    dens = np.empty((n_max + 1, samples) + basis.grid.shape)
    for n in range(n_max + 1):
        vals = basis.synthesize(_random_unit_degree_fields(seed + 7919 * (n + 1), n, samples, basis.nmax))
        dens[n] = np.abs(vals) ** 2
    w = basis.grid.weights
    worst, arg = 0.0, (0, 0)
    for n2 in range(n_max + 1):
        d2w = dens[n2] * w
        for n1 in range(n2, n_max + 1):
            l2 = np.sqrt(np.einsum("sij,sij->s", dens[n1], d2w))
            ratio = float(l2.max() / max(n2, 1) ** 0.25)
            if ratio > worst:
                worst, arg = ratio, (n1, n2)
    return {"kind": "bilinear", "value": worst, "argmax": list(arg), "n_max": n_max,
            "samples": samples}


def probe_embedding(n: int, q: float = 8.0, gamma: float = 0.9, T: float = 0.05,
                    dt: float = 1e-3, samples: int = 20, seed: int = 0) -> dict:
    """Ratio ||G||_{C^a} / ||<kappa>^gamma G_hat||_{L^q L^2}, a = gamma - 1/q'.

    G(t) = chi_T(t) sum_j a_j exp(i w_j t) v_j with random amplitudes,
    frequencies |w_j| <= 50 and unit vectors v_j in E_n.
    """
    a_exp = gamma - (1.0 - 1.0 / q)
    if a_exp <= 0:
        raise ValueError("embedding needs gamma > 1/q'")
    times = dt / 2 * np.arange(-int(round(4 * T / dt)), int(round(4 * T / dt)) + 1)
    window = TimeWindow.build(times, 2 * T)
    d = 2 * n + 1
    worst = 0.0
    for s in range(samples):
        st = GaussianStream(seed, 1000 + s)
        amps = sample_complex_gaussians(st.child(1), 4)
        freqs = 50.0 * (st.child(2).uniforms(4) * 2 - 1)
        vecs = sample_complex_gaussians(st.child(3), 4 * d).reshape(4, d)
        vecs /= np.linalg.norm(vecs, axis=1, keepdims=True)
        G = bump_chi(times, T)[:, None] * (np.exp(1j * np.outer(times, freqs)) * amps) @ vecs
        Gh = window.dft_matrix() @ G
        xn = float(window.lq(np.linalg.norm(Gh, axis=1) * japanese(window.kappa) ** gamma, q))
        norms = np.linalg.norm(G, axis=1)
        diff = np.linalg.norm(G[:, None, :] - G[None, :, :], axis=-1)
        dtm = np.abs(times[:, None] - times[None, :])
        np.fill_diagonal(dtm, np.inf)
        holder = norms.max() + float(np.max(diff / dtm**a_exp))
        worst = max(worst, holder / xn)
    return {"kind": "embedding", "value": worst, "alpha": a_exp, "q": q, "gamma": gamma,
            "n": n, "samples": samples}


def estimate_probe(kind: str, **params) -> dict:
    """Dispatch to the empirical constant probes (reported, never asserted tightly)."""
    probes = {"sogge_Lp": probe_sogge, "bilinear": probe_bilinear, "embedding": probe_embedding}
    if kind not in probes:
        raise ValueError(f"unknown probe {kind!r}")
    return probes[kind](**params)


def norm_report(name: str, value: float, estimator_kind: str, seed=None, **parameters) -> dict:
    """One NormReport row."""
    if estimator_kind not in ("exact", "quadrature", "lower_bound"):
        raise ValueError(f"unknown estimator kind {estimator_kind!r}")
    return {"name": name, "parameters": parameters, "value": float(value),
            "estimator_kind": estimator_kind, "seed": seed}
