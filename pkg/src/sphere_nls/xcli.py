"""
Experiment configuration, orchestration and report emission.

Configs are INI files with one nesting level::

    [experiment]
    name = converge
    alpha = 1.5
    N = 4, 8, 16, 32
    T = 0.05
    dt = 1e-3
    master_seed = 0
    ensemble_size = 200
    output_dir = runs

    [parameters]
    q = 8
    gamma = 0.9
    b = 0.55
    delta = 0.01

    [options]
    s = 0.4

Only the output directory may be overridden from the environment
(``SPHERE_NLS_OUTPUT_DIR``). Every output directory is named after a hash of
the resolved configuration and is never overwritten without ``force``.
"""
from __future__ import annotations

import configparser
import csv
import hashlib
import json
import math
import os
import time
import traceback
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np

EXPERIMENTS = ("simulate", "converge", "rao-verify", "ladder", "measure-norms", "ensemble")
OUTPUT_ENV = "SPHERE_NLS_OUTPUT_DIR"


class ConfigError(ValueError):
    """Invalid configuration; ``line`` points into the config file when known."""

    def __init__(self, message: str, field_name: str | None = None, line: int | None = None,
                 path: str | None = None):
        where = ""
        if path:
            where += f"{path}"
        if line is not None:
            where += f":{line}"
        if field_name:
            where += f" [{field_name}]"
        super().__init__(f"{where}: {message}" if where else message)
        self.field_name = field_name
        self.line = line
        self.path = path


class OutputExistsError(FileExistsError):
    pass


@dataclass(frozen=True)
class ExperimentConfig:
    name: str
    alpha: float = 1.5
    N: tuple = (4, 8, 16, 32)
    T: float = 0.05
    dt: float = 1e-3
    q: float = 8.0
    gamma: float = 0.9
    b: float = 0.55
    delta: float = 0.01
    master_seed: int = 0
    ensemble_size: int = 200
    output_dir: str = "runs"
    options: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.name not in EXPERIMENTS:
            raise ConfigError(f"unknown experiment {self.name!r}; choose from {', '.join(EXPERIMENTS)}",
                              "experiment.name")
        for n in self.N:
            if n < 1 or n & (n - 1):
                raise ConfigError(f"N list must be dyadic, got {n}", "experiment.N")
        if not self.T > 0 or not self.dt > 0:
            raise ConfigError("T and dt must be positive", "experiment.T")
        steps = round(self.T / self.dt)
        if steps < 1 or abs(steps * self.dt - self.T) > 1e-9 * self.T:
            raise ConfigError(f"dt={self.dt} does not divide T={self.T}", "experiment.dt")
        if self.ensemble_size < 2:
            raise ConfigError("ensemble_size must be at least 2", "experiment.ensemble_size")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["N"] = list(self.N)
        return d

    def digest(self) -> str:
        """Hash of every field except the output location."""
        d = self.to_dict()
        d.pop("output_dir")
        blob = json.dumps(d, sort_keys=True, default=str).encode()
        return hashlib.sha256(blob).hexdigest()[:12]

    def output_path(self) -> Path:
        return Path(self.output_dir) / f"{self.name}-{self.digest()}"

    def option(self, key: str, default, cast: Callable = float):
        if key not in self.options:
            return default
        try:
            return cast(self.options[key])
        except ValueError as exc:
            raise ConfigError(f"cannot parse option {key}={self.options[key]!r}: {exc}",
                              f"options.{key}") from exc


_EXPERIMENT_KEYS = {
    "name": str, "alpha": float, "N": "intlist", "T": float, "dt": float,
    "master_seed": int, "ensemble_size": int, "output_dir": str,
}
_PARAM_KEYS = {"q": float, "gamma": float, "b": float, "delta": float}


def _key_lines(text: str) -> dict:
    """(section, key) -> 1-based line number."""
    lines, section = {}, None
    for i, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if line.startswith("[") and line.endswith("]"):
            section = line[1:-1].strip()
        elif section and line and not line.startswith(("#", ";")) and ("=" in line or ":" in line):
            key = line.split("=", 1)[0].split(":", 1)[0].strip()
            lines[(section, key.lower())] = i
    return lines


def parse_config(text: str, path: str | None = None, env: dict | None = None) -> ExperimentConfig:
    parser = configparser.ConfigParser(interpolation=None)
    parser.optionxform = str
    try:
        parser.read_string(text, source=path or "<config>")
    except configparser.ParsingError as exc:
        lineno, line = exc.errors[0]
        raise ConfigError(f"cannot parse line {line.strip()!r}", None, lineno, path) from exc
    except configparser.Error as exc:
        raise ConfigError(str(exc).splitlines()[0], None, getattr(exc, "lineno", None), path) from exc
    lines = _key_lines(text)
    allowed = {"experiment", "parameters", "options"}
    for sec in parser.sections():
        if sec not in allowed:
            raise ConfigError(f"unknown section [{sec}]", sec, None, path)
    if not parser.has_section("experiment"):
        raise ConfigError("missing [experiment] section", "experiment", None, path)

    def convert(section: str, key: str, raw: str, kind):
        line = lines.get((section, key.lower()))
        try:
            if kind == "intlist":
                return tuple(int(v) for v in raw.replace(" ", "").split(",") if v)
            return kind(raw)
        except ValueError as exc:
            raise ConfigError(f"cannot parse {raw!r}: {exc}", f"{section}.{key}", line, path) from exc

    values = {}
    for key, raw in parser.items("experiment"):
        if key not in _EXPERIMENT_KEYS:
            raise ConfigError(f"unknown key {key!r}", f"experiment.{key}",
                              lines.get(("experiment", key.lower())), path)
        values[key] = convert("experiment", key, raw, _EXPERIMENT_KEYS[key])
    if "name" not in values:
        raise ConfigError("experiment name is required", "experiment.name", None, path)
    if parser.has_section("parameters"):
        for key, raw in parser.items("parameters"):
            if key not in _PARAM_KEYS:
                raise ConfigError(f"unknown key {key!r}", f"parameters.{key}",
                                  lines.get(("parameters", key.lower())), path)
            values[key] = convert("parameters", key, raw, _PARAM_KEYS[key])
    if parser.has_section("options"):
        values["options"] = dict(parser.items("options"))
    env = os.environ if env is None else env
    if env.get(OUTPUT_ENV):
        values["output_dir"] = env[OUTPUT_ENV]
    try:
        return ExperimentConfig(**values)
    except ConfigError as exc:
        sec, _, key = (exc.field_name or "").partition(".")
        raise ConfigError(str(exc).split(": ", 1)[-1], exc.field_name, lines.get((sec, key.lower())),
                          path) from exc


def load_config(path: str | Path) -> ExperimentConfig:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config: {exc}", None, None, str(path)) from exc
    return parse_config(text, str(path))


# ---------------------------------------------------------------------------
# results

@dataclass
class SubResult:
    """Output of one independent sub-experiment."""

    name: str
    ok: bool = True
    tables: dict = field(default_factory=dict)  # file stem -> (columns, rows)
    summary: dict = field(default_factory=dict)
    reports: list = field(default_factory=list)  # NormReport rows
    snapshots: dict = field(default_factory=dict)  # file stem -> SpectralField
    error: str | None = None
    seconds: float = 0.0


def _fmt(v):
    """CSV cell / JSON fallback: plain Python scalars, floats at full precision."""
    if isinstance(v, (bool, np.bool_)):
        return bool(v)
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    if isinstance(v, np.integer):
        return int(v)
    if isinstance(v, np.ndarray):
        return v.tolist()
    if isinstance(v, (int, str)) or v is None:
        return v
    return str(v)


def emit_report(results: list[SubResult], directory: str | Path, config: ExperimentConfig | None = None,
                force: bool = False) -> Path:
    """Write ``manifest.json``, one CSV per table, NormReport rows and snapshots."""
    from .fields import write_snapshot

    directory = Path(directory)
    if directory.exists() and any(directory.iterdir()) and not force:
        raise OutputExistsError(f"{directory} already holds results; rerun with --force to overwrite")
    try:
        directory.mkdir(parents=True, exist_ok=True)
        probe = directory / ".write-test"
        probe.write_text("")
        probe.unlink()
    except OSError as exc:
        raise OSError(f"output directory {directory} is not writable: {exc}") from exc
    files = []
    reports = []
    for res in results:
        for stem, (columns, rows) in sorted(res.tables.items()):
            fname = f"{stem}.csv"
            with open(directory / fname, "w", newline="") as fh:
                writer = csv.writer(fh)
                writer.writerow(columns)
                for row in rows:
                    writer.writerow([_fmt(v) for v in row])
            files.append(fname)
        for stem, f in sorted(res.snapshots.items()):
            fname = f"{stem}.snls"
            write_snapshot(f, directory / fname)
            files.append(fname)
        reports.extend(res.reports)
    if reports:
        (directory / "norm_reports.json").write_text(json.dumps(reports, indent=1, default=_fmt))
        files.append("norm_reports.json")
    manifest = {
        "config": None if config is None else config.to_dict(),
        "config_hash": None if config is None else config.digest(),
        "status": "ok" if all(r.ok for r in results) else "partial_failure",
        "subexperiments": [
            {"name": r.name, "ok": r.ok, "error": r.error, "summary": r.summary,
             "seconds": round(r.seconds, 3)} for r in results
        ],
        "files": files,
    }
    (directory / "manifest.json").write_text(json.dumps(manifest, indent=2, default=_fmt))
    return directory


# ---------------------------------------------------------------------------
# sub-experiments (module-level so that worker processes can pickle them)

def _phi(config: ExperimentConfig, nmax: int, seed: int | None = None):
    from .stochastic import GaussianStream, sample_phi_alpha

    amp = config.option("amplitude", 1.0)
    stream = GaussianStream(config.master_seed if seed is None else seed, 0)
    return amp * sample_phi_alpha(stream, config.alpha, nmax)


def task_simulate(config: ExperimentConfig, N: int) -> SubResult:
    from .dynamics import energy, evolve_nls, evolve_resonant, mass
    from .fields import degree_masses
    from .harmonics import eigenvalue_sq

    system = config.option("system", "nls", str)
    u0 = _phi(config, N)
    if system == "nls":
        traj = evolve_nls(u0, N, config.T, config.dt, substeps=config.option("substeps", 1, int))
    elif system == "resonant":
        traj = evolve_resonant(u0, config.T, config.dt)
    else:
        raise ConfigError(f"unknown system {system!r}", "options.system")
    m = mass(traj.coeffs)
    e = energy(traj.coeffs)
    dm = np.abs(m - m[0])
    de = np.abs(e - e[0])
    rows = [(t, mi, ei, a, b) for t, mi, ei, a, b in zip(traj.times, m, e, dm, de)]
    res = SubResult(f"simulate_N{N}")
    res.tables[f"series_N{N}"] = (["t", "mass", "energy", "mass_drift", "energy_drift"], rows)
    phases = [(n, eigenvalue_sq(n), math.remainder(-eigenvalue_sq(n) * config.T, 2 * math.pi))
              for n in range(N + 1)]
    res.tables[f"phases_N{N}"] = (["n", "lambda_sq", "free_phase_at_T"], phases)
    drift_row = [N, float(dm.max()), float(de.max())]
    if system == "resonant":
        dmn = np.abs(degree_masses(traj.coeffs) - degree_masses(traj.coeffs)[0]).max()
        drift_row.append(float(dmn))
    res.tables[f"drift_N{N}"] = (["N", "max_mass_drift", "max_energy_drift"]
                                 + (["max_degree_mass_drift"] if system == "resonant" else []),
                                 [drift_row])
    res.snapshots[f"final_N{N}"] = traj.field(traj.nodes - 1)
    res.summary = {"N": N, "system": system, "max_mass_drift": float(dm.max()),
                   "max_energy_drift": float(de.max())}
    return res


def task_converge(config: ExperimentConfig, seed: int) -> SubResult:
    from .dynamics import evolve_nls
    from .fields import resize
    from .rao import hs_sup

    s = config.option("s", 0.4)
    Ns = sorted(config.N)
    phi = _phi(config, Ns[-1], seed)
    sols = {N: evolve_nls(phi, N, config.T, config.dt) for N in Ns}
    rows = []
    for a, b in zip(Ns[:-1], Ns[1:]):
        diff = sols[b].with_coeffs(sols[b].coeffs - resize(sols[a].coeffs, sols[b].nmax))
        rows.append((seed, a, b, hs_sup(diff, s)))
    vals = [r[-1] for r in rows]
    res = SubResult(f"converge_seed{seed}")
    res.tables[f"converge_seed{seed}"] = (["seed", "N", "2N", f"sup_t_H{s}_difference"], rows)
    res.summary = {"seed": seed, "s": s, "differences": vals,
                   "strictly_decreasing": bool(np.all(np.diff(vals) < 0))}
    return res


def task_rao_unitarity_wick(config: ExperimentConfig, N: int) -> SubResult:
    from .dynamics import evolve_nls
    from .rao import rao_shell, wick_cancellation_residual
    from .stochastic import GaussianStream, degree_gaussians

    T = config.option("rao_T", 0.1)
    phi = _phi(config, max(N // 2, 1))
    u_half = evolve_nls(phi, max(N // 2, 1), T, config.dt)
    rao = rao_shell(N, u_half)
    rows = [(n, rao.unitarity_defect(n)) for n in rao.degrees]
    rng = np.random.default_rng(config.master_seed)
    wick_rows = []
    for j in range(10):
        n = int(rng.choice(rao.degrees))
        ti = int(rng.integers(0, rao.times.size))
        g = degree_gaussians(GaussianStream(config.master_seed, 10_000 + j), n)
        wick_rows.append((j, n, float(rao.times[ti]), wick_cancellation_residual(rao, n, g, ti)))
    res = SubResult(f"rao_unitarity_wick_N{N}")
    res.tables[f"unitarity_N{N}"] = (["n", "max_unitarity_defect"], rows)
    res.tables[f"wick_N{N}"] = (["pair", "n", "t", "max_residual"], wick_rows)
    worst_u = max(r[1] for r in rows)
    worst_w = max(r[3] for r in wick_rows)
    res.summary = {"N": N, "unitarity": worst_u, "unitarity_pass": worst_u < 1e-6,
                   "wick": worst_w, "wick_pass": worst_w < 1e-8}
    res.ok = res.summary["unitarity_pass"] and res.summary["wick_pass"]
    if not res.ok:
        res.error = "unitarity or Wick-cancellation tolerance exceeded"
    return res


def task_rao_law(config: ExperimentConfig, N: int) -> SubResult:
    from .rao import law_invariance_stat

    n = config.option("law_n", N, int)
    t = config.option("law_t", config.T)
    rep = law_invariance_stat(n, N, t, config.ensemble_size, alpha=config.alpha,
                              master_seed=config.master_seed, dt=config.dt)
    d = rep.to_dict()
    res = SubResult(f"rao_law_N{N}")
    res.tables[f"law_N{N}"] = (list(d), [list(d.values())])
    res.summary = d
    res.ok = rep.passed
    if not res.ok:
        res.error = "law-invariance statistics outside their windows"
    return res


def task_ladder(config: ExperimentConfig, seed: int) -> SubResult:
    from .dynamics import evolve_nls
    from .rao import ansatz_ladder, diagnostics_reports

    N = max(config.N)
    rec = ansatz_ladder(config.alpha, N, config.T, seed, dt=config.dt,
                        diagnostics=config.option("diagnostics", 1, int) == 1)
    direct = evolve_nls(rec.phi, N, config.T, config.dt, two_sided=True,
                        substeps=config.option("substeps", 4, int))
    err = rec.reconstruction_error(direct)
    res = SubResult(f"ladder_seed{seed}")
    res.reports = diagnostics_reports(rec)
    rows = [(r["name"], r["parameters"].get("M"), r["parameters"].get("n", ""), r["value"],
             r["estimator_kind"]) for r in res.reports]
    res.tables[f"ladder_diagnostics_seed{seed}"] = (["name", "M", "n", "value", "estimator_kind"], rows)
    pic = [(s.M, s.diagnostics.get("picard", {}).get("iterations", ""),
            s.diagnostics.get("picard", {}).get("residual", ""),
            s.diagnostics.get("unitarity_defect", "")) for s in rec.shells]
    res.tables[f"ladder_shells_seed{seed}"] = (["M", "picard_iterations", "picard_residual",
                                                 "unitarity_defect"], pic)
    res.summary = {"seed": seed, "N": N, "reconstruction_error": err, "complete": rec.complete,
                   "failure": rec.failure, "params": rec.params}
    res.ok = rec.complete
    res.error = rec.failure
    return res


def task_probe(config: ExperimentConfig, kind: str) -> SubResult:
    from .rnorms import estimate_probe, norm_report

    samples = config.option("probe_samples", 100, int)
    nmax = max(config.N)
    res = SubResult(f"probe_{kind}")
    rows = []
    if kind == "sogge_Lp":
        ps = [float(p) for p in str(config.options.get("p", "2, 4, 6, 8, inf")).split(",")]
        for p in ps:
            out = estimate_probe(kind, p=p, degrees=range(1, nmax + 1), samples=samples,
                                 seed=config.master_seed)
            rows.append((kind, p, out["value"]))
            res.reports.append(norm_report(f"sogge_L{p}", out["value"], "lower_bound",
                                           config.master_seed, p=p, n_max=nmax, samples=samples))
    elif kind == "bilinear":
        out = estimate_probe(kind, n_max=nmax, samples=samples, seed=config.master_seed)
        rows.append((kind, "", out["value"]))
        res.reports.append(norm_report("bilinear", out["value"], "lower_bound", config.master_seed,
                                       n_max=nmax, samples=samples, argmax=out["argmax"]))
    elif kind == "embedding":
        out = estimate_probe(kind, n=min(nmax, 8), q=config.q, gamma=config.gamma, T=config.T,
                             dt=config.dt, samples=min(samples, 20), seed=config.master_seed)
        rows.append((kind, out["alpha"], out["value"]))
        res.reports.append(norm_report("embedding", out["value"], "lower_bound", config.master_seed,
                                       q=config.q, gamma=config.gamma, holder=out["alpha"]))
    else:
        raise ConfigError(f"unknown probe {kind!r}", "options.probes")
    res.tables[f"probe_{kind}"] = (["probe", "parameter", "value"], rows)
    res.summary = {"kind": kind, "max_value": max(r[2] for r in rows),
                   "below_ceiling": max(r[2] for r in rows) < 10.0}
    return res


def _hs_functional(alpha, s, N):
    from .fields import sobolev_norm
    from .stochastic import sample_phi_alpha

    def f(stream):
        return sobolev_norm(sample_phi_alpha(stream, alpha, N), s) ** 2

    return f


def task_ensemble(config: ExperimentConfig, N: int) -> SubResult:
    from .stochastic import ensemble_values, expected_hs_sq, summarize, tail_fit

    s = config.option("s", 0.4)
    vals = ensemble_values(config.master_seed, _hs_functional(config.alpha, s, N), config.ensemble_size)
    est = summarize(vals, f"Hs_sq_N{N}")
    exact = expected_hs_sq(config.alpha, s, N)
    z = est.z_score(exact)
    tail = tail_fit(np.sqrt(vals))
    res = SubResult(f"ensemble_N{N}")
    res.tables[f"ensemble_N{N}"] = (["N", "alpha", "s", "mean", "stderr", "exact", "z", "tail_exponent"],
                                    [(N, config.alpha, s, est.mean, est.stderr, exact, z, tail["exponent"])])
    res.summary = {"N": N, "z": z, "within_5_stderr": z < 5}
    res.ok = z < 5
    if not res.ok:
        res.error = f"ensemble mean {z:.2f} standard errors from the exact value"
    return res


def plan(config: ExperimentConfig) -> list[tuple[Callable, tuple]]:
    """Independent sub-experiments of a config as (function, args) pairs."""
    seeds = [config.master_seed + k for k in range(config.option("seeds", 1, int))]
    if config.name == "simulate":
        return [(task_simulate, (config, N)) for N in config.N]
    if config.name == "converge":
        return [(task_converge, (config, s)) for s in seeds]
    if config.name == "rao-verify":
        N = max(config.N)
        return [(task_rao_unitarity_wick, (config, N)), (task_rao_law, (config, N))]
    if config.name == "ladder":
        return [(task_ladder, (config, s)) for s in seeds]
    if config.name == "measure-norms":
        kinds = [k.strip() for k in str(config.options.get("probes", "sogge_Lp, bilinear, embedding")).split(",")]
        return [(task_probe, (config, k)) for k in kinds]
    if config.name == "ensemble":
        return [(task_ensemble, (config, N)) for N in config.N]
    raise ConfigError(f"unknown experiment {config.name!r}", "experiment.name")


def _guarded(fn, args) -> SubResult:
    start = time.perf_counter()
    try:
        res = fn(*args)
    except Exception as exc:  # noqa: BLE001 - partial-failure policy
        label = "_".join(str(a) for a in args[1:])
        res = SubResult(f"{fn.__name__}_{label}", ok=False,
                        error=f"{type(exc).__name__}: {exc}\n{traceback.format_exc(limit=3)}")
    res.seconds = time.perf_counter() - start
    return res


def run_tasks(config: ExperimentConfig, workers: int = 1) -> list[SubResult]:
    tasks = plan(config)
    if workers <= 1 or len(tasks) == 1:
        return [_guarded(fn, args) for fn, args in tasks]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        futures = [pool.submit(_guarded, fn, args) for fn, args in tasks]
        return [f.result() for f in futures]


def run(config: ExperimentConfig, *, force: bool = False, workers: int = 1,
        output: str | Path | None = None) -> tuple[int, Path]:
    """Run a config and write its report; returns (exit status, directory).

    Exit status is 0 when every sub-experiment succeeded and 1 otherwise.
    """
    directory = Path(output) if output is not None else config.output_path()
    if directory.exists() and any(directory.iterdir()) and not force:
        raise OutputExistsError(f"{directory} already holds results; rerun with --force to overwrite")
    results = run_tasks(config, workers)
    emit_report(results, directory, config, force=True)
    return (0 if all(r.ok for r in results) else 1), directory
