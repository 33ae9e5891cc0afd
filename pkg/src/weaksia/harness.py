"""Experiment drivers: coupled runs, timestep scans, error versus runtime.

Configuration files are INI-style with one section per experiment; every key
maps onto a field of :class:`ExperimentConfig`.
"""
from __future__ import annotations

import configparser
import csv
import logging
import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, fields, replace
from importlib import resources
from pathlib import Path

import numpy as np

from .coupled import SIA, CoupledSimulation, ModelChoice
from .fields import PhysicalConstants
from .free_surface import SurfaceState, perturbation_energy, surface_energy, write_history
from .geometry import (DomainProfile, build_icecap_profile, build_slab_profile,
                       load_cross_section_profile)
from .momentum import ConfigError
from .stability import (BracketError, DataError, StabilityResult, energy_stable_run,
                        find_max_timestep, fit_scaling_exponent, write_fit_csv,
                        write_results_csv)

log = logging.getLogger(__name__)

GEOMETRIES = ("slab", "icecap", "greenland")
DEFAULT_NY = {"slab": 11, "icecap": 12, "greenland": 10}
ERROR_NORM = "relative L2 norm of h - h_ref over the horizontal domain at T_final"


def default_final_time(label: str) -> float:
    """Scan horizon per model: 100 yr with FSSA, 5 yr for SIA, 12 yr otherwise."""
    if "FSSA" in label:
        return 100.0
    if ModelChoice.from_label(label).formulation == SIA:
        return 5.0
    return 12.0


def greenland_data_path() -> Path:
    return Path(str(resources.files("weaksia") / "data" / "greenland_section.txt"))


@dataclass(frozen=True)
class ExperimentConfig:
    geometry: str = "slab"
    data_path: str | None = None
    formulations: tuple = ("W-SIAStokes",)
    theta: float | None = None        # overrides the FSSA switch of every label when set
    upwind: bool = False
    n_x: tuple = (320,)
    n_y: int | None = None
    t_final: float | None = None
    dt: float | None = None
    dt_ladder: tuple = ()
    bracket: tuple = (1e-4, 1e3)
    rel_tol: float = 0.05
    cap: float = 1e4
    reference_formulation: str = "W-Stokes"
    reference_dt: float | None = None
    output_dir: str = "results"
    seed: int = 0
    workers: int = 1

    def __post_init__(self):
        if self.geometry not in GEOMETRIES:
            raise ConfigError(f"geometry must be one of {GEOMETRIES}")
        if self.geometry == "greenland" and self.data_path is not None \
                and not Path(self.data_path).exists():
            raise ConfigError(f"cross-section file {self.data_path} does not exist")
        if self.n_y is not None and self.n_y < 1:
            raise ConfigError("n_y must be at least 1")
        if self.theta is not None and not 0.0 <= self.theta <= 1.0:
            raise ConfigError("theta must lie in [0, 1]")
        if any(n < 2 for n in self.n_x):
            raise ConfigError("every n_x must be at least 2")
        for label in self.formulations:
            self.model(label)

    @property
    def ny(self) -> int:
        return self.n_y if self.n_y is not None else DEFAULT_NY[self.geometry]

    def model(self, label: str | None = None) -> ModelChoice:
        m = ModelChoice.from_label(label or self.formulations[0])
        theta = m.theta if self.theta is None or m.formulation == SIA else self.theta
        return ModelChoice(m.formulation, theta, m.upwind or self.upwind)

    def profile(self) -> DomainProfile:
        if self.geometry == "slab":
            return build_slab_profile()
        if self.geometry == "icecap":
            return build_icecap_profile()
        return load_cross_section_profile(self.data_path or greenland_data_path())

    def final_time(self, label: str) -> float:
        return self.t_final if self.t_final is not None else default_final_time(label)


def _parse_value(name, raw, kind):
    raw = raw.strip()
    if raw.lower() in ("", "none"):
        return None
    if kind is tuple:
        items = [s for s in raw.replace(",", " ").split() if s]
        if name in ("formulations",):
            return tuple(items)
        return tuple(int(s) if name == "n_x" else float(s) for s in items)
    if kind is bool:
        return raw.lower() in ("1", "true", "yes", "on")
    if kind is int:
        return int(raw)
    if kind is float:
        return float(raw)
    return raw


_KINDS = {"geometry": str, "data_path": str, "formulations": tuple, "theta": float,
          "upwind": bool, "n_x": tuple, "n_y": int, "t_final": float, "dt": float,
          "dt_ladder": tuple, "bracket": tuple, "rel_tol": float, "cap": float,
          "reference_formulation": str, "reference_dt": float, "output_dir": str,
          "seed": int, "workers": int}


def config_keys() -> dict:
    """Key name to type name, for ``--help`` output."""
    return {k: v.__name__ for k, v in _KINDS.items()}


def load_config(path, section: str) -> ExperimentConfig:
    """Read one section of an INI file; unknown keys are an error."""
    parser = configparser.ConfigParser()
    with open(path) as fh:
        parser.read_file(fh)
    if not parser.has_section(section):
        return ExperimentConfig()
    values = {}
    for key, raw in parser.items(section):
        if key not in _KINDS:
            raise ConfigError(f"{path}: unknown key {key!r} in [{section}]")
        values[key] = _parse_value(key, raw, _KINDS[key])
    return ExperimentConfig(**{k: v for k, v in values.items() if v is not None})


@dataclass
class ExperimentRecord:
    formulation: str
    dx: float
    dt: float
    T_final: float
    runtime_wall: float
    error_rel: float | None = None
    stable: bool = True


RECORD_COLUMNS = tuple(f.name for f in fields(ExperimentRecord))


@dataclass
class SimulationResult:
    history: list
    record: ExperimentRecord
    energies: list
    message: str = ""

    @property
    def final(self) -> SurfaceState:
        return self.history[-1]


def build_simulation(config: ExperimentConfig, label: str, n_x: int,
                     consts: PhysicalConstants | None = None) -> CoupledSimulation:
    return CoupledSimulation(config.profile(), n_x, config.ny, config.model(label), consts)


def run_coupled_simulation(config: ExperimentConfig, label: str | None = None,
                           n_x: int | None = None, dt: float | None = None,
                           t_final: float | None = None, keep_every: int = 1,
                           simulation: CoupledSimulation | None = None) -> SimulationResult:
    """Alternate momentum solves and surface steps up to ``t_final``.

    Solver failures or non-finite heights stop the run; the history up to that
    point is kept and the record is flagged unstable. Wall time covers the
    time loop only.
    """
    label = label or config.formulations[0]
    n_x = n_x or config.n_x[0]
    dt = dt or config.dt
    if dt is None or dt <= 0:
        raise ConfigError("a positive dt is required")
    t_final = t_final if t_final is not None else config.final_time(label)
    sim = simulation or build_simulation(config, label, n_x)
    sim.reset()
    state = sim.initial_state()
    history, energies = [state], [surface_energy(state)]
    n_steps = max(1, math.ceil(t_final / dt - 1e-9))
    stable, message = True, ""
    start = time.perf_counter()
    for k in range(1, n_steps + 1):
        try:
            state = sim.step(state, dt)
        except (ArithmeticError, RuntimeError, ValueError) as exc:
            stable, message = False, f"step {k}: {type(exc).__name__}: {exc}"
            break
        energies.append(surface_energy(state))
        if k % keep_every == 0 or k == n_steps:
            history.append(state)
    runtime = time.perf_counter() - start
    if history[-1] is not state:
        history.append(state)
    record = ExperimentRecord(sim.model.label, sim.grid.dx, dt, t_final, runtime, None, stable)
    return SimulationResult(history, record, energies, message)


def stability_search(config: ExperimentConfig, label: str, n_x: int,
                     bracket=None, lower_retries: int = 0) -> StabilityResult:
    """Largest energy-stable timestep for one model and mesh size.

    With ``lower_retries > 0`` an unstable lower end moves the bracket down to
    ``(lo / 8, lo)`` instead of failing, at most that many times.
    """
    sim = build_simulation(config, label, n_x)
    t_final = config.final_time(label)
    initial = sim.initial_state()

    def step(state, dt):
        return sim.step(state, dt)

    def run(dt):
        sim.reset()
        return energy_stable_run(step, initial, dt, t_final, energy=perturbation_energy)

    # very few steps cannot reveal a growing mode, so runs need at least three
    cap = min(config.cap, t_final / 3.0)
    lo, hi = bracket or config.bracket
    lo, hi = min(lo, cap / 2), min(hi, cap)
    for attempt in range(lower_retries + 1):
        try:
            return find_max_timestep(run, sim.grid.dx, (lo, hi), config.rel_tol, cap)
        except BracketError:
            if attempt == lower_retries or lo <= 0:
                raise
            log.info("%s n_x=%d: dt=%g unstable, moving bracket down", label, n_x, lo)
            lo, hi = lo / 8, lo


@dataclass
class DtScanResult:
    results: dict                 # label -> list[StabilityResult], ascending dx
    fits: dict                    # label -> ScalingFit
    failures: dict = field(default_factory=dict)   # (label, n_x) -> message

    def records(self):
        out = []
        for label, rs in self.results.items():
            for r in rs:
                out.append(ExperimentRecord(label, r.dx, r.dt_star, math.nan, math.nan, None,
                                            not r.unbounded))
        return out


def run_dt_scan(config: ExperimentConfig, brackets: dict | None = None,
                exclude_coarsest: bool = False, lower_retries: int = 0) -> DtScanResult:
    """Largest stable timestep for every (formulation, n_x) and a power-law fit.

    ``brackets`` maps ``(label, n_x)`` or ``n_x`` to an initial ``(lo, hi)``.
    A failing job is logged and skipped; the fit needs three surviving points.
    """
    if len(config.n_x) < 3:
        raise ConfigError("a scan needs at least 3 n_x values")
    brackets = brackets or {}
    jobs = []
    for label in config.formulations:
        for n in config.n_x:
            b = brackets.get((label, n), brackets.get(n, config.bracket))
            jobs.append((label, n, tuple(b), lower_retries))
    if config.workers > 1:
        with ProcessPoolExecutor(config.workers) as pool:
            futures = [pool.submit(stability_search, config, *job) for job in jobs]
            outcomes = [_collect(f.result) for f in futures]
    else:
        outcomes = [_collect(lambda job=job: stability_search(config, *job)) for job in jobs]
    results, failures = {}, {}
    for (label, n, *_), (res, err) in zip(jobs, outcomes):
        if err is not None:
            log.warning("scan %s n_x=%d failed: %s", label, n, err)
            failures[(label, n)] = err
            continue
        results.setdefault(label, []).append(res)
    fits = {}
    for label, rs in results.items():
        rs.sort(key=lambda r: r.dx)
        pts = rs[:-1] if exclude_coarsest else rs
        try:
            fits[label] = fit_scaling_exponent(pts)
        except DataError as exc:
            failures[(label, "fit")] = str(exc)
    return DtScanResult(results, fits, failures)


def _collect(fn):
    try:
        return fn(), None
    except (BracketError, ArithmeticError, RuntimeError, ValueError) as exc:
        return None, f"{type(exc).__name__}: {exc}"


_REFERENCE_CACHE: dict = {}


def reference_solution(config: ExperimentConfig, n_x: int, t_final: float) -> SurfaceState:
    """Reference surface at ``t_final``, computed once per geometry and resolution."""
    dt = config.reference_dt
    if dt is None:
        raise ConfigError("reference_dt is required")
    key = (config.geometry, config.data_path, n_x, config.ny, dt, t_final,
           config.reference_formulation)
    if key not in _REFERENCE_CACHE:
        ref_cfg = replace(config, theta=None, upwind=False,
                          formulations=(config.reference_formulation,))
        res = run_coupled_simulation(ref_cfg, config.reference_formulation, n_x, dt, t_final,
                                     keep_every=10 ** 9)
        if not res.record.stable:
            raise RuntimeError(f"reference run failed: {res.message}")
        _REFERENCE_CACHE[key] = res.final
    return _REFERENCE_CACHE[key]


def relative_l2_error(h, h_ref, dx) -> float:
    h, h_ref = np.asarray(h), np.asarray(h_ref)
    return float(np.sqrt(dx * np.sum((h - h_ref) ** 2)) / np.sqrt(dx * np.sum(h_ref ** 2)))


def run_error_vs_runtime(config: ExperimentConfig, ladders: dict | None = None) -> list:
    """Error against the reference and wall time for every (formulation, dt).

    ``ladders`` maps a label to its timesteps and defaults to
    ``config.dt_ladder`` for every configured formulation.
    """
    ladders = ladders or {label: config.dt_ladder for label in config.formulations}
    n_x = config.n_x[0]
    t_final = config.t_final
    if t_final is None:
        raise ConfigError("error-runtime runs need t_final")
    ref = reference_solution(config, n_x, t_final)
    records = []
    for label, dts in ladders.items():
        sim = build_simulation(config, label, n_x)
        for dt in dts:
            res = run_coupled_simulation(config, label, n_x, dt, t_final, keep_every=10 ** 9,
                                         simulation=sim)
            rec = res.record
            if rec.stable and np.all(np.isfinite(res.final.h)):
                rec.error_rel = relative_l2_error(res.final.h, ref.h, sim.grid.dx)
            else:
                rec.stable = False
            records.append(rec)
    return records


PLOT_COLUMNS = {"dt-scan": ("dx", "dt"), "error-runtime": ("runtime_wall", "error_rel"),
                "simulation": ("dt", "runtime_wall")}


def emit_plot_data(records, kind: str, out_dir) -> list:
    """Per-formulation two-column ``.dat`` files plus one CSV of all records."""
    records = list(records)
    if not records:
        raise ValueError("no records to write")
    if kind not in PLOT_COLUMNS:
        raise ValueError(f"kind must be one of {tuple(PLOT_COLUMNS)}")
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    xcol, ycol = PLOT_COLUMNS[kind]
    written = []
    by_label = {}
    for r in records:
        by_label.setdefault(r.formulation, []).append(r)
    for label, rs in sorted(by_label.items()):
        rs.sort(key=lambda r: getattr(r, xcol))
        path = out / f"{kind}_{label}.dat"
        with path.open("w") as fh:
            fh.write(f"# {xcol} {ycol}\n")
            for r in rs:
                y = getattr(r, ycol)
                fh.write(f"{float(getattr(r, xcol))!r} {'nan' if y is None else repr(float(y))}\n")
        written.append(path)
    csv_path = out / f"{kind}.csv"
    write_records_csv(csv_path, records)
    written.append(csv_path)
    return written


def write_records_csv(path, records) -> None:
    with open(path, "w", newline="") as fh:
        fh.write(f"# error_rel: {ERROR_NORM}\n")
        w = csv.writer(fh)
        w.writerow(RECORD_COLUMNS)
        for r in records:
            row = asdict(r)
            w.writerow([_cell(row[c]) for c in RECORD_COLUMNS])


def _cell(v):
    if v is None:
        return ""
    if isinstance(v, (bool, np.bool_)):
        return str(bool(v))
    if isinstance(v, float):
        return repr(float(v))
    return v


def read_records_csv(path) -> list:
    with open(path, newline="") as fh:
        lines = [ln for ln in fh if not ln.startswith("#")]
    out = []
    for row in csv.DictReader(lines):
        out.append(ExperimentRecord(
            row["formulation"], float(row["dx"]), float(row["dt"]), float(row["T_final"]),
            float(row["runtime_wall"]),
            None if row["error_rel"] == "" else float(row["error_rel"]),
            row["stable"] == "True"))
    return out


def write_scan_outputs(scan: DtScanResult, out_dir) -> list:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    rows = [(label, r) for label, rs in scan.results.items() for r in rs]
    write_results_csv(out / "dt_scan.csv", rows)
    write_fit_csv(out / "dt_scan_fit.csv", scan.fits)
    return [out / "dt_scan.csv", out / "dt_scan_fit.csv"]


def write_simulation_outputs(result: SimulationResult, out_dir) -> list:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    write_history(out / "surface_history.csv", result.history)
    write_records_csv(out / "simulation.csv", [result.record])
    return [out / "surface_history.csv", out / "simulation.csv"]
