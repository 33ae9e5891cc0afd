"""Largest energy-stable timestep search, power-law fits and von Neumann bounds."""
from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, field
from typing import Callable, NamedTuple

import numpy as np

from .fields import PhysicalConstants
from .free_surface import surface_energy

log = logging.getLogger(__name__)


class BracketError(ValueError):
    pass


class DataError(ValueError):
    pass


@dataclass
class RunOutcome:
    stable: bool
    steps: int
    n_steps: int
    violated_step: int | None = None
    reason: str = ""
    energies: list = field(default_factory=list)

    def __bool__(self):
        return self.stable


def energy_stable_run(step: Callable, initial, dt: float, t_final: float,
                      energy: Callable = surface_energy, slack_rel: float = 1e-12) -> RunOutcome:
    """Advance ``N = ceil(t_final / dt)`` steps and check that the energy never grows.

    ``step(state, dt)`` returns the next state. A step fails when
    ``E_k - E_{k-1} > slack_rel * E_0``, when the energy is not finite, or when
    ``step`` raises; the failure kind is kept in ``reason``.
    """
    n = max(1, math.ceil(t_final / dt - 1e-9))
    state = initial
    e0 = energy(state)
    slack = slack_rel * abs(e0)
    energies = [e0]
    prev = e0
    for k in range(1, n + 1):
        try:
            state = step(state, dt)
            e = energy(state)
        except (ArithmeticError, RuntimeError, ValueError, np.linalg.LinAlgError) as exc:
            return RunOutcome(False, k, n, k, f"error: {type(exc).__name__}: {exc}", energies)
        energies.append(e)
        if not np.isfinite(e):
            return RunOutcome(False, k, n, k, "non-finite", energies)
        if e - prev > slack:
            return RunOutcome(False, k, n, k, "energy increase", energies)
        prev = e
    return RunOutcome(True, n, n, None, "", energies)


@dataclass
class StabilityResult:
    dx: float
    dt_star: float
    bisection_iterations: int
    bracket: tuple
    violated_step: int | None = None
    unbounded: bool = False
    runs: int = 0

    @property
    def flag(self) -> str:
        return "unbounded" if self.unbounded else ""


def find_max_timestep(run: Callable[[float], RunOutcome], dx: float,
                      bracket=(1e-4, 1e3), rel_tol: float = 0.05, cap: float = 1e4,
                      ) -> StabilityResult:
    """Bisect (geometrically) for the largest ``dt`` with ``run(dt).stable``.

    ``hi`` is doubled until a run fails or ``cap`` is reached. ``lo`` is only
    run when every probe above it failed, since small steps are the expensive
    ones; an unstable ``lo`` raises :class:`BracketError`.
    """
    lo, hi = map(float, bracket)
    if not 0 < lo < hi:
        raise BracketError(f"need 0 < lo < hi, got {bracket}")
    runs = 0
    lo_verified = False
    hi_out = run(hi)
    runs += 1
    while hi_out.stable:
        lo, lo_verified = hi, True
        if hi >= cap:
            return StabilityResult(dx, hi, 0, (hi, hi), None, True, runs)
        hi = min(2 * hi, cap)
        hi_out = run(hi)
        runs += 1
    violated = hi_out.violated_step
    it = 0
    while (hi - lo) / lo >= rel_tol:
        mid = math.sqrt(lo * hi)
        out = run(mid)
        runs += 1
        it += 1
        log.debug("dx=%g dt=%.5g stable=%s %s", dx, mid, out.stable, out.reason)
        if out.stable:
            lo, lo_verified = mid, True
        else:
            hi, violated = mid, out.violated_step
    if not lo_verified:
        out = run(lo)
        runs += 1
        if not out.stable:
            raise BracketError(f"lower bracket dt={lo:g} is unstable ({out.reason})")
    return StabilityResult(dx, lo, it, (lo, hi), violated, False, runs)


@dataclass
class ScalingFit:
    points: np.ndarray          # columns log10 dx, log10 dt_star
    p: float
    intercept: float
    residual: float

    @property
    def C(self) -> float:
        return 10.0 ** self.intercept


def fit_scaling_exponent(results) -> ScalingFit:
    """Least squares line through ``(log10 dx, log10 dt_star)``."""
    pts = np.array([(r.dx, r.dt_star) if isinstance(r, StabilityResult) else r for r in results],
                   dtype=float)
    if len(pts) < 3:
        raise DataError("need at least 3 points for a scaling fit")
    if len(np.unique(pts[:, 0])) != len(pts):
        raise DataError("dx values must be distinct")
    logs = np.log10(pts)
    X = np.column_stack([logs[:, 0], np.ones(len(logs))])
    coef, *_ = np.linalg.lstsq(X, logs[:, 1], rcond=None)
    resid = float(np.linalg.norm(X @ coef - logs[:, 1]))
    return ScalingFit(logs, float(coef[0]), float(coef[1]), resid)


@dataclass(frozen=True)
class VNCoefficients:
    C1: float
    C2: float
    C3: float
    C_alpha: float
    H_bar: float

    @classmethod
    def from_slab(cls, C_alpha, H_bar, consts: PhysicalConstants | None = None):
        c = consts or PhysicalConstants()
        k = c.A0 * c.rho_g ** 3
        return cls(0.5 * k * C_alpha ** 3 * H_bar ** 4, 1.5 * k * C_alpha ** 3 * H_bar ** 4,
                   1.2 * k * C_alpha ** 2 * H_bar ** 5, C_alpha, H_bar)


class VNBounds(NamedTuple):
    dt_advective: float
    dt_diffusive: float
    dt_bound: float


def _safe_div(a, b):
    return math.inf if b == 0 else a / b


def von_neumann_bounds(coeffs: VNCoefficients, dx: float, fssa: bool) -> VNBounds:
    """Timestep limits of the linearized slab problem.

    Without FSSA the advective limit is ``2 dx / |C2|`` and the diffusive one
    ``dx^2 / (2 C3)``. With FSSA the limit is ``dx / |C2|``. Both cases also
    take the long-wave limit ``C3 / (4 C1^2)`` so that ``dt_bound`` keeps the
    exact amplification factor at most one.
    """
    C1, C2, C3 = abs(coeffs.C1), abs(coeffs.C2), abs(coeffs.C3)
    long_wave = _safe_div(C3, 4 * C1 ** 2)
    if fssa:
        adv = _safe_div(dx, C2)
        return VNBounds(adv, math.inf, min(adv, long_wave))
    adv = _safe_div(2 * dx, C2)
    diff = _safe_div(dx ** 2, 2 * C3)
    return VNBounds(adv, diff, min(adv, diff, long_wave))


def amplification_factor(coeffs: VNCoefficients, dx, dt, n, fssa: bool):
    """|delta^{k+1} / delta^k| for wavenumber ``n`` (vectorized over ``n`` and ``dt``)."""
    s = np.sin(np.asarray(n) * dx) / dx
    sig = 4 * np.sin(np.asarray(n) * dx / 2) ** 2 / dx ** 2
    C1, C2, C3 = abs(coeffs.C1), abs(coeffs.C2), abs(coeffs.C3)
    if fssa:
        num = 1 + 1j * dt * C2 * s
        den = 1 - 1j * dt * C1 * s + dt * C3 * sig
    else:
        num = 1 - dt * C3 * sig + 1j * dt * C2 * s
        den = 1 - 1j * dt * C1 * s
    return np.abs(num) / np.abs(den)


def write_results_csv(path, rows) -> None:
    """Rows of ``(formulation, StabilityResult)``."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["formulation", "dx", "dt_star", "flag", "bisection_iterations"])
        for name, r in sorted(rows, key=lambda t: (t[0], t[1].dx)):
            w.writerow([name, repr(float(r.dx)), repr(float(r.dt_star)), r.flag, r.bisection_iterations])


def write_fit_csv(path, fits) -> None:
    """Mapping formulation -> ScalingFit."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["formulation", "p", "C", "residual"])
        for name, f in sorted(fits.items()):
            w.writerow([name, repr(float(f.p)), repr(float(f.C)), repr(float(f.residual))])
