"""Asymptotic cost estimates for a full simulation with each momentum model.

Cost of reaching a fixed final time with ``m`` horizontal nodes is
``prefactor * C * m^(1 + gamma/(d-1) + alpha)``, where ``gamma`` is the
timestep restriction exponent and ``alpha`` the linear solver exponent.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, replace

import numpy as np
import sympy

from .momentum import ConfigError
from .stability import DataError

alpha_sym, gamma_sym, d_sym, m_sym, n_iter_sym = sympy.symbols("alpha gamma d m N_iter", positive=True)

COST_MODELS = ("W-Stokes", "W-Stokes-FSSA", "W-SIAStokes", "W-SIAStokes-FSSA",
               "W-SIA", "W-SIA-FSSA", "SIA")

# worst-case restriction exponents observed across the benchmarks
DEFAULT_GAMMA = {"W-Stokes": 1, "W-Stokes-FSSA": 1, "W-SIAStokes": 1, "W-SIAStokes-FSSA": 1,
                 "W-SIA": 2, "W-SIA-FSSA": 1, "SIA": 2}


@dataclass(frozen=True)
class CostInputs:
    m: float
    d: int = 3
    alpha: float = 1.0
    gamma: float | None = None
    N_iter: float = 1.0
    C_S: float = 1.0
    C_SIA: float = 1.0

    def __post_init__(self):
        if self.m < 1:
            raise ValueError("m must be at least 1")
        if self.d not in (2, 3):
            raise ValueError("d must be 2 or 3")
        if self.gamma is not None and self.gamma < 0:
            raise ValueError("gamma must be non-negative")
        if self.N_iter < 1:
            raise ValueError("N_iter must be at least 1")


def _check(formulation):
    if formulation not in COST_MODELS:
        raise ConfigError(f"unknown formulation {formulation!r}; expected one of {COST_MODELS}")


def prefactor_expression(formulation: str):
    """Symbolic prefactor in terms of ``d``, ``alpha``, ``N_iter`` and the constants."""
    _check(formulation)
    C_S, C_SIA = sympy.symbols("C_S C_SIA", positive=True)
    if formulation == "SIA":
        return C_SIA
    if formulation.startswith("W-Stokes"):
        return C_S
    if formulation == "W-SIA":
        return (d_sym + 1) / (d_sym + 1) ** (1 + alpha_sym) / n_iter_sym * C_S
    return C_S / n_iter_sym


def exponent_expression(formulation: str, d=None, gamma=None):
    """Exponent of ``m``; substitutes ``d`` and ``gamma`` when given, keeps ``alpha`` symbolic."""
    _check(formulation)
    g = gamma_sym if gamma is None else sympy.nsimplify(gamma)
    dd = d_sym if d is None else sympy.Integer(d)
    expo = 1 + g / (dd - 1)
    if formulation != "SIA":
        expo += alpha_sym
    return sympy.simplify(expo)


def cost_exponent(formulation: str, inputs: CostInputs) -> float:
    gamma = DEFAULT_GAMMA[formulation] if inputs.gamma is None else inputs.gamma
    expo = 1 + gamma / (inputs.d - 1)
    return expo if formulation == "SIA" else expo + inputs.alpha


def estimate_cost(formulation: str, inputs: CostInputs) -> float:
    """Work units for one simulation to a fixed final time."""
    _check(formulation)
    d, a, n = inputs.d, inputs.alpha, inputs.N_iter
    if formulation == "SIA":
        pre = inputs.C_SIA
    elif formulation.startswith("W-Stokes"):
        pre = inputs.C_S
    elif formulation == "W-SIA":
        pre = (d + 1) / (d + 1) ** (1 + a) / n * inputs.C_S
    else:
        pre = inputs.C_S / n
    return pre * inputs.m ** cost_exponent(formulation, inputs)


@dataclass(frozen=True)
class Calibration:
    C_S: float
    C_SIA: float
    log_residual_S: float
    log_residual_SIA: float


def calibrate_constants(measured, template: CostInputs | None = None) -> Calibration:
    """Fit ``C_S`` and ``C_SIA`` from ``(formulation, m, runtime)`` triples.

    Each constant is the geometric-mean ratio of runtime to unit-constant cost,
    i.e. the least-squares fit in log space; residuals are RMS log10 errors.
    """
    template = template or CostInputs(m=2)
    groups = {"S": [], "SIA": []}
    for formulation, m, runtime in measured:
        unit = estimate_cost(formulation, replace(template, m=m, C_S=1.0, C_SIA=1.0))
        key = "SIA" if formulation == "SIA" else "S"
        groups[key].append(math.log10(runtime) - math.log10(unit))
    out = {}
    for key, vals in groups.items():
        if len(vals) == 0:
            out[key] = (math.nan, math.nan)
            continue
        if len(vals) < 2:
            raise DataError(f"need at least 2 measurements to calibrate C_{key}")
        v = np.array(vals)
        c = v.mean()
        out[key] = (10.0 ** c, float(np.sqrt(np.mean((v - c) ** 2))))
    if all(math.isnan(v[0]) for v in out.values()):
        raise DataError("no measurements")
    return Calibration(out["S"][0], out["SIA"][0], out["S"][1], out["SIA"][1])


def fit_runtime_exponent(ms, runtimes) -> float:
    """Slope of log runtime against log m."""
    ms, rt = np.asarray(ms, dtype=float), np.asarray(runtimes, dtype=float)
    if len(ms) < 2:
        raise DataError("need at least 2 points")
    return float(np.polyfit(np.log10(ms), np.log10(rt), 1)[0])


def cost_table(d=3, gammas=None):
    """Rows ``(model, gamma, formula, evaluated exponent)`` with alpha left symbolic."""
    gammas = {**DEFAULT_GAMMA, **(gammas or {})}
    rows = []
    for name in COST_MODELS:
        g = gammas[name]
        formula = prefactor_expression(name) * m_sym ** exponent_expression(name)
        rows.append((name, g, formula, exponent_expression(name, d=d, gamma=g)))
    return rows


def write_cost_table(path, d=3, gammas=None) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["model", "gamma", "formula", "evaluated_exponent"])
        for name, g, formula, expo in cost_table(d, gammas):
            w.writerow([name, g, sympy.sstr(formula), sympy.sstr(expo)])
