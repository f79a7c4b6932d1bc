"""Monetary model: family TCO assembly, economy-of-scale curves, coefficient
identification from cost-by-volume data, and catalog-price prediction.

Cost rates keep their natural units (EUR/kWh for energy, EUR/kW for power);
energies and distances arrive in SI and are converted at the boundary.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import TYPE_CHECKING

import numpy as np
from scipy.optimize import least_squares

from .errors import ModsizerError

if TYPE_CHECKING:  # pragma: no cover
    from .family import FamilyArchitecture, VehicleSpec

J_PER_KWH = 3.6e6
W_PER_KW = 1e3

#: glider cost by vehicle class, EUR (2020 price level)
GLIDER_COSTS_EUR = {"city": 7996.0, "compact": 10779.0, "large": 14736.0}


@dataclass(frozen=True)
class CostParameters:
    """Scalar inputs of the monetary model."""

    c_b_year: float          # EUR/kWh, volume-independent battery cost floor
    lambda_b1: float         # EUR/kWh
    lambda_b2: float         # -
    c_m_year: float          # EUR/kW, volume-independent motor cost floor
    lambda_m1: float         # EUR/kW
    lambda_m2: float         # -
    c_e: float               # EUR/kWh energy price
    N_v: int                 # produced vehicles per type
    d_v_lt: float            # m, lifetime driving distance
    k_oh: float              # overhead fraction, acquisition = production / k_oh
    glider_costs: dict = field(default_factory=lambda: dict(GLIDER_COSTS_EUR))
    volume_mode: str = "paper-literal"  # or "aggregate"


@dataclass(frozen=True)
class CostBreakdown:
    """Per-vehicle monetary result; all money in EUR."""

    C_g: float
    C_m: float
    C_b: float
    C_p: float
    C_a: float
    C_op: float
    j_tco: float
    F_v: float  # J/m
    E_v: float  # J


def specific_cost(c_year, lambda1, lambda2, units):
    """Per-unit production cost at a given volume.

    c_year + lambda1 / (units - 1)^lambda2: strictly decreasing in the number
    of produced units and approaching c_year asymptotically.
    """
    if units < 2:
        raise ModsizerError(f"specific_cost needs units >= 2, got {units}")
    return c_year + lambda1 / (units - 1.0) ** lambda2


@dataclass(frozen=True)
class EosFit:
    lambda1: float
    lambda2: float
    residuals: np.ndarray      # per-point error in the fit domain
    rms_residual: float
    domain: str


def fit_eos(data, c_year, domain="log"):
    """Identify economy-of-scale coefficients from (units, cost) samples.

    domain="log" solves the linearized least-squares problem
    log(cost - c_year) = log(lambda1) - lambda2*log(units - 1); this is exact
    for noiseless power-law data.  domain="linear" runs a nonlinear
    least-squares fit of the cost itself, which weights expensive low-volume
    points more heavily.
    """
    pts = [(float(u), float(c)) for u, c in data]
    if len(pts) < 3:
        raise ModsizerError(f"fit_eos needs >= 3 points, got {len(pts)}")
    for u, c in pts:
        if u < 2:
            raise ModsizerError(f"fit_eos units must be >= 2, got {u}")
        if c <= c_year:
            raise ModsizerError(
                f"cost {c} at {u:.0f} units is not above the floor {c_year}")
    u = np.array([p[0] for p in pts])
    c = np.array([p[1] for p in pts])
    x = np.log(u - 1.0)
    if domain == "log":
        y = np.log(c - c_year)
        A = np.vstack([np.ones_like(x), -x]).T
        (log_l1, l2), *_ = np.linalg.lstsq(A, y, rcond=None)
        l1 = float(np.exp(log_l1))
        res = A @ (log_l1, l2) - y
    elif domain == "linear":
        def residual(p):
            return c_year + np.exp(p[0]) / (u - 1.0) ** p[1] - c
        sol = least_squares(residual, x0=(np.log(max(c.max() - c_year, 1.0)), 0.4),
                            max_nfev=10000)
        l1, l2 = float(np.exp(sol.x[0])), float(sol.x[1])
        res = residual(sol.x)
    else:
        raise ModsizerError(f"unknown fit domain {domain!r}")
    if l1 <= 0 or l2 <= 0:
        raise ModsizerError(f"fit produced non-positive coefficients ({l1}, {l2})")
    return EosFit(lambda1=l1, lambda2=float(l2), residuals=np.asarray(res),
                  rms_residual=float(np.sqrt(np.mean(np.square(res)))), domain=domain)


def motor_module_volume(N_m_i, family):
    """Produced motor-module count entering the specific-cost curve."""
    p = family.cost
    if p.volume_mode == "paper-literal":
        return N_m_i * p.N_v * family.n_vehicles
    if p.volume_mode == "aggregate":
        return int(round(p.N_v * sum(w * nm for w, (nm, _) in _mult_view(family))))
    raise ModsizerError(f"unknown volume_mode {p.volume_mode!r}")


def battery_module_volume(N_b_i, family):
    """Battery analog of motor_module_volume."""
    p = family.cost
    if p.volume_mode == "paper-literal":
        return N_b_i * p.N_v * family.n_vehicles
    if p.volume_mode == "aggregate":
        return int(round(p.N_v * sum(w * nb for w, (_, nb) in _mult_view(family))))
    raise ModsizerError(f"unknown volume_mode {p.volume_mode!r}")


def _mult_view(family):
    assignment = family.multiplicity_assignment
    if assignment is None:
        raise ModsizerError("aggregate volume mode needs a multiplicity assignment")
    return [(e.weight, cfg) for e, cfg in zip(family.vehicles, assignment)]


def vehicle_tco(spec, S_m, S_b, N_m, N_b, F_v, params, family):
    """Assemble one vehicle's cost breakdown at a fixed design point.

    Motor and battery production costs scale linearly with total installed
    power/capacity at the specific cost of the module's production volume;
    acquisition marks production up by the overhead fraction, and operation
    charges the lifetime energy at the energy price.
    """
    if F_v < 0:
        raise ModsizerError(f"negative distance-specific consumption {F_v}")
    motor = family.motor
    battery = family.battery
    tol = 1e-9
    if not (motor.S_m_min - tol <= S_m <= motor.S_m_max + tol * motor.S_m_max):
        raise ModsizerError(f"S_m={S_m} outside [{motor.S_m_min}, {motor.S_m_max}]")
    if not (battery.S_b_min - tol <= S_b <= battery.S_b_max + tol * battery.S_b_max):
        raise ModsizerError(f"S_b={S_b} outside [{battery.S_b_min}, {battery.S_b_max}]")
    c_m = specific_cost(params.c_m_year, params.lambda_m1, params.lambda_m2,
                        motor_module_volume(N_m, family))
    c_b = specific_cost(params.c_b_year, params.lambda_b1, params.lambda_b2,
                        battery_module_volume(N_b, family))
    C_g = spec.glider_cost
    C_m = c_m * S_m * N_m * motor.Pbar_mo / W_PER_KW
    C_b = c_b * S_b * N_b * battery.Ebar_bo / J_PER_KWH
    C_p = C_g + C_m + C_b
    C_a = C_p / params.k_oh
    E_v = F_v * params.d_v_lt
    C_op = E_v / J_PER_KWH * params.c_e
    return CostBreakdown(C_g=C_g, C_m=C_m, C_b=C_b, C_p=C_p, C_a=C_a,
                         C_op=C_op, j_tco=C_a + C_op, F_v=F_v, E_v=E_v)


def family_tco(per_vehicle):
    """Weighted sum of per-vehicle TCOs; weights must sum to one."""
    weights = [w for w, _ in per_vehicle]
    if abs(sum(weights) - 1.0) > 1e-9:
        raise ModsizerError(f"weights sum to {sum(weights)}, expected 1")
    return sum(w * j for w, j in per_vehicle)


def predict_price(vehicle_class, E_batt_kwh, P_motor_kw, units, params):
    """Catalog-price estimate from class, battery capacity, and motor power."""
    if vehicle_class not in params.glider_costs:
        raise ModsizerError(f"unknown vehicle class {vehicle_class!r}")
    c_m = specific_cost(params.c_m_year, params.lambda_m1, params.lambda_m2, units)
    c_b = specific_cost(params.c_b_year, params.lambda_b1, params.lambda_b2, units)
    glider = params.glider_costs[vehicle_class]
    return (glider + c_m * P_motor_kw + c_b * E_batt_kwh) / params.k_oh
