"""Quasi-static powertrain physics in non-relaxed form.

This module is the ground truth the convex formulation is checked against:
the forward simulator chains the exact component equations (no relaxations)
along a drive cycle and reports the distance-specific consumption.  At the
optimum of the relaxed program the two must agree, since every relaxed
inequality is tight there.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import InfeasibleDemandError, PerformanceError, SimulationError

G = 9.81        # m/s^2
RHO_AIR = 1.2041  # kg/m^3 at 20 degC, sea level


@dataclass(frozen=True)
class DesignPoint:
    """Shared sizes plus one vehicle's module counts."""

    S_m: float
    S_b: float
    N_m: int
    N_b: int

    def total_power(self, motor):
        return self.S_m * self.N_m * motor.Pbar_mo

    def total_energy(self, battery):
        return self.S_b * self.N_b * battery.Ebar_bo

    def mass(self, spec, motor, battery):
        return total_mass(spec, self.S_m, self.S_b, self.N_m, self.N_b,
                          motor, battery)


@dataclass(frozen=True)
class Trajectory:
    """Per-timestep operating point of one vehicle on a cycle.

    Power entries are per module (P_m, P_ac motor side; P_b, P_i, P_sc
    battery side); E_tot is the whole pack.
    """

    t: np.ndarray
    omega: np.ndarray
    P_v: np.ndarray
    P_m: np.ndarray
    P_ac: np.ndarray
    P_b: np.ndarray
    P_i: np.ndarray
    P_sc: np.ndarray
    E_tot: np.ndarray  # one sample longer than the power arrays


def wheel_power(spec, m, v, a, theta):
    """Required power at the wheels for one operating point (W)."""
    return (m * v * (spec.c_r * G * math.cos(theta) + G * math.sin(theta) + a)
            + 0.5 * RHO_AIR * spec.c_d * spec.A_f * v ** 3)


def total_mass(spec, S_m, S_b, N_m, N_b, motor, battery):
    """Vehicle mass: glider + driver + payload + scaled modules (kg)."""
    return (spec.m_g + spec.m_d + spec.m_p
            + motor.m_mo * S_m * N_m + battery.m_bo * S_b * N_b)


def motor_speed(v, r_w, gamma):
    """Motor shaft speed through the fixed gear (rad/s)."""
    return gamma * v / r_w


def em_loss(P_m, S_m, omega, motor):
    """Losses of one motor module of scale S_m at shaft power P_m (W)."""
    if S_m <= 0:
        raise SimulationError(f"motor scale must be positive, got {S_m}")
    p0, beta, alpha = motor.loss_coeffs(omega)
    return p0 * S_m + beta * P_m + alpha * P_m ** 2 / S_m


def regen_fraction(N_m, motor):
    """Topology map: one module drives the front axle, two drive all wheels."""
    if N_m == 1:
        return motor.r_fwd
    if N_m == 2:
        return motor.r_awd
    raise SimulationError(f"no topology defined for N_m = {N_m}")


def transmission_split(P_v, N_m, eta_gb, r_b):
    """Per-module mechanical power demanded from each motor (W)."""
    if N_m < 1:
        raise SimulationError(f"N_m must be >= 1, got {N_m}")
    if P_v >= 0:
        return P_v / (eta_gb * N_m)
    return r_b * eta_gb * P_v / N_m


def short_circuit_power(E_b, S_b, battery):
    """PWA short-circuit power of one module holding energy E_b (W)."""
    segs = battery.pwa_segments
    return float(np.min(segs[:, 0] * E_b + segs[:, 1] * S_b))


def battery_internal_power(P_b, P_sc):
    """Internal (chemical) power delivering electrical power P_b (W).

    Smaller root of P_i = P_b + P_i^2 / P_sc; fails when the demand exceeds
    the deliverable maximum P_sc / 4.
    """
    if P_sc <= 0:
        raise SimulationError(f"short-circuit power must be positive, got {P_sc}")
    disc = 1.0 - 4.0 * P_b / P_sc
    if disc < 0:
        raise InfeasibleDemandError(
            f"demand {P_b:.1f} W exceeds deliverable maximum {P_sc / 4:.1f} W")
    return 0.5 * P_sc * (1.0 - math.sqrt(disc))


def short_circuit_from_circuit(V_oc, R_i):
    """Short-circuit power of the equivalent battery circuit (W)."""
    if R_i <= 0:
        raise SimulationError(f"internal resistance must be positive, got {R_i}")
    return V_oc ** 2 / R_i


def check_performance(design, spec, perf, motor, battery, rtol=1e-9):
    """Static performance violations of a design point (empty list = pass).

    Covers acceleration time, top speed, and both gradability requirements;
    range depends on the cycle consumption and is checked by callers.
    """
    m = design.mass(spec, motor, battery)
    cap = design.S_m * design.N_m
    out = []

    t_need = acceleration_time(m, cap, spec, perf, motor)
    if t_need > perf.t_a_max * (1 + rtol):
        out.append(f"acceleration time {t_need:.3f} s exceeds {perf.t_a_max} s")
    v_t = top_speed(cap, spec, motor)
    if v_t < perf.v_t_min * (1 - rtol):
        out.append(f"top speed {v_t * 3.6:.1f} km/h below {perf.v_t_min * 3.6:.1f}")
    p_need = m * G * perf.v_m_min * math.sin(perf.theta_min)
    if cap * motor.Pbar_mo < p_need * (1 - rtol):
        out.append("insufficient power for the required climb")
    t_need_nm = m * G * spec.r_w * math.sin(perf.theta_min)
    if cap * motor.Tbar_mo * motor.gamma < t_need_nm * (1 - rtol):
        out.append("insufficient torque for the required launch grade")
    return out


def acceleration_time(m, cap, spec, perf, motor):
    """Standing-start time to v_f: torque-limited to base speed, then
    power-limited (kinetic-energy balance)."""
    v_b = motor.omega_r * spec.r_w / motor.gamma
    if perf.v_f <= v_b:
        # never leaves the constant-torque region
        return m * perf.v_f * spec.r_w / (motor.Tbar_mo * motor.gamma) / cap
    t_torque = motor.omega_r * spec.r_w ** 2 * m / (motor.Tbar_mo * motor.gamma ** 2)
    t_power = m * (perf.v_f ** 2 - v_b ** 2) / (2.0 * motor.Pbar_mo)
    return (t_torque + t_power) / cap


def acceleration_capacity_coeff(spec, perf, motor):
    """Per-kg factor C with accel constraint N_m*S_m*t_a_max >= C*m."""
    v_b = motor.omega_r * spec.r_w / motor.gamma
    if perf.v_f <= v_b:
        return perf.v_f * spec.r_w / (motor.Tbar_mo * motor.gamma)
    return (motor.omega_r * spec.r_w ** 2 / (motor.Tbar_mo * motor.gamma ** 2)
            + (perf.v_f ** 2 - v_b ** 2) / (2.0 * motor.Pbar_mo))


def top_speed(cap, spec, motor):
    """Aero-drag-limited top speed at installed power cap*Pbar_mo (m/s)."""
    return (cap * motor.Pbar_mo / (0.5 * RHO_AIR * spec.c_d * spec.A_f)) ** (1.0 / 3.0)


def achieved_range(design, battery, F_v):
    """Range over the usable state-of-charge window at consumption F_v (m)."""
    usable = (battery.xi_max - battery.xi_min) * design.total_energy(battery)
    return usable / F_v if F_v > 0 else math.inf


def forward_simulate(design, spec, cycle, motor, battery, *, perf=None,
                     boundary="full", strict_power_bounds=False,
                     bound_rtol=1e-7):
    """Run the exact component chain over a cycle.

    Returns (Trajectory, F_v).  When perf is given, the static performance
    requirements are checked before simulating.  boundary="full" starts the
    pack at the top of the usable window; boundary="centered" iterates the
    start level so that E(0) + E(T) equals the window midpoint sum used by
    the convex program.

    Regenerative power beyond the motor limit spills to the friction brakes
    unless strict_power_bounds is set; traction beyond the limit is always an
    error, as is exceeding the battery's deliverable power or leaving the
    energy window.
    """
    if cycle.d <= 0:
        raise SimulationError("zero distance: cycle covers no ground")
    if perf is not None:
        problems = check_performance(design, spec, perf, motor, battery)
        if problems:
            raise PerformanceError("; ".join(problems))

    cap_tot = design.total_energy(battery)
    e_hi = battery.xi_max * cap_tot
    e_lo = battery.xi_min * cap_tot

    if boundary == "full":
        traj = _simulate_from(e_hi, design, spec, cycle, motor, battery,
                              strict_power_bounds, bound_rtol, e_lo, e_hi)
    elif boundary == "centered":
        target_sum = (battery.xi_max + battery.xi_min) * cap_tot
        e0 = 0.5 * (target_sum)
        for _ in range(8):
            traj = _simulate_from(e0, design, spec, cycle, motor, battery,
                                  strict_power_bounds, bound_rtol, e_lo, e_hi,
                                  window_check=False)
            drain = traj.E_tot[0] - traj.E_tot[-1]
            e0_new = 0.5 * (target_sum + drain)
            if abs(e0_new - e0) <= 1e-9 * max(1.0, cap_tot):
                e0 = e0_new
                break
            e0 = e0_new
        traj = _simulate_from(e0, design, spec, cycle, motor, battery,
                              strict_power_bounds, bound_rtol, e_lo, e_hi)
    else:
        raise SimulationError(f"unknown boundary mode {boundary!r}")

    F_v = (traj.E_tot[0] - traj.E_tot[-1]) / cycle.d
    return traj, F_v


def _simulate_from(e0, design, spec, cycle, motor, battery,
                   strict, bound_rtol, e_lo, e_hi, window_check=True):
    n = cycle.n_steps
    S_m, S_b, N_m, N_b = design.S_m, design.S_b, design.N_m, design.N_b
    m = design.mass(spec, motor, battery)
    r_b = regen_fraction(N_m, motor)
    p_cap = S_m * motor.Pbar_mo

    omega = motor_speed(cycle.v, spec.r_w, motor.gamma)
    p0s, betas, alphas = motor.loss_coeffs(omega)

    P_v = np.empty(n)
    P_m = np.empty(n)
    P_ac = np.empty(n)
    P_b = np.empty(n)
    P_i = np.empty(n)
    P_sc = np.empty(n)
    E = np.empty(n + 1)
    E[0] = e0
    win_tol = bound_rtol * max(e_hi, 1.0)

    for k in range(n):
        pv = wheel_power(spec, m, cycle.v[k], cycle.a[k], cycle.theta[k])
        pm = transmission_split(pv, N_m, spec.eta_gb, r_b)
        if pm > p_cap * (1 + bound_rtol):
            raise SimulationError(
                f"traction demand {pm:.0f} W exceeds motor limit {p_cap:.0f} W "
                f"at t = {cycle.t[k]:.0f} s")
        if pm < -p_cap:
            if strict:
                raise SimulationError(
                    f"regen demand {pm:.0f} W exceeds motor limit at "
                    f"t = {cycle.t[k]:.0f} s")
            pm = -p_cap  # friction brakes absorb the excess
        loss = p0s[k] * S_m + betas[k] * pm + alphas[k] * pm ** 2 / S_m
        pac = pm + loss
        if pac >= 0:
            pb = (pac * N_m / spec.eta_inv + spec.P_aux) / N_b
        else:
            pb = (spec.eta_inv * pac * N_m + spec.P_aux) / N_b
        psc = short_circuit_power(E[k] / N_b, S_b, battery)
        try:
            pi = battery_internal_power(pb, psc)
        except InfeasibleDemandError as exc:
            raise InfeasibleDemandError(f"{exc} at t = {cycle.t[k]:.0f} s")
        E[k + 1] = E[k] - cycle.dt * N_b * pi
        if window_check and not (e_lo - win_tol <= E[k + 1] <= e_hi + win_tol):
            raise SimulationError(
                f"energy {E[k + 1]:.0f} J leaves the window "
                f"[{e_lo:.0f}, {e_hi:.0f}] at t = {cycle.t[k + 1]:.0f} s")
        P_v[k], P_m[k], P_ac[k], P_b[k], P_i[k], P_sc[k] = pv, pm, pac, pb, pi, psc

    return Trajectory(t=cycle.t[:n].copy(), omega=omega[:n].copy(), P_v=P_v,
                      P_m=P_m, P_ac=P_ac, P_b=P_b, P_i=P_i, P_sc=P_sc, E_tot=E)
