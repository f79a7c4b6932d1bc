#!/usr/bin/env python3
"""Regenerate the data files shipped with modsizer.

Everything here is deterministic. Outputs go to src/modsizer/data/ and are
mirrored to data/ at the repository root for direct inspection.

Shipped files:
  wltp_class3.csv          1 Hz speed trace approximating the WLTP class-3b
                           cycle (same duration, phase structure, phase
                           distances within ~1% and top speed 131.3 km/h).
  motor_loss_default.csv   speed-dependent loss coefficients of the reference
                           motor, from a constant + iron + copper loss model.
  tesla_family.json        four-vehicle benchmark family with reference
                           module, cost, and performance parameters.
  motor_cost_volumes.csv   peak-power-specific motor cost vs produced units.
  battery_cost_volumes.csv capacity-specific pack cost vs produced units.
"""

from __future__ import annotations

import json
import math
import shutil
from pathlib import Path

imports_ok = True
import numpy as np

ROOT = Path(__file__).resolve().parents[1]
PKG_DATA = ROOT / "src" / "modsizer" / "data"
MIRROR = ROOT / "data"


# ---------------------------------------------------------------------------
# Drive cycle
# ---------------------------------------------------------------------------

def _ramp(v0, v1, dur):
    """Half-cosine speed ramp sampled at 1 Hz; peak accel = pi*(v1-v0)/(2*dur)."""
    tau = np.arange(1, dur + 1, dtype=float)
    return v0 + (v1 - v0) * (1.0 - np.cos(np.pi * tau / dur)) / 2.0


def _cruise(v, dur, phase_shift=0.0, amp=0.4, period=45.0):
    tau = np.arange(1, dur + 1, dtype=float)
    out = v + amp * np.sin(2 * np.pi * (tau + phase_shift) / period)
    return np.maximum(out, 0.0)


def _build_phase(segments, duration, dist_target, scale_lo=0.25, scale_hi=4.0):
    """Assemble one cycle phase and calibrate cruise lengths to a distance target.

    segments: list of ('idle', s) | ('ramp', v_to_kmh, s) | ('cruise', s).
    Cruise durations are scaled by a common factor found by bisection so the
    phase distance (left-Riemann at 1 Hz) lands on dist_target; trailing idle
    pads the phase to its exact duration.
    """

    def assemble(scale):
        v = [0.0]
        shift = 0.0
        for seg in segments:
            kind = seg[0]
            if kind == "idle":
                v.extend([0.0] * seg[1])
            elif kind == "ramp":
                target = seg[1] / 3.6
                v.extend(_ramp(v[-1], target, seg[2]).tolist())
            elif kind == "cruise":
                dur = max(1, int(round(seg[1] * scale)))
                v.extend(_cruise(v[-1], dur, phase_shift=shift).tolist())
                shift += dur
            else:
                raise ValueError(kind)
        return np.asarray(v[1:])  # drop the seed sample

    def phase_distance(scale):
        vv = assemble(scale)
        if len(vv) > duration:
            vv = vv[:duration]
        return float(np.sum(vv))

    lo, hi = scale_lo, scale_hi
    for _ in range(60):
        mid = 0.5 * (lo + hi)
        if phase_distance(mid) < dist_target:
            lo = mid
        else:
            hi = mid
    vv = assemble(0.5 * (lo + hi))
    if len(vv) > duration:
        raise RuntimeError("phase overruns its duration; shorten segments")
    return np.concatenate([vv, np.zeros(duration - len(vv))])


def make_wltp_like():
    # Official class-3b phase durations/distances: 589/433/455/323 s and
    # 3095/4756/7162/8254 m, top speed 131.3 km/h.
    low = _build_phase(
        [("idle", 11), ("ramp", 40, 16), ("cruise", 40), ("ramp", 15, 14),
         ("cruise", 12), ("ramp", 0, 12), ("idle", 18),
         ("ramp", 32, 14), ("cruise", 30), ("ramp", 0, 14), ("idle", 16),
         ("ramp", 56.5, 22), ("cruise", 55), ("ramp", 25, 16), ("cruise", 20),
         ("ramp", 0, 14), ("idle", 20),
         ("ramp", 30, 13), ("cruise", 25), ("ramp", 0, 13), ("idle", 12)],
        589, 3095.0)
    med = _build_phase(
        [("idle", 4), ("ramp", 50, 18), ("cruise", 45), ("ramp", 25, 14),
         ("cruise", 16), ("ramp", 61, 16), ("cruise", 45), ("ramp", 0, 22),
         ("idle", 14), ("ramp", 76.6, 26), ("cruise", 70), ("ramp", 45, 16),
         ("cruise", 22), ("ramp", 0, 18), ("idle", 10)],
        433, 4756.0)
    high = _build_phase(
        [("idle", 4), ("ramp", 60, 20), ("cruise", 45), ("ramp", 80, 16),
         ("cruise", 65), ("ramp", 55, 16), ("cruise", 25),
         ("ramp", 97.4, 24), ("cruise", 95), ("ramp", 60, 18), ("cruise", 25),
         ("ramp", 0, 22), ("idle", 8)],
        455, 7162.0)
    xhigh = _build_phase(
        [("idle", 3), ("ramp", 85, 24), ("cruise", 35), ("ramp", 110, 18),
         ("cruise", 55), ("ramp", 95, 12), ("cruise", 18),
         ("ramp", 131.3, 24), ("cruise", 50), ("ramp", 0, 34), ("idle", 4)],
        323, 8254.0)

    v = np.concatenate([low, med, high, xhigh])
    v = np.concatenate([[0.0], v])  # t = 0 sample
    v = np.minimum(v, 131.3 / 3.6)  # cruise wiggle must not exceed the cycle top speed
    assert len(v) == 1801
    a = np.diff(v)
    assert np.abs(a).max() <= 1.75, f"accel bound violated: {np.abs(a).max():.2f}"
    assert abs(v.max() - 131.3 / 3.6) < 1e-9
    d = float(np.sum(v[:-1]))
    assert abs(d - 23267.0) / 23267.0 < 0.02, d
    return v, d


# ---------------------------------------------------------------------------
# Reference motor loss coefficients
# ---------------------------------------------------------------------------

# Loss model for the unit-scale reference machine (89.38 kW peak, rated
# 418.88 rad/s):  loss(w, P) = P0(w) + beta(w)*P + alpha(w)*P^2 with
#   P0    = P_const + k_hyst*w + k_eddy*w^2      (electronics + iron)
#   beta  = beta0                                (proportional stray/switching)
#   alpha = k_cu / max(w, w_floor)^2             (copper, torque-driven)
MOTOR_LOSS_CONSTANTS = {
    "P_const": 120.0,      # W
    "k_hyst": 0.32,        # W/(rad/s)
    "k_eddy": 6.0e-4,      # W/(rad/s)^2
    "beta0": 0.014,        # -
    "k_cu": 0.052,         # (rad/s)^2/W
    "w_floor": 125.0,      # rad/s, keeps alpha finite near standstill
}


def make_motor_loss_table():
    c = MOTOR_LOSS_CONSTANTS
    omega = np.arange(0.0, 1450.0, 50.0)
    p0 = c["P_const"] + c["k_hyst"] * omega + c["k_eddy"] * omega ** 2
    beta = np.full_like(omega, c["beta0"])
    alpha = c["k_cu"] / np.maximum(omega, c["w_floor"]) ** 2
    return np.column_stack([omega, p0, beta, alpha])


# ---------------------------------------------------------------------------
# Battery short-circuit-power PWA segments
# ---------------------------------------------------------------------------

# Equivalent circuit of the unit-scale 23.48 kWh reference module with a
# linear open-circuit voltage V_oc(xi) = V0 + V1*xi and internal resistance
# R0; scaling S_b adds strings in parallel (R = R0/S_b, capacity ~ S_b), so
# P_sc(E_b, S_b) = S_b * (V0 + V1*E_b/(S_b*E_ref))^2 / R0.  Tangent planes at
# xi anchors give the concave PWA under-approximation min_k(a_k*E_b + b_k*S_b).
BATTERY_CIRCUIT = {"V0": 340.0, "V1": 20.0, "R0": 0.06125, "xi_anchors": (0.15, 0.5, 0.85)}
E_REF_J = 23.48 * 3.6e6


def make_battery_pwa():
    V0, V1, R0 = BATTERY_CIRCUIT["V0"], BATTERY_CIRCUIT["V1"], BATTERY_CIRCUIT["R0"]
    segs = []
    for xi in BATTERY_CIRCUIT["xi_anchors"]:
        dg = 2.0 * V1 * (V0 + V1 * xi) / R0            # dP_sc/dxi at S_b = 1
        a = dg / E_REF_J                               # W per J of module energy
        b = (V0 ** 2 - (V1 * xi) ** 2) / R0           # W per unit size
        segs.append((a, b))
    return segs


# ---------------------------------------------------------------------------
# Benchmark family
# ---------------------------------------------------------------------------

def make_family_json():
    vehicles = []
    rows = [
        # name, m_g, m_p, A_f, c_d, r_w, t_a, v_t, d_r
        ("Model S", 1105.0, 0.0, 2.34, 0.24, 0.3518, 3.3, 261.0, 460.0),
        ("Model 3", 1069.0, 0.0, 2.20, 0.23, 0.3353, 6.1, 225.0, 405.0),
        ("Model X", 1328.0, 500.0, 2.59, 0.24, 0.3759, 3.9, 262.0, 455.0),
        ("Model Y", 1205.0, 500.0, 2.66, 0.23, 0.3560, 6.9, 217.0, 350.0),
    ]
    for name, m_g, m_p, a_f, c_d, r_w, t_a, v_t, d_r in rows:
        vehicles.append({
            "name": name,
            "weight": 0.25,
            "m_g_kg": m_g,
            "m_p_kg": m_p,
            "m_d_kg": 80.0,
            "eta_gb": 0.98,
            "eta_inv": 0.96,
            "r_w_m": r_w,
            "c_r": 0.007,
            "c_d": c_d,
            "A_f_m2": a_f,
            "P_aux_W": 500.0,
            "glider_cost_eur": 14736.0,
            "performance": {
                "t_a_max_s": t_a,
                "v_f_kmh": 100.0,
                "v_t_min_kmh": v_t,
                "v_m_min_kmh": 10.0,
                "grade_min_pct": 25.0,
                "d_r_min_km": d_r,
            },
        })
    pwa = make_battery_pwa()
    return {
        "vehicles": vehicles,
        "motor": {
            "m_mo_kg": 81.6,
            "Pbar_mo_kW": 89.38,
            "omega_r_rad_s": 418.88,
            "gamma": 9.01,
            "r_fwd": 0.6,
            "r_awd": 1.0,
            "S_m_min": 0.25,
            "S_m_max": 4.0,
            "loss_table_csv": "motor_loss_default.csv",
        },
        "battery": {
            "m_bo_kg": 138.6,
            "Ebar_bo_kWh": 23.48,
            "xi_min": 0.1,
            "xi_max": 0.9,
            "S_b_min": 0.25,
            "S_b_max": 4.0,
            "pwa_segments": [[a, b] for a, b in pwa],
        },
        "cost": {
            "c_b_year_eur_kwh": 79.0,
            "lambda_b1": 3911.0,
            "lambda_b2": 0.3278,
            "c_m_year_eur_kw": 2.2,
            "lambda_m1": 537.0,
            "lambda_m2": 0.4524,
            "c_e_eur_kwh": 0.4,
            "N_v": 200000,
            "d_v_lt_km": 200000.0,
            "k_oh": 0.5350,
            "glider_costs_eur": {"city": 7996.0, "compact": 10779.0, "large": 14736.0},
            "volume_mode": "paper-literal",
        },
        "multiplicities": {"M": [1, 2], "B": [1, 2, 3]},
    }


# ---------------------------------------------------------------------------
# Cost-by-volume tables
# ---------------------------------------------------------------------------

MOTOR_COST_VOLUMES = [
    (2000, 39.40), (2000, 30.75), (2000, 25.95),
    (20000, 20.71), (20000, 17.14), (20000, 15.15), (20000, 13.72),
    (20000, 12.62), (20000, 12.01),
    (200000, 15.48), (200000, 13.10), (200000, 11.78), (200000, 11.29),
    (200000, 10.47), (200000, 10.02),
]

BATTERY_COST_VOLUMES = [
    (1750, 492), (2500, 250), (8625, 396), (12500, 210), (20000, 254),
    (25000, 195), (30000, 224), (35000, 191), (45000, 208), (50000, 171),
    (95000, 164), (237500, 157), (550000, 124), (850000, 96),
]


def main():
    PKG_DATA.mkdir(parents=True, exist_ok=True)

    v, d = make_wltp_like()
    with open(PKG_DATA / "wltp_class3.csv", "w") as fh:
        fh.write("t,v\n")
        for k, vv in enumerate(v):
            fh.write(f"{k},{vv:.4f}\n")
    print(f"wltp_class3.csv: {len(v)} samples, {d:.0f} m, "
          f"vmax {v.max() * 3.6:.1f} km/h")

    table = make_motor_loss_table()
    with open(PKG_DATA / "motor_loss_default.csv", "w") as fh:
        fh.write("omega,P0,beta,alpha\n")
        for w, p0, b, al in table:
            fh.write(f"{w:.1f},{p0:.4f},{b:.6f},{al:.9e}\n")
    print(f"motor_loss_default.csv: {len(table)} rows")

    fam = make_family_json()
    with open(PKG_DATA / "tesla_family.json", "w") as fh:
        json.dump(fam, fh, indent=2)
        fh.write("\n")
    print("tesla_family.json written")

    for name, rows in [("motor_cost_volumes.csv", MOTOR_COST_VOLUMES),
                       ("battery_cost_volumes.csv", BATTERY_COST_VOLUMES)]:
        with open(PKG_DATA / name, "w") as fh:
            fh.write("units,cost\n")
            for u, c in rows:
                fh.write(f"{u},{c}\n")
    print("cost volume tables written")

    MIRROR.mkdir(exist_ok=True)
    for f in PKG_DATA.iterdir():
        shutil.copy2(f, MIRROR / f.name)
    print(f"mirrored to {MIRROR}")


if __name__ == "__main__":
    main()
