"""Problem-instance data model: vehicles, performance requirements, reference
modules, multiplicity sets, and cost parameters.

Config files use everyday units (km/h, kWh, km, % grade); everything is
normalized to SI once at load.  Instances are immutable after loading and can
be shared freely across parallel workers.
"""

from __future__ import annotations

import csv
import dataclasses
import io
import json
import math
from dataclasses import dataclass
from importlib import resources
from pathlib import Path

import numpy as np

from .costs import CostParameters, GLIDER_COSTS_EUR
from .errors import SchemaError, ValidationError

KMH = 1.0 / 3.6
J_PER_KWH = 3.6e6
KM = 1e3
W_PER_KW = 1e3


def _packaged(name):
    return resources.files("modsizer.data").joinpath(name)


@dataclass(frozen=True)
class ReferenceMotor:
    """Reference electric-machine module; sizes scale it linearly."""

    loss_coeff_table: np.ndarray  # rows (omega rad/s, P0 W, beta -, alpha 1/W)
    m_mo: float                   # kg
    Pbar_mo: float                # W, peak power at unit scale
    omega_r: float                # rad/s, rated speed
    gamma: float                  # fixed gear ratio
    r_fwd: float                  # regen fraction, single-module topology
    r_awd: float                  # regen fraction, two-module topology
    S_m_min: float
    S_m_max: float

    @property
    def Tbar_mo(self):
        """Peak reference torque, N*m."""
        return self.Pbar_mo / self.omega_r

    def loss_coeffs(self, omega):
        """(P0, beta, alpha) linearly interpolated in speed, clamped at the ends."""
        t = self.loss_coeff_table
        w = np.clip(omega, t[0, 0], t[-1, 0])
        p0 = np.interp(w, t[:, 0], t[:, 1])
        beta = np.interp(w, t[:, 0], t[:, 2])
        alpha = np.interp(w, t[:, 0], t[:, 3])
        return p0, beta, alpha


@dataclass(frozen=True)
class ReferenceBattery:
    """Reference battery module with PWA short-circuit-power coefficients."""

    pwa_segments: np.ndarray  # rows (a_k W/J, b_k W)
    m_bo: float               # kg
    Ebar_bo: float            # J at unit scale
    xi_min: float             # usable state-of-charge window
    xi_max: float
    S_b_min: float
    S_b_max: float


@dataclass(frozen=True)
class VehicleSpec:
    name: str
    m_g: float       # kg glider
    m_p: float       # kg payload
    m_d: float       # kg driver
    eta_gb: float
    eta_inv: float
    r_w: float       # m
    c_r: float
    c_d: float
    A_f: float       # m^2
    P_aux: float     # W
    glider_cost: float  # EUR


@dataclass(frozen=True)
class PerformanceReq:
    t_a_max: float    # s, 0 to v_f
    v_f: float        # m/s
    v_t_min: float    # m/s required top speed
    v_m_min: float    # m/s required uphill speed
    theta_min: float  # rad
    d_r_min: float    # m required range


@dataclass(frozen=True)
class VehicleEntry:
    spec: VehicleSpec
    perf: PerformanceReq
    weight: float


@dataclass(frozen=True)
class FamilyArchitecture:
    """Full problem instance."""

    vehicles: tuple          # of VehicleEntry
    motor: ReferenceMotor
    battery: ReferenceBattery
    M: tuple                 # admissible motor multiplicities
    B: tuple                 # admissible battery multiplicities
    cost: CostParameters
    multiplicity_assignment: tuple | None = None  # per-vehicle (N_m, N_b)

    @property
    def n_vehicles(self):
        return len(self.vehicles)

    def with_multiplicities(self, config):
        return dataclasses.replace(self, multiplicity_assignment=tuple(config))

    def with_cost(self, cost):
        return dataclasses.replace(self, cost=cost)


# ---------------------------------------------------------------------------
# Loading
# ---------------------------------------------------------------------------

_VEHICLE_DEFAULTS = {"m_p_kg": 0.0, "m_d_kg": 80.0, "eta_gb": 0.98,
                     "eta_inv": 0.96, "P_aux_W": 500.0}
_MOTOR_DEFAULTS = {"r_fwd": 0.6, "r_awd": 1.0, "S_m_min": 0.25, "S_m_max": 4.0}
_BATTERY_DEFAULTS = {"xi_min": 0.1, "xi_max": 0.9, "S_b_min": 0.25, "S_b_max": 4.0}


def _req(obj, key, where):
    if key not in obj:
        raise SchemaError("required field missing", field=f"{where}.{key}")
    return obj[key]


def _num(obj, key, where, default=None):
    if key not in obj:
        if default is None:
            raise SchemaError("required field missing", field=f"{where}.{key}")
        return float(default)
    val = obj[key]
    if not isinstance(val, (int, float)) or isinstance(val, bool):
        raise SchemaError(f"expected a number, got {val!r}", field=f"{where}.{key}")
    return float(val)


def _quantity(obj, si_key, human_key, factor, where, default=None, arctan_pct=False):
    """Fetch a value given either as SI (si_key) or in everyday units."""
    if si_key in obj and human_key in obj:
        raise SchemaError("both SI and non-SI variants present",
                          field=f"{where}.{si_key}")
    if si_key in obj:
        return _num(obj, si_key, where)
    if human_key in obj:
        raw = _num(obj, human_key, where)
        return math.atan(raw / 100.0) if arctan_pct else raw * factor
    if default is None:
        raise SchemaError("required field missing", field=f"{where}.{human_key}")
    return float(default)


def _load_loss_table_csv(source):
    text = source.read_text() if hasattr(source, "read_text") else Path(source).read_text()
    rows = list(csv.reader(io.StringIO(text)))
    if not rows or [c.strip() for c in rows[0]] != ["omega", "P0", "beta", "alpha"]:
        raise SchemaError("loss table header must be omega,P0,beta,alpha",
                          field="motor.loss_table_csv")
    try:
        data = np.array([[float(x) for x in r] for r in rows[1:] if r], dtype=float)
    except ValueError as exc:
        raise SchemaError(f"non-numeric loss-table entry: {exc}",
                          field="motor.loss_table_csv")
    if data.size == 0:
        raise SchemaError("loss table is empty", field="motor.loss_table_csv")
    return data


def _parse_vehicle(obj, idx):
    where = f"vehicles[{idx}]"
    name = obj.get("name", f"vehicle{idx}")
    spec = VehicleSpec(
        name=name,
        m_g=_num(obj, "m_g_kg", where),
        m_p=_num(obj, "m_p_kg", where, _VEHICLE_DEFAULTS["m_p_kg"]),
        m_d=_num(obj, "m_d_kg", where, _VEHICLE_DEFAULTS["m_d_kg"]),
        eta_gb=_num(obj, "eta_gb", where, _VEHICLE_DEFAULTS["eta_gb"]),
        eta_inv=_num(obj, "eta_inv", where, _VEHICLE_DEFAULTS["eta_inv"]),
        r_w=_num(obj, "r_w_m", where),
        c_r=_num(obj, "c_r", where),
        c_d=_num(obj, "c_d", where),
        A_f=_num(obj, "A_f_m2", where),
        P_aux=_num(obj, "P_aux_W", where, _VEHICLE_DEFAULTS["P_aux_W"]),
        glider_cost=_num(obj, "glider_cost_eur", where),
    )
    pobj = _req(obj, "performance", where)
    pwhere = f"{where}.performance"
    perf = PerformanceReq(
        t_a_max=_num(pobj, "t_a_max_s", pwhere),
        v_f=_quantity(pobj, "v_f_ms", "v_f_kmh", KMH, pwhere),
        v_t_min=_quantity(pobj, "v_t_min_ms", "v_t_min_kmh", KMH, pwhere),
        v_m_min=_quantity(pobj, "v_m_min_ms", "v_m_min_kmh", KMH, pwhere),
        theta_min=_quantity(pobj, "theta_min_rad", "grade_min_pct", None, pwhere,
                            arctan_pct=True),
        d_r_min=_quantity(pobj, "d_r_min_m", "d_r_min_km", KM, pwhere),
    )
    weight = _num(obj, "weight", where)
    return VehicleEntry(spec=spec, perf=perf, weight=weight)


def _parse_motor(obj, base_dir):
    where = "motor"
    if "loss_table" in obj:
        try:
            table = np.array(obj["loss_table"], dtype=float)
        except (TypeError, ValueError):
            raise SchemaError("loss_table must be numeric rows", field="motor.loss_table")
        if table.ndim != 2 or table.shape[1] != 4:
            raise SchemaError("loss_table rows must be (omega, P0, beta, alpha)",
                              field="motor.loss_table")
    else:
        csv_name = obj.get("loss_table_csv", "motor_loss_default.csv")
        path = Path(base_dir) / csv_name if base_dir is not None else Path(csv_name)
        source = path if path.exists() else _packaged(csv_name)
        table = _load_loss_table_csv(source)
    return ReferenceMotor(
        loss_coeff_table=table,
        m_mo=_num(obj, "m_mo_kg", where),
        Pbar_mo=_quantity(obj, "Pbar_mo_W", "Pbar_mo_kW", W_PER_KW, where),
        omega_r=_num(obj, "omega_r_rad_s", where),
        gamma=_num(obj, "gamma", where),
        r_fwd=_num(obj, "r_fwd", where, _MOTOR_DEFAULTS["r_fwd"]),
        r_awd=_num(obj, "r_awd", where, _MOTOR_DEFAULTS["r_awd"]),
        S_m_min=_num(obj, "S_m_min", where, _MOTOR_DEFAULTS["S_m_min"]),
        S_m_max=_num(obj, "S_m_max", where, _MOTOR_DEFAULTS["S_m_max"]),
    )


def _parse_battery(obj):
    where = "battery"
    segs = obj.get("pwa_segments")
    if segs is None:
        segs = _benchmark_raw()["battery"]["pwa_segments"]
    try:
        pwa = np.array(segs, dtype=float)
    except (TypeError, ValueError):
        raise SchemaError("pwa_segments must be numeric rows",
                          field="battery.pwa_segments")
    if pwa.ndim != 2 or pwa.shape[1] != 2:
        raise SchemaError("pwa_segments rows must be (a_k, b_k)",
                          field="battery.pwa_segments")
    return ReferenceBattery(
        pwa_segments=pwa,
        m_bo=_num(obj, "m_bo_kg", where),
        Ebar_bo=_quantity(obj, "Ebar_bo_J", "Ebar_bo_kWh", J_PER_KWH, where),
        xi_min=_num(obj, "xi_min", where, _BATTERY_DEFAULTS["xi_min"]),
        xi_max=_num(obj, "xi_max", where, _BATTERY_DEFAULTS["xi_max"]),
        S_b_min=_num(obj, "S_b_min", where, _BATTERY_DEFAULTS["S_b_min"]),
        S_b_max=_num(obj, "S_b_max", where, _BATTERY_DEFAULTS["S_b_max"]),
    )


def _parse_cost(obj):
    where = "cost"
    gl = obj.get("glider_costs_eur", dict(GLIDER_COSTS_EUR))
    if not isinstance(gl, dict):
        raise SchemaError("glider_costs_eur must map class -> EUR",
                          field="cost.glider_costs_eur")
    return CostParameters(
        c_b_year=_num(obj, "c_b_year_eur_kwh", where),
        lambda_b1=_num(obj, "lambda_b1", where),
        lambda_b2=_num(obj, "lambda_b2", where),
        c_m_year=_num(obj, "c_m_year_eur_kw", where),
        lambda_m1=_num(obj, "lambda_m1", where),
        lambda_m2=_num(obj, "lambda_m2", where),
        c_e=_num(obj, "c_e_eur_kwh", where),
        N_v=int(_num(obj, "N_v", where)),
        d_v_lt=_quantity(obj, "d_v_lt_m", "d_v_lt_km", KM, where),
        k_oh=_num(obj, "k_oh", where),
        glider_costs={str(k): float(v) for k, v in gl.items()},
        volume_mode=obj.get("volume_mode", "paper-literal"),
    )


_BENCHMARK_CACHE = {}


def _benchmark_raw():
    if "raw" not in _BENCHMARK_CACHE:
        _BENCHMARK_CACHE["raw"] = json.loads(_packaged("tesla_family.json").read_text())
    return _BENCHMARK_CACHE["raw"]


def load_family(path=None, *, strict=True):
    """Load a family instance from a JSON config.

    With no path, the shipped Tesla benchmark is loaded.  Omitted motor,
    battery, or cost sections fall back to the benchmark values; omitted
    optional fields take the documented defaults.  Raises SchemaError for
    structural problems (the message names the offending field) and, when
    strict, ValidationError if any domain invariant fails.
    """
    if path is None:
        raw = _benchmark_raw()
        base_dir = None
    else:
        path = Path(path)
        if not path.exists():
            raise SchemaError(f"config file not found: {path}")
        try:
            raw = json.loads(path.read_text())
        except json.JSONDecodeError as exc:
            raise SchemaError(f"invalid JSON at line {exc.lineno}, column {exc.colno}: "
                              f"{exc.msg}")
        base_dir = path.parent
    if not isinstance(raw, dict):
        raise SchemaError("top level must be an object")
    bench = _benchmark_raw()

    vobjs = raw.get("vehicles")
    if not isinstance(vobjs, list) or not vobjs:
        raise SchemaError("required field missing or empty", field="vehicles")
    vehicles = tuple(_parse_vehicle(v, i) for i, v in enumerate(vobjs))

    motor = _parse_motor(raw.get("motor", bench["motor"]), base_dir)
    battery = _parse_battery(raw.get("battery", bench["battery"]))
    cost = _parse_cost(raw.get("cost", bench["cost"]))

    mobj = raw.get("multiplicities", bench["multiplicities"])
    try:
        M = tuple(sorted(int(m) for m in mobj["M"]))
        B = tuple(sorted(int(b) for b in mobj["B"]))
    except (KeyError, TypeError, ValueError):
        raise SchemaError("multiplicities must provide integer lists M and B",
                          field="multiplicities")

    fam = FamilyArchitecture(vehicles=vehicles, motor=motor, battery=battery,
                             M=M, B=B, cost=cost)
    if strict:
        violations = validate(fam)
        if violations:
            raise ValidationError(violations)
    return fam


# ---------------------------------------------------------------------------
# Validation
# ---------------------------------------------------------------------------

def validate(f):
    """Return a list of invariant violations; empty means the instance is sound.

    Each entry names the field, the offending value, and the violated rule.
    """
    v = []

    def check(ok, field, value, rule):
        if not ok:
            v.append(f"{field} = {value!r} violates: {rule}")

    m = f.motor
    check(m.Pbar_mo > 0, "motor.Pbar_mo", m.Pbar_mo, "Pbar_mo > 0")
    check(m.omega_r > 0, "motor.omega_r", m.omega_r, "omega_r > 0")
    check(0 < m.S_m_min <= m.S_m_max, "motor.S_m_min/S_m_max",
          (m.S_m_min, m.S_m_max), "0 < S_m_min <= S_m_max")
    check(0 <= m.r_fwd <= m.r_awd <= 1, "motor.r_fwd/r_awd",
          (m.r_fwd, m.r_awd), "0 <= r_fwd <= r_awd <= 1")
    t = m.loss_coeff_table
    check(bool(np.all(t[:, 3] > 0)), "motor.loss_coeff_table.alpha",
          float(t[:, 3].min()), "alpha > 0 for every row")
    check(bool(np.all(np.diff(t[:, 0]) > 0)), "motor.loss_coeff_table.omega",
          "grid", "omega grid strictly increasing")

    b = f.battery
    check(len(b.pwa_segments) >= 1, "battery.pwa_segments", len(b.pwa_segments),
          "K >= 1")
    check(0 <= b.xi_min < b.xi_max <= 1, "battery.xi_min/xi_max",
          (b.xi_min, b.xi_max), "0 <= xi_min < xi_max <= 1")
    check(b.Ebar_bo > 0, "battery.Ebar_bo", b.Ebar_bo, "Ebar_bo > 0")
    check(0 < b.S_b_min <= b.S_b_max, "battery.S_b_min/S_b_max",
          (b.S_b_min, b.S_b_max), "0 < S_b_min <= S_b_max")

    for i, entry in enumerate(f.vehicles):
        s, p = entry.spec, entry.perf
        where = f"vehicles[{i}]"
        for fld in ("m_g", "m_p", "m_d"):
            check(getattr(s, fld) >= 0, f"{where}.{fld}", getattr(s, fld),
                  "mass >= 0")
        check(0 < s.eta_gb <= 1, f"{where}.eta_gb", s.eta_gb, "0 < eta_gb <= 1")
        check(0 < s.eta_inv <= 1, f"{where}.eta_inv", s.eta_inv, "0 < eta_inv <= 1")
        check(s.r_w > 0, f"{where}.r_w", s.r_w, "r_w > 0")
        check(s.A_f > 0, f"{where}.A_f", s.A_f, "A_f > 0")
        for fld in ("t_a_max", "v_f", "v_t_min", "v_m_min", "theta_min", "d_r_min"):
            check(getattr(p, fld) > 0, f"{where}.performance.{fld}",
                  getattr(p, fld), "strictly positive")

    wsum = sum(e.weight for e in f.vehicles)
    check(abs(wsum - 1.0) <= 1e-9, "vehicles[].weight", wsum, "weights sum to 1")
    check(f.n_vehicles >= 1, "vehicles", f.n_vehicles, "N >= 1")
    check(len(f.M) > 0 and all(isinstance(x, int) and x > 0 for x in f.M),
          "multiplicities.M", f.M, "non-empty positive integers")
    check(len(f.B) > 0 and all(isinstance(x, int) and x > 0 for x in f.B),
          "multiplicities.B", f.B, "non-empty positive integers")

    c = f.cost
    for fld in ("c_b_year", "lambda_b1", "lambda_b2", "c_m_year", "lambda_m1",
                "lambda_m2", "c_e", "N_v", "d_v_lt", "k_oh"):
        check(getattr(c, fld) > 0, f"cost.{fld}", getattr(c, fld),
              "strictly positive")
    check(0 < c.k_oh < 1, "cost.k_oh", c.k_oh, "0 < k_oh < 1")
    check(0 < c.lambda_b2 < 1, "cost.lambda_b2", c.lambda_b2, "lambda_b2 in (0,1)")
    check(0 < c.lambda_m2 < 1, "cost.lambda_m2", c.lambda_m2, "lambda_m2 in (0,1)")
    return v


# ---------------------------------------------------------------------------
# Serialization
# ---------------------------------------------------------------------------

def serialize_family(f):
    """Dump a family to a JSON-ready dict using SI-unit keys (exact round trip)."""
    out = {"vehicles": []}
    for e in f.vehicles:
        s, p = e.spec, e.perf
        out["vehicles"].append({
            "name": s.name, "weight": e.weight,
            "m_g_kg": s.m_g, "m_p_kg": s.m_p, "m_d_kg": s.m_d,
            "eta_gb": s.eta_gb, "eta_inv": s.eta_inv, "r_w_m": s.r_w,
            "c_r": s.c_r, "c_d": s.c_d, "A_f_m2": s.A_f, "P_aux_W": s.P_aux,
            "glider_cost_eur": s.glider_cost,
            "performance": {
                "t_a_max_s": p.t_a_max, "v_f_ms": p.v_f, "v_t_min_ms": p.v_t_min,
                "v_m_min_ms": p.v_m_min, "theta_min_rad": p.theta_min,
                "d_r_min_m": p.d_r_min,
            },
        })
    m = f.motor
    out["motor"] = {
        "m_mo_kg": m.m_mo, "Pbar_mo_W": m.Pbar_mo, "omega_r_rad_s": m.omega_r,
        "gamma": m.gamma, "r_fwd": m.r_fwd, "r_awd": m.r_awd,
        "S_m_min": m.S_m_min, "S_m_max": m.S_m_max,
        "loss_table": m.loss_coeff_table.tolist(),
    }
    b = f.battery
    out["battery"] = {
        "m_bo_kg": b.m_bo, "Ebar_bo_J": b.Ebar_bo, "xi_min": b.xi_min,
        "xi_max": b.xi_max, "S_b_min": b.S_b_min, "S_b_max": b.S_b_max,
        "pwa_segments": b.pwa_segments.tolist(),
    }
    c = f.cost
    out["cost"] = {
        "c_b_year_eur_kwh": c.c_b_year, "lambda_b1": c.lambda_b1,
        "lambda_b2": c.lambda_b2, "c_m_year_eur_kw": c.c_m_year,
        "lambda_m1": c.lambda_m1, "lambda_m2": c.lambda_m2,
        "c_e_eur_kwh": c.c_e, "N_v": c.N_v, "d_v_lt_m": c.d_v_lt,
        "k_oh": c.k_oh, "glider_costs_eur": dict(c.glider_costs),
        "volume_mode": c.volume_mode,
    }
    out["multiplicities"] = {"M": list(f.M), "B": list(f.B)}
    return out


def load_family_dict(raw, *, strict=True):
    """load_family for an in-memory dict (used by round-trip tests and the CLI)."""
    import tempfile

    with tempfile.NamedTemporaryFile("w", suffix=".json", delete=False) as fh:
        json.dump(raw, fh)
        name = fh.name
    try:
        return load_family(name, strict=strict)
    finally:
        Path(name).unlink(missing_ok=True)


def families_equal(a, b):
    """Structural equality with exact float comparison on all numeric fields."""
    return json.dumps(serialize_family(a), sort_keys=True) == \
        json.dumps(serialize_family(b), sort_keys=True)
