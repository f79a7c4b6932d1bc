"""Solver-agnostic second-order cone program IR plus the builder that
assembles the fixed-multiplicity family sizing problem.

The IR holds affine equalities, affine inequalities (row . x <= rhs), and
second-order cones given as stacked affine expressions (head; tail) with
head(x) >= ||tail(x)||_2.  Only affine data can be expressed, so any built
program is convex by construction; audit() re-checks the structural
invariants.

Variable layout: [S_m, S_b] then one block per vehicle of
[P_m(T), P_ac(T), P_b(T), P_i(T), P_sc(T), E(T+1), F_v, j_tco],
so n = 2 + N * (6T + 3).

For conditioning, program variables carry internal units: powers in kW,
energies in MJ, consumption in kJ/m, money in kEUR (sizes are already O(1)).
VariableMap records the factors; extraction converts back to SI.
"""

from __future__ import annotations

import bisect
import math
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from . import costs as cm
from . import powertrain as pt
from .errors import ModsizerError, SimulationError
from .powertrain import G, RHO_AIR


# ---------------------------------------------------------------------------
# IR
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class RowGroup:
    """Contiguous block of rows emitted for one constraint family."""

    label: str
    vehicle: int  # -1 for shared rows
    start: int
    count: int


@dataclass(frozen=True)
class ConicProgram:
    n_vars: int
    c: np.ndarray
    c0: float
    A_eq: sp.csr_matrix
    b_eq: np.ndarray
    A_ineq: sp.csr_matrix
    b_ineq: np.ndarray
    soc_F: sp.csr_matrix     # stacked (head; tail...) rows, expression F x + g
    soc_g: np.ndarray
    soc_dims: np.ndarray     # rows per cone (head + tail)
    eq_groups: tuple = ()
    ineq_groups: tuple = ()
    soc_groups: tuple = ()
    var_names: tuple = ()

    @property
    def n_eq(self):
        return self.A_eq.shape[0]

    @property
    def n_ineq(self):
        return self.A_ineq.shape[0]

    @property
    def n_soc(self):
        return len(self.soc_dims)

    def objective(self, x):
        return float(self.c @ x + self.c0)

    def audit(self):
        """Structural self-check; raises ModsizerError on any defect."""
        problems = []
        for name, mat in (("A_eq", self.A_eq), ("A_ineq", self.A_ineq),
                          ("soc_F", self.soc_F)):
            if mat.shape[1] != self.n_vars:
                problems.append(f"{name} has {mat.shape[1]} columns, "
                                f"expected {self.n_vars}")
            if mat.nnz and not np.all(np.isfinite(mat.data)):
                problems.append(f"{name} contains non-finite coefficients")
        for name, vec in (("b_eq", self.b_eq), ("b_ineq", self.b_ineq),
                          ("soc_g", self.soc_g), ("c", self.c)):
            if len(vec) and not np.all(np.isfinite(vec)):
                problems.append(f"{name} contains non-finite entries")
        if not math.isfinite(self.c0):
            problems.append("objective constant is not finite")
        if self.soc_F.shape[0] != int(np.sum(self.soc_dims)):
            problems.append("soc row count does not match soc_dims")
        if np.any(self.soc_dims < 2):
            problems.append("every cone needs a head and at least one tail row")
        if problems:
            raise ModsizerError("program audit failed: " + "; ".join(problems))
        return True

    def describe_row(self, kind, row):
        groups = {"eq": self.eq_groups, "ineq": self.ineq_groups,
                  "soc": self.soc_groups}[kind]
        starts = [g.start for g in groups]
        g = groups[max(0, bisect.bisect_right(starts, row) - 1)]
        return f"{g.label}[v{g.vehicle}][{row - g.start}]"


#: internal program units (per variable kind) chosen so solutions are O(1)
U_POWER = 1e3   # W per program power unit
U_ENERGY = 1e6  # J per program energy unit
U_FV = 1e3      # (J/m) per program consumption unit
U_MONEY = 1e3   # EUR per program money unit


@dataclass(frozen=True)
class VariableMap:
    """Bijection between model quantities and flat variable indices."""

    T: int
    n_vehicles: int
    S_m: int = 0
    S_b: int = 1
    u_power: float = U_POWER
    u_energy: float = U_ENERGY
    u_fv: float = U_FV
    u_money: float = U_MONEY

    @property
    def block(self):
        return 6 * self.T + 3

    def base(self, i):
        return 2 + i * self.block

    def P_m(self, i):
        return np.arange(self.base(i), self.base(i) + self.T)

    def P_ac(self, i):
        return np.arange(self.base(i) + self.T, self.base(i) + 2 * self.T)

    def P_b(self, i):
        return np.arange(self.base(i) + 2 * self.T, self.base(i) + 3 * self.T)

    def P_i(self, i):
        return np.arange(self.base(i) + 3 * self.T, self.base(i) + 4 * self.T)

    def P_sc(self, i):
        return np.arange(self.base(i) + 4 * self.T, self.base(i) + 5 * self.T)

    def E(self, i):
        return np.arange(self.base(i) + 5 * self.T, self.base(i) + 6 * self.T + 1)

    def F_v(self, i):
        return self.base(i) + 6 * self.T + 1

    def j_tco(self, i):
        return self.base(i) + 6 * self.T + 2

    @property
    def n_vars(self):
        return 2 + self.n_vehicles * self.block

    def name(self, idx):
        if idx == 0:
            return "S_m"
        if idx == 1:
            return "S_b"
        i, off = divmod(idx - 2, self.block)
        for lbl, lo in (("P_m", 0), ("P_ac", self.T), ("P_b", 2 * self.T),
                        ("P_i", 3 * self.T), ("P_sc", 4 * self.T)):
            if lo <= off < lo + self.T:
                return f"v{i}.{lbl}[{off - lo}]"
        if 5 * self.T <= off < 6 * self.T + 1:
            return f"v{i}.E[{off - 5 * self.T}]"
        return f"v{i}.F_v" if off == 6 * self.T + 1 else f"v{i}.j_tco"


class _RowSpace:
    """Accumulates sparse rows for one constraint kind."""

    def __init__(self):
        self.rows = []
        self.cols = []
        self.vals = []
        self.rhs = []
        self.groups = []
        self.n = 0

    def add(self, label, vehicle, cols, vals, rhs, count, stride=1, offset=0):
        """Append `count` rows with the given column/value slots.

        cols/vals are lists of per-slot data, each a scalar or an array of
        length count.  Rows are placed at n + offset + stride*k, supporting
        interleaved cone layouts.
        """
        idx = self.n + offset + stride * np.arange(count)
        for c, v in zip(cols, vals):
            self.rows.append(idx)
            self.cols.append(np.broadcast_to(np.asarray(c), (count,)))
            self.vals.append(np.broadcast_to(np.asarray(v, dtype=float), (count,)))
        self.rhs.append((idx, np.broadcast_to(np.asarray(rhs, dtype=float), (count,))))
        self.groups.append(RowGroup(label, vehicle, self.n + offset, stride * count))
        return idx

    def commit(self, advance):
        self.n += advance

    def build(self, n_vars):
        if self.n == 0:
            return (sp.csr_matrix((0, n_vars)), np.zeros(0), ())
        rows = np.concatenate(self.rows) if self.rows else np.zeros(0, int)
        cols = np.concatenate(self.cols) if self.cols else np.zeros(0, int)
        vals = np.concatenate(self.vals) if self.vals else np.zeros(0)
        mat = sp.coo_matrix((vals, (rows, cols)), shape=(self.n, n_vars)).tocsr()
        rhs = np.zeros(self.n)
        for idx, vv in self.rhs:
            rhs[idx] = vv
        return mat, rhs, tuple(self.groups)


# ---------------------------------------------------------------------------
# Builder
# ---------------------------------------------------------------------------

def build_inner_problem(family, mult, cycle, *, enforce_upper_size_bounds=True):
    """Assemble the fixed-multiplicity sizing SOCP for one configuration.

    mult is a per-vehicle sequence of (N_m, N_b).  Returns (program, varmap).
    """
    if cycle.n_steps < 1:
        raise ModsizerError("cycle has no timesteps")
    mult = tuple((int(a), int(b)) for a, b in mult)
    if len(mult) != family.n_vehicles:
        raise ModsizerError(f"{len(mult)} multiplicity pairs for "
                            f"{family.n_vehicles} vehicles")
    for nm, nb in mult:
        if nm not in family.M:
            raise ModsizerError(f"N_m = {nm} outside M = {family.M}")
        if nb not in family.B:
            raise ModsizerError(f"N_b = {nb} outside B = {family.B}")

    motor, battery, params = family.motor, family.battery, family.cost
    fam_cfg = family.with_multiplicities(mult)
    T = cycle.n_steps
    vmap = VariableMap(T=T, n_vehicles=family.n_vehicles)

    eq = _RowSpace()
    ineq = _RowSpace()
    soc = _RowSpace()
    soc_dims = []

    v = cycle.v[:T]
    a = cycle.a[:T]
    theta = cycle.theta[:T]
    dt, d = cycle.dt, cycle.d
    xi_hi, xi_lo, E_ref = battery.xi_max, battery.xi_min, battery.Ebar_bo
    Pbar, Tbar = motor.Pbar_mo, motor.Tbar_mo

    obj = np.zeros(vmap.n_vars)

    uP, uE, uF, uC = U_POWER, U_ENERGY, U_FV, U_MONEY

    for i, entry in enumerate(family.vehicles):
        spec, perf, w = entry.spec, entry.perf, entry.weight
        N_m, N_b = mult[i]
        r_b = pt.regen_fraction(N_m, motor)
        m_const = spec.m_g + spec.m_d + spec.m_p
        mm = motor.m_mo * N_m           # kg per unit S_m
        mb = battery.m_bo * N_b         # kg per unit S_b

        q1 = v * (spec.c_r * G * np.cos(theta) + G * np.sin(theta) + a)
        q2 = 0.5 * RHO_AIR * spec.c_d * spec.A_f * v ** 3
        omega = pt.motor_speed(v, spec.r_w, motor.gamma)
        p0, beta, alpha = motor.loss_coeffs(omega)

        iPm, iPac, iPb = vmap.P_m(i), vmap.P_ac(i), vmap.P_b(i)
        iPi, iPsc, iE = vmap.P_i(i), vmap.P_sc(i), vmap.E(i)
        iFv, iJ = vmap.F_v(i), vmap.j_tco(i)

        # traction split, both relaxation sides (their max is the true split)
        f1 = 1.0 / (spec.eta_gb * N_m)
        ineq.add("trans_fwd", i, [iPm, vmap.S_m, vmap.S_b],
                 [-1.0, q1 * f1 * mm / uP, q1 * f1 * mb / uP],
                 -(q1 * m_const + q2) * f1 / uP, T)
        ineq.commit(T)
        f2 = r_b * spec.eta_gb / N_m
        ineq.add("trans_regen", i, [iPm, vmap.S_m, vmap.S_b],
                 [-1.0, q1 * f2 * mm / uP, q1 * f2 * mb / uP],
                 -(q1 * m_const + q2) * f2 / uP, T)
        ineq.commit(T)

        # module power window scales with S_m
        ineq.add("P_m_max", i, [iPm, vmap.S_m], [1.0, -Pbar / uP], 0.0, T)
        ineq.commit(T)
        ineq.add("P_m_min", i, [iPm, vmap.S_m], [-1.0, -Pbar / uP], 0.0, T)
        ineq.commit(T)

        # inverter/auxiliary split, both relaxation sides, scaled by N_b
        ineq.add("inverter_fwd", i, [iPb, iPac], [-float(N_b), N_m / spec.eta_inv],
                 -spec.P_aux / uP, T)
        ineq.commit(T)
        ineq.add("inverter_regen", i, [iPb, iPac], [-float(N_b), spec.eta_inv * N_m],
                 -spec.P_aux / uP, T)
        ineq.commit(T)

        # PWA upper envelope of the short-circuit power
        for j, (a_k, b_k) in enumerate(battery.pwa_segments):
            ineq.add(f"pwa_{j}", i, [iPsc, iE[:T], vmap.S_b],
                     [1.0, -(a_k / N_b) * uE / uP, -b_k / uP], 0.0, T)
            ineq.commit(T)

        # usable energy window
        ineq.add("E_max", i, [iE, vmap.S_b], [1.0, -xi_hi * E_ref * N_b / uE],
                 0.0, T + 1)
        ineq.commit(T + 1)
        ineq.add("E_min", i, [iE, vmap.S_b], [-1.0, xi_lo * E_ref * N_b / uE],
                 0.0, T + 1)
        ineq.commit(T + 1)

        # motor loss cone: with q = P_ac - (1+beta) P_m - P0 S_m the physics
        # is q S_m / alpha >= P_m^2; encoded through the balanced pair
        # u = q / sqrt(alpha), v = S_m / sqrt(alpha), u v >= P_m^2:
        # u + v >= ||(2 P_m, u - v)|| keeps cone coefficients of one scale
        s_a = 1.0 / np.sqrt(alpha * uP)
        soc.add("em_cone_head", i, [iPac, iPm, vmap.S_m],
                [s_a, -s_a * (1.0 + beta), s_a * (1.0 - p0 / uP)], 0.0, T,
                stride=3, offset=0)
        soc.add("em_cone_t1", i, [iPm], [2.0], 0.0, T, stride=3, offset=1)
        soc.add("em_cone_t2", i, [iPac, iPm, vmap.S_m],
                [s_a, -s_a * (1.0 + beta), s_a * (-1.0 - p0 / uP)], 0.0, T,
                stride=3, offset=2)
        soc.commit(3 * T)
        soc_dims.extend([3] * T)

        # battery loss cone: (P_i - P_b) + P_sc >= ||(2 P_i, P_i - P_b - P_sc)||
        soc.add("bt_cone_head", i, [iPi, iPb, iPsc], [1.0, -1.0, 1.0], 0.0, T,
                stride=3, offset=0)
        soc.add("bt_cone_t1", i, [iPi], [2.0], 0.0, T, stride=3, offset=1)
        soc.add("bt_cone_t2", i, [iPi, iPb, iPsc], [1.0, -1.0, -1.0], 0.0, T,
                stride=3, offset=2)
        soc.commit(3 * T)
        soc_dims.extend([3] * T)

        # pack energy dynamics, Euler forward
        eq.add("dynamics", i, [iE[1:], iE[:T], iPi],
               [1.0, -1.0, dt * N_b * uP / uE], 0.0, T)
        eq.commit(T)

        # operate the window around half capacity
        eq.add("boundary", i, [iE[0], iE[T], vmap.S_b],
               [1.0, 1.0, -(xi_hi + xi_lo) * E_ref * N_b / uE], 0.0, 1)
        eq.commit(1)

        # distance-specific consumption
        eq.add("F_v_def", i, [iFv, iE[0], iE[T]], [d * uF / uE, -1.0, 1.0], 0.0, 1)
        eq.commit(1)

        # per-vehicle TCO as an affine function of sizes and consumption
        c_m = cm.specific_cost(params.c_m_year, params.lambda_m1, params.lambda_m2,
                               cm.motor_module_volume(N_m, fam_cfg))
        c_b = cm.specific_cost(params.c_b_year, params.lambda_b1, params.lambda_b2,
                               cm.battery_module_volume(N_b, fam_cfg))
        a_m = c_m * (Pbar / cm.W_PER_KW) * N_m / params.k_oh
        a_b = c_b * (E_ref / cm.J_PER_KWH) * N_b / params.k_oh
        a_f = params.c_e * params.d_v_lt / cm.J_PER_KWH
        eq.add("j_tco_def", i, [iJ, vmap.S_m, vmap.S_b, iFv],
               [1.0, -a_m / uC, -a_b / uC, -a_f * uF / uC],
               spec.glider_cost / (params.k_oh * uC), 1)
        eq.commit(1)

        # performance requirements at their binding bounds
        ineq.add("range", i, [iE[0], iE[T], vmap.S_b],
                 [1.0, -1.0,
                  -(xi_hi - xi_lo) * E_ref * N_b * d / (perf.d_r_min * uE)],
                 0.0, 1)
        ineq.commit(1)
        C_acc = pt.acceleration_capacity_coeff(spec, perf, motor)
        ineq.add("accel", i, [vmap.S_m, vmap.S_b],
                 [-(N_m * perf.t_a_max - C_acc * mm), C_acc * mb],
                 -C_acc * m_const, 1)
        ineq.commit(1)
        ineq.add("top_speed", i, [vmap.S_m], [-1.0],
                 -0.5 * RHO_AIR * spec.c_d * spec.A_f * perf.v_t_min ** 3
                 / (N_m * Pbar), 1)
        ineq.commit(1)
        g_p = G * perf.v_m_min * math.sin(perf.theta_min)
        ineq.add("power_grad", i, [vmap.S_m, vmap.S_b],
                 [-(N_m * Pbar - g_p * mm), g_p * mb], -g_p * m_const, 1)
        ineq.commit(1)
        g_t = G * spec.r_w * math.sin(perf.theta_min)
        ineq.add("torque_grad", i, [vmap.S_m, vmap.S_b],
                 [-(N_m * Tbar * motor.gamma - g_t * mm), g_t * mb],
                 -g_t * m_const, 1)
        ineq.commit(1)

        obj[iJ] = w

    # shared size box
    ineq.add("S_m_lo", -1, [vmap.S_m], [-1.0], -motor.S_m_min, 1)
    ineq.commit(1)
    ineq.add("S_b_lo", -1, [vmap.S_b], [-1.0], -battery.S_b_min, 1)
    ineq.commit(1)
    if enforce_upper_size_bounds and math.isfinite(motor.S_m_max):
        ineq.add("S_m_hi", -1, [vmap.S_m], [1.0], motor.S_m_max, 1)
        ineq.commit(1)
    if enforce_upper_size_bounds and math.isfinite(battery.S_b_max):
        ineq.add("S_b_hi", -1, [vmap.S_b], [1.0], battery.S_b_max, 1)
        ineq.commit(1)

    A_eq, b_eq, eq_groups = eq.build(vmap.n_vars)
    A_ineq, b_ineq, ineq_groups = ineq.build(vmap.n_vars)
    soc_F, soc_g, soc_groups = soc.build(vmap.n_vars)

    prog = ConicProgram(
        n_vars=vmap.n_vars, c=obj, c0=0.0,
        A_eq=A_eq, b_eq=b_eq, A_ineq=A_ineq, b_ineq=b_ineq,
        soc_F=soc_F, soc_g=soc_g, soc_dims=np.asarray(soc_dims, dtype=int),
        eq_groups=eq_groups, ineq_groups=ineq_groups, soc_groups=soc_groups,
        var_names=tuple(vmap.name(k) for k in range(vmap.n_vars))
        if vmap.n_vars <= 200 else (),
    )
    prog.audit()
    return prog, vmap


def to_standard_form(prog):
    """Pack the IR into (A, b, c, dims) with A x + s = b, s in K.

    K stacks the zero cone (equalities), the nonnegative orthant, and the
    second-order cones, in that order; dims = (n_zero, n_pos, soc_dims).
    """
    A = sp.vstack([prog.A_eq, prog.A_ineq, -prog.soc_F], format="csc")
    b = np.concatenate([prog.b_eq, prog.b_ineq, prog.soc_g])
    return A, b, prog.c.copy(), (prog.n_eq, prog.n_ineq, prog.soc_dims.copy())


def dump_program(prog, path):
    """Write the program in a sparse text format for external cross-checks.

    One row per line: kind, row index, then index:value pairs, then '| rhs'.
    Cones are emitted as soc_head/soc_tail rows sharing a cone index.
    """
    def emit(fh, kind, mat, vec):
        mat = mat.tocsr()
        for r in range(mat.shape[0]):
            lo, hi = mat.indptr[r], mat.indptr[r + 1]
            entries = " ".join(f"{j}:{x:.17g}" for j, x in
                               zip(mat.indices[lo:hi], mat.data[lo:hi]))
            fh.write(f"{kind} {r} {entries} | {vec[r]:.17g}\n")

    with open(path, "w") as fh:
        fh.write(f"vars {prog.n_vars}\n")
        fh.write("objective " + " ".join(
            f"{j}:{x:.17g}" for j, x in enumerate(prog.c) if x != 0.0)
            + f" | {prog.c0:.17g}\n")
        emit(fh, "eq", prog.A_eq, prog.b_eq)
        emit(fh, "ineq", prog.A_ineq, prog.b_ineq)
        fh.write("soc_dims " + " ".join(str(int(x)) for x in prog.soc_dims) + "\n")
        emit(fh, "soc", prog.soc_F, prog.soc_g)


# ---------------------------------------------------------------------------
# Constraint echoes
# ---------------------------------------------------------------------------

def constraint_echo(prog, x):
    """Componentwise relative violations of every constraint at x.

    Scales follow the backward-error convention max(1, (|A| |x|)_row + |b|),
    so a violation of 1e-6 means one part in 10^6 of the row's magnitude.
    """
    x = np.asarray(x, dtype=float)
    out = {}
    ax = np.abs(x)

    if prog.n_eq:
        r = prog.A_eq @ x - prog.b_eq
        scale = np.maximum(1.0, np.abs(prog.A_eq) @ ax + np.abs(prog.b_eq))
        out["eq"] = np.abs(r) / scale
    else:
        out["eq"] = np.zeros(0)
    if prog.n_ineq:
        r = prog.A_ineq @ x - prog.b_ineq
        scale = np.maximum(1.0, np.abs(prog.A_ineq) @ ax + np.abs(prog.b_ineq))
        out["ineq"] = np.maximum(r, 0.0) / scale
    else:
        out["ineq"] = np.zeros(0)
    if prog.n_soc:
        z = prog.soc_F @ x + prog.soc_g
        viol = np.zeros(prog.n_soc)
        scale = np.ones(prog.n_soc)
        pos = 0
        for idx, dim in enumerate(prog.soc_dims):
            head = z[pos]
            tail = np.linalg.norm(z[pos + 1:pos + dim])
            viol[idx] = max(tail - head, 0.0)
            scale[idx] = max(1.0, abs(head) + tail)
            pos += dim
        out["soc"] = viol / scale
    else:
        out["soc"] = np.zeros(0)
    return out


def worst_echo(prog, x):
    echo = constraint_echo(prog, x)
    worst = {"kind": None, "row": -1, "value": 0.0}
    for kind in ("eq", "ineq", "soc"):
        if len(echo[kind]):
            r = int(np.argmax(echo[kind]))
            if echo[kind][r] > worst["value"]:
                worst = {"kind": kind, "row": r, "value": float(echo[kind][r]),
                         "where": prog.describe_row(kind, r)}
    return worst


# ---------------------------------------------------------------------------
# Solution extraction
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class VehicleOutcome:
    name: str
    N_m: int
    N_b: int
    mass: float          # kg
    Pbar_tot: float      # W
    Ebar_tot: float      # J
    F_v: float           # J/m
    cost: cm.CostBreakdown
    d_r: float           # m achieved range
    t_a: float           # s achieved standing-start time
    v_t: float           # m/s achieved top speed
    trajectory: pt.Trajectory | None = None


@dataclass(frozen=True)
class DesignSolution:
    config: tuple        # per-vehicle (N_m, N_b)
    S_m: float
    S_b: float
    vehicles: tuple      # of VehicleOutcome
    family_tco: float    # EUR
    solver_info: dict = field(default_factory=dict)
    echo_flags: tuple = ()
    max_echo: float = 0.0

    @property
    def weights(self):
        return tuple(v for v in self.solver_info.get("weights", ()))


def extract_solution(prog, vmap, result, mult, family, cycle, *,
                     polish=True, echo_tol=1e-6, keep_trajectories=True):
    """Turn a solver result into a physically consistent DesignSolution.

    With polish enabled, the sizes are nudged up (never beyond roundoff plus
    active-constraint repair) until the exact physics chain is feasible, and
    the trajectories are rebuilt through the chain so every relaxed
    constraint holds with equality; the costs are recomputed through the
    cost model from the rebuilt consumption.
    """
    if result.status != "optimal":
        raise ModsizerError(f"cannot extract from status {result.status!r}")
    x_raw = np.asarray(result.x, dtype=float)
    motor, battery, params = family.motor, family.battery, family.cost
    mult = tuple((int(a), int(b)) for a, b in mult)

    S_m = float(np.clip(x_raw[vmap.S_m], motor.S_m_min, motor.S_m_max))
    S_b = float(np.clip(x_raw[vmap.S_b], battery.S_b_min, battery.S_b_max))

    if polish:
        S_m, S_b, trajs, fvs = _polish_sizes(S_m, S_b, mult, family, cycle)
        x = _assemble_vector(prog, vmap, S_m, S_b, mult, family, trajs, fvs)
    else:
        x = x_raw
        trajs, fvs = [], []
        uP, uE = vmap.u_power, vmap.u_energy
        for i in range(family.n_vehicles):
            n = vmap.T
            trajs.append(pt.Trajectory(
                t=cycle.t[:n].copy(),
                omega=pt.motor_speed(cycle.v[:n], family.vehicles[i].spec.r_w,
                                     motor.gamma),
                P_v=np.zeros(n), P_m=x[vmap.P_m(i)] * uP,
                P_ac=x[vmap.P_ac(i)] * uP, P_b=x[vmap.P_b(i)] * uP,
                P_i=x[vmap.P_i(i)] * uP, P_sc=x[vmap.P_sc(i)] * uP,
                E_tot=x[vmap.E(i)] * uE))
            fvs.append(float(x[vmap.F_v(i)]) * vmap.u_fv)
        S_m, S_b = float(x[vmap.S_m]), float(x[vmap.S_b])

    fam_cfg = family.with_multiplicities(mult)
    outcomes = []
    per_vehicle = []
    for i, entry in enumerate(family.vehicles):
        spec, perf = entry.spec, entry.perf
        N_m, N_b = mult[i]
        design = pt.DesignPoint(S_m=S_m, S_b=S_b, N_m=N_m, N_b=N_b)
        mass = design.mass(spec, motor, battery)
        breakdown = cm.vehicle_tco(spec, S_m, S_b, N_m, N_b, fvs[i], params,
                                   fam_cfg)
        outcomes.append(VehicleOutcome(
            name=spec.name, N_m=N_m, N_b=N_b, mass=mass,
            Pbar_tot=design.total_power(motor),
            Ebar_tot=design.total_energy(battery),
            F_v=fvs[i], cost=breakdown,
            d_r=pt.achieved_range(design, battery, fvs[i]),
            t_a=pt.acceleration_time(mass, S_m * N_m, spec, perf, motor),
            v_t=pt.top_speed(S_m * N_m, spec, motor),
            trajectory=trajs[i] if keep_trajectories else None))
        per_vehicle.append((entry.weight, breakdown.j_tco))

    echo = constraint_echo(prog, x)
    flags = []
    for kind in ("eq", "ineq", "soc"):
        bad = np.nonzero(echo[kind] > echo_tol)[0]
        for r in bad[:20]:
            flags.append(f"{prog.describe_row(kind, int(r))}: "
                         f"relative violation {echo[kind][r]:.2e}")
    max_echo = max((float(echo[k].max()) for k in ("eq", "ineq", "soc")
                    if len(echo[k])), default=0.0)

    info = dict(result.info)
    info.update(status=result.status,
                raw_objective=float(result.objective) * vmap.u_money,
                iterations=result.iterations, polished=polish,
                weights=tuple(e.weight for e in family.vehicles))
    return DesignSolution(config=mult, S_m=S_m, S_b=S_b,
                          vehicles=tuple(outcomes),
                          family_tco=cm.family_tco(per_vehicle),
                          solver_info=info, echo_flags=tuple(flags),
                          max_echo=max_echo)


def _static_size_floor(S_b, mult, family, cycle=None):
    """Smallest S_m meeting every static performance row at battery size S_b.

    With a cycle given, the per-timestep traction demand is included, so the
    floor also covers the motor power-limit rows along the cycle.
    """
    motor, battery = family.motor, family.battery
    need = motor.S_m_min
    for entry, (N_m, N_b) in zip(family.vehicles, mult):
        spec, perf = entry.spec, entry.perf
        m_const = spec.m_g + spec.m_d + spec.m_p
        mm = motor.m_mo * N_m
        mb = battery.m_bo * N_b
        # acceleration: N_m t_a S_m >= C (m_const + mm S_m + mb S_b)
        C = pt.acceleration_capacity_coeff(spec, perf, motor)
        den = N_m * perf.t_a_max - C * mm
        if den <= 0:
            return math.inf
        need = max(need, C * (m_const + mb * S_b) / den)
        # top speed
        need = max(need, 0.5 * RHO_AIR * spec.c_d * spec.A_f * perf.v_t_min ** 3
                   / (N_m * motor.Pbar_mo))
        # power gradability
        g_p = G * perf.v_m_min * math.sin(perf.theta_min)
        den = N_m * motor.Pbar_mo - g_p * mm
        if den <= 0:
            return math.inf
        need = max(need, g_p * (m_const + mb * S_b) / den)
        # torque gradability
        g_t = G * spec.r_w * math.sin(perf.theta_min)
        den = N_m * motor.Tbar_mo * motor.gamma - g_t * mm
        if den <= 0:
            return math.inf
        need = max(need, g_t * (m_const + mb * S_b) / den)
        if cycle is not None:
            # cycle traction: S_m Pbar >= f1 (q1 mass + q2) at every step
            v, a, th = cycle.v[:-1], cycle.a[:-1], cycle.theta[:-1]
            q1 = v * (spec.c_r * G * np.cos(th) + G * np.sin(th) + a)
            q2 = 0.5 * RHO_AIR * spec.c_d * spec.A_f * v ** 3
            f1 = 1.0 / (spec.eta_gb * N_m)
            den = motor.Pbar_mo - f1 * q1 * mm
            rhs = f1 * (q1 * (m_const + mb * S_b) + q2)
            ok = den > 0
            if np.any(~ok & (rhs > 0)):
                return math.inf
            with np.errstate(divide="ignore", invalid="ignore"):
                cand = np.where(ok, rhs / den, -np.inf)
            need = max(need, float(np.max(cand)))
    return need


def _polish_sizes(S_m, S_b, mult, family, cycle, max_rounds=10):
    """Repair solver roundoff so the exact chain is feasible, then rebuild
    the tight trajectories (centered boundary, as in the program)."""
    motor, battery = family.motor, family.battery
    bump = 1.0 + 1e-12
    for _ in range(max_rounds):
        S_m = max(S_m, _static_size_floor(S_b, mult, family, cycle) * bump)
        trajs, fvs, need_b = [], [], battery.S_b_min
        try:
            for entry, (N_m, N_b) in zip(family.vehicles, mult):
                spec, perf = entry.spec, entry.perf
                design = pt.DesignPoint(S_m=S_m, S_b=S_b, N_m=N_m, N_b=N_b)
                traj, fv = pt.forward_simulate(design, spec, cycle, motor,
                                               battery, boundary="centered")
                trajs.append(traj)
                fvs.append(fv)
                usable = (battery.xi_max - battery.xi_min) * battery.Ebar_bo * N_b
                need_b = max(need_b,
                             fv * perf.d_r_min / usable,   # range requirement
                             fv * cycle.d / usable)        # stay inside the window
        except SimulationError:
            # battery power or window margin lost to roundoff; grow both sizes
            S_m *= 1.0 + 1e-9
            S_b *= 1.0 + 1e-9
            continue
        if need_b <= S_b * (1 + 1e-9):
            return S_m, S_b, trajs, fvs
        S_b = need_b * bump
    raise SimulationError("size polish did not converge")


def _assemble_vector(prog, vmap, S_m, S_b, mult, family, trajs, fvs):
    """Flat variable vector (program units) for the tight-chain solution."""
    x = np.zeros(vmap.n_vars)
    x[vmap.S_m] = S_m
    x[vmap.S_b] = S_b
    uP, uE = vmap.u_power, vmap.u_energy
    fam_cfg = family.with_multiplicities(mult)
    for i, entry in enumerate(family.vehicles):
        traj = trajs[i]
        x[vmap.P_m(i)] = traj.P_m / uP
        x[vmap.P_ac(i)] = traj.P_ac / uP
        x[vmap.P_b(i)] = traj.P_b / uP
        x[vmap.P_i(i)] = traj.P_i / uP
        x[vmap.P_sc(i)] = traj.P_sc / uP
        x[vmap.E(i)] = traj.E_tot / uE
        x[vmap.F_v(i)] = fvs[i] / vmap.u_fv
        x[vmap.j_tco(i)] = cm.vehicle_tco(
            entry.spec, S_m, S_b, mult[i][0], mult[i][1], fvs[i],
            family.cost, fam_cfg).j_tco / vmap.u_money
    return x
