"""Bundled conic solver backends and the pluggable solver contract.

Two self-contained backends ship with the package, both deterministic given
the program and settings, solving

    min c'x  s.t.  A x + s = b,  s in K,   K = {0}^z x R+^l x SOC...

"bundled" (the default) is a primal-dual interior-point method on the
homogeneous self-dual embedding with Nesterov-Todd scaling and Mehrotra
predictor-corrector steps (see ipm.py).  "splitting" is an operator-splitting
method (Douglas-Rachford on the same embedding with Ruiz equilibration,
over-relaxation, and safeguarded Anderson acceleration); it is retained for
cross-checks but converges too slowly on the long time-coupled sizing
programs this package produces, which is why the interior-point backend is
the default.  Infeasibility is certified (improving rays / embedding
certificates), never reported silently.

Additional backends can be registered under a name and selected via
SolverSettings.backend; the acceptance suite runs entirely on the bundled
one.
"""

from __future__ import annotations

import dataclasses
import math
import time
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .errors import SolverError
from .program import to_standard_form

OPTIMAL = "optimal"
PRIMAL_INFEASIBLE = "primal_infeasible"
DUAL_INFEASIBLE = "dual_infeasible"
ITERATION_LIMIT = "iteration_limit"


@dataclass(frozen=True)
class SolverSettings:
    eps_primal: float = 1e-6
    eps_dual: float = 1e-6
    eps_gap: float = 1e-6
    eps_infeasible: float = 1e-7
    max_iters: int = 100000
    scaling: bool = True
    ruiz_iters: int = 12
    alpha: float = 1.7           # over-relaxation
    check_interval: int = 25
    aa_memory: int = 8           # Anderson acceleration history (0 disables)
    backend: str = "bundled"
    verbose: bool = False

    def __post_init__(self):
        if min(self.eps_primal, self.eps_dual, self.eps_gap) <= 0:
            raise SolverError("tolerances must be positive")
        if not 0 < self.alpha < 2:
            raise SolverError("over-relaxation must lie in (0, 2)")

    def with_eps(self, eps):
        return dataclasses.replace(self, eps_primal=eps, eps_dual=eps, eps_gap=eps)


@dataclass(frozen=True)
class SolveResult:
    status: str
    x: np.ndarray | None
    y: np.ndarray | None
    s: np.ndarray | None
    objective: float
    residuals: dict
    iterations: int
    info: dict = field(default_factory=dict)


_BACKENDS = {}


def register_backend(name, fn):
    _BACKENDS[name] = fn


def solve(prog, settings=None):
    """Solve a ConicProgram; dispatches to the configured backend."""
    settings = settings or SolverSettings()
    backend = _BACKENDS.get(settings.backend)
    if backend is None:
        raise SolverError(f"no backend registered under {settings.backend!r}")
    return backend(prog, settings)


# ---------------------------------------------------------------------------
# Cone operations
# ---------------------------------------------------------------------------

class _Cones:
    """Projection machinery for {0}^z x R+^l x product of SOCs."""

    def __init__(self, n_zero, n_pos, soc_dims):
        self.z = int(n_zero)
        self.l = int(n_pos)
        self.soc_dims = np.asarray(soc_dims, dtype=int)
        self.m = self.z + self.l + int(self.soc_dims.sum())
        self.soc_start = self.z + self.l
        dims = self.soc_dims
        self._uniform = len(dims) > 0 and bool(np.all(dims == dims[0]))
        if len(dims):
            ends = self.soc_start + np.cumsum(dims)
            self._starts = ends - dims
            self._ends = ends
        else:
            self._starts = self._ends = np.zeros(0, int)

    def project_dual(self, u):
        """Project onto K* = R^z x R+^l x SOC (SOCs are self-dual)."""
        out = u.copy()
        lo, hi = self.z, self.z + self.l
        np.maximum(out[lo:hi], 0.0, out=out[lo:hi])
        self._project_socs(out)
        return out

    def project_primal_slack(self, u):
        """Project onto K = {0}^z x R+^l x SOC."""
        out = u.copy()
        out[:self.z] = 0.0
        lo, hi = self.z, self.z + self.l
        np.maximum(out[lo:hi], 0.0, out=out[lo:hi])
        self._project_socs(out)
        return out

    def _project_socs(self, out):
        if not len(self.soc_dims):
            return
        if self._uniform:
            d = int(self.soc_dims[0])
            blk = out[self.soc_start:].reshape(-1, d)
            t = blk[:, 0].copy()
            r = np.linalg.norm(blk[:, 1:], axis=1)
            inside = r <= t
            zero = r <= -t
            fix = ~(inside | zero)
            if np.any(zero):
                blk[zero] = 0.0
            if np.any(fix):
                coef = 0.5 * (1.0 + t[fix] / r[fix])
                blk[fix, 0] = coef * r[fix]
                blk[fix, 1:] *= coef[:, None]
            return
        for lo, hi in zip(self._starts, self._ends):
            t = out[lo]
            z = out[lo + 1:hi]
            r = np.linalg.norm(z)
            if r <= t:
                continue
            if r <= -t:
                out[lo:hi] = 0.0
            else:
                coef = 0.5 * (1.0 + t / r)
                out[lo] = coef * r
                out[lo + 1:hi] = coef * z

    def dist_primal(self, u):
        return float(np.linalg.norm(u - self.project_primal_slack(u)))


# ---------------------------------------------------------------------------
# Equilibration
# ---------------------------------------------------------------------------

def _ruiz(A, cones, iters):
    """Row/column inf-norm equilibration; SOC rows share one scale factor so
    the scaled cone stays a second-order cone."""
    m, n = A.shape
    d = np.ones(m)
    e = np.ones(n)
    M = A.copy().tocsr()
    for _ in range(iters):
        absM = abs(M)
        r = absM.max(axis=1).toarray().ravel()
        for lo, hi in zip(cones._starts, cones._ends):
            blk = r[lo:hi]
            nz = blk[blk > 0]
            val = float(np.exp(np.mean(np.log(nz)))) if len(nz) else 1.0
            r[lo:hi] = val
        c = absM.max(axis=0).toarray().ravel()
        r = np.where(r > 0, 1.0 / np.sqrt(r), 1.0)
        c = np.where(c > 0, 1.0 / np.sqrt(c), 1.0)
        M = sp.diags(r) @ M @ sp.diags(c)
        d *= r
        e *= c
    return M.tocsc(), d, e


# ---------------------------------------------------------------------------
# Bundled backend: operator splitting on the homogeneous embedding
# ---------------------------------------------------------------------------

def _solve_bundled(prog, settings):
    """Douglas-Rachford splitting on the homogeneous embedding, with
    safeguarded type-II Anderson acceleration.

    State w = (w_x, w_y, w_t); one step is
        u = Pi_C(w),  u~ = (I+Q)^-1 (2u - w),  w+ = w + alpha (u~ - u)
    with C = R^n x K* x R+ and the skew matrix
    Q = [[0, A', c], [-A, 0, b], [-c', -b', 0]].  The linear solve reduces to
    one cached factorization of I + A'A plus a rank-one correction against
    g = M^-1 (c, b).
    """
    t0 = time.perf_counter()
    A0, b0, c0v, (n_zero, n_pos, soc_dims) = to_standard_form(prog)
    cones = _Cones(n_zero, n_pos, soc_dims)
    m, n = A0.shape
    A0_csr = A0.tocsr()
    A0_T = A0.T.tocsr()
    b0_norm = np.linalg.norm(b0)
    c0_norm = np.linalg.norm(c0v)

    if settings.scaling and m and n and A0.nnz:
        A, d_row, e_col = _ruiz(A0, cones, settings.ruiz_iters)
    else:
        A = A0.tocsc()
        d_row = np.ones(m)
        e_col = np.ones(n)

    sigma_b = 1.0 / max(np.linalg.norm(b0 * d_row), 1e-12)
    sigma_c = 1.0 / max(np.linalg.norm(c0v * e_col), 1e-12)
    b = b0 * d_row * sigma_b
    c = c0v * e_col * sigma_c

    AT = A.T.tocsc()
    A_csr = A.tocsr()
    lin = spla.factorized((sp.identity(n, format="csc") + AT @ A).tocsc())

    def m_solve(wx, wy):
        zx = lin(wx - AT @ wy)
        return zx, wy + A_csr @ zx

    g_x, g_y = m_solve(c, b)
    denom_g = 1.0 + float(c @ g_x + b @ g_y)

    alpha = settings.alpha
    dim = n + m + 1
    # iterations at which sigma_b / sigma_c are renormalized to the observed
    # solution magnitude (tau near 1 keeps per-step progress meaningful)
    rescale_at = {8 * settings.check_interval, 40 * settings.check_interval,
                  200 * settings.check_interval}

    def dr_step(w):
        """One relaxed DR step; returns (w_next, u_x, u_y, u_t, v_s, v_k)."""
        w_x, w_y, w_t = w[:n], w[n:n + m], w[-1]
        u_y = cones.project_dual(w_y)
        u_t = max(w_t, 0.0)
        # reflection argument
        r_x = w_x          # 2 u_x - w_x with u_x = w_x
        r_y = 2.0 * u_y - w_y
        r_t = 2.0 * u_t - w_t
        p_x, p_y = m_solve(r_x, r_y)
        ut_t = (r_t + float(c @ p_x + b @ p_y)) / denom_g
        ut_x = p_x - ut_t * g_x
        ut_y = p_y - ut_t * g_y
        w_next = np.empty_like(w)
        w_next[:n] = w_x + alpha * (ut_x - w_x)
        w_next[n:n + m] = w_y + alpha * (ut_y - u_y)
        w_next[-1] = w_t + alpha * (ut_t - u_t)
        # Moreau: v = Pi_C(w) - w lies in the polar's negation, so the slack
        # block u_y - w_y is in K and the scalar u_t - w_t is kappa >= 0
        return w_next, u_y, u_t, u_y - w_y, u_t - w_t

    w = np.zeros(dim)
    w[-1] = 1.0

    mem = settings.aa_memory
    W_hist = np.zeros((dim, mem))
    G_hist = np.zeros((dim, mem))
    hist_len = 0
    prev_w = prev_g = None
    g_norm_prev = math.inf

    best = None
    status = ITERATION_LIMIT
    iters_done = settings.max_iters
    u_x = w[:n]
    u_y = np.zeros(m)
    u_t = 1.0
    v_s = np.zeros(m)

    def recover(ux, uy, vs, tau):
        x = e_col * ux / (tau * sigma_b)
        y = d_row * uy / (tau * sigma_c)
        s = vs / (d_row * tau * sigma_b)
        return x, y, s

    def residuals(x, y, s):
        r_p = np.linalg.norm(A0_csr @ x + s - b0) / (1.0 + b0_norm)
        r_d = np.linalg.norm(A0_T @ y + c0v) / (1.0 + c0_norm)
        ctx = float(c0v @ x)
        bty = float(b0 @ y)
        gap = abs(ctx + bty) / (1.0 + abs(ctx) + abs(bty))
        return r_p, r_d, gap

    for it in range(1, settings.max_iters + 1):
        w_plain, u_y, u_t, v_y, v_t = dr_step(w)
        g = w_plain - w
        g_norm = float(np.linalg.norm(g))

        # safeguard: if acceleration drove the residual up, restart its memory
        if g_norm > 10.0 * g_norm_prev and hist_len:
            hist_len = 0
            prev_w = prev_g = None
        g_norm_prev = min(g_norm, g_norm_prev)

        w_next = w_plain
        if mem and prev_g is not None:
            if hist_len < mem:
                W_hist[:, hist_len] = w - prev_w
                G_hist[:, hist_len] = g - prev_g
                hist_len += 1
            else:
                W_hist[:, :-1] = W_hist[:, 1:]
                G_hist[:, :-1] = G_hist[:, 1:]
                W_hist[:, -1] = w - prev_w
                G_hist[:, -1] = g - prev_g
            Y = G_hist[:, :hist_len]
            S = W_hist[:, :hist_len]
            gram = Y.T @ Y
            gram[np.diag_indices_from(gram)] += 1e-12 * max(1.0, gram.trace())
            try:
                gamma = np.linalg.solve(gram, Y.T @ g)
                w_aa = w + g - (S + Y) @ gamma
                if np.all(np.isfinite(w_aa)):
                    w_next = w_aa
            except np.linalg.LinAlgError:
                hist_len = 0
        prev_w, prev_g = w, g
        w = w_next

        # termination quantities from the step just taken: u_x equals the
        # pre-step w_x (the x block of C is free), v_s = u_y - w_y
        u_x = prev_w[:n]
        v_s = v_y

        if it in rescale_at and u_t > 1e-12:
            nx = float(np.linalg.norm(u_x)) / u_t
            ny = float(np.linalg.norm(u_y)) / u_t
            if not (0.33 <= nx <= 3.0 and 0.33 <= ny <= 3.0):
                gam_b = 1.0 / max(nx, 1e-9)
                gam_c = 1.0 / max(ny, 1e-9)
                sigma_b *= gam_b
                sigma_c *= gam_c
                b = b * gam_b
                c = c * gam_c
                g_x, g_y = m_solve(c, b)
                denom_g = 1.0 + float(c @ g_x + b @ g_y)
                w = np.empty(dim)
                w[:n] = (u_x / u_t) * gam_b
                w[n:n + m] = (u_y / u_t) * gam_c - (v_s / u_t) * gam_b
                w[-1] = 1.0
                prev_w = prev_g = None
                hist_len = 0
                g_norm_prev = math.inf
                continue

        if it % settings.check_interval:
            continue

        if u_t > 1e-10:
            x, y, s = recover(u_x, u_y, v_s, u_t)
            r_p, r_d, gap = residuals(x, y, s)
            score = r_p + r_d + gap
            if best is None or score < best[0]:
                best = (score, dict(x=x, y=y, s=s, r_p=r_p, r_d=r_d, gap=gap))
            if settings.verbose and it % (40 * settings.check_interval) == 0:
                print(f"  it {it:7d}  r_p {r_p:.3e}  r_d {r_d:.3e}  "
                      f"gap {gap:.3e}  tau {u_t:.3e}  |g| {g_norm:.3e}")
            if (r_p <= settings.eps_primal and r_d <= settings.eps_dual
                    and gap <= settings.eps_gap):
                status = OPTIMAL
                iters_done = it
                break

        # scale-invariant certificate tests: a ray y in K* with A'y = 0 and
        # b'y < 0 proves primal infeasibility, a ray x with -Ax in K and
        # c'x < 0 proves unboundedness
        if it >= 4 * settings.check_interval:
            y_ray = d_row * u_y
            bty = float(b0 @ y_ray)
            if bty < -1e-14:
                y_ray = y_ray / (-bty)
                if np.linalg.norm(A0_T @ y_ray) * max(b0_norm, 1.0) <= \
                        settings.eps_infeasible:
                    status = PRIMAL_INFEASIBLE
                    iters_done = it
                    break
            x_ray = e_col * u_x
            ctx = float(c0v @ x_ray)
            if ctx < -1e-14:
                x_ray = x_ray / (-ctx)
                if cones.dist_primal(-(A0_csr @ x_ray)) * max(c0_norm, 1.0) <= \
                        settings.eps_infeasible:
                    status = DUAL_INFEASIBLE
                    iters_done = it
                    break

    info = dict(solve_time=time.perf_counter() - t0, backend="bundled",
                scaled=bool(settings.scaling))
    if status == OPTIMAL:
        x, y, s = recover(u_x, u_y, v_s, u_t)
        r_p, r_d, gap = residuals(x, y, s)
        return SolveResult(status=OPTIMAL, x=x, y=y, s=s,
                           objective=float(c0v @ x + prog.c0),
                           residuals=dict(primal=r_p, dual=r_d, gap=gap),
                           iterations=iters_done, info=info)
    if status in (PRIMAL_INFEASIBLE, DUAL_INFEASIBLE):
        return SolveResult(status=status, x=None, y=None, s=None,
                           objective=math.nan,
                           residuals=dict(primal=math.nan, dual=math.nan,
                                          gap=math.nan),
                           iterations=iters_done, info=info)
    if best is not None:
        bb = best[1]
        return SolveResult(status=ITERATION_LIMIT, x=bb["x"], y=bb["y"],
                           s=bb["s"], objective=float(c0v @ bb["x"] + prog.c0),
                           residuals=dict(primal=bb["r_p"], dual=bb["r_d"],
                                          gap=bb["gap"]),
                           iterations=settings.max_iters, info=info)
    return SolveResult(status=ITERATION_LIMIT, x=None, y=None, s=None,
                       objective=math.nan,
                       residuals=dict(primal=math.nan, dual=math.nan,
                                      gap=math.nan),
                       iterations=settings.max_iters, info=info)


register_backend("splitting", _solve_bundled)


def _solve_ipm(prog, settings):
    from . import ipm

    A, b, cvec, (n_zero, n_pos, soc_dims) = to_standard_form(prog)
    A = A.tocsr()
    A_eq = A[:n_zero]
    b_eq = b[:n_zero]
    G = A[n_zero:]
    h = b[n_zero:]
    out = ipm.solve_hsde_ipm(A_eq, b_eq, G, h, cvec, n_pos, soc_dims, settings)
    status_map = {"optimal": OPTIMAL, "primal_infeasible": PRIMAL_INFEASIBLE,
                  "dual_infeasible": DUAL_INFEASIBLE}
    status = status_map.get(out["status"], ITERATION_LIMIT)
    info = dict(solve_time=out["solve_time"], backend="bundled-ipm",
                raw_status=out["status"])
    if "x" in out:
        x = out["x"]
        y = np.concatenate([out["y"], out["z"]])
        s = np.concatenate([np.zeros(n_zero), out["s"]])
        residuals = dict(primal=out.get("pres", math.nan),
                         dual=out.get("dres", math.nan),
                         gap=out.get("rel_gap", math.nan))
        if status in (PRIMAL_INFEASIBLE, DUAL_INFEASIBLE):
            return SolveResult(status=status, x=None, y=None, s=None,
                               objective=math.nan,
                               residuals=dict(primal=math.nan, dual=math.nan,
                                              gap=math.nan),
                               iterations=out["iterations"], info=info)
        return SolveResult(status=status, x=x, y=y, s=s,
                           objective=float(cvec @ x + prog.c0),
                           residuals=residuals,
                           iterations=out["iterations"], info=info)
    return SolveResult(status=status, x=None, y=None, s=None,
                       objective=math.nan,
                       residuals=dict(primal=math.nan, dual=math.nan,
                                      gap=math.nan),
                       iterations=out["iterations"], info=info)


register_backend("bundled", _solve_ipm)


# ---------------------------------------------------------------------------
# Independent feasibility certification
# ---------------------------------------------------------------------------

def certify(prog, result, tol=1e-6):
    """Recompute all residuals of a result from the raw program data.

    Independent code path from the solver's internal bookkeeping: it works on
    the original unscaled matrices via constraint_echo.
    """
    from .program import constraint_echo

    if result.status != OPTIMAL:
        raise SolverError(f"certify expects an optimal result, got {result.status}")
    echo = constraint_echo(prog, result.x)
    report = {
        "eq_max": float(echo["eq"].max()) if len(echo["eq"]) else 0.0,
        "ineq_max": float(echo["ineq"].max()) if len(echo["ineq"]) else 0.0,
        "soc_max": float(echo["soc"].max()) if len(echo["soc"]) else 0.0,
        "objective": float(prog.objective(result.x)),
    }
    report["feasible"] = max(report["eq_max"], report["ineq_max"],
                             report["soc_max"]) <= tol
    return report
