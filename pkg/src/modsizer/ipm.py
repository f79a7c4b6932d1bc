"""Primal-dual interior-point backend for the conic solver.

Solves  min c'x  s.t.  A_eq x = b_eq,  A_K x + s = b_K,  s in K
(K = nonnegative orthant x product of second-order cones) on the homogeneous
self-dual embedding with Nesterov-Todd scaling and a Mehrotra
predictor-corrector step.  Every iteration factors one quasi-definite saddle
system

    [[H + dI, A_eq'], [A_eq, -dI]],   H = G' (W'W)^-1 G

through a sparse LU with static regularization; two right-hand sides per
direction reuse the factorization.  All quantities are deterministic
functions of the program data and settings.

The embedding carries (x, y, z, s, tau, kappa) with residuals
    rx = A'y + G'z + c tau,   ry = A x - b tau,   rz = G x + s - h tau,
    rt = c'x + b'y + h'z + kappa,
driven to zero together with the complementarity s o z -> mu e, tau kappa
-> mu.  tau -> positive limit yields an optimal point; kappa dominating
certifies primal or dual infeasibility through the sign of h'z + b'y or c'x.
"""

from __future__ import annotations

import math
import time

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

REG = 1e-11         # static regularization of the saddle system
MIN_STEP_DENOM = 1e-13


class _ConeOps:
    """Vectorized Jordan-algebra operations for R+^l x SOC(dims)."""

    def __init__(self, n_pos, soc_dims):
        self.l = int(n_pos)
        self.dims = np.asarray(soc_dims, dtype=int)
        self.m = self.l + int(self.dims.sum())
        self.nu = self.l + len(self.dims)  # barrier degree
        ends = self.l + np.cumsum(self.dims) if len(self.dims) else np.zeros(0, int)
        self.starts = ends - self.dims if len(self.dims) else np.zeros(0, int)
        self.ends = ends
        self.head = self.starts  # index of each cone's first (head) entry
        # mask of tail entries for vectorized ops
        tail_idx = []
        blk_of_tail = []
        for k, (lo, hi) in enumerate(zip(self.starts, self.ends)):
            tail_idx.extend(range(lo + 1, hi))
            blk_of_tail.extend([k] * (hi - lo - 1))
        self.tail_idx = np.asarray(tail_idx, dtype=int)
        self.blk_of_tail = np.asarray(blk_of_tail, dtype=int)

    def unit(self):
        e = np.zeros(self.m)
        e[:self.l] = 1.0
        e[self.head] = 1.0
        return e

    def soc_parts(self, u):
        """(head values, per-cone tail 2-norms) for the SOC section."""
        if not len(self.dims):
            return np.zeros(0), np.zeros(0)
        t = u[self.head]
        sq = np.zeros(len(self.dims))
        np.add.at(sq, self.blk_of_tail, u[self.tail_idx] ** 2)
        return t, np.sqrt(sq)

    def inside(self, u, margin=0.0):
        if self.l and np.min(u[:self.l]) <= margin:
            return False
        t, r = self.soc_parts(u)
        return bool(np.all(t - r > margin)) if len(self.dims) else True

    def resid(self, u):
        """Jordan determinant-ish residuals: positive strictly inside."""
        parts = []
        if self.l:
            parts.append(u[:self.l])
        if len(self.dims):
            t, r = self.soc_parts(u)
            parts.append(t - r)
        return np.concatenate(parts) if parts else np.zeros(0)

    def max_step(self, u, du):
        """Largest alpha with u + alpha du on the cone boundary (inf if free)."""
        alpha = math.inf
        if self.l:
            neg = du[:self.l] < -MIN_STEP_DENOM
            if np.any(neg):
                alpha = float(np.min(-u[:self.l][neg] / du[:self.l][neg]))
        for lo, hi in zip(self.starts, self.ends):
            a = self._soc_step(u[lo:hi], du[lo:hi])
            alpha = min(alpha, a)
        return alpha

    @staticmethod
    def _soc_step(u, du):
        # largest alpha with (u0 + a d0)^2 >= ||u1 + a d1||^2, u0 + a d0 >= 0
        aa = du[0] ** 2 - du[1:] @ du[1:]
        bb = 2.0 * (u[0] * du[0] - u[1:] @ du[1:])
        cc = u[0] ** 2 - u[1:] @ u[1:]
        # roots of aa a^2 + bb a + cc = 0; want smallest positive crossing
        best = math.inf
        if abs(aa) < MIN_STEP_DENOM:
            if bb < -MIN_STEP_DENOM:
                best = -cc / bb
        else:
            disc = bb * bb - 4 * aa * cc
            if disc >= 0:
                sq = math.sqrt(disc)
                for root in ((-bb - sq) / (2 * aa), (-bb + sq) / (2 * aa)):
                    if root > MIN_STEP_DENOM:
                        best = min(best, root)
        if best is not math.inf:
            # also require the head to stay nonnegative up to the crossing
            if u[0] + best * du[0] < -MIN_STEP_DENOM:
                head_cross = -u[0] / du[0] if du[0] < -MIN_STEP_DENOM else math.inf
                best = min(best, head_cross)
        return best if best > 0 else 0.0

    # -- Nesterov-Todd scaling -------------------------------------------

    def nt_scaling(self, s, z):
        """Return scaling state: (w_pos, eta per soc, wbar per soc, lambda)."""
        w_pos = np.sqrt(s[:self.l] / z[:self.l]) if self.l else np.zeros(0)
        lam = np.empty(self.m)
        lam[:self.l] = np.sqrt(s[:self.l] * z[:self.l])
        etas = np.zeros(len(self.dims))
        wbars = []
        for k, (lo, hi) in enumerate(zip(self.starts, self.ends)):
            sb, zb = s[lo:hi], z[lo:hi]
            rs = math.sqrt(max(sb[0] ** 2 - sb[1:] @ sb[1:], 1e-300))
            rz = math.sqrt(max(zb[0] ** 2 - zb[1:] @ zb[1:], 1e-300))
            sn = sb / rs
            zn = zb / rz
            gamma = math.sqrt((1.0 + sn[0] * zn[0] + sn[1:] @ zn[1:]) / 2.0)
            wb = np.empty_like(sn)
            wb[0] = (sn[0] + zn[0]) / (2 * gamma)
            wb[1:] = (sn[1:] - zn[1:]) / (2 * gamma)
            eta = math.sqrt(rs / rz)
            etas[k] = eta
            wbars.append(wb)
            # scaled point lambda = W z = W^-T s
            scale = math.sqrt(rs * rz)
            lb = np.empty_like(wb)
            lb[0] = gamma
            # lambda_1 from the symmetric formula
            coef = (gamma + zn[0]) * sn[1:] + (gamma + sn[0]) * zn[1:]
            lb[1:] = coef / (sn[0] + zn[0] + 2 * gamma)
            lam[lo:hi] = scale * lb
        return dict(w_pos=w_pos, etas=etas, wbars=wbars, lam=lam)

    def wsq_inv_matrix(self, scal):
        """Sparse (W'W)^-1 as a matrix (diagonal + 3x3-ish SOC blocks)."""
        rows, cols, vals = [], [], []
        if self.l:
            idx = np.arange(self.l)
            rows.append(idx)
            cols.append(idx)
            vals.append(1.0 / scal["w_pos"] ** 2)
        for k, (lo, hi) in enumerate(zip(self.starts, self.ends)):
            wb = scal["wbars"][k]
            d = hi - lo
            # (W'W)^-1 = eta^-2 (2 (J wbar)(J wbar)' - J),  J = diag(1, -I)
            jw = wb.copy()
            jw[1:] = -jw[1:]
            blk = 2.0 * np.outer(jw, jw)
            blk[0, 0] -= 1.0
            blk[np.arange(1, d), np.arange(1, d)] += 1.0
            blk /= scal["etas"][k] ** 2
            rr, cc = np.meshgrid(np.arange(lo, hi), np.arange(lo, hi),
                                 indexing="ij")
            rows.append(rr.ravel())
            cols.append(cc.ravel())
            vals.append(blk.ravel())
        if not rows:
            return sp.csr_matrix((0, 0))
        return sp.csr_matrix((np.concatenate(vals),
                              (np.concatenate(rows), np.concatenate(cols))),
                             shape=(self.m, self.m))

    def w_apply(self, scal, u, transpose=False):
        """W u (NT scaling is symmetric, so transpose is a no-op)."""
        out = np.empty_like(u)
        out[:self.l] = scal["w_pos"] * u[:self.l]
        for k, (lo, hi) in enumerate(zip(self.starts, self.ends)):
            wb = scal["wbars"][k]
            ub = u[lo:hi]
            w0, w1 = wb[0], wb[1:]
            t = ub[0] * w0 + w1 @ ub[1:]
            out[lo] = scal["etas"][k] * t
            coef = ub[0] + (t + ub[0]) / (1.0 + w0)
            out[lo + 1:hi] = scal["etas"][k] * (ub[1:] + ((ub[0] + t) /
                                                          (1.0 + w0)) * w1)
        return out

    def w_inv_apply(self, scal, u):
        """W^-1 u."""
        out = np.empty_like(u)
        out[:self.l] = u[:self.l] / scal["w_pos"]
        for k, (lo, hi) in enumerate(zip(self.starts, self.ends)):
            wb = scal["wbars"][k]
            ub = u[lo:hi]
            w0, w1 = wb[0], wb[1:]
            t = ub[0] * w0 - w1 @ ub[1:]
            out[lo] = t / scal["etas"][k]
            out[lo + 1:hi] = (ub[1:] - ((ub[0] + t) / (1.0 + w0)) * w1) \
                / scal["etas"][k]
        return out

    # -- Jordan products --------------------------------------------------

    def jprod(self, u, v):
        out = np.empty(self.m)
        out[:self.l] = u[:self.l] * v[:self.l]
        for lo, hi in zip(self.starts, self.ends):
            ub, vb = u[lo:hi], v[lo:hi]
            out[lo] = ub @ vb
            out[lo + 1:hi] = ub[0] * vb[1:] + vb[0] * ub[1:]
        return out

    def jdiv(self, lam, v):
        """Solve lam o u = v for u."""
        out = np.empty(self.m)
        out[:self.l] = v[:self.l] / lam[:self.l]
        for lo, hi in zip(self.starts, self.ends):
            lb, vb = lam[lo:hi], v[lo:hi]
            det = lb[0] ** 2 - lb[1:] @ lb[1:]
            v0, v1 = vb[0], vb[1:]
            u0 = (lb[0] * v0 - lb[1:] @ v1) / det
            u1 = (v1 - u0 * lb[1:]) / lb[0]
            out[lo] = u0
            out[lo + 1:hi] = u1
        return out


def solve_hsde_ipm(A_eq, b_eq, G, h, c, n_pos, soc_dims, settings):
    """Run the interior-point iteration; returns a result dict."""
    t0 = time.perf_counter()
    n = len(c)
    p = A_eq.shape[0]
    cones = _ConeOps(n_pos, soc_dims)
    m = cones.m
    assert G.shape == (m, n)

    A_eq = A_eq.tocsr()
    G = G.tocsr()
    GT = G.T.tocsr()
    AT = A_eq.T.tocsr()
    norm_b = max(np.linalg.norm(b_eq), 1.0) if p else 1.0
    norm_h = max(np.linalg.norm(h), 1.0)
    norm_c = max(np.linalg.norm(c), 1.0)

    saddle_n = n + p

    def factor(wsq_inv):
        H = (GT @ wsq_inv @ G).tocsc()
        K = sp.bmat([[H + REG * sp.identity(n),
                      AT if p else None],
                     [A_eq if p else None,
                      -REG * sp.identity(p) if p else None]], format="csc") \
            if p else (H + REG * sp.identity(n)).tocsc()
        return spla.splu(K, permc_spec="COLAMD")

    def kkt_solve(lu, wsq_inv, r1, r2, r3, refine=2):
        """Solve the 3x3 scaled KKT: returns (dx, dy, dz)."""
        def saddle(rhs1, rhs2):
            rhs = np.concatenate([rhs1, rhs2]) if p else rhs1
            sol = lu.solve(rhs)
            return (sol[:n], sol[n:]) if p else (sol, np.zeros(0))

        t3 = wsq_inv @ r3
        dx, dy = saddle(r1 + GT @ t3, r2)
        # iterative refinement on the condensed system
        for _ in range(refine):
            res1 = r1 + GT @ t3 - ((GT @ (wsq_inv @ (G @ dx)))
                                   + (AT @ dy if p else 0.0))
            res2 = r2 - A_eq @ dx if p else np.zeros(0)
            cx, cy = saddle(res1, res2)
            dx += cx
            dy += cy
        dz = wsq_inv @ (G @ dx - r3)
        return dx, dy, dz

    # initial point: W = I solves
    eye_wsq = sp.identity(m, format="csr")
    lu0 = factor(eye_wsq)
    # primal init: min ||s|| with A x = b, G x + s = h
    x0, _, _ = kkt_solve(lu0, eye_wsq, np.zeros(n), b_eq, h)
    s0 = h - G @ x0
    rr = cones.resid(s0)
    shift = -float(rr.min()) if len(rr) else 0.0
    if shift > 0 or not cones.inside(s0):
        s0 = s0 + (1.0 + shift) * cones.unit()
    # dual init: min ||z|| with A'y + G'z + c = 0
    _, y0, z0 = kkt_solve(lu0, eye_wsq, -c, np.zeros(p), np.zeros(m))
    rr = cones.resid(z0)
    shift = -float(rr.min()) if len(rr) else 0.0
    if shift > 0 or not cones.inside(z0):
        z0 = z0 + (1.0 + shift) * cones.unit()

    x, y, z, s = x0, y0, z0, s0
    tau, kappa = 1.0, 1.0

    best = None
    status = "iteration_limit"
    iters = 0
    max_iters = min(settings.max_iters, 200)

    for it in range(1, max_iters + 1):
        iters = it
        rx = (AT @ y if p else 0.0) + GT @ z + c * tau
        ry = A_eq @ x - b_eq * tau if p else np.zeros(0)
        rz = G @ x + s - h * tau
        rt = float(c @ x + (b_eq @ y if p else 0.0) + h @ z) + kappa
        mu = (s @ z + tau * kappa) / (cones.nu + 1)

        # convergence metrics (all relative, on the de-homogenized point)
        pres = max(np.linalg.norm(ry) / norm_b if p else 0.0,
                   np.linalg.norm(rz) / norm_h) / tau
        dres = np.linalg.norm(rx) / norm_c / tau
        cx = float(c @ x) / tau
        by = float(b_eq @ y) / tau if p else 0.0
        hz = float(h @ z) / tau
        gap_abs = float(s @ z) / tau ** 2
        rel_gap = gap_abs / max(1.0, abs(cx), abs(by + hz))
        score = pres + dres + rel_gap
        if best is None or score < best["score"]:
            best = dict(score=score, x=x / tau, y=y / tau, z=z / tau,
                        s=s / tau, pres=pres, dres=dres, rel_gap=rel_gap,
                        iterations=it)
        elif score > 1e3 * best["score"] and it > 5:
            # finite-precision blow-up past the attainable accuracy
            status = "stalled"
            break
        if settings.verbose:
            print(f"  ipm it {it:3d} mu {mu:.2e} pres {pres:.2e} "
                  f"dres {dres:.2e} relgap {rel_gap:.2e} tau {tau:.2e} "
                  f"kappa {kappa:.2e}")
        if (pres <= settings.eps_primal and dres <= settings.eps_dual
                and rel_gap <= settings.eps_gap):
            status = "optimal"
            break
        # infeasibility: embedding pushes tau -> 0, kappa > 0
        if tau < 1e-10 or (kappa / max(tau, 1e-300) > 1e6 and mu < 1e-10):
            neg = by + hz
            if neg < 0 and np.linalg.norm(rx - c * tau) / norm_c / (-neg) \
                    <= settings.eps_infeasible * 1e3:
                status = "primal_infeasible"
                break
            if cx < 0:
                status = "dual_infeasible"
                break
            status = "ill_posed"
            break

        if not (cones.inside(s) and cones.inside(z)):
            status = "numerical_failure"
            break
        scal = cones.nt_scaling(s, z)
        lam = scal["lam"]
        wsq_inv = cones.wsq_inv_matrix(scal)
        try:
            lu = factor(wsq_inv)
        except RuntimeError:
            status = "numerical_failure"
            break
        ux, uy, uz = kkt_solve(lu, wsq_inv, -c, b_eq, h)
        denom_tau = float(c @ ux + (b_eq @ uy if p else 0.0) + h @ uz) \
            - kappa / tau

        def direction(d_t, d_kt, rx_f, ry_f, rz_f, rt_f):
            lam_d = cones.jdiv(lam, d_t)
            r3 = -rz_f + cones.w_apply(scal, lam_d)
            vx, vy, vz = kkt_solve(lu, wsq_inv, -rx_f, -ry_f, r3)
            num = -rt_f + d_kt / tau - float(
                c @ vx + (b_eq @ vy if p else 0.0) + h @ vz)
            dtau = num / denom_tau if abs(denom_tau) > 1e-14 else 0.0
            dx = vx + dtau * ux
            dy = vy + dtau * uy
            dz = vz + dtau * uz
            ds = -cones.w_apply(scal, cones.w_apply(scal, dz) + lam_d)
            dkappa = (-d_kt - kappa * dtau) / tau
            return dx, dy, dz, ds, dtau, dkappa

        # affine (predictor) direction
        d_t = cones.jprod(lam, lam)
        aff = direction(d_t, tau * kappa, rx, ry, rz, rt)
        dxa, dya, dza, dsa, dta, dka = aff
        alpha_a = min(cones.max_step(s, dsa), cones.max_step(z, dza), 1.0)
        if dta < 0:
            alpha_a = min(alpha_a, -tau / dta)
        if dka < 0:
            alpha_a = min(alpha_a, -kappa / dka)
        sigma = max(0.0, min(1.0, (1.0 - alpha_a))) ** 3
        sigma = max(sigma, 1e-8)

        # combined (corrector) direction
        wdz = cones.w_apply(scal, dza)
        wids = cones.w_inv_apply(scal, dsa)
        d_t = cones.jprod(lam, lam) + cones.jprod(wids, wdz) \
            - sigma * mu * cones.unit()
        d_kt = tau * kappa + dta * dka - sigma * mu
        dx, dy, dz, ds, dtau, dkappa = direction(
            d_t, d_kt, (1 - sigma) * rx, (1 - sigma) * ry, (1 - sigma) * rz,
            (1 - sigma) * rt)

        alpha = min(cones.max_step(s, ds), cones.max_step(z, dz))
        if dtau < 0:
            alpha = min(alpha, -tau / dtau)
        if dkappa < 0:
            alpha = min(alpha, -kappa / dkappa)
        alpha = min(0.98 * alpha, 1.0)
        # keep strictly inside the cones despite a finite-precision direction
        for _ in range(40):
            if alpha <= 1e-13:
                break
            if cones.inside(s + alpha * ds, margin=0.0) and \
                    cones.inside(z + alpha * dz, margin=0.0) and \
                    tau + alpha * dtau > 0 and kappa + alpha * dkappa > 0:
                break
            alpha *= 0.8
        if alpha <= 1e-13:
            status = "stalled"
            break

        x = x + alpha * dx
        y = y + alpha * dy
        z = z + alpha * dz
        s = s + alpha * ds
        tau += alpha * dtau
        kappa += alpha * dkappa

    out = dict(status=status, iterations=iters,
               solve_time=time.perf_counter() - t0)
    if status == "optimal":
        out.update(x=x / tau, y=y / tau, z=z / tau, s=s / tau,
                   pres=pres, dres=dres, rel_gap=rel_gap)
    elif best is not None and status in ("iteration_limit", "numerical_failure",
                                         "ill_posed", "stalled"):
        if (best["pres"] <= settings.eps_primal
                and best["dres"] <= settings.eps_dual
                and best["rel_gap"] <= settings.eps_gap):
            out["status"] = "optimal"
        out.update(x=best["x"], y=best["y"], z=best["z"], s=best["s"],
                   pres=best["pres"], dres=best["dres"],
                   rel_gap=best["rel_gap"])
    return out
