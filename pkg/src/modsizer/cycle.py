"""Drive-cycle loading, resampling, and differentiation.

Cycles live on a uniform grid; acceleration is the forward difference of
speed (zero on the last sample), matching the Euler-forward discretization of
the battery energy dynamics.  Distance is the left-Riemann sum of speed over
the horizon.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass
from importlib import resources
from pathlib import Path

import numpy as np

from .errors import CycleError


@dataclass(frozen=True)
class DriveCycle:
    t: np.ndarray       # s, uniform grid
    v: np.ndarray       # m/s
    theta: np.ndarray   # rad
    a: np.ndarray       # m/s^2, forward difference, a[-1] = 0
    dt: float           # s
    d: float            # m, sum(v[:-1]) * dt
    T: float            # s, horizon (n-1)*dt

    @property
    def n_samples(self):
        return len(self.t)

    @property
    def n_steps(self):
        return len(self.t) - 1


def _finish(t, v, theta):
    dt = float(t[1] - t[0])
    a = np.zeros_like(v)
    a[:-1] = np.diff(v) / dt
    d = float(np.sum(v[:-1]) * dt)
    return DriveCycle(t=t, v=v, theta=theta, a=a, dt=dt, d=d,
                      T=float(t[-1] - t[0]))


def from_samples(t, v, theta=None, default_theta=0.0):
    """Build a cycle from time/speed samples, resampling if non-uniform."""
    t = np.asarray(t, dtype=float)
    v = np.asarray(v, dtype=float)
    if t.size == 0:
        raise CycleError("empty cycle")
    if t.size < 2:
        raise CycleError("a cycle needs at least two samples")
    if np.any(np.diff(t) <= 0):
        raise CycleError("time grid must be strictly increasing")
    if np.any(v < 0):
        k = int(np.argmax(v < 0))
        raise CycleError(f"negative speed {v[k]} at t = {t[k]}")
    if theta is None:
        theta = np.full_like(v, float(default_theta))
    else:
        theta = np.asarray(theta, dtype=float)
        if theta.shape != v.shape:
            raise CycleError("theta and v must have equal length")

    steps = np.diff(t)
    dt = float(np.min(steps))
    if not np.allclose(steps, steps[0], rtol=0, atol=1e-9):
        grid = np.arange(t[0], t[-1] + dt / 2, dt)
        v = np.interp(grid, t, v)
        theta = np.interp(grid, t, theta)
        t = grid
    t = t - t[0]
    return _finish(t, v.copy(), theta.copy())


def load_cycle(path, default_theta=0.0):
    """Load a cycle from CSV with header t,v or t,v,theta (s, m/s, rad)."""
    path = Path(path)
    if not path.exists():
        raise CycleError(f"cycle file not found: {path}")
    return _parse_csv(path.read_text(), default_theta)


def load_builtin(name="wltp_class3", default_theta=0.0):
    """Load one of the cycles shipped with the package."""
    text = resources.files("modsizer.data").joinpath(f"{name}.csv").read_text()
    return _parse_csv(text, default_theta)


def _parse_csv(text, default_theta):
    rows = list(csv.reader(io.StringIO(text)))
    rows = [r for r in rows if r and any(c.strip() for c in r)]
    if not rows:
        raise CycleError("empty file")
    header = [c.strip() for c in rows[0]]
    if header[:2] != ["t", "v"] or len(header) not in (2, 3):
        raise CycleError("header must be t,v or t,v,theta")
    has_theta = len(header) == 3 and header[2] == "theta"
    try:
        data = np.array([[float(x) for x in r] for r in rows[1:]], dtype=float)
    except ValueError as exc:
        raise CycleError(f"non-numeric entry: {exc}")
    if data.size == 0:
        raise CycleError("empty file")
    theta = data[:, 2] if has_theta else None
    return from_samples(data[:, 0], data[:, 1], theta, default_theta)


def resample(c, dt_new):
    """Linearly interpolate the cycle onto a coarser uniform grid."""
    if dt_new <= 0:
        raise CycleError(f"dt_new must be positive, got {dt_new}")
    if dt_new < c.dt - 1e-12:
        raise CycleError(f"dt_new = {dt_new} finer than the source grid {c.dt}")
    if abs(dt_new - c.dt) < 1e-12:
        return c
    grid = np.arange(0.0, c.T + dt_new / 2, dt_new)
    v = np.interp(grid, c.t, c.v)
    theta = np.interp(grid, c.t, c.theta)
    return _finish(grid, v, theta)


def save_cycle(c, path):
    with open(path, "w") as fh:
        fh.write("t,v,theta\n")
        for tt, vv, th in zip(c.t, c.v, c.theta):
            fh.write(f"{tt:.6g},{vv:.10g},{th:.10g}\n")
