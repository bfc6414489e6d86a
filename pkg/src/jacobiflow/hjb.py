"""Grid solver and residual evaluators for stochastic Hamilton-Jacobi
equations on contact and locally-conformal-symplectic charts.

The principal function ``S(q, t)`` on a 1-d configuration interval evolves by

    dS = -sum_k h_k(q, dS/dq, S) o dX^k

(method of lines: central differences in q, nodewise Heun in time, sharing
the increments of a supplied path).  Lifting ``q -> (q, dS/dq, S)`` maps
solutions of the projected equation ``dq = sum_k (dh_k/dp) o dX^k`` onto
trajectories of the full contact system driven by the same noise; the
equivalence error between the lifted and directly integrated trajectories
is the headline check.

Residual evaluators are provided for the section-level formulations: the
(q, u)-grid equation for ``dS/dq`` on contact charts and its Lee-form
variant on l.c.s. charts.
"""

from dataclasses import dataclass

import numpy as np
from scipy.interpolate import CubicSpline

from .differentiation import gradient
from .integrator import integrate

__all__ = [
    "GridFunction",
    "Grid2Function",
    "HjProblem",
    "HjCflError",
    "GridExitError",
    "solve_contact_hj_grid",
    "lift",
    "projected_sde_step",
    "lift_equivalence_error",
    "hj2_residual",
    "lcs_hj_residual",
    "grid_to_csv",
]

BOUNDARIES = ("linear-extrapolation", "periodic")


class HjCflError(RuntimeError):
    def __init__(self, node, step, dt, suggested_dt):
        super().__init__(
            f"advection guard violated at node {node} (step {step}): "
            f"dt={dt:g} exceeds stability bound, suggest dt <= {suggested_dt:g}"
        )
        self.node = node
        self.step = step
        self.suggested_dt = suggested_dt


class GridExitError(RuntimeError):
    def __init__(self, q, step):
        super().__init__(f"projected trajectory left the grid at step {step} (q={q:g})")
        self.q = q
        self.step = step


@dataclass
class GridFunction:
    q_grid: np.ndarray
    times: np.ndarray
    values: np.ndarray          # (len(times), len(q_grid))
    blown_up: int = None

    @property
    def dq(self):
        return float(self.q_grid[1] - self.q_grid[0])


@dataclass
class Grid2Function:
    q_grid: np.ndarray
    u_grid: np.ndarray
    times: np.ndarray
    values: np.ndarray          # (len(times), len(q_grid), len(u_grid))


@dataclass
class HjProblem:
    """Contact HJ problem on ``[a, b]`` with ``num_cells`` uniform cells.

    ``s0``/``s0_prime`` are callables of the bare configuration variable.
    """

    sys: object
    s0: object
    a: float
    b: float
    num_cells: int
    s0_prime: object = None
    boundary: str = "linear-extrapolation"
    slope_cap: float = 1e6

    def __post_init__(self):
        if self.boundary not in BOUNDARIES:
            raise ValueError(f"unknown boundary {self.boundary!r}")
        if self.sys.contact is None or self.sys.contact.n != 1:
            raise ValueError("grid solver needs a contact system with n = 1")

    @property
    def q_grid(self):
        return np.linspace(self.a, self.b, self.num_cells + 1)


def _spatial_derivative(values, dq, boundary):
    """Central differences along the last axis; one-sided at open ends
    (equivalent to a linearly extrapolated ghost node)."""
    out = np.empty_like(values)
    if boundary == "periodic":
        out[...] = (np.roll(values, -1, axis=-1) - np.roll(values, 1, axis=-1)) / (2 * dq)
        return out
    out[..., 1:-1] = (values[..., 2:] - values[..., :-2]) / (2 * dq)
    out[..., 0] = (values[..., 1] - values[..., 0]) / dq
    out[..., -1] = (values[..., -1] - values[..., -2]) / dq
    return out


def _lifted_points(q_grid, s_row, dq, boundary):
    slope = _spatial_derivative(s_row, dq, boundary)
    return np.stack([q_grid, slope, s_row], axis=-1)


def _nodewise_increment(hams, pts, dt, dB):
    """- sum_k h_k(lifted points) dX^k at every node."""
    out = -np.asarray(hams[0].eval(pts)) * dt
    for k in range(1, len(hams)):
        out = out - np.asarray(hams[k].eval(pts)) * dB[k - 1]
    return out


def solve_contact_hj_grid(problem, path):
    """Method-of-lines solve of the stochastic contact HJ equation.

    Returns the full space-time table; stops with a recorded blow-up index
    when values or slopes become non-finite or exceed ``slope_cap`` (the
    numerical proxy for caustic formation).
    """
    q = problem.q_grid
    dq = float(q[1] - q[0])
    hams = problem.sys.hamiltonians.h
    n_steps = path.grid.steps
    dt = path.grid.dt
    values = np.empty((n_steps + 1, len(q)))
    values[0] = np.asarray(problem.s0(q), dtype=float)
    blown = None
    with np.errstate(all="ignore"):
        for i in range(n_steps):
            s_now = values[i]
            pts = _lifted_points(q, s_now, dq, problem.boundary)
            speed = np.abs(gradient(hams[0], pts)[..., 1])
            for k in range(1, len(hams)):
                speed = speed + np.abs(gradient(hams[k], pts)[..., 1]) \
                    * abs(path.increments[k - 1, i]) / dt
            worst = int(np.argmax(speed))
            if dt * speed[worst] / dq > 0.5:
                raise HjCflError(node=worst, step=i, dt=dt,
                                 suggested_dt=0.5 * dq / max(speed[worst], 1e-300))
            dB = path.increments[:, i]
            inc1 = _nodewise_increment(hams, pts, dt, dB)
            s_pred = s_now + inc1
            pts_pred = _lifted_points(q, s_pred, dq, problem.boundary)
            inc2 = _nodewise_increment(hams, pts_pred, dt, dB)
            s_new = s_now + 0.5 * (inc1 + inc2)
            values[i + 1] = s_new
            slope = _spatial_derivative(s_new, dq, problem.boundary)
            if not np.all(np.isfinite(s_new)) or np.max(np.abs(slope)) > problem.slope_cap:
                blown = i + 1
                break
    end = (blown + 1) if blown is not None else n_steps + 1
    return GridFunction(q_grid=q, times=path.grid.times[:end],
                        values=values[:end], blown_up=blown)


def _spline(gridfn, t_index):
    return CubicSpline(gridfn.q_grid, gridfn.values[t_index], bc_type="not-a-knot")


def lift(gridfn, q, t_index):
    """1-jet lift ``(q, dS/dq(q, t), S(q, t))`` via cubic interpolation."""
    if q < gridfn.q_grid[0] or q > gridfn.q_grid[-1]:
        raise ValueError(f"q={q:g} outside grid [{gridfn.q_grid[0]:g}, {gridfn.q_grid[-1]:g}]")
    sp = _spline(gridfn, t_index)
    return np.array([q, float(sp(q, 1)), float(sp(q))])


def projected_sde_step(gridfn, sys, q, t_index, dt, dB):
    """Heun step of ``dq = sum_k (dh_k/dp)(lift(S, q, t)) o dX^k``.

    The predictor evaluates the section at level ``t_index`` and the
    corrector at ``t_index + 1``.
    """
    hams = sys.hamiltonians.h
    lo, hi = gridfn.q_grid[0], gridfn.q_grid[-1]

    def rate(qq, level):
        z = lift(gridfn, qq, level)
        v = gradient(hams[0], z)[1] * dt
        for k in range(1, len(hams)):
            v += gradient(hams[k], z)[1] * dB[k - 1]
        return v

    step1 = rate(q, t_index)
    q_pred = q + step1
    if not (lo <= q_pred <= hi):
        raise GridExitError(q_pred, t_index)
    q_new = q + 0.5 * (step1 + rate(q_pred, t_index + 1))
    if not (lo <= q_new <= hi):
        raise GridExitError(q_new, t_index)
    return q_new


def lift_equivalence_error(problem, path, q0):
    """Compare the lifted projected dynamics with the direct system.

    Runs the grid solve, the projected configuration-space process started
    at ``q0``, and the direct chart integration from the lifted initial
    point, all three driven by the same path.  Returns the sup and endpoint
    chart distances over the common lifetime together with the pieces.
    """
    s_table = solve_contact_hj_grid(problem, path)
    n_avail = len(s_table.times) - 1
    dt = path.grid.dt
    lifted = [lift(s_table, q0, 0)]
    q = q0
    for i in range(n_avail):
        try:
            q = projected_sde_step(s_table, problem.sys, q, i, dt, path.increments[:, i])
        except GridExitError:
            break
        lifted.append(lift(s_table, q, i + 1))
    lifted = np.asarray(lifted)

    direct = integrate(problem.sys, lifted[0], path)
    n_common = min(len(lifted), len(direct.states))
    diff = np.abs(lifted[:n_common] - direct.states[:n_common])
    return {
        "sup_error": float(np.max(diff)),
        "endpoint_error": float(np.max(diff[n_common - 1])),
        "steps_compared": int(n_common - 1),
        "grid": s_table,
        "lifted": lifted,
        "direct": direct.states[:n_common],
    }


def _central_q(values, dq):
    return (values[..., 2:, :] - values[..., :-2, :]) / (2 * dq)


def hj2_residual(s_hat, sys, path, step):
    """Per-step residual of the section-level contact HJ equation on a
    (q, u) grid.

    For each Hamiltonian ``h_k(q, p, u)`` the interior-node residual of

        d(dS/dq) + [h_q + h_p S_qq + (h_p S_qu + h_u) S_q - h S_qu] dX^k

    is accumulated over the step's increments (fields averaged between the
    two time levels); the max-abs entry is returned.
    """
    vals = s_hat.values
    if step + 1 >= vals.shape[0]:
        raise ValueError("step beyond stored time levels")
    dq = float(s_hat.q_grid[1] - s_hat.q_grid[0])
    du = float(s_hat.u_grid[1] - s_hat.u_grid[0])
    hams = sys.hamiltonians.h
    dt = path.grid.dt
    dB = path.increments[:, step]
    dX = np.concatenate(([dt], dB))

    def pieces(level):
        s = vals[level]
        if not np.all(np.isfinite(s)):
            raise ValueError("non-finite grid values")
        s_q = (s[2:, :] - s[:-2, :]) / (2 * dq)           # interior in q
        s_qq = (s[2:, :] - 2 * s[1:-1, :] + s[:-2, :]) / dq ** 2
        s_qu = (s[2:, 2:] - s[2:, :-2] - s[:-2, 2:] + s[:-2, :-2]) / (4 * dq * du)
        s_q_in = s_q[:, 1:-1]
        s_qq_in = s_qq[:, 1:-1]
        q_in = s_hat.q_grid[1:-1][:, None]
        u_in = s_hat.u_grid[1:-1][None, :]
        pts = np.stack([np.broadcast_to(q_in, s_q_in.shape),
                        s_q_in,
                        np.broadcast_to(u_in, s_q_in.shape)], axis=-1)
        rhs = np.zeros_like(s_q_in)
        for k, hk in enumerate(hams):
            g = gradient(hk, pts)
            hv = np.asarray(hk.eval(pts))
            f = g[..., 0] + g[..., 1] * s_qq_in + (g[..., 1] * s_qu + g[..., 2]) * s_q_in \
                - hv * s_qu
            rhs = rhs + f * dX[k]
        return s_q_in, rhs

    sq0, rhs0 = pieces(step)
    sq1, rhs1 = pieces(step + 1)
    resid = (sq1 - sq0) + 0.5 * (rhs0 + rhs1)
    return float(np.max(np.abs(resid)))


def lcs_hj_residual(s_bar, lcs, sys, path, step):
    """Per-step residual of the Lee-form HJ equation

        d(dS/dq) + [h_q + h_p S_qq - theta h] dX^k

    on an l.c.s. chart with ``h_k = h_k(q, p)`` and ``theta`` the
    configuration component of the Lee form at the lifted points.
    """
    vals = s_bar.values
    if step + 1 >= vals.shape[0]:
        raise ValueError("step beyond stored time levels")
    dq = float(s_bar.q_grid[1] - s_bar.q_grid[0])
    hams = sys.hamiltonians.h
    dt = path.grid.dt
    dB = path.increments[:, step]
    dX = np.concatenate(([dt], dB))

    def pieces(level):
        s = vals[level]
        if not np.all(np.isfinite(s)):
            raise ValueError("non-finite grid values")
        s_q = (s[2:] - s[:-2]) / (2 * dq)
        s_qq = (s[2:] - 2 * s[1:-1] + s[:-2]) / dq ** 2
        q_in = s_bar.q_grid[1:-1]
        pts = np.stack([q_in, s_q], axis=-1)
        theta = np.asarray(lcs.lee_form(pts))[..., 0]
        rhs = np.zeros_like(s_q)
        for k, hk in enumerate(hams):
            g = gradient(hk, pts)
            hv = np.asarray(hk.eval(pts))
            rhs = rhs + (g[..., 0] + g[..., 1] * s_qq - theta * hv) * dX[k]
        return s_q, rhs

    sq0, rhs0 = pieces(step)
    sq1, rhs1 = pieces(step + 1)
    resid = (sq1 - sq0) + 0.5 * (rhs0 + rhs1)
    return float(np.max(np.abs(resid)))


def grid_to_csv(gridfn, fname):
    """Rows are time levels; first column t, then one column per q node."""
    with open(fname, "w") as fh:
        fh.write("t," + ",".join(f"q={qq:.17g}" for qq in gridfn.q_grid) + "\n")
        for i, t in enumerate(gridfn.times):
            fh.write(f"{t:.17g}," + ",".join(f"{v:.17g}" for v in gridfn.values[i]) + "\n")
