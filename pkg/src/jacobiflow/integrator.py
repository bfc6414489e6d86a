"""Stratonovich/Ito stepping of Hamiltonian systems on Jacobi-type charts.

The system ``dZ = sum_k V_{h_k}(Z) o dX^k`` (``X^0 = t``, ``X^k = B^k`` for
``k >= 1``) is integrated with a Heun predictor-corrector in Stratonovich
form, or with an explicitly drift-corrected Euler scheme in Ito form.  The
tangent (variational) flow and the conformal log-accumulator
``L_t = -sum_k int R(h_k) o dX^k`` can be co-integrated.

All steppers work on a single chart point of shape ``(m,)`` or on a batch
``(B, m)``; the batch path powers ensemble runs.
"""

from dataclasses import dataclass, field

import numpy as np

from .differentiation import jacobian, gradient
from .geometry import hamiltonian_field

__all__ = [
    "HamiltonianFamily",
    "SdeSystem",
    "Trajectory",
    "drift_diffusion_fields",
    "heun_step",
    "ito_drift_correction",
    "euler_ito_step",
    "tangent_step",
    "integrate",
    "integrate_batch",
    "f_along_path_residual",
    "trajectory_to_csv",
]

SCHEMES = ("heun", "euler-ito")


@dataclass
class HamiltonianFamily:
    """Hamiltonians ``h_0..h_r``: ``h_0`` couples to dt, the rest to dB^k."""

    h: list

    @property
    def r(self):
        return len(self.h) - 1


@dataclass
class SdeSystem:
    """A stochastic Hamiltonian system on a chart.

    ``fields_override``, when set, replaces the structure-derived vector
    fields (used by models whose displayed equations agree with Hamiltonian
    fields only on an invariant subset).
    """

    structure: object
    hamiltonians: HamiltonianFamily
    contact: object = None
    lcs: object = None
    fields_override: list = None
    _fields: list = field(default=None, repr=False)

    @property
    def dim(self):
        return self.structure.dim

    @property
    def r(self):
        return self.hamiltonians.r

    @property
    def fields(self):
        if self._fields is None:
            if self.fields_override is not None:
                self._fields = list(self.fields_override)
            else:
                self._fields = [hamiltonian_field(self.structure, hk)
                                for hk in self.hamiltonians.h]
        return self._fields


@dataclass
class Trajectory:
    times: np.ndarray
    states: np.ndarray                 # (len(times), m)
    jacobians: np.ndarray = None       # (len(times), m, m)
    log_conformal: np.ndarray = None   # (len(times),)
    blown_up: int = None


def drift_diffusion_fields(sys, z):
    """Evaluate ``[V_{h_0}(z), ..., V_{h_r}(z)]``."""
    return [np.asarray(V(z)) for V in sys.fields]


def _combined_increment(sys, z, dt, dB):
    """``sum_k V_k(z) dX^k`` with ``dX = (dt, dB)``; broadcasts over batches."""
    fields = sys.fields
    out = np.asarray(fields[0](z)) * dt
    dB = np.asarray(dB)
    for k in range(1, len(fields)):
        w = dB[..., k - 1]
        out = out + np.asarray(fields[k](z)) * (w[..., None] if w.ndim else float(w))
    return out


def heun_step(sys, z, dt, dB):
    """One Stratonovich Heun (predictor-corrector) step.

    A non-finite result signals blow-up; :func:`integrate` records the
    stopping index rather than raising.
    """
    z = np.asarray(z, dtype=float)
    with np.errstate(all="ignore"):
        incr = _combined_increment(sys, z, dt, dB)
        z_pred = z + incr
        if not np.all(np.isfinite(z_pred)):
            return z_pred
        incr2 = _combined_increment(sys, z_pred, dt, dB)
        return z + 0.5 * (incr + incr2)


def ito_drift_correction(sys, z):
    """Stratonovich-to-Ito drift adjustment ``0.5 sum_k (DV_k)(z) V_k(z)``."""
    z = np.asarray(z, dtype=float)
    out = np.zeros_like(z)
    for k in range(1, sys.r + 1):
        V = sys.fields[k]
        DV = jacobian(V, z)
        out = out + 0.5 * np.einsum("...ij,...j->...i", DV, np.asarray(V(z)))
    return out


def euler_ito_step(sys, z, dt, dB):
    """One Euler-Maruyama step of the equivalent Ito system."""
    z = np.asarray(z, dtype=float)
    dB = np.asarray(dB)
    with np.errstate(all="ignore"):
        out = z + (np.asarray(sys.fields[0](z)) + ito_drift_correction(sys, z)) * dt
        for k in range(1, sys.r + 1):
            w = dB[..., k - 1]
            out = out + np.asarray(sys.fields[k](z)) * (w[..., None] if w.ndim else float(w))
        return out


def _tangent_increment(sys, z, J, dt, dB):
    out = np.einsum("...ij,...jk->...ik", jacobian(sys.fields[0], z), J) * dt
    for k in range(1, sys.r + 1):
        w = dB[k - 1]
        out = out + np.einsum("...ij,...jk->...ik", jacobian(sys.fields[k], z), J) * w
    return out


def tangent_step(sys, z, J, dt, dB):
    """Heun step of the state together with its tangent flow Jacobian."""
    z = np.asarray(z, dtype=float)
    J = np.asarray(J, dtype=float)
    with np.errstate(all="ignore"):
        dz1 = _combined_increment(sys, z, dt, dB)
        dJ1 = _tangent_increment(sys, z, J, dt, dB)
        z_pred = z + dz1
        if not np.all(np.isfinite(z_pred)):
            return z_pred, J + dJ1
        J_pred = J + dJ1
        dz2 = _combined_increment(sys, z_pred, dt, dB)
        dJ2 = _tangent_increment(sys, z_pred, J_pred, dt, dB)
        return z + 0.5 * (dz1 + dz2), J + 0.5 * (dJ1 + dJ2)


def _reeb_rates(sys, z):
    """``R(h_k)(z) = dh_k/du`` for each Hamiltonian, on a contact chart."""
    u_idx = 2 * sys.contact.n
    return np.array([gradient(hk, z)[..., u_idx] for hk in sys.hamiltonians.h])


def integrate(sys, z0, path, scheme="heun", tangent=False, conformal=False):
    """Step through the full grid of ``path`` from ``z0``.

    Returns a :class:`Trajectory`.  With ``tangent=True`` the variational
    Jacobians are co-integrated (Heun only); with ``conformal=True`` the
    log-accumulator of the conformal factor is integrated by the
    Stratonovich trapezoid (requires contact data on the system).
    """
    if scheme not in SCHEMES:
        raise ValueError(f"unknown scheme {scheme!r}; expected one of {SCHEMES}")
    if conformal and sys.contact is None:
        raise ValueError("conformal accumulator requested but system has no contact data")
    if tangent and scheme != "heun":
        raise ValueError("tangent flow is only integrated with the heun scheme")

    z0 = np.asarray(z0, dtype=float)
    if not np.all(np.isfinite(z0)):
        raise ValueError("non-finite initial state")
    m = z0.shape[0]
    n = path.grid.steps
    dt = path.grid.dt
    times = path.grid.times

    states = np.empty((n + 1, m))
    states[0] = z0
    jac = None
    if tangent:
        jac = np.empty((n + 1, m, m))
        jac[0] = np.eye(m)
    logc = None
    if conformal:
        logc = np.zeros(n + 1)
        rates = _reeb_rates(sys, states[0])

    blown = None
    for i in range(n):
        dB = path.increments[:, i]
        if tangent:
            z_new, J_new = tangent_step(sys, states[i], jac[i], dt, dB)
            jac[i + 1] = J_new
        else:
            z_new = heun_step(sys, states[i], dt, dB) if scheme == "heun" \
                else euler_ito_step(sys, states[i], dt, dB)
        states[i + 1] = z_new
        if not np.all(np.isfinite(z_new)):
            blown = i + 1
            break
        if conformal:
            rates_new = _reeb_rates(sys, z_new)
            dX = np.concatenate(([dt], dB))
            logc[i + 1] = logc[i] - 0.5 * np.dot(rates + rates_new, dX)
            rates = rates_new

    end = (blown + 1) if blown is not None else n + 1
    return Trajectory(
        times=times[:end],
        states=states[:end],
        jacobians=jac[:end] if tangent else None,
        log_conformal=logc[:end] if conformal else None,
        blown_up=blown,
    )


def integrate_batch(sys, z0, increments, dt, scheme="heun", store=False):
    """Integrate a batch of paths sharing one grid.

    Parameters
    ----------
    z0 : (B, m) initial states (a single point broadcasts).
    increments : (B, r, N) per-path Brownian increments.
    dt : step size.
    store : return the whole (N+1, B, m) history instead of endpoints.
    """
    if scheme not in SCHEMES:
        raise ValueError(f"unknown scheme {scheme!r}")
    increments = np.asarray(increments, dtype=float)
    B, r, n = increments.shape
    z = np.array(np.broadcast_to(np.asarray(z0, dtype=float), (B, sys.dim)))
    hist = np.empty((n + 1, B, sys.dim)) if store else None
    if store:
        hist[0] = z
    for i in range(n):
        dB = increments[:, :, i]
        if scheme == "heun":
            z = heun_step(sys, z, dt, dB)
        else:
            z = euler_ito_step(sys, z, dt, dB)
        if store:
            hist[i + 1] = z
    return hist if store else z


def f_along_path_residual(sys, f, traj, path):
    """Defect of the pathwise bracket decomposition of an observable.

    Evaluates ``|f(Z_T) - f(Z_0) - sum_k int ({h_k, f} + f E(h_k)) o dX^k|``
    with the integral taken as a Stratonovich trapezoid along the stored
    states.
    """
    from .geometry import jacobi_bracket

    states = traj.states
    n = len(states) - 1
    if path.grid.steps != n:
        raise ValueError("trajectory and path do not share the grid")
    dt = path.grid.dt
    E = np.asarray(sys.structure.e_field(states))
    rhs = 0.0
    for k, hk in enumerate(sys.hamiltonians.h):
        g = jacobi_bracket(sys.structure, hk, f, states) \
            + np.asarray(f.eval(states)) * np.einsum("...i,...i->...", gradient(hk, states), E)
        pair = 0.5 * (g[:-1] + g[1:])
        dX = np.full(n, dt) if k == 0 else path.increments[k - 1]
        rhs += float(np.dot(pair, dX))
    lhs = float(f.eval(states[-1])) - float(f.eval(states[0]))
    return abs(lhs - rhs)


def trajectory_to_csv(traj, fname, conformal=False, det_j=False):
    """Write ``t, z_1..z_m`` plus optional ``lambda`` and ``det_J`` columns."""
    m = traj.states.shape[1]
    cols = ["t"] + [f"z_{i + 1}" for i in range(m)]
    extra = []
    if conformal:
        if traj.log_conformal is None:
            raise ValueError("trajectory carries no conformal accumulator")
        cols.append("lambda")
        extra.append(np.exp(traj.log_conformal))
    if det_j:
        if traj.jacobians is None:
            raise ValueError("trajectory carries no tangent flow")
        cols.append("det_J")
        extra.append(np.linalg.det(traj.jacobians))
    with open(fname, "w") as fh:
        fh.write(",".join(cols) + "\n")
        for i, t in enumerate(traj.times):
            row = [f"{t:.17g}"] + [f"{v:.17g}" for v in traj.states[i]]
            row += [f"{e[i]:.17g}" for e in extra]
            fh.write(",".join(row) + "\n")
