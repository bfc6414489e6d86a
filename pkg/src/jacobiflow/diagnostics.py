"""Structure-preservation checks along stored trajectories.

Every check compares a form (or scalar invariant) transported through the
stored tangent-flow Jacobians against its initial value, and returns a
non-negative deviation that is exactly zero at t=0.  Deviations use the
max-abs entry norm.
"""

import json
from dataclasses import dataclass, field, asdict

import numpy as np

__all__ = [
    "ReportEntry",
    "DiagnosticsReport",
    "symplectic_pullback_deviation",
    "conformal_factor",
    "contact_pullback_deviation",
    "contact_volume_deviation",
    "lcs_pullback_deviation",
    "casimir_drift",
    "order_estimate",
    "assemble_report",
]


@dataclass
class ReportEntry:
    name: str
    max_deviation: float
    tolerance: float
    passed: bool
    order_estimate: float = None


@dataclass
class DiagnosticsReport:
    entries: list = field(default_factory=list)
    model: str = None
    scheme: str = None
    dt: float = None
    seed: int = None

    @property
    def all_passed(self):
        return all(e.passed for e in self.entries)

    def to_dict(self):
        return {
            "model": self.model,
            "scheme": self.scheme,
            "dt": self.dt,
            "seed": self.seed,
            "entries": [asdict(e) for e in self.entries],
        }

    def to_json(self, indent=2):
        return json.dumps(self.to_dict(), indent=indent)

    @staticmethod
    def from_dict(d):
        return DiagnosticsReport(
            entries=[ReportEntry(**e) for e in d["entries"]],
            model=d.get("model"),
            scheme=d.get("scheme"),
            dt=d.get("dt"),
            seed=d.get("seed"),
        )

    @staticmethod
    def from_json(text):
        return DiagnosticsReport.from_dict(json.loads(text))


def _require_jacobians(traj):
    if traj.jacobians is None:
        raise ValueError("trajectory carries no tangent-flow Jacobians")


def _pullback_deviation(jacobians, omega_along, omega0, basis=None):
    """max_t || B^T (J_t^T omega(z_t) J_t - omega(z_0)) B ||_inf."""
    pulled = np.einsum("tji,tjk,tkl->til", jacobians, omega_along, jacobians)
    diff = pulled - omega0
    if basis is not None:
        diff = np.einsum("ij,tjk,kl->til", basis.T, diff, basis)
    return float(np.max(np.abs(diff)))


def symplectic_pullback_deviation(traj, omega):
    """Deviation of ``J_t^T omega J_t`` from the constant symplectic matrix."""
    _require_jacobians(traj)
    omega = np.asarray(omega, dtype=float)
    m = traj.states.shape[1]
    if m % 2 != 0 or omega.shape != (m, m):
        raise ValueError("symplectic check needs an even-dimensional constant matrix")
    along = np.broadcast_to(omega, traj.jacobians.shape)
    return _pullback_deviation(traj.jacobians, along, omega)


def conformal_factor(traj):
    """``lambda_t = exp(L_t)`` from the stored log-accumulator."""
    if traj.log_conformal is None:
        raise ValueError("trajectory carries no conformal accumulator")
    return np.exp(traj.log_conformal)


def contact_pullback_deviation(traj, contact):
    """max over times and basis vectors of
    ``|eta_{z_t}(J_t v) - lambda_t eta_{z_0}(v)|``."""
    _require_jacobians(traj)
    lam = conformal_factor(traj)
    eta_t = np.asarray(contact.eta(traj.states))          # (T, m)
    eta_0 = np.asarray(contact.eta(traj.states[0]))       # (m,)
    pulled = np.einsum("ti,tij->tj", eta_t, traj.jacobians)
    return float(np.max(np.abs(pulled - lam[:, None] * eta_0)))


def contact_volume_deviation(traj, n):
    """max over times of ``|det J_t - lambda_t^{n+1}|`` (Darboux coordinates,
    where the contact volume element has constant unit density)."""
    _require_jacobians(traj)
    m = traj.states.shape[1]
    if m != 2 * n + 1:
        raise ValueError(f"contact volume check needs dim 2n+1 = {2 * n + 1}, got {m}")
    lam = conformal_factor(traj)
    dets = np.linalg.det(traj.jacobians)
    return float(np.max(np.abs(dets - lam ** (n + 1))))


def lcs_pullback_deviation(traj, lcs, tangent_basis=None):
    """Deviation of the pullback of ``exp(-sigma) * omega_bar``.

    ``tangent_basis`` (m x k), when given, restricts the comparison to a
    subspace (used for systems whose conformal structure is only preserved
    along an invariant level set).
    """
    _require_jacobians(traj)
    if lcs.sigma is None:
        raise ValueError("lcs data carries no local conformal potential sigma")
    s = np.asarray(lcs.sigma.eval(traj.states))
    omega_u = np.exp(-s)[:, None, None] * np.asarray(lcs.omega_bar(traj.states))
    return _pullback_deviation(traj.jacobians, omega_u, omega_u[0], basis=tangent_basis)


def casimir_drift(traj, c_field):
    """max over times of ``|C(Z_t) - C(Z_0)|``."""
    vals = np.asarray(c_field.eval(traj.states))
    return float(np.max(np.abs(vals - vals[0])))


def order_estimate(dev_coarse, dev_fine):
    """``log2(dev(dt) / dev(dt/2))`` for one refinement pair."""
    if dev_fine == 0:
        return np.inf if dev_coarse > 0 else 0.0
    return float(np.log2(dev_coarse / dev_fine))


def assemble_report(items, model=None, scheme=None, dt=None, seed=None,
                    default_tolerance=np.inf):
    """Build a report from check results.

    ``items`` is an iterable of dicts with keys ``name``, ``max_deviation``,
    optional ``tolerance`` and optional ``refined_deviation`` (the same check
    on a half-step refinement, from which the order estimate is formed).
    """
    entries = []
    for it in items:
        dev = float(it["max_deviation"])
        tol = float(it.get("tolerance", default_tolerance))
        order = None
        if it.get("refined_deviation") is not None:
            order = order_estimate(dev, float(it["refined_deviation"]))
        entries.append(ReportEntry(
            name=it["name"],
            max_deviation=dev,
            tolerance=tol,
            passed=bool(dev <= tol),
            order_estimate=order,
        ))
    return DiagnosticsReport(entries=entries, model=model, scheme=scheme, dt=dt, seed=seed)
