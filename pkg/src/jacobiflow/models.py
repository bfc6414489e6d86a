"""Built-in example systems with closed-form or brute-force oracles.

Potentials are polynomials applied per coordinate, so every derivative
oracle is analytic.  Each builder returns a :class:`ModelSpec` whose
generated drift/diffusion fields reproduce the displayed componentwise
equations of the corresponding example system (the test suite keeps
hand-coded reference expressions for this).
"""

from dataclasses import dataclass, field

import numpy as np

from .differentiation import ScalarField, VectorField
from .geometry import (canonical_symplectic, canonical_contact, lie_poisson_so3,
                       JacobiStructure, LcsData)
from .integrator import HamiltonianFamily, SdeSystem

__all__ = [
    "ModelSpec",
    "SingularityError",
    "polynomial1d",
    "harmonic_oscillator",
    "damped_contact",
    "isokinetic",
    "rigid_body_so3",
    "linear_momentum_hamiltonians",
    "isokinetic_leaf_basis",
    "build_model",
    "MODEL_NAMES",
]


class SingularityError(RuntimeError):
    """Evaluation at a point where the thermostat coefficient is singular."""


@dataclass
class ModelSpec:
    name: str
    params: dict
    system: SdeSystem
    observables: dict = field(default_factory=dict)
    oracles: dict = field(default_factory=dict)
    meta: dict = field(default_factory=dict)


def polynomial1d(coeffs):
    """1-d polynomial ``sum_j coeffs[j] x^j`` with derivative callables."""
    c = np.asarray(coeffs, dtype=float)
    dc = c[1:] * np.arange(1, len(c))
    ddc = dc[1:] * np.arange(1, len(dc)) if len(dc) > 1 else np.zeros(1)

    def val(x):
        return np.polynomial.polynomial.polyval(np.asarray(x, dtype=float), c)

    def der(x):
        if len(dc) == 0:
            return np.zeros_like(np.asarray(x, dtype=float))
        return np.polynomial.polynomial.polyval(np.asarray(x, dtype=float), dc)

    def der2(x):
        return np.polynomial.polynomial.polyval(np.asarray(x, dtype=float), ddc)

    return val, der, der2


def _coordinate_observables(m):
    return {f"z_{i + 1}": ScalarField.coordinate(i) for i in range(m)}


def harmonic_oscillator(k, sigma):
    """``x'' + k x = sigma B'`` as a symplectic system on (x, y = x').

    The attached oracle evaluates the closed-form rotation-plus-convolution
    solution by midpoint quadrature over the increments of a supplied path.
    """
    if k <= 0:
        raise ValueError("Hooke constant k must be positive")
    struct = canonical_symplectic(1)

    h0 = ScalarField(
        lambda z: 0.5 * (k * z[..., 0] ** 2 + z[..., 1] ** 2),
        lambda z: np.stack([k * z[..., 0], z[..., 1]], axis=-1),
        lambda z: np.broadcast_to(np.diag([k, 1.0]), z.shape[:-1] + (2, 2)).copy(),
        name="h0",
    )
    h1 = ScalarField(
        lambda z: -sigma * z[..., 0],
        lambda z: np.broadcast_to(np.array([-sigma, 0.0]), np.shape(z)).copy(),
        lambda z: np.zeros(np.shape(z) + (2,)),
        name="h1",
    )
    system = SdeSystem(structure=struct, hamiltonians=HamiltonianFamily([h0, h1]))

    omega = np.sqrt(k)

    def duhamel_states(z0, path):
        """Closed-form solution sampled on the path grid, with the
        stochastic convolution evaluated by midpoint quadrature."""
        x0, y0 = float(z0[0]), float(z0[1])
        t = path.grid.times
        dt = path.grid.dt
        dB = path.increments[0] if path.r >= 1 else np.zeros(path.grid.steps)
        mid = t[:-1] + 0.5 * dt
        cs = np.concatenate(([0.0], np.cumsum(np.cos(omega * mid) * dB)))
        sn = np.concatenate(([0.0], np.cumsum(np.sin(omega * mid) * dB)))
        x = (x0 * np.cos(omega * t) + (y0 / omega) * np.sin(omega * t)
             + (sigma / omega) * (np.sin(omega * t) * cs - np.cos(omega * t) * sn))
        y = (-x0 * omega * np.sin(omega * t) + y0 * np.cos(omega * t)
             + sigma * (np.cos(omega * t) * cs + np.sin(omega * t) * sn))
        return np.stack([x, y], axis=-1)

    obs = _coordinate_observables(2)
    obs["sq_norm"] = ScalarField(
        lambda z: z[..., 0] ** 2 + z[..., 1] ** 2,
        lambda z: 2.0 * np.asarray(z, dtype=float),
        lambda z: np.broadcast_to(2.0 * np.eye(2), np.shape(z) + (2,)).copy(),
        name="sq_norm",
    )
    obs["energy"] = h0
    return ModelSpec(
        name="harmonic-oscillator",
        params={"k": k, "sigma": sigma},
        system=system,
        observables=obs,
        oracles={"duhamel_states": duhamel_states},
        meta={"omega": omega},
    )


def damped_contact(gamma, sigma, potential=(0.0, 0.0, 0.5), n=1):
    """Damped system ``x'' + gamma x' + U'(x) = sigma B'`` on the contact
    chart (x, y, u), with ``h_0 = U + |y|^2/2 + gamma u`` and ``h_k = -sigma x^k``.
    """
    struct, contact = canonical_contact(n)
    m = 2 * n + 1
    uval, uder, uder2 = polynomial1d(potential)

    def h0_eval(z):
        z = np.asarray(z, dtype=float)
        x, y, u = z[..., :n], z[..., n:2 * n], z[..., 2 * n]
        return uval(x).sum(axis=-1) + 0.5 * (y ** 2).sum(axis=-1) + gamma * u

    def h0_grad(z):
        z = np.asarray(z, dtype=float)
        out = np.empty_like(z)
        out[..., :n] = uder(z[..., :n])
        out[..., n:2 * n] = z[..., n:2 * n]
        out[..., 2 * n] = gamma
        return out

    def h0_hess(z):
        z = np.asarray(z, dtype=float)
        H = np.zeros(z.shape + (m,))
        for i in range(n):
            H[..., i, i] = uder2(z[..., i])
            H[..., n + i, n + i] = 1.0
        return H

    h = [ScalarField(h0_eval, h0_grad, h0_hess, name="h0")]
    for k in range(n):
        def hk_eval(z, k=k):
            return -sigma * np.asarray(z, dtype=float)[..., k]

        def hk_grad(z, k=k):
            g = np.zeros_like(np.asarray(z, dtype=float))
            g[..., k] = -sigma
            return g

        h.append(ScalarField(hk_eval, hk_grad,
                             lambda z: np.zeros(np.shape(z) + (m,)), name=f"h{k + 1}"))

    system = SdeSystem(structure=struct, hamiltonians=HamiltonianFamily(h), contact=contact)
    obs = _coordinate_observables(m)
    return ModelSpec(
        name="damped-contact",
        params={"gamma": gamma, "sigma": sigma, "potential": list(potential), "n": n},
        system=system,
        observables=obs,
        oracles={"conformal_factor": lambda t: np.exp(-gamma * np.asarray(t))},
        meta={"n": n},
    )


def _isokinetic_force(uder, n):
    def force(q):
        return -uder(q)
    return force


def isokinetic(potential=(0.0, 0.0, 0.5), sigma_cols=(), c=0.5, variant="constrained", n=2):
    """Thermostatted system ``q' = p``, ``p' = f + zeta - alpha(p) p`` with
    ``alpha = f.p / |p|^2``, as a conformal-symplectic system on the chart of
    the kinetic level set ``|p|^2/2 = c`` (local potential ``sigma = U/(2c)``).

    ``variant='paper-literal'`` keeps the raw noise columns; ``'constrained'``
    projects each column orthogonally to ``p`` so the kinetic energy is a
    pathwise invariant.  Noise columns are constant vectors.
    """
    if variant not in ("paper-literal", "constrained"):
        raise ValueError(f"unknown variant {variant!r}")
    if c <= 0:
        raise ValueError("kinetic level c must be positive")
    m = 2 * n
    uval, uder, uder2 = polynomial1d(potential)
    cols = [np.asarray(col, dtype=float) for col in sigma_cols]
    for col in cols:
        if col.shape != (n,):
            raise ValueError(f"noise columns must have shape ({n},)")

    def theta_tilde(q):
        return uder(q) / (2.0 * c)

    def lam(z):
        z = np.asarray(z, dtype=float)
        q, p = z[..., :n], z[..., n:]
        th = theta_tilde(q)
        A = th[..., :, None] * p[..., None, :] - p[..., :, None] * th[..., None, :]
        out = np.zeros(z.shape[:-1] + (m, m))
        eye = np.eye(n)
        out[..., :n, n:] = eye
        out[..., n:, :n] = -eye
        out[..., n:, n:] = -A
        return out

    def omega_bar(z):
        z = np.asarray(z, dtype=float)
        q, p = z[..., :n], z[..., n:]
        th = theta_tilde(q)
        A = th[..., :, None] * p[..., None, :] - p[..., :, None] * th[..., None, :]
        out = np.zeros(z.shape[:-1] + (m, m))
        eye = np.eye(n)
        out[..., :n, :n] = A
        out[..., :n, n:] = eye
        out[..., n:, :n] = -eye
        return out

    def sigma_eval(z):
        q = np.asarray(z, dtype=float)[..., :n]
        return uval(q).sum(axis=-1) / (2.0 * c)

    def sigma_grad(z):
        z = np.asarray(z, dtype=float)
        out = np.zeros_like(z)
        out[..., :n] = theta_tilde(z[..., :n])
        return out

    def sigma_hess(z):
        z = np.asarray(z, dtype=float)
        H = np.zeros(z.shape + (m,))
        for i in range(n):
            H[..., i, i] = uder2(z[..., i]) / (2.0 * c)
        return H

    sigma_field = ScalarField(sigma_eval, sigma_grad, sigma_hess, name="sigma")

    def e_eval(z):
        z = np.asarray(z, dtype=float)
        out = np.zeros_like(z)
        out[..., n:] = theta_tilde(z[..., :n])
        return out

    def e_jac(z):
        z = np.asarray(z, dtype=float)
        out = np.zeros(z.shape + (m,))
        for i in range(n):
            out[..., n + i, i] = uder2(z[..., i]) / (2.0 * c)
        return out

    struct = JacobiStructure(
        dim=m, kind="lcs", lam=lam,
        e_field=VectorField(e_eval, analytic_jacobian=e_jac, name="lee"),
        chart_meta={"n": n, "q": list(range(n)), "p": list(range(n, m))},
    )
    lcs = LcsData(n=n, omega_bar=omega_bar, lee_form=sigma_grad, sigma=sigma_field)

    # Hamiltonians: kinetic energy shifted to vanish on the level set, and
    # the primitives of the (constant) noise columns.
    def h0_eval(z):
        p = np.asarray(z, dtype=float)[..., n:]
        return 0.5 * (p ** 2).sum(axis=-1) - c

    def h0_grad(z):
        z = np.asarray(z, dtype=float)
        out = np.zeros_like(z)
        out[..., n:] = z[..., n:]
        return out

    def h0_hess(z):
        z = np.asarray(z, dtype=float)
        H = np.zeros(z.shape + (m,))
        for i in range(n):
            H[..., n + i, n + i] = 1.0
        return H

    h = [ScalarField(h0_eval, h0_grad, h0_hess, name="h0")]
    for j, col in enumerate(cols):
        def hk_eval(z, col=col):
            q = np.asarray(z, dtype=float)[..., :n]
            return -(q * col).sum(axis=-1)

        def hk_grad(z, col=col):
            out = np.zeros_like(np.asarray(z, dtype=float))
            out[..., :n] = -col
            return out

        h.append(ScalarField(hk_eval, hk_grad,
                             lambda z: np.zeros(np.shape(z) + (m,)), name=f"h{j + 1}"))

    def _split(z):
        z = np.asarray(z, dtype=float)
        return z[..., :n], z[..., n:]

    def _check_p(p):
        p2 = (p ** 2).sum(axis=-1)
        if np.any(p2 == 0.0):
            raise SingularityError("thermostat coefficient singular at |p| = 0")
        return p2

    def drift_eval(z):
        q, p = _split(z)
        p2 = _check_p(p)
        f = -uder(q)
        alpha = (f * p).sum(axis=-1) / p2
        out = np.empty_like(np.asarray(z, dtype=float))
        out[..., :n] = p
        out[..., n:] = f - alpha[..., None] * p
        return out

    fields = [VectorField(drift_eval, name="isokinetic-drift")]
    for col in cols:
        if variant == "constrained":
            def noise_eval(z, col=col):
                q, p = _split(z)
                p2 = _check_p(p)
                proj = col - ((p * col).sum(axis=-1) / p2)[..., None] * p
                out = np.zeros_like(np.asarray(z, dtype=float))
                out[..., n:] = proj
                return out
        else:
            def noise_eval(z, col=col):
                out = np.zeros_like(np.asarray(z, dtype=float))
                out[..., n:] = col
                return out
        fields.append(VectorField(noise_eval, name="isokinetic-noise"))

    system = SdeSystem(structure=struct, hamiltonians=HamiltonianFamily(h),
                       lcs=lcs, fields_override=fields)
    obs = _coordinate_observables(m)
    obs["kinetic"] = ScalarField(
        lambda z: 0.5 * (np.asarray(z, dtype=float)[..., n:] ** 2).sum(axis=-1),
        h0_grad, h0_hess, name="kinetic")
    return ModelSpec(
        name="isokinetic",
        params={"potential": list(potential), "sigma_cols": [list(cc) for cc in cols],
                "c": c, "variant": variant, "n": n},
        system=system,
        observables=obs,
        meta={"c": c, "variant": variant, "n": n},
    )


def isokinetic_leaf_basis(z0, n):
    """Basis of the tangent space of the kinetic level set at ``z0``:
    all q-directions plus the p-directions orthogonal to p."""
    z0 = np.asarray(z0, dtype=float)
    p = z0[n:]
    m = 2 * n
    cols = [np.eye(m)[:, i] for i in range(n)]
    # orthonormal complement of p within the p-block
    basis_p = np.linalg.svd(p[None, :])[2][1:]
    for v in basis_p:
        w = np.zeros(m)
        w[n:] = v
        cols.append(w)
    return np.stack(cols, axis=1)


def linear_momentum_hamiltonians(coeff_vectors):
    """Linear noise Hamiltonians ``h(mu) = v . mu`` on the so(3)* chart."""
    out = []
    for v in coeff_vectors:
        v = np.asarray(v, dtype=float)

        def ev(z, v=v):
            return np.asarray(z, dtype=float) @ v

        out.append(ScalarField(
            ev,
            lambda z, v=v: np.broadcast_to(v, np.shape(z)).copy(),
            lambda z: np.zeros(np.shape(z) + (3,)),
            name="linear",
        ))
    return out


def rigid_body_so3(inertia, noise_h=()):
    """Free rigid body on so(3)* (``h_0 = sum mu_i^2 / (2 I_i)``) with optional
    noise Hamiltonians; the squared momentum norm is the conserved Casimir."""
    inertia = np.asarray(inertia, dtype=float)
    if inertia.shape != (3,) or np.any(inertia <= 0):
        raise ValueError("inertia must be three positive reals")
    struct = lie_poisson_so3()
    inv_i = 1.0 / inertia

    h0 = ScalarField(
        lambda z: 0.5 * ((np.asarray(z, dtype=float) ** 2) * inv_i).sum(axis=-1),
        lambda z: np.asarray(z, dtype=float) * inv_i,
        lambda z: np.broadcast_to(np.diag(inv_i), np.shape(z) + (3,)).copy(),
        name="h0",
    )
    h = [h0] + list(noise_h)
    system = SdeSystem(structure=struct, hamiltonians=HamiltonianFamily(h))
    casimir = ScalarField(
        lambda z: (np.asarray(z, dtype=float) ** 2).sum(axis=-1),
        lambda z: 2.0 * np.asarray(z, dtype=float),
        lambda z: np.broadcast_to(2.0 * np.eye(3), np.shape(z) + (3,)).copy(),
        name="casimir",
    )
    obs = _coordinate_observables(3)
    obs["casimir"] = casimir
    obs["energy"] = h0
    return ModelSpec(
        name="rigid-body-so3",
        params={"inertia": list(inertia)},
        system=system,
        observables=obs,
        meta={"casimir": casimir},
    )


MODEL_NAMES = ("harmonic-oscillator", "damped-contact", "isokinetic", "rigid-body-so3")


def build_model(name, params):
    """Build a model by registry name from a flat parameter mapping."""
    params = dict(params)
    if name == "harmonic-oscillator":
        return harmonic_oscillator(k=params.pop("k", 1.0), sigma=params.pop("sigma", 0.5))
    if name == "damped-contact":
        return damped_contact(
            gamma=params.pop("gamma", 0.5),
            sigma=params.pop("sigma", 0.2),
            potential=tuple(params.pop("potential", (0.0, 0.0, 0.5))),
            n=int(params.pop("n", 1)),
        )
    if name == "isokinetic":
        return isokinetic(
            potential=tuple(params.pop("potential", (0.0, 0.0, 0.5))),
            sigma_cols=[tuple(cc) for cc in params.pop("sigma_cols", [])],
            c=params.pop("c", 0.5),
            variant=params.pop("variant", "constrained"),
            n=int(params.pop("n", 2)),
        )
    if name == "rigid-body-so3":
        noise = linear_momentum_hamiltonians(params.pop("noise_coeffs", []))
        return rigid_body_so3(inertia=params.pop("inertia", (1.0, 2.0, 3.0)), noise_h=noise)
    raise ValueError(f"unknown model {name!r}; known: {MODEL_NAMES}")
