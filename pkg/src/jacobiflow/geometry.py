"""Bivector/vector-field pairs on coordinate charts and their brackets.

A structure is stored as a matrix-valued function ``lam(z)`` (components of
the bivector in the coordinate basis) together with a distinguished vector
field ``e_field``.  The raising map acts as ``sharp(alpha) = lam(z) @ alpha``
and the bracket pairing is fixed so that ``{h, f} + f*E(h)`` is exactly the
derivative of ``f`` along the Hamiltonian field of ``h``:

    lam_pair(alpha, beta) = beta . (lam @ alpha)
    {f, g} = lam_pair(df, dg) + f E(g) - g E(f)
    V_h    = lam @ dh + h E

With this pairing the canonical bracket comes out as ``{q, p} = -1``; the
sign is pinned by the Darboux expressions of the Hamiltonian fields, which
are normative here.

Built-in charts: canonical symplectic R^2n, canonical contact R^{2n+1}
(coordinates ``q^i, p_i, u``; ``E = -R = -d/du``), locally conformal
symplectic cotangent charts (``omega_bar = exp(sigma) * canonical``,
``E = -sharp(d sigma)``), and the so(3)* Lie-Poisson chart.
"""

from dataclasses import dataclass, field

import numpy as np

from .differentiation import ScalarField, VectorField, gradient

__all__ = [
    "JacobiStructure",
    "ContactData",
    "LcsData",
    "InvalidDimensionError",
    "DegeneracyError",
    "canonical_symplectic",
    "canonical_contact",
    "lcs_cotangent",
    "lie_poisson_so3",
    "lambda_sharp",
    "hamiltonian_vector_field",
    "hamiltonian_field",
    "jacobi_bracket",
    "bracket_pairing",
    "contact_field_identities",
    "first_integral_commutation_check",
]


class InvalidDimensionError(ValueError):
    pass


class DegeneracyError(RuntimeError):
    pass


@dataclass
class JacobiStructure:
    """Coordinate-chart realization of a bivector/vector-field pair.

    ``lam(z)`` returns the antisymmetric ``(m, m)`` matrix of the bivector;
    ``lam_jac(z)``, when present, returns the ``(m, m, m)`` tensor
    ``d lam[i, j] / d z[k]`` used to assemble analytic Jacobians of
    Hamiltonian fields.
    """

    dim: int
    kind: str
    lam: object
    e_field: VectorField
    lam_jac: object = None
    chart_meta: dict = field(default_factory=dict)

    def lam_at(self, z):
        return np.asarray(self.lam(np.asarray(z, dtype=float)))


@dataclass
class ContactData:
    n: int
    eta: object      # z -> covector components (..., 2n+1)
    reeb: VectorField

    @property
    def dim(self):
        return 2 * self.n + 1


@dataclass
class LcsData:
    n: int
    omega_bar: object   # z -> antisymmetric (..., 2n, 2n)
    lee_form: object    # z -> covector (..., 2n)
    sigma: ScalarField = None

    @property
    def dim(self):
        return 2 * self.n


def _const_matrix_fn(mat):
    mat = np.asarray(mat, dtype=float)

    def lam(z):
        z = np.asarray(z, dtype=float)
        return np.broadcast_to(mat, z.shape[:-1] + mat.shape).copy()

    return lam


def _zero_field(m):
    return VectorField(
        lambda z: np.zeros_like(np.asarray(z, dtype=float)),
        analytic_jacobian=lambda z: np.zeros(np.shape(z) + (m,)),
        name="0",
    )


def _const_field(vec):
    vec = np.asarray(vec, dtype=float)
    m = vec.shape[0]

    def ev(z):
        z = np.asarray(z, dtype=float)
        return np.broadcast_to(vec, z.shape[:-1] + (m,)).copy()

    return VectorField(ev, analytic_jacobian=lambda z: np.zeros(np.shape(z) + (m,)), name="const")


def canonical_symplectic(n):
    """Canonical chart on R^2n with coordinates (q^1..q^n, p_1..p_n)."""
    if n < 1:
        raise InvalidDimensionError(f"need n >= 1, got {n}")
    m = 2 * n
    lam0 = np.zeros((m, m))
    lam0[:n, n:] = np.eye(n)
    lam0[n:, :n] = -np.eye(n)
    zero_jac = np.zeros((m, m, m))
    return JacobiStructure(
        dim=m,
        kind="symplectic",
        lam=_const_matrix_fn(lam0),
        e_field=_zero_field(m),
        lam_jac=_const_matrix_fn(zero_jac),
        chart_meta={"n": n, "q": list(range(n)), "p": list(range(n, m))},
    )


def canonical_contact(n):
    """Darboux chart on R^{2n+1} with coordinates (q^i, p_i, u).

    The bivector is sum_i (d/dq^i + p_i d/du) ^ d/dp_i and the
    distinguished field is minus the Reeb field d/du.
    """
    if n < 1:
        raise InvalidDimensionError(f"need n >= 1, got {n}")
    m = 2 * n + 1

    def lam(z):
        z = np.asarray(z, dtype=float)
        p = z[..., n:2 * n]
        out = np.zeros(z.shape[:-1] + (m, m))
        eye = np.eye(n)
        out[..., :n, n:2 * n] = eye
        out[..., n:2 * n, :n] = -eye
        out[..., n:2 * n, 2 * n] = -p
        out[..., 2 * n, n:2 * n] = p
        return out

    jac0 = np.zeros((m, m, m))
    for i in range(n):
        jac0[n + i, 2 * n, n + i] = -1.0
        jac0[2 * n, n + i, n + i] = 1.0

    e_vec = np.zeros(m)
    e_vec[2 * n] = -1.0

    def eta(z):
        z = np.asarray(z, dtype=float)
        out = np.zeros_like(z)
        out[..., :n] = -z[..., n:2 * n]
        out[..., 2 * n] = 1.0
        return out

    reeb_vec = np.zeros(m)
    reeb_vec[2 * n] = 1.0

    struct = JacobiStructure(
        dim=m,
        kind="contact",
        lam=lam,
        e_field=_const_field(e_vec),
        lam_jac=_const_matrix_fn(jac0),
        chart_meta={"n": n, "q": list(range(n)), "p": list(range(n, 2 * n)), "u": 2 * n},
    )
    return struct, ContactData(n=n, eta=eta, reeb=_const_field(reeb_vec))


_DEGENERACY_TOL = 1e-12


def lcs_cotangent(n, sigma):
    """Locally conformal symplectic chart: omega_bar = exp(sigma) * canonical.

    ``exp(-sigma) * omega_bar`` is then the constant canonical matrix, so its
    closedness holds identically.  The bivector matrix is the negative
    inverse of omega_bar and the distinguished field is ``-lam @ d sigma``
    (the sign that makes the bracket satisfy the Jacobi identity under the
    pairing above and makes the flows of Hamiltonian fields preserve
    ``exp(-sigma) * omega_bar``).
    """
    if n < 1:
        raise InvalidDimensionError(f"need n >= 1, got {n}")
    m = 2 * n
    can = canonical_symplectic(n)
    lam_can = can.lam_at(np.zeros(m))
    w_can = -np.linalg.inv(lam_can)  # equals lam_can for the canonical block

    def omega_bar(z):
        z = np.asarray(z, dtype=float)
        s = np.asarray(sigma.eval(z))
        det_scale = np.exp(2 * n * s)
        if np.any(~np.isfinite(det_scale)) or np.any(np.abs(det_scale) <= _DEGENERACY_TOL):
            raise DegeneracyError("omega_bar degenerate: |det| below tolerance")
        return np.exp(s)[..., None, None] * w_can

    def lam(z):
        z = np.asarray(z, dtype=float)
        s = np.asarray(sigma.eval(z))
        return np.exp(-s)[..., None, None] * lam_can

    def lam_jac(z):
        z = np.asarray(z, dtype=float)
        s = np.asarray(sigma.eval(z))
        ds = gradient(sigma, z)
        base = np.exp(-s)[..., None, None, None] * lam_can[..., :, :, None]
        return -base * ds[..., None, None, :]

    def lee(z):
        return gradient(sigma, z)

    def e_eval(z):
        z = np.asarray(z, dtype=float)
        s = np.asarray(sigma.eval(z))
        ds = gradient(sigma, z)
        return -np.exp(-s)[..., None] * np.einsum("ij,...j->...i", lam_can, ds)

    e_jac = None
    if sigma.analytic_hessian is not None and sigma.analytic_gradient is not None:

        def e_jac(z):
            z = np.asarray(z, dtype=float)
            s = np.asarray(sigma.eval(z))
            ds = np.asarray(sigma.analytic_gradient(z))
            H = np.asarray(sigma.analytic_hessian(z))
            lam_ds = np.einsum("ij,...j->...i", lam_can, ds)
            lam_H = np.einsum("ij,...jk->...ik", lam_can, H)
            return np.exp(-s)[..., None, None] * (
                lam_ds[..., :, None] * ds[..., None, :] - lam_H
            )

    struct = JacobiStructure(
        dim=m,
        kind="lcs",
        lam=lam,
        e_field=VectorField(e_eval, analytic_jacobian=e_jac, name="lee"),
        lam_jac=lam_jac,
        chart_meta={"n": n, "q": list(range(n)), "p": list(range(n, m))},
    )
    return struct, LcsData(n=n, omega_bar=omega_bar, lee_form=lee, sigma=sigma)


def lie_poisson_so3():
    """Lie-Poisson chart on so(3)* with lam[i, j] = -eps_{ijk} mu_k."""
    m = 3

    def lam(z):
        z = np.asarray(z, dtype=float)
        out = np.zeros(z.shape[:-1] + (3, 3))
        m1, m2, m3 = z[..., 0], z[..., 1], z[..., 2]
        out[..., 0, 1] = -m3
        out[..., 1, 0] = m3
        out[..., 0, 2] = m2
        out[..., 2, 0] = -m2
        out[..., 1, 2] = -m1
        out[..., 2, 1] = m1
        return out

    jac0 = np.zeros((3, 3, 3))
    jac0[0, 1, 2] = -1.0
    jac0[1, 0, 2] = 1.0
    jac0[0, 2, 1] = 1.0
    jac0[2, 0, 1] = -1.0
    jac0[1, 2, 0] = -1.0
    jac0[2, 1, 0] = 1.0

    return JacobiStructure(
        dim=m,
        kind="poisson-custom",
        lam=lam,
        e_field=_zero_field(m),
        lam_jac=_const_matrix_fn(jac0),
        chart_meta={"name": "so3-star"},
    )


def lambda_sharp(struct, alpha, z):
    """Raise a covector: returns ``lam(z) @ alpha``."""
    alpha = np.asarray(alpha, dtype=float)
    if alpha.shape[-1] != struct.dim:
        raise ValueError(f"covector has dim {alpha.shape[-1]}, structure has {struct.dim}")
    return np.einsum("...ij,...j->...i", struct.lam_at(z), alpha)


def hamiltonian_vector_field(struct, h, z):
    """Value of ``lam @ dh + h * E`` at ``z``."""
    z = np.asarray(z, dtype=float)
    g = gradient(h, z)
    hv = np.asarray(h.eval(z))
    return lambda_sharp(struct, g, z) + hv[..., None] * np.asarray(struct.e_field(z))


def hamiltonian_field(struct, h, name=None):
    """The Hamiltonian vector field of ``h`` as a reusable ``VectorField``.

    An analytic Jacobian is assembled when the structure and ``h`` carry the
    needed analytic derivatives; otherwise finite differences apply.
    """

    def ev(z):
        return hamiltonian_vector_field(struct, h, z)

    jac = None
    if (
        struct.lam_jac is not None
        and h.analytic_gradient is not None
        and h.analytic_hessian is not None
        and struct.e_field.analytic_jacobian is not None
    ):

        def jac(z):
            z = np.asarray(z, dtype=float)
            g = np.asarray(h.analytic_gradient(z))
            H = np.asarray(h.analytic_hessian(z))
            hv = np.asarray(h.eval(z))
            lam = struct.lam_at(z)
            T = np.asarray(struct.lam_jac(z))
            E = np.asarray(struct.e_field(z))
            DE = np.asarray(struct.e_field.analytic_jacobian(z))
            out = np.einsum("...ijk,...j->...ik", T, g)
            out = out + np.einsum("...ij,...jk->...ik", lam, H)
            out = out + E[..., :, None] * g[..., None, :]
            out = out + hv[..., None, None] * DE
            return out

    return VectorField(ev, analytic_jacobian=jac, name=name or f"V[{getattr(h, 'name', 'h')}]")


def bracket_pairing(struct, alpha, beta, z):
    """Antisymmetrized bivector pairing ``beta . (lam @ alpha)``.

    Evaluated as the half-difference of the two raised contractions so that
    swapping the arguments flips the sign exactly in floating point.
    """
    alpha = np.asarray(alpha, dtype=float)
    beta = np.asarray(beta, dtype=float)
    lam = struct.lam_at(z)
    ba = np.einsum("...i,...ij,...j->...", beta, lam, alpha)
    ab = np.einsum("...i,...ij,...j->...", alpha, lam, beta)
    return 0.5 * (ba - ab)


def jacobi_bracket(struct, f, g, z):
    """Bracket ``{f, g}`` at ``z`` under the pairing ``beta.(lam @ alpha)``."""
    z = np.asarray(z, dtype=float)
    df = gradient(f, z)
    dg = gradient(g, z)
    E = np.asarray(struct.e_field(z))
    fe = np.asarray(f.eval(z)) * np.einsum("...i,...i->...", dg, E)
    ge = np.asarray(g.eval(z)) * np.einsum("...i,...i->...", df, E)
    return bracket_pairing(struct, df, dg, z) + fe - ge


def bracket_field(struct, f, g):
    """``{f, g}`` as a reusable ``ScalarField``.

    When the structure and both arguments carry analytic derivatives, an
    analytic gradient of the bracket is assembled (needed to evaluate nested
    brackets well below finite-difference noise).
    """

    def ev(z):
        return jacobi_bracket(struct, f, g, z)

    grad = None
    if (
        struct.lam_jac is not None
        and struct.e_field.analytic_jacobian is not None
        and all(x.analytic_gradient is not None and x.analytic_hessian is not None for x in (f, g))
    ):

        def grad(z):
            z = np.asarray(z, dtype=float)
            gf = np.asarray(f.analytic_gradient(z))
            gg = np.asarray(g.analytic_gradient(z))
            Hf = np.asarray(f.analytic_hessian(z))
            Hg = np.asarray(g.analytic_hessian(z))
            fv = np.asarray(f.eval(z))
            gv = np.asarray(g.eval(z))
            lam = struct.lam_at(z)
            T = np.asarray(struct.lam_jac(z))
            E = np.asarray(struct.e_field(z))
            DE = np.asarray(struct.e_field.analytic_jacobian(z))
            # d/dz_k of  (dg)^T lam (df)
            out = np.einsum("...jk,...ji,...i->...k", Hg, lam, gf)
            out = out + np.einsum("...j,...jik,...i->...k", gg, T, gf)
            out = out + np.einsum("...j,...ji,...ik->...k", gg, lam, Hf)
            Eg = np.einsum("...j,...j->...", gg, E)
            Ef = np.einsum("...j,...j->...", gf, E)
            dEg = np.einsum("...jk,...j->...k", Hg, E) + np.einsum("...j,...jk->...k", gg, DE)
            dEf = np.einsum("...jk,...j->...k", Hf, E) + np.einsum("...j,...jk->...k", gf, DE)
            out = out + gf * Eg[..., None] + fv[..., None] * dEg
            out = out - gg * Ef[..., None] - gv[..., None] * dEf
            return out

    return ScalarField(ev, analytic_gradient=grad, name=f"{{{getattr(f, 'name', 'f')},{getattr(g, 'name', 'g')}}}")


def contact_field_identities(contact, struct, h, z):
    """Deviations of the two equivalent characterizations of a contact
    Hamiltonian field: ``|eta(V_h) + h|`` and
    ``max|flat(V_h) - dh + (R(h) + h) eta|`` with
    ``flat(V) = i_V d eta + eta(V) eta``.
    """
    z = np.asarray(z, dtype=float)
    n = contact.n
    m = 2 * n + 1
    V = hamiltonian_vector_field(struct, h, z)
    eta = np.asarray(contact.eta(z))
    hv = np.asarray(h.eval(z))
    eta_V = np.einsum("...i,...i->...", eta, V)
    dev1 = np.abs(eta_V + hv)

    # d eta = dq^i ^ dp_i as a matrix; i_V(d eta) has components (D^T V)_j
    D = np.zeros((m, m))
    D[:n, n:2 * n] = np.eye(n)
    D[n:2 * n, :n] = -np.eye(n)
    flat_V = np.einsum("ij,...i->...j", D, V) + eta_V[..., None] * eta
    dh = gradient(h, z)
    rh = dh[..., 2 * n]
    resid = flat_V - dh + (rh + hv)[..., None] * eta
    dev2 = np.max(np.abs(resid), axis=-1)
    return dev1, dev2


def first_integral_commutation_check(struct, fs, points):
    """Max over pairs and points of ``|{f_i, f_j} - f_i E(f_j) + f_j E(f_i)|``."""
    if len(fs) < 2:
        raise ValueError("need at least two functions")
    points = np.atleast_2d(np.asarray(points, dtype=float))
    worst = 0.0
    for i in range(len(fs)):
        for j in range(i + 1, len(fs)):
            fi, fj = fs[i], fs[j]
            E = np.asarray(struct.e_field(points))
            efj = np.einsum("...k,...k->...", gradient(fj, points), E)
            efi = np.einsum("...k,...k->...", gradient(fi, points), E)
            lhs = jacobi_bracket(struct, fi, fj, points)
            rhs = np.asarray(fi.eval(points)) * efj - np.asarray(fj.eval(points)) * efi
            worst = max(worst, float(np.max(np.abs(lhs - rhs))))
    return worst
