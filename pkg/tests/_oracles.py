"""Independent reference constructions used by the test suite.

Everything here is deliberately built from first principles (enumeration,
closed forms, fine-step references, method of characteristics) rather than
through the code paths it is used to check.
"""

import numpy as np

from jacobiflow.differentiation import ScalarField, VectorField
from jacobiflow.geometry import JacobiStructure, LcsData
from jacobiflow.integrator import SdeSystem, HamiltonianFamily, integrate_batch
from jacobiflow.hjb import GridFunction, Grid2Function
from jacobiflow.noise import NoisePath, TimeGrid


def random_polynomial(m, rng, max_degree=4, n_terms=8, scale=0.5):
    """Random multivariate polynomial of total degree <= max_degree with
    analytic gradient and Hessian (termwise closed forms)."""
    terms = []
    for _ in range(n_terms):
        while True:
            expo = rng.integers(0, max_degree + 1, size=m)
            if expo.sum() <= max_degree:
                break
        terms.append((scale * rng.normal(), expo))

    def ev(z):
        z = np.asarray(z, dtype=float)
        out = np.zeros(z.shape[:-1])
        for c, e in terms:
            out = out + c * np.prod(z ** e, axis=-1)
        return out

    def gr(z):
        z = np.asarray(z, dtype=float)
        out = np.zeros_like(z)
        for c, e in terms:
            for j in range(m):
                if e[j] == 0:
                    continue
                e2 = e.copy()
                e2[j] -= 1
                out[..., j] += c * e[j] * np.prod(z ** e2, axis=-1)
        return out

    def he(z):
        z = np.asarray(z, dtype=float)
        out = np.zeros(z.shape + (m,))
        for c, e in terms:
            for j in range(m):
                if e[j] == 0:
                    continue
                for k in range(m):
                    ejk = e.copy()
                    ejk[j] -= 1
                    if ejk[k] == 0:
                        continue
                    coef = c * e[j] * ejk[k]
                    ejk[k] -= 1
                    out[..., j, k] += coef * np.prod(z ** ejk, axis=-1)
        return out

    return ScalarField(ev, gr, he, name="poly")


def quadratic_field(m, rng, scale=1.0):
    """Random linear-plus-quadratic scalar field with analytic derivatives."""
    c1 = rng.normal(size=m) * scale
    c2 = rng.normal(size=(m, m))
    c2 = 0.5 * scale * (c2 + c2.T)

    def ev(z):
        z = np.asarray(z, dtype=float)
        return z @ c1 + np.einsum("...i,ij,...j->...", z, c2, z)

    def gr(z):
        z = np.asarray(z, dtype=float)
        return c1 + 2.0 * np.einsum("ij,...j->...i", c2, z)

    def he(z):
        z = np.asarray(z, dtype=float)
        return np.broadcast_to(2.0 * c2, z.shape[:-1] + (m, m)).copy()

    return ScalarField(ev, gr, he, name="quad")


def product_field(g, h):
    """``g * h`` with the analytic product-rule gradient."""
    return ScalarField(
        lambda z: np.asarray(g.eval(z)) * np.asarray(h.eval(z)),
        lambda z: (np.asarray(g.analytic_gradient(z)) * np.asarray(h.eval(z))[..., None]
                   + np.asarray(g.eval(z))[..., None] * np.asarray(h.analytic_gradient(z))),
        name="product",
    )


def broadcast_path_increments(path, batch):
    """(B, r, N) increments all equal to the given path's increments."""
    return np.broadcast_to(path.increments, (batch,) + path.increments.shape)


def contact_characteristics_table(sys, s0, s0_prime, q_grid, path,
                                  node_factor=4, pad=0.5):
    """Method-of-characteristics solve of the contact HJ equation.

    Launches the full chart system from the 1-jet of ``s0`` on a finer node
    set driven by the shared path, then interpolates the carried values back
    onto ``q_grid`` at every time level.  Returns (S table, dS/dq table).
    """
    lo, hi = q_grid[0] - pad, q_grid[-1] + pad
    nodes = np.linspace(lo, hi, node_factor * len(q_grid))
    z0 = np.stack([nodes, s0_prime(nodes), s0(nodes)], axis=-1)
    inc = broadcast_path_increments(path, len(nodes))
    hist = integrate_batch(sys, z0, inc, path.grid.dt, store=True)  # (N+1, B, 3)
    n_lev = hist.shape[0]
    s_tab = np.empty((n_lev, len(q_grid)))
    p_tab = np.empty((n_lev, len(q_grid)))
    for t in range(n_lev):
        q_t, p_t, u_t = hist[t, :, 0], hist[t, :, 1], hist[t, :, 2]
        order = np.argsort(q_t)
        if np.any(np.diff(q_t[order]) <= 0):
            raise RuntimeError("characteristics crossed (caustic) - oracle invalid here")
        s_tab[t] = np.interp(q_grid, q_t[order], u_t[order])
        p_tab[t] = np.interp(q_grid, q_t[order], p_t[order])
    return (GridFunction(q_grid=q_grid, times=path.grid.times[:n_lev], values=s_tab),
            GridFunction(q_grid=q_grid, times=path.grid.times[:n_lev], values=p_tab))


def extend_constant_in_u(s_grid, u_grid):
    """View a (q, t) table as a (q, u, t) table constant in u."""
    vals = np.repeat(s_grid.values[:, :, None], len(u_grid), axis=2)
    return Grid2Function(q_grid=s_grid.q_grid, u_grid=np.asarray(u_grid, dtype=float),
                         times=s_grid.times, values=vals)


def lcs_toy_structure(sigma_prime):
    """Cotangent-chart conformal structure for n = 1: constant canonical
    bivector with the Lee field pointing along ``(0, sigma'(q))``."""
    lam_can = np.array([[0.0, 1.0], [-1.0, 0.0]])

    def lam(z):
        z = np.asarray(z, dtype=float)
        return np.broadcast_to(lam_can, z.shape[:-1] + (2, 2)).copy()

    def e_eval(z):
        z = np.asarray(z, dtype=float)
        out = np.zeros_like(z)
        out[..., 1] = sigma_prime(z[..., 0])
        return out

    struct = JacobiStructure(dim=2, kind="lcs", lam=lam,
                             e_field=VectorField(e_eval, name="lee"))

    def lee_form(z):
        z = np.asarray(z, dtype=float)
        out = np.zeros_like(z)
        out[..., 0] = sigma_prime(z[..., 0])
        return out

    def omega_bar(z):
        z = np.asarray(z, dtype=float)
        w = np.array([[0.0, 1.0], [-1.0, 0.0]])
        return np.broadcast_to(w, z.shape[:-1] + (2, 2)).copy()

    return struct, LcsData(n=1, omega_bar=omega_bar, lee_form=lee_form)


def lcs_characteristics_tables(sys, s0, s0_prime, q_grid, path,
                               node_factor=4, pad=0.5):
    """Characteristics solve of the Lee-form HJ equation on the (q, p) chart.

    Returns the gradient table and the antiderivative table reconstructed by
    the cumulative trapezoid in q (the free constant is irrelevant to the
    residual, which sees only q-derivatives)."""
    lo, hi = q_grid[0] - pad, q_grid[-1] + pad
    nodes = np.linspace(lo, hi, node_factor * len(q_grid))
    z0 = np.stack([nodes, s0_prime(nodes)], axis=-1)
    inc = broadcast_path_increments(path, len(nodes))
    hist = integrate_batch(sys, z0, inc, path.grid.dt, store=True)
    n_lev = hist.shape[0]
    gam = np.empty((n_lev, len(q_grid)))
    for t in range(n_lev):
        q_t, p_t = hist[t, :, 0], hist[t, :, 1]
        order = np.argsort(q_t)
        if np.any(np.diff(q_t[order]) <= 0):
            raise RuntimeError("characteristics crossed (caustic) - oracle invalid here")
        gam[t] = np.interp(q_grid, q_t[order], p_t[order])
    dq = q_grid[1] - q_grid[0]
    s_tab = np.concatenate(
        [np.zeros((n_lev, 1)),
         np.cumsum(0.5 * (gam[:, 1:] + gam[:, :-1]) * dq, axis=1)], axis=1)
    return (GridFunction(q_grid=q_grid, times=path.grid.times[:n_lev], values=s_tab),
            GridFunction(q_grid=q_grid, times=path.grid.times[:n_lev], values=gam))


def fine_reference(sys, z0, path, extra_refinements=3):
    """Trajectory on a bridge-refined copy of the path, subsampled back to
    the coarse grid (a brute-force reference for coarse-grid checks)."""
    from jacobiflow.noise import refine
    from jacobiflow.integrator import integrate

    p = path
    for _ in range(extra_refinements):
        p = refine(p)
    traj = integrate(sys, z0, p)
    stride = 2 ** extra_refinements
    return traj.states[::stride]


def subsampled(states, factor):
    return states[::factor]
