"""Derivative oracles for scalar and vector fields on coordinate charts.

Fields are plain callables on chart points (1-d arrays of length ``m``;
batched evaluation over leading axes is supported throughout).  Analytic
derivatives are used when supplied, otherwise central finite differences
with per-coordinate steps scaled as ``cbrt(eps) * max(1, |z_i|)``.
"""

import numpy as np

_EPS = np.finfo(float).eps
_GRAD_STEP = _EPS ** (1.0 / 3.0)
_HESS_STEP = _EPS ** 0.25


class EvaluationError(RuntimeError):
    """A field returned a non-finite value at or near the requested point."""


def _as_points(z):
    z = np.asarray(z, dtype=float)
    if z.ndim == 0:
        raise ValueError("chart point must be at least 1-d")
    return z


class ScalarField:
    """A real-valued function on a chart with optional analytic derivatives.

    Parameters
    ----------
    eval : callable
        ``eval(z) -> float`` with ``z`` of shape ``(..., m)``.
    analytic_gradient : callable, optional
        ``grad(z) -> (..., m)`` covector components.
    analytic_hessian : callable, optional
        ``hess(z) -> (..., m, m)`` symmetric matrix.
    """

    def __init__(self, eval, analytic_gradient=None, analytic_hessian=None, name=None):
        self.eval = eval
        self.analytic_gradient = analytic_gradient
        self.analytic_hessian = analytic_hessian
        self.name = name

    def __call__(self, z):
        return self.eval(_as_points(z))

    @staticmethod
    def constant(value):
        c = float(value)
        return ScalarField(
            lambda z: np.broadcast_to(c, np.shape(z)[:-1]).copy() if np.ndim(z) > 1 else c,
            analytic_gradient=lambda z: np.zeros_like(np.asarray(z, dtype=float)),
            analytic_hessian=lambda z: np.zeros(np.shape(z) + (np.shape(z)[-1],)),
            name=f"const({c})",
        )

    @staticmethod
    def coordinate(i):
        return ScalarField(
            lambda z: np.asarray(z, dtype=float)[..., i],
            analytic_gradient=lambda z: _unit_covector(z, i),
            analytic_hessian=lambda z: np.zeros(np.shape(z) + (np.shape(z)[-1],)),
            name=f"z[{i}]",
        )


def _unit_covector(z, i):
    z = np.asarray(z, dtype=float)
    out = np.zeros_like(z)
    out[..., i] = 1.0
    return out


class VectorField:
    """A chart-dimension-valued function with an optional analytic Jacobian."""

    def __init__(self, eval, analytic_jacobian=None, name=None):
        self.eval = eval
        self.analytic_jacobian = analytic_jacobian
        self.name = name

    def __call__(self, z):
        return self.eval(_as_points(z))


def _check_finite(values, z, what):
    values = np.asarray(values)
    if np.all(np.isfinite(values)):
        return values
    bad = np.argwhere(~np.isfinite(values))
    raise EvaluationError(
        f"non-finite {what} at stencil near z={np.asarray(z).ravel()[:8]}, "
        f"first offending coordinate/index {tuple(bad[0])}"
    )


def _fd_steps(z, scale):
    return scale * np.maximum(1.0, np.abs(z))


def gradient(f, z):
    """Covector of first derivatives of ``f`` at ``z``.

    Uses ``f.analytic_gradient`` when present; otherwise central finite
    differences with steps ``cbrt(eps) * max(1, |z_i|)``.
    """
    z = _as_points(z)
    if getattr(f, "analytic_gradient", None) is not None:
        return np.asarray(f.analytic_gradient(z), dtype=float)
    fn = f.eval if isinstance(f, ScalarField) else f
    m = z.shape[-1]
    h = _fd_steps(z, _GRAD_STEP)
    out = np.empty_like(z)
    for i in range(m):
        zp = z.copy()
        zm = z.copy()
        zp[..., i] += h[..., i]
        zm[..., i] -= h[..., i]
        fp = _check_finite(fn(zp), zp, f"value of {getattr(f, 'name', 'f')} (coordinate %d)" % i)
        fm = _check_finite(fn(zm), zm, f"value of {getattr(f, 'name', 'f')} (coordinate %d)" % i)
        out[..., i] = (fp - fm) / (zp[..., i] - zm[..., i])
    return out


def jacobian(V, z):
    """Matrix ``J[i, j] = dV_i/dz_j`` at ``z`` (componentwise central FD fallback)."""
    z = _as_points(z)
    if getattr(V, "analytic_jacobian", None) is not None:
        return np.asarray(V.analytic_jacobian(z), dtype=float)
    fn = V.eval if isinstance(V, VectorField) else V
    m = z.shape[-1]
    h = _fd_steps(z, _GRAD_STEP)
    cols = []
    for j in range(m):
        zp = z.copy()
        zm = z.copy()
        zp[..., j] += h[..., j]
        zm[..., j] -= h[..., j]
        vp = _check_finite(fn(zp), zp, f"component of {getattr(V, 'name', 'V')} (coordinate {j})")
        vm = _check_finite(fn(zm), zm, f"component of {getattr(V, 'name', 'V')} (coordinate {j})")
        denom = (zp[..., j] - zm[..., j])[..., None]
        cols.append((vp - vm) / denom)
    return np.stack(cols, axis=-1)


def hessian(f, z):
    """Symmetric matrix of second derivatives of ``f`` at ``z``.

    The finite-difference estimate averages the two mixed stencils, so the
    returned matrix equals its transpose exactly.
    """
    z = _as_points(z)
    if getattr(f, "analytic_hessian", None) is not None:
        H = np.asarray(f.analytic_hessian(z), dtype=float)
        return 0.5 * (H + np.swapaxes(H, -1, -2))
    fn = f.eval if isinstance(f, ScalarField) else f
    m = z.shape[-1]
    h = _fd_steps(z, _HESS_STEP)
    H = np.zeros(z.shape + (m,))
    f0 = _check_finite(fn(z), z, "value")
    for i in range(m):
        zp = z.copy()
        zm = z.copy()
        zp[..., i] += h[..., i]
        zm[..., i] -= h[..., i]
        fp = _check_finite(fn(zp), zp, f"value (coordinate {i})")
        fm = _check_finite(fn(zm), zm, f"value (coordinate {i})")
        H[..., i, i] = (fp - 2.0 * f0 + fm) / ((zp[..., i] - z[..., i]) * (z[..., i] - zm[..., i]))
    for i in range(m):
        for j in range(i + 1, m):
            zpp = z.copy()
            zpm = z.copy()
            zmp = z.copy()
            zmm = z.copy()
            for w, si, sj in ((zpp, 1, 1), (zpm, 1, -1), (zmp, -1, 1), (zmm, -1, -1)):
                w[..., i] += si * h[..., i]
                w[..., j] += sj * h[..., j]
            num = (
                _check_finite(fn(zpp), zpp, f"value (coordinates {i},{j})")
                - _check_finite(fn(zpm), zpm, f"value (coordinates {i},{j})")
                - _check_finite(fn(zmp), zmp, f"value (coordinates {i},{j})")
                + _check_finite(fn(zmm), zmm, f"value (coordinates {i},{j})")
            )
            val = num / (4.0 * h[..., i] * h[..., j])
            H[..., i, j] = val
            H[..., j, i] = val
    return H
