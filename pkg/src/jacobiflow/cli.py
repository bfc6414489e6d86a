"""Batch front door: configure, run, and export simulations, ensembles,
convergence studies, HJ equivalence tests, and bracket-identity suites.

Configuration is a TOML file; command-line flags override file values.
Exit codes: 0 success, 2 configuration error, 3 blow-up/truncation,
4 check failure.
"""

import argparse
import json
import os
import sys
from dataclasses import dataclass, field, asdict

import numpy as np

try:
    import tomllib
except ModuleNotFoundError:  # python < 3.11
    import tomli as tomllib

from .differentiation import ScalarField, gradient
from .geometry import (canonical_symplectic, canonical_contact, lcs_cotangent,
                       lie_poisson_so3, jacobi_bracket, hamiltonian_vector_field,
                       bracket_field)
from .noise import TimeGrid, sample_brownian, refine, mix_seed, path_to_csv
from .integrator import integrate, integrate_batch, trajectory_to_csv
from .diagnostics import (assemble_report, conformal_factor, casimir_drift,
                          symplectic_pullback_deviation, contact_pullback_deviation,
                          contact_volume_deviation, lcs_pullback_deviation)
from .models import build_model, isokinetic_leaf_basis, polynomial1d, MODEL_NAMES
from .hjb import HjProblem, solve_contact_hj_grid, lift_equivalence_error, grid_to_csv, HjCflError

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_BLOWUP = 3
EXIT_CHECK = 4


class ConfigError(ValueError):
    pass


_TOP_KEYS = {"model", "scheme", "dt", "t_final", "seed", "paths", "out",
             "model_params", "initial", "diagnostics", "hj", "tolerances",
             "observables", "levels", "emit_plot_script"}
_DIAG_KEYS = {"tangent", "conformal", "checks"}
_HJ_KEYS = {"a", "b", "num_cells", "boundary", "q0", "s0"}
_INITIAL_KEYS = {"state"}


@dataclass
class RunConfig:
    model: str = "harmonic-oscillator"
    scheme: str = "heun"
    dt: float = 1e-3
    t_final: float = 1.0
    seed: int = 12345
    paths: int = 1
    out: str = "."
    model_params: dict = field(default_factory=dict)
    initial_state: list = None
    diagnostics: dict = field(default_factory=dict)
    hj: dict = field(default_factory=dict)
    tolerances: dict = field(default_factory=dict)
    observables: list = None
    levels: int = 3
    emit_plot_script: bool = False

    def validate(self):
        if self.dt <= 0:
            raise ConfigError("dt must be positive")
        if self.t_final <= 0:
            raise ConfigError("t_final must be positive")
        if self.paths < 1:
            raise ConfigError("paths must be >= 1")
        if self.scheme not in ("heun", "euler-ito"):
            raise ConfigError(f"unknown scheme {self.scheme!r}")
        if self.model not in MODEL_NAMES:
            raise ConfigError(f"unknown model {self.model!r}; known: {MODEL_NAMES}")
        return self

    @property
    def steps(self):
        n = int(round(self.t_final / self.dt))
        if n < 1 or abs(n * self.dt - self.t_final) > 1e-9 * max(1.0, self.t_final):
            raise ConfigError("t_final must be an integer multiple of dt")
        return n


def _check_keys(mapping, allowed, where):
    unknown = set(mapping) - allowed
    if unknown:
        raise ConfigError(f"unknown key(s) {sorted(unknown)} in {where}")


def load_config(path=None, overrides=None):
    raw = {}
    if path is not None:
        try:
            with open(path, "rb") as fh:
                raw = tomllib.load(fh)
        except FileNotFoundError as exc:
            raise ConfigError(f"config file not found: {path}") from exc
        except tomllib.TOMLDecodeError as exc:
            raise ConfigError(f"config parse error in {path}: {exc}") from exc
    _check_keys(raw, _TOP_KEYS, "config")
    _check_keys(raw.get("diagnostics", {}), _DIAG_KEYS, "[diagnostics]")
    _check_keys(raw.get("hj", {}), _HJ_KEYS, "[hj]")
    _check_keys(raw.get("initial", {}), _INITIAL_KEYS, "[initial]")
    cfg = RunConfig(
        model=raw.get("model", "harmonic-oscillator"),
        scheme=raw.get("scheme", "heun"),
        dt=float(raw.get("dt", 1e-3)),
        t_final=float(raw.get("t_final", 1.0)),
        seed=int(raw.get("seed", 12345)),
        paths=int(raw.get("paths", 1)),
        out=raw.get("out", "."),
        model_params=dict(raw.get("model_params", {})),
        initial_state=raw.get("initial", {}).get("state"),
        diagnostics=dict(raw.get("diagnostics", {})),
        hj=dict(raw.get("hj", {})),
        tolerances=dict(raw.get("tolerances", {})),
        observables=raw.get("observables"),
        levels=int(raw.get("levels", 3)),
        emit_plot_script=bool(raw.get("emit_plot_script", False)),
    )
    for key, val in (overrides or {}).items():
        if val is not None:
            setattr(cfg, key, val)
    return cfg.validate()


def _print_config(cfg):
    d = asdict(cfg)
    print(json.dumps(d, indent=2, default=str))


def _default_initial(model):
    defaults = {
        "harmonic-oscillator": [0.0, 1.0],
        "damped-contact": [0.4, 0.8, 0.1],
        "rigid-body-so3": [0.2, 0.5, 0.8],
    }
    if model.name in defaults and model.system.dim == len(defaults[model.name]):
        return np.asarray(defaults[model.name])
    if model.name == "isokinetic":
        n = model.meta["n"]
        c = model.meta["c"]
        q = np.linspace(0.3, -0.2, n)
        p = np.full(n, np.sqrt(2.0 * c / n))
        return np.concatenate([q, p])
    return np.zeros(model.system.dim)


_DEFAULT_CHECKS = {
    "harmonic-oscillator": ["symplectic-volume", "symplectic-pullback"],
    "damped-contact": ["conformal-exactness", "contact-pullback", "contact-volume"],
    "isokinetic": ["kinetic", "lcs-pullback"],
    "rigid-body-so3": ["casimir"],
}


def _default_tolerance(name, cfg):
    scale = {
        "symplectic-volume": 10.0,
        "symplectic-pullback": 10.0,
        "contact-pullback": 50.0,
        "contact-volume": 50.0,
        "lcs-pullback": 100.0,
        "casimir": 0.1,
        "kinetic": 0.1,
    }
    if name == "conformal-exactness":
        return 1e-12
    return scale.get(name, 1.0) * cfg.dt


def _run_checks(model, traj, cfg, checks):
    items = []
    for name in checks:
        if name == "symplectic-volume":
            dev = float(np.max(np.abs(np.linalg.det(traj.jacobians) - 1.0)))
        elif name == "symplectic-pullback":
            lam0 = model.system.structure.lam_at(traj.states[0])
            omega = -np.linalg.inv(lam0)
            dev = symplectic_pullback_deviation(traj, omega)
        elif name == "contact-pullback":
            dev = contact_pullback_deviation(traj, model.system.contact)
        elif name == "contact-volume":
            dev = contact_volume_deviation(traj, model.system.contact.n)
        elif name == "conformal-exactness":
            lam = conformal_factor(traj)
            dev = float(np.max(np.abs(lam - model.oracles["conformal_factor"](traj.times))))
        elif name == "lcs-pullback":
            basis = isokinetic_leaf_basis(traj.states[0], model.meta["n"]) \
                if model.name == "isokinetic" else None
            dev = lcs_pullback_deviation(traj, model.system.lcs, tangent_basis=basis)
        elif name == "kinetic":
            kin = model.observables["kinetic"].eval(traj.states)
            dev = float(np.max(np.abs(kin - model.meta["c"])))
        elif name == "casimir":
            dev = casimir_drift(traj, model.observables["casimir"])
        else:
            raise ConfigError(f"unknown check {name!r}")
        tol = float(cfg.tolerances.get(name, _default_tolerance(name, cfg)))
        items.append({"name": name, "max_deviation": dev, "tolerance": tol})
    return items


def _needs(checks):
    tangent = any(c in ("symplectic-volume", "symplectic-pullback", "contact-pullback",
                        "contact-volume", "lcs-pullback") for c in checks)
    conformal = any(c in ("conformal-exactness", "contact-pullback", "contact-volume")
                    for c in checks)
    return tangent, conformal


def _emit_plot_script(outdir, csv_name, ycols):
    script = os.path.join(outdir, "plot.py")
    with open(script, "w") as fh:
        fh.write(
            "import csv\nimport matplotlib.pyplot as plt\n\n"
            f"rows = list(csv.DictReader(open({csv_name!r})))\n"
            "t = [float(r['t']) for r in rows]\n"
            f"for col in {ycols!r}:\n"
            "    plt.plot(t, [float(r[col]) for r in rows], label=col)\n"
            "plt.xlabel('t')\nplt.legend()\nplt.tight_layout()\nplt.savefig('plot.png', dpi=150)\n"
        )
    return script


def cmd_simulate(cfg):
    model = build_model(cfg.model, cfg.model_params)
    grid = TimeGrid(0.0, cfg.t_final, cfg.steps)
    path = sample_brownian(cfg.seed, grid, model.system.r)
    z0 = np.asarray(cfg.initial_state if cfg.initial_state is not None
                    else _default_initial(model), dtype=float)
    checks = cfg.diagnostics.get("checks", _DEFAULT_CHECKS.get(cfg.model, []))
    need_tangent, need_conformal = _needs(checks)
    tangent = bool(cfg.diagnostics.get("tangent", need_tangent))
    conformal = bool(cfg.diagnostics.get("conformal", need_conformal)) \
        and model.system.contact is not None
    if cfg.scheme != "heun":
        tangent = False
    traj = integrate(model.system, z0, path, scheme=cfg.scheme,
                     tangent=tangent, conformal=conformal)

    os.makedirs(cfg.out, exist_ok=True)
    csv_path = os.path.join(cfg.out, "trajectory.csv")
    trajectory_to_csv(traj, csv_path, conformal=conformal, det_j=tangent)

    if traj.blown_up is not None:
        report = assemble_report(
            [{"name": "lifetime", "max_deviation": float("inf"), "tolerance": 0.0}],
            model=cfg.model, scheme=cfg.scheme, dt=cfg.dt, seed=cfg.seed)
        with open(os.path.join(cfg.out, "report.json"), "w") as fh:
            fh.write(report.to_json())
        print(f"blow-up at step {traj.blown_up} (t={traj.times[-1]:g}); truncated output written")
        return EXIT_BLOWUP

    items = _run_checks(model, traj, cfg, checks) if tangent or checks else []
    report = assemble_report(items, model=cfg.model, scheme=cfg.scheme,
                             dt=cfg.dt, seed=cfg.seed)
    with open(os.path.join(cfg.out, "report.json"), "w") as fh:
        fh.write(report.to_json())
    if cfg.emit_plot_script:
        _emit_plot_script(cfg.out, "trajectory.csv", [f"z_{i+1}" for i in range(model.system.dim)])
    for e in report.entries:
        print(f"{'PASS' if e.passed else 'FAIL'} {e.name}: "
              f"deviation {e.max_deviation:.3e} (tol {e.tolerance:.3e})")
    return EXIT_OK if report.all_passed else EXIT_CHECK


def cmd_ensemble(cfg, chunk=4096):
    model = build_model(cfg.model, cfg.model_params)
    grid = TimeGrid(0.0, cfg.t_final, cfg.steps)
    z0 = np.asarray(cfg.initial_state if cfg.initial_state is not None
                    else _default_initial(model), dtype=float)
    names = cfg.observables or sorted(model.observables)
    unknown = [nm for nm in names if nm not in model.observables]
    if unknown:
        raise ConfigError(f"unknown observable(s) {unknown}")
    n_steps = grid.steps
    sums = {nm: np.zeros(n_steps + 1) for nm in names}
    sumsq = {nm: np.zeros(n_steps + 1) for nm in names}

    done = 0
    while done < cfg.paths:
        b = min(chunk, cfg.paths - done)
        inc = np.empty((b, model.system.r, n_steps))
        for i in range(b):
            inc[i] = sample_brownian(mix_seed(cfg.seed, done + i), grid, model.system.r).increments
        hist = integrate_batch(model.system, z0, inc, grid.dt,
                               scheme=cfg.scheme, store=True)
        for nm in names:
            vals = np.asarray(model.observables[nm].eval(hist))
            sums[nm] += vals.sum(axis=1)
            sumsq[nm] += (vals ** 2).sum(axis=1)
        done += b

    os.makedirs(cfg.out, exist_ok=True)
    csv_path = os.path.join(cfg.out, "moments.csv")
    with open(csv_path, "w") as fh:
        cols = ["t"] + [f"mean_{nm}" for nm in names] + [f"var_{nm}" for nm in names]
        fh.write(",".join(cols) + "\n")
        times = grid.times
        npaths = float(cfg.paths)
        for i, t in enumerate(times):
            means = [sums[nm][i] / npaths for nm in names]
            variances = [max(sumsq[nm][i] / npaths - (sums[nm][i] / npaths) ** 2, 0.0)
                         for nm in names]
            row = [f"{t:.17g}"] + [f"{v:.17g}" for v in means + variances]
            fh.write(",".join(row) + "\n")

    items = []
    for nm in names:
        mean_f = sums[nm][-1] / cfg.paths
        var_f = max(sumsq[nm][-1] / cfg.paths - mean_f ** 2, 0.0)
        items.append({"name": f"final-mean-{nm}", "max_deviation": abs(mean_f),
                      "tolerance": cfg.tolerances.get(f"final-mean-{nm}", float("inf"))})
        items.append({"name": f"final-var-{nm}", "max_deviation": var_f,
                      "tolerance": cfg.tolerances.get(f"final-var-{nm}", float("inf"))})
    report = assemble_report(items, model=cfg.model, scheme=cfg.scheme,
                             dt=cfg.dt, seed=cfg.seed)
    with open(os.path.join(cfg.out, "report.json"), "w") as fh:
        fh.write(report.to_json())
    print(f"{cfg.paths} paths done; moments written to {csv_path}")
    return EXIT_OK if report.all_passed else EXIT_CHECK


def cmd_convergence(cfg):
    if cfg.levels < 2:
        raise ConfigError("convergence needs levels >= 2")
    model = build_model(cfg.model, cfg.model_params)
    grid = TimeGrid(0.0, cfg.t_final, cfg.steps)
    z0 = np.asarray(cfg.initial_state if cfg.initial_state is not None
                    else _default_initial(model), dtype=float)
    checks = cfg.diagnostics.get("checks", _DEFAULT_CHECKS.get(cfg.model, []))
    _, need_conformal = _needs(checks)
    conformal = need_conformal and model.system.contact is not None

    path = sample_brownian(cfg.seed, grid, model.system.r)
    devs = {name: [] for name in checks}
    dts = []
    for _ in range(cfg.levels):
        traj = integrate(model.system, z0, path, tangent=True, conformal=conformal)
        if traj.blown_up is not None:
            print(f"blow-up at dt={path.grid.dt:g}; aborting chain")
            return EXIT_BLOWUP
        sub = RunConfig(**{**asdict(cfg), "dt": path.grid.dt})
        for it in _run_checks(model, traj, sub, checks):
            devs[it["name"]].append(it["max_deviation"])
        dts.append(path.grid.dt)
        path = refine(path)

    items = []
    for name in checks:
        d = devs[name]
        items.append({
            "name": name,
            "max_deviation": d[0],
            "tolerance": float(cfg.tolerances.get(name, _default_tolerance(name, cfg))),
            "refined_deviation": d[1],
        })
    report = assemble_report(items, model=cfg.model, scheme=cfg.scheme,
                             dt=cfg.dt, seed=cfg.seed)
    os.makedirs(cfg.out, exist_ok=True)
    table = report.to_dict()
    table["chain"] = {"dts": dts, "deviations": devs}
    with open(os.path.join(cfg.out, "convergence.json"), "w") as fh:
        fh.write(json.dumps(table, indent=2))
    for name in checks:
        d = np.asarray(devs[name])
        with np.errstate(divide="ignore", invalid="ignore"):
            orders = np.log2(d[:-1] / d[1:])
        print(f"{name}: deviations {['%.3e' % x for x in d]} orders {['%.2f' % o for o in orders]}")
    return EXIT_OK


def cmd_hjb(cfg):
    model = build_model(cfg.model, cfg.model_params)
    if model.system.contact is None or model.system.contact.n != 1:
        raise ConfigError("hjb needs a contact model with n = 1 (damped-contact)")
    hj = dict(cfg.hj)
    a = float(hj.get("a", -4.0))
    b = float(hj.get("b", 4.0))
    cells = int(hj.get("num_cells", 200))
    q0 = float(hj.get("q0", 1.0))
    s0_coeffs = hj.get("s0", [0.0, 0.0, 0.1])
    s0, s0p, _ = polynomial1d(s0_coeffs)
    problem = HjProblem(sys=model.system, s0=s0, s0_prime=s0p, a=a, b=b,
                        num_cells=cells, boundary=hj.get("boundary", "linear-extrapolation"))
    grid = TimeGrid(0.0, cfg.t_final, cfg.steps)
    path = sample_brownian(cfg.seed, grid, model.system.r)
    try:
        res = lift_equivalence_error(problem, path, q0=q0)
    except HjCflError as exc:
        print(f"CFL guard: {exc}")
        return EXIT_CONFIG

    os.makedirs(cfg.out, exist_ok=True)
    grid_to_csv(res["grid"], os.path.join(cfg.out, "hj_grid.csv"))
    tol = float(cfg.tolerances.get("lift-equivalence", 0.05))
    report = assemble_report(
        [{"name": "lift-equivalence", "max_deviation": res["sup_error"], "tolerance": tol}],
        model=cfg.model, scheme=cfg.scheme, dt=cfg.dt, seed=cfg.seed)
    out = report.to_dict()
    out["endpoint_error"] = res["endpoint_error"]
    out["steps_compared"] = res["steps_compared"]
    with open(os.path.join(cfg.out, "hj_report.json"), "w") as fh:
        fh.write(json.dumps(out, indent=2))
    print(f"lift equivalence sup error {res['sup_error']:.4e} over {res['steps_compared']} steps "
          f"(tol {tol:g})")
    truncated = res["steps_compared"] < cfg.steps or res["grid"].blown_up is not None
    if truncated:
        return EXIT_BLOWUP
    return EXIT_OK if report.all_passed else EXIT_CHECK


def _bracket_structure(name, params):
    if name == "harmonic-oscillator":
        return canonical_symplectic(int(params.get("n", 1)))
    if name == "damped-contact":
        return canonical_contact(int(params.get("n", 1)))[0]
    if name == "isokinetic":
        coeffs = np.asarray(params.get("sigma_poly", [0.0, 0.3]), dtype=float)
        val, der, der2 = polynomial1d(coeffs)
        n = int(params.get("n", 1))
        m = 2 * n

        def s_eval(z):
            z = np.asarray(z, dtype=float)
            return val(z).sum(axis=-1)

        def s_grad(z):
            return der(np.asarray(z, dtype=float))

        def s_hess(z):
            z = np.asarray(z, dtype=float)
            H = np.zeros(z.shape + (m,))
            for i in range(m):
                H[..., i, i] = der2(z[..., i])
            return H

        return lcs_cotangent(n, ScalarField(s_eval, s_grad, s_hess, name="sigma"))[0]
    if name == "rigid-body-so3":
        return lie_poisson_so3()
    raise ConfigError(f"no bracket structure for model {name!r}")


def _random_polys(m, rng, count=3):
    out = []
    for _ in range(count):
        c1 = rng.normal(size=m)
        c2 = rng.normal(size=(m, m))
        c2 = 0.5 * (c2 + c2.T)

        def ev(z, c1=c1, c2=c2):
            z = np.asarray(z, dtype=float)
            return z @ c1 + np.einsum("...i,ij,...j->...", z, c2, z)

        def gr(z, c1=c1, c2=c2):
            z = np.asarray(z, dtype=float)
            return c1 + 2.0 * np.einsum("ij,...j->...i", c2, z)

        def he(z, c2=c2):
            z = np.asarray(z, dtype=float)
            return np.broadcast_to(2.0 * c2, z.shape[:-1] + (m, m)).copy()

        out.append(ScalarField(ev, gr, he))
    return out


def bracket_identity_deviations(struct, seed=0, n_points=100):
    """Antisymmetry / Jacobi / weak-Leibniz / V_1 = E deviations at random points."""
    rng = np.random.default_rng(seed)
    m = struct.dim
    f, g, h = _random_polys(m, rng)
    pts = rng.uniform(-2.0, 2.0, size=(n_points, m))

    anti = np.max(np.abs(jacobi_bracket(struct, f, g, pts)
                         + jacobi_bracket(struct, g, f, pts)))
    jac = np.max(np.abs(
        jacobi_bracket(struct, f, bracket_field(struct, g, h), pts)
        + jacobi_bracket(struct, g, bracket_field(struct, h, f), pts)
        + jacobi_bracket(struct, h, bracket_field(struct, f, g), pts)))
    gh = ScalarField(
        lambda z: np.asarray(g.eval(z)) * np.asarray(h.eval(z)),
        lambda z: (np.asarray(g.analytic_gradient(z)) * np.asarray(h.eval(z))[..., None]
                   + np.asarray(g.eval(z))[..., None] * np.asarray(h.analytic_gradient(z))))
    E = np.asarray(struct.e_field(pts))
    ef = np.einsum("...i,...i->...", gradient(f, pts), E)
    leib = np.max(np.abs(
        jacobi_bracket(struct, f, gh, pts)
        - np.asarray(g.eval(pts)) * jacobi_bracket(struct, f, h, pts)
        - np.asarray(h.eval(pts)) * jacobi_bracket(struct, f, g, pts)
        - np.asarray(g.eval(pts)) * np.asarray(h.eval(pts)) * ef))
    v1 = np.max(np.abs(hamiltonian_vector_field(struct, ScalarField.constant(1.0), pts) - E))
    return {"antisymmetry": float(anti), "jacobi-identity": float(jac),
            "weak-leibniz": float(leib), "v1-equals-e": float(v1)}


def cmd_bracket_check(cfg):
    struct = _bracket_structure(cfg.model, cfg.model_params)
    devs = bracket_identity_deviations(struct, seed=cfg.seed)
    defaults = {"antisymmetry": 1e-14, "jacobi-identity": 1e-8,
                "weak-leibniz": 1e-10, "v1-equals-e": 0.0}
    items = [{"name": k, "max_deviation": v,
              "tolerance": float(cfg.tolerances.get(k, defaults[k]))}
             for k, v in devs.items()]
    report = assemble_report(items, model=cfg.model, scheme=cfg.scheme,
                             dt=cfg.dt, seed=cfg.seed)
    os.makedirs(cfg.out, exist_ok=True)
    with open(os.path.join(cfg.out, "bracket_report.json"), "w") as fh:
        fh.write(report.to_json())
    for e in report.entries:
        print(f"{'PASS' if e.passed else 'FAIL'} {e.name}: "
              f"{e.max_deviation:.3e} (tol {e.tolerance:.3e})")
    return EXIT_OK if report.all_passed else EXIT_CHECK


def _parser():
    p = argparse.ArgumentParser(prog="jacobiflow",
                                description="stochastic Hamiltonian simulation on Jacobi-type charts")
    sub = p.add_subparsers(dest="command", required=True)
    for name in ("simulate", "ensemble", "convergence", "hjb", "bracket-check"):
        q = sub.add_parser(name)
        q.add_argument("--config", default=None)
        q.add_argument("--seed", type=int, default=None)
        q.add_argument("--dt", type=float, default=None)
        q.add_argument("--t-final", dest="t_final", type=float, default=None)
        q.add_argument("--paths", type=int, default=None)
        q.add_argument("--scheme", choices=("heun", "euler-ito"), default=None)
        q.add_argument("--out", default=None)
        q.add_argument("--model", default=None)
        q.add_argument("--levels", type=int, default=None)
        q.add_argument("--print-config", action="store_true")
        q.add_argument("--emit-plot-script", action="store_true", dest="emit_plot")
    return p


_COMMANDS = {
    "simulate": cmd_simulate,
    "ensemble": cmd_ensemble,
    "convergence": cmd_convergence,
    "hjb": cmd_hjb,
    "bracket-check": cmd_bracket_check,
}


def main(argv=None):
    args = _parser().parse_args(argv)
    overrides = {k: getattr(args, k) for k in
                 ("seed", "dt", "t_final", "paths", "scheme", "out", "model", "levels")}
    try:
        cfg = load_config(args.config, overrides)
        if args.emit_plot:
            cfg.emit_plot_script = True
        if args.print_config:
            _print_config(cfg)
        return _COMMANDS[args.command](cfg)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
