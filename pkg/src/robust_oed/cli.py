"""Command-line front end: ``design``, ``validate`` and ``propagate``.

Every command reads a JSON run configuration (checked against the schema in
``data/config.schema.json``; unknown keys are rejected) and writes CSV/JSON
artifacts into ``--out``. Exit codes: 0 success, 1 error (an ``error.json``
is written and echoed to stderr), 2 design finished but infeasible.
"""
import argparse
import csv
import json
import os
import sys
from dataclasses import dataclass
from importlib import resources

import numpy as np
from jsonschema import Draft202012Validator

from .dynamics import DEFAULT_STEP, NoisePolicy, PiecewiseConstantInput
from .models import MODELS, Distribution, UncertaintySet
from .oed import ChanceConstraint, DesignProblem, SolverOptions, propagate_moments, solve
from .validate import McConfig, run_mc

EXIT_OK, EXIT_ERROR, EXIT_INFEASIBLE = 0, 1, 2


class ConfigError(ValueError):
    def __init__(self, message, field=None):
        super().__init__(message)
        self.field = field


def schema():
    return json.loads(resources.files("robust_oed").joinpath("data/config.schema.json").read_text())


def bundled_config(name):
    """Path of a configuration shipped with the package (e.g. ``"stat5_robust"``)."""
    return str(resources.files("robust_oed").joinpath(f"data/configs/{name}.json"))


def load_config(path):
    """Read and validate a config file; a bare bundled name such as ``stat5_robust`` also works."""
    if not os.path.exists(path) and os.path.exists(bundled_config(os.path.basename(str(path)))):
        path = bundled_config(os.path.basename(str(path)))
    with open(path) as fh:
        try:
            cfg = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: invalid JSON ({exc})") from exc
    errors = sorted(Draft202012Validator(schema()).iter_errors(cfg), key=lambda e: list(e.path))
    if errors:
        e = errors[0]
        field = ".".join(str(p) for p in e.path) or None
        raise ConfigError(f"{field or 'config'}: {e.message}", field)
    return cfg


@dataclass
class Setup:
    """Objects assembled from a validated configuration."""

    cfg: dict
    model: object
    uset: object
    theta_nominal: np.ndarray
    x0_nominal: np.ndarray
    template: PiecewiseConstantInput
    constraints: list
    step: float
    seed: int


def _grid(spec, t_f, default_step):
    if "grid" in spec:
        g = np.unique(np.asarray(spec["grid"], dtype=float))
    else:
        g = np.arange(0.0, t_f + 1e-9, spec.get("grid_step", default_step))
    if g.max() > t_f + 1e-12:
        raise ConfigError(f"constraint grid extends beyond t_f = {t_f}", "constraints")
    return g


def build(cfg, seed=None):
    m = cfg["model"]
    noise = NoisePolicy(**m["noise"]) if "noise" in m else None
    try:
        model, uset = MODELS[m["name"]](n_stages=m.get("n_stages", 20), x0=m.get("x0"), noise=noise)
    except ValueError as exc:
        raise ConfigError(str(exc), "model") from exc
    nb = model.n_base
    if "uncertainty" in cfg:
        try:
            uset = UncertaintySet(tuple(
                ((e["target"], e["index"]), Distribution(e["kind"], tuple(e["params"])))
                for e in cfg["uncertainty"]))
        except ValueError as exc:
            raise ConfigError(str(exc), "uncertainty") from exc
    for (t, i), _ in uset.entries:
        limit = model.n_theta if t == "parameter" else nb
        if i >= limit:
            raise ConfigError(f"{t} index {i} out of range (< {limit})", "uncertainty")
    if not all(uset.dist_for("parameter", j) for j in range(model.n_theta)):
        raise ConfigError("every estimated parameter needs an uncertainty entry", "uncertainty")
    # the nominal (prior) estimate of theta is the vector of distribution means
    theta = np.array([uset.dist_for("parameter", j).mean() for j in range(model.n_theta)])
    x0 = np.array(model.x0[:nb], dtype=float)

    inp = cfg["input"]
    bounds = tuple(inp.get("bounds", (0.0, 1.0)))
    if bounds[0] >= bounds[1]:
        raise ConfigError("input.bounds must be increasing", "input.bounds")
    template = PiecewiseConstantInput(np.full(inp["n_seg"], bounds[0]), float(inp["t_f"]), bounds)

    constraints = []
    for k, c in enumerate(cfg.get("constraints", [])):
        where = f"constraints.{k}"
        if ("output" in c) == ("weights" in c):
            raise ConfigError(f"{where}: give exactly one of 'output' or 'weights'", where)
        if "output" in c:
            if c["output"] not in model.output_names:
                raise ConfigError(f"{where}.output: unknown output {c['output']!r}", where + ".output")
            j = model.output_names.index(c["output"])
            probe = np.random.default_rng(0).random((2, model.n_x))
            H = model.jac_h(probe)[:, j]
            if not np.allclose(H[0], H[1], atol=1e-9):
                raise ConfigError(f"{where}.output: output is not linear in the state", where + ".output")
            w = H[0]
        else:
            if len(c["weights"]) != nb:
                raise ConfigError(f"{where}.weights: need {nb} entries", where + ".weights")
            w = np.zeros(model.n_x)
            w[:nb] = c["weights"]
        constraints.append(ChanceConstraint(w, c["b"], c["x_max"], c["beta"],
                                            _grid(c, template.t_f, 1.0), c.get("name", f"c{k}")))
    step = cfg.get("integrator", {}).get("step", DEFAULT_STEP)
    seed = cfg.get("seed", 0) if seed is None else seed
    return Setup(cfg, model, uset, theta, x0, template, constraints, step, seed)


def design_problem(s):
    cfg = s.cfg
    uset = s.uset.means() if cfg.get("design_uncertainty", "distribution") == "means" else s.uset
    pce = cfg.get("pce", {})
    opts = SolverOptions(seed=s.seed, **cfg.get("solver", {}))
    return DesignProblem(
        model=s.model, uset=uset, theta_nominal=s.theta_nominal, template=s.template,
        x0_nominal=s.x0_nominal, degree=pce.get("degree", 4), criterion=cfg.get("criterion", "E"),
        w=cfg.get("w", 0.0),
        constraints=s.constraints if cfg.get("enforce_constraints", True) else [],
        solver=opts, step=s.step, collocation=pce.get("collocation", "tensor"),
    )


def mc_config(s, threads):
    mc = dict(s.cfg.get("mc", {}))
    t_f = s.template.t_f
    dt = mc.pop("meas_step", 1.0)
    meas = np.arange(dt, t_f + 1e-9, dt)
    check = np.arange(0.0, t_f + 1e-9, mc.pop("check_step", 0.25))
    return McConfig(seed=s.seed, meas_grid=meas, check_grid=check, step=s.step, threads=threads, **mc)


def read_input(path, s):
    inp = PiecewiseConstantInput.from_csv(path, bounds=s.template.bounds)
    if abs(inp.t_f - s.template.t_f) > 1e-9 * s.template.t_f:
        raise ConfigError(f"{path}: horizon {inp.t_f} does not match config t_f {s.template.t_f}",
                          "input.t_f")
    if inp.n_seg != s.template.n_seg:
        raise ConfigError(f"{path}: {inp.n_seg} segments, config expects {s.template.n_seg}",
                          "input.n_seg")
    return inp


def _fmt(v):
    return repr(float(v))


def cmd_design(s, out, threads):
    result = solve(design_problem(s))
    os.makedirs(out, exist_ok=True)
    result.to_json(os.path.join(out, "design.json"))
    result.u_star.to_csv(os.path.join(out, "input.csv"))
    return EXIT_OK if result.feasible else EXIT_INFEASIBLE


def cmd_validate(s, out, threads, input_path):
    inp = read_input(input_path, s)
    cc = s.constraints[0] if s.constraints else None
    report = run_mc(s.model, s.uset, s.theta_nominal, inp, mc_config(s, threads), constraint=cc,
                    x0_nominal=s.x0_nominal)
    report.write(out)
    return EXIT_OK


def cmd_propagate(s, out, threads, input_path):
    inp = read_input(input_path, s)
    step = s.cfg.get("propagate", {}).get("grid_step", 1.0)
    grid = np.unique(np.concatenate([np.arange(0.0, inp.t_f + 1e-9, step), [inp.t_f]]))
    pce = s.cfg.get("pce", {})
    tab = propagate_moments(s.model, s.uset, s.theta_nominal, inp, grid, s.x0_nominal,
                            degree=pce.get("degree", 4), constraints=s.constraints, step=s.step,
                            collocation=pce.get("collocation", "tensor"))
    names = list(s.model.state_names[:s.model.n_base]) + list(s.model.output_names)
    header = ["t"] + [f"{k}_{n}" for n in names for k in ("mean", "var")]
    header += [f"margin_{cc.name}" for cc in s.constraints]
    mean = np.concatenate([tab.state_mean, tab.output_mean], axis=1)
    var = np.concatenate([tab.state_var, tab.output_var], axis=1)
    os.makedirs(out, exist_ok=True)
    with open(os.path.join(out, "moments.csv"), "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for i, t in enumerate(tab.t):
            row = [t]
            for j in range(mean.shape[1]):
                row += [mean[i, j], var[i, j]]
            row += [m[i] for m in tab.margins]
            w.writerow([_fmt(v) for v in row])
    return EXIT_OK


COMMANDS = {"design": cmd_design, "validate": cmd_validate, "propagate": cmd_propagate}


def parser():
    p = argparse.ArgumentParser(prog="robust-oed", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        sp = sub.add_parser(name)
        sp.add_argument("--config", required=True,
                        help="JSON run configuration (path, or a bundled name such as stat5_robust)")
        if name != "design":
            sp.add_argument("--input", required=True, help="input profile CSV (columns t,u)")
        sp.add_argument("--out", default=None, help="output directory (default: config 'out' or ./out)")
        sp.add_argument("--seed", type=int, default=None, help="master seed (overrides the config)")
        sp.add_argument("--threads", type=int, default=None, help="worker threads (default: all cores)")
    return p


def _report_error(out, exc):
    err = {"error": type(exc).__name__, "message": str(exc), "field": getattr(exc, "field", None)}
    text = json.dumps(err, sort_keys=True)
    print(text, file=sys.stderr)
    try:
        os.makedirs(out, exist_ok=True)
        with open(os.path.join(out, "error.json"), "w") as fh:
            fh.write(text + "\n")
    except OSError:
        pass


def main(argv=None):
    args = parser().parse_args(argv)
    out = args.out or "out"
    try:
        if args.seed is not None and args.seed < 0:
            raise ConfigError("--seed must be non-negative", "seed")
        threads = args.threads or os.cpu_count() or 1
        if threads < 1:
            raise ConfigError("--threads must be positive", "threads")
        cfg = load_config(args.config)
        out = args.out or cfg.get("out", "out")
        s = build(cfg, seed=args.seed)
        if args.command == "design":
            return cmd_design(s, out, threads)
        return COMMANDS[args.command](s, out, threads, args.input)
    except (ValueError, OSError, RuntimeError, KeyError) as exc:
        _report_error(out, exc)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
