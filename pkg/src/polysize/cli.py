"""Command-line entry point: ``polysize <subcommand> [options]``.

Reports go out as JSON, bulk tables as CSV.  With ``--out`` each run also
writes ``<out>.manifest.json`` holding the resolved configuration and
sha256 digests of every file produced; ``--plot`` adds PNG figures.
Errors print one ``code=... message=...`` line on stderr.  Exit status is
0 on success, 1 on domain errors, 2 on usage errors.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import io
import json
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__, compiler, harness, learnability, polysys, sizing, steppers
from .circuit import NeuralCircuit
from .circuit import parameter_jacobian as circuit_jacobian


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(message)


def _floats(text):
    try:
        return [float(v) for v in text.split(",")]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}")


def _ints(text):
    try:
        return [int(v) for v in text.split(",")]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}")


def _common() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(add_help=False)
    g = p.add_argument_group("global options")
    g.add_argument("--seed", type=int, default=42, help="random seed (default 42)")
    g.add_argument("--threads", type=int, default=None, help="worker cap (default: all cores)")
    g.add_argument("--out", type=Path, default=None, help="output file (default: stdout)")
    g.add_argument("--config", type=Path, default=None, help="JSON file of option defaults")
    g.add_argument("--plot", action="store_true", help="also render PNG figures next to --out")
    return p


def _system_args(p):
    src = p.add_mutually_exclusive_group()
    src.add_argument("--system", type=Path, help="polynomial system JSON")
    src.add_argument("--l63", action="store_true", help="built-in Lorenz-63 system (default)")


def build_parser() -> argparse.ArgumentParser:
    common = _common()
    parser = _Parser(prog="polysize", description="Size bounds for networks learning polynomial systems.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", metavar="command", parser_class=_Parser)
    sub.required = True

    p = sub.add_parser("compile", parents=[common], help="compile a system into a PolyNet circuit")
    _system_args(p)
    p.add_argument("--full", action="store_true", help="one product node per monomial")
    p.add_argument("--scheme", choices=steppers.SCHEMES, help="wrap in a stepper circuit")
    p.add_argument("--dt", type=float, default=0.01)

    p = sub.add_parser("simulate", parents=[common], help="integrate a system (CSV trajectory)")
    _system_args(p)
    p.add_argument("--scheme", choices=steppers.SCHEMES, default="rk4")
    p.add_argument("--dt", type=float, default=0.01)
    p.add_argument("--steps", type=int, default=1000)
    p.add_argument("--x0", type=_floats, default=None, help="initial state, e.g. 1,1,1")
    p.add_argument("--circuit", type=Path, help="rate circuit JSON instead of a system")
    p.add_argument("--via-circuit", action="store_true", help="step through the compiled stepper circuit")

    p = sub.add_parser("metric", parents=[common], help="learnability metric of a system or circuit")
    _system_args(p)
    p.add_argument("--circuit-file", type=Path, help="circuit JSON instead of a system")
    p.add_argument("--x", type=_floats, help="input point for --circuit-file")
    mode = p.add_mutually_exclusive_group()
    mode.add_argument("--corner", action="store_true", help="Jacobian at the bound corner (default)")
    mode.add_argument("--samples", type=int, default=None, help="average over uniform inputs")

    p = sub.add_parser("size", parents=[common], help="closed-form and Bayesian size bounds")
    p.add_argument("--n", type=int, default=3)
    p.add_argument("--d", type=int, default=2)
    p.add_argument("--eta", type=float, default=1.0)
    p.add_argument("--bayes", action="store_true")
    _sim_args(p)

    p = sub.add_parser("spectra", parents=[common], help="random-network trace spectra (CSV)")
    p.add_argument("--n", type=int, default=3)
    p.add_argument("--eta", type=float, default=1.0)
    _sim_args(p)

    p = sub.add_parser("dataset", parents=[common], help="Lorenz-63 map pairs (CSV)")
    p.add_argument("--n-traj", type=int, default=harness.DESK["n_traj"])
    p.add_argument("--total-steps", type=int, default=harness.DESK["total_steps"])
    p.add_argument("--discard", type=int, default=harness.DESK["discard"])
    p.add_argument("--keep", type=int, default=harness.DESK["keep"])
    p.add_argument("--dt", type=float, default=0.01)
    p.add_argument("--normalized", action="store_true")
    p.add_argument("--full-scale", action="store_true", help="1000 trajectories x 500 kept steps")

    p = sub.add_parser("validate", parents=[common], help="train networks of several sizes on L63 data")
    p.add_argument("--n", type=int, default=3)
    p.add_argument("--d", type=int, default=2)
    p.add_argument("--sizes", type=_ints, default=[2, 4, 6, 8])
    p.add_argument("--seeds", type=int, default=3)
    p.add_argument("--epochs", type=int, default=1000)
    p.add_argument("--lr", type=float, default=0.5)
    p.add_argument("--lam", type=float, default=1e-4)
    p.add_argument("--full-scale", action="store_true")
    return parser


def _sim_args(p):
    g = p.add_argument_group("simulation")
    g.add_argument("--trials", type=int, default=2000)
    g.add_argument("--input-samples", type=int, default=64)
    g.add_argument("--hmax", type=int, default=None, help="largest h on the grid")
    g.add_argument("--p0", type=float, default=0.99)
    g.add_argument("--aggregate", choices=("max", "mean"), default="max")
    g.add_argument("--interior", action="store_true", help="add uniform interior inputs")
    g.add_argument("--normalize", choices=("output", "none"), default="output")
    g.add_argument("--posterior", choices=("size", "degree"), default="size")


def _sim_config(a) -> sizing.SimConfig:
    return sizing.SimConfig(
        trials=a.trials,
        input_samples=a.input_samples,
        h_max=a.hmax,
        p0=a.p0,
        seed=a.seed,
        aggregate=a.aggregate,
        interior=a.interior,
        normalize=a.normalize,
        posterior=a.posterior,
        threads=a.threads,
    )


def _load_system(a) -> polysys.PolynomialSystem:
    return polysys.PolynomialSystem.load(a.system) if a.system else polysys.l63_system()


def _dumps(doc) -> str:
    return json.dumps(doc, indent=2, sort_keys=True) + "\n"


class _Outputs:
    """Collects written files for the manifest."""

    def __init__(self, out: Path | None):
        self.out = out
        self.files: list[Path] = []

    def text(self, text: str, path: Path | None = None):
        path = path or self.out
        if path is None:
            sys.stdout.write(text)
            return
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(text)
        self.files.append(path)

    def sibling(self, suffix: str) -> Path | None:
        return None if self.out is None else self.out.with_suffix(suffix)

    def figure(self, fn, *args, suffix=".png"):
        if self.out is None:
            raise UsageError("--plot needs --out")
        from . import plotting

        path = self.out.with_suffix(suffix)
        getattr(plotting, fn)(*args, path)
        self.files.append(path)


def _csv(header, rows, comment=None) -> str:
    buf = io.StringIO()
    if comment:
        buf.write(f"# {comment}\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for r in rows:
        w.writerow([v if isinstance(v, (int, str)) else repr(float(v)) for v in r])
    return buf.getvalue()


# subcommands ------------------------------------------------------------


def cmd_compile(a, out: _Outputs):
    system = _load_system(a)
    pn = compiler.compile_polynet(system, full=a.full)
    circ = pn.circuit
    if a.scheme:
        circ = steppers.build_stepper_circuit(circ, a.scheme, a.dt)
    doc = circ.to_dict()
    if a.out is None:
        out.text(_dumps(doc))
    else:
        out.text(_dumps(doc))
        sys.stdout.write(_dumps({"hidden_nodes": pn.hidden_count, "parameters": int(circ.params.size), "nodes": len(circ.nodes)}))


def cmd_simulate(a, out: _Outputs):
    if a.steps < 0:
        raise ValueError("steps must be non-negative")
    if a.circuit is not None:
        if a.system is not None:
            raise UsageError("give either --system or --circuit")
        inner = NeuralCircuit.load(a.circuit)
    else:
        inner = compiler.compile_polynet(_load_system(a)).circuit
    n = inner.n_in
    x0 = a.x0 if a.x0 is not None else [1.0] * n
    if len(x0) != n:
        raise ValueError(f"x0 has {len(x0)} entries, the rate map has {n}")
    st = steppers.StepperCircuit(inner, a.scheme, a.dt)
    traj = steppers.simulate(st, x0, a.steps, use_circuit=a.via_circuit)
    header = ["step", "t"] + [f"x{i + 1}" for i in range(n)]
    rows = [[k, k * a.dt, *traj[k]] for k in range(traj.shape[0])]
    out.text(_csv(header, rows))
    if a.plot:
        out.figure("plot_trajectory", traj, None, a.dt)


def cmd_metric(a, out: _Outputs):
    if a.circuit_file:
        circ = NeuralCircuit.load(a.circuit_file)
        x = a.x if a.x is not None else [1.0] * circ.n_in
        m = learnability.metric(circuit_jacobian(circ, np.asarray(x)))
        doc = m.to_dict()
        doc["x"] = list(x)
    else:
        system = _load_system(a)
        m = learnability.system_metric(system, samples=a.samples, seed=a.seed)
        doc = m.to_dict()
        doc["elt_bound"] = polysys.elt_bound(system)
        doc["samples"] = a.samples
    out.text(_dumps(doc))


def cmd_size(a, out: _Outputs):
    cfg = _sim_config(a) if a.bayes else None
    rep = sizing.sizing_report(a.n, a.d, a.eta, with_bayes=a.bayes, config=cfg)
    doc = rep.to_dict()
    out.text(_dumps(doc))
    if a.out is not None:
        sys.stdout.write(_dumps(doc))
    if a.plot and rep.posterior is not None:
        out.figure("plot_posterior", rep.posterior, a.d, rep.h_bayes, a.p0)


def cmd_spectra(a, out: _Outputs):
    cfg = _sim_config(a)
    h_max = a.hmax if a.hmax is not None else 20
    dists, post = sizing.run_spectra(a.n, h_max, cfg, a.eta)
    rows = [[dd.h, t, v] for dd in dists for t, v in enumerate(dd.samples)]
    out.text(_csv(["h", "trial", "elt"], rows))
    prow = []
    for r, h in enumerate(post.h_grid):
        for d in range(post.d_max + 1):
            prow.append([int(h), d, post.F_d_given_h[r, d], post.F_h_given_d[r, d]])
    ppath = None if a.out is None else a.out.parent / "posterior.csv"
    if ppath is not None:
        out.text(_csv(["h", "d", "F_d_given_h", "F_h_given_d"], prow), ppath)
    summary = [
        dict(h=dd.h, elt_star=dd.elt_star, c=dd.elt_star / sizing.ln_reference(a.n, dd.h), gev=dd.gev)
        for dd in dists
    ]
    if a.out is not None:
        out.text(_dumps(dict(n=a.n, h_max=h_max, config=cfg.to_dict(), cells=summary)), out.sibling(".summary.json"))
    if a.plot:
        out.figure("plot_spectra", dists, post)


def cmd_dataset(a, out: _Outputs):
    kw = dict(harness.FULL) if a.full_scale else dict(n_traj=a.n_traj, total_steps=a.total_steps, discard=a.discard, keep=a.keep)
    ds = harness.generate_dataset(**kw, dt=a.dt, seed=a.seed)
    X, Y = (ds.Xn, ds.Yn) if a.normalized else (ds.X, ds.Y)
    rows = [[*x, *y] for x, y in zip(X, Y)]
    out.text(_csv(["x", "y", "z", "x'", "y'", "z'"], rows, comment=f"normalized={str(a.normalized).lower()}"))


def cmd_validate(a, out: _Outputs):
    if a.n != 3:
        raise ValueError("validation runs on the 3-dimensional Lorenz-63 map")
    rep = harness.validate(
        sizes=a.sizes,
        seeds=a.seeds,
        full_scale=a.full_scale,
        lr=a.lr,
        epochs=a.epochs,
        lam=a.lam,
        seed=a.seed,
        threads=a.threads,
    )
    rep["target"] = dict(n=a.n, d=a.d, h_cn_lower=sizing.h_cn_lower(a.n, a.d), h_sc_lower=sizing.h_sc_lower(a.n, a.d))
    out.text(_dumps(rep))
    if a.plot:
        out.figure("plot_validation", rep)


COMMANDS = {
    "compile": cmd_compile,
    "simulate": cmd_simulate,
    "metric": cmd_metric,
    "size": cmd_size,
    "spectra": cmd_spectra,
    "dataset": cmd_dataset,
    "validate": cmd_validate,
}


def _sha256(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def _parse(argv):
    parser = build_parser()
    a = parser.parse_args(argv)
    if a.config is not None:
        try:
            cfg = json.loads(a.config.read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise UsageError(f"cannot read config {a.config}: {exc}")
        if not isinstance(cfg, dict):
            raise UsageError("config must be a JSON object")
        sp = parser._subparsers._group_actions[0].choices[a.command]
        known = {act.dest for act in sp._actions}
        bad = sorted(set(k.replace("-", "_") for k in cfg) - known)
        if bad:
            raise UsageError(f"unknown config keys: {', '.join(bad)}")
        # config supplies defaults; explicit flags still win
        sp.set_defaults(**{k.replace("-", "_"): v for k, v in cfg.items()})
        a = parser.parse_args(argv)
    return a


def main(argv=None) -> int:
    argv = sys.argv[1:] if argv is None else list(argv)
    try:
        a = _parse(argv)
    except UsageError as exc:
        print(f"code=usage_error message={exc}", file=sys.stderr)
        return 2
    except SystemExit as exc:  # --help / --version
        return int(exc.code or 0)
    out = _Outputs(a.out)
    t0 = time.perf_counter()
    try:
        COMMANDS[a.command](a, out)
    except UsageError as exc:
        print(f"code=usage_error message={exc}", file=sys.stderr)
        return 2
    except (ValueError, ArithmeticError, RuntimeError, OSError, KeyError) as exc:
        msg = " ".join(str(exc).split()) or type(exc).__name__
        print(f"code={type(exc).__name__} message={msg}", file=sys.stderr)
        return 1
    if a.out is not None:
        cfg = {k: (str(v) if isinstance(v, Path) else v) for k, v in sorted(vars(a).items())}
        manifest = dict(
            subcommand=a.command,
            config=cfg,
            seed=a.seed,
            version=__version__,
            wall_time=round(time.perf_counter() - t0, 6),
            outputs={str(p): _sha256(p) for p in out.files},
        )
        Path(str(a.out) + ".manifest.json").write_text(_dumps(manifest))
    return 0


if __name__ == "__main__":
    sys.exit(main())
