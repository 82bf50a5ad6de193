"""Batch front end: model files in, JSON reports and CSV trajectories out.

Exit codes: 0 success, 1 a check failed, 2 bad input (model file, point,
flags), 3 non-Cartan model or degenerate point, 4 violated abnormal
precondition, 5 degeneracy or chart failure inside the duality pipeline.
"""

from __future__ import annotations

import argparse
import json
import sys
from concurrent.futures import ProcessPoolExecutor
from fractions import Fraction
from importlib import resources
from pathlib import Path

import numpy as np

from . import models
from .cartan import (
    CartanModel,
    ChartTooLargeError,
    DegeneratePointError,
    NotCartanError,
    leaf_space,
    prolong,
    verify_asymmetry,
    verify_duality,
)
from .control import ControlSystem, DomainExitError, IntegrationDiverged, quotient, steer
from .extremals import (
    AbnormalPreconditionError,
    CharacteristicDegenerate,
    OptimalControlProblem,
    integrate_abnormal_rank2,
    integrate_normal,
)
from .flags import derived_flag, float_rank, is_bracket_generating, is_cartan
from .vecfield import Chart, DimensionError, ExpressionError, PolyVectorField, pushforward_projection

__all__ = ["BUNDLED", "EXIT", "Model", "ModelFileError", "bundle_model", "load_model", "main", "model_to_dict"]

EXIT = {"ok": 0, "failed": 1, "input": 2, "not_cartan": 3, "precondition": 4, "pipeline": 5}

BUNDLED = {
    "m5": ("M5", models.free_nilpotent_235),
    "heisenberg": ("Heisenberg", models.heisenberg),
    "involutive": ("involutive R5", models.involutive_r5),
}


class ModelFileError(ValueError):
    pass


class _Exit(Exception):
    def __init__(self, code: str, message: str, report: dict | None = None):
        super().__init__(message)
        self.code = EXIT[code]
        self.report = report


# ---------------------------------------------------------------------------
# model files


class Model:
    """A parsed model file: chart, ordered distribution frame, optional problem blocks.

    Trailing ``parameters`` are extra chart variables without a component,
    as produced by the ``quotient`` subcommand.
    """

    def __init__(self, name: str, chart: Chart, nstate: int, frames: dict, metric: list, problems: dict):
        self.name = name
        self.chart = chart
        self.nstate = nstate
        self.frames = frames
        self.metric = metric
        self.problems = problems

    @property
    def frame(self) -> list:
        return [self.frames[k] for k in self.metric]

    def __eq__(self, other):
        return (isinstance(other, Model) and self.name == other.name and self.chart == other.chart
                and self.nstate == other.nstate and self.metric == other.metric
                and self.frames == other.frames and self.problems == other.problems)


def _parse_field(name: str, exprs, chart: Chart, nstate: int) -> PolyVectorField:
    if not isinstance(exprs, list) or len(exprs) != nstate:
        raise ModelFileError(f"frame {name!r} needs {nstate} component strings")
    comps = []
    for i, e in enumerate(exprs):
        try:
            comps.append(PolyVectorField.from_strings([str(e)], chart).components[0])
        except ExpressionError as exc:
            raise ModelFileError(f"frame {name!r} component {i + 1}: {exc}") from exc
    return PolyVectorField(comps, chart.dim)


def model_from_dict(data: dict) -> Model:
    try:
        coords = list(data["coordinates"])
        frames_raw = data["frames"]
    except (KeyError, TypeError) as exc:
        raise ModelFileError(f"missing key {exc}") from exc
    params = list(data.get("parameters", []))
    dim = data.get("dimension", len(coords))
    if dim != len(coords):
        raise ModelFileError(f"dimension {dim} but {len(coords)} coordinate names")
    try:
        chart = Chart(tuple(coords + params))
    except ValueError as exc:
        raise ModelFileError(str(exc)) from exc
    if not isinstance(frames_raw, dict) or not frames_raw:
        raise ModelFileError("frames must be a nonempty object")
    frames = {k: _parse_field(k, v, chart, len(coords)) for k, v in frames_raw.items()}
    metric = list(data.get("metric", {}).get("orthonormal", list(frames)))
    unknown = [k for k in metric if k not in frames]
    if unknown:
        raise ModelFileError(f"metric refers to unknown frames {unknown}")
    return Model(str(data.get("name", "")), chart, len(coords), frames, metric, dict(data.get("problems", {})))


def model_to_dict(model: Model) -> dict:
    names = model.chart.names
    out = {"name": model.name, "dimension": model.nstate, "coordinates": list(names[:model.nstate])}
    if model.chart.dim > model.nstate:
        out["parameters"] = list(names[model.nstate:])
    out["frames"] = {k: [c.to_string(names) for c in f.components] for k, f in model.frames.items()}
    out["metric"] = {"orthonormal": list(model.metric)}
    if model.problems:
        out["problems"] = model.problems
    return out


def bundle_model(key: str) -> dict:
    """Model-file dictionary of a bundled model, built from the frame constructors."""
    name, ctor = BUNDLED[key]
    chart, frame = ctor()
    frames = {f"X{i + 1}": f for i, f in enumerate(frame)}
    problems = {}
    if key == "m5":
        problems = {"normal": {"point": [0, 0, 0, 0, 0], "covector": [1, 0, 0, 0, 0], "horizon": 1.0},
                    "abnormal": {"point": [0, 0, 0, 0, 0], "covector": [0, 0, 0, 0, 1], "horizon": 1.0}}
    elif key == "heisenberg":
        problems = {"normal": {"point": [0, 0, 0], "covector": [1, 0, 1], "horizon": 1.0}}
    return model_to_dict(Model(name, chart, chart.dim, frames, list(frames), problems))


def load_model(spec: str) -> Model:
    """Parse a model file path, or the name of a bundled model."""
    if spec in BUNDLED and not Path(spec).exists():
        text = resources.files("cartangeo.data").joinpath(f"{spec}.json").read_text()
        source = f"<bundled {spec}>"
    else:
        try:
            text = Path(spec).read_text()
        except OSError as exc:
            raise ModelFileError(f"cannot read {spec}: {exc.strerror}") from exc
        source = spec
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ModelFileError(f"{source}: {exc.msg} at line {exc.lineno}, column {exc.colno}") from exc
    return model_from_dict(data)


# ---------------------------------------------------------------------------
# helpers


def _parse_vector(text: str | None, n: int, what: str, exact: bool = False) -> list:
    if text is None:
        raise _Exit("input", f"--{what} is required")
    try:
        vals = [Fraction(t.strip()) for t in text.split(",") if t.strip()]
    except (ValueError, ZeroDivisionError) as exc:
        raise _Exit("input", f"--{what}: {exc}") from exc
    if len(vals) != n:
        raise _Exit("input", f"--{what} needs {n} entries, got {len(vals)}")
    return vals if exact else [float(v) for v in vals]


def _problem_vector(args, model: Model, kind: str, key: str, flag: str, n: int, exact=False):
    text = getattr(args, flag.replace("-", "_"))
    if text is None and key in model.problems.get(kind, {}):
        text = ",".join(str(v) for v in model.problems[kind][key])
    return _parse_vector(text, n, flag, exact)


def _json_default(o):
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, (np.floating, np.integer, np.bool_)):
        return o.item()
    if isinstance(o, Fraction):
        return str(o)
    raise TypeError(type(o).__name__)


def _dumps(obj) -> str:
    return json.dumps(obj, indent=2, sort_keys=True, default=_json_default) + "\n"


def _write_csv(path: Path, header: list, rows: np.ndarray):
    path.parent.mkdir(parents=True, exist_ok=True)
    np.savetxt(path, rows, delimiter=",", header=",".join(header), comments="", fmt="%.17g")


def _emit(args, report: dict, suffix: str = ".json"):
    text = _dumps(report)
    if args.out:
        out = Path(args.out)
        if out.suffix != ".json":
            out = out.with_suffix(suffix)
        out.parent.mkdir(parents=True, exist_ok=True)
        out.write_text(text)
    sys.stdout.write(text)


def _cartan(model: Model, point=None) -> CartanModel:
    if model.chart.dim != model.nstate:
        raise _Exit("input", "model has parameters; Cartan analysis needs a plain frame")
    try:
        return CartanModel.from_frame(model.chart, model.frame, base=point)
    except NotCartanError as exc:
        raise _Exit("not_cartan", str(exc)) from exc


# ---------------------------------------------------------------------------
# subcommands


def cmd_analyze(args) -> int:
    model = load_model(args.model)
    n = model.nstate
    point = tuple(_parse_vector(args.point, n, "point", exact=True)) if args.point else (Fraction(0),) * n
    frame = model.frame
    if model.chart.dim != n:
        raise _Exit("input", "model has parameters; analyze needs a plain frame")
    vals = np.array([[float(c) for c in f(tuple(float(v) for v in point))] for f in frame])
    if float_rank(vals, 1e-12) < len(frame):
        raise _Exit("not_cartan", f"frame is linearly dependent at {[str(v) for v in point]}")
    flag = derived_flag(frame, point)
    report = {
        "model": model.name,
        "point": [str(v) for v in point],
        "growth": list(flag.growth),
        "is_cartan": n == 5 and bool(is_cartan(frame, point)),
        "is_bracket_generating": bool(is_bracket_generating(frame, point)),
    }
    _emit(args, report)
    return EXIT["ok"]


def cmd_geodesic(args) -> int:
    model = load_model(args.model)
    n = model.nstate
    if model.chart.dim != n:
        raise _Exit("input", "model has parameters; geodesics need a plain frame")
    x0 = np.array(_problem_vector(args, model, args.kind, "point", "point", n))
    p0 = np.array(_problem_vector(args, model, args.kind, "covector", "covector", n))
    T = args.horizon if args.horizon is not None else float(model.problems.get(args.kind, {}).get("horizon", 1.0))
    frame = model.frame
    names = list(model.chart.names)
    if args.kind == "normal":
        prob = OptimalControlProblem(ControlSystem.from_fields(frame, model.chart))
        arc = integrate_normal(prob, x0, p0, T=T, step=args.step)
        res_col, res_name = arc.residuals["hamiltonian"], "hamiltonian"
        summary = {"hamiltonian_drift": arc.residuals["hamiltonian_drift"]}
        ok = summary["hamiltonian_drift"] <= args.tol * max(1.0, abs(float(arc.residuals["hamiltonian"][0])))
    else:
        if len(frame) != 2:
            raise _Exit("input", "abnormal extremals are computed for rank-2 frames")
        try:
            arc = integrate_abnormal_rank2(frame, x0, p0, T=T, step=args.step, tol=args.tol)
        except AbnormalPreconditionError as exc:
            raise _Exit("precondition", str(exc), {"violated": exc.constraint, "value": exc.value}) from exc
        except CharacteristicDegenerate as exc:
            raise _Exit("precondition", str(exc), {"violated": "characteristic control", "t": exc.t}) from exc
        res_col = np.max(np.abs(arc.residuals["constraints"]), axis=1)
        res_name = "constraint"
        summary = {"max_constraint": arc.residuals["max_constraint"]}
        ok = summary["max_constraint"] <= args.tol * max(1.0, float(np.linalg.norm(p0)))
    header = (["t"] + names + [f"p_{c}" for c in names] + [f"u{i + 1}" for i in range(arc.controls.shape[1])]
              + [res_name])
    rows = np.column_stack([arc.times, arc.states, arc.costates, arc.controls, res_col])
    report = {"model": model.name, "kind": args.kind, "horizon": T, "step": args.step,
              "samples": len(arc.times), "endpoint": arc.states[-1], "residuals": summary,
              "within_tolerance": bool(ok)}
    if args.out:
        _write_csv(Path(args.out).with_suffix(".csv"), header, rows)
        report["csv"] = str(Path(args.out).with_suffix(".csv"))
    _emit(args, report)
    return EXIT["ok"] if ok else EXIT["failed"]


def _parse_keep(text: str, model: Model) -> list:
    out = []
    for tok in (t.strip() for t in text.split(",") if t.strip()):
        if tok in model.chart.names[:model.nstate]:
            out.append(model.chart.index(tok))
        else:
            try:
                out.append(int(tok) - 1)
            except ValueError as exc:
                raise _Exit("input", f"--keep: unknown coordinate {tok!r}") from exc
    if not out or min(out) < 0 or max(out) >= model.nstate or len(set(out)) == model.nstate:
        raise _Exit("input", "--keep must name a proper nonempty subset of the coordinates")
    return sorted(set(out))


def cmd_quotient(args) -> int:
    model = load_model(args.model)
    keep = _parse_keep(args.keep, model)
    names = model.chart.names
    dropped = [i for i in range(model.nstate) if i not in keep]
    frames = {k: pushforward_projection(f, keep) for k, f in model.frames.items()}
    q = Model(f"{model.name}/pi", Chart(tuple(names[i] for i in keep + dropped) + names[model.nstate:]),
              len(keep), frames, list(model.metric), {})
    parameter_free = {k: not any(c.depends_on(len(keep) + j) for c in f.components for j in range(len(dropped)))
                      for k, f in frames.items()}
    report = {"model": model.name, "keep": [names[i] for i in keep], "parameters": [names[i] for i in dropped],
              "parameter_free": parameter_free, "quotient_model": model_to_dict(q)}
    _emit(args, report)
    return EXIT["ok"]


def cmd_prolong(args) -> int:
    model = load_model(args.model)
    y = tuple(_parse_vector(args.point, model.nstate, "point", exact=True)) if args.point else None
    cm = _cartan(model, y)
    pc = prolong(cm)
    z = np.array([float(v) for v in cm.base] + [args.angle])
    try:
        pc.check_point(z)
    except DegeneratePointError as exc:
        raise _Exit("not_cartan", str(exc)) from exc
    growth = list(derived_flag(pc.frame, tuple(z), exact=False, tol=1e-6).growth)
    report = {"model": model.name, "base": [str(v) for v in cm.base], "angle": args.angle,
              "rho": str(pc.rho_expr), "eta": [str(e) for e in pc.eta.exprs],
              "rho_at_point": float(pc.rho(z)), "kappa_at_point": float(pc.kappa(z)),
              "growth": growth}
    _emit(args, report)
    return EXIT["ok"]


def _duality_stage(stage: str, model_spec: str, z0: list, options: dict) -> dict:
    model = load_model(model_spec)
    pc = prolong(CartanModel.from_frame(model.chart, model.frame))
    z0 = np.asarray(z0, dtype=float)
    try:
        if stage == "asymmetry":
            return verify_asymmetry(pc, z0, nsamples=options["nsamples"], tol=options["tol"],
                                    step=options["step"], seed=options["seed"])
        ls = leaf_space(pc, z0)
        return verify_duality(pc, z0, nfibers=options["nfibers"], tol=options["tol"],
                              seed=options["seed"], ls=ls)
    except (DegeneratePointError, ChartTooLargeError, CharacteristicDegenerate,
            IntegrationDiverged, DomainExitError) as exc:
        return {"error": f"{type(exc).__name__}: {exc}", "passed": False}


def cmd_duality(args) -> int:
    model = load_model(args.model)
    _cartan(model)
    n = model.nstate
    vals = _parse_vector(args.point, n + 1, "point") if args.point and args.point.count(",") == n \
        else (_parse_vector(args.point, n, "point") + [0.0] if args.point else [0.0] * (n + 1))
    options = {"nsamples": args.nsamples, "nfibers": args.nfibers, "tol": args.tol,
               "step": args.step, "seed": args.seed}
    stages = ("asymmetry", "duality")
    if args.jobs > 1:
        with ProcessPoolExecutor(max_workers=min(args.jobs, 2)) as pool:
            futs = [pool.submit(_duality_stage, s, args.model, vals, options) for s in stages]
            results = [f.result() for f in futs]
    else:
        results = [_duality_stage(s, args.model, vals, options) for s in stages]
    report = {"model": model.name, "z0": vals, "tol": args.tol, "seed": args.seed}
    report.update(dict(zip(stages, results)))
    errors = {s: r["error"] for s, r in zip(stages, results) if "error" in r}
    failing = []
    if not errors:
        failing += [f"asymmetry arc {i}: residual_L={a['residual_L']:.3e} residual_K={a['residual_K']:.3e} "
                    f"verdict={a['verdict']}" for i, a in enumerate(results[0]["arcs"]) if not a["ok"]]
        failing += [f"duality fibre {i}: distance={f['distance']:.3e} spread={f['costate_spread']:.3e}"
                    for i, f in enumerate(results[1]["fibers"])
                    if f["distance"] > args.tol or f["costate_spread"] > args.tol]
        if not results[1]["unique_match"]:
            failing.append("duality: fibres are not matched one-to-one")
    report["failing"] = failing
    report["passed"] = not errors and not failing
    _emit(args, report)
    if errors:
        stage = next(iter(errors))
        sys.stderr.write(f"error in stage {stage}: {errors[stage]}\n")
        return EXIT["pipeline"]
    if failing:
        sys.stderr.write("\n".join(failing) + "\n")
        return EXIT["failed"]
    return EXIT["ok"]


def cmd_steer(args) -> int:
    model = load_model(args.model)
    n = model.nstate
    if model.chart.dim != n:
        raise _Exit("input", "model has parameters; steering needs a plain frame")
    keep = _parse_keep(args.keep, model) if args.keep else list(range(n))
    x0 = np.array(_parse_vector(args.point, n, "point")) if args.point else np.zeros(n)
    target = np.array(_parse_vector(args.target, len(keep), "target"))
    sys_ = ControlSystem.from_fields(model.frame, model.chart)
    if len(keep) < n:
        # the quotient system must be well defined, even though steering runs upstairs
        quotient(sys_, keep)
    res = steer(sys_, x0, target, keep, T=args.horizon or 1.0, step=args.step, tol=args.tol,
                rng=args.seed)
    report = {"model": model.name, "keep": [model.chart.names[i] for i in keep], "target": target,
              "reached": bool(res["reached"]), "error": float(res["error"])}
    sig = res["signal"]
    if sig is not None:
        report["controls"] = sig.values
        if args.out:
            edges = sig.breakpoints()
            rows = np.column_stack([edges[:-1], edges[1:], sig.values])
            header = ["t0", "t1"] + [f"u{i + 1}" for i in range(sig.dim)]
            _write_csv(Path(args.out).with_suffix(".csv"), header, rows)
    _emit(args, report)
    return EXIT["ok"] if res["reached"] else EXIT["failed"]


# ---------------------------------------------------------------------------
# entry point


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--model", required=True, help="model file or bundled name (m5, heisenberg, involutive)")
    common.add_argument("--point", help="comma-separated coordinates; rationals like 1/2 allowed")
    common.add_argument("--step", type=float, default=1e-3, help="integration step")
    common.add_argument("--tol", type=float, default=1e-6, help="residual tolerance")
    common.add_argument("--seed", type=int, default=0)
    common.add_argument("--jobs", type=int, default=1, help="worker processes for batch verification")
    common.add_argument("--out", help="output path; .json report plus .csv data where applicable")

    p = argparse.ArgumentParser(prog="cartangeo", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)
    sub.add_parser("analyze", parents=[common], help="growth vector and Cartan test at a point")
    g = sub.add_parser("geodesic", parents=[common], help="normal or abnormal extremal to CSV")
    g.add_argument("--kind", choices=("normal", "abnormal"), default="normal")
    g.add_argument("--covector", help="initial covector")
    g.add_argument("--horizon", type=float, default=None)
    q = sub.add_parser("quotient", parents=[common], help="quotient model by a coordinate projection")
    q.add_argument("--keep", required=True, help="kept coordinates (names or 1-based indices)")
    r = sub.add_parser("prolong", parents=[common], help="Cartan prolongation summary")
    r.add_argument("--angle", type=float, default=0.0, help="fibre coordinate v")
    d = sub.add_parser("duality-check", parents=[common], help="asymmetry and duality verification")
    d.add_argument("--nsamples", type=int, default=20)
    d.add_argument("--nfibers", type=int, default=5)
    s = sub.add_parser("steer", parents=[common], help="steer to a (quotient) target")
    s.add_argument("--target", required=True)
    s.add_argument("--keep", help="kept coordinates for quotient steering")
    s.add_argument("--horizon", type=float, default=None)
    return p


COMMANDS = {"analyze": cmd_analyze, "geodesic": cmd_geodesic, "quotient": cmd_quotient,
            "prolong": cmd_prolong, "duality-check": cmd_duality, "steer": cmd_steer}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT["input"] if exc.code else EXIT["ok"]
    try:
        return COMMANDS[args.command](args)
    except _Exit as exc:
        sys.stderr.write(f"error: {exc}\n")
        if exc.report is not None:
            sys.stdout.write(_dumps({"error": str(exc), **exc.report}))
        return exc.code
    except (ModelFileError, DimensionError) as exc:
        sys.stderr.write(f"error: {exc}\n")
        return EXIT["input"]


if __name__ == "__main__":
    sys.exit(main())
