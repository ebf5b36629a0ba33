"""Command-line front end.

Subcommands: factorize, condexp, project, risk, fiducial-demo, kalman-demo.
Every subcommand takes ``--seed``, ``--out`` and ``--threads``.  Exit codes:
0 on success (including "not measurable" and "diverged" verdicts), 1 on
runtime or input errors, 2 on usage errors.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import os
import sys
import tempfile
from dataclasses import dataclass, field
from importlib import resources
from typing import Any, Dict, List, Optional, Sequence

import numpy as np

from . import condexp, factorization, fiducial, kalman, risk
from .extreal import encode, to_ext
from .measure import SchemaError, load_space
from .rng import DEFAULT_SEED

SUBCOMMANDS = ("factorize", "condexp", "project", "risk", "fiducial-demo", "kalman-demo")


@dataclass(frozen=True)
class RunConfig:
    subcommand: str
    seed: int = DEFAULT_SEED
    out: Optional[str] = None
    threads: int = 1
    options: Dict[str, Any] = field(default_factory=dict)


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(2, f"{self.prog}: error: {message}\n")


def _seed(text: str) -> int:
    try:
        value = int(text, 0)
    except ValueError:
        raise argparse.ArgumentTypeError(f"invalid seed {text!r}") from None
    if not 0 <= value < 2 ** 64:
        raise argparse.ArgumentTypeError("seed must be a 64-bit unsigned integer")
    return value


def _positive_int(text: str) -> int:
    try:
        value = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"invalid integer {text!r}") from None
    if value < 1:
        raise argparse.ArgumentTypeError("must be at least 1")
    return value


def _truncations(text: str) -> List[float]:
    try:
        values = [float(t) for t in text.split(",") if t.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"invalid truncation list {text!r}") from None
    if not values or any(v <= 0 for v in values):
        raise argparse.ArgumentTypeError("truncations must be positive")
    if any(b <= a for a, b in zip(values, values[1:])):
        raise argparse.ArgumentTypeError("truncations must be increasing")
    return values


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=_seed, default=DEFAULT_SEED,
                        help=f"64-bit seed (default {DEFAULT_SEED:#x})")
    common.add_argument("--out", help="output file (default: stdout)")
    common.add_argument("--threads", type=_positive_int, default=1)

    parser = _Parser(prog="doobdynkin", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="subcommand", required=True, parser_class=_Parser)

    p = sub.add_parser("factorize", parents=[common], help="decide and build X = phi(Y)")
    p.add_argument("--space", required=True)
    p.add_argument("--x", required=True)
    p.add_argument("--y", required=True)
    p.add_argument("--extend", metavar="DEFAULT",
                   help="extend phi to the whole Y codomain with this X value")
    p.add_argument("--levels", type=_positive_int,
                   help="use the dyadic simple-function construction with this many levels")

    p = sub.add_parser("condexp", parents=[common], help="exact E(Gamma | Y) as CSV")
    p.add_argument("--space", required=True)
    p.add_argument("--gamma", required=True)
    p.add_argument("--y", required=True)

    p = sub.add_parser("project", parents=[common], help="L2 projection onto a feature basis")
    p.add_argument("--samples", required=True, help="CSV with columns y,gamma")
    p.add_argument("--basis", required=True, help="JSON feature list")
    p.add_argument("--ridge", type=float, default=None)
    p.add_argument("--allow-pinv", action="store_true")

    p = sub.add_parser("risk", parents=[common], help="Bayes/posterior/frequentist risks")
    p.add_argument("--model", required=True)
    p.add_argument("--phi", required=True)
    p.add_argument("--report", help="report path (alias of --out)")
    p.add_argument("--truncations", type=_truncations)
    p.add_argument("--n", type=_positive_int, default=risk.DEFAULT_MC_SAMPLES)

    p = sub.add_parser("fiducial-demo", parents=[common], help="flat-prior location example")
    p.add_argument("--y", type=float, default=0.0)
    p.add_argument("--noise", choices=sorted(fiducial.NOISE_FAMILIES), default="normal")
    p.add_argument("--psi", choices=("identity", "square"), default="identity")
    p.add_argument("--n", type=_positive_int, default=100_000)
    p.add_argument("--truncations", type=_truncations, default=[1.0, 10.0, 100.0])

    p = sub.add_parser("kalman-demo", parents=[common], help="Kalman-Bucy ensemble MSE vs S(t)")
    p.add_argument("--f", type=float, default=0.0)
    p.add_argument("--c", type=float, default=1.0)
    p.add_argument("--g", type=float, default=1.0)
    p.add_argument("--d", type=float, default=1.0)
    p.add_argument("--s0", type=float, default=0.0)
    p.add_argument("--x0", type=float, default=0.0)
    p.add_argument("--tmax", type=float, default=2.0)
    p.add_argument("--dt", type=float, default=1e-3)
    p.add_argument("--paths", type=_positive_int, default=10_000)
    p.add_argument("--every", type=_positive_int, default=1, help="write every k-th grid row")
    return parser


def parse_args(argv: Sequence[str]) -> RunConfig:
    """Parse ``argv`` (without the program name); exits with 2 on usage errors."""
    ns = build_parser().parse_args(list(argv))
    opts = {k: v for k, v in vars(ns).items()
            if k not in ("subcommand", "seed", "out", "threads")}
    out = ns.out
    if ns.subcommand == "risk":
        out = opts.pop("report") or out
    return RunConfig(ns.subcommand, ns.seed, out, ns.threads, opts)


# ---------------------------------------------------------------------------
# output
# ---------------------------------------------------------------------------


def load_schema(name: str) -> Dict[str, Any]:
    text = resources.files("doobdynkin").joinpath(f"schemas/{name}.json").read_text("utf-8")
    return json.loads(text)


def _jsonable(x):
    if isinstance(x, dict):
        return {str(k): _jsonable(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_jsonable(v) for v in x]
    if isinstance(x, np.generic):
        return x.item()
    return encode(x)


def dump_json(doc) -> str:
    return json.dumps(_jsonable(doc), indent=2, sort_keys=True, allow_nan=False) + "\n"


def dump_csv(header: Sequence[str], rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for row in rows:
        w.writerow(row)
    return buf.getvalue()


def write_output(text: str, path: Optional[str]):
    """Write to ``path`` atomically (temp file + rename), or to stdout."""
    if path is None:
        sys.stdout.write(text)
        sys.stdout.flush()
        return
    directory = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(prefix=".tmp-", dir=directory)
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _read_json(path: str, what: str):
    try:
        with open(path, encoding="utf-8") as fh:
            return json.load(fh)
    except json.JSONDecodeError as exc:
        raise SchemaError(what, f"invalid JSON ({exc.msg})") from exc


def _parse_literal(text: str):
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def _cell(x) -> str:
    if isinstance(x, float):
        return repr(x)
    return str(encode(x))


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------


def _get_map(spacefile, name: str):
    try:
        return spacefile.maps[name]
    except KeyError:
        raise SchemaError(f"maps.{name}", "no such map in the space file") from None


def _numeric(rv, name: str):
    """Coerce map values to extended reals ("p/q" strings become Fractions)."""
    try:
        return rv.compose(to_ext, codomain=None, name=rv.name)
    except (TypeError, ValueError) as exc:
        raise SchemaError(f"maps.{name}", f"values must be numeric ({exc})") from exc


def cmd_factorize(cfg: RunConfig) -> str:
    o = cfg.options
    sf = load_space(o["space"])
    X, Y = _get_map(sf, o["x"]), _get_map(sf, o["y"])
    doc: Dict[str, Any] = {"schema": "doobdynkin/factorize-report/1", "x": o["x"], "y": o["y"]}
    try:
        if o.get("levels"):
            phi, _ = factorization.factor_via_simple_limit(_numeric(X, o["x"]), Y, o["levels"])
        else:
            phi = factorization.construct_factor(X, Y)
    except factorization.NotMeasurable as exc:
        doc.update(status="not_measurable", witness=list(exc.report.witness_pair))
        return dump_json(doc)
    if o.get("extend") is not None:
        phi = factorization.extend_factor(phi, Y.codomain, _parse_literal(o["extend"]))
    doc.update(status="factored",
               phi=[{"y": y, "x": x} for y, x in zip(phi.domain, phi.values)],
               defined_on_image_only=phi.defined_on_image_only,
               provenance=phi.provenance)
    return dump_json(doc)


def cmd_condexp(cfg: RunConfig) -> str:
    o = cfg.options
    sf = load_space(o["space"])
    gamma, Y = _get_map(sf, o["gamma"]), _get_map(sf, o["y"])
    gamma = _numeric(gamma, o["gamma"])
    table = condexp.condexp_discrete(sf.space, gamma, Y)
    rows = [(_cell(y), "" if y in table.undefined_set else _cell(table.phi[y]),
             _cell(table.mass[y])) for y in Y.codomain]
    return dump_csv(("y", "phi", "mass"), rows)


def _read_samples(path: str):
    with open(path, encoding="utf-8", newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None or not {"y", "gamma"} <= set(reader.fieldnames):
            raise SchemaError("samples", "CSV needs columns y,gamma")
        samples = []
        for line, row in enumerate(reader, start=2):
            try:
                g = float(row["gamma"])
            except ValueError:
                raise SchemaError("samples.gamma", f"non-numeric value on line {line}") from None
            y = row["y"]
            try:
                y = float(y)
            except ValueError:
                pass
            samples.append((y, g))
    return samples


def cmd_project(cfg: RunConfig) -> str:
    o = cfg.options
    samples = _read_samples(o["samples"])
    try:
        basis = condexp.FeatureBasis.from_spec(_read_json(o["basis"], "basis"))
    except ValueError as exc:
        if isinstance(exc, SchemaError):
            raise
        field_name, _, msg = str(exc).partition(": ")
        raise SchemaError(f"basis.{field_name}", msg) from exc
    fit = condexp.project_l2(samples, basis, o["ridge"], allow_pinv=o["allow_pinv"])
    doc = {"schema": "doobdynkin/project-report/1", "seed": cfg.seed, **fit.as_dict()}
    return dump_json(doc)


def parse_model(doc) -> Any:
    if not isinstance(doc, dict):
        raise SchemaError("model", "expected a JSON object")
    kind = doc.get("kind")
    if kind == "finite":
        for key in ("thetas", "prior", "ys", "likelihood", "psi"):
            if key not in doc:
                raise SchemaError(f"model.{key}", "missing")
        try:
            return risk.FiniteModel(doc["thetas"], doc["prior"], doc["ys"],
                                    doc["likelihood"], [_psi_value(v) for v in doc["psi"]])
        except (TypeError, ValueError) as exc:
            raise SchemaError("model", str(exc)) from exc
    if kind == "location":
        psi = doc.get("psi", "identity")
        try:
            if isinstance(psi, dict):
                if "constant" not in psi:
                    raise SchemaError("model.psi", "expected a name or {\"constant\": c}")
                return fiducial.LocationModel.named(doc.get("noise", "normal"), "constant",
                                                    float(psi["constant"]))
            return fiducial.LocationModel.named(doc.get("noise", "normal"), psi)
        except ValueError as exc:
            if isinstance(exc, SchemaError):
                raise
            raise SchemaError("model.noise" if "noise" in str(exc) else "model.psi",
                              str(exc)) from exc
    raise SchemaError("model.kind", "expected 'finite' or 'location'")


def _psi_value(v):
    if isinstance(v, list):
        return tuple(to_ext(c) for c in v)
    return to_ext(v)


def parse_phi(doc, model) -> Any:
    if not isinstance(doc, dict):
        raise SchemaError("phi", "expected a JSON object")
    kind = doc.get("kind")
    finite = isinstance(model, risk.FiniteModel)
    if kind == "optimal":
        return risk.optimal_rule(model) if finite else model.posterior_mean
    if kind == "table":
        if not finite:
            raise SchemaError("phi.kind", "tables only apply to finite models")
        ys, values = doc.get("ys"), doc.get("values")
        if not isinstance(ys, list) or not isinstance(values, list) or len(ys) != len(values):
            raise SchemaError("phi.values", "expected equal-length ys and values lists")
        return dict(zip(ys, (_psi_value(v) for v in values)))
    if kind == "identity":
        return (lambda y: y) if finite else (lambda y: np.asarray(y, dtype=float))
    if kind == "affine":
        a, b = doc.get("intercept", 0), doc.get("slope", 1)
        if finite:
            a, b = to_ext(a), to_ext(b)
        return lambda y: a + b * (np.asarray(y, dtype=float) if not finite else y)
    if kind == "constant":
        if "value" not in doc:
            raise SchemaError("phi.value", "missing")
        c = _psi_value(doc["value"]) if finite else float(doc["value"])
        return (lambda y: c) if finite else (lambda y: np.full(np.shape(y), c))
    raise SchemaError("phi.kind", "expected optimal, table, identity, affine or constant")


def cmd_risk(cfg: RunConfig) -> str:
    o = cfg.options
    model = parse_model(_read_json(o["model"], "model"))
    phi = parse_phi(_read_json(o["phi"], "phi"), model)
    try:
        report = risk.risk_report(model, phi, truncations=o.get("truncations"), n=o["n"],
                                  seed=cfg.seed, threads=cfg.threads)
    except KeyError as exc:
        raise SchemaError("phi", f"estimator undefined at y = {exc.args[0]!r}") from exc
    doc = {"schema": "doobdynkin/risk-report/1", "seed": cfg.seed,
           "model": "finite" if isinstance(model, risk.FiniteModel) else "location",
           **report.as_dict()}
    return dump_json(doc)


def cmd_fiducial(cfg: RunConfig) -> str:
    o = cfg.options
    model = fiducial.LocationModel.named(o["noise"], o["psi"])
    y, n = o["y"], o["n"]
    post = fiducial.fiducial_posterior(model, y, n, cfg.seed)
    estimate = fiducial.posterior_point_estimate(post, model.psi)
    summary = fiducial.mc_summary(post, model.psi)
    demo = fiducial.divergence_demo(model, truncations=o["truncations"], n=n,
                                    seed=cfg.seed, threads=cfg.threads)
    curve = []
    for T, r, se in demo.curve.points():
        rows = [{"y": yy, "r": ry, "stderr": rs}
                for (TT, yy, ry, rs) in demo.posterior_risks if TT == T]
        curve.append({"T": T, "r": r, "stderr": se, "posterior_risk": rows})
    doc = {
        "schema": "doobdynkin/fiducial-report/1",
        "y": y, "noise": o["noise"], "psi": o["psi"], "n": n, "seed": cfg.seed,
        "closed_form": list(post.closed_form) if post.closed_form else None,
        "estimate": estimate,
        "posterior_risk": fiducial.posterior_risk_location(model, y),
        "mc": {"estimate": summary.estimate, "estimate_stderr": summary.estimate_stderr,
               "posterior_risk": summary.risk, "posterior_risk_stderr": summary.risk_stderr},
        "curve": curve,
        "diverged": demo.diverged,
        "bayes_risk": "inf" if demo.diverged else demo.curve.risks[-1],
    }
    return dump_json(doc)


def cmd_kalman(cfg: RunConfig) -> str:
    o = cfg.options
    model = kalman.KalmanBucyModel(F=o["f"], C=o["c"], G=o["g"], D=o["d"], s0=o["s0"],
                                   x0_mean=o["x0"], t_max=o["tmax"], dt=o["dt"])
    curve = kalman.ensemble_mse(model, o["paths"], cfg.seed, threads=cfg.threads)
    rows = [(repr(float(t)), repr(float(s)), repr(float(m)), repr(float(e)))
            for k, (t, s, m, e) in enumerate(zip(curve.times, curve.S, curve.mse, curve.stderr))
            if k % o["every"] == 0 or k == model.n_steps]
    return dump_csv(("t", "S", "mse", "stderr"), rows)


COMMANDS = {
    "factorize": cmd_factorize,
    "condexp": cmd_condexp,
    "project": cmd_project,
    "risk": cmd_risk,
    "fiducial-demo": cmd_fiducial,
    "kalman-demo": cmd_kalman,
}


def run(cfg: RunConfig) -> int:
    """Execute a parsed configuration; returns the process exit code."""
    try:
        text = COMMANDS[cfg.subcommand](cfg)
        write_output(text, cfg.out)
    except SchemaError as exc:
        print(f"doobdynkin: input error: {exc}", file=sys.stderr)
        return 1
    except (OSError, ValueError, ArithmeticError, np.linalg.LinAlgError) as exc:
        print(f"doobdynkin: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1
    return 0


def main(argv: Optional[Sequence[str]] = None) -> int:
    cfg = parse_args(sys.argv[1:] if argv is None else argv)
    return run(cfg)


if __name__ == "__main__":
    sys.exit(main())
