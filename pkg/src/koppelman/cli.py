"""Command-line front end.  Every verb prints one JSON report (``"schema": 1``).

Exit codes: 0 success, 1 invariant violation (residual above tolerance,
failed axiom, ...), 2 configuration error.
"""

from __future__ import annotations

import argparse
import json
import sys
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from . import cohomology as co
from . import expr as ex
from . import forms as F
from . import kernels as kf
from . import quadrature as qd
from .errors import (
    CaseMismatch,
    DegreeOutOfRange,
    DomainError,
    DualityRequired,
    KoppelmanError,
    ParseError,
    TwistMismatch,
)

EXIT_OK, EXIT_VIOLATION, EXIT_CONFIG = 0, 1, 2


class ConfigError(Exception):
    pass


# library errors that mean "this request makes no sense" rather than "a check failed"
CONFIG_ERRORS = (CaseMismatch, DegreeOutOfRange, DomainError, DualityRequired, ParseError, TwistMismatch)


@dataclass
class RunConfig:
    command: str
    options: dict = field(default_factory=dict)
    seed: int = 0
    output: Optional[str] = None
    csv: Optional[str] = None
    timing: bool = False


def _complex(text: str) -> complex:
    try:
        return complex(text.replace(" ", "").replace("i", "j"))
    except ValueError as err:
        raise argparse.ArgumentTypeError(f"not a complex number: {text!r}") from err


def _emit(cfg: RunConfig, payload: dict) -> None:
    text = qd.dumps(payload)
    if cfg.output:
        Path(cfg.output).write_text(text + "\n")
    print(text)


def _write_csv(cfg: RunConfig, trace: qd.ConvergenceTrace) -> None:
    if cfg.csv:
        Path(cfg.csv).write_text(trace.to_csv(cfg.timing))


def _runtime(t0: float, cfg: RunConfig):
    return round((time.perf_counter() - t0) * 1e3, 3) if cfg.timing else None


# ----------------------------------------------------------------------
# verbs


def cmd_verify_cauchy(cfg: RunConfig) -> int:
    o = cfg.options
    if o["radius"] <= 0:
        raise ConfigError("radius must be positive")
    if abs(o["z"]) >= o["radius"]:
        raise ConfigError("z must lie strictly inside the disc")
    if o["degree"] < 0:
        raise ConfigError("degree must be non-negative")
    phi = F.scalar(ex.power(ex.var("zeta", 0), o["degree"]) if o["degree"] else ex.ONE)
    pair = kf.bm_kernel(1)
    domain = qd.Disc(radius=o["radius"])

    def run(points):
        return qd.koppelman_eval(phi, pair, domain, (o["z"],), qd.QuadratureRule(points=points))

    t0 = time.perf_counter()
    terms = run(o["points"])
    rt = _runtime(t0, cfg)
    meshes = sorted({max(4, o["points"] // 16), o["points"]})
    _write_csv(cfg, qd.convergence_study(run, meshes))
    ok = terms.residual < o["tol"]
    _emit(cfg, qd.report(terms, o["points"], rt, value=[terms.total().get((), 0j).real, terms.total().get((), 0j).imag],
                         tolerance=o["tol"], passed=bool(ok)))
    return EXIT_OK if ok else EXIT_VIOLATION


def cmd_verify_weight(cfg: RunConfig) -> int:
    o = cfg.options
    kind = o["kind"]
    if o["k"] < 0:
        raise ConfigError("weight power must be non-negative")
    if kind == "polynomial-growth":
        spec, amb = kf.WeightSpec("polynomial_growth", power=o["k"]), kf.C(1)
    elif kind == "alpha-projective":
        spec, amb = kf.WeightSpec("alpha_projective", power=o["k"]), kf.P(o["n"])
    elif kind == "alpha-product":
        spec, amb = kf.WeightSpec("alpha_product", power=o["k"]), kf.PxP(o["n"], o["n"])
    else:
        raise ConfigError(f"unknown weight kind {kind!r}")
    t0 = time.perf_counter()
    g = kf.weight(spec, amb, check=False)
    try:
        nab, diag = kf.check_weight(g, amb, points=o["points"], rng=cfg.seed)
        ok = True
    except KoppelmanError:
        nab, diag = kf.check_weight(g, amb, points=o["points"], rng=cfg.seed, nabla_tol=np.inf, diag_tol=np.inf)
        ok = False
    pt = kf.sample_points(amb, 1, cfg.seed, diagonal=True)
    sc = complex(np.ravel(ex.evaluate(g.scalar_part(), pt))[0])
    out = {"schema": qd.SCHEMA, "weight": spec.describe(), "ambient": amb.label(),
           "nabla_residual": nab, "diagonal_residual": diag, "scalar_at_diagonal": [sc.real, sc.imag],
           "passed": ok, "runtime_ms": _runtime(t0, cfg)}
    if kind == "polynomial-growth" and o["degree"] is not None:
        phi = F.scalar(ex.power(ex.var("zeta", 0), o["degree"]) if o["degree"] else ex.ONE)
        pair = kf.weighted_flat_kernels(1, spec, check=False)

        def run(R):
            return qd.koppelman_eval(phi, pair, qd.truncated_Cn(R), (o["z"],), qd.QuadratureRule(points=o["mesh"]))

        trace = qd.convergence_study(run, o["radii"])
        _write_csv(cfg, trace)
        out["trace"] = [{"R": e.mesh, "residual": e.residual, "boundary": e.boundary} for e in trace.entries]
        out["monotone_boundary"] = trace.monotone_boundary
        ok = ok and trace.residuals[-1] < o["tol"]
        out["passed"] = ok
    _emit(cfg, out)
    return EXIT_OK if ok else EXIT_VIOLATION


def _read_form(path: Optional[str], space: str) -> F.Form:
    if path is None:
        if space == "C1":
            return F.dbar_gen("zeta", 0).scale(ex.conj(ex.var("zeta", 0)))
        psi = F.scalar(ex.div(ex.conj(ex.var("zeta", 1)), ex.norm2("zeta", 2)))
        return F.dbar(psi, ["zeta"])
    try:
        return F.parse_dump(Path(path).read_text())
    except (OSError, ValueError, KoppelmanError) as err:
        raise ConfigError(f"cannot read input form: {err}") from err


def cmd_solve_dbar(cfg: RunConfig) -> int:
    o = cfg.options
    if o["space"] not in ("C1", "P1"):
        raise ConfigError("solve-dbar supports --space C1 or P1")
    phi = _read_form(o["input"], o["space"])
    p, q = qd.form_bidegree(phi, ["zeta"])
    if (o["p"], o["q"]) != (p, q):
        raise ConfigError(f"input has bidegree ({p},{q}), not ({o['p']},{o['q']})")
    t0 = time.perf_counter()
    res = co.solve_dbar(phi, o["space"], o["r"], mesh=o["mesh"])
    out = {"schema": qd.SCHEMA, "space": o["space"], "p": p, "q": q, "r": o["r"],
           "runtime_ms": _runtime(t0, cfg)}
    out.update(res.to_dict())
    _emit(cfg, out)
    return EXIT_OK if res.verdict in ("solved", "obstructed") else EXIT_VIOLATION


def _parse_space(text: str) -> tuple:
    t = text.upper()
    if "X" in t:
        a, b = t.split("X")
        return ("PxP", int(a.lstrip("P")), int(b.lstrip("P")))
    if t.startswith("P"):
        return ("P", int(t[1:]))
    raise ConfigError(f"unknown space {text!r}")


def cmd_cohomology(cfg: RunConfig) -> int:
    o = cfg.options
    try:
        space = _parse_space(o["space"])
    except ValueError as err:
        raise ConfigError(str(err)) from err
    if space[0] == "PxP":
        if o["l"] is None:
            raise ConfigError("product spaces need --r (k) and --l")
        twist = (o["r"], o["l"])
    else:
        twist = o["r"]
    case = co.CohomologyCase(space, o["p"], o["q"], twist)
    t0 = time.perf_counter()
    verdict = co.analyze(case, mesh=o["mesh"])
    out = verdict.to_dict()
    out["case"] = verdict.letter
    out["group"] = case.label()
    out["runtime_ms"] = _runtime(t0, cfg)
    if verdict.mechanism is not None:
        out["residual"] = float(verdict.mechanism.residual)
    if verdict.obstruction is not None:
        out["pairing"] = verdict.obstruction.normalized_pairing
        out["residual"] = verdict.obstruction.residual
    _emit(cfg, out)
    return EXIT_VIOLATION if verdict.verdict == "mechanism_failed" else EXIT_OK


def cmd_dump_kernel(cfg: RunConfig) -> int:
    o = cfg.options
    kind = o["kind"]
    if kind == "bm":
        pair = kf.bm_kernel(o["n"])
    elif kind == "pn":
        pair = kf.pn_kernels(o["n"], o["p"], o["r"])
    elif kind == "product":
        pair = kf.product_kernels(o["n"], o["n"], o["r"], o["l"] or 0)
    else:
        raise ConfigError(f"unknown kernel kind {kind!r}")
    which = pair.P if o["which"] == "P" else pair.K
    text = F.dump(which)
    if o["dir"]:
        d = Path(o["dir"])
        d.mkdir(parents=True, exist_ok=True)
        groups = {}
        for mono, coef in which.items():
            b = F.bidegree(mono)
            bz, bs = b.z or (0, 0), b.zeta or (0, 0)
            groups.setdefault(f"{o['which']}_z{bz[0]}{bz[1]}_zeta{bs[0]}{bs[1]}", {})[mono] = coef
        for name, terms in sorted(groups.items()):
            (d / f"{name}.txt").write_text(F.dump(F.Form(terms)))
    _emit(cfg, {"schema": qd.SCHEMA, "kernel": kind, "which": o["which"], "terms": len(which.terms),
                "ambient": pair.ambient.label(), "convention": pair.eta_convention,
                "dump": text.splitlines()})
    return EXIT_OK


VERBS = {
    "verify-cauchy": cmd_verify_cauchy,
    "verify-weight": cmd_verify_weight,
    "solve-dbar": cmd_solve_dbar,
    "cohomology": cmd_cohomology,
    "dump-kernel": cmd_dump_kernel,
}


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        print(json.dumps({"schema": qd.SCHEMA, "error": message}), file=sys.stderr)
        raise SystemExit(EXIT_CONFIG)


def build_parser() -> argparse.ArgumentParser:
    ap = _Parser(prog="koppelman", description=__doc__.splitlines()[0])
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--output", help="also write the JSON report here")
    ap.add_argument("--csv", help="write a convergence trace (mesh,residual,runtime_ms)")
    ap.add_argument("--timing", action="store_true", help="record wall-clock runtimes")
    sub = ap.add_subparsers(dest="command", required=True, parser_class=_Parser)

    s = sub.add_parser("verify-cauchy", help="Cauchy reproduction on a disc")
    s.add_argument("--radius", type=float, default=1.0)
    s.add_argument("--z", type=_complex, default=0.3)
    s.add_argument("--degree", type=int, default=2)
    s.add_argument("--points", type=int, default=256)
    s.add_argument("--tol", type=float, default=1e-10)

    s = sub.add_parser("verify-weight", help="weight axioms, optionally a weighted representation")
    s.add_argument("--kind", default="polynomial-growth",
                   choices=["polynomial-growth", "alpha-projective", "alpha-product"])
    s.add_argument("--k", type=int, default=1)
    s.add_argument("--n", type=int, default=1)
    s.add_argument("--points", type=int, default=100)
    s.add_argument("--degree", type=int, default=None, help="represent zeta^degree on truncated discs")
    s.add_argument("--z", type=_complex, default=0.3)
    s.add_argument("--radii", type=float, nargs="+", default=[5.0, 10.0, 20.0])
    s.add_argument("--mesh", type=int, default=96)
    s.add_argument("--tol", type=float, default=1e-4)

    s = sub.add_parser("solve-dbar", help="solve dbar u = phi with the Koppelman potential")
    s.add_argument("--space", default="P1")
    s.add_argument("--p", type=int, default=0)
    s.add_argument("--q", type=int, default=1)
    s.add_argument("--r", type=int, default=-1)
    s.add_argument("--input", help="form file, one '+ coeff ^ gen ...' line per term")
    s.add_argument("--mesh", type=int, default=48)

    s = sub.add_parser("cohomology", help="vanishing case and mechanism for H^{p,q}(L^r)")
    s.add_argument("--space", default="P1", help="P<n> or P<n>xP<m>")
    s.add_argument("--p", type=int, default=0)
    s.add_argument("--q", type=int, default=0)
    s.add_argument("--r", type=int, default=0, help="twist (k on products)")
    s.add_argument("--l", type=int, default=None, help="second twist on products")
    s.add_argument("--mesh", type=int, default=32)

    s = sub.add_parser("dump-kernel", help="print a kernel in the form text format")
    s.add_argument("--kind", default="bm", choices=["bm", "pn", "product"])
    s.add_argument("--which", default="K", choices=["K", "P"])
    s.add_argument("--n", type=int, default=1)
    s.add_argument("--p", type=int, default=0)
    s.add_argument("--r", type=int, default=0)
    s.add_argument("--l", type=int, default=None)
    s.add_argument("--dir", help="also write one file per component bidegree")
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    opts = {k: v for k, v in vars(args).items() if k not in ("command", "seed", "output", "csv", "timing")}
    cfg = RunConfig(args.command, opts, args.seed, args.output, args.csv, args.timing)
    try:
        return VERBS[cfg.command](cfg)
    except ConfigError as err:
        print(json.dumps({"schema": qd.SCHEMA, "error": str(err)}), file=sys.stderr)
        return EXIT_CONFIG
    except CONFIG_ERRORS as err:
        print(json.dumps({"schema": qd.SCHEMA, "error": type(err).__name__, "detail": str(err)}), file=sys.stderr)
        return EXIT_CONFIG
    except KoppelmanError as err:
        print(json.dumps({"schema": qd.SCHEMA, "error": type(err).__name__, "detail": str(err)}), file=sys.stderr)
        return EXIT_VIOLATION


if __name__ == "__main__":
    sys.exit(main())
