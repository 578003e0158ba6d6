"""Command-line front end: norms, operators, verification suites, factorization runs, reports.

Exit codes: 0 ok, 1 usage or input error, 2 divergent exponents, 3 a
certified check failed.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import io
import json
import math
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from fractions import Fraction

import numpy as np

from . import blocks, bml, hardy, lorentz, mesh, ops
from .bml import BMLExponents, DivergenceError

EXIT_OK, EXIT_INPUT, EXIT_DIVERGENT, EXIT_FAILED = 0, 1, 2, 3
SUITES = ("lorentz", "bml", "operators", "blocks", "hardy")


class InputError(Exception):
    pass


# -- parsing helpers ------------------------------------------------------------


def _exps(text: str) -> BMLExponents:
    try:
        return BMLExponents.parse(text)
    except ValueError as exc:
        raise InputError(f"bad --exps {text!r}: {exc}") from None


def _mesh_triple(text: str | None):
    if text is None:
        return None
    try:
        n, L, J = (int(v) for v in text.split(","))
    except ValueError:
        raise InputError(f"bad --mesh {text!r}, expected n,L,J") from None
    return n, L, J


def _pair(text: str):
    try:
        p, q = (math.inf if s.strip().lower() == "inf" else float(s) for s in text.split(","))
    except ValueError:
        raise InputError(f"expected p,q, got {text!r}") from None
    return p, q


def _kv(text: str) -> dict:
    out = {}
    for part in text.split(";"):
        if not part.strip():
            continue
        if "=" not in part:
            raise InputError(f"expected key=value, got {part!r}")
        k, v = part.split("=", 1)
        out[k.strip()] = v.strip()
    return out


def _load_function(args) -> mesh.MeshFunction:
    tri = _mesh_triple(args.mesh)
    if args.file:
        try:
            f = mesh.load_mesh(args.file)
        except (OSError, ValueError, json.JSONDecodeError) as exc:
            raise InputError(f"cannot read {args.file}: {exc}") from None
        return f
    if args.indicator:
        kv = _kv(args.indicator)
        try:
            j = int(kv.get("j", 0))
        except ValueError:
            raise InputError("indicator j must be an integer") from None
        n, L, J = tri or (1, max(1, -j), max(j, 0))
        m = tuple(int(v) for v in kv.get("m", ",".join("0" * n)).split(","))
        if len(m) != n:
            raise InputError("indicator index m has the wrong dimension")
        try:
            return mesh.dyadic_indicator(j, m, n, L, J, float(kv.get("value", 1.0)))
        except ValueError as exc:
            raise InputError(str(exc)) from None
    if args.random is not None:
        n, L, J = tri or (1, 2, 2)
        return mesh.random_step(args.random, n, L, J)
    raise InputError("give --file, --indicator or --random")


def _emit(obj, args, rows=None):
    if args.format == "csv":
        buf = io.StringIO()
        rows = rows if rows is not None else _flatten_rows(obj)
        if rows:
            w = csv.DictWriter(buf, fieldnames=list(rows[0].keys()), lineterminator="\n")
            w.writeheader()
            w.writerows(rows)
        text = buf.getvalue()
    else:
        text = json.dumps(obj, indent=2, sort_keys=True, default=_jsonable) + "\n"
    if args.out:
        with open(args.out, "w") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)


def _jsonable(v):
    if isinstance(v, Fraction):
        return str(v)
    if isinstance(v, (np.floating, np.integer)):
        return v.item()
    if isinstance(v, np.ndarray):
        return v.tolist()
    raise TypeError(f"not serializable: {type(v).__name__}")


def _flatten_rows(obj) -> list:
    if isinstance(obj, dict) and "records" in obj:
        return [{k: (json.dumps(v, default=_jsonable) if isinstance(v, (dict, list)) else v)
                 for k, v in r.items()} for r in obj["records"]]
    if isinstance(obj, dict):
        return [{"key": k, "value": json.dumps(v, default=_jsonable)} for k, v in sorted(obj.items())]
    return []


def _threads() -> int:
    try:
        return max(1, int(os.environ.get("BMLLAB_THREADS", "1")))
    except ValueError:
        return 1


# -- norm -----------------------------------------------------------------------


def cmd_norm(args) -> int:
    f = _load_function(args)
    out = {"mesh": {"n": f.n, "L": f.L, "J": f.J}}
    if args.lorentz:
        p, q = _pair(args.lorentz)
        try:
            out["lorentz"] = {"p": p, "q": q, "value": lorentz.lorentz_norm_of(f, p, q)}
        except ValueError as exc:
            raise InputError(str(exc)) from None
        _emit(out, args)
        return EXIT_OK
    e = _exps(args.exps)
    out["exps"] = list(e.as_tuple())
    try:
        out["breakdown"] = bml.bml_norm(f, e).to_dict()
    except DivergenceError as exc:
        print(str(exc), file=sys.stderr)
        return EXIT_DIVERGENT
    out["lorentz"] = {"p": e.p, "q": e.q, "value": lorentz.lorentz_norm_of(f, e.p, e.q)}
    _emit(out, args)
    return EXIT_OK


# -- op -------------------------------------------------------------------------


def cmd_op(args) -> int:
    f = _load_function(args)
    try:
        if args.operator == "hilbert":
            res = ops.hilbert_transform(f)
            vals, exact = res.values, res.exact
        elif args.operator == "fractional":
            res = ops.fractional_integral(f, args.alpha)
            vals, exact = res.values, res.exact
        elif args.operator == "maximal":
            vals, exact = ops.maximal_dyadic(f), True
        elif args.operator == "sharp":
            vals, exact = ops.sharp_maximal(f), True
        else:
            if not args.symbol:
                raise InputError("commutator needs --symbol FILE")
            res = ops.commutator(mesh.load_mesh(args.symbol), f)
            vals, exact = res.values, res.exact
    except ValueError as exc:
        raise InputError(str(exc)) from None
    centres = f.cell_centers()
    if args.format == "csv" and f.n == 1:
        rows = [{"x": float(x), "value": float(v)} for x, v in zip(centres, vals.values)]
        _emit({}, args, rows)
    else:
        _emit({"operator": args.operator, "exact": exact, "values": vals.to_dict()}, args)
    return EXIT_OK


# -- verify ---------------------------------------------------------------------


def _digest(*parts) -> str:
    h = hashlib.sha256()
    for p in parts:
        h.update(json.dumps(p, sort_keys=True, default=_jsonable).encode())
    return h.hexdigest()[:16]


def _record(name, anchor, inputs, measured, bound, passed, certified=True) -> dict:
    return {"name": name, "anchor": anchor, "inputs": _digest(inputs), "measured": measured,
            "bound": bound, "passed": bool(passed), "kind": "certified" if certified else "empirical"}


def _corpus(seed: int, size: int, n=1, L=2, J=2):
    return [mesh.random_step(seed * 7919 + i, n, L, J, levels=(4 if i % 3 == 0 else None),
                             density=(0.5 if i % 2 else 1.0)) for i in range(size)]


def suite_lorentz(seed: int, size: int) -> list:
    fs = _corpus(seed, size)
    rng = np.random.default_rng(seed)
    worst = 0.0
    for f in fs:
        p, q = rng.uniform(0.5, 4.0), rng.uniform(0.5, 4.0)
        a = lorentz.lorentz_norm_of(f, p, q)
        b = lorentz.lorentz_norm_via_distribution(f, p, q)
        worst = max(worst, abs(a - b) / max(abs(b), 1e-300))
    rec = [_record("lorentz.formula_agreement", "distribution-function formula", [seed, size],
                   worst, 1e-12, worst <= 1e-12)]
    worst = 0.0
    for f in fs:
        s, p, q = rng.uniform(0.3, 3.0), rng.uniform(0.5, 4.0), rng.uniform(0.5, 4.0)
        lhs, rhs = lorentz.power_identity_check(f, s, p, q)
        worst = max(worst, abs(lhs - rhs) / max(rhs, 1e-300))
    rec.append(_record("lorentz.power_identity", "power identity", [seed, size], worst, 1e-12, worst <= 1e-12))
    worst = 0.0
    for f, g in zip(fs, fs[1:] + fs[:1]):
        p, q = rng.uniform(1.0, 4.0), rng.uniform(1.0, 4.0)
        lhs, rhs = lorentz.holder_pair(f, g, p, q)
        worst = max(worst, lhs / rhs if rhs > 0 else 0.0)
    rec.append(_record("lorentz.holder", "Lorentz Holder inequality", [seed, size], worst, 1 + 1e-12,
                       worst <= 1 + 1e-12))
    return rec


def suite_bml(seed: int, size: int) -> list:
    e = BMLExponents(2, 2, 3, 4)
    f0 = mesh.dyadic_indicator(0, (0,), 1, 1, 0)
    val = bml.bml_norm(f0, e).total
    rec = [_record("bml.indicator_spot", "indicator example", [e.as_tuple()], val,
                   1.5997641376570748, abs(val - 1.5997641376570748) <= 1e-10)]
    ratios = []
    for j in range(-2, 2):
        a = bml.bml_norm(mesh.dyadic_indicator(j, (0,), 1, max(1, -j), max(j + 1, 0)), e).total
        b = bml.bml_norm(mesh.dyadic_indicator(j + 1, (0,), 1, max(1, -j), max(j + 1, 0)), e).total
        ratios.append(abs(b / a / 2 ** (-1 / e.t) - 1))
    rec.append(_record("bml.scaling", "dyadic dilation law", [e.as_tuple()], max(ratios), 1e-12,
                       max(ratios) <= 1e-12))
    fs = _corpus(seed, size)
    bad = 0
    const = 6.0 ** (1 / e.p - 1 / e.t)
    for f in fs:
        base = bml.bml_norm(f, e).total
        for a in mesh.all_offsets(1):
            if base > const * bml.bml_norm_on_grid(f, e, a) * (1 + 1e-12):
                bad += 1
    rec.append(_record("bml.grid_equivalence", "shifted-grid equivalence", [seed, size], bad, 0, bad == 0))
    bad = 0
    for f in fs:
        exact = bml.bml_norm(f, e).total
        v, tail = bml.bml_norm_truncated(f, e, -1, 1)
        if not (0 <= exact ** e.r - v ** e.r <= tail):
            bad += 1
    rec.append(_record("bml.truncation", "truncation tail", [seed, size], bad, 0, bad == 0))
    cases = [(1, 2, 3, 4), (2, 2, 2, 4), (3, 2, 2, 4), (1, 2, 3, 2), (2, 2, 2, 2), (3, 2, 2, 1),
             (1, 2, 3, math.inf), (2, 2, 2, math.inf), (3, 2, 2, math.inf), (1, 2, 3, 3)]
    bad = 0
    for c in cases:
        ex = BMLExponents(*c)
        expected = (c[0] <= c[2]) if c[3] == math.inf else (c[0] < c[2] < c[3])
        if ex.nontrivial != expected or (bml.divergence_reason(ex) is None) != expected:
            bad += 1
    rec.append(_record("bml.nontriviality", "nontriviality classification", cases, bad, 0, bad == 0))
    return rec


def suite_operators(seed: int, size: int) -> list:
    chi = mesh.dyadic_indicator(0, (0,), 1, 2, 3)
    t2 = ops.hilbert_at(chi, 2)
    rec = [_record("operators.hilbert_spot", "Hilbert transform of an interval", [], t2,
                   math.log(2) / math.pi, abs(t2 - math.log(2) / math.pi) <= 1e-12)]
    i2 = ops.fractional_at(chi, 2, 0.5)
    rec.append(_record("operators.fractional_spot", "Riesz potential of an interval", [], i2,
                       2 * (math.sqrt(2) - 1), abs(i2 - 2 * (math.sqrt(2) - 1)) <= 1e-12))
    fs = _corpus(seed, size)
    worst = 0.0
    for f, g in zip(fs, fs[1:] + fs[:1]):
        s = ops.pairing(ops.hilbert_transform(f).values, g) + ops.pairing(f, ops.hilbert_transform(g).values)
        worst = max(worst, abs(s))
    rec.append(_record("operators.antisymmetry", "odd kernel", [seed, size], worst, 1e-10, worst <= 1e-10))
    worst = 0.0
    for f in fs:
        b = f.with_values(np.full(f.values.shape, 2.5))
        worst = max(worst, ops.commutator(b, f).values.sup())
    rec.append(_record("operators.constant_commutator", "commutator with a constant", [seed, size],
                       worst, 1e-12, worst <= 1e-12))
    ratios = [bml.bml_norm(ops.maximal_dyadic(f), BMLExponents(2, 2, 3, 4)).total
              / bml.bml_norm(f, BMLExponents(2, 2, 3, 4)).total for f in fs]
    rec.append(_record("operators.maximal_ratio", "maximal boundedness", [seed, size], max(ratios),
                       None, math.isfinite(max(ratios)), certified=False))
    return rec


def suite_blocks(seed: int, size: int) -> list:
    e = BMLExponents(2, 2, 3, 4)
    like = mesh.MeshFunction(1, 4, 3, np.zeros(2 ** 8))
    Q = mesh.DyadicCube(0, (0,))
    b = blocks.normalized_indicator_block(Q.region(), like, e, Q)
    bad, gap = 0, 0.0
    for d in (blocks.decompose_maximal_of_block(b), blocks.decompose_T_of_block(b)):
        bad += sum(not ok for ok, _ in d.validation())
        listed = blocks._lp(d.lambdas, d.r_dual)
        gap = max(gap, abs(listed - d.meta["closed_form_listed"]) / d.meta["closed_form_listed"])
    rec = [_record("blocks.validity", "block decompositions", [], bad, 0, bad == 0),
           _record("blocks.closed_form_cost", "geometric cost sums", [], gap, 1e-10, gap <= 1e-10)]
    bad = 0
    for f in _corpus(seed, min(size, 20)):
        if blocks.block_norm_lower(f, e) > blocks.block_norm_upper(f, e) * (1 + 1e-12):
            bad += 1
    rec.append(_record("blocks.lower_le_upper", "block norm bounds", [seed, size], bad, 0, bad == 0))
    return rec


def suite_hardy(seed: int, size: int) -> list:
    Q = mesh.Region((0,), (1,))
    like = mesh.MeshFunction(1, 4, 3, np.zeros(2 ** 8))
    c = hardy.homogeneity_constant(Q, Q, 16, like=like)
    ref = 16 / math.pi * math.log(8.5 / 7.5)
    rec = [_record("hardy.homogeneity_spot", "homogeneity", [16], c, ref, abs(c - ref) <= 1e-10)]
    a = hardy.canonical_atom(mesh.Region((0,), (Fraction(1, 16),)), 1, 6, 8)
    slope, consts = hardy.envelope_slope(a)
    rec.append(_record("hardy.envelope_slope", "two-bump envelope decay", consts, slope, [-1.3, -0.7],
                       -1.3 <= slope <= -0.7, certified=False))
    M, state, table = hardy.search_separation([(1.0, a)])
    ok = state is not None
    err = state.reconstruction_error() if ok else math.inf
    rec.append(_record("hardy.reconstruction", "factorization bookkeeping", [M], err, 1e-9, err <= 1e-9))
    rec.append(_record("hardy.contraction", "factorization contraction", {str(k): v for k, v in table.items()},
                       state.ratios if ok else None, 0.75, ok, certified=False))
    return rec


_SUITE_FUNCS = {"lorentz": suite_lorentz, "bml": suite_bml, "operators": suite_operators,
                "blocks": suite_blocks, "hardy": suite_hardy}


def cmd_verify(args) -> int:
    names = SUITES if args.suite == "all" else (args.suite,)
    with ThreadPoolExecutor(max_workers=_threads()) as pool:
        results = list(pool.map(lambda s: _SUITE_FUNCS[s](args.seed, args.corpus), names))
    records = [r for res in results for r in res]
    failed = [r["name"] for r in records if r["kind"] == "certified" and not r["passed"]]
    report = {"suite": args.suite, "seed": args.seed, "corpus": args.corpus,
              "records": records, "certified_failures": failed}
    _emit(report, args)
    return EXIT_FAILED if failed else EXIT_OK


# -- factorize ------------------------------------------------------------------


def cmd_factorize(args) -> int:
    n, L, J = _mesh_triple(args.mesh) or (1, 6, 8)
    if n != 1:
        raise InputError("factorization is one-dimensional")
    try:
        lo, hi = (Fraction(v) for v in args.atom.split(","))
        a = hardy.canonical_atom(mesh.Region((lo,), (hi,)), n, L, J)
    except (ValueError, ZeroDivisionError) as exc:
        raise InputError(f"bad --atom {args.atom!r}: {exc}") from None
    if args.M == "search":
        M, state, table = hardy.search_separation([(1.0, a)], rounds=args.rounds)
        if state is None:
            print(f"no separation met the target: {table}", file=sys.stderr)
            return EXIT_FAILED
    else:
        try:
            M = int(args.M)
        except ValueError:
            raise InputError(f"bad --M {args.M!r}") from None
        if M <= 10:
            raise InputError("M must exceed 10")
        try:
            state = hardy.factorize([(1.0, a)], M, args.rounds)
        except ValueError as exc:
            raise InputError(str(exc)) from None
    trace = state.to_dict()
    if args.format == "csv":
        rows = [{"round": i, "residual_l1": r.residual_l1, "certified_bound": r.certified_bound,
                 "reconstruction_error": r.reconstruction_error} for i, r in enumerate(state.rounds, 1)]
        _emit(trace, args, rows)
    else:
        _emit(trace, args)
    print(f"M = {state.M}", file=sys.stderr)
    for i, r in enumerate(state.rounds, 1):
        print(f"round {i}: residual L1 {r.residual_l1:.6g}  certified H1 bound {r.certified_bound:.6g}",
              file=sys.stderr)
    return EXIT_OK


# -- report ---------------------------------------------------------------------


def cmd_report(args) -> int:
    if args.envelope:
        a = hardy.canonical_atom(mesh.Region((0,), (Fraction(1, 16),)), 1, 6, 8)
        Ms = [int(v) for v in args.envelope.split(",")]
        try:
            slope, consts = hardy.envelope_slope(a, Ms)
        except ValueError as exc:
            raise InputError(str(exc)) from None
        rows = [{"M": M, "envelope_constant": c, "kind": "empirical"} for M, c in zip(Ms, consts)]
        _emit({"slope": slope, "records": rows}, args, rows)
        return EXIT_OK
    if not args.input:
        raise InputError("report needs an input file or --envelope")
    try:
        with open(args.input) as fh:
            data = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise InputError(f"cannot read {args.input}: {exc}") from None
    if "records" in data:
        rows = [{"name": r["name"], "kind": r["kind"], "passed": r["passed"],
                 "measured": json.dumps(r["measured"])} for r in data["records"]]
    elif "rounds" in data:
        rows = [{"round": i, "residual_l1": r["residual_l1"], "certified_bound": r["certified_bound"]}
                for i, r in enumerate(data["rounds"], 1)]
    else:
        raise InputError("unrecognised report input")
    if args.format == "csv":
        _emit({}, args, rows)
    else:
        _emit({"rows": rows}, args)
    return EXIT_OK


# -- entry point ----------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="bmllab", description=__doc__.splitlines()[0])
    sub = ap.add_subparsers(dest="cmd", required=True)

    def common(p):
        p.add_argument("--format", choices=("json", "csv"), default="json")
        p.add_argument("--out", help="write output here instead of stdout")

    def source(p):
        p.add_argument("--file", help="mesh function JSON")
        p.add_argument("--indicator", help="dyadic indicator, e.g. 'j=0' or 'j=1;m=0,1'")
        p.add_argument("--random", type=int, help="seeded random step function")
        p.add_argument("--mesh", help="n,L,J")

    p = sub.add_parser("norm", help="BML and Lorentz norms")
    source(p)
    common(p)
    p.add_argument("--exps", default="2,2,3,4", help="p,q,t,r (inf allowed)")
    p.add_argument("--lorentz", help="p,q: print only this Lorentz norm")
    p.set_defaults(func=cmd_norm)

    p = sub.add_parser("op", help="apply an operator")
    source(p)
    common(p)
    p.add_argument("operator", choices=("hilbert", "fractional", "maximal", "sharp", "commutator"))
    p.add_argument("--alpha", type=float, default=0.5)
    p.add_argument("--symbol", help="mesh JSON of the commutator symbol b")
    p.set_defaults(func=cmd_op)

    p = sub.add_parser("verify", help="run verification suites")
    common(p)
    p.add_argument("suite", choices=SUITES + ("all",))
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--corpus", type=int, default=20)
    p.set_defaults(func=cmd_verify)

    p = sub.add_parser("factorize", help="weak factorization of a canonical atom")
    common(p)
    p.add_argument("--M", default="search", help="separation ratio (> 10) or 'search'")
    p.add_argument("--rounds", type=int, default=3)
    p.add_argument("--atom", default="0,1/16", help="atom interval lo,hi")
    p.add_argument("--mesh", help="n,L,J (default 1,6,8)")
    p.set_defaults(func=cmd_factorize)

    p = sub.add_parser("report", help="summarise a verify/factorize JSON or tabulate envelopes")
    common(p)
    p.add_argument("input", nargs="?")
    p.add_argument("--envelope", help="comma-separated M values for the envelope table")
    p.set_defaults(func=cmd_report)
    return ap


def main(argv=None) -> int:
    ap = build_parser()
    try:
        args = ap.parse_args(argv)
    except SystemExit as exc:
        return EXIT_INPUT if exc.code else EXIT_OK
    if getattr(args, "rounds", 0) < 0:
        print("error: rounds must be nonnegative", file=sys.stderr)
        return EXIT_INPUT
    try:
        return args.func(args)
    except InputError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except DivergenceError as exc:
        print(str(exc), file=sys.stderr)
        return EXIT_DIVERGENT


if __name__ == "__main__":
    sys.exit(main())
