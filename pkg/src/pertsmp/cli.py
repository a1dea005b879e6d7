"""Command-line front end: ``pertsmp {validate,expand,verify,simulate,oracle}``.

Exit codes: 0 success, 1 condition or verification failure, 2 usage error,
3 numerical fault.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import math
import sys
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from . import __version__, corpus, expansion, moments, renewal
from .model import ModelError, load_kernel, validate_model
from .series import SingularSeriesError
from .simulator import SimConfig, simulate

EXIT_OK, EXIT_FAIL, EXIT_USAGE, EXIT_NUMERIC = 0, 1, 2, 3
Z_LIMIT = 4.0


class NumericalFault(RuntimeError):
    pass


def _eps_list(text: str) -> list[float]:
    try:
        vals = [float(x) for x in text.split(",") if x.strip()]
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"bad eps list {text!r}") from exc
    if not vals:
        raise argparse.ArgumentTypeError("empty eps list")
    return vals


def _u64(text: str) -> int:
    v = int(text, 0)
    if not 0 <= v < 2**64:
        raise argparse.ArgumentTypeError("seed must be an unsigned 64-bit integer")
    return v


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--model", required=True, help="model JSON file, or the name of a bundled model")
    common.add_argument("--format", choices=("json", "csv", "table"), default="table")
    common.add_argument("--out", type=Path, help="write the report here instead of stdout")

    p = argparse.ArgumentParser(prog="pertsmp", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = p.add_subparsers(dest="command", required=True)

    sub.add_parser("validate", parents=[common], help="check the standing conditions")

    e = sub.add_parser("expand", parents=[common], help="root expansion and limiting constants")
    e.add_argument("--order", type=int, default=3)
    e.add_argument("--state", type=int, default=1, help="reference state for the coefficient table")
    e.add_argument("--rational", action="store_true", help="exact rational arithmetic")

    v = sub.add_parser("verify", parents=[common], help="compare predictions with the exact oracle")
    v.add_argument("--eps", type=_eps_list, required=True)
    v.add_argument("--r", type=int, default=1)
    v.add_argument("--lambda", dest="lam", type=float, default=1.0)
    v.add_argument("--order", type=int, help="expansion order (default: r)")
    v.add_argument("--horizon", type=int, default=50, help="n used for eps = 0 rows")
    v.add_argument("--tol", type=float, default=0.05, help="relative error allowed at the smallest eps")

    s = sub.add_parser("simulate", parents=[common], help="Monte Carlo estimate against the oracle")
    s.add_argument("--eps", type=_eps_list, required=True)
    s.add_argument("--horizon", type=int, default=10)
    s.add_argument("--trials", type=int, default=10**5)
    s.add_argument("--seed", type=_u64, default=0)
    s.add_argument("--state", type=int, default=1)

    o = sub.add_parser("oracle", parents=[common], help="exact renewal arrays")
    o.add_argument("--eps", type=_eps_list, required=True)
    o.add_argument("--horizon", type=int, default=None)
    o.add_argument("--state", type=int, default=1)
    return p


def _load(name: str):
    path = Path(name)
    if not path.exists() and name in corpus.names():
        return load_kernel(corpus.document(name))
    return load_kernel(path)


def _manifest(args, params: dict) -> dict:
    return {
        "command": args.command,
        "model": args.model,
        "parameters": params,
        "version": __version__,
        "timestamp": datetime.now(timezone.utc).isoformat(timespec="seconds"),
    }


def _jsonable(x):
    if isinstance(x, dict):
        return {str(k): _jsonable(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_jsonable(v) for v in x]
    if isinstance(x, np.ndarray):
        return _jsonable(x.tolist())
    if isinstance(x, (np.bool_, bool)):
        return bool(x)
    if isinstance(x, (np.integer,)):
        return int(x)
    if isinstance(x, (np.floating, float)):
        return float(x) if math.isfinite(x) else str(float(x))
    return x


def _fmt(x) -> str:
    if isinstance(x, (float, np.floating)):
        return f"{x:.6g}"
    return str(x)


def _table(header: list, rows: list) -> str:
    cells = [[_fmt(c) for c in r] for r in rows]
    widths = [max(len(str(h)), *(len(r[i]) for r in cells)) if cells else len(str(h)) for i, h in enumerate(header)]
    lines = ["  ".join(str(h).rjust(w) for h, w in zip(header, widths))]
    lines += ["  ".join(c.rjust(w) for c, w in zip(r, widths)) for r in cells]
    return "\n".join(lines)


def _csv(manifest: dict, header: list, rows: list) -> str:
    buf = io.StringIO()
    for key, val in manifest.items():
        buf.write(f"# {key}: {json.dumps(_jsonable(val))}\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for r in rows:
        w.writerow([f"{c:.17g}" if isinstance(c, (float, np.floating)) else c for c in r])
    return buf.getvalue()


def _emit(args, manifest: dict, payload: dict, header: list, rows: list, summary: list[str]) -> None:
    if args.format == "json":
        text = json.dumps(_jsonable({"manifest": manifest, **payload}), indent=2) + "\n"
    elif args.format == "csv":
        text = _csv(manifest, header, rows)
    else:
        head = [f"pertsmp {manifest['command']}  model={manifest['model']}  version={manifest['version']}"]
        head += [f"parameters: {json.dumps(_jsonable(manifest['parameters']))}", ""]
        text = "\n".join(head + summary + ([""] + [_table(header, rows)] if rows else [])) + "\n"
    if args.out:
        args.out.write_text(text)
    else:
        sys.stdout.write(text)


def cmd_validate(args) -> int:
    kernel = _load(args.model)
    report = validate_model(kernel)
    header = ["state", "period", "abscissa"]
    rows = [[j, report.periods.get(j), report.rho_abscissa.get(j, float("nan"))] for j in range(1, kernel.num_states + 1)]
    verdict = "all conditions hold" if report.passed else f"failed conditions: {', '.join(report.failed_conditions())}"
    _emit(args, _manifest(args, {}), {"report": report.to_dict(), "passed": report.passed}, header, rows, [verdict, *report.messages])
    return EXIT_OK if report.passed else EXIT_FAIL


def cmd_expand(args) -> int:
    if args.order < 0:
        raise ValueError("--order must be >= 0")
    kernel = _load(args.model)
    arith = "exact" if args.rational else "float"
    rx = expansion.expand(kernel, args.order, args.state, arith)
    params = {"order": args.order, "state": args.state, "rational": args.rational}
    rows = [[n, float(c), str(c) if arith == "exact" else ""] for n, c in enumerate(rx.c, start=1)]
    summary = [f"regime: {rx.regime}", f"rho0 = {rx.rho0:.17g}", "pi_tilde:"]
    summary += ["  " + "  ".join(f"{float(x):.6g}" for x in row) for row in rx.pi_tilde]
    _emit(args, _manifest(args, params), {"expansion": rx.to_dict()}, ["n", "c_n", "exact"], rows, summary)
    return EXIT_OK


def cmd_verify(args) -> int:
    kernel = _load(args.model)
    order = args.order if args.order is not None else args.r
    if not 1 <= args.r <= order:
        raise ValueError("need 1 <= r <= order")
    rx = expansion.expand(kernel, order)
    rows, errors = [], {}
    for eps in args.eps:
        n = args.horizon if eps == 0 else math.floor(args.lam / eps**args.r)
        if n > renewal.HORIZON_CAP:
            raise NumericalFault(f"horizon n={n} for eps={eps} exceeds the oracle cap {renewal.HORIZON_CAP}")
        worst = 0.0
        for i in range(1, kernel.num_states + 1):
            sol = renewal.renewal_solve(kernel, eps, i, max(n, kernel.max_time, 1))
            for j in range(1, kernel.num_states + 1):
                pred = expansion.asymptotic_predict(rx, i, j, eps, n, args.r)
                oracle = float(sol.P[n, j - 1])
                ratio = oracle / pred if pred > 0 else float("nan")
                rows.append([eps, n, i, j, pred, oracle, ratio])
                worst = max(worst, abs(ratio - 1) if math.isfinite(ratio) else math.inf)
        errors[eps] = worst
    ordered = [errors[e] for e in sorted(errors, reverse=True)]
    monotone = all(b <= a * (1 + 1e-9) + 1e-15 for a, b in zip(ordered, ordered[1:]))
    passed = monotone and ordered[-1] <= args.tol
    params = {"eps": args.eps, "r": args.r, "lambda": args.lam, "order": order, "horizon": args.horizon, "tol": args.tol}
    summary = [f"eps={e:g}: max |ratio - 1| = {errors[e]:.6g}" for e in sorted(errors, reverse=True)]
    summary.append(f"monotone: {monotone}; verdict: {'pass' if passed else 'fail'}")
    payload = {
        "rows": [dict(zip(["eps", "n", "i", "j", "predicted", "oracle", "ratio"], r)) for r in rows],
        "max_relative_error": {str(e): v for e, v in errors.items()},
        "monotone": monotone,
        "passed": passed,
        "expansion": rx.to_dict(),
    }
    _emit(args, _manifest(args, params), payload, ["eps", "n", "i", "j", "predicted", "oracle", "ratio"], rows, summary)
    return EXIT_OK if passed else EXIT_FAIL


def cmd_simulate(args) -> int:
    kernel = _load(args.model)
    rows, ok, results = [], True, []
    for eps in args.eps:
        cfg = SimConfig(eps=eps, i=args.state, n=args.horizon, trials=args.trials, seed=args.seed)
        est = simulate(kernel, cfg)
        sol = renewal.renewal_solve(kernel, eps, args.state, max(args.horizon, kernel.max_time, 1))
        exact = sol.P[args.horizon]
        z = est.z_scores(exact)
        ok = ok and bool(np.all(np.abs(z) <= Z_LIMIT))
        for j in range(1, kernel.num_states + 1):
            rows.append([eps, args.horizon, j, float(est.P[j - 1]), float(est.se[j - 1]), float(exact[j - 1]), float(z[j - 1])])
        results.append({"estimate": est.to_dict(), "exact": exact, "z": z})
    params = {"eps": args.eps, "horizon": args.horizon, "trials": args.trials, "seed": args.seed, "state": args.state}
    summary = [f"seed: {args.seed}", f"all estimates within {Z_LIMIT:g} SE: {ok}"]
    _emit(args, _manifest(args, params), {"results": results, "passed": ok}, ["eps", "n", "j", "estimate", "se", "exact", "z"], rows, summary)
    return EXIT_OK if ok else EXIT_FAIL


def cmd_oracle(args) -> int:
    kernel = _load(args.model)
    if len(args.eps) != 1:
        raise ValueError("oracle takes a single eps")
    eps = args.eps[0]
    horizon = args.horizon if args.horizon is not None else renewal.default_horizon(kernel)
    sol = renewal.renewal_solve(kernel, eps, args.state, horizon)
    gap = sol.route_gap
    mass = float(np.max(np.abs(sol.P_direct.sum(axis=1) + sol.absorbed - 1)))
    params = {"eps": eps, "horizon": horizon, "state": args.state}
    summary = [f"renewal vs direct route: max gap {gap:.3g}", f"mass defect: {mass:.3g}", f"tail bound: {sol.tail_bound:.3g}"]
    payload = {"columns": sol.columns(), "rows": sol.rows(), "route_gap": gap, "mass_defect": mass, "tail_bound": sol.tail_bound}
    _emit(args, _manifest(args, params), payload, sol.columns(), sol.rows(), summary)
    if gap > 1e-12 or mass > 1e-12:
        raise NumericalFault(f"oracle self-check failed: route gap {gap:.3g}, mass defect {mass:.3g}")
    return EXIT_OK


COMMANDS = {
    "validate": cmd_validate,
    "expand": cmd_expand,
    "verify": cmd_verify,
    "simulate": cmd_simulate,
    "oracle": cmd_oracle,
}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return COMMANDS[args.command](args)
    except (expansion.RootNotFound, moments.FinitenessError) as exc:
        if isinstance(exc, expansion.IrrationalRootError):
            print(f"error: {exc}", file=sys.stderr)
            return EXIT_USAGE
        print(f"condition failure: {exc}", file=sys.stderr)
        return EXIT_FAIL
    except (NumericalFault, expansion.ConsistencyError, SingularSeriesError, np.linalg.LinAlgError, FloatingPointError) as exc:
        print(f"numerical fault: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (ModelError, renewal.HorizonError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
