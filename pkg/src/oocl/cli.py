"""``oocl`` command-line interface.

Exit codes: 0 success, 2 usage or input error, 3 convergence failure.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from .bigmat import attach_matrix, setup_matrix
from .cv import cv_fit, cv_summary
from .errors import ConvergenceError, OoclError
from .oracle import SynthSpec, gen_synth, screen_bench, validate_suite, write_bench
from .screen import POLICIES, rejection_stats, write_rejection_csv
from .solver import PREDICT_KINDS, FitConfig, PathFit, fit, predict

log = logging.getLogger("oocl")

EXIT_OK = 0
EXIT_INPUT = 2
EXIT_CONVERGENCE = 3

# named benchmark cases: (n, p, lambda_min_ratio)
BENCH_CASES = {
    "appendix1": (1000, 20000, 0.1),
    "appendix2": (1000, 20000, 0.5),
}


def read_response(path) -> np.ndarray:
    """One numeric value per line; blank lines are ignored."""
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"response file not found: {path}")
    values = []
    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            text = line.strip()
            if not text:
                continue
            try:
                values.append(float(text))
            except ValueError:
                raise ValueError(f"{path}:{lineno}: not a number: {text!r}") from None
    return np.array(values)


def _attach(path):
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"descriptor not found: {path}")
    return attach_matrix(path)


def _fit_config(args) -> FitConfig:
    return FitConfig(
        family=args.family,
        alpha=args.alpha,
        n_lambda=args.nlambda,
        lambda_min_ratio=args.lambda_min_ratio,
        lambda_spacing=args.lambda_spacing,
        screen_policy=args.screen,
        tol=args.tol,
        max_iter=args.max_iter,
        workers=args.ncores,
    )


def _load_xy(args):
    m = _attach(args.desc)
    y = read_response(args.response)
    if y.shape[0] != m.n_rows:
        raise ValueError(f"response has {y.shape[0]} values, matrix has {m.n_rows} rows")
    return m, y


# ---------------------------------------------------------------------------
# subcommands


def cmd_setup(args) -> int:
    src = Path(args.csv)
    if not src.exists():
        raise FileNotFoundError(f"CSV file not found: {src}")
    desc = setup_matrix(src, args.out, delimiter=args.delimiter)
    desc_path = Path(f"{args.out}.desc")
    print(f"{desc_path}  {desc.n_rows} x {desc.n_cols}")
    return EXIT_OK


def cmd_fit(args) -> int:
    m, y = _load_xy(args)
    f = fit(m, y, _fit_config(args))
    coef_path, meta_path = f.save(args.out)
    print(f"{f.family} path, {len(f.lambdas)} lambdas, policy {f.policy}")
    print(f"lambda_max = {f.lambda_max!r}")
    print(f"wrote {coef_path} and {meta_path}")
    return EXIT_OK


def cmd_cv(args) -> int:
    m, y = _load_xy(args)
    cfg = _fit_config(args)
    cvf = cv_fit(m, y, cfg, n_folds=args.folds, seed=args.seed,
                 parallel_folds=args.parallel_folds, workers=args.ncores)
    paths = cvf.save(args.out)
    print(cv_summary(cvf))
    print(f"wrote {', '.join(str(p) for p in paths)}")
    return EXIT_OK


def _default_lambda(prefix):
    # a CV result next to the fit selects lambda_min
    cv_meta = Path(f"{prefix}.cv.json")
    if cv_meta.exists():
        return json.loads(cv_meta.read_text())["lambda_min"]
    return None


def _load_fit(prefix) -> PathFit:
    if not Path(f"{prefix}.fit.json").exists():
        raise FileNotFoundError(f"no fit found at {prefix}.fit.json")
    return PathFit.load(prefix)


def cmd_predict(args) -> int:
    f = _load_fit(args.fit)
    lam = args.lam if args.lam is not None else _default_lambda(args.fit)
    x = _attach(args.matrix) if args.matrix else None
    out = predict(f, x, lam=lam, kind=args.type)
    if args.type in ("link", "response", "class"):
        out = np.asarray(out)
        fmt = "%d" if args.type == "class" else "%.17g"
        target = args.out if args.out else sys.stdout
        np.savetxt(target, out.reshape(out.shape[0], -1), fmt=fmt, delimiter=",")
    elif args.type == "nvars":
        vals = np.atleast_1d(out)
        print("\n".join(str(int(v)) for v in vals))
    elif args.type == "vars":
        for d in ([out] if isinstance(out, dict) else out):
            print(",".join(d))
    else:
        _print_coefs(f, lam)
    return EXIT_OK


def _print_coefs(f: PathFit, lam):
    ks = range(len(f.lambdas)) if lam is None else [f.lambda_index(lam)]
    names = f.col_names or tuple(f"V{j + 1}" for j in range(f.p))
    for k in ks:
        if lam is None:
            print(f"# lambda = {f.lambdas[k]!r}")
        print(f"{'(Intercept)':<14s} {f.intercepts[k]: .10g}")
        col = f.coefs[:, [k]].tocoo()
        order = np.argsort(col.row)
        for j, v in zip(col.row[order], col.data[order]):
            print(f"{names[j]:<14s} {v: .10g}")


def cmd_coef(args) -> int:
    f = _load_fit(args.fit)
    lam = args.lam if args.lam is not None else _default_lambda(args.fit)
    if lam is None and not args.all:
        lam = float(f.lambdas[-1])
    _print_coefs(f, lam)
    return EXIT_OK


def cmd_validate(args) -> int:
    seeds = range(args.seed, args.seed + args.seeds)
    cfg = FitConfig(family=args.family, tol=args.tol, workers=args.ncores)
    report = validate_suite(args.n, args.p, seeds, family=args.family, cfg=cfg)
    print(report.text(f"RD ({args.family}, n={args.n}, p={args.p}, {args.seeds} seeds)"))
    print(f"max |RD| = {report.max_abs:.3e}")
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        report.write_csv(out / "rd.csv")
        print(f"wrote {out / 'rd.csv'}")
    return EXIT_OK


def cmd_bench(args) -> int:
    out = Path(args.out or "bench")
    if args.rejection:
        n, p = args.n or 1000, args.p or 5000
        m, y, _ = gen_synth(SynthSpec(n=n, p=p, seed=args.seed))
        cfg = FitConfig(screen_policy="hybrid", diagnostics=True, workers=args.ncores,
                        n_lambda=args.nlambda, lambda_min_ratio=args.lambda_min_ratio)
        rows = rejection_stats(fit(m, y, cfg))
        out.mkdir(parents=True, exist_ok=True)
        path = out / "rejection.csv"
        write_rejection_csv(rows, path)
        print(f"wrote {path}")
        return EXIT_OK
    case = args.case or "appendix2"
    n0, p0, ratio = BENCH_CASES[case]
    n, p = args.n or n0, args.p or p0
    m, y, _ = gen_synth(SynthSpec(n=n, p=p, seed=args.seed))
    rows = screen_bench(m, y, ("ssr", "hybrid"), lambda_min_ratio=ratio,
                        n_lambda=args.nlambda, repeats=args.repeats, workers=args.ncores)
    scans, summary = write_bench(rows, out, label=case)
    print(summary.read_text(), end="")
    print(f"wrote {scans} and {summary}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# parser


def _positive_int(text):
    v = int(text)
    if v < 1:
        raise argparse.ArgumentTypeError(f"expected a positive integer, got {text}")
    return v


def _add_fit_flags(p):
    p.add_argument("--family", choices=("gaussian", "binomial"), default="gaussian")
    p.add_argument("--alpha", type=float, default=1.0, help="elastic-net mixing, 1 = lasso")
    p.add_argument("--nlambda", type=_positive_int, default=100)
    p.add_argument("--lambda-min-ratio", type=float, default=0.1)
    p.add_argument("--lambda-spacing", choices=("linear", "log"), default="linear")
    p.add_argument("--screen", choices=POLICIES, default=None,
                   help="screening policy (default: hybrid for the lasso, else ssr)")
    p.add_argument("--tol", type=float, default=1e-7)
    p.add_argument("--max-iter", type=_positive_int, default=10000)
    p.add_argument("--ncores", type=_positive_int, default=1)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="oocl", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("setup", help="convert a CSV file to the binary matrix format")
    p.add_argument("csv")
    p.add_argument("--out", required=True, help="output prefix (<out>.bin, <out>.desc)")
    p.add_argument("--delimiter", default=",")
    p.set_defaults(func=cmd_setup)

    p = sub.add_parser("fit", help="fit a regularization path")
    p.add_argument("desc", help="matrix descriptor")
    p.add_argument("response", help="response file, one value per line")
    _add_fit_flags(p)
    p.add_argument("--out", default="fit", help="output prefix")
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("cv", help="k-fold cross-validation")
    p.add_argument("desc")
    p.add_argument("response")
    _add_fit_flags(p)
    p.add_argument("--folds", type=_positive_int, default=10)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--parallel-folds", action="store_true")
    p.add_argument("--out", default="cvfit")
    p.set_defaults(func=cmd_cv)

    p = sub.add_parser("predict", help="predictions from a saved fit")
    p.add_argument("fit", help="prefix the fit was saved under")
    p.add_argument("--matrix", help="descriptor of the rows to predict")
    p.add_argument("--lambda", dest="lam", type=float, default=None)
    p.add_argument("--type", choices=PREDICT_KINDS, default="link")
    p.add_argument("--out", help="CSV file for row-wise predictions (default stdout)")
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("coef", help="print intercept and nonzero coefficients")
    p.add_argument("fit")
    p.add_argument("--lambda", dest="lam", type=float, default=None)
    p.add_argument("--all", action="store_true", help="every lambda on the path")
    p.set_defaults(func=cmd_coef)

    p = sub.add_parser("validate", help="RD against the reference solver on synthetic data")
    p.add_argument("--n", type=_positive_int, default=50)
    p.add_argument("--p", type=_positive_int, default=200)
    p.add_argument("--seeds", type=_positive_int, default=20)
    p.add_argument("--seed", type=int, default=0, help="first seed")
    p.add_argument("--family", choices=("gaussian", "binomial"), default="gaussian")
    p.add_argument("--tol", type=float, default=1e-7)
    p.add_argument("--ncores", type=_positive_int, default=1)
    p.add_argument("--out")
    p.set_defaults(func=cmd_validate)

    p = sub.add_parser("bench", help="screening benchmarks on synthetic data")
    p.add_argument("--case", choices=sorted(BENCH_CASES))
    p.add_argument("--rejection", action="store_true", help="per-lambda rejection table")
    p.add_argument("--n", type=_positive_int)
    p.add_argument("--p", type=_positive_int)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--nlambda", type=_positive_int, default=100)
    p.add_argument("--lambda-min-ratio", type=float, default=0.1)
    p.add_argument("--repeats", type=_positive_int, default=5)
    p.add_argument("--ncores", type=_positive_int, default=1)
    p.add_argument("--out")
    p.set_defaults(func=cmd_bench)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except ConvergenceError as exc:
        print(f"oocl: convergence failure: {exc}", file=sys.stderr)
        return EXIT_CONVERGENCE
    except (OoclError, OSError, ValueError, IndexError) as exc:
        print(f"oocl: error: {exc}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
