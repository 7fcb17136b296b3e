"""Command-line frontend.

Exit codes: 0 ok, 1 usage error, 2 invalid input, 3 verification failed.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .decomposition import decompose, theorem_terms
from .errors import ObmLabError
from .estimator import obm_direct, obm_quadratic, relative_gap
from .lab import (
    ExperimentSpec,
    InsufficientGrid,
    fit_rate,
    run_moment_experiment,
    slopes_csv,
)
from .markov import certify_mixing, dump_kernel, kernel_library, load_kernel, sample_path, stationary
from .poisson import (
    g_sup_bound,
    load_function,
    sigma2_by_autocovariance,
    sigma2_by_martingale,
    sigma2_by_poisson_identity,
    solve_poisson,
    solve_poisson_exact,
)
from .weights import BatchGeometry, ObmWeights, band_rows

log = logging.getLogger("obmlab")

EXIT_OK, EXIT_USAGE, EXIT_INPUT, EXIT_VERIFY = 0, 1, 2, 3
GAP_TOL = 1e-8
EXACT_MAX_N = 64


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def _u64(text: str) -> int:
    v = int(text, 0)
    if not 0 <= v < 2 ** 64:
        raise argparse.ArgumentTypeError("seed must be an unsigned 64-bit integer")
    return v


def _floats(text: str) -> list[float]:
    return [float(x) for x in text.replace(",", " ").split()]


def _ints(text: str) -> list[int]:
    return [int(x) for x in text.replace(",", " ").split()]


def _param(text: str):
    key, _, value = text.partition("=")
    if not _:
        raise argparse.ArgumentTypeError("parameters are key=value")
    try:
        return key, json.loads(value)
    except json.JSONDecodeError:
        return key, value


def _sha(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def write_manifest(args, outputs: list[Path], extra: dict | None = None) -> Path | None:
    """Write ``<first output>.manifest.json`` describing inputs, seeds and outputs."""
    if not outputs:
        return None
    inputs = {}
    for key in ("kernel", "f", "spec"):
        p = getattr(args, key, None)
        if p:
            inputs[key] = {"path": str(p), "sha256": _sha(Path(p))}
    manifest = {
        "tool": "obmlab",
        "version": __version__,
        "subcommand": args.command,
        "argv": args.argv,
        "inputs": inputs,
        "seed": getattr(args, "seed", None),
        "outputs": {str(p): _sha(p) for p in outputs if p.exists()},
    }
    manifest.update(extra or {})
    target = outputs[0].with_name(outputs[0].name + ".manifest.json")
    target.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return target


def _emit(obj, out: str | None) -> list[Path]:
    text = json.dumps(obj, indent=2) + "\n"
    if out:
        Path(out).write_text(text)
        return [Path(out)]
    sys.stdout.write(text)
    return []


def _kernel_and_f(args):
    if not args.kernel:
        raise UsageError("--kernel is required")
    kernel = load_kernel(args.kernel)
    pi = stationary(kernel)
    if args.f:
        f = load_function(args.f, pi)
    else:
        raise UsageError("--f is required")
    return kernel, pi, f


def _initial(arg: str | None, pi, n_states: int) -> np.ndarray:
    if arg in (None, "stationary"):
        return pi.probs
    if arg.startswith("point:"):
        xi = np.zeros(n_states)
        xi[int(arg.split(":", 1)[1])] = 1.0
        return xi
    return np.asarray(_floats(arg))


# ---------------------------------------------------------------------------


def cmd_kernel(args) -> int:
    if args.kernel:
        kernel = load_kernel(args.kernel)
    elif args.name:
        kernel = kernel_library(args.name, dict(args.param or []))
    else:
        raise UsageError("give --kernel PATH or --name NAME")
    pi = stationary(kernel)
    cert = certify_mixing(kernel, args.cap)
    summary = kernel.to_json()
    summary.update(pi=pi.probs.tolist(), stationary_residual=pi.residual, t_mix=cert.t_mix,
                   contraction_profile=list(cert.contraction_profile))
    outputs = []
    if args.out:
        dump_kernel(kernel, args.out)
        outputs.append(Path(args.out))
    sys.stdout.write(json.dumps(summary, indent=2) + "\n")
    write_manifest(args, outputs)
    return EXIT_OK


def cmd_poisson(args) -> int:
    kernel, pi, f = _kernel_and_f(args)
    sol = solve_poisson(kernel, pi, f)
    t = certify_mixing(kernel).t_mix
    out = {
        "kernel": kernel.label,
        "pi": pi.probs.tolist(),
        "f_centred": f.values.tolist(),
        "f_shift": f.shift,
        "g": sol.g.tolist(),
        "Pg": sol.Pg.tolist(),
        "g_hat": sol.g_hat.tolist(),
        "sigma2_inf": {
            "conditional_variance": sigma2_by_martingale(kernel, pi, f, sol),
            "autocovariance": sigma2_by_autocovariance(kernel, pi, f, t_mix=t),
            "poisson_identity": sigma2_by_poisson_identity(pi, sol),
        },
        "poisson_residual": sol.residual,
        "t_mix": t,
        "g_sup": float(np.max(np.abs(sol.g))),
        "g_sup_bound": g_sup_bound(t, f.sup),
    }
    write_manifest(args, _emit(out, args.out))
    return EXIT_OK


def cmd_weights(args) -> int:
    if args.exact and args.n > EXACT_MAX_N:
        raise UsageError(f"--exact supports n <= {EXACT_MAX_N}")
    g = BatchGeometry(args.n, args.bn)
    W = ObmWeights(g, exact=args.exact)
    outputs = []
    if args.dump_band:
        with open(args.dump_band, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["l", "j", "w", "d10", "d01", "d11"])
            for row in band_rows(W):
                w.writerow([row[0], row[1]] + [str(x) if args.exact else repr(float(x)) for x in row[2:]])
        outputs.append(Path(args.dump_band))
    diag = W.diagonal()
    info = {"n": g.n, "b_n": g.b, "batches": g.m, "theorem_regime": g.theorem_regime,
            "trace": str(sum(diag.tolist())) if args.exact else float(np.sum(diag))}
    sys.stdout.write(json.dumps(info) + "\n")
    write_manifest(args, outputs)
    return EXIT_OK


def cmd_decompose(args) -> int:
    kernel, pi, f = _kernel_and_f(args)
    if args.exact and args.n > EXACT_MAX_N:
        raise UsageError(f"--exact supports n <= {EXACT_MAX_N}")
    g = BatchGeometry(args.n, args.bn if args.bn else BatchGeometry.default(args.n).b)
    xi = _initial(args.initial, pi, kernel.n_states)
    path = sample_path(kernel, xi, args.n, args.seed)
    if args.exact:
        poisson = solve_poisson_exact(kernel, f.raw)
        led = decompose(path, f, ObmWeights(g, exact=True), poisson)
        out = led.to_json()
    else:
        sol = solve_poisson(kernel, pi, f)
        led = decompose(path, f, ObmWeights(g), sol)
        out = led.to_json()
        tt = theorem_terms(led, sol.sigma2_inf)
        out["theorem_terms"] = {"D1": tt.D1, "D11": tt.D11, "D12": tt.D12, "D2": tt.D2,
                                "split_residual": tt.split_residual}
        out["sigma2_inf"] = sol.sigma2_inf
    out.update(b_n=g.b, seed=args.seed, kernel=kernel.label)
    write_manifest(args, _emit(out, args.out))
    return EXIT_OK


def cmd_estimate(args) -> int:
    kernel, pi, f = _kernel_and_f(args)
    g = BatchGeometry(args.n, args.bn if args.bn else BatchGeometry.default(args.n).b)
    path = sample_path(kernel, _initial(args.initial, pi, kernel.n_states), args.n, args.seed)
    sol = solve_poisson(kernel, pi, f)
    out = {"n": g.n, "b_n": g.b, "seed": args.seed, "sigma2_inf": sol.sigma2_inf}
    code = EXIT_OK
    if args.method in ("direct", "both"):
        out["direct"] = obm_direct(path, f, g).value
    if args.method in ("quadratic", "both"):
        q = obm_quadratic(path, f, g)
        out["quadratic"] = q.value
        out["components"] = dict(zip(("quad_part", "u_part", "v_part"), q.components))
    if args.method == "both":
        gap = relative_gap(out["direct"], out["quadratic"])
        out["relative_gap"] = gap
        if gap > GAP_TOL:
            print(f"obmlab estimate: relative gap {gap:.3e} exceeds {GAP_TOL:g}", file=sys.stderr)
            code = EXIT_VERIFY
    out["error"] = out.get("direct", out.get("quadratic")) - sol.sigma2_inf
    write_manifest(args, _emit(out, args.out))
    return code


def _spec_from_flags(args) -> ExperimentSpec:
    kernel = load_kernel(args.kernel)
    data = json.loads(Path(args.f).read_text())
    ns = args.n_list or [2 ** k for k in range(10, 17)]
    grid = [(n, args.bn if args.bn else BatchGeometry.default(n).b) for n in ns]
    return ExperimentSpec(kernel, data["values"], grid, p_list=args.p or [2, 4], replications=args.reps,
                          base_seed=args.seed, kernel_ref=args.kernel, f_ref=args.f)


def cmd_sweep(args) -> int:
    if args.spec:
        spec = ExperimentSpec.load(args.spec)
    elif args.kernel and args.f:
        spec = _spec_from_flags(args)
    else:
        raise UsageError("sweep needs --spec or both --kernel and --f")
    report = run_moment_experiment(spec, workers=args.workers)
    out = Path(args.out)
    report.to_csv(out)
    outputs = [out]
    fits = []
    for p in spec.p_list:
        for axis in ("n_with_bn_sqrt_n", "bn_at_fixed_n"):
            try:
                fit = fit_rate(report, axis, p=p)
            except InsufficientGrid:
                continue
            fits.append(fit)
    slopes = Path(args.slopes) if args.slopes else out.with_name(out.stem + "_slopes.csv")
    slopes_csv(fits, slopes)
    outputs.append(slopes)
    if not args.no_plot:
        from .plotting import plot_moments

        fig = Path(args.plot) if args.plot else out.with_suffix(".png")
        plot_moments(report, fits, fig, title=spec.kernel.label)
        outputs.append(fig)
    write_manifest(args, outputs, {"base_seed": spec.base_seed, "replications": spec.replications,
                                   "grid": spec.grid, "p_list": spec.p_list,
                                   "sigma2_inf": report.sigma2_inf, "t_mix": report.t_mix})
    for fit in fits:
        print(f"{fit.label}: slope {fit.slope:.4f} [{fit.ci_lo:.4f}, {fit.ci_hi:.4f}]")
    return EXIT_OK


def cmd_verify(args) -> int:
    from .verification import run_suite

    results = run_suite(quick=args.quick)
    for r in results:
        print(r.line())
    failed = [r for r in results if not r.passed]
    if args.out:
        Path(args.out).write_text(json.dumps([r.__dict__ for r in results], indent=2) + "\n")
        write_manifest(args, [Path(args.out)])
    if failed:
        print(f"obmlab verify: {len(failed)} check(s) failed", file=sys.stderr)
        return EXIT_VERIFY
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--kernel", help="kernel JSON file {label, n_states, rows}")
    common.add_argument("--f", help="function JSON file {values: [...]}")
    common.add_argument("--seed", type=_u64, default=0)
    common.add_argument("--out", help="output path (stdout when omitted)")
    common.add_argument("--exact", action="store_true", help=f"rational arithmetic (n <= {EXACT_MAX_N})")
    common.add_argument("-v", "--verbose", action="count", default=0)

    p = _Parser(prog="obmlab", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=f"obmlab {__version__}")
    sub = p.add_subparsers(dest="command", parser_class=_Parser)

    k = sub.add_parser("kernel", parents=[common], help="validate or build a kernel; report pi and t_mix")
    k.add_argument("--name", help="library kernel: two_state, lazy_cycle, dirichlet_random, iid")
    k.add_argument("--param", type=_param, action="append", help="library parameter key=value")
    k.add_argument("--cap", type=int, default=None, help="mixing search cap (default 10 n_states^2)")
    k.set_defaults(func=cmd_kernel)

    ps = sub.add_parser("poisson", parents=[common], help="solve the Poisson equation and report sigma^2")
    ps.set_defaults(func=cmd_poisson)

    w = sub.add_parser("weights", parents=[common], help="OBM weight band")
    w.add_argument("--n", type=int, required=True)
    w.add_argument("--bn", type=int, required=True)
    w.add_argument("--dump-band", help="CSV of (l, j, w, d10, d01, d11) over the nonzero band")
    w.set_defaults(func=cmd_weights)

    for name, func, hlp in (("decompose", cmd_decompose, "ledger of all decomposition terms for one path"),
                            ("estimate", cmd_estimate, "OBM estimate for one path")):
        s = sub.add_parser(name, parents=[common], help=hlp)
        s.add_argument("--n", type=int, required=True)
        s.add_argument("--bn", type=int, default=None, help="batch length (default ceil(sqrt(n)))")
        s.add_argument("--initial", default=None, help="'stationary', 'point:K' or a probability list")
        if name == "estimate":
            s.add_argument("--method", choices=("direct", "quadratic", "both"), default="direct")
        s.set_defaults(func=func)

    sw = sub.add_parser("sweep", parents=[common], help="Monte Carlo moment sweep to CSV (+ figure)")
    sw.add_argument("--spec", help="experiment spec JSON")
    sw.add_argument("--n", dest="n_list", type=_ints, help="list of n (with --kernel/--f)")
    sw.add_argument("--bn", type=int, default=None)
    sw.add_argument("--p", type=_floats, help="moment orders, e.g. 2,4")
    sw.add_argument("--reps", type=int, default=500)
    sw.add_argument("--workers", type=int, default=None, help="threads (default $OBMLAB_WORKERS or 1)")
    sw.add_argument("--slopes", help="slope-fit CSV (default <out>_slopes.csv)")
    sw.add_argument("--plot", help="figure path (default <out>.png)")
    sw.add_argument("--no-plot", action="store_true")
    sw.set_defaults(func=cmd_sweep, out=None)

    v = sub.add_parser("verify", parents=[common], help="run the identity suite")
    v.add_argument("--quick", action="store_true", help="smaller randomized grid")
    v.set_defaults(func=cmd_verify)
    return p


def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if args.command is None:
            raise UsageError("obmlab: a subcommand is required")
        if args.command == "sweep" and not args.out:
            raise UsageError("sweep needs --out")
        logging.basicConfig(level=logging.WARNING - 10 * args.verbose, format="%(levelname)s %(message)s")
        args.argv = argv
        return args.func(args)
    except UsageError as exc:
        print(str(exc), file=sys.stderr)
        return EXIT_USAGE
    except (ObmLabError, OSError, json.JSONDecodeError, KeyError, ValueError) as exc:
        print(f"obmlab: {exc}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
