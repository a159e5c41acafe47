"""Benchmark driver: dataset/problem configuration, reference-optimum
caching, experiment runs across algorithms/delays/threads, CSV emission.

Config precedence: command-line flags override key=value lines in
--config, which override defaults.  Deterministic-mode outputs are
byte-identical across reruns with the same config and seeds.
"""

import argparse
import hashlib
import json
import math
import sys
import time
from pathlib import Path

import numpy as np

from . import problem as prob
from . import runtime, solvers
from .delay import make_schedule
from .momentum import asvrg_step_size, step_size

RESIDUAL_FLOOR = 1e-15
FSTAR_CERT_TOL = 1e-12


def _fail(category, message, code=1):
    print(f"error ({category}): {message}", file=sys.stderr)
    return code


# ---------------------------------------------------------------------------
# reference-optimum cache


class FStarCache:
    """Disk cache of (dataset, loss, lambda) -> (F*, x*, certificate norm)."""

    def __init__(self, directory):
        self.dir = Path(directory)
        self.dir.mkdir(parents=True, exist_ok=True)

    @staticmethod
    def key(dataset_bytes, loss, lam, dual=False):
        h = hashlib.sha256()
        h.update(dataset_bytes)
        h.update(f"|{loss}|{lam:.17g}|{int(dual)}".encode())
        return h.hexdigest()

    def path(self, key):
        return self.dir / f"{key}.json"

    def load(self, key):
        p = self.path(key)
        if not p.exists():
            return None
        with open(p) as fh:
            return json.load(fh)

    def store(self, key, f_star, x_star, cert):
        entry = {"f_star": f_star, "x_star": list(map(float, x_star)),
                 "certificate": cert}
        with open(self.path(key), "w") as fh:
            json.dump(entry, fh)
        return entry


def ensure_f_star(problem_obj, cache, key, max_iter=100000):
    """Cached reference optimum, computing and storing it on a miss.

    Returns (f_star, cert, hit).  A certificate above the tolerance is
    cached anyway (partial) and reported as a warning by the caller.
    """
    entry = cache.load(key) if cache is not None else None
    if entry is not None:
        return entry["f_star"], entry["certificate"], True
    x_star, f_star, cert = solvers.solve_reference(problem_obj,
                                                   tol=FSTAR_CERT_TOL,
                                                   max_iter=max_iter)
    if cache is not None:
        cache.store(key, f_star, x_star, cert)
    return f_star, cert, False


# ---------------------------------------------------------------------------
# synthetic datasets


def synth_dataset(rows, cols, density, cond, seed, normalize=False):
    """Random design with i.i.d. Bernoulli(density) supports and a
    column-scaled spectrum hitting the condition target within 10%.

    The condition number is measured as lambda_max/lambda_min of the Gram
    matrix A.T A; supports stay i.i.d. per coordinate (column scaling
    preserves them), so the i.i.d.-support sparsity model holds by
    construction.
    """
    rng = np.random.default_rng(seed)
    mask = rng.random((rows, cols)) < density
    dense = np.where(mask, rng.standard_normal((rows, cols)), 0.0)
    empty = ~dense.any(axis=1)
    if empty.any():
        # keep every sample informative: give empty rows one random feature
        for i in np.nonzero(empty)[0]:
            dense[i, rng.integers(cols)] = rng.standard_normal()

    def measured_cond(mat):
        eig = np.linalg.eigvalsh(mat.T @ mat)
        lo = max(eig[0], 0.0)
        if lo <= 1e-12 * eig[-1]:
            raise ValueError("singular design: condition targeting needs "
                             "rows comfortably above cols")
        return eig[-1] / lo

    if cond is not None:
        base = measured_cond(dense)
        grades = np.linspace(0.0, 1.0, cols)
        alpha = 0.5 * math.log(cond / base)
        lo, hi = alpha - 6.0, alpha + 6.0
        scaled = dense
        for _ in range(40):
            alpha = 0.5 * (lo + hi)
            scaled = dense * np.exp(alpha * grades)[None, :]
            c = measured_cond(scaled)
            if abs(c - cond) <= 0.1 * cond:
                break
            if c < cond:
                lo = alpha
            else:
                hi = alpha
        dense = scaled
    labels = np.where(rng.random(rows) < 0.5, -1.0, 1.0)
    X = prob.CsrMatrix.from_dense(dense)
    if normalize:
        norms = np.sqrt(X.row_sqnorms())
        X = X.scale_rows(1.0 / np.where(norms > 0, norms, 1.0))
    return prob.Dataset(features=X, labels=labels, normalized=normalize)


def _parse_synth_spec(spec):
    fields = {}
    for part in spec.split(","):
        k, v = part.split("=")
        fields[k.strip()] = v.strip()
    return dict(rows=int(fields["rows"]), cols=int(fields["cols"]),
                density=float(fields.get("density", 1.0)),
                cond=float(fields["cond"]) if "cond" in fields else None,
                seed=int(fields.get("seed", 0)))


# ---------------------------------------------------------------------------
# argument plumbing


def _add_common(p):
    p.add_argument("--config", help="key=value file; flags override it")
    p.add_argument("--dataset", help="LIBSVM-format dataset path")
    p.add_argument("--synth", help="synthetic spec rows=..,cols=..[,density=..]"
                                   "[,cond=..][,seed=..]")
    p.add_argument("--normalize", action="store_true",
                   help="rescale rows to unit norm")
    p.add_argument("--loss", default="squared",
                   choices=("squared", "logistic", "smoothed_hinge"))
    p.add_argument("--lambda", dest="lam", default="auto",
                   help="L2 weight; 'auto' = 1/(100 n)")
    p.add_argument("--fstar-cache", default=".fstar_cache")


def _load_config(args, argv):
    """Apply config-file values for options the command line left at default."""
    if not getattr(args, "config", None):
        return args
    overrides = {}
    with open(args.config) as fh:
        for line in fh:
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            if "=" not in line:
                raise ValueError(f"bad config line {line!r}")
            k, v = line.split("=", 1)
            overrides[k.strip().replace("-", "_")] = v.strip()
    explicit = {a.split("=")[0].lstrip("-").replace("-", "_")
                for a in argv if a.startswith("--")}
    for k, v in overrides.items():
        if k in explicit or not hasattr(args, k):
            continue
        current = getattr(args, k)
        if isinstance(current, bool):
            v = v.lower() in ("1", "true", "yes", "on")
        elif isinstance(current, int):
            v = int(v)
        elif isinstance(current, float):
            v = float(v)
        setattr(args, k, v)
    return args


def _load_data(args):
    if args.dataset and args.synth:
        raise ValueError("give either --dataset or --synth, not both")
    if args.dataset:
        return prob.load_libsvm(args.dataset, normalize=args.normalize), \
            Path(args.dataset).read_bytes()
    if args.synth:
        spec = _parse_synth_spec(args.synth)
        data = synth_dataset(normalize=args.normalize, **spec)
        return data, f"synth:{args.synth}:{args.normalize}".encode()
    raise ValueError("a dataset is required (--dataset or --synth)")


def _resolve_lambda(args, n):
    if isinstance(args.lam, str) and args.lam == "auto":
        return 1.0 / (100.0 * n)
    lam = float(args.lam)
    if lam < 0:
        raise ValueError("lambda must be >= 0")
    return lam


def _build_problem(args, data, lam):
    if getattr(args, "dual", False):
        if lam <= 0:
            raise ValueError("the dual formulation needs lambda > 0")
        svm = prob.make_dual_svm(data, lam)
        return svm.base, svm
    return prob.make_erm(data, loss=args.loss, lam=lam), None


def _auto_gamma(args, problem_obj, tau):
    if args.algo in ("agd", "aagd"):
        return step_size("aagd", args.regime, L=problem_obj.L,
                         mu=problem_obj.mu or None, tau=tau)
    if args.algo in ("aascd", "apcg"):
        return step_size("aascd", args.regime, L_c=problem_obj.L_c,
                         mu=problem_obj.mu or None, n=problem_obj.dim, tau=tau)
    if args.algo == "aasvrg":
        return step_size("aasvrg", args.regime, L=problem_obj.L_comp, tau=tau)
    if args.algo == "asvrg":
        return asvrg_step_size(problem_obj.L_comp, tau)
    return 0.01


# ---------------------------------------------------------------------------
# commands


def cmd_run(args, argv):
    data, data_bytes = _load_data(args)
    lam = _resolve_lambda(args, data.n)
    problem_obj, svm = _build_problem(args, data, lam)
    cache = FStarCache(args.fstar_cache)
    key = FStarCache.key(data_bytes, args.loss, lam, dual=bool(svm))
    f_star, cert, _ = ensure_f_star(problem_obj, cache, key)
    if cert > FSTAR_CERT_TOL:
        print(f"warning: reference optimum certificate {cert:.3g} above "
              f"{FSTAR_CERT_TOL:g}", file=sys.stderr)

    tau = args.tau
    if args.threads is not None:
        run = runtime.run_parallel(
            args.algo, problem_obj, gamma=_gamma_of(args, problem_obj, max(args.threads - 1, 0)),
            P=args.threads, mode=args.mode, seed=args.seed,
            budget=args.steps, epochs=args.epochs, regime=args.regime,
            f_star=f_star, order_queue=args.order_queue,
            grad_mode=args.grad_mode)
        trace, final = run.result.trace, run.result.x
        seconds = run.seconds
        if args.delay_log:
            runtime.write_delay_log(args.delay_log, run.delay_pairs)
    else:
        gamma = _gamma_of(args, problem_obj, tau)
        horizon = _budget_steps(args, problem_obj)
        sched = make_schedule(args.schedule, tau, horizon, seed=args.seed,
                              serial_warmup=args.serial_warmup)
        result = _run_deterministic(args, problem_obj, gamma, sched, f_star)
        trace, final = result.trace, result.x
        seconds = 0.0
    trace.to_csv(args.out, residual_floor=RESIDUAL_FLOOR)
    print(f"final_residual={max(trace.residuals[-1], RESIDUAL_FLOOR):.6g} "
          f"grad_evals={trace.grad_evals[-1]} seconds={seconds:.3f} "
          f"out={args.out}")
    return 0


def _gamma_of(args, problem_obj, tau):
    if isinstance(args.gamma, str) and args.gamma == "auto":
        return _auto_gamma(args, problem_obj, tau)
    return float(args.gamma)


def _budget_steps(args, problem_obj):
    if args.algo in ("aasvrg", "asvrg"):
        m = problem_obj.n_components if args.algo == "aasvrg" \
            else 2 * problem_obj.n_components
        return args.epochs * m
    return args.steps


def _run_deterministic(args, problem_obj, gamma, sched, f_star):
    if args.algo == "agd":
        return solvers.run_agd(problem_obj, gamma, args.steps,
                               regime=args.regime, f_star=f_star)
    if args.algo == "aagd":
        return solvers.run_aagd(problem_obj, gamma, sched, args.steps,
                                regime=args.regime, form=args.form or "uv",
                                f_star=f_star)
    if args.algo == "aascd":
        return solvers.run_aascd(problem_obj, gamma, sched, args.steps,
                                 seed=args.seed, regime=args.regime,
                                 form=args.form or "efficient", f_star=f_star)
    if args.algo == "apcg":
        return solvers.run_apcg_reference(problem_obj, gamma, args.steps,
                                          seed=args.seed, regime=args.regime,
                                          f_star=f_star)
    if args.algo == "aasvrg":
        return solvers.run_aasvrg(problem_obj, gamma, sched, args.epochs,
                                  seed=args.seed, regime=args.regime,
                                  grad_mode=args.grad_mode, f_star=f_star)
    if args.algo == "asvrg":
        return solvers.run_asvrg_baseline(problem_obj, sched, args.epochs,
                                          seed=args.seed, gamma=gamma,
                                          f_star=f_star)
    if args.algo == "sgd":
        rule = ("constant", float(args.gamma)) if args.gamma != "auto" \
            else ("decaying", 0.1, 100.0)
        return solvers.run_sgd_baseline(problem_obj, sched, args.steps,
                                        seed=args.seed, step_rule=rule,
                                        f_star=f_star)
    raise ValueError(f"unknown algo {args.algo!r}")


def cmd_fstar(args, argv):
    data, data_bytes = _load_data(args)
    lam = _resolve_lambda(args, data.n)
    problem_obj, svm = _build_problem(args, data, lam)
    cache = FStarCache(args.fstar_cache)
    key = FStarCache.key(data_bytes, args.loss, lam, dual=bool(svm))
    t0 = time.monotonic()
    f_star, cert, hit = ensure_f_star(problem_obj, cache, key,
                                      max_iter=args.max_iter)
    status = "cached" if hit else f"computed in {time.monotonic() - t0:.2f}s"
    print(f"f_star={f_star:.17g} certificate={cert:.3g} ({status})")
    if cert > FSTAR_CERT_TOL:
        print(f"warning: certificate {cert:.3g} above {FSTAR_CERT_TOL:g}; "
              "cached entry is partial", file=sys.stderr)
    return 0


def cmd_speedup(args, argv):
    data, data_bytes = _load_data(args)
    lam = _resolve_lambda(args, data.n)
    problem_obj, svm = _build_problem(args, data, lam)
    cache = FStarCache(args.fstar_cache)
    key = FStarCache.key(data_bytes, args.loss, lam, dual=bool(svm))
    f_star, cert, _ = ensure_f_star(problem_obj, cache, key)
    thread_list = [int(p) for p in args.threads_list.split(",")]
    traces = {}
    serial = None
    for P in sorted(set(thread_list) | {1}):
        run = runtime.run_parallel(
            args.algo, problem_obj, gamma=_gamma_of(args, problem_obj, max(P - 1, 0)),
            P=P, mode=args.mode, seed=args.seed, budget=args.steps,
            epochs=args.epochs, regime=args.regime, f_star=f_star,
            order_queue=(P == 1) or args.order_queue,
            grad_mode=args.grad_mode)
        if P == 1:
            serial = run.result.trace
        if P in thread_list:
            traces[P] = run.result.trace
    report = runtime.speedup(serial, traces, args.target_residual)
    with open(args.out, "w") as fh:
        fh.write("threads,iters,seconds,iteration_speedup,time_speedup\n")
        for row in report.rows:
            fh.write(f"{row.threads},{row.iters},{row.seconds:.6g},"
                     f"{row.iteration_speedup:.6g},{row.time_speedup:.6g}\n")
    print(f"serial_iters={report.serial_iters} "
          f"rows={len(report.rows)} out={args.out} "
          "(time speedup is hardware-dependent)")
    return 0


def cmd_synth(args, argv):
    data = synth_dataset(args.rows, args.cols, args.density, args.cond,
                         args.seed, normalize=args.normalize)
    prob.save_libsvm(args.out, data.features, data.labels)
    nnz = data.features.nnz
    print(f"rows={args.rows} cols={args.cols} nnz={nnz} "
          f"density={nnz / (args.rows * args.cols):.4g} out={args.out}")
    return 0


# ---------------------------------------------------------------------------


def build_parser():
    parser = argparse.ArgumentParser(
        prog="asyncopt",
        description="Momentum-compensated asynchronous solver benchmarks")
    sub = parser.add_subparsers(dest="command", required=True)

    run_p = sub.add_parser("run", help="run one solver, write a trace CSV")
    _add_common(run_p)
    run_p.add_argument("--algo", required=True,
                       choices=("agd", "aagd", "aascd", "apcg", "aasvrg",
                                "asvrg", "sgd"))
    run_p.add_argument("--regime", default="nc", choices=("nc", "sc"))
    run_p.add_argument("--dual", action="store_true",
                       help="solve the SVM dual (aascd)")
    run_p.add_argument("--tau", type=int, default=0)
    run_p.add_argument("--threads", type=int, default=None,
                       help="run the shared-memory runtime instead of the simulator")
    run_p.add_argument("--mode", default="atom", choices=("atom", "wild"))
    run_p.add_argument("--order-queue", action="store_true")
    run_p.add_argument("--schedule", default="fixed",
                       choices=("serial", "fixed", "uniform"))
    run_p.add_argument("--serial-warmup", action="store_true")
    run_p.add_argument("--grad-mode", default="exact", choices=("exact", "hvp"))
    run_p.add_argument("--form", default=None)
    run_p.add_argument("--gamma", default="auto")
    run_p.add_argument("--seed", type=int, default=0)
    run_p.add_argument("--steps", type=int, default=1000)
    run_p.add_argument("--epochs", type=int, default=30)
    run_p.add_argument("--out", default="trace.csv")
    run_p.add_argument("--delay-log", default=None,
                       help="dump observed (k, j(k)) pairs (runtime mode; "
                            "little-endian int64 pairs)")
    run_p.set_defaults(func=cmd_run)

    fstar_p = sub.add_parser("fstar", help="compute and cache the reference optimum")
    _add_common(fstar_p)
    fstar_p.add_argument("--dual", action="store_true")
    fstar_p.add_argument("--max-iter", type=int, default=100000)
    fstar_p.set_defaults(func=cmd_fstar)

    sp = sub.add_parser("speedup", help="iteration/time speedup across threads")
    _add_common(sp)
    sp.add_argument("--algo", default="aasvrg",
                    choices=("aasvrg", "aascd", "sgd"))
    sp.add_argument("--regime", default="nc", choices=("nc", "sc"))
    sp.add_argument("--dual", action="store_true")
    sp.add_argument("--mode", default="atom", choices=("atom", "wild"))
    sp.add_argument("--order-queue", action="store_true")
    sp.add_argument("--grad-mode", default="exact", choices=("exact", "hvp"))
    sp.add_argument("--gamma", default="auto")
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--steps", type=int, default=2000)
    sp.add_argument("--epochs", type=int, default=20)
    sp.add_argument("--threads-list", default="1,2,4")
    sp.add_argument("--target-residual", type=float, required=True)
    sp.add_argument("--out", default="speedup.csv")
    sp.set_defaults(func=cmd_speedup)

    synth_p = sub.add_parser("synth", help="write a synthetic LIBSVM dataset")
    synth_p.add_argument("--rows", type=int, required=True)
    synth_p.add_argument("--cols", type=int, required=True)
    synth_p.add_argument("--density", type=float, default=1.0)
    synth_p.add_argument("--cond", type=float, default=None)
    synth_p.add_argument("--seed", type=int, default=0)
    synth_p.add_argument("--normalize", action="store_true")
    synth_p.add_argument("--out", required=True)
    synth_p.set_defaults(func=cmd_synth)
    return parser


def main(argv=None):
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        args = _load_config(args, argv)
        return args.func(args, argv)
    except FileNotFoundError as exc:
        return _fail("io", str(exc), 3)
    except ValueError as exc:
        return _fail("config", str(exc), 2)


if __name__ == "__main__":
    sys.exit(main())
