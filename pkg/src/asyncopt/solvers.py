"""Algorithm loops: serial accelerated methods, their momentum-compensated
delayed variants, and unaccelerated baselines.

All delayed solvers are parameterized by a DelaySchedule and are strictly
single-threaded here; real shared-memory execution lives in ``runtime``.
Identical ``(problem, gamma, schedule, seed)`` inputs produce bit-identical
traces.  Solver variants that must agree step-for-step (math vs uv forms,
naive vs efficient coordinate forms, serial references) consume the same
counter-based index streams.
"""

import io
import math
from dataclasses import dataclass, field

import numpy as np

from . import _kernels
from .delay import rand_index
from .momentum import (ThetaSchedule, aasvrg_theta1, comp_sum_aagd,
                       comp_sum_aascd, comp_sum_aasvrg, theta3 as theta3_of,
                       asvrg_step_size, ScaledScalar, scaled_mul)
from .problem import DualSvmSmooth, ErmSmooth, loss_deriv

TRACE_COLUMNS = ("step", "seconds", "objective", "residual", "grad_evals")


@dataclass
class Trace:
    """Per-record (step, wall seconds, objective, residual, gradient evals).

    Deterministic mode writes 0.0 seconds so reruns are byte-identical;
    wall time is only meaningful for the shared-memory runtime.
    """

    steps: list = field(default_factory=list)
    seconds: list = field(default_factory=list)
    objectives: list = field(default_factory=list)
    residuals: list = field(default_factory=list)
    grad_evals: list = field(default_factory=list)

    def record(self, step, objective, grad_evals, f_star=math.nan, seconds=0.0):
        if self.steps and step <= self.steps[-1]:
            raise ValueError("trace steps must be strictly increasing")
        self.steps.append(int(step))
        self.seconds.append(float(seconds))
        self.objectives.append(float(objective))
        self.residuals.append(float(objective - f_star))
        self.grad_evals.append(int(grad_evals))

    def to_csv(self, path_or_buf, residual_floor=None):
        own = isinstance(path_or_buf, (str, bytes)) or hasattr(path_or_buf, "__fspath__")
        fh = open(path_or_buf, "w") if own else path_or_buf
        try:
            fh.write(",".join(TRACE_COLUMNS) + "\n")
            for row in zip(self.steps, self.seconds, self.objectives,
                           self.residuals, self.grad_evals):
                res = row[3]
                if residual_floor is not None and math.isfinite(res):
                    res = max(res, residual_floor)
                fh.write(f"{row[0]},{row[1]:.17g},{row[2]:.17g},{res:.17g},{row[4]}\n")
        finally:
            if own:
                fh.close()

    @staticmethod
    def from_csv(path):
        tr = Trace()
        with open(path) as fh:
            header = fh.readline().strip().split(",")
            if tuple(header) != TRACE_COLUMNS:
                raise ValueError(f"unexpected trace header {header}")
            for line in fh:
                s, sec, obj, res, ge = line.strip().split(",")
                tr.steps.append(int(s))
                tr.seconds.append(float(sec))
                tr.objectives.append(float(obj))
                tr.residuals.append(float(res))
                tr.grad_evals.append(int(ge))
        return tr

    def csv_bytes(self):
        buf = io.StringIO()
        self.to_csv(buf)
        return buf.getvalue().encode()


@dataclass
class SolverResult:
    x: np.ndarray
    trace: Trace
    iterates: list | None = None
    aux: dict = field(default_factory=dict)


def _theta_schedule(algo, regime, problem, gamma, n=1, tau=0):
    if regime == "sc":
        if problem.mu <= 0:
            raise ValueError("SC regime needs a strongly convex h (mu > 0)")
        return ThetaSchedule(algo, "sc", n=n, tau=tau, gamma=gamma, mu=problem.mu,
                             L=problem.L)
    return ThetaSchedule(algo, "nc", n=n, tau=tau)


def _check_horizon(schedule, K):
    if schedule.horizon < K:
        raise ValueError(f"schedule horizon {schedule.horizon} < {K} steps")


# ---------------------------------------------------------------------------
# serial accelerated gradient (the zero-delay reference)


def run_agd(problem, gamma, K, regime="nc", x0=None, f_star=math.nan,
            record_every=1, log_iterates=False):
    """Serial accelerated proximal gradient.

    Extrapolate y = (1-theta) x + theta z, take a prox step on z against
    grad f(y), then average:  x <- theta z + (1-theta) x.
    """
    if gamma <= 0:
        raise ValueError("need gamma > 0")
    ts = _theta_schedule("aagd", regime, problem, gamma)
    dim = problem.dim
    x = np.zeros(dim) if x0 is None else np.array(x0, dtype=float)
    z = x.copy()
    n = problem.n_components
    trace = Trace()
    trace.record(0, problem.objective(x), 0, f_star)
    iterates = [x.copy()] if log_iterates else None
    evals = 0
    for k in range(K):
        th = ts.theta(k)
        y = (1.0 - th) * x + th * z
        g = problem.full_grad(y)
        evals += n
        delta = problem.nonsmooth.prox(z, g, th / gamma)
        z = z + delta
        x = th * z + (1.0 - th) * x
        if log_iterates:
            iterates.append(x.copy())
        if (k + 1) % record_every == 0 or k == K - 1:
            trace.record(k + 1, problem.objective(x), evals, f_star)
    return SolverResult(x=x, trace=trace, iterates=iterates, aux={"z": z})


def solve_reference(problem, tol=1e-12, max_iter=100000, check_every=50):
    """Minimize to a gradient-map certificate (serial accelerated run).

    Returns (x_star, f_star, certificate_norm); the certificate is the
    norm of the proximal gradient map at x_star with unit step.
    """
    regime = "sc" if problem.mu > 0 else "nc"
    gamma = 1.0 / problem.L
    ts = _theta_schedule("aagd", regime, problem, gamma)
    x = np.zeros(problem.dim)
    z = x.copy()
    cert = math.inf
    for k in range(max_iter):
        th = ts.theta(k)
        y = (1.0 - th) * x + th * z
        g = problem.full_grad(y)
        delta = problem.nonsmooth.prox(z, g, th / gamma)
        z = z + delta
        x = th * z + (1.0 - th) * x
        if (k + 1) % check_every == 0:
            step = problem.nonsmooth.prox(x, problem.full_grad(x), problem.L)
            cert = float(np.linalg.norm(step)) * problem.L
            if cert <= tol:
                break
    else:
        step = problem.nonsmooth.prox(x, problem.full_grad(x), problem.L)
        cert = float(np.linalg.norm(step)) * problem.L
    return x, problem.objective(x), cert


# ---------------------------------------------------------------------------
# compensated delayed full-gradient method


def run_aagd(problem, gamma, schedule, K, regime="nc", form="uv", x0=None,
             f_star=math.nan, record_every=1, log_iterates=False,
             a_convention="extrapolation"):
    """Delayed accelerated gradient with momentum compensation.

    ``math`` form keeps iterate history and compensates explicitly:
    w = x_j + (sum of momentum products)(x_j - x_{j-1}).  ``uv`` form is
    the change-of-variable implementation (z = u, x = u + d v, w = u_j +
    d_{k+1} v_j) with d held as a scaled scalar.  Both reduce exactly to
    the serial method under a serial schedule.
    """
    if gamma <= 0:
        raise ValueError("need gamma > 0")
    _check_horizon(schedule, K)
    ts = _theta_schedule("aagd", regime, problem, gamma)
    dim = problem.dim
    n = problem.n_components
    tau = schedule.tau
    x0 = np.zeros(dim) if x0 is None else np.array(x0, dtype=float)
    trace = Trace()
    trace.record(0, problem.objective(x0), 0, f_star)
    iterates = [x0.copy()] if log_iterates else None
    evals = 0

    if form == "math":
        depth = tau + 2
        ring = np.tile(x0, (depth, 1))        # x_{-1} := x_0
        x = x0.copy()
        z = x0.copy()
        for k in range(K):
            th = ts.theta(k)
            j = schedule.j(k)
            comp = comp_sum_aagd(ts, j, k, a_convention)
            x_j = ring[(j + 1) % depth]       # ring prefilled with x_0 = x_{-1}
            x_jm1 = ring[j % depth]
            w = x_j + comp * (x_j - x_jm1)
            g = problem.full_grad(w)
            evals += n
            delta = problem.nonsmooth.prox(z, g, th / gamma)
            z = z + delta
            x = th * z + (1.0 - th) * x
            ring[(k + 2) % depth] = x
            if log_iterates:
                iterates.append(x.copy())
            if (k + 1) % record_every == 0 or k == K - 1:
                trace.record(k + 1, problem.objective(x), evals, f_star)
        return SolverResult(x=x, trace=trace, iterates=iterates, aux={"z": z})

    if form != "uv":
        raise ValueError(f"unknown form {form!r}")
    depth = tau + 1
    u = x0.copy()
    v = np.zeros(dim)
    ring_u = np.tile(u, (depth, 1))
    ring_v = np.tile(v, (depth, 1))
    d = ScaledScalar.from_float(1.0)
    x = x0.copy()
    for k in range(K):
        th = ts.theta(k)
        j = schedule.j(k)
        if k == 0:
            w = u.copy()                       # y_0 = x_0 = u_0
        else:
            d_next = scaled_mul(d, 1.0 - th)
            w = ring_u[j % depth] + d_next.value() * ring_v[j % depth]
        g = problem.full_grad(w)
        evals += n
        delta = problem.nonsmooth.prox(u, g, th / gamma)
        u = u + delta
        if k == 0:
            # theta_0 = 1 makes the printed recursion divide by d_1 = 0;
            # seed (d, v) directly from x_1 = u_1 + (theta_0 - 1) delta.
            d = ScaledScalar.from_float(1.0 - th) if th < 1.0 else ScaledScalar.from_float(1.0)
            v = (th - 1.0) * delta / d.value()
        else:
            v = v - d.div_value(delta)
            d = d_next
        ring_u[(k + 1) % depth] = u
        ring_v[(k + 1) % depth] = v
        x = u + d.value() * v
        if log_iterates:
            iterates.append(x.copy())
        if (k + 1) % record_every == 0 or k == K - 1:
            trace.record(k + 1, problem.objective(x), evals, f_star)
    return SolverResult(x=x, trace=trace, iterates=iterates,
                        aux={"z": u, "d": d, "v": v})


# ---------------------------------------------------------------------------
# compensated delayed coordinate descent


class _CoordOracle:
    """Coordinate gradients of the smooth part through linear auxiliaries.

    The auxiliary of a point is linear in it (margins A x for the primal,
    q = sum alpha_i a_i for the dual), so delayed compensated points need
    only the delayed auxiliaries: aux(w) = aux_u_j + dscale * aux_v_j.
    """

    def __init__(self, smooth):
        self.smooth = smooth
        if isinstance(smooth, DualSvmSmooth):
            self.kind = "dual"
            self.X = smooth.X
        else:
            self.kind = "primal"
            self.X = smooth.X
            self.XT = smooth.X.transpose()

    def aux(self, x):
        if self.kind == "dual":
            return self.smooth.q_of(x)
        return self.X.matvec(x)

    def pattern(self, i):
        """(aux indices, matrix values) touched by coordinate i."""
        return self.X.row(i) if self.kind == "dual" else self.XT.row(i)

    def coord_grad_restricted(self, i, aux_slice):
        """Coordinate gradient from the aux entries on ``pattern(i)``."""
        _, vals = self.pattern(i)
        if self.kind == "dual":
            return self.smooth._scale * float(vals @ aux_slice)
        idx, _ = self.pattern(i)
        d = loss_deriv(self.smooth.loss, aux_slice, self.smooth.labels[idx])
        return float(vals @ d) / self.smooth.n

    def add(self, aux, i, delta):
        idx, vals = self.pattern(i)
        aux[idx] += delta * vals

    def coord_grad_at(self, x, i):
        """Direct evaluation at a dense point (naive form)."""
        full = self.aux(x)
        idx, _ = self.pattern(i)
        return self.coord_grad_restricted(i, full[idx])


def run_aascd(problem, gamma, schedule, K, seed, regime="nc", form="efficient",
              x0=None, f_star=math.nan, record_every=None, log_iterates=False,
              comp_variant="frozen", enforce_tau_bound=True):
    """Delayed accelerated stochastic coordinate descent.

    One coordinate i_k (counter-based on ``(seed, k)``) is prox-updated
    per step against the compensated delayed coordinate gradient; x is
    the (1-theta) x + n theta z_{k+1} - (n-1) theta z_k combination.
    ``naive`` materializes dense iterates per the written recursion and
    serves as the oracle; ``efficient`` maintains the change-of-variable
    state (u, v, d) plus linear auxiliaries with O(nnz(column)) updates.
    Both consume identical coordinate streams.
    """
    if gamma <= 0:
        raise ValueError("need gamma > 0")
    if not problem.nonsmooth.separable:
        raise ValueError("coordinate descent needs a separable h")
    _check_horizon(schedule, K)
    n = problem.dim
    tau = schedule.tau
    if enforce_tau_bound and tau > math.sqrt(n):
        raise ValueError(f"tau = {tau} exceeds sqrt(n) = {math.sqrt(n):g} "
                         "(coordinate-descent bound hypothesis)")
    ts = _theta_schedule("aascd", regime, problem, gamma, n=n, tau=tau)
    h = problem.nonsmooth
    x0 = np.zeros(n) if x0 is None else np.array(x0, dtype=float)
    record_every = record_every or max(1, n)
    trace = Trace()
    trace.record(0, problem.objective(x0), 0, f_star)
    iterates = [x0.copy()] if log_iterates else None
    oracle = _CoordOracle(problem.smooth)
    evals = 0

    if form == "naive":
        depth = tau + 2
        x = x0.copy()
        z = x0.copy()
        ring_x = np.tile(x0, (depth, 1))
        ring_z = np.tile(x0, (depth, 1))
        zs = []
        for k in range(K):
            th = ts.theta(k)
            j = schedule.j(k)
            x_j = ring_x[(j + 1) % depth]
            z_j = ring_z[(j + 1) % depth]
            x_jm1 = ring_x[j % depth]
            th_j = ts.theta(j)
            y_j = (1.0 - th_j) * x_j + th_j * z_j
            comp = comp_sum_aascd(ts, j, k, comp_variant)
            mult = (y_j - x_j) if comp_variant == "frozen" else (y_j - x_jm1)
            w = y_j + comp * mult
            i = rand_index(seed, k, n)
            g_i = oracle.coord_grad_at(w, i)
            evals += 1
            delta = h.prox_coord(z[i], g_i, n * th / gamma, i)
            y_k = (1.0 - th) * x + th * z
            z = z.copy()
            z[i] += delta
            x = y_k
            x[i] += n * th * delta
            ring_x[(k + 2) % depth] = x
            ring_z[(k + 2) % depth] = z
            if log_iterates:
                iterates.append(x.copy())
                zs.append(z.copy())
            if (k + 1) % record_every == 0 or k == K - 1:
                trace.record(k + 1, problem.objective(x), evals, f_star)
        return SolverResult(x=x, trace=trace, iterates=iterates,
                            aux={"z": z, "z_iterates": zs})

    if form != "efficient":
        raise ValueError(f"unknown form {form!r}")
    depth = tau + 1
    u = x0.copy()
    v = np.zeros(n)
    aux_u = oracle.aux(u)
    aux_v = np.zeros_like(aux_u)
    ring_au = np.tile(aux_u, (depth, 1))
    ring_av = np.tile(aux_v, (depth, 1))
    d = ScaledScalar.from_float(1.0)
    zs = []
    for k in range(K):
        th = ts.theta(k)
        d_next = scaled_mul(d, 1.0 - th)
        j = schedule.j(k)
        i = rand_index(seed, k, n)
        dval = d_next.value()
        rows, _ = oracle.pattern(i)
        aux_w = ring_au[j % depth][rows] + dval * ring_av[j % depth][rows]
        g_i = oracle.coord_grad_restricted(i, aux_w)
        evals += 1
        delta = h.prox_coord(u[i], g_i, n * th / gamma, i)
        u[i] += delta
        oracle.add(aux_u, i, delta)
        vcoef = (n * th - 1.0) / dval
        v[i] += vcoef * delta
        oracle.add(aux_v, i, vcoef * delta)
        d = d_next
        ring_au[(k + 1) % depth] = aux_u
        ring_av[(k + 1) % depth] = aux_v
        if log_iterates:
            iterates.append(u + d.value() * v)
            zs.append(u.copy())
        if (k + 1) % record_every == 0 or k == K - 1:
            x_now = u + d.value() * v
            trace.record(k + 1, problem.objective(x_now), evals, f_star)
    x = u + d.value() * v
    return SolverResult(x=x, trace=trace, iterates=iterates,
                        aux={"z": u.copy(), "z_iterates": zs, "d": d})


def run_apcg_reference(problem, gamma, K, seed, regime="nc", x0=None,
                       f_star=math.nan, record_every=None, log_iterates=False):
    """Serial accelerated proximal coordinate descent (dense y-form reference)."""
    n = problem.dim
    ts = _theta_schedule("aascd", regime, problem, gamma, n=n)
    h = problem.nonsmooth
    oracle = _CoordOracle(problem.smooth)
    x = np.zeros(n) if x0 is None else np.array(x0, dtype=float)
    z = x.copy()
    record_every = record_every or max(1, n)
    trace = Trace()
    trace.record(0, problem.objective(x), 0, f_star)
    iterates = [x.copy()] if log_iterates else None
    evals = 0
    for k in range(K):
        th = ts.theta(k)
        y = (1.0 - th) * x + th * z
        i = rand_index(seed, k, n)
        g_i = oracle.coord_grad_at(y, i)
        evals += 1
        delta = h.prox_coord(z[i], g_i, n * th / gamma, i)
        z[i] += delta
        x = y
        x[i] += n * th * delta
        if log_iterates:
            iterates.append(x.copy())
        if (k + 1) % record_every == 0 or k == K - 1:
            trace.record(k + 1, problem.objective(x), evals, f_star)
    return SolverResult(x=x, trace=trace, iterates=iterates, aux={"z": z})


# ---------------------------------------------------------------------------
# compensated delayed variance reduction


@dataclass
class EpochState:
    """Snapshot point, its exact full gradient, and the snapshot sums."""

    snapshot: np.ndarray
    full_grad_snapshot: np.ndarray
    epoch: int
    inner_length: int
    weighted_sum: np.ndarray = None
    weight_total: float = 0.0


def snapshot_update(inner_iterates, regime, theta1=None, mu=None, gamma=None,
                    variant="theta3"):
    """Epoch snapshot from the inner iterates x_0..x_{m-1}.

    NC: uniform average.  SC: geometric weights theta3^k with theta3 =
    1 + mu gamma / theta1 (the ``maintext`` variant uses (1 + theta1)^k).
    """
    pts = np.asarray(inner_iterates, dtype=float)
    if regime == "nc":
        return pts.mean(axis=0)
    base = (1.0 + theta1) if variant == "maintext" else theta3_of(theta1, mu, gamma)
    weights = base ** np.arange(len(pts))
    return (weights[:, None] * pts).sum(axis=0) / weights.sum()


def _aasvrg_gradient(problem, x_tilde, gbar, a_s, x_read_j, x_read_jm1, delay,
                     i, grad_mode, tau):
    """Compensated variance-reduced gradient estimator from a delayed read.

    Shared by the deterministic python engine and the shared-memory
    runtime so that both produce identical float operations.
    """
    smooth = problem.smooth
    if grad_mode == "hvp":
        c_tau = comp_sum_aasvrg(a_s, tau)
        dx = x_read_j - x_read_jm1
        p = x_read_j + c_tau * dx
        if 0.0 < a_s < 1.0:
            alpha = a_s ** (delay + 2) * (1.0 - a_s ** (tau - delay)) / (1.0 - a_s)
        elif a_s >= 1.0:
            alpha = float(tau - delay)
        else:
            alpha = 0.0
        return (smooth.component_grad(p, i)
                - alpha * smooth.hessian_vec(p, dx, i)
                - smooth.component_grad(x_tilde, i) + gbar)
    c = comp_sum_aasvrg(a_s, delay)
    w = x_read_j + c * (x_read_j - x_read_jm1)
    return smooth.component_grad(w, i) - smooth.component_grad(x_tilde, i) + gbar


def _aasvrg_apply(h, z, x, x_tilde, theta1, theta2, a_s, gamma, g):
    """Prox step on the current z and the x combination (apply-time state)."""
    delta = h.prox(z, g, theta1 / gamma)
    z_new = z + delta
    x_new = theta1 * z_new + theta2 * x_tilde + a_s * x
    return z_new, x_new


def _aasvrg_step(problem, h, x, z, x_tilde, gbar, theta1, theta2, a_s, gamma,
                 x_read_j, x_read_jm1, delay, i, grad_mode, tau):
    g = _aasvrg_gradient(problem, x_tilde, gbar, a_s, x_read_j, x_read_jm1,
                         delay, i, grad_mode, tau)
    return _aasvrg_apply(h, z, x, x_tilde, theta1, theta2, a_s, gamma, g)


def run_aasvrg(problem, gamma, schedule, S, seed, regime="nc", grad_mode="exact",
               m=None, theta2=0.5, engine="auto", x0=None, f_star=math.nan,
               snapshot_variant="theta3", dump_last_epoch=False,
               target_residual=None, max_grad_evals=None):
    """Delayed accelerated variance-reduced method (epoch structure).

    Inside each epoch the compensated point pushes the stale iterate
    forward by the geometric momentum it missed, the gradient estimator
    anchors at the epoch snapshot, and every worker synchronizes at the
    epoch boundary (delays never cross it).  ``grad_mode="hvp"`` replaces
    the compensated gradient by its expansion around the worst-case
    compensated point; exact for quadratic losses.

    The ``numba`` engine runs whole epochs jitted; the ``python`` engine
    is step-granular and shares its step math with the runtime module.
    """
    if gamma <= 0:
        raise ValueError("need gamma > 0")
    if regime == "sc" and problem.mu <= 0:
        raise ValueError("SC regime needs a strongly convex h (mu > 0)")
    if grad_mode not in ("exact", "hvp"):
        raise ValueError(f"unknown grad_mode {grad_mode!r}")
    smooth = problem.smooth
    if not isinstance(smooth, ErmSmooth):
        raise ValueError("variance reduction needs a finite-sum (ERM) smooth part")
    n = smooth.n
    m = m if m is not None else n
    _check_horizon(schedule, S * m)
    h = problem.nonsmooth
    tau = schedule.tau
    dim = problem.dim
    x = np.zeros(dim) if x0 is None else np.array(x0, dtype=float)
    z = x.copy()
    x_tilde = x.copy()
    gbar = problem.full_grad(x_tilde)
    evals = n
    trace = Trace()
    trace.record(0, problem.objective(x), evals, f_star)
    if engine not in ("auto", "numba", "python"):
        raise ValueError(f"unknown engine {engine!r}")
    use_numba = engine in ("auto", "numba")
    X = smooth.X
    dumped = None
    epoch_state = None
    stop = False
    for s in range(S):
        th1 = aasvrg_theta1(regime, s, n=n, mu=problem.mu, L=problem.L_comp, tau=tau)
        a_s = 1.0 - theta2 - th1
        if regime == "sc":
            base = (1.0 + th1) if snapshot_variant == "maintext" \
                else theta3_of(th1, problem.mu, gamma)
        else:
            base = 1.0
        k_base = s * m
        dump = dump_last_epoch and s == S - 1
        snap_acc = np.zeros(dim)
        if use_numba:
            iterates_out = np.empty((m + 1, dim)) if dump else np.empty((1, dim))
            tilde_margins = X.matvec(x_tilde)
            wsum = _kernels.aasvrg_epoch(
                X.row_ptr, X.col_idx, X.vals, smooth.labels, smooth.loss_id,
                x, z, x_tilde, gbar, tilde_margins,
                th1, theta2, a_s, gamma,
                h.family_id, h.mu, h.lam1, h.lo, h.hi,
                schedule.kind_id, tau, schedule.seed, schedule.serial_warmup,
                schedule.trace_array(), seed, k_base, m,
                grad_mode == "hvp", base, snap_acc, dump, iterates_out)
            if dump:
                dumped = iterates_out.copy()
        else:
            depth = tau + 3
            ring = np.tile(x, (depth, 1))
            wsum = 0.0
            wk = 1.0
            inner = [] if dump else None
            for k in range(m):
                if dump:
                    inner.append(x.copy())
                snap_acc += wk * x
                wsum += wk
                wk *= base
                kg = k_base + k
                j = max(schedule.j(kg) - k_base, 0)
                i = rand_index(seed, kg, n)
                x_j = ring[(j + 1) % depth]
                x_jm1 = ring[j % depth]
                z, x = _aasvrg_step(problem, h, x, z, x_tilde, gbar, th1, theta2,
                                    a_s, gamma, x_j, x_jm1, k - j, i, grad_mode, tau)
                ring[(k + 2) % depth] = x
            if dump:
                inner.append(x.copy())
                dumped = np.asarray(inner)
        evals += m
        x_tilde = snap_acc / wsum
        gbar = problem.full_grad(x_tilde)
        evals += n
        epoch_state = EpochState(snapshot=x_tilde, full_grad_snapshot=gbar,
                                 epoch=s + 1, inner_length=m,
                                 weighted_sum=snap_acc, weight_total=wsum)
        obj = problem.objective(x)
        trace.record(k_base + m, obj, evals, f_star)
        if target_residual is not None and math.isfinite(f_star):
            stop = obj - f_star <= target_residual
        if max_grad_evals is not None and evals >= max_grad_evals:
            stop = True
        if stop:
            break
    return SolverResult(x=x, trace=trace,
                        aux={"z": z, "epoch": epoch_state,
                             "inner_iterates": dumped})


def run_accel_svrg_reference(problem, gamma, S, seed, regime="nc", m=None,
                             theta2=0.5, x0=None, f_star=math.nan,
                             log_iterates=False):
    """Serial accelerated variance-reduced loop (dense y-form reference).

    Gradient point y = theta1 z + theta2 x~ + a x (epoch start resets the
    momentum, so the k = 0 point is x itself); independent of the delayed
    machinery, used as its zero-delay oracle.
    """
    smooth = problem.smooth
    n = smooth.n
    m = m if m is not None else n
    h = problem.nonsmooth
    x = np.zeros(problem.dim) if x0 is None else np.array(x0, dtype=float)
    z = x.copy()
    x_tilde = x.copy()
    gbar = problem.full_grad(x_tilde)
    evals = n
    trace = Trace()
    trace.record(0, problem.objective(x), evals, f_star)
    iterates = [x.copy()] if log_iterates else None
    for s in range(S):
        th1 = aasvrg_theta1(regime, s, n=n, mu=problem.mu, L=problem.L_comp, tau=0)
        a_s = 1.0 - theta2 - th1
        inner = []
        for k in range(m):
            inner.append(x.copy())
            y = x if k == 0 else th1 * z + theta2 * x_tilde + a_s * x
            i = rand_index(seed, s * m + k, n)
            g = (smooth.component_grad(y, i) - smooth.component_grad(x_tilde, i)
                 + gbar)
            delta = h.prox(z, g, th1 / gamma)
            z = z + delta
            x = th1 * z + theta2 * x_tilde + a_s * x
            if log_iterates:
                iterates.append(x.copy())
        evals += m
        x_tilde = snapshot_update(inner, regime, th1, problem.mu, gamma)
        gbar = problem.full_grad(x_tilde)
        evals += n
        trace.record((s + 1) * m, problem.objective(x), evals, f_star)
    return SolverResult(x=x, trace=trace, iterates=iterates, aux={"z": z})


# ---------------------------------------------------------------------------
# unaccelerated baselines


def run_asvrg_baseline(problem, schedule, S, seed, gamma=None, m=None,
                       x0=None, f_star=math.nan, target_residual=None,
                       max_grad_evals=None):
    """Plain delayed variance-reduced baseline (epoch length 2n).

    Proximal form of the unaccelerated loop with the two-branch step-size
    rule; the iterate runs continuously and the snapshot is the average
    of the epoch's iterates.
    """
    smooth = problem.smooth
    if not isinstance(smooth, ErmSmooth):
        raise ValueError("variance reduction needs a finite-sum (ERM) smooth part")
    n = smooth.n
    m = m if m is not None else 2 * n
    _check_horizon(schedule, S * m)
    tau = schedule.tau
    if gamma is None:
        gamma = asvrg_step_size(problem.L_comp, tau)
    h = problem.nonsmooth
    X = smooth.X
    dim = problem.dim
    x = np.zeros(dim) if x0 is None else np.array(x0, dtype=float)
    x_tilde = x.copy()
    gbar = problem.full_grad(x_tilde)
    evals = n
    trace = Trace()
    trace.record(0, problem.objective(x), evals, f_star)
    for s in range(S):
        snap_acc = np.zeros(dim)
        tilde_margins = X.matvec(x_tilde)
        _kernels.asvrg_epoch(
            X.row_ptr, X.col_idx, X.vals, smooth.labels, smooth.loss_id,
            x, x_tilde, gbar, tilde_margins, gamma,
            h.family_id, h.mu, h.lam1, h.lo, h.hi,
            schedule.kind_id, tau, schedule.seed, schedule.serial_warmup,
            schedule.trace_array(), seed, s * m, m, snap_acc)
        evals += m
        x_tilde = snap_acc / m
        gbar = problem.full_grad(x_tilde)
        evals += n
        obj = problem.objective(x)
        trace.record((s + 1) * m, obj, evals, f_star)
        if target_residual is not None and math.isfinite(f_star) \
                and obj - f_star <= target_residual:
            break
        if max_grad_evals is not None and evals >= max_grad_evals:
            break
    return SolverResult(x=x, trace=trace, aux={"gamma": gamma, "snapshot": x_tilde})


def sgd_step_size(step_rule, t):
    """Constant eta_0 or decaying eta_0 sqrt(sigma_0 / (t + sigma_0))."""
    if step_rule[0] == "constant":
        return step_rule[1]
    if step_rule[0] == "decaying":
        _, eta0, sigma0 = step_rule
        return eta0 * math.sqrt(sigma0 / (t + sigma0))
    raise ValueError(f"unknown step rule {step_rule!r}")


def run_sgd_baseline(problem, schedule, K, seed, step_rule=("constant", 0.01),
                     x0=None, f_star=math.nan, record_every=None):
    """Delayed proximal stochastic gradient (hogwild-style in runtime mode)."""
    smooth = problem.smooth
    n = smooth.n_components
    _check_horizon(schedule, K)
    tau = schedule.tau
    h = problem.nonsmooth
    x = np.zeros(problem.dim) if x0 is None else np.array(x0, dtype=float)
    depth = tau + 1
    ring = np.tile(x, (depth, 1))
    record_every = record_every or max(1, n)
    trace = Trace()
    trace.record(0, problem.objective(x), 0, f_star)
    evals = 0
    for k in range(K):
        eta = sgd_step_size(step_rule, k)
        j = schedule.j(k)
        i = rand_index(seed, k, n)
        g = smooth.component_grad(ring[j % depth], i)
        evals += 1
        delta = h.prox(x, g, 1.0 / eta)
        x = x + delta
        ring[(k + 1) % depth] = x
        if (k + 1) % record_every == 0 or k == K - 1:
            trace.record(k + 1, problem.objective(x), evals, f_star)
    return SolverResult(x=x, trace=trace)


# ---------------------------------------------------------------------------
# duality gap


def dual_gap(svm_problem, alpha):
    """P(primal_map(alpha)) - D(alpha) for the smoothed-hinge SVM pair."""
    if not svm_problem.feasible(alpha):
        raise ValueError("alpha violates the conjugate box constraints")
    x = svm_problem.primal_map(alpha)
    return svm_problem.primal_objective(x) - svm_problem.dual_objective(alpha)
