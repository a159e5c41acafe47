"""Real shared-memory asynchronous execution.

This module owns all threading.  Two schemes:

* atom: reads and writes of the parameter block are mutually exclusive
  (one global lock), so every read is a true historical iterate.
* wild: no global lock; per-coordinate writes are indivisible and a lock
  table guards the auxiliary product entries.  Full-vector reads may be
  torn; that is the scheme's definition.

Locks are always acquired in ascending coordinate order, which rules out
deadlock.  Delays are emergent here: j(k) is the apply-counter value at
the moment an update's inputs were read, and (k, j(k)) pairs can be
logged and measured.  Workers compute gradients outside the critical
sections; proximal steps run against apply-time state, so no update is
ever lost.
"""

import math
import struct
import threading
import time
from dataclasses import dataclass, field

import numpy as np

from .delay import rand_index
from .momentum import aasvrg_theta1
from .problem import loss_deriv, loss_second_deriv
from .solvers import (SolverResult, Trace, _aasvrg_apply, _aasvrg_gradient,
                      _CoordOracle, _theta_schedule, sgd_step_size)


class AtomicCounter:
    """Monotone integer; ``next_value`` hands out one slot per call."""

    def __init__(self):
        self._value = 0
        self._lock = threading.Lock()

    def next_value(self):
        with self._lock:
            v = self._value
            self._value += 1
            return v

    @property
    def value(self):
        with self._lock:
            return self._value


class SharedState:
    """Named parameter arrays plus lock tables and iteration counters.

    ``ticket`` hands out work slots; ``applied`` counts landed updates
    (its value at read time is the j of that update).
    """

    def __init__(self, mode="atom"):
        if mode not in ("atom", "wild"):
            raise ValueError(f"unknown mode {mode!r}")
        self.mode = mode
        self.arrays = {}
        self.locks = {}
        self.global_lock = threading.RLock()
        self.ticket = AtomicCounter()
        self.applied = AtomicCounter()
        self._log_lock = threading.Lock()
        self.delay_log = []
        self.history = None
        self.read_log = None

    def add_array(self, name, array, locked=False):
        self.arrays[name] = array
        if locked:
            self.locks[name] = [threading.Lock() for _ in range(len(array))]
        return array

    def enable_history(self, names):
        """Record a copy of the named arrays after every applied update
        (atom-mode read-consistency checks; O(K dim) memory)."""
        self.history = {"names": tuple(names), "states": []}

    def _record_history(self):
        if self.history is not None:
            self.history["states"].append(
                tuple(self.arrays[n].copy() for n in self.history["names"]))

    def log_delay(self, k, j):
        with self._log_lock:
            self.delay_log.append((k, j))


def apply_coordinate_delta(shared, name, i, delta, product_updates=()):
    """Add ``delta`` to coordinate i of ``name`` plus dependent product entries.

    atom: the whole update is one critical section.  wild: the parameter
    coordinate and every product entry are updated under their
    per-coordinate locks, acquired in ascending index order; the sum of
    applied deltas is exactly preserved under any interleaving.
    """
    if not math.isfinite(delta):
        raise ValueError("non-finite update")
    if shared.mode == "atom":
        with shared.global_lock:
            shared.arrays[name][i] += delta
            for pname, idx, vals in product_updates:
                shared.arrays[pname][idx] += vals
        return
    with shared.locks[name][i]:
        shared.arrays[name][i] += delta
    for pname, idx, vals in product_updates:
        table = shared.locks[pname]
        arr = shared.arrays[pname]
        order = np.argsort(idx, kind="stable")  # ascending lock order
        for q in order:
            c = int(idx[q])
            with table[c]:
                arr[c] += vals[q]


class UpdateOrderQueue:
    """Predefined read/apply order with a per-slot gradient mailbox.

    Slot k reads the shared state at version j(k) = max(0, k - zeta + 1)
    and its update is applied exactly at version k, in slot order.  The
    version may not advance past a still-pending predefined read, so the
    read points are deterministic: the whole run behaves like the
    fixed-delay schedule with tau = zeta - 1.
    """

    def __init__(self, n_slots, zeta):
        if zeta < 1:
            raise ValueError("need zeta >= 1")
        self.n_slots = n_slots
        self.zeta = zeta
        self.applied = 0
        self._cv = threading.Condition()
        # how many predefined reads happen at each version
        self._pending_reads = [0] * n_slots
        for k in range(n_slots):
            self._pending_reads[self.read_version(k)] += 1

    def read_version(self, k):
        return max(0, k - self.zeta + 1)

    def run_slot(self, k, read_fn, compute_fn, apply_fn):
        """Read at the predefined version, compute outside the lock, apply
        in slot order."""
        j = self.read_version(k)
        with self._cv:
            while self.applied != j:
                self._cv.wait()
            snapshot = read_fn()
            self._pending_reads[j] -= 1
            self._cv.notify_all()
        update = compute_fn(snapshot, k - j)
        with self._cv:
            while self.applied != k or self._pending_reads[k] > 0:
                self._cv.wait()
            apply_fn(k, update)
            self.applied += 1
            self._cv.notify_all()
        return j


# ---------------------------------------------------------------------------
# delay logs


def write_delay_log(path, pairs):
    """Binary delay log: little-endian int64 (k, j) pairs."""
    with open(path, "wb") as fh:
        for k, j in pairs:
            fh.write(struct.pack("<qq", k, j))


def read_delay_log(path):
    pairs = []
    with open(path, "rb") as fh:
        while True:
            chunk = fh.read(16)
            if not chunk:
                break
            pairs.append(struct.unpack("<qq", chunk))
    return pairs


@dataclass
class DelayReport:
    max_delay: int
    mean_delay: float
    histogram: np.ndarray


def measure_delay(pairs):
    """Empirical tau distribution from logged (k, j(k)) pairs."""
    if not len(pairs):
        return DelayReport(0, 0.0, np.zeros(1, dtype=np.int64))
    delays = np.array([k - j for k, j in pairs], dtype=np.int64)
    hist = np.bincount(delays)
    return DelayReport(int(delays.max()), float(delays.mean()), hist)


# ---------------------------------------------------------------------------
# parallel drivers


@dataclass
class ParallelRun:
    result: SolverResult
    delay_report: DelayReport
    threads: int
    mode: str
    seconds: float
    iterations: int
    delay_pairs: list = field(default_factory=list)


def _spawn_and_join(target, n_threads, args=()):
    """Run n copies of ``target``; re-raise the first worker exception."""
    errors = []

    def wrap():
        try:
            target(*args)
        except BaseException as exc:
            errors.append(exc)

    threads = [threading.Thread(target=wrap) for _ in range(n_threads)]
    for t in threads:
        t.start()
    for t in threads:
        t.join()
    if errors:
        raise errors[0]


def run_parallel(algo, problem, gamma=None, P=1, mode="atom", seed=0,
                 budget=None, target_residual=None, f_star=math.nan,
                 order_queue=False, grad_mode="exact",
                 step_rule=("constant", 0.01), epochs=None, m=None,
                 regime="nc", record_every=None, log_delays=True,
                 log_history=False):
    """Run ``algo`` with P worker threads on shared state.

    The returned trace carries monotonic wall-clock seconds.  With P = 1,
    atom mode and the order queue, execution is a total order and the
    trace matches the deterministic python engine step for step.
    """
    if P < 1:
        raise ValueError("need P >= 1")
    if algo == "aasvrg":
        if mode == "wild":
            raise ValueError("aasvrg runs atom-only here: its x/z updates are "
                             "dense, so wild per-coordinate writes do not apply")
        return _parallel_aasvrg(problem, gamma, P, seed, epochs or 10, m, regime,
                                f_star, target_residual, order_queue, grad_mode,
                                log_delays, log_history)
    if algo == "aagd":
        if mode == "wild":
            raise ValueError("aagd runs atom-only here: its prox update is a "
                             "dense vector step")
        return _parallel_aagd(problem, gamma, P, seed, budget or 1000, regime,
                              f_star, target_residual, order_queue,
                              record_every, log_delays)
    if algo == "aascd":
        return _parallel_aascd(problem, gamma, P, mode, seed, budget or 1000,
                               regime, f_star, target_residual, record_every,
                               log_delays)
    if algo == "sgd":
        return _parallel_sgd(problem, P, mode, seed, budget or 1000, step_rule,
                             f_star, target_residual, record_every, log_delays)
    raise ValueError(f"unsupported parallel algo {algo!r}")


def _parallel_aasvrg(problem, gamma, P, seed, S, m, regime, f_star,
                     target_residual, order_queue, grad_mode, log_delays,
                     log_history):
    """Epoch-synchronized compensated variance reduction on shared (x, z).

    Workers read (x, x_prev, applied-count) as one consistent snapshot,
    compute the compensated VR gradient outside the lock, then prox-apply
    against apply-time state.  Epoch boundaries are full barriers (thread
    joins) followed by the snapshot and its full gradient.
    """
    smooth = problem.smooth
    n = smooth.n
    m = m or n
    h = problem.nonsmooth
    dim = problem.dim
    theta2 = 0.5
    tau_cap = max(4 * P, 8)      # compensation horizon for the hvp estimator
    shared = SharedState("atom")
    x = shared.add_array("x", np.zeros(dim))
    x_prev = shared.add_array("x_prev", np.zeros(dim))
    z = shared.add_array("z", np.zeros(dim))
    if log_history:
        shared.enable_history(("x",))
        shared._record_history()
        shared.read_log = []
    x_tilde = np.zeros(dim)
    gbar = problem.full_grad(x_tilde)
    evals = n
    trace = Trace()
    t0 = time.monotonic()
    trace.record(0, problem.objective(x), evals, f_star, seconds=0.0)
    snap = np.zeros(dim)
    wsum = [0.0]
    total = 0

    def worker(th1, a_s, k_base, end):
        # free-running: the eventual apply index is unknown at compute time,
        # so the compensation uses the ticket-based delay estimate (this is
        # the inconsistency the predefined order removes); the log records
        # the true apply-time delay
        while True:
            k = shared.ticket.next_value()
            if k >= end:
                return
            kg = k_base + k
            i = rand_index(seed, kg, n)
            with shared.global_lock:
                x_r = x.copy()
                xp_r = x_prev.copy()
                j = shared.applied.value
                if shared.read_log is not None:
                    shared.read_log.append(x_r.copy())
            delay = max(k - j, 0)
            g = _aasvrg_gradient(problem, x_tilde, gbar, a_s, x_r, xp_r, delay,
                                 i, grad_mode, tau_cap)
            with shared.global_lock:
                snap[:] = snap + x
                wsum[0] += 1.0
                z_new, x_new = _aasvrg_apply(h, z, x, x_tilde, th1, theta2,
                                             a_s, gamma, g)
                x_prev[:] = x
                x[:] = x_new
                z[:] = z_new
                k_true = shared.applied.next_value()
                shared._record_history()
            if log_delays:
                shared.log_delay(k_base + k_true, k_base + j)

    def ordered_worker(queue, th1, a_s, k_base):
        def read_fn():
            return x.copy(), x_prev.copy()
        def apply_fn(k, g):
            nonlocal_apply(k_base + k, th1, a_s, g)
        while True:
            k = shared.ticket.next_value()
            if k >= queue.n_slots:
                return
            kg = k_base + k
            i = rand_index(seed, kg, n)
            def compute_fn(snapshot, delay, i=i):
                x_r, xp_r = snapshot
                return _aasvrg_gradient(problem, x_tilde, gbar, a_s, x_r, xp_r,
                                        delay, i, grad_mode, tau_cap)
            j = queue.run_slot(k, read_fn, compute_fn, apply_fn)
            if log_delays:
                shared.log_delay(kg, k_base + j)

    def nonlocal_apply(kg, th1, a_s, g):
        snap[:] = snap + x
        wsum[0] += 1.0
        z_new, x_new = _aasvrg_apply(h, z, x, x_tilde, th1, theta2, a_s,
                                     gamma, g)
        x_prev[:] = x
        x[:] = x_new
        z[:] = z_new
        shared._record_history()

    for s in range(S):
        th1 = aasvrg_theta1(regime, s, n=n, mu=problem.mu, L=problem.L_comp,
                            tau=None)
        a_s = 1.0 - theta2 - th1
        k_base = s * m
        snap[:] = 0.0
        wsum[0] = 0.0
        x_prev[:] = x      # momentum resets at the epoch boundary
        shared.ticket = AtomicCounter()
        shared.applied = AtomicCounter()
        if order_queue:
            queue = UpdateOrderQueue(m, zeta=P)
            _spawn_and_join(ordered_worker, P, (queue, th1, a_s, k_base))
        else:
            _spawn_and_join(worker, P, (th1, a_s, k_base, m))
        total += m
        x_tilde = snap / max(wsum[0], 1.0)
        gbar = problem.full_grad(x_tilde)
        evals += m + n
        trace.record(total, problem.objective(x), evals, f_star,
                     seconds=time.monotonic() - t0)
        if target_residual is not None and math.isfinite(f_star) \
                and trace.residuals[-1] <= target_residual:
            break
    seconds = time.monotonic() - t0
    res = SolverResult(x=x.copy(), trace=trace,
                       aux={"z": z.copy(), "history": shared.history,
                            "reads": shared.read_log})
    return ParallelRun(result=res, delay_report=measure_delay(shared.delay_log),
                       threads=P, mode="atom", seconds=seconds, iterations=total,
                       delay_pairs=shared.delay_log)


def _parallel_aagd(problem, gamma, P, seed, K, regime, f_star, target_residual,
                   order_queue, record_every, log_delays):
    """Full-gradient compensated method on the shared (u, v) state.

    A free-running worker cannot know its apply index (hence d_{k+1}) at
    read time, so without the order queue the gradient is assembled by
    the quadratic split grad f(u) + d_{k+1} H v, whose pieces are
    computed outside the lock and combined with the true d at apply time
    (exact for quadratic losses, rejected otherwise).  With the order
    queue the read point is predefined and w is reconstructed directly.
    """
    smooth = problem.smooth
    if not order_queue and getattr(smooth, "loss", None) != "squared":
        raise ValueError("free-running aagd needs the predefined update order "
                         "unless f is quadratic (quadratic gradient split)")
    n = smooth.n_components
    dim = problem.dim
    h = problem.nonsmooth
    ts = _theta_schedule("aagd", regime, problem, gamma)
    d_vals = np.empty(K + 2)
    d_vals[0] = 1.0
    for k in range(K + 1):
        th = ts.theta(k)
        # theta_0 = 1 collapses d; reseed like the deterministic uv form
        d_vals[k + 1] = 1.0 if (k == 0 and th >= 1.0) else d_vals[k] * (1.0 - th)
    shared = SharedState("atom")
    u = shared.add_array("u", np.zeros(dim))
    v = shared.add_array("v", np.zeros(dim))
    evals = [0]
    trace = Trace()
    t0 = time.monotonic()
    trace.record(0, problem.objective(u), 0, f_star, seconds=0.0)
    record_every = record_every or 1
    record_lock = threading.Lock()

    def apply_update(g, j_read):
        k_t = shared.applied.value
        th = ts.theta(k_t)
        delta = h.prox(u, g, th / gamma)
        u[:] = u + delta
        if k_t == 0 and th >= 1.0:
            v[:] = (th - 1.0) * delta / d_vals[1]
        else:
            v[:] = v - delta / d_vals[k_t]
        k_done = shared.applied.next_value() + 1
        evals[0] += n
        if log_delays:
            shared.log_delay(k_done - 1, min(j_read, k_done - 1))
        return k_done

    def record_point(k_done):
        if k_done % record_every == 0 or k_done == K:
            with record_lock:
                if not trace.steps or trace.steps[-1] < k_done:
                    xk = u + d_vals[k_done] * v
                    trace.record(k_done, problem.objective(xk), evals[0],
                                 f_star, seconds=time.monotonic() - t0)

    def worker_split():
        while True:
            k = shared.ticket.next_value()
            if k >= K:
                return
            with shared.global_lock:
                u_r = u.copy()
                v_r = v.copy()
                j = shared.applied.value
            g_u = smooth.full_grad(u_r)
            hv = smooth.X.rmatvec(smooth.X.matvec(v_r)) / smooth.n
            with shared.global_lock:
                k_t = shared.applied.value
                g = g_u + d_vals[k_t + 1] * hv
                k_done = apply_update(g, j)
                record_point(k_done)   # consistent (u, v) needs the lock

    def worker_ordered(queue):
        def read_fn():
            return u.copy(), v.copy()
        while True:
            k = shared.ticket.next_value()
            if k >= K:
                return
            def compute_fn(snapshot, delay, k=k):
                u_r, v_r = snapshot
                w = u_r + d_vals[k + 1] * v_r
                return problem.full_grad(w)
            def apply_fn(kk, g):
                k_done = apply_update(g, queue.read_version(kk))
                record_point(k_done)
            queue.run_slot(k, read_fn, compute_fn, apply_fn)

    if order_queue:
        queue = UpdateOrderQueue(K, zeta=P)
        _spawn_and_join(worker_ordered, P, (queue,))
    else:
        _spawn_and_join(worker_split, P)
    seconds = time.monotonic() - t0
    x_final = u + d_vals[K] * v
    res = SolverResult(x=x_final, trace=trace, aux={"u": u, "v": v})
    return ParallelRun(result=res, delay_report=measure_delay(shared.delay_log),
                       threads=P, mode="atom", seconds=seconds, iterations=K,
                       delay_pairs=shared.delay_log)


def _parallel_aascd(problem, gamma, P, mode, seed, K, regime, f_star,
                    target_residual, record_every, log_delays):
    """Coordinate descent on the shared change-of-variable state.

    Shared (u, v) plus the linear auxiliary products of both.  The decay
    scalars d_k are pure functions of k, so a worker forms the delayed
    compensated read from (aux_u, aux_v, d_{k+1}) alone; wild mode keeps
    the products consistent with per-coordinate locks while full reads
    stay torn.
    """
    n = problem.dim
    h = problem.nonsmooth
    if not h.separable:
        raise ValueError("coordinate descent needs separable h")
    oracle = _CoordOracle(problem.smooth)
    ts = _theta_schedule("aascd", regime, problem, gamma, n=n)
    # horizons here sit far above the underflow range of the plain product;
    # the deterministic engine owns the scaled representation
    d_vals = np.empty(K + 1)
    d_vals[0] = 1.0
    for k in range(K):
        d_vals[k + 1] = d_vals[k] * (1.0 - ts.theta(k))
    wild = mode == "wild"
    shared = SharedState(mode)
    u = shared.add_array("u", np.zeros(n), locked=wild)
    v = shared.add_array("v", np.zeros(n), locked=wild)
    aux0 = oracle.aux(np.zeros(n))
    aux_u = shared.add_array("aux_u", aux0.copy(), locked=wild)
    aux_v = shared.add_array("aux_v", np.zeros_like(aux0), locked=wild)
    evals = [0]
    trace = Trace()
    t0 = time.monotonic()
    trace.record(0, problem.objective(np.zeros(n)), 0, f_star, seconds=0.0)
    record_every = record_every or max(1, n)
    record_lock = threading.Lock()

    def worker():
        while True:
            k = shared.ticket.next_value()
            if k >= K:
                return
            th = ts.theta(k)
            dval = d_vals[k + 1]
            i = rand_index(seed, k, n)
            rows, _ = oracle.pattern(i)
            if mode == "atom":
                with shared.global_lock:
                    au = aux_u[rows].copy()
                    av = aux_v[rows].copy()
                    j = shared.applied.value
            else:
                au = aux_u[rows].copy()
                av = aux_v[rows].copy()
                j = shared.applied.value
            g_i = oracle.coord_grad_restricted(i, au + dval * av)
            vcoef = (n * th - 1.0) / dval
            idx, avals = oracle.pattern(i)
            if mode == "atom":
                with shared.global_lock:
                    delta = h.prox_coord(u[i], g_i, n * th / gamma, i)
                    u[i] += delta
                    v[i] += vcoef * delta
                    aux_u[idx] += delta * avals
                    aux_v[idx] += vcoef * delta * avals
            else:
                with shared.locks["u"][i]:
                    delta = h.prox_coord(u[i], g_i, n * th / gamma, i)
                    u[i] += delta
                with shared.locks["v"][i]:
                    v[i] += vcoef * delta
                for arr_name, scale in (("aux_u", delta), ("aux_v", vcoef * delta)):
                    table = shared.locks[arr_name]
                    arr = shared.arrays[arr_name]
                    for q in range(len(idx)):   # CSR indices already ascend
                        c = int(idx[q])
                        with table[c]:
                            arr[c] += scale * avals[q]
            k_done = shared.applied.next_value() + 1
            evals[0] += 1
            if log_delays:
                shared.log_delay(k_done - 1, min(j, k_done - 1))
            if k_done % record_every == 0 or k_done == K:
                with record_lock:
                    if not trace.steps or trace.steps[-1] < k_done:
                        xk = u + d_vals[min(k_done, K)] * v
                        trace.record(k_done, problem.objective(xk), evals[0],
                                     f_star, seconds=time.monotonic() - t0)

    _spawn_and_join(worker, P)
    seconds = time.monotonic() - t0
    x_final = u + d_vals[K] * v
    res = SolverResult(x=x_final, trace=trace,
                       aux={"u": u, "v": v, "aux_u": aux_u, "aux_v": aux_v})
    return ParallelRun(result=res, delay_report=measure_delay(shared.delay_log),
                       threads=P, mode=mode, seconds=seconds, iterations=K,
                       delay_pairs=shared.delay_log)


def _parallel_sgd(problem, P, mode, seed, K, step_rule, f_star, target_residual,
                  record_every, log_delays):
    """Hogwild-style delayed stochastic gradient on the shared iterate.

    wild mode supports h = 0 (sparse per-coordinate writes); atom mode
    proxes any supported h inside the critical section.
    """
    smooth = problem.smooth
    n = smooth.n_components
    h = problem.nonsmooth
    if mode == "wild" and h.family != "zero":
        raise ValueError("wild sgd supports h = 0 only: a proximal step on a "
                         "coupled h is not a per-coordinate write")
    dim = problem.dim
    shared = SharedState(mode)
    x = shared.add_array("x", np.zeros(dim), locked=(mode == "wild"))
    evals = [0]
    trace = Trace()
    t0 = time.monotonic()
    trace.record(0, problem.objective(x), 0, f_star, seconds=0.0)
    record_every = record_every or max(1, n)
    record_lock = threading.Lock()

    def worker():
        while True:
            k = shared.ticket.next_value()
            if k >= K:
                return
            eta = sgd_step_size(step_rule, k)
            i = rand_index(seed, k, n)
            if mode == "atom":
                with shared.global_lock:
                    x_r = x.copy()
                    j = shared.applied.value
            else:
                x_r = x.copy()
                j = shared.applied.value
            if mode == "atom":
                g = smooth.component_grad(x_r, i)
                with shared.global_lock:
                    delta = h.prox(x, g, 1.0 / eta)
                    x[:] = x + delta
            else:
                idx, vals = smooth.X.row(i)
                d = float(loss_scalar_deriv(smooth, x_r, idx, vals, i))
                for q in range(len(idx)):
                    c = int(idx[q])
                    with shared.locks["x"][c]:
                        x[c] -= eta * d * vals[q]
            k_done = shared.applied.next_value() + 1
            evals[0] += 1
            if log_delays:
                shared.log_delay(k_done - 1, min(j, k_done - 1))
            if k_done % record_every == 0 or k_done == K:
                with record_lock:
                    if not trace.steps or trace.steps[-1] < k_done:
                        trace.record(k_done, problem.objective(x.copy()), evals[0],
                                     f_star, seconds=time.monotonic() - t0)

    _spawn_and_join(worker, P)
    seconds = time.monotonic() - t0
    res = SolverResult(x=x.copy(), trace=trace)
    return ParallelRun(result=res, delay_report=measure_delay(shared.delay_log),
                       threads=P, mode=mode, seconds=seconds, iterations=K,
                       delay_pairs=shared.delay_log)


def loss_scalar_deriv(smooth, x, idx, vals, i):
    """phi'(a_i . x) for one component (sparse dot, no allocation)."""
    t = float(vals @ x[idx])
    return loss_deriv(smooth.loss, t, smooth.labels[i])


def quadratic_split_grad(problem, u, v, dscale):
    """grad f(u + d v) via grad f(u) + d * H(u) v; exact for quadratic f.

    For homogeneous quadratics this is the plain split grad f(u) +
    d grad f(v); the Hessian-action form stays exact when the gradient is
    affine (least squares with targets).
    """
    smooth = problem.smooth
    hv = smooth.X.rmatvec(loss_second_deriv_vec(smooth, u) * smooth.X.matvec(v)) \
        / smooth.n
    return smooth.full_grad(u) + dscale * hv


def loss_second_deriv_vec(smooth, x):
    return loss_second_deriv(smooth.loss, smooth.X.matvec(x), smooth.labels)


# ---------------------------------------------------------------------------
# speedup accounting


@dataclass
class SpeedupRow:
    threads: int
    iters: int
    seconds: float
    iteration_speedup: float
    time_speedup: float


@dataclass
class SpeedupReport:
    """Iteration speedup = (serial iters / async iters) x P.

    Time speedup is hardware- and interpreter-dependent; it is reported,
    never asserted.
    """

    target_residual: float
    serial_iters: int
    serial_seconds: float
    rows: list = field(default_factory=list)


def _iters_to_target(trace, target):
    for pos, res in enumerate(trace.residuals):
        if math.isfinite(res) and res <= target:
            return trace.steps[pos], trace.seconds[pos]
    return None, None


def speedup(serial_trace, parallel_traces, target_residual):
    """Per-thread-count speedup report; errors if any run misses the target."""
    s_iters, s_secs = _iters_to_target(serial_trace, target_residual)
    missing = []
    if s_iters is None:
        missing.append("serial")
    rows = []
    for P in sorted(parallel_traces):
        it, secs = _iters_to_target(parallel_traces[P], target_residual)
        if it is None:
            missing.append(f"P={P}")
            continue
        rows.append((P, it, secs))
    if missing:
        raise ValueError("target residual "
                         f"{target_residual:g} not reached by: {', '.join(missing)}")
    report = SpeedupReport(target_residual=target_residual, serial_iters=s_iters,
                           serial_seconds=s_secs)
    for P, it, secs in rows:
        report.rows.append(SpeedupRow(
            threads=P, iters=it, seconds=secs,
            iteration_speedup=(s_iters / it) * P,
            time_speedup=(s_secs / secs) if secs and secs > 0 else math.nan))
    return report


# ---------------------------------------------------------------------------
# stress harnesses (used by the acceptance suite)


def contention_test(n_coords, n_threads, increments_per_thread, mode="wild",
                    same_coordinate=False, seed=0):
    """Concurrent +1.0 increments; returns (array, expected_total).

    Exactness of the total is the no-lost-updates contract of
    per-coordinate application.
    """
    shared = SharedState(mode)
    arr = shared.add_array("x", np.zeros(n_coords), locked=True)

    def worker(wid):
        for t in range(increments_per_thread):
            i = 0 if same_coordinate else rand_index(seed + wid, t, n_coords)
            apply_coordinate_delta(shared, "x", i, 1.0)

    threads = [threading.Thread(target=worker, args=(w,)) for w in range(n_threads)]
    for t in threads:
        t.start()
    for t in threads:
        t.join()
    return arr, float(n_threads * increments_per_thread)


def deadlock_stress(n_coords, n_threads, duration_seconds, collision_width=4,
                    seed=0):
    """Adversarial multi-lock acquisition for a fixed duration.

    Every operation grabs ``collision_width`` overlapping coordinate locks
    in ascending order; returns (completed operations, array).  Completing
    and joining within the duration is the no-deadlock certificate.
    """
    shared = SharedState("wild")
    arr = shared.add_array("x", np.zeros(n_coords), locked=True)
    done = [0] * n_threads
    stop = time.monotonic() + duration_seconds

    def worker(wid):
        t = 0
        while time.monotonic() < stop:
            base = rand_index(seed + wid, t, n_coords - collision_width)
            idx = np.arange(base, base + collision_width)
            vals = np.ones(collision_width)
            apply_coordinate_delta(shared, "x", int(base), 1.0,
                                   [("x", idx, vals)])
            done[wid] += 1
            t += 1

    threads = [threading.Thread(target=worker, args=(w,)) for w in range(n_threads)]
    for t in threads:
        t.start()
    for t in threads:
        t.join()
    return sum(done), arr
