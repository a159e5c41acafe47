"""Deterministic bounded-delay schedules and counter-based random streams.

Every source of randomness in the simulator (delay draws, coordinate and
component indices) is a pure function of ``(seed, counter)``.  This makes
schedules total, order-independent and byte-for-byte reproducible: two
solver variants that consume the same ``(seed, k)`` stream see identical
randomness regardless of evaluation order or thread interleaving.
"""

from dataclasses import dataclass, field

import numpy as np
from numba import njit

_MASK64 = (1 << 64) - 1
_GAMMA = 0x9E3779B97F4A7C15
_MIX1 = 0xBF58476D1CE4E5B9
_MIX2 = 0x94D049BB133111EB


def splitmix64(seed, k):
    """64-bit hash of ``(seed, k)`` (splitmix64 finalizer, pure Python)."""
    z = ((seed * 0x632BE59BD9B4E019) ^ k) & _MASK64
    z = (z + _GAMMA) & _MASK64
    z = ((z ^ (z >> 30)) * _MIX1) & _MASK64
    z = ((z ^ (z >> 27)) * _MIX2) & _MASK64
    return z ^ (z >> 31)


@njit(cache=True, nogil=True)
def splitmix64_nb(seed, k):  # pragma: no cover - exercised via kernels
    """numba twin of :func:`splitmix64`; uint64 wrap-around replaces masking."""
    z = (np.uint64(seed) * np.uint64(0x632BE59BD9B4E019)) ^ np.uint64(k)
    z = z + np.uint64(_GAMMA)
    z = (z ^ (z >> np.uint64(30))) * np.uint64(_MIX1)
    z = (z ^ (z >> np.uint64(27))) * np.uint64(_MIX2)
    return z ^ (z >> np.uint64(31))


def rand_index(seed, k, n):
    """Deterministic draw from ``{0, ..., n-1}`` keyed by ``(seed, k)``."""
    return int(splitmix64(seed, k) % n)


@njit(cache=True, nogil=True)
def rand_index_nb(seed, k, n):  # pragma: no cover
    return int(splitmix64_nb(seed, k) % np.uint64(n))


def component_stream(seed, n_steps, n):
    """Vector of component/coordinate indices i_k for k = 0..n_steps-1.

    Solver variants that must consume identical randomness (naive vs
    efficient forms, serial vs parallel runs) all derive i_k from this
    stream with the same seed.
    """
    return np.array([rand_index(seed, k, n) for k in range(n_steps)], dtype=np.int64)


# delay-schedule kind ids shared with the numba kernels
KIND_SERIAL = 0
KIND_FIXED = 1
KIND_UNIFORM = 2
KIND_TRACE = 3

_KIND_NAMES = {"serial": KIND_SERIAL, "fixed": KIND_FIXED,
               "uniform": KIND_UNIFORM, "trace": KIND_TRACE}


@njit(cache=True, nogil=True)
def schedule_j_nb(kind, tau, seed, serial_warmup, trace, k):  # pragma: no cover
    """Read-state index j(k); numba twin of DelaySchedule.j."""
    if kind == KIND_SERIAL:
        return k
    if serial_warmup and k < tau:
        return k
    if kind == KIND_FIXED:
        return max(0, k - tau)
    if kind == KIND_TRACE:
        return trace[k]
    window = min(tau, k)
    return k - int(splitmix64_nb(seed, k) % np.uint64(window + 1))


@dataclass(frozen=True)
class DelaySchedule:
    """Total map k -> j(k) with j(k) in {max(0, k-tau), ..., k}.

    The single source of asynchrony in deterministic mode.  ``uniform``
    draws j(k) uniformly from the legal window, keyed by ``(seed, k)`` so
    the schedule is reproducible and order-independent.  With
    ``serial_warmup`` the first tau iterations read the current state
    (j(k) = k), matching the serial-start assumption of the full-gradient
    analysis.
    """

    kind: str
    tau: int
    horizon: int
    seed: int = 0
    serial_warmup: bool = False
    trace: np.ndarray | None = field(default=None, repr=False)

    def __post_init__(self):
        if self.kind not in _KIND_NAMES:
            raise ValueError(f"unknown schedule kind {self.kind!r}")
        if self.tau < 0 or self.horizon < 1:
            raise ValueError("need tau >= 0 and horizon >= 1")
        if self.kind == "trace":
            if self.trace is None or len(self.trace) < self.horizon:
                raise ValueError("trace schedule needs one j(k) per step")

    @property
    def kind_id(self):
        return _KIND_NAMES[self.kind]

    def j(self, k):
        if not 0 <= k < self.horizon:
            raise IndexError(f"step {k} outside horizon {self.horizon}")
        if self.kind == "serial":
            return k
        if self.serial_warmup and k < self.tau:
            return k
        if self.kind == "fixed":
            return max(0, k - self.tau)
        if self.kind == "trace":
            return int(self.trace[k])
        window = min(self.tau, k)
        return k - rand_index(self.seed, k, window + 1)

    def delays(self):
        """Array of k - j(k) over the horizon."""
        return np.array([k - self.j(k) for k in range(self.horizon)], dtype=np.int64)

    def trace_array(self):
        """Trace array for the numba kernels (empty unless kind='trace')."""
        if self.kind == "trace":
            return np.asarray(self.trace[: self.horizon], dtype=np.int64)
        return np.empty(0, dtype=np.int64)


def make_schedule(kind, tau, horizon, seed=0, serial_warmup=False, trace=None):
    """Build a DelaySchedule (see class docstring for the window contract)."""
    if trace is not None:
        trace = np.asarray(trace, dtype=np.int64)
    return DelaySchedule(kind=kind, tau=tau, horizon=horizon, seed=seed,
                         serial_warmup=serial_warmup, trace=trace)


def load_trace_schedule(path, tau, serial_warmup=False):
    """Trace schedule from a one-integer-per-line text file."""
    values = np.loadtxt(path, dtype=np.int64, ndmin=1)
    return make_schedule("trace", tau, len(values), serial_warmup=serial_warmup,
                         trace=values)


@dataclass
class ScheduleReport:
    max_delay: int
    histogram: np.ndarray  # histogram[d] = #steps with delay d
    violations: int
    first_violation: int | None


def verify_schedule(schedule):
    """Check the bounded-delay window invariant for every k in the horizon."""
    hist = np.zeros(schedule.tau + 1, dtype=np.int64)
    max_delay = 0
    violations = 0
    first = None
    for k in range(schedule.horizon):
        j = schedule.j(k)
        d = k - j
        legal = max(0, k - schedule.tau) <= j <= k
        if not legal:
            violations += 1
            if first is None:
                first = k
            continue
        hist[d] += 1
        max_delay = max(max_delay, d)
    return ScheduleReport(max_delay=max_delay, histogram=hist,
                          violations=violations, first_violation=first)


@dataclass
class OverlapStats:
    """Sparsity-induced effective-delay measurement.

    ``mean_counts[i]`` is the average, over steps k, of the number of
    updates touching coordinate i inside the stale window [j(k), k).
    For supports generated i.i.d. with density beta_i the expectation is
    beta_i * (k - j(k)).  ``delta_hat`` is the empirical constant of the
    sparsity assumption: the largest per-coordinate touch frequency,
    i.e. the smallest Delta with E_i ||x||^2_{support_i} <= Delta ||x||^2
    for all x.
    """

    mean_counts: np.ndarray
    densities: np.ndarray
    n_steps: int
    delta_hat: float


def measure_overlap(updates, schedule, dim=None):
    """Per-coordinate overlap counts of sparse updates under a delay schedule.

    Parameters
    ----------
    updates : sequence of integer index arrays
        Support (touched coordinates) of each iteration's update, aligned
        with the schedule horizon.
    schedule : DelaySchedule
    dim : int, optional
        Number of coordinates; inferred from the supports if omitted.
    """
    n_steps = schedule.horizon
    if len(updates) < n_steps:
        raise ValueError("updates shorter than schedule horizon")
    if dim is None:
        dim = 1 + max((int(u.max()) for u in updates if len(u)), default=-1)

    occurrences = [[] for _ in range(dim)]
    for k in range(n_steps):
        for i in np.asarray(updates[k]).ravel():
            occurrences[int(i)].append(k)

    js = np.array([schedule.j(k) for k in range(n_steps)], dtype=np.int64)
    ks = np.arange(n_steps, dtype=np.int64)
    mean_counts = np.zeros(dim)
    densities = np.zeros(dim)
    for i in range(dim):
        occ = np.asarray(occurrences[i], dtype=np.int64)
        densities[i] = len(occ) / n_steps
        if len(occ) == 0:
            continue
        # occurrences inside [j(k), k) for every k, via sorted-position counts
        counts = np.searchsorted(occ, ks) - np.searchsorted(occ, js)
        mean_counts[i] = counts.mean()
    delta_hat = float(densities.max()) if dim else 0.0
    return OverlapStats(mean_counts=mean_counts, densities=densities,
                        n_steps=n_steps, delta_hat=delta_hat)
