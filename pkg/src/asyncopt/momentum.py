"""Momentum schedules, compensation coefficients and admissible step sizes.

The compensated extrapolation point pushes a stale iterate forward by the
momentum it missed:

    w = x_j + (sum_{i} prod_{l} a_l) (x_j - x_{j-1})

where a_k is the serial extrapolation coefficient.  This module owns the
a/b/c coefficient algebra, the theta schedules of the three algorithms,
the largest step sizes admitted by their convergence conditions, and the
(significand, exponent) representation of the decaying scalar d_k used by
the change-of-variable solver forms.
"""

import math
from dataclasses import dataclass

ALGOS = ("aagd", "aascd", "aasvrg")
REGIMES = ("nc", "sc")

# a_k conventions. "extrapolation" is theta_k (1 - theta_{k-1}) / theta_{k-1},
# the coefficient that makes the serial extrapolation identity exact (and the
# zero-delay reduction to the serial method exact with it).  "supplement" is
# the theta_k (1 - theta_k) / theta_{k-1} variant printed in the derivation;
# it is kept selectable for A/B comparison but is not used by the solvers.
A_EXTRAPOLATION = "extrapolation"
A_SUPPLEMENT = "supplement"


def solve_theta_sc(gamma, mu, n=1):
    """Constant theta for the strongly convex regime.

    Root of n^2 theta^2 + n gamma mu theta - gamma mu = 0, i.e.
    theta = (-gamma mu + sqrt((gamma mu)^2 + 4 gamma mu)) / (2 n),
    which satisfies sqrt(gamma mu)/2 <= n theta <= sqrt(gamma mu).
    """
    if gamma <= 0 or mu <= 0:
        raise ValueError("need gamma > 0 and mu > 0")
    gm = gamma * mu
    if gm > 1:
        raise ValueError(f"gamma*mu = {gm:g} > 1 is outside the regime the bound uses")
    return (-gm + math.sqrt(gm * gm + 4.0 * gm)) / (2.0 * n)


def aasvrg_theta1(regime, s, n=None, mu=None, L=None, tau=None, gamma=None):
    """Per-epoch theta_1 for the variance-reduced solver.

    NC: 2/(s+4).  SC: (1/tau) sqrt(n mu / L), capped at theta_2 = 1/2 (the
    formula's own assumption mu <= L tau^2 / (4n) keeps it below the cap);
    tau = 0 means the serial limit min(sqrt(n mu / L), 1/2).
    """
    if regime == "nc":
        return 2.0 / (s + 4.0)
    if mu is None or mu <= 0:
        raise ValueError("SC regime needs mu > 0")
    if tau is None or tau == 0:
        return min(math.sqrt(n * mu / L), 0.5)
    return min(math.sqrt(n * mu / L) / tau, 0.5)


def theta3(theta1, mu, gamma):
    """Weight base of the SC snapshot average: theta_3 = 1 + mu gamma / theta_1."""
    return 1.0 + mu * gamma / theta1


@dataclass(frozen=True)
class ThetaSchedule:
    """theta_k schedule for one algorithm/regime pair.

    ``theta(k)`` is defined for every k >= -1 (the k = -1 value enters the
    coordinate-descent bound constant).  NC schedules are nonincreasing,
    SC schedules constant.  For the variance-reduced algorithm the index
    is the epoch.
    """

    algo: str
    regime: str
    n: int = 1
    tau: int = 0
    gamma: float | None = None
    mu: float | None = None
    L: float | None = None

    def __post_init__(self):
        if self.algo not in ALGOS:
            raise ValueError(f"unknown algo {self.algo!r}")
        if self.regime not in REGIMES:
            raise ValueError(f"unknown regime {self.regime!r}")
        if self.regime == "sc" and self.algo in ("aagd", "aascd"):
            if self.gamma is None or self.mu is None:
                raise ValueError("SC schedule needs gamma and mu")
            # cache the constant root once; frozen dataclass, so object.__setattr__
            object.__setattr__(self, "_theta_const",
                               solve_theta_sc(self.gamma, self.mu, self.n))
        elif self.regime == "sc":
            object.__setattr__(self, "_theta_const",
                               aasvrg_theta1("sc", 0, self.n, self.mu, self.L,
                                             self.tau))

    def theta(self, k):
        if k < -1:
            raise ValueError("theta defined for k >= -1")
        if self.regime == "sc":
            return self._theta_const
        if self.algo == "aagd":
            return 2.0 / (k + 2.0)
        if self.algo == "aascd":
            return 2.0 / (2.0 * self.n + k)
        return 2.0 / (k + 4.0)

    def __call__(self, k):
        return self.theta(k)


def a_coeff(schedule, k, convention=A_EXTRAPOLATION):
    """Serial extrapolation coefficient a_k; a_0 := 0 (no pre-start momentum)."""
    if k < 0:
        raise ValueError("a_k defined for k >= 0")
    if k == 0:
        return 0.0
    tk, tkm1 = schedule.theta(k), schedule.theta(k - 1)
    if convention == A_EXTRAPOLATION:
        return tk * (1.0 - tkm1) / tkm1
    if convention == A_SUPPLEMENT:
        return tk * (1.0 - tk) / tkm1
    raise ValueError(f"unknown a_k convention {convention!r}")


def c_coeff(schedule, k):
    """Coordinate-descent cross coefficient c_k = (theta_k/theta_{k-1})(1/n - theta_{k-1})."""
    if k < 1:
        return 0.0
    tk, tkm1 = schedule.theta(k), schedule.theta(k - 1)
    return (tk / tkm1) * (1.0 / schedule.n - tkm1)


def comp_sum_aagd(schedule, j, k, convention=A_EXTRAPOLATION):
    """Compensation coefficient sum_{i=j}^{k} prod_{l=j}^{i} a_l.

    Multiplies (x_j - x_{j-1}) in the full-gradient compensated point.
    Running-product evaluation, O(k - j).  j = 0 gives 0 by the a_0 = 0
    convention (the pre-initial iterate equals x_0, so the term vanishes).
    """
    if not 0 <= j <= k:
        raise ValueError("need 0 <= j <= k")
    total = 0.0
    prod = 1.0
    for i in range(j, k + 1):
        prod *= a_coeff(schedule, i, convention)
        total += prod
    return total


def comp_sum_aascd(schedule, j, k, variant="frozen"):
    """Compensation coefficient for the coordinate-descent compensated point.

    ``frozen`` (default): sum_{i=j+1}^{k} prod_{l=j+1}^{i} a_l, multiplying
    (y_j - x_j).  This is the exact telescoping of the extrapolation
    recursion: w equals the point the serial method would reach from state
    j with all later updates zeroed, so the zero-delay and n = 1 reductions
    are exact.  The two printed variants are kept for A/B comparison:
    ``appendix`` is sum_{i=j+1}^{k} b(j,i) and ``maintext`` is
    sum_{i=j+1}^{k} b(i,k), both multiplying (y_j - x_{j-1}).
    """
    if not 0 <= j <= k:
        raise ValueError("need 0 <= j <= k")
    if variant == "frozen":
        total = 0.0
        prod = 1.0
        for i in range(j + 1, k + 1):
            prod *= a_coeff(schedule, i)
            total += prod
        return total
    if variant == "appendix":
        total = 0.0
        prod = a_coeff(schedule, j)
        for i in range(j + 1, k + 1):
            prod *= a_coeff(schedule, i)
            total += prod
        return total
    if variant == "maintext":
        total = 0.0
        prod = 1.0
        for i in range(k, j, -1):
            prod *= a_coeff(schedule, i)
            total += prod
        return total
    raise ValueError(f"unknown comp-sum variant {variant!r}")


def comp_sum_aasvrg(a_s, delay):
    """Geometric compensation a_s (1 - a_s^{delay+1}) / (1 - a_s).

    Equals sum_{m=1}^{delay+1} a_s^m; at a_s = 1 the limit delay + 1.
    """
    if not 0.0 <= a_s <= 1.0:
        raise ValueError("need 0 <= a_s <= 1")
    if delay < 0:
        raise ValueError("need delay >= 0")
    if a_s == 1.0:
        return float(delay + 1)
    return a_s * (1.0 - a_s ** (delay + 1)) / (1.0 - a_s)


def step_size(algo, regime, L=None, L_c=None, mu=None, n=None, tau=0):
    """Largest gamma satisfying the named convergence condition with equality.

    Full gradient:        2 g L + 3 g L (t^2+3t)^2 <= 1   (NC)
                          (5/2) g L + g L (t^2+3t)^2 <= 1 (SC)
    Coordinate descent:   2 g Lc + (1+1/n) g Lc ((t^2+t)/n + 2t)^2 <= 1   (NC)
                          2 g Lc + (3/4+3/(8n)) g Lc ((t^2+t)/n+2t)^2 <= 1 (SC)
    Variance reduced:     5 g L + 10 g L t^2 <= 1   (NC)
                          5 g L + (95/8) g L t^2 <= 1 (SC)

    The returned value is shaved by one part in 1e14 so the inequality is
    satisfied (never violated) in floating point.
    """
    if algo not in ALGOS:
        raise ValueError(f"unknown algo {algo!r}")
    if regime not in REGIMES:
        raise ValueError(f"unknown regime {regime!r}")
    if tau < 0:
        raise ValueError("need tau >= 0")
    if algo == "aagd":
        q = (tau * tau + 3.0 * tau) ** 2
        denom = L * (2.0 + 3.0 * q) if regime == "nc" else L * (2.5 + q)
    elif algo == "aascd":
        if n is None or n < 1:
            raise ValueError("coordinate step size needs n")
        if tau > math.sqrt(n):
            raise ValueError(
                f"tau = {tau} exceeds sqrt(n) = {math.sqrt(n):g}: the coordinate "
                "bound assumes tau <= sqrt(n)")
        q = ((tau * tau + tau) / n + 2.0 * tau) ** 2
        coef = (1.0 + 1.0 / n) if regime == "nc" else (0.75 + 3.0 / (8.0 * n))
        denom = L_c * (2.0 + coef * q)
    else:
        coef = 10.0 if regime == "nc" else 95.0 / 8.0
        denom = L * (5.0 + coef * tau * tau)
    return (1.0 / denom) * (1.0 - 1e-14)


def asvrg_step_size(L, tau):
    """Unaccelerated variance-reduced baseline step size (two-branch rule).

    min( (sqrt5 - sqrt2) sqrt2 / (20 * 5^{3/4} sqrt(e) (sqrt(e)-1) tau L),
         1 / (12 sqrt5 e (e-1) tau^2 L) ).
    Both branches are 1/tau-scaled; at tau = 0 the constraint disappears
    and the rho1 -> inf, rho2 -> 1 limit of the underlying bound gives
    1/(10 L).
    """
    if tau == 0:
        return 1.0 / (10.0 * L)
    e = math.e
    b1 = (math.sqrt(5.0) - math.sqrt(2.0)) * math.sqrt(2.0) / (
        20.0 * 5.0 ** 0.75 * math.sqrt(e) * (math.sqrt(e) - 1.0) * tau * L)
    b2 = 1.0 / (12.0 * math.sqrt(5.0) * e * (e - 1.0) * tau * tau * L)
    return min(b1, b2)


@dataclass(frozen=True)
class ScaledScalar:
    """Positive scalar stored as significand * 2^exponent.

    Repeated multiplication by (1 - theta) drives the decay scalar of the
    change-of-variable solver state toward zero; the split representation
    keeps it exact-to-one-rounding per multiply and never underflows for
    any realistic iteration count.  significand is in [0.5, 1) or 0.
    """

    significand: float
    exponent: int

    @staticmethod
    def from_float(x):
        if x < 0:
            raise ValueError("scaled scalar is nonnegative")
        if x == 0.0:
            return ScaledScalar(0.0, 0)
        m, e = math.frexp(x)
        return ScaledScalar(m, e)

    def value(self):
        """Collapse to a float (may underflow to 0.0 for huge negative exponents)."""
        if self.significand == 0.0:
            return 0.0
        return math.ldexp(self.significand, self.exponent)

    def mul(self, factor):
        return scaled_mul(self, factor)

    def div_value(self, x):
        """x / value, computed scale-aware (x may be an array)."""
        import numpy as np
        if self.significand == 0.0:
            raise ZeroDivisionError("scaled scalar is zero")
        return np.ldexp(x / self.significand, -self.exponent)


def scaled_mul(d, factor):
    """d * factor for factor in (0, 1], renormalized to [0.5, 1)."""
    if not 0.0 < factor <= 1.0:
        raise ValueError("factor must be in (0, 1]")
    if d.significand == 0.0:
        return d
    m, e = math.frexp(d.significand * factor)
    return ScaledScalar(m, e + d.exponent)
