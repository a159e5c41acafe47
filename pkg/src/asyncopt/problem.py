"""Datasets, composite objectives, gradients, proximal maps and constants.

A composite problem is min F(x) = f(x) + h(x) with f the smooth data term
(full, coordinate and per-component gradients, plus Hessian-vector
products) and h a separable nonsmooth part with closed-form proximal
maps.  Everything here is immutable after construction and safe to share
across threads.
"""

import math
from dataclasses import dataclass, field

import numpy as np

LOSSES = ("squared", "logistic", "smoothed_hinge")


# ---------------------------------------------------------------------------
# sparse matrix


@dataclass(frozen=True)
class CsrMatrix:
    """Compressed sparse rows; the raw arrays feed the numba kernels directly."""

    row_ptr: np.ndarray
    col_idx: np.ndarray
    vals: np.ndarray
    rows: int
    cols: int

    def validate(self):
        if len(self.row_ptr) != self.rows + 1:
            raise ValueError("row_ptr length mismatch")
        if np.any(np.diff(self.row_ptr) < 0):
            raise ValueError("row_ptr must be nondecreasing")
        if self.col_idx.size and int(self.col_idx.max()) >= self.cols:
            raise ValueError("column index out of range")
        for i in range(self.rows):
            cols = self.col_idx[self.row_ptr[i]:self.row_ptr[i + 1]]
            if np.any(np.diff(cols) <= 0):
                raise ValueError(f"row {i}: column indices not strictly increasing")
        if not np.all(np.isfinite(self.vals)):
            raise ValueError("non-finite matrix entries")
        return self

    @property
    def nnz(self):
        return len(self.vals)

    @staticmethod
    def from_dense(dense):
        dense = np.asarray(dense, dtype=np.float64)
        rows, cols = dense.shape
        mask = dense != 0.0
        row_ptr = np.zeros(rows + 1, dtype=np.int64)
        np.cumsum(mask.sum(axis=1), out=row_ptr[1:])
        col_idx = np.nonzero(mask)[1].astype(np.int64)
        vals = dense[mask].astype(np.float64)
        return CsrMatrix(row_ptr, col_idx, vals, rows, cols)

    def to_dense(self):
        out = np.zeros((self.rows, self.cols))
        for i in range(self.rows):
            lo, hi = self.row_ptr[i], self.row_ptr[i + 1]
            out[i, self.col_idx[lo:hi]] = self.vals[lo:hi]
        return out

    def row(self, i):
        lo, hi = self.row_ptr[i], self.row_ptr[i + 1]
        return self.col_idx[lo:hi], self.vals[lo:hi]

    def matvec(self, x):
        """A @ x, O(nnz); cumulative-sum segmentation handles empty rows."""
        prod = self.vals * x[self.col_idx]
        csum = np.concatenate(([0.0], np.cumsum(prod)))
        return csum[self.row_ptr[1:]] - csum[self.row_ptr[:-1]]

    def rmatvec(self, y):
        """A.T @ y, O(nnz)."""
        expanded = np.repeat(y, np.diff(self.row_ptr)) * self.vals
        return np.bincount(self.col_idx, weights=expanded, minlength=self.cols)

    def row_sqnorms(self):
        prod = self.vals * self.vals
        csum = np.concatenate(([0.0], np.cumsum(prod)))
        return csum[self.row_ptr[1:]] - csum[self.row_ptr[:-1]]

    def col_sqnorms(self):
        return np.bincount(self.col_idx, weights=self.vals * self.vals,
                           minlength=self.cols)

    def scale_rows(self, scale):
        vals = self.vals * np.repeat(scale, np.diff(self.row_ptr))
        return CsrMatrix(self.row_ptr, self.col_idx, vals, self.rows, self.cols)

    def transpose(self):
        """CSR of A.T (counting sort over columns, O(nnz))."""
        counts = np.bincount(self.col_idx, minlength=self.cols)
        row_ptr = np.zeros(self.cols + 1, dtype=np.int64)
        np.cumsum(counts, out=row_ptr[1:])
        col_idx = np.empty(self.nnz, dtype=np.int64)
        vals = np.empty(self.nnz)
        cursor = row_ptr[:-1].copy()
        for i in range(self.rows):
            for p in range(self.row_ptr[i], self.row_ptr[i + 1]):
                dest = cursor[self.col_idx[p]]
                col_idx[dest] = i
                vals[dest] = self.vals[p]
                cursor[self.col_idx[p]] += 1
        return CsrMatrix(row_ptr, col_idx, vals, self.cols, self.rows)


@dataclass(frozen=True)
class Dataset:
    features: CsrMatrix
    labels: np.ndarray
    normalized: bool = False

    def __post_init__(self):
        if len(self.labels) != self.features.rows:
            raise ValueError("labels length must equal the number of rows")
        if self.normalized:
            norms = np.sqrt(self.features.row_sqnorms())
            nonzero = norms > 0
            if np.any(np.abs(norms[nonzero] - 1.0) > 1e-12):
                raise ValueError("normalized dataset has a non-unit row")

    @property
    def n(self):
        return self.features.rows

    @property
    def dim(self):
        return self.features.cols


def load_libsvm(path, normalize=False):
    """Read a `label idx:val ...` text file (1-based, strictly increasing idx).

    Column count is the largest index seen.  With ``normalize`` every row is
    rescaled to unit Euclidean norm (zero rows are left as zero).
    """
    labels = []
    row_cols, row_vals, row_ptr = [], [], [0]
    max_col = 0
    n_lines = 0
    with open(path) as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            n_lines += 1
            parts = line.split()
            try:
                labels.append(float(parts[0]))
            except ValueError:
                raise ValueError(f"{path}: parse error at line {lineno}: "
                                 f"bad label {parts[0]!r}") from None
            prev = 0
            for tok in parts[1:]:
                try:
                    idx_s, val_s = tok.split(":")
                    idx, val = int(idx_s), float(val_s)
                except ValueError:
                    raise ValueError(f"{path}: parse error at line {lineno}: "
                                     f"bad feature {tok!r}") from None
                if idx <= prev:
                    raise ValueError(f"{path}: parse error at line {lineno}: "
                                     f"indices must be 1-based strictly increasing")
                prev = idx
                row_cols.append(idx - 1)  # 1-based on disk, 0-based in memory
                row_vals.append(val)
                max_col = max(max_col, idx)
            row_ptr.append(len(row_cols))
    if n_lines == 0:
        raise ValueError(f"{path}: empty file")
    X = CsrMatrix(np.asarray(row_ptr, dtype=np.int64),
                  np.asarray(row_cols, dtype=np.int64),
                  np.asarray(row_vals, dtype=np.float64),
                  n_lines, max_col).validate()
    if normalize:
        norms = np.sqrt(X.row_sqnorms())
        X = X.scale_rows(1.0 / np.where(norms > 0, norms, 1.0))
    return Dataset(features=X, labels=np.asarray(labels), normalized=normalize)


def save_libsvm(path, features, labels):
    """Write rows as `label idx:val ...` with 1-based indices."""
    with open(path, "w") as fh:
        for i in range(features.rows):
            idx, vals = features.row(i)
            feats = " ".join(f"{j + 1}:{v:.17g}" for j, v in zip(idx, vals))
            fh.write(f"{labels[i]:g} {feats}\n".rstrip() + "\n")


# ---------------------------------------------------------------------------
# losses: phi applied to the linear activation t = a_i . x, with label b_i

LOSS_SQUARED, LOSS_LOGISTIC, LOSS_SMOOTHED_HINGE = 0, 1, 2
_LOSS_IDS = {"squared": LOSS_SQUARED, "logistic": LOSS_LOGISTIC,
             "smoothed_hinge": LOSS_SMOOTHED_HINGE}


def loss_value(loss, t, b):
    if loss == "squared":
        return 0.5 * (t - b) ** 2
    if loss == "logistic":
        return np.logaddexp(0.0, -b * t)
    m = b * t
    out = np.where(m >= 1.0, 0.0, np.where(m <= 0.0, 0.5 - m, 0.5 * (1.0 - m) ** 2))
    return out


def loss_deriv(loss, t, b):
    """d phi / d t."""
    if loss == "squared":
        return t - b
    if loss == "logistic":
        m = b * t
        s = np.exp(-np.abs(m))          # overflow-free sigmoid of -m
        return -b * np.where(m >= 0.0, s / (1.0 + s), 1.0 / (1.0 + s))
    m = b * t
    dm = np.where(m >= 1.0, 0.0, np.where(m <= 0.0, -1.0, m - 1.0))
    return b * dm


def loss_second_deriv(loss, t, b):
    """d^2 phi / d t^2; the smoothed-hinge kink takes the inside value."""
    if loss == "squared":
        return np.ones_like(np.asarray(t, dtype=float))
    if loss == "logistic":
        s = np.exp(-np.abs(b * t))
        return s / (1.0 + s) ** 2
    m = b * t
    return np.where((m >= 0.0) & (m <= 1.0), 1.0, 0.0) * b * b


def loss_curvature_bound(loss):
    """Global upper bound on phi''."""
    return 0.25 if loss == "logistic" else 1.0


# ---------------------------------------------------------------------------
# smooth parts


class ErmSmooth:
    """(1/n) sum_i phi_i(a_i . x): the data term of an ERM objective."""

    def __init__(self, X, labels, loss):
        if loss not in LOSSES:
            raise ValueError(f"unknown loss {loss!r}")
        self.X = X
        self.labels = np.asarray(labels, dtype=np.float64)
        self.loss = loss
        self.loss_id = _LOSS_IDS[loss]
        self.n = X.rows
        self.dim = X.cols
        self.n_components = X.rows

    def margins(self, x):
        return self.X.matvec(x)

    def evaluate(self, x):
        return float(np.mean(loss_value(self.loss, self.margins(x), self.labels)))

    def full_grad(self, x):
        d = loss_deriv(self.loss, self.margins(x), self.labels)
        return self.X.rmatvec(d) / self.n

    def coord_grad(self, x, j):
        d = loss_deriv(self.loss, self.margins(x), self.labels)
        col = np.zeros(self.dim)
        col[j] = 1.0
        return float(self.X.matvec(col) @ d) / self.n

    def component_grad(self, x, i):
        """Gradient of f_i = phi_i(a_i . x); averaging over i gives full_grad."""
        idx, vals = self.X.row(i)
        t = float(vals @ x[idx])
        d = float(loss_deriv(self.loss, t, self.labels[i]))
        g = np.zeros(self.dim)
        g[idx] = d * vals
        return g

    def component_margin(self, x, i):
        idx, vals = self.X.row(i)
        return float(vals @ x[idx])

    def hessian_vec(self, x, v, i):
        """H_i(x) v = phi_i''(a_i.x) a_i (a_i.v), O(nnz(a_i))."""
        idx, vals = self.X.row(i)
        t = float(vals @ x[idx])
        curv = float(loss_second_deriv(self.loss, t, self.labels[i]))
        av = float(vals @ v[idx])
        out = np.zeros(self.dim)
        out[idx] = curv * av * vals
        return out


class DualSvmSmooth:
    """(lambda/2) || (1/(lambda n)) A.T alpha ||^2 over dual variables alpha.

    Maintaining q(alpha) = sum_i alpha_i a_i makes single-coordinate
    gradients O(nnz(a_i)): grad_i = a_i . q / (lambda n^2).
    """

    def __init__(self, X, lam):
        self.X = X
        self.lam = lam
        self.n = X.rows
        self.dim = X.rows          # variables are per-sample
        self.n_components = X.rows
        self._scale = 1.0 / (lam * self.n * self.n)

    def q_of(self, alpha):
        return self.X.rmatvec(alpha)

    def evaluate(self, alpha):
        q = self.q_of(alpha)
        return 0.5 * self._scale * float(q @ q)

    def full_grad(self, alpha):
        return self._scale * self.X.matvec(self.q_of(alpha))

    def coord_grad(self, alpha, i):
        idx, vals = self.X.row(i)
        return self._scale * float(vals @ self.q_of(alpha)[idx])

    def coord_grad_from_q(self, q, i):
        idx, vals = self.X.row(i)
        return self._scale * float(vals @ q[idx])

    def add_to_q(self, q, i, delta):
        idx, vals = self.X.row(i)
        q[idx] += delta * vals


# ---------------------------------------------------------------------------
# nonsmooth parts and proximal maps

FAMILY_ZERO, FAMILY_L2, FAMILY_L1, FAMILY_BOX, FAMILY_SVM = 0, 1, 2, 3, 4


class NonsmoothPart:
    """Separable h with closed-form proximal maps.

    Families: zero; (mu/2)||x||^2; lam1 ||x||_1; box indicator [lo, hi];
    and the smoothed-hinge conjugate (1/n) sum (alpha^2/2 - b alpha) with
    the per-coordinate box the conjugate's domain.  No generic numeric
    inner solve exists: anything else is rejected.
    """

    def __init__(self, family, mu=0.0, lam1=0.0, lo=-np.inf, hi=np.inf,
                 labels=None):
        if family not in ("zero", "l2", "l1", "box", "svm_conjugate"):
            raise ValueError(f"unsupported nonsmooth family {family!r}")
        self.family = family
        self.lam1 = lam1
        self.lo, self.hi = lo, hi
        self.labels = labels
        self.separable = True
        if family == "l2":
            self.mu = mu
        elif family == "svm_conjugate":
            self.n = len(labels)
            self.mu = 1.0 / self.n
        else:
            self.mu = 0.0

    @property
    def family_id(self):
        return {"zero": FAMILY_ZERO, "l2": FAMILY_L2, "l1": FAMILY_L1,
                "box": FAMILY_BOX, "svm_conjugate": FAMILY_SVM}[self.family]

    def evaluate(self, x):
        if self.family == "zero":
            return 0.0
        if self.family == "l2":
            return 0.5 * self.mu * float(x @ x)
        if self.family == "l1":
            return self.lam1 * float(np.abs(x).sum())
        if self.family == "box":
            inside = np.all((x >= self.lo - 1e-12) & (x <= self.hi + 1e-12))
            return 0.0 if inside else np.inf
        b = self.labels
        m = b * x
        if np.any(m < -1e-12) or np.any(m > 1.0 + 1e-12):
            return np.inf
        return float(np.sum(0.5 * x * x - b * x)) / self.n

    def prox(self, z, g, weight):
        """argmin_d h(z + d) + <g, d> + (weight/2) ||d||^2 (exact, closed form)."""
        if weight <= 0:
            raise ValueError("prox weight must be positive")
        if self.family == "zero":
            return -g / weight
        if self.family == "l2":
            return -(g + self.mu * z) / (self.mu + weight)
        if self.family == "l1":
            u = z - g / weight
            t = np.sign(u) * np.maximum(np.abs(u) - self.lam1 / weight, 0.0)
            return t - z
        if self.family == "box":
            return np.clip(z - g / weight, self.lo, self.hi) - z
        b = self.labels
        t = (b / self.n - g + weight * z) / (1.0 / self.n + weight)
        t = np.clip(t, np.minimum(0.0, b), np.maximum(0.0, b))
        return t - z

    def prox_coord(self, z_i, g_i, weight, i):
        """Scalar prox of the i-th coordinate (h must be separable)."""
        if self.family == "zero":
            return -g_i / weight
        if self.family == "l2":
            return -(g_i + self.mu * z_i) / (self.mu + weight)
        if self.family == "l1":
            u = z_i - g_i / weight
            t = math.copysign(max(abs(u) - self.lam1 / weight, 0.0), u)
            return t - z_i
        if self.family == "box":
            return min(max(z_i - g_i / weight, self.lo), self.hi) - z_i
        b = self.labels[i]
        t = (b / self.n - g_i + weight * z_i) / (1.0 / self.n + weight)
        t = min(max(t, min(0.0, b)), max(0.0, b))
        return t - z_i

    def grad_smooth_part(self, x):
        """Gradient of the differentiable families (for the plain-SGD baseline)."""
        if self.family == "zero":
            return np.zeros_like(x)
        if self.family == "l2":
            return self.mu * x
        raise ValueError(f"{self.family} has no gradient")


def prox_step(h, z, g, weight, coords="all"):
    """Exact proximal step for the supported h families.

    ``coords`` is "all" for the full vector or an integer coordinate for
    the separable single-coordinate variant.
    """
    if coords == "all":
        return h.prox(np.asarray(z, dtype=float), np.asarray(g, dtype=float), weight)
    if not h.separable:
        raise ValueError("single-coordinate prox needs a separable h")
    return h.prox_coord(float(z), float(g), weight, coords)


# ---------------------------------------------------------------------------
# composite problems


@dataclass(frozen=True)
class Constants:
    L: float                 # lambda_max of the smooth Hessian (certified upper bound)
    L_comp: float            # max component smoothness (finite-sum bounds)
    L_coord: np.ndarray      # per-coordinate Lipschitz constants
    L_c: float               # max of L_coord
    mu: float                # strong-convexity modulus of h


@dataclass(frozen=True)
class CompositeProblem:
    smooth: object
    nonsmooth: NonsmoothPart
    constants: Constants = field(repr=False, default=None)

    def __post_init__(self):
        if self.constants is not None and self.constants.mu > self.constants.L + 1e-12:
            raise ValueError("mu <= L is required")

    @property
    def n_components(self):
        return self.smooth.n_components

    @property
    def dim(self):
        return self.smooth.dim

    @property
    def L(self):
        return self.constants.L

    @property
    def L_comp(self):
        return self.constants.L_comp

    @property
    def L_coord(self):
        return self.constants.L_coord

    @property
    def L_c(self):
        return self.constants.L_c

    @property
    def mu(self):
        return self.constants.mu

    def objective(self, x):
        return self.smooth.evaluate(x) + self.nonsmooth.evaluate(x)

    def full_grad(self, x):
        return self.smooth.full_grad(x)


def _power_iteration_bound(matvec, dim, curv, iters=200, rtol=1e-6, seed=0):
    """Certified upper bound on lambda_max of the (symmetric PSD) operator.

    Power iteration converges from below, so the estimate is topped with
    the residual norm ||Mv - lambda v|| (a rigorous bound for symmetric
    operators) and capped by the trace bound supplied by the caller.
    """
    rng = np.random.default_rng(seed)
    v = rng.standard_normal(dim)
    v /= np.linalg.norm(v)
    lam = 0.0
    for _ in range(iters):
        w = matvec(v)
        new = float(v @ w)
        nw = np.linalg.norm(w)
        if nw == 0.0:
            return 0.0
        v = w / nw
        if abs(new - lam) <= rtol * max(abs(new), 1e-30):
            lam = new
            break
        lam = new
    resid = float(np.linalg.norm(matvec(v) - lam * v))
    return curv * (lam + resid)


def estimate_constants(smooth, h_mu=0.0):
    """Closed-form/power-iteration Lipschitz constants for a smooth part.

    Squared loss: L = lambda_max((1/n) A.T A); logistic scales by 1/4.
    Coordinate constants come from column norms, floored at 1e-12 L so
    zero feature columns keep the step-size formulas finite.
    """
    if isinstance(smooth, DualSvmSmooth):
        X = smooth.X
        scale = smooth._scale
        L_coord = scale * X.row_sqnorms()
        def mv(v):
            return scale * X.matvec(X.rmatvec(v))
        trace_bound = float(L_coord.sum())
        L = min(_power_iteration_bound(mv, smooth.dim, 1.0), trace_bound)
        L = max(L, float(L_coord.max()))  # lambda_max >= max diagonal entry
        L_coord = np.maximum(L_coord, 1e-12 * L)
        return Constants(L=L, L_comp=L, L_coord=L_coord,
                         L_c=float(L_coord.max()), mu=h_mu)

    X, n = smooth.X, smooth.n
    curv = loss_curvature_bound(smooth.loss)
    def mv(v):
        return X.rmatvec(X.matvec(v)) / n
    trace_bound = curv * float(X.col_sqnorms().sum()) / n
    L = min(_power_iteration_bound(mv, smooth.dim, curv), trace_bound)
    L_coord = curv * X.col_sqnorms() / n
    L = max(L, float(L_coord.max()) if len(L_coord) else 0.0)
    if L <= 0:
        raise ValueError("degenerate data: zero smoothness constant")
    L_coord = np.maximum(L_coord, 1e-12 * L)
    L_comp = curv * float(X.row_sqnorms().max())
    return Constants(L=L, L_comp=L_comp, L_coord=L_coord,
                     L_c=float(L_coord.max()), mu=h_mu)


def make_erm(data, loss="squared", lam=0.0):
    """ERM composite problem (1/n) sum phi_i(a_i . x) + (lam/2)||x||^2.

    The L2 term goes into the nonsmooth part with mu = lam, so the
    strongly convex rates read their modulus straight off h; the
    smooth part carries the data term only.
    """
    if lam < 0:
        raise ValueError("need lam >= 0")
    if data.n == 0:
        raise ValueError("empty dataset")
    smooth = ErmSmooth(data.features, data.labels, loss)
    h = NonsmoothPart("l2", mu=lam) if lam > 0 else NonsmoothPart("zero")
    constants = estimate_constants(smooth, h_mu=h.mu)
    return CompositeProblem(smooth=smooth, nonsmooth=h, constants=constants)


@dataclass(frozen=True)
class DualSvmProblem:
    """Smoothed-hinge SVM in its dual: base problem over alpha plus the
    primal map x(alpha) = (1/(lambda n)) A.T alpha.

    ``base.objective`` is the dual as a minimization; ``dual_objective``
    reports its negative (the concave dual), so
    P(primal_map(alpha)) - dual_objective(alpha) >= 0 is the duality gap.
    """

    base: CompositeProblem
    data: Dataset
    lam: float

    def primal_map(self, alpha):
        return self.base.smooth.q_of(alpha) / (self.lam * self.data.n)

    def primal_objective(self, x):
        m = self.data.features.matvec(x)
        loss = float(np.mean(loss_value("smoothed_hinge", m, self.data.labels)))
        return loss + 0.5 * self.lam * float(x @ x)

    def dual_objective(self, alpha):
        return -self.base.objective(alpha)

    def feasible(self, alpha, tol=1e-9):
        m = self.data.labels * alpha
        return bool(np.all(m >= -tol) and np.all(m <= 1.0 + tol))


def make_dual_svm(data, lam):
    """Dual SVM problem with the quadratically smoothed hinge (smoothing 1).

    phi*(u) = u + u^2/2 on [-1, 0], so h_i(alpha) = (1/n)(alpha^2/2 -
    b alpha) over the box b*alpha in [0, 1]; h is coordinate separable
    with strong-convexity modulus 1/n.
    """
    if lam <= 0:
        raise ValueError("need lam > 0")
    labels = np.asarray(data.labels, dtype=np.float64)
    if not np.all(np.isin(labels, (-1.0, 1.0))):
        raise ValueError("dual SVM needs labels in {-1, +1}")
    smooth = DualSvmSmooth(data.features, lam)
    h = NonsmoothPart("svm_conjugate", labels=labels)
    constants = estimate_constants(smooth, h_mu=h.mu)
    base = CompositeProblem(smooth=smooth, nonsmooth=h, constants=constants)
    return DualSvmProblem(base=base, data=data, lam=lam)


def vr_grad(problem, w, epoch, i):
    """Variance-reduced gradient grad f_i(w) - grad f_i(x~) + grad f(x~).

    ``epoch`` carries the snapshot and its exact full gradient; averaging
    the output over all components reproduces full_grad(w) exactly up to
    roundoff.
    """
    smooth = problem.smooth
    if not 0 <= i < smooth.n_components:
        raise IndexError(f"component {i} out of range")
    return (smooth.component_grad(w, i) - smooth.component_grad(epoch.snapshot, i)
            + epoch.full_grad_snapshot)


def hessian_vec(problem, x, v, i):
    """Component Hessian-vector product H_i(x) v (O(nnz) for GLM losses)."""
    return problem.smooth.hessian_vec(x, v, i)
