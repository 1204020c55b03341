"""Ordinary-kriging Gaussian process surrogate.

The model interpolates a deterministic performance function with a constant
trend and either a squared-exponential or a Matern 5/2 correlation.  Inputs
are standardized with the statistics of the current design before the kernel
is applied; hyperparameters are obtained by maximum likelihood with the
process variance profiled out.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import linalg, optimize

from .core import as_generator, latin_hypercube

KERNEL_KINDS = ("matern52", "squared_exponential")
JITTER_LADDER = (0.0, 1e-10, 1e-8, 1e-6)
DUPLICATE_TOL = 1e-10
_SQRT5 = np.sqrt(5.0)


class IllConditionedError(np.linalg.LinAlgError):
    pass


class DuplicateDesignError(ValueError):
    pass


_BLOCK_ENTRIES = 65536  # rows are processed in cache-sized blocks


def correlation(kind: str, length_scales, A, B) -> np.ndarray:
    """Correlation matrix r(A_i, B_j) for anisotropic stationary kernels."""
    if kind not in KERNEL_KINDS:
        raise ValueError(f"unknown kernel kind {kind!r}")
    ls = np.asarray(length_scales, dtype=float)
    A = np.atleast_2d(A) / ls
    B = np.atleast_2d(B) / ls
    if A.shape[1] != B.shape[1]:
        raise ValueError("dimension mismatch between point sets")
    out = np.empty((len(A), len(B)))
    a2 = (A * A).sum(1)
    b2 = (B * B).sum(1)
    step = max(1, _BLOCK_ENTRIES // max(1, len(B)))
    for s in range(0, len(A), step):
        _correlation_block(kind, A[s:s + step], B, a2[s:s + step], b2, out[s:s + step])
    return out


def _correlation_block(kind, A, B, a2, b2, out):
    d2 = np.matmul(A, B.T, out=out)
    d2 *= -2.0
    d2 += a2[:, None]
    d2 += b2[None, :]
    np.maximum(d2, 0.0, out=d2)
    if kind == "squared_exponential":
        np.negative(d2, out=d2)
        np.exp(d2, out=d2)
        return
    # Matern 5/2: (1 + s + s^2 / 3) exp(-s) with s = sqrt(5 d2)
    d2 *= 5.0
    s = np.sqrt(d2, out=d2)
    e = np.exp(-s)
    poly = s * s
    poly *= 1.0 / 3.0
    poly += s
    poly += 1.0
    np.multiply(poly, e, out=out)


@dataclass(frozen=True)
class Kernel:
    kind: str
    length_scales: np.ndarray
    variance: float

    def __post_init__(self):
        if self.kind not in KERNEL_KINDS:
            raise ValueError(f"unknown kernel kind {self.kind!r}")
        ls = np.atleast_1d(np.asarray(self.length_scales, dtype=float))
        object.__setattr__(self, "length_scales", ls)
        if np.any(ls <= 0) or not self.variance > 0:
            raise ValueError("length-scales and variance must be positive")

    def matrix(self, A, B) -> np.ndarray:
        return self.variance * correlation(self.kind, self.length_scales, A, B)

    def __call__(self, x, x2) -> float:
        x = np.atleast_1d(np.asarray(x, dtype=float))
        x2 = np.atleast_1d(np.asarray(x2, dtype=float))
        if x.shape != x2.shape or x.shape != self.length_scales.shape:
            raise ValueError("dimension mismatch in kernel evaluation")
        return float(self.matrix(x[None], x2[None])[0, 0])


def kernel_eval(kernel: Kernel, x, x2) -> float:
    return kernel(x, x2)


def _stable_cholesky(R: np.ndarray, ladder=JITTER_LADDER):
    """Cholesky of ``R + j*I`` with the smallest ``j`` from the ladder that works."""
    eye = np.eye(R.shape[0])
    for j in ladder:
        try:
            L = np.linalg.cholesky(R + j * eye if j else R)
        except np.linalg.LinAlgError:
            continue
        if np.all(np.isfinite(L)) and np.min(np.diag(L)) > 1e-9:
            return L, j
    raise IllConditionedError("covariance factorization failed at the largest jitter")


@dataclass(frozen=True)
class GpModel:
    """A fitted ordinary-kriging model.  Immutable after construction."""

    kernel: Kernel  # length-scales act on standardized inputs
    x_doe: np.ndarray
    y: np.ndarray
    x_mean: np.ndarray
    x_scale: np.ndarray
    jitter: float  # absolute value added to the covariance diagonal
    beta: float = field(init=False)
    _chol: np.ndarray = field(init=False, repr=False)
    _alpha: np.ndarray = field(init=False, repr=False)
    _c1: np.ndarray = field(init=False, repr=False)
    _s11: float = field(init=False, repr=False)
    _linv_t: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        z = self.standardize(self.x_doe)
        s2 = self.kernel.variance
        R = correlation(self.kernel.kind, self.kernel.length_scales, z, z)
        # start from the requested jitter and climb the ladder if rounding defeats it
        rel = self.jitter / s2
        L, j = _stable_cholesky(R, (rel,) + tuple(x for x in JITTER_LADDER if x > rel))
        L = L * np.sqrt(s2)
        object.__setattr__(self, "jitter", j * s2)
        ones = np.ones(len(self.y))
        c1 = linalg.cho_solve((L, True), ones)
        cy = linalg.cho_solve((L, True), self.y)
        s11 = float(ones @ c1)
        beta = float(ones @ cy) / s11
        object.__setattr__(self, "beta", beta)
        object.__setattr__(self, "_chol", L)
        object.__setattr__(self, "_alpha", cy - beta * c1)
        object.__setattr__(self, "_c1", c1)
        object.__setattr__(self, "_s11", s11)
        # inverse factor, transposed: batched prediction becomes one matrix product
        linv = linalg.solve_triangular(L, np.eye(len(L)), lower=True)
        object.__setattr__(self, "_linv_t", np.ascontiguousarray(linv.T))

    @property
    def n(self) -> int:
        return len(self.y)

    @property
    def dim(self) -> int:
        return self.x_doe.shape[1]

    def standardize(self, X) -> np.ndarray:
        X = np.atleast_2d(np.asarray(X, dtype=float))
        if X.shape[1] != self.x_doe.shape[1]:
            raise ValueError("input dimension does not match the model")
        return (X - self.x_mean) / self.x_scale

    def cross_cov(self, X) -> np.ndarray:
        """Prior covariance between ``X`` and the DoE, shape (N, n)."""
        return self.kernel.matrix(self.standardize(X), self.standardize(self.x_doe))

    def predict(self, X, chunk: int = 20000):
        """Predictive mean and standard deviation at the rows of ``X``."""
        X = np.atleast_2d(np.asarray(X, dtype=float))
        mean = np.empty(len(X))
        var = np.empty(len(X))
        for s in range(0, len(X), chunk):
            k = self.cross_cov(X[s:s + chunk])
            mean[s:s + chunk] = self.beta + k @ self._alpha
            v = k @ self._linv_t
            u = 1.0 - k @ self._c1
            var[s:s + chunk] = self.kernel.variance - np.einsum("ij,ij->i", v, v) + u * u / self._s11
        return mean, np.sqrt(np.maximum(var, 0.0))

    def posterior_cov(self, X) -> np.ndarray:
        """Full conditioned covariance over the rows of ``X``."""
        k = self.cross_cov(X)
        z = self.standardize(X)
        v = linalg.solve_triangular(self._chol, k.T, lower=True)
        u = 1.0 - k @ self._c1
        return self.kernel.matrix(z, z) - v.T @ v + np.outer(u, u) / self._s11

    def kriging_weights(self, X) -> np.ndarray:
        """Matrix ``A`` (N x n) such that the kriging mean at ``X`` is ``A @ y``."""
        k = self.cross_cov(X)
        kc = linalg.cho_solve((self._chol, True), k.T).T
        u = 1.0 - k @ self._c1
        return kc + np.outer(u, self._c1) / self._s11

    def mean_from_outputs(self, X, Y) -> np.ndarray:
        """Kriging mean at ``X`` for alternative DoE outputs ``Y`` (n or n x k),
        with this model's hyperparameters and factorization."""
        return self.kriging_weights(X) @ np.asarray(Y, dtype=float)

    def enrich(self, x_new, y_new, stream=None, n_restarts: int = 2) -> "GpModel":
        x_new = np.atleast_2d(np.asarray(x_new, dtype=float))
        if is_duplicate(self, x_new[0]):
            raise DuplicateDesignError("point already belongs to the design")
        X = np.vstack([self.x_doe, x_new])
        y = np.append(self.y, y_new)
        warm = self.kernel.length_scales * self.x_scale  # back to raw units
        return fit(X, y, self.kernel.kind, stream, warm_start=warm, n_starts=n_restarts + 1)

    def with_hyperparameters_of(self, x_doe, y) -> "GpModel":
        """Model on a new design keeping this model's kernel and scaling."""
        z = (np.asarray(x_doe) - self.x_mean) / self.x_scale
        R = correlation(self.kernel.kind, self.kernel.length_scales, z, z)
        _, j = _stable_cholesky(R)
        return GpModel(self.kernel, np.asarray(x_doe, float), np.asarray(y, float),
                       self.x_mean, self.x_scale, j * self.kernel.variance)

    def to_dict(self) -> dict:
        return {
            "kernel": self.kernel.kind,
            "length_scales": self.kernel.length_scales.tolist(),
            "variance": self.kernel.variance,
            "x_doe": self.x_doe.tolist(),
            "y": self.y.tolist(),
            "x_mean": self.x_mean.tolist(),
            "x_scale": self.x_scale.tolist(),
            "jitter": self.jitter,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "GpModel":
        kern = Kernel(d["kernel"], np.array(d["length_scales"]), d["variance"])
        return cls(kern, np.array(d["x_doe"]), np.array(d["y"]), np.array(d["x_mean"]),
                   np.array(d["x_scale"]), d["jitter"])


def is_duplicate(model: GpModel, x) -> bool:
    z = model.standardize(x)
    zd = model.standardize(model.x_doe)
    return bool(np.any(np.max(np.abs(zd - z), axis=1) < DUPLICATE_TOL))


def _profile_nll(log_ls, kind, Z, y):
    R = correlation(kind, np.exp(log_ls), Z, Z)
    try:
        L, _ = _stable_cholesky(R)
    except IllConditionedError:
        return 1e10
    n = len(y)
    ones = np.ones(n)
    c1 = linalg.cho_solve((L, True), ones)
    cy = linalg.cho_solve((L, True), y)
    beta = (ones @ cy) / (ones @ c1)
    r = y - beta
    sigma2 = max(r @ linalg.cho_solve((L, True), r) / n, 1e-300)
    return 0.5 * (n * np.log(sigma2) + 2.0 * np.sum(np.log(np.diag(L))))


def _profile_sigma2(kind, ls, Z, y):
    R = correlation(kind, ls, Z, Z)
    L, j = _stable_cholesky(R)
    ones = np.ones(len(y))
    c1 = linalg.cho_solve((L, True), ones)
    cy = linalg.cho_solve((L, True), y)
    r = y - (ones @ cy) / (ones @ c1)
    return r @ linalg.cho_solve((L, True), r) / len(y), j


def fit(x_doe, y, kind: str = "matern52", stream=None, *, n_starts: int = 5,
        warm_start=None, bounds_factor: float = 100.0) -> GpModel:
    """Fit a kriging model by maximum likelihood.

    Length-scales are searched in log space within ``[1/bounds_factor,
    bounds_factor]`` times the standardized input range, from ``n_starts``
    starting points (a warm start, when given, replaces the first one).
    """
    X = np.atleast_2d(np.asarray(x_doe, dtype=float))
    y = np.asarray(y, dtype=float).ravel()
    if kind not in KERNEL_KINDS:
        raise ValueError(f"unknown kernel kind {kind!r}")
    if len(X) < 2 or len(X) != len(y):
        raise ValueError("need at least two design points with matching outputs")
    x_mean = X.mean(0)
    x_scale = X.std(0)
    x_scale[x_scale == 0] = 1.0
    Z = (X - x_mean) / x_scale
    if np.any(np.max(np.abs(Z[:, None, :] - Z[None, :, :]), axis=2)[np.triu_indices(len(Z), 1)] < DUPLICATE_TOL):
        raise DuplicateDesignError("design contains duplicate inputs")
    m = X.shape[1]

    span = np.ptp(Z, axis=0)
    span[span == 0] = 1.0
    lo = np.log(span / bounds_factor)
    hi = np.log(span * bounds_factor)

    yspan = np.ptp(y)
    if yspan == 0.0:
        # constant outputs: the trend absorbs everything
        ls = span.copy()
        sigma2 = max(1e-12 * max(1.0, abs(y[0])) ** 2, 1e-300)
    else:
        starts = latin_hypercube(n_starts, m, as_generator(stream)) * (hi - lo) + lo
        if warm_start is not None:
            w = np.log(np.asarray(warm_start, float) / x_scale)
            starts[0] = np.clip(w, lo, hi)
        best = None
        for s in starts:
            res = optimize.minimize(_profile_nll, s, args=(kind, Z, y), method="L-BFGS-B",
                                    bounds=list(zip(lo, hi)))
            if best is None or res.fun < best.fun:
                best = res
        ls = np.exp(best.x)
        sigma2, _ = _profile_sigma2(kind, ls, Z, y)
        sigma2 = max(sigma2, 1e-12 * yspan ** 2)

    R = correlation(kind, ls, Z, Z)
    _, j = _stable_cholesky(R)
    return GpModel(Kernel(kind, ls, float(sigma2)), X, y, x_mean, x_scale, j * sigma2)
