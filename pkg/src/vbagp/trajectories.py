"""Realizations of a conditioned Gaussian process over a point population.

Two routes produce the same distribution.  The direct route factors the
conditioned covariance of the points.  The Karhunen-Loeve route simulates
an *unconditioned* centred process with the kernel of the model, truncated
on a Nystrom basis, and corrects it by its own kriging residual::

    G_n(x) = mu_n(x) - mu_tilde(x) + G_tilde(x)

where ``mu_tilde`` is the kriging mean built from ``G_tilde`` at the design.
Both routes reduce to ``mean + factor @ xi`` with standard normal ``xi``,
which is what :class:`TrajectorySampler` stores.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from .core import as_generator, latin_hypercube
from .gp import GpModel, IllConditionedError, _stable_cholesky

log = logging.getLogger(__name__)

DIRECT_MAX_POINTS = 4000
KL_NODES = 500
KL_CAPTURED = 0.99999
KL_MARGIN = 0.10


class KernelMismatchError(ValueError):
    pass


@dataclass(frozen=True)
class TrajectoryEnsemble:
    values: np.ndarray  # (n_t, N)
    method: str

    @property
    def n_t(self) -> int:
        return self.values.shape[0]

    def to_csv(self, path) -> None:
        np.savetxt(path, self.values.T, delimiter=",")


@dataclass(frozen=True)
class KlBasis:
    """Truncated Nystrom eigenbasis of the prior kernel on quadrature nodes.

    ``eigenvalues`` are those of the integral operator (matrix eigenvalues
    divided by the node count); ``vectors`` holds the retained eigenvectors
    of the node kernel matrix.
    """

    nodes: np.ndarray  # standardized coordinates, (Q, m)
    eigenvalues: np.ndarray
    vectors: np.ndarray  # (Q, r)
    captured_fraction: float
    kernel_key: tuple

    @property
    def truncation_order(self) -> int:
        return self.vectors.shape[1]

    def features(self, model: GpModel, X) -> np.ndarray:
        """KL features ``phi`` with ``G_tilde(X) = phi @ xi``."""
        q = len(self.nodes)
        lam = self.eigenvalues * q
        k = model.kernel.matrix(model.standardize(X), self.nodes)
        return (k @ self.vectors) / np.sqrt(lam)


def _kernel_key(model: GpModel) -> tuple:
    return (model.kernel.kind, tuple(model.kernel.length_scales.tolist()), model.kernel.variance,
            tuple(model.x_mean.tolist()), tuple(model.x_scale.tolist()))


def build_kl(model: GpModel, domain_sample, captured_fraction: float = KL_CAPTURED,
             extra_nodes=None) -> KlBasis:
    """Nystrom KL basis of the model's prior kernel.

    ``domain_sample`` (raw coordinates, at least 50 rows) supplies the
    quadrature nodes with equal weights; ``extra_nodes`` are appended as is.
    """
    domain_sample = np.atleast_2d(domain_sample)
    if len(domain_sample) < 50:
        raise ValueError("at least 50 quadrature nodes are required")
    if not 0.9 < captured_fraction <= 1.0:
        raise ValueError("captured fraction must lie in (0.9, 1]")
    nodes = domain_sample if extra_nodes is None else np.vstack([domain_sample, extra_nodes])
    z = model.standardize(nodes)
    K = model.kernel.matrix(z, z)
    try:
        lam, vec = np.linalg.eigh(K)
    except np.linalg.LinAlgError as exc:
        raise np.linalg.LinAlgError(f"KL eigen-solver failed: {exc}") from exc
    order = np.argsort(lam)[::-1]
    lam, vec = np.maximum(lam[order], 0.0), vec[:, order]
    frac = np.cumsum(lam) / lam.sum()
    r = int(np.searchsorted(frac, captured_fraction - 1e-12) + 1)
    # drop numerically null modes; they would blow up the Nystrom extension
    r = min(r, int(np.sum(lam > lam[0] * 1e-12)))
    return KlBasis(z, lam[:r] / len(z), vec[:, :r], float(frac[r - 1]), _kernel_key(model))


def kl_domain_nodes(model: GpModel, points, stream, n_nodes: int = KL_NODES,
                    margin: float = KL_MARGIN) -> np.ndarray:
    """LHS nodes over the bounding box of ``points`` widened by ``margin``."""
    points = np.atleast_2d(points)
    lo, hi = points.min(0), points.max(0)
    pad = margin * np.where(hi > lo, hi - lo, 1.0)
    u = latin_hypercube(n_nodes, points.shape[1], stream)
    return lo - pad + u * (hi - lo + 2 * pad)


class TrajectorySampler:
    """Realizations ``mean + factor @ xi`` of the conditioned GP at fixed points."""

    def __init__(self, mean: np.ndarray, factor: np.ndarray, method: str):
        self.mean = mean
        self.factor = factor
        self.method = method
        self._f32 = None

    @property
    def variance(self) -> np.ndarray:
        return np.einsum("ij,ij->i", self.factor, self.factor)

    def draw(self, n_t: int, rng) -> np.ndarray:
        xi = rng.standard_normal((self.factor.shape[1], n_t))
        return (self.mean[:, None] + self.factor @ xi).T

    def failure_sums(self, n_t: int, rng, weights) -> np.ndarray:
        """``sum_j weights_j 1{trajectory_i(x_j) <= 0}`` for ``n_t`` fresh
        trajectories, in single precision since only signs are needed.

        ``weights`` is a vector over the points or an (n_t, N) matrix giving
        each trajectory its own weights.
        """
        if self._f32 is None:
            self._f32 = np.ascontiguousarray(self.factor, dtype=np.float32)
            self._neg_mean = (-self.mean).astype(np.float32)[:, None]
        xi = rng.standard_normal((self.factor.shape[1], n_t), dtype=np.float32)
        fails = (self._f32 @ xi) <= self._neg_mean
        weights = np.asarray(weights, dtype=float)
        if weights.ndim == 2:
            return np.einsum("ij,ji->i", weights, fails)
        return weights @ fails

    @classmethod
    def direct(cls, model: GpModel, points) -> "TrajectorySampler":
        points = np.atleast_2d(points)
        if len(points) > DIRECT_MAX_POINTS:
            raise ValueError(f"{len(points)} points exceed the direct-simulation guard "
                             f"({DIRECT_MAX_POINTS}); use the KL route")
        mean, _ = model.predict(points)
        s2 = model.kernel.variance
        L, _ = _stable_cholesky(model.posterior_cov(points) / s2)
        return cls(mean, L * np.sqrt(s2), "direct")

    @classmethod
    def kl(cls, model: GpModel, basis: KlBasis, points) -> "TrajectorySampler":
        if basis.kernel_key != _kernel_key(model):
            raise KernelMismatchError("KL basis was built for a different kernel")
        points = np.atleast_2d(points)
        mean, sd = model.predict(points)
        phi_doe = basis.features(model, model.x_doe)
        factor = np.empty((len(points), basis.truncation_order))
        chunk = 10000
        for s in range(0, len(points), chunk):
            p = points[s:s + chunk]
            factor[s:s + chunk] = basis.features(model, p) - model.kriging_weights(p) @ phi_doe
        sampler = cls(mean, factor, "kl")
        _check_kl(model, basis, phi_doe, sd, sampler)
        return sampler


def _check_kl(model, basis, phi_doe, sd, sampler):
    sz = np.sqrt(model.kernel.variance)
    resid = phi_doe - model.kriging_weights(model.x_doe) @ phi_doe
    err = float(np.sqrt(np.max(np.einsum("ij,ij->i", resid, resid)))) if len(resid) else 0.0
    if err > 0.02 * sz:
        log.warning("KL trajectories miss the design by %.3g (> 2%% of sigma_Z)", err)
    deficit = np.max(np.abs(np.sqrt(sampler.variance) - sd)) if len(sd) else 0.0
    if deficit > 0.1 * sz:
        log.debug("KL marginal std deviates from the kriging std by up to %.3g", deficit)


def simulate_direct(model: GpModel, points, n_t: int, stream) -> TrajectoryEnsemble:
    sampler = TrajectorySampler.direct(model, points)
    return TrajectoryEnsemble(sampler.draw(n_t, as_generator(stream)), "direct")


def simulate_kl(model: GpModel, basis: KlBasis, points, n_t: int, stream) -> TrajectoryEnsemble:
    sampler = TrajectorySampler.kl(model, basis, points)
    return TrajectoryEnsemble(sampler.draw(n_t, as_generator(stream)), "kl")


def make_sampler(model: GpModel, points, stream, *, direct_max: int = DIRECT_MAX_POINTS,
                 n_nodes: int = KL_NODES, captured: float = KL_CAPTURED) -> TrajectorySampler:
    """Direct sampler for small point sets, KL sampler otherwise.

    The KL nodes are an LHS design over the points' bounding box plus the
    design inputs themselves, so the unconditioned field is accurately
    represented where the kriging correction reads it.
    """
    points = np.atleast_2d(points)
    if len(points) <= min(direct_max, DIRECT_MAX_POINTS):
        try:
            return TrajectorySampler.direct(model, points)
        except IllConditionedError:
            log.info("direct factorization failed; falling back to KL trajectories")
    nodes = kl_domain_nodes(model, points, stream, n_nodes)
    basis = build_kl(model, nodes, captured, extra_nodes=model.x_doe)
    return TrajectorySampler.kl(model, basis, points)
