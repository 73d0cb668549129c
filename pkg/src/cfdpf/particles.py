"""Weighted particle sets and the SIR primitives shared by local, centralised
and fusion filters.  Weights are kept in the log domain."""
from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np
from scipy.special import logsumexp

REG_RELATIVE = 1e-9
REG_ABSOLUTE = 1e-12


class FilterDivergence(RuntimeError):
    def __init__(self, message, node=None, k=None):
        super().__init__(f"{message} (node={node}, k={k})")
        self.node = node
        self.k = k


def normalize_log_weights(log_w):
    log_w = np.asarray(log_w, dtype=float)
    m = np.max(log_w)
    if not np.isfinite(m):
        raise FilterDivergence("filter divergence: total weight underflow")
    return log_w - logsumexp(log_w)


@dataclass(frozen=True)
class ParticleSet:
    particles: np.ndarray
    log_weights: np.ndarray
    time_index: int = 0
    kind: str = "filtering"

    def __post_init__(self):
        p = np.atleast_2d(np.asarray(self.particles, dtype=float))
        lw = np.asarray(self.log_weights, dtype=float)
        if lw.shape != (p.shape[0],):
            raise ValueError("log_weights length must match the number of particles")
        if self.kind not in ("filtering", "prediction"):
            raise ValueError(f"unknown particle set kind {self.kind!r}")
        object.__setattr__(self, "particles", p)
        object.__setattr__(self, "log_weights", lw)

    @classmethod
    def uniform(cls, particles, time_index=0, kind="filtering"):
        particles = np.atleast_2d(particles)
        n = particles.shape[0]
        return cls(particles, np.full(n, -np.log(n)), time_index, kind)

    @property
    def weights(self):
        return np.exp(self.log_weights)

    @property
    def n(self):
        return self.particles.shape[0]

    def normalized(self):
        return replace(self, log_weights=normalize_log_weights(self.log_weights))

    def mean(self):
        return self.weights @ self.particles


@dataclass(frozen=True)
class GaussianSummary:
    mean: np.ndarray
    covariance: np.ndarray
    kind: str = "filtering"
    node_id: int | None = None
    time_index: int = 0

    def __post_init__(self):
        object.__setattr__(self, "mean", np.atleast_1d(np.asarray(self.mean, dtype=float)))
        object.__setattr__(self, "covariance", np.atleast_2d(np.asarray(self.covariance, dtype=float)))

    @property
    def information(self):
        return np.linalg.inv(self.covariance)


def regularize(P, lam=REG_RELATIVE, floor=REG_ABSOLUTE):
    """Symmetrise and add lam * trace(P)/n * I (or ``floor`` * I when the trace is 0)."""
    P = 0.5 * (P + P.T)
    n = P.shape[0]
    tr = np.trace(P)
    eps = lam * tr / n if tr > 0 else floor
    return P + eps * np.eye(n)


def ess(pset: ParticleSet) -> float:
    w = pset.weights
    return 1.0 / np.sum(w * w)


def summarize(pset: ParticleSet, node_id=None) -> GaussianSummary:
    w = np.exp(normalize_log_weights(pset.log_weights))
    X = pset.particles
    mu = w @ X
    d = X - mu
    P = (d * w[:, None]).T @ d
    return GaussianSummary(mu, regularize(P), pset.kind, node_id, pset.time_index)


def systematic_indices(weights, rng):
    n = weights.size
    positions = (rng.random() + np.arange(n)) / n
    cum = np.cumsum(weights)
    cum[-1] = 1.0
    return np.searchsorted(cum, positions, side="right")


def resample(pset: ParticleSet, rng, roughening=0.0) -> ParticleSet:
    """Systematic resampling; optional roughening jitter after the copy.

    Roughening adds N(0, (K E_j N^{-1/d})^2) per dimension j, E_j being the
    particle spread, to counter sample impoverishment when process noise is
    small.  ``roughening=0`` disables it.
    """
    w = np.exp(normalize_log_weights(pset.log_weights))
    idx = systematic_indices(w, rng)
    X = pset.particles[idx]
    if roughening > 0:
        n, d = X.shape
        spread = X.max(axis=0) - X.min(axis=0)
        X = X + rng.standard_normal(X.shape) * (roughening * spread * n ** (-1.0 / d))
    return ParticleSet(X, np.full(X.shape[0], -np.log(X.shape[0])), pset.time_index, pset.kind)


def resample_if_degenerate(pset: ParticleSet, rng, threshold=0.5, roughening=0.0) -> ParticleSet:
    if ess(pset) < threshold * pset.n:
        return resample(pset, rng, roughening)
    return pset


def sample_prediction(pset: ParticleSet, model, rng) -> ParticleSet:
    """One draw from p(x(k) | X_i(k-1)) per particle; weights are carried over."""
    if pset.kind != "filtering":
        raise ValueError("sample_prediction expects a filtering set")
    X = model.propagate(pset.particles, rng)
    return ParticleSet(X, pset.log_weights.copy(), pset.time_index + 1, "prediction")


def reweight(pred: ParticleSet, log_likelihood, node=None) -> ParticleSet:
    """Turn a prediction set into the filtering set by adding log-likelihoods."""
    lw = pred.log_weights + log_likelihood
    try:
        lw = normalize_log_weights(lw)
    except FilterDivergence:
        raise FilterDivergence("filter divergence", node=node, k=pred.time_index) from None
    return ParticleSet(pred.particles, lw, pred.time_index, "filtering")


def sir_step(pset: ParticleSet, z, model, rng, node=None, threshold=0.5, roughening=0.0):
    """Transition-prior proposal, likelihood weighting and ESS-triggered resampling.

    ``node=None`` weights with all nodes' measurements (``z`` then a list).
    """
    pred = sample_prediction(pset, model, rng)
    if node is None:
        ll = model.log_likelihood_all(z, pred.particles)
    else:
        ll = model.log_likelihood(z, pred.particles, node)
    filt = reweight(pred, ll, node)
    return resample_if_degenerate(filt, rng, threshold, roughening)
