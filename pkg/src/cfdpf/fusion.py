"""Consensus/fusion distributed particle filter: Gaussian product fusion via
average consensus, the fusion filter with three proposal distributions, and
the multi-rate modified fusion filter."""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from enum import Enum

import numpy as np

from .consensus import ConsensusMatrix, ConsensusState, run_consensus
from .particles import (
    FilterDivergence,
    GaussianSummary,
    ParticleSet,
    ess,
    normalize_log_weights,
    regularize,
    resample,
)
from .ssm import gaussian_logpdf

log = logging.getLogger(__name__)

PD_FLOOR = 1e-9


class FusionError(RuntimeError):
    pass


class ProposalKind(str, Enum):
    SIR = "sir"
    PRODUCT = "product"
    OPTIMAL_GAUSSIAN = "optimal_gaussian"


@dataclass(frozen=True)
class MultiRateSchedule:
    """Observation interval, fusion cycle duration (same time unit) and lag cap.

    ``connectivity`` optionally scales the consensus progress made during
    each observation interval (1 = nominal, 0 = link outage).
    """

    dt_obs: float = 1.0
    t_c: float = 1.0
    max_lag: int = 2
    connectivity: tuple = ()

    def __post_init__(self):
        if self.max_lag < 1:
            raise ValueError("max_lag must be >= 1")
        if self.dt_obs <= 0 or self.t_c <= 0:
            raise ValueError("dt_obs and t_c must be positive")

    def rate(self, k):
        """Progress multiplier during observation interval k (1-based)."""
        if k - 1 < len(self.connectivity):
            return float(self.connectivity[k - 1])
        return 1.0


@dataclass
class FusedSummaries:
    product_filtering: GaussianSummary
    product_prediction: GaussianSummary
    consensus_sums: tuple  # network sums (sum P^-1, sum P^-1 mu, sum R^-1, sum R^-1 ups)
    iterations_used: int
    disagreement: list = field(default_factory=list)


@dataclass
class Proposal:
    """Proposal actually used for one fusion step; weights are derived from it."""

    kind: ProposalKind
    mean: np.ndarray | None = None
    cov: np.ndarray | None = None
    fallback: bool = False
    projected: bool = False


@dataclass
class FusionFilterState:
    particles: ParticleSet
    node_id: int = 0
    previous: np.ndarray | None = None
    ess: float = float("nan")
    resampled: bool = False
    proposal: Proposal | None = None

    @property
    def time_index(self):
        return self.particles.time_index

    def estimate(self):
        return self.particles.mean()


def _sym(M):
    return 0.5 * (M + M.T)


def _inv_spd(M, what="matrix"):
    try:
        L = np.linalg.cholesky(M)
    except np.linalg.LinAlgError:
        try:
            L = np.linalg.cholesky(regularize(M))
        except np.linalg.LinAlgError:
            raise FusionError(f"{what} is not invertible") from None
    Li = np.linalg.inv(L)
    return _sym(Li.T @ Li)


def draw_gaussian(mean, cov, n, rng):
    L = np.linalg.cholesky(cov)
    return mean + rng.standard_normal((n, mean.size)) @ L.T


def gaussian_product(summaries) -> GaussianSummary:
    """Parameters of prod_l N(mu_l, P_l) up to normalisation (information form)."""
    summaries = list(summaries)
    if not summaries:
        raise FusionError("gaussian_product needs at least one summary")
    if len(summaries) == 1:
        return summaries[0]
    dims = {s.mean.size for s in summaries}
    if len(dims) != 1:
        raise FusionError("summaries have different dimensions")
    info = np.zeros_like(summaries[0].covariance)
    vec = np.zeros_like(summaries[0].mean)
    for s in summaries:
        Yi = _inv_spd(s.covariance, f"covariance of node {s.node_id}")
        info += Yi
        vec += Yi @ s.mean
    P = _inv_spd(info, "product information")
    first = summaries[0]
    return GaussianSummary(P @ vec, P, first.kind, None, first.time_index)


def consensus_product(filtering, prediction, U, budget):
    """Run the four parallel average-consensus states and reconstruct per-node products.

    Returns one FusedSummaries per node.  With ``budget`` large enough every
    node recovers the exact gaussian_product of all inputs.
    """
    N = len(filtering)
    if len(prediction) != N:
        raise FusionError("need one filtering and one prediction summary per node")
    Umat = U.U if isinstance(U, ConsensusMatrix) else np.asarray(U, dtype=float)
    if Umat.shape != (N, N):
        raise FusionError("consensus matrix does not match the number of nodes")

    Yf = [_inv_spd(s.covariance, f"filtering covariance of node {l}") for l, s in enumerate(filtering)]
    Yp = [_inv_spd(s.covariance, f"prediction covariance of node {l}") for l, s in enumerate(prediction)]
    states = [
        ConsensusState(np.stack(Yf)),
        ConsensusState(np.stack([Y @ s.mean for Y, s in zip(Yf, filtering)])),
        ConsensusState(np.stack(Yp)),
        ConsensusState(np.stack([Y @ s.mean for Y, s in zip(Yp, prediction)])),
    ]
    done = [run_consensus(s, Umat, budget) for s in states]
    c1, c2, c3, c4 = (d.values for d in done)

    out = []
    for l in range(N):
        inv1 = _inv_spd(_sym(c1[l]), f"consensus state X_c1 at node {l}")
        inv3 = _inv_spd(_sym(c3[l]), f"consensus state X_c3 at node {l}")
        filt = GaussianSummary(inv1 @ c2[l], _sym(inv1 / N), "filtering", l, filtering[l].time_index)
        pred = GaussianSummary(inv3 @ c4[l], _sym(inv3 / N), "prediction", l, prediction[l].time_index)
        sums = (N * c1[l], N * c2[l], N * c3[l], N * c4[l])
        out.append(FusedSummaries(filt, pred, sums, budget, done[0].disagreement))
    return out


def _project_pd(Y):
    """Clamp eigenvalues to PD_FLOOR * max|lambda|.

    Only round-off is absorbed: an eigenvalue below -PD_FLOOR * max|lambda|
    means the matrix is genuinely indefinite and None is returned, since
    flooring it would put an almost flat proposal along that direction.
    """
    Y = _sym(Y)
    lam, V = np.linalg.eigh(Y)
    top = np.max(np.abs(lam))
    if not np.isfinite(top) or top <= 0:
        return None, False
    floor = PD_FLOOR * top
    if lam.min() < -floor:
        return None, False
    projected = bool(lam.min() < floor)
    lam = np.maximum(lam, floor)
    return _sym((V * lam) @ V.T), projected


def optimal_gaussian_parameters(fused: FusedSummaries, local_pred: GaussianSummary):
    """Track-fusion-without-feedback Gaussian: information R_l^-1 + sum P^-1 - sum R^-1."""
    s1, s2, s3, s4 = fused.consensus_sums
    Rl_inv = _inv_spd(local_pred.covariance, "local prediction covariance")
    info = Rl_inv + s1 - s3
    info, projected = _project_pd(info)
    if info is None:
        return None
    cov = _inv_spd(info, "optimal-Gaussian information")
    mean = cov @ (Rl_inv @ local_pred.mean + s2 - s4)
    return mean, cov, projected


def propose(kind, state: FusionFilterState, fused: FusedSummaries, local_pred, model, rng):
    """Draw the fusion particles for time k; returns (particles, Proposal)."""
    kind = ProposalKind(kind)
    X_prev = state.particles.particles
    n = X_prev.shape[0]
    if kind is ProposalKind.SIR:
        return model.propagate(X_prev, rng), Proposal(kind)
    if kind is ProposalKind.OPTIMAL_GAUSSIAN:
        params = optimal_gaussian_parameters(fused, local_pred)
        if params is not None:
            mean, cov, projected = params
            return draw_gaussian(mean, cov, n, rng), Proposal(kind, mean, cov, projected=projected)
        log.debug("optimal-Gaussian proposal not positive definite at node %s; using product", state.node_id)
        f = fused.product_filtering
        return draw_gaussian(f.mean, f.covariance, n, rng), Proposal(kind, f.mean, f.covariance, fallback=True)
    f = fused.product_filtering
    return draw_gaussian(f.mean, f.covariance, n, rng), Proposal(kind, f.mean, f.covariance)


def ff_weight_update(proposal: Proposal, X, X_prev, prev_log_weights, fused: FusedSummaries, model):
    """Normalised fusion-filter log-weights for particles drawn by ``proposal``."""
    f, p = fused.product_filtering, fused.product_prediction
    num_pred = gaussian_logpdf(X, p.mean, p.covariance)
    if proposal.kind is ProposalKind.SIR:
        inc = gaussian_logpdf(X, f.mean, f.covariance) - num_pred
    elif proposal.kind is ProposalKind.PRODUCT or proposal.fallback:
        inc = model.transition_logpdf(X, X_prev) - num_pred
    else:
        inc = (
            gaussian_logpdf(X, f.mean, f.covariance)
            + model.transition_logpdf(X, X_prev)
            - num_pred
            - gaussian_logpdf(X, proposal.mean, proposal.cov)
        )
    try:
        return normalize_log_weights(prev_log_weights + inc)
    except FilterDivergence:
        raise FilterDivergence("fusion divergence") from None


def _finish(state, X, lw, k, proposal, rng, threshold, roughening):
    ps = ParticleSet(X, lw, k, "filtering")
    e = ess(ps)
    resampled = e < threshold * ps.n
    if resampled:
        ps = resample(ps, rng, roughening)
    return FusionFilterState(ps, state.node_id, state.particles.particles, e, resampled, proposal)


def fusion_filter_step(state, fused, kind, model, rng, local_pred=None, threshold=0.5, roughening=0.0):
    """One fusion-filter iteration at a node given its consensus output."""
    kind = ProposalKind(kind)
    if kind is ProposalKind.OPTIMAL_GAUSSIAN and local_pred is None:
        raise FusionError("optimal-Gaussian proposal needs the node's local prediction summary")
    X, proposal = propose(kind, state, fused, local_pred, model, rng)
    try:
        lw = ff_weight_update(proposal, X, state.particles.particles, state.particles.log_weights, fused, model)
    except FilterDivergence:
        raise FilterDivergence("fusion divergence", node=state.node_id, k=state.time_index + 1) from None
    return _finish(state, X, lw, state.time_index + 1, proposal, rng, threshold, roughening)


def fusion_round(states, filtering, prediction, U, budget, kind, model, rngs, threshold=0.5, roughening=0.0):
    """Standard fusion across the network: one consensus pass, then every node's fusion step."""
    fused = consensus_product(filtering, prediction, U, budget)
    new = [
        fusion_filter_step(s, fused[l], kind, model, rngs[l], prediction[l], threshold, roughening)
        for l, s in enumerate(states)
    ]
    return new, fused


def modified_fusion_filter_step(state, fused, model, rng, m, threshold=0.5, roughening=0.0):
    """Advance a node's fusion filter from k to k+m using fused multi-step products.

    ``fused`` carries the consensus output of the per-node products over
    k' in (k, k+m].  Intermediate states are drawn from the transition
    prior, the final one from the fused filtering product, and the weight
    multiplies in every transition density and divides by the fused
    prediction product.
    """
    if m < 1:
        raise FusionError("m must be >= 1")
    X0 = state.particles.particles
    path = [X0]
    for _ in range(m - 1):
        path.append(model.propagate(path[-1], rng))
    f, p = fused.product_filtering, fused.product_prediction
    X = draw_gaussian(f.mean, f.covariance, X0.shape[0], rng)
    path.append(X)
    trans = 0.0
    for a, b in zip(path[:-1], path[1:]):
        trans = trans + model.transition_logpdf(b, a)
    inc = trans - gaussian_logpdf(X, p.mean, p.covariance)
    try:
        lw = normalize_log_weights(state.particles.log_weights + inc)
    except FilterDivergence:
        raise FilterDivergence("fusion divergence", node=state.node_id, k=state.time_index + m) from None
    proposal = Proposal(ProposalKind.PRODUCT, f.mean, f.covariance)
    new = _finish(state, X, lw, state.time_index + m, proposal, rng, threshold, roughening)
    new.previous = path[-2]
    return new


def stack_local_history(history):
    """Per-node product over the buffered steps k' in (k, k+m]."""
    if not history:
        raise FusionError("insufficient local summary buffer")
    n_nodes = len(history[0])
    return [gaussian_product([h[l] for h in history]) for l in range(n_nodes)]


def modified_fusion_round(states, filtering_hist, prediction_hist, U, budget, model, rngs, threshold=0.5, roughening=0.0):
    """Multi-step fusion across the network for m = len(filtering_hist) buffered steps."""
    m = len(filtering_hist)
    if m < 1 or len(prediction_hist) != m:
        raise FusionError("insufficient local summary buffer")
    filt = stack_local_history(filtering_hist)
    pred = stack_local_history(prediction_hist)
    fused = consensus_product(filt, pred, U, budget)
    new = [
        modified_fusion_filter_step(s, fused[l], model, rngs[l], m, threshold, roughening)
        for l, s in enumerate(states)
    ]
    return new, fused
