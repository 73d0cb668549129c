"""Posterior Cramer-Rao lower bound: centralised recursion, the exact
distributed recursion built from local filtering / prediction FIMs, and the
two approximations used for comparison.

Expectations are taken over simulated prior trajectories (``monte_carlo``)
or evaluated exactly for linear models (``closed_form_gaussian``).
"""
from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .particles import regularize

VARIANTS = ("central", "exact", "tharmarasa", "sum")

# The recursions subtract matrices of order 1/sigma_v^2, so they are carried
# in extended precision where the platform has it.
WORK_DTYPE = np.longdouble


class PcrlbError(RuntimeError):
    pass


@dataclass(frozen=True)
class ExpectationConfig:
    n_trajectories: int = 200
    seed: int = 0
    mode: str = "monte_carlo"

    def __post_init__(self):
        if self.n_trajectories < 1:
            raise ValueError("n_trajectories must be >= 1")
        if self.mode not in ("monte_carlo", "closed_form_gaussian"):
            raise ValueError(f"unknown expectation mode {self.mode!r}")


@dataclass
class DBlocks:
    D11: np.ndarray
    D12: np.ndarray
    D21: np.ndarray
    D22: np.ndarray
    B22: np.ndarray
    Jz: list
    C22: np.ndarray | None = None


def _sym(M):
    return 0.5 * (M + M.T)


def _cholesky_ext(A):
    """Lower Cholesky factor for dtypes numpy.linalg does not accept."""
    n = A.shape[0]
    L = np.zeros_like(A)
    for j in range(n):
        d = A[j, j] - L[j, :j] @ L[j, :j]
        if not d > 0:
            raise np.linalg.LinAlgError("not positive definite")
        L[j, j] = np.sqrt(d)
        L[j + 1:, j] = (A[j + 1:, j] - L[j + 1:, :j] @ L[j, :j]) / L[j, j]
    return L


def _tri_solve(L, B, lower=True):
    n = L.shape[0]
    X = np.zeros_like(B)
    order = range(n) if lower else range(n - 1, -1, -1)
    for i in order:
        rest = slice(0, i) if lower else slice(i + 1, n)
        X[i] = (B[i] - L[i, rest] @ X[rest]) / L[i, i]
    return X


def _solve_spd(A, B, what="J + D11"):
    """A^{-1} B via Cholesky, retried once with the covariance regularisation floor."""
    A = _sym(A)
    ext = A.dtype != np.float64
    for attempt in (A, regularize(A)):
        try:
            L = _cholesky_ext(attempt) if ext else np.linalg.cholesky(attempt)
        except np.linalg.LinAlgError:
            continue
        if ext:
            return _tri_solve(L.T, _tri_solve(L, B), lower=False)
        return np.linalg.solve(L.T, np.linalg.solve(L, B))
    raise PcrlbError(f"singular {what}")


def _to_work(blocks):
    cast = lambda M: np.asarray(M, dtype=WORK_DTYPE)
    B22 = cast(blocks.B22)
    Jz = [cast(j) for j in blocks.Jz]
    # D22 is re-summed so that it carries the same precision as C22
    return DBlocks(cast(blocks.D11), cast(blocks.D12), cast(blocks.D21), B22 + sum(Jz), B22, Jz)


def d_blocks_gaussian(model, X_k, X_k1=None, cfg: ExpectationConfig | None = None):
    """D-blocks for additive Gaussian process noise.

    ``X_k`` are samples of x(k) (rows), ``X_k1`` samples of x(k+1) used for
    the measurement information.  For linear models the expectations are of
    constants and a single sample suffices.
    """
    Q = getattr(model, "process_cov", None)
    if Q is None:
        raise PcrlbError("model has no additive Gaussian process noise")
    try:
        Qi = np.linalg.inv(np.linalg.cholesky(Q))
    except np.linalg.LinAlgError:
        raise PcrlbError("singular process covariance Q") from None
    Qi = Qi.T @ Qi
    X_k = np.atleast_2d(X_k)
    X_k1 = X_k if X_k1 is None else np.atleast_2d(X_k1)
    if cfg is not None and cfg.mode == "closed_form_gaussian":
        X_k, X_k1 = X_k[:1], X_k1[:1]
    F = model.transition_jacobian(X_k)  # (n, nx, nx): dF_i/dx_j
    D11 = np.mean(F.transpose(0, 2, 1) @ Qi @ F, axis=0)
    D12 = -np.mean(F, axis=0).T @ Qi
    Jz = [np.mean(model.measurement_information(X_k1, l), axis=0) for l in range(model.n_nodes)]
    D22 = Qi + sum(Jz)
    return DBlocks(_sym(D11), D12, D12.T.copy(), _sym(D22), _sym(Qi), [_sym(j) for j in Jz])


def _prior_term(J, blocks):
    return blocks.D21 @ _solve_spd(J + blocks.D11, blocks.D12)


def centralized_fim_step(J, blocks: DBlocks):
    return _sym(blocks.D22 - _prior_term(J, blocks))


def local_prediction_fim_step(J_l, blocks: DBlocks):
    return _sym(blocks.B22 - _prior_term(J_l, blocks))


def local_fim_step(J_l, blocks: DBlocks, node):
    """Local filtering FIM at node l: D22 restricted to that node's measurements."""
    return _sym(blocks.B22 + blocks.Jz[node] - _prior_term(J_l, blocks))


def local_fim_pair(J_l, blocks: DBlocks, node):
    """(J_l(k+1), J_l(k+1|k)) sharing one evaluation of the prior term."""
    S = _prior_term(J_l, blocks)
    return _sym(blocks.B22 + blocks.Jz[node] - S), _sym(blocks.B22 - S)


def c22(local_fims, local_pred_fims, blocks: DBlocks):
    return _sym(sum(local_fims) - sum(local_pred_fims) + blocks.B22)


def distributed_fim_step(J, local_fims, local_pred_fims, blocks: DBlocks):
    if len(local_fims) != len(local_pred_fims):
        raise PcrlbError("need one filtering and one prediction FIM per node")
    C = c22(local_fims, local_pred_fims, blocks)
    blocks.C22 = C
    return _sym(C - _prior_term(J, blocks))


def approx_fim_tharmarasa(J_l_prev, local_fims, local_pred_fims, blocks: DBlocks):
    """Node-dependent approximation: C22 - D21 (J_l(k) + D11)^-1 D12."""
    return _sym(c22(local_fims, local_pred_fims, blocks) - _prior_term(J_l_prev, blocks))


def approx_fim_tharmarasa_direct(node, local_fims, local_pred_fims):
    """The same approximation written as J_l(k+1) + sum_{j != l} (J_j(k+1) - J_j(k+1|k))."""
    out = local_fims[node].copy()
    for j, (a, b) in enumerate(zip(local_fims, local_pred_fims)):
        if j != node:
            out = out + a - b
    return _sym(out)


def approx_fim_sum(local_fims, local_pred_fims):
    return _sym(sum(a - b for a, b in zip(local_fims, local_pred_fims)))


def pcrlb_position_bound(J, position_indices):
    """sqrt(trace of the position block of J^-1).

    The position block of J^-1 is the inverse of the Schur complement of the
    remaining block, which also covers information matrices that carry no
    information about the non-position states.
    """
    J = np.asarray(J, dtype=float)
    pos = list(position_indices)
    rest = [i for i in range(J.shape[0]) if i not in pos]
    S = J[np.ix_(pos, pos)]
    if rest:
        Jpr = J[np.ix_(pos, rest)]
        S = S - Jpr @ np.linalg.pinv(J[np.ix_(rest, rest)], rcond=1e-12, hermitian=True) @ Jpr.T
    S = _sym(S)
    try:
        L = np.linalg.cholesky(S)
    except np.linalg.LinAlgError:
        raise PcrlbError("singular information matrix") from None
    Li = np.linalg.inv(L)
    return float(np.sqrt(np.sum(Li * Li)))


def simulate_trajectories(model, m0, P0, n_steps, n_traj, rng):
    """Prior state paths (no measurements); shape (n_steps + 1, n_traj, n_x)."""
    L = np.linalg.cholesky(np.asarray(P0, dtype=float))
    X = np.asarray(m0, dtype=float) + rng.standard_normal((n_traj, len(m0))) @ L.T
    out = [X]
    for _ in range(n_steps):
        X = model.propagate(X, rng)
        out.append(X)
    return np.stack(out)


@dataclass
class BoundResult:
    """Information matrices per variant and step (index 0 is the prior)."""

    J: dict = field(default_factory=dict)
    position: dict = field(default_factory=dict)
    local: list = field(default_factory=list)
    local_pred: list = field(default_factory=list)
    blocks: list = field(default_factory=list)
    tharmarasa_nodes: tuple = ()

    def variants(self):
        return list(self.J)


def compute_bounds(model, m0, P0, n_steps, cfg: ExpectationConfig | None = None, tharmarasa_nodes=(0,),
                   trajectories=None, variants=VARIANTS):
    """All bound variants in one pass over shared D-blocks.

    Returns a BoundResult with keys ``central``, ``exact`` and, when
    requested, ``sum`` and ``tharmarasa[l]`` for each listed node.
    """
    cfg = cfg or ExpectationConfig()
    if trajectories is None:
        rng = np.random.default_rng(cfg.seed)
        n_traj = 1 if cfg.mode == "closed_form_gaussian" else cfg.n_trajectories
        trajectories = simulate_trajectories(model, m0, P0, n_steps, n_traj, rng)
    J0 = _sym(np.linalg.inv(np.asarray(P0, dtype=float))).astype(WORK_DTYPE)
    pos = model.position_indices
    N = model.n_nodes
    res = BoundResult(tharmarasa_nodes=tuple(tharmarasa_nodes))
    keys = ["central", "exact"]
    if "sum" in variants:
        keys.append("sum")
    if "tharmarasa" in variants:
        keys += [f"tharmarasa[{l}]" for l in tharmarasa_nodes]
    for key in keys:
        res.J[key] = [J0]
    J_loc = [J0.copy() for _ in range(N)]
    res.local.append(list(J_loc))
    res.local_pred.append([J0.copy() for _ in range(N)])
    for k in range(n_steps):
        blocks = _to_work(d_blocks_gaussian(model, trajectories[k], trajectories[k + 1], cfg))
        pairs = [local_fim_pair(J_loc[l], blocks, l) for l in range(N)]
        new_loc = [p[0] for p in pairs]
        new_pred = [p[1] for p in pairs]
        res.J["central"].append(centralized_fim_step(res.J["central"][-1], blocks))
        res.J["exact"].append(distributed_fim_step(res.J["exact"][-1], new_loc, new_pred, blocks))
        if "sum" in res.J:
            res.J["sum"].append(approx_fim_sum(new_loc, new_pred))
        for l in tharmarasa_nodes if "tharmarasa" in variants else ():
            res.J[f"tharmarasa[{l}]"].append(approx_fim_tharmarasa(J_loc[l], new_loc, new_pred, blocks))
        res.blocks.append(blocks)
        res.local.append(new_loc)
        res.local_pred.append(new_pred)
        J_loc = new_loc
    f64 = lambda M: np.asarray(M, dtype=np.float64)
    res.J = {key: [f64(J) for J in Js] for key, Js in res.J.items()}
    res.local = [[f64(J) for J in row] for row in res.local]
    res.local_pred = [[f64(J) for J in row] for row in res.local_pred]
    for key, Js in res.J.items():
        bounds = []
        for J in Js:
            try:
                bounds.append(pcrlb_position_bound(J, pos))
            except PcrlbError:
                bounds.append(float("inf"))
        res.position[key] = bounds
    return res


def write_bounds_csv(result: BoundResult, path):
    """Columns: k, variant, position_bound, J_00 ... J_(n-1)(n-1) row-major."""
    path = Path(path)
    variants = result.variants()
    n = result.J[variants[0]][0].shape[0]
    header = ["k", "variant", "position_bound"] + [f"J_{i}{j}" for i in range(n) for j in range(n)]
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for v in variants:
            for k, (J, b) in enumerate(zip(result.J[v], result.position[v])):
                w.writerow([k, v, repr(float(b))] + [repr(float(x)) for x in J.ravel()])
    return path
