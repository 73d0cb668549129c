"""Scenario orchestration: model and network construction, multi-rate
scheduling, single runs, Monte-Carlo batches, metrics and export."""
from __future__ import annotations

import csv
import dataclasses
import hashlib
import json
import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

import jsonschema
import numpy as np

from . import consensus as cons
from . import pcrlb as pc
from .fusion import (
    FusionFilterState,
    MultiRateSchedule,
    ProposalKind,
    fusion_round,
    modified_fusion_round,
)
from .particles import (
    FilterDivergence,
    ParticleSet,
    reweight,
    resample_if_degenerate,
    sample_prediction,
    summarize,
)
from .ssm import (
    BearingOnlyModel,
    CoordinatedTurnParams,
    GlintNoiseParams,
    LinearGaussianModel,
    UnicycleModel,
    UnicycleParams,
    kalman_filter,
)

log = logging.getLogger(__name__)

DEG2 = (math.pi / 180.0) ** 2


class ConfigError(ValueError):
    pass


# ---------------------------------------------------------------------------
# Configuration


@dataclass
class BotSettings:
    A_m: float = 1.08e-5
    sigma_v: float = 1.6e-3
    epsilon: float = 0.09
    variance_coeffs: tuple = (0.08, 0.1150, 0.7405)
    inflation: float = 1e4
    variance_units: str = "deg2"
    single_quadrant: bool = False
    start: tuple = (3.0, 6.0)
    course_deg: float = -140.0
    speed: float = 0.49
    prior_cov_diag: tuple = (1.0, 1.0, 0.1, 0.1)


@dataclass
class UnicycleSettings:
    velocity_mean: float = 30.0
    velocity_std: float = 5.0
    angular_velocity_mean: float = 0.08
    angular_velocity_std: float = 0.01
    orientation_noise_std: float = 0.01
    length_per_unit: float = 100.0
    epsilon: float = 0.09
    variance_coeffs: tuple = (0.08, 0.1150, 0.7405)
    inflation: float = 1e4
    variance_units: str = "deg2"
    start: tuple = (3.0, 5.0, 0.0)
    prior_cov_diag: tuple = (0.25, 0.25, 0.01)


@dataclass
class LinearSettings:
    dim: int = 1
    F: list | None = None
    Q: list | None = None
    H: list | None = None  # one matrix per node (or one shared)
    R: list | None = None
    start: tuple | None = None
    prior_cov_diag: tuple | None = None

    def matrices(self, n_nodes):
        d = self.dim
        if d == 1:
            F, Q, H, R = [[1.0]], [[1.0]], [[1.0]], [[1.0]]
        else:
            F = [[1.0, 1.0], [0.0, 1.0]]
            Q = [[0.25, 0.1], [0.1, 0.2]]
            H = [[1.0, 0.0]]
            R = [[1.0]]
        F = np.array(self.F if self.F is not None else F, dtype=float)
        Q = np.array(self.Q if self.Q is not None else Q, dtype=float)
        Hs = np.array(self.H if self.H is not None else H, dtype=float)
        Rs = np.array(self.R if self.R is not None else R, dtype=float)
        Hs = [Hs] * n_nodes if Hs.ndim == 2 else list(Hs)
        Rs = [Rs] * n_nodes if Rs.ndim == 2 else list(Rs)
        return F, Q, Hs, Rs


@dataclass
class PcrlbSettings:
    enabled: bool = False
    n_trajectories: int = 200
    mode: str = "monte_carlo"
    tharmarasa_nodes: tuple = (0, 1)


@dataclass
class ScenarioConfig:
    scenario: str = "bot"
    n_steps: int = 30
    n_nodes: int = 8
    region_side: float = 16.0
    connectivity_radius: float | None = None
    n_particles_central: int = 2000
    n_particles_local: int = 200
    n_particles_fusion: int = 200
    proposals: tuple = ("product",)
    fusion_algorithm: str = "standard"  # "standard" (one step per cycle) or "modified"
    schedule: MultiRateSchedule = field(default_factory=MultiRateSchedule)
    consensus_budget: int | None = None
    mc_runs: int = 25
    seed: int = 0
    fixed_graph: bool = True
    resample_threshold: float = 0.5
    roughening: float = 0.2
    standalone_node: int = 0
    shared_fusion_seed: bool = False
    run_central: bool = True
    cdf_points: tuple = ((0, 5), (0, 22))
    bot: BotSettings = field(default_factory=BotSettings)
    unicycle: UnicycleSettings = field(default_factory=UnicycleSettings)
    linear: LinearSettings = field(default_factory=LinearSettings)
    pcrlb: PcrlbSettings = field(default_factory=PcrlbSettings)

    def __post_init__(self):
        if self.scenario not in ("bot", "unicycle", "linear_test"):
            raise ConfigError(f"unknown scenario {self.scenario!r}")
        for name in ("n_steps", "n_nodes", "n_particles_central", "n_particles_local", "n_particles_fusion", "mc_runs"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be >= 1")
        if self.fusion_algorithm not in ("standard", "modified"):
            raise ConfigError(f"unknown fusion algorithm {self.fusion_algorithm!r}")
        self.proposals = tuple(ProposalKind(p).value for p in self.proposals)
        if self.seed is None:
            raise ConfigError("seed is mandatory")

    # -- (de)serialisation --------------------------------------------------
    def to_dict(self):
        d = dataclasses.asdict(self)
        return json.loads(json.dumps(d, default=list))

    @classmethod
    def from_dict(cls, doc):
        try:
            jsonschema.validate(doc, config_schema())
        except jsonschema.ValidationError as exc:
            where = "/".join(str(p) for p in exc.absolute_path) or "<root>"
            raise ConfigError(f"invalid config at {where}: {exc.message}") from None
        doc = dict(doc)
        nested = {
            "schedule": MultiRateSchedule,
            "bot": BotSettings,
            "unicycle": UnicycleSettings,
            "linear": LinearSettings,
            "pcrlb": PcrlbSettings,
        }
        for key, typ in nested.items():
            if key in doc:
                sub = dict(doc[key])
                for k, v in sub.items():
                    if isinstance(v, list) and key != "linear":
                        sub[k] = tuple(v)
                doc[key] = typ(**sub)
        for key in ("proposals",):
            if key in doc:
                doc[key] = tuple(doc[key])
        if "cdf_points" in doc:
            doc["cdf_points"] = tuple(tuple(p) for p in doc["cdf_points"])
        try:
            return cls(**doc)
        except (TypeError, ValueError) as exc:
            raise ConfigError(str(exc)) from exc

    @classmethod
    def load(cls, path):
        return cls.from_dict(json.loads(Path(path).read_text()))


def config_schema():
    return json.loads(resources.files("cfdpf").joinpath("config_schema.json").read_text())


def desk_scale_bot(**overrides):
    cfg = ScenarioConfig()
    return dataclasses.replace(cfg, **overrides)


def full_scale_bot(**overrides):
    cfg = ScenarioConfig(
        n_nodes=20,
        n_particles_central=10000,
        n_particles_local=500,
        n_particles_fusion=500,
        mc_runs=100,
        proposals=("sir", "product", "optimal_gaussian"),
    )
    return dataclasses.replace(cfg, **overrides)


# ---------------------------------------------------------------------------
# Seeds


def stream(seed, *keys):
    """Independent generator for (seed, *keys); keys are small non-negative ints."""
    return np.random.default_rng(np.random.SeedSequence(entropy=int(seed), spawn_key=tuple(int(k) for k in keys)))


_TRUTH, _CENTRAL, _LOCAL, _FUSION, _GRAPH, _PCRLB, _RUN = range(7)


# ---------------------------------------------------------------------------
# Scenario construction


@dataclass
class Scenario:
    model: object
    graph: cons.NetworkGraph
    U: cons.ConsensusMatrix
    x0: np.ndarray
    prior_mean: np.ndarray
    prior_cov: np.ndarray


def _variance_scale(units):
    if units == "rad2":
        return 1.0
    if units == "deg2":
        return DEG2
    raise ConfigError(f"unknown variance units {units!r}")


def build_graph(cfg: ScenarioConfig, seed):
    radius = cfg.connectivity_radius
    if radius is None:
        radius = cons.default_radius(cfg.n_nodes, cfg.region_side)
    if cfg.n_nodes == 1:
        g = cons.NetworkGraph(np.zeros((1, 1), dtype=bool), np.zeros((1, 2)), radius)
        return g, cons.ConsensusMatrix(np.ones((1, 1)))
    g = cons.random_geometric_graph(cfg.n_nodes, radius, cfg.region_side, stream(seed, _GRAPH))
    return g, cons.metropolis_weights(g)


def build_scenario(cfg: ScenarioConfig, seed) -> Scenario:
    graph, U = build_graph(cfg, seed)
    if cfg.scenario == "bot":
        b = cfg.bot
        course = math.radians(b.course_deg)
        x0 = np.array([b.start[0], b.start[1], b.speed * math.sin(course), b.speed * math.cos(course)])
        model = BearingOnlyModel(
            graph.positions,
            CoordinatedTurnParams(b.A_m, cfg.schedule.dt_obs, b.sigma_v),
            GlintNoiseParams(b.epsilon, tuple(b.variance_coeffs), b.inflation),
            _variance_scale(b.variance_units),
            b.single_quadrant,
        )
        P0 = np.diag(b.prior_cov_diag)
    elif cfg.scenario == "unicycle":
        u = cfg.unicycle
        params = UnicycleParams(
            cfg.schedule.dt_obs, u.velocity_mean, u.velocity_std, u.angular_velocity_mean,
            u.angular_velocity_std, u.orientation_noise_std, u.length_per_unit,
        )
        model = UnicycleModel(
            graph.positions, params, GlintNoiseParams(u.epsilon, tuple(u.variance_coeffs), u.inflation),
            _variance_scale(u.variance_units),
        )
        x0 = np.array(u.start, dtype=float)
        P0 = np.diag(u.prior_cov_diag)
    else:
        lin = cfg.linear
        F, Q, H, R = lin.matrices(cfg.n_nodes)
        model = LinearGaussianModel(F, Q, H, R, (0,))
        x0 = np.array(lin.start if lin.start is not None else np.zeros(F.shape[0]), dtype=float)
        P0 = np.diag(lin.prior_cov_diag) if lin.prior_cov_diag is not None else np.eye(F.shape[0])
    return Scenario(model, graph, U, x0, x0.copy(), P0)


def consensus_budget(cfg: ScenarioConfig, U: cons.ConsensusMatrix):
    """Iterations for one full fusion consensus (defaults to ceil(10 N_c))."""
    if cfg.consensus_budget is not None:
        return int(cfg.consensus_budget)
    nc = U.convergence_time
    if not math.isfinite(nc):
        raise ConfigError("consensus matrix does not converge")
    return max(1, math.ceil(10.0 * nc))


# ---------------------------------------------------------------------------
# Multi-rate scheduling


@dataclass
class ScheduleTrace:
    """Fusion timing over observation steps 1..n_steps.

    ``batches`` are (first_index, m) pairs for the modified filter;
    ``lag_standard`` and ``lag_modified`` give k - (last fused index) at each
    observation time k (index 0 unused).  ``backlog_standard`` is the number
    of pending steps the standard filter finds each time it has cleared its previous
    backlog; with T_c = 2 dT it doubles (1, 2, 4, ...).
    """

    batches: list
    m_sequence: list
    lag_standard: list
    lag_modified: list
    standard_completions: list
    backlog_standard: list


def _cycle_end(start, t_c, schedule: MultiRateSchedule, horizon):
    """Time at which a consensus cycle of nominal length t_c started at ``start`` completes."""
    dt = schedule.dt_obs
    t, work = start, 0.0
    while True:
        k = int(math.floor(t / dt + 1e-12)) + 1  # interval (k-1, k] in observation units
        boundary = k * dt
        rate = schedule.rate(k)
        if rate > 0:
            need = (t_c - work) / rate
            if t + need <= boundary + 1e-12:
                return t + need
            work += (boundary - t) * rate
        t = boundary
        if t > horizon * dt * 10 + 10 * t_c:
            return math.inf


def schedule_multirate(schedule: MultiRateSchedule, n_steps: int) -> ScheduleTrace:
    dt = schedule.dt_obs
    eps = 1e-9

    # standard filter: one observation index per completed cycle, oldest first.
    ends = []
    t_free = dt
    for j in range(1, n_steps + 1):
        start = max(j * dt, t_free)
        end = _cycle_end(start, schedule.t_c, schedule, n_steps)
        ends.append(end)
        t_free = end
    lag_std = [0]
    for k in range(1, n_steps + 1):
        done = sum(1 for e in ends if e <= k * dt + eps)
        lag_std.append(k - done)
    backlog, fused = [], 0
    while fused < n_steps and fused < len(ends):
        t = ends[fused - 1] if fused else dt
        if not math.isfinite(t):
            break
        pending = min(n_steps, int(math.floor(t / dt + eps))) - fused
        pending = max(pending, 1)
        backlog.append(pending)
        fused += pending

    # Modified: each cycle fuses up to max_lag pending indices.
    batches, mod_ends = [], []
    fused, t = 0, dt
    while fused < n_steps:
        avail = min(n_steps, int(math.floor(t / dt + eps)))
        if avail <= fused:
            t = (fused + 1) * dt
            continue
        m = min(avail - fused, schedule.max_lag)
        end = _cycle_end(t, schedule.t_c, schedule, n_steps)
        batches.append((fused + 1, m))
        mod_ends.append((end, fused + m))
        fused += m
        t = end
        if not math.isfinite(t):
            break
    lag_mod = [0]
    for k in range(1, n_steps + 1):
        done = max([f for e, f in mod_ends if e <= k * dt + eps], default=0)
        lag_mod.append(k - done)
    return ScheduleTrace(batches, [m for _, m in batches], lag_std, lag_mod, ends, backlog)


# ---------------------------------------------------------------------------
# Single run


@dataclass
class RunLog:
    """Per-step results of one run.  Arrays are indexed by k = 0..n_steps."""

    truth: np.ndarray
    measurements: list
    central: np.ndarray | None
    local: np.ndarray
    fused: dict
    standalone: np.ndarray
    standalone_node: int
    lag: list
    m_sequence: list
    consensus_disagreement: dict
    pcrlb: dict
    diverged: dict
    snr_db: np.ndarray | None
    measurement_hash: str
    convergence_time: float
    graph: dict
    position_indices: tuple

    def to_dict(self):
        def arr(a):
            return None if a is None else np.asarray(a).tolist()

        return {
            "truth": arr(self.truth),
            "measurements": [[np.asarray(z).tolist() for z in zs] for zs in self.measurements],
            "central": arr(self.central),
            "local": arr(self.local),
            "fused": {k: arr(v) for k, v in self.fused.items()},
            "standalone": arr(self.standalone),
            "standalone_node": self.standalone_node,
            "lag": list(self.lag),
            "m_sequence": list(self.m_sequence),
            "consensus_disagreement": self.consensus_disagreement,
            "pcrlb": self.pcrlb,
            "diverged": self.diverged,
            "snr_db": arr(self.snr_db),
            "measurement_hash": self.measurement_hash,
            "convergence_time": self.convergence_time,
            "graph": self.graph,
            "position_indices": list(self.position_indices),
        }

    @classmethod
    def from_dict(cls, d):
        def arr(a):
            return None if a is None else np.array(a, dtype=float)

        return cls(
            truth=arr(d["truth"]),
            measurements=[[np.array(z) for z in zs] for zs in d["measurements"]],
            central=arr(d["central"]),
            local=arr(d["local"]),
            fused={k: arr(v) for k, v in d["fused"].items()},
            standalone=arr(d["standalone"]),
            standalone_node=d["standalone_node"],
            lag=list(d["lag"]),
            m_sequence=list(d["m_sequence"]),
            consensus_disagreement=d["consensus_disagreement"],
            pcrlb=d["pcrlb"],
            diverged=d["diverged"],
            snr_db=arr(d["snr_db"]),
            measurement_hash=d["measurement_hash"],
            convergence_time=d["convergence_time"],
            graph=d["graph"],
            position_indices=tuple(d["position_indices"]),
        )


def simulate_truth(scn: Scenario, n_steps, rng):
    model = scn.model
    xs = [scn.x0]
    zs = [[]]
    for _ in range(n_steps):
        x = model.propagate(xs[-1][None], rng)[0]
        xs.append(x)
        zs.append(model.observe_all(x, rng))
    return np.array(xs), zs


def measurement_hash(zs):
    h = hashlib.sha256()
    for step in zs:
        for z in step:
            h.update(np.ascontiguousarray(np.asarray(z, dtype=float)).tobytes())
    return h.hexdigest()


def _prior_particles(scn, n, rng):
    L = np.linalg.cholesky(scn.prior_cov)
    X = scn.prior_mean + rng.standard_normal((n, scn.prior_mean.size)) @ L.T
    return ParticleSet.uniform(X)


def _nan(shape):
    return np.full(shape, np.nan)


def run_scenario(cfg: ScenarioConfig, seed=None, scenario: Scenario | None = None, filter_seed=None) -> RunLog:
    """Simulate one truth/measurement realisation and run every configured filter on it.

    ``filter_seed`` (default: ``seed``) drives the filters only, so repeated
    calls with a fixed ``seed`` replay the same measurements.
    """
    seed = cfg.seed if seed is None else seed
    scn = scenario or build_scenario(cfg, seed)
    model = scn.model
    K, N, nx = cfg.n_steps, model.n_nodes, model.n_x
    truth, zs = simulate_truth(scn, K, stream(seed, _TRUTH))
    truth_seed, seed = seed, (seed if filter_seed is None else filter_seed)
    diverged = {}

    # centralised SIR filter on all measurements
    central = None
    if cfg.run_central:
        central = _nan((K + 1, nx))
        rng = stream(seed, _CENTRAL)
        ps = _prior_particles(scn, cfg.n_particles_central, rng)
        central[0] = ps.mean()
        try:
            for k in range(1, K + 1):
                pred = sample_prediction(ps, model, rng)
                ps = reweight(pred, model.log_likelihood_all(zs[k], pred.particles))
                central[k] = ps.mean()
                ps = resample_if_degenerate(ps, rng, cfg.resample_threshold, cfg.roughening)
        except FilterDivergence as exc:
            diverged["central"] = str(exc)

    # local filters; their Gaussian summaries feed every fusion variant
    local = _nan((K + 1, N, nx))
    filt_hist = [None] + [[None] * N for _ in range(K)]
    pred_hist = [None] + [[None] * N for _ in range(K)]
    local_failed = False
    for l in range(N):
        rng = stream(seed, _LOCAL, l)
        ps = _prior_particles(scn, cfg.n_particles_local, rng)
        local[0, l] = ps.mean()
        try:
            for k in range(1, K + 1):
                pred = sample_prediction(ps, model, rng)
                pred_hist[k][l] = summarize(pred, l)
                ps = reweight(pred, model.log_likelihood(zs[k][l], pred.particles, l), l)
                filt_hist[k][l] = summarize(ps, l)
                local[k, l] = ps.mean()
                ps = resample_if_degenerate(ps, rng, cfg.resample_threshold, cfg.roughening)
        except FilterDivergence as exc:
            diverged[f"local[{l}]"] = str(exc)
            local_failed = True
    standalone = local[:, cfg.standalone_node % N].copy()

    budget = consensus_budget(cfg, scn.U)
    trace = schedule_multirate(cfg.schedule, K)
    fused, disagreement = {}, {}
    if not local_failed:
        for pi, kind in enumerate(cfg.proposals):
            key = kind if cfg.fusion_algorithm == "standard" else "modified"
            try:
                fused[key], disagreement[key] = _run_fusion(cfg, scn, kind, pi, seed, budget, trace, filt_hist, pred_hist)
            except (FilterDivergence, np.linalg.LinAlgError, RuntimeError) as exc:
                diverged[f"fusion[{key}]"] = str(exc)
                fused[key] = _nan((K + 1, N, nx))
            if cfg.fusion_algorithm == "modified":
                break

    bounds = {}
    if cfg.pcrlb.enabled:
        bounds = run_pcrlb(cfg, scn, truth_seed)

    snr = None
    if hasattr(model, "snr_db"):
        snr = np.array([[model.snr_db(truth[k], l) for l in range(N)] for k in range(K + 1)])

    lag = trace.lag_standard if cfg.fusion_algorithm == "standard" else trace.lag_modified
    m_seq = [1] * K if cfg.fusion_algorithm == "standard" else trace.m_sequence
    return RunLog(
        truth=truth,
        measurements=zs,
        central=central,
        local=local,
        fused=fused,
        standalone=standalone,
        standalone_node=cfg.standalone_node % N,
        lag=lag,
        m_sequence=m_seq,
        consensus_disagreement=disagreement,
        pcrlb=bounds,
        diverged=diverged,
        snr_db=snr,
        measurement_hash=measurement_hash(zs),
        convergence_time=float(scn.U.convergence_time),
        graph=cons.graph_to_dict(scn.graph, scn.U),
        position_indices=tuple(model.position_indices),
    )


def _run_fusion(cfg, scn, kind, pi, seed, budget, trace, filt_hist, pred_hist):
    model = scn.model
    K, N, nx = cfg.n_steps, model.n_nodes, model.n_x
    out = _nan((K + 1, N, nx))
    if cfg.shared_fusion_seed:
        # every node gets its own generator on one common stream
        rngs = [stream(seed, _FUSION, pi) for _ in range(N)]
    else:
        rngs = [stream(seed, _FUSION, pi, l) for l in range(N)]
    states = []
    for l in range(N):
        ps = _prior_particles(scn, cfg.n_particles_fusion, rngs[l])
        states.append(FusionFilterState(ps, l))
        out[0, l] = ps.mean()
    disagreement = []
    if cfg.fusion_algorithm == "standard":
        ratio = cfg.schedule.dt_obs / cfg.schedule.t_c
        b = budget if ratio >= 1 else max(0, int(math.floor(budget * ratio)))
        for k in range(1, K + 1):
            states, fz = fusion_round(
                states, filt_hist[k], pred_hist[k], scn.U, b, kind, model, rngs,
                cfg.resample_threshold, cfg.roughening,
            )
            disagreement.append(fz[0].disagreement[-1])
            for l, s in enumerate(states):
                out[k, l] = s.estimate()
    else:
        for first, m in trace.batches:
            ks = range(first, first + m)
            states, fz = modified_fusion_round(
                states, [filt_hist[k] for k in ks], [pred_hist[k] for k in ks], scn.U, budget, model, rngs,
                cfg.resample_threshold, cfg.roughening,
            )
            disagreement.append(fz[0].disagreement[-1])
            for l, s in enumerate(states):
                out[first + m - 1, l] = s.estimate()
    return out, disagreement


def compute_scenario_bounds(cfg: ScenarioConfig, scn: Scenario, seed, variants=pc.VARIANTS) -> pc.BoundResult:
    """PCRLB variants over prior trajectories drawn from the run's seed lineage."""
    p = cfg.pcrlb
    ecfg = pc.ExpectationConfig(p.n_trajectories, int(seed), p.mode)
    traj = pc.simulate_trajectories(
        scn.model, scn.prior_mean, scn.prior_cov, cfg.n_steps,
        1 if p.mode == "closed_form_gaussian" else p.n_trajectories, stream(seed, _PCRLB),
    )
    nodes = tuple(dict.fromkeys(n % scn.model.n_nodes for n in p.tharmarasa_nodes))
    return pc.compute_bounds(scn.model, scn.prior_mean, scn.prior_cov, cfg.n_steps, ecfg, nodes, traj, variants)


def run_pcrlb(cfg: ScenarioConfig, scn: Scenario, seed, variants=pc.VARIANTS):
    res = compute_scenario_bounds(cfg, scn, seed, variants)
    return {k: list(v) for k, v in res.position.items()}


# ---------------------------------------------------------------------------
# Metrics


def position_errors(est, truth, pos):
    """Euclidean position error; est may carry a node axis."""
    pos = list(pos)
    if est.ndim == 3:
        return np.linalg.norm(est[:, :, pos] - truth[:, None, pos], axis=-1)
    return np.linalg.norm(est[:, pos] - truth[:, pos], axis=-1)


def method_estimates(run: RunLog):
    out = {}
    if run.central is not None:
        out["central"] = run.central
    out["local"] = run.local
    out["standalone"] = run.standalone
    for k, v in run.fused.items():
        out[f"fused_{k}"] = v
    return out


@dataclass
class MetricReport:
    methods: list
    rms: dict  # method -> list over k
    cdf: dict  # "method|coord|k" -> sorted samples
    summary: dict  # method -> time-averaged RMS over k >= 1
    n_runs: int
    excluded: int
    exclusion_rate: float
    lag_max: int
    m_max: int
    pcrlb: dict = field(default_factory=dict)

    def to_dict(self):
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, d):
        return cls(**d)


def aggregate(runs, cdf_points=()):
    """Monte-Carlo RMS per method and k; runs flagged as diverged are excluded."""
    kept = [r for r in runs if not r.diverged]
    excluded = len(runs) - len(kept)
    if not kept:
        raise RuntimeError("all Monte-Carlo runs diverged")
    methods = list(method_estimates(kept[0]))
    pos = kept[0].position_indices
    rms, summary, cdf = {}, {}, {}
    for m in methods:
        sq = []
        for r in kept:
            e = position_errors(method_estimates(r)[m], r.truth, pos)
            sq.append(e**2)
        sq = np.concatenate([s.reshape(s.shape[0], -1) for s in sq], axis=1)
        with np.errstate(invalid="ignore"):
            counts = np.sum(np.isfinite(sq), axis=1)
            total = np.nansum(sq, axis=1)
            curve = np.where(counts > 0, np.sqrt(total / np.maximum(counts, 1)), np.nan)
        rms[m] = [float(v) for v in curve]
        tail = curve[1:]
        summary[m] = float(np.nanmean(tail)) if np.any(np.isfinite(tail)) else float("nan")
        for coord, k in cdf_points:
            if k >= kept[0].truth.shape[0]:
                continue
            vals = []
            for r in kept:
                est = method_estimates(r)[m]
                v = est[k, ..., coord]
                vals.extend(np.atleast_1d(v)[np.isfinite(np.atleast_1d(v))].tolist())
            cdf[f"{m}|{coord}|{k}"] = sorted(float(v) for v in vals)
    lag_max = max(max(r.lag) for r in kept)
    m_max = max(max(r.m_sequence, default=0) for r in kept)
    bounds = kept[0].pcrlb
    return MetricReport(methods, rms, cdf, summary, len(runs), excluded, excluded / len(runs), lag_max, m_max, bounds)


def run_seeds(master_seed, runs):
    ss = np.random.SeedSequence(int(master_seed), spawn_key=(_RUN,))
    return [int(c.generate_state(1, dtype=np.uint32)[0]) for c in ss.spawn(runs)]


def _mc_run(args):
    cfg, seed, scn = args
    return run_scenario(cfg, seed, scn if scn is not None else build_scenario(cfg, seed))


def monte_carlo(cfg: ScenarioConfig, runs=None, keep_runs=False, workers=1):
    """Independent runs on per-run seeds; ``workers > 1`` runs them in processes.

    Results do not depend on ``workers`` since every run owns its seed streams.
    """
    runs = cfg.mc_runs if runs is None else runs
    if runs < 1:
        raise ConfigError("runs must be >= 1")
    fixed = build_scenario(cfg, cfg.seed) if cfg.fixed_graph else None
    jobs = [(cfg, s, fixed) for s in run_seeds(cfg.seed, runs)]
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            logs = list(pool.map(_mc_run, jobs))
    else:
        logs = [_mc_run(j) for j in jobs]
    report = aggregate(logs, cfg.cdf_points)
    return (report, logs) if keep_runs else report


# ---------------------------------------------------------------------------
# Export


def _fmt(x):
    x = float(x)
    return "nan" if math.isnan(x) else repr(x)


RUN_COLUMNS = ("k", "node", "method", "est", "truth")


def export_run_csv(run: RunLog, path):
    """Long format: k, node, method, est_0..est_{n-1}, truth_0..truth_{n-1}.

    ``node`` is -1 for the centralised filter.
    """
    path = Path(path)
    nx = run.truth.shape[1] if run.truth.ndim == 2 else 0
    header = ["k", "node", "method"] + [f"est_{i}" for i in range(nx)] + [f"truth_{i}" for i in range(nx)]
    rows = []
    K = run.truth.shape[0]
    for k in range(K):
        t = [_fmt(v) for v in run.truth[k]]
        if run.central is not None:
            rows.append([k, -1, "central"] + [_fmt(v) for v in run.central[k]] + t)
        rows.append([k, run.standalone_node, "standalone"] + [_fmt(v) for v in run.standalone[k]] + t)
        for l in range(run.local.shape[1]):
            rows.append([k, l, "local"] + [_fmt(v) for v in run.local[k, l]] + t)
            for name, est in run.fused.items():
                rows.append([k, l, f"fused_{name}"] + [_fmt(v) for v in est[k, l]] + t)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)
    return path


def export_report_csv(report: MetricReport, out_dir):
    """metrics.csv (k, method, rms), summary.csv, cdf.csv (method, coord, k, value)."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    with (out / "metrics.csv").open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["k", "method", "rms"])
        for m in report.methods:
            for k, v in enumerate(report.rms[m]):
                w.writerow([k, m, _fmt(v)])
    with (out / "summary.csv").open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["method", "time_averaged_rms", "n_runs", "excluded"])
        for m in report.methods:
            w.writerow([m, _fmt(report.summary[m]), report.n_runs, report.excluded])
    with (out / "cdf.csv").open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["method", "coord", "k", "value"])
        for key in sorted(report.cdf):
            m, c, k = key.split("|")
            for v in report.cdf[key]:
                w.writerow([m, c, k, _fmt(v)])
    return out


def export(obj, path, fmt="json"):
    """Write a RunLog or MetricReport as JSON, or as CSV (file for runs, directory for reports)."""
    path = Path(path)
    try:
        if fmt == "json":
            path.parent.mkdir(parents=True, exist_ok=True)
            path.write_text(json.dumps(obj.to_dict(), sort_keys=True, allow_nan=True))
            return path
        if fmt == "csv":
            if isinstance(obj, RunLog):
                path.parent.mkdir(parents=True, exist_ok=True)
                return export_run_csv(obj, path)
            return export_report_csv(obj, path)
    except OSError as exc:
        raise OSError(f"could not write {path}: {exc}") from exc
    raise ValueError(f"unknown export format {fmt!r}")


def load_json(path, kind):
    d = json.loads(Path(path).read_text())
    return (RunLog if kind == "run" else MetricReport).from_dict(d)


def read_csv_rows(path):
    with Path(path).open(newline="") as fh:
        return list(csv.reader(fh))


def kalman_reference(cfg: ScenarioConfig, run: RunLog, scn: Scenario):
    """Exact centralised posterior means for a linear_test run."""
    if not isinstance(scn.model, LinearGaussianModel):
        raise ConfigError("Kalman reference needs the linear_test scenario")
    means, covs, _ = kalman_filter(scn.model, scn.prior_mean, scn.prior_cov, run.measurements[1:])
    return np.vstack([scn.prior_mean, means]), np.concatenate([scn.prior_cov[None], covs])
