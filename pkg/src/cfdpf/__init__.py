"""Consensus/fusion distributed particle filtering for sensor networks."""
from .consensus import ConsensusMatrix, NetworkGraph, convergence_time, metropolis_weights, random_geometric_graph, run_consensus
from .fusion import MultiRateSchedule, ProposalKind, consensus_product, fusion_round, modified_fusion_round
from .harness import ScenarioConfig, monte_carlo, run_scenario, schedule_multirate
from .particles import FilterDivergence, GaussianSummary, ParticleSet
from .pcrlb import compute_bounds
from .ssm import BearingOnlyModel, LinearGaussianModel, UnicycleModel

__version__ = "0.1.0"
