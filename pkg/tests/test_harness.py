import dataclasses
import math
from pathlib import Path

import numpy as np
import pytest

from cfdpf import harness as hs
from cfdpf.fusion import MultiRateSchedule

DATA = Path(__file__).parent / "data"


def _linear(**kw):
    base = dict(scenario="linear_test", seed=3, n_steps=6, n_nodes=2, n_particles_central=300,
                n_particles_local=300, n_particles_fusion=300, roughening=0.0, mc_runs=2)
    base.update(kw)
    return hs.ScenarioConfig(**base)


def _tiny_run(truth, standalone, local, central=None, fused=None):
    return hs.RunLog(
        truth=np.asarray(truth, dtype=float), measurements=[[]], central=central,
        local=np.asarray(local, dtype=float), fused=fused or {}, standalone=np.asarray(standalone, dtype=float),
        standalone_node=0, lag=[0], m_sequence=[], consensus_disagreement={}, pcrlb={}, diverged={},
        snr_db=None, measurement_hash="", convergence_time=0.0, graph={}, position_indices=(0,),
    )


# -- configuration ---------------------------------------------------------------


def test_config_requires_seed():
    with pytest.raises(hs.ConfigError, match="seed"):
        hs.ScenarioConfig.from_dict({"scenario": "bot"})


def test_config_rejects_unknown_keys_and_values():
    with pytest.raises(hs.ConfigError):
        hs.ScenarioConfig.from_dict({"seed": 1, "bogus": 2})
    with pytest.raises(hs.ConfigError):
        hs.ScenarioConfig.from_dict({"seed": 1, "scenario": "sonar"})
    with pytest.raises(hs.ConfigError):
        hs.ScenarioConfig.from_dict({"seed": 1, "n_nodes": 0})
    with pytest.raises(ValueError):
        hs.ScenarioConfig(proposals=("gibbs",))


def test_config_round_trip():
    cfg = hs.full_scale_bot(seed=5, schedule=MultiRateSchedule(t_c=2.0))
    again = hs.ScenarioConfig.from_dict(cfg.to_dict())
    assert again == cfg


@pytest.mark.parametrize("name", sorted(p.name for p in (Path(__file__).parents[1] / "configs").glob("*.json")))
def test_shipped_configs_validate(name):
    hs.ScenarioConfig.load(Path(__file__).parents[1] / "configs" / name)


def test_default_bot_mirrors_reference_scenario():
    b = hs.BotSettings()
    assert (b.A_m, b.sigma_v, b.epsilon, b.inflation) == (1.08e-5, 1.6e-3, 0.09, 1e4)
    assert b.variance_coeffs == (0.08, 0.1150, 0.7405)
    p = hs.full_scale_bot(seed=0)
    assert (p.n_nodes, p.n_particles_central, p.n_particles_local, p.mc_runs) == (20, 10000, 500, 100)
    assert p.region_side == 16.0


# -- schedule ----------------------------------------------------------------------


def test_schedule_fast_consensus_has_unit_batches():
    for t_c in (0.5, 1.0):
        tr = hs.schedule_multirate(MultiRateSchedule(t_c=t_c), 20)
        assert set(tr.m_sequence) == {1}
        assert max(tr.lag_standard) <= 1


def test_schedule_slow_consensus_example():
    tr = hs.schedule_multirate(MultiRateSchedule(t_c=2.0, max_lag=2), 30)
    assert tr.backlog_standard[:4] == [1, 2, 4, 8]
    assert max(tr.m_sequence) == 2
    assert tr.lag_standard[20] > 8
    assert max(tr.lag_modified) <= 3
    assert sum(tr.m_sequence) == 30


def test_schedule_connectivity_slows_progress():
    fast = hs.schedule_multirate(MultiRateSchedule(t_c=1.0), 10)
    slow = hs.schedule_multirate(MultiRateSchedule(t_c=1.0, connectivity=(1.0,) + (0.5,) * 6), 10)
    assert slow.lag_standard[10] > fast.lag_standard[10]


# -- metrics -------------------------------------------------------------------------


def test_perfect_estimator_has_zero_rms():
    truth = np.arange(8.0).reshape(4, 2)
    run = _tiny_run(truth, truth, truth[:, None, :])
    rep = hs.aggregate([run])
    assert all(v == 0.0 for m in rep.methods for v in rep.rms[m])


def test_single_run_rms_is_absolute_error():
    truth = np.zeros((3, 1))
    est = np.array([[0.0], [2.0], [-3.0]])
    run = _tiny_run(truth, est, est[:, None, :])
    rep = hs.aggregate([run])
    assert rep.rms["standalone"] == [0.0, 2.0, 3.0]
    assert rep.summary["standalone"] == pytest.approx(2.5)


def test_aggregate_excludes_diverged_runs():
    truth = np.zeros((2, 1))
    good = _tiny_run(truth, truth, truth[:, None, :])
    bad = _tiny_run(truth, truth + 100, truth[:, None, :] + 100)
    bad.diverged = {"local[0]": "boom"}
    rep = hs.aggregate([good, bad])
    assert rep.excluded == 1 and rep.exclusion_rate == 0.5
    assert rep.rms["standalone"] == [0.0, 0.0]


def test_linear_central_rms_close_to_kalman():
    cfg = _linear(n_steps=15, n_particles_central=2000, proposals=("product",))
    _, logs = hs.monte_carlo(cfg, runs=20, keep_runs=True)
    scn = hs.build_scenario(cfg, cfg.seed)
    pf, kf = [], []
    for r in logs:
        means, _ = hs.kalman_reference(cfg, r, scn)
        pf.append((r.central[1:, 0] - r.truth[1:, 0]) ** 2)
        kf.append((means[1:, 0] - r.truth[1:, 0]) ** 2)
    a, b = np.sqrt(np.mean(pf)), np.sqrt(np.mean(kf))
    assert abs(a - b) / b < 0.10


# -- runs, seeds and export ------------------------------------------------------------


def test_run_is_deterministic():
    cfg = _linear(proposals=("sir", "product"))
    a, b = hs.run_scenario(cfg), hs.run_scenario(cfg)
    assert np.array_equal(a.central, b.central)
    assert np.array_equal(a.local, b.local)
    for k in a.fused:
        assert np.array_equal(a.fused[k], b.fused[k])


def test_filter_seed_replays_measurements():
    cfg = _linear()
    scn = hs.build_scenario(cfg, cfg.seed)
    a = hs.run_scenario(cfg, 7, scn)
    b = hs.run_scenario(cfg, 7, scn, filter_seed=99)
    c = hs.run_scenario(cfg, 8, scn)
    assert a.measurement_hash == b.measurement_hash != c.measurement_hash
    assert not np.array_equal(a.local, b.local)


def test_pcrlb_shares_truth_seed_lineage():
    cfg = _linear(pcrlb=hs.PcrlbSettings(enabled=True, n_trajectories=20))
    scn = hs.build_scenario(cfg, cfg.seed)
    a = hs.run_scenario(cfg, 7, scn)
    b = hs.run_scenario(cfg, 7, scn, filter_seed=123)
    assert a.pcrlb == b.pcrlb == hs.run_pcrlb(cfg, scn, 7)


def test_modified_mode_reports_only_batch_ends():
    cfg = _linear(n_steps=6, fusion_algorithm="modified", schedule=MultiRateSchedule(t_c=2.0))
    run = hs.run_scenario(cfg)
    est = run.fused["modified"][:, 0, 0]
    ends = {first + m - 1 for first, m in hs.schedule_multirate(cfg.schedule, 6).batches}
    for k in range(1, 7):
        assert np.isfinite(est[k]) == (k in ends)


def test_json_round_trip(tmp_path):
    cfg = _linear()
    run = hs.run_scenario(cfg)
    hs.export(run, tmp_path / "run.json")
    back = hs.load_json(tmp_path / "run.json", "run")
    assert np.array_equal(back.local, run.local)
    assert back.measurement_hash == run.measurement_hash
    rep = hs.aggregate([run])
    hs.export(rep, tmp_path / "rep.json")
    assert hs.load_json(tmp_path / "rep.json", "report").summary == rep.summary


def test_run_csv_round_trip(tmp_path):
    run = hs.run_scenario(_linear())
    rows = hs.read_csv_rows(hs.export(run, tmp_path / "run.csv", "csv"))
    header, body = rows[0], rows[1:]
    assert header == ["k", "node", "method", "est_0", "truth_0"]
    central = [r for r in body if r[2] == "central"]
    assert [float(r[3]) for r in central] == run.central[:, 0].tolist()


def test_empty_run_gives_header_only_csv(tmp_path):
    run = _tiny_run(np.zeros((0, 2)), np.zeros((0, 2)), np.zeros((0, 1, 2)))
    rows = hs.read_csv_rows(hs.export_run_csv(run, tmp_path / "e.csv"))
    assert rows == [["k", "node", "method", "est_0", "est_1", "truth_0", "truth_1"]]


def test_golden_csv(tmp_path):
    run = _tiny_run([[0.5]], [[0.25]], [[[0.125]]])
    out = hs.export_run_csv(run, tmp_path / "g.csv")
    assert out.read_bytes() == (DATA / "golden_run.csv").read_bytes()


def test_report_csv_files(tmp_path):
    truth = np.zeros((3, 1))
    run = _tiny_run(truth, truth + 1, truth[:, None, :])
    hs.export(hs.aggregate([run], cdf_points=((0, 1),)), tmp_path / "rep", "csv")
    assert hs.read_csv_rows(tmp_path / "rep" / "metrics.csv")[0] == ["k", "method", "rms"]
    cdf = hs.read_csv_rows(tmp_path / "rep" / "cdf.csv")
    assert ["standalone", "0", "1", "1.0"] in cdf


def test_export_unknown_format(tmp_path):
    with pytest.raises(ValueError):
        hs.export(hs.aggregate([_tiny_run(np.zeros((1, 1)), np.zeros((1, 1)), np.zeros((1, 1, 1)))]),
                  tmp_path / "x", "parquet")


def test_run_seeds_are_distinct_and_stable():
    s = hs.run_seeds(0, 10)
    assert len(set(s)) == 10 and s == hs.run_seeds(0, 10)
    assert hs.run_seeds(1, 3) != s[:3]


def test_consensus_budget_default():
    cfg = _linear()
    scn = hs.build_scenario(cfg, cfg.seed)
    nc = scn.U.convergence_time
    assert hs.consensus_budget(cfg, scn.U) == max(1, math.ceil(10 * nc))
    assert hs.consensus_budget(dataclasses.replace(cfg, consensus_budget=4), scn.U) == 4
