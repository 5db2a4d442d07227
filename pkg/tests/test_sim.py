import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from moedge.errors import ConfigurationError, MissingArtifact
from moedge.planner import IDL, NO_ACTION, OPT, TRA, Action, Costs, TransitMatrix
from moedge.robust.cvar import ResourceModel
from moedge.sim import (
    Artifacts,
    MuState,
    ScenarioConfig,
    apply_actions,
    baseline_greedy,
    baseline_static,
    collect_metrics,
    end_step,
    realized_profit,
    run_policy,
    step_environment,
)
from moedge.sim.metrics import SimReport, write_action_log, write_ledger_csv
from moedge.trace import DemandTrace

RM = ResourceModel.reference_default()


def _scenario(n=3, m=2, steps=1, **kw):
    return ScenarioConfig(models=(RM,) * n, transit=TransitMatrix.uniform(n, steps), m=m, **kw)


def test_environment_lookup():
    tr = DemandTrace((0, 1), np.array([[1.0, 2.0], [3.0, 4.0]]))
    assert step_environment(tr, 0).tolist() == [1.0, 2.0]
    assert np.array_equal(step_environment(tr, 1), step_environment(tr, 1))
    with pytest.raises(IndexError):
        step_environment(tr, 2)


def test_scenario_validation():
    with pytest.raises(ConfigurationError):
        _scenario(m=0)
    with pytest.raises(ConfigurationError):
        _scenario(epsilon=1.0)
    with pytest.raises(ConfigurationError):
        _scenario(eta=0.0)
    with pytest.raises(ConfigurationError):
        ScenarioConfig(models=(RM,) * 2, transit=TransitMatrix.uniform(3))


def test_idle_to_operational():
    [s] = apply_actions([MuState(IDL, 0)], [Action(OPT)], TransitMatrix.uniform(2))
    assert s == MuState(OPT, 0)


def test_transit_walkthrough():
    tm = TransitMatrix.uniform(2, 2)
    [s] = apply_actions([MuState(OPT, 0)], [Action(TRA, 1)], tm)
    assert (s.mode, s.remaining_transit, s.destination) == (TRA, 2, 1)
    [s] = end_step([s])
    assert (s.mode, s.remaining_transit) == (TRA, 1)
    [s] = apply_actions([s], [NO_ACTION], tm)
    [s] = end_step([s])
    assert s == MuState(IDL, 1)


def test_action_contracts():
    tm = TransitMatrix.uniform(2)
    moving = MuState(TRA, 0, 1, 1)
    with pytest.raises(RuntimeError):
        apply_actions([moving], [Action(OPT)], tm)
    with pytest.raises(ValueError):
        apply_actions([MuState(IDL, 0)], [Action(TRA, 0)], tm)
    with pytest.raises(RuntimeError):
        apply_actions([MuState(IDL, 0)], [NO_ACTION], tm)
    with pytest.raises(ValueError):
        MuState(TRA, 0, 1, 0)


def test_ledger_idle_world():
    ledger = realized_profit([RM] * 2, np.array([0.5, 1.0]), [], Costs(2, 3, 1), 5e5)
    assert ledger.penalty.tolist() == [0.0, 0.0] and ledger.cost == 0.0
    assert ledger.violations == 0


def test_ledger_costs_and_penalty():
    states = [MuState(OPT, 1), MuState(TRA, 0, 1, 1), MuState(IDL, 2)]
    ledger = realized_profit([RM] * 3, np.array([5.0, 0.0, 0.0]), states, Costs(2, 3, 1), 5e5)
    assert ledger.cost == 6.0
    assert ledger.penalty[0] == pytest.approx(1.7e6)
    assert ledger.violations == 1 and ledger.total_excess == pytest.approx(3.4)
    assert ledger.profit == pytest.approx(float(np.sum(ledger.utility - ledger.penalty)) - 6.0)


@settings(max_examples=50, deadline=None)
@given(st.lists(st.sampled_from([OPT, IDL, TRA]), min_size=1, max_size=5), st.integers(0, 2**31 - 1))
def test_ledger_identity_and_conservation(modes, seed):
    rng = np.random.default_rng(seed)
    states = [MuState(m, int(rng.integers(3)), 0 if m == TRA else None, 1 if m == TRA else 0) for m in modes]
    ledger = realized_profit([RM] * 3, rng.uniform(0, 6, 3), states, Costs(1.5, 2.5, 0.5), 1e3)
    assert ledger.z_opt + ledger.z_tra + ledger.z_idl == len(modes)
    assert ledger.profit == float(np.sum(ledger.utility - ledger.penalty)) - ledger.cost


def test_in_transit_mu_adds_no_resources():
    moving = [MuState(TRA, 0, 1, 2)]
    a = realized_profit([RM] * 2, np.array([5.0, 5.0]), moving, Costs(), 1.0)
    b = realized_profit([RM] * 2, np.array([5.0, 5.0]), [], Costs(), 1.0)
    assert np.array_equal(a.excess, b.excess) and a.cost == Costs().c_tra


def test_static_baseline():
    v = np.full((4, 9), 0.1)
    v[:, 2] = 5.0
    v[:, 7] = 4.0
    tr = DemandTrace(tuple(range(9)), v)
    assert baseline_static(_scenario(n=9, m=2), tr) == (2, 7)
    assert baseline_static(_scenario(n=9, m=9), tr) == tuple(range(9))
    flat = DemandTrace(tuple(range(3)), np.ones((2, 3)))
    assert baseline_static(_scenario(n=3, m=1), flat) == (0,)


def test_greedy_baseline():
    sc = _scenario(n=3, m=1)
    mu = np.array([[0.0], [3.0], [1.0]])
    assert baseline_greedy(mu, sc, [MuState(IDL, 1)]) == [Action(OPT)]
    assert baseline_greedy(np.zeros((3, 2)), sc, [MuState(IDL, 2)]) == [Action(TRA, 0)]


def test_greedy_nearest_pairing():
    # line of 4 cells; targets 0 and 3, MUs at 2 and 1 must not cross
    tm = TransitMatrix(np.array([[0, 1, 2, 3], [1, 0, 1, 2], [2, 1, 0, 1], [3, 2, 1, 0]]))
    sc = ScenarioConfig(models=(RM,) * 4, transit=tm, m=2)
    mu = np.array([[5.0], [0.0], [0.0], [4.0]])
    acts = baseline_greedy(mu, sc, [MuState(IDL, 2), MuState(IDL, 1)])
    assert acts == [Action(TRA, 3), Action(TRA, 0)]
    assert baseline_greedy(mu, sc, [MuState(TRA, 1, 3, 2), MuState(IDL, 1)]) == [NO_ACTION, Action(TRA, 0)]


def test_metrics_basics():
    empty = collect_metrics([])
    assert empty.average_profit == 0.0 and empty.violation_count == 0 and empty.total_excess == 0.0
    ledgers = [
        realized_profit([RM], np.array([d]), [MuState(IDL, 0)], Costs(0, 0, 0), 0.0, step=t)
        for t, d in enumerate([0.0, 0.0, 5.0])
    ]
    rep = collect_metrics(ledgers, steps_per_day=2)
    assert rep.violation_count == 1
    assert rep.average_profit == pytest.approx(np.mean([l.profit for l in ledgers]))
    assert rep.demand_by_time_of_day == [2.5, 0.0]


def _hotspot(steps=60):
    v = np.full((steps, 2), 0.4)
    v[(np.arange(steps) // 6) % 2 == 0, 0] = 3.0
    v[(np.arange(steps) // 6) % 2 == 1, 1] = 3.0
    return DemandTrace((0, 1), v)


def test_static_run_and_determinism(tmp_path):
    tr = _hotspot()
    sc = _scenario(n=2, m=1, L_in=6, L_pred=2)
    run = run_policy(sc, tr, "ST", Artifacts(train_trace=tr))
    assert run.report.num_steps == tr.num_steps - 6
    assert {row[2] for row in run.action_log} == {OPT}
    again = run_policy(sc, tr, "ST", Artifacts(train_trace=tr))
    assert run.report.to_json() == again.report.to_json()
    write_ledger_csv(run.ledgers, tmp_path / "l.csv")
    write_action_log(run.action_log, tmp_path / "a.csv")
    assert (tmp_path / "a.csv").read_text().splitlines()[0] == "step,mu_id,mode,location,destination"
    assert SimReport.from_dict(run.report.to_dict()).to_json() == run.report.to_json()


def test_missing_artifacts():
    tr = _hotspot()
    sc = _scenario(n=2, m=1, L_in=6, L_pred=2)
    for policy in ("SP", "MP", "LP", "GD", "ST"):
        with pytest.raises(MissingArtifact):
            run_policy(sc, tr, policy, Artifacts())
    with pytest.raises(ValueError):
        run_policy(sc, tr, "RL", Artifacts())


def test_schema_version_checked():
    tr = _hotspot()
    doc = run_policy(_scenario(n=2, m=1, L_in=6, L_pred=2), tr, "ST", Artifacts(train_trace=tr)).report.to_dict()
    doc["version"] = 99
    with pytest.raises(ValueError):
        SimReport.from_dict(doc)


def test_surrogate_policy_flags_out_of_range():
    from moedge.predictor import LstmArch, TrainConfig, build_windows, train_variational
    from moedge.robust.surrogate import SurrogateBank, SurrogateConfig, SweepSpec, generate_sdp_dataset, surrogate_train
    from moedge.trace import fit_normalizer

    tr = _hotspot()
    norm = fit_normalizer(tr)
    vp = train_variational(build_windows(tr, 6, 2, norm), LstmArch(1, 4, 2), TrainConfig(epochs=2, seed=0), norm)
    # a sweep far below the trace's demand puts every query outside the box
    rows = generate_sdp_dataset(RM, SweepSpec(mu_range=(0.0, 0.1), sigma_range=(0.0, 0.01), z_values=(0, 1), num_points=200))
    bank = SurrogateBank()
    bank.add(RM, surrogate_train(rows, SurrogateConfig(hidden=(8,), epochs=5)))
    sc = _scenario(n=2, m=1, L_in=6, L_pred=2, S=4)
    run = run_policy(sc, tr, "MP", Artifacts(variational=vp, surrogate=bank))
    assert run.report.meta["surrogate_out_of_range"] > 0
    sp = run_policy(sc, tr, "SP", Artifacts(variational=vp))
    assert "surrogate_out_of_range" not in sp.report.meta
