"""Federation-loop tests: selection, aggregation, termination, distillation,
budget regulation, and whole-run determinism at toy scale."""

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from qflsim import fed, qmodels, refmodel
from qflsim.dataprep import EncodedDataset
from qflsim.dfo import RegulationStrategy
from qflsim.fed import (
    DataSpec,
    ExperimentError,
    FedConfig,
    PreparedData,
    RefSpec,
    aggregate,
    check_termination,
    derive_seed,
    distill_step,
    init_devices,
    prepare_data,
    run_experiment,
    select_clients,
)
from qflsim.qmodels import vqc_model

TINY = vqc_model(2, feature_reps=1, ansatz_reps=1, shots=64)


def toy_dataset(n, seed=0):
    rng = np.random.default_rng(seed)
    return EncodedDataset(rng.uniform(0.0, 1.5, (n, 2)), rng.integers(0, 2, n))


def toy_prepared(num_devices=2, train_sizes=None):
    sizes = train_sizes or [8] * num_devices
    return PreparedData(
        devices_train=[toy_dataset(s, seed=10 + i) for i, s in enumerate(sizes)],
        devices_heldout=[toy_dataset(4, seed=20 + i) for i in range(num_devices)],
        server_shard=toy_dataset(6, seed=30),
    )


def replay_cfg(tmp_path, ref_losses, num_devices=2, **kw):
    """Toy config whose reference curve is fully controlled by the test."""
    path = tmp_path / "ref.jsonl"
    refmodel.save_replay(
        path,
        [refmodel.ReplayRecord(i, tuple(ref_losses)) for i in range(num_devices)],
    )
    defaults = dict(
        model=TINY,
        num_devices=num_devices,
        rounds=3,
        init_maxiter=3,
        maxiter_cap=30,
        ref=RefSpec(kind="replay", replay_path=str(path)),
        seed=1,
    )
    defaults.update(kw)
    return FedConfig(**defaults)


def canon(records):
    """Everything in a record list except wall_time, as plain tuples."""
    return [
        (
            r.round,
            r.global_loss,
            r.server_val_loss,
            r.mean_train_loss,
            tuple(r.selected),
            r.selected_loss_mean,
            r.cumulative_evals,
            r.terminated,
            r.termination_reason,
            tuple(
                (
                    s.device_id,
                    s.loss,
                    s.maxiter_used,
                    s.evals,
                    s.ref_loss,
                    s.regulated,
                    s.failed,
                    tuple(s.objective_history),
                )
                for s in r.devices
            ),
        )
        for r in records
    ]


# ---------------------------------------------------------------------------
# seed derivation
# ---------------------------------------------------------------------------


def test_derive_seed_is_stable_and_path_sensitive():
    assert derive_seed(0, 4, 1, 2) == derive_seed(0, 4, 1, 2)
    assert derive_seed(0, 1) != derive_seed(0, 2)
    assert derive_seed(0, 1) != derive_seed(1, 1)
    assert derive_seed(0, 1, 2) != derive_seed(0, 2, 1)


# ---------------------------------------------------------------------------
# client selection
# ---------------------------------------------------------------------------


def test_select_closest_to_global():
    losses = {0: 0.9, 1: 0.5, 2: 0.45, 3: 0.3, 4: 0.7}
    assert select_clients(losses, 0.5, 0.4) == [1, 2]


def test_select_full_fraction_keeps_everyone():
    losses = {0: 0.9, 1: 0.5, 2: 0.45, 3: 0.3, 4: 0.7}
    assert select_clients(losses, 0.5, 1.0) == [0, 1, 2, 3, 4]


def test_select_tie_prefers_lower_id():
    assert select_clients({0: 0.6, 1: 0.4}, 0.5, 0.5) == [0]
    assert select_clients({3: 0.4, 7: 0.6}, 0.5, 0.5) == [3]


def test_select_rounds_half_up():
    losses = {i: float(i) for i in range(5)}
    assert len(select_clients(losses, 2.0, 0.5)) == 3  # 2.5 rounds up


def test_select_validation():
    with pytest.raises(ValueError):
        select_clients({}, 0.5, 0.5)
    with pytest.raises(ValueError):
        select_clients({0: 0.5}, 0.5, 0.0)
    with pytest.raises(ValueError):
        select_clients({0: 0.5}, 0.5, 1.2)
    with pytest.raises(ValueError):
        select_clients({0: 0.5}, math.inf, 0.5)


@given(
    losses=st.lists(st.floats(-100, 100), min_size=1, max_size=12),
    global_loss=st.floats(-100, 100),
    fraction=st.floats(0.01, 1.0),
)
def test_select_size_and_membership(losses, global_loss, fraction):
    by_id = dict(enumerate(losses))
    picked = select_clients(by_id, global_loss, fraction)
    assert picked == sorted(picked)
    assert len(set(picked)) == len(picked)
    assert set(picked) <= set(by_id)
    assert len(picked) == max(1, math.floor(fraction * len(losses) + 0.5))


# ---------------------------------------------------------------------------
# aggregation
# ---------------------------------------------------------------------------


def test_aggregate_equal_weights_is_plain_mean():
    params = {0: np.array([1.0, 3.0]), 1: np.array([3.0, 5.0])}
    weights = {0: 0.5, 1: 0.5}
    for mode in ("weighted_mean", "selected_mean"):
        out = aggregate(params, weights, [0, 1], mode)
        assert np.allclose(out, [2.0, 4.0])


def test_aggregate_single_participant_is_verbatim():
    params = {2: np.array([0.25, -1.5, 3.0])}
    out = aggregate(params, {2: 0.1}, [2], "weighted_mean")
    assert np.array_equal(out, params[2])


def test_aggregate_renormalizes_over_participants():
    # shares 0.2 / 0.3 renormalize to 0.4 / 0.6 once only these two remain
    params = {0: np.array([1.0, 0.0]), 1: np.array([0.0, 1.0]), 2: np.zeros(2)}
    weights = {0: 0.2, 1: 0.3, 2: 0.5}
    out = aggregate(params, weights, [0, 1], "weighted_mean")
    assert np.allclose(out, [0.4, 0.6])


def test_selected_mean_ignores_data_shares():
    params = {0: np.array([1.0]), 1: np.array([3.0])}
    out = aggregate(params, {0: 0.99, 1: 0.01}, [0, 1], "selected_mean")
    assert np.allclose(out, [2.0])


def test_aggregate_independent_of_insertion_order():
    rng = np.random.default_rng(5)
    vals = {i: rng.normal(size=3) for i in range(4)}
    weights = {i: float(rng.uniform(0.1, 1.0)) for i in range(4)}
    fwd = aggregate(dict(sorted(vals.items())), weights, [0, 1, 2, 3])
    rev = aggregate(dict(sorted(vals.items(), reverse=True)), weights, [3, 1, 0, 2])
    assert np.array_equal(fwd, rev)


def test_aggregate_validation():
    params = {0: np.zeros(2)}
    with pytest.raises(ValueError):
        aggregate(params, {0: 1.0}, [0], "median")
    with pytest.raises(ValueError):
        aggregate(params, {0: 1.0}, [], "weighted_mean")
    with pytest.raises(ValueError):
        aggregate(params, {0: 1.0}, [0, 1], "weighted_mean")
    with pytest.raises(ValueError):
        aggregate(params, {0: 0.0}, [0], "weighted_mean")


@given(
    n=st.integers(1, 5),
    dim=st.integers(1, 4),
    seed=st.integers(0, 2**31),
    mode=st.sampled_from(["weighted_mean", "selected_mean"]),
)
def test_aggregate_stays_in_coordinate_hull(n, dim, seed, mode):
    rng = np.random.default_rng(seed)
    params = {i: rng.normal(size=dim) for i in range(n)}
    weights = {i: float(rng.uniform(0.1, 1.0)) for i in range(n)}
    out = aggregate(params, weights, list(range(n)), mode)
    stack = np.array([params[i] for i in range(n)])
    assert np.all(out >= stack.min(axis=0) - 1e-12)
    assert np.all(out <= stack.max(axis=0) + 1e-12)


# ---------------------------------------------------------------------------
# termination
# ---------------------------------------------------------------------------


def term_cfg(epsilon, rounds=10):
    return FedConfig(model=TINY, epsilon=epsilon, rounds=rounds)


def test_plateau_stops():
    decision = check_termination([0.50, 0.499], 2, term_cfg(0.01))
    assert decision.stop and decision.reason == "plateau"


def test_clear_progress_continues():
    assert not check_termination([0.50, 0.40], 2, term_cfg(0.01)).stop


def test_round_cap_stops():
    decision = check_termination([0.50, 0.10], 10, term_cfg(0.01, rounds=10))
    assert decision.stop and decision.reason == "max_rounds"


def test_no_plateau_check_in_round_one():
    assert not check_termination([0.5], 1, term_cfg(100.0)).stop


def test_zero_epsilon_never_plateaus():
    assert not check_termination([0.5, 0.5], 2, term_cfg(0.0)).stop


# ---------------------------------------------------------------------------
# distillation pull
# ---------------------------------------------------------------------------

PROBE = toy_dataset(4, seed=3)


def test_distill_zero_lambda_is_identity():
    ti = np.array([0.4, -0.2, 0.9, 1.3])
    out = distill_step(ti, np.zeros(4), PROBE, 0.0, TINY)
    assert np.array_equal(out, ti)
    assert out is not ti  # caller-safe copy


def test_distill_aligned_weights_unchanged():
    ti = np.array([0.4, -0.2, 0.9, 1.3])
    out = distill_step(ti, ti.copy(), PROBE, 2.0, TINY, seed=11)
    assert np.array_equal(out, ti)


def test_distill_empty_probe_unchanged():
    empty = EncodedDataset(np.empty((0, 2)), np.empty(0, dtype=int))
    ti = np.array([0.4, -0.2, 0.9, 1.3])
    out = distill_step(ti, np.zeros(4), empty, 2.0, TINY, seed=11)
    assert np.array_equal(out, ti)


def test_distill_huge_lambda_lands_on_global():
    rng = np.random.default_rng(7)
    tg = rng.uniform(-math.pi, math.pi, TINY.num_weights)
    ti = tg + 2.0
    out = distill_step(ti, tg, PROBE, 1e6, TINY, seed=7)
    assert np.array_equal(out, tg)


def test_distill_negative_lambda_raises():
    with pytest.raises(ValueError):
        distill_step(np.zeros(4), np.zeros(4), PROBE, -0.1, TINY)


def test_distill_moves_along_the_segment():
    rng = np.random.default_rng(2)
    tg = rng.uniform(-1.0, 1.0, TINY.num_weights)
    ti = rng.uniform(-1.0, 1.0, TINY.num_weights)
    out = distill_step(ti, tg, PROBE, 0.5, TINY, seed=2)
    gap = tg - ti
    c = (out - ti)[0] / gap[0]
    assert 0.0 <= c <= 1.0
    assert np.allclose(out, ti + c * gap)


@settings(max_examples=20, deadline=None)
@given(seed=st.integers(0, 10_000), lam=st.floats(0.0, 5.0))
def test_distill_never_overshoots(seed, lam):
    rng = np.random.default_rng(seed)
    tg = rng.uniform(-math.pi, math.pi, TINY.num_weights)
    ti = rng.uniform(-math.pi, math.pi, TINY.num_weights)
    out = distill_step(ti, tg, PROBE, lam, TINY, seed=seed)
    assert np.linalg.norm(out - tg) <= np.linalg.norm(ti - tg) + 1e-12


# ---------------------------------------------------------------------------
# config validation and initial weights
# ---------------------------------------------------------------------------


def test_config_validation():
    with pytest.raises(ValueError):
        FedConfig(model=TINY, selection_fraction=0.0)
    with pytest.raises(ValueError):
        FedConfig(model=TINY, aggregation="median")
    with pytest.raises(ValueError):
        FedConfig(model=TINY, init_maxiter=50, maxiter_cap=40)
    with pytest.raises(ValueError):
        FedConfig(model=TINY, init_scale=0.0)
    with pytest.raises(ValueError):
        FedConfig(model=TINY, workers=0)
    with pytest.raises(ValueError):
        FedConfig(model=TINY, ref=RefSpec(kind="replay", replay_path=None))


def test_initial_weights_respect_scale_and_seed():
    cfg = FedConfig(model=TINY, init_scale=0.3, seed=4)
    w = fed._initial_weights(cfg)
    assert w.shape == (TINY.num_weights,)
    assert np.all(np.abs(w) <= 0.3)
    assert np.array_equal(w, fed._initial_weights(cfg))
    other = FedConfig(model=TINY, init_scale=0.3, seed=5)
    assert not np.array_equal(w, fed._initial_weights(other))


# ---------------------------------------------------------------------------
# data preparation
# ---------------------------------------------------------------------------


def small_data_cfg(seed=1, **kw):
    defaults = dict(
        model=TINY,
        num_devices=2,
        rounds=2,
        init_maxiter=3,
        maxiter_cap=30,
        data=DataSpec(
            samples_per_device=16,
            sequence_length=16,
            server_samples=8,
            angle_max=0.5,
        ),
        ref=RefSpec(epochs=40, learning_rate=0.5),
        seed=seed,
    )
    defaults.update(kw)
    return FedConfig(**defaults)


def test_prepare_data_shapes_and_range():
    cfg = small_data_cfg()
    prep = prepare_data(cfg)
    assert len(prep.devices_train) == 2 and len(prep.devices_heldout) == 2
    for tr, te in zip(prep.devices_train, prep.devices_heldout):
        assert len(tr) + len(te) == 16
        assert len(te) == 4  # round(16 * 0.25)
        assert tr.features.shape[1] == TINY.num_qubits
    assert len(prep.server_shard) == 8
    pooled = np.vstack([t.features for t in prep.devices_train])
    assert pooled.min() >= 0.0 and pooled.max() <= 0.5 + 1e-12
    # held-out/server rows may leave [0, angle_max] slightly (no clipping)
    assert np.all(np.isfinite(prep.server_shard.features))


def test_prepare_data_is_deterministic():
    a = prepare_data(small_data_cfg())
    b = prepare_data(small_data_cfg())
    assert np.array_equal(a.server_shard.features, b.server_shard.features)
    assert np.array_equal(a.devices_train[1].features, b.devices_train[1].features)
    assert np.array_equal(a.devices_train[1].labels, b.devices_train[1].labels)


def test_init_devices_weights_are_data_shares():
    prep = toy_prepared(num_devices=2, train_sizes=[6, 12])
    cfg = FedConfig(model=TINY, num_devices=2, init_maxiter=7)
    devices = init_devices(cfg, prep)
    assert [d.device_id for d in devices] == [0, 1]
    assert devices[0].weight == pytest.approx(1 / 3)
    assert devices[1].weight == pytest.approx(2 / 3)
    assert all(d.maxiter == 7 for d in devices)
    assert all(d.loss_history == [] for d in devices)


def test_replay_missing_device_aborts(tmp_path):
    path = tmp_path / "ref.jsonl"
    refmodel.save_replay(path, [refmodel.ReplayRecord(0, (0.5,))])
    cfg = FedConfig(
        model=TINY,
        num_devices=2,
        ref=RefSpec(kind="replay", replay_path=str(path)),
    )
    with pytest.raises(ExperimentError):
        init_devices(cfg, toy_prepared())


# ---------------------------------------------------------------------------
# budget regulation inside the loop
# ---------------------------------------------------------------------------


def test_budget_regulation_waits_for_round_two(tmp_path):
    cfg = replay_cfg(
        tmp_path, (0.001,), regulation=RegulationStrategy("adaptive"), rounds=2
    )
    records = run_experiment(cfg, toy_prepared())
    for s in records[0].devices:
        assert s.ref_loss is None and not s.regulated
        assert s.maxiter_used == cfg.init_maxiter
    for s in records[1].devices:
        # reference at 1e-3 beats any cross-entropy here: ratio >= 10x,
        # so round(3 * r) always clears the cap of 30
        assert s.ref_loss == 0.001
        assert s.regulated
        assert s.maxiter_used == cfg.maxiter_cap


def test_weak_reference_never_regulates(tmp_path):
    cfg = replay_cfg(
        tmp_path, (25.0,), regulation=RegulationStrategy("adaptive"), rounds=3
    )
    records = run_experiment(cfg, toy_prepared())
    for r in records:
        for s in r.devices:
            assert not s.regulated
            assert s.maxiter_used == cfg.init_maxiter
            assert s.ref_loss == (25.0 if r.round > 1 else None)


def test_plain_baseline_never_queries_reference(tmp_path):
    cfg = replay_cfg(tmp_path, (0.001,), regulation=None, rounds=3)
    records = run_experiment(cfg, toy_prepared())
    for r in records:
        for s in r.devices:
            assert s.ref_loss is None and not s.regulated
            assert s.maxiter_used == cfg.init_maxiter


def test_incremental_budget_compounds(tmp_path):
    cfg = replay_cfg(
        tmp_path,
        (0.001,),
        regulation=RegulationStrategy("incremental", step=2),
        rounds=3,
    )
    records = run_experiment(cfg, toy_prepared())
    budgets = [[s.maxiter_used for s in r.devices] for r in records]
    assert budgets[0] == [3, 3]
    assert budgets[1] == [5, 5]  # grows from the current budget, not the initial
    assert budgets[2] == [7, 7]


# ---------------------------------------------------------------------------
# whole runs
# ---------------------------------------------------------------------------


def test_identical_configs_produce_identical_records(tmp_path):
    cfg = replay_cfg(
        tmp_path,
        (0.001,),
        regulation=RegulationStrategy("adaptive"),
        distill_lambda=0.2,
        selection_fraction=0.5,
    )
    assert canon(run_experiment(cfg, toy_prepared())) == canon(
        run_experiment(cfg, toy_prepared())
    )


def test_threaded_run_matches_serial(tmp_path):
    base = dict(
        ref_losses=(0.001,),
        num_devices=3,
        regulation=RegulationStrategy("adaptive"),
        distill_lambda=0.2,
        selection_fraction=0.7,
    )
    serial = replay_cfg(tmp_path, workers=1, **base)
    threaded = replay_cfg(tmp_path, workers=3, **base)
    assert canon(run_experiment(serial, toy_prepared(3))) == canon(
        run_experiment(threaded, toy_prepared(3))
    )


def test_plateau_termination_cuts_the_run_short(tmp_path):
    cfg = replay_cfg(tmp_path, (25.0,), rounds=5, epsilon=0.95)
    records = run_experiment(cfg, toy_prepared())
    assert len(records) == 2
    assert not records[0].terminated
    assert records[-1].terminated and records[-1].termination_reason == "plateau"


def test_final_round_reports_max_rounds(tmp_path):
    cfg = replay_cfg(tmp_path, (25.0,), rounds=2, epsilon=0.0)
    records = run_experiment(cfg, toy_prepared())
    assert len(records) == 2
    assert records[-1].terminated and records[-1].termination_reason == "max_rounds"
    assert records[0].cumulative_evals < records[1].cumulative_evals


def test_end_to_end_with_classical_reference():
    cfg = small_data_cfg(
        regulation=RegulationStrategy("adaptive"),
        selection_fraction=0.5,
        distill_lambda=0.1,
    )
    records = run_experiment(cfg)
    assert len(records) == 2
    for r in records:
        assert math.isfinite(r.global_loss) and math.isfinite(r.server_val_loss)
        assert len(r.selected) == 1
        assert len(r.devices) == 2
    for s in records[1].devices:
        assert s.ref_loss is not None and s.ref_loss > 0


# ---------------------------------------------------------------------------
# device failure
# ---------------------------------------------------------------------------


def test_failed_device_is_flagged_and_excluded(tmp_path, monkeypatch):
    prep = toy_prepared()
    cfg = replay_cfg(tmp_path, (25.0,), rounds=2)
    real = qmodels.loss
    bad = prep.devices_train[0]

    def flaky(model, dataset, weights, seed=0):
        if dataset is bad:
            return math.nan
        return real(model, dataset, weights, seed=seed)

    monkeypatch.setattr(qmodels, "loss", flaky)
    records = run_experiment(cfg, prep)
    assert len(records) == 2
    for r in records:
        d0 = r.devices[0]
        assert d0.failed and d0.loss is None
        assert 0 not in r.selected
        assert not r.devices[1].failed


def test_all_devices_failing_aborts(tmp_path, monkeypatch):
    prep = toy_prepared()
    cfg = replay_cfg(tmp_path, (25.0,), rounds=2)
    real = qmodels.loss
    bad = {id(d) for d in prep.devices_train}

    def flaky(model, dataset, weights, seed=0):
        if id(dataset) in bad:
            return math.nan
        return real(model, dataset, weights, seed=seed)

    monkeypatch.setattr(qmodels, "loss", flaky)
    with pytest.raises(ExperimentError) as excinfo:
        run_experiment(cfg, prep)
    assert excinfo.value.records == []
