import numpy as np
import pytest

from ltc.protodict import (
    PrototypeStore,
    StreamRecord,
    ThresholdState,
    ema_update,
    init_prototypes,
    quantile_targets,
    read_stream_csv,
    store_from_arrays,
    store_to_arrays,
    write_stream_csv,
)


def unit_rows(a):
    a = np.asarray(a, dtype=np.float64)
    return a / np.linalg.norm(a, axis=1, keepdims=True)


def test_init_single_sample_per_class():
    f = unit_rows([[1, 0, 0], [0, 1, 0], [0, 0, 1]])
    store = init_prototypes(f, np.array([0, 1, 2]), 3)
    assert np.allclose(store.protos, f)


def test_init_mean_is_normalized():
    f = np.array([[1.0, 0.0], [0.0, 1.0]])
    store = init_prototypes(f, np.array([0, 0]), 1)
    assert np.allclose(store.protos[0], [1 / np.sqrt(2), 1 / np.sqrt(2)])


def test_init_antipodal_features_error():
    f = np.array([[1.0, 0.0], [-1.0, 0.0]])
    with pytest.raises(ValueError, match="zero norm"):
        init_prototypes(f, np.array([0, 0]), 1)


def test_init_empty_class_errors():
    f = np.array([[1.0, 0.0]])
    with pytest.raises(ValueError, match="no samples"):
        init_prototypes(f, np.array([0]), 2)


def test_match_exact_prototype():
    protos = unit_rows([[1, 0, 0], [0, 1, 0], [0, 0, 1]])
    store = PrototypeStore(protos, k_known=3)
    idx, s_max, _ = store.match(protos[1])
    assert idx == 1
    assert s_max == pytest.approx(1.0)


def test_match_orthogonal_feature():
    protos = unit_rows([[1, 0, 0, 0], [0, 1, 0, 0]])
    store = PrototypeStore(protos, k_known=2)
    _, s_max, _ = store.match(np.array([0.0, 0.0, 1.0, 0.0]))
    assert s_max == pytest.approx(0.0)


def test_match_agrees_with_linear_scan():
    rng = np.random.default_rng(0)
    protos = unit_rows(rng.standard_normal((5, 8)))
    store = PrototypeStore(protos, k_known=5)
    for _ in range(20):
        f = unit_rows(rng.standard_normal((1, 8)))[0]
        idx, s_max, scores = store.match(f)
        best = max(range(5), key=lambda k: float(f @ protos[k]))
        assert idx == best
        assert s_max == pytest.approx(float(f @ protos[best]))


def test_match_tie_breaks_to_lowest_index():
    protos = unit_rows([[1, 0], [1, 0]])
    store = PrototypeStore(protos, k_known=2)
    idx, _, _ = store.match(np.array([1.0, 0.0]))
    assert idx == 0


def test_match_argmax_invariant_under_positive_scaling():
    rng = np.random.default_rng(1)
    protos = unit_rows(rng.standard_normal((6, 4)))
    store = PrototypeStore(protos, k_known=6)
    f = unit_rows(rng.standard_normal((1, 4)))[0]
    _, _, scores = store.match(f)
    assert np.argmax(scores) == np.argmax(3.7 * scores)


def test_assign_above_threshold():
    protos = unit_rows([[1, 0], [0, 1]])
    store = PrototypeStore(protos, k_known=2)
    idx, s_max, spawned = store.assign_or_spawn(np.array([0.98, 0.199]) /
                                                np.linalg.norm([0.98, 0.199]), 0.7)
    assert idx == 0 and not spawned
    assert len(store) == 2


def test_spawn_below_threshold():
    protos = unit_rows([[1, 0, 0], [0, 1, 0]])
    store = PrototypeStore(protos, k_known=2)
    f = np.array([0.0, 0.0, 1.0])
    idx, s_max, spawned = store.assign_or_spawn(f, 0.7)
    assert spawned and idx == 2
    assert len(store) == 3
    # the spawned prototype now matches its own feature exactly
    idx2, s2, spawned2 = store.assign_or_spawn(f, 0.7)
    assert idx2 == 2 and not spawned2


def test_assign_at_exact_threshold_is_not_novel():
    protos = unit_rows([[1.0, 0.0]])
    store = PrototypeStore(protos, k_known=1)
    f = np.array([0.7, np.sqrt(1 - 0.49)])
    idx, s_max, spawned = store.assign_or_spawn(f, s_max_tau := float(f @ protos[0]))
    assert not spawned and idx == 0


def test_store_growth_bound():
    rng = np.random.default_rng(2)
    protos = unit_rows(rng.standard_normal((3, 6)))
    store = PrototypeStore(protos, k_known=3)
    n = 50
    for _ in range(n):
        store.assign_or_spawn(unit_rows(rng.standard_normal((1, 6)))[0], 0.99)
    assert len(store) <= 3 + n


def test_streaming_predictions_are_final():
    # the decision for item t never changes when later items arrive
    rng = np.random.default_rng(3)
    protos = unit_rows(rng.standard_normal((3, 5)))
    stream = unit_rows(rng.standard_normal((30, 5)))

    def run(items):
        store = PrototypeStore(protos.copy(), k_known=3)
        return [store.assign_or_spawn(f, 0.6)[0] for f in items]

    full = run(stream)
    for cut in (1, 7, 19):
        assert run(stream[:cut]) == full[:cut]


def test_running_update_momentum_extremes():
    protos = unit_rows([[1, 0]])
    store = PrototypeStore(protos, k_known=1)
    f = np.array([0.0, 1.0])
    store.running_update(f, 0, momentum=1.0)
    assert np.allclose(store.protos[0], [1, 0])  # unchanged
    store.running_update(f, 0, momentum=0.0)
    assert np.allclose(store.protos[0], [0, 1])  # jumps to the feature


def test_running_update_matches_unrolled_recurrence():
    protos = unit_rows([[1, 0]])
    store = PrototypeStore(protos, k_known=1)
    f1 = unit_rows([[0.6, 0.8]])[0]
    f2 = unit_rows([[0.0, 1.0]])[0]
    mu = 0.9
    store.running_update(f1, 0, mu)
    store.running_update(f2, 0, mu)
    m = mu * (mu * np.array([1.0, 0.0]) + (1 - mu) * f1) + (1 - mu) * f2
    assert np.allclose(store.protos[0], m / np.linalg.norm(m))


def test_running_update_rejects_unknown_label():
    store = PrototypeStore(unit_rows([[1, 0]]), k_known=1)
    with pytest.raises(ValueError):
        store.running_update(np.array([0.0, 1.0]), 1, 0.9)


def test_quantile_constant_distributions():
    u_pos, u_neg, target = quantile_targets(np.full(10, 0.9), np.full(7, 0.3),
                                            0.8, 0.2)
    assert (u_pos, u_neg) == (0.9, 0.3)
    assert target == pytest.approx(0.6)


def test_quantile_linear_interpolation_rule():
    known = np.array([0.5, 0.7, 0.9, 1.0])
    # rank 0.8 * 3 = 2.4 -> 0.9 + 0.4 * (1.0 - 0.9)
    u_pos, _, _ = quantile_targets(known, np.array([0.1]), 0.8, 0.2)
    assert u_pos == pytest.approx(0.94)


def test_quantile_empty_set_errors():
    with pytest.raises(ValueError):
        quantile_targets(np.array([]), np.array([0.1]), 0.8, 0.2)
    with pytest.raises(ValueError):
        quantile_targets(np.array([0.9]), np.array([]), 0.8, 0.2)


def test_ema_beta_zero_keeps_tau():
    state = ThresholdState(tau=0.7, beta=0.0)
    ema_update(state, 0.2)
    assert state.tau == 0.7


def test_ema_beta_one_jumps_to_target():
    state = ThresholdState(tau=0.7, beta=1.0)
    ema_update(state, 0.25)
    assert state.tau == 0.25


def test_ema_paper_default_rate():
    state = ThresholdState(tau=0.7, beta=0.001)
    ema_update(state, 0.6)
    assert state.tau == pytest.approx(0.6999)


def test_ema_monotone_approach():
    state = ThresholdState(tau=0.9, beta=0.05)
    target = 0.4
    gap = abs(state.tau - target)
    for _ in range(100):
        ema_update(state, target)
        new_gap = abs(state.tau - target)
        assert new_gap < gap
        gap = new_gap


def test_ema_brackets_between_quantiles():
    # separated constant score distributions: tau converges into [u_neg, u_pos]
    state = ThresholdState(tau=-0.5, beta=0.2)
    known = np.full(20, 0.95)
    pseudo = np.full(20, 0.35)
    inside_since = None
    for step in range(200):
        u_pos, u_neg, target = quantile_targets(known, pseudo, 0.8, 0.2)
        ema_update(state, target)
        if u_neg <= state.tau <= u_pos:
            inside_since = inside_since if inside_since is not None else step
        elif inside_since is not None:
            pytest.fail("tau left the quantile bracket after entering it")
    assert inside_since is not None


def test_ema_history_records_steps():
    state = ThresholdState(tau=0.7, beta=0.5)
    ema_update(state, 0.5, u_pos=0.9, u_neg=0.1)
    assert len(state.history) == 1
    assert state.history[0][2] == 0.5


def test_stream_csv_roundtrip(tmp_path):
    records = [StreamRecord(3, 0, 0.91234567891234, False),
               StreamRecord(7, 5, -0.25, True)]
    path = tmp_path / "stream.csv"
    write_stream_csv(path, records)
    back = read_stream_csv(path)
    assert back == records


def test_stream_csv_header_check(tmp_path):
    path = tmp_path / "bad.csv"
    path.write_text("nope\n1,2,3,4\n")
    with pytest.raises(ValueError):
        read_stream_csv(path)


def test_store_serialization_roundtrip():
    rng = np.random.default_rng(4)
    protos = unit_rows(rng.standard_normal((4, 6)))
    store = PrototypeStore(protos, k_known=2)
    arrays, ints = store_to_arrays(store)
    back = store_from_arrays(arrays, ints)
    assert np.array_equal(back.protos, store.protos)
    assert back.k_known == 2
    assert np.array_equal(back.accum, store.accum)
