import numpy as np
import pytest
import torch

from hymem.data import Samples
from hymem.distill import (
    OBJECTIVES, SyntheticSet, cdd_step, distill_full, dm_loss, dsa_loss,
    get_objective, gradient_cosine, register_objective,
)
from hymem.errors import ConfigError, DataError, ParseError
from hymem.model.checkpoint import CheckpointWindow
from hymem.model.network.mlp import ParamVector, init_mlp, linear_model
from hymem.utils.log import logger


def identity_model():
    return linear_model(np.eye(2), np.zeros(2))


def real_two_classes(seed=0, n=6, dim=4):
    rng = np.random.default_rng(seed)
    x = rng.normal(size=(2 * n, dim))
    return Samples(x, np.repeat([0, 1], n))


def synthetic_from(real, m=2, seed=0):
    return SyntheticSet.init_from_real(real, m, np.random.default_rng(seed))


def test_dm_identical_sets_is_zero(tanh_model):
    real = real_two_classes()
    S = SyntheticSet({c: real.x[idx] for c, idx in real.class_indices().items()})
    assert float(dm_loss(S, real, [tanh_model])) == 0.0


def test_dm_identity_embedding_value():
    real = Samples(np.array([[1.0, -1.0], [-1.0, 1.0]]), np.array([0, 0]))
    S = SyntheticSet({0: np.array([[1.0, 1.0]])})
    assert float(dm_loss(S, real, identity_model())) == pytest.approx(2.0)


def test_dm_is_mean_over_checkpoints(tanh_model):
    real = real_two_classes()
    S = synthetic_from(real)
    other = init_mlp(4, 4, hidden=(6,), activation='tanh', seed=2)
    both = float(dm_loss(S, real, [tanh_model, other]))
    single = (float(dm_loss(S, real, [tanh_model])) +
              float(dm_loss(S, real, [other]))) / 2
    assert both == pytest.approx(single, abs=1e-12)


def test_dm_errors(tanh_model):
    real = real_two_classes()
    S = SyntheticSet({5: np.zeros((1, 4))})
    with pytest.raises(DataError):
        dm_loss(S, real, [tanh_model])
    with pytest.raises(DataError):
        dm_loss(synthetic_from(real), real, [])


def test_dm_nonnegative_on_random_fixtures():
    for seed in range(5):
        model = init_mlp(4, 2, hidden=(5,), activation='tanh', seed=seed)
        real = real_two_classes(seed)
        S = SyntheticSet({0: np.random.default_rng(seed).normal(size=(3, 4)),
                          1: np.random.default_rng(seed + 10).normal(size=(3, 4))})
        assert float(dm_loss(S, real, [model])) >= 0.0


def test_dm_gradient_matches_finite_differences(tanh_model, fd, relerr):
    real = real_two_classes(1)
    rng = np.random.default_rng(2)
    rows = {0: rng.normal(size=(3, 4)), 1: rng.normal(size=(3, 4))}
    leaves = {c: torch.tensor(v, requires_grad=True) for c, v in rows.items()}
    value = dm_loss(leaves, real, [tanh_model])
    grads = torch.autograd.grad(value, list(leaves.values()))
    for c, g in zip(leaves, grads):
        for _ in range(5):
            idx = (int(rng.integers(0, 3)), int(rng.integers(0, 4)))

            def f(z, c=c):
                mapping = dict(rows)
                mapping[c] = z
                return float(dm_loss(SyntheticSet(mapping), real, [tanh_model]))

            num = fd(f, rows[c], idx)
            assert relerr(float(g[idx]), num) < 1e-4


def test_cdd_step_identity_example():
    real = Samples(np.array([[1.0, -1.0], [-1.0, 1.0]]), np.array([0, 0]))
    S = SyntheticSet({0: np.array([[1.0, 1.0]])})
    new = cdd_step(S, real, identity_model(), 0.1)
    np.testing.assert_allclose(new.data[0].numpy(), [[0.8, 0.8]], atol=1e-12)
    assert new.step_count == 1
    assert new.loss == pytest.approx(2.0)
    np.testing.assert_array_equal(S.data[0].numpy(), [[1.0, 1.0]])


def test_cdd_step_stationary_point(tanh_model):
    real = real_two_classes()
    S = SyntheticSet({c: real.x[idx] for c, idx in real.class_indices().items()})
    new = cdd_step(S, real, [tanh_model], 0.5)
    for c in S.classes:
        assert torch.equal(new.data[c], S.data[c])


def test_identical_window_equals_single_checkpoint(tanh_model):
    real = real_two_classes()
    S = synthetic_from(real)
    window = CheckpointWindow(3)
    for epoch in range(1, 4):
        window.push(epoch, tanh_model)
    a = cdd_step(S, real, window, 0.1)
    b = cdd_step(S, real, [tanh_model], 0.1)
    for c in S.classes:
        np.testing.assert_allclose(a.data[c].numpy(), b.data[c].numpy(), atol=1e-12)


def test_cdd_step_rejects_bad_lr(tanh_model):
    real = real_two_classes()
    with pytest.raises(ConfigError):
        cdd_step(synthetic_from(real), real, [tanh_model], 0.0)


def test_cdd_step_clamps():
    real = Samples(np.array([[0.0, 0.0], [0.0, 0.0]]), np.array([0, 0]))
    S = SyntheticSet({0: np.array([[0.05, 0.9]])}, clamp=True)
    new = cdd_step(S, real, identity_model(), 1.0)
    assert float(new.data[0].min()) >= 0.0
    assert float(new.data[0].max()) <= 1.0


def test_cdd_momentum_accumulates():
    real = Samples(np.array([[0.0, 0.0]]), np.array([0]))
    S = SyntheticSet({0: np.array([[1.0, 1.0]])})
    s1 = cdd_step(S, real, identity_model(), 0.1, momentum=0.5)
    # first step: buf = g = 2 * (1, 1)
    np.testing.assert_allclose(s1.data[0].numpy(), [[0.8, 0.8]], atol=1e-12)
    s2 = cdd_step(s1, real, identity_model(), 0.1, momentum=0.5)
    # g = 1.6, buf = 0.5 * 2 + 1.6 = 2.6
    np.testing.assert_allclose(s2.data[0].numpy(), [[0.54, 0.54]], atol=1e-12)


def test_distill_full_zero_lr_is_identity(tanh_model):
    real = real_two_classes()
    S = synthetic_from(real)
    out = distill_full(S, real, [tanh_model], 10, 0.0)
    for c in S.classes:
        assert torch.equal(out.data[c], S.data[c])


def test_distill_full_errors(tanh_model):
    real = real_two_classes()
    S = synthetic_from(real)
    with pytest.raises(ConfigError):
        distill_full(S, real, [tanh_model], 0, 0.1)
    with pytest.raises(ConfigError):
        distill_full(S, real, [tanh_model], 3, -0.1)


def test_dm_descent_is_monotone(tanh_model):
    real = real_two_classes(3)
    S = synthetic_from(real, m=2, seed=3)
    other = init_mlp(4, 4, hidden=(6,), activation='tanh', seed=5)
    history = []
    distill_full(S, real, [tanh_model, other], 30, 0.05, history=history)
    assert len(history) == 30
    for a, b in zip(history, history[1:]):
        assert b <= a + 1e-15


def test_full_window_matches_full_history():
    real = real_two_classes(4)
    S = synthetic_from(real, seed=4)
    checkpoints = [
        init_mlp(4, 2, hidden=(6,), activation='tanh', seed=s) for s in range(4)]
    window = CheckpointWindow(len(checkpoints))
    for epoch, theta in enumerate(checkpoints, start=1):
        window.push(epoch, theta)
    sliding = S
    for _ in range(5):
        sliding = cdd_step(sliding, real, window, 0.1, momentum=0.5)
    full = distill_full(S, real, checkpoints, 5, 0.1, momentum=0.5)
    for c in S.classes:
        np.testing.assert_allclose(
            sliding.data[c].numpy(), full.data[c].numpy(), atol=1e-12)


def test_dsa_identical_sets_reach_minimum(tanh_model):
    real = real_two_classes()
    S = SyntheticSet({c: real.x[idx] for c, idx in real.class_indices().items()})
    value, degenerate = dsa_loss(S, real, [tanh_model], return_flag=True)
    assert float(value) == pytest.approx(-1.0, abs=1e-10)
    assert not degenerate


def test_gradient_cosine_properties():
    a = [torch.tensor([1.0, 0.0], dtype=torch.float64)]
    b = [torch.tensor([0.0, 1.0], dtype=torch.float64)]
    cos, flag = gradient_cosine(a, b)
    assert float(cos) == pytest.approx(0.0, abs=1e-15)
    assert not flag
    rng = np.random.default_rng(0)
    ga = [torch.as_tensor(rng.normal(size=(3, 2))), torch.as_tensor(rng.normal(size=3))]
    gb = [torch.as_tensor(rng.normal(size=(3, 2))), torch.as_tensor(rng.normal(size=3))]
    base, _ = gradient_cosine(ga, gb)
    scaled, _ = gradient_cosine([5 * t for t in ga], gb)
    assert float(scaled) == pytest.approx(float(base), abs=1e-12)


def test_degenerate_gradient_is_worst_case():
    zero = [torch.zeros(2, dtype=torch.float64)]
    one = [torch.ones(2, dtype=torch.float64)]
    cos, flag = gradient_cosine(zero, one)
    assert float(cos) == -1.0
    assert flag


def test_cdd_step_with_dsa_changes_rows(tanh_model):
    real = real_two_classes(5)
    S = synthetic_from(real, seed=5)
    new = cdd_step(S, real, [tanh_model], 0.1, objective='dsa')
    assert np.isfinite(new.loss)
    assert any(not torch.equal(new.data[c], S.data[c]) for c in S.classes)


def test_objective_registry(tanh_model):
    with pytest.raises(ConfigError):
        get_objective('ftd')
    with pytest.raises(ConfigError):
        get_objective('datadam')
    with pytest.raises(ConfigError):
        get_objective('unknown')
    with pytest.raises(ConfigError):
        register_objective('dm', dm_loss)

    def doubled_dm(S, R, checkpoints):
        return 2 * dm_loss(S, R, checkpoints)

    register_objective('dm2', doubled_dm)
    try:
        real = real_two_classes()
        S = synthetic_from(real)
        a = cdd_step(S, real, [tanh_model], 0.05, objective='dm2')
        b = cdd_step(S, real, [tanh_model], 0.1, objective='dm')
        for c in S.classes:
            np.testing.assert_allclose(
                a.data[c].numpy(), b.data[c].numpy(), atol=1e-12)
    finally:
        OBJECTIVES.pop('dm2')


def test_init_from_real():
    real = real_two_classes()
    S = synthetic_from(real, m=3)
    assert S.classes == [0, 1]
    assert S.per_class == 3
    assert len(S) == 6
    for c in S.classes:
        rows = real.x[real.y == c]
        for row in S.data[c].numpy():
            assert any(np.array_equal(row, r) for r in rows)
    with pytest.raises(DataError):
        synthetic_from(real, m=7)
    clamped = SyntheticSet.init_from_real(
        real, 3, np.random.default_rng(0), clamp=True)
    assert float(clamped.data[0].min()) >= 0.0


def test_synthetic_set_save_load(tmp_path):
    real = real_two_classes()
    S = synthetic_from(real)
    path = tmp_path / 'syn.bin'
    S.save(path)
    loaded = SyntheticSet.load(path)
    assert loaded.classes == S.classes
    for c in S.classes:
        assert torch.equal(loaded.data[c], S.data[c])
    bad = tmp_path / 'bad.bin'
    bad.write_bytes(b'XXXX' + path.read_bytes()[4:])
    with pytest.raises(ParseError):
        SyntheticSet.load(bad)


def test_synthetic_set_to_csv(tmp_path):
    import pandas as pd
    S = synthetic_from(real_two_classes())
    S.to_csv(tmp_path / 'syn.csv')
    df = pd.read_csv(tmp_path / 'syn.csv')
    assert list(df.columns) == ['x1', 'x2', 'x3', 'x4', 'label']
    assert len(df) == 4


def test_dsa_class_without_synthetic_rows_is_worst_case(tanh_model):
    real = real_two_classes(6)
    rows = {0: torch.as_tensor(real.x[real.y == 0])}
    messages = []
    sink = logger.add(messages.append, level='WARNING')
    try:
        value, degenerate = dsa_loss(rows, real, [tanh_model], return_flag=True)
    finally:
        logger.remove(sink)
    # class 0 matches exactly (-1), class 1 is empty (+1)
    assert float(value) == pytest.approx(0.0, abs=1e-10)
    assert not degenerate
    assert messages == []


def test_dsa_zero_gradient_warns_once(tanh_model):
    real = real_two_classes(7)
    S = synthetic_from(real, seed=7)
    zeroed = ParamVector.from_tensors(
        [torch.zeros_like(t) for t in tanh_model.tensors()],
        tanh_model.activations)
    messages = []
    sink = logger.add(messages.append, level='WARNING')
    try:
        _, degenerate = dsa_loss(
            S, real, [zeroed, zeroed], return_flag=True)
    finally:
        logger.remove(sink)
    assert degenerate
    assert len(messages) == 1
