import numpy as np
import numpy.testing as npt
import pytest

from spikemeta.datasets import Example, SyntheticTaskFamily, Task
from spikemeta.learning import LearnConfig, update
from spikemeta.metalearn import (
    MetaConfig,
    MetaDataBuffer,
    TaskDataBuffer,
    classify,
    evaluate,
    evaluate_adaptation,
    joint_training_update,
    meta_update,
    run_task_stream,
    sample_meta_batch,
)
from spikemeta.network import init_params, make_network

from conftest import zero_params


def _example(rng, in_ch=2, out_ch=2, horizon=5, label=0):
    return Example(
        x=(rng.random((in_ch, horizon)) < 0.5).astype(np.uint8),
        y=(rng.random((out_ch, horizon)) < 0.5).astype(np.uint8),
        label=label,
    )


def _task(rng, task_id, n_train=4, n_test=4, **kw):
    train = [_example(rng, label=k % 2, **kw) for k in range(n_train)]
    test = [_example(rng, label=k % 2, **kw) for k in range(n_test)]
    return Task(task_id=task_id, train=train, test=test)


def _spec():
    return make_network(n_inputs=2, n_visible=2, n_hidden=2, window_len=4,
                        k_alpha=2, preset="full-recurrent")


# ---------------------------------------------------------------------------
# buffers

def test_task_buffer_grows(rng):
    buf = TaskDataBuffer("t0")
    buf.add_batch([_example(rng)])
    buf.add_batch([_example(rng), _example(rng)])
    assert len(buf) == 3


def test_meta_buffer_rejects_duplicate_and_evicts_oldest(rng):
    buf = MetaDataBuffer(capacity=2)
    buf.add_task("a", [_example(rng)])
    with pytest.raises(ValueError):
        buf.add_task("a", [_example(rng)])
    buf.add_task("b", [_example(rng)])
    buf.add_task("c", [_example(rng)])
    assert buf.task_ids == ["b", "c"]
    with pytest.raises(ValueError):
        MetaDataBuffer(capacity=0)


def test_sample_meta_batch_without_replacement(rng):
    buf = MetaDataBuffer()
    for name in "abc":
        buf.add_task(name, [_example(rng, label=k) for k in range(4)])
    cfg = MetaConfig(n_tasks=3, m_examples=2)
    datasets = sample_meta_batch(buf, cfg, rng)
    assert len(datasets) == 3
    for data in datasets:
        assert len(data) == 2
        assert data[0] is not data[1]
    # buffer smaller than n_tasks: tasks repeat but the call still succeeds
    small = MetaDataBuffer()
    small.add_task("only", [_example(rng) for _ in range(4)])
    datasets = sample_meta_batch(small, cfg, rng)
    assert len(datasets) == 3


def test_sample_meta_batch_errors(rng):
    cfg = MetaConfig(n_tasks=1, m_examples=3)
    with pytest.raises(ValueError):
        sample_meta_batch(MetaDataBuffer(), cfg, rng)
    buf = MetaDataBuffer()
    buf.add_task("a", [_example(rng)])
    with pytest.raises(ValueError):
        sample_meta_batch(buf, cfg, rng)


# ---------------------------------------------------------------------------
# meta_update

def test_meta_update_zero_mu_is_identity(rng):
    spec = _spec()
    theta = init_params(spec, rng, 0.2)
    datasets = [[_example(rng)], [_example(rng)]]
    cfg = MetaConfig(mu=0.0)
    out = meta_update(theta, datasets, spec, cfg, np.random.default_rng(0))
    assert out.allclose(theta, rtol=0, atol=0)


def test_meta_update_zero_inner_rate_is_identity(rng):
    spec = _spec()
    theta = init_params(spec, rng, 0.2)
    cfg = MetaConfig(mu=0.5, inner=LearnConfig(eta=0.0))
    out = meta_update(theta, [[_example(rng)]], spec, cfg,
                      np.random.default_rng(0))
    assert out.allclose(theta, rtol=0, atol=0)


def test_meta_update_bit_exact_composition(rng):
    """The meta-step must be reproducible term by term: replaying the inner
    updates with identically spawned generators and summing displacements in
    ascending order gives the same parameters bit for bit."""
    spec = _spec()
    theta = init_params(spec, rng, 0.2)
    datasets = [[_example(rng), _example(rng)] for _ in range(4)]
    cfg = MetaConfig(mu=0.03)
    out = meta_update(theta, datasets, spec, cfg, np.random.default_rng(42))

    children = np.random.default_rng(42).spawn(len(datasets))
    total = None
    for data, child in zip(datasets, children):
        phi = update(theta, data, spec, cfg.inner, child)
        delta = phi - theta
        total = delta if total is None else total + delta
    expected = theta + cfg.mu * total
    npt.assert_array_equal(out.w_alpha, expected.w_alpha)
    npt.assert_array_equal(out.w_beta, expected.w_beta)
    npt.assert_array_equal(out.gamma, expected.gamma)


def test_meta_update_moves_toward_adapted_params(rng):
    """With a single dataset, theta moves along (phi - theta) scaled by mu,
    i.e. toward the adapted parameters for mu in (0, 1)."""
    spec = _spec()
    theta = init_params(spec, rng, 0.2)
    data = [_example(rng), _example(rng)]
    cfg = MetaConfig(mu=0.25)
    phi = update(theta, data, spec, cfg.inner,
                 np.random.default_rng(7).spawn(1)[0])
    out = meta_update(theta, [data], spec, cfg, np.random.default_rng(7))
    npt.assert_allclose(
        out.to_vector(),
        theta.to_vector() + cfg.mu * (phi.to_vector() - theta.to_vector()),
        rtol=1e-15,
    )


def test_meta_update_rejects_empty(rng):
    spec = _spec()
    theta = init_params(spec, rng, 0.2)
    with pytest.raises(ValueError):
        meta_update(theta, [], spec, MetaConfig(), rng)


# ---------------------------------------------------------------------------
# classification / evaluation

def test_classify_reads_out_biased_neuron():
    spec = _spec()
    params = zero_params(spec)
    params.gamma[0] = -10.0
    params.gamma[1] = 10.0
    x = np.zeros((2, 6))
    pred = classify(params, spec, x, np.random.default_rng(0), repeats=3)
    assert pred == 1


def test_classify_tie_breaks_to_lowest_index():
    spec = _spec()
    params = zero_params(spec)
    params.gamma[:2] = -50.0  # visible neurons never spike
    pred = classify(params, spec, np.zeros((2, 5)),
                    np.random.default_rng(0), repeats=2)
    assert pred == 0


def test_evaluate_perfect_and_chance(rng):
    spec = _spec()
    params = zero_params(spec)
    params.gamma[0] = 10.0
    params.gamma[1] = -10.0
    test = [_example(rng, label=0) for _ in range(4)]
    acc, logloss = evaluate(params, spec, test, np.random.default_rng(1),
                            repeats=2)
    assert acc == 1.0
    assert np.isfinite(logloss) and logloss > 0


# ---------------------------------------------------------------------------
# run_task_stream

def _stream(rng, n=3):
    return [_task(rng, f"t{k}") for k in range(n)]


def _run(method, seed=0, mu=0.05, stream_seed=5, **kw):
    rng = np.random.default_rng(stream_seed)
    tasks = _stream(rng)
    spec = _spec()
    cfg = MetaConfig(mu=mu, n_tasks=2, m_examples=2, batch_size=2,
                     inner=LearnConfig(eta=0.05, delta_s=5),
                     eval_repeats=2)
    return run_task_stream(tasks, spec, cfg, np.random.default_rng(seed),
                           method=method, **kw)


def test_run_records_schedule_and_folds_buffer():
    metrics, theta, buffer = _run("meta")
    # 3 tasks x 4 train examples / batch 2 = 2 eval records per task
    assert [(r.t, r.i) for r in metrics.records] == [
        (1, 1), (1, 2), (2, 1), (2, 2), (3, 1), (3, 2)]
    assert [r.examples_seen for r in metrics.records] == [2, 4, 2, 4, 2, 4]
    assert all(r.method == "meta" for r in metrics.records)
    assert buffer.task_ids == ["t0", "t1", "t2"]
    assert all(len(buffer.examples_for(t)) == 4 for t in buffer.task_ids)


def test_run_is_deterministic():
    m1, theta1, _ = _run("meta", seed=3)
    m2, theta2, _ = _run("meta", seed=3)
    assert theta1.allclose(theta2, rtol=0, atol=0)
    assert m1.rows_without_wallclock() == m2.rows_without_wallclock()
    _, theta3, _ = _run("meta", seed=4)
    assert not theta3.allclose(theta1)


def test_meta_with_zero_mu_matches_conventional_with_shared_reinit():
    """mu=0 disables the only cross-task stage of the meta method. Driving
    the conventional method's per-task re-initialization to reproduce the
    meta method's single initialization makes the two runs identical."""
    spec = _spec()
    m_meta, theta_meta, _ = _run("meta", seed=9, mu=0.0)
    init_rng = np.random.default_rng(9).spawn(3)[0]
    theta0 = init_params(spec, init_rng, MetaConfig().init_scale)

    def reinit(t, reinit_rng):
        return theta0.copy()

    m_conv, theta_conv, _ = _run("conventional", seed=9, mu=0.0,
                                 reinit_hook=reinit)
    assert theta_meta.allclose(theta_conv, rtol=0, atol=0)
    rows_meta = [r[:5] for r in m_meta.rows_without_wallclock()]
    rows_conv = [r[:5] for r in m_conv.rows_without_wallclock()]
    assert rows_meta == rows_conv


def test_conventional_reinitializes_per_task():
    seen = []

    def reinit(t, rng):
        p = init_params(_spec(), rng, 0.1)
        seen.append(p.to_vector().copy())
        return p

    _run("conventional", reinit_hook=reinit)
    assert len(seen) == 3
    assert not np.array_equal(seen[0], seen[1])


def test_joint_updates_theta_between_steps():
    _, theta_joint, _ = _run("joint", seed=2)
    _, theta_frozen, _ = _run("meta", seed=2, mu=0.0)
    assert not theta_joint.allclose(theta_frozen)


def test_meta_updates_change_theta():
    _, theta_meta, _ = _run("meta", seed=2, mu=0.1)
    _, theta_frozen, _ = _run("meta", seed=2, mu=0.0)
    assert not theta_meta.allclose(theta_frozen)


def test_unknown_method_and_empty_stream_rejected(rng):
    spec = _spec()
    cfg = MetaConfig()
    with pytest.raises(ValueError):
        run_task_stream(_stream(rng), spec, cfg, rng, method="bogus")
    with pytest.raises(ValueError):
        run_task_stream([], spec, cfg, rng)


def test_checkpoint_hook_called_per_task():
    calls = []
    _run("meta", checkpoint_hook=lambda t, theta: calls.append(t))
    assert calls == [1, 2, 3]


def test_buffer_capacity_respected():
    rng = np.random.default_rng(5)
    tasks = _stream(rng)
    spec = _spec()
    cfg = MetaConfig(mu=0.05, n_tasks=1, m_examples=2, batch_size=2,
                     inner=LearnConfig(eta=0.05, delta_s=5),
                     eval_repeats=2, buffer_capacity=1)
    _, _, buffer = run_task_stream(tasks, spec, cfg,
                                   np.random.default_rng(0), method="meta")
    assert buffer.task_ids == ["t2"]


def test_evaluate_adaptation_relabels_and_does_not_fold():
    _, theta, _ = _run("meta")
    rng = np.random.default_rng(8)
    tasks = _stream(rng, n=2)
    spec = _spec()
    cfg = MetaConfig(mu=0.05, batch_size=2, eval_repeats=2,
                     inner=LearnConfig(eta=0.05, delta_s=5))
    metrics = evaluate_adaptation(theta, tasks, spec, cfg,
                                  np.random.default_rng(1), method="meta")
    assert all(r.method == "meta" for r in metrics.records)
    metrics_c = evaluate_adaptation(None, tasks, spec, cfg,
                                    np.random.default_rng(1),
                                    method="conventional")
    assert all(r.method == "conventional" for r in metrics_c.records)
    assert len(metrics.records) == len(metrics_c.records) == 4


def test_joint_pooling_matches_manual_replay(rng):
    """joint_training_update must equal sampling the same datasets and
    running one pooled within-task update."""
    spec = _spec()
    theta = init_params(spec, rng, 0.2)
    buf = MetaDataBuffer()
    seed_rng = np.random.default_rng(0)
    for name in "ab":
        buf.add_task(name, [_example(seed_rng, label=k) for k in range(4)])
    cfg = MetaConfig(n_tasks=2, m_examples=2,
                     inner=LearnConfig(eta=0.05, delta_s=5))
    out = joint_training_update(theta, buf, spec, cfg,
                                np.random.default_rng(3))
    s_rng, u_rng = np.random.default_rng(3).spawn(2)
    datasets = sample_meta_batch(buf, cfg, s_rng)
    pooled = [ex for data in datasets for ex in data]
    expected = update(theta, pooled, spec, cfg.inner, u_rng)
    assert out.allclose(expected, rtol=0, atol=0)


def test_config_validation():
    with pytest.raises(ValueError):
        MetaConfig(mu=-0.1)
    with pytest.raises(ValueError):
        MetaConfig(n_tasks=0)
    with pytest.raises(ValueError):
        MetaConfig(eval_repeats=0)


def test_adaptation_improves_on_synthetic_task():
    """Within-task learning should beat the untrained initialization on a
    real synthetic task (smoke-level sanity, not the full acceptance run)."""
    fam = SyntheticTaskFamily(family_seed=0, num_channels=8, horizon=20)
    task = fam.sample_task(0, per_class_train=6, per_class_test=10)
    spec = make_network(n_inputs=8, n_visible=2, n_hidden=4, window_len=10,
                        k_alpha=8, preset="full-recurrent")
    cfg = LearnConfig(eta=0.01, kappa=0.2, delta_s=5)
    rng = np.random.default_rng(0)
    theta = init_params(spec, rng, 0.1)
    acc0, loss0 = evaluate(theta, spec, task.test, np.random.default_rng(1),
                           repeats=2)
    phi = theta
    for _ in range(5):
        phi = update(phi, task.train, spec, cfg, rng)
    acc1, loss1 = evaluate(phi, spec, task.test, np.random.default_rng(1),
                           repeats=2)
    assert loss1 < loss0
    assert acc1 > acc0
