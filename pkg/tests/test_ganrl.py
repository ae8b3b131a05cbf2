import json

import numpy as np
import pytest

from advclaim.ganrl import (
    DiscriminatorNet,
    GanDivergence,
    GeneratorNet,
    ProtocolError,
    QueryBudgetExceeded,
    RlConfig,
    SurrogateHandle,
    attach_local_surrogate,
    attach_target_as_surrogate,
    evaluate_generator,
    generate_batch,
    pretrain_gan,
    replay_latents,
    rl_refine,
    step_reward,
    td_error,
    td_update,
    write_trace_jsonl,
)
from advclaim.ganrl.rl import _analytic_gradient, _bce_to_target, _es_gradient
from advclaim.models import MarginModel, train_gbt
from advclaim.numkit import Rng, finite_diff_grad, rel_error

TINY = (5, 7, 6, 4)


def _net_loss_check(net, x, proj):
    """Compare backward() against finite differences of sum(proj * net(x))."""
    out, cache = net.forward(x)
    grads, dx = net.backward(cache, proj * out * (1 - out))

    def f_params(vec):
        return float(np.sum(proj * net(x, net.unflatten(vec))))

    fd = finite_diff_grad(f_params, net.flat())
    analytic = np.concatenate([g.reshape(-1) for g in grads])
    assert rel_error(analytic, fd) <= 1e-4
    fd_x = finite_diff_grad(lambda v: float(np.sum(proj * net(v.reshape(x.shape)))), x.reshape(-1).copy())
    assert rel_error(dx.reshape(-1), fd_x) <= 1e-4


@pytest.mark.parametrize("kind", ["generator", "discriminator"])
def test_network_gradients_match_fd(kind):
    rng = Rng(12)
    for inst in range(10):
        if kind == "generator":
            net = GeneratorNet(3, 4, seed=inst, widths=TINY)
            x = rng.normal((4, 3))
        else:
            net = DiscriminatorNet(4, seed=inst, widths=TINY)
            x = rng.uniform((4, 4))
        _net_loss_check(net, x, rng.normal((4, net.out_dim)))


def test_generator_shape_contract():
    gen = GeneratorNet(64, 12)
    assert gen.widths == [64, 128, 256, 512, 64, 12]
    assert gen.n_layers == 5
    disc = DiscriminatorNet(12)
    assert disc.widths == [12, 64, 512, 256, 128, 1]


def test_generate_batch():
    gen = GeneratorNet(8, 5, seed=1, widths=TINY)
    assert generate_batch(gen, Rng(0), 0).shape == (0, 5)
    a = generate_batch(gen, Rng(3), 50)
    assert a.shape == (50, 5) and a.min() >= 0 and a.max() <= 1
    assert np.array_equal(a, generate_batch(gen, Rng(3), 50))


def test_untrained_discriminator_near_half():
    gen, disc = GeneratorNet(64, 12, seed=0), DiscriminatorNet(12, seed=1)
    d = disc(generate_batch(gen, Rng(2), 256))
    assert abs(float(d.mean()) - 0.5) <= 0.2


def test_pretrain_degenerate_feature():
    gen, disc = GeneratorNet(16, 1, seed=0), DiscriminatorNet(1, seed=1)
    pretrain_gan(gen, disc, np.full((256, 1), 0.5), epochs=20, seed=3)
    assert abs(float(generate_batch(gen, Rng(5), 1000).mean()) - 0.5) <= 0.1


def test_pretrain_deterministic(small_bench):
    x = small_bench.train[0]
    curves = []
    for _ in range(2):
        gen, disc = GeneratorNet(8, x.shape[1], seed=0, widths=TINY), DiscriminatorNet(x.shape[1], seed=1, widths=TINY)
        h = pretrain_gan(gen, disc, x, epochs=3, seed=4)
        curves.append((h.disc_loss, h.gen_loss))
    assert curves[0] == curves[1]


def test_divergence_guard():
    gen, disc = GeneratorNet(4, 2, seed=0, widths=TINY), DiscriminatorNet(2, seed=1, widths=TINY)
    with pytest.raises(GanDivergence) as info:
        pretrain_gan(gen, disc, Rng(0).uniform((64, 2)), epochs=5, batch_size=8, seed=0,
                     divergence_floor=1e3, divergence_patience=3)
    assert len(info.value.history.disc_loss) == 3


def test_step_reward_examples():
    assert step_reward([0, 0, 0], 0) == 1.0
    assert step_reward([1, 1], 0) == 0.0
    assert step_reward([0, 0, 1, 0], 0) == 0.75
    with pytest.raises(ValueError):
        step_reward([], 0)


def test_td_update_examples():
    z = Rng(0).normal((3, 4))
    assert np.array_equal(td_update(z, 0.0, 0.1, 0.9, 3, Rng(1))[0], z)
    assert np.array_equal(td_update(z, 0.7, 0.0, 0.9, 3, Rng(1))[0], z)
    z1, n = td_update(z, 1.0, 1.0, 0.5, 2, Rng(2))
    np.testing.assert_allclose(np.abs(z1 - z), 0.25 * np.abs(n), rtol=0, atol=1e-15)
    with pytest.raises(ValueError):
        td_update(z, 1.0, 1.0, 0.5, -1, Rng(2))


def test_td_error_bounds():
    rng = Rng(4)
    for _ in range(200):
        r = list(rng.uniform(rng.integers(1, 20)))
        assert -1.0 <= td_error(r) <= 1.0
    assert td_error([0.3]) == 0.0


def test_rl_config_validation():
    with pytest.raises(ValueError):
        RlConfig(alpha=0.0)
    with pytest.raises(ValueError):
        RlConfig(gamma=0.0)
    with pytest.raises(ValueError):
        RlConfig(gamma=1.5)


def test_handle_counts_and_matches_model(small_bench):
    model = train_gbt(*small_bench.train, n_trees=5)
    handle = attach_target_as_surrogate(model)
    x = small_bench.features[:32]
    for _ in range(3):
        assert handle.score(x).tobytes() == model.predict_proba(x).tobytes()
    assert handle.queries == 96
    assert handle.audit()["parameter_accesses"] == 0
    assert not handle.differentiable
    with pytest.raises(TypeError):
        handle.gradient(x, np.zeros(32))
    with pytest.raises(AttributeError):
        handle.model = model  # slots: nothing can be attached


def _constant(value, n_features):
    return SurrogateHandle(lambda x: np.full(x.shape[0], value), n_features)


def test_already_fooled_surrogate_is_noop():
    gen = GeneratorNet(6, 3, seed=0, widths=TINY)
    before = gen.flat().copy()
    cfg = RlConfig(batch=8, horizon=4, latent_dim=6, episodes=3)
    _, traces = rl_refine(gen, _constant(0.0, 3), cfg)
    assert np.array_equal(gen.flat(), before)
    for tr in traces:
        assert tr.rewards == [1.0] * 4
        assert tr.td_errors[0] == 0.0
        assert tr.generator_loss <= 1e-6


def test_protocol_error():
    gen = GeneratorNet(6, 3, seed=0, widths=TINY)
    with pytest.raises(ProtocolError):
        rl_refine(gen, _constant(1.5, 3), RlConfig(batch=4, horizon=2, latent_dim=6, episodes=1))


def test_budget_error_carries_partial_traces():
    gen = GeneratorNet(6, 3, seed=0, widths=TINY)
    handle = SurrogateHandle(lambda x: np.full(x.shape[0], 0.9), 3, max_queries=1000)
    cfg = RlConfig(batch=8, horizon=4, latent_dim=6, episodes=50, es_samples=4)
    with pytest.raises(QueryBudgetExceeded) as info:
        rl_refine(gen, handle, cfg)
    # one episode costs (4 + 1 + 4) * 8 = 72 rows
    assert len(info.value.traces) == 1000 // 72
    assert handle.queries <= 1000


def test_replay_reproduces_latents(small_bench):
    f = small_bench.n_features
    gen = GeneratorNet(6, f, seed=0, widths=TINY)
    handle = attach_target_as_surrogate(train_gbt(*small_bench.train, n_trees=5))
    cfg = RlConfig(batch=8, horizon=5, latent_dim=6, episodes=3, record_latents=True, seed=5)
    _, traces = rl_refine(gen, handle, cfg)
    for tr in traces:
        replay = replay_latents(cfg, tr.episode, tr.td_errors, tr.latents[0])
        assert len(replay) == len(tr.latents)
        assert all(a.tobytes() == b.tobytes() for a, b in zip(replay, tr.latents))
        assert all(0.0 <= r <= 1.0 for r in tr.rewards)
        assert all(-1.0 <= d <= 1.0 for d in tr.td_errors)
        assert len(tr.rewards) == cfg.horizon


def test_rl_is_deterministic_and_writes_trace(tmp_path, small_bench):
    f = small_bench.n_features
    target = train_gbt(*small_bench.train, n_trees=5)
    cfg = RlConfig(batch=8, horizon=3, latent_dim=6, episodes=4, seed=1)
    outs = []
    for _ in range(2):
        gen = GeneratorNet(6, f, seed=0, widths=TINY)
        _, traces = rl_refine(gen, attach_target_as_surrogate(target), cfg)
        outs.append((gen.flat().tobytes(), [t.rewards for t in traces]))
    assert outs[0] == outs[1]
    path = tmp_path / "t.jsonl"
    write_trace_jsonl(traces, path)
    recs = [json.loads(line) for line in path.read_text().splitlines()]
    assert len(recs) == 12
    assert set(recs[0]) == {"episode", "t", "reward", "td_error", "mean_score", "queries"}


def test_analytic_gradient_matches_fd(small_recurrent, small_bench):
    f = small_bench.n_features
    gen = GeneratorNet(3, f, seed=2, widths=TINY)
    cfg = RlConfig(batch=4, horizon=1, latent_dim=3, target_label=0)
    z = Rng(1).normal((4, 3))
    handle = attach_local_surrogate(small_recurrent)
    assert handle.differentiable
    analytic = np.concatenate([g.reshape(-1) for g in _analytic_gradient(gen, z, handle, cfg)])

    def loss(vec):
        return _bce_to_target(small_recurrent.predict_proba(gen(z, gen.unflatten(vec))), 0)

    assert rel_error(analytic, finite_diff_grad(loss, gen.flat())) <= 1e-4


def test_es_gradient_aligns_with_true_gradient():
    gen = GeneratorNet(2, 2, seed=3, widths=(3,))
    model = MarginModel([3.0, -2.0], 0.5)
    z = Rng(2).normal((16, 2))
    cfg = RlConfig(batch=16, horizon=1, latent_dim=2, es_samples=4000, es_sigma=0.01)
    est = _es_gradient(gen, z, attach_target_as_surrogate(model), cfg, Rng(9))
    true = finite_diff_grad(lambda v: _bce_to_target(model.predict_proba(gen(z, gen.unflatten(v))), 0), gen.flat())
    cos = est @ true / (np.linalg.norm(est) * np.linalg.norm(true))
    assert cos >= 0.9


def test_refinement_raises_reward_on_linear_target():
    model = MarginModel([4.0, 4.0, -1.0], -3.0)  # most random records score as fraud
    gen = GeneratorNet(8, 3, seed=0, widths=(16, 16))
    handle = attach_target_as_surrogate(model)
    cfg = RlConfig(batch=16, horizon=4, latent_dim=8, episodes=60, seed=2, generator_lr=1e-2)
    _, traces = rl_refine(gen, handle, cfg)
    first = np.mean([t.mean_reward for t in traces[:6]])
    last = np.mean([t.mean_reward for t in traces[-6:]])
    assert last >= first
    assert handle.audit()["rows_by_kind"] == {"score": handle.queries}


def test_evaluate_generator_counts():
    gen = GeneratorNet(4, 2, seed=0, widths=TINY)
    handle = _constant(0.2, 2)
    ev, records = evaluate_generator(gen, handle, n_batches=5, batch_size=7, seed=1)
    assert ev.n_samples == 35 and handle.queries == 35
    assert records.shape == (35, 2)
    assert all(label == 0 for b in ev.batch_labels for label in b)
    assert np.all((records >= 0) & (records <= 1))
