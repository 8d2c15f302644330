import numpy as np
import pytest
from scipy.stats import chisquare

from beamrl.ddqn import (Adam, Experience, Hyperparams, Learner, Mlp, ReplayBuffer, ddqn_targets, epsilon_at,
                         load_checkpoint, loss_and_grads, save_checkpoint, td_loss_grad, train_step)


def zero_net(dims=(144, 128, 256, 48)):
    net = Mlp(dims)
    net.flat_params[:] = 0.0
    return net


def test_zero_net_zero_output():
    np.testing.assert_array_equal(zero_net().forward(np.ones(144)), np.zeros(48))


def test_output_length():
    net = Mlp((144, 128, 256, 48))
    assert net.forward(np.zeros(144)).shape == (48,)
    assert net.forward(np.zeros((5, 144))).shape == (5, 48)


def test_dimension_mismatch():
    with pytest.raises(ValueError):
        Mlp((144, 128, 256, 48)).forward(np.zeros(143))
    with pytest.raises(ValueError):
        Mlp((3,))


def test_glorot_init_bounds():
    net = Mlp((144, 128, 256, 48), np.random.default_rng(1))
    for w, b in zip(net.weights, net.biases):
        lim = np.sqrt(6.0 / sum(w.shape))
        assert np.abs(w).max() <= lim
        np.testing.assert_array_equal(b, 0.0)


def test_params_are_views_of_flat_buffer():
    net = Mlp((4, 3, 2))
    assert net.n_params == 5 * 3 + 4 * 2
    net.flat_params[:] = np.arange(net.n_params)
    assert net.weights[0][0, 0] == 0 and net.biases[-1][-1] == net.n_params - 1


def _fd_grads(net, x, g_out, h=1e-5):
    out = []
    for p in net.params:
        grad = np.zeros_like(p)
        it = np.nditer(p, flags=["multi_index"])
        for _ in it:
            i = it.multi_index
            old = p[i]
            p[i] = old + h
            fp = np.sum(net.forward(x) * g_out)
            p[i] = old - h
            fm = np.sum(net.forward(x) * g_out)
            p[i] = old
            grad[i] = (fp - fm) / (2 * h)
        out.append(grad)
    return out


def test_gradient_check():
    rng = np.random.default_rng(7)
    net = Mlp((12, 10, 8, 4), rng)
    for p in net.biases:
        p[:] = rng.normal(0, 0.1, p.shape)
    x = rng.uniform(0, 1, (100, 12))
    g_out = rng.normal(size=(100, 4))
    _, acts = net.forward_cached(x)
    analytic = net.backward(acts, g_out)
    numeric = _fd_grads(net, x, g_out)
    for a, n in zip(analytic, numeric):
        rel = np.abs(a - n) / np.maximum(np.abs(a) + np.abs(n), 1e-8)
        assert rel.max() < 1e-4


def test_copy_is_independent():
    net = Mlp((4, 3, 2))
    c = net.copy()
    net.flat_params += 1.0
    assert not np.array_equal(c.flat_params, net.flat_params)
    c.load_params(net)
    np.testing.assert_array_equal(c.flat_params, net.flat_params)


def test_ddqn_target_decoupled():
    online, target = zero_net((1, 1, 2)), zero_net((1, 1, 2))
    online.biases[-1][:] = [1.0, 2.0]
    target.biases[-1][:] = [10.0, 3.0]
    batch = (np.zeros((1, 1)), np.zeros(1, int), np.array([0.5]), np.zeros((1, 1)), np.array([False]))
    assert ddqn_targets(batch, online, target, 0.9)[0] == pytest.approx(3.2)
    # vanilla DQN would have used the target's own max
    assert ddqn_targets(batch, target, target, 0.9)[0] == pytest.approx(9.5)


def test_ddqn_target_terminal_and_gamma_zero():
    rng = np.random.default_rng(0)
    net = Mlp((3, 4, 2), rng)
    r = rng.uniform(size=6)
    s2 = rng.uniform(size=(6, 3))
    done = np.array([True] * 6)
    np.testing.assert_array_equal(ddqn_targets((None, None, r, s2, done), net, net, 0.9), r)
    np.testing.assert_array_equal(ddqn_targets((None, None, r, s2, ~done), net, net, 0.0), r)


def test_td_loss_non_negative():
    for kind in ("mse", "huber"):
        loss, _ = td_loss_grad(np.array([1.0, -2.0, 3.0]), np.array([0.0, 0.0, 5.0]), kind)
        assert loss >= 0


def test_adam_first_step():
    w = np.array([1.0])
    Adam(lr=1e-4).step([w], [np.array([1.0])])
    assert w[0] == pytest.approx(1 - 1e-4 / (1 + 1e-8), abs=1e-15)
    assert w[0] == pytest.approx(0.9999)


def test_adam_zero_gradient_and_zero_lr():
    w = np.array([0.3, -0.2])
    Adam(lr=1e-3).step([w], [np.zeros(2)])
    np.testing.assert_array_equal(w, [0.3, -0.2])
    Adam(lr=0.0).step([w], [np.ones(2)])
    np.testing.assert_array_equal(w, [0.3, -0.2])


def test_adam_rejects_non_finite():
    with pytest.raises(FloatingPointError):
        Adam().step([np.zeros(2)], [np.array([1.0, np.nan])])
    with pytest.raises(ValueError):
        Adam().step([np.zeros(2)], [np.zeros(3)])


@pytest.mark.parametrize("step, eps", [(0, 1.0), (500, 0.525), (1000, 0.05), (5000, 0.05)])
def test_epsilon_schedule(step, eps):
    assert epsilon_at(step, 1.0, 0.05, 1000) == pytest.approx(eps)


def test_epsilon_rejects_negative():
    with pytest.raises(ValueError):
        epsilon_at(-1)


def test_hyperparams_validation():
    with pytest.raises(ValueError):
        Hyperparams(gamma=1.0)
    with pytest.raises(ValueError):
        Hyperparams(loss="l1")


def test_replay_ring_eviction():
    rb = ReplayBuffer(3, 2)
    for i in range(5):
        rb.add(Experience(np.full(2, i), i, 0.0, np.zeros(2), False))
    assert len(rb) == 3
    assert sorted(rb.a.tolist()) == [2, 3, 4]


def test_replay_uniform_sampling():
    rb = ReplayBuffer(50, 1)
    for i in range(50):
        rb.add(Experience(np.zeros(1), i, 0.0, np.zeros(1), False))
    idx = rb.sample_indices(100_000, np.random.default_rng(3))
    assert chisquare(np.bincount(idx, minlength=50)).pvalue > 0.01


def _filled_learner(seed=0, sync=500, lr=1e-3):
    rng = np.random.default_rng(seed)
    rb = ReplayBuffer(200, 6)
    for _ in range(200):
        rb.add(Experience(rng.uniform(size=6), int(rng.integers(2)), float(rng.uniform()), rng.uniform(size=6),
                          bool(rng.random() < 0.1)))
    learner = Learner(Mlp((6, 16, 16, 2), np.random.default_rng(seed)),
                      Hyperparams(learning_rate=lr, target_sync_period=sync))
    return rb, learner


def test_train_step_underfull_is_noop():
    rb = ReplayBuffer(100, 6)
    learner = Learner(Mlp((6, 4, 2)), Hyperparams())
    before = learner.online.flat()
    assert train_step(rb, learner, np.random.default_rng(0)) is None
    np.testing.assert_array_equal(learner.online.flat_params, before)
    assert learner.steps == 0


def test_loss_decreases_on_frozen_batch():
    rb, learner = _filled_learner(lr=Hyperparams().learning_rate)
    batch = rb.sample(32, np.random.default_rng(1))
    losses = [train_step(rb, learner, None, batch) for _ in range(50)]
    assert all(b < a for a, b in zip(losses, losses[1:]))
    assert min(losses) >= 0


def test_target_frozen_between_syncs():
    rb, learner = _filled_learner(sync=10)
    rng = np.random.default_rng(2)
    frozen = learner.target.flat()
    for k in range(1, 10):
        train_step(rb, learner, rng)
        np.testing.assert_array_equal(learner.target.flat_params, frozen)
    train_step(rb, learner, rng)
    np.testing.assert_array_equal(learner.target.flat_params, learner.online.flat_params)
    assert not np.array_equal(learner.target.flat_params, frozen)


def test_training_deterministic():
    runs = []
    for _ in range(2):
        rb, learner = _filled_learner(seed=4)
        rng = np.random.default_rng(9)
        for _ in range(30):
            train_step(rb, learner, rng)
        runs.append(learner.online.flat())
    np.testing.assert_array_equal(*runs)


def test_parameters_finite_after_updates():
    rb, learner = _filled_learner()
    rng = np.random.default_rng(0)
    for _ in range(100):
        train_step(rb, learner, rng)
    assert np.all(np.isfinite(learner.online.flat_params))


def test_toy_mdp_matches_value_iteration():
    # two states, two actions, deterministic: action 1 leads to state 1, action 0 to state 0
    gamma, n_act = 0.9, 2
    nxt = np.array([[0, 1], [0, 1]])
    rew = np.array([[0.0, 0.0], [1.0, 0.5]])
    q_star = np.zeros((2, 2))
    for _ in range(2000):
        q_star = rew + gamma * q_star[nxt].max(axis=-1)

    def onehot(s):
        x = np.zeros(3 * n_act)
        x[s] = 1.0
        return x

    s = np.array([0, 0, 1, 1])
    a = np.array([0, 1, 0, 1])
    batch = (np.array([onehot(i) for i in s]), a, rew[s, a], np.array([onehot(i) for i in nxt[s, a]]),
             np.zeros(4, bool))
    net = Mlp((3 * n_act, 128, 256, n_act), np.random.default_rng(0))
    learner = Learner(net, Hyperparams(gamma=gamma, learning_rate=1e-3, target_sync_period=50, batch_size=4))
    for _ in range(5000):
        train_step(None, learner, None, batch)
    q = net.forward(np.array([onehot(0), onehot(1)]))
    assert np.abs(q - q_star).max() < 1e-2


def test_checkpoint_round_trip(tmp_path):
    net = Mlp((144, 128, 256, 48), np.random.default_rng(5))
    path = tmp_path / "q.ckpt"
    save_checkpoint(net, path, Hyperparams())
    back, header = load_checkpoint(path)
    assert back.layer_dims == net.layer_dims
    np.testing.assert_array_equal(back.flat_params, net.flat_params)
    assert header["gamma"] == "0.9"
    x = np.random.default_rng(0).uniform(size=144)
    np.testing.assert_array_equal(back.forward(x), net.forward(x))


def test_checkpoint_rejects_garbage(tmp_path):
    bad = tmp_path / "bad.ckpt"
    bad.write_bytes(b"hello\n")
    with pytest.raises(ValueError):
        load_checkpoint(bad)
    net = Mlp((4, 3, 2))
    good = tmp_path / "q.ckpt"
    save_checkpoint(net, good)
    good.write_bytes(good.read_bytes()[:-8])
    with pytest.raises(ValueError):
        load_checkpoint(good)


def test_loss_and_grads_shapes():
    rb, learner = _filled_learner()
    loss, grads = loss_and_grads(rb.sample(32, np.random.default_rng(0)), learner)
    assert loss >= 0
    assert [g.shape for g in grads] == [p.shape for p in learner.online.params]
