import numpy as np
import pytest

from mdsttl.ddpg import (CHECKPOINT_VERSION, DdpgAgent, DdpgConfig, ReplayBuffer, evaluate,
                         noise_schedule, train, write_training_log)
from mdsttl.nn import Adam, Mlp
from mdsttl.sarl import SarlEnv, Transition
from mdsttl.scenario import ScenarioConfig, generate_trace


def finite_difference(f, flat, eps=1e-6):
    g = np.empty_like(flat)
    for i in range(flat.size):
        old = flat[i]
        flat[i] = old + eps
        up = f()
        flat[i] = old - eps
        down = f()
        flat[i] = old
        g[i] = (up - down) / (2 * eps)
    return g


def rel_error(a, b):
    return np.max(np.abs(a - b)) / max(np.max(np.abs(a)), np.max(np.abs(b)), 1e-8)


def small_agent(seed, sd=4, ad=2, hidden=(6, 5)):
    cfg = DdpgConfig(hidden=hidden, batch_size=8, final_init=0.3)
    agent = DdpgAgent(sd, ad, cfg, seed=seed)
    rng = np.random.default_rng(seed)
    # Move running stats away from their (0, 1) start so eval mode is exercised.
    for net in (agent.actor, agent.critic):
        net.flat_stats[:] = rng.uniform(0.2, 1.5, net.flat_stats.size)
    return agent, rng


@pytest.mark.parametrize("seed", range(4))
def test_critic_loss_gradient(seed):
    agent, rng = small_agent(seed)
    s, a, y = rng.normal(size=(8, 4)), rng.random((8, 2)), rng.normal(size=8)
    _, grads = agent.critic_loss_and_grads(s, a, y, update_stats=False)
    fd = finite_difference(lambda: agent.critic_loss_and_grads(s, a, y, update_stats=False)[0],
                           agent.critic.flat_params)
    assert rel_error(grads.flat, fd) < 1e-6


@pytest.mark.parametrize("seed", range(4))
def test_actor_objective_gradient(seed):
    agent, rng = small_agent(seed)
    s = rng.normal(size=(8, 4))
    _, grads = agent.actor_objective_and_grads(s, update_stats=False)
    fd = finite_difference(lambda: agent.actor_objective_and_grads(s, update_stats=False)[0],
                           agent.actor.flat_params)
    assert rel_error(grads.flat, fd) < 1e-6


def test_input_gradient_without_batch_norm():
    rng = np.random.default_rng(0)
    net = Mlp(3, 2, hidden=(5,), batch_norm=False, rng=rng, final_init=0.5, output="sigmoid")
    x = rng.normal(size=(4, 3))
    w = rng.normal(size=(4, 2))
    net.forward(x)
    _, dx = net.backward(w)
    fd = finite_difference(lambda: float((net.forward(x) * w).sum()), x.reshape(-1))
    assert rel_error(dx.ravel(), fd) < 1e-6


def test_batch_norm_running_stats():
    rng = np.random.default_rng(1)
    net = Mlp(2, 1, hidden=(3,), rng=rng)
    x = rng.normal(size=(10, 2))
    z = x @ net.params["W0"] + net.params["b0"]
    net.forward(x, train=True)
    np.testing.assert_allclose(net.stats["mean0"], 0.1 * z.mean(axis=0))
    np.testing.assert_allclose(net.stats["var0"], 0.9 + 0.1 * z.var(axis=0, ddof=1))
    before = net.flat_stats.copy()
    net.forward(x, train=True, update_stats=False)
    net.forward(x[:1], train=False)
    np.testing.assert_array_equal(net.flat_stats, before)


def test_train_mode_normalizes_the_batch():
    rng = np.random.default_rng(2)
    net = Mlp(3, 1, hidden=(4,), rng=rng)
    x = rng.normal(size=(50, 3))
    net.forward(x, train=True)
    h = net._cache["h0"]
    np.testing.assert_allclose(h.mean(axis=0), 0, atol=1e-12)
    np.testing.assert_allclose(h.var(axis=0), 1, atol=1e-3)


def test_initialization_ranges():
    net = Mlp(10, 3, hidden=(64, 64), rng=np.random.default_rng(0), output="sigmoid")
    assert np.abs(net.params["W0"]).max() <= 1 / np.sqrt(10)
    assert np.abs(net.params["W1"]).max() <= 1 / 8
    assert np.abs(net.params["W2"]).max() <= 3e-3
    y = net.forward(np.random.default_rng(1).normal(size=(5, 10)))
    np.testing.assert_allclose(y, 0.5, atol=0.01)


def test_adam_step_matches_reference():
    p = np.array([1.0, -2.0, 0.5])
    g = np.array([0.1, -0.3, 0.0])
    opt = Adam(p, lr=0.01)
    opt.step(p, g)
    m = 0.1 * g
    v = 0.001 * g * g
    expected = np.array([1.0, -2.0, 0.5]) - 0.01 * (m / 0.1) / (np.sqrt(v / 0.001) + 1e-8)
    # Textbook bias-corrected form; the implementation folds the correction
    # into the step size, which only moves where epsilon enters.
    np.testing.assert_allclose(p, expected, rtol=1e-6)


def test_blend_covers_weights_and_stats():
    a = Mlp(2, 1, hidden=(3,), rng=np.random.default_rng(0))
    b = a.copy()
    b.flat_params += 1.0
    b.flat_stats += 2.0
    before_p, before_s = a.flat_params.copy(), a.flat_stats.copy()
    a.blend_from(b, 0.75)
    np.testing.assert_allclose(a.flat_params, before_p + 0.25)
    np.testing.assert_allclose(a.flat_stats, before_s + 0.5)
    assert a.params["W0"].base is a.flat_params or np.shares_memory(a.params["W0"], a.flat_params)


def test_replay_buffer_grows_and_wraps():
    buf = ReplayBuffer(3000, 2, 1)
    for i in range(2500):
        buf.add([i, i], [0.5], float(i), [i + 1, i + 1], 0.0)
    assert len(buf) == 2500 and len(buf.r) == 3000  # growth capped at capacity
    np.testing.assert_array_equal(buf.r[:2500], np.arange(2500))
    small = ReplayBuffer(4, 1, 1)
    for i in range(6):
        small.add([i], [0], float(i), [i], 0.0)
    assert len(small) == 4 and sorted(small.r) == [2.0, 3.0, 4.0, 5.0]
    with pytest.raises(ValueError):
        ReplayBuffer(10, 1, 1).sample(np.random.default_rng(0), 5)


def test_act_adds_clipped_noise():
    agent = DdpgAgent(3, 2, DdpgConfig(hidden=(8, 8), noise_var=4.0), seed=0)
    s = np.zeros(3)
    clean = agent.act(s)
    assert np.all((clean > 0) & (clean < 1))
    noisy = np.array([agent.act(s, explore=True) for _ in range(200)])
    assert noisy.min() == 0.0 and noisy.max() == 1.0
    np.testing.assert_array_equal(agent.act(s), clean)


def test_noise_schedule():
    var = noise_schedule(0.01, 10, 4)
    assert [var(e) for e in range(6)] == [0.01] * 6
    np.testing.assert_allclose([var(e) for e in range(6, 10)], [0.0075, 0.005, 0.0025, 0.0])
    assert noise_schedule(0.01, 10, 0)(9) == 0.01


def test_learning_waits_for_a_full_batch():
    agent = DdpgAgent(2, 1, DdpgConfig(hidden=(4, 4), batch_size=5), seed=0)
    before = agent.actor.flat_params.copy()
    for i in range(4):
        agent.remember(Transition(np.ones(2), np.ones(1), np.ones(2), 1.0, False))
        assert agent.learn() is None
    np.testing.assert_array_equal(agent.actor.flat_params, before)
    agent.remember(Transition(np.ones(2), np.ones(1), np.ones(2), 1.0, False))
    assert agent.learn() is not None
    assert agent.updates == 1


def test_actor_moves_towards_higher_value():
    # Critic that prefers larger actions: Q(s, a) = a. The actor output must grow.
    agent = DdpgAgent(2, 1, DdpgConfig(hidden=(8, 8), actor_lr=1e-2), seed=3)
    c = agent.critic
    c.flat_params[:] = 0.0
    c.params["gamma0"][:] = 1.0
    c.params["gamma1"][:] = 1.0
    c.params["W0"][2, 0] = 1.0
    c.params["b0"][0] = 5.0
    c.params["W1"][0, 0] = 1.0
    c.params["b1"][0] = 5.0
    c.params["W2"][0, 0] = 1.0
    states = np.random.default_rng(0).normal(size=(16, 2))
    start = agent.actor.forward(states).mean()
    for _ in range(50):
        agent.actor_update((states,))
    assert agent.actor.forward(states).mean() > start + 0.1


def _env_factory(cfg, n):
    def make(ep):
        env = SarlEnv(cfg)
        env.reset(generate_trace(cfg, num_requests=n, rng=np.random.default_rng([7, ep])))
        return env
    return make


def test_train_and_evaluate_bookkeeping(tmp_path):
    cfg = ScenarioConfig(num_files=2, num_sbs=2, num_updates=1, aggregate_rate=4.0, cache_capacity=1.0)
    agent = DdpgAgent(6, 2, DdpgConfig(hidden=(16, 16), batch_size=16), seed=0)
    before = agent.actor.flat_params.copy()
    assert train(agent, _env_factory(cfg, 40), 0) == []
    np.testing.assert_array_equal(agent.actor.flat_params, before)

    log = train(agent, _env_factory(cfg, 40), 3, schedule=noise_schedule(0.01, 3, 2))
    assert len(log) == 3
    assert [r.noise_var for r in log] == pytest.approx([0.01, 0.005, 0.0])
    assert agent.updates > 0

    snap = [n.flat_params.copy() for n in (agent.actor, agent.critic)]
    stats = [n.flat_stats.copy() for n in (agent.actor, agent.critic)]
    ev = evaluate(agent, _env_factory(cfg, 100), 2)
    assert len(ev) == 2 and all(r.noise_var == 0.0 for r in ev)
    for net, p, s in zip((agent.actor, agent.critic), snap, stats):
        np.testing.assert_array_equal(net.flat_params, p)
        np.testing.assert_array_equal(net.flat_stats, s)

    write_training_log(log, tmp_path / "log.csv")
    lines = (tmp_path / "log.csv").read_text().splitlines()
    assert lines[0] == "episode,return,L_over_omega,noise_var" and len(lines) == 4


def test_non_finite_parameters_abort_training():
    cfg = ScenarioConfig(num_files=2, num_sbs=2, num_updates=1, aggregate_rate=4.0, cache_capacity=1.0)
    agent = DdpgAgent(6, 2, DdpgConfig(hidden=(4, 4), batch_size=4), seed=0)
    agent.critic.flat_params[0] = np.nan
    with pytest.raises(FloatingPointError):
        train(agent, _env_factory(cfg, 40), 1)


def test_checkpoint_round_trip(tmp_path):
    cfg = ScenarioConfig(num_files=2, num_sbs=2, num_updates=1, aggregate_rate=4.0, cache_capacity=1.0)
    agent = DdpgAgent(6, 2, DdpgConfig(hidden=(8, 8), batch_size=8), seed=5)
    train(agent, _env_factory(cfg, 30), 2)
    path = tmp_path / "agent.npz"
    agent.save(path)
    back = DdpgAgent.load(path)
    for name in ("actor", "critic", "target_actor", "target_critic"):
        np.testing.assert_array_equal(getattr(back, name).flat_params, getattr(agent, name).flat_params)
        np.testing.assert_array_equal(getattr(back, name).flat_stats, getattr(agent, name).flat_stats)
    for name in ("actor_opt", "critic_opt"):
        a, b = getattr(agent, name), getattr(back, name)
        np.testing.assert_array_equal(a.m, b.m)
        np.testing.assert_array_equal(a.v, b.v)
        assert a.t == b.t
    assert back.config == agent.config and back.updates == agent.updates
    s = np.random.default_rng(0).random(6)
    np.testing.assert_array_equal(back.act(s), agent.act(s))
    assert CHECKPOINT_VERSION == 1


def test_config_dict_round_trip():
    cfg = DdpgConfig(hidden=(32, 16), polyak=0.99)
    assert DdpgConfig.from_dict(cfg.to_dict()) == cfg
