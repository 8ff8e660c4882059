import json
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import stats

from dsacc.agent import (
    AgentConfig,
    Aggregation,
    ReplayBuffer,
    TargetSource,
    TemperatureState,
    Variant,
    actor_loss,
    critic_loss,
    critic_targets,
    entropy,
    evaluate,
    soft_state_value,
    temperature_objective,
    temperature_update,
    train,
)
from dsacc.agent.buffer import Batch
from dsacc.agent.losses import policy_terms
from dsacc.agent.trainer import Agent
from dsacc.envs import ChainMDP, TabularEnv, TabularMDP
from dsacc.errors import UsageError
from dsacc.maxent import ConstraintTarget, QVector, solve_lambda
from dsacc.nets import Network, NetworkSpec

from oracles import central_difference, mp_softmax

LN2 = math.log(2)


def uniform_terms(n_rows, n_actions):
    return policy_terms(np.zeros((n_rows, n_actions)))


class TestSoftStateValue:
    def test_pure_entropy(self):
        p, lp = uniform_terms(1, 4)
        v = soft_state_value(p, lp, np.zeros((1, 4)), np.zeros((1, 4)), 1.0)
        assert v[0] == pytest.approx(math.log(4), abs=1e-15)

    def test_point_mass(self):
        p, lp = policy_terms(np.array([[0.0, -1e9]]))
        assert p[0, 1] == 0.0
        for alpha in (0.1, 1.0, 50.0):
            v = soft_state_value(p, lp, np.array([[5.0, 0.0]]), np.array([[5.0, 0.0]]), alpha)
            assert v[0] == 5.0

    @pytest.mark.parametrize("alpha", [0.3, 1.0, 2.0])
    def test_aggregations(self, alpha):
        p, lp = uniform_terms(1, 2)
        q1, q2 = np.array([[1.0, 3.0]]), np.array([[3.0, 1.0]])
        avg = soft_state_value(p, lp, q1, q2, alpha, Aggregation.AVG)[0]
        low = soft_state_value(p, lp, q1, q2, alpha, "min")[0]
        assert avg == pytest.approx(2 + alpha * LN2, abs=1e-14)
        assert low == pytest.approx(1 + alpha * LN2, abs=1e-14)

    def test_bad_alpha(self):
        p, lp = uniform_terms(1, 2)
        with pytest.raises(UsageError):
            soft_state_value(p, lp, np.zeros((1, 2)), np.zeros((1, 2)), 0.0)


class TestCriticTargets:
    def test_terminal(self):
        assert critic_targets([1.0], [True], [123.0], 0.99)[0] == 1.0

    def test_gamma_zero(self):
        np.testing.assert_array_equal(critic_targets([0.2, -1.0], [0, 0], [5.0, 7.0], 0.0), [0.2, -1.0])

    def test_arithmetic(self):
        assert critic_targets([0.5], [False], [2.0], 0.99)[0] == pytest.approx(2.48, abs=1e-15)


class TestCriticLoss:
    def test_exact_fit(self):
        q = np.array([[1.0, 2.0], [3.0, 4.0]])
        loss, grads = critic_loss([q, q], [1, 0], [2.0, 3.0])
        assert loss == 0.0
        assert all(np.all(g == 0) for g in grads)

    def test_single_quadratic(self):
        loss, (g,) = critic_loss([np.array([[2.0, 9.0]])], [0], [0.0])
        assert loss == 4.0
        np.testing.assert_array_equal(g, [[4.0, 0.0]])

    def test_two_critics_average(self):
        loss, (g1, g2) = critic_loss([np.array([[2.0]]), np.array([[0.0]])], [0], [1.0])
        assert loss == 1.0
        assert g1[0, 0] == 1.0 and g2[0, 0] == -1.0

    def test_tabular_td_update(self):
        # linear critic on one-hot states: Q(s, a) = W[s, a] + b[a]
        net = Network(NetworkSpec(2, 2, (), seed=0))
        s = np.array([[1.0, 0.0]])
        q0 = net.forward(s)[0, 1]
        y = 0.7
        _, (g,) = critic_loss([net.forward(s)], [1], [y])
        # d Q / d params has two unit entries, so an SGD step of 1/4 is the lr = 1 TD analog
        net.params[:] -= 0.25 * net.backward(s, g)
        hand = q0 + 1.0 * (y - q0)
        assert net.forward(s)[0, 1] == pytest.approx(hand, abs=1e-14)
        assert net.forward(s)[0, 1] == pytest.approx(y, abs=1e-14)


class TestActorLoss:
    def test_kl_minimum(self):
        rng = np.random.default_rng(0)
        q = rng.normal(size=(5, 4)) * 3
        alpha = 0.7
        res = actor_loss(q / alpha, q, alpha, Variant.DSAC)
        np.testing.assert_allclose(res.grad_logits, 0.0, atol=1e-8)

        def f(z):
            return actor_loss(z.reshape(5, 4), q, alpha).loss

        np.testing.assert_allclose(central_difference(f, (q / alpha).ravel(), 1e-5), 0.0, atol=1e-8)

    def test_base_loss_value(self):
        res = actor_loss(np.zeros((1, 2)), np.array([[1.0, 2.0]]), 1.0, Variant.DSAC)
        assert res.loss == pytest.approx(-LN2 - 1.5, abs=1e-14)

    @pytest.mark.parametrize("variant", [Variant.DSAC_M, Variant.DSAC_V])
    def test_constraint_vanishes_at_surrogate(self, variant):
        rng = np.random.default_rng(1)
        q = rng.normal(size=(8, 3)) * 2
        alpha = 0.5
        base = actor_loss(q / alpha, q, alpha, Variant.DSAC)
        con = actor_loss(q / alpha, q, alpha, variant)
        np.testing.assert_allclose(con.lam, 0.0, atol=1e-8)
        assert con.loss == pytest.approx(base.loss, abs=1e-8)

    def test_mean_uniform_actor_scalar_oracle(self):
        q = np.array([[1.0, 2.0]])
        res = actor_loss(np.zeros((1, 2)), q, 1.0, Variant.DSAC_M)
        mu = 1 + math.e / (1 + math.e)
        lam = solve_lambda(QVector([1.0, 2.0]), ConstraintTarget.mean(mu)).lam
        oracle = 0.5 * (math.log(0.5) - 1) + 0.5 * (math.log(0.5) - 2) + lam * (1.5 - mu)
        assert res.lam[0] == lam
        assert res.loss == pytest.approx(oracle, abs=1e-14)
        assert res.mean_gap[0] == pytest.approx(abs(1.5 - 1.7311), abs=1e-4)

    def test_mean_with_distinct_targets_scalar_oracle(self):
        q = np.array([[1.0, 2.0]])
        # target mean between the uniform (1.5) and surrogate (~1.73) means
        tq = np.array([[1.0, 1.8]])
        res = actor_loss(np.zeros((1, 2)), q, 1.0, Variant.DSAC_M, target_q=tq)
        p_t = mp_softmax([1.0, 1.8])
        mu = p_t[0] * 1.0 + p_t[1] * 1.8
        sol = solve_lambda(QVector([1.0, 2.0]), ConstraintTarget.mean(mu))
        assert 0 < sol.lam < 1
        oracle = (math.log(0.5) - 1.5) + sol.lam * (1.5 - mu)
        assert res.lam[0] == pytest.approx(sol.lam, abs=1e-15)
        assert res.loss == pytest.approx(oracle, abs=1e-13)

    def test_variance_scalar_oracle(self):
        q = np.array([[0.0, 1.0, 3.0]])
        logits = np.array([[0.2, -0.3, 0.1]])
        alpha = 1.0
        res = actor_loss(logits, q, alpha, Variant.DSAC_V)
        pi = np.array(mp_softmax(logits[0]))
        center = float(pi @ q[0])
        sur = np.array(mp_softmax(q[0]))
        mu_s = float(sur @ q[0])
        var_s = float(sur @ (q[0] - mu_s) ** 2)
        lam = solve_lambda(QVector(q[0], alpha), ConstraintTarget.variance(var_s, center)).lam
        oracle = float(pi @ (alpha * np.log(pi) - q[0])) + lam * (float(pi @ (q[0] - center) ** 2) - var_s)
        assert res.lam[0] == pytest.approx(lam, abs=1e-12)
        assert res.loss == pytest.approx(oracle, abs=1e-12)

    @pytest.mark.parametrize("variant", list(Variant))
    def test_logit_gradient_finite_difference(self, variant):
        rng = np.random.default_rng(4)
        q = rng.normal(size=(6, 5)) * 2
        tq = q + rng.normal(size=q.shape) * 0.5
        logits = rng.normal(size=(6, 5))
        base = actor_loss(logits, q, 0.8, variant, target_q=tq)
        lam = base.lam if base.lam is not None else None
        center = base.expected_q

        def f(z):
            return actor_loss(z.reshape(6, 5), q, 0.8, variant, target_q=tq, lam=lam, center=center).loss

        num = central_difference(f, logits.ravel(), 1e-6)
        np.testing.assert_allclose(base.grad_logits.ravel(), num, rtol=1e-4, atol=1e-9)

    def test_entropy_bounds(self):
        rng = np.random.default_rng(5)
        for n in (2, 3, 7):
            p, lp = policy_terms(rng.normal(size=(50, n)) * rng.uniform(0, 100))
            h = entropy(p, lp)
            assert np.all(h >= -1e-15) and np.all(h <= math.log(n) + 1e-12)

    def test_shape_errors(self):
        with pytest.raises(UsageError):
            actor_loss(np.zeros((2, 3)), np.zeros((2, 2)), 1.0)


class TestTemperature:
    def test_create(self):
        t = TemperatureState.create(4, 1.0)
        assert t.alpha == 1.0
        assert t.target_entropy == pytest.approx(0.98 * math.log(4))

    def test_uniform_lowers_alpha(self):
        t = TemperatureState.create(4, 0.5)
        p, lp = uniform_terms(3, 4)
        assert temperature_objective(t.log_alpha, entropy(p, lp), t.target_entropy) > 0
        assert temperature_update(t, p, lp).alpha < t.alpha

    def test_deterministic_raises_alpha(self):
        t = TemperatureState.create(4, 0.5)
        p, lp = policy_terms(np.array([[0.0, -1e9, -1e9, -1e9]]))
        assert temperature_update(t, p, lp).alpha > t.alpha

    def test_on_target_unchanged(self):
        t = TemperatureState(0.3, float(entropy(*uniform_terms(1, 2))[0]))
        p, lp = uniform_terms(2, 2)
        assert temperature_update(t, p, lp).log_alpha == 0.3

    @settings(max_examples=200, deadline=None)
    @given(
        st.integers(2, 8),
        st.floats(-3, 3),
        st.lists(st.floats(-20, 20), min_size=8, max_size=8),
    )
    def test_sign_contract(self, n, log_alpha, raw):
        logits = np.array(raw[:n])[None, :]
        p, lp = policy_terms(logits)
        h = float(entropy(p, lp)[0])
        t = TemperatureState(log_alpha, 0.98 * math.log(n))
        new = temperature_update(t, p, lp)
        if h > t.target_entropy:
            assert new.alpha < t.alpha
        elif h < t.target_entropy:
            assert new.alpha > t.alpha

    def test_gradient_finite_difference(self):
        h = np.array([0.1, 0.9, 0.4])
        grad = temperature_objective(0.2, h, 0.5)  # d/dlog_alpha of alpha * c is alpha * c
        num = central_difference(lambda x: temperature_objective(x[0], h, 0.5), [0.2], 1e-6)[0]
        assert grad == pytest.approx(num, rel=1e-8)


class TestReplayBuffer:
    def test_fifo(self):
        buf = ReplayBuffer(3, 1, 2, seed=0)
        for i in range(5):
            buf.add([i], i % 2, float(i), [i + 1], False)
        assert len(buf) == 3
        assert sorted(buf.get(k).reward for k in range(3)) == [2.0, 3.0, 4.0]

    def test_growth_past_initial_allocation(self):
        buf = ReplayBuffer(5000, 2, seed=0)
        for i in range(3000):
            buf.add([i, -i], 0, 0.0, [0, 0], False)
        assert len(buf) == 3000
        assert buf.get(2999).state.tolist() == [2999.0, -2999.0]

    def test_sample_shape_and_reproducibility(self):
        def draw(seed):
            buf = ReplayBuffer(100, 2, 3, seed=seed)
            for i in range(50):
                buf.add([i, i], i % 3, 0.1 * i, [i + 1, i + 1], i % 7 == 0)
            return buf.sample(64)

        a, b = draw(1), draw(1)
        assert a.states.shape == (64, 2) and a.actions.shape == (64,)
        for x, y in zip(a, b):
            np.testing.assert_array_equal(x, y)
        assert not np.array_equal(draw(2).actions, a.actions)

    def test_uniformity(self):
        buf = ReplayBuffer(50, 1, seed=3)
        for i in range(50):
            buf.add([i], 0, 0.0, [0], False)
        idx = np.concatenate([buf.sample_indices(1000) for _ in range(100)])
        counts = np.bincount(idx, minlength=50)
        assert stats.chisquare(counts).pvalue > 0.001

    def test_validation(self):
        buf = ReplayBuffer(4, 1, 2)
        with pytest.raises(UsageError):
            buf.sample(1)
        with pytest.raises(UsageError):
            buf.add([0], 2, 0.0, [0], False)
        with pytest.raises(UsageError):
            buf.add([0], 0, float("nan"), [0], False)


def single_action_env():
    mdp = TabularMDP(np.ones((1, 1, 1)), [[0.25]])
    return TabularEnv(mdp, 8, seed=0)


class TestEvaluate:
    def test_single_action(self):
        actor = Network(NetworkSpec(1, 1, (4,), seed=0))
        res = evaluate(actor, single_action_env(), 3, "greedy", seed=0)
        assert res.returns == [2.0, 2.0, 2.0]
        assert res.std == 0.0

    def test_repeatable(self):
        actor = Network(NetworkSpec(10, 2, (8,), seed=1))
        a = evaluate(actor, ChainMDP(10, 0.1), 5, "greedy", seed=3)
        b = evaluate(actor, ChainMDP(10, 0.1), 5, "greedy", seed=3)
        assert a.returns == b.returns

    def test_greedy_tie_lowest_index(self):
        actor = Network(NetworkSpec(2, 3, (), seed=0))
        actor.set_params(np.zeros_like(actor.params))
        mdp = TabularMDP(np.ones((1, 3, 1)), [[1.0, 0.0, 0.0]], None)
        env = TabularEnv(mdp, 1, encode=lambda s: np.zeros(2))
        assert evaluate(actor, env, 2, "greedy", seed=0).mean == 1.0

    def test_greedy_beats_stochastic(self):
        actor = Network(NetworkSpec(10, 2, (), seed=0))
        actor.set_params(np.zeros_like(actor.params))
        actor.biases[0][...] = [0.0, 1.5]  # sharp-ish "go right" policy
        g = evaluate(actor, ChainMDP(10, 0.1), 100, "greedy", seed=0)
        s = evaluate(actor, ChainMDP(10, 0.1), 100, "stochastic", seed=0)
        stderr = s.std / math.sqrt(100)
        assert g.mean >= s.mean - 2 * stderr

    def test_bad_mode(self):
        with pytest.raises(UsageError):
            evaluate(Network(NetworkSpec(1, 1, ())), single_action_env(), 1, "boltzmann")


class TestConfig:
    def test_round_trip(self):
        cfg = AgentConfig(variant="dsac-v", hidden_layers=(32, 16), aggregation="min", seed=2**63 + 5)
        again = AgentConfig.from_text(cfg.to_text())
        assert again == cfg
        assert again.variant is Variant.DSAC_V and again.aggregation is Aggregation.MIN

    def test_unknown_key(self):
        with pytest.raises(UsageError, match="bogus"):
            AgentConfig.from_text("gamma = 0.9\nbogus = 1\n")

    def test_bad_values(self):
        for text in ("gamma = 1.5", "batch_size = 2.5", "variant = sac", "activation = tanh", "tau = x"):
            with pytest.raises(UsageError):
                AgentConfig.from_text(text)

    def test_defaults_follow_table(self):
        cfg = AgentConfig()
        assert (cfg.lr, cfg.batch_size, cfg.gamma, cfg.buffer_capacity) == (3e-4, 64, 0.99, 1_000_000)
        assert cfg.hidden_layers == (512, 512) and cfg.activation == "relu" and cfg.optimizer == "adam"
        assert (cfg.tau, cfg.entropy_discount) == (1.0, 0.98)
        assert cfg.aggregation is Aggregation.AVG and cfg.target_source is TargetSource.ONLINE

    def test_comments_and_scientific(self):
        cfg = AgentConfig.from_text("# run\nbuffer_capacity = 1e6  # table value\n\nseed = 7\n")
        assert cfg.seed == 7
        assert cfg.buffer_capacity == 1_000_000


def small_config(**kw):
    base = dict(env="chain:n=5,slip=0.1", hidden_layers=(16, 16), total_steps=600, warmup=200,
                batch_size=16, eval_interval=200, eval_episodes=2, target_update_period=50)
    base.update(kw)
    return AgentConfig(**base)


class TestAgentUpdate:
    def make(self, **kw):
        cfg = small_config(**kw)
        agent = Agent(cfg, 5, 2)
        rng = np.random.default_rng(0)
        eye = np.eye(5)
        s = eye[rng.integers(0, 5, 16)]
        batch = Batch(s, rng.integers(0, 2, 16), rng.normal(size=16), eye[rng.integers(0, 5, 16)],
                      (rng.random(16) < 0.2).astype(float))
        return agent, batch

    def test_target_perturbation_leaves_actor_path(self):
        agent, batch = self.make(variant="dsac-m")
        before, _ = agent.actor_terms(batch.states)
        p, lp = policy_terms(agent.actor.forward(batch.next_states))
        v0 = soft_state_value(p, lp, agent.target1.forward(batch.next_states),
                              agent.target2.forward(batch.next_states), agent.alpha)
        agent.target1.params[:] += 0.5
        agent.target2.params[:] -= 0.3
        v1 = soft_state_value(p, lp, agent.target1.forward(batch.next_states),
                              agent.target2.forward(batch.next_states), agent.alpha)
        y0 = critic_targets(batch.rewards, batch.dones, v0, 0.99)
        y1 = critic_targets(batch.rewards, batch.dones, v1, 0.99)
        assert not np.array_equal(y0, y1)
        after, _ = agent.actor_terms(batch.states)
        np.testing.assert_array_equal(before.grad_logits, after.grad_logits)
        assert before.loss == after.loss

    def test_critic_perturbation_changes_value_not_gradient_path(self):
        agent, batch = self.make(variant="dsac")
        base, cache = agent.actor_terms(batch.states)
        agent.critic1.params[:] += 0.1
        moved, _ = agent.actor_terms(batch.states)
        assert moved.loss != base.loss

        def f(theta):
            saved = agent.actor.params.copy()
            agent.actor.set_params(theta)
            loss = agent.actor_terms(batch.states)[0].loss
            agent.actor.set_params(saved)
            return loss

        analytic = agent.actor.backward(batch.states, moved.grad_logits)
        numeric = central_difference(f, agent.actor.params, 1e-6)
        mask = np.abs(analytic) > 1e-8
        np.testing.assert_allclose(analytic[mask], numeric[mask], rtol=1e-4)

    def test_lambda_range_and_finite(self):
        agent, batch = self.make(variant="dsac-v")
        for _ in range(20):
            d = agent.update(batch)
            assert np.all((d["lam"] >= 0) & (d["lam"] <= 1))
        assert all(np.all(np.isfinite(n.params)) for n in agent.networks().values())

    def test_mean_variant_is_inert_with_online_targets(self):
        # the surrogate mean of the online critics is met exactly at lambda1 = 0
        agent, batch = self.make(variant="dsac-m")
        res, _ = agent.actor_terms(batch.states)
        np.testing.assert_array_equal(res.lam, 0.0)
        base = actor_loss(agent.actor.forward(batch.states),
                          0.5 * (agent.critic1.forward(batch.states) + agent.critic2.forward(batch.states)),
                          agent.alpha, Variant.DSAC)
        np.testing.assert_array_equal(res.grad_logits, base.grad_logits)

    def test_target_copy_period(self):
        agent, batch = self.make(target_update_period=3)
        for k in range(1, 4):
            agent.update(batch)
            same = np.array_equal(agent.critic1.params, agent.target1.params)
            assert same == (k == 3)


class TestTrain:
    def test_no_learning_rollout(self):
        cfg = small_config(gradient_steps=0, warmup=0)
        res = train(cfg)
        assert res.agent.gradient_steps_done == 0
        assert res.records[-1]["entropy"] is None
        assert res.records[-1]["alpha"] == 1.0
        assert [r["step"] for r in res.records] == [200, 400, 600]

    def test_records_and_files(self, tmp_path):
        res = train(small_config(variant="dsac-m"), out_dir=tmp_path)
        lines = (tmp_path / "metrics.jsonl").read_text().splitlines()
        assert len(lines) == 3
        rec = json.loads(lines[-1])
        assert list(rec) == ["step", "variant", "seed", "eval_return_mean", "eval_return_std", "entropy",
                             "alpha", "lambda_mean", "ev_mean_gap", "ev_var_gap", "q_mean"]
        assert rec["step"] == 600 and rec["variant"] == "DSAC-M"
        csv_lines = (tmp_path / "metrics.csv").read_text().splitlines()
        assert csv_lines[0].split(",") == list(rec)
        assert len(csv_lines) == 4
        assert (tmp_path / "checkpoints" / "final.json").exists()
        assert 0.0 <= res.lambda_min <= res.lambda_max <= 1.0

    def test_deterministic(self, tmp_path):
        train(small_config(variant="dsac-v", seed=3), out_dir=tmp_path / "a")
        train(small_config(variant="dsac-v", seed=3), out_dir=tmp_path / "b")
        for name in ("metrics.jsonl", "metrics.csv"):
            assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()

    def test_seed_matters(self):
        a = train(small_config(seed=1)).records
        b = train(small_config(seed=2)).records
        assert a != b
