import numpy as np
import pytest
import torch
from scipy import stats

from convrec.embeddings import init_embeddings
from convrec.policy import (ACTION_ATTR, ACTION_ITEM, ActionSpace, AgentConfig,
                            Ask, DqnAgent, PrioritizedReplay, QNetwork,
                            Recommend, ScoredAction, Transition,
                            infer_system_action, prune_actions, q_values,
                            select_training_action, td_target)
from convrec.simulator import new_session, respond_to_question
from convrec.soft_estimation import PreferenceDistribution, UseConfig


def dist(scores, entity_class="item"):
    return PreferenceDistribution(entity_class, dict(scores), 0)


def item(entity, q):
    return ScoredAction(ACTION_ITEM, entity, q)


def attr(entity, q, attr_type):
    return ScoredAction(ACTION_ATTR, entity, q, attr_type=attr_type)


class TestPrune:
    def test_undersized_input_returns_all_sorted(self):
        space = prune_actions(dist({3: 0.2, 1: 0.9, 2: 0.5}), dist({7: 0.1}), n=10)
        assert space.v_top == (1, 2, 3)
        assert space.p_top == (7,)

    def test_tie_break_by_ascending_id(self):
        space = prune_actions(dist({2: 0.9, 1: 0.9, 3: 0.1}), dist({}), n=2)
        assert space.v_top == (1, 2)

    def test_matches_sort_oracle_on_random_distributions(self):
        rng = np.random.default_rng(0)
        for _ in range(100):
            n_entities = int(rng.integers(1, 40))
            scores = {int(i): float(np.round(rng.uniform(0, 1), 2))
                      for i in rng.choice(1000, size=n_entities, replace=False)}
            n = int(rng.integers(1, 15))
            space = prune_actions(dist(scores), dist(scores, "attribute"), n=n)
            oracle = tuple(i for i, _ in
                           sorted(scores.items(), key=lambda kv: (-kv[1], kv[0]))[:n])
            assert space.v_top == oracle
            assert space.p_top == oracle

    def test_oversized_space_rejected(self):
        with pytest.raises(ValueError):
            ActionSpace(v_top=(1, 2, 3), p_top=(), n=2)


class TestDuelingComposition:
    def test_mean_centering_identity(self):
        q = QNetwork.compose(torch.tensor([[1.0]]), torch.tensor([[1.0, 2.0, 3.0]]))
        assert torch.allclose(q, torch.tensor([[0.0, 1.0, 2.0]]))

    def test_constant_advantages_give_value(self):
        q = QNetwork.compose(torch.tensor([[2.5]]), torch.full((1, 4), 7.0))
        assert torch.allclose(q, torch.full((1, 4), 2.5))

    def test_q_minus_value_centers_to_zero(self):
        torch.manual_seed(0)
        net = QNetwork(state_dim=6, action_dim=6, hidden=8)
        state = torch.randn(1, 6)
        actions = torch.randn(1, 5, 6)
        q = net(state, actions)
        value = net.value(state)
        assert abs((q - value).mean().item()) < 1e-6

    def test_q_values_helper_shape(self):
        torch.manual_seed(1)
        net = QNetwork(state_dim=6, action_dim=6, hidden=8)
        out = q_values(torch.randn(6), torch.randn(4, 6), net)
        assert out.shape == (4,)
        assert np.isfinite(out).all()

    def test_empty_action_space_rejected(self):
        net = QNetwork(state_dim=6, action_dim=6, hidden=8)
        with pytest.raises(ValueError):
            q_values(torch.randn(6), torch.zeros(0, 6), net)


class TestSelectTrainingAction:
    ACTIONS = [item(3, 0.5), item(1, 0.9), attr(2, 0.7, 0)]

    def test_greedy_takes_argmax(self):
        rng = np.random.default_rng(0)
        for _ in range(20):
            assert select_training_action(self.ACTIONS, 0.0, rng).entity == 1

    def test_tie_goes_to_lowest_id(self):
        actions = [item(5, 0.9), item(2, 0.9), item(7, 0.1)]
        chosen = select_training_action(actions, 0.0, np.random.default_rng(0))
        assert chosen.entity == 2

    def test_epsilon_one_uniform_chi_square(self):
        rng = np.random.default_rng(42)
        counts = np.zeros(len(self.ACTIONS))
        n = 10_000
        for _ in range(n):
            chosen = select_training_action(self.ACTIONS, 1.0, rng)
            counts[self.ACTIONS.index(chosen)] += 1
        assert stats.chisquare(counts).pvalue > 0.01

    def test_invalid_epsilon(self):
        with pytest.raises(ValueError):
            select_training_action(self.ACTIONS, 1.5, np.random.default_rng(0))


class TestInferSystemAction:
    def test_item_argmax_recommends_whole_pruned_list(self):
        actions = [item(4, 0.2), item(9, 0.8), attr(1, 0.5, 0)]
        decided = infer_system_action(actions, k=2)
        assert decided == Recommend(items=(9, 4))

    def test_sum_based_type_selection_hand_example(self):
        # p1 (type A) has the single highest attribute Q, but type B's Q sum
        # wins: 0.3 + 0.3 > 0.5. Ask B with its top-2 attributes.
        actions = [item(0, 0.1),
                   attr(1, 0.5, 10), attr(2, 0.3, 11), attr(3, 0.3, 11)]
        decided = infer_system_action(actions, k=2)
        assert decided == Ask(type_id=11, attrs=(2, 3))

    def test_single_attribute_truncates_k(self):
        actions = [item(0, 0.1), attr(5, 0.9, 3)]
        decided = infer_system_action(actions, k=2)
        assert decided == Ask(type_id=3, attrs=(5,))

    def test_type_sum_tie_goes_to_lowest_type_id(self):
        actions = [attr(1, 0.4, 7), attr(2, 0.4, 5)]
        decided = infer_system_action(actions, k=1)
        assert decided.type_id == 5

    def test_scale_covariance(self):
        actions = [item(0, 0.1), attr(1, 0.5, 10), attr(2, 0.3, 11), attr(3, 0.3, 11)]
        for c in (0.5, 2.0, 10.0):
            scaled = [ScoredAction(a.kind, a.entity, c * a.q, a.attr_type)
                      for a in actions]
            assert infer_system_action(scaled, k=2) == infer_system_action(actions, k=2)


class TestTdTarget:
    def test_terminal_uses_reward(self):
        assert td_target(1.0, True, 5.0, 0.99) == 1.0

    def test_hand_arithmetic(self):
        assert td_target(-0.1, False, 0.5, 0.99) == pytest.approx(0.395)

    def test_zero_discount_returns_rewards(self):
        for r in (-0.3, 0.0, 1.0):
            assert td_target(r, False, 123.0, 0.0) == r


def make_transition(i):
    return Transition(state=None, action_kind=ACTION_ITEM, action_entity=i,
                      action_node=0, space_nodes=np.array([0]), reward=0.0,
                      done=True)


class TestPrioritizedReplay:
    def test_ring_eviction(self):
        buffer = PrioritizedReplay(capacity=2, seed=0)
        for i in range(3):
            buffer.push(make_transition(i))
        entities = {t.action_entity for t in buffer._data}
        assert entities == {1, 2}

    def test_equal_priorities_sample_uniformly(self):
        buffer = PrioritizedReplay(capacity=4, alpha=1.0, seed=1)
        for i in range(4):
            buffer.push(make_transition(i), priority=1.0)
        idx, _, _ = buffer.sample(10_000, beta=1.0)
        counts = np.bincount(idx, minlength=4)
        assert stats.chisquare(counts).pvalue > 0.01

    def test_priority_ratio_three_to_one(self):
        buffer = PrioritizedReplay(capacity=2, alpha=1.0, seed=2)
        buffer.push(make_transition(0), priority=3.0)
        buffer.push(make_transition(1), priority=1.0)
        idx, _, _ = buffer.sample(10_000, beta=0.0)
        counts = np.bincount(idx, minlength=2)
        ratio = counts[0] / counts[1]
        assert abs(ratio - 3.0) <= 0.05 * 3.0
        assert stats.chisquare(counts, f_exp=[7500, 2500]).pvalue > 0.01

    def test_importance_weights_balance_bias(self):
        buffer = PrioritizedReplay(capacity=2, alpha=1.0, seed=3)
        buffer.push(make_transition(0), priority=4.0)
        buffer.push(make_transition(1), priority=1.0)
        idx, _, weights = buffer.sample(1000, beta=1.0)
        # Rare transitions get proportionally larger weights, normalized to max 1.
        assert weights.max() == pytest.approx(1.0)
        w0 = weights[idx == 0]
        w1 = weights[idx == 1]
        assert w0.size and w1.size
        assert np.allclose(w0, 0.25) and np.allclose(w1, 1.0)

    def test_update_priorities_with_floor(self):
        buffer = PrioritizedReplay(capacity=2, seed=4, priority_floor=1e-5)
        buffer.push(make_transition(0))
        buffer.update_priorities([0], [0.0])
        assert buffer._priorities[0] == pytest.approx(1e-5)

    def test_empty_sample_rejected(self):
        with pytest.raises(ValueError):
            PrioritizedReplay(capacity=2, seed=0).sample(1, beta=0.4)

    def test_invalid_priority_rejected(self):
        buffer = PrioritizedReplay(capacity=2, seed=0)
        with pytest.raises(ValueError):
            buffer.push(make_transition(0), priority=0.0)


class TestTdLossGradients:
    def test_td_loss_gradients_match_finite_differences(self):
        # Seed chosen so no ReLU preactivation or Huber kink sits within the
        # finite-difference step; central differences are only valid off-kink.
        torch.manual_seed(0)
        net = QNetwork(state_dim=5, action_dim=5, hidden=6, dtype=torch.float64)
        states = torch.randn(3, 5, dtype=torch.float64)
        actions = torch.randn(3, 4, 5, dtype=torch.float64)
        taken = torch.tensor([0, 2, 1])
        targets = torch.tensor([0.4, -0.2, 0.9], dtype=torch.float64)
        weights = torch.tensor([1.0, 0.5, 0.8], dtype=torch.float64)

        def loss_value():
            q = net(states, actions).gather(1, taken.unsqueeze(1)).squeeze(1)
            per = torch.nn.functional.huber_loss(q, targets, reduction="none")
            return (weights * per).mean()

        loss = loss_value()
        loss.backward()
        h = 1e-3
        for name, param in net.named_parameters():
            grad = param.grad.detach().clone().view(-1)
            flat = param.data.view(-1)
            for idx in range(flat.numel()):
                original = flat[idx].item()
                flat[idx] = original + h
                up = loss_value().item()
                flat[idx] = original - h
                down = loss_value().item()
                flat[idx] = original
                fd = (up - down) / (2 * h)
                ad = grad[idx].item()
                assert abs(ad - fd) <= 1e-4 * max(1.0, abs(ad), abs(fd)), \
                    f"{name}[{idx}]: {ad} vs {fd}"


@pytest.fixture
def mini_agent(mini_catalog):
    table = init_embeddings(mini_catalog, dim=8, seed=0)
    cfg = AgentConfig(n_top=3, k_ask=2, batch_size=4, buffer_capacity=50,
                      sample_cap=3, embed_dim=8, hidden=12, seed=0)
    return DqnAgent(mini_catalog, table, UseConfig(), cfg)


class TestAgent:
    def test_pruned_actions_stay_inside_candidates(self, mini_catalog, mini_agent):
        session = new_session(mini_catalog, 0, (0, 1), vague_ratio=0.5, seed=1)
        for _ in range(4):
            if session.done:
                break
            ctx = mini_agent.perceive(session)
            assert len(ctx.actions) <= 2 * mini_agent.cfg.n_top
            for action in ctx.actions:
                if action.kind == ACTION_ITEM:
                    assert action.entity in session.v_cand
                else:
                    assert action.entity in session.p_cand
                    assert action.entity not in session.displayed_attrs
            chosen = select_training_action(ctx.actions, 0.5, mini_agent.rng)
            decided = mini_agent.system_action(ctx, chosen)
            from convrec.harness import apply_action
            apply_action(session, decided)

    def test_greedy_decide_is_deterministic(self, mini_catalog, mini_agent):
        first = mini_agent.decide(new_session(mini_catalog, 0, (0, 1), seed=1))
        second = mini_agent.decide(new_session(mini_catalog, 0, (0, 1), seed=1))
        assert first == second

    def test_learn_requires_full_batch(self, mini_agent):
        assert mini_agent.learn(beta=0.4) is None

    def test_training_step_runs_and_updates(self, mini_catalog, mini_agent):
        session = new_session(mini_catalog, 0, (0, 1), vague_ratio=0.5, seed=2)
        mini_agent.start_episode()
        while session.running():
            ctx = mini_agent.perceive(session)
            chosen = select_training_action(ctx.actions, 1.0, mini_agent.rng)
            decided = mini_agent.system_action(ctx, chosen)
            from convrec.harness import apply_action
            reward = apply_action(session, decided)
            mini_agent.step_transition(ctx, chosen, reward, session.done)
        assert len(mini_agent.buffer) >= 1
        before = [p.detach().clone() for p in mini_agent.qnet.parameters()]
        while len(mini_agent.buffer) < mini_agent.cfg.batch_size:
            mini_agent.buffer.push(mini_agent.buffer._data[0])
        loss = mini_agent.learn(beta=0.4)
        assert loss is not None and np.isfinite(loss)
        after = list(mini_agent.qnet.parameters())
        assert any(not torch.equal(b, a) for b, a in zip(before, after))

    def test_checkpoint_roundtrip_preserves_decisions(self, mini_catalog, mini_agent,
                                                      tmp_path):
        path = tmp_path / "agent.pt"
        mini_agent.save(path)
        table = init_embeddings(mini_catalog, dim=8, seed=0)
        loaded = DqnAgent.load(path, mini_catalog, table)
        session_a = new_session(mini_catalog, 0, (0, 1), seed=3)
        session_b = new_session(mini_catalog, 0, (0, 1), seed=3)
        assert mini_agent.decide(session_a) == loaded.decide(session_b)

    def test_epsilon_schedule(self, mini_agent):
        assert mini_agent.epsilon(0, 100) == pytest.approx(1.0)
        assert mini_agent.epsilon(20, 100) == pytest.approx(0.01)
        assert mini_agent.epsilon(99, 100) == pytest.approx(0.01)

    def test_beta_schedule(self, mini_agent):
        assert mini_agent.beta(0, 100) == pytest.approx(0.4)
        assert mini_agent.beta(100, 100) == pytest.approx(1.0)
