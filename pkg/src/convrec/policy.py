"""Decision policy: action pruning, dueling Q-network, prioritized replay, agent.

Each turn the agent scores candidate items and attributes with the soft
estimator, keeps the top-N of each class as the pruned action space, encodes
the conversation graph, and evaluates one Q-value per pruned action. The
executed system action is derived from the Q-values: an item argmax triggers a
recommendation of the whole pruned item list (Q-ranked); an attribute argmax
triggers a question whose type is chosen by summing attribute Q-values per
type and whose displayed attributes are the top-K of that type.

Training uses epsilon-greedy exploration over the pruned space, a prioritized
replay buffer, a soft-updated target network, and importance-weighted Huber
loss on the one-step TD error.
"""
from __future__ import annotations

import copy
from dataclasses import dataclass, field, replace
from typing import Optional, Sequence

import numpy as np
import torch
from torch import nn

from .catalog import Catalog
from .embeddings import EmbeddingTable
from .simulator import SessionState
from .soft_estimation import (PreferenceDistribution, UseConfig,
                              attribute_distribution, item_distribution)
from .state_encoder import (ConversationEncoder, DynamicGraph, KIND_ATTR,
                            KIND_ITEM, build_graph, normalized_adjacency)

CHECKPOINT_VERSION = 1

ACTION_ITEM = "item"
ACTION_ATTR = "attr"
_KIND_RANK = {ACTION_ITEM: 0, ACTION_ATTR: 1}


@dataclass(frozen=True)
class Ask:
    type_id: int
    attrs: tuple[int, ...]


@dataclass(frozen=True)
class Recommend:
    items: tuple[int, ...]


@dataclass(frozen=True)
class ScoredAction:
    kind: str  # ACTION_ITEM | ACTION_ATTR
    entity: int
    q: float
    attr_type: Optional[int] = None  # set for attribute actions


@dataclass(frozen=True)
class ActionSpace:
    """Pruned candidate actions: top-N items and top-N attributes by score."""

    v_top: tuple[int, ...]
    p_top: tuple[int, ...]
    n: int

    def __post_init__(self):
        if len(self.v_top) > self.n or len(self.p_top) > self.n:
            raise ValueError("pruned space exceeds N per class")


def prune_actions(item_dist: PreferenceDistribution,
                  attr_dist: PreferenceDistribution, n: int = 10) -> ActionSpace:
    """Exact top-N per class by score, ties broken by ascending id."""
    return ActionSpace(
        v_top=tuple(i for i, _ in item_dist.top(n)),
        p_top=tuple(p for p, _ in attr_dist.top(n)),
        n=n,
    )


class QNetwork(nn.Module):
    """Dueling head over (state, action-representation) pairs."""

    def __init__(self, state_dim: int = 100, action_dim: int = 100,
                 hidden: int = 100, dtype: torch.dtype = torch.float32):
        super().__init__()
        self.value = nn.Sequential(
            nn.Linear(state_dim, hidden, dtype=dtype), nn.ReLU(),
            nn.Linear(hidden, 1, dtype=dtype))
        self.advantage = nn.Sequential(
            nn.Linear(state_dim + action_dim, hidden, dtype=dtype), nn.ReLU(),
            nn.Linear(hidden, 1, dtype=dtype))

    @staticmethod
    def compose(value: torch.Tensor, advantages: torch.Tensor,
                mask: Optional[torch.Tensor] = None) -> torch.Tensor:
        """Q = V + A - mean(A) over the action set (mask selects valid slots)."""
        if mask is None:
            mean_adv = advantages.mean(dim=-1, keepdim=True)
        else:
            m = mask.to(advantages.dtype)
            mean_adv = (advantages * m).sum(-1, keepdim=True) / m.sum(-1, keepdim=True)
        return value + advantages - mean_adv

    def forward(self, state: torch.Tensor, action_reps: torch.Tensor,
                mask: Optional[torch.Tensor] = None) -> torch.Tensor:
        """Q-values for (B, A, action_dim) action sets given (B, state_dim) states."""
        n_actions = action_reps.shape[-2]
        value = self.value(state)  # (B, 1)
        expanded = state.unsqueeze(-2).expand(*state.shape[:-1], n_actions, state.shape[-1])
        adv = self.advantage(torch.cat([expanded, action_reps], dim=-1)).squeeze(-1)
        return self.compose(value, adv, mask)


def q_values(state: torch.Tensor, action_reps: torch.Tensor,
             network: QNetwork) -> np.ndarray:
    """Q-value per action for a single decision (state (S,), actions (A, D))."""
    if action_reps.shape[0] == 0:
        raise ValueError("action space is empty")
    with torch.no_grad():
        q = network(state.unsqueeze(0), action_reps.unsqueeze(0)).squeeze(0)
    return q.numpy().astype(np.float64)


def _best_action(actions: Sequence[ScoredAction]) -> ScoredAction:
    return max(actions, key=lambda a: (a.q, -_KIND_RANK[a.kind], -a.entity))


def select_training_action(actions: Sequence[ScoredAction], epsilon: float,
                           rng: np.random.Generator) -> ScoredAction:
    """Epsilon-greedy over the pruned space; greedy ties go to the lowest id."""
    if not actions:
        raise ValueError("action space is empty")
    if not 0.0 <= epsilon <= 1.0:
        raise ValueError("epsilon must be in [0, 1]")
    if rng.random() < epsilon:
        return actions[int(rng.integers(len(actions)))]
    return _best_action(actions)


def infer_system_action(actions: Sequence[ScoredAction], k: int = 2) -> Ask | Recommend:
    """Two-level action inference from Q-scored pruned actions.

    Item argmax: recommend every pruned item, highest Q first. Attribute
    argmax: sum attribute Q-values per type, question the max-sum type (tie:
    lowest type id) with its top-K attributes by Q.
    """
    if not actions:
        raise ValueError("action space is empty")
    best = _best_action(actions)
    items = [a for a in actions if a.kind == ACTION_ITEM]
    attrs = [a for a in actions if a.kind == ACTION_ATTR]
    if best.kind == ACTION_ITEM:
        ranked = sorted(items, key=lambda a: (-a.q, a.entity))
        return Recommend(items=tuple(a.entity for a in ranked))

    sums: dict[int, float] = {}
    for a in attrs:
        sums[a.attr_type] = sums.get(a.attr_type, 0.0) + a.q
    best_type = min(sums.items(), key=lambda kv: (-kv[1], kv[0]))[0]
    of_type = sorted((a for a in attrs if a.attr_type == best_type),
                     key=lambda a: (-a.q, a.entity))
    return Ask(type_id=best_type, attrs=tuple(a.entity for a in of_type[:k]))


def td_target(reward: float, done: bool, max_next_q: float, rl_gamma: float) -> float:
    """One-step TD target; terminal transitions use the reward alone."""
    if done:
        return reward
    return reward + rl_gamma * max_next_q


@dataclass
class Transition:
    state: DynamicGraph
    action_kind: str
    action_entity: int
    action_node: int  # node index within state graph
    space_nodes: np.ndarray  # node indices of the full pruned space (centering)
    reward: float
    done: bool
    next_state: Optional[DynamicGraph] = None
    next_space_nodes: Optional[np.ndarray] = None  # pruned space of next state


class PrioritizedReplay:
    """Proportional prioritized replay over a fixed-capacity ring buffer."""

    def __init__(self, capacity: int = 50_000, alpha: float = 0.6, seed: int = 0,
                 priority_floor: float = 1e-5):
        if capacity < 1:
            raise ValueError("capacity must be >= 1")
        self.capacity = capacity
        self.alpha = alpha
        self.priority_floor = priority_floor
        self.rng = np.random.default_rng(seed)
        self._data: list[Transition] = []
        self._priorities = np.zeros(capacity)
        self._next = 0

    def __len__(self) -> int:
        return len(self._data)

    def push(self, transition: Transition, priority: Optional[float] = None) -> None:
        if priority is None:
            priority = self._priorities[:len(self._data)].max() if self._data else 1.0
        if priority <= 0 or not np.isfinite(priority):
            raise ValueError("priority must be finite and > 0")
        if len(self._data) < self.capacity:
            self._data.append(transition)
        else:
            self._data[self._next] = transition
        self._priorities[self._next] = priority
        self._next = (self._next + 1) % self.capacity

    def sample(self, batch_size: int, beta: float):
        """Draw a batch; returns (indices, transitions, importance weights)."""
        n = len(self._data)
        if n == 0:
            raise ValueError("cannot sample from an empty buffer")
        scaled = self._priorities[:n] ** self.alpha
        probs = scaled / scaled.sum()
        idx = self.rng.choice(n, size=batch_size, replace=True, p=probs)
        weights = (n * probs[idx]) ** (-beta)
        weights = weights / weights.max()
        return idx, [self._data[i] for i in idx], weights

    def update_priorities(self, indices, td_errors) -> None:
        for i, err in zip(indices, np.abs(np.asarray(td_errors, dtype=np.float64))):
            self._priorities[i] = err + self.priority_floor


@dataclass(frozen=True)
class AgentConfig:
    n_top: int = 10  # pruned actions per class
    k_ask: int = 2  # attributes displayed per question
    rl_gamma: float = 0.99
    lr: float = 1e-4
    l2: float = 1e-6
    batch_size: int = 128
    buffer_capacity: int = 50_000
    per_alpha: float = 0.6
    per_beta_start: float = 0.4
    per_beta_end: float = 1.0
    eps_start: float = 1.0
    eps_end: float = 0.01
    eps_fraction: float = 0.2  # fraction of training over which epsilon decays
    tau: float = 0.01  # soft target update rate per gradient step
    sample_cap: int = 5000
    embed_dim: int = 64
    hidden: int = 100
    max_seq_len: int = 30
    huber_delta: float = 1.0
    seed: int = 0

    def __post_init__(self):
        if self.sample_cap < self.n_top:
            raise ValueError("sample_cap must be >= n_top so every pruned item "
                             "has a graph node")


@dataclass
class TurnContext:
    """Everything the agent derived for one decision point."""

    graph: DynamicGraph
    space: ActionSpace
    actions: list[ScoredAction]
    action_nodes: np.ndarray  # node index per scored action
    state_vec: torch.Tensor
    item_dist: PreferenceDistribution
    attr_dist: PreferenceDistribution


class DqnAgent:
    """Graph-state dueling DQN over the preference-pruned action space."""

    def __init__(self, catalog: Catalog, table: EmbeddingTable,
                 use_cfg: UseConfig = UseConfig(), cfg: AgentConfig = AgentConfig(),
                 dtype: torch.dtype = torch.float32):
        self.catalog = catalog
        self.table = table
        self.use_cfg = use_cfg
        self.cfg = cfg
        self.dtype = dtype
        torch.manual_seed(cfg.seed)
        self.encoder = ConversationEncoder(cfg.embed_dim, cfg.hidden,
                                           max_seq_len=cfg.max_seq_len, dtype=dtype)
        self.qnet = QNetwork(cfg.hidden, cfg.hidden, cfg.hidden, dtype=dtype)
        self.target_encoder = copy.deepcopy(self.encoder)
        self.target_qnet = copy.deepcopy(self.qnet)
        for p in list(self.target_encoder.parameters()) + list(self.target_qnet.parameters()):
            p.requires_grad_(False)
        self.optimizer = torch.optim.Adam(
            list(self.encoder.parameters()) + list(self.qnet.parameters()),
            lr=cfg.lr, weight_decay=cfg.l2)
        self.buffer = PrioritizedReplay(cfg.buffer_capacity, cfg.per_alpha, seed=cfg.seed)
        self.rng = np.random.default_rng(cfg.seed)
        self.entity_matrix = torch.as_tensor(
            np.concatenate([table.user_vecs, table.item_vecs, table.attr_vecs]), dtype=dtype)
        self.gradient_steps = 0
        self._pending: Optional[tuple[TurnContext, ScoredAction, float]] = None

    # ------------------------------------------------------------------ rollout

    def _node_positions(self, graph: DynamicGraph) -> tuple[dict[int, int], dict[int, int]]:
        item_pos = {int(i): int(n) for n, (k, i) in enumerate(zip(graph.node_kinds, graph.node_ids))
                    if k == KIND_ITEM}
        attr_pos = {int(i): int(n) for n, (k, i) in enumerate(zip(graph.node_kinds, graph.node_ids))
                    if k == KIND_ATTR}
        return item_pos, attr_pos

    def _encode_single(self, graph: DynamicGraph) -> tuple[torch.Tensor, torch.Tensor]:
        feats = self.entity_matrix[torch.as_tensor(
            graph.global_ids(self.catalog.n_users, self.catalog.n_items))]
        adj = torch.zeros((graph.n_nodes, graph.n_nodes), dtype=self.dtype)
        src = torch.as_tensor(graph.edge_src, dtype=torch.long)
        dst = torch.as_tensor(graph.edge_dst, dtype=torch.long)
        vals = torch.as_tensor(graph.edge_vals, dtype=self.dtype)
        adj[src, dst] = vals
        adj[dst, src] = vals
        nodes = self.encoder.gcn(feats, adj)
        if len(graph.click_positions) > 0:
            tokens = nodes[torch.as_tensor(graph.click_positions)]
        else:
            tokens = nodes[:1]
        history = self.encoder.encode_sequence(tokens.unsqueeze(0)).squeeze(0)
        return nodes, history.mean(dim=0)

    def perceive(self, session: SessionState) -> TurnContext:
        """Score distributions, prune, encode the graph, Q-score the actions."""
        item_dist = item_distribution(session, self.table, self.use_cfg)
        attr_dist = attribute_distribution(session, self.table, self.use_cfg)
        askable = session.askable_attrs()
        askable_dist = PreferenceDistribution(
            "attribute", {p: s for p, s in attr_dist.scores.items() if p in askable},
            attr_dist.turn)
        space = prune_actions(item_dist, askable_dist, self.cfg.n_top)
        graph = build_graph(session, item_dist, self.cfg.sample_cap, pin=space.v_top)
        with torch.no_grad():
            nodes, state_vec = self._encode_single(graph)
            item_pos, attr_pos = self._node_positions(graph)
            node_idx = [item_pos[v] for v in space.v_top] + [attr_pos[p] for p in space.p_top]
            reps = nodes[torch.as_tensor(node_idx, dtype=torch.long)]
            qs = q_values(state_vec, reps, self.qnet)
        actions = [ScoredAction(ACTION_ITEM, v, float(qs[i]))
                   for i, v in enumerate(space.v_top)]
        offset = len(space.v_top)
        actions += [ScoredAction(ACTION_ATTR, p, float(qs[offset + i]),
                                 attr_type=self.catalog.attr_type_of[p])
                    for i, p in enumerate(space.p_top)]
        return TurnContext(graph=graph, space=space, actions=actions,
                           action_nodes=np.asarray(node_idx, dtype=np.int64),
                           state_vec=state_vec, item_dist=item_dist,
                           attr_dist=attr_dist)

    def system_action(self, ctx: TurnContext, chosen: ScoredAction) -> Ask | Recommend:
        """Map the chosen entity to the executed system action."""
        if chosen.kind == ACTION_ITEM:
            ranked = sorted((a for a in ctx.actions if a.kind == ACTION_ITEM),
                            key=lambda a: (-a.q, a.entity))
            return Recommend(items=tuple(a.entity for a in ranked))
        if chosen == _best_action(ctx.actions):
            return infer_system_action(ctx.actions, self.cfg.k_ask)
        # Exploratory attribute pick: display it with the next-best of its type.
        same_type = sorted((a for a in ctx.actions
                            if a.kind == ACTION_ATTR and a.attr_type == chosen.attr_type
                            and a.entity != chosen.entity),
                           key=lambda a: (-a.q, a.entity))
        attrs = (chosen.entity,) + tuple(a.entity for a in same_type[:self.cfg.k_ask - 1])
        return Ask(type_id=chosen.attr_type, attrs=attrs)

    def decide(self, session: SessionState) -> Ask | Recommend:
        """Greedy decision (evaluation / serving path)."""
        ctx = self.perceive(session)
        return infer_system_action(ctx.actions, self.cfg.k_ask)

    # ----------------------------------------------------------------- training

    def epsilon(self, episode: int, total_episodes: int) -> float:
        span = max(1, int(self.cfg.eps_fraction * total_episodes))
        frac = min(1.0, episode / span)
        return self.cfg.eps_start + frac * (self.cfg.eps_end - self.cfg.eps_start)

    def beta(self, episode: int, total_episodes: int) -> float:
        frac = min(1.0, episode / max(1, total_episodes))
        return self.cfg.per_beta_start + frac * (self.cfg.per_beta_end - self.cfg.per_beta_start)

    def start_episode(self) -> None:
        self._pending = None

    def step_transition(self, ctx: TurnContext, chosen: ScoredAction,
                        reward: float, done: bool) -> None:
        """Complete the previous turn's transition and stage the current one."""
        if self._pending is not None:
            prev_ctx, prev_action, prev_reward = self._pending
            self.buffer.push(Transition(
                state=prev_ctx.graph, action_kind=prev_action.kind,
                action_entity=prev_action.entity,
                action_node=int(prev_ctx.action_nodes[prev_ctx.actions.index(prev_action)]),
                space_nodes=prev_ctx.action_nodes, reward=prev_reward, done=False,
                next_state=ctx.graph, next_space_nodes=ctx.action_nodes))
        if done:
            self.buffer.push(Transition(
                state=ctx.graph, action_kind=chosen.kind, action_entity=chosen.entity,
                action_node=int(ctx.action_nodes[ctx.actions.index(chosen)]),
                space_nodes=ctx.action_nodes, reward=reward, done=True))
            self._pending = None
        else:
            self._pending = (ctx, chosen, reward)

    def _batch_encode(self, graphs: list[DynamicGraph], encoder: ConversationEncoder,
                      qnet: QNetwork, action_nodes: list[np.ndarray],
                      taken: Optional[list[int]] = None):
        """Padded batch forward; returns Q per action slot plus the valid mask."""
        b = len(graphs)
        n_max = max(g.n_nodes for g in graphs)
        # Node features: one gather over the stacked entity matrix. Padding
        # slots read entity 0 but stay edge-isolated, so they never leak into
        # the pooled state or any action representation.
        gid = np.zeros((b, n_max), dtype=np.int64)
        for i, g in enumerate(graphs):
            gid[i, :g.n_nodes] = g.global_ids(self.catalog.n_users, self.catalog.n_items)
        feats = self.entity_matrix[torch.from_numpy(gid)]

        # Adjacency: one flat scatter of all edges (both directions).
        offsets = np.arange(b, dtype=np.int64) * (n_max * n_max)
        lin = np.concatenate([
            off + g.edge_src.astype(np.int64) * n_max + g.edge_dst
            for off, g in zip(offsets, graphs)] + [
            off + g.edge_dst.astype(np.int64) * n_max + g.edge_src
            for off, g in zip(offsets, graphs)])
        vals = np.concatenate([g.edge_vals for g in graphs] * 2)
        adj = torch.zeros(b * n_max * n_max, dtype=self.dtype)
        adj[torch.from_numpy(lin)] = torch.as_tensor(vals, dtype=self.dtype)
        adj = adj.view(b, n_max, n_max)

        l_max = max(1, max(len(g.click_positions) for g in graphs))
        tok_idx = np.zeros((b, l_max), dtype=np.int64)
        tok_mask = np.zeros((b, l_max), dtype=bool)
        a_max = max(len(a) for a in action_nodes)
        act_idx = np.zeros((b, a_max), dtype=np.int64)
        act_mask = np.zeros((b, a_max), dtype=bool)
        for i, g in enumerate(graphs):
            ln = len(g.click_positions)
            if ln:
                tok_idx[i, :ln] = g.click_positions
                tok_mask[i, :ln] = True
            else:
                tok_mask[i, 0] = True  # user node fallback at index 0
            na = len(action_nodes[i])
            act_idx[i, :na] = action_nodes[i]
            act_mask[i, :na] = True
        tok_idx = torch.from_numpy(tok_idx)
        tok_mask = torch.from_numpy(tok_mask)
        act_idx = torch.from_numpy(act_idx)
        act_mask = torch.from_numpy(act_mask)

        nodes = encoder.gcn(feats, adj)  # (b, n_max, hidden)
        tokens = torch.gather(nodes, 1, tok_idx.unsqueeze(-1).expand(-1, -1, self.cfg.hidden))
        seq = encoder.encode_sequence(tokens, padding_mask=~tok_mask)
        m = tok_mask.unsqueeze(-1).to(self.dtype)
        state = (seq * m).sum(1) / m.sum(1)
        reps = torch.gather(nodes, 1, act_idx.unsqueeze(-1).expand(-1, -1, self.cfg.hidden))
        q_all = qnet(state, reps, mask=act_mask)
        if taken is not None:
            slot = torch.as_tensor([list(action_nodes[i]).index(t) for i, t in enumerate(taken)])
            return q_all.gather(1, slot.unsqueeze(1)).squeeze(1)
        return q_all, act_mask

    def learn(self, beta: float) -> Optional[float]:
        """One prioritized gradient step; returns the loss or None if not ready."""
        if len(self.buffer) < self.cfg.batch_size:
            return None
        idx, batch, weights = self.buffer.sample(self.cfg.batch_size, beta)

        q_taken = self._batch_encode(
            [t.state for t in batch], self.encoder, self.qnet,
            [t.space_nodes for t in batch], taken=[t.action_node for t in batch])

        rewards = torch.as_tensor([t.reward for t in batch], dtype=self.dtype)
        dones = torch.as_tensor([t.done for t in batch], dtype=torch.bool)
        max_next = torch.zeros(len(batch), dtype=self.dtype)
        live = [i for i, t in enumerate(batch) if not t.done]
        if live:
            with torch.no_grad():
                q_next, mask = self._batch_encode(
                    [batch[i].next_state for i in live], self.target_encoder,
                    self.target_qnet, [batch[i].next_space_nodes for i in live])
                q_next = q_next.masked_fill(~mask, float("-inf"))
                max_next[torch.as_tensor(live)] = q_next.max(dim=1).values
        targets = torch.where(dones, rewards, rewards + self.cfg.rl_gamma * max_next)

        td_error = q_taken - targets
        w = torch.as_tensor(weights, dtype=self.dtype)
        loss = (w * nn.functional.huber_loss(
            q_taken, targets, reduction="none", delta=self.cfg.huber_delta)).mean()
        self.optimizer.zero_grad()
        loss.backward()
        self.optimizer.step()
        self.buffer.update_priorities(idx, td_error.detach().numpy())
        self._soft_update()
        self.gradient_steps += 1
        return float(loss.detach())

    def _soft_update(self) -> None:
        tau = self.cfg.tau
        for online, target in ((self.encoder, self.target_encoder),
                               (self.qnet, self.target_qnet)):
            with torch.no_grad():
                for p, tp in zip(online.parameters(), target.parameters()):
                    tp.mul_(1.0 - tau).add_(p, alpha=tau)

    # -------------------------------------------------------------- persistence

    def save(self, path) -> None:
        torch.save({
            "version": CHECKPOINT_VERSION,
            "agent_config": self.cfg.__dict__,
            "use_config": self.use_cfg.__dict__,
            "encoder": self.encoder.state_dict(),
            "qnet": self.qnet.state_dict(),
            "target_encoder": self.target_encoder.state_dict(),
            "target_qnet": self.target_qnet.state_dict(),
            "optimizer": self.optimizer.state_dict(),
            "gradient_steps": self.gradient_steps,
            "np_rng": self.rng.bit_generator.state,
            "torch_rng": torch.get_rng_state(),
        }, path)

    @classmethod
    def load(cls, path, catalog: Catalog, table: EmbeddingTable,
             dtype: torch.dtype = torch.float32) -> "DqnAgent":
        blob = torch.load(path, weights_only=False)
        if blob.get("version") != CHECKPOINT_VERSION:
            raise ValueError(f"unsupported agent checkpoint version {blob.get('version')}")
        agent = cls(catalog, table, UseConfig(**blob["use_config"]),
                    AgentConfig(**blob["agent_config"]), dtype=dtype)
        agent.encoder.load_state_dict(blob["encoder"])
        agent.qnet.load_state_dict(blob["qnet"])
        agent.target_encoder.load_state_dict(blob["target_encoder"])
        agent.target_qnet.load_state_dict(blob["target_qnet"])
        agent.optimizer.load_state_dict(blob["optimizer"])
        agent.gradient_steps = blob["gradient_steps"]
        agent.rng.bit_generator.state = blob["np_rng"]
        torch.set_rng_state(blob["torch_rng"])
        return agent
