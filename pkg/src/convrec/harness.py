"""Training loop, evaluation metrics, baselines, ablation and sweep runners.

Experiments run against a dataset directory or a seeded synthetic world.
User-item interaction pairs are grouped into simulation pairs (user, target
set) and split 70/15/15 into train/validation/test; training samples train
pairs, periodic and final evaluations use held-out pairs with greedy
decisions. Metrics: success rate within the turn budget (SR), average turns
(AT, failures count the full budget), and a rank-aware hierarchical DCG that
rewards early success turns and high target ranks.
"""
from __future__ import annotations

import csv
import itertools
import json
import math
from dataclasses import dataclass, field, fields, replace
from pathlib import Path
from typing import Callable, Optional, Sequence

import numpy as np

from .catalog import Catalog, SyntheticSpec, generate_synthetic, load_catalog
from .embeddings import (EmbeddingTable, init_embeddings, load_embeddings,
                         pretrain_translational)
from .policy import (ACTION_ATTR, ACTION_ITEM, AgentConfig, Ask, DqnAgent,
                     Recommend, select_training_action)
from .simulator import (DEFAULT_MAX_TURNS, MODE_HARD, MODE_SOFT, RewardConfig,
                        SessionState, new_session, respond_to_question,
                        respond_to_recommendation)
from .soft_estimation import UseConfig


@dataclass(frozen=True)
class SimulationPair:
    user: int
    targets: frozenset[int]


@dataclass(frozen=True)
class ExperimentConfig:
    """Experiment knobs; defaults follow the reference training setup."""

    # world
    catalog_dir: Optional[str] = None  # None -> synthetic world below
    synthetic: SyntheticSpec = SyntheticSpec(n_users=200, n_items=500,
                                             n_attributes=50, n_types=8, seed=1)
    embeddings_path: Optional[str] = None
    pretrain: bool = True
    pretrain_epochs: int = 20
    embed_dim: int = 64
    # session protocol
    mode: str = MODE_SOFT
    max_turns: int = DEFAULT_MAX_TURNS
    vague_ratio: float = 0.5
    vague_click_prob: float = 0.5
    target_set_size: int = 2
    rewards: RewardConfig = RewardConfig()
    # soft estimation
    use: UseConfig = UseConfig()
    # agent
    n_top: int = 10
    k_ask: int = 2
    batch_size: int = 128
    lr: float = 1e-4
    l2: float = 1e-6
    buffer_capacity: int = 50_000
    rl_gamma: float = 0.99
    hidden: int = 100
    sample_cap: int = 5000
    # training
    episodes: int = 10_000
    eval_every: int = 200
    eval_episodes: int = 200
    seed: int = 0

    def agent_config(self) -> AgentConfig:
        return AgentConfig(
            n_top=self.n_top, k_ask=self.k_ask, rl_gamma=self.rl_gamma,
            lr=self.lr, l2=self.l2, batch_size=self.batch_size,
            buffer_capacity=self.buffer_capacity, sample_cap=self.sample_cap,
            embed_dim=self.embed_dim, hidden=self.hidden, seed=self.seed)


def desk_scale_config(**overrides) -> ExperimentConfig:
    """Laptop-sized preset: smaller batches, graphs and schedules."""
    base = dict(
        episodes=2000, eval_every=500, eval_episodes=100,
        batch_size=32, sample_cap=25, hidden=64, pretrain_epochs=30)
    base.update(overrides)
    return ExperimentConfig(**base)


# --------------------------------------------------------------------- metrics

def hdcg(success_turn: int, target_rank: int, max_turns: int = 15,
         max_rank: int = 10) -> float:
    """Turn- and rank-discounted credit for one successful episode."""
    if not 1 <= success_turn <= max_turns:
        raise ValueError(f"success_turn {success_turn} outside [1, {max_turns}]")
    if not 1 <= target_rank <= max_rank:
        raise ValueError(f"target_rank {target_rank} outside [1, {max_rank}]")
    t, k = success_turn, target_rank
    outer = 1.0 / math.log2(t + 2)
    inner = 1.0 / math.log2(t + 1) - outer
    return outer + inner * (1.0 / math.log2(k + 1))


@dataclass
class EpisodeRecord:
    success: bool
    end_turn: int  # success turn (1-based) or the turn the episode stopped
    target_rank: Optional[int]
    total_reward: float
    target_filtered: bool
    transcript: list[dict] = field(default_factory=list)

    def to_json(self) -> dict:
        return {
            "success": self.success,
            "end_turn": self.end_turn,
            "target_rank": self.target_rank,
            "total_reward": self.total_reward,
            "target_filtered": self.target_filtered,
            "transcript": self.transcript,
        }


@dataclass
class Metrics:
    sr: float
    at: float
    hdcg: float
    episodes: int
    sr_curve: list[float]  # cumulative success fraction by turn 1..T
    target_filtered_fraction: float


def metrics_from_records(records: Sequence[EpisodeRecord | dict],
                         max_turns: int = 15, max_rank: int = 10) -> Metrics:
    """Recompute metrics from per-episode records (in-run or reloaded)."""
    rows = [r.to_json() if isinstance(r, EpisodeRecord) else r for r in records]
    if not rows:
        raise ValueError("no episode records")
    n = len(rows)
    successes = [r for r in rows if r["success"]]
    at_sum = sum(r["end_turn"] if r["success"] else max_turns for r in rows)
    hdcg_sum = sum(hdcg(r["end_turn"], r["target_rank"], max_turns, max_rank)
                   for r in successes)
    curve = [sum(1 for r in successes if r["end_turn"] <= t) / n
             for t in range(1, max_turns + 1)]
    return Metrics(
        sr=len(successes) / n,
        at=at_sum / n,
        hdcg=hdcg_sum / n,
        episodes=n,
        sr_curve=curve,
        target_filtered_fraction=sum(1 for r in rows if r["target_filtered"]) / n,
    )


def write_records_jsonl(records: Sequence[EpisodeRecord], path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for rec in records:
            fh.write(json.dumps(rec.to_json(), sort_keys=True) + "\n")


def read_records_jsonl(path) -> list[dict]:
    with open(path, encoding="utf-8") as fh:
        return [json.loads(line) for line in fh if line.strip()]


# ------------------------------------------------------------------- policies

def apply_action(session: SessionState, action: Ask | Recommend) -> float:
    """Step the environment with a system action; returns the turn reward."""
    if isinstance(action, Ask):
        respond_to_question(session, action.type_id, action.attrs)
    elif isinstance(action, Recommend):
        respond_to_recommendation(session, action.items)
    else:
        raise TypeError(f"unknown action {action!r}")
    return session.history[-1].reward


class MaxEntropyPolicy:
    """Entropy-driven questioner with a candidate-size-coupled recommendation coin.

    Recommends with probability min(1, N / |candidates|); the recommendation
    ranks items by attribute overlap with the clicked history. Questions pick
    the undisplayed attribute whose candidate-coverage fraction has maximum
    binary entropy, then fill up to K slots from the same type by entropy.
    """

    def __init__(self, n_rec: int = 10, k_ask: int = 2, seed: int = 0):
        self.n_rec = n_rec
        self.k_ask = k_ask
        self.rng = np.random.default_rng(seed)

    @staticmethod
    def _binary_entropy(f: float) -> float:
        if f <= 0.0 or f >= 1.0:
            return 0.0
        return -f * math.log2(f) - (1.0 - f) * math.log2(1.0 - f)

    def _recommend(self, session: SessionState) -> Recommend:
        clicked = session.click_history
        scored = sorted(
            ((len(session.catalog.item_attrs[v] & clicked), v) for v in session.v_cand),
            key=lambda sv: (-sv[0], sv[1]))
        return Recommend(items=tuple(v for _, v in scored[:self.n_rec]))

    def decide(self, session: SessionState) -> Ask | Recommend:
        p_rec = min(1.0, self.n_rec / max(1, len(session.v_cand)))
        askable = session.askable_attrs()
        if not askable or self.rng.random() < p_rec:
            return self._recommend(session)
        n_cand = len(session.v_cand)
        entropies = {
            p: self._binary_entropy(
                len(session.catalog.items_by_attr[p] & session.v_cand) / n_cand)
            for p in askable}
        best = min(entropies, key=lambda p: (-entropies[p], p))
        best_type = session.catalog.attr_type_of[best]
        same_type = sorted(
            (p for p in askable
             if session.catalog.attr_type_of[p] == best_type and p != best),
            key=lambda p: (-entropies[p], p))
        return Ask(type_id=best_type,
                   attrs=(best,) + tuple(same_type[:self.k_ask - 1]))


class RandomPolicy:
    """Uniform legal actions; the sanity floor for every learned policy."""

    def __init__(self, n_rec: int = 10, k_ask: int = 2, seed: int = 0):
        self.n_rec = n_rec
        self.k_ask = k_ask
        self.rng = np.random.default_rng(seed)

    def decide(self, session: SessionState) -> Ask | Recommend:
        askable = sorted(session.askable_attrs())
        if askable and self.rng.random() < 0.5:
            p = int(self.rng.choice(askable))
            type_id = session.catalog.attr_type_of[p]
            of_type = [q for q in askable if session.catalog.attr_type_of[q] == type_id]
            k = min(self.k_ask, len(of_type))
            attrs = self.rng.choice(of_type, size=k, replace=False)
            return Ask(type_id=type_id, attrs=tuple(int(a) for a in attrs))
        items = sorted(session.v_cand)
        k = min(self.n_rec, len(items))
        chosen = self.rng.choice(items, size=k, replace=False)
        return Recommend(items=tuple(int(v) for v in chosen))


class DqnPolicy:
    """Greedy wrapper so a trained agent fits the scripted-policy interface."""

    def __init__(self, agent: DqnAgent):
        self.agent = agent

    def decide(self, session: SessionState) -> Ask | Recommend:
        return self.agent.decide(session)


def max_entropy_policy(session: SessionState, n_rec: int = 10, k_ask: int = 2,
                       seed: int = 0) -> Ask | Recommend:
    """One-shot decision by the max-entropy baseline (stateless helper)."""
    return MaxEntropyPolicy(n_rec=n_rec, k_ask=k_ask, seed=seed).decide(session)


# ----------------------------------------------------------------- world setup

def build_world(config: ExperimentConfig) -> tuple[Catalog, EmbeddingTable]:
    if config.catalog_dir:
        catalog = load_catalog(config.catalog_dir)
    else:
        catalog = generate_synthetic(config.synthetic)
    if config.embeddings_path:
        table = load_embeddings(config.embeddings_path)
    elif config.pretrain and catalog.triplets:
        table = pretrain_translational(catalog, epochs=config.pretrain_epochs,
                                       seed=config.seed, dim=config.embed_dim)
    else:
        table = init_embeddings(catalog, dim=config.embed_dim, seed=config.seed)
    return catalog, table


def simulation_pairs(catalog: Catalog, target_set_size: int = 2,
                     seed: int = 0) -> list[SimulationPair]:
    """Group each user's interacted items into disjoint target sets."""
    rng = np.random.default_rng(seed)
    pairs: list[SimulationPair] = []
    for user in sorted(catalog.users):
        items = list(dict.fromkeys(catalog.items_by_user[user]))
        rng.shuffle(items)
        for i in range(0, len(items) - target_set_size + 1, target_set_size):
            group = frozenset(items[i:i + target_set_size])
            if catalog.common_attrs(group):
                pairs.append(SimulationPair(user=user, targets=group))
    return pairs


def split_pairs(pairs: Sequence[SimulationPair], seed: int = 0,
                ratios: tuple[float, float, float] = (0.7, 0.15, 0.15)
                ) -> dict[str, list[SimulationPair]]:
    rng = np.random.default_rng(seed)
    order = list(pairs)
    rng.shuffle(order)
    n = len(order)
    n_train = int(ratios[0] * n)
    n_val = int(ratios[1] * n)
    return {
        "train": order[:n_train],
        "val": order[n_train:n_train + n_val],
        "test": order[n_train + n_val:],
    }


# ------------------------------------------------------------------ evaluation

def run_episode(session: SessionState, policy) -> EpisodeRecord:
    while session.running():
        apply_action(session, policy.decide(session))
    success = session.outcome == "success"
    return EpisodeRecord(
        success=success,
        end_turn=session.success_turn if success else session.turn,
        target_rank=session.target_rank,
        total_reward=sum(rec.reward for rec in session.history),
        target_filtered=session.target_filtered,
        transcript=session.transcript(),
    )


def evaluate(policy, catalog: Catalog, pairs: Sequence[SimulationPair],
             config: ExperimentConfig, n_episodes: int,
             seed: int = 0) -> tuple[Metrics, list[EpisodeRecord]]:
    """Greedy rollouts over held-out pairs, cycling when episodes exceed pairs."""
    if not pairs:
        raise ValueError("no simulation pairs to evaluate on")
    rng = np.random.default_rng(seed)
    order = list(pairs)
    rng.shuffle(order)
    records = []
    for i in range(n_episodes):
        pair = order[i % len(order)]
        session = new_session(
            catalog, pair.user, pair.targets, vague_ratio=config.vague_ratio,
            mode=config.mode, max_turns=config.max_turns,
            seed=seed * 1_000_003 + i, rewards=config.rewards,
            vague_click_prob=config.vague_click_prob)
        records.append(run_episode(session, policy))
    return metrics_from_records(records, config.max_turns, config.n_top), records


# -------------------------------------------------------------------- training

@dataclass
class TrainResult:
    agent: DqnAgent
    eval_history: list[dict]
    episodes: int


def train(config: ExperimentConfig, catalog: Optional[Catalog] = None,
          table: Optional[EmbeddingTable] = None,
          pairs: Optional[dict[str, list[SimulationPair]]] = None,
          log: Optional[Callable[[str], None]] = None) -> TrainResult:
    """Run seeded online training; one gradient update per environment turn."""
    if catalog is None or table is None:
        catalog, table = build_world(config)
    if pairs is None:
        pairs = split_pairs(simulation_pairs(
            catalog, config.target_set_size, seed=config.seed), seed=config.seed)
    train_pairs = pairs["train"]
    if not train_pairs:
        raise ValueError("no training pairs available")

    agent = DqnAgent(catalog, table, config.use, config.agent_config())
    rng = np.random.default_rng(config.seed)
    eval_history: list[dict] = []

    for ep in range(config.episodes):
        pair = train_pairs[int(rng.integers(len(train_pairs)))]
        session = new_session(
            catalog, pair.user, pair.targets, vague_ratio=config.vague_ratio,
            mode=config.mode, max_turns=config.max_turns,
            seed=config.seed * 1_000_003 + ep, rewards=config.rewards,
            vague_click_prob=config.vague_click_prob)
        eps = agent.epsilon(ep, config.episodes)
        beta = agent.beta(ep, config.episodes)
        agent.start_episode()
        while session.running():
            ctx = agent.perceive(session)
            chosen = select_training_action(ctx.actions, eps, agent.rng)
            action = agent.system_action(ctx, chosen)
            reward = apply_action(session, action)
            agent.step_transition(ctx, chosen, reward, session.done)
            agent.learn(beta)

        if config.eval_every and (ep + 1) % config.eval_every == 0:
            eval_pairs = pairs["val"] or pairs["test"] or train_pairs
            metrics, _ = evaluate(DqnPolicy(agent), catalog, eval_pairs, config,
                                  config.eval_episodes, seed=config.seed + ep + 1)
            row = {"episode": ep + 1, "sr": metrics.sr, "at": metrics.at,
                   "hdcg": metrics.hdcg}
            eval_history.append(row)
            if log:
                log(f"episode {ep + 1}: SR={metrics.sr:.3f} AT={metrics.at:.2f} "
                    f"hDCG={metrics.hdcg:.3f}")

    return TrainResult(agent=agent, eval_history=eval_history, episodes=config.episodes)


# ------------------------------------------------------------ ablation / sweep

ABLATION_FLAGS = ("use_personalized", "use_average_correction", "use_decay")


def _variant_config(config: ExperimentConfig, off_flag: Optional[str],
                    mode: str) -> ExperimentConfig:
    use = config.use if off_flag is None else replace(config.use, **{off_flag: False})
    return replace(config, use=use, mode=mode)


def run_ablation(config: ExperimentConfig, flags: Sequence[str] = ABLATION_FLAGS,
                 modes: Sequence[str] = (MODE_SOFT,), seeds: Sequence[int] = (0,),
                 log: Optional[Callable[[str], None]] = None) -> list[dict]:
    """Train/evaluate the full model and each single-flag-off variant per mode."""
    for flag in flags:
        if flag not in ABLATION_FLAGS:
            raise ValueError(f"unknown ablation flag {flag!r}")
    rows = []
    variants: list[Optional[str]] = [None] + list(flags)
    for mode in modes:
        for off_flag in variants:
            srs, ats, hdcgs = [], [], []
            for seed in seeds:
                variant = replace(_variant_config(config, off_flag, mode), seed=seed)
                catalog, table = build_world(variant)
                pairs = split_pairs(simulation_pairs(
                    catalog, variant.target_set_size, seed=variant.seed), seed=variant.seed)
                result = train(variant, catalog, table, pairs, log=log)
                metrics, _ = evaluate(DqnPolicy(result.agent), catalog, pairs["test"],
                                      variant, variant.eval_episodes, seed=seed + 777)
                srs.append(metrics.sr)
                ats.append(metrics.at)
                hdcgs.append(metrics.hdcg)
            row = {
                "mode": mode,
                "variant": "full" if off_flag is None else f"no_{off_flag}",
                "sr": float(np.mean(srs)),
                "at": float(np.mean(ats)),
                "hdcg": float(np.mean(hdcgs)),
                "seeds": len(seeds),
            }
            rows.append(row)
            if log:
                log(f"[{mode}] {row['variant']}: SR={row['sr']:.3f} "
                    f"AT={row['at']:.2f} hDCG={row['hdcg']:.3f}")
    return rows


def run_sweep(config: ExperimentConfig, grid: dict[str, Sequence],
              seeds: Sequence[int] = (0,),
              log: Optional[Callable[[str], None]] = None) -> list[dict]:
    """Cartesian hyperparameter sweep; keys address config or soft-estimation fields."""
    use_fields = {f.name for f in fields(UseConfig)}
    cfg_fields = {f.name for f in fields(ExperimentConfig)}
    for key in grid:
        if key not in use_fields and key not in cfg_fields:
            raise ValueError(f"unknown sweep key {key!r}")
    rows = []
    names = list(grid)
    for values in itertools.product(*(grid[n] for n in names)):
        point = dict(zip(names, values))
        variant = config
        use_updates = {k: v for k, v in point.items() if k in use_fields}
        cfg_updates = {k: v for k, v in point.items() if k in cfg_fields}
        if use_updates:
            variant = replace(variant, use=replace(variant.use, **use_updates))
        if cfg_updates:
            variant = replace(variant, **cfg_updates)
        srs, ats = [], []
        for seed in seeds:
            seeded = replace(variant, seed=seed)
            catalog, table = build_world(seeded)
            pairs = split_pairs(simulation_pairs(
                catalog, seeded.target_set_size, seed=seed), seed=seed)
            result = train(seeded, catalog, table, pairs)
            metrics, _ = evaluate(DqnPolicy(result.agent), catalog, pairs["test"],
                                  seeded, seeded.eval_episodes, seed=seed + 777)
            srs.append(metrics.sr)
            ats.append(metrics.at)
        row = dict(point)
        row.update(sr=float(np.mean(srs)), at=float(np.mean(ats)), seeds=len(seeds))
        rows.append(row)
        if log:
            log(f"{point}: SR={row['sr']:.3f} AT={row['at']:.2f}")
    return rows


def write_rows_csv(rows: Sequence[dict], path) -> None:
    if not rows:
        return
    keys = list(rows[0])
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=keys)
        writer.writeheader()
        writer.writerows(rows)
