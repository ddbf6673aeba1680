"""Closed-form soft preference scores from click/non-click evidence.

Per ask turn, an entity's score combines a static personalized term with the
mean centered inner product against the clicked and non-clicked attribute
choices; centering subtracts the average preference over the unshown
attributes of the asked type. The per-turn score is squashed by a sigmoid and
turns are merged with a geometric decay, so recent feedback dominates while
history fades.

Items are scored against attribute choices with item-attribute inner
products; attributes are scored the same way using attribute-attribute inner
products (and the user-attribute product for the personalized term).

Empty-set convention: means over empty clicked/non-clicked/unshown sets
contribute exactly 0, so a turn with no evidence reduces to the sigmoid of
the personalized term alone.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .embeddings import EmbeddingTable
from .simulator import SessionState


@dataclass(frozen=True)
class UseConfig:
    lambda1: float = 0.1  # weight of the clicked-choice term
    lambda2: float = 0.01  # weight of the non-clicked-choice term
    gamma: float = 0.1  # decay factor for historical turns
    use_personalized: bool = True
    use_average_correction: bool = True
    use_decay: bool = True
    incremental_threshold: int = 10_000  # candidates above this use cached folding

    def __post_init__(self):
        if not 0.0 <= self.gamma <= 1.0:
            raise ValueError("gamma must be in [0, 1]")

    def flags_key(self) -> tuple:
        return (self.lambda1, self.lambda2, self.gamma, self.use_personalized,
                self.use_average_correction, self.use_decay)


@dataclass(frozen=True)
class TurnEvidence:
    """Click outcome of one ask turn, plus the unshown attributes of the type."""

    asked_type: int
    clicked: frozenset[int]
    nonclicked: frozenset[int]
    noshow: frozenset[int]

    def __post_init__(self):
        if (self.clicked & self.nonclicked) or (self.clicked & self.noshow) \
                or (self.nonclicked & self.noshow):
            raise ValueError("clicked/nonclicked/noshow must be pairwise disjoint")


@dataclass(frozen=True)
class PreferenceDistribution:
    entity_class: str  # "item" | "attribute"
    scores: dict[int, float]
    turn: int

    def top(self, n: int) -> list[tuple[int, float]]:
        """Highest-scored entries, ties broken by ascending id."""
        return sorted(self.scores.items(), key=lambda kv: (-kv[1], kv[0]))[:n]


def evidence_from_session(session: SessionState) -> list[TurnEvidence]:
    """Extract per-ask-turn evidence; recommendation turns contribute none."""
    out = []
    for rec in session.history:
        if rec.kind != "ask":
            continue
        type_attrs = session.catalog.attrs_by_type[rec.asked_type]
        out.append(TurnEvidence(
            asked_type=rec.asked_type,
            clicked=rec.clicked,
            nonclicked=rec.nonclicked,
            noshow=frozenset(type_attrs - set(rec.displayed)),
        ))
    return out


def sigmoid(x):
    return 1.0 / (1.0 + np.exp(-np.clip(x, -500.0, 500.0)))


def average_unshown(table: EmbeddingTable, v: int, evidence: TurnEvidence) -> float:
    """Mean inner product of item v against the unshown attributes (0 if none)."""
    if not evidence.noshow:
        return 0.0
    idx = sorted(evidence.noshow)
    return float((table.attr_vecs[idx] @ table.item_vecs[v]).mean())


def choice_scores(table: EmbeddingTable, v: int, evidence: TurnEvidence,
                  w_avg: Optional[float] = None) -> tuple[float, float]:
    """Centered mean preference of item v toward clicked and non-clicked choices.

    w_avg defaults to the unshown average for this evidence; pass 0.0 to drop
    the correction.
    """
    if w_avg is None:
        w_avg = average_unshown(table, v, evidence)

    def centered_mean(attrs: frozenset[int]) -> float:
        if not attrs:
            return 0.0
        idx = sorted(attrs)
        return float((table.attr_vecs[idx] @ table.item_vecs[v] - w_avg).mean())

    return centered_mean(evidence.clicked), centered_mean(evidence.nonclicked)


def turn_item_score(table: EmbeddingTable, u: int, v: int,
                    evidence: TurnEvidence, cfg: UseConfig) -> float:
    """Single-turn preference for item v, in (0, 1)."""
    w_avg = average_unshown(table, v, evidence) if cfg.use_average_correction else 0.0
    w_click, w_noclick = choice_scores(table, v, evidence, w_avg=w_avg)
    base = float(table.user_vecs[u] @ table.item_vecs[v]) if cfg.use_personalized else 0.0
    return float(sigmoid(base + cfg.lambda1 * w_click + cfg.lambda2 * w_noclick))


def decay_step(prev: float, current: float, gamma: float) -> float:
    """Merge the previous decayed score into the current turn's score."""
    if not 0.0 <= gamma <= 1.0:
        raise ValueError("gamma must be in [0, 1]")
    return current + gamma * prev


def closed_form_decay(history: Sequence[float], gamma: float) -> float:
    """Unfolded decay sum over per-turn scores; oracle for decay_step folding."""
    if len(history) == 0:
        raise ValueError("history is empty")
    t = len(history)
    return float(sum(gamma ** (t - i - 1) * history[i] for i in range(t)))


def _turn_scores(vecs: np.ndarray, base: np.ndarray, table: EmbeddingTable,
                 evidence: TurnEvidence, cfg: UseConfig) -> np.ndarray:
    """Vectorized per-turn score for every row of `vecs` (items or attributes)."""
    n = vecs.shape[0]
    if cfg.use_average_correction and evidence.noshow:
        w_avg = vecs @ table.attr_vecs[sorted(evidence.noshow)].T
        w_avg = w_avg.mean(axis=1)
    else:
        w_avg = np.zeros(n)

    def centered_mean(attrs: frozenset[int]) -> np.ndarray:
        if not attrs:
            return np.zeros(n)
        dots = vecs @ table.attr_vecs[sorted(attrs)].T
        return (dots - w_avg[:, None]).mean(axis=1)

    logits = cfg.lambda1 * centered_mean(evidence.clicked) \
        + cfg.lambda2 * centered_mean(evidence.nonclicked)
    if cfg.use_personalized:
        logits = logits + base
    return sigmoid(logits)


def _distribution(session: SessionState, table: EmbeddingTable, cfg: UseConfig,
                  entity_class: str, ids: list[int], vecs: np.ndarray,
                  base: np.ndarray) -> PreferenceDistribution:
    evidence = evidence_from_session(session)
    zero = TurnEvidence(asked_type=-1, clicked=frozenset(),
                        nonclicked=frozenset(), noshow=frozenset())

    if not evidence:
        scores = _turn_scores(vecs, base, table, zero, cfg)
        return PreferenceDistribution(entity_class, dict(zip(ids, scores.tolist())), session.turn)

    if not cfg.use_decay:
        scores = _turn_scores(vecs, base, table, evidence[-1], cfg)
        return PreferenceDistribution(entity_class, dict(zip(ids, scores.tolist())), session.turn)

    cache_key = (entity_class, cfg.flags_key())
    cached_turns, cached_scores = session.use_cache.get(cache_key, (0, {}))
    use_cache = len(ids) > cfg.incremental_threshold and cached_turns <= len(evidence) \
        and all(i in cached_scores for i in ids)

    if use_cache:
        acc = np.array([cached_scores[i] for i in ids])
        start = cached_turns
    else:
        acc = None
        start = 0
    for ev in evidence[start:]:
        turn_scores = _turn_scores(vecs, base, table, ev, cfg)
        acc = turn_scores if acc is None else turn_scores + cfg.gamma * acc

    session.use_cache[cache_key] = (len(evidence), dict(zip(ids, acc.tolist())))
    return PreferenceDistribution(entity_class, dict(zip(ids, acc.tolist())), session.turn)


def item_distribution(session: SessionState, table: EmbeddingTable,
                      cfg: UseConfig) -> PreferenceDistribution:
    """Decayed preference score for every candidate item."""
    ids = sorted(session.v_cand)
    vecs = table.item_vecs[ids]
    base = vecs @ table.user_vecs[session.user]
    return _distribution(session, table, cfg, "item", ids, vecs, base)


def attribute_distribution(session: SessionState, table: EmbeddingTable,
                           cfg: UseConfig) -> PreferenceDistribution:
    """Decayed preference score for every candidate attribute."""
    ids = sorted(session.p_cand)
    vecs = table.attr_vecs[ids]
    base = vecs @ table.user_vecs[session.user]
    return _distribution(session, table, cfg, "attribute", ids, vecs, base)
