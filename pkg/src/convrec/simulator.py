"""Conversation environment: candidate-set semantics, user response rules, rewards.

A session simulates one user looking for a small set of target items. The
user's intent is split into a *clear* space of attribute types (answered
honestly) and a *vague* space (potentially preferred attributes are clicked
stochastically). Two candidate-update modes exist:

- SOFT mode: clicks never filter the candidate items; only failed
  recommendation lists are removed. Target items always survive.
- HARD mode: clicks/non-clicks filter items directly (the baseline behavior
  this environment is designed to contrast with), which can discard targets.

Candidate attributes always equal the union of attributes of the candidate
items. Every system action consumes one turn; when the turn budget expires an
extra quit penalty is added to that turn's reward.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Iterable, Optional

import numpy as np

from .catalog import Catalog

MODE_SOFT = "VPMCR"  # soft feedback: clicks never shrink the candidate items
MODE_HARD = "MIMCR"  # hard feedback: clicks/non-clicks filter the candidates

DEFAULT_MAX_TURNS = 15
DEFAULT_TARGET_SET_SIZE = 2
DEFAULT_VAGUE_CLICK_PROB = 0.5


class SessionError(ValueError):
    pass


@dataclass(frozen=True)
class RewardConfig:
    rec_suc: float = 1.0
    rec_fail: float = -0.01
    ask_suc: float = -0.1
    ask_fail: float = -0.1
    quit: float = -0.3

    def __post_init__(self):
        if not (self.rec_suc > 0 > self.rec_fail and 0 > self.ask_suc
                and 0 > self.ask_fail and 0 > self.quit):
            raise SessionError("rec_suc must be positive and every penalty negative")


@dataclass
class TurnRecord:
    kind: str  # "ask" | "recommend"
    reward: float
    asked_type: Optional[int] = None
    displayed: tuple[int, ...] = ()
    clicked: frozenset[int] = frozenset()
    nonclicked: frozenset[int] = frozenset()
    recommended: tuple[int, ...] = ()
    n_candidates: int = 0  # |V_cand| after this turn

    def to_json(self) -> dict:
        return {
            "kind": self.kind,
            "asked_type": self.asked_type,
            "displayed": list(self.displayed),
            "clicked": sorted(self.clicked),
            "nonclicked": sorted(self.nonclicked),
            "recommended": list(self.recommended),
            "reward": self.reward,
            "n_candidates": self.n_candidates,
        }


OUTCOME_RUNNING = "running"
OUTCOME_SUCCESS = "success"
OUTCOME_QUIT = "quit"


@dataclass
class SessionState:
    """One conversation. Single-threaded; catalogs are shared read-only."""

    catalog: Catalog
    user: int
    targets: frozenset[int]
    intent_space: frozenset[int]  # attribute types of the target items
    gt_attrs: frozenset[int]  # attributes of the target items
    clear_space: frozenset[int]
    vague_space: frozenset[int]
    p0: int
    mode: str
    max_turns: int
    vague_click_prob: float
    rng: np.random.Generator  # drives vague responses only
    sample_rng: np.random.Generator  # drives graph/item sampling downstream
    v_cand: set[int] = field(default_factory=set)
    p_cand: set[int] = field(default_factory=set)
    displayed_attrs: set[int] = field(default_factory=set)
    click_sequence: list[int] = field(default_factory=list)  # click order, all turns
    nonclick_history: set[int] = field(default_factory=set)
    history: list[TurnRecord] = field(default_factory=list)
    turn: int = 0
    done: bool = False
    outcome: str = OUTCOME_RUNNING
    success_turn: Optional[int] = None  # 1-based
    target_rank: Optional[int] = None  # 1-based rank in the successful list
    target_filtered: bool = False  # a target left v_cand other than by success
    rewards: RewardConfig = field(default_factory=RewardConfig)
    use_cache: dict = field(default_factory=dict)  # incremental estimator state

    @property
    def click_history(self) -> set[int]:
        return set(self.click_sequence)

    def running(self) -> bool:
        return not self.done

    def _recompute_p_cand(self) -> None:
        self.p_cand = set(self.catalog.attrs_of_items(self.v_cand))

    def askable_attrs(self) -> set[int]:
        return self.p_cand - self.displayed_attrs

    def transcript(self) -> list[dict]:
        return [rec.to_json() for rec in self.history]

    def write_transcript(self, fh) -> None:
        for rec in self.history:
            fh.write(json.dumps(rec.to_json(), sort_keys=True) + "\n")


def new_session(catalog: Catalog, user: int, targets: Iterable[int],
                vague_ratio: float = 0.5, mode: str = MODE_SOFT,
                max_turns: int = DEFAULT_MAX_TURNS, seed: int = 0,
                rewards: RewardConfig = RewardConfig(),
                vague_click_prob: float = DEFAULT_VAGUE_CLICK_PROB) -> SessionState:
    """Initialize a session from a user and their target item set.

    The opening query attribute p0 is drawn uniformly (seeded) from the
    attributes common to all targets; the vague type space is a uniform random
    subset of the intent space of size round(vague_ratio * |intent space|).
    """
    targets = frozenset(targets)
    if not targets:
        raise SessionError("target set is empty")
    if user not in catalog.users:
        raise SessionError(f"unknown user {user}")
    for v in targets:
        if v not in catalog.items:
            raise SessionError(f"unknown target item {v}")
    if not 0.0 <= vague_ratio <= 1.0:
        raise SessionError("vague_ratio must be in [0, 1]")
    if mode not in (MODE_SOFT, MODE_HARD):
        raise SessionError(f"unknown mode {mode!r}")

    common = sorted(catalog.common_attrs(targets))
    if not common:
        raise SessionError("target items share no common attribute")

    root = np.random.default_rng(seed)
    rng, sample_rng = root.spawn(2)

    gt_attrs = catalog.attrs_of_items(targets)
    intent_space = catalog.types_of_attrs(gt_attrs)
    p0 = int(rng.choice(common))

    types_sorted = sorted(intent_space)
    n_vague = round(vague_ratio * len(types_sorted))
    vague = frozenset(int(t) for t in rng.choice(types_sorted, size=n_vague, replace=False))
    clear = intent_space - vague

    session = SessionState(
        catalog=catalog,
        user=user,
        targets=targets,
        intent_space=intent_space,
        gt_attrs=gt_attrs,
        clear_space=clear,
        vague_space=vague,
        p0=p0,
        mode=mode,
        max_turns=max_turns,
        vague_click_prob=vague_click_prob,
        rng=rng,
        sample_rng=sample_rng,
        rewards=rewards,
    )
    session.v_cand = set(catalog.items_by_attr[p0])
    session._recompute_p_cand()
    # The opening query already told the system about p0; re-asking it would
    # be information-free, so it counts as displayed from the start.
    session.displayed_attrs.add(p0)
    return session


def _check_budget(session: SessionState, reward: float) -> float:
    """Advance the turn counter; add the quit penalty if the budget expired."""
    session.turn += 1
    if session.turn >= session.max_turns and not session.done:
        session.done = True
        session.outcome = OUTCOME_QUIT
        reward += session.rewards.quit
    return reward


def _end_if_exhausted(session: SessionState) -> None:
    # Hard filtering can empty the candidate set, leaving no legal action.
    if not session.done and not session.v_cand:
        session.done = True
        session.outcome = OUTCOME_QUIT


def _track_target_loss(session: SessionState, before: set[int]) -> None:
    lost = (before & session.targets) - session.v_cand
    if lost:
        session.target_filtered = True


def respond_to_question(session: SessionState, asked_type: int,
                        displayed: Iterable[int]) -> tuple[frozenset[int], frozenset[int]]:
    """Apply the user's click response to a multi-choice attribute question."""
    if session.done:
        raise SessionError("session is finished")
    displayed = tuple(displayed)
    if not displayed:
        raise SessionError("displayed attribute list is empty")
    if len(set(displayed)) != len(displayed):
        raise SessionError("displayed attributes contain duplicates")
    for p in displayed:
        if session.catalog.attr_type_of.get(p) != asked_type:
            raise SessionError(f"attribute {p} is not of type {asked_type}")
        if p not in session.p_cand:
            raise SessionError(f"attribute {p} is not a candidate attribute")
        if p in session.displayed_attrs:
            raise SessionError(f"attribute {p} was already displayed")

    if asked_type in session.clear_space:
        clicked = frozenset(p for p in displayed if p in session.gt_attrs)
    elif asked_type in session.vague_space:
        clicked = frozenset(
            p for p in displayed
            if p in session.gt_attrs and session.rng.random() < session.vague_click_prob
        )
    else:  # type outside the intent space: nothing is preferred
        clicked = frozenset()
    nonclicked = frozenset(displayed) - clicked

    session.displayed_attrs.update(displayed)
    session.click_sequence.extend(p for p in displayed if p in clicked)
    session.nonclick_history.update(nonclicked)

    if session.mode == MODE_HARD:
        before = set(session.v_cand)
        if clicked:
            session.v_cand = {v for v in session.v_cand
                              if session.catalog.item_attrs[v] & clicked}
        else:
            shown = set(displayed)
            session.v_cand = {v for v in session.v_cand
                              if not (session.catalog.item_attrs[v] & shown)}
        _track_target_loss(session, before)
        session._recompute_p_cand()

    reward = session.rewards.ask_suc if clicked else session.rewards.ask_fail
    reward = _check_budget(session, reward)
    _end_if_exhausted(session)
    session.history.append(TurnRecord(
        kind="ask", asked_type=asked_type, displayed=displayed,
        clicked=clicked, nonclicked=nonclicked, reward=reward,
        n_candidates=len(session.v_cand),
    ))
    return clicked, nonclicked


def respond_to_recommendation(session: SessionState, recommended: Iterable[int]) -> str:
    """Apply the user's accept/reject response to a recommendation list."""
    if session.done:
        raise SessionError("session is finished")
    recommended = tuple(recommended)
    if not recommended:
        raise SessionError("recommendation list is empty")
    for v in recommended:
        if v not in session.v_cand:
            raise SessionError(f"item {v} is not a candidate item")

    hits = [i for i, v in enumerate(recommended) if v in session.targets]
    if hits:
        session.done = True
        session.outcome = OUTCOME_SUCCESS
        session.success_turn = session.turn + 1
        session.target_rank = hits[0] + 1
        session.turn += 1
        reward = session.rewards.rec_suc
    else:
        session.v_cand -= set(recommended)
        session._recompute_p_cand()
        reward = _check_budget(session, session.rewards.rec_fail)
        _end_if_exhausted(session)

    session.history.append(TurnRecord(
        kind="recommend", recommended=recommended, reward=reward,
        n_candidates=len(session.v_cand),
    ))
    return session.outcome


# ---------------------------------------------------------- human-driven mode
# Live sessions reuse the exact state-update semantics above, but the answers
# come from outside instead of the simulated response rules. There is no
# ground-truth target set, so success is whatever the human accepts.

def live_session(catalog: Catalog, p0: int, user: int = 0,
                 max_turns: int = DEFAULT_MAX_TURNS, seed: int = 0,
                 rewards: RewardConfig = RewardConfig()) -> SessionState:
    """Open a session from a query attribute, with a human answering."""
    if p0 not in catalog.attributes:
        raise SessionError(f"unknown attribute {p0}")
    if user not in catalog.users:
        raise SessionError(f"unknown user {user}")
    initial = catalog.items_by_attr[p0]
    if not initial:
        raise SessionError("empty candidate set: no items carry the query attribute")
    root = np.random.default_rng(seed)
    rng, sample_rng = root.spawn(2)
    session = SessionState(
        catalog=catalog, user=user, targets=frozenset(), intent_space=frozenset(),
        gt_attrs=frozenset(), clear_space=frozenset(), vague_space=frozenset(),
        p0=p0, mode=MODE_SOFT, max_turns=max_turns,
        vague_click_prob=DEFAULT_VAGUE_CLICK_PROB, rng=rng, sample_rng=sample_rng,
        rewards=rewards,
    )
    session.v_cand = set(initial)
    session._recompute_p_cand()
    session.displayed_attrs.add(p0)
    return session


def apply_click_answer(session: SessionState, asked_type: int,
                       displayed: Iterable[int], clicked: Iterable[int]) -> None:
    """Record an externally supplied click answer for an ask turn."""
    if session.done:
        raise SessionError("session is finished")
    displayed = tuple(displayed)
    clicked = frozenset(clicked)
    if not displayed:
        raise SessionError("displayed attribute list is empty")
    if not clicked <= set(displayed):
        raise SessionError("clicked attributes must be a subset of the displayed ones")
    for p in displayed:
        if session.catalog.attr_type_of.get(p) != asked_type:
            raise SessionError(f"attribute {p} is not of type {asked_type}")
        if p in session.displayed_attrs:
            raise SessionError(f"attribute {p} was already displayed")
    nonclicked = frozenset(displayed) - clicked

    session.displayed_attrs.update(displayed)
    session.click_sequence.extend(p for p in displayed if p in clicked)
    session.nonclick_history.update(nonclicked)
    reward = session.rewards.ask_suc if clicked else session.rewards.ask_fail
    reward = _check_budget(session, reward)
    session.history.append(TurnRecord(
        kind="ask", asked_type=asked_type, displayed=displayed,
        clicked=clicked, nonclicked=nonclicked, reward=reward,
        n_candidates=len(session.v_cand),
    ))


def apply_recommendation_answer(session: SessionState, recommended: Iterable[int],
                                accepted: Optional[int]) -> str:
    """Record an externally supplied accept/reject for a recommendation turn."""
    if session.done:
        raise SessionError("session is finished")
    recommended = tuple(recommended)
    if not recommended:
        raise SessionError("recommendation list is empty")
    if accepted is not None:
        if accepted not in recommended:
            raise SessionError(f"accepted item {accepted} was not recommended")
        session.done = True
        session.outcome = OUTCOME_SUCCESS
        session.success_turn = session.turn + 1
        session.target_rank = recommended.index(accepted) + 1
        session.turn += 1
        reward = session.rewards.rec_suc
    else:
        session.v_cand -= set(recommended)
        session._recompute_p_cand()
        reward = _check_budget(session, session.rewards.rec_fail)
        _end_if_exhausted(session)
    session.history.append(TurnRecord(
        kind="recommend", recommended=recommended, reward=reward,
        n_candidates=len(session.v_cand),
    ))
    return session.outcome
