"""
UI transition graph and the biased random search exploration loop
"""

import csv
import logging
from collections import deque
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Deque, Dict, List, Optional, Protocol, Sequence, Set, Tuple

import numpy as np

from utils.cache import SkeletonCache

from .errors import InvariantViolation, MimicError, UsageError
from .models import Action, ActionType, UiState, enumerate_actions
from .network import InteractionNet, score_actions
from .raster import DEFAULT_VARIANCE, HISTORY, UiContext, encode_context

logger = logging.getLogger(__name__)

ActionKey = Tuple[str, ActionType]


@dataclass
class UtgNode:
    """A UI state in the graph with its exploration ledger."""
    fingerprint: str
    exemplar: UiState
    index: int
    unexplored: List[Action]
    explored: List[Action] = field(default_factory=list)

    def action_for(self, key: ActionKey) -> Optional[Action]:
        for action in self.unexplored + self.explored:
            if action.key == key:
                return action
        return None


@dataclass(frozen=True)
class Edge:
    source: str
    action: Action
    target: str


class UiTransitionGraph:
    """Directed multigraph of observed (state, action, state) transitions."""

    def __init__(self, text: str = "hello"):
        self.text = text
        self.nodes: Dict[str, UtgNode] = {}
        self.edges: List[Edge] = []
        self._edge_keys: Set[Tuple[str, ActionKey, str]] = set()
        self._out: Dict[str, List[Edge]] = {}

    def add_state(self, state: UiState) -> UtgNode:
        """Register a state; the first observation becomes the exemplar."""
        node = self.nodes.get(state.fingerprint)
        if node is None:
            node = UtgNode(state.fingerprint, state, len(self.nodes), enumerate_actions(state, self.text))
            self.nodes[state.fingerprint] = node
            self._out[state.fingerprint] = []
            logger.debug(f"New state {state.fingerprint} with {len(node.unexplored)} actions")
        return node

    def record_transition(self, source: UiState, action: Action, target: UiState):
        """
        Add the edge (source, action, target) and mark the action explored.

        Duplicate edges are ignored; one action leading to different
        states adds one edge per observed target.
        """
        node = self.add_state(source)
        self.add_state(target)
        key = (source.fingerprint, action.key, target.fingerprint)
        if key not in self._edge_keys:
            edge = Edge(source.fingerprint, action, target.fingerprint)
            self._edge_keys.add(key)
            self.edges.append(edge)
            self._out[source.fingerprint].append(edge)
        for index, candidate in enumerate(node.unexplored):
            if candidate.key == action.key:
                node.explored.append(node.unexplored.pop(index))
                break
        else:
            if node.action_for(action.key) is None:
                raise InvariantViolation(f"{action.label()} is not an action of state {source.fingerprint}",
                                         field="action", value=action.label())

    def shortest_path(self, source: str, target: str) -> Optional[List[Action]]:
        """
        Fewest-hop action sequence from source to target.

        Returns:
            Optional[List[Action]]: [] when source equals target, None when
            target is unreachable. Equal-length paths prefer earlier edges.
        """
        for fingerprint in (source, target):
            if fingerprint not in self.nodes:
                raise InvariantViolation(f"State {fingerprint} is not in the graph", field="state", value=fingerprint)
        if source == target:
            return []
        parents: Dict[str, Optional[Edge]] = {source: None}
        queue = deque([source])
        while queue:
            current = queue.popleft()
            for edge in self._out[current]:
                if edge.target in parents:
                    continue
                parents[edge.target] = edge
                if edge.target == target:
                    path: List[Action] = []
                    step: Optional[Edge] = edge
                    while step is not None:
                        path.append(step.action)
                        step = parents[step.source]
                    return path[::-1]
                queue.append(edge.target)
        return None

    def unexplored_count(self, fingerprint: str) -> int:
        return len(self.nodes[fingerprint].unexplored)

    @property
    def states_seen(self) -> int:
        return len(self.nodes)

    @property
    def actions_explored(self) -> int:
        return sum(len(node.explored) for node in self.nodes.values())

    def explored_keys(self) -> List[Tuple[str, str, ActionType]]:
        return [(fp, a.target_element, a.kind) for fp, node in self.nodes.items() for a in node.explored]

    def to_dot(self) -> str:
        """Graphviz rendering: nodes show fingerprint prefix and unexplored count."""
        lines = ["digraph utg {"]
        for fingerprint, node in self.nodes.items():
            lines.append(f'  "{fingerprint}" [label="{fingerprint[:8]}\\n{len(node.unexplored)} unexplored"];')
        for edge in self.edges:
            lines.append(f'  "{edge.source}" -> "{edge.target}" [label="{edge.action.label()}"];')
        lines.append("}")
        return "\n".join(lines) + "\n"


class Purpose(Enum):
    EXPLORE = "explore"
    NAVIGATE = "navigate"
    RESTART = "restart"
    STOP = "stop"


@dataclass(frozen=True)
class Decision:
    purpose: Purpose
    action: Optional[Action] = None
    target: Optional[str] = None


POLICY_VARIANTS = ("model-greedy", "model-weighted", "random")


class ExplorationPolicy:
    """Chooses among unexplored actions: model-guided (greedy or weighted) or uniform."""

    def __init__(self, variant: str, seed: int = 0, model: Optional[InteractionNet] = None,
                 variance: float = DEFAULT_VARIANCE, cache: Optional[SkeletonCache] = None):
        if variant not in POLICY_VARIANTS:
            raise UsageError(f"Unknown policy '{variant}', expected one of {POLICY_VARIANTS}",
                             field="policy", value=variant)
        if variant != "random" and model is None:
            raise UsageError(f"Policy '{variant}' needs a model checkpoint", field="checkpoint")
        self.variant = variant
        self.seed = seed
        self.rng = np.random.default_rng(seed)
        self.model = model
        self.variance = variance
        self.cache = cache if cache is not None else SkeletonCache()

    def scores(self, context: UiContext, candidates: Sequence[Action]) -> List[float]:
        assert self.model is not None
        tensor = encode_context(context, self.model.config.dims, self.variance, self.cache)
        p_type, p_loc = self.model.predict(tensor)
        return score_actions(p_type, p_loc, candidates, context.current)

    def choose(self, context: UiContext, candidates: Sequence[Action]) -> Action:
        if not candidates:
            raise InvariantViolation("Policy asked to choose from no candidates", field="candidates")
        if self.variant == "random":
            return candidates[int(self.rng.integers(0, len(candidates)))]
        scores = self.scores(context, candidates)
        if self.variant == "model-greedy":
            best = min(range(len(candidates)), key=lambda i: (-scores[i], i))
            return candidates[best]
        weights = np.asarray(scores, dtype=np.float64)
        total = weights.sum()
        if not np.isfinite(total) or total <= 0:
            return candidates[int(self.rng.integers(0, len(candidates)))]
        return candidates[int(self.rng.choice(len(candidates), p=weights / total))]


def next_input(utg: UiTransitionGraph, current: UiState, policy: ExplorationPolicy,
               history: Sequence[Tuple[UiState, Action]] = (),
               stranded: Optional[Set[str]] = None) -> Decision:
    """
    Decide the next input.

    Explores an unexplored action of the current state when one exists;
    otherwise navigates one hop toward the state with most unexplored
    actions (ties to the earliest discovered), restarts when that state is
    unreachable and stops when nothing is left anywhere.
    """
    node = utg.nodes.get(current.fingerprint)
    if node is None:
        raise InvariantViolation(f"Current state {current.fingerprint} is not registered", field="state")
    if node.unexplored:
        context = UiContext(current=current, history=tuple(history)[-HISTORY:])
        return Decision(Purpose.EXPLORE, policy.choose(context, node.unexplored))

    excluded = stranded or set()
    candidates = [n for n in utg.nodes.values() if n.unexplored and n.fingerprint not in excluded]
    if not candidates:
        return Decision(Purpose.STOP)
    target = min(candidates, key=lambda n: (-len(n.unexplored), n.index))
    path = utg.shortest_path(current.fingerprint, target.fingerprint)
    if path is None:
        return Decision(Purpose.RESTART, target=target.fingerprint)
    return Decision(Purpose.NAVIGATE, path[0], target.fingerprint)


class Environment(Protocol):
    def reset(self) -> UiState: ...

    def step(self, action: Action) -> UiState: ...


@dataclass
class ExplorationRecord:
    step: int
    state: str
    action_kind: str
    element: str
    purpose: str
    new_state: str
    states_seen: int
    actions_explored: int
    targets_hit: int


LOG_COLUMNS = ["step", "state", "action_kind", "element", "purpose", "new_state",
               "states_seen", "actions_explored", "targets_hit"]


@dataclass
class ExplorationLog:
    """Ordered record of every input sent during one session."""
    records: List[ExplorationRecord] = field(default_factory=list)
    restarts: int = 0
    failure: Optional[str] = None
    first_target_step: Optional[int] = None

    def to_csv(self, path: Path, header: str = ""):
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, 'w', newline='', encoding='utf-8') as f:
            if header:
                f.write(f"# {header}\n")
            writer = csv.writer(f, lineterminator="\n")
            writer.writerow(LOG_COLUMNS)
            for record in self.records:
                writer.writerow([getattr(record, column) for column in LOG_COLUMNS])
            if self.failure is not None:
                writer.writerow([len(self.records) + 1, "", "", "", "failure", self.failure, "", "", ""])


def run_exploration(env: Environment, policy: ExplorationPolicy, budget: int,
                    text: str = "hello") -> Tuple[UiTransitionGraph, ExplorationLog]:
    """
    Explore an app until everything known is explored or the budget runs out.

    Each step observes the state, picks an input with ``next_input``,
    performs it and records the transition. Restarts relaunch the app
    without consuming budget; a target still unreachable right after a
    restart is set aside. An environment failure truncates the log.

    Args:
        env: App environment with ``reset`` and ``step``
        policy: Exploration policy
        budget: Maximum number of inputs

    Returns:
        Tuple[UiTransitionGraph, ExplorationLog]: Graph and log, partial on failure
    """
    if budget < 1:
        raise UsageError(f"Budget must be at least 1, got {budget}", field="budget", value=budget)
    utg = UiTransitionGraph(text)
    log = ExplorationLog()
    history: Deque[Tuple[UiState, Action]] = deque(maxlen=HISTORY)
    stranded: Set[str] = set()
    targets_seen: Set[str] = set()

    state = env.reset()
    utg.add_state(state)
    step = 0
    while step < budget:
        decision = next_input(utg, state, policy, history, stranded)
        if decision.purpose is Purpose.STOP:
            logger.info(f"Exploration finished after {step} steps: no unexplored actions left")
            break
        if decision.purpose is Purpose.RESTART:
            log.restarts += 1
            state = env.reset()
            utg.add_state(state)
            history.clear()
            assert decision.target is not None
            if utg.shortest_path(state.fingerprint, decision.target) is None:
                logger.warning(f"State {decision.target} unreachable after restart; setting it aside")
                stranded.add(decision.target)
            continue

        action = decision.action
        assert action is not None
        try:
            new_state = env.step(action)
        except MimicError as e:
            logger.error(f"Exploration aborted at step {step + 1}: {e}")
            log.failure = str(e)
            break
        utg.record_transition(state, action, new_state)
        step += 1
        if getattr(env, "is_target", False):
            if new_state.fingerprint not in targets_seen and log.first_target_step is None:
                log.first_target_step = step
            targets_seen.add(new_state.fingerprint)
        log.records.append(ExplorationRecord(
            step=step,
            state=state.fingerprint,
            action_kind=action.kind.value,
            element=action.target_element,
            purpose=decision.purpose.value,
            new_state=new_state.fingerprint,
            states_seen=utg.states_seen,
            actions_explored=utg.actions_explored,
            targets_hit=len(targets_seen),
        ))
        history.append((state, action))
        state = new_state

    return utg, log
