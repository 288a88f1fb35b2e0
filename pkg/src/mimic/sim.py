"""
Deterministic synthetic apps and a preference-biased scripted user
"""

import json
import logging
from collections import deque
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, FrozenSet, List, Optional, Set, Tuple, Union

import numpy as np

from utils.validation import SchemaValidator

from .errors import DataError, SimError
from .models import Action, ActionType, InteractionFlow, UiState, enumerate_actions
from .traces import MotionEvent, write_raw_trace

logger = logging.getLogger(__name__)

ActionKey = Tuple[str, str, ActionType]

ACTION_SPACING_MS = 2500
CAPTURE_LEAD_MS = 50
TOUCH_MS = 150
LONG_TOUCH_MS = 800
SWIPE_MS = 200
SWIPE_PX = 120
MIN_SWIPE_PX = 55
TOUCH_JITTER = (5, 3)
KEY_TAPS = 3
KEY_TAP_MS = 100
KEY_GAP_MS = 200


@dataclass
class SimAppSpec:
    """A synthetic app: named UI states wired by (state, element, kind) transitions."""
    app_id: str
    screen: Tuple[int, int]
    states: Dict[str, UiState]
    initial: str
    transitions: Dict[ActionKey, str] = field(default_factory=dict)
    prefs: Dict[ActionKey, float] = field(default_factory=dict)
    targets: FrozenSet[str] = frozenset()

    def __post_init__(self):
        self.targets = frozenset(self.targets)
        self._actions: Dict[str, List[Action]] = {}
        self._by_fingerprint = {state.fingerprint: name for name, state in self.states.items()}

    def actions(self, name: str) -> List[Action]:
        """Enumerable actions of a named state (memoized)."""
        if name not in self._actions:
            self._actions[name] = enumerate_actions(self.states[name])
        return self._actions[name]

    def state_name(self, state: UiState) -> Optional[str]:
        return self._by_fingerprint.get(state.fingerprint)

    def validate(self) -> None:
        """
        Check structural invariants.

        Raises:
            SimError: On unknown states, non-enumerable wiring or colliding fingerprints
        """
        if self.initial not in self.states:
            raise SimError(f"{self.app_id}: initial state '{self.initial}' does not exist", field="initial")
        if len(self._by_fingerprint) != len(self.states):
            raise SimError(f"{self.app_id}: two states share a fingerprint", field="states")
        for name, state in self.states.items():
            if state.screen != self.screen:
                raise SimError(f"{self.app_id}: state '{name}' has screen {state.screen}, app has {self.screen}",
                               field=f"states.{name}")
        for label, table in (("transitions", self.transitions), ("prefs", self.prefs)):
            for (source, element, kind), value in table.items():
                if source not in self.states:
                    raise SimError(f"{self.app_id}: {label} source '{source}' does not exist", field=label)
                if not any(a.key == (element, kind) for a in self.actions(source)):
                    raise SimError(f"{self.app_id}: {kind.value}@{element} is not enumerable in '{source}'",
                                   field=label, value=(source, element, kind.value))
                if label == "transitions" and value not in self.states:
                    raise SimError(f"{self.app_id}: transition target '{value}' does not exist", field=label)
                if label == "prefs" and value <= 0:
                    raise SimError(f"{self.app_id}: preference weights must be positive", field=label, value=value)
        for target in self.targets:
            if target not in self.states:
                raise SimError(f"{self.app_id}: target '{target}' does not exist", field="targets")

    def successors(self, name: str) -> List[str]:
        """Next state for every enumerable action, in enumeration order."""
        return [self.transitions.get((name, a.target_element, a.kind), name) for a in self.actions(name)]

    def reachable_states(self) -> List[str]:
        """States reachable from the initial state, in BFS order."""
        seen = {self.initial}
        order = [self.initial]
        queue = deque([self.initial])
        while queue:
            for nxt in self.successors(queue.popleft()):
                if nxt not in seen:
                    seen.add(nxt)
                    order.append(nxt)
                    queue.append(nxt)
        return order

    def total_actions(self, reachable_only: bool = True) -> int:
        names = self.reachable_states() if reachable_only else list(self.states)
        return sum(len(self.actions(name)) for name in names)

    def to_dict(self) -> Dict[str, Any]:
        return {
            "app_id": self.app_id,
            "screen": {"w": self.screen[0], "h": self.screen[1]},
            "initial": self.initial,
            "states": {name: state.to_dict() for name, state in sorted(self.states.items())},
            "transitions": [
                {"from": s, "element": e, "kind": k.value, "to": t}
                for (s, e, k), t in self.transitions.items()
            ],
            "prefs": [
                {"state": s, "element": e, "kind": k.value, "w": w}
                for (s, e, k), w in self.prefs.items()
            ],
            "targets": sorted(self.targets),
        }

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "SimAppSpec":
        SchemaValidator.require("sim_app", data)
        try:
            spec = cls(
                app_id=data["app_id"],
                screen=(data["screen"]["w"], data["screen"]["h"]),
                states={name: UiState.from_dict(state, validate=False) for name, state in data["states"].items()},
                initial=data["initial"],
                transitions={
                    (t["from"], t["element"], ActionType(t["kind"])): t["to"] for t in data["transitions"]
                },
                prefs={
                    (p["state"], p["element"], ActionType(p["kind"])): float(p["w"]) for p in data.get("prefs", [])
                },
                targets=frozenset(data.get("targets", [])),
            )
        except ValueError as e:
            raise SimError(f"Invalid app spec {data.get('app_id')}: {e}", field="states")
        spec.validate()
        return spec

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=1)

    @classmethod
    def from_json(cls, text: str) -> "SimAppSpec":
        return cls.from_dict(json.loads(text))


class SimSession:
    """One running instance of a synthetic app."""

    def __init__(self, spec: SimAppSpec, seed: int = 0, rng: Optional[np.random.Generator] = None):
        self.spec = spec
        self.current = spec.initial
        self.steps = 0
        self.seed = seed
        self.rng = rng if rng is not None else np.random.default_rng(seed)

    @property
    def state(self) -> UiState:
        return self.spec.states[self.current]

    @property
    def is_target(self) -> bool:
        return self.current in self.spec.targets

    def observe(self) -> UiState:
        return self.state

    def step(self, action: Action) -> UiState:
        """
        Perform an action; unwired actions leave the state unchanged.

        Raises:
            SimError: If the action is not enumerable in the current state
        """
        if not any(a.key == action.key for a in self.spec.actions(self.current)):
            raise SimError(f"{self.spec.app_id}: {action.label()} is not possible in state '{self.current}'",
                           field="action", value=action.label())
        self.current = self.spec.transitions.get((self.current, action.target_element, action.kind), self.current)
        self.steps += 1
        return self.state

    def reset(self) -> UiState:
        """Relaunch the app; the step counter keeps running."""
        self.current = self.spec.initial
        return self.state

    def scripted_user_step(self) -> Action:
        """
        Sample an action proportionally to the user's preference weights.

        Unlisted actions weigh 1.
        """
        actions = self.spec.actions(self.current)
        if not actions:
            raise SimError(f"{self.spec.app_id}: state '{self.current}' offers no action", field="state")
        weights = np.array([
            self.spec.prefs.get((self.current, a.target_element, a.kind), 1.0) for a in actions
        ])
        return actions[int(self.rng.choice(len(actions), p=weights / weights.sum()))]


def target_hit_probability(spec: SimAppSpec, steps: int) -> float:
    """
    Exact probability that uniformly random actions reach a target within ``steps`` steps.

    Propagates the walk's state distribution from the initial state; mass
    entering a target is absorbed.
    """
    if spec.initial in spec.targets:
        return 1.0
    mass: Dict[str, float] = {spec.initial: 1.0}
    hit = 0.0
    for _ in range(steps):
        nxt: Dict[str, float] = {}
        for name, p in mass.items():
            successors = spec.successors(name)
            if not successors:
                nxt[name] = nxt.get(name, 0.0) + p
                continue
            share = p / len(successors)
            for succ in successors:
                if succ in spec.targets:
                    hit += share
                else:
                    nxt[succ] = nxt.get(succ, 0.0) + share
        mass = nxt
    return hit


def walk_flow(session: SimSession, flow_len: int) -> InteractionFlow:
    """One scripted-user walk from the initial state."""
    session.reset()
    states: List[UiState] = []
    actions: List[Action] = []
    for _ in range(flow_len):
        state = session.state
        action = session.scripted_user_step()
        states.append(state)
        actions.append(action)
        session.step(action)
    return InteractionFlow(states=tuple(states), actions=tuple(actions), app_id=session.spec.app_id)


def _clamp(value: int, upper: int) -> int:
    return min(max(value, 0), upper - 1)


def synthesize_events(flow: InteractionFlow, start_ms: int = 0
                      ) -> Tuple[List[MotionEvent], List[Tuple[int, UiState]]]:
    """
    Realize a flow as pointer events plus state captures.

    Gestures stay well inside the classification regions: touches move
    about 6 px, long touches are held 800 ms, swipes travel 120 px, text
    input is three keyboard taps. Each state is captured 50 ms before its
    action.

    Raises:
        SimError: If a swipe cannot travel far enough inside the screen
    """
    events: List[MotionEvent] = []
    captures: List[Tuple[int, UiState]] = []
    for index, (state, action) in enumerate(flow.pairs()):
        t = start_ms + ACTION_SPACING_MS * (index + 1)
        ref = state.fingerprint
        width, height = state.screen
        x, y = action.location
        captures.append((t - CAPTURE_LEAD_MS, state))

        if action.kind is ActionType.INPUT_TEXT:
            key_x, key_y = width // 2, height - 40
            for tap in range(KEY_TAPS):
                down = t + tap * (KEY_TAP_MS + KEY_GAP_MS)
                events.append(MotionEvent(down, "enter", key_x, key_y, True, action.target_element, ref))
                events.append(MotionEvent(down + KEY_TAP_MS, "leave", key_x, key_y, True,
                                          action.target_element, ref))
            continue

        if action.kind in (ActionType.TOUCH, ActionType.LONG_TOUCH):
            duration = TOUCH_MS if action.kind is ActionType.TOUCH else LONG_TOUCH_MS
            end = (_clamp(x + TOUCH_JITTER[0], width), _clamp(y + TOUCH_JITTER[1], height))
        else:
            dx, dy = {
                ActionType.SWIPE_UP: (0, -SWIPE_PX),
                ActionType.SWIPE_DOWN: (0, SWIPE_PX),
                ActionType.SWIPE_LEFT: (-SWIPE_PX, 0),
                ActionType.SWIPE_RIGHT: (SWIPE_PX, 0),
            }[action.kind]
            duration = SWIPE_MS
            end = (_clamp(x + dx, width), _clamp(y + dy, height))
            if abs(end[0] - x) + abs(end[1] - y) < MIN_SWIPE_PX:
                raise SimError(f"{action.label()} at {action.location} cannot swipe {SWIPE_PX} px "
                               f"inside the screen", field="location", value=action.location)
        events.append(MotionEvent(t, "enter", x, y, False, None, ref))
        events.append(MotionEvent(t + duration // 2, "move", (x + end[0]) // 2, (y + end[1]) // 2, False, None, ref))
        events.append(MotionEvent(t + duration, "leave", end[0], end[1], False, None, ref))
    return events, captures


@dataclass
class TraceCorpus:
    """Flows generated from one app, with their raw event realizations."""
    flows: List[InteractionFlow]
    raw: List[Tuple[str, List[MotionEvent], List[Tuple[int, UiState]]]] = field(default_factory=list)


def generate_traces(spec: SimAppSpec, n_flows: int, flow_len: int, seed: int,
                    emit_raw: bool = False) -> TraceCorpus:
    """
    Scripted-user flows from a synthetic app.

    Args:
        spec: App to walk
        n_flows: Number of flows
        flow_len: (state, action) pairs per flow
        seed: Seed of the user's choices
        emit_raw: Also synthesize pointer events per flow

    Returns:
        TraceCorpus: Flows, plus (trace name, events, captures) when emit_raw
    """
    if n_flows < 1 or flow_len < 1:
        raise ValueError(f"n_flows and flow_len must be at least 1, got {n_flows}, {flow_len}")
    session = SimSession(spec, seed)
    corpus = TraceCorpus(flows=[])
    for number in range(n_flows):
        flow = walk_flow(session, flow_len)
        corpus.flows.append(flow)
        if emit_raw:
            events, captures = synthesize_events(flow)
            corpus.raw.append((f"{spec.app_id}__{number}", events, captures))
    logger.debug(f"Generated {n_flows} flows of length {flow_len} for {spec.app_id}")
    return corpus


def write_raw_corpus(corpus: TraceCorpus, raw_dir: Path, header: str = ""):
    for name, events, captures in corpus.raw:
        write_raw_trace(raw_dir, name, events, captures, header)


def coverage(spec: SimAppSpec, explored: Set[Tuple[str, str, ActionType]]) -> float:
    """Fraction of the reachable (state, element, kind) actions that were performed."""
    total = spec.total_actions()
    return len(explored) / total if total else 1.0


def load_suite(path: Union[str, Path]) -> List[SimAppSpec]:
    """
    Load app specs from a JSON file holding one spec or a list, or a directory of them.

    Raises:
        DataError: On unreadable or invalid files
    """
    path = Path(path)
    files = sorted(path.glob("*.json")) if path.is_dir() else [path]
    specs: List[SimAppSpec] = []
    for file in files:
        try:
            data = json.loads(file.read_text(encoding='utf-8'))
        except (OSError, json.JSONDecodeError) as e:
            raise DataError(f"Cannot read app spec {file}: {e}", field="suite", value=str(file))
        for entry in data if isinstance(data, list) else [data]:
            specs.append(SimAppSpec.from_dict(entry))
    logger.info(f"Loaded {len(specs)} app specs from {path}")
    return specs


def save_suite(specs: List[SimAppSpec], out_dir: Path, header: str = ""):
    """Write one ``<app_id>.json`` per spec, tagged with the run header."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    for spec in specs:
        data = spec.to_dict()
        if header:
            data["header"] = header
        (out_dir / f"{spec.app_id}.json").write_text(json.dumps(data, sort_keys=True, indent=1) + "\n",
                                                     encoding='utf-8')
    logger.info(f"Wrote {len(specs)} app specs to {out_dir}")
