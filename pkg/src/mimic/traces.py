"""
Trace preprocessing: pointer events to interaction flows
"""

import bisect
import json
import logging
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Dict, Iterable, List, Mapping, Optional, Sequence, Tuple

from utils.validation import SchemaValidator

from .errors import DataError, TraceError
from .models import (
    DEFAULT_TEXT,
    Action,
    ActionType,
    InteractionFlow,
    Point,
    UiState,
    enumerate_actions,
)

logger = logging.getLogger(__name__)

TOUCH_RADIUS_PX = 50.0
LONG_TOUCH_MS = 500
TEXT_GAP_MS = 1000

StateStream = Sequence[Tuple[int, UiState]]


@dataclass(frozen=True)
class MotionEvent:
    """One sampled pointer position."""
    t: int
    phase: str
    x: int
    y: int
    keyboard_shown: bool = False
    focused_editable: Optional[str] = None
    state_ref: str = ""

    def __post_init__(self):
        if self.phase not in ("enter", "move", "leave"):
            raise ValueError(f"Unknown motion phase: {self.phase}")

    def to_dict(self) -> Dict[str, Any]:
        return {
            "t": self.t,
            "phase": self.phase,
            "x": self.x,
            "y": self.y,
            "kbd": self.keyboard_shown,
            "edit": self.focused_editable,
            "state": self.state_ref,
        }

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "MotionEvent":
        SchemaValidator.require("motion_event", data)
        return cls(
            t=data["t"],
            phase=data["phase"],
            x=data["x"],
            y=data["y"],
            keyboard_shown=data.get("kbd", False),
            focused_editable=data.get("edit"),
            state_ref=data["state"],
        )


@dataclass(frozen=True)
class InteractionSession:
    """Span between the cursor entering and leaving the screen."""
    time_start: int
    time_end: int
    loc_start: Point
    loc_end: Point
    keyboard_shown: bool = False
    focused_editable: Optional[str] = None
    state_before: Optional[UiState] = None
    state_ref: str = ""

    def __post_init__(self):
        if self.time_end < self.time_start:
            raise ValueError(f"Session ends ({self.time_end}) before it starts ({self.time_start})")

    @property
    def duration(self) -> int:
        return self.time_end - self.time_start

    @property
    def distance(self) -> float:
        return math.hypot(self.loc_end[0] - self.loc_start[0], self.loc_end[1] - self.loc_start[1])

    @property
    def is_keyboard(self) -> bool:
        return self.keyboard_shown and self.focused_editable is not None


@dataclass(frozen=True)
class TimedAction:
    """An extracted action before it is paired with a UI state."""
    kind: ActionType
    location: Point
    t_ms: int
    element: Optional[str] = None
    text: Optional[str] = None


def sessionize(events: Sequence[MotionEvent],
               states: Optional[Mapping[str, UiState]] = None) -> List[InteractionSession]:
    """
    Aggregate pointer events into interaction sessions.

    Args:
        events: Events ordered by timestamp
        states: Optional lookup from state reference to UI state

    Returns:
        List[InteractionSession]: One session per enter..leave span

    Raises:
        TraceError: On decreasing timestamps or an enter inside an open span
    """
    sessions: List[InteractionSession] = []
    opened: Optional[MotionEvent] = None
    previous_t: Optional[int] = None

    for index, event in enumerate(events):
        if previous_t is not None and event.t < previous_t:
            raise TraceError(f"Event {index} goes back in time ({event.t} < {previous_t})",
                             field=f"events[{index}].t", value=event.t)
        previous_t = event.t

        if event.phase == "enter":
            if opened is not None:
                raise TraceError(f"Event {index} enters before the span opened at t={opened.t} left",
                                 field=f"events[{index}].phase", value=event.phase)
            opened = event
        elif event.phase == "leave":
            if opened is None:
                logger.warning(f"Ignoring leave event {index} without a matching enter")
                continue
            sessions.append(InteractionSession(
                time_start=opened.t,
                time_end=event.t,
                loc_start=(opened.x, opened.y),
                loc_end=(event.x, event.y),
                keyboard_shown=opened.keyboard_shown,
                focused_editable=opened.focused_editable,
                state_before=states.get(opened.state_ref) if states is not None else None,
                state_ref=opened.state_ref,
            ))
            opened = None

    if opened is not None:
        logger.warning(f"Dropping dangling enter at t={opened.t}: stream ended before leave")
    return sessions


def classify_session(session: InteractionSession, touch_radius_px: float = TOUCH_RADIUS_PX,
                     long_touch_ms: int = LONG_TOUCH_MS) -> Tuple[ActionType, Point]:
    """
    Classify one session by distance travelled and duration.

    Short moves are touches (long touches when held), longer moves are
    swipes along their dominant axis, horizontal on ties. Screen y grows
    downwards.

    Returns:
        Tuple[ActionType, Point]: Gesture type and the start location
    """
    if session.distance < touch_radius_px:
        if session.duration < long_touch_ms:
            return ActionType.TOUCH, session.loc_start
        return ActionType.LONG_TOUCH, session.loc_start

    dx = session.loc_end[0] - session.loc_start[0]
    dy = session.loc_end[1] - session.loc_start[1]
    if abs(dx) >= abs(dy):
        kind = ActionType.SWIPE_RIGHT if dx > 0 else ActionType.SWIPE_LEFT
    else:
        kind = ActionType.SWIPE_DOWN if dy > 0 else ActionType.SWIPE_UP
    return kind, session.loc_start


def _classified(session: InteractionSession, touch_radius_px: float, long_touch_ms: int) -> TimedAction:
    kind, location = classify_session(session, touch_radius_px, long_touch_ms)
    return TimedAction(kind=kind, location=location, t_ms=session.time_start)


def merge_text_sessions(sessions: Sequence[InteractionSession],
                        touch_radius_px: float = TOUCH_RADIUS_PX,
                        long_touch_ms: int = LONG_TOUCH_MS,
                        text_gap_ms: int = TEXT_GAP_MS,
                        placeholder: str = DEFAULT_TEXT) -> List[TimedAction]:
    """
    Collapse keyboard typing into input_text actions.

    A run of consecutive sessions with the keyboard shown on the same
    focused editable becomes one input_text at that element's center. A
    run also ends when the pause between two sessions exceeds
    ``text_gap_ms``. Every other session is classified on its own.

    Args:
        sessions: Sessions ordered by time

    Returns:
        List[TimedAction]: Extracted actions in time order
    """
    actions: List[TimedAction] = []
    index = 0
    while index < len(sessions):
        session = sessions[index]
        if session.keyboard_shown and session.focused_editable is None:
            logger.warning(f"Keyboard shown without a focused editable at t={session.time_start}; "
                           f"classifying the session as a gesture")
        if not session.is_keyboard:
            actions.append(_classified(session, touch_radius_px, long_touch_ms))
            index += 1
            continue

        end = index + 1
        while end < len(sessions):
            candidate, last = sessions[end], sessions[end - 1]
            if (not candidate.is_keyboard
                    or candidate.focused_editable != session.focused_editable
                    or candidate.time_start - last.time_end > text_gap_ms):
                break
            end += 1

        element = None
        if session.state_before is not None:
            element = session.state_before.find(session.focused_editable)  # type: ignore[arg-type]
        if element is None:
            logger.warning(f"Focused editable '{session.focused_editable}' not found in the state "
                           f"at t={session.time_start}; classifying {end - index} sessions as gestures")
            actions.extend(_classified(s, touch_radius_px, long_touch_ms) for s in sessions[index:end])
        else:
            actions.append(TimedAction(
                kind=ActionType.INPUT_TEXT,
                location=element.center,
                t_ms=session.time_start,
                element=element.id,
                text=placeholder,
            ))
        index = end
    return actions


def _snap(action: TimedAction, candidates: List[Action], state: UiState) -> Optional[Action]:
    """Enumerated action of the same kind on the smallest element containing the location."""
    by_element = {a.target_element: a for a in candidates if a.kind is action.kind}
    best: Optional[Action] = None
    best_area = None
    for element in state.elements():
        if element.id not in by_element or not element.contains_point(action.location):
            continue
        if best_area is None or element.area <= best_area:
            best, best_area = by_element[element.id], element.area
    return best


def align_flow(actions: Sequence[TimedAction], state_stream: StateStream, app_id: str,
               placeholder: str = DEFAULT_TEXT) -> InteractionFlow:
    """
    Pair every action with the UI state captured right before it.

    Actions that do not match an enumerated action of their state are
    snapped to the smallest enclosing element offering that gesture, or
    dropped with a warning.

    Args:
        actions: Extracted actions in time order
        state_stream: (timestamp, state) captures in time order
        app_id: Application the trace belongs to
        placeholder: Text payload of input_text actions

    Returns:
        InteractionFlow: Aligned flow

    Raises:
        TraceError: If the state stream is empty
    """
    if not state_stream:
        raise TraceError(f"Trace for {app_id} has no UI state captures", field="state_stream")
    times = [t for t, _ in state_stream]
    states: List[UiState] = []
    chosen: List[Action] = []

    for timed in actions:
        position = bisect.bisect_left(times, timed.t_ms) - 1
        if position < 0:
            logger.warning(f"{app_id}: dropping {timed.kind.value} at t={timed.t_ms}, no earlier state capture")
            continue
        state = state_stream[position][1]
        candidates = enumerate_actions(state, placeholder)

        match: Optional[Action] = None
        if timed.element is not None:
            match = next((a for a in candidates
                          if a.kind is timed.kind and a.target_element == timed.element), None)
        if match is None:
            match = next((a for a in candidates
                          if a.kind is timed.kind and a.location == timed.location), None)
        if match is None:
            match = _snap(timed, candidates, state)
            if match is not None:
                logger.warning(f"{app_id}: snapped {timed.kind.value} at {timed.location} "
                               f"to element {match.target_element}")
        if match is None:
            logger.warning(f"{app_id}: dropping {timed.kind.value} at {timed.location} (t={timed.t_ms}), "
                           f"no element offers it")
            continue
        states.append(state)
        chosen.append(match)

    return InteractionFlow(states=tuple(states), actions=tuple(chosen), app_id=app_id)


@dataclass
class RawTrace:
    """Events and state captures of one recorded trace."""
    name: str
    app_id: str
    events: List[MotionEvent]
    states: Dict[str, UiState]
    state_stream: List[Tuple[int, UiState]]


def app_id_of(trace_name: str) -> str:
    """Trace files are named ``<app_id>__<n>``."""
    return trace_name.rsplit("__", 1)[0]


def _read_jsonl(path: Path) -> List[Dict[str, Any]]:
    """Decoded rows, without the leading run header row."""
    rows = []
    with open(path, 'r', encoding='utf-8') as f:
        for number, line in enumerate(f, start=1):
            if not line.strip():
                continue
            try:
                rows.append(json.loads(line))
            except json.JSONDecodeError as e:
                raise TraceError(f"{path}:{number}: invalid JSON: {e}", field=str(path), value=number)
    if rows and set(rows[0]) == {"header"}:
        rows.pop(0)
    return rows


def load_state_file(path: Path) -> UiState:
    """Load and validate one UI state JSON file."""
    try:
        with open(path, 'r', encoding='utf-8') as f:
            data = json.load(f)
    except (OSError, json.JSONDecodeError) as e:
        raise TraceError(f"Cannot read UI state {path}: {e}", field=str(path))
    try:
        return UiState.from_dict(data)
    except ValueError as e:
        raise TraceError(f"Invalid UI state {path}: {e}", field=str(path))


def load_raw_trace(trace_path: Path, states_dir: Path) -> RawTrace:
    """
    Load a JSON Lines trace with its referenced UI states.

    The state stream comes from ``<name>.states.jsonl`` when present;
    otherwise each event's state is taken as captured 1 ms before the event.

    Raises:
        TraceError: On malformed lines or missing state files
    """
    trace_path = Path(trace_path)
    name = trace_path.name[:-len(".jsonl")]
    events: List[MotionEvent] = []
    for number, row in enumerate(_read_jsonl(trace_path), start=1):
        try:
            events.append(MotionEvent.from_dict(row))
        except (DataError, ValueError) as e:
            raise TraceError(f"{trace_path}:{number}: {e}", field=str(trace_path), value=number)

    capture_path = trace_path.with_name(f"{name}.states.jsonl")
    if capture_path.exists():
        captures = [(int(row["t"]), str(row["state"])) for row in _read_jsonl(capture_path)]
    else:
        captures = []
        for event in events:
            if not captures or captures[-1][1] != event.state_ref:
                captures.append((event.t - 1, event.state_ref))

    states: Dict[str, UiState] = {}
    for ref in sorted({ref for _, ref in captures} | {e.state_ref for e in events}):
        states[ref] = load_state_file(Path(states_dir) / f"{ref}.json")
    stream = [(t, states[ref]) for t, ref in captures]
    return RawTrace(name=name, app_id=app_id_of(name), events=events, states=states, state_stream=stream)


def extract_flow(raw: RawTrace, touch_radius_px: float = TOUCH_RADIUS_PX,
                 long_touch_ms: int = LONG_TOUCH_MS, text_gap_ms: int = TEXT_GAP_MS,
                 placeholder: str = DEFAULT_TEXT) -> InteractionFlow:
    """Sessionize, classify, merge and align one raw trace."""
    sessions = sessionize(raw.events, raw.states)
    actions = merge_text_sessions(sessions, touch_radius_px, long_touch_ms, text_gap_ms, placeholder)
    flow = align_flow(actions, raw.state_stream, raw.app_id, placeholder)
    logger.debug(f"{raw.name}: {len(raw.events)} events, {len(sessions)} sessions, {len(flow)} actions")
    return flow


def write_raw_trace(raw_dir: Path, name: str, events: Iterable[MotionEvent],
                    captures: Iterable[Tuple[int, UiState]], header: str = ""):
    """
    Write a trace, its state capture file and the referenced states.

    Both JSONL files start with a ``{"header": ...}`` row when a run header
    is given.
    """
    lead = json.dumps({"header": header}) + "\n" if header else ""
    raw_dir = Path(raw_dir)
    trace_dir, states_dir = raw_dir / "traces", raw_dir / "states"
    trace_dir.mkdir(parents=True, exist_ok=True)
    states_dir.mkdir(parents=True, exist_ok=True)
    with open(trace_dir / f"{name}.jsonl", 'w', encoding='utf-8') as f:
        f.write(lead)
        for event in events:
            f.write(json.dumps(event.to_dict(), sort_keys=True) + "\n")
    with open(trace_dir / f"{name}.states.jsonl", 'w', encoding='utf-8') as f:
        f.write(lead)
        for t, state in captures:
            _write_state(states_dir, state)
            f.write(json.dumps({"t": t, "state": state.fingerprint}, sort_keys=True) + "\n")


def _write_state(states_dir: Path, state: UiState):
    path = states_dir / f"{state.fingerprint}.json"
    if not path.exists():
        path.write_text(state.to_json() + "\n", encoding='utf-8')


def prep_directory(raw_dir: Path, touch_radius_px: float = TOUCH_RADIUS_PX,
                   long_touch_ms: int = LONG_TOUCH_MS, text_gap_ms: int = TEXT_GAP_MS,
                   placeholder: str = DEFAULT_TEXT) -> Tuple[List[InteractionFlow], List[Tuple[str, str]]]:
    """
    Extract flows from every trace in a raw directory.

    Malformed traces are reported and skipped.

    Returns:
        Tuple[List[InteractionFlow], List[Tuple[str, str]]]: Flows, and
        (file, reason) for every trace that failed
    """
    raw_dir = Path(raw_dir)
    trace_dir, states_dir = raw_dir / "traces", raw_dir / "states"
    flows: List[InteractionFlow] = []
    failures: List[Tuple[str, str]] = []
    paths = sorted(p for p in trace_dir.glob("*.jsonl") if not p.name.endswith(".states.jsonl")) \
        if trace_dir.is_dir() else []
    if not paths:
        logger.warning(f"No traces found under {trace_dir}")
    for path in paths:
        try:
            raw = load_raw_trace(path, states_dir)
            flows.append(extract_flow(raw, touch_radius_px, long_touch_ms, text_gap_ms, placeholder))
        except DataError as e:
            logger.error(f"Skipping malformed trace {path.name}: {e}")
            failures.append((path.name, str(e)))
    logger.info(f"Extracted {len(flows)} flows from {len(paths)} traces ({len(failures)} failed)")
    return flows, failures


def write_corpus(flows: Sequence[InteractionFlow], out_dir: Path, header: str = ""):
    """
    Write a flow corpus.

    Layout: ``states/<fingerprint>.json``, ``flows/<app>_<n>.json`` and a
    ``corpus.json`` index. The index and every flow file carry the run header.
    """
    out_dir = Path(out_dir)
    flow_dir, states_dir = out_dir / "flows", out_dir / "states"
    flow_dir.mkdir(parents=True, exist_ok=True)
    states_dir.mkdir(parents=True, exist_ok=True)
    counters: Dict[str, int] = {}
    names: List[str] = []
    for flow in flows:
        number = counters.get(flow.app_id, 0)
        counters[flow.app_id] = number + 1
        name = f"{flow.app_id}_{number}"
        for state in flow.states:
            _write_state(states_dir, state)
        payload = {
            "header": header,
            "app_id": flow.app_id,
            "states": [state.fingerprint for state in flow.states],
            "actions": [action.to_dict() for action in flow.actions],
        }
        (flow_dir / f"{name}.json").write_text(json.dumps(payload, sort_keys=True, indent=1) + "\n",
                                               encoding='utf-8')
        names.append(name)
    index = {"header": header, "flows": names, "count": len(names)}
    (out_dir / "corpus.json").write_text(json.dumps(index, sort_keys=True, indent=1) + "\n", encoding='utf-8')
    logger.info(f"Wrote {len(names)} flows to {out_dir}")


def read_corpus(corpus_dir: Path) -> List[InteractionFlow]:
    """
    Read a corpus written by ``write_corpus``.

    Raises:
        DataError: If the index, a flow or a state file is missing or malformed
    """
    corpus_dir = Path(corpus_dir)
    index_path = corpus_dir / "corpus.json"
    if not index_path.exists():
        raise DataError(f"Not a flow corpus (missing {index_path})", field="corpus", value=str(corpus_dir))
    try:
        index = json.loads(index_path.read_text(encoding='utf-8'))
        names = [str(name) for name in index["flows"]]
    except (OSError, KeyError, TypeError, ValueError) as e:
        raise DataError(f"Malformed corpus index {index_path}: {e}", field="corpus", value=str(index_path))
    cache: Dict[str, UiState] = {}
    flows: List[InteractionFlow] = []
    for name in names:
        path = corpus_dir / "flows" / f"{name}.json"
        try:
            data = json.loads(path.read_text(encoding='utf-8'))
            states = []
            for ref in data["states"]:
                if ref not in cache:
                    cache[ref] = load_state_file(corpus_dir / "states" / f"{ref}.json")
                states.append(cache[ref])
            actions = [Action.from_dict(a) for a in data["actions"]]
            flows.append(InteractionFlow(states=tuple(states), actions=tuple(actions), app_id=data["app_id"]))
        except (OSError, KeyError, ValueError) as e:
            raise DataError(f"Malformed flow {path}: {e}", field=str(path))
    logger.info(f"Loaded {len(flows)} flows from {corpus_dir}")
    return flows
