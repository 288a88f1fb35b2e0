"""
Data models for UI states, elements, actions and interaction flows
"""

import hashlib
import json
from dataclasses import dataclass, field
from enum import Enum
from typing import Any, Dict, Iterator, List, Optional, Sequence, Tuple

import numpy as np

from utils.validation import SchemaValidator

Bounds = Tuple[int, int, int, int]
Point = Tuple[int, int]

DEFAULT_TEXT = "hello"
QUANTUM_PX = 10


class ActionType(Enum):
    """The seven gesture types a tester can perform."""
    TOUCH = "touch"
    LONG_TOUCH = "long_touch"
    SWIPE_UP = "swipe_up"
    SWIPE_DOWN = "swipe_down"
    SWIPE_LEFT = "swipe_left"
    SWIPE_RIGHT = "swipe_right"
    INPUT_TEXT = "input_text"

    @property
    def index(self) -> int:
        return ACTION_TYPES.index(self)

    def one_hot(self) -> np.ndarray:
        """Encode as a 7-dimensional indicator vector."""
        vec = np.zeros(len(ACTION_TYPES), dtype=np.float64)
        vec[self.index] = 1.0
        return vec

    @property
    def is_swipe(self) -> bool:
        return self in SWIPES


ACTION_TYPES: List[ActionType] = list(ActionType)
SWIPES = (
    ActionType.SWIPE_UP,
    ActionType.SWIPE_DOWN,
    ActionType.SWIPE_LEFT,
    ActionType.SWIPE_RIGHT,
)


@dataclass(frozen=True)
class UiElement:
    """A bounded node of a UI tree."""
    id: str
    bounds: Bounds
    is_text: bool = False
    text: Optional[str] = None
    clickable: bool = False
    long_clickable: bool = False
    scrollable: bool = False
    editable: bool = False
    children: Tuple["UiElement", ...] = ()

    def __post_init__(self):
        """Validate element data after initialization."""
        if not self.id:
            raise ValueError("Element ID is required")
        left, top, right, bottom = self.bounds
        if not (left < right and top < bottom):
            raise ValueError(f"Element {self.id} has empty bounds {self.bounds}")
        for child in self.children:
            if not self.contains_box(child.bounds):
                raise ValueError(
                    f"Child {child.id} bounds {child.bounds} escape parent {self.id} {self.bounds}"
                )

    @property
    def is_interactive(self) -> bool:
        return self.clickable or self.long_clickable or self.scrollable or self.editable

    @property
    def center(self) -> Point:
        left, top, right, bottom = self.bounds
        return ((left + right) // 2, (top + bottom) // 2)

    @property
    def area(self) -> int:
        left, top, right, bottom = self.bounds
        return (right - left) * (bottom - top)

    def contains_point(self, point: Point) -> bool:
        left, top, right, bottom = self.bounds
        return left <= point[0] < right and top <= point[1] < bottom

    def contains_box(self, box: Bounds) -> bool:
        left, top, right, bottom = self.bounds
        return left <= box[0] and top <= box[1] and box[2] <= right and box[3] <= bottom

    def walk(self) -> Iterator["UiElement"]:
        """Pre-order traversal of this element and its descendants."""
        yield self
        for child in self.children:
            yield from child.walk()

    def to_dict(self) -> Dict[str, Any]:
        """Convert element to dictionary for JSON serialization."""
        return {
            "id": self.id,
            "bounds": list(self.bounds),
            "is_text": self.is_text,
            "text": self.text,
            "clickable": self.clickable,
            "long_clickable": self.long_clickable,
            "scrollable": self.scrollable,
            "editable": self.editable,
            "children": [child.to_dict() for child in self.children],
        }

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "UiElement":
        """Create element from dictionary."""
        return cls(
            id=data["id"],
            bounds=tuple(int(v) for v in data["bounds"]),  # type: ignore[arg-type]
            is_text=data.get("is_text", False),
            text=data.get("text"),
            clickable=data.get("clickable", False),
            long_clickable=data.get("long_clickable", False),
            scrollable=data.get("scrollable", False),
            editable=data.get("editable", False),
            children=tuple(cls.from_dict(c) for c in data.get("children", [])),
        )


@dataclass(frozen=True)
class UiState:
    """Snapshot of one screen: a UI tree plus the screen size."""
    tree: UiElement
    screen: Tuple[int, int]
    _fingerprint: str = field(default="", init=False, repr=False, compare=False)

    def __post_init__(self):
        """Validate the tree against the screen and compute the fingerprint."""
        width, height = self.screen
        if width <= 0 or height <= 0:
            raise ValueError(f"Screen dimensions must be positive, got {self.screen}")
        seen = set()
        for element in self.tree.walk():
            left, top, right, bottom = element.bounds
            if left < 0 or top < 0 or right > width or bottom > height:
                raise ValueError(f"Element {element.id} bounds {element.bounds} leave the screen")
            if element.id in seen:
                raise ValueError(f"Duplicate element ID: {element.id}")
            seen.add(element.id)
        object.__setattr__(self, "_fingerprint", fingerprint_state(self))

    @property
    def fingerprint(self) -> str:
        return self._fingerprint

    def elements(self) -> Iterator[UiElement]:
        return self.tree.walk()

    def leaves(self) -> List[UiElement]:
        return [element for element in self.elements() if not element.children]

    def find(self, element_id: str) -> Optional[UiElement]:
        for element in self.elements():
            if element.id == element_id:
                return element
        return None

    def to_dict(self) -> Dict[str, Any]:
        return {
            "screen": {"w": self.screen[0], "h": self.screen[1]},
            "root": self.tree.to_dict(),
        }

    @classmethod
    def from_dict(cls, data: Dict[str, Any], validate: bool = True) -> "UiState":
        if validate:
            SchemaValidator.require("ui_state", data)
        return cls(
            tree=UiElement.from_dict(data["root"]),
            screen=(int(data["screen"]["w"]), int(data["screen"]["h"])),
        )

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))

    @classmethod
    def from_json(cls, text: str) -> "UiState":
        return cls.from_dict(json.loads(text))


@dataclass(frozen=True)
class Action:
    """A concrete input: gesture type on a target element."""
    kind: ActionType
    target_element: str
    location: Point
    text_payload: Optional[str] = None

    def __post_init__(self):
        """Validate action data after initialization."""
        if not isinstance(self.kind, ActionType):
            object.__setattr__(self, "kind", ActionType(self.kind))
        if not self.target_element:
            raise ValueError("Action target element is required")
        has_text = self.text_payload is not None
        if has_text != (self.kind is ActionType.INPUT_TEXT):
            raise ValueError(f"text_payload must be present iff kind is input_text ({self.kind.value})")

    @property
    def key(self) -> Tuple[str, ActionType]:
        return (self.target_element, self.kind)

    def label(self) -> str:
        return f"{self.kind.value}@{self.target_element}"

    def to_dict(self) -> Dict[str, Any]:
        return {
            "kind": self.kind.value,
            "element": self.target_element,
            "x": self.location[0],
            "y": self.location[1],
            "text": self.text_payload,
        }

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "Action":
        return cls(
            kind=ActionType(data["kind"]),
            target_element=data["element"],
            location=(int(data["x"]), int(data["y"])),
            text_payload=data.get("text"),
        )


@dataclass(frozen=True)
class InteractionFlow:
    """Aligned sequences of UI states and the actions taken in them."""
    states: Tuple[UiState, ...]
    actions: Tuple[Action, ...]
    app_id: str

    def __post_init__(self):
        if len(self.states) != len(self.actions):
            raise ValueError(
                f"Flow {self.app_id} has {len(self.states)} states but {len(self.actions)} actions"
            )

    def __len__(self) -> int:
        return len(self.actions)

    def validate(self) -> None:
        """Check that every action is enumerable in its state."""
        for index, (state, action) in enumerate(zip(self.states, self.actions)):
            if action not in enumerate_actions(state, action.text_payload or DEFAULT_TEXT):
                raise ValueError(f"Flow {self.app_id} step {index}: {action.label()} not enumerable")

    def pairs(self) -> Iterator[Tuple[UiState, Action]]:
        return iter(zip(self.states, self.actions))


def _quantize(value: int) -> int:
    return (value + QUANTUM_PX // 2) // QUANTUM_PX


def fingerprint_state(state: UiState) -> str:
    """
    Structural hash of a UI state.

    Hashes the pre-order traversal of (role, capability flags, bounds
    quantized to 10 px, text, child count) plus the screen size.
    Element IDs are not part of the identity.

    Args:
        state: UI state to hash

    Returns:
        str: 16 hex digit fingerprint
    """
    digest = hashlib.sha256()
    digest.update(f"screen:{state.screen[0]}x{state.screen[1]};".encode("utf-8"))
    for element in state.tree.walk():
        flags = "".join(
            "1" if flag else "0"
            for flag in (element.clickable, element.long_clickable, element.scrollable, element.editable)
        )
        box = ",".join(str(_quantize(v)) for v in element.bounds)
        role = "T" if element.is_text else "N"
        text = json.dumps(element.text)
        digest.update(f"{role}|{flags}|{box}|{text}|{len(element.children)};".encode("utf-8"))
    return digest.hexdigest()[:16]


def enumerate_actions(state: UiState, text: str = DEFAULT_TEXT) -> List[Action]:
    """
    Traverse the UI tree and list every possible action.

    Args:
        state: UI state to enumerate
        text: Payload attached to input_text actions

    Returns:
        List[Action]: Actions in pre-order element order
    """
    actions: List[Action] = []
    for element in state.elements():
        center = element.center
        kinds: List[ActionType] = []
        if element.clickable:
            kinds.append(ActionType.TOUCH)
        if element.long_clickable:
            kinds.append(ActionType.LONG_TOUCH)
        if element.scrollable:
            kinds.extend(SWIPES)
        for kind in kinds:
            actions.append(Action(kind, element.id, center))
        if element.editable:
            actions.append(Action(ActionType.INPUT_TEXT, element.id, center, text_payload=text))
    return actions


def action_count_cdf(states: Sequence[UiState]) -> List[Tuple[int, float]]:
    """Cumulative distribution of enumerable action counts per state."""
    if not states:
        return []
    counts = sorted(len(enumerate_actions(state)) for state in states)
    rows: List[Tuple[int, float]] = []
    total = len(counts)
    for index, count in enumerate(counts):
        if index + 1 < total and counts[index + 1] == count:
            continue
        rows.append((count, (index + 1) / total))
    return rows
