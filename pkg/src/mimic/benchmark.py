"""
Procedural benchmark suites of synthetic apps
"""

import logging
from typing import Dict, List, Optional, Tuple

import numpy as np

from .models import ActionType, UiElement, UiState
from .sim import ActionKey, SimAppSpec

logger = logging.getLogger(__name__)

SCREEN = (360, 640)
SUITE_KINDS = ("gated", "uniform", "wide")

GRID_COLUMNS = 4
CELL_W, CELL_H = 90, 45
GRID_TOP = 70
LIST_BOUNDS = (20, 260, 340, 500)
EDIT_BOUNDS = (20, 520, 340, 570)
PRIMARY_BOUNDS = (20, 580, 340, 630)
GATE_ELEMENT = "primary"
BACK_ELEMENT = "back"


def _cell(index: int) -> Tuple[int, int, int, int]:
    row, col = divmod(index, GRID_COLUMNS)
    left, top = col * CELL_W, GRID_TOP + row * CELL_H
    return (left + 5, top + 5, left + CELL_W - 5, top + CELL_H - 5)


def build_screen(title: str, buttons: int, long_clickable: List[bool], with_list: bool = False,
                 with_edit: bool = False, with_back: bool = True, with_primary: bool = False,
                 screen: Tuple[int, int] = SCREEN) -> UiState:
    """
    Lay out a screen: title bar, optional back button, a grid of buttons,
    optional scrolling list, text field and a full-width primary button.

    The title text is unique per state, so states never share fingerprints.
    """
    children = []
    if with_back:
        children.append(UiElement(BACK_ELEMENT, (0, 0, 60, 60), clickable=True))
    children.append(UiElement("title", (60, 0, screen[0], 60), is_text=True, text=title))
    for index in range(buttons):
        children.append(UiElement(f"b{index}", _cell(index), clickable=True,
                                  long_clickable=long_clickable[index]))
    if with_list:
        children.append(UiElement("list", LIST_BOUNDS, scrollable=True))
    if with_edit:
        children.append(UiElement("field", EDIT_BOUNDS, is_text=True, editable=True, clickable=True))
    if with_primary:
        children.append(UiElement(GATE_ELEMENT, PRIMARY_BOUNDS, clickable=True))
    root = UiElement("root", (0, 0, screen[0], screen[1]), children=tuple(children))
    return UiState(tree=root, screen=screen)


def _random_screen(rng: np.random.Generator, title: str, max_buttons: int, with_back: bool,
                   with_primary: bool = False, wide: bool = False) -> UiState:
    if wide:
        buttons = 32
        return build_screen(title, buttons, [True] * buttons, with_edit=True,
                            with_back=with_back, with_primary=with_primary)
    buttons = int(rng.integers(3, max_buttons + 1))
    long_flags = [bool(flag) for flag in rng.random(buttons) < 0.3]
    return build_screen(title, buttons, long_flags,
                        with_list=bool(rng.random() < 0.4),
                        with_edit=bool(rng.random() < 0.3),
                        with_back=with_back, with_primary=with_primary)


def _touch(state: str, element: str) -> ActionKey:
    return (state, element, ActionType.TOUCH)


def _wire_tree(rng: np.random.Generator, names: List[str], states: Dict[str, UiState],
               transitions: Dict[ActionKey, str], destinations: List[str]):
    """
    Wire a spanning tree from names[0], then wire remaining buttons at random.

    Buttons already carrying an edge are not rewired.
    """
    for index in range(1, len(names)):
        first = int(rng.integers(0, index))
        for offset in range(index):
            parent = names[(first + offset) % index]
            free = [b for b in _buttons(states[parent]) if _touch(parent, b) not in transitions]
            if free:
                transitions[_touch(parent, free[0])] = names[index]
                break
    for name in names:
        for button in _buttons(states[name]):
            key = _touch(name, button)
            if key not in transitions and rng.random() < 0.6:
                transitions[key] = destinations[int(rng.integers(0, len(destinations)))]


def _buttons(state: UiState) -> List[str]:
    return [e.id for e in state.elements() if e.id.startswith("b") and e.id != BACK_ELEMENT]


def make_gated_app(app_id: str, rng: np.random.Generator, bias: float = 20.0,
                   max_states: int = 12) -> SimAppSpec:
    """
    App whose target sits behind home -> gate1 -> gate2 -> target.

    Each hop is a touch on the full-width primary button, which the scripted
    user prefers with weight ``bias``; at the target the user prefers going
    back home with the same weight. Only the gate edges enter the gate and
    target states; every non-home state has a back button to home.
    """
    fillers = int(rng.integers(2, max(3, max_states - 4) + 1))
    max_buttons = 8
    states: Dict[str, UiState] = {
        "home": _random_screen(rng, f"{app_id} home", max_buttons, with_back=False, with_primary=True),
        "gate1": _random_screen(rng, f"{app_id} gate 1", max_buttons, with_back=True, with_primary=True),
        "gate2": _random_screen(rng, f"{app_id} gate 2", max_buttons, with_back=True, with_primary=True),
        "target": _random_screen(rng, f"{app_id} target", max_buttons, with_back=True),
    }
    filler_names = [f"page{i}" for i in range(fillers)]
    for name in filler_names:
        states[name] = _random_screen(rng, f"{app_id} {name}", max_buttons, with_back=True)

    transitions: Dict[ActionKey, str] = {
        _touch("home", GATE_ELEMENT): "gate1",
        _touch("gate1", GATE_ELEMENT): "gate2",
        _touch("gate2", GATE_ELEMENT): "target",
    }
    for name in states:
        if name != "home":
            transitions[_touch(name, BACK_ELEMENT)] = "home"
    open_names = ["home"] + filler_names
    _wire_tree(rng, open_names, states, transitions, open_names)
    for name in ("gate1", "gate2", "target"):
        for button in _buttons(states[name]):
            if rng.random() < 0.5:
                transitions[_touch(name, button)] = open_names[int(rng.integers(0, len(open_names)))]

    prefs = {_touch(name, GATE_ELEMENT): float(bias) for name in ("home", "gate1", "gate2")}
    prefs[_touch("target", BACK_ELEMENT)] = float(bias)
    spec = SimAppSpec(app_id=app_id, screen=SCREEN, states=states, initial="home",
                      transitions=transitions, prefs=prefs, targets=frozenset({"target"}))
    spec.validate()
    return spec


def make_connected_app(app_id: str, rng: np.random.Generator, max_states: int = 12,
                       wide: bool = False) -> SimAppSpec:
    """
    Strongly connected app without preferences.

    A spanning tree from home reaches every state and every other state has
    a back button to home. The last state is tagged as target.
    """
    count = int(rng.integers(3, max_states + 1))
    names = ["home"] + [f"page{i}" for i in range(1, count)]
    states = {
        name: _random_screen(rng, f"{app_id} {name}", 8, with_back=(name != "home"), wide=wide)
        for name in names
    }
    transitions: Dict[ActionKey, str] = {_touch(name, BACK_ELEMENT): "home" for name in names[1:]}
    _wire_tree(rng, names, states, transitions, names)
    spec = SimAppSpec(app_id=app_id, screen=SCREEN, states=states, initial="home",
                      transitions=transitions, prefs={}, targets=frozenset({names[-1]}))
    spec.validate()
    return spec


def make_benchmark_suite(kind: str, count: int, seed: int, bias: float = 20.0,
                         max_states: int = 12, rng: Optional[np.random.Generator] = None) -> List[SimAppSpec]:
    """
    Generate a suite of synthetic apps.

    Args:
        kind: gated, uniform or wide
        count: Number of apps
        seed: Generator seed
        bias: Preference weight of gate actions (gated suites)
        max_states: Upper bound on states per app

    Returns:
        List[SimAppSpec]: Validated app specs
    """
    if kind not in SUITE_KINDS:
        raise ValueError(f"Unknown suite kind '{kind}', expected one of {SUITE_KINDS}")
    if count < 1:
        raise ValueError(f"Suite needs at least one app, got {count}")
    rng = rng if rng is not None else np.random.default_rng(seed)
    specs = []
    for index in range(count):
        app_id = f"{kind}{index:03d}"
        if kind == "gated":
            specs.append(make_gated_app(app_id, rng, bias, max_states))
        else:
            specs.append(make_connected_app(app_id, rng, max_states, wide=(kind == "wide")))
    logger.info(f"Generated {count} {kind} apps (seed {seed})")
    return specs


def mean_actions_per_state(specs: List[SimAppSpec]) -> float:
    counts = [len(spec.actions(name)) for spec in specs for name in spec.states]
    return sum(counts) / len(counts) if counts else 0.0
