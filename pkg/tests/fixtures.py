"""
Shared builders for Mimic Explorer tests
"""

from typing import Dict, Optional

import numpy as np

from mimic.config import ModelConfig
from mimic.models import ActionType, UiElement, UiState
from mimic.sim import SimAppSpec

SCREEN = (180, 320)
TINY_DIMS = (12, 20)


def tiny_model_config(seed: int = 3) -> ModelConfig:
    """Smallest network that still has every stage."""
    return ModelConfig(
        dims=TINY_DIMS,
        conv_widths=(2, 3, 3, 4, 4),
        reduce_widths=(2, 3, 3),
        lstm_hidden=(2, 3, 3),
        deconv_widths=(3, 2, 2, 2, 1),
        batch_size=4,
        seed=seed,
    )


def tiny_config_dict() -> Dict:
    """Run configuration file contents for a fast end-to-end run."""
    model = tiny_model_config()
    data = model.to_dict()
    dims = data.pop("dims")
    return {
        "seed": 5,
        "dims": dims,
        "model": data,
        "train": {"epochs": 1, "patience": 1, "holdout_fraction": 0.5, "max_steps": 2},
        "suite": {"kind": "gated", "count": 2, "bias": 20.0, "max_states": 6},
        "corpus": {"n_flows": 2, "flow_len": 4},
        "explore": {"policy": "random", "budget": 15},
        "compare": {"policies": ["model-weighted", "random"], "seeds": 5, "budget": 10},
    }


def make_state(title: str = "home", button: bool = True, text_field: bool = False,
               scroll_list: bool = False, extra_buttons: int = 0) -> UiState:
    """A small screen: title text, an OK button and optional widgets."""
    children = [UiElement("title", (0, 0, 180, 40), is_text=True, text=title)]
    if button:
        children.append(UiElement("ok", (20, 60, 100, 100), clickable=True, long_clickable=True))
    for index in range(extra_buttons):
        top = 110 + index * 30
        children.append(UiElement(f"btn{index}", (20, top, 100, top + 25), clickable=True))
    if scroll_list:
        children.append(UiElement("list", (0, 200, 180, 260), scrollable=True))
    if text_field:
        children.append(UiElement("name", (10, 270, 170, 310), is_text=True, editable=True, clickable=True))
    root = UiElement("root", (0, 0, SCREEN[0], SCREEN[1]), children=tuple(children))
    return UiState(tree=root, screen=SCREEN)


def touch(state: str, element: str):
    return (state, element, ActionType.TOUCH)


def chain_app(app_id: str = "chain", length: int = 3, prefs: Optional[Dict] = None) -> SimAppSpec:
    """
    Linear app s0 -> s1 -> ... where touching ``ok`` moves forward.

    Every other action loops in place; the last state is the target.
    """
    names = [f"s{i}" for i in range(length)]
    states = {name: make_state(title=f"{app_id} {name}", extra_buttons=1) for name in names}
    transitions = {touch(a, "ok"): b for a, b in zip(names, names[1:])}
    spec = SimAppSpec(app_id=app_id, screen=SCREEN, states=states, initial=names[0],
                      transitions=transitions, prefs=prefs or {}, targets=frozenset({names[-1]}))
    spec.validate()
    return spec


def random_contexts(batch: int, dims=TINY_DIMS, seed: int = 0) -> np.ndarray:
    rng = np.random.default_rng(seed)
    return rng.random((batch, 4, dims[1], dims[0], 3)).astype(np.float32)
