"""
Rasterization of UI states, actions and UI contexts
"""

import logging
import math
from dataclasses import dataclass
from pathlib import Path
from typing import List, Optional, Tuple

import numpy as np
from PIL import Image

from utils.cache import SkeletonCache

from .errors import EncodingError
from .models import Action, Bounds, InteractionFlow, UiState

logger = logging.getLogger(__name__)

Dims = Tuple[int, int]

HISTORY = 3
FRAMES = HISTORY + 1
REFERENCE_DIMS: Dims = (180, 320)
DEFAULT_DIMS: Dims = (45, 80)
DEFAULT_VARIANCE = 20.0


@dataclass(frozen=True)
class UiContext:
    """Current state plus up to three latest (state, action) transitions."""
    current: UiState
    history: Tuple[Tuple[UiState, Action], ...] = ()

    def __post_init__(self):
        if len(self.history) > HISTORY:
            raise ValueError(f"UI context history holds at most {HISTORY} transitions, got {len(self.history)}")


def _axis_span(low: float, high: float, size: int) -> Tuple[int, int]:
    """Pixel indices whose centers fall inside [low, high); nearest pixel if none."""
    start = max(0, math.ceil(low - 0.5))
    stop = min(size, math.ceil(high - 0.5))
    if stop <= start:
        nearest = min(size - 1, max(0, int(math.floor((low + high) / 2.0))))
        return nearest, nearest + 1
    return start, stop


def scaled_box(bounds: Bounds, screen: Tuple[int, int], dims: Dims) -> Tuple[int, int, int, int]:
    """
    Map element bounds onto the raster grid.

    Args:
        bounds: (left, top, right, bottom) in screen pixels
        screen: Screen size (width, height)
        dims: Raster size (width, height)

    Returns:
        Tuple[int, int, int, int]: (x0, y0, x1, y1) half-open pixel ranges

    Raises:
        EncodingError: If the bounds leave the screen
    """
    left, top, right, bottom = bounds
    width, height = screen
    if left < 0 or top < 0 or right > width or bottom > height:
        raise EncodingError(f"Bounds {bounds} leave screen {screen}", field="bounds", value=bounds)
    sx, sy = dims[0] / width, dims[1] / height
    x0, x1 = _axis_span(left * sx, right * sx, dims[0])
    y0, y1 = _axis_span(top * sy, bottom * sy, dims[1])
    return x0, y0, x1, y1


def skeleton_key(state: UiState) -> Tuple:
    """
    Cache key of a state's skeleton.

    Fingerprints quantize bounds, so the key keeps exact leaf bounds.
    """
    return state.screen, tuple((leaf.bounds, leaf.is_text) for leaf in state.leaves())


def render_skeleton(state: UiState, dims: Dims) -> np.ndarray:
    """
    Render a two-channel skeleton image.

    Channel 0 holds text leaves, channel 1 non-text leaves; overlaps
    saturate at 1.0.

    Args:
        state: UI state to render
        dims: Raster size (width, height)

    Returns:
        np.ndarray: Array of shape (2, H, W) with values in {0, 1}
    """
    width, height = dims
    if width <= 0 or height <= 0:
        raise ValueError(f"Raster dimensions must be positive, got {dims}")
    image = np.zeros((2, height, width), dtype=np.float32)
    for leaf in state.leaves():
        x0, y0, x1, y1 = scaled_box(leaf.bounds, state.screen, dims)
        channel = 0 if leaf.is_text else 1
        image[channel, y0:y1, x0:x1] = 1.0
    return image


def _gaussian_sigma(dims: Dims, variance: float) -> float:
    scale = math.sqrt((dims[0] / REFERENCE_DIMS[0]) * (dims[1] / REFERENCE_DIMS[1]))
    return math.sqrt(variance) * scale


def target_pixel(location: Tuple[int, int], screen: Tuple[int, int], dims: Dims) -> Tuple[int, int]:
    """Raster pixel (column, row) containing a screen location."""
    col = int(location[0] * dims[0] // screen[0])
    row = int(location[1] * dims[1] // screen[1])
    return min(max(col, 0), dims[0] - 1), min(max(row, 0), dims[1] - 1)


def render_gaussian_label(action: Action, screen: Tuple[int, int], dims: Dims,
                          variance: float = DEFAULT_VARIANCE) -> np.ndarray:
    """
    Render an action location as a normalized Gaussian heatmap.

    The variance is given in squared pixels at the 180x320 reference
    resolution and scaled with the raster size.

    Args:
        action: Action whose location is encoded
        screen: Screen size the location refers to
        dims: Raster size (width, height)
        variance: Gaussian variance at reference resolution

    Returns:
        np.ndarray: Array of shape (H, W) summing to 1
    """
    x, y = action.location
    if not (0 <= x < screen[0] and 0 <= y < screen[1]):
        raise EncodingError(f"Action location {action.location} outside screen {screen}",
                            field="location", value=action.location)
    col, row = target_pixel(action.location, screen, dims)
    sigma = _gaussian_sigma(dims, variance)
    xs = np.arange(dims[0], dtype=np.float64) - col
    ys = np.arange(dims[1], dtype=np.float64) - row
    plane = np.exp(-(ys[:, None] ** 2 + xs[None, :] ** 2) / (2.0 * sigma * sigma))
    return plane / plane.sum()


def encode_context(ctx: UiContext, dims: Dims, variance: float = DEFAULT_VARIANCE,
                   cache: Optional[SkeletonCache] = None) -> np.ndarray:
    """
    Assemble a UI context into the model's input stack.

    Frames run oldest history first, current state last. Missing history
    frames are all zero; the current frame's third channel is zero padding.

    Args:
        ctx: UI context
        dims: Raster size (width, height)
        variance: Gaussian variance for history action channels
        cache: Optional skeleton cache

    Returns:
        np.ndarray: Array of shape (4, H, W, 3), float32
    """
    width, height = dims
    tensor = np.zeros((FRAMES, height, width, 3), dtype=np.float32)

    def skeleton(state: UiState) -> np.ndarray:
        if cache is None:
            return render_skeleton(state, dims)
        return cache.get(skeleton_key(state), dims, lambda: render_skeleton(state, dims))

    offset = HISTORY - len(ctx.history)
    for index, (state, action) in enumerate(ctx.history):
        frame = tensor[offset + index]
        frame[..., 0:2] = skeleton(state).transpose(1, 2, 0)
        frame[..., 2] = render_gaussian_label(action, state.screen, dims, variance)
    tensor[HISTORY, ..., 0:2] = skeleton(ctx.current).transpose(1, 2, 0)
    return tensor


def flow_contexts(flow: InteractionFlow) -> List[UiContext]:
    """UI context for every step of a flow."""
    contexts = []
    for index, state in enumerate(flow.states):
        start = max(0, index - HISTORY)
        history = tuple(zip(flow.states[start:index], flow.actions[start:index]))
        contexts.append(UiContext(current=state, history=history))
    return contexts


def encode_flow(flow: InteractionFlow, dims: Dims, variance: float = DEFAULT_VARIANCE,
                cache: Optional[SkeletonCache] = None) -> List[Tuple[np.ndarray, Action, UiState]]:
    """Every (context tensor, action, state) training sample of a flow."""
    return [
        (encode_context(ctx, dims, variance, cache), action, ctx.current)
        for ctx, action in zip(flow_contexts(flow), flow.actions)
    ]


def dump_png(array: np.ndarray, path: Path):
    """
    Write a skeleton, heatmap or context frame as a PNG for inspection.

    Accepts (H, W) planes, (2, H, W) skeletons and (H, W, 3) frames.
    """
    data = np.asarray(array, dtype=np.float64)
    if data.ndim == 3 and data.shape[0] == 2:
        data = np.concatenate([data, np.zeros_like(data[:1])], axis=0).transpose(1, 2, 0)
    peak = data.max()
    if peak > 0:
        data = data / peak
    pixels = (np.clip(data, 0.0, 1.0) * 255).astype(np.uint8)
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    Image.fromarray(pixels).save(path, format="PNG")
    logger.debug(f"Wrote debug image {path}")


def dump_context(tensor: np.ndarray, directory: Path, stem: str):
    """Write every frame of a context tensor as PNG files."""
    for index, frame in enumerate(tensor):
        dump_png(frame, Path(directory) / f"{stem}_frame{index}.png")


def element_mass(heatmap: np.ndarray, bounds: Bounds, screen: Tuple[int, int]) -> float:
    """Sum of heatmap probability over an element's scaled bounds."""
    height, width = heatmap.shape
    x0, y0, x1, y1 = scaled_box(bounds, screen, (width, height))
    return float(heatmap[y0:y1, x0:x1].sum())
