"""
Interaction network: UI context to action type and location distributions
"""

import logging
import math
from typing import Dict, List, Sequence, Tuple

import numpy as np

from . import nn
from .config import ModelConfig
from .errors import EncodingError, ShapeError
from .models import ACTION_TYPES, Action, UiState
from .raster import FRAMES, element_mass, render_gaussian_label
from .nn import Parameter, Tensor

logger = logging.getLogger(__name__)

LSTM_STAGES = (2, 3, 4)


def level_dims(dims: Tuple[int, int], levels: int = 5) -> List[Tuple[int, int]]:
    """(height, width) after each pooling stage, input first."""
    width, height = dims
    sizes = [(height, width)]
    for _ in range(levels):
        height, width = (height + 1) // 2, (width + 1) // 2
        sizes.append((height, width))
    return sizes


class InteractionNet:
    """
    Convolutional encoder with residual LSTMs over the context frames and
    a deconvolution decoder.

    Five conv+ReLU+pool stages run on every frame. The last three stages
    feed a 1x1 reduction and a per-pixel LSTM across the four frames whose
    input is added back to its output. The decoder upsamples the deepest
    LSTM features, concatenating the two shallower LSTM levels, into a
    location heatmap; a fully connected layer over the deepest features
    gives the action type.
    """

    def __init__(self, config: ModelConfig, dtype=nn.DEFAULT_DTYPE):
        self.config = config
        self.levels = level_dims(config.dims, len(config.conv_widths))
        self.params: Dict[str, Parameter] = {}
        self._build(np.random.default_rng(config.seed))
        self.astype(dtype)
        logger.debug(f"Built network for {config.dims} with {self.parameter_count()} parameters")

    def _add(self, name: str, data: np.ndarray, decay: bool = True) -> Parameter:
        param = Parameter(name, data, decay=decay)
        self.params[name] = param
        return param

    def _build(self, rng: np.random.Generator):
        cfg = self.config
        k = cfg.kernel_size
        in_channels = 3
        for index, width in enumerate(cfg.conv_widths):
            fan_in = in_channels * k * k
            self._add(f"conv{index}.kernel", rng.normal(0.0, math.sqrt(2.0 / fan_in), (width, in_channels, k, k)))
            self._add(f"conv{index}.bias", np.zeros(width), decay=False)
            in_channels = width

        for slot, stage in enumerate(LSTM_STAGES):
            reduced = cfg.reduce_widths[slot]
            hidden = cfg.lstm_hidden[slot]
            width = cfg.conv_widths[stage]
            self._add(f"reduce{slot}.kernel", rng.normal(0.0, math.sqrt(1.0 / width), (reduced, width, 1, 1)))
            self._add(f"reduce{slot}.bias", np.zeros(reduced), decay=False)
            scale = 1.0 / math.sqrt(reduced + hidden)
            self._add(f"lstm{slot}.w_x", rng.normal(0.0, scale, (reduced, 4 * hidden)))
            self._add(f"lstm{slot}.w_h", rng.normal(0.0, scale, (hidden, 4 * hidden)))
            bias = np.zeros(4 * hidden)
            bias[hidden:2 * hidden] = 1.0
            self._add(f"lstm{slot}.bias", bias, decay=False)

        dk = cfg.deconv_kernel
        in_channels = cfg.lstm_hidden[2]
        skips = {0: cfg.lstm_hidden[1], 1: cfg.lstm_hidden[0]}
        for index, width in enumerate(cfg.deconv_widths):
            fan_in = in_channels * dk * dk / 4.0
            self._add(f"deconv{index}.kernel", rng.normal(0.0, math.sqrt(1.0 / fan_in), (in_channels, width, dk, dk)))
            self._add(f"deconv{index}.bias", np.zeros(width), decay=False)
            in_channels = width + skips.get(index, 0)

        deep_h, deep_w = self.levels[-1]
        features = cfg.lstm_hidden[2] * deep_h * deep_w
        self._add("type.weight", rng.normal(0.0, math.sqrt(1.0 / features), (features, len(ACTION_TYPES))))
        self._add("type.bias", np.zeros(len(ACTION_TYPES)), decay=False)

    def parameters(self) -> List[Parameter]:
        return list(self.params.values())

    def parameter_count(self) -> int:
        return sum(p.data.size for p in self.params.values())

    def astype(self, dtype) -> "InteractionNet":
        """Cast every parameter, e.g. to float64 for gradient checks."""
        for param in self.params.values():
            param.astype(dtype)
        self.dtype = np.dtype(dtype)
        return self

    def _residual_lstm(self, features: Tensor, slot: int, batch: int) -> Tensor:
        """Run the per-pixel LSTM over the frame axis; return the current frame's output."""
        p = self.params
        reduced = nn.conv2d(features, p[f"reduce{slot}.kernel"], p[f"reduce{slot}.bias"])
        _, channels, height, width = reduced.shape
        seq = nn.reshape(reduced, (batch, FRAMES, channels, height, width))
        seq = nn.transpose(seq, (1, 0, 3, 4, 2))
        seq = nn.reshape(seq, (FRAMES, batch * height * width, channels))

        hidden = self.config.lstm_hidden[slot]
        h = nn.constant(np.zeros((batch * height * width, hidden), dtype=self.dtype))
        c = nn.constant(np.zeros((batch * height * width, hidden), dtype=self.dtype))
        out = h
        for frame in range(FRAMES):
            x_t = nn.take(seq, frame, axis=0)
            h, c = nn.lstm_step(x_t, h, c, p[f"lstm{slot}.w_x"], p[f"lstm{slot}.w_h"], p[f"lstm{slot}.bias"])
            out = nn.add(h, x_t)
        out = nn.reshape(out, (batch, height, width, hidden))
        return nn.transpose(out, (0, 3, 1, 2))

    def forward_batch(self, contexts: np.ndarray) -> Tuple[Tensor, Tensor]:
        """
        Run the network on a batch of context tensors.

        Args:
            contexts: Array of shape (B, 4, H, W, 3)

        Returns:
            Tuple[Tensor, Tensor]: Type logits (B, 7) and location logits (B, H*W)
        """
        height, width = self.levels[0]
        if contexts.ndim != 5 or contexts.shape[1:] != (FRAMES, height, width, 3):
            raise ShapeError(f"Context batch shape {contexts.shape} does not match "
                             f"(B, {FRAMES}, {height}, {width}, 3)",
                             field="contexts", value=contexts.shape)
        p = self.params
        batch = contexts.shape[0]
        frames = contexts.reshape(batch * FRAMES, height, width, 3).transpose(0, 3, 1, 2)
        h = nn.constant(np.ascontiguousarray(frames, dtype=self.dtype))

        lstm_out: Dict[int, Tensor] = {}
        for index in range(len(self.config.conv_widths)):
            h = nn.maxpool2(nn.relu(nn.conv2d(h, p[f"conv{index}.kernel"], p[f"conv{index}.bias"])))
            if index in LSTM_STAGES:
                lstm_out[index + 1] = self._residual_lstm(h, LSTM_STAGES.index(index), batch)

        deepest = len(self.config.conv_widths)
        x = lstm_out[deepest]
        stages = len(self.config.deconv_widths)
        for index in range(stages):
            level = deepest - 1 - index
            x = nn.deconv2d(x, p[f"deconv{index}.kernel"], p[f"deconv{index}.bias"])
            x = nn.crop2d(x, *self.levels[level])
            if index < stages - 1:
                x = nn.relu(x)
            if level in lstm_out:
                x = nn.concat([x, lstm_out[level]], axis=1)
        loc_logits = nn.reshape(x, (batch, height * width))

        flat = nn.reshape(lstm_out[deepest], (batch, -1))
        type_logits = nn.add(nn.matmul(flat, p["type.weight"]), p["type.bias"])
        return type_logits, loc_logits

    def predict_batch(self, contexts: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
        """Type distributions (B, 7) and heatmaps (B, H, W)."""
        type_logits, loc_logits = self.forward_batch(contexts)
        p_type = nn.softmax(type_logits).data
        p_loc = nn.softmax(loc_logits).data.reshape(contexts.shape[0], *self.levels[0])
        return p_type, p_loc

    def predict(self, context: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
        """Type distribution (7,) and location heatmap (H, W) for one context tensor."""
        p_type, p_loc = self.predict_batch(context[None])
        return p_type[0], p_loc[0]

    def batch_loss(self, contexts: np.ndarray, type_labels: np.ndarray, loc_labels: np.ndarray) -> Tensor:
        """Mean over the batch of type plus location cross-entropy."""
        type_logits, loc_logits = self.forward_batch(contexts)
        type_term = nn.softmax_cross_entropy(type_logits, type_labels.astype(self.dtype))
        loc_term = nn.softmax_cross_entropy(loc_logits, loc_labels.reshape(len(loc_labels), -1).astype(self.dtype))
        return nn.add(type_term, loc_term)


def sample_labels(action: Action, state: UiState, dims: Tuple[int, int],
                  variance: float) -> Tuple[np.ndarray, np.ndarray]:
    """One-hot type label and Gaussian location label for a ground-truth action."""
    return action.kind.one_hot(), render_gaussian_label(action, state.screen, dims, variance)


def action_loss(p_type: np.ndarray, p_loc: np.ndarray, action: Action, state: UiState,
                variance: float) -> float:
    """Cross-entropy of predicted distributions against one action's labels."""
    height, width = p_loc.shape
    type_label, loc_label = sample_labels(action, state, (width, height), variance)
    tiny = np.finfo(np.float64).tiny
    type_term = -float(np.sum(type_label * np.log(np.maximum(p_type, tiny))))
    loc_term = -float(np.sum(loc_label * np.log(np.maximum(p_loc, tiny))))
    return type_term + loc_term


def score_actions(p_type: np.ndarray, p_loc: np.ndarray, actions: Sequence[Action],
                  state: UiState) -> List[float]:
    """
    Probability of each candidate action.

    Score = p_type at the action's kind times the heatmap mass over its
    element's scaled bounds. Scores are not renormalized.

    Raises:
        EncodingError: If an action's element is missing or leaves the heatmap
    """
    scores = []
    mass_cache: Dict[str, float] = {}
    for action in actions:
        if action.target_element not in mass_cache:
            element = state.find(action.target_element)
            if element is None:
                raise EncodingError(f"Action targets unknown element {action.target_element}",
                                    field="target_element", value=action.target_element)
            mass_cache[action.target_element] = element_mass(p_loc, element.bounds, state.screen)
        scores.append(float(p_type[action.kind.index]) * mass_cache[action.target_element])
    return scores


def rank_of(scores: Sequence[float], index: int) -> int:
    """1-based rank of ``scores[index]``; ties go to the earlier candidate."""
    order = sorted(range(len(scores)), key=lambda i: (-scores[i], i))
    return order.index(index) + 1

