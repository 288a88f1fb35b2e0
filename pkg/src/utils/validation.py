"""
Schema validation utilities for Mimic Explorer
"""

import logging
from typing import Any, Dict, List

import jsonschema

from mimic.errors import ConfigValidationError, DataError

logger = logging.getLogger(__name__)

POLICIES = ["model-greedy", "model-weighted", "random"]
ACTION_KINDS = [
    "touch", "long_touch", "swipe_up", "swipe_down", "swipe_left", "swipe_right", "input_text",
]

_ELEMENT_SCHEMA: Dict[str, Any] = {
    "type": "object",
    "required": ["id", "bounds"],
    "properties": {
        "id": {"type": "string", "minLength": 1},
        "bounds": {
            "type": "array",
            "items": {"type": "integer"},
            "minItems": 4,
            "maxItems": 4,
        },
        "is_text": {"type": "boolean"},
        "text": {"type": ["string", "null"]},
        "clickable": {"type": "boolean"},
        "long_clickable": {"type": "boolean"},
        "scrollable": {"type": "boolean"},
        "editable": {"type": "boolean"},
        "children": {"type": "array", "items": {"$ref": "#/definitions/element"}},
    },
}

UI_STATE_SCHEMA: Dict[str, Any] = {
    "type": "object",
    "required": ["screen", "root"],
    "definitions": {"element": _ELEMENT_SCHEMA},
    "properties": {
        "screen": {
            "type": "object",
            "required": ["w", "h"],
            "properties": {
                "w": {"type": "integer", "minimum": 1},
                "h": {"type": "integer", "minimum": 1},
            },
        },
        "root": {"$ref": "#/definitions/element"},
    },
}

MOTION_EVENT_SCHEMA: Dict[str, Any] = {
    "type": "object",
    "required": ["t", "phase", "x", "y", "state"],
    "properties": {
        "t": {"type": "integer"},
        "phase": {"enum": ["enter", "move", "leave"]},
        "x": {"type": "integer"},
        "y": {"type": "integer"},
        "kbd": {"type": "boolean"},
        "edit": {"type": ["string", "null"]},
        "state": {"type": "string", "minLength": 1},
    },
}

SIM_APP_SCHEMA: Dict[str, Any] = {
    "type": "object",
    "required": ["app_id", "screen", "initial", "states", "transitions"],
    "definitions": {"element": _ELEMENT_SCHEMA},
    "properties": {
        "app_id": {"type": "string", "minLength": 1},
        "screen": UI_STATE_SCHEMA["properties"]["screen"],
        "initial": {"type": "string", "minLength": 1},
        "states": {
            "type": "object",
            "minProperties": 1,
            "additionalProperties": {
                "type": "object",
                "required": ["screen", "root"],
                "properties": {
                    "screen": UI_STATE_SCHEMA["properties"]["screen"],
                    "root": {"$ref": "#/definitions/element"},
                },
            },
        },
        "transitions": {
            "type": "array",
            "items": {
                "type": "object",
                "required": ["from", "element", "kind", "to"],
                "properties": {
                    "from": {"type": "string"},
                    "element": {"type": "string"},
                    "kind": {"enum": ACTION_KINDS},
                    "to": {"type": "string"},
                },
            },
        },
        "prefs": {
            "type": "array",
            "items": {
                "type": "object",
                "required": ["state", "element", "kind", "w"],
                "properties": {
                    "state": {"type": "string"},
                    "element": {"type": "string"},
                    "kind": {"enum": ACTION_KINDS},
                    "w": {"type": "number", "exclusiveMinimum": 0},
                },
            },
        },
        "targets": {"type": "array", "items": {"type": "string"}},
        "header": {"type": "string"},
    },
}


class SchemaValidator:
    """Validates data files against their JSON schemas."""

    SCHEMAS = {
        "ui_state": UI_STATE_SCHEMA,
        "motion_event": MOTION_EVENT_SCHEMA,
        "sim_app": SIM_APP_SCHEMA,
    }

    @classmethod
    def errors(cls, name: str, data: Any) -> List[DataError]:
        """
        Validate data against a named schema.

        Args:
            name: Schema name (ui_state, motion_event, sim_app)
            data: Decoded JSON value

        Returns:
            List[DataError]: Validation errors (empty if valid)
        """
        validator = jsonschema.Draft7Validator(cls.SCHEMAS[name])
        return [
            DataError(
                message=f"{name} schema validation failed: {error.message}",
                field="/".join(str(p) for p in error.absolute_path) or None,
                value=error.instance,
            )
            for error in sorted(validator.iter_errors(data), key=lambda e: list(e.absolute_path))
        ]

    @classmethod
    def require(cls, name: str, data: Any) -> None:
        """Raise the first validation error, if any."""
        errors = cls.errors(name, data)
        if errors:
            raise errors[0]


class ConfigValidator:
    """Validates run configuration against schema and business rules."""

    SCHEMA: Dict[str, Any] = {
        "type": "object",
        "properties": {
            "seed": {"type": "integer", "minimum": 0},
            "dims": {
                "type": "array",
                "items": {"type": "integer", "minimum": 4},
                "minItems": 2,
                "maxItems": 2,
            },
            "workers": {"type": "integer", "minimum": 1, "maximum": 256},
            "debug_dumps": {"type": "boolean"},
            "traces": {
                "type": "object",
                "properties": {
                    "touch_radius_px": {"type": "number", "exclusiveMinimum": 0},
                    "long_touch_ms": {"type": "integer", "minimum": 1},
                    "text_gap_ms": {"type": "integer", "minimum": 1},
                    "text_placeholder": {"type": "string"},
                },
            },
            "model": {
                "type": "object",
                "properties": {
                    "conv_widths": {
                        "type": "array",
                        "items": {"type": "integer", "minimum": 1},
                        "minItems": 5,
                        "maxItems": 5,
                    },
                    "kernel_size": {"type": "integer", "minimum": 1},
                    "reduce_widths": {
                        "type": "array",
                        "items": {"type": "integer", "minimum": 1},
                        "minItems": 3,
                        "maxItems": 3,
                    },
                    "lstm_hidden": {
                        "type": "array",
                        "items": {"type": "integer", "minimum": 1},
                        "minItems": 3,
                        "maxItems": 3,
                    },
                    "deconv_widths": {
                        "type": "array",
                        "items": {"type": "integer", "minimum": 1},
                        "minItems": 1,
                    },
                    "deconv_kernel": {"type": "integer", "minimum": 2},
                    "learning_rate": {"type": "number", "exclusiveMinimum": 0},
                    "momentum": {"type": "number", "minimum": 0, "maximum": 1},
                    "weight_decay": {"type": "number", "minimum": 0},
                    "label_variance": {"type": "number", "exclusiveMinimum": 0},
                    "batch_size": {"type": "integer", "minimum": 1},
                    "seed": {"type": "integer", "minimum": 0},
                },
            },
            "train": {
                "type": "object",
                "properties": {
                    "epochs": {"type": "integer", "minimum": 1},
                    "patience": {"type": "integer", "minimum": 1},
                    "holdout_fraction": {"type": "number", "minimum": 0, "maximum": 0.9},
                    "max_steps": {"type": ["integer", "null"], "minimum": 1},
                },
            },
            "explore": {
                "type": "object",
                "properties": {
                    "policy": {"enum": POLICIES},
                    "budget": {"type": "integer", "minimum": 1},
                },
            },
            "compare": {
                "type": "object",
                "properties": {
                    "policies": {"type": "array", "items": {"enum": POLICIES}},
                    "seeds": {"type": "integer", "minimum": 5},
                    "budget": {"type": "integer", "minimum": 1},
                },
            },
            "suite": {
                "type": "object",
                "properties": {
                    "kind": {"enum": ["gated", "uniform", "wide"]},
                    "count": {"type": "integer", "minimum": 1},
                    "bias": {"type": "number", "exclusiveMinimum": 0},
                    "max_states": {"type": "integer", "minimum": 2},
                },
            },
            "corpus": {
                "type": "object",
                "properties": {
                    "n_flows": {"type": "integer", "minimum": 1},
                    "flow_len": {"type": "integer", "minimum": 1},
                },
            },
            "paths": {
                "type": "object",
                "properties": {
                    "out": {"type": "string", "minLength": 1},
                    "checkpoint": {"type": ["string", "null"]},
                },
            },
        },
    }

    @classmethod
    def validate_config(cls, config_data: Dict[str, Any]) -> List[ConfigValidationError]:
        """
        Validate configuration data against schema and business rules.

        Args:
            config_data: Configuration dictionary to validate

        Returns:
            List[ConfigValidationError]: List of validation errors (empty if valid)
        """
        errors = []

        try:
            jsonschema.validate(config_data, cls.SCHEMA)
        except jsonschema.ValidationError as e:
            errors.append(ConfigValidationError(
                message=f"Schema validation failed: {e.message}",
                field=".".join(str(p) for p in e.absolute_path) or None,
                value=e.instance,
            ))
            return errors

        errors.extend(cls._validate_business_rules(config_data))
        return errors

    @classmethod
    def _validate_business_rules(cls, config_data: Dict[str, Any]) -> List[ConfigValidationError]:
        """Validate rules that go beyond JSON schema."""
        errors = []
        model = config_data.get("model", {})

        reduce_widths = model.get("reduce_widths")
        lstm_hidden = model.get("lstm_hidden")
        if reduce_widths is not None and lstm_hidden is not None and reduce_widths != lstm_hidden:
            errors.append(ConfigValidationError(
                message="Residual LSTM needs hidden size equal to its reduced input width",
                field="model.lstm_hidden",
                value=lstm_hidden,
            ))

        deconv_widths = model.get("deconv_widths")
        if deconv_widths is not None:
            if len(deconv_widths) != 5:
                errors.append(ConfigValidationError(
                    message="Decoder needs one deconvolution stage per pooling stage (5)",
                    field="model.deconv_widths",
                    value=deconv_widths,
                ))
            elif deconv_widths[-1] != 1:
                errors.append(ConfigValidationError(
                    message="Last deconvolution stage must produce a single heatmap channel",
                    field="model.deconv_widths",
                    value=deconv_widths,
                ))

        kernel = model.get("kernel_size")
        if kernel is not None and kernel % 2 == 0:
            errors.append(ConfigValidationError(
                message="Convolution kernel size must be odd",
                field="model.kernel_size",
                value=kernel,
            ))

        policies = config_data.get("compare", {}).get("policies")
        if policies is not None and len(set(policies)) < 2:
            errors.append(ConfigValidationError(
                message="Policy comparison needs at least two distinct policies",
                field="compare.policies",
                value=policies,
            ))

        return errors

    @classmethod
    def get_schema(cls) -> Dict[str, Any]:
        """Get the JSON schema."""
        return cls.SCHEMA.copy()
