"""Global JSON configuration: schema and loader."""

from __future__ import annotations

import json
from pathlib import Path

import jsonschema

from .degrade import NoiseStageError, _contains_noise
from .synth import SynthConfig

_RANGE = {
    "oneOf": [
        {"type": "number"},
        {"type": "array", "items": {"type": "number"}, "minItems": 2, "maxItems": 2},
    ]
}


def _options(names):
    return {"oneOf": [
        {"enum": list(names)},
        {"type": "array", "items": {"enum": list(names)}, "minItems": 1},
        {"type": "object", "propertyNames": {"enum": list(names)},
         "additionalProperties": {"type": "number", "minimum": 0}},
    ]}


_FAMILIES = _options(["iso_gaussian", "aniso_gaussian", "sinc"])
_FILTERS = _options(["bilinear", "bicubic", "area"])

_BLUR = {
    "type": "object",
    "properties": {
        "prob": {"type": "number", "minimum": 0, "maximum": 1},
        "family": _FAMILIES,
        "families": _FAMILIES,
        "size": _RANGE,
        "sigma": _RANGE,
        "sigma_x": _RANGE,
        "sigma_y": _RANGE,
        "theta": _RANGE,
        "cutoff": _RANGE,
    },
    "additionalProperties": False,
}
_RESIZE = {
    "type": "object",
    "properties": {
        "prob": {"type": "number", "minimum": 0, "maximum": 1},
        "scale": _RANGE,
        "updown": _options(["up", "down", "keep"]),
        "filter": _FILTERS,
        "filters": _FILTERS,
    },
    "additionalProperties": False,
}
_COMPRESS = {
    "type": "object",
    "properties": {
        "prob": {"type": "number", "minimum": 0, "maximum": 1},
        "quality": _RANGE,
    },
    "additionalProperties": False,
}

CONFIG_SCHEMA = {
    "$schema": "https://json-schema.org/draft/2020-12/schema",
    "title": "rawforge configuration",
    "type": "object",
    "properties": {
        "degradation": {
            "type": "object",
            "properties": {
                "stages": {
                    "type": "array",
                    "minItems": 1,
                    "items": {
                        "oneOf": [
                            {"type": "object", "properties": {"blur": _BLUR}, "required": ["blur"],
                             "additionalProperties": False},
                            {"type": "object", "properties": {"resize": _RESIZE}, "required": ["resize"],
                             "additionalProperties": False},
                            {"type": "object", "properties": {"compress": _COMPRESS}, "required": ["compress"],
                             "additionalProperties": False},
                        ]
                    },
                },
                "second_order": {"type": "boolean"},
                "seed": {"type": "integer", "minimum": 0},
            },
            "additionalProperties": False,
        },
        "noise": {
            "type": "object",
            "properties": {
                "shot_range": {"type": "array", "items": {"type": "number", "exclusiveMinimum": 0},
                               "minItems": 2, "maxItems": 2},
                "shot_log_range": {"type": "array", "items": {"type": "number"}, "minItems": 2, "maxItems": 2},
                "read_slope": {"type": "number"},
                "read_intercept": {"type": "number"},
                "read_sigma": {"type": "number", "minimum": 0},
            },
            "additionalProperties": False,
        },
        "gamma": {"type": "string", "pattern": r"^(srgb|srgb_standard|power:[0-9.]+)$"},
        "tone": {"enum": ["smoothstep", "identity"]},
        "scale": {"type": "number", "exclusiveMinimum": 0},
        "zero_noise": {"type": "boolean"},
    },
    "additionalProperties": False,
}


def validate_config(d: dict) -> dict:
    """Raise ``jsonschema.ValidationError`` (or ``NoiseStageError``) on a bad config."""
    if isinstance(d, dict) and _contains_noise(d.get("degradation", {})):
        raise NoiseStageError("degradation configs may not contain noise stages")
    jsonschema.validate(d, CONFIG_SCHEMA)
    return d


def load_config(path=None) -> SynthConfig:
    """Parse and validate a config file; ``None`` gives the defaults."""
    if path is None:
        return SynthConfig()
    d = json.loads(Path(path).read_text())
    return SynthConfig.from_dict(validate_config(d))
