"""JSON schemas for command configs, checked before any work starts."""

from __future__ import annotations

import jsonschema

from .errors import ConfigError

_INT = {"type": "integer"}
_POS_INT = {"type": "integer", "minimum": 1}
_NONNEG_INT = {"type": "integer", "minimum": 0}
_POS = {"type": "number", "exclusiveMinimum": 0}
_PATH = {"type": "string", "minLength": 1}

BLOCK = {
    "type": "object",
    "properties": {"u": _POS_INT, "v": _POS_INT, "p": _POS_INT},
    "required": ["u", "v", "p"],
    "additionalProperties": False,
}
STRUCTURE = {
    "oneOf": [
        {"type": "null"},
        BLOCK,
        {"type": "object", "properties": {"block": BLOCK}, "required": ["block"],
         "additionalProperties": False},
    ]
}

DATASET_SPEC = {
    "type": "object",
    "properties": {
        "m": _POS_INT,
        "n": _POS_INT,
        "p_nonzero": {"type": "number", "exclusiveMinimum": 0, "maximum": 1},
        "n_train": _POS_INT,
        "n_test": _NONNEG_INT,
        "noise_std": {"type": "number", "minimum": 0},
        "seed": _NONNEG_INT,
        "fixed_support": {"oneOf": [{"type": "null"},
                                    {"type": "array", "items": _NONNEG_INT, "minItems": 1}]},
        "structure": STRUCTURE,
        "sensing_seeds": {"oneOf": [{"type": "null"},
                                    {"type": "array", "items": _NONNEG_INT, "minItems": 1}]},
    },
    "additionalProperties": False,
}

MODEL = {
    "type": "object",
    "properties": {
        "K": _POS_INT,
        "delta": {"type": "number", "exclusiveMinimum": 0, "maximum": 1},
        "activation": {"enum": ["soft", "hard", "relu"]},
        "quant_mode": {"enum": ["high_res", "one_bit", "ternary", "channel_wise"]},
        "structure": STRUCTURE,
        "tied": {"type": "boolean"},
        "theta_init": {"type": "number", "minimum": 0},
        "lambda0": _POS,
        "channel_axis": {"enum": ["row", "column", "matrix"]},
    },
    "required": ["K"],
    "additionalProperties": False,
}

QUANT = {
    "type": "object",
    "properties": {
        "mode": {"enum": ["lazy", "prox"]},
        "lambda0": _POS,
        "beta": {"type": "number", "minimum": 0},
        "lr0": _POS,
        "decay": {"type": "number", "exclusiveMinimum": 0, "maximum": 1},
        "decay_every": _POS_INT,
        "epochs": _NONNEG_INT,
        "seed": _NONNEG_INT,
        "optimizer": {"enum": ["adam", "sgd"]},
        "batch_size": {"oneOf": [{"type": "null"}, _POS_INT]},
    },
    "required": ["epochs"],
    "additionalProperties": False,
}

DATASET_REF = {"oneOf": [_PATH, DATASET_SPEC]}

_TRAIN_PROPS = {
    "dataset": DATASET_REF,
    "model": MODEL,
    "quant": QUANT,
    "pretrain": {"type": "boolean"},
    "pretrain_epochs": _NONNEG_INT,
    "pretrain_lr": _POS,
    "stage2_epochs": _NONNEG_INT,
    "stage2_lr": _POS,
    "batch_size": {"oneOf": [{"type": "null"}, _POS_INT]},
    "loss": {"enum": ["squared", "norm"]},
    "train_subset": _POS_INT,
    "seed": _NONNEG_INT,
    "out": _PATH,
    "name": {"type": "string"},
}

TRAIN = {
    "type": "object",
    "properties": _TRAIN_PROPS,
    "required": ["dataset", "model", "quant", "pretrain_epochs", "stage2_epochs"],
    "additionalProperties": False,
}

SCHEME = {
    "type": "object",
    "properties": _TRAIN_PROPS,
    "required": ["model", "quant", "pretrain_epochs", "stage2_epochs"],
    "additionalProperties": False,
}

GEN_DATA = {
    "type": "object",
    "properties": {"dataset": DATASET_SPEC, "out": _PATH, "seed": _NONNEG_INT},
    "required": ["dataset"],
    "additionalProperties": False,
}

EVAL = {
    "type": "object",
    "properties": {"checkpoint": _PATH, "dataset": _PATH, "out": _PATH, "seed": _NONNEG_INT},
    "required": ["checkpoint", "dataset"],
    "additionalProperties": False,
}

DIAGNOSE = {
    "type": "object",
    "properties": {
        "checkpoint": _PATH,
        "dataset": _PATH,
        "split": {"enum": ["train", "test"]},
        "support": {"type": "array", "items": _NONNEG_INT, "minItems": 1},
        "variant": {"enum": ["soft", "hard"]},
        "delta": {"type": "number", "exclusiveMinimum": 0, "maximum": 1},
        "out": _PATH,
        "seed": _NONNEG_INT,
    },
    "required": ["checkpoint", "dataset"],
    "additionalProperties": False,
}

COMPARE = {
    "type": "object",
    "properties": {
        "dataset": DATASET_REF,
        "schemes": {"type": "array", "items": SCHEME, "minItems": 1},
        "out": _PATH,
        "seed": _NONNEG_INT,
    },
    "required": ["dataset", "schemes"],
    "additionalProperties": False,
}

BITS = {
    "type": "object",
    "properties": {
        "model": {"enum": ["fcn_relu", "fcn_st", "dun", "one_bit", "one-bit"]},
        "K": _POS_INT,
        "m": _POS_INT,
        "n": _POS_INT,
    },
    "required": ["model", "K", "m", "n"],
    "additionalProperties": False,
}

SCHEMAS = {
    "gen-data": GEN_DATA,
    "train": TRAIN,
    "eval": EVAL,
    "diagnose": DIAGNOSE,
    "compare": COMPARE,
    "bits": BITS,
}


def validate(command: str, config: dict) -> dict:
    """Raise :class:`ConfigError` naming the offending field if ``config`` is invalid."""
    try:
        jsonschema.validate(config, SCHEMAS[command])
    except jsonschema.ValidationError as exc:
        where = "/".join(str(p) for p in exc.absolute_path) or "<root>"
        raise ConfigError(f"{command} config invalid at {where}: {exc.message}") from None
    return config
