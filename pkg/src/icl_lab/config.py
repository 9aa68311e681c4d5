"""Experiment configuration: YAML schema, validation, and normalization.

A config fully determines an experiment given its seeds. Schema (see README
for a commented example):

    name: my-experiment
    description: optional free text
    seeds: [0, 1, 2]
    families:                 # one or more task distributions
      - {kind: linear_fixed_noise, d: 5, sigma: 0.22}
    train:
      context_lengths: [5, 10, 20, 40]
      steps: 2000
      batch_size: 64         # optional, default 64
      learning_rate: 1.0e-4  # optional, default 1e-4
      num_tasks: 100000      # default T where no task sweep applies
      streaming: false       # optional
    eval:
      num_tasks: 1000        # eval prompts per (model, N) cell
    models:                  # trainable entries; d / n_max filled per family
      - {kind: vector_mlp, width: 256}
      - {kind: sgpt, layers: 2, embed_dim: 64}
    estimators:              # optional closed-form baselines (no training)
      - {kind: zero}
      - {kind: bayes_ridge}
      - {kind: smoother, kernel: hilbert}
    sweeps:                  # at least one section
      task_scaling: {T_values: [1000, 10000, 100000], eval_N: 10}
      context_scaling: {N_values: [5, 10, 20, 40]}
    checkpoints: false       # save final weights per trained model

Validation errors carry the dotted path of the offending field.
"""

from __future__ import annotations

import io
from dataclasses import dataclass, field
from typing import Optional, Tuple

import yaml

from . import models as md
from . import taskgen as tg

MODEL_KINDS = tuple(sorted(md._MODEL_CLASSES))
ESTIMATOR_KINDS = ("zero", "ols", "ridge", "bayes_ridge", "smoother", "one_step_gd")
_KERNEL_KINDS = ("linear", "exponential", "hilbert")


class ConfigError(ValueError):
    """Schema violation; the message starts with the offending field path."""

    def __init__(self, path: str, message: str):
        super().__init__(f"{path}: {message}")
        self.path = path


def _typename(value) -> str:
    return type(value).__name__


def _get(section: dict, path: str, key: str, types, required: bool = True, default=None):
    here = f"{path}.{key}" if path else key
    if key not in section:
        if required:
            raise ConfigError(here, "required field is missing")
        return default
    value = section[key]
    if types is float and isinstance(value, int) and not isinstance(value, bool):
        value = float(value)
    if isinstance(value, bool) and types in (int, float):
        raise ConfigError(here, f"expected {types.__name__}, got bool")
    if not isinstance(value, types):
        want = types.__name__ if isinstance(types, type) else "/".join(t.__name__ for t in types)
        raise ConfigError(here, f"expected {want}, got {_typename(value)}")
    return value


def _int_list(section: dict, path: str, key: str, required: bool = True) -> Optional[Tuple[int, ...]]:
    raw = _get(section, path, key, list, required=required)
    if raw is None:
        return None
    here = f"{path}.{key}" if path else key
    if not raw:
        raise ConfigError(here, "list must not be empty")
    for i, v in enumerate(raw):
        if isinstance(v, bool) or not isinstance(v, int):
            raise ConfigError(f"{here}[{i}]", f"expected int, got {_typename(v)}")
    return tuple(raw)


def _no_extras(section: dict, path: str, allowed) -> None:
    for key in section:
        if key not in allowed:
            here = f"{path}.{key}" if path else key
            raise ConfigError(here, f"unknown field (allowed: {', '.join(sorted(allowed))})")


# -- normalized config -----------------------------------------------------------


@dataclass(frozen=True)
class TrainSettings:
    context_lengths: Tuple[int, ...]
    steps: int
    batch_size: int = 64
    learning_rate: float = 1e-4
    num_tasks: int = 1000
    streaming: bool = False


@dataclass(frozen=True)
class TaskScalingSweep:
    T_values: Tuple[int, ...]
    eval_N: int


@dataclass(frozen=True)
class ContextScalingSweep:
    N_values: Tuple[int, ...]


@dataclass(frozen=True)
class ExperimentConfig:
    name: str
    seeds: Tuple[int, ...]
    families: tuple
    train: TrainSettings
    eval_tasks: int
    models: tuple = ()
    estimators: tuple = ()
    task_scaling: Optional[TaskScalingSweep] = None
    context_scaling: Optional[ContextScalingSweep] = None
    checkpoints: bool = False
    description: str = ""

    def to_dict(self) -> dict:
        payload = {
            "name": self.name,
            "description": self.description,
            "seeds": list(self.seeds),
            "families": [{"kind": tg.family_kind(f), **f.__dict__} for f in self.families],
            "train": {
                "context_lengths": list(self.train.context_lengths),
                "steps": self.train.steps,
                "batch_size": self.train.batch_size,
                "learning_rate": self.train.learning_rate,
                "num_tasks": self.train.num_tasks,
                "streaming": self.train.streaming,
            },
            "eval": {"num_tasks": self.eval_tasks},
            "models": [dict(m) for m in self.models],
            "estimators": [dict(e) for e in self.estimators],
            "sweeps": {},
            "checkpoints": self.checkpoints,
        }
        if self.task_scaling:
            payload["sweeps"]["task_scaling"] = {
                "T_values": list(self.task_scaling.T_values),
                "eval_N": self.task_scaling.eval_N,
            }
        if self.context_scaling:
            payload["sweeps"]["context_scaling"] = {
                "N_values": list(self.context_scaling.N_values),
            }
        return payload

    def to_yaml(self) -> str:
        return yaml.safe_dump(self.to_dict(), sort_keys=True, default_flow_style=False)


_TOP_FIELDS = ("name", "description", "seeds", "families", "family", "train", "eval",
               "models", "estimators", "sweeps", "checkpoints")


def _parse_family(entry, path: str):
    if not isinstance(entry, dict):
        raise ConfigError(path, f"expected mapping, got {_typename(entry)}")
    kind = _get(entry, path, "kind", str)
    if kind not in tg._FAMILY_KINDS:
        raise ConfigError(f"{path}.kind",
                          f"unknown family {kind!r} (choose from {', '.join(sorted(tg._FAMILY_KINDS))})")
    try:
        return tg.family_from_dict(entry)
    except (TypeError, ValueError) as exc:
        raise ConfigError(path, str(exc)) from None


def _parse_model_entry(entry, path: str) -> dict:
    if not isinstance(entry, dict):
        raise ConfigError(path, f"expected mapping, got {_typename(entry)}")
    kind = _get(entry, path, "kind", str)
    if kind not in MODEL_KINDS:
        raise ConfigError(f"{path}.kind",
                          f"unknown model {kind!r} (choose from {', '.join(MODEL_KINDS)})")
    _get(entry, path, "id", str, required=False)
    return dict(entry)


def _parse_estimator_entry(entry, path: str) -> dict:
    if not isinstance(entry, dict):
        raise ConfigError(path, f"expected mapping, got {_typename(entry)}")
    kind = _get(entry, path, "kind", str)
    if kind not in ESTIMATOR_KINDS:
        raise ConfigError(f"{path}.kind",
                          f"unknown estimator {kind!r} (choose from {', '.join(ESTIMATOR_KINDS)})")
    if kind == "ridge":
        _get(entry, path, "lam", float)
        _no_extras(entry, path, {"kind", "lam"})
    elif kind == "smoother":
        kernel = _get(entry, path, "kernel", str)
        if kernel not in _KERNEL_KINDS:
            raise ConfigError(f"{path}.kernel",
                              f"unknown kernel {kernel!r} (choose from {', '.join(_KERNEL_KINDS)})")
        _no_extras(entry, path, {"kind", "kernel"})
    elif kind == "one_step_gd":
        _get(entry, path, "gain", float, required=False)
        _no_extras(entry, path, {"kind", "gain"})
    else:
        _no_extras(entry, path, {"kind"})
    return dict(entry)


def parse_config(data: dict) -> ExperimentConfig:
    """Validate a raw mapping and return the normalized config."""
    if not isinstance(data, dict):
        raise ConfigError("<root>", f"config must be a mapping, got {_typename(data)}")
    _no_extras(data, "", _TOP_FIELDS)
    name = _get(data, "", "name", str)
    description = _get(data, "", "description", str, required=False, default="")
    seeds = _int_list(data, "", "seeds")

    if ("families" in data) == ("family" in data):
        raise ConfigError("families", "provide exactly one of 'families' or 'family'")
    if "family" in data:
        families = (_parse_family(data["family"], "family"),)
    else:
        raw = _get(data, "", "families", list)
        if not raw:
            raise ConfigError("families", "list must not be empty")
        families = tuple(_parse_family(f, f"families[{i}]") for i, f in enumerate(raw))

    train_raw = _get(data, "", "train", dict)
    _no_extras(train_raw, "train", {"context_lengths", "steps", "batch_size",
                                    "learning_rate", "num_tasks", "streaming"})
    lengths = _int_list(train_raw, "train", "context_lengths")
    if list(lengths) != sorted(lengths) or lengths[0] < 1:
        raise ConfigError("train.context_lengths", f"must be ascending and >= 1, got {list(lengths)}")
    train = TrainSettings(
        context_lengths=lengths,
        steps=_get(train_raw, "train", "steps", int),
        batch_size=_get(train_raw, "train", "batch_size", int, required=False, default=64),
        learning_rate=_get(train_raw, "train", "learning_rate", float, required=False, default=1e-4),
        num_tasks=_get(train_raw, "train", "num_tasks", int, required=False, default=1000),
        streaming=_get(train_raw, "train", "streaming", bool, required=False, default=False),
    )
    if train.steps < 1 or train.batch_size < 1 or train.num_tasks < 1:
        raise ConfigError("train", "steps, batch_size and num_tasks must be >= 1")

    eval_raw = _get(data, "", "eval", dict)
    _no_extras(eval_raw, "eval", {"num_tasks"})
    eval_tasks = _get(eval_raw, "eval", "num_tasks", int)
    if eval_tasks < 1:
        raise ConfigError("eval.num_tasks", f"must be >= 1, got {eval_tasks}")

    raw_models = _get(data, "", "models", list, required=False, default=[])
    models = tuple(_parse_model_entry(m, f"models[{i}]") for i, m in enumerate(raw_models))
    raw_estimators = _get(data, "", "estimators", list, required=False, default=[])
    estimators = tuple(_parse_estimator_entry(e, f"estimators[{i}]")
                       for i, e in enumerate(raw_estimators))
    if not models and not estimators:
        raise ConfigError("models", "need at least one model or estimator")

    sweeps_raw = _get(data, "", "sweeps", dict)
    _no_extras(sweeps_raw, "sweeps", {"task_scaling", "context_scaling"})
    task_scaling = context_scaling = None
    if "task_scaling" in sweeps_raw:
        ts = _get(sweeps_raw, "sweeps", "task_scaling", dict)
        _no_extras(ts, "sweeps.task_scaling", {"T_values", "eval_N"})
        T_values = _int_list(ts, "sweeps.task_scaling", "T_values")
        if list(T_values) != sorted(T_values):
            raise ConfigError("sweeps.task_scaling.T_values", f"must ascend, got {list(T_values)}")
        eval_N = _get(ts, "sweeps.task_scaling", "eval_N", int)
        if eval_N not in lengths:
            raise ConfigError("sweeps.task_scaling.eval_N",
                              f"{eval_N} is not a trained context length {list(lengths)}")
        task_scaling = TaskScalingSweep(T_values, eval_N)
    if "context_scaling" in sweeps_raw:
        cs = _get(sweeps_raw, "sweeps", "context_scaling", dict)
        _no_extras(cs, "sweeps.context_scaling", {"N_values"})
        context_scaling = ContextScalingSweep(_int_list(cs, "sweeps.context_scaling", "N_values"))
    if task_scaling is None and context_scaling is None:
        raise ConfigError("sweeps", "need task_scaling and/or context_scaling")

    return ExperimentConfig(
        name=name, seeds=seeds, families=families, train=train, eval_tasks=eval_tasks,
        models=models, estimators=estimators, task_scaling=task_scaling,
        context_scaling=context_scaling,
        checkpoints=_get(data, "", "checkpoints", bool, required=False, default=False),
        description=description,
    )


def load_config(path) -> ExperimentConfig:
    with open(path) as f:
        try:
            data = yaml.safe_load(f)
        except yaml.YAMLError as exc:
            raise ConfigError("<root>", f"not valid YAML: {exc}") from None
    return parse_config(data)


def loads_config(text: str) -> ExperimentConfig:
    return parse_config(yaml.safe_load(io.StringIO(text)))


# -- derived objects ------------------------------------------------------------------


def model_spec_for(entry: dict, family, train: TrainSettings) -> md.ModelSpec:
    """Fill family/context-dependent fields (d, n_max) and build the spec."""
    payload = dict(entry)
    payload.pop("id", None)  # display label only, not a spec field
    payload.setdefault("d", family.d)
    if payload["kind"] in ("vector_mlp", "concat_mlp"):
        payload.setdefault("n_max", train.context_lengths[-1] + 1)
    try:
        return md.spec_from_dict(payload)
    except (TypeError, ValueError) as exc:
        raise ConfigError("models", f"{entry}: {exc}") from None


def train_config_for(cfg: ExperimentConfig, num_tasks: int, seed: int):
    from .trainer import TrainConfig

    t = cfg.train
    return TrainConfig(context_lengths=t.context_lengths, num_tasks=num_tasks,
                       steps=t.steps, batch_size=t.batch_size,
                       learning_rate=t.learning_rate, master_seed=seed,
                       streaming=t.streaming)
