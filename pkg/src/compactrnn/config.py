"""Experiment configuration schema, YAML parsing and validation.

The file is a YAML mapping with four sections::

    task:      {name: frame|adding, ...generator parameters}
    network:   {layers: [...], compression: [...], ...}
    train:     {unroll, label_delay, lr0, ...}
    output:    {metrics, checkpoint, ...}

Unknown keys anywhere are rejected. Defaults follow the training recipe
(20-frame unroll, 5-frame label delay, lr 0.004 decaying by 0.1, cell clip 50,
uniform init in [-0.02, 0.02]).
"""

from pathlib import Path
from typing import List, Literal, Optional, Union

import yaml
from pydantic import BaseModel, ConfigDict, Field, ValidationError, model_validator

GATES = ("i", "f", "c", "o")


class ConfigError(ValueError):
    """Invalid experiment configuration; the message names the offending field."""


class _Strict(BaseModel):
    model_config = ConfigDict(extra="forbid")


class LayerConfig(_Strict):
    type: Literal["rnn", "lstm"]
    hidden: int = Field(gt=0)
    projection: Optional[int] = Field(default=None, gt=0)
    # Refuse automatic projection removal for this layer.
    projection_required: bool = False


class CompressionConfig(_Strict):
    matrix: Literal["U", "W"]
    layer: int = Field(ge=1)
    gates: Union[Literal["all"], List[Literal["i", "f", "c", "o"]]] = "all"
    kind: Literal["dense", "lowrank", "hashed", "toeplitz"]
    rank: Optional[int] = Field(default=None, ge=1)

    @model_validator(mode="after")
    def _rank_for_compressed(self):
        if self.kind != "dense" and self.rank is None:
            raise ValueError(f"{self.kind} compression of {self.matrix}^{self.layer} needs a rank")
        if self.gates != "all" and len(set(self.gates)) != len(self.gates):
            raise ValueError(f"duplicate gates in {self.gates}")
        return self

    def gate_list(self):
        return list(GATES) if self.gates == "all" else list(self.gates)


class NetworkConfig(_Strict):
    input_dim: Optional[int] = Field(default=None, gt=0)
    num_classes: Optional[int] = Field(default=None, gt=1)
    init_range: float = Field(default=0.02, gt=0)
    # "auto": drop P^{l-1} when U^{l-1} and W^l are both fully Toeplitz-like.
    projection_removal: Literal["auto", "off"] = "auto"
    layers: List[LayerConfig] = Field(min_length=1)
    compression: List[CompressionConfig] = Field(default_factory=list)

    @model_validator(mode="after")
    def _check_compression(self):
        seen = set()
        for entry in self.compression:
            if entry.layer > len(self.layers):
                raise ValueError(f"compression of {entry.matrix}^{entry.layer}: "
                                 f"network has {len(self.layers)} layers")
            layer = self.layers[entry.layer - 1]
            if layer.type == "rnn" and entry.gates != "all":
                raise ValueError(f"{entry.matrix}^{entry.layer}: rnn layers have no gates")
            gates = entry.gate_list() if layer.type == "lstm" else ["x"]
            for gate in gates:
                key = (entry.matrix, entry.layer, gate)
                if key in seen:
                    raise ValueError(f"{matrix_name(*key)} is assigned twice")
                seen.add(key)
        return self

    def assignment(self, matrix, layer, gate):
        """(kind, rank) configured for one matrix; dense when unassigned."""
        for entry in self.compression:
            if entry.matrix == matrix and entry.layer == layer:
                if self.layers[layer - 1].type == "rnn" or gate in entry.gate_list():
                    return entry.kind, entry.rank
        return "dense", None


def matrix_name(matrix, layer, gate=None):
    return f"{matrix}{'' if gate in (None, 'x') else '_' + gate}^{layer}"


class TaskConfig(_Strict):
    name: Literal["frame", "adding"] = "frame"
    num_utterances: int = Field(default=200, gt=1)
    length: int = Field(default=100, gt=1)
    num_classes: int = Field(default=42, gt=1)
    feature_dim: int = Field(default=40, gt=0)
    seed: int = Field(default=1, ge=0)
    split_ratio: float = Field(default=0.9, gt=0, lt=1)


class TrainConfig(_Strict):
    unroll: int = Field(default=20, ge=1)
    label_delay: int = Field(default=5, ge=0)
    lr0: float = Field(default=0.004, gt=0)
    decay_factor: float = Field(default=0.1, gt=0, le=1)
    decay_horizon: float = Field(default=1e6, gt=0)
    grad_clip_norm: Optional[float] = Field(default=10.0, gt=0)
    cell_clip: Optional[float] = Field(default=50.0, gt=0)
    batch_size: int = Field(default=16, ge=1)
    max_steps: int = Field(default=2000, ge=0)
    eval_interval: int = Field(default=100, ge=1)
    seed: int = Field(default=0, ge=0)

    @model_validator(mode="after")
    def _delay_inside_window(self):
        if self.label_delay >= self.unroll:
            raise ValueError(f"label_delay {self.label_delay} must be < unroll {self.unroll}")
        return self


class OutputConfig(_Strict):
    metrics: Optional[str] = None
    checkpoint: Optional[str] = None
    checkpoint_interval: Optional[int] = Field(default=None, ge=1)


class ExperimentConfig(_Strict):
    task: TaskConfig
    network: NetworkConfig
    train: TrainConfig = Field(default_factory=TrainConfig)
    output: OutputConfig = Field(default_factory=OutputConfig)

    @model_validator(mode="after")
    def _fill_task_dims(self):
        task_dim = self.task.feature_dim if self.task.name == "frame" else 2
        if self.network.input_dim is None:
            self.network.input_dim = task_dim
        if self.network.num_classes is None:
            self.network.num_classes = self.task.num_classes
        return self


def _format_error(err):
    lines = []
    for item in err.errors():
        path = ".".join(str(p) for p in item["loc"]) or "<root>"
        lines.append(f"{path}: {item['msg']}")
    return "; ".join(lines)


def config_from_dict(data):
    if not isinstance(data, dict):
        raise ConfigError("<root>: config must be a mapping")
    try:
        return ExperimentConfig.model_validate(data)
    except ValidationError as err:
        raise ConfigError(_format_error(err)) from None


def parse_config(path):
    """Load and validate an experiment config, filling every default."""
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"config file not found: {path}")
    try:
        data = yaml.safe_load(path.read_text())
    except yaml.YAMLError as err:
        raise ConfigError(f"{path}: not valid YAML ({err})") from None
    return config_from_dict(data)


def config_to_dict(config):
    return config.model_dump(mode="json")


def dump_config(config):
    return yaml.safe_dump(config_to_dict(config), sort_keys=False)
