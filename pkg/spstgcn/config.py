import json
import logging
import os
from typing import Any, Dict, Iterable, List, Mapping, Optional, Union

from spstgcn.dataclasses import DtwConfig, GraphSpec, ModelConfig, Schedule, SyntheticSpec, TrainConfig
from spstgcn.enums import AdjacencySign, Branch, DistanceMeasure
from spstgcn.errors import ConfigError, GraphError
from spstgcn.graph import ntu_graph
from spstgcn.utils import parse_bool

logger = logging.getLogger(__name__)

CONFIG_ENV = "SPST_CONFIG"
SECTIONS = ("run", "data", "synthetic", "dtw", "model", "train")

Value = Union[str, int, float, bool, list]


class Config:
    """
    Represents the settings of a run: packaged defaults, overlaid by a `key = value` file, then by
    explicit overrides.

    Keys are dotted `section.name` pairs, such as `dtw.radius` or `train.epochs`. Overriding values
    are coerced to the type of the default.

    ### Attributes

    - `json_location` (`str`): The defaults file, a name inside `spstgcn/configs` or a path.
    - `path` (`str`): Optional override file.
    - `overrides` (`dict`): Optional final overrides, usually from command-line flags.

    ### Methods

    - `get`: Return the value of a key.
    - `set`: Coerce and store the value of a known key.
    - `model_config`, `train_config`, `dtw_config`, `synthetic_spec`, `graph`: Build typed records.
    """

    def __init__(
        self,
        path: Optional[str] = None,
        overrides: Optional[Mapping[str, Any]] = None,
        json_location: str = "default.json",
    ):
        self._json_location = json_location
        self._config = {}
        base_dir = os.path.dirname(__file__)
        packaged = os.path.join(base_dir, "configs", json_location)
        self._load_config(packaged if os.path.exists(packaged) else json_location)
        if not self._config:
            raise ConfigError("Provided config is empty.")

        self._values: Dict[str, Value] = {}
        for section in SECTIONS:
            entries = self._get_config_or_raise(section)
            if not isinstance(entries, dict):
                raise ConfigError(f'Provided config is malformed. "{section}" must be an object.')
            for name, value in entries.items():
                self._values[f"{section}.{name}"] = value

        self.path = path
        if path is not None:
            self.load_overrides(path)
        for key, value in (overrides or {}).items():
            if value is not None:
                self.set(key, value)

    @classmethod
    def from_environment(cls, path: Optional[str] = None, overrides: Optional[Mapping[str, Any]] = None) -> "Config":
        """Like the constructor, but fall back to the file named by `SPST_CONFIG` when `path` is not given."""
        path = path or os.environ.get(CONFIG_ENV) or None
        return cls(path, overrides)

    def _load_config(self, file: str):
        try:
            with open(file, "r", encoding = "utf-8") as f:
                self._config = json.load(f)
        except FileNotFoundError:
            raise ConfigError(f"File not found: {file}") from None
        except json.JSONDecodeError as e:
            raise ConfigError(f"{file} is not valid JSON: {e.msg} at line {e.lineno}.") from None

    def _get_config_or_raise(self, key: str) -> Union[dict, list]:
        """Retrieve a value from the config or raise if the value is not found."""
        value = self._config.get(key)
        if value is None:
            raise ConfigError(f'Provided config is malformed. No "{key}" key provided.')
        return value

    def keys(self) -> List[str]:
        return list(self._values)

    def get(self, key: str) -> Value:
        if key not in self._values:
            raise ConfigError(f"Unknown config key: {key}")
        return self._values[key]

    def set(self, key: str, value: Any) -> None:
        """Store `value` under `key`, parsing strings the way the default's type requires."""
        default = self.get(key)
        try:
            self._values[key] = _coerce(default, value)
        except (TypeError, ValueError):
            raise ConfigError(f"Invalid value for {key}: {value!r}") from None

    def load_overrides(self, path: str) -> None:
        """Apply a flat `key = value` file; blank lines and `#` comments are ignored.

        ### Raises:
        - `ConfigError`: The file is missing, a line has no `=`, or a key is unknown.
        """
        try:
            with open(path, "r", encoding = "utf-8") as f:
                lines = f.readlines()
        except OSError:
            raise ConfigError(f"Cannot read config file: {path}") from None
        for number, line in enumerate(lines, start = 1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigError(f"{path}:{number}: expected `key = value`, got {line!r}.")
            key, _, value = line.partition("=")
            self.set(key.strip(), value.strip())
        logger.debug("Applied config overrides from %s.", path)

    def to_text(self) -> str:
        """Every key and its current value as `key = value` lines, readable by `load_overrides`."""
        return "\n".join(f"{key} = {_format(value)}" for key, value in self._values.items()) + "\n"

    def graph(self) -> GraphSpec:
        try:
            return ntu_graph(self.get("data.edge_nodes"))
        except GraphError as e:
            raise ConfigError(f"Invalid value for data.edge_nodes: {e.message}") from None

    def model_config(self, num_classes: Optional[int] = None) -> ModelConfig:
        """Build the `ModelConfig`; a configured `model.num_classes` of 0 defers to `num_classes`."""
        classes = self.get("model.num_classes") or num_classes
        if not classes:
            raise ConfigError("model.num_classes is 0 and no class count could be inferred.")
        try:
            blocks = tuple(
                tuple(int(part) for part in item.split("/")) for item in str(self.get("model.blocks")).split(",")
            )
        except ValueError:
            raise ConfigError(f"Invalid value for model.blocks: {self.get('model.blocks')!r}") from None
        if any(len(block) != 2 for block in blocks):
            raise ConfigError("model.blocks must list `width/stride` pairs.")
        return ModelConfig(
            in_channels = self.get("model.in_channels"),
            init_channels = self.get("model.init_channels"),
            blocks = blocks,
            temporal_kernel = self.get("model.temporal_kernel"),
            dropout = self.get("model.dropout"),
            num_classes = classes,
            structural = self.get("model.structural"),
            max_hop = self.get("model.max_hop"),
            alpha = self.get("model.alpha"),
            bn_momentum = self.get("model.bn_momentum"),
            bn_eps = self.get("model.bn_eps"),
        )

    def train_config(self, progress: bool = False) -> TrainConfig:
        branches = tuple(_enum(Branch, name, "train.branches") for name in self.get("train.branches"))
        weights = tuple(self.get("train.fusion_weights"))
        # Uniform weights follow the branch count.
        if len(weights) != len(branches) and len(set(weights)) == 1:
            weights = weights[:1] * len(branches)
        if len(weights) != len(branches):
            raise ConfigError(f"train.fusion_weights has {len(weights)} values for {len(branches)} branches.")
        epochs, total_epochs = self.get("train.epochs"), self.get("train.total_epochs")
        if total_epochs < 1:
            raise ConfigError(f"train.total_epochs must be positive, got {total_epochs}.")
        if epochs > total_epochs:
            logger.warning("train.epochs (%d) runs past train.total_epochs (%d); the rate stays at 0.", epochs, total_epochs)
        return TrainConfig(
            epochs = epochs,
            batch_size = self.get("train.batch_size"),
            schedule = Schedule(self.get("train.base_lr"), self.get("train.warm_epochs"), total_epochs),
            momentum = self.get("train.momentum"),
            weight_decay = self.get("train.weight_decay"),
            nesterov = self.get("train.nesterov"),
            branches = branches,
            fusion_weights = weights,
            progress = progress,
        )

    def dtw_config(self) -> DtwConfig:
        return DtwConfig(
            radius = self.get("dtw.radius"),
            normalize = self.get("dtw.normalize"),
            epsilon = self.get("dtw.epsilon"),
            measure = _enum(DistanceMeasure, self.get("dtw.measure"), "dtw.measure"),
            sign = _enum(AdjacencySign, self.get("dtw.sign"), "dtw.sign"),
            per_branch = self.get("dtw.per_branch"),
        )

    def synthetic_spec(self, evaluation: bool = False) -> SyntheticSpec:
        count = self.get("synthetic.eval_samples_per_class" if evaluation else "synthetic.samples_per_class")
        return SyntheticSpec(
            classes = tuple(self.get("synthetic.classes")),
            samples_per_class = count,
            frames = self.get("synthetic.frames"),
            noise = self.get("synthetic.noise"),
            amplitude = self.get("synthetic.amplitude"),
        )

    def __str__(self):
        return f"<{self.__class__.__name__}>"

    def __repr__(self):
        return f'Config("{self._json_location}", path={self.path!r})'


def _enum(kind, value: str, key: str):
    try:
        return kind(value)
    except ValueError:
        choices = ", ".join(member.value for member in kind)
        raise ConfigError(f"Invalid value for {key}: {value!r}; choose from {choices}.") from None


def _split(value: Any) -> Iterable:
    if isinstance(value, str):
        return [item.strip() for item in value.split(",") if item.strip()]
    return list(value)


def _coerce(default: Value, value: Any) -> Value:
    if isinstance(default, bool):
        return parse_bool(value) if isinstance(value, str) else bool(value)
    if isinstance(default, int):
        if isinstance(value, float) and not value.is_integer():
            raise ValueError(value)
        return int(value)
    if isinstance(default, float):
        return float(value)
    if isinstance(default, list):
        element = default[0] if default else ""
        return [_coerce(element, item) for item in _split(value)]
    return str(value)


def _format(value: Value) -> str:
    if isinstance(value, bool):
        return str(value).lower()
    if isinstance(value, list):
        return ",".join(_format(item) for item in value)
    return str(value)
