import textwrap
import typing as t
from pathlib import Path

from pydantic import BaseModel, ValidationError
from traitlets import Integer, TraitError, TraitType, Unicode
from traitlets.config import Config, Enum, SingletonConfigurable

from bgdepth.exceptions import ConfigError
from bgdepth.pipeline.config import TrainConfig

LOG_LEVELS = ["DEBUG", "INFO", "WARNING", "ERROR"]
TRAIN_PREFIX = "train."


class PydanticModelTrait(TraitType):
    """A trait holding a validated Pydantic model, also accepting a plain dict."""

    def __init__(self, model_class: t.Type[BaseModel], *args, **kwargs):
        super().__init__(*args, **kwargs)
        self.model_class = model_class
        self.info_text = f"an instance of {model_class.__name__}"

    def validate(self, obj: t.Any, value: t.Any) -> BaseModel:
        if self.allow_none and value is None:
            return None
        if isinstance(value, self.model_class):
            return value
        if isinstance(value, dict):
            try:
                return self.model_class(**value)
            except ValidationError as e:
                raise TraitError(
                    f'Could not parse input as a valid {self.model_class.__name__} Pydantic model:\n'
                    f'{textwrap.indent(str(e), prefix="  ")}'
                )
        raise TraitError(f"Input must be a valid {self.model_class.__name__} Pydantic model or dict object, but got {value}.")


class BGDepthConfig(SingletonConfigurable):
    log_level = Enum(
        values=LOG_LEVELS,
        default_value="INFO",
        help="Logging level of the command-line tool",
    ).tag(config=True)

    workers = Integer(
        1,
        help="Number of threads used to load datasets and score predictions",
    ).tag(config=True)

    output_dir = Unicode(
        "bgdepth-out",
        help="Directory receiving checkpoints, reports and written images",
    ).tag(config=True)

    seed = Integer(
        None,
        allow_none=True,
        help="Seed applied to training, model initialisation and scene synthesis; unset keeps the train.* seeds",
    ).tag(config=True)

    train = PydanticModelTrait(
        TrainConfig,
        default_value=TrainConfig(),
        help="""
        Training configuration. In a config file the fields are set with dotted keys:

            train.epochs=20
            train.model.kind=fusion
            train.model.mode=rgb_seg
            train.optimizer.lr=1e-3
        """,
    ).tag(config=True)

    def train_config(self) -> TrainConfig:
        """``train`` with the application-level seed applied, if one is set."""
        cfg = self.train
        if self.seed is None:
            return cfg
        model = cfg.model.model_copy(update={"seed": self.seed})
        synth = cfg.synth.model_copy(update={"seed": self.seed})
        return cfg.model_copy(update={"seed": self.seed, "model": model, "synth": synth})


def coerce_value(raw: str):
    value = raw.strip()
    lowered = value.lower()
    if lowered in ("true", "false"):
        return lowered == "true"
    if lowered in ("none", "null"):
        return None
    for cast in (int, float):
        try:
            return cast(value)
        except ValueError:
            pass
    if "," in value:
        return [coerce_value(item) for item in value.split(",") if item.strip()]
    return value


def _set_dotted(target: dict, dotted: str, value):
    *parents, leaf = dotted.split(".")
    for part in parents:
        node = target.setdefault(part, {})
        if not isinstance(node, dict):
            raise ConfigError(f"Key {dotted!r} conflicts with a scalar value at {part!r}")
        target = node
    target[leaf] = value


def parse_config_text(text: str, source="<config>") -> Config:
    """``key=value`` lines; ``train.``-prefixed keys build the nested training config."""
    app_values = {}
    train_values = {}
    for number, line in enumerate(text.splitlines(), start=1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{number}: expected key=value, got {line!r}")
        key, raw = (part.strip() for part in line.split("=", 1))
        if not key:
            raise ConfigError(f"{source}:{number}: empty key")
        if key.startswith(TRAIN_PREFIX):
            _set_dotted(train_values, key[len(TRAIN_PREFIX):], coerce_value(raw))
        elif "." in key:
            raise ConfigError(f"{source}:{number}: unknown section in {key!r}")
        else:
            app_values[key] = coerce_value(raw)
    if train_values:
        app_values["train"] = train_values
    return Config({"BGDepthConfig": app_values})


def load_config_file(path) -> Config:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as e:
        raise ConfigError(f"Cannot read config file {path}: {e}") from e
    return parse_config_text(text, source=path)


def get_config(path=None, overrides: t.Optional[dict] = None) -> BGDepthConfig:
    """A validated configuration from an optional file, then ``overrides`` on top."""
    config = load_config_file(path) if path else Config()
    for key, value in (overrides or {}).items():
        if value is not None:
            config.BGDepthConfig[key] = value
    known = set(BGDepthConfig.class_trait_names(config=True))
    unknown = sorted(set(config.BGDepthConfig) - known)
    if unknown:
        raise ConfigError(f"Unknown configuration keys: {', '.join(unknown)}")
    try:
        return BGDepthConfig(config=config)
    except TraitError as e:
        raise ConfigError(str(e)) from e
