"""Experiment configuration: one JSON document, validated into dataclasses."""

from dataclasses import asdict, dataclass, field, fields, replace

from .condense import CondenseConfig
from .fit import TrainConfig
from .graph import load_graph
from .stream import SbmConfig, generate_sbm, split_stream
from .trainer import BANK_CHOICES, MODES


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class StreamParams:
    classes_per_task: int = 2
    ratios: tuple = (0.6, 0.2, 0.2)
    unlabelled_ratio: float = 0.0
    shuffle_classes: bool = False

    def __post_init__(self):
        if self.classes_per_task < 1:
            raise ValueError("classes_per_task must be >= 1")
        if len(self.ratios) != 3 or abs(sum(self.ratios) - 1.0) > 1e-9 or min(self.ratios) < 0:
            raise ValueError("ratios must be three non-negative fractions summing to 1")
        if not 0.0 <= self.unlabelled_ratio < 1.0:
            raise ValueError("unlabelled_ratio must lie in [0, 1)")


@dataclass(frozen=True)
class ExperimentConfig:
    dataset: dict = field(default_factory=lambda: {"sbm": {}})
    stream: StreamParams = field(default_factory=StreamParams)
    banks: tuple = ("puma",)
    budget_ratio: float = 0.005
    edge_keep_ratio: float = 0.5
    condense: CondenseConfig = field(default_factory=CondenseConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    modes: tuple = ("class_il",)
    seeds: tuple = (0,)
    out: str = "runs"

    def __post_init__(self):
        src = set(self.dataset) & {"path", "sbm"}
        if len(src) != 1 or set(self.dataset) - {"path", "sbm"}:
            raise ConfigError("dataset needs exactly one of 'path' or 'sbm'")
        if not self.seeds:
            raise ConfigError("need at least one seed")
        bad = set(self.banks) - set(BANK_CHOICES)
        if bad or not self.banks:
            raise ConfigError(f"unknown bank kinds {sorted(bad)}; choose from {BANK_CHOICES}")
        bad = set(self.modes) - set(MODES)
        if bad or not self.modes:
            raise ConfigError(f"unknown modes {sorted(bad)}")
        if not 0.0 < self.budget_ratio <= 1.0:
            raise ConfigError("budget_ratio must lie in (0, 1]")
        if not 0.0 <= self.edge_keep_ratio <= 1.0:
            raise ConfigError("edge_keep_ratio must lie in [0, 1]")

    def to_dict(self) -> dict:
        return asdict(self)


def _build(cls, doc, where):
    if doc is None:
        return cls()
    if not isinstance(doc, dict):
        raise ConfigError(f"{where}: expected an object")
    known = {f.name for f in fields(cls)}
    unknown = set(doc) - known
    if unknown:
        raise ConfigError(f"{where}: unknown fields {sorted(unknown)}")
    kw = {k: tuple(v) if isinstance(v, list) else v for k, v in doc.items()}
    try:
        return cls(**kw)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{where}: {exc}") from exc


def config_from_dict(doc: dict) -> ExperimentConfig:
    if not isinstance(doc, dict):
        raise ConfigError("config must be a JSON object")
    doc = dict(doc)
    nested = {
        "stream": _build(StreamParams, doc.pop("stream", None), "stream"),
        "condense": _build(CondenseConfig, doc.pop("condense", None), "condense"),
        "train": _build(TrainConfig, doc.pop("train", None), "train"),
    }
    if "dataset" in doc and "sbm" in doc["dataset"]:
        _build(SbmConfig, doc["dataset"]["sbm"], "dataset.sbm")
    cfg = _build(ExperimentConfig, doc, "config")
    return replace(cfg, **nested)


def load_dataset(cfg: ExperimentConfig, seed):
    """The source graph for one seed: a file, or an SBM drawn with that seed."""
    if "path" in cfg.dataset:
        return load_graph(cfg.dataset["path"])
    sbm = dict(cfg.dataset["sbm"])
    sbm.setdefault("seed", seed)
    return generate_sbm(SbmConfig(**sbm))


def build_stream(cfg: ExperimentConfig, seed):
    p = cfg.stream
    return split_stream(load_dataset(cfg, seed), p.classes_per_task, p.ratios, seed,
                        p.unlabelled_ratio, p.shuffle_classes)


def seeded(cfg: ExperimentConfig, seed) -> tuple:
    """Train and condense configs with the run seed substituted."""
    return replace(cfg.train, seed=seed), replace(cfg.condense, seed=seed)
