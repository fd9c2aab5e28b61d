"""
Pipeline configuration.

All parameters live in one nested, immutable ``PipelineConfig``. A JSON config
file may set any subset of keys; missing keys keep their defaults, unknown
keys are rejected. ``PipelineConfig().to_dict()`` is what ``config --dump``
prints, and loading that document reproduces the defaults.
"""
import json
import logging
from dataclasses import asdict, dataclass, field, fields, is_dataclass, replace
from typing import List, Optional

from .classify import ClassifyConfig
from .conflict import ConflictConfig
from .domain import (ClassificationTree, PathLike, UnitTemplate, default_templates, load_templates,
                     load_tree)
from .dsclust import AnnealConfig
from .errors import ConfigError

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class PipelineConfig:
    """
    Args:
        conflict: report and track conflict parameters
        anneal: mean field annealing parameters (its seed is overridden by ``seed``)
        classify: hypothesis generation and selection parameters
        k_max: largest cluster count tried when clustering reports
        cluster_threshold: accept the first K whose total weight of conflict is below this
        seed: seed of the annealing noise (and of ``simulate`` when given on the CLI)
        tree_path: classification tree JSON (None: built-in tree)
        templates_path: unit templates JSON (None: built-in templates)
    """
    conflict: ConflictConfig = field(default_factory=ConflictConfig)
    anneal: AnnealConfig = field(default_factory=AnnealConfig)
    classify: ClassifyConfig = field(default_factory=ClassifyConfig)
    k_max: int = 20
    cluster_threshold: float = 0.105
    seed: int = 0
    tree_path: Optional[str] = None
    templates_path: Optional[str] = None

    def __post_init__(self):
        if self.k_max < 1:
            raise ConfigError(f"k_max must be >= 1, got {self.k_max}")
        if self.cluster_threshold <= 0:
            raise ConfigError(f"cluster_threshold must be > 0, got {self.cluster_threshold}")
        if self.seed < 0:
            raise ConfigError(f"seed must be >= 0, got {self.seed}")

    @property
    def anneal_config(self) -> AnnealConfig:
        return replace(self.anneal, seed=self.seed)

    def tree(self) -> ClassificationTree:
        return load_tree(self.tree_path) if self.tree_path else ClassificationTree.default()

    def templates(self) -> List[UnitTemplate]:
        return load_templates(self.templates_path) if self.templates_path else default_templates()

    def with_overrides(self, seed: int = None, k_max: int = None, threshold: float = None,
                       templates_path: str = None, tree_path: str = None) -> 'PipelineConfig':
        """Apply command-line overrides; None leaves a value unchanged."""
        changes = {
            "seed": seed,
            "k_max": k_max,
            "cluster_threshold": threshold,
            "templates_path": templates_path,
            "tree_path": tree_path,
        }
        changes = {k: v for k, v in changes.items() if v is not None}
        if changes:
            logger.debug("Command-line overrides: %s", changes)
        return replace(self, **changes)

    def to_dict(self) -> dict:
        data = asdict(self)
        data["anneal"]["alpha_by_k"] = {str(k): v for k, v in sorted(self.anneal.alpha_by_k.items())}
        return data

    @classmethod
    def from_dict(cls, data: dict) -> 'PipelineConfig':
        """
        Raises:
            ConfigError: on unknown keys or invalid values
        """
        return _merge(cls(), data, "config")


def _merge(default, data, where: str):
    if not isinstance(data, dict):
        raise ConfigError(f"{where}: expected an object, got {data!r}")
    known = {f.name for f in fields(default)}
    unknown = sorted(set(data) - known)
    if unknown:
        raise ConfigError(f"{where}: unknown key(s) {', '.join(unknown)}")
    changes = {}
    for key, value in data.items():
        current = getattr(default, key)
        if is_dataclass(current):
            changes[key] = _merge(current, value, f"{where}.{key}")
        elif key == "alpha_by_k":
            if not isinstance(value, dict):
                raise ConfigError(f"{where}.{key}: expected an object mapping K to alpha")
            try:
                changes[key] = {int(k): float(v) for k, v in value.items()}
            except (TypeError, ValueError) as exc:
                raise ConfigError(f"{where}.{key}: {exc}") from None
        else:
            changes[key] = value
    try:
        return replace(default, **changes)
    except ConfigError:
        raise
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{where}: {exc}") from None


def load_config(path: PathLike = None) -> PipelineConfig:
    """
    Read a JSON config file over the defaults (None: defaults only).

    Raises:
        ConfigError: on invalid JSON, unknown keys or invalid values
    """
    if path is None:
        return PipelineConfig()
    with open(path, encoding="utf-8") as f:
        try:
            data = json.load(f)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: invalid JSON ({exc.msg}, line {exc.lineno})") from None
    config = PipelineConfig.from_dict(data)
    logger.info("Loaded config from %s", path)
    return config
