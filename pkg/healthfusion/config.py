"""Data and model configuration files.

Both configurations are YAML mappings. The data configuration names the
modality CSVs, the cohort table, the endpoint codes and the events file;
relative paths resolve against the directory of the YAML file. The model
configuration selects one integration method and one prediction algorithm
with ``use: true`` and carries the run settings.
"""
import dataclasses
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional
import yaml

from healthfusion.cohort import EndpointDefinition
from healthfusion.downstream import PenaltyConfig
from healthfusion.errors import ConfigError
from healthfusion.evaluation import EvaluationConfig
from healthfusion.integration import METHODS, IntegrationConfig

logger = logging.getLogger(__name__)

TASKS = ("classification", "survival", "clustering")
ALGORITHM_TASKS = {
    "logregrssm": "classification",
    "gaussian_nb": "classification",
    "coxph": "survival",
    "kmeans": "clustering",
    "dbscan": "clustering",
}
ALIASES = {"mofa": "gfa", "logistic_l1": "logregrssm"}
DEFAULT_L1_RATIO = {"logregrssm": 1.0, "coxph": 0.5}
INTEGRATION_PARAMS = {
    "per_view_ranks",
    "variance_fraction",
    "max_factors",
    "prune_fraction",
    "gfa_tolerance",
    "gfa_max_iter",
    "ajive_resamples",
    "ajive_percentile",
}


def _require(mapping: dict, key: str, where: str):
    if not isinstance(mapping, dict):
        raise ConfigError(f"{where or 'config'} must be a mapping")
    if key not in mapping or mapping[key] is None:
        raise ConfigError(f"missing required key {'.'.join(filter(None, [where, key]))!r}")
    return mapping[key]


def _resolve(base: Path, value) -> Path:
    path = Path(value)
    return path if path.is_absolute() else (base / path)


@dataclass(frozen=True)
class ModalitySpec:
    """One modality CSV.

    Args:
        name (str): view name.
        path (Path): CSV file.
        id_column (str): subject id column.
        features (tuple): columns to keep, all when None.
        rank (int): m_i, the view's reduction rank.
        variance_fraction (float): P, alternative to ``rank``.
        vif_threshold (float): drop collinear features above this VIF
            after loading, no filtering when None.
    """

    name: str
    path: Path
    id_column: str = "subject_id"
    features: Optional[tuple] = None
    rank: Optional[int] = None
    variance_fraction: Optional[float] = None
    vif_threshold: Optional[float] = None

    def to_dict(self) -> dict:
        result = {"name": self.name, "path": str(self.path), "id_column": self.id_column}
        for key in ("features", "rank", "variance_fraction", "vif_threshold"):
            value = getattr(self, key)
            if value is not None:
                result[key] = list(value) if key == "features" else value
        return result


@dataclass(frozen=True)
class CohortSpec:
    """Location and columns of the cohort table.

    ``path`` is a directory and ``file`` the table inside it.
    """

    path: Path
    file: str
    id_column: str = "subject_id"
    baseline_column: str = "baseline_date"
    censor_column: Optional[str] = None
    covariates: tuple = ()

    @property
    def location(self) -> Path:
        return Path(self.path) / self.file

    def to_dict(self) -> dict:
        result = dataclasses.asdict(self)
        result["path"] = str(self.path)
        result["covariates"] = list(self.covariates)
        return result


@dataclass(frozen=True)
class DataConfig:
    """Inputs of a run."""

    modalities: tuple
    cohort: Optional[CohortSpec] = None
    endpoint: Optional[EndpointDefinition] = None
    events_path: Optional[Path] = None

    def __post_init__(self):
        if not self.modalities:
            raise ConfigError("data config needs at least one modality")
        names = [modality.name for modality in self.modalities]
        if len(set(names)) != len(names):
            raise ConfigError(f"modality names must be unique, got {names}")

    def to_dict(self) -> dict:
        return {
            "modalities": [modality.to_dict() for modality in self.modalities],
            "cohort": None if self.cohort is None else self.cohort.to_dict(),
            "endpoint": None if self.endpoint is None else self.endpoint.to_dict(),
            "events_path": None if self.events_path is None else str(self.events_path),
        }


def data_config_from_dict(raw: dict, base: Path = Path(".")) -> DataConfig:
    """Build a DataConfig; relative paths resolve against ``base``.

    Examples:
        >>> config = data_config_from_dict({
        ...     "modalities": [{"name": "ecg", "path": "ecg.csv", "id_column": "eid", "rank": 2}],
        ...     "cohort": {"path": ".", "file": "cohort.csv", "id_column": "eid", "censor_column": "censor_date"},
        ...     "endpoint": {"name": "af", "event_codes": ["I48"], "exclusion_codes": ["I47"]},
        ...     "events_path": "events.csv"}, Path("test_data"))
        >>> config.modalities[0].path.as_posix(), config.cohort.location.as_posix()
        ('test_data/ecg.csv', 'test_data/cohort.csv')
        >>> data_config_from_dict(config.to_dict()) == config
        True
        >>> data_config_from_dict({"modalities": [{"name": "ecg"}]})
        Traceback (most recent call last):
        healthfusion.errors.ConfigError: missing required key 'modalities[0].path'
    """
    base = Path(base)
    modalities = []
    for position, entry in enumerate(_require(raw, "modalities", "")):
        where = f"modalities[{position}]"
        path = _resolve(base, _require(entry, "path", where))
        features = entry.get("features")
        modalities.append(
            ModalitySpec(
                name=str(entry.get("name") or path.stem),
                path=path,
                id_column=str(entry.get("id_column", "subject_id")),
                features=None if features is None else tuple(str(name) for name in features),
                rank=None if entry.get("rank") is None else int(entry["rank"]),
                variance_fraction=None if entry.get("variance_fraction") is None else float(entry["variance_fraction"]),
                vif_threshold=None if entry.get("vif_threshold") is None else float(entry["vif_threshold"]),
            )
        )
    cohort = None
    if raw.get("cohort") is not None:
        entry = raw["cohort"]
        cohort = CohortSpec(
            path=_resolve(base, entry.get("path", ".")),
            file=str(_require(entry, "file", "cohort")),
            id_column=str(entry.get("id_column", "subject_id")),
            baseline_column=str(entry.get("baseline_column", "baseline_date")),
            censor_column=entry.get("censor_column"),
            covariates=tuple(entry.get("covariates") or ()),
        )
    endpoint = None
    if raw.get("endpoint") is not None:
        entry = raw["endpoint"]
        endpoint = EndpointDefinition(
            name=str(_require(entry, "name", "endpoint")),
            event_codes=tuple(_require(entry, "event_codes", "endpoint")),
            exclusion_codes=tuple(entry.get("exclusion_codes") or ()),
        )
    events_path = None if raw.get("events_path") is None else _resolve(base, raw["events_path"])
    return DataConfig(tuple(modalities), cohort, endpoint, events_path)


def _selected(section: dict, where: str, valid: tuple) -> tuple[str, dict]:
    """The single entry of ``section`` with ``use: true`` and its params."""
    if not isinstance(section, dict) or not section:
        raise ConfigError(f"{where} must map algorithm keys to settings")
    chosen = []
    for key, entry in section.items():
        canonical = ALIASES.get(key, key)
        if canonical not in valid:
            raise ConfigError(f"unknown {where} key {key!r}; valid keys: {sorted(valid)}")
        entry = entry or {}
        if bool(entry.get("use", False)):
            chosen.append((canonical, dict(entry.get("params") or {})))
    if len(chosen) != 1:
        raise ConfigError(
            f"{where}: exactly one key must have use: true, got {[key for key, _ in chosen]}"
        )
    return chosen[0]


@dataclass(frozen=True)
class ModelConfig:
    """Integration, prediction and run settings.

    Args:
        integration_method (str): early, early_pca, ajive or gfa.
        algorithm (str): logregrssm, gaussian_nb, coxph, kmeans or dbscan.
        out_path (Path): results directory.
        task (str): classification, survival or clustering; inferred from
            the algorithm when None.
        integration_params (dict): IntegrationConfig fields.
        prediction_params (dict): alpha, l1_ratio, alpha_grid, k, eps,
            min_pts.
        years_risk_classification (float): classification horizon.
        latent_impute (bool): keep subjects with missing views (gfa only).
        test_size (float): held-out share.
        n_folds (int): cross-validation folds.
        seed (int): seed of every random draw.
        end_study_date (str): last observation date.
        cohort_cov (tuple): cohort columns appended to the merged scores.
        compare_single_views (bool): also model each view on its own.
        compare_view_subsets (bool): also integrate and model every proper
            subset of at least two views with the same method.
        force (bool): allow writing into a non-empty out_path.
    """

    integration_method: str
    algorithm: str
    out_path: Path
    task: Optional[str] = None
    integration_params: dict = field(default_factory=dict)
    prediction_params: dict = field(default_factory=dict)
    years_risk_classification: float = 5.0
    latent_impute: bool = False
    test_size: float = 0.2
    n_folds: int = 10
    seed: int = 0
    end_study_date: Optional[str] = None
    cohort_cov: tuple = ()
    compare_single_views: bool = False
    compare_view_subsets: bool = False
    force: bool = False

    def __post_init__(self):
        if self.integration_method not in METHODS:
            raise ConfigError(f"unknown integration method {self.integration_method!r}; valid keys: {list(METHODS)}")
        if self.algorithm not in ALGORITHM_TASKS:
            raise ConfigError(f"unknown prediction algorithm {self.algorithm!r}; valid keys: {sorted(ALGORITHM_TASKS)}")
        task = self.task or ALGORITHM_TASKS[self.algorithm]
        if task not in TASKS:
            raise ConfigError(f"unknown task {task!r}; valid: {list(TASKS)}")
        if task != ALGORITHM_TASKS[self.algorithm]:
            raise ConfigError(f"algorithm {self.algorithm!r} cannot run task {task!r}")
        object.__setattr__(self, "task", task)
        unknown = set(self.integration_params) - INTEGRATION_PARAMS
        if unknown:
            raise ConfigError(f"unknown integration params {sorted(unknown)}")
        if self.latent_impute and self.integration_method != "gfa":
            raise ConfigError(
                f"latent_impute needs integration method gfa, got {self.integration_method!r}"
            )
        if self.years_risk_classification <= 0:
            raise ConfigError(f"years_risk_classification must be positive, got {self.years_risk_classification}")
        object.__setattr__(self, "out_path", Path(self.out_path))
        object.__setattr__(self, "cohort_cov", tuple(self.cohort_cov))
        if self.integration_method not in ("ajive", "early_pca") or self._has_selector():
            self.integration_config()
        self.evaluation_config()
        if self.algorithm in DEFAULT_L1_RATIO:
            self.penalty_config()

    def _has_selector(self) -> bool:
        return any(self.integration_params.get(key) is not None for key in ("per_view_ranks", "variance_fraction"))

    def integration_config(self, modalities: tuple = ()) -> IntegrationConfig:
        """Integration settings; modality ranks fill in a missing rank selector."""
        params = dict(self.integration_params)
        if params.get("per_view_ranks") is not None:
            params["per_view_ranks"] = tuple(params["per_view_ranks"])
        elif not self._has_selector() and modalities:
            ranks = [modality.rank for modality in modalities]
            fractions = {modality.variance_fraction for modality in modalities}
            if all(rank is not None for rank in ranks):
                params["per_view_ranks"] = tuple(ranks)
            elif len(fractions) == 1 and None not in fractions:
                params["variance_fraction"] = fractions.pop()
            elif any(rank is not None for rank in ranks) or fractions != {None}:
                raise ConfigError("modalities must all give a rank or all share one variance_fraction")
        return IntegrationConfig(method=self.integration_method, seed=self.seed, **params)

    def penalty_config(self, alpha: Optional[float] = None) -> PenaltyConfig:
        params = self.prediction_params
        return PenaltyConfig(
            alpha=float(params.get("alpha", 0.0) if alpha is None else alpha),
            l1_ratio=float(params.get("l1_ratio", DEFAULT_L1_RATIO.get(self.algorithm, 1.0))),
            standardize=bool(params.get("standardize", True)),
        )

    @property
    def alpha_grid(self) -> tuple:
        return tuple(float(alpha) for alpha in self.prediction_params.get("alpha_grid") or ())

    def evaluation_config(self) -> EvaluationConfig:
        return EvaluationConfig(test_size=self.test_size, n_folds=self.n_folds, seed=self.seed)

    def to_dict(self) -> dict:
        return {
            "integration": {self.integration_method: {"use": True, "params": dict(self.integration_params)}},
            "prediction": {self.algorithm: {"use": True, "params": dict(self.prediction_params)}},
            "task": self.task,
            "years_risk_classification": self.years_risk_classification,
            "latent_impute": self.latent_impute,
            "test_size": self.test_size,
            "n_folds": self.n_folds,
            "seed": self.seed,
            "end_study_date": self.end_study_date,
            "cohort_cov": list(self.cohort_cov),
            "out_path": str(self.out_path),
            "compare_single_views": self.compare_single_views,
            "compare_view_subsets": self.compare_view_subsets,
            "force": self.force,
        }


def model_config_from_dict(raw: dict) -> ModelConfig:
    """Build a ModelConfig with defaults filled.

    Examples:
        >>> raw = {"integration": {"ajive": {"use": True, "params": {"variance_fraction": 0.8}}},
        ...        "prediction": {"logregrssm": {"use": True, "params": {"alpha": 1.0}}},
        ...        "out_path": "results"}
        >>> config = model_config_from_dict(raw)
        >>> config.task, config.penalty_config().alpha, config.n_folds, config.test_size
        ('classification', 1.0, 10, 0.2)
        >>> model_config_from_dict(config.to_dict()) == config
        True
        >>> model_config_from_dict({key: raw[key] for key in ("integration", "prediction")})
        Traceback (most recent call last):
        healthfusion.errors.ConfigError: missing required key 'out_path'
        >>> model_config_from_dict({**raw, "latent_impute": True})
        Traceback (most recent call last):
        healthfusion.errors.ConfigError: latent_impute needs integration method gfa, got 'ajive'
        >>> model_config_from_dict({**raw, "prediction": {"xgboost": {"use": True}}})
        Traceback (most recent call last):
        healthfusion.errors.ConfigError: unknown prediction key 'xgboost'; valid keys: ['coxph', 'dbscan', 'gaussian_nb', 'kmeans', 'logregrssm']
        >>> model_config_from_dict({**raw, "integration": {"ajive": {"use": True}, "mofa": {"use": True}}})
        Traceback (most recent call last):
        healthfusion.errors.ConfigError: integration: exactly one key must have use: true, got ['ajive', 'gfa']
    """
    if not isinstance(raw, dict):
        raise ConfigError("model config must be a mapping")
    method, integration_params = _selected(_require(raw, "integration", ""), "integration", METHODS)
    algorithm, prediction_params = _selected(
        _require(raw, "prediction", ""), "prediction", tuple(ALGORITHM_TASKS)
    )
    out_path = _require(raw, "out_path", "")
    end_study = raw.get("end_study_date")
    return ModelConfig(
        integration_method=method,
        algorithm=algorithm,
        out_path=Path(out_path),
        task=raw.get("task"),
        integration_params=integration_params,
        prediction_params=prediction_params,
        years_risk_classification=float(raw.get("years_risk_classification", 5.0)),
        latent_impute=bool(raw.get("latent_impute", False)),
        test_size=float(raw.get("test_size", 0.2)),
        n_folds=int(raw.get("n_folds", 10)),
        seed=int(raw.get("seed", 0)),
        end_study_date=None if end_study is None else str(end_study),
        cohort_cov=tuple(raw.get("cohort_cov") or ()),
        compare_single_views=bool(raw.get("compare_single_views", False)),
        compare_view_subsets=bool(raw.get("compare_view_subsets", False)),
        force=bool(raw.get("force", False)),
    )


def _load_yaml(path: Path) -> dict:
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"config file {path} does not exist")
    try:
        raw = yaml.safe_load(path.read_text(encoding="utf-8"))
    except yaml.YAMLError as error:
        raise ConfigError(f"{path}: invalid YAML ({error})") from error
    if not isinstance(raw, dict):
        raise ConfigError(f"{path}: expected a mapping at the top level")
    return raw


def parse_configs(data_path: Path, model_path: Path) -> tuple[DataConfig, ModelConfig]:
    """Read and validate both configuration files.

    Raises:
        ConfigError: a file is missing, invalid or inconsistent.
    """
    data_path = Path(data_path)
    data = data_config_from_dict(_load_yaml(data_path), data_path.parent)
    model = model_config_from_dict(_load_yaml(model_path))
    check_consistency(data, model)
    logger.debug("parsed %s and %s", data_path, model_path)
    return data, model


def check_consistency(data: DataConfig, model: ModelConfig) -> None:
    """Cross-file checks: supervised tasks need a cohort, endpoint and events."""
    if model.task != "clustering":
        for key, value in (("cohort", data.cohort), ("endpoint", data.endpoint), ("events_path", data.events_path)):
            if value is None:
                raise ConfigError(f"missing required key {key!r} for task {model.task}")
        if model.end_study_date is None:
            raise ConfigError(f"missing required key 'end_study_date' for task {model.task}")
        allowed = set(data.cohort.covariates)
        extra = [name for name in model.cohort_cov if allowed and name not in allowed]
        if extra:
            raise ConfigError(f"cohort_cov {extra} are not listed under cohort.covariates")
    model.integration_config(data.modalities)
