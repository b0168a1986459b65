"""Synthetic views, cohorts and registry events with planted structure.

Used by the doctests and by ``healthfusion generate-synthetic`` to create a
complete input bundle that runs end to end.
"""
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Sequence
import numpy as np
import pandas as pd
import yaml
from scipy import linalg
from scipy.special import expit

from healthfusion.errors import ConfigError
from healthfusion.tabular import ModalityDataset

logger = logging.getLogger(__name__)

DAYS_PER_YEAR = 365.25
BASELINE_START = pd.Timestamp("2014-01-01")
END_STUDY = pd.Timestamp("2022-12-31")


@dataclass(frozen=True)
class PlantedViews:
    """Views generated from known scores.

    Args:
        datasets (tuple[ModalityDataset]): the generated views.
        joint_scores (np.ndarray): N x r scores shared by every view.
        individual_scores (tuple[np.ndarray]): N x r_i scores per view.
    """

    datasets: tuple
    joint_scores: np.ndarray
    individual_scores: tuple

    @property
    def risk(self) -> np.ndarray:
        """Sum of the first joint and first individual scores."""
        total = np.zeros(self.datasets[0].n_samples)
        if self.joint_scores.shape[1]:
            total += self.joint_scores[:, 0]
        for scores in self.individual_scores:
            if scores.shape[1]:
                total += scores[:, 0]
        return total


def sample_ids(n_samples: int) -> list[str]:
    """Zero-padded synthetic subject ids.

    Examples:
        >>> sample_ids(3)
        ['S0000', 'S0001', 'S0002']
    """
    return [f"S{index:04d}" for index in range(n_samples)]


def planted_views(
    n_samples: int,
    view_dims: Sequence[int],
    joint_rank: int = 1,
    individual_rank: int = 1,
    noise: float = 0.01,
    seed: int = 0,
    view_names: Optional[Sequence[str]] = None,
) -> PlantedViews:
    """Views Y_i = J Aᵀ_i + I_i Bᵀ_i + noise with orthogonal planted scores.

    All planted score columns are centered, mutually orthogonal and have
    unit population variance. Loadings and noise are standard normal, the
    noise scaled by ``noise``.

    Args:
        n_samples (int): N.
        view_dims (Sequence[int]): feature count of each view.
        joint_rank (int): columns of the joint scores.
        individual_rank (int): columns of each view's individual scores.
        noise (float): noise standard deviation.
        seed (int): generator seed.
        view_names (Sequence[str]): defaults to view1, view2, ...

    Returns:
        PlantedViews: datasets and the planted scores.

    Examples:
        >>> planted = planted_views(100, [4, 3], seed=1)
        >>> [view.values.shape for view in planted.datasets]
        [(100, 4), (100, 3)]
        >>> scores = np.hstack([planted.joint_scores, *planted.individual_scores])
        >>> bool(np.allclose(scores.T @ scores / 100, np.eye(3)))
        True
        >>> planted.datasets[1].feature_names
        ('view2_f00', 'view2_f01', 'view2_f02')
    """
    n_views = len(view_dims)
    view_names = list(view_names or [f"view{index + 1}" for index in range(n_views)])
    if len(view_names) != n_views:
        raise ConfigError(f"{len(view_names)} names given for {n_views} views")
    n_scores = joint_rank + n_views * individual_rank
    if n_scores >= n_samples:
        raise ConfigError(f"{n_scores} planted scores need more than {n_samples} samples")
    rng = np.random.default_rng(seed)
    raw = rng.standard_normal((n_samples, n_scores))
    raw -= raw.mean(axis=0)
    basis, _ = linalg.qr(raw, mode="economic")
    scores = basis * np.sqrt(n_samples)
    joint = scores[:, :joint_rank]
    ids = sample_ids(n_samples)
    datasets = []
    individual = []
    for position, (name, n_features) in enumerate(zip(view_names, view_dims)):
        start = joint_rank + position * individual_rank
        own = scores[:, start:start + individual_rank]
        joint_loadings = rng.standard_normal((n_features, joint_rank))
        own_loadings = rng.standard_normal((n_features, individual_rank))
        values = joint @ joint_loadings.T + own @ own_loadings.T
        values = values + noise * rng.standard_normal((n_samples, n_features))
        features = [f"{name}_f{column:02d}" for column in range(n_features)]
        datasets.append(ModalityDataset(name, ids, features, values))
        individual.append(own)
    return PlantedViews(tuple(datasets), joint, tuple(individual))


def binary_outcome(risk: np.ndarray, seed: int = 0, intercept: float = 0.0) -> np.ndarray:
    """Labels drawn with probability expit(intercept + risk).

    Examples:
        >>> labels = binary_outcome(np.array([-50.0, 50.0]), seed=0)
        >>> labels.tolist()
        [0, 1]
    """
    rng = np.random.default_rng(seed)
    return (rng.random(len(risk)) < expit(intercept + risk)).astype(int)


def _date(values) -> list[str]:
    return [value.strftime("%Y-%m-%d") for value in values]


def synthetic_registry(
    risk: np.ndarray,
    ids: Sequence[str],
    seed: int = 0,
    base_rate: float = 0.02,
    effect: float = 0.8,
) -> tuple[pd.DataFrame, pd.DataFrame]:
    """Cohort table and hospital events whose endpoint hazard grows with risk.

    Endpoint times are exponential with rate ``base_rate * exp(effect * risk)``
    per year. About 3% of subjects have the endpoint (I48) before baseline,
    2% an exclusion code (I47) before baseline and 10% are lost to follow-up.
    Unrelated I21 events add noise.

    Returns:
        pd.DataFrame: cohort with eid, baseline_date, censor_date, age, sex.
        pd.DataFrame: events with eid, code_system, code, date.

    Examples:
        >>> cohort, events = synthetic_registry(np.zeros(50), sample_ids(50), seed=0)
        >>> list(cohort.columns), list(events.columns)
        (['eid', 'baseline_date', 'censor_date', 'age', 'sex'], ['eid', 'code_system', 'code', 'date'])
        >>> bool((pd.to_datetime(events.date) <= END_STUDY).all())
        True
    """
    rng = np.random.default_rng(seed)
    n_subjects = len(ids)
    span = (END_STUDY - BASELINE_START).days
    baseline = BASELINE_START + pd.to_timedelta(rng.integers(0, 4 * 365, n_subjects), unit="D")
    years = rng.exponential(1.0 / (base_rate * np.exp(effect * np.asarray(risk))))
    years = np.minimum(years, 100.0)
    endpoint = baseline + pd.to_timedelta(np.ceil(years * DAYS_PER_YEAR), unit="D")
    lost = rng.random(n_subjects) < 0.10
    remaining = (END_STUDY - baseline).days.to_numpy()
    censor_offset = np.ceil(rng.random(n_subjects) * remaining)
    censor = baseline + pd.to_timedelta(censor_offset, unit="D")
    prevalent = rng.random(n_subjects) < 0.03
    excluded = rng.random(n_subjects) < 0.02
    before = pd.to_timedelta(rng.integers(30, 3 * 365, n_subjects), unit="D")
    noise_days = pd.to_timedelta(rng.integers(0, span, n_subjects), unit="D")
    noisy = rng.random(n_subjects) < 0.2
    cohort = pd.DataFrame(
        {
            "eid": list(ids),
            "baseline_date": _date(baseline),
            "censor_date": [value if flag else "" for value, flag in zip(_date(censor), lost)],
            "age": np.round(rng.normal(60.0, 7.0, n_subjects), 1),
            "sex": rng.integers(0, 2, n_subjects),
        }
    )
    rows = []
    for index, eid in enumerate(ids):
        if endpoint[index] <= END_STUDY:
            rows.append((eid, "icd10", "I48.0", endpoint[index]))
        if prevalent[index]:
            rows.append((eid, "icd10", "I48", baseline[index] - before[index]))
        if excluded[index]:
            rows.append((eid, "icd10", "I47.1", baseline[index] - before[index]))
        if noisy[index]:
            rows.append((eid, "icd10", "I21", BASELINE_START + noise_days[index]))
    events = pd.DataFrame(rows, columns=["eid", "code_system", "code", "date"])
    events["date"] = _date(events["date"])
    return cohort, events


def write_synthetic_bundle(
    out_dir: Path,
    n_samples: int = 500,
    view_dims: Sequence[int] = (20, 15, 10),
    view_names: Sequence[str] = ("cmr", "ecg", "prs"),
    missing_fraction: float = 0.0,
    noise: float = 0.5,
    seed: int = 0,
) -> Path:
    """Write views, cohort, events and both YAML configs into ``out_dir``.

    With ``missing_fraction`` above zero that share of subjects lacks the
    second view, which only group factor analysis with latent imputation
    can use.

    Returns:
        Path: the data config file.
    """
    if not 0 <= missing_fraction < 1:
        raise ConfigError(f"missing_fraction must lie in [0, 1), got {missing_fraction}")
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    planted = planted_views(n_samples, view_dims, noise=noise, seed=seed, view_names=view_names)
    rng = np.random.default_rng(seed + 1)
    missing = rng.random(n_samples) < missing_fraction
    modalities = []
    for position, dataset in enumerate(planted.datasets):
        frame = pd.DataFrame(dataset.values, columns=list(dataset.feature_names))
        frame.insert(0, "eid", list(dataset.sample_ids))
        if position == 1 and missing.any():
            frame = frame[~missing]
        path = out_dir / f"{dataset.name}.csv"
        frame.to_csv(path, index=False, float_format="%.8g")
        modalities.append({"name": dataset.name, "path": path.name, "id_column": "eid", "rank": 2})
    cohort, events = synthetic_registry(planted.risk, planted.datasets[0].sample_ids, seed=seed + 2)
    cohort.to_csv(out_dir / "cohort.csv", index=False)
    events.to_csv(out_dir / "events.csv", index=False)
    data_config = {
        "modalities": modalities,
        "cohort": {
            "path": ".",
            "file": "cohort.csv",
            "id_column": "eid",
            "baseline_column": "baseline_date",
            "censor_column": "censor_date",
            "covariates": ["age", "sex"],
        },
        "endpoint": {"name": "atrial_fibrillation", "event_codes": ["icd10:I48"], "exclusion_codes": ["icd10:I47"]},
        "events_path": "events.csv",
    }
    model_config = {
        "integration": {"gfa" if missing.any() else "ajive": {"use": True}},
        "prediction": {"logregrssm": {"use": True, "params": {"alpha": 0.01, "alpha_grid": [0.001, 0.01, 0.1]}}},
        "task": "classification",
        "years_risk_classification": 5,
        "latent_impute": bool(missing.any()),
        "test_size": 0.2,
        "n_folds": 10,
        "seed": seed,
        "end_study_date": END_STUDY.strftime("%Y-%m-%d"),
        "cohort_cov": ["age", "sex"],
        "out_path": (out_dir / "results").as_posix(),
        "compare_single_views": True,
    }
    data_path = out_dir / "data_config.yaml"
    data_path.write_text(yaml.safe_dump(data_config, sort_keys=False), encoding="utf-8")
    (out_dir / "model_config.yaml").write_text(yaml.safe_dump(model_config, sort_keys=False), encoding="utf-8")
    logger.info("wrote synthetic bundle with %d subjects to %s", n_samples, out_dir)
    return data_path
