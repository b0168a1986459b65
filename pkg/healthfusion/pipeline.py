"""One run: views -> merged representation -> downstream model -> result files."""
import itertools
import json
import logging
import platform
import time
from contextlib import contextmanager
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Optional
import numpy as np
import pandas as pd
import scipy

from healthfusion import __version__
from healthfusion.ajive import ajive_fit
from healthfusion.clustering import ClusteringResult, dbscan, kmeans
from healthfusion.cohort import (
    CohortTable,
    build_cohort,
    build_survival_outcome,
    label_classification,
    load_cohort_csv,
    load_events_csv,
)
from healthfusion.config import DEFAULT_L1_RATIO, DataConfig, ModelConfig
from healthfusion.downstream import (
    FittedModel,
    coxph_elasticnet_fit,
    coxph_risk_score,
    gaussian_nb_fit,
    gaussian_nb_predict_proba,
    logistic_l1_fit,
    logistic_predict_proba,
)
from healthfusion.errors import EmptyCohortError, HealthFusionError, OutputExistsError
from healthfusion.evaluation import (
    EvaluationReport,
    ModelScores,
    auc,
    compare_models,
    concordance_index,
    cross_validate,
    kaplan_meier,
    select_alpha,
    stratified_kfold,
    stratified_split,
)
from healthfusion.gfa import gfa_fit
from healthfusion.integration import (
    IntegrationConfig,
    MergedRepresentation,
    early_fusion,
    resolve_ranks,
)
from healthfusion.tabular import (
    ModalityDataset,
    align_samples,
    load_modality_csv,
    pca,
    standardize,
    union_samples,
    vif_filter,
)

logger = logging.getLogger(__name__)

MERGED = "merged"
FLOAT_FORMAT = "%.10g"


class StageLog:
    """Per-stage logger adapters and wall times.

    Errors escaping a stage are tagged with its name.
    """

    def __init__(self):
        self.timings = {}

    @contextmanager
    def stage(self, name: str):
        """Run a block as stage ``name``.

        Examples:
            >>> stages = StageLog()
            >>> with stages.stage("load"):
            ...     raise HealthFusionError("boom")
            Traceback (most recent call last):
            healthfusion.errors.HealthFusionError: [load] boom
            >>> list(stages.timings)
            ['load']
        """
        log = logging.LoggerAdapter(logger, {"stage": name})
        start = time.perf_counter()
        try:
            yield log
        except HealthFusionError as error:
            if error.stage is None:
                error.stage = name
            raise
        finally:
            self.timings[name] = self.timings.get(name, 0.0) + time.perf_counter() - start


@dataclass
class RunArtifacts:
    """Everything a run writes."""

    data: DataConfig
    model: ModelConfig
    merged: MergedRepresentation
    integration_summary: dict
    cohort_sizes: dict = field(default_factory=dict)
    fitted: Optional[FittedModel] = None
    clustering: Optional[ClusteringResult] = None
    report: Optional[EvaluationReport] = None
    predictions: Optional[pd.DataFrame] = None
    alpha_search: Optional[pd.DataFrame] = None
    survival_curve: Optional[pd.DataFrame] = None
    timings: dict = field(default_factory=dict)


def load_views(data: DataConfig, log=logger) -> list[ModalityDataset]:
    """Read every modality CSV named in the data config, VIF-filtered on request.

    Examples:
        >>> from healthfusion.config import ModalitySpec
        >>> data = DataConfig((ModalitySpec("ecg", Path("test_data/ecg.csv"), "eid", vif_threshold=10.0),))
        >>> [view.feature_names for view in load_views(data)]
        [('a',)]
    """
    views = []
    for modality in data.modalities:
        view = load_modality_csv(modality.path, modality.id_column, modality.name, modality.features)
        if modality.vif_threshold is not None:
            view, removed = vif_filter(view, modality.vif_threshold)
            log.info("%s: %d collinear features removed %s", view.name, len(removed), removed)
        views.append(view)
    return views


def standardize_views(
    datasets: list[ModalityDataset], observed_mask: Optional[np.ndarray] = None
) -> list[ModalityDataset]:
    """Z-score every view on its own observed samples.

    Rows a view does not observe stay at zero, the training mean after
    scaling.

    Examples:
        >>> first = ModalityDataset("a", ["s1", "s2", "s3"], ["x"], [[1.0], [3.0], [0.0]])
        >>> mask = np.array([[True], [True], [False]])
        >>> standardize_views([first], mask)[0].values.ravel().tolist()
        [-1.0, 1.0, 0.0]
    """
    views = []
    for position, dataset in enumerate(datasets):
        if observed_mask is None:
            views.append(standardize(dataset, [dataset])[0][0])
            continue
        observed = observed_mask[:, position]
        train = dataset.subset([sample_id for sample_id, keep in zip(dataset.sample_ids, observed) if keep])
        scaled = standardize(train, [dataset])[0][0]
        views.append(scaled.with_values(np.where(observed[:, None], scaled.values, 0.0)))
    return views


def integrate(
    views: list[ModalityDataset], config: IntegrationConfig, observed_mask: Optional[np.ndarray] = None
) -> MergedRepresentation:
    """Fit the configured integration method."""
    if config.method in ("early", "early_pca"):
        return early_fusion(views, config)
    if config.method == "ajive":
        return ajive_fit(views, config)[1]
    return gfa_fit(views, config, observed_mask)[1]


def integration_summary(merged: MergedRepresentation, config: IntegrationConfig) -> dict:
    """Method, components and fit diagnostics for the model summary."""
    summary = {"method": config.method, "components": merged.column_names}
    fitted = merged.model
    if config.method == "ajive":
        summary["joint_rank"] = int(fitted.joint_rank)
        summary["individual_ranks"] = {name: int(rank) for name, rank in zip(fitted.view_names, fitted.individual_ranks)}
        summary["cutoff"] = float(fitted.cutoff)
    elif config.method == "gfa":
        summary["converged"] = bool(fitted.converged)
        summary["iterations"] = len(fitted.elbo_trace)
        summary["final_elbo"] = float(fitted.elbo_trace[-1])
    return summary


def single_view_design(view: ModalityDataset, position: int, config: IntegrationConfig,
                       observed: Optional[np.ndarray]) -> pd.DataFrame:
    """One view on its own, PCA-reduced when a rank selector is configured.

    The reduction is fitted on the samples observing the view.
    """
    rows = np.ones(view.n_samples, dtype=bool) if observed is None else observed
    if config.per_view_ranks is None and config.variance_fraction is None:
        return pd.DataFrame(view.values, index=list(view.sample_ids), columns=list(view.feature_names))
    train = view.subset([sample_id for sample_id, keep in zip(view.sample_ids, rows) if keep])
    rank = resolve_ranks([train], IntegrationConfig(
        "early_pca",
        per_view_ranks=None if config.per_view_ranks is None else (config.per_view_ranks[position],),
        variance_fraction=config.variance_fraction,
    ))[0]
    reduction, _ = pca(train, n_components=rank)
    columns = [f"{view.name}_PC{j + 1}" for j in range(rank)]
    return pd.DataFrame(reduction.transform(view), index=list(view.sample_ids), columns=columns)


def view_subsets(n_views: int) -> list[tuple]:
    """Positions of every proper subset of at least two views, smallest first.

    Examples:
        >>> view_subsets(3)
        [(0, 1), (0, 2), (1, 2)]
        >>> len(view_subsets(4)), view_subsets(2)
        (10, [])
    """
    return [
        positions
        for size in range(2, n_views)
        for positions in itertools.combinations(range(n_views), size)
    ]


def subset_design(views: list[ModalityDataset], positions: tuple, config: IntegrationConfig,
                  observed_mask: Optional[np.ndarray]) -> pd.DataFrame:
    """Scores of the configured integration refitted on some of the views.

    Samples observing none of the chosen views keep the prior mean, zero.
    Columns are prefixed with the joined view names.

    Examples:
        >>> from healthfusion.synthetic import planted_views
        >>> views = planted_views(60, [5, 4, 3], noise=0.5, seed=4).datasets
        >>> pair = subset_design(views, (0, 2), IntegrationConfig("early_pca", per_view_ranks=(2, 3, 1)), None)
        >>> pair.shape, list(pair.columns)[:2]
        ((60, 3), ['view1+view3_view1_Ind1', 'view1+view3_view1_Ind2'])
    """
    chosen = [views[position] for position in positions]
    if config.per_view_ranks is not None:
        config = replace(config, per_view_ranks=tuple(config.per_view_ranks[position] for position in positions))
    prefix = "+".join(view.name for view in chosen)
    ids = list(chosen[0].sample_ids)
    mask = None
    if observed_mask is not None:
        mask = observed_mask[:, list(positions)]
        keep = mask.any(axis=1)
        chosen = [view.subset([sample_id for sample_id, row in zip(ids, keep) if row]) for view in chosen]
        mask = mask[keep]
    scores = integrate(chosen, config, mask).to_frame().set_index("sample_id")
    scores = scores.reindex(ids, fill_value=0.0)
    return scores.add_prefix(f"{prefix}_")


def build_outcome(data: DataConfig, model: ModelConfig, log=logger) -> tuple[CohortTable, dict]:
    """Cohort healthy at baseline with endpoints and covariates, plus sizes."""
    source = data.cohort
    table = load_cohort_csv(
        source.location, source.id_column, source.baseline_column, model.end_study_date,
        source.censor_column, model.cohort_cov,
    )
    events = load_events_csv(data.events_path, source.id_column)
    healthy = build_cohort(table, events, data.endpoint)
    log.info("%d of %d subjects healthy at baseline", len(healthy), len(table))
    return healthy, {"registry": len(table), "healthy_at_baseline": len(healthy)}


def label_outcome(cohort: CohortTable, model: ModelConfig) -> pd.DataFrame:
    """Apply the classification horizon or derive survival times."""
    if model.task == "classification":
        return label_classification(cohort, model.years_risk_classification).frame
    return build_survival_outcome(cohort).frame


def _fit(algorithm: str, X: pd.DataFrame, outcome: pd.DataFrame, penalty) -> FittedModel:
    if algorithm == "logregrssm":
        return logistic_l1_fit(X, outcome["label"].to_numpy(), penalty)
    if algorithm == "gaussian_nb":
        return gaussian_nb_fit(X, outcome["label"].to_numpy())
    return coxph_elasticnet_fit(
        X, outcome["time_years"].to_numpy(), outcome["event_indicator"].to_numpy(), penalty
    )


def _predict(fitted: FittedModel, X: pd.DataFrame) -> np.ndarray:
    if fitted.kind == "logistic":
        return logistic_predict_proba(fitted, X)
    if fitted.kind == "gaussian_nb":
        return gaussian_nb_predict_proba(fitted, X)
    return coxph_risk_score(fitted, X)


def _metric(task: str, outcome: pd.DataFrame, scores: np.ndarray) -> float:
    if task == "classification":
        return auc(outcome["label"].to_numpy(), scores)
    return concordance_index(
        outcome["time_years"].to_numpy(), outcome["event_indicator"].to_numpy(), scores
    )


@dataclass
class Evaluation:
    """Result of :func:`evaluate_models`."""

    report: EvaluationReport
    fitted: dict
    search: Optional[pd.DataFrame]
    predictions: pd.DataFrame
    survival_curve: Optional[pd.DataFrame] = None


def evaluate_models(designs: dict, outcome: pd.DataFrame, model: ModelConfig,
                    stages: Optional[StageLog] = None) -> Evaluation:
    """Split, cross-validate, refit and test every design on the same folds.

    Args:
        designs (dict): model name -> feature DataFrame indexed like
            ``outcome``. The first entry is the reference model whose
            predictions are returned.
        outcome (pd.DataFrame): ``label`` or ``time_years`` and
            ``event_indicator`` per subject.
        model (ModelConfig): algorithm, penalty, alpha grid and split
            settings.
        stages (StageLog): receives the split, cv, fit and evaluate stages.

    Returns:
        Evaluation: report, final fits, alpha search table, predictions and,
        for survival, the Kaplan-Meier curve of the train split.

    Examples:
        Merged scores beat every single view when the outcome depends on
        all of them:

        >>> from healthfusion.synthetic import binary_outcome, planted_views
        >>> planted = planted_views(500, [20, 15, 10], noise=0.5, seed=11)
        >>> ids = list(planted.datasets[0].sample_ids)
        >>> outcome = pd.DataFrame({"label": binary_outcome(2 * planted.risk, seed=11)}, index=ids)
        >>> config = IntegrationConfig("ajive", per_view_ranks=(2, 2, 2))
        >>> views = standardize_views(align_samples(planted.datasets))
        >>> merged = integrate(views, config)
        >>> designs = {MERGED: merged.to_frame().set_index("sample_id")}
        >>> for position, view in enumerate(views):
        ...     designs[view.name] = single_view_design(view, position, config, None)
        >>> settings = ModelConfig("ajive", "logregrssm", Path("unused"),
        ...                        integration_params={"per_view_ranks": [2, 2, 2]})
        >>> result = evaluate_models(designs, outcome, settings)
        >>> means = {scores.name: scores.fold_mean for scores in result.report.models}
        >>> all(means[MERGED] >= means[name] for name in ("view1", "view2", "view3"))
        True
        >>> weakest = min(("view1", "view2", "view3"), key=means.get)
        >>> table = result.report.comparisons
        >>> bool(table[(table.model_a == MERGED) & (table.model_b == weakest)].significant.iloc[0])
        True
        >>> result.predictions.split.value_counts().to_dict()
        {'train': 400, 'test': 100}
    """
    stages = stages or StageLog()
    config = model.evaluation_config()
    task = model.task
    ids = list(outcome.index)
    strata = outcome["label" if task == "classification" else "event_indicator"].to_numpy()
    with stages.stage("split") as log:
        train_ids, test_ids = stratified_split(ids, strata, config.test_size, config.seed)
        train_rows = outcome.index.get_indexer(train_ids)
        test_rows = outcome.index.get_indexer(test_ids)
        folds = stratified_kfold(train_ids, strata[train_rows], config.n_folds, config.seed)
        log.info("train %d, test %d, %d folds", len(train_ids), len(test_ids), config.n_folds)
    penalized = model.algorithm in DEFAULT_L1_RATIO
    grid = model.alpha_grid if penalized else ()
    metric_name = "auc" if task == "classification" else "c_index"
    y_train, y_test = outcome.iloc[train_rows], outcome.iloc[test_rows]
    designs = {name: design.loc[ids] for name, design in designs.items()}

    def penalty(alpha):
        return model.penalty_config(alpha) if penalized else None

    fold_metrics, chosen, searches = {}, {}, []
    with stages.stage("cv") as log:
        for name, design in designs.items():
            X_train = design.iloc[train_rows]
            by_alpha = {}
            for alpha in grid or (None,):

                def fit_score(train, held_out, alpha=alpha):
                    fit = _fit(model.algorithm, X_train.iloc[train], y_train.iloc[train], penalty(alpha))
                    return _metric(task, y_train.iloc[held_out], _predict(fit, X_train.iloc[held_out]))

                by_alpha[alpha] = cross_validate(folds, fit_score)
            chosen[name] = None
            if grid:
                rows = []
                for alpha in grid:
                    metrics = by_alpha[alpha]
                    selected = _fit(model.algorithm, X_train, y_train, penalty(alpha)).selected
                    rows.append((name, alpha, float(np.mean(metrics)), float(np.std(metrics, ddof=1)), len(selected)))
                search = pd.DataFrame(rows, columns=["model", "alpha", "mean", "std", "n_selected"])
                chosen[name] = select_alpha(search)
                search["chosen"] = search["alpha"] == chosen[name]
                searches.append(search)
                log.info("%s: alpha %g chosen from %d candidates", name, chosen[name], len(grid))
            fold_metrics[name] = by_alpha[chosen[name]]
    with stages.stage("fit"):
        fitted = {
            name: _fit(model.algorithm, design.iloc[train_rows], y_train, penalty(chosen[name]))
            for name, design in designs.items()
        }
    with stages.stage("evaluate") as log:
        models = []
        for name, design in designs.items():
            test_metric = _metric(task, y_test, _predict(fitted[name], design.iloc[test_rows]))
            models.append(ModelScores(name, metric_name, fold_metrics[name], test_metric))
            log.info("%s: cv %s %.4f, test %.4f", name, metric_name, models[-1].fold_mean, test_metric)
        comparisons = compare_models(fold_metrics, config.comparison_sided, config.comparison_level)
        reference = next(iter(designs))
        predictions = pd.DataFrame({"sample_id": ids, "split": "train"})
        predictions.loc[test_rows, "split"] = "test"
        predictions["score"] = _predict(fitted[reference], designs[reference])
        for column in ("label", "time_years", "event_indicator"):
            if column in outcome.columns:
                predictions[column] = outcome[column].to_numpy()
    sizes = {"train": len(train_ids), "test": len(test_ids), "cases": int(strata.sum())}
    return Evaluation(
        report=EvaluationReport(tuple(models), comparisons, sizes),
        fitted=fitted,
        search=pd.concat(searches, ignore_index=True) if searches else None,
        predictions=predictions,
        survival_curve=None if task != "survival" else kaplan_meier(
            y_train["time_years"].to_numpy(), y_train["event_indicator"].to_numpy()
        ),
    )


def cluster(merged: MergedRepresentation, model: ModelConfig) -> ClusteringResult:
    """k-means or DBSCAN on the merged scores."""
    params = model.prediction_params
    if model.algorithm == "kmeans":
        return kmeans(merged.scores, int(params.get("k", 2)), seed=model.seed)
    return dbscan(merged.scores, float(params.get("eps", 0.5)), int(params.get("min_pts", 5)))


def run_pipeline(data: DataConfig, model: ModelConfig) -> dict:
    """Run integration and the downstream analysis, then write every output.

    Args:
        data (DataConfig): inputs.
        model (ModelConfig): settings; ``model.out_path`` receives the files.

    Returns:
        dict: the run manifest.

    Raises:
        HealthFusionError: from any stage, tagged with the stage name.

    Examples:
        >>> import tempfile
        >>> from dataclasses import replace
        >>> from healthfusion.config import parse_configs
        >>> from healthfusion.synthetic import write_synthetic_bundle
        >>> folder = Path(tempfile.mkdtemp())
        >>> data, settings = parse_configs(write_synthetic_bundle(folder / "in", n_samples=300, seed=1),
        ...                                folder / "in" / "model_config.yaml")
        >>> first = run_pipeline(data, replace(settings, out_path=folder / "a"))
        >>> sorted(path.name for path in (folder / "a").iterdir())  # doctest: +NORMALIZE_WHITESPACE
        ['alpha_search.csv', 'comparisons.csv', 'cv_metrics.csv', 'merged_scores.csv', 'model_summary.json',
         'predictions.csv', 'run_manifest.json', 'variance_explained.csv', 'weights_cmr.csv', 'weights_ecg.csv',
         'weights_prs.csv']
        >>> second = run_pipeline(data, replace(settings, out_path=folder / "b"))
        >>> all((folder / "a" / name).read_bytes() == (folder / "b" / name).read_bytes()
        ...     for name in first["files"] if name.endswith(".csv"))
        True
        >>> first["cohort_sizes"]["modelled"] == len(pd.read_csv(folder / "a" / "predictions.csv"))
        True
        >>> from healthfusion.config import data_config_from_dict, model_config_from_dict
        >>> echo = json.loads((folder / "a" / "run_manifest.json").read_text())["config"]
        >>> data_config_from_dict(echo["data"]) == data, model_config_from_dict(echo["model"]).out_path == folder / "a"
        (True, True)
        >>> run_pipeline(data, replace(settings, out_path=folder / "a"))
        Traceback (most recent call last):
        healthfusion.errors.OutputExistsError: [write] ... is not empty; pass force to overwrite

        Latent imputation keeps subjects that lack a view. Every pair of views
        is integrated and compared with the full fusion on the same folds,
        and the train split gets its Kaplan-Meier curve:

        >>> bundle = write_synthetic_bundle(folder / "gaps", n_samples=300, missing_fraction=0.3, seed=2)
        >>> data, imputing = parse_configs(bundle, folder / "gaps" / "model_config.yaml")
        >>> survival = replace(imputing, algorithm="coxph", task="survival", prediction_params={},
        ...                    compare_single_views=False)
        >>> grown = run_pipeline(data, replace(survival, compare_view_subsets=True, out_path=folder / "imputed"))
        >>> cut = run_pipeline(data, replace(survival, latent_impute=False, out_path=folder / "cut"))
        >>> grown["cohort_sizes"]["modelled"] > cut["cohort_sizes"]["modelled"]
        True
        >>> table = pd.read_csv(folder / "imputed" / "comparisons.csv")
        >>> table[table.model_a == MERGED].model_b.tolist()
        ['cmr+ecg', 'cmr+prs', 'ecg+prs']
        >>> curve = pd.read_csv(folder / "imputed" / "km_train.csv")
        >>> int(curve.at_risk.iloc[0]) == grown["cohort_sizes"]["train"], bool(curve.survival.is_monotonic_decreasing)
        (True, True)
    """
    stages = StageLog()
    with stages.stage("write"):
        check_output_path(model.out_path, model.force)
    with stages.stage("load") as log:
        datasets = load_views(data, log)
        log.info("loaded %d views: %s", len(datasets), ", ".join(
            f"{dataset.name} {dataset.n_samples}x{dataset.n_features}" for dataset in datasets))
    with stages.stage("align") as log:
        if model.latent_impute:
            datasets, observed_mask = union_samples(datasets)
            log.info("%d subjects in the union of views", len(observed_mask))
        else:
            datasets, observed_mask = align_samples(datasets), None
            log.info("%d subjects observe every view", datasets[0].n_samples)
    with stages.stage("standardize"):
        views = standardize_views(datasets, observed_mask)
    with stages.stage("integrate") as log:
        config = model.integration_config(data.modalities)
        merged = integrate(views, config, observed_mask)
        log.info("%s: %d components", config.method, len(merged.labels))
    artifacts = RunArtifacts(data, model, merged, integration_summary(merged, config))
    if model.task == "clustering":
        with stages.stage("fit") as log:
            artifacts.clustering = cluster(merged, model)
            log.info("%s found %d clusters", model.algorithm, artifacts.clustering.n_clusters)
        artifacts.predictions = pd.DataFrame({
            "sample_id": list(merged.sample_ids),
            "split": "all",
            "cluster": artifacts.clustering.assignments,
        })
        artifacts.cohort_sizes = {"modelled": len(merged.sample_ids)}
    else:
        with stages.stage("cohort") as log:
            healthy, sizes = build_outcome(data, model, log)
            represented = healthy.restrict(merged.sample_ids)
            log.info("%d subjects without a merged representation excluded", len(healthy) - len(represented))
            outcome = label_outcome(represented, model)
            if outcome.empty:
                raise EmptyCohortError("no subject left to model")
            sizes.update({"with_representation": len(represented), "modelled": len(outcome)})
            log.info("%d subjects modelled", len(outcome))
        scores = merged.to_frame().set_index("sample_id")
        covariates = outcome[list(model.cohort_cov)]
        designs = {MERGED: pd.concat([scores.loc[outcome.index], covariates], axis=1)}
        if model.compare_single_views:
            for position, view in enumerate(views):
                observed = None if observed_mask is None else observed_mask[:, position]
                single = single_view_design(view, position, config, observed)
                designs[view.name] = pd.concat([single.loc[outcome.index], covariates], axis=1)
        if model.compare_view_subsets:
            for positions in view_subsets(len(views)):
                part = subset_design(views, positions, config, observed_mask)
                name = "+".join(views[position].name for position in positions)
                designs[name] = pd.concat([part.loc[outcome.index], covariates], axis=1)
        columns = ["label"] if model.task == "classification" else ["time_years", "event_indicator"]
        evaluation = evaluate_models(designs, outcome[columns], model, stages)
        artifacts.report = evaluation.report
        artifacts.fitted = evaluation.fitted[MERGED]
        artifacts.alpha_search = evaluation.search
        artifacts.survival_curve = evaluation.survival_curve
        artifacts.predictions = evaluation.predictions
        artifacts.cohort_sizes = {**sizes, **evaluation.report.cohort_sizes}
    artifacts.timings = stages.timings
    with stages.stage("write") as log:
        manifest = write_outputs(artifacts, model.out_path, model.force)
        log.info("wrote %d files to %s", len(manifest["files"]), model.out_path)
    return manifest


def check_output_path(out_path: Path, force: bool) -> None:
    """Refuse a non-empty results directory unless forced."""
    out_path = Path(out_path)
    if out_path.exists() and any(out_path.iterdir()) and not force:
        raise OutputExistsError(f"{out_path} is not empty; pass force to overwrite")


def _write_csv(frame: pd.DataFrame, path: Path, index: bool = False) -> None:
    frame.to_csv(path, index=index, float_format=FLOAT_FORMAT, lineterminator="\n", encoding="utf-8")


def _write_json(payload: dict, path: Path) -> None:
    path.write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def write_outputs(artifacts: RunArtifacts, out_path: Path, force: bool = False) -> dict:
    """Write the result files and the run manifest.

    Raises:
        OutputExistsError: ``out_path`` holds files and ``force`` is off.
    """
    out_path = Path(out_path)
    check_output_path(out_path, force)
    out_path.mkdir(parents=True, exist_ok=True)
    files = []

    def csv(frame, name, index=False):
        _write_csv(frame, out_path / name, index)
        files.append(name)

    merged = artifacts.merged
    csv(merged.to_frame(), "merged_scores.csv")
    for view, table in merged.weight_tables.items():
        csv(table.rename_axis("feature"), f"weights_{view}.csv", index=True)
    csv(merged.variance_explained, "variance_explained.csv")
    summary = {"integration": artifacts.integration_summary}
    if artifacts.fitted is not None:
        summary["downstream"] = artifacts.fitted.to_dict()
    if artifacts.clustering is not None:
        result = artifacts.clustering
        summary["downstream"] = {
            "kind": result.algorithm,
            "parameters": result.parameters,
            "n_clusters": result.n_clusters,
            "centroids": None if result.centroids is None else result.centroids.tolist(),
        }
    _write_json(summary, out_path / "model_summary.json")
    files.append("model_summary.json")
    if artifacts.report is not None:
        csv(artifacts.report.metrics_frame(), "cv_metrics.csv")
        if len(artifacts.report.models) > 1:
            csv(artifacts.report.comparisons, "comparisons.csv")
    if artifacts.alpha_search is not None:
        csv(artifacts.alpha_search, "alpha_search.csv")
    if artifacts.survival_curve is not None:
        csv(artifacts.survival_curve, "km_train.csv")
    if artifacts.predictions is not None:
        csv(artifacts.predictions, "predictions.csv")
    manifest = {
        "config": {"data": artifacts.data.to_dict(), "model": artifacts.model.to_dict()},
        "versions": {
            "healthfusion": __version__,
            "numpy": np.__version__,
            "scipy": scipy.__version__,
            "pandas": pd.__version__,
            "python": platform.python_version(),
        },
        "seed": artifacts.model.seed,
        "cohort_sizes": artifacts.cohort_sizes,
        "evaluation": None if artifacts.report is None else artifacts.report.to_dict(),
        "timings": {stage: round(seconds, 3) for stage, seconds in artifacts.timings.items()},
        "files": sorted(files + ["run_manifest.json"]),
    }
    _write_json(manifest, out_path / "run_manifest.json")
    return manifest
