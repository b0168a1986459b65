"""Merged representations of several aligned views.

Every integration method (early fusion, AJIVE, group factor analysis)
produces a fitted object and a :class:`MergedRepresentation`: one score
matrix over the shared samples whose columns are labelled joint,
individual-of-view or factor, plus per-view weight tables and the share of
each view's variance every component explains.

Fitted objects share a small duck-typed surface used here:
``view_names``, ``feature_names``, ``labels``, ``scores``,
``view_weights()``, ``centered(datasets)`` and ``project(datasets, mask)``.
"""
import logging
from dataclasses import dataclass, field
from typing import Optional, Sequence
import numpy as np
import pandas as pd
from scipy import linalg

from healthfusion.errors import (
    AlignmentError,
    ConfigError,
    MissingViewUnsupportedError,
    RankError,
    SchemaError,
)
from healthfusion.tabular import ModalityDataset, fix_signs, pca

logger = logging.getLogger(__name__)

METHODS = ("early", "early_pca", "ajive", "gfa")


@dataclass(frozen=True)
class IntegrationConfig:
    """Settings of the integration step.

    Args:
        method (str): one of early, early_pca, ajive, gfa.
        per_view_ranks (tuple[int]): m_i, the per-view reduction ranks.
        variance_fraction (float): P, alternative to ``per_view_ranks``.
        max_factors (int): initial number of factors for gfa.
        prune_fraction (float): p, factors explaining less in every view
            are dropped.
        seed (int): seed of every random draw.
        gfa_tolerance (float): relative ELBO change that stops gfa.
        gfa_max_iter (int): iteration cap of gfa.
        ajive_resamples (int): draws of the random-direction and Wedin bounds.
        ajive_percentile (float): quantile of the random-direction bound.

    Examples:
        >>> IntegrationConfig("ajive", variance_fraction=0.8).per_view_ranks is None
        True
        >>> IntegrationConfig("ajive")
        Traceback (most recent call last):
        healthfusion.errors.ConfigError: ajive needs per_view_ranks or variance_fraction
        >>> IntegrationConfig("gfa", per_view_ranks=(2, 2), variance_fraction=0.8)
        Traceback (most recent call last):
        healthfusion.errors.ConfigError: set only one of per_view_ranks and variance_fraction
    """

    method: str
    per_view_ranks: Optional[tuple] = None
    variance_fraction: Optional[float] = None
    max_factors: int = 10
    prune_fraction: float = 0.05
    seed: int = 0
    gfa_tolerance: float = 1e-6
    gfa_max_iter: int = 1000
    ajive_resamples: int = 1000
    ajive_percentile: float = 0.95

    def __post_init__(self):
        if self.method not in METHODS:
            raise ConfigError(f"unknown integration method {self.method!r}, valid: {list(METHODS)}")
        if self.per_view_ranks is not None:
            ranks = tuple(int(rank) for rank in self.per_view_ranks)
            if any(rank < 1 for rank in ranks):
                raise ConfigError(f"per_view_ranks must be positive, got {ranks}")
            object.__setattr__(self, "per_view_ranks", ranks)
        if self.per_view_ranks is not None and self.variance_fraction is not None:
            raise ConfigError("set only one of per_view_ranks and variance_fraction")
        if self.method in ("early_pca", "ajive") and self.per_view_ranks is None and self.variance_fraction is None:
            raise ConfigError(f"{self.method} needs per_view_ranks or variance_fraction")
        if self.variance_fraction is not None and not 0 < self.variance_fraction <= 1:
            raise ConfigError(f"variance_fraction must lie in (0, 1], got {self.variance_fraction}")
        if self.max_factors < 1:
            raise ConfigError(f"max_factors must be at least 1, got {self.max_factors}")
        if not 0 <= self.prune_fraction < 1:
            raise ConfigError(f"prune_fraction must lie in [0, 1), got {self.prune_fraction}")
        if self.seed < 0:
            raise ConfigError(f"seed must be non-negative, got {self.seed}")
        if self.gfa_tolerance <= 0 or self.gfa_max_iter < 1:
            raise ConfigError("gfa_tolerance must be positive and gfa_max_iter at least 1")
        if self.ajive_resamples < 1 or not 0 < self.ajive_percentile < 1:
            raise ConfigError("ajive_resamples must be positive and ajive_percentile in (0, 1)")


@dataclass(frozen=True)
class ComponentLabel:
    """Provenance of one merged column.

    Examples:
        >>> ComponentLabel("joint", 1).column_name
        'Joint1'
        >>> ComponentLabel("individual", 2, "ecg").column_name
        'ecg_Ind2'
        >>> ComponentLabel("factor", 3).column_name
        'Factor3'
    """

    kind: str
    index: int
    view: Optional[str] = None

    @property
    def column_name(self) -> str:
        """Column header used in the output tables."""
        if self.kind == "joint":
            return f"Joint{self.index}"
        if self.kind == "individual":
            return f"{self.view}_Ind{self.index}"
        return f"Factor{self.index}"


@dataclass(frozen=True)
class MergedRepresentation:
    """Cross-modal scores with interpretation tables.

    Args:
        sample_ids (tuple): row ids.
        scores (np.ndarray): N x K score matrix.
        labels (tuple[ComponentLabel]): one label per column.
        weight_tables (dict): view name -> feature x component DataFrame.
        variance_explained (pd.DataFrame): columns component, view, r2.
        model: the fitted integration object, used by :func:`project_new`.
    """

    sample_ids: tuple
    scores: np.ndarray
    labels: tuple
    weight_tables: dict
    variance_explained: pd.DataFrame
    model: object = field(default=None, repr=False, compare=False)

    @property
    def column_names(self) -> list[str]:
        """Names of the score columns."""
        return [label.column_name for label in self.labels]

    def to_frame(self) -> pd.DataFrame:
        """Scores as a DataFrame with a leading sample_id column."""
        frame = pd.DataFrame(self.scores, columns=self.column_names)
        frame.insert(0, "sample_id", list(self.sample_ids))
        return frame


def unwrap(model):
    """The fitted integration object behind a merged representation."""
    if isinstance(model, MergedRepresentation):
        return model.model
    return model


def check_aligned(datasets: Sequence[ModalityDataset]) -> tuple:
    """Shared sample ids of aligned views.

    Raises:
        AlignmentError: the views do not share identical sample ids.

    Examples:
        >>> first = ModalityDataset("a", ["s1", "s2"], ["x"], [[1], [2]])
        >>> check_aligned([first, first.subset(["s2", "s1"])])
        Traceback (most recent call last):
        healthfusion.errors.AlignmentError: view 'a' is not aligned with view 'a'
    """
    if not datasets:
        raise ConfigError("at least one view is required")
    reference = datasets[0]
    for dataset in datasets[1:]:
        if dataset.sample_ids != reference.sample_ids:
            raise AlignmentError(
                f"view {dataset.name!r} is not aligned with view {reference.name!r}"
            )
    return reference.sample_ids


def check_features(model, datasets: Sequence[ModalityDataset]) -> None:
    """Raise SchemaError unless the views match the training views."""
    if len(datasets) != len(model.view_names):
        raise SchemaError(
            f"expected {len(model.view_names)} views, got {len(datasets)}"
        )
    for dataset, name, features in zip(datasets, model.view_names, model.feature_names):
        if dataset.feature_names != features:
            raise SchemaError(f"view {dataset.name!r}: features differ from the fit of {name!r}")


def resolve_ranks(datasets: Sequence[ModalityDataset], config: IntegrationConfig) -> list[int]:
    """Per-view reduction ranks m_i, fixed or from the variance fraction.

    Examples:
        >>> rng = np.random.default_rng(0)
        >>> view = ModalityDataset("v", [str(i) for i in range(10)], list("abc"), rng.normal(size=(10, 3)))
        >>> resolve_ranks([view], IntegrationConfig("early_pca", variance_fraction=1.0))
        [3]
        >>> resolve_ranks([view], IntegrationConfig("early_pca", per_view_ranks=(4,)))
        Traceback (most recent call last):
        healthfusion.errors.RankError: v: rank 4 exceeds min(N, D) = 3
    """
    if config.per_view_ranks is not None:
        if len(config.per_view_ranks) != len(datasets):
            raise ConfigError(
                f"{len(config.per_view_ranks)} ranks given for {len(datasets)} views"
            )
        for dataset, rank in zip(datasets, config.per_view_ranks):
            available = min(dataset.n_samples, dataset.n_features)
            if rank > available:
                raise RankError(f"{dataset.name}: rank {rank} exceeds min(N, D) = {available}")
        return list(config.per_view_ranks)
    if config.variance_fraction is None:
        raise ConfigError(f"{config.method} needs per_view_ranks or variance_fraction")
    return [
        pca(dataset, variance_fraction=config.variance_fraction)[0].n_components
        for dataset in datasets
    ]


def explained_variance_table(
    scores: np.ndarray,
    view_weights: Sequence[np.ndarray],
    centered_views: Sequence[np.ndarray],
    row_masks: Sequence[np.ndarray],
    labels: Sequence[ComponentLabel],
    view_names: Sequence[str],
) -> pd.DataFrame:
    """R² of every component's rank-one reconstruction in every view.

    R²(k, i) = 1 - ||Y_i - s_k w_ikᵀ||² / ||Y_i||² on the centered rows the
    view observes, with the score column centered over the same rows.
    """
    rows = []
    for weights, values, observed, name in zip(view_weights, centered_views, row_masks, view_names):
        block = values[observed]
        part = scores[observed]
        part = part - part.mean(axis=0) if len(part) else part
        total = float(np.sum(block**2))
        if total <= 0.0:
            r2 = np.zeros(len(labels))
        else:
            cross = np.einsum("nk,nd,dk->k", part, block, weights)
            r2 = (2.0 * cross - np.sum(part**2, axis=0) * np.sum(weights**2, axis=0)) / total
        for label, value in zip(labels, r2):
            rows.append((label.column_name, name, float(value)))
    table = pd.DataFrame(rows, columns=["component", "view", "r2"])
    order = {label.column_name: position for position, label in enumerate(labels)}
    table["_order"] = table["component"].map(order)
    return table.sort_values(["_order"], kind="stable").drop(columns="_order").reset_index(drop=True)


def variance_explained(model, datasets: Sequence[ModalityDataset]) -> pd.DataFrame:
    """Variance explained per component per view for a fitted integration.

    Args:
        model: fitted early fusion, AJIVE or GFA object (or a merged
            representation holding one).
        datasets (Sequence[ModalityDataset]): the training views.

    Returns:
        pd.DataFrame: columns component, view, r2.

    Raises:
        SchemaError: views do not match the fit.

    Examples:
        >>> rng = np.random.default_rng(3)
        >>> score = rng.normal(size=40)
        >>> view = ModalityDataset("v", [str(i) for i in range(40)], list("abc"),
        ...                        np.outer(score, [1.0, -2.0, 0.5]))
        >>> merged = early_fusion([view], IntegrationConfig("early_pca", per_view_ranks=(1,)))
        >>> table = variance_explained(merged, [view])
        >>> bool(abs(table.r2.iloc[0] - 1.0) < 1e-8)
        True
    """
    model = unwrap(model)
    check_features(model, datasets)
    centered, masks = model.centered(datasets)
    if centered[0].shape[0] != model.scores.shape[0]:
        raise SchemaError("variance explained needs the training samples")
    return explained_variance_table(
        model.scores, model.view_weights(), centered, masks, model.labels, model.view_names
    )


def build_representation(model, datasets: Sequence[ModalityDataset]) -> MergedRepresentation:
    """Assemble the merged representation of a freshly fitted model."""
    tables = {}
    columns = [label.column_name for label in model.labels]
    for name, features, weights in zip(model.view_names, model.feature_names, model.view_weights()):
        tables[name] = pd.DataFrame(weights, index=list(features), columns=columns)
    return MergedRepresentation(
        sample_ids=model.sample_ids,
        scores=model.scores,
        labels=tuple(model.labels),
        weight_tables=tables,
        variance_explained=variance_explained(model, datasets),
        model=model,
    )


def project_new(
    model,
    datasets: Sequence[ModalityDataset],
    observed_mask: Optional[np.ndarray] = None,
) -> np.ndarray:
    """Scores of new samples under a fitted integration, without refitting.

    Args:
        model: fitted integration object or merged representation.
        datasets (Sequence[ModalityDataset]): views aligned on the new ids,
            in training order.
        observed_mask (np.ndarray): samples x views, True where observed.
            Only group factor analysis accepts unobserved views.

    Returns:
        np.ndarray: N_new x K scores.

    Raises:
        SchemaError: features do not match the fit.
        MissingViewUnsupportedError: a view is missing for a method that
            needs all views.
    """
    model = unwrap(model)
    check_features(model, datasets)
    check_aligned(datasets)
    if observed_mask is not None:
        observed_mask = np.asarray(observed_mask, dtype=bool)
        if observed_mask.shape != (datasets[0].n_samples, len(datasets)):
            raise SchemaError(f"observed mask has shape {observed_mask.shape}")
    return model.project(datasets, observed_mask)


def require_complete(method: str, observed_mask: Optional[np.ndarray]) -> None:
    """Raise unless every view is observed."""
    if observed_mask is not None and not np.all(observed_mask):
        raise MissingViewUnsupportedError(
            f"{method} cannot project samples with missing views; "
            "missing views are only supported by gfa"
        )


@dataclass(frozen=True)
class EarlyFusion:
    """Concatenation of views, optionally reduced per view by PCA."""

    sample_ids: tuple
    view_names: tuple
    feature_names: tuple
    pca_models: Optional[tuple]
    scores: np.ndarray
    labels: tuple

    def view_weights(self) -> list[np.ndarray]:
        """Feature x component weights of every view."""
        if self.pca_models:
            blocks = [model.components for model in self.pca_models]
        else:
            blocks = [np.eye(len(features)) for features in self.feature_names]
        stacked = linalg.block_diag(*blocks)
        bounds = np.cumsum([len(features) for features in self.feature_names])[:-1]
        return np.split(stacked, bounds, axis=0)

    def centered(self, datasets: Sequence[ModalityDataset]):
        """Centered training views and their observed rows."""
        centered = [dataset.values - dataset.values.mean(axis=0) for dataset in datasets]
        return centered, [np.ones(dataset.n_samples, dtype=bool) for dataset in datasets]

    def project(self, datasets: Sequence[ModalityDataset], observed_mask=None) -> np.ndarray:
        """Concatenated (reduced) columns of new samples."""
        require_complete("early fusion", observed_mask)
        if self.pca_models:
            blocks = [model.transform(dataset) for model, dataset in zip(self.pca_models, datasets)]
        else:
            blocks = [np.asarray(dataset.values) for dataset in datasets]
        return np.hstack(blocks)


def early_fusion(datasets: Sequence[ModalityDataset], config: IntegrationConfig) -> MergedRepresentation:
    """Concatenate aligned views, optionally after per-view PCA.

    Columns keep view order and are labelled individual-of-view so every
    merged column traces back to one view.

    Args:
        datasets (Sequence[ModalityDataset]): aligned views.
        config (IntegrationConfig): method early or early_pca.

    Returns:
        MergedRepresentation: the concatenation.

    Raises:
        AlignmentError: views are not aligned.

    Examples:
        >>> rng = np.random.default_rng(0)
        >>> ids = [f"s{i}" for i in range(6)]
        >>> first = ModalityDataset("cmr", ids, ["a", "b"], rng.normal(size=(6, 2)))
        >>> second = ModalityDataset("ecg", ids, ["c", "d", "e"], rng.normal(size=(6, 3)))
        >>> merged = early_fusion([first, second], IntegrationConfig("early"))
        >>> merged.scores.shape, merged.column_names
        ((6, 5), ['cmr_Ind1', 'cmr_Ind2', 'ecg_Ind1', 'ecg_Ind2', 'ecg_Ind3'])
        >>> reduced = early_fusion([first, second], IntegrationConfig("early_pca", per_view_ranks=(1, 1)))
        >>> reduced.scores.shape
        (6, 2)
        >>> bool(np.array_equal(early_fusion([first], IntegrationConfig("early")).scores, first.values))
        True
        >>> bool(np.allclose(project_new(reduced, [first, second]), reduced.scores))
        True
        >>> early_fusion([first, second.subset(ids[::-1])], IntegrationConfig("early"))
        Traceback (most recent call last):
        healthfusion.errors.AlignmentError: view 'ecg' is not aligned with view 'cmr'
    """
    if config.method not in ("early", "early_pca"):
        raise ConfigError(f"early_fusion cannot run method {config.method!r}")
    sample_ids = check_aligned(datasets)
    labels = []
    blocks = []
    pca_models = None
    if config.method == "early_pca":
        ranks = resolve_ranks(datasets, config)
        pca_models = []
        for dataset, rank in zip(datasets, ranks):
            model, scores = pca(dataset, n_components=rank)
            pca_models.append(model)
            blocks.append(scores)
        pca_models = tuple(pca_models)
    else:
        blocks = [np.array(dataset.values) for dataset in datasets]
    for dataset, block in zip(datasets, blocks):
        labels.extend(ComponentLabel("individual", j + 1, dataset.name) for j in range(block.shape[1]))
    model = EarlyFusion(
        sample_ids=sample_ids,
        view_names=tuple(dataset.name for dataset in datasets),
        feature_names=tuple(dataset.feature_names for dataset in datasets),
        pca_models=pca_models,
        scores=np.hstack(blocks),
        labels=tuple(labels),
    )
    logger.info("early fusion: %d views -> %d columns", len(datasets), model.scores.shape[1])
    return build_representation(model, datasets)


def order_and_sign(r2_by_view: np.ndarray, stacked_weights: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Column order by descending summed R² and the sign fixing each column.

    Args:
        r2_by_view (np.ndarray): views x components.
        stacked_weights (np.ndarray): all views' weights stacked row-wise.

    Returns:
        np.ndarray: permutation of the components.
        np.ndarray: signs, in the permuted order.

    Examples:
        >>> order, signs = order_and_sign(np.array([[0.1, 0.5]]), np.array([[1.0, -2.0]]))
        >>> order.tolist(), signs.tolist()
        ([1, 0], [-1.0, 1.0])
    """
    order = np.argsort(-r2_by_view.sum(axis=0), kind="stable")
    signs = fix_signs(stacked_weights[:, order])
    return order, signs
