"""Modality datasets: loading, alignment, scaling and linear reduction.

A modality (or view) is one sample x feature matrix coming from a single
data source. Views share sample ids; a view is either fully present or fully
absent for a subject, so a loaded matrix never holds missing cells.
"""
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Optional, Sequence
import numpy as np
import pandas as pd
from scipy import linalg

from healthfusion.errors import (
    AlignmentError,
    ConfigError,
    DataFormatError,
    DegenerateDataError,
    DuplicateIdError,
    EmptyCohortError,
    InsufficientSamplesError,
    RankError,
    SchemaError,
)

logger = logging.getLogger(__name__)

CONSTANT_STD = 1e-12
VIF_RIDGE = 1e-10
VIF_CAP = 1e12


@dataclass(frozen=True)
class ModalityDataset:
    """One modality's sample x feature matrix.

    The values are copied and frozen on construction.

    Args:
        name (str): view name.
        sample_ids (Sequence[str]): unique row ids.
        feature_names (Sequence[str]): unique column names.
        values (np.ndarray): finite matrix, rows = samples.

    Examples:
        >>> data = ModalityDataset("ecg", ["s1", "s2"], ["a", "b"], [[1, 2], [3, 4]])
        >>> data.n_samples, data.n_features
        (2, 2)
        >>> data.sample_ids
        ('s1', 's2')
        >>> ModalityDataset("ecg", ["s1", "s1"], ["a"], [[1], [2]])
        Traceback (most recent call last):
        healthfusion.errors.DuplicateIdError: ecg: duplicate sample id 's1'
        >>> ModalityDataset("ecg", ["s1"], ["a"], [[float("nan")]])
        Traceback (most recent call last):
        healthfusion.errors.DataFormatError: ecg: non-finite value at row 0, column 'a'
    """

    name: str
    sample_ids: tuple
    feature_names: tuple
    values: np.ndarray

    def __post_init__(self):
        sample_ids = tuple(str(sample_id) for sample_id in self.sample_ids)
        feature_names = tuple(str(feature) for feature in self.feature_names)
        values = np.array(self.values, dtype=float)
        if values.ndim != 2:
            values = values.reshape(len(sample_ids), len(feature_names))
        if values.shape != (len(sample_ids), len(feature_names)):
            raise SchemaError(
                f"{self.name}: values have shape {values.shape}, expected "
                f"{(len(sample_ids), len(feature_names))}"
            )
        _check_unique(sample_ids, f"{self.name}: duplicate sample id", DuplicateIdError)
        _check_unique(feature_names, f"{self.name}: duplicate feature", SchemaError)
        bad = np.argwhere(~np.isfinite(values))
        if len(bad):
            row, col = bad[0]
            raise DataFormatError(
                f"{self.name}: non-finite value at row {row}, "
                f"column {feature_names[col]!r}"
            )
        values.setflags(write=False)
        object.__setattr__(self, "sample_ids", sample_ids)
        object.__setattr__(self, "feature_names", feature_names)
        object.__setattr__(self, "values", values)

    @property
    def n_samples(self) -> int:
        """Number of rows (N)."""
        return len(self.sample_ids)

    @property
    def n_features(self) -> int:
        """Number of columns (D)."""
        return len(self.feature_names)

    def subset(self, sample_ids: Sequence[str]) -> "ModalityDataset":
        """Rows for the given ids, in the given order.

        Examples:
            >>> data = ModalityDataset("v", ["a", "b"], ["x"], [[1], [2]])
            >>> data.subset(["b"]).values.tolist()
            [[2.0]]
        """
        position = {sample_id: row for row, sample_id in enumerate(self.sample_ids)}
        missing = [sample_id for sample_id in sample_ids if sample_id not in position]
        if missing:
            raise AlignmentError(f"{self.name}: unknown sample ids {missing[:5]}")
        rows = [position[sample_id] for sample_id in sample_ids]
        return ModalityDataset(
            self.name, tuple(sample_ids), self.feature_names, self.values[rows]
        )

    def select_features(self, feature_names: Sequence[str]) -> "ModalityDataset":
        """Columns for the given feature names, in the given order.

        Examples:
            >>> data = ModalityDataset("v", ["a"], ["x", "y"], [[1, 2]])
            >>> data.select_features(["y"]).values.tolist()
            [[2.0]]
            >>> data.select_features(["z"])
            Traceback (most recent call last):
            healthfusion.errors.SchemaError: v: unknown features ['z']
        """
        position = {name: col for col, name in enumerate(self.feature_names)}
        missing = [name for name in feature_names if name not in position]
        if missing:
            raise SchemaError(f"{self.name}: unknown features {missing}")
        cols = [position[name] for name in feature_names]
        return ModalityDataset(
            self.name, self.sample_ids, tuple(feature_names), self.values[:, cols]
        )

    def with_values(self, values: np.ndarray) -> "ModalityDataset":
        """Same ids and features, new values."""
        return ModalityDataset(self.name, self.sample_ids, self.feature_names, values)


def _check_unique(items: Sequence[str], message: str, error: type) -> None:
    seen = set()
    for item in items:
        if item in seen:
            raise error(f"{message} {item!r}")
        seen.add(item)


@dataclass(frozen=True)
class PcaModel:
    """Fitted principal component analysis of one view.

    Args:
        feature_names (tuple): training feature names.
        means (np.ndarray): training column means (D).
        components (np.ndarray): D x m orthonormal loadings.
        explained_variance (np.ndarray): population variance of each score.
        explained_variance_ratio (np.ndarray): share of the total variance.
    """

    feature_names: tuple
    means: np.ndarray
    components: np.ndarray
    explained_variance: np.ndarray
    explained_variance_ratio: np.ndarray

    @property
    def n_components(self) -> int:
        """Number of retained components (m)."""
        return self.components.shape[1]

    def transform(self, dataset: ModalityDataset) -> np.ndarray:
        """Scores of new samples.

        Raises:
            SchemaError: features differ from training.
        """
        if dataset.feature_names != self.feature_names:
            raise SchemaError(f"{dataset.name}: features differ from the PCA fit")
        return (dataset.values - self.means) @ self.components


def load_modality_csv(
    path: Path,
    id_column: str,
    name: Optional[str] = None,
    features: Optional[Sequence[str]] = None,
) -> ModalityDataset:
    """Read one modality from a CSV file.

    The file is UTF-8, comma separated, with a header row, one id column and
    numeric feature columns. Rows keep file order.

    Args:
        path (Path): CSV file.
        id_column (str): name of the id column.
        name (str): view name, defaults to the file stem.
        features (Sequence[str]): optional include-list of feature columns.

    Returns:
        ModalityDataset: the parsed view.

    Raises:
        DuplicateIdError: missing or repeated ids.
        DataFormatError: missing id column, unparseable or non-finite cell.

    Examples:
        >>> data = load_modality_csv(Path("test_data/ecg.csv"), "eid")
        >>> data.name, data.n_samples, data.n_features
        ('ecg', 3, 2)
        >>> data.sample_ids
        ('s1', 's2', 's3')
        >>> load_modality_csv(Path("test_data/duplicate_ids.csv"), "eid")
        Traceback (most recent call last):
        healthfusion.errors.DuplicateIdError: duplicate_ids: duplicate sample id 's1'
        >>> load_modality_csv(Path("test_data/nan_cell.csv"), "eid")
        Traceback (most recent call last):
        healthfusion.errors.DataFormatError: test_data/nan_cell.csv: row 3, column 'b': 'NaN' is not a finite number
    """
    path = Path(path)
    name = name or path.stem
    frame = pd.read_csv(path, dtype=str, keep_default_na=False, encoding="utf-8")
    if id_column not in frame.columns:
        raise DataFormatError(f"{path}: id column {id_column!r} not found")
    ids = frame[id_column].str.strip()
    empty = np.flatnonzero((ids == "").to_numpy())
    if len(empty):
        raise DuplicateIdError(f"{path}: missing sample id at row {empty[0] + 2}")
    feature_columns = [column for column in frame.columns if column != id_column]
    if features is not None:
        unknown = [feature for feature in features if feature not in feature_columns]
        if unknown:
            raise SchemaError(f"{path}: unknown features {unknown}")
        feature_columns = list(features)
    raw = frame[feature_columns]
    values = raw.apply(lambda column: pd.to_numeric(column.str.strip(), errors="coerce"))
    values = values.to_numpy(dtype=float)
    bad = np.argwhere(~np.isfinite(values))
    if len(bad):
        row, col = bad[0]
        raise DataFormatError(
            f"{path.as_posix()}: row {row + 2}, column {feature_columns[col]!r}: "
            f"{raw.iat[row, col]!r} is not a finite number"
        )
    logger.debug("loaded %s: %d samples x %d features", name, *values.shape)
    return ModalityDataset(name, tuple(ids), tuple(feature_columns), values)


def _check_names(datasets: Sequence[ModalityDataset]) -> None:
    names = [dataset.name for dataset in datasets]
    _check_unique(names, "duplicate view name", SchemaError)


def align_samples(datasets: Sequence[ModalityDataset]) -> list[ModalityDataset]:
    """Restrict every view to the samples present in all views.

    Args:
        datasets (Sequence[ModalityDataset]): one or more views.

    Returns:
        list[ModalityDataset]: views sharing the sorted id intersection.

    Raises:
        EmptyCohortError: the intersection is empty.

    Examples:
        >>> first = ModalityDataset("a", ["s3", "s1", "s2"], ["x"], [[3], [1], [2]])
        >>> second = ModalityDataset("b", ["s2", "s3", "s4"], ["y"], [[2], [3], [4]])
        >>> [view.sample_ids for view in align_samples([first, second])]
        [('s2', 's3'), ('s2', 's3')]
        >>> align_samples([first])[0].values.ravel().tolist()
        [1.0, 2.0, 3.0]
        >>> other = ModalityDataset("c", ["x9"], ["y"], [[1]])
        >>> align_samples([first, other])
        Traceback (most recent call last):
        healthfusion.errors.EmptyCohortError: no sample is shared by all views
    """
    if not datasets:
        raise ConfigError("at least one view is required")
    _check_names(datasets)
    shared = set(datasets[0].sample_ids)
    for dataset in datasets[1:]:
        shared &= set(dataset.sample_ids)
    if not shared:
        raise EmptyCohortError("no sample is shared by all views")
    ids = sorted(shared)
    return [dataset.subset(ids) for dataset in datasets]


def union_samples(
    datasets: Sequence[ModalityDataset],
) -> tuple[list[ModalityDataset], np.ndarray]:
    """Extend every view to the sorted union of sample ids.

    Rows of a view that lacks a sample are zero-filled and flagged as
    unobserved in the returned mask.

    Returns:
        list[ModalityDataset]: views over the union of ids.
        np.ndarray: boolean mask, samples x views, True where observed.

    Examples:
        >>> first = ModalityDataset("a", ["s1", "s2"], ["x"], [[1], [2]])
        >>> second = ModalityDataset("b", ["s2", "s3"], ["y"], [[5], [6]])
        >>> views, mask = union_samples([first, second])
        >>> views[1].sample_ids, views[1].values.ravel().tolist()
        (('s1', 's2', 's3'), [0.0, 5.0, 6.0])
        >>> mask.tolist()
        [[True, False], [True, True], [False, True]]
    """
    if not datasets:
        raise ConfigError("at least one view is required")
    _check_names(datasets)
    ids = sorted(set().union(*(dataset.sample_ids for dataset in datasets)))
    row = {sample_id: index for index, sample_id in enumerate(ids)}
    mask = np.zeros((len(ids), len(datasets)), dtype=bool)
    views = []
    for col, dataset in enumerate(datasets):
        rows = [row[sample_id] for sample_id in dataset.sample_ids]
        values = np.zeros((len(ids), dataset.n_features))
        values[rows] = dataset.values
        mask[rows, col] = True
        views.append(ModalityDataset(dataset.name, tuple(ids), dataset.feature_names, values))
    return views, mask


def standardize(
    train: ModalityDataset, apply_to: Iterable[ModalityDataset]
) -> tuple[list[ModalityDataset], np.ndarray, np.ndarray]:
    """Scale features to zero mean and unit population variance.

    Statistics come from ``train`` only. Constant training features
    (std below 1e-12) become all-zero columns.

    Args:
        train (ModalityDataset): view providing the statistics.
        apply_to (Iterable[ModalityDataset]): views to transform.

    Returns:
        list[ModalityDataset]: transformed views.
        np.ndarray: training means.
        np.ndarray: training population standard deviations.

    Raises:
        SchemaError: feature names differ from ``train``.

    Examples:
        >>> train = ModalityDataset("v", ["a", "b", "c"], ["x", "k"], [[1, 5], [2, 5], [3, 5]])
        >>> (scaled,), means, stds = standardize(train, [train])
        >>> np.round(scaled.values[:, 0], 4).tolist()
        [-1.2247, 0.0, 1.2247]
        >>> scaled.values[:, 1].tolist()
        [0.0, 0.0, 0.0]
        >>> test = ModalityDataset("v", ["d"], ["x", "k"], [[2, 7]])
        >>> standardize(train, [test])[0][0].values.tolist()
        [[0.0, 0.0]]
        >>> again = standardize(scaled, [scaled])[0][0]
        >>> bool(np.allclose(again.values, scaled.values, atol=1e-10))
        True
    """
    if train.n_samples == 0:
        raise InsufficientSamplesError(f"{train.name}: no training sample")
    means = train.values.mean(axis=0)
    stds = train.values.std(axis=0)
    constant = stds < CONSTANT_STD
    safe = np.where(constant, 1.0, stds)
    transformed = []
    for dataset in apply_to:
        if dataset.feature_names != train.feature_names:
            raise SchemaError(
                f"{dataset.name}: features differ from the standardization fit"
            )
        values = np.where(constant, 0.0, (dataset.values - means) / safe)
        transformed.append(dataset.with_values(values))
    return transformed, means, stds


def variance_inflation_factors(values: np.ndarray) -> np.ndarray:
    """VIF of every column regressed on the others with an intercept.

    The Gram matrix gets a 1e-10 ridge so exact collinearity yields a huge
    factor instead of a singular solve; factors are capped at 1e12. Constant
    columns are collinear with the intercept and get the cap.

    Examples:
        >>> values = np.array([[1., 1., 1.], [-1., -1., 1.], [1., 1., -1.], [-1., -1., -1.]])
        >>> [float(vif) for vif in variance_inflation_factors(values)]
        [1000000000000.0, 1000000000000.0, 1.0]
    """
    centered = values - values.mean(axis=0)
    n_features = centered.shape[1]
    factors = np.ones(n_features)
    if n_features < 2:
        return factors
    for col in range(n_features):
        target = centered[:, col]
        total = target @ target
        if total <= CONSTANT_STD**2 * len(target):
            factors[col] = VIF_CAP
            continue
        others = np.delete(centered, col, axis=1)
        gram = others.T @ others + VIF_RIDGE * np.eye(n_features - 1)
        beta = linalg.solve(gram, others.T @ target, assume_a="pos")
        residual = target - others @ beta
        unexplained = (residual @ residual) / total
        factors[col] = VIF_CAP if unexplained <= 1.0 / VIF_CAP else min(1.0 / unexplained, VIF_CAP)
    return factors


def vif_filter(
    dataset: ModalityDataset, threshold: float = 10.0
) -> tuple[ModalityDataset, list[str]]:
    """Iteratively drop collinear features.

    While any VIF exceeds ``threshold`` the feature with the largest VIF is
    removed (ties within 1e-9 go to the later column) and all VIFs are
    recomputed.

    Args:
        dataset (ModalityDataset): input view.
        threshold (float): VIF cutoff, greater than 1.

    Returns:
        ModalityDataset: filtered view.
        list[str]: removed features, in removal order.

    Raises:
        InsufficientSamplesError: fewer than three samples.

    Examples:
        >>> rng = np.random.default_rng(0)
        >>> x, z = rng.normal(size=(2, 30))
        >>> data = ModalityDataset("v", [f"s{i}" for i in range(30)], ["x", "y", "z"], np.c_[x, x, z])
        >>> kept, removed = vif_filter(data, 10)
        >>> kept.feature_names, removed
        (('x', 'z'), ['y'])
        >>> vif_filter(kept, 10)[1]
        []
        >>> pattern = [[1, 1], [1, -1], [-1, 1], [-1, -1]]
        >>> orthogonal = ModalityDataset("o", list("abcd"), ["p", "q"], pattern)
        >>> vif_filter(orthogonal, 10)[1]
        []
        >>> vif_filter(ModalityDataset("t", ["a", "b"], ["p"], [[1], [2]]), 10)
        Traceback (most recent call last):
        healthfusion.errors.InsufficientSamplesError: t: VIF needs at least 3 samples, got 2
    """
    if dataset.n_samples < 3:
        raise InsufficientSamplesError(
            f"{dataset.name}: VIF needs at least 3 samples, got {dataset.n_samples}"
        )
    if threshold <= 1:
        raise ConfigError(f"VIF threshold must exceed 1, got {threshold}")
    kept = list(dataset.feature_names)
    values = np.array(dataset.values)
    removed = []
    while len(kept) > 1:
        factors = variance_inflation_factors(values)
        worst = factors.max()
        if worst <= threshold:
            break
        tied = np.flatnonzero(np.isclose(factors, worst, rtol=1e-9, atol=1e-9))
        col = int(tied[-1])
        logger.debug("%s: removing %s (VIF %.4g)", dataset.name, kept[col], worst)
        removed.append(kept.pop(col))
        values = np.delete(values, col, axis=1)
    return dataset.select_features(kept), removed


def pca(
    dataset: ModalityDataset,
    n_components: Optional[int] = None,
    variance_fraction: Optional[float] = None,
) -> tuple[PcaModel, np.ndarray]:
    """Principal component analysis through a thin SVD of the centered data.

    Exactly one selector is given: a fixed number of components or the
    smallest number whose cumulative variance ratio reaches a fraction.
    In each component the entry of largest magnitude is positive.

    Args:
        dataset (ModalityDataset): input view.
        n_components (int): fixed m, at most min(N, D).
        variance_fraction (float): P in (0, 1].

    Returns:
        PcaModel: the fitted model.
        np.ndarray: N x m scores.

    Raises:
        DegenerateDataError: the data has no variance.
        RankError: m exceeds min(N, D).

    Examples:
        >>> points = ModalityDataset("p", list("abcd"), ["x", "y"],
        ...                          [[1, 1], [-1, -1], [2, 2], [-2, -2]])
        >>> model, scores = pca(points, variance_fraction=0.8)
        >>> model.n_components
        1
        >>> np.round(model.components[:, 0], 6).tolist()
        [0.707107, 0.707107]
        >>> round(float(model.explained_variance_ratio[0]), 6)
        1.0
        >>> root3 = 3 ** 0.5
        >>> split = ModalityDataset("q", list("abcd"), ["x", "y"],
        ...                         [[root3, 1], [root3, -1], [-root3, 1], [-root3, -1]])
        >>> np.round(pca(split, n_components=2)[0].explained_variance_ratio, 6).tolist()
        [0.75, 0.25]
        >>> rng = np.random.default_rng(1)
        >>> noisy = ModalityDataset("r", [str(i) for i in range(20)], list("abcde"), rng.normal(size=(20, 5)))
        >>> full, full_scores = pca(noisy, n_components=5)
        >>> centered = noisy.values - noisy.values.mean(axis=0)
        >>> bool(np.linalg.norm(full_scores @ full.components.T - centered) < 1e-8)
        True
        >>> bool(np.allclose(full.components.T @ full.components, np.eye(5), atol=1e-8))
        True
        >>> bool(np.allclose(full_scores.var(axis=0), full.explained_variance))
        True
        >>> pca(noisy, n_components=6)
        Traceback (most recent call last):
        healthfusion.errors.RankError: r: 6 components requested, at most 5 available
        >>> pca(ModalityDataset("z", ["a", "b"], ["x"], [[1], [1]]), n_components=1)
        Traceback (most recent call last):
        healthfusion.errors.DegenerateDataError: z: data has no variance
    """
    if (n_components is None) == (variance_fraction is None):
        raise ConfigError("pca needs exactly one of n_components and variance_fraction")
    available = min(dataset.n_samples, dataset.n_features)
    if n_components is not None and not 1 <= n_components <= available:
        raise RankError(
            f"{dataset.name}: {n_components} components requested, "
            f"at most {available} available"
        )
    if variance_fraction is not None and not 0 < variance_fraction <= 1:
        raise ConfigError(f"variance fraction must lie in (0, 1], got {variance_fraction}")
    means = dataset.values.mean(axis=0)
    centered = dataset.values - means
    left, singular, right_t = linalg.svd(centered, full_matrices=False)
    variance = singular**2 / dataset.n_samples
    total = variance.sum()
    if total <= CONSTANT_STD**2:
        raise DegenerateDataError(f"{dataset.name}: data has no variance")
    ratio = variance / total
    if n_components is None:
        cumulative = np.cumsum(ratio)
        n_components = int(np.searchsorted(cumulative, variance_fraction - 1e-12) + 1)
        n_components = min(n_components, available)
    components = right_t[:n_components].T.copy()
    scores = left[:, :n_components] * singular[:n_components]
    signs = fix_signs(components)
    components *= signs
    scores *= signs
    model = PcaModel(
        dataset.feature_names,
        means,
        components,
        variance[:n_components],
        ratio[:n_components],
    )
    logger.debug(
        "%s: %d components explain %.3f of the variance",
        dataset.name,
        n_components,
        ratio[:n_components].sum(),
    )
    return model, scores


def fix_signs(weights: np.ndarray) -> np.ndarray:
    """Signs making the largest-magnitude entry of every column positive.

    Examples:
        >>> fix_signs(np.array([[1., -3.], [-2., 1.]])).tolist()
        [-1.0, -1.0]
    """
    if weights.size == 0:
        return np.ones(weights.shape[1] if weights.ndim == 2 else 0)
    pivot = np.argmax(np.abs(weights), axis=0)
    signs = np.sign(weights[pivot, np.arange(weights.shape[1])])
    return np.where(signs == 0, 1.0, signs)
