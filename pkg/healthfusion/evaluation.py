"""Stratified splits, cross-validation, metrics and paired model comparison."""
import itertools
import logging
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence
import numpy as np
import pandas as pd
from lifelines import KaplanMeierFitter
from scipy import stats

from healthfusion.errors import (
    AllTiedError,
    ConfigError,
    DegenerateLabelsError,
    NoComparablePairsError,
    SchemaError,
    StratificationError,
)

logger = logging.getLogger(__name__)

EXACT_LIMIT = 25
SIDES = ("greater", "two_sided")


@dataclass(frozen=True)
class EvaluationConfig:
    """Split and comparison settings.

    Examples:
        >>> EvaluationConfig().n_folds
        10
        >>> EvaluationConfig(n_folds=1)
        Traceback (most recent call last):
        healthfusion.errors.ConfigError: n_folds must be at least 2, got 1
    """

    test_size: float = 0.2
    n_folds: int = 10
    seed: int = 0
    comparison_level: float = 0.10
    comparison_sided: str = "greater"

    def __post_init__(self):
        if not 0 < self.test_size < 1:
            raise ConfigError(f"test_size must lie in (0, 1), got {self.test_size}")
        if self.n_folds < 2:
            raise ConfigError(f"n_folds must be at least 2, got {self.n_folds}")
        if self.seed < 0:
            raise ConfigError(f"seed must be non-negative, got {self.seed}")
        if not 0 < self.comparison_level < 1:
            raise ConfigError(f"comparison_level must lie in (0, 1), got {self.comparison_level}")
        if self.comparison_sided not in SIDES:
            raise ConfigError(f"comparison_sided must be one of {list(SIDES)}, got {self.comparison_sided!r}")


def _strata(labels) -> tuple[np.ndarray, np.ndarray]:
    labels = np.asarray(labels)
    return labels, np.unique(labels)


def stratified_split(ids: Sequence[str], labels, test_size: float, seed: int) -> tuple[list, list]:
    """Train and test ids with the label proportions of every stratum kept.

    Each stratum of size n sends round(test_size * n) (halves rounded up)
    randomly chosen ids to the test side.

    Raises:
        StratificationError: a stratum cannot place an id on both sides.

    Examples:
        >>> ids = [f"s{i:03d}" for i in range(100)]
        >>> labels = [1] * 10 + [0] * 90
        >>> train, test = stratified_split(ids, labels, 0.2, seed=0)
        >>> len(train), len(test), sum(1 for i in test if int(i[1:]) < 10)
        (80, 20, 2)
        >>> stratified_split(ids, labels, 0.2, seed=0) == (train, test)
        True
        >>> stratified_split(ids[:12], [1, 1] + [0] * 10, 0.2, seed=0)
        Traceback (most recent call last):
        healthfusion.errors.StratificationError: stratum 1 has 2 subjects; test size 0.2 leaves a side empty
    """
    labels, values = _strata(labels)
    if len(labels) != len(ids):
        raise SchemaError(f"{len(ids)} ids but {len(labels)} labels")
    rng = np.random.default_rng(seed)
    in_test = np.zeros(len(ids), dtype=bool)
    for value in values:
        members = np.flatnonzero(labels == value)
        n_test = int(np.floor(test_size * len(members) + 0.5))
        if n_test < 1 or n_test >= len(members):
            raise StratificationError(
                f"stratum {value} has {len(members)} subjects; test size {test_size} leaves a side empty"
            )
        in_test[rng.permutation(members)[:n_test]] = True
    ids = list(ids)
    return [ids[i] for i in np.flatnonzero(~in_test)], [ids[i] for i in np.flatnonzero(in_test)]


def stratified_kfold(ids: Sequence[str], labels, n_folds: int, seed: int) -> np.ndarray:
    """Fold number of every id, dealt round-robin within shuffled strata.

    The deal continues across strata, so fold sizes also differ by at most
    one.

    Raises:
        StratificationError: a stratum has fewer ids than folds.

    Examples:
        >>> labels = np.array([1] * 10 + [0] * 90)
        >>> folds = stratified_kfold([str(i) for i in range(100)], labels, 10, seed=0)
        >>> np.bincount(folds[labels == 1]).tolist()
        [1, 1, 1, 1, 1, 1, 1, 1, 1, 1]
        >>> np.bincount(folds).tolist()
        [10, 10, 10, 10, 10, 10, 10, 10, 10, 10]
        >>> stratified_kfold(["a", "b", "c"], [1, 0, 0], 2, seed=0)
        Traceback (most recent call last):
        healthfusion.errors.StratificationError: stratum 1 has 1 subjects, fewer than 2 folds
    """
    labels, values = _strata(labels)
    if len(labels) != len(ids):
        raise SchemaError(f"{len(ids)} ids but {len(labels)} labels")
    if n_folds < 2:
        raise ConfigError(f"n_folds must be at least 2, got {n_folds}")
    rng = np.random.default_rng(seed)
    folds = np.empty(len(labels), dtype=int)
    dealt = 0
    for value in values:
        members = np.flatnonzero(labels == value)
        if len(members) < n_folds:
            raise StratificationError(f"stratum {value} has {len(members)} subjects, fewer than {n_folds} folds")
        folds[rng.permutation(members)] = (dealt + np.arange(len(members))) % n_folds
        dealt += len(members)
    return folds


def auc(labels, scores) -> float:
    """Area under the ROC curve as the Mann-Whitney statistic; ties count half.

    Examples:
        >>> auc([0, 0, 1, 1], [0.1, 0.2, 0.8, 0.9])
        1.0
        >>> auc([0, 1, 0, 1], [0.4, 0.3, 0.2, 0.8])
        0.75
        >>> auc([0, 1, 1], [2.0, 2.0, 2.0])
        0.5

        Brute-force pair counting agrees on random fixtures:

        >>> rng = np.random.default_rng(0)
        >>> worst = 0.0
        >>> for _ in range(100):
        ...     n = int(rng.integers(2, 31))
        ...     y = np.r_[0, 1, rng.integers(0, 2, n - 2)]
        ...     s = rng.integers(0, 5, n).astype(float)
        ...     pairs = [(a > b) + 0.5 * (a == b) for a in s[y == 1] for b in s[y == 0]]
        ...     worst = max(worst, abs(auc(y, s) - np.mean(pairs)), abs(auc(y, s) + auc(y, -s) - 1))
        >>> worst < 1e-12
        True
    """
    labels = np.asarray(labels)
    scores = np.asarray(scores, dtype=float)
    if labels.shape != scores.shape:
        raise SchemaError(f"{len(labels)} labels but {len(scores)} scores")
    positive = labels == 1
    n_pos, n_neg = int(positive.sum()), int((~positive).sum())
    if n_pos == 0 or n_neg == 0:
        raise DegenerateLabelsError("AUC needs both classes")
    ranks = stats.rankdata(scores)
    u_stat = ranks[positive].sum() - n_pos * (n_pos + 1) / 2.0
    return float(u_stat / (n_pos * n_neg))


def concordance_index(time, event, risk_scores) -> float:
    """Harrell's concordance index.

    A pair is comparable when the subject with the strictly shorter time had
    the event; it is concordant when that subject has the higher risk, and
    ties in risk count half.

    Raises:
        NoComparablePairsError: no comparable pair exists.

    Examples:
        >>> concordance_index([1, 2, 3], [1, 1, 1], [3, 2, 1])
        1.0
        >>> concordance_index([1, 2, 3], [1, 1, 0], [1, 2, 3])
        0.0
        >>> concordance_index([1, 2, 3], [0, 0, 0], [1, 2, 3])
        Traceback (most recent call last):
        healthfusion.errors.NoComparablePairsError: no comparable pairs among 3 subjects

        Brute-force enumeration agrees on random fixtures:

        >>> rng = np.random.default_rng(1)
        >>> worst = 0.0
        >>> for _ in range(100):
        ...     n = int(rng.integers(2, 31))
        ...     t = rng.integers(1, 8, n).astype(float)
        ...     e = np.r_[1, rng.integers(0, 2, n - 1)]
        ...     t[0] = 0.5
        ...     r = rng.integers(0, 4, n).astype(float)
        ...     pairs = [(r[i] > r[j]) + 0.5 * (r[i] == r[j])
        ...              for i in range(n) for j in range(n) if e[i] and t[i] < t[j]]
        ...     worst = max(worst, abs(concordance_index(t, e, r) - np.mean(pairs)))
        >>> worst < 1e-12
        True
    """
    time = np.asarray(time, dtype=float)
    event = np.asarray(event).astype(bool)
    risk = np.asarray(risk_scores, dtype=float)
    if not time.shape == event.shape == risk.shape:
        raise SchemaError("time, event and risk scores differ in length")
    comparable = event[:, None] & (time[:, None] < time[None, :])
    n_pairs = int(comparable.sum())
    if n_pairs == 0:
        raise NoComparablePairsError(f"no comparable pairs among {len(time)} subjects")
    higher = (risk[:, None] > risk[None, :]) & comparable
    tied = (risk[:, None] == risk[None, :]) & comparable
    return float((higher.sum() + 0.5 * tied.sum()) / n_pairs)


def kaplan_meier(time, event) -> pd.DataFrame:
    """Product-limit estimate of event-free survival.

    One row per distinct time. Subjects censored at an event time count as
    at risk for it.

    Returns:
        pd.DataFrame: time, at_risk, events and survival.

    Examples:
        >>> curve = kaplan_meier([1, 2, 2, 3, 4], [1, 1, 0, 1, 0])
        >>> curve.round(10).to_dict("list")  # doctest: +NORMALIZE_WHITESPACE
        {'time': [1.0, 2.0, 3.0, 4.0], 'at_risk': [5, 4, 2, 1], 'events': [1, 1, 1, 0],
         'survival': [0.8, 0.6, 0.3, 0.3]}
        >>> kaplan_meier([1, 2], [1])
        Traceback (most recent call last):
        healthfusion.errors.SchemaError: 2 times but 1 event flags
    """
    time = np.asarray(time, dtype=float)
    event = np.asarray(event).astype(int)
    if time.shape != event.shape:
        raise SchemaError(f"{len(time)} times but {len(event)} event flags")
    fitter = KaplanMeierFitter().fit(time, event_observed=event)
    table = fitter.event_table
    table = table[table["removed"] > 0]
    return pd.DataFrame({
        "time": table.index.to_numpy(dtype=float),
        "at_risk": table["at_risk"].to_numpy(dtype=int),
        "events": table["observed"].to_numpy(dtype=int),
        "survival": fitter.survival_function_.loc[table.index].iloc[:, 0].to_numpy(),
    })


@dataclass(frozen=True)
class WilcoxonResult:
    """Outcome of a signed-rank test."""

    statistic: float
    p_value: float
    significant: bool
    n: int
    exact: bool


def _exact_counts(doubled_ranks: np.ndarray) -> np.ndarray:
    """Number of sign patterns giving each doubled positive-rank sum."""
    counts = np.zeros(int(doubled_ranks.sum()) + 1)
    counts[0] = 1.0
    for rank in doubled_ranks:
        shifted = np.zeros_like(counts)
        shifted[rank:] = counts[: len(counts) - rank]
        counts = counts + shifted
    return counts


def wilcoxon_signed_rank(a, b, sided: str = "greater", level: float = 0.10) -> WilcoxonResult:
    """Paired signed-rank test of a against b.

    Zero differences are dropped and tied magnitudes get mid-ranks. With at
    most 25 nonzero differences the null distribution is enumerated exactly,
    otherwise the normal approximation with continuity correction is used.
    ``sided="greater"`` tests whether a tends to exceed b.

    Raises:
        AllTiedError: every difference is zero.

    Examples:
        >>> wilcoxon_signed_rank([2, 3, 4, 5, 6], [1, 1, 1, 1, 1]).p_value
        0.03125
        >>> wilcoxon_signed_rank([1, 2], [1, 2])
        Traceback (most recent call last):
        healthfusion.errors.AllTiedError: all 2 paired differences are zero

        Exact p-values match enumeration of every sign pattern:

        >>> rng = np.random.default_rng(2)
        >>> worst = 0.0
        >>> for n in range(1, 13):
        ...     d = rng.integers(1, 4, n) * rng.choice([-1, 1], n)
        ...     ranks = stats.rankdata(np.abs(d))
        ...     observed = ranks[d > 0].sum()
        ...     sums = [ranks[np.array(signs) > 0].sum() for signs in itertools.product([-1, 1], repeat=n)]
        ...     expected = np.mean([total >= observed - 1e-9 for total in sums])
        ...     worst = max(worst, abs(wilcoxon_signed_rank(d, np.zeros(n)).p_value - expected))
        >>> worst < 1e-12
        True
        >>> large = wilcoxon_signed_rank(np.arange(1, 41) + 0.5, np.zeros(40))
        >>> large.exact, large.p_value < 1e-6
        (False, True)
    """
    if sided not in SIDES:
        raise ConfigError(f"sided must be one of {list(SIDES)}, got {sided!r}")
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if a.shape != b.shape:
        raise SchemaError(f"paired samples differ in length: {len(a)} and {len(b)}")
    difference = a - b
    nonzero = difference[difference != 0]
    if len(nonzero) == 0:
        raise AllTiedError(f"all {len(difference)} paired differences are zero")
    n = len(nonzero)
    ranks = stats.rankdata(np.abs(nonzero))
    statistic = float(ranks[nonzero > 0].sum())
    exact = n <= EXACT_LIMIT
    if exact:
        doubled = np.rint(2 * ranks).astype(int)
        counts = _exact_counts(doubled)
        probabilities = counts / counts.sum()
        observed = int(np.rint(2 * statistic))
        upper = float(probabilities[observed:].sum())
        lower = float(probabilities[: observed + 1].sum())
    else:
        mean = n * (n + 1) / 4.0
        _, ties = np.unique(np.abs(nonzero), return_counts=True)
        variance = n * (n + 1) * (2 * n + 1) / 24.0 - np.sum(ties**3 - ties) / 48.0
        scale = np.sqrt(variance)
        upper = float(stats.norm.sf((statistic - mean - 0.5) / scale))
        lower = float(stats.norm.cdf((statistic - mean + 0.5) / scale))
    p_value = upper if sided == "greater" else min(1.0, 2.0 * min(upper, lower))
    return WilcoxonResult(statistic, p_value, bool(p_value < level), n, exact)


def compare_models(
    fold_metrics: dict,
    sided: str = "greater",
    level: float = 0.10,
) -> pd.DataFrame:
    """Pairwise signed-rank tests on paired fold metrics.

    Rows follow the input order: every model against each later one, with
    the alternative that the earlier model scores higher. Models with
    identical fold metrics get p-value 1.

    Args:
        fold_metrics (dict): model name -> fold metrics, same folds for all.

    Returns:
        pd.DataFrame: model_a, model_b, p_value, significant.

    Raises:
        SchemaError: fold counts differ.

    Examples:
        >>> better = [0.80 + 0.01 * k for k in range(10)]
        >>> worse = [0.70 + 0.01 * k for k in range(10)]
        >>> table = compare_models({"merged": better, "cmr": worse, "copy": worse})
        >>> table.to_dict("records")[0]
        {'model_a': 'merged', 'model_b': 'cmr', 'p_value': 0.0009765625, 'significant': True}
        >>> len(table), float(table.p_value.iloc[2])
        (3, 1.0)
    """
    names = list(fold_metrics)
    lengths = {len(fold_metrics[name]) for name in names}
    if len(lengths) > 1:
        raise SchemaError(f"models were evaluated on different fold counts: {sorted(lengths)}")
    rows = []
    for first, second in itertools.combinations(names, 2):
        try:
            result = wilcoxon_signed_rank(fold_metrics[first], fold_metrics[second], sided, level)
            rows.append((first, second, result.p_value, result.significant))
        except AllTiedError:
            logger.info("%s and %s: no difference on any fold", first, second)
            rows.append((first, second, 1.0, False))
    return pd.DataFrame(rows, columns=["model_a", "model_b", "p_value", "significant"])


@dataclass(frozen=True)
class ModelScores:
    """Fold and test metrics of one model."""

    name: str
    metric_name: str
    fold_metrics: tuple
    test_metric: Optional[float] = None

    @property
    def fold_mean(self) -> float:
        return float(np.mean(self.fold_metrics))

    @property
    def fold_std(self) -> float:
        """Sample standard deviation over folds."""
        return float(np.std(self.fold_metrics, ddof=1)) if len(self.fold_metrics) > 1 else 0.0


@dataclass(frozen=True)
class EvaluationReport:
    """Per-model metrics, pairwise comparisons and cohort sizes."""

    models: tuple
    comparisons: pd.DataFrame = field(default_factory=lambda: pd.DataFrame(
        columns=["model_a", "model_b", "p_value", "significant"]))
    cohort_sizes: dict = field(default_factory=dict)

    def metrics_frame(self) -> pd.DataFrame:
        """Long table model, fold, metric_name, value; test rows have fold ``test``.

        Examples:
            >>> report = EvaluationReport((ModelScores("merged", "auc", (0.7, 0.9), 0.8),))
            >>> report.metrics_frame().values.tolist()
            [['merged', '0', 'auc', 0.7], ['merged', '1', 'auc', 0.9], ['merged', 'test', 'auc', 0.8]]
        """
        rows = []
        for scores in self.models:
            for fold, value in enumerate(scores.fold_metrics):
                rows.append((scores.name, str(fold), scores.metric_name, float(value)))
            if scores.test_metric is not None:
                rows.append((scores.name, "test", scores.metric_name, float(scores.test_metric)))
        return pd.DataFrame(rows, columns=["model", "fold", "metric_name", "value"])

    def to_dict(self) -> dict:
        """Summary for the run manifest."""
        return {
            "models": {
                scores.name: {
                    "metric": scores.metric_name,
                    "fold_mean": scores.fold_mean,
                    "fold_std": scores.fold_std,
                    "test": scores.test_metric,
                }
                for scores in self.models
            },
            "cohort_sizes": dict(self.cohort_sizes),
        }


def cross_validate(folds: np.ndarray, fit_score: Callable[[np.ndarray, np.ndarray], float]) -> tuple:
    """Metric of every fold, fitting on the other folds.

    Args:
        folds (np.ndarray): fold number per sample, from
            :func:`stratified_kfold`.
        fit_score: called with train and held-out row indices, returns the
            held-out metric.

    Examples:
        >>> cross_validate(np.array([0, 1, 0, 1]), lambda train, test: float(test.sum()))
        (2.0, 4.0)
    """
    metrics = []
    for fold in range(int(folds.max()) + 1):
        held_out = np.flatnonzero(folds == fold)
        metrics.append(fit_score(np.flatnonzero(folds != fold), held_out))
        logger.debug("fold %d: %.6g", fold, metrics[-1])
    return tuple(metrics)


def select_alpha(search: pd.DataFrame) -> float:
    """Largest alpha whose mean metric is within one fold SD of the best mean.

    Args:
        search (pd.DataFrame): columns alpha, mean and std.

    Examples:
        >>> grid = pd.DataFrame({"alpha": [0.001, 0.01, 0.1], "mean": [0.80, 0.79, 0.60],
        ...                      "std": [0.02, 0.03, 0.05]})
        >>> select_alpha(grid)
        0.01
    """
    if search.empty:
        raise ConfigError("empty alpha grid")
    best = search.loc[search["mean"].idxmax()]
    eligible = search[search["mean"] >= best["mean"] - best["std"]]
    return float(eligible["alpha"].max())
