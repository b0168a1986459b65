"""Prediction models fitted on the merged representation.

Penalized logistic and Cox regressions share one proximal Newton solver: a
quadratic model of the smooth loss is minimized by cyclic coordinate descent
with soft thresholding, followed by a backtracking line search on the full
objective. Features are standardized inside the solver and coefficients are
reported on the original scale.
"""
import logging
from dataclasses import dataclass, field
from typing import Optional, Sequence, Union
import numpy as np
import pandas as pd
from scipy import linalg, stats
from scipy.special import expit, logsumexp

from healthfusion.errors import (
    ConfigError,
    DataFormatError,
    DegenerateLabelsError,
    NoEventsError,
    SchemaError,
)
from healthfusion.tabular import CONSTANT_STD

logger = logging.getLogger(__name__)

TOLERANCE = 1e-8
MAX_ITER = 10_000
INNER_TOLERANCE = 1e-12
INNER_SWEEPS = 1000
ARMIJO = 1e-4
MIN_STEP = 1e-10
NB_SMOOTHING = 1e-9
CI_LEVEL = 0.95

Matrix = Union[np.ndarray, pd.DataFrame]


@dataclass(frozen=True)
class PenaltyConfig:
    """Elastic-net penalty alpha * (l1_ratio * |b|_1 + (1 - l1_ratio) / 2 * |b|_2^2).

    Examples:
        >>> PenaltyConfig(alpha=1.0)
        PenaltyConfig(alpha=1.0, l1_ratio=1.0, standardize=True)
        >>> PenaltyConfig(alpha=-1.0)
        Traceback (most recent call last):
        healthfusion.errors.ConfigError: alpha must be non-negative, got -1.0
    """

    alpha: float = 0.0
    l1_ratio: float = 1.0
    standardize: bool = True

    def __post_init__(self):
        if self.alpha < 0:
            raise ConfigError(f"alpha must be non-negative, got {self.alpha}")
        if not 0 <= self.l1_ratio <= 1:
            raise ConfigError(f"l1_ratio must lie in [0, 1], got {self.l1_ratio}")

    @property
    def l1(self) -> float:
        return self.alpha * self.l1_ratio

    @property
    def l2(self) -> float:
        return self.alpha * (1.0 - self.l1_ratio)


@dataclass(frozen=True)
class FittedModel:
    """A fitted downstream model.

    Args:
        kind (str): logistic, cox or gaussian_nb.
        feature_names (tuple): column names the model expects.
        coefficients (np.ndarray): original-scale coefficients.
        intercept (float): logistic intercept, None otherwise.
        penalty (PenaltyConfig): penalty of the fit.
        interpretation (pd.DataFrame): per feature estimate,
            standard_error, ci_low, ci_high and selected.
        training_meta (dict): iterations and convergence flag.
        feature_means (np.ndarray): training means used for scaling.
        feature_scales (np.ndarray): training scales, 0 for constant columns.
        parameters (dict): class statistics of naive Bayes.
    """

    kind: str
    feature_names: tuple
    coefficients: np.ndarray
    intercept: Optional[float]
    penalty: Optional[PenaltyConfig]
    interpretation: pd.DataFrame
    training_meta: dict
    feature_means: np.ndarray
    feature_scales: np.ndarray
    parameters: dict = field(default_factory=dict)

    @property
    def selected(self) -> list[str]:
        """Features with a nonzero estimate."""
        return list(self.interpretation.index[self.interpretation["selected"].to_numpy()])

    def to_dict(self) -> dict:
        """JSON-ready summary of the fit."""
        rows = []
        for name, row in self.interpretation.iterrows():
            rows.append(
                {
                    "feature": name,
                    **{key: _json_float(row[key]) for key in ("estimate", "standard_error", "ci_low", "ci_high")},
                    "selected": bool(row["selected"]),
                }
            )
        return {
            "kind": self.kind,
            "penalty": None if self.penalty is None else {
                "alpha": self.penalty.alpha,
                "l1_ratio": self.penalty.l1_ratio,
                "standardize": self.penalty.standardize,
            },
            "intercept": _json_float(self.intercept),
            "features": rows,
            "training": dict(self.training_meta),
        }


def _json_float(value) -> Optional[float]:
    if value is None or not np.isfinite(value):
        return None
    return float(value)


def _matrix(X: Matrix, feature_names: Optional[Sequence[str]] = None) -> tuple[np.ndarray, tuple]:
    """Values and column names, checked against ``feature_names`` when given."""
    if isinstance(X, pd.DataFrame):
        names = tuple(str(column) for column in X.columns)
        values = X.to_numpy(dtype=float)
    else:
        values = np.asarray(X, dtype=float)
        if values.ndim == 1:
            values = values[:, None]
        names = tuple(f"x{column + 1}" for column in range(values.shape[1]))
        if feature_names is not None and len(feature_names) == values.shape[1]:
            names = tuple(feature_names)
    if values.ndim != 2:
        raise SchemaError(f"expected a matrix, got shape {values.shape}")
    if feature_names is not None and names != tuple(feature_names):
        raise SchemaError(f"features {list(names)} do not match the fitted {list(feature_names)}")
    if not np.all(np.isfinite(values)):
        raise DataFormatError("feature matrix holds non-finite values")
    return values, names


def _scaling(values: np.ndarray, standardize: bool) -> tuple[np.ndarray, np.ndarray]:
    """Column means and scales; constant columns get scale 0."""
    means = values.mean(axis=0) if len(values) else np.zeros(values.shape[1])
    scales = values.std(axis=0) if len(values) else np.zeros(values.shape[1])
    constant = scales < CONSTANT_STD
    if not standardize:
        means = np.zeros_like(means)
        scales = np.ones_like(scales)
    scales = np.where(constant, 0.0, scales)
    return means, scales


def _scaled(values: np.ndarray, means: np.ndarray, scales: np.ndarray) -> np.ndarray:
    safe = np.where(scales > 0, scales, 1.0)
    return np.where(scales > 0, (values - means) / safe, 0.0)


class _LogisticLoss:
    """Mean negative log-likelihood; the first coefficient is the intercept."""

    def __init__(self, design: np.ndarray, labels: np.ndarray):
        self.design = np.hstack([np.ones((len(design), 1)), design])
        self.labels = labels.astype(float)

    def value(self, theta: np.ndarray) -> float:
        eta = self.design @ theta
        return float(np.mean(np.logaddexp(0.0, eta) - self.labels * eta))

    def derivatives(self, theta: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        prob = expit(self.design @ theta)
        n_samples = len(self.labels)
        gradient = self.design.T @ (prob - self.labels) / n_samples
        hessian = (self.design * (prob * (1.0 - prob))[:, None]).T @ self.design / n_samples
        return gradient, hessian


class _CoxLoss:
    """Negative Breslow partial log-likelihood, summed over events."""

    def __init__(self, design: np.ndarray, time: np.ndarray, event: np.ndarray):
        order = np.argsort(-time, kind="stable")
        self.design = design[order]
        self.event = event[order].astype(bool)
        descending = -time[order]
        # last row whose time is at least the time of each row
        self.risk_end = np.searchsorted(descending, descending, side="right") - 1

    def _weights(self, theta: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        eta = self.design @ theta
        shift = eta.max() if len(eta) else 0.0
        return eta - shift, np.exp(eta - shift)

    def value(self, theta: np.ndarray) -> float:
        eta, weight = self._weights(theta)
        at_risk = np.cumsum(weight)[self.risk_end]
        return float(-np.sum((eta - np.log(at_risk))[self.event]))

    def derivatives(self, theta: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        _, weight = self._weights(theta)
        design = self.design
        s0 = np.cumsum(weight)[self.risk_end][self.event]
        s1 = np.cumsum(weight[:, None] * design, axis=0)[self.risk_end][self.event]
        s2 = np.cumsum(weight[:, None, None] * design[:, :, None] * design[:, None, :], axis=0)
        s2 = s2[self.risk_end][self.event]
        mean = s1 / s0[:, None]
        gradient = -(design[self.event] - mean).sum(axis=0)
        hessian = (s2 / s0[:, None, None]).sum(axis=0) - mean.T @ mean
        return gradient, hessian


def _coordinate_descent(
    gradient: np.ndarray,
    hessian: np.ndarray,
    theta: np.ndarray,
    penalized: np.ndarray,
    active: np.ndarray,
    l1: float,
) -> np.ndarray:
    """Minimizer of the local quadratic model plus the L1 term."""
    target = theta.copy()
    shift = np.zeros_like(theta)
    coordinates = np.flatnonzero(active)
    for _ in range(INNER_SWEEPS):
        largest = 0.0
        for j in coordinates:
            curvature = hessian[j, j]
            if curvature <= 0:
                continue
            partial = gradient[j] + shift[j] - curvature * (target[j] - theta[j])
            raw = curvature * theta[j] - partial
            if penalized[j]:
                updated = np.sign(raw) * max(abs(raw) - l1, 0.0) / curvature
            else:
                updated = raw / curvature
            change = updated - target[j]
            if change != 0.0:
                shift += hessian[:, j] * change
                target[j] = updated
                largest = max(largest, abs(change))
        if largest < INNER_TOLERANCE:
            break
    return target


def _proximal_newton(
    loss,
    theta: np.ndarray,
    penalized: np.ndarray,
    active: np.ndarray,
    penalty: PenaltyConfig,
    tol: float = TOLERANCE,
    max_iter: int = MAX_ITER,
) -> tuple[np.ndarray, int, bool]:
    """Minimize loss + penalty over the active coordinates.

    Returns:
        np.ndarray: the coefficients.
        int: outer iterations used.
        bool: whether the largest coefficient change fell below ``tol``.
    """
    l1, l2 = penalty.l1, penalty.l2
    ridge = np.where(penalized, l2, 0.0)

    def objective(point):
        return loss.value(point) + 0.5 * np.sum(ridge * point**2) + l1 * np.sum(np.abs(point[penalized]))

    if not active.any():
        return theta, 0, True
    current = objective(theta)
    for iteration in range(1, max_iter + 1):
        gradient, hessian = loss.derivatives(theta)
        gradient = gradient + ridge * theta
        hessian = hessian + np.diag(ridge)
        target = _coordinate_descent(gradient, hessian, theta, penalized, active, l1)
        step = target - theta
        if np.max(np.abs(step)) < tol:
            return target, iteration, True
        decrease = gradient @ step + l1 * (np.sum(np.abs(target[penalized])) - np.sum(np.abs(theta[penalized])))
        size = 1.0
        while True:
            candidate = theta + size * step
            value = objective(candidate)
            if value <= current + ARMIJO * size * decrease:
                break
            size /= 2.0
            if size < MIN_STEP:
                logger.debug("line search stalled at iteration %d", iteration)
                return theta, iteration, bool(np.max(np.abs(step)) < np.sqrt(tol))
        theta, current = candidate, value
        logger.debug("iteration %d: objective %.12g, step %.3g", iteration, current, size)
        if np.max(np.abs(size * step)) < tol:
            return theta, iteration, True
    logger.warning("solver did not converge in %d iterations", max_iter)
    return theta, max_iter, False


def _interpretation(
    names: Sequence[str],
    estimates: np.ndarray,
    errors: Optional[np.ndarray],
) -> pd.DataFrame:
    frame = pd.DataFrame({"estimate": estimates}, index=pd.Index(list(names), name="feature"))
    if errors is None:
        errors = np.full(len(estimates), np.nan)
    quantile = stats.norm.ppf(0.5 + CI_LEVEL / 2)
    frame["standard_error"] = errors
    frame["ci_low"] = estimates - quantile * errors
    frame["ci_high"] = estimates + quantile * errors
    frame["selected"] = estimates != 0
    return frame


def _wald_errors(information: np.ndarray, keep: np.ndarray) -> np.ndarray:
    """Standard errors from the observed information of the kept coordinates."""
    errors = np.full(len(keep), np.nan)
    if keep.any():
        covariance = linalg.pinvh(information[np.ix_(keep, keep)])
        errors[keep] = np.sqrt(np.clip(np.diag(covariance), 0.0, None))
    return errors


def _binary_labels(y) -> np.ndarray:
    labels = np.asarray(y)
    if labels.ndim != 1:
        raise SchemaError(f"labels must be a vector, got shape {labels.shape}")
    if not np.isin(labels, (0, 1)).all():
        raise DataFormatError("labels must be 0 or 1")
    if len(np.unique(labels)) < 2:
        raise DegenerateLabelsError(f"labels hold a single class ({len(labels)} samples)")
    return labels.astype(int)


def logistic_l1_fit(X: Matrix, y, penalty: Optional[PenaltyConfig] = None) -> FittedModel:
    """Penalized logistic regression with an unpenalized intercept.

    Minimizes the mean negative log-likelihood plus the elastic-net penalty
    (pure L1 by default) on standardized features.

    Args:
        X: N x D features, a matrix or a DataFrame.
        y: binary labels.
        penalty (PenaltyConfig): defaults to no penalty.

    Returns:
        FittedModel: kind logistic. Standard errors and Wald intervals are
        reported only without a penalty.

    Raises:
        DegenerateLabelsError: ``y`` holds one class.

    Examples:
        >>> rng = np.random.default_rng(0)
        >>> X = rng.normal(size=(10, 2))
        >>> y = np.array([1, 1, 1, 0, 0, 0, 0, 0, 0, 0])
        >>> heavy = logistic_l1_fit(X, y, PenaltyConfig(alpha=1e6))
        >>> heavy.coefficients.tolist(), round(heavy.intercept, 4)
        ([0.0, 0.0], -0.8473)

        Without a penalty the fit matches plain Newton-Raphson:

        >>> anchors = np.array([[1, 1], [1, -1], [-1, 1], [-1, -1]] * 2, dtype=float)
        >>> X = np.vstack([anchors, rng.normal(size=(12, 2))])
        >>> y = np.r_[[0, 0, 0, 0, 1, 1, 1, 1], (rng.random(12) < expit(X[8:, 0])).astype(int)]
        >>> design = np.column_stack([np.ones(20), X])
        >>> beta = np.zeros(3)
        >>> for _ in range(50):
        ...     prob = expit(design @ beta)
        ...     beta = beta + np.linalg.solve((design * (prob * (1 - prob))[:, None]).T @ design,
        ...                                   design.T @ (y - prob))
        >>> fit = logistic_l1_fit(X, y)
        >>> bool(np.allclose(np.r_[fit.intercept, fit.coefficients], beta, atol=1e-5))
        True
        >>> fit.training_meta["converged"], bool(fit.interpretation.standard_error.notna().all())
        (True, True)
        >>> constant = logistic_l1_fit(np.column_stack([X, np.full(20, 3.0)]), y, PenaltyConfig(alpha=0.01))
        >>> float(constant.coefficients[2])
        0.0
        >>> logistic_l1_fit(X, np.zeros(20))
        Traceback (most recent call last):
        healthfusion.errors.DegenerateLabelsError: labels hold a single class (20 samples)
    """
    penalty = penalty or PenaltyConfig()
    values, names = _matrix(X)
    labels = _binary_labels(y)
    if len(labels) != len(values):
        raise SchemaError(f"{len(values)} rows but {len(labels)} labels")
    means, scales = _scaling(values, penalty.standardize)
    scaled = _scaled(values, means, scales)
    loss = _LogisticLoss(scaled, labels)
    prevalence = labels.mean()
    theta = np.zeros(len(names) + 1)
    theta[0] = np.log(prevalence / (1.0 - prevalence))
    penalized = np.r_[False, np.ones(len(names), dtype=bool)]
    active = np.r_[True, scales > 0]
    theta, iterations, converged = _proximal_newton(loss, theta, penalized, active, penalty)
    safe = np.where(scales > 0, scales, 1.0)
    coefficients = np.where(scales > 0, theta[1:] / safe, 0.0)
    intercept = float(theta[0] - np.sum(coefficients * means))
    errors = None
    if penalty.alpha == 0:
        _, hessian = _LogisticLoss(values, labels).derivatives(np.r_[intercept, coefficients])
        errors = _wald_errors(hessian * len(labels), active)[1:]
    model = FittedModel(
        kind="logistic",
        feature_names=names,
        coefficients=coefficients,
        intercept=intercept,
        penalty=penalty,
        interpretation=_interpretation(names, coefficients, errors),
        training_meta={"iterations": iterations, "converged": converged},
        feature_means=means,
        feature_scales=scales,
    )
    logger.debug("logistic fit: %d of %d features selected", len(model.selected), len(names))
    return model


def logistic_predict_proba(model: FittedModel, X: Matrix) -> np.ndarray:
    """Probability of the positive class.

    Examples:
        >>> zero = FittedModel("logistic", ("a",), np.zeros(1), np.log(3 / 7), None,
        ...                    pd.DataFrame(), {}, np.zeros(1), np.ones(1))
        >>> np.round(logistic_predict_proba(zero, np.zeros((2, 1))), 6).tolist()
        [0.3, 0.3]
        >>> logistic_predict_proba(zero, pd.DataFrame({"b": [1.0]}))
        Traceback (most recent call last):
        healthfusion.errors.SchemaError: features ['b'] do not match the fitted ['a']
    """
    values, _ = _matrix(X, model.feature_names)
    return expit(model.intercept + values @ model.coefficients)


def _survival_outcome(time, event, n_rows: int) -> tuple[np.ndarray, np.ndarray]:
    time = np.asarray(time, dtype=float)
    event = np.asarray(event).astype(int)
    if time.shape != (n_rows,) or event.shape != (n_rows,):
        raise SchemaError(f"{n_rows} rows but {len(time)} times and {len(event)} event flags")
    if not np.all(np.isfinite(time)) or np.any(time <= 0):
        raise DataFormatError("survival times must be positive")
    if not np.isin(event, (0, 1)).all():
        raise DataFormatError("event indicators must be 0 or 1")
    if event.sum() == 0:
        raise NoEventsError(f"no events among {n_rows} subjects")
    return time, event


def coxph_elasticnet_fit(X: Matrix, time, event, penalty: Optional[PenaltyConfig] = None) -> FittedModel:
    """Elastic-net Cox proportional hazards with Breslow ties.

    Args:
        X: N x D covariates.
        time: positive follow-up times.
        event: 1 for an observed event, 0 for censoring.
        penalty (PenaltyConfig): defaults to no penalty with l1_ratio 0.5.

    Returns:
        FittedModel: kind cox, no intercept.

    Raises:
        NoEventsError: every subject is censored.

    Examples:
        >>> x = np.array([[0.0], [1.0], [0.0]])
        >>> fit = coxph_elasticnet_fit(x, [1, 2, 3], [1, 1, 1])
        >>> round(float(fit.coefficients[0]), 5)
        0.34657
        >>> float(coxph_elasticnet_fit(x, [1, 2, 3], [1, 1, 1], PenaltyConfig(1e6, 0.5)).coefficients[0])
        0.0
        >>> float(coxph_elasticnet_fit(np.ones((3, 1)), [1, 2, 3], [1, 1, 1]).coefficients[0])
        0.0

        The penalty acts on the summed partial log-likelihood. Its score,
        computed risk set by risk set on the standardized covariates, equals
        alpha on active coefficients and stays within alpha elsewhere:

        >>> rng = np.random.default_rng(7)
        >>> X = rng.normal(size=(60, 3))
        >>> time = rng.exponential(np.exp(-X[:, 0]))
        >>> lasso = coxph_elasticnet_fit(X, time, np.ones(60), PenaltyConfig(0.5, 1.0))
        >>> z = (X - X.mean(axis=0)) / X.std(axis=0)
        >>> beta = lasso.coefficients * X.std(axis=0)
        >>> score = np.zeros(3)
        >>> for row in range(60):
        ...     at_risk = time >= time[row]
        ...     weight = np.exp(z[at_risk] @ beta)
        ...     score += z[row] - weight @ z[at_risk] / weight.sum()
        >>> active = beta != 0
        >>> bool(active[0]), bool(np.allclose(score[active], 0.5 * np.sign(beta[active]), rtol=0, atol=1e-6))
        (True, True)
        >>> bool(np.all(np.abs(score[~active]) <= 0.5 + 1e-6))
        True
        >>> coxph_elasticnet_fit(x, [1, 2, 3], [0, 0, 0])
        Traceback (most recent call last):
        healthfusion.errors.NoEventsError: no events among 3 subjects
    """
    penalty = penalty or PenaltyConfig(alpha=0.0, l1_ratio=0.5)
    values, names = _matrix(X)
    time, event = _survival_outcome(time, event, len(values))
    means, scales = _scaling(values, penalty.standardize)
    scaled = _scaled(values, means, scales)
    active = scales > 0
    theta, iterations, converged = _proximal_newton(
        _CoxLoss(scaled, time, event), np.zeros(len(names)), np.ones(len(names), dtype=bool), active, penalty
    )
    safe = np.where(scales > 0, scales, 1.0)
    coefficients = np.where(active, theta / safe, 0.0)
    errors = None
    if penalty.alpha == 0:
        _, hessian = _CoxLoss(values, time, event).derivatives(coefficients)
        errors = _wald_errors(hessian, active)
    model = FittedModel(
        kind="cox",
        feature_names=names,
        coefficients=coefficients,
        intercept=None,
        penalty=penalty,
        interpretation=_interpretation(names, coefficients, errors),
        training_meta={"iterations": iterations, "converged": converged},
        feature_means=means,
        feature_scales=scales,
    )
    logger.debug("cox fit: %d of %d features selected", len(model.selected), len(names))
    return model


def coxph_risk_score(model: FittedModel, X: Matrix) -> np.ndarray:
    """Linear predictor X b; higher means higher hazard.

    Examples:
        >>> x = np.array([[0.0], [1.0], [0.0], [2.0]])
        >>> fit = coxph_elasticnet_fit(x, [1, 2, 3, 4], [1, 1, 1, 0])
        >>> shifted = coxph_elasticnet_fit(x + 5.0, [1, 2, 3, 4], [1, 1, 1, 0])
        >>> bool((np.argsort(coxph_risk_score(fit, x), kind="stable") ==
        ...        np.argsort(coxph_risk_score(shifted, x + 5.0), kind="stable")).all())
        True
    """
    values, _ = _matrix(X, model.feature_names)
    return values @ model.coefficients


def kkt_residual(model: FittedModel, X: Matrix, outcome) -> float:
    """Largest violation of the optimality conditions on the standardized scale.

    Args:
        model (FittedModel): logistic or cox fit.
        X: the training features.
        outcome: labels for logistic, (time, event) for cox.

    Examples:
        >>> rng = np.random.default_rng(4)
        >>> X = rng.normal(size=(60, 4))
        >>> y = (rng.random(60) < expit(X[:, 0] - X[:, 1])).astype(int)
        >>> fit = logistic_l1_fit(X, y, PenaltyConfig(alpha=0.05))
        >>> kkt_residual(fit, X, y) < 1e-6
        True
        >>> time = rng.exponential(np.exp(-X[:, 0]))
        >>> cox = coxph_elasticnet_fit(X, time, np.ones(60), PenaltyConfig(0.05, 0.5))
        >>> kkt_residual(cox, X, (time, np.ones(60))) < 1e-6
        True
    """
    values, _ = _matrix(X, model.feature_names)
    scaled = _scaled(values, model.feature_means, model.feature_scales)
    penalty = model.penalty or PenaltyConfig()
    beta = model.coefficients * model.feature_scales
    active = model.feature_scales > 0
    if model.kind == "logistic":
        loss = _LogisticLoss(scaled, _binary_labels(outcome))
        theta = np.r_[model.intercept + np.sum(model.coefficients * model.feature_means), beta]
        penalized = np.r_[False, np.ones(len(beta), dtype=bool)]
        active = np.r_[True, active]
    elif model.kind == "cox":
        time, event = _survival_outcome(*outcome, len(values))
        loss = _CoxLoss(scaled, time, event)
        theta = beta
        penalized = np.ones(len(beta), dtype=bool)
    else:
        raise ConfigError(f"no optimality conditions for {model.kind!r} models")
    gradient, _ = loss.derivatives(theta)
    gradient = gradient + np.where(penalized, penalty.l2, 0.0) * theta
    residual = np.abs(gradient)
    shrunk = penalized & (theta == 0)
    moving = penalized & (theta != 0)
    residual[shrunk] = np.maximum(np.abs(gradient[shrunk]) - penalty.l1, 0.0)
    residual[moving] = np.abs(gradient[moving] + penalty.l1 * np.sign(theta[moving]))
    return float(np.max(residual[active], initial=0.0))


def gaussian_nb_fit(X: Matrix, y) -> FittedModel:
    """Per-class Gaussian feature densities with empirical class priors.

    Variances are smoothed by 1e-9 times the largest feature variance.

    Raises:
        DegenerateLabelsError: ``y`` holds one class.
    """
    values, names = _matrix(X)
    labels = _binary_labels(y)
    if len(labels) != len(values):
        raise SchemaError(f"{len(values)} rows but {len(labels)} labels")
    smoothing = NB_SMOOTHING * float(np.max(values.var(axis=0), initial=0.0)) or NB_SMOOTHING
    priors = np.array([np.mean(labels == 0), np.mean(labels == 1)])
    class_means = np.vstack([values[labels == value].mean(axis=0) for value in (0, 1)])
    class_vars = np.vstack([values[labels == value].var(axis=0) for value in (0, 1)]) + smoothing
    difference = class_means[1] - class_means[0]
    return FittedModel(
        kind="gaussian_nb",
        feature_names=names,
        coefficients=np.zeros(0),
        intercept=None,
        penalty=None,
        interpretation=_interpretation(names, difference, None),
        training_meta={"iterations": 1, "converged": True},
        feature_means=values.mean(axis=0),
        feature_scales=values.std(axis=0),
        parameters={"priors": priors, "means": class_means, "variances": class_vars},
    )


def gaussian_nb_predict_proba(model: FittedModel, X: Matrix) -> np.ndarray:
    """Posterior probability of the positive class."""
    values, _ = _matrix(X, model.feature_names)
    means = model.parameters["means"]
    variances = model.parameters["variances"]
    joint = np.log(model.parameters["priors"])[None, :] - 0.5 * np.sum(np.log(2.0 * np.pi * variances), axis=1)
    joint = joint - 0.5 * np.sum((values[:, None, :] - means[None]) ** 2 / variances[None], axis=2)
    return np.exp(joint[:, 1] - logsumexp(joint, axis=1))


def gaussian_nb_fit_predict(X_train: Matrix, y_train, X_test: Matrix) -> np.ndarray:
    """Fit naive Bayes on the training rows and score the test rows.

    Examples:
        >>> symmetric = gaussian_nb_fit_predict([[-1.0], [-3.0], [1.0], [3.0]], [0, 0, 1, 1], [[0.0]])
        >>> np.round(symmetric, 6).tolist()
        [0.5]
        >>> rng = np.random.default_rng(0)
        >>> X = np.r_[rng.normal(0, 1, 50), rng.normal(10, 1, 50)][:, None]
        >>> bool(gaussian_nb_fit_predict(X, np.repeat([0, 1], 50), [[10.0]])[0] > 0.999)
        True
        >>> same = np.tile([[0.0], [1.0], [2.0]], (2, 1))
        >>> np.round(gaussian_nb_fit_predict(np.r_[same, same[:3]], [0] * 6 + [1] * 3, [[1.5]]), 6).tolist()
        [0.333333]
    """
    return gaussian_nb_predict_proba(gaussian_nb_fit(X_train, y_train), X_test)
