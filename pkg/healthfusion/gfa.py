"""Group factor analysis with missing views.

Every view is modelled as Y_i = Z W_iᵀ + noise with per-feature Gaussian
noise precisions. Loadings carry per-view, per-factor ARD precisions so
superfluous factors shrink away. Inference is mean-field variational Bayes;
a (sample, view) pair that is not observed simply drops out of the
likelihood, so factors exist for every sample that observes at least one
view. That is the latent imputation of missing views.
"""
import logging
from dataclasses import dataclass
from typing import Optional, Sequence
import numpy as np
from scipy import linalg
from scipy.special import digamma, gammaln

from healthfusion.errors import InsufficientSamplesError, MissingAllViewsError, SchemaError
from healthfusion.integration import (
    ComponentLabel,
    IntegrationConfig,
    MergedRepresentation,
    build_representation,
    check_aligned,
    explained_variance_table,
    order_and_sign,
    resolve_ranks,
)
from healthfusion.tabular import ModalityDataset

logger = logging.getLogger(__name__)

PRIOR_SHAPE = 1e-3
PRIOR_RATE = 1e-3
MIN_VARIANCE = 1e-6
NUMERIC_RANK = 1e-12


@dataclass(frozen=True)
class GfaModel:
    """Fitted group factor analysis.

    Args:
        sample_ids (tuple): training ids.
        view_names (tuple): view order.
        feature_names (tuple[tuple]): features per view.
        means (tuple[np.ndarray]): per-view feature means over observed rows.
        factors (np.ndarray): N x K posterior mean factors Z.
        loadings (tuple[np.ndarray]): D_i x K posterior mean loadings W_i.
        noise_variances (tuple[np.ndarray]): 1 / E[tau] per feature.
        factor_precisions (np.ndarray): views x K, E[alpha].
        elbo_trace (tuple[float]): evidence lower bound after every pass.
        active_factors (np.ndarray): which of the initial factors survived pruning.
        converged (bool): the relative ELBO change fell below the tolerance.
        observed_mask (np.ndarray): training samples x views.
        precision_terms (tuple[np.ndarray]): K x K, sum_d E[tau_d] E[w_d w_dᵀ].
        data_weights (tuple[np.ndarray]): D_i x K, E[tau] * E[W_i].
    """

    sample_ids: tuple
    view_names: tuple
    feature_names: tuple
    means: tuple
    factors: np.ndarray
    loadings: tuple
    noise_variances: tuple
    factor_precisions: np.ndarray
    elbo_trace: tuple
    active_factors: np.ndarray
    converged: bool
    observed_mask: np.ndarray
    precision_terms: tuple
    data_weights: tuple

    @property
    def n_factors(self) -> int:
        """Number of active factors K."""
        return self.factors.shape[1]

    @property
    def labels(self) -> tuple:
        """Factor1 ... FactorK."""
        return tuple(ComponentLabel("factor", k + 1) for k in range(self.n_factors))

    @property
    def scores(self) -> np.ndarray:
        """The factors."""
        return self.factors

    def view_weights(self) -> list[np.ndarray]:
        """Loadings of every view."""
        return list(self.loadings)

    def centered(self, datasets: Sequence[ModalityDataset], observed_mask: Optional[np.ndarray] = None):
        """Views centered with the training means, unobserved rows zeroed."""
        if observed_mask is None:
            if datasets[0].n_samples == len(self.sample_ids):
                observed_mask = self.observed_mask
            else:
                observed_mask = np.ones((datasets[0].n_samples, len(datasets)), dtype=bool)
        values = [
            np.where(observed_mask[:, [position]], dataset.values - mean, 0.0)
            for position, (dataset, mean) in enumerate(zip(datasets, self.means))
        ]
        return values, [observed_mask[:, position] for position in range(len(datasets))]

    def project(self, datasets: Sequence[ModalityDataset], observed_mask=None) -> np.ndarray:
        """Posterior mean factors of new samples from their observed views."""
        if observed_mask is None:
            observed_mask = np.ones((datasets[0].n_samples, len(datasets)), dtype=bool)
        return gfa_impute_latent(self, datasets, observed_mask)


def _posterior_factors(
    precision_terms: Sequence[np.ndarray],
    data_weights: Sequence[np.ndarray],
    views: Sequence[np.ndarray],
    mask: np.ndarray,
) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    """q(z_n) for every sample, grouped by observation pattern.

    Unobserved rows of ``views`` must be zero.

    Returns:
        np.ndarray: N x K means.
        np.ndarray: patterns x K x K covariances.
        np.ndarray: patterns x views observation patterns.
        np.ndarray: pattern index of every sample.
    """
    n_factors = precision_terms[0].shape[0]
    patterns, index = np.unique(mask, axis=0, return_inverse=True)
    index = index.ravel()
    rhs = sum(view @ weights for view, weights in zip(views, data_weights))
    means = np.zeros((mask.shape[0], n_factors))
    covariances = np.zeros((len(patterns), n_factors, n_factors))
    for position, pattern in enumerate(patterns):
        precision = np.eye(n_factors)
        for term, seen in zip(precision_terms, pattern):
            if seen:
                precision = precision + term
        covariance = linalg.inv(precision, check_finite=False)
        covariance = (covariance + covariance.T) / 2.0
        rows = index == position
        means[rows] = rhs[rows] @ covariance
        covariances[position] = covariance
    return means, covariances, patterns, index


def _gamma_bound(shape: np.ndarray, rate: np.ndarray) -> float:
    """E[log p] - E[log q] of Gamma variables under the Gamma(1e-3, 1e-3) prior."""
    expected_log = digamma(shape) - np.log(rate)
    expected = shape / rate
    prior = (
        PRIOR_SHAPE * np.log(PRIOR_RATE)
        - gammaln(PRIOR_SHAPE)
        + (PRIOR_SHAPE - 1.0) * expected_log
        - PRIOR_RATE * expected
    )
    entropy = shape - np.log(rate) + gammaln(shape) + (1.0 - shape) * digamma(shape)
    return float(np.sum(prior + entropy))


class _VariationalGfa:
    """Mean-field state: q(Z) q(W) q(alpha) q(tau)."""

    def __init__(self, views: list[np.ndarray], mask: np.ndarray, n_factors: int, rng: np.random.Generator):
        self.views = views
        self.mask = mask
        self.n_samples = mask.shape[0]
        self.n_observed = mask.sum(axis=0)
        self.square_sums = [np.sum(view**2, axis=0) for view in views]

        stacked = np.hstack(views)
        left, singular, _ = linalg.svd(stacked, full_matrices=False)
        rank = int(np.sum(singular > NUMERIC_RANK * singular[0])) if singular.size and singular[0] > 0 else 0
        take = min(n_factors, rank)
        factors = np.zeros((self.n_samples, n_factors))
        factors[:, :take] = left[:, :take] * np.sqrt(self.n_samples)
        factors[:, take:] = rng.standard_normal((self.n_samples, n_factors - take))
        self.factor_means = factors
        self.patterns, self.pattern_index = np.unique(mask, axis=0, return_inverse=True)
        self.pattern_index = self.pattern_index.ravel()
        self.factor_covariances = np.zeros((len(self.patterns), n_factors, n_factors))

        self.alpha_shape = [PRIOR_SHAPE + view.shape[1] / 2.0 for view in views]
        self.alpha_rate = [np.full(n_factors, shape) for shape in self.alpha_shape]
        self.tau_shape = [PRIOR_SHAPE + count / 2.0 for count in self.n_observed]
        self.tau_rate = [
            shape * np.maximum(square / max(count, 1), MIN_VARIANCE)
            for shape, square, count in zip(self.tau_shape, self.square_sums, self.n_observed)
        ]
        self.loading_means = [np.zeros((view.shape[1], n_factors)) for view in views]
        self.loading_covariances = [np.zeros((view.shape[1], n_factors, n_factors)) for view in views]
        self.loading_logdets = [np.zeros(view.shape[1]) for view in views]
        self.second_moments = [np.zeros((n_factors, n_factors)) for _ in views]
        self.cross_moments = [np.zeros((view.shape[1], n_factors)) for view in views]

    @property
    def n_factors(self) -> int:
        return self.factor_means.shape[1]

    def expected_tau(self, position: int) -> np.ndarray:
        return self.tau_shape[position] / self.tau_rate[position]

    def expected_alpha(self, position: int) -> np.ndarray:
        return self.alpha_shape[position] / self.alpha_rate[position]

    def precision_terms(self) -> list[np.ndarray]:
        terms = []
        for position, (means, covariances) in enumerate(zip(self.loading_means, self.loading_covariances)):
            tau = self.expected_tau(position)
            terms.append(np.einsum("d,dkl->kl", tau, covariances) + (means * tau[:, None]).T @ means)
        return terms

    def data_weights(self) -> list[np.ndarray]:
        return [means * self.expected_tau(position)[:, None] for position, means in enumerate(self.loading_means)]

    def update_factors(self) -> None:
        means, covariances, _, _ = _posterior_factors(
            self.precision_terms(), self.data_weights(), self.views, self.mask
        )
        self.factor_means = means
        self.factor_covariances = covariances

    def update_loadings(self) -> None:
        counts = np.bincount(self.pattern_index, minlength=len(self.patterns))
        for position, view in enumerate(self.views):
            observed = self.mask[:, position]
            part = self.factor_means[observed]
            weights = counts * self.patterns[:, position]
            second = part.T @ part + np.einsum("p,pkl->kl", weights, self.factor_covariances)
            cross = view.T @ self.factor_means
            tau = self.expected_tau(position)
            precision = np.diag(self.expected_alpha(position))[None] + tau[:, None, None] * second[None]
            cholesky = np.linalg.cholesky(precision)
            covariances = np.linalg.inv(precision)
            covariances = (covariances + np.swapaxes(covariances, 1, 2)) / 2.0
            self.loading_covariances[position] = covariances
            self.loading_means[position] = tau[:, None] * np.einsum("dkl,dl->dk", covariances, cross)
            self.loading_logdets[position] = -2.0 * np.sum(np.log(np.diagonal(cholesky, axis1=1, axis2=2)), axis=1)
            self.second_moments[position] = second
            self.cross_moments[position] = cross

    def loading_squares(self, position: int) -> np.ndarray:
        """E[w_dk²], D_i x K."""
        diagonal = np.diagonal(self.loading_covariances[position], axis1=1, axis2=2)
        return diagonal + self.loading_means[position] ** 2

    def update_ard(self) -> None:
        for position in range(len(self.views)):
            self.alpha_rate[position] = PRIOR_RATE + 0.5 * self.loading_squares(position).sum(axis=0)

    def expected_residuals(self, position: int) -> np.ndarray:
        """sum over observed rows of E[(y_nd - w_dᵀ z_n)²] per feature."""
        means = self.loading_means[position]
        second = self.second_moments[position]
        fitted = np.einsum("dkl,kl->d", self.loading_covariances[position], second)
        fitted += np.einsum("dk,kl,dl->d", means, second, means)
        residuals = self.square_sums[position] - 2.0 * np.sum(means * self.cross_moments[position], axis=1) + fitted
        return np.maximum(residuals, 0.0)

    def update_noise(self) -> None:
        for position in range(len(self.views)):
            self.tau_rate[position] = PRIOR_RATE + 0.5 * self.expected_residuals(position)

    def elbo(self) -> float:
        total = 0.0
        n_factors = self.n_factors
        for position in range(len(self.views)):
            tau_shape, tau_rate = self.tau_shape[position], self.tau_rate[position]
            expected_tau = tau_shape / tau_rate
            expected_log_tau = digamma(tau_shape) - np.log(tau_rate)
            count = self.n_observed[position]
            total += np.sum(
                0.5 * count * (expected_log_tau - np.log(2.0 * np.pi))
                - 0.5 * expected_tau * self.expected_residuals(position)
            )
            alpha_shape, alpha_rate = self.alpha_shape[position], self.alpha_rate[position]
            expected_alpha = alpha_shape / alpha_rate
            expected_log_alpha = digamma(alpha_shape) - np.log(alpha_rate)
            n_features = self.views[position].shape[1]
            total += 0.5 * n_features * np.sum(expected_log_alpha)
            total -= 0.5 * np.sum(self.loading_squares(position) * expected_alpha)
            total += 0.5 * np.sum(self.loading_logdets[position]) + 0.5 * n_features * n_factors
            total += _gamma_bound(np.full(n_factors, alpha_shape), alpha_rate)
            total += _gamma_bound(np.full(n_features, tau_shape), tau_rate)
        counts = np.bincount(self.pattern_index, minlength=len(self.patterns))
        traces = np.trace(self.factor_covariances, axis1=1, axis2=2)
        logdets = np.linalg.slogdet(self.factor_covariances)[1]
        total -= 0.5 * (np.sum(counts * traces) + np.sum(self.factor_means**2))
        total += 0.5 * np.sum(counts * logdets) + 0.5 * self.n_samples * n_factors
        return float(total)

    def factor_r2(self, view_names: Sequence[str]) -> np.ndarray:
        """Variance explained, views x factors."""
        labels = [ComponentLabel("factor", k + 1) for k in range(self.n_factors)]
        table = explained_variance_table(
            self.factor_means,
            self.loading_means,
            self.views,
            [self.mask[:, position] for position in range(len(self.views))],
            labels,
            view_names,
        )
        return table["r2"].to_numpy().reshape(self.n_factors, len(self.views)).T

    def restrict(self, keep: np.ndarray) -> None:
        """Drop the factors where ``keep`` is False."""
        self.factor_means = self.factor_means[:, keep]
        self.factor_covariances = self.factor_covariances[:, keep][:, :, keep]
        self.alpha_rate = [rate[keep] for rate in self.alpha_rate]
        self.loading_means = [means[:, keep] for means in self.loading_means]
        self.loading_covariances = [covariances[:, keep][:, :, keep] for covariances in self.loading_covariances]

    def reorder(self, order: np.ndarray, signs: np.ndarray) -> None:
        """Permute and flip factors; loadings follow."""
        flip = np.outer(signs, signs)
        self.factor_means = self.factor_means[:, order] * signs
        self.factor_covariances = self.factor_covariances[:, order][:, :, order] * flip
        self.alpha_rate = [rate[order] for rate in self.alpha_rate]
        self.loading_means = [means[:, order] * signs for means in self.loading_means]
        self.loading_covariances = [
            covariances[:, order][:, :, order] * flip for covariances in self.loading_covariances
        ]


def _centered_views(datasets: Sequence[ModalityDataset], mask: np.ndarray) -> tuple[list, list]:
    means, views = [], []
    for position, dataset in enumerate(datasets):
        observed = mask[:, position]
        mean = dataset.values[observed].mean(axis=0)
        means.append(mean)
        views.append(np.where(observed[:, None], dataset.values - mean, 0.0))
    return means, views


def _check_mask(sample_ids: Sequence[str], n_views: int, observed_mask: Optional[np.ndarray]) -> np.ndarray:
    if observed_mask is None:
        return np.ones((len(sample_ids), n_views), dtype=bool)
    mask = np.asarray(observed_mask, dtype=bool)
    if mask.shape != (len(sample_ids), n_views):
        raise SchemaError(f"observed mask has shape {mask.shape}, expected {(len(sample_ids), n_views)}")
    empty = np.flatnonzero(~mask.any(axis=1))
    if len(empty):
        raise MissingAllViewsError(f"sample {sample_ids[empty[0]]!r} observes no view")
    return mask


def gfa_fit(
    datasets: Sequence[ModalityDataset],
    config: IntegrationConfig,
    observed_mask: Optional[np.ndarray] = None,
) -> tuple[GfaModel, MergedRepresentation]:
    """Fit group factor analysis by variational Bayes.

    Factors start from the scores of the concatenated views, padded with
    seeded noise. Updates run Z, W, alpha, tau until the relative ELBO change
    drops below ``config.gfa_tolerance`` or ``config.gfa_max_iter`` passes.
    Factors explaining less than ``config.prune_fraction`` of the variance in
    every view are then pruned once (at least one factor stays) and the
    loadings, precisions and factors are refitted.

    Args:
        datasets (Sequence[ModalityDataset]): views over the same ids;
            unobserved rows may hold any value.
        config (IntegrationConfig): method gfa. ``max_factors`` is the initial
            number of factors unless ranks or a variance fraction are set,
            in which case their sum is used.
        observed_mask (np.ndarray): samples x views, True where observed.
            Defaults to all observed.

    Returns:
        GfaModel: the fitted model.
        MergedRepresentation: the factors, labelled Factor1 ... FactorK.

    Raises:
        MissingAllViewsError: a sample observes no view.
        InsufficientSamplesError: a view is observed by fewer samples than
            there are initial factors.

    Examples:
        A noiseless rank-one view keeps one factor and is reconstructed:

        >>> rng = np.random.default_rng(0)
        >>> z = rng.normal(size=100)
        >>> view = ModalityDataset("v", [f"s{i}" for i in range(100)], list("abcde"),
        ...                        np.outer(z - z.mean(), rng.normal(size=5)))
        >>> model, merged = gfa_fit([view], IntegrationConfig("gfa", max_factors=3, prune_fraction=0.05))
        >>> model.n_factors, merged.column_names
        (1, ['Factor1'])
        >>> centered = model.centered([view])[0][0]
        >>> bool(np.linalg.norm(centered - model.factors @ model.loadings[0].T) / np.linalg.norm(centered) < 1e-3)
        True
        >>> trace = np.array(model.elbo_trace)
        >>> bool(np.diff(trace).min(initial=0.0) >= -1e-6)
        True
        >>> model.converged
        True

        Training factors are the posterior means given the observed views,
        and an all-true mask is the same fit as no mask:

        >>> bool(np.allclose(gfa_impute_latent(model, [view]), model.factors))
        True
        >>> masked, _ = gfa_fit([view], IntegrationConfig("gfa", max_factors=3), np.ones((100, 1), dtype=bool))
        >>> bool(np.array_equal(masked.factors, model.factors))
        True

        With as many factors as the planted rank and no pruning the fit is as
        good as a truncated SVD, whatever the scale of the view:

        >>> from healthfusion.synthetic import planted_views
        >>> worst = 0.0
        >>> for rank in (1, 2, 3):
        ...     for seed in range(3):
        ...         data = planted_views(1000, [20], joint_rank=rank, individual_rank=0, noise=0.05, seed=seed).datasets[0]
        ...         settings = IntegrationConfig("gfa", max_factors=rank, prune_fraction=0.0, seed=seed)
        ...         errors = []
        ...         for scale in (1.0, 10.0):
        ...             fitted, _ = gfa_fit([data.with_values(data.values * scale)], settings)
        ...             values = fitted.centered([data.with_values(data.values * scale)])[0][0]
        ...             errors.append(np.linalg.norm(values - fitted.factors @ fitted.loadings[0].T) / np.linalg.norm(values))
        ...         singular = np.linalg.svd(values, compute_uv=False)
        ...         svd_error = np.linalg.norm(singular[rank:]) / np.linalg.norm(values)
        ...         worst = max(worst, errors[1] / svd_error - 1.0, abs(errors[0] - errors[1]))
        >>> worst < 1e-3
        True

        Samples that observe nothing cannot be placed:

        >>> gfa_fit([view], IntegrationConfig("gfa"), np.zeros((100, 1), dtype=bool))
        Traceback (most recent call last):
        healthfusion.errors.MissingAllViewsError: sample 's0' observes no view
    """
    sample_ids = check_aligned(datasets)
    mask = _check_mask(sample_ids, len(datasets), observed_mask)
    if config.per_view_ranks is not None or config.variance_fraction is not None:
        observed = [dataset.subset([sample_ids[row] for row in np.flatnonzero(mask[:, position])])
                    for position, dataset in enumerate(datasets)]
        n_factors = sum(resolve_ranks(observed, config))
    else:
        n_factors = config.max_factors
    for position, dataset in enumerate(datasets):
        count = int(mask[:, position].sum())
        if count < n_factors:
            raise InsufficientSamplesError(
                f"{dataset.name}: observed by {count} samples, fewer than the {n_factors} factors"
            )
    view_names = [dataset.name for dataset in datasets]
    means, views = _centered_views(datasets, mask)
    state = _VariationalGfa(views, mask, n_factors, np.random.default_rng(config.seed))
    state.update_loadings()
    state.update_ard()
    state.update_noise()

    trace = []
    converged = False
    for iteration in range(config.gfa_max_iter):
        state.update_factors()
        state.update_loadings()
        state.update_ard()
        state.update_noise()
        trace.append(state.elbo())
        if iteration % 100 == 0:
            logger.debug("gfa: iteration %d, elbo %.6f", iteration, trace[-1])
        if len(trace) > 1 and abs(trace[-1] - trace[-2]) < config.gfa_tolerance * abs(trace[-2]):
            converged = True
            break
    if not converged:
        logger.warning("gfa: no convergence after %d iterations", config.gfa_max_iter)

    r2 = state.factor_r2(view_names)
    keep = r2.max(axis=0) >= config.prune_fraction
    if not keep.any():
        keep[np.argmax(r2.max(axis=0))] = True
    state.restrict(keep)
    state.update_loadings()
    state.update_ard()
    state.update_noise()
    state.update_factors()

    order, signs = order_and_sign(state.factor_r2(view_names), np.vstack(state.loading_means))
    state.reorder(order, signs)
    precision_terms = state.precision_terms()
    data_weights = state.data_weights()
    factors = _posterior_factors(precision_terms, data_weights, views, mask)[0]
    logger.info(
        "gfa: %d of %d factors active after %d iterations%s",
        int(keep.sum()), n_factors, len(trace), "" if converged else " (not converged)",
    )
    model = GfaModel(
        sample_ids=sample_ids,
        view_names=tuple(view_names),
        feature_names=tuple(dataset.feature_names for dataset in datasets),
        means=tuple(means),
        factors=factors,
        loadings=tuple(state.loading_means),
        noise_variances=tuple(rate / shape for rate, shape in zip(state.tau_rate, state.tau_shape)),
        factor_precisions=np.vstack([state.expected_alpha(position) for position in range(len(views))]),
        elbo_trace=tuple(trace),
        active_factors=keep,
        converged=converged,
        observed_mask=mask,
        precision_terms=tuple(precision_terms),
        data_weights=tuple(data_weights),
    )
    return model, build_representation(model, datasets)


def gfa_impute_latent(
    model: GfaModel,
    datasets: Sequence[ModalityDataset],
    observed_mask: Optional[np.ndarray] = None,
) -> np.ndarray:
    """Posterior mean factors of samples given only the views they observe.

    Args:
        model (GfaModel): fitted model.
        datasets (Sequence[ModalityDataset]): views in training order over the
            same ids; unobserved rows may hold any value.
        observed_mask (np.ndarray): samples x views, defaults to all observed.

    Returns:
        np.ndarray: N x K factors.

    Raises:
        MissingAllViewsError: a sample observes no view.

    Examples:
        Duplicate noiseless views: one view alone places a sample where both do.

        >>> from healthfusion.synthetic import planted_views
        >>> view = planted_views(80, [4], individual_rank=0, noise=0.0, seed=2).datasets[0]
        >>> twin = ModalityDataset("twin", view.sample_ids, view.feature_names, view.values)
        >>> model, _ = gfa_fit([view, twin], IntegrationConfig("gfa", max_factors=2))
        >>> both = gfa_impute_latent(model, [view, twin])
        >>> alone = gfa_impute_latent(model, [view, twin], np.tile([True, False], (80, 1)))
        >>> bool(np.max(np.abs(both - alone)) < 1e-3)
        True

        Hiding the twin for 30% of the samples barely moves their factors:

        >>> noisy = planted_views(300, [6], individual_rank=0, noise=0.1, seed=3).datasets[0]
        >>> copy = ModalityDataset("copy", noisy.sample_ids, noisy.feature_names, noisy.values)
        >>> mask = np.ones((300, 2), dtype=bool)
        >>> mask[:, 1] = np.random.default_rng(3).random(300) >= 0.3
        >>> full, _ = gfa_fit([noisy, copy], IntegrationConfig("gfa", max_factors=3))
        >>> partial, _ = gfa_fit([noisy, copy], IntegrationConfig("gfa", max_factors=3), mask)
        >>> full.n_factors, partial.n_factors
        (1, 1)
        >>> hidden = ~mask[:, 1]
        >>> a, b = full.factors[hidden, 0], partial.factors[hidden, 0]
        >>> bool(a @ b / np.linalg.norm(a) / np.linalg.norm(b) > 0.99)
        True

        >>> gfa_impute_latent(model, [view, twin], np.zeros((80, 2), dtype=bool))
        Traceback (most recent call last):
        healthfusion.errors.MissingAllViewsError: sample 'S0000' observes no view
        >>> gfa_impute_latent(model, [view])
        Traceback (most recent call last):
        healthfusion.errors.SchemaError: gfa was fitted on 2 views, got 1
    """
    if len(datasets) != len(model.view_names):
        raise SchemaError(f"gfa was fitted on {len(model.view_names)} views, got {len(datasets)}")
    for dataset, features in zip(datasets, model.feature_names):
        if dataset.feature_names != features:
            raise SchemaError(f"view {dataset.name!r}: features differ from the gfa fit")
    mask = _check_mask(datasets[0].sample_ids, len(datasets), observed_mask)
    views, _ = model.centered(datasets, mask)
    return _posterior_factors(model.precision_terms, model.data_weights, views, mask)[0]
