"""Angle-based joint and individual variation explained (AJIVE).

Each view is reduced to its signal subspace, the score bases are stacked and
directions shared by all views are found from the squared singular values
of the stack. Joint rank is the number of squared singular values above the
larger of two resampled bounds: the distribution of the leading singular
value of stacked random bases and a Wedin perturbation bound estimated from
random directions outside each view's signal space. What the joint space
does not explain is decomposed again per view into individual structure.
"""
import logging
from dataclasses import dataclass
from typing import Sequence
import numpy as np
from scipy import linalg

from healthfusion.errors import ConfigError, RankError
from healthfusion.integration import (
    ComponentLabel,
    IntegrationConfig,
    MergedRepresentation,
    build_representation,
    check_aligned,
    order_and_sign,
    require_complete,
    resolve_ranks,
)
from healthfusion.tabular import ModalityDataset, fix_signs

logger = logging.getLogger(__name__)

CUTOFF_SLACK = 1e-8
NUMERIC_RANK = 1e-12
CHUNK_ENTRIES = 2_000_000


@dataclass(frozen=True)
class AjiveDecomposition:
    """Fitted AJIVE model.

    Views are centered and scaled to unit mean squared column norm
    (||Y||_F / sqrt(D)) before the decomposition; the stored means and
    scales apply the same transform to new samples.

    Args:
        sample_ids (tuple): training ids.
        view_names (tuple): view order.
        feature_names (tuple[tuple]): features per view.
        means (tuple[np.ndarray]): training column means per view.
        scales (tuple[float]): training scale per view.
        signal_ranks (tuple[int]): m_i.
        joint_scores (np.ndarray): N x M orthonormal joint basis S.
        joint_weights (tuple[np.ndarray]): D_i x M, U_i = Y_iᵀ S.
        individual_scores (tuple[np.ndarray]): N x M_i per view.
        individual_weights (tuple[np.ndarray]): D_i x M_i per view.
        joint_sv_squared (np.ndarray): squared singular values of the stack.
        random_cutoff (float): random-direction bound.
        wedin_cutoff (float): Wedin bound.
        signal_loadings (tuple[np.ndarray]): D_i x m_i right signal bases.
        joint_maps (tuple[np.ndarray]): D_i x M, S = sum_i Y_i map_i.
        joint_signal_weights (tuple[np.ndarray]): M x D_i, Sᵀ of the signal.
        individual_maps (tuple[np.ndarray]): D_i x M_i on the joint-free signal.
    """

    sample_ids: tuple
    view_names: tuple
    feature_names: tuple
    means: tuple
    scales: tuple
    signal_ranks: tuple
    joint_scores: np.ndarray
    joint_weights: tuple
    individual_scores: tuple
    individual_weights: tuple
    joint_sv_squared: np.ndarray
    random_cutoff: float
    wedin_cutoff: float
    signal_loadings: tuple
    joint_maps: tuple
    joint_signal_weights: tuple
    individual_maps: tuple

    @property
    def joint_rank(self) -> int:
        """M."""
        return self.joint_scores.shape[1]

    @property
    def individual_ranks(self) -> tuple:
        """M_i per view."""
        return tuple(scores.shape[1] for scores in self.individual_scores)

    @property
    def cutoff(self) -> float:
        """Threshold on the squared singular values of the stack."""
        return max(self.random_cutoff, self.wedin_cutoff)

    @property
    def labels(self) -> tuple:
        """Joint components first, then each view's individual ones."""
        labels = [ComponentLabel("joint", j + 1) for j in range(self.joint_rank)]
        for name, rank in zip(self.view_names, self.individual_ranks):
            labels.extend(ComponentLabel("individual", j + 1, name) for j in range(rank))
        return tuple(labels)

    @property
    def scores(self) -> np.ndarray:
        """[S | S_1 | ... | S_n]."""
        return np.hstack([self.joint_scores, *self.individual_scores])

    def view_weights(self) -> list[np.ndarray]:
        """Weights of every component in every view, zero outside its view."""
        weights = []
        for position, joint in enumerate(self.joint_weights):
            blocks = [joint]
            for other, individual in enumerate(self.individual_weights):
                if other == position:
                    blocks.append(individual)
                else:
                    blocks.append(np.zeros((joint.shape[0], individual.shape[1])))
            weights.append(np.hstack(blocks))
        return weights

    def centered(self, datasets: Sequence[ModalityDataset]):
        """Views under the training centering and scaling, all rows observed."""
        values = [
            (dataset.values - mean) / scale
            for dataset, mean, scale in zip(datasets, self.means, self.scales)
        ]
        return values, [np.ones(len(value), dtype=bool) for value in values]

    def joint_matrices(self) -> list[np.ndarray]:
        """J_i = S U_iᵀ per view."""
        return [self.joint_scores @ weights.T for weights in self.joint_weights]

    def individual_matrices(self) -> list[np.ndarray]:
        """I_i = S_i V_iᵀ per view."""
        return [
            scores @ weights.T
            for scores, weights in zip(self.individual_scores, self.individual_weights)
        ]

    def residuals(self, datasets: Sequence[ModalityDataset]) -> list[np.ndarray]:
        """R_i = Y_i - J_i - I_i on the training views."""
        values, _ = self.centered(datasets)
        return [
            value - joint - individual
            for value, joint, individual in zip(values, self.joint_matrices(), self.individual_matrices())
        ]

    def project(self, datasets: Sequence[ModalityDataset], observed_mask=None) -> np.ndarray:
        """Joint and individual scores of new samples with every view observed."""
        require_complete("ajive", observed_mask)
        values, _ = self.centered(datasets)
        joint = sum(value @ joint_map for value, joint_map in zip(values, self.joint_maps))
        if np.isscalar(joint):
            joint = np.zeros((len(values[0]), 0))
        blocks = [joint]
        for value, loadings, joint_signal, individual_map in zip(
            values, self.signal_loadings, self.joint_signal_weights, self.individual_maps
        ):
            signal = value @ loadings @ loadings.T
            blocks.append((signal - joint @ joint_signal) @ individual_map)
        return np.hstack(blocks)


def _chunks(n_resamples: int, entries_per_draw: int):
    size = max(1, CHUNK_ENTRIES // max(1, entries_per_draw))
    for start in range(0, n_resamples, size):
        yield min(size, n_resamples - start)


def random_direction_bound(
    rng: np.random.Generator, n_samples: int, ranks: Sequence[int], n_resamples: int
) -> np.ndarray:
    """Squared leading singular value of stacked random orthonormal bases.

    Examples:
        >>> draws = random_direction_bound(np.random.default_rng(0), 50, [1, 1], 200)
        >>> draws.shape
        (200,)
        >>> bool(np.all((draws >= 1.0 - 1e-9) & (draws <= 2.0 + 1e-9)))
        True
    """
    draws = []
    for size in _chunks(n_resamples, n_samples * sum(ranks)):
        bases = []
        for rank in ranks:
            basis, _ = np.linalg.qr(rng.standard_normal((size, n_samples, rank)))
            bases.append(basis)
        stacked = np.concatenate(bases, axis=2)
        draws.append(np.linalg.svd(stacked, compute_uv=False)[:, 0] ** 2)
    return np.concatenate(draws)


def _complement_norms(
    rng: np.random.Generator, values: np.ndarray, basis: np.ndarray, n_resamples: int
) -> np.ndarray:
    """Operator norms of ``values`` on random orthonormal sets orthogonal to ``basis``."""
    dim, rank = basis.shape
    width = min(rank, dim - rank)
    if width < 1:
        return np.zeros(n_resamples)
    norms = []
    for size in _chunks(n_resamples, dim * width):
        draws = rng.standard_normal((size, dim, width))
        draws = draws - basis @ (basis.T @ draws)
        directions, _ = np.linalg.qr(draws)
        norms.append(np.linalg.svd(values @ directions, compute_uv=False)[:, 0])
    return np.concatenate(norms)


def wedin_bound(
    rng: np.random.Generator,
    values: np.ndarray,
    left: np.ndarray,
    singular: np.ndarray,
    right: np.ndarray,
    n_resamples: int,
) -> np.ndarray:
    """Resampled Wedin bound on the sine of one view's signal perturbation angle.

    Args:
        rng (np.random.Generator): random source.
        values (np.ndarray): centered, scaled N x D view.
        left (np.ndarray): N x m signal score basis.
        singular (np.ndarray): the m signal singular values.
        right (np.ndarray): D x m signal loading basis.
        n_resamples (int): draws.

    Returns:
        np.ndarray: one bound in [0, 1] per draw.
    """
    left_norms = _complement_norms(rng, values.T, left, n_resamples)
    right_norms = _complement_norms(rng, values, right, n_resamples)
    return np.minimum(np.maximum(left_norms, right_norms) / singular[-1], 1.0)


def ajive_fit(
    datasets: Sequence[ModalityDataset], config: IntegrationConfig
) -> tuple[AjiveDecomposition, MergedRepresentation]:
    """Fit AJIVE on aligned views.

    Args:
        datasets (Sequence[ModalityDataset]): at least two aligned views.
        config (IntegrationConfig): ranks or variance fraction, seed and the
            resampling settings.

    Returns:
        AjiveDecomposition: the fitted model.
        MergedRepresentation: joint then individual scores.

    Raises:
        AlignmentError: views are not aligned.
        RankError: a signal rank exceeds min(N, D_i) or the numerical rank,
            or the ranks sum to more than N.

    Examples:
        Two identical noiseless rank-2 views are all joint:

        >>> from healthfusion.synthetic import planted_views
        >>> base = planted_views(50, [5], joint_rank=2, individual_rank=0, noise=0.0, seed=4).datasets[0]
        >>> twin = ModalityDataset("twin", base.sample_ids, base.feature_names, base.values)
        >>> model, merged = ajive_fit([base, twin], IntegrationConfig("ajive", per_view_ranks=(2, 2)))
        >>> model.joint_rank, model.individual_ranks
        (2, (0, 0))
        >>> residual = model.residuals([base, twin])[0]
        >>> centered = model.centered([base])[0][0]
        >>> bool(np.linalg.norm(residual) / np.linalg.norm(centered) < 1e-8)
        True

        Views without shared structure have no joint part:

        >>> apart = planted_views(200, [6, 6], joint_rank=0, individual_rank=2, noise=0.0, seed=5)
        >>> ajive_fit(list(apart.datasets), IntegrationConfig("ajive", per_view_ranks=(2, 2)))[0].joint_rank
        0

        Planted structure is recovered in at least 19 of 20 seeds:

        >>> hits = 0
        >>> for seed in range(20):
        ...     planted = planted_views(500, [20, 15, 10], seed=seed)
        ...     fitted, merged = ajive_fit(list(planted.datasets), IntegrationConfig("ajive", per_view_ranks=(2, 2, 2), seed=seed))
        ...     truth = planted.joint_scores[:, 0] / np.linalg.norm(planted.joint_scores[:, 0])
        ...     aligned = fitted.joint_rank == 1 and abs(float(fitted.joint_scores[:, 0] @ truth)) > np.cos(np.radians(5))
        ...     hits += aligned and fitted.individual_ranks == (1, 1, 1)
        >>> hits >= 19
        True
        >>> bool(fitted.joint_sv_squared[0] > fitted.cutoff)
        True
        >>> scores = fitted.scores
        >>> bool(np.allclose(scores[:, :1].T @ scores[:, 1:], 0.0, atol=1e-6))
        True
        >>> bool(np.allclose(fitted.project(planted.datasets), scores, atol=1e-8))
        True
        >>> from healthfusion.integration import project_new
        >>> project_new(merged, planted.datasets, np.tile([True, False, True], (500, 1)))
        Traceback (most recent call last):
        healthfusion.errors.MissingViewUnsupportedError: ajive cannot project samples with missing views; missing views are only supported by gfa

        Ranks must fit the data:

        >>> ajive_fit([base, twin], IntegrationConfig("ajive", per_view_ranks=(3, 2)))
        Traceback (most recent call last):
        healthfusion.errors.RankError: view1: signal rank 3 exceeds the numerical rank of the view
    """
    if len(datasets) < 2:
        raise ConfigError("ajive needs at least two views")
    sample_ids = check_aligned(datasets)
    ranks = resolve_ranks(datasets, config)
    n_samples = len(sample_ids)
    if sum(ranks) > n_samples:
        raise RankError(f"signal ranks {ranks} sum to more than the {n_samples} samples")
    rng = np.random.default_rng(config.seed)

    means, scales, values = [], [], []
    for dataset in datasets:
        mean = dataset.values.mean(axis=0)
        centered = dataset.values - mean
        scale = np.linalg.norm(centered) / np.sqrt(dataset.n_features)
        if scale <= 0:
            raise RankError(f"{dataset.name}: view has no variance")
        means.append(mean)
        scales.append(float(scale))
        values.append(centered / scale)

    signals = []
    for dataset, value, rank in zip(datasets, values, ranks):
        left, singular, right_t = linalg.svd(value, full_matrices=False)
        if singular[rank - 1] <= NUMERIC_RANK * singular[0]:
            raise RankError(
                f"{dataset.name}: signal rank {rank} exceeds the numerical rank of the view"
            )
        following = singular[rank] if rank < len(singular) else 0.0
        threshold = (singular[rank - 1] + following) / 2.0
        signals.append((left[:, :rank], singular[:rank], right_t[:rank].T, threshold))

    stacked = np.hstack([left for left, _, _, _ in signals])
    stack_left, stack_sv, stack_right_t = linalg.svd(stacked, full_matrices=False)
    sv_squared = stack_sv**2

    random_draws = random_direction_bound(rng, n_samples, ranks, config.ajive_resamples)
    wedin_sum = np.zeros(config.ajive_resamples)
    for value, (left, singular, right, _) in zip(values, signals):
        wedin_sum += wedin_bound(rng, value, left, singular, right, config.ajive_resamples) ** 2
    random_cutoff = float(np.quantile(random_draws, config.ajive_percentile))
    wedin_cutoff = float(np.quantile(len(datasets) - wedin_sum, 1.0 - config.ajive_percentile))
    cutoff = max(random_cutoff, wedin_cutoff)
    joint_rank = int(np.sum(sv_squared > cutoff - CUTOFF_SLACK))
    logger.info(
        "ajive: joint rank %d (cutoff %.4f, random %.4f, wedin %.4f)",
        joint_rank, cutoff, random_cutoff, wedin_cutoff,
    )

    joint = stack_left[:, :joint_rank]
    mixing = stack_right_t[:joint_rank].T / stack_sv[:joint_rank]
    joint_maps = []
    offset = 0
    for left, singular, right, _ in signals:
        rank = len(singular)
        joint_maps.append((right / singular) @ mixing[offset:offset + rank])
        offset += rank

    joint_weights = [value.T @ joint for value in values]
    r2 = np.array([
        np.sum(weights**2, axis=0) / np.sum(value**2)
        for value, weights in zip(values, joint_weights)
    ]).reshape(len(values), joint_rank)
    order, signs = order_and_sign(r2, np.vstack(joint_weights))
    joint = joint[:, order] * signs
    joint_weights = [weights[:, order] * signs for weights in joint_weights]
    joint_maps = [joint_map[:, order] * signs for joint_map in joint_maps]

    individual_scores, individual_weights, individual_maps, joint_signal_weights = [], [], [], []
    for dataset, value, rank, (left, singular, right, threshold) in zip(datasets, values, ranks, signals):
        signal = (left * singular) @ right.T
        joint_signal = joint.T @ signal
        remainder = signal - joint @ joint_signal
        own_left, own_sv, own_right_t = linalg.svd(remainder, full_matrices=False)
        cap = max(0, min(rank, min(n_samples, dataset.n_features) - joint_rank))
        own_rank = int(min(np.sum(own_sv > threshold), cap))
        scores = own_left[:, :own_rank]
        weights = own_right_t[:own_rank].T * own_sv[:own_rank]
        own_map = own_right_t[:own_rank].T / own_sv[:own_rank]
        share = (2.0 * np.einsum("nk,nd,dk->k", scores, value, weights) - np.sum(weights**2, axis=0))
        own_order = np.argsort(-share, kind="stable")
        own_signs = fix_signs(weights[:, own_order])
        individual_scores.append(scores[:, own_order] * own_signs)
        individual_weights.append(weights[:, own_order] * own_signs)
        individual_maps.append(own_map[:, own_order] * own_signs)
        joint_signal_weights.append(joint_signal)
        logger.debug("ajive: %s individual rank %d", dataset.name, own_rank)

    model = AjiveDecomposition(
        sample_ids=sample_ids,
        view_names=tuple(dataset.name for dataset in datasets),
        feature_names=tuple(dataset.feature_names for dataset in datasets),
        means=tuple(means),
        scales=tuple(scales),
        signal_ranks=tuple(ranks),
        joint_scores=joint,
        joint_weights=tuple(joint_weights),
        individual_scores=tuple(individual_scores),
        individual_weights=tuple(individual_weights),
        joint_sv_squared=sv_squared,
        random_cutoff=random_cutoff,
        wedin_cutoff=wedin_cutoff,
        signal_loadings=tuple(right for _, _, right, _ in signals),
        joint_maps=tuple(joint_maps),
        joint_signal_weights=tuple(joint_signal_weights),
        individual_maps=tuple(individual_maps),
    )
    return model, build_representation(model, datasets)
