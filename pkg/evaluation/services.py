"""
Evaluation protocols: class-similarity matrices, the k-fold retrieval
benchmark (and its sweeps and fixed-split variant), and per-position PSNR curves.
"""

import logging
from collections import Counter
from concurrent.futures import ThreadPoolExecutor
from typing import List, Optional, Sequence, Tuple

import numpy as np

from evaluation.retrieval import mean_average_precision, precision_first_match
from evaluation.types import FoldResult, PsnrCurve, RankedQuery, RetrievalReport, SimilarityMatrix
from memory.pca import apply_pca, fit_class_mean_pca
from memory.services import NORM_FLOOR, EpisodicMemory
from memory.types import RecordMetadata
from metrics.quality import mean_frame_baseline, psnr, psnr_per_frame
from network.types import EpisodeTensor
from shared.constants import METRIC_CHOICES, METRIC_COSINE
from shared.exceptions import ConfigurationError, ContractViolation, DegenerateInputError
from substrate.rng import RngStream

logger = logging.getLogger(__name__)

DEFAULT_FOLDS = 5
DEFAULT_MEMORY_FRACTION = 0.8
DEFAULT_TOP_N = 3
DEFAULT_PCA_COMPONENTS = 50


def _labelled(vectors, labels: Sequence[Optional[str]], op: str) -> np.ndarray:
    vectors = np.asarray(vectors, dtype=np.float64)
    if vectors.ndim != 2 or vectors.shape[0] == 0:
        raise ContractViolation(f"{op}: expected latents [N, D] with N >= 1, got shape {vectors.shape}")
    if len(labels) != vectors.shape[0]:
        raise ContractViolation(f"{op}: {len(labels)} labels for {vectors.shape[0]} latents")
    if any(label is None for label in labels):
        raise ContractViolation(f"{op}: every latent needs a class label")
    return vectors


def _class_order(labels: Sequence[str], classes: Optional[Sequence[str]]) -> Tuple[str, ...]:
    present = tuple(dict.fromkeys(labels))
    if classes is None:
        return present
    missing = set(present) - set(classes)
    if missing:
        raise ContractViolation(f"labels {sorted(missing)} are not in the class order")
    return tuple(name for name in classes if name in set(present))


def class_similarity_matrix(
    vectors,
    labels: Sequence[str],
    use_pca: bool = False,
    pca_components: int = DEFAULT_PCA_COMPONENTS,
    classes: Optional[Sequence[str]] = None
) -> SimilarityMatrix:
    """
    Mean cosine similarity within and between classes.

    Args:
        vectors: Latents [N, D]
        labels: Class per latent
        use_pca: Compare after class-mean PCA fitted on these latents
        pca_components: Components requested when use_pca is set
        classes: Row/column order (defaults to order of first appearance)

    Returns:
        SimilarityMatrix with NaN on the diagonal of single-member classes

    Raises:
        ContractViolation: On empty input, fewer than 2 latents or missing labels
        DegenerateInputError: If a (projected) latent has zero norm
    """
    vectors = _labelled(vectors, labels, 'class_similarity_matrix')
    if vectors.shape[0] < 2:
        raise ContractViolation("class_similarity_matrix: need at least 2 latents")
    if use_pca:
        transform = fit_class_mean_pca(vectors, labels, pca_components)
        if transform.num_components == 0:
            raise DegenerateInputError("class-mean PCA produced no components")
        vectors = apply_pca(transform, vectors)
    norms = np.linalg.norm(vectors, axis=1)
    if np.any(norms <= NORM_FLOOR):
        degenerate = np.flatnonzero(norms <= NORM_FLOOR).tolist()
        raise DegenerateInputError(f"latents at positions {degenerate} have zero norm")
    unit = vectors / norms[:, np.newaxis]
    gram = np.clip(unit @ unit.T, -1.0, 1.0)

    order = _class_order(labels, classes)
    label_array = np.array(labels, dtype=object)
    members = [np.flatnonzero(label_array == name) for name in order]
    values = np.empty((len(order), len(order)))
    for a, rows in enumerate(members):
        for b in range(a, len(order)):
            block = gram[np.ix_(rows, members[b])]
            if a != b:
                value = float(block.mean())
            elif len(rows) < 2:
                logger.warning(f"Class '{order[a]}' has a single member; its intra-class similarity is undefined")
                value = float('nan')
            else:
                value = float((block.sum() - np.trace(block)) / (len(rows) * (len(rows) - 1)))
            values[a, b] = values[b, a] = value
    return SimilarityMatrix(order, values, tuple(len(rows) for rows in members))


def fold_partitions(
    count: int,
    folds: int,
    memory_fraction: float,
    seed: int
) -> List[Tuple[np.ndarray, np.ndarray]]:
    """
    Shuffle once and cut into `folds` disjoint query sets.

    Fold f queries with chunk f of the permutation; its memory takes
    round(memory_fraction * count) of the remaining items in permutation order.

    Returns:
        [(memory indices, query indices)] per fold

    Raises:
        ConfigurationError: If folds < 2, the fraction is outside (0, 1 - 1/folds]
            or there are fewer items than folds
    """
    if folds < 2:
        raise ConfigurationError(f"folds must be >= 2, got {folds}")
    if count < folds:
        raise ConfigurationError(f"cannot cut {count} latents into {folds} folds")
    if not 0.0 < memory_fraction <= 1.0 - 1.0 / folds + 1e-9:
        raise ConfigurationError(
            f"memory_fraction must lie in (0, {1.0 - 1.0 / folds:.3f}] for {folds} disjoint query folds, "
            f"got {memory_fraction}"
        )
    permutation = RngStream(seed).permutation(count)
    chunks = np.array_split(permutation, folds)
    memory_size = min(int(round(memory_fraction * count)), count - max(len(chunk) for chunk in chunks))
    partitions = []
    for fold, queries in enumerate(chunks):
        rest = np.concatenate([chunk for other, chunk in enumerate(chunks) if other != fold])
        partitions.append((rest[:memory_size], queries))
    return partitions


def _rank_queries(
    memory: EpisodicMemory,
    query_vectors: np.ndarray,
    query_labels: Sequence[str],
    top_n: int,
    use_pca: bool,
    metric: str,
    workers: int
) -> List[RankedQuery]:
    relevant = Counter(memory.labels())

    def rank(position: int) -> RankedQuery:
        results = memory.query(query_vectors[position], top_n, use_pca=use_pca, metric=metric)
        label = query_labels[position]
        return RankedQuery(label, tuple(result.record.label for result in results), relevant[label])

    positions = range(len(query_labels))
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            return list(pool.map(rank, positions))
    return [rank(position) for position in positions]


def _build_memory(vectors: np.ndarray, labels: Sequence[str], indices: Sequence[int]) -> EpisodicMemory:
    memory = EpisodicMemory(vectors.shape[1])
    for index in indices:
        memory.insert(vectors[index], RecordMetadata(label=labels[index], source=str(int(index))))
    return memory


def _check_retrieval_settings(top_n: int, metric: str, workers: int) -> None:
    if top_n < 1:
        raise ConfigurationError(f"top_n must be >= 1, got {top_n}")
    if metric not in METRIC_CHOICES:
        raise ConfigurationError(f"unknown metric '{metric}', expected one of {METRIC_CHOICES}")
    if workers < 1:
        raise ConfigurationError(f"workers must be >= 1, got {workers}")


def retrieval_benchmark(
    latents,
    labels: Sequence[str],
    folds: int = DEFAULT_FOLDS,
    memory_fraction: float = DEFAULT_MEMORY_FRACTION,
    top_n: int = DEFAULT_TOP_N,
    seed: int = 0,
    use_pca: bool = False,
    pca_components: int = DEFAULT_PCA_COMPONENTS,
    metric: str = METRIC_COSINE,
    workers: int = 1
) -> RetrievalReport:
    """
    k-fold memory/query retrieval benchmark.

    Every fold stores its memory-side latents in a fresh EpisodicMemory (with
    class-mean PCA fitted on those records only when use_pca is set) and
    queries it with its held-out latents. Queries of classes with a single
    member overall are excluded with a warning.

    Args:
        latents: Latents [N, D]
        labels: Class per latent
        folds: Number of disjoint query folds
        memory_fraction: Share of all latents stored per fold
        top_n: Results retrieved per query; mean AP uses the same cutoff
        seed: Shuffle seed
        use_pca: Match in the class-mean PCA space
        pca_components: Components requested when use_pca is set
        metric: 'cosine' or 'euclidean'
        workers: Threads answering the queries of a fold

    Returns:
        RetrievalReport with one FoldResult per fold and the settings echo

    Raises:
        ConfigurationError: On invalid settings
        ContractViolation: On malformed latents or labels
        InsufficientDataError: If use_pca is set and a memory holds fewer than 2 classes
    """
    vectors = _labelled(latents, labels, 'retrieval_benchmark')
    _check_retrieval_settings(top_n, metric, workers)
    sizes = Counter(labels)
    singletons = sorted(name for name, size in sizes.items() if size < 2)
    if singletons:
        logger.warning(f"Classes with a single member are excluded from scoring: {', '.join(singletons)}")

    report = RetrievalReport(echo={
        'folds': folds, 'memory_fraction': memory_fraction, 'top_n': top_n, 'seed': seed,
        'use_pca': use_pca, 'pca_components': pca_components if use_pca else 0, 'metric': metric
    })
    for fold, (memory_indices, query_indices) in enumerate(fold_partitions(len(labels), folds, memory_fraction, seed)):
        memory = _build_memory(vectors, labels, memory_indices)
        if use_pca:
            memory.fit_pca(pca_components)
        scored = [index for index in query_indices if sizes[labels[index]] >= 2]
        ranked = _rank_queries(
            memory, vectors[scored], [labels[index] for index in scored], top_n, use_pca, metric, workers
        )
        result = FoldResult(
            fold=fold,
            precision=precision_first_match(ranked),
            mean_ap=mean_average_precision(ranked, cutoff=top_n),
            queries=len(ranked),
            memory_size=len(memory),
            excluded=len(query_indices) - len(scored)
        )
        logger.debug(f"Fold {fold}: precision={result.precision:.4f} mAP={result.mean_ap:.4f}")
        report.folds.append(result)
    logger.info(
        f"Retrieval benchmark (pca={use_pca}, metric={metric}): precision {report.precision_mean:.4f} "
        f"+- {report.precision_std:.4f}, mAP@{top_n} {report.map_mean:.4f} +- {report.map_std:.4f}"
    )
    return report


def retrieval_sweep(
    latents,
    labels: Sequence[str],
    folds: int = DEFAULT_FOLDS,
    memory_fraction: float = DEFAULT_MEMORY_FRACTION,
    top_n: int = DEFAULT_TOP_N,
    seed: int = 0,
    pca_components: int = DEFAULT_PCA_COMPONENTS,
    pca_options: Sequence[bool] = (False, True),
    metrics: Sequence[str] = METRIC_CHOICES,
    workers: int = 1
) -> List[RetrievalReport]:
    """One benchmark report per (PCA on/off, metric) combination; all are returned."""
    return [
        retrieval_benchmark(
            latents, labels, folds=folds, memory_fraction=memory_fraction, top_n=top_n, seed=seed,
            use_pca=use_pca, pca_components=pca_components, metric=metric, workers=workers
        )
        for use_pca in pca_options
        for metric in metrics
    ]


def holdout_retrieval(
    memory_latents,
    memory_labels: Sequence[str],
    query_latents,
    query_labels: Sequence[str],
    top_n: int = DEFAULT_TOP_N,
    pca_components: Optional[int] = None,
    metric: str = METRIC_COSINE
) -> RetrievalReport:
    """
    Retrieval with an explicit memory/query split.

    Args:
        memory_latents: Stored latents [M, D]
        memory_labels: Class per stored latent
        query_latents: Held-out latents [Q, D]
        query_labels: Class per query
        top_n: Results per query and mean AP cutoff
        pca_components: Match on this many class-mean components of the memory (None: no PCA)
        metric: 'cosine' or 'euclidean'

    Returns:
        RetrievalReport with a single fold
    """
    stored = _labelled(memory_latents, memory_labels, 'holdout_retrieval')
    queries = _labelled(query_latents, query_labels, 'holdout_retrieval')
    if stored.shape[1] != queries.shape[1]:
        raise ContractViolation(
            f"holdout_retrieval: memory dimension {stored.shape[1]} differs from query dimension {queries.shape[1]}"
        )
    _check_retrieval_settings(top_n, metric, 1)
    memory = _build_memory(stored, memory_labels, range(stored.shape[0]))
    use_pca = pca_components is not None
    if use_pca:
        memory.fit_pca(pca_components)
    ranked = _rank_queries(memory, queries, list(query_labels), top_n, use_pca, metric, 1)
    result = FoldResult(
        fold=0,
        precision=precision_first_match(ranked),
        mean_ap=mean_average_precision(ranked, cutoff=top_n),
        queries=len(ranked),
        memory_size=len(memory)
    )
    return RetrievalReport(folds=[result], echo={
        'folds': 1, 'memory_fraction': stored.shape[0] / (stored.shape[0] + queries.shape[0]), 'top_n': top_n,
        'seed': 0, 'use_pca': use_pca, 'pca_components': pca_components or 0, 'metric': metric
    })


def psnr_curves(predictor, episodes: Sequence[EpisodeTensor]) -> PsnrCurve:
    """
    Mean and standard deviation of PSNR per frame position.

    Args:
        predictor: Object with `config` (ModelConfig) and `generate_many(episodes)`
            returning [N, n, C, H, W], e.g. InferenceService
        episodes: Validation episodes matching the predictor's config

    Returns:
        PsnrCurve for the model and for the mean-frame baseline

    Raises:
        ContractViolation: If there are no episodes or one does not fit the config
    """
    episodes = list(episodes)
    if not episodes:
        raise ContractViolation("psnr_curves: no episodes")
    config = predictor.config
    for episode in episodes:
        episode.check(config)
    k = config.encoder_length
    generated = np.asarray(predictor.generate_many(episodes))
    expected_shape = (len(episodes), config.sequence_length) + config.frame_shape
    if generated.shape != expected_shape:
        raise ContractViolation(f"psnr_curves: generated shape {generated.shape}, expected {expected_shape}")

    model = np.stack([psnr_per_frame(output, episode.frames) for output, episode in zip(generated, episodes)])
    baseline = []
    for episode in episodes:
        stand_in = mean_frame_baseline(episode.encoder_frames(k))
        baseline.append([psnr(stand_in, frame) for frame in episode.frames])
    baseline = np.array(baseline)
    curve = PsnrCurve(
        encoder_length=k,
        model_mean=model.mean(axis=0),
        model_std=model.std(axis=0),
        baseline_mean=baseline.mean(axis=0),
        baseline_std=baseline.std(axis=0),
        episodes=len(episodes)
    )
    logger.info(
        f"PSNR over {len(episodes)} episodes: reconstruction {curve.reconstruction_mean():.2f} dB, "
        f"prediction {curve.prediction_mean():.2f} dB"
    )
    return curve
