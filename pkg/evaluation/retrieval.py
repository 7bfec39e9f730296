"""
Retrieval scores: first-match precision and truncated mean average precision.

A retrieved episode is relevant when it carries the query's class label.
"""

import logging
from typing import Sequence

from evaluation.types import RankedQuery
from shared.exceptions import ConfigurationError

logger = logging.getLogger(__name__)

MAP_CUTOFF = 3


def precision_first_match(ranked: Sequence[RankedQuery]) -> float:
    """
    Fraction of queries whose rank-1 result shares the query's label.

    Queries without results are excluded with a warning; with no scorable
    query the precision is 0.
    """
    scored = [query for query in ranked if query.retrieved]
    skipped = len(ranked) - len(scored)
    if skipped:
        logger.warning(f"{skipped} queries returned no results and were excluded from first-match precision")
    if not scored:
        return 0.0
    hits = sum(1 for query in scored if query.retrieved[0] == query.label)
    return hits / len(scored)


def average_precision_at(query: RankedQuery, cutoff: int = MAP_CUTOFF) -> float:
    """
    Truncated average precision of one query.

    AP@m = sum_{j<=m} rel_j * Precision@j / min(m, relevant_in_memory); 0 when
    the memory holds nothing relevant.
    """
    if cutoff < 1:
        raise ConfigurationError(f"cutoff must be >= 1, got {cutoff}")
    denominator = min(cutoff, query.relevant_in_memory)
    if denominator == 0:
        return 0.0
    hits = 0
    total = 0.0
    for rank, label in enumerate(query.retrieved[:cutoff], start=1):
        if label == query.label:
            hits += 1
            total += hits / rank
    return total / denominator


def mean_average_precision(ranked: Sequence[RankedQuery], cutoff: int = MAP_CUTOFF) -> float:
    """Mean of average_precision_at over queries; 0 for no queries."""
    if not ranked:
        return 0.0
    without_relevant = sum(1 for query in ranked if query.relevant_in_memory == 0)
    if without_relevant:
        logger.warning(f"{without_relevant} queries have no relevant records in memory; their AP is 0")
    return sum(average_precision_at(query, cutoff) for query in ranked) / len(ranked)


def map_at_3(ranked: Sequence[RankedQuery]) -> float:
    return mean_average_precision(ranked, cutoff=3)
