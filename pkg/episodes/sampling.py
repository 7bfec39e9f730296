from typing import List

from shared.exceptions import ContractViolation


def equally_spaced_indices(total: int, n: int) -> List[int]:
    """
    n strictly increasing frame indices spread over a clip of `total` frames.

    index_j = floor(j * (total - 1) / (n - 1)); the first index is 0 and the
    last is total - 1. n = 1 selects frame 0.

    Raises:
        ContractViolation: If n < 1 or total < n
    """
    if n < 1:
        raise ContractViolation(f"equally_spaced_indices: n must be >= 1, got {n}")
    if total < n:
        raise ContractViolation(f"equally_spaced_indices: cannot pick {n} frames from {total}")
    if n == 1:
        return [0]
    return [(j * (total - 1)) // (n - 1) for j in range(n)]
