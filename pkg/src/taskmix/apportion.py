"""Integer apportionment helpers shared by subsetting and batch quotas."""

from __future__ import annotations

from fractions import Fraction
from typing import Sequence


def largest_remainder(
    total: int,
    weights: Sequence[float],
    minimum: Sequence[int] | int = 0,
    capacity: Sequence[int] | None = None,
) -> list[int]:
    """Split ``total`` into integers proportional to ``weights``.

    Floors of the exact shares are handed out first, then the leftover units go
    to the largest fractional remainders (ties to the lowest index). Shares are
    computed with exact rationals so the result does not depend on float
    rounding of the weights' sum.

    ``minimum`` then lifts entries below their floor by moving units from the
    entry with the largest surplus over its own minimum. ``capacity`` caps
    entries, spilling overflow to the entry with the largest remaining room.
    """
    n = len(weights)
    if n == 0:
        if total:
            raise ValueError("cannot apportion a positive total over zero weights")
        return []
    if total < 0:
        raise ValueError(f"total must be non-negative, got {total}")
    exact = [Fraction(w) for w in weights]
    if any(w < 0 for w in exact):
        raise ValueError("weights must be non-negative")
    weight_sum = sum(exact)
    if weight_sum == 0:
        exact = [Fraction(1)] * n
        weight_sum = Fraction(n)

    shares = [total * w / weight_sum for w in exact]
    alloc = [int(s) for s in shares]  # floor, shares are non-negative
    leftover = total - sum(alloc)
    order = sorted(range(n), key=lambda i: (-(shares[i] - alloc[i]), i))
    for i in order[:leftover]:
        alloc[i] += 1

    mins = [minimum] * n if isinstance(minimum, int) else list(minimum)
    if sum(mins) > total:
        raise ValueError(f"minimums sum to {sum(mins)} which exceeds total {total}")
    for i in range(n):
        while alloc[i] < mins[i]:
            donor = max(range(n), key=lambda j: (alloc[j] - mins[j], -j))
            alloc[donor] -= 1
            alloc[i] += 1

    if capacity is not None:
        caps = list(capacity)
        if sum(caps) < total:
            raise ValueError(f"capacities sum to {sum(caps)}, below total {total}")
        for i in range(n):
            while alloc[i] > caps[i]:
                taker = max(range(n), key=lambda j: (caps[j] - alloc[j], -j))
                alloc[i] -= 1
                alloc[taker] += 1
    return alloc
