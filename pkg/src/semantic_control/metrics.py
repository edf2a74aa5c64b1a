"""Constraint-satisfaction metrics over verifier scores grouped by prompt.

All metrics return percentages in [0, 100].
"""
import numpy as np

from .exceptions import DomainError

MODES = ("any", "fraction")
DIRECTIONS = ("max", "min")


def _check_groups(groups, same_size=False):
    groups = [np.asarray(g, dtype=float) for g in groups]
    if not groups or any(g.size == 0 for g in groups):
        raise DomainError("every prompt needs at least one scored generation")
    if same_size and len({g.size for g in groups}) > 1:
        raise DomainError("prompts have different numbers of generations")
    return groups


def average_score(groups):
    """Mean verifier score over all generations, as a percentage."""
    groups = _check_groups(groups)
    return 100.0 * float(np.concatenate(groups).mean())


def constraint_probability(groups, threshold, mode="any", fraction=0.9):
    """Percentage of prompts whose generations satisfy ``score >= threshold``.

    ``mode="any"`` needs one passing generation per prompt; ``mode="fraction"``
    needs at least ``fraction`` of them to pass.
    """
    if mode not in MODES:
        raise DomainError(f"mode must be one of {MODES}, got {mode!r}")
    groups = _check_groups(groups, same_size=True)
    if mode == "any":
        hits = [bool(np.any(g >= threshold)) for g in groups]
    else:
        hits = [np.count_nonzero(g >= threshold) >= fraction * g.size - 1e-12 for g in groups]
    return 100.0 * float(np.mean(hits))


def expected_worst_score(groups, direction="max"):
    """Per-prompt worst score (``max`` for undesirable attributes, ``min`` otherwise), averaged."""
    if direction not in DIRECTIONS:
        raise DomainError(f"direction must be one of {DIRECTIONS}, got {direction!r}")
    groups = _check_groups(groups)
    reduce = np.max if direction == "max" else np.min
    return 100.0 * float(np.mean([reduce(g) for g in groups]))
