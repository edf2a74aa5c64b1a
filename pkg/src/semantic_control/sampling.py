"""Next-token truncation (temperature, top-k, top-p, min-p) and categorical draws."""
import numpy as np

from .exceptions import DomainError


def top_k_candidates(probs, k):
    """Indices of the ``k`` most likely tokens among those with nonzero mass.

    Ties are broken by lower token id.  Fewer than ``k`` indices come back
    when fewer tokens have nonzero probability.
    """
    probs = np.asarray(probs, dtype=float)
    order = np.argsort(-probs, kind="stable")
    order = order[probs[order] > 0.0]
    return order[:k]


def truncate_distribution(probs, top_p=1.0, min_p=0.0, temperature=1.0, top_k=None):
    """Apply temperature, top-k, top-p and min-p filtering, then renormalize.

    min-p drops tokens whose probability is below ``min_p`` times the
    largest probability.  At least one token always survives.
    """
    probs = np.asarray(probs, dtype=float)
    if not 0.0 < top_p <= 1.0:
        raise DomainError(f"top_p must lie in (0, 1], got {top_p}")
    if not 0.0 <= min_p < 1.0:
        raise DomainError(f"min_p must lie in [0, 1), got {min_p}")
    if temperature <= 0.0:
        raise DomainError(f"temperature must be positive, got {temperature}")
    out = probs.copy()
    if temperature != 1.0:
        with np.errstate(divide="ignore"):
            logp = np.log(out) / temperature
        logp -= logp.max()
        out = np.exp(logp)
        out /= out.sum()
    keep = np.zeros(out.size, dtype=bool)
    order = np.argsort(-out, kind="stable")
    if top_k is not None:
        order = order[:top_k]
    if top_p < 1.0:
        mass_before = np.cumsum(out[order]) - out[order]
        order = order[mass_before < top_p]
    keep[order] = True
    if min_p > 0.0:
        keep &= out >= min_p * out.max()
    keep &= out > 0.0
    if not keep.any():
        keep[np.argmax(out)] = True
    out = np.where(keep, out, 0.0)
    return out / out.sum()


def draw(rng, probs):
    """Draw one index from ``probs`` with a single uniform variate."""
    cdf = np.cumsum(probs)
    u = rng.random() * cdf[-1]
    idx = int(np.searchsorted(cdf, u, side="right"))
    return min(idx, len(probs) - 1)
