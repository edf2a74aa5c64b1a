"""Reference decoders: truncated ancestral sampling, beam search and best-of-N."""
import heapq

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from .exceptions import ConfigError, DomainError
from .sampling import draw, truncate_distribution
from .validation import check_random_state, check_sequence

OBJECTIVES = ("maximize", "minimize")


def _check_prefix(lm, prefix):
    prefix = check_sequence(prefix, lm.vocab_size)
    if prefix.size >= lm.horizon:
        raise DomainError(f"prefix length {prefix.size} leaves nothing to decode (horizon {lm.horizon})")
    return prefix


def random_sample(lm, prefix, rng, top_p=1.0, min_p=0.0, temperature=1.0, top_k=None):
    """Ancestral sampling with temperature, top-k, top-p and min-p truncation at every step."""
    seq = _check_prefix(lm, prefix)
    rng = check_random_state(rng)
    while seq.size < lm.horizon:
        probs = truncate_distribution(lm.next_token_dist(seq), top_p, min_p, temperature, top_k)
        seq = np.append(seq, draw(rng, probs))
    return seq


def beam_search(lm, prefix, num_beams=5, temperature=1.0):
    """Deterministic beam search on summed per-step log-probabilities.

    Temperature rescales each step's distribution before scoring.  Ties
    between equal scores go to the lexicographically smaller sequence.
    """
    if num_beams < 1:
        raise DomainError("num_beams must be at least 1")
    prefix = _check_prefix(lm, prefix)
    beams = [(0.0, tuple(int(t) for t in prefix))]
    for _ in range(lm.horizon - prefix.size):
        expanded = []
        for score, seq in beams:
            probs = truncate_distribution(lm.next_token_dist(seq), temperature=temperature)
            with np.errstate(divide="ignore"):
                logp = np.log(probs)
            for v in np.flatnonzero(probs > 0.0):
                expanded.append((score + float(logp[v]), seq + (int(v),)))
        beams = heapq.nsmallest(num_beams, expanded, key=lambda b: (-b[0], b[1]))
    return np.asarray(beams[0][1], dtype=np.int64)


def best_of_n(lm, verifier, prefix, rng, n=10, objective="maximize", top_p=0.9, min_p=0.1, temperature=1.0):
    """Draw ``n`` truncated samples and keep the one the verifier prefers.

    ``objective="minimize"`` keeps the sample maximizing ``1 - phi``.
    Ties go to the earliest draw.
    """
    if n < 1:
        raise DomainError("best-of-n needs n >= 1")
    if objective not in OBJECTIVES:
        raise DomainError(f"objective must be one of {OBJECTIVES}, got {objective!r}")
    rng = check_random_state(rng)
    draws = [random_sample(lm, prefix, rng, top_p, min_p, temperature) for _ in range(n)]
    scores = verifier.score_sequences(np.stack(draws))
    utility = scores if objective == "maximize" else 1.0 - scores
    return draws[int(np.argmax(utility))]


class _BaselineDecoder(BaseEstimator):
    def fit(self, lm, verifier=None):
        self._validate_params()
        self.lm_ = lm
        self.verifier_ = verifier
        return self

    def _validate_params(self):
        problems = []
        if not 0.0 < getattr(self, "top_p", 1.0) <= 1.0:
            problems.append(f"top_p must lie in (0, 1], got {self.top_p!r}")
        if not 0.0 <= getattr(self, "min_p", 0.0) < 1.0:
            problems.append(f"min_p must lie in [0, 1), got {self.min_p!r}")
        if not getattr(self, "temperature", 1.0) > 0.0:
            problems.append(f"temperature must be positive, got {self.temperature!r}")
        if problems:
            raise ConfigError(problems)

    def predict(self, prefixes):
        check_is_fitted(self, "lm_")
        rng = check_random_state(getattr(self, "random_state", None))
        return np.stack([self.generate(p, child) for p, child in zip(prefixes, rng.spawn(len(prefixes)))])


class RandomSampler(_BaselineDecoder):
    def __init__(self, top_p=1.0, min_p=0.0, temperature=1.0, top_k=None, random_state=None):
        self.top_p = top_p
        self.min_p = min_p
        self.temperature = temperature
        self.top_k = top_k
        self.random_state = random_state

    def generate(self, prefix, random_state=None):
        rng = check_random_state(self.random_state if random_state is None else random_state)
        return random_sample(self.lm_, prefix, rng, self.top_p, self.min_p, self.temperature, self.top_k)


class BeamSearchDecoder(_BaselineDecoder):
    def __init__(self, num_beams=5, temperature=0.3):
        self.num_beams = num_beams
        self.temperature = temperature

    def generate(self, prefix, random_state=None):
        return beam_search(self.lm_, prefix, self.num_beams, self.temperature)


class BestOfNDecoder(_BaselineDecoder):
    def __init__(self, n=10, objective="maximize", top_p=0.9, min_p=0.1, temperature=1.0, random_state=None):
        self.n = n
        self.objective = objective
        self.top_p = top_p
        self.min_p = min_p
        self.temperature = temperature
        self.random_state = random_state

    def fit(self, lm, verifier):
        if verifier is None:
            raise DomainError("best-of-n needs a verifier")
        return super().fit(lm, verifier)

    def generate(self, prefix, random_state=None):
        rng = check_random_state(self.random_state if random_state is None else random_state)
        return best_of_n(self.lm_, self.verifier_, prefix, rng, self.n, self.objective,
                         self.top_p, self.min_p, self.temperature)
