"""Enumerable reference language models.

A :class:`TabularJointLM` stores an explicit joint distribution over all
``V**T`` sequences of a fixed horizon, so both the autoregressive
conditionals and the masked (all-other-positions) conditionals are exact.
"""
import json
import math
from abc import ABC, abstractmethod

import numpy as np
from scipy.special import softmax
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from .exceptions import DomainError, EnumerationLimitError
from .validation import check_random_state, check_sequence

MAX_ENUMERATION = 10**6


class LanguageModel(ABC):
    """Interface every language model used by the decoders must provide."""

    vocab_size: int
    horizon: int

    @abstractmethod
    def next_token_dist(self, prefix):
        """p(y_{i+1} | y_{1:i}) as a length-V probability vector."""

    @abstractmethod
    def masked_conditional(self, seq, pos):
        """p(y_pos | y_{-pos}) for a complete sequence."""

    def conditional_marginals(self, seq, free_positions):
        """Stack masked conditionals for ``free_positions`` (sorted ascending)."""
        positions = sorted(free_positions)
        if not positions:
            return np.empty((0, self.vocab_size))
        return np.stack([self.masked_conditional(seq, j) for j in positions])


class TabularJointLM(BaseEstimator, LanguageModel):
    """Joint distribution over fixed-length sequences given by one logit per sequence.

    Parameters
    ----------
    vocab_size : int
        Number of tokens ``V``.
    horizon : int
        Sequence length ``T``.
    sigma : float
        Standard deviation of the i.i.d. normal logits. Larger values give a
        more peaked joint.
    random_state : int
        Seed of the logit draw.
    logits : array of shape ``(V,) * T``, optional
        Explicit logits; overrides the random draw.  ``-inf`` entries are
        allowed and give zero-probability sequences.
    """

    def __init__(self, vocab_size=6, horizon=5, sigma=2.0, random_state=42, logits=None):
        self.vocab_size = vocab_size
        self.horizon = horizon
        self.sigma = sigma
        self.random_state = random_state
        self.logits = logits

    @classmethod
    def from_logits(cls, logits):
        logits = np.asarray(logits, dtype=float)
        return cls(vocab_size=logits.shape[0], horizon=logits.ndim, random_state=None, logits=logits).fit()

    @classmethod
    def uniform(cls, vocab_size, horizon):
        return cls.from_logits(np.zeros((vocab_size,) * horizon))

    @classmethod
    def factorized(cls, position_scores):
        """Joint whose logit is a sum of per-position token scores, shape ``(T, V)``."""
        scores = np.asarray(position_scores, dtype=float)
        horizon, vocab_size = scores.shape
        logits = np.zeros((vocab_size,) * horizon)
        for t in range(horizon):
            shape = [1] * horizon
            shape[t] = vocab_size
            logits = logits + scores[t].reshape(shape)
        return cls.from_logits(logits)

    def fit(self, X=None, y=None):
        V, T = int(self.vocab_size), int(self.horizon)
        if V < 2:
            raise DomainError("vocabulary needs at least two tokens")
        if T < 1:
            raise DomainError("horizon must be positive")
        if V**T > MAX_ENUMERATION:
            raise EnumerationLimitError(f"V**T = {V**T} exceeds the enumeration bound {MAX_ENUMERATION}")
        if self.logits is not None:
            logits = np.asarray(self.logits, dtype=float)
            if logits.shape != (V,) * T:
                raise DomainError(f"logits must have shape {(V,) * T}, got {logits.shape}")
        else:
            rng = check_random_state(self.random_state)
            logits = rng.normal(0.0, self.sigma, size=(V,) * T)
        self.logits_ = logits
        self.probs_ = softmax(logits.ravel()).reshape(logits.shape)
        # prefix_mass_[k] has shape (V,)*k: total mass of all completions of each length-k prefix
        masses = [self.probs_]
        for _ in range(T):
            masses.append(masses[-1].sum(axis=-1))
        self.prefix_mass_ = masses[::-1]
        return self

    def _complete(self, seq):
        check_is_fitted(self, "probs_")
        return check_sequence(seq, self.vocab_size, exact_length=self.horizon)

    def joint_prob(self, seq):
        seq = self._complete(seq)
        return float(self.probs_[tuple(seq)])

    def next_token_dist(self, prefix):
        check_is_fitted(self, "probs_")
        prefix = check_sequence(prefix, self.vocab_size)
        i = prefix.size
        if i >= self.horizon:
            raise DomainError(f"prefix length {i} leaves no position to predict (horizon {self.horizon})")
        key = tuple(prefix)
        total = self.prefix_mass_[i][key]
        if total <= 0.0:
            raise DomainError(f"prefix {list(key)} has zero probability")
        return self.prefix_mass_[i + 1][key] / total

    def masked_conditional(self, seq, pos):
        seq = self._complete(seq)
        if not 0 <= pos < self.horizon:
            raise DomainError(f"position {pos} outside [0, {self.horizon})")
        column = self.probs_[tuple(seq[:pos]) + (slice(None),) + tuple(seq[pos + 1:])]
        total = column.sum()
        if total <= 0.0:
            raise DomainError("context has zero probability under every token")
        return column / total

    def conditional_marginals(self, seq, free_positions):
        self._complete(seq)
        return super().conditional_marginals(seq, free_positions)

    def continuation_dist(self, prefix):
        """Exact p(y_{i+1:T} | y_{1:i}) as an array of shape ``(V,) * (T - i)``."""
        check_is_fitted(self, "probs_")
        prefix = check_sequence(prefix, self.vocab_size, max_length=self.horizon)
        block = self.probs_[tuple(prefix)]
        total = block.sum()
        if total <= 0.0:
            raise DomainError("prefix has zero probability")
        return block / total

    def to_dict(self):
        if self.logits is not None:
            raise DomainError("models built from explicit logits are not serializable; regenerate from parameters")
        return {
            "kind": "tabular_joint_lm",
            "vocab_size": int(self.vocab_size),
            "horizon": int(self.horizon),
            "sigma": float(self.sigma),
            "random_state": self.random_state,
        }

    @classmethod
    def from_dict(cls, data):
        if data.get("kind", "tabular_joint_lm") != "tabular_joint_lm":
            raise DomainError(f"not a tabular LM record: {data.get('kind')!r}")
        return cls(
            vocab_size=data["vocab_size"],
            horizon=data["horizon"],
            sigma=data["sigma"],
            random_state=data["random_state"],
        ).fit()

    def dumps(self):
        return json.dumps(self.to_dict(), sort_keys=True)

    @classmethod
    def loads(cls, text):
        return cls.from_dict(json.loads(text))


def perplexity(eval_lm, seqs):
    """Per-token perplexity of complete sequences under ``eval_lm``.

    Returns ``inf`` when any sequence has zero probability.
    """
    seqs = [np.asarray(s) for s in seqs]
    if not seqs:
        raise DomainError("perplexity needs at least one sequence")
    total = 0.0
    for s in seqs:
        p = eval_lm.joint_prob(s)
        if p <= 0.0:
            return math.inf
        total += math.log(p)
    return math.exp(-total / (len(seqs) * eval_lm.horizon))
