"""Verifier-steered next-token decoding with Taylor-estimated constraint probabilities.

For every top-k candidate token the decoder draws lookahead continuations
with Gibbs sampling, builds the anchored factorized distribution around
each continuation, and estimates the probability that the verifier accepts
as a first-order expansion of the verifier around that continuation.  The
averaged estimates reweight the base next-token distribution.
"""
import json
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from typing import NamedTuple

import numpy as np
from scipy.special import expit, logsumexp, softmax
from sklearn.base import BaseEstimator, clone
from sklearn.utils.validation import check_is_fitted

from .circuits import build_local_distribution, build_marginal_distribution
from .exceptions import ConfigError, DomainError
from .gibbs import GibbsSampler
from .sampling import draw, top_k_candidates
from .validation import check_random_state, check_sequence

RENORM_MODES = ("probability", "logits")
OBJECTIVES = ("maximize", "minimize")
ACCUMULATE_MODES = ("candidate", "sample")
LOOKAHEAD_MODES = ("gibbs", "exact-marginals")

# spawn-key tag separating lookahead streams from the token-sampling stream
_LOOKAHEAD_TAG = 0x51


class TaylorEstimate(NamedTuple):
    raw: float
    clamped: float


def estimate_constraint_prob(dist, lin, table, eps=1e-4):
    """phi(s) + grad . (E[mean embedding] - mean embedding(s)), plus its clamp to [eps, 1 - eps].

    When the linearization was taken in logit space the expansion is done on
    the logit and mapped back through the sigmoid.
    """
    if not 0.0 < eps < 0.5:
        raise DomainError(f"eps must lie in (0, 0.5), got {eps}")
    expected = dist.expected_mean_embedding(table)
    if expected.shape != lin.gradient.shape:
        raise DomainError(f"embedding dimension {expected.shape} does not match gradient {lin.gradient.shape}")
    shift = float(lin.gradient @ (expected - lin.anchor_embedding))
    raw = float(expit(lin.logit + shift)) if lin.space == "logit" else lin.score + shift
    return TaylorEstimate(raw, float(np.clip(raw, eps, 1.0 - eps)))


@dataclass
class StepTrace:
    prefix: list
    candidates: list
    base_log_probs: list
    q_raw: list
    q: list
    log_q: list
    probs: list
    renorm: str
    chosen: int = None
    flags: list = field(default_factory=list)

    def to_dict(self):
        return asdict(self)

    def to_json(self):
        return json.dumps(self.to_dict(), sort_keys=True)


class SemanticControlDecoder(BaseEstimator):
    """Reweights an LM's next-token distribution toward sequences a verifier accepts.

    Parameters
    ----------
    top_k : int
        Candidates considered per step (fewer if fewer tokens have mass).
    n_lookahead : int, optional
        Lookahead samples per candidate; defaults to whatever the sampler's
        chains produce.
    sampler : GibbsSampler, optional
        Lookahead sampler; defaults to ``GibbsSampler()``.
    strength : float
        Exponent on the constraint term, ``w = log p + strength * log q``.
    renorm : {"probability", "logits"}
        ``probability`` normalizes the clamped estimates before the log;
        ``logits`` applies a log-softmax treating the estimates as logits.
    eps : float
        Estimates are clamped to ``[eps, 1 - eps]`` before the log.
    objective : {"maximize", "minimize"}
        ``minimize`` steers toward ``1 - phi``.
    accumulate : {"candidate", "sample"}
        ``candidate`` clamps each candidate during lookahead and averages its
        estimates; ``sample`` leaves the next position free and adds every
        estimate to the bucket of the token the sample ended up with.
    lookahead : {"gibbs", "exact-marginals"}
        ``exact-marginals`` replaces the anchored distribution by one with the
        exact per-position marginals of the continuation (oracle mode).
    n_jobs : int
        Threads used to evaluate candidates.
    random_state : int, optional
    """

    def __init__(self, top_k=10, n_lookahead=None, sampler=None, strength=1.0, renorm="probability", eps=1e-4,
                 objective="maximize", accumulate="candidate", lookahead="gibbs", n_jobs=1, random_state=None):
        self.top_k = top_k
        self.n_lookahead = n_lookahead
        self.sampler = sampler
        self.strength = strength
        self.renorm = renorm
        self.eps = eps
        self.objective = objective
        self.accumulate = accumulate
        self.lookahead = lookahead
        self.n_jobs = n_jobs
        self.random_state = random_state

    def _validate_params(self):
        problems = []
        if not isinstance(self.top_k, (int, np.integer)) or self.top_k < 1:
            problems.append(f"top_k must be a positive integer, got {self.top_k!r}")
        if self.n_lookahead is not None and (not isinstance(self.n_lookahead, (int, np.integer)) or self.n_lookahead < 1):
            problems.append(f"n_lookahead must be a positive integer, got {self.n_lookahead!r}")
        if not self.strength >= 0.0:
            problems.append(f"strength must be non-negative, got {self.strength!r}")
        if not 0.0 < self.eps < 0.5:
            problems.append(f"eps must lie in (0, 0.5), got {self.eps!r}")
        for name, allowed in (("renorm", RENORM_MODES), ("objective", OBJECTIVES),
                              ("accumulate", ACCUMULATE_MODES), ("lookahead", LOOKAHEAD_MODES)):
            if getattr(self, name) not in allowed:
                problems.append(f"{name} must be one of {allowed}, got {getattr(self, name)!r}")
        if problems:
            raise ConfigError(problems)

    def fit(self, lm, verifier):
        """Attach the language model and verifier."""
        self._validate_params()
        self.sampler_ = GibbsSampler() if self.sampler is None else clone(self.sampler)
        self.sampler_.validate()
        if verifier.vocab_size_ != lm.vocab_size:
            raise DomainError(f"verifier vocabulary {verifier.vocab_size_} != LM vocabulary {lm.vocab_size}")
        self.lm_ = lm
        self.verifier_ = verifier
        return self

    def _seed(self, entropy, spawn_key, step, token):
        return np.random.SeedSequence(entropy, spawn_key=tuple(spawn_key) + (_LOOKAHEAD_TAG, step, int(token)))

    def _estimates(self, samples, clamped):
        lm, verifier = self.lm_, self.verifier_
        table = verifier.embeddings_
        if self.lookahead == "exact-marginals":
            dist = build_marginal_distribution(lm, samples[0][:clamped])
        out = []
        for s in samples:
            local = dist if self.lookahead == "exact-marginals" else build_local_distribution(lm, s, clamped)
            out.append(estimate_constraint_prob(local, verifier.linearize(s), table, self.eps).raw)
        return out

    def _candidate_q(self, prefix, token, seed):
        clamp = np.append(prefix, token)
        samples = self.sampler_.sample(self.lm_, clamp, np.random.default_rng(seed), n_samples=self.n_lookahead)
        return float(np.mean(self._estimates(samples, clamp.size)))

    def _bucket_q(self, prefix, token, seed, candidates):
        samples = self.sampler_.sample(self.lm_, prefix, np.random.default_rng(seed), n_samples=self.n_lookahead,
                                       head=[token])
        ests = self._estimates(samples, prefix.size + 1)
        return [(int(s[prefix.size]), e) for s, e in zip(samples, ests)]

    def next_token_distribution(self, prefix, random_state=None, step=0):
        """Constrained next-token distribution over the full vocabulary, and its trace.

        Tokens outside the candidate set get probability zero.
        """
        check_is_fitted(self, "lm_")
        lm = self.lm_
        prefix = check_sequence(prefix, lm.vocab_size)
        if prefix.size >= lm.horizon:
            raise DomainError(f"prefix length {prefix.size} leaves nothing to decode (horizon {lm.horizon})")
        ss = _seed_sequence(random_state)
        base = lm.next_token_dist(prefix)
        candidates = top_k_candidates(base, self.top_k)
        flags = []
        if candidates.size < self.top_k:
            flags.append(f"candidate set shrunk to {candidates.size} tokens with nonzero probability")
        seeds = [self._seed(ss.entropy, ss.spawn_key, step, c) for c in candidates]

        if self.accumulate == "candidate":
            jobs = [(prefix, c, s) for c, s in zip(candidates, seeds)]
            q_raw = np.array(self._map(lambda a: self._candidate_q(*a), jobs))
        else:
            jobs = [(prefix, c, s, candidates) for c, s in zip(candidates, seeds)]
            position = {int(c): k for k, c in enumerate(candidates)}
            q_raw = np.zeros(candidates.size)
            dropped = 0
            for pairs in self._map(lambda a: self._bucket_q(*a), jobs):
                for tok, est in pairs:
                    if tok in position:
                        q_raw[position[tok]] += est
                    else:
                        dropped += 1
            if dropped:
                flags.append(f"{dropped} lookahead samples fell outside the candidate set")

        q = np.clip(q_raw, self.eps, 1.0 - self.eps)
        if np.all(q_raw <= self.eps):
            flags.append("all constraint estimates clamped to eps")
        if self.objective == "minimize":
            q = 1.0 - q
        if self.renorm == "probability":
            log_q = np.log(q) - np.log(q.sum())
        else:
            log_q = q - logsumexp(q)
        log_base = np.log(base[candidates])
        probs = softmax(log_base + self.strength * log_q)

        full = np.zeros(lm.vocab_size)
        full[candidates] = probs
        trace = StepTrace(
            prefix=[int(t) for t in prefix],
            candidates=[int(c) for c in candidates],
            base_log_probs=[float(v) for v in log_base],
            q_raw=[float(v) for v in q_raw],
            q=[float(v) for v in q],
            log_q=[float(v) for v in log_q],
            probs=[float(v) for v in probs],
            renorm=self.renorm,
            flags=flags,
        )
        return full, trace

    def _map(self, fn, jobs):
        if self.n_jobs == 1 or len(jobs) < 2:
            return [fn(j) for j in jobs]
        with ThreadPoolExecutor(max_workers=self.n_jobs) as pool:
            return list(pool.map(fn, jobs))

    def predict_proba(self, prefixes):
        """Constrained next-token distributions, one row per prefix."""
        return np.stack([self.next_token_distribution(p, self.random_state)[0] for p in prefixes])

    def generate(self, prefix, random_state=None):
        """Sample a complete sequence token by token; returns ``(sequence, traces)``.

        Token choices consume ``random_state``'s stream exactly like
        :func:`~semantic_control.baselines.random_sample`; lookahead streams
        are derived from its seed without consuming it.
        """
        check_is_fitted(self, "lm_")
        rng = check_random_state(self.random_state if random_state is None else random_state)
        ss = rng.bit_generator.seed_seq
        seq = check_sequence(prefix, self.lm_.vocab_size)
        if seq.size >= self.lm_.horizon:
            raise DomainError(f"prefix length {seq.size} leaves nothing to decode (horizon {self.lm_.horizon})")
        traces = []
        step = 0
        while seq.size < self.lm_.horizon:
            probs, trace = self.next_token_distribution(seq, ss, step=step)
            token = draw(rng, probs)
            trace.chosen = token
            traces.append(trace)
            seq = np.append(seq, token)
            step += 1
        return seq, traces

    def predict(self, prefixes):
        rng = check_random_state(self.random_state)
        return np.stack([self.generate(p, child)[0] for p, child in zip(prefixes, rng.spawn(len(prefixes)))])


def _seed_sequence(random_state):
    if isinstance(random_state, np.random.SeedSequence):
        return random_state
    if isinstance(random_state, np.random.Generator):
        return random_state.bit_generator.seed_seq
    return np.random.SeedSequence(random_state)
