"""Blocked Gibbs sampling of continuations, single-chain and Hogwild-parallel.

The sampler refines a crude continuation of a fixed prefix by repeatedly
picking a random block inside the continuation and resampling its tokens
from masked conditionals.  With several workers the shared sequence is
updated without locks: each worker reads a possibly stale snapshot and
writes tokens back one at a time.
"""
import csv
import itertools
import math
import threading
from concurrent.futures import ThreadPoolExecutor

import numpy as np
from scipy.special import softmax
from sklearn.base import BaseEstimator

from .exceptions import DomainError
from .sampling import draw, truncate_distribution
from .validation import check_random_state, check_sequence

INIT_MODES = ("crude-ar", "uniform")
BLOCK_MODES = ("sequential", "joint")


def initialize_sequence(lm, prefix, lookahead, mode, rng, top_p=1.0, min_p=0.0, head=()):
    """Extend ``prefix`` by ``lookahead`` tokens drawn independently per position.

    ``crude-ar`` draws every position from the (truncated) next-token
    distribution after the prefix; ``uniform`` draws uniformly over the
    vocabulary.  ``head`` tokens, if given, fill the first continuation
    positions instead of random draws (they stay free for the sampler).
    """
    prefix = check_sequence(prefix, lm.vocab_size)
    if prefix.size + lookahead != lm.horizon:
        raise DomainError(f"prefix length {prefix.size} + lookahead {lookahead} != horizon {lm.horizon}")
    if mode not in INIT_MODES:
        raise DomainError(f"unknown init mode {mode!r}")
    head = check_sequence(head, lm.vocab_size, max_length=lookahead)
    n = lookahead - head.size
    if n == 0:
        cont = []
    elif mode == "crude-ar":
        probs = truncate_distribution(lm.next_token_dist(prefix), top_p=top_p, min_p=min_p)
        cont = [draw(rng, probs) for _ in range(n)]
    else:
        cont = rng.integers(0, lm.vocab_size, size=n)
    return np.concatenate([prefix, head, np.asarray(cont, dtype=np.int64)])


class NoisyConditionalLM:
    """Wraps an LM and perturbs its masked conditionals with deterministic noise.

    The noise for a (context, position) pair is a fixed function of the
    seed, so the perturbed conditionals behave like a trained approximate
    model rather than fresh randomness.  ``noise_scale`` is the standard
    deviation added to the log-probabilities.
    """

    def __init__(self, lm, noise_scale=0.5, random_state=0):
        self.lm = lm
        self.noise_scale = noise_scale
        self.random_state = random_state
        self.vocab_size = lm.vocab_size
        self.horizon = lm.horizon

    def next_token_dist(self, prefix):
        return self.lm.next_token_dist(prefix)

    def masked_conditional(self, seq, pos):
        p = self.lm.masked_conditional(seq, pos)
        context = [int(t) for j, t in enumerate(seq) if j != pos]
        noise = np.random.default_rng([int(self.random_state), pos, *context]).normal(size=p.size)
        with np.errstate(divide="ignore"):
            return softmax(np.log(p) + self.noise_scale * noise)

    def conditional_marginals(self, seq, free_positions):
        positions = sorted(free_positions)
        if not positions:
            return np.empty((0, self.vocab_size))
        return np.stack([self.masked_conditional(seq, j) for j in positions])


def _joint_block_draw(lm, local, positions, rng):
    configs = list(itertools.product(range(lm.vocab_size), repeat=len(positions)))
    weights = np.empty(len(configs))
    trial = local.copy()
    for k, cfg in enumerate(configs):
        trial[positions] = cfg
        weights[k] = lm.joint_prob(trial)
    return configs[draw(rng, weights / weights.sum())]


def block_update(lm, shared, start, block_size, rng, block_mode="sequential"):
    """Resample ``shared[start:start+block_size]`` in place.

    Reads a snapshot of ``shared`` first; every new token is written back
    to ``shared`` individually, so concurrent writers may interleave.
    """
    local = shared.copy()
    positions = list(range(start, start + block_size))
    if block_mode == "sequential":
        for pos in positions:
            tok = draw(rng, lm.masked_conditional(local, pos))
            local[pos] = tok
            shared[pos] = tok
    elif block_mode == "joint":
        for pos, tok in zip(positions, _joint_block_draw(lm, local, positions, rng)):
            shared[pos] = tok
    else:
        raise DomainError(f"unknown block mode {block_mode!r}")


class GibbsSampler(BaseEstimator):
    """Blocked Gibbs sampler for lookahead continuations.

    Parameters
    ----------
    n_chains : int
        Independent chains per call to :meth:`sample`.
    n_iter : int
        Block updates per chain.
    thinning : int
        Keep the state every ``thinning`` updates after burn-in.
    block_size : int
        Tokens resampled per update; capped at the continuation length.
    n_workers : int
        Hogwild workers sharing one chain's state.  ``1`` is plain Gibbs.
    init : {"crude-ar", "uniform"}
    init_top_p, init_min_p : float
        Truncation of the crude autoregressive initialization.
    block_mode : {"sequential", "joint"}
        ``joint`` enumerates the exact block conditional (small V only).
    burn_in : int, optional
        Discarded updates; defaults to ``ceil(n_iter / 2)``.
    """

    def __init__(self, n_chains=2, n_iter=20, thinning=5, block_size=1, n_workers=1, init="crude-ar",
                 init_top_p=0.9, init_min_p=0.1, block_mode="sequential", burn_in=None):
        self.n_chains = n_chains
        self.n_iter = n_iter
        self.thinning = thinning
        self.block_size = block_size
        self.n_workers = n_workers
        self.init = init
        self.init_top_p = init_top_p
        self.init_min_p = init_min_p
        self.block_mode = block_mode
        self.burn_in = burn_in

    def validate(self, lookahead=None):
        problems = []
        for name in ("n_chains", "n_iter", "thinning", "block_size", "n_workers"):
            value = getattr(self, name)
            if not isinstance(value, (int, np.integer)) or value < 1:
                problems.append(f"{name} must be a positive integer, got {value!r}")
        if not problems and self.thinning > self.n_iter:
            problems.append(f"thinning {self.thinning} exceeds n_iter {self.n_iter}")
        if self.init not in INIT_MODES:
            problems.append(f"init must be one of {INIT_MODES}, got {self.init!r}")
        if self.block_mode not in BLOCK_MODES:
            problems.append(f"block_mode must be one of {BLOCK_MODES}, got {self.block_mode!r}")
        if self.burn_in is not None and not 0 <= self.burn_in <= self.n_iter:
            problems.append(f"burn_in must lie in [0, n_iter], got {self.burn_in!r}")
        if lookahead is not None and lookahead > 0 and self.block_size > lookahead:
            problems.append(f"block_size {self.block_size} exceeds lookahead {lookahead}")
        if problems:
            raise DomainError("; ".join(problems))

    @property
    def burn_in_(self):
        return math.ceil(self.n_iter / 2) if self.burn_in is None else self.burn_in

    def _keep(self, t):
        return t > self.burn_in_ and t % self.thinning == 0

    def _setup(self, lm, prefix, rng, head=()):
        prefix = check_sequence(prefix, lm.vocab_size, max_length=lm.horizon)
        self.validate()
        lookahead = lm.horizon - prefix.size
        state = initialize_sequence(lm, prefix, lookahead, self.init, rng, self.init_top_p, self.init_min_p, head)
        return prefix.size, lookahead, state

    def run_chain(self, lm, prefix, random_state=None, callback=None, head=()):
        """Single-threaded chain; returns the kept states.

        ``callback(t, state)`` is invoked after every update, for diagnostics.
        If burn-in and thinning keep nothing, the final state is returned.
        """
        rng = check_random_state(random_state)
        i, lookahead, state = self._setup(lm, prefix, rng, head)
        if lookahead == 0:
            return [state.copy()]
        B = min(self.block_size, lookahead)
        samples = []
        for t in range(1, self.n_iter + 1):
            start = int(rng.integers(i, lm.horizon - B + 1))
            block_update(lm, state, start, B, rng, self.block_mode)
            if callback is not None:
                callback(t, state)
            if self._keep(t):
                samples.append(state.copy())
        return samples or [state.copy()]

    def run_hogwild(self, lm, prefix, random_state=None, head=()):
        """Lock-free parallel chain with ``n_workers`` threads on one shared state.

        Updates are dealt round-robin to workers and grouped into epochs of
        ``thinning`` updates; workers meet at a barrier after each epoch and
        the state is recorded there.  With one worker the update sequence
        and random stream coincide with :meth:`run_chain`.
        """
        rng = check_random_state(random_state)
        i, lookahead, shared = self._setup(lm, prefix, rng, head)
        if lookahead == 0:
            return [shared.copy()]
        W = int(self.n_workers)
        worker_rngs = [rng] if W == 1 else rng.spawn(W)
        B = min(self.block_size, lookahead)
        epochs = [(s, min(s + self.thinning, self.n_iter)) for s in range(0, self.n_iter, self.thinning)]
        samples = []
        epoch_ends = iter([end for _, end in epochs])

        def collect():
            if self._keep(next(epoch_ends)):
                samples.append(shared.copy())

        barrier = threading.Barrier(W, action=collect)

        def worker(w):
            wrng = worker_rngs[w]
            try:
                for start_t, end_t in epochs:
                    for t in range(start_t + 1, end_t + 1):
                        if (t - 1) % W == w:
                            start = int(wrng.integers(i, lm.horizon - B + 1))
                            block_update(lm, shared, start, B, wrng, self.block_mode)
                    barrier.wait()
            except BaseException:
                barrier.abort()
                raise

        with ThreadPoolExecutor(max_workers=W) as pool:
            futures = [pool.submit(worker, w) for w in range(W)]
            errors = [f.exception() for f in futures]
        for err in errors:
            if err is not None and not isinstance(err, threading.BrokenBarrierError):
                raise err
        return samples or [shared.copy()]

    def sample(self, lm, prefix, random_state=None, n_samples=None, head=()):
        """Run ``n_chains`` chains (more if needed to reach ``n_samples``) and pool their states."""
        rng = check_random_state(random_state)
        run = self.run_chain if self.n_workers == 1 else self.run_hogwild
        samples, chains = [], 0
        while chains < self.n_chains or (n_samples is not None and len(samples) < n_samples):
            samples.extend(run(lm, prefix, rng.spawn(1)[0], head=head))
            chains += 1
        return samples if n_samples is None else samples[:n_samples]


def continuation_histogram(samples, prefix_length, vocab_size):
    """Empirical distribution of continuations as a flat array of length ``V**Δ``."""
    samples = np.asarray(samples)
    conts = samples[:, prefix_length:]
    delta = conts.shape[1]
    idx = np.ravel_multi_index(conts.T, (vocab_size,) * delta) if delta else np.zeros(len(samples), dtype=int)
    return np.bincount(idx, minlength=vocab_size**delta) / len(samples)


def convergence_trace(lm, prefix, sampler, random_state=None, n_chains=100):
    """TV distance to the exact continuation law of the cross-chain state at every update.

    Runs ``n_chains`` single-worker chains and, at each update index ``t``,
    compares the histogram of the ``n_chains`` current states with
    ``lm.continuation_dist(prefix)``.
    """
    rng = check_random_state(random_state)
    prefix = check_sequence(prefix, lm.vocab_size)
    exact = lm.continuation_dist(prefix).ravel()
    states = np.zeros((sampler.n_iter, n_chains, lm.horizon), dtype=np.int64)
    for c in range(n_chains):
        def record(t, state, c=c):
            states[t - 1, c] = state
        sampler.run_chain(lm, prefix, rng.spawn(1)[0], callback=record)
    trace = []
    for t in range(sampler.n_iter):
        emp = continuation_histogram(states[t], prefix.size, lm.vocab_size)
        trace.append((t + 1, 0.5 * float(np.abs(emp - exact).sum())))
    return trace


def write_trace_csv(trace, path):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["iteration", "tv"])
        for t, tv in trace:
            writer.writerow([t, f"{tv:.10f}"])
