"""Brute-force exact references for every quantity the decoder approximates.

Each enumerating op has two independent code paths: ``method="tensor"``
works on the LM's probability tensor with vectorized verifier calls, and
``method="loop"`` walks sequences one at a time with ``itertools.product``
and compensated summation.  They must agree to ~1e-12.
"""
import itertools
import json
import math
import time
from dataclasses import dataclass

import numpy as np

from . import __version__
from .exceptions import DegenerateConstraintError, DomainError, EnumerationLimitError
from .validation import check_embedding_table, check_sequence

MAX_ENUMERATION = 10**6
METHODS = ("tensor", "loop")


@dataclass
class OracleReport:
    value: object
    enumeration_size: int
    wall_time: float


def check_enumerable(vocab_size, n_free, limit=MAX_ENUMERATION):
    size = vocab_size**n_free
    if size > limit:
        raise EnumerationLimitError(f"enumerating {vocab_size}**{n_free} = {size} sequences exceeds {limit}")
    return size


def all_completions(prefix, vocab_size, horizon):
    """Every completion of ``prefix`` as rows of a ``(V**Δ, T)`` array, in C order."""
    prefix = np.asarray(prefix, dtype=np.int64)
    delta = horizon - prefix.size
    check_enumerable(vocab_size, delta)
    if delta == 0:
        return prefix[None, :].copy()
    conts = np.indices((vocab_size,) * delta).reshape(delta, -1).T
    return np.hstack([np.broadcast_to(prefix, (conts.shape[0], prefix.size)), conts])


def _check_method(method):
    if method not in METHODS:
        raise DomainError(f"method must be one of {METHODS}, got {method!r}")


def exact_expected_phi(lm, verifier, prefix, method="tensor"):
    """E_{p(. | prefix)}[phi(prefix . continuation)] by full enumeration."""
    _check_method(method)
    prefix = check_sequence(prefix, lm.vocab_size, max_length=lm.horizon)
    check_enumerable(lm.vocab_size, lm.horizon - prefix.size)
    if method == "tensor":
        weights = lm.continuation_dist(prefix).ravel()
        phi = verifier.score_sequences(all_completions(prefix, lm.vocab_size, lm.horizon))
        return float(weights @ phi)
    num, den = [], []
    for cont in itertools.product(range(lm.vocab_size), repeat=lm.horizon - prefix.size):
        seq = list(prefix) + list(cont)
        p = lm.joint_prob(seq)
        num.append(p * verifier.score_sequence(seq))
        den.append(p)
    total = math.fsum(den)
    if total <= 0.0:
        raise DomainError("prefix has zero probability")
    return math.fsum(num) / total


def exact_constrained_next_token(lm, verifier, prefix, method="tensor"):
    """p(y_{i+1} | prefix, constraint) proportional to p(y_{i+1} | prefix) E[phi | prefix . y_{i+1}]."""
    _check_method(method)
    prefix = check_sequence(prefix, lm.vocab_size)
    if prefix.size >= lm.horizon:
        raise DomainError("prefix is already complete")
    if method == "tensor":
        base = lm.next_token_dist(prefix)
        expected = np.array([
            exact_expected_phi(lm, verifier, np.append(prefix, v)) if base[v] > 0 else 0.0
            for v in range(lm.vocab_size)
        ])
        numer = base * expected
    else:
        # group joint * phi over all completions by the next token
        numer = np.zeros(lm.vocab_size)
        for v in range(lm.vocab_size):
            terms = []
            for cont in itertools.product(range(lm.vocab_size), repeat=lm.horizon - prefix.size - 1):
                seq = list(prefix) + [v] + list(cont)
                p = lm.joint_prob(seq)
                if p > 0.0:
                    terms.append(p * verifier.score_sequence(seq))
            numer[v] = math.fsum(terms)
    total = numer.sum()
    if total <= 0.0:
        raise DegenerateConstraintError(f"no continuation of {list(prefix)} satisfies the constraint")
    return numer / total


def local_categoricals(lm, anchor, clamped):
    """Per-position categoricals of the anchored pseudolikelihood, built directly from the LM."""
    anchor = check_sequence(anchor, lm.vocab_size, exact_length=lm.horizon)
    if not 0 <= clamped <= lm.horizon:
        raise DomainError(f"clamped prefix length {clamped} outside [0, {lm.horizon}]")
    cats = np.zeros((lm.horizon, lm.vocab_size))
    for j in range(lm.horizon):
        if j < clamped:
            cats[j, anchor[j]] = 1.0
        else:
            cats[j] = lm.masked_conditional(anchor, j)
    return cats


def _enumerate_factorized(cats, fn, method):
    """Sum of ``p(y) * fn(y)`` over every sequence ``y`` under independent categoricals ``cats``."""
    T, V = cats.shape
    support = [np.flatnonzero(row > 0.0) for row in cats]
    check_enumerable(V, sum(len(s) > 1 for s in support))
    if method == "tensor":
        grids = np.meshgrid(*support, indexing="ij")
        seqs = np.stack([g.ravel() for g in grids], axis=1)
        probs = np.prod(cats[np.arange(T), seqs], axis=1)
        values = fn(seqs)
        return np.tensordot(probs, values, axes=1)
    acc = []
    for seq in itertools.product(*support):
        p = math.prod(cats[j, t] for j, t in enumerate(seq))
        acc.append(p * np.asarray(fn(np.asarray(seq)[None, :]))[0])
    if np.ndim(acc[0]) == 0:
        return math.fsum(acc)
    return np.array([math.fsum(col) for col in np.stack(acc).T])


def exact_local_expected_embedding(lm, anchor, clamped, table, method="tensor"):
    """E_{p~_anchor}[mean embedding] by enumerating every sequence in the local support."""
    _check_method(method)
    table = check_embedding_table(table, lm.vocab_size)
    cats = local_categoricals(lm, anchor, clamped)
    return _enumerate_factorized(cats, lambda seqs: table[seqs].mean(axis=1), method)


def exact_factorized_expected_phi(categoricals, verifier, method="tensor"):
    """E[phi] under independent per-position categoricals, by enumeration."""
    _check_method(method)
    return float(_enumerate_factorized(np.asarray(categoricals, dtype=float), verifier.score_sequences, method))


def exact_local_expected_phi(lm, verifier, anchor, clamped, method="tensor"):
    """E_{p~_anchor}[phi] by enumeration of the anchored pseudolikelihood."""
    return exact_factorized_expected_phi(local_categoricals(lm, anchor, clamped), verifier, method)


def tv_distance(p, q):
    """Total variation distance between two distributions on the same support."""
    p = np.asarray(p, dtype=float)
    q = np.asarray(q, dtype=float)
    if p.shape != q.shape:
        raise DomainError(f"support mismatch: {p.shape} vs {q.shape}")
    return 0.5 * float(np.abs(p - q).sum())


def satisfaction_rates(lm, verifier, prefix, threshold):
    """Exact P[phi >= threshold] under the base continuation law and under the constrained posterior.

    The constrained posterior reweights each completion by its verifier score.
    Returns ``(base_rate, posterior_rate)``.
    """
    prefix = check_sequence(prefix, lm.vocab_size, max_length=lm.horizon)
    weights = lm.continuation_dist(prefix).ravel()
    phi = verifier.score_sequences(all_completions(prefix, lm.vocab_size, lm.horizon))
    hit = phi >= threshold
    posterior = weights * phi
    return float(weights[hit].sum()), float(posterior[hit].sum() / posterior.sum())


def timed(op, *args, **kwargs):
    start = time.perf_counter()
    value = op(*args, **kwargs)
    elapsed = time.perf_counter() - start
    return value, elapsed


def golden_battery(lm, verifier, prefixes, lm_params, verifier_params):
    """Exact constrained next-token distributions for ``prefixes``, checked by both enumerators."""
    records = []
    for prefix in prefixes:
        tensor = exact_constrained_next_token(lm, verifier, prefix, method="tensor")
        loop = exact_constrained_next_token(lm, verifier, prefix, method="loop")
        if np.max(np.abs(tensor - loop)) > 1e-12:
            raise AssertionError(f"oracle enumerators disagree on prefix {list(prefix)}")
        records.append({"prefix": [int(t) for t in prefix], "output": [float(v) for v in tensor]})
    return {
        "op": "exact_constrained_next_token",
        "tool_version": __version__,
        "fixture": {"lm": lm_params, "verifier": verifier_params},
        "records": records,
    }


def write_golden(battery, path):
    with open(path, "w") as fh:
        json.dump(battery, fh, indent=1, sort_keys=True)
        fh.write("\n")


def read_golden(path):
    with open(path) as fh:
        return json.load(fh)
