"""Input validation helpers and shared vocabulary/embedding primitives.

Token ids are 0-based (``0 .. V-1``). Sequences are 1-d integer arrays;
probability vectors are 1-d float arrays of length ``V``.
"""
import numbers

import numpy as np

from .exceptions import DomainError

PROB_ATOL = 1e-9


def check_random_state(seed):
    """Turn ``seed`` into a :class:`numpy.random.Generator`.

    ``None`` gives fresh entropy, an int or :class:`~numpy.random.SeedSequence`
    seeds a new PCG64 stream and an existing generator is passed through.
    """
    if isinstance(seed, np.random.Generator):
        return seed
    if seed is None or isinstance(seed, (numbers.Integral, np.random.SeedSequence)):
        return np.random.default_rng(seed)
    raise DomainError(f"cannot build a random generator from {seed!r}")


def check_sequence(seq, vocab_size, max_length=None, exact_length=None):
    """Validate a token sequence and return it as an int64 array."""
    arr = np.asarray(seq)
    if arr.ndim != 1:
        raise DomainError(f"sequence must be 1-d, got shape {arr.shape}")
    if arr.size and not np.issubdtype(arr.dtype, np.integer):
        if not np.all(np.equal(np.mod(arr, 1), 0)):
            raise DomainError("token ids must be integers")
    arr = arr.astype(np.int64)
    if arr.size and (arr.min() < 0 or arr.max() >= vocab_size):
        raise DomainError(f"token ids must lie in [0, {vocab_size})")
    if exact_length is not None and arr.size != exact_length:
        raise DomainError(f"expected a complete sequence of length {exact_length}, got {arr.size}")
    if max_length is not None and arr.size > max_length:
        raise DomainError(f"sequence length {arr.size} exceeds {max_length}")
    return arr


def check_sequences(X, vocab_size, length):
    """Validate a batch of complete sequences, shape ``(n, length)``."""
    arr = np.asarray(X)
    if arr.ndim == 1:
        arr = arr[None, :]
    if arr.ndim != 2 or arr.shape[1] != length:
        raise DomainError(f"expected sequences of shape (n, {length}), got {arr.shape}")
    arr = arr.astype(np.int64)
    if arr.size and (arr.min() < 0 or arr.max() >= vocab_size):
        raise DomainError(f"token ids must lie in [0, {vocab_size})")
    return arr


def check_embedding_table(table, vocab_size=None):
    table = np.asarray(table, dtype=float)
    if table.ndim != 2 or table.shape[1] < 1:
        raise DomainError(f"embedding table must be (V, d), got shape {table.shape}")
    if vocab_size is not None and table.shape[0] != vocab_size:
        raise DomainError(f"embedding table has {table.shape[0]} rows, expected {vocab_size}")
    if not np.all(np.isfinite(table)):
        raise DomainError("embedding table contains non-finite entries")
    return table


def validate_prob_vector(v, vocab_size=None, atol=PROB_ATOL):
    """Return True iff ``v`` is a valid categorical distribution.

    A wrong length is a caller error and raises rather than returning False.
    """
    v = np.asarray(v, dtype=float)
    if v.ndim != 1:
        raise DomainError("probability vector must be 1-d")
    if vocab_size is not None and v.size != vocab_size:
        raise DomainError(f"probability vector has {v.size} entries, expected {vocab_size}")
    if not np.all(np.isfinite(v)):
        return False
    return bool(np.all(v >= 0.0) and np.all(v <= 1.0 + atol) and abs(v.sum() - 1.0) <= atol)


def mean_embedding(seq, table):
    """Average token embedding of ``seq`` under ``table``."""
    table = np.asarray(table, dtype=float)
    seq = check_sequence(seq, table.shape[0])
    if seq.size == 0:
        raise DomainError("mean embedding of an empty sequence is undefined")
    return table[seq].mean(axis=0)
