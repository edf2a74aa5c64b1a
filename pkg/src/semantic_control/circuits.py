"""Smooth, decomposable circuits for anchored factorized distributions.

The locally contextualized distribution anchored at a sequence ``a`` gives
position ``i`` the categorical ``p(y_i | a_{-i})`` and multiplies positions
together.  It is represented as a right-deep chain of binary product nodes
over categorical leaves, and the expected mean embedding is computed with a
single bottom-up pass over the circuit.
"""
from dataclasses import dataclass, field

import numpy as np

from .exceptions import DomainError
from .validation import check_embedding_table, check_sequence, validate_prob_vector


@dataclass(frozen=True, eq=False)
class Leaf:
    position: int
    probs: np.ndarray

    @property
    def scope(self):
        return frozenset([self.position])


@dataclass(frozen=True, eq=False)
class Sum:
    children: tuple
    weights: np.ndarray
    scope: frozenset = field(init=False)

    def __post_init__(self):
        object.__setattr__(self, "scope", frozenset().union(*(c.scope for c in self.children)))


@dataclass(frozen=True, eq=False)
class Product:
    children: tuple
    scope: frozenset = field(init=False)

    def __post_init__(self):
        object.__setattr__(self, "scope", frozenset().union(*(c.scope for c in self.children)))


def _postorder(root):
    seen, order, stack = set(), [], [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if id(node) in seen:
            continue
        if expanded or isinstance(node, Leaf):
            seen.add(id(node))
            order.append(node)
            continue
        stack.append((node, True))
        stack.extend((c, False) for c in reversed(node.children))
    return order


def validate_structure(root):
    """List structural violations; an empty list means smooth and decomposable."""
    problems = []
    for node in _postorder(root):
        if isinstance(node, Leaf):
            if not validate_prob_vector(node.probs):
                problems.append(f"leaf at position {node.position}: invalid categorical")
        elif isinstance(node, Sum):
            if not node.children:
                problems.append("sum node without children")
                continue
            scopes = {c.scope for c in node.children}
            if len(scopes) > 1:
                problems.append(f"smoothness: sum children have scopes {sorted(sorted(s) for s in scopes)}")
            w = np.asarray(node.weights, dtype=float)
            if w.shape != (len(node.children),) or np.any(w < 0) or abs(w.sum() - 1.0) > 1e-9:
                problems.append("sum weights must be non-negative and sum to one")
        elif isinstance(node, Product):
            if len(node.children) != 2:
                problems.append(f"product node has {len(node.children)} children, expected 2")
            elif node.children[0].scope & node.children[1].scope:
                overlap = sorted(node.children[0].scope & node.children[1].scope)
                problems.append(f"decomposability: product children share positions {overlap}")
        else:
            problems.append(f"unknown node type {type(node).__name__}")
    return problems


def evaluate_likelihood(root, seq):
    values = {}
    for node in _postorder(root):
        if isinstance(node, Leaf):
            values[id(node)] = float(node.probs[seq[node.position]])
        elif isinstance(node, Sum):
            values[id(node)] = float(sum(w * values[id(c)] for w, c in zip(node.weights, node.children)))
        else:
            values[id(node)] = float(np.prod([values[id(c)] for c in node.children]))
    return values[id(root)]


def evaluate_embedding_sum(root, table):
    """Bottom-up pass returning ``(mass, E[sum of embeddings over scope] * mass)``.

    Leaves emit the categorical expectation of the token embedding, sums
    mix their children, and products add each child's contribution scaled
    by the other child's normalization.
    """
    d = table.shape[1]
    values = {}
    for node in _postorder(root):
        if isinstance(node, Leaf):
            values[id(node)] = (float(node.probs.sum()), node.probs @ table)
        elif isinstance(node, Sum):
            mass, emb = 0.0, np.zeros(d)
            for w, c in zip(node.weights, node.children):
                m, e = values[id(c)]
                mass += w * m
                emb = emb + w * e
            values[id(node)] = (mass, emb)
        else:
            (m1, e1), (m2, e2) = (values[id(c)] for c in node.children)
            values[id(node)] = (m1 * m2, e1 * m2 + e2 * m1)
    return values[id(root)]


def product_chain(leaves):
    """Right-deep chain of binary products over ``leaves`` (a single leaf is returned as is)."""
    if not leaves:
        raise DomainError("cannot build a circuit over zero positions")
    node = leaves[-1]
    for leaf in reversed(leaves[:-1]):
        node = Product((leaf, node))
    return node


class LocalFactorizedDistribution:
    """Fully factorized distribution over length-T sequences, held as a circuit.

    Parameters
    ----------
    categoricals : array of shape ``(T, V)``
        Per-position categorical distributions.
    anchor : array of shape ``(T,)``, optional
        Sequence the categoricals were contextualized on.
    clamped : int
        Number of leading positions fixed to the anchor.
    """

    def __init__(self, categoricals, anchor=None, clamped=0):
        cats = np.asarray(categoricals, dtype=float)
        if cats.ndim != 2:
            raise DomainError("categoricals must be a (T, V) matrix")
        for i, row in enumerate(cats):
            if not validate_prob_vector(row):
                raise DomainError(f"categorical at position {i} is not a probability vector")
        self.categoricals = cats
        self.anchor = None if anchor is None else check_sequence(anchor, cats.shape[1], exact_length=cats.shape[0])
        self.clamped = int(clamped)
        self.root = product_chain([Leaf(i, row) for i, row in enumerate(cats)])

    @property
    def horizon(self):
        return self.categoricals.shape[0]

    @property
    def vocab_size(self):
        return self.categoricals.shape[1]

    def likelihood(self, seq):
        seq = check_sequence(seq, self.vocab_size, exact_length=self.horizon)
        return evaluate_likelihood(self.root, seq)

    def expected_mean_embedding(self, table):
        table = check_embedding_table(table)
        if table.shape[0] != self.vocab_size:
            raise DomainError(f"embedding table has {table.shape[0]} rows, distribution has {self.vocab_size} tokens")
        mass, emb = evaluate_embedding_sum(self.root, table)
        return emb / (mass * self.horizon)

    def validate(self):
        return validate_structure(self.root)


def _one_hot(token, vocab_size):
    v = np.zeros(vocab_size)
    v[token] = 1.0
    return v


def build_local_distribution(lm, anchor, clamped):
    """Anchored pseudolikelihood: one-hot on the first ``clamped`` positions, masked conditionals after."""
    anchor = check_sequence(anchor, lm.vocab_size, exact_length=lm.horizon)
    if not 0 <= clamped <= lm.horizon:
        raise DomainError(f"clamped prefix length {clamped} outside [0, {lm.horizon}]")
    free = range(clamped, lm.horizon)
    rows = [_one_hot(anchor[j], lm.vocab_size) for j in range(clamped)]
    if len(free):
        rows.extend(lm.conditional_marginals(anchor, free))
    return LocalFactorizedDistribution(np.stack(rows), anchor=anchor, clamped=clamped)


def build_marginal_distribution(lm, prefix):
    """Factorized distribution with the exact per-position marginals of p(. | prefix).

    Shares the first moment of every per-position token distribution with
    the true conditional, so expectations of functions that are affine in
    the mean embedding are exact under it.
    """
    prefix = check_sequence(prefix, lm.vocab_size, max_length=lm.horizon)
    i = prefix.size
    rows = [_one_hot(t, lm.vocab_size) for t in prefix]
    if i < lm.horizon:
        block = lm.continuation_dist(prefix)
        for k in range(block.ndim):
            axes = tuple(a for a in range(block.ndim) if a != k)
            rows.append(block.sum(axis=axes) if axes else block)
    return LocalFactorizedDistribution(np.stack(rows), anchor=None, clamped=i)
