"""Differentiable sequence verifiers over mean-pooled token embeddings.

Every verifier here scores a complete sequence by pooling its token
embeddings (mean over positions) and applying a smooth head.  Because the
head only sees the pooled vector, the gradient returned by ``linearize`` is
a single ``d``-vector with respect to that pooled embedding.
"""
from dataclasses import dataclass

import numpy as np
from scipy.special import expit
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from .exceptions import DomainError
from .validation import check_embedding_table, check_random_state, check_sequence, check_sequences

GRADIENT_SPACES = ("probability", "logit")


@dataclass(frozen=True)
class Linearization:
    """First-order expansion point of a verifier at an anchor sequence."""

    score: float
    gradient: np.ndarray
    anchor_embedding: np.ndarray
    logit: float
    space: str = "probability"


class PooledVerifier(BaseEstimator):
    """Shared scoring/linearization logic; subclasses define the head."""

    link = "sigmoid"

    def _head(self, x):
        """Return ``(logit, d logit / d x)`` for a pooled embedding ``x``."""
        raise NotImplementedError

    def _head_batch(self, X):
        return np.array([self._head(x)[0] for x in X])

    @property
    def vocab_size_(self):
        return self.embeddings_.shape[0]

    @property
    def embed_dim_(self):
        return self.embeddings_.shape[1]

    def transform(self, X):
        """Mean-pooled embeddings, shape ``(n, d)``."""
        check_is_fitted(self, "embeddings_")
        X = np.asarray(X)
        if X.ndim == 1:
            X = X[None, :]
        X = check_sequences(X, self.vocab_size_, X.shape[1])
        if X.shape[1] == 0:
            raise DomainError("cannot pool an empty sequence")
        return self.embeddings_[X].mean(axis=1)

    def decision_function(self, X):
        return self._head_batch(self.transform(X))

    def score_sequences(self, X):
        logits = self.decision_function(X)
        return expit(logits) if self.link == "sigmoid" else logits

    def score_sequence(self, seq):
        return float(self.score_sequences(np.asarray(seq)[None, :])[0])

    def predict_proba(self, X):
        phi = self.score_sequences(X)
        return np.column_stack([1.0 - phi, phi])

    def predict(self, X, threshold=0.5):
        return (self.score_sequences(X) >= threshold).astype(int)

    def linearize(self, seq):
        check_is_fitted(self, "embeddings_")
        seq = check_sequence(seq, self.vocab_size_)
        x = self.transform(seq[None, :])[0]
        logit, dlogit = self._head(x)
        space = getattr(self, "gradient_space", "probability")
        if space not in GRADIENT_SPACES:
            raise DomainError(f"unknown gradient space {space!r}")
        if self.link == "sigmoid":
            score = float(expit(logit))
            slope = score * (1.0 - score)
        else:
            score = float(logit)
            slope = 1.0
        gradient = dlogit if space == "logit" else slope * dlogit
        return Linearization(score=score, gradient=gradient, anchor_embedding=x, logit=float(logit), space=space)


class MlpVerifier(PooledVerifier):
    """sigmoid(w2 . tanh(W1 x + b1) + b2) on the mean token embedding ``x``.

    ``fit`` draws the parameters from the seed; weights use
    Normal(0, 1/sqrt(fan_in)) and embeddings Normal(0, 1).  ``output_scale``
    multiplies the output layer (w2, b2); values above 1 give sharper
    scores, since mean pooling keeps the default logits close to zero.
    """

    def __init__(self, vocab_size=6, embed_dim=4, hidden_size=8, output_scale=1.0, gradient_space="probability",
                 random_state=7):
        self.vocab_size = vocab_size
        self.embed_dim = embed_dim
        self.hidden_size = hidden_size
        self.output_scale = output_scale
        self.gradient_space = gradient_space
        self.random_state = random_state

    def fit(self, X=None, y=None):
        V, d, h = int(self.vocab_size), int(self.embed_dim), int(self.hidden_size)
        rng = check_random_state(self.random_state)
        self.embeddings_ = rng.normal(0.0, 1.0, size=(V, d))
        self.W1_ = rng.normal(0.0, 1.0 / np.sqrt(d), size=(h, d))
        self.b1_ = rng.normal(0.0, 1.0 / np.sqrt(d), size=h)
        self.w2_ = self.output_scale * rng.normal(0.0, 1.0 / np.sqrt(h), size=h)
        self.b2_ = float(self.output_scale * rng.normal(0.0, 1.0 / np.sqrt(h)))
        return self

    @classmethod
    def from_params(cls, embeddings, W1, b1, w2, b2, gradient_space="probability"):
        table = check_embedding_table(embeddings)
        W1 = np.asarray(W1, dtype=float)
        b1 = np.asarray(b1, dtype=float)
        w2 = np.asarray(w2, dtype=float)
        h, d = W1.shape
        if d != table.shape[1] or b1.shape != (h,) or w2.shape != (h,):
            raise DomainError("inconsistent verifier parameter shapes")
        est = cls(vocab_size=table.shape[0], embed_dim=d, hidden_size=h, gradient_space=gradient_space, random_state=None)
        est.embeddings_, est.W1_, est.b1_, est.w2_, est.b2_ = table, W1, b1, w2, float(b2)
        return est

    @classmethod
    def constant(cls, embeddings, hidden_size=1, bias=0.0):
        """Verifier that ignores its input; scores ``sigmoid(bias)`` everywhere."""
        table = check_embedding_table(embeddings)
        d = table.shape[1]
        return cls.from_params(table, np.zeros((hidden_size, d)), np.zeros(hidden_size), np.zeros(hidden_size), bias)

    def _head(self, x):
        a = np.tanh(self.W1_ @ x + self.b1_)
        logit = float(self.w2_ @ a + self.b2_)
        return logit, self.W1_.T @ (self.w2_ * (1.0 - a**2))

    def _head_batch(self, X):
        return np.tanh(X @ self.W1_.T + self.b1_) @ self.w2_ + self.b2_

    def dumps(self):
        V, d = self.embeddings_.shape
        h = self.W1_.shape[0]
        blocks = [
            ("embeddings", self.embeddings_),
            ("W1", self.W1_),
            ("b1", self.b1_[None, :]),
            ("w2", self.w2_[None, :]),
            ("b2", np.array([[self.b2_]])),
        ]
        lines = [f"mlp {V} {d} {h} {self.gradient_space}"]
        for name, block in blocks:
            lines.append(name)
            lines.extend(" ".join(repr(float(v)) for v in row) for row in block)
        return "\n".join(lines) + "\n"

    @classmethod
    def loads(cls, text):
        lines = [ln for ln in text.splitlines() if ln.strip()]
        kind, V, d, h, space = lines[0].split()
        if kind != "mlp":
            raise DomainError(f"not an MLP verifier dump: {kind!r}")
        V, d, h = int(V), int(d), int(h)
        blocks, i = {}, 1
        for name, rows in (("embeddings", V), ("W1", h), ("b1", 1), ("w2", 1), ("b2", 1)):
            if lines[i] != name:
                raise DomainError(f"expected block {name!r}, found {lines[i]!r}")
            blocks[name] = np.array([[float(v) for v in ln.split()] for ln in lines[i + 1:i + 1 + rows]])
            i += 1 + rows
        return cls.from_params(
            blocks["embeddings"], blocks["W1"], blocks["b1"][0], blocks["w2"][0], blocks["b2"][0, 0], gradient_space=space
        )


class LinearVerifier(PooledVerifier):
    """link(w . x + b) on the mean token embedding.

    With ``link="sigmoid"`` and a small ``weight_scale`` the verifier stays
    in the near-linear region of the sigmoid; ``link="identity"`` makes it
    exactly affine so first-order expansions are exact.
    """

    def __init__(self, vocab_size=6, embed_dim=4, weight_scale=1.0, bias=0.0, link="sigmoid",
                 gradient_space="probability", random_state=7):
        self.vocab_size = vocab_size
        self.embed_dim = embed_dim
        self.weight_scale = weight_scale
        self.bias = bias
        self.link = link
        self.gradient_space = gradient_space
        self.random_state = random_state

    def fit(self, X=None, y=None):
        if self.link not in ("sigmoid", "identity"):
            raise DomainError(f"unknown link {self.link!r}")
        rng = check_random_state(self.random_state)
        self.embeddings_ = rng.normal(0.0, 1.0, size=(int(self.vocab_size), int(self.embed_dim)))
        self.w_ = self.weight_scale * rng.normal(0.0, 1.0, size=int(self.embed_dim))
        self.b_ = float(self.bias)
        return self

    @classmethod
    def from_params(cls, embeddings, w, b=0.0, link="sigmoid", gradient_space="probability"):
        table = check_embedding_table(embeddings)
        w = np.asarray(w, dtype=float)
        if w.shape != (table.shape[1],):
            raise DomainError("weight vector must match the embedding dimension")
        est = cls(vocab_size=table.shape[0], embed_dim=table.shape[1], bias=b, link=link,
                  gradient_space=gradient_space, random_state=None)
        est.embeddings_, est.w_, est.b_ = table, w, float(b)
        return est

    def _head(self, x):
        return float(self.w_ @ x + self.b_), self.w_.copy()

    def _head_batch(self, X):
        return X @ self.w_ + self.b_
