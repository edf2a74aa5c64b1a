"""Named toy fixtures used by the tests, the acceptance suite and the CLI."""
import numpy as np

from .toy_models import TabularJointLM
from .verifier import LinearVerifier, MlpVerifier

TOY_A = {"vocab_size": 6, "horizon": 5, "embed_dim": 4, "sigma": 2.0, "lm_seed": 42, "verifier_seed": 7, "hidden_size": 8}


def toy_a_lm(**overrides):
    params = dict(vocab_size=TOY_A["vocab_size"], horizon=TOY_A["horizon"], sigma=TOY_A["sigma"],
                  random_state=TOY_A["lm_seed"])
    params.update(overrides)
    return TabularJointLM(**params).fit()


def toy_a_verifier(**overrides):
    params = dict(vocab_size=TOY_A["vocab_size"], embed_dim=TOY_A["embed_dim"], hidden_size=TOY_A["hidden_size"],
                  random_state=TOY_A["verifier_seed"])
    params.update(overrides)
    return MlpVerifier(**params).fit()


def toy_a_linear_verifier(**overrides):
    params = dict(vocab_size=TOY_A["vocab_size"], embed_dim=TOY_A["embed_dim"], random_state=TOY_A["verifier_seed"])
    params.update(overrides)
    return LinearVerifier(**params).fit()


def golden_prefixes(count=50, seed=2024, max_length=3):
    """Seeded prefixes of length 0..max_length over the TOY-A vocabulary."""
    rng = np.random.default_rng(seed)
    return [rng.integers(0, TOY_A["vocab_size"], size=int(rng.integers(0, max_length + 1))) for _ in range(count)]
