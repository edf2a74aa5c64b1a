"""Verifier-steered decoding for autoregressive language models on enumerable toy problems."""
__version__ = "0.1.0"

from .baselines import BeamSearchDecoder, BestOfNDecoder, RandomSampler, beam_search, best_of_n, random_sample
from .circuits import LocalFactorizedDistribution, build_local_distribution, validate_structure
from .decoding import SemanticControlDecoder, StepTrace, estimate_constraint_prob
from .exceptions import ConfigError, DegenerateConstraintError, DomainError, EnumerationLimitError
from .gibbs import GibbsSampler, NoisyConditionalLM
from .toy_models import LanguageModel, TabularJointLM, perplexity
from .validation import mean_embedding, validate_prob_vector
from .verifier import LinearVerifier, Linearization, MlpVerifier

__all__ = [
    "BeamSearchDecoder", "BestOfNDecoder", "ConfigError", "DegenerateConstraintError", "DomainError",
    "EnumerationLimitError", "GibbsSampler", "LanguageModel", "LinearVerifier", "Linearization",
    "LocalFactorizedDistribution", "MlpVerifier", "NoisyConditionalLM", "RandomSampler", "SemanticControlDecoder",
    "StepTrace", "TabularJointLM", "beam_search", "best_of_n", "build_local_distribution", "estimate_constraint_prob",
    "mean_embedding", "perplexity", "random_sample", "validate_prob_vector", "validate_structure",
]
