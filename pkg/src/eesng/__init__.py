"""One-shot architecture search with exploit-explore stochastic natural gradients.

Stage I trains a weight-sharing supernet jointly with a categorical
distribution over sub-network architectures; Stage II searches that supernet
under a cost budget without any fine-tuning.
"""

from .space import ArchitectureSpec, SearchSpace, cardinality, decode, encode, enumerate_space, expand
from .distribution import CategoricalParams, ControllerState, natural_gradient_step, uniform_init
from .search import RewardConfig, SearchResult, distribution_search, reward
from .trainer import TrainConfig, train

__version__ = "0.1.0"

__all__ = [
    "ArchitectureSpec", "SearchSpace", "cardinality", "decode", "encode", "enumerate_space", "expand",
    "CategoricalParams", "ControllerState", "natural_gradient_step", "uniform_init",
    "RewardConfig", "SearchResult", "distribution_search", "reward",
    "TrainConfig", "train",
]
