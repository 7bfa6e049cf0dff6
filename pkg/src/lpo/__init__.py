"""Low-switching policy optimisation on finite discounted MDPs."""

from .driver import LPO, ConfigError, InvariantViolation, LpoConfig
from .function_class import LinearFunctionClass, TabularFunctionClass
from .mdp import AugmentedMdp, MdpSpec, Simulator, chain, grid, random_mdp
from .policy import MixturePolicy, SoftmaxPolicy
from .sensitivity import SensitivityDataset

__all__ = ["LPO", "ConfigError", "InvariantViolation", "LpoConfig", "LinearFunctionClass",
           "TabularFunctionClass", "AugmentedMdp", "MdpSpec", "Simulator", "chain", "grid",
           "random_mdp", "MixturePolicy", "SoftmaxPolicy", "SensitivityDataset"]
