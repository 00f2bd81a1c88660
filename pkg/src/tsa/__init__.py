"""Toroidal subgroup analysis: learning and inference for commutative transformation groups."""

from .circular import GeneralizedVonMises, VonMisesConv, conv_to_nat, nat_to_conv
from .data import TSAModel, load_model, save_model
from .inference import map_coupled, posterior_coupled, posterior_maximal, stabilizer_representation
from .learning import TrainConfig, estimate_weights, log_marginal_coupled, log_marginal_uncoupled, sgd_train
from .toral import ToralBasis, apply_coupled, apply_maximal, orthogonalize

__version__ = "0.1.0"
