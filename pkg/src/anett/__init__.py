"""Sparse aNETT: learned sparse regularization for sparse-view CT reconstruction."""
from . import experiments, grid, net, phantoms, regularizer, solver, tomo, training
from .regularizer import IdentityPrior, NetworkPrior, RegParams, reg_value
from .solver import TABLE1, SolverConfig, admm_solve, soft_threshold, xi_update
from .tomo import Geometry, IdentityOperator, RadonOperator, fbp, radon_adjoint, radon_forward

__version__ = "0.1.0"
