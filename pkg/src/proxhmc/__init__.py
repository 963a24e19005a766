"""Proximal Hamiltonian Monte Carlo for potentials with a non-smooth part."""
from . import diagnostics, prox, samplers, targets, tuning
from .prox import FistaSettings, ProxOperator, envelope_gradient, envelope_value, soft_threshold, svt
from .samplers import ChainTrace, PhaseState, SamplerConfig, run_chain
from .targets import SplitPotential, load_pima, logistic_target, matrix_target, toy_target

__version__ = "0.1.0"
