"""Exact-likelihood inference and simulation for the 1967 Abakaliki smallpox outbreak."""

__version__ = "0.1.0"

from .disease_model import AugmentedEvents, ModelParams, ModelStructure, StageDurations, log_likelihood
from .mcmc import ChainResult, PriorSpec, ProposalConfig, run_chain
from .population import DataError, VaccinationConfig, load_data
from .simulator import SimConfig, SimPopulation, simulate, simulate_conditional

__all__ = [
    "AugmentedEvents", "ChainResult", "DataError", "ModelParams", "ModelStructure", "PriorSpec",
    "ProposalConfig", "SimConfig", "SimPopulation", "StageDurations", "VaccinationConfig",
    "load_data", "log_likelihood", "run_chain", "simulate", "simulate_conditional",
]
