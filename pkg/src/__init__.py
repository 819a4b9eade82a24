"""
PETC-IMC - Interval Markov chain abstractions and discounted-reward bounds for
stochastic periodic event-triggered control systems.
"""

__version__ = '1.0.0'
__author__ = 'PETC-IMC Team'

from .model import PETCSystem, InitialDistribution, RewardSpec, validate_system, trigger_violated
from .moments import MomentCalculator
from .geometry import HyperRect, Partition, grid_partition
from .gaussint import GaussianIntegrator
from .meanopt import MeanOptimizer
from .abstraction import AbstractionBuilder
from .imc import IntervalMarkovChain, IntervalValueIteration
from .sim import Simulator, mc_expectation
from .report import ReportGenerator

__all__ = [
    'PETCSystem',
    'InitialDistribution',
    'RewardSpec',
    'validate_system',
    'trigger_violated',
    'MomentCalculator',
    'HyperRect',
    'Partition',
    'grid_partition',
    'GaussianIntegrator',
    'MeanOptimizer',
    'AbstractionBuilder',
    'IntervalMarkovChain',
    'IntervalValueIteration',
    'Simulator',
    'mc_expectation',
    'ReportGenerator',
]
