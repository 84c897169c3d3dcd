"""Splitting preconditioners and solvers for generalized saddle point systems."""

from .saddle import BlockVector, SaddleSystem, ShiftPair, SplittingSet
from .precond import EpssConfig, EpssOperator, PRESETS, build_operator, preset_config
from .krylov import SolveOptions, SolveReport, fgmres, gmres
from .problems import ProblemSpec, gen_oseen, gen_synthetic_singular, rhs_from_ones

__version__ = "0.1.0"
