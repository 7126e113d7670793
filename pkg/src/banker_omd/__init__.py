"""Banker-OMD: online mirror descent bandits under delayed feedback."""

from .algorithms import (
    BankerBOLO,
    BankerSFLBINF,
    BankerSFTINF,
    BankerTINF,
    ConstantScalePolicy,
    UniformPolicy,
    vanilla_omd_run,
)
from .environment import DelaySchedule, Environment, FeedbackEvent, LossModel
from .geometry import make_regularizer, mirror_simplex, omd_step
from .harness import ExperimentConfig, run_experiment, run_monte_carlo, run_single
from .ledger import LedgerState, compose_action

__version__ = "0.1.0"
