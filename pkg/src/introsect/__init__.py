"""Desk-scale simulation of hop-by-hop intersection attacks on onion-service intro circuits."""

from .attack import AttackConfig, intersect_step, run_full_attack, run_stage
from .harness import ExperimentConfig, run_experiment, run_sweep

__all__ = ["AttackConfig", "ExperimentConfig", "intersect_step", "run_experiment",
           "run_full_attack", "run_stage", "run_sweep"]
