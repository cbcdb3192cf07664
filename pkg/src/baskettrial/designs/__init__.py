"""Trial designs: Simon's two-stage rule, Cochran's Q, predictive power, trial simulation."""

from .cochran import cochran_q, cochran_q_arrays
from .predictive import predictive_power, predictive_power_table
from .simon import SimonDesign, simon_minimax, simon_reject_prob
from .trials import (LiuDesign, TrialBatch, TrialResult, TwoStageDesign, generate_outcomes,
                     run_liu_trial, run_two_stage_trial, simulate_liu, simulate_two_stage)
