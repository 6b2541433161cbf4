"""Anonymous symbol-level MIMO precoding: SOCP precoder design, GLRT sender
detection, KLD anonymity metrics and a seeded Monte-Carlo harness."""

from .combiner import AntennaPartition, PegcCombiner, build_combiner, build_partition, combine
from .detector import DetectionOutcome, decode_symbols, glrt_detect, test_statistic
from .errors import (AnonMimoError, ConfigError, DimensionMismatch, EmptyResult, InfeasibleTimeslot,
                     InvalidDimensions, RankDeficient, RootNotFound)
from .harness import ExperimentSpec, Report, TrialOutcome, emit_report, preset, run_experiment, run_trial
from .metrics import anonymity_report, e_const, e_const_sweep, kld_closed_form, trace_delta
from .model import SystemConfig, sample_channels, sample_noise_profile, sample_symbols, select_alias_set
from .precoder import CiGeometry, PrecodedBlock, assemble_p2, design_block
from .socp import SocpProblem, SocpSolution, solve_socp, solve_socp_batch

__version__ = "0.1.0"
