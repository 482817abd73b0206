"""Spectral/energy-efficiency optimization of (STAR-)RIS-assisted short-packet networks."""

from .topology import (
    NetworkTopology,
    PropagationParams,
    PhaseAmplitudeModel,
    default_topology,
    single_cell_edge_topology,
)
from .channels import ChannelSet, RisState, generate_channels, effective_channel
from .metrics import (
    FblParams,
    EnergyParams,
    RateReport,
    FblCurveAnalysis,
    q_inv,
    sinr,
    dispersion,
    fbl_rate,
    lemma2_analysis,
    per_user_ee,
    gee,
    latency_threshold,
    rate_report,
)
from .beam_opt import BeamformingSet, UtilitySpec, update_beams, utility_value
from .ris_opt import CcpOptions, update_ris
from .convex import ConvexSubproblem, SolveResult, SolverOptions, solve
from .framework import AoOptions, AoState, init_maxmin_sinr, optimize
from .harness import Scenario, SweepSpec, ResultTable, run_single, run_sweep, emit

__version__ = "0.1.0"
