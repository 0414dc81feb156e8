"""Polaron-frame master-equation simulator with influence-functional benchmark."""

from polarsim.bath import (
    BathSpec,
    CorrelationTable,
    NumericsError,
    build_correlation_table,
    eta_kernel,
    lab_correlation,
    phonon_propagator,
    polaron_correlation,
    renormalization_B,
    spectral_density,
)
from polarsim.dynamics import (
    ConfigError,
    SystemSpec,
    Trajectory,
    evolve,
    rate_operators_markov,
    rate_operators_tcl,
    steady_state,
)
from polarsim.influence import (
    InfluenceTensors,
    OracleTrajectory,
    build_influence_tensors,
    propagate_quapi_dense,
    propagate_tempo,
    thermalize_initial,
)

__version__ = "0.1.0"
