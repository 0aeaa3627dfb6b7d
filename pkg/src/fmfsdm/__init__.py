"""Few-mode-fiber space-division multiplexing of quantum and classical channels.

Power-flow random mode coupling, MUX/DeMUX and WDM device models, heralded
photon coincidence statistics and link-budget figures.
"""

__version__ = "0.1.0"

from .calibration import calibrate_coupling
from .counting import (
    CountingConfig,
    EventStream,
    accidental_rate,
    add_background,
    count_coincidences,
    fractional_quantum_power,
    group_fqp,
    output_ratio,
    simulate_pair_stream,
    snr,
    thin_stream,
)
from .devices import TransferMatrix, apply_transfer, apply_wdm_filter, detect, mux_from_measurements
from .model import (
    ChannelPlan,
    DetectorSpec,
    FiberSpec,
    ModeId,
    MuxDemuxSpec,
    WdmFilterSpec,
    db_to_linear,
    linear_to_db,
    mode_index,
)
from .pipeline import max_baud_rate, run_scenario, snr_vs_power_sweep
from .powerflow import (
    CouplingMatrix,
    build_coupling_matrix,
    group_transfer_fractions,
    propagate_power,
    steady_state_distribution,
)
from .scenario import Scenario, load_scenario, validate_scenario
