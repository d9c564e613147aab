"""SRAM timing-yield workbench.

Compact exponential drain-current model with DIBL, least-squares parameter
extraction from I-V data, closed-form access/write failure statistics under
threshold-voltage variation, and a seeded transient Monte Carlo oracle to
validate the closed forms against.
"""

__version__ = "1.0.0"

from .devices import DeviceParams, OperatingPoint, ids_classic, ids_proposed, ids_transregional
from .errors import (
    DegenerateStatisticsError,
    DomainError,
    FitConvergenceError,
    ModelInapplicableError,
    ParseError,
    WorkbenchError,
)
from .fitting import FitOptions, FitReport, IVDataset, fit_device, generate_iv_grid, read_iv_csv
from .mc import McResult, VariationSpec, run_access_mc, run_write_mc, wilson_ci
from .transients import AssistConfig, CellConfig, apply_assist, delta_v_closed, delta_v_ode, write_time_closed, write_time_ode
from .yieldmodel import (
    AccessCharacterization,
    DeltaVDistribution,
    OffsetVoltageDist,
    WriteTimeDistribution,
    access_fail_prob_ber,
    access_fail_prob_fixed,
    estimate_delta_params,
    estimate_write_params,
    invert_for_constraint,
    pdf_delta,
    pdf_write,
    qq_points,
    relative_error,
    write_fail_prob,
)
