"""Robust viability kernels for a sampled, controlled Ross-Macdonald dengue model."""
from .dynamics import (GAMMA, REFERENCE_ESTIMATE, REFERENCE_INITIAL, AggregateRates, DomainError,
                       IntegrationError, ModelParams, State, aggregate, flow_map_phi, phi_batch, rhs)
from .estimation import (FitProblem, FitResult, IncidenceSeries, PrevalenceSeries, aggregate_ranges,
                         fit, fit_multistart, incidence_to_prevalence, simulate_prevalence,
                         synthetic_incidence)
from .grid import (ControlGrid, StateGrid, UncertaintySet, ValueGrid, conservative_membership,
                   enumerate_uncertainties, make_state_grid)
from .robust_dp import (DpSolution, Horizon, Kernel, backward_sweep, compare_kernels, extract_kernel,
                        is_lower_set, kernel_boundary, verify_corners_mode)
from .strategy import (FeedbackStrategy, Scenario, Trajectory, random_scenario, simulate_closed_loop,
                       violation_report)

__version__ = "0.1.0"
