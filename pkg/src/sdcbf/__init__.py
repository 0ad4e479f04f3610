"""Backup-controller control barrier functions for sampled-data systems.

Safety filtering that is robust to zero-order hold, bounded state
uncertainty, and known input delay, demonstrated end-to-end on a 4-state
Segway model.
"""

from .barrier import (AffineConstraint, BackupController, SafetySpec,
                      build_constraints, membership, position_bound_safety,
                      quadratic_backup_set, select_points)
from .config import Config, ConfigError, ScenarioConfig, load_config
from .dynamics import (ControlAffineModel, SegwayParams, Trajectory,
                       closed_loop_model, eval_dynamics, linear_model,
                       make_segway, simulate_zoh, step_zoh)
from .estimation import (EkfState, SensorModel, ekf_predict, ekf_update,
                         uncertainty_box)
from .harness import (RunResult, build_runtime, emit_csv, emit_plots,
                      parse_csv, run_grid, run_scenario)
from .qp import FilterProblem, QPResult, kkt_residuals, solve_filter_qp
from .safety_filter import (InputBuffer, SafetyFilter, check_zero_input_flow,
                            predict_delayed_state)
from .sensitivity import (SensitivityTrajectory, compose_sensitivities,
                          flow_with_sensitivity, step_jacobian)
from .setops import Box, Interval, box_sum, ellipsoid_box, interval_eval, reachable_box
from .synthesis import (GainCertificate, VertexFamily, availability_radius,
                        linearize_at_vertices, load_certificate, lqr_gain,
                        save_certificate, synthesize_gain, verify_decrease)

__version__ = "0.1.0"
