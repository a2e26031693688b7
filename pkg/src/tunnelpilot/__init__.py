"""Desk-scale tunnel navigation stack.

Velocity/altitude-reference NMPC with lidar collision constraints solved by
PANOC plus a quadratic-penalty loop, a weighted-mean heading corrector, and a
ray-cast corridor simulator with batch and live operation modes.
"""

from .config import (Config, ControlInput, MavState, ModelParams, NmpcWeights,
                     HeadingParams, ReferenceCommand, SimParams, load_config)
from .dynamics import StateDerivative, derivative, step_euler, step_oracle
from .nmpc import (NmpcContext, PredictedTrajectory, assemble_state,
                   constraint_residuals, control_step, cost, gradient)
from .perception import (HeadingFilterState, LidarScan, ObstacleDistances,
                         heading_rate_cmd, heading_update, sector_distances,
                         weighted_mean_heading)
from .sim import (Scenario, SimVehicle, SimulationLoop, TunnelWorld,
                  builtin_scenarios, raycast, run_scenario, vehicle_step)
from .solver import (NlpProblem, NlpSolution, PanocSolver, PenaltySchedule,
                     SolveStatus, panoc_solve, penalty_solve)

__version__ = "0.1.0"
