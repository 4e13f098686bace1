"""Floating-base rigid-body simulation with QP contact, impacts, and loop closures."""
from .model import (ContactPoint, Joint, Link, LoopClosure, ModelError, RobotModel, SimState,
                    load_model, load_sidecar, parse_urdf, validate_model)
from .kindyn import (bias_forces, compute_cache, forward_kinematics, free_acceleration,
                     inverse_dynamics, mass_matrix, point_bias_accel, point_jacobian)
from .qp import ActiveSetSolver, QpProblem, QpSolution, make_solver, solve
from .sim import SimConfig, Simulator, SimulationError, StepLog, run, step

__version__ = "0.1.0"
