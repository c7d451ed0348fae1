"""Safe, maximally informative trajectory design for uncertain systems."""

from .cubature import CubatureRule, clenshaw_curtis_1d, integrate, tensor_rule
from .eig import (EigContext, approximate_marginal, eig_at_time, eig_gradient,
                  eig_total, mc_eig, realized_info_gain, true_eig_quadrature)
from .geometry import (Box, Zonotope, contains_point, intersection_empty,
                       linear_map, minkowski_sum)
from .planner import (FallbackAction, PlannerOptions, PlanResult, fallback,
                      optimize, verify_plan)
from .probability import (Gaussian, GaussianMixture, UniformBoxPrior,
                          cross_term, entropy_const, log_density,
                          mixture_log_density)
from .safety import (Obstacle, ObstacleSet, ReachAtlas, ReachInterval,
                     constraint_gradient, constraint_margins, load_reach_atlas,
                     sample_reach_atlas, save_reach_atlas)
from .scenario import Scenario, ScenarioError, load_scenario, rng_stream
from .simulate import (MeasurementSchedule, Trajectory, integrate_rk4,
                       integrate_rk4_batch, sample_measurements)
from .systems import (DesiredTrajectory, StaticBenchmark, SystemModel,
                      VehicleModel, VehicleParams, benchmark_measure,
                      desired_trajectory, tire_forces)

__version__ = "0.1.0"
