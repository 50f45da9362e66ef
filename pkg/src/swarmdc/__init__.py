"""Density control laboratory for large heterogeneous second-order swarms.

Simulates populations of stochastic agents under a density feedback plus
backstepping control law, estimates their density online, and verifies the
closed-loop behavior against an independent finite-volume solver of the
corresponding transport equation.
"""

from .fields import (
    BilinearSampler,
    DiffusionMatrix,
    Grid,
    ScalarField,
    TensorField,
    VectorField,
    divergence,
    gradient,
    jacobian,
    l2_norm,
    laplacian,
    mass,
    read_grid_file,
    sample_bilinear,
    second_derivative,
    sigma_flux,
    write_grid_file,
)
from .fpk import CflViolation, FpkState, check_cfl, fpk_step, run_fpk
from .kde import KdeConfig, kde_estimate
from .control import (
    AgentChannel,
    ControlFields,
    ControlParams,
    backstepping_input,
    backstepping_input_batch,
    build_control_fields,
    density_feedback,
    sample_control_fields,
    stabilized_input_scale,
)
from .agents import (
    AgentState,
    RngStream,
    RobotState,
    em_step_integrator,
    em_step_robot,
    feedback_linearize,
    reflect_boundary,
    robot_velocity_command,
)
from .scenario import (
    CompareRecord,
    ConfigError,
    GaussianMixture,
    MetricsRecord,
    ScenarioConfig,
    ScenarioError,
    bundled_config_path,
    compare_mc_fpk,
    parse_config,
    run_fpk_scenario,
    run_scenario,
    target_density,
)

__version__ = "0.1.0"
