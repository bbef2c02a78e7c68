"""flowslam: joint trajectory and background-flow-map estimation.

A vehicle carrying an inertial sensor and a relative-flow sensor (ADCP
style) navigates in an unknown flow field.  This package simulates such
missions in analytic gyre/turbulence fields and solves the batch estimation
problem for the full trajectory and a gridded flow map by sparse
Gauss-Newton with a damped conjugate-gradient linear solver.
"""

from .flow_models import (
    DomainError,
    FlowField,
    FlowFieldSpec,
    GyreParams,
    KsField,
    KsParams,
    double_gyre_velocity,
    field_velocity,
    fit_spectrum_slope,
    ks_energy_spectrum,
    ks_velocity,
    make_field,
    single_gyre_velocity,
)
from .flow_map import (
    CellWeights,
    FlowMap,
    GridSpec,
    OutOfMapError,
    interpolate,
    locate_cell,
    sample_truth,
)
from .states import RobotState, Trajectory, rotation_to_body, wrap_angle
from .sim import (
    ConfigError,
    AdcpSample,
    AdcpSeries,
    InsSample,
    InsSeries,
    NoiseChannel,
    SensorLog,
    SensorNoiseSpec,
    dead_reckon,
    default_noise_spec,
    generate_trajectory,
    simulate_sensors,
)

__version__ = "0.1.0"
