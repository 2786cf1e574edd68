"""fluxlab: Monte Carlo and quadrature checks of pathwise flux for diffusions dX = b dt + dW."""

from .analytic import (boundary_flux_integral, cone_flux_integral, gaussian_ball_probability,
                       gaussian_cone_probability, lateral_flux_integral)
from .config import ConfigError, ExperimentConfig, load_config, validate_config
from .engine import SeedPolicy, TimeGrid, batch_run, simulate_path
from .experiments import run_experiment
from .geometry import Ball, Box, CapCone, HalfSpaceCone, Implicit, PolyCone
from .models import constant_drift, custom_model, ray_model, stationary_symmetric

__version__ = "0.1.0"
