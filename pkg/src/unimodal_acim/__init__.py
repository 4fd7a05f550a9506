"""Invariant densities and linear response for Misiurewicz unimodal maps."""
from .analytic_map import (ConjugatedMap, MapSpec, PolynomialMap, critical_data, critical_orbit,
                           find_misiurewicz_parameter, landing_report, logistic)
from .errors import ArtifactError, ConfigError, HypothesisError, NumericalError
from .horseshoe import Horseshoe, build_horseshoe, find_periodic_u1
from .pipeline import Solved, solve_map
from .spikes import SpikeFamily, anchors_and_signs
from .susceptibility import (PerturbationField, lambda_scan, make_composition_family,
                             make_conjugation_family, make_inclass_family, scaling_diagnostics,
                             susceptibility_value, verify_derivative)
from .transfer import DensityModel, TransferModel, TransferOptions, observe, solve_acim

__version__ = "0.1.0"
