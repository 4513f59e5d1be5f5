"""Relaxation of integral functionals on div_eps-free fields over thin domains."""

from .convexify import (CaratheodoryDecomposition, ConvexEnvelope, PairwiseSplit, build_envelope,
                        caratheodory_constant, caratheodory_decompose, lattice_envelope_lp, pairwise_split)
from .density import (Density, MultiWellDensity, PiecewiseDensity, PNormDensity, check_structure,
                      density_from_config, energy, three_well_density)
from .experiments import (ConvergenceReport, ExperimentConfig, run_counterexample, run_gamma_experiment,
                          solve_barycentric)
from .grid import (Box, GridGeometry, VectorField, div_eps, is_in_U0, load_field, mollify_U0,
                   piecewise_constant_approx, rescale_from_thin, rescale_to_thin, save_field)
from .laminate import (LaminatePlan, corrector, ex2_sequence, horizontal_cutoff, ub1_field, ub2_assemble,
                       volume_fractions)
from .projection import NegSobolevEstimator, SpectralProjector, neg_sobolev_norm, project, project_asymptotic

__version__ = "0.1.0"
