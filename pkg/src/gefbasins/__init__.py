"""Gradient-flow basins of Gaussian entire functions.

The package samples Gaussian entire functions
``f(z) = sum_k xi_k z^k / sqrt(k!)``, locates the zeros and critical points
of the potential ``U(z) = log|f(z)| - |z|^2/2``, follows the gradient flow
``dZ/dt = -grad U(Z)`` into the zeros, tessellates the plane into basins,
cuts tentacles off equal-area partitions and aggregates ensemble statistics.
"""

__version__ = "0.1.0"

from .errors import (AssignmentError, CapacityError, ConservationError,  # noqa: E402
                     DegenerateCriticalPointError, DomainError, EnsembleAbortError, FormatError,
                     GefError, InconsistencyError, IntegrationError, MalformedPartitionError,
                     RegionNotContainedError, TessellationQualityError)
from .gef import (FieldJet, GefSample, coeff_covariance_bound, eval_jet, kernel_f,  # noqa: E402
                  kernel_xi, make_specimen, sample_from_manifest, sample_gef, sample_manifest,
                  taylor_coefficients, translate_eval, truncation_degree)
from .critical import (CriticalPoint, MorseCensus, Zero, classify, critical_search,  # noqa: E402
                       find_critical_points, find_zeros, morse_census, winding_number)
from .flow import (FlowDomain, IntegratorConfig, Trajectory, assign_sink,  # noqa: E402
                   integrate_gradient_curve, liouville_flow_area)
from .basins import (BasinGeometry, BasinMap, basin_geometry, extract_boundaries,  # noqa: E402
                     neighbor_graph, saddle_graph, tessellate)
from .cutoff import (PixelPartition, compute_radii, partition_from_basins,  # noqa: E402
                     run_cutoff, verify_cutoff)
