"""Numerical toolkit for Sobolev-type inequalities of symmetric positive
tensor fields on discretized compact submanifolds of Euclidean space, with an
ABP transport-map construction for end-to-end verification."""

from .linalg import (SpdCertificate, SymMatrix, cofactor_matrix, det,
                     matrix_amgm_check, min_eigenvalue, unit_ball_volume)
from .charts import (BoundarySample, CapPatch, Chart, ChartError,
                     DegenerateChartError, MetricData, NormalFrame,
                     SecondFormField, boundary_samples, induced_metric,
                     integrate, lift_codimension, mean_curvature, normal_frame,
                     second_fundamental_form)
from .fields import (CurvedChartError, FieldError, NormalField, TangentCovector,
                     TensorField, cofactor_field_from_convex_potential,
                     cofactor_tensor, conormal_flux_norm,
                     contract_with_second_form, divergence, normalize_scaling,
                     tensor_det, tensor_field)
from .inequality import (SobolevReport, equality_gap, evaluate_inequality,
                         michael_simon_constant, superadditivity_check)
from .scenarios import (ChartBundle, Polynomial, Scenario, ScenarioError, build,
                        catalog, parse_scenario, random_scenario)

__version__ = "0.1.0"

__all__ = [name for name in dir() if not name.startswith("_")]
