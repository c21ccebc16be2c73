"""Symmetric positive (0,2)-tensor fields on chart grids and their derived data.

A field stores lower-index components per grid node plus an optional array of
exact partial derivatives; when derivatives are absent they are recovered with
the chart's finite-difference stencils.  All three boundary/interior integrands
of the inequality (covariant divergence, contraction with the second
fundamental form, conormal flux norm) live here, together with determinant,
cofactor and the scaling normalization.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .charts import BoundarySample, Chart, MetricData, SecondFormField
from .linalg import DEFAULT_PSD_TOL, SpdCertificate


class FieldError(ValueError):
    pass


@dataclass(frozen=True)
class TensorField:
    """Grid-sampled symmetric (0,2)-tensor, uniformly positive w.r.t. the metric."""

    values: np.ndarray                 # (*shape, n, n), chart coordinates, lower indices
    ellipticity: SpdCertificate
    derivs: np.ndarray | None = None   # (*shape, k, i, j): exact d_k A_ij, optional


def _relative_eigenvalues(values, metric: MetricData) -> np.ndarray:
    """Eigenvalues of g^{-1} A per node (symmetrized via g^{-1/2} A g^{-1/2})."""
    w, q = np.linalg.eigh(metric.g)
    inv_half = np.einsum("...ik,...k,...jk->...ij", q, 1.0 / np.sqrt(w), q)
    sym = np.einsum("...ik,...kl,...lj->...ij", inv_half, values, inv_half)
    return np.linalg.eigvalsh(sym)


def tensor_field(values, metric: MetricData, derivs=None,
                 tolerance: float = DEFAULT_PSD_TOL) -> TensorField:
    """Build a TensorField, certifying uniform positivity of g^{-1} A."""
    chart = metric.chart
    if chart.intrinsic_dim < 2:
        raise FieldError("tensor fields require intrinsic dimension >= 2 "
                         "(the determinant exponent 1/(n-1) is undefined for n = 1)")
    vals = np.asarray(values, dtype=float)
    if vals.shape != chart.shape + (chart.intrinsic_dim,) * 2:
        raise FieldError(f"field values have shape {vals.shape}, expected "
                         f"{chart.shape + (chart.intrinsic_dim,) * 2}")
    vals = 0.5 * (vals + np.swapaxes(vals, -1, -2))
    min_eig = float(np.min(_relative_eigenvalues(vals, metric)))
    cert = SpdCertificate(min_eig, tolerance)
    if not cert.valid:
        raise FieldError(f"field is not uniformly positive: min relative eigenvalue "
                         f"{min_eig:.3e} below tolerance {tolerance:.1e}")
    if derivs is not None:
        derivs = np.asarray(derivs, dtype=float)
        if derivs.shape != chart.shape + (chart.intrinsic_dim,) * 3:
            raise FieldError("derivative array has the wrong shape")
    return TensorField(values=vals, ellipticity=cert, derivs=derivs)


def scaled(field: TensorField, factor: float) -> TensorField:
    if factor <= 0:
        raise FieldError("scaling factor must be positive")
    return TensorField(
        values=field.values * factor,
        ellipticity=SpdCertificate(field.ellipticity.min_eigenvalue * factor,
                                   field.ellipticity.tolerance),
        derivs=None if field.derivs is None else field.derivs * factor,
    )


@dataclass(frozen=True)
class TangentCovector:
    """Covector field (lower index) with its metric norm."""

    components: np.ndarray  # (*shape, n)
    metric: MetricData

    def norm(self) -> np.ndarray:
        sq = np.einsum("...ij,...i,...j->...", self.metric.g_inv,
                       self.components, self.components)
        return np.sqrt(np.maximum(sq, 0.0))


@dataclass(frozen=True)
class NormalField:
    """Normal-vector field given by orthonormal-frame components."""

    components: np.ndarray  # (*shape, m)

    def norm(self) -> np.ndarray:
        return np.sqrt(np.einsum("...m,...m->...", self.components, self.components))


def field_derivatives(field: TensorField, metric: MetricData) -> np.ndarray:
    """d_k A_ij: exact when the field carries closures, FD otherwise."""
    if field.derivs is not None:
        return field.derivs
    chart = metric.chart
    return np.stack([chart.derivative(field.values, a)
                     for a in range(chart.intrinsic_dim)], axis=-3)


def covariant_derivative(field: TensorField, metric: MetricData) -> np.ndarray:
    """D_k A_ij = d_k A_ij - Gamma^l_ki A_lj - Gamma^l_kj A_il."""
    da = field_derivatives(field, metric)
    gamma = metric.christoffel
    corr1 = np.einsum("...lki,...lj->...kij", gamma, field.values)
    corr2 = np.einsum("...lkj,...il->...kij", gamma, field.values)
    return da - corr1 - corr2


def divergence(field: TensorField, metric: MetricData) -> TangentCovector:
    """Covariant divergence (div A)_j = g^{ki} D_k A_ij."""
    cov = covariant_derivative(field, metric)
    comp = np.einsum("...ki,...kij->...j", metric.g_inv, cov)
    return TangentCovector(components=comp, metric=metric)


def contract_with_second_form(field: TensorField, second_form: SecondFormField,
                              metric: MetricData) -> NormalField:
    """Full metric contraction <A, II>, a normal field: g^{ik} g^{jl} A_ij II_kl."""
    comp = np.einsum("...ik,...jl,...ij,...mkl->...m", metric.g_inv, metric.g_inv,
                     field.values, second_form.components)
    return NormalField(components=comp)


def conormal_flux_norm(field: TensorField, sample: BoundarySample,
                       metric: MetricData) -> float:
    """|A(nu)|_g at a boundary sample, nu the outward unit conormal."""
    node = sample.node
    a = field.values[node]
    g_inv = metric.g_inv[node]
    flux = a @ sample.conormal           # lower-index components of A(nu)
    return float(np.sqrt(max(flux @ g_inv @ flux, 0.0)))


def tensor_det(field: TensorField, metric: MetricData) -> np.ndarray:
    """det A as the determinant of the (1,1)-tensor g^{-1} A (a positive field)."""
    return np.linalg.det(field.values) / metric.det_g


def cofactor_tensor(field: TensorField, metric: MetricData) -> TensorField:
    """Cofactor tensor T with (T o S)_ij = g^{kl} T_ik S_lj = det S * g_ij."""
    if not field.ellipticity.valid:
        raise FieldError("cofactor tensor requires a positive definite field")
    dets = tensor_det(field, metric)
    inv = np.linalg.inv(field.values)
    t = dets[..., None, None] * np.einsum("...ik,...kl,...lj->...ij",
                                          metric.g, inv, metric.g)
    return tensor_field(t, metric, tolerance=field.ellipticity.tolerance)


def compose(t_field: TensorField, s_field: TensorField, metric: MetricData) -> np.ndarray:
    """(T o S)_ij = g^{kl} T_ik S_lj (plain array, for identity checks)."""
    return np.einsum("...kl,...ik,...lj->...ij", metric.g_inv,
                     t_field.values, s_field.values)


def normalize_scaling(field: TensorField, report) -> tuple:
    """Rescale A so the inequality's two sides balance without the constant:
    lhs_interior + lhs_boundary = n * rhs_integral for the returned field.

    Returns ``(scaled_field, factor)``.  The left side is linear in A while the
    right integral scales as factor^(n/(n-1)), which fixes the factor uniquely.
    """
    lhs = report.lhs_interior + report.lhs_boundary
    n = report.n
    if lhs <= 0 or report.rhs_integral <= 0:
        raise FieldError("normalization needs positive functionals; "
                         "upstream evaluation produced a non-positive value")
    factor = (lhs / (n * report.rhs_integral)) ** (n - 1)
    return scaled(field, factor), factor


class CurvedChartError(FieldError):
    pass


def potential_hessian(potential, chart: Chart, metric: MetricData) -> np.ndarray:
    """Covariant Hessian of an ambient scalar potential restricted to the chart.

    With gradient/hessian closures the chain rule is applied exactly; otherwise
    the sampled values are differenced with the chart stencils.
    """
    pos = chart.positions
    if hasattr(potential, "gradient") and hasattr(potential, "hessian"):
        grad = np.asarray(potential.gradient(pos), dtype=float)
        hess = np.asarray(potential.hessian(pos), dtype=float)
        jac = chart.jac
        d2 = (np.einsum("...ai,...ab,...bj->...ij", jac, hess, jac)
              + np.einsum("...a,...aij->...ij", grad, chart.hess))
        du = np.einsum("...a,...ak->...k", grad, jac)
    else:
        u = np.asarray(potential(pos), dtype=float)
        du = np.stack([chart.derivative(u, a) for a in range(chart.intrinsic_dim)], axis=-1)
        n = chart.intrinsic_dim
        d2 = np.empty(chart.shape + (n, n))
        for i in range(n):
            for j in range(i, n):
                if i == j:
                    d2[..., i, i] = chart.derivative(u, i, order=2)
                else:
                    mixed = 0.5 * (chart.derivative(du[..., i], j)
                                   + chart.derivative(du[..., j], i))
                    d2[..., i, j] = mixed
                    d2[..., j, i] = mixed
    gamma_term = np.einsum("...kij,...k->...ij", metric.christoffel, du)
    return d2 - gamma_term


def cofactor_field_from_convex_potential(potential, chart: Chart, metric: MetricData,
                                         second_form: SecondFormField | None = None,
                                         flat_tol: float = 1e-8,
                                         convexity_tol: float = DEFAULT_PSD_TOL) -> TensorField:
    """Field A = cofactor of the covariant Hessian of a convex potential.

    Only meaningful on flat charts (the construction characterizes the equality
    configurations, which live in a flat slice); curved charts and non-convex
    potentials are rejected.
    """
    if second_form is None:
        from .charts import normal_frame, second_fundamental_form
        frame = normal_frame(chart)
        second_form = second_fundamental_form(chart, metric, frame)
    sup_ii = float(np.max(np.abs(second_form.components)))
    if sup_ii >= flat_tol:
        raise CurvedChartError(f"chart is not flat: max second-form component {sup_ii:.3e}")
    hess = potential_hessian(potential, chart, metric)
    try:
        hess_field = tensor_field(hess, metric, tolerance=convexity_tol)
    except FieldError as exc:
        raise FieldError(f"potential is not uniformly convex: {exc}") from exc
    return cofactor_tensor(hess_field, metric)
