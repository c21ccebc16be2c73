"""Assembly of the tensor Sobolev inequality: functionals, constant, verdict.

The inequality compares

    integral of sqrt(|div A|^2 + |<A, II>|^2)  +  boundary integral of |A(nu)|

against ``c(n, m) * (integral of (det A)^(1/(n-1)))^((n-1)/n)`` with

    c(n, m) = n * ((n+m) |B^(n+m)| / (m |B^m|))^(1/n).

Reports carry both sides, the constant, the ratio, and a Richardson estimate
of the discretization error.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .fields import (conormal_flux_norm, contract_with_second_form, divergence,
                     tensor_det)
from .linalg import unit_ball_volume
from .scenarios import Scenario, build

EPS_MESH_FLOOR = 1e-12


def michael_simon_constant(n: int, m: int) -> float:
    """Sharp-side constant n * ((n+m)|B^(n+m)| / (m|B^m|))^(1/n).

    For m = 2 this collapses to n |B^n|^(1/n).  The codimension-1 case goes
    through the lift and is evaluated with m = 2.
    """
    if n < 2:
        raise ValueError("intrinsic dimension must be >= 2")
    if m < 2:
        raise ValueError("codimension must be >= 2 (lift codimension-1 charts first)")
    return n * ((n + m) * unit_ball_volume(n + m) / (m * unit_ball_volume(m))) ** (1.0 / n)


@dataclass(frozen=True)
class SobolevReport:
    """Both sides of the inequality for one scenario at one resolution."""

    scenario: str
    n: int
    m: int
    resolution: int
    lhs_interior: float
    lhs_boundary: float
    rhs_integral: float
    constant: float
    ratio: float
    eps_mesh: float | None = None


def bundle_functionals(bundle) -> tuple:
    """(interior, boundary, rhs) integrals of one connected component."""
    from .charts import integrate

    div_norm = divergence(bundle.field, bundle.metric).norm()
    contr_norm = contract_with_second_form(bundle.field, bundle.second_form,
                                           bundle.metric).norm()
    interior = integrate(bundle.chart, bundle.metric,
                         np.sqrt(div_norm**2 + contr_norm**2))
    boundary = sum(conormal_flux_norm(bundle.field, s, bundle.metric) * s.weight
                   for s in bundle.boundary)
    dets = tensor_det(bundle.field, bundle.metric)
    if np.min(dets) <= 0:
        raise ValueError("tensor determinant must be positive")
    n = bundle.n
    rhs = integrate(bundle.chart, bundle.metric, dets ** (1.0 / (n - 1)))
    return interior, boundary, rhs


def report_from_bundles(bundles, name: str, resolution: int) -> SobolevReport:
    n, m = bundles[0].n, bundles[0].m
    interior = boundary = rhs = 0.0
    for b in bundles:
        li, lb, r = bundle_functionals(b)
        interior += li
        boundary += lb
        rhs += r
    constant = michael_simon_constant(n, m)
    ratio = (interior + boundary) / (constant * rhs ** ((n - 1.0) / n))
    return SobolevReport(scenario=name, n=n, m=m, resolution=resolution,
                         lhs_interior=interior, lhs_boundary=boundary,
                         rhs_integral=rhs, constant=constant, ratio=ratio)


def coarser_resolution(resolution: int) -> int:
    return max(5, (resolution + 1) // 2)


def evaluate_inequality(scenario: Scenario, resolution=None,
                        error_estimate: bool = True) -> SobolevReport:
    """Evaluate the inequality for a scenario; eps_mesh is a Richardson
    comparison against one coarsening of the grid."""
    res = resolution if resolution is not None else scenario.default_resolution
    report = report_from_bundles(build(scenario, res), scenario.name, res)
    if not error_estimate:
        return report
    coarse_res = coarser_resolution(res)
    coarse = report_from_bundles(build(scenario, coarse_res), scenario.name, coarse_res)
    eps = max(abs(report.ratio - coarse.ratio) / 3.0, EPS_MESH_FLOOR)
    return replace(report, eps_mesh=eps)


def superadditivity_check(a: float, b: float, n: int, margin: float = 1e-12) -> bool:
    """Strictness of a^((n-1)/n) + b^((n-1)/n) > (a+b)^((n-1)/n) for a, b > 0."""
    if a <= 0 or b <= 0:
        raise ValueError("both terms must be positive")
    if n < 2:
        raise ValueError("n must be >= 2")
    p = (n - 1.0) / n
    return a**p + b**p > (a + b) ** p + margin


def equality_gap(scenario: Scenario, report: SobolevReport) -> float:
    """Distance of the verdict from equality (ratio - 1)."""
    if report.scenario != scenario.name:
        raise ValueError("report does not belong to this scenario")
    return report.ratio - 1.0
