"""ABP transport-map pipeline.

Given a scenario whose tensor field has been rescaled so that interior plus
boundary functional equals n times the determinant integral, this module
solves the divergence-form Neumann problem

    div(A grad u) = n (det A)^(1/(n-1)) - sqrt(|div A|^2 + |<A,II>|^2)   in the interior,
    <A grad u, nu> = |A(nu)|                                            on the boundary,

builds the normal-bundle transport map Phi(x, y) = grad u(x) + y, and verifies
the three facts the construction rests on: the image of the contact region
covers the unit ball, the Jacobian determinant formula, and the determinant
bound by (det A)^(1/(n-1)).  Equality-case rigidity diagnostics close the loop.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np
from scipy.spatial import cKDTree

from .charts import integrate, mean_curvature
from .fem import NeumannSolution, SolverError, solve_neumann
from .fields import (conormal_flux_norm, contract_with_second_form, divergence,
                     normalize_scaling, scaled, tensor_det)
from .inequality import (SobolevReport, coarser_resolution, report_from_bundles)
from .linalg import unit_ball_volume
from .scenarios import Scenario, build


class CompatibilityError(ValueError):
    """Interior source and boundary flux of the Neumann data do not balance."""


@dataclass
class AbpProblem:
    """Normalized Neumann data for one connected scenario component."""

    scenario: str
    bundle: object                 # ChartBundle with the *normalized* field
    scale_factor: float            # applied to the original tensor field
    report: SobolevReport          # functionals of the normalized field
    source: np.ndarray             # s(x) per node
    boundary_flux: list            # [(BoundarySample, |A(nu)|)]
    closure_flux: list             # flux closing excluded cap patches (internal)
    compatibility_residual: float  # relative defect of integral s vs boundary flux
    psd_tolerance: float | None    # override for contact-set membership slack

    @property
    def n(self) -> int:
        return self.bundle.n

    @property
    def m(self) -> int:
        return self.bundle.m

    @property
    def mesh_size(self) -> float:
        return self.bundle.chart.mesh_size()


def build_abp_problem(scenario: Scenario, resolution=None, compat_tol: float = 1e-8,
                      psd_tolerance: float | None = None,
                      error_estimate: bool = True) -> AbpProblem:
    """Normalize the scenario's field and assemble the Neumann data."""
    if not scenario.connected:
        raise ValueError("the transport construction needs a connected manifold; "
                         "disconnected scenarios are handled by superadditivity")
    res = resolution if resolution is not None else scenario.default_resolution
    bundle = build(scenario, res)[0]
    raw_report = report_from_bundles([bundle], scenario.name, res)
    field_n, factor = normalize_scaling(bundle.field, raw_report)
    bundle = replace_field(bundle, field_n)
    n = bundle.n
    report = SobolevReport(
        scenario=raw_report.scenario, n=raw_report.n, m=raw_report.m,
        resolution=res,
        lhs_interior=raw_report.lhs_interior * factor,
        lhs_boundary=raw_report.lhs_boundary * factor,
        rhs_integral=raw_report.rhs_integral * factor ** (n / (n - 1.0)),
        constant=raw_report.constant, ratio=raw_report.ratio,
        eps_mesh=raw_report.eps_mesh)
    if error_estimate:
        coarse_res = coarser_resolution(res)
        coarse = report_from_bundles(build(scenario, coarse_res)[:1], scenario.name,
                                     coarse_res)
        eps = max(abs(report.ratio - coarse.ratio) / 3.0, 1e-12)
        report = replace(report, eps_mesh=eps)

    div_norm = divergence(field_n, bundle.metric).norm()
    contr_norm = contract_with_second_form(field_n, bundle.second_form,
                                           bundle.metric).norm()
    dets = tensor_det(field_n, bundle.metric)
    source = n * dets ** (1.0 / (n - 1.0)) - np.sqrt(div_norm**2 + contr_norm**2)
    flux = [(s, conormal_flux_norm(field_n, s, bundle.metric)) for s in bundle.boundary]

    # excluded cap patches: their interior source must exit through the cut
    # ring (divergence theorem over the cap), so the truncated grid sees the
    # corresponding inward flux
    closure = []
    from .charts import _face_mean, face_samples
    for patch in bundle.chart.cap_patches:
        ring = face_samples(bundle.chart, bundle.metric, patch.axis, patch.side)
        length = sum(s.weight for s in ring)
        mean_source = _face_mean(bundle.chart, bundle.metric, source,
                                 patch.axis, patch.side)
        value = -mean_source * patch.area / length
        closure.extend((s, value) for s in ring)

    total_source = integrate(bundle.chart, bundle.metric, source)
    total_flux = sum(v * s.weight for s, v in flux)
    scale = max(abs(total_source), abs(total_flux), 1.0)
    compat = abs(total_source - total_flux) / scale
    if compat > compat_tol:
        raise CompatibilityError(
            f"source/flux compatibility defect {compat:.3e} exceeds {compat_tol:.1e}; "
            "the scaling normalization upstream is broken")
    return AbpProblem(scenario=scenario.name, bundle=bundle, scale_factor=factor,
                      report=report, source=source, boundary_flux=flux,
                      closure_flux=closure,
                      compatibility_residual=compat, psd_tolerance=psd_tolerance)


def replace_field(bundle, field):
    from .scenarios import ChartBundle
    return ChartBundle(chart=bundle.chart, metric=bundle.metric, frame=bundle.frame,
                       second_form=bundle.second_form, field=field,
                       boundary=bundle.boundary)


class AbpSolution:
    """Solved Neumann potential with gradient/Hessian fields and residuals."""

    def __init__(self, problem: AbpProblem, fem_result: NeumannSolution):
        self.problem = problem
        bundle = problem.bundle
        chart, metric = bundle.chart, bundle.metric
        self.u = fem_result.u
        self.multiplier = fem_result.multiplier
        self.algebraic_residual = fem_result.algebraic_residual
        self.mean_abs = fem_result.mean_abs
        self.history = fem_result.history

        n = chart.intrinsic_dim
        du = np.stack([chart.derivative(self.u, a) for a in range(n)], axis=-1)
        self.grad = du                                            # lower index
        self.grad_vec = np.einsum("...ij,...j->...i", metric.g_inv, du)
        self.grad_ambient = np.einsum("...ai,...i->...a", chart.jac, self.grad_vec)
        self.grad_norm = np.sqrt(np.maximum(
            np.einsum("...i,...i->...", du, self.grad_vec), 0.0))
        hess = np.empty(chart.shape + (n, n))
        for i in range(n):
            for j in range(i, n):
                if i == j:
                    hess[..., i, i] = chart.derivative(self.u, i, order=2)
                else:
                    mixed = 0.5 * (chart.derivative(du[..., i], j)
                                   + chart.derivative(du[..., j], i))
                    hess[..., i, j] = mixed
                    hess[..., j, i] = mixed
        gamma = metric.christoffel
        self.hess = hess - np.einsum("...kij,...k->...ij", gamma, du)
        self.hess_rel = np.einsum("...ik,...kj->...ij", metric.g_inv, self.hess)

        # strong-form interior residual: div(A grad u) - s, quadrature L2 norm
        flux_vec = np.einsum("...ij,...jk,...k->...i", metric.g_inv,
                             bundle.field.values, self.grad_vec)
        div_flux = np.zeros(chart.shape)
        dens = metric.sqrt_det_g
        for a in range(n):
            div_flux += chart.derivative(dens * flux_vec[..., a], a)
        div_flux /= dens
        err = div_flux - problem.source
        self.interior_residual = math.sqrt(max(
            integrate(chart, metric, err**2), 0.0))
        # recovered boundary flux vs prescribed values (one-sided stencil accuracy)
        worst = 0.0
        for sample, value in problem.boundary_flux:
            got = float(np.einsum("jk,k,j->", bundle.field.values[sample.node],
                                  self.grad_vec[sample.node], sample.conormal))
            worst = max(worst, abs(got - value))
        self.boundary_residual = worst
        self._fd_cache = None

    # -- cached grid derivatives for the independent FD Jacobian oracle ------

    def _fd_fields(self):
        if self._fd_cache is None:
            chart = self.problem.bundle.chart
            frame = self.problem.bundle.frame.vectors
            n = chart.intrinsic_dim
            d_grad = [chart.derivative(self.grad_ambient, a) for a in range(n)]
            d_frame = [chart.derivative(frame, a) for a in range(n)]
            self._fd_cache = (d_grad, d_frame)
        return self._fd_cache


def assemble_and_solve(problem: AbpProblem, solver_tol: float = 1e-10) -> AbpSolution:
    """Solve the normalized Neumann problem; refuses incompatible data."""
    if problem.compatibility_residual > 1e-6:
        raise CompatibilityError("problem data is incompatible; rebuild it")
    bundle = problem.bundle
    fem_result = solve_neumann(bundle.metric, bundle.field.values, problem.source,
                               problem.boundary_flux + problem.closure_flux,
                               solver_tol=solver_tol)
    return AbpSolution(problem, fem_result)


# -- transport map ------------------------------------------------------------

@dataclass(frozen=True)
class TransportPoint:
    """Point of the normal bundle: a base grid node and frame coefficients."""

    node: tuple
    y: np.ndarray
    in_unit_bundle: bool     # |grad u|^2 + |y|^2 < 1
    in_contact_set: bool     # additionally D^2 u - <II, y> is PSD up to the slack


def psd_slack(solution: AbpSolution, node) -> float:
    """Contact-set membership slack: 10 h^2 scaled by the local Hessian size."""
    override = solution.problem.psd_tolerance
    if override is not None:
        return override
    h = solution.problem.mesh_size
    local = float(np.linalg.norm(solution.hess_rel[node]))
    return 10.0 * h * h * (1.0 + local)


def _contact_matrix(solution: AbpSolution, node, y):
    bundle = solution.problem.bundle
    ii = bundle.second_form.components[node]
    mat = solution.hess[node] - np.einsum("m,mij->ij", y, ii)
    return bundle.metric.g_inv[node] @ mat


def sample_transport_points(solution: AbpSolution, count: int, rng,
                            interior_only: bool = False) -> list:
    """Fiber sampling: base nodes weighted by quadrature measure, normal offsets
    uniform in the ball of radius sqrt(1 - |grad u|^2)."""
    chart = solution.problem.bundle.chart
    metric = solution.problem.bundle.metric
    m = solution.problem.m
    weights = (chart.quad_weights * metric.sqrt_det_g).ravel()
    if interior_only:
        mask = np.ones(chart.shape, dtype=bool)
        for axis, side in chart.boundary_faces:
            sl = chart.face_slice(axis, side)
            mask[sl] = False
            inner = list(sl)
            inner[axis] = chart.shape[axis] - 2 if side == 1 else 1
            mask[tuple(inner)] = False
        weights = weights * mask.ravel()
    weights = weights / weights.sum()
    flat_nodes = rng.choice(weights.size, size=count, p=weights)
    qs = solution.grad_norm.ravel()[flat_nodes] ** 2
    radii = np.sqrt(np.maximum(1.0 - qs, 0.0)) * rng.random(count) ** (1.0 / m)
    dirs = rng.standard_normal((count, m))
    dirs /= np.maximum(np.linalg.norm(dirs, axis=1, keepdims=True), 1e-300)
    ys = radii[:, None] * dirs
    points = []
    for flat, y, q in zip(flat_nodes, ys, qs):
        node = tuple(int(i) for i in np.unravel_index(int(flat), chart.shape))
        in_u = bool(q + float(y @ y) < 1.0)
        in_v = False
        if in_u:
            eigs = np.linalg.eigvals(_contact_matrix(solution, node, y))
            in_v = bool(np.min(eigs.real) >= -psd_slack(solution, node))
        points.append(TransportPoint(node=node, y=np.asarray(y, dtype=float),
                                     in_unit_bundle=in_u, in_contact_set=in_v))
    return points


def transport_map(solution: AbpSolution, point: TransportPoint) -> np.ndarray:
    """Phi(x, y) = grad u(x) + y as an ambient vector (gradient via the chart
    differential, offset via the normal frame)."""
    frame = solution.problem.bundle.frame.vectors[point.node]
    return solution.grad_ambient[point.node] + point.y @ frame


def jacobian_determinant(solution: AbpSolution, point: TransportPoint) -> float:
    """det of the relative tensor g^{-1}(D^2 u - <II, y>) at the base node."""
    return float(np.linalg.det(_contact_matrix(solution, point.node, point.y)))


def jacobian_determinant_fd(solution: AbpSolution, point: TransportPoint) -> float:
    """Independent check of the Jacobian determinant: difference the map over
    chart/fiber coordinates and normalize by the bundle volume factor.

    Uses only grid samples of the ambient gradient and the normal frame; no
    Hessian, Christoffel or curvature data enters.
    """
    chart = solution.problem.bundle.chart
    frame = solution.problem.bundle.frame.vectors
    n, full = chart.intrinsic_dim, chart.ambient_dim
    d_grad, d_frame = solution._fd_fields()
    node = point.node
    cols = [d_grad[a][node] + point.y @ d_frame[a][node] for a in range(n)]
    cols += [frame[node][k] for k in range(full - n)]
    mat = np.stack(cols, axis=-1)
    volume = float(np.linalg.det(np.concatenate(
        [chart.jac[node], frame[node].T], axis=1)))
    return float(np.linalg.det(mat)) / volume


@dataclass(frozen=True)
class BoundCheckResult:
    checked: int
    violations: int
    max_excess: float


def jacobian_bound_check(problem: AbpProblem, solution: AbpSolution, points,
                         tol: float) -> BoundCheckResult:
    """Count contact-set samples violating 0 <= det DPhi <= (det A)^(1/(n-1))."""
    dets_field = tensor_det(problem.bundle.field, problem.bundle.metric)
    n = problem.n
    bound_field = dets_field ** (1.0 / (n - 1.0))
    checked = violations = 0
    max_excess = 0.0
    for p in points:
        if not p.in_contact_set:
            continue
        checked += 1
        det = jacobian_determinant(solution, p)
        bound = float(bound_field[p.node])
        excess = max(det - bound, -det)
        max_excess = max(max_excess, excess)
        if det > bound + tol or det < -tol:
            violations += 1
    return BoundCheckResult(checked=checked, violations=violations,
                            max_excess=max_excess)


# -- coverage ------------------------------------------------------------------

@dataclass(frozen=True)
class CoverageSample:
    """One target of the ball-coverage argument and its constructed preimage."""

    target: np.ndarray          # xi in the open unit ball of ambient space
    node: tuple                 # grid argmin of u - <x, xi>
    refined_point: np.ndarray   # chart coordinates after one Newton step
    y: np.ndarray               # frame coefficients of the normal part of xi
    residual: float             # |Phi(x0, y0) - xi|
    interior: bool              # minimizer landed off the declared boundary
    in_contact_set: bool
    boundary_margin: float | None  # |A(nu)| - <xi, A(nu)> when the grid argmin was on the boundary


def coverage_oracle(solution: AbpSolution, target) -> CoverageSample:
    """Locate the preimage of a target by minimizing u - <x, target>.

    The grid argmin is refined with one Newton step of the local quadratic
    model; the normal part of the target at the refined base point provides
    the fiber offset, and the transport residual plus contact-set membership
    are reported.
    """
    problem = solution.problem
    bundle = problem.bundle
    chart, metric = bundle.chart, bundle.metric
    xi = np.asarray(target, dtype=float)
    if xi.shape != (chart.ambient_dim,):
        raise ValueError("target must be an ambient vector")
    if float(xi @ xi) >= 1.0:
        raise ValueError("target must lie in the open unit ball")
    n = chart.intrinsic_dim

    w = solution.u - chart.positions @ xi
    flat = int(np.argmin(w))
    node = tuple(int(i) for i in np.unravel_index(flat, chart.shape))

    on_boundary = any(node[axis] == chart.face_index(axis, side)
                      for axis, side in chart.boundary_faces)
    boundary_margin = None
    if on_boundary:
        for sample, value in problem.boundary_flux:
            if sample.node == node:
                flux_vec = np.einsum("ij,jk,k->i", metric.g_inv[node],
                                     bundle.field.values[node], sample.conormal)
                flux_amb = chart.jac[node] @ flux_vec
                boundary_margin = value - float(xi @ flux_amb)
                break

    # one Newton step of w(x) = u(x) - <F(x), xi> around the argmin node
    grad_w = solution.grad[node] - chart.jac[node].T @ xi
    hess_w = (solution.hess[node]
              - np.einsum("aij,a->ij", chart.hess[node], xi)
              + np.einsum("kij,ak,a->ij", metric.christoffel[node],
                          chart.jac[node], xi))
    step = np.zeros(n)
    try:
        cond = np.linalg.cond(hess_w)
        if np.isfinite(cond) and cond < 1e12:
            step = -np.linalg.solve(hess_w, grad_w)
    except np.linalg.LinAlgError:
        pass
    limit = np.asarray(chart.spacing)
    step = np.clip(step, -limit, limit)
    x_star = chart.points[node] + step
    for a in range(n):
        if not chart.periodic[a]:
            lo, hi = chart.parameter_box[a]
            x_star[a] = min(max(x_star[a], lo), hi)

    jac_s = chart.interpolate(chart.jac, x_star)
    g_s = jac_s.T @ jac_s
    frame_s = chart.interpolate(bundle.frame.vectors, x_star)
    grad_amb_s = chart.interpolate(solution.grad_ambient, x_star)
    tangential = jac_s @ np.linalg.solve(g_s, jac_s.T @ xi)
    y_amb = xi - tangential
    y = frame_s @ y_amb
    phi = grad_amb_s + y @ frame_s
    residual = float(np.linalg.norm(phi - xi))

    hess_s = chart.interpolate(solution.hess, x_star)
    ii_s = chart.interpolate(bundle.second_form.components, x_star)
    mat = np.linalg.solve(g_s, hess_s - np.einsum("m,mij->ij", y, ii_s))
    local = float(np.linalg.norm(np.linalg.solve(g_s, hess_s)))
    slack = (problem.psd_tolerance if problem.psd_tolerance is not None
             else 10.0 * problem.mesh_size**2 * (1.0 + local))
    eigs = np.linalg.eigvals(mat)
    in_contact = bool(np.min(eigs.real) >= -slack)

    interior = True
    if on_boundary:
        for axis, side in chart.boundary_faces:
            if node[axis] != chart.face_index(axis, side):
                continue
            edge = chart.parameter_box[axis][side]
            if abs(x_star[axis] - edge) <= 1e-9 * chart.spacing[axis]:
                interior = False
    return CoverageSample(target=xi, node=node, refined_point=x_star, y=y,
                          residual=residual, interior=interior,
                          in_contact_set=in_contact, boundary_margin=boundary_margin)


def sample_unit_ball(dim: int, count: int, rng) -> np.ndarray:
    dirs = rng.standard_normal((count, dim))
    dirs /= np.maximum(np.linalg.norm(dirs, axis=1, keepdims=True), 1e-300)
    radii = rng.random(count) ** (1.0 / dim)
    return radii[:, None] * dirs


def run_coverage(solution: AbpSolution, count: int, rng,
                 residual_tol: float | None = None) -> tuple:
    """Coverage sweep over random targets; returns (samples, summary dict)."""
    chart = solution.problem.bundle.chart
    tol = residual_tol if residual_tol is not None else 10.0 * solution.problem.mesh_size**2
    targets = sample_unit_ball(chart.ambient_dim, count, rng)
    samples = [coverage_oracle(solution, xi) for xi in targets]
    ok = sum(1 for s in samples
             if s.interior and s.residual < tol and s.in_contact_set)
    margins = [s.boundary_margin for s in samples if s.boundary_margin is not None]
    summary = {
        "count": count,
        "residual_tol": tol,
        "success_rate": ok / count if count else 1.0,
        "interior_rate": sum(s.interior for s in samples) / count if count else 1.0,
        "contact_rate": sum(s.in_contact_set for s in samples) / count if count else 1.0,
        "max_residual": max((s.residual for s in samples), default=0.0),
        "min_boundary_margin": min(margins, default=None),
    }
    return samples, summary


# -- integrated volume bound ---------------------------------------------------

def volume_bound_check(problem: AbpProblem, solution: AbpSolution,
                       sigma: float = 0.5, tol: float | None = None) -> dict:
    """Check (n+m)|B^(n+m)| <= m|B^m| * integral of (det A)^(1/(n-1)), and
    reproduce the fiber-annulus bound for one shell parameter sigma.

    The default tolerance is ten times the Richardson error estimate of the
    right-hand integral, matching the sweep conventions.
    """
    if not 0.0 <= sigma < 1.0:
        raise ValueError("sigma must lie in [0, 1)")
    bundle = problem.bundle
    n, m = problem.n, problem.m
    dets = tensor_det(bundle.field, bundle.metric) ** (1.0 / (n - 1.0))
    rhs_integral = integrate(bundle.chart, bundle.metric, dets)
    lhs = (n + m) * unit_ball_volume(n + m)
    rhs = m * unit_ball_volume(m) * rhs_integral
    if tol is None:
        eps = problem.report.eps_mesh or 1e-12
        tol = 10.0 * eps * max(abs(lhs), abs(rhs))
    vm = unit_ball_volume(m)
    q = solution.grad_norm**2
    fiber = vm * (np.maximum(1.0 - q, 0.0) ** (m / 2.0)
                  - np.maximum(sigma**2 - q, 0.0) ** (m / 2.0))
    annulus_lhs = integrate(bundle.chart, bundle.metric, dets * fiber)
    sublevel = integrate(bundle.chart, bundle.metric, dets * (q < 1.0))
    annulus_rhs = 0.5 * m * vm * (1.0 - sigma**2) * sublevel
    return {
        "lhs": lhs,
        "rhs": rhs,
        "holds": bool(lhs <= rhs + tol),
        "slack": rhs - lhs,
        "tol": tol,
        "sigma": sigma,
        "annulus_lhs": annulus_lhs,
        "annulus_rhs": annulus_rhs,
        "annulus_holds": bool(annulus_lhs <= annulus_rhs + tol),
    }


# -- rigidity -------------------------------------------------------------------

def _batched_adjugate(mats: np.ndarray) -> np.ndarray:
    n = mats.shape[-1]
    if n == 2:
        out = np.empty_like(mats)
        out[..., 0, 0] = mats[..., 1, 1]
        out[..., 1, 1] = mats[..., 0, 0]
        out[..., 0, 1] = -mats[..., 0, 1]
        out[..., 1, 0] = -mats[..., 1, 0]
        return out
    if n == 3:
        tr = np.trace(mats, axis1=-2, axis2=-1)
        m2 = mats @ mats
        tr2 = np.trace(m2, axis1=-2, axis2=-1)
        eye = np.eye(3)
        return (m2 - tr[..., None, None] * mats
                + (0.5 * (tr**2 - tr2))[..., None, None] * eye)
    raise NotImplementedError("adjugate fields implemented for n <= 3")


def _tangent_coordinates(chart, metric_g, grad_ambient, jac):
    """Orthonormal tangent coordinates of an ambient tangent field: g^{-1/2} J^T v."""
    w = np.einsum("...ak,...a->...k", jac, grad_ambient)
    n = chart.intrinsic_dim
    if n == 2:
        a = metric_g[..., 0, 0]
        b = metric_g[..., 0, 1]
        d = metric_g[..., 1, 1]
        det = np.sqrt(np.maximum(a * d - b * b, 0.0))
        tr = a + d + 2.0 * det
        # closed-form inverse square root of a 2x2 SPD matrix
        inv_sqrt = np.empty_like(metric_g)
        denom = det * np.sqrt(np.maximum(tr, 1e-300))
        inv_sqrt[..., 0, 0] = (d + det) / denom
        inv_sqrt[..., 1, 1] = (a + det) / denom
        inv_sqrt[..., 0, 1] = inv_sqrt[..., 1, 0] = -b / denom
        return np.einsum("...ij,...j->...i", inv_sqrt, w)
    vals, vecs = np.linalg.eigh(metric_g)
    inv_sqrt = np.einsum("...ik,...k,...jk->...ij", vecs, 1.0 / np.sqrt(vals), vecs)
    return np.einsum("...ij,...j->...i", inv_sqrt, w)


def gradient_image_distance(solution: AbpSolution, spacing_target: float | None = None) -> float:
    """Sampled Hausdorff-type distance between the gradient image and the
    closed unit ball of the tangent dimension.

    The image is densified by multilinear interpolation so its sampling gaps
    stay below the comparison spacing; the outward direction (image escaping
    the ball) is exact.
    """
    problem = solution.problem
    chart = problem.bundle.chart
    metric = problem.bundle.metric
    n = chart.intrinsic_dim
    h = problem.mesh_size
    delta = spacing_target if spacing_target is not None else max(h * h / 2.0, 1.5e-3)

    axes = []
    for a in range(n):
        phys = chart.spacing[a] * math.sqrt(float(np.max(metric.g[..., a, a])))
        factor = max(1, int(math.ceil(phys / delta)))
        hi = chart.axes[a][-1] + (chart.spacing[a] if chart.periodic[a] else 0.0)
        count = (len(chart.axes[a])) * factor if chart.periodic[a] \
            else (len(chart.axes[a]) - 1) * factor + 1
        axes.append(np.linspace(chart.axes[a][0], hi, count,
                                endpoint=not chart.periodic[a]))
    query = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1)
    grad_fine = chart.interpolate(solution.grad_ambient, query)
    jac_fine = chart.interpolate(chart.jac, query)
    g_fine = np.einsum("...ai,...aj->...ij", jac_fine, jac_fine)
    coords = _tangent_coordinates(chart, g_fine, grad_fine, jac_fine)
    pts = coords.reshape(-1, n)

    norms = np.linalg.norm(pts, axis=1)
    overshoot = float(max(np.max(norms) - 1.0, 0.0))
    grid_1d = np.arange(-1.0, 1.0 + delta, delta)
    mesh = np.meshgrid(*([grid_1d] * n), indexing="ij")
    ball = np.stack([g.ravel() for g in mesh], axis=-1)
    ball = ball[np.linalg.norm(ball, axis=1) <= 1.0]
    tree = cKDTree(pts)
    dist, _ = tree.query(ball, k=1, workers=-1)
    return float(max(np.max(dist), overshoot))


def rigidity_diagnostics(problem: AbpProblem, solution: AbpSolution) -> dict:
    """Equality-case diagnostics; all five vanish (at mesh order) exactly on
    the rigid configurations and stay bounded away from zero otherwise.

    sup_II uses the trace (mean-curvature) norm of the second fundamental form.
    boundary_grad_deficit is vacuous (0) for closed charts.
    """
    bundle = problem.bundle
    metric = bundle.metric
    h_vec = mean_curvature(bundle.second_form, metric)
    sup_ii = float(np.max(np.linalg.norm(h_vec, axis=-1)))
    sup_div = float(np.max(divergence(bundle.field, metric).norm()))

    adj = _batched_adjugate(solution.hess_rel)
    cof = np.einsum("...ik,...kj->...ij", metric.g, adj)
    cof_res = float(np.max(np.abs(bundle.field.values - cof)))

    deficit = 0.0
    for sample, _ in problem.boundary_flux:
        deficit = max(deficit, abs(1.0 - float(solution.grad_norm[sample.node])))

    return {
        "sup_II": sup_ii,
        "sup_divA": sup_div,
        "cofactor_residual": cof_res,
        "boundary_grad_deficit": deficit,
        "gradient_image_hausdorff": gradient_image_distance(solution),
    }
