"""Divergence-form Neumann solver on chart grids.

Bilinear (n=2) / trilinear (n=3) node-based elements on the parameter grid,
assembled against the metric volume density:

    integral <A grad u, grad phi>  =  - integral s phi  +  boundary integral b phi

The pure-Neumann null space is removed by one Lagrange-multiplier row built
from the same nodal quadrature weights used everywhere else, so the returned
solution has exactly zero quadrature mean.  The multiplier doubles as the
discrete compatibility defect of the data.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .charts import Chart, MetricData


class SolverError(RuntimeError):
    pass


@dataclass
class NeumannSolution:
    u: np.ndarray                 # (*shape,), zero quadrature mean
    multiplier: float             # compatibility defect absorbed by the gauge row
    algebraic_residual: float     # relative residual of the bordered system
    mean_abs: float               # |quadrature mean of u|
    history: list                 # iterative-fallback residuals, empty for direct solve


def _cell_corner_indices(chart: Chart):
    """Flat node indices of every cell corner: (ncells, 2^n)."""
    n = chart.intrinsic_dim
    shape = chart.shape
    ncells_axis = [shape[a] if chart.periodic[a] else shape[a] - 1 for a in range(n)]
    starts = np.meshgrid(*[np.arange(c) for c in ncells_axis], indexing="ij")
    starts = np.stack([s.ravel() for s in starts], axis=-1)        # (ncells, n)
    corners = []
    for offset in itertools.product((0, 1), repeat=n):
        idx = starts + np.asarray(offset)
        multi = []
        for a in range(n):
            col = idx[:, a]
            multi.append(col % shape[a] if chart.periodic[a] else col)
        corners.append(np.ravel_multi_index(multi, shape))
    return np.stack(corners, axis=-1)                              # (ncells, 2^n)


def _reference_element(n: int):
    """2^n-point Gauss rule with multilinear shape values/gradients per point."""
    g = 1.0 / np.sqrt(3.0)
    pts = np.array(list(itertools.product((-g, g), repeat=n)))
    corners = np.array(list(itertools.product((0, 1), repeat=n)))
    nodes_sign = 2.0 * corners - 1.0                               # corner coords in [-1,1]^n
    shape_vals = np.empty((len(pts), len(corners)))
    shape_grads = np.empty((len(pts), len(corners), n))
    for q, xi in enumerate(pts):
        for c, sgn in enumerate(nodes_sign):
            factors = 0.5 * (1.0 + sgn * xi)
            shape_vals[q, c] = np.prod(factors)
            for a in range(n):
                others = np.prod(np.delete(factors, a))
                shape_grads[q, c, a] = 0.5 * sgn[a] * others
    return shape_vals, shape_grads


def assemble(metric: MetricData, coeff: np.ndarray, source: np.ndarray,
             boundary_flux) -> tuple:
    """Stiffness matrix, load vector and gauge row for the weak problem.

    ``coeff`` holds the lower-index diffusion tensor per node (the weak form
    uses g^{-1} A g^{-1} against coordinate gradients), ``source`` the interior
    source s per node, ``boundary_flux`` pairs of (BoundarySample, flux value).
    """
    chart = metric.chart
    n = chart.intrinsic_dim
    nn = int(np.prod(chart.shape))
    corners = _cell_corner_indices(chart)
    shape_vals, shape_grads = _reference_element(n)
    # physical gradients: reference cell [-1,1]^n -> parameter cell
    scale = np.array([2.0 / chart.spacing[a] for a in range(n)])
    det_j = float(np.prod([chart.spacing[a] / 2.0 for a in range(n)]))
    grads = shape_grads * scale                                    # (nq, 2^n, n)

    diff = np.einsum("...ik,...kl,...lj->...ij", metric.g_inv, coeff, metric.g_inv)
    diff = diff * metric.sqrt_det_g[..., None, None]
    diff_nodes = diff.reshape(nn, n, n)[corners]                   # (ncells, 2^n, n, n)
    dq = np.einsum("qc,ecij->eqij", shape_vals, diff_nodes)        # value at gauss pts
    ke = det_j * np.einsum("qai,eqij,qbj->eab", grads, dq, grads)

    dens = (source * metric.sqrt_det_g).reshape(nn)[corners]       # (ncells, 2^n)
    sq = np.einsum("qc,ec->eq", shape_vals, dens)
    fe = -det_j * np.einsum("eq,qa->ea", sq, shape_vals)

    rows = np.repeat(corners, corners.shape[1], axis=1).ravel()
    cols = np.tile(corners, (1, corners.shape[1])).ravel()
    k = sp.coo_matrix((ke.ravel(), (rows, cols)), shape=(nn, nn)).tocsr()

    f = np.zeros(nn)
    np.add.at(f, corners.ravel(), fe.ravel())
    for sample, value in boundary_flux:
        f[np.ravel_multi_index(sample.node, chart.shape)] += value * sample.weight

    gauge = (chart.quad_weights * metric.sqrt_det_g).reshape(nn)
    return k, f, gauge


def solve_neumann(metric: MetricData, coeff: np.ndarray, source: np.ndarray,
                  boundary_flux, solver_tol: float = 1e-10) -> NeumannSolution:
    """Solve the zero-mean divergence-form Neumann problem on the chart grid."""
    chart = metric.chart
    k, f, gauge = assemble(metric, coeff, source, boundary_flux)
    nn = k.shape[0]
    system = sp.bmat([[k, gauge[:, None]], [gauge[None, :], None]], format="csc")
    rhs = np.concatenate([f, [0.0]])
    history: list = []
    x = spla.spsolve(system, rhs)
    scale = max(float(np.linalg.norm(rhs)), 1e-300)
    residual = float(np.linalg.norm(system @ x - rhs)) / scale
    if not np.isfinite(residual) or residual > solver_tol:
        def _track(xk):
            history.append(float(np.linalg.norm(system @ xk - rhs)) / scale)

        x, info = spla.minres(system, rhs, rtol=solver_tol, maxiter=20 * nn,
                              callback=_track)
        residual = float(np.linalg.norm(system @ x - rhs)) / scale
        if info != 0 or residual > solver_tol * 10:
            raise SolverError(
                f"linear solver did not converge: relative residual {residual:.3e}, "
                f"history tail {history[-5:]}")
    u = x[:nn]
    total = float(gauge.sum())
    u = u - (gauge @ u) / total  # remove roundoff drift of the gauge
    return NeumannSolution(
        u=u.reshape(chart.shape),
        multiplier=float(x[nn]),
        algebraic_residual=residual,
        mean_abs=abs(float(gauge @ u)) / total,
        history=history,
    )
