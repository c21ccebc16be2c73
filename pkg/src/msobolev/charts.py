"""Parametric charts for compact submanifolds of Euclidean space.

A chart samples an immersion of an n-dimensional parameter box into R^(n+m)
on a tensor-product grid and carries first/second derivative data, either from
exact closures or from finite differences of the sampled positions.  All
downstream geometric quantities (metric, Christoffel symbols, normal frames,
second fundamental form, boundary conormals, quadrature) are computed here.

Grid conventions: a non-periodic axis with resolution N holds N nodes
including both endpoints; a periodic axis holds N-1 distinct nodes (the
endpoint is identified with the start).  Fields live on arrays shaped
``chart.shape + extra``.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass

import numpy as np

RANK_TOL = 1e-8
DERIVATIVE_MODES = ("exact", "fd2", "fd4")


class ChartError(ValueError):
    pass


class DegenerateChartError(ChartError):
    pass


@dataclass(frozen=True)
class CapPatch:
    """Area patch glued to a grid face, compensating an excluded parameter region.

    Integration adds ``area`` times the (measure-weighted) mean of the integrand
    over the adjacent face ring.
    """

    axis: int
    side: int  # 0 = lower face, 1 = upper face
    area: float


def fd_weights(offsets, order: int) -> np.ndarray:
    """Finite-difference weights for the ``order``-th derivative at 0.

    ``offsets`` are stencil positions in units of the grid spacing.  Solves the
    usual Taylor moment system, so any one-sided or centered stencil works.
    """
    offsets = np.asarray(offsets, dtype=float)
    k = len(offsets)
    if order >= k:
        raise ValueError("stencil too short for requested derivative order")
    vander = np.vstack([offsets**p / math.factorial(p) for p in range(k)])
    rhs = np.zeros(k)
    rhs[order] = 1.0
    return np.linalg.solve(vander, rhs)


def _apply_stencil(values, axis, spacing, weights, offsets, rows):
    """Write stencil results into ``rows`` (an index array) along ``axis``."""
    out = 0.0
    for w, off in zip(weights, offsets):
        idx = [slice(None)] * values.ndim
        idx[axis] = rows + off
        out = out + w * values[tuple(idx)]
    return out / spacing


def grid_derivative(values, axis, spacing, periodic: bool, mode: str, order: int = 1):
    """Derivative of grid samples along one axis.

    ``mode`` selects the interior accuracy ("fd2"/"exact" -> second order,
    "fd4" -> fourth order); non-periodic edges use one-sided stencils of
    matching order.  ``order`` is the derivative order (1 or 2).
    """
    values = np.asarray(values, dtype=float)
    n = values.shape[axis]
    acc = 4 if mode == "fd4" else 2
    h = spacing if order == 1 else spacing**2
    if periodic:
        half = acc // 2
        offs = list(range(-half, half + 1))
        w = fd_weights(offs, order)
        out = np.zeros_like(values)
        for wi, off in zip(w, offs):
            if wi == 0.0:
                continue
            out += wi * np.roll(values, -off, axis=axis)
        return out / h
    width = acc + order  # stencil length giving the target order one-sided
    if n < width:
        raise ChartError(f"axis with {n} nodes too short for {mode} stencils")
    out = np.empty_like(values)
    rows = np.arange(n)
    half = (acc + order - 1) // 2
    # interior: centered stencil
    c_offs = list(range(-half, half + 1))
    c_w = fd_weights(c_offs, order)
    interior = np.arange(half, n - half)
    out_idx = [slice(None)] * values.ndim
    out_idx[axis] = interior
    out[tuple(out_idx)] = _apply_stencil(values, axis, h, c_w, c_offs, interior)
    # edges: one-sided stencils of the same order
    for i in range(half):
        offs = list(range(0, width))
        w = fd_weights([o - i for o in offs], order)
        idx = [slice(None)] * values.ndim
        idx[axis] = np.array([i])
        out[tuple(idx)] = _apply_stencil(values, axis, h, w, np.array(offs) - i, np.array([i]))
        j = n - 1 - i
        offs_r = list(range(-(width - 1), 1))
        w_r = fd_weights([o + i for o in offs_r], order)
        idx[axis] = np.array([j])
        out[tuple(idx)] = _apply_stencil(
            values, axis, h, w_r, np.array(offs_r) + i, np.array([j])
        )
    return out


class Chart:
    """Discretized parametric patch of an n-submanifold of R^(n+m).

    Parameters
    ----------
    immersion : callable
        Maps parameter points ``(..., n)`` to ambient points ``(..., n+m)``.
    parameter_box : array (n, 2)
        Lower/upper parameter bounds per axis.
    resolution : int or sequence of int
        Grid points per axis (>= 3).  Periodic axes store one node less, the
        endpoint being identified with the start.
    derivative_mode : {"exact", "fd2", "fd4"}
        "exact" requires ``jacobian`` and ``hessian`` closures; the fd modes
        difference the sampled positions at the grid spacing.
    boundary_faces : iterable of (axis, side)
        Faces that belong to the manifold boundary.  Closed charts declare
        none; faces introduced purely by the parametrization (periodic seams,
        excluded polar caps or disk centers) are not declared.
    cap_patches : iterable of CapPatch
        Quadrature compensation for excluded parameter regions.
    """

    def __init__(self, immersion, parameter_box, resolution, *, derivative_mode="exact",
                 jacobian=None, hessian=None, periodic=None, boundary_faces=(),
                 cap_patches=(), name=""):
        box = np.asarray(parameter_box, dtype=float)
        if box.ndim != 2 or box.shape[1] != 2:
            raise ChartError(f"parameter_box must have shape (n, 2), got {box.shape}")
        n = box.shape[0]
        if np.isscalar(resolution):
            resolution = (int(resolution),) * n
        resolution = tuple(int(r) for r in resolution)
        if len(resolution) != n:
            raise ChartError("resolution must match the number of parameter axes")
        if min(resolution) < 3:
            raise ChartError("resolution must be >= 3 per axis")
        if derivative_mode not in DERIVATIVE_MODES:
            raise ChartError(f"unknown derivative_mode {derivative_mode!r}")
        if derivative_mode == "exact" and (jacobian is None or hessian is None):
            raise ChartError("exact derivative_mode requires jacobian and hessian closures")
        periodic = tuple(bool(p) for p in (periodic or (False,) * n))
        if len(periodic) != n:
            raise ChartError("periodic flags must match the number of parameter axes")

        self.name = name
        self.immersion = immersion
        self.jacobian_fn = jacobian
        self.hessian_fn = hessian
        self.parameter_box = box
        self.resolution = resolution
        self.derivative_mode = derivative_mode
        self.periodic = periodic
        self.boundary_faces = tuple((int(a), int(s)) for a, s in boundary_faces)
        self.cap_patches = tuple(cap_patches)
        self.intrinsic_dim = n

        for axis, side in self.boundary_faces:
            if not (0 <= axis < n and side in (0, 1)):
                raise ChartError(f"invalid boundary face ({axis}, {side})")
            if periodic[axis]:
                raise ChartError("a periodic axis cannot carry a boundary face")

        axes, spacing, shape = [], [], []
        for a in range(n):
            lo, hi = box[a]
            if hi <= lo:
                raise ChartError(f"empty parameter interval on axis {a}")
            h = (hi - lo) / (resolution[a] - 1)
            count = resolution[a] - 1 if periodic[a] else resolution[a]
            axes.append(lo + h * np.arange(count))
            spacing.append(h)
            shape.append(count)
        self.axes = tuple(axes)
        self.spacing = tuple(spacing)
        self.shape = tuple(shape)

        grids = np.meshgrid(*axes, indexing="ij")
        self.points = np.stack(grids, axis=-1)
        self.positions = np.asarray(immersion(self.points), dtype=float)
        if self.positions.shape[:-1] != self.shape:
            raise ChartError("immersion must be vectorized over grid points")
        self.ambient_dim = self.positions.shape[-1]
        if self.ambient_dim < n:
            raise ChartError("ambient dimension smaller than intrinsic dimension")

        if derivative_mode == "exact":
            self.jac = np.asarray(jacobian(self.points), dtype=float)
            self.hess = np.asarray(hessian(self.points), dtype=float)
        else:
            cols = [self._d(self.positions, a, 1) for a in range(n)]
            self.jac = np.stack(cols, axis=-1)
            hess = np.empty(self.shape + (self.ambient_dim, n, n))
            for i in range(n):
                for j in range(i, n):
                    if i == j:
                        hess[..., i, i] = self._d(self.positions, i, 2)
                    else:
                        mixed = 0.5 * (self._d(cols[i], j, 1) + self._d(cols[j], i, 1))
                        hess[..., i, j] = mixed
                        hess[..., j, i] = mixed
            self.hess = hess
        if self.jac.shape != self.shape + (self.ambient_dim, n):
            raise ChartError("jacobian closure returned a wrong shape")
        if self.hess.shape != self.shape + (self.ambient_dim, n, n):
            raise ChartError("hessian closure returned a wrong shape")

        sv = np.linalg.svd(self.jac, compute_uv=False)
        smin = sv[..., -1]
        if np.min(smin) <= RANK_TOL:
            node = np.unravel_index(int(np.argmin(smin)), self.shape)
            raise DegenerateChartError(
                f"immersion differential is rank-deficient at grid node {node} "
                f"(smallest singular value {np.min(smin):.3e})"
            )

    # -- derivative/quadrature plumbing -------------------------------------

    def _d(self, values, axis, order):
        return grid_derivative(values, axis, self.spacing[axis], self.periodic[axis],
                               self.derivative_mode, order)

    def derivative(self, values, axis, order=1):
        """Differentiate grid samples along a parameter axis (mode-matched stencils)."""
        return self._d(np.asarray(values, dtype=float), axis, order)

    def axis_weights(self, axis) -> np.ndarray:
        """Composite quadrature weights along one axis (trapezoid for order-2
        modes, Simpson for fd4/exact; uniform on periodic axes)."""
        h = self.spacing[axis]
        count = self.shape[axis]
        if self.periodic[axis]:
            return np.full(count, h)
        if self.derivative_mode == "fd2" or count % 2 == 0:
            w = np.full(count, h)
            w[0] = w[-1] = 0.5 * h
            return w
        w = np.full(count, 2.0)
        w[1::2] = 4.0
        w[0] = w[-1] = 1.0
        return w * (h / 3.0)

    @property
    def quad_weights(self) -> np.ndarray:
        w = self.axis_weights(0)
        for a in range(1, self.intrinsic_dim):
            w = np.multiply.outer(w, self.axis_weights(a))
        return w

    def face_index(self, axis, side):
        return self.shape[axis] - 1 if side == 1 else 0

    def face_slice(self, axis, side):
        idx = [slice(None)] * self.intrinsic_dim
        idx[axis] = self.face_index(axis, side)
        return tuple(idx)

    def mesh_size(self) -> float:
        """Largest physical node spacing: parameter spacing times the metric
        scale of the corresponding coordinate direction."""
        g_diag = np.einsum("...ai,...ai->...i", self.jac, self.jac)
        return float(max(self.spacing[a] * math.sqrt(np.max(g_diag[..., a]))
                         for a in range(self.intrinsic_dim)))

    def interpolate(self, values, query):
        """Multilinear interpolation of grid samples at parameter points.

        ``values`` has shape ``chart.shape + extra``; ``query`` has shape
        ``(..., n)``.  Periodic axes wrap; the rest clamp to the box.
        """
        values = np.asarray(values, dtype=float)
        query = np.asarray(query, dtype=float)
        n = self.intrinsic_dim
        base = []
        frac = []
        for a in range(n):
            t = (query[..., a] - self.axes[a][0]) / self.spacing[a]
            if self.periodic[a]:
                t = np.mod(t, self.shape[a])
                i0 = np.floor(t).astype(int) % self.shape[a]
            else:
                t = np.clip(t, 0.0, self.shape[a] - 1)
                i0 = np.minimum(np.floor(t).astype(int), self.shape[a] - 2)
            base.append(i0)
            frac.append(t - np.floor(t) if self.periodic[a] else t - i0)
        extra = values.ndim - n
        out = 0.0
        for corner in itertools.product((0, 1), repeat=n):
            weight = np.ones_like(frac[0])
            idx = []
            for a, c in enumerate(corner):
                weight = weight * (frac[a] if c else (1.0 - frac[a]))
                ia = base[a] + c
                if self.periodic[a]:
                    ia = ia % self.shape[a]
                idx.append(ia)
            vals = values[tuple(idx)]
            out = out + weight.reshape(weight.shape + (1,) * extra) * vals
        return out

    def lift(self) -> "Chart":
        """Chart of the same patch inside R^(n+m+1), appending a zero coordinate."""
        imm = self.immersion
        jac_fn = self.jacobian_fn
        hess_fn = self.hessian_fn

        def lifted(points):
            pos = np.asarray(imm(points), dtype=float)
            return np.concatenate([pos, np.zeros(pos.shape[:-1] + (1,))], axis=-1)

        lifted_jac = None
        lifted_hess = None
        if self.derivative_mode == "exact":
            def lifted_jac(points):
                j = np.asarray(jac_fn(points), dtype=float)
                return np.concatenate([j, np.zeros(j.shape[:-2] + (1, j.shape[-1]))], axis=-2)

            def lifted_hess(points):
                h = np.asarray(hess_fn(points), dtype=float)
                pad = np.zeros(h.shape[:-3] + (1,) + h.shape[-2:])
                return np.concatenate([h, pad], axis=-3)

        return Chart(lifted, self.parameter_box, self.resolution,
                     derivative_mode=self.derivative_mode, jacobian=lifted_jac,
                     hessian=lifted_hess, periodic=self.periodic,
                     boundary_faces=self.boundary_faces, cap_patches=self.cap_patches,
                     name=self.name + "+lift" if self.name else "")


def lift_codimension(chart: Chart) -> Chart:
    return chart.lift()


class MetricData:
    """First fundamental form and derived connection data on a chart grid."""

    def __init__(self, chart: Chart):
        self.chart = chart
        jac, hess = chart.jac, chart.hess
        g = np.einsum("...ai,...aj->...ij", jac, jac)
        self.g = 0.5 * (g + np.swapaxes(g, -1, -2))
        eig = np.linalg.eigvalsh(self.g)
        if np.min(eig[..., 0]) <= 0.0:
            node = np.unravel_index(int(np.argmin(eig[..., 0])), chart.shape)
            raise DegenerateChartError(f"induced metric not positive definite at node {node}")
        self.g_inv = np.linalg.inv(self.g)
        self.det_g = np.linalg.det(self.g)
        self.sqrt_det_g = np.sqrt(self.det_g)
        # d_k g_ij from the immersion derivatives; using the same samples inside
        # the Christoffel symbols keeps the connection metric-compatible exactly.
        dg = (np.einsum("...aik,...aj->...kij", hess, jac)
              + np.einsum("...ai,...ajk->...kij", jac, hess))
        self.dmetric = dg
        term = (np.transpose(dg, self._perm((2, 0, 1)))     # d_i g_jl
                + np.transpose(dg, self._perm((2, 1, 0)))   # d_j g_il
                - dg)                                        # d_l g_ij
        self.christoffel = 0.5 * np.einsum("...kl,...lij->...kij", self.g_inv, term)

    def _perm(self, tail):
        lead = tuple(range(self.g.ndim - 2))
        base = len(lead)
        return lead + tuple(base + t for t in tail)


def induced_metric(chart: Chart) -> MetricData:
    return MetricData(chart)


class NormalFrame:
    """Orthonormal normal frames per node, sign/rotation-aligned along grid sweeps."""

    def __init__(self, chart: Chart, vectors: np.ndarray):
        self.chart = chart
        self.vectors = vectors  # (*shape, m, n+m)

    @property
    def codim(self) -> int:
        return self.vectors.shape[-2]


def _procrustes(current, reference):
    """Rotate frame rows of ``current`` to best match ``reference`` (batched)."""
    c = reference @ np.swapaxes(current, -1, -2)
    u, _, vt = np.linalg.svd(c)
    rot = u @ vt
    return rot @ current


def normal_frame(chart: Chart) -> NormalFrame:
    n, full = chart.intrinsic_dim, chart.ambient_dim
    m = full - n
    if m == 0:
        return NormalFrame(chart, np.zeros(chart.shape + (0, full)))
    u, _, _ = np.linalg.svd(chart.jac)
    frames = np.swapaxes(u[..., n:], -1, -2).copy()  # (*shape, m, full)

    # canonical sign at the origin corner: dominant component positive
    origin = (0,) * n
    f0 = frames[origin]
    for k in range(m):
        lead = int(np.argmax(np.abs(f0[k])))
        if f0[k, lead] < 0:
            f0[k] = -f0[k]
    frames[origin] = f0

    # chain alignment axis by axis; each step is batched over the axes already swept
    for axis in range(n):
        for i in range(1, chart.shape[axis]):
            idx_prev = [slice(None)] * axis + [i - 1] + [0] * (n - axis - 1)
            idx_cur = [slice(None)] * axis + [i] + [0] * (n - axis - 1)
            frames[tuple(idx_cur)] = _procrustes(frames[tuple(idx_cur)],
                                                 frames[tuple(idx_prev)])
    # propagate the alignment of the swept block across trailing axes
    for axis in range(1, n):
        for i in range(1, chart.shape[axis]):
            idx_prev = [slice(None)] * axis + [i - 1] + [slice(None)] * (n - axis - 1)
            idx_cur = [slice(None)] * axis + [i] + [slice(None)] * (n - axis - 1)
            frames[tuple(idx_cur)] = _procrustes(frames[tuple(idx_cur)],
                                                 frames[tuple(idx_prev)])
    return NormalFrame(chart, frames)


class SecondFormField:
    """Second fundamental form components in the normal frame: (*shape, m, n, n)."""

    def __init__(self, chart: Chart, components: np.ndarray):
        self.chart = chart
        self.components = components

    def frobenius_norm(self) -> np.ndarray:
        return np.sqrt(np.einsum("...mij,...mij->...", self.components, self.components))


def second_fundamental_form(chart: Chart, metric: MetricData, frame: NormalFrame) -> SecondFormField:
    comp = np.einsum("...ma,...aij->...mij", frame.vectors, chart.hess)
    comp = 0.5 * (comp + np.swapaxes(comp, -1, -2))
    return SecondFormField(chart, comp)


def mean_curvature(second_form: SecondFormField, metric: MetricData) -> np.ndarray:
    """Trace of the second fundamental form (normal-frame components, (*shape, m))."""
    return np.einsum("...ij,...mij->...m", metric.g_inv, second_form.components)


@dataclass(frozen=True)
class BoundarySample:
    """One quadrature node of the manifold boundary."""

    node: tuple
    point: np.ndarray      # ambient position
    conormal: np.ndarray   # chart components of the outward unit conormal
    weight: float          # boundary measure weight
    face: tuple            # (axis, side)


def face_samples(chart: Chart, metric: MetricData, axis: int, side: int) -> list:
    """Quadrature samples of one grid face with outward unit conormals."""
    n = chart.intrinsic_dim
    sl = chart.face_slice(axis, side)
    g_face = metric.g[sl]
    g_inv_face = metric.g_inv[sl]
    pos_face = chart.positions[sl]
    other = [a for a in range(n) if a != axis]
    if other:
        sub = g_face[..., other, :][..., :, other]
        density = np.sqrt(np.linalg.det(sub))
        w = chart.axis_weights(other[0])
        for a in other[1:]:
            w = np.multiply.outer(w, chart.axis_weights(a))
    else:
        density = np.ones(())
        w = np.ones(())
    sign = 1.0 if side == 1 else -1.0
    nu = sign * g_inv_face[..., :, axis]
    norm = np.sqrt(np.maximum(g_inv_face[..., axis, axis], 0.0))
    nu = nu / norm[..., None]
    fixed = chart.face_index(axis, side)
    face_shape = tuple(chart.shape[a] for a in other)
    samples = []
    for multi in itertools.product(*(range(s) for s in face_shape)):
        node = list(multi)
        node.insert(axis, fixed)
        samples.append(BoundarySample(
            node=tuple(node),
            point=pos_face[multi],
            conormal=nu[multi],
            weight=float(w[multi] * density[multi]),
            face=(axis, side),
        ))
    return samples


def boundary_samples(chart: Chart, metric: MetricData) -> list:
    """Boundary quadrature with outward unit conormals; [] for closed charts."""
    samples = []
    for axis, side in chart.boundary_faces:
        samples.extend(face_samples(chart, metric, axis, side))
    return samples


def _face_mean(chart: Chart, metric: MetricData, values, axis, side) -> float:
    """Measure-weighted mean of a scalar field over a grid face ring."""
    sl = chart.face_slice(axis, side)
    n = chart.intrinsic_dim
    other = [a for a in range(n) if a != axis]
    g_face = metric.g[sl]
    if other:
        sub = g_face[..., other, :][..., :, other]
        density = np.sqrt(np.linalg.det(sub))
        w = chart.axis_weights(other[0])
        for a in other[1:]:
            w = np.multiply.outer(w, chart.axis_weights(a))
    else:
        density = np.ones(())
        w = np.ones(())
    weights = w * density
    vals = np.asarray(values, dtype=float)[sl]
    return float(np.sum(weights * vals) / np.sum(weights))


def integrate(chart: Chart, metric: MetricData, values) -> float:
    """Quadrature of a scalar grid field against the metric volume density."""
    vals = np.asarray(values, dtype=float)
    if vals.shape != chart.shape:
        vals = np.broadcast_to(vals, chart.shape)
    total = float(np.sum(chart.quad_weights * vals * metric.sqrt_det_g))
    for patch in chart.cap_patches:
        total += patch.area * _face_mean(chart, metric, vals, patch.axis, patch.side)
    return total
