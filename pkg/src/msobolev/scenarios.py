"""Scenario catalog and the JSON-facing builders for charts and tensor fields.

A scenario is pure data (chart specs, a field spec, a theorem selector) so it
can be serialized, hashed, and rebuilt inside worker processes.  ``build``
turns it into per-component bundles of concrete geometric data at a chosen
resolution.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field as dc_field

import numpy as np

from .charts import (CapPatch, Chart, MetricData, NormalFrame, SecondFormField,
                     boundary_samples, induced_metric, lift_codimension,
                     normal_frame, second_fundamental_form)
from .fields import TensorField, cofactor_field_from_convex_potential, tensor_field


class ScenarioError(ValueError):
    pass


SELECTORS = ("general", "codim2", "codim1")


class Polynomial:
    """Multivariate polynomial with exact gradient/hessian closures.

    ``terms`` is a list of ``(coefficient, exponents)`` pairs; the exponent
    tuple length fixes the number of variables.
    """

    def __init__(self, terms, nvars=None):
        self.terms = [(float(c), tuple(int(e) for e in exps)) for c, exps in terms]
        if not self.terms and nvars is None:
            raise ScenarioError("empty polynomial needs an explicit variable count")
        self.nvars = nvars if nvars is not None else len(self.terms[0][1])
        for _, exps in self.terms:
            if len(exps) != self.nvars:
                raise ScenarioError("inconsistent exponent tuples in polynomial")

    def __call__(self, points):
        points = np.asarray(points, dtype=float)
        out = np.zeros(points.shape[:-1])
        for c, exps in self.terms:
            term = np.full(points.shape[:-1], c)
            for v, e in enumerate(exps):
                if e:
                    term = term * points[..., v] ** e
            out += term
        return out

    def derivative(self, var: int) -> "Polynomial":
        terms = []
        for c, exps in self.terms:
            if exps[var]:
                d = list(exps)
                d[var] -= 1
                terms.append((c * exps[var], tuple(d)))
        return Polynomial(terms, nvars=self.nvars)

    def gradient(self, points):
        points = np.asarray(points, dtype=float)
        return np.stack([self.derivative(v)(points) for v in range(self.nvars)], axis=-1)

    def hessian(self, points):
        points = np.asarray(points, dtype=float)
        cols = []
        for v in range(self.nvars):
            dv = self.derivative(v)
            cols.append(np.stack([dv.derivative(w)(points) for w in range(self.nvars)],
                                 axis=-1))
        return np.stack(cols, axis=-2)

    def spec(self):
        return [[c, list(exps)] for c, exps in self.terms]


# -- chart builders ----------------------------------------------------------

def flat_box_chart(resolution, *, box=((0.0, 1.0), (0.0, 1.0)), ambient_dim=4,
                   offset=None, derivative_mode="exact", name="flat-box"):
    """Flat n-patch embedded in the first n ambient coordinates."""
    box = np.asarray(box, dtype=float)
    n = box.shape[0]
    offset = np.zeros(ambient_dim) if offset is None else np.asarray(offset, dtype=float)

    def immersion(points):
        out = np.zeros(points.shape[:-1] + (ambient_dim,))
        out[..., :n] = points
        return out + offset

    def jac(points):
        out = np.zeros(points.shape[:-1] + (ambient_dim, n))
        for i in range(n):
            out[..., i, i] = 1.0
        return out

    def hess(points):
        return np.zeros(points.shape[:-1] + (ambient_dim, n, n))

    faces = tuple((a, s) for a in range(n) for s in (0, 1))
    return Chart(immersion, box, resolution, derivative_mode=derivative_mode,
                 jacobian=jac, hessian=hess, boundary_faces=faces, name=name)


def polar_disk_chart(resolution, *, center=(0.0, 0.0), radius=1.0, ambient_dim=4,
                     derivative_mode="exact", name="polar-disk"):
    """Flat disk via polar coordinates, a thin center cap excluded.

    The inner radius is a quarter of the radial spacing; the missing center is
    restored in quadrature by a cap patch and no boundary face is declared
    there (the ABP solver closes the cap with its divergence-theorem flux).
    """
    if np.isscalar(resolution):
        nr = int(resolution)
    else:
        nr = int(resolution[0])
    r0 = radius / (4 * nr - 3)
    cx, cy = center

    def immersion(points):
        r, t = points[..., 0], points[..., 1]
        out = np.zeros(points.shape[:-1] + (ambient_dim,))
        out[..., 0] = cx + r * np.cos(t)
        out[..., 1] = cy + r * np.sin(t)
        return out

    def jac(points):
        r, t = points[..., 0], points[..., 1]
        out = np.zeros(points.shape[:-1] + (ambient_dim, 2))
        out[..., 0, 0] = np.cos(t)
        out[..., 1, 0] = np.sin(t)
        out[..., 0, 1] = -r * np.sin(t)
        out[..., 1, 1] = r * np.cos(t)
        return out

    def hess(points):
        r, t = points[..., 0], points[..., 1]
        out = np.zeros(points.shape[:-1] + (ambient_dim, 2, 2))
        out[..., 0, 0, 1] = out[..., 0, 1, 0] = -np.sin(t)
        out[..., 1, 0, 1] = out[..., 1, 1, 0] = np.cos(t)
        out[..., 0, 1, 1] = -r * np.cos(t)
        out[..., 1, 1, 1] = -r * np.sin(t)
        return out

    box = [[r0, radius], [0.0, 2.0 * math.pi]]
    return Chart(immersion, box, resolution, derivative_mode=derivative_mode,
                 jacobian=jac, hessian=hess, periodic=(False, True),
                 boundary_faces=((0, 1),),
                 cap_patches=(CapPatch(0, 0, math.pi * r0**2),), name=name)


def sphere_chart(resolution, *, radius=1.0, derivative_mode="exact", name="sphere"):
    """Round sphere in R^3 via spherical coordinates, poles truncated at one
    angular spacing with cap-area patches restoring the excluded area."""
    if np.isscalar(resolution):
        nt = int(resolution)
    else:
        nt = int(resolution[0])
    theta0 = math.pi / (nt + 1)

    def immersion(points):
        t, p = points[..., 0], points[..., 1]
        return radius * np.stack([np.sin(t) * np.cos(p), np.sin(t) * np.sin(p),
                                  np.cos(t)], axis=-1)

    def jac(points):
        t, p = points[..., 0], points[..., 1]
        out = np.empty(points.shape[:-1] + (3, 2))
        out[..., 0, 0] = radius * np.cos(t) * np.cos(p)
        out[..., 1, 0] = radius * np.cos(t) * np.sin(p)
        out[..., 2, 0] = -radius * np.sin(t)
        out[..., 0, 1] = -radius * np.sin(t) * np.sin(p)
        out[..., 1, 1] = radius * np.sin(t) * np.cos(p)
        out[..., 2, 1] = 0.0
        return out

    def hess(points):
        t, p = points[..., 0], points[..., 1]
        out = np.zeros(points.shape[:-1] + (3, 2, 2))
        out[..., 0, 0, 0] = -radius * np.sin(t) * np.cos(p)
        out[..., 1, 0, 0] = -radius * np.sin(t) * np.sin(p)
        out[..., 2, 0, 0] = -radius * np.cos(t)
        out[..., 0, 0, 1] = out[..., 0, 1, 0] = -radius * np.cos(t) * np.sin(p)
        out[..., 1, 0, 1] = out[..., 1, 1, 0] = radius * np.cos(t) * np.cos(p)
        out[..., 0, 1, 1] = -radius * np.sin(t) * np.cos(p)
        out[..., 1, 1, 1] = -radius * np.sin(t) * np.sin(p)
        return out

    cap_area = 2.0 * math.pi * radius**2 * (1.0 - math.cos(theta0))
    box = [[theta0, math.pi - theta0], [0.0, 2.0 * math.pi]]
    return Chart(immersion, box, resolution, derivative_mode=derivative_mode,
                 jacobian=jac, hessian=hess, periodic=(False, True),
                 cap_patches=(CapPatch(0, 0, cap_area), CapPatch(0, 1, cap_area)),
                 name=name)


def graph_chart(resolution, *, box=((0.0, 1.0), (0.0, 1.0)), heights=(),
                derivative_mode="exact", name="graph"):
    """Graph patch: parameters in the first n coordinates, extra ambient
    coordinates given by polynomials of the parameters."""
    box = np.asarray(box, dtype=float)
    n = box.shape[0]
    polys = [p if isinstance(p, Polynomial) else Polynomial(p, nvars=n) for p in heights]
    ambient = n + len(polys)
    if not polys:
        raise ScenarioError("graph chart needs at least one height polynomial")

    def immersion(points):
        out = np.zeros(points.shape[:-1] + (ambient,))
        out[..., :n] = points
        for k, p in enumerate(polys):
            out[..., n + k] = p(points)
        return out

    def jac(points):
        out = np.zeros(points.shape[:-1] + (ambient, n))
        for i in range(n):
            out[..., i, i] = 1.0
        for k, p in enumerate(polys):
            out[..., n + k, :] = p.gradient(points)
        return out

    def hess(points):
        out = np.zeros(points.shape[:-1] + (ambient, n, n))
        for k, p in enumerate(polys):
            out[..., n + k, :, :] = p.hessian(points)
        return out

    faces = tuple((a, s) for a in range(n) for s in (0, 1))
    return Chart(immersion, box, resolution, derivative_mode=derivative_mode,
                 jacobian=jac, hessian=hess, boundary_faces=faces, name=name)


CHART_KINDS = {
    "flat_box": flat_box_chart,
    "polar_disk": polar_disk_chart,
    "sphere": sphere_chart,
    "graph": graph_chart,
}


def build_chart(spec: dict, resolution) -> Chart:
    spec = dict(spec)
    kind = spec.pop("kind", None)
    if kind not in CHART_KINDS:
        raise ScenarioError(f"unknown chart kind {kind!r}; expected one of {sorted(CHART_KINDS)}")
    res = spec.pop("resolution", None)
    if resolution is not None:
        res = resolution
    if res is None:
        raise ScenarioError("chart spec needs a resolution")
    builder = CHART_KINDS[kind]
    try:
        return builder(res, **{k: (tuple(map(tuple, v)) if k == "box" else v)
                               for k, v in spec.items()})
    except TypeError as exc:
        raise ScenarioError(f"bad parameters for chart kind {kind!r}: {exc}") from exc


# -- field builders ----------------------------------------------------------

@dataclass
class ChartBundle:
    """All per-component geometric data of a scenario at one resolution."""

    chart: Chart
    metric: MetricData
    frame: NormalFrame
    second_form: SecondFormField
    field: TensorField
    boundary: list

    @property
    def n(self) -> int:
        return self.chart.intrinsic_dim

    @property
    def m(self) -> int:
        return self.chart.ambient_dim - self.chart.intrinsic_dim


def _ambient_poly(spec, ambient_dim: int) -> Polynomial:
    """Polynomial in ambient coordinates; exponent tuples written for a smaller
    ambient space (e.g. before a codimension lift) are zero-padded."""
    terms = []
    for c, exps in spec:
        exps = list(exps)
        if len(exps) > ambient_dim:
            raise ScenarioError("polynomial uses more variables than the ambient dimension")
        terms.append([c, exps + [0] * (ambient_dim - len(exps))])
    return Polynomial(terms, nvars=ambient_dim)


def metric_field(bundle_geo, params) -> TensorField:
    chart, metric = bundle_geo
    return tensor_field(metric.g.copy(), metric, derivs=metric.dmetric.copy())


def conformal_field(bundle_geo, params) -> TensorField:
    chart, metric = bundle_geo
    poly = _ambient_poly(params["factor"], chart.ambient_dim)
    f = poly(chart.positions)
    if np.min(f) <= 0:
        raise ScenarioError("conformal factor must be positive on the chart")
    df = np.einsum("...a,...ak->...k", poly.gradient(chart.positions), chart.jac)
    vals = f[..., None, None] * metric.g
    derivs = (df[..., :, None, None] * metric.g[..., None, :, :]
              + f[..., None, None, None] * metric.dmetric)
    return tensor_field(vals, metric, derivs=derivs)


def ambient_form_field(bundle_geo, params) -> TensorField:
    """Pullback of an ambient diagonal quadratic form: A_ij = dF_i . D . dF_j.

    ``diagonal`` lists one polynomial (in ambient coordinates) per ambient
    axis; constants give fields that look diagonal in tangent frames aligned
    with the ambient axes.
    """
    chart, metric = bundle_geo
    diag_specs = params["diagonal"]
    if len(diag_specs) != chart.ambient_dim:
        raise ScenarioError("ambient form needs one diagonal entry per ambient axis")
    polys = [_ambient_poly(p, chart.ambient_dim) if not np.isscalar(p)
             else Polynomial([[float(p), [0] * chart.ambient_dim]])
             for p in diag_specs]
    pos, jac, hess = chart.positions, chart.jac, chart.hess
    d = np.stack([p(pos) for p in polys], axis=-1)                 # (*shape, A)
    if np.min(d) <= 0:
        raise ScenarioError("ambient diagonal entries must stay positive")
    vals = np.einsum("...ai,...a,...aj->...ij", jac, d, jac)
    dgrad = np.stack([np.einsum("...b,...bk->...k", p.gradient(pos), jac)
                      for p in polys], axis=-2)                    # (*shape, A, k)
    derivs = (np.einsum("...aik,...a,...aj->...kij", hess, d, jac)
              + np.einsum("...ai,...a,...ajk->...kij", jac, d, hess)
              + np.einsum("...ai,...ak,...aj->...kij", jac, dgrad, jac))
    return tensor_field(vals, metric, derivs=derivs)


def cofactor_potential_field(bundle_geo, params) -> TensorField:
    chart, metric = bundle_geo
    poly = _ambient_poly(params["potential"], chart.ambient_dim)
    return cofactor_field_from_convex_potential(poly, chart, metric)


def tabulated_field(bundle_geo, params) -> TensorField:
    chart, metric = bundle_geo
    vals = np.asarray(params["values"], dtype=float)
    derivs = params.get("derivs")
    if derivs is not None:
        derivs = np.asarray(derivs, dtype=float)
    return tensor_field(vals, metric, derivs=derivs)


FIELD_KINDS = {
    "metric": metric_field,
    "conformal": conformal_field,
    "ambient_form": ambient_form_field,
    "cofactor_potential": cofactor_potential_field,
    "tabulated": tabulated_field,
}


def build_field(spec: dict, chart: Chart, metric: MetricData) -> TensorField:
    spec = dict(spec)
    kind = spec.pop("kind", None)
    if kind not in FIELD_KINDS:
        raise ScenarioError(f"unknown field kind {kind!r}; expected one of {sorted(FIELD_KINDS)}")
    scale = spec.pop("scale", 1.0)
    field = FIELD_KINDS[kind]((chart, metric), spec)
    if scale != 1.0:
        from .fields import scaled
        field = scaled(field, float(scale))
    return field


# -- scenarios ---------------------------------------------------------------

@dataclass
class Scenario:
    """Declarative description of one verification case."""

    name: str
    description: str
    exercises: str            # which statement of the theory the case probes
    selector: str             # "general" | "codim2" | "codim1"
    charts: list              # list of chart spec dicts
    field: dict               # field spec dict
    default_resolution: int = 65
    tags: tuple = ()

    def __post_init__(self):
        if self.selector not in SELECTORS:
            raise ScenarioError(f"unknown selector {self.selector!r}")
        if not self.charts:
            raise ScenarioError("scenario needs at least one chart")

    @property
    def connected(self) -> bool:
        return len(self.charts) == 1

    def spec(self) -> dict:
        return {
            "name": self.name,
            "description": self.description,
            "exercises": self.exercises,
            "selector": self.selector,
            "charts": self.charts,
            "field": self.field,
            "default_resolution": self.default_resolution,
        }


def build(scenario: Scenario, resolution=None) -> list:
    """Instantiate every component of the scenario at the given resolution."""
    res = resolution if resolution is not None else scenario.default_resolution
    bundles = []
    for chart_spec in scenario.charts:
        chart = build_chart(chart_spec, res)
        m = chart.ambient_dim - chart.intrinsic_dim
        if scenario.selector == "codim1":
            if m != 1:
                raise ScenarioError(
                    f"scenario {scenario.name!r}: codim-1 selector needs codimension 1 "
                    f"before the lift, got m = {m}")
            chart = lift_codimension(chart)
        elif scenario.selector == "codim2" and m != 2:
            raise ScenarioError(
                f"scenario {scenario.name!r}: codim-2 selector needs codimension 2, "
                f"got m = {m}")
        elif scenario.selector == "general" and m < 2:
            raise ScenarioError(
                f"scenario {scenario.name!r}: general selector needs codimension >= 2")
        metric = induced_metric(chart)
        frame = normal_frame(chart)
        second = second_fundamental_form(chart, metric, frame)
        fld = build_field(scenario.field, chart, metric)
        boundary = boundary_samples(chart, metric)
        bundles.append(ChartBundle(chart=chart, metric=metric, frame=frame,
                                   second_form=second, field=fld, boundary=boundary))
    dims = {(b.n, b.m) for b in bundles}
    if len(dims) > 1:
        raise ScenarioError("all components must share dimension and codimension")
    return bundles


def catalog() -> dict:
    """Builtin scenarios, keyed by name.

    Disk charts difference their immersion (fd2) so the equality scenarios
    keep an honest second-order error to measure convergence against; the
    sphere uses exact closures (its quadrature error is already the budget).
    """
    disk = {"kind": "polar_disk", "ambient_dim": 4, "derivative_mode": "fd2"}
    sphere = {"kind": "sphere"}
    scenarios = [
        Scenario(
            name="flat-disk-equality",
            description="Unit disk in R^4 with the induced metric as tensor field",
            exercises="sharp codimension-2 equality configuration (ratio -> 1)",
            selector="codim2",
            charts=[disk],
            field={"kind": "metric"},
        ),
        Scenario(
            name="flat-disk-potential",
            description="Unit disk with A the cofactor of the Hessian of |x|^2/2",
            exercises="equality configuration built from a convex potential",
            selector="codim2",
            charts=[disk],
            field={"kind": "cofactor_potential",
                   "potential": [[0.5, [2, 0, 0, 0]], [0.5, [0, 2, 0, 0]]]},
        ),
        Scenario(
            name="flat-disk-anisotropic",
            description="Unit disk with the pullback of diag(1, 2, 1, 1)",
            exercises="strict inequality on a flat chart; rigidity contrast",
            selector="codim2",
            charts=[disk],
            field={"kind": "ambient_form", "diagonal": [1.0, 2.0, 1.0, 1.0]},
        ),
        Scenario(
            name="sphere-codim1-lift",
            description="Unit sphere in R^3, lifted to R^4, tensor field = metric",
            exercises="codimension-1 corollary via the totally geodesic lift (ratio -> 2)",
            selector="codim1",
            charts=[sphere],
            field={"kind": "metric"},
        ),
        Scenario(
            name="sphere-conformal",
            description="Lifted unit sphere with A = (1 + x3/2) * metric",
            exercises="conformal reduction on a curved chart",
            selector="codim1",
            charts=[sphere],
            field={"kind": "conformal",
                   "factor": [[1.0, [0, 0, 0]], [0.5, [0, 0, 1]]]},
        ),
        Scenario(
            name="disconnected-two-disks",
            description="Two disjoint unit disks in R^4 with the metric field",
            exercises="disconnected strict inequality (ratio -> sqrt(2))",
            selector="codim2",
            charts=[{"kind": "polar_disk", "ambient_dim": 4, "center": (-2.0, 0.0),
                     "derivative_mode": "fd2"},
                    {"kind": "polar_disk", "ambient_dim": 4, "center": (2.0, 0.0),
                     "derivative_mode": "fd2"}],
            field={"kind": "metric"},
        ),
        Scenario(
            name="saddle-graph",
            description="Graph patch (x, y, 0.2*x*y, 0.1*(x^2 - y^2)) over [0,1]^2",
            exercises="generic curved codimension-2 chart with boundary",
            selector="codim2",
            charts=[{"kind": "graph",
                     "heights": [[[0.2, [1, 1]]],
                                 [[0.1, [2, 0]], [-0.1, [0, 2]]]]}],
            field={"kind": "metric"},
        ),
    ]
    return {s.name: s for s in scenarios}


def parse_scenario(obj) -> Scenario:
    """Resolve a catalog name or an inline scenario dict."""
    if isinstance(obj, str):
        cat = catalog()
        if obj not in cat:
            raise ScenarioError(f"unknown scenario {obj!r}; see list-scenarios")
        return cat[obj]
    if not isinstance(obj, dict):
        raise ScenarioError(f"scenario entry must be a name or an object, got {type(obj).__name__}")
    try:
        return Scenario(
            name=obj["name"],
            description=obj.get("description", ""),
            exercises=obj.get("exercises", ""),
            selector=obj.get("selector", "general"),
            charts=list(obj["charts"]),
            field=dict(obj["field"]),
            default_resolution=int(obj.get("default_resolution", 65)),
        )
    except KeyError as exc:
        raise ScenarioError(f"scenario object is missing field {exc.args[0]!r}") from exc


def random_scenario(index: int, seed: int) -> Scenario:
    """Randomized near-flat codimension-2 scenario with a perturbed conformal field.

    Deterministic in (index, seed); used by the inequality sweep.
    """
    rng = np.random.Generator(np.random.Philox(np.random.SeedSequence(seed, spawn_key=(index,))))
    amp = 0.05 + 0.25 * rng.random()

    def poly2(scale):
        terms = []
        for exps in [(1, 0), (0, 1), (2, 0), (1, 1), (0, 2)]:
            terms.append([scale * float(rng.uniform(-1.0, 1.0)), list(exps)])
        return terms

    heights = [poly2(amp), poly2(amp)]
    conf_terms = [[1.0, [0, 0, 0, 0]]]
    for axis in range(4):
        exps = [0, 0, 0, 0]
        exps[axis] = 1
        conf_terms.append([0.15 * float(rng.uniform(-1.0, 1.0)), exps])
    diag = [float(1.0 + 0.3 * rng.uniform(-1.0, 1.0)) for _ in range(4)]
    field = {"kind": "conformal", "factor": conf_terms} if rng.random() < 0.5 else \
            {"kind": "ambient_form", "diagonal": diag}
    return Scenario(
        name=f"random-{index:03d}",
        description="randomized near-flat graph patch with a random positive field",
        exercises="inequality verdict on randomized scenarios",
        selector="codim2",
        charts=[{"kind": "graph", "heights": heights}],
        field=field,
        default_resolution=33,
    )
