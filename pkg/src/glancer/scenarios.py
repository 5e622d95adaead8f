"""Scenario construction: built-in domains, config files, derived charts.

A scenario bundles the metric evaluator, the boundary defining function, the
domain box, an optional potential f(t, x), classification thresholds, and the
extension-band half width. Scenarios are read-only after construction and are
rebuilt from their resolved config dict when shipped to worker processes.
"""

from __future__ import annotations

import hashlib
import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np
import jsonschema
from scipy.interpolate import RegularGridInterpolator

from .errors import ValidationError
from .geometry import (
    BoundaryDef,
    Chart,
    MetricEval,
    callable_metric,
    constant_metric,
    diagonal_metric,
    identity_chart,
    identity_metric,
)
from .symbol import ClassifyThresholds

log = logging.getLogger("glancer.scenarios")

BUILTIN_NAMES = ("half_plane", "strip", "disk_interior", "disk_exterior", "annulus")

CONFIG_SCHEMA = {
    "type": "object",
    "required": ["schema"],
    "additionalProperties": False,
    "properties": {
        "schema": {"const": 1},
        "name": {"type": "string"},
        "builtin": {"enum": list(BUILTIN_NAMES)},
        "params": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "height": {"type": "number", "exclusiveMinimum": 0},
                "radius": {"type": "number", "exclusiveMinimum": 0},
                "r0": {"type": "number", "exclusiveMinimum": 0},
                "r1": {"type": "number", "exclusiveMinimum": 0},
                "box_half_width": {"type": "number", "exclusiveMinimum": 0},
            },
        },
        "metric": {
            "type": "object",
            "required": ["kind"],
            "additionalProperties": False,
            "properties": {
                "kind": {"enum": ["identity", "diagonal", "constant", "expression"]},
                "entries": {"type": "array"},
                "matrix": {"type": "array"},
                "expressions": {"type": "array"},
                "grid_n": {"type": "integer", "minimum": 9},
            },
        },
        "boundary": {
            "type": "object",
            "required": ["kind"],
            "additionalProperties": False,
            "properties": {
                "kind": {"enum": ["expression"]},
                "phi": {"type": "string"},
                "box": {"type": "array"},
            },
        },
        "potential": {
            "type": "object",
            "required": ["kind"],
            "additionalProperties": False,
            "properties": {
                "kind": {"enum": ["zero", "constant", "expression"]},
                "value": {"type": "number"},
                "expr": {"type": "string"},
            },
        },
        "band": {"type": "number", "exclusiveMinimum": 0},
        "thresholds": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "eps_g": {"type": "number"},
                "eps_g2": {"type": "number"},
                "char_tol": {"type": "number"},
                "boundary_tol": {"type": "number"},
            },
        },
    },
}

_EXPR_FUNCS = {
    "sin": np.sin,
    "cos": np.cos,
    "tan": np.tan,
    "exp": np.exp,
    "log": np.log,
    "sqrt": np.sqrt,
    "tanh": np.tanh,
    "sinh": np.sinh,
    "cosh": np.cosh,
    "arctan": np.arctan,
    "abs": np.abs,
    "hypot": np.hypot,
    "pi": np.pi,
}


def compile_expression(expr: str, names: tuple[str, ...]):
    """Compile a scalar expression over the given variable names.

    Only the listed names and a fixed table of numpy math functions are
    visible; no builtins. Returns a function of keyword arguments.
    """
    code = compile(expr, "<scenario expression>", "eval")
    allowed = set(names) | set(_EXPR_FUNCS)
    unknown = set(code.co_names) - allowed
    if unknown:
        raise ValidationError(f"expression uses unknown names {sorted(unknown)}: {expr!r}")

    def fn(**env):
        return eval(code, {"__builtins__": {}}, {**_EXPR_FUNCS, **env})

    return fn


@dataclass
class Scenario:
    name: str
    dim: int
    metric: MetricEval
    boundary: BoundaryDef
    domain_lo: np.ndarray
    domain_hi: np.ndarray
    f: Callable[[float, np.ndarray], float] | None = None
    band: float = 0.1
    thresholds: ClassifyThresholds = field(default_factory=ClassifyThresholds)
    config: dict = field(default_factory=dict)
    chart: Chart | None = None

    def __post_init__(self):
        self.domain_lo = np.asarray(self.domain_lo, dtype=float)
        self.domain_hi = np.asarray(self.domain_hi, dtype=float)
        if self.chart is None:
            self.chart = identity_chart(self.name, self.domain_lo, self.domain_hi)

    @property
    def config_hash(self) -> str:
        payload = json.dumps(self.config, sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(payload.encode()).hexdigest()[:16]

    def potential(self, t: float, x: np.ndarray) -> float:
        if self.f is None:
            return 0.0
        return float(self.f(t, x))

    def describe(self) -> dict:
        return {"scenario": self.name, "scenario_hash": self.config_hash, "dim": self.dim}


# ---------------------------------------------------------------------------
# built-in boundaries


def _half_plane_boundary() -> BoundaryDef:
    zero = np.zeros((2, 2))
    e2 = np.array([0.0, 1.0])
    return BoundaryDef(
        phi=lambda x: float(x[1]),
        dphi=lambda x: e2,
        d2phi=lambda x: zero,
    )


def _strip_boundary(height: float) -> BoundaryDef:
    d2 = np.array([[0.0, 0.0], [0.0, -2.0 / height]])
    return BoundaryDef(
        phi=lambda x: float(x[1] * (height - x[1]) / height),
        dphi=lambda x: np.array([0.0, (height - 2.0 * x[1]) / height]),
        d2phi=lambda x: d2,
    )


def _radial_parts(x):
    r = float(np.hypot(x[0], x[1]))
    r = max(r, 1e-12)
    xhat = np.asarray(x, dtype=float) / r
    tang = np.eye(2) - np.outer(xhat, xhat)
    return r, xhat, tang


def _disk_boundary(radius: float, interior: bool) -> BoundaryDef:
    sign = 1.0 if interior else -1.0

    def phi(x):
        r = float(np.hypot(x[0], x[1]))
        return sign * (radius - r)

    def dphi(x):
        _, xhat, _ = _radial_parts(x)
        return -sign * xhat

    def d2phi(x):
        r, _, tang = _radial_parts(x)
        return -sign * tang / r

    return BoundaryDef(phi=phi, dphi=dphi, d2phi=d2phi)


def _annulus_boundary(r0: float, r1: float) -> BoundaryDef:
    def inner_branch(x):
        r = float(np.hypot(x[0], x[1]))
        return (r - r0) <= (r1 - r)

    def phi(x):
        r = float(np.hypot(x[0], x[1]))
        return min(r - r0, r1 - r)

    def dphi(x):
        _, xhat, _ = _radial_parts(x)
        return xhat if inner_branch(x) else -xhat

    def d2phi(x):
        r, _, tang = _radial_parts(x)
        return tang / r if inner_branch(x) else -tang / r

    return BoundaryDef(phi=phi, dphi=dphi, d2phi=d2phi)


def _expression_boundary(phi_expr: str, fd_step: float = 1e-5) -> BoundaryDef:
    fn = compile_expression(phi_expr, ("x1", "x2"))

    def phi(x):
        return float(fn(x1=x[0], x2=x[1]))

    def dphi(x):
        out = np.empty(2)
        for k in range(2):
            e = np.zeros(2)
            e[k] = fd_step
            out[k] = (phi(x + e) - phi(x - e)) / (2.0 * fd_step)
        return out

    def d2phi(x):
        out = np.empty((2, 2))
        for k in range(2):
            e = np.zeros(2)
            e[k] = fd_step
            out[k] = (dphi(x + e) - dphi(x - e)) / (2.0 * fd_step)
        return 0.5 * (out + out.T)

    return BoundaryDef(phi=phi, dphi=dphi, d2phi=d2phi)


# ---------------------------------------------------------------------------
# metric and potential blocks


def _metric_from_block(block: dict, dim: int, box) -> MetricEval:
    kind = block.get("kind", "identity")
    if kind == "identity":
        return identity_metric(dim)
    if kind == "diagonal":
        return diagonal_metric(block["entries"])
    if kind == "constant":
        return constant_metric(block["matrix"])
    if kind == "expression":
        return _grid_metric(block, dim, box)
    raise ValidationError(f"unknown metric kind {kind!r}")


def _grid_metric(block: dict, dim: int, box) -> MetricEval:
    """Expression entries sampled on a regular grid and splined.

    The interpolant itself is the metric; derivatives come from central
    differences of the interpolant.
    """
    exprs = block["expressions"]
    n = int(block.get("grid_n", 65))
    lo, hi = box
    axes = [np.linspace(lo[k], hi[k], n) for k in range(dim)]
    mesh = np.meshgrid(*axes, indexing="ij")
    env = {f"x{k + 1}": mesh[k] for k in range(dim)}
    interps = {}
    for i in range(dim):
        for j in range(i, dim):
            fn = compile_expression(str(exprs[i][j]), tuple(env))
            values = np.broadcast_to(np.asarray(fn(**env), dtype=float), mesh[0].shape)
            interps[(i, j)] = RegularGridInterpolator(
                axes, np.array(values), method="cubic", bounds_error=False, fill_value=None
            )

    def g(x):
        out = np.empty((dim, dim))
        for i in range(dim):
            for j in range(i, dim):
                out[i, j] = out[j, i] = float(interps[(i, j)](x)[0])
        return out

    metric = callable_metric(dim, g)
    sample = g(0.5 * (np.asarray(lo) + np.asarray(hi)))
    if np.linalg.eigvalsh(sample).min() <= 0:
        raise ValidationError("expression metric is not positive definite at the box center")
    return metric


def _potential_from_block(block: dict | None):
    if block is None or block.get("kind", "zero") == "zero":
        return None
    kind = block["kind"]
    if kind == "constant":
        c = float(block.get("value", 0.0))
        return lambda t, x: c
    if kind == "expression":
        fn = compile_expression(block["expr"], ("t", "x1", "x2"))
        return lambda t, x: float(fn(t=t, x1=x[0], x2=x[1]))
    raise ValidationError(f"unknown potential kind {kind!r}")


# ---------------------------------------------------------------------------
# assembly and validation


_BUILTIN_DEFAULT_PARAMS = {
    "half_plane": {"box_half_width": 12.0},
    "strip": {"height": 1.0, "box_half_width": 12.0},
    "disk_interior": {"radius": 1.0},
    "disk_exterior": {"radius": 1.0, "box_half_width": 4.0},
    "annulus": {"r0": 0.5, "r1": 1.0},
}


# Chart boxes extend a collar beyond the physical boundary: the two-sided
# reflection band lives there, and boundary-following integrators take
# intermediate stage evaluations slightly outside the closed domain.
_BOX_COLLAR = 0.25


def _builtin_geometry(builtin: str, params: dict):
    p = dict(_BUILTIN_DEFAULT_PARAMS[builtin])
    p.update(params or {})
    w = p.get("box_half_width", 0.0)
    c = _BOX_COLLAR
    if builtin == "half_plane":
        return _half_plane_boundary(), (np.array([-w, -c]), np.array([w, w]))
    if builtin == "strip":
        h = p["height"]
        return _strip_boundary(h), (np.array([-w, -c]), np.array([w, h + c]))
    if builtin == "disk_interior":
        a = p["radius"] + c
        return _disk_boundary(p["radius"], interior=True), (np.array([-a, -a]), np.array([a, a]))
    if builtin == "disk_exterior":
        a = p["radius"]
        return _disk_boundary(a, interior=False), (np.array([-w, -w]), np.array([w, w]))
    if builtin == "annulus":
        r0, r1 = p["r0"], p["r1"]
        if r0 >= r1:
            raise ValidationError("annulus requires r0 < r1")
        a = r1 + c
        return _annulus_boundary(r0, r1), (np.array([-a, -a]), np.array([a, a]))
    raise ValidationError(f"unknown builtin {builtin!r}")


def _reject_corners(boundary: BoundaryDef, lo, hi, n: int = 41) -> None:
    """Reject boundary definitions whose zero set has degenerate points.

    Each grid point is pushed toward the zero set by Newton steps; a point
    that lands on the boundary with a vanishing gradient means a corner or
    crossing, which the tracer cannot handle. Interior critical points of
    phi (gradient zero but phi away from zero) are fine and skipped.
    """
    xs = np.linspace(lo[0], hi[0], n)
    ys = np.linspace(lo[1], hi[1], n)
    for a in xs:
        for b in ys:
            x = np.array([a, b])
            for _ in range(4):
                v = boundary.phi(x)
                d = np.asarray(boundary.dphi(x), dtype=float)
                nd2 = float(d @ d)
                if abs(v) <= 1e-10:
                    if nd2 < 1e-16:
                        raise ValidationError(
                            f"dphi vanishes on the boundary near {x}; "
                            "corners and crossings are not supported"
                        )
                    break
                if nd2 < 1e-24:
                    break  # critical point off the zero set; harmless
                step = -v / nd2 * d
                if float(np.linalg.norm(step)) > 2.0 * float(np.linalg.norm(hi - lo)):
                    break  # diverging; not converging to a boundary point
                x = x + step


def resolve_config(config: dict) -> dict:
    """Validate against the schema and fill defaults; returns the resolved dict."""
    try:
        jsonschema.validate(config, CONFIG_SCHEMA)
    except jsonschema.ValidationError as exc:
        raise ValidationError(f"scenario config invalid: {exc.message}") from exc
    if "builtin" not in config and "boundary" not in config:
        raise ValidationError("scenario config needs either 'builtin' or a 'boundary' block")
    resolved = {
        "schema": 1,
        "builtin": config.get("builtin"),
        "name": config.get("name") or config.get("builtin") or "custom",
        "params": dict(config.get("params", {})),
        "metric": dict(config.get("metric", {"kind": "identity"})),
        "boundary": dict(config.get("boundary", {})) or None,
        "potential": dict(config.get("potential", {})) or None,
        "band": float(config.get("band", 0.1)),
        "thresholds": dict(config.get("thresholds", {})),
    }
    if resolved["builtin"] is not None:
        defaults = dict(_BUILTIN_DEFAULT_PARAMS[resolved["builtin"]])
        defaults.update(resolved["params"])
        resolved["params"] = defaults
    # Absent optional blocks are dropped, not stored as None, so the resolved
    # dict itself revalidates (resolve is idempotent; workers rebuild from it).
    return {k: v for k, v in resolved.items() if v is not None}


def from_config(config: dict) -> Scenario:
    resolved = resolve_config(config)
    dim = 2
    if resolved.get("builtin") is not None:
        boundary, (lo, hi) = _builtin_geometry(resolved["builtin"], resolved["params"])
    else:
        block = resolved["boundary"]
        box = block.get("box", [[-2.0, -2.0], [2.0, 2.0]])
        lo, hi = np.asarray(box[0], dtype=float), np.asarray(box[1], dtype=float)
        boundary = _expression_boundary(block["phi"])
    lo = np.asarray(lo, dtype=float)
    hi = np.asarray(hi, dtype=float)
    _reject_corners(boundary, lo, hi)
    metric = _metric_from_block(resolved["metric"], dim, (lo, hi))
    thresholds = ClassifyThresholds(**resolved["thresholds"])
    return Scenario(
        name=resolved["name"],
        dim=dim,
        metric=metric,
        boundary=boundary,
        domain_lo=lo,
        domain_hi=hi,
        f=_potential_from_block(resolved.get("potential")),
        band=resolved["band"],
        thresholds=thresholds,
        config=resolved,
    )


def load_scenario(source: str | Path | dict) -> Scenario:
    """Accepts a built-in name, a JSON config path, or a config dict."""
    if isinstance(source, dict):
        return from_config(source)
    text = str(source)
    if text in BUILTIN_NAMES:
        return from_config({"schema": 1, "builtin": text})
    path = Path(text)
    if not path.exists():
        raise ValidationError(
            f"scenario {text!r} is neither a built-in name {BUILTIN_NAMES} nor a file"
        )
    try:
        config = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise ValidationError(f"scenario file {path} is not valid JSON: {exc}") from exc
    return from_config(config)


def builtin(name: str, metric: dict | None = None, potential: dict | None = None, **params) -> Scenario:
    """Convenience constructor used widely in tests and scripts."""
    config: dict = {"schema": 1, "builtin": name}
    if metric:
        config["metric"] = metric
    if potential:
        config["potential"] = potential
    if params:
        config["params"] = params
    return from_config(config)


# ---------------------------------------------------------------------------
# derived scenario living in a chart


def chart_scenario(base: Scenario, chart: Chart, fd_step: float = 1e-5) -> Scenario:
    """Pull the scenario back through a chart whose last coordinate is phi.

    The boundary in the derived scenario is exactly {z = 0} with dphi = e_d,
    so hz2p there equals twice the (d,d) entry of the pulled-back inverse
    metric.
    """
    dim = base.dim

    def g(y):
        J = chart.jacobian(y)
        return J.T @ base.metric.g(chart.to_scenario(y)) @ J

    metric = callable_metric(dim, g)
    e_d = np.zeros(dim)
    e_d[-1] = 1.0
    zero = np.zeros((dim, dim))
    boundary = BoundaryDef(
        phi=lambda y: float(y[-1]),
        dphi=lambda y: e_d,
        d2phi=lambda y: zero,
    )
    f = None
    if base.f is not None:
        f = lambda t, y: base.potential(t, chart.to_scenario(y))
    return Scenario(
        name=chart.name,
        dim=dim,
        metric=metric,
        boundary=boundary,
        domain_lo=chart.domain_lo,
        domain_hi=chart.domain_hi,
        f=f,
        band=min(base.band, float(chart.domain_hi[-1])),
        thresholds=base.thresholds,
        config={"derived_from": base.config, "chart": chart.name},
        chart=chart,
    )
