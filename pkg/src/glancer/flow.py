"""Generalized ray tracing with boundary events.

Interior Hamiltonian integration with bisected boundary detection, specular
reflection, gliding-arc integration with constraint projection, diffractive
pass-through, the discrete glancing-step construction, and perturbation
probes for flow continuity. The packed state layout is
[t, x (d), tau, xi (d)], matching PhasePoint.as_vector.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy.spatial.distance import cdist

from . import geometry as geo
from . import symbol as sym
from .errors import (
    DegenerateNormal,
    DegenerateTransversal,
    LeftChart,
    MaxPiecesExceeded,
    MaxStepsExceeded,
    NotCharacteristic,
    NotHyperbolic,
    NotOnBoundary,
    OutOfChart,
    ProjectionDiverged,
    StepFailure,
)
from .symbol import PhasePoint, Tag

log = logging.getLogger("glancer.flow")

INTERIOR = "Interior"
GLIDING = "Gliding"


@dataclass(frozen=True)
class IntegratorParams:
    """Fixed-step integration controls shared by all tracing entry points."""

    h: float = 1e-3
    event_tol: float = 1e-10
    max_pieces: int = 256
    project: bool = True
    gliding_exit: float = 1e-7
    max_steps: int = 2_000_000
    tangency_gate: float = 0.05

    def __post_init__(self):
        if self.h <= 0:
            raise ValueError("step size h must be positive")


@dataclass
class TrajectoryPiece:
    """One contiguous run of samples, either interior flow or a gliding arc.

    s holds the signed curve parameter (monotone along the trace direction);
    states holds one packed phase vector per row.
    """

    kind: str
    s: np.ndarray
    states: np.ndarray

    @property
    def dim(self) -> int:
        return (self.states.shape[1] - 2) // 2

    def __len__(self) -> int:
        return len(self.s)

    def point(self, i: int) -> PhasePoint:
        return PhasePoint.from_vector(self.states[i], self.dim)

    @property
    def samples(self):
        return [(float(si), self.point(i)) for i, si in enumerate(self.s)]

    @property
    def s_span(self) -> tuple[float, float]:
        return float(self.s[0]), float(self.s[-1])


@dataclass
class ExitEvent:
    reason: str  # "span_end" | "boundary" | "chart_exit" | "glide_handoff"
    s: float
    rho: PhasePoint
    bclass: sym.BoundaryClass | None = None


@dataclass
class Break:
    """Hyperbolic jump: rho_plus = Sigma(rho_minus), shared base point."""

    s: float
    rho_minus: PhasePoint
    rho_plus: PhasePoint
    kind: str = "Hyperbolic"


@dataclass
class GenBicharacteristic:
    pieces: list[TrajectoryPiece]
    break_set: list[Break]
    junctions: list[tuple[float, sym.BoundaryClass]]
    dim: int
    direction: int
    rho0: PhasePoint
    t_horizon: float

    def all_samples(self):
        """Concatenated (s, states, kind_code, piece_index) across pieces.

        kind_code is 0 for interior samples and 1 for gliding samples.
        Junction s-values appear twice (end of one piece, start of the next),
        which quadrature treats as a zero-width interval.
        """
        ss, sts, kinds, idx = [], [], [], []
        for k, p in enumerate(self.pieces):
            ss.append(p.s)
            sts.append(p.states)
            code = 1 if p.kind == GLIDING else 0
            kinds.append(np.full(len(p.s), code, dtype=np.int8))
            idx.append(np.full(len(p.s), k, dtype=np.int32))
        return (
            np.concatenate(ss),
            np.vstack(sts),
            np.concatenate(kinds),
            np.concatenate(idx),
        )

    @property
    def n_samples(self) -> int:
        return sum(len(p) for p in self.pieces)


def _interior_rhs(scenario, direction: float) -> Callable[[np.ndarray], np.ndarray]:
    d = scenario.dim
    m = scenario.metric
    sl_x = slice(1, 1 + d)
    sl_xi = slice(2 + d, 2 + 2 * d)
    if m.is_constant:
        gi = m.g_inv(np.zeros(d))

        def rhs(y):
            dy = np.zeros(2 * d + 2)
            dy[0] = -2.0 * y[1 + d]
            dy[sl_x] = 2.0 * (gi @ y[sl_xi])
            return direction * dy

        return rhs

    def rhs(y):
        x = y[sl_x]
        xi = y[sl_xi]
        dy = np.zeros(2 * d + 2)
        dy[0] = -2.0 * y[1 + d]
        dy[sl_x] = 2.0 * (m.g_inv(x) @ xi)
        dy[sl_xi] = -np.einsum("kij,i,j->k", m.dg_inv(x), xi, xi)
        return direction * dy

    return rhs


def _gliding_rhs(scenario, direction: float) -> Callable[[np.ndarray], np.ndarray]:
    d = scenario.dim

    def rhs(y):
        up = sym.gliding_field(scenario, PhasePoint.from_vector(y, d))
        return direction * up.as_vector()

    return rhs


def _rk4_step(rhs, y, h):
    k1 = rhs(y)
    k2 = rhs(y + (0.5 * h) * k1)
    k3 = rhs(y + (0.5 * h) * k2)
    k4 = rhs(y + h * k3)
    return y + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)


def _rescale_char(scenario, y, d) -> None:
    """Project xi onto the characteristic shell |xi|_x = |tau| in place."""
    x = y[1 : 1 + d]
    xi = y[2 + d :]
    nrm = float(np.sqrt(xi @ scenario.metric.g_inv(x) @ xi))
    target = abs(float(y[1 + d]))
    if nrm < 1e-300:
        return
    factor = target / nrm
    if abs(factor - 1.0) > 0.1:
        raise StepFailure(
            f"characteristic drift too large for projection: |xi| = {nrm:.6g}, "
            f"|tau| = {target:.6g}; reduce the step size"
        )
    y[2 + d :] = xi * factor


def _check_characteristic(scenario, rho: PhasePoint) -> None:
    scale = max(1.0, rho.tau * rho.tau)
    p0 = sym.p_eval(scenario, rho)
    if abs(p0) > 1e-6 * scale:
        raise NotCharacteristic(f"p(rho) = {p0:.3e}; start must lie on the characteristic set")


def _make_piece(kind, ss, ys) -> TrajectoryPiece:
    return TrajectoryPiece(kind=kind, s=np.asarray(ss, dtype=float), states=np.vstack(ys))


def _locate_scalar_zero(rhs, y_from, h, value_of, tol, want_abs=True):
    """Bisect sigma in (0, h] for a sign change of value_of along RK4 substeps.

    value_of maps a packed state to a scalar that is >= 0-side at sigma=0 and
    < 0 at sigma=h. Returns (sigma, state) at the located zero.
    """
    lo, hi = 0.0, h
    best = None
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        y_mid = _rk4_step(rhs, y_from, mid)
        v = value_of(y_mid)
        if want_abs and abs(v) <= tol:
            return mid, y_mid
        if v > 0.0:
            lo = mid
        else:
            hi = mid
            best = (mid, y_mid)
        if hi - lo < 1e-16 * max(1.0, h):
            break
    if best is None:
        return None
    return best


def integrate_interior(
    scenario,
    rho0: PhasePoint,
    s_span,
    params: IntegratorParams | None = None,
    direction: int = 1,
    _skip_tangency_steps: int = 0,
) -> tuple[TrajectoryPiece, ExitEvent]:
    """Trace the Hamiltonian flow until the span ends or the boundary is met.

    The trace runs on the internal clock sigma in [s_span[0], s_span[1]];
    recorded s values are direction * sigma. Boundary crossings are bisected
    to |phi| <= event_tol and returned classified. Exact tangential contacts
    (phi dips to 0 with no sign change) are also detected and returned as
    boundary events, so diffractive pass-throughs are visible to the caller.
    """
    params = params or IntegratorParams()
    d = scenario.dim
    sig0, sig1 = float(s_span[0]), float(s_span[1])
    if sig1 <= sig0:
        raise ValueError(f"empty integration span {s_span}")
    _check_characteristic(scenario, rho0)
    sgn = float(direction)
    rhs = _interior_rhs(scenario, sgn)
    phi_f = scenario.boundary.phi
    dphi_f = scenario.boundary.dphi
    m = scenario.metric

    def phi_of(y):
        return float(phi_f(y[1 : 1 + d]))

    def q_of(y):
        # signed boundary approach rate d(phi)/d(sigma) = direction * hpz
        x = y[1 : 1 + d]
        return 2.0 * sgn * float(np.asarray(dphi_f(x), dtype=float) @ (m.g_inv(x) @ y[2 + d :]))

    y = rho0.as_vector()
    ss = [sgn * sig0]
    ys = [y.copy()]
    sig = sig0
    phi_prev = phi_of(y)
    q_prev = q_of(y)
    if phi_prev < -10.0 * params.event_tol:
        raise StepFailure(f"interior start lies outside the domain: phi = {phi_prev:.3e}")
    skip = int(_skip_tangency_steps)
    steps = 0
    b_tol = scenario.thresholds.boundary_tol
    while sig < sig1 - 1e-15:
        h = min(params.h, sig1 - sig)
        y_new = _rk4_step(rhs, y, h)
        steps += 1
        if steps > params.max_steps:
            raise MaxStepsExceeded(f"more than {params.max_steps} interior steps")
        if not np.all(np.isfinite(y_new)):
            raise StepFailure("non-finite state produced by the integrator")
        x_new = y_new[1 : 1 + d]
        if params.project:
            _rescale_char(scenario, y_new, d)
        phi_new = phi_of(y_new)
        q_new = q_of(y_new)

        # Boundary crossing is checked before the chart box: a step that
        # overshoots the boundary usually leaves the box as well when the
        # box is the closure of the domain, and must still count as a hit.
        if phi_new < -1e-14:
            found = _locate_scalar_zero(rhs, y, h, phi_of, params.event_tol)
            if found is None:
                raise StepFailure("boundary bisection failed to bracket the crossing")
            sig_hit, y_hit = found
            if sig_hit < 1e-12 * h:
                raise StepFailure("boundary crossing at zero step; reduce the step size")
            if params.project:
                _rescale_char(scenario, y_hit, d)
            s_hit = sgn * (sig + sig_hit)
            ss.append(s_hit)
            ys.append(y_hit)
            rho_hit = PhasePoint.from_vector(y_hit, d)
            bc = sym.classify_boundary_point(scenario, rho_hit)
            return _make_piece(INTERIOR, ss, ys), ExitEvent("boundary", s_hit, rho_hit, bc)

        if not geo.in_domain(scenario, x_new):
            rho_last = PhasePoint.from_vector(y, d)
            return _make_piece(INTERIOR, ss, ys), ExitEvent("chart_exit", ss[-1], rho_last)

        if skip > 0:
            skip -= 1
        elif q_prev < 0.0 <= q_new and min(phi_prev, phi_new) <= params.tangency_gate:
            # The trajectory stopped approaching the boundary inside this
            # step; if the turning point actually reaches phi = 0 it is a
            # tangential contact (diffractive or worse), not a crossing.
            # q runs negative to positive here, so bisect on -q.
            found = _locate_scalar_zero(rhs, y, h, lambda yy: -q_of(yy), 1e-12)
            if found is not None:
                sig_t, y_t = found
                if abs(phi_of(y_t)) <= max(b_tol, 10.0 * params.event_tol):
                    if params.project:
                        _rescale_char(scenario, y_t, d)
                    s_t = sgn * (sig + sig_t)
                    ss.append(s_t)
                    ys.append(y_t)
                    rho_t = PhasePoint.from_vector(y_t, d)
                    bc = sym.classify_boundary_point(scenario, rho_t)
                    return _make_piece(INTERIOR, ss, ys), ExitEvent("boundary", s_t, rho_t, bc)

        sig += h
        ss.append(sgn * sig)
        ys.append(y_new)
        y = y_new
        phi_prev, q_prev = phi_new, q_new

    rho_end = PhasePoint.from_vector(y, d)
    return _make_piece(INTERIOR, ss, ys), ExitEvent("span_end", ss[-1], rho_end)


def reflect(scenario, rho_minus: PhasePoint) -> PhasePoint:
    """Specular reflection at an outgoing hyperbolic boundary point."""
    bc = sym.classify_boundary_point(scenario, rho_minus)
    if bc.tag is not Tag.HYPERBOLIC_OUT:
        raise NotHyperbolic(f"reflect expects a HyperbolicOut point, got {bc.tag.value}")
    return sym.sigma(scenario, rho_minus)


def _project_gliding(scenario, y, d, tol: float = 1e-12, max_iter: int = 25) -> None:
    """Newton-project a packed state onto {phi = 0, hpz = 0, p = 0} in place."""
    phi_f = scenario.boundary.phi
    dphi_f = scenario.boundary.dphi
    m = scenario.metric
    scale = max(1.0, abs(float(y[1 + d])))
    for _ in range(max_iter):
        x = y[1 : 1 + d]
        ph = float(phi_f(x))
        dp = np.asarray(dphi_f(x), dtype=float)
        gidp = m.g_inv(x) @ dp
        h2 = 2.0 * float(dp @ gidp)
        if h2 < 1e-12:
            raise DegenerateTransversal(f"hz2p = {h2:.3e} during gliding projection")
        y[1 : 1 + d] = x - (2.0 * ph / h2) * gidp

        x = y[1 : 1 + d]
        dp = np.asarray(dphi_f(x), dtype=float)
        gidp = m.g_inv(x) @ dp
        h2 = 2.0 * float(dp @ gidp)
        xi = y[2 + d :]
        hpz_v = 2.0 * float(xi @ gidp)
        y[2 + d :] = xi - (hpz_v / h2) * dp
        _rescale_char(scenario, y, d)

        x = y[1 : 1 + d]
        xi = y[2 + d :]
        gidp = m.g_inv(x) @ np.asarray(dphi_f(x), dtype=float)
        if abs(float(phi_f(x))) <= tol and abs(2.0 * float(xi @ gidp)) <= 1e-10 * scale:
            return
    raise ProjectionDiverged("gliding constraint projection did not converge")


def integrate_gliding(
    scenario,
    rho0: PhasePoint,
    s_span,
    params: IntegratorParams | None = None,
    direction: int = 1,
) -> tuple[TrajectoryPiece, ExitEvent]:
    """Trace the gliding field along the boundary with constraint projection.

    Hands off back to the interior when hp2z exceeds the exit threshold at
    two consecutive samples (hysteresis); the event points at the first of
    the two.
    """
    params = params or IntegratorParams()
    d = scenario.dim
    sig0, sig1 = float(s_span[0]), float(s_span[1])
    if sig1 <= sig0:
        raise ValueError(f"empty integration span {s_span}")
    sgn = float(direction)
    rhs = _gliding_rhs(scenario, sgn)
    y = rho0.as_vector()
    _project_gliding(scenario, y, d)
    ss = [sgn * sig0]
    ys = [y.copy()]
    sig = sig0
    exceed = 0
    steps = 0
    while sig < sig1 - 1e-15:
        h = min(params.h, sig1 - sig)
        y_new = _rk4_step(rhs, y, h)
        steps += 1
        if steps > params.max_steps:
            raise MaxStepsExceeded(f"more than {params.max_steps} gliding steps")
        if not np.all(np.isfinite(y_new)):
            raise StepFailure("non-finite state produced by the gliding integrator")
        if not geo.in_domain(scenario, y_new[1 : 1 + d]):
            rho_last = PhasePoint.from_vector(y, d)
            return _make_piece(GLIDING, ss, ys), ExitEvent("chart_exit", ss[-1], rho_last)
        _project_gliding(scenario, y_new, d)
        sig += h
        ss.append(sgn * sig)
        ys.append(y_new)
        rho_new = PhasePoint.from_vector(y_new, d)
        if sym.hp2z(scenario, rho_new) > params.gliding_exit:
            exceed += 1
            if exceed >= 2:
                ss.pop()
                ys.pop()
                rho_h = PhasePoint.from_vector(ys[-1], d)
                bc = sym.classify_boundary_point(scenario, rho_h)
                return _make_piece(GLIDING, ss, ys), ExitEvent(
                    "glide_handoff", ss[-1], rho_h, bc
                )
        else:
            exceed = 0
        y = y_new
    rho_end = PhasePoint.from_vector(y, d)
    return _make_piece(GLIDING, ss, ys), ExitEvent("span_end", ss[-1], rho_end)


def trace_generalized(
    scenario,
    rho0: PhasePoint,
    t_horizon: float,
    params: IntegratorParams | None = None,
    direction: int = 1,
) -> GenBicharacteristic:
    """Trace the full broken/gliding ray until |t - t0| reaches t_horizon.

    direction=+1 advances the curve parameter s forward, -1 backward; since
    dt/ds = -2 tau, time runs opposite to s for tau > 0 either way. Breaks
    are always recorded with rho_plus = Sigma(rho_minus) regardless of the
    trace direction.
    """
    params = params or IntegratorParams()
    if t_horizon <= 0:
        raise ValueError("t_horizon must be positive")
    if rho0.tau == 0.0:
        raise NotCharacteristic("tau = 0: the ray parametrization degenerates")
    _check_characteristic(scenario, rho0)
    d = scenario.dim
    sigma_max = t_horizon / (2.0 * abs(rho0.tau))
    pieces: list[TrajectoryPiece] = []
    breaks: list[Break] = []
    junctions: list[tuple[float, sym.BoundaryClass]] = []
    sigma = 0.0
    rho = rho0
    skip = 0

    def record_break(s, encountered):
        other = sym.sigma(scenario, encountered)
        if direction > 0:
            breaks.append(Break(s, rho_minus=encountered, rho_plus=other))
        else:
            breaks.append(Break(s, rho_minus=other, rho_plus=encountered))
        return other

    phi0 = float(scenario.boundary.phi(rho.x))
    if phi0 > scenario.thresholds.boundary_tol:
        mode = "interior"
    else:
        bc = sym.classify_boundary_point(scenario, rho)
        if bc.tag in (Tag.GLIDING, Tag.GLANCING3):
            mode = "gliding"
        elif bc.tag in (Tag.HYPERBOLIC_IN, Tag.HYPERBOLIC_OUT):
            if direction * bc.hpz > 0:
                mode = "interior"
            else:
                rho = record_break(0.0, rho)
                mode = "interior"
        elif bc.tag is Tag.DIFFRACTIVE:
            junctions.append((0.0, bc))
            mode = "interior"
            skip = 2
        else:
            raise NotCharacteristic(f"cannot start a trace from a {bc.tag.value} point")

    while sigma < sigma_max - 1e-15:
        if len(pieces) >= params.max_pieces:
            raise MaxPiecesExceeded(f"more than {params.max_pieces} trajectory pieces")
        if mode == "interior":
            piece, ev = integrate_interior(
                scenario, rho, (sigma, sigma_max), params, direction, _skip_tangency_steps=skip
            )
            skip = 0
            pieces.append(piece)
            sigma = abs(ev.s)
            if ev.reason == "span_end":
                break
            if ev.reason == "chart_exit":
                log.info("trace left the chart at s = %.6g", ev.s)
                break
            bc = ev.bclass
            if bc.tag in (Tag.HYPERBOLIC_IN, Tag.HYPERBOLIC_OUT):
                if direction * bc.hpz > 0:
                    raise StepFailure(
                        "boundary crossing classified as incoming; inconsistent event"
                    )
                rho = record_break(ev.s, ev.rho)
            elif bc.tag is Tag.DIFFRACTIVE:
                junctions.append((ev.s, bc))
                rho = ev.rho
                skip = 2
            elif bc.tag is Tag.GLIDING:
                junctions.append((ev.s, bc))
                rho = ev.rho
                mode = "gliding"
            elif bc.tag is Tag.GLANCING3:
                log.warning("trace reached an order-3 glancing contact at s = %.6g", ev.s)
                junctions.append((ev.s, bc))
                rho = ev.rho
                mode = "gliding"
            else:
                raise StepFailure(f"unexpected boundary class {bc.tag.value} at s = {ev.s:.6g}")
        else:
            piece, ev = integrate_gliding(scenario, rho, (sigma, sigma_max), params, direction)
            pieces.append(piece)
            sigma = abs(ev.s)
            if ev.reason == "span_end":
                break
            if ev.reason == "chart_exit":
                log.info("gliding arc left the chart at s = %.6g", ev.s)
                break
            junctions.append((ev.s, ev.bclass))
            rho = ev.rho
            mode = "interior"
            skip = 2

    return GenBicharacteristic(
        pieces=pieces,
        break_set=breaks,
        junctions=junctions,
        dim=d,
        direction=direction,
        rho0=rho0,
        t_horizon=t_horizon,
    )


# ---------------------------------------------------------------------------
# discrete glancing-step construction


@dataclass
class GlancingPolyline:
    """Piecewise record of the delta-step construction near a gliding arc.

    points/s are the polyline vertices; segment_kinds has one entry per
    segment ("affine" for frozen-field hops, "flight" for broken chord
    pieces). hpz_max is the largest |hpz| seen at any vertex or boundary
    contact; contacts lists the boundary contacts of the chord pieces.
    """

    points: list[PhasePoint]
    s: list[float]
    segment_kinds: list[str]
    hpz_max: float
    contacts: list[dict] = field(default_factory=list)


def _project_to_boundary(scenario, x, max_iter: int = 12):
    phi_f = scenario.boundary.phi
    dphi_f = scenario.boundary.dphi
    x = np.asarray(x, dtype=float).copy()
    for _ in range(max_iter):
        ph = float(phi_f(x))
        if abs(ph) <= 1e-13:
            return x
        dp = np.asarray(dphi_f(x), dtype=float)
        nd2 = float(dp @ dp)
        if nd2 < 1e-24:
            raise DegenerateNormal(f"dphi ~ 0 while projecting {x} to the boundary")
        x = x - (ph / nd2) * dp
    return x


def _surrogate_vertex(scenario, y_target, depth, tau) -> PhasePoint:
    """Characteristic point in the closed domain near a frozen-field target.

    The base point is placed depth units inside along the metric-unit normal
    of the boundary projection; the covector keeps the target's tangential
    part and is lifted (or rescaled) onto the characteristic shell.
    """
    d = scenario.dim
    x_t = y_target[1 : 1 + d]
    xi_t = y_target[2 + d :]
    x_b = _project_to_boundary(scenario, x_t)
    n_b, _ = geo.unit_conormal(scenario, x_b, 1e-9)
    x_in = x_b + depth * n_b
    n_in, ns_in = geo.unit_conormal(scenario, x_in, max(scenario.band, 2.0 * depth))
    c = float(xi_t @ n_in)
    xi_par = xi_t - c * ns_in
    p_par = -tau * tau + geo.conorm_sq(scenario, x_in, xi_par)
    if p_par <= 0.0:
        lam = float(np.sqrt(-p_par))
        xi_new = xi_par + lam * ns_in
    else:
        nrm = float(np.sqrt(geo.conorm_sq(scenario, x_in, xi_par)))
        xi_new = xi_par * (abs(tau) / nrm)
    return PhasePoint(t=float(y_target[0]), x=x_in, tau=tau, xi=xi_new)


def _fly_to_apex(scenario, rho_from, budget, h, params):
    """Follow H_p from an incoming boundary point to the next tangency."""
    d = scenario.dim
    rhs = _interior_rhs(scenario, 1.0)
    dphi_f = scenario.boundary.dphi
    m = scenario.metric

    def q_of(y):
        x = y[1 : 1 + d]
        return 2.0 * float(np.asarray(dphi_f(x), dtype=float) @ (m.g_inv(x) @ y[2 + d :]))

    y = rho_from.as_vector()
    sig = 0.0
    q_prev = q_of(y)
    while sig < budget:
        y_new = _rk4_step(rhs, y, h)
        if not geo.in_domain(scenario, y_new[1 : 1 + d]):
            raise LeftChart("chord flight left the chart before reaching its apex")
        _rescale_char(scenario, y_new, d)
        q_new = q_of(y_new)
        if q_prev > 0.0 >= q_new:
            found = _locate_scalar_zero(rhs, y, h, q_of, 1e-12)
            if found is not None:
                sig_t, y_t = found
                _rescale_char(scenario, y_t, d)
                return PhasePoint.from_vector(y_t, d), sig + sig_t
        sig += h
        y = y_new
        q_prev = q_new
    return PhasePoint.from_vector(y, d), sig


def glancing_step_construct(
    scenario,
    rho0: PhasePoint,
    delta: float,
    eps: float,
    n_steps: int = 6,
    flight_h: float | None = None,
) -> GlancingPolyline:
    """Discrete delta-step approximation of a gliding ray.

    Each step alternates (a) an affine hop of length delta along the gliding
    field frozen at the segment start, with the endpoint placed back in the
    closed domain at depth eps*delta on the characteristic shell, and (b) a
    broken chord piece: free flight to the next boundary contact, specular
    reflection, and flight on to the following tangency, which seeds the
    next hop. On flat boundaries the chord never returns to the boundary and
    the flight simply runs out its budget with hpz identically zero.

    The recorded hpz_max is the largest |hpz| over all vertices and chord
    contacts; for curved gliding boundaries it scales like sqrt(delta).
    """
    if delta <= 0 or eps < 0:
        raise ValueError("delta must be positive and eps nonnegative")
    bc = sym.classify_boundary_point(scenario, rho0)
    if bc.tag not in (Tag.GLIDING, Tag.GLANCING3):
        raise ValueError(f"construction starts on the gliding set, got {bc.tag.value}")
    d = scenario.dim
    pts = [rho0]
    ss = [0.0]
    kinds: list[str] = []
    contacts: list[dict] = []
    hpz_max = abs(bc.hpz)
    rho = rho0
    s_now = 0.0
    for _ in range(int(n_steps)):
        gl = sym.gliding_field(scenario, rho)
        y_t = rho.as_vector() + delta * gl.as_vector()
        if not geo.in_domain(scenario, _project_to_boundary(scenario, y_t[1 : 1 + d])):
            raise LeftChart("affine hop target left the chart")
        vertex = _surrogate_vertex(scenario, y_t, eps * delta, rho.tau)
        s_now += delta
        pts.append(vertex)
        ss.append(s_now)
        kinds.append("affine")
        hpz_max = max(hpz_max, abs(sym.hpz(scenario, vertex)))

        curv = max(abs(sym.hp2z(scenario, vertex)), 1e-2)
        budget = 8.0 * float(np.sqrt(max(eps * delta, 0.0) / curv)) + 4.0 * delta
        h = flight_h if flight_h is not None else max(budget / 256.0, 1e-9)
        fly_params = IntegratorParams(h=h, tangency_gate=-1.0)
        piece, ev = integrate_interior(scenario, vertex, (0.0, budget), fly_params)
        if ev.reason == "boundary":
            hpz_c = ev.bclass.hpz
            hpz_max = max(hpz_max, abs(hpz_c))
            contacts.append({"s": s_now + abs(ev.s), "hpz": hpz_c, "tag": ev.bclass.tag.value})
            s_now += abs(ev.s)
            pts.append(ev.rho)
            ss.append(s_now)
            kinds.append("flight")
            if ev.bclass.tag is Tag.HYPERBOLIC_OUT:
                rho_r = sym.sigma(scenario, ev.rho)
                pts.append(rho_r)
                ss.append(s_now)
                kinds.append("flight")
                apex, ds2 = _fly_to_apex(scenario, rho_r, budget, h, fly_params)
                s_now += ds2
                pts.append(apex)
                ss.append(s_now)
                kinds.append("flight")
                rho = apex
            else:
                rho = ev.rho
        elif ev.reason == "chart_exit":
            raise LeftChart("chord flight left the chart")
        else:
            s_now += abs(ev.s)
            pts.append(ev.rho)
            ss.append(s_now)
            kinds.append("flight")
            rho = ev.rho
    return GlancingPolyline(
        points=pts, s=ss, segment_kinds=kinds, hpz_max=hpz_max, contacts=contacts
    )


# ---------------------------------------------------------------------------
# compressed distance and the continuity probe


def fold_into_domain(scenario, rho: PhasePoint) -> PhasePoint:
    """Compressed-space representative of a point just past the boundary.

    Points with phi < 0 are mirrored back: the base across the surface
    (two Newton corrections along the metric gradient of phi), the
    covector by the reflection involution at the mirrored base. Points
    already in the closed domain are returned unchanged. Valid within the
    reflection band; the identification error is O(phi^2) from boundary
    curvature.
    """
    phi_f = scenario.boundary.phi
    ph = float(phi_f(rho.x))
    if ph >= 0.0:
        return rho
    if -ph > scenario.band:
        raise OutOfChart(f"point at phi = {ph:.3e} is beyond the reflection band")
    m = scenario.metric
    dphi_f = scenario.boundary.dphi
    x = np.asarray(rho.x, dtype=float).copy()
    target = -ph
    for _ in range(2):
        dp = np.asarray(dphi_f(x), dtype=float)
        gidp = m.g_inv(x) @ dp
        denom = float(dp @ gidp)
        if denom < 1e-16:
            raise DegenerateNormal("dphi degenerate while folding across the boundary")
        x = x + ((target - float(phi_f(x))) / denom) * gidp
    n, n_star = geo.unit_conormal(scenario, x, scenario.band)
    c = float(rho.xi @ n)
    return PhasePoint(rho.t, x, rho.tau, rho.xi - 2.0 * c * n_star)


def _extended_reflection(scenario, rho: PhasePoint):
    """Sigma-tilde near the boundary, or None outside the extension band."""
    try:
        n, n_star = geo.unit_conormal(scenario, rho.x, scenario.band)
    except (NotOnBoundary, DegenerateNormal):
        return None
    c = float(rho.xi @ n)
    mirrored = PhasePoint(rho.t, rho.x, rho.tau, rho.xi - 2.0 * c * n_star)
    penalty = abs(float(scenario.boundary.phi(rho.x)))
    return mirrored, penalty


def compressed_distance(scenario, a: PhasePoint, b: PhasePoint) -> float:
    """Chart distance after quotienting by the boundary reflection.

    Minimum over the four Sigma-tilde combinations, with an additive |phi|
    penalty whenever the extended involution is applied off the boundary.
    Vanishes for a = Sigma(b) at a boundary point; reduces to the plain
    chart distance away from the extension band.
    """
    for p in (a, b):
        if not geo.in_domain(scenario, p.x):
            raise OutOfChart(f"point {p.x} outside the chart box")
    va, vb = a.as_vector(), b.as_vector()
    best = float(np.linalg.norm(va - vb))
    ra = _extended_reflection(scenario, a)
    rb = _extended_reflection(scenario, b)
    if ra is not None:
        best = min(best, float(np.linalg.norm(ra[0].as_vector() - vb)) + ra[1])
    if rb is not None:
        best = min(best, float(np.linalg.norm(va - rb[0].as_vector())) + rb[1])
    if ra is not None and rb is not None:
        best = min(
            best,
            float(np.linalg.norm(ra[0].as_vector() - rb[0].as_vector())) + ra[1] + rb[1],
        )
    return best


def _distance_variants(scenario, states: np.ndarray):
    """Rows plus their Sigma-tilde images with penalties, for batch distances."""
    d = scenario.dim
    variants = [(states, np.zeros(len(states)))]
    refl = np.empty_like(states)
    pen = np.empty(len(states))
    ok = np.zeros(len(states), dtype=bool)
    for i, row in enumerate(states):
        r = _extended_reflection(scenario, PhasePoint.from_vector(row, d))
        if r is None:
            continue
        refl[i] = r[0].as_vector()
        pen[i] = r[1]
        ok[i] = True
    if np.any(ok):
        variants.append((refl[ok], pen[ok]))
    return variants


def _semi_distance(P, variants, chunk: int = 512) -> float:
    """max over rows of P of the min compressed distance to the variant set."""
    best = np.full(len(P), np.inf)
    for rows, pens in variants:
        for start in range(0, len(P), chunk):
            block = P[start : start + chunk]
            dist = cdist(block, rows) + pens[None, :]
            np.minimum(
                best[start : start + chunk], dist.min(axis=1), out=best[start : start + chunk]
            )
    return float(best.max())


def _trace_states_both(scenario, rho, t_horizon, params) -> np.ndarray:
    parts = []
    for direction in (1, -1):
        gb = trace_generalized(scenario, rho, t_horizon, params, direction)
        parts.append(gb.all_samples()[1])
    return np.vstack(parts)


def _perturb_characteristic(scenario, rho0: PhasePoint, delta: float, rng) -> PhasePoint:
    if delta == 0.0:
        return rho0
    d = scenario.dim
    phi_f = scenario.boundary.phi
    for _ in range(64):
        v = rng.normal(size=d)
        v /= max(float(np.linalg.norm(v)), 1e-300)
        x_p = rho0.x + (0.5 * delta * rng.uniform() ** (1.0 / d)) * v
        if not geo.in_domain(scenario, x_p) or float(phi_f(x_p)) < 0.0:
            continue
        w = rng.normal(size=d)
        w /= max(float(np.linalg.norm(w)), 1e-300)
        xi_p = rho0.xi + (0.5 * delta * rng.uniform() ** (1.0 / d)) * w
        nrm = float(np.sqrt(geo.conorm_sq(scenario, x_p, xi_p)))
        if nrm < 1e-12:
            continue
        xi_p = xi_p * (abs(rho0.tau) / nrm)
        cand = PhasePoint(rho0.t, x_p, rho0.tau, xi_p)
        if compressed_distance(scenario, cand, rho0) <= delta * (1.0 + 1e-9):
            return cand
    log.warning("perturbation sampling failed at delta = %.3g; using the base point", delta)
    return rho0


def continuity_probe(
    scenario,
    rho0: PhasePoint,
    delta: float,
    T: float,
    n_samples: int,
    params: IntegratorParams | None = None,
    seed: int = 0,
) -> float:
    """Largest compressed semi-distance from perturbed traces to the reference.

    Traces the reference ray through rho0 over the time horizon T in both
    directions, then n_samples perturbed starts within compressed distance
    delta, and returns the max over perturbed samples of the distance to the
    reference sample set.
    """
    params = params or IntegratorParams()
    reference = _trace_states_both(scenario, rho0, T, params)
    variants = _distance_variants(scenario, reference)
    rng = np.random.default_rng(seed)
    eps_hat = 0.0
    for _ in range(int(n_samples)):
        pert = _perturb_characteristic(scenario, rho0, delta, rng)
        pert_states = _trace_states_both(scenario, pert, T, params)
        eps_hat = max(eps_hat, _semi_distance(pert_states, variants))
    return eps_hat


# ---------------------------------------------------------------------------
# export helpers


def trajectory_records(gb: GenBicharacteristic):
    """One dict per sample, in trace order."""
    s, states, kind, idx = gb.all_samples()
    d = gb.dim
    names = {0: INTERIOR, 1: GLIDING}
    out = []
    for i in range(len(s)):
        row = states[i]
        out.append(
            {
                "s": float(s[i]),
                "t": float(row[0]),
                "x": [float(v) for v in row[1 : 1 + d]],
                "tau": float(row[1 + d]),
                "xi": [float(v) for v in row[2 + d :]],
                "piece_kind": names[int(kind[i])],
                "piece_index": int(idx[i]),
            }
        )
    return out


def event_records(gb: GenBicharacteristic):
    """Breaks and junctions merged into one s-ordered event stream."""
    out = []
    for br in gb.break_set:
        out.append(
            {
                "s": float(br.s),
                "kind": br.kind,
                "rho_minus": br.rho_minus.to_dict(),
                "rho_plus": br.rho_plus.to_dict(),
            }
        )
    for s, bc in gb.junctions:
        out.append(
            {
                "s": float(s),
                "kind": bc.tag.value,
                "hpz": bc.hpz,
                "hp2z": bc.hp2z,
            }
        )
    out.sort(key=lambda r: abs(r["s"]))
    return out
