"""Measures carried by traced rays and the weak transport identity.

A curve measure pairs a traced ray with positive weights w(s); the induced
boundary measure collects one atom per reflection plus an arc density along
gliding pieces. transport_residual evaluates the weak-form budget

    <mu, H_p a - f a>  +  sum_atoms w (a(rho+) - a(rho-))
                       +  int_gliding (1/2)(-hp2z) w (d_theta a / alpha) ds

which telescopes to zero for compactly supported C^1 test functions, up to
quadrature error.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.integrate import cumulative_trapezoid
from scipy.spatial.distance import cdist

from . import flow
from . import geometry as geo
from . import symbol as sym
from .errors import EmptySupport, SupportLeak
from .symbol import PhasePoint, Tag

_ZERO_MASS_TAGS = (Tag.DIFFRACTIVE, Tag.GLANCING3)


# ---------------------------------------------------------------------------
# localization profiles


def bump_chi(s) -> float:
    """Smooth one-sided cutoff: exp(1/(s-1)) below 1, identically 0 above."""
    s = float(s)
    if s >= 1.0:
        return 0.0
    return math.exp(1.0 / (s - 1.0))


def bump_chi_prime(s) -> float:
    s = float(s)
    if s >= 1.0:
        return 0.0
    return -math.exp(1.0 / (s - 1.0)) / (s - 1.0) ** 2


def bump_beta(s) -> float:
    """C^1 polynomial step: 0 below -1, 1 above -1/2, cubic in between."""
    s = float(s)
    if s <= -1.0:
        return 0.0
    if s >= -0.5:
        return 1.0
    u = 2.0 * (s + 1.0)
    return u * u * (3.0 - 2.0 * u)


def bump_beta_prime(s) -> float:
    s = float(s)
    if s <= -1.0 or s >= -0.5:
        return 0.0
    u = 2.0 * (s + 1.0)
    return 12.0 * u * (1.0 - u)


def _chi_arr(u: np.ndarray) -> np.ndarray:
    out = np.zeros_like(u)
    m = u < 1.0
    out[m] = np.exp(1.0 / (u[m] - 1.0))
    return out


def _chi_prime_arr(u: np.ndarray) -> np.ndarray:
    out = np.zeros_like(u)
    m = u < 1.0
    out[m] = -np.exp(1.0 / (u[m] - 1.0)) / (u[m] - 1.0) ** 2
    return out


def _beta_arr(v: np.ndarray) -> np.ndarray:
    out = np.ones_like(v)
    out[v <= -1.0] = 0.0
    m = (v > -1.0) & (v < -0.5)
    u = 2.0 * (v[m] + 1.0)
    out[m] = u * u * (3.0 - 2.0 * u)
    return out


def _beta_prime_arr(v: np.ndarray) -> np.ndarray:
    out = np.zeros_like(v)
    m = (v > -1.0) & (v < -0.5)
    u = 2.0 * (v[m] + 1.0)
    out[m] = 12.0 * u * (1.0 - u)
    return out


@dataclass(frozen=True)
class TestFunction:
    """Compactly supported C^1 phase-space bump centered at a phase point.

    The main factor is chi of an ellipsoidal quadratic form in (t, x, xi)
    (and optionally tau); support is the open unit ellipsoid of those
    widths. An optional beta factor multiplies in a one-sided C^1 cutoff
    along a fixed packed-coordinate direction, giving the chi/beta products
    used in the transport tests.
    """

    center: PhasePoint
    width_t: float
    width_x: float
    width_xi: float
    width_tau: float | None = None
    beta_axis: np.ndarray | None = None
    beta_shift: float = 0.0
    beta_scale: float = 1.0

    def __post_init__(self):
        if min(self.width_t, self.width_x, self.width_xi) <= 0:
            raise ValueError("test function widths must be positive")
        if self.beta_axis is not None:
            object.__setattr__(
                self, "beta_axis", np.asarray(self.beta_axis, dtype=float)
            )

    @property
    def dim(self) -> int:
        return len(self.center.x)

    def _quadratic(self, Y: np.ndarray):
        d = self.dim
        c = self.center.as_vector()
        D = Y - c[None, :]
        u = (D[:, 0] / self.width_t) ** 2
        du = np.zeros_like(Y)
        du[:, 0] = 2.0 * D[:, 0] / self.width_t**2
        u = u + np.einsum("ij,ij->i", D[:, 1 : 1 + d], D[:, 1 : 1 + d]) / self.width_x**2
        du[:, 1 : 1 + d] = 2.0 * D[:, 1 : 1 + d] / self.width_x**2
        u = u + np.einsum("ij,ij->i", D[:, 2 + d :], D[:, 2 + d :]) / self.width_xi**2
        du[:, 2 + d :] = 2.0 * D[:, 2 + d :] / self.width_xi**2
        if self.width_tau is not None:
            u = u + (D[:, 1 + d] / self.width_tau) ** 2
            du[:, 1 + d] = 2.0 * D[:, 1 + d] / self.width_tau**2
        return u, du

    def value_batch(self, Y: np.ndarray) -> np.ndarray:
        Y = np.atleast_2d(np.asarray(Y, dtype=float))
        u, _ = self._quadratic(Y)
        a = _chi_arr(u)
        if self.beta_axis is not None:
            v = (Y @ self.beta_axis - self.center.as_vector() @ self.beta_axis
                 - self.beta_shift) / self.beta_scale
            a = a * _beta_arr(v)
        return a

    def gradient_batch(self, Y: np.ndarray) -> np.ndarray:
        Y = np.atleast_2d(np.asarray(Y, dtype=float))
        u, du = self._quadratic(Y)
        chi_v = _chi_arr(u)
        g = _chi_prime_arr(u)[:, None] * du
        if self.beta_axis is not None:
            v = (Y @ self.beta_axis - self.center.as_vector() @ self.beta_axis
                 - self.beta_shift) / self.beta_scale
            b = _beta_arr(v)
            bp = _beta_prime_arr(v) / self.beta_scale
            g = g * b[:, None] + (chi_v * bp)[:, None] * self.beta_axis[None, :]
        return g

    def value(self, rho: PhasePoint) -> float:
        return float(self.value_batch(rho.as_vector()[None, :])[0])

    def gradient(self, rho: PhasePoint) -> np.ndarray:
        return self.gradient_batch(rho.as_vector()[None, :])[0]


# ---------------------------------------------------------------------------
# curve measures


@dataclass
class CurveMeasure:
    """Weighted line measure along a traced ray; immutable after build."""

    carrier: flow.GenBicharacteristic
    w: np.ndarray
    h: float
    s: np.ndarray
    states: np.ndarray
    kinds: np.ndarray
    piece_index: np.ndarray

    def __post_init__(self):
        if np.any(self.w <= 0.0):
            raise ValueError("curve measure weights must be strictly positive")

    def weight_at(self, s_query: float) -> float:
        s = self.s
        if len(s) > 1 and s[-1] < s[0]:
            return float(np.interp(-s_query, -s, self.w))
        return float(np.interp(s_query, s, self.w))


def dirac_on_bichar(scenario, gb: flow.GenBicharacteristic, f=None, h: float = 1e-3) -> CurveMeasure:
    """Curve measure with the damping law w(s) = exp(-int_0^s f dsigma).

    f is evaluated as f(t, x) along the carrier samples and integrated by
    the trapezoid rule on the actual sample grid; f None or identically
    zero gives unit weights.
    """
    s, states, kinds, idx = gb.all_samples()
    d = gb.dim
    if f is None:
        w = np.ones_like(s)
    else:
        vals = np.array([float(f(states[i, 0], states[i, 1 : 1 + d])) for i in range(len(s))])
        integral = cumulative_trapezoid(vals, s, initial=0.0)
        w = np.exp(-integral)
    return CurveMeasure(carrier=gb, w=w, h=h, s=s, states=states, kinds=kinds, piece_index=idx)


# ---------------------------------------------------------------------------
# the boundary measure


@dataclass
class Atom:
    s: float
    rho_par: PhasePoint
    rho_minus: PhasePoint
    rho_plus: PhasePoint
    mass: float
    weight: float
    tag: Tag


@dataclass
class ArcSamples:
    """Arc-density samples of one gliding piece: density = (1/2)(-hp2z) w."""

    s: np.ndarray
    density: np.ndarray
    weight: np.ndarray
    tags: list[Tag]
    states: np.ndarray


@dataclass
class BoundaryMeasure:
    atoms: list[Atom]
    arcs: list[ArcSamples]
    source_min_abs_tau: float

    @property
    def total_atom_mass(self) -> float:
        return float(sum(a.mass for a in self.atoms))

    def to_records(self) -> dict:
        return {
            "atoms": [
                {
                    "s": a.s,
                    "mass": a.mass,
                    "weight": a.weight,
                    "tag": a.tag.value,
                    "rho_par": a.rho_par.to_dict(),
                    "rho_minus": a.rho_minus.to_dict(),
                    "rho_plus": a.rho_plus.to_dict(),
                }
                for a in self.atoms
            ],
            "arcs": [
                {
                    "samples": [
                        {
                            "s": float(arc.s[i]),
                            "density": float(arc.density[i]),
                            "weight": float(arc.weight[i]),
                            "tag": arc.tags[i].value,
                        }
                        for i in range(len(arc.s))
                    ]
                }
                for arc in self.arcs
            ],
        }


def boundary_measure_of(scenario, cm: CurveMeasure) -> BoundaryMeasure:
    """Boundary measure induced by a curve measure: atoms + gliding density.

    Each hyperbolic break contributes mass w(s) <xi+ - xi-, n> at its
    tangential base point; each gliding piece contributes the densities
    (1/2)(-hp2z) w at its samples, clamped at zero where curvature noise
    makes hp2z marginally positive.
    """
    gb = cm.carrier
    atoms: list[Atom] = []
    for br in gb.break_set:
        w_b = cm.weight_at(br.s)
        n, _ = geo.unit_normal(scenario, br.rho_minus.x)
        mass = w_b * float((br.rho_plus.xi - br.rho_minus.xi) @ n)
        if mass <= 0.0:
            raise ValueError(f"non-positive atom mass {mass:.3e} at s = {br.s:.6g}")
        bc = sym.classify_boundary_point(scenario, br.rho_minus)
        atoms.append(
            Atom(
                s=br.s,
                rho_par=sym.project_parallel(scenario, br.rho_minus),
                rho_minus=br.rho_minus,
                rho_plus=br.rho_plus,
                mass=mass,
                weight=w_b,
                tag=bc.tag,
            )
        )
    arcs: list[ArcSamples] = []
    offset = 0
    for piece in gb.pieces:
        n_p = len(piece)
        if piece.kind == flow.GLIDING:
            sl = slice(offset, offset + n_p)
            tags = []
            hp2z_vals = np.empty(n_p)
            for i in range(n_p):
                rho_i = piece.point(i)
                hp2z_vals[i] = sym.hp2z(scenario, rho_i)
                tags.append(sym.classify_boundary_point(scenario, rho_i).tag)
            density = 0.5 * np.maximum(-hp2z_vals, 0.0) * cm.w[sl]
            arcs.append(
                ArcSamples(
                    s=cm.s[sl].copy(),
                    density=density,
                    weight=cm.w[sl].copy(),
                    tags=tags,
                    states=cm.states[sl].copy(),
                )
            )
        offset += n_p
    return BoundaryMeasure(
        atoms=atoms,
        arcs=arcs,
        source_min_abs_tau=float(np.min(np.abs(cm.states[:, 1 + gb.dim]))),
    )


# ---------------------------------------------------------------------------
# the weak transport identity


def _hamiltonian_directional(scenario, states: np.ndarray, grads: np.ndarray) -> np.ndarray:
    """H_p a at each sample row, from the full packed gradient of a."""
    d = scenario.dim
    m = scenario.metric
    n = len(states)
    out = np.empty(n)
    if m.is_constant:
        gi = m.g_inv(np.zeros(d))
        dx = 2.0 * (states[:, 2 + d :] @ gi)
        out = -2.0 * states[:, 1 + d] * grads[:, 0] + np.einsum(
            "ij,ij->i", grads[:, 1 : 1 + d], dx
        )
        return out
    rhs = flow._interior_rhs(scenario, 1.0)
    for i in range(n):
        out[i] = float(grads[i] @ rhs(states[i]))
    return out


def transport_residual(scenario, cm: CurveMeasure, nu: BoundaryMeasure, a: TestFunction, f=None) -> float:
    """Absolute defect of the weak transport identity for the triple (mu, nu, a).

    Raises SupportLeak when a does not vanish at the carrier's endpoints,
    since the s-integration by parts then picks up uncontrolled boundary
    terms.
    """
    d = scenario.dim
    s, Y = cm.s, cm.states
    first = PhasePoint.from_vector(Y[0], d)
    last = PhasePoint.from_vector(Y[-1], d)
    if abs(a.value(first)) > 1e-12 or abs(a.value(last)) > 1e-12:
        raise SupportLeak(
            "test function does not vanish at the trajectory endpoints; "
            "shrink its support or extend the trace"
        )
    avals = a.value_batch(Y)
    grads = a.gradient_batch(Y)
    hpa = _hamiltonian_directional(scenario, Y, grads)
    if f is None:
        fvals = np.zeros_like(s)
    else:
        fvals = np.array([float(f(Y[i, 0], Y[i, 1 : 1 + d])) for i in range(len(s))])
    term_mu = float(np.trapezoid(cm.w * (hpa - fvals * avals), s))

    term_atoms = 0.0
    for atom in nu.atoms:
        term_atoms += atom.weight * (a.value(atom.rho_plus) - a.value(atom.rho_minus))

    term_glide = 0.0
    for arc in nu.arcs:
        n_p = len(arc.s)
        if n_p < 2:
            continue
        integrand = np.empty(n_p)
        g_arc = a.gradient_batch(arc.states)
        for i in range(n_p):
            x_i = arc.states[i, 1 : 1 + d]
            dphi = np.asarray(scenario.boundary.dphi(x_i), dtype=float)
            dza = float(g_arc[i, 2 + d :] @ dphi)
            h2 = sym.hz2p(scenario, x_i)
            alpha = sym.alpha(scenario, x_i)
            integrand[i] = arc.density[i] * (dza / h2) / alpha
        term_glide += float(np.trapezoid(integrand, arc.s))

    return abs(term_mu + term_atoms + term_glide)


# ---------------------------------------------------------------------------
# support and mass reports


@dataclass
class StepCheckReport:
    n_checked: int
    n_failures: int
    failures: list = field(default_factory=list)
    delta: float = 0.0
    eps: float = 0.0

    @property
    def ok(self) -> bool:
        return self.n_failures == 0


def support_samples(gb: flow.GenBicharacteristic, s_margin: float = 0.0):
    """Tagged (rho, tag) list from a trace, optionally dropping a tail window.

    Samples whose s lies within s_margin of the final s are excluded, so a
    delta-advance from any kept sample still lands inside the sampled set.
    """
    s, states, kinds, _ = gb.all_samples()
    if len(s) == 0:
        return []
    s_end = s[-1]
    out = []
    for i in range(len(s)):
        if s_margin > 0.0 and abs(s_end - s[i]) < s_margin:
            continue
        tag = Tag.GLIDING if kinds[i] == 1 else Tag.INTERIOR
        out.append((PhasePoint.from_vector(states[i], gb.dim), tag))
    return out


def _normalize_tagged(points):
    out = []
    for item in points:
        if isinstance(item, PhasePoint):
            out.append((item, Tag.INTERIOR))
        else:
            rho, tag = item
            out.append((rho, tag))
    return out


def support_step_check(points, scenario, delta: float, eps: float, reference=None) -> StepCheckReport:
    """Flow-invariance probe for a discrete support sample.

    Advances every tagged point by delta along its field (H_p for interior
    tags, the gliding field for gliding tags) and verifies that some
    support point lies within compressed distance delta*eps of the target.
    Targets that overshoot the boundary are folded back to their
    compressed-space representative first, so pre-reflection points are
    checked against the reflected branch (the Sigma-image ball); reflection
    images of near-boundary support points count as support too.
    When checking a finite trace, pass the full sample set as reference and
    a tail-trimmed set as points (see support_samples), so every advanced
    target still has downstream data to land on.
    """
    tagged = _normalize_tagged(points)
    if not tagged:
        raise EmptySupport("support sample set is empty")
    ref = tagged if reference is None else _normalize_tagged(reference)
    S = np.vstack([rho.as_vector() for rho, _ in ref])
    variants = flow._distance_variants(scenario, S)
    d = scenario.dim
    targets = np.empty((len(tagged), S.shape[1]))
    for i, (rho, tag) in enumerate(tagged):
        if tag is Tag.GLIDING:
            upd = sym.gliding_field(scenario, rho)
        else:
            upd = sym.hamiltonian_field(scenario, rho)
        adv = PhasePoint.from_vector(rho.as_vector() + delta * upd.as_vector(), d)
        targets[i] = flow.fold_into_domain(scenario, adv).as_vector()
    best = np.full(len(targets), np.inf)
    for rows, pens in variants:
        dmat = cdist(targets, rows) + pens[None, :]
        np.minimum(best, dmat.min(axis=1), out=best)
    threshold = delta * eps
    failures = [
        {
            "index": i,
            "distance": float(b),
            "threshold": threshold,
            "tag": tagged[i][1].value,
        }
        for i, b in enumerate(best)
        if b > threshold
    ]
    return StepCheckReport(
        n_checked=len(tagged),
        n_failures=len(failures),
        failures=failures,
        delta=delta,
        eps=eps,
    )


@dataclass
class MassCheckReport:
    ok: bool
    n_atoms: int
    n_arc_samples: int
    offending: list
    min_tau_support: float
    source_min_abs_tau: float


def mass_check(nu: BoundaryMeasure, scenario) -> MassCheckReport:
    """Asserts the two support properties of the boundary measure.

    No positive mass may sit on Diffractive or Glancing3-tagged contacts,
    and |tau| over the support of nu may not drop below the carrier
    ensemble's minimum beyond roundoff.
    """
    offending = []
    taus = []
    tau_col = 1 + scenario.dim
    for atom in nu.atoms:
        if atom.tag in _ZERO_MASS_TAGS and atom.mass > 1e-10:
            offending.append({"kind": "atom", "s": atom.s, "tag": atom.tag.value, "mass": atom.mass})
        taus.append(abs(atom.rho_par.tau))
    n_arc = 0
    for arc in nu.arcs:
        n_arc += len(arc.s)
        for i in range(len(arc.s)):
            if arc.tags[i] in _ZERO_MASS_TAGS and arc.density[i] > 1e-10:
                offending.append(
                    {
                        "kind": "arc",
                        "s": float(arc.s[i]),
                        "tag": arc.tags[i].value,
                        "density": float(arc.density[i]),
                    }
                )
            if arc.density[i] > 0.0:
                taus.append(abs(float(arc.states[i, tau_col])))
    min_tau = min(taus) if taus else float("inf")
    ok = not offending and (
        not taus or min_tau >= nu.source_min_abs_tau - 1e-9
    )
    return MassCheckReport(
        ok=ok,
        n_atoms=len(nu.atoms),
        n_arc_samples=n_arc,
        offending=offending,
        min_tau_support=min_tau,
        source_min_abs_tau=nu.source_min_abs_tau,
    )
