"""Wave symbol, Hamiltonian and gliding fields, boundary classification.

The symbol is p(rho) = -tau^2 + g*_x(xi, xi). All boundary-adapted
quantities are expressed through the boundary defining function phi:
``hpz`` is the derivative of phi along the Hamiltonian field, ``hp2z`` its
second derivative, ``hz2p`` the transversality coefficient 2 g*(dphi, dphi).
"""

from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np

from .errors import (
    DegenerateTransversal,
    EllipticPoint,
    NotCharacteristic,
    NotOnBoundary,
    OutOfChart,
)
from .geometry import in_domain, unit_conormal


@dataclass(frozen=True, eq=False)
class PhasePoint:
    """rho = (t, x, tau, xi)."""

    t: float
    x: np.ndarray
    tau: float
    xi: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "t", float(self.t))
        object.__setattr__(self, "tau", float(self.tau))
        object.__setattr__(self, "x", np.asarray(self.x, dtype=float))
        object.__setattr__(self, "xi", np.asarray(self.xi, dtype=float))

    @property
    def dim(self) -> int:
        return self.x.shape[0]

    def as_vector(self) -> np.ndarray:
        return np.concatenate([[self.t], self.x, [self.tau], self.xi])

    @staticmethod
    def from_vector(y: np.ndarray, dim: int) -> "PhasePoint":
        return PhasePoint(t=y[0], x=y[1 : 1 + dim], tau=y[1 + dim], xi=y[2 + dim :])

    def to_dict(self) -> dict:
        return {
            "t": self.t,
            "x": [float(v) for v in self.x],
            "tau": self.tau,
            "xi": [float(v) for v in self.xi],
        }

    @staticmethod
    def from_dict(d: dict) -> "PhasePoint":
        return PhasePoint(t=d["t"], x=d["x"], tau=d["tau"], xi=d["xi"])

    def __repr__(self) -> str:
        return (
            f"PhasePoint(t={self.t:.6g}, x={np.array2string(self.x, precision=6)}, "
            f"tau={self.tau:.6g}, xi={np.array2string(self.xi, precision=6)})"
        )


class Tag(enum.Enum):
    INTERIOR = "Interior"
    HYPERBOLIC_IN = "HyperbolicIn"
    HYPERBOLIC_OUT = "HyperbolicOut"
    DIFFRACTIVE = "Diffractive"
    GLANCING3 = "Glancing3"
    GLIDING = "Gliding"
    ELLIPTIC_TANGENTIAL = "EllipticTangential"


@dataclass(frozen=True)
class BoundaryClass:
    """Classification tag plus the raw values it was decided on.

    The raw hpz/hp2z numbers are kept because the order-3 glancing condition
    is an exact equality that any threshold can only approximate.
    """

    tag: Tag
    hpz: float
    hp2z: float
    p: float

    def __str__(self) -> str:
        return f"{self.tag.value}(hpz={self.hpz:.3e}, hp2z={self.hp2z:.3e})"


@dataclass(frozen=True)
class ClassifyThresholds:
    eps_g: float = 1e-7
    eps_g2: float = 1e-7
    char_tol: float = 1e-8
    boundary_tol: float = 1e-9


@dataclass
class TangentUpdate:
    """Value of a vector field on phase space at one point."""

    dt: float
    dx: np.ndarray
    dtau: float
    dxi: np.ndarray

    def as_vector(self) -> np.ndarray:
        return np.concatenate([[self.dt], self.dx, [self.dtau], self.dxi])


# ---------------------------------------------------------------------------
# pointwise symbol algebra


def _check_chart(scenario, x) -> None:
    if not in_domain(scenario, x):
        raise OutOfChart(f"point {np.asarray(x)} outside domain box of '{scenario.name}'")


def p_eval(scenario, rho: PhasePoint) -> float:
    """p(rho) = -tau^2 + |xi|^2_x."""
    _check_chart(scenario, rho.x)
    gi = scenario.metric.g_inv(rho.x)
    return float(-rho.tau**2 + rho.xi @ gi @ rho.xi)


def hamiltonian_field(scenario, rho: PhasePoint) -> TangentUpdate:
    """H_p at rho: dt = -2 tau, dx = 2 g^-1 xi, dtau = 0, dxi from dg."""
    _check_chart(scenario, rho.x)
    m = scenario.metric
    gi = m.g_inv(rho.x)
    dx = 2.0 * gi @ rho.xi
    if m.is_constant:
        dxi = np.zeros(rho.dim)
    else:
        dxi = -np.einsum("kij,i,j->k", m.dg_inv(rho.x), rho.xi, rho.xi)
    return TangentUpdate(dt=-2.0 * rho.tau, dx=dx, dtau=0.0, dxi=dxi)


def hpz(scenario, rho: PhasePoint) -> float:
    """Derivative of phi along H_p: <dphi, 2 xi^sharp>."""
    _check_chart(scenario, rho.x)
    gi = scenario.metric.g_inv(rho.x)
    dphi = np.asarray(scenario.boundary.dphi(rho.x), dtype=float)
    return float(2.0 * dphi @ (gi @ rho.xi))


def hz2p(scenario, x) -> float:
    """Transversality coefficient 2 g*(dphi, dphi) at x."""
    x = np.asarray(x, dtype=float)
    gi = scenario.metric.g_inv(x)
    dphi = np.asarray(scenario.boundary.dphi(x), dtype=float)
    return float(2.0 * dphi @ gi @ dphi)


def alpha(scenario, x) -> float:
    """Normal normalization alpha(x) = (2 hz2p)^{-1/2}."""
    return float(1.0 / np.sqrt(2.0 * hz2p(scenario, x)))


def hp2z(scenario, rho: PhasePoint) -> float:
    """Second derivative of phi along H_p (H_p applied to hpz)."""
    _check_chart(scenario, rho.x)
    m = scenario.metric
    gi = m.g_inv(rho.x)
    dphi = np.asarray(scenario.boundary.dphi(rho.x), dtype=float)
    d2phi = np.asarray(scenario.boundary.d2phi(rho.x), dtype=float)
    sharp_xi = gi @ rho.xi
    dx = 2.0 * sharp_xi
    if m.is_constant:
        return float(2.0 * (d2phi @ sharp_xi) @ dx)
    dgi = m.dg_inv(rho.x)
    grad_x = 2.0 * (d2phi @ sharp_xi + np.einsum("kij,i,j->k", dgi, dphi, rho.xi))
    grad_xi = 2.0 * gi @ dphi
    dxi = -np.einsum("kij,i,j->k", dgi, rho.xi, rho.xi)
    return float(grad_x @ dx + grad_xi @ dxi)


def classify_boundary_point(scenario, rho: PhasePoint, thresholds: ClassifyThresholds | None = None) -> BoundaryClass:
    """Partition a boundary contact into the hyperbolic/glancing/elliptic cases."""
    th = thresholds or scenario.thresholds
    phi = scenario.boundary.phi(rho.x)
    if abs(phi) > th.boundary_tol:
        raise NotOnBoundary(f"|phi| = {abs(phi):.3e} > boundary tolerance {th.boundary_tol:.0e}")
    p = p_eval(scenario, rho)
    v_hpz = hpz(scenario, rho)
    v_hp2z = hp2z(scenario, rho)
    if abs(p) > th.char_tol:
        p_par = p_eval(scenario, project_parallel(scenario, rho))
        if p_par > th.char_tol:
            return BoundaryClass(tag=Tag.ELLIPTIC_TANGENTIAL, hpz=v_hpz, hp2z=v_hp2z, p=p)
        raise NotCharacteristic(
            f"p = {p:.3e} off the characteristic set and projection not elliptic"
        )
    if v_hpz > th.eps_g:
        tag = Tag.HYPERBOLIC_IN
    elif v_hpz < -th.eps_g:
        tag = Tag.HYPERBOLIC_OUT
    elif v_hp2z > th.eps_g2:
        tag = Tag.DIFFRACTIVE
    elif v_hp2z < -th.eps_g2:
        tag = Tag.GLIDING
    else:
        tag = Tag.GLANCING3
    return BoundaryClass(tag=tag, hpz=v_hpz, hp2z=v_hp2z, p=p)


def project_parallel(scenario, rho: PhasePoint) -> PhasePoint:
    """Tangential part of xi: remove the conormal component."""
    n, n_star = unit_conormal(scenario, rho.x, scenario.band)
    c = float(rho.xi @ n)  # g*(xi, n_star) = <xi, n_star^sharp>
    return PhasePoint(t=rho.t, x=rho.x, tau=rho.tau, xi=rho.xi - c * n_star)


def sigma(scenario, rho: PhasePoint) -> PhasePoint:
    """Isometric reflection of xi across the boundary-tangential hyperplane."""
    n, n_star = unit_conormal(scenario, rho.x, scenario.band)
    c = float(rho.xi @ n)
    return PhasePoint(t=rho.t, x=rho.x, tau=rho.tau, xi=rho.xi - 2.0 * c * n_star)


def hyperbolic_lifts(scenario, rho_par: PhasePoint) -> tuple[PhasePoint, PhasePoint]:
    """The two characteristic points above a tangential point with p <= 0.

    Returned as (outgoing, incoming): the first has hpz < 0, the second
    hpz > 0, matching the (rho_minus, rho_plus) order of break records.
    """
    th = scenario.thresholds
    n, n_star = unit_conormal(scenario, rho_par.x, scenario.band)
    scale = max(1.0, float(np.linalg.norm(rho_par.xi)))
    if abs(hpz(scenario, rho_par)) > 1e-6 * scale:
        raise ValueError("hyperbolic_lifts expects a tangential point (hpz ~ 0)")
    p = p_eval(scenario, rho_par)
    if p > th.char_tol:
        raise EllipticPoint(f"p(rho_par) = {p:.3e} > 0: no characteristic lifts")
    lam = float(np.sqrt(max(0.0, -p)))
    minus = PhasePoint(t=rho_par.t, x=rho_par.x, tau=rho_par.tau, xi=rho_par.xi - lam * n_star)
    plus = PhasePoint(t=rho_par.t, x=rho_par.x, tau=rho_par.tau, xi=rho_par.xi + lam * n_star)
    return minus, plus


def _grad_hz2p(scenario, x) -> np.ndarray:
    m = scenario.metric
    gi = m.g_inv(x)
    dphi = np.asarray(scenario.boundary.dphi(x), dtype=float)
    d2phi = np.asarray(scenario.boundary.d2phi(x), dtype=float)
    out = 4.0 * d2phi @ (gi @ dphi)
    if not m.is_constant:
        out = out + 2.0 * np.einsum("kij,i,j->k", m.dg_inv(x), dphi, dphi)
    return out


def gliding_field(scenario, rho: PhasePoint) -> TangentUpdate:
    """Extended gliding field: H_p corrected along the fiber direction of phi.

    Tangent to {phi = 0, hpz = 0} where those constraints hold, and its phi
    derivative coincides with hpz everywhere in the extension band.
    """
    if abs(scenario.boundary.phi(rho.x)) > scenario.band:
        raise NotOnBoundary("gliding field is only defined inside the extension band")
    v_hz2p = hz2p(scenario, rho.x)
    if v_hz2p < 1e-8:
        raise DegenerateTransversal(f"hz2p = {v_hz2p:.3e} too small at x = {rho.x}")
    base = hamiltonian_field(scenario, rho)
    v_hpz = hpz(scenario, rho)
    v_hp2z = hp2z(scenario, rho)
    hp_hz2p = float(_grad_hz2p(scenario, rho.x) @ base.dx)
    coef = v_hp2z / v_hz2p - (hp_hz2p / v_hz2p**2) * v_hpz
    dphi = np.asarray(scenario.boundary.dphi(rho.x), dtype=float)
    return TangentUpdate(dt=base.dt, dx=base.dx, dtau=0.0, dxi=base.dxi - coef * dphi)
