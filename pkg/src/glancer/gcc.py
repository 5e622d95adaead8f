"""Geometric control audit over sampled characteristic starts.

Traces a family of rays for a time horizon in both directions and reports
whether every traced base curve meets the observation region. The verdict
is always sample-relative: HoldsOnSample, never an unconditional holds,
since the underlying condition quantifies over all generalized rays.
"""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from . import flow
from . import geometry as geo
from . import scenarios as scen
from .errors import GlancerError, ValidationError
from .symbol import PhasePoint

log = logging.getLogger("glancer.gcc")

_GOLDEN = 0.6180339887498949
# 2D Kronecker lattice directions from powers of the plastic constant
_KRONECKER = np.array([0.7548776662466927, 0.5698402909980532])


@dataclass
class ObservationRegion:
    """Observation set as a predicate over (t, x).

    Expression-backed regions ({expr > 0} over names t, x1, x2) evaluate
    vectorized and survive pickling to worker processes; a raw predicate
    callable restricts the audit to serial execution.
    """

    description: str
    expression: str | None = None
    predicate: Optional[Callable] = None

    def __post_init__(self):
        if self.expression is not None:
            self._fn = scen.compile_expression(self.expression, ("t", "x1", "x2"))
        elif self.predicate is None:
            raise ValidationError("region needs an expression or a predicate")
        else:
            self._fn = None

    def contains(self, t: float, x) -> bool:
        x = np.asarray(x, dtype=float)
        if self._fn is not None:
            return bool(float(self._fn(t=float(t), x1=float(x[0]), x2=float(x[1]))) > 0.0)
        return bool(self.predicate(t, x))

    def entered(self, t_arr: np.ndarray, X: np.ndarray) -> np.ndarray:
        if self._fn is not None:
            vals = np.asarray(self._fn(t=t_arr, x1=X[:, 0], x2=X[:, 1]), dtype=float)
            return np.broadcast_to(vals, t_arr.shape) > 0.0
        return np.array([self.predicate(t_arr[i], X[i]) for i in range(len(t_arr))], dtype=bool)


def region_from_expression(expr: str, description: str | None = None) -> ObservationRegion:
    return ObservationRegion(description=description or f"{{{expr} > 0}}", expression=expr)


@dataclass
class GccReport:
    verdict: str  # "HoldsOnSample" | "FailsWithWitness"
    witness: flow.GenBicharacteristic | None
    witness_backward: flow.GenBicharacteristic | None
    witness_start: PhasePoint | None
    n_samples: int
    n_entered: int
    n_skipped: int
    hit_times: list
    T: float
    elapsed: float

    @property
    def ok(self) -> bool:
        return self.verdict == "HoldsOnSample"

    def summary(self) -> dict:
        hits = np.asarray(self.hit_times, dtype=float)
        return {
            "verdict": self.verdict,
            "T": self.T,
            "n_samples": self.n_samples,
            "n_entered": self.n_entered,
            "n_skipped": self.n_skipped,
            "hit_time_max": float(hits.max()) if hits.size else None,
            "hit_time_mean": float(hits.mean()) if hits.size else None,
            "elapsed_s": self.elapsed,
            "witness_start": self.witness_start.to_dict() if self.witness_start else None,
        }


def default_sampler(scenario, n: int, seed: int = 0):
    """Low-discrepancy characteristic starts with |tau| = 1.

    Positions follow a Kronecker lattice over the chart box (filtered to
    the strict interior), the direction angle follows a golden-ratio
    sequence whose first angle is horizontal; the seed rotates the angle
    sequence. Both time directions are traced later, so tau = +1 suffices.
    """
    lo, hi = scenario.domain_lo, scenario.domain_hi
    span = hi - lo
    offset = (seed * _GOLDEN) % 1.0
    out = []
    k = 0
    while len(out) < n and k < 1000 * max(n, 1):
        u = (0.5 + k * _KRONECKER) % 1.0
        x = lo + span * u
        theta = 2.0 * np.pi * ((k * _GOLDEN + offset) % 1.0)
        k += 1
        if float(scenario.boundary.phi(x)) <= 1e-6 or not geo.in_domain(scenario, x):
            continue
        xi = np.array([np.cos(theta), np.sin(theta)])
        xi = xi / np.sqrt(geo.conorm_sq(scenario, x, xi))
        out.append(PhasePoint(t=0.0, x=x, tau=1.0, xi=xi))
    if len(out) < n:
        raise ValidationError(f"sampler produced {len(out)}/{n} interior starts")
    return out


def _entered_over_trace(scenario, region, T, rho, params, window):
    """Trace both directions in t-windows; stop at the first region entry."""
    t0 = rho.t
    d = scenario.dim
    for direction in (1, -1):
        cur = rho
        t_done = 0.0
        while t_done < T - 1e-12:
            w = min(window, T - t_done)
            gb = flow.trace_generalized(scenario, cur, w, params, direction)
            s, states, kinds, idx = gb.all_samples()
            mask = region.entered(states[:, 0], states[:, 1 : 1 + d])
            if mask.any():
                i = int(np.argmax(mask))
                return True, abs(float(states[i, 0]) - t0)
            t_adv = abs(float(states[-1, 0]) - cur.t)
            if t_adv <= 1e-12:
                log.info("trace stalled (chart exit?) at t_done = %.3g", t_done)
                break
            t_done += t_adv
            cur = PhasePoint.from_vector(states[-1], d)
    return False, None


def _audit_chunk(config, region_expr, region_desc, T, rows, params, window):
    scenario = scen.from_config(config)
    region = ObservationRegion(description=region_desc, expression=region_expr)
    out = []
    for row in rows:
        rho = PhasePoint.from_vector(np.asarray(row, dtype=float), scenario.dim)
        try:
            ent, hit = _entered_over_trace(scenario, region, T, rho, params, window)
            out.append(("entered" if ent else "witness", hit))
        except GlancerError as exc:
            out.append(("skipped", str(exc)))
    return out


def gcc_check(
    scenario,
    region: ObservationRegion,
    T: float,
    sampler,
    params: flow.IntegratorParams | None = None,
    workers: int | None = None,
    window: float | None = None,
) -> GccReport:
    """Audit the control condition on the sampled starts.

    Each start is traced for time T forward and backward, in windows with
    early exit on region entry. The first non-entering start (in sampler
    order, independent of worker count) is re-traced in full and returned
    as the witness.
    """
    if T <= 0:
        raise ValueError("T must be positive")
    params = params or flow.IntegratorParams()
    window = window or max(T / 8.0, 4.0 * params.h)
    samples = list(sampler)
    t_begin = time.perf_counter()
    results: list = [None] * len(samples)

    parallel = (
        workers is not None
        and workers > 1
        and region.expression is not None
        and bool(scenario.config)
    )
    if parallel:
        from concurrent.futures import ProcessPoolExecutor

        chunk = max(1, min(len(samples) // max(workers, 1) + 1, workers * 8))
        rows = [rho.as_vector() for rho in samples]
        with ProcessPoolExecutor(max_workers=workers) as pool:
            start = 0
            stop_early = False
            while start < len(rows) and not stop_early:
                futs = []
                for w_i in range(workers):
                    lo_i = start + w_i * chunk
                    if lo_i >= len(rows):
                        break
                    part = rows[lo_i : lo_i + chunk]
                    futs.append(
                        (
                            lo_i,
                            pool.submit(
                                _audit_chunk,
                                scenario.config,
                                region.expression,
                                region.description,
                                T,
                                part,
                                params,
                                window,
                            ),
                        )
                    )
                for lo_i, fut in futs:
                    part_res = fut.result()
                    results[lo_i : lo_i + len(part_res)] = part_res
                    if any(r[0] == "witness" for r in part_res):
                        stop_early = True
                start += workers * chunk
    else:
        for i, rho in enumerate(samples):
            try:
                ent, hit = _entered_over_trace(scenario, region, T, rho, params, window)
            except GlancerError as exc:
                log.warning("sample %d skipped: %s", i, exc)
                results[i] = ("skipped", str(exc))
                continue
            results[i] = ("entered" if ent else "witness", hit)
            if not ent:
                break

    n_entered = 0
    n_skipped = 0
    hit_times = []
    witness_idx = None
    for i, r in enumerate(results):
        if r is None:
            continue
        status, payload = r
        if status == "entered":
            n_entered += 1
            hit_times.append(payload)
        elif status == "skipped":
            n_skipped += 1
        elif witness_idx is None:
            witness_idx = i

    if witness_idx is not None:
        w_start = samples[witness_idx]
        witness_fwd = flow.trace_generalized(scenario, w_start, T, params, direction=1)
        witness_bwd = flow.trace_generalized(scenario, w_start, T, params, direction=-1)
        return GccReport(
            verdict="FailsWithWitness",
            witness=witness_fwd,
            witness_backward=witness_bwd,
            witness_start=w_start,
            n_samples=len(samples),
            n_entered=n_entered,
            n_skipped=n_skipped,
            hit_times=hit_times,
            T=T,
            elapsed=time.perf_counter() - t_begin,
        )
    return GccReport(
        verdict="HoldsOnSample",
        witness=None,
        witness_backward=None,
        witness_start=None,
        n_samples=len(samples),
        n_entered=n_entered,
        n_skipped=n_skipped,
        hit_times=hit_times,
        T=T,
        elapsed=time.perf_counter() - t_begin,
    )
