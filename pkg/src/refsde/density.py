"""Quadrature evaluation of the model's closed-form invariant density.

The density is pi(x) = exp(-(2/sigma^2) * I(x)) / Z with I(x) = int_l^x b, the
normalizer Z integrating the same expression over the domain.  On top of it
sit the kernel-smoothed density F(x) = int K_h(y-x) pi(y) dy and the estimator
asymptotic variance Sigma(x) = sigma^2 / F(x).

All integrals are composite Simpson.  pi_eval and the normalizer share the
same inner-integral rule (quad_panels panels on [l, x]), so the normalization
error cancels and int pi = 1 holds to quadrature accuracy even when the inner
rule itself carries discretization error.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .model import BarrierConfig, DriftSpec, KernelSpec

__all__ = [
    "InvariantDensity",
    "ModelNotErgodicError",
    "UndefinedVarianceError",
    "f_eval",
    "inner_integral",
    "invariant_density",
    "pi_eval",
    "sigma_eval",
]

_TAIL_TOL = 1e-10     # one-sided tail truncation threshold
_MAX_TAIL_DOUBLINGS = 40
_NORM_RTOL = 1e-10    # outer-panel doubling stop for the normalizer
_MAX_PANEL_DOUBLINGS = 16
_EVAL_BLOCK = 256     # targets per block when building Simpson node matrices


class ModelNotErgodicError(RuntimeError):
    """One-sided normalizer failed to converge under tail-truncation doubling."""


class UndefinedVarianceError(RuntimeError):
    """Sigma(x) requested where the smoothed density F vanishes."""


def _simpson_nodes_weights(n_panels: int):
    # 2*n_panels+1 equally spaced nodes on [0,1]; weights (1,4,2,...,4,1)/6/n.
    m = 2 * n_panels + 1
    offsets = np.linspace(0.0, 1.0, m)
    w = np.full(m, 2.0)
    w[1::2] = 4.0
    w[0] = w[-1] = 1.0
    w /= 6.0 * n_panels
    return offsets, w


def _integral_from(fn, lower: float, x, n_panels: int):
    """Composite Simpson of fn on [lower, x_i] for each target x_i."""
    xs = np.asarray(x, dtype=float)
    scalar = xs.ndim == 0
    xs1 = np.atleast_1d(xs)
    offsets, w = _simpson_nodes_weights(n_panels)
    out = np.empty(xs1.shape)
    widths = xs1 - lower
    for i0 in range(0, xs1.size, _EVAL_BLOCK):
        sl = slice(i0, i0 + _EVAL_BLOCK)
        nodes = lower + widths[sl, None] * offsets[None, :]
        out[sl] = (np.asarray(fn(nodes)) @ w) * widths[sl]
    return float(out[0]) if scalar else out


def _fixed_simpson(fn, a: float, b: float, n_panels: int) -> float:
    offsets, w = _simpson_nodes_weights(n_panels)
    nodes = a + (b - a) * offsets
    return float(np.asarray(fn(nodes)) @ w) * (b - a)


@dataclass(frozen=True)
class InvariantDensity:
    """Closed-form invariant density, normalized over its support.

    ``support_hi`` is the upper barrier in two-sided mode, or the truncation
    point l + T_tail at which the one-sided tail was verified negligible.
    Build instances through :func:`invariant_density`.
    """

    drift: DriftSpec
    sigma: float
    barrier: BarrierConfig
    normalizer: float
    quad_panels: int
    support_hi: float

    def __post_init__(self) -> None:
        if not (math.isfinite(self.normalizer) and self.normalizer > 0):
            raise ValueError("normalizer must be finite and positive")


def inner_integral(d: InvariantDensity, x):
    """int_l^x b(y) dy by composite Simpson with d.quad_panels panels.

    Accepts scalars or arrays of targets; exact per panel for cubic b.
    """
    return _integral_from(d.drift.fn, d.barrier.lower, x, d.quad_panels)


def _unnormalized(drift: DriftSpec, sigma: float, lower: float, x, n_panels: int):
    c = 2.0 / (sigma * sigma)
    return np.exp(-c * _integral_from(drift.fn, lower, x, n_panels))


def invariant_density(drift: DriftSpec, sigma: float, barrier: BarrierConfig,
                      quad_panels: int = 1024) -> InvariantDensity:
    """Compute the normalizer and return the ready-to-evaluate density.

    Two-sided: Z integrates over [l, u] with outer-panel doubling until the
    value stabilizes.  One-sided: the truncation horizon doubles until the
    last tail slab contributes < 1e-10; failure to stabilize within 40
    doublings means the density is not integrable (model not ergodic).
    """
    if not sigma > 0:
        raise ValueError("sigma must be positive")
    if quad_panels < 1:
        raise ValueError("quad_panels must be positive")
    lower = barrier.lower

    def g(x):
        return _unnormalized(drift, sigma, lower, x, quad_panels)

    if barrier.mode == "two_sided":
        support_hi = barrier.upper
        z = _converged_simpson(g, lower, support_hi, quad_panels)
    else:
        t_tail = 1.0
        z = _fixed_simpson(g, lower, lower + t_tail, quad_panels)
        for _ in range(_MAX_TAIL_DOUBLINGS):
            tail = _fixed_simpson(g, lower + t_tail, lower + 2.0 * t_tail,
                                  quad_panels)
            z += tail
            t_tail *= 2.0
            if tail < _TAIL_TOL:
                break
        else:
            raise ModelNotErgodicError(
                "one-sided invariant density tail did not vanish under "
                f"truncation doubling (last slab {tail:g})")
        support_hi = lower + t_tail
        z = _converged_simpson(g, lower, support_hi, quad_panels)
    if not (math.isfinite(z) and z > 0):
        raise ModelNotErgodicError(f"normalizer not positive-finite (Z={z:g})")
    return InvariantDensity(drift=drift, sigma=sigma, barrier=barrier,
                            normalizer=z, quad_panels=quad_panels,
                            support_hi=support_hi)


def _converged_simpson(fn, a: float, b: float, start_panels: int) -> float:
    panels = start_panels
    prev = _fixed_simpson(fn, a, b, panels)
    for _ in range(_MAX_PANEL_DOUBLINGS):
        panels *= 2
        cur = _fixed_simpson(fn, a, b, panels)
        if abs(cur - prev) <= _NORM_RTOL * max(1.0, abs(cur)):
            return cur
        prev = cur
    raise RuntimeError("normalizer quadrature failed to stabilize")


def pi_eval(d: InvariantDensity, x):
    """Density value(s) at x: exp(-(2/sigma^2) inner_integral(x)) / Z."""
    return _unnormalized(d.drift, d.sigma, d.barrier.lower, x,
                         d.quad_panels) / d.normalizer


def f_eval(d: InvariantDensity, k: KernelSpec, x: float) -> float:
    """Kernel-smoothed density F(x) = int K(r) pi(x + r h) dr.

    pi is extended by zero outside the domain, so the r-range is clipped to
    the part of [-1,1] that stays inside [l, u] (or [l, inf) one-sided).
    """
    h = k.bandwidth
    r_lo = max(-1.0, (d.barrier.lower - x) / h)
    r_hi = 1.0
    if d.barrier.mode == "two_sided":
        r_hi = min(1.0, (d.barrier.upper - x) / h)
    if r_lo >= r_hi:
        return 0.0

    def integrand(r):
        return np.asarray(k.fn(r)) * pi_eval(d, x + r * h)

    val = _fixed_simpson(integrand, r_lo, r_hi, d.quad_panels)
    return max(val, 0.0)


def sigma_eval(d: InvariantDensity, k: KernelSpec, x: float) -> float:
    """Asymptotic variance Sigma(x) = sigma^2 / F(x)."""
    f = f_eval(d, k, x)
    if f <= 0.0:
        raise UndefinedVarianceError(
            f"smoothed density vanishes at x={x:g}; variance undefined")
    return d.sigma * d.sigma / f
