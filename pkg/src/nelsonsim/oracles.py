"""Closed-form reference values used by the test-suite.

Every oracle is a pure function of its keyword arguments and is registered
in :data:`ORACLES`, so ``oracle("heat_kernel", x=0.0, t=1.0)`` and the
``print-oracle`` CLI reach the same code.
"""

from __future__ import annotations

import math

import numpy as np
from scipy import special, stats


def heat_kernel(x=0.0, t=1.0, d=1):
    """Transition density of d-dim Brownian motion (generator Delta/2)."""
    x = np.asarray(x, dtype=float)
    r2 = np.sum(x * x, axis=-1) if x.ndim and d > 1 else x * x
    return (2 * np.pi * t) ** (-d / 2) * np.exp(-r2 / (2 * t))


def cauchy_kernel(x=0.0, t=1.0):
    """Poisson kernel t / (pi (t^2 + x^2)): density of the 1-d Cauchy process."""
    x = np.asarray(x, dtype=float)
    return t / (np.pi * (t * t + x * x))


def oscillator_energy(n=0, frequency=1.0):
    return frequency * (n + 0.5)


def oscillator_ground_state(x=0.0, frequency=1.0):
    """Normalised ground state of -Delta/2 + frequency^2 x^2 / 2."""
    x = np.asarray(x, dtype=float)
    return (frequency / np.pi) ** 0.25 * np.exp(-frequency * x * x / 2)


def ou_autocovariance(lag=0.0, rate=1.0, variance=0.5):
    return variance * np.exp(-rate * np.abs(lag))


def mehler_kernel(x=0.0, y=0.0, t=1.0):
    """Integral kernel of exp(-t(-Delta/2 + x^2/2))."""
    s = np.sinh(t)
    return (1.0 / np.sqrt(2 * np.pi * s)) * np.exp(
        -((x * x + y * y) * np.cosh(t) - 2 * x * y) / (2 * s)
    )


def inverse_gaussian_moments(dt=1.0, m=1.0):
    """Mean and variance of the inverse-Gaussian subordinator increment."""
    mean = dt / m
    return {"mean": mean, "variance": mean ** 3 / dt ** 2}


def inverse_gaussian_laplace(u=1.0, dt=1.0, m=1.0):
    return math.exp(-dt * (math.sqrt(2 * u + m * m) - m))


def levy_quantile(p=0.5, scale=1.0):
    """Quantile of the one-sided 1/2-stable (Levy) law with the given scale."""
    return scale / special.ndtri(1 - p / 2) ** 2


def relativistic_cf(u=1.0, t=1.0, m=0.0):
    return math.exp(-t * (math.sqrt(u * u + m * m) - m))


def brownian_cf(u=1.0, t=1.0):
    return math.exp(-t * u * u / 2)


def frozen_path_double_integral(omega=1.0, t=1.0):
    """int_0^t int_0^t exp(-omega |r - s|) dr ds."""
    return (2.0 / omega) * (t - (1.0 - math.exp(-omega * t)) / omega)


def gaussian_bump_heat_overlap(a=0.0, sa=1.0, b=0.0, sb=1.0, t=1.0):
    """<f, exp(t Delta / 2) g> for f = exp(-(x-a)^2/(2 sa^2)), g likewise."""
    pref = 2 * np.pi * sa * sb
    return pref * stats.norm.pdf(b - a, scale=math.sqrt(sa * sa + sb * sb + t))


def gaussian_bump_cauchy_overlap(a=0.0, sa=1.0, b=0.0, sb=1.0, t=1.0):
    """<f, exp(-t |p|) g> for Gaussian bumps; Voigt profile of the combined law."""
    pref = 2 * np.pi * sa * sb
    return pref * float(special.voigt_profile(b - a, math.sqrt(sa * sa + sb * sb), t))


def oscillator_position_autocovariance(t=1.0):
    """<x phi, exp(-t L) x phi> for the h-transformed oscillator: e^{-t}/2."""
    return 0.5 * math.exp(-abs(t))


def kv_residual_oscillator(t=1.0):
    """(1/t) E[(x_t - x_0)^2] for the stationary unit-rate OU with variance 1/2."""
    return (1.0 - math.exp(-t)) / t


def cauchy_cdf(x=0.0, scale=1.0):
    return 0.5 + np.arctan(np.asarray(x) / scale) / np.pi


ORACLES = {
    "heat_kernel": heat_kernel,
    "cauchy_kernel": cauchy_kernel,
    "oscillator_energy": oscillator_energy,
    "oscillator_ground_state": oscillator_ground_state,
    "ou_autocovariance": ou_autocovariance,
    "mehler_kernel": mehler_kernel,
    "inverse_gaussian_moments": inverse_gaussian_moments,
    "inverse_gaussian_laplace": inverse_gaussian_laplace,
    "levy_quantile": levy_quantile,
    "relativistic_cf": relativistic_cf,
    "brownian_cf": brownian_cf,
    "frozen_path_double_integral": frozen_path_double_integral,
    "gaussian_bump_heat_overlap": gaussian_bump_heat_overlap,
    "gaussian_bump_cauchy_overlap": gaussian_bump_cauchy_overlap,
    "oscillator_position_autocovariance": oscillator_position_autocovariance,
    "kv_residual_oscillator": kv_residual_oscillator,
    "cauchy_cdf": cauchy_cdf,
}


def oracle(name: str, **kwargs):
    try:
        fn = ORACLES[name]
    except KeyError:
        raise KeyError(f"unknown oracle {name!r}; known: {sorted(ORACLES)}") from None
    return fn(**kwargs)
