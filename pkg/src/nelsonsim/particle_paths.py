"""Free-particle path samplers.

Three process kinds are supported:

``brownian``
    generator -Delta/2, characteristic exponent |u|^2 / 2.
``cauchy``
    generator sqrt(-Delta), exponent |u|.
``relativistic_cauchy(m)``
    generator sqrt(-Delta + m^2) - m, exponent sqrt(|u|^2 + m^2) - m.

The jump kinds are Brownian motion time-changed by an independent
subordinator: an inverse-Gaussian subordinator (mean dt/m, shape dt^2) for
m > 0 and the one-sided 1/2-stable Levy subordinator (scale dt^2) for m = 0.
Both have Laplace exponent sqrt(2u + m^2) - m, which turns the Brownian
exponent |u|^2/2 into the relativistic one.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from typing import Callable

import numpy as np


@dataclass(frozen=True)
class ProcessKind:
    tag: str = "brownian"
    mass: float = 0.0

    def __post_init__(self):
        if self.tag not in ("brownian", "cauchy", "relativistic_cauchy"):
            raise ValueError(f"unknown process kind {self.tag!r}")
        if self.tag == "relativistic_cauchy" and not self.mass > 0:
            raise ValueError("relativistic_cauchy needs mass > 0")
        if self.tag == "cauchy" and self.mass != 0:
            raise ValueError("cauchy is the m = 0 case; use relativistic_cauchy for m > 0")

    @classmethod
    def brownian(cls) -> "ProcessKind":
        return cls("brownian")

    @classmethod
    def cauchy(cls) -> "ProcessKind":
        return cls("cauchy")

    @classmethod
    def relativistic(cls, m: float) -> "ProcessKind":
        return cls("cauchy") if m == 0 else cls("relativistic_cauchy", float(m))

    @property
    def is_jump(self) -> bool:
        return self.tag != "brownian"

    def exponent(self, u) -> np.ndarray:
        """Characteristic exponent psi with E[exp(i u X_t)] = exp(-t psi(u))."""
        u2 = np.sum(np.atleast_1d(u) ** 2, axis=-1) if np.ndim(u) >= 2 else np.asarray(u, float) ** 2
        if self.tag == "brownian":
            return 0.5 * u2
        return np.sqrt(u2 + self.mass ** 2) - self.mass


BROWNIAN = ProcessKind.brownian()
CAUCHY = ProcessKind.cauchy()


def bm_increment(dt: float, dim: int, rng: np.random.Generator, size=None) -> np.ndarray:
    if not dt > 0:
        raise ValueError("dt must be > 0")
    shape = (dim,) if size is None else tuple(np.atleast_1d(size)) + (dim,)
    return np.sqrt(dt) * rng.standard_normal(shape)


def subordinator_increment(dt: float, kind: ProcessKind, rng: np.random.Generator, size=None):
    if kind.tag == "brownian":
        raise ValueError("Brownian motion has no subordinator")
    if not dt > 0:
        raise ValueError("dt must be > 0")
    if kind.tag == "relativistic_cauchy":
        return rng.wald(dt / kind.mass, dt * dt, size=size)
    z = rng.standard_normal(size)
    return dt * dt / (z * z)


def levy_increment(dt: float, dim: int, kind: ProcessKind, rng: np.random.Generator, size=None):
    t = subordinator_increment(dt, kind, rng, size)
    gauss = bm_increment(1.0, dim, rng, size)
    return np.sqrt(np.asarray(t))[..., None] * gauss


def increment(dt: float, dim: int, kind: ProcessKind, rng: np.random.Generator, size=None):
    if kind.tag == "brownian":
        return bm_increment(dt, dim, rng, size)
    return levy_increment(dt, dim, kind, rng, size)


@dataclass(frozen=True)
class ParticlePath:
    """Sampled trajectory. ``positions`` has shape (n_times, ..., dim)."""

    kind: ProcessKind
    times: np.ndarray
    positions: np.ndarray

    def __post_init__(self):
        t = np.asarray(self.times, dtype=float)
        x = np.asarray(self.positions, dtype=float)
        object.__setattr__(self, "times", t)
        object.__setattr__(self, "positions", x)
        if x.shape[0] != t.shape[0]:
            raise ValueError("times and positions differ in length")
        if t[0] != 0 or np.any(np.diff(t) <= 0):
            raise ValueError("times must start at 0 and increase strictly")
        if not np.all(np.isfinite(x)):
            raise ValueError("non-finite positions")

    @property
    def dim(self) -> int:
        return self.positions.shape[-1]

    def to_csv(self, path) -> None:
        if self.positions.ndim != 2:
            raise ValueError("CSV export needs a single path")
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["time"] + [f"x_{i}" for i in range(self.dim)])
            for t, x in zip(self.times, self.positions):
                w.writerow([repr(float(t))] + [repr(float(v)) for v in x])


def sample_path(x0, T: float, n_steps: int, kind: ProcessKind, rng: np.random.Generator, size=None) -> ParticlePath:
    """Path on the uniform grid of ``n_steps`` steps over [0, T].

    ``x0`` is a d-vector, or an array (size, d) of per-sample starting points
    when ``size`` is given.
    """
    if not T > 0 or n_steps < 1:
        raise ValueError("need T > 0 and n_steps >= 1")
    x0 = np.asarray(x0, dtype=float)
    dim = x0.shape[-1]
    dt = T / n_steps
    incs = increment(dt, dim, kind, rng, size=(n_steps,) if size is None else (n_steps, size))
    start = np.broadcast_to(x0, incs.shape[1:])
    pos = np.concatenate([start[None], start[None] + np.cumsum(incs, axis=0)], axis=0)
    return ParticlePath(kind, np.linspace(0.0, T, n_steps + 1), pos)


@dataclass(frozen=True)
class TwoSidedPath:
    forward: ParticlePath
    backward: ParticlePath

    def __post_init__(self):
        if not np.array_equal(self.forward.positions[0], self.backward.positions[0]):
            raise ValueError("forward and backward halves must share the starting point")

    def at(self, t: float) -> np.ndarray:
        """Position at signed time ``t`` (must lie on either half's grid)."""
        half = self.forward if t >= 0 else self.backward
        i = int(np.argmin(np.abs(half.times - abs(t))))
        if not np.isclose(half.times[i], abs(t)):
            raise ValueError(f"time {t} is not a grid point")
        return half.positions[i]


def two_sided(x0, T: float, n_steps: int, kind: ProcessKind, rng: np.random.Generator, size=None) -> TwoSidedPath:
    fwd = sample_path(x0, T, n_steps, kind, rng, size)
    bwd = sample_path(x0, T, n_steps, kind, rng, size)
    return TwoSidedPath(fwd, bwd)


def max_increment(path: ParticlePath) -> np.ndarray:
    """Largest absolute one-step displacement along each path."""
    d = np.linalg.norm(np.diff(path.positions, axis=0), axis=-1)
    return d.max(axis=0)


@dataclass
class KatoTable:
    t: np.ndarray
    sup_estimate: np.ndarray
    stderr: np.ndarray
    argmax_x: np.ndarray
    trends_to_zero: bool
    ceiling_exceeded: bool

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["t", "sup_estimate", "stderr"])
            for row in zip(self.t, self.sup_estimate, self.stderr):
                w.writerow([repr(float(v)) for v in row])


def kato_diagnostic(
    V: Callable[[np.ndarray], np.ndarray],
    kind: ProcessKind,
    t_grid,
    x_grid,
    n_samples: int,
    rng: np.random.Generator,
    n_sub: int = 32,
    ceiling: float = 1e6,
) -> KatoTable:
    """Monte Carlo sup_x E^x[int_0^t |V(Z_s)| ds] on a finite x grid.

    ``x_grid`` is a sequence of 1-d points or an array (n_x, dim). Time
    integrals use the trapezoid rule on ``n_sub`` steps.
    """
    t_grid = np.asarray(t_grid, dtype=float)
    xs = np.asarray(x_grid, dtype=float)
    if xs.ndim == 1:
        xs = xs[:, None]
    sups, errs, args = [], [], []
    flagged = False
    for t in t_grid:
        means = np.empty(len(xs))
        ses = np.empty(len(xs))
        for i, x0 in enumerate(xs):
            path = sample_path(x0, t, n_sub, kind, rng, size=n_samples)
            with np.errstate(over="ignore", invalid="ignore"):
                v = np.abs(V(path.positions[..., 0] if xs.shape[1] == 1 else path.positions))
                integral = np.trapezoid(v, dx=t / n_sub, axis=0)
            means[i] = np.mean(integral)
            ses[i] = np.std(integral, ddof=1) / np.sqrt(n_samples)
        if not np.all(np.isfinite(means)) or np.nanmax(means) > ceiling:
            flagged = True
        j = int(np.nanargmax(np.where(np.isfinite(means), means, np.inf)))
        sups.append(means[j])
        errs.append(ses[j])
        args.append(xs[j, 0])
    sups = np.asarray(sups)
    order = np.argsort(t_grid)
    s_sorted = sups[order]
    trend = bool(
        not flagged
        and np.all(np.isfinite(s_sorted))
        and np.all(np.diff(s_sorted) >= -3 * np.asarray(errs)[order][1:])
        and s_sorted[0] < 0.5 * s_sorted[-1]
    )
    return KatoTable(t_grid, sups, np.asarray(errs), np.asarray(args), trend, flagged)


def empirical_cf(kind: ProcessKind, t: float, u_values, n_samples: int, rng: np.random.Generator) -> list:
    """Real part of the empirical characteristic function of X_t (d = 1) next to exp(-t psi(u))."""
    x = increment(t, 1, kind, rng, size=n_samples)[:, 0]
    rows = []
    for u in u_values:
        c = np.cos(u * x)
        rows.append({
            "kind": kind.tag,
            "mass": kind.mass,
            "u": float(u),
            "empirical": float(c.mean()),
            "stderr": float(c.std(ddof=1) / np.sqrt(n_samples)),
            "exact": float(np.exp(-t * kind.exponent(u))),
        })
    return rows
