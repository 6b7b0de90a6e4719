"""Feynman-Kac estimators for free-particle and Nelson semigroups.

Matrix elements ``<Phi, exp(-tH) Psi>`` are estimated by two independent
Monte Carlo routes:

joint
    particle and OU field paths are sampled together and the interaction
    integral enters the weight directly;
oracle
    only the particle is sampled; the field average is done exactly with the
    Gaussian identity ``E[exp(Y)] = exp(Var(Y)/2)`` (see
    :func:`gaussian_field_oracle`).

A third, deterministic route (:func:`semigroup_matrix_element`) applies a
Krylov matrix exponential to the discretised Hamiltonian.

Starting points are drawn uniformly from the finite box; the estimate is
scaled by its length, so the start measure is Lebesgue measure on the box.
Time integrals are trapezoidal on the sampling grid.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from typing import Callable

import numpy as np
import scipy.sparse.linalg as spla

from .field_modes import FieldState, ModeSet, interaction_value, sample_field_path
from .operators import NelsonModel
from .particle_paths import ParticlePath, ProcessKind, sample_path


@dataclass(frozen=True)
class FKWeight:
    log_weight: np.ndarray | float
    pot_integral: np.ndarray | float
    int_integral: np.ndarray | float


@dataclass
class FKEstimate:
    value: float
    std_error: float
    n_samples: int
    estimator: str = ""
    config_hash: str = ""

    def __post_init__(self):
        if self.std_error < 0 or self.n_samples < 2:
            raise ValueError("invalid estimate")

    @classmethod
    def from_samples(cls, samples: np.ndarray, estimator: str = "") -> "FKEstimate":
        samples = np.asarray(samples, dtype=float)
        n = samples.size
        return cls(float(samples.mean()), float(samples.std(ddof=1) / np.sqrt(n)), int(n), estimator)

    def to_json(self) -> str:
        return json.dumps(asdict(self), sort_keys=True)


def _trapezoid_weights(times: np.ndarray) -> np.ndarray:
    dt = np.diff(times)
    w = np.zeros(len(times))
    w[:-1] += dt / 2
    w[1:] += dt / 2
    return w


def fk_weight(ppath: ParticlePath, fpath, V: Callable | None, ms: ModeSet | None) -> FKWeight:
    """Trapezoidal potential and interaction integrals along paired paths.

    ``fpath`` may be None (no field). Batched paths are supported as long as
    the particle positions have shape (n_times, ..., 1) and the field states
    (n_times, ..., n_modes).
    """
    times = ppath.times
    if fpath is not None and not np.allclose(fpath.times, times):
        raise ValueError("particle and field paths must share the time grid")
    x = ppath.positions[..., 0]
    wts = _trapezoid_weights(times).reshape((-1,) + (1,) * (x.ndim - 1))
    pot = np.sum(wts * V(x), axis=0) if V is not None else np.zeros(x.shape[1:])
    if fpath is not None and ms is not None:
        inter = np.sum(wts * interaction_value(fpath.states, x, ms), axis=0)
    else:
        inter = np.zeros(x.shape[1:])
    if np.ndim(pot) == 0:
        pot, inter = float(pot), float(inter)
    return FKWeight(-(pot + inter), pot, inter)


@dataclass(frozen=True)
class ProductState:
    """Phi(x, q) = particle(x) * exp(sum_i field_exponents[i] * q_i).

    ``field_exponents`` is indexed like ``ms.quadratures``; None means the
    field factor is the constant 1 (the Fock vacuum).
    """

    particle: Callable[[np.ndarray], np.ndarray]
    field_exponents: tuple | None = None

    def exponents(self, n_quads: int) -> np.ndarray:
        if self.field_exponents is None:
            return np.zeros(n_quads)
        a = np.asarray(self.field_exponents, dtype=float)
        if a.shape != (n_quads,):
            raise ValueError("field_exponents must match the retained quadratures")
        return a

    def on_grid(self, model: NelsonModel) -> np.ndarray:
        n_q = model.Q.shape[1]
        return self.particle(model.X) * np.exp(model.Q @ self.exponents(n_q))


@dataclass(frozen=True)
class FKConfig:
    kind: ProcessKind = ProcessKind()
    potential: Callable | None = None
    ms: ModeSet | None = None
    box: tuple = (-6.0, 6.0)
    n_steps: int = 64
    batch: int = 20000
    config_hash: str = ""


def _uniform_starts(box, n, rng):
    a, b = box
    return rng.uniform(a, b, size=n), b - a


def fk_particle_only(f, g, t, V, kind, n_steps, n_samples, rng, box=(-6.0, 6.0), batch=20000,
                     overflow_ratio: float = 1.0) -> FKEstimate:
    """Monte Carlo <f, exp(-tK) g> for K = (free generator) + V in d = 1."""
    vals = []
    done = 0
    while done < n_samples:
        n = min(batch, n_samples - done)
        x0, vol = _uniform_starts(box, n, rng)
        path = sample_path(x0[:, None], t, n_steps, kind, rng, size=n)
        w = fk_weight(path, None, V, None)
        vals.append(vol * f(x0) * np.exp(w.log_weight) * g(path.positions[-1, :, 0]))
        done += n
    est = FKEstimate.from_samples(np.concatenate(vals), "particle_only")
    if est.value != 0 and est.std_error / abs(est.value) > overflow_ratio:
        est.estimator += ":variance_overflow"
    return est


def gaussian_field_oracle(ppath: ParticlePath, ms: ModeSet, t: float | None = None,
                          a: np.ndarray | None = None, b: np.ndarray | None = None) -> np.ndarray:
    """Exact field average given the particle path.

    Returns ``E_field[exp(a.q(0) + b.q(t) - int_0^t I(xi_r, x_r) dr)]`` for a
    stationary OU field, with the time integral on the path's trapezoidal
    grid. ``a`` and ``b`` are optional exponent vectors over the retained
    quadratures (zero by default).
    """
    times = ppath.times
    t = times[-1] if t is None else t
    if not np.isclose(times[-1], t):
        raise ValueError("path must end at t")
    x = ppath.positions[..., 0]
    x2 = x.reshape(len(times), -1)
    wts = _trapezoid_weights(times)
    idx, is_cos, lam, om, k = ms.quadrature_arrays()
    nq = len(idx)
    a = np.zeros(nq) if a is None else np.asarray(a, float)
    b = np.zeros(nq) if b is None else np.asarray(b, float)
    v = ms.variances[idx]
    lag = np.abs(times[:, None] - times[None, :])
    var = np.zeros(x2.shape[1])
    for i in range(nq):
        trig = np.cos(k[i] * x2) if is_cos[i] else np.sin(k[i] * x2)
        wtrig = wts[:, None] * trig
        K = np.exp(-om[i] * lag)
        quad = np.einsum("rp,rs,sp->p", wtrig, K, wtrig)
        c0 = np.exp(-om[i] * times) @ wtrig
        ct = np.exp(-om[i] * (t - times)) @ wtrig
        var += v[i] * (a[i] ** 2 + b[i] ** 2 + 2 * a[i] * b[i] * np.exp(-om[i] * t)
                       - 2 * lam[i] * (a[i] * c0 + b[i] * ct) + lam[i] ** 2 * quad)
    out = np.exp(0.5 * var)
    return out.reshape(x.shape[1:]) if x.ndim > 1 else float(out[0])


def field_bound(ms: ModeSet, t: float) -> float:
    """exp(t * sum_j dk |phi(k_j)|^2 / omega_j^2), the Gaussian bound on the field average."""
    return float(np.exp(t * np.sum(ms.delta_k * ms.form_values ** 2 / ms.omegas ** 2)))


@dataclass
class NelsonElement:
    joint: FKEstimate
    oracle: FKEstimate
    z: float
    agree: bool

    def to_dict(self) -> dict:
        return {"joint": asdict(self.joint), "oracle": asdict(self.oracle), "z": self.z, "agree": self.agree}


def fk_nelson_element(Phi: ProductState, Psi: ProductState, t: float, config: FKConfig, n_samples: int,
                      rng: np.random.Generator, estimators=("joint", "oracle")) -> NelsonElement:
    """<Phi, exp(-tH) Psi> by joint path MC and by the field-integrated oracle."""
    ms = config.ms
    nq = 0 if ms is None else ms.n_quadratures
    a, b = Phi.exponents(nq), Psi.exponents(nq)
    times = np.linspace(0.0, t, config.n_steps + 1)
    joint, orac = [], []
    done = 0
    while done < n_samples:
        n = min(config.batch, n_samples - done)
        done += n
        if "joint" in estimators:
            x0, vol = _uniform_starts(config.box, n, rng)
            path = sample_path(x0[:, None], t, config.n_steps, config.kind, rng, size=n)
            base = vol * Phi.particle(x0) * Psi.particle(path.positions[-1, :, 0])
            if ms is not None:
                fpath = sample_field_path(ms, times, rng, size=n)
                w = fk_weight(path, fpath, config.potential, ms)
                q0 = FieldState(fpath.states.xi_c[0], fpath.states.xi_s[0]).quadrature_values(ms)
                qt = FieldState(fpath.states.xi_c[-1], fpath.states.xi_s[-1]).quadrature_values(ms)
                field_fac = np.exp(q0 @ a + qt @ b)
            else:
                w = fk_weight(path, None, config.potential, None)
                field_fac = 1.0
            joint.append(base * np.exp(w.log_weight) * field_fac)
        if "oracle" in estimators:
            x0, vol = _uniform_starts(config.box, n, rng)
            path = sample_path(x0[:, None], t, config.n_steps, config.kind, rng, size=n)
            w = fk_weight(path, None, config.potential, None)
            fac = gaussian_field_oracle(path, ms, t, a, b) if ms is not None else 1.0
            orac.append(vol * Phi.particle(x0) * np.exp(w.log_weight) * fac
                        * Psi.particle(path.positions[-1, :, 0]))
    est_j = FKEstimate.from_samples(np.concatenate(joint), "joint") if joint else None
    est_o = FKEstimate.from_samples(np.concatenate(orac), "oracle") if orac else None
    if est_j is not None and est_o is not None:
        z = (est_j.value - est_o.value) / np.hypot(est_j.std_error, est_o.std_error)
        agree = bool(abs(z) < 3)
    else:
        z, agree = float("nan"), True
    for e in (est_j, est_o):
        if e is not None:
            e.config_hash = config.config_hash
    return NelsonElement(est_j, est_o, float(z), agree)


def semigroup_matrix_element(Phi: ProductState, Psi: ProductState, t: float, model: NelsonModel) -> float:
    """<Phi, exp(-tH) Psi> on the discretised model via expm_multiply."""
    phi = model.flat(Phi.on_grid(model))
    psi = model.flat(Psi.on_grid(model))
    return float(phi @ spla.expm_multiply(-t * model.H, psi))


@dataclass
class EnergyFit:
    E_hat: float
    stderr: float
    t_grid: np.ndarray
    values: list = field(default_factory=list)
    flags: list = field(default_factory=list)


def fit_decay_rate(t_grid, values, std_errors) -> tuple[float, float, list]:
    """Weighted least-squares slope of -log(values) against t.

    Returns (slope, slope standard error, flags). A tail that rises by more
    than three combined standard errors is flagged ``non_monotone_tail``.
    """
    t_grid = np.asarray(t_grid, dtype=float)
    vals = np.asarray(values, dtype=float)
    ses = np.asarray(std_errors, dtype=float)
    if np.any(vals <= 0):
        raise ValueError("semigroup values must be positive to take logs")
    y = -np.log(vals)
    sy = np.maximum(ses / vals, 1e-15)
    w = 1.0 / sy ** 2
    tbar = np.sum(w * t_grid) / np.sum(w)
    sxx = np.sum(w * (t_grid - tbar) ** 2)
    slope = float(np.sum(w * (t_grid - tbar) * y) / sxx)
    flags = []
    if np.any(np.diff(vals) > 3 * np.hypot(ses[1:], ses[:-1])):
        flags.append("non_monotone_tail")
    return slope, float(np.sqrt(1.0 / sxx)), flags


def ground_energy_estimate(Psi: ProductState, t_grid, config: FKConfig, n_samples: int,
                           rng: np.random.Generator) -> EnergyFit:
    """Weighted linear fit of -log <Psi, exp(-tH) Psi> against t (oracle estimator)."""
    t_grid = np.asarray(t_grid, dtype=float)
    if len(t_grid) < 3 or np.any(np.diff(t_grid) <= 0):
        raise ValueError("t_grid must be increasing with at least 3 points")
    ests = [fk_nelson_element(Psi, Psi, t, config, n_samples, rng, estimators=("oracle",)).oracle
            for t in t_grid]
    slope, err, flags = fit_decay_rate(t_grid, [e.value for e in ests], [e.std_error for e in ests])
    return EnergyFit(slope, err, t_grid, ests, flags)
