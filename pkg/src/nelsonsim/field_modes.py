"""Finite-mode representation of the scalar boson field.

The field is truncated to ``n`` positive momenta ``k_j = j * dk``. Each
momentum carries two real Ornstein-Uhlenbeck quadratures (cosine and sine),
each with stationary variance 1/2 and relaxation rate ``omega(k_j)``. The
momentum-space weights ``dk``, the form factor and ``1/sqrt(omega)`` are all
folded into the per-mode coupling ``lambda_j``, so that

    Var(interaction_value(xi, x)) = sum_j dk * |phi_hat(k_j)|^2 / (2 omega_j)

which is the mode quadrature of the stationary covariance of the field
smeared against the form factor.

Two pairings are exposed:

* :func:`pair` uses the Q-space normalisation in which
  ``Cov(pair(f), pair(g)) = sum_j dk f_hat g_hat / (2 omega_j)``.
* :func:`smeared_field` uses the Fock normalisation
  ``Var(smeared_field(h)) = sum_j dk |h_hat|^2 / 2``; it is the field
  operator whose commutator with the free field Hamiltonian produces the
  ``||sqrt(omega) h||^2`` variances.  ``smeared_field(h) == pair(sqrt(omega) h)``.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field, replace
from typing import Callable, Sequence, Union

import numpy as np

STATIONARY_VARIANCE = 0.5

ArrayLike = Union[float, np.ndarray]
Tabulated = Union[Callable[[np.ndarray], np.ndarray], Sequence[float], np.ndarray, float]


class ModeSetError(ValueError):
    """Raised for infrared-singular or non-integrable mode configurations."""


@dataclass(frozen=True)
class Dispersion:
    nu: float = 1.0

    def __post_init__(self):
        if self.nu < 0:
            raise ValueError("boson mass nu must be >= 0")

    def __call__(self, k: ArrayLike) -> ArrayLike:
        return omega(k, self)


def omega(k: ArrayLike, disp: Dispersion) -> ArrayLike:
    """Single-boson energy ``sqrt(|k|^2 + nu^2)``.

    ``k`` may be a scalar, a 1-d array of scalar momenta, or an array whose
    last axis holds the components of a d-dimensional momentum when
    ``np.ndim(k) >= 2``.
    """
    k = np.asarray(k, dtype=float)
    k2 = np.sum(k * k, axis=-1) if k.ndim >= 2 else k * k
    out = np.sqrt(k2 + disp.nu ** 2)
    return float(out) if out.ndim == 0 else out


@dataclass(frozen=True)
class FormFactor:
    """Real, even momentum-space charge distribution.

    Defaults to the Gaussian ``g * exp(-k^2 / (2 Lambda^2))``. A tabulated
    form factor can be supplied as ``table=(k_values, values)``; it is
    linearly interpolated in ``|k|`` and scaled by ``coupling_g``.
    """

    coupling_g: float = 1.0
    cutoff_lambda: float = 1.0
    table: tuple | None = None

    def __post_init__(self):
        if self.cutoff_lambda <= 0:
            raise ValueError("cutoff_lambda must be > 0")

    def __call__(self, k: ArrayLike) -> np.ndarray:
        k = np.abs(np.asarray(k, dtype=float))
        if self.table is not None:
            kt, vt = (np.asarray(a, dtype=float) for a in self.table)
            return self.coupling_g * np.interp(k, kt, vt, right=0.0)
        return self.coupling_g * np.exp(-k * k / (2.0 * self.cutoff_lambda ** 2))


Quadrature = tuple  # (mode index, "c" | "s")


@dataclass(frozen=True)
class ModeSet:
    nu: float
    g: float
    cutoff_lambda: float
    n_modes: int
    k_max: float
    dim: int
    momenta: np.ndarray
    delta_k: float
    omegas: np.ndarray
    lambdas: np.ndarray
    form_values: np.ndarray
    quadratures: tuple = field(default=())

    def __post_init__(self):
        if not self.quadratures:
            quads = tuple((j, c) for j in range(self.n_modes) for c in ("c", "s"))
            object.__setattr__(self, "quadratures", quads)

    @property
    def variances(self) -> np.ndarray:
        return np.full(self.n_modes, STATIONARY_VARIANCE)

    @property
    def mask(self) -> np.ndarray:
        """Boolean array (n_modes, 2): which (cos, sin) quadratures are retained."""
        m = np.zeros((self.n_modes, 2), dtype=bool)
        for j, c in self.quadratures:
            m[j, 0 if c == "c" else 1] = True
        return m

    @property
    def n_quadratures(self) -> int:
        return len(self.quadratures)

    def truncated(self, quadratures: Sequence[Quadrature]) -> "ModeSet":
        """Copy retaining only the listed quadratures (order is preserved)."""
        quads = tuple((int(j), str(c)) for j, c in quadratures)
        for j, c in quads:
            if not (0 <= j < self.n_modes) or c not in ("c", "s"):
                raise ValueError(f"invalid quadrature {(j, c)!r}")
        if len(set(quads)) != len(quads):
            raise ValueError("duplicate quadratures")
        return replace(self, quadratures=quads)

    def quadrature_arrays(self):
        """Per retained quadrature: (mode index, is_cos, lambda, omega, k)."""
        idx = np.array([j for j, _ in self.quadratures], dtype=int)
        is_cos = np.array([c == "c" for _, c in self.quadratures], dtype=bool)
        return idx, is_cos, self.lambdas[idx], self.omegas[idx], self.momenta[idx]

    def to_dict(self) -> dict:
        return {
            "nu": self.nu,
            "g": self.g,
            "lambda_cutoff": self.cutoff_lambda,
            "n_modes": self.n_modes,
            "k_max": self.k_max,
            "dim": self.dim,
            "delta_k": self.delta_k,
            "momenta": self.momenta.tolist(),
            "omegas": self.omegas.tolist(),
            "lambdas": self.lambdas.tolist(),
            "form_values": self.form_values.tolist(),
            "quadratures": [list(q) for q in self.quadratures],
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "ModeSet":
        d = json.loads(text)
        return cls(
            nu=d["nu"],
            g=d["g"],
            cutoff_lambda=d["lambda_cutoff"],
            n_modes=d["n_modes"],
            k_max=d["k_max"],
            dim=d["dim"],
            momenta=np.asarray(d["momenta"]),
            delta_k=d["delta_k"],
            omegas=np.asarray(d["omegas"]),
            lambdas=np.asarray(d["lambdas"]),
            form_values=np.asarray(d["form_values"]),
            quadratures=tuple((int(j), str(c)) for j, c in d["quadratures"]),
        )


def quadrature_checks(momenta, delta_k, disp: Dispersion, ff: FormFactor) -> dict:
    """Mode quadratures of |phi|^2/omega, |phi|^2/omega^2, |phi|^2/omega^3."""
    w = omega(momenta, disp)
    phi2 = ff(momenta) ** 2
    with np.errstate(divide="ignore", invalid="ignore"):
        return {
            "phi2_over_omega": float(np.sum(delta_k * phi2 / w)),
            "phi2_over_omega2": float(np.sum(delta_k * phi2 / w ** 2)),
            "phi2_over_omega3": float(np.sum(delta_k * phi2 / w ** 3)),
        }


def build_mode_set(
    n_modes: int,
    k_max: float,
    disp: Dispersion = Dispersion(),
    ff: FormFactor = FormFactor(),
    dim: int = 1,
    include_zero: bool = False,
) -> ModeSet:
    """Mode set on k_j = j * dk, j = 1..n (or j = 0..n-1 with ``include_zero``)."""
    if n_modes < 1:
        raise ModeSetError("n_modes must be >= 1")
    if not k_max > 0:
        raise ModeSetError("k_max must be > 0")
    if dim != 1:
        raise NotImplementedError("only d = 1 mode sets are supported")
    dk = k_max / n_modes
    k = dk * (np.arange(n_modes) if include_zero else np.arange(1, n_modes + 1))
    w = np.asarray(omega(k, disp), dtype=float)
    if np.any(w <= 0):
        raise ModeSetError("omega(k_j) = 0: infrared singular configuration")
    checks = quadrature_checks(k, dk, disp, ff)
    for name, val in checks.items():
        if not np.isfinite(val):
            raise ModeSetError(f"quadrature check {name} diverges")
    phi = np.asarray(ff(k), dtype=float)
    lam = np.sqrt(dk) * phi / np.sqrt(w)
    if not np.all(np.isfinite(lam)):
        raise ModeSetError("non-finite mode couplings")
    return ModeSet(
        nu=disp.nu,
        g=ff.coupling_g,
        cutoff_lambda=ff.cutoff_lambda,
        n_modes=n_modes,
        k_max=k_max,
        dim=dim,
        momenta=k,
        delta_k=dk,
        omegas=w,
        lambdas=lam,
        form_values=phi,
    )


@dataclass(frozen=True)
class FieldState:
    """Cosine and sine quadratures; the last axis indexes modes.

    Leading axes are batch axes, so one FieldState may hold many samples.
    """

    xi_c: np.ndarray
    xi_s: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "xi_c", np.asarray(self.xi_c, dtype=float))
        object.__setattr__(self, "xi_s", np.asarray(self.xi_s, dtype=float))
        if self.xi_c.shape != self.xi_s.shape:
            raise ValueError("xi_c and xi_s must have equal shapes")

    def __mul__(self, alpha: float) -> "FieldState":
        return FieldState(alpha * self.xi_c, alpha * self.xi_s)

    __rmul__ = __mul__

    @classmethod
    def zeros(cls, n_modes: int) -> "FieldState":
        return cls(np.zeros(n_modes), np.zeros(n_modes))

    def quadrature_values(self, ms: ModeSet) -> np.ndarray:
        """Values of the retained quadratures in ``ms.quadratures`` order."""
        idx, is_cos, *_ = ms.quadrature_arrays()
        return np.where(is_cos, self.xi_c[..., idx], self.xi_s[..., idx])


def stationary_sample(ms: ModeSet, rng: np.random.Generator, size=None) -> FieldState:
    shape = (ms.n_modes,) if size is None else tuple(np.atleast_1d(size)) + (ms.n_modes,)
    sd = np.sqrt(ms.variances)
    return FieldState(sd * rng.standard_normal(shape), sd * rng.standard_normal(shape))


def ou_step(state: FieldState, dt: float, ms: ModeSet, rng: np.random.Generator) -> FieldState:
    """Exact OU transition over ``dt`` for every quadrature."""
    if dt < 0:
        raise ValueError("dt must be >= 0")
    if dt == 0:
        return state
    decay = np.exp(-ms.omegas * dt)
    sd = np.sqrt(ms.variances * (1.0 - decay ** 2))
    shape = state.xi_c.shape
    return FieldState(
        decay * state.xi_c + sd * rng.standard_normal(shape),
        decay * state.xi_s + sd * rng.standard_normal(shape),
    )


def _tabulate(f_hat: Tabulated, ms: ModeSet) -> np.ndarray:
    if callable(f_hat):
        vals = np.asarray(f_hat(ms.momenta), dtype=float)
    else:
        vals = np.asarray(f_hat, dtype=float)
    return np.broadcast_to(vals, (ms.n_modes,)).astype(float)


def pair(state: FieldState, test_fn_hat: Tabulated, ms: ModeSet, shift: ArrayLike = 0.0) -> np.ndarray:
    """Mode approximation of xi(f(. - shift)) for a real even test function.

    ``test_fn_hat`` is either a callable of |k| or an array of values at the
    mode momenta. ``shift`` broadcasts against the batch shape of ``state``.
    """
    f = _tabulate(test_fn_hat, ms)
    m = ms.mask
    coef = np.sqrt(ms.delta_k / ms.omegas) * f
    kx = np.multiply.outer(np.asarray(shift, dtype=float), ms.momenta)
    c = coef * m[:, 0] * np.cos(kx)
    s = coef * m[:, 1] * np.sin(kx)
    out = np.sum(c * state.xi_c + s * state.xi_s, axis=-1)
    return out if np.ndim(out) else float(out)


def smeared_field(state: FieldState, h_hat: Tabulated, ms: ModeSet, shift: ArrayLike = 0.0):
    """Field operator in the Fock normalisation, ``pair(state, sqrt(omega) h)``."""
    h = _tabulate(h_hat, ms)
    return pair(state, np.sqrt(ms.omegas) * h, ms, shift)


def smeared_field_coefficients(h_hat: Tabulated, ms: ModeSet) -> np.ndarray:
    """Coefficients c_i with smeared_field(h) = sum_i c_i q_i at shift 0.

    Indexed like ``ms.quadratures``; sine quadratures get zero.
    """
    h = _tabulate(h_hat, ms)
    idx, is_cos, *_ = ms.quadrature_arrays()
    return np.where(is_cos, np.sqrt(ms.delta_k) * h[idx], 0.0)


def sqrt_omega_norm2(h_hat: Tabulated, ms: ModeSet) -> float:
    """Mode quadrature of ||sqrt(omega) h||^2 over the retained cosine quadratures."""
    h = _tabulate(h_hat, ms)
    keep = ms.mask[:, 0]
    return float(np.sum(ms.delta_k * ms.omegas * h ** 2 * keep))


def interaction_value(state: FieldState, x: ArrayLike, ms: ModeSet):
    """sum_j lambda_j (cos(k_j x) xi_c[j] + sin(k_j x) xi_s[j]) over retained quadratures."""
    return pair(state, ms.form_values, ms, shift=x)


def interaction_bound(state: FieldState, ms: ModeSet):
    m = ms.mask
    return np.sum(ms.lambdas * (m[:, 0] * np.abs(state.xi_c) + m[:, 1] * np.abs(state.xi_s)), axis=-1)


def covariance_exact(f_hat: Tabulated, g_hat: Tabulated, lag: float, ms: ModeSet) -> float:
    """sum_j dk f_hat(k_j) g_hat(k_j) exp(-|lag| omega_j) / (2 omega_j).

    Only modes whose cosine quadrature is retained contribute (real even test
    functions pair with cosine quadratures only).
    """
    f = _tabulate(f_hat, ms)
    g = _tabulate(g_hat, ms)
    keep = ms.mask[:, 0]
    terms = ms.delta_k * f * g * np.exp(-abs(lag) * ms.omegas) / (2.0 * ms.omegas)
    return float(np.sum(terms * keep))


def interaction_variance(ms: ModeSet, x: float = 0.0) -> float:
    """Stationary variance of interaction_value at position ``x``.

    Independent of ``x`` when both quadratures of every mode are retained.
    """
    m = ms.mask
    kx = ms.momenta * x
    per_mode = ms.lambdas ** 2 * ms.variances
    return float(np.sum(per_mode * (m[:, 0] * np.cos(kx) ** 2 + m[:, 1] * np.sin(kx) ** 2)))


@dataclass(frozen=True)
class FieldPath:
    times: np.ndarray
    states: FieldState  # leading axes: (time, ...) on both arrays

    def __post_init__(self):
        t = np.asarray(self.times, dtype=float)
        object.__setattr__(self, "times", t)
        if self.states.xi_c.shape[0] != t.shape[0]:
            raise ValueError("times and states have different lengths")
        if np.any(np.diff(t) <= 0):
            raise ValueError("times must be strictly increasing")

    def to_csv(self, path) -> None:
        n = self.states.xi_c.shape[-1]
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["time"] + [f"xi_c[{j}]" for j in range(n)] + [f"xi_s[{j}]" for j in range(n)])
            for i, t in enumerate(self.times):
                w.writerow([repr(float(t))] + [repr(float(v)) for v in self.states.xi_c[i]]
                           + [repr(float(v)) for v in self.states.xi_s[i]])


def sample_field_path(
    ms: ModeSet,
    times: np.ndarray,
    rng: np.random.Generator,
    start: FieldState | None = None,
    size=None,
) -> FieldPath:
    """OU path on the given time grid; stationary start unless ``start`` is given.

    With ``size`` the path is batched: states have shape (n_times, size, n_modes).
    """
    times = np.asarray(times, dtype=float)
    state = stationary_sample(ms, rng, size) if start is None else start
    xs_c = np.empty((len(times),) + state.xi_c.shape)
    xs_s = np.empty_like(xs_c)
    xs_c[0], xs_s[0] = state.xi_c, state.xi_s
    for i in range(1, len(times)):
        state = ou_step(state, times[i] - times[i - 1], ms, rng)
        xs_c[i], xs_s[i] = state.xi_c, state.xi_s
    return FieldPath(times, FieldState(xs_c, xs_s))


def empirical_covariance(ms: ModeSet, f_hat: Tabulated, lags, n_samples: int, rng: np.random.Generator) -> list:
    """Monte Carlo Cov(pair(xi_0, f), pair(xi_lag, f)) with the exact value alongside.

    Every lag uses fresh stationary starts, so the rows are independent.
    Returns dicts with keys lag, empirical, stderr, exact.
    """
    rows = []
    for lag in lags:
        x0 = stationary_sample(ms, rng, n_samples)
        x1 = ou_step(x0, lag, ms, rng) if lag > 0 else x0
        prod = pair(x0, f_hat, ms) * pair(x1, f_hat, ms)
        rows.append({
            "lag": float(lag),
            "empirical": float(prod.mean()),
            "stderr": float(prod.std(ddof=1) / np.sqrt(n_samples)),
            "exact": covariance_exact(f_hat, f_hat, lag, ms),
        })
    return rows
