"""Martingale and functional CLT harness for the ground-state chain.

For a grid function f the Dynkin martingale is

    M_t = f(X_t) - f(X_0) + L_t,    L_t = int_0^t (L f)(X_s) ds,

with ``L`` the positive h-transformed operator (see :mod:`nelsonsim.pphi1`).
Both pieces are exact on CTMC paths. Under a stationary start
``E[M_t^2] / t = 2 <f, L f>_m`` for every t, which is what
:func:`variance_estimate` measures.
"""

from __future__ import annotations

import csv
import warnings
from dataclasses import asdict, dataclass, field

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla
from scipy import stats

from .operators import GroundState
from .pphi1 import Ensemble, JumpTable, PPhiPath, StationaryLaw, TestReport, stationary_ensemble


@dataclass
class MartingaleTrace:
    checkpoint_times: np.ndarray
    M_values: np.ndarray
    L_values: np.ndarray
    f_id: str = ""


def martingale_trace(path: PPhiPath, f: np.ndarray, L: sp.spmatrix, checkpoints, f_id: str = "",
                     compensate: bool = True) -> MartingaleTrace:
    """Exact M_t and L_t of one path at the given checkpoints."""
    ck = np.asarray(checkpoints, dtype=float)
    if np.any(ck < 0) or np.any(ck > path.T):
        raise ValueError("checkpoints must lie in [0, T]")
    Lf = np.asarray(sp.csr_matrix(L) @ f)
    Lt = np.array([path.integral(Lf, t) for t in ck]) if compensate else np.zeros(ck.size)
    Mt = f[path.state_at(ck)] - f[path.start] + Lt
    return MartingaleTrace(ck, Mt, Lt, f_id)


@dataclass
class TraceEnsemble:
    """M and L for many paths; arrays have shape (n_checkpoints, n_paths)."""

    checkpoints: np.ndarray
    M: np.ndarray
    Lt: np.ndarray
    states: np.ndarray
    f_id: str = ""

    @property
    def n_paths(self) -> int:
        return self.M.shape[1]

    def index_of(self, t: float) -> int:
        i = int(np.argmin(np.abs(self.checkpoints - t)))
        if not np.isclose(self.checkpoints[i], t):
            raise ValueError(f"{t} is not a checkpoint")
        return i

    def trace(self, p: int) -> MartingaleTrace:
        return MartingaleTrace(self.checkpoints, self.M[:, p], self.Lt[:, p], self.f_id)


def traces_from_ensemble(ens: Ensemble, f: np.ndarray, row: int | None, f_id: str = "") -> TraceEnsemble:
    """Assemble M and L from an ensemble whose integrand ``row`` is L f.

    ``row=None`` drops the compensator (a deliberately wrong negative control).
    """
    Lt = np.zeros(ens.states.shape) if row is None else ens.integrals[row]
    M = f[ens.states] - f[ens.starts][None, :] + Lt
    return TraceEnsemble(ens.checkpoints, M, Lt, ens.states, f_id)


def build_traces(table: JumpTable, law: StationaryLaw, L: sp.spmatrix, functions: dict, checkpoints,
                 n_paths: int, master_seed: int, stream: int = 0, compensate: bool = True,
                 block_size: int = 2500, workers: int = 1) -> dict:
    """Simulate one stationary ensemble and return a TraceEnsemble per function."""
    L = sp.csr_matrix(L)
    names = list(functions)
    integrands = np.vstack([L @ np.asarray(functions[k], float) for k in names])
    ens = stationary_ensemble(table, law, checkpoints, n_paths, master_seed, stream, integrands, block_size,
                              workers=workers)
    return {k: traces_from_ensemble(ens, np.asarray(functions[k], float), i if compensate else None, k)
            for i, k in enumerate(names)}


def _z(samples: np.ndarray) -> float:
    se = samples.std(ddof=1) / np.sqrt(samples.size)
    m = samples.mean()
    if se == 0:
        return 0.0 if abs(m) < 1e-12 else float(np.sign(m) * np.inf)
    return float(m / se)


def default_probes(x: np.ndarray, xi: np.ndarray | None, law: StationaryLaw) -> dict:
    """{1, x, x^2, xi(h), sign(x - median)} as grid functions."""
    cdf = np.cumsum(law.weights[np.argsort(x, kind="stable")])
    median = np.sort(x, kind="stable")[np.searchsorted(cdf, 0.5)]
    probes = {"one": np.ones_like(x), "x": x, "x2": x * x, "sign": np.sign(x - median)}
    if xi is not None:
        probes["xi_h"] = xi
    return probes


def martingale_test(traces: TraceEnsemble, s: float, t: float, probes: dict, include_mean: bool = True,
                    include_M_probe: bool = True) -> TestReport:
    """Orthogonality E[(M_t - M_s) h(X_s)] = 0 for each probe; max |z| < 3 passes.

    With ``include_mean`` the check E[M_t] = 0 is added; with
    ``include_M_probe`` the probe h = M_s is added.
    """
    if traces.n_paths < 1000:
        raise ValueError("martingale_test needs at least 1000 traces")
    i, j = traces.index_of(s), traces.index_of(t)
    inc = traces.M[j] - traces.M[i]
    zs = {name: _z(inc * np.asarray(h)[traces.states[i]]) for name, h in probes.items()}
    if include_M_probe:
        zs["M_s"] = _z(inc * traces.M[i])
    if include_mean:
        zs["mean_M_t"] = _z(traces.M[j])
    zmax = float(max(abs(z) for z in zs.values()))
    return TestReport("martingale_max_abs_z", zmax, traces.n_paths, bool(zmax < 3), {"z": zs, "s": s, "t": t})


def stationary_increment_test(traces: TraceEnsemble, starts, lag: float) -> TestReport:
    """Var(M_{s+lag} - M_s) across starting times s; largest pairwise z."""
    sq = []
    for s in starts:
        d = traces.M[traces.index_of(s + lag)] - traces.M[traces.index_of(s)]
        sq.append(d * d)
    zs = []
    for a in range(len(sq)):
        for b in range(a + 1, len(sq)):
            diff = sq[a] - sq[b]
            zs.append(abs(_z(diff)))
    zmax = float(max(zs)) if zs else 0.0
    return TestReport("stationary_increments_max_abs_z", zmax, traces.n_paths, bool(zmax < 3),
                      {"variances": [float(v.mean()) for v in sq], "starts": list(starts), "lag": lag})


@dataclass
class VarianceEstimate:
    sigma2_hat: float
    std_error: float
    t_used: float
    prediction_dirichlet: float
    prediction_closed_form: float | None = None
    f_id: str = ""
    warnings: list = field(default_factory=list)

    def z_dirichlet(self) -> float:
        if self.std_error == 0:
            return 0.0 if abs(self.sigma2_hat - self.prediction_dirichlet) < 1e-12 else np.inf
        return (self.sigma2_hat - self.prediction_dirichlet) / self.std_error

    def rel_gap(self) -> float | None:
        if self.prediction_closed_form is None:
            return None
        return abs(self.prediction_dirichlet - self.prediction_closed_form) / abs(self.prediction_closed_form)


def spectral_gap(H: sp.spmatrix, gs: GroundState) -> float:
    """E_1 - E_0 of the discretised Hamiltonian."""
    H = sp.csr_matrix(H)
    if H.shape[0] <= 600:
        ev = np.linalg.eigvalsh(H.toarray())
        return float(ev[1] - ev[0])
    ev = spla.eigsh(H, k=2, sigma=gs.energy - 1e-3, which="LM", return_eigenvectors=False, v0=gs.vector)
    ev = np.sort(ev)
    return float(ev[1] - ev[0])


def variance_estimate(traces: TraceEnsemble, t: float, dirichlet: float, closed_form: float | None = None,
                      gap: float | None = None) -> VarianceEstimate:
    """(1/t) E[M_t^2] with its standard error and both predictions attached."""
    M = traces.M[traces.index_of(t)]
    sq = M * M / t
    notes = []
    if gap is not None and t < 5.0 / gap:
        msg = f"t={t} is shorter than 5/gap={5.0 / gap:.3g}"
        warnings.warn(msg)
        notes.append(msg)
    return VarianceEstimate(float(sq.mean()), float(sq.std(ddof=1) / np.sqrt(sq.size)), float(t),
                            float(dirichlet), None if closed_form is None else float(closed_form),
                            traces.f_id, notes)


def fclt_test(traces_by_scale: dict, sigma2: float, t_fixed: float = 1.0, alpha: float = 0.01) -> TestReport:
    """KS test of M_{s t}/sqrt(s) against N(0, sigma2 t) for every scale s.

    Each TraceEnsemble must contain the checkpoints s*t_fixed/2 and
    s*t_fixed. Only the largest scale decides the verdict; smaller scales are
    reported. Also reported per scale: the variance ratio between the two
    checkpoints (2 under linear growth) and the correlation z of the two
    disjoint half-window increments.
    """
    per_scale = {}
    for s in sorted(traces_by_scale):
        tr = traces_by_scale[s]
        full = tr.M[tr.index_of(s * t_fixed)] / np.sqrt(s)
        half = tr.M[tr.index_of(s * t_fixed / 2)] / np.sqrt(s)
        ks = stats.kstest(full, stats.norm(scale=np.sqrt(sigma2 * t_fixed)).cdf)
        second = full - half
        r = float(np.corrcoef(half, second)[0, 1])
        per_scale[s] = {
            "ks_statistic": float(ks.statistic),
            "ks_pvalue": float(ks.pvalue),
            "variance_ratio": float(np.var(full) / np.var(half)),
            "increment_corr": r,
            "increment_corr_z": r * np.sqrt(full.size),
        }
    s_max = max(per_scale)
    p = per_scale[s_max]["ks_pvalue"]
    return TestReport("fclt_ks_pvalue", p, traces_by_scale[s_max].n_paths, bool(p > alpha),
                      {"scales": {str(k): v for k, v in per_scale.items()}, "sigma2": sigma2})


def kv_residual(traces: TraceEnsemble, t_grid=None) -> dict:
    """(1/t) E|M_t - L_t|^2 on the checkpoints (or a subset ``t_grid``)."""
    ts = traces.checkpoints if t_grid is None else np.asarray(t_grid, float)
    ts = ts[ts > 0]
    vals, errs = [], []
    for t in ts:
        i = traces.index_of(t)
        d = (traces.M[i] - traces.Lt[i]) ** 2 / t
        vals.append(float(d.mean()))
        errs.append(float(d.std(ddof=1) / np.sqrt(d.size)))
    vals = np.array(vals)
    monotone = bool(np.all(np.diff(vals) <= 3 * np.array(errs)[1:]))
    return {"t": ts.tolist(), "residual": vals.tolist(), "stderr": errs, "monotone": monotone}


def variance_table_csv(rows, path) -> None:
    """Rows are VarianceEstimate objects; rel_gap compares Dirichlet with the closed form."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["f_id", "sigma2_hat", "stderr", "dirichlet", "closed_form", "rel_gap"])
        for r in rows:
            gap = r.rel_gap()
            w.writerow([r.f_id, repr(r.sigma2_hat), repr(r.std_error), repr(r.prediction_dirichlet),
                        "" if r.prediction_closed_form is None else repr(r.prediction_closed_form),
                        "" if gap is None else repr(gap)])


def variance_rows_dict(rows) -> list:
    return [asdict(r) for r in rows]
