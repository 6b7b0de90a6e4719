"""Ground-state process sampled as a continuous-time Markov chain.

The chain lives on the grid index set of a discretised model and is driven by
the h-transformed operator ``L = (1/phi)(H - E)phi`` from
:func:`nelsonsim.operators.h_transform`. Conventions follow that function:
``L`` has zero row sums, off-diagonal entries ``<= 0`` and the jump rate
a -> b is ``-L[a, b]``; the Markov generator is therefore ``-L``.

Two samplers are provided. :func:`ctmc_sample` records one full path.
:func:`simulate_ensemble` advances many paths in lock-step with numpy and
keeps only what the harnesses need: states at fixed checkpoints and exact
time integrals of tabulated functions (paths are piecewise constant, so the
integral is a finite sum of holding time times value).
"""

from __future__ import annotations

import csv
import json
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla
from scipy import stats

from .operators import GroundState


class RateOverflowError(RuntimeError):
    """A state's total exit rate exceeds the configured guard."""


@dataclass(frozen=True)
class StationaryLaw:
    weights: np.ndarray

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=float)
        if w.ndim != 1 or np.any(w < 0) or not np.isfinite(w).all():
            raise ValueError("weights must be a finite nonnegative vector")
        s = w.sum()
        if not s > 0:
            raise ValueError("weights sum to zero")
        object.__setattr__(self, "weights", w / s)

    @classmethod
    def from_ground_state(cls, gs: GroundState) -> "StationaryLaw":
        # flat coordinates already carry the grid weight: |u|^2 = phi^2 * weight
        return cls(gs.vector ** 2)

    @property
    def n_states(self) -> int:
        return self.weights.size

    def expectation(self, f: np.ndarray) -> float:
        return float(self.weights @ f)


def stationary_start(law: StationaryLaw, rng: np.random.Generator, size=None):
    cdf = np.cumsum(law.weights)
    u = rng.random(size)
    idx = np.searchsorted(cdf, u * cdf[-1], side="right")
    idx = np.minimum(idx, law.n_states - 1)
    return int(idx) if size is None else idx


# --- jump tables ----------------------------------------------------------------

@dataclass(frozen=True)
class JumpTable:
    """Padded per-state neighbour lists with cumulative jump probabilities."""

    exit_rates: np.ndarray
    neighbors: np.ndarray
    cum_probs: np.ndarray

    @classmethod
    def from_generator(cls, L: sp.spmatrix, max_rate: float = np.inf) -> "JumpTable":
        L = sp.csr_matrix(L)
        n = L.shape[0]
        A = (-L).tolil()
        A.setdiag(0.0)
        A = A.tocsr()
        A.eliminate_zeros()
        if A.nnz and A.data.min() < 0:
            raise ValueError("generator has positive off-diagonal entries")
        rates = np.asarray(A.sum(axis=1)).ravel()
        if np.any(rates > max_rate):
            raise RateOverflowError(f"max exit rate {rates.max():.3e} exceeds guard {max_rate:.3e}")
        counts = np.diff(A.indptr)
        width = max(int(counts.max()), 1)
        nb = np.zeros((n, width), dtype=np.int64)
        cp = np.ones((n, width))
        for a in range(n):
            lo, hi = A.indptr[a], A.indptr[a + 1]
            k = hi - lo
            if k == 0:
                nb[a] = a
                continue
            nb[a, :k] = A.indices[lo:hi]
            nb[a, k:] = A.indices[hi - 1]
            cp[a, :k] = np.cumsum(A.data[lo:hi]) / rates[a]
        cp[:, -1] = 1.0
        return cls(rates, nb, cp)

    def jump(self, states: np.ndarray, rng: np.random.Generator) -> np.ndarray:
        u = rng.random(states.shape)
        k = (self.cum_probs[states] <= u[:, None]).sum(axis=1)
        k = np.minimum(k, self.neighbors.shape[1] - 1)
        return self.neighbors[states, k]


# --- single paths -----------------------------------------------------------------

@dataclass
class PPhiPath:
    jump_times: np.ndarray
    states: np.ndarray
    T: float

    def __post_init__(self):
        self.jump_times = np.asarray(self.jump_times, dtype=float)
        self.states = np.asarray(self.states, dtype=np.int64)
        if len(self.states) != len(self.jump_times) + 1:
            raise ValueError("need one more state than jump times")
        if np.any(np.diff(self.jump_times) < 0) or (len(self.jump_times) and
                                                    (self.jump_times[0] < 0 or self.jump_times[-1] > self.T)):
            raise ValueError("jump times must increase within [0, T]")

    @property
    def start(self) -> int:
        return int(self.states[0])

    @property
    def n_jumps(self) -> int:
        return len(self.jump_times)

    def state_at(self, t) -> np.ndarray:
        """State index at time(s) t (right-continuous)."""
        return self.states[np.searchsorted(self.jump_times, t, side="right")]

    def integral(self, g: np.ndarray, t: float) -> float:
        """Exact int_0^t g(X_s) ds."""
        edges = np.concatenate([[0.0], self.jump_times[self.jump_times < t], [t]])
        segs = self.states[: len(edges) - 1]
        return float(np.sum(g[segs] * np.diff(edges)))

    def to_csv(self, path, coords: np.ndarray | None = None) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            ncol = 0 if coords is None else coords.shape[1]
            head = ["jump_time", "state_index"]
            if ncol:
                head += ["x"] + [f"q_{i}" for i in range(1, ncol)]
            w.writerow(head)
            times = np.concatenate([[0.0], self.jump_times])
            for t, s in zip(times, self.states):
                row = [repr(float(t)), int(s)]
                if ncol:
                    row += [repr(float(c)) for c in coords[s]]
                w.writerow(row)


def ctmc_sample(L: sp.spmatrix | JumpTable, start: int, T: float, rng: np.random.Generator,
                max_rate: float = 1e8) -> PPhiPath:
    """Jump-chain simulation with exponential holding times on [0, T]."""
    table = L if isinstance(L, JumpTable) else JumpTable.from_generator(L, max_rate)
    s = int(start)
    t = 0.0
    times, states = [], [s]
    while True:
        r = table.exit_rates[s]
        if r <= 0:
            break
        t += rng.exponential(1.0 / r)
        if t > T:
            break
        s = int(table.jump(np.array([s]), rng)[0])
        times.append(t)
        states.append(s)
    return PPhiPath(np.array(times), np.array(states), T)


# --- ensembles ---------------------------------------------------------------------

@dataclass
class Ensemble:
    """Many paths observed at common checkpoints.

    ``states`` has shape (n_checkpoints, n_paths); ``integrals`` has shape
    (n_integrands, n_checkpoints, n_paths) and holds int_0^{t_c} g(X_s) ds.
    """

    checkpoints: np.ndarray
    states: np.ndarray
    integrals: np.ndarray
    n_jumps: np.ndarray
    starts: np.ndarray

    @property
    def n_paths(self) -> int:
        return self.states.shape[1]

    @staticmethod
    def concatenate(parts) -> "Ensemble":
        parts = list(parts)
        return Ensemble(
            parts[0].checkpoints,
            np.concatenate([p.states for p in parts], axis=1),
            np.concatenate([p.integrals for p in parts], axis=2),
            np.concatenate([p.n_jumps for p in parts]),
            np.concatenate([p.starts for p in parts]),
        )


def simulate_ensemble(table: JumpTable, starts: np.ndarray, checkpoints, rng: np.random.Generator,
                      integrands: np.ndarray | None = None) -> Ensemble:
    """Advance all paths jump by jump and record at sorted ``checkpoints``.

    The horizon is the last checkpoint. ``integrands`` is an array
    (n_integrands, n_states) of functions integrated exactly along each path.
    """
    ck = np.asarray(checkpoints, dtype=float)
    if ck.ndim != 1 or np.any(np.diff(ck) < 0) or ck[0] < 0:
        raise ValueError("checkpoints must be sorted and nonnegative")
    starts = np.asarray(starts, dtype=np.int64)
    n = starts.size
    G = np.zeros((0, table.exit_rates.size)) if integrands is None else np.atleast_2d(integrands)
    n_g = G.shape[0]
    n_ck = ck.size
    out_states = np.empty((n_ck, n), dtype=np.int64)
    out_int = np.empty((n_g, n_ck, n))
    n_jumps = np.zeros(n, dtype=np.int64)

    state = starts.copy()
    t = np.zeros(n)
    acc = np.zeros((n_g, n))
    ptr = np.zeros(n, dtype=np.int64)
    active = np.arange(n)
    while active.size:
        s = state[active]
        rate = table.exit_rates[s]
        with np.errstate(divide="ignore"):
            hold = rng.exponential(1.0, size=active.size) / rate
        t_next = t[active] + hold
        # record every checkpoint passed during this holding interval
        while True:
            p = ptr[active]
            pending = p < n_ck
            hit = pending.copy()
            hit[pending] = ck[p[pending]] < t_next[pending]
            if not hit.any():
                break
            idx = active[hit]
            c = ck[ptr[idx]]
            out_states[ptr[idx], idx] = state[idx]
            if n_g:
                out_int[:, ptr[idx], idx] = acc[:, idx] + G[:, state[idx]] * (c - t[idx])
            ptr[idx] += 1
        done = ptr[active] >= n_ck
        live = ~done
        idx = active[live]
        if idx.size:
            if n_g:
                acc[:, idx] += G[:, state[idx]] * hold[live]
            t[idx] = t_next[live]
            state[idx] = table.jump(state[idx], rng)
            n_jumps[idx] += 1
        active = idx
    return Ensemble(ck, out_states, out_int, n_jumps, starts)


def block_generators(master_seed: int, stream: int, n_blocks: int):
    """Independent generators keyed by (seed, stream, block) counters."""
    return [np.random.default_rng([int(master_seed), int(stream), b]) for b in range(n_blocks)]


def stationary_ensemble(table: JumpTable, law: StationaryLaw, checkpoints, n_paths: int, master_seed: int,
                        stream: int = 0, integrands=None, block_size: int = 2500, starts=None,
                        workers: int = 1) -> Ensemble:
    """Ensemble in fixed-size replica blocks, each with its own counter-derived stream.

    With ``starts`` given (an int or an array) the paths start there instead
    of at stationary draws. Blocks may run on a thread pool; the result only
    depends on ``block_size``, never on ``workers``.
    """
    n_blocks = -(-n_paths // block_size)
    rngs = block_generators(master_seed, stream, n_blocks)

    def run_block(b):
        rng = rngs[b]
        m = min(block_size, n_paths - b * block_size)
        if starts is None:
            s0 = stationary_start(law, rng, size=m)
        else:
            s0 = np.broadcast_to(np.asarray(starts), (n_paths,))[b * block_size: b * block_size + m]
        return simulate_ensemble(table, s0, checkpoints, rng, integrands)

    if workers > 1 and n_blocks > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            parts = list(pool.map(run_block, range(n_blocks)))
    else:
        parts = [run_block(b) for b in range(n_blocks)]
    return Ensemble.concatenate(parts)


# --- distributional checks ------------------------------------------------------------

@dataclass
class TestReport:
    statistic: str
    z_or_p: float
    n_samples: int
    verdict: bool
    details: dict = field(default_factory=dict)

    __test__ = False  # not a pytest class

    def to_json(self) -> str:
        return json.dumps(asdict(self), sort_keys=True, default=float)


def _zscore(samples: np.ndarray, target: float) -> float:
    se = samples.std(ddof=1) / np.sqrt(samples.size)
    diff = samples.mean() - target
    if se == 0:
        return 0.0 if abs(diff) < 1e-12 else float(np.sign(diff) * np.inf)
    return float(diff / se)


def semigroup_product(L: sp.spmatrix, law: StationaryLaw, times, functions) -> float:
    """<f_0, e^{-(t_1-t_0)L} f_1 ... e^{-(t_n-t_{n-1})L} f_n> in L^2(law)."""
    times = np.asarray(times, dtype=float)
    v = np.asarray(functions[-1], dtype=float)
    for j in range(len(times) - 2, -1, -1):
        dt = times[j + 1] - times[j]
        if dt > 0:
            v = spla.expm_multiply(-dt * sp.csr_matrix(L), v)
        v = np.asarray(functions[j], dtype=float) * v
    return float(law.weights @ v)


def finite_dim_check(L, law: StationaryLaw, times, functions, n_samples: int, master_seed: int,
                     stream: int = 0, table: JumpTable | None = None) -> TestReport:
    """MC E[prod_j f_j(X_{t_j})] under a stationary start vs the semigroup product."""
    times = np.asarray(times, dtype=float)
    table = JumpTable.from_generator(L) if table is None else table
    shift = times[0]
    ens = stationary_ensemble(table, law, times - shift, n_samples, master_seed, stream)
    prod = np.ones(n_samples)
    for j, f in enumerate(functions):
        prod *= np.asarray(f)[ens.states[j]]
    exact = semigroup_product(L, law, times, functions)
    z = _zscore(prod, exact)
    return TestReport("finite_dim_z", z, n_samples, bool(abs(z) < 3),
                      {"mc": float(prod.mean()), "exact": exact, "times": times.tolist()})


def two_sided_pphi1(L, law: StationaryLaw, T: float, rng: np.random.Generator, start: int | None = None):
    """Forward and backward paths from one common start (stationary unless given)."""
    table = L if isinstance(L, JumpTable) else JumpTable.from_generator(L)
    s0 = stationary_start(law, rng) if start is None else int(start)
    return ctmc_sample(table, s0, T, rng), ctmc_sample(table, s0, T, rng)


def two_sided_ensemble(table: JumpTable, law: StationaryLaw, checkpoints, n_paths: int, master_seed: int,
                       stream: int = 0, start: int | None = None):
    """States at +checkpoints and -checkpoints for ``n_paths`` two-sided paths."""
    rng = np.random.default_rng([int(master_seed), int(stream), 0])
    s0 = stationary_start(law, rng, size=n_paths) if start is None else np.full(n_paths, int(start))
    fwd = simulate_ensemble(table, s0, checkpoints, np.random.default_rng([int(master_seed), int(stream), 1]))
    bwd = simulate_ensemble(table, s0, checkpoints, np.random.default_rng([int(master_seed), int(stream), 2]))
    return fwd, bwd


def reversibility_check(L, law: StationaryLaw, t: float, f: np.ndarray, g: np.ndarray, n_samples: int,
                        master_seed: int, stream: int = 0, table: JumpTable | None = None) -> TestReport:
    """Paired comparison of E[f(X_0)g(X_t)] and E[g(X_0)f(X_t)]."""
    table = JumpTable.from_generator(L) if table is None else table
    ens = stationary_ensemble(table, law, [0.0, t], n_samples, master_seed, stream)
    a, b = ens.states
    d = f[a] * g[b] - g[a] * f[b]
    z = _zscore(d, 0.0)
    return TestReport("reversibility_z", z, n_samples, bool(abs(z) < 3),
                      {"forward": float(np.mean(f[a] * g[b])), "backward": float(np.mean(g[a] * f[b]))})


def cycle_generator(n: int = 3, forward: float = 2.0, backward: float = 0.5) -> sp.csr_matrix:
    """Non-reversible generator on a ring with uniform stationary law."""
    L = np.zeros((n, n))
    for a in range(n):
        L[a, (a + 1) % n] -= forward
        L[a, (a - 1) % n] -= backward
        L[a, a] = forward + backward
    return sp.csr_matrix(L)


def chi2_against_law(samples: np.ndarray, probs: np.ndarray, min_expected: float = 5.0) -> float:
    """p-value of a chi-square goodness-of-fit test, pooling sparse cells."""
    probs = np.asarray(probs, dtype=float)
    probs = probs / probs.sum()
    counts = np.bincount(samples, minlength=probs.size).astype(float)
    n = counts.sum()
    order = np.argsort(probs)
    obs, exp = [], []
    co = ce = 0.0
    for i in order:
        co += counts[i]
        ce += probs[i] * n
        if ce >= min_expected:
            obs.append(co)
            exp.append(ce)
            co = ce = 0.0
    if ce > 0 and exp:
        obs[-1] += co
        exp[-1] += ce
    if len(exp) < 2:
        return 1.0
    return float(stats.chisquare(obs, exp).pvalue)


def bin_states(states: np.ndarray, coord: np.ndarray, edges: np.ndarray) -> np.ndarray:
    return np.clip(np.searchsorted(edges, coord[states], side="right") - 1, 0, len(edges) - 2)


def expected_jump_rate(L, law: StationaryLaw) -> float:
    """E_law[-L(a, a)], the stationary mean number of jumps per unit time."""
    return float(law.weights @ sp.csr_matrix(L).diagonal())


# --- path diagnostics -----------------------------------------------------------------

def jump_sizes(path: PPhiPath, x: np.ndarray) -> np.ndarray:
    """Absolute particle displacement at each jump of the path."""
    return np.abs(np.diff(x[path.states]))


def jump_size_histogram(L, law: StationaryLaw, x: np.ndarray, bins) -> tuple[np.ndarray, np.ndarray]:
    """Stationary flux of particle jumps binned by |x_b - x_a| (exact, from L)."""
    A = sp.coo_matrix(L)
    off = A.row != A.col
    flux = -A.data[off] * law.weights[A.row[off]]
    size = np.abs(x[A.col[off]] - x[A.row[off]])
    moving = size > 0
    hist, edges = np.histogram(size[moving], bins=bins, weights=flux[moving])
    return hist, edges


def fourth_moment_displacement(ens: Ensemble, coords: np.ndarray) -> dict:
    """E||X_t - X_0||^4 per checkpoint and the fitted constant D of E <= D t^2.

    ``ens`` must have its first checkpoint at 0.
    """
    if ens.checkpoints[0] != 0:
        raise ValueError("first checkpoint must be 0")
    base = coords[ens.states[0]]
    lags, moments, errs = [], [], []
    for c in range(1, len(ens.checkpoints)):
        d = np.linalg.norm(coords[ens.states[c]] - base, axis=-1) ** 4
        lags.append(float(ens.checkpoints[c]))
        moments.append(float(d.mean()))
        errs.append(float(d.std(ddof=1) / np.sqrt(d.size)))
    lags = np.array(lags)
    moments = np.array(moments)
    return {"lags": lags.tolist(), "moments": moments.tolist(), "stderr": errs,
            "D": float(np.max(moments / lags ** 2))}


def ensemble_to_csv(ens: Ensemble, path, coords: np.ndarray | None = None) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["checkpoint", "path", "state_index"] + ([] if coords is None else ["x"]))
        for c, t in enumerate(ens.checkpoints):
            for p in range(ens.n_paths):
                s = int(ens.states[c, p])
                row = [repr(float(t)), p, s]
                if coords is not None:
                    row.append(repr(float(coords[s, 0])))
                w.writerow(row)
