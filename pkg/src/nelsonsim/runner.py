"""Named experiment pipelines and run manifests.

Every pipeline writes its numerical outputs (CSV/JSON) into one directory and
finishes with ``manifest.json``. Numerical files never contain timings, so
the manifest's ``numerical_hash`` is a pure function of the configuration and
seed. Random streams are derived from ``(master_seed, stream, block)``
counters; each pipeline step uses its own fixed stream id.
"""

from __future__ import annotations

import csv
import hashlib
import json
import logging
import time
from dataclasses import asdict
from pathlib import Path

import numpy as np
import scipy

from . import __version__
from .config import PIPELINES, ExperimentConfig, hard_failures, validate
from .feynman_kac import FKConfig, ProductState, fk_nelson_element, ground_energy_estimate, semigroup_matrix_element
from .fclt import (build_traces, default_probes, fclt_test, kv_residual, martingale_test, spectral_gap,
                   variance_estimate, variance_table_csv)
from .field_modes import empirical_covariance
from .operators import analytic_sigma2, dirichlet_form, ground_state, h_transform
from .particle_paths import ProcessKind, empirical_cf, kato_diagnostic
from .pphi1 import JumpTable, StationaryLaw, chi2_against_law, stationary_ensemble

log = logging.getLogger("nelsonsim")


class PipelineError(RuntimeError):
    pass


def _rng(cfg: ExperimentConfig, stream: int, block: int = 0) -> np.random.Generator:
    return np.random.default_rng([cfg.mc.master_seed, stream, block])


def _write_csv(path: Path, header, rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for r in rows:
            w.writerow([repr(v) if isinstance(v, float) else v for v in r])


def _write_json(path: Path, obj) -> None:
    path.write_text(json.dumps(obj, indent=2, sort_keys=True, default=_json_default) + "\n")


def _json_default(o):
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, (np.floating, np.integer, np.bool_)):
        return o.item()
    raise TypeError(f"cannot serialise {type(o).__name__}")


class _Ctx:
    """Model pieces shared by the chain-based pipelines, built on demand."""

    def __init__(self, cfg: ExperimentConfig):
        self.cfg = cfg
        self.model = cfg.build()
        self.gs = ground_state(self.model.H)
        self.L = h_transform(self.model.H, self.gs)
        self.law = StationaryLaw.from_ground_state(self.gs)
        self.table = JumpTable.from_generator(self.L)
        self.x = self.model.X
        self.xi = self.model.field_functional(1.0)

    def functions(self) -> dict:
        return {"x": self.x, "xi_h": self.xi, "x_xi_h": self.x * self.xi}


# --- pipelines ---------------------------------------------------------------------

def _field_covariance(cfg, out: Path) -> list:
    ms = cfg.mode_set()
    rows = empirical_covariance(ms, ms.form_values, [0.0, 0.5, 1.0, 2.0], cfg.mc.n_samples, _rng(cfg, 1))
    _write_csv(out / "field_covariance.csv", ["lag", "empirical", "stderr", "exact"],
               [[r["lag"], r["empirical"], r["stderr"], r["exact"]] for r in rows])
    return ["field_covariance.csv"]


def _particle_law(cfg, out: Path) -> list:
    kinds = [ProcessKind.brownian(), ProcessKind.cauchy(), ProcessKind.relativistic(cfg.model.mass)]
    rows = []
    for i, kind in enumerate(kinds):
        rows += empirical_cf(kind, 1.0, [0.5, 1.0, 2.0], cfg.mc.n_samples, _rng(cfg, 2, i))
    _write_csv(out / "particle_law.csv", ["kind", "mass", "u", "empirical", "stderr", "exact"],
               [[r["kind"], r["mass"], r["u"], r["empirical"], r["stderr"], r["exact"]] for r in rows])
    return ["particle_law.csv"]


def _kato(cfg, out: Path) -> list:
    g = cfg.grids
    table = kato_diagnostic(cfg.potential.function(), cfg.model.process_kind(), [0.01, 0.04, 0.16, 0.64],
                            np.linspace(g.x_min, g.x_max, 9), min(cfg.mc.n_samples, 4000), _rng(cfg, 3))
    table.to_csv(out / "kato.csv")
    _write_json(out / "kato_verdict.json", {"trends_to_zero": table.trends_to_zero,
                                             "ceiling_exceeded": table.ceiling_exceeded})
    return ["kato.csv", "kato_verdict.json"]


def _fk_states(nq: int):
    a = np.zeros(nq)
    a[0] = 0.2
    Phi = ProductState(lambda x: np.exp(-x * x / 2), tuple(a))
    Psi = ProductState(lambda x: np.exp(-(x - 0.5) ** 2 / 2))
    return Phi, Psi


def _fk_cross_check(cfg, out: Path) -> list:
    model = cfg.build()
    ms = model.ms
    Phi, Psi = _fk_states(ms.n_quadratures)
    fk = FKConfig(cfg.model.process_kind(), cfg.potential.function(), ms, (cfg.grids.x_min, cfg.grids.x_max),
                  cfg.mc.n_steps, config_hash=cfg.config_hash())
    el = fk_nelson_element(Phi, Psi, 1.0, fk, cfg.mc.n_samples, _rng(cfg, 4))
    exact = semigroup_matrix_element(Phi, Psi, 1.0, model)
    res = el.to_dict()
    res["matrix"] = exact
    res["rel_diff_joint_matrix"] = abs(el.joint.value - exact) / abs(exact)
    res["rel_diff_oracle_matrix"] = abs(el.oracle.value - exact) / abs(exact)
    _write_json(out / "fk_cross_check.json", res)
    return ["fk_cross_check.json"]


def _ground_state(cfg, out: Path) -> list:
    model = cfg.build()
    gs = ground_state(model.H)
    fk = FKConfig(cfg.model.process_kind(), cfg.potential.function(), model.ms,
                  (cfg.grids.x_min, cfg.grids.x_max), cfg.mc.n_steps, config_hash=cfg.config_hash())
    fit = ground_energy_estimate(ProductState(lambda x: np.exp(-x * x / 2)), [1.0, 2.0, 3.0, 4.0], fk,
                                 cfg.mc.n_samples, _rng(cfg, 5))
    _write_json(out / "ground_state.json", {
        "eigensolver_energy": gs.energy, "residual": gs.residual, "iterations": gs.iterations,
        "fk_energy": fit.E_hat, "fk_stderr": fit.stderr, "flags": fit.flags,
        "fk_values": [asdict(e) for e in fit.values],
    })
    gs.to_csv(out / "ground_state.csv", model.coords())
    return ["ground_state.json", "ground_state.csv"]


def _pphi1_stationarity(cfg, out: Path) -> list:
    ctx = _Ctx(cfg)
    start = int(np.argmax(ctx.law.weights))
    ens = stationary_ensemble(ctx.table, ctx.law, [0.0, cfg.mc.horizon], min(cfg.mc.n_samples, 4000),
                              cfg.mc.master_seed, 6, starts=start, block_size=cfg.mc.block_size,
                              workers=cfg.mc.workers)
    p = chi2_against_law(ens.states[-1], ctx.law.weights)
    # particle marginal histogram for inspection
    edges = np.linspace(cfg.grids.x_min, cfg.grids.x_max, 13)
    emp, _ = np.histogram(ctx.x[ens.states[-1]], bins=edges)
    exp, _ = np.histogram(ctx.x, bins=edges, weights=ctx.law.weights * ens.n_paths)
    _write_csv(out / "pphi1_marginal.csv", ["x_lo", "x_hi", "observed", "expected"],
               [[float(a), float(b), int(o), float(e)] for a, b, o, e in zip(edges[:-1], edges[1:], emp, exp)])
    _write_json(out / "pphi1_stationarity.json", {"chi2_pvalue": p, "horizon": cfg.mc.horizon,
                                                  "n_paths": ens.n_paths, "start_state": start,
                                                  "mean_jumps": float(ens.n_jumps.mean())})
    return ["pphi1_marginal.csv", "pphi1_stationarity.json"]


def _martingale(cfg, out: Path) -> list:
    ctx = _Ctx(cfg)
    T = cfg.mc.horizon
    ck = [0.0, T / 4, T / 2, T]
    traces = build_traces(ctx.table, ctx.law, ctx.L, ctx.functions(), ck, cfg.mc.n_samples,
                          cfg.mc.master_seed, 7, block_size=cfg.mc.block_size, workers=cfg.mc.workers)
    probes = default_probes(ctx.x, ctx.xi, ctx.law)
    reports = {k: json.loads(martingale_test(tr, T / 2, T, probes).to_json()) for k, tr in traces.items()}
    _write_json(out / "martingale.json", reports)
    return ["martingale.json"]


def variance_rows(cfg: ExperimentConfig, ctx: _Ctx | None = None, n_paths: int | None = None,
                  stream: int = 8) -> list:
    """VarianceEstimate rows for x, xi(h) and x xi(h) with their closed forms."""
    ctx = _Ctx(cfg) if ctx is None else ctx
    T = cfg.mc.horizon
    gap = spectral_gap(ctx.model.H, ctx.gs)
    traces = build_traces(ctx.table, ctx.law, ctx.L, ctx.functions(), [0.0, T], n_paths or cfg.mc.n_samples,
                          cfg.mc.master_seed, stream, block_size=cfg.mc.block_size, workers=cfg.mc.workers)
    if cfg.model.kind == "classical":
        ids = {"x": "C1", "xi_h": "C2", "x_xi_h": "C3"}
    else:
        ids = {"x": "R1", "xi_h": "C2", "x_xi_h": "R2"}
    rows = []
    for name, f in ctx.functions().items():
        d = dirichlet_form(ctx.L, ctx.law.weights, f)
        closed = analytic_sigma2(ids[name], {"m": cfg.model.mass}, ctx.gs, ctx.model)["value"]
        ve = variance_estimate(traces[name], T, d, closed, gap)
        ve.f_id = f"{ids[name]}:{name}"
        rows.append(ve)
    return rows


def _variance_table(cfg, out: Path) -> list:
    rows = variance_rows(cfg)
    variance_table_csv(rows, out / "variance_table.csv")
    return ["variance_table.csv"]


def _fclt_scaling(cfg, out: Path) -> list:
    ctx = _Ctx(cfg)
    d = dirichlet_form(ctx.L, ctx.law.weights, ctx.x)
    by_scale = {}
    for i, s in enumerate((1, 4, 16, 64)):
        ck = [0.0, s / 2, float(s)]
        by_scale[s] = build_traces(ctx.table, ctx.law, ctx.L, {"x": ctx.x}, ck, cfg.mc.n_samples,
                                   cfg.mc.master_seed, 20 + i, block_size=cfg.mc.block_size,
                                   workers=cfg.mc.workers)["x"]
    rep = fclt_test(by_scale, d, 1.0)
    kv = kv_residual(by_scale[64])
    big = by_scale[64]
    sig = float(np.mean(big.M[-1] ** 2) / 64)
    _write_json(out / "fclt.json", {"report": json.loads(rep.to_json()), "kv_residual": kv,
                                    "sigma2_hat": sig, "dirichlet": d})
    return ["fclt.json"]


_DISPATCH = {
    "field-covariance": _field_covariance,
    "particle-law": _particle_law,
    "kato": _kato,
    "fk-cross-check": _fk_cross_check,
    "ground-state": _ground_state,
    "pphi1-stationarity": _pphi1_stationarity,
    "martingale": _martingale,
    "variance-table": _variance_table,
    "fclt-scaling": _fclt_scaling,
}
assert set(_DISPATCH) == set(PIPELINES)


def _sha256(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def run(pipeline_id: str, config: ExperimentConfig, out) -> dict:
    """Validate, execute one pipeline, write outputs plus manifest.json; return the manifest."""
    if pipeline_id not in _DISPATCH:
        raise PipelineError(f"unknown pipeline {pipeline_id!r}; choose from {', '.join(PIPELINES)}")
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    checks = validate(config)
    failed = hard_failures(checks)
    if failed:
        raise PipelineError(f"{pipeline_id}: configuration fails {[c.name for c in failed]}")
    t0 = time.perf_counter()
    try:
        files = _DISPATCH[pipeline_id](config, out)
    except Exception as exc:  # add pipeline context, keep the original as cause
        raise PipelineError(f"{pipeline_id} failed: {exc}") from exc
    wall = time.perf_counter() - t0
    (out / "config.yaml").write_text(config.to_yaml())
    digests = {f: _sha256(out / f) for f in sorted(files)}
    numerical = hashlib.sha256("".join(digests[f] for f in sorted(digests)).encode()).hexdigest()
    manifest = {
        "pipeline": pipeline_id,
        "config_hash": config.config_hash(),
        "seed": config.mc.master_seed,
        "versions": {"nelsonsim": __version__, "numpy": np.__version__, "scipy": scipy.__version__},
        "outputs": digests,
        "numerical_hash": numerical,
        "validation": [asdict(c) for c in checks],
        "wall_clock_s": wall,
    }
    _write_json(out / "manifest.json", manifest)
    log.info("%s finished in %.1fs -> %s", pipeline_id, wall, out)
    return manifest
