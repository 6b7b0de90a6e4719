"""Experiment configuration: YAML loading, hashing, model construction and validation."""

from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, field, fields, replace

import numpy as np
import yaml

from .field_modes import Dispersion, FormFactor, ModeSet, ModeSetError, build_mode_set, quadrature_checks
from .operators import GridSpec, NelsonModel, build_model, harmonic
from .particle_paths import ProcessKind, kato_diagnostic

PIPELINES = (
    "field-covariance",
    "particle-law",
    "kato",
    "fk-cross-check",
    "ground-state",
    "pphi1-stationarity",
    "martingale",
    "variance-table",
    "fclt-scaling",
)


@dataclass(frozen=True)
class ModelSection:
    kind: str = "classical"  # classical | relativistic
    mass: float = 1.0

    def process_kind(self) -> ProcessKind:
        if self.kind == "classical":
            return ProcessKind.brownian()
        if self.kind == "relativistic":
            return ProcessKind.relativistic(self.mass)
        raise ValueError(f"unknown model kind {self.kind!r}")


@dataclass(frozen=True)
class PotentialSection:
    type: str = "harmonic"  # harmonic | tabulated
    kappa: float = 1.0
    table_x: tuple = ()
    table_v: tuple = ()

    def function(self):
        if self.type == "harmonic":
            return harmonic(self.kappa)
        if self.type == "tabulated":
            xs = np.asarray(self.table_x, dtype=float)
            vs = np.asarray(self.table_v, dtype=float)
            if xs.size < 2 or xs.shape != vs.shape or np.any(np.diff(xs) <= 0):
                raise ValueError("tabulated potential needs increasing table_x matching table_v")
            return lambda x: np.interp(x, xs, vs)
        raise ValueError(f"unknown potential type {self.type!r}")


@dataclass(frozen=True)
class FieldSection:
    nu: float = 1.0
    g: float = 0.5
    lambda_cutoff: float = 1.0
    n_modes: int = 1
    k_max: float = 1.0
    n_op: int = 1  # retained quadratures in the operator models, in (cos, sin) order
    include_zero: bool = False


@dataclass(frozen=True)
class MCSection:
    n_samples: int = 10000
    n_steps: int = 64
    horizon: float = 10.0
    master_seed: int = 12345
    block_size: int = 2500
    workers: int = 1


@dataclass(frozen=True)
class ExperimentConfig:
    model: ModelSection = ModelSection()
    potential: PotentialSection = PotentialSection()
    field: FieldSection = FieldSection()
    grids: GridSpec = GridSpec()
    mc: MCSection = MCSection()
    experiment: str = "variance-table"
    boundary_tol: float = 1e-3

    # --- serialisation ---------------------------------------------------------
    def to_dict(self) -> dict:
        d = asdict(self)
        d["potential"]["table_x"] = list(self.potential.table_x)
        d["potential"]["table_v"] = list(self.potential.table_v)
        return json.loads(json.dumps(d, default=float))  # plain python scalars only

    def to_yaml(self) -> str:
        return yaml.safe_dump(self.to_dict(), sort_keys=True)

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentConfig":
        d = dict(d or {})
        sections = {"model": ModelSection, "potential": PotentialSection, "field": FieldSection,
                    "grids": GridSpec, "mc": MCSection}
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        kwargs = {}
        for key, value in d.items():
            if key in sections:
                sec = sections[key]
                allowed = {f.name for f in fields(sec)}
                bad = set(value or {}) - allowed
                if bad:
                    raise ValueError(f"unknown keys in section {key!r}: {sorted(bad)}")
                vals = dict(value or {})
                if key == "potential":
                    for t in ("table_x", "table_v"):
                        if t in vals:
                            vals[t] = tuple(vals[t])
                kwargs[key] = sec(**vals)
            else:
                kwargs[key] = value
        return cls(**kwargs)

    @classmethod
    def from_yaml(cls, text: str) -> "ExperimentConfig":
        return cls.from_dict(yaml.safe_load(text))

    @classmethod
    def load(cls, path) -> "ExperimentConfig":
        with open(path) as fh:
            return cls.from_yaml(fh.read())

    def config_hash(self) -> str:
        canon = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(canon.encode()).hexdigest()

    def with_overrides(self, seed: int | None = None, samples: int | None = None,
                       experiment: str | None = None) -> "ExperimentConfig":
        mc = self.mc
        if seed is not None:
            mc = replace(mc, master_seed=int(seed))
        if samples is not None:
            mc = replace(mc, n_samples=int(samples))
        return replace(self, mc=mc, experiment=experiment or self.experiment)

    # --- model construction -------------------------------------------------------
    def mode_set(self) -> ModeSet:
        f = self.field
        ms = build_mode_set(f.n_modes, f.k_max, Dispersion(f.nu), FormFactor(f.g, f.lambda_cutoff),
                            include_zero=f.include_zero)
        if not 1 <= f.n_op <= ms.n_quadratures:
            raise ValueError(f"n_op must lie in [1, {ms.n_quadratures}]")
        return ms.truncated(ms.quadratures[: f.n_op])

    def build(self) -> NelsonModel:
        return build_model(self.grids, self.model.process_kind(), self.mode_set(), self.potential.function())


@dataclass
class CheckResult:
    name: str
    passed: bool
    severity: str  # hard | soft
    detail: dict = field(default_factory=dict)


def validate(config: ExperimentConfig, run_kato: bool | None = None, rng_seed: int | None = None) -> list:
    """Standing-assumption checks on a configuration.

    Hard failures (non-integrable mode quadratures, a ground state that does
    not decay inside the box) mean the configuration must not be run. The
    Kato diagnostic is soft and runs by default only for tabulated potentials.
    """
    from .operators import ground_state

    results = []
    f = config.field
    ff = FormFactor(f.g, f.lambda_cutoff)
    disp = Dispersion(f.nu)
    try:
        ms = config.mode_set()
        q = quadrature_checks(ms.momenta, ms.delta_k, disp, ff)
        results.append(CheckResult("mode_quadratures", True, "hard", q))
    except (ModeSetError, ValueError) as exc:
        results.append(CheckResult("mode_quadratures", False, "hard", {"error": str(exc)}))
        return results

    model = config.build()
    gs = ground_state(model.H)
    U = np.abs(gs.vector).reshape(config.grids.n_x, -1)
    edge = float(max(U[0].max(), U[-1].max()) / U.max())
    results.append(CheckResult("ground_state_boundary_decay", edge < config.boundary_tol, "hard",
                               {"edge_ratio": edge, "tolerance": config.boundary_tol, "energy": gs.energy}))

    if run_kato is None:
        run_kato = config.potential.type == "tabulated"
    if run_kato:
        seed = config.mc.master_seed if rng_seed is None else rng_seed
        rng = np.random.default_rng([seed, 900, 0])
        table = kato_diagnostic(config.potential.function(), config.model.process_kind(),
                                [0.01, 0.04, 0.16], np.linspace(config.grids.x_min, config.grids.x_max, 9),
                                2000, rng)
        results.append(CheckResult("kato_trend_to_zero", bool(table.trends_to_zero), "soft",
                                   {"t": table.t.tolist(), "sup": table.sup_estimate.tolist()}))
    return results


def hard_failures(results) -> list:
    return [r for r in results if r.severity == "hard" and not r.passed]
