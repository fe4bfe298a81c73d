"""Run configuration: strict TOML parsing, validation that reports every
violation at once, canonical serialization, and builders that turn a config
into the domain objects the harness consumes.

Unknown keys are rejected, not ignored, with a suggestion when one is
recognizably an alias (``learning_rate`` -> ``eta``) or a near-miss of a
known key.
"""
from __future__ import annotations

import difflib
import math
import sys
from dataclasses import dataclass, field, fields
from pathlib import Path

import numpy as np

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from . import harness as hz
from . import linalg as la
from . import noise as noise_mod
from . import objectives as obj_mod
from . import optimizers as opt_mod
from . import schedules as sched_mod
from .streams import make_stream


class ConfigError(ValueError):
    def __init__(self, problems):
        self.problems = list(problems)
        super().__init__("invalid configuration:\n" + "\n".join(
            f"  - {p}" for p in self.problems))


_ALIASES = {
    "learning_rate": "eta",
    "lr": "eta",
    "step_size": "eta",
    "stepsize": "eta",
    "momentum": "beta",
    "batch_size": "b",
    "batchsize": "b",
    "steps": "T",
    "exponent": "a",
}


@dataclass(frozen=True)
class ObjectiveConfig:
    family: str = "powered-distance"
    shape: tuple = (8, 4)
    n_components: int = 1
    nu: float = 1.0
    scale: float = 1.0
    anchor_seed: int = 0
    anchor_spread: float = 1.0


@dataclass(frozen=True)
class NoiseConfig:
    kind: str = "none"
    alpha: float = 1.8
    scale: float = 1.0
    p: float = 2.0


@dataclass(frozen=True)
class OracleConfig:
    sampling: str = "additive-noise"
    exact_batch_max: int = noise_mod.EXACT_BATCH_MAX


@dataclass(frozen=True)
class NsConfig:
    iterations: int = 30
    coeffs: tuple = (1.5, -0.5, 0.0)


@dataclass(frozen=True)
class OptimizerConfig:
    kind: str = "sgd"
    beta: float = 0.0
    orthogonalizer: str = "exact-svd"
    ns: NsConfig = field(default_factory=NsConfig)


@dataclass(frozen=True)
class ScheduleConfig:
    eta: float = 0.1
    a: float = 0.7
    batch: str = "constant"
    b: int = 1
    delta: float = 2.0


@dataclass(frozen=True)
class RunSection:
    T: int = 200
    seeds: int = 4
    seed: int = 42
    w0_distance: float = 10.0
    horizons: tuple = (10, 32, 100, 200)


@dataclass(frozen=True)
class ChecksConfig:
    enabled: tuple = ()
    descent_spot_steps: int = 50
    descent_replicates: int = 10_000
    noise_batches: tuple = (1, 4, 16, 64, 256)
    noise_trials: int = 100_000
    schedule_horizons: tuple = sched_mod.DEFAULT_HORIZONS


@dataclass(frozen=True)
class TolerancesConfig:
    tol_orth: float = la.TOL_ORTH
    tol_recon: float = la.TOL_RECON
    rank_tol: float = la.RANK_TOL
    ns_tol: float = la.NS_TOL
    divergence_cap: float = la.DIVERGENCE_CAP


@dataclass(frozen=True)
class RunConfig:
    objective: ObjectiveConfig = field(default_factory=ObjectiveConfig)
    noise: NoiseConfig = field(default_factory=NoiseConfig)
    oracle: OracleConfig = field(default_factory=OracleConfig)
    schedule: ScheduleConfig = field(default_factory=ScheduleConfig)
    optimizer: OptimizerConfig = field(default_factory=OptimizerConfig)
    run: RunSection = field(default_factory=RunSection)
    checks: ChecksConfig = field(default_factory=ChecksConfig)
    tolerances: TolerancesConfig = field(default_factory=TolerancesConfig)


_SECTIONS = {f.name: f.type for f in fields(RunConfig)}
_KNOWN_CHECKS = ("descent", "envelope-upper", "envelope-lower", "schedule-conditions")


def _coerce(value, template, where, problems):
    if isinstance(template, bool):
        return value
    if isinstance(template, float) and isinstance(value, int):
        return float(value)
    if isinstance(template, tuple):
        if not isinstance(value, list):
            problems.append(f"{where}: expected a list")
            return template
        return tuple(_coerce(v, template[0] if template else v, where, problems)
                     for v in value)
    if isinstance(template, int) and isinstance(value, float):
        if value != int(value):
            problems.append(f"{where}: expected an integer")
            return template
        return int(value)
    if not isinstance(value, type(template)):
        problems.append(f"{where}: expected {type(template).__name__}, "
                        f"got {type(value).__name__}")
        return template
    return value


def _fill_dataclass(cls, data: dict, where: str, problems: list):
    proto = cls()
    known = {f.name: getattr(proto, f.name) for f in fields(cls)}
    kwargs = {}
    for key, value in data.items():
        if key not in known:
            hint = _ALIASES.get(key)
            if hint is None:
                close = difflib.get_close_matches(key, known, n=1)
                hint = close[0] if close else None
            extra = f"; did you mean '{hint}'?" if hint in known else ""
            problems.append(f"{where}: unknown key '{key}'{extra}")
            continue
        template = known[key]
        if isinstance(template, (NsConfig,)):
            if not isinstance(value, dict):
                problems.append(f"{where}.{key}: expected a table")
                continue
            kwargs[key] = _fill_dataclass(type(template), value,
                                          f"{where}.{key}", problems)
        else:
            kwargs[key] = _coerce(value, template, f"{where}.{key}", problems)
    try:
        return cls(**kwargs)
    except (TypeError, ValueError) as exc:
        problems.append(f"{where}: {exc}")
        return proto


def _validate(cfg: RunConfig, problems: list):
    o, n, s, op_, r = cfg.objective, cfg.noise, cfg.schedule, cfg.optimizer, cfg.run
    if o.family not in obj_mod.FAMILIES:
        problems.append(f"objective.family: must be one of {obj_mod.FAMILIES}")
    if len(o.shape) != 2 or any(int(d) < 1 for d in o.shape):
        problems.append("objective.shape: expected two positive integers")
    if not 0.0 < o.nu <= 1.0:
        problems.append(f"objective.nu: {o.nu} outside (0, 1]")
    if o.scale <= 0:
        problems.append("objective.scale: must be positive")
    if o.n_components < 1:
        problems.append("objective.n_components: must be >= 1")
    if n.kind not in noise_mod.NOISE_KINDS:
        problems.append(f"noise.kind: must be one of {noise_mod.NOISE_KINDS}")
    if not 1.0 < n.p <= 2.0:
        problems.append(f"noise.p: {n.p} outside (1, 2]")
    if n.kind in ("symmetric-pareto", "student-t"):
        if n.alpha <= 1.0 or n.alpha == 2.0:
            problems.append(f"noise.alpha: {n.alpha} must exceed 1 and avoid "
                            "the CLT boundary 2")
        elif n.p >= n.alpha:
            problems.append(f"noise.p: {n.p} has no finite moment at alpha={n.alpha}")
    if cfg.oracle.sampling not in noise_mod.SAMPLING_MODES:
        problems.append(f"oracle.sampling: must be one of {noise_mod.SAMPLING_MODES}")
    if cfg.oracle.sampling == "index-du-n" and n.kind != "none":
        problems.append("oracle.sampling: index-du-n requires noise.kind = 'none' "
                        "(use 'both' to combine)")
    if s.eta <= 0:
        problems.append("schedule.eta: must be positive")
    if not 0.0 < s.a <= 1.0:
        problems.append(f"schedule.a: {s.a} outside (0, 1]")
    if s.batch not in ("constant", "geometric"):
        problems.append("schedule.batch: must be 'constant' or 'geometric'")
    if s.b < 1:
        problems.append("schedule.b: must be a positive integer")
    if s.batch == "geometric" and s.delta <= 1.0:
        problems.append(f"schedule.delta: {s.delta} must exceed 1")
    if op_.kind not in ("sgd", "muon"):
        problems.append("optimizer.kind: must be 'sgd' or 'muon'")
    if not 0.0 <= op_.beta < 1.0:
        problems.append(f"optimizer.beta: {op_.beta} outside [0, 1)")
    if op_.orthogonalizer not in opt_mod.ORTHOGONALIZERS:
        problems.append(f"optimizer.orthogonalizer: must be one of "
                        f"{opt_mod.ORTHOGONALIZERS}")
    if len(op_.ns.coeffs) != 3:
        problems.append("optimizer.ns.coeffs: expected exactly three reals")
    if op_.ns.iterations < 1:
        problems.append("optimizer.ns.iterations: must be >= 1")
    if r.T < 1:
        problems.append("run.T: must be >= 1")
    if r.seeds < 1:
        problems.append("run.seeds: must be >= 1")
    if r.w0_distance < 0:
        problems.append("run.w0_distance: must be nonnegative")
    if any(h < 1 or h > r.T for h in r.horizons):
        problems.append("run.horizons: every horizon must lie in [1, run.T]")
    for c in cfg.checks.enabled:
        if c not in _KNOWN_CHECKS:
            problems.append(f"checks.enabled: unknown check '{c}' "
                            f"(known: {_KNOWN_CHECKS})")
    if cfg.checks.descent_replicates < 100:
        problems.append("checks.descent_replicates: must be >= 100")


def parse_config_text(text: str) -> RunConfig:
    try:
        data = tomllib.loads(text)
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError([f"TOML syntax: {exc}"])
    problems: list = []
    kwargs = {}
    for key, value in data.items():
        if key not in _SECTIONS:
            close = difflib.get_close_matches(key, _SECTIONS, n=1)
            hint = f"; did you mean '{close[0]}'?" if close else ""
            problems.append(f"unknown section [{key}]{hint}")
            continue
        if not isinstance(value, dict):
            problems.append(f"[{key}]: expected a table")
            continue
        cls = type(getattr(RunConfig(), key))
        kwargs[key] = _fill_dataclass(cls, value, key, problems)
    cfg = RunConfig(**kwargs)
    _validate(cfg, problems)
    if problems:
        raise ConfigError(problems)
    return cfg


def parse_config(path) -> RunConfig:
    path = Path(path)
    if not path.exists():
        raise ConfigError([f"config file not found: {path}"])
    return parse_config_text(path.read_text(encoding="utf-8"))


def preset_path(name: str) -> Path:
    """Path of a shipped preset config (name without the .toml suffix)."""
    p = Path(__file__).parent / "presets" / f"{name}.toml"
    if not p.exists():
        have = sorted(q.stem for q in p.parent.glob("*.toml"))
        raise ConfigError([f"no preset '{name}'; shipped presets: {have}"])
    return p


def _toml_value(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, str):
        return '"' + v.replace("\\", "\\\\").replace('"', '\\"') + '"'
    if isinstance(v, float):
        if v != v or math.isinf(v):
            raise ValueError("cannot serialize non-finite floats")
        r = repr(v)
        return r if ("." in r or "e" in r or "E" in r) else r + ".0"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (tuple, list)):
        return "[" + ", ".join(_toml_value(x) for x in v) + "]"
    raise TypeError(f"cannot serialize {type(v)}")


def serialize_config(cfg: RunConfig) -> str:
    """Canonical form: sections and keys in declaration order, floats in
    shortest round-trip notation. parse(serialize(cfg)) == cfg."""
    lines = []
    for sec in fields(RunConfig):
        body = getattr(cfg, sec.name)
        lines.append(f"[{sec.name}]")
        nested = []
        for f in fields(type(body)):
            v = getattr(body, f.name)
            if isinstance(v, NsConfig):
                nested.append((f"{sec.name}.{f.name}", v))
                continue
            lines.append(f"{f.name} = {_toml_value(v)}")
        for name, sub in nested:
            lines.append(f"[{name}]")
            for f in fields(type(sub)):
                lines.append(f"{f.name} = {_toml_value(getattr(sub, f.name))}")
        lines.append("")
    return "\n".join(lines)


# ---------------------------------------------------------------------------
# builders


def build_objective(cfg: RunConfig) -> obj_mod.HolderObjective:
    o = cfg.objective
    return obj_mod.make_objective(o.family, tuple(int(d) for d in o.shape),
                                  o.n_components, nu=o.nu, scale=o.scale,
                                  anchor_seed=o.anchor_seed,
                                  anchor_spread=o.anchor_spread)


def build_noise(cfg: RunConfig) -> noise_mod.NoiseModel:
    n = cfg.noise
    return noise_mod.NoiseModel(kind=n.kind, alpha=n.alpha, scale=n.scale, p=n.p)


def build_oracle(cfg: RunConfig, objective=None) -> noise_mod.GradientOracle:
    objective = objective if objective is not None else build_objective(cfg)
    return noise_mod.GradientOracle(
        objective=objective, sampling=cfg.oracle.sampling,
        noise=build_noise(cfg), exact_batch_max=cfg.oracle.exact_batch_max)


def build_schedules(cfg: RunConfig):
    s = cfg.schedule
    return (sched_mod.StepSchedule(s.eta, s.a),
            sched_mod.BatchSchedule(s.batch, s.b, s.delta))


def build_muon_cfg(cfg: RunConfig):
    if cfg.optimizer.kind != "muon":
        return None
    ns = cfg.optimizer.ns
    a, b, c = (float(x) for x in ns.coeffs)
    return opt_mod.MuonConfig(beta=cfg.optimizer.beta,
                              orthogonalizer=cfg.optimizer.orthogonalizer,
                              ns=la.NewtonSchulzConfig(a, b, c, ns.iterations))


def build_w0(cfg: RunConfig, objective) -> np.ndarray:
    """Start shared by every ensemble seed: anchor mean plus a fixed-radius
    offset in a direction drawn once from the anchor stream."""
    center = np.mean([c.anchor for c in objective.components], axis=0)
    rng = make_stream("w0", cfg.objective.anchor_seed)
    d = rng.standard_normal(objective.shape)
    return center + cfg.run.w0_distance * d / np.sqrt((d * d).sum())


def sigma_certificate(cfg: RunConfig, oracle) -> float:
    """sigma^p for the declared moment order; zero for deterministic oracles
    (including single-component index sampling)."""
    if hz.oracle_is_deterministic(oracle):
        return 0.0
    return noise_mod.oracle_sigma_certificate(oracle, cfg.noise.p)


def build_setup(cfg: RunConfig, seed_override=None) -> hz.RunSetup:
    objective = build_objective(cfg)
    oracle = build_oracle(cfg, objective)
    step_sched, batch_sched = build_schedules(cfg)
    return hz.RunSetup(
        objective=objective,
        oracle=oracle,
        optimizer=cfg.optimizer.kind,
        step_sched=step_sched,
        batch_sched=batch_sched,
        T=cfg.run.T,
        w0=build_w0(cfg, objective),
        root_seed=int(seed_override if seed_override is not None else cfg.run.seed),
        muon_cfg=build_muon_cfg(cfg),
        nu=cfg.objective.nu,
        p=cfg.noise.p,
        sigma_p=sigma_certificate(cfg, oracle),
    )
