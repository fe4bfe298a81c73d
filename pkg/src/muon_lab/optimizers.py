"""The three update rules on a single matrix parameter.

* mini-batch SGD:      W <- W - eta_t * G_t
* Muon without momentum: W <- W - eta_t * polar(G_t)
* Muon with momentum:  M_t = beta M_{t-1} + (1-beta) G_t,
                       W <- W - eta_t * polar(M_t)

G_t is the mini-batch gradient. Steps are pure: they take a state and
return a new one inside a StepOutcome carrying the direction diagnostics.
A zero momentum/gradient matrix skips the move (there is no direction to
orthogonalize), recorded as direction_kind="skipped-zero".
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from . import linalg as la
from . import noise as noise_mod
from .schedules import BatchSchedule, StepSchedule
from .streams import make_stream

ORTHOGONALIZERS = ("exact-svd", "newton-schulz")


@dataclass(frozen=True)
class MuonConfig:
    beta: float = 0.0
    orthogonalizer: str = "exact-svd"
    ns: la.NewtonSchulzConfig = field(default_factory=la.NewtonSchulzConfig.cubic)
    m_init: Optional[np.ndarray] = None   # defaults to the zero matrix

    def __post_init__(self):
        if not 0.0 <= self.beta < 1.0:
            raise ValueError("beta must lie in [0, 1)")
        if self.orthogonalizer not in ORTHOGONALIZERS:
            raise ValueError(f"unknown orthogonalizer {self.orthogonalizer!r}")


@dataclass(frozen=True)
class OptimizerState:
    w: np.ndarray
    m: Optional[np.ndarray]      # momentum buffer, Muon only
    t: int = 0


@dataclass(frozen=True)
class StepOutcome:
    state: OptimizerState
    direction: np.ndarray
    direction_kind: str          # "sgd" | "muon" | "skipped-zero"
    d_norm: float
    g_norm: float                # Frobenius norm of the mini-batch gradient
    nuclear: Optional[float]     # nuclear norm of the orthogonalized matrix
    eta: float
    batch: int


def init_state(w0, muon_cfg: Optional[MuonConfig] = None) -> OptimizerState:
    w0 = la.as_matrix(w0)
    m = None
    if muon_cfg is not None:
        m = np.zeros_like(w0) if muon_cfg.m_init is None else la.as_matrix(muon_cfg.m_init)
        if m.shape != w0.shape:
            raise la.ShapeError("m_init shape must match the iterate shape")
    return OptimizerState(w=w0, m=m, t=0)


def sgd_step(state: OptimizerState, oracle: noise_mod.GradientOracle,
             eta_t: float, b_t, rng) -> StepOutcome:
    g = noise_mod.minibatch_gradient(oracle, state.w, b_t, rng)
    new = OptimizerState(w=state.w - eta_t * g, m=state.m, t=state.t + 1)
    gn = float(np.sqrt((g * g).sum()))
    return StepOutcome(state=new, direction=-g, direction_kind="sgd",
                       d_norm=gn, g_norm=gn, nuclear=None,
                       eta=eta_t, batch=b_t)


def _orthogonalize(m_mat: np.ndarray, cfg: MuonConfig):
    if cfg.orthogonalizer == "exact-svd":
        o, nuc, _ = la.polar_with_nuclear(m_mat)
        return o, nuc
    return la.newton_schulz_orthogonalize(m_mat, cfg.ns), None


def muon_step(state: OptimizerState, oracle: noise_mod.GradientOracle,
              cfg: MuonConfig, eta_t: float, b_t, rng) -> StepOutcome:
    g = noise_mod.minibatch_gradient(oracle, state.w, b_t, rng)
    m_prev = state.m if state.m is not None else np.zeros_like(state.w)
    m_mat = cfg.beta * m_prev + (1.0 - cfg.beta) * g
    gn = float(np.sqrt((g * g).sum()))
    if not m_mat.any():
        new = OptimizerState(w=state.w, m=m_mat, t=state.t + 1)
        return StepOutcome(state=new, direction=np.zeros_like(state.w),
                           direction_kind="skipped-zero", d_norm=0.0,
                           g_norm=gn, nuclear=0.0, eta=eta_t, batch=b_t)
    o, nuc = _orthogonalize(m_mat, cfg)
    new = OptimizerState(w=state.w - eta_t * o, m=m_mat, t=state.t + 1)
    return StepOutcome(state=new, direction=-o, direction_kind="muon",
                       d_norm=float(np.sqrt((o * o).sum())), g_norm=gn,
                       nuclear=nuc, eta=eta_t, batch=b_t)


def muon_beta0_reference_step(state: OptimizerState,
                              oracle: noise_mod.GradientOracle,
                              eta_t: float, b_t, rng) -> StepOutcome:
    """Momentum-free path written out directly: orthogonalize the fresh
    mini-batch gradient and step. Kept separate so the beta=0 momentum rule
    can be checked against it bitwise."""
    g = noise_mod.minibatch_gradient(oracle, state.w, b_t, rng)
    gn = float(np.sqrt((g * g).sum()))
    if not g.any():
        new = OptimizerState(w=state.w, m=state.m, t=state.t + 1)
        return StepOutcome(state=new, direction=np.zeros_like(state.w),
                           direction_kind="skipped-zero", d_norm=0.0,
                           g_norm=gn, nuclear=0.0, eta=eta_t, batch=b_t)
    o, nuc, _ = la.polar_with_nuclear(g)
    new = OptimizerState(w=state.w - eta_t * o, m=state.m, t=state.t + 1)
    return StepOutcome(state=new, direction=-o, direction_kind="muon",
                       d_norm=float(np.sqrt((o * o).sum())), g_norm=gn,
                       nuclear=nuc, eta=eta_t, batch=b_t)


def run_update_sequence(w0, optimizer: str, oracle: noise_mod.GradientOracle,
                        step_sched: StepSchedule, batch_sched: BatchSchedule,
                        T: int, seed_parts: tuple,
                        muon_cfg: Optional[MuonConfig] = None) -> list:
    """Apply T steps, one named substream per step so any step can be
    replayed or branched without disturbing the others."""
    if T < 1:
        raise ValueError("T must be >= 1")
    if optimizer not in ("sgd", "muon", "muon0-reference"):
        raise ValueError(f"unknown optimizer {optimizer!r}")
    if optimizer == "muon" and muon_cfg is None:
        muon_cfg = MuonConfig()
    state = init_state(w0, muon_cfg if optimizer == "muon" else None)
    outcomes = []
    for t in range(T):
        rng = make_stream(*seed_parts, "step", t)
        eta_t = step_sched.at(t)
        b_t = batch_sched.at(t)
        if optimizer == "sgd":
            out = sgd_step(state, oracle, eta_t, b_t, rng)
        elif optimizer == "muon":
            out = muon_step(state, oracle, muon_cfg, eta_t, b_t, rng)
        else:
            out = muon_beta0_reference_step(state, oracle, eta_t, b_t, rng)
        outcomes.append(out)
        state = out.state
    return outcomes
