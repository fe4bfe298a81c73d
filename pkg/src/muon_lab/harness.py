"""Experiment orchestration: seeded ensembles, per-step descent-inequality
checks, weighted Cesaro means, rate fits, and envelope comparisons against
the convergence-theorem constants.

Every expectation is realized the same way: conditional one-step
expectations by branching R independent replicates from a frozen state on
forked streams, total expectations by averaging an ensemble of seeded
trajectories. A check "fails" only when the Monte Carlo mean exceeds its
bound by more than four standard errors; deterministic runs are compared
directly with a small float guard.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

from . import linalg as la
from . import noise as noise_mod
from . import objectives as obj_mod
from . import optimizers as opt_mod
from .schedules import BatchSchedule, StepSchedule, appendix_caps
from .streams import make_stream

VIOLATION_SIGMAS = 4.0
_FLOAT_GUARD = 1e-9


@dataclass(frozen=True)
class RunSetup:
    objective: obj_mod.HolderObjective
    oracle: noise_mod.GradientOracle
    optimizer: str                      # "sgd" | "muon" | "muon0-reference"
    step_sched: StepSchedule
    batch_sched: BatchSchedule
    T: int
    w0: np.ndarray
    root_seed: int
    muon_cfg: Optional[opt_mod.MuonConfig] = None
    nu: float = 1.0
    p: float = 2.0
    sigma_p: float = 0.0                # certificate for one stochastic gradient

    @property
    def sigma(self) -> float:
        return self.sigma_p ** (1.0 / self.p)

    @property
    def n_cols(self) -> int:
        return self.objective.shape[1]

    @property
    def beta(self) -> float:
        return self.muon_cfg.beta if self.muon_cfg is not None else 0.0


@dataclass
class Trace:
    seed: int
    optimizer: str
    eta: np.ndarray
    batch_float: np.ndarray
    f: np.ndarray                 # f(W_t), exact, t = 0..T-1
    g: np.ndarray                 # ||grad f(W_t)||_F, exact
    d_norm: np.ndarray
    direction_kind: list
    nuclear: np.ndarray           # nan where not collected
    final_f: float
    m0_deviation: Optional[float]          # ||M_0 - grad f(W_0)||_F, Muon only
    states: Optional[list] = None          # (w, m) before each step, if kept

    def __len__(self):
        return len(self.f)


@dataclass
class EnsembleStats:
    t: np.ndarray
    eta: np.ndarray
    batch_float: np.ndarray
    mean_f: np.ndarray
    se_f: np.ndarray
    mean_g: np.ndarray
    se_g: np.ndarray
    mean_g2: np.ndarray
    se_g2: np.ndarray
    n_seeds: int
    m0_dev_mean: Optional[float] = None


def oracle_is_deterministic(oracle: noise_mod.GradientOracle) -> bool:
    no_noise = oracle.noise.kind == "none"
    if oracle.sampling == "additive-noise":
        return no_noise
    return no_noise and oracle.objective.n_components == 1


def run_trace(setup: RunSetup, seed: int, keep_states: bool = False) -> Trace:
    outcomes = opt_mod.run_update_sequence(
        setup.w0, setup.optimizer, setup.oracle, setup.step_sched,
        setup.batch_sched, setup.T, ("trial", setup.root_seed, seed),
        muon_cfg=setup.muon_cfg)
    iterates = np.stack([setup.w0] + [o.state.w for o in outcomes])
    fs = np.asarray(obj_mod.eval_full(setup.objective, iterates))
    grads = obj_mod.grad_full(setup.objective, iterates)
    gs = np.sqrt((grads * grads).sum(axis=(1, 2)))
    m0_dev = None
    if setup.optimizer == "muon":
        m0 = outcomes[0].state.m
        m0_dev = float(np.linalg.norm(m0 - grads[0]))
    states = None
    if keep_states:
        states = [(setup.w0, None if setup.muon_cfg is None else
                   (setup.muon_cfg.m_init if setup.muon_cfg.m_init is not None
                    else np.zeros_like(setup.w0)))]
        states += [(o.state.w, o.state.m) for o in outcomes[:-1]]
    return Trace(
        seed=seed,
        optimizer=setup.optimizer,
        eta=np.array([o.eta for o in outcomes]),
        batch_float=np.array([float(o.batch) if o.batch.bit_length() <= 1023
                              else 1e308 for o in outcomes]),
        f=fs[:-1],
        g=gs[:-1],
        d_norm=np.array([o.d_norm for o in outcomes]),
        direction_kind=[o.direction_kind for o in outcomes],
        nuclear=np.array([math.nan if o.nuclear is None else o.nuclear
                          for o in outcomes]),
        final_f=float(fs[-1]),
        m0_deviation=m0_dev,
        states=states,
    )


def _mean_se(rows: np.ndarray):
    mean = rows.mean(axis=0)
    if rows.shape[0] < 2:
        return mean, np.zeros_like(mean)
    return mean, rows.std(axis=0, ddof=1) / math.sqrt(rows.shape[0])


def run_ensemble(setup: RunSetup, seeds, keep_traces: bool = True):
    """One trace per seed, aggregated in fixed seed order."""
    seeds = list(seeds)
    if not seeds:
        raise ValueError("need at least one seed")
    traces = [run_trace(setup, s) for s in seeds]
    f_rows = np.stack([tr.f for tr in traces])
    g_rows = np.stack([tr.g for tr in traces])
    mean_f, se_f = _mean_se(f_rows)
    mean_g, se_g = _mean_se(g_rows)
    mean_g2, se_g2 = _mean_se(g_rows ** 2)
    m0s = [tr.m0_deviation for tr in traces if tr.m0_deviation is not None]
    stats = EnsembleStats(
        t=np.arange(setup.T),
        eta=traces[0].eta,
        batch_float=traces[0].batch_float,
        mean_f=mean_f, se_f=se_f,
        mean_g=mean_g, se_g=se_g,
        mean_g2=mean_g2, se_g2=se_g2,
        n_seeds=len(seeds),
        m0_dev_mean=float(np.mean(m0s)) if m0s else None,
    )
    return stats, (traces if keep_traces else [])


# ---------------------------------------------------------------------------
# descent inequalities


def sgd_descent_rhs(f_t, g_t, eta, b, L, nu, p, sigma_p) -> float:
    """One-step conditional-expectation bound for the SGD update."""
    quad = eta * (1.0 - L * eta ** nu / 2.0) * g_t ** 2
    holder = (1.0 - nu) * L * eta ** (1.0 + nu) / (2.0 * (1.0 + nu))
    noise = (2.0 ** (3.0 - (nu + p)) * L * sigma_p * eta ** (1.0 + nu)
             / ((1.0 + nu) * math.exp((p - 1.0) * math.log(b))))
    return f_t - quad + holder + noise


def muon_descent_rhs(f_t, g_t, eta, b, L, nu, p, sigma_p, n) -> float:
    """One-step bound for the momentum-free orthogonalized update."""
    holder = L * n ** ((1.0 + nu) / 2.0) * eta ** (1.0 + nu) / (1.0 + nu)
    sigma = sigma_p ** (1.0 / p)
    noise = (2.0 ** (2.0 / p) * math.sqrt(n) * sigma * eta
             / math.exp((p - 1.0) / p * math.log(b)))
    return f_t - eta * g_t + holder + noise


def muon_momentum_descent_rhs(f_t, g_t, t, step_sched, batch_sched, beta,
                              L, nu, p, sigma_p, n, m0_dev) -> float:
    """One-step bound for the momentum update.

    The mini-batch noise coefficient is 2^(2/p) (1-beta): twice the
    per-appearance 2^((2-p)/p), which also makes the bound coincide with the
    momentum-free form at beta = 0.
    """
    eta = step_sched.at(t)
    holder = L * n ** ((1.0 + nu) / 2.0) * eta ** (1.0 + nu) / (1.0 + nu)
    u_t = sum(beta ** i * step_sched.at(t - i) ** nu for i in range(1, t + 1))
    v_t = sum(beta ** i * math.exp(-(p - 1.0) / p * batch_sched.log_at(t - i))
              for i in range(0, t + 1))
    sigma = sigma_p ** (1.0 / p)
    carry = 2.0 * math.sqrt(n) * m0_dev * eta * beta ** t
    lag = 2.0 * L * n ** ((1.0 + nu) / 2.0) * eta * u_t
    noise = 2.0 ** (2.0 / p) * (1.0 - beta) * math.sqrt(n) * sigma * eta * v_t
    return f_t - eta * g_t + holder + carry + lag + noise


@dataclass(frozen=True)
class DescentCheckRow:
    t: int
    lhs: float
    lhs_se: float
    rhs: float
    margin: float        # rhs - lhs
    status: str          # "pass" | "fail" | "skipped"
    replicates: int
    detail: str = ""


def _branch_states(setup: RunSetup, w_t, m_prev, t, R, rng):
    """(R, m, n) next iterates from a frozen state, plus the m0 deviation of
    each branch when the first momentum average happens inside the branch."""
    eta = setup.step_sched.at(t)
    b = setup.batch_sched.at(t)
    g_full = obj_mod.grad_full(setup.objective, w_t)
    m, n = setup.objective.shape
    per = int(b) if b <= setup.oracle.exact_batch_max else 1
    chunk = max(1, 20_000_000 // max(per * m * n, 1))
    nexts = []
    branch_m0 = []
    done = 0
    while done < R:
        c = min(chunk, R - done)
        devs = noise_mod.minibatch_deviation_stack(setup.oracle, w_t, b, c, rng)
        g_stack = g_full + devs
        if setup.optimizer == "sgd":
            nexts.append(w_t - eta * g_stack)
        else:
            beta = setup.beta
            m_stack = beta * m_prev + (1.0 - beta) * g_stack
            if t == 0:
                branch_m0.append(np.sqrt(((m_stack - g_full) ** 2).sum(axis=(1, 2))))
            zero = ~m_stack.any(axis=(1, 2))
            if zero.any():
                m_stack = m_stack.copy()
                m_stack[zero] = np.eye(m, n)  # placeholder, overwritten below
            o = la.polar_factor_stack(m_stack)
            o[zero] = 0.0
            nexts.append(w_t - eta * o)
        done += c
    m0s = np.concatenate(branch_m0) if branch_m0 else None
    return np.concatenate(nexts), m0s


def descent_check(setup: RunSetup, w_t, m_prev, t, R,
                  m0_dev_trajectory: Optional[float] = None) -> DescentCheckRow:
    """Monte Carlo check of the one-step descent bound at a frozen state.

    For the momentum rule at t >= 1, m0_dev_trajectory is the realized
    ||M_0 - grad f(W_0)||_F of the trajectory being checked; at t = 0 that
    quantity is branch-random and is averaged over the replicates instead.
    """
    L = setup.objective.mean_L
    nu, p, sigma_p = setup.nu, setup.p, setup.sigma_p
    eta = setup.step_sched.at(t)
    b = setup.batch_sched.at(t)
    f_t = float(obj_mod.eval_full(setup.objective, w_t))
    g_full = obj_mod.grad_full(setup.objective, w_t)
    g_t = float(np.linalg.norm(g_full))
    if setup.optimizer == "sgd":
        if 1.0 + nu > p + 1e-12:
            return DescentCheckRow(t, math.nan, 0.0, math.nan, math.nan,
                                   "skipped", 0, "needs 1 + nu <= p")
        if eta ** nu >= 2.0 / L:
            return DescentCheckRow(t, math.nan, 0.0, math.nan, math.nan,
                                   "skipped", 0, "needs eta_t^nu < 2/L")
    deterministic = oracle_is_deterministic(setup.oracle)
    reps = 1 if deterministic else R
    rng = make_stream("descent", setup.root_seed, "branch", t)
    nexts, branch_m0 = _branch_states(setup, w_t, m_prev, t, reps, rng)
    fvals = np.asarray(obj_mod.eval_full(setup.objective, nexts), dtype=float)
    fvals = np.atleast_1d(fvals)
    lhs = float(fvals.mean())
    lhs_se = float(fvals.std(ddof=1) / math.sqrt(reps)) if reps > 1 else 0.0
    if setup.optimizer == "sgd":
        rhs = sgd_descent_rhs(f_t, g_t, eta, b, L, nu, p, sigma_p)
    elif setup.beta == 0.0 or setup.optimizer == "muon0-reference":
        rhs = muon_descent_rhs(f_t, g_t, eta, b, L, nu, p, sigma_p, setup.n_cols)
    else:
        if t == 0:
            m0_dev = float(branch_m0.mean()) if branch_m0 is not None else 0.0
        else:
            if m0_dev_trajectory is None:
                raise ValueError("momentum check at t >= 1 needs the realized "
                                 "||M_0 - grad f(W_0)||_F of the trajectory")
            m0_dev = m0_dev_trajectory
        rhs = muon_momentum_descent_rhs(
            f_t, g_t, t, setup.step_sched, setup.batch_sched, setup.beta,
            L, nu, p, sigma_p, setup.n_cols, m0_dev)
    guard = _FLOAT_GUARD * max(1.0, abs(rhs))
    violated = (lhs - VIOLATION_SIGMAS * lhs_se) > rhs + guard
    return DescentCheckRow(t=t, lhs=lhs, lhs_se=lhs_se, rhs=rhs,
                           margin=rhs - lhs, status="fail" if violated else "pass",
                           replicates=reps)


def run_descent_suite(setup: RunSetup, steps, R: int) -> list:
    """Replay one trajectory, then branch-check the bound at chosen steps."""
    trace = run_trace(setup, seed=0, keep_states=True)
    rows = []
    for t in sorted({int(s) for s in steps}):
        if t >= len(trace):
            continue
        w_t, m_prev = trace.states[t]
        rows.append(descent_check(setup, w_t, m_prev, t, R,
                                  m0_dev_trajectory=trace.m0_deviation))
    return rows


# ---------------------------------------------------------------------------
# Cesaro means, rate fits, envelopes


def cesaro_mean(stats: EnsembleStats, power: int, start: int, stop: int) -> float:
    """Step-size weighted mean of mean_g^power over window [start, stop)."""
    if not 0 <= start < stop <= len(stats.eta):
        raise ValueError(f"empty or out-of-range window [{start}, {stop})")
    eta = stats.eta[start:stop]
    vals = stats.mean_g2[start:stop] if power == 2 else stats.mean_g[start:stop]
    return float((eta * vals).sum() / eta.sum())


@dataclass(frozen=True)
class RateFit:
    abscissa: np.ndarray
    ordinate: np.ndarray
    slope: float
    intercept: float
    residual: float
    target_slope: Optional[float]


def _least_squares(x: np.ndarray, y: np.ndarray, target):
    slope, intercept = np.polyfit(x, y, 1)
    resid = float(np.sqrt(np.mean((y - (slope * x + intercept)) ** 2)))
    return RateFit(abscissa=x, ordinate=y, slope=float(slope),
                   intercept=float(intercept), residual=resid,
                   target_slope=target)


def fit_rate(stats: EnsembleStats, metric: str, horizons, start: int = 0,
             target_slope: Optional[float] = None) -> RateFit:
    """Log-log least squares of the chosen metric.

    cesaro-g / cesaro-g2 regress against log10 of the window step-size sum
    (target slope -1); min-grad regresses the running minimum of the mean
    gradient norm against log10 of the horizon.
    """
    horizons = sorted({int(h) for h in horizons})
    if len(horizons) < 5:
        raise ValueError("need at least 5 horizons")
    if horizons[-1] > len(stats.eta) or horizons[0] <= start:
        raise ValueError("horizons must lie inside the trace")
    if metric == "min-grad":
        x = np.log10(np.array(horizons, float))
        y = np.log10([stats.mean_g[:h].min() for h in horizons])
    elif metric in ("cesaro-g", "cesaro-g2"):
        power = 2 if metric == "cesaro-g2" else 1
        x = np.log10([stats.eta[start:h].sum() for h in horizons])
        y = np.log10([cesaro_mean(stats, power, start, h) for h in horizons])
    else:
        raise ValueError(f"unknown metric {metric!r}")
    if x[-1] - x[0] < 1.5:
        raise ValueError(f"abscissa spans {x[-1] - x[0]:.2f} < 1.5 decades")
    return _least_squares(x, np.asarray(y), target_slope)


@dataclass(frozen=True)
class EnvelopeRow:
    check_id: str
    horizon: int
    lhs: float
    rhs: float
    margin: float
    status: str          # "pass" | "fail" | "vacuous"


def sgd_window_start(setup: RunSetup) -> int:
    """Smallest t with eta_t^nu <= 0.9 * (2 / L)."""
    L = setup.objective.mean_L
    target = 0.9 * 2.0 / L
    if setup.step_sched.at(0) ** setup.nu <= target:
        return 0
    t = (setup.step_sched.eta / target ** (1.0 / setup.nu)) ** (1.0 / setup.step_sched.a)
    return max(0, math.ceil(t - 1.0))


def _term(coefficient: float, cap) -> float:
    """coefficient * cap with a zero coefficient killing the term outright,
    so sigma = 0 runs drop their noise contribution even under a divergent
    batch series."""
    if coefficient == 0.0:
        return 0.0
    return coefficient * cap.value


def upper_envelope_rows(setup: RunSetup, stats: EnsembleStats, horizons) -> list:
    """Weighted Cesaro means against the theorem-constant envelopes."""
    L, nu, p = setup.objective.mean_L, setup.nu, setup.p
    n = setup.n_cols
    caps = appendix_caps(setup.step_sched, setup.batch_sched, nu, p, setup.beta)
    rows = []
    if setup.optimizer == "sgd":
        t1 = sgd_window_start(setup)
        eta_bar = setup.step_sched.at(t1)
        den = 2.0 - L * eta_bar ** nu
        c1 = 2.0 * (float(stats.mean_f[t1]) - setup.objective.f_star()) / den
        c2 = (1.0 - nu) * L / ((1.0 + nu) * den)
        c3 = 2.0 ** (4.0 - (nu + p)) * L * setup.sigma_p / ((1.0 + nu) * den)
        tail = _term(c2, caps["eta_pow"]) + _term(c3, caps["eta_pow_over_batch"])
        check_id, power, start = "envelope-upper-sgd", 2, t1
        numerator = c1 + tail
    else:
        beta = setup.beta
        c1 = float(stats.mean_f[0]) - setup.objective.f_star()
        c2 = L * n ** ((1.0 + nu) / 2.0) / (1.0 + nu)
        sigma = setup.sigma
        if beta == 0.0:
            tail = (_term(c2, caps["eta_pow"])
                    + _term(2.0 ** (2.0 / p) * math.sqrt(n) * sigma,
                            caps["eta_over_batch_root"]))
        else:
            m0 = stats.m0_dev_mean or 0.0
            tail = (_term(c2, caps["eta_pow"])
                    + _term(2.0 * math.sqrt(n) * m0, caps["eta_beta"])
                    + _term(2.0 * L * n ** ((1.0 + nu) / 2.0),
                            caps["momentum_step"])
                    + _term(2.0 ** (2.0 / p) * (1.0 - beta) * math.sqrt(n) * sigma,
                            caps["momentum_batch"]))
        check_id, power, start = "envelope-upper-muon", 1, 0
        numerator = c1 + tail
    if not math.isfinite(numerator):
        return [EnvelopeRow(check_id, int(h), math.nan, math.inf, math.inf,
                            "vacuous") for h in horizons]
    for h in sorted({int(h) for h in horizons}):
        if h <= start or h > len(stats.eta):
            continue
        lhs = cesaro_mean(stats, power, start, h)
        rhs = numerator / stats.eta[start:h].sum()
        ok = lhs <= rhs * (1.0 + 1e-9)
        rows.append(EnvelopeRow(check_id, h, lhs, rhs, rhs - lhs,
                                "pass" if ok else "fail"))
    return rows


def lower_window_start(stats: EnsembleStats, fraction: float = 0.1) -> Optional[int]:
    """First step where the mean gradient norm falls to the given fraction
    of its initial value (the constructive neighborhood-entry stand-in)."""
    hits = np.flatnonzero(stats.mean_g <= fraction * stats.mean_g[0])
    return int(hits[0]) if hits.size else None


def lower_envelope_rows(setup: RunSetup, stats: EnsembleStats, horizons) -> list:
    """Cesaro means against C / sum(eta), with C the windowed infimum of the
    mean risk drop (divided by sqrt(n) for the orthogonalized update).
    A missing window or nonpositive C yields vacuous rows, never a pass."""
    is_sgd = setup.optimizer == "sgd"
    check_id = "envelope-lower-sgd" if is_sgd else "envelope-lower-muon"
    power = 2 if is_sgd else 1
    t2 = lower_window_start(stats)
    rows = []
    horizons = sorted({int(h) for h in horizons})
    if t2 is None or t2 + 1 >= len(stats.mean_f):
        return [EnvelopeRow(check_id, h, math.nan, math.nan, math.nan, "vacuous")
                for h in horizons]
    # infimum of the mean risk drop over steps strictly after the window
    # start (the drop at the start itself is identically zero)
    c_raw = float((stats.mean_f[t2] - stats.mean_f[t2 + 1:]).min())
    c_const = c_raw if is_sgd else c_raw / math.sqrt(setup.n_cols)
    if c_const <= 0.0:
        return [EnvelopeRow(check_id, h, math.nan, math.nan, math.nan, "vacuous")
                for h in horizons]
    for h in horizons:
        if h <= t2 or h > len(stats.eta):
            continue
        lhs = cesaro_mean(stats, power, t2, h)
        rhs = c_const / stats.eta[t2:h].sum()
        ok = lhs >= rhs * (1.0 - 1e-9)
        rows.append(EnvelopeRow(check_id, h, lhs, rhs, lhs - rhs,
                                "pass" if ok else "fail"))
    return rows
