"""Step-size and batch-size sequences with summability diagnostics.

Seven series drive the convergence conditions of the three update rules:

    eta                  sum eta_t                    (must diverge)
    eta_pow              sum eta_t^(1+nu)
    eta_pow_over_batch   sum eta_t^(1+nu) / b_t^(p-1)
    eta_over_batch_root  sum eta_t / b_t^((p-1)/p)
    eta_beta             sum eta_t beta^t
    momentum_step        sum_t eta_t sum_{i=1..t} beta^i eta_{t-i}^nu
    momentum_batch       sum_t eta_t sum_{i=0..t} beta^i / b_{t-i}^((p-1)/p)

``appendix_caps`` returns a closed-form dominating constant for each series
(or flags it divergent in that parameter regime), and ``partial_sums`` does
the direct summation the caps are checked against. Two caps are tightened
relative to the obvious first attempts, which direct summation refutes:

* momentum_step uses (beta/(1-beta)) times the eta_pow cap. The cruder
  closed form eta^(1+nu)/(1-beta) bounds every term of the series but not
  their sum (a=0.7, nu=1, beta=0.9 reaches 15.0 against 10.0 by T=1e5).
* the geometric-batch caps keep the t = 0 term of the geometric sum,
  sum_t r^t <= 1/(1-r), so each carries a delta-power numerator; dropping
  it is refuted at p=2, delta=2, b=8, eta=0.3, a=0.7 (0.0143 vs 0.01125).

Divergence of sum eta_t is witnessed, not proven: the partial sums must
track the closed-form integral lower bound at every checked horizon.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

SERIES = (
    "eta",
    "eta_pow",
    "eta_pow_over_batch",
    "eta_over_batch_root",
    "eta_beta",
    "momentum_step",
    "momentum_batch",
)

_REQUIRED = {
    "sgd": ("eta_pow", "eta_pow_over_batch"),
    "muon0": ("eta_pow", "eta_over_batch_root"),
    "muon": ("eta_pow", "eta_beta", "momentum_step", "momentum_batch"),
}

DEFAULT_HORIZONS = (10, 100, 1_000, 10_000, 100_000)
WITNESS_FLOOR = 0.5


@dataclass(frozen=True)
class StepSchedule:
    eta: float
    a: float

    def __post_init__(self):
        if self.eta <= 0:
            raise ValueError("eta must be positive")
        if not 0.0 < self.a <= 1.0:
            raise ValueError("a must lie in (0, 1]")

    def at(self, t: int) -> float:
        return self.eta / (t + 1.0) ** self.a

    def values(self, T: int) -> np.ndarray:
        return self.eta / (np.arange(T) + 1.0) ** self.a

    def sum_lower_bound(self, T: int) -> float:
        """Integral lower bound on the first T terms."""
        if self.a == 1.0:
            return self.eta * math.log(T + 1.0)
        return self.eta / (1.0 - self.a) * ((T + 1.0) ** (1.0 - self.a) - 1.0)


@dataclass(frozen=True)
class BatchSchedule:
    kind: str = "constant"
    b: int = 1
    delta: float = 2.0

    def __post_init__(self):
        if self.kind not in ("constant", "geometric"):
            raise ValueError(f"unknown batch schedule kind {self.kind!r}")
        if self.b < 1:
            raise ValueError("b must be a positive integer")
        if self.kind == "geometric" and self.delta <= 1.0:
            raise ValueError("geometric growth needs delta > 1")

    def at(self, t: int) -> int:
        """ceil(b * delta^t) as an exact integer, however large."""
        if self.kind == "constant":
            return self.b
        log2bt = math.log2(self.b) + t * math.log2(self.delta)
        if log2bt <= 53:
            return math.ceil(self.b * self.delta ** t)
        # big-integer construction from a 53-bit mantissa; the discreteness
        # of ceil is immaterial at this magnitude
        ip = int(log2bt)
        mant = int(2.0 ** (log2bt - ip) * 2.0 ** 52)
        return mant << (ip - 52)

    def log_at(self, t: int) -> float:
        if self.kind == "constant":
            return math.log(self.b)
        log2bt = math.log2(self.b) + t * math.log2(self.delta)
        if log2bt <= 53:
            return math.log(self.at(t))
        return math.log(self.b) + t * math.log(self.delta)

    def float_at(self, t: int) -> float:
        """Float view for traces; saturates instead of overflowing."""
        lb = self.log_at(t)
        if lb >= 700:
            return float("inf")
        return float(self.at(t)) if lb <= 36 else math.exp(lb)

    def log_values(self, T: int) -> np.ndarray:
        if self.kind == "constant":
            return np.full(T, math.log(self.b))
        t = np.arange(T)
        exact = math.log2(self.b) + t * math.log2(self.delta) <= 53
        out = math.log(self.b) + t * math.log(self.delta)
        for k in np.flatnonzero(exact):
            out[k] = math.log(self.at(int(k)))
        return out


def step_size_at(s: StepSchedule, t: int) -> float:
    return s.at(t)


def batch_size_at(s: BatchSchedule, t: int) -> int:
    return s.at(t)


@dataclass(frozen=True)
class Cap:
    value: float          # math.inf when the regime makes the series diverge
    note: str = ""

    @property
    def finite(self) -> bool:
        return math.isfinite(self.value)


def _eta_pow_cap(step: StepSchedule, nu: float) -> Cap:
    q = (1.0 + nu) * step.a
    if q <= 1.0:
        return Cap(math.inf, f"(1+nu)a = {q:.4g} <= 1, p-series diverges")
    return Cap(q * step.eta ** (1.0 + nu) / (q - 1.0))


def appendix_caps(step: StepSchedule, batch: BatchSchedule, nu: float,
                  p: float, beta: float) -> dict:
    """Closed-form dominating constants per series, math.inf where the
    parameter regime makes the series divergent."""
    if not 1.0 < p <= 2.0:
        raise ValueError("p must lie in (1, 2]")
    if not 0.0 <= beta < 1.0:
        raise ValueError("beta must lie in [0, 1)")
    eta, caps = step.eta, {}
    caps["eta"] = Cap(math.inf, "diverges by design; see the witness lower bound")
    ep = _eta_pow_cap(step, nu)
    caps["eta_pow"] = ep
    x = (p - 1.0) / p
    if batch.kind == "geometric":
        # full geometric sums from t = 0: sum r^t <= 1/(1-r) = d/(d-1) at
        # r = 1/d, hence the extra delta-power in each numerator
        d_pow = batch.delta ** (p - 1.0)
        caps["eta_pow_over_batch"] = Cap(
            eta ** (1.0 + nu) * d_pow / (batch.b ** (p - 1.0) * (d_pow - 1.0)))
        caps["eta_over_batch_root"] = Cap(
            eta * batch.delta ** x / (batch.b ** x * (batch.delta ** x - 1.0)))
        caps["momentum_batch"] = Cap(
            eta * batch.delta ** x
            / (batch.b ** x * (1.0 - beta) * (batch.delta ** x - 1.0)))
    else:
        caps["eta_pow_over_batch"] = Cap(
            ep.value / batch.b ** (p - 1.0) if ep.finite else math.inf,
            "" if ep.finite else ep.note)
        caps["eta_over_batch_root"] = Cap(
            math.inf, "constant batch leaves a multiple of the divergent step sum")
        caps["momentum_batch"] = Cap(
            math.inf, "constant batch leaves a multiple of the divergent step sum")
    caps["eta_beta"] = Cap(eta / (1.0 - beta))
    if beta == 0.0:
        caps["momentum_step"] = Cap(0.0, "empty inner sum at beta = 0")
    elif ep.finite:
        caps["momentum_step"] = Cap(beta / (1.0 - beta) * ep.value)
    else:
        caps["momentum_step"] = Cap(math.inf, ep.note)
    return caps


@dataclass
class SummabilityReport:
    horizon: int
    partial: dict                      # series -> partial sum at horizon
    caps: dict                         # series -> Cap
    eta_lower_bound: float
    witness_ratio: float               # partial eta sum / integral lower bound
    checkpoints: list = field(default_factory=list)  # (T, {series: sum}) rows

    def rows(self):
        """(series, T, partial_sum, cap, status) rows for every checkpoint."""
        out = []
        for T, sums in self.checkpoints:
            for name in SERIES:
                cap = self.caps[name]
                if name == "eta":
                    status = "diverges-as-required"
                elif not cap.finite:
                    status = "divergent-regime"
                elif sums[name] <= cap.value * (1.0 + 1e-12):
                    status = "ok"
                else:
                    status = "cap-exceeded"
                out.append((name, T, sums[name],
                            cap.value if cap.finite else math.inf, status))
        return out


def partial_sums(step: StepSchedule, batch: BatchSchedule, nu: float, p: float,
                 beta: float, T: int, checkpoints=None) -> SummabilityReport:
    """Direct summation of all seven series to horizon T."""
    if T < 1:
        raise ValueError("T must be >= 1")
    marks = sorted({int(c) for c in (checkpoints or []) if 1 <= int(c) <= T} | {T})
    eta = step.values(T)
    logb = batch.log_values(T)
    x = (p - 1.0) / p
    terms = {
        "eta": eta,
        "eta_pow": eta ** (1.0 + nu),
        "eta_pow_over_batch": eta ** (1.0 + nu) * np.exp(-(p - 1.0) * logb),
        "eta_over_batch_root": eta * np.exp(-x * logb),
        "eta_beta": eta * beta ** np.arange(T),
    }
    # the two convolution series by first-order recursion in the inner sum
    eta_nu = eta ** nu
    binv = np.exp(-x * logb)
    u = np.zeros(T)
    v = np.zeros(T)
    v[0] = binv[0]
    for t in range(1, T):
        u[t] = beta * (u[t - 1] + eta_nu[t - 1])
        v[t] = binv[t] + beta * v[t - 1]
    terms["momentum_step"] = eta * u
    terms["momentum_batch"] = eta * v

    cums = {k: np.cumsum(val) for k, val in terms.items()}
    caps = appendix_caps(step, batch, nu, p, beta)
    rows = [(Tm, {k: float(c[Tm - 1]) for k, c in cums.items()}) for Tm in marks]
    partial = rows[-1][1]
    lower = step.sum_lower_bound(T)
    return SummabilityReport(
        horizon=T,
        partial=partial,
        caps=caps,
        eta_lower_bound=lower,
        witness_ratio=partial["eta"] / lower,
        checkpoints=rows,
    )


@dataclass(frozen=True)
class ConditionReport:
    which: str
    passed: bool
    failures: tuple          # series names (or "eta-divergence") that failed
    report: SummabilityReport


def check_conditions(step: StepSchedule, batch: BatchSchedule, nu: float,
                     p: float, beta: float, which: str,
                     horizons=DEFAULT_HORIZONS) -> ConditionReport:
    """Pass iff the required series stay under finite caps at every checked
    horizon and the step-size sum tracks its divergence witness."""
    if which not in _REQUIRED:
        raise ValueError(f"which must be one of {sorted(_REQUIRED)}")
    horizons = sorted({int(h) for h in horizons})
    T = horizons[-1]
    rep = partial_sums(step, batch, nu, p, beta, T, checkpoints=horizons)
    failures = []
    for name in _REQUIRED[which]:
        cap = rep.caps[name]
        if not cap.finite:
            failures.append(name)
            continue
        for _, sums in rep.checkpoints:
            if sums[name] > cap.value * (1.0 + 1e-12):
                failures.append(name)
                break
    for Tm, sums in rep.checkpoints:
        if sums["eta"] < WITNESS_FLOOR * step.sum_lower_bound(Tm):
            failures.append("eta-divergence")
            break
    return ConditionReport(which=which, passed=not failures,
                           failures=tuple(dict.fromkeys(failures)), report=rep)
