"""Dense small-matrix kernels: Frobenius/nuclear norms, one-sided Jacobi SVD,
exact polar factor, and Newton-Schulz orthogonalization.

Everything here is plain float64 numpy. Matrices are ordinary 2-D arrays;
``polar_factor_stack`` additionally accepts a stack of matrices sharing one
shape, which is what the Monte Carlo branch checks in the harness lean on.
"""
from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np

TOL_ORTH = 1e-8
TOL_RECON = 1e-10
RANK_TOL = 1e-12
NS_TOL = 1e-6
DIVERGENCE_CAP = 1e6

_JACOBI_EPS = 2.0 ** -48
_JACOBI_MAX_SWEEPS = 64


class ShapeError(ValueError):
    """Operands have incompatible shapes."""


class ZeroDirectionError(ValueError):
    """The input matrix is exactly zero, so no direction can be extracted."""


class DegenerateRankError(ValueError):
    """Input is numerically rank deficient.

    ``completion`` carries the orthonormal factor restricted to the numerical
    rank subspace and completed deterministically, so callers that can accept
    a non-unique minimizer may still proceed.
    """

    def __init__(self, rank: int, cols: int, completion: np.ndarray):
        super().__init__(f"numerical rank {rank} < {cols} columns")
        self.rank = rank
        self.completion = completion


class SvdConvergenceError(RuntimeError):
    def __init__(self, residual: float, sweeps: int):
        super().__init__(
            f"Jacobi sweeps did not converge after {sweeps} sweeps "
            f"(off-diagonal residual {residual:.3e})"
        )
        self.residual = residual


class NewtonSchulzDivergenceError(RuntimeError):
    def __init__(self, iteration: int, norm: float):
        super().__init__(
            f"iterate norm {norm:.3e} exceeded the divergence cap at "
            f"iteration {iteration}"
        )
        self.iteration = iteration


def as_matrix(w) -> np.ndarray:
    w = np.asarray(w, dtype=np.float64)
    if w.ndim != 2 or w.shape[0] < 1 or w.shape[1] < 1:
        raise ShapeError(f"expected a 2-D matrix, got shape {w.shape}")
    if not np.isfinite(w).all():
        raise ValueError("matrix entries must be finite")
    return w


def frobenius_norm(w) -> float:
    w = as_matrix(w)
    return float(np.sqrt((w * w).sum()))


def inner_product(a, b) -> float:
    a, b = as_matrix(a), as_matrix(b)
    if a.shape != b.shape:
        raise ShapeError(f"shape mismatch {a.shape} vs {b.shape}")
    return float((a * b).sum())


@dataclass(frozen=True)
class SvdResult:
    u: np.ndarray                # (m, r)
    singular_values: np.ndarray  # (r,) nonincreasing
    v: np.ndarray                # (n, r)
    rank: int

    def reconstruct(self) -> np.ndarray:
        return (self.u * self.singular_values) @ self.v.T


@lru_cache(maxsize=None)
def _round_robin_rounds(n: int) -> tuple:
    """All column pairs partitioned into rounds of disjoint pairs (the
    circle method), so every pair in a round can rotate simultaneously."""
    players = list(range(n)) + ([None] if n % 2 else [])
    k = len(players)
    rounds = []
    for _ in range(k - 1):
        pairs = []
        for i in range(k // 2):
            x, y = players[i], players[k - 1 - i]
            if x is not None and y is not None:
                pairs.append((min(x, y), max(x, y)))
        players = [players[0], players[-1]] + players[1:-1]
        if pairs:
            rounds.append((tuple(p for p, _ in pairs), tuple(q for _, q in pairs)))
    return tuple(rounds)


def _jacobi_sweep_cols(a: np.ndarray, v: np.ndarray) -> np.ndarray:
    """One sweep of one-sided Jacobi rotations over a (B, m, n) stack.

    Visits every column pair once, in rounds of disjoint pairs rotated
    simultaneously, accumulating the same rotations in ``v``. Returns the
    per-item count of rotations applied, so callers can stop once a full
    sweep is a no-op.

    Columns whose norm has collapsed below 1e-15 of the largest column are
    rounding-noise ghosts that cannot be decorrelated to relative precision;
    they are left alone (and fall far under the rank tolerance later).
    """
    n = a.shape[2]
    rotated = np.zeros(a.shape[0], dtype=np.int64)
    if n < 2:
        return rotated
    floor2 = 1e-30 * np.einsum("bij,bij->bj", a, a).max(axis=1)[:, None]
    for ps, qs in _round_robin_rounds(n):
        ap = a[:, :, ps]
        aq = a[:, :, qs]
        app = np.einsum("bik,bik->bk", ap, ap)
        aqq = np.einsum("bik,bik->bk", aq, aq)
        apq = np.einsum("bik,bik->bk", ap, aq)
        need = (np.abs(apq) > _JACOBI_EPS * np.sqrt(app * aqq)) \
            & (app > floor2) & (aqq > floor2)
        if not need.any():
            continue
        rotated += need.sum(axis=1)
        apq_safe = np.where(need, apq, 1.0)
        tau = (aqq - app) / (2.0 * apq_safe)
        # tau == 0 (parallel equal-norm columns) takes the 45-degree
        # rotation, not a no-op
        t = np.where(tau >= 0, 1.0, -1.0) / (np.abs(tau) + np.sqrt(1.0 + tau * tau))
        c = 1.0 / np.sqrt(1.0 + t * t)
        s = c * t
        c = np.where(need, c, 1.0)[:, None, :]
        s = np.where(need, s, 0.0)[:, None, :]
        new_p = c * ap - s * aq
        new_q = s * ap + c * aq
        a[:, :, ps] = new_p
        a[:, :, qs] = new_q
        vp = v[:, :, ps]
        vq = v[:, :, qs]
        v[:, :, ps] = c * vp - s * vq
        v[:, :, qs] = s * vp + c * vq
    return rotated


def _jacobi_factor(a: np.ndarray):
    """Column-orthogonalize a (B, m, n) stack, m >= n.

    Returns (rotated columns, accumulated right rotations V, singular values),
    with singular values sorted nonincreasing per item and columns reordered
    to match. V is exactly orthogonal (a product of plane rotations).
    """
    a = np.array(a, dtype=np.float64)
    bsz, m, n = a.shape
    v = np.tile(np.eye(n), (bsz, 1, 1))
    for _ in range(_JACOBI_MAX_SWEEPS):
        if not _jacobi_sweep_cols(a, v).any():
            break
    else:
        g = np.einsum("bip,biq->bpq", a, a)
        d = np.sqrt(np.einsum("bpp->bp", g))
        den = np.maximum(d[:, :, None] * d[:, None, :], 1e-300)
        off = np.abs(g / den - np.eye(n))
        raise SvdConvergenceError(float(off.max()), _JACOBI_MAX_SWEEPS)
    s = np.sqrt(np.einsum("bij,bij->bj", a, a))
    order = np.argsort(-s, axis=1, kind="stable")
    s = np.take_along_axis(s, order, axis=1)
    a = np.take_along_axis(a, order[:, None, :], axis=2)
    v = np.take_along_axis(v, order[:, None, :], axis=2)
    return a, v, s


def svd(w, rank_tol: float = RANK_TOL) -> SvdResult:
    """Thin SVD by one-sided Jacobi, truncated to the numerical rank."""
    w = as_matrix(w)
    m, n = w.shape
    flip = m < n
    a, v, s = _jacobi_factor((w.T if flip else w)[None])
    a, v, s = a[0], v[0], s[0]
    smax = s[0] if s.size else 0.0
    r = int((s > rank_tol * smax).sum()) if smax > 0 else 0
    u = a[:, :r] / s[:r]
    res = (u, s[:r], v[:, :r])
    if flip:
        res = (res[2], res[1], res[0])
    return SvdResult(u=res[0], singular_values=res[1], v=res[2], rank=r)


def nuclear_norm(w) -> float:
    """Sum of singular values (dual norm of the spectral norm)."""
    w = as_matrix(w)
    if not w.any():
        return 0.0
    a = w.T if w.shape[0] < w.shape[1] else w
    _, _, s = _jacobi_factor(a[None])
    return float(s.sum())


def _complete_columns(q: np.ndarray, k: int) -> np.ndarray:
    """Append k orthonormal columns to q (d x r), chosen deterministically.

    Each new column is the canonical basis vector with the largest residual
    after projection onto the current span, Gram-Schmidt orthogonalized
    (twice, for stability) and normalized.
    """
    d, r = q.shape
    basis = q
    out = []
    for _ in range(k):
        resid = np.eye(d) - basis @ basis.T
        norms = np.sqrt((resid * resid).sum(axis=0))
        j = int(np.argmax(norms))
        w = resid[:, j]
        w = w - basis @ (basis.T @ w)
        w = w / np.sqrt((w * w).sum())
        out.append(w)
        basis = np.column_stack([basis, w])
    return np.column_stack(out) if out else np.zeros((d, 0))


def _polar_stack_full_rank(ws: np.ndarray):
    """Polar factors for a (B, m, n) stack, m >= n.

    Returns (stack of U V^T, per-item rank). Rank-deficient items get the
    deterministic completion; callers that must reject them check the rank.
    """
    a, v, s = _jacobi_factor(ws)
    return _polar_from_factor(a, v, s)


def _polar_from_factor(a: np.ndarray, v: np.ndarray, s: np.ndarray):
    n = a.shape[2]
    smax = s[:, 0]
    ranks = (s > RANK_TOL * np.maximum(smax, 1e-300)[:, None]).sum(axis=1)
    ranks = np.where(smax > 0, ranks, 0)
    full = ranks == n
    out = np.empty_like(a)
    if full.any():
        u = a[full] / s[full][:, None, :]
        out[full] = u @ np.swapaxes(v[full], 1, 2)
    for i in np.flatnonzero(~full):
        r = int(ranks[i])
        u_r = a[i, :, :r] / s[i, :r]
        u_c = _complete_columns(u_r, n - r)
        out[i] = u_r @ v[i, :, :r].T + u_c @ v[i, :, r:].T
    return out, ranks


def polar_factor_svd(w) -> np.ndarray:
    """Closest orthonormal-column matrix to w in Frobenius distance.

    Raises ZeroDirectionError on zero input and DegenerateRankError (carrying
    the completed factor) when w is not of full column rank. For m < n the
    computation runs on the transpose and is transposed back, so the result
    has orthonormal rows instead.
    """
    w = as_matrix(w)
    if not w.any():
        raise ZeroDirectionError("zero matrix has no polar factor")
    flip = w.shape[0] < w.shape[1]
    a = w.T if flip else w
    out, ranks = _polar_stack_full_rank(a[None])
    o, r = out[0], int(ranks[0])
    if flip:
        o = o.T
    if r < min(w.shape):
        raise DegenerateRankError(r, min(w.shape), o)
    return o


def polar_with_nuclear(w):
    """(polar factor, nuclear norm, rank) in one factorization pass.

    Rank-deficient inputs get the deterministic completion rather than an
    error; callers that must reject them inspect the returned rank.
    """
    w = as_matrix(w)
    if not w.any():
        raise ZeroDirectionError("zero matrix has no polar factor")
    flip = w.shape[0] < w.shape[1]
    a = w.T if flip else w
    a_rot, v, s = _jacobi_factor(a[None])
    out, ranks = _polar_from_factor(a_rot, v, s)
    o = out[0].T if flip else out[0]
    return o, float(s[0].sum()), int(ranks[0])


def polar_factor_stack(ws: np.ndarray) -> np.ndarray:
    """Polar factors of a (B, m, n) stack with m >= n, completing any
    rank-deficient items deterministically instead of raising."""
    ws = np.asarray(ws, dtype=np.float64)
    if ws.ndim != 3 or ws.shape[1] < ws.shape[2]:
        raise ShapeError(f"expected a (B, m, n) stack with m >= n, got {ws.shape}")
    if not np.isfinite(ws).all():
        raise ValueError("matrix entries must be finite")
    norms = np.sqrt((ws * ws).sum(axis=(1, 2)))
    if (norms == 0).any():
        raise ZeroDirectionError("stack contains a zero matrix")
    out, _ = _polar_stack_full_rank(ws)
    return out


@dataclass(frozen=True)
class NewtonSchulzConfig:
    """Odd matrix polynomial x -> a x + b x^3 + c x^5 applied to the singular
    values, iterated a fixed number of times."""

    coeff_a: float
    coeff_b: float
    coeff_c: float
    iterations: int

    def __post_init__(self):
        if self.iterations < 1:
            raise ValueError("iterations must be >= 1")

    @property
    def convergent_verified(self) -> bool:
        # the map must fix +1 for the iteration to settle on the polar factor
        return abs(self.coeff_a + self.coeff_b + self.coeff_c - 1.0) <= 1e-12

    @classmethod
    def cubic(cls, iterations: int = 30) -> "NewtonSchulzConfig":
        """Conservative default: x -> (3x - x^3)/2, contractive on (0, sqrt(3))."""
        return cls(1.5, -0.5, 0.0, iterations)

    @classmethod
    def quintic(cls, iterations: int = 10) -> "NewtonSchulzConfig":
        """Aggressive preset: x -> (15x - 10x^3 + 3x^5)/8, steeper near 0 and
        third-order near the fixed point, stable on (0, 1]."""
        return cls(15.0 / 8.0, -10.0 / 8.0, 3.0 / 8.0, iterations)


def newton_schulz_orthogonalize(
    w, cfg: NewtonSchulzConfig, divergence_cap: float = DIVERGENCE_CAP
) -> np.ndarray:
    """Approximate the polar factor without an SVD.

    Starts from w normalized to unit Frobenius norm and iterates
    X <- a X + b (X X^T) X + c (X X^T)^2 X for cfg.iterations steps.
    """
    w = as_matrix(w)
    if not w.any():
        raise ZeroDirectionError("zero matrix has no orthogonalization")
    flip = w.shape[0] < w.shape[1]
    x = (w.T if flip else w).copy()
    x /= np.sqrt((x * x).sum())
    a, b, c = cfg.coeff_a, cfg.coeff_b, cfg.coeff_c
    for k in range(cfg.iterations):
        g = x.T @ x
        if c == 0.0:
            x = a * x + b * (x @ g)
        else:
            x = a * x + x @ (b * g + c * (g @ g))
        nrm = (x * x).sum()
        if not np.isfinite(nrm) or nrm > divergence_cap * divergence_cap:
            raise NewtonSchulzDivergenceError(k, float(np.sqrt(nrm)))
    return x.T if flip else x
