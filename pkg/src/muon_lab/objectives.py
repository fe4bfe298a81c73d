"""Synthetic empirical risks with a declared Holder smoothness exponent.

Two component families, both with analytic gradients and minimum 0 at the
anchor:

* powered-distance: f_i(W) = scale/(1+nu) * sum |W - A_i|^(1+nu), gradient
  entrywise scale * sign(x)|x|^nu. Exact, tunable exponent nu in (0, 1];
  convex; unbounded above.
* geman-mcclure: f_i(W) = scale * sum (x^2 / (1 + x^2)) at x = W - A_i,
  gradient entrywise 2*scale*x/(1+x^2)^2. Smooth (nu = 1), nonconvex,
  bounded above by scale*m*n, which makes the component supremum finite.

Evaluation broadcasts over leading axes, so a (R, m, n) stack of iterates is
evaluated in one call.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .linalg import ShapeError, as_matrix

FAMILIES = ("powered-distance", "geman-mcclure")


@dataclass(frozen=True)
class ComponentSpec:
    family: str
    anchor: np.ndarray
    scale: float = 1.0
    nu: float = 1.0

    def __post_init__(self):
        object.__setattr__(self, "anchor", as_matrix(self.anchor))
        if self.family not in FAMILIES:
            raise ValueError(f"unknown family {self.family!r}")
        if not 0.0 < self.nu <= 1.0:
            raise ValueError("nu must lie in (0, 1]")
        if self.family == "geman-mcclure" and self.nu != 1.0:
            raise ValueError("geman-mcclure has nu fixed to 1")
        if self.scale <= 0:
            raise ValueError("scale must be positive")

    def holder_constant(self) -> float:
        """A certified Holder constant for the gradient map.

        powered-distance: per coordinate |sign(x)|x|^nu - sign(y)|y|^nu|
        <= 2^(1-nu) |x-y|^nu; lifting the coordinatewise bound to the
        Frobenius norm costs an extra (m n)^((1-nu)/2) factor.
        geman-mcclure: the second derivative of x^2/(1+x^2) peaks at 2.
        """
        m, n = self.anchor.shape
        if self.family == "geman-mcclure":
            return 2.0 * self.scale
        return self.scale * 2.0 ** (1.0 - self.nu) * (m * n) ** ((1.0 - self.nu) / 2.0)

    def f_star(self) -> float:
        return 0.0

    def f_starstar(self) -> float:
        """Supremum of the component (inf for the unbounded family)."""
        if self.family == "geman-mcclure":
            m, n = self.anchor.shape
            return self.scale * m * n
        return float("inf")


@dataclass(frozen=True)
class HolderObjective:
    components: tuple
    declared_nu: float = field(init=False)
    declared_L: tuple = field(init=False)

    def __post_init__(self):
        comps = tuple(self.components)
        if not comps:
            raise ValueError("need at least one component")
        shape = comps[0].anchor.shape
        nu = comps[0].nu
        for c in comps:
            if c.anchor.shape != shape:
                raise ShapeError("components must share the anchor shape")
            if c.nu != nu:
                raise ValueError("components must share nu")
        object.__setattr__(self, "components", comps)
        object.__setattr__(self, "declared_nu", nu)
        object.__setattr__(self, "declared_L", tuple(c.holder_constant() for c in comps))
        # (N, m, n) anchor tensor for broadcast evaluation
        object.__setattr__(self, "_anchors", np.stack([c.anchor for c in comps]))
        object.__setattr__(self, "_scales", np.array([c.scale for c in comps]))

    @property
    def n_components(self) -> int:
        return len(self.components)

    @property
    def shape(self):
        return self.components[0].anchor.shape

    @property
    def mean_L(self) -> float:
        return float(np.mean(self.declared_L))

    def f_star(self) -> float:
        """Mean of the component infima (a global lower bound on the risk)."""
        return 0.0


def _check_shape(obj: HolderObjective, w: np.ndarray):
    if w.shape[-2:] != obj.shape:
        raise ShapeError(f"iterate shape {w.shape[-2:]} != objective shape {obj.shape}")


def _family_eval(c: ComponentSpec, x: np.ndarray) -> np.ndarray:
    if c.family == "powered-distance":
        return c.scale / (1.0 + c.nu) * (np.abs(x) ** (1.0 + c.nu)).sum(axis=(-2, -1))
    return c.scale * (x * x / (1.0 + x * x)).sum(axis=(-2, -1))


def _family_grad(c: ComponentSpec, x: np.ndarray) -> np.ndarray:
    if c.family == "powered-distance":
        # sign(0) = 0 fixes the kink value for nu < 1
        return c.scale * np.sign(x) * np.abs(x) ** c.nu
    d = 1.0 + x * x
    return 2.0 * c.scale * x / (d * d)


def eval_component(obj: HolderObjective, i: int, w) -> float | np.ndarray:
    c = obj.components[i]
    w = np.asarray(w, dtype=np.float64)
    _check_shape(obj, w)
    out = _family_eval(c, w - c.anchor)
    return float(out) if out.ndim == 0 else out


def grad_component(obj: HolderObjective, i: int, w) -> np.ndarray:
    c = obj.components[i]
    w = np.asarray(w, dtype=np.float64)
    _check_shape(obj, w)
    return _family_grad(c, w - c.anchor)


def eval_full(obj: HolderObjective, w) -> float | np.ndarray:
    """Mean of the component values, summed in ascending component order."""
    w = np.asarray(w, dtype=np.float64)
    _check_shape(obj, w)
    acc = _family_eval(obj.components[0], w - obj.components[0].anchor)
    for i in range(1, obj.n_components):
        c = obj.components[i]
        acc = acc + _family_eval(c, w - c.anchor)
    out = acc / obj.n_components
    return float(out) if np.ndim(out) == 0 else out


def grad_full(obj: HolderObjective, w) -> np.ndarray:
    w = np.asarray(w, dtype=np.float64)
    _check_shape(obj, w)
    acc = _family_grad(obj.components[0], w - obj.components[0].anchor)
    for i in range(1, obj.n_components):
        c = obj.components[i]
        acc = acc + _family_grad(c, w - c.anchor)
    return acc / obj.n_components


def component_grad_stack(obj: HolderObjective, w) -> np.ndarray:
    """(N, m, n) stack of all component gradients at a single iterate."""
    w = as_matrix(w)
    _check_shape(obj, w)
    return np.stack([grad_component(obj, i, w) for i in range(obj.n_components)])


def holder_ratio_probe(
    obj: HolderObjective, i: int, samples: int, seed: int, radius: float = 10.0
) -> float:
    """Empirical supremum of ||grad(W1)-grad(W2)||_F / ||W1-W2||_F^nu over
    sampled pairs around the anchor. Must stay below the declared constant."""
    if samples < 1:
        raise ValueError("samples must be >= 1")
    c = obj.components[i]
    rng = np.random.default_rng(seed)
    m, n = obj.shape
    best = 0.0
    chunk = 4096
    left = samples
    while left > 0:
        k = min(chunk, left)
        left -= k
        w1 = c.anchor + radius * rng.standard_normal((k, m, n))
        w2 = c.anchor + radius * rng.standard_normal((k, m, n))
        # include nearby pairs, where the Holder ratio is largest for nu < 1
        w2[::2] = w1[::2] + (w2[::2] - c.anchor) * 1e-3
        dg = _family_grad(c, w1 - c.anchor) - _family_grad(c, w2 - c.anchor)
        dw = np.sqrt(((w1 - w2) ** 2).sum(axis=(1, 2)))
        num = np.sqrt((dg * dg).sum(axis=(1, 2)))
        ok = dw > 0
        ratios = num[ok] / dw[ok] ** c.nu
        if ratios.size:
            best = max(best, float(ratios.max()))
    return best


@dataclass(frozen=True)
class SigmaBoundInputs:
    f_star: float
    f_starstar: float
    L: float
    nu: float

    def __post_init__(self):
        if self.f_starstar < self.f_star:
            raise ValueError("f_starstar must dominate f_star")


def sigma_bound_from_range(inputs, p: float) -> float:
    """sigma^p certificate for uniform index sampling over components whose
    values stay inside [f_star, f_starstar]:

        sigma^p = [ (1/N) sum_i ( 2 L_i^(1+nu) (f**_i - f*_i) / (2 L_i^nu - L_i)
                    + (1-nu) L_i / ((1+nu)(2 L_i^nu - L_i)) ) ]^(p/2)

    Each component must satisfy L_i < 2 L_i^nu, otherwise the certificate
    does not apply and a ValueError names the offender.
    """
    if not 1.0 < p <= 2.0:
        raise ValueError("p must lie in (1, 2]")
    inputs = list(inputs)
    total = 0.0
    for k, s in enumerate(inputs):
        den = 2.0 * s.L ** s.nu - s.L
        if den <= 0:
            raise ValueError(f"component {k}: L < 2 L^nu fails (L={s.L}, nu={s.nu})")
        if not np.isfinite(s.f_starstar):
            raise ValueError(f"component {k}: unbounded component, no finite certificate")
        total += (
            2.0 * s.L ** (1.0 + s.nu) * (s.f_starstar - s.f_star) / den
            + (1.0 - s.nu) * s.L / ((1.0 + s.nu) * den)
        )
    mean = total / len(inputs)
    return float(mean ** (p / 2.0))


def sigma_bound_for_objective(obj: HolderObjective, p: float) -> float:
    """Certificate for the uniform index-sampling oracle on this objective."""
    ins = [
        SigmaBoundInputs(c.f_star(), c.f_starstar(), L, c.nu)
        for c, L in zip(obj.components, obj.declared_L)
    ]
    return sigma_bound_from_range(ins, p)


def make_objective(
    family: str,
    shape,
    n_components: int,
    nu: float = 1.0,
    scale: float = 1.0,
    anchor_seed: int = 0,
    anchor_spread: float = 1.0,
) -> HolderObjective:
    """Objective preset: anchors drawn once from a seeded stream."""
    m, n = shape
    rng = np.random.default_rng(np.random.SeedSequence([int(anchor_seed), 0x0B1EC7]))
    comps = []
    for _ in range(n_components):
        anchor = anchor_spread * rng.standard_normal((m, n))
        comps.append(ComponentSpec(family, anchor, scale=scale, nu=nu))
    return HolderObjective(comps)
