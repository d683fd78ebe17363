"""Monotone Caratheodory maps a(x, t, xi) and their structural certificates.

A map belongs to the working class when a(x,t,0) = 0, it is p-coercively
monotone with constant alpha and satisfies the growth-continuity condition
with constant beta. These conditions hold "for a.e. (x,t), all xi, eta";
that is not decidable for a black-box callable, so verify_structure certifies
them on seeded Monte-Carlo samples with an explicit tolerance. Null sets are
invisible to the sampled certificate; this is a documented limitation.
"""

import math
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from .errors import ConfigurationError
from .fields import DEFAULT_SEED

# Pairs closer than this in xi are excluded from ratio estimates (0/0 guard).
PAIR_SEPARATION = 1e-10


@dataclass(frozen=True)
class ClassParams:
    """Structural constants: coercivity alpha, continuity beta, growth p."""

    alpha: float
    beta: float
    p: float

    def __post_init__(self):
        if not (0.0 < self.alpha <= self.beta):
            raise ConfigurationError(
                f"need 0 < alpha <= beta, got alpha={self.alpha}, beta={self.beta}"
            )
        if self.p < 2.0:
            raise ConfigurationError(f"growth exponent p must be >= 2, got {self.p}")

    @property
    def beta_prime(self) -> float:
        return beta_prime(self)

    @property
    def p_conj(self) -> float:
        return self.p / (self.p - 1.0)


def beta_prime(params: ClassParams) -> float:
    """Continuity constant for the weakened Hoelder-type condition.

    beta' = (beta^p / alpha)^(1/(p-1)) * max(1, alpha^(-(p-2)/(p-1))); for
    p = 2 this reduces to beta^2 / alpha.
    """
    a, b, p = params.alpha, params.beta, params.p
    return (b**p / a) ** (1.0 / (p - 1.0)) * max(1.0, a ** (-(p - 2.0) / (p - 1.0)))


@dataclass(frozen=True)
class MonotoneMap:
    """A Caratheodory map (x, t, xi) -> R^m with declared class parameters.

    ``eval`` must be a pure function accepting batched arrays: points of
    shape (..., n), a time (scalar or array broadcastable against the batch),
    and directions of shape (..., m); it returns an array of shape (..., m).
    Purity matters: the harness may evaluate the map from many workers
    concurrently. ``m`` may stay None for maps that work in any direction
    dimension (the weighted p-Laplacians do).
    """

    params: ClassParams
    time_dependent: bool
    eval: Callable[[np.ndarray, float, np.ndarray], np.ndarray]
    name: str = "custom"
    m: Optional[int] = None

    def __call__(self, x, t, xi) -> np.ndarray:
        return self.eval(np.asarray(x, dtype=float), t, np.asarray(xi, dtype=float))


@dataclass(frozen=True)
class Weight:
    """Spatial coefficient with known bounds; depends on the point's first axis."""

    fn: Callable[[np.ndarray], np.ndarray]  # points (..., n) -> (...)
    w_min: float
    w_max: float
    name: str

    def __call__(self, x) -> np.ndarray:
        return self.fn(np.asarray(x, dtype=float))


def constant_weight(value: float) -> Weight:
    v = float(value)
    return Weight(lambda x: np.full(x.shape[:-1], v), v, v, f"constant:{v}")


def sine_weight(offset: float = 2.0, amplitude: float = 1.0) -> Weight:
    """w(y) = offset + amplitude * sin(2 pi y_1), 1-periodic along axis 0."""
    o, a = float(offset), float(amplitude)

    def fn(x):
        return o + a * np.sin(2.0 * np.pi * x[..., 0])

    return Weight(fn, o - abs(a), o + abs(a), f"sine:{o}:{a}")


def two_phase_weight(w1: float, w2: float) -> Weight:
    """w = w1 on [0, 1/2), w2 on [1/2, 1) along axis 0, extended 1-periodically."""
    w1, w2 = float(w1), float(w2)

    def fn(x):
        frac = x[..., 0] - np.floor(x[..., 0])
        return np.where(frac < 0.5, w1, w2)

    return Weight(fn, min(w1, w2), max(w1, w2), f"two_phase:{w1}:{w2}")


def table_weight(values) -> Weight:
    """Periodic linear interpolation of samples on the unit cell, axis 0.

    values[k] is the weight at y = k / len(values); the profile wraps around.
    """
    vals = np.asarray(values, dtype=float)
    if vals.ndim != 1 or len(vals) < 1:
        raise ConfigurationError("table weight needs a non-empty 1D list of values")
    k = len(vals)
    knots = np.arange(k + 1) / k
    closed = np.concatenate([vals, vals[:1]])

    def fn(x):
        frac = x[..., 0] - np.floor(x[..., 0])
        return np.interp(frac, knots, closed)

    return Weight(fn, float(vals.min()), float(vals.max()), f"table:{k}")


def make_p_laplacian(p: float, weight: Weight, time_dependent: bool = False) -> MonotoneMap:
    """Weighted p-Laplacian map: eval(x, t, xi) = w(x) |xi|^(p-2) xi.

    Declared constants alpha = w_min * 2^(2-p) and beta = (p-1) * w_max make
    the structural certificate pass; 2^(2-p) is the classical coercivity
    constant of |xi|^(p-2) xi for p >= 2.
    """
    if not (0.0 < weight.w_min <= weight.w_max < math.inf):
        raise ConfigurationError(
            f"weight bounds must satisfy 0 < w_min <= w_max < inf, "
            f"got [{weight.w_min}, {weight.w_max}]"
        )
    p = float(p)
    params = ClassParams(alpha=weight.w_min * 2.0 ** (2.0 - p), beta=(p - 1.0) * weight.w_max, p=p)

    def ev(x, t, xi, _w=weight.fn, _p=p):
        w = _w(x)
        if _p == 2.0:
            return w[..., None] * xi
        mag = np.linalg.norm(xi, axis=-1)
        return (w * mag ** (_p - 2.0))[..., None] * xi

    return MonotoneMap(params, time_dependent, ev, name=f"p_laplacian:p={p}:{weight.name}")


def make_oscillating(base: MonotoneMap, h: int) -> MonotoneMap:
    """Rescale the spatial dependence: eval_h(x, t, xi) = base(frac(h x), t, xi).

    The base map must be 1-periodic per axis in x; the class parameters are
    unchanged (oscillation preserves alpha, beta, p).
    """
    if not isinstance(h, (int, np.integer)) or h <= 0:
        raise ConfigurationError(f"oscillation index h must be a positive integer, got {h!r}")
    h = int(h)
    if h == 1:
        return base

    def ev(x, t, xi, _base=base.eval, _h=h):
        y = _h * x
        return _base(y - np.floor(y), t, xi)

    return MonotoneMap(base.params, base.time_dependent, ev, name=f"{base.name}@h={h}")


@dataclass(frozen=True)
class ConditionResult:
    passed: bool
    margin: float
    worst_witness: Optional[tuple]  # (x, t, xi, eta, margin)


@dataclass(frozen=True)
class StructureReport:
    """Outcome of the sampled structural certificate."""

    conditions: dict  # keys "i", "ii", "iii", "iii_prime" -> ConditionResult
    empirical_alpha: float
    empirical_beta: float
    n_pairs: int
    tol: float
    seed: int

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.conditions.values())

    def passed_condition(self, key: str) -> bool:
        return self.conditions[key].passed


def _sample_structure_points(box, n_pairs, radius, m, time_span, rng):
    lo = np.array([b[0] for b in box], dtype=float)
    hi = np.array([b[1] for b in box], dtype=float)
    x = lo + rng.random((n_pairs, len(box))) * (hi - lo)
    t = rng.random(n_pairs) * (time_span[1] - time_span[0]) + time_span[0]
    # uniform in the ball of the given radius
    def ball(k):
        d = rng.standard_normal((k, m))
        d /= np.maximum(np.linalg.norm(d, axis=-1, keepdims=True), 1e-300)
        r = radius * rng.random((k, 1)) ** (1.0 / m)
        return d * r

    return x, t, ball(n_pairs), ball(n_pairs)


def verify_structure(
    a: MonotoneMap,
    box,
    n_pairs: int,
    tol: float,
    radius: float = 10.0,
    time_span=(0.0, 1.0),
    seed: int = DEFAULT_SEED,
    m_dim: Optional[int] = None,
) -> StructureReport:
    """Certify the class conditions on seeded Monte-Carlo samples.

    Tests, on n_pairs sampled (x, t, xi, eta) with xi, eta uniform in a ball
    of the given radius:

    - (i)   a(x, t, 0) = 0 within tol;
    - (ii)  (a(xi) - a(eta), xi - eta) >= alpha |xi - eta|^p - tol;
    - (iii) |a(xi) - a(eta)| <= beta (1 + |xi|^p + |eta|^p)^((p-2)/p) |xi - eta| + tol;
    - (iii)' same shape with beta' and exponents (p-2)/(p-1), 1/(p-1).

    empirical_alpha is the smallest sampled coercivity ratio and
    empirical_beta the largest sampled continuity ratio; pairs closer than
    1e-10 are excluded from the ratios. Non-finite evaluations fail the
    report with a witness. The sampled certificate cannot distinguish
    behaviour on Lebesgue-null sets.
    """
    if n_pairs < 1:
        raise ConfigurationError("n_pairs must be >= 1")
    rng = np.random.default_rng(seed)
    m = m_dim if m_dim is not None else (a.m if a.m is not None else len(box))

    x, t, xi, eta = _sample_structure_points(box, n_pairs, radius, m, time_span, rng)
    p = a.params.p
    alpha, beta = a.params.alpha, a.params.beta
    bprime = a.params.beta_prime

    t_arg = t if a.time_dependent else float(time_span[0])
    a_xi = a.eval(x, t_arg, xi)
    a_eta = a.eval(x, t_arg, eta)
    a_zero = a.eval(x, t_arg, np.zeros((n_pairs, m)))

    conditions = {}

    def witness(k, margin):
        return (tuple(x[k]), float(t[k]), tuple(xi[k]), tuple(eta[k]), float(margin))

    bad = ~(np.isfinite(a_xi).all(axis=-1) & np.isfinite(a_eta).all(axis=-1)
            & np.isfinite(a_zero).all(axis=-1))
    if bad.any():
        k = int(np.argmax(bad))
        res = ConditionResult(False, -math.inf, witness(k, -math.inf))
        conditions = {key: res for key in ("i", "ii", "iii", "iii_prime")}
        return StructureReport(conditions, math.nan, math.nan, n_pairs, tol, seed)

    # (i)
    zmag = np.linalg.norm(a_zero, axis=-1)
    k0 = int(np.argmax(zmag))
    margin_i = float(zmag[k0])
    conditions["i"] = ConditionResult(
        margin_i <= tol, margin_i, (tuple(x[k0]), float(t[k0]), (0.0,) * m, None, margin_i)
    )

    diff = xi - eta
    dmag = np.linalg.norm(diff, axis=-1)
    da = a_xi - a_eta
    inner = np.einsum("km,km->k", da, diff)

    # (ii): inner >= alpha |diff|^p - tol
    viol_ii = alpha * dmag**p - inner
    k2 = int(np.argmax(viol_ii))
    conditions["ii"] = ConditionResult(
        float(viol_ii[k2]) <= tol, float(viol_ii[k2]), witness(k2, float(viol_ii[k2]))
    )

    bracket = 1.0 + np.linalg.norm(xi, axis=-1) ** p + np.linalg.norm(eta, axis=-1) ** p
    damag = np.linalg.norm(da, axis=-1)

    # (iii)
    bound_iii = beta * bracket ** ((p - 2.0) / p) * dmag
    viol_iii = damag - bound_iii
    k3 = int(np.argmax(viol_iii))
    conditions["iii"] = ConditionResult(
        float(viol_iii[k3]) <= tol, float(viol_iii[k3]), witness(k3, float(viol_iii[k3]))
    )

    # (iii)'
    bound_iiip = bprime * bracket ** ((p - 2.0) / (p - 1.0)) * dmag ** (1.0 / (p - 1.0))
    viol_iiip = damag - bound_iiip
    k4 = int(np.argmax(viol_iiip))
    conditions["iii_prime"] = ConditionResult(
        float(viol_iiip[k4]) <= tol, float(viol_iiip[k4]), witness(k4, float(viol_iiip[k4]))
    )

    ok = dmag >= PAIR_SEPARATION
    if ok.any():
        emp_alpha = float(np.min(inner[ok] / dmag[ok] ** p))
        emp_beta = float(np.max(damag[ok] / (bracket[ok] ** ((p - 2.0) / p) * dmag[ok])))
    else:
        emp_alpha = math.nan
        emp_beta = math.nan

    return StructureReport(conditions, emp_alpha, emp_beta, n_pairs, tol, seed)
