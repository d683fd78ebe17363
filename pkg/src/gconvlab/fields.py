"""Families of vector fields defined through their coefficient matrices.

A family of m Lipschitz fields on a box in R^n is represented by the map
x -> C(x), the m x n matrix whose rows are the fields' coefficients. Applying
the family to a Euclidean gradient du gives the X-gradient C(x) du. Built-in
families: euclidean(n) (C = identity), the Grushin plane (rows (1,0) and
(0,x), degenerate on the line x = 0) and a Heisenberg-type family with rows
(1, 0, -y/2) and (0, 1, x/2).
"""

from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from .errors import ConfigurationError, ContractViolation

# Documented default for every seeded sampling routine in the package.
DEFAULT_SEED = 12345

# Singular values below RANK_RTOL * sigma_max count as zero in rank checks.
RANK_RTOL = 1e-12


@dataclass(frozen=True)
class VectorFieldFamily:
    """A family of m vector fields on R^n via its coefficient matrix.

    ``coeff`` maps an array of points of shape (..., n) to coefficient
    matrices of shape (..., m, n); it must be defined at every point of the
    configured domain box. Instances are immutable and safe to share across
    workers.
    """

    name: str
    n: int
    m: int
    coeff: Callable[[np.ndarray], np.ndarray]
    degenerate_locus: Optional[str] = None

    def coeff_at(self, x) -> np.ndarray:
        """Coefficient matrix at one point or a batch of points."""
        x = np.asarray(x, dtype=float)
        if x.shape[-1] != self.n:
            raise ContractViolation(
                f"family {self.name!r} expects points in R^{self.n}, "
                f"got shape {x.shape}"
            )
        return self.coeff(x)


def make_family(kind: str, n: int = None) -> VectorFieldFamily:
    """Construct a built-in family: "euclidean" (give n), "grushin", "heisenberg"."""
    if kind == "euclidean":
        if n is None or n < 1:
            raise ConfigurationError("euclidean family needs ambient dimension n >= 1")
        eye = np.eye(n)

        def coeff(x, _eye=eye, _n=n):
            x = np.asarray(x, dtype=float)
            return np.broadcast_to(_eye, x.shape[:-1] + (_n, _n)).copy()

        return VectorFieldFamily(f"euclidean:{n}", n, n, coeff, None)

    if kind == "grushin":

        def coeff(x):
            x = np.asarray(x, dtype=float)
            c = np.zeros(x.shape[:-1] + (2, 2))
            c[..., 0, 0] = 1.0
            c[..., 1, 1] = x[..., 0]
            return c

        return VectorFieldFamily("grushin", 2, 2, coeff, "line x_1 = 0")

    if kind == "heisenberg":

        def coeff(x):
            x = np.asarray(x, dtype=float)
            c = np.zeros(x.shape[:-1] + (2, 3))
            c[..., 0, 0] = 1.0
            c[..., 0, 2] = -0.5 * x[..., 1]
            c[..., 1, 1] = 1.0
            c[..., 1, 2] = 0.5 * x[..., 0]
            return c

        return VectorFieldFamily("heisenberg", 3, 2, coeff, None)

    raise ConfigurationError(f"unknown family kind {kind!r}")


def family_from_name(name: str) -> VectorFieldFamily:
    """Resolve a config name: "euclidean:<n>", "grushin" or "heisenberg"."""
    if name.startswith("euclidean:"):
        try:
            n = int(name.split(":", 1)[1])
        except ValueError:
            raise ConfigurationError(f"bad euclidean dimension in {name!r}") from None
        return make_family("euclidean", n)
    if name in ("grushin", "heisenberg"):
        return make_family(name)
    raise ConfigurationError(f"unknown family name {name!r}")


def x_gradient(family: VectorFieldFamily, du, x) -> np.ndarray:
    """Apply the family to a Euclidean gradient: returns C(x) du.

    Accepts a single point (du shape (n,), x shape (n,)) or batches with
    matching leading shapes.
    """
    du = np.asarray(du, dtype=float)
    if du.shape[-1] != family.n:
        raise ContractViolation(
            f"gradient has dimension {du.shape[-1]}, family needs {family.n}"
        )
    c = family.coeff_at(x)
    return np.einsum("...mn,...n->...m", c, du)


@dataclass(frozen=True)
class LicReport:
    """Sampled linear-independence diagnostic over a box."""

    deficient_fraction: float
    witnesses: tuple
    n_samples: int


def sample_box(box, n_samples: int, seed: int = DEFAULT_SEED) -> np.ndarray:
    """Uniform points in a box given as ((lo, hi), ...); degenerate axes allowed."""
    box = [(float(lo), float(hi)) for lo, hi in box]
    rng = np.random.default_rng(seed)
    u = rng.random((n_samples, len(box)))
    lo = np.array([b[0] for b in box])
    hi = np.array([b[1] for b in box])
    return lo + u * (hi - lo)


def lic_report(
    family: VectorFieldFamily,
    box,
    n_samples: int,
    seed: int = DEFAULT_SEED,
) -> LicReport:
    """Fraction of sampled points where the fields are linearly dependent.

    Samples uniformly over the box with a fixed seed, computes rank C(x) by
    singular values and reports the deficient fraction together with up to 10
    witness points.
    """
    if n_samples < 1:
        raise ContractViolation("n_samples must be >= 1")
    if len(box) != family.n:
        raise ContractViolation(
            f"box has {len(box)} axes, family lives in R^{family.n}"
        )
    pts = sample_box(box, n_samples, seed)
    c = family.coeff_at(pts)
    sv = np.linalg.svd(c, compute_uv=False)  # (k, min(m, n)) descending
    deficient = sv[:, family.m - 1] <= RANK_RTOL * np.maximum(sv[:, 0], 1e-300)
    frac = float(np.count_nonzero(deficient)) / n_samples
    witnesses = tuple(map(tuple, pts[deficient][:10]))
    return LicReport(frac, witnesses, n_samples)


def sampled_lipschitz_constant(
    family: VectorFieldFamily,
    box,
    n_pairs: int = 2000,
    seed: int = DEFAULT_SEED,
) -> float:
    """Max sampled difference quotient |C(x) - C(y)|_F / |x - y| over the box."""
    pts = sample_box(box, 2 * n_pairs, seed)
    x, y = pts[:n_pairs], pts[n_pairs:]
    dist = np.linalg.norm(x - y, axis=-1)
    keep = dist > 1e-12
    dc = family.coeff_at(x[keep]) - family.coeff_at(y[keep])
    quot = np.linalg.norm(dc, axis=(-2, -1)) / dist[keep]
    return float(quot.max(initial=0.0))
