"""Uniform directions on the unit sphere and the law of a single coordinate.

The first coordinate of a uniform point on the (n-1)-sphere, rescaled by
sqrt(n), has density

    phi_n(x) = c_n' * (1 - x^2/n)_+^((n-3)/2),
    c_n' = Gamma(n/2) / (sqrt(pi*n) * Gamma((n-1)/2)),

which converges to the standard normal density phi(x).  The fourth
Chebyshev-Hermite polynomial H4(x) = x^4 - 6x^2 + 3 supplies a second-order
correction phi(x) * (1 - H4(x)/(4n)) accurate to O(1/n^2).  This module
evaluates the exact density, the corrected density, and the empirical
constants in front of the 1/n and 1/n^2 error terms.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.integrate import quad
from scipy.special import gammaln

INV_SQRT_2PI = 1.0 / math.sqrt(2.0 * math.pi)

# ascending coefficients of H4(x) = x^4 - 6x^2 + 3
HERMITE4_COEFFS = (3.0, 0.0, -6.0, 0.0, 1.0)


class RandomStream:
    """Seeded, substream-addressable source of randomness.

    The pair (seed, stream_id) fully determines the sample sequence, and
    distinct stream ids give statistically independent streams.  A stream
    is meant to be consumed by exactly one task; parallel work derives one
    child stream per task via :meth:`child`.
    """

    __slots__ = ("seed", "stream_id", "_gen")

    def __init__(self, seed: int, stream_id: int = 0):
        self.seed = int(seed)
        self.stream_id = int(stream_id)
        self._gen = None

    @property
    def gen(self) -> np.random.Generator:
        if self._gen is None:
            ss = np.random.SeedSequence(entropy=self.seed,
                                        spawn_key=(self.stream_id,))
            self._gen = np.random.Generator(np.random.PCG64(ss))
        return self._gen

    def child(self, k: int) -> "RandomStream":
        """Derived stream; child ids partition the id space by task index."""
        if not 0 <= k < 2**20:
            raise ValueError("child index must lie in [0, 2^20)")
        return RandomStream(self.seed, self.stream_id * 2**20 + k + 1)

    def __repr__(self) -> str:
        return f"RandomStream(seed={self.seed}, stream_id={self.stream_id})"


@dataclass(frozen=True)
class UnitVector:
    """A point of the unit sphere in R^n."""

    n: int
    coords: np.ndarray

    def __post_init__(self):
        c = np.asarray(self.coords, dtype=float)
        if c.shape != (self.n,):
            raise ValueError(f"expected {self.n} coordinates, got {c.shape}")
        norm_sq = float(np.dot(c, c))
        if abs(norm_sq - 1.0) > 1e-12:
            raise ValueError(f"|coords|^2 = {norm_sq} is not 1 within 1e-12")
        object.__setattr__(self, "coords", c)


def sample_direction(n: int, stream: RandomStream) -> UnitVector:
    """Uniform direction on the (n-1)-sphere via normalized Gaussians."""
    if n < 2:
        raise ValueError(f"invalid dimension n={n}; need n >= 2")
    g = stream.gen.standard_normal(n)
    norm = np.linalg.norm(g)
    while norm == 0.0:  # probability zero, defensive
        g = stream.gen.standard_normal(n)
        norm = np.linalg.norm(g)
    return UnitVector(n, g / norm)


def sample_directions(n: int, count: int, stream: RandomStream) -> np.ndarray:
    """Matrix of `count` uniform directions, one per row."""
    if n < 2:
        raise ValueError(f"invalid dimension n={n}; need n >= 2")
    g = stream.gen.standard_normal((count, n))
    norms = np.linalg.norm(g, axis=1, keepdims=True)
    return g / norms


def log_norm_const(n: int) -> float:
    """log c_n' computed from log-gamma differences (no overflow for large n)."""
    if n < 3:
        raise ValueError(f"unsupported dimension n={n}; need n >= 3")
    return float(gammaln(n / 2.0) - gammaln((n - 1) / 2.0)
                 - 0.5 * math.log(math.pi * n))


def norm_const(n: int) -> float:
    """Normalizing constant c_n' of the rescaled coordinate density."""
    return math.exp(log_norm_const(n))


def coord_density(n: int, x) -> np.ndarray | float:
    """Density of sqrt(n) * theta_1 for theta uniform on the (n-1)-sphere.

    Supported on |x| < sqrt(n); zero outside.  Evaluated in log space so
    dimensions up to 1e5 stay well inside double range.
    """
    if n < 3:
        raise ValueError(f"unsupported dimension n={n}; need n >= 3")
    x_arr = np.asarray(x, dtype=float)
    out = np.zeros_like(x_arr)
    inside = x_arr * x_arr < n
    if n == 3:
        # exponent (n-3)/2 = 0: constant density on the support
        out[inside] = norm_const(3)
    else:
        z = x_arr[inside]
        out[inside] = np.exp(log_norm_const(n)
                             + 0.5 * (n - 3) * np.log1p(-z * z / n))
    if np.isscalar(x):
        return float(out)
    return out


def normal_density(x) -> np.ndarray | float:
    return INV_SQRT_2PI * np.exp(-0.5 * np.square(x))


def hermite4(x) -> np.ndarray | float:
    """H4(x) = x^4 - 6x^2 + 3."""
    x2 = np.square(x)
    return x2 * x2 - 6.0 * x2 + 3.0


def edgeworth_density(n: int, x) -> np.ndarray | float:
    """Second-order corrected normal density phi(x) * (1 - H4(x)/(4n))."""
    if n < 3:
        raise ValueError(f"unsupported dimension n={n}; need n >= 3")
    return normal_density(x) * (1.0 - hermite4(x) / (4.0 * n))


def density_error_budget(n: int, grid) -> float:
    """Empirical constant of the second-order density approximation.

    Returns sup over the grid of

        n^2 * exp(x^2/4) * |phi_n(x) - phi(x) * (1 - H4(x)/(4n))|,

    i.e. the smallest constant making the 1/n^2 error bound hold on the
    given grid.  The grid must lie inside the support [-sqrt(n), sqrt(n)].
    """
    grid = np.asarray(grid, dtype=float)
    if grid.size == 0:
        raise ValueError("empty grid")
    if np.any(grid * grid > n):
        raise ValueError("grid must be contained in [-sqrt(n), sqrt(n)]")
    gap = np.abs(coord_density(n, grid) - edgeworth_density(n, grid))
    return float(np.max(n * n * np.exp(grid * grid / 4.0) * gap))


def coarse_density_gap(n: int, grid) -> float:
    """First-order constant: sup of n * exp(x^2/4) * |phi_n(x) - phi(x)|."""
    grid = np.asarray(grid, dtype=float)
    if grid.size == 0:
        raise ValueError("empty grid")
    gap = np.abs(coord_density(n, grid) - normal_density(grid))
    return float(np.max(n * np.exp(grid * grid / 4.0) * gap))


def budget_grid(n: int, step: float = 0.01) -> np.ndarray:
    """Default evaluation grid [-min(6, sqrt(n)/2), min(6, sqrt(n)/2)].

    Beyond this window the exp(x^2/4) weight and the support cutoff make
    the supremum inactive.
    """
    half = min(6.0, math.sqrt(n) / 2.0)
    m = int(round(half / step))
    return np.linspace(-m * step, m * step, 2 * m + 1)


def coord_density_integral(n: int) -> float:
    """Integral of phi_n over its support by adaptive Gauss-Kronrod.

    The interval is split at |x| = sqrt(n)/2 where the analysis of the
    density changes regime; this keeps the quadrature honest about the
    kink at the support edge.
    """
    root_n = math.sqrt(n)
    half = root_n / 2.0
    total = 0.0
    for a, b in ((0.0, half), (half, root_n)):
        val, _ = quad(lambda x: coord_density(n, x), a, b,
                      epsabs=1e-12, epsrel=1e-12, limit=200)
        total += val
    return 2.0 * total


@dataclass
class DensityProfile:
    """Tabulated exact, corrected, and limiting normal densities."""

    n: int
    grid: np.ndarray
    phi_n: np.ndarray
    edgeworth: np.ndarray
    normal: np.ndarray
    norm_const: float
    hermite4_coeffs: tuple = field(default=HERMITE4_COEFFS)

    def validate(self) -> None:
        if np.any(self.phi_n < 0.0):
            raise ValueError("phi_n values must be nonnegative")
        outside = self.grid * self.grid >= self.n
        if np.any(self.phi_n[outside] != 0.0):
            raise ValueError("phi_n must vanish for x^2 >= n")
        if not self.norm_const < INV_SQRT_2PI:
            raise ValueError("norm_const must stay below 1/sqrt(2*pi)")
        total = coord_density_integral(self.n)
        if abs(total - 1.0) > 1e-8:
            raise ValueError(f"phi_n integrates to {total}, not 1 within 1e-8")

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["x", "phi_n", "edgeworth", "normal"])
            for row in zip(self.grid, self.phi_n, self.edgeworth, self.normal):
                writer.writerow([repr(float(v)) for v in row])


def build_density_profile(n: int, grid=None) -> DensityProfile:
    if grid is None:
        grid = budget_grid(n)
    grid = np.asarray(grid, dtype=float)
    profile = DensityProfile(
        n=n,
        grid=grid,
        phi_n=np.asarray(coord_density(n, grid)),
        edgeworth=np.asarray(edgeworth_density(n, grid)),
        normal=np.asarray(normal_density(grid)),
        norm_const=norm_const(n),
    )
    profile.validate()
    return profile
