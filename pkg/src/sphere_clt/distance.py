"""Kolmogorov distance to the standard normal law, four ways.

* ``ks_exact_discrete``: exact supremum for purely atomic laws (weighted
  sums of sign vectors), checking both the jump and the left limit at
  every atom.
* ``ks_empirical``: one-sample statistic against Phi with a
  Dvoretzky-Kiefer-Wolfowitz confidence radius.
* ``ks_inversion``: recovers F - Phi directly from the characteristic
  function.  The integrand (f(t) - e^{-t^2/2}) e^{-itx} / t is smooth and
  small, so a fixed Gauss-Legendre panel rule over a truncation interval
  chosen from the empirical decay of |f| gives the distance to a
  prescribed accuracy.  Laws whose characteristic function does not decay
  (pure atoms) are rejected and redirected to the exact method.
* ``be_upper_bound``: a certified upper bound assembled from the smoothing
  inequality

      c rho(F_theta, Phi) <= int_0^T0 |f_theta - f|/t dt
                           + int_T0^T |f_theta|/t dt
                           + (Lambda/n) (1 + log(T/T0)) + 1/T + e^{-T0^2/4},

  evaluated with c = 1 (conservative), so comparisons against the true
  distance are monitoring rather than sharp tests.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np
from scipy.integrate import quad
from scipy.special import ndtr

from .charfn import _scaled_cf_many, jn_scaled_interp, mean_cf_curve
from .models import ModelSpec, sample_matrix
from .sphere_core import RandomStream, UnitVector

logger = logging.getLogger(__name__)

MERGE_TOL = 1e-12
MAX_ATOMS = 17_000_000  # admits generic directions up to n = 24


class InversionNotApplicable(ValueError):
    """The characteristic function does not decay; use ks_exact_discrete."""


@dataclass
class DiscreteDistribution:
    """Finitely supported law with sorted atoms."""

    atoms: np.ndarray
    probs: np.ndarray

    def __post_init__(self):
        a = np.asarray(self.atoms, dtype=float)
        p = np.asarray(self.probs, dtype=float)
        if a.shape != p.shape or a.ndim != 1 or a.size == 0:
            raise ValueError("atoms and probs must be matching 1-d arrays")
        if np.any(np.diff(a) <= 0.0):
            raise ValueError("atoms must be strictly increasing")
        if np.any(p < -1e-15):
            raise ValueError("probabilities must be nonnegative")
        if abs(float(p.sum()) - 1.0) > 1e-12:
            raise ValueError(f"probabilities sum to {p.sum()}, not 1")
        object.__setattr__(self, "atoms", a)
        object.__setattr__(self, "probs", np.maximum(p, 0.0))


def merge_atoms(atoms: np.ndarray, probs: np.ndarray,
                tol: float = MERGE_TOL) -> tuple[np.ndarray, np.ndarray]:
    order = np.argsort(atoms, kind="stable")
    a = atoms[order]
    p = probs[order]
    starts = np.flatnonzero(np.concatenate(([True], np.diff(a) > tol)))
    return a[starts], np.add.reduceat(p, starts)


def rademacher_sum_distribution(coords) -> DiscreteDistribution:
    """Exact law of sum_k theta_k eps_k for independent signs eps_k.

    Dynamic-programming convolution with atom merging at tolerance 1e-12;
    symmetric coefficient patterns collapse heavily, general directions
    are capped at a few million atoms.
    """
    coords = np.asarray(coords, dtype=float)
    atoms = np.zeros(1)
    probs = np.ones(1)
    for c in coords:
        atoms = np.concatenate((atoms - c, atoms + c))
        probs = np.concatenate((probs, probs)) * 0.5
        atoms, probs = merge_atoms(atoms, probs)
        if atoms.size > MAX_ATOMS:
            raise ValueError(f"atom count exceeded {MAX_ATOMS}; "
                             "exact enumeration is limited to n <= 24 "
                             "for generic directions")
    return DiscreteDistribution(atoms, probs)


@dataclass
class DistanceEstimate:
    """Kolmogorov distance value with method tag and error radius.

    The radius is certified for the exact, inversion, and upper-bound
    methods and a statistical (DKW) band for the empirical method.
    """

    value: float
    method: str
    error_radius: float
    T0: Optional[float] = None
    T: Optional[float] = None
    L_theta: Optional[float] = None
    raw_value: Optional[float] = None

    def __post_init__(self):
        if not 0.0 <= self.value <= 1.0:
            raise ValueError(f"distance {self.value} outside [0, 1]")
        if self.error_radius < 0.0:
            raise ValueError("error radius must be nonnegative")

    def csv_row(self, theta_id) -> list:
        return [theta_id, self.method, repr(self.value),
                repr(self.error_radius),
                "" if self.T0 is None else repr(self.T0),
                "" if self.T is None else repr(self.T),
                "" if self.L_theta is None else repr(self.L_theta)]


def ks_exact_discrete(dist: DiscreteDistribution) -> DistanceEstimate:
    """sup_x |F(x) - Phi(x)| for an atomic F, computed exactly.

    At each atom both the jump gap |F(x) - Phi(x)| and the left-limit gap
    |F(x-) - Phi(x)| are candidates for the supremum.
    """
    cdf = np.cumsum(dist.probs)
    cdf_left = np.concatenate(([0.0], cdf[:-1]))
    phi = ndtr(dist.atoms)
    value = float(max(np.max(np.abs(cdf - phi)), np.max(np.abs(cdf_left - phi))))
    return DistanceEstimate(value, "exact", 1e-15)


def ks_empirical(samples) -> DistanceEstimate:
    """One-sample Kolmogorov statistic against Phi with a DKW radius.

    The radius sqrt(log(2/delta) / (2 m)) at delta = 0.01 covers the
    deviation of the empirical CDF from its law with 99% confidence.
    """
    x = np.sort(np.asarray(samples, dtype=float))
    m = x.size
    if m < 100:
        raise ValueError(f"need at least 100 samples, got {m}")
    phi = ndtr(x)
    i = np.arange(1, m + 1)
    d_plus = np.max(i / m - phi)
    d_minus = np.max(phi - (i - 1) / m)
    radius = math.sqrt(math.log(2.0 / 0.01) / (2.0 * m))
    return DistanceEstimate(float(max(d_plus, d_minus)), "empirical", radius)


def _gaussian_cf(t: np.ndarray) -> np.ndarray:
    return np.exp(-0.5 * t * t)


def _choose_truncation(cf: Callable, accuracy: float) -> float:
    """Smallest probed T with an empirically controlled CF tail.

    Fits a local power-law decay to |f| on doubling windows; rejects the
    characteristic function as non-decaying if no window up to T = 65536
    brings the estimated tail of int |f|/t below accuracy/4.
    """
    T = 16.0
    while T <= 65536.0:
        grid1 = np.geomspace(T, 2.0 * T, 48)
        grid2 = np.geomspace(2.0 * T, 4.0 * T, 48)
        eta1 = float(np.max(np.abs(cf(grid1))))
        eta2 = float(np.max(np.abs(cf(grid2))))
        if eta1 > 0.0 and eta2 > 0.0:
            q = math.log2(eta1 / eta2)
        else:
            q = 40.0
        if q > 0.1:
            tail = eta1 * (math.log(2.0) + 1.0 / q) / math.pi
            if tail <= accuracy / 4.0:
                return 2.0 * T
        T *= 2.0
    raise InversionNotApplicable(
        "characteristic function shows no usable decay up to t = 65536; "
        "for purely atomic laws use ks_exact_discrete")


def _difference_nodes(cf: Callable, T: float):
    """Gauss-Legendre nodes/weights on [0, T] and g(t) = (f - gauss)/t there."""
    panel_len = 2.0
    per_panel = 32
    edges = np.linspace(0.0, T, int(math.ceil(T / panel_len)) + 1)
    gl_x, gl_w = np.polynomial.legendre.leggauss(per_panel)
    half = 0.5 * np.diff(edges)
    mid = 0.5 * (edges[:-1] + edges[1:])
    t_nodes = (mid[:, None] + half[:, None] * gl_x[None, :]).ravel()
    w_nodes = (half[:, None] * gl_w[None, :]).ravel()
    g = (cf(t_nodes) - _gaussian_cf(t_nodes)) / t_nodes
    return t_nodes, w_nodes * g


def _delta_on_grid(t_nodes, wg, x) -> np.ndarray:
    """F(x) - Phi(x) = -(1/pi) int Im(e^{-itx} g(t)) dt on an x array."""
    x = np.atleast_1d(np.asarray(x, dtype=float))
    out = np.empty_like(x)
    a = wg.real
    b = wg.imag
    block = max(1, int(3e7 // max(t_nodes.size, 1)))
    for lo in range(0, x.size, block):
        arg = np.outer(x[lo:lo + block], t_nodes)
        out[lo:lo + block] = np.cos(arg) @ b - np.sin(arg) @ a
    return out / (-math.pi)


def _golden_max(fn: Callable[[float], float], lo: float, hi: float,
                iters: int = 40) -> float:
    inv_phi = (math.sqrt(5.0) - 1.0) / 2.0
    a, b = lo, hi
    c = b - inv_phi * (b - a)
    d = a + inv_phi * (b - a)
    fc, fd = fn(c), fn(d)
    for _ in range(iters):
        if fc > fd:
            b, d, fd = d, c, fc
            c = b - inv_phi * (b - a)
            fc = fn(c)
        else:
            a, c, fc = c, d, fd
            d = a + inv_phi * (b - a)
            fd = fn(d)
    return max(fc, fd)


def ks_inversion(cf: Callable, accuracy: float) -> DistanceEstimate:
    """Kolmogorov distance by numerical inversion of a deterministic CF.

    `cf` must accept an array of t values and return complex f(t).  The
    search runs on x in [-8, 8] at step 0.01 with golden-section
    refinement around the five largest gap candidates.
    """
    if not 1e-10 <= accuracy <= 1e-3:
        raise ValueError(f"accuracy {accuracy} outside [1e-10, 1e-3]")
    T = _choose_truncation(cf, accuracy)
    t_nodes, wg = _difference_nodes(cf, T)

    x_grid = np.arange(-800, 801) / 100.0
    delta = _delta_on_grid(t_nodes, wg, x_grid)
    gaps = np.abs(delta)
    best = float(np.max(gaps))

    top = np.argsort(gaps)[-5:]
    for idx in top:
        x0 = x_grid[idx]
        refined = _golden_max(
            lambda x: abs(float(_delta_on_grid(t_nodes, wg, [x])[0])),
            x0 - 0.015, x0 + 0.015)
        best = max(best, refined)

    return DistanceEstimate(min(best, 1.0), "inversion", accuracy, T=T)


def product_cf(model: ModelSpec, theta: UnitVector) -> Callable:
    """Vectorized t -> f_theta(t) for models with a coordinate CF."""
    if model.cf1 is None:
        raise ValueError(f"model {model.name!r} has no closed-form "
                         "coordinate characteristic function")
    coords = theta.coords

    def cf(t):
        t = np.atleast_1d(np.asarray(t, dtype=float))
        return np.prod(model.cf1(np.outer(t, coords)), axis=1)

    return cf


def weighted_cf_curve(model: ModelSpec, theta: UnitVector, t_nodes,
                      samples: int, stream: RandomStream | None):
    """f_theta on a grid: exact product, exact radial, or shared-draw MC."""
    t = np.asarray(t_nodes, dtype=float)
    if model.cf1 is not None:
        return product_cf(model, theta)(t).astype(complex), np.zeros_like(t)
    if model.radial_constant:
        # every direction of a radially uniform law gives the same sum
        return _scaled_cf_many(model.n, np.abs(t)).astype(complex), np.zeros_like(t)
    if stream is None:
        raise ValueError("a RandomStream is required for Monte Carlo models")
    s = sample_matrix(model, samples, stream) @ theta.coords
    vals = np.empty(t.size, dtype=complex)
    ses = np.empty(t.size)
    for i, ti in enumerate(t):
        e = np.exp(1j * ti * s)
        vals[i] = np.mean(e)
        ses[i] = math.sqrt((np.var(e.real) + np.var(e.imag)) / samples)
    return vals, ses


def _radial_abs_cf_integral(n: int, T0: float, T: float) -> float:
    """int_{T0}^{T} |J_n(t sqrt n)| / t dt on a log-spaced trapezoid grid."""
    u_cap = min(T, 2000.0)
    points = min(int(4.0 * u_cap * math.sqrt(n) / 6.0) + 500, 60000)
    grid = np.geomspace(T0, u_cap, points)
    vals = np.abs(_scaled_cf_many(n, grid)) / grid
    total = float(np.trapezoid(vals, grid))
    if u_cap < T:  # remaining tail is below the support of double precision
        total += 1e-15 * math.log(T / u_cap)
    return total


def be_upper_bound(model: ModelSpec, theta: UnitVector, T0: float, T: float,
                   samples: int, stream: RandomStream) -> DistanceEstimate:
    """Certified upper bound on rho(F_theta, Phi) from the smoothing inequality.

    Evaluates, with conservative absolute constant 1,

        int_0^T0 |f_theta - f|/t dt + L(theta)
        + (Lambda/n)(1 + log(T/T0)) + 1/T + e^{-T0^2/4},

    where L(theta) = int_T0^T |f_theta|/t dt and f is the direction-averaged
    characteristic function estimated as a Monte Carlo mean of J_n(t |X|).
    The small-t integrand uses the mean-zero limit |f_theta - f|/t -> 0.
    Monte Carlo noise enters the error radius at 3 SE.
    """
    if T0 < 1.0:
        raise ValueError(f"T0 must be at least 1, got {T0}")
    if T < T0:
        raise ValueError(f"need T >= T0, got T={T}, T0={T0}")
    if model.n != theta.n:
        raise ValueError("dimension mismatch between model and direction")

    if model.lambda_cap is not None:
        lam_cap = model.lambda_cap
    else:
        from .functionals import estimate_lambda_cap
        lam_cap, _ = estimate_lambda_cap(model, samples, stream.child(3))

    n = model.n
    t_nodes = T0 * np.geomspace(1e-6, 1.0, 301)
    f_theta, se_theta = weighted_cf_curve(model, theta, t_nodes, samples,
                                          stream.child(1))
    f_mean, se_mean = mean_cf_curve(model, t_nodes, samples, stream.child(2))

    h = np.abs(f_theta - f_mean) / t_nodes
    first = float(np.trapezoid(h, t_nodes)) + float(h[0] * t_nodes[0]) / 2.0
    se_first = float(np.trapezoid(3.0 * (se_theta + se_mean) / t_nodes, t_nodes))

    if model.cf1 is not None:
        import warnings
        cf = product_cf(model, theta)
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")  # near-zero oscillatory tails
            l_theta, _ = quad(
                lambda t: abs(complex(cf(np.asarray([t]))[0])) / t,
                T0, T, epsabs=1e-10, epsrel=1e-9, limit=500)
        se_l = 0.0
    elif model.radial_constant:
        l_theta = _radial_abs_cf_integral(n, T0, T)
        se_l = 0.0
    else:
        long_nodes = np.geomspace(T0, T, 2000)
        f_long, se_long = weighted_cf_curve(model, theta, long_nodes, samples,
                                            stream.child(4))
        l_theta = float(np.trapezoid(np.abs(f_long) / long_nodes, long_nodes))
        se_l = float(np.trapezoid(3.0 * se_long / long_nodes, long_nodes))

    raw = (first + l_theta + (lam_cap / n) * (1.0 + math.log(T / T0))
           + 1.0 / T + math.exp(-T0 * T0 / 4.0))
    radius = se_first + se_l + 1e-8
    logger.debug("be_upper_bound: first=%.3g L=%.3g lam/n term=%.3g raw=%.3g",
                 first, l_theta, (lam_cap / n) * (1 + math.log(T / T0)), raw)
    return DistanceEstimate(min(raw, 1.0), "be_bound", radius,
                            T0=T0, T=T, L_theta=float(l_theta),
                            raw_value=float(raw))
