"""Isotropic random-vector models with known spectral-gap constants.

Each model is an isotropic law in R^n (identity second-moment matrix)
with, where known, its Poincare constant lambda1 (the optimal lambda in
lambda * Var(u(X)) <= E |grad u(X)|^2) and the quadratic-form variance
constant Lambda (optimal in Var(sum a_ij X_i X_j) <= Lambda * sum a_ij^2,
the top eigenvalue of the covariance of the array (X_i X_j - delta_ij)).

Built-in models:

==============  ============================  ==========  ==============
name            coordinates                   lambda1     Lambda
==============  ============================  ==========  ==============
gaussian        i.i.d. N(0, 1)                1           2 (exact)
rademacher      i.i.d. +-1                    (none)      <= 2
uniform_product i.i.d. U[-sqrt3, sqrt3]       pi^2 / 12   <= 3.6
centered_exp    i.i.d. Exp(1) - 1             1/4         <= 16
sphere_shell    uniform, radius sqrt(n)       (n-1)/n     2n/(n+2) (exact)
==============  ============================  ==========  ==============

rademacher has no continuous Poincare constant; its Lambda bound is
2 * max E X_k^4 for independent coordinates.  centered_exp is the
designated non-symmetric model; its Lambda bound is 4 / lambda1.  The
sphere_shell value follows from the variance of quadratic forms of a
uniform direction: Var(theta' A theta) = 2(|A|_F^2 - (tr A)^2/n)/(n(n+2)),
maximized by trace-free A.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from .sphere_core import RandomStream, sample_directions

MODEL_NAMES = ("gaussian", "rademacher", "uniform_product",
               "centered_exp", "sphere_shell")

SQRT3 = math.sqrt(3.0)


@dataclass(frozen=True)
class ModelSpec:
    name: str
    n: int
    symmetric: bool
    mean_zero: bool
    isotropic: bool
    lambda1: Optional[float] = None
    lambda_cap: Optional[float] = None
    lambda_cap_is_bound: bool = False
    cf1: Optional[Callable[[np.ndarray], np.ndarray]] = None
    radial_constant: bool = False

    def __post_init__(self):
        if self.isotropic and self.mean_zero and self.lambda1 is not None:
            if self.lambda1 > 1.0 + 1e-12:
                raise ValueError("isotropic mean-zero laws force lambda1 <= 1")
        if self.lambda_cap is not None and not self.lambda_cap_is_bound:
            if self.lambda_cap < (self.n - 1) / self.n - 1e-12:
                raise ValueError("Lambda is bounded below by (n-1)/n")
        if (self.lambda1 is not None and self.lambda_cap is not None
                and self.lambda_cap_is_bound):
            if self.lambda_cap > 4.0 / self.lambda1 + 1e-9:
                raise ValueError("Lambda bound exceeds 4 / lambda1")

    def to_json(self) -> dict:
        return {
            "name": self.name,
            "n": self.n,
            "symmetric": self.symmetric,
            "mean_zero": self.mean_zero,
            "isotropic": self.isotropic,
            "lambda1": self.lambda1,
            "lambda_cap": self.lambda_cap,
            "lambda_cap_is_bound": self.lambda_cap_is_bound,
            "has_cf1": self.cf1 is not None,
            "radial_constant": self.radial_constant,
        }

    def dumps(self) -> str:
        return json.dumps(self.to_json(), sort_keys=True)


def _cf_gaussian(s):
    return np.exp(-0.5 * np.square(s))


def _cf_rademacher(s):
    return np.cos(s)


def _cf_uniform(s):
    # sin(sqrt3 s) / (sqrt3 s) with the removable singularity at 0
    return np.sinc(SQRT3 * np.asarray(s) / np.pi)


def _cf_centered_exp(s):
    s = np.asarray(s, dtype=float)
    return np.exp(-1j * s) / (1.0 - 1j * s)


def make_model(name: str, n: int) -> ModelSpec:
    """Fully populated model specification for a supported name."""
    if n < 3:
        raise ValueError(f"need n >= 3, got {n}")
    if name == "gaussian":
        return ModelSpec(name, n, symmetric=True, mean_zero=True,
                         isotropic=True, lambda1=1.0, lambda_cap=2.0,
                         lambda_cap_is_bound=False, cf1=_cf_gaussian)
    if name == "rademacher":
        return ModelSpec(name, n, symmetric=True, mean_zero=True,
                         isotropic=True, lambda1=None, lambda_cap=2.0,
                         lambda_cap_is_bound=True, cf1=_cf_rademacher)
    if name == "uniform_product":
        return ModelSpec(name, n, symmetric=True, mean_zero=True,
                         isotropic=True, lambda1=math.pi**2 / 12.0,
                         lambda_cap=2.0 * 9.0 / 5.0,
                         lambda_cap_is_bound=True, cf1=_cf_uniform)
    if name == "centered_exp":
        return ModelSpec(name, n, symmetric=False, mean_zero=True,
                         isotropic=True, lambda1=0.25, lambda_cap=16.0,
                         lambda_cap_is_bound=True, cf1=_cf_centered_exp)
    if name == "sphere_shell":
        return ModelSpec(name, n, symmetric=True, mean_zero=True,
                         isotropic=True, lambda1=(n - 1) / n,
                         lambda_cap=2.0 * n / (n + 2),
                         lambda_cap_is_bound=False, cf1=None,
                         radial_constant=True)
    raise ValueError(f"unknown model {name!r}; supported: {', '.join(MODEL_NAMES)}")


def sample_matrix(model: ModelSpec, count: int, stream: RandomStream) -> np.ndarray:
    """`count` independent draws of X, one per row."""
    gen = stream.gen
    n = model.n
    if model.name == "gaussian":
        return gen.standard_normal((count, n))
    if model.name == "rademacher":
        return gen.integers(0, 2, size=(count, n)).astype(float) * 2.0 - 1.0
    if model.name == "uniform_product":
        return gen.uniform(-SQRT3, SQRT3, size=(count, n))
    if model.name == "centered_exp":
        # inversion from uniforms keeps the draw reproducible across platforms
        u = gen.random((count, n))
        return -np.log1p(-u) - 1.0
    if model.name == "sphere_shell":
        return sample_directions(n, count, stream) * math.sqrt(n)
    raise ValueError(f"unknown model {model.name!r}")


def sample_vector(model: ModelSpec, stream: RandomStream) -> np.ndarray:
    """One draw of X."""
    return sample_matrix(model, 1, stream)[0]


@dataclass
class IsotropyAudit:
    model_name: str
    n: int
    samples: int
    max_moment_dev: float
    moment_se: float
    radial_dev: float
    radial_se: float
    passed: bool

    def to_json(self) -> dict:
        return {
            "model": self.model_name,
            "n": self.n,
            "samples": self.samples,
            "max_moment_dev": self.max_moment_dev,
            "moment_se": self.moment_se,
            "radial_dev": self.radial_dev,
            "radial_se": self.radial_se,
            "pass": self.passed,
        }


def isotropy_audit(model: ModelSpec, samples: int, stream: RandomStream,
                   sampler: Callable | None = None) -> IsotropyAudit:
    """Check E X_i X_j = delta_ij and E |X|^2 = n empirically (4-sigma gates).

    `sampler` overrides the model sampler; used by tests to feed distorted
    draws and confirm the audit catches them.
    """
    if samples < 10**3:
        raise ValueError("need at least 1000 samples")
    n = model.n
    draw = sampler if sampler is not None else (
        lambda count: sample_matrix(model, count, stream))

    sum_outer = np.zeros((n, n))
    sum_outer_sq = np.zeros((n, n))
    sq_norms = np.empty(samples)
    block = max(1, int(4e6 // max(n, 1)))
    for lo in range(0, samples, block):
        hi = min(lo + block, samples)
        x = draw(hi - lo)
        g = x.T @ x
        sum_outer += g
        sum_outer_sq += np.einsum("bi,bj->ij", x * x, x * x)
        sq_norms[lo:hi] = np.einsum("ij,ij->i", x, x)

    second = sum_outer / samples
    var = sum_outer_sq / samples - second * second
    se = np.sqrt(np.maximum(var, 0.0) / samples)
    dev = np.abs(second - np.eye(n))
    max_dev = float(np.max(dev))
    moment_se = float(se.flat[np.argmax(dev)])

    radial_dev = abs(float(np.mean(sq_norms)) - n)
    radial_se = float(np.std(sq_norms) / math.sqrt(samples))

    ok = bool(np.all(dev <= 4.0 * se + 1e-12)
              and radial_dev <= 4.0 * radial_se + 1e-12)
    return IsotropyAudit(model.name, n, samples, max_dev, moment_se,
                         radial_dev, radial_se, ok)
