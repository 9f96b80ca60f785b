"""Experiment orchestration and command-line interface.

Reproduces the headline phenomena at desk scale:

* rate sweeps: average Kolmogorov distance over random directions against
  the dimension, with a log-log slope fit (typical laws decay roughly like
  log n / n, the equal-coefficient sign baseline like 1/sqrt(n));
* tail sweeps: the direction-level survival function of the distance,
  which should be subexponential in sqrt(distance/scale) with scale
  lambda1^{-1} log n / n;
* linear-part reports: the functional I(t) in exact and asymptotic form,
  its integral correction term, and the non-symmetric pair functionals;
* a verification suite bundling the density and characteristic-function
  error budgets, decay bounds, isotropy audits, directional-variance
  checks, Poincare consequences, and long-interval integral moments.

Every run is a pure function of (config, seed): directions, samples, and
Monte Carlo substreams are indexed deterministically, reductions happen
in index order, and the worker count never changes results.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import math
import os
import subprocess
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, fields, replace

import numpy as np
from scipy import stats

from . import charfn, distance, functionals, sphere_core
from .models import MODEL_NAMES, make_model, isotropy_audit
from .sphere_core import RandomStream, UnitVector

logger = logging.getLogger(__name__)

METHODS = ("exact", "empirical", "inversion", "be-bound")

# stream id layout: one block per (n index, direction); low slots for
# auxiliary draws inside a task
_N_BLOCK = 1 << 40
_DIR_BLOCK = 1 << 8


def _task_stream(seed: int, n_idx: int, direction: int, slot: int = 0) -> RandomStream:
    return RandomStream(seed, (n_idx + 1) * _N_BLOCK
                        + (direction + 1) * _DIR_BLOCK + slot)


@dataclass
class ExperimentConfig:
    model_name: str = "uniform_product"
    n_list: list = field(default_factory=lambda: [16, 32, 64])
    directions_per_n: int = 100
    distance_method: str = "inversion"
    samples: int = 100_000
    seed: int = 0
    T0_rule: str = "4*sqrt(log n)"
    T_rule: str = "4*n"
    output_dir: str = "results"
    inversion_accuracy: float = 1e-7
    pairs: int = 1_000_000
    t_count: int = 12
    p_sum: int = 2
    workers: int = 1
    equal_coefficients: bool = False

    def validate(self) -> None:
        if self.model_name not in MODEL_NAMES:
            raise ValueError(f"unknown model {self.model_name!r}")
        if self.distance_method not in METHODS:
            raise ValueError(f"unknown method {self.distance_method!r}")
        if not self.n_list:
            raise ValueError("n_list must be nonempty")
        if any(b <= a for a, b in zip(self.n_list, self.n_list[1:])):
            raise ValueError("n_list must be strictly ascending")
        if not self.equal_coefficients and self.directions_per_n < 10:
            raise ValueError("need at least 10 directions per n")

    def to_json(self) -> dict:
        # workers and output_dir are execution details, not experiment
        # identity: results must be byte-identical across worker counts
        out = {f.name: getattr(self, f.name) for f in fields(self)
               if f.name not in ("workers", "output_dir")}
        out["n_list"] = list(self.n_list)
        return out

    @property
    def config_hash(self) -> str:
        payload = json.dumps(self.to_json(), sort_keys=True)
        return hashlib.sha256(payload.encode()).hexdigest()[:12]


def parse_rule(rule: str):
    """Named T0 / T rules; anything else must be a numeric literal."""
    table = {
        "4*sqrt(log n)": lambda n, T0=None: 4.0 * math.sqrt(math.log(n)),
        "4*n": lambda n, T0=None: 4.0 * n,
        "T0*n": lambda n, T0=None: T0 * n,
    }
    if rule in table:
        return table[rule]
    value = float(rule)
    return lambda n, T0=None: value


def method_floor(config: ExperimentConfig) -> float:
    """Resolution floor of the configured distance method."""
    if config.distance_method == "inversion":
        return config.inversion_accuracy
    if config.distance_method == "empirical":
        return math.sqrt(math.log(2.0 / 0.01) / (2.0 * config.samples))
    if config.distance_method == "exact":
        return 1e-15
    return 0.0


def check_method_model(config: ExperimentConfig) -> None:
    """Reject method/model mismatches before any computation."""
    model = make_model(config.model_name, max(config.n_list))
    if config.distance_method == "exact" and config.model_name != "rademacher":
        raise ValueError("exact enumeration requires the rademacher model")
    if config.distance_method == "inversion":
        if model.cf1 is None:
            raise ValueError(f"inversion needs a closed-form coordinate CF; "
                             f"{config.model_name} has none")
        if config.model_name == "rademacher":
            raise ValueError("inversion does not apply to purely atomic "
                             "laws; use the exact method")


def _direction_for(config: ExperimentConfig, n: int, n_idx: int,
                   d: int) -> UnitVector:
    if config.equal_coefficients:
        return UnitVector(n, np.full(n, 1.0 / math.sqrt(n)))
    return sphere_core.sample_direction(n, _task_stream(config.seed, n_idx, d, 0))


def _distance_task(args) -> distance.DistanceEstimate:
    config, n, n_idx, d = args
    model = make_model(config.model_name, n)
    theta = _direction_for(config, n, n_idx, d)
    method = config.distance_method
    if method == "exact":
        dist = distance.rademacher_sum_distribution(theta.coords)
        return distance.ks_exact_discrete(dist)
    if method == "empirical":
        from .models import sample_matrix
        s = sample_matrix(model, config.samples,
                          _task_stream(config.seed, n_idx, d, 1)) @ theta.coords
        return distance.ks_empirical(s)
    if method == "inversion":
        cf = distance.product_cf(model, theta)
        return distance.ks_inversion(cf, config.inversion_accuracy)
    T0 = parse_rule(config.T0_rule)(n)
    T = parse_rule(config.T_rule)(n, T0=T0)
    return distance.be_upper_bound(model, theta, max(T0, 1.0), T,
                                   config.samples,
                                   _task_stream(config.seed, n_idx, d, 1))


def _map_ordered(fn, items, workers: int):
    if workers <= 1:
        return [fn(item) for item in items]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, items, chunksize=1))


def distances_for_n(config: ExperimentConfig, n: int,
                    n_idx: int) -> tuple[np.ndarray, list]:
    count = 1 if config.equal_coefficients else config.directions_per_n
    tasks = [(config, n, n_idx, d) for d in range(count)]
    estimates = _map_ordered(_distance_task, tasks, config.workers)
    rows = [est.csv_row(f"n{n}_d{d}") for d, est in enumerate(estimates)]
    return np.asarray([est.value for est in estimates]), rows


@dataclass
class SweepResult:
    kind: str
    model_name: str
    method: str
    rows: list
    slope: float | None = None
    slope_ci: tuple | None = None
    tail_table: list | None = None
    tail_fit: dict | None = None
    records: list = field(default_factory=list)
    per_direction: dict = field(default_factory=dict)
    distance_rows: list = field(default_factory=list)

    def validate(self) -> None:
        for row in self.rows:
            q = [row["median_rho"], row["q90"], row["q99"], row["max_rho"]]
            if any(b < a - 1e-15 for a, b in zip(q, q[1:])):
                raise ValueError(f"quantiles out of order at n={row['n']}")


def _aggregate(n: int, rho: np.ndarray) -> dict:
    return {
        "n": n,
        "mean_rho": float(np.mean(rho)),
        "median_rho": float(np.median(rho)),
        "q90": float(np.quantile(rho, 0.9)),
        "q99": float(np.quantile(rho, 0.99)),
        "max_rho": float(np.max(rho)),
        "se": float(np.std(rho) / math.sqrt(rho.size)) if rho.size > 1 else 0.0,
    }


def fit_rate_slope(rows: list, floor: float) -> tuple[float, tuple, list]:
    """OLS slope of log mean_rho against log n with a 95% CI.

    Drops leading rows whose mean is within 3x the method floor, where the
    measured distance is resolution-limited and would bias the fit.
    """
    usable = list(rows)
    while len(usable) > 2 and usable[0]["mean_rho"] <= 3.0 * floor:
        usable = usable[1:]
    xs = np.log([r["n"] for r in usable])
    ys = np.log([max(r["mean_rho"], 1e-300) for r in usable])
    with np.errstate(invalid="ignore"):  # stderr is NaN at two points
        res = stats.linregress(xs, ys)
    dof = len(usable) - 2
    width = stats.t.ppf(0.975, dof) * res.stderr if dof > 0 else math.inf
    return float(res.slope), (float(res.slope - width), float(res.slope + width)), usable


def run_rate_sweep(config: ExperimentConfig) -> SweepResult:
    """Mean distance against dimension with a fitted log-log slope."""
    config.validate()
    check_method_model(config)
    rows = []
    per_direction = {}
    distance_rows = []
    for n_idx, n in enumerate(config.n_list):
        rho, dist_rows = distances_for_n(config, n, n_idx)
        per_direction[n] = rho.tolist()
        distance_rows.extend(dist_rows)
        rows.append(_aggregate(n, rho))
        logger.info("rate n=%d mean=%.3e median=%.3e", n,
                    rows[-1]["mean_rho"], rows[-1]["median_rho"])
    slope, ci, _ = fit_rate_slope(rows, method_floor(config))
    result = SweepResult("rate", config.model_name, config.distance_method,
                         rows, slope=slope, slope_ci=ci,
                         per_direction=per_direction,
                         distance_rows=distance_rows)
    result.records.append(functionals.info_record(
        "rate_slope", slope, (ci[1] - ci[0]) / 4.0,
        note=f"95% CI [{ci[0]:.3f}, {ci[1]:.3f}]"))
    result.validate()
    return result


def fit_tail(rho: np.ndarray, scale: float) -> dict:
    """Linear fit of log survival against sqrt(rho/scale) over quantiles 50-99%.

    Under a subexponential tail survival(r * scale) <= 2 exp(-sqrt(r/c))
    the fit is linear with slope -1/sqrt(c); returns the fitted c, the fit
    quality, and whether the bound holds with the fitted constant across
    the observed range.
    """
    m = rho.size
    order = np.sort(rho)
    i_lo, i_hi = int(0.50 * m), int(0.99 * m)
    sel = np.arange(i_lo, i_hi)
    surv = 1.0 - (sel + 1) / m
    keep = surv > 0
    sel, surv = sel[keep], surv[keep]
    x = np.sqrt(order[sel] / scale)
    y = np.log(surv)
    res = stats.linregress(x, y)
    c_hat = 1.0 / res.slope**2 if res.slope < 0 else math.inf
    bound_ok = bool(np.all(surv <= 2.0 * np.exp(-np.sqrt(order[sel] / (scale * c_hat)))))
    return {"c_hat": float(c_hat), "slope": float(res.slope),
            "intercept": float(res.intercept), "r2": float(res.rvalue**2),
            "bound_holds": bound_ok, "scale": float(scale)}


def run_tail_sweep(config: ExperimentConfig) -> SweepResult:
    """Survival function of the distance over many directions at fixed n."""
    config.validate()
    check_method_model(config)
    if config.directions_per_n < 500:
        raise ValueError("tail sweeps need at least 500 directions")
    floor = method_floor(config)
    rows = []
    tail_table = []
    tail_fit = None
    records = []
    per_direction = {}
    distance_rows = []
    for n_idx, n in enumerate(config.n_list):
        rho, dist_rows = distances_for_n(config, n, n_idx)
        per_direction[n] = rho.tolist()
        distance_rows.extend(dist_rows)
        rows.append(_aggregate(n, rho))
        model = make_model(config.model_name, n)
        if rows[-1]["q99"] <= floor:
            records.append(functionals.info_record(
                f"tail_degenerate_n{n}", rows[-1]["q99"],
                note="distances below method resolution; tail undefined"))
            continue
        if model.lambda1 is not None:
            scale = math.log(n) / (n * model.lambda1)
        else:
            scale = rows[-1]["mean_rho"]
        fit = fit_tail(rho, scale)
        tail_fit = fit
        order = np.sort(rho)
        grid = np.unique(np.linspace(0, rho.size - 1, 41).astype(int))
        tail_table = [{"r": float(order[i] / scale),
                       "survival": float(1.0 - (i + 1) / rho.size)}
                      for i in grid]
        records.append(functionals.info_record(
            f"tail_c_hat_n{n}", fit["c_hat"], note=f"R2={fit['r2']:.3f}"))
        records.append(InequalityRecordBool(
            f"tail_fit_r2_n{n}", fit["r2"], 0.8))
    result = SweepResult("tail", config.model_name, config.distance_method,
                         rows, tail_table=tail_table, tail_fit=tail_fit,
                         records=records, per_direction=per_direction,
                         distance_rows=distance_rows)
    result.validate()
    return result


def InequalityRecordBool(name, value, threshold) -> functionals.InequalityRecord:
    """Gate value >= threshold (deterministic, no statistical slack)."""
    return functionals.InequalityRecord(
        name, float(value), float(threshold), 0.0,
        passed=bool(value >= threshold), hard_fail=bool(value < threshold),
        kind="lower")


def run_linear_part_report(config: ExperimentConfig) -> dict:
    """I(t) curves, the integral correction term, and pair functionals."""
    config.validate()
    report = {"kind": "linear_part", "model": config.model_name, "per_n": []}
    records = []
    for n_idx, n in enumerate(config.n_list):
        model = make_model(config.model_name, n)
        if not model.mean_zero:
            raise ValueError("linear-part reports need a mean-zero model")
        T0 = parse_rule(config.T0_rule)(n)
        t_grid = T0 * np.arange(1, config.t_count + 1) / config.t_count
        curve = []
        for j, t in enumerate(t_grid):
            est = charfn.linear_part_exact(
                model, float(t), config.pairs,
                _task_stream(config.seed, n_idx, j, 2))
            curve.append(est)
        exact = np.array([e.exact_value for e in curve])
        ses = np.array([e.std_error for e in curve])

        def sqrt_int(vals):
            g = np.sqrt(np.maximum(vals, 0.0)) / t_grid
            return float(np.trapezoid(g, t_grid)) + float(g[0] * t_grid[0]) / 2.0

        # uncertainty as the half-width of the clipped 3-sigma envelope:
        # sqrt(max(I,0)) rectifies noise, so a plain delta-method SE would
        # understate the spread when I is consistent with zero
        integral = sqrt_int(exact)
        int_hi = sqrt_int(exact + 3.0 * ses)
        int_lo = sqrt_int(exact - 3.0 * ses)
        int_se = (int_hi - int_lo) / 2.0

        frag = functionals.nonsymmetric_quantities(
            model, config.pairs, _task_stream(config.seed, n_idx, 200, 3))
        lemma = next(r for r in frag.records if r.name == "lemma_ratio_n")
        records.extend(replace(r, name=f"{r.name}_n{n}") for r in frag.records)
        records.append(functionals.info_record(
            f"sqrt_I_integral_n{n}", integral, int_se))
        report["per_n"].append({
            "n": n, "T0": float(T0),
            "t_grid": t_grid.tolist(),
            "I_exact": exact.tolist(),
            "I_exact_se": ses.tolist(),
            "I_asymptotic": [e.asymptotic_value for e in curve],
            "I_asymptotic_se": [e.asymptotic_se for e in curve],
            "gap": [e.gap for e in curve],
            "gap_se": [e.gap_se for e in curve],
            "sqrt_I_integral": integral,
            "sqrt_I_integral_se": int_se,
            "lemma_ratio_n": lemma.lhs,
            "lemma_ratio_n_se": lemma.se,
        })
    ratios = [p["lemma_ratio_n"] for p in report["per_n"]]
    if len(ratios) > 1 and config.model_name == "centered_exp":
        span = max(ratios) / min(ratios) if min(ratios) > 0 else math.inf
        records.append(functionals.InequalityRecord(
            "lemma11_ratio_span", span, 4.0, 0.0, passed=bool(span <= 4.0),
            hard_fail=bool(span > 4.0), kind="upper",
            note="max/min of n E<X,Y>/R across n_list"))
    report["records"] = records
    return report


def _l_theta_for_direction(args) -> float:
    config, n, n_idx, d, T0, T = args
    model = make_model(config.model_name, n)
    theta = _direction_for(config, n, n_idx, d)
    if model.cf1 is not None:
        import warnings
        from scipy.integrate import quad
        cf = distance.product_cf(model, theta)
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")  # near-zero oscillatory tails
            val, _ = quad(lambda t: abs(complex(cf(np.asarray([t]))[0])) / t,
                          T0, T, epsabs=1e-12, epsrel=1e-9, limit=500)
        return float(val)
    if model.radial_constant:
        return distance._radial_abs_cf_integral(n, T0, T)
    from .models import sample_matrix
    s = sample_matrix(model, config.samples,
                      _task_stream(config.seed, n_idx, d, 1)) @ theta.coords
    nodes = np.geomspace(T0, T, 1500)
    vals = np.abs(np.exp(1j * np.outer(nodes, s)).mean(axis=1))
    return float(np.trapezoid(vals / nodes, nodes))


def direction_variance_check(model, n: int, t_values, n_dirs: int,
                             samples: int, stream: RandomStream) -> list:
    """Spherical variance of f_theta(t) against the bound t^2/(n-1).

    Exact product CFs where available; otherwise a Monte Carlo CF on a
    shared sample, whose noise only inflates the left side.
    """
    theta = sphere_core.sample_directions(n, n_dirs, stream.child(0))
    records = []
    if model.cf1 is not None:
        f_vals = {t: np.prod(model.cf1(theta * t), axis=1) for t in t_values}
    else:
        from .models import sample_matrix
        x = sample_matrix(model, samples, stream.child(1))
        s = x @ theta.T
        f_vals = {t: np.mean(np.exp(1j * t * s), axis=0) for t in t_values}
    for t in t_values:
        v = f_vals[t]
        dev = v - v.mean()
        w = np.abs(dev)**2 * n_dirs / (n_dirs - 1)
        est = float(np.mean(w))
        se = float(np.std(w) / math.sqrt(n_dirs))
        records.append(functionals.upper_record(
            f"cf_variance_t{t:g}_n{n}", est, se, t * t / (n - 1)))
    return records


def run_verification_suite(config: ExperimentConfig) -> dict:
    """Bundle of closed-form and statistical checks; one pass/fail summary."""
    config.validate()
    records = []

    # sphere geometry block (model independent)
    half = math.sqrt(10.0) / 2.0
    steps = int(half / 0.01)
    common = np.linspace(-steps * 0.01, steps * 0.01, 2 * steps + 1)
    budgets = {n: sphere_core.density_error_budget(n, common)
               for n in (10, 20, 50, 100, 200)}
    ratio = max(budgets.values()) / min(budgets.values())
    records.append(functionals.InequalityRecord(
        "density_budget_ratio", ratio, 4.0, 0.0, passed=bool(ratio <= 4.0),
        hard_fail=bool(ratio > 4.0), kind="upper",
        note=f"budgets {dict((k, round(v, 4)) for k, v in budgets.items())}"))
    t_grid = np.arange(1, 401) * 0.01
    c0s, c1s = zip(*(charfn.cf_error_budget(n, t_grid)
                     for n in (20, 40, 80, 160)))
    for tag, vals in (("c0", c0s), ("c1", c1s)):
        ratio = max(vals) / min(vals)
        records.append(functionals.InequalityRecord(
            f"cf_budget_{tag}_ratio", ratio, 4.0, 0.0,
            passed=bool(ratio <= 4.0), hard_fail=bool(ratio > 4.0),
            kind="upper"))
    decay_grid = np.arange(0, 501) * 0.01
    margin = min(charfn.decay_bound_margin(n, decay_grid)
                 for n in (10, 50, 200))
    records.append(functionals.InequalityRecord(
        "gaussian_decay_margin", margin, 0.0, 0.0,
        passed=bool(margin >= -1e-12), hard_fail=bool(margin < -1e-12),
        kind="lower"))

    for m_idx, name in enumerate(MODEL_NAMES):
        for n_idx, n in enumerate(config.n_list):
            model = make_model(name, n)
            base = RandomStream(config.seed,
                                (m_idx + 1) * 1000 + (n_idx + 1) * 37)
            audit = isotropy_audit(model, min(config.samples, 10**5),
                                   base.child(1))
            records.append(functionals.InequalityRecord(
                f"isotropy_{name}_n{n}", audit.max_moment_dev,
                4.0 * audit.moment_se, audit.moment_se,
                passed=audit.passed, hard_fail=not audit.passed,
                kind="upper"))

            records.extend(direction_variance_check(
                model, n, (0.5, 1.0, 2.0), 500,
                min(config.samples, 10**4), base.child(2)))

            poincare = functionals.verify_poincare_consequences(
                model, config.samples, config.p_sum, base.child(3))
            if poincare.skipped:
                records.append(functionals.info_record(
                    f"poincare_{name}_n{n}_skipped", 0.0,
                    note=poincare.skipped))
            else:
                for r in poincare.records:
                    records.append(replace(r, name=f"{name}_n{n}_{r.name}"))

            if model.lambda1 is not None:
                T0 = parse_rule("4*sqrt(log n)")(n)
                T = T0 * n
                n_dirs = 500
                tasks = [(config_for_model(config, name), n, n_idx, d, T0, T)
                         for d in range(n_dirs)]
                l_vals = np.asarray(_map_ordered(
                    _l_theta_for_direction, tasks, config.workers))
                mean_sq = float(np.mean(l_vals**2))
                p_a = 3.0 * math.exp(-math.sqrt(model.lambda1 * n) / 3.0)
                denom = (math.log(n)**2) * (4.0 / n**2 + p_a)
                c_hat = math.sqrt(mean_sq / denom) if denom > 0 else math.inf
                records.append(functionals.InequalityRecord(
                    f"long_integral_moment_{name}_n{n}", c_hat, 10.0, 0.0,
                    passed=bool(c_hat <= 10.0), hard_fail=bool(c_hat > 10.0),
                    kind="upper",
                    note=f"mean L^2 = {mean_sq:.3e}"))
    return {"kind": "verify", "records": records}


def config_for_model(config: ExperimentConfig, name: str) -> ExperimentConfig:
    return replace(config, model_name=name)


def git_describe() -> str:
    try:
        out = subprocess.run(["git", "describe", "--always", "--dirty"],
                             capture_output=True, text=True, timeout=10,
                             cwd=os.path.dirname(os.path.abspath(__file__)))
        if out.returncode == 0:
            return out.stdout.strip()
    except OSError:
        pass
    return "unknown"


def _records_json(records) -> list:
    return [r.to_json() for r in records]


def summarize(records) -> dict:
    failures = [r.name for r in records if not r.passed]
    hard = [r.name for r in records if r.hard_fail]
    return {"pass": not hard, "failures": failures, "hard_failures": hard}


def emit_outputs(result, config: ExperimentConfig, output_dir=None) -> dict:
    """Write results.csv, results.json, and SVG plots; returns file map.

    Outputs are byte-stable for a fixed (config, seed): record order is
    deterministic, JSON keys are sorted, and the SVG hash salt is pinned
    to the config hash.
    """
    out_dir = output_dir or config.output_dir
    os.makedirs(out_dir, exist_ok=True)
    plots = os.path.join(out_dir, "plots")
    os.makedirs(plots, exist_ok=True)
    stamp = f"# config_hash={config.config_hash} seed={config.seed}"
    files = {}

    if isinstance(result, SweepResult):
        records = result.records
        payload = {
            "kind": result.kind,
            "rows": result.rows,
            "slope": result.slope,
            "slope_ci": result.slope_ci,
            "tail_table": result.tail_table,
            "tail_fit": result.tail_fit,
        }
        csv_path = os.path.join(out_dir, "results.csv")
        with open(csv_path, "w") as fh:
            fh.write(stamp + "\n")
            fh.write("n,mean_rho,median_rho,q90,q99,max_rho,se\n")
            for row in result.rows:
                fh.write(",".join(repr(row[k]) for k in
                                  ("n", "mean_rho", "median_rho", "q90",
                                   "q99", "max_rho", "se")) + "\n")
        files["csv"] = csv_path
        if result.distance_rows:
            dist_path = os.path.join(out_dir, "distances.csv")
            with open(dist_path, "w") as fh:
                fh.write(stamp + "\n")
                fh.write("theta_id,method,value,error_radius,T0,T,L_theta\n")
                for row in result.distance_rows:
                    fh.write(",".join(str(v) for v in row) + "\n")
            files["distances"] = dist_path
    else:
        records = result["records"]
        payload = {k: v for k, v in result.items() if k != "records"}

    json_path = os.path.join(out_dir, "results.json")
    doc = {
        "config": {**config.to_json(), "config_hash": config.config_hash},
        "git_describe": git_describe(),
        "model_specs": {str(n): make_model(config.model_name, n).to_json()
                        for n in config.n_list},
        "records": _sanitize(_records_json(records)),
        "results": _sanitize(payload),
        "summary": summarize(records),
    }
    with open(json_path, "w") as fh:
        json.dump(doc, fh, sort_keys=True, indent=2)
        fh.write("\n")
    files["json"] = json_path

    svg = _plot(result, config, plots)
    files.update(svg)
    return files


def _sanitize(obj):
    if isinstance(obj, dict):
        return {k: _sanitize(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_sanitize(v) for v in obj]
    if isinstance(obj, (np.floating, np.integer)):
        return obj.item()
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, float) and math.isinf(obj):
        return "inf" if obj > 0 else "-inf"
    return obj


def _plot(result, config: ExperimentConfig, plots_dir: str) -> dict:
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt
    plt.rcParams["svg.hashsalt"] = config.config_hash
    files = {}

    def save(fig, name):
        path = os.path.join(plots_dir, name)
        fig.savefig(path, format="svg", metadata={"Date": None})
        plt.close(fig)
        files[name] = path

    if isinstance(result, SweepResult) and result.kind == "rate":
        ns = np.array([r["n"] for r in result.rows], dtype=float)
        means = np.array([r["mean_rho"] for r in result.rows])
        fig, ax = plt.subplots(figsize=(6, 4.5))
        ax.loglog(ns, means, "o", label=f"{result.model_name} mean")
        anchor = means[0] if means[0] > 0 else 1.0 / ns[0]
        for ref, style in ((-1.0, "--"), (-0.5, ":")):
            ax.loglog(ns, anchor * (ns / ns[0])**ref, style,
                      label=f"slope {ref:g}")
        if result.slope is not None:
            ax.loglog(ns, anchor * (ns / ns[0])**result.slope, "-",
                      label=f"fit slope {result.slope:.2f}")
        ax.set_xlabel("n")
        ax.set_ylabel("mean Kolmogorov distance")
        ax.legend()
        fig.tight_layout()
        save(fig, "rate_loglog.svg")
    elif isinstance(result, SweepResult) and result.kind == "tail":
        if result.tail_table:
            r = np.array([row["r"] for row in result.tail_table])
            surv = np.array([row["survival"] for row in result.tail_table])
            keep = surv > 0
            fig, ax = plt.subplots(figsize=(6, 4.5))
            ax.plot(np.sqrt(r[keep]), np.log(surv[keep]), "o",
                    label="log survival")
            if result.tail_fit:
                xs = np.sqrt(r[keep])
                ax.plot(xs, result.tail_fit["intercept"]
                        + result.tail_fit["slope"] * xs, "-",
                        label=f"fit (c={result.tail_fit['c_hat']:.2f})")
            ax.set_xlabel("sqrt(rho / scale)")
            ax.set_ylabel("log survival")
            ax.legend()
            fig.tight_layout()
            save(fig, "tail_survival.svg")
    elif isinstance(result, dict) and result.get("kind") == "linear_part":
        fig, ax = plt.subplots(figsize=(6, 4.5))
        for block in result["per_n"]:
            t = np.array(block["t_grid"])
            ax.errorbar(t, block["I_exact"], yerr=3 * np.array(block["I_exact_se"]),
                        fmt="o-", label=f"exact n={block['n']}")
            ax.plot(t, block["I_asymptotic"], "--",
                    label=f"asymptotic n={block['n']}")
        ax.set_xlabel("t")
        ax.set_ylabel("I(t)")
        ax.legend(fontsize=7)
        fig.tight_layout()
        save(fig, "linear_part.svg")
    return files


def _run_command(command: str, config: ExperimentConfig) -> int:
    if command == "rate":
        result = run_rate_sweep(config)
        records = result.records
    elif command == "tail":
        result = run_tail_sweep(config)
        records = result.records
    elif command == "linear-part":
        result = run_linear_part_report(config)
        records = result["records"]
    elif command == "lambda":
        records = []
        n = config.n_list[0]
        model = make_model(config.model_name, n)
        stream = RandomStream(config.seed, 7)
        report = functionals.moment_report(model, config.samples, 100, stream)
        for key, val in (("lambda_cap", report.lambda_cap_hat),
                         ("sigma4_sq", report.sigma4_sq_hat),
                         ("M4", report.M4_hat), ("m4", report.m4_hat),
                         ("beta4_bar", report.beta4_bar_hat)):
            records.append(functionals.info_record(
                f"{key}_{config.model_name}_n{n}", val,
                report.std_errors.get(key, 0.0)))
        result = {"kind": "lambda", "records": records,
                  "moment_report": report.to_json()}
    elif command == "verify":
        result = run_verification_suite(config)
        records = result["records"]
    else:  # all
        codes = []
        for cmd in ("verify", "rate", "tail", "linear-part"):
            sub = replace(config,
                          output_dir=os.path.join(config.output_dir, cmd))
            if cmd == "tail":
                sub = replace(sub, directions_per_n=max(
                    500, config.directions_per_n))
            codes.append(_run_command(cmd, sub))
        return max(codes)
    emit_outputs(result, config)
    summary = summarize(records)
    use_color = sys.stdout.isatty()

    def paint(state: str) -> str:
        if not use_color:
            return state
        codes = {"PASS": "32", "WARN": "33", "FAIL": "31"}
        return f"\x1b[{codes[state]}m{state}\x1b[0m"

    for r in records:
        state = "PASS" if r.passed else ("FAIL" if r.hard_fail else "WARN")
        print(f"[{paint(state)}] {r.name}: lhs={r.lhs:.6g}"
              + (f" rhs={r.rhs:.6g}" if r.rhs is not None else "")
              + (f" se={r.se:.2g}" if r.se else ""))
    print(f"summary: {paint('PASS' if summary['pass'] else 'FAIL')} "
          f"({len(records)} records, {len(summary['failures'])} soft, "
          f"{len(summary['hard_failures'])} hard)")
    return 0 if summary["pass"] else 1


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="sphere-clt",
        description="Normal-approximation experiments for weighted sums "
                    "with directions on the unit sphere")
    parser.add_argument("command",
                        choices=["verify", "rate", "tail", "linear-part",
                                 "lambda", "all"])
    parser.add_argument("--model", dest="model_name", choices=MODEL_NAMES)
    parser.add_argument("--n", dest="n_list", type=int, action="append",
                        help="dimension; repeatable")
    parser.add_argument("--directions", dest="directions_per_n", type=int)
    parser.add_argument("--samples", type=int)
    parser.add_argument("--pairs", type=int)
    parser.add_argument("--seed", type=int)
    parser.add_argument("--method", dest="distance_method", choices=METHODS)
    parser.add_argument("--accuracy", dest="inversion_accuracy", type=float)
    parser.add_argument("--workers", type=int)
    parser.add_argument("--equal-coefficients", dest="equal_coefficients",
                        action="store_true", default=None)
    parser.add_argument("--out", dest="output_dir")
    parser.add_argument("--config", dest="config_file",
                        help="JSON config; explicit flags override it")
    parser.add_argument("-v", "--verbose", action="store_true")
    return parser


def config_from_args(args) -> ExperimentConfig:
    base = {}
    if args.config_file:
        with open(args.config_file) as fh:
            base = json.load(fh)
    overrides = {k: v for k, v in vars(args).items()
                 if k not in ("command", "config_file", "verbose")
                 and v is not None}
    merged = {**base, **overrides}
    known = {f.name for f in fields(ExperimentConfig)}
    unknown = set(merged) - known
    if unknown:
        raise ValueError(f"unknown config keys: {sorted(unknown)}")
    return ExperimentConfig(**merged)


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING,
        format="%(asctime)s %(name)s %(levelname)s %(message)s")
    try:
        config = config_from_args(args)
        config.validate()
        check_ok = args.command not in ("rate", "tail")
        if not check_ok:
            check_method_model(config)
    except (ValueError, OSError, json.JSONDecodeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    try:
        return _run_command(args.command, config)
    except (ValueError, OSError) as exc:  # bad run parameters, unwritable path
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
