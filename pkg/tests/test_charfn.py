import math

import numpy as np
import pytest
from numpy.testing import assert_allclose

from sphere_clt import charfn as cf
from sphere_clt.models import make_model
from sphere_clt.sphere_core import RandomStream, UnitVector, sample_directions


class TestJn:
    def test_value_at_zero(self):
        for n in (3, 7, 64, 333):
            assert_allclose(cf.jn(n, 0.0), 1.0, atol=1e-13)

    def test_n3_closed_form(self):
        # at n=3 the coordinate is uniform on [-1, 1]
        for t in (0.5, 1.0, 2.0):
            assert abs(cf.jn(3, t) - math.sin(t) / t) <= 1e-10

    def test_bounded_and_even(self):
        u = np.linspace(0.0, 8.0, 100)
        vals = cf.jn_scaled_many(17, u)
        assert np.all(np.abs(vals) <= 1.0 + 1e-12)
        assert_allclose(cf.jn_scaled(17, -1.3), cf.jn_scaled(17, 1.3), rtol=1e-12)

    def test_unsupported_dimension(self):
        with pytest.raises(ValueError, match="n >= 3"):
            cf.jn(2, 1.0)

    @pytest.mark.parametrize("n", [10, 50, 200])
    def test_gaussian_decay_bound(self, n):
        # |J_n(t sqrt n)| <= 5 e^{-t^2/2} + 4 e^{-n/12} pointwise
        grid = np.arange(0, 501) * 0.01
        assert cf.decay_bound_margin(n, grid) >= -1e-12

    def test_vectorized_matches_adaptive(self):
        u = np.array([0.1, 0.9, 2.2, 4.4, 7.7])
        for n in (4, 6, 23, 150):
            a = cf.jn_scaled_many(n, u)
            b = np.array([cf.jn_scaled(n, float(x)) for x in u])
            assert_allclose(a, b, atol=2e-13)


class TestJnDerivatives:
    def test_first_derivative_at_zero(self):
        assert cf.jn_scaled_deriv(16, 0.0, 1) == 0.0

    def test_second_derivative_at_zero(self):
        # E (sqrt(n) theta_1)^2 = 1 for every n
        for n in (5, 33, 200):
            assert abs(cf.jn_scaled_deriv(n, 0.0, 2) + 1.0) <= 1e-8

    def test_unsupported_order(self):
        with pytest.raises(ValueError, match="order"):
            cf.jn_scaled_deriv(10, 1.0, 3)

    def test_derivative_budget_stable(self):
        # |(J_n(t sqrt n))' - g_n'(t)| = O(1/n^2) with a stable constant
        def budget(n):
            g = (1.0 / (4 * n) - 1.0 / n - 1.0) * math.exp(-0.5)
            return abs(cf.jn_scaled_deriv(n, 1.0, 1) - g) * n * n

        assert budget(100) <= 10.0 * budget(50)

    def test_vectorized_matches_adaptive(self):
        u = np.array([0.2, 1.1, 3.3])
        for n in (4, 40):
            a = cf._scaled_cf_many(n, u, deriv=1)
            b = np.array([cf.jn_scaled_deriv(n, float(x), 1) for x in u])
            assert_allclose(a, b, atol=2e-12)


class TestCorrectedCF:
    def test_at_zero(self):
        assert cf.corrected_cf(50, 0.0) == (1.0, 0.0)

    def test_large_n_limit(self):
        value, _ = cf.corrected_cf(10**9, 1.7)
        assert_allclose(value, math.exp(-0.5 * 1.7**2), rtol=1e-8)

    def test_arithmetic_example(self):
        value, _ = cf.corrected_cf(25, 2.0)
        assert_allclose(value, 0.84 * math.exp(-2.0), rtol=1e-14)

    def test_derivative_consistent(self):
        h = 1e-6
        for n, t in ((12, 0.7), (80, 2.1)):
            v_plus, _ = cf.corrected_cf(n, t + h)
            v_minus, _ = cf.corrected_cf(n, t - h)
            _, deriv = cf.corrected_cf(n, t)
            assert abs((v_plus - v_minus) / (2 * h) - deriv) <= 1e-7


class TestCFErrorBudget:
    def test_rejects_zero_only_grid(self):
        with pytest.raises(ValueError, match="nonzero"):
            cf.cf_error_budget(20, [0.0])

    def test_stable_across_n(self):
        grid = np.arange(1, 401) * 0.01
        c0_20, c1_20 = cf.cf_error_budget(20, grid)
        c0_80, c1_80 = cf.cf_error_budget(80, grid)
        assert max(c0_20, c0_80) / min(c0_20, c0_80) <= 4.0
        assert max(c1_20, c1_80) / min(c1_20, c1_80) <= 4.0

    def test_quartic_small_t_behavior(self):
        # |J_n(t sqrt n) - g_n(t)| = O(t^4): the ratio stabilizes below t=0.1
        ts = np.array([0.02, 0.04, 0.06, 0.08, 0.10])
        gaps = np.abs(cf.jn_scaled_many(40, ts)
                      - cf._corrected_cf_arrays(40, ts)[0]) / ts**4
        assert np.max(gaps) / np.min(gaps) <= 2.0

    def test_boundary_dimension(self):
        c0, c1 = cf.cf_error_budget(3, np.arange(1, 101) * 0.04)
        assert math.isfinite(c0) and math.isfinite(c1)


class TestKnPrime:
    def test_domain_error(self):
        with pytest.raises(ValueError, match="nonnegative"):
            cf.kn_prime(10, -0.5)

    def test_asymptotic_at_zero(self):
        assert cf.kn_prime(77, 0.0, "asymptotic") == -0.5

    def test_exact_at_zero(self):
        assert cf.kn_prime(77, 0.0, "exact") == -0.5

    def test_asymptotic_decays(self):
        assert abs(cf.kn_prime(10, 60.0, "asymptotic")) < 1e-10

    def test_exact_asymptotic_gap_scales_quadratically(self):
        # oracle: exact-mode evaluation at two dimensions
        for s in (0.5, 1.0, 2.0):
            d100 = abs(cf.kn_prime(100, s) - cf.kn_prime(100, s, "asymptotic"))
            d400 = abs(cf.kn_prime(400, s) - cf.kn_prime(400, s, "asymptotic"))
            ratio = d100 / d400
            assert 4.0 <= ratio <= 64.0  # within factor 4 of (400/100)^2

    def test_vectorized_matches_scalar(self):
        s = np.array([0.0, 0.4, 1.9, 5.0])
        got = cf.kn_prime_many(48, s)
        want = np.array([cf.kn_prime(48, float(v)) for v in s])
        assert_allclose(got, want, atol=1e-10)

    def test_unknown_mode(self):
        with pytest.raises(ValueError, match="mode"):
            cf.kn_prime(10, 1.0, "wrong")


class TestWeightedSumCF:
    def test_at_zero(self):
        model = make_model("uniform_product", 6)
        theta = UnitVector(6, np.eye(6)[0])
        assert cf.weighted_sum_cf(model, theta, 0.0, 10) == 1.0

    def test_dimension_mismatch(self):
        model = make_model("gaussian", 6)
        theta = UnitVector(5, np.eye(5)[0])
        with pytest.raises(ValueError, match="mismatch"):
            cf.weighted_sum_cf(model, theta, 1.0, 10)

    def test_gaussian_rotation_invariant(self):
        model = make_model("gaussian", 8)
        coords = sample_directions(8, 1, RandomStream(3, 1))[0]
        got = cf.weighted_sum_cf(model, UnitVector(8, coords), 1.3, 10)
        assert_allclose(got, math.exp(-0.5 * 1.3**2), rtol=1e-12)

    def test_rademacher_enumeration(self):
        # oracle: enumerate the four sign patterns
        c = 1.0 / math.sqrt(2.0)
        model = make_model("rademacher", 3)
        theta = UnitVector(3, np.array([c, c, 0.0]))
        t = 1.0
        signs = [(-1, -1), (-1, 1), (1, -1), (1, 1)]
        oracle = np.mean([np.exp(1j * t * (a * c + b * c)) for a, b in signs])
        got = cf.weighted_sum_cf(model, theta, t, 10)
        assert_allclose(got, oracle, rtol=1e-12)
        assert_allclose(got.real, math.cos(c) ** 2, rtol=1e-12)

    def test_monte_carlo_path(self):
        model = make_model("sphere_shell", 12)
        theta = UnitVector(12, np.eye(12)[0])
        got = cf.weighted_sum_cf(model, theta, 0.8, 40_000, RandomStream(3, 2))
        want = cf.jn_scaled(12, 0.8)
        assert abs(got - want) <= 0.03

    def test_product_cf_modulus_bounded(self):
        model = make_model("centered_exp", 10)
        theta = UnitVector(10, sample_directions(10, 1, RandomStream(3, 3))[0])
        for t in (0.3, 1.0, 4.0):
            assert abs(cf.weighted_sum_cf(model, theta, t, 10)) <= 1.0 + 1e-12

    @pytest.mark.parametrize("name", ["rademacher", "uniform_product",
                                      "centered_exp"])
    def test_product_matches_direct_monte_carlo(self, name):
        # spot check: the closed-form product equals the sampled sum CF
        from sphere_clt.models import sample_matrix
        n, t, m = 10, 1.2, 10**5
        model = make_model(name, n)
        theta = UnitVector(n, sample_directions(n, 1, RandomStream(3, 4))[0])
        exact = cf.weighted_sum_cf(model, theta, t, 10)
        e = np.exp(1j * t * (sample_matrix(model, m, RandomStream(3, 5))
                             @ theta.coords))
        se = math.sqrt((np.var(e.real) + np.var(e.imag)) / m)
        assert abs(np.mean(e) - exact) <= 4 * se


class TestMeanCF:
    def test_at_zero(self):
        model = make_model("gaussian", 8)
        assert cf.mean_cf(model, 0.0, 1000, RandomStream(4, 0)) == 1.0

    def test_radial_degenerate(self):
        # |X| = sqrt(n) a.s. makes the average CF exactly J_n(t sqrt n)
        model = make_model("sphere_shell", 16)
        got = cf.mean_cf(model, 1.2, 2000, RandomStream(4, 1))
        assert_allclose(got.real, cf.jn_scaled(16, 1.2), atol=1e-7)

    def test_against_double_monte_carlo(self):
        # oracle: direct double Monte Carlo over (X, theta)
        n, t, m = 50, 1.0, 10**5
        model = make_model("gaussian", n)
        got = cf.mean_cf(model, t, m, RandomStream(4, 2)).real

        gen = RandomStream(4, 3)
        x = gen.gen.standard_normal((m, n))
        theta = sample_directions(n, m, RandomStream(4, 4))
        s = np.einsum("ij,ij->i", x, theta)
        vals = np.cos(t * s)
        oracle = float(np.mean(vals))
        joint_se = math.sqrt(np.var(vals) / m) + 3e-4
        assert abs(got - oracle) <= 3 * joint_se


def direction_average_linear_part(model, t: float, pairs: int,
                                  stream: RandomStream) -> tuple[float, float]:
    """Independent oracle for I(t): the defining double spherical average
    n E <theta, theta'> f_theta(t) conj(f_theta'(t)) over direction pairs,
    with exact product characteristic functions."""
    n = model.n
    a = sample_directions(n, pairs, stream.child(0))
    b = sample_directions(n, pairs, stream.child(1))
    fa = np.prod(model.cf1(a * t), axis=1)
    fb = np.prod(model.cf1(b * t), axis=1)
    terms = n * np.einsum("ij,ij->i", a, b) * fa * np.conj(fb)
    value = float(np.mean(terms.real))
    se = float(np.std(terms.real) / math.sqrt(pairs))
    assert abs(np.mean(terms.imag)) <= 3 * np.std(terms.imag) / math.sqrt(pairs)
    return value, se


class TestLinearPart:
    def test_pairs_guard(self):
        model = make_model("gaussian", 8)
        with pytest.raises(ValueError, match="pairs"):
            cf.linear_part_exact(model, 1.0, 1, RandomStream(5, 0))

    def test_symmetric_models_vanish(self):
        for name in ("gaussian", "rademacher", "uniform_product"):
            model = make_model(name, 16)
            est = cf.linear_part_exact(model, 1.0, 10**5, RandomStream(5, 1))
            assert abs(est.exact_value) <= 3 * max(est.std_error, 1e-15), name
            assert abs(est.asymptotic_value) <= 3 * max(est.asymptotic_se, 1e-15)

    def test_radial_mean_zero_vanishes(self):
        model = make_model("sphere_shell", 16)
        est = cf.linear_part_exact(model, 1.0, 10**4, RandomStream(5, 2))
        assert abs(est.exact_value) <= 3 * max(est.std_error, 1e-15)

    def test_nonsymmetric_positive(self):
        model = make_model("centered_exp", 32)
        est = cf.linear_part_exact(model, 1.0, 4 * 10**5, RandomStream(5, 3))
        assert est.exact_value > 3 * est.std_error > 0

    def test_against_spherical_average_oracle(self):
        # radial-kernel pair form vs the defining double direction average
        model = make_model("centered_exp", 8)
        got = cf.linear_part_exact(model, 1.0, 6 * 10**5, RandomStream(5, 4))
        oracle, oracle_se = direction_average_linear_part(
            model, 1.0, 4 * 10**5, RandomStream(5, 5))
        joint = math.hypot(got.std_error, oracle_se)
        assert abs(got.exact_value - oracle) <= 4 * joint

    def test_asymptotic_zero_at_zero(self):
        model = make_model("centered_exp", 16)
        assert cf.linear_part_asymptotic(model, 0.0, 1000, RandomStream(5, 6)) == 0.0

    def test_gap_scaling_adjacent(self):
        # remainder of the explicit form, adjacent dimension pairs
        gaps = {}
        for n in (16, 32, 64):
            model = make_model("centered_exp", n)
            est = cf.linear_part_exact(model, 1.0, 10**6, RandomStream(5, 7 + n))
            gaps[n] = abs(est.gap)
        expected = 2.0 ** 2.5
        assert expected / 4.0 <= gaps[16] / gaps[32] <= expected * 4.0
        assert expected / 4.0 <= gaps[32] / gaps[64] <= expected * 4.0

    def test_json_record_schema(self):
        model = make_model("gaussian", 8)
        est = cf.linear_part_exact(model, 0.5, 1000, RandomStream(5, 8))
        rec = est.to_json_record()
        assert set(rec) == {"t", "exact", "asymptotic", "se", "pairs"}


class TestSphericalVarianceBound:
    def test_direction_variance_below_poincare_bound(self):
        # E_theta |f_theta(t) - f(t)|^2 <= t^2/(n-1), exact product CFs
        n, t, dirs = 16, 1.0, 500
        model = make_model("uniform_product", n)
        theta = sample_directions(n, dirs, RandomStream(6, 0))
        vals = np.prod(model.cf1(theta * t), axis=1)
        dev = np.abs(vals - vals.mean()) ** 2 * dirs / (dirs - 1)
        est = float(np.mean(dev))
        se = float(np.std(dev) / math.sqrt(dirs))
        assert est - 3 * se <= t * t / (n - 1)


class TestCFProfile:
    def test_build_and_csv(self, tmp_path):
        profile = cf.build_cf_profile(20, np.linspace(0.0, 4.0, 81))
        path = tmp_path / "cf.csv"
        profile.to_csv(path)
        header = path.read_text().splitlines()[0]
        assert header == "t,jn_scaled,corrected,corrected_deriv"
        assert profile.jn_scaled[0] == pytest.approx(1.0, abs=1e-12)
