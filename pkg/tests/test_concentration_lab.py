"""
Unit tests for maximal deviations over the rectangle-complement class.

Critical behaviors tested:
1. Union masses are exact for the oracle models and agree with frequencies
2. The exact cell scan agrees with a brute-force scan around every breakpoint
3. Bounds reproduce their closed forms and guard their regimes
4. Rademacher averages, q and calibrated coverage behave as the theory predicts
"""

import itertools
import math

import numpy as np
import pytest

from stdf_lab.concentration_lab import (
    BoundParams,
    RectClassSpec,
    bernstein_radius,
    bernstein_tail,
    bound_comparison,
    calibrate_constant,
    class_complexity_q,
    coverage_fraction,
    effective_sample_size_bound,
    grid_discretization_bound,
    maximal_deviation_bound,
    relative_rademacher,
    remark1_bound,
    remark2_bound,
    renormalized_vc_bound,
    run_theorem1_coverage,
    separated,
    sup_empirical_deviation,
    theorem1_bound,
    trial_frame,
    union_mass,
    union_mass_frequency,
)
from stdf_lab.empirical_core import PseudoUniformSample
from stdf_lab.errors import ConfigurationError, DomainError, PreconditionError
from stdf_lab.samplers import draw_copula
from stdf_lab.stdf_oracles import StdfModel, tilde_F

EXAMPLE = BoundParams(n=10**4, d=2, V=2, p=0.01, delta=0.05)
INDEPENDENCE_1 = StdfModel("independence", 1)
INDEPENDENCE_2 = StdfModel("independence", 2)


def _brute_force_deviation(u, cls, model):
    """Evaluate |P - P_n| at every breakpoint and just inside every cell."""
    axes = []
    for j in range(cls.d):
        positions = u.values[:, j] / cls.scale
        breaks = np.concatenate([[0.0, cls.T], positions[positions < cls.T]])
        candidates = np.concatenate([breaks, breaks + 1e-9, breaks - 1e-9])
        axes.append(np.unique(np.clip(candidates, 0.0, cls.T)))

    best = 0.0
    for x in itertools.product(*axes):
        edge = cls.scale * np.array(x)
        empirical = np.mean(np.any(u.values < edge, axis=1))
        best = max(best, abs(float(tilde_F(model, edge)) - empirical))
    return best


# =============================================================================
# Union mass
# =============================================================================


class TestUnionMass:
    """Test p = P(some U^j < (k/n)T)."""

    def test_comonotone_is_edge(self):
        cls = RectClassSpec(d=2, k=10, n=1000, T=3.0)
        assert union_mass(cls, StdfModel("comonotone", 2)) == pytest.approx(0.03)

    def test_independence_inclusion_exclusion(self):
        cls = RectClassSpec(d=2, k=10, n=100, T=1.0)
        assert union_mass(cls, INDEPENDENCE_2) == pytest.approx(0.19)

    def test_logistic_between_max_and_sum(self):
        cls = RectClassSpec(d=2, k=10, n=100, T=1.0)
        model = StdfModel("logistic", 2, 2.0)
        mass = union_mass(cls, model)
        assert 0.1 <= mass <= 0.2
        frequency = union_mass_frequency(cls, model, 10**6, seed=17)
        assert abs(frequency.value - mass) < 4 * frequency.stderr

    def test_bounded_by_d_edge(self, model_2d):
        cls = RectClassSpec(d=2, k=25, n=1000, T=2.0)
        assert union_mass(cls, model_2d) <= 2 * cls.edge + 1e-12

    def test_edge_above_one_rejected(self):
        with pytest.raises(DomainError):
            union_mass(RectClassSpec(d=1, k=50, n=100, T=3.0), INDEPENDENCE_1)

    def test_dimension_mismatch_rejected(self):
        with pytest.raises(ConfigurationError):
            union_mass(RectClassSpec(d=3, k=5, n=100, T=1.0), INDEPENDENCE_2)


# =============================================================================
# Exact supremum
# =============================================================================


class TestSupEmpiricalDeviation:
    """Test the exact cell scan against brute force."""

    def test_all_points_outside_gives_p(self):
        cls = RectClassSpec(d=2, k=1, n=5, T=1.0)
        model = INDEPENDENCE_2
        u = PseudoUniformSample(np.full((5, 2), 0.9))
        expected = union_mass(cls, model)
        assert sup_empirical_deviation(u, cls, model) == pytest.approx(expected)

    def test_single_point_one_dimension(self):
        cls = RectClassSpec(d=1, k=1, n=1, T=0.8)
        u = PseudoUniformSample(np.array([[0.3]]))
        # below 0.3: |0.3 - 0|; above: |0.3 - 1|; at T: |0.8 - 1|
        assert sup_empirical_deviation(u, cls, INDEPENDENCE_1) == pytest.approx(0.7)

    @pytest.mark.parametrize("d", [1, 2])
    def test_matches_brute_force(self, model_2d, d):
        model = StdfModel(model_2d.variant, d, model_2d.theta)
        instances = np.random.default_rng(100 + d)
        for _ in range(50):
            n = int(instances.integers(5, 31))
            k = int(instances.integers(1, n // 2 + 1))
            T = float(instances.uniform(0.2, min(3.0, n / k)))
            seed = int(instances.integers(2**31))

            cls = RectClassSpec(d=d, k=k, n=n, T=T)
            rng = np.random.default_rng(seed)
            u = PseudoUniformSample(1.0 - draw_copula(model, n, rng))
            exact = sup_empirical_deviation(u, cls, model)
            brute = _brute_force_deviation(u, cls, model)
            assert exact == pytest.approx(brute, abs=1e-6), (n, k, T, seed)

    def test_grid_within_discretization_bound(self):
        model = StdfModel("comonotone", 2)
        cls = RectClassSpec(d=2, k=50, n=1000, T=2.0)
        draws = draw_copula(model, cls.n, np.random.default_rng(8))
        u = PseudoUniformSample(1.0 - draws)
        exact = sup_empirical_deviation(u, cls, model)
        gridded = sup_empirical_deviation(u, cls, model, grid_resolution=400)
        slack = grid_discretization_bound(cls, 400)
        assert gridded <= exact + 1e-12
        assert exact <= gridded + slack + 1.0 / cls.n

    def test_three_dimensions_need_a_grid(self):
        model = StdfModel("independence", 3)
        cls = RectClassSpec(d=3, k=10, n=200, T=1.0)
        draws = draw_copula(model, cls.n, np.random.default_rng(1))
        u = PseudoUniformSample(1.0 - draws)
        with pytest.raises(ConfigurationError, match="grid"):
            sup_empirical_deviation(u, cls, model)
        assert 0.0 <= sup_empirical_deviation(u, cls, model, grid_resolution=20) <= 1.0


# =============================================================================
# Bounds
# =============================================================================


class TestBounds:
    """Test the closed-form deviation bounds."""

    def test_theorem1_example(self):
        assert theorem1_bound(EXAMPLE) == pytest.approx(0.00275, abs=1e-5)

    def test_theorem1_degenerate_mass(self):
        params = BoundParams(n=1000, d=2, V=2, p=0.0, delta=0.1, C=3.0)
        assert theorem1_bound(params) == pytest.approx(3.0 * math.log(10) / 1000)

    def test_theorem1_vanishes_as_delta_tends_to_one(self):
        params = BoundParams(n=1000, d=2, V=2, p=0.1, delta=1 - 1e-12)
        assert theorem1_bound(params) < 1e-6

    def test_remark2_example(self):
        assert remark2_bound(EXAMPLE) == pytest.approx(0.00245, abs=1e-5)

    def test_remark2_at_its_floor(self):
        params = BoundParams(n=100, d=2, V=2, p=0.01, delta=math.exp(-1.0))
        assert remark2_bound(params) == pytest.approx(0.01 * math.sqrt(2))

    def test_remark2_below_floor(self):
        with pytest.raises(PreconditionError):
            remark2_bound(BoundParams(n=100, d=2, V=2, p=0.05, delta=1e-3))

    def test_remark2_never_exceeds_theorem1(self):
        rng = np.random.default_rng(11)
        for _ in range(500):
            n = int(rng.integers(1, 10**6))
            p = float(rng.uniform(1e-4, 1.0))
            V = int(rng.integers(1, 6))
            C = float(rng.uniform(0.1, 10.0))
            # δ between e^(-np) and 1
            delta = math.exp(-rng.uniform(0.01, 0.99) * min(n * p, 700.0))
            params = BoundParams(n=n, d=V, V=V, p=p, delta=delta, C=C)
            assert remark2_bound(params) <= theorem1_bound(params), params

    def test_remark1_example(self):
        log_terms = 2 * math.log(math.e * 10**4) + math.log(80)
        expected = 2 * 0.1 * math.sqrt(log_terms / 10**4)
        assert remark1_bound(EXAMPLE) == pytest.approx(expected, rel=1e-12)
        assert remark1_bound(EXAMPLE) == pytest.approx(0.00996, abs=1e-5)

    def test_renormalized_vc_bound_scales_remark1(self):
        renormalized = renormalized_vc_bound(10**4, 2, 0.05)
        assert remark1_bound(EXAMPLE) == pytest.approx(0.1 * renormalized)
        with pytest.raises(DomainError):
            renormalized_vc_bound(1, 2, 0.05)

    def test_remark1_small_n_substitution(self):
        params = BoundParams(n=3, d=1, V=1, p=0.2, delta=0.1)
        log_terms = math.log(6 * math.e) + math.log(40)
        expected = 2 * math.sqrt(0.2) * math.sqrt(log_terms / 3)
        assert remark1_bound(params) == pytest.approx(expected, rel=1e-12)

    def test_remark1_outside_sauer_regime(self):
        with pytest.raises(DomainError):
            remark1_bound(BoundParams(n=10, d=2, V=2, p=0.1, delta=0.1), n=1)

    def test_comparison_ratio_grows_with_n(self):
        ns = [10**2, 10**3, 10**4, 10**5]
        frame = bound_comparison(p=0.01, V=2, delta=0.05, C=1.0, ns=ns)
        assert list(frame.columns) == [
            "n",
            "theorem1",
            "remark1",
            "remark2",
            "ratio_remark1_theorem1",
        ]
        assert frame["ratio_remark1_theorem1"].is_monotonic_increasing

    def test_effective_sample_size_is_theorem1_over_p(self):
        assert effective_sample_size_bound(10**4, 0.01, 2, 0.05) == pytest.approx(
            theorem1_bound(EXAMPLE) / 0.01
        )

    def test_bernstein_radius_solves_tail(self):
        radius = bernstein_radius(0.05, 5000, 0.02)
        tail = bernstein_tail(radius * 0.02, 5000, 0.04)
        assert tail == pytest.approx(0.05, rel=1e-9)

    def test_maximal_deviation_forms(self):
        full = maximal_deviation_bound(0.01, 10**4, 0.05, rademacher=0.1)
        log_term = math.log(20)
        assert full == pytest.approx(
            0.01 * (0.2 + 2 * log_term / 300 + 2 * math.sqrt(log_term / 100))
        )
        simple = maximal_deviation_bound(
            0.01, 10**4, 0.05, rademacher=0.1, simplified=True
        )
        assert simple == pytest.approx(0.01 * (0.2 + 3 * math.sqrt(log_term / 100)))
        with pytest.raises(PreconditionError):
            maximal_deviation_bound(0.01, 100, 1e-3, rademacher=0.1, simplified=True)

    def test_invalid_params_rejected(self):
        with pytest.raises(DomainError):
            BoundParams(n=10, d=1, V=1, p=0.1, delta=1.5)
        with pytest.raises(ConfigurationError):
            BoundParams(n=0, d=1, V=1, p=0.1, delta=0.5)


# =============================================================================
# Calibration
# =============================================================================


class TestCalibration:
    """Test frozen-constant calibration and coverage."""

    def test_quantile_of_ratios(self):
        statistics = np.arange(1, 101, dtype=float)
        constant = calibrate_constant(statistics, 2.0, 0.05)
        assert constant == 48.0
        assert coverage_fraction(statistics, constant * 2.0) == pytest.approx(0.96)

    def test_rejects_empty_pilot(self):
        with pytest.raises(ConfigurationError):
            calibrate_constant([], 1.0, 0.05)

    def test_theorem1_coverage_small_run(self):
        cls = RectClassSpec(d=1, k=50, n=500, T=1.0)
        report = run_theorem1_coverage(
            cls,
            INDEPENDENCE_1,
            0.1,
            trials=60,
            seed=1,
            pilot_seed=2,
            pilot_trials=60,
        )
        assert report.constant > 0
        assert report.coverage >= 0.75
        assert len(report.statistics) == 60

    @pytest.mark.slow
    @pytest.mark.parametrize(
        "model, cls, delta",
        [
            (INDEPENDENCE_1, RectClassSpec(d=1, k=50, n=500, T=1.0), 0.1),
            (INDEPENDENCE_2, RectClassSpec(d=2, k=100, n=2000, T=2.0), 0.05),
        ],
    )
    def test_theorem1_coverage_acceptance(self, model, cls, delta):
        report = run_theorem1_coverage(
            cls,
            model,
            delta,
            trials=500,
            seed=1,
            pilot_seed=2,
            pilot_trials=1000,
            workers=4,
            pilot_delta=delta / 5,
        )
        assert report.trials == 500
        assert report.coverage >= 1 - delta

    def test_pilot_delta_cannot_exceed_delta(self):
        cls = RectClassSpec(d=1, k=50, n=500, T=1.0)
        with pytest.raises(ConfigurationError, match="pilot delta"):
            run_theorem1_coverage(
                cls, INDEPENDENCE_1, 0.1, 10, seed=3, pilot_seed=4, pilot_delta=0.5
            )

    def test_pilot_seed_must_differ(self):
        cls = RectClassSpec(d=1, k=50, n=500, T=1.0)
        with pytest.raises(ConfigurationError, match="pilot"):
            run_theorem1_coverage(
                cls, INDEPENDENCE_1, 0.1, 10, seed=3, pilot_seed=3
            )


# =============================================================================
# Rademacher averages and q
# =============================================================================


class TestRademacher:
    """Test the relative Rademacher average and the class complexity q."""

    def test_single_point_estimate_is_one(self):
        cls = RectClassSpec(d=1, k=1, n=1, T=0.5)
        estimate = relative_rademacher(INDEPENDENCE_1, cls, trials=4000, seed=4)
        assert estimate.p == pytest.approx(0.5)
        assert abs(estimate.value - 1.0) < 4 * estimate.stderr + 1e-9

    def test_needs_two_trials(self):
        cls = RectClassSpec(d=1, k=1, n=10, T=0.5)
        with pytest.raises(ConfigurationError):
            relative_rademacher(INDEPENDENCE_1, cls, trials=1, seed=4)

    def test_three_dimensions_need_a_grid(self):
        cls = RectClassSpec(d=3, k=10, n=100, T=1.0)
        with pytest.raises(ConfigurationError, match="grid"):
            relative_rademacher(StdfModel("independence", 3), cls, trials=5, seed=4)

    def test_worker_count_does_not_change_result(self):
        cls = RectClassSpec(d=2, k=20, n=400, T=1.0)
        model = StdfModel("comonotone", 2)
        serial = relative_rademacher(model, cls, trials=6, seed=9)
        parallel = relative_rademacher(model, cls, trials=6, seed=9, workers=2)
        assert serial.values == parallel.values

    def test_scaled_average_stable_across_n(self):
        model = INDEPENDENCE_2
        scaled = []
        for n in (500, 2000, 8000):
            cls = RectClassSpec(d=2, k=n // 20, n=n, T=1.0)
            scaled.append(relative_rademacher(model, cls, 40, seed=5).scaled)
        assert max(scaled) / min(scaled) <= 2.0

    @pytest.mark.slow
    def test_scaled_average_acceptance(self):
        model = INDEPENDENCE_2
        scaled = []
        for n in (10**3, 10**4, 10**5):
            cls = RectClassSpec(d=2, k=n // 100, n=n, T=1.0)
            estimate = relative_rademacher(model, cls, 200, seed=5, workers=4)
            scaled.append(estimate.scaled)
        assert max(scaled) / min(scaled) <= 2.0

    def test_identical_pairs_never_separate(self):
        cls = RectClassSpec(d=2, k=10, n=100, T=1.0)
        q = class_complexity_q(INDEPENDENCE_2, cls, 5000, seed=1, coupling="identical")
        assert q.value == 0.0

    def test_vanishing_class_gives_zero(self):
        cls = RectClassSpec(d=2, k=1, n=10**6, T=1.0)
        q = class_complexity_q(INDEPENDENCE_2, cls, 10**4, seed=1)
        assert q.value <= 1e-3

    @pytest.mark.parametrize("d", [1, 2])
    def test_q_at_most_twice_p(self, model_2d, d):
        model = StdfModel(model_2d.variant, d, model_2d.theta)
        cls = RectClassSpec(d=d, k=10, n=100, T=1.0)
        q = class_complexity_q(model, cls, 10**5, seed=d)
        assert q.value <= 2 * union_mass(cls, model) + 3 * q.stderr

    def test_separation_rule(self):
        first = np.array([[0.5, 3.0], [2.0, 2.0], [0.2, 0.4]])
        second = np.array([[1.5, 3.0], [2.5, 3.0], [0.2, 0.4]])
        flags = separated(first, second, T=1.0)
        np.testing.assert_array_equal(flags, [True, False, False])

    def test_unknown_coupling_rejected(self):
        cls = RectClassSpec(d=1, k=10, n=100, T=1.0)
        with pytest.raises(ConfigurationError):
            class_complexity_q(INDEPENDENCE_1, cls, 10, seed=1, coupling="antithetic")

    def test_trial_frame_layout(self):
        cls = RectClassSpec(d=2, k=10, n=100, T=1.0)
        frame = trial_frame([0.1, 0.2], cls, 0.05, "relative_rademacher")
        assert list(frame.columns) == [
            "trial_id",
            "n",
            "k",
            "d",
            "T",
            "delta",
            "statistic_name",
            "value",
        ]
        assert frame["trial_id"].tolist() == [0, 1]
