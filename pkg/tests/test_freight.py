import math

import numpy as np
import pytest

from uip.errors import ConfigError, DomainError, MissingFreightData
from uip.freight import (
    FreightCoeffs,
    PricingPolicy,
    RegionModel,
    SimConfig,
    SupplyModel,
    bundle_price,
    demo_coeffs,
    demo_regions,
    demo_sim_config,
    expiration_price,
    load_marginal_value,
    log_price,
    perceived_quality,
    quality_vector,
    sample_choice,
    simulate,
    singleton_kappa,
    splitmix64,
    truncated_geometric_pmf,
)
from uip.model import FreightItemData, Item
from uip.numerics import lambert_w0, lambert_w_exp


def one_region():
    return RegionModel(names=("X",), centroids=np.array([[0.0, 0.0]]),
                       arrival_pmf=np.array([1.0]), ehat=np.array([0.0]))


def zeroish_coeffs(beta_p=-1.0, n=1, **kw):
    base = dict(beta0=0.0, beta_d=0.0, beta_e=0.0, beta_b=0.0, beta_p=beta_p,
                beta_org=np.zeros(n), beta_dst=np.zeros(n))
    base.update(kw)
    return FreightCoeffs(**base)


def centroid_load(expiration=10):
    return Item(0, freight=FreightItemData((0.0, 0.0), (0.0, 0.0), expiration))


class TestPerceivedQuality:
    def test_all_zero_coeffs(self):
        regions = demo_regions()
        c = zeroish_coeffs(beta_p=1.0, n=4)
        ld = Item(0, freight=FreightItemData((5.0, 5.0), (80.0, 10.0), 10))
        assert perceived_quality([ld], 1, c, regions) == 0.0

    def test_intercept_only_at_centroid(self):
        c = zeroish_coeffs(beta0=1.0)
        assert perceived_quality([centroid_load()], 0, c, one_region()) == pytest.approx(1.0)

    def test_zero_gap_bundle_has_no_interload_deadhead(self):
        # chained loads: dropoff(1) == pickup(2) adds no empty miles
        regions = one_region()
        c = zeroish_coeffs(beta_e=-1.0)
        a = Item(0, freight=FreightItemData((0.0, 0.0), (7.0, 0.0), 10))
        b = Item(1, freight=FreightItemData((7.0, 0.0), (9.0, 0.0), 10))
        q = perceived_quality([a, b], 0, c, regions)
        # only the approach leg (centroid -> first pickup = 0 here)
        assert q == pytest.approx(0.0, abs=1e-12)
        b2 = Item(1, freight=FreightItemData((10.0, 0.0), (12.0, 0.0), 10))
        q2 = perceived_quality([a, b2], 0, c, regions)
        assert q2 == pytest.approx(-3.0)  # gap of 3 miles

    def test_bundle_indicator(self):
        regions = one_region()
        c = zeroish_coeffs(beta_b=-2.0)
        a, b = centroid_load(), Item(1, freight=FreightItemData((0.0, 0.0), (0.0, 0.0), 10))
        assert perceived_quality([a], 0, c, regions) == 0.0
        assert perceived_quality([a, b], 0, c, regions) == pytest.approx(-2.0)

    def test_missing_freight(self):
        with pytest.raises(MissingFreightData):
            perceived_quality([Item(0)], 0, zeroish_coeffs(), one_region())


class TestExpirationPrice:
    def test_canonical_example(self):
        # xi=0, q=0, beta_p=-1 -> 1 + W(1/e), the closed-form singleton price
        p = expiration_price(centroid_load(), zeroish_coeffs(), one_region())
        assert p == pytest.approx(1.0 + lambert_w0(np.exp(-1.0)), abs=1e-12)

    def test_single_region_collapse(self):
        # with one region the expectation has a single term
        ld = centroid_load()
        q = quality_vector([ld], zeroish_coeffs(beta0=0.3), one_region())[0]
        gam = lambert_w_exp(q - 1.0)
        assert expiration_price(ld, zeroish_coeffs(beta0=0.3), one_region()) == pytest.approx(1.0 + gam)

    def test_markup_sign(self):
        # canonical sign: pbar >= xi - 1/beta_p is exactly W >= 0
        rng = np.random.default_rng(0)
        for _ in range(20):
            ld = Item(0, salvage=float(rng.uniform(0, 2)),
                      freight=FreightItemData((0.0, 0.0), (0.0, 0.0), 10))
            c = zeroish_coeffs(beta0=float(rng.uniform(-2, 2)))
            p = expiration_price(ld, c, one_region())
            assert p >= ld.salvage - 1.0 / c.beta_p - 1e-12


class TestLogPrice:
    def setup_method(self):
        self.ld = centroid_load(expiration=10)
        self.c = zeroish_coeffs()
        self.pbar = expiration_price(self.ld, self.c, one_region())
        self.kappa = singleton_kappa(self.ld, self.c, one_region())

    def test_terminal_value(self):
        p = log_price(self.ld, 9, self.pbar, self.kappa, 1.0, self.c, mu=0.5)
        assert p == pytest.approx(self.pbar, abs=1e-12)

    def test_alpha_to_zero(self):
        for t in range(10):
            p = log_price(self.ld, t, self.pbar, self.kappa, 1e-14, self.c, mu=0.5)
            assert p == pytest.approx(self.pbar, abs=1e-9)

    def test_monotone_toward_deadline(self):
        # canonical sign: price decreases as the deadline approaches
        ps = [log_price(self.ld, t, self.pbar, self.kappa, 0.7, self.c, mu=0.5)
              for t in range(10)]
        assert all(a >= b for a, b in zip(ps, ps[1:]))
        # freight sign: the payment rises toward the deadline
        cf = zeroish_coeffs(beta_p=0.01, beta0=-5.0)
        ldf = Item(0, salvage=500.0,
                   freight=FreightItemData((0.0, 0.0), (0.0, 0.0), 10))
        pbar = expiration_price(ldf, cf, one_region())
        kap = singleton_kappa(ldf, cf, one_region())
        ps = [log_price(ldf, t, pbar, kap, 0.2, cf, mu=0.5) for t in range(10)]
        assert all(a <= b for a, b in zip(ps, ps[1:]))

    def test_domain(self):
        with pytest.raises(DomainError):
            log_price(self.ld, 10, self.pbar, self.kappa, 1.0, self.c, mu=0.5)
        with pytest.raises(MissingFreightData):
            log_price(Item(0), 0, 1.0, 0.0, 1.0, self.c, mu=0.5)


class TestMarginalValue:
    def test_closed_form_roundtrip(self):
        for beta_p in (-1.0, -0.4, 0.01):
            for delta in (0.0, 0.8, 40.0 if beta_p > 0 else 2.0):
                q = 0.3
                gam = lambert_w_exp(q + beta_p * delta - 1.0)
                price = delta - (1.0 + gam) / beta_p
                assert load_marginal_value(price, q, beta_p) == pytest.approx(delta, abs=1e-6)

    def test_vanishing_exponent_limit(self):
        # as beta_p * p -> -inf the marginal tends to p + 1/beta_p
        p = 60.0
        got = load_marginal_value(p, 0.0, -1.0)
        assert got == pytest.approx(p - 1.0, abs=1e-20)

    def test_quality_shift_scales_exponential(self):
        p, bp = 1.0, -1.0
        base = load_marginal_value(p, 0.0, bp) - (p + 1.0 / bp)
        shifted = load_marginal_value(p, 0.5, bp) - (p + 1.0 / bp)
        assert shifted == pytest.approx(base * math.exp(0.5))


class TestBundlePrice:
    def test_linear_is_sum(self):
        regions = demo_regions()
        c = demo_coeffs()
        loads = [Item(0, freight=FreightItemData((0, 0), (50, 0), 10)),
                 Item(1, freight=FreightItemData((60, 0), (90, 0), 10))]
        p = bundle_price(loads, [100.0, 150.0], [0.0, 0.0], "linear", c, regions)
        assert p == 250.0

    def test_singleton_custom_is_closed_form(self):
        regions = demo_regions()
        c = demo_coeffs()
        ld = Item(0, freight=FreightItemData((1.0, 2.0), (30.0, 40.0), 10))
        delta = 120.0
        q = quality_vector([ld], c, regions)
        gam = lambert_w_exp(q + c.beta_p * delta - 1.0)
        expect = delta - (1.0 + float(regions.arrival_pmf @ gam)) / c.beta_p
        assert bundle_price([ld], [999.0], [delta], "custom", c, regions) == pytest.approx(expect)

    def test_custom_monotone_in_quality(self):
        # freight sign: lower bundle quality -> higher required payment
        regions = demo_regions()
        loads = [Item(0, freight=FreightItemData((0, 0), (50, 0), 10)),
                 Item(1, freight=FreightItemData((60, 0), (90, 0), 10))]
        delta = [120.0, 100.0]
        p_low = bundle_price(loads, [0, 0], delta, "custom", demo_coeffs(aversion=-3.0), regions)
        p_high = bundle_price(loads, [0, 0], delta, "custom", demo_coeffs(aversion=-0.5), regions)
        assert p_low > p_high
        # canonical sign: higher quality -> higher markup
        c_lo = zeroish_coeffs(beta0=0.0)
        c_hi = zeroish_coeffs(beta0=1.0)
        ld = centroid_load()
        assert (bundle_price([ld], [0], [1.0], "custom", c_hi, one_region())
                > bundle_price([ld], [0], [1.0], "custom", c_lo, one_region()))


class TestChoiceSampling:
    def test_mnl_unbiased(self):
        rng = np.random.default_rng(0)
        utilities = np.array([0.3, -0.5, 1.1])
        n = 100_000
        counts = np.zeros(4)
        for _ in range(n):
            k = sample_choice(rng, utilities, "mnl")
            counts[k if k >= 0 else 3] += 1
        e = np.exp(utilities)
        probs = np.append(e, 1.0) / (1.0 + e.sum())
        for k in range(4):
            sd = math.sqrt(n * probs[k] * (1 - probs[k]))
            assert abs(counts[k] - n * probs[k]) <= 3.0 * sd

    def test_sequential_walks_in_order(self):
        rng = np.random.default_rng(1)
        n = 50_000
        hits = np.zeros(3)
        utilities = np.array([0.0, 0.0, 0.0])
        for _ in range(n):
            k = sample_choice(rng, utilities, "sequential_logit")
            if k >= 0:
                hits[k] += 1
        # first option accepted w.p. 1/2, second 1/4, third 1/8
        assert hits[0] / n == pytest.approx(0.5, abs=0.01)
        assert hits[1] / n == pytest.approx(0.25, abs=0.01)
        assert hits[2] / n == pytest.approx(0.125, abs=0.01)

    def test_empty_menu(self):
        rng = np.random.default_rng(2)
        assert sample_choice(rng, np.array([]), "mnl") == -1


class TestSimulate:
    def small_config(self, **kw):
        base = dict(
            supply=SupplyModel(rate=0.3, lifetime=(15, 30), scatter=10.0),
            horizon_periods=300, seed=7, replications=3, arrival_prob=0.6,
            alpha=0.15, salvage_multiplier=1.5, rolling_period=20,
        )
        base.update(kw)
        return SimConfig(**base)

    def test_bit_identical_reruns(self):
        cfg = self.small_config()
        a = simulate(cfg, demo_coeffs(), demo_regions())
        b = simulate(cfg, demo_coeffs(), demo_regions())
        for k in a.samples:
            assert np.array_equal(a.samples[k], b.samples[k])

    def test_zero_supply_is_all_zero(self):
        cfg = self.small_config(supply=SupplyModel(rate=0.0, lifetime=(5, 5)))
        m = simulate(cfg, demo_coeffs(), demo_regions())
        assert m.cost_per_loaded_mile == 0.0
        assert m.avg_empty_miles == 0.0
        assert m.unmet_deadline_rate == 0.0

    def test_topk_zero_blocks_all_bookings(self):
        cfg = self.small_config(topk_pmf=np.array([1.0]), framework="no_bundle")
        m = simulate(cfg, demo_coeffs(), demo_regions())
        assert m.unmet_deadline_rate == 1.0
        assert np.all(m.samples["booked"] == 0)

    def test_accounting_identity(self):
        for fw in ("no_bundle", "rolling_horizon", "personalized"):
            cfg = self.small_config(framework=fw, replications=2)
            m = simulate(cfg, demo_coeffs(), demo_regions())
            assert np.allclose(
                m.samples["total_cost"],
                m.samples["price_paid"] + m.samples["penalty_paid"],
                rtol=1e-12,
            )
            assert np.allclose(
                m.samples["loaded_miles"],
                m.samples["booked_miles"] + m.samples["salvaged_miles"],
                rtol=1e-12,
            )

    def test_all_frameworks_and_choice_modes_run(self):
        for fw in ("no_bundle", "rolling_horizon", "personalized"):
            for cm in ("mnl", "sequential_logit"):
                cfg = self.small_config(framework=fw, choice_mode=cm,
                                        replications=1, horizon_periods=150)
                m = simulate(cfg, demo_coeffs(), demo_regions())
                assert np.isfinite(m.cost_per_loaded_mile)

    def test_min_empty_miles_bundling_runs(self):
        cfg = self.small_config(bundling="min_empty_miles", replications=1,
                                horizon_periods=150,
                                supply=SupplyModel(rate=0.15, lifetime=(15, 30)))
        m = simulate(cfg, demo_coeffs(), demo_regions())
        assert np.isfinite(m.cost_per_loaded_mile)

    def test_directional_custom_beats_linear_quick(self):
        coeffs = demo_coeffs(aversion=-3.0)
        out = {}
        for pricing in ("linear", "custom"):
            cfg = demo_sim_config(pricing, replications=30)
            out[pricing] = simulate(cfg, coeffs, demo_regions())
        d = (out["linear"].samples["unmet_deadline_rate"]
             - out["custom"].samples["unmet_deadline_rate"])
        assert d.mean() > 0
        t = d.mean() / (d.std(ddof=1) / math.sqrt(len(d)))
        assert t > 2.0

    def test_ci_half_width(self):
        cfg = self.small_config(replications=4)
        m = simulate(cfg, demo_coeffs(), demo_regions())
        assert m.half_width("cost_per_loaded_mile") >= 0
        one = simulate(self.small_config(replications=1), demo_coeffs(), demo_regions())
        assert one.half_width("cost_per_loaded_mile") == 0.0

    def test_metrics_json(self):
        import json

        cfg = self.small_config(replications=2, horizon_periods=100)
        m = simulate(cfg, demo_coeffs(), demo_regions())
        doc = json.loads(m.to_json())
        assert "summary" in doc and "samples" in doc

    def test_isolated_loads_match_analytic_booking(self):
        """With loads so sparse they never coexist, the unmet-deadline rate
        must match the analytic no-booking probability of one load walked
        through its own price trajectory. Catches event-loop off-by-ones
        (supply/expiry timing, price ages, menu wiring)."""
        regions = RegionModel(names=("A", "B"),
                              centroids=np.array([[0.0, 0.0], [100.0, 0.0]]),
                              arrival_pmf=np.array([0.6, 0.4]),
                              ehat=np.array([10.0, 10.0]))
        coeffs = FreightCoeffs(beta0=-1.0, beta_d=-0.002, beta_e=-0.01,
                               beta_b=-1.0, beta_p=0.01,
                               beta_org=np.zeros(2), beta_dst=np.zeros(2))
        life, mu, alpha = 15, 0.55, 0.2
        sup = SupplyModel(rate=0.002, lifetime=(life, life), scatter=0.0,
                          pickup_pmf=np.array([1.0, 0.0]),
                          dropoff_pmf=np.array([0.0, 1.0]))
        cfg = SimConfig(supply=sup, horizon_periods=4000, seed=11,
                        replications=80, framework="no_bundle", pricing="linear",
                        arrival_prob=mu, alpha=alpha, salvage_multiplier=1.4,
                        reference_cost_per_mile=2.0,
                        topk_pmf=np.array([0.0, 1.0]))
        m = simulate(cfg, coeffs, regions)
        resolved = m.samples["booked"].sum() + m.samples["salvaged"].sum()
        emp = m.samples["salvaged"].sum() / resolved

        ld = Item(0, salvage=1.4 * 2.0 * 100.0,
                  freight=FreightItemData((0.0, 0.0), (100.0, 0.0), life))
        pbar = expiration_price(ld, coeffs, regions)
        kappa = singleton_kappa(ld, coeffs, regions)
        q = np.array([perceived_quality([ld], w, coeffs, regions) for w in range(2)])
        alive = 1.0
        for t in range(life):
            price = log_price(ld, t, pbar, kappa, alpha, coeffs, mu)
            e = np.exp(q + coeffs.beta_p * price)
            alive *= 1.0 - mu * float(regions.arrival_pmf @ (e / (1.0 + e)))
        se = math.sqrt(alive * (1 - alive) / resolved)
        assert abs(emp - alive) <= 4 * se + 0.01


class TestConfigs:
    def test_validation(self):
        sup = SupplyModel(rate=0.1, lifetime=(5, 10))
        with pytest.raises(ConfigError):
            SimConfig(supply=sup, horizon_periods=0, seed=0)
        with pytest.raises(ConfigError):
            SimConfig(supply=sup, horizon_periods=10, seed=0, framework="nope")
        with pytest.raises(ConfigError):
            SimConfig(supply=sup, horizon_periods=10, seed=0,
                      topk_pmf=np.array([0.5, 0.4]))
        with pytest.raises(ConfigError):
            SupplyModel(rate=-1.0, lifetime=(5, 10))
        with pytest.raises(ConfigError):
            PricingPolicy(alpha=0.0)

    def test_config_json_roundtrip(self):
        import json

        text = json.dumps({
            "supply": {"rate": 0.2, "lifetime": [10, 20], "scatter": 5.0},
            "horizon_periods": 100, "seed": 3, "replications": 2,
            "framework": "rolling_horizon", "pricing": "linear",
        })
        cfg = SimConfig.from_json(text)
        assert cfg.supply.rate == 0.2
        assert cfg.pricing == "linear"

    def test_splitmix_is_stable(self):
        # reference values of the standard splitmix64 stream
        assert splitmix64(0) == 16294208416658607535
        assert splitmix64(1) == 10451216379200822465

    def test_topk_pmf_mean(self):
        pmf = truncated_geometric_pmf(mean=5.0, kmax=15)
        assert pmf[0] == 0.0
        mean = float(np.arange(16) @ pmf)
        assert 4.0 < mean < 6.0
