"""Freight marketplace world model and the dynamic bundling simulator.

Carriers (customers) arrive at region centroids, observe a ranked subset of
option-price pairs, and book at most one option. Loads expire; unbooked
loads are delivered by a proprietary truck at a penalty. Price sensitivity
is positive here (carriers are paid), so price trajectories rise toward
each load's expiration price; every closed-form formula below is written in
the mirror-invariant form shared with the retail convention.

Prices are homogeneous: quotes never depend on the carrier's region, only
the menu ranking and the acceptance probabilities do.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np
from scipy import stats

from .errors import ConfigError, DomainError, MissingFreightData
from .model import BundleOption, CustomerModel, FreightItemData, Item, MarketInstance
from .numerics import lambert_w_exp, log_sum_exp


@dataclass(frozen=True)
class RegionModel:
    """Arrival regions: centroids, carrier-arrival distribution, and the
    average historical deadhead miles out of each region."""

    names: tuple
    centroids: np.ndarray  # (R, 2)
    arrival_pmf: np.ndarray  # (R,)
    ehat: np.ndarray  # (R,)

    def __post_init__(self):
        object.__setattr__(self, "centroids", np.asarray(self.centroids, dtype=float))
        object.__setattr__(self, "arrival_pmf", np.asarray(self.arrival_pmf, dtype=float))
        object.__setattr__(self, "ehat", np.asarray(self.ehat, dtype=float))
        r = len(self.names)
        if self.centroids.shape != (r, 2) or self.arrival_pmf.shape != (r,) or self.ehat.shape != (r,):
            raise ConfigError("region arrays must all have one row per region")
        if abs(self.arrival_pmf.sum() - 1.0) > 1e-9 or np.any(self.arrival_pmf < 0):
            raise ConfigError("arrival_pmf must be a probability distribution")
        if len({tuple(c) for c in self.centroids}) != r:
            raise ConfigError("centroids must be distinct")

    @property
    def n_regions(self) -> int:
        return len(self.names)

    def nearest(self, point) -> int:
        d = np.hypot(self.centroids[:, 0] - point[0], self.centroids[:, 1] - point[1])
        return int(np.argmin(d))

    def to_dict(self) -> dict:
        return {
            "names": list(self.names),
            "centroids": self.centroids.tolist(),
            "arrival_pmf": self.arrival_pmf.tolist(),
            "ehat": self.ehat.tolist(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "RegionModel":
        return cls(
            names=tuple(d["names"]),
            centroids=np.asarray(d["centroids"], dtype=float),
            arrival_pmf=np.asarray(d["arrival_pmf"], dtype=float),
            ehat=np.asarray(d["ehat"], dtype=float),
        )


@dataclass(frozen=True)
class FreightCoeffs:
    """Calibrated carrier-utility coefficients (beta_p > 0: getting paid)."""

    beta0: float
    beta_d: float
    beta_e: float
    beta_b: float
    beta_p: float
    beta_org: np.ndarray
    beta_dst: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "beta_org", np.asarray(self.beta_org, dtype=float))
        object.__setattr__(self, "beta_dst", np.asarray(self.beta_dst, dtype=float))
        if self.beta_p == 0:
            raise ConfigError("beta_p must be nonzero")

    def to_dict(self) -> dict:
        return {
            "beta0": self.beta0,
            "beta_d": self.beta_d,
            "beta_e": self.beta_e,
            "beta_b": self.beta_b,
            "beta_p": self.beta_p,
            "beta_org": self.beta_org.tolist(),
            "beta_dst": self.beta_dst.tolist(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "FreightCoeffs":
        return cls(
            beta0=float(d["beta0"]),
            beta_d=float(d["beta_d"]),
            beta_e=float(d["beta_e"]),
            beta_b=float(d["beta_b"]),
            beta_p=float(d["beta_p"]),
            beta_org=np.asarray(d["beta_org"], dtype=float),
            beta_dst=np.asarray(d["beta_dst"], dtype=float),
        )


@dataclass(frozen=True)
class PricingPolicy:
    """Single-load trajectory curvature plus the bundle pricing mode."""

    kind: str = "custom_bundle"  # expiration_log | linear_bundle | custom_bundle
    alpha: float = 1.0

    def __post_init__(self):
        if self.alpha <= 0:
            raise ConfigError("alpha must be positive")
        if self.kind not in ("expiration_log", "linear_bundle", "custom_bundle"):
            raise ConfigError(f"unknown pricing policy kind {self.kind!r}")


def _dist(a, b) -> float:
    return math.hypot(b[0] - a[0], b[1] - a[1])


def perceived_quality(
    loads: Sequence[Item], region: int, coeffs: FreightCoeffs, regions: RegionModel
) -> float:
    """Carrier utility intercept of an option for an arrival region.

    Empty miles are the approach leg from the region centroid to the first
    pickup plus every dropoff-to-next-pickup gap; origin/destination regions
    are the centroids nearest the first pickup and last dropoff.
    """
    for it in loads:
        if it.freight is None:
            raise MissingFreightData(f"load {it.id} has no freight data")
    f = [it.freight for it in loads]
    d = sum(x.loaded_miles for x in f)
    e = _dist(regions.centroids[region], f[0].pickup)
    for a, b in zip(f[:-1], f[1:]):
        e += _dist(a.dropoff, b.pickup)
    org = regions.nearest(f[0].pickup)
    dst = regions.nearest(f[-1].dropoff)
    return (
        coeffs.beta0
        + coeffs.beta_d * d
        + coeffs.beta_e * e
        + (coeffs.beta_b if len(loads) == 2 else 0.0)
        + float(coeffs.beta_org[org])
        + float(coeffs.beta_dst[dst])
    )


def quality_vector(loads, coeffs, regions) -> np.ndarray:
    """perceived_quality across all arrival regions, shape (R,)."""
    return np.array(
        [perceived_quality(loads, w, coeffs, regions) for w in range(regions.n_regions)]
    )


def make_freight_quality(items_by_id: dict, coeffs: FreightCoeffs, regions: RegionModel):
    """Quality callable for CustomerModel with types = arrival regions."""

    def quality(option: BundleOption, w: int) -> float:
        loads = [items_by_id[i] for i in option.items]
        return perceived_quality(loads, w, coeffs, regions)

    return quality


def freight_instance(
    loads: Sequence[Item],
    coeffs: FreightCoeffs,
    regions: RegionModel,
    demand: float,
    arrival_prob: float = 0.1,
    max_bundles: Optional[int] = None,
    max_bundle_size: int = 2,
) -> MarketInstance:
    """Wrap freight loads as a MarketInstance (types = arrival regions) so
    the DP, bounds, and bundling algorithms apply directly."""
    customer = CustomerModel(
        types=tuple(regions.names),
        arrival_pmf=regions.arrival_pmf,
        price_sensitivity=coeffs.beta_p,
        quality=make_freight_quality({it.id: it for it in loads}, coeffs, regions),
    )
    return MarketInstance(
        items=tuple(loads),
        customer=customer,
        demand=demand,
        arrival_prob=arrival_prob,
        max_bundles=len(loads) if max_bundles is None else max_bundles,
        max_bundle_size=max_bundle_size,
    )


# ---------------------------------------------------------------------------
# closed-form pricing policy
# ---------------------------------------------------------------------------


def expiration_price(load: Item, coeffs: FreightCoeffs, regions: RegionModel) -> float:
    """Price in the period preceding expiration: the expected optimal price
    across regions if the load were the only option, at marginal value equal
    to its salvage."""
    q = quality_vector([load], coeffs, regions)
    xi = load.salvage
    gam = lambert_w_exp(q + coeffs.beta_p * xi - 1.0)
    return xi - (1.0 + float(regions.arrival_pmf @ gam)) / coeffs.beta_p


def singleton_kappa(load: Item, coeffs: FreightCoeffs, regions: RegionModel) -> float:
    q = quality_vector([load], coeffs, regions)
    return log_sum_exp(q, regions.arrival_pmf)


def log_price(
    load: Item,
    t: int,
    pbar: float,
    kappa: float,
    alpha: float,
    coeffs: FreightCoeffs,
    mu: float,
) -> float:
    """Logarithmic-in-demand-to-come trajectory hitting pbar at the last
    period. t counts periods since supply; the load expires after
    t = expiration - 1."""
    if load.freight is None:
        raise MissingFreightData(f"load {load.id} has no freight data")
    tbar = load.freight.expiration
    if t < 0 or t > tbar - 1:
        raise DomainError(f"t={t} outside [0, {tbar - 1}]")
    x = -(coeffs.beta_p * pbar + kappa)
    togo = alpha * mu * (tbar - 1 - t)
    inner = np.logaddexp(x, math.log(togo)) if togo > 0 else x
    return float((-1.0 / coeffs.beta_p) * (inner + kappa))


def load_marginal_value(
    price: float, kappa: float, beta_p: float
) -> float:
    """Marginal value consistent with the price being the single-option
    optimum: Delta = p + (1/beta_p)(1 + E_X[e^{q + beta_p p}])."""
    return price + (1.0 + math.exp(beta_p * price + kappa)) / beta_p


def bundle_price(
    loads: Sequence[Item],
    member_prices: Sequence[float],
    member_marginals: Sequence[float],
    mode: str,
    coeffs: FreightCoeffs,
    regions: RegionModel,
) -> float:
    """Bundle quote: linear (sum of member prices) or custom (closed-form
    optimum at the bundle's quality and summed marginal value)."""
    if mode == "linear":
        return float(np.sum(member_prices))
    if mode != "custom":
        raise ConfigError(f"unknown bundle pricing mode {mode!r}")
    delta_b = float(np.sum(member_marginals))
    qb = quality_vector(loads, coeffs, regions)
    gam = lambert_w_exp(qb + coeffs.beta_p * delta_b - 1.0)
    return delta_b - (1.0 + float(regions.arrival_pmf @ gam)) / coeffs.beta_p


# ---------------------------------------------------------------------------
# simulation
# ---------------------------------------------------------------------------


def splitmix64(x: int) -> int:
    mask = (1 << 64) - 1
    x = (x + 0x9E3779B97F4A7C15) & mask
    z = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9 & mask
    z = (z ^ (z >> 27)) * 0x94D049BB133111EB & mask
    return (z ^ (z >> 31)) & mask


def truncated_geometric_pmf(mean: float = 5.0, kmax: int = 15) -> np.ndarray:
    """Default distribution of how many menu entries a carrier observes:
    geometric on {1..kmax} (index 0 carries zero mass), mean ~ requested."""
    p = min(max(1.0 / mean, 1e-6), 1.0)
    pmf = np.zeros(kmax + 1)
    pmf[1:] = p * (1 - p) ** np.arange(kmax)
    pmf /= pmf.sum()
    return pmf


@dataclass(frozen=True)
class SupplyModel:
    """Per-period Poisson load arrivals with synthetic geometry: endpoints
    are region centroids plus Gaussian scatter. Loads are inter-region by
    default (dropoff region resampled away from the pickup region), like
    the corridor freight this models."""

    rate: float
    lifetime: tuple[int, int]
    scatter: float = 15.0
    pickup_pmf: Optional[np.ndarray] = None
    dropoff_pmf: Optional[np.ndarray] = None
    inter_region: bool = True

    def __post_init__(self):
        if self.rate < 0:
            raise ConfigError("rate must be nonnegative")
        lo, hi = self.lifetime
        if lo < 1 or hi < lo:
            raise ConfigError("lifetime bounds must satisfy 1 <= lo <= hi")


@dataclass(frozen=True)
class SimConfig:
    supply: SupplyModel
    horizon_periods: int
    seed: int
    replications: int = 1
    framework: str = "rolling_horizon"  # no_bundle | rolling_horizon | personalized
    bundling: str = "greedy"  # greedy | min_empty_miles
    pricing: str = "custom"  # linear | custom
    choice_mode: str = "mnl"  # mnl | sequential_logit
    arrival_prob: float = 0.7
    alpha: float = 1.0
    salvage_multiplier: float = 1.5
    reference_cost_per_mile: float = 2.0
    rolling_period: int = 40
    topk_pmf: Optional[np.ndarray] = None
    max_bundles: Optional[int] = None
    confidence: float = 0.99

    def __post_init__(self):
        if self.framework not in ("no_bundle", "rolling_horizon", "personalized"):
            raise ConfigError(f"unknown framework {self.framework!r}")
        if self.bundling not in ("greedy", "min_empty_miles"):
            raise ConfigError(f"unknown bundling method {self.bundling!r}")
        if self.pricing not in ("linear", "custom"):
            raise ConfigError(f"unknown pricing mode {self.pricing!r}")
        if self.choice_mode not in ("mnl", "sequential_logit"):
            raise ConfigError(f"unknown choice mode {self.choice_mode!r}")
        if self.horizon_periods < 1:
            raise ConfigError("horizon must be at least one period")
        if not 0 < self.arrival_prob <= 1:
            raise ConfigError("arrival_prob must lie in (0, 1]")
        if self.alpha <= 0 or self.salvage_multiplier < 0:
            raise ConfigError("alpha must be > 0 and salvage_multiplier >= 0")
        if self.topk_pmf is not None:
            pmf = np.asarray(self.topk_pmf, dtype=float)
            if np.any(pmf < 0) or abs(pmf.sum() - 1.0) > 1e-9:
                raise ConfigError("topk_pmf must be a probability distribution")
            object.__setattr__(self, "topk_pmf", pmf)
        if self.replications < 1:
            raise ConfigError("need at least one replication")

    @classmethod
    def from_json(cls, text: str, regions: Optional["RegionModel"] = None):
        d = json.loads(text)
        sup = d["supply"]
        supply = SupplyModel(
            rate=float(sup["rate"]),
            lifetime=(int(sup["lifetime"][0]), int(sup["lifetime"][1])),
            scatter=float(sup.get("scatter", 15.0)),
            pickup_pmf=np.asarray(sup["pickup_pmf"], dtype=float) if "pickup_pmf" in sup else None,
            dropoff_pmf=np.asarray(sup["dropoff_pmf"], dtype=float) if "dropoff_pmf" in sup else None,
        )
        kwargs = {k: v for k, v in d.items() if k != "supply"}
        if "topk_pmf" in kwargs and kwargs["topk_pmf"] is not None:
            kwargs["topk_pmf"] = np.asarray(kwargs["topk_pmf"], dtype=float)
        return cls(supply=supply, **kwargs)


@dataclass
class SimMetrics:
    """Per-replication samples plus mean and CI half-width per metric."""

    samples: dict[str, np.ndarray]
    confidence: float

    def mean(self, key: str) -> float:
        return float(np.mean(self.samples[key]))

    def half_width(self, key: str) -> float:
        x = self.samples[key]
        n = len(x)
        if n < 2:
            return 0.0
        tq = stats.t.ppf(0.5 + self.confidence / 2.0, n - 1)
        return float(tq * np.std(x, ddof=1) / math.sqrt(n))

    @property
    def cost_per_loaded_mile(self) -> float:
        return self.mean("cost_per_loaded_mile")

    @property
    def avg_empty_miles(self) -> float:
        return self.mean("avg_empty_miles")

    @property
    def unmet_deadline_rate(self) -> float:
        return self.mean("unmet_deadline_rate")

    def summary(self) -> dict:
        out = {}
        for key in self.samples:
            out[key] = {"mean": self.mean(key), "half_width": self.half_width(key)}
        return out

    def to_json(self) -> str:
        return json.dumps(
            {
                "confidence": self.confidence,
                "summary": self.summary(),
                "samples": {k: v.tolist() for k, v in self.samples.items()},
            },
            indent=2,
            sort_keys=True,
        )


class _Load:
    __slots__ = (
        "uid", "pickup", "dropoff", "dist", "expiry", "lifetime",
        "q", "kappa", "pbar", "org", "dst",
    )

    def __init__(self, uid, pickup, dropoff, expiry, lifetime, coeffs, regions, salvage):
        self.uid = uid
        self.pickup = pickup
        self.dropoff = dropoff
        self.dist = _dist(pickup, dropoff)
        self.expiry = expiry
        self.lifetime = lifetime
        self.org = regions.nearest(pickup)
        self.dst = regions.nearest(dropoff)
        # region-indexed singleton quality: constant part + approach leg
        approach = np.hypot(
            regions.centroids[:, 0] - pickup[0], regions.centroids[:, 1] - pickup[1]
        )
        self.q = (
            coeffs.beta0
            + coeffs.beta_d * self.dist
            + coeffs.beta_e * approach
            + coeffs.beta_org[self.org]
            + coeffs.beta_dst[self.dst]
        )
        self.kappa = log_sum_exp(self.q, regions.arrival_pmf)
        gam = lambert_w_exp(self.q + coeffs.beta_p * salvage - 1.0)
        self.pbar = salvage - (1.0 + float(regions.arrival_pmf @ gam)) / coeffs.beta_p


class _MenuOption:
    __slots__ = ("loads", "q", "is_bundle")

    def __init__(self, loads, coeffs, regions):
        self.loads = loads
        self.is_bundle = len(loads) > 1
        if self.is_bundle:
            a, b = loads
            gap = _dist(a.dropoff, b.pickup)
            approach = np.hypot(
                regions.centroids[:, 0] - a.pickup[0],
                regions.centroids[:, 1] - a.pickup[1],
            )
            self.q = (
                coeffs.beta0
                + coeffs.beta_d * (a.dist + b.dist)
                + coeffs.beta_e * (approach + gap)
                + coeffs.beta_b
                + coeffs.beta_org[a.org]
                + coeffs.beta_dst[b.dst]
            )
        else:
            self.q = loads[0].q


def sample_choice(rng, utilities: np.ndarray, mode: str) -> int:
    """Index of the accepted option, or -1 for leaving empty-handed.

    mnl: one multinomial draw over options + outside. sequential_logit: an
    independent accept/reject walk down the list, first acceptance wins.
    """
    if len(utilities) == 0:
        return -1
    if mode == "mnl":
        m = max(0.0, float(np.max(utilities)))
        w = np.exp(utilities - m)
        w0 = math.exp(-m)
        total = w0 + w.sum()
        u = rng.random() * total
        acc = w0
        if u < acc:
            return -1
        for i, wi in enumerate(w):
            acc += wi
            if u < acc:
                return i
        return len(utilities) - 1
    if mode == "sequential_logit":
        probs = 1.0 / (1.0 + np.exp(-utilities))
        draws = rng.random(len(utilities))
        hits = np.flatnonzero(draws < probs)
        return int(hits[0]) if hits.size else -1
    raise ConfigError(f"unknown choice mode {mode!r}")


def _greedy_pairs(loads, marginals, coeffs, regions, beta_p, max_bundles, region=None):
    """Greedy partition of the active loads into singletons and ordered
    pairs by expected acceptance weight at the estimated marginals."""
    n = len(loads)
    if n == 0:
        return []
    options: list[tuple[float, int, tuple]] = []  # (-key, order, member idx)
    order = 0
    pmf = regions.arrival_pmf
    for i, a in enumerate(loads):
        key = (
            log_sum_exp(a.q + beta_p * marginals[i], pmf)
            if region is None
            else a.q[region] + beta_p * marginals[i]
        )
        options.append((-key, order, (i,)))
        order += 1
    for i, a in enumerate(loads):
        for j, b in enumerate(loads):
            if i == j:
                continue
            gap = _dist(a.dropoff, b.pickup)
            # pair quality: a's approach leg is already inside a.q
            qpair = (
                a.q
                + coeffs.beta_d * b.dist
                + coeffs.beta_e * gap
                + coeffs.beta_b
                + (coeffs.beta_dst[b.dst] - coeffs.beta_dst[a.dst])
            )
            dm = marginals[i] + marginals[j]
            key = (
                log_sum_exp(qpair + beta_p * dm, pmf)
                if region is None
                else qpair[region] + beta_p * dm
            )
            options.append((-key, order, (i, j)))
            order += 1
    options.sort()
    used = set()
    bundles = 0
    chosen = []
    cap = math.inf if max_bundles is None else max_bundles
    for negkey, _, members in options:
        if used.intersection(members):
            continue
        if len(members) > 1 and bundles >= cap:
            continue
        chosen.append(members)
        used.update(members)
        if len(members) > 1:
            bundles += 1
        if len(used) == n:
            break
    return chosen


def _empty_mile_pairs(loads, regions):
    from .bundling import min_empty_miles

    items = [
        Item(
            id=k,
            freight=FreightItemData(pickup=l.pickup, dropoff=l.dropoff, expiration=max(l.lifetime, 1)),
        )
        for k, l in enumerate(loads)
    ]
    ehat_dst = [float(regions.ehat[l.dst]) for l in loads]
    chosen = min_empty_miles(items, ehat_dst)
    return [o.items for o in chosen]


def _run_replication(config: SimConfig, coeffs: FreightCoeffs, regions: RegionModel, seed: int):
    rng = np.random.default_rng(seed)
    sup = config.supply
    pickup_pmf = regions.arrival_pmf if sup.pickup_pmf is None else np.asarray(sup.pickup_pmf)
    dropoff_pmf = regions.arrival_pmf if sup.dropoff_pmf is None else np.asarray(sup.dropoff_pmf)
    topk_pmf = (
        truncated_geometric_pmf() if config.topk_pmf is None else config.topk_pmf
    )
    beta_p = coeffs.beta_p
    mu = config.arrival_prob

    active: list[_Load] = []
    options: list[_MenuOption] = []
    uid = 0
    cost = 0.0
    loaded_miles = 0.0
    empty_miles = 0.0
    booked = 0
    salvaged = 0
    price_paid = 0.0
    penalty_paid = 0.0
    booked_miles = 0.0
    salvaged_miles = 0.0

    def price_of_load(load: _Load, now: int) -> float:
        t = load.lifetime - (load.expiry - now)
        x = -(beta_p * load.pbar + load.kappa)
        togo = config.alpha * mu * (load.lifetime - 1 - t)
        inner = np.logaddexp(x, math.log(togo)) if togo > 0 else x
        return float((-1.0 / beta_p) * (inner + load.kappa))

    def rebuild_options(now: int, region=None):
        nonlocal options
        if not active:
            options = []
            return
        marg = np.array(
            [
                load_marginal_value(price_of_load(l, now), l.kappa, beta_p)
                for l in active
            ]
        )
        if config.bundling == "greedy":
            groups = _greedy_pairs(
                active, marg, coeffs, regions, beta_p, config.max_bundles, region=region
            )
        else:
            groups = _empty_mile_pairs(active, regions)
        options = [
            _MenuOption(tuple(active[i] for i in g), coeffs, regions) for g in groups
        ]

    def drop_loads(gone: set):
        nonlocal options
        survivors = []
        for opt in options:
            hit = [l for l in opt.loads if l.uid in gone]
            if not hit:
                survivors.append(opt)
                continue
            for l in opt.loads:
                if l.uid not in gone:
                    survivors.append(_MenuOption((l,), coeffs, regions))
        options = survivors

    for now in range(1, config.horizon_periods + 1):
        # (a) supply
        n_new = rng.poisson(sup.rate)
        for _ in range(n_new):
            org = rng.choice(regions.n_regions, p=pickup_pmf)
            if sup.inter_region and regions.n_regions > 1:
                w = dropoff_pmf.copy()
                w[org] = 0.0
                if w.sum() <= 0:  # dropoff mass concentrated on the origin
                    w = np.ones(regions.n_regions)
                    w[org] = 0.0
                dst = rng.choice(regions.n_regions, p=w / w.sum())
            else:
                dst = rng.choice(regions.n_regions, p=dropoff_pmf)
            pickup = tuple(regions.centroids[org] + sup.scatter * rng.standard_normal(2))
            dropoff = tuple(regions.centroids[dst] + sup.scatter * rng.standard_normal(2))
            life = int(rng.integers(sup.lifetime[0], sup.lifetime[1] + 1))
            load = _Load(
                uid,
                pickup,
                dropoff,
                expiry=now + life,
                lifetime=life,
                coeffs=coeffs,
                regions=regions,
                salvage=config.salvage_multiplier
                * config.reference_cost_per_mile
                * _dist(pickup, dropoff),
            )
            uid += 1
            active.append(load)
            if config.framework != "personalized":
                options.append(_MenuOption((load,), coeffs, regions))

        # (b) expirations
        expired = [l for l in active if l.expiry <= now]
        if expired:
            gone = {l.uid for l in expired}
            for l in expired:
                penalty = config.salvage_multiplier * config.reference_cost_per_mile * l.dist
                cost += penalty
                penalty_paid += penalty
                loaded_miles += l.dist
                salvaged_miles += l.dist
                empty_miles += _dist(regions.centroids[l.org], l.pickup)
                salvaged += 1
            active = [l for l in active if l.uid not in gone]
            if config.framework != "personalized":
                drop_loads(gone)

        # (b') rolling recompute
        if (
            config.framework == "rolling_horizon"
            and (now - 1) % config.rolling_period == 0
        ):
            rebuild_options(now)

        # (c) carrier arrival
        if rng.random() >= mu:
            continue
        region = int(rng.choice(regions.n_regions, p=regions.arrival_pmf))
        if config.framework == "personalized":
            rebuild_options(now, region=region)
        if not options:
            continue
        menu = options
        prices = np.empty(len(menu))
        margins = np.empty(len(menu))
        for k, opt in enumerate(menu):
            member_prices = [price_of_load(l, now) for l in opt.loads]
            member_marg = [
                load_marginal_value(p, l.kappa, beta_p)
                for p, l in zip(member_prices, opt.loads)
            ]
            margins[k] = sum(member_marg)
            if not opt.is_bundle:
                prices[k] = member_prices[0]
            elif config.pricing == "linear":
                prices[k] = sum(member_prices)
            else:
                delta_b = margins[k]
                gam = lambert_w_exp(opt.q + beta_p * delta_b - 1.0)
                prices[k] = delta_b - (1.0 + float(regions.arrival_pmf @ gam)) / beta_p
        rank = np.array([opt.q[region] for opt in menu]) + beta_p * margins
        order = np.argsort(-rank, kind="stable")
        k_obs = int(rng.choice(len(topk_pmf), p=topk_pmf))
        shown = order[: min(k_obs, len(order))]
        if shown.size == 0:
            continue
        utilities = np.array(
            [menu[j].q[region] + beta_p * prices[j] for j in shown]
        )
        pick = sample_choice(rng, utilities, config.choice_mode)
        if pick < 0:
            continue
        j = int(shown[pick])
        opt = menu[j]
        cost += prices[j]
        price_paid += prices[j]
        first = opt.loads[0]
        empty_miles += _dist(regions.centroids[region], first.pickup)
        for a, b in zip(opt.loads[:-1], opt.loads[1:]):
            empty_miles += _dist(a.dropoff, b.pickup)
        for l in opt.loads:
            loaded_miles += l.dist
            booked_miles += l.dist
            booked += 1
        gone = {l.uid for l in opt.loads}
        active = [l for l in active if l.uid not in gone]
        if config.framework != "personalized":
            drop_loads(gone)

    resolved = booked + salvaged
    return {
        "cost_per_loaded_mile": cost / loaded_miles if loaded_miles > 0 else 0.0,
        "avg_empty_miles": empty_miles / resolved if resolved else 0.0,
        "unmet_deadline_rate": salvaged / resolved if resolved else 0.0,
        "total_cost": cost,
        "loaded_miles": loaded_miles,
        "empty_miles": empty_miles,
        "booked": float(booked),
        "salvaged": float(salvaged),
        "price_paid": price_paid,
        "penalty_paid": penalty_paid,
        "booked_miles": booked_miles,
        "salvaged_miles": salvaged_miles,
    }


def simulate(config: SimConfig, coeffs: FreightCoeffs, regions: RegionModel) -> SimMetrics:
    """Seeded multi-replication marketplace simulation.

    Replication r runs on seed XOR splitmix64(r); metrics are aggregated in
    replication order, so results are bit-identical for a fixed config.
    """
    keys = (
        "cost_per_loaded_mile",
        "avg_empty_miles",
        "unmet_deadline_rate",
        "total_cost",
        "loaded_miles",
        "empty_miles",
        "booked",
        "salvaged",
        "price_paid",
        "penalty_paid",
        "booked_miles",
        "salvaged_miles",
    )
    samples = {k: np.empty(config.replications) for k in keys}
    for r in range(config.replications):
        rep_seed = (config.seed ^ splitmix64(r)) & ((1 << 63) - 1)
        out = _run_replication(config, coeffs, regions, rep_seed)
        for k in keys:
            samples[k][r] = out[k]
    return SimMetrics(samples=samples, confidence=config.confidence)


def demo_regions() -> RegionModel:
    """Four-city demo geometry (miles) with arrival shares resembling a
    large/small market mix."""
    return RegionModel(
        names=("SAT", "AUS", "DAL", "HOU"),
        centroids=np.array([[0.0, 0.0], [55.0, 70.0], [180.0, 245.0], [190.0, -15.0]]),
        arrival_pmf=np.array([0.11, 0.06, 0.45, 0.38]),
        ehat=np.array([45.0, 55.0, 35.0, 40.0]),
    )


def demo_sim_config(
    pricing: str,
    seed: int = 42,
    replications: int = 200,
    framework: str = "rolling_horizon",
    bundling: str = "greedy",
    choice_mode: str = "mnl",
) -> SimConfig:
    """The frozen two-pricing comparison setup: supply pressure high enough
    that bundle mispricing shows up in the unmet-deadline rate."""
    return SimConfig(
        supply=SupplyModel(rate=0.4, lifetime=(20, 40), scatter=12.0),
        horizon_periods=1500,
        seed=seed,
        replications=replications,
        framework=framework,
        bundling=bundling,
        pricing=pricing,
        choice_mode=choice_mode,
        arrival_prob=0.6,
        alpha=0.15,
        salvage_multiplier=1.5,
        rolling_period=15,
    )


def demo_coeffs(aversion: float = -2.0) -> FreightCoeffs:
    """Plausible demo calibration: utilities O(1) and positive dollar prices
    around two dollars per loaded mile at the demo geometry."""
    return FreightCoeffs(
        beta0=-3.5,
        beta_d=-0.002,
        beta_e=-0.010,
        beta_b=aversion,
        beta_p=0.01,
        beta_org=np.array([-0.15, -0.25, 0.15, 0.1]),
        beta_dst=np.array([-0.1, -0.2, 0.2, 0.1]),
    )
