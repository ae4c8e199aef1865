"""Domain types: items, bundle options, option sets, customer models.

Options are ordered sequences of distinct item ids everywhere, because
ordering can change a bundle's perceived quality (delivery order in a
freight bundle, display order in retail). An OptionSet is a pure-bundling
assortment: every item of the instance belongs to exactly one option.

Quality is a function interface rather than a stored table: the option
universe can be large and freight quality depends on the arrival region, so
per-(option, type) values are memoized with an explicit capacity instead.
"""

from __future__ import annotations

import itertools
import json
import math
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from .errors import CapExceeded, DomainError, PartitionMismatch, UnknownScenario
from .numerics import log_sum_exp

DEFAULT_OPTION_CAP = 200_000


@dataclass(frozen=True)
class FreightItemData:
    """Geometry and deadline of a freight load, coordinates in miles."""

    pickup: tuple[float, float]
    dropoff: tuple[float, float]
    expiration: int

    @property
    def loaded_miles(self) -> float:
        dx = self.dropoff[0] - self.pickup[0]
        dy = self.dropoff[1] - self.pickup[1]
        return math.hypot(dx, dy)


@dataclass(frozen=True)
class Item:
    id: int
    salvage: float = 0.0
    features: Optional[tuple[float, float]] = None
    freight: Optional[FreightItemData] = None

    def __post_init__(self):
        if not math.isfinite(self.salvage):
            raise ValueError("salvage must be finite")


@dataclass(frozen=True)
class BundleOption:
    """An ordered sequence of distinct item ids sold as one unit."""

    items: tuple[int, ...]

    def __post_init__(self):
        object.__setattr__(self, "items", tuple(self.items))
        if len(self.items) == 0:
            raise ValueError("an option holds at least one item")
        if len(set(self.items)) != len(self.items):
            raise ValueError(f"repeated item in option {self.items}")

    @property
    def cardinality(self) -> int:
        return len(self.items)

    def salvage(self, items_by_id: dict[int, Item]) -> float:
        return sum(items_by_id[i].salvage for i in self.items)


def _as_option(obj) -> BundleOption:
    if isinstance(obj, BundleOption):
        return obj
    if isinstance(obj, int):
        return BundleOption((obj,))
    return BundleOption(tuple(obj))


@dataclass(frozen=True)
class OptionSet:
    """A partition of the instance's items into options."""

    options: tuple[BundleOption, ...]

    def __post_init__(self):
        object.__setattr__(self, "options", tuple(_as_option(o) for o in self.options))

    def __iter__(self):
        return iter(self.options)

    def __len__(self):
        return len(self.options)

    @property
    def bundle_count(self) -> int:
        return sum(1 for o in self.options if o.cardinality > 1)

    def item_ids(self) -> list[int]:
        out = []
        for o in self.options:
            out.extend(o.items)
        return out

    def canonical(self) -> tuple[tuple[int, ...], ...]:
        """Deterministic encoding used for tie-breaking between partitions."""
        return tuple(sorted(o.items for o in self.options))

    def validate(self, instance: "MarketInstance") -> None:
        ids = self.item_ids()
        want = sorted(it.id for it in instance.items)
        if sorted(ids) != want:
            raise PartitionMismatch(
                f"options cover items {sorted(ids)}, instance has {want}"
            )
        if self.bundle_count > instance.max_bundles:
            raise PartitionMismatch(
                f"{self.bundle_count} bundles exceed the limit of {instance.max_bundles}"
            )
        oversize = [o.items for o in self.options if o.cardinality > instance.max_bundle_size]
        if oversize:
            raise PartitionMismatch(f"options too large: {oversize}")


def singletons(instance: "MarketInstance") -> OptionSet:
    """The no-bundle option set S0."""
    return OptionSet(tuple(BundleOption((it.id,)) for it in instance.items))


def sub_instance(instance: "MarketInstance", item_ids) -> "MarketInstance":
    """Same market restricted to a subset of items (customer model shared)."""
    keep = set(item_ids)
    return MarketInstance(
        items=tuple(it for it in instance.items if it.id in keep),
        customer=instance.customer,
        demand=instance.demand,
        arrival_prob=instance.arrival_prob,
        max_bundles=instance.max_bundles,
        max_bundle_size=instance.max_bundle_size,
    )


@dataclass(eq=False)
class CustomerModel:
    """Customer types, their arrival distribution, and perceived quality.

    quality(option, type_index) returns the perceived quality of an option
    for one customer type. The callable must be deterministic; results are
    memoized up to cache_capacity entries (FIFO eviction). For non-MNL
    choice models plugged in elsewhere, the caller is responsible for the
    regularity of the pricing map (well-defined, non-decreasing optimal
    price in the marginal value); it cannot be verified symbolically here.
    """

    types: tuple
    arrival_pmf: np.ndarray
    price_sensitivity: float
    quality: Callable[[BundleOption, int], float]
    cache_capacity: int = 1 << 18
    _memo: dict = field(default_factory=dict, repr=False)

    def __post_init__(self):
        self.types = tuple(self.types)
        self.arrival_pmf = np.asarray(self.arrival_pmf, dtype=float)
        if self.arrival_pmf.shape != (len(self.types),):
            raise ValueError("arrival_pmf length must match types")
        if np.any(self.arrival_pmf < 0) or abs(self.arrival_pmf.sum() - 1.0) > 1e-12:
            raise ValueError("arrival_pmf must be a probability distribution")
        if self.price_sensitivity == 0:
            raise ValueError("price_sensitivity must be nonzero")

    @property
    def n_types(self) -> int:
        return len(self.types)

    def quality_of(self, option: BundleOption, type_index: int) -> float:
        key = (option.items, type_index)
        hit = self._memo.get(key)
        if hit is not None:
            return hit
        val = float(self.quality(option, type_index))
        if self.cache_capacity > 0:
            if len(self._memo) >= self.cache_capacity:
                self._memo.pop(next(iter(self._memo)))
            self._memo[key] = val
        return val

    def quality_matrix(self, options: Sequence[BundleOption]) -> np.ndarray:
        """Qualities as an (n_types, n_options) array."""
        return np.array(
            [[self.quality_of(o, w) for o in options] for w in range(self.n_types)],
            dtype=float,
        )


@dataclass(eq=False)
class MarketInstance:
    """A market: unique items, a customer model, and season parameters."""

    items: tuple[Item, ...]
    customer: CustomerModel
    demand: float
    arrival_prob: float
    max_bundles: int
    max_bundle_size: int

    def __post_init__(self):
        self.items = tuple(self.items)
        ids = [it.id for it in self.items]
        if len(set(ids)) != len(ids):
            raise ValueError("item ids must be unique")
        if self.demand < 0:
            raise ValueError("demand must be nonnegative")
        if not 0 < self.arrival_prob <= 1:
            raise ValueError("arrival_prob must lie in (0, 1]")
        if self.max_bundle_size < 1 or self.max_bundles < 0:
            raise ValueError("need max_bundle_size >= 1 and max_bundles >= 0")

    @property
    def horizon(self) -> int:
        return int(math.floor(self.demand / self.arrival_prob))

    @property
    def n_items(self) -> int:
        return len(self.items)

    def items_by_id(self) -> dict[int, Item]:
        return {it.id: it for it in self.items}

    def salvage_of(self, option: BundleOption) -> float:
        by_id = self.items_by_id()
        return sum(by_id[i].salvage for i in option.items)

    def salvage_vector(self, options: Sequence[BundleOption]) -> np.ndarray:
        by_id = self.items_by_id()
        return np.array(
            [sum(by_id[i].salvage for i in o.items) for o in options], dtype=float
        )


@dataclass(frozen=True)
class ChoiceVector:
    """Per-option acceptance probabilities plus the no-purchase mass."""

    probs: np.ndarray
    outside: float

    def __post_init__(self):
        object.__setattr__(self, "probs", np.asarray(self.probs, dtype=float))

    @property
    def total(self) -> float:
        return float(self.probs.sum() + self.outside)


def option_count(n_items: int, max_bundle_size: int) -> int:
    """Number of ordered sequences of distinct items with length 1..K_b."""
    total = 0
    for k in range(1, max_bundle_size + 1):
        total += math.perm(n_items, k)
    return total


def enumerate_options(
    instance: MarketInstance, cap: int = DEFAULT_OPTION_CAP
) -> list[BundleOption]:
    """All ordered sequences of distinct items with length 1..K_b.

    Deterministic order: by length, then lexicographic on sorted item ids.
    Raises CapExceeded before generating anything if the count is too large.
    """
    n = option_count(instance.n_items, instance.max_bundle_size)
    if n > cap:
        raise CapExceeded(f"{n} options exceed the cap of {cap}")
    ids = sorted(it.id for it in instance.items)
    out: list[BundleOption] = []
    for k in range(1, instance.max_bundle_size + 1):
        for combo in itertools.permutations(ids, k):
            out.append(BundleOption(combo))
    return out


def _utilities(customer: CustomerModel, options, prices, type_index) -> np.ndarray:
    prices = np.asarray(prices, dtype=float)
    q = np.array([customer.quality_of(o, type_index) for o in options], dtype=float)
    return q + customer.price_sensitivity * prices


def mnl_choice(customer: CustomerModel, options, prices, type_index: int) -> ChoiceVector:
    """MNL acceptance probabilities for one customer type, shift-stable."""
    opts = [_as_option(o) for o in options]
    v = _utilities(customer, opts, prices, type_index)
    m = max(0.0, float(np.max(v))) if v.size else 0.0
    ev = np.exp(v - m)
    denom = np.exp(-m) + ev.sum()
    return ChoiceVector(probs=ev / denom, outside=float(np.exp(-m) / denom))


def extended_choice(
    customer: CustomerModel, options, prices, availability, type_index: int
) -> np.ndarray:
    """Choice probabilities extended to real-valued availability of the rivals.

    Each option's own term enters the denominator fully (the probability is
    conditioned on its availability); rivals are weighted by their
    availability. At a 0/1 availability vector this reduces to mnl_choice on
    the available subset.
    """
    opts = [_as_option(o) for o in options]
    a = np.asarray(availability, dtype=float)
    if a.shape != (len(opts),):
        raise DomainError("availability must have one entry per option")
    if np.any(a < -1e-12) or np.any(a > 1 + 1e-12):
        raise DomainError("availability entries must lie in [0, 1]")
    v = _utilities(customer, opts, prices, type_index)
    m = max(0.0, float(np.max(v))) if v.size else 0.0
    ev = np.exp(v - m)
    base = np.exp(-m) + float(np.dot(a, ev))
    return ev / (base + (1.0 - a) * ev)


def aggregated_quality(customer: CustomerModel, option) -> float:
    """kappa_i = ln E_X[e^{q_i^X}], a weighted log-sum-exp across types."""
    opt = _as_option(option)
    q = [customer.quality_of(opt, w) for w in range(customer.n_types)]
    return log_sum_exp(q, customer.arrival_pmf)


def aggregated_quality_of_set(customer: CustomerModel, option_set: OptionSet) -> float:
    return sum(aggregated_quality(customer, o) for o in option_set)


# ---------------------------------------------------------------------------
# synthetic instances
# ---------------------------------------------------------------------------

SCENARIOS = ("bounds-two-type", "A", "B", "C")


def _scenario_quality(scenario: str, beta: float, features: np.ndarray):
    """Quality function over (option, type) for the built-in scenarios.

    Items carry two intrinsic qualities (a, b); type 1 of the bundling
    scenarios values their average while type 2 varies by scenario.
    """

    def q(option: BundleOption, w: int) -> float:
        sa = float(sum(features[i, 0] for i in option.items))
        sb = float(sum(features[i, 1] for i in option.items))
        if scenario == "bounds-two-type":
            return beta * (sa + 0.5 * sb) if w == 0 else beta * (0.5 * sa + sb)
        if w == 0:
            return 0.5 * beta * (sa + sb)
        if scenario == "A":
            return beta * sa
        if scenario == "B":
            return 2.0 * beta * min(sa, sb)
        if scenario == "C":
            return beta * sa**1.5
        raise UnknownScenario(scenario)

    return q


def generate_synthetic(
    seed: int,
    count: int,
    scenario: str = "bounds-two-type",
    beta: float = 1.0,
    *,
    demand: Optional[float] = None,
    arrival_prob: float = 0.1,
    beta_p: float = -1.0,
    max_bundles: Optional[int] = None,
    max_bundle_size: int = 2,
    salvage: float = 0.0,
) -> MarketInstance:
    """Deterministic synthetic market with two customer types.

    Intrinsic qualities are iid uniform(0,1) per item; the per-type
    perceived-quality formulas are fixed by the scenario name. demand
    defaults to one expected arrival per item.
    """
    if scenario not in SCENARIOS:
        raise UnknownScenario(f"scenario must be one of {SCENARIOS}, got {scenario!r}")
    rng = np.random.default_rng(seed)
    features = rng.uniform(0.0, 1.0, size=(count, 2))
    items = tuple(
        Item(id=i, salvage=salvage, features=(float(features[i, 0]), float(features[i, 1])))
        for i in range(count)
    )
    customer = CustomerModel(
        types=(1, 2),
        arrival_pmf=np.array([0.5, 0.5]),
        price_sensitivity=beta_p,
        quality=_scenario_quality(scenario, beta, features),
    )
    return MarketInstance(
        items=items,
        customer=customer,
        demand=float(count) if demand is None else float(demand),
        arrival_prob=arrival_prob,
        max_bundles=count if max_bundles is None else max_bundles,
        max_bundle_size=max_bundle_size,
    )


# ---------------------------------------------------------------------------
# serialization
# ---------------------------------------------------------------------------


def instance_to_json(instance: MarketInstance, quality_spec: dict) -> str:
    """Serialize an instance; quality_spec names a built-in scenario or a
    freight coefficient block (callables themselves are not serialized)."""
    doc = {
        "items": [
            {
                "id": it.id,
                "salvage": it.salvage,
                **({"features": list(it.features)} if it.features else {}),
                **(
                    {
                        "freight": {
                            "pickup": list(it.freight.pickup),
                            "dropoff": list(it.freight.dropoff),
                            "expiration": it.freight.expiration,
                        }
                    }
                    if it.freight
                    else {}
                ),
            }
            for it in instance.items
        ],
        "customer": {
            "types": list(instance.customer.types),
            "pmf": instance.customer.arrival_pmf.tolist(),
            "beta_p": instance.customer.price_sensitivity,
            "quality_spec": quality_spec,
        },
        "lambda": instance.demand,
        "mu": instance.arrival_prob,
        "ks": instance.max_bundles,
        "kb": instance.max_bundle_size,
    }
    return json.dumps(doc, indent=2, sort_keys=True)


def instance_from_json(text: str) -> MarketInstance:
    doc = json.loads(text)
    items = []
    for d in doc["items"]:
        freight = None
        if "freight" in d:
            f = d["freight"]
            freight = FreightItemData(
                pickup=tuple(f["pickup"]),
                dropoff=tuple(f["dropoff"]),
                expiration=int(f["expiration"]),
            )
        items.append(
            Item(
                id=int(d["id"]),
                salvage=float(d.get("salvage", 0.0)),
                features=tuple(d["features"]) if "features" in d else None,
                freight=freight,
            )
        )
    items = tuple(items)
    cust = doc["customer"]
    spec = cust["quality_spec"]
    if "scenario" in spec:
        features = np.array(
            [it.features if it.features else (0.0, 0.0) for it in items], dtype=float
        )
        id_row = {it.id: k for k, it in enumerate(items)}
        feat = np.zeros((max(id_row.values()) + 1, 2)) if items else np.zeros((0, 2))
        for it in items:
            feat[it.id] = features[id_row[it.id]]
        quality = _scenario_quality(spec["scenario"], float(spec.get("beta", 1.0)), feat)
    elif "freight" in spec:
        from .freight import FreightCoeffs, RegionModel, make_freight_quality

        block = spec["freight"]
        coeffs = FreightCoeffs.from_dict(block["coeffs"])
        regions = RegionModel.from_dict(block["regions"])
        quality = make_freight_quality({it.id: it for it in items}, coeffs, regions)
    else:
        raise UnknownScenario(f"unrecognized quality_spec: {spec}")
    customer = CustomerModel(
        types=tuple(cust["types"]),
        arrival_pmf=np.asarray(cust["pmf"], dtype=float),
        price_sensitivity=float(cust["beta_p"]),
        quality=quality,
    )
    return MarketInstance(
        items=items,
        customer=customer,
        demand=float(doc["lambda"]),
        arrival_prob=float(doc["mu"]),
        max_bundles=int(doc["ks"]),
        max_bundle_size=int(doc["kb"]),
    )
