"""Experiment runner: desk-scale reproductions of the headline tables and
figures, plus direct access to every library capability.

Every output file is deterministic for a fixed seed and carries a
provenance comment (tool version, seed, hash of the resolved experiment
arguments). Data only; no plot rendering.
"""

from __future__ import annotations

import argparse
import hashlib
import itertools
import json
import math
import os
import sys
from concurrent.futures import ThreadPoolExecutor

import numpy as np

from . import __version__
from .bounds import backward_upper, bound_suite, dfa
from .bundling import (
    ColumnGenConfig,
    best_upper_bound_partition,
    column_generation,
    greedy_bundle,
    optimality_gap,
)
from .errors import UipError
from .freight import RegionModel, FreightCoeffs, SimConfig, demo_coeffs, demo_regions, simulate
from .model import (
    BundleOption,
    CustomerModel,
    Item,
    MarketInstance,
    OptionSet,
    generate_synthetic,
    instance_from_json,
    singletons,
)
from .pricing import exact_dp

def _spec_hash(args: dict) -> str:
    """Hash of the experiment-defining arguments (execution details like
    thread count, output path, and the handler function are excluded)."""
    semantic = {
        k: v for k, v in args.items() if k not in ("func", "out", "threads")
    }
    blob = json.dumps(semantic, sort_keys=True, default=str).encode()
    return hashlib.sha256(blob).hexdigest()[:12]


def _provenance(args: dict, seed) -> str:
    return f"# uip {__version__} seed={seed} spec={_spec_hash(args)}"


def _emit(path, text: str):
    if path in (None, "-"):
        sys.stdout.write(text)
    else:
        with open(path, "w") as fh:
            fh.write(text)


def _csv(provenance: str, header: list[str], rows: list[list]) -> str:
    lines = [provenance, ",".join(header)]
    for row in rows:
        lines.append(",".join(repr(v) if isinstance(v, float) else str(v) for v in row))
    return "\n".join(lines) + "\n"


def _threads(args) -> int:
    env = os.environ.get("UIP_THREADS")
    if env:
        return max(1, int(env))
    return max(1, args.threads)


def _load_instance(args) -> MarketInstance:
    if args.instance:
        with open(args.instance) as fh:
            return instance_from_json(fh.read())
    return generate_synthetic(
        seed=args.seed,
        count=args.L,
        scenario=args.scenario,
        beta=args.beta,
        demand=args.lam,
        arrival_prob=args.mu,
        beta_p=args.beta_p,
        max_bundles=args.ks,
        max_bundle_size=args.kb,
    )


def _add_instance_flags(p: argparse.ArgumentParser):
    p.add_argument("--instance", help="instance JSON file (overrides synthetic flags)")
    p.add_argument("--scenario", default="bounds-two-type",
                   choices=["bounds-two-type", "A", "B", "C"])
    p.add_argument("--L", type=int, default=5, help="number of items")
    p.add_argument("--lambda", dest="lam", type=float, default=None,
                   help="demand (expected arrivals); default L")
    p.add_argument("--mu", type=float, default=0.1, help="per-period arrival probability")
    p.add_argument("--beta", type=float, default=1.0, help="quality sensitivity")
    p.add_argument("--beta-p", dest="beta_p", type=float, default=-1.0)
    p.add_argument("--ks", type=int, default=None, help="max number of bundles")
    p.add_argument("--kb", type=int, default=2, help="max bundle size")


def _add_common(p: argparse.ArgumentParser):
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--seeds", type=int, default=1, help="number of seeds to sweep")
    p.add_argument("--out", default="-", help="output path ('-' = stdout)")
    p.add_argument("--format", choices=["csv", "json"], default="csv")
    p.add_argument("--threads", type=int, default=1)


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------


def cmd_exact(args) -> int:
    inst = _load_instance(args)
    sol = exact_dp(inst, singletons(inst))
    payload = {
        "value": sol.value(),
        "horizon": inst.horizon,
        "items": inst.n_items,
        "provenance": {"version": __version__, "seed": args.seed,
                       "spec": _spec_hash(vars(args))},
    }
    if args.format == "json":
        _emit(args.out, json.dumps(payload, indent=2, sort_keys=True) + "\n")
    else:
        _emit(args.out, _csv(_provenance(vars(args), args.seed),
                             ["value", "horizon", "items"],
                             [[sol.value(), inst.horizon, inst.n_items]]))
    return 0


def cmd_bounds_table(args) -> int:
    lam = args.lam if args.lam is not None else float(args.L)

    def one(seed: int):
        inst = generate_synthetic(
            seed=seed, count=args.L, scenario=args.scenario, beta=args.beta,
            demand=lam, arrival_prob=args.mu, beta_p=args.beta_p,
            max_bundle_size=1,
        )
        s0 = singletons(inst)
        v = exact_dp(inst, s0).value()
        out = {}
        for kind, res in bound_suite(inst, s0).items():
            out[kind] = (res.value - v) / v
        return out

    seeds = [args.seed + k for k in range(args.seeds)]
    with ThreadPoolExecutor(max_workers=_threads(args)) as ex:
        rows = list(ex.map(one, seeds))
    kinds = ["fluid", "upper_backward", "dfa", "lower_backward", "static"]
    table = [
        [kind, args.L, lam, float(np.mean([r[kind] for r in rows]))]
        for kind in kinds
    ]
    if args.format == "json":
        payload = {k: dict(L=args.L, demand=lam, mean_rel_err=v) for k, _, _, v in table}
        _emit(args.out, json.dumps(payload, indent=2, sort_keys=True) + "\n")
    else:
        _emit(args.out, _csv(_provenance(vars(args), args.seed),
                             ["kind", "L", "lambda", "mean_rel_err"], table))
    return 0


def intro_example_instance(demand: float, mu: float = 0.1, beta_p: float = -1.0) -> MarketInstance:
    """Three items with one complementary and one high-quality bundle."""
    quality_table = {
        (0,): 1.0, (1,): 1.5, (2,): 2.5,
        (0, 1): 3.0, (1, 0): 3.0,
        (1, 2): 4.0, (2, 1): 4.0,
    }

    def quality(option: BundleOption, w: int) -> float:
        return quality_table[option.items]

    customer = CustomerModel(
        types=(0,), arrival_pmf=np.array([1.0]),
        price_sensitivity=beta_p, quality=quality,
    )
    return MarketInstance(
        items=(Item(0), Item(1), Item(2)), customer=customer,
        demand=demand, arrival_prob=mu, max_bundles=1, max_bundle_size=2,
    )


def intro_example_values(demand: float) -> tuple[float, float, float]:
    inst = intro_example_instance(demand)
    s0 = singletons(inst)
    s1 = OptionSet((BundleOption((0, 1)), BundleOption((2,))))
    s2 = OptionSet((BundleOption((0,)), BundleOption((1, 2))))
    return tuple(exact_dp(inst, s).value() for s in (s0, s1, s2))


def _parse_grid(spec: str) -> np.ndarray:
    parts = spec.split(":")
    lo, hi = float(parts[0]), float(parts[1])
    n = 25
    log = True
    for p in parts[2:]:
        if p == "log":
            log = True
        elif p == "lin":
            log = False
        else:
            n = int(p)
    if log:
        return np.exp(np.linspace(math.log(lo), math.log(hi), n))
    return np.linspace(lo, hi, n)


def cmd_figure1(args) -> int:
    grid = _parse_grid(args.lambda_grid)

    with ThreadPoolExecutor(max_workers=_threads(args)) as ex:
        vals = list(ex.map(intro_example_values, grid))
    rows = [
        [float(lam), v0, v1, v2] for lam, (v0, v1, v2) in zip(grid, vals)
    ]
    if args.format == "json":
        payload = [dict(zip(["lambda", "v_s0", "v_s1", "v_s2"], r)) for r in rows]
        _emit(args.out, json.dumps(payload, indent=2, sort_keys=True) + "\n")
    else:
        _emit(args.out, _csv(_provenance(vars(args), args.seed),
                             ["lambda", "v_s0", "v_s1", "v_s2"], rows))
    return 0


def cmd_bundle(args) -> int:
    inst = _load_instance(args)
    cfg = ColumnGenConfig(n_gen=args.n_gen, n_eval=args.n_eval)
    chosen, res, trace = column_generation(inst, cfg)
    _, z_star = best_upper_bound_partition(inst)
    payload = {
        "options": [list(o.items) for o in chosen],
        "dfa": res.value,
        "z_star": z_star,
        "optimality_gap": optimality_gap(z_star, res.value, inst.customer.price_sensitivity),
        "trace": trace.to_json_dict(),
        "provenance": {"version": __version__, "seed": args.seed,
                       "spec": _spec_hash(vars(args))},
    }
    _emit(args.out, json.dumps(payload, indent=2, sort_keys=True) + "\n")
    return 0


def cmd_greedy(args) -> int:
    inst = _load_instance(args)
    chosen = greedy_bundle(inst, value_kind=args.value_kind)
    up = backward_upper(inst, chosen)
    res = dfa(inst, chosen, up.trajectory)
    payload = {
        "options": [list(o.items) for o in chosen],
        "dfa": res.value,
        "value_kind": args.value_kind,
        "provenance": {"version": __version__, "seed": args.seed,
                       "spec": _spec_hash(vars(args))},
    }
    _emit(args.out, json.dumps(payload, indent=2, sort_keys=True) + "\n")
    return 0


def cmd_simulate(args) -> int:
    if args.config:
        with open(args.config) as fh:
            cfg = SimConfig.from_json(fh.read())
    else:
        from .freight import demo_sim_config

        cfg = demo_sim_config(pricing=args.pricing, seed=args.seed,
                              replications=args.seeds if args.seeds > 1 else 20)
    coeffs = demo_coeffs()
    regions = demo_regions()
    if args.coeffs:
        with open(args.coeffs) as fh:
            coeffs = FreightCoeffs.from_dict(json.load(fh))
    if args.regions:
        with open(args.regions) as fh:
            regions = RegionModel.from_dict(json.load(fh))
    metrics = simulate(cfg, coeffs, regions)
    if args.format == "json":
        _emit(args.out, metrics.to_json() + "\n")
        return 0
    keys = list(metrics.samples)
    rows = []
    for r in range(len(metrics.samples[keys[0]])):
        rows.append([r] + [float(metrics.samples[k][r]) for k in keys])
    rows.append(["mean"] + [metrics.mean(k) for k in keys])
    rows.append(["half_width"] + [metrics.half_width(k) for k in keys])
    _emit(args.out, _csv(_provenance(vars(args), cfg.seed),
                         ["replication"] + keys, rows))
    return 0


def cmd_condition_scatter(args) -> int:
    """Sampled first-order-condition checks: does delta-kappa above the
    size threshold predict a positive exact improvement?"""
    rng = np.random.default_rng(args.seed)
    grid = _parse_grid(args.lambda_grid)
    draws = []
    for k in range(args.samples):
        draws.append(
            (
                float(rng.choice(grid)),
                2 if k % 2 == 0 else 3,
                rng.uniform(0.0, 2.0, 5),
                float(rng.uniform(0.5, 1.5)),
            )
        )

    def one(draw):
        lam, n_bundle, qs, mult = draw
        table = {(j,): float(qs[j]) for j in range(5)}
        members = tuple(range(n_bundle))
        bundle_q = float(mult * qs[:n_bundle].sum())
        for perm in itertools.permutations(members):
            table[perm] = bundle_q

        def quality(option, w):
            return table[option.items]

        customer = CustomerModel(types=(0,), arrival_pmf=np.array([1.0]),
                                 price_sensitivity=-1.0, quality=quality)
        inst = MarketInstance(items=tuple(Item(j) for j in range(5)),
                              customer=customer, demand=lam, arrival_prob=args.mu,
                              max_bundles=1, max_bundle_size=n_bundle)
        s = OptionSet((BundleOption(members),) + tuple(
            BundleOption((j,)) for j in range(n_bundle, 5)))
        s0 = singletons(inst)
        v = exact_dp(inst, s).value()
        v0 = exact_dp(inst, s0).value()
        delta_kappa = bundle_q - float(qs[:n_bundle].sum())
        threshold = (math.log(lam) - 1.0) * (n_bundle - 1)
        return [lam, n_bundle, delta_kappa, threshold, v - v0,
                int(delta_kappa >= threshold), int(v > v0)]

    with ThreadPoolExecutor(max_workers=_threads(args)) as ex:
        rows = list(ex.map(one, draws))
    header = ["lambda", "bundle_size", "delta_kappa", "threshold",
              "improvement", "condition_satisfied", "improvement_positive"]
    if args.format == "json":
        _emit(args.out, json.dumps([dict(zip(header, r)) for r in rows],
                                   indent=2, sort_keys=True) + "\n")
    else:
        _emit(args.out, _csv(_provenance(vars(args), args.seed), header, rows))
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="uip",
        description="Unique-items pricing: exact DP, revenue bounds, bundling, simulation",
    )
    parser.add_argument("--version", action="version", version=f"uip {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("exact", help="exact expected revenue of the no-bundle set")
    _add_instance_flags(p)
    _add_common(p)
    p.set_defaults(func=cmd_exact)

    p = sub.add_parser("bounds-table", help="relative errors of the five approximations")
    _add_instance_flags(p)
    _add_common(p)
    p.set_defaults(func=cmd_bounds_table)

    p = sub.add_parser("figure1", help="revenue of three option sets over a demand grid")
    p.add_argument("--lambda-grid", default="0.5:50:25:log")
    _add_common(p)
    p.set_defaults(func=cmd_figure1)

    p = sub.add_parser("bundle", help="column-generation bundling")
    _add_instance_flags(p)
    _add_common(p)
    p.add_argument("--n-gen", type=int, default=50)
    p.add_argument("--n-eval", type=int, default=10)
    p.set_defaults(func=cmd_bundle)

    p = sub.add_parser("greedy", help="greedy bundling")
    _add_instance_flags(p)
    _add_common(p)
    p.add_argument("--value-kind", default="dfa",
                   choices=["dfa", "upper", "fluid", "static"])
    p.set_defaults(func=cmd_greedy)

    p = sub.add_parser("simulate", help="freight marketplace simulation")
    _add_common(p)
    p.add_argument("--config", help="SimConfig JSON file")
    p.add_argument("--coeffs", help="FreightCoeffs JSON file")
    p.add_argument("--regions", help="RegionModel JSON file")
    p.add_argument("--pricing", default="custom", choices=["linear", "custom"])
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("condition-scatter", help="first-order bundling condition samples")
    p.add_argument("--lambda-grid", default="2:30:12:log")
    p.add_argument("--samples", type=int, default=60)
    p.add_argument("--mu", type=float, default=0.1)
    _add_common(p)
    p.set_defaults(func=cmd_condition_scatter)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except UipError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
