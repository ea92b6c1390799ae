"""Batch experiments: configuration, seeding, Monte-Carlo loops and reports.

Every experiment reads a plain dict (normally loaded from TOML), draws all
randomness from one seeded ``numpy`` generator through spawned sub-streams,
and returns an :class:`ExperimentReport` whose CSV rows and metadata are
byte-for-byte reproducible from ``(config, seed)``.
"""
from concurrent.futures import ThreadPoolExecutor
import copy
from dataclasses import dataclass, field
import hashlib
import io
import json
import logging
import math
from pathlib import Path
import sys
import time

import numpy as np

from . import __version__
from .construction import build_chain, chain_from_json, choose_prime, random_generator
from .errors import ConfigError, KeySpaceTooLarge, NumericError
from .estimates import (Z95, chunk_sizes, clopper_pearson, mean_estimate, plugin_vd_slack,
                        variational_distance)
from .flatness import kl_flatness, l1_flatness, linf_flatness, zn_scaled_flatness
from .lattice import integer_lattice
from .protocol import (QuantizerConfig, achievable_bound, alice_encode, conditional_key_distance,
                       coset_split, dither, distance_to_uniform, eve_key_posterior, flatness_roles, geometry,
                       leakage_bound, make_source, run_rounds, sample_source, secret_key_capacity,
                       sigma_q_for_rate, tradeoff_bound)
from .resolvability import ModChannelSpec, rate_gap, resolvability_divergence

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

log = logging.getLogger("latskg")

EXPERIMENTS = ("reliability", "uniformity", "leakage", "tradeoff", "flatness_scan", "resolvability")
MIN_SAMPLES = 100
MAX_KEY_SPACE = 10 ** 4

HEADERS = {
    "reliability": ("quantity", "value", "ci_low", "ci_high"),
    "uniformity": ("quantity", "value", "ci_low", "ci_high"),
    "leakage": ("quantity", "value", "ci_low", "ci_high"),
    "tradeoff": ("r_p", "r_bar_k", "sigma_q", "achievable_r_k"),
    "flatness_scan": ("n", "vnr", "metric", "value", "ci"),
    "resolvability": ("n", "p", "k", "alpha", "delta0", "mean_divergence", "ci", "num_codes"),
}


def _source(sigma_x, sigma_1, rho_xz):
    return {"sigma_x": sigma_x, "sigma_y": 1.0, "sigma_z": 1.0,
            "rho_xy": math.sqrt(1 - (sigma_1 / sigma_x) ** 2), "rho_xz": rho_xz}


# a fine L1 (k1 = n) keeps the rounding error far inside the L2 cell
_RELIABLE = {"chain": {"n": 4, "targets": [0.01, 0.2, 0.8]},
             "source": _source(1.0, 0.05, 0.5), "quantizer": {"sigma_q": 0.05}}
# sigma_q smooths L1 and sigma_2 smooths L3
_FLAT = {"chain": {"n": 4, "targets": [0.05, 0.2, 0.8]},
         "source": _source(2.2, 0.15, 0.3), "quantizer": {"sigma_q": 0.5}}

DEFAULTS = {
    "reliability": {**_RELIABLE, "samples": 100_000},
    "uniformity": {**_FLAT, "samples": 100_000, "flatness_samples": 100_000},
    "leakage": {**_FLAT, "samples": 400, "flatness_samples": 100_000},
    "tradeoff": {"source": _source(1.0, 0.5, 0.5), "samples": 100,
                 "tradeoff": {"r_p_max": 20.0, "points": 41}},
    "flatness_scan": {"samples": 20_000,
                      "flatness": {"family": "zn", "n": [1, 2, 4], "alpha": 1.0,
                                   "gamma_min": math.pi, "gamma_max": 4 * math.pi * math.e,
                                   "points": 9, "metrics": ["linf", "l1", "kl"]}},
    "resolvability": {"samples": 4000,
                      "resolvability": {"n": [2, 4, 6], "sigma": 0.5, "delta_min": 0.2,
                                        "codes": 20}},
}


# ---------------------------------------------------------------------------
# configuration


def _merge(base, extra):
    out = copy.deepcopy(base)
    for key, value in extra.items():
        if isinstance(value, dict) and isinstance(out.get(key), dict):
            out[key] = _merge(out[key], value)
        else:
            out[key] = copy.deepcopy(value)
    return out


def load_config(path):
    try:
        with open(path, "rb") as fh:
            return tomllib.load(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"invalid TOML in {path}: {exc}") from exc


def resolve_config(experiment, config=None, **overrides):
    """Defaults for ``experiment`` updated by ``config`` and then by non-None overrides."""
    if experiment not in EXPERIMENTS:
        raise ConfigError(f"unknown experiment {experiment!r}")
    config = dict(config or {})
    named = config.pop("experiment", experiment)
    if named != experiment:
        raise ConfigError(f"config is for {named!r}, not {experiment!r}")
    cfg = _merge(DEFAULTS[experiment], config)
    cfg.update({k: v for k, v in overrides.items() if v is not None})
    cfg["experiment"] = experiment
    cfg.setdefault("seed", 0)
    seed = cfg["seed"]
    if not isinstance(seed, int) or not 0 <= seed < 2 ** 64:
        raise ConfigError("seed must be an unsigned 64-bit integer")
    samples = cfg.get("samples")
    if not isinstance(samples, int) or samples < MIN_SAMPLES:
        raise ConfigError(f"samples must be an integer >= {MIN_SAMPLES}")
    return cfg


def config_hash(cfg):
    text = json.dumps(cfg, sort_keys=True, separators=(",", ":"), default=str)
    return hashlib.sha256(text.encode()).hexdigest()


def _section(cfg, name):
    sec = cfg.get(name)
    if not isinstance(sec, dict):
        raise ConfigError(f"missing [{name}] section")
    return sec


def _build_chain(cfg, rng):
    sec = _section(cfg, "chain")
    try:
        if "file" in sec:
            return chain_from_json(Path(sec["file"]).read_text())
        return build_chain(int(sec["n"]), tuple(sec["targets"]), rng, p=sec.get("p"), k=sec.get("k"))
    except (KeyError, TypeError, ValueError, OSError) as exc:
        raise ConfigError(f"bad [chain] section: {exc}") from exc


def _quantizer(cfg):
    src = _section(cfg, "source")
    q = _section(cfg, "quantizer")
    try:
        model = make_source(src["sigma_x"], src["sigma_y"], src["sigma_z"], src["rho_xy"],
                            src["rho_xz"], src.get("rho_yz"))
        return QuantizerConfig(float(q["sigma_q"]), model, int(cfg["seed"]))
    except (KeyError, TypeError) as exc:
        raise ConfigError(f"bad source or quantizer section: {exc}") from exc


# ---------------------------------------------------------------------------
# reports


@dataclass
class ExperimentReport:
    experiment: str
    config: dict
    rows: list
    estimates: dict = field(default_factory=dict)
    notes: dict = field(default_factory=dict)
    wall_clock: float = 0.0

    @property
    def header(self):
        return HEADERS[self.experiment]

    def csv_text(self):
        buf = io.StringIO()
        buf.write(",".join(self.header) + "\n")
        for row in self.rows:
            buf.write(",".join(_fmt(v) for v in row) + "\n")
        return buf.getvalue()

    def meta(self):
        # the worker count changes nothing in the results, so it stays out of the echo and hash
        config = {k: v for k, v in self.config.items() if k != "workers"}
        return {
            "experiment": self.experiment,
            "seed": config["seed"],
            "config_hash": config_hash(config),
            "config": config,
            "version": __version__,
            "estimates": self.estimates,
            "notes": self.notes,
        }

    def write(self, out):
        out = Path(out)
        out.parent.mkdir(parents=True, exist_ok=True)
        out.write_text(self.csv_text())
        Path(f"{out}.meta.json").write_text(json.dumps(_jsonable(self.meta()), indent=2,
                                                      sort_keys=True) + "\n")
        Path(f"{out}.timing.json").write_text(json.dumps(
            {"wall_clock_s": self.wall_clock, "workers": int(self.config.get("workers", 1))}) + "\n")


def _fmt(v):
    if isinstance(v, (bool, np.bool_)):
        return str(bool(v)).lower()
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return "%.17g" % float(v)
    return str(v)


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        v = float(obj)
        return v if math.isfinite(v) else str(v)
    if isinstance(obj, np.bool_):
        return bool(obj)
    return obj


def _est(value, low, high):
    return {"value": float(value), "ci_low": float(low), "ci_high": float(high)}


def _quantity_rows(estimates):
    return [(name, e["value"], e["ci_low"], e["ci_high"]) for name, e in estimates.items()]


def _parallel(func, items, workers):
    if workers > 1 and len(items) > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            return list(pool.map(func, items))
    return [func(item) for item in items]


# ---------------------------------------------------------------------------
# experiments


def run_reliability(cfg):
    """Key disagreement rate and the decoding-cell check, round by round."""
    root = np.random.default_rng(cfg["seed"])
    chain_rng, run_rng = root.spawn(2)
    chain = _build_chain(cfg, chain_rng)
    q = _quantizer(cfg)
    sizes = chunk_sizes(cfg["samples"])
    streams = run_rng.spawn(len(sizes))

    def work(job):
        sub, m = job
        b = run_rounds(chain, q, m, sub)
        zero = np.all(b.error_coords == 0, axis=1)
        if not (np.array_equal(zero, b.in_cell) and np.array_equal(zero, b.reconciled)):
            raise NumericError("decoding-cell conditions disagree")
        return int(b.success.sum()), int(b.reconciled.sum()), int(zero.sum())

    parts = _parallel(work, list(zip(streams, sizes)), int(cfg.get("workers", 1)))
    total = int(cfg["samples"])
    success, reconciled, in_cell = (sum(p[i] for p in parts) for i in range(3))
    errors = total - success
    lo, hi = clopper_pearson(errors, total)
    r_lo, r_hi = clopper_pearson(reconciled, total)
    est = {
        "p_error": _est(errors / total, lo, hi),
        "reconciled_fraction": _est(reconciled / total, r_lo, r_hi),
        "cell_condition_fraction": _est(in_cell / total, r_lo, r_hi),
    }
    log.info("reliability: %d errors in %d rounds", errors, total)
    notes = {"rounds": total, "key_agreements": success, "reconciled": reconciled,
             "cell_condition": in_cell, "k": list(chain.k), "p": chain.p}
    return ExperimentReport("reliability", cfg, _quantity_rows(est), est, notes)


def _roles(cfg, chain, q, rng):
    override = cfg["quantizer"].get("sigma_2")
    return flatness_roles(chain, q, int(cfg.get("flatness_samples", 100_000)), rng, override)


def run_uniformity(cfg):
    """Distance of the empirical key law from uniform, against the flatness budget."""
    root = np.random.default_rng(cfg["seed"])
    chain_rng, run_rng, flat_rng = root.spawn(3)
    chain = _build_chain(cfg, chain_rng)
    q = _quantizer(cfg)
    g = geometry(chain)
    size = g.key_size
    if size > MAX_KEY_SPACE:
        raise KeySpaceTooLarge(f"key space of {size} is too large to histogram")
    sizes = chunk_sizes(cfg["samples"])
    streams = run_rng.spawn(len(sizes))

    def work(job):
        sub, m = job
        x, _, _ = sample_source(q.source, chain.n, sub, size=m)
        u = dither(chain, sub, size=m)
        _, _, k = alice_encode(chain, q, x, u, sub)
        return np.bincount(g.q23.index_of(k), minlength=size)

    counts = sum(_parallel(work, list(zip(streams, sizes)), int(cfg.get("workers", 1))))
    total = int(cfg["samples"])
    p_hat = counts / total
    uniform = np.full(size, 1.0 / size)
    dist = variational_distance(p_hat, uniform)
    slack = plugin_vd_slack(uniform, total) if size > 1 else 0.0
    roles = _roles(cfg, chain, q, flat_rng)
    budget, budget_ci = roles.budget
    nz = p_hat[p_hat > 0]
    entropy_gap = abs(math.log(size) + float(np.sum(nz * np.log(nz))))
    est = {
        "key_distance": _est(dist, max(0.0, dist - slack), dist + slack),
        "budget": _est(budget, budget - budget_ci, budget + budget_ci),
        "entropy_gap": _est(entropy_gap, entropy_gap, entropy_gap),
        "entropy_gap_bound": _est(*([leakage_bound(dist, size)] * 3)),
        "eps_l1_fine": _est(roles.eps_l1_fine.value, roles.eps_l1_fine.low, roles.eps_l1_fine.high),
        "eps_l1_coarse": _est(roles.eps_l1_coarse.value, roles.eps_l1_coarse.low,
                              roles.eps_l1_coarse.high),
    }
    violated = dist > budget + budget_ci + 3 * slack
    if violated:
        log.warning("key distance %.4g exceeds budget %.4g plus slack", dist, budget)
    notes = {"key_space": size, "slack_unit": slack, "violation": bool(violated),
             "budget_vacuous": bool(budget >= 2.0), "vnr_middle": roles.vnr_middle,
             "awgn_margin_met": roles.awgn_margin_met, "k": list(chain.k), "p": chain.p}
    return ExperimentReport("uniformity", cfg, _quantity_rows(est), est, notes)


def run_leakage(cfg):
    """Eve's average conditional distance from a uniform key and the converted leakage bound."""
    root = np.random.default_rng(cfg["seed"])
    chain_rng, run_rng, flat_rng = root.spawn(3)
    chain = _build_chain(cfg, chain_rng)
    q = _quantizer(cfg)
    g = geometry(chain)
    sigma_2 = float(cfg["quantizer"].get("sigma_2", q.source.sigma_2))
    total = int(cfg["samples"])
    if g.q13.index == 1:
        zero = _est(0.0, 0.0, 0.0)
        est = {k: zero for k in ("proxy", "d_av", "d_av_uniform_weights", "leakage_bound", "budget")}
        return ExperimentReport("leakage", cfg, _quantity_rows(est), est, {"cosets": 1})
    _, _, z = sample_source(q.source, chain.n, run_rng, size=total)
    u = dither(chain, run_rng, size=total)
    post = eve_key_posterior(chain, q, sigma_2, z, u)
    proxy = mean_estimate(distance_to_uniform(post))
    # key marginal averaged over Eve's observations
    _, k_idx = coset_split(chain)
    p_k = np.bincount(k_idx, weights=post.mean(axis=0), minlength=g.key_size)
    d_w = mean_estimate(conditional_key_distance(chain, post, p_k))
    d_u = mean_estimate(conditional_key_distance(chain, post))
    roles = _roles(cfg, chain, q, flat_rng)
    budget, budget_ci = roles.budget
    bound = leakage_bound(d_w.value, g.key_size)
    est = {
        "proxy": _est(proxy.value, proxy.low, proxy.high),
        "d_av": _est(d_w.value, d_w.low, d_w.high),
        "d_av_uniform_weights": _est(d_u.value, d_u.low, d_u.high),
        "leakage_bound": _est(bound, leakage_bound(max(d_w.low, 0.0), g.key_size),
                              leakage_bound(d_w.high, g.key_size)),
        "budget": _est(budget, budget - budget_ci, budget + budget_ci),
    }
    notes = {"cosets": g.q13.index, "key_space": g.key_size, "sigma_2": sigma_2,
             "observations": total, "budget_vacuous": bool(budget >= 2.0), "k": list(chain.k),
             "p": chain.p}
    return ExperimentReport("leakage", cfg, _quantity_rows(est), est, notes)


def run_tradeoff(cfg):
    """The public-rate / key-rate curve and the matched quantizer along it."""
    src = _section(cfg, "source")
    sec = _section(cfg, "tradeoff")
    model = make_source(src["sigma_x"], src["sigma_y"], src["sigma_z"], src["rho_xy"],
                        src["rho_xz"], src.get("rho_yz"))
    s1, s2 = model.sigma_1, model.sigma_2
    if "r_p" in sec:
        grid = [float(v) for v in sec["r_p"]]
    else:
        grid = list(np.linspace(0.0, float(sec["r_p_max"]), int(sec["points"])))
    if not grid or any(v < 0 for v in grid):
        raise ConfigError("rate grid must be nonempty and non-negative")
    rows = []
    for r in grid:
        sq = sigma_q_for_rate(s1, r)
        ach = 0.0 if math.isinf(sq) else (secret_key_capacity(s1, s2) if sq == 0
                                          else achievable_bound(s1, s2, sq))
        rows.append((r, tradeoff_bound(s1, s2, r), sq, ach))
    cs = secret_key_capacity(s1, s2)
    rows.append((math.inf, cs, 0.0, cs))
    est = {"c_s": _est(cs, cs, cs)}
    return ExperimentReport("tradeoff", cfg, rows, est, {"sigma_1": s1, "sigma_2": s2})


def _scan_lattices(cfg, sec, rng):
    family = sec.get("family", "zn")
    if family == "zn":
        alpha = float(sec.get("alpha", 1.0))
        return [(int(n), f"zn{int(n)}", integer_lattice(int(n), alpha), alpha)
                for n in sec["n"]]
    if family == "chain":
        chain = _build_chain(cfg, rng)
        return [(chain.n, f"lattice{i + 1}", L, None) for i, L in enumerate(chain.lattices)]
    raise ConfigError(f"unknown lattice family {family!r}")


def run_flatness_scan(cfg):
    """Flatness factors over a VNR grid; rows ordered by increasing sigma."""
    sec = _section(cfg, "flatness")
    root = np.random.default_rng(cfg["seed"])
    chain_rng, mc_rng = root.spawn(2)
    gammas = np.geomspace(float(sec["gamma_min"]), float(sec["gamma_max"]), int(sec["points"]))[::-1]
    metrics = list(sec.get("metrics", ["linf", "l1", "kl"]))
    unknown = set(metrics) - {"linf", "l1", "kl"}
    if unknown or not metrics or not len(gammas):
        raise ConfigError(f"bad flatness metrics or grid: {sorted(unknown)}")
    samples = int(cfg["samples"])
    rows = []
    lattices = _scan_lattices(cfg, sec, chain_rng)
    streams = iter(mc_rng.spawn(len(lattices) * len(metrics) * len(gammas)))
    for n, name, L, alpha in lattices:
        for metric in metrics:
            label = metric if name.startswith("zn") else f"{name}/{metric}"
            for gamma in gammas:
                sigma = L.volume ** (1.0 / n) / math.sqrt(gamma)
                sub = next(streams)
                if metric == "linf":
                    value = (zn_scaled_flatness(alpha, sigma, n).value if alpha is not None
                             else linf_flatness(L, sigma).value)
                    ci = 0.0
                elif metric == "l1":
                    method = "quadrature" if n <= 2 else "monte_carlo"
                    rep = l1_flatness(L, sigma, method=method, budget=samples, rng=sub)
                    value, ci = rep.value, rep.ci_halfwidth
                else:
                    method = "quadrature" if n <= 2 else "monte_carlo"
                    rep = kl_flatness(L, sigma, samples=samples, rng=sub, method=method)
                    value, ci = rep.value, rep.ci_halfwidth
                rows.append((n, float(gamma), label, float(value), float(ci)))
    return ExperimentReport("flatness_scan", cfg, rows, {}, {"family": sec.get("family", "zn")})


def smallest_code_dimension(spec, n, delta_min):
    """Smallest ``k`` whose Construction-A volume gives a rate gap of at least ``delta_min``."""
    for k in range(n + 1):
        gap = rate_gap(spec, n, spec.alpha ** n * spec.p ** (n - k))
        if gap.delta0 >= delta_min:
            return k, gap
    raise ConfigError(f"no code dimension reaches a rate gap of {delta_min} at n = {n}")


def run_resolvability(cfg):
    """Average code-induced divergence at the standard scaling, one row per block length."""
    sec = _section(cfg, "resolvability")
    root = np.random.default_rng(cfg["seed"])
    ns = [int(n) for n in sec["n"]]
    codes = int(sec.get("codes", 20))
    if not ns or codes < 2:
        raise ConfigError("need a nonempty n grid and at least two codes")
    sigma = float(sec["sigma"])
    samples = int(cfg["samples"])
    workers = int(cfg.get("workers", 1))
    rows = []
    per_n = root.spawn(len(ns))
    for n, stream in zip(ns, per_n):
        p, _ = choose_prime(n, sec.get("p"))
        alpha = 2 * math.sqrt(n) / p
        spec = ModChannelSpec(alpha, p, sigma)
        k, gap = smallest_code_dimension(spec, n, float(sec["delta_min"]))

        def one(sub):
            G = random_generator(n, k, p, sub)
            return resolvability_divergence(spec, n, G.T, samples, sub).value

        vals = np.array(_parallel(one, stream.spawn(codes), workers))
        mean = float(vals.mean())
        ci = Z95 * float(vals.std(ddof=1)) / math.sqrt(codes)
        rows.append((n, p, k, alpha, gap.delta0, mean, ci, codes))
        control = resolvability_divergence(spec, n, random_generator(n, n, p, stream).T, samples,
                                           stream)
        full = rate_gap(spec, n, alpha ** n)
        rows.append((n, p, n, alpha, full.delta0, control.value, control.ci, 1))
        log.info("resolvability n=%d k=%d: %.4g +- %.2g", n, k, mean, ci)
    return ExperimentReport("resolvability", cfg, rows, {}, {"sigma": sigma})


RUNNERS = {
    "reliability": run_reliability,
    "uniformity": run_uniformity,
    "leakage": run_leakage,
    "tradeoff": run_tradeoff,
    "flatness_scan": run_flatness_scan,
    "resolvability": run_resolvability,
}


def run_experiment(cfg):
    start = time.perf_counter()
    report = RUNNERS[cfg["experiment"]](cfg)
    report.wall_clock = time.perf_counter() - start
    return report
