import csv
import io
import json
import math

import pytest

from latskg import cli
from latskg.errors import ConfigError
from latskg.experiments import (config_hash, load_config, resolve_config, run_experiment)
from latskg.flatness import linf_flatness
from latskg.lattice import integer_lattice
from latskg.protocol import achievable_bound, make_source, tradeoff_bound
from latskg.resolvability import ModChannelSpec, rate_gap


def rows_of(report):
    return list(csv.reader(io.StringIO(report.csv_text())))


def run(name, **kw):
    return run_experiment(resolve_config(name, kw.pop("config", None), **kw))


def test_resolve_config_validation():
    with pytest.raises(ConfigError):
        resolve_config("nonsense")
    with pytest.raises(ConfigError):
        resolve_config("tradeoff", seed=-1)
    with pytest.raises(ConfigError):
        resolve_config("tradeoff", seed=2 ** 64)
    with pytest.raises(ConfigError):
        resolve_config("tradeoff", samples=10)
    with pytest.raises(ConfigError):
        resolve_config("tradeoff", {"experiment": "leakage"})
    cfg = resolve_config("reliability", {"chain": {"n": 2, "targets": [0.1, 0.2, 0.8]}}, seed=5)
    assert cfg["chain"]["n"] == 2 and cfg["quantizer"]["sigma_q"] == 0.05 and cfg["seed"] == 5


def test_load_config(tmp_path):
    p = tmp_path / "c.toml"
    p.write_text('seed = 3\nsamples = 200\n[quantizer]\nsigma_q = 0.2\n')
    assert load_config(p) == {"seed": 3, "samples": 200, "quantizer": {"sigma_q": 0.2}}
    p.write_text("seed = = 3")
    with pytest.raises(ConfigError):
        load_config(p)
    with pytest.raises(ConfigError):
        load_config(tmp_path / "missing.toml")


def test_tradeoff_csv():
    rep = run("tradeoff")
    rows = rows_of(rep)
    assert rep.csv_text().splitlines()[0] == "r_p,r_bar_k,sigma_q,achievable_r_k"
    m = make_source(1.0, 1.0, 1.0, math.sqrt(0.75), 0.5)
    s1, s2 = m.sigma_1, m.sigma_2
    cs = math.log(s2 / s1)
    body = [[float(v) for v in r] for r in rows[1:]]
    for r_p, r_bar, sq, ach in body:
        assert r_bar == pytest.approx(tradeoff_bound(s1, s2, r_p), abs=1e-15)
        if 0 < sq < math.inf:
            assert ach == pytest.approx(r_bar, abs=1e-12)
            assert ach == pytest.approx(achievable_bound(s1, s2, sq), abs=1e-15)
    assert body[-2][0] == 20.0 and abs(body[-2][1] - cs) <= 1e-9
    assert math.isinf(body[-1][0]) and body[-1][1] == pytest.approx(cs, abs=1e-15)


def test_reliability_small():
    rep = run("reliability", samples=3000, seed=11)
    e = rep.estimates
    assert e["p_error"]["value"] <= 0.01
    assert 0 <= e["p_error"]["ci_low"] <= e["p_error"]["value"] <= e["p_error"]["ci_high"] <= 1
    assert rep.notes["cell_condition"] == rep.notes["reconciled"]
    assert rep.notes["key_agreements"] >= rep.notes["reconciled"]
    assert rows_of(rep)[0] == ["quantity", "value", "ci_low", "ci_high"]


def test_trivial_key_space():
    cfg = {"chain": {"n": 4, "targets": [0.05, 0.2, 0.8], "k": [2, 1, 1]}}
    rep = run("uniformity", config=cfg, samples=500, flatness_samples=1000)
    assert rep.estimates["key_distance"]["value"] == 0.0
    assert rep.notes["key_space"] == 1


def test_degenerate_leakage():
    cfg = {"chain": {"n": 4, "targets": [0.05, 0.2, 0.8], "k": [1, 1, 1]}}
    rep = run("leakage", config=cfg, samples=100)
    assert rep.estimates["proxy"]["value"] == 0.0 and rep.estimates["leakage_bound"]["value"] == 0.0


def test_flatness_scan_rows():
    cfg = {"flatness": {"n": [1, 2, 4], "points": 7, "metrics": ["linf", "l1"]}}
    rep = run("flatness_scan", config=cfg, samples=2000)
    rows = rows_of(rep)
    assert rows[0] == ["n", "vnr", "metric", "value", "ci"]
    table = {}
    for n, g, metric, value, ci in rows[1:]:
        n, g, value = int(n), float(g), float(value)
        table.setdefault((n, metric), []).append((g, value, float(ci)))
        if metric == "linf":
            sigma = 1 / math.sqrt(g)
            assert value == pytest.approx(linf_flatness(integer_lattice(n), sigma, "theta").value,
                                          rel=1e-10, abs=1e-15)
            if g > 2 * math.pi:
                assert value >= (g / (2 * math.pi)) ** (n / 2) - 1
    for (n, metric), col in table.items():
        gs = [c[0] for c in col]
        assert gs == sorted(gs, reverse=True)
        vals = [c[1] for c in col]
        cis = [c[2] for c in col]
        for a, b, ca, cb in zip(vals, vals[1:], cis, cis[1:]):
            assert b <= a + 3 * math.hypot(ca, cb) + 1e-15


def test_resolvability_rows():
    cfg = {"resolvability": {"n": [2, 4], "codes": 4}}
    rep = run("resolvability", config=cfg, samples=500)
    rows = rows_of(rep)
    assert rows[0] == ["n", "p", "k", "alpha", "delta0", "mean_divergence", "ci", "num_codes"]
    for n, p, k, alpha, d0, mean, ci, codes in rows[1:]:
        n, p, k = int(n), int(p), int(k)
        spec = ModChannelSpec(float(alpha), p, 0.5)
        assert float(alpha) == 2 * math.sqrt(n) / p
        assert float(d0) == pytest.approx(rate_gap(spec, n, spec.alpha ** n * p ** (n - k)).delta0,
                                          abs=1e-12)
        if k == n:
            assert float(mean) <= 3 * float(ci) + 1e-15
        else:
            assert float(d0) >= 0.2


def test_meta_and_determinism(tmp_path):
    a = tmp_path / "a.csv"
    b = tmp_path / "b.csv"
    run("reliability", samples=2000, seed=9).write(a)
    run("reliability", samples=2000, seed=9, workers=3).write(b)
    assert a.read_bytes() == b.read_bytes()
    meta = json.loads((tmp_path / "a.csv.meta.json").read_text())
    assert meta["seed"] == 9 and meta["config_hash"] == config_hash(meta["config"])
    assert "wall_clock_s" in json.loads((tmp_path / "a.csv.timing.json").read_text())


def test_cli_exit_codes(tmp_path, monkeypatch):
    monkeypatch.setenv("SKG_LOG", "error")
    out = tmp_path / "t.csv"
    assert cli.main(["tradeoff", "--out", str(out)]) == 0
    assert out.read_text().startswith("r_p,r_bar_k,sigma_q,achievable_r_k\n")
    assert cli.main(["tradeoff", "--samples", "5", "--out", str(out)]) == 2
    bad = tmp_path / "bad.toml"
    bad.write_text("[source]\nsigma_x = 1.0\nrho_xy = 0.5\nrho_xz = 0.6\nsigma_y = 1\nsigma_z = 1\n")
    assert cli.main(["tradeoff", "--config", str(bad), "--out", str(out)]) == 2
    big = tmp_path / "big.toml"
    big.write_text("[chain]\nn = 13\ntargets = [0.05, 0.2, 0.8]\n")
    assert cli.main(["reliability", "--config", str(big), "--out", str(out)]) == 3
    with pytest.raises(SystemExit) as exc:
        cli.main(["tradeoff", "--seed", "-4"])
    assert exc.value.code == 2


def test_cli_seed_recorded(tmp_path, monkeypatch):
    monkeypatch.setenv("SKG_LOG", "debug")
    out = tmp_path / "r.csv"
    assert cli.main(["reliability", "--seed", "0xFFFFFFFFFFFFFFFF", "--samples", "200",
                     "--out", str(out)]) == 0
    assert json.loads((tmp_path / "r.csv.meta.json").read_text())["seed"] == 2 ** 64 - 1


def test_leakage_bound_trend():
    bounds = []
    for rho_xz in (0.9, 0.6, 0.2):
        cfg = {"source": {"sigma_x": 2.2, "sigma_y": 1.0, "sigma_z": 1.0, "rho_xy": 0.99,
                          "rho_xz": rho_xz}}
        rep = run("leakage", config=cfg, samples=150, flatness_samples=2000, seed=2)
        bounds.append(rep.estimates["leakage_bound"]["value"])
        assert rep.notes["sigma_2"] == pytest.approx(2.2 * math.sqrt(1 - rho_xz ** 2))
    assert bounds[0] > bounds[1] > bounds[2]
