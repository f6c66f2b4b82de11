import csv
import json

import numpy as np
import pytest

from hardylab import cli
from hardylab.spectral_core import GridSpec, apply_multiplier, beurling, random_bandlimited, read_field, write_field


def run(tmp_path, *args, config=None, name="out"):
    argv = list(args)
    if config is not None:
        p = tmp_path / f"{name}.ini"
        p.write_text(config)
        argv += ["--config", str(p)]
    out = tmp_path / name
    code = cli.main(argv + ["--out", str(out)])
    return code, out


def report(out):
    with open(out / "report.json", encoding="utf-8") as fh:
        return json.load(fh)


def test_minnorm_on_shipped_instance(tmp_path):
    code, out = run(tmp_path, "minnorm", config="[io]\ninput = shipped:jacobian_n16.hqf\n")
    assert code == 0
    rep = report(out)
    assert set(rep) == {"command", "config_echo", "results", "timings", "version"}
    assert {"energy", "residual"} <= set(rep["results"])
    assert rep["results"]["energy"] == pytest.approx(1.0, abs=1e-3)
    assert rep["config_echo"]["io"]["input"] == "shipped:jacobian_n16.hqf"
    with open(out / "minnorm_history.csv", newline="") as fh:
        rows = list(csv.reader(fh))
    assert rows[0] == ["outer", "rho", "residual", "energy"] and len(rows) > 1
    assert read_field(out / "solution.hqf").grid == GridSpec(2, 16)


def test_unknown_key_rejected(tmp_path, capsys):
    code, out = run(tmp_path, "norms", config="[grid]\nn = 16\nfoo = 1\n")
    assert code == 2
    assert "'foo'" in capsys.readouterr().err
    assert not (out / "report.json").exists()


@pytest.mark.parametrize("config,needle", [
    ("[nonsense]\na = 1\n", "nonsense"),
    ("[grid]\nn = sixteen\n", "sixteen"),
    ("[grid]\nn = 12\n", "power of two"),
    ("[run]\nsubcommand = findim\n", "findim"),
    ("[io]\ninput = missing.hqf\n", "missing.hqf"),
    ("[quantity]\nkind = cubic\n", "cubic"),
    ("not an ini file\n", "malformed"),
])
def test_validation_errors(tmp_path, capsys, config, needle):
    code, _ = run(tmp_path, "quantity", config=config)
    assert code == 2
    assert needle in capsys.readouterr().err


def test_usage_errors():
    assert cli.main([]) == 2
    assert cli.main(["bogus"]) == 2


def test_factorize_corpus_csv(tmp_path):
    code, out = run(tmp_path, "factorize")
    assert code == 0
    with open(out / "factorization.csv", newline="") as fh:
        rows = list(csv.DictReader(fh))
    assert len(rows) == 12
    assert all(float(r["residual_l1"]) <= 1e-6 for r in rows)
    assert (out / "factorization.csv").read_bytes().count(b"\r") == 0


def test_non_convergence_exit_code(tmp_path):
    code, out = run(tmp_path, "minnorm", config="[minnorm]\nmax_outer = 1\nmax_inner = 5\n")
    assert code == 3
    assert report(out)["results"]["converged"] is False


def test_determinism(tmp_path):
    reps = []
    for name in ("a", "b"):
        code, out = run(tmp_path, "quantity", "--seed", "5",
                        config="[grid]\ndim = 2\nn = 16\n[quantity]\nkind = planar_jacobian\n", name=name)
        assert code == 0
        text = (out / "report.json").read_text()
        rep = json.loads(text)
        rep.pop("timings")
        reps.append(json.dumps(rep, sort_keys=True))
        assert text == json.dumps(json.loads(text), sort_keys=True, indent=1, ensure_ascii=False) + "\n"
    assert reps[0] == reps[1]
    assert (tmp_path / "a" / "quantity.hqf").read_bytes() == (tmp_path / "b" / "quantity.hqf").read_bytes()


def test_seed_flag_overrides_config(tmp_path):
    cfg = "[run]\nseed = 1\n[grid]\ndim = 1\nn = 64\n"
    _, a = run(tmp_path, "norms", config=cfg, name="a")
    _, b = run(tmp_path, "norms", "--seed", "2", config=cfg, name="b")
    assert report(a)["config_echo"]["run"]["seed"] == 1
    assert report(b)["config_echo"]["run"]["seed"] == 2
    assert report(a)["results"]["lp"] != report(b)["results"]["lp"]


def test_transform_round_trip(tmp_path):
    g = GridSpec(2, 16)
    f = random_bandlimited(g, np.random.default_rng(0))
    write_field(tmp_path / "in.hqf", f)
    code, out = run(tmp_path, "transform", config="[io]\ninput = in.hqf\n[transform]\nsymbol = beurling\n")
    assert code == 0
    got = read_field(out / "transform.hqf")
    assert np.array_equal(got.values, apply_multiplier(f, beurling()).values)
    assert report(out)["results"]["ratio"] == pytest.approx(1.0, abs=1e-12)


def test_findim_report(tmp_path):
    code, out = run(tmp_path, "findim", config="[findim]\nmodel = simple\nprobes = 1\ntrials = 5\n")
    assert code == 0
    res = report(out)["results"]
    assert res["assumption2"]["violations"] == 0
    assert res["face"]["d"] == 1
    assert json.loads((out / "model.json").read_text())


def test_norms_ladder_csv(tmp_path):
    code, out = run(tmp_path, "norms", config="[grid]\ndim = 1\nn = 128\nperiod = 32\n")
    assert code == 0
    with open(out / "h1_ladder.csv", newline="") as fh:
        vals = [float(r["h1_estimate"]) for r in csv.DictReader(fh)]
    assert vals == sorted(vals)
    assert report(out)["results"]["h1"] == pytest.approx(vals[-1])
