import csv
import json

import numpy as np
import pytest

from mmfg.cli import main
from mmfg.io import emit_csv, format_value, parse_config, ConfigError
from mmfg.model import random_model

SMALL = {"grid": {"n_steps": 40}, "mc": {"n_paths": 6, "seed": 3}}


def write(tmp_path, data, name="cfg.json"):
    p = tmp_path / name
    p.write_text(json.dumps(data))
    return str(p)


def example_cfg(**experiment):
    return {"example": {"a": 1, "b": 1, "c": 1, "q": 1}, **SMALL, "experiment": experiment}


def model_cfg(d=1, **experiment):
    m = random_model(np.random.default_rng(4), 1, d).to_dict()
    return {"model": m, **SMALL, "experiment": experiment}


def run(tmp_path, cmd, cfg, out="out", extra=()):
    path = write(tmp_path, cfg)
    code = main([cmd, "--config", path, "--out", str(tmp_path / out), *extra])
    return code, tmp_path / out


def summary(out):
    return json.loads((out / "summary.json").read_text())


def test_solve_example(tmp_path):
    code, out = run(tmp_path, "solve", example_cfg())
    assert code == 0
    s = summary(out)
    assert set(s) == {"config", "verdicts", "metrics", "timings"}
    assert s["timings"] is None
    assert all(s["verdicts"].values())
    assert s["metrics"]["aprime"]["satisfied"]
    assert len(s["metrics"]["S_blocks"]["S11"]) == 41
    assert (out / "riccati.csv").read_text().startswith("t,S_0_0,S_0_1")


def test_invalid_R_exits_2(tmp_path, capsys):
    cfg = model_cfg()
    cfg["model"]["R"] = [[0.0]]
    code, _ = run(tmp_path, "validate", cfg)
    assert code == 2
    assert "R not positive definite" in capsys.readouterr().err
    code, _ = run(tmp_path, "solve", cfg, out="o2")
    assert code == 2


def test_unreadable_config_exits_2(tmp_path, capsys):
    bad = tmp_path / "bad.json"
    bad.write_text('{"model": {\n  "A0": [[1]],\n}')
    assert main(["solve", "--config", str(bad), "--out", str(tmp_path / "o")]) == 2
    assert "bad.json:3" in capsys.readouterr().err
    assert main(["solve", "--config", str(tmp_path / "missing.json")]) == 2
    assert main(["solve", "--config", write(tmp_path, {"modle": {}}, "typo.json")]) == 2


def test_numerical_failure_exits_3(tmp_path, monkeypatch):
    import mmfg.cli as cli
    from mmfg.riccati import AssumptionViolation

    def boom(*a, **k):
        raise AssumptionViolation("singular", node=3, time=0.5, cond=1e20)
    monkeypatch.setattr(cli, "solve", boom)
    code, _ = run(tmp_path, "solve", example_cfg())
    assert code == 3


def test_io_failure_exits_4(tmp_path):
    blocker = tmp_path / "file"
    blocker.write_text("x")
    cfg = write(tmp_path, example_cfg())
    code = main(["solve", "--config", cfg, "--out", str(blocker / "sub")])
    assert code == 4


def test_simulate_writes_trajectories(tmp_path):
    code, out = run(tmp_path, "simulate", model_cfg(N=5, keep_minors=2))
    assert code == 0
    rows = list(csv.reader((out / "trajectories.csv").open()))
    assert rows[0] == ["path", "t", "series", "component", "value"]
    # X0, Xbar, X_1, X_2, u0, u_1, u_2 with one component each
    assert len(rows) - 1 == 6 * 41 * 7
    s = summary(out)
    assert {"J0", "J1", "J_minor_mean"} <= set(s["metrics"]["costs"])


@pytest.mark.parametrize("cmd,cfg,files", [
    ("chaos", example_cfg(N_list=[2, 4, 8]), ["chaos.csv"]),
    ("measure-rate", example_cfg(N_list=[2, 4, 8], ref_factor=2), ["measure_rate.csv"]),
    ("nash", model_cfg(N_list=[2, 4]), ["nash.csv"]),
    ("example6", example_cfg(N_list=[2, 4, 8]), ["coefficients.csv", "convergence.csv"]),
])
def test_experiments_are_byte_identical(tmp_path, monkeypatch, cmd, cfg, files):
    code, a = run(tmp_path, cmd, cfg, out="a")
    assert code == 0
    monkeypatch.setenv("MMFG_THREADS", "3")
    import mmfg.sim as sim
    monkeypatch.setattr(sim, "CHUNK_BYTES", 1)
    code, b = run(tmp_path, cmd, cfg, out="b")
    assert code == 0
    for f in files + ["summary.json"]:
        assert (a / f).read_bytes() == (b / f).read_bytes(), f
    assert summary(a)["config"]["mc"]["seed"] == 3


def test_seed_override_changes_results(tmp_path):
    cfg = example_cfg(N_list=[2, 4, 8])
    _, a = run(tmp_path, "chaos", cfg, out="a")
    _, b = run(tmp_path, "chaos", cfg, out="b", extra=["--seed", "99"])
    assert summary(b)["config"]["mc"]["seed"] == 99
    assert (a / "chaos.csv").read_bytes() != (b / "chaos.csv").read_bytes()


def test_timings_opt_in(tmp_path):
    _, out = run(tmp_path, "validate", example_cfg(), extra=["--timings"])
    assert summary(out)["timings"]["wall_seconds"] >= 0


def test_emit_csv(tmp_path):
    p = tmp_path / "t.csv"
    emit_csv(["a", "b"], [], p)
    assert p.read_bytes() == b"a,b\n"
    emit_csv(["x", "n", "flag"], [[0.1, 3, True]], p)
    text = p.read_bytes().decode()
    assert "\r" not in text
    value = text.splitlines()[1].split(",")[0]
    assert value.startswith("0.1") and float(value) == 0.1
    with pytest.raises(ValueError):
        emit_csv(["a"], [[1, 2]], p)


def test_format_value_round_trips():
    rng = np.random.default_rng(0)
    for x in rng.standard_normal(200) * 10.0 ** rng.integers(-30, 30, 200):
        assert float(format_value(x)) == x


def test_parse_config_errors():
    with pytest.raises(ConfigError):
        parse_config({"example": {}}, "launch")
    with pytest.raises(ConfigError):
        parse_config({}, "solve")
    with pytest.raises(ConfigError):
        parse_config({"example": {}, "mc": {"n_paths": 1}}, "chaos")
    with pytest.raises(ConfigError):
        parse_config({"example": {}, "grid": {"T": 3}}, "solve")
    cfg = parse_config({}, "example6")
    assert cfg.example is not None and cfg.n_steps == 200
