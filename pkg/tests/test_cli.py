import csv
import hashlib
import json
import math
from pathlib import Path

import numpy as np
import pytest
from scipy import stats

from lgm_cmprsk.cli import main
from lgm_cmprsk.config import load_config, parse_config
from lgm_cmprsk.data import load_longitudinal_csv, load_survival_csv
from lgm_cmprsk.errors import ConfigError
from lgm_cmprsk.report import DIAGNOSTIC_KEYS

ROOT = Path(__file__).resolve().parents[1]

SMALL = """\
[simulate]
n_individuals = {n}
seed = 3

[model]
preset = "count_competing_risks"

[model.args]
n_groups = 15
"""


def _cfg(tmp_path, text, name="run.toml"):
    p = tmp_path / name
    p.write_text(text)
    return p


def _digest(p):
    return hashlib.sha256(p.read_bytes()).hexdigest()


@pytest.fixture(scope="module")
def small_run(tmp_path_factory):
    d = tmp_path_factory.mktemp("small")
    conf = _cfg(d, SMALL.format(n=150))
    assert main(["simulate", "--config", str(conf), "--out", str(d)]) == 0
    assert main(["fit", "--config", str(conf), "--out", str(d)]) == 0
    return d


def test_outputs_exist_and_reparse(small_run):
    d = small_run
    for f in ("longitudinal.csv", "survival.csv", "truth.json", "summary.json", "latent.csv", "hyper.csv",
              "curves.csv", "timing.json"):
        assert (d / f).is_file(), f
    assert len(load_survival_csv(d / "survival.csv", 3)) == 150
    assert len(load_longitudinal_csv(d / "longitudinal.csv", "poisson")) > 1500
    truth = json.loads((d / "truth.json").read_text())
    assert truth["parameters"]["gamma"] == [0.3, -0.1, 0.2]


def test_summary_schema(small_run):
    doc = json.loads((small_run / "summary.json").read_text())
    assert set(doc) == {"schema_version", "backend", "model", "hyperparameters", "fixed_effects", "theta_mode",
                        "log_evidence", "diagnostics", "options"}
    assert set(doc["diagnostics"]) == set(DIAGNOSTIC_KEYS)
    for s in doc["hyperparameters"].values():
        assert set(s) == {"mean", "sd", "q0.025", "q0.5", "q0.975", "prob_negative"}
    # log-scale hyperparameters carry an explicit null for prob_negative
    assert doc["hyperparameters"]["tau[u]"]["prob_negative"] is None
    assert doc["hyperparameters"]["gamma[cause2<-u]"]["prob_negative"] is not None


def test_hyper_csv_rows(small_run):
    with (small_run / "hyper.csv").open() as fh:
        rows = {r["name"]: r for r in csv.DictReader(fh)}
    for name in ("sigma[u]", "tau[trend]", "gamma[cause1<-u]", "gamma[cause2<-u]", "gamma[cause3<-u]",
                 "cause1:Age", "cause2:Age", "cause3:Age"):
        r = rows[name]
        vals = [float(r[k]) for k in ("mean", "sd", "q0.025", "q0.5", "q0.975")]
        assert all(math.isfinite(v) for v in vals)
        assert vals[2] <= vals[3] <= vals[4]


def test_curves_consistent(small_run):
    with (small_run / "curves.csv").open() as fh:
        rows = list(csv.DictReader(fh))
    kinds = {r["curve"] for r in rows}
    assert kinds == {"mean_trajectory", "cumulative_incidence", "overall_survival"}
    total = {}
    for r in rows:
        if r["curve"] != "mean_trajectory":
            total[r["x"]] = total.get(r["x"], 0.0) + float(r["value"])
    assert max(abs(v - 1) for v in total.values()) < 2e-4


def test_determinism(tmp_path):
    conf = _cfg(tmp_path, SMALL.format(n=80))
    digests = []
    for k in (1, 2):
        d = tmp_path / f"r{k}"
        assert main(["simulate", "--config", str(conf), "--out", str(d)]) == 0
        assert main(["fit", "--config", str(conf), "--out", str(d), "--threads", "1"]) == 0
        digests.append({f.name: _digest(f) for f in sorted(d.iterdir()) if f.name != "timing.json"})
    assert digests[0] == digests[1]


def test_single_individual(tmp_path):
    conf = _cfg(tmp_path, "[simulate]\nn_individuals = 1\n")
    assert main(["simulate", "--config", str(conf), "--out", str(tmp_path)]) == 0
    assert len(load_survival_csv(tmp_path / "survival.csv", 3)) == 1


def test_missing_input_exit_code(tmp_path, capsys):
    conf = _cfg(tmp_path, '[data]\nlongitudinal = "nope.csv"\nsurvival = "s.csv"\n[model]\npreset = '
                          '"count_competing_risks"\n')
    assert main(["fit", "--config", str(conf), "--out", str(tmp_path)]) == 2
    assert "nope.csv" in capsys.readouterr().err


def test_usage_errors(tmp_path):
    assert main(["bogus"]) == 2
    assert main(["fit"]) == 2
    conf = _cfg(tmp_path, SMALL.format(n=5))
    assert main(["fit", "--config", str(conf), "--threads", "0"]) == 2
    bad = _cfg(tmp_path, "[simulate]\nn_individuals = 5\ncolour = 1\n", "bad.toml")
    assert main(["simulate", "--config", str(bad), "--out", str(tmp_path)]) == 2
    assert main(["simulate", "--config", str(tmp_path / "absent.toml")]) == 2


def test_numerical_failure_exit_code(tmp_path):
    conf = _cfg(tmp_path, SMALL.format(n=40) + "\n[options]\nmax_evals = 5\n")
    assert main(["simulate", "--config", str(conf), "--out", str(tmp_path)]) == 0
    assert main(["fit", "--config", str(conf), "--out", str(tmp_path)]) == 1


def test_conjugate_micro_model_evidence(tmp_path):
    y = np.array([0.5, 1.7, -0.3, 0.9, 1.2])
    ids = [1, 1, 2, 3, 3]
    (tmp_path / "l.csv").write_text("id,time,value\n" + "".join(f"{i},0,{float(v)!r}\n" for i, v in zip(ids, y)))
    (tmp_path / "s.csv").write_text("id,time,cause\n1,1,0\n2,1,0\n3,1,0\n")
    conf = _cfg(tmp_path, """\
[data]
longitudinal = "l.csv"
survival = "s.csv"

[[model.longitudinal]]
family = "gaussian"
effects = ["u"]
prior = { kind = "fixed", value = 2.0 }

[model.effects.u]
kind = "iid"
priors = { tau = { kind = "fixed", value = 0.5 } }
""")
    assert main(["fit", "--config", str(conf), "--out", str(tmp_path)]) == 0
    A = np.zeros((5, 4))
    A[:, 0] = 1
    A[np.arange(5), ids] = 1
    cov = A @ np.diag([1000.0, 2.0, 2.0, 2.0]) @ A.T + np.eye(5) / 2.0
    ref = stats.multivariate_normal(np.zeros(5), cov).logpdf(y)
    doc = json.loads((tmp_path / "summary.json").read_text())
    assert doc["log_evidence"] == pytest.approx(ref, abs=1e-8)


def test_rescale_time(tmp_path, small_run):
    conf = _cfg(tmp_path, SMALL.format(n=150))
    for f in ("longitudinal.csv", "survival.csv"):
        (tmp_path / f).write_bytes((small_run / f).read_bytes())
    assert main(["fit", "--config", str(conf), "--out", str(tmp_path), "--rescale-time"]) == 0
    with (tmp_path / "curves.csv").open() as fh:
        xs = [float(r["x"]) for r in csv.DictReader(fh) if r["curve"] == "overall_survival"]
    assert max(xs) == pytest.approx(1.0)


@pytest.mark.parametrize("name", ["example5", "check", "intercept_slope", "copied_predictor"])
def test_bundled_configs_parse(name):
    cfg = load_config(ROOT / "configs" / f"{name}.toml")
    assert cfg.path.name == f"{name}.toml"


def test_config_errors():
    with pytest.raises(ConfigError):
        parse_config({"model": {"preset": "nope"}})
    with pytest.raises(ConfigError):
        parse_config({"model": {"longitudinal": [{"family": "gaussian", "colour": 1}]}})
    with pytest.raises(ConfigError):
        parse_config({"simulate": {"generator": "example9"}})
    with pytest.raises(ConfigError):
        parse_config({"model": {"preset": "count_competing_risks", "args": {"wings": 2}}})
    with pytest.raises(ConfigError):
        parse_config({"output": {"report": "pdf"}})


def test_explicit_model_matches_preset():
    from lgm_cmprsk.models import copied_predictor_model

    cfg = load_config(ROOT / "configs" / "copied_predictor.toml")
    preset = copied_predictor_model(marker_family="poisson")
    assert cfg.model == preset
