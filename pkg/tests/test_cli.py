"""End-to-end tests of the command-line interface.

Commands run in-process through ``wassnet.cli.main`` so exit codes, stdout,
and written artifacts can be checked directly.  File outputs must be
byte-identical across reruns with equal flags.
"""

import json
import math
import os
from pathlib import Path

import numpy as np
import pytest

from wassnet import (
    Activation,
    BoundLedger,
    DeterministicLinear,
    SnnModel,
    StochasticLinear,
    TuneReport,
)
from wassnet.cli import main
from wassnet.errors import NumericalError
from wassnet.quantizer import QuantizerTable
from wassnet.stats import Gaussian, GaussianMixture, gaussian_w2

DATA = Path(__file__).parent / "data"

# MW2 between the bundled two-component pair, from enumerating the two
# vertices of the 2x2 transportation polytope with exact Gaussian pair costs
MW2_PAIR_ORACLE = 1.9614138255975342


def run_cli(argv, capsys):
    code = main(argv)
    captured = capsys.readouterr()
    return code, captured.out, captured.err


@pytest.fixture(scope="module")
def table_file(table, tmp_path_factory):
    path = tmp_path_factory.mktemp("table") / "table.json"
    table.save(path)
    return str(path)


@pytest.fixture()
def det_model_file(tmp_path):
    model = SnnModel(1, [DeterministicLinear(np.array([[2.0]]),
                                             np.array([1.0]))])
    path = tmp_path / "det_model.json"
    path.write_text(json.dumps(model.to_dict()))
    return str(path)


@pytest.fixture()
def tiny_template_file(tmp_path):
    layers = [
        StochasticLinear(np.zeros((4, 1)), np.ones((4, 1)), np.zeros(4),
                         np.ones(4), ntk_scaling=False),
        Activation("tanh"),
        StochasticLinear(np.zeros((1, 4)), np.ones((1, 4)), np.zeros(1),
                         np.ones(1), ntk_scaling=False),
    ]
    path = tmp_path / "template.json"
    path.write_text(json.dumps(SnnModel(1, layers).to_dict()))
    return str(path)


def _approximate(tmp_path, table_file, capsys, budget=10, m=5, tag="",
                 points=None):
    out_gmm = str(tmp_path / f"mix{tag}.json")
    out_ledger = str(tmp_path / f"ledger{tag}.json")
    code, out, _ = run_cli(
        ["approximate", "--model", str(DATA / "model_1_16_1_tanh.json"),
         "--points", points or str(DATA / "points_5.json"),
         "--budget", str(budget), "--m", str(m),
         "--table", table_file,
         "--out-gmm", out_gmm, "--out-ledger", out_ledger], capsys)
    assert code == 0, out
    return out_gmm, out_ledger, out


class TestUsageErrors:
    def test_unknown_subcommand(self, capsys):
        code, _, _ = run_cli(["frobnicate"], capsys)
        assert code == 2

    def test_missing_required_flag(self, capsys):
        code, _, _ = run_cli(["approximate"], capsys)
        assert code == 2

    def test_help_exits_zero(self, capsys):
        code, out, _ = run_cli(["--help"], capsys)
        assert code == 0
        assert "quantizer-build" in out


class TestQuantizerBuild:
    def test_single_entry_table(self, tmp_path, capsys):
        out = str(tmp_path / "t1.json")
        code, _, _ = run_cli(["quantizer-build", "--max-n", "1",
                              "--out", out], capsys)
        assert code == 0
        entry = QuantizerTable.load(out).get(1)
        assert entry.locations.tolist() == [0.0]
        assert entry.w2sq == 1.0

    def test_entries_strictly_decreasing(self, tmp_path, capsys):
        out = str(tmp_path / "t8.json")
        code, _, _ = run_cli(["quantizer-build", "--max-n", "8",
                              "--tol", "1e-12", "--out", out], capsys)
        assert code == 0
        table = QuantizerTable.load(out)
        w2sq = [table.get(n).w2sq for n in range(1, 9)]
        assert all(a > b for a, b in zip(w2sq, w2sq[1:]))

    def test_rebuild_byte_identical(self, tmp_path, capsys):
        first = tmp_path / "a.json"
        second = tmp_path / "b.json"
        for out in (first, second):
            code, _, _ = run_cli(["quantizer-build", "--max-n", "6",
                                  "--out", str(out)], capsys)
            assert code == 0
        assert first.read_bytes() == second.read_bytes()

    def test_unwritable_path(self, tmp_path, capsys):
        code, _, err = run_cli(
            ["quantizer-build", "--max-n", "2",
             "--out", str(tmp_path / "no" / "such" / "dir.json")], capsys)
        assert code != 0


class TestApproximate:
    def test_deterministic_model_zero_bound(self, tmp_path, det_model_file,
                                            table_file, capsys):
        points = tmp_path / "pt.json"
        points.write_text("[[1.5]]")
        out_gmm = str(tmp_path / "mix.json")
        out_ledger = str(tmp_path / "ledger.json")
        code, out, _ = run_cli(
            ["approximate", "--model", det_model_file,
             "--points", str(points), "--table", table_file,
             "--out-gmm", out_gmm, "--out-ledger", out_ledger], capsys)
        assert code == 0
        artifact = json.loads(Path(out_ledger).read_text())
        assert artifact["formal_bound"] == 0.0
        assert artifact["relative_formal_bound"] == 0.0
        mixture = GaussianMixture.from_dict(
            json.loads(Path(out_gmm).read_text()))
        assert len(mixture.components) == 1
        comp = mixture.components[0]
        assert comp.mean.tolist() == [4.0]  # 2 * 1.5 + 1
        assert not np.any(comp.cov)

    def test_reference_ledger_audits(self, tmp_path, table_file, capsys):
        _, out_ledger, _ = _approximate(tmp_path, table_file, capsys)
        artifact = json.loads(Path(out_ledger).read_text())
        for key in ("model", "input_set_size", "budget", "m", "seed",
                    "formal_bound", "relative_formal_bound", "ledger"):
            assert key in artifact
        assert artifact["input_set_size"] == 5
        ledger = BoundLedger.from_dict(artifact["ledger"])
        ledger.audit()
        assert ledger.final_bound == artifact["formal_bound"]

    def test_duplicate_points_csv(self, tmp_path, table_file, capsys):
        out_gmm, out_ledger, _ = _approximate(
            tmp_path, table_file, capsys, budget=4,
            points=str(DATA / "points_dup.csv"))
        artifact = json.loads(Path(out_ledger).read_text())
        assert artifact["input_set_size"] == 6
        assert math.isfinite(artifact["formal_bound"])

    def test_reruns_byte_identical(self, tmp_path, table_file, capsys):
        gmm_a, ledger_a, _ = _approximate(tmp_path, table_file, capsys,
                                          budget=6, tag="_a")
        gmm_b, ledger_b, _ = _approximate(tmp_path, table_file, capsys,
                                          budget=6, tag="_b")
        assert Path(gmm_a).read_bytes() == Path(gmm_b).read_bytes()
        assert Path(ledger_a).read_bytes() == Path(ledger_b).read_bytes()

    def test_missing_model_file(self, tmp_path, table_file, capsys):
        code, _, err = run_cli(
            ["approximate", "--model", str(tmp_path / "nope.json"),
             "--points", str(DATA / "points_5.json"), "--table", table_file,
             "--out-gmm", str(tmp_path / "g.json"),
             "--out-ledger", str(tmp_path / "l.json")], capsys)
        assert code == 3
        assert "nope.json" in err

    def test_negative_seed_rejected(self, tmp_path, table_file, capsys):
        code, _, err = run_cli(
            ["approximate", "--model", str(DATA / "model_1_16_1_tanh.json"),
             "--points", str(DATA / "points_5.json"), "--budget", "4",
             "--seed", "-3", "--table", table_file,
             "--out-gmm", str(tmp_path / "g.json"),
             "--out-ledger", str(tmp_path / "l.json")], capsys)
        assert code == 3
        assert "seed" in err

    def test_env_var_supplies_table(self, tmp_path, table_file, capsys,
                                    monkeypatch):
        monkeypatch.setenv("WASSNET_TABLE", table_file)
        out_gmm = str(tmp_path / "mix.json")
        out_ledger = str(tmp_path / "ledger.json")
        code, _, err = run_cli(
            ["approximate", "--model", str(DATA / "model_1_16_1_tanh.json"),
             "--points", str(DATA / "points_5.json"), "--budget", "4",
             "--out-gmm", out_gmm, "--out-ledger", out_ledger], capsys)
        assert code == 0
        assert "building" not in err  # the table was loaded, not rebuilt


class TestEmpirical:
    def test_deterministic_model_zero(self, tmp_path, det_model_file,
                                      table_file, capsys):
        points = tmp_path / "pt.json"
        points.write_text("[[1.5]]")
        out_gmm = str(tmp_path / "mix.json")
        run_cli(["approximate", "--model", det_model_file,
                 "--points", str(points), "--table", table_file,
                 "--out-gmm", out_gmm,
                 "--out-ledger", str(tmp_path / "l.json")], capsys)
        code, out, _ = run_cli(
            ["empirical", "--model", det_model_file, "--points", str(points),
             "--gmm", out_gmm, "--samples", "50"], capsys)
        assert code == 0
        assert "empirical_w2=0.0" in out

    def test_smoke_samples_10(self, tmp_path, table_file, capsys):
        out_gmm, _, _ = _approximate(tmp_path, table_file, capsys, budget=4)
        code, out, _ = run_cli(
            ["empirical", "--model", str(DATA / "model_1_16_1_tanh.json"),
             "--points", str(DATA / "points_5.json"), "--gmm", out_gmm,
             "--samples", "10"], capsys)
        assert code == 0
        value = float(out.splitlines()[0].split("=", 1)[1])
        assert math.isfinite(value) and value >= 0.0

    def test_empirical_below_formal_bound(self, tmp_path, table_file,
                                          capsys):
        out_gmm, out_ledger, _ = _approximate(tmp_path, table_file, capsys)
        code, out, _ = run_cli(
            ["empirical", "--model", str(DATA / "model_1_16_1_tanh.json"),
             "--points", str(DATA / "points_5.json"), "--gmm", out_gmm,
             "--samples", "300"], capsys)
        assert code == 0
        value = float(out.splitlines()[0].split("=", 1)[1])
        bound = json.loads(Path(out_ledger).read_text())["formal_bound"]
        assert value <= bound

    def test_sample_cap_advises_reduction(self, tmp_path, table_file,
                                          capsys):
        out_gmm, _, _ = _approximate(tmp_path, table_file, capsys, budget=4)
        code, _, err = run_cli(
            ["empirical", "--model", str(DATA / "model_1_16_1_tanh.json"),
             "--points", str(DATA / "points_5.json"), "--gmm", out_gmm,
             "--samples", "100000"], capsys)
        assert code == 3
        assert "--samples" in err

    def test_dimension_mismatch(self, tmp_path, table_file, capsys):
        out_gmm, _, _ = _approximate(tmp_path, table_file, capsys, budget=4)
        points = tmp_path / "two_points.json"
        points.write_text("[[0.0], [1.0]]")  # approximation used 5 points
        code, _, err = run_cli(
            ["empirical", "--model", str(DATA / "model_1_16_1_tanh.json"),
             "--points", str(points), "--gmm", out_gmm,
             "--samples", "50"], capsys)
        assert code == 3
        assert "dimension" in err


class TestMw2:
    def test_file_vs_itself_zero(self, capsys):
        code, out, _ = run_cli(
            ["mw2", "--gmm-a", str(DATA / "gmm_pair_a.json"),
             "--gmm-b", str(DATA / "gmm_pair_a.json")], capsys)
        assert code == 0
        assert "mw2=0.0" in out

    def test_single_gaussians_match_closed_form(self, tmp_path, capsys):
        a = Gaussian(np.array([0.0, 1.0]), np.diag([1.0, 2.0]))
        b = Gaussian(np.array([3.0, -1.0]), np.diag([0.5, 0.25]))
        for name, g in (("a.json", a), ("b.json", b)):
            mixture = GaussianMixture(np.array([1.0]), (g,))
            (tmp_path / name).write_text(json.dumps(mixture.to_dict()))
        code, out, _ = run_cli(
            ["mw2", "--gmm-a", str(tmp_path / "a.json"),
             "--gmm-b", str(tmp_path / "b.json")], capsys)
        assert code == 0
        value = float(out.split("=", 1)[1])
        assert value == pytest.approx(gaussian_w2(a, b), rel=1e-12)

    def test_two_component_pair_matches_oracle(self, capsys):
        code, out, _ = run_cli(
            ["mw2", "--gmm-a", str(DATA / "gmm_pair_a.json"),
             "--gmm-b", str(DATA / "gmm_pair_b.json")], capsys)
        assert code == 0
        value = float(out.split("=", 1)[1])
        assert abs(value - MW2_PAIR_ORACLE) <= 1e-9

    def test_plan_json_has_valid_marginals(self, tmp_path, capsys):
        out_plan = tmp_path / "plan.json"
        code, _, _ = run_cli(
            ["mw2", "--gmm-a", str(DATA / "gmm_pair_a.json"),
             "--gmm-b", str(DATA / "gmm_pair_b.json"),
             "--out-plan", str(out_plan)], capsys)
        assert code == 0
        data = json.loads(out_plan.read_text())
        plan = np.asarray(data["plan"])
        assert plan.shape == (2, 2)
        np.testing.assert_allclose(plan.sum(axis=1), [0.6, 0.4], atol=1e-12)
        np.testing.assert_allclose(plan.sum(axis=0), [0.3, 0.7], atol=1e-12)
        assert math.sqrt(data["squared_cost"]) == pytest.approx(
            data["value"], rel=1e-12)

    def test_dimension_mismatch(self, tmp_path, capsys):
        mixture = GaussianMixture(
            np.array([1.0]), (Gaussian(np.zeros(3), np.eye(3)),))
        path = tmp_path / "g3.json"
        path.write_text(json.dumps(mixture.to_dict()))
        code, _, _ = run_cli(
            ["mw2", "--gmm-a", str(DATA / "gmm_pair_a.json"),
             "--gmm-b", str(path)], capsys)
        assert code == 3


class TestTunePrior:
    def test_steps_one_smoke(self, tmp_path, tiny_template_file, table_file,
                             capsys):
        points = tmp_path / "pts.json"
        points.write_text("[[-1.0], [0.0], [1.0]]")
        out = tmp_path / "tune.json"
        code, stdout, _ = run_cli(
            ["tune-prior", "--arch", tiny_template_file,
             "--gp", "rbf:ls=0.5,var=1.0", "--points", str(points),
             "--steps", "1", "--budget", "6", "--m", "1",
             "--table", table_file, "--out", str(out)], capsys)
        assert code == 0
        report = TuneReport.from_dict(json.loads(out.read_text()))
        assert len(report.history) == 1
        assert report.final_loss <= report.initial_loss
        tuned = SnnModel.from_dict(
            json.loads((tmp_path / "tune.model.json").read_text()))
        assert tuned.input_dim == 1
        assert "final_loss=" in stdout

    def test_explicit_out_model_path(self, tmp_path, tiny_template_file,
                                     table_file, capsys):
        points = tmp_path / "pts.json"
        points.write_text("[[0.0], [1.0]]")
        out_model = tmp_path / "tuned_arch.json"
        code, _, _ = run_cli(
            ["tune-prior", "--arch", tiny_template_file,
             "--gp", "rbf:ls=1.0,var=1.0", "--points", str(points),
             "--steps", "1", "--budget", "4", "--m", "1",
             "--table", table_file, "--out", str(tmp_path / "r.json"),
             "--out-model", str(out_model)], capsys)
        assert code == 0
        SnnModel.from_dict(json.loads(out_model.read_text()))

    def test_malformed_gp_spec_grammar_hint(self, tmp_path,
                                            tiny_template_file, table_file,
                                            capsys):
        points = tmp_path / "pts.json"
        points.write_text("[[0.0]]")
        code, _, err = run_cli(
            ["tune-prior", "--arch", tiny_template_file,
             "--gp", "rbf:lengthscale=0.5", "--points", str(points),
             "--table", table_file, "--out", str(tmp_path / "r.json")],
            capsys)
        assert code == 3
        assert "rbf:ls=" in err

    def test_nonzero_mean_template_rejected(self, tmp_path, table_file,
                                            capsys):
        layers = [StochasticLinear(np.ones((1, 1)), np.ones((1, 1)),
                                   np.zeros(1), np.ones(1))]
        arch = tmp_path / "biased.json"
        arch.write_text(json.dumps(SnnModel(1, layers).to_dict()))
        points = tmp_path / "pts.json"
        points.write_text("[[0.0]]")
        code, _, err = run_cli(
            ["tune-prior", "--arch", str(arch),
             "--gp", "rbf:ls=0.5,var=1.0", "--points", str(points),
             "--table", table_file, "--out", str(tmp_path / "r.json")],
            capsys)
        assert code == 3
        assert "zero-mean" in err

    def test_numerical_failure_exit_code(self, tmp_path, tiny_template_file,
                                         table_file, capsys, monkeypatch):
        def explode(*args, **kwargs):
            raise NumericalError("loss diverged")

        monkeypatch.setattr("wassnet.cli.tune", explode)
        points = tmp_path / "pts.json"
        points.write_text("[[0.0]]")
        code, _, err = run_cli(
            ["tune-prior", "--arch", tiny_template_file,
             "--gp", "rbf:ls=0.5,var=1.0", "--points", str(points),
             "--table", table_file, "--out", str(tmp_path / "r.json")],
            capsys)
        assert code == 4
        assert "loss diverged" in err


class TestReport:
    def test_empty_list_header_only(self, capsys):
        code, out, _ = run_cli(["report"], capsys)
        assert code == 0
        lines = out.splitlines()
        assert lines == ["| model | D | budget | M | empirical | formal |",
                         "| --- | --- | --- | --- | --- | --- |"]

    def test_single_ledger_row(self, tmp_path, table_file, capsys):
        _, out_ledger, _ = _approximate(tmp_path, table_file, capsys,
                                        budget=4)
        code, out, _ = run_cli(["report", "--ledger", out_ledger], capsys)
        assert code == 0
        lines = out.splitlines()
        assert len(lines) == 3
        cells = [c.strip() for c in lines[2].strip("|").split("|")]
        assert cells[0].endswith("model_1_16_1_tanh.json")
        assert cells[1] == "5" and cells[2] == "4" and cells[3] == "5"
        assert cells[4] == ""  # no empirical value recorded
        assert float(cells[5]) > 0.0

    def test_three_budgets_formal_nonincreasing(self, tmp_path, table_file,
                                                capsys):
        ledgers = []
        for budget in (2, 8, 32):
            _, out_ledger, _ = _approximate(tmp_path, table_file, capsys,
                                            budget=budget, tag=str(budget))
            ledgers.append(out_ledger)
        code, out, _ = run_cli(["report", "--ledger", *ledgers], capsys)
        assert code == 0
        rows = out.splitlines()[2:]
        formal = [float(r.strip("|").split("|")[5]) for r in rows]
        assert len(formal) == 3
        assert formal[0] >= formal[1] >= formal[2]

    def test_empirical_column_rendered_when_present(self, tmp_path,
                                                    table_file, capsys):
        _, out_ledger, _ = _approximate(tmp_path, table_file, capsys,
                                        budget=4)
        artifact = json.loads(Path(out_ledger).read_text())
        artifact["empirical"] = 0.25
        annotated = tmp_path / "annotated.json"
        annotated.write_text(json.dumps(artifact))
        code, out, _ = run_cli(["report", "--ledger", str(annotated)],
                               capsys)
        assert code == 0
        cells = [c.strip() for c in out.splitlines()[2].strip("|").split("|")]
        assert cells[4] == "0.25"

    def test_malformed_ledger_file(self, tmp_path, capsys):
        bad = tmp_path / "bad.json"
        bad.write_text('{"records": []}')
        code, _, err = run_cli(["report", "--ledger", str(bad)], capsys)
        assert code == 3
        assert "bad.json" in err
