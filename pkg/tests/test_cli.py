import json

import numpy as np
import pandas as pd
import pytest

from cli.main import main
from mmfit.mmengine import TRACE_COLUMNS


@pytest.fixture
def data_csv(tmp_path, regression_data, write_csv):
    return write_csv(tmp_path / "data.csv", regression_data.X[:, 1:], regression_data.y)


@pytest.fixture
def sparse_csv(tmp_path):
    path = str(tmp_path / "sparse.csv")
    code = main([
        "simulate", "--response", "sparse-quantile", "--n", "500", "--p", "50",
        "--q", "0.5", "--seed", "7", "--output", path,
    ])
    assert code == 0
    return path


def read_json(path):
    with open(path) as f:
        return json.load(f)


def test_fit_lad_writes_report(tmp_path, data_csv):
    out = str(tmp_path / "fit.json")
    assert main(["fit", "lad", "--data", data_csv, "--output", out]) == 0
    report = read_json(out)
    assert report["schema"] == 1
    assert report["model"] == "lad"
    assert report["converged"]
    assert report["factorizations"] == 1
    assert len(report["coef"]) == 4


def test_fit_prints_report_without_output(data_csv, capsys):
    assert main(["fit", "quantile", "--data", data_csv, "--q", "0.3"]) == 0
    report = json.loads(capsys.readouterr().out)
    assert report["extras"]["q"] == 0.3


def test_missing_required_flag_is_input_error(data_csv, capsys):
    assert main(["fit", "quantile", "--data", data_csv]) == 2
    assert "--q" in capsys.readouterr().err


def test_bad_csv_is_input_error(tmp_path):
    path = tmp_path / "nan.csv"
    path.write_text("x1,y\n1.0,2.0\nnan,3.0\n")
    assert main(["fit", "lad", "--data", str(path)]) == 2
    assert main(["fit", "lad", "--data", str(tmp_path / "missing.csv")]) == 2


def test_unknown_model_is_rejected_by_parser(data_csv):
    with pytest.raises(SystemExit):
        main(["fit", "ridge", "--data", data_csv])


def test_nonconvergence_exit_code_still_writes_report(tmp_path, data_csv):
    out = str(tmp_path / "fit.json")
    assert main(["fit", "lad", "--data", data_csv, "--max-iter", "1", "--tol", "1e-15", "--output", out]) == 4
    report = read_json(out)
    assert not report["converged"]
    assert report["iterations"] == 1


@pytest.mark.parametrize("model, flags", [
    ("quantile", ["--q", "0.7", "--smoothing", "moreau"]),
    ("sparse-quantile-l0", ["--q", "0.5", "--lambda", "0.01"]),
    ("l2e", []),
])
def test_rescore_reproduces_objective(tmp_path, data_csv, capsys, model, flags):
    out = str(tmp_path / "fit.json")
    assert main(["fit", model, "--data", data_csv, "--output", out, *flags]) == 0
    capsys.readouterr()
    assert main(["fit", model, "--data", data_csv, "--rescore", out]) == 0
    value = float(capsys.readouterr().out)
    assert value == pytest.approx(read_json(out)["objective"], rel=1e-12, abs=1e-12)


def test_same_seed_gives_identical_reports(tmp_path, data_csv):
    reports = []
    for name in ("a.json", "b.json"):
        out = str(tmp_path / name)
        assert main(["fit", "l2e", "--data", data_csv, "--seed", "5", "--output", out]) == 0
        report = read_json(out)
        report.pop("time_seconds")
        reports.append(report)
    assert reports[0] == reports[1]


def test_trace_file(tmp_path, data_csv):
    trace = str(tmp_path / "trace.csv")
    out = str(tmp_path / "fit.json")
    assert main(["fit", "lad", "--data", data_csv, "--trace", trace, "--output", out]) == 0
    table = pd.read_csv(trace)
    assert list(table.columns) == TRACE_COLUMNS
    assert len(table) == read_json(out)["iterations"] + 1


def test_multinomial_fit_from_codes(tmp_path):
    path = str(tmp_path / "multi.csv")
    assert main(["simulate", "--response", "multinomial", "--n", "300", "--p", "3", "--c", "3",
                 "--seed", "1", "--output", path]) == 0
    out = str(tmp_path / "fit.json")
    assert main(["fit", "multinomial", "--data", path, "--output", out]) == 0
    coef = np.asarray(read_json(out)["coef"])
    assert coef.shape == (3, 2)


def test_simulate_writes_sidecar(sparse_csv):
    sidecar = read_json(sparse_csv.replace(".csv", ".json"))
    assert sidecar["schema"] == 1
    assert sidecar["spec"]["response"] == "sparse-quantile"
    assert len(sidecar["truth"]) == 50
    df = pd.read_csv(sparse_csv)
    assert list(df.columns) == [f"x{j}" for j in range(1, 51)] + ["y"]
    assert len(df) == 500


def test_metrics_of_pd_fit(tmp_path, sparse_csv, capsys):
    out = str(tmp_path / "fit.json")
    assert main(["fit", "sparse-quantile-pd", "--data", sparse_csv, "--q", "0.5", "--k", "10", "--output", out]) == 0
    capsys.readouterr()
    truth = sparse_csv.replace(".csv", ".json")
    assert main(["metrics", "--estimate", out, "--truth", truth, "--data", sparse_csv]) == 0
    metrics = json.loads(capsys.readouterr().out)
    assert metrics["tpr"] == 1.0
    assert metrics["fpr"] == 0.0
    assert metrics["factorizations"] == 1


def test_cv_single_point_grid(tmp_path, sparse_csv):
    out = str(tmp_path / "cv.json")
    code = main([
        "cv", "sparse-quantile-l0", "--data", sparse_csv, "--q", "0.5", "--alpha", "0.1",
        "--grid", "0.1", "--folds", "3", "--output", out,
    ])
    assert code == 0
    summary = read_json(out)
    assert summary["best"] == 0.1
    assert summary["parameter"] == "lambda"
    assert summary["fit"]["extras"]["lambda"] == 0.1
    table = pd.read_csv(str(tmp_path / "cv_table.csv"))
    assert len(table) == 1
    assert np.isfinite(table["mean_envelope"][0])


def test_cv_pd_grid_picks_a_k(tmp_path, sparse_csv):
    out = str(tmp_path / "cv.json")
    assert main(["cv", "sparse-quantile-pd", "--data", sparse_csv, "--q", "0.5",
                 "--grid", "5,10,15", "--jobs", "2", "--output", out]) == 0
    summary = read_json(out)
    assert summary["best"] in (5, 10, 15)
    assert [row["value"] for row in summary["grid"]] == [5, 10, 15]


def test_cv_input_errors(tmp_path, write_csv, data_csv):
    tiny = write_csv(tmp_path / "tiny.csv", np.arange(10.0).reshape(5, 2), np.arange(5.0))
    assert main(["cv", "sparse-quantile-l0", "--data", tiny, "--q", "0.5", "--grid", "0.1", "--folds", "10"]) == 2
    assert main(["cv", "lad", "--data", data_csv]) == 2


def test_bench_reports_factorization_counts(tmp_path):
    out = str(tmp_path / "bench.csv")
    assert main(["bench", "lad", "--sizes", "200x5", "--seed", "1", "--output", out]) == 0
    table = pd.read_csv(out).set_index("solver")
    assert table.loc["mm", "factorizations"] == 1
    assert table.loc["irls", "factorizations"] == table.loc["irls", "iterations"]


def test_bench_unknown_scenario(capsys):
    assert main(["bench", "logistic"]) == 2
    assert "unknown bench scenario" in capsys.readouterr().err


@pytest.mark.parametrize("model", ["logistic", "multinomial"])
def test_separated_classes_exit_with_numerical_error(tmp_path, write_csv, capsys, model):
    x = np.array([[-3.0], [-2.0], [-1.0], [1.0], [2.0], [3.0]])
    labels = np.array([0, 0, 0, 1, 1, 1]) if model == "logistic" else np.array([2, 2, 2, 1, 1, 1])
    path = write_csv(tmp_path / "separated.csv", x, labels)
    out = str(tmp_path / "fit.json")
    assert main(["fit", model, "--data", path, "--output", out]) == 3
    assert "perfectly separated" in capsys.readouterr().err
