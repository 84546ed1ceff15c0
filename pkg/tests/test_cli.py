import csv
import json
import subprocess
import sys

import numpy as np
import pytest
from numpy.testing import assert_allclose

from waqr.cli import (
    EXIT_CONFIG,
    EXIT_DATA,
    EXIT_NUMERIC,
    emit_report,
    ingest_csv,
    main,
    run_rolling,
    window_starts,
)
from waqr.cdf import CdfConfig
from waqr.dataset import Dataset
from waqr.errors import DataError, ParameterError
from waqr.estimator import FitConfig, waqr_fit
from waqr.weighting import WeightingSpec

FAST = ["--n-trees", "8"]


def write_csv(path, header, rows):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        wr = csv.writer(fh)
        wr.writerow(header)
        wr.writerows(rows)
    return path


@pytest.fixture
def data_file(tmp_path):
    rng = np.random.default_rng(0)
    T = 300
    x1 = rng.standard_normal(T)
    x2 = rng.uniform(0, 1, T)
    y = 0.2 + 0.8 * x1 - 0.5 * x2 + rng.standard_normal(T)
    rows = [[f"2000-{t}", repr(float(a)), repr(float(b)), repr(float(c))] for t, (a, b, c) in enumerate(zip(y, x1, x2))]
    return write_csv(tmp_path / "data.csv", ["date", "y", "x1", "x2"], rows)


def read_rows(path):
    with open(path, newline="", encoding="utf-8") as fh:
        return list(csv.DictReader(fh))


# ingestion -------------------------------------------------------------------


def test_ingest_roles(tmp_path):
    f = write_csv(tmp_path / "a.csv", ["date", "y", "x1"], [["d1", "1", "2"], ["d2", "3", "4"], ["d3", "5", "7"]])
    d = ingest_csv(f, "y", ["x1"], "date")
    assert d.x.shape == (3, 1) and d.names == ("x1",)
    assert_allclose(d.y, [1, 3, 5])
    assert d.with_intercept().x.shape == (3, 2)
    # regressors default to everything except the dependent and time columns
    assert ingest_csv(f, "y", None, "date").names == ("x1",)


def test_ingest_blank_cell_names_line(tmp_path):
    f = write_csv(tmp_path / "a.csv", ["y", "x1"], [["1", "2"], ["3", "4"], ["5", ""], ["6", "1"]])
    with pytest.raises(DataError, match="line.* 4"):
        ingest_csv(f, "y", ["x1"])


def test_ingest_non_numeric_and_nonfinite(tmp_path):
    f = write_csv(tmp_path / "a.csv", ["y", "x1"], [["1", "2"], ["abc", "4"], ["5", "inf"], ["6", "1"]])
    with pytest.raises(DataError, match="3, 4"):
        ingest_csv(f, "y", ["x1"])


def test_ingest_schema_errors(tmp_path):
    f = write_csv(tmp_path / "a.csv", ["y", "x1", "x1"], [["1", "2", "3"]] * 5)
    with pytest.raises(DataError, match="schema error"):
        ingest_csv(f, "y", ["x1"])
    f = write_csv(tmp_path / "b.csv", ["y", "x1"], [["1", "2"]] * 5)
    with pytest.raises(DataError, match="not found"):
        ingest_csv(f, "y", ["x9"])
    (tmp_path / "empty.csv").write_text("", encoding="utf-8")
    with pytest.raises(DataError, match="empty"):
        ingest_csv(tmp_path / "empty.csv", "y")
    f = write_csv(tmp_path / "c.csv", ["y", "x1", "x2"], [["1", "2", "3"]] * 3)
    with pytest.raises(DataError, match="p \\+ 2"):
        ingest_csv(f, "y", ["x1", "x2"])


# rolling windows -------------------------------------------------------------


def test_window_arithmetic():
    assert window_starts(100, 50, 25) == [0, 25, 50]
    assert window_starts(100, 100, 7) == [0]
    with pytest.raises(ParameterError):
        window_starts(10, 11, 1)


def test_rolling_window_positions(data_file):
    # 50-row windows leave 34 training rows, below the forest's minimum, so each
    # of the three windows is recorded with its error instead of aborting the run
    d = ingest_csv(data_file, "y", ["x1", "x2"]).rows(slice(0, 100)).with_intercept()
    out = run_rolling(d, 50, 25, WeightingSpec.upper(0.2), FitConfig(cdf=CdfConfig(n_trees=4, leaf_size=5)))
    assert [end for end, _, _ in out] == [50, 75, 100]
    assert all(res is None and "SizeError" in err for _, res, err in out)


def test_rolling_windows(data_file):
    d = ingest_csv(data_file, "y", ["x1", "x2"]).with_intercept()
    cfg = FitConfig(cdf=CdfConfig(n_trees=8, leaf_size=5))
    w = WeightingSpec.upper(0.2)
    out = run_rolling(d, 150, 75, w, cfg, seed=1)
    assert [end for end, _, _ in out] == [150, 225, 300]
    assert all(res is not None for _, res, _ in out)
    assert np.array_equal(out[1][1].beta_hat, waqr_fit(d.rows(slice(75, 225)), w, cfg, 1).beta_hat)
    single = run_rolling(d, 300, 10, w, cfg, seed=1)
    assert len(single) == 1
    assert np.array_equal(single[0][1].beta_hat, waqr_fit(d, w, cfg, 1).beta_hat)
    with pytest.raises(ParameterError):
        run_rolling(d, 13, 5, w, cfg)


def test_rolling_failure_is_local(data_file):
    d = ingest_csv(data_file, "y", ["x1", "x2"]).with_intercept()
    x = d.x.copy()
    x[200:, 2] = 1.0  # a regressor that is constant in the last window only
    d = Dataset(x, d.y, names=d.names)
    out = run_rolling(d, 100, 100, WeightingSpec.constant(), FitConfig(cdf=CdfConfig(n_trees=4, leaf_size=5)))
    assert [res is None for _, res, _ in out] == [False, False, True]
    assert "Singularity" in out[2][2]


# reports -----------------------------------------------------------------------


def test_empty_report_has_header(tmp_path):
    text = emit_report([], "csv", tmp_path / "e.csv", ["window_end", "coefficient", "estimate", "se"])
    assert text == "window_end,coefficient,estimate,se\n"
    assert (tmp_path / "e.csv").read_text() == text


def test_unwritable_path(tmp_path):
    with pytest.raises(DataError):
        emit_report({"a": 1}, "json", tmp_path / "no" / "such" / "dir" / "x.json")


# commands ----------------------------------------------------------------------


def test_fit_json_keys(data_file, tmp_path, capsys):
    out = tmp_path / "fit.json"
    code = main(["fit", "--input", str(data_file), "--y", "y", "--x", "x1,x2", "--psi", "upper",
                 "--alpha", "0.2", "--output", str(out)] + FAST)
    assert code == 0
    rep = json.loads(out.read_text())
    assert {"beta_hat", "std_errors", "ci", "nw_lag", "split", "psi"} <= set(rep)
    assert rep["names"] == ["const", "x1", "x2"]
    assert rep["split"] == [200, 100]
    assert rep["psi"] == {"family": "upper", "alpha": 0.2}


def test_csv_round_trip(data_file, tmp_path):
    j, c = tmp_path / "fit.json", tmp_path / "fit.csv"
    args = ["fit", "--input", str(data_file), "--y", "y", "--psi", "middle", "--alpha", "0.2", "--time", "date"] + FAST
    assert main(args + ["--output", str(j)]) == 0
    assert main(args + ["--output", str(c), "--format", "csv"]) == 0
    rep = json.loads(j.read_text())
    rows = read_rows(c)
    assert [r["coefficient"] for r in rows] == rep["names"]
    assert_allclose([float(r["estimate"]) for r in rows], rep["beta_hat"], rtol=1e-12, atol=0)
    assert_allclose([float(r["se"]) for r in rows], rep["std_errors"], rtol=1e-12, atol=0)


def test_rolling_csv(data_file, tmp_path):
    out = tmp_path / "roll.csv"
    code = main(["fit", "--input", str(data_file), "--y", "y", "--x", "x1", "--psi", "upper", "--alpha", "0.2",
                 "--rolling-window", "100", "--rolling-step", "100", "--format", "csv", "--output", str(out)] + FAST)
    assert code == 0
    rows = read_rows(out)
    assert list(rows[0]) == ["window_end", "coefficient", "estimate", "se", "error"]
    assert sorted({int(r["window_end"]) for r in rows}) == [100, 200, 300]
    assert len(rows) == 6


def test_deterministic_output(data_file, tmp_path):
    paths = [tmp_path / "a.json", tmp_path / "b.json"]
    for p in paths:
        assert main(["crossfit", "--input", str(data_file), "--y", "y", "--psi", "exponential", "--a", "2",
                     "--time", "date", "--seed", "5", "--output", str(p)] + FAST) == 0
    assert paths[0].read_bytes() == paths[1].read_bytes()


def test_config_file_and_flags(data_file, tmp_path):
    cfg = tmp_path / "run.cfg"
    cfg.write_text("psi.family = upper\npsi.alpha = 0.25\ncdf.n_trees = 6\nfit.split_ratio = 0.5\n")
    out = tmp_path / "o.json"
    assert main(["fit", "--config", str(cfg), "--input", str(data_file), "--y", "y", "--time", "date",
                 "--output", str(out)]) == 0
    rep = json.loads(out.read_text())
    assert rep["split"] == [150, 150] and rep["psi"]["alpha"] == 0.25
    # an explicit flag beats the file
    assert main(["fit", "--config", str(cfg), "--alpha", "0.1", "--input", str(data_file), "--y", "y", "--time", "date",
                 "--output", str(out)]) == 0
    assert json.loads(out.read_text())["psi"]["alpha"] == 0.1


def test_exit_codes(data_file, tmp_path, capsys):
    bad_cfg = tmp_path / "bad.cfg"
    bad_cfg.write_text("nonsense.key = 1\n")
    assert main(["fit", "--config", str(bad_cfg), "--input", str(data_file), "--y", "y"]) == EXIT_CONFIG
    assert main(["fit", "--input", str(data_file), "--y", "y", "--psi", "upper", "--alpha", "2"]) == EXIT_CONFIG
    assert main(["fit", "--input", str(tmp_path / "missing.csv"), "--y", "y"]) == EXIT_DATA
    assert main(["fit", "--input", str(data_file), "--y", "nope"]) == EXIT_DATA
    dup = write_csv(tmp_path / "dup.csv", ["y", "x", "x"], [["1", "2", "3"]] * 50)
    assert main(["fit", "--input", str(dup), "--y", "y"]) == EXIT_DATA
    sing = write_csv(tmp_path / "sing.csv", ["y", "x", "z"],
                     [[repr(float(v)), repr(float(v / 3)), repr(float(2 * v / 3))] for v in np.random.default_rng(1).standard_normal(80)])
    assert main(["fit", "--input", str(sing), "--y", "y", "--psi", "upper", "--alpha", "0.2"] + FAST) in (EXIT_NUMERIC,)
    err = capsys.readouterr().err
    assert "config error" in err and "data error" in err and "numeric error" in err
    with pytest.raises(SystemExit) as ex:
        main(["fit"])
    assert ex.value.code == EXIT_CONFIG


def test_psi_table(capsys):
    assert main(["psi-table", "--psi", "upper", "--alpha", "0.5", "--points", "5", "--format", "csv"]) == 0
    lines = capsys.readouterr().out.strip().splitlines()
    assert lines[0] == "u,psi,Psi"
    assert [float(v) for v in lines[-1].split(",")] == [1.0, 2.0, 1.0]


def test_compare(data_file, tmp_path):
    out = tmp_path / "cmp.json"
    assert main(["compare", "--input", str(data_file), "--y", "y", "--time", "date", "--psi", "upper", "--alpha", "0.3",
                 "--output", str(out)] + FAST) == 0
    rep = json.loads(out.read_text())
    assert [r["coefficient"] for r in rep["coefficients"]] == ["const", "x1", "x2"]
    assert rep["comparator"]["truncated_mass"] == pytest.approx(0.01 / 0.3)


def test_simulate_csv(tmp_path):
    out = tmp_path / "mc.csv"
    assert main(["simulate", "--psi-type", "1,2", "--T", "200", "--reps", "2", "--n-trees", "5",
                 "--format", "csv", "--output", str(out)]) == 0
    rows = read_rows(out)
    assert [r["psi_type"] for r in rows] == ["1", "2"]
    assert {"coverage", "mae"} <= set(rows[0])
    assert float(rows[1]["true_beta1"]) == 0.0


def test_constant_fit_matches_ols_in_subprocess(data_file, tmp_path):
    out = tmp_path / "ols.json"
    cmd = [sys.executable, "-m", "waqr.cli", "fit", "--input", str(data_file), "--y", "y", "--x", "x1,x2",
           "--psi", "constant", "--n-trees", "3", "--output", str(out)]
    subprocess.run(cmd, check=True)
    rows = np.loadtxt(data_file, delimiter=",", skiprows=1, usecols=(1, 2, 3))
    ev = rows[200:]
    x = np.column_stack([np.ones(len(ev)), ev[:, 1:]])
    ols = np.linalg.lstsq(x, ev[:, 0], rcond=None)[0]
    assert np.max(np.abs(np.array(json.loads(out.read_text())["beta_hat"]) - ols)) < 1e-9
