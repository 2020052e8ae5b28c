import hashlib
import math
from pathlib import Path

import pytest

from chung_lab_plots import SCHEMA_VERSION, SchemaError, read_results, render
from chung_lab_plots.cli import main
from chung_lab_plots.figures import EmptySelectionError, PlotSpec

HEADER = (
    "campaign_id,subcommand,config_hash,seed_master,replicate,stream,n,r,"
    "statistic,value,ci_low,ci_high,resolution,timestamp"
)


def results_csv(path, rows, version=SCHEMA_VERSION):
    lines = [f"# schema={version}", HEADER]
    for stat, value, extra in rows:
        rec = {
            "campaign_id": "demo",
            "subcommand": "x",
            "config_hash": "abc",
            "seed_master": "1",
            "replicate": "-1",
            "stream": "-1",
            "n": "2",
            "r": "0.25",
            "statistic": stat,
            "value": repr(value),
            "ci_low": "",
            "ci_high": "",
            "resolution": "",
            "timestamp": "2026-01-01T00:00:00",
        }
        rec.update(extra)
        lines.append(",".join(rec[c] for c in HEADER.split(",")))
    path.write_text("\n".join(lines) + "\n")
    return path


def synthetic_tailfit_csv(path):
    # exact affine tallies: p = exp(1 - 2 lambda^2)
    trials = 1e9
    rows = [("trials", trials, {})]
    for lam in (0.8, 1.0, 1.2, 1.5, 2.0):
        p = math.exp(1.0 - 2.0 * lam * lam)
        rows.append((f"p_exceed@{lam:g}", p, {"ci_low": repr(p * 0.99), "ci_high": repr(p * 1.01)}))
        rows.append((f"hits_exceed@{lam:g}", p * trials, {}))
    return results_csv(path, rows)


class TestReader:
    def test_unknown_schema_refused(self, tmp_path):
        path = results_csv(tmp_path / "r.csv", [("trials", 10, {})], version="chung-lab-results-99")
        with pytest.raises(SchemaError):
            read_results(path)

    def test_missing_schema_line(self, tmp_path):
        path = tmp_path / "r.csv"
        path.write_text(HEADER + "\n")
        with pytest.raises(SchemaError):
            read_results(path)

    def test_round_trip(self, tmp_path):
        path = results_csv(tmp_path / "r.csv", [("trials", 10, {})])
        rows = read_results(path)
        assert rows[0]["statistic"] == "trials"


class TestTailfitFigure:
    def test_exact_affine_sidecar_slope(self, tmp_path):
        src = synthetic_tailfit_csv(tmp_path / "sb.csv")
        out = tmp_path / "fig.png"
        render(PlotSpec(source=src, kind="tailfit", out=out))
        assert out.exists()
        sidecar = (tmp_path / "fig.png.txt").read_text()
        fitted = {}
        for line in sidecar.splitlines():
            if "=" in line:
                key, _, val = line.partition(" = ")
                fitted[key.strip()] = val.strip()
        assert abs(float(fitted["slope"]) - (-2.0)) <= 1e-8
        assert abs(float(fitted["intercept"]) - 1.0) <= 1e-8

    def test_input_not_mutated_and_deterministic(self, tmp_path):
        src = synthetic_tailfit_csv(tmp_path / "sb.csv")
        before = hashlib.sha256(src.read_bytes()).hexdigest()
        out1 = tmp_path / "a.png"
        out2 = tmp_path / "b.png"
        render(PlotSpec(source=src, kind="tailfit", out=out1))
        render(PlotSpec(source=src, kind="tailfit", out=out2))
        assert hashlib.sha256(src.read_bytes()).hexdigest() == before
        assert out1.read_bytes() == out2.read_bytes()

    def test_empty_selection(self, tmp_path):
        src = results_csv(tmp_path / "empty.csv", [])
        with pytest.raises(EmptySelectionError):
            render(PlotSpec(source=src, kind="tailfit", out=tmp_path / "x.png"))


class TestChungScanFigure:
    def test_two_resolutions_rendered(self, tmp_path):
        rows = []
        for res in ("x1", "x2"):
            for n in (3, 4):
                base = 1.4 + 0.05 * n + (0.1 if res == "x2" else 0.0)
                for stat, val in (
                    ("S_min", base - 0.4),
                    ("S_q1", base - 0.1),
                    ("S_median", base),
                    ("S_q3", base + 0.1),
                    ("S_max", base + 0.5),
                    ("S_runmin_median", base),
                ):
                    rows.append((stat, val, {"n": str(n), "resolution": res}))
        src = results_csv(tmp_path / "scan.csv", rows)
        out = tmp_path / "scan.png"
        render(PlotSpec(source=src, kind="chung-scan", out=out))
        sidecar = (tmp_path / "scan.png.txt").read_text()
        assert "resolutions = ['x1', 'x2']" in sidecar
        assert "S[x1, n=3]" in sidecar and "S[x2, n=4]" in sidecar


class TestCouplingDecayFigure:
    def test_decay_rates_in_sidecar(self, tmp_path):
        rows = []
        for n, p in ((3, 0.4), (4, 0.1), (5, 0.02), (6, 0.0)):
            rows.append(("freq_supD_exceed", p, {"n": str(n), "ci_low": repr(max(p - 0.02, 0.0)), "ci_high": repr(p + 0.02)}))
        src = results_csv(tmp_path / "couple.csv", rows)
        render(PlotSpec(source=src, kind="coupling-decay", out=tmp_path / "c.png"))
        sidecar = (tmp_path / "c.png.txt").read_text()
        assert "freq_supD_exceed_log_decay_per_n" in sidecar


class TestBmOracleFigure:
    def test_series_and_mc(self, tmp_path):
        rows = [
            ("bm_series@0.75", 0.142035, {}),
            ("bm_series@1", 0.370777, {}),
            ("bm_mc@1", 0.3743, {"ci_low": "0.3713", "ci_high": "0.3773"}),
            ("bm_allowance@1", 0.0049, {}),
        ]
        src = results_csv(tmp_path / "bm.csv", rows)
        render(PlotSpec(source=src, kind="bm-oracle", out=tmp_path / "bm.png"))
        sidecar = (tmp_path / "bm.png.txt").read_text()
        assert "series@1 = 0.370777" in sidecar
        assert "allowance@1 = 0.0049" in sidecar


class TestCli:
    def test_end_to_end(self, tmp_path):
        src = synthetic_tailfit_csv(tmp_path / "sb.csv")
        out = tmp_path / "fig.png"
        assert main(["--kind", "tailfit", "--in", str(src), "--out", str(out)]) == 0
        assert out.exists()

    def test_unknown_schema_exit_code(self, tmp_path):
        src = results_csv(tmp_path / "bad.csv", [("trials", 1, {})], version="v999")
        assert main(["--kind", "tailfit", "--in", str(src), "--out", str(tmp_path / "x.png")]) == 1

    def test_empty_selection_exit_code(self, tmp_path):
        src = results_csv(tmp_path / "empty.csv", [])
        assert main(["--kind", "tailfit", "--in", str(src), "--out", str(tmp_path / "x.png")]) == 1

    def test_missing_file(self, tmp_path):
        assert main(["--kind", "tailfit", "--in", str(tmp_path / "none.csv"), "--out", str(tmp_path / "x.png")]) == 1
