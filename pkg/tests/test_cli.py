import csv
import io
from pathlib import Path

import numpy as np
import pytest

from chung_lab.cli import (
    CSV_COLUMNS,
    SCHEMA_VERSION,
    Checkpoint,
    _spot_check_coefficient,
    cmd_kernel_check,
    load_config,
    main,
    make_coefficient,
    read_rows,
)
from chung_lab.solver import Coefficient

def write_config(tmp_path, preset="constant", c0=1.0, c1=0.0, n_max=3, **extra):
    sections = {
        "campaign": {"id": "t1", "master_seed": "4242", "outdir": str(tmp_path / "out")},
        "coefficient": {"preset": preset, "c0": str(c0), "c1": str(c1)},
        "scales": {"a": "2.0", "n_min": "3", "n_max": str(n_max), "epsilon": "0.5"},
        "grid": {"points_per_axis": "16", "resolutions": "1 2"},
        "smallball": {"n": "2", "lambdas": "1 2 3", "trials": "60", "fit": "false"},
        "couple": {"trials": "6", "verify_every": "2"},
        "chung-scan": {"trials": "6"},
        "bm-oracle": {"epsilons": "1.0 0.5", "paths": "400", "steps": "200", "mc": "true"},
    }
    for name, body in extra.items():
        sections.setdefault(name, {}).update({k: str(v) for k, v in body.items()})
    text = "\n".join(f"[{name}]\n" + "\n".join(f"{k} = {v}" for k, v in body.items()) + "\n" for name, body in sections.items())
    path = tmp_path / "campaign.ini"
    path.write_text(text)
    return path


def strip_timestamps(path):
    lines = Path(path).read_text().splitlines()
    out = [lines[0]]
    for rec in csv.reader(io.StringIO("\n".join(lines[1:]))):
        out.append(",".join(rec[:-1]))
    return "\n".join(out)


class TestConfig:
    def test_load_and_hash_stability(self, tmp_path):
        path = write_config(tmp_path)
        a = load_config(path)
        b = load_config(path)
        assert a.config_hash == b.config_hash
        assert len(a.config_hash) == 12

    def test_hash_tracks_semantic_fields_only(self, tmp_path):
        base = load_config(write_config(tmp_path))
        changed = load_config(write_config(tmp_path, c0=2.0))
        assert base.config_hash != changed.config_hash
        moved = load_config(write_config(tmp_path), out_override=str(tmp_path / "elsewhere"))
        assert base.config_hash == moved.config_hash
        reseeded = load_config(write_config(tmp_path), seed_override=1)
        assert base.config_hash != reseeded.config_hash

    def test_unknown_preset(self, tmp_path):
        with pytest.raises(ValueError):
            load_config(write_config(tmp_path, preset="cubic"))

    def test_lipschitz_spot_check(self):
        liar = Coefficient(eval=lambda u: 10.0 * np.asarray(u), lipschitz=1.0, sigma0=0.0, tag="liar")
        with pytest.raises(ValueError, match="Lipschitz"):
            _spot_check_coefficient(liar)
        honest = make_coefficient("sine", 1.0, 2.0)
        _spot_check_coefficient(honest)

    def test_missing_file(self, tmp_path):
        with pytest.raises(FileNotFoundError):
            load_config(tmp_path / "nope.ini")


class TestKernelCheck:
    def test_passes(self, tmp_path, capsys):
        cfg = load_config(write_config(tmp_path))
        assert cmd_kernel_check(cfg) == 0
        out = capsys.readouterr().out
        assert "FAIL" not in out
        assert "negative-t rejection: PASS" in out


class TestSmallballCommand:
    def test_csv_schema_and_determinism(self, tmp_path):
        path = write_config(tmp_path)
        assert main(["smallball", "--config", str(path), "--workers", "1"]) == 0
        csv_path = tmp_path / "out" / "t1_smallball.csv"
        lines = csv_path.read_text().splitlines()
        assert lines[0] == f"# schema={SCHEMA_VERSION}"
        assert lines[1].split(",") == CSV_COLUMNS
        first = strip_timestamps(csv_path)

        # rerun: byte-identical apart from the timestamp column
        csv_path.unlink()
        (tmp_path / "out" / "t1_smallball.ckpt.jsonl").unlink()
        assert main(["smallball", "--config", str(path), "--workers", "1"]) == 0
        assert strip_timestamps(csv_path) == first

        # worker count does not change results
        csv_path.unlink()
        (tmp_path / "out" / "t1_smallball.ckpt.jsonl").unlink()
        assert main(["smallball", "--config", str(path), "--workers", "2"]) == 0
        assert strip_timestamps(csv_path) == first

    def test_rows_are_sorted_and_complete(self, tmp_path):
        path = write_config(tmp_path)
        main(["smallball", "--config", str(path), "--workers", "1"])
        recs = read_rows(tmp_path / "out" / "t1_smallball.csv")
        stats = [r["statistic"] for r in recs]
        assert stats == sorted(stats)
        assert "p_exceed@2" in stats
        assert "hits_exceed@3" in stats
        assert "trials" in stats

    def test_empty_lambda_grid_rejected(self, tmp_path):
        path = write_config(tmp_path, smallball={"lambdas": "", "n": "2", "trials": "10"})
        assert main(["smallball", "--config", str(path)]) == 2

    def test_seed_override_changes_hash(self, tmp_path):
        path = write_config(tmp_path)
        main(["smallball", "--config", str(path), "--workers", "1"])
        base = read_rows(tmp_path / "out" / "t1_smallball.csv")[0]["config_hash"]
        main(["smallball", "--config", str(path), "--workers", "1", "--seed", "77", "--out", str(tmp_path / "o2")])
        other = read_rows(tmp_path / "o2" / "t1_smallball.csv")[0]["config_hash"]
        assert base != other


class TestTailfitCommand:
    def test_fit_over_existing_csv(self, tmp_path):
        path = write_config(
            tmp_path,
            smallball={"n": "2", "lambdas": "1.5 2 2.5 3", "trials": "400", "fit": "false"},
        )
        assert main(["smallball", "--config", str(path), "--workers", "2"]) == 0
        assert main(["tailfit", "--config", str(path)]) == 0
        recs = read_rows(tmp_path / "out" / "t1_tailfit.csv")
        stats = {r["statistic"]: float(r["value"]) for r in recs}
        assert stats["tailfit_slope"] < 0.0

    def test_unknown_schema_refused(self, tmp_path):
        path = write_config(tmp_path)
        bad = tmp_path / "bad.csv"
        bad.write_text("# schema=somebody-elses-2\n" + ",".join(CSV_COLUMNS) + "\n")
        assert main(["tailfit", "--config", str(path), "--in", str(bad)]) == 2


class TestCoupleCommand:
    def test_constant_coefficient_null_coupling(self, tmp_path):
        path = write_config(tmp_path)
        assert main(["couple", "--config", str(path), "--workers", "1"]) == 0
        recs = read_rows(tmp_path / "out" / "t1_couple.csv")
        supd = [float(r["value"]) for r in recs if r["statistic"] == "sup_D"]
        assert len(supd) == 6
        assert all(v == 0.0 for v in supd)
        freq = [float(r["value"]) for r in recs if r["statistic"] == "freq_trunc_div"]
        assert freq == [0.0]

    def test_sigma0_zero_rejected(self, tmp_path):
        path = write_config(tmp_path, preset="affine", c0=0.0, c1=1.0)
        assert main(["couple", "--config", str(path)]) == 2

    def test_resume_reproduces_run(self, tmp_path):
        path = write_config(tmp_path, preset="affine", c0=2.0, c1=1.0)
        assert main(["couple", "--config", str(path), "--workers", "1"]) == 0
        csv_path = tmp_path / "out" / "t1_couple.csv"
        want = strip_timestamps(csv_path)
        # drop the final result and half the checkpoint, then resume
        csv_path.unlink()
        ck = tmp_path / "out" / "t1_couple.ckpt.jsonl"
        lines = ck.read_text().splitlines()
        ck.write_text("\n".join(lines[: len(lines) // 2]) + "\n")
        assert main(["couple", "--config", str(path), "--workers", "1", "--resume"]) == 0
        assert strip_timestamps(csv_path) == want

    def test_checkpoint_keyed_by_config_hash(self, tmp_path):
        ck = Checkpoint(tmp_path / "x.jsonl", "aaa")
        ck.add("k", [1, 2])
        assert Checkpoint(tmp_path / "x.jsonl", "aaa").load() == {"k": [1, 2]}
        assert Checkpoint(tmp_path / "x.jsonl", "bbb").load() == {}

    def test_budget_exceeded_flags_partial(self, tmp_path):
        path = write_config(tmp_path, preset="affine", c0=2.0, c1=1.0, n_max=6, budget={"max_cells": "4000000"})
        assert main(["couple", "--config", str(path), "--workers", "1"]) == 3
        recs = read_rows(tmp_path / "out" / "t1_couple.csv")
        flagged = {r["n"] for r in recs if r["statistic"] == "budget_exceeded"}
        assert flagged == {"5", "6"}
        assert any(r["statistic"] == "freq_Fn_fail" and r["n"] == "3" for r in recs)


class TestChungScanCommand:
    def test_resolution_tags_present(self, tmp_path):
        path = write_config(tmp_path)
        assert main(["chung-scan", "--config", str(path), "--workers", "2"]) == 0
        recs = read_rows(tmp_path / "out" / "t1_chung-scan.csv")
        tags = {(r["n"], r["resolution"]) for r in recs if r["statistic"] == "S_median"}
        assert tags == {("3", "x1"), ("3", "x2")}
        stats = {r["statistic"] for r in recs}
        assert {"S_min", "S_q1", "S_median", "S_q3", "S_max", "S_runmin_median"} <= stats

    def test_sigma0_zero_rejected(self, tmp_path):
        path = write_config(tmp_path, preset="affine", c0=0.0, c1=1.0)
        assert main(["chung-scan", "--config", str(path)]) == 2


class TestBmOracleCommand:
    def test_table_sorted_and_csv_written(self, tmp_path, capsys):
        path = write_config(tmp_path)
        assert main(["bm-oracle", "--config", str(path), "--workers", "1"]) == 0
        out = capsys.readouterr().out
        rows = [l for l in out.splitlines() if l.strip().startswith(("0.5", "1"))]
        assert rows[0].strip().startswith("0.5")
        recs = read_rows(tmp_path / "out" / "t1_bm-oracle.csv")
        stats = {r["statistic"] for r in recs}
        assert {"bm_series@0.5", "bm_series@1", "bm_mc@1", "bm_allowance@1"} <= stats

    def test_empty_epsilons_rejected(self, tmp_path):
        path = write_config(tmp_path, **{"bm-oracle": {"epsilons": "", "mc": "false"}})
        assert main(["bm-oracle", "--config", str(path)]) == 2
