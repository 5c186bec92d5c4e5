"""Command-line surface tests: artifacts, exit codes, manifests, determinism."""

import hashlib
import json
from pathlib import Path

import pytest

from fairtiers.cli import main

SYNTH_CONFIG = {
    "seed": 11,
    "extra_records_rate": 0.4,
    "groups": [
        {"name": "A", "size": 400, "prevalence": 0.2, "pos_beta": [3.2, 4.0], "neg_beta": [2.4, 7.6]},
        {"name": "B", "size": 400, "prevalence": 0.1, "pos_beta": [2.8, 4.4], "neg_beta": [1.6, 8.4]},
    ],
}

RUN_CONFIG = {"definition": "ERB", "I": 5, "J": 5, "w_grid": [0.0, 0.5, 1.0], "seed": 5}


def digest(path):
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


@pytest.fixture()
def workspace(tmp_path):
    synth = tmp_path / "synth.json"
    synth.write_text(json.dumps(SYNTH_CONFIG))
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps(RUN_CONFIG))
    data = tmp_path / "data.csv"
    assert main(["synth", "--config", str(synth), "--out", str(data)]) == 0
    return tmp_path, synth, cfg, data


class TestSynth:
    def test_writes_csv_with_header(self, workspace):
        _, _, _, data = workspace
        lines = data.read_text().splitlines()
        assert lines[0] == "entity_id,outcome,group,score"
        assert len(lines) == 801

    def test_deterministic_digests(self, workspace, tmp_path):
        _, synth, _, data = workspace
        other = tmp_path / "data2.csv"
        assert main(["synth", "--config", str(synth), "--out", str(other)]) == 0
        assert digest(data) == digest(other)

    def test_invalid_prevalence_exits_2(self, tmp_path, capsys):
        bad = dict(SYNTH_CONFIG, groups=[{"name": "A", "size": 10, "prevalence": 1.5}])
        path = tmp_path / "bad.json"
        path.write_text(json.dumps(bad))
        assert main(["synth", "--config", str(path), "--out", str(tmp_path / "x.csv")]) == 2
        assert "prevalence" in capsys.readouterr().err

    def test_manifest_written(self, workspace):
        _, _, _, data = workspace
        manifest = json.loads((data.parent / "data.csv.manifest.json").read_text())
        assert manifest["command"] == "synth"
        assert str(data) in manifest["outputs"]
        assert manifest["outputs"][str(data)] == digest(data)


class TestSweep:
    def test_artifacts_and_best_w(self, workspace):
        tmp, _, cfg, data = workspace
        out = tmp / "sweep"
        assert main(["sweep", "--data", str(data), "--config", str(cfg), "--out-dir", str(out)]) == 0
        for name in (
            "thresholds.json",
            "evaluation.csv",
            "curve_thresholds.csv",
            "curve_tradeoff.csv",
            "best_w.json",
            "manifest_sweep.json",
        ):
            assert (out / name).exists()
        tradeoff = (out / "curve_tradeoff.csv").read_text().splitlines()
        assert len(tradeoff) == 1 + 3 * 3  # header + |grid| x tiers
        best = json.loads((out / "best_w.json").read_text())
        assert set(best["best_w"]) == {"L", "A", "H"}

    def test_rerun_byte_identical(self, workspace):
        tmp, _, cfg, data = workspace
        out1, out2 = tmp / "s1", tmp / "s2"
        for out in (out1, out2):
            assert main(
                ["sweep", "--data", str(data), "--config", str(cfg), "--out-dir", str(out)]
            ) == 0
        for name in ("thresholds.json", "evaluation.csv", "curve_thresholds.csv", "curve_tradeoff.csv"):
            assert digest(out1 / name) == digest(out2 / name), name

    def test_cal_definition_single_w(self, workspace):
        tmp, _, cfg, data = workspace
        out = tmp / "cal"
        code = main(
            ["sweep", "--data", str(data), "--config", str(cfg), "--definition", "CAL",
             "--out-dir", str(out)]
        )
        assert code == 0
        best = json.loads((out / "best_w.json").read_text())
        assert len(set(best["best_w"].values())) == 1

    def test_thresholds_json_carries_conventions_and_config(self, workspace):
        tmp, _, cfg, data = workspace
        out = tmp / "conv"
        assert main(["sweep", "--data", str(data), "--config", str(cfg), "--out-dir", str(out)]) == 0
        payload = json.loads((out / "thresholds.json").read_text())
        assert payload["config"]["I"] == 5 and payload["config"]["seed"] == 5
        assert "percentiles" in payload["conventions"]
        assert "optimism_caveat" in payload["conventions"]
        assert set(payload["anchors_bagged"]) == {"L", "A", "H"}
        assert "monotone_violations" in payload

    def test_manifest_lists_every_artifact(self, workspace):
        tmp, _, cfg, data = workspace
        out = tmp / "m"
        assert main(["sweep", "--data", str(data), "--config", str(cfg), "--out-dir", str(out)]) == 0
        manifest = json.loads((out / "manifest_sweep.json").read_text())
        outputs = {Path(p).name for p in manifest["outputs"]}
        assert outputs == {
            "thresholds.json", "evaluation.csv", "curve_thresholds.csv",
            "curve_tradeoff.csv", "best_w.json",
        }
        for path, want in manifest["outputs"].items():
            assert digest(path) == want


class TestCorrect:
    def test_single_weight_run(self, workspace):
        tmp, _, cfg, data = workspace
        out = tmp / "corr"
        code = main(
            ["correct", "--data", str(data), "--config", str(cfg), "--w", "0.5",
             "--out-dir", str(out)]
        )
        assert code == 0
        payload = json.loads((out / "thresholds.json").read_text())
        assert payload["w"] == 0.5
        assert set(payload["selected"]["post"]["values"]) == {"L", "A", "H"}

    def test_invalid_w_exits_2(self, workspace):
        tmp, _, cfg, data = workspace
        code = main(
            ["correct", "--data", str(data), "--config", str(cfg), "--w", "1.5",
             "--out-dir", str(tmp / "x")]
        )
        assert code == 2


class TestAudit:
    def test_agnostic_audit_contains_erb_rows(self, workspace):
        tmp, _, cfg, data = workspace
        out = tmp / "aud"
        code = main(
            ["audit", "--data", str(data), "--thresholds", "agnostic",
             "--config", str(cfg), "--out-dir", str(out)]
        )
        assert code == 0
        rows = (out / "audit.csv").read_text().splitlines()
        erb_rows = [r for r in rows if r.startswith("ERB,")]
        assert len(erb_rows) == 3
        cal_rows = [r for r in rows if r.startswith("CAL,")]
        assert len(cal_rows) == 4

    def test_post_thresholds_audit(self, workspace):
        tmp, _, cfg, data = workspace
        sweep_dir = tmp / "sweep_for_audit"
        assert main(["sweep", "--data", str(data), "--config", str(cfg), "--out-dir", str(sweep_dir)]) == 0
        out = tmp / "aud2"
        code = main(
            ["audit", "--data", str(data), "--thresholds", str(sweep_dir / "thresholds.json"),
             "--config", str(cfg), "--out-dir", str(out)]
        )
        assert code == 0
        header, *rows = (out / "audit.csv").read_text().splitlines()
        assert header == "definition,tier,pre_mean,pre_sd,post_mean,post_sd,n_undefined"
        assert all(len(r.split(",")) == 7 for r in rows)

    def test_truncated_thresholds_exit_2(self, workspace, capsys):
        tmp, _, cfg, data = workspace
        broken = tmp / "broken.json"
        broken.write_text(json.dumps({
            "anchors": {"L": 0.1, "A": 0.3, "H": 0.6},
            "groups": ["A"],  # group B missing
            "values": {"L": {"A": 0.1}, "A": {"A": 0.3}, "H": {"A": 0.6}},
        }))
        code = main(
            ["audit", "--data", str(data), "--thresholds", str(broken),
             "--config", str(cfg), "--out-dir", str(tmp / "aud3")]
        )
        assert code == 2
        assert "B" in capsys.readouterr().err


WH_THRESHOLDS = {
    "anchors": {"L": 0.042, "A": 0.1275, "H": 0.3494},
    "groups": ["WH"],
    "values": {"L": {"WH": 0.0408}, "A": {"WH": 0.1243}, "H": {"WH": 0.3521}},
}


class TestApply:
    def test_published_threshold_column(self, tmp_path):
        data = tmp_path / "d.csv"
        data.write_text(
            "entity_id,outcome,group,score\n"
            "c1,false,WH,0.2\nc2,false,WH,0.0\nc3,true,WH,0.9\n"
        )
        tfile = tmp_path / "t.json"
        tfile.write_text(json.dumps(WH_THRESHOLDS))
        out = tmp_path / "scored.csv"
        assert main(["apply", "--data", str(data), "--thresholds", str(tfile), "--out", str(out)]) == 0
        lines = out.read_text().splitlines()
        assert lines[0].endswith(",tier")
        assert lines[1].endswith(",S3")  # score 0.2 sits between 0.1243 and 0.3521
        assert lines[2].endswith(",S1")
        assert lines[3].endswith(",S4")
        assert len(lines) == 4  # order and count preserved

    def test_unknown_group_exits_2_with_row(self, tmp_path, capsys):
        data = tmp_path / "d.csv"
        data.write_text("entity_id,outcome,group,score\nc1,false,XX,0.2\n")
        tfile = tmp_path / "t.json"
        tfile.write_text(json.dumps(WH_THRESHOLDS))
        code = main(
            ["apply", "--data", str(data), "--thresholds", str(tfile),
             "--out", str(tmp_path / "o.csv")]
        )
        assert code == 2
        assert "row 2" in capsys.readouterr().err


class TestExitCodes:
    def test_missing_data_file(self, tmp_path):
        code = main(["sweep", "--data", str(tmp_path / "absent.csv"), "--out-dir", str(tmp_path)])
        assert code == 2

    def test_bad_config_json(self, workspace):
        tmp, _, _, data = workspace
        bad = tmp / "bad_cfg.json"
        bad.write_text(json.dumps({"definition": "NOPE"}))
        code = main(["sweep", "--data", str(data), "--config", str(bad), "--out-dir", str(tmp / "o")])
        assert code == 2
