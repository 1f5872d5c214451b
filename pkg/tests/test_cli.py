import csv
import json
import math
import os

import numpy as np
import pytest

import reseval as rv
from reseval.cli import Manifest, main, manifest_from_scenes

SPEC = {"duration": 2.5, "ser_db": 0.0, "snr_db": 30.0}


def run(*argv):
    return main([str(a) for a in argv])


def write_spec(tmp_path, spec=None, name="spec.json"):
    path = tmp_path / name
    path.write_text(json.dumps(spec if spec is not None else SPEC))
    return path


def dir_bytes(root):
    out = {}
    for base, _, files in os.walk(root):
        for name in files:
            path = os.path.join(base, name)
            out[os.path.relpath(path, root)] = open(path, "rb").read()
    return out


@pytest.fixture(scope="module")
def scene_dir(tmp_path_factory):
    tmp = tmp_path_factory.mktemp("scenes")
    spec = write_spec(tmp)
    assert run("simulate", "--spec", spec, "--out", tmp / "scenes", "--count", 3, "--seed", 42) == 0
    return tmp / "scenes"


class TestSimulate:
    def test_writes_scene_dirs(self, scene_dir):
        names = sorted(os.listdir(scene_dir))
        assert names == ["scene_0000", "scene_0001", "scene_0002"]
        files = set(os.listdir(scene_dir / "scene_0000"))
        assert {"s.wav", "x.wav", "y.wav", "w.wav", "m.wav", "yhat.wav", "e.wav", "scene.json"} <= files

    def test_rerun_byte_identical(self, tmp_path):
        spec = write_spec(tmp_path)
        for out in ("a", "b"):
            assert run("simulate", "--spec", spec, "--out", tmp_path / out, "--count", 2, "--seed", 7) == 0
        assert dir_bytes(tmp_path / "a") == dir_bytes(tmp_path / "b")

    def test_parallel_simulate_matches_serial(self, tmp_path):
        spec = write_spec(tmp_path)
        assert run("simulate", "--spec", spec, "--out", tmp_path / "ser", "--count", 2, "--seed", 9) == 0
        assert run("simulate", "--spec", spec, "--out", tmp_path / "par", "--count", 2, "--seed", 9,
                   "--jobs", 2) == 0
        assert dir_bytes(tmp_path / "ser") == dir_bytes(tmp_path / "par")

    def test_sidecar_levels_match_targets(self, tmp_path):
        spec = write_spec(tmp_path, {**SPEC, "ser_db": [-10.0, 0.0, 10.0]})
        assert run("simulate", "--spec", spec, "--out", tmp_path / "out", "--count", 3, "--seed", 1) == 0
        for i, target in enumerate([-10.0, 0.0, 10.0]):
            sidecar = json.loads((tmp_path / "out" / f"scene_{i:04d}" / "scene.json").read_text())
            assert abs(sidecar["achieved"]["ser_db"] - target) < 1e-9
            assert sidecar["spec"]["ser_db"] == target

    def test_invalid_spec_field_reported(self, tmp_path, capsys):
        spec = write_spec(tmp_path, {"duration": "long"})
        assert run("simulate", "--spec", spec, "--out", tmp_path / "x", "--count", 1) == 2
        assert "'duration'" in capsys.readouterr().err

    def test_seed_env_fallback(self, tmp_path, monkeypatch):
        spec = write_spec(tmp_path)
        monkeypatch.setenv("RES_EVAL_SEED", "42")
        assert run("simulate", "--spec", spec, "--out", tmp_path / "env", "--count", 1) == 0
        sidecar = json.loads((tmp_path / "env" / "scene_0000" / "scene.json").read_text())
        assert sidecar["spec"]["seed"] == 42


class TestSuppress:
    def test_writes_shat_into_scene_dirs(self, scene_dir):
        assert run("suppress", "--scenes", scene_dir, "--beta", 8) == 0
        for name in os.listdir(scene_dir):
            assert (scene_dir / name / "shat.wav").exists()

    def test_alpha_maps_to_beta(self, scene_dir, tmp_path, capsys):
        out = tmp_path / "sup"
        assert run("suppress", "--scenes", scene_dir, "--alpha", 0.5, "--out", out) == 0
        assert "beta=8.5" in capsys.readouterr().out
        manifest = Manifest.from_json(out / "manifest.json")
        assert all("s_hat" in entry.paths for entry in manifest.entries)

    def test_manifest_mode_requires_paths(self, tmp_path, capsys):
        manifest = tmp_path / "m.json"
        manifest.write_text(json.dumps({"entries": [{"id": "u0", "s": "missing.wav"}]}))
        assert run("suppress", "--manifest", manifest, "--out", tmp_path / "o") == 1
        assert "missing paths" in capsys.readouterr().err


class TestEvaluate:
    def build_identity_manifest(self, tmp_path, n_entries=2):
        """Entries whose s_hat is literally the e file: the identity RES."""
        rng = np.random.default_rng(0)
        entries = []
        for i in range(n_entries):
            s = rng.standard_normal(4800) * 0.2
            e = s + rng.standard_normal(4800) * 0.1
            s_path = tmp_path / f"s{i}.wav"
            e_path = tmp_path / f"e{i}.wav"
            rv.save_wav(rv.Signal(s), s_path)
            rv.save_wav(rv.Signal(e), e_path)
            entries.append({"id": f"u{i}", "s": s_path.name, "e": e_path.name, "s_hat": e_path.name})
        path = tmp_path / "manifest.json"
        path.write_text(json.dumps({"entries": entries}))
        return path

    def test_identity_res_zero_resl(self, tmp_path):
        manifest = self.build_identity_manifest(tmp_path)
        out = tmp_path / "report"
        assert run("evaluate", "--manifest", manifest, "--out", out) == 0
        payload = json.loads((out / "report.json").read_text())
        assert payload["metrics"]["resl"]["mean"] == pytest.approx(0.0, abs=1e-12)
        assert payload["n_failed"] == 0
        # no y/w files in these entries: ser/snr reported as absent
        assert "ser" not in payload["metrics"]
        assert "snr" not in payload["metrics"]

    def test_scene_pipeline_report(self, scene_dir, tmp_path):
        run("suppress", "--scenes", scene_dir, "--beta", 8)
        out = tmp_path / "rep"
        assert run("evaluate", "--scenes", scene_dir, "--out", out) == 0
        payload = json.loads((out / "report.json").read_text())
        for name in ("dsml", "resl", "sdr", "sar", "erle", "ser", "snr"):
            assert name in payload["metrics"]
        assert set(payload["per_utterance"]) == {"scene_0000", "scene_0001", "scene_0002"}

    def test_aggregates_match_frame_csvs(self, scene_dir, tmp_path):
        out = tmp_path / "rep2"
        run("suppress", "--scenes", scene_dir, "--beta", 4)
        assert run("evaluate", "--scenes", scene_dir, "--out", out) == 0
        payload = json.loads((out / "report.json").read_text())
        pooled = {}
        for name in os.listdir(out):
            if not name.startswith("frames_"):
                continue
            with open(out / name, newline="") as fh:
                for row in csv.DictReader(fh):
                    for metric in ("dsml", "resl", "sdr", "sar", "erle", "ser", "snr"):
                        if row[metric] != "":
                            pooled.setdefault(metric, []).append(float(row[metric]))
        for metric, values in pooled.items():
            mean = math.fsum(values) / len(values)
            agg = payload["metrics"][metric]
            assert agg["count"] == len(values)
            assert agg["mean"] == pytest.approx(mean, abs=1e-9)

    def test_empty_manifest_rejected(self, tmp_path, capsys):
        manifest = tmp_path / "m.json"
        manifest.write_text(json.dumps({"entries": []}))
        assert run("evaluate", "--manifest", manifest, "--out", tmp_path / "r") == 2
        assert "no entries" in capsys.readouterr().err

    def test_missing_file_isolated(self, tmp_path, capsys):
        manifest = self.build_identity_manifest(tmp_path)
        data = json.loads(manifest.read_text())
        data["entries"].append({"id": "broken", "s": "nope.wav", "e": "nope.wav", "s_hat": "nope.wav"})
        manifest.write_text(json.dumps(data))
        out = tmp_path / "rep"
        assert run("evaluate", "--manifest", manifest, "--out", out) == 1
        payload = json.loads((out / "report.json").read_text())
        assert payload["n_failed"] == 1
        assert "broken" in payload["errors"]
        # partial results for the healthy entries still written
        assert (out / "frames_u0.csv").exists()

    def test_jobs_parallel_matches_serial(self, tmp_path):
        manifest = self.build_identity_manifest(tmp_path, n_entries=3)
        out1, out2 = tmp_path / "serial", tmp_path / "parallel"
        assert run("evaluate", "--manifest", manifest, "--out", out1) == 0
        assert run("evaluate", "--manifest", manifest, "--out", out2, "--jobs", 2) == 0
        assert dir_bytes(out1) == dir_bytes(out2)

    def test_duplicate_ids_rejected(self, tmp_path, capsys):
        manifest = tmp_path / "m.json"
        manifest.write_text(json.dumps({"entries": [{"id": "a"}, {"id": "a"}]}))
        assert run("evaluate", "--manifest", manifest, "--out", tmp_path / "r") == 2
        assert "duplicate" in capsys.readouterr().err

    def test_threshold_flag_applies(self, tmp_path):
        manifest = self.build_identity_manifest(tmp_path)
        out = tmp_path / "strict"
        # an impossible threshold marks every frame silent: no metric qualifies
        assert run("evaluate", "--manifest", manifest, "--out", out, "--threshold-db", 200) == 0
        payload = json.loads((out / "report.json").read_text())
        assert payload["threshold_db"] == 200.0
        assert payload["metrics"] == {}


class TestSweep:
    def test_single_alpha(self, scene_dir, tmp_path):
        out = tmp_path / "table.csv"
        assert run("sweep", "--scenes", scene_dir, "--alphas", "0", "--out", out) == 0
        with open(out, newline="") as fh:
            rows = list(csv.DictReader(fh))
        assert len(rows) == 1
        assert float(rows[0]["beta"]) == 1.0
        assert abs(float(rows[0]["resl_mean"])) < 2.0

    def test_full_sweep_monotone(self, scene_dir, tmp_path):
        out = tmp_path / "sweep.csv"
        assert run("sweep", "--scenes", scene_dir, "--alphas", "0,0.25,0.5,0.75,1", "--out", out) == 0
        with open(out, newline="") as fh:
            rows = list(csv.DictReader(fh))
        assert [float(r["alpha"]) for r in rows] == [0.0, 0.25, 0.5, 0.75, 1.0]
        resl = [float(r["resl_mean"]) for r in rows]
        dsml = [float(r["dsml_mean"]) for r in rows]
        assert all(b > a for a, b in zip(resl, resl[1:]))
        assert all(b < a for a, b in zip(dsml, dsml[1:]))

    def test_group_by_ser(self, tmp_path):
        spec = write_spec(tmp_path, {**SPEC, "ser_db": [-10.0, 10.0]})
        scenes = tmp_path / "grouped"
        assert run("simulate", "--spec", spec, "--out", scenes, "--count", 4, "--seed", 11) == 0
        out = tmp_path / "grouped.csv"
        assert run("sweep", "--scenes", scenes, "--alphas", "0,1", "--out", out, "--group-by", "ser_db") == 0
        with open(out, newline="") as fh:
            rows = list(csv.DictReader(fh))
        assert len(rows) == 4
        groups = {float(r["ser_db"]) for r in rows}
        assert groups == {-10.0, 10.0}
        for group in groups:
            vals = [float(r["resl_mean"]) for r in rows if float(r["ser_db"]) == group]
            assert vals[1] > vals[0]

    def test_spec_driven_sweep(self, tmp_path):
        spec = write_spec(tmp_path)
        out = tmp_path / "from_spec.csv"
        assert run("sweep", "--spec", spec, "--count", 2, "--seed", 3, "--alphas", "0,1", "--out", out) == 0
        with open(out, newline="") as fh:
            assert len(list(csv.DictReader(fh))) == 2

    def test_manifest_driven_sweep(self, scene_dir, tmp_path):
        manifest_path = tmp_path / "m.json"
        manifest_from_scenes(scene_dir).write_json(manifest_path)
        out = tmp_path / "from_manifest.csv"
        assert run("sweep", "--manifest", manifest_path, "--alphas", "0,1", "--out", out) == 0
        with open(out, newline="") as fh:
            rows = list(csv.DictReader(fh))
        assert len(rows) == 2 and rows[0]["n_scenes"] == "3"

    def test_empty_alphas_rejected(self, scene_dir, tmp_path, capsys):
        assert run("sweep", "--scenes", scene_dir, "--alphas", "", "--out", tmp_path / "x.csv") == 2
        assert "empty alpha list" in capsys.readouterr().err


class TestCorrelate:
    def write_table(self, tmp_path, rows, header="utt,metric,score"):
        path = tmp_path / "scores.csv"
        path.write_text("\n".join([header] + rows) + "\n")
        return path

    def test_self_correlation(self, tmp_path, capsys):
        table = self.write_table(tmp_path, [f"u{i},{i},{2*i}" for i in range(8)])
        assert run("correlate", "--table", table, "--metric-col", "metric", "--score-col", "score") == 0
        out = capsys.readouterr().out
        assert "pcc=1.000000" in out and "srcc=1.000000" in out and "n=8" in out

    def test_missing_column_lists_available(self, tmp_path, capsys):
        table = self.write_table(tmp_path, ["u0,1,2", "u1,2,3"])
        assert run("correlate", "--table", table, "--metric-col", "dsml", "--score-col", "score") == 2
        assert "available: utt, metric, score" in capsys.readouterr().err

    def test_monotone_nonlinear(self, tmp_path, capsys):
        rows = [f"u{i},{i},{math.exp(i)}" for i in range(9)]
        table = self.write_table(tmp_path, rows)
        out_json = tmp_path / "corr.json"
        assert run("correlate", "--table", table, "--metric-col", "metric",
                   "--score-col", "score", "--out", out_json) == 0
        payload = json.loads(out_json.read_text())
        group = payload["groups"][0]
        assert group["srcc"] == 1.0
        assert group["pcc"] < 1.0

    def test_group_by(self, tmp_path, capsys):
        rows = []
        for alpha in (0.0, 1.0):
            for i in range(6):
                rows.append(f"u{alpha}_{i},{alpha},{i},{i + alpha}")
        table = self.write_table(tmp_path, rows, header="utt,alpha,metric,score")
        assert run("correlate", "--table", table, "--metric-col", "metric",
                   "--score-col", "score", "--group-by", "alpha") == 0
        out = capsys.readouterr().out
        assert out.count("pcc=") == 2
        assert "alpha=0.0" in out and "alpha=1.0" in out

    def test_constant_column_reported(self, tmp_path, capsys):
        table = self.write_table(tmp_path, [f"u{i},1.0,{i}" for i in range(5)])
        assert run("correlate", "--table", table, "--metric-col", "metric", "--score-col", "score") == 2
        assert "constant" in capsys.readouterr().err


class TestManifestHelpers:
    def test_manifest_from_scenes_tags(self, scene_dir):
        manifest = manifest_from_scenes(scene_dir)
        assert len(manifest.entries) == 3
        entry = manifest.entries[0]
        assert entry.tags["ser_db"] == 0.0
        assert os.path.isabs(entry.paths["s"])

    def test_relative_paths_resolved(self, tmp_path):
        rv.save_wav(rv.Signal(np.ones(400) * 0.1), tmp_path / "sig.wav")
        manifest = tmp_path / "m.json"
        manifest.write_text(json.dumps({"entries": [{"id": "x", "s": "sig.wav"}]}))
        loaded = Manifest.from_json(manifest)
        assert loaded.entries[0].paths["s"] == str(tmp_path / "sig.wav")
