import json
import subprocess
import sys

import pytest

from ligamesh.cli import main
from ligamesh.config import PipelineConfig, set_dotted
from ligamesh.errors import ConfigInvalid
from ligamesh.gpmm import LowRankGp
from ligamesh.mesh import load_mesh
from ligamesh.pipeline import artifact_digests

SMALL = ["--set", "synth.count=4"]


@pytest.fixture(scope="module")
def run_dir(tmp_path_factory):
    out = tmp_path_factory.mktemp("pipe")
    assert main(["pipeline", "--seed", "2", "--out", str(out)] + SMALL) == 0
    return out


def _error(capsys) -> dict:
    return json.loads(capsys.readouterr().err.strip().splitlines()[-1])


def test_full_run_artifacts(run_dir):
    for sub in ("models", "meshes", "reports", "logs"):
        assert (run_dir / sub).is_dir()
    for stage in ("synth", "build-ssm", "transfer", "build-ligament", "tetra", "compare"):
        log = json.loads((run_dir / "logs" / f"{stage}.json").read_text())
        assert log["stage"] == stage and "parameters" in log and "seconds" in log
    report = json.loads((run_dir / "reports" / "compare.json").read_text())
    assert {r["variant"] for r in report["reports"]} == {"sta", "clp"}
    assert set(report["averages"]) == {"sta", "clp", "all"}
    assert (run_dir / "meshes" / "ligaments" / "sta" / "CB_tet.node").exists()
    for path in (run_dir / "meshes").rglob("*.obj"):
        load_mesh(path).validate()


def test_missing_target_names_transfer(run_dir, capsys, tmp_path):
    code = main(["transfer", "--out", str(run_dir), "--set", f"target.radius={tmp_path / 'nope.obj'}"])
    assert code != 0
    err = _error(capsys)
    assert err["stage"] == "transfer" and "nope.obj" in err["message"]
    assert json.loads((run_dir / "logs" / "error.json").read_text())["stage"] == "transfer"


def test_compare_only_writes_comparison(run_dir, tmp_path):
    lig = run_dir / "meshes"
    cfg = {"compare": [{"model": str(lig / "ligaments" / "sta" / "CB_sheet.obj"),
                        "truth": str(lig / "ground_truth" / "CB.obj"), "ligament": "CB", "variant": "sta"}]}
    (tmp_path / "cfg.json").write_text(json.dumps(cfg))
    out = tmp_path / "cmp"
    assert main(["compare", "--config", str(tmp_path / "cfg.json"), "--out", str(out)]) == 0
    written = sorted(str(p.relative_to(out)) for p in out.rglob("*") if p.is_file())
    assert written == ["logs/compare.json", "reports/compare.csv", "reports/compare.json", "reports/compare_table.txt"]
    assert main(["compare", "--config", str(tmp_path / "cfg.json"), "--out", str(tmp_path / "bf"),
                 "--brute-force", "--threads", "3"]) == 0
    a = (out / "reports" / "compare.json").read_bytes()
    assert a == (tmp_path / "bf" / "reports" / "compare.json").read_bytes()


def test_fit_subcommand(run_dir, tmp_path):
    model = run_dir / "models" / "radius_reference.lgp"
    target = sorted((run_dir / "meshes" / "training").glob("radius_*.obj"))[1]
    out = tmp_path / "fit"
    assert main(["fit", "--model", str(model), "--target", str(target), "--out", str(out)]) == 0
    rep = json.loads((out / "reports" / "fit.json").read_text())
    assert len(rep["alpha"]) == LowRankGp.load(model).rank and rep["residual"] >= 0
    load_mesh(out / "meshes" / "fitted.obj").validate()


def test_config_errors(capsys, tmp_path):
    assert main(["synth", "--out", str(tmp_path), "--set", "bogus=1"]) == 2
    assert _error(capsys)["stage"] == "config"
    assert main(["pipeline", "--stage", "synth,nope", "--out", str(tmp_path)]) == 2
    missing = tmp_path / "none.json"
    assert main(["synth", "--config", str(missing)]) == 2
    assert str(missing) in _error(capsys)["message"]
    with pytest.raises(ConfigInvalid):
        PipelineConfig.from_dict({"ligaments": {"XX": {}}})
    with pytest.raises(ConfigInvalid):
        PipelineConfig.from_dict({"training": {"radius": {"meshes": ["absent.obj"], "landmarks": []}}}).check_paths()


def test_flags_override_config(tmp_path):
    (tmp_path / "cfg.json").write_text(json.dumps({"seed": 1, "out": "a", "synth": {"count": 3}}))
    out = tmp_path / "b"
    assert main(["synth", "--config", str(tmp_path / "cfg.json"), "--seed", "9", "--out", str(out),
                 "--set", "synth.count=2"]) == 0
    manifest = json.loads((out / "reports" / "synth_manifest.json").read_text())
    assert len(manifest["radius"]["samples"]) == 2 and manifest["radius"]["seed"] == 18
    assert not (tmp_path / "a").exists()
    d = {}
    set_dotted(d, "fit.regularization", "0.05")
    set_dotted(d, "out", "plain")
    assert d == {"fit": {"regularization": 0.05}, "out": "plain"}


def test_synth_is_deterministic(tmp_path):
    for name in ("x", "y"):
        assert main(["synth", "--seed", "4", "--out", str(tmp_path / name)] + SMALL) == 0
    assert artifact_digests(tmp_path / "x") == artifact_digests(tmp_path / "y")


def test_module_entry_point():
    res = subprocess.run([sys.executable, "-m", "ligamesh", "--help"], capture_output=True, text=True)
    assert res.returncode == 0 and "pipeline" in res.stdout
