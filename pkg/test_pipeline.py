"""
Test the staged pipeline, its ledger cache, the report and the command line
"""
import json
import shutil

import numpy as np
import pytest
from pydantic import ValidationError

from quadlayout.core.errors import StageFailed
from quadlayout.core.sample_meshes import clifford_torus, icosahedron
from quadlayout.commands.options import read_config_file, resolve_config
from quadlayout.main import build_parser, main
from quadlayout.schemas import PipelineConfig, RunReport
from quadlayout.services.artifact_service import ArtifactService
from quadlayout.services.mesh_core import save_mesh
from quadlayout.services import pipeline as pipeline_module
from quadlayout.services.pipeline import STAGE_OUTPUTS, Pipeline, expected_holonomy, run_pipeline, verify


@pytest.fixture(scope="module")
def mesh_dir(tmp_path_factory):
    path = tmp_path_factory.mktemp("meshes")
    save_mesh(clifford_torus(), path / "clifford.obj")
    save_mesh(icosahedron(), path / "icosahedron.obj")
    return path


@pytest.fixture(scope="module")
def finished_run(mesh_dir, tmp_path_factory):
    out = tmp_path_factory.mktemp("finished")
    config = PipelineConfig(mesh_path=str(mesh_dir / "clifford.obj"), out_dir=str(out))
    return config, run_pipeline(config)


def statuses(report):
    return {stage.stage: stage.status for stage in report.stages}


def test_expected_holonomy_of_cone_orders():
    assert expected_holonomy(1) == 90.0
    assert expected_holonomy(-1) == 270.0
    assert expected_holonomy(0) == 0.0
    assert expected_holonomy(4) == 0.0


def test_flat_torus_runs_every_stage(finished_run):
    config, report = finished_run
    assert statuses(report) == {
        "load": "succeeded", "homology": "succeeded", "oneforms": "succeeded", "periods": "succeeded",
        "optimize": "succeeded", "ricci": "succeeded", "immerse": "succeeded", "tmesh": "skipped",
    }
    artifacts = ArtifactService(config.out_dir)
    for stage, names in STAGE_OUTPUTS.items():
        if stage != "tmesh":
            assert artifacts.exists(*names), stage
    assert artifacts.exists("tmesh_summary.json", "config.json", "report.json", "report.txt")

    saved = RunReport.model_validate_json(artifacts.path("report.json").read_text())
    assert saved.run_id == report.run_id
    assert saved.finished_at is not None
    assert "numpy" in saved.hardware
    text = artifacts.path("report.txt").read_text()
    assert "Running time (s)" in text and "total" in text
    assert "Holonomy (degrees)" in text


def test_verify_passes_on_finished_run(finished_run):
    config, _ = finished_run
    report = verify(config.out_dir)
    assert report.passed, [c.name for c in report.checks if not c.passed]
    names = {check.name for check in report.checks}
    assert {"genus", "abel_jacobi_energy", "cone_residual", "gauss_bonnet", "holonomy", "isometry",
            "transition_rotations", "tmesh"} <= names


def test_rerun_elsewhere_is_byte_identical(finished_run, tmp_path):
    config, _ = finished_run
    other = PipelineConfig(mesh_path=config.mesh_path, out_dir=str(tmp_path / "again"))
    run_pipeline(other)
    first, second = ArtifactService(config.out_dir), ArtifactService(other.out_dir)
    for names in STAGE_OUTPUTS.values():
        for name in first.present(names):
            assert first.path(name).read_bytes() == second.path(name).read_bytes(), name


def test_unchanged_inputs_are_cached(mesh_dir, run_dir):
    config = PipelineConfig(mesh_path=str(mesh_dir / "clifford.obj"), out_dir=str(run_dir))
    run_pipeline(config)
    again = run_pipeline(config)
    assert set(statuses(again).values()) == {"cached"}

    rescaled = run_pipeline(config.model_copy(update={"checker_scale": 2.0}))
    result = statuses(rescaled)
    assert result["immerse"] == "succeeded"
    assert result["tmesh"] == "skipped"
    assert all(result[stage] == "cached" for stage in ("load", "homology", "oneforms", "periods", "optimize", "ricci"))


def test_genus_zero_fails_in_homology(mesh_dir, run_dir):
    config = PipelineConfig(mesh_path=str(mesh_dir / "icosahedron.obj"), out_dir=str(run_dir))
    with pytest.raises(StageFailed) as info:
        run_pipeline(config)
    assert info.value.stage == "homology"
    assert info.value.cause.code == "genus_zero_unsupported"

    report = RunReport.model_validate_json((run_dir / "report.json").read_text())
    assert statuses(report) == {"load": "succeeded", "homology": "failed"}
    assert report.stages[-1].error["code"] == "genus_zero_unsupported"
    assert not (run_dir / "homology.json").exists()


def test_missing_mesh_fails_in_load(run_dir):
    config = PipelineConfig(mesh_path=str(run_dir / "absent.obj"), out_dir=str(run_dir))
    with pytest.raises(StageFailed) as info:
        run_pipeline(config)
    assert info.value.stage == "load"
    assert info.value.cause.code == "missing_artifact"


def test_stage_order_is_validated():
    with pytest.raises(ValidationError):
        PipelineConfig(mesh_path="mesh.obj", stages=["ricci", "load"])
    with pytest.raises(ValidationError):
        PipelineConfig(mesh_path="mesh.obj", checker_scale=0)


def test_config_file_values_and_flag_precedence(tmp_path):
    path = tmp_path / "run.cfg"
    path.write_text(
        "# layout run\n"
        "MESH=meshes/torus.obj\n"
        f"out={tmp_path / 'out'}\n"
        "Epsilon=0.001\n"
        "merge=yes\n"
        "coefficients=1, 2\n"
        "ricci-tolerance=1e-9\n"
    )
    values = read_config_file(str(path))
    assert values["mesh_path"] == "meshes/torus.obj"
    assert values["merge"] is True
    assert values["coefficients"] == ["1", "2"]
    assert values["ricci_tol"] == "1e-9"

    args = build_parser().parse_args(["pipeline", "--config", str(path), "--epsilon", "0.002",
                                      "--stages", "load,homology"])
    config = resolve_config(args)
    assert config.epsilon == 0.002
    assert config.ricci_tol == 1e-9
    assert config.merge is True
    assert config.coefficients == [1.0, 2.0]
    assert config.stages == ["load", "homology"]
    assert config.out_dir == str(tmp_path / "out")


def test_cli_reports_stage_failure_as_json(mesh_dir, run_dir, capsys):
    code = main(["homology", str(mesh_dir / "icosahedron.obj"), "--out", str(run_dir)])
    assert code == 1
    payload = json.loads(capsys.readouterr().err.strip().splitlines()[-1])
    assert payload["error"] is True
    assert payload["code"] == "stage_failed"
    assert payload["stage"] == "homology"
    assert payload["path"] == str(run_dir)


def test_cli_rejects_bad_stage_order(mesh_dir, run_dir, capsys):
    code = main(["pipeline", str(mesh_dir / "clifford.obj"), "--out", str(run_dir), "--stages", "ricci,load"])
    assert code == 1
    payload = json.loads(capsys.readouterr().err.strip().splitlines()[-1])
    assert payload["code"] == "invalid_config"


def test_cli_verify_exit_code(finished_run, capsys):
    config, _ = finished_run
    assert main(["verify", "--out", config.out_dir]) == 0
    document = json.loads(capsys.readouterr().out)
    assert all(check["passed"] for check in document["checks"])


def test_verify_recomputes_from_stored_metric(finished_run, tmp_path):
    config, _ = finished_run
    copy = tmp_path / "copy"
    shutil.copytree(config.out_dir, copy)
    artifacts = ArtifactService(copy)
    u = artifacts.read_array("metric_u.npy")
    artifacts.write_array("metric_u.npy", u + np.linspace(0.0, 0.3, len(u)))

    report = verify(str(copy))
    failed = {check.name for check in report.checks if not check.passed}
    assert {"ricci_max_error", "isometry"} <= failed
    assert "genus" not in failed


def test_verify_checks_extra_loops(finished_run, tmp_path, capsys):
    config, _ = finished_run
    homology = json.loads(ArtifactService(config.out_dir).path("homology.json").read_text())
    loop = dict(homology["loops"][0], tag="extra")
    path = tmp_path / "loops.json"
    path.write_text(json.dumps({"loops": [loop]}))

    assert main(["verify", "--out", config.out_dir, "--loop", str(path)]) == 0
    document = json.loads(capsys.readouterr().out)
    holonomy = next(check for check in document["checks"] if check["name"] == "holonomy")
    assert holonomy["passed"] and holonomy["detail"] is None

    path.write_text(json.dumps(dict(loop, halfedges=loop["halfedges"][:-1])))
    assert main(["verify", "--out", config.out_dir, "--loop", str(path)]) == 1
    assert json.loads(capsys.readouterr().err.strip().splitlines()[-1])["code"] == "quadlayout_error"


def test_cone_residual_above_limit_fails_ricci(mesh_dir, run_dir, monkeypatch):
    monkeypatch.setattr(Pipeline, "cone_residual", lambda self, placement, reference: 1.0)
    config = PipelineConfig(mesh_path=str(mesh_dir / "clifford.obj"), out_dir=str(run_dir))
    with pytest.raises(StageFailed) as info:
        run_pipeline(config)
    assert info.value.stage == "ricci"
    assert info.value.cause.code == "snap_residual_too_large"
    assert info.value.cause.context["limit"] == pytest.approx(config.residual_tol)


def test_unquantized_holonomy_fails_ricci(mesh_dir, run_dir, monkeypatch):
    monkeypatch.setattr(pipeline_module, "holonomy_table", lambda metric, mesh, loops: [("a1", 93.0)])
    config = PipelineConfig(mesh_path=str(mesh_dir / "clifford.obj"), out_dir=str(run_dir))
    with pytest.raises(StageFailed) as info:
        run_pipeline(config)
    assert info.value.stage == "ricci"
    assert info.value.cause.code == "holonomy_not_quantized"
    assert info.value.cause.context["name"] == "a1"
    assert (run_dir / "holonomy.csv").exists()
