import json

import pytest

from main import EXIT_CONFIG, EXIT_IO, EXIT_OK, build_parser, main, overrides_from_args


def _run(tmp_path, *args):
    return main([*args, "--output-dir", str(tmp_path), "--no-timestamp"])


def test_growth_command_writes_report(tmp_path):
    code = _run(tmp_path, "growth", "--system", "constant", "--value", "2", "--schedule", "4", "8", "16")
    assert code == EXIT_OK
    document = json.loads((tmp_path / "report.json").read_text(encoding="utf-8"))
    assert list(document) == ["config", "system", "growth_summary", "certificates", "classifications",
                              "criterion_fits", "equivalence", "sweep"]
    assert document["growth_summary"]["horizon"] == 16
    assert document["certificates"] == []
    assert (tmp_path / "growth.csv").read_text().startswith("m,n,g\n")


def test_certify_command(tmp_path):
    code = _run(tmp_path, "certify", "--c", "2", "--concept", "UPIS", "--concept", "PIS",
                "--schedule", "16", "32", "64", "--sample-count", "50", "--format", "json")
    assert code == EXIT_OK
    document = json.loads((tmp_path / "report.json").read_text(encoding="utf-8"))
    assert [c["verdict"] for c in document["classifications"]] == ["rejected", "certified"]
    assert not (tmp_path / "evidence.csv").exists()


def test_sweep_command(tmp_path):
    code = _run(tmp_path, "sweep", "--c", "2", "--schedule", "8", "16", "32", "--sweep-concept", "PIS",
                "--grid", "0.5", "2.0")
    assert code == EXIT_OK
    document = json.loads((tmp_path / "report.json").read_text(encoding="utf-8"))
    assert document["sweep"]["verdicts"] == ["rejected", "certified"]
    assert (tmp_path / "sweep.csv").exists()


def test_sweep_without_grid_is_config_error(tmp_path):
    assert _run(tmp_path, "sweep", "--schedule", "8", "16", "32") == EXIT_CONFIG


def test_invalid_value_is_config_error(tmp_path):
    assert _run(tmp_path, "certify", "--epsilon", "-1") == EXIT_CONFIG
    assert _run(tmp_path, "growth", "--schedule", "8", "4", "16") == EXIT_CONFIG


def test_missing_config_is_io_error(tmp_path):
    assert _run(tmp_path, "analyze", "--config", str(tmp_path / "missing.json")) == EXIT_IO


def test_missing_system_file_is_io_error(tmp_path):
    assert _run(tmp_path, "growth", "--system-file", str(tmp_path / "missing.json"),
                "--schedule", "4", "8", "16") == EXIT_IO


def test_unwritable_output_is_io_error(tmp_path):
    blocker = tmp_path / "blocker"
    blocker.write_text("")
    assert main(["growth", "--schedule", "4", "8", "16", "--output-dir", str(blocker)]) == EXIT_IO


def test_unknown_system_is_rejected_by_parser():
    with pytest.raises(SystemExit):
        build_parser().parse_args(["growth", "--system", "lorenz"])


def test_overrides_skip_missing_flags():
    args = build_parser().parse_args(["analyze", "--c", "1.5", "--width", "0.1"])
    overrides = overrides_from_args(args)
    assert overrides["c"] == 1.5
    assert overrides["epsilon"] is None
    assert overrides["timestamp"] is None
    assert overrides["sweep"] == {"width": 0.1}


def test_system_file_implies_explicit():
    args = build_parser().parse_args(["growth", "--system-file", "systems/dense_shear.json"])
    assert overrides_from_args(args)["system"] == "explicit"


def test_identical_runs_are_byte_identical(tmp_path):
    args = ("analyze", "--system", "constant", "--value", "1.5", "--schedule", "8", "16", "32",
            "--variant", "THM2", "--sample-count", "50")
    assert _run(tmp_path, *args) == EXIT_OK
    first = {path.name: path.read_bytes() for path in tmp_path.iterdir()}
    assert _run(tmp_path, *args) == EXIT_OK
    second = {path.name: path.read_bytes() for path in tmp_path.iterdir()}
    assert first == second
