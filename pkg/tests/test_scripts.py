from scripts.export_growth import main as export_growth


def test_export_growth_writes_csv(tmp_path):
    output = tmp_path / "growth.csv"
    assert export_growth(["--c", "2", "--horizon", "4", "--output", str(output)]) == 0
    lines = output.read_text().splitlines()
    assert lines[0] == "m,n,g"
    assert len(lines) == 1 + 15


def test_export_growth_missing_file_is_io_error(tmp_path):
    assert export_growth(["--file", str(tmp_path / "missing.json"), "--output", str(tmp_path / "g.csv")]) == 3


def test_export_growth_unwritable_output_is_io_error(tmp_path):
    assert export_growth(["--horizon", "4", "--output", str(tmp_path)]) == 3


def test_export_growth_bad_parameter_is_config_error(tmp_path):
    assert export_growth(["--c", "-1", "--output", str(tmp_path / "g.csv")]) == 2
