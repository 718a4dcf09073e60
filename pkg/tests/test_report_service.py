import json
import math
from pathlib import Path

import numpy as np
import pytest

from app.core.config import Settings, get_settings
from app.core.errors import ConfigError, InvalidParameterError, ReportIOError, UnsupportedCombinationError
from app.models.config import AnalysisConfig, SweepSpec
from app.models.enums import Concept, Norm, Verdict
from app.services.report_service import ReportService, build_config, run_analyze, run_sweep, sanitize

FAST = {"schedule": [8, 16, 32], "sample_count": 100, "timestamp": False}


def _config(tmp_path: Path, **fields) -> AnalysisConfig:
    return build_config(overrides={"output_dir": str(tmp_path), **FAST, **fields}, settings=Settings())


# ---- 配置 ----

def test_build_config_defaults():
    config = build_config(settings=Settings())
    assert config.system == "paper-example"
    assert config.schedule == [32, 64, 128, 256]
    assert config.epsilon == 1e-6
    assert config.concepts == list(Concept)


def test_build_config_merge_order(tmp_path):
    path = tmp_path / "config.json"
    path.write_text(json.dumps({"c": 3.0, "epsilon": 1e-4, "sweep": {"grid": [1.0, 2.0], "concept": "SPIS"}}))
    config = build_config(str(path), {"epsilon": 1e-3, "c": None, "sweep": {"width": 0.1}},
                          Settings(l_budget=2.0))
    assert config.c == 3.0
    assert config.epsilon == 1e-3
    assert config.l_budget == 2.0
    assert config.sweep.grid == [1.0, 2.0]
    assert config.sweep.concept == Concept.SPIS
    assert config.sweep.width == 0.1


def test_settings_from_environment(monkeypatch):
    monkeypatch.setenv("POWINST_EPSILON", "1e-3")
    monkeypatch.setenv("POWINST_STRIDE", "8")
    monkeypatch.setenv("POWINST_KAPPA", "  ")
    settings = get_settings()
    assert settings.epsilon == 1e-3
    assert settings.stride == 8
    assert settings.kappa == 2.0
    assert build_config(settings=settings).epsilon == 1e-3


@pytest.mark.parametrize("overrides, field", [
    ({"epsilon": -1.0}, "epsilon"),
    ({"schedule": [16, 8, 32]}, "schedule"),
    ({"schedule": [8, 16]}, "schedule"),
    ({"c": 0.0}, "c"),
    ({"d_grid": [0.5]}, "d_grid"),
    ({"system": "lorenz"}, "system"),
    ({"kappa": 1.0}, "kappa"),
])
def test_build_config_field_errors(overrides, field):
    with pytest.raises(ConfigError) as info:
        build_config(overrides=overrides, settings=Settings())
    assert field in info.value.field_errors


def test_build_config_explicit_needs_file():
    with pytest.raises(ConfigError):
        build_config(overrides={"system": "explicit"}, settings=Settings())


def test_build_config_bad_sweep():
    with pytest.raises(ConfigError):
        build_config(overrides={"sweep": {"concept": "PIS"}}, settings=Settings())
    with pytest.raises(ConfigError):
        build_config(overrides={"sweep": {"bisect": [2.0, 1.0]}}, settings=Settings())


def test_build_config_file_errors(tmp_path):
    with pytest.raises(ReportIOError):
        build_config(str(tmp_path / "missing.json"), settings=Settings())
    broken = tmp_path / "broken.json"
    broken.write_text('{"c": 2.0,')
    with pytest.raises(ConfigError):
        build_config(str(broken), settings=Settings())
    listing = tmp_path / "list.json"
    listing.write_text("[1, 2]")
    with pytest.raises(ConfigError):
        build_config(str(listing), settings=Settings())


def test_sanitize():
    value = {"a": math.inf, "b": [-math.inf, 1.5, (2, None)], "c": Concept.PIS, "d": np.float64(0.25),
             "e": np.int64(3), "f": Path("out"), "g": True}
    assert sanitize(value) == {"a": "inf", "b": ["-inf", 1.5, [2, None]], "c": "PIS", "d": 0.25,
                               "e": 3, "f": "out", "g": True}
    json.dumps(sanitize(value), allow_nan=False)


# ---- 分析 ----

def test_analyze_example_classifications(tmp_path):
    config = build_config(overrides={"output_dir": str(tmp_path), "concepts": ["UPIS", "PIS"],
                                     "sample_count": 100, "timestamp": False}, settings=Settings())
    document = run_analyze(config, sections=("growth", "certify"))
    verdicts = {c["concept"]: c["verdict"] for c in document["classifications"]}
    assert verdicts == {"UPIS": "rejected", "PIS": "certified"}
    pis = next(c for c in document["certificates"] if c["concept"] == "PIS")
    assert pis["feasible"] and pis["verification"]["passed"]
    upis = next(c for c in document["certificates"] if c["concept"] == "UPIS")
    assert not upis["feasible"]


def test_analyze_report_layout(tmp_path):
    config = _config(tmp_path, variants=["THM2"], export_horizon=4,
                     sweep={"parameter": "c", "concept": "PIS", "grid": [0.5, 2.0]})
    run_analyze(config)
    document = json.loads((tmp_path / "report.json").read_text(encoding="utf-8"))
    assert list(document) == ["config", "system", "growth_summary", "certificates", "classifications",
                              "criterion_fits", "equivalence", "sweep"]
    assert document["system"]["kind"] == "scalar"
    assert document["growth_summary"]["horizon"] == 32
    assert document["growth_summary"]["export_horizon"] == 4
    assert len(document["equivalence"]) == 2
    assert document["sweep"]["verdicts"] == ["rejected", "certified"]

    growth = (tmp_path / "growth.csv").read_text().splitlines()
    assert growth[0] == "m,n,g"
    assert len(growth) == 1 + 15
    evidence = (tmp_path / "evidence.csv").read_text().splitlines()
    assert evidence[0] == "concept,horizon,offset,verdict"
    assert len(evidence) == 1 + 3 * 3
    assert (tmp_path / "sweep.csv").exists()


def test_analyze_timestamp_flag(tmp_path):
    with_stamp = _config(tmp_path, timestamp=True)
    document = run_analyze(with_stamp, sections=("growth",), write=False)
    assert "generated_at" in document
    assert "generated_at" not in run_analyze(_config(tmp_path), sections=("growth",), write=False)


def test_analyze_is_deterministic(tmp_path):
    config = _config(tmp_path, system="random-diagonal", dim=2, system_seed=4, log_gain_range=(0.1, 0.9))
    run_analyze(config)
    first = {path.name: path.read_bytes() for path in sorted(tmp_path.iterdir())}
    run_analyze(config)
    second = {path.name: path.read_bytes() for path in sorted(tmp_path.iterdir())}
    assert first == second
    assert {"report.json", "growth.csv", "evidence.csv"} <= set(first)


def test_embedded_config_reproduces_report(tmp_path):
    config = _config(tmp_path, system="constant", value=3.0, concepts=["UPIS"], variants=["COR4"])
    document = run_analyze(config, write=False)
    rerun = run_analyze(AnalysisConfig.parse(document["config"]), write=False)
    assert rerun == document


def test_analyze_identity_flags_boundary(tmp_path):
    config = _config(tmp_path, system="constant", value=1.0)
    document = run_analyze(config, sections=("certify",), write=False)
    for classification in document["classifications"]:
        assert classification["verdict"] in ("inconclusive", "rejected")
        assert classification["rate_boundary"]


def test_analyze_explicit_system_file(tmp_path):
    system_file = Path(__file__).resolve().parents[1] / "systems" / "dense_shear.json"
    config = _config(tmp_path, system="explicit", system_file=str(system_file), concepts=["PIS"], variants=["THM2"])
    document = run_analyze(config, sections=("growth", "certify", "criterion"), write=False)
    assert document["system"]["kind"] == "dense"
    fit = document["criterion_fits"][0]
    if fit["feasible"]:
        assert fit["x_coverage"] == "sampled"


def test_analyze_dense_with_other_norm_is_an_error(tmp_path):
    system_file = Path(__file__).resolve().parents[1] / "systems" / "dense_shear.json"
    config = _config(tmp_path, system="explicit", system_file=str(system_file), norm=Norm.ONE)
    with pytest.raises(UnsupportedCombinationError):
        run_analyze(config, sections=("growth",), write=False)


def test_write_failure_is_io_error(tmp_path):
    blocker = tmp_path / "blocker"
    blocker.write_text("")
    config = _config(blocker)
    with pytest.raises(ReportIOError):
        run_analyze(config, sections=("growth",))


# ---- 扫描 ----

def test_sweep_example_pis_grid(tmp_path):
    config = build_config(overrides={"output_dir": str(tmp_path), "timestamp": False}, settings=Settings())
    spec = SweepSpec(parameter="c", concept=Concept.PIS, grid=[0.5, 0.9, 1.1, 1.5, 2.0])
    result = run_sweep(config, spec=spec)
    verdicts = [point.classification.verdict for point in result.points]
    assert verdicts == [Verdict.REJECTED, Verdict.REJECTED, Verdict.CERTIFIED, Verdict.CERTIFIED, Verdict.CERTIFIED]
    assert result.monotone
    assert result.claimed_threshold == 1.0
    assert result.boundary is None


def test_sweep_spis_bisection(tmp_path):
    config = build_config(str(Path(__file__).resolve().parents[1] / "configs" / "spis_boundary.json"),
                          {"output_dir": str(tmp_path)}, Settings())
    result = run_sweep(config)
    assert not result.bisection_refused
    lo, hi = result.boundary
    assert 1.5 <= lo < hi <= 4.0
    assert result.boundary_width <= 0.05
    assert result.monotone
    assert result.claimed_threshold == pytest.approx(math.e)
    assert result.case_offsets is not None
    record = result.to_record()
    assert record["claim"] == "c > e"


def test_sweep_constant_upis(tmp_path):
    config = _config(tmp_path, system="constant")
    spec = SweepSpec(parameter="value", concept=Concept.UPIS, grid=[0.5, 1.0, 2.0])
    result = run_sweep(config, spec=spec)
    verdicts = [point.classification.verdict for point in result.points]
    assert verdicts[0] == Verdict.REJECTED
    assert verdicts[1] in (Verdict.REJECTED, Verdict.INCONCLUSIVE)
    assert verdicts[2] == Verdict.CERTIFIED


def test_sweep_refuses_non_monotone_bisection(tmp_path):
    config = _config(tmp_path, system="constant")
    spec = SweepSpec(parameter="value", concept=Concept.UPIS, grid=[-2.0, 0.5, 2.0], bisect=(0.5, 2.0))
    result = run_sweep(config, spec=spec)
    assert not result.monotone
    assert result.bisection_refused
    assert result.boundary is None


def test_sweep_refuses_bad_endpoints(tmp_path):
    config = _config(tmp_path)
    spec = SweepSpec(parameter="c", concept=Concept.PIS, bisect=(2.0, 3.0))
    result = run_sweep(config, spec=spec)
    assert result.bisection_refused
    assert result.boundary is None


def test_sweep_parameter_must_match_system(tmp_path):
    config = _config(tmp_path, system="constant")
    with pytest.raises(InvalidParameterError):
        run_sweep(config, spec=SweepSpec(parameter="c", grid=[1.0]))
    with pytest.raises(InvalidParameterError):
        run_sweep(_config(tmp_path))


def test_service_reuses_cache(tmp_path):
    service = ReportService(_config(tmp_path))
    assert service.cache is service.cache
    assert service.table.horizon == 32
