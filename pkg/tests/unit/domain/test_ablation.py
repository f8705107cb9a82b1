import pytest

from app.domain.ablation import (
    COMPONENT_GRID,
    AblationConfig,
    RunReport,
    render_reports,
    run_config_hash,
    sampling_grid,
    sign_test,
)
from app.domain.settings import HyperParameters
from app.errors import ConfigurationError


def test_eaf_without_emotion_is_rejected():
    with pytest.raises(ConfigurationError) as e:
        AblationConfig(use_emotion=False, use_eaf=True)
    assert e.value.details["use_eaf"] is True


def test_component_grid_rows():
    assert len(COMPONENT_GRID) == 6
    assert len({c.name for c in COMPONENT_GRID}) == 6
    assert COMPONENT_GRID[-1] == AblationConfig()
    assert COMPONENT_GRID[0].name.startswith("baseline")


def test_sampling_grid_covers_strategies_and_intervals():
    grid = sampling_grid()
    assert len(grid) == 12
    assert {c.sampling for c in grid} == {"single_frame", "max_pool", "mean_pool"}
    assert sorted({c.st for c in grid}) == [2, 4, 8, 16]


def test_apply_to_overrides_toggles():
    params = AblationConfig(use_eaf=False, sampling="mean_pool", st=4, use_context=False).apply_to(HyperParameters())
    assert params.use_eaf is False
    assert params.sampling == "mean_pool"
    assert params.emotion_interval == 4
    assert params.use_context is False


def test_from_mapping():
    assert AblationConfig.from_mapping({"use_alignment": False}).use_alignment is False
    with pytest.raises(ConfigurationError):
        AblationConfig.from_mapping({"alignment": False})
    with pytest.raises(ConfigurationError):
        AblationConfig.from_mapping({"st": 0})


def test_run_config_hash_depends_on_dataset_and_params():
    params = HyperParameters()
    assert run_config_hash(params, "abc") == run_config_hash(HyperParameters(), "abc")
    assert run_config_hash(params, "abc") != run_config_hash(params, "abd")
    assert run_config_hash(params, "abc") != run_config_hash(params.replace(use_eaf=False), "abc")


def test_run_report_round_trip_and_render():
    report = RunReport(
        config_hash="f00",
        name="Emo+EAF+MA single_frame/st=8",
        config={"use_eaf": True},
        seed=0,
        metrics={"bleu1": 0.5, "bleu4": 0.25},
        disambiguation_accuracy=0.75,
    )
    assert RunReport.from_dict(report.to_dict()) == report
    table = render_reports([report])
    assert table.splitlines()[0].split()[:2] == ["Run", "B-1"]
    assert "75.00" in table
    assert "25.00" in table


def test_sign_test():
    assert sign_test([0.1] * 5) == 1 / 32
    assert sign_test([0.1, 0.2, -0.1]) == pytest.approx(4 / 8)
    assert sign_test([0.0, 0.3]) == 0.5
    assert sign_test([0.0, 0.0]) == 1.0
    assert sign_test([-1.0] * 4) == 1.0
