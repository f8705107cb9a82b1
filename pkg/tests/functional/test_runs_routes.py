from app.core import scheduled_training_run
from app.domain.ablation import RunReport
from app.extensions import db
from app.models.run_repository import SqlAlchemyRunRepository


def seed_run(config_hash="abc123"):
    report = RunReport(config_hash=config_hash, name="baseline", config={"use_eaf": False}, seed=0)
    SqlAlchemyRunRepository(db).save(report)
    return report


def test_runs_index_empty(test_client):
    response = test_client.get("/runs/")
    assert response.status_code == 200
    assert response.get_json() == []


def test_runs_index_and_show(test_client):
    report = seed_run()
    assert [r["config_hash"] for r in test_client.get("/runs/").get_json()] == ["abc123"]
    response = test_client.get("/runs/abc123")
    assert response.status_code == 200
    assert response.get_json() == report.to_dict()


def test_runs_show_missing(test_client):
    response = test_client.get("/runs/nope")
    assert response.status_code == 404


def test_runs_schedule(test_client, mocker):
    add_job = mocker.patch("app.web.runs.scheduler.add_job")
    response = test_client.post("/runs/", json={"config": {"use_alignment": False}})
    assert response.status_code == 202
    body = response.get_json()
    assert body["job_id"].startswith("train-")
    assert body["config"]["use_alignment"] is False

    kwargs = add_job.call_args.kwargs
    assert kwargs["func"] is scheduled_training_run
    assert kwargs["trigger"] == "date"
    assert kwargs["kwargs"]["config"]["use_alignment"] is False
    assert kwargs["kwargs"]["data_dir"] == test_client.application.config["DATA_DIR"]


def test_runs_schedule_rejects_invalid_config(test_client, mocker):
    add_job = mocker.patch("app.web.runs.scheduler.add_job")
    response = test_client.post("/runs/", json={"config": {"use_emotion": False}})
    assert response.status_code == 400
    assert "EAF without emotion" in response.get_json()["error"]
    response = test_client.post("/runs/", json={"config": {"alignment": False}})
    assert response.status_code == 400
    add_job.assert_not_called()
