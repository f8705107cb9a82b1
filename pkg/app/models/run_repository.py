import json

from flask_sqlalchemy import SQLAlchemy

from app.domain.ablation import RunReport
from app.models.run import RunModel


class SqlAlchemyRunRepository:
    def __init__(self, db: SQLAlchemy) -> None:
        self._session = db.session

    def _to_model(self, report: RunReport) -> RunModel:
        return RunModel(
            config_hash=report.config_hash,
            name=report.name,
            config=json.dumps(report.config, sort_keys=True),
            seed=report.seed,
            epoch_losses=json.dumps(report.epoch_losses),
            metrics=json.dumps(report.metrics, sort_keys=True),
            disambiguation_accuracy=report.disambiguation_accuracy,
            wall_clock=report.wall_clock,
            status=report.status,
            trainable_parameters=report.trainable_parameters,
            total_parameters=report.total_parameters,
        )

    def _to_domain(self, model: RunModel) -> RunReport:
        return RunReport(
            config_hash=model.config_hash,
            name=model.name,
            config=json.loads(model.config),
            seed=model.seed,
            epoch_losses=json.loads(model.epoch_losses or "[]"),
            metrics=json.loads(model.metrics or "{}"),
            disambiguation_accuracy=model.disambiguation_accuracy or 0.0,
            wall_clock=model.wall_clock or 0.0,
            status=model.status,
            trainable_parameters=model.trainable_parameters or 0,
            total_parameters=model.total_parameters or 0,
        )

    def get_all(self) -> list[RunReport]:
        results: list[RunModel] = (
            self._session.query(RunModel).order_by(RunModel.config_hash).all()
        )
        return list(map(self._to_domain, results))

    def get(self, config_hash: str) -> RunReport:
        result: RunModel = (
            self._session.query(RunModel).filter_by(config_hash=config_hash).one()
        )
        return self._to_domain(result)

    def save(self, report: RunReport) -> None:
        self._session.merge(self._to_model(report))
        self._session.commit()

    def delete(self, config_hash: str) -> None:
        self._session.query(RunModel).filter_by(config_hash=config_hash).delete()
        self._session.commit()
