import logging
from time import time

from flask import Blueprint, current_app, jsonify, request
from sqlalchemy.exc import NoResultFound

from app.core import scheduled_training_run
from app.domain.ablation import AblationConfig
from app.errors import EafException
from app.extensions import db, scheduler
from app.models.run_repository import SqlAlchemyRunRepository

runs_bp = Blueprint("runs", __name__)

log = logging.getLogger("runs")
repository = SqlAlchemyRunRepository(db)


@runs_bp.route("/", methods=["GET"])
def index():
    return jsonify([r.to_dict() for r in repository.get_all()])


@runs_bp.route("/<config_hash>", methods=["GET"])
def show(config_hash):
    try:
        return jsonify(repository.get(config_hash).to_dict())
    except NoResultFound:
        return jsonify({"error": f"No run {config_hash}"}), 404


@runs_bp.route("/", methods=["POST"])
def schedule():
    body = request.get_json(silent=True) or {}
    try:
        config = AblationConfig.from_mapping(body.get("config", {}))
    except (EafException, TypeError) as e:
        log.error("Rejected run request", exc_info=e)
        return jsonify({"error": str(e)}), 400

    job_id = f"train-{int(time() * 1000)}"
    scheduler.add_job(
        id=job_id,
        func=scheduled_training_run,
        trigger="date",
        kwargs={
            "config": config.to_dict(),
            "data_dir": body.get("data_dir", current_app.config["DATA_DIR"]),
            "runs_dir": body.get("runs_dir", current_app.config["RUNS_DIR"]),
        },
    )
    log.info(f"Scheduled {job_id} for {config.name}")
    return jsonify({"job_id": job_id, "config": config.to_dict()}), 202
