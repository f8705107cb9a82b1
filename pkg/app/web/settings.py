import logging

from flask import Blueprint, jsonify, request

from app.domain.settings import HyperParameters, Setting
from app.errors import EafException
from app.extensions import db
from app.models.setting_repository import SqlAlchemySettingRepository

settings_bp = Blueprint("settings", __name__)

log = logging.getLogger("settings")
repository = SqlAlchemySettingRepository(db)


@settings_bp.route("/", methods=["GET"])
def index():
    return jsonify({s.key: s.value for s in repository.get_all()})


@settings_bp.route("/", methods=["POST"])
def save():
    updates = request.get_json(silent=True) or request.form.to_dict()
    try:
        current = {s.key: s.value for s in repository.get_all()}
        # Validate the merged view before anything is written
        HyperParameters.from_mapping(current | updates, strict=False)
        unknown = sorted(set(updates) - set(current))
        if unknown:
            return jsonify({"error": f"Unknown settings: {', '.join(unknown)}"}), 400
        for key, val in updates.items():
            if str(current.get(key)) != str(val):
                repository.save(Setting(key, val))
    except EafException as e:
        log.error("Failed to save settings", exc_info=e)
        return jsonify({"error": str(e), "details": e.details}), 400

    return jsonify(repository.get_hyperparameters().to_dict())
