from flask import Blueprint, jsonify

from app.extensions import db
from app.models.run_repository import SqlAlchemyRunRepository
from app.models.setting_repository import SqlAlchemySettingRepository

home_bp = Blueprint("home", __name__)

run_repository = SqlAlchemyRunRepository(db)
setting_repository = SqlAlchemySettingRepository(db)


@home_bp.route("/", methods=["GET"])
def index():
    return jsonify(
        {
            "service": "emotion-aware sign translation workbench",
            "runs": len(run_repository.get_all()),
            "defaults": setting_repository.get_hyperparameters().to_dict(),
        }
    )
