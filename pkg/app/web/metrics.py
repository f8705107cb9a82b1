import logging

from flask import Blueprint, jsonify, request

from app.domain.metrics import score_corpus
from app.errors import EafException

metrics_bp = Blueprint("metrics", __name__)

log = logging.getLogger("metrics")


@metrics_bp.route("/score", methods=["POST"])
def score():
    body = request.get_json(silent=True) or {}
    hypotheses = body.get("hypotheses")
    references = body.get("references")
    if not isinstance(hypotheses, list) or not isinstance(references, list):
        return jsonify({"error": "Body needs 'hypotheses' and 'references' lists"}), 400
    try:
        report = score_corpus(hypotheses, references, mode=body.get("mode", "german"))
    except (EafException, ValueError) as e:
        log.error("Failed to score corpus", exc_info=e)
        return jsonify({"error": str(e)}), 400
    return jsonify(report.to_dict() | {"table": report.render_table()})
