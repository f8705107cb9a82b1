import logging

from flask import Flask

from app.config import Config


def create_app(test_config=None):
    logging.basicConfig(level=logging.INFO)

    app = Flask(__name__, instance_relative_config=True)
    if test_config is None:
        app.config.from_object(Config)
    else:
        app.config.from_object(Config)
        app.config.from_mapping(test_config)

    from .extensions import init_extensions
    from .models import run, setting  # noqa: F401  register tables

    init_extensions(app)

    from .web.commands import commands_bp
    from .web.home import home_bp
    from .web.metrics import metrics_bp
    from .web.runs import runs_bp
    from .web.settings import settings_bp

    app.register_blueprint(home_bp)
    app.register_blueprint(runs_bp, url_prefix="/runs")
    app.register_blueprint(settings_bp, url_prefix="/settings")
    app.register_blueprint(metrics_bp, url_prefix="/metrics")
    app.register_blueprint(commands_bp)

    return app
