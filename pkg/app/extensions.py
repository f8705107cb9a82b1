from flask_apscheduler import APScheduler
from flask_sqlalchemy import SQLAlchemy

db = SQLAlchemy()
scheduler = APScheduler()


def init_extensions(app) -> None:
    db.init_app(app)
    # Create tables (seeds the hyperparameter defaults on first run)
    with app.app_context():
        db.create_all()

    # Training runs are only queued through the scheduler outside of tests
    if app.config.get("TESTING"):
        return

    scheduler.init_app(app)
    scheduler.start()
