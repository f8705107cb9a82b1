import os

basedir = os.path.abspath(os.path.dirname(__file__))


class Config:
    SECRET_KEY = os.environ.get("SECRET_KEY") or "super-secret-key"
    SQLALCHEMY_DATABASE_URI = os.environ.get(
        "DATABASE_URI"
    ) or "sqlite:///" + os.path.join(basedir, "app.db")
    SQLALCHEMY_TRACK_MODIFICATIONS = False
    DATA_DIR = os.environ.get("EAF_DATA_DIR") or os.path.join(basedir, "..", "data")
    RUNS_DIR = os.environ.get("EAF_RUNS_DIR") or os.path.join(basedir, "..", "runs")


def seed_override():
    """Seed from the EAF_SEED environment variable, or None when unset."""
    value = os.environ.get("EAF_SEED")
    if value is None or value == "":
        return None
    return int(value)
