"""gunicorn entrypoint (``gunicorn wsgi:app``); ``flask --app wsgi eaf ...`` runs the experiment CLI."""

from app import create_app

app = create_app()
