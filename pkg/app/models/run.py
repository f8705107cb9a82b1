from sqlalchemy import Column, Float, Integer, String, Text

from app.extensions import db


class RunModel(db.Model):
    config_hash = Column(String(64), primary_key=True)
    name = Column(String(255), nullable=False)
    config = Column(Text, nullable=False)
    seed = Column(Integer, nullable=False, default=0)
    epoch_losses = Column(Text, default="[]")
    metrics = Column(Text, default="{}")
    disambiguation_accuracy = Column(Float, default=0.0)
    wall_clock = Column(Float, default=0.0)
    status = Column(String(32), nullable=False, default="completed")
    trainable_parameters = Column(Integer, default=0)
    total_parameters = Column(Integer, default=0)
