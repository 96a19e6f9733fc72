from .app import create_app
from .service import Service

__all__ = ["create_app", "Service"]
