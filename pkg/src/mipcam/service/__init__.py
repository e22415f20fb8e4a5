from .app import create_app
from .client import ServiceClient

__all__ = ["create_app", "ServiceClient"]
