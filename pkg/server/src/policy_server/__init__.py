from .app import ServerConfig, create_app
from .model import PolicyModel

__all__ = ["PolicyModel", "ServerConfig", "create_app"]
