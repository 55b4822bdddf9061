"""HTTP service exposing the simulator as a local API."""

from .app import create_app

__all__ = ["create_app"]
