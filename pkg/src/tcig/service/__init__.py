from .store import JobStore
from .runner import JobService
from .app import create_app

__all__ = ["JobStore", "JobService", "create_app"]
