"""A transactional page store whose persistent log and pages only ever hold
committed state, so that restart is log analysis plus REDO."""

from .engine import Engine, EngineConfig
from .errors import (EngineError, IntegrityError, LockConflict, LockTimeout, LogicError, NotFound,
                     ResourceError, SimulatedCrash)
from .sim.disk import FaultPlan, VirtualDisk
from .snapshot import SnapshotHandle
from .store import RecordId

__version__ = "0.1.0"

__all__ = [
    "Engine", "EngineConfig", "EngineError", "FaultPlan", "IntegrityError", "LockConflict", "LockTimeout",
    "LogicError", "NotFound", "RecordId", "ResourceError", "SimulatedCrash", "SnapshotHandle", "VirtualDisk",
]
