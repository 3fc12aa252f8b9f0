class EngineError(Exception):
    pass


class SimulatedCrash(EngineError):
    """Raised by the virtual disk once its fault plan fires; the engine is dead afterwards."""


class ResourceError(EngineError):
    pass


class LogicError(EngineError):
    pass


class IntegrityError(EngineError):
    pass


class LockTimeout(EngineError):
    """Lock wait exceeded its timeout; the transaction must abort."""


class LockConflict(LockTimeout):
    """Non-blocking lock request could not be granted."""


class NotFound(EngineError):
    pass
