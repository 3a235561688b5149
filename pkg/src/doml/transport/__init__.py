"""Message fabric between spout, workers and master."""

from .latency import Delay, LatencyModel
from .lockstep import DeadlockError, LockstepRunner, RunResult, lockstep_run
from .spout import dispatch, spout_dispatch, synthetic_stream, task_order
from .wire import Envelope, WireError, decode, encode

__all__ = [
    "DeadlockError",
    "Delay",
    "Envelope",
    "LatencyModel",
    "LockstepRunner",
    "RunResult",
    "WireError",
    "decode",
    "dispatch",
    "encode",
    "lockstep_run",
    "spout_dispatch",
    "synthetic_stream",
    "task_order",
]
