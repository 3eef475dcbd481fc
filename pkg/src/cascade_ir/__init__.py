"""Cascade information reconciliation: protocol engine, simulation harness and optimizer."""

__version__ = "0.1.0"

from .bitframe import BlockRef, Permutation, UsageError, hamming_distance, make_permutation, parity
from .channel import BscModel, frame_pair, random_frame, transmit
from .protocol import ReconcileOutcome, Session, reconcile
from .schedules import BlockSchedule, ScheduleError, ScheduleRequest, build_schedule, custom_schedule

__all__ = [
    "BlockRef",
    "BlockSchedule",
    "BscModel",
    "Permutation",
    "ReconcileOutcome",
    "ScheduleError",
    "ScheduleRequest",
    "Session",
    "UsageError",
    "__version__",
    "build_schedule",
    "custom_schedule",
    "frame_pair",
    "hamming_distance",
    "make_permutation",
    "parity",
    "random_frame",
    "reconcile",
    "transmit",
]
