"""Cascade reconciliation protocol: sessions, outcomes and transcripts."""

from .session import (
    LeakageLedger,
    ProtocolError,
    ReconcileOutcome,
    RegistryEntry,
    Session,
    reconcile,
)
from .transcript import ReplayReport, Transcript, TranscriptError, replay

__all__ = [
    "LeakageLedger",
    "ProtocolError",
    "ReconcileOutcome",
    "RegistryEntry",
    "ReplayReport",
    "Session",
    "Transcript",
    "TranscriptError",
    "reconcile",
    "replay",
]
