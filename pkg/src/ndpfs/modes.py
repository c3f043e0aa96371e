"""Execution-mode descriptors shared by the device and the host mediator.

A request runs in one of four modes: synchronously (the caller blocks until
the completion record exists, learning about it either by polling or by a
pushed notification), asynchronously (the caller gets a ticket and collects
the completion later), or delayed (the request is journalled and executed at
the next flush).
"""

from dataclasses import dataclass, field


@dataclass(frozen=True)
class Poll:
    """Completion by re-checking every `interval` seconds (device default
    when None)."""

    interval: float | None = None


@dataclass(frozen=True)
class Interrupt:
    """Completion pushed over the notification channel."""


@dataclass(frozen=True)
class Sync:
    """Block until the completion record is available."""

    completion: Poll | Interrupt = field(default_factory=Poll)


@dataclass(frozen=True)
class Async:
    """Submit and return a ticket; the completion is collected separately."""


@dataclass(frozen=True)
class Delayed:
    """Journal the request durably; it executes on the next flush."""
