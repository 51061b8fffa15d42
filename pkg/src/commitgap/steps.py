"""Step vocabulary shared by table protocols and the process model.

Protocol code is written as generators that yield steps. Code between two
yields runs at a single virtual instant; a step occupies ``duration`` ms of
virtual time. Put steps issue the object-store transfer when they start and
land it when they end, so a kill between the two leaves nothing behind.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Any, Generator, Union

from .store import ObjectStore


@dataclass(frozen=True)
class Work:
    name: str
    duration: int


@dataclass(frozen=True)
class Put:
    name: str
    key: str
    payload: bytes
    duration: int
    size: int | None = None


@dataclass(frozen=True)
class Delete:
    name: str
    key: str
    duration: int = 0


@dataclass(frozen=True)
class Mark:
    """Zero-time trace event (phase boundaries, ``t_d`` and ``t_c``)."""

    name: str


@dataclass(frozen=True)
class WaitUntil:
    name: str
    at: int


@dataclass(frozen=True)
class Hang:
    """Block forever; only a kill or a cancellation ends the actor."""

    name: str


Step = Union[Work, Put, Delete, Mark, WaitUntil, Hang]
Program = Generator[Step, None, Any]


def drive(store: ObjectStore, program: Program) -> Any:
    """Run a step program to completion on the store's clock, no faults."""
    clock = store.clock
    try:
        step = next(program)
        while True:
            if isinstance(step, Put):
                pending = store.put(step.key, step.payload, step.duration, size=step.size)
                if pending.state == "in_flight":
                    store.complete(pending)
            elif isinstance(step, Delete):
                clock.sleep(step.duration)
                store.delete(step.key)
            elif isinstance(step, Work):
                clock.sleep(step.duration)
            elif isinstance(step, WaitUntil):
                if step.at > clock.now:
                    clock.advance_to(step.at)
            elif isinstance(step, Hang):
                raise RuntimeError(f"program hung at {step.name!r} with no scheduler")
            step = program.send(None)
    except StopIteration as stop:
        return stop.value
