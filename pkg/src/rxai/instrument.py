"""Pass counters used to check the analytic cost of each saliency method.

Counting is scoped with :func:`count_passes`; outside such a block ``tick`` is
a no-op. Counters live in a context variable, so concurrent evaluations in
other threads are not mixed in.
"""
from __future__ import annotations

import contextlib
import contextvars
from dataclasses import dataclass


@dataclass
class PassCounter:
    full: int = 0
    head: int = 0
    backward: int = 0


_active: contextvars.ContextVar = contextvars.ContextVar("rxai_pass_counter", default=None)


def tick(kind: str, n: int = 1) -> None:
    counter = _active.get()
    if counter is not None:
        setattr(counter, kind, getattr(counter, kind) + n)


@contextlib.contextmanager
def count_passes():
    counter = PassCounter()
    token = _active.set(counter)
    try:
        yield counter
    finally:
        _active.reset(token)
