"""Clock and timer abstraction so protocol code runs unchanged under real
threads or under the simulator's logical clock."""

from __future__ import annotations

import threading
import time
from typing import Callable, Protocol


class Runtime(Protocol):
    def now(self) -> float:
        """Seconds; epoch-based live, simulation-time in the simulator."""

    def call_later(self, delay_s: float, fn: Callable[[], None]) -> None:
        """Schedule fn; fired callbacks must tolerate being stale."""


class ThreadRuntime:
    """Wall-clock runtime backed by daemon timer threads."""

    def now(self) -> float:
        return time.time()

    def call_later(self, delay_s: float, fn: Callable[[], None]) -> None:
        timer = threading.Timer(max(delay_s, 0.0), fn)
        timer.daemon = True
        timer.start()
