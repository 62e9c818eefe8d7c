from __future__ import annotations

import time
from dataclasses import dataclass, field


@dataclass
class Ticker:
    """Lets at most ``hz`` events per second through."""

    hz: float
    _next: float = field(default=0.0, repr=False)

    def ready(self, now: float | None = None) -> bool:
        now = time.perf_counter() if now is None else now
        if now < self._next:
            return False
        self._next = now + 1.0 / max(1e-6, self.hz)
        return True
