from __future__ import annotations

import logging
import threading
from dataclasses import dataclass

logger = logging.getLogger("oops")


@dataclass(frozen=True)
class Warning_:
    stage: str
    message: str

    def to_json(self) -> dict:
        return {"stage": self.stage, "message": self.message}


class Diagnostics:
    """Thread-safe collector of non-fatal warnings emitted during a run."""

    def __init__(self):
        self._lock = threading.Lock()
        self._items: list[Warning_] = []

    def warn(self, stage: str, message: str) -> None:
        logger.warning("[%s] %s", stage, message)
        with self._lock:
            self._items.append(Warning_(stage, message))

    @property
    def warnings(self) -> list[Warning_]:
        with self._lock:
            # sorted so parallel stages still produce a stable report
            return sorted(self._items, key=lambda w: (w.stage, w.message))

    def __len__(self) -> int:
        return len(self._items)
