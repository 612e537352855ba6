"""Sliding-window aggregation of per-snapshot labels into an execution verdict.

Each feed evaluates the window of the most recent ``window`` classifications
(fewer while the stream is still ramping up) against the full threshold.  A
stream that ends before ever filling one window gets a proportional check at
finalize time: the window is the whole stream of length n and the threshold
scales to ceil(threshold * n / window).  A malicious result latches; later
benign snapshots never clear it.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass
from typing import Optional


class VerdictError(Exception):
    pass


class OutOfOrder(VerdictError):
    pass


class InsufficientData(VerdictError):
    pass


@dataclass(frozen=True)
class VerdictConfig:
    window: int = 8
    threshold: int = 5
    min_snapshots: int = 1

    def __post_init__(self) -> None:
        if not 1 <= self.threshold <= self.window:
            raise ValueError("need 1 <= threshold <= window")
        if self.min_snapshots < 1:
            raise ValueError("min_snapshots must be >= 1")


@dataclass(frozen=True)
class Verdict:
    malicious: bool
    trigger_seq: Optional[int]  # set iff malicious
    windows_evaluated: int
    snapshots: int

    @property
    def label(self) -> str:
        return "Malicious" if self.malicious else "Benign"


class VerdictAggregator:
    """Single-session aggregation state; feed in strictly increasing seq order."""

    def __init__(self, config: VerdictConfig = VerdictConfig()):
        self.config = config
        self._window = deque(maxlen=config.window)
        self._in_window = 0  # corrupted count within the deque
        self._fed = 0
        self._last_seq: Optional[int] = None
        self._trigger: Optional[int] = None
        self._evaluations = 0

    @property
    def malicious(self) -> bool:
        return self._trigger is not None

    def feed(self, seq_no: int, corrupted: bool) -> Optional[int]:
        """Returns the latched trigger seq, or None while still pending."""
        if self._last_seq is not None and seq_no <= self._last_seq:
            raise OutOfOrder("seq %d after seq %d" % (seq_no, self._last_seq))
        self._last_seq = seq_no
        self._fed += 1
        if len(self._window) == self.config.window:
            self._in_window -= self._window[0]
        self._window.append(1 if corrupted else 0)
        self._in_window += 1 if corrupted else 0
        self._evaluations += 1
        if self._trigger is None and self._in_window >= self.config.threshold:
            self._trigger = seq_no
        return self._trigger

    def finalize(self) -> Verdict:
        if self._fed < self.config.min_snapshots:
            raise InsufficientData(
                "%d snapshots fed, need >= %d" % (self._fed, self.config.min_snapshots)
            )
        if self._trigger is None and self._fed < self.config.window:
            # Short stream: proportional threshold over the whole stream.
            effective = -(-self.config.threshold * self._fed // self.config.window)
            self._evaluations += 1
            if self._in_window >= effective:
                self._trigger = self._last_seq
        return Verdict(
            malicious=self._trigger is not None,
            trigger_seq=self._trigger,
            windows_evaluated=self._evaluations,
            snapshots=self._fed,
        )
