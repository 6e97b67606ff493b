"""Event-callback registry polled by the scheduler between tasks.

Producers enqueue ``EventCallback`` entries from any thread without taking a
lock (``deque.append`` is atomic under the interpreter lock). The poll body
is single-entrant: one thread drains the inbox and re-checks the pending
vector; contenders fail the guard acquisition and return immediately so they
can go work on other tasks instead.
"""

from __future__ import annotations

import threading
from collections import deque
from typing import Callable, Optional


class EventCallback:
    """An event paired with the closure to run once it completes."""

    __slots__ = ("event", "callback", "on_abandon")

    def __init__(self, event, callback: Callable[[], None], on_abandon=None):
        self.event = event
        self.callback = callback
        # Invoked instead of callback when the registry shuts down first.
        self.on_abandon: Optional[Callable[[BaseException], None]] = on_abandon


class PollRegistry:
    """Multi-producer inbox plus the poll-owned pending vector."""

    def __init__(self):
        self._inbox: deque[EventCallback] = deque()
        self._pending: list[EventCallback] = []
        self._guard = threading.Lock()
        self._entry_lock = threading.Lock()
        self._entries = 0
        self.entry_high_water = 0
        self.fired_total = 0
        # Hooks invoked (guard held) at poll start, e.g. lazy-device flush.
        self._flush_hooks: list[Callable[[], None]] = []
        # Wraps callback execution so a clock pump can track in-flight work.
        self._activity_enter: Optional[Callable[[], None]] = None
        self._activity_exit: Optional[Callable[[], None]] = None

    def set_activity_hooks(self, enter, exit) -> None:
        self._activity_enter = enter
        self._activity_exit = exit

    def add_flush_hook(self, fn: Callable[[], None]) -> None:
        self._flush_hooks.append(fn)

    def add(self, ec: EventCallback) -> None:
        """Enqueue from any thread; lock-free for producers."""
        self._inbox.append(ec)

    def inbox_size(self) -> int:
        return len(self._inbox)

    def pending_count(self) -> int:
        return len(self._pending)

    def has_waiting(self) -> bool:
        return bool(self._inbox) or bool(self._pending)

    def _run(self, ec: EventCallback) -> None:
        enter, leave = self._activity_enter, self._activity_exit
        if enter is not None:
            enter()
        try:
            ec.callback()
        except BaseException:  # noqa: BLE001
            # Callback faults are the producer's to surface (via its
            # future); they must never take down the polling thread.
            pass
        finally:
            if leave is not None:
                leave()

    def poll(self) -> int:
        """Drain the inbox and re-check pending entries; fire what completed.

        Returns the number of callbacks fired. A thread that fails to take
        the guard returns 0 immediately without waiting.
        """
        if not self._guard.acquire(blocking=False):
            return 0
        with self._entry_lock:
            self._entries += 1
            if self._entries > self.entry_high_water:
                self.entry_high_water = self._entries
        fired = 0
        try:
            for hook in self._flush_hooks:
                hook()
            while True:
                try:
                    ec = self._inbox.popleft()
                except IndexError:
                    break
                if ec.event.is_complete():
                    self._run(ec)
                    fired += 1
                else:
                    self._pending.append(ec)
            if self._pending:
                still = []
                for ec in self._pending:
                    if ec.event.is_complete():
                        self._run(ec)
                        fired += 1
                    else:
                        still.append(ec)
                self._pending = still
            self.fired_total += fired
        finally:
            with self._entry_lock:
                self._entries -= 1
            self._guard.release()
        return fired

    def abandon_all(self, error: BaseException) -> int:
        """Fail every registered callback that has not fired (shutdown path).

        Entries whose events already completed still get their callback; the
        rest get ``on_abandon`` so no future is leaked in Pending state.
        """
        abandoned = 0
        with self._guard:
            entries = list(self._pending)
            self._pending = []
            while True:
                try:
                    entries.append(self._inbox.popleft())
                except IndexError:
                    break
            for ec in entries:
                if ec.event.is_complete():
                    self._run(ec)
                    continue
                abandoned += 1
                if ec.on_abandon is not None:
                    try:
                        ec.on_abandon(error)
                    except BaseException:  # noqa: BLE001
                        pass
        return abandoned
