"""Deterministic event runtime shared by the simulated and wall-clock modes.

All protocol code runs as callbacks and generator-based coroutines on a
single logical executor draining one priority queue of timed events. In
sim-time mode the clock is virtual and runs are bitwise reproducible; in
wall-clock mode the same queue is drained by a background thread that
sleeps until each event's deadline. Protocol code never touches threads.

Coroutines are plain generators that ``yield`` :class:`Future` objects and
are resumed with the future's result (or have its exception thrown in).
"""

from __future__ import annotations

import heapq
import itertools
import threading
import time
from typing import Callable, Generator, Optional


class Future:
    """Single-assignment result container with completion callbacks."""

    __slots__ = ("_done", "_result", "_exception", "_callbacks")

    def __init__(self):
        self._done = False
        self._result = None
        self._exception: Optional[BaseException] = None
        self._callbacks: list[Callable[[Future], None]] = []

    def done(self) -> bool:
        return self._done

    def result(self):
        if not self._done:
            raise RuntimeError("future is not done")
        if self._exception is not None:
            raise self._exception
        return self._result

    def exception(self) -> Optional[BaseException]:
        if not self._done:
            raise RuntimeError("future is not done")
        return self._exception

    def set_result(self, value) -> None:
        if self._done:
            return
        self._done = True
        self._result = value
        self._fire()

    def set_exception(self, exc: BaseException) -> None:
        if self._done:
            return
        self._done = True
        self._exception = exc
        self._fire()

    def add_done_callback(self, fn: Callable[[Future], None]) -> None:
        if self._done:
            fn(self)
        else:
            self._callbacks.append(fn)

    def _fire(self) -> None:
        callbacks, self._callbacks = self._callbacks, []
        for fn in callbacks:
            fn(self)


class TimerHandle:
    __slots__ = ("when", "cancelled")

    def __init__(self, when: float):
        self.when = when
        self.cancelled = False

    def cancel(self) -> None:
        self.cancelled = True


class Scheduler:
    """Virtual-time scheduler: a heap of (time, seq, fn) drained in order.

    ``seq`` breaks ties FIFO, which makes same-instant execution order
    deterministic.
    """

    def __init__(self, start: float = 0.0):
        self._now = start
        self._heap: list[tuple[float, int, TimerHandle, Callable[[], None]]] = []
        self._seq = itertools.count()

    def now(self) -> float:
        return self._now

    def call_at(self, when: float, fn: Callable[[], None]) -> TimerHandle:
        if when < self._now:
            when = self._now
        handle = TimerHandle(when)
        heapq.heappush(self._heap, (when, next(self._seq), handle, fn))
        return handle

    def call_later(self, delay: float, fn: Callable[[], None]) -> TimerHandle:
        return self.call_at(self._now + delay, fn)

    # -- coroutine support ---------------------------------------------------

    def spawn(self, gen: Generator) -> Future:
        """Run a generator-based coroutine; the returned future carries its result."""
        done = Future()
        self._step(gen, done, None, None)
        return done

    def _step(self, gen, done: Future, value, exc) -> None:
        try:
            if exc is not None:
                awaited = gen.throw(exc)
            else:
                awaited = gen.send(value)
        except StopIteration as stop:
            done.set_result(stop.value)
            return
        except Exception as e:  # noqa: BLE001 - coroutine failure propagates via future
            done.set_exception(e)
            return
        # Resume through the queue, never synchronously: keeps recursion flat
        # even for long chains of already-completed awaits.
        awaited.add_done_callback(
            lambda fut: self.call_at(
                self._now, lambda: self._step(gen, done, _value_of(fut), fut.exception())
            )
        )

    def sleep(self, delay: float) -> Future:
        fut = Future()
        self.call_later(delay, lambda: fut.set_result(None))
        return fut

    def with_timeout(self, fut: Future, delay: float, exc_factory: Callable[[], BaseException]) -> Future:
        """Future that mirrors ``fut`` unless ``delay`` elapses first."""
        out = Future()
        timer = self.call_later(delay, lambda: out.set_exception(exc_factory()))

        def _mirror(f: Future):
            timer.cancel()
            if f.exception() is not None:
                out.set_exception(f.exception())
            else:
                out.set_result(f.result())

        fut.add_done_callback(_mirror)
        return out

    # -- draining ------------------------------------------------------------

    def run_until(self, deadline: float) -> None:
        """Execute every event scheduled at or before ``deadline``."""
        while self._heap and self._heap[0][0] <= deadline:
            when, _, handle, fn = heapq.heappop(self._heap)
            if handle.cancelled:
                continue
            self._now = when
            fn()
        if deadline > self._now:
            self._now = deadline

    def run_until_done(self, fut: Future, deadline: float):
        """Drain events until ``fut`` completes (its result is returned) or
        virtual ``deadline`` passes (TimeoutError)."""
        while not fut.done() and self._heap and self._heap[0][0] <= deadline:
            when, _, handle, fn = heapq.heappop(self._heap)
            if handle.cancelled:
                continue
            self._now = when
            fn()
        if not fut.done():
            raise TimeoutError("deadline reached before future completed")
        return fut.result()

    def idle(self) -> bool:
        return not self._heap


def _value_of(fut: Future):
    return None if fut.exception() is not None else fut.result()


def gather(futures: list[Future]) -> Future:
    """Complete with the list of results, or the first exception raised."""
    out = Future()
    results = [None] * len(futures)
    remaining = [len(futures)]
    if not futures:
        out.set_result([])
        return out

    def _one(i: int, f: Future):
        if f.exception() is not None:
            out.set_exception(f.exception())
            return
        results[i] = f.result()
        remaining[0] -= 1
        if remaining[0] == 0:
            out.set_result(list(results))

    for i, f in enumerate(futures):
        f.add_done_callback(lambda fut, i=i: _one(i, fut))
    return out


class WallScheduler(Scheduler):
    """The same queue paced to the wall clock by a background thread.

    External threads (HTTP handlers, the CLI) inject work with :meth:`post`
    and block on the returned event; all protocol code still executes on the
    single loop thread.
    """

    def __init__(self):
        super().__init__(start=0.0)
        self._cond = threading.Condition()
        self._stopped = False
        self._t0 = time.monotonic()
        self._thread: Optional[threading.Thread] = None

    def now(self) -> float:
        return time.monotonic() - self._t0

    def call_at(self, when: float, fn: Callable[[], None]) -> TimerHandle:
        with self._cond:
            handle = TimerHandle(when)
            heapq.heappush(self._heap, (when, next(self._seq), handle, fn))
            self._cond.notify()
        return handle

    def call_later(self, delay: float, fn: Callable[[], None]) -> TimerHandle:
        return self.call_at(self.now() + delay, fn)

    def start(self) -> None:
        self._thread = threading.Thread(target=self._loop, name="deon-loop", daemon=True)
        self._thread.start()

    def stop(self) -> None:
        with self._cond:
            self._stopped = True
            self._cond.notify()
        if self._thread is not None:
            self._thread.join(timeout=5)

    def _loop(self) -> None:
        while True:
            with self._cond:
                while not self._stopped:
                    if self._heap:
                        delay = self._heap[0][0] - self.now()
                        if delay <= 0:
                            break
                        self._cond.wait(timeout=min(delay, 0.5))
                    else:
                        self._cond.wait(timeout=0.5)
                if self._stopped:
                    return
                _, _, handle, fn = heapq.heappop(self._heap)
            if handle.cancelled:
                continue
            self._now = self.now()
            fn()

    def post_blocking(self, make_future: Callable[[], Future], timeout: float):
        """Run ``make_future`` on the loop thread and wait for its future."""
        event = threading.Event()
        box: dict = {}

        def _on_loop():
            try:
                fut = make_future()
            except BaseException as e:  # noqa: BLE001 - marshalled to caller
                box["exc"] = e
                event.set()
                return

            def _done(f: Future):
                box["exc"] = f.exception()
                if f.exception() is None:
                    box["result"] = f.result()
                event.set()

            fut.add_done_callback(_done)

        self.call_at(self.now(), _on_loop)
        if not event.wait(timeout):
            raise TimeoutError("loop call timed out")
        if box.get("exc") is not None:
            raise box["exc"]
        return box.get("result")
