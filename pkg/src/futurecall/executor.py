"""Workers that run dispatched calls and propagate failures.

Each dispatched call gets an independent worker. The worker first awaits any
unresolved argument futures; that wait is non-blocking, so a call parked on
its arguments never delays other dispatchable calls. Once the arguments are
concrete the tool behavior runs across its latency interval, the result
future is fulfilled (or failed), the call's access labels are released, and
the execution interval lands in the run trace.

When a call fails, every call transitively dependent on it is cancelled and
independent calls are left untouched. By default the dependency edges that
propagate cancellation are argument-future edges and read-after-failed-write
gate edges; a blind overwrite of a failed call's region does not consume the
failed effect, so write/write gate edges do not propagate unless strict mode
is enabled.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Any, Callable

from .errors import (
    CANCELLED_DEPENDENCY,
    EXECUTION_ERROR,
    ErrorInfo,
    GatesPendingError,
)
from .futures import CANCELLED, FAILED, FutureStore
from .scheduler import (
    DISPATCHED,
    DONE,
    FAILED as CALL_FAILED,
    RUNNING,
    CallRecord,
    Scheduler,
)
from .schema import DependencyAnnotation, FunctionSchema, substitute_resolved

# Edge kinds that carry a failed call's effect to its consumer.
PROPAGATING_EDGE_KINDS = {"arg", "gate-raw", "session-raw"}
ALL_GATE_EDGE_KINDS = PROPAGATING_EDGE_KINDS | {"gate-war", "gate-waw", "session-waw"}


class ToolExecutionError(Exception):
    """Raised by a tool behavior to signal its own failure."""


class StateStore:
    """Mock backend state addressed by rendered resource paths."""

    def __init__(self, initial: dict[str, Any] | None = None):
        self._data: dict[str, Any] = dict(initial or {})

    def read(self, path: str, subtree: bool = False) -> Any:
        if not subtree:
            return self._data.get(path)
        prefix = path.rstrip("/")
        return {
            p: v
            for p, v in self._data.items()
            if p == path or p.startswith(prefix + "/") or prefix == ""
        }

    def write(self, path: str, value: Any) -> None:
        self._data[path] = value

    def snapshot(self) -> dict[str, Any]:
        return {p: self._data[p] for p in sorted(self._data)}


@dataclass
class ToolBinding:
    """A registered tool: schema, annotation, latency model and behavior.

    ``behavior(args, invocation_index, state)`` must be deterministic for a
    given argument set and invocation index; that is what makes replays exact.
    The latency model is either one fixed delay or a per-invocation list (the
    last entry repeats).
    """

    name: str
    behavior: Callable[[dict, int, StateStore], Any]
    latency: float | list[float] = 0.0
    schema: FunctionSchema | None = None
    annotation: DependencyAnnotation | None = None
    session_reducer: Callable[[dict, Any], dict] | None = None
    invocations: int = 0

    def latency_for(self, invocation_index: int) -> float:
        if isinstance(self.latency, list):
            if not self.latency:
                return 0.0
            return float(self.latency[min(invocation_index, len(self.latency) - 1)])
        return float(self.latency)

    def next_invocation(self) -> int:
        index = self.invocations
        self.invocations += 1
        return index


class Executor:
    """Runs dispatched calls on logical workers and handles failure fallout."""

    def __init__(
        self,
        store: FutureStore,
        scheduler: Scheduler,
        clock,
        tools: dict[str, ToolBinding],
        state: StateStore,
        strict_cancellation: bool = False,
        on_exec_interval: Callable[[CallRecord], None] | None = None,
    ):
        self.store = store
        self.scheduler = scheduler
        self.clock = clock
        self.tools = tools
        self.state = state
        self.strict_cancellation = strict_cancellation
        self.on_exec_interval = on_exec_interval or (lambda call: None)
        self.in_flight = 0
        scheduler.on_dispatch = self.dispatch

    # -- dispatch ---------------------------------------------------------------

    def dispatch(self, call: CallRecord) -> None:
        if call.terminal:
            return
        pending = [
            g for g in call.blocking_gates if not self.store.state_of(g).is_terminal
        ]
        if pending:
            raise GatesPendingError(f"{call.call_id}: gates still pending: {sorted(pending)}")
        call.advance_status(DISPATCHED)
        call.dispatched_at = self.clock.now()
        self.in_flight += 1
        self.run_worker(call)

    def run_worker(self, call: CallRecord) -> None:
        """Await argument futures, then execute across the latency interval."""
        arg_futures = sorted(call.argument_futures)
        self.store.add_waiter(arg_futures, lambda: self._on_arguments_ready(call))

    def _on_arguments_ready(self, call: CallRecord) -> None:
        if call.terminal:
            self.in_flight -= 1
            return
        for fid in sorted(call.argument_futures):
            state = self.store.state_of(fid)
            if state.status in (FAILED, CANCELLED):
                # The producing call failed upstream; this call consumes it.
                origin = self._origin_of(state)
                cause = state.cause if state.status == CANCELLED else fid
                self.in_flight -= 1
                self.scheduler.mark_cancelled(call, cause, origin)
                return
        try:
            concrete = substitute_resolved(call.args, self.store)
        except Exception as exc:  # substitution failure surfaces as the call's failure
            self.in_flight -= 1
            self._fail(call, ErrorInfo(EXECUTION_ERROR, str(exc), call.call_id))
            return
        call.advance_status(RUNNING)
        call.exec_start = self.clock.now()
        latency = self.tools[call.tool].latency_for(call.invocation_index)
        self.clock.schedule(latency, lambda: self._complete(call, concrete))

    def _origin_of(self, state) -> str:
        if state.status == FAILED and state.error is not None:
            return state.error.origin_call or "unknown"
        if state.status == CANCELLED and state.cause:
            return self.store.owner_of(state.cause) or "unknown"
        return "unknown"

    def _complete(self, call: CallRecord, concrete_args: dict) -> None:
        self.in_flight -= 1
        if call.terminal:
            return
        call.exec_end = self.clock.now()
        tool = self.tools[call.tool]
        try:
            value = tool.behavior(concrete_args, call.invocation_index, self.state)
        except ToolExecutionError as exc:
            self._fail(call, ErrorInfo(EXECUTION_ERROR, str(exc), call.call_id))
            return
        except Exception as exc:
            self._fail(call, ErrorInfo(EXECUTION_ERROR, f"{type(exc).__name__}: {exc}", call.call_id))
            return
        call.advance_status(DONE)
        self.on_exec_interval(call)
        self.store.resolve(call.result_future, value)
        if call.session_version is not None:
            self.scheduler.session.complete_write(
                call.session_version, value, tool.session_reducer
            )
        self.scheduler.release(call)

    def _fail(self, call: CallRecord, error: ErrorInfo) -> None:
        call.error = error
        call.advance_status(CALL_FAILED)
        if call.exec_end is None:
            call.exec_end = self.clock.now()
        self.on_exec_interval(call)
        self.store.fail(call.result_future, error)
        # Cancel dependents before releasing labels so nothing downstream of
        # the failed effect gets dispatched by the gate resolutions.
        self.cancel_transitive(call.call_id)
        self.scheduler.release(call)

    # -- failure propagation -----------------------------------------------------

    def cancel_transitive(self, failed_call_id: str) -> list[str]:
        """Cancel every call transitively dependent on the failed one.

        Reachability runs over recorded dependency edges; only argument-future
        and read-after-write edges propagate unless strict mode widens that to
        every gate edge. Returns cancelled call ids in cancellation order.
        """
        root = self.scheduler.calls[failed_call_id]
        kinds = ALL_GATE_EDGE_KINDS if self.strict_cancellation else PROPAGATING_EDGE_KINDS
        consumers: dict[str, list[str]] = {}
        for edge in self.scheduler.edges:
            if edge.kind in kinds:
                consumers.setdefault(edge.producer, []).append(edge.consumer)
        cancelled: list[str] = []
        seen = {failed_call_id}
        frontier = [failed_call_id]
        while frontier:
            current = frontier.pop(0)
            for consumer_id in consumers.get(current, []):
                if consumer_id in seen:
                    continue
                seen.add(consumer_id)
                victim = self.scheduler.calls[consumer_id]
                if not victim.terminal:
                    self.scheduler.mark_cancelled(
                        victim, root.result_future, failed_call_id
                    )
                    cancelled.append(consumer_id)
                frontier.append(consumer_id)
        return cancelled
