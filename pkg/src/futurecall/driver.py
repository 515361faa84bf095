"""The conversation loop: decode turns, dispatch calls, integrate results.

The driver owns the standard call/return protocol: every assistant tool call
is immediately followed by a tool message for the same call id, always. In
async modes that tool message carries a future placeholder (or a futurized
output structure) instead of the finished result, and resolved values are
bound into the context through user messages at turn boundaries. Failures and
cancellations are likewise injected as user messages; if they land after the
model's final answer the conversation reopens for recovery turns.

Decoding is strictly sequential, one turn at a time. Scripted decoders pick
their next turn by the integration state of required call outcomes, so sync
and async runs share one script; a chat-completions client can stand in for
the scripted decoder in wall-clock mode.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass
from typing import Any

from .clock import VirtualClock, WallClock
from .errors import (
    CANCELLED_DEPENDENCY,
    EXECUTION_ERROR,
    ContextOverflowError,
    DeadlockError,
    ErrorInfo,
    LeakedFutureError,
    ProtocolViolationError,
    ScriptExhaustedError,
    ValidationError,
)
from .executor import Executor, StateStore, ToolExecutionError
from .futures import CANCELLED, FAILED, RESOLVED, FutureStore
from .scheduler import DONE, FAILED as CALL_FAILED, CallRecord, Scheduler, SessionState
from .schema import AWAIT_FUTURE_NAME, futurize_output_template
from .trace import AWAIT, DECODE, EXEC, INTEGRATE, RunTrace
from .workload import (
    CallSpec,
    ScriptTurn,
    WorkloadSpec,
    build_tool_bindings,
    parse_call_ref,
)

SYNC_SEQUENTIAL = "sync-sequential"
SYNC_PARALLEL = "sync-parallel"
ASYNC_SEQUENTIAL = "async-sequential"
ASYNC_PARALLEL = "async-parallel"
MODES = (SYNC_SEQUENTIAL, SYNC_PARALLEL, ASYNC_SEQUENTIAL, ASYNC_PARALLEL)

ENDPOINT_ENV = "FUTURECALL_ENDPOINT"
API_KEY_ENV = "FUTURECALL_API_KEY"
MODEL_ENV = "FUTURECALL_MODEL"


def is_async(mode: str) -> bool:
    return mode in (ASYNC_SEQUENTIAL, ASYNC_PARALLEL)


def is_parallel(mode: str) -> bool:
    return mode in (SYNC_PARALLEL, ASYNC_PARALLEL)


@dataclass(frozen=True)
class ToolCall:
    call_id: str
    name: str
    args: Any

    def to_json(self) -> dict:
        return {"call_id": self.call_id, "name": self.name, "args": self.args}


@dataclass
class Message:
    role: str  # system | user | assistant | tool
    content: Any = None
    tool_calls: list[ToolCall] | None = None
    call_id: str | None = None
    bound_futures: dict[str, Any] | None = None

    def to_json(self) -> dict:
        out: dict[str, Any] = {"role": self.role, "content": self.content}
        if self.tool_calls is not None:
            out["tool_calls"] = [tc.to_json() for tc in self.tool_calls]
        if self.call_id is not None:
            out["call_id"] = self.call_id
        if self.bound_futures is not None:
            out["bound_futures"] = self.bound_futures
        return out


def lint_context(messages: list[Message]) -> list[str]:
    """Check the call/return protocol over a full context.

    Returns one description per violation: an assistant tool call must be
    immediately followed by tool messages for exactly its call ids, in order.
    """
    violations: list[str] = []
    for i, msg in enumerate(messages):
        if msg.role != "assistant" or not msg.tool_calls:
            continue
        for j, tool_call in enumerate(msg.tool_calls):
            pos = i + 1 + j
            follow = messages[pos] if pos < len(messages) else None
            if follow is None or follow.role != "tool" or follow.call_id != tool_call.call_id:
                got = f"{follow.role}/{follow.call_id}" if follow else "end of context"
                violations.append(
                    f"message {i}: tool call {tool_call.call_id} not followed by "
                    f"its tool message (got {got})"
                )
    return violations


class ScriptedDecoder:
    """Replays a workload script, one turn per call on sequential APIs.

    A script entry emitting several calls decodes as a single turn under a
    parallel-calling API and as consecutive one-call turns (each of the
    entry's decode time) under a sequential API. Entry triggers gate the
    first resulting turn.
    """

    realtime = False

    def __init__(self, script: list[ScriptTurn], parallel_api: bool):
        self._turns: list[ScriptTurn] = []
        for entry in script:
            if entry.is_final or parallel_api or len(entry.emit) <= 1:
                self._turns.append(entry)
                continue
            for i, call in enumerate(entry.emit):
                self._turns.append(
                    ScriptTurn(
                        emit=[call],
                        decode_time=entry.decode_time,
                        requires=list(entry.requires) if i == 0 else [],
                    )
                )
        self._cursor = 0

    def exhausted(self) -> bool:
        return self._cursor >= len(self._turns)

    def requires(self) -> list[str]:
        return self._turns[self._cursor].requires

    def next_turn(self, context: list[Message]) -> ScriptTurn:
        turn = self._turns[self._cursor]
        self._cursor += 1
        return turn


class ChatCompletionsDecoder:
    """Live decoder speaking the chat-completions wire format.

    Endpoint, credentials and model come from the environment
    (FUTURECALL_ENDPOINT, FUTURECALL_API_KEY, FUTURECALL_MODEL); the key is
    sent as a bearer token and never logged. Only usable with a wall clock.
    """

    realtime = True

    def __init__(
        self,
        tool_schemas: list[dict],
        endpoint: str | None = None,
        api_key: str | None = None,
        model: str | None = None,
        max_turns: int = 32,
    ):
        self.endpoint = endpoint or os.environ.get(ENDPOINT_ENV, "")
        self.api_key = api_key or os.environ.get(API_KEY_ENV, "")
        self.model = model or os.environ.get(MODEL_ENV, "")
        if not self.endpoint:
            raise ValidationError(f"live decoder needs {ENDPOINT_ENV}")
        self.tool_schemas = tool_schemas
        self.max_turns = max_turns
        self._turns_used = 0

    def exhausted(self) -> bool:
        return self._turns_used >= self.max_turns

    def requires(self) -> list[str]:
        return []

    def next_turn(self, context: list[Message]) -> ScriptTurn:
        import requests

        self._turns_used += 1
        payload = {
            "model": self.model,
            "messages": [_to_chat_message(m) for m in context],
            "tools": [{"type": "function", "function": s} for s in self.tool_schemas],
        }
        headers = {"Content-Type": "application/json"}
        if self.api_key:
            headers["Authorization"] = f"Bearer {self.api_key}"
        response = requests.post(
            self.endpoint.rstrip("/") + "/chat/completions",
            json=payload,
            headers=headers,
            timeout=120,
        )
        response.raise_for_status()
        message = response.json()["choices"][0]["message"]
        if message.get("tool_calls"):
            emit = [
                CallSpec(
                    call_id=tc.get("id", f"live{self._turns_used}_{i}"),
                    name=tc["function"]["name"],
                    args=json.loads(tc["function"].get("arguments") or "{}"),
                )
                for i, tc in enumerate(message["tool_calls"])
            ]
            return ScriptTurn(emit=emit)
        return ScriptTurn(final=message.get("content") or "")


def _to_chat_message(msg: Message) -> dict:
    content = msg.content
    if not isinstance(content, (str, type(None))):
        content = json.dumps(content, sort_keys=True)
    out: dict[str, Any] = {"role": msg.role, "content": content or ""}
    if msg.tool_calls:
        out["tool_calls"] = [
            {
                "id": tc.call_id,
                "type": "function",
                "function": {"name": tc.name, "arguments": json.dumps(tc.args)},
            }
            for tc in msg.tool_calls
        ]
    if msg.role == "tool" and msg.call_id is not None:
        out["tool_call_id"] = msg.call_id
    return out


def await_detection_offset(tokens: list[tuple[str, float]] | None, decode_time: float) -> float:
    """Time offset at which an await call's argument array is fully parseable.

    Decoding may be truncated there: the name alone starts polling, but values
    cannot be returned before the id list is syntactically complete. Without a
    token timeline the whole turn must decode.
    """
    if not tokens:
        return decode_time
    text = ""
    for token, offset in tokens:
        text += token
        name_at = text.find(AWAIT_FUTURE_NAME)
        if name_at < 0:
            continue
        open_at = text.find("[", name_at)
        if open_at < 0:
            continue
        if text.find("]", open_at) >= 0:
            return min(offset, decode_time)
    return decode_time


class TurnDriver:
    """Runs one conversation over a workload in a given mode."""

    def __init__(
        self,
        workload: WorkloadSpec,
        mode: str,
        clock=None,
        decoder=None,
        strict_cancellation: bool | None = None,
    ):
        if mode not in MODES:
            raise ValidationError(f"unknown mode {mode!r}")
        self.workload = workload
        self.mode = mode
        self.clock = clock if clock is not None else VirtualClock()
        if decoder is not None and decoder.realtime and self.clock.is_virtual:
            raise ValidationError("a live decoder requires the wall clock")
        self.store = FutureStore(self.clock)
        self.state = StateStore()
        self.session = SessionState(store=self.store, bindings=dict(workload.session_bindings))
        self.scheduler = Scheduler(self.store, self.session, self.clock)
        strict = (
            workload.strict_cancellation if strict_cancellation is None else strict_cancellation
        )
        self.tools = build_tool_bindings(workload)
        self.executor = Executor(
            self.store,
            self.scheduler,
            self.clock,
            self.tools,
            self.state,
            strict_cancellation=strict,
            on_exec_interval=self._record_exec,
        )
        self.decoder = decoder or ScriptedDecoder(workload.script, is_parallel(mode))
        self.trace = RunTrace(mode=mode)
        self.messages: list[Message] = []
        self.call_futures: dict[str, str] = {}
        self.call_turn: dict[str, int] = {}
        self.calls: dict[str, CallRecord] = {}
        self._reported: set[str] = set()  # call ids whose outcome is in context
        self._integrated_fids: set[str] = set()
        self._turn_no = 0
        self._boundary_no = 0
        self._live_t0 = 0.0
        self.final_answer: str | None = None

    # -- trace helpers -----------------------------------------------------------

    def _record_exec(self, call: CallRecord) -> None:
        if call.exec_start is None:
            return
        turn = self.call_turn.get(call.call_id, 0)
        self.trace.record(call.exec_start, call.exec_end, EXEC, call.call_id, turn)

    def _append(self, message: Message) -> None:
        self.messages.append(message)
        if len(self.messages) > self.workload.context_budget:
            raise ContextOverflowError(
                f"context grew past the budget of {self.workload.context_budget} messages"
            )

    # -- main loop ------------------------------------------------------------------

    def run(self) -> RunTrace:
        self.trace.started = self.clock.now()
        if self.workload.task:
            with self.clock.guard():
                self._append(Message(role="user", content=self.workload.task))
        while True:
            with self.clock.guard():
                self._boundary()
            if self.final_answer is not None:
                if self._drained():
                    break
                self._wait_progress()
                continue
            if self.decoder.exhausted():
                raise ScriptExhaustedError(
                    "script ended without a final answer for the current state"
                )
            if not self._trigger_satisfied(self.decoder.requires()):
                self._wait_progress()
                continue
            self._live_t0 = self.clock.now()
            turn = self.decoder.next_turn(self.messages)
            self._execute_turn(turn)
        self._finish()
        return self.trace

    def _drained(self) -> bool:
        with self.clock.guard():
            if any(not c.terminal for c in self.calls.values()):
                return False
            return not self._has_unreported_outcomes()

    def _has_unreported_outcomes(self) -> bool:
        for call_id, fid in self.call_futures.items():
            if call_id in self._reported:
                continue
            if self.store.state_of(fid).is_terminal:
                return True
        return False

    def _trigger_satisfied(self, requires: list[str]) -> bool:
        with self.clock.guard():
            return all(ref in self._reported for ref in requires)

    def _wait_progress(self) -> None:
        before = self.store.terminal_count
        try:
            self.clock.run_until(lambda: self.store.terminal_count > before)
        except DeadlockError as exc:
            pending = sorted(c.call_id for c in self.calls.values() if not c.terminal)
            raise DeadlockError(
                f"conversation stalled; non-terminal calls: {pending}; "
                f"next trigger: {self.decoder.requires() if not self.decoder.exhausted() else None}"
            ) from exc

    def _finish(self) -> None:
        with self.clock.guard():
            self.trace.finished = self.clock.now()
            leaked = self.store.pending_ids()
            if leaked:
                raise LeakedFutureError(f"pending futures at drain time: {sorted(leaked)}")
            violations = lint_context(self.messages)
            if violations:
                raise ProtocolViolationError("; ".join(violations))
            self.trace.final_answer = self.final_answer
            self.trace.final_state = self.state.snapshot()
            self.trace.messages = list(self.messages)
            self.trace.edges = [
                (e.producer, e.consumer, e.kind) for e in self.scheduler.edges
            ]
            for call_id, call in self.calls.items():
                self.trace.call_status[call_id] = call.status
                if call.exec_start is not None and call.exec_end is not None:
                    self.trace.call_durations[call_id] = call.exec_end - call.exec_start
                else:
                    self.trace.call_durations[call_id] = 0.0

    # -- turn boundary work ------------------------------------------------------------

    def _boundary(self) -> None:
        """Integrate newly resolved outcomes; inject failure reports (async)."""
        if not is_async(self.mode):
            return
        bindings: dict[str, Any] = {}
        failures: list[dict] = []
        now = self.clock.now()
        for call_id, fid in self.call_futures.items():
            if call_id in self._reported:
                continue
            state = self.store.state_of(fid)
            if not state.is_terminal:
                continue
            self._reported.add(call_id)
            if state.status == RESOLVED:
                bindings[fid] = state.value
                self._integrated_fids.add(fid)
                for field_id in self.store.field_ids(fid):
                    field_state = self.store.state_of(field_id)
                    if field_state.status == RESOLVED:
                        bindings[field_id] = field_state.value
                    self._integrated_fids.add(field_id)
            else:
                error = self._call_error(call_id, state)
                failures.append(
                    {
                        "call": call_id,
                        "future": fid,
                        "kind": error.kind,
                        "message": error.message,
                        "origin_call": error.origin_call,
                    }
                )
                self._integrated_fids.add(fid)
        if bindings:
            ordered = {fid: bindings[fid] for fid in sorted(bindings)}
            self._append(
                Message(
                    role="user",
                    content={"resolved_futures": ordered},
                    bound_futures=ordered,
                )
            )
            self.trace.record(now, now, INTEGRATE, f"b{self._boundary_no}", self._turn_no)
            self._boundary_no += 1
        if failures:
            failures.sort(key=lambda f: f["call"])
            self._append(Message(role="user", content={"failed_calls": failures}))
            self.trace.record(now, now, INTEGRATE, f"b{self._boundary_no}", self._turn_no)
            self._boundary_no += 1
            if self.final_answer is not None:
                # Failure reports after the final answer reopen the
                # conversation for recovery turns.
                self.final_answer = None

    def _call_error(self, call_id: str, state) -> ErrorInfo:
        call = self.calls.get(call_id)
        if call is not None and call.error is not None:
            return call.error
        if state.status == FAILED and state.error is not None:
            return state.error
        origin = self.store.owner_of(state.cause) if state.cause else None
        return ErrorInfo(CANCELLED_DEPENDENCY, "cancelled", origin)

    # -- decode ------------------------------------------------------------------------

    def _decode(self, duration: float) -> tuple[float, float]:
        if self.decoder.realtime:
            # A live decoder consumed real time inside next_turn already.
            t0, t1 = self._live_t0, self.clock.now()
        else:
            t0 = self.clock.now()
            self.clock.run_until_time(t0 + duration)
            t1 = t0 + duration
        self._turn_no += 1
        self.trace.record(t0, t1, DECODE, f"turn{self._turn_no}", self._turn_no)
        return t0, t1

    def _execute_turn(self, turn: ScriptTurn) -> None:
        if turn.is_final:
            self._decode(turn.decode_time)
            with self.clock.guard():
                self._append(Message(role="assistant", content=turn.final))
                self.final_answer = turn.final
            return
        if turn.is_await:
            self._handle_await(turn)
            return
        if is_async(self.mode):
            self._emit_async(turn)
        elif self.mode == SYNC_SEQUENTIAL:
            self._emit_sync_sequential(turn)
        else:
            self._emit_sync_parallel(turn)

    # -- async emission -------------------------------------------------------------------

    def _emit_async(self, turn: ScriptTurn) -> None:
        self._decode(turn.decode_time)
        with self.clock.guard():
            prepared: list[tuple[CallSpec, CallRecord]] = []
            tool_calls: list[ToolCall] = []
            for spec in turn.emit:
                args = self._substitute_refs_async(spec.args)
                tool = self.tools[spec.name]
                record = CallRecord(
                    call_id=spec.call_id,
                    tool=spec.name,
                    args=args,
                    annotation=tool.annotation,
                    invocation_index=tool.next_invocation(),
                )
                record.result_future = self.store.create(
                    kind="result", owner_call=spec.call_id
                )
                self.calls[spec.call_id] = record
                self.call_turn[spec.call_id] = self._turn_no
                tool_calls.append(ToolCall(spec.call_id, spec.name, args))
                prepared.append((spec, record))
            self._append(Message(role="assistant", content="", tool_calls=tool_calls))
            for spec, record in prepared:
                annotation = record.annotation
                template = annotation.outputs if annotation is not None else None
                if template is None:
                    template = self.tools[spec.name].schema.outputs
                placeholder = futurize_output_template(
                    template, record.result_future, self.store
                )
                fid = self.scheduler.submit(record)
                self.call_futures[spec.call_id] = fid
                self._append(
                    Message(role="tool", content=placeholder, call_id=spec.call_id)
                )

    def _substitute_refs_async(self, args: Any) -> Any:
        def walk(node):
            if isinstance(node, dict):
                return {k: walk(v) for k, v in node.items()}
            if isinstance(node, list):
                return [walk(v) for v in node]
            ref = parse_call_ref(node)
            if ref is None:
                return node
            call_id, fpath = ref
            base = self.call_futures[call_id]
            if fpath is None:
                return base
            return self.store.create_field(base, fpath)

        return walk(args)

    # -- sync emission ---------------------------------------------------------------------

    def _emit_sync_sequential(self, turn: ScriptTurn) -> None:
        spec = turn.emit[0]
        self._decode(turn.decode_time)
        with self.clock.guard():
            args = self._substitute_refs_sync(spec.args)
            tool = self.tools[spec.name]
            record = CallRecord(
                call_id=spec.call_id,
                tool=spec.name,
                args=args,
                annotation=tool.annotation,
                invocation_index=tool.next_invocation(),
            )
            record.result_future = self.store.create(kind="result", owner_call=spec.call_id)
            self.calls[spec.call_id] = record
            self.call_turn[spec.call_id] = self._turn_no
            self._append(
                Message(
                    role="assistant",
                    content="",
                    tool_calls=[ToolCall(spec.call_id, spec.name, args)],
                )
            )
            fid = self.scheduler.submit(record)
            self.call_futures[spec.call_id] = fid
        self.clock.run_until(lambda: self.store.state_of(fid).is_terminal)
        with self.clock.guard():
            state = self.store.state_of(fid)
            if state.status == RESOLVED:
                content: Any = state.value
            else:
                content = {"error": self._call_error(spec.call_id, state).to_json()}
            self._append(Message(role="tool", content=content, call_id=spec.call_id))
            self._reported.add(spec.call_id)
            self._integrated_fids.add(fid)

    def _emit_sync_parallel(self, turn: ScriptTurn) -> None:
        """Parallel execution with serial semantics: same-turn calls overlap in
        time, but reads, writes and returns are evaluated in emitted order."""
        self._decode(turn.decode_time)
        with self.clock.guard():
            t0 = self.clock.now()
            batch: list[tuple[CallSpec, CallRecord]] = []
            tool_calls = []
            for spec in turn.emit:
                tool = self.tools[spec.name]
                record = CallRecord(
                    call_id=spec.call_id,
                    tool=spec.name,
                    args=spec.args,
                    annotation=tool.annotation,
                    invocation_index=tool.next_invocation(),
                )
                record.result_future = self.store.create(
                    kind="result", owner_call=spec.call_id
                )
                self.calls[spec.call_id] = record
                self.call_futures[spec.call_id] = record.result_future
                self.call_turn[spec.call_id] = self._turn_no
                tool_calls.append(ToolCall(spec.call_id, spec.name, spec.args))
                batch.append((spec, record))
            self._append(Message(role="assistant", content="", tool_calls=tool_calls))
            completion = t0 + max(
                (self.tools[s.name].latency_for(r.invocation_index) for s, r in batch),
                default=0.0,
            )
        self.clock.run_until_time(completion)
        with self.clock.guard():
            for spec, record in batch:
                tool = self.tools[spec.name]
                latency = tool.latency_for(record.invocation_index)
                record.exec_start, record.exec_end = t0, t0 + latency
                self.trace.record(t0, t0 + latency, EXEC, spec.call_id, self._turn_no)
                args = self._substitute_refs_sync(spec.args)
                try:
                    value = tool.behavior(args, record.invocation_index, self.state)
                except ToolExecutionError as exc:
                    record.error = ErrorInfo(EXECUTION_ERROR, str(exc), spec.call_id)
                    record.advance_status(CALL_FAILED)
                    self.store.fail(record.result_future, record.error)
                    content: Any = {"error": record.error.to_json()}
                else:
                    record.advance_status(DONE)
                    self.store.resolve(record.result_future, value)
                    content = value
                self._append(Message(role="tool", content=content, call_id=spec.call_id))
                self._reported.add(spec.call_id)
                self._integrated_fids.add(record.result_future)

    def _substitute_refs_sync(self, args: Any) -> Any:
        def walk(node):
            if isinstance(node, dict):
                return {k: walk(v) for k, v in node.items()}
            if isinstance(node, list):
                return [walk(v) for v in node]
            ref = parse_call_ref(node)
            if ref is None:
                return node
            call_id, fpath = ref
            fid = self.call_futures[call_id]
            state = self.store.state_of(fid)
            if state.status == RESOLVED:
                if fpath is None:
                    return state.value
                from .futures import extract_field

                found, value = extract_field(state.value, fpath)
                return value if found else {"error": f"path not found: {fpath}"}
            if not state.is_terminal:
                return node
            return {"error": self._call_error(call_id, state).to_json()}

        return walk(args)

    # -- await handling -----------------------------------------------------------------------

    def _handle_await(self, turn: ScriptTurn) -> None:
        spec = turn.emit[0]
        offset = await_detection_offset(turn.tokens, turn.decode_time)
        if not is_async(self.mode):
            offset = turn.decode_time
        t0, t1 = self._decode(offset)
        with self.clock.guard():
            raw_ids = spec.args.get("future_ids", [])
            translated = self._substitute_refs_async(raw_ids)
            self._append(
                Message(
                    role="assistant",
                    content="",
                    tool_calls=[ToolCall(spec.call_id, AWAIT_FUTURE_NAME, {"future_ids": translated})],
                )
            )
            unknown = [fid for fid in translated if not self.store.known(fid)]
        if unknown:
            with self.clock.guard():
                self._append(
                    Message(
                        role="tool",
                        content={"error": f"unknown futures: {sorted(unknown)}"},
                        call_id=spec.call_id,
                    )
                )
            return
        states = self.store.wait_for(list(translated))
        with self.clock.guard():
            t_end = self.clock.now()
            if is_async(self.mode):
                self.trace.record(t1, t_end, AWAIT, spec.call_id, self._turn_no)
            values: dict[str, Any] = {}
            for fid in translated:
                state = states[fid]
                if state.status == RESOLVED:
                    values[fid] = state.value
                else:
                    owner = self.store.owner_of(fid)
                    values[fid] = {"error": self._call_error(owner, state).to_json()}
                self._integrated_fids.add(fid)
                owner = self.store.owner_of(fid)
                if owner is not None and self.call_futures.get(owner) == fid:
                    self._reported.add(owner)
            self._append(Message(role="tool", content=values, call_id=spec.call_id))


def make_clock(kind: str, delay_scale: float = 1.0):
    if kind == "virtual":
        return VirtualClock()
    if kind == "wall":
        return WallClock(delay_scale=delay_scale)
    raise ValidationError(f"unknown clock kind {kind!r}")


def run_workload(
    workload: WorkloadSpec,
    mode: str,
    clock: str | Any = "virtual",
    decoder=None,
    strict_cancellation: bool | None = None,
) -> RunTrace:
    """Run one conversation and return its trace."""
    clock_obj = make_clock(clock, workload.delay_scale) if isinstance(clock, str) else clock
    driver = TurnDriver(
        workload, mode, clock=clock_obj, decoder=decoder, strict_cancellation=strict_cancellation
    )
    return driver.run()
