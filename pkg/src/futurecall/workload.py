"""Workload files: scripted decoder turns plus mock tools with injected latency.

A workload is the simulator's unit of input. The JSON layout:

    {
      "task": "optional opening user message",
      "tools": [
        {"schema": {...}, "annotation": {...} | null,
         "latency": 5 | [5, 3],
         "returns": [...],                 # per-invocation scripted values
         "error_at": {"0": "boom"},        # invocation index -> failure message
         "state": {"reads": [...], "writes": [{"path": ..., "value": ...}]},
         "kind": "function" | "thinking",
         "answers": {"subquery": "delegate answer"}}   # thinking tools
      ],
      "script": [
        {"when": {"resolved": ["F1"]},     # wait until these calls' outcomes
                                           # are integrated into the context
         "emit": [{"id": "F2", "name": "tool", "args": {...}}],
         "decode_time": 1,
         "tokens": [["text", 0.5], ...]},  # optional emission timeline
        {"final": "answer text", "decode_time": 1}
      ],
      "delay_scale": 1.0,
      "context_budget": 64,
      "session_bindings": {"cwd": "/fs/home"}
    }

Argument values of the form ``"@F2"`` or ``"@F2.field"`` reference the result
of an earlier call; in async modes they turn into future identifiers, in sync
modes into the concrete resolved value. Script entries are consumed in order,
each waiting for its trigger. A turn that emits several calls decodes as one
turn under a parallel-calling decoder and as one turn per call under a
sequential one.
"""

from __future__ import annotations

import copy
import json
import re
from dataclasses import dataclass, field
from typing import Any

from .errors import ParseError, ValidationError
from .executor import StateStore, ToolBinding, ToolExecutionError
from .schema import AWAIT_FUTURE_NAME, DependencyAnnotation, FunctionSchema

CALL_REF_RE = re.compile(r"^@([A-Za-z_][\w-]*)(\.[^.\s]+(?:\.[^.\s]+)*)?$")


def parse_call_ref(value: Any) -> tuple[str, str | None] | None:
    """Return (call id, field path) when value is an ``@Fk[.path]`` reference."""
    if not isinstance(value, str):
        return None
    match = CALL_REF_RE.match(value)
    if match is None:
        return None
    call_id, fpath = match.group(1), match.group(2)
    return call_id, fpath[1:] if fpath else None


def iter_call_refs(args: Any):
    if isinstance(args, dict):
        for value in args.values():
            yield from iter_call_refs(value)
    elif isinstance(args, list):
        for value in args:
            yield from iter_call_refs(value)
    else:
        ref = parse_call_ref(args)
        if ref is not None:
            yield ref


@dataclass
class CallSpec:
    call_id: str
    name: str
    args: dict = field(default_factory=dict)


@dataclass
class ScriptTurn:
    """One scripted decoder turn: emitted calls or the final answer.

    ``tokens`` is an optional emission timeline of (text, time offset) pairs
    with non-decreasing offsets; ``ttft`` is the delay before the first token.
    """

    emit: list[CallSpec] = field(default_factory=list)
    final: str | None = None
    decode_time: float = 1.0
    requires: list[str] = field(default_factory=list)
    tokens: list[tuple[str, float]] | None = None
    ttft: float = 0.0

    @property
    def is_final(self) -> bool:
        return self.final is not None

    @property
    def is_await(self) -> bool:
        return bool(self.emit) and self.emit[0].name == AWAIT_FUTURE_NAME


@dataclass
class ToolSpec:
    schema: FunctionSchema
    annotation: DependencyAnnotation | None = None
    latency: float | list[float] = 0.0
    returns: list[Any] | None = None
    error_at: dict[int, str] = field(default_factory=dict)
    state_reads: list[tuple[str, bool]] = field(default_factory=list)
    state_writes: list[tuple[str, str]] = field(default_factory=list)
    kind: str = "function"
    answers: dict[str, str] = field(default_factory=dict)


@dataclass
class WorkloadSpec:
    tools: list[ToolSpec]
    script: list[ScriptTurn]
    delay_scale: float = 1.0
    context_budget: int = 64
    session_bindings: dict[str, Any] = field(default_factory=dict)
    task: str | None = None
    strict_cancellation: bool = False

    def tool_names(self) -> list[str]:
        return [t.schema.name for t in self.tools]

    def validate(self) -> None:
        names = set(self.tool_names())
        if len(names) != len(self.tools):
            raise ValidationError("duplicate tool names")
        emitted: set[str] = set()
        for turn_no, turn in enumerate(self.script):
            if turn.decode_time <= 0:
                raise ValidationError(f"script[{turn_no}]: decode_time must be positive")
            if turn.is_final == bool(turn.emit):
                raise ValidationError(
                    f"script[{turn_no}]: exactly one of 'emit' or 'final' is required"
                )
            if turn.tokens is not None:
                offsets = [off for _, off in turn.tokens]
                if any(b < a for a, b in zip(offsets, offsets[1:])):
                    raise ValidationError(f"script[{turn_no}]: token offsets must not decrease")
            for ref in turn.requires:
                if ref not in emitted:
                    raise ValidationError(
                        f"script[{turn_no}]: trigger references {ref!r} before it is emitted"
                    )
            if turn.is_await and len(turn.emit) != 1:
                raise ValidationError(
                    f"script[{turn_no}]: {AWAIT_FUTURE_NAME} must be alone in its turn"
                )
            for call in turn.emit:
                if call.name != AWAIT_FUTURE_NAME and call.name not in names:
                    raise ValidationError(f"script[{turn_no}]: unknown tool {call.name!r}")
                if call.call_id in emitted:
                    raise ValidationError(f"duplicate call id {call.call_id!r}")
                # Same-turn references are impossible: a decoder cannot name a
                # placeholder it has not received yet.
                for ref_call, _ in iter_call_refs(call.args):
                    if ref_call not in emitted:
                        raise ValidationError(
                            f"script[{turn_no}]: {call.call_id} references "
                            f"{ref_call!r} before an earlier turn emitted it"
                        )
            for call in turn.emit:
                emitted.add(call.call_id)
        if not any(turn.is_final for turn in self.script):
            raise ValidationError("script never produces a final answer")


def load_workload(path: str) -> WorkloadSpec:
    """Parse and validate a workload file."""
    try:
        with open(path, "r", encoding="utf-8") as fh:
            data = json.load(fh)
    except OSError as exc:
        raise ParseError(f"cannot read workload {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ParseError(f"workload {path} is not valid JSON: {exc}") from exc
    return workload_from_json(data)


def workload_from_json(data: dict) -> WorkloadSpec:
    if not isinstance(data, dict):
        raise ValidationError("workload root must be a JSON object")
    tools = []
    for entry in data.get("tools", []):
        if "schema" not in entry:
            raise ValidationError(f"tool entry without schema: {entry!r}")
        schema = FunctionSchema.from_json(entry["schema"])
        annotation = None
        raw_annotation = entry.get("annotation")
        if raw_annotation is not None:
            annotation = DependencyAnnotation.from_json(raw_annotation)
            if annotation.outputs is None and schema.outputs is not None:
                annotation.outputs = schema.outputs
        state_spec = entry.get("state") or {}
        tools.append(
            ToolSpec(
                schema=schema,
                annotation=annotation,
                latency=entry.get("latency", 0.0),
                returns=entry.get("returns"),
                error_at={int(k): v for k, v in (entry.get("error_at") or {}).items()},
                state_reads=[
                    (r["path"], bool(r.get("subtree", False)))
                    for r in state_spec.get("reads", [])
                ],
                state_writes=[
                    (w["path"], w.get("value", "")) for w in state_spec.get("writes", [])
                ],
                kind=entry.get("kind", "function"),
                answers=entry.get("answers", {}) or {},
            )
        )
    script = []
    for raw_turn in data.get("script", []):
        emit = [
            CallSpec(
                call_id=c.get("id", f"call{len(script)}_{i}"),
                name=c["name"],
                args=c.get("args", {}),
            )
            for i, c in enumerate(raw_turn.get("emit", []) or [])
        ]
        tokens = None
        if raw_turn.get("tokens") is not None:
            tokens = [(str(t[0]), float(t[1])) for t in raw_turn["tokens"]]
        script.append(
            ScriptTurn(
                emit=emit,
                final=raw_turn.get("final"),
                decode_time=float(raw_turn.get("decode_time", 1.0)),
                requires=list((raw_turn.get("when") or {}).get("resolved", [])),
                tokens=tokens,
                ttft=float(raw_turn.get("ttft", 0.0)),
            )
        )
    spec = WorkloadSpec(
        tools=tools,
        script=script,
        delay_scale=float(data.get("delay_scale", 1.0)),
        context_budget=int(data.get("context_budget", 64)),
        session_bindings=dict(data.get("session_bindings", {})),
        task=data.get("task"),
        strict_cancellation=bool(data.get("strict_cancellation", False)),
    )
    if spec.delay_scale <= 0:
        raise ValidationError("delay_scale must be positive")
    spec.validate()
    return spec


def make_latency_sweep(base: WorkloadSpec, delays: list[float]) -> list[WorkloadSpec]:
    """One workload per delay, every tool's latency overridden, all else intact."""
    if any(d <= 0 for d in delays):
        raise ValidationError("sweep delays must be positive")
    out = []
    for delay in delays:
        spec = copy.deepcopy(base)
        for tool in spec.tools:
            tool.latency = delay
        out.append(spec)
    return out


def strip_annotations(base: WorkloadSpec) -> WorkloadSpec:
    """Copy of the workload with every dependency annotation removed."""
    spec = copy.deepcopy(base)
    for tool in spec.tools:
        tool.annotation = None
    return spec


# -- tool binding construction ---------------------------------------------------


def _render_write_value(template: str, call_id: str, args: dict, reads: dict) -> Any:
    rendered = template
    rendered = rendered.replace("{call}", call_id)
    if "{args}" in rendered:
        rendered = rendered.replace("{args}", json.dumps(args, sort_keys=True))
    if "{reads}" in rendered:
        rendered = rendered.replace("{reads}", json.dumps(reads, sort_keys=True))
    return rendered


def build_tool_bindings(
    spec: WorkloadSpec, delegate_decode: Any = None
) -> dict[str, ToolBinding]:
    """Turn tool specs into executable mock bindings.

    Scripted tools return ``returns[invocation]`` (last value repeats) and can
    be set to raise at specific invocations. Declarative state operations read
    and write the shared mock backend atomically at completion time, which is
    what the scheduling-safety oracle compares across modes. Thinking tools
    answer from their subquery table, standing in for a delegate decoder.
    """
    bindings: dict[str, ToolBinding] = {}
    for tool in spec.tools:
        bindings[tool.schema.name] = ToolBinding(
            name=tool.schema.name,
            behavior=_make_behavior(tool, delegate_decode),
            latency=tool.latency,
            schema=tool.schema,
            annotation=tool.annotation,
        )
    return bindings


def _make_behavior(tool: ToolSpec, delegate_decode):
    name = tool.schema.name

    if tool.kind == "thinking":
        answers = dict(tool.answers)

        def think(args: dict, invocation: int, state: StateStore):
            subquery = args.get("subquery", "")
            if delegate_decode is not None:
                return {"answer": delegate_decode(subquery, args.get("context", ""))}
            if subquery in answers:
                return {"answer": answers[subquery]}
            raise ToolExecutionError(f"{name}: no delegate answer for {subquery!r}")

        return think

    returns = list(tool.returns) if tool.returns is not None else None
    error_at = dict(tool.error_at)
    state_reads = list(tool.state_reads)
    state_writes = list(tool.state_writes)

    def behavior(args: dict, invocation: int, state: StateStore):
        if invocation in error_at:
            raise ToolExecutionError(error_at[invocation])
        observed = {}
        for path, subtree in state_reads:
            observed[path] = state.read(path, subtree=subtree)
        call_tag = f"{name}#{invocation}"
        for path, template in state_writes:
            state.write(path, _render_write_value(template, call_tag, args, observed))
        if returns is not None:
            value = returns[min(invocation, len(returns) - 1)]
            return copy.deepcopy(value)
        result: dict[str, Any] = {"tool": name, "invocation": invocation}
        if observed:
            result["observed"] = observed
        return result

    return behavior
