from __future__ import annotations

import json

import pytest

from futurecall import WallClock, lint_context, run_workload
from futurecall.driver import Message, ScriptedDecoder, ToolCall, await_detection_offset
from futurecall.errors import (
    ContextOverflowError,
    ScriptExhaustedError,
    ValidationError,
)
from futurecall.workload import workload_from_json

from conftest import run_fixture


class TestFig1Schedules:
    def test_sync_sequential_end_to_end(self):
        trace = run_fixture("fig1", "sync-sequential")
        assert trace.end_to_end == 19.0

    def test_async_sequential_end_to_end(self):
        trace = run_fixture("fig1", "async-sequential")
        assert trace.end_to_end == 13.0
        assert trace.exec_intervals_by_call()["F3"] == (7.0, 12.0)

    def test_sync_parallel_end_to_end(self):
        trace = run_fixture("fig1", "sync-parallel")
        assert trace.end_to_end == 13.0

    def test_zero_call_workload_is_single_decode(self):
        spec = workload_from_json(
            {"tools": [], "script": [{"final": "hi", "decode_time": 2}]}
        )
        trace = run_workload(spec, "async-sequential")
        assert trace.decode_intervals() == [(0.0, 2.0)]
        assert trace.end_to_end == 2.0
        assert trace.final_answer == "hi"


class TestIntegration:
    def test_binding_message_after_resolution(self):
        trace = run_fixture("fig1", "async-sequential")
        bindings = [m for m in trace.messages if m.bound_futures]
        assert bindings, "expected at least one binding user message"
        assert all(m.role == "user" for m in bindings)
        bound = {}
        for m in bindings:
            bound.update(m.bound_futures)
        values = list(bound.values())
        assert {"status": "staged", "item": "alpha"} in values

    def test_field_futures_bound_alongside_base(self):
        trace = run_fixture("vehicle", "async-sequential")
        bound = {}
        for m in trace.messages:
            if m.bound_futures:
                bound.update(m.bound_futures)
        field_ids = [fid for fid in bound if fid.endswith(".engineState")]
        assert field_ids and bound[field_ids[0]] == "running"

    def test_no_binding_messages_in_sync_modes(self):
        trace = run_fixture("fig1", "sync-sequential")
        assert not any(m.bound_futures for m in trace.messages)

    def test_placeholder_tool_messages_in_async(self):
        trace = run_fixture("vehicle", "async-sequential")
        tool_msgs = [m for m in trace.messages if m.role == "tool"]
        assert any(
            isinstance(m.content, dict)
            and isinstance(m.content.get("engineState"), str)
            and m.content["engineState"].startswith("fut_")
            for m in tool_msgs
        )


class TestFailureInjection:
    def test_failure_message_distinguishes_kinds(self):
        trace = run_fixture("fail-chain", "async-sequential")
        failure_msgs = [
            m
            for m in trace.messages
            if m.role == "user" and isinstance(m.content, dict) and "failed_calls" in m.content
        ]
        assert len(failure_msgs) == 1
        by_call = {f["call"]: f for f in failure_msgs[0].content["failed_calls"]}
        assert by_call["F2"]["kind"] == "execution-error"
        assert by_call["F3"]["kind"] == "cancelled-dependency"
        assert by_call["F3"]["origin_call"] == "F2"
        assert by_call["F4"]["kind"] == "cancelled-dependency"
        assert by_call["F4"]["origin_call"] == "F2"

    def test_no_failures_no_message(self):
        trace = run_fixture("fig1", "async-sequential")
        assert not any(
            isinstance(m.content, dict) and "failed_calls" in m.content
            for m in trace.messages
        )

    def test_late_failure_triggers_recovery_turn(self):
        data = {
            "tools": [
                {
                    "schema": {"name": "fast", "description": "", "parameters": {}},
                    "annotation": {"reads": [], "writes": []},
                    "latency": 1,
                    "returns": [{"ok": True}],
                },
                {
                    "schema": {"name": "doomed", "description": "", "parameters": {}},
                    "annotation": {"reads": [], "writes": []},
                    "latency": 9,
                    "error_at": {"0": "late boom"},
                },
            ],
            "script": [
                {"emit": [{"id": "A", "name": "fast", "args": {}}], "decode_time": 1},
                {"emit": [{"id": "B", "name": "doomed", "args": {}}], "decode_time": 1},
                {"when": {"resolved": ["A"]}, "final": "early answer", "decode_time": 1},
                {"when": {"resolved": ["B"]}, "final": "recovered", "decode_time": 1},
            ],
        }
        trace = run_workload(workload_from_json(data), "async-sequential")
        # First final decodes at [3, 4]; B fails at 11, injected, then the
        # recovery turn runs and answers again.
        assert trace.final_answer == "recovered"
        decode = trace.decode_intervals()
        assert decode[-1] == (11.0, 12.0)
        assert trace.end_to_end == 12.0

    def test_missing_recovery_turn_is_script_exhaustion(self):
        data = {
            "tools": [
                {
                    "schema": {"name": "doomed", "description": "", "parameters": {}},
                    "annotation": {"reads": [], "writes": []},
                    "latency": 9,
                    "error_at": {"0": "late boom"},
                }
            ],
            "script": [
                {"emit": [{"id": "B", "name": "doomed", "args": {}}], "decode_time": 1},
                {"final": "early answer", "decode_time": 1},
            ],
        }
        with pytest.raises(ScriptExhaustedError):
            run_workload(workload_from_json(data), "async-sequential")


def await_workload(tokens=None):
    return workload_from_json(
        {
            "tools": [
                {
                    "schema": {"name": "slow", "description": "", "parameters": {}},
                    "annotation": {"reads": [], "writes": []},
                    "latency": 8,
                    "returns": [{"x": 1}],
                }
            ],
            "script": [
                {"emit": [{"id": "S", "name": "slow", "args": {}}], "decode_time": 1},
                {
                    "emit": [
                        {
                            "id": "AW",
                            "name": "await_future",
                            "args": {"future_ids": ["@S"]},
                        }
                    ],
                    "decode_time": 1,
                    **({"tokens": tokens} if tokens else {}),
                },
                {"when": {"resolved": ["S"]}, "final": "value received", "decode_time": 1},
            ],
        }
    )


AWAIT_TOKENS = [
    ["I should wait: ", 0.2],
    ["await_future", 0.4],
    ["([\"", 0.5],
    ["fut_0", 0.55],
    ["\"])", 0.6],
    [" and then some trailing tokens", 1.0],
]


class TestAwait:
    def test_detection_offset_requires_complete_argument_array(self):
        tokens = [(t, o) for t, o in AWAIT_TOKENS]
        assert await_detection_offset(tokens, 1.0) == 0.6
        assert await_detection_offset(None, 1.0) == 1.0
        assert await_detection_offset([("await_future([", 0.3)], 1.0) == 1.0

    def test_early_termination_truncates_decode(self):
        trace = run_workload(await_workload(AWAIT_TOKENS), "async-sequential")
        decode = trace.decode_intervals()
        assert decode[1] == (1.0, 1.6)  # truncated at detection point
        await_events = [e for e in trace.events if e.kind == "await"]
        assert len(await_events) == 1
        assert (await_events[0].t0, await_events[0].t1) == (1.6, 9.0)
        assert trace.end_to_end == 10.0

    def test_full_decode_without_token_timeline(self):
        trace = run_workload(await_workload(), "async-sequential")
        assert trace.decode_intervals()[1] == (1.0, 2.0)
        assert trace.end_to_end == 10.0

    def test_await_tool_message_carries_values(self):
        trace = run_workload(await_workload(), "async-sequential")
        await_msgs = [m for m in trace.messages if m.role == "tool" and m.call_id == "AW"]
        assert len(await_msgs) == 1
        assert list(await_msgs[0].content.values()) == [{"x": 1}]

    def test_empty_await_returns_immediately(self):
        data = await_workload()
        data.script[1].emit[0].args = {"future_ids": []}
        trace = run_workload(data, "async-sequential")
        await_events = [e for e in trace.events if e.kind == "await"]
        assert await_events[0].t0 == await_events[0].t1

    def test_unknown_future_in_await_yields_error_tool_message(self):
        data = await_workload()
        data.script[1].emit[0].args = {"future_ids": ["fut_77"]}
        trace = run_workload(data, "async-sequential")
        await_msgs = [m for m in trace.messages if m.role == "tool" and m.call_id == "AW"]
        assert "error" in await_msgs[0].content


class TestThinking:
    def test_two_subqueries_overlap(self):
        sync = run_fixture("thinking", "sync-sequential")
        async_trace = run_fixture("thinking", "async-sequential")
        assert sync.end_to_end == 15.0
        assert async_trace.end_to_end == 9.0
        assert sync.final_answer == async_trace.final_answer

    def test_single_subquery_matches_plain_tool_shape(self):
        data = {
            "tools": [
                {
                    "schema": {"name": "think", "description": "", "parameters": {}},
                    "annotation": {"reads": [], "writes": []},
                    "kind": "thinking",
                    "latency": 6,
                    "answers": {"q": "a"},
                }
            ],
            "script": [
                {"emit": [{"id": "T", "name": "think", "args": {"subquery": "q"}}], "decode_time": 1},
                {"when": {"resolved": ["T"]}, "final": "a", "decode_time": 1},
            ],
        }
        trace = run_workload(workload_from_json(data), "async-sequential")
        assert trace.exec_intervals_by_call()["T"] == (1.0, 7.0)

    def test_chained_thinking_gated_on_first_answer(self):
        data = {
            "tools": [
                {
                    "schema": {"name": "think", "description": "", "parameters": {}},
                    "annotation": {"reads": [], "writes": []},
                    "kind": "thinking",
                    "latency": 6,
                    "answers": {"q1": "first answer"},
                }
            ],
            "script": [
                {"emit": [{"id": "T1", "name": "think", "args": {"subquery": "q1"}}], "decode_time": 1},
                {
                    "emit": [
                        {"id": "T2", "name": "think", "args": {"subquery": "@T1.answer"}}
                    ],
                    "decode_time": 1,
                },
                {"when": {"resolved": ["T1", "T2"]}, "final": "done", "decode_time": 1},
            ],
        }
        spec = workload_from_json(data)
        spec.tools[0].answers["first answer"] = "second answer"
        trace = run_workload(spec, "async-sequential")
        assert trace.exec_intervals_by_call()["T2"] == (7.0, 13.0)


class TestProtocolAndDeterminism:
    def test_every_fixture_mode_pair_lints_clean(self):
        for name in ("fig1", "vehicle", "diamond", "fail-chain", "thinking", "pairs"):
            for mode in ("sync-sequential", "sync-parallel", "async-sequential", "async-parallel"):
                run_fixture(name, mode)  # run_fixture lints internally

    def test_lint_catches_out_of_order_tool_message(self):
        messages = [
            Message(role="assistant", content="", tool_calls=[ToolCall("C1", "t", {})]),
            Message(role="user", content="interloper"),
            Message(role="tool", content={}, call_id="C1"),
        ]
        assert lint_context(messages)

    def test_virtual_replay_is_byte_identical(self):
        a = run_fixture("diamond", "async-parallel").to_jsonl()
        b = run_fixture("diamond", "async-parallel").to_jsonl()
        assert a == b

    def test_context_dump_round_trips_as_json(self):
        trace = run_fixture("fig1", "async-sequential")
        dumped = json.dumps(trace.context_json())
        assert json.loads(dumped)[0]["role"] == "user"


class TestGuards:
    def test_context_budget_overflow(self):
        data = {
            "tools": [
                {
                    "schema": {"name": "t", "description": "", "parameters": {}},
                    "annotation": {"reads": [], "writes": []},
                    "latency": 1,
                    "returns": [{}],
                }
            ],
            "script": [
                {"emit": [{"id": f"C{i}", "name": "t", "args": {}}], "decode_time": 1}
                for i in range(6)
            ]
            + [{"final": "x", "decode_time": 1}],
            "context_budget": 5,
        }
        with pytest.raises(ContextOverflowError):
            run_workload(workload_from_json(data), "async-sequential")

    def test_unknown_mode_rejected(self):
        with pytest.raises(ValidationError):
            run_fixture("fig1", "warp-speed")

    def test_decoder_splits_multi_call_entries_for_sequential_api(self):
        spec = workload_from_json(
            {
                "tools": [
                    {
                        "schema": {"name": "t", "description": "", "parameters": {}},
                        "annotation": {"reads": [], "writes": []},
                        "returns": [{}],
                    }
                ],
                "script": [
                    {
                        "emit": [
                            {"id": "A", "name": "t", "args": {}},
                            {"id": "B", "name": "t", "args": {}},
                        ],
                        "decode_time": 1,
                    },
                    {"final": "x", "decode_time": 1},
                ],
            }
        )
        sequential = ScriptedDecoder(spec.script, parallel_api=False)
        parallel = ScriptedDecoder(spec.script, parallel_api=True)
        seq_turns = []
        while not sequential.exhausted():
            seq_turns.append(sequential.next_turn([]))
        par_turns = []
        while not parallel.exhausted():
            par_turns.append(parallel.next_turn([]))
        assert [len(t.emit) for t in seq_turns] == [1, 1, 0]
        assert [len(t.emit) for t in par_turns] == [2, 0]


class TestWallClock:
    def test_wall_ordering_matches_virtual(self):
        virtual = run_fixture("fig1", "async-sequential")
        wall = run_fixture("fig1", "async-sequential", clock=WallClock(delay_scale=0.02))
        # The trace log appends events in firing order in both modes; only
        # timestamps carry measurement noise.
        v_order = [(e.kind, e.id) for e in virtual.events]
        w_order = [(e.kind, e.id) for e in wall.events]
        assert v_order == w_order
        assert abs(wall.end_to_end - virtual.end_to_end) < 2.0  # noise in units

    def test_live_decoder_requires_wall_clock(self):
        from futurecall import ChatCompletionsDecoder

        decoder = ChatCompletionsDecoder(tool_schemas=[], endpoint="http://example.invalid")
        with pytest.raises(ValidationError):
            run_fixture("fig1", "async-sequential", decoder=decoder)
