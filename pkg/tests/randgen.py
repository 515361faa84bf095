"""Random workload generation for the scheduling-safety oracle.

Workloads have up to 6 calls over up to 3 hierarchical paths with random
read/write/scope annotations and random argument wiring. Every tool's state
operation mirrors its annotation exactly and writes values derived from its
arguments and observed reads, so any illegal reordering shows up in the final
backend state.
"""

from __future__ import annotations

import random

from futurecall import DependencyAnnotation, FunctionSchema, WorkloadSpec
from futurecall.schema import AccessDecl
from futurecall.workload import CallSpec, ScriptTurn, ToolSpec

PATH_POOL = ["/a", "/a/b", "/c"]
LATENCIES = [1, 2, 3, 5]


def random_workload(
    rng: random.Random,
    max_calls: int = 6,
    with_session: bool = True,
    annotate: bool = True,
    failure_at: int | None = None,
) -> WorkloadSpec:
    n_calls = rng.randint(1, max_calls)
    paths = PATH_POOL[: rng.randint(1, len(PATH_POOL))]
    tools: list[ToolSpec] = []
    call_ids = [f"F{i}" for i in range(n_calls)]

    for i in range(n_calls):
        reads = sorted(rng.sample(paths, rng.randint(0, len(paths))))
        writes = sorted(rng.sample(paths, rng.randint(0, len(paths))))
        read_decls = [(p, rng.random() < 0.5) for p in reads]
        write_decls = [(p, rng.random() < 0.5) for p in writes]
        annotation = None
        if annotate:
            annotation = DependencyAnnotation(
                reads=[AccessDecl(p, s) for p, s in read_decls],
                writes=[AccessDecl(p, s) for p, s in write_decls],
                session_read=with_session and rng.random() < 0.15,
                session_write=with_session and rng.random() < 0.15,
            )
        tools.append(
            ToolSpec(
                schema=FunctionSchema(name=f"tool{i}", description=f"mock tool {i}", parameters={}),
                annotation=annotation,
                latency=rng.choice(LATENCIES),
                error_at={0: "injected failure"} if failure_at == i else {},
                state_reads=read_decls,
                state_writes=[(p, "{call}|{args}|{reads}") for p, _ in write_decls],
            )
        )

    turns: list[ScriptTurn] = []
    index = 0
    while index < n_calls:
        group = min(rng.randint(1, 2), n_calls - index)
        emit = []
        for k in range(index, index + group):
            args = {}
            # Reference only calls from strictly earlier turns.
            if index > 0 and rng.random() < 0.4:
                args["upstream"] = f"@{call_ids[rng.randrange(index)]}"
            emit.append(CallSpec(call_id=call_ids[k], name=f"tool{k}", args=args))
        turns.append(ScriptTurn(emit=emit, decode_time=1.0))
        index += group
    turns.append(ScriptTurn(final="done", requires=list(call_ids), decode_time=1.0))

    spec = WorkloadSpec(tools=tools, script=turns)
    spec.validate()
    return spec


def random_arg_dag_workload(rng: random.Random, max_calls: int = 8) -> tuple[WorkloadSpec, dict]:
    """A workload wired only by argument references; returns it plus the edge map."""
    n_calls = rng.randint(2, max_calls)
    call_ids = [f"F{i}" for i in range(n_calls)]
    edges: dict[str, set[str]] = {cid: set() for cid in call_ids}
    tools = []
    turns = []
    for i in range(n_calls):
        tools.append(
            ToolSpec(
                schema=FunctionSchema(name=f"tool{i}", description="", parameters={}),
                annotation=DependencyAnnotation(),  # empty: no state labels
                latency=rng.choice(LATENCIES),
                returns=[{"v": i}],
            )
        )
        args = {}
        for j in range(i):
            if rng.random() < 0.3:
                args[f"in{j}"] = f"@{call_ids[j]}"
                edges[call_ids[j]].add(call_ids[i])
        turns.append(ScriptTurn(emit=[CallSpec(call_id=call_ids[i], name=f"tool{i}", args=args)]))
    turns.append(ScriptTurn(final="done", requires=list(call_ids), decode_time=1.0))
    spec = WorkloadSpec(tools=tools, script=turns)
    spec.validate()
    return spec, edges


def reachable_from(edges: dict[str, set[str]], root: str) -> set[str]:
    """Brute-force reachability, the oracle for transitive cancellation."""
    seen = set()
    frontier = [root]
    while frontier:
        node = frontier.pop()
        for nxt in edges.get(node, ()):
            if nxt not in seen:
                seen.add(nxt)
                frontier.append(nxt)
    return seen
