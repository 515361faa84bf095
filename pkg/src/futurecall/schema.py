"""Schema adaptation: make synchronous tool schemas future-compatible.

Transforms parameter and return contracts so a tool may receive future
identifier strings in place of concrete values and returns a future
placeholder (or a futurized structure mirroring its example output). Also
provides the fixed ``await_future`` auxiliary schema and the argument
scanning / substitution helpers used by the scheduler and executor.
"""

from __future__ import annotations

import copy
import json
from dataclasses import dataclass, field, replace
from typing import Any

from .errors import InvalidSchemaError, UnresolvedArgumentError, ValidationError
from .futures import RESOLVED, FutureStore, looks_like_future_id, valid_field_path

PARAM_TYPES = {"string", "number", "integer", "boolean", "array", "object"}

AWAIT_FUTURE_NAME = "await_future"

# Fixed wording; stable across runs so traces stay reproducible.
FUTURE_PREAMBLE = (
    "Asynchronous tool: calling it returns a future identifier such as "
    '"fut_0" (or a structure of field futures) immediately, and the concrete '
    "result is delivered at a later turn boundary. Future identifiers may be "
    "passed as arguments to other tools. "
)
PARAM_FUTURE_NOTE = " Accepts either a concrete value of this type or a future identifier string."
FUTURE_RETURN_NOTE = "A future placeholder that resolves to this tool's result."


@dataclass
class ParamSpec:
    type: str
    description: str = ""
    required: bool = True
    accepts_future: bool = False

    def to_json(self) -> dict:
        out: dict[str, Any] = {
            "type": self.type,
            "description": self.description,
            "required": self.required,
        }
        if self.accepts_future:
            # Widen via a union annotation instead of replacing the base type.
            out["anyOf"] = [
                {"type": self.type},
                {"type": "string", "pattern": r"^fut_\d+(\.[^.\s]+)*$"},
            ]
        return out


@dataclass
class FunctionSchema:
    name: str
    description: str = ""
    parameters: dict[str, ParamSpec] = field(default_factory=dict)
    outputs: Any = None
    returns_description: str = ""
    future_adapted: bool = False

    def validate(self) -> None:
        if not self.name:
            raise InvalidSchemaError("schema name must be nonempty")
        for pname, spec in self.parameters.items():
            if not pname:
                raise InvalidSchemaError(f"{self.name}: empty parameter name")
            if spec.type not in PARAM_TYPES:
                raise InvalidSchemaError(
                    f"{self.name}.{pname}: unknown parameter type {spec.type!r}"
                )

    def to_json(self) -> dict:
        out: dict[str, Any] = {
            "name": self.name,
            "description": self.description,
            "parameters": {k: v.to_json() for k, v in self.parameters.items()},
        }
        if self.outputs is not None:
            out["outputs"] = self.outputs
        if self.returns_description:
            out["returns"] = self.returns_description
        return out

    @classmethod
    def from_json(cls, data: dict) -> "FunctionSchema":
        try:
            params = {
                name: ParamSpec(
                    type=spec.get("type", "string"),
                    description=spec.get("description", ""),
                    required=bool(spec.get("required", True)),
                )
                for name, spec in data.get("parameters", {}).items()
            }
            schema = cls(
                name=data["name"],
                description=data.get("description", ""),
                parameters=params,
                outputs=data.get("outputs"),
            )
        except (KeyError, TypeError, AttributeError) as exc:
            raise InvalidSchemaError(f"malformed schema: {exc}") from exc
        schema.validate()
        return schema


class TransformedSchema(FunctionSchema):
    """A FunctionSchema whose inputs and return contract admit futures."""


@dataclass
class AccessDecl:
    """One read or write label: a path template plus its scope flag."""

    path: str
    subtree: bool = False

    def to_json(self) -> dict:
        return {"path": self.path, "subtree": self.subtree}


@dataclass
class DependencyAnnotation:
    """Declared resource footprint of one tool.

    Path templates are absolute (``/a/b``), session-relative
    (``$session/name/...``) or argument-parameterized (segments containing
    ``{paramName}``).
    """

    reads: list[AccessDecl] = field(default_factory=list)
    writes: list[AccessDecl] = field(default_factory=list)
    session_read: bool = False
    session_write: bool = False
    outputs: Any = None

    def to_json(self) -> dict:
        return {
            "reads": [d.to_json() for d in self.reads],
            "writes": [d.to_json() for d in self.writes],
            "session_read": self.session_read,
            "session_write": self.session_write,
            "outputs": self.outputs,
        }

    @classmethod
    def from_json(cls, data: dict) -> "DependencyAnnotation":
        def decls(items) -> list[AccessDecl]:
            out = []
            for item in items or []:
                if not isinstance(item, dict) or "path" not in item:
                    raise ValidationError(f"bad access label {item!r}")
                out.append(AccessDecl(path=item["path"], subtree=bool(item.get("subtree", False))))
            return out

        return cls(
            reads=decls(data.get("reads")),
            writes=decls(data.get("writes")),
            session_read=bool(data.get("session_read", False)),
            session_write=bool(data.get("session_write", False)),
            outputs=data.get("outputs"),
        )


def transform_schema(schema: FunctionSchema) -> TransformedSchema:
    """Widen a schema so parameters and the return value admit futures.

    Idempotent: transforming an already-transformed schema returns an equal
    schema. The underlying tool implementation is never touched; only the
    descriptions and type contracts change.
    """
    schema.validate()
    params: dict[str, ParamSpec] = {}
    for pname, spec in schema.parameters.items():
        if schema.name == AWAIT_FUTURE_NAME and pname == "future_ids":
            # The await helper consumes identifiers only; widening it again
            # would suggest futures-of-futures.
            params[pname] = replace(spec)
            continue
        if spec.accepts_future:
            params[pname] = replace(spec)
            continue
        params[pname] = ParamSpec(
            type=spec.type,
            description=spec.description + PARAM_FUTURE_NOTE,
            required=spec.required,
            accepts_future=True,
        )
    description = schema.description
    if not schema.future_adapted:
        description = FUTURE_PREAMBLE + description
    return TransformedSchema(
        name=schema.name,
        description=description,
        parameters=params,
        outputs=copy.deepcopy(schema.outputs),
        returns_description=FUTURE_RETURN_NOTE,
        future_adapted=True,
    )


def await_future_schema() -> FunctionSchema:
    """The fixed auxiliary schema the model uses to resolve futures explicitly."""
    return FunctionSchema(
        name=AWAIT_FUTURE_NAME,
        description=(
            "Suspend until every listed future is resolved, then return a map "
            "from future identifier to its concrete value."
        ),
        parameters={
            "future_ids": ParamSpec(
                type="array",
                description="Future identifier strings to resolve.",
                required=True,
            )
        },
        returns_description="Map from future identifier to resolved value.",
    )


def futurize_output_template(example: Any, base: str, store: FutureStore) -> Any:
    """Replace every scalar leaf of an example output with a field future id.

    The returned value has the same shape as the example; each registered
    field future resolves by path extraction once the base future resolves.
    Without a template the bare base identifier stands in for the whole value.
    """
    if example is None:
        return base

    def walk(node: Any, path: list[str]) -> Any:
        if isinstance(node, dict):
            return {key: walk(val, path + [str(key)]) for key, val in node.items()}
        if isinstance(node, list):
            return [walk(val, path + [str(i)]) for i, val in enumerate(node)]
        if isinstance(node, (str, int, float, bool)):
            if not path:
                return base
            dotted = ".".join(path)
            if not valid_field_path(dotted):
                # Keys that cannot appear in a dotted identifier (dots,
                # whitespace) keep their literal example value.
                return node
            return store.create_field(base, dotted)
        return node

    return walk(example, [])


def _walk_leaves(args: Any, loc: str):
    if isinstance(args, dict):
        for key, val in args.items():
            yield from _walk_leaves(val, f"{loc}.{key}" if loc else str(key))
    elif isinstance(args, list):
        for i, val in enumerate(args):
            yield from _walk_leaves(val, f"{loc}[{i}]")
    else:
        yield loc, args


def scan_future_refs(args: Any, store: FutureStore) -> list[tuple[str, str]]:
    """Find every string leaf that is a registered future (or field) identifier.

    Matching is exact whole-leaf equality, never substring search, so prose
    arguments that merely mention an identifier are left alone.
    """
    refs: list[tuple[str, str]] = []
    for loc, leaf in _walk_leaves(args, ""):
        if isinstance(leaf, str) and looks_like_future_id(leaf) and store.known(leaf):
            refs.append((loc, leaf))
    return refs


def substitute_resolved(args: Any, store: FutureStore) -> Any:
    """Replace every future identifier leaf with its resolved value.

    Raises UnresolvedArgumentError when any referenced future is not in the
    Resolved state; callers wait on argument futures before substituting.
    """

    def walk(node: Any) -> Any:
        if isinstance(node, dict):
            return {key: walk(val) for key, val in node.items()}
        if isinstance(node, list):
            return [walk(val) for val in node]
        if isinstance(node, str) and looks_like_future_id(node) and store.known(node):
            state = store.state_of(node)
            if state.status != RESOLVED:
                raise UnresolvedArgumentError(f"{node} is {state.status}, not resolved")
            return copy.deepcopy(state.value)
        return node

    return walk(args)


def load_schema_file(path: str) -> list[tuple[FunctionSchema, DependencyAnnotation | None]]:
    """Read a ``{"tools": [...]}`` schema document with inline annotations."""
    try:
        with open(path, "r", encoding="utf-8") as fh:
            data = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise ValidationError(f"cannot read schema file {path}: {exc}") from exc
    if not isinstance(data, dict) or not isinstance(data.get("tools"), list):
        raise ValidationError(f'{path}: expected a {{"tools": [...]}} document')
    out = []
    seen: set[str] = set()
    for entry in data["tools"]:
        schema = FunctionSchema.from_json(entry)
        if schema.name in seen:
            raise ValidationError(f"{path}: duplicate tool name {schema.name!r}")
        seen.add(schema.name)
        annotation = None
        if entry.get("annotation") is not None:
            annotation = DependencyAnnotation.from_json(entry["annotation"])
        out.append((schema, annotation))
    return out
