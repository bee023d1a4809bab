"""Capability-restricted execution of transformation scripts.

Every view a node serves comes through here: summary and presentation
scripts run against exactly one message, application presenters run
against a service's message set, and new/reply scripts declare form
fields and assemble message drafts. Scripts see only the host functions
built for them; emitted markup is sanitized before it is stored or
served, and drafts inherit the full script set of their template so data
and logic keep travelling together.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field
from html import escape as _escape
from typing import Optional
from urllib.parse import quote

from oppweb.htmlsafe import sanitize_fragment
from oppweb.keys import Identity
from oppweb.message import TRANSFORM_KEYS, Message, MetaValue, sign_message
from oppweb.miniscript import (
    BudgetExceeded,
    CapabilityError,
    ExecutionBudget,
    Meter,
    ScriptError,
    run_script,
)
from oppweb.store import RenderedView

DEFAULT_BUDGET = ExecutionBudget()

FIELD_TYPES = ("text", "textarea", "file", "hidden")


class ScriptExecutionError(Exception):
    """A present script failed; the caller should fall back."""

    def __init__(self, kind: str, ref: str, diagnostic: str):
        super().__init__(f"{kind} script for {ref}: {diagnostic}")
        self.kind = kind
        self.ref = ref
        self.diagnostic = diagnostic


class FormValidationError(Exception):
    """Submitted form values failed validation; per-field messages."""

    def __init__(self, field_errors: dict[str, str]):
        super().__init__("; ".join(f"{k}: {v}" for k, v in field_errors.items()))
        self.field_errors = field_errors


@dataclass(frozen=True)
class FieldSpec:
    name: str
    label: str
    ftype: str = "text"
    required: bool = False


@dataclass
class _Emitted:
    chunks: list[str] = field(default_factory=list)

    def html(self) -> str:
        return "".join(self.chunks)


def _format_time(ts) -> str:
    if not isinstance(ts, int) or isinstance(ts, bool):
        raise CapabilityError("format_time needs an integer timestamp")
    t = time.gmtime(max(0, min(ts, 2**40)))
    return (
        f"{t.tm_year:04d}-{t.tm_mon:02d}-{t.tm_mday:02d} "
        f"{t.tm_hour:02d}:{t.tm_min:02d}"
    )


def _script_escape(value) -> str:
    if isinstance(value, bytes):
        value = value.decode("utf-8", "replace")
    elif not isinstance(value, str):
        value = str(value)
    return _escape(value, quote=True)


def _base_env(msg: Message, emitted: _Emitted, meter: Meter) -> dict:
    """Read-only surface over one message, plus emit/escape helpers."""

    def get_meta(key):
        if not isinstance(key, str):
            raise CapabilityError("metadata keys are strings")
        return msg.meta_resolved(key)

    def emit(html):
        if not isinstance(html, str):
            raise CapabilityError("emit() takes a string")
        meter.charge_output(len(html.encode("utf-8")))
        emitted.chunks.append(html)

    def read_payload(name):
        if not isinstance(name, str):
            raise CapabilityError("payload names are strings")
        return msg.payload_bytes(name)

    return {
        "get_meta": get_meta,
        "meta_keys": lambda: [k for k, _ in msg.metadata],
        "payload_names": lambda: [n for n, _ in msg.payload],
        "read_payload": read_payload,
        "payload_url": lambda name: f"/messages/{msg.id}/payload/{quote(str(name))}",
        "thumbnail_url": lambda: f"/messages/{msg.id}/thumbnail",
        "detail_url": lambda: f"/messages/{msg.id}",
        "message_id": lambda: msg.id,
        "created_at": lambda: msg.created_at,
        "originator": lambda: msg.originator,
        "service_name": lambda: msg.service,
        "emit": emit,
        "escape": _script_escape,
        "format_time": _format_time,
    }


def _service_read_env(service: str, messages: list[Message], renderer) -> dict:
    """Read surface over one service's message set (presenters, replies)."""
    by_id = {m.id: m for m in messages}
    ordered = sorted(messages, key=lambda m: (m.created_at, m.id))

    def _scoped(mid) -> Message:
        member = by_id.get(mid)
        if member is None:
            raise CapabilityError(f"message {mid!r} is outside this service scope")
        return member

    return {
        "message_ids": lambda: [m.id for m in ordered],
        "message_meta": lambda mid, key: _scoped(mid).meta_resolved(str(key)),
        "message_payload": lambda mid, name: _scoped(mid).payload_bytes(str(name)),
        "message_created_at": lambda mid: _scoped(mid).created_at,
        "message_originator": lambda mid: _scoped(mid).originator,
        "message_link": lambda mid: f"/messages/{_scoped(mid).id}",
        "run_summary": lambda mid: renderer._nested_view(_scoped(mid), "summary"),
        "run_presentation": lambda mid: renderer._nested_view(_scoped(mid), "presentation"),
    }


class _NestedRunner:
    """Runs member-message views inside a presenter, sharing its meter."""

    def __init__(self, meter: Meter, budget: ExecutionBudget):
        self.meter = meter
        self.budget = budget

    def _nested_view(self, msg: Message, kind: str) -> str:
        source = msg.script(kind)
        if source is None:
            return fallback_fragment(msg)
        emitted = _Emitted()
        env = _base_env(msg, emitted, self.meter)
        try:
            run_script(source, env, self.budget, meter=self.meter)
        except BudgetExceeded:
            raise
        except ScriptError:
            return fallback_fragment(msg)  # broken member, not our caller
        return emitted.html()


# -- single-message views -------------------------------------------------------


def _execute_view(msg: Message, kind: str, budget: ExecutionBudget) -> RenderedView:
    source = msg.script(kind)
    if source is None:
        return execute_fallback(msg, kind=kind)
    start = time.perf_counter()
    emitted = _Emitted()
    meter = Meter(budget)
    env = _base_env(msg, emitted, meter)
    try:
        run_script(source, env, budget, meter=meter)
    except ScriptError as exc:
        raise ScriptExecutionError(kind, msg.id, str(exc)) from exc
    html = sanitize_fragment(emitted.html())
    return RenderedView(
        html=html,
        source="script",
        ref=msg.id,
        kind=kind,
        wall_ms=(time.perf_counter() - start) * 1000,
        output_bytes=len(html.encode("utf-8")),
    )


def execute_summary(msg: Message, budget: ExecutionBudget = DEFAULT_BUDGET) -> RenderedView:
    """Concise view of one message; fallback when no script is present."""
    return _execute_view(msg, "summary", budget)


def execute_presentation(msg: Message, budget: ExecutionBudget = DEFAULT_BUDGET) -> RenderedView:
    """Detailed view of one message; fallback when no script is present."""
    return _execute_view(msg, "presentation", budget)


def fallback_fragment(msg: Message) -> str:
    """Simplified rendering inferred from contentType (pre-sanitized)."""
    ct = msg.content_type()
    desc = msg.meta_resolved("description")
    if not isinstance(desc, str):
        desc = None
    caption = ""
    if desc:
        caption = f'<figcaption>{_escape(desc, quote=False)}</figcaption>'
    first = msg.payload[0][0] if msg.payload else None
    route = f"/messages/{msg.id}/payload/{quote(first)}" if first else None

    if ct == "audio" and route:
        return f'<figure class="media"><audio controls src="{route}"></audio>{caption}</figure>'
    if ct == "video" and route:
        return f'<figure class="media"><video controls src="{route}"></video>{caption}</figure>'
    if ct == "image" and route:
        alt = _escape(desc or first or "image", quote=True)
        return (
            f'<a href="/messages/{msg.id}">'
            f'<img class="thumb" src="/messages/{msg.id}/thumbnail" alt="{alt}"/></a>'
            f"{caption}"
        )
    if ct == "text":
        text = ""
        if first is not None:
            raw = msg.payload_bytes(first) or b""
            text = raw.decode("utf-8", "replace")[:200]
        elif isinstance(desc, str):
            text = desc[:200]
        return f'<p class="text-preview">{_escape(text, quote=False)}</p>'
    # app, other, unknown, or no usable payload: a download link.
    if route:
        size = len(msg.payload[0][1])
        label = _escape(desc or first, quote=False)
        return (
            f'<a class="download" href="{route}" download>{label}</a>'
            f' <small>({size} bytes)</small>'
        )
    label = _escape(desc or "(no content)", quote=False)
    return f'<span class="empty">{label}</span>'


def execute_fallback(msg: Message, kind: str = "summary") -> RenderedView:
    html = sanitize_fragment(fallback_fragment(msg))
    return RenderedView(
        html=html,
        source="fallback",
        ref=msg.id,
        kind=kind,
        output_bytes=len(html.encode("utf-8")),
    )


# -- application presenter --------------------------------------------------------


def pick_app_summary_carrier(messages: list[Message]) -> Optional[Message]:
    """Newest created_at wins, id tie-break, among carriers of the script."""
    carriers = [m for m in messages if m.script("appSummary") is not None]
    if not carriers:
        return None
    return max(carriers, key=lambda m: (m.created_at, m.id))


def execute_app_summary(
    service: str,
    messages: list[Message],
    state: Optional[dict] = None,
    budget: ExecutionBudget = DEFAULT_BUDGET,
) -> RenderedView:
    """Service landing view composed by the application presenter script."""
    for m in messages:
        if m.service != service:
            raise ValueError(f"message {m.id} belongs to {m.service!r}, not {service!r}")
    state = state if state is not None else {}
    carrier = pick_app_summary_carrier(messages)
    if carrier is None:
        return app_summary_fallback(service, messages)
    start = time.perf_counter()
    meter = Meter(budget)
    runner = _NestedRunner(meter, budget)
    emitted = _Emitted()
    env = _base_env(carrier, emitted, meter)
    env.update(_service_read_env(service, messages, runner))

    def get_state(key):
        return state.get(key)

    def set_state(key, value):
        if not isinstance(key, str):
            raise CapabilityError("state keys are strings")
        meter.charge_alloc(64)
        state[key] = value

    env["get_state"] = get_state
    env["set_state"] = set_state
    try:
        run_script(carrier.script("appSummary"), env, budget, meter=meter)
    except ScriptError as exc:
        raise ScriptExecutionError("appSummary", service, str(exc)) from exc
    html = sanitize_fragment(emitted.html())
    return RenderedView(
        html=html,
        source="script",
        ref=service,
        kind="appSummary",
        wall_ms=(time.perf_counter() - start) * 1000,
        output_bytes=len(html.encode("utf-8")),
    )


def app_summary_fallback(
    service: str,
    messages: list[Message],
    budget: ExecutionBudget = DEFAULT_BUDGET,
) -> RenderedView:
    """Time-ordered list of per-message summaries."""
    ordered = sorted(messages, key=lambda m: (m.created_at, m.id))
    items = []
    for m in ordered:
        try:
            view = execute_summary(m, budget)
            inner = view.html
        except ScriptExecutionError:
            inner = sanitize_fragment(fallback_fragment(m))
        items.append(f'<li><a href="/messages/{m.id}">{inner}</a></li>')
    html = f'<ul class="summaries">{"".join(items)}</ul>'
    return RenderedView(
        html=html,
        source="fallback",
        ref=service,
        kind="appSummary",
        output_bytes=len(html.encode("utf-8")),
    )


# -- content generation -------------------------------------------------------------


def _form_env(env: dict, phase: str, values: Optional[dict], specs: list[FieldSpec],
              draft_meta: dict, draft_payload: dict, meter: Meter, now: int = 0) -> None:
    def declare_field(name, label, ftype="text", required=False):
        if not isinstance(name, str) or not name:
            raise CapabilityError("field name must be a non-empty string")
        if ftype not in FIELD_TYPES:
            raise CapabilityError(f"field type must be one of {FIELD_TYPES}")
        if any(s.name == name for s in specs):
            raise CapabilityError(f"field {name!r} declared twice")
        specs.append(FieldSpec(str(name), str(label), ftype, bool(required)))

    def field_value(name):
        if phase != "build":
            raise CapabilityError("field() is only available in the build phase")
        if not any(s.name == name for s in specs):
            raise CapabilityError(f"field {name!r} was never declared")
        return (values or {}).get(name)

    def set_meta(key, value):
        if phase != "build":
            raise CapabilityError("set_meta() is only available in the build phase")
        if not isinstance(key, str) or not key:
            raise CapabilityError("metadata key must be a non-empty string")
        if not isinstance(value, (str, bytes)):
            raise CapabilityError("metadata values are text or bytes")
        meter.charge_alloc(len(value) + len(key))
        draft_meta[key] = value

    def set_payload(name, data):
        if phase != "build":
            raise CapabilityError("set_payload() is only available in the build phase")
        if not isinstance(name, str) or not name:
            raise CapabilityError("payload name must be a non-empty string")
        if not isinstance(data, bytes):
            raise CapabilityError("payload data must be bytes")
        meter.charge_alloc(len(data))
        draft_payload[name] = data

    env["phase"] = lambda: phase
    env["now"] = lambda: now
    env["declare_field"] = declare_field
    env["field"] = field_value
    env["set_meta"] = set_meta
    env["set_payload"] = set_payload


def describe_form(
    template: Message,
    kind: str,
    siblings: Optional[list[Message]] = None,
    budget: ExecutionBudget = DEFAULT_BUDGET,
    now: int = 0,
) -> list[FieldSpec]:
    """Run the describe phase of a new/reply script: its declared fields."""
    if kind not in ("new", "reply"):
        raise ValueError("form scripts are `new` or `reply`")
    source = template.script(kind)
    if source is None:
        raise ScriptExecutionError(kind, template.id, "no such script on this message")
    meter = Meter(budget)
    emitted = _Emitted()
    env = _base_env(template, emitted, meter)
    if siblings is not None:
        runner = _NestedRunner(meter, budget)
        env.update(_service_read_env(template.service, siblings, runner))
    specs: list[FieldSpec] = []
    _form_env(env, "describe", None, specs, {}, {}, meter, now=now)
    try:
        run_script(source, env, budget, meter=meter)
    except ScriptError as exc:
        raise ScriptExecutionError(kind, template.id, str(exc)) from exc
    return specs


def validate_values(specs: list[FieldSpec], values: dict) -> dict:
    """Framework-side required checks; returns normalized values."""
    errors = {}
    normalized = {}
    for spec in specs:
        value = values.get(spec.name)
        if spec.ftype == "file":
            if isinstance(value, str):
                value = value.encode("utf-8")
            if value is not None and not isinstance(value, bytes):
                errors[spec.name] = "must be an uploaded file"
                continue
            if spec.required and not value:
                errors[spec.name] = "required"
                continue
        else:
            if value is None:
                value = ""
            if not isinstance(value, str):
                errors[spec.name] = "must be text"
                continue
            value = value.strip()
            if spec.required and not value:
                errors[spec.name] = "required"
                continue
        normalized[spec.name] = value
    for name in values:
        if not any(s.name == name for s in specs):
            # Unknown fields are dropped silently; scripts never see them.
            pass
    if errors:
        raise FormValidationError(errors)
    return normalized


def build_draft(
    template: Message,
    kind: str,
    values: dict,
    identity: Identity,
    now: int,
    ttl_seconds: int = 5400,
    siblings: Optional[list[Message]] = None,
    budget: ExecutionBudget = DEFAULT_BUDGET,
) -> Message:
    """Run describe then build, validate, assemble and sign the draft.

    The draft inherits every transformation script the template carries
    (and its icon), so anything built through a form remains renderable on
    a node that holds nothing else.
    """
    specs = describe_form(template, kind, siblings=siblings, budget=budget, now=now)
    normalized = validate_values(specs, values)

    source = template.script(kind)
    assert source is not None  # describe_form would have raised
    meter = Meter(budget)
    emitted = _Emitted()
    env = _base_env(template, emitted, meter)
    if siblings is not None:
        runner = _NestedRunner(meter, budget)
        env.update(_service_read_env(template.service, siblings, runner))
    draft_meta: dict = {}
    draft_payload: dict = {}
    respecs: list[FieldSpec] = []
    _form_env(env, "build", normalized, respecs, draft_meta, draft_payload, meter, now=now)
    try:
        run_script(source, env, budget, meter=meter)
    except ScriptError as exc:
        raise ScriptExecutionError(kind, template.id, str(exc)) from exc

    metadata: dict[str, MetaValue] = {}
    for key, value in draft_meta.items():
        metadata[key] = MetaValue.text(value) if isinstance(value, str) else MetaValue.binary(value)
    for script_kind in TRANSFORM_KEYS:
        inherited = template.script(script_kind)
        if inherited is not None and script_kind not in metadata:
            metadata[script_kind] = MetaValue.text(inherited)
    icon = template.meta("icon")
    if icon is not None and "icon" not in metadata:
        metadata["icon"] = icon
        if icon.kind == "ref" and icon.value not in draft_payload:
            data = template.payload_bytes(icon.value)
            if data is not None:
                draft_payload[str(icon.value)] = data
    draft = Message(
        service=template.service,
        originator=identity.fingerprint,
        created_at=now,
        ttl_seconds=ttl_seconds,
        metadata=metadata,
        payload=list(draft_payload.items()),
    )
    return sign_message(draft, identity)
