"""Eager rendering pipeline: cache insert -> stored views and thumbnails.

Summary and presentation views are produced once when a message arrives
and kept in the cache's rendered-view store; service landing views are
re-composed per request because they depend on the whole message set.
Script failures degrade to the contentType fallback so one broken message
never takes a service page down.
"""

from __future__ import annotations

import io
from typing import Optional

from PIL import Image

from oppweb.message import Message
from oppweb.miniscript import ExecutionBudget
from oppweb.sandbox import (
    DEFAULT_BUDGET,
    ScriptExecutionError,
    app_summary_fallback,
    execute_app_summary,
    execute_fallback,
    execute_presentation,
    execute_summary,
)
from oppweb.store import CacheStore, RenderedView

THUMBNAIL_EDGE = 256


def make_thumbnail(data: bytes, edge: int = THUMBNAIL_EDGE) -> Optional[bytes]:
    """Longest-edge-bounded PNG thumbnail, or None for undecodable input."""
    try:
        with Image.open(io.BytesIO(data)) as img:
            img = img.convert("RGB")
            img.thumbnail((edge, edge))
            out = io.BytesIO()
            img.save(out, format="PNG")
            return out.getvalue()
    except Exception:
        return None


class Renderer:
    """Executes transformations against one cache and stores the results."""

    def __init__(self, store: CacheStore, budget: ExecutionBudget = DEFAULT_BUDGET):
        self.store = store
        self.budget = budget
        # Presenter state: service-scoped, in-memory only, gone on restart.
        self.service_state: dict[str, dict] = {}
        self.failures: list[ScriptExecutionError] = []

    def render_message(self, msg: Message) -> None:
        for kind in ("summary", "presentation"):
            self.store.put_view(self._render_kind(msg, kind))
        if msg.content_type() == "image" and msg.payload:
            thumb = make_thumbnail(msg.payload[0][1])
            if thumb is not None:
                self.store.put_blob(msg.id, "thumb.png", thumb)

    def _render_kind(self, msg: Message, kind: str) -> RenderedView:
        runner = execute_summary if kind == "summary" else execute_presentation
        try:
            return runner(msg, self.budget)
        except ScriptExecutionError as exc:
            self.failures.append(exc)
            return execute_fallback(msg, kind)

    def view(self, mid: str, kind: str) -> RenderedView:
        """Stored view if present, rendered on demand otherwise."""
        cached = self.store.get_view(mid, kind)
        if cached is not None:
            return cached
        msg = self.store.get(mid)
        view = self._render_kind(msg, kind)
        self.store.put_view(view)
        return view

    def app_summary(self, service: str) -> RenderedView:
        messages = self.store.snapshot(service)
        state = self.service_state.setdefault(service, {})
        try:
            return execute_app_summary(service, messages, state, self.budget)
        except ScriptExecutionError as exc:
            self.failures.append(exc)
            return app_summary_fallback(service, messages, self.budget)

    def on_inserted(self, mid: str) -> None:
        try:
            msg = self.store.get(mid)
        except KeyError:
            return  # raced with expiry; nothing to render
        self.render_message(msg)
