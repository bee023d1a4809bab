"""HTTP portal: the generic summary/detail web application model.

Every route serves server-rendered HTML built from sanitized fragments,
so the portal is fully usable without any client-side code; a frontend
bundle, when present, only progressively enhances the same pages. Content
created through forms is signed and inserted into the cache, making it
indistinguishable on the wire from natively produced messages.
"""

from __future__ import annotations

import email.parser
import email.policy
import json
import mimetypes
import os
import secrets
import threading
import time
from html import escape
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from urllib.parse import parse_qsl, quote, unquote, urlsplit

from oppweb.keys import Identity
from oppweb.message import Message, MetaValue, encode_canonical, is_expired, sign_message, verify_message, VerifyResult
from oppweb.pki import known_keys, wrap_key_record
from oppweb.render import Renderer
from oppweb.sandbox import (
    FormValidationError,
    ScriptExecutionError,
    build_draft,
    describe_form,
)
from oppweb.store import CacheStore, EventKind, InsertResult, NotFound
from oppweb.templates import STYLESHEET, form_page, page

SESSION_COOKIE = "oppweb_session"
EVENT_QUEUE_SIZE = 256
KEEPALIVE_SECONDS = 15


class PortalContext:
    """Everything request handlers need, shared across the server threads."""

    def __init__(
        self,
        store: CacheStore,
        renderer: Renderer,
        identity: Identity,
        node_name: str = "oppweb",
        ttl_default: int = 5400,
        ui_dir: str = "",
        per_session_keys: bool = False,
    ):
        self.store = store
        self.renderer = renderer
        self.identity = identity
        self.node_name = node_name
        self.ttl_default = ttl_default
        self.ui_dir = ui_dir
        self.per_session_keys = per_session_keys
        self.sessions: dict[str, Identity] = {}
        self._lock = threading.Lock()

    def session_identity(self, token: str) -> Identity:
        if not self.per_session_keys:
            return self.identity
        with self._lock:
            ident = self.sessions.get(token)
            if ident is None:
                ident = Identity.generate()
                self.sessions[token] = ident
                record = wrap_key_record(ident, now=int(time.time()))
                self.store.insert(record, now=int(time.time()))
            return ident

    def has_ui(self) -> bool:
        return bool(self.ui_dir) and os.path.isfile(os.path.join(self.ui_dir, "app.js"))

    def verify_badge(self, msg: Message) -> str:
        keys = known_keys(self.store)
        keys.append(self.identity.key_record())
        result = verify_message(msg, keys)
        return {
            VerifyResult.VERIFIED: "verified",
            VerifyResult.UNKNOWN_ORIGINATOR: "unverified",
            VerifyResult.BAD_SIGNATURE: "invalid",
        }[result]


def parse_multipart(body: bytes, content_type: str) -> dict:
    """Form fields from a multipart body: text parts as str, files as bytes."""
    prologue = f"Content-Type: {content_type}\r\nMIME-Version: 1.0\r\n\r\n".encode()
    parsed = email.parser.BytesParser(policy=email.policy.default).parsebytes(
        prologue + body
    )
    values: dict = {}
    if not parsed.is_multipart():
        return values
    for part in parsed.iter_parts():
        name = part.get_param("name", header="content-disposition")
        if not name:
            continue
        payload = part.get_payload(decode=True) or b""
        filename = part.get_param("filename", header="content-disposition")
        if filename:
            values[name] = payload
            values[name + ".filename"] = os.path.basename(str(filename))
        else:
            values[name] = payload.decode("utf-8", "replace")
    return values


class PortalHandler(BaseHTTPRequestHandler):
    ctx: PortalContext  # set by make_handler
    protocol_version = "HTTP/1.1"
    server_version = "oppweb"

    # -- plumbing ------------------------------------------------------------

    def log_message(self, fmt, *args):
        pass  # the daemon logs at a higher level; keep handler quiet

    def _now(self) -> int:
        return int(time.time())

    def _send_html(self, body: str, status: int = 200, set_cookie: str | None = None):
        data = body.encode("utf-8")
        self.send_response(status)
        self.send_header("Content-Type", "text/html; charset=utf-8")
        self.send_header("Content-Length", str(len(data)))
        if set_cookie:
            self.send_header(
                "Set-Cookie", f"{SESSION_COOKIE}={set_cookie}; Path=/; HttpOnly"
            )
        self.end_headers()
        self.wfile.write(data)

    def _send_bytes(self, data: bytes, content_type: str, status: int = 200,
                    filename: str | None = None):
        self.send_response(status)
        self.send_header("Content-Type", content_type)
        self.send_header("Content-Length", str(len(data)))
        if filename:
            self.send_header(
                "Content-Disposition", f'attachment; filename="{filename}"'
            )
        self.end_headers()
        self.wfile.write(data)

    def _redirect(self, location: str, status: int = 303):
        self.send_response(status)
        self.send_header("Location", location)
        self.send_header("Content-Length", "0")
        self.end_headers()

    def _error_page(self, status: int, message: str):
        body = f"<h1>{status}</h1><p>{escape(message)}</p>"
        self._send_html(page(f"{status}", body, self.ctx.node_name), status=status)

    def _session_token(self) -> tuple[str, bool]:
        cookie = self.headers.get("Cookie", "")
        for chunk in cookie.split(";"):
            name, _, value = chunk.strip().partition("=")
            if name == SESSION_COOKIE and value:
                return value, False
        return secrets.token_hex(16), True

    def _page(self, title: str, body: str) -> str:
        return page(title, body, self.ctx.node_name, with_ui=self.ctx.has_ui())

    # -- dispatch ---------------------------------------------------------------

    def do_GET(self):
        try:
            self._route_get()
        except (BrokenPipeError, ConnectionResetError):
            pass
        except Exception as exc:  # keep the node serving whatever happens
            try:
                self._error_page(500, f"internal error: {type(exc).__name__}")
            except Exception:
                pass

    def do_POST(self):
        try:
            self._route_post()
        except (BrokenPipeError, ConnectionResetError):
            pass
        except Exception as exc:
            try:
                self._error_page(500, f"internal error: {type(exc).__name__}")
            except Exception:
                pass

    def _route_get(self):
        path = urlsplit(self.path).path
        parts = [unquote(p) for p in path.split("/") if p]
        if path == "/":
            return self._redirect("/services")
        if path == "/static/style.css":
            return self._send_bytes(STYLESHEET.encode("utf-8"), "text/css; charset=utf-8")
        if path == "/static/app.js":
            return self._serve_ui()
        if path == "/events":
            return self._serve_events()
        if parts == ["services"]:
            return self._serve_service_directory()
        if len(parts) == 2 and parts[0] == "services":
            return self._serve_service(parts[1])
        if len(parts) == 3 and parts[0] == "services" and parts[2] == "new":
            return self._serve_form(service=parts[1], kind="new")
        if len(parts) >= 2 and parts[0] == "messages":
            return self._serve_message(parts[1:])
        if parts == ["apps"]:
            return self._serve_apps()
        if len(parts) == 3 and parts[0] == "apps" and parts[2] == "download":
            return self._serve_app_download(parts[1])
        return self._error_page(404, "no such page")

    def _route_post(self):
        path = urlsplit(self.path).path
        parts = [unquote(p) for p in path.split("/") if p]
        values = self._read_form()
        if len(parts) == 3 and parts[0] == "services" and parts[2] == "new":
            return self._handle_submission(
                service=parts[1], kind="new", values=values
            )
        if len(parts) == 3 and parts[0] == "messages" and parts[2] == "reply":
            return self._handle_submission(
                parent_id=parts[1], kind="reply", values=values
            )
        if parts == ["apps", "upload"]:
            return self._handle_app_upload(values)
        return self._error_page(404, "no such form")

    def _read_form(self) -> dict:
        length = int(self.headers.get("Content-Length") or 0)
        body = self.rfile.read(length) if length else b""
        content_type = self.headers.get("Content-Type", "")
        if content_type.startswith("multipart/form-data"):
            return parse_multipart(body, content_type)
        return dict(parse_qsl(body.decode("utf-8", "replace"), keep_blank_values=True))

    # -- pages ------------------------------------------------------------------

    def _service_icon_route(self, service: str) -> str | None:
        ids = self.ctx.store.list_service(service)
        for mid in reversed(ids):
            msg = self.ctx.store.get(mid)
            icon = msg.meta("icon")
            if icon is None:
                continue
            if icon.kind == "ref":
                return f"/messages/{mid}/payload/{quote(str(icon.value))}"
        return None

    def _service_description(self, service: str) -> str:
        ids = self.ctx.store.list_service(service)
        for mid in reversed(ids):
            desc = self.ctx.store.get(mid).meta_resolved("description")
            if isinstance(desc, str) and desc:
                return desc
        return ""

    def _serve_service_directory(self):
        services = self.ctx.store.services()
        if not services:
            body = '<h1>Services</h1><p class="empty">Nothing here yet.</p>'
            return self._send_html(self._page("Services", body))
        rows = []
        for name, count in services.items():
            icon_route = self._service_icon_route(name)
            icon = f'<img class="icon" src="{icon_route}" alt=""/>' if icon_route else ""
            desc = escape(self._service_description(name)[:120])
            rows.append(
                f'<li>{icon}<a href="/services/{quote(name)}">{escape(name)}</a>'
                f" <small>{count} messages</small> <span>{desc}</span></li>"
            )
        body = f'<h1>Services</h1><ul class="services">{"".join(rows)}</ul>'
        self._send_html(self._page("Services", body))

    def _serve_service(self, service: str):
        if service not in self.ctx.store.services():
            return self._error_page(404, f"no service {service!r}")
        view = self.ctx.renderer.app_summary(service)
        new_link = ""
        if self._find_template(service, "new") is not None:
            new_link = f'<p><a href="/services/{quote(service)}/new">Post new content</a></p>'
        body = (
            f"<h1>{escape(service)}</h1>"
            f'<div id="service-view" data-service="{escape(service)}">{view.html}</div>'
            f"{new_link}"
        )
        self._send_html(self._page(service, body))

    def _serve_message(self, parts: list[str]):
        mid = parts[0]
        try:
            msg = self.ctx.store.get(mid)
        except NotFound:
            return self._error_page(404, "no such message")
        if is_expired(msg, self._now()):
            return self._error_page(410, "message expired")
        if len(parts) == 1:
            return self._serve_detail(msg)
        if len(parts) == 2 and parts[1] == "raw":
            return self._send_bytes(encode_canonical(msg), "application/octet-stream")
        if len(parts) == 2 and parts[1] == "thumbnail":
            thumb = self.ctx.store.get_blob(mid, "thumb.png")
            if thumb is None:
                return self._error_page(404, "no thumbnail")
            return self._send_bytes(thumb, "image/png")
        if len(parts) == 2 and parts[1] == "reply":
            return self._serve_form(parent_id=mid, kind="reply")
        if len(parts) == 3 and parts[1] == "payload":
            data = msg.payload_bytes(parts[2])
            if data is None:
                return self._error_page(404, "no such payload")
            guessed = mimetypes.guess_type(parts[2])[0]
            if guessed is None:
                guessed = {
                    "image": "image/png",
                    "audio": "audio/ogg",
                    "video": "video/webm",
                    "text": "text/plain; charset=utf-8",
                }.get(msg.content_type() or "", "application/octet-stream")
            return self._send_bytes(data, guessed)
        return self._error_page(404, "no such message route")

    def _serve_detail(self, msg: Message):
        view = self.ctx.renderer.view(msg.id, "presentation")
        badge = self.ctx.verify_badge(msg)
        reply_link = ""
        if msg.script("reply") is not None:
            reply_link = f'<a href="/messages/{msg.id}/reply">Reply</a>'
        stamp = time.strftime("%Y-%m-%d %H:%M", time.gmtime(msg.created_at))
        body = (
            f'<p><a href="/services/{quote(msg.service)}">&larr; {escape(msg.service)}</a></p>'
            f'<div id="detail-view">{view.html}</div>'
            f'<footer class="meta">'
            f'<span class="badge {badge}">{badge}</span> '
            f"originator {escape(msg.originator[:16])}, created {stamp} "
            f'| {reply_link} <a href="/messages/{msg.id}/raw">raw</a>'
            f"</footer>"
        )
        self._send_html(self._page(f"{msg.service} message", body))

    # -- forms ----------------------------------------------------------------------

    def _find_template(self, service: str, kind: str) -> Message | None:
        candidates = [
            self.ctx.store.get(mid)
            for mid in self.ctx.store.list_service(service)
        ]
        carriers = [m for m in candidates if m.script(kind) is not None]
        if not carriers:
            return None
        return max(carriers, key=lambda m: (m.created_at, m.id))

    def _form_target(self, kind: str, service: str | None, parent_id: str | None):
        if kind == "new":
            template = self._find_template(service, "new")
            action = f"/services/{quote(service)}/new"
            title = f"New in {service}"
        else:
            try:
                template = self.ctx.store.get(parent_id)
            except NotFound:
                return None, None, None
            if template.script("reply") is None:
                template = None
            action = f"/messages/{parent_id}/reply"
            title = "Reply"
        return template, action, title

    def _serve_form(self, kind: str, service: str | None = None,
                    parent_id: str | None = None):
        template, action, title = self._form_target(kind, service, parent_id)
        if action is None:
            return self._error_page(404, "no such message")
        if template is None:
            return self._error_page(404, f"this content cannot take a {kind} form")
        siblings = [self.ctx.store.get(m) for m in self.ctx.store.list_service(template.service)]
        try:
            specs = describe_form(template, kind, siblings=siblings, now=self._now())
        except ScriptExecutionError as exc:
            return self._error_page(500, f"form script failed: {exc.diagnostic}")
        token, fresh = self._session_token()
        body = form_page(action, specs, {}, {}, title,
                         multipart=any(s.ftype == "file" for s in specs))
        self._send_html(self._page(title, body), set_cookie=token if fresh else None)

    def _handle_submission(self, kind: str, values: dict,
                           service: str | None = None, parent_id: str | None = None):
        template, action, title = self._form_target(kind, service, parent_id)
        if action is None:
            return self._error_page(404, "no such message")
        if template is None:
            return self._error_page(404, f"this content cannot take a {kind} form")
        token, fresh = self._session_token()
        identity = self.ctx.session_identity(token)
        now = self._now()
        siblings = [self.ctx.store.get(m) for m in self.ctx.store.list_service(template.service)]
        try:
            draft = build_draft(
                template, kind, values, identity, now,
                ttl_seconds=self.ctx.ttl_default, siblings=siblings,
                budget=self.ctx.renderer.budget,
            )
        except FormValidationError as exc:
            specs = describe_form(template, kind, siblings=siblings, now=now)
            body = form_page(action, specs, values, exc.field_errors, title,
                             multipart=any(s.ftype == "file" for s in specs))
            return self._send_html(self._page(title, body), status=400,
                                   set_cookie=token if fresh else None)
        except ScriptExecutionError as exc:
            return self._error_page(500, f"script failed: {exc.diagnostic}")
        result = self.ctx.store.insert(draft, now)
        if result not in (InsertResult.NEW, InsertResult.DUPLICATE):
            return self._error_page(500, f"draft rejected: {result.value}")
        self.ctx.renderer.render_message(draft)
        self._redirect(f"/messages/{draft.id}")

    # -- app store ----------------------------------------------------------------------

    def _app_messages(self) -> list[Message]:
        out = []
        for mid in self.ctx.store.ids():
            msg = self.ctx.store.get(mid)
            if msg.content_type() == "app":
                out.append(msg)
        out.sort(key=lambda m: (m.created_at, m.id))
        return out

    def _serve_apps(self):
        rows = []
        for msg in self._app_messages():
            desc = msg.meta_resolved("description")
            label = desc if isinstance(desc, str) and desc else (
                msg.payload[0][0] if msg.payload else msg.id[:12]
            )
            size = len(msg.payload[0][1]) if msg.payload else 0
            rows.append(
                f'<li><a class="download" href="/apps/{msg.id}/download">{escape(label)}</a>'
                f" <small>{escape(msg.service)}, {size} bytes</small></li>"
            )
        listing = (
            f'<ul class="services">{"".join(rows)}</ul>'
            if rows
            else '<p class="empty">No native applications stored here yet.</p>'
        )
        upload_form = """
<h2>Share a native application</h2>
<form class="generated" method="post" action="/apps/upload" enctype="multipart/form-data">
<div><label for="u-service">Service name</label>
<input id="u-service" type="text" name="service" required/></div>
<div><label for="u-description">Description</label>
<input id="u-description" type="text" name="description"/></div>
<div><label for="u-file">Application binary</label>
<input id="u-file" type="file" name="binary" required/></div>
<button type="submit">Upload</button>
</form>"""
        body = f"<h1>App store</h1>{listing}{upload_form}"
        self._send_html(self._page("Apps", body))

    def _serve_app_download(self, mid: str):
        try:
            msg = self.ctx.store.get(mid)
        except NotFound:
            return self._error_page(404, "no such app")
        if not msg.payload:
            return self._error_page(404, "app message carries no binary")
        name, data = msg.payload[0]
        self._send_bytes(data, "application/octet-stream", filename=name or "app.bin")

    def _handle_app_upload(self, values: dict):
        service = str(values.get("service") or "").strip()
        binary = values.get("binary")
        if isinstance(binary, str):
            binary = binary.encode("utf-8")
        errors = {}
        if not service:
            errors["service"] = "required"
        if not binary:
            errors["binary"] = "required"
        if errors:
            return self._error_page(400, "upload needs a service name and a file")
        filename = str(values.get("binary.filename") or "app.bin")
        token, _ = self._session_token()
        identity = self.ctx.session_identity(token)
        now = self._now()
        metadata: dict[str, MetaValue] = {
            "contentType": MetaValue.text("app"),
            "description": MetaValue.text(str(values.get("description") or filename)),
        }
        for kind in ("appSummary", "summary", "presentation", "new", "reply"):
            source = values.get("script_" + kind)
            if isinstance(source, str) and source.strip():
                metadata[kind] = MetaValue.text(source)
        msg = Message(
            service=service,
            originator=identity.fingerprint,
            created_at=now,
            ttl_seconds=self.ctx.ttl_default,
            metadata=metadata,
            payload=[(filename, binary)],
        )
        signed = sign_message(msg, identity)
        self.ctx.store.insert(signed, now)
        self.ctx.renderer.render_message(signed)
        self._redirect("/apps")

    # -- live updates ---------------------------------------------------------------------

    def _serve_events(self):
        sub = self.ctx.store.subscribe(maxsize=EVENT_QUEUE_SIZE)
        self.send_response(200)
        self.send_header("Content-Type", "text/event-stream")
        self.send_header("Cache-Control", "no-cache")
        self.send_header("Connection", "close")
        self.end_headers()
        try:
            self.wfile.write(b": connected\n\n")
            self.wfile.flush()
            while True:
                event = sub.get(timeout=KEEPALIVE_SECONDS)
                if event is None:
                    if sub.dropped:
                        self.wfile.write(b"event: dropped\ndata: slow consumer\n\n")
                        self.wfile.flush()
                        return
                    self.wfile.write(b": keepalive\n\n")
                    self.wfile.flush()
                    continue
                payload = json.dumps(
                    {
                        "kind": "inserted" if event.kind is EventKind.INSERTED else "removed",
                        "service": event.service,
                        "id": event.message_id,
                        "ts": self._now(),
                    }
                )
                self.wfile.write(f"event: update\ndata: {payload}\n\n".encode("utf-8"))
                self.wfile.flush()
        except (BrokenPipeError, ConnectionResetError, OSError):
            pass
        finally:
            sub.close()

    def _serve_ui(self):
        if not self.ctx.has_ui():
            return self._error_page(404, "no UI bundle installed")
        with open(os.path.join(self.ctx.ui_dir, "app.js"), "rb") as fh:
            self._send_bytes(fh.read(), "application/javascript; charset=utf-8")


def make_server(ctx: PortalContext, host: str, port: int) -> ThreadingHTTPServer:
    handler = type("BoundPortalHandler", (PortalHandler,), {"ctx": ctx})
    server = ThreadingHTTPServer((host, port), handler)
    server.daemon_threads = True
    return server
