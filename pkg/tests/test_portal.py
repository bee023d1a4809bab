"""Portal routes against a live node: pages, forms, events, app store."""

import json
import threading
import time
import urllib.parse

import httpx
import pytest

from oppweb.apps import build_board_fixture, build_photos_fixture
from oppweb.config import NodeConfig
from oppweb.keys import Identity
from oppweb.message import Message, decode, sign_message
from oppweb.node import Node
from oppweb.pki import wrap_key_record

IDENT = Identity.from_private_bytes(b"\x11" * 32)
NOW = int(time.time())
LONG_TTL = 10**7


@pytest.fixture(scope="module")
def node(tmp_path_factory):
    data_dir = tmp_path_factory.mktemp("node")
    config = NodeConfig(
        data_dir=str(data_dir),
        node_name="portal-test",
        portal_listen="127.0.0.1:0",
        sync_listen="127.0.0.1:0",
    )
    n = Node(config)
    n.start()
    now = int(time.time())
    n.store.insert(wrap_key_record(IDENT, now), now)
    for msg in build_board_fixture(IDENT, NOW - 100, ttl_seconds=LONG_TTL):
        n.store.insert(msg, now)
    for msg in build_photos_fixture(IDENT, NOW - 50, ttl_seconds=LONG_TTL):
        n.store.insert(msg, now)
    deadline = time.time() + 10
    while time.time() < deadline:
        if all(
            n.store.get_view(mid, "summary") is not None
            for mid in n.store.ids()
        ):
            break
        time.sleep(0.05)
    yield n
    n.stop()


@pytest.fixture(scope="module")
def client(node):
    host, port = node.portal_address
    with httpx.Client(base_url=f"http://{host}:{port}", timeout=10) as c:
        yield c


def multipart(fields: dict) -> tuple[bytes, str]:
    boundary = "testboundary42"
    parts = []
    for name, value in fields.items():
        if isinstance(value, tuple):  # (filename, bytes)
            filename, data = value
            parts.append(
                f'--{boundary}\r\nContent-Disposition: form-data; name="{name}"; '
                f'filename="{filename}"\r\nContent-Type: application/octet-stream'
                f"\r\n\r\n".encode() + data + b"\r\n"
            )
        else:
            parts.append(
                f'--{boundary}\r\nContent-Disposition: form-data; name="{name}"'
                f"\r\n\r\n{value}\r\n".encode()
            )
    body = b"".join(parts) + f"--{boundary}--\r\n".encode()
    return body, f"multipart/form-data; boundary={boundary}"


def test_root_redirects_to_services(client):
    r = client.get("/", follow_redirects=False)
    assert r.status_code in (301, 302, 303)
    assert r.headers["location"] == "/services"


def test_service_directory_lists_counts_and_icons(client):
    r = client.get("/services")
    assert r.status_code == 200
    assert "board" in r.text and "photos" in r.text
    assert "3 messages" in r.text
    assert 'img class="icon"' in r.text  # board/photos carry icons


def test_service_page_embeds_app_summary(client):
    r = client.get("/services/board")
    assert r.status_code == 200
    assert '<span class="tag">news</span>' in r.text
    assert '<span class="tag">lost</span>' in r.text
    assert "Post new content" in r.text


def test_unknown_service_404(client):
    assert client.get("/services/nope").status_code == 404


def test_detail_page_presentation_and_badge(client, node):
    mid = node.store.list_service("board")[0]
    r = client.get(f"/messages/{mid}")
    assert r.status_code == 200
    assert '<article class="post">' in r.text
    assert 'badge verified' in r.text
    assert f"/messages/{mid}/raw" in r.text


def test_unknown_message_404(client):
    assert client.get("/messages/" + "0" * 64).status_code == 404


def test_expired_message_410(client, node):
    now = int(time.time())
    doomed = Message("board", "nobody", now - 1, 1, metadata={"x": "y"})
    node.store.insert(doomed, now - 1)
    time.sleep(1.1)
    assert client.get(f"/messages/{doomed.id}").status_code == 410


def test_payload_route_and_media_type(client, node):
    mid = node.store.list_service("photos")[0]
    msg = node.store.get(mid)
    r = client.get(f"/messages/{mid}/payload/photo")
    assert r.status_code == 200
    assert r.content == msg.payload_bytes("photo")
    assert r.headers["content-type"].startswith("image/")


def test_thumbnail_generated_for_photos(client, node):
    mid = node.store.list_service("photos")[0]
    r = client.get(f"/messages/{mid}/thumbnail")
    assert r.status_code == 200
    assert r.content[:8] == b"\x89PNG\r\n\x1a\n"


def test_raw_bytes_roundtrip(client, node):
    mid = node.store.list_service("board")[0]
    r = client.get(f"/messages/{mid}/raw")
    assert r.status_code == 200
    assert decode(r.content) == node.store.get(mid)


def test_unverified_and_invalid_badges(client, node):
    now = int(time.time())
    stranger = Identity.generate()
    unknown = sign_message(
        Message("board", stranger.fingerprint, now, LONG_TTL,
                metadata={"tag": "x"}), stranger)
    node.store.insert(unknown, now)
    r = client.get(f"/messages/{unknown.id}")
    assert "badge unverified" in r.text

    forged = Message("board", IDENT.fingerprint, now, LONG_TTL,
                     metadata={"tag": "forged"}, signature=b"\x00" * 64)
    node.store.insert(forged, now)
    r = client.get(f"/messages/{forged.id}")
    assert "badge invalid" in r.text  # viewable but flagged


def test_new_form_declares_fields(client):
    r = client.get("/services/board/new")
    assert r.status_code == 200
    assert 'name="tag"' in r.text and 'name="body"' in r.text
    assert "textarea" in r.text


def test_post_new_message_appears_in_service(client, node):
    before = set(node.store.list_service("board"))
    r = client.post(
        "/services/board/new",
        data={"tag": "water", "body": "Rationing starts tomorrow."},
        follow_redirects=False,
    )
    assert r.status_code == 303
    location = r.headers["location"]
    assert location.startswith("/messages/")
    mid = location.rsplit("/", 1)[1]
    assert mid in set(node.store.list_service("board")) - before
    created = node.store.get(mid)
    assert created.signature is not None
    assert created.originator == node.identity.fingerprint
    page = client.get("/services/board")
    assert "water" in page.text
    detail = client.get(location)
    assert "Rationing starts tomorrow." in detail.text
    assert "badge verified" in detail.text


def test_post_missing_required_field_rerenders_form(client, node):
    count_before = len(node.store.list_service("board"))
    r = client.post("/services/board/new", data={"tag": "", "body": "x"})
    assert r.status_code == 400
    assert "required" in r.text and 'name="tag"' in r.text
    assert 'value="x"' not in r.text  # body is a textarea, tag kept empty
    assert len(node.store.list_service("board")) == count_before  # no mutation


def test_reply_flow_inherits_topic(client, node):
    parent_id = node.store.list_service("board")[0]
    parent = node.store.get(parent_id)
    r = client.get(f"/messages/{parent_id}/reply")
    assert r.status_code == 200 and 'name="body"' in r.text
    r = client.post(
        f"/messages/{parent_id}/reply",
        data={"body": "Confirmed, saw it too."},
        follow_redirects=False,
    )
    assert r.status_code == 303
    reply = node.store.get(r.headers["location"].rsplit("/", 1)[1])
    assert reply.meta_resolved("tag") == parent.meta_resolved("tag")


def test_post_to_service_without_new_script_404(client, node):
    now = int(time.time())
    bare = Message("bare-service", "nobody", now, LONG_TTL, metadata={"k": "v"})
    node.store.insert(bare, now)
    assert client.get("/services/bare-service/new").status_code == 404
    assert client.post("/services/bare-service/new", data={"a": "b"}).status_code == 404


def test_photo_upload_via_form(client, node):
    png = build_photos_fixture(IDENT, NOW)[0].payload_bytes("photo")
    body, ctype = multipart({"title": "uploaded pic", "photo": ("pic.png", png)})
    r = client.post(
        "/services/photos/new", content=body,
        headers={"Content-Type": ctype}, follow_redirects=False,
    )
    assert r.status_code == 303
    mid = r.headers["location"].rsplit("/", 1)[1]
    msg = node.store.get(mid)
    assert msg.payload_bytes("photo") == png
    assert msg.content_type() == "image"


def test_app_store_upload_list_download(client, node):
    binary = b"\x7fELF fake native application" * 10
    body, ctype = multipart(
        {"service": "tools", "description": "map viewer", "binary": ("viewer.bin", binary)}
    )
    r = client.post("/apps/upload", content=body, headers={"Content-Type": ctype},
                    follow_redirects=False)
    assert r.status_code == 303
    listing = client.get("/apps")
    assert "map viewer" in listing.text
    app_msg = next(
        node.store.get(m) for m in node.store.ids()
        if node.store.get(m).content_type() == "app"
    )
    dl = client.get(f"/apps/{app_msg.id}/download")
    assert dl.status_code == 200
    assert dl.content == binary
    assert app_msg.payload[0][0] == "viewer.bin"


def test_apps_listed_from_content_type(client, node):
    r = client.get("/apps")
    assert "viewer.bin" in r.text or "map viewer" in r.text


def test_stored_script_injection_corpus_renders_inert(client, node):
    now = int(time.time())
    hostile_fragments = [
        "<script>document.cookie</script>",
        '<img src="x" onerror="alert(1)"/>',
        '<a href="javascript:alert(1)">x</a>',
        "<iframe src=\"http://evil\"></iframe>",
        '<p onclick="boom()">text</p>',
        "<style>body{display:none}</style>",
    ]
    for i, fragment in enumerate(hostile_fragments):
        body = fragment.replace("'", "\\'")
        msg = Message(
            "injection", "nobody", now - i, LONG_TTL,
            metadata={"summary": f"emit('{body}')",
                      "presentation": f"emit('{body}')"},
        )
        node.store.insert(msg, now)
        node.renderer.render_message(msg)
        page = client.get(f"/messages/{msg.id}")
        assert page.status_code == 200
        low = page.text.lower()
        assert "<script>document.cookie" not in low
        assert "onerror" not in low
        assert "javascript:" not in low
        assert "<iframe" not in low
        assert "onclick" not in low
    service_page = client.get("/services/injection")
    low = service_page.text.lower()
    assert "onerror" not in low and "<iframe" not in low


def test_pages_work_without_ui_bundle(client):
    for path in ("/services", "/services/board", "/apps"):
        text = client.get(path).text
        assert "app.js" not in text  # no bundle configured: no script tag
    assert client.get("/static/app.js").status_code == 404


def test_stylesheet_served(client):
    r = client.get("/static/style.css")
    assert r.status_code == 200
    assert ".badge.verified" in r.text


def test_events_stream_delivers_inserts(client, node):
    received = {}

    def insert_later():
        time.sleep(0.4)
        now = int(time.time())
        msg = Message("board", "nobody", now, LONG_TTL,
                      metadata={"tag": "sse-test"})
        node.store.insert(msg, now)
        received["id"] = msg.id

    threading.Thread(target=insert_later, daemon=True).start()
    with client.stream("GET", "/events", timeout=10) as r:
        assert r.headers["content-type"].startswith("text/event-stream")
        payload = None
        for line in r.iter_lines():
            if line.startswith("data: "):
                payload = json.loads(line[6:])
                break
        assert payload is not None
        assert payload["kind"] == "inserted"
        assert payload["service"] == "board"
        assert payload["id"] == received["id"]


def test_portal_content_is_wire_equivalent_to_native(client, node):
    """Content generated through the web form syncs and verifies exactly
    like natively produced messages on a node that never saw the portal."""
    import threading

    from oppweb.pki import known_keys
    from oppweb.message import VerifyResult, verify_message
    from oppweb.store import CacheStore
    from oppweb.sync import MemoryChannel, run_session

    r = client.post(
        "/services/board/new",
        data={"tag": "wire", "body": "equivalence check"},
        follow_redirects=False,
    )
    mid = r.headers["location"].rsplit("/", 1)[1]

    peer = CacheStore()
    chan_a, chan_b = MemoryChannel.pair()
    now = int(time.time())
    t = threading.Thread(
        target=run_session, args=(chan_a, node.store, now), daemon=True
    )
    t.start()
    run_session(chan_b, peer, now)
    t.join(20)
    chan_a.close()

    synced = peer.get(mid)
    assert synced == node.store.get(mid)
    assert verify_message(synced, known_keys(peer)) is VerifyResult.VERIFIED


def test_session_cookie_is_set_for_fresh_browser(node):
    host, port = node.portal_address
    with httpx.Client(base_url=f"http://{host}:{port}", timeout=10) as fresh:
        r = fresh.get("/services/board/new")
        assert "oppweb_session=" in r.headers.get("set-cookie", "")
        again = fresh.get("/services/board/new")
        assert "set-cookie" not in again.headers  # cookie persisted, not reissued


def test_ui_bundle_served_when_configured(tmp_path):
    ui_dir = tmp_path / "ui"
    ui_dir.mkdir()
    (ui_dir / "app.js").write_text('console.log("enhancement");')
    config = NodeConfig(
        data_dir=str(tmp_path / "data"),
        node_name="ui-test",
        portal_listen="127.0.0.1:0",
        sync_listen="127.0.0.1:0",
        ui_dir=str(ui_dir),
    )
    n = Node(config)
    n.start()
    try:
        host, port = n.portal_address
        with httpx.Client(base_url=f"http://{host}:{port}", timeout=10) as c:
            page = c.get("/services")
            assert '<script src="/static/app.js" defer></script>' in page.text
            bundle = c.get("/static/app.js")
            assert bundle.status_code == 200
            assert "enhancement" in bundle.text
    finally:
        n.stop()


def test_node_survives_malformed_requests(client, node):
    host, port = node.portal_address
    import socket

    raw = socket.create_connection((host, port))
    raw.sendall(b"BOGUS /%%% HTTP/1.1\r\n\r\n")
    raw.close()
    assert client.get("/services").status_code == 200
