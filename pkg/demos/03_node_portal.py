"""A full node: cache, portal, sync listener, and a posting web client.

Starts a throwbox-style node on ephemeral ports, seeds it with the tag
board application, posts through the HTTP form exactly like a browser
would, and watches the event stream announce the insert.

Run from the repository root:  python3 demos/03_node_portal.py
"""

import tempfile
import threading
import time

import httpx

from oppweb.apps import build_board_fixture
from oppweb.config import NodeConfig
from oppweb.keys import Identity
from oppweb.node import Node

with tempfile.TemporaryDirectory(prefix="oppweb-demo-") as workdir:
    node = Node(
        NodeConfig(
            data_dir=workdir,
            node_name="demo-throwbox",
            portal_listen="127.0.0.1:0",
            sync_listen="127.0.0.1:0",
        )
    )
    node.start()
    ident = Identity.generate()
    now = int(time.time())
    for msg in build_board_fixture(ident, now - 60):
        node.store.insert(msg, now)

    host, port = node.portal_address
    base = f"http://{host}:{port}"
    print("portal:", base)

    with httpx.Client(base_url=base, timeout=10) as browser:
        # Listen on the event stream in the background, like a second tab.
        events = []

        def watch():
            with browser.stream("GET", "/events", timeout=20) as stream:
                for line in stream.iter_lines():
                    if line.startswith("data: "):
                        events.append(line)
                        return

        watcher = threading.Thread(target=watch, daemon=True)
        watcher.start()
        time.sleep(0.3)

        print("services page lists:", end=" ")
        page = browser.get("/services").text
        for name in ("board",):
            assert name in page
            print(name)

        filled = {"tag": "demo", "body": "Posted through the generic form."}
        response = browser.post("/services/board/new", data=filled,
                                follow_redirects=False)
        detail_path = response.headers["location"]
        print("posted, redirected to:", detail_path)
        detail = browser.get(detail_path).text
        assert "Posted through the generic form." in detail
        assert "badge verified" in detail
        print("detail page shows the post with a 'verified' badge")

        watcher.join(timeout=5)
        print("event stream announced:", events[0] if events else "(nothing)")

    node.stop()
    print("node stopped; cache persisted under the temporary directory")
