"""The running node: cache, render pipeline, sync listener, web portal.

One Node owns one data directory. Messages arriving from any direction
(sync sessions, portal forms, CLI injection) flow through the same cache;
the render thread picks up inserted events and materializes views, and
expiry sweeps keep the locally consistent state free of dead content.
"""

from __future__ import annotations

import logging
import os
import socket
import threading
import time

from oppweb.config import NodeConfig, parse_listen
from oppweb.keys import Identity
from oppweb.miniscript import ExecutionBudget
from oppweb.pki import wrap_key_record
from oppweb.portal import PortalContext, make_server
from oppweb.render import Renderer
from oppweb.store import CacheStore, EventKind
from oppweb.sync import SessionReport, SocketChannel, dial, run_session

log = logging.getLogger("oppweb.node")

SWEEP_INTERVAL = 30.0


class Node:
    def __init__(self, config: NodeConfig):
        config.validate()
        self.config = config
        os.makedirs(config.data_dir, exist_ok=True)
        cache_root = os.path.join(config.data_dir, "cache")
        now = int(time.time())
        if os.path.isdir(os.path.join(cache_root, "messages")):
            self.store = CacheStore.recover(
                cache_root, now,
                capacity_bytes=config.capacity_bytes or None,
                on_discard=lambda mid, why: log.warning("discarded %s: %s", mid, why),
            )
        else:
            self.store = CacheStore(cache_root, capacity_bytes=config.capacity_bytes or None)
        self.identity = self._load_identity()
        budget = ExecutionBudget(
            cpu_seconds=config.cpu_budget,
            memory_bytes=config.memory_budget,
            output_bytes=config.output_budget,
        )
        self.renderer = Renderer(self.store, budget)
        self.ctx = PortalContext(
            store=self.store,
            renderer=self.renderer,
            identity=self.identity,
            node_name=config.node_name,
            ttl_default=config.ttl_default,
            ui_dir=config.ui_dir,
            per_session_keys=config.per_session_keys,
        )
        self._stop = threading.Event()
        self._threads: list[threading.Thread] = []
        self._portal_server = None
        self._sync_server: socket.socket | None = None
        self.portal_address: tuple[str, int] | None = None
        self.sync_address: tuple[str, int] | None = None

    def _load_identity(self) -> Identity:
        path = self.config.resolved_identity_path()
        if os.path.isfile(path):
            return Identity.load(path)
        identity = Identity.generate()
        os.makedirs(os.path.dirname(path) or ".", exist_ok=True)
        identity.save(path)
        return identity

    # -- lifecycle ---------------------------------------------------------

    def start(self) -> None:
        now = int(time.time())
        self.store.insert(wrap_key_record(self.identity, now), now)
        for msg in self.store.snapshot():
            if self.store.get_view(msg.id, "summary") is None:
                self.renderer.render_message(msg)

        host, port = parse_listen(self.config.portal_listen)
        self._portal_server = make_server(self.ctx, host, port)
        self.portal_address = self._portal_server.server_address[:2]
        self._spawn(self._portal_server.serve_forever, "portal")

        shost, sport = parse_listen(self.config.sync_listen)
        self._sync_server = socket.socket(socket.AF_INET, socket.SOCK_STREAM)
        self._sync_server.setsockopt(socket.SOL_SOCKET, socket.SO_REUSEADDR, 1)
        self._sync_server.bind((shost, sport))
        self._sync_server.listen(8)
        self.sync_address = self._sync_server.getsockname()[:2]
        self._spawn(self._accept_loop, "sync-accept")

        self._spawn(self._render_loop, "render")
        self._spawn(self._sweep_loop, "sweep")
        log.info(
            "node %s up: portal %s:%d, sync %s:%d, %d messages",
            self.config.node_name, *self.portal_address, *self.sync_address,
            len(self.store),
        )

    def stop(self) -> None:
        self._stop.set()
        if self._portal_server is not None:
            self._portal_server.shutdown()
            self._portal_server.server_close()
        if self._sync_server is not None:
            try:
                self._sync_server.close()
            except OSError:
                pass
        for thread in self._threads:
            thread.join(timeout=5)
        self.store.persist()

    def _spawn(self, target, name: str) -> None:
        thread = threading.Thread(target=target, name=f"oppweb-{name}", daemon=True)
        thread.start()
        self._threads.append(thread)

    # -- loops ----------------------------------------------------------------

    def _accept_loop(self) -> None:
        assert self._sync_server is not None
        while not self._stop.is_set():
            try:
                conn, addr = self._sync_server.accept()
            except OSError:
                return  # listener closed
            threading.Thread(
                target=self._serve_peer, args=(conn, addr), daemon=True
            ).start()

    def _serve_peer(self, conn: socket.socket, addr) -> None:
        channel = SocketChannel(conn)
        try:
            report = run_session(
                channel, self.store, now=int(time.time()),
                node_id=self.config.node_name,
            )
            log.info("peer %s: %s", addr, report.summary())
        finally:
            channel.close()

    def _render_loop(self) -> None:
        sub = self.store.subscribe()
        try:
            while not self._stop.is_set():
                event = sub.get(timeout=0.5)
                if event is None:
                    continue
                if event.kind is EventKind.INSERTED:
                    self.renderer.on_inserted(event.message_id)
        finally:
            sub.close()

    def _sweep_loop(self) -> None:
        while not self._stop.wait(SWEEP_INTERVAL):
            removed = self.store.expire_sweep(int(time.time()))
            if removed:
                log.info("expired %d messages", len(removed))

    # -- operations -------------------------------------------------------------

    def dial(self, addr: str) -> SessionReport:
        host, port = parse_listen(addr)
        return dial(host, port, self.store, now=int(time.time()),
                    node_id=self.config.node_name)

    def dial_static_peers(self) -> list[SessionReport]:
        reports = []
        for peer in self.config.peers:
            try:
                reports.append(self.dial(peer))
            except OSError as exc:
                log.warning("peer %s unreachable: %s", peer, exc)
        return reports

    def run_until_interrupt(self) -> None:
        self.start()
        try:
            while True:
                time.sleep(0.5)
        except KeyboardInterrupt:
            log.info("shutting down")
        finally:
            self.stop()
