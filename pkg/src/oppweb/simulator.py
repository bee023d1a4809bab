"""Deterministic simulation of epidemic dissemination with web readers.

Mobile native nodes exchange messages during radio contacts; access-point
nodes participate in the native exchange and additionally serve attached
web nodes, which never talk to each other or to non-AP natives. The core
claim under test is that message size (native payload vs framework-
enhanced bundle) barely moves coverage, and that a handful of access
points makes content reach web users about as well as native ones.

Determinism: one master seed; every node draws its mobility from its own
substream keyed by (seed, group name, index), so adding a group of nodes
never perturbs the trajectories of existing ones. Traffic uses a separate
substream over the native-mobile group only. Fixed seed implies byte-
identical CSV output.
"""

from __future__ import annotations

import hashlib
import math
import os
import random
from bisect import insort
from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np

NODE_CLASSES = ("native-mobile", "native-ap-static", "native-ap-mobile", "web-mobile")


class ScenarioError(ValueError):
    pass


@dataclass(frozen=True)
class NodeGroup:
    name: str
    klass: str
    count: int
    speed: tuple[float, float] = (0.5, 1.5)
    radio_range: float = 50.0
    bitrate: float = 2_000_000.0  # bit/s

    @property
    def is_native(self) -> bool:
        return self.klass.startswith("native")

    @property
    def is_ap(self) -> bool:
        return "ap" in self.klass

    @property
    def is_web(self) -> bool:
        return self.klass == "web-mobile"

    @property
    def is_mobile(self) -> bool:
        return self.klass != "native-ap-static"


@dataclass(frozen=True)
class ScenarioConfig:
    seed: int = 1
    width: float = 1000.0
    height: float = 1000.0
    duration: float = 7200.0
    step: float = 1.0
    ttl: float = 5400.0
    message_interval: float = 60.0
    message_size: tuple[int, int] = (16_384, 16_384)
    runs: int = 1
    setup_latency: float = 0.0
    groups: tuple[NodeGroup, ...] = ()
    map_file: str = ""

    def validate(self) -> None:
        errors = []
        for name in ("width", "height", "duration", "step", "ttl", "message_interval"):
            if getattr(self, name) <= 0:
                errors.append(f"{name} must be positive")
        if self.runs <= 0:
            errors.append("runs must be positive")
        if self.setup_latency < 0:
            errors.append("setup_latency must not be negative")
        if self.message_size[0] <= 0 or self.message_size[1] < self.message_size[0]:
            errors.append("message_size must be positive (lo hi)")
        if not self.groups:
            errors.append("at least one node group is required")
        seen = set()
        for group in self.groups:
            if group.klass not in NODE_CLASSES:
                errors.append(f"group {group.name!r}: unknown class {group.klass!r}")
            if group.count <= 0:
                errors.append(f"group {group.name!r}: count must be positive")
            if group.speed[0] < 0 or group.speed[1] < group.speed[0]:
                errors.append(f"group {group.name!r}: bad speed range")
            if group.radio_range <= 0 or group.bitrate <= 0:
                errors.append(f"group {group.name!r}: range and bitrate must be positive")
            if group.name in seen:
                errors.append(f"duplicate group name {group.name!r}")
            seen.add(group.name)
        if not any(g.klass == "native-mobile" for g in self.groups):
            errors.append("need a native-mobile group to generate traffic")
        if errors:
            raise ScenarioError("; ".join(errors))


def parse_scenario(text: str) -> ScenarioConfig:
    """Documented key-value format: global keys, then [group] sections."""
    globals_kv: dict[str, str] = {}
    groups: list[dict[str, str]] = []
    current: Optional[dict[str, str]] = None
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        if line == "[group]":
            current = {}
            groups.append(current)
            continue
        if "=" not in line:
            raise ScenarioError(f"line {lineno}: expected key = value")
        key, _, value = line.partition("=")
        target = globals_kv if current is None else current
        target[key.strip()] = value.strip()

    def floats(kv, key, n, default=None):
        raw = kv.get(key)
        if raw is None:
            if default is None:
                raise ScenarioError(f"missing {key}")
            return default
        parts = raw.split()
        if len(parts) == 1 and n == 2:
            parts = parts * 2
        if len(parts) != n:
            raise ScenarioError(f"{key} needs {n} numbers")
        try:
            return tuple(float(p) for p in parts)
        except ValueError:
            raise ScenarioError(f"{key}: not a number in {raw!r}") from None

    area = floats(globals_kv, "area", 2, (1000.0, 1000.0))
    size = floats(globals_kv, "message_size", 2, (16384.0, 16384.0))
    parsed_groups = []
    for i, kv in enumerate(groups):
        speed = floats(kv, "speed", 2, (0.5, 1.5))
        parsed_groups.append(
            NodeGroup(
                name=kv.get("name", f"group{i}"),
                klass=kv.get("class", "native-mobile"),
                count=int(float(kv.get("count", "0"))),
                speed=(speed[0], speed[1]),
                radio_range=floats(kv, "range", 1, (50.0,))[0],
                bitrate=floats(kv, "bitrate", 1, (2_000_000.0,))[0],
            )
        )
    config = ScenarioConfig(
        seed=int(float(globals_kv.get("seed", "1"))),
        width=area[0],
        height=area[1],
        duration=floats(globals_kv, "duration", 1, (7200.0,))[0],
        step=floats(globals_kv, "step", 1, (1.0,))[0],
        ttl=floats(globals_kv, "ttl", 1, (5400.0,))[0],
        message_interval=floats(globals_kv, "message_interval", 1, (60.0,))[0],
        message_size=(int(size[0]), int(size[1])),
        runs=int(float(globals_kv.get("runs", "1"))),
        setup_latency=floats(globals_kv, "setup_latency", 1, (0.0,))[0],
        groups=tuple(parsed_groups),
        map_file=globals_kv.get("map", ""),
    )
    config.validate()
    return config


def load_scenario(path: str) -> ScenarioConfig:
    with open(path, encoding="utf-8") as fh:
        return parse_scenario(fh.read())


# -- mobility -----------------------------------------------------------------------


class RandomWaypoint:
    """Open-rectangle random waypoint, zero pause, per-node substreams."""

    def __init__(self, config: ScenarioConfig, labels: list[str], mobile: np.ndarray):
        self.width, self.height = config.width, config.height
        self.mobile = mobile
        self.rngs = [
            random.Random(f"{config.seed}:{label}") for label in labels
        ]
        n = len(labels)
        self.pos = np.zeros((n, 2))
        self.dest = np.zeros((n, 2))
        self.speed = np.zeros(n)
        self.speed_range: list[tuple[float, float]] = [(0.0, 0.0)] * n
        for i, rng in enumerate(self.rngs):
            self.pos[i] = (rng.uniform(0, self.width), rng.uniform(0, self.height))
            self.dest[i] = self.pos[i]

    def activate(self, i: int, lo: float, hi: float) -> None:
        """Arm node *i* with its speed range and first leg (mobile only)."""
        self.speed_range[i] = (lo, hi)
        if self.mobile[i]:
            rng = self.rngs[i]
            self.speed[i] = rng.uniform(lo, hi)
            self.dest[i] = (rng.uniform(0, self.width), rng.uniform(0, self.height))

    def _retarget(self, i: int) -> None:
        rng = self.rngs[i]
        self.dest[i] = (rng.uniform(0, self.width), rng.uniform(0, self.height))
        lo, hi = self.speed_range[i]
        self.speed[i] = rng.uniform(lo, hi) if hi > 0 else 0.0

    def step(self, dt: float) -> np.ndarray:
        delta = self.dest - self.pos
        dist = np.hypot(delta[:, 0], delta[:, 1])
        arrived = dist <= self.speed * dt + 1e-12
        for i in np.nonzero(arrived & self.mobile)[0]:
            self.pos[i] = self.dest[i]
            self._retarget(int(i))
        delta = self.dest - self.pos
        dist = np.hypot(delta[:, 0], delta[:, 1])
        moving = self.mobile & (dist > 1e-12)
        if moving.any():
            scale = np.minimum(self.speed[moving] * dt / dist[moving], 1.0)
            self.pos[moving] += delta[moving] * scale[:, None]
        return self.pos


class MapWaypoint(RandomWaypoint):
    """Shortest-path movement between waypoints of an edge-list map.

    Map file lines: `x1 y1 x2 y2`, one undirected edge per line. Nodes
    walk vertex-to-vertex along shortest paths to random destinations.
    """

    def __init__(self, config: ScenarioConfig, labels: list[str], mobile: np.ndarray):
        super().__init__(config, labels, mobile)
        self.vertices, self.adjacency = read_edge_map(config.map_file)
        self.paths: list[list[int]] = [[] for _ in labels]
        for i, rng in enumerate(self.rngs):
            v = rng.randrange(len(self.vertices))
            self.pos[i] = self.vertices[v]
            self.dest[i] = self.pos[i]
            self.paths[i] = [v]

    def activate(self, i: int, lo: float, hi: float) -> None:
        self.speed_range[i] = (lo, hi)
        if self.mobile[i]:
            self.speed[i] = self.rngs[i].uniform(lo, hi)
            self._retarget(i)

    def _retarget(self, i: int) -> None:
        rng = self.rngs[i]
        if len(self.paths[i]) <= 1:
            here = self.paths[i][-1] if self.paths[i] else 0
            target = rng.randrange(len(self.vertices))
            self.paths[i] = shortest_path(self.adjacency, self.vertices, here, target)
            lo, hi = self.speed_range[i]
            self.speed[i] = rng.uniform(lo, hi) if hi > 0 else 0.0
        if len(self.paths[i]) > 1:
            self.paths[i] = self.paths[i][1:]
            self.dest[i] = self.vertices[self.paths[i][0]]


def read_edge_map(path: str) -> tuple[np.ndarray, dict[int, list[tuple[int, float]]]]:
    points: list[tuple[float, float]] = []
    index: dict[tuple[float, float], int] = {}
    adjacency: dict[int, list[tuple[int, float]]] = {}

    def vertex(x: float, y: float) -> int:
        key = (x, y)
        if key not in index:
            index[key] = len(points)
            points.append(key)
            adjacency[index[key]] = []
        return index[key]

    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            parts = line.split()
            if len(parts) != 4:
                raise ScenarioError(f"{path}:{lineno}: expected x1 y1 x2 y2")
            x1, y1, x2, y2 = (float(p) for p in parts)
            a, b = vertex(x1, y1), vertex(x2, y2)
            w = math.hypot(x2 - x1, y2 - y1)
            adjacency[a].append((b, w))
            adjacency[b].append((a, w))
    if not points:
        raise ScenarioError(f"{path}: empty map")
    return np.array(points), adjacency


def shortest_path(adjacency, vertices, start: int, goal: int) -> list[int]:
    import heapq

    dist = {start: 0.0}
    prev: dict[int, int] = {}
    heap = [(0.0, start)]
    while heap:
        d, u = heapq.heappop(heap)
        if u == goal:
            break
        if d > dist.get(u, math.inf):
            continue
        for v, w in adjacency[u]:
            nd = d + w
            if nd < dist.get(v, math.inf):
                dist[v] = nd
                prev[v] = u
                heapq.heappush(heap, (nd, v))
    if goal not in dist:
        return [start]
    path = [goal]
    while path[-1] != start:
        path.append(prev[path[-1]])
    return path[::-1]


# -- simulation core ----------------------------------------------------------------


@dataclass
class SimMessage:
    index: int
    origin: int
    created_at: float
    size: int
    native_reached: set[int] = field(default_factory=set)
    web_reached: set[int] = field(default_factory=set)
    receive_times: dict[int, float] = field(default_factory=dict)


@dataclass
class _Direction:
    queue: list[int] = field(default_factory=list)  # message indices, oldest first
    cursor: int = 0
    in_flight: int = -1
    bytes_done: float = 0.0
    built_at: tuple[int, int] = (-1, -1)  # (sender, receiver) versions at build


@dataclass
class RunResult:
    messages: list[SimMessage]
    native_total: int
    web_total: int
    bytes_transferred: float
    transfers_aborted: int
    transfer_log: list[tuple[float, int, int, int]]  # time, sender, receiver, msg

    def mean_native_coverage(self) -> float:
        if not self.messages:
            return 0.0
        return sum(len(m.native_reached) / self.native_total for m in self.messages) / len(self.messages)

    def mean_web_coverage(self) -> float:
        if not self.messages or not self.web_total:
            return 0.0
        return sum(len(m.web_reached) / self.web_total for m in self.messages) / len(self.messages)


class Simulation:
    def __init__(self, config: ScenarioConfig, seed: int):
        config.validate()
        self.config = config
        self.seed = seed
        labels: list[str] = []
        klass: list[NodeGroup] = []
        for group in config.groups:
            for i in range(group.count):
                labels.append(f"{group.name}:{i}")
                klass.append(group)
        self.groups = klass
        self.n = len(labels)
        self.is_native = np.array([g.is_native for g in klass])
        self.is_ap = np.array([g.is_ap for g in klass])
        self.is_web = np.array([g.is_web for g in klass])
        mobile = np.array([g.is_mobile for g in klass])
        self.ranges = np.array([g.radio_range for g in klass])
        self.bitrates = np.array([g.bitrate for g in klass])
        mobility_cls = MapWaypoint if config.map_file else RandomWaypoint
        self.mobility = mobility_cls(replace(config, seed=seed), labels, mobile)
        for i, g in enumerate(klass):
            self.mobility.activate(i, *(g.speed if g.is_mobile else (0.0, 0.0)))
        self.native_ids = np.nonzero(self.is_native)[0]
        self.ap_ids = np.nonzero(self.is_ap)[0]
        self.web_ids = np.nonzero(self.is_web)[0]
        self.generators = [
            i for i, g in enumerate(klass) if g.klass == "native-mobile"
        ]
        self.traffic_rng = random.Random(f"{seed}:traffic")

        self.messages: list[SimMessage] = []
        self.live: set[int] = set()
        self.holdings: list[set[int]] = [set() for _ in range(self.n)]
        self.sorted_holdings: list[list[tuple[float, int]]] = [[] for _ in range(self.n)]
        self.versions = [0] * self.n  # bumped on every holdings change
        self.gain_log: dict[int, list[int]] = {int(a): [] for a in self.ap_ids}
        self.web_attached = np.full(len(self.web_ids), -1, dtype=int)  # index into ap_ids
        self.web_cursor = np.zeros(len(self.web_ids), dtype=int)
        self.contacts: dict[tuple[int, int], float] = {}  # pair -> start time
        self.directions: dict[tuple[int, int], _Direction] = {}
        self.bytes_transferred = 0.0
        self.transfers_aborted = 0
        self.transfer_log: list[tuple[float, int, int, int]] = []

    # -- message lifecycle -------------------------------------------------

    def _gain(self, node: int, msg_index: int, now: float) -> None:
        if msg_index in self.holdings[node]:
            return
        self.holdings[node].add(msg_index)
        self.versions[node] += 1
        message = self.messages[msg_index]
        insort(self.sorted_holdings[node], (message.created_at, msg_index))
        if self.is_native[node]:
            message.native_reached.add(node)
            if node != message.origin:
                message.receive_times[node] = now
        if node in self.gain_log:
            self.gain_log[node].append(msg_index)

    def _generate(self, now: float) -> None:
        origin = self.generators[self.traffic_rng.randrange(len(self.generators))]
        lo, hi = self.config.message_size
        size = lo if lo == hi else self.traffic_rng.randint(lo, hi)
        msg = SimMessage(len(self.messages), origin, now, size)
        self.messages.append(msg)
        self.live.add(msg.index)
        self._gain(origin, msg.index, now)

    def _expire(self, now: float) -> None:
        dead = [m for m in self.live if self.messages[m].created_at + self.config.ttl < now]
        for m in dead:
            self.live.remove(m)
            entry = (self.messages[m].created_at, m)
            for node in range(self.n):
                if m in self.holdings[node]:
                    self.holdings[node].remove(m)
                    self.sorted_holdings[node].remove(entry)
                    self.versions[node] += 1

    # -- contacts and transfers ------------------------------------------------

    def _native_contacts(self, pos: np.ndarray) -> set[tuple[int, int]]:
        ids = self.native_ids
        if len(ids) < 2:
            return set()
        sub = pos[ids]
        diff = sub[:, None, :] - sub[None, :, :]
        dist = np.hypot(diff[..., 0], diff[..., 1])
        limit = np.minimum(self.ranges[ids][:, None], self.ranges[ids][None, :])
        close = np.triu(dist <= limit, k=1)
        aa, bb = np.nonzero(close)
        return {(int(ids[a]), int(ids[b])) for a, b in zip(aa, bb)}

    def _update_contacts(self, pairs: set[tuple[int, int]], now: float) -> None:
        gone = set(self.contacts) - pairs
        for pair in gone:
            del self.contacts[pair]
            for direction in (pair, (pair[1], pair[0])):
                state = self.directions.pop(direction, None)
                if state is not None and state.in_flight >= 0:
                    self.transfers_aborted += 1
        for pair in pairs - set(self.contacts):
            self.contacts[pair] = now
            for a, b in (pair, (pair[1], pair[0])):
                self.directions[(a, b)] = _Direction()

    def _run_transfers(self, now: float, dt: float) -> None:
        # Completions are buffered and applied after every link has had its
        # slice of the step, so a message moves at most one hop per step.
        completions: list[tuple[int, int, int]] = []
        for (a, b), state in self.directions.items():
            start = self.contacts.get((a, b)) or self.contacts.get((b, a))
            if start is not None and now - start < self.config.setup_latency:
                continue
            budget = min(self.bitrates[a], self.bitrates[b]) * dt / 8.0
            while budget > 0:
                if state.in_flight < 0:
                    nxt = self._next_message(a, b, state)
                    if nxt is None:
                        break
                    state.in_flight = nxt
                    state.bytes_done = 0.0
                msg = self.messages[state.in_flight]
                needed = msg.size - state.bytes_done
                moved = min(needed, budget)
                state.bytes_done += moved
                budget -= moved
                self.bytes_transferred += moved
                if state.bytes_done >= msg.size:
                    completed = state.in_flight
                    state.in_flight = -1
                    state.bytes_done = 0.0
                    completions.append((a, b, completed))
        for a, b, completed in completions:
            if completed in self.live and completed not in self.holdings[b]:
                self._gain(b, completed, now + dt)
                self.transfer_log.append((now + dt, a, b, completed))

    def _next_message(self, a: int, b: int, state: _Direction) -> Optional[int]:
        while state.cursor < len(state.queue):
            candidate = state.queue[state.cursor]
            state.cursor += 1
            if (
                candidate in self.live
                and candidate not in self.holdings[b]
                and candidate in self.holdings[a]
            ):
                return candidate
        # Queue exhausted: rebuild only if either side changed since the
        # last build, otherwise there is provably nothing new to send.
        seen = (self.versions[a], self.versions[b])
        if state.built_at == seen:
            return None
        state.built_at = seen
        state.queue = [
            m for _, m in self.sorted_holdings[a]
            if m in self.live and m not in self.holdings[b]
        ]
        state.cursor = 0
        if state.cursor < len(state.queue):
            state.cursor += 1
            return state.queue[0]
        return None

    # -- web nodes ---------------------------------------------------------------

    def _web_reach(self, pos: np.ndarray, now: float) -> None:
        if not len(self.web_ids) or not len(self.ap_ids):
            return
        web_pos = pos[self.web_ids]
        ap_pos = pos[self.ap_ids]
        diff = web_pos[:, None, :] - ap_pos[None, :, :]
        dist = np.hypot(diff[..., 0], diff[..., 1])
        limit = np.minimum(
            self.ranges[self.web_ids][:, None], self.ranges[self.ap_ids][None, :]
        )
        reachable = dist <= limit
        any_reachable = reachable.any(axis=1)
        nearest = np.argmin(np.where(reachable, dist, np.inf), axis=1)
        nearest = np.where(any_reachable, nearest, -1)
        changed = np.nonzero(nearest != self.web_attached)[0]
        for wi in changed:
            ap_slot = int(nearest[wi])
            self.web_attached[wi] = ap_slot
            if ap_slot < 0:
                continue
            ap = int(self.ap_ids[ap_slot])
            w = int(self.web_ids[wi])
            # Fresh attachment: everything the AP holds right now counts.
            for m in self.holdings[ap]:
                if m in self.live:
                    self.messages[m].web_reached.add(w)
            self.web_cursor[wi] = len(self.gain_log[ap])
        # Attached and unchanged: consume any new gains from the AP's log.
        for wi in np.nonzero(self.web_attached >= 0)[0]:
            ap = int(self.ap_ids[self.web_attached[wi]])
            log = self.gain_log[ap]
            cursor = int(self.web_cursor[wi])
            if cursor >= len(log):
                continue
            w = int(self.web_ids[wi])
            while cursor < len(log):
                m = log[cursor]
                cursor += 1
                if m in self.live:
                    self.messages[m].web_reached.add(w)
            self.web_cursor[wi] = cursor

    # -- main loop -------------------------------------------------------------------

    def run(self) -> RunResult:
        config = self.config
        steps = int(round(config.duration / config.step))
        next_generation = 0.0
        pos = self.mobility.pos
        for step_index in range(steps):
            now = step_index * config.step
            while next_generation <= now:
                self._generate(next_generation)
                next_generation += config.message_interval
            self._expire(now)
            if step_index:
                pos = self.mobility.step(config.step)
            pairs = self._native_contacts(pos)
            self._update_contacts(pairs, now)
            self._run_transfers(now, config.step)
            self._web_reach(pos, now)
        return RunResult(
            messages=self.messages,
            native_total=int(self.is_native.sum()),
            web_total=int(self.is_web.sum()),
            bytes_transferred=self.bytes_transferred,
            transfers_aborted=self.transfers_aborted,
            transfer_log=self.transfer_log,
        )


# -- reports -----------------------------------------------------------------------


@dataclass
class CoverageReport:
    config: ScenarioConfig
    runs: list[RunResult]

    @property
    def mean_native_coverage(self) -> float:
        return sum(r.mean_native_coverage() for r in self.runs) / len(self.runs)

    @property
    def mean_web_coverage(self) -> float:
        return sum(r.mean_web_coverage() for r in self.runs) / len(self.runs)

    @property
    def bytes_transferred(self) -> float:
        return sum(r.bytes_transferred for r in self.runs)

    @property
    def transfers_aborted(self) -> int:
        return sum(r.transfers_aborted for r in self.runs)

    def run_csv(self, run_index: int) -> str:
        result = self.runs[run_index]
        lines = [
            "message_id,gen_time,size_bytes,native_reached,web_reached,"
            "native_total,web_total,latency_p50,latency_p90"
        ]
        for msg in result.messages:
            latencies = sorted(
                t - msg.created_at for n, t in msg.receive_times.items()
            )
            p50 = _percentile(latencies, 0.5)
            p90 = _percentile(latencies, 0.9)
            lines.append(
                f"m{msg.index:05d},{msg.created_at:.1f},{msg.size},"
                f"{len(msg.native_reached)},{len(msg.web_reached)},"
                f"{result.native_total},{result.web_total},"
                f"{p50:.3f},{p90:.3f}"
            )
        return "\n".join(lines) + "\n"

    def summary_csv(self) -> str:
        lines = [
            "run,messages,mean_native_coverage,mean_web_coverage,"
            "bytes_transferred,transfers_aborted"
        ]
        for i, result in enumerate(self.runs):
            lines.append(
                f"{i},{len(result.messages)},{result.mean_native_coverage():.6f},"
                f"{result.mean_web_coverage():.6f},{result.bytes_transferred:.0f},"
                f"{result.transfers_aborted}"
            )
        lines.append(
            f"mean,,{self.mean_native_coverage:.6f},{self.mean_web_coverage:.6f},"
            f"{self.bytes_transferred:.0f},{self.transfers_aborted}"
        )
        return "\n".join(lines) + "\n"

    def digest(self) -> str:
        payload = "".join(self.run_csv(i) for i in range(len(self.runs)))
        return hashlib.sha256(payload.encode()).hexdigest()


def _percentile(values: list[float], q: float) -> float:
    if not values:
        return -1.0
    if len(values) == 1:
        return values[0]
    rank = q * (len(values) - 1)
    lo = int(math.floor(rank))
    hi = min(lo + 1, len(values) - 1)
    frac = rank - lo
    return values[lo] * (1 - frac) + values[hi] * frac


def run_scenario(config: ScenarioConfig) -> CoverageReport:
    config.validate()
    results = []
    for r in range(config.runs):
        sim = Simulation(config, seed=config.seed + r)
        results.append(sim.run())
    return CoverageReport(config, results)


def write_report(report: CoverageReport, out_dir: str, stem: str) -> list[str]:
    os.makedirs(out_dir, exist_ok=True)
    written = []
    for i in range(len(report.runs)):
        path = os.path.join(out_dir, f"{stem}.run{i:02d}.csv")
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(report.run_csv(i))
        written.append(path)
    summary = os.path.join(out_dir, f"{stem}.summary.csv")
    with open(summary, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(report.summary_csv())
    written.append(summary)
    return written


def sweep(scenario_paths: list[str], out_dir: str) -> str:
    """Run several scenarios and produce one comparison table."""
    lines = [
        "scenario,interval_s,size_lo,size_hi,mean_native_coverage,"
        "mean_web_coverage,bytes_transferred,transfers_aborted"
    ]
    os.makedirs(out_dir, exist_ok=True)
    for path in sorted(scenario_paths):
        config = load_scenario(path)
        report = run_scenario(config)
        stem = os.path.splitext(os.path.basename(path))[0]
        write_report(report, out_dir, stem)
        lines.append(
            f"{stem},{config.message_interval:.0f},{config.message_size[0]},"
            f"{config.message_size[1]},{report.mean_native_coverage:.6f},"
            f"{report.mean_web_coverage:.6f},{report.bytes_transferred:.0f},"
            f"{report.transfers_aborted}"
        )
    table = "\n".join(lines) + "\n"
    with open(os.path.join(out_dir, "sweep.csv"), "w", encoding="utf-8", newline="\n") as fh:
        fh.write(table)
    return table


# -- cross-check against the real protocol ---------------------------------------------


def crosscheck_static_clique(node_count: int = 4, message_count: int = 3) -> bool:
    """Drive the real frame protocol over in-memory channels on a static
    clique and confirm it reaches the same all-nodes coverage the abstract
    engine predicts for the same topology."""
    import threading

    from oppweb.message import Message
    from oppweb.store import CacheStore
    from oppweb.sync import MemoryChannel, run_session

    stores = [CacheStore() for _ in range(node_count)]
    for i in range(message_count):
        msg = Message(
            service="sim", originator=f"n{i % node_count}", created_at=i,
            ttl_seconds=10**6, metadata={"n": str(i)},
            payload=[("pad", bytes(64))],
        )
        stores[i % node_count].insert(msg, now=message_count)
    for a in range(node_count):
        for b in range(a + 1, node_count):
            ca, cb = MemoryChannel.pair()
            ta = threading.Thread(
                target=run_session, args=(ca, stores[a], message_count), daemon=True
            )
            ta.start()
            run_session(cb, stores[b], message_count)
            ta.join(10)
            ca.close()

    group = NodeGroup(name="n", klass="native-mobile", count=node_count,
                      speed=(0.0, 0.0), radio_range=10_000.0)
    config = ScenarioConfig(
        seed=1, width=100, height=100, duration=float(message_count + 5), step=1.0,
        ttl=10**6, message_interval=1.0, message_size=(64, 64), runs=1,
        groups=(group,),
    )
    abstract = run_scenario(config).runs[0]
    abstract_full = all(
        len(m.native_reached) == node_count for m in abstract.messages
        if m.created_at + 2 < config.duration
    )
    real_full = len({s.state_digest() for s in stores}) == 1
    return abstract_full and real_full
