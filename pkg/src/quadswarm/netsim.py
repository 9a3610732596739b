"""Simulated inter-agent communication fabric.

A directed (optionally time-varying) topology carries byte payloads
between agents with configurable delivery semantics: reliable or lossy
with a drop probability, plus a fixed latency in simulated seconds. Losses
are drawn from one seeded stream per directed edge, so per-edge statistics
are reproducible regardless of send interleaving.

The fabric is thread-safe. ``receive`` blocks (wall clock) up to a
timeout; ``asynchronous_receive`` drains without blocking. Simulated time
only moves when the owner calls ``advance_to``; messages become visible to
receivers once time passes their send time plus latency.

``neighbors_exchange`` is the synchronous-round primitive: payloads are
round-tagged rather than barrier-synchronized, so the same delivery engine
serves reliable, lossy and asynchronous use. For single-threaded lockstep
drivers the two phases are exposed separately (``exchange_send`` then
``exchange_collect``); the combined call is for one-thread-per-agent use.
Late round messages count as lost; reusing an old round number raises.
"""

from __future__ import annotations

import threading
from collections import deque
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

AgentId = int


class NetworkError(Exception):
    pass


class TopologyError(NetworkError):
    """Send attempted on an edge absent from the current graph."""


class ProtocolError(NetworkError):
    """Synchronous-exchange misuse (non-increasing round number)."""


@dataclass(frozen=True)
class TopologyGraph:
    """Directed communication graph; edge (j -> i) means i hears j."""

    n: int
    in_neighbors: Tuple[frozenset, ...]
    schedule: Optional[Tuple[Tuple[float, "TopologyGraph"], ...]] = None

    def __post_init__(self):
        if self.n <= 0:
            raise ValueError(f"agent count must be positive, got {self.n}")
        if len(self.in_neighbors) != self.n:
            raise ValueError("need one in-neighbor set per agent")
        for i, nbrs in enumerate(self.in_neighbors):
            for j in nbrs:
                if not (0 <= j < self.n):
                    raise ValueError(f"agent {i} lists out-of-range neighbor {j}")
                if j == i:
                    raise ValueError(f"agent {i} has a self-loop")
        if self.schedule is not None:
            times = [entry[0] for entry in self.schedule]
            if not times or times != sorted(times):
                raise ValueError("schedule times must be sorted")
            for _, graph in self.schedule:
                if graph.n != self.n or graph.schedule is not None:
                    raise ValueError("scheduled graphs must be static with matching size")

    @classmethod
    def from_edges(cls, n: int, edges: Sequence[Tuple[int, int]]) -> "TopologyGraph":
        nbrs = [set() for _ in range(n)]
        for src, dst in edges:
            if not (0 <= dst < n):
                raise ValueError(f"edge destination {dst} out of range")
            nbrs[dst].add(src)
        return cls(n, tuple(frozenset(s) for s in nbrs))

    @classmethod
    def time_varying(cls, n: int, schedule) -> "TopologyGraph":
        entries = tuple((float(t), g) for t, g in schedule)
        if not entries:
            raise ValueError("time-varying graph needs at least one schedule entry")
        return cls(n, entries[0][1].in_neighbors, entries)

    @classmethod
    def complete(cls, n: int) -> "TopologyGraph":
        return cls(n, tuple(frozenset(set(range(n)) - {i}) for i in range(n)))

    def graph_at(self, t: float) -> "TopologyGraph":
        if self.schedule is None:
            return self
        current = self.schedule[0][1]
        for start, graph in self.schedule:
            if start <= t:
                current = graph
            else:
                break
        return current

    def has_edge(self, frm: AgentId, to: AgentId, t: float = 0.0) -> bool:
        g = self.graph_at(t)
        return 0 <= to < g.n and frm in g.in_neighbors[to]

    def out_neighbors(self, frm: AgentId, t: float = 0.0) -> List[AgentId]:
        g = self.graph_at(t)
        return [i for i in range(g.n) if frm in g.in_neighbors[i]]


@dataclass(frozen=True)
class QosProfile:
    mode: str = "reliable"          # "reliable" | "lossy"
    drop_probability: float = 0.0
    latency: float = 0.0

    def __post_init__(self):
        if self.mode not in ("reliable", "lossy"):
            raise ValueError(f"unknown QoS mode {self.mode!r}")
        if not (0.0 <= self.drop_probability < 1.0):
            raise ValueError(f"drop_probability must be in [0, 1), got {self.drop_probability}")
        if self.mode == "reliable" and self.drop_probability != 0.0:
            raise ValueError("reliable mode cannot drop messages")
        if self.latency < 0.0:
            raise ValueError(f"latency must be >= 0, got {self.latency}")

    @classmethod
    def lossy(cls, drop_probability: float, latency: float = 0.0) -> "QosProfile":
        return cls("lossy", drop_probability, latency)


@dataclass(frozen=True)
class Envelope:
    sender: AgentId
    sequence: int
    payload: bytes
    exchange_round: Optional[int] = None


@dataclass
class _Channel:
    next_seq: int = 0
    pending: deque = field(default_factory=deque)     # (deliver_time, Envelope)
    plain: deque = field(default_factory=deque)       # delivered, receive()/async
    exchange: deque = field(default_factory=deque)    # delivered, round-tagged


TIMED_OUT = None  # receive() timeout sentinel; payloads are always bytes


class Network:
    """Message fabric for one swarm."""

    def __init__(self, graph: TopologyGraph, qos: QosProfile = QosProfile(), seed: int = 0):
        self.graph = graph
        self.qos = qos
        self.seed = seed
        self.now = 0.0
        self._channels: Dict[Tuple[int, int], _Channel] = {}
        self._edge_rng: Dict[Tuple[int, int], np.random.Generator] = {}
        self._last_round: Dict[int, int] = {}
        self._cv = threading.Condition()

    def _channel(self, frm: AgentId, to: AgentId) -> _Channel:
        key = (frm, to)
        ch = self._channels.get(key)
        if ch is None:
            ch = _Channel()
            self._channels[key] = ch
        return ch

    def _rng(self, frm: AgentId, to: AgentId) -> np.random.Generator:
        key = (frm, to)
        rng = self._edge_rng.get(key)
        if rng is None:
            rng = np.random.default_rng(np.random.SeedSequence([self.seed, frm, to]))
            self._edge_rng[key] = rng
        return rng

    @staticmethod
    def _deliver(ch: _Channel, env: Envelope) -> None:
        if env.exchange_round is None:
            ch.plain.append(env)
        else:
            ch.exchange.append(env)

    def advance_to(self, t: float) -> None:
        """Move simulated time forward, releasing due messages."""
        with self._cv:
            if t < self.now:
                raise ValueError(f"time cannot move backwards ({t} < {self.now})")
            self.now = t
            for ch in self._channels.values():
                while ch.pending and ch.pending[0][0] <= t:
                    self._deliver(ch, ch.pending.popleft()[1])
            self._cv.notify_all()

    def _send_locked(self, frm: AgentId, to: AgentId, payload: bytes,
                     exchange_round: Optional[int]) -> None:
        if not self.graph.has_edge(frm, to, self.now):
            raise TopologyError(f"no edge {frm} -> {to} at t={self.now}")
        ch = self._channel(frm, to)
        seq = ch.next_seq
        ch.next_seq += 1
        if self.qos.mode == "lossy" and self._rng(frm, to).random() < self.qos.drop_probability:
            return
        env = Envelope(frm, seq, bytes(payload), exchange_round)
        deliver_at = self.now + self.qos.latency
        if deliver_at <= self.now:
            self._deliver(ch, env)
            self._cv.notify_all()
        else:
            ch.pending.append((deliver_at, env))

    def send(self, frm: AgentId, to: AgentId, payload: bytes) -> None:
        with self._cv:
            self._send_locked(frm, to, payload, None)

    def receive(self, at: AgentId, frm: AgentId, timeout: float = 0.0) -> Optional[bytes]:
        """Oldest plain message from ``frm``, or TIMED_OUT (None) on timeout.

        The timeout is wall-clock; simulated latency is owned by
        ``advance_to`` calls from another thread.
        """
        with self._cv:
            if not self.graph.has_edge(frm, at, self.now):
                raise TopologyError(f"no edge {frm} -> {at} at t={self.now}")
            ch = self._channel(frm, at)
            if not ch.plain and timeout > 0.0:
                self._cv.wait_for(lambda: bool(ch.plain), timeout)
            if ch.plain:
                return ch.plain.popleft().payload
            return TIMED_OUT

    def asynchronous_receive(self, at: AgentId) -> Dict[AgentId, List[bytes]]:
        """Drain everything already delivered to ``at``; never blocks."""
        out: Dict[AgentId, List[bytes]] = {}
        with self._cv:
            for (frm, to), ch in self._channels.items():
                if to != at or not ch.plain:
                    continue
                out[frm] = [env.payload for env in ch.plain]
                ch.plain.clear()
        return out

    @staticmethod
    def _payload_for(payload, to: AgentId) -> bytes:
        if isinstance(payload, dict):
            return payload[to]
        return payload

    def exchange_send(self, at: AgentId, payload, round_no: int) -> None:
        """Send a round-tagged payload to every out-neighbor.

        ``payload`` is either one bytes object for all neighbors or a map
        from neighbor id to bytes (different data to different neighbors).
        """
        with self._cv:
            last = self._last_round.get(at)
            if last is not None and round_no <= last:
                raise ProtocolError(
                    f"agent {at} reused exchange round {round_no} (last was {last})"
                )
            self._last_round[at] = round_no
            for to in self.graph.out_neighbors(at, self.now):
                self._send_locked(at, to, self._payload_for(payload, to), round_no)

    def _collect_one(self, frm: AgentId, at: AgentId, round_no: int) -> Optional[bytes]:
        # discard older rounds (late == lost); keep future rounds queued
        ch = self._channel(frm, at)
        while ch.exchange:
            env = ch.exchange[0]
            if env.exchange_round > round_no:
                return None
            ch.exchange.popleft()
            if env.exchange_round == round_no:
                return env.payload
        return None

    def exchange_collect(self, at: AgentId, round_no: int) -> Dict[AgentId, bytes]:
        """Non-blocking collect of this round's payload per in-neighbor.

        Missing neighbors (dropped or not yet delivered) are absent keys.
        """
        out: Dict[AgentId, bytes] = {}
        with self._cv:
            for frm in self.graph.graph_at(self.now).in_neighbors[at]:
                payload = self._collect_one(frm, at, round_no)
                if payload is not None:
                    out[frm] = payload
        return out

    def neighbors_exchange(self, at: AgentId, payload, round_no: int,
                           timeout: float = 1.0) -> Dict[AgentId, bytes]:
        """Synchronous round: send to out-neighbors, collect one payload per
        in-neighbor for the same round (blocking form, for threaded agents)."""
        self.exchange_send(at, payload, round_no)
        expected = set(self.graph.graph_at(self.now).in_neighbors[at])
        out: Dict[AgentId, bytes] = {}

        def _drain() -> bool:
            for frm in expected - set(out):
                payload = self._collect_one(frm, at, round_no)
                if payload is not None:
                    out[frm] = payload
            return len(out) == len(expected)

        with self._cv:
            if not _drain() and timeout > 0.0:
                self._cv.wait_for(_drain, timeout)
        return out
