"""Common contract for the emulated compute backends.

Every backend turns a translated request into an ``AllocationHandle`` that
progresses asynchronously: listeners hear about granted containers,
readiness, preemptions and failure without polling. The emulations run
real threads against fake hardware, so timing behavior (queue waits,
incremental grants) is observable while staying in-process.
"""

from __future__ import annotations

import random
import threading
from dataclasses import dataclass, field
from enum import Enum

from ..errors import AgentSpawnError, UnknownPilotError
from ..states import PilotState
from ..translation import BackendCapacity


@dataclass
class EmulatedClusterConfig:
    """Shape and timing of one emulated resource."""

    n_nodes: int = 4
    cores_per_node: int = 8
    memory_per_node_mb: int = 16384
    # Uniform queue-wait window before a batch grant, in milliseconds.
    queue_wait_ms: tuple = (0, 0)
    # Container scheduler period: one worker grant per allocation per tick.
    tick_ms: int = 10
    # Pending allocations older than this fail with ALLOCATION_TIMEOUT.
    pending_timeout_ms: int | None = None
    preemption_enabled: bool = True
    seed: int = 0

    def capacity(self) -> BackendCapacity:
        return BackendCapacity(
            n_nodes=self.n_nodes,
            cores_per_node=self.cores_per_node,
            memory_per_node_mb=self.memory_per_node_mb,
        )


class ContainerRole(str, Enum):
    APP_MASTER = "APP_MASTER"
    WORKER = "WORKER"


@dataclass
class Container:
    container_id: str
    role: ContainerRole
    node: str
    cores: int
    memory_mb: int
    released: bool = False


class AllocationHandle:
    """One backend allocation as the manager sees it.

    ``state`` mirrors the pilot lifecycle for the allocation itself;
    ``granted_cores`` grows as the backend hands over resources.
    """

    _counter = 0
    _counter_lock = threading.Lock()

    def __init__(self, backend, request):
        with AllocationHandle._counter_lock:
            AllocationHandle._counter += 1
            self.handle_id = f"alloc-{AllocationHandle._counter:06d}"
        self.backend = backend
        self.request = request
        self.state = PilotState.NEW
        self.granted_cores = 0
        self.nodes: list[str] = []
        self.containers: dict[str, Container] = {}
        self.failure_reason: str | None = None
        self._listeners: list = []
        self._lock = threading.Lock()
        self._state_cond = threading.Condition(self._lock)

    @property
    def machine_label(self) -> str | None:
        """Synthetic machine label: the first node backing the allocation."""
        return self.nodes[0] if self.nodes else None

    def subscribe(self, listener):
        """Register ``listener(event_name, handle, **info)``; it also replays
        nothing — subscribe before the backend starts progressing."""
        with self._lock:
            self._listeners.append(listener)

    def _fire(self, event, **info):
        with self._lock:
            listeners = list(self._listeners)
        for fn in listeners:
            fn(event, self, **info)

    def _set_state(self, new):
        with self._state_cond:
            self.state = new
            self._state_cond.notify_all()

    def wait_for_state(self, states, timeout=None) -> bool:
        states = set(states)
        with self._state_cond:
            return self._state_cond.wait_for(lambda: self.state in states, timeout)


class ComputeBackend:
    """Base for the three emulations; subclasses drive the grant dynamics."""

    kind = "abstract"

    def __init__(self, config: EmulatedClusterConfig | None = None, event_log=None,
                 node_prefix="node"):
        self.config = config or EmulatedClusterConfig()
        self.event_log = event_log
        self.node_names = [
            f"{node_prefix}-{i:03d}" for i in range(self.config.n_nodes)
        ]
        self.rng = random.Random(self.config.seed)
        self._fail_next_spawn = False
        self._handles: list[AllocationHandle] = []
        self._lock = threading.RLock()
        self._closed = False

    def capacity_info(self) -> BackendCapacity:
        return self.config.capacity()

    def _emit(self, handle, old, new, reason, **detail):
        if self.event_log is not None:
            self.event_log.emit(
                "alloc", f"alloc:{handle.handle_id}", old, new, reason,
                backend=self.kind, **detail,
            )

    def allocate(self, request) -> AllocationHandle:
        raise NotImplementedError

    def status(self, handle) -> PilotState:
        return handle.state

    def cancel(self, handle):
        raise NotImplementedError

    def close(self):
        with self._lock:
            if self._closed:
                return
            self._closed = True
        for handle in list(self._handles):
            self.cancel(handle)
        self._stop_workers()

    def _stop_workers(self):
        pass

    # -- agents ---------------------------------------------------------

    def fail_next_agent_spawn(self):
        """Test hook: the next launch_agents call raises AGENT_SPAWN_FAILED."""
        self._fail_next_spawn = True

    def agent_plan(self, handle) -> list[dict]:
        """How many agents this allocation needs and where they sit."""
        raise NotImplementedError

    def launch_agents(self, handle, ctx, pilot_id, containers=None) -> list:
        """Start agent threads per the allocation's topology.

        ``containers`` narrows the launch to specific worker containers
        (incremental starts on the container backend).
        """
        from .agent import Agent

        if self._fail_next_spawn:
            self._fail_next_spawn = False
            raise AgentSpawnError(f"injected spawn failure on {self.kind}")
        specs = self.agent_plan(handle)
        if containers is not None:
            wanted = {c.container_id for c in containers}
            specs = [s for s in specs if s.get("container_id") in wanted]
        agents = []
        for spec in specs:
            agent = Agent(
                ctx=ctx, pilot_id=pilot_id,
                agent_id=spec["agent_id"], slots=spec["slots"],
                node=spec.get("node"), container_id=spec.get("container_id"),
            )
            agent.start()
            agents.append(agent)
        return agents

    def _require_handle(self, handle):
        if handle not in self._handles:
            raise UnknownPilotError(f"{handle.handle_id} not from this backend")


def sample_wait_s(rng, window_ms) -> float:
    """Seeded uniform draw from a (lo, hi) millisecond window."""
    if isinstance(window_ms, (int, float)):
        lo = hi = float(window_ms)
    else:
        lo, hi = window_ms
    if hi <= 0:
        return 0.0
    return rng.uniform(lo, hi) / 1000.0
