"""Composition root: one object that wires backends, storage, the manager
and the in-memory engines together.

The runtime owns the lifecycle glue that no single component should know
about: subscribing to allocation events so grants become manager capacity,
launching agents when resources arrive, requeueing the victim of a
container preemption, and invalidating memory-tier spaces when the pilot
that owns them dies.
"""

from __future__ import annotations

import dataclasses
import os
import shutil
import tempfile
import threading
from dataclasses import dataclass, field
from pathlib import Path

from .compute import (
    AgentContext,
    BatchQueueBackend,
    ContainerGrantBackend,
    ContainerRole,
    EmulatedClusterConfig,
    LocalProcessBackend,
    bootstrap_cluster,
)
from .descriptions import (
    ComputeUnitDescription,
    PilotComputeDescription,
    parse_backend_url,
    validate,
)
from .errors import AgentSpawnError, UnknownBackendError, UnknownPilotError
from .events import EventLog
from .manager import PilotManager, ScheduleMode
from .memory import FileStoreBackend, InProcessStoreBackend, MemoryEngine
from .states import PilotState
from .storage import DataUnitManager, StorageService

ROOT_ENV_VAR = "PILOTKIT_ROOT"


@dataclass
class RuntimeConfig:
    """Knobs for a PilotRuntime; every field has a workable default."""

    root: Path | None = None
    schedule_mode: ScheduleMode = ScheduleMode.SOFT_AFFINITY
    max_requeues: int = 3
    local_space_mb: int = 1024
    engine_space_mb: int = 2048
    poll_interval: float = 0.01
    task_timeout: float = 600.0
    tiers: list | None = None
    backend_configs: dict[str, EmulatedClusterConfig] = field(default_factory=dict)

    def resolve_root(self) -> tuple[Path, bool]:
        """Pick the working directory; True means the runtime owns it."""
        if self.root is not None:
            root = Path(self.root)
            root.mkdir(parents=True, exist_ok=True)
            return root, False
        env = os.environ.get(ROOT_ENV_VAR)
        if env:
            root = Path(env)
            root.mkdir(parents=True, exist_ok=True)
            return root, False
        return Path(tempfile.mkdtemp(prefix="pilotkit-")), True


@dataclass
class _PilotWiring:
    """Joins one allocation to its pilot on the runtime side."""

    pilot_id: str
    handle: object
    backend: object
    lock: threading.Lock = field(default_factory=threading.Lock)
    running_handled: bool = False
    failure_handled: bool = False
    seen_containers: set = field(default_factory=set)
    agents: list = field(default_factory=list)
    container_agents: dict = field(default_factory=dict)


class PilotRuntime:
    """Facade over the whole stack; most programs need nothing else."""

    _DEFAULT_BACKEND_CONFIGS = {
        "local": EmulatedClusterConfig(
            n_nodes=1, cores_per_node=16, memory_per_node_mb=65536,
        ),
        "batch-emu": EmulatedClusterConfig(
            n_nodes=4, cores_per_node=8, memory_per_node_mb=16384,
            queue_wait_ms=(5, 25),
        ),
        "yarn-emu": EmulatedClusterConfig(
            n_nodes=4, cores_per_node=8, memory_per_node_mb=16384, tick_ms=5,
        ),
    }

    def __init__(self, config: RuntimeConfig | None = None):
        self.config = config or RuntimeConfig()
        self.root, self._owns_root = self.config.resolve_root()
        self.event_log = EventLog()
        self.storage = StorageService(
            self.root / "storage", tiers=self.config.tiers, event_log=self.event_log
        )
        self.du_manager = DataUnitManager(self.storage, event_log=self.event_log)
        self.manager = PilotManager(
            event_log=self.event_log,
            du_manager=self.du_manager,
            mode=self.config.schedule_mode,
            max_requeues=self.config.max_requeues,
        )
        self.payloads: dict[str, object] = {}
        self.backends = {}
        for kind, cls in (
            ("local", LocalProcessBackend),
            ("batch-emu", BatchQueueBackend),
            ("yarn-emu", ContainerGrantBackend),
        ):
            cfg = self.config.backend_configs.get(
                kind, self._DEFAULT_BACKEND_CONFIGS[kind]
            )
            self.backends[kind] = cls(config=cfg, event_log=self.event_log)
        self._agent_ctx = AgentContext(
            manager=self.manager,
            sandbox_root=self.root / "sandboxes",
            du_manager=self.du_manager,
            payloads=self.payloads,
            poll_interval=self.config.poll_interval,
            on_crash=self._on_agent_crash,
        )
        self._wirings: dict[str, _PilotWiring] = {}
        self._engines: dict[str, MemoryEngine] = {}
        self._lock = threading.Lock()
        self._closed = False

    # -- context manager --------------------------------------------------

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()
        return False

    # -- pilots ------------------------------------------------------------

    def backend_for(self, resource_url: str):
        kind, _ = parse_backend_url(resource_url)
        backend = self.backends.get(kind)
        if backend is None:
            raise UnknownBackendError(f"no compute backend {kind!r}")
        return backend

    def start_pilot(self, description) -> str:
        """Validate, translate, allocate and register one compute pilot.

        Returns the pilot id immediately; resources and agents arrive as
        the backend grants them.
        """
        from .translation import translate_description

        desc = validate(description)
        backend = self.backend_for(desc.resource_url)
        request = translate_description(desc, backend.capacity_info())
        handle = backend.allocate(request)
        if desc.affinity_machine_label is None:
            # Allocation-stable synthetic label so locality is always
            # decidable, even before any node is known.
            desc = dataclasses.replace(
                desc, affinity_machine_label=f"m-{handle.handle_id}"
            )
        pilot_id = self.manager.register_pilot(handle, desc)
        local_space = self.storage.create_space(
            "file://",
            self.config.local_space_mb,
            labels={
                "datacenter": desc.affinity_datacenter_label,
                "machine": desc.affinity_machine_label,
            },
            owner_pilot_id=pilot_id,
        )
        self.manager.get_pilot(pilot_id).local_space = local_space
        self.event_log.emit(
            "link", f"pilot:{pilot_id}", "-", handle.handle_id,
            "allocation linked", backend=backend.kind,
        )
        wiring = _PilotWiring(pilot_id=pilot_id, handle=handle, backend=backend)
        with self._lock:
            self._wirings[pilot_id] = wiring
        handle.subscribe(self._make_listener(wiring))
        self._sync_handle(wiring)
        return pilot_id

    def start_local_pilot(self, cores=4, memory_mb=1024, **labels) -> str:
        desc = PilotComputeDescription(
            resource_url="local://localhost", cores=cores, memory_mb=memory_mb,
            affinity_datacenter_label=labels.get("datacenter"),
            affinity_machine_label=labels.get("machine"),
        )
        return self.start_pilot(desc)

    def wait_pilot(self, pilot_id, states=(PilotState.RUNNING,), timeout=30.0) -> bool:
        return self.manager.wait_for_pilot_state(pilot_id, states, timeout)

    def cancel_pilot(self, pilot_id):
        wiring = self._wirings.get(pilot_id)
        self.manager.deregister_pilot(pilot_id)
        if wiring is not None:
            self._teardown_pilot(wiring)
        dead = self.storage.invalidate_pilot_spaces(pilot_id)
        self.du_manager.handle_dead_spaces(dead)

    def preempt_container(self, pilot_id, container_id):
        """Ask the backend to take one worker back; the displaced unit is
        requeued before the capacity shrink becomes visible."""
        wiring = self._wirings[pilot_id]
        wiring.backend.preempt(wiring.handle, container_id)

    def bootstrap_cluster(self, pilot_id, runtime_kind, fail_phase=None):
        return bootstrap_cluster(
            self.manager, pilot_id, runtime_kind,
            self.root / "clusters", fail_phase=fail_phase,
        )

    # -- allocation event plumbing ----------------------------------------

    def _make_listener(self, wiring):
        def listener(event, handle, **info):
            try:
                self._on_alloc_event(wiring, event, info)
            except UnknownPilotError:
                pass  # pilot already withdrawn during shutdown
        return listener

    def _on_alloc_event(self, wiring, event, info):
        if event == "running":
            # Container-backed allocations account capacity per worker
            # grant; "running" only carries capacity for whole grants.
            if not wiring.handle.containers:
                self._handle_running(wiring)
        elif event == "worker-granted":
            self._handle_worker(wiring, info["container"])
        elif event == "preempted":
            self._handle_preempt(wiring, info["container"])
        elif event == "failed":
            self._handle_failed(wiring, info.get("reason", "allocation failed"))
        # "master-granted" and "canceled" need no runtime-side action: the
        # master hosts no units, and cancels originate here.

    def _sync_handle(self, wiring):
        """Catch up on grants that happened before we subscribed."""
        handle = wiring.handle
        for container in list(handle.containers.values()):
            if container.role is ContainerRole.WORKER and not container.released:
                self._handle_worker(wiring, container)
        if handle.state is PilotState.RUNNING and not handle.containers:
            self._handle_running(wiring)
        elif handle.state is PilotState.FAILED:
            self._handle_failed(wiring, handle.failure_reason or "allocation failed")

    def _handle_running(self, wiring):
        """Whole-allocation grant (local and batch backends)."""
        with wiring.lock:
            if wiring.running_handled:
                return
            wiring.running_handled = True
        handle = wiring.handle
        self.manager.update_capacity(
            wiring.pilot_id, handle.granted_cores, "allocation granted"
        )
        try:
            agents = wiring.backend.launch_agents(
                handle, self._agent_ctx, wiring.pilot_id
            )
        except AgentSpawnError as exc:
            self._spawn_failed(wiring, exc)
            return
        with wiring.lock:
            wiring.agents.extend(agents)

    def _handle_worker(self, wiring, container):
        """Single-container grant (container backend). One agent per worker."""
        with wiring.lock:
            if container.container_id in wiring.seen_containers:
                return
            wiring.seen_containers.add(container.container_id)
        self.manager.update_capacity(
            wiring.pilot_id, container.cores, f"worker {container.container_id}"
        )
        try:
            agents = wiring.backend.launch_agents(
                wiring.handle, self._agent_ctx, wiring.pilot_id,
                containers=[container],
            )
        except AgentSpawnError as exc:
            self._spawn_failed(wiring, exc)
            return
        with wiring.lock:
            wiring.agents.extend(agents)
            for agent in agents:
                wiring.container_agents[container.container_id] = agent

    def _handle_preempt(self, wiring, container):
        with wiring.lock:
            agent = wiring.container_agents.pop(container.container_id, None)
        victim = None
        if agent is not None:
            victim = agent.current_unit
            agent.kill()
        if victim is not None:
            # Requeue before shrinking so in-use never exceeds capacity.
            self.manager.requeue_unit(victim, f"preempted {container.container_id}")
        self.manager.update_capacity(
            wiring.pilot_id, -container.cores, f"preempted {container.container_id}"
        )

    def _handle_failed(self, wiring, reason):
        with wiring.lock:
            if wiring.failure_handled:
                return
            wiring.failure_handled = True
        self.manager.fail_pilot(wiring.pilot_id, reason)
        self._teardown_pilot(wiring)
        dead = self.storage.invalidate_pilot_spaces(wiring.pilot_id)
        self.du_manager.handle_dead_spaces(dead)

    def _spawn_failed(self, wiring, exc):
        self.manager.fail_pilot(wiring.pilot_id, f"AGENT_SPAWN_FAILED: {exc}")
        wiring.backend.cancel(wiring.handle)
        self._teardown_pilot(wiring)

    def _on_agent_crash(self, agent, reason):
        pilot_id = agent.pilot_id
        self.manager.fail_pilot(pilot_id, f"agent crashed: {reason}")
        wiring = self._wirings.get(pilot_id)
        if wiring is not None:
            wiring.backend.cancel(wiring.handle)
            self._teardown_pilot(wiring)
        dead = self.storage.invalidate_pilot_spaces(pilot_id)
        self.du_manager.handle_dead_spaces(dead)

    def _teardown_pilot(self, wiring):
        with wiring.lock:
            agents = list(wiring.agents)
            wiring.agents.clear()
            wiring.container_agents.clear()
        for agent in agents:
            agent.stop(drain=False)
        pilot = self.manager.get_pilot(wiring.pilot_id)
        if pilot.cluster is not None:
            pilot.cluster.shutdown()
            pilot.cluster = None

    # -- data --------------------------------------------------------------

    def add_data_space(self, description) -> str:
        return self.manager.register_data_pilot(description)

    def import_data(self, description) -> str:
        return self.manager.submit_data_unit(description)

    # -- units ---------------------------------------------------------------

    def submit_unit(self, description) -> str:
        return self.manager.submit_compute_unit(description)

    def wait_units(self, unit_ids, timeout=None) -> bool:
        ok = self.manager.wait_for_units(unit_ids, timeout)
        if ok:
            self.manager.raise_if_failed(unit_ids)
        return ok

    def run_executable(self, executable, arguments=(), cores=1,
                       input_du_ids=(), output_du_ids=(), timeout=60.0) -> str:
        """Convenience: submit one executable unit and wait for it."""
        desc = ComputeUnitDescription(
            kind="EXECUTABLE", executable=executable, arguments=list(arguments),
            cores=cores, input_du_ids=list(input_du_ids),
            output_du_ids=list(output_du_ids),
        )
        unit_id = self.submit_unit(desc)
        self.wait_units([unit_id], timeout)
        return unit_id

    # -- engines -------------------------------------------------------------

    def engine(self, kind="memory") -> MemoryEngine:
        """Shared MemoryEngine over the requested store backend."""
        with self._lock:
            engine = self._engines.get(kind)
            if engine is None:
                if kind == "memory":
                    store = InProcessStoreBackend(self.storage)
                elif kind == "file":
                    store = FileStoreBackend(self.storage)
                else:
                    raise UnknownBackendError(f"no store backend {kind!r}")
                engine = MemoryEngine(
                    self.manager, self.du_manager, store, self.payloads,
                    space_mb=self.config.engine_space_mb,
                    task_timeout=self.config.task_timeout,
                    event_log=self.event_log,
                )
                self._engines[kind] = engine
            return engine

    # -- teardown ------------------------------------------------------------

    def close(self):
        with self._lock:
            if self._closed:
                return
            self._closed = True
            engines = list(self._engines.values())
            wirings = list(self._wirings.values())
        for engine in engines:
            engine.close()
        for wiring in wirings:
            try:
                self.manager.deregister_pilot(wiring.pilot_id)
            except UnknownPilotError:
                pass
            self._teardown_pilot(wiring)
        for backend in self.backends.values():
            backend.close()
        if self._owns_root:
            shutil.rmtree(self.root, ignore_errors=True)
