"""Cluster runtime bootstrapped inside a pilot's resources.

Bootstrapping writes the runtime's configuration from the pilot's node
list, then starts a coordinator and one worker per node, all in-process.
Once a pilot carries a cluster, its typed engine tasks are forwarded to
the coordinator's queue and execute on the cluster's workers, not on the
agent's own pool.
"""

from __future__ import annotations

import queue
import threading
from dataclasses import dataclass
from pathlib import Path

from ..errors import BootstrapError, UnknownPilotError


@dataclass(frozen=True)
class ClusterEndpoint:
    pilot_id: str
    runtime_kind: str
    coordinator_url: str
    config_dir: Path
    n_workers: int


class ClusterRuntime:
    """Coordinator queue plus worker threads, living inside one pilot."""

    def __init__(self, pilot_id, runtime_kind, config_dir, nodes):
        self.endpoint = ClusterEndpoint(
            pilot_id=pilot_id,
            runtime_kind=runtime_kind,
            coordinator_url=f"emu://{pilot_id}/coordinator",
            config_dir=Path(config_dir),
            n_workers=len(nodes),
        )
        self._tasks: queue.Queue = queue.Queue()
        self._stop = threading.Event()
        self._workers = [
            threading.Thread(
                target=self._work, name=f"{pilot_id}-cluster-{node}", daemon=True
            )
            for node in nodes
        ]
        self.alive = False

    def start(self):
        for w in self._workers:
            w.start()
        self.alive = True

    def _work(self):
        while not self._stop.is_set():
            try:
                payload, tctx, done, box = self._tasks.get(timeout=0.02)
            except queue.Empty:
                continue
            try:
                box.append(payload(tctx))
            except BaseException as exc:  # handed back to the agent thread
                box.append(exc)
            done.set()

    def run(self, payload, tctx):
        """Execute one forwarded task and wait for its outcome."""
        if not self.alive:
            raise BootstrapError("workers", "cluster runtime is not running")
        done = threading.Event()
        box: list = []
        self._tasks.put((payload, tctx, done, box))
        done.wait()
        result = box[0]
        if isinstance(result, BaseException):
            raise result
        return result

    def shutdown(self):
        self._stop.set()
        self.alive = False
        for w in self._workers:
            if w.ident is not None:  # never-started workers cannot be joined
                w.join(timeout=1)


def _write_config(config_dir: Path, runtime_kind, pilot, nodes):
    config_dir.mkdir(parents=True, exist_ok=True)
    (config_dir / "masters").write_text(nodes[0] + "\n", encoding="ascii")
    (config_dir / "workers").write_text("".join(n + "\n" for n in nodes), encoding="ascii")
    conf = [
        f"runtime={runtime_kind}",
        f"pilot={pilot.pilot_id}",
        f"cores={pilot.capacity_cores}",
        f"memory_mb={pilot.description.memory_mb}",
        f"nodes={','.join(nodes)}",
    ]
    (config_dir / f"{runtime_kind}.conf").write_text(
        "".join(line + "\n" for line in conf), encoding="ascii"
    )


def bootstrap_cluster(manager, pilot_id, runtime_kind, root_dir,
                      fail_phase=None) -> ClusterEndpoint:
    """Start (or return) the cluster runtime inside a running pilot.

    Idempotent: a pilot that already carries a live cluster returns its
    existing endpoint unchanged. On failure, nothing half-started is left
    behind and ``BootstrapError`` names the phase that broke.
    ``fail_phase`` is a fault-injection hook for tests.
    """
    pilot = manager.get_pilot(pilot_id)
    if pilot.cluster is not None and pilot.cluster.alive:
        return pilot.cluster.endpoint
    handle = pilot.handle
    nodes = list(getattr(handle, "nodes", []) or [])
    if not nodes:
        raise UnknownPilotError(f"pilot {pilot_id} has no granted nodes yet")
    config_dir = Path(root_dir) / "cluster" / pilot_id

    phase = "config"
    try:
        if fail_phase == phase:
            raise OSError("injected config failure")
        _write_config(config_dir, runtime_kind, pilot, nodes)
    except OSError as exc:
        raise BootstrapError(phase, str(exc)) from exc

    phase = "coordinator"
    runtime = ClusterRuntime(pilot_id, runtime_kind, config_dir, nodes)
    if fail_phase == phase:
        raise BootstrapError(phase, "injected coordinator failure")

    phase = "workers"
    try:
        if fail_phase == phase:
            raise RuntimeError("injected worker failure")
        runtime.start()
    except RuntimeError as exc:
        runtime.shutdown()
        raise BootstrapError(phase, str(exc)) from exc

    pilot.cluster = runtime
    if manager.event_log is not None:
        manager.event_log.emit(
            "cluster", f"pilot:{pilot_id}", "-", "BOOTSTRAPPED",
            f"{runtime_kind} runtime up",
            coordinator=runtime.endpoint.coordinator_url,
            workers=str(runtime.endpoint.n_workers),
        )
    return runtime.endpoint
