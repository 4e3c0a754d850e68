"""Batch backend: whole-node FIFO queue with an emulated queue wait.

Allocations sit in arrival order; the head of the queue blocks the rest
(no backfill), which is what makes grant order reproducible. Each grant
pays a seeded uniform queue wait before its nodes become usable. Walltime
is recorded but not enforced by the emulation.
"""

from __future__ import annotations

import threading
import time

from ..errors import CapacityUnsatisfiableError
from ..states import PilotState
from ..translation import BatchRequest
from .base import AllocationHandle, ComputeBackend, sample_wait_s


class BatchQueueBackend(ComputeBackend):
    kind = "batch-emu"

    def __init__(self, config=None, event_log=None):
        super().__init__(config, event_log)
        self._free_nodes = list(self.node_names)
        self._queue: list[tuple[AllocationHandle, float | None]] = []
        self._wake = threading.Event()
        self._thread = threading.Thread(
            target=self._pump, name=f"{self.kind}-grants", daemon=True
        )
        self._thread.start()

    def allocate(self, request: BatchRequest) -> AllocationHandle:
        if not isinstance(request, BatchRequest):
            raise TypeError(f"{self.kind} backend takes BatchRequest, got {type(request).__name__}")
        if request.nodes > self.config.n_nodes:
            raise CapacityUnsatisfiableError(
                f"need {request.nodes} nodes, have {self.config.n_nodes}"
            )
        with self._lock:
            handle = AllocationHandle(self, request)
            self._handles.append(handle)
            handle._set_state(PilotState.PENDING)
            deadline = None
            if self.config.pending_timeout_ms is not None:
                deadline = time.monotonic() + self.config.pending_timeout_ms / 1000.0
            self._queue.append((handle, deadline))
            self._emit(
                handle, "NEW", "PENDING", "queued",
                nodes=str(request.nodes), queue=request.queue_name,
            )
        self._wake.set()
        return handle

    def _pump(self):
        while not self._closed:
            self._wake.wait(0.002)
            self._wake.clear()
            self._expire()
            grant = None
            with self._lock:
                if self._queue:
                    head, _ = self._queue[0]
                    if head.request.nodes <= len(self._free_nodes):
                        self._queue.pop(0)
                        nodes = [self._free_nodes.pop(0) for _ in range(head.request.nodes)]
                        grant = (head, nodes)
            if grant is None:
                continue
            handle, nodes = grant
            # The scheduler has picked the job; the wait is the emulated
            # time until the nodes actually come up.
            time.sleep(sample_wait_s(self.rng, self.config.queue_wait_ms))
            with self._lock:
                if handle.state is not PilotState.PENDING:
                    self._free_nodes.extend(nodes)  # canceled during the wait
                    continue
                handle.nodes = nodes
                handle.granted_cores = len(nodes) * self.config.cores_per_node
                handle._set_state(PilotState.RUNNING)
                self._emit(
                    handle, "PENDING", "RUNNING", "granted",
                    nodes=",".join(nodes), cores=str(handle.granted_cores),
                )
            handle._fire("running")
            self._wake.set()  # more queue may now fit

    def _expire(self):
        now = time.monotonic()
        expired = []
        with self._lock:
            for item in list(self._queue):
                handle, deadline = item
                if deadline is not None and now > deadline:
                    self._queue.remove(item)
                    handle.failure_reason = "ALLOCATION_TIMEOUT"
                    handle._set_state(PilotState.FAILED)
                    self._emit(handle, "PENDING", "FAILED", "ALLOCATION_TIMEOUT")
                    expired.append(handle)
        for handle in expired:
            handle._fire("failed", reason="ALLOCATION_TIMEOUT")

    def cancel(self, handle):
        self._require_handle(handle)
        with self._lock:
            if handle.state in (PilotState.DONE, PilotState.FAILED, PilotState.CANCELED):
                return
            self._queue = [(h, d) for h, d in self._queue if h is not handle]
            if handle.nodes:
                self._free_nodes.extend(handle.nodes)
            old = handle.state
            handle._set_state(PilotState.CANCELED)
            self._emit(handle, old.value, "CANCELED", "canceled")
        handle._fire("canceled")
        self._wake.set()

    def _stop_workers(self):
        self._wake.set()
        self._thread.join(timeout=2)

    def agent_plan(self, handle):
        return [
            {
                "agent_id": f"{handle.handle_id}-agent-{i:03d}",
                "slots": self.config.cores_per_node,
                "node": node,
            }
            for i, node in enumerate(handle.nodes)
        ]
