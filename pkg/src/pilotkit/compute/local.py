"""Local backend: cores on this machine, granted without ceremony.

Grants are immediate while free cores remain; beyond that, allocations
wait FIFO until a running one releases. There is no queue-wait emulation
and no timeout here: this backend is the fast path for development and
for single-machine runs.
"""

from __future__ import annotations

from collections import deque

from ..errors import CapacityUnsatisfiableError
from ..states import PilotState
from ..translation import LocalRequest
from .base import AllocationHandle, ComputeBackend, EmulatedClusterConfig


class LocalProcessBackend(ComputeBackend):
    kind = "local"

    def __init__(self, config=None, event_log=None):
        config = config or EmulatedClusterConfig(
            n_nodes=1, cores_per_node=8, memory_per_node_mb=16384
        )
        super().__init__(config, event_log, node_prefix="local")
        self._in_use_cores = 0
        self._pending: deque[AllocationHandle] = deque()

    def allocate(self, request: LocalRequest) -> AllocationHandle:
        if not isinstance(request, LocalRequest):
            raise TypeError(f"{self.kind} backend takes LocalRequest, got {type(request).__name__}")
        cap = self.capacity_info()
        if request.cores > cap.total_cores:
            raise CapacityUnsatisfiableError(
                f"need {request.cores} cores, have {cap.total_cores}"
            )
        with self._lock:
            handle = AllocationHandle(self, request)
            self._handles.append(handle)
            handle._set_state(PilotState.PENDING)
            self._emit(handle, "NEW", "PENDING", "queued", cores=str(request.cores))
            self._pending.append(handle)
            self._grant_ready_locked()
        return handle

    def _grant_ready_locked(self):
        granted = []
        while self._pending:
            head = self._pending[0]
            free = self.capacity_info().total_cores - self._in_use_cores
            if head.request.cores > free:
                break
            self._pending.popleft()
            self._in_use_cores += head.request.cores
            head.nodes = [self.node_names[0]]
            head.granted_cores = head.request.cores
            head._set_state(PilotState.RUNNING)
            self._emit(
                head, "PENDING", "RUNNING", "granted",
                cores=str(head.granted_cores), node=head.nodes[0],
            )
            granted.append(head)
        for handle in granted:
            handle._fire("running")

    def cancel(self, handle):
        self._require_handle(handle)
        with self._lock:
            if handle.state in (PilotState.DONE, PilotState.FAILED, PilotState.CANCELED):
                return
            if handle in self._pending:
                self._pending.remove(handle)
            else:
                self._in_use_cores -= handle.granted_cores
            old = handle.state
            handle._set_state(PilotState.CANCELED)
            self._emit(handle, old.value, "CANCELED", "canceled")
            self._grant_ready_locked()
        handle._fire("canceled")

    def agent_plan(self, handle):
        return [
            {
                "agent_id": f"{handle.handle_id}-agent-000",
                "slots": handle.granted_cores,
                "node": handle.nodes[0] if handle.nodes else self.node_names[0],
            }
        ]
