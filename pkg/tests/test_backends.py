"""Tests for the three emulated compute backends."""

import threading
import time

import pytest

from pilotkit.compute.base import ContainerRole, EmulatedClusterConfig
from pilotkit.compute.batch import BatchQueueBackend
from pilotkit.compute.containers import ContainerGrantBackend
from pilotkit.compute.local import LocalProcessBackend
from pilotkit.errors import (
    CapacityUnsatisfiableError,
    PilotError,
    PreemptOnMasterError,
    UnknownContainerError,
    UnknownPilotError,
)
from pilotkit.states import PilotState
from pilotkit.translation import BatchRequest, ContainerRequest, LocalRequest

RUNNING = {PilotState.RUNNING}
TERMINAL = {PilotState.DONE, PilotState.FAILED, PilotState.CANCELED}


class Recorder:
    """Thread-safe listener that keeps (event, info) in arrival order."""

    def __init__(self):
        self.events = []
        self._lock = threading.Lock()

    def __call__(self, event, handle, **info):
        with self._lock:
            self.events.append((event, dict(info)))

    def names(self):
        with self._lock:
            return [e for e, _ in self.events]


def local_request(cores=2, memory_mb=256):
    return LocalRequest(cores=cores, memory_mb=memory_mb)


def batch_request(nodes=1, queue="default"):
    return BatchRequest(
        nodes=nodes, cores_per_node=8, memory_mb=1024,
        walltime_min=10, queue_name=queue,
    )


def container_request(workers=4, worker_mb=256, master_mb=256):
    return ContainerRequest(
        n_workers=workers, memory_per_container_mb=worker_mb,
        master_memory_mb=master_mb, walltime_min=10,
    )


# ---------------------------------------------------------------------------
# Local backend


class TestLocalBackend:
    def backend(self, cores=8):
        return LocalProcessBackend(
            EmulatedClusterConfig(n_nodes=1, cores_per_node=cores)
        )

    def test_immediate_grant(self):
        be = self.backend()
        try:
            handle = be.allocate(local_request(cores=4))
            assert handle.state is PilotState.RUNNING
            assert handle.granted_cores == 4
            assert handle.nodes == ["local-000"]
            assert handle.machine_label == "local-000"
        finally:
            be.close()

    def test_over_capacity_refused_up_front(self):
        be = self.backend(cores=4)
        try:
            with pytest.raises(CapacityUnsatisfiableError):
                be.allocate(local_request(cores=5))
        finally:
            be.close()

    def test_wrong_request_type(self):
        be = self.backend()
        try:
            with pytest.raises(TypeError):
                be.allocate(batch_request())
        finally:
            be.close()

    def test_fifo_no_backfill(self):
        be = self.backend(cores=8)
        try:
            big = be.allocate(local_request(cores=6))
            mid = be.allocate(local_request(cores=4))
            small = be.allocate(local_request(cores=2))
            assert big.state is PilotState.RUNNING
            # small would fit in the 2 leftover cores, but the queue head
            # blocks it: grant order stays submission order.
            assert mid.state is PilotState.PENDING
            assert small.state is PilotState.PENDING
            be.cancel(big)
            assert mid.state is PilotState.RUNNING
            assert small.state is PilotState.RUNNING
        finally:
            be.close()

    def test_running_event_fires_on_late_grant(self):
        be = self.backend(cores=4)
        try:
            blocker = be.allocate(local_request(cores=4))
            waiting = be.allocate(local_request(cores=2))
            rec = Recorder()
            waiting.subscribe(rec)
            be.cancel(blocker)
            assert rec.names() == ["running"]
        finally:
            be.close()

    def test_cancel_running_frees_cores(self):
        be = self.backend(cores=4)
        try:
            first = be.allocate(local_request(cores=4))
            be.cancel(first)
            assert first.state is PilotState.CANCELED
            second = be.allocate(local_request(cores=4))
            assert second.state is PilotState.RUNNING
            be.cancel(second)
            be.cancel(second)  # idempotent
            assert second.state is PilotState.CANCELED
        finally:
            be.close()

    def test_foreign_handle_rejected(self):
        be1 = self.backend()
        be2 = self.backend()
        try:
            handle = be1.allocate(local_request())
            with pytest.raises(UnknownPilotError):
                be2.cancel(handle)
        finally:
            be1.close()
            be2.close()

    def test_agent_plan_single_agent_all_slots(self):
        be = self.backend()
        try:
            handle = be.allocate(local_request(cores=3))
            plan = be.agent_plan(handle)
            assert len(plan) == 1
            assert plan[0]["slots"] == 3
            assert plan[0]["node"] == "local-000"
        finally:
            be.close()


# ---------------------------------------------------------------------------
# Batch backend


class TestBatchBackend:
    def backend(self, n_nodes=4, queue_wait_ms=(0, 0), pending_timeout_ms=None):
        return BatchQueueBackend(EmulatedClusterConfig(
            n_nodes=n_nodes, cores_per_node=8,
            queue_wait_ms=queue_wait_ms, pending_timeout_ms=pending_timeout_ms,
        ))

    def test_whole_node_grant(self):
        be = self.backend()
        try:
            handle = be.allocate(batch_request(nodes=2))
            assert handle.wait_for_state(RUNNING, timeout=5)
            assert handle.granted_cores == 16
            assert len(handle.nodes) == 2
            assert all(n.startswith("node-") for n in handle.nodes)
        finally:
            be.close()

    def test_too_many_nodes_refused(self):
        be = self.backend(n_nodes=2)
        try:
            with pytest.raises(CapacityUnsatisfiableError):
                be.allocate(batch_request(nodes=3))
        finally:
            be.close()

    def test_wrong_request_type(self):
        be = self.backend()
        try:
            with pytest.raises(TypeError):
                be.allocate(local_request())
        finally:
            be.close()

    def test_fifo_head_blocks_queue(self):
        be = self.backend(n_nodes=4)
        try:
            first = be.allocate(batch_request(nodes=3))
            assert first.wait_for_state(RUNNING, timeout=5)
            second = be.allocate(batch_request(nodes=2))  # 1 node free: waits
            third = be.allocate(batch_request(nodes=1))   # would fit, must wait
            time.sleep(0.05)
            assert second.state is PilotState.PENDING
            assert third.state is PilotState.PENDING
            be.cancel(first)
            assert second.wait_for_state(RUNNING, timeout=5)
            assert third.wait_for_state(RUNNING, timeout=5)
        finally:
            be.close()

    def test_queue_wait_is_paid(self):
        be = self.backend(queue_wait_ms=(60, 60))
        try:
            t0 = time.monotonic()
            handle = be.allocate(batch_request(nodes=1))
            assert handle.wait_for_state(RUNNING, timeout=5)
            assert time.monotonic() - t0 >= 0.05
        finally:
            be.close()

    def test_pending_timeout(self):
        be = self.backend(n_nodes=1, pending_timeout_ms=50)
        try:
            blocker = be.allocate(batch_request(nodes=1))
            assert blocker.wait_for_state(RUNNING, timeout=5)
            starved = be.allocate(batch_request(nodes=1))
            rec = Recorder()
            starved.subscribe(rec)
            assert starved.wait_for_state({PilotState.FAILED}, timeout=5)
            assert starved.failure_reason == "ALLOCATION_TIMEOUT"
            assert ("failed", {"reason": "ALLOCATION_TIMEOUT"}) in rec.events
            assert blocker.state is PilotState.RUNNING  # untouched
        finally:
            be.close()

    def test_cancel_pending_leaves_queue(self):
        be = self.backend(n_nodes=1)
        try:
            blocker = be.allocate(batch_request(nodes=1))
            assert blocker.wait_for_state(RUNNING, timeout=5)
            waiting = be.allocate(batch_request(nodes=1))
            be.cancel(waiting)
            assert waiting.state is PilotState.CANCELED
            be.cancel(blocker)
            time.sleep(0.05)
            assert waiting.state is PilotState.CANCELED  # not resurrected
        finally:
            be.close()

    def test_agent_plan_one_agent_per_node(self):
        be = self.backend()
        try:
            handle = be.allocate(batch_request(nodes=2))
            assert handle.wait_for_state(RUNNING, timeout=5)
            plan = be.agent_plan(handle)
            assert len(plan) == 2
            assert all(p["slots"] == 8 for p in plan)
            assert [p["node"] for p in plan] == handle.nodes
        finally:
            be.close()


# ---------------------------------------------------------------------------
# Container backend


class TestContainerBackend:
    def backend(self, n_nodes=2, cores=4, memory_mb=4096, tick_ms=5,
                pending_timeout_ms=None, preemption=True):
        return ContainerGrantBackend(EmulatedClusterConfig(
            n_nodes=n_nodes, cores_per_node=cores, memory_per_node_mb=memory_mb,
            tick_ms=tick_ms, pending_timeout_ms=pending_timeout_ms,
            preemption_enabled=preemption,
        ))

    def wait_workers(self, handle, n, timeout=5.0):
        end = time.monotonic() + timeout
        while time.monotonic() < end:
            if handle.workers_granted >= n:
                return True
            time.sleep(0.005)
        return False

    def test_master_precedes_every_worker(self):
        be = self.backend()
        try:
            handle = be.allocate(container_request(workers=3))
            rec = Recorder()
            handle.subscribe(rec)
            assert handle.wait_for_state(RUNNING, timeout=5)
            assert self.wait_workers(handle, 3)
            names = rec.names()
            assert names[0] == "master-granted"
            assert names.count("worker-granted") == 3
            master = rec.events[0][1]["container"]
            assert master.role is ContainerRole.APP_MASTER
            assert master.cores == 0
        finally:
            be.close()

    def test_running_at_first_worker_subset(self):
        # The allocation is usable before the full width arrives: RUNNING
        # fires with exactly one worker granted out of four.
        be = self.backend(tick_ms=25)
        try:
            handle = be.allocate(container_request(workers=4))
            seen = []
            handle.subscribe(
                lambda ev, h, **i: seen.append((ev, h.workers_granted))
            )
            assert handle.wait_for_state(RUNNING, timeout=5)
            running = [w for ev, w in seen if ev == "running"]
            assert running == [1]
            assert self.wait_workers(handle, 4)
        finally:
            be.close()

    def test_one_worker_per_tick(self):
        be = self.backend(tick_ms=40)
        try:
            t0 = time.monotonic()
            handle = be.allocate(container_request(workers=3))
            assert self.wait_workers(handle, 3)
            # master + 3 workers = 4 ticks minimum.
            assert time.monotonic() - t0 >= 4 * 0.030
        finally:
            be.close()

    def test_worker_sizing(self):
        be = self.backend()
        try:
            handle = be.allocate(container_request(workers=2, worker_mb=512))
            assert self.wait_workers(handle, 2)
            workers = [
                c for c in handle.containers.values()
                if c.role is ContainerRole.WORKER
            ]
            assert all(c.cores == 1 and c.memory_mb == 512 for c in workers)
            assert handle.granted_cores == 2
        finally:
            be.close()

    def test_over_capacity_refused(self):
        be = self.backend(n_nodes=1, cores=4)
        try:
            with pytest.raises(CapacityUnsatisfiableError):
                be.allocate(container_request(workers=5))
        finally:
            be.close()

    def test_wrong_request_type(self):
        be = self.backend()
        try:
            with pytest.raises(TypeError):
                be.allocate(local_request())
        finally:
            be.close()

    def test_preempt_worker_shrinks_allocation(self):
        be = self.backend()
        try:
            handle = be.allocate(container_request(workers=2))
            assert self.wait_workers(handle, 2)
            rec = Recorder()
            handle.subscribe(rec)
            victim = next(
                c for c in handle.containers.values()
                if c.role is ContainerRole.WORKER
            )
            be.preempt(handle, victim.container_id)
            assert victim.released
            assert handle.granted_cores == 1
            assert handle.state is PilotState.RUNNING  # still usable
            assert rec.names() == ["preempted"]
            be.preempt(handle, victim.container_id)  # no-op, no second event
            assert rec.names() == ["preempted"]
            assert handle.granted_cores == 1
        finally:
            be.close()

    def test_preempt_master_refused(self):
        be = self.backend()
        try:
            handle = be.allocate(container_request(workers=1))
            assert self.wait_workers(handle, 1)
            with pytest.raises(PreemptOnMasterError):
                be.preempt(handle, handle.master_container.container_id)
            assert handle.master_container.released is False
        finally:
            be.close()

    def test_preempt_unknown_container(self):
        be = self.backend()
        try:
            handle = be.allocate(container_request(workers=1))
            assert self.wait_workers(handle, 1)
            with pytest.raises(UnknownContainerError):
                be.preempt(handle, "container-999999")
        finally:
            be.close()

    def test_preemption_disabled(self):
        be = self.backend(preemption=False)
        try:
            handle = be.allocate(container_request(workers=1))
            assert self.wait_workers(handle, 1)
            victim = next(
                c for c in handle.containers.values()
                if c.role is ContainerRole.WORKER
            )
            with pytest.raises(PilotError):
                be.preempt(handle, victim.container_id)
        finally:
            be.close()

    def test_pending_timeout_when_master_cannot_fit(self):
        # Master memory larger than any node: the allocation can never
        # start and must expire.
        be = self.backend(memory_mb=128, pending_timeout_ms=60)
        try:
            handle = be.allocate(container_request(workers=1, master_mb=256))
            assert handle.wait_for_state({PilotState.FAILED}, timeout=5)
            assert handle.failure_reason == "ALLOCATION_TIMEOUT"
        finally:
            be.close()

    def test_cancel_returns_node_resources(self):
        be = self.backend(n_nodes=1, cores=4, memory_mb=4096)
        try:
            handle = be.allocate(container_request(workers=4))
            assert self.wait_workers(handle, 4)
            be.cancel(handle)
            assert handle.state is PilotState.CANCELED
            # A fresh allocation of the full node must succeed again.
            fresh = be.allocate(container_request(workers=4))
            assert self.wait_workers(fresh, 4)
        finally:
            be.close()

    def test_agent_plan_skips_master_and_released(self):
        be = self.backend()
        try:
            handle = be.allocate(container_request(workers=2))
            assert self.wait_workers(handle, 2)
            assert len(be.agent_plan(handle)) == 2
            victim = next(
                c for c in handle.containers.values()
                if c.role is ContainerRole.WORKER
            )
            be.preempt(handle, victim.container_id)
            plan = be.agent_plan(handle)
            assert len(plan) == 1
            assert plan[0]["container_id"] != victim.container_id
        finally:
            be.close()

    def test_grants_spread_by_free_capacity(self):
        be = self.backend(n_nodes=2, cores=2)
        try:
            handle = be.allocate(container_request(workers=4))
            assert self.wait_workers(handle, 4)
            by_node = {}
            for c in handle.containers.values():
                if c.role is ContainerRole.WORKER:
                    by_node[c.node] = by_node.get(c.node, 0) + 1
            # Picker prefers the node with most free cores: 2 workers each.
            assert sorted(by_node.values()) == [2, 2]
        finally:
            be.close()
