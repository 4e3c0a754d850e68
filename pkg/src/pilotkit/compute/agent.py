"""Agents: the processes a pilot runs inside its granted resources.

An agent registers with the manager, then pulls units from its pilot's
queue and drives each through stage-in, execution and stage-out,
reporting every step. Executable units run as subprocesses in a private
sandbox; typed engine tasks call registered payload functions, forwarded
to the pilot's cluster runtime when one has been bootstrapped.
"""

from __future__ import annotations

import os
import subprocess
import threading
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

from ..descriptions import UnitKind
from ..errors import PilotError


class AgentCrash(PilotError):
    """Raised by fault-injecting payloads to take the whole agent down."""

    code = "AGENT_CRASH"


@dataclass
class AgentContext:
    """Everything an agent needs besides its own identity."""

    manager: object
    sandbox_root: Path
    du_manager: object = None
    payloads: dict = field(default_factory=dict)
    poll_interval: float = 0.02
    on_crash: object = None  # callable(agent, reason)


@dataclass
class TaskContext:
    """Handed to payload functions when a typed unit executes."""

    unit_id: str
    description: object
    pilot_id: str
    attempt: int
    sandbox: Path
    manager: object
    du_manager: object


class Agent(threading.Thread):
    def __init__(self, ctx: AgentContext, pilot_id, agent_id, slots,
                 node=None, container_id=None):
        super().__init__(name=f"agent-{agent_id}", daemon=True)
        self.ctx = ctx
        self.pilot_id = pilot_id
        self.agent_id = agent_id
        self.slots = max(1, slots)
        self.node = node
        self.container_id = container_id
        self.crashed = False
        self._halt = threading.Event()
        self._draining = threading.Event()
        self._slots_free = threading.Semaphore(self.slots)
        self._pool = ThreadPoolExecutor(
            max_workers=self.slots, thread_name_prefix=f"{agent_id}-slot"
        )
        self.current_unit: str | None = None

    # -- lifecycle --------------------------------------------------------

    def run(self):
        manager = self.ctx.manager
        manager.notify_agent_up(self.pilot_id)
        if manager.event_log is not None:
            manager.event_log.emit(
                "agent", f"agent:{self.agent_id}", "-", "UP", "registered",
                pilot=self.pilot_id, node=str(self.node),
                container=str(self.container_id), slots=str(self.slots),
            )
        while not self._halt.is_set():
            if not self._slots_free.acquire(timeout=self.ctx.poll_interval):
                continue
            if self._halt.is_set():
                self._slots_free.release()
                break
            try:
                assignment = manager.pull_next(self.pilot_id)
            except Exception:
                self._slots_free.release()
                break  # pilot gone
            if assignment is None:
                self._slots_free.release()
                self._halt.wait(self.ctx.poll_interval)
                continue
            self._pool.submit(self._run_and_release, assignment)
        self._pool.shutdown(wait=True)

    def stop(self, drain=True):
        """Stop pulling; by default lets in-flight units finish."""
        self._halt.set()
        if not drain:
            self._pool.shutdown(wait=False, cancel_futures=True)

    def kill(self):
        """Hard stop for fault tests: in-flight work is abandoned."""
        self.crashed = True
        self._halt.set()
        self._pool.shutdown(wait=False, cancel_futures=True)

    # -- unit execution -----------------------------------------------------

    def _run_and_release(self, assignment):
        try:
            self._run_unit(assignment)
        except AgentCrash as exc:
            self.crashed = True
            self._halt.set()
            if self.ctx.on_crash is not None:
                self.ctx.on_crash(self, str(exc))
            else:
                self.ctx.manager.fail_pilot(self.pilot_id, f"agent crashed: {exc}")
        finally:
            self.current_unit = None
            self._slots_free.release()

    def _sandbox_for(self, assignment) -> Path:
        path = (
            Path(self.ctx.sandbox_root)
            / self.pilot_id
            / f"{assignment.unit_id}-a{assignment.attempt}"
        )
        path.mkdir(parents=True, exist_ok=True)
        return path

    def _run_unit(self, assignment):
        manager = self.ctx.manager
        unit_id = assignment.unit_id
        attempt = assignment.attempt
        desc = assignment.description
        self.current_unit = unit_id
        sandbox = self._sandbox_for(assignment)
        try:
            self._stage_in(desc, sandbox)
            manager.report_stage_done(unit_id, attempt=attempt)
        except AgentCrash:
            raise
        except Exception as exc:
            manager.complete_unit(unit_id, ok=False,
                                  reason=f"stage-in failed: {exc}", attempt=attempt)
            return
        try:
            exit_code = self._execute(assignment, sandbox)
        except AgentCrash:
            raise
        except Exception as exc:
            manager.complete_unit(unit_id, ok=False,
                                  reason=f"{type(exc).__name__}: {exc}", attempt=attempt)
            return
        if exit_code != 0:
            manager.report_exec_done(unit_id, exit_code, attempt=attempt)
            manager.complete_unit(unit_id, ok=False,
                                  reason=f"exit code {exit_code}", attempt=attempt)
            return
        manager.report_exec_done(unit_id, 0, attempt=attempt)
        try:
            self._stage_out(desc, sandbox)
        except Exception as exc:
            manager.complete_unit(unit_id, ok=False,
                                  reason=f"stage-out failed: {exc}", attempt=attempt)
            return
        manager.complete_unit(unit_id, ok=True, attempt=attempt)

    def _stage_in(self, desc, sandbox):
        """Make every input unit resident next to this pilot.

        A unit may not start while an input lacks a replica on a space
        whose machine label matches the pilot's; missing ones are staged
        into the pilot's local space first.
        """
        if not desc.input_du_ids:
            return
        manager = self.ctx.manager
        du_manager = self.ctx.du_manager
        if du_manager is None:
            raise PilotError("unit has input data but the agent has no storage")
        pilot = manager.get_pilot(self.pilot_id)
        machine = pilot.labels.get("machine")
        for du_id in desc.input_du_ids:
            du = du_manager.get(du_id)
            if machine is not None and machine not in du.resident_labels()["machine"]:
                if pilot.local_space is None:
                    raise PilotError(f"pilot {self.pilot_id} has no local space to stage into")
                du_manager.stage(du, pilot.local_space)
            if desc.kind is UnitKind.EXECUTABLE:
                for name in sorted(du.items):
                    (sandbox / name).write_bytes(du_manager.get_bytes(du, name))

    def _execute(self, assignment, sandbox) -> int:
        desc = assignment.description
        if desc.kind is UnitKind.EXECUTABLE:
            env = dict(os.environ)
            env.update(desc.env)
            with open(sandbox / "stdout.txt", "wb") as out, \
                    open(sandbox / "stderr.txt", "wb") as err:
                proc = subprocess.run(
                    [desc.executable, *desc.arguments],
                    cwd=sandbox, env=env, stdout=out, stderr=err,
                )
            return proc.returncode
        payload = self.ctx.payloads.get(desc.payload_ref)
        if payload is None:
            raise PilotError(f"no payload registered as {desc.payload_ref!r}")
        tctx = TaskContext(
            unit_id=assignment.unit_id, description=desc,
            pilot_id=self.pilot_id, attempt=assignment.attempt,
            sandbox=sandbox, manager=self.ctx.manager, du_manager=self.ctx.du_manager,
        )
        pilot = self.ctx.manager.get_pilot(self.pilot_id)
        if pilot.cluster is not None:
            pilot.cluster.run(payload, tctx)
        else:
            payload(tctx)
        return 0

    def _stage_out(self, desc, sandbox):
        """Collect declared output files from the sandbox into data units."""
        if not desc.output_du_ids:
            return
        du_manager = self.ctx.du_manager
        manager = self.ctx.manager
        pilot = manager.get_pilot(self.pilot_id)
        for du_id in desc.output_du_ids:
            du = du_manager.get(du_id)
            if du.items:
                continue  # another attempt already delivered it
            named = {}
            for ref in du.description.item_refs:
                named[ref.logical_name] = (sandbox / ref.source_url).read_bytes()
            if not named:
                # No declared refs: take what the unit wrote.
                for path in sorted(sandbox.iterdir()):
                    if path.is_file() and path.name not in ("stdout.txt", "stderr.txt"):
                        named[path.name] = path.read_bytes()
            space = pilot.local_space
            if space is None:
                raise PilotError(f"pilot {self.pilot_id} has no local space for outputs")
            du_manager.write_items(du, named, space)
