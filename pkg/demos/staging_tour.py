"""Tour of data spaces, data units, staging, and volatility.

Shows the data half of the abstraction: reserve tiered spaces, manage
files as data units with checksummed replicas, stage them next to the
compute, run an executable against them, and see what a memory-tier
pilot's death takes with it.

Run with: python3 demos/staging_tour.py
"""

import tempfile
from pathlib import Path

from pilotkit.descriptions import DataUnitDescription, ItemRef
from pilotkit.runtime import PilotRuntime, RuntimeConfig


def banner(text):
    print(f"\n== {text} ==")


def main():
    root = Path(tempfile.mkdtemp(prefix="staging-tour-"))
    with PilotRuntime(RuntimeConfig(root=root, poll_interval=0.005)) as rt:
        pilot = rt.start_local_pilot(cores=2, machine="node-a")
        rt.wait_pilot(pilot)
        dum = rt.du_manager
        storage = rt.storage

        banner("1. a data unit with checksummed items")
        space = storage.create_space("file://", 64, labels={"machine": "node-b"})
        story = dum.create_from_bytes(
            {"story.txt": b"the pilot holds the resources\n"}, space,
        )
        for name, item in story.items.items():
            print(f"{name}: {item.size_bytes} bytes, checksum {item.checksum}")
        print(f"replicas: {[s.space_id for s in story.replica_spaces()]} "
              f"on machine node-b")

        banner("2. executables pull inputs next to their pilot")
        upper = dum.create_from_bytes({}, space)
        rt.run_executable(
            "/bin/sh", ["-c", "tr a-z A-Z < story.txt > upper.txt"],
            input_du_ids=[story.du_id], output_du_ids=[upper.du_id],
        )
        print(f"output: {dum.get_bytes(upper, 'upper.txt').decode().strip()!r}")
        print(f"story replicas now: {[s.space_id for s in story.replica_spaces()]}")
        print("the unit ran on node-a, so staging added a replica there first")

        banner("3. export and re-import round-trip to plain files")
        out_dir = root / "exported"
        paths = dum.export_data_unit(story, out_dir)
        print(f"exported: {[p.name for p in paths]}")
        refs = [ItemRef(source_url=f"file://{p}", logical_name=p.name)
                for p in paths]
        again = dum.import_data_unit(DataUnitDescription(item_refs=refs), space)
        match = again.items["story.txt"].checksum == story.items["story.txt"].checksum
        print(f"re-imported checksum matches: {match}")

        banner("4. memory-tier replicas die with their pilot")
        volatile = rt.start_local_pilot(cores=1, machine="node-c")
        rt.wait_pilot(volatile)
        mem_space = storage.create_space("mem://", 32, owner_pilot_id=volatile)
        cached = dum.create_from_bytes({"hot.bin": b"\x00" * 512}, mem_space)
        replicated = dum.create_from_bytes({"warm.bin": b"\x01" * 512}, mem_space)
        dum.stage(replicated, space)
        rt.cancel_pilot(volatile)
        print(f"sole replica on the dead pilot: {cached.state.value}")
        print(f"replicated elsewhere: {replicated.state.value}, "
              f"replicas {[s.space_id for s in replicated.replica_spaces()]}")

        banner("5. every move above is in the event log")
        for rec in rt.event_log.records(kind="replica-add"):
            print(f"seq {rec.seq:4d}  {rec.entity} -> {rec.new} "
                  f"(machine {rec.detail.get('machine')})")
    print(f"\nworkspace was {root}")


if __name__ == "__main__":
    main()
