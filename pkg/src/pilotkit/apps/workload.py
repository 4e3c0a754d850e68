"""Declarative workload documents: parse, validate, execute.

A workload file is YAML with a pinned ``spec_version``. Sections declare
compute pilots, data spaces, data-unit imports, executable units and
engine jobs by user-chosen ids; execution maps those ids to runtime ids
and resolves references. Unknown fields anywhere are rejected so typos
fail loudly instead of silently defaulting.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import yaml

from ..descriptions import (
    ComputeUnitDescription,
    DataUnitDescription,
    ItemRef,
    PilotComputeDescription,
    PilotDataDescription,
)
from ..errors import ValidationError
from ..manager import ScheduleMode
from .bench import write_csv
from .kmeans import KMeansConfig, run_kmeans
from .wordcount import run_wordcount

SPEC_VERSION = 1

_MODES = {"soft": ScheduleMode.SOFT_AFFINITY, "hard": ScheduleMode.HARD_AFFINITY}


@dataclass
class PilotDecl:
    id: str
    resource_url: str
    cores: int = 1
    memory_mb: int = 256
    walltime_min: int = 10
    queue_name: str = "default"
    datacenter: str | None = None
    machine: str | None = None


@dataclass
class DataSpaceDecl:
    id: str
    storage_url: str
    space_mb: int = 64
    datacenter: str | None = None
    machine: str | None = None


@dataclass
class ItemDecl:
    source: str
    name: str


@dataclass
class DataUnitDecl:
    id: str
    items: list = field(default_factory=list)
    datacenter: str | None = None
    machine: str | None = None


@dataclass
class UnitDecl:
    id: str
    executable: str
    arguments: list = field(default_factory=list)
    env: dict = field(default_factory=dict)
    cores: int = 1
    inputs: list = field(default_factory=list)
    outputs: list = field(default_factory=list)
    datacenter: str | None = None
    machine: str | None = None


@dataclass
class JobDecl:
    id: str
    kind: str  # wordcount | kmeans
    backend: str = "memory"
    partitions: int = 4
    reducers: int = 2
    # wordcount
    input: str | None = None
    combine: bool = False
    # kmeans
    points: int = 1000
    clusters: int = 10
    dims: int = 2
    max_iterations: int = 10
    epsilon: float = 0.0
    seed: int = 0


@dataclass
class WorkloadSpec:
    spec_version: int = SPEC_VERSION
    schedule_mode: str = "soft"
    seed: int = 0
    output_csv: str | None = None
    compute_pilots: list = field(default_factory=list)
    data_spaces: list = field(default_factory=list)
    data_units: list = field(default_factory=list)
    units: list = field(default_factory=list)
    jobs: list = field(default_factory=list)


def _build(cls, mapping, errors, where):
    """Dataclass from a mapping, rejecting unknown fields."""
    if not isinstance(mapping, dict):
        errors.append(f"{where}: expected a mapping, got {type(mapping).__name__}")
        return None
    known = {f.name for f in cls.__dataclass_fields__.values()}
    unknown = set(mapping) - known
    if unknown:
        errors.append(f"{where}: unknown fields {sorted(unknown)}")
        return None
    try:
        return cls(**mapping)
    except TypeError as exc:
        errors.append(f"{where}: {exc}")
        return None


_SECTIONS = (
    ("compute_pilots", PilotDecl),
    ("data_spaces", DataSpaceDecl),
    ("data_units", DataUnitDecl),
    ("units", UnitDecl),
    ("jobs", JobDecl),
)


def parse_workload(source) -> WorkloadSpec:
    """Parse and validate a workload document (path, text, or mapping)."""
    if isinstance(source, dict):
        doc = source
    else:
        if isinstance(source, Path) or "\n" not in str(source):
            path = Path(source)
            if not path.exists():
                raise ValidationError([f"no such workload file: {path}"])
            text = path.read_text()
        else:
            text = str(source)
        try:
            doc = yaml.safe_load(text)
        except yaml.YAMLError as exc:
            raise ValidationError([f"not valid YAML: {exc}"]) from exc
    if not isinstance(doc, dict):
        raise ValidationError(["workload document must be a mapping"])

    errors: list[str] = []
    version = doc.get("spec_version")
    if version != SPEC_VERSION:
        errors.append(f"spec_version must be {SPEC_VERSION}, got {version!r}")

    top_known = {f.name for f in WorkloadSpec.__dataclass_fields__.values()}
    unknown = set(doc) - top_known
    if unknown:
        errors.append(f"unknown top-level fields {sorted(unknown)}")

    spec = WorkloadSpec(
        spec_version=SPEC_VERSION,
        schedule_mode=doc.get("schedule_mode", "soft"),
        seed=doc.get("seed", 0),
        output_csv=doc.get("output_csv"),
    )
    if spec.schedule_mode not in _MODES:
        errors.append(f"schedule_mode must be one of {sorted(_MODES)}")

    ids_seen: dict[str, set] = {}
    for section, cls in _SECTIONS:
        entries = doc.get(section, [])
        if not isinstance(entries, list):
            errors.append(f"{section} must be a list")
            continue
        built = []
        seen = ids_seen.setdefault(section, set())
        for i, entry in enumerate(entries):
            where = f"{section}[{i}]"
            if section == "data_units" and isinstance(entry, dict):
                entry = dict(entry)
                raw_items = entry.get("items", [])
                items = []
                if not isinstance(raw_items, list):
                    errors.append(f"{where}.items must be a list")
                    raw_items = []
                for j, item in enumerate(raw_items):
                    decl = _build(ItemDecl, item, errors, f"{where}.items[{j}]")
                    if decl is not None:
                        items.append(decl)
                entry["items"] = items
            obj = _build(cls, entry, errors, where)
            if obj is None:
                continue
            if obj.id in seen:
                errors.append(f"{where}: duplicate id {obj.id!r}")
            seen.add(obj.id)
            built.append(obj)
        setattr(spec, section, built)

    if spec.data_units and not spec.data_spaces:
        errors.append("data_units need at least one entry in data_spaces")
    du_ids = {d.id for d in spec.data_units}
    for i, unit in enumerate(spec.units):
        for ref in list(unit.inputs) + list(unit.outputs):
            if ref not in du_ids:
                errors.append(f"units[{i}] ({unit.id}): unknown data unit {ref!r}")
    for i, job in enumerate(spec.jobs):
        if job.kind not in ("wordcount", "kmeans"):
            errors.append(f"jobs[{i}] ({job.id}): kind must be wordcount or kmeans")
        if job.kind == "wordcount" and job.input not in du_ids:
            errors.append(f"jobs[{i}] ({job.id}): unknown input data unit {job.input!r}")

    if errors:
        raise ValidationError(errors)
    return spec


@dataclass
class WorkloadResult:
    pilot_ids: dict = field(default_factory=dict)
    du_ids: dict = field(default_factory=dict)
    unit_ids: dict = field(default_factory=dict)
    unit_states: dict = field(default_factory=dict)
    job_outputs: dict = field(default_factory=dict)
    rows: list = field(default_factory=list)


def run_workload(runtime, spec: WorkloadSpec, pilot_timeout=60.0,
                 unit_timeout=300.0) -> WorkloadResult:
    """Execute a validated workload against a runtime.

    The runtime's schedule mode must be set at construction; the spec's
    ``schedule_mode`` is validated against it.
    """
    mode = _MODES.get(spec.schedule_mode)
    if mode is None:
        raise ValidationError([f"schedule_mode must be one of {sorted(_MODES)}"])
    if runtime.manager.mode is not mode:
        raise ValidationError([
            f"workload wants {spec.schedule_mode} affinity but the runtime "
            f"uses {runtime.manager.mode.value}"
        ])
    result = WorkloadResult()

    for p in spec.compute_pilots:
        desc = PilotComputeDescription(
            resource_url=p.resource_url, cores=p.cores, memory_mb=p.memory_mb,
            walltime_min=p.walltime_min, queue_name=p.queue_name,
            affinity_datacenter_label=p.datacenter, affinity_machine_label=p.machine,
        )
        result.pilot_ids[p.id] = runtime.start_pilot(desc)
    for user_id, pilot_id in result.pilot_ids.items():
        if not runtime.wait_pilot(pilot_id, timeout=pilot_timeout):
            raise ValidationError([f"pilot {user_id} did not come up in time"])

    space_by_id = {}
    for s in spec.data_spaces:
        desc = PilotDataDescription(
            storage_url=s.storage_url, space_mb=s.space_mb,
            affinity_datacenter_label=s.datacenter, affinity_machine_label=s.machine,
        )
        dp_id = runtime.add_data_space(desc)
        entry = next(
            d for d in runtime.manager.data_pilots() if d.data_pilot_id == dp_id
        )
        space_by_id[s.id] = entry.space

    for d in spec.data_units:
        desc = DataUnitDescription(
            item_refs=[ItemRef(source_url=i.source, logical_name=i.name)
                       for i in d.items],
            affinity_datacenter_label=d.datacenter, affinity_machine_label=d.machine,
        )
        result.du_ids[d.id] = runtime.import_data(desc)

    unit_ids = []
    for u in spec.units:
        desc = ComputeUnitDescription(
            kind="EXECUTABLE", executable=u.executable,
            arguments=list(u.arguments), env=dict(u.env), cores=u.cores,
            input_du_ids=[result.du_ids[i] for i in u.inputs],
            output_du_ids=[result.du_ids[o] for o in u.outputs],
            affinity_datacenter_label=u.datacenter, affinity_machine_label=u.machine,
        )
        uid = runtime.submit_unit(desc)
        result.unit_ids[u.id] = uid
        unit_ids.append(uid)
    if unit_ids:
        runtime.wait_units(unit_ids, timeout=unit_timeout)
    for user_id, uid in result.unit_ids.items():
        result.unit_states[user_id] = runtime.manager.get_unit(uid).state

    for job in spec.jobs:
        if job.kind == "wordcount":
            engine = runtime.engine(job.backend)
            du = runtime.du_manager.get(result.du_ids[job.input])
            out, rows = run_wordcount(
                engine, du, job.partitions, job.reducers,
                combine=job.combine, scenario=f"wordcount-{job.id}",
            )
            result.job_outputs[job.id] = sorted(engine.collect(out))
            engine.release(out)
            result.rows += rows
        else:
            config = KMeansConfig(
                n_points=job.points, n_clusters=job.clusters, n_dims=job.dims,
                max_iterations=job.max_iterations, epsilon=job.epsilon,
                seed=job.seed, backend=job.backend,
                n_partitions=job.partitions, n_reducers=job.reducers,
            )
            kresult = run_kmeans(runtime, config)
            result.job_outputs[job.id] = kresult
            result.rows += kresult.rows

    if spec.output_csv:
        write_csv(spec.output_csv, result.rows)
    return result
