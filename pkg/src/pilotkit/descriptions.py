"""User-facing descriptions and their validation.

A description is a plain dataclass the caller fills in (directly or from a
parsed workload document). ``validate`` returns a normalized copy with
defaults applied, or raises ``ValidationError`` listing every violated
field at once. Unknown backend kinds are rejected here, at validation
time, never later at allocation time.
"""

from __future__ import annotations

import dataclasses
import re
from dataclasses import dataclass, field
from enum import Enum

from .errors import ValidationError

COMPUTE_BACKEND_KINDS = frozenset({"local", "batch-emu", "yarn-emu"})
STORAGE_BACKEND_KINDS = frozenset({"file", "mem"})

_SCHEME_RE = re.compile(r"^[a-z][a-z0-9+.-]*$")


def parse_backend_url(url):
    """Split ``kind://target`` into its two parts.

    The target may be empty (``mem://``). Raises ``ValidationError`` on
    anything that does not look like a backend URL.
    """
    if not isinstance(url, str) or "://" not in url:
        raise ValidationError([f"not a backend url: {url!r}"])
    kind, _, target = url.partition("://")
    if not _SCHEME_RE.match(kind):
        raise ValidationError([f"bad backend kind in url: {url!r}"])
    return kind, target


class UnitKind(str, Enum):
    EXECUTABLE = "EXECUTABLE"
    MAP_TASK = "MAP_TASK"
    REDUCE_TASK = "REDUCE_TASK"


@dataclass
class PilotComputeDescription:
    """What to ask a compute backend for: a placeholder allocation."""

    resource_url: str = ""
    cores: int = 1
    memory_mb: int = 256
    walltime_min: int = 10
    queue_name: str = "default"
    affinity_datacenter_label: str | None = None
    affinity_machine_label: str | None = None


@dataclass
class ComputeUnitDescription:
    """One task: an executable invocation or a typed engine task."""

    kind: UnitKind = UnitKind.EXECUTABLE
    executable: str = ""
    arguments: list = field(default_factory=list)
    env: dict = field(default_factory=dict)
    cores: int = 1
    payload_ref: str = ""
    input_du_ids: list = field(default_factory=list)
    output_du_ids: list = field(default_factory=list)
    affinity_datacenter_label: str | None = None
    affinity_machine_label: str | None = None


@dataclass
class ItemRef:
    """One file to pull into a data unit.

    ``size_bytes`` may be left as None to be determined at import time.
    """

    source_url: str = ""
    logical_name: str = ""
    size_bytes: int | None = None


@dataclass
class DataUnitDescription:
    """A named collection of files managed as one unit."""

    item_refs: list = field(default_factory=list)
    affinity_datacenter_label: str | None = None
    affinity_machine_label: str | None = None


@dataclass
class PilotDataDescription:
    """What to ask a storage backend for: reserved space on a tier."""

    storage_url: str = ""
    space_mb: int = 64
    affinity_datacenter_label: str | None = None
    affinity_machine_label: str | None = None


_DESCRIPTION_TYPES = (
    PilotComputeDescription,
    ComputeUnitDescription,
    DataUnitDescription,
    PilotDataDescription,
)


def from_mapping(cls, mapping):
    """Build a description from a parsed document, rejecting unknown keys."""
    names = {f.name for f in dataclasses.fields(cls)}
    unknown = sorted(set(mapping) - names)
    if unknown:
        raise ValidationError([f"unknown field: {k}" for k in unknown])
    kwargs = dict(mapping)
    if cls is ComputeUnitDescription and "kind" in kwargs:
        try:
            kwargs["kind"] = UnitKind(str(kwargs["kind"]).upper())
        except ValueError:
            pass  # left as-is; validate reports it
    if cls is DataUnitDescription and "item_refs" in kwargs:
        refs = []
        for ref in kwargs["item_refs"] or []:
            refs.append(from_mapping(ItemRef, ref) if isinstance(ref, dict) else ref)
        kwargs["item_refs"] = refs
    return cls(**kwargs)


def _check_label(errors, name, value):
    if value is not None and (not isinstance(value, str) or not value):
        errors.append(f"{name} must be a non-empty string or omitted")


def _check_url(errors, url, kinds, what):
    try:
        kind, _ = parse_backend_url(url)
    except ValidationError as exc:
        errors.extend(exc.errors)
        return
    if kind not in kinds:
        errors.append(f"unknown {what} backend kind: {kind!r}")


def _check_positive(errors, name, value):
    if not isinstance(value, int) or isinstance(value, bool) or value < 1:
        errors.append(f"{name} must be an integer >= 1")


def validate(description):
    """Validate any of the four description types.

    Returns a normalized copy (defaults applied, lists copied); the input
    is not mutated. Raises ``ValidationError`` with one entry per violated
    field. Validation is idempotent: validating the result is a no-op.
    """
    if not isinstance(description, _DESCRIPTION_TYPES):
        raise ValidationError([f"not a description: {type(description).__name__}"])
    d = dataclasses.replace(description)
    errors = []

    if isinstance(d, PilotComputeDescription):
        _check_url(errors, d.resource_url, COMPUTE_BACKEND_KINDS, "compute")
        _check_positive(errors, "cores", d.cores)
        _check_positive(errors, "memory_mb", d.memory_mb)
        _check_positive(errors, "walltime_min", d.walltime_min)
        if not d.queue_name:
            d.queue_name = "default"
        elif not isinstance(d.queue_name, str):
            errors.append("queue_name must be a string")
        _check_label(errors, "affinity_datacenter_label", d.affinity_datacenter_label)
        _check_label(errors, "affinity_machine_label", d.affinity_machine_label)

    elif isinstance(d, ComputeUnitDescription):
        if isinstance(d.kind, str) and not isinstance(d.kind, UnitKind):
            try:
                d.kind = UnitKind(d.kind.upper())
            except ValueError:
                pass
        if not isinstance(d.kind, UnitKind):
            errors.append(f"kind must be one of {sorted(k.value for k in UnitKind)}")
        elif d.kind is UnitKind.EXECUTABLE:
            if not d.executable or not isinstance(d.executable, str):
                errors.append("executable is required for EXECUTABLE units")
            if d.payload_ref:
                errors.append("payload_ref is only valid for MAP_TASK/REDUCE_TASK units")
        else:
            if not d.payload_ref or not isinstance(d.payload_ref, str):
                errors.append(f"payload_ref is required for {d.kind.value} units")
            if d.executable:
                errors.append(f"executable is not valid for {d.kind.value} units")
        _check_positive(errors, "cores", d.cores)
        d.arguments = list(d.arguments or [])
        if not all(isinstance(a, str) for a in d.arguments):
            errors.append("arguments must all be strings")
        d.env = dict(d.env or {})
        if not all(isinstance(k, str) and isinstance(v, str) for k, v in d.env.items()):
            errors.append("env must map strings to strings")
        d.input_du_ids = list(d.input_du_ids or [])
        d.output_du_ids = list(d.output_du_ids or [])
        for attr in ("input_du_ids", "output_du_ids"):
            if not all(isinstance(i, str) and i for i in getattr(d, attr)):
                errors.append(f"{attr} must be non-empty strings")
        _check_label(errors, "affinity_datacenter_label", d.affinity_datacenter_label)
        _check_label(errors, "affinity_machine_label", d.affinity_machine_label)

    elif isinstance(d, DataUnitDescription):
        d.item_refs = list(d.item_refs or [])
        names = set()
        for i, ref in enumerate(d.item_refs):
            if not isinstance(ref, ItemRef):
                errors.append(f"item_refs[{i}] must be an ItemRef")
                continue
            if not ref.source_url or not isinstance(ref.source_url, str):
                errors.append(f"item_refs[{i}].source_url is required")
            if not ref.logical_name or not isinstance(ref.logical_name, str):
                errors.append(f"item_refs[{i}].logical_name is required")
            elif ref.logical_name in names:
                errors.append(f"duplicate logical_name: {ref.logical_name!r}")
            else:
                names.add(ref.logical_name)
            if ref.size_bytes is not None and (
                not isinstance(ref.size_bytes, int) or ref.size_bytes < 0
            ):
                errors.append(f"item_refs[{i}].size_bytes must be >= 0 or omitted")
        _check_label(errors, "affinity_datacenter_label", d.affinity_datacenter_label)
        _check_label(errors, "affinity_machine_label", d.affinity_machine_label)

    elif isinstance(d, PilotDataDescription):
        _check_url(errors, d.storage_url, STORAGE_BACKEND_KINDS, "storage")
        _check_positive(errors, "space_mb", d.space_mb)
        _check_label(errors, "affinity_datacenter_label", d.affinity_datacenter_label)
        _check_label(errors, "affinity_machine_label", d.affinity_machine_label)

    if errors:
        raise ValidationError(errors)
    return d
