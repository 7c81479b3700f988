"""Workload graphs and the JSON workload file format."""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Dict, List, Mapping, Tuple

import jsonschema

from .core import ComputeUnitDescription, KernelSpec
from .data import DataUnitDescription
from .errors import CycleDetected, InvalidDescription

_KERNEL_SCHEMA = {
    "type": "object",
    "properties": {
        "variant": {"enum": ["EXTERNAL", "BUILTIN"]},
        "name": {"type": "string"},
        "argv": {"type": "array", "items": {"type": "string"}},
        "parameters": {"type": "object"},
    },
    "required": ["variant"],
    "additionalProperties": False,
}

WORKLOAD_SCHEMA = {
    "type": "object",
    "properties": {
        "units": {
            "type": "array",
            "items": {
                "type": "object",
                "properties": {
                    "id": {"type": "string", "minLength": 1},
                    "kernel": _KERNEL_SCHEMA,
                    "arguments": {"type": "array", "items": {"type": "string"}},
                    "slots_required": {"type": "integer", "minimum": 1},
                    "depends_on": {"type": "array", "items": {"type": "string"}},
                    "input_data": {"type": "array", "items": {"type": "string"}},
                    "output_data": {"type": ["string", "null"]},
                    "affinity": {"type": ["string", "null"]},
                },
                "required": ["id", "kernel"],
                "additionalProperties": False,
            },
        },
        "data": {
            "type": "array",
            "items": {
                "type": "object",
                "properties": {
                    "id": {"type": "string", "minLength": 1},
                    "source": {"type": "object"},
                    "target_affinity": {"type": ["string", "null"]},
                },
                "required": ["id", "source"],
                "additionalProperties": False,
            },
        },
    },
    "required": ["units"],
    "additionalProperties": False,
}


@dataclass
class WorkloadGraph:
    """Named unit descriptions plus the data-units they declare.

    Names in ``depends_on``, ``input_data``, ``output_data`` and ``affinity``
    refer to other entries of the same graph, or to ids already known to the
    manager the graph is submitted to. ``release_ms`` optionally delays when a
    unit becomes eligible, relative to submission.
    """

    units: Dict[str, ComputeUnitDescription] = field(default_factory=dict)
    data: Dict[str, DataUnitDescription] = field(default_factory=dict)
    release_ms: Dict[str, int] = field(default_factory=dict)

    def __len__(self):
        return len(self.units)

    def add(self, name: str, desc: ComputeUnitDescription, release_ms: int = 0) -> str:
        if name in self.units:
            raise InvalidDescription(f"duplicate unit name {name!r}")
        self.units[name] = desc
        if release_ms:
            self.release_ms[name] = int(release_ms)
        return name

    def outputs(self) -> Dict[str, str]:
        """Output data name -> producing unit name."""
        out = {}
        for name, desc in self.units.items():
            if desc.output_data is not None:
                if desc.output_data in out or desc.output_data in self.data:
                    raise InvalidDescription(f"data {desc.output_data!r} declared twice")
                out[desc.output_data] = name
        return out

    def edges(self) -> List[Tuple[str, str]]:
        """(predecessor, successor) pairs among graph units, control and data."""
        producers = self.outputs()
        edges = []
        for name, desc in self.units.items():
            for dep in sorted(desc.depends_on):
                if dep in self.units:
                    edges.append((dep, name))
            for du in desc.input_data:
                if du in producers:
                    edges.append((producers[du], name))
        return edges

    def check_acyclic(self):
        for name, desc in self.units.items():
            if name in desc.depends_on:
                raise CycleDetected(f"cycle: unit {name!r} depends on itself")
        self.topological_order()

    def topological_order(self) -> List[str]:
        indeg = {n: 0 for n in self.units}
        succ: Dict[str, List[str]] = {n: [] for n in self.units}
        for a, b in self.edges():
            succ[a].append(b)
            indeg[b] += 1
        ready = [n for n in self.units if indeg[n] == 0]
        order = []
        while ready:
            n = ready.pop(0)
            order.append(n)
            for m in succ[n]:
                indeg[m] -= 1
                if indeg[m] == 0:
                    ready.append(m)
        if len(order) != len(self.units):
            stuck = sorted(n for n in self.units if indeg[n] > 0)
            raise CycleDetected(f"cycle among units {stuck}")
        return order

    # -- JSON ---------------------------------------------------------------
    @classmethod
    def from_dict(cls, doc: Mapping) -> "WorkloadGraph":
        try:
            jsonschema.validate(doc, WORKLOAD_SCHEMA)
        except jsonschema.ValidationError as exc:
            raise InvalidDescription(f"workload: {exc.message}") from None
        graph = cls()
        for entry in doc.get("data", []):
            if entry["id"] in graph.data:
                raise InvalidDescription(f"duplicate data id {entry['id']!r}")
            graph.data[entry["id"]] = DataUnitDescription.from_dict(
                entry["source"], entry.get("target_affinity"))
        for entry in doc["units"]:
            graph.add(entry["id"], unit_from_dict(entry))
        return graph

    @classmethod
    def load(cls, path) -> "WorkloadGraph":
        with open(path, encoding="utf-8") as fh:
            try:
                doc = json.load(fh)
            except json.JSONDecodeError as exc:
                raise InvalidDescription(f"workload is not valid JSON: {exc}") from None
        return cls.from_dict(doc)

    def to_dict(self) -> dict:
        units = []
        for name, d in self.units.items():
            k = d.kernel
            kernel = {"variant": k.variant, "parameters": dict(k.parameters)}
            if k.variant == "BUILTIN":
                kernel["name"] = k.name
            else:
                kernel["argv"] = list(k.argv)
            units.append({
                "id": name, "kernel": kernel, "arguments": list(d.arguments),
                "slots_required": d.slots_required, "depends_on": sorted(d.depends_on),
                "input_data": list(d.input_data), "output_data": d.output_data,
                "affinity": d.affinity,
            })
        data = [{"id": n, "source": d.source_dict(), "target_affinity": d.target_affinity}
                for n, d in self.data.items()]
        return {"units": units, "data": data}


def unit_from_dict(entry: Mapping) -> ComputeUnitDescription:
    k = entry["kernel"]
    if k["variant"] == "BUILTIN":
        if "name" not in k or "argv" in k:
            raise InvalidDescription(f"unit {entry['id']}: BUILTIN kernel needs 'name' only")
        kernel = KernelSpec("BUILTIN", name=k["name"], parameters=k.get("parameters", {}))
    else:
        if "argv" not in k or "name" in k:
            raise InvalidDescription(f"unit {entry['id']}: EXTERNAL kernel needs 'argv' only")
        kernel = KernelSpec("EXTERNAL", argv=tuple(k["argv"]), parameters=k.get("parameters", {}))
    return ComputeUnitDescription(
        kernel=kernel,
        arguments=tuple(entry.get("arguments", ())),
        slots_required=entry.get("slots_required", 1),
        depends_on=frozenset(entry.get("depends_on", ())),
        input_data=tuple(entry.get("input_data", ())),
        output_data=entry.get("output_data"),
        affinity=entry.get("affinity"),
    )


def independent_tasks(n: int, kernel: KernelSpec, prefix: str = "task") -> WorkloadGraph:
    graph = WorkloadGraph()
    for i in range(n):
        graph.add(f"{prefix}-{i}", ComputeUnitDescription(kernel=kernel))
    return graph
