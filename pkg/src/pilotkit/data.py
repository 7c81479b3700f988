"""Pilot-Data: data-units with replicas on pilot-local stores.

A data-unit replica is a directory ``<work_dir>/<pilot-id>/store/<du-id>/``
holding the unit's files. Replicas are verified by a SHA-256 digest over the
sorted file names and contents.
"""
from __future__ import annotations

import base64
import hashlib
import os
import random
import shutil
import threading
from dataclasses import dataclass, field
from enum import Enum
from typing import Dict, List, Mapping, Optional, Tuple

from .core import EntityType, EventLog, IdGenerator, format_detail
from .errors import (DataUnitFailed, InvalidDescription, PilotNotActive, SourceMissing,
                     StoreFull, UnknownDataUnit)


class DataState(str, Enum):
    NEW = "NEW"
    PENDING = "PENDING"
    AVAILABLE = "AVAILABLE"
    FAILED = "FAILED"


SOURCE_KINDS = ("FILES", "INLINE", "GENERATED", "OUTPUT")


@dataclass(frozen=True)
class DataUnitDescription:
    kind: str
    paths: Tuple[str, ...] = ()
    payload: bytes = b""
    generator: Optional[str] = None
    size: int = 0
    seed: int = 0
    target_affinity: Optional[str] = None

    def __post_init__(self):
        if self.kind not in SOURCE_KINDS:
            raise InvalidDescription(f"unknown data source {self.kind!r}")
        if self.kind == "GENERATED":
            if self.generator not in GENERATORS:
                raise InvalidDescription(f"unknown generator {self.generator!r}")
            if int(self.size) < 0:
                raise InvalidDescription("GENERATED size must be >= 0")
        object.__setattr__(self, "paths", tuple(str(p) for p in self.paths))

    @classmethod
    def files(cls, paths, target_affinity=None):
        return cls("FILES", paths=tuple(paths), target_affinity=target_affinity)

    @classmethod
    def inline(cls, payload, target_affinity=None):
        if isinstance(payload, str):
            payload = payload.encode("utf-8")
        return cls("INLINE", payload=bytes(payload), target_affinity=target_affinity)

    @classmethod
    def generated(cls, generator, size, seed=0, target_affinity=None):
        return cls("GENERATED", generator=generator, size=int(size), seed=int(seed),
                   target_affinity=target_affinity)

    @classmethod
    def output(cls):
        return cls("OUTPUT")

    @classmethod
    def from_dict(cls, source: Mapping, target_affinity=None) -> "DataUnitDescription":
        kind = source.get("kind")
        allowed = {"FILES": {"kind", "paths"}, "INLINE": {"kind", "payload", "payload_b64"},
                   "GENERATED": {"kind", "generator", "size", "seed"}}
        if kind not in allowed:
            raise InvalidDescription(f"unknown data source kind {kind!r}")
        extra = set(source) - allowed[kind]
        if extra:
            raise InvalidDescription(f"unknown data source fields {sorted(extra)}")
        if kind == "FILES":
            return cls.files(source.get("paths", []), target_affinity)
        if kind == "INLINE":
            if "payload_b64" in source:
                return cls.inline(base64.b64decode(source["payload_b64"]), target_affinity)
            return cls.inline(source.get("payload", ""), target_affinity)
        return cls.generated(source.get("generator"), source.get("size", 0),
                             source.get("seed", 0), target_affinity)

    def source_dict(self) -> dict:
        if self.kind == "FILES":
            return {"kind": "FILES", "paths": list(self.paths)}
        if self.kind == "INLINE":
            try:
                return {"kind": "INLINE", "payload": self.payload.decode("utf-8")}
            except UnicodeDecodeError:
                return {"kind": "INLINE", "payload_b64": base64.b64encode(self.payload).decode()}
        if self.kind == "GENERATED":
            return {"kind": "GENERATED", "generator": self.generator, "size": self.size,
                    "seed": self.seed}
        raise InvalidDescription("OUTPUT data-units have no serializable source")


# ---------------------------------------------------------------------------
# deterministic generators

_LETTERS = "abcdefghijklmnopqrstuvwxyz"


def random_text(size: int, seed: int) -> bytes:
    """Zipf-like word soup, newline every 8-15 words, exactly ``size`` bytes."""
    rng = random.Random(seed)
    vocab = ["".join(rng.choice(_LETTERS) for _ in range(rng.randint(2, 9))) for _ in range(2000)]
    weights = [1.0 / (i + 1) for i in range(len(vocab))]
    out: List[str] = []
    total = 0
    while total < size:
        words = rng.choices(vocab, weights=weights, k=rng.randint(8, 15))
        line = " ".join(words) + "\n"
        out.append(line)
        total += len(line)
    return "".join(out).encode("ascii")[:size]


def random_bytes(size: int, seed: int) -> bytes:
    return random.Random(seed).randbytes(size)


def zeros(size: int, seed: int) -> bytes:
    return bytes(size)


GENERATORS = {"random_text": random_text, "random_bytes": random_bytes, "zeros": zeros}


def source_bytes(desc: DataUnitDescription) -> bytes:
    """The bytes a description materializes to (FILES are concatenated in order)."""
    if desc.kind == "INLINE":
        return desc.payload
    if desc.kind == "GENERATED":
        return GENERATORS[desc.generator](desc.size, desc.seed)
    if desc.kind == "FILES":
        chunks = []
        for p in desc.paths:
            if not os.path.isfile(p):
                raise SourceMissing(f"missing source file {p}")
            with open(p, "rb") as fh:
                chunks.append(fh.read())
        return b"".join(chunks)
    raise InvalidDescription("OUTPUT data-units have no source bytes")


def checksum_dir(path: str) -> str:
    h = hashlib.sha256()
    for name in sorted(os.listdir(path)):
        full = os.path.join(path, name)
        if os.path.isdir(full):
            continue
        h.update(name.encode("utf-8") + b"\0")
        with open(full, "rb") as fh:
            for block in iter(lambda: fh.read(1 << 20), b""):
                h.update(block)
        h.update(b"\0")
    return h.hexdigest()


def dir_size(path: str) -> int:
    return sum(os.path.getsize(os.path.join(path, n)) for n in os.listdir(path)
               if os.path.isfile(os.path.join(path, n)))


# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Replica:
    pilot_id: str
    path: str
    size: int


@dataclass(eq=False)
class DataUnit:
    id: str
    description: DataUnitDescription
    name: str = ""
    state: DataState = DataState.NEW
    replicas: Dict[str, Replica] = field(default_factory=dict)
    checksum: Optional[str] = None


@dataclass
class PilotStore:
    pilot_id: str
    root: str
    used_bytes: int = 0
    capacity_bytes: Optional[int] = None

    def reserve(self, n: int):
        if self.capacity_bytes is not None and self.used_bytes + n > self.capacity_bytes:
            raise StoreFull(f"store of {self.pilot_id}: {self.used_bytes}+{n} > {self.capacity_bytes}")
        self.used_bytes += n

    def path_for(self, du_id: str) -> str:
        return os.path.join(self.root, du_id)


class DataManager:
    """Owns every data-unit and pilot store of one manager."""

    def __init__(self, log: EventLog, ids: Optional[IdGenerator] = None):
        self.log = log
        self.ids = ids or IdGenerator()
        self.units: Dict[str, DataUnit] = {}
        self.stores: Dict[str, PilotStore] = {}
        self._lock = threading.RLock()
        self._du_locks: Dict[str, threading.Lock] = {}

    def _event(self, du: DataUnit, event: str, **detail):
        self.log.record(EntityType.DATA_UNIT, du.id, event, format_detail(**detail))

    def _set_state(self, du: DataUnit, state: DataState, **detail):
        du.state = state
        self._event(du, state.value, **detail)

    def get(self, du_id: str) -> DataUnit:
        try:
            return self.units[du_id]
        except KeyError:
            raise UnknownDataUnit(du_id) from None

    def _du_lock(self, du_id):
        with self._lock:
            return self._du_locks.setdefault(du_id, threading.Lock())

    # -- registration -------------------------------------------------------
    def register(self, desc: DataUnitDescription, name: str = "") -> str:
        if desc.kind == "FILES":
            missing = [p for p in desc.paths if not os.path.isfile(p)]
            if missing:
                raise SourceMissing(f"missing source files: {missing}")
        with self._lock:
            du = DataUnit(self.ids.next("du"), desc, name)
            self.units[du.id] = du
            self._event(du, "NEW", name=name or None, source=desc.kind)
            self._set_state(du, DataState.PENDING)
            target = self._placement(du)
            if target is not None:
                self.materialize(du.id, target, raise_full=True)
            return du.id

    def declare_output(self, name: str = "") -> str:
        return self.register(DataUnitDescription.output(), name)

    def _placement(self, du: DataUnit) -> Optional[str]:
        if du.description.kind == "OUTPUT" or du.state is not DataState.PENDING:
            return None
        target = du.description.target_affinity
        if target is not None:
            return target if target in self.stores else None
        return next(iter(self.stores), None)

    # -- stores -------------------------------------------------------------
    def add_store(self, pilot_id: str, root: str, capacity_bytes: Optional[int] = None):
        """Called when a pilot becomes ACTIVE; materializes waiting data-units."""
        with self._lock:
            self.stores[pilot_id] = PilotStore(pilot_id, root, 0, capacity_bytes)
            for du in list(self.units.values()):
                if self._placement(du) == pilot_id:
                    self.materialize(du.id, pilot_id)

    def drop_store(self, pilot_id: str):
        with self._lock:
            if self.stores.pop(pilot_id, None) is None:
                return
            for du in self.units.values():
                if pilot_id in du.replicas:
                    del du.replicas[pilot_id]
                    self._event(du, "DROPPED", pilot=pilot_id)
                    if du.state is DataState.AVAILABLE and not du.replicas:
                        self._set_state(du, DataState.FAILED, reason="all replicas lost")

    def materialize(self, du_id: str, pilot_id: str, raise_full: bool = False):
        du = self.get(du_id)
        store = self.stores[pilot_id]
        path = store.path_for(du.id)
        if os.path.isdir(path):
            shutil.rmtree(path)
        os.makedirs(path)
        desc = du.description
        if desc.kind == "FILES":
            for src in desc.paths:
                shutil.copyfile(src, os.path.join(path, os.path.basename(src)))
        elif desc.kind == "INLINE":
            with open(os.path.join(path, "data"), "wb") as fh:
                fh.write(desc.payload)
        else:
            with open(os.path.join(path, "data"), "wb") as fh:
                fh.write(GENERATORS[desc.generator](desc.size, desc.seed))
        self._publish(du, store, path, raise_full)

    def _publish(self, du, store, path, raise_full):
        size = dir_size(path)
        try:
            store.reserve(size)
        except StoreFull:
            shutil.rmtree(path, ignore_errors=True)
            self._set_state(du, DataState.FAILED, pilot=store.pilot_id, reason="store full")
            if raise_full:
                raise
            return
        du.checksum = checksum_dir(path)
        du.replicas[store.pilot_id] = Replica(store.pilot_id, path, size)
        self._set_state(du, DataState.AVAILABLE, pilot=store.pilot_id, size=size,
                        checksum=du.checksum[:16])

    # -- unit outputs -------------------------------------------------------
    def output_dir(self, du_id: str, pilot_id: str) -> str:
        path = self.stores[pilot_id].path_for(du_id)
        if os.path.isdir(path):
            shutil.rmtree(path)
        os.makedirs(path)
        return path

    def complete_output(self, du_id: str, pilot_id: str):
        with self._lock:
            du = self.get(du_id)
            store = self.stores.get(pilot_id)
            if store is None:
                self.fail(du_id, "producer pilot gone")
                return
            self._publish(du, store, store.path_for(du_id), False)

    def fail(self, du_id: str, reason: str):
        with self._lock:
            du = self.get(du_id)
            if du.state is DataState.PENDING:
                self._set_state(du, DataState.FAILED, reason=reason)

    # -- queries ------------------------------------------------------------
    def state(self, du_id: str) -> DataState:
        return self.get(du_id).state

    def has_replica(self, du_id: str, pilot_id: str) -> bool:
        return pilot_id in self.get(du_id).replicas

    def replica_path(self, du_id: str, pilot_id: str) -> str:
        return self.get(du_id).replicas[pilot_id].path

    def holders(self, du_id: str) -> List[str]:
        du = self.units.get(du_id)
        return list(du.replicas) if du else []

    # -- staging ------------------------------------------------------------
    def begin_stage(self, du_id: str, pilot_id: str, unit_id: Optional[str] = None) -> int:
        """Copy a replica to ``pilot_id``; the replica counts once ``end_stage`` runs."""
        with self._lock:
            du = self.get(du_id)
            if du.state is not DataState.AVAILABLE:
                raise DataUnitFailed(f"{du_id} is {du.state.value}")
            if pilot_id not in self.stores:
                raise PilotNotActive(f"pilot {pilot_id} has no active store")
            src_pilot = sorted(du.replicas)[0]
            src = du.replicas[src_pilot]
            store = self.stores[pilot_id]
            store.reserve(src.size)
            self._event(du, "STAGE_START", pilot=pilot_id, source=src_pilot, unit=unit_id,
                        size=src.size)
        dst = store.path_for(du_id)
        if os.path.isdir(dst):
            shutil.rmtree(dst)
        shutil.copytree(src.path, dst)
        return src.size

    def end_stage(self, du_id: str, pilot_id: str, unit_id: Optional[str] = None) -> Replica:
        du = self.get(du_id)
        store = self.stores.get(pilot_id)
        if store is None:
            raise PilotNotActive(f"pilot {pilot_id} has no active store")
        dst = store.path_for(du_id)
        if checksum_dir(dst) != du.checksum:
            raise DataUnitFailed(f"replica of {du_id} on {pilot_id} is corrupt")
        with self._lock:
            rep = Replica(pilot_id, dst, dir_size(dst))
            du.replicas[pilot_id] = rep
            self._event(du, "STAGE_END", pilot=pilot_id, unit=unit_id)
            return rep

    def stage(self, du_id: str, pilot_id: str, unit_id: Optional[str] = None) -> Replica:
        """Synchronous, idempotent staging; serialized per data-unit."""
        with self._du_lock(du_id):
            du = self.get(du_id)
            if pilot_id in du.replicas:
                return du.replicas[pilot_id]
            self.begin_stage(du_id, pilot_id, unit_id)
            return self.end_stage(du_id, pilot_id, unit_id)

    def resolve_input_paths(self, input_data, pilot_id: str, unit_id: Optional[str] = None) -> Dict[str, str]:
        paths = {}
        for du_id in input_data:
            du = self.get(du_id)
            if du.state is DataState.FAILED:
                raise DataUnitFailed(f"input {du_id} failed")
            paths[du_id] = self.stage(du_id, pilot_id, unit_id).path
        return paths
